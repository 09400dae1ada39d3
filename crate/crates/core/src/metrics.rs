//! Overlap and ranking metrics, plus the report tables built from them.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::raster::Mask2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceResult {
    pub dice: f64,
    pub intersection: usize,
    pub size_a: usize,
    pub size_b: usize,
    /// Both masks were empty; `dice` is reported as 1.
    pub both_empty: bool,
}

/// Dice overlap `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &Mask2D, b: &Mask2D) -> Result<DiceResult> {
    if a.width != b.width || a.height != b.height {
        return Err(DrrError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut inter = 0usize;
    let mut size_a = 0usize;
    let mut size_b = 0usize;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x == 1, y == 1);
        size_a += usize::from(x);
        size_b += usize::from(y);
        inter += usize::from(x && y);
    }
    let both_empty = size_a + size_b == 0;
    let dice = if both_empty {
        1.0
    } else {
        2.0 * inter as f64 / (size_a + size_b) as f64
    };
    Ok(DiceResult {
        dice,
        intersection: inter,
        size_a,
        size_b,
        both_empty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// (false positive rate, true positive rate), from (0,0) to (1,1).
    pub roc_points: Vec<(f64, f64)>,
}

impl AucResult {
    /// Trapezoidal area under `roc_points`.
    pub fn trapezoid_area(&self) -> f64 {
        self.roc_points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
            .sum()
    }
}

/// ROC-AUC via the Mann-Whitney rank statistic with ties credited one half.
/// `labels[i]` is true for positives.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<AucResult> {
    if scores.len() != labels.len() {
        return Err(DrrError::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(DrrError::NonFiniteScore(s));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DrrError::SingleClass { n_pos, n_neg });
    }

    // ascending order, average ranks over tie groups (ranks are 1-based)
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // mean of ranks start+1 ..= end
        let avg = 0.5 * ((start + 1) + end) as f64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        pos_rank_sum += avg * pos_in_group as f64;
        start = end;
    }
    let u = pos_rank_sum - 0.5 * (n_pos * (n_pos + 1)) as f64;
    let auc = u / (n_pos as f64 * n_neg as f64);

    // descending sweep, one point per distinct threshold
    let mut roc_points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let s = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == s {
            if labels[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        roc_points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(AucResult {
        auc,
        n_pos,
        n_neg,
        roc_points,
    })
}

/// Annotation variants attached to a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnnotationKind {
    /// Drawn directly on the X-ray.
    XMA,
    /// Projected from CT onto the synthetic X-ray.
    SMA,
    /// Transferred from the synthetic X-ray onto the X-ray by registration.
    TMA,
    /// Manually refined from TMA.
    PMA,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 4] = [AnnotationKind::XMA, AnnotationKind::SMA, AnnotationKind::TMA, AnnotationKind::PMA];
}

/// Masks available for one case, keyed by kind.
#[derive(Debug, Clone, Default)]
pub struct CaseAnnotations {
    pub case_id: String,
    pub masks: BTreeMap<AnnotationKind, Mask2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub pair: String,
    /// Mean over cases of the per-case Dice; absent when no case has both.
    pub mean_dice: Option<f64>,
    pub n: usize,
    /// Cases lacking one of the two variants.
    pub excluded: usize,
    /// Cases skipped because the two masks have different dimensions.
    pub mismatched: usize,
    /// Included cases where both masks were empty (scored 1).
    pub both_empty: usize,
}

pub const AGREEMENT_PAIRS: [(AnnotationKind, AnnotationKind); 3] = [
    (AnnotationKind::XMA, AnnotationKind::TMA),
    (AnnotationKind::PMA, AnnotationKind::TMA),
    (AnnotationKind::XMA, AnnotationKind::PMA),
];

/// Mean per-case Dice for XMA/TMA, PMA/TMA and XMA/PMA.
pub fn evaluate_annotation_agreement(cases: &[CaseAnnotations]) -> Vec<AgreementRow> {
    AGREEMENT_PAIRS
        .iter()
        .map(|&(ka, kb)| {
            let mut sum = 0.0;
            let mut row = AgreementRow {
                pair: format!("{ka:?} vs {kb:?}"),
                mean_dice: None,
                n: 0,
                excluded: 0,
                mismatched: 0,
                both_empty: 0,
            };
            for case in cases {
                match (case.masks.get(&ka), case.masks.get(&kb)) {
                    (Some(a), Some(b)) => match dice(a, b) {
                        Ok(d) => {
                            sum += d.dice;
                            row.n += 1;
                            row.both_empty += usize::from(d.both_empty);
                        }
                        Err(_) => row.mismatched += 1,
                    },
                    _ => row.excluded += 1,
                }
            }
            if row.n > 0 {
                row.mean_dice = Some(sum / row.n as f64);
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Covid19,
    Pneumonia,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub comparison: String,
    pub auc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub error: Option<String>,
}

/// AUC of a COVID-likelihood score for COVID vs pneumonia+negative,
/// COVID vs pneumonia and COVID vs negative.
pub fn evaluate_classification(cases: &[(Label, f64)]) -> Vec<ClassificationRow> {
    let pools: [(&str, &[Label]); 3] = [
        ("COVID-19 vs pneumonia+negative", &[Label::Pneumonia, Label::Negative]),
        ("COVID-19 vs pneumonia", &[Label::Pneumonia]),
        ("COVID-19 vs negative", &[Label::Negative]),
    ];
    pools
        .iter()
        .map(|(name, negatives)| {
            let (scores, labels): (Vec<f64>, Vec<bool>) = cases
                .iter()
                .filter(|(l, _)| *l == Label::Covid19 || negatives.contains(l))
                .map(|&(l, s)| (s, l == Label::Covid19))
                .unzip();
            let n_pos = labels.iter().filter(|&&l| l).count();
            let n_neg = labels.len() - n_pos;
            match roc_auc(&scores, &labels) {
                Ok(r) => ClassificationRow {
                    comparison: name.to_string(),
                    auc: Some(r.auc),
                    n_pos,
                    n_neg,
                    error: None,
                },
                Err(e) => ClassificationRow {
                    comparison: name.to_string(),
                    auc: None,
                    n_pos,
                    n_neg,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Brute-force pairwise AUC; used as a cross-check.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            wins += match si.partial_cmp(&sj) {
                Some(Ordering::Greater) => 1.0,
                Some(Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}
