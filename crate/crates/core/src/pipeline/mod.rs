//! End-to-end orchestration: manifest → pairing → SXR sweep → transfer →
//! report.
//!
//! Every stage writes under `out/<case_id>/` and is keyed by a content hash
//! of its inputs and settings, so reruns with `resume` skip finished work.
//! The report lists cases sorted by id and carries no timings, so identical
//! inputs give byte-identical reports regardless of thread count.

pub mod config;
pub mod hash;
pub mod manifest;
pub mod pairing;
pub mod stages;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::io::load_mask;
use crate::metrics::{
    evaluate_annotation_agreement, evaluate_classification, AgreementRow, AnnotationKind, CaseAnnotations,
    ClassificationRow, Label,
};
use crate::prep::TruncationReport;
use crate::registration::{AffineTransform2D, SelectionCriterion};

pub use config::{DetectorSpec, SweepConfig};
pub use manifest::{load_manifest, parse_manifest, CaseRecord, Manifest, ManifestError};
pub use pairing::{pair_cases, Pairing, PairingSummary};
pub use stages::{
    export_for_editing, import_pma, run_sxr_stage, run_transfer_stage, EditingBundle, GeometryFailure, SelectionRecord,
    SxrBundle, SxrStageOutput, TransferOutput,
};

pub const REPORT_FILE: &str = "report.json";
pub const AGREEMENT_FILE: &str = "agreement.csv";
pub const CLASSIFICATION_FILE: &str = "classification.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageStatus<T> {
    Skipped { reason: String },
    Done(T),
    Failed { error: String },
}

impl<T> StageStatus<T> {
    pub fn is_failed(&self) -> bool {
        matches!(self, StageStatus::Failed { .. })
    }

    pub fn done(&self) -> Option<&T> {
        match self {
            StageStatus::Done(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SxrSummary {
    /// Bundle directory relative to the run directory.
    pub dir: String,
    pub tags: Vec<String>,
    pub failures: Vec<GeometryFailure>,
    pub truncation: Option<TruncationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub ct_case: String,
    pub chosen_tag: String,
    pub best_by_mi: String,
    pub best_by_lung_overlap: String,
    pub mi_final: f64,
    pub lung_dice: f64,
    pub transform: AffineTransform2D,
    pub tma: String,
    pub selection: String,
    pub quality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub label: Label,
    pub pairing: Pairing,
    pub sxr: StageStatus<SxrSummary>,
    pub transfer: StageStatus<TransferSummary>,
    /// Annotation kinds available to the agreement table.
    pub annotations: Vec<AnnotationKind>,
    pub errors: Vec<String>,
}

impl CaseReport {
    pub fn failed(&self) -> bool {
        self.sxr.is_failed() || self.transfer.is_failed() || !self.errors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub criterion: SelectionCriterion,
    pub pairing_window_hours: f64,
    pub pairing: PairingSummary,
    pub manifest_errors: Vec<ManifestError>,
    pub failed_cases: usize,
    pub agreement: Vec<AgreementRow>,
    pub classification: Vec<ClassificationRow>,
    pub cases: Vec<CaseReport>,
}

/// Result of [`run_full`]; the work counters are not part of the report.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub report_path: PathBuf,
    pub stages_recomputed: usize,
    pub stages_reused: usize,
}

impl RunOutcome {
    /// 0 when every case (and manifest line) succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.report.failed_cases > 0)
    }
}

fn relative(out: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(out).unwrap_or(p);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(DrrError::Csv)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DrrError::io(path, e))
}

#[derive(Serialize)]
struct AgreementCsvRow<'a> {
    pair: &'a str,
    mean_dice: Option<f64>,
    n: usize,
    excluded: usize,
    mismatched: usize,
    both_empty: usize,
}

#[derive(Serialize)]
struct ClassificationCsvRow<'a> {
    comparison: &'a str,
    auc: Option<f64>,
    n_pos: usize,
    n_neg: usize,
    error: Option<&'a str>,
}

pub fn write_report(out: &Path, report: &RunReport) -> Result<PathBuf> {
    let path = out.join(REPORT_FILE);
    stages::write_json(&path, report)?;
    let agreement: Vec<_> = report
        .agreement
        .iter()
        .map(|r| AgreementCsvRow {
            pair: &r.pair,
            mean_dice: r.mean_dice,
            n: r.n,
            excluded: r.excluded,
            mismatched: r.mismatched,
            both_empty: r.both_empty,
        })
        .collect();
    write_csv(&out.join(AGREEMENT_FILE), &agreement)?;
    let classification: Vec<_> = report
        .classification
        .iter()
        .map(|r| ClassificationCsvRow {
            comparison: &r.comparison,
            auc: r.auc,
            n_pos: r.n_pos,
            n_neg: r.n_neg,
            error: r.error.as_deref(),
        })
        .collect();
    write_csv(&out.join(CLASSIFICATION_FILE), &classification)?;
    Ok(path)
}

fn collect_annotations(rec: &CaseRecord, tma: Option<&Path>, errors: &mut Vec<String>) -> CaseAnnotations {
    let mut masks = BTreeMap::new();
    for (&kind, path) in &rec.annotations {
        if kind == AnnotationKind::TMA && tma.is_some() {
            continue;
        }
        match load_mask(path) {
            Ok(m) => {
                masks.insert(kind, m);
            }
            Err(e) => errors.push(format!("annotation {kind:?}: {e}")),
        }
    }
    if let Some(p) = tma {
        match load_mask(p) {
            Ok(m) => {
                masks.insert(AnnotationKind::TMA, m);
            }
            Err(e) => errors.push(format!("annotation TMA: {e}")),
        }
    }
    CaseAnnotations {
        case_id: rec.case_id.clone(),
        masks,
    }
}

/// Run every stage the inputs allow and write `report.json`,
/// `agreement.csv` and `classification.csv` to `out`.
///
/// SXR stages run for every record with a CT. Transfer runs for every
/// record whose X-ray is paired within the window and has a lung mask,
/// using the SXR bundles of the CT it was paired with. Failures are
/// isolated per case.
pub fn run_full(
    manifest: &Manifest,
    sweep: &SweepConfig,
    criterion: SelectionCriterion,
    out: &Path,
    resume: bool,
) -> Result<RunOutcome> {
    sweep.validate()?;
    std::fs::create_dir_all(out).map_err(|e| DrrError::io(out, e))?;
    let records = &manifest.records;
    let pairings = pair_cases(records, sweep.pairing_window_hours);

    let sxr: Vec<Option<Result<SxrStageOutput>>> = records
        .par_iter()
        .map(|r| r.ct_path.as_ref().map(|_| run_sxr_stage(r, sweep, out, resume)))
        .collect();
    let by_case: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.case_id.as_str(), i)).collect();

    let mut recomputed = 0;
    let mut reused = 0;
    for s in sxr.iter().flatten().flatten() {
        recomputed += s.recomputed;
        reused += s.reused;
    }

    let transfers: Vec<Option<Result<TransferOutput>>> = records
        .par_iter()
        .zip(&pairings)
        .map(|(r, p)| {
            let ct_case = p.ct_case()?;
            r.xr_lung_mask.as_ref()?;
            let bundles = match &sxr[by_case[ct_case]] {
                Some(Ok(s)) => &s.bundles,
                Some(Err(e)) => return Some(Err(DrrError::NoCandidateSucceeded(format!("SXR stage of {ct_case} failed: {e}")))),
                None => return Some(Err(DrrError::NoCandidateSucceeded(format!("case {ct_case} has no CT")))),
            };
            Some(run_transfer_stage(r, bundles, sweep, criterion, out, resume))
        })
        .collect();

    let mut cases = Vec::with_capacity(records.len());
    let mut annotations = Vec::new();
    let mut scores = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let sxr_status = match &sxr[i] {
            None => StageStatus::Skipped {
                reason: "no CT".into(),
            },
            Some(Err(e)) => StageStatus::Failed { error: e.to_string() },
            Some(Ok(s)) => StageStatus::Done(SxrSummary {
                dir: relative(out, &stages::sxr_dir(out, &rec.case_id)),
                tags: s.bundles.iter().map(|b| b.tag.clone()).collect(),
                failures: s.failures.clone(),
                truncation: s.truncation,
            }),
        };
        let mut tma_path = None;
        let transfer_status = match &transfers[i] {
            None => StageStatus::Skipped {
                reason: match &pairings[i] {
                    Pairing::Paired { .. } => "no X-ray lung mask".to_string(),
                    other => other.status_name().to_string(),
                },
            },
            Some(Err(e)) => StageStatus::Failed { error: e.to_string() },
            Some(Ok(t)) => {
                recomputed += usize::from(t.recomputed);
                reused += usize::from(!t.recomputed);
                tma_path = Some(t.tma_path.clone());
                let s = &t.selection;
                StageStatus::Done(TransferSummary {
                    ct_case: pairings[i].ct_case().unwrap_or_default().to_string(),
                    chosen_tag: s.chosen_tag.clone(),
                    best_by_mi: s.best_by_mi.clone(),
                    best_by_lung_overlap: s.best_by_lung_overlap.clone(),
                    mi_final: s.mi_final,
                    lung_dice: s.lung_dice,
                    transform: s.transform,
                    tma: relative(out, &t.tma_path),
                    selection: relative(out, &stages::transfer_dir(out, &rec.case_id).join(stages::SELECTION_FILE)),
                    quality: s.quality.clone(),
                })
            }
        };
        let mut errors = Vec::new();
        let ann = collect_annotations(rec, tma_path.as_deref(), &mut errors);
        if let Some(s) = rec.score {
            scores.push((rec.label, s));
        }
        cases.push(CaseReport {
            case_id: rec.case_id.clone(),
            label: rec.label,
            pairing: pairings[i].clone(),
            sxr: sxr_status,
            transfer: transfer_status,
            annotations: ann.masks.keys().copied().collect(),
            errors,
        });
        annotations.push(ann);
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    annotations.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    scores.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let failed_cases = cases.iter().filter(|c| c.failed()).count() + manifest.errors.len();
    let report = RunReport {
        criterion,
        pairing_window_hours: sweep.pairing_window_hours,
        pairing: PairingSummary::from_pairings(&pairings),
        manifest_errors: manifest.errors.clone(),
        failed_cases,
        agreement: evaluate_annotation_agreement(&annotations),
        classification: evaluate_classification(&scores),
        cases,
    };
    let report_path = write_report(out, &report)?;
    Ok(RunOutcome {
        report,
        report_path,
        stages_recomputed: recomputed,
        stages_reused: reused,
    })
}
