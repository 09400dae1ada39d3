//! Lung-ROI mutual-information registration of synthetic to real X-rays.
//!
//! The fixed image is the X-ray, the moving image the synthetic X-ray, so a
//! recovered transform carries SXR pixels (and CT-derived masks projected
//! alongside them) into X-ray coordinates.

pub mod affine;
pub mod mi;
pub mod simplex;
pub mod warp;

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::metrics::dice;
use crate::raster::{Image2D, Mask2D};

pub use affine::{AffineTransform2D, TransformParams};
pub use mi::{mutual_information, JointHistogram, MutualInformation};
pub use warp::{apply_roi, resample_image_to_pitch, resample_mask_to_pitch, warp_image, warp_mask};

use simplex::{minimize, SimplexSettings};
use warp::center;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub bins: usize,
    /// Downsampling factors, coarsest first.
    pub levels: Vec<usize>,
    pub max_iterations_per_level: usize,
    /// Simplex diameter tolerance in scaled parameter units.
    pub tolerance: f64,
    pub initial: AffineTransform2D,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            bins: mi::DEFAULT_BINS,
            levels: vec![4, 2, 1],
            max_iterations_per_level: 400,
            tolerance: 1e-3,
            initial: AffineTransform2D::identity(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 3 {
            return Err(DrrError::Config(format!("registration needs at least 3 bins, got {}", self.bins)));
        }
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(DrrError::Config(format!("invalid pyramid levels {:?}", self.levels)));
        }
        if !(self.tolerance > 0.0) {
            return Err(DrrError::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        self.initial.validate()
    }

    /// Upper bound on [`RegistrationResult::iterations`].
    pub fn max_total_iterations(&self) -> usize {
        self.max_iterations_per_level * self.levels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    #[serde(flatten)]
    pub transform: AffineTransform2D,
    pub mi_final: f64,
    /// Simplex iterations summed over all pyramid levels.
    pub iterations: usize,
    /// The finest level stopped on the diameter tolerance.
    pub converged: bool,
}

/// One pyramid level of an ROI image: values and in-ROI fraction.
#[derive(Debug, Clone)]
struct RoiRaster {
    width: usize,
    height: usize,
    weighted: Vec<f64>,
    inside: Vec<f64>,
}

impl RoiRaster {
    fn from_image(img: &Image2D) -> Self {
        let inside: Vec<f64> = img.values.iter().map(|&v| f64::from(u8::from(v != 0.0))).collect();
        RoiRaster {
            width: img.width,
            height: img.height,
            weighted: img.values.clone(),
            inside,
        }
    }

    fn halve(&self) -> Self {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut weighted = vec![0.0; w * h];
        let mut inside = vec![0.0; w * h];
        for row in 0..h {
            for col in 0..w {
                let mut sw = 0.0;
                let mut si = 0.0;
                let mut n = 0.0;
                for dr in 0..2 {
                    for dc in 0..2 {
                        let (c, r) = (2 * col + dc, 2 * row + dr);
                        if c < self.width && r < self.height {
                            let i = c + self.width * r;
                            sw += self.weighted[i];
                            si += self.inside[i];
                            n += 1.0;
                        }
                    }
                }
                weighted[col + w * row] = sw / n;
                inside[col + w * row] = si / n;
            }
        }
        RoiRaster {
            width: w,
            height: h,
            weighted,
            inside,
        }
    }

    /// Value of an inside pixel (weighted mean of its ROI content).
    fn value(&self, i: usize) -> Option<f64> {
        (self.inside[i] >= 0.5).then(|| self.weighted[i] / self.inside[i])
    }

    fn value_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.inside.len() {
            if let Some(v) = self.value(i) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Bin 0 is outside the ROI; ROI values fill bins 1..bins.
#[inline]
fn roi_bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi > lo {
        1 + mi::bin_of(v, lo, hi, bins - 1)
    } else {
        1
    }
}

struct LevelMetric {
    factor: f64,
    bins: usize,
    fixed_w: usize,
    fixed_h: usize,
    fixed_bins: Vec<u16>,
    moving: RoiRaster,
    moving_lo: f64,
    moving_hi: f64,
    /// Half the smaller fixed dimension: radians, log-scales and shear are
    /// scaled by this so that unit steps move edge pixels by about a pixel.
    radius: f64,
}

impl LevelMetric {
    fn new(factor: usize, fixed: &RoiRaster, moving: RoiRaster, bins: usize) -> Result<Self> {
        let (flo, fhi) = fixed
            .value_range()
            .ok_or_else(|| DrrError::EmptyRoi(format!("fixed image at level {factor}")))?;
        let (mlo, mhi) = moving
            .value_range()
            .ok_or_else(|| DrrError::EmptyRoi(format!("moving image at level {factor}")))?;
        let fixed_bins = (0..fixed.inside.len())
            .map(|i| fixed.value(i).map_or(0, |v| roi_bin(v, flo, fhi, bins)) as u16)
            .collect();
        Ok(LevelMetric {
            factor: factor as f64,
            bins,
            fixed_w: fixed.width,
            fixed_h: fixed.height,
            fixed_bins,
            moving,
            moving_lo: mlo,
            moving_hi: mhi,
            radius: 0.5 * fixed.width.min(fixed.height) as f64,
        })
    }

    fn scales(&self) -> [f64; 6] {
        let r = 1.0 / self.radius;
        [self.factor, self.factor, r, r, r, r]
    }

    fn params_of(&self, z: &[f64]) -> TransformParams {
        let s = self.scales();
        let p: Vec<f64> = z.iter().zip(s).map(|(z, s)| z * s).collect();
        TransformParams::from_array(&p)
    }

    fn scaled(&self, p: &TransformParams) -> Vec<f64> {
        p.to_array().iter().zip(self.scales()).map(|(p, s)| p / s).collect()
    }

    /// MI at this level; `None` when the transform is infeasible.
    fn mi(&self, t: &AffineTransform2D, hist: &mut JointHistogram) -> Option<f64> {
        if !t.is_feasible() {
            return None;
        }
        let inv = t.at_scale(self.factor).inverse().ok()?;
        let (fcx, fcy) = center(self.fixed_w, self.fixed_h);
        let (mcx, mcy) = center(self.moving.width, self.moving.height);
        let m = &self.moving;
        hist.clear();
        for row in 0..self.fixed_h {
            for col in 0..self.fixed_w {
                let fb = self.fixed_bins[col + self.fixed_w * row] as usize;
                let (x, y) = inv.apply(col as f64 - fcx, row as f64 - fcy);
                let inside = warp::bilinear(&m.inside, m.width, m.height, x + mcx, y + mcy);
                let mb = if inside >= 0.5 {
                    let v = warp::bilinear(&m.weighted, m.width, m.height, x + mcx, y + mcy) / inside;
                    roi_bin(v, self.moving_lo, self.moving_hi, self.bins)
                } else {
                    0
                };
                if fb == 0 && mb == 0 {
                    continue;
                }
                hist.add(fb, mb);
            }
        }
        Some(hist.mutual_information())
    }
}

fn pyramid(img: &Image2D, factors: &[usize]) -> Vec<RoiRaster> {
    let base = RoiRaster::from_image(img);
    factors
        .iter()
        .map(|&f| {
            let mut r = base.clone();
            let mut k = 1;
            while k < f {
                r = r.halve();
                k *= 2;
            }
            r
        })
        .collect()
}

/// Centroid of an image's nonzero pixels relative to the image center.
fn roi_centroid(img: &Image2D) -> Option<(f64, f64)> {
    let (cx, cy) = center(img.width, img.height);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for row in 0..img.height {
        for col in 0..img.width {
            if img.values[col + img.width * row] != 0.0 {
                sx += col as f64 - cx;
                sy += row as f64 - cy;
                n += 1.0;
            }
        }
    }
    (n > 0.0).then(|| (sx / n, sy / n))
}

/// `initial` followed by the translation carrying the moving ROI centroid
/// onto the fixed one.
fn centroid_start(moving: &Image2D, fixed: &Image2D, initial: &AffineTransform2D) -> Option<AffineTransform2D> {
    let (mx, my) = roi_centroid(moving)?;
    let (fx, fy) = roi_centroid(fixed)?;
    let (px, py) = initial.apply(mx, my);
    Some(AffineTransform2D::translation(fx - px, fy - py).compose(initial))
}

fn check_pitch(moving: &Image2D, fixed: &Image2D) -> Result<()> {
    let rel = (moving.pitch - fixed.pitch).abs() / fixed.pitch;
    if rel > 1e-6 {
        return Err(DrrError::DimensionMismatch(format!(
            "pixel pitch {} (moving) vs {} (fixed)",
            moving.pitch, fixed.pitch
        )));
    }
    Ok(())
}

/// Mutual information of `fixed` and `moving` warped by `t`, using the ROI
/// histogram the optimiser maximises (background pixels excluded).
pub fn roi_mutual_information(moving: &Image2D, fixed: &Image2D, t: &AffineTransform2D, bins: usize) -> Result<f64> {
    check_pitch(moving, fixed)?;
    t.validate()?;
    let metric = LevelMetric::new(1, &RoiRaster::from_image(fixed), RoiRaster::from_image(moving), bins)?;
    let mut hist = JointHistogram::new(bins);
    Ok(metric.mi(t, &mut hist).unwrap_or(0.0))
}

/// Affine registration of ROI-masked `moving` onto ROI-masked `fixed`.
///
/// Nonzero pixels form each image's ROI. Power-of-two factors in
/// `cfg.levels` are supported; each level is warm-started from the
/// previous one. Within a level the simplex is restarted around its best
/// vertex until a restart no longer improves the metric or the level's
/// iteration budget runs out. The coarsest level starts from the better of
/// `cfg.initial` and `cfg.initial` shifted to align the ROI centroids.
pub fn register(moving: &Image2D, fixed: &Image2D, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    check_pitch(moving, fixed)?;
    let fixed_levels = pyramid(fixed, &cfg.levels);
    let moving_levels = pyramid(moving, &cfg.levels);
    let mut hist = JointHistogram::new(cfg.bins);

    let mut starts = vec![cfg.initial];
    starts.extend(centroid_start(moving, fixed, &cfg.initial).filter(AffineTransform2D::is_feasible));
    let mut current = cfg.initial.params();
    let mut iterations = 0;
    let mut converged = false;
    for (k, ((&factor, f), m)) in cfg.levels.iter().zip(&fixed_levels).zip(moving_levels).enumerate() {
        let metric = LevelMetric::new(factor, f, m, cfg.bins)?;
        let mut cost = |z: &[f64]| -> f64 {
            let t = AffineTransform2D::from_params(&metric.params_of(z));
            match metric.mi(&t, &mut hist) {
                Some(v) => -v,
                None => f64::INFINITY,
            }
        };
        // coarse levels search widely, finer ones refine
        let mut step = 2.0 / f64::from(1u32 << k.min(2));
        let mut budget = cfg.max_iterations_per_level;
        let mut z = metric.scaled(&current);
        let mut best = cost(&z);
        if k == 0 {
            for s in &starts[1..] {
                let zs = metric.scaled(&s.params());
                let v = cost(&zs);
                if v < best {
                    z = zs;
                    best = v;
                }
            }
        }
        loop {
            let out = minimize(
                &mut cost,
                &z,
                &[step; 6],
                SimplexSettings {
                    max_iterations: budget,
                    tolerance: cfg.tolerance,
                },
            );
            budget -= out.iterations;
            iterations += out.iterations;
            converged = out.converged;
            let improved = out.value < best - 1e-9;
            if out.value <= best {
                z = out.x;
                best = out.value;
            }
            if !improved || !out.converged || budget == 0 {
                break;
            }
            step = (step * 0.5).max(cfg.tolerance * 10.0);
        }
        current = metric.params_of(&z);
        log::debug!("level {factor}: mi {:.5} after {iterations} iterations", -best);
    }

    let transform = AffineTransform2D::from_params(&current);
    let mi_final = roi_mutual_information(moving, fixed, &transform, cfg.bins)?;
    Ok(RegistrationResult {
        transform,
        mi_final,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    #[default]
    MaxMi,
    MaxLungOverlap,
}

impl SelectionCriterion {
    pub fn name(self) -> &'static str {
        match self {
            SelectionCriterion::MaxMi => "max_mi",
            SelectionCriterion::MaxLungOverlap => "max_lung_overlap",
        }
    }
}

impl std::str::FromStr for SelectionCriterion {
    type Err = DrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_mi" => Ok(SelectionCriterion::MaxMi),
            "max_lung_overlap" => Ok(SelectionCriterion::MaxLungOverlap),
            other => Err(DrrError::Config(format!("unknown selection criterion `{other}`"))),
        }
    }
}

/// A registered SXR candidate: its projected lung mask (at the fixed
/// image's pitch) and registration outcome.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub lung: &'a Mask2D,
    pub result: &'a RegistrationResult,
}

/// Per-candidate score under `criterion`.
pub fn candidate_scores(candidates: &[Candidate], xr_lung: &Mask2D, criterion: SelectionCriterion) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|c| match criterion {
            SelectionCriterion::MaxMi => Ok(c.result.mi_final),
            SelectionCriterion::MaxLungOverlap => {
                let warped = warp_mask(c.lung, &c.result.transform, xr_lung.width, xr_lung.height)?;
                Ok(dice(&warped, xr_lung)?.dice)
            }
        })
        .collect()
}

/// Index of the best candidate; ties go to the lowest index.
pub fn select_best_candidate(
    candidates: &[Candidate],
    xr_lung: &Mask2D,
    criterion: SelectionCriterion,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(DrrError::EmptyCandidateList);
    }
    let scores = candidate_scores(candidates, xr_lung, criterion)?;
    Ok(argmax(&scores))
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
