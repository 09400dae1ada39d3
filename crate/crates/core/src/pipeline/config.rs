use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::geometry::{ProjectionGeometry, View, DEFAULT_ODD_MM, DEFAULT_SOD_MM};
use crate::prep::{AttenuationContext, DEFAULT_MU_WATER, DEFAULT_TARGET_SPACING};
use crate::registration::RegistrationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub width: usize,
    pub height: usize,
    pub pitch_mm: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            width: 512,
            height: 512,
            pitch_mm: 0.8,
        }
    }
}

/// Candidate geometry grid and per-run processing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub theta_h_deg: Vec<f64>,
    pub theta_v_deg: Vec<f64>,
    pub sod_mm: Vec<f64>,
    pub odd_mm: Vec<f64>,
    pub detector: DetectorSpec,
    pub view: View,
    pub pairing_window_hours: f64,
    pub target_spacing_mm: f64,
    /// Upper bound on the number of candidate geometries.
    pub max_candidates: usize,
    pub mu_water: f64,
    /// Attenuation (mm⁻¹) above which a boundary voxel counts as tissue.
    pub truncation_threshold: f64,
    /// Project 2×2 rays per pixel.
    pub supersample: bool,
    pub registration: RegistrationConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            theta_h_deg: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            theta_v_deg: vec![-5.0, 0.0, 5.0],
            sod_mm: vec![DEFAULT_SOD_MM],
            odd_mm: vec![DEFAULT_ODD_MM],
            detector: DetectorSpec::default(),
            view: View::AP,
            pairing_window_hours: 48.0,
            target_spacing_mm: DEFAULT_TARGET_SPACING,
            max_candidates: 64,
            mu_water: DEFAULT_MU_WATER,
            truncation_threshold: 0.5 * DEFAULT_MU_WATER,
            supersample: false,
            registration: RegistrationConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DrrError::io(path, e))?;
        let cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| DrrError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn attenuation(&self) -> Result<AttenuationContext> {
        AttenuationContext::new(self.mu_water, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("theta_h_deg", &self.theta_h_deg),
            ("theta_v_deg", &self.theta_v_deg),
            ("sod_mm", &self.sod_mm),
            ("odd_mm", &self.odd_mm),
        ] {
            if list.is_empty() {
                return Err(DrrError::Config(format!("{name} must not be empty")));
            }
            if list.iter().any(|v| !v.is_finite()) {
                return Err(DrrError::Config(format!("{name} contains a non-finite value")));
            }
        }
        if !(self.pairing_window_hours >= 0.0) {
            return Err(DrrError::Config("pairing_window_hours must be >= 0".into()));
        }
        if !(self.target_spacing_mm > 0.0 && self.target_spacing_mm.is_finite()) {
            return Err(DrrError::Config("target_spacing_mm must be positive".into()));
        }
        self.attenuation()?;
        self.registration.validate()?;
        let n = self.candidate_count();
        if n > self.max_candidates {
            return Err(DrrError::Config(format!(
                "sweep has {n} candidates, above the cap of {}",
                self.max_candidates
            )));
        }
        let geoms = self.geometries_unchecked();
        for g in &geoms {
            g.validate().map_err(|e| DrrError::Config(e.to_string()))?;
        }
        let tags: HashSet<String> = geoms.iter().map(ProjectionGeometry::tag).collect();
        if tags.len() != geoms.len() {
            return Err(DrrError::Config("sweep contains duplicate geometries".into()));
        }
        Ok(())
    }

    pub fn candidate_count(&self) -> usize {
        self.theta_h_deg.len() * self.theta_v_deg.len() * self.sod_mm.len() * self.odd_mm.len()
    }

    fn geometries_unchecked(&self) -> Vec<ProjectionGeometry> {
        let mut out = Vec::with_capacity(self.candidate_count());
        for &sod in &self.sod_mm {
            for &odd in &self.odd_mm {
                for &theta_h in &self.theta_h_deg {
                    for &theta_v in &self.theta_v_deg {
                        out.push(ProjectionGeometry {
                            sod,
                            odd,
                            theta_h,
                            theta_v,
                            det_w: self.detector.width,
                            det_h: self.detector.height,
                            det_pitch: self.detector.pitch_mm,
                            view: self.view,
                        });
                    }
                }
            }
        }
        out
    }

    /// Cartesian product in sod, odd, theta_h, theta_v order.
    pub fn geometries(&self) -> Result<Vec<ProjectionGeometry>> {
        self.validate()?;
        Ok(self.geometries_unchecked())
    }
}
