//! Point-source cone-beam geometry.
//!
//! At zero angles the source sits at `center - sod * ŷ` (anterior) and the
//! detector plane is perpendicular to ŷ at `center + odd * ŷ`. Detector
//! columns run along +x (patient left) and rows along -z (feet), so an
//! image reads head-up. The rig is then rotated rigidly about the volume
//! centre: first `theta_h` about the vertical z axis, then `theta_v` about
//! the transverse x axis. A PA view uses the same rays and mirrors the
//! columns of the result.

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};

pub const DEFAULT_SOD_MM: f64 = 1800.0;
pub const DEFAULT_ODD_MM: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum View {
    #[default]
    AP,
    PA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    #[serde(rename = "sod_mm")]
    pub sod: f64,
    #[serde(rename = "odd_mm")]
    pub odd: f64,
    #[serde(rename = "theta_h_deg", default)]
    pub theta_h: f64,
    #[serde(rename = "theta_v_deg", default)]
    pub theta_v: f64,
    pub det_w: usize,
    pub det_h: usize,
    #[serde(rename = "det_pitch_mm")]
    pub det_pitch: f64,
    #[serde(default)]
    pub view: View,
}

impl Default for ProjectionGeometry {
    fn default() -> Self {
        ProjectionGeometry {
            sod: DEFAULT_SOD_MM,
            odd: DEFAULT_ODD_MM,
            theta_h: 0.0,
            theta_v: 0.0,
            det_w: 512,
            det_h: 512,
            det_pitch: 0.8,
            view: View::AP,
        }
    }
}

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Source and detector frame in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigPose {
    pub source: Vec3,
    pub detector_center: Vec3,
    /// Unit vector along increasing detector column.
    pub u: Vec3,
    /// Unit vector along increasing detector row.
    pub v: Vec3,
}

impl ProjectionGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DrrError::DegenerateGeometry(m));
        if !(self.sod > 0.0 && self.sod.is_finite()) {
            return bad(format!("sod must be > 0, got {}", self.sod));
        }
        if !(self.odd >= 0.0 && self.odd.is_finite()) {
            return bad(format!("odd must be >= 0, got {}", self.odd));
        }
        if self.det_w == 0 || self.det_h == 0 {
            return bad("detector needs at least one pixel".into());
        }
        if !(self.det_pitch > 0.0 && self.det_pitch.is_finite()) {
            return bad(format!("detector pitch must be > 0, got {}", self.det_pitch));
        }
        if !(self.theta_h.abs() < 90.0 && self.theta_v.abs() < 90.0) {
            return bad(format!("angles must be within (-90, 90): {} / {}", self.theta_h, self.theta_v));
        }
        Ok(())
    }

    /// Cone-beam magnification at the rotation centre.
    pub fn magnification(&self) -> f64 {
        (self.sod + self.odd) / self.sod
    }

    fn rotate(&self, p: Vec3) -> Vec3 {
        let (sh, ch) = self.theta_h.to_radians().sin_cos();
        let (sv, cv) = self.theta_v.to_radians().sin_cos();
        // about z
        let q = [ch * p[0] - sh * p[1], sh * p[0] + ch * p[1], p[2]];
        // about x
        [q[0], cv * q[1] - sv * q[2], sv * q[1] + cv * q[2]]
    }

    /// Pose of the source/detector rig around `center`.
    pub fn pose(&self, center: Vec3) -> RigPose {
        RigPose {
            source: add(center, self.rotate([0.0, -self.sod, 0.0])),
            detector_center: add(center, self.rotate([0.0, self.odd, 0.0])),
            u: self.rotate([1.0, 0.0, 0.0]),
            v: self.rotate([0.0, 0.0, -1.0]),
        }
    }

    /// Offsets (mm) of a detector position from the detector centre along
    /// the column and row axes. Fractional pixel positions are allowed.
    pub fn detector_offset(&self, col: f64, row: f64) -> (f64, f64) {
        (
            (col - 0.5 * (self.det_w as f64 - 1.0)) * self.det_pitch,
            (row - 0.5 * (self.det_h as f64 - 1.0)) * self.det_pitch,
        )
    }

    /// File-name tag in the `src<sod>_dtr<odd>_theta<theta_h>` style. A
    /// non-zero vertical angle and the PA view add suffixes so every grid
    /// point gets a distinct tag.
    pub fn tag(&self) -> String {
        let mut s = format!("src{}_dtr{}_theta{}", self.sod, self.odd, self.theta_h);
        if self.theta_v != 0.0 {
            s.push_str(&format!("_vtheta{}", self.theta_v));
        }
        if self.view == View::PA {
            s.push_str("_PA");
        }
        s
    }
}

impl RigPose {
    pub fn pixel_position(&self, g: &ProjectionGeometry, col: f64, row: f64) -> Vec3 {
        let (du, dv) = g.detector_offset(col, row);
        add(self.detector_center, add(scale(self.u, du), scale(self.v, dv)))
    }
}
