use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};

pub const MIN_DETERMINANT: f64 = 0.25;
pub const MAX_DETERMINANT: f64 = 4.0;

/// 2D affine map `(x, y) -> (a·x + b·y + tx, c·x + d·y + ty)` in pixel
/// coordinates measured from each raster's centre.
///
/// Registration results map moving (synthetic X-ray) coordinates onto
/// fixed (X-ray) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Decomposed affine: `A = R(rotation) · diag(e^lsx, e^lsy) · [[1, shear], [0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformParams {
    pub tx: f64,
    pub ty: f64,
    /// Radians.
    pub rotation: f64,
    pub log_scale_x: f64,
    pub log_scale_y: f64,
    pub shear: f64,
}

impl TransformParams {
    pub fn to_array(self) -> [f64; 6] {
        [self.tx, self.ty, self.rotation, self.log_scale_x, self.log_scale_y, self.shear]
    }

    pub fn from_array(p: &[f64]) -> Self {
        TransformParams {
            tx: p[0],
            ty: p[1],
            rotation: p[2],
            log_scale_x: p[3],
            log_scale_y: p[4],
            shear: p[5],
        }
    }
}

impl Default for AffineTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform2D {
    pub fn identity() -> Self {
        AffineTransform2D {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform2D {
            tx,
            ty,
            ..Self::identity()
        }
    }

    /// Rotation by `degrees` with isotropic `scale`, then translation.
    pub fn similarity(degrees: f64, scale: f64, tx: f64, ty: f64) -> Self {
        Self::from_params(&TransformParams {
            tx,
            ty,
            rotation: degrees.to_radians(),
            log_scale_x: scale.ln(),
            log_scale_y: scale.ln(),
            shear: 0.0,
        })
    }

    pub fn from_params(p: &TransformParams) -> Self {
        let (s, c) = p.rotation.sin_cos();
        let sx = p.log_scale_x.exp();
        let sy = p.log_scale_y.exp();
        AffineTransform2D {
            a: c * sx,
            b: c * sx * p.shear - s * sy,
            c: s * sx,
            d: s * sx * p.shear + c * sy,
            tx: p.tx,
            ty: p.ty,
        }
    }

    /// Inverse of [`from_params`](Self::from_params); requires a positive
    /// determinant.
    pub fn params(&self) -> TransformParams {
        let rotation = self.c.atan2(self.a);
        let sx = self.a.hypot(self.c);
        let (s, c) = rotation.sin_cos();
        let upper = c * self.b + s * self.d;
        let sy = -s * self.b + c * self.d;
        TransformParams {
            tx: self.tx,
            ty: self.ty,
            rotation,
            log_scale_x: sx.ln(),
            log_scale_y: sy.ln(),
            shear: upper / sx,
        }
    }

    pub fn rotation_degrees(&self) -> f64 {
        self.c.atan2(self.a).to_degrees()
    }

    /// Scale factors along the rotated x and y axes.
    pub fn scales(&self) -> (f64, f64) {
        let p = self.params();
        (p.log_scale_x.exp(), p.log_scale_y.exp())
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.b, self.c, self.d, self.tx, self.ty].iter().all(|v| v.is_finite())
    }

    pub fn is_feasible(&self) -> bool {
        let det = self.determinant();
        self.is_finite() && (MIN_DETERMINANT..=MAX_DETERMINANT).contains(&det)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_feasible() {
            return Err(DrrError::DegenerateDeterminant(self.determinant()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty)
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(DrrError::DegenerateDeterminant(det));
        }
        let a = self.d / det;
        let b = -self.b / det;
        let c = -self.c / det;
        let d = self.a / det;
        Ok(AffineTransform2D {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        })
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &AffineTransform2D) -> Self {
        AffineTransform2D {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
            tx: self.a * other.tx + self.b * other.ty + self.tx,
            ty: self.c * other.tx + self.d * other.ty + self.ty,
        }
    }

    /// Same map with translations expressed in pixels of a raster
    /// downsampled by `factor`.
    pub fn at_scale(&self, factor: f64) -> Self {
        AffineTransform2D {
            tx: self.tx / factor,
            ty: self.ty / factor,
            ..*self
        }
    }
}
