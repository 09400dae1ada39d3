//! Volume preparation ahead of projection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::volume::{CtVolume, ElementKind, MaskVolume, ValueKind, VolumeHeader, HU_MIN};

/// Default water attenuation at the virtual beam energy (mm⁻¹).
pub const DEFAULT_MU_WATER: f64 = 0.02;
/// Default isotropic spacing (mm) applied before projection.
pub const DEFAULT_TARGET_SPACING: f64 = 0.4;
/// A lateral face counts as truncated above this fraction of dense voxels.
pub const TRUNCATION_FRACTION: f64 = 0.01;

/// Reference attenuations anchoring the Hounsfield scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationContext {
    pub mu_water: f64,
    #[serde(default)]
    pub mu_air: f64,
}

impl Default for AttenuationContext {
    fn default() -> Self {
        AttenuationContext {
            mu_water: DEFAULT_MU_WATER,
            mu_air: 0.0,
        }
    }
}

impl AttenuationContext {
    pub fn new(mu_water: f64, mu_air: f64) -> Result<Self> {
        let ctx = AttenuationContext { mu_water, mu_air };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_air >= 0.0 && self.mu_water > self.mu_air && self.mu_water.is_finite()) {
            return Err(DrrError::InvariantViolation(format!(
                "need mu_water > mu_air >= 0, got {} / {}",
                self.mu_water, self.mu_air
            )));
        }
        Ok(())
    }

    /// μ for one Hounsfield value, clamped at zero.
    ///
    /// Written as a blend so both anchors are exact: 0 HU gives `mu_water`
    /// and -1000 HU gives `mu_air` bit for bit.
    #[inline]
    pub fn mu_from_hu(&self, hu: f64) -> f64 {
        let h = hu / 1000.0;
        (self.mu_water * (1.0 + h) - self.mu_air * h).max(0.0)
    }

    #[inline]
    pub fn hu_from_mu(&self, mu: f64) -> f64 {
        1000.0 * (mu - self.mu_water) / (self.mu_water - self.mu_air)
    }
}

/// Convert a Hounsfield volume to linear attenuation (mm⁻¹).
pub fn hu_to_mu(v: &CtVolume, ctx: &AttenuationContext) -> Result<CtVolume> {
    if v.value_kind != ValueKind::Hounsfield {
        return Err(DrrError::WrongValueKind {
            expected: ValueKind::Hounsfield.name(),
            found: v.value_kind.name(),
        });
    }
    ctx.validate()?;
    let values = v.values.par_iter().map(|&hu| ctx.mu_from_hu(hu)).collect();
    let header = VolumeHeader {
        element_kind: ElementKind::Float32,
        ..v.header.clone()
    };
    Ok(CtVolume {
        header,
        values,
        value_kind: ValueKind::AttenuationPerMm,
    })
}

/// Convert an attenuation volume back to Hounsfield units.
///
/// Values below -1024 HU (possible only when `mu_air > 0`) are clamped to
/// the loader's range.
pub fn mu_to_hu(v: &CtVolume, ctx: &AttenuationContext) -> Result<CtVolume> {
    if v.value_kind != ValueKind::AttenuationPerMm {
        return Err(DrrError::WrongValueKind {
            expected: ValueKind::AttenuationPerMm.name(),
            found: v.value_kind.name(),
        });
    }
    ctx.validate()?;
    let values: Vec<f64> = v.values.par_iter().map(|&mu| ctx.hu_from_mu(mu).max(HU_MIN)).collect();
    let header = VolumeHeader {
        element_kind: ElementKind::Float32,
        ..v.header.clone()
    };
    CtVolume::new(header, values, ValueKind::Hounsfield)
        .map_err(|e| DrrError::InvariantViolation(format!("attenuation exceeds Hounsfield range: {e}")))
}

/// Output grid for isotropic resampling: spacing `t`, `ceil(extent / t)`
/// voxels per axis, same origin.
pub fn isotropic_header(h: &VolumeHeader, target_spacing: f64) -> Result<VolumeHeader> {
    if !(target_spacing > 0.0 && target_spacing.is_finite()) {
        return Err(DrrError::InvariantViolation(format!(
            "target spacing must be positive, got {target_spacing}"
        )));
    }
    let extent = h.extent();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        // tolerate round-off so an exact multiple does not gain a voxel
        let n = extent[a] / target_spacing;
        let n = if (n - n.round()).abs() < 1e-9 { n.round() } else { n.ceil() };
        dims[a] = (n as usize).max(1);
    }
    Ok(VolumeHeader {
        dims,
        spacing: [target_spacing; 3],
        origin: h.origin,
        element_kind: h.element_kind,
        byte_order: h.byte_order,
    })
}

/// Per-axis sampling table: lower index, upper index and weight of the
/// upper sample for each output coordinate.
fn axis_weights(n_in: usize, spacing_in: f64, n_out: usize, spacing_out: f64) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let pos = (i as f64 * spacing_out / spacing_in).clamp(0.0, (n_in - 1) as f64);
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling of an x-fastest grid. Out-of-support samples
/// take the clamped edge value.
fn trilinear_resample(src: &VolumeHeader, values: &[f64], dst: &VolumeHeader) -> Vec<f64> {
    let wx = axis_weights(src.dims[0], src.spacing[0], dst.dims[0], dst.spacing[0]);
    let wy = axis_weights(src.dims[1], src.spacing[1], dst.dims[1], dst.spacing[1]);
    let wz = axis_weights(src.dims[2], src.spacing[2], dst.dims[2], dst.spacing[2]);
    let [nx, ny, _] = src.dims;
    let plane = dst.dims[0] * dst.dims[1];
    let mut out = vec![0.0; dst.voxel_count()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let (z0, z1, fz) = wz[z];
        for (y, row) in slab.chunks_mut(dst.dims[0]).enumerate() {
            let (y0, y1, fy) = wy[y];
            let base = |yy: usize, zz: usize| nx * (yy + ny * zz);
            let (b00, b10, b01, b11) = (base(y0, z0), base(y1, z0), base(y0, z1), base(y1, z1));
            for (x, o) in row.iter_mut().enumerate() {
                let (x0, x1, fx) = wx[x];
                let lerp = |b: usize| values[b + x0] + fx * (values[b + x1] - values[b + x0]);
                let c0 = lerp(b00) + fy * (lerp(b10) - lerp(b00));
                let c1 = lerp(b01) + fy * (lerp(b11) - lerp(b01));
                *o = c0 + fz * (c1 - c0);
            }
        }
    });
    out
}

/// Resample to isotropic `target_spacing` by trilinear interpolation.
pub fn resample_isotropic(v: &CtVolume, target_spacing: f64) -> Result<CtVolume> {
    let dst = isotropic_header(&v.header, target_spacing)?;
    let (lo, hi) = v.min_max();
    // the blend formula can overshoot the envelope by an ulp
    let values = trilinear_resample(&v.header, &v.values, &dst)
        .into_iter()
        .map(|x| x.clamp(lo, hi))
        .collect();
    Ok(CtVolume {
        header: dst,
        values,
        value_kind: v.value_kind,
    })
}

/// Resample a mask with the same mapping as [`resample_isotropic`], then
/// threshold the interpolated occupancy at 0.5.
pub fn resample_mask_isotropic(m: &MaskVolume, target_spacing: f64) -> Result<MaskVolume> {
    let dst = isotropic_header(&m.header, target_spacing)?;
    let as_f: Vec<f64> = m.values.iter().map(|&v| v as f64).collect();
    let values = trilinear_resample(&m.header, &as_f, &dst)
        .into_iter()
        .map(|x| u8::from(x >= 0.5))
        .collect();
    Ok(MaskVolume {
        header: VolumeHeader {
            element_kind: ElementKind::Uint8,
            ..dst
        },
        values,
    })
}

/// Fractions of dense voxels on the four lateral faces of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub truncated: bool,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl TruncationReport {
    pub fn fractions(&self) -> [f64; 4] {
        [self.x_min, self.x_max, self.y_min, self.y_max]
    }
}

/// Check whether anatomy touches the lateral (x/y) faces of an
/// attenuation volume, which indicates a field of view too small for
/// realistic projections.
pub fn detect_truncation(v: &CtVolume, threshold: f64) -> TruncationReport {
    let [nx, ny, nz] = v.header.dims;
    let face = |fixed_axis: usize, at: usize| -> f64 {
        let mut dense = 0usize;
        let mut total = 0usize;
        for z in 0..nz {
            let other = if fixed_axis == 0 { ny } else { nx };
            for k in 0..other {
                let (x, y) = if fixed_axis == 0 { (at, k) } else { (k, at) };
                total += 1;
                if v.at(x, y, z) > threshold {
                    dense += 1;
                }
            }
        }
        dense as f64 / total as f64
    };
    let x_min = face(0, 0);
    let x_max = face(0, nx - 1);
    let y_min = face(1, 0);
    let y_max = face(1, ny - 1);
    TruncationReport {
        truncated: [x_min, x_max, y_min, y_max].iter().any(|&f| f > TRUNCATION_FRACTION),
        x_min,
        x_max,
        y_min,
        y_max,
    }
}
