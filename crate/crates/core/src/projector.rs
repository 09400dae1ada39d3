//! Cone-beam forward projection by exact voxel traversal.
//!
//! Every detector pixel gets one ray from the point source through the
//! pixel centre. The ray is clipped to the volume's bounding box and walked
//! cell by cell (incremental crossing of the axis-aligned voxel planes);
//! each visited voxel contributes its value times the exact length of the
//! ray inside it. Rays that miss the volume integrate to zero.

use rayon::prelude::*;

use crate::error::{DrrError, Result};
use crate::geometry::{norm, scale, sub, ProjectionGeometry, Vec3, View};
use crate::raster::{Gray8, Image2D, ImageKind, Mask2D};
use crate::volume::{CtVolume, MaskVolume, ValueKind, VolumeHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProjectOptions {
    /// Average 2x2 rays per pixel instead of a single central ray.
    pub supersample: bool,
}

/// Voxel grid in its own unit-cell coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub dims: [usize; 3],
    pub lo: Vec3,
    pub spacing: f64,
}

impl Grid {
    pub fn from_header(h: &VolumeHeader) -> Result<Self> {
        if !h.is_isotropic() {
            return Err(DrrError::AnisotropicVolume(h.spacing));
        }
        let (lo, _) = h.bounds();
        Ok(Grid {
            dims: h.dims,
            lo,
            spacing: h.spacing[0],
        })
    }

    /// Visit every voxel pierced by the ray leaving `source` towards
    /// `through` (and beyond), with the intersection length in mm.
    #[inline]
    pub fn trace(&self, source: Vec3, through: Vec3, mut visit: impl FnMut(usize, f64)) {
        let d = sub(through, source);
        let len = norm(d);
        if len == 0.0 {
            return;
        }
        let inv_s = 1.0 / self.spacing;
        // position in cell units, direction in cells per mm
        let q0 = [
            (source[0] - self.lo[0]) * inv_s,
            (source[1] - self.lo[1]) * inv_s,
            (source[2] - self.lo[2]) * inv_s,
        ];
        let dv = scale(d, inv_s / len);
        let n = [self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64];

        let mut t_in = 0.0f64;
        let mut t_out = f64::INFINITY;
        for a in 0..3 {
            if dv[a] != 0.0 {
                let t1 = -q0[a] / dv[a];
                let t2 = (n[a] - q0[a]) / dv[a];
                t_in = t_in.max(t1.min(t2));
                t_out = t_out.min(t1.max(t2));
            } else if q0[a] <= 0.0 || q0[a] >= n[a] {
                return;
            }
        }
        if !(t_out > t_in) {
            return;
        }

        let stride = [1isize, self.dims[0] as isize, (self.dims[0] * self.dims[1]) as isize];
        let mut cell = [0isize; 3];
        let mut step = [0isize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let p = q0[a] + dv[a] * t_in;
            let c = if dv[a] < 0.0 { p.ceil() - 1.0 } else { p.floor() };
            cell[a] = (c as isize).clamp(0, self.dims[a] as isize - 1);
            if dv[a] > 0.0 {
                step[a] = 1;
                t_max[a] = (cell[a] as f64 + 1.0 - q0[a]) / dv[a];
                t_delta[a] = 1.0 / dv[a];
            } else if dv[a] < 0.0 {
                step[a] = -1;
                t_max[a] = (cell[a] as f64 - q0[a]) / dv[a];
                t_delta[a] = -1.0 / dv[a];
            }
        }
        let limit = [self.dims[0] as isize, self.dims[1] as isize, self.dims[2] as isize];
        let mut index = cell[0] * stride[0] + cell[1] * stride[1] + cell[2] * stride[2];
        let mut t = t_in;
        loop {
            let a = if t_max[0] < t_max[1] {
                if t_max[0] < t_max[2] {
                    0
                } else {
                    2
                }
            } else if t_max[1] < t_max[2] {
                1
            } else {
                2
            };
            let t_next = t_max[a].min(t_out);
            if t_next > t {
                visit(index as usize, t_next - t);
                t = t_next;
            }
            if t >= t_out {
                break;
            }
            cell[a] += step[a];
            if cell[a] < 0 || cell[a] >= limit[a] {
                break;
            }
            index += step[a] * stride[a];
            t_max[a] += t_delta[a];
        }
    }

    /// Length (mm) of the ray inside the bounding box.
    pub fn chord(&self, source: Vec3, through: Vec3) -> f64 {
        let mut total = 0.0;
        self.trace(source, through, |_, l| total += l);
        total
    }
}

fn check_source_outside(h: &VolumeHeader, g: &ProjectionGeometry) -> Result<()> {
    let (lo, hi) = h.bounds();
    let s = g.pose(h.center()).source;
    if (0..3).all(|a| s[a] >= lo[a] && s[a] <= hi[a]) {
        return Err(DrrError::DegenerateGeometry(format!(
            "source {s:?} lies inside the volume bounds {lo:?}..{hi:?}"
        )));
    }
    Ok(())
}

/// Integrate `weight(voxel, length)` along every detector ray.
fn project_rays<F>(h: &VolumeHeader, g: &ProjectionGeometry, opts: ProjectOptions, weight: F) -> Result<Vec<f64>>
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    g.validate()?;
    let grid = Grid::from_header(h)?;
    check_source_outside(h, g)?;
    let pose = g.pose(h.center());
    let offsets: &[(f64, f64)] = if opts.supersample {
        &[(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)]
    } else {
        &[(0.0, 0.0)]
    };
    let mut out = vec![0.0; g.det_w * g.det_h];
    out.par_chunks_mut(g.det_w).enumerate().for_each(|(row, line)| {
        for (col, px) in line.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(dc, dr) in offsets {
                let p = pose.pixel_position(g, col as f64 + dc, row as f64 + dr);
                let mut ray = 0.0;
                grid.trace(pose.source, p, |i, l| ray += weight(i, l));
                acc += ray;
            }
            *px = acc / offsets.len() as f64;
        }
    });
    if g.view == View::PA {
        for line in out.chunks_mut(g.det_w) {
            line.reverse();
        }
    }
    Ok(out)
}

pub fn project_attenuation(v: &CtVolume, g: &ProjectionGeometry) -> Result<Image2D> {
    project_attenuation_with(v, g, ProjectOptions::default())
}

/// Line-integral image `Σ μᵢ·Δxᵢ` of an attenuation volume.
pub fn project_attenuation_with(v: &CtVolume, g: &ProjectionGeometry, opts: ProjectOptions) -> Result<Image2D> {
    if v.value_kind != ValueKind::AttenuationPerMm {
        return Err(DrrError::WrongValueKind {
            expected: ValueKind::AttenuationPerMm.name(),
            found: v.value_kind.name(),
        });
    }
    let values = &v.values;
    let out = project_rays(&v.header, g, opts, |i, l| values[i] * l)?;
    Ok(Image2D {
        width: g.det_w,
        height: g.det_h,
        pitch: g.det_pitch,
        values: out,
        kind: ImageKind::LineIntegral,
    })
}

pub fn project_mask_depth(m: &MaskVolume, g: &ProjectionGeometry) -> Result<Image2D> {
    project_mask_depth_with(m, g, ProjectOptions::default())
}

/// Chord length (mm) of every ray through the set voxels of a mask.
pub fn project_mask_depth_with(m: &MaskVolume, g: &ProjectionGeometry, opts: ProjectOptions) -> Result<Image2D> {
    let values = &m.values;
    let out = project_rays(&m.header, g, opts, |i, l| if values[i] == 1 { l } else { 0.0 })?;
    Ok(Image2D {
        width: g.det_w,
        height: g.det_h,
        pitch: g.det_pitch,
        values: out,
        kind: ImageKind::DepthMm,
    })
}

/// Chord floor below which a projected mask pixel stays unset: half a
/// voxel.
pub fn depth_floor(m: &MaskVolume) -> f64 {
    0.5 * m.header.spacing[0]
}

/// Binary projected mask: set where the chord through the mask exceeds
/// [`depth_floor`].
pub fn project_mask_binary(m: &MaskVolume, g: &ProjectionGeometry) -> Result<Mask2D> {
    let depth = project_mask_depth(m, g)?;
    Ok(Mask2D::from_threshold(&depth, depth_floor(m)))
}

/// Convert line integrals to transmitted intensity ratios `I/I₀ = exp(-x)`.
pub fn to_intensity(img: &Image2D) -> Result<Image2D> {
    if img.kind != ImageKind::LineIntegral {
        return Err(DrrError::WrongKind {
            expected: ImageKind::LineIntegral.name(),
            found: img.kind.name(),
        });
    }
    Ok(Image2D {
        values: img.values.iter().map(|&x| (-x).exp().max(f64::MIN_POSITIVE)).collect(),
        kind: ImageKind::IntensityRatio,
        ..img.clone()
    })
}

/// Nearest-rank percentile (`q` in [0, 1]).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Default display window: `[0, p99]` for line integrals, the value range
/// otherwise.
pub fn default_window(img: &Image2D) -> (f64, f64) {
    match img.kind {
        ImageKind::LineIntegral => (0.0, percentile(&img.values, 0.99)),
        _ => (img.min(), img.max()),
    }
}

/// Linear window to 0..=255, rounding half up and clamping outside the
/// window.
pub fn render_preview(img: &Image2D, window: Option<(f64, f64)>) -> Result<Gray8> {
    let (lo, hi) = window.unwrap_or_else(|| default_window(img));
    if !(hi > lo) {
        return Err(DrrError::EmptyWindow { lo, hi });
    }
    let k = 255.0 / (hi - lo);
    Ok(Gray8 {
        width: img.width,
        height: img.height,
        values: img
            .values
            .iter()
            .map(|&v| ((v - lo) * k + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect(),
    })
}
