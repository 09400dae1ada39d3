//! Shared fixtures and the brute-force ray-sampling oracle.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use drr_core::volume::{CtVolume, ElementKind, ValueKind, VolumeHeader};
use drr_core::ProjectionGeometry;
use rand::Rng;

pub type Vec3 = [f64; 3];

/// Rotation `Rx(theta_v) · Rz(theta_h)` written out independently of the
/// library's geometry code.
fn rig_rotation(g: &ProjectionGeometry) -> [[f64; 3]; 3] {
    let (sh, ch) = g.theta_h.to_radians().sin_cos();
    let (sv, cv) = g.theta_v.to_radians().sin_cos();
    let rz = [[ch, -sh, 0.0], [sh, ch, 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cv, -sv], [0.0, sv, cv]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| rx[i][k] * rz[k][j]).sum();
        }
    }
    r
}

fn apply(r: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
    [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

/// Source and pixel-centre positions for detector pixel `(col, row)` of
/// an AP view (columns along +x, rows along −z at zero angles).
pub fn ray_endpoints(g: &ProjectionGeometry, center: Vec3, col: usize, row: usize) -> (Vec3, Vec3) {
    let r = rig_rotation(g);
    let du = (col as f64 - 0.5 * (g.det_w as f64 - 1.0)) * g.det_pitch;
    let dv = (row as f64 - 0.5 * (g.det_h as f64 - 1.0)) * g.det_pitch;
    let s = apply(&r, [0.0, -g.sod, 0.0]);
    let p = apply(&r, [du, g.odd, -dv]);
    ([0, 1, 2].map(|k| center[k] + s[k]), [0, 1, 2].map(|k| center[k] + p[k]))
}

fn voxel_at(h: &VolumeHeader, lo: Vec3, p: Vec3) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let f = ((p[a] - lo[a]) / h.spacing[a]).floor();
        let n = h.dims[a] as f64;
        // points on the far face belong to the last voxel
        let f = if f == n { n - 1.0 } else { f };
        if f < 0.0 || f >= n {
            return None;
        }
        idx[a] = f as usize;
    }
    Some(h.index(idx[0], idx[1], idx[2]))
}

fn value(v: &CtVolume, lo: Vec3, p: Vec3) -> f64 {
    voxel_at(&v.header, lo, p).map_or(0.0, |i| v.values[i])
}

/// Integral of μ along the half-line from `source` through `through` by
/// fine-step sampling. Sample intervals are `spacing / 50`; an interval
/// whose endpoints fall in different voxels is bisected until the pieces
/// are single-voxel or shorter than 1e-12 mm. Voxels are convex, so an
/// interval with both endpoints in one voxel lies inside it.
pub fn oracle_line_integral(v: &CtVolume, source: Vec3, through: Vec3) -> f64 {
    let (lo, hi) = v.header.bounds();
    let d = [0, 1, 2].map(|k| through[k] - source[k]);
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let d = d.map(|c| c / len);
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if source[a] < lo[a] || source[a] > hi[a] {
                return 0.0;
            }
        } else {
            let ta = (lo[a] - source[a]) / d[a];
            let tb = (hi[a] - source[a]) / d[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if !(t1 > t0) {
        return 0.0;
    }
    let at = |t: f64| [0, 1, 2].map(|k| source[k] + t * d[k]);
    let h = v.header.spacing[0] / 50.0;
    let n = ((t1 - t0) / h).ceil() as usize;
    let mut total = 0.0;
    for k in 0..n {
        let a = t0 + k as f64 * h;
        let b = (t0 + (k + 1) as f64 * h).min(t1);
        total += piece(v, lo, &at, a, b);
    }
    total
}

fn piece(v: &CtVolume, lo: Vec3, at: &impl Fn(f64) -> Vec3, a: f64, b: f64) -> f64 {
    // probe just inside the interval so face points do not pick a neighbour
    let eps: f64 = 1e-12;
    let ia = voxel_at(&v.header, lo, at(a + eps.min(0.25 * (b - a))));
    let ib = voxel_at(&v.header, lo, at(b - eps.min(0.25 * (b - a))));
    if ia == ib || b - a < 1e-12 {
        let m = at(0.5 * (a + b));
        return value(v, lo, m) * (b - a);
    }
    let m = 0.5 * (a + b);
    piece(v, lo, at, a, m) + piece(v, lo, at, m, b)
}

/// Random attenuation volume with at most 32 voxels per axis.
pub fn random_volume(rng: &mut impl Rng) -> CtVolume {
    let dims = [0; 3].map(|_| rng.gen_range(4..=32));
    let spacing = rng.gen_range(0.5..2.0);
    let center = [0; 3].map(|_| rng.gen_range(-10.0..10.0));
    let h = VolumeHeader::centered_at(dims, [spacing; 3], center, ElementKind::Float32).unwrap();
    let values = (0..h.voxel_count())
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.05) })
        .collect();
    CtVolume::new(h, values, ValueKind::AttenuationPerMm).unwrap()
}

/// Random geometry whose 24×24 detector covers the magnified volume.
pub fn random_geometry(rng: &mut impl Rng, v: &CtVolume) -> ProjectionGeometry {
    let ext = v.header.extent();
    let diag = (ext[0] * ext[0] + ext[1] * ext[1] + ext[2] * ext[2]).sqrt();
    let sod = rng.gen_range(diag..20.0 * diag).max(diag);
    let odd = rng.gen_range(0.0..sod);
    let mag = (sod + odd) / (sod - 0.5 * diag);
    ProjectionGeometry {
        sod,
        odd,
        theta_h: rng.gen_range(-40.0..40.0),
        theta_v: rng.gen_range(-40.0..40.0),
        det_w: 24,
        det_h: 24,
        det_pitch: diag * mag / 20.0,
        view: drr_core::View::AP,
    }
}

/// Largest violation of `|a - b| <= rel * |b| + abs` over an image, as a
/// multiple of the allowed error.
pub fn worst_ratio(a: &[f64], b: &[f64], rel: f64, abs: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (rel * y.abs() + abs))
        .fold(0.0, f64::max)
}
