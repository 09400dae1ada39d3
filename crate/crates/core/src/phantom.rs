//! Digital phantoms for tests, demos and the end-to-end check.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::geometry::ProjectionGeometry;
use crate::io::{save_ct, save_image, save_mask, save_mask_volume};
use crate::pipeline::{DetectorSpec, SweepConfig};
use crate::prep::{hu_to_mu, resample_isotropic, resample_mask_isotropic, AttenuationContext};
use crate::projector::{project_attenuation, project_mask_binary};
use crate::raster::{Image2D, ImageKind, Mask2D};
use crate::registration::{warp_image, warp_mask, AffineTransform2D};
use crate::volume::{CtVolume, ElementKind, MaskVolume, ValueKind, VolumeHeader};

type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub semi_axes: Vec3,
}

impl Ellipsoid {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Ellipsoid {
            center,
            semi_axes: [radius; 3],
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3)
            .map(|k| ((p[k] - self.center[k]) / self.semi_axes[k]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Chest phantom in HU with its lung and lesion masks on the same grid.
#[derive(Debug, Clone)]
pub struct ChestPhantom {
    pub ct: CtVolume,
    pub lungs: MaskVolume,
    pub lesion: MaskVolume,
    pub lesion_center: Vec3,
    pub lesion_radius: f64,
}

pub const BODY: Ellipsoid = Ellipsoid {
    center: [0.0, 0.0, 0.0],
    semi_axes: [140.0, 95.0, 160.0],
};
pub const RIGHT_LUNG: Ellipsoid = Ellipsoid {
    center: [-68.0, -15.0, 25.0],
    semi_axes: [48.0, 55.0, 105.0],
};
pub const LEFT_LUNG: Ellipsoid = Ellipsoid {
    center: [62.0, 20.0, 15.0],
    semi_axes: [42.0, 50.0, 95.0],
};
const HEART: Ellipsoid = Ellipsoid {
    center: [25.0, -35.0, -35.0],
    semi_axes: [50.0, 40.0, 50.0],
};
const SPINE: Ellipsoid = Ellipsoid {
    center: [0.0, 65.0, 0.0],
    semi_axes: [16.0, 16.0, 155.0],
};
const VESSELS: [(Vec3, f64); 6] = [
    ([-80.0, -40.0, 60.0], 7.0),
    ([-50.0, 10.0, -40.0], 6.0),
    ([-90.0, 20.0, -10.0], 5.0),
    ([50.0, 40.0, 70.0], 7.0),
    ([80.0, -5.0, -30.0], 6.0),
    ([55.0, 0.0, 30.0], 5.0),
];
const LESION_CENTER: Vec3 = [-60.0, -25.0, 45.0];
const LESION_RADIUS: f64 = 12.5;

pub const HU_AIR: f64 = -1000.0;
pub const HU_BODY: f64 = 0.0;
pub const HU_LUNG: f64 = -850.0;
pub const HU_HEART: f64 = 40.0;
pub const HU_SPINE: f64 = 700.0;
pub const HU_VESSEL: f64 = 40.0;
pub const HU_LESION: f64 = -50.0;

/// Smallest grid centred at the origin that holds the body with a margin of
/// `margin_voxels` of air on every side.
pub fn chest_header(spacing: Vec3, margin_voxels: usize) -> Result<VolumeHeader> {
    let dims = [0, 1, 2].map(|k| (2.0 * BODY.semi_axes[k] / spacing[k]).ceil() as usize + 2 * margin_voxels);
    VolumeHeader::centered_at(dims, spacing, [0.0; 3], ElementKind::Int16)
}

fn chest_hu(p: Vec3) -> f64 {
    if !BODY.contains(p) {
        return HU_AIR;
    }
    if SPINE.contains(p) {
        return HU_SPINE;
    }
    if HEART.contains(p) {
        return HU_HEART;
    }
    if RIGHT_LUNG.contains(p) || LEFT_LUNG.contains(p) {
        if Ellipsoid::sphere(LESION_CENTER, LESION_RADIUS).contains(p) {
            return HU_LESION;
        }
        if VESSELS.iter().any(|&(c, r)| Ellipsoid::sphere(c, r).contains(p)) {
            return HU_VESSEL;
        }
        return HU_LUNG;
    }
    HU_BODY
}

/// Body ellipsoid of water, two asymmetric lungs at different depths, heart,
/// spine, a few vessels and a 25 mm lesion in the right lung.
pub fn chest_phantom(spacing: Vec3, margin_voxels: usize) -> Result<ChestPhantom> {
    let h = chest_header(spacing, margin_voxels)?;
    let [nx, ny, nz] = h.dims;
    let mut values = vec![0.0; h.voxel_count()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                values[h.index(x, y, z)] = chest_hu(h.voxel_center(x, y, z));
            }
        }
    }
    let ct = CtVolume::new(h.clone(), values, ValueKind::Hounsfield)?;
    let mask_header = VolumeHeader {
        element_kind: ElementKind::Uint8,
        ..h
    };
    let lungs = MaskVolume::from_fn(mask_header.clone(), |p| {
        BODY.contains(p) && !SPINE.contains(p) && !HEART.contains(p) && (RIGHT_LUNG.contains(p) || LEFT_LUNG.contains(p))
    });
    let lesion_shape = Ellipsoid::sphere(LESION_CENTER, LESION_RADIUS);
    let lesion = MaskVolume::from_fn(mask_header, |p| lesion_shape.contains(p));
    Ok(ChestPhantom {
        ct,
        lungs,
        lesion,
        lesion_center: LESION_CENTER,
        lesion_radius: LESION_RADIUS,
    })
}

/// Attenuation volume of `dims` voxels at isotropic `spacing`, centred at the
/// origin, holding `mu` inside `shape` and 0 elsewhere.
pub fn attenuation_shape(dims: [usize; 3], spacing: f64, mu: f64, shape: impl Fn(Vec3) -> bool) -> Result<CtVolume> {
    let h = VolumeHeader::centered_at(dims, [spacing; 3], [0.0; 3], ElementKind::Float32)?;
    let [nx, ny, nz] = dims;
    let mut values = vec![0.0; h.voxel_count()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if shape(h.voxel_center(x, y, z)) {
                    values[h.index(x, y, z)] = mu;
                }
            }
        }
    }
    CtVolume::new(h, values, ValueKind::AttenuationPerMm)
}

pub fn attenuation_cube(dims: [usize; 3], spacing: f64, mu: f64, side: f64) -> Result<CtVolume> {
    attenuation_shape(dims, spacing, mu, |p| p.iter().all(|c| c.abs() <= 0.5 * side))
}

pub fn attenuation_sphere(dims: [usize; 3], spacing: f64, mu: f64, radius: f64) -> Result<CtVolume> {
    let s = Ellipsoid::sphere([0.0; 3], radius);
    attenuation_shape(dims, spacing, mu, |p| s.contains(p))
}

pub fn sphere_mask(dims: [usize; 3], spacing: f64, radius: f64) -> Result<MaskVolume> {
    let h = VolumeHeader::centered_at(dims, [spacing; 3], [0.0; 3], ElementKind::Uint8)?;
    let s = Ellipsoid::sphere([0.0; 3], radius);
    Ok(MaskVolume::from_fn(h, |p| s.contains(p)))
}

/// Analytic lung-ROI radiograph: two textured lung fields on a zero
/// background, centred coordinates in pixels.
pub fn lung_texture(x: f64, y: f64) -> f64 {
    let lung = |cx: f64, ax: f64, ay: f64| ((x - cx) / ax).powi(2) + (y / ay).powi(2) <= 1.0;
    if !(lung(-24.0, 17.0, 36.0) || lung(23.0, 15.0, 33.0)) {
        return 0.0;
    }
    1.0 + 0.4 * (x / 6.0).sin() * (y / 9.0).cos()
        + 0.8 * (-((x + 20.0).powi(2) + (y - 12.0).powi(2)) / 40.0).exp()
        + 0.01 * y
}

/// `size`×`size` rendering of [`lung_texture`] pushed forward through `t`:
/// pixel `p` holds `lung_texture(t⁻¹(p))`.
pub fn lung_roi_image(size: usize, t: &AffineTransform2D) -> Result<Image2D> {
    let inv = t.inverse()?;
    let c = 0.5 * (size as f64 - 1.0);
    let mut v = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let (x, y) = inv.apply(col as f64 - c, row as f64 - c);
            v[col + size * row] = lung_texture(x, y);
        }
    }
    Image2D::new(size, size, 1.0, v, ImageKind::Generic)
}

/// Settings for [`write_demo_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoOptions {
    /// Native (anisotropic) CT spacing.
    pub spacing: Vec3,
    pub target_spacing_mm: f64,
    pub detector: DetectorSpec,
    /// Geometry the pseudo X-ray is synthesised at; must be in the sweep.
    pub theta_h_deg: f64,
    pub theta_v_deg: f64,
    /// Integer pixel shift applied to the pseudo X-ray and its masks.
    pub xr_shift_px: (i32, i32),
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            spacing: [2.0, 2.0, 3.0],
            target_spacing_mm: 2.0,
            detector: DetectorSpec {
                width: 256,
                height: 256,
                pitch_mm: 1.6,
            },
            theta_h_deg: 0.0,
            theta_v_deg: 0.0,
            xr_shift_px: (4, -3),
        }
    }
}

/// Files written by [`write_demo_dataset`].
#[derive(Debug, Clone)]
pub struct DemoDataset {
    pub manifest: PathBuf,
    pub sweep: PathBuf,
    pub case_id: String,
    /// Pseudo X-ray geometry tag.
    pub true_tag: String,
    /// Lesion projected directly at the true geometry, in X-ray coordinates.
    pub lesion_xr: Mask2D,
    pub xr_lung: Mask2D,
}

/// Write a chest phantom case to `dir`: CT with lung and lesion masks, a
/// pseudo X-ray rendered at the options' geometry (then shifted by an
/// integer offset) with its lung mask and directly projected lesion (XMA),
/// two score-only cases, a JSON-lines manifest and the default 15-geometry
/// sweep adapted to the phantom's scale.
pub fn write_demo_dataset(dir: &Path, opts: &DemoOptions) -> Result<DemoDataset> {
    std::fs::create_dir_all(dir).map_err(|e| DrrError::io(dir, e))?;
    let p = chest_phantom(opts.spacing, 10)?;
    save_ct(&p.ct, dir.join("ct.mhd"))?;
    save_mask_volume(&p.lungs, dir.join("ct_lung.mhd"))?;
    save_mask_volume(&p.lesion, dir.join("ct_lesion.mhd"))?;

    let sweep = SweepConfig {
        detector: opts.detector,
        target_spacing_mm: opts.target_spacing_mm,
        ..SweepConfig::default()
    };
    let g = ProjectionGeometry {
        theta_h: opts.theta_h_deg,
        theta_v: opts.theta_v_deg,
        det_w: opts.detector.width,
        det_h: opts.detector.height,
        det_pitch: opts.detector.pitch_mm,
        ..ProjectionGeometry::default()
    };
    let mu = hu_to_mu(&resample_isotropic(&p.ct, opts.target_spacing_mm)?, &AttenuationContext::default())?;
    let lungs = resample_mask_isotropic(&p.lungs, opts.target_spacing_mm)?;
    let lesion = resample_mask_isotropic(&p.lesion, opts.target_spacing_mm)?;
    let shift = AffineTransform2D::translation(f64::from(opts.xr_shift_px.0), f64::from(opts.xr_shift_px.1));
    let (w, h) = (opts.detector.width, opts.detector.height);
    let xr = warp_image(&project_attenuation(&mu, &g)?, &shift, w, h)?;
    let xr_lung = warp_mask(&project_mask_binary(&lungs, &g)?, &shift, w, h)?;
    let lesion_xr = warp_mask(&project_mask_binary(&lesion, &g)?, &shift, w, h)?;
    save_image(&xr, dir.join("xr.f32"))?;
    save_mask(&xr_lung, dir.join("xr_lung.pgm"))?;
    save_mask(&lesion_xr, dir.join("xma.pgm"))?;

    let case_id = "phantom01".to_string();
    let lines = [
        serde_json::json!({
            "case_id": case_id,
            "label": "covid19",
            "patient_id": "P01",
            "xr_path": "xr.f32",
            "xr_time": "2020-04-02T09:30:00Z",
            "ct_path": "ct.mhd",
            "ct_time": "2020-04-01T14:00:00Z",
            "ct_lung_mask": "ct_lung.mhd",
            "ct_disease_mask": "ct_lesion.mhd",
            "xr_lung_mask": "xr_lung.pgm",
            "annotations": {"XMA": "xma.pgm"},
            "score": 0.91
        }),
        serde_json::json!({"case_id": "negative01", "label": "negative", "score": 0.12}),
        serde_json::json!({"case_id": "pneumonia01", "label": "pneumonia", "score": 0.47}),
    ];
    let mut text = lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n");
    text.push('\n');
    let manifest = dir.join("cases.jsonl");
    std::fs::write(&manifest, text).map_err(|e| DrrError::io(&manifest, e))?;
    let sweep_path = dir.join("sweep.json");
    let sweep_text = serde_json::to_string_pretty(&sweep).map_err(|e| DrrError::json("sweep", e))?;
    std::fs::write(&sweep_path, sweep_text).map_err(|e| DrrError::io(&sweep_path, e))?;
    Ok(DemoDataset {
        manifest,
        sweep: sweep_path,
        case_id,
        true_tag: g.tag(),
        lesion_xr,
        xr_lung,
    })
}
