//! SXR generation, transfer, and the manual-edit round trip.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::geometry::ProjectionGeometry;
use crate::io::{self, load_ct, load_image, load_mask, load_mask_volume, load_radiograph, save_image, save_mask, save_pgm};
use crate::metrics::{dice, AnnotationKind};
use crate::prep::{detect_truncation, hu_to_mu, resample_isotropic, resample_mask_isotropic, TruncationReport};
use crate::projector::{depth_floor, project_attenuation_with, project_mask_depth_with, render_preview, ProjectOptions};
use crate::raster::{Image2D, ImageKind, Mask2D};
use crate::registration::{
    apply_roi, argmax, candidate_scores, register, resample_image_to_pitch, resample_mask_to_pitch, warp_mask,
    AffineTransform2D, Candidate, RegistrationResult, SelectionCriterion,
};
use crate::volume::{CtVolume, MaskVolume, ValueKind};

use super::config::SweepConfig;
use super::hash::StageKey;
use super::manifest::CaseRecord;

pub const SXR_FILE: &str = "sxr.f32";
pub const LUNG_FILE: &str = "lung.pgm";
pub const DISEASE_FILE: &str = "disease.pgm";
pub const DEPTH_FILE: &str = "depth.f32";
pub const STAGE_FILE: &str = "stage.json";
pub const TMA_FILE: &str = "tma.pgm";
pub const SELECTION_FILE: &str = "selection.json";
pub const PREVIEW_FILE: &str = "xr_preview.pgm";
pub const TMA_EDIT_FILE: &str = "tma_edit.pgm";
pub const PMA_FILE: &str = "pma.pgm";

pub fn sxr_dir(out: &Path, case_id: &str) -> PathBuf {
    out.join(case_id).join("sxr")
}

pub fn transfer_dir(out: &Path, case_id: &str) -> PathBuf {
    out.join(case_id).join("transfer")
}

pub fn edit_dir(out: &Path, case_id: &str) -> PathBuf {
    out.join(case_id).join("edit")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| DrrError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| DrrError::json(path.display().to_string(), e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DrrError::json(path.display().to_string(), e))?;
    text.push('\n');
    io::write_file(path, text.as_bytes())
}

/// Metadata written next to each SXR bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SxrStageRecord {
    pub key: String,
    pub tag: String,
    pub geometry: ProjectionGeometry,
    pub truncation: TruncationReport,
    pub files: Vec<String>,
}

/// One projected candidate, as read back from disk.
#[derive(Debug, Clone)]
pub struct SxrBundle {
    pub tag: String,
    pub geometry: ProjectionGeometry,
    pub dir: PathBuf,
    pub key: String,
    pub sxr: Image2D,
    pub lung: Option<Mask2D>,
    pub disease: Option<Mask2D>,
    pub depth: Option<Image2D>,
    pub truncation: TruncationReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryFailure {
    pub tag: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SxrStageOutput {
    pub bundles: Vec<SxrBundle>,
    pub failures: Vec<GeometryFailure>,
    pub truncation: Option<TruncationReport>,
    pub recomputed: usize,
    pub reused: usize,
}

fn sxr_base_key(case: &CaseRecord, sweep: &SweepConfig) -> Result<StageKey> {
    let ct = case
        .ct_path
        .as_ref()
        .ok_or_else(|| DrrError::Config(format!("case {} has no CT", case.case_id)))?;
    let mut k = StageKey::new("sxr");
    k.volume(ct)?;
    for m in [&case.ct_lung_mask, &case.ct_disease_mask] {
        k.optional(m.is_some());
        if let Some(p) = m {
            k.volume(p)?;
        }
    }
    k.json(&(
        sweep.target_spacing_mm,
        sweep.mu_water,
        sweep.truncation_threshold,
        sweep.supersample,
    ))?;
    Ok(k)
}

fn geometry_key(case: &CaseRecord, sweep: &SweepConfig, g: &ProjectionGeometry) -> Result<String> {
    let mut k = sxr_base_key(case, sweep)?;
    k.json(g)?;
    Ok(k.finish())
}

fn bundle_files(case: &CaseRecord) -> Vec<String> {
    let mut files = vec![SXR_FILE.to_string()];
    if case.ct_lung_mask.is_some() {
        files.push(LUNG_FILE.into());
    }
    if case.ct_disease_mask.is_some() {
        files.push(DISEASE_FILE.into());
        files.push(DEPTH_FILE.into());
    }
    files
}

fn stage_is_valid(dir: &Path, key: &str) -> bool {
    let Ok(rec) = read_json::<SxrStageRecord>(&dir.join(STAGE_FILE)) else {
        return false;
    };
    rec.key == key && rec.files.iter().all(|f| dir.join(f).exists() && io::sidecar_path(&dir.join(f)).exists())
}

fn load_bundle(dir: &Path) -> Result<SxrBundle> {
    let rec: SxrStageRecord = read_json(&dir.join(STAGE_FILE))?;
    let has = |f: &str| rec.files.iter().any(|x| x == f);
    Ok(SxrBundle {
        sxr: load_image(dir.join(SXR_FILE))?,
        lung: has(LUNG_FILE).then(|| load_mask(dir.join(LUNG_FILE))).transpose()?,
        disease: has(DISEASE_FILE).then(|| load_mask(dir.join(DISEASE_FILE))).transpose()?,
        depth: has(DEPTH_FILE).then(|| load_image(dir.join(DEPTH_FILE))).transpose()?,
        tag: rec.tag,
        geometry: rec.geometry,
        dir: dir.to_path_buf(),
        key: rec.key,
        truncation: rec.truncation,
    })
}

/// CT and masks on the isotropic working grid, in attenuation units.
struct PreparedCt {
    mu: CtVolume,
    lung: Option<MaskVolume>,
    disease: Option<MaskVolume>,
    truncation: TruncationReport,
}

fn prepare_ct(case: &CaseRecord, sweep: &SweepConfig) -> Result<PreparedCt> {
    let ct = load_ct(case.ct_path.as_ref().expect("checked by caller"))?;
    let load_companion = |p: &Option<PathBuf>| -> Result<Option<MaskVolume>> {
        match p {
            None => Ok(None),
            Some(p) => {
                let m = load_mask_volume(p)?;
                m.check_companion(&ct)?;
                Ok(Some(resample_mask_isotropic(&m, sweep.target_spacing_mm)?))
            }
        }
    };
    let lung = load_companion(&case.ct_lung_mask)?;
    let disease = load_companion(&case.ct_disease_mask)?;
    let ctx = sweep.attenuation()?;
    let mu = match ct.value_kind {
        ValueKind::Hounsfield => hu_to_mu(&resample_isotropic(&ct, sweep.target_spacing_mm)?, &ctx)?,
        ValueKind::AttenuationPerMm => resample_isotropic(&ct, sweep.target_spacing_mm)?,
    };
    let truncation = detect_truncation(&mu, sweep.truncation_threshold);
    if truncation.truncated {
        log::warn!(
            "case {}: anatomy touches the lateral field of view ({:?})",
            case.case_id,
            truncation.fractions()
        );
    }
    Ok(PreparedCt {
        mu,
        lung,
        disease,
        truncation,
    })
}

fn project_bundle(
    prep: &PreparedCt,
    case: &CaseRecord,
    g: &ProjectionGeometry,
    key: &str,
    dir: &Path,
    sweep: &SweepConfig,
) -> Result<()> {
    let opts = ProjectOptions {
        supersample: sweep.supersample,
    };
    let sxr = project_attenuation_with(&prep.mu, g, opts)?;
    save_image(&sxr, dir.join(SXR_FILE))?;
    if let Some(lung) = &prep.lung {
        let depth = project_mask_depth_with(lung, g, opts)?;
        save_mask(&Mask2D::from_threshold(&depth, depth_floor(lung)), dir.join(LUNG_FILE))?;
    }
    if let Some(disease) = &prep.disease {
        let depth = project_mask_depth_with(disease, g, opts)?;
        save_mask(&Mask2D::from_threshold(&depth, depth_floor(disease)), dir.join(DISEASE_FILE))?;
        save_image(&depth, dir.join(DEPTH_FILE))?;
    }
    write_json(
        &dir.join(STAGE_FILE),
        &SxrStageRecord {
            key: key.to_string(),
            tag: g.tag(),
            geometry: g.clone(),
            truncation: prep.truncation,
            files: bundle_files(case),
        },
    )
}

/// Project the case's CT (and masks) at every sweep geometry into
/// `out/<case_id>/sxr/<tag>/`.
///
/// With `resume`, bundles whose stored key matches the current inputs are
/// reused. Bundles are always returned as read back from disk so a resumed
/// run sees exactly the values a fresh one does.
pub fn run_sxr_stage(case: &CaseRecord, sweep: &SweepConfig, out: &Path, resume: bool) -> Result<SxrStageOutput> {
    if case.ct_path.is_none() {
        return Err(DrrError::Config(format!("case {} has no CT", case.case_id)));
    }
    let geometries = sweep.geometries()?;
    let root = sxr_dir(out, &case.case_id);
    let keys: Vec<String> = geometries
        .iter()
        .map(|g| geometry_key(case, sweep, g))
        .collect::<Result<_>>()?;
    let pending: Vec<usize> = (0..geometries.len())
        .filter(|&i| !(resume && stage_is_valid(&root.join(geometries[i].tag()), &keys[i])))
        .collect();

    let mut failures = Vec::new();
    let mut truncation = None;
    if !pending.is_empty() {
        let prep = prepare_ct(case, sweep)?;
        truncation = Some(prep.truncation);
        let results: Vec<(usize, Result<()>)> = pending
            .par_iter()
            .map(|&i| {
                let g = &geometries[i];
                (i, project_bundle(&prep, case, g, &keys[i], &root.join(g.tag()), sweep))
            })
            .collect();
        for (i, r) in results {
            if let Err(e) = r {
                log::warn!("case {}: geometry {} failed: {e}", case.case_id, geometries[i].tag());
                failures.push(GeometryFailure {
                    tag: geometries[i].tag(),
                    error: e.to_string(),
                });
            }
        }
    }

    let mut bundles = Vec::new();
    for g in &geometries {
        let tag = g.tag();
        if failures.iter().any(|f| f.tag == tag) {
            continue;
        }
        match load_bundle(&root.join(&tag)) {
            Ok(b) => bundles.push(b),
            Err(e) => failures.push(GeometryFailure {
                tag,
                error: e.to_string(),
            }),
        }
    }
    let truncation = truncation.or_else(|| bundles.first().map(|b| b.truncation));
    Ok(SxrStageOutput {
        recomputed: pending.len(),
        reused: geometries.len() - pending.len(),
        bundles,
        failures,
        truncation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub tag: String,
    pub mi_final: f64,
    pub lung_dice: f64,
    pub iterations: usize,
    pub converged: bool,
    pub transform: AffineTransform2D,
}

/// Outcome of the transfer stage, written as `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub key: String,
    pub criterion: SelectionCriterion,
    pub chosen_tag: String,
    pub geometry: ProjectionGeometry,
    pub mi_final: f64,
    pub lung_dice: f64,
    pub transform: AffineTransform2D,
    /// Winners under each criterion, for comparison.
    pub best_by_mi: String,
    pub best_by_lung_overlap: String,
    pub candidates: Vec<CandidateRecord>,
    pub failures: Vec<GeometryFailure>,
    /// Transferred masks are guidance for manual refinement, not ground truth.
    pub quality: String,
}

#[derive(Debug, Clone)]
pub struct TransferOutput {
    pub selection: SelectionRecord,
    pub tma: Mask2D,
    pub tma_path: PathBuf,
    pub recomputed: bool,
}

pub(crate) fn load_xr_pair(case: &CaseRecord) -> Result<(Image2D, Mask2D)> {
    let xr_path = case
        .xr_path
        .as_ref()
        .ok_or_else(|| DrrError::Config(format!("case {} has no X-ray", case.case_id)))?;
    let lung_path = case
        .xr_lung_mask
        .as_ref()
        .ok_or_else(|| DrrError::Config(format!("case {} has no X-ray lung mask", case.case_id)))?;
    let xr = load_radiograph(xr_path)?;
    let xr = Image2D {
        kind: ImageKind::Generic,
        ..xr
    };
    let lung = load_mask(lung_path)?;
    if !lung.same_shape(xr.width, xr.height) {
        return Err(DrrError::DimensionMismatch(format!(
            "X-ray is {}x{}, lung mask {}x{}",
            xr.width, xr.height, lung.width, lung.height
        )));
    }
    let lung = Mask2D { pitch: xr.pitch, ..lung };
    Ok((xr, lung))
}

fn transfer_key(case: &CaseRecord, bundles: &[SxrBundle], sweep: &SweepConfig, criterion: SelectionCriterion) -> Result<String> {
    let mut k = StageKey::new("transfer");
    k.raster(case.xr_path.as_ref().expect("checked"))?;
    k.raster(case.xr_lung_mask.as_ref().expect("checked"))?;
    for b in bundles {
        k.text(&b.key);
    }
    k.json(&sweep.registration)?;
    k.text(criterion.name());
    Ok(k.finish())
}

struct Registered {
    index: usize,
    lung: Mask2D,
    disease: Mask2D,
    result: RegistrationResult,
}

fn register_bundle(b: &SxrBundle, xr_roi: &Image2D, sweep: &SweepConfig) -> Result<(Mask2D, Mask2D, RegistrationResult)> {
    let lung = b
        .lung
        .as_ref()
        .ok_or_else(|| DrrError::Config("bundle has no projected lung mask".into()))?;
    let disease = b
        .disease
        .as_ref()
        .ok_or_else(|| DrrError::Config("bundle has no projected disease mask".into()))?;
    let pitch = xr_roi.pitch;
    let sxr = resample_image_to_pitch(&b.sxr, pitch)?;
    let lung = resample_mask_to_pitch(lung, pitch)?;
    let disease = resample_mask_to_pitch(disease, pitch)?;
    let moving = apply_roi(&sxr, &lung)?;
    let result = register(&moving, xr_roi, &sweep.registration)?;
    Ok((lung, disease, result))
}

/// Register every bundle's ROI SXR onto the case's ROI X-ray, pick the best
/// candidate under `criterion` and warp its disease mask into X-ray
/// coordinates (`out/<case_id>/transfer/tma.pgm`).
pub fn run_transfer_stage(
    case: &CaseRecord,
    bundles: &[SxrBundle],
    sweep: &SweepConfig,
    criterion: SelectionCriterion,
    out: &Path,
    resume: bool,
) -> Result<TransferOutput> {
    if bundles.is_empty() {
        return Err(DrrError::NoCandidateSucceeded("no SXR bundles".into()));
    }
    let (xr, xr_lung) = load_xr_pair(case)?;
    if xr_lung.is_empty() {
        return Err(DrrError::NoCandidateSucceeded("X-ray lung mask is empty".into()));
    }
    let dir = transfer_dir(out, &case.case_id);
    let key = transfer_key(case, bundles, sweep, criterion)?;
    let tma_path = dir.join(TMA_FILE);
    if resume {
        if let Ok(sel) = read_json::<SelectionRecord>(&dir.join(SELECTION_FILE)) {
            if sel.key == key {
                if let Ok(tma) = load_mask(&tma_path) {
                    return Ok(TransferOutput {
                        selection: sel,
                        tma,
                        tma_path,
                        recomputed: false,
                    });
                }
            }
        }
    }

    let xr_roi = apply_roi(&xr, &xr_lung)?;
    let outcomes: Vec<Result<(Mask2D, Mask2D, RegistrationResult)>> =
        bundles.par_iter().map(|b| register_bundle(b, &xr_roi, sweep)).collect();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (index, (b, r)) in bundles.iter().zip(outcomes).enumerate() {
        match r {
            Ok((lung, disease, result)) => done.push(Registered {
                index,
                lung,
                disease,
                result,
            }),
            Err(e) => {
                log::warn!("case {}: candidate {} failed: {e}", case.case_id, b.tag);
                failures.push(GeometryFailure {
                    tag: b.tag.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if done.is_empty() {
        let detail = failures.iter().map(|f| format!("{}: {}", f.tag, f.error)).collect::<Vec<_>>().join("; ");
        return Err(DrrError::NoCandidateSucceeded(detail));
    }
    let candidates: Vec<Candidate> = done
        .iter()
        .map(|d| Candidate {
            lung: &d.lung,
            result: &d.result,
        })
        .collect();
    let mi = candidate_scores(&candidates, &xr_lung, SelectionCriterion::MaxMi)?;
    let overlap = candidate_scores(&candidates, &xr_lung, SelectionCriterion::MaxLungOverlap)?;
    let pick = match criterion {
        SelectionCriterion::MaxMi => argmax(&mi),
        SelectionCriterion::MaxLungOverlap => argmax(&overlap),
    };
    let chosen = &done[pick];
    let tma = warp_mask(&chosen.disease, &chosen.result.transform, xr.width, xr.height)?;
    let tma = Mask2D { pitch: xr.pitch, ..tma };
    let tag_of = |i: usize| bundles[done[i].index].tag.clone();
    let selection = SelectionRecord {
        key,
        criterion,
        chosen_tag: tag_of(pick),
        geometry: bundles[chosen.index].geometry.clone(),
        mi_final: chosen.result.mi_final,
        lung_dice: overlap[pick],
        transform: chosen.result.transform,
        best_by_mi: tag_of(argmax(&mi)),
        best_by_lung_overlap: tag_of(argmax(&overlap)),
        candidates: done
            .iter()
            .enumerate()
            .map(|(i, d)| CandidateRecord {
                tag: tag_of(i),
                mi_final: d.result.mi_final,
                lung_dice: overlap[i],
                iterations: d.result.iterations,
                converged: d.result.converged,
                transform: d.result.transform,
            })
            .collect(),
        failures,
        quality: "directional_guidance".into(),
    };
    save_mask(&tma, &tma_path)?;
    write_json(&dir.join(SELECTION_FILE), &selection)?;
    Ok(TransferOutput {
        selection,
        tma,
        tma_path,
        recomputed: true,
    })
}

#[derive(Debug, Clone)]
pub struct EditingBundle {
    pub preview: PathBuf,
    pub tma: PathBuf,
}

/// Write an X-ray preview and an editable copy of the TMA to
/// `out/<case_id>/edit/`.
pub fn export_for_editing(case: &CaseRecord, out: &Path) -> Result<EditingBundle> {
    let tma_path = transfer_dir(out, &case.case_id).join(TMA_FILE);
    let tma = load_mask(&tma_path)?;
    let xr_path = case
        .xr_path
        .as_ref()
        .ok_or_else(|| DrrError::Config(format!("case {} has no X-ray", case.case_id)))?;
    let xr = load_radiograph(xr_path)?;
    let dir = edit_dir(out, &case.case_id);
    let preview = dir.join(PREVIEW_FILE);
    let edit = dir.join(TMA_EDIT_FILE);
    let gray = match render_preview(&xr, None) {
        Ok(g) => g,
        Err(DrrError::EmptyWindow { .. }) => render_preview(&xr, Some((xr.min(), xr.min() + 1.0)))?,
        Err(e) => return Err(e),
    };
    save_pgm(&gray, &preview)?;
    save_mask(&tma, &edit)?;
    Ok(EditingBundle { preview, tma: edit })
}

/// Validate an edited mask against the case's X-ray and register it as the
/// case's PMA (copied to `out/<case_id>/edit/pma.pgm`).
pub fn import_pma(case: &CaseRecord, edited: &Path, out: &Path) -> Result<CaseRecord> {
    let xr_path = case
        .xr_path
        .as_ref()
        .ok_or_else(|| DrrError::Config(format!("case {} has no X-ray", case.case_id)))?;
    let xr = load_radiograph(xr_path)?;
    let m = load_mask(edited)?;
    if !m.same_shape(xr.width, xr.height) {
        return Err(DrrError::DimensionMismatch(format!(
            "edited mask is {}x{}, X-ray is {}x{}",
            m.width, m.height, xr.width, xr.height
        )));
    }
    let m = Mask2D { pitch: xr.pitch, ..m };
    let dest = edit_dir(out, &case.case_id).join(PMA_FILE);
    save_mask(&m, &dest)?;
    let mut rec = case.clone();
    rec.annotations.insert(AnnotationKind::PMA, dest);
    Ok(rec)
}

/// Dice between the stored TMA and PMA of a case.
pub fn tma_pma_dice(out: &Path, rec: &CaseRecord) -> Result<f64> {
    let tma = load_mask(transfer_dir(out, &rec.case_id).join(TMA_FILE))?;
    let pma_path = rec
        .annotations
        .get(&AnnotationKind::PMA)
        .ok_or_else(|| DrrError::Config(format!("case {} has no PMA", rec.case_id)))?;
    let pma = load_mask(pma_path)?;
    Ok(dice(&tma, &pma)?.dice)
}
