//! JSON-lines case manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::metrics::{AnnotationKind, Label};

/// One manifest line. Relative paths are resolved against the manifest's
/// directory by [`load_manifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xr_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xr_time: Option<DateTime<FixedOffset>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct_time: Option<DateTime<FixedOffset>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct_lung_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct_disease_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xr_lung_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<AnnotationKind, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl CaseRecord {
    pub fn new(case_id: impl Into<String>, label: Label) -> Self {
        CaseRecord {
            case_id: case_id.into(),
            label,
            patient_id: None,
            xr_path: None,
            ct_path: None,
            xr_time: None,
            ct_time: None,
            ct_lung_mask: None,
            ct_disease_mask: None,
            xr_lung_mask: None,
            annotations: BTreeMap::new(),
            score: None,
        }
    }

    fn paths_mut(&mut self) -> Vec<(&'static str, &mut PathBuf)> {
        let mut out: Vec<(&'static str, &mut PathBuf)> = Vec::new();
        for (name, p) in [
            ("xr_path", &mut self.xr_path),
            ("ct_path", &mut self.ct_path),
            ("ct_lung_mask", &mut self.ct_lung_mask),
            ("ct_disease_mask", &mut self.ct_disease_mask),
            ("xr_lung_mask", &mut self.xr_lung_mask),
        ] {
            if let Some(p) = p.as_mut() {
                out.push((name, p));
            }
        }
        for p in self.annotations.values_mut() {
            out.push(("annotations", p));
        }
        out
    }

    fn resolve(&mut self, base: &Path) {
        for (_, p) in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Checks the id, the score and that every referenced file exists.
    pub fn validate(&mut self) -> std::result::Result<(), String> {
        if self.case_id.trim().is_empty() {
            return Err("case_id is empty".into());
        }
        if self.case_id.contains(['/', '\\']) || self.case_id == "." || self.case_id == ".." {
            return Err(format!("case_id `{}` is not a valid directory name", self.case_id));
        }
        if let Some(s) = self.score {
            if !s.is_finite() {
                return Err(format!("score {s} is not finite"));
            }
        }
        for (name, p) in self.paths_mut() {
            if !p.exists() {
                return Err(format!("{name} {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<CaseRecord>,
    pub errors: Vec<ManifestError>,
}

/// Parse and validate manifest text; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Manifest {
    let mut m = Manifest::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fail = |message: String| {
            m.errors.push(ManifestError {
                line: line_no,
                message,
            })
        };
        let mut rec: CaseRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        rec.resolve(base);
        if let Err(e) = rec.validate() {
            fail(e);
            continue;
        }
        if !seen.insert(rec.case_id.clone()) {
            fail(format!("duplicate case_id `{}`", rec.case_id));
            continue;
        }
        m.records.push(rec);
    }
    m
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DrrError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(parse_manifest(&text, &base))
}
