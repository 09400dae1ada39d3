//! Content-hash keys for resumable stages.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{DrrError, Result};
use crate::io::{read_volume_header, sidecar_path};

/// Bumped whenever a stage's output format or algorithm changes.
pub const STAGE_VERSION: &str = "1";

pub struct StageKey(Sha256);

impl StageKey {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"drr-stage\0");
        h.update(STAGE_VERSION.as_bytes());
        h.update([0]);
        h.update(stage.as_bytes());
        h.update([0]);
        StageKey(h)
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> Result<&mut Self> {
        let s = serde_json::to_string(value).map_err(|e| DrrError::json("stage key", e))?;
        Ok(self.text(&s))
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let b = fs::read(path).map_err(|e| DrrError::io(path, e))?;
        Ok(self.bytes(&b))
    }

    /// A volume header plus its payload file.
    pub fn volume(&mut self, path: &Path) -> Result<&mut Self> {
        let (_, data, _) = read_volume_header(path)?;
        self.file(path)?;
        self.file(&data)
    }

    /// A 2D raster plus its JSON sidecar when present.
    pub fn raster(&mut self, path: &Path) -> Result<&mut Self> {
        self.file(path)?;
        let sc = sidecar_path(path);
        if sc.exists() {
            self.file(&sc)?;
        } else {
            self.text("no-sidecar");
        }
        Ok(self)
    }

    pub fn optional(&mut self, present: bool) -> &mut Self {
        self.bytes(&[u8::from(present)])
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_content_and_framing() {
        let k = |parts: &[&str]| {
            let mut s = StageKey::new("t");
            for p in parts {
                s.text(p);
            }
            s.finish()
        };
        assert_eq!(k(&["a", "b"]), k(&["a", "b"]));
        assert_ne!(k(&["ab"]), k(&["a", "b"]));
        assert_ne!(k(&["a"]), k(&["b"]));
    }
}
