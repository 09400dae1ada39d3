//! File formats.
//!
//! - 3D volumes: MetaImage-style `<name>.mhd` text header (`Key = value` per
//!   line) next to a `<name>.raw` payload.
//! - 2D float rasters: `<name>.f32` little-endian float32 payload plus a
//!   `<name>.json` sidecar holding width, height, pitch and kind.
//! - 2D masks: binary PGM (`P5`, maxval 255, values 0/255) with an optional
//!   `<name>.json` sidecar carrying the pitch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::raster::{Gray8, Image2D, ImageKind, Mask2D};
use crate::volume::{ByteOrder, CtVolume, ElementKind, MaskVolume, ValueKind, VolumeHeader, HU_MAX, HU_MIN};

const REQUIRED_KEYS: [&str; 7] = [
    "NDims",
    "DimSize",
    "ElementSpacing",
    "Offset",
    "ElementType",
    "ElementDataFile",
    "BinaryDataByteOrderMSB",
];

/// Optional header key naming what the voxel values mean.
const VALUE_KIND_KEY: &str = "ValueKind";

/// A volume read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Ct(CtVolume),
    Mask(MaskVolume),
}

impl Volume {
    pub fn header(&self) -> &VolumeHeader {
        match self {
            Volume::Ct(v) => &v.header,
            Volume::Mask(m) => &m.header,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| DrrError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| DrrError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| DrrError::io(path, e))
}

fn parse_header_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut fields = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| DrrError::InvalidHeader {
            field: format!("line {}", n + 1),
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(fields)
}

fn field<'a>(fields: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    fields
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| DrrError::MissingField(key.to_string()))
}

fn parse_triple<T: std::str::FromStr>(fields: &BTreeMap<String, String>, key: &str) -> Result<[T; 3]> {
    let raw = field(fields, key)?;
    let parts: Vec<&str> = raw.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(DrrError::InvalidHeader {
            field: key.into(),
            reason: format!("expected 3 components, got `{raw}`"),
        });
    }
    let parse = |s: &str| {
        s.parse::<T>().map_err(|_| DrrError::InvalidHeader {
            field: key.into(),
            reason: format!("cannot parse `{s}`"),
        })
    };
    Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?])
}

fn parse_bool(fields: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match field(fields, key)?.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(DrrError::InvalidHeader {
            field: key.into(),
            reason: format!("expected True/False, got `{other}`"),
        }),
    }
}

fn check_orientation(fields: &BTreeMap<String, String>) -> Result<()> {
    for key in ["TransformMatrix", "Orientation", "Rotation"] {
        if let Some(raw) = fields.get(key) {
            let vals: Vec<f64> = raw.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
            let ok = vals.len() == 9 && vals.iter().zip(identity).all(|(v, i)| (v - i).abs() < 1e-6);
            if !ok {
                return Err(DrrError::NonAxisAligned(format!("{key} = {raw}")));
            }
        }
    }
    Ok(())
}

/// Parse a `.mhd` header into grid metadata, the payload path and the
/// optional value-kind tag.
pub fn read_volume_header(path: &Path) -> Result<(VolumeHeader, PathBuf, Option<String>)> {
    let text = fs::read_to_string(path).map_err(|e| DrrError::io(path, e))?;
    let fields = parse_header_text(&text)?;
    for key in REQUIRED_KEYS {
        field(&fields, key)?;
    }
    let ndims: usize = field(&fields, "NDims")?.parse().map_err(|_| DrrError::InvalidHeader {
        field: "NDims".into(),
        reason: "not an integer".into(),
    })?;
    if ndims != 3 {
        return Err(DrrError::InvalidHeader {
            field: "NDims".into(),
            reason: format!("expected 3, got {ndims}"),
        });
    }
    if let Some(c) = fields.get("CompressedData") {
        if c.eq_ignore_ascii_case("true") {
            return Err(DrrError::InvalidHeader {
                field: "CompressedData".into(),
                reason: "compressed payloads are not supported".into(),
            });
        }
    }
    check_orientation(&fields)?;

    let dims: [usize; 3] = parse_triple(&fields, "DimSize")?;
    let spacing: [f64; 3] = parse_triple(&fields, "ElementSpacing")?;
    let origin: [f64; 3] = parse_triple(&fields, "Offset")?;
    let element_kind = ElementKind::from_meta_name(field(&fields, "ElementType")?)?;
    let byte_order = if parse_bool(&fields, "BinaryDataByteOrderMSB")? {
        ByteOrder::Big
    } else {
        ByteOrder::Little
    };
    let data_file = field(&fields, "ElementDataFile")?;
    if data_file.eq_ignore_ascii_case("LOCAL") {
        return Err(DrrError::InvalidHeader {
            field: "ElementDataFile".into(),
            reason: "inline payloads are not supported".into(),
        });
    }
    let raw_path = path.parent().unwrap_or_else(|| Path::new("")).join(data_file);

    let header = VolumeHeader {
        dims,
        spacing,
        origin,
        element_kind,
        byte_order,
    };
    header.validate()?;
    Ok((header, raw_path, fields.get(VALUE_KIND_KEY).cloned()))
}

fn decode(bytes: &[u8], kind: ElementKind, order: ByteOrder) -> Vec<f64> {
    match kind {
        ElementKind::Uint8 => bytes.iter().map(|&b| b as f64).collect(),
        ElementKind::Int16 => bytes
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (match order {
                    ByteOrder::Little => i16::from_le_bytes(b),
                    ByteOrder::Big => i16::from_be_bytes(b),
                }) as f64
            })
            .collect(),
        ElementKind::Float32 => bytes
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                (match order {
                    ByteOrder::Little => f32::from_le_bytes(b),
                    ByteOrder::Big => f32::from_be_bytes(b),
                }) as f64
            })
            .collect(),
    }
}

fn encode(values: impl Iterator<Item = f64>, kind: ElementKind, order: ByteOrder, out: &mut Vec<u8>) {
    for v in values {
        match kind {
            ElementKind::Uint8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            ElementKind::Int16 => {
                let x = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                out.extend_from_slice(&match order {
                    ByteOrder::Little => x.to_le_bytes(),
                    ByteOrder::Big => x.to_be_bytes(),
                });
            }
            ElementKind::Float32 => {
                let x = v as f32;
                out.extend_from_slice(&match order {
                    ByteOrder::Little => x.to_le_bytes(),
                    ByteOrder::Big => x.to_be_bytes(),
                });
            }
        }
    }
}

/// Load a volume from a `.mhd` header and its raw payload.
///
/// `uint8` volumes load as masks unless the header tags them otherwise;
/// everything else loads as a CT volume in Hounsfield units (clamped to
/// [-1024, 4000]) unless tagged `ValueKind = attenuation_per_mm`.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (header, raw_path, value_kind) = read_volume_header(path)?;
    let bytes = read_file(&raw_path)?;
    if bytes.len() != header.payload_len() {
        return Err(DrrError::SizeMismatch {
            expected: header.payload_len(),
            actual: bytes.len(),
        });
    }
    let values = decode(&bytes, header.element_kind, header.byte_order);
    let kind = match value_kind.as_deref() {
        Some("mask") => None,
        Some("hounsfield") => Some(ValueKind::Hounsfield),
        Some("attenuation_per_mm") => Some(ValueKind::AttenuationPerMm),
        Some(other) => {
            return Err(DrrError::InvalidHeader {
                field: VALUE_KIND_KEY.into(),
                reason: format!("unknown value kind `{other}`"),
            })
        }
        None if header.element_kind == ElementKind::Uint8 => None,
        None => Some(ValueKind::Hounsfield),
    };
    match kind {
        None => {
            let values: Vec<u8> = values.into_iter().map(|v| v as u8).collect();
            Ok(Volume::Mask(MaskVolume::new(header, values)?))
        }
        Some(ValueKind::Hounsfield) => {
            let values = values.into_iter().map(|v| v.clamp(HU_MIN, HU_MAX)).collect();
            Ok(Volume::Ct(CtVolume::new(header, values, ValueKind::Hounsfield)?))
        }
        Some(ValueKind::AttenuationPerMm) => Ok(Volume::Ct(CtVolume::new(header, values, ValueKind::AttenuationPerMm)?)),
    }
}

pub fn load_ct(path: impl AsRef<Path>) -> Result<CtVolume> {
    match load_volume(path)? {
        Volume::Ct(v) => Ok(v),
        Volume::Mask(_) => Err(DrrError::WrongValueKind {
            expected: "CT",
            found: "mask",
        }),
    }
}

pub fn load_mask_volume(path: impl AsRef<Path>) -> Result<MaskVolume> {
    match load_volume(path)? {
        Volume::Mask(m) => Ok(m),
        Volume::Ct(_) => Err(DrrError::WrongValueKind {
            expected: "mask",
            found: "CT",
        }),
    }
}

fn raw_path_for(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

fn header_text(h: &VolumeHeader, data_file: &str, value_kind: &str) -> String {
    let triple = |t: [f64; 3]| format!("{} {} {}", t[0], t[1], t[2]);
    let mut s = String::new();
    s.push_str("ObjectType = Image\n");
    s.push_str("NDims = 3\n");
    s.push_str("BinaryData = True\n");
    s.push_str(&format!(
        "BinaryDataByteOrderMSB = {}\n",
        if h.byte_order == ByteOrder::Big { "True" } else { "False" }
    ));
    s.push_str("CompressedData = False\n");
    s.push_str("TransformMatrix = 1 0 0 0 1 0 0 0 1\n");
    s.push_str(&format!("Offset = {}\n", triple(h.origin)));
    s.push_str(&format!("ElementSpacing = {}\n", triple(h.spacing)));
    s.push_str(&format!("DimSize = {} {} {}\n", h.dims[0], h.dims[1], h.dims[2]));
    s.push_str(&format!("{VALUE_KIND_KEY} = {value_kind}\n"));
    s.push_str(&format!("ElementType = {}\n", h.element_kind.meta_name()));
    s.push_str(&format!("ElementDataFile = {data_file}\n"));
    s
}

fn write_volume(header: &VolumeHeader, payload: &[u8], value_kind: &str, path: &Path) -> Result<()> {
    let raw = raw_path_for(path);
    let data_file = raw
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| DrrError::Config(format!("bad output path {}", path.display())))?
        .to_string();
    write_file(&raw, payload)?;
    write_file(path, header_text(header, &data_file, value_kind).as_bytes())
}

/// Write a CT volume as `<path>` (header) plus `<path>.raw`, using the
/// header's element kind and byte order.
pub fn save_ct(v: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    v.header.validate()?;
    if v.values.len() != v.header.voxel_count() {
        return Err(DrrError::InvariantViolation("value count does not match dims".into()));
    }
    let mut payload = Vec::with_capacity(v.header.payload_len());
    encode(v.values.iter().copied(), v.header.element_kind, v.header.byte_order, &mut payload);
    write_volume(&v.header, &payload, v.value_kind.name(), path.as_ref())
}

/// Write a binary mask volume as uint8. Non-binary content is rejected
/// before anything is written.
pub fn save_mask_volume(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    m.header.validate()?;
    if let Some(&v) = m.values.iter().find(|&&v| v > 1) {
        return Err(DrrError::InvariantViolation(format!("mask value {v} is not binary")));
    }
    if m.values.len() != m.header.voxel_count() {
        return Err(DrrError::InvariantViolation("value count does not match dims".into()));
    }
    let header = VolumeHeader {
        element_kind: ElementKind::Uint8,
        ..m.header.clone()
    };
    write_volume(&header, &m.values, "mask", path.as_ref())
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    match v {
        Volume::Ct(ct) => save_ct(ct, path),
        Volume::Mask(m) => save_mask_volume(m, path),
    }
}

/// JSON sidecar for 2D rasters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub width: usize,
    pub height: usize,
    pub pitch_mm: f64,
    pub kind: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_sidecar(path: &Path, sc: &RasterSidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sc).map_err(|e| DrrError::json("sidecar", e))?;
    write_file(&sidecar_path(path), text.as_bytes())
}

fn read_sidecar(path: &Path) -> Result<Option<RasterSidecar>> {
    let sc = sidecar_path(path);
    if !sc.exists() {
        return Ok(None);
    }
    let bytes = read_file(&sc)?;
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|e| DrrError::json(sc.display().to_string(), e))
}

fn image_kind_from_name(name: &str) -> Result<ImageKind> {
    match name {
        "line_integral" => Ok(ImageKind::LineIntegral),
        "intensity_ratio" => Ok(ImageKind::IntensityRatio),
        "depth_mm" => Ok(ImageKind::DepthMm),
        "generic" => Ok(ImageKind::Generic),
        other => Err(DrrError::InvalidHeader {
            field: "kind".into(),
            reason: format!("unknown image kind `{other}`"),
        }),
    }
}

/// A 2D raster read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Raster2D {
    Image(Image2D),
    Mask(Mask2D),
}

/// Write a float raster as little-endian float32 with a JSON sidecar.
pub fn save_image(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(img.values.len() * 4);
    encode(img.values.iter().copied(), ElementKind::Float32, ByteOrder::Little, &mut payload);
    write_file(path, &payload)?;
    write_sidecar(
        path,
        &RasterSidecar {
            width: img.width,
            height: img.height,
            pitch_mm: img.pitch,
            kind: img.kind.name().into(),
        },
    )
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let sc = read_sidecar(path)?.ok_or_else(|| DrrError::MissingField(format!("sidecar {}", sidecar_path(path).display())))?;
    let bytes = read_file(path)?;
    let expected = sc.width * sc.height * 4;
    if bytes.len() != expected {
        return Err(DrrError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let values = decode(&bytes, ElementKind::Float32, ByteOrder::Little);
    Image2D::new(sc.width, sc.height, sc.pitch_mm, values, image_kind_from_name(&sc.kind)?)
}

/// Write an 8-bit raster as binary PGM.
pub fn save_pgm(img: &Gray8, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.values);
    write_file(path.as_ref(), &bytes)
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Gray8> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let bad = |reason: &str| DrrError::InvalidHeader {
        field: "PGM".into(),
        reason: reason.into(),
    };
    let mut pos = 0;
    if pgm_token(&bytes, &mut pos).as_deref() != Some("P5") {
        return Err(bad("expected P5 magic"));
    }
    let mut num = || -> Result<usize> {
        pgm_token(&bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad header number"))
    };
    let width = num()?;
    let height = num()?;
    let maxval = num()?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != width * height {
        return Err(DrrError::SizeMismatch {
            expected: width * height,
            actual: payload.len(),
        });
    }
    Ok(Gray8 {
        width,
        height,
        values: payload.to_vec(),
    })
}

/// Write a mask as PGM (0/255) with a pitch sidecar.
pub fn save_mask(mask: &Mask2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(&v) = mask.values.iter().find(|&&v| v > 1) {
        return Err(DrrError::InvariantViolation(format!("mask value {v} is not binary")));
    }
    save_pgm(&Gray8::from_mask(mask), path)?;
    write_sidecar(
        path,
        &RasterSidecar {
            width: mask.width,
            height: mask.height,
            pitch_mm: mask.pitch,
            kind: "mask".into(),
        },
    )
}

/// Load a binary PGM mask. Grey levels other than 0 and 255 are rejected.
/// Without a sidecar the pitch defaults to 1 mm.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask2D> {
    let path = path.as_ref();
    let gray = load_pgm(path)?;
    if let Some(&v) = gray.values.iter().find(|&&v| v != 0 && v != 255) {
        return Err(DrrError::NonBinaryMask(v));
    }
    let pitch = match read_sidecar(path)? {
        Some(sc) => {
            if sc.width != gray.width || sc.height != gray.height {
                return Err(DrrError::DimensionMismatch(format!(
                    "sidecar says {}x{}, PGM is {}x{}",
                    sc.width, sc.height, gray.width, gray.height
                )));
            }
            sc.pitch_mm
        }
        None => 1.0,
    };
    let values = gray.values.iter().map(|&v| u8::from(v == 255)).collect();
    Mask2D::new(gray.width, gray.height, pitch, values)
}

/// Load a greyscale PGM as a generic float raster (pitch from the sidecar,
/// else 1 mm).
pub fn load_gray_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let gray = load_pgm(path)?;
    let pitch = read_sidecar(path)?.map_or(1.0, |sc| sc.pitch_mm);
    let values = gray.values.iter().map(|&v| f64::from(v)).collect();
    Image2D::new(gray.width, gray.height, pitch, values, ImageKind::Generic)
}

/// Load an X-ray style image: `.pgm` as greyscale, anything else as float32.
pub fn load_radiograph(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_gray_image(path),
        _ => load_image(path),
    }
}

/// Load a raster by extension: `.pgm` as a mask, anything else as float32.
pub fn load_image2d(path: impl AsRef<Path>) -> Result<Raster2D> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_mask(path).map(Raster2D::Mask),
        _ => load_image(path).map(Raster2D::Image),
    }
}

pub fn save_image2d(r: &Raster2D, path: impl AsRef<Path>) -> Result<()> {
    match r {
        Raster2D::Image(img) => save_image(img, path),
        Raster2D::Mask(m) => save_mask(m, path),
    }
}
