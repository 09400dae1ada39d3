//! Axis-aligned 3D grids: CT intensities/attenuation and binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};

/// Lower bound of the Hounsfield clamp applied at load time.
pub const HU_MIN: f64 = -1024.0;
/// Upper bound of the Hounsfield clamp applied at load time.
pub const HU_MAX: f64 = 4000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Int16,
    Float32,
    Uint8,
}

impl ElementKind {
    pub fn size(self) -> usize {
        match self {
            ElementKind::Int16 => 2,
            ElementKind::Float32 => 4,
            ElementKind::Uint8 => 1,
        }
    }

    pub fn meta_name(self) -> &'static str {
        match self {
            ElementKind::Int16 => "MET_SHORT",
            ElementKind::Float32 => "MET_FLOAT",
            ElementKind::Uint8 => "MET_UCHAR",
        }
    }

    pub fn from_meta_name(name: &str) -> Result<Self> {
        match name {
            "MET_SHORT" => Ok(ElementKind::Int16),
            "MET_FLOAT" => Ok(ElementKind::Float32),
            "MET_UCHAR" => Ok(ElementKind::Uint8),
            other => Err(DrrError::UnsupportedElementKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Hounsfield,
    AttenuationPerMm,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Hounsfield => "hounsfield",
            ValueKind::AttenuationPerMm => "attenuation_per_mm",
        }
    }
}

/// Grid metadata shared by CT and mask volumes.
///
/// `origin` is the world position (mm) of the centre of voxel (0, 0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub element_kind: ElementKind,
    pub byte_order: ByteOrder,
}

impl VolumeHeader {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], element_kind: ElementKind) -> Result<Self> {
        let h = VolumeHeader {
            dims,
            spacing,
            origin,
            element_kind,
            byte_order: ByteOrder::Little,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(DrrError::InvariantViolation(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(DrrError::InvariantViolation(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(DrrError::InvariantViolation("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.voxel_count() * self.element_kind.size()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// World position of a voxel centre.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Lower and upper corners of the voxel grid's bounding box (mm).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin[a] - 0.5 * self.spacing[a];
            hi[a] = self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a];
        }
        (lo, hi)
    }

    pub fn center(&self) -> [f64; 3] {
        let (lo, hi) = self.bounds();
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])]
    }

    /// Physical extent per axis (mm).
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn is_isotropic(&self) -> bool {
        let s = self.spacing[0];
        self.spacing.iter().all(|&v| (v - s).abs() <= 1e-9 * s)
    }

    /// Header with the same grid but a volume centred on `center`.
    pub fn centered_at(dims: [usize; 3], spacing: [f64; 3], center: [f64; 3], element_kind: ElementKind) -> Result<Self> {
        let mut origin = [0.0; 3];
        for a in 0..3 {
            origin[a] = center[a] - 0.5 * (dims[a] as f64 - 1.0) * spacing[a];
        }
        VolumeHeader::new(dims, spacing, origin, element_kind)
    }

    pub fn same_grid(&self, other: &VolumeHeader) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }
}

/// CT volume holding either Hounsfield units or linear attenuation (mm⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub header: VolumeHeader,
    pub values: Vec<f64>,
    pub value_kind: ValueKind,
}

impl CtVolume {
    pub fn new(header: VolumeHeader, values: Vec<f64>, value_kind: ValueKind) -> Result<Self> {
        header.validate()?;
        if values.len() != header.voxel_count() {
            return Err(DrrError::SizeMismatch {
                expected: header.voxel_count(),
                actual: values.len(),
            });
        }
        let v = CtVolume {
            header,
            values,
            value_kind,
        };
        v.check_values()?;
        Ok(v)
    }

    /// Volume filled with a single value.
    pub fn filled(header: VolumeHeader, value: f64, value_kind: ValueKind) -> Result<Self> {
        let n = header.voxel_count();
        CtVolume::new(header, vec![value; n], value_kind)
    }

    fn check_values(&self) -> Result<()> {
        match self.value_kind {
            ValueKind::Hounsfield => {
                if let Some(v) = self.values.iter().find(|v| !(HU_MIN..=HU_MAX).contains(*v)) {
                    return Err(DrrError::InvariantViolation(format!(
                        "HU value {v} outside [{HU_MIN}, {HU_MAX}]"
                    )));
                }
            }
            ValueKind::AttenuationPerMm => {
                if let Some(v) = self.values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(DrrError::InvariantViolation(format!("attenuation value {v} is negative")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.header.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Binary volume (values 0/1) on a CT-style grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    pub header: VolumeHeader,
    pub values: Vec<u8>,
}

impl MaskVolume {
    pub fn new(header: VolumeHeader, values: Vec<u8>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.voxel_count() {
            return Err(DrrError::SizeMismatch {
                expected: header.voxel_count(),
                actual: values.len(),
            });
        }
        if let Some(&v) = values.iter().find(|&&v| v > 1) {
            return Err(DrrError::NonBinaryMask(v));
        }
        Ok(MaskVolume { header, values })
    }

    pub fn empty(header: VolumeHeader) -> Self {
        let n = header.voxel_count();
        MaskVolume {
            header,
            values: vec![0; n],
        }
    }

    /// Mask of voxels whose centre satisfies `inside`.
    pub fn from_fn(header: VolumeHeader, inside: impl Fn([f64; 3]) -> bool) -> Self {
        let [nx, ny, nz] = header.dims;
        let mut values = vec![0u8; header.voxel_count()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if inside(header.voxel_center(x, y, z)) {
                        values[header.index(x, y, z)] = 1;
                    }
                }
            }
        }
        MaskVolume { header, values }
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Physical volume of the set voxels (mm³).
    pub fn volume_mm3(&self) -> f64 {
        let s = self.header.spacing;
        self.count() as f64 * s[0] * s[1] * s[2]
    }

    pub fn check_companion(&self, ct: &CtVolume) -> Result<()> {
        if self.header.dims != ct.header.dims {
            return Err(DrrError::DimensionMismatch(format!(
                "mask dims {:?} vs CT dims {:?}",
                self.header.dims, ct.header.dims
            )));
        }
        Ok(())
    }
}
