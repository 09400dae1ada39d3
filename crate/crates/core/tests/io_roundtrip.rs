use drr_core::io::{load_ct, load_image, load_mask, load_mask_volume, save_ct, save_image, save_mask, save_mask_volume};
use drr_core::raster::{Image2D, ImageKind, Mask2D};
use drr_core::volume::{ByteOrder, CtVolume, ElementKind, MaskVolume, ValueKind, VolumeHeader};
use drr_core::DrrError;
use proptest::prelude::*;

fn header(n: usize, kind: ElementKind, order: ByteOrder, spacing: [f64; 3], origin: [f64; 3]) -> VolumeHeader {
    VolumeHeader {
        byte_order: order,
        ..VolumeHeader::new([n; 3], spacing, origin, kind).unwrap()
    }
}

fn order(big: bool) -> ByteOrder {
    if big {
        ByteOrder::Big
    } else {
        ByteOrder::Little
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn int16_hounsfield_volume(
        values in proptest::collection::vec(-1024i16..=4000, 16 * 16 * 16),
        spacing in proptest::array::uniform3(0.1f64..5.0),
        origin in proptest::array::uniform3(-500.0f64..500.0),
        big in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.mhd");
        let h = header(16, ElementKind::Int16, order(big), spacing, origin);
        let v = CtVolume::new(h, values.iter().map(|&x| f64::from(x)).collect(), ValueKind::Hounsfield).unwrap();
        save_ct(&v, &path).unwrap();
        prop_assert_eq!(load_ct(&path).unwrap(), v);
    }

    #[test]
    fn float32_attenuation_volume(
        values in proptest::collection::vec(0.0f32..0.1, 8 * 8 * 8),
        big in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mu.mhd");
        let h = header(8, ElementKind::Float32, order(big), [0.7, 0.7, 0.7], [1.0, -2.0, 3.5]);
        let v = CtVolume::new(h, values.iter().map(|&x| f64::from(x)).collect(), ValueKind::AttenuationPerMm).unwrap();
        save_ct(&v, &path).unwrap();
        prop_assert_eq!(load_ct(&path).unwrap(), v);
    }

    #[test]
    fn mask_volume(values in proptest::collection::vec(0u8..=1, 6 * 6 * 6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mhd");
        let m = MaskVolume::new(header(6, ElementKind::Uint8, ByteOrder::Little, [1.0; 3], [0.0; 3]), values).unwrap();
        save_mask_volume(&m, &path).unwrap();
        prop_assert_eq!(load_mask_volume(&path).unwrap(), m);
    }

    #[test]
    fn float_raster(values in proptest::collection::vec(0.0f32..1e6, 64 * 64), pitch in 0.05f64..3.0) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        let img = Image2D::new(64, 64, pitch, values.iter().map(|&x| f64::from(x)).collect(), ImageKind::LineIntegral).unwrap();
        save_image(&img, &path).unwrap();
        prop_assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn binary_mask_raster(values in proptest::collection::vec(0u8..=1, 40 * 24)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let m = Mask2D::new(40, 24, 1.0, values).unwrap();
        save_mask(&m, &path).unwrap();
        let back = load_mask(&path).unwrap();
        prop_assert_eq!(back.values, m.values);
    }
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.mhd");
    let v = CtVolume::filled(header(4, ElementKind::Int16, ByteOrder::Little, [1.0; 3], [0.0; 3]), 0.0, ValueKind::Hounsfield).unwrap();
    save_ct(&v, &path).unwrap();
    let raw = path.with_extension("raw");
    let bytes = std::fs::read(&raw).unwrap();
    std::fs::write(&raw, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(load_ct(&path), Err(DrrError::SizeMismatch { .. })));
}

#[test]
fn out_of_range_hu_clamped_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.mhd");
    let h = header(2, ElementKind::Int16, ByteOrder::Little, [1.0; 3], [0.0; 3]);
    let v = CtVolume::filled(h, 0.0, ValueKind::Hounsfield).unwrap();
    save_ct(&v, &path).unwrap();
    let raw = path.with_extension("raw");
    let mut bytes = std::fs::read(&raw).unwrap();
    bytes[..2].copy_from_slice(&(-3000i16).to_le_bytes());
    bytes[2..4].copy_from_slice(&(5000i16).to_le_bytes());
    std::fs::write(&raw, &bytes).unwrap();
    let back = load_ct(&path).unwrap();
    assert_eq!(back.values[0], -1024.0);
    assert_eq!(back.values[1], 4000.0);
}

#[test]
fn mask_loaded_as_ct_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mhd");
    let m = MaskVolume::empty(header(3, ElementKind::Uint8, ByteOrder::Little, [1.0; 3], [0.0; 3]));
    save_mask_volume(&m, &path).unwrap();
    assert!(matches!(load_ct(&path), Err(DrrError::WrongValueKind { .. })));
}
