//! Inverse-mapped resampling of rasters under a 2D affine map.

use crate::error::{DrrError, Result};
use crate::raster::{Image2D, ImageKind, Mask2D};

use super::affine::AffineTransform2D;

#[inline]
pub(crate) fn center(width: usize, height: usize) -> (f64, f64) {
    (0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0))
}

/// Bilinear sample with zero outside the raster.
#[inline]
pub(crate) fn bilinear(values: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let get = |c: i64, r: i64| -> f64 {
        if c < 0 || r < 0 || c >= width as i64 || r >= height as i64 {
            0.0
        } else {
            values[c as usize + width * r as usize]
        }
    };
    let mut acc = 0.0;
    if fx == 0.0 && fy == 0.0 {
        return get(x0, y0);
    }
    for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
        if wx == 0.0 {
            continue;
        }
        for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            acc += wx * wy * get(x0 + dc, y0 + dr);
        }
    }
    acc
}

/// For each output pixel, the source position `t⁻¹(out)` in source pixel
/// indices.
fn for_each_source(
    t: &AffineTransform2D,
    src: (usize, usize),
    out: (usize, usize),
    mut f: impl FnMut(usize, f64, f64),
) -> Result<()> {
    let inv = t.inverse()?;
    let (scx, scy) = center(src.0, src.1);
    let (ocx, ocy) = center(out.0, out.1);
    for row in 0..out.1 {
        for col in 0..out.0 {
            let (x, y) = inv.apply(col as f64 - ocx, row as f64 - ocy);
            f(col + out.0 * row, x + scx, y + scy);
        }
    }
    Ok(())
}

/// Push `m` forward through `t` onto a `width`×`height` raster: bilinear
/// sampling at `t⁻¹(p)`, thresholded at 0.5. Pixels mapping outside the
/// source are 0.
pub fn warp_mask(m: &Mask2D, t: &AffineTransform2D, width: usize, height: usize) -> Result<Mask2D> {
    t.validate()?;
    let src: Vec<f64> = m.values.iter().map(|&v| v as f64).collect();
    let mut out = vec![0u8; width * height];
    for_each_source(t, (m.width, m.height), (width, height), |i, x, y| {
        out[i] = u8::from(bilinear(&src, m.width, m.height, x, y) >= 0.5);
    })?;
    Mask2D::new(width, height, m.pitch, out)
}

/// Push `img` forward through `t` with bilinear sampling; zero outside.
pub fn warp_image(img: &Image2D, t: &AffineTransform2D, width: usize, height: usize) -> Result<Image2D> {
    let mut out = vec![0.0; width * height];
    for_each_source(t, (img.width, img.height), (width, height), |i, x, y| {
        out[i] = bilinear(&img.values, img.width, img.height, x, y);
    })?;
    let kind = match img.kind {
        ImageKind::IntensityRatio => ImageKind::Generic,
        k => k,
    };
    Image2D::new(width, height, img.pitch, out, kind)
}

fn pitch_scaled(width: usize, height: usize, from: f64, to: f64) -> Result<(AffineTransform2D, usize, usize)> {
    if !(to > 0.0 && to.is_finite()) {
        return Err(DrrError::InvariantViolation(format!("target pitch must be positive, got {to}")));
    }
    let s = from / to;
    let w = ((width as f64 * s).round() as usize).max(1);
    let h = ((height as f64 * s).round() as usize).max(1);
    let t = AffineTransform2D {
        a: s,
        d: s,
        ..AffineTransform2D::identity()
    };
    Ok((t, w, h))
}

/// Resample about the raster centre to a new pixel pitch, keeping the
/// physical field of view.
pub fn resample_image_to_pitch(img: &Image2D, pitch: f64) -> Result<Image2D> {
    if img.pitch == pitch {
        return Ok(img.clone());
    }
    let (t, w, h) = pitch_scaled(img.width, img.height, img.pitch, pitch)?;
    let mut out = vec![0.0; w * h];
    for_each_source(&t, (img.width, img.height), (w, h), |i, x, y| {
        out[i] = bilinear(&img.values, img.width, img.height, x, y);
    })?;
    let kind = match img.kind {
        ImageKind::IntensityRatio => ImageKind::Generic,
        k => k,
    };
    Image2D::new(w, h, pitch, out, kind)
}

pub fn resample_mask_to_pitch(m: &Mask2D, pitch: f64) -> Result<Mask2D> {
    if m.pitch == pitch {
        return Ok(m.clone());
    }
    let (t, w, h) = pitch_scaled(m.width, m.height, m.pitch, pitch)?;
    let src: Vec<f64> = m.values.iter().map(|&v| v as f64).collect();
    let mut out = vec![0u8; w * h];
    for_each_source(&t, (m.width, m.height), (w, h), |i, x, y| {
        out[i] = u8::from(bilinear(&src, m.width, m.height, x, y) >= 0.5);
    })?;
    Mask2D::new(w, h, pitch, out)
}

/// Zero everything outside `lung`.
pub fn apply_roi(img: &Image2D, lung: &Mask2D) -> Result<Image2D> {
    if !lung.same_shape(img.width, img.height) {
        return Err(DrrError::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.width, img.height, lung.width, lung.height
        )));
    }
    let values = img
        .values
        .iter()
        .zip(&lung.values)
        .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
        .collect();
    let kind = match img.kind {
        ImageKind::IntensityRatio => ImageKind::Generic,
        k => k,
    };
    Image2D::new(img.width, img.height, img.pitch, values, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;

    fn disc(w: usize, h: usize, r: f64) -> Mask2D {
        Mask2D::from_fn(w, h, 1.0, |x, y| x * x + y * y <= r * r).unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let m = Mask2D::from_fn(37, 29, 1.0, |x, y| (x * 0.7 + y).sin() > 0.2).unwrap();
        let w = warp_mask(&m, &AffineTransform2D::identity(), 37, 29).unwrap();
        assert_eq!(w, m);
    }

    #[test]
    fn integer_translation_shifts_exactly() {
        let m = disc(64, 64, 12.0);
        let w = warp_mask(&m, &AffineTransform2D::translation(5.0, -3.0), 64, 64).unwrap();
        for row in 3..64 {
            for col in 0..59 {
                assert_eq!(w.at(col + 5, row - 3), m.at(col, row));
            }
        }
    }

    #[test]
    fn round_trip_dice() {
        let m = disc(160, 160, 40.0);
        let t = AffineTransform2D::similarity(3.0, 1.0, 10.0, 0.0);
        let there = warp_mask(&m, &t, 160, 160).unwrap();
        let back = warp_mask(&there, &t.inverse().unwrap(), 160, 160).unwrap();
        assert!(dice(&m, &back).unwrap().dice >= 0.97);
    }

    #[test]
    fn warp_rejects_degenerate() {
        let m = disc(8, 8, 2.0);
        let t = AffineTransform2D {
            a: 0.1,
            ..AffineTransform2D::identity()
        };
        assert!(warp_mask(&m, &t, 8, 8).is_err());
    }

    #[test]
    fn roi_examples() {
        let img = Image2D::new(4, 2, 1.0, (1..=8).map(f64::from).collect(), ImageKind::Generic).unwrap();
        let full = Mask2D::full(4, 2, 1.0).unwrap();
        assert_eq!(apply_roi(&img, &full).unwrap(), img);
        let empty = Mask2D::empty(4, 2, 1.0).unwrap();
        assert!(apply_roi(&img, &empty).unwrap().values.iter().all(|&v| v == 0.0));
        let left = Mask2D::from_fn(4, 2, 1.0, |x, _| x < 0.0).unwrap();
        let r = apply_roi(&img, &left).unwrap();
        assert_eq!(r.values, vec![1.0, 2.0, 0.0, 0.0, 5.0, 6.0, 0.0, 0.0]);
        assert!(apply_roi(&img, &Mask2D::full(2, 4, 1.0).unwrap()).is_err());
    }

    #[test]
    fn pitch_resample_keeps_field_of_view() {
        let m = disc(100, 80, 20.0);
        let half = resample_mask_to_pitch(&m, 2.0).unwrap();
        assert_eq!((half.width, half.height), (50, 40));
        let ratio = half.count() as f64 * 4.0 / m.count() as f64;
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }
}
