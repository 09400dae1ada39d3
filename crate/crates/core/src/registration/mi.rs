//! Histogram mutual information.

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};
use crate::raster::Image2D;

pub const DEFAULT_BINS: usize = 64;

/// Square joint histogram of two discretised images.
#[derive(Debug, Clone)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<u32>,
}

impl JointHistogram {
    pub fn new(bins: usize) -> Self {
        JointHistogram {
            bins,
            counts: vec![0; bins * bins],
        }
    }

    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize) {
        self.counts[i * self.bins + j] += 1;
    }

    /// Mutual information in nats; zero for an empty histogram.
    ///
    /// Terms are accumulated over unordered bin pairs so that transposing
    /// the histogram gives a bit-identical result.
    pub fn mutual_information(&self) -> f64 {
        let n = self.bins;
        let mut rows = vec![0u64; n];
        let mut cols = vec![0u64; n];
        let mut total = 0u64;
        for i in 0..n {
            for j in 0..n {
                let c = self.counts[i * n + j] as u64;
                rows[i] += c;
                cols[j] += c;
                total += c;
            }
        }
        if total == 0 {
            return 0.0;
        }
        let total_f = total as f64;
        let term = |i: usize, j: usize| -> f64 {
            let c = self.counts[i * n + j];
            if c == 0 {
                return 0.0;
            }
            let c = c as f64;
            c * ((c * total_f) / (rows[i] as f64 * cols[j] as f64)).ln()
        };
        // in a transposed histogram rows and cols swap, so term(i, j) and
        // term(j, i) swap too; their sum is order independent
        let mut sum = 0.0;
        for i in 0..n {
            sum += term(i, i);
            for j in (i + 1)..n {
                sum += term(i, j) + term(j, i);
            }
        }
        (sum / total_f).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    pub nats: f64,
    /// One of the inputs had zero intensity range; `nats` is 0.
    pub constant_input: bool,
}

/// Min-max bin index in `0..bins`.
#[inline]
pub(crate) fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = (v - lo) / (hi - lo);
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Mutual information of two equally sized images over a `bins`×`bins`
/// joint histogram of min-max normalised intensities.
pub fn mutual_information(a: &Image2D, b: &Image2D, bins: usize) -> Result<MutualInformation> {
    if a.width != b.width || a.height != b.height {
        return Err(DrrError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if bins < 2 {
        return Err(DrrError::Config(format!("need at least 2 bins, got {bins}")));
    }
    let (alo, ahi) = (a.min(), a.max());
    let (blo, bhi) = (b.min(), b.max());
    if !(ahi > alo) || !(bhi > blo) {
        log::warn!("mutual information of a constant image is 0");
        return Ok(MutualInformation {
            nats: 0.0,
            constant_input: true,
        });
    }
    let mut h = JointHistogram::new(bins);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        h.add(bin_of(x, alo, ahi, bins), bin_of(y, blo, bhi, bins));
    }
    Ok(MutualInformation {
        nats: h.mutual_information(),
        constant_input: false,
    })
}

/// Shannon entropy (nats) of an image's min-max histogram.
pub fn marginal_entropy(a: &Image2D, bins: usize) -> f64 {
    let (lo, hi) = (a.min(), a.max());
    if !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in &a.values {
        counts[bin_of(v, lo, hi, bins)] += 1;
    }
    let n = a.values.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ImageKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image2D {
        let v = (0..w * h).map(|_| rng.gen::<f64>()).collect();
        Image2D::new(w, h, 1.0, v, ImageKind::Generic).unwrap()
    }

    #[test]
    fn self_mi_is_marginal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = noise(&mut rng, 40, 30);
        let mi = mutual_information(&a, &a, 64).unwrap();
        assert!((mi.nats - marginal_entropy(&a, 64)).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_has_small_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = noise(&mut rng, 512, 512);
        let b = noise(&mut rng, 512, 512);
        let mi = mutual_information(&a, &b, 64).unwrap().nats;
        assert!(mi < 0.05, "{mi}");
        assert!(mi >= 0.0);
    }

    #[test]
    fn symmetric_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = noise(&mut rng, 33, 17);
            let b = noise(&mut rng, 33, 17);
            assert_eq!(
                mutual_information(&a, &b, 64).unwrap().nats,
                mutual_information(&b, &a, 64).unwrap().nats
            );
        }
    }

    #[test]
    fn affine_intensity_rescale_keeps_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // dyadic values so 2x + 1 is exact
        let dyadic = |rng: &mut ChaCha8Rng| {
            let v = (0..64 * 64).map(|_| rng.gen_range(0..1024) as f64 / 1024.0).collect();
            Image2D::new(64, 64, 1.0, v, ImageKind::Generic).unwrap()
        };
        let a = dyadic(&mut rng);
        let b = dyadic(&mut rng);
        let a2 = Image2D {
            values: a.values.iter().map(|v| 2.0 * v + 1.0).collect(),
            ..a.clone()
        };
        assert_eq!(
            mutual_information(&a, &b, 64).unwrap().nats,
            mutual_information(&a2, &b, 64).unwrap().nats
        );
    }

    #[test]
    fn constant_image_flagged() {
        let a = Image2D::new(4, 4, 1.0, vec![2.0; 16], ImageKind::Generic).unwrap();
        let b = Image2D::new(4, 4, 1.0, (0..16).map(|i| i as f64).collect(), ImageKind::Generic).unwrap();
        let mi = mutual_information(&a, &b, 8).unwrap();
        assert_eq!(mi.nats, 0.0);
        assert!(mi.constant_input);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Image2D::zeros(4, 4, 1.0, ImageKind::Generic).unwrap();
        let b = Image2D::zeros(4, 5, 1.0, ImageKind::Generic).unwrap();
        assert!(matches!(mutual_information(&a, &b, 8), Err(DrrError::DimensionMismatch(_))));
    }
}
