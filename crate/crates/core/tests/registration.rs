use drr_core::phantom::lung_roi_image;
use drr_core::raster::{Image2D, Mask2D};
use drr_core::registration::{
    candidate_scores, register, roi_mutual_information, select_best_candidate, AffineTransform2D, Candidate, RegistrationConfig,
    RegistrationResult, SelectionCriterion,
};
use drr_core::DrrError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 112;

fn render(t: &AffineTransform2D) -> Image2D {
    lung_roi_image(SIZE, t).unwrap()
}

fn roi(img: &Image2D) -> Mask2D {
    Mask2D::new(img.width, img.height, img.pitch, img.values.iter().map(|&v| u8::from(v > 0.0)).collect()).unwrap()
}

fn mirror() -> AffineTransform2D {
    AffineTransform2D {
        a: -1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    }
}

#[test]
fn optimum_beats_every_nearby_perturbation() {
    let fixed = render(&AffineTransform2D::identity());
    let moving = render(&AffineTransform2D::similarity(2.0, 1.0, 3.0, 2.0));
    let cfg = RegistrationConfig::default();
    let r = register(&moving, &fixed, &cfg).unwrap();
    let best = roi_mutual_information(&moving, &fixed, &r.transform, cfg.bins).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = rng.gen_range(2.0..4.0);
        let shift = AffineTransform2D::translation(dist * angle.cos(), dist * angle.sin());
        let p = shift.compose(&r.transform);
        let mi = roi_mutual_information(&moving, &fixed, &p, cfg.bins).unwrap();
        assert!(best > mi, "perturbed mi {mi} above optimum {best}");
    }
}

#[test]
fn mirrored_candidate_loses_under_both_criteria() {
    let fixed = render(&AffineTransform2D::identity());
    let xr_lung = roi(&fixed);
    let good = render(&AffineTransform2D::translation(-2.0, 1.0));
    let bad = render(&mirror());
    let cfg = RegistrationConfig::default();
    let rg = register(&good, &fixed, &cfg).unwrap();
    let rb = register(&bad, &fixed, &cfg).unwrap();
    let (lg, lb) = (roi(&good), roi(&bad));
    for order in [[0usize, 1], [1, 0]] {
        let pool = [
            Candidate {
                lung: &lg,
                result: &rg,
            },
            Candidate {
                lung: &lb,
                result: &rb,
            },
        ];
        let cands: Vec<Candidate> = order.iter().map(|&i| pool[i]).collect();
        for crit in [SelectionCriterion::MaxMi, SelectionCriterion::MaxLungOverlap] {
            let chosen = select_best_candidate(&cands, &xr_lung, crit).unwrap();
            assert_eq!(order[chosen], 0, "{crit:?}");
        }
    }
}

#[test]
fn empty_candidate_list() {
    let m = Mask2D::empty(4, 4, 1.0).unwrap();
    assert!(matches!(
        select_best_candidate(&[], &m, SelectionCriterion::MaxMi),
        Err(DrrError::EmptyCandidateList)
    ));
}

fn result(mi: f64, tx: f64) -> RegistrationResult {
    RegistrationResult {
        transform: AffineTransform2D::translation(tx, 0.0),
        mi_final: mi,
        iterations: 0,
        converged: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_is_permutation_equivariant(
        entries in proptest::collection::vec((0.0f64..4.0, -6i32..=6), 1..8),
        seed in any::<u64>(),
    ) {
        let xr_lung = Mask2D::from_fn(32, 32, 1.0, |x, y| (x - 15.5).hypot(y - 15.5) < 9.0).unwrap();
        let results: Vec<RegistrationResult> = entries.iter().map(|&(mi, tx)| result(mi, f64::from(tx))).collect();
        let lungs: Vec<Mask2D> = (0..entries.len()).map(|_| xr_lung.clone()).collect();
        let cands: Vec<Candidate> = lungs.iter().zip(&results).map(|(lung, result)| Candidate { lung, result }).collect();
        let mut perm: Vec<usize> = (0..cands.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<Candidate> = perm.iter().map(|&i| cands[i]).collect();
        for crit in [SelectionCriterion::MaxMi, SelectionCriterion::MaxLungOverlap] {
            let a = select_best_candidate(&cands, &xr_lung, crit).unwrap();
            let b = perm[select_best_candidate(&shuffled, &xr_lung, crit).unwrap()];
            let scores = candidate_scores(&cands, &xr_lung, crit).unwrap();
            let score = |i: usize| scores[i];
            // the same candidate, or a tied one
            prop_assert_eq!(score(a), score(b));
            prop_assert!((0..cands.len()).all(|i| score(i) <= score(a)));
        }
    }
}
