//! Acceptance criteria AC1 to AC9. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any criterion fails for a reason other than
//! missing hardware.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{oracle_line_integral, random_geometry, random_volume, ray_endpoints};
use drr_core::io::load_mask;
use drr_core::metrics::{dice, roc_auc};
use drr_core::phantom::{attenuation_cube, attenuation_sphere, lung_roi_image, sphere_mask, write_demo_dataset, DemoOptions};
use drr_core::pipeline::{load_manifest, run_full, SweepConfig};
use drr_core::prep::{hu_to_mu, mu_to_hu, AttenuationContext};
use drr_core::projector::{project_attenuation, project_mask_binary, project_mask_depth, to_intensity};
use drr_core::raster::Mask2D;
use drr_core::registration::{register, AffineTransform2D, RegistrationConfig, SelectionCriterion, TransformParams};
use drr_core::volume::{CtVolume, ElementKind, ValueKind, VolumeHeader};
use drr_core::ProjectionGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AC1_REL: f64 = 1e-3;
const AC1_ABS: f64 = 1e-9;
const AC1_LIMIT: Duration = Duration::from_secs(60);
const AC2_REL: f64 = 1e-6;
const AC2_INTENSITY_ABS: f64 = 1e-12;
const AC4_REL: f64 = 1e-9;
const AC5_SHIFT_PX: f64 = 0.5;
const AC5_ROT_DEG: f64 = 0.5;
const AC5_SCALE: f64 = 0.01;
const AC5_LIMIT: Duration = Duration::from_secs(30);
const AC7_DICE: f64 = 0.80;
const AC7_LIMIT: Duration = Duration::from_secs(300);
const AC8_SINGLE_LIMIT: Duration = Duration::from_secs(2);
const AC8_SPEEDUP: f64 = 4.0;
const AC8_THREADS: usize = 8;

struct Outcome {
    pass: bool,
    /// Failed only because the host lacks the hardware the criterion needs.
    host_limited: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            host_limited: false,
            detail,
        }
    }
}

fn ac1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut pixels = 0usize;
    for _ in 0..20 {
        let v = random_volume(&mut rng);
        for _ in 0..5 {
            let g = random_geometry(&mut rng, &v);
            let img = project_attenuation(&v, &g).unwrap();
            for row in 0..g.det_h {
                for col in 0..g.det_w {
                    let (s, p) = ray_endpoints(&g, v.header.center(), col, row);
                    let o = oracle_line_integral(&v, s, p);
                    let x = img.at(col, row);
                    worst = worst.max((x - o).abs() / (AC1_REL * o.abs()).max(AC1_ABS));
                    pixels += 1;
                }
            }
        }
    }
    let el = t0.elapsed();
    Outcome::new(
        worst <= 1.0 && el < AC1_LIMIT,
        format!("{pixels} pixels, worst error {:.2e} of tolerance, {:.1}s", worst, el.as_secs_f64()),
    )
}

fn ac2() -> Outcome {
    let v = attenuation_cube([120; 3], 1.0, 0.02, 100.0).unwrap();
    let g = ProjectionGeometry {
        det_w: 9,
        det_h: 9,
        det_pitch: 1.0,
        ..Default::default()
    };
    let p = project_attenuation(&v, &g).unwrap();
    let x = p.at(4, 4);
    let i = to_intensity(&p).unwrap().at(4, 4);
    let rel = (x - 2.0).abs() / 2.0;
    let di = (i - (-2.0f64).exp()).abs();
    let di_self = (i - (-x).exp()).abs();
    Outcome::new(
        rel <= AC2_REL && di <= AC2_INTENSITY_ABS && di_self <= AC2_INTENSITY_ABS,
        format!("line integral {x:.12}, intensity error {di:.2e}"),
    )
}

fn ac3() -> Outcome {
    let m = sphere_mask([64; 3], 1.0, 20.0).unwrap();
    let g = ProjectionGeometry {
        sod: 1800.0,
        odd: 250.0,
        det_w: 128,
        det_h: 128,
        det_pitch: 0.5,
        ..Default::default()
    };
    let disc = project_mask_binary(&m, &g).unwrap();
    let radius = (disc.count() as f64 / std::f64::consts::PI).sqrt() * g.det_pitch;
    let expected = 20.0 * 2050.0 / 1800.0;
    let depth = project_mask_depth(&m, &g).unwrap().max();
    let spacing = m.header.spacing[0];
    Outcome::new(
        (radius - expected).abs() <= g.det_pitch && (depth - 40.0).abs() <= 2.0 * spacing,
        format!("disc radius {radius:.3} mm (expected {expected:.3}), depth max {depth:.3} mm"),
    )
}

fn ac4() -> Outcome {
    let ctx = AttenuationContext::default();
    let n = 4001;
    let h = VolumeHeader::new([n, 1, 1], [1.0; 3], [0.0; 3], ElementKind::Float32).unwrap();
    let hu: Vec<f64> = (0..n).map(|i| -1000.0 + i as f64).collect();
    let v = CtVolume::new(h, hu.clone(), ValueKind::Hounsfield).unwrap();
    let back = mu_to_hu(&hu_to_mu(&v, &ctx).unwrap(), &ctx).unwrap();
    let worst = hu
        .iter()
        .zip(&back.values)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    let anchors = ctx.mu_from_hu(0.0) == ctx.mu_water && ctx.mu_from_hu(-1000.0) == ctx.mu_air;
    Outcome::new(
        worst <= AC4_REL && anchors,
        format!("worst relative error {worst:.2e}, anchors exact: {anchors}"),
    )
}

fn ac5() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fixed = lung_roi_image(128, &AffineTransform2D::identity()).unwrap();
    let cfg = RegistrationConfig::default();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut ok = true;
    for k in 0..10 {
        let (shift, rot, sx, sy) = if k == 0 {
            (15.0, 8.0, 1.05, 1.05)
        } else {
            (
                rng.gen_range(0.0..15.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(0.95..1.05),
                rng.gen_range(0.95..1.05),
            )
        };
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        let truth = AffineTransform2D::from_params(&TransformParams {
            tx: shift * dir.cos(),
            ty: shift * dir.sin(),
            rotation: f64::to_radians(rot),
            log_scale_x: f64::ln(sx),
            log_scale_y: f64::ln(sy),
            shear: 0.0,
        });
        let moving = lung_roi_image(128, &truth).unwrap();
        let r = register(&moving, &fixed, &cfg).unwrap();
        let e = r.transform.compose(&truth);
        let (ex, ey) = e.scales();
        let err = (
            e.tx.hypot(e.ty),
            e.params().rotation.to_degrees().abs(),
            (ex - 1.0).abs().max((ey - 1.0).abs()),
        );
        ok &= err.0 <= AC5_SHIFT_PX && err.1 <= AC5_ROT_DEG && err.2 <= AC5_SCALE;
        worst = (worst.0.max(err.0), worst.1.max(err.1), worst.2.max(err.2));
    }
    let el = t0.elapsed();
    Outcome::new(
        ok && el < AC5_LIMIT,
        format!(
            "worst errors: translation {:.3} px, rotation {:.3} deg, scale {:.4}; {:.1}s",
            worst.0,
            worst.1,
            worst.2,
            el.as_secs_f64()
        ),
    )
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    credit += 1.0;
                } else if si == sj {
                    credit += 0.5;
                }
            }
        }
    }
    credit / pairs
}

fn mask5(bits: u32) -> Mask2D {
    Mask2D::new(5, 5, 1.0, (0..25).map(|i| ((bits >> i) & 1) as u8).collect()).unwrap()
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut auc_mismatch = 0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(2..40);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / 4.0).collect();
        if roc_auc(&scores, &labels).unwrap().auc != brute_auc(&scores, &labels) {
            auc_mismatch += 1;
        }
    }

    let mut patterns: Vec<u32> = vec![0, (1 << 25) - 1, 0b11111, 0x1F << 20, 0x0AAAAAA, 0x1555555];
    patterns.extend((0..25).map(|i| 1u32 << i));
    patterns.extend((0..5).map(|c| (0..5).map(|r| 1u32 << (c + 5 * r)).sum::<u32>()));
    patterns.extend((0..40).map(|_| rng.gen_range(0..1u32 << 25)));
    let mut dice_mismatch = 0;
    let mut pairs = 0;
    for &a in &patterns {
        for &b in &patterns {
            let (na, nb, ni) = (a.count_ones(), b.count_ones(), (a & b).count_ones());
            let expected = if na + nb == 0 { 1.0 } else { f64::from(2 * ni) / f64::from(na + nb) };
            let d = dice(&mask5(a), &mask5(b)).unwrap();
            if d.dice != expected || d.intersection != ni as usize {
                dice_mismatch += 1;
            }
            pairs += 1;
        }
    }
    Outcome::new(
        auc_mismatch == 0 && dice_mismatch == 0,
        format!("AUC mismatches {auc_mismatch}/200, Dice mismatches {dice_mismatch}/{pairs}"),
    )
}

struct PipelineRun {
    report: Vec<u8>,
    elapsed: Duration,
}

fn phantom_run(data: &Path, out: &Path) -> (drr_core::pipeline::RunOutcome, PipelineRun) {
    let manifest = load_manifest(data.join("cases.jsonl")).unwrap();
    let sweep = SweepConfig::load(data.join("sweep.json")).unwrap();
    let t0 = Instant::now();
    let run = run_full(&manifest, &sweep, SelectionCriterion::MaxMi, out, false).unwrap();
    let elapsed = t0.elapsed();
    let report = std::fs::read(&run.report_path).unwrap();
    (run, PipelineRun { report, elapsed })
}

fn ac7_ac9() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let t0 = Instant::now();
    let demo = write_demo_dataset(&data, &DemoOptions::default()).unwrap();
    let setup = t0.elapsed();
    let (run, first) = phantom_run(&data, &dir.path().join("r1"));
    let total = setup + first.elapsed;

    let case = run.report.cases.iter().find(|c| c.case_id == demo.case_id).unwrap();
    let ac7 = match case.transfer.done() {
        Some(t) => {
            let tma = load_mask(dir.path().join("r1").join(&t.tma)).unwrap();
            let d = dice(&tma, &demo.lesion_xr).unwrap().dice;
            let candidates = case.sxr.done().map_or(0, |s| s.tags.len());
            Outcome::new(
                t.best_by_mi == demo.true_tag
                    && t.best_by_lung_overlap == demo.true_tag
                    && candidates == 15
                    && d >= AC7_DICE
                    && total < AC7_LIMIT,
                format!(
                    "{candidates} candidates, max_mi picked {}, max_lung_overlap picked {}, truth {}, TMA Dice {d:.3}, {:.1}s",
                    t.best_by_mi,
                    t.best_by_lung_overlap,
                    demo.true_tag,
                    total.as_secs_f64()
                ),
            )
        }
        None => Outcome::new(false, format!("transfer did not run: {:?}", case.transfer)),
    };

    let (_, second) = phantom_run(&data, &dir.path().join("r2"));
    let same = first.report == second.report;
    let ac9 = Outcome::new(
        same,
        format!("report sizes {} and {} bytes, identical: {same}", first.report.len(), second.report.len()),
    );
    (ac7, ac9)
}

fn ac8() -> Outcome {
    let v = attenuation_sphere([256; 3], 1.0, 0.02, 100.0).unwrap();
    let g = ProjectionGeometry {
        det_w: 512,
        det_h: 512,
        det_pitch: 0.6,
        theta_h: 3.0,
        theta_v: 2.0,
        ..Default::default()
    };
    let timed = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            project_attenuation(&v, &g).unwrap();
            let t0 = Instant::now();
            let img = project_attenuation(&v, &g).unwrap();
            (t0.elapsed(), img)
        })
    };
    let (t1, one) = timed(1);
    let (t8, eight) = timed(AC8_THREADS);
    let bits = |img: &drr_core::Image2D| img.values.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let identical = bits(&one) == bits(&eight);
    let speedup = t1.as_secs_f64() / t8.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let single_ok = t1 < AC8_SINGLE_LIMIT;
    let speed_ok = speedup >= AC8_SPEEDUP;
    let detail = format!(
        "single thread {:.2}s, {AC8_THREADS} threads {:.2}s, speedup {speedup:.2}x, byte-identical {identical}, host cores {cores}",
        t1.as_secs_f64(),
        t8.as_secs_f64()
    );
    Outcome {
        pass: single_ok && speed_ok && identical,
        host_limited: single_ok && identical && !speed_ok && cores < AC8_THREADS,
        detail,
    }
}

fn main() {
    // libtest-style flags such as --nocapture are accepted and ignored
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |id: &str| filter.as_deref().is_none_or(|f| id.contains(f));
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut push = |id: &'static str, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(id) {
            results.push((id, name, f()));
        }
    };
    push("AC1", "projection oracle", &ac1);
    push("AC2", "analytic slab", &ac2);
    push("AC3", "magnification", &ac3);
    push("AC4", "HU round trip", &ac4);
    push("AC5", "registration recovery", &ac5);
    push("AC6", "metric oracles", &ac6);
    push("AC8", "performance", &ac8);
    if wanted("AC7") || wanted("AC9") {
        let (a7, a9) = ac7_ac9();
        results.push(("AC7", "end-to-end phantom transfer", a7));
        results.push(("AC9", "determinism", a9));
    }
    results.sort_by_key(|r| r.0);

    let mut hard_failures = 0;
    for (id, name, o) in &results {
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if o.host_limited { " [host lacks required cores]" } else { "" };
        println!("{id} {status} {name}: {}{note}", o.detail);
        if !o.pass && !o.host_limited {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
