use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drr_core::io::{
    load_ct, load_mask, load_mask_volume, load_radiograph, save_image, save_mask, save_pgm,
};
use drr_core::metrics::{dice, roc_auc};
use drr_core::phantom::{write_demo_dataset, DemoOptions};
use drr_core::pipeline::stages::{export_for_editing, import_pma, tma_pma_dice};
use drr_core::pipeline::{load_manifest, run_full, SweepConfig};
use drr_core::prep::{detect_truncation, hu_to_mu, resample_isotropic, resample_mask_isotropic, AttenuationContext};
use drr_core::projector::{
    depth_floor, project_attenuation_with, project_mask_depth_with, render_preview, to_intensity, ProjectOptions,
};
use drr_core::raster::Mask2D;
use drr_core::registration::{
    apply_roi, register, resample_image_to_pitch, resample_mask_to_pitch, warp_mask, AffineTransform2D,
    RegistrationConfig, SelectionCriterion,
};
use drr_core::{DrrError, ProjectionGeometry, ValueKind, View};

#[derive(Parser)]
#[command(name = "drr", version, about = "Synthetic radiographs from CT and CT-to-X-ray mask transfer")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a CT (or a CT mask) onto a virtual detector.
    Project(ProjectArgs),
    /// Register a synthetic X-ray onto a real one by lung-ROI mutual information.
    Register(RegisterArgs),
    /// Warp a 2D mask with a registration result.
    Transfer(TransferArgs),
    /// Overlap and ranking metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run every stage for a manifest of cases.
    Pipeline(PipelineArgs),
    /// Export a transferred mask for manual editing, or import the edit.
    #[command(subcommand)]
    Edit(EditCommand),
    /// Write a synthetic chest phantom case with manifest and sweep.
    Phantom(PhantomArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Ap,
    Pa,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_h: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_v: f64,
    #[arg(long, default_value_t = drr_core::geometry::DEFAULT_SOD_MM)]
    sod: f64,
    #[arg(long, default_value_t = drr_core::geometry::DEFAULT_ODD_MM)]
    odd: f64,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Detector pixel pitch in mm.
    #[arg(long, default_value_t = 0.8)]
    pitch: f64,
    #[arg(long, value_enum, default_value_t = ViewArg::Ap)]
    view: ViewArg,
}

impl GeometryArgs {
    fn geometry(&self) -> ProjectionGeometry {
        ProjectionGeometry {
            sod: self.sod,
            odd: self.odd,
            theta_h: self.theta_h,
            theta_v: self.theta_v,
            det_w: self.width,
            det_h: self.height,
            det_pitch: self.pitch,
            view: match self.view {
                ViewArg::Ap => View::AP,
                ViewArg::Pa => View::PA,
            },
        }
    }
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["ct", "mask"]))]
struct ProjectArgs {
    /// CT volume (.mhd), in HU or attenuation per mm.
    #[arg(long)]
    ct: Option<PathBuf>,
    /// Binary mask volume (.mhd) on the CT grid.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// For masks: write the chord-length map instead of the binary mask.
    #[arg(long, requires = "mask")]
    depth: bool,
    /// For CT: write transmitted intensity exp(-line integral).
    #[arg(long, requires = "ct")]
    intensity: bool,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Isotropic resampling spacing in mm.
    #[arg(long, default_value_t = drr_core::prep::DEFAULT_TARGET_SPACING)]
    target_spacing: f64,
    #[arg(long, default_value_t = drr_core::prep::DEFAULT_MU_WATER)]
    mu_water: f64,
    /// Average 2x2 rays per pixel.
    #[arg(long)]
    supersample: bool,
    /// 8-bit preview of a float output.
    #[arg(long)]
    preview: Option<PathBuf>,
    /// Output raster: .f32 (float, with JSON sidecar) or .pgm (binary mask).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Synthetic X-ray.
    #[arg(long)]
    moving: PathBuf,
    /// Real X-ray.
    #[arg(long)]
    fixed: PathBuf,
    /// Lung mask of the moving image.
    #[arg(long)]
    moving_roi: Option<PathBuf>,
    /// Lung mask of the fixed image.
    #[arg(long)]
    fixed_roi: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Result JSON (transform, final MI, iterations).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Mask in synthetic X-ray coordinates.
    #[arg(long)]
    mask: PathBuf,
    /// Registration result written by `drr register`.
    #[arg(long)]
    transform: PathBuf,
    /// Raster whose size and pitch the output takes (the real X-ray).
    #[arg(long)]
    like: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Dice overlap of two binary PGM masks.
    Dice { a: PathBuf, b: PathBuf },
    /// ROC AUC from a CSV with `score` and `label` columns (label 1/0 or true/false).
    Auc { csv: PathBuf },
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long, default_value = "max_mi")]
    criterion: SelectionCriterion,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Reuse stage outputs whose input hashes are unchanged.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum EditCommand {
    /// Write an X-ray preview and an editable copy of the case's TMA.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an edited mask and store it as the case's PMA.
    Import {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        edited: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, short)]
    out: PathBuf,
    /// Pixel shift applied to the pseudo X-ray.
    #[arg(long, default_value_t = 4, allow_hyphen_values = true)]
    shift_x: i32,
    #[arg(long, default_value_t = -3, allow_hyphen_values = true)]
    shift_y: i32,
}

/// Marks errors that should exit with status 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config<T>(r: drr_core::Result<T>, what: &str) -> Result<T> {
    r.map_err(|e| ConfigError(format!("{what}: {e}")).into())
}

fn project(a: &ProjectArgs) -> Result<()> {
    let g = a.geometry.geometry();
    let opts = ProjectOptions {
        supersample: a.supersample,
    };
    if let Some(path) = &a.mask {
        let m = load_mask_volume(path).with_context(|| format!("loading {}", path.display()))?;
        let m = resample_mask_isotropic(&m, a.target_spacing)?;
        let depth = project_mask_depth_with(&m, &g, opts)?;
        if a.depth {
            save_image(&depth, &a.out)?;
            if let Some(p) = &a.preview {
                save_pgm(&render_preview(&depth, None)?, p)?;
            }
        } else {
            save_mask(&Mask2D::from_threshold(&depth, depth_floor(&m)), &a.out)?;
        }
        return Ok(());
    }
    let path = a.ct.as_ref().expect("clap enforces --ct or --mask");
    let ct = load_ct(path).with_context(|| format!("loading {}", path.display()))?;
    let ctx = config(AttenuationContext::new(a.mu_water, 0.0), "--mu-water")?;
    let mu = match ct.value_kind {
        ValueKind::Hounsfield => hu_to_mu(&ct, &ctx)?,
        ValueKind::AttenuationPerMm => ct,
    };
    let mu = resample_isotropic(&mu, a.target_spacing)?;
    let trunc = detect_truncation(&mu, 0.5 * a.mu_water);
    if trunc.truncated {
        log::warn!("{}: anatomy touches the volume boundary, lateral views may be invalid", path.display());
    }
    let mut img = project_attenuation_with(&mu, &g, opts)?;
    if a.intensity {
        img = to_intensity(&img)?;
    }
    save_image(&img, &a.out)?;
    if let Some(p) = &a.preview {
        save_pgm(&render_preview(&img, None)?, p)?;
    }
    log::info!("wrote {} ({})", a.out.display(), g.tag());
    Ok(())
}

fn load_roi(path: &Option<PathBuf>, pitch: f64) -> Result<Option<Mask2D>> {
    path.as_ref()
        .map(|p| {
            let m = load_mask(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(resample_mask_to_pitch(&m, pitch)?)
        })
        .transpose()
}

fn register_cmd(a: &RegisterArgs) -> Result<()> {
    let fixed = load_radiograph(&a.fixed).with_context(|| format!("loading {}", a.fixed.display()))?;
    let moving = load_radiograph(&a.moving).with_context(|| format!("loading {}", a.moving.display()))?;
    let moving = resample_image_to_pitch(&moving, fixed.pitch)?;
    let fixed = match load_roi(&a.fixed_roi, fixed.pitch)? {
        Some(m) => apply_roi(&fixed, &m)?,
        None => fixed,
    };
    let moving = match load_roi(&a.moving_roi, fixed.pitch)? {
        Some(m) => apply_roi(&moving, &m)?,
        None => moving,
    };
    let cfg = RegistrationConfig {
        bins: a.bins,
        ..RegistrationConfig::default()
    };
    config(cfg.validate(), "registration settings")?;
    let r = register(&moving, &fixed, &cfg)?;
    write_json(&a.out, &r)?;
    println!(
        "mi {:.4} after {} iterations, rotation {:.2} deg, shift ({:.2}, {:.2}) px",
        r.mi_final,
        r.iterations,
        r.transform.rotation_degrees(),
        r.transform.tx,
        r.transform.ty
    );
    Ok(())
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.transform).with_context(|| format!("reading {}", a.transform.display()))?;
    let t: AffineTransform2D = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", a.transform.display())))?;
    let like = load_radiograph(&a.like).with_context(|| format!("loading {}", a.like.display()))?;
    let m = load_mask(&a.mask).with_context(|| format!("loading {}", a.mask.display()))?;
    let m = resample_mask_to_pitch(&m, like.pitch)?;
    let out = warp_mask(&m, &t, like.width, like.height)?;
    save_mask(&out, &a.out)?;
    println!("{} pixels", out.count());
    Ok(())
}

fn eval(c: &EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Dice { a, b } => {
            let r = dice(&load_mask(a)?, &load_mask(b)?)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        EvalCommand::Auc { csv: path } => {
            let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
            let headers = rdr.headers()?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| ConfigError(format!("{}: missing column `{name}`", path.display())))
            };
            let (si, li) = (col("score")?, col("label")?);
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (n, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let s: f64 = rec[si].trim().parse().with_context(|| format!("row {}: bad score", n + 1))?;
                let l = match rec[li].trim() {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    other => bail!("row {}: bad label `{other}`", n + 1),
                };
                scores.push(s);
                labels.push(l);
            }
            let r = roc_auc(&scores, &labels)?;
            println!("{}", serde_json::to_string(&r)?);
        }
    }
    Ok(())
}

fn pipeline(a: &PipelineArgs) -> Result<i32> {
    let sweep = match &a.sweep {
        Some(p) => config(SweepConfig::load(p), "sweep")?,
        None => SweepConfig::default(),
    };
    let manifest = config(load_manifest(&a.manifest), "manifest")?;
    for e in &manifest.errors {
        log::warn!("manifest line {}: {}", e.line, e.message);
    }
    let run = || run_full(&manifest, &sweep, a.criterion, &a.out, a.resume);
    let outcome = match a.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(run)
        }
        None => run(),
    };
    let outcome = match outcome {
        Err(e @ DrrError::Config(_)) => return Err(ConfigError(e.to_string()).into()),
        other => other?,
    };
    let r = &outcome.report;
    println!(
        "{} cases, {} paired, {} failed; {} stages computed, {} reused; report {}",
        r.cases.len(),
        r.pairing.paired,
        r.failed_cases,
        outcome.stages_recomputed,
        outcome.stages_reused,
        outcome.report_path.display()
    );
    Ok(outcome.exit_code())
}

fn find_case(manifest: &Path, case: &str) -> Result<drr_core::pipeline::CaseRecord> {
    let m = config(load_manifest(manifest), "manifest")?;
    m.records
        .into_iter()
        .find(|r| r.case_id == case)
        .ok_or_else(|| ConfigError(format!("case `{case}` not in {}", manifest.display())).into())
}

fn edit(c: &EditCommand) -> Result<()> {
    match c {
        EditCommand::Export { manifest, case, out } => {
            let b = export_for_editing(&find_case(manifest, case)?, out)?;
            println!("preview {}\nmask {}", b.preview.display(), b.tma.display());
        }
        EditCommand::Import {
            manifest,
            case,
            edited,
            out,
        } => {
            let rec = import_pma(&find_case(manifest, case)?, edited, out)?;
            println!("TMA vs PMA Dice {:.4}", tma_pma_dice(out, &rec)?);
        }
    }
    Ok(())
}

fn phantom(a: &PhantomArgs) -> Result<()> {
    let opts = DemoOptions {
        xr_shift_px: (a.shift_x, a.shift_y),
        ..DemoOptions::default()
    };
    let d = write_demo_dataset(&a.out, &opts)?;
    println!("manifest {}\nsweep {}\ntrue geometry {}", d.manifest.display(), d.sweep.display(), d.true_tag);
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Project(a) => project(a)?,
        Command::Register(a) => register_cmd(a)?,
        Command::Transfer(a) => transfer(a)?,
        Command::Eval(c) => eval(c)?,
        Command::Pipeline(a) => return pipeline(a),
        Command::Edit(c) => edit(c)?,
        Command::Phantom(a) => phantom(a)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let cfg = e.is::<ConfigError>() || matches!(e.downcast_ref::<DrrError>(), Some(DrrError::Config(_)));
            ExitCode::from(if cfg { 2 } else { 1 })
        }
    }
}
