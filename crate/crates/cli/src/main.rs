//! Command-line front end: synthetic data, filters, crease extraction,
//! evaluation and replayable pipeline runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mafod::baselines::RidgeStrengthConfig;
use mafod::crease::CreaseConfig;
use mafod::evaluate::{match_and_score, CoverageMode, EvalConfig};
use mafod::experiment::{
    apply_filter, extract, run_pipeline, EarlyStop, ExperimentConfig, ExtractionConfig, ExtractionScale,
    FilterConfig, FilterMonitor, KindFilter, ScheduleConfig,
};
use mafod::io::{self, Quantize};
use mafod::scale_select::{sigma_range, Polarity, ScaleConfig};
use mafod::solver::DEFAULT_TAU_MAX;
use mafod::synthgen::{add_noise, SyntheticSpec};
use mafod::tensor::{DiffusionMode, DiffusivityConfig};
use mafod::{Error, ScalarField2D};

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  usage, configuration, I/O or file-format error
  3  numerical failure (non-finite values)

Images are read from .png, .pgm/.pnm or .sf2d (raw float) files; the
output format follows the file extension. Curves are stored as .json or .csv.";

#[derive(Parser)]
#[command(name = "mafod", version, about = "Multi-scale anisotropic fourth-order diffusion for ridge and valley enhancement", after_help = EXIT_HELP)]
struct Cli {
    /// Worker threads (defaults to CREASE_THREADS, then all cores).
    #[arg(long, global = true, env = "CREASE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image with ground-truth centerlines.
    Generate(GenerateArgs),
    /// Filter an image.
    Filter(FilterArgs),
    /// Extract sub-pixel ridge and valley lines.
    Extract(ExtractArgs),
    /// Score reconstructed curves against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a configuration or manifest file.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Concentric,
    OccludedVessel,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON generator description, e.g. {"kind":"concentric","size":256,"radii":[15],"widths":[1.5]}.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Built-in generator.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Image size of the built-in generators.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Add Gaussian noise at this signal-to-noise ratio.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for clean.*, noisy.* (with --snr) and gt.json/gt.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    None,
    Mafod,
    Ifod,
    PeronaMalik,
    MultiscaleGaussian,
    Bilateral,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Both,
    RidgesOnly,
    ValleysOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Ridges,
    Valleys,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "mafod")]
    method: Method,
    /// Filter description as JSON (overrides the method flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Contrast parameter of the diffusivity.
    #[arg(long, default_value_t = 0.005)]
    lambda: f64,
    /// Vesselness threshold for scale selection.
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    /// Scales as start:step:end or a comma-separated list.
    #[arg(long, default_value = "0.5:0.5:9.0", value_parser = parse_sigmas)]
    sigmas: Sigmas,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "ridges")]
    polarity: PolarityArg,
    /// Total diffusion time (MAFOD).
    #[arg(long = "T", visible_alias = "time", default_value_t = 500.0)]
    time: f64,
    /// FED cycles (MAFOD).
    #[arg(long = "M", visible_alias = "cycles", default_value_t = 10000)]
    cycles: usize,
    #[arg(long, default_value_t = DEFAULT_TAU_MAX)]
    tau_max: f64,
    /// Explicit step size (IFOD, Perona-Malik).
    #[arg(long)]
    tau: Option<f64>,
    /// Explicit steps (IFOD, Perona-Malik).
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Hessian regularisation of IFOD (0 for the plain model).
    #[arg(long, default_value_t = 1.0)]
    ifod_sigma: f64,
    #[arg(long, default_value_t = 0.75)]
    gamma: f64,
    #[arg(long, default_value_t = 3.0)]
    sigma_spatial: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_range: f64,
    /// Noise-free image; enables early stopping at the smallest l2 distance.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Write the iterate every N cycles or steps into --snapshot-dir.
    #[arg(long, value_name = "N", requires = "snapshot_dir")]
    snapshot_every: Option<usize>,
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
    /// Selected scale map (MAFOD) or diffusion times (multi-scale Gaussian).
    #[arg(long)]
    scale_map: Option<PathBuf>,
    /// Print progress every N iterations (0 = never).
    #[arg(long, default_value_t = 10)]
    progress: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindsArg {
    Ridges,
    Valleys,
    Both,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Curves (.json or .csv).
    #[arg(short, long)]
    output: PathBuf,
    /// Fixed derivative scale.
    #[arg(long, default_value_t = 1.0, conflicts_with = "sigmas")]
    sigma: f64,
    /// Select per-pixel scales from these instead of a fixed scale.
    #[arg(long, value_parser = parse_sigmas)]
    sigmas: Option<Sigmas>,
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    #[arg(long, value_enum, default_value = "ridges")]
    kinds: KindsArg,
    #[arg(long, default_value_t = CreaseConfig::default().strength_threshold)]
    strength_threshold: f64,
    #[arg(long, default_value_t = CreaseConfig::default().link_gap)]
    link_gap: f64,
    #[arg(long, default_value_t = CreaseConfig::default().min_vertices)]
    min_vertices: usize,
    /// Ground truth drawn in red on the overlay.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// PNG with the curves drawn over the image.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    zoom: u32,
    #[arg(long)]
    scale_map: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoverageArg {
    Points,
    Segments,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long)]
    curves: PathBuf,
    /// Matching radius in pixels.
    #[arg(long, default_value_t = EvalConfig::default().neighborhood)]
    neighborhood: f64,
    #[arg(long, default_value_t = EvalConfig::default().sample_step)]
    sample_step: f64,
    /// Ground-truth piece length; 0 matches whole curves.
    #[arg(long, default_value_t = 5.0)]
    segment_length: f64,
    #[arg(long, value_enum, default_value = "points")]
    coverage: CoverageArg,
    /// Full result with per-piece details.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Experiment configuration, or a manifest.json from an earlier run.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides the configured one).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Print progress every N iterations (0 = never).
    #[arg(long, default_value_t = 10)]
    progress: usize,
}

/// Scale list given on the command line.
#[derive(Clone, Debug)]
struct Sigmas(Vec<f64>);

fn parse_sigmas(s: &str) -> Result<Sigmas, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, c] => sigma_range(num(a)?, num(b)?, num(c)?).map(Sigmas).map_err(|e| e.to_string()),
        [_] => s.split(',').map(num).collect::<Result<_, _>>().map(Sigmas),
        _ => Err("expected start:step:end or a comma-separated list".into()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

struct Progress<'a> {
    every: usize,
    label: &'a str,
    snapshot_dir: Option<PathBuf>,
    snapshot_every: Option<usize>,
}

impl FilterMonitor for Progress<'_> {
    fn progress(&mut self, k: usize, t: f64, l2: f64) {
        if self.every > 0 && k % self.every == 0 {
            eprintln!("{}={k} t={t:.4} l2={l2:.6}", self.label);
        }
    }

    fn snapshot(&mut self, k: usize, u: &ScalarField2D) -> mafod::Result<()> {
        if let Some(dir) = &self.snapshot_dir {
            std::fs::create_dir_all(dir)?;
            io::write_sf2d(dir.join(format!("iter_{k:06}.sf2d")), u)?;
        }
        Ok(())
    }

    fn snapshot_every(&self) -> Option<usize> {
        self.snapshot_every
    }
}

fn generate(a: &GenerateArgs) -> mafod::Result<()> {
    let spec = match (&a.spec, a.preset) {
        (Some(p), _) => io::read_json::<SyntheticSpec>(p)?,
        (None, Some(Preset::Concentric)) => SyntheticSpec::default_concentric(a.size),
        (None, Some(Preset::OccludedVessel)) => SyntheticSpec::default_occluded_vessel(a.size),
        (None, None) => return Err(Error::Parameter("either --spec or --preset is required".into())),
    };
    let s = spec.generate()?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(&a.out)?;
    let write = |name: &str, u: &ScalarField2D| -> mafod::Result<()> {
        io::write_sf2d(a.out.join(format!("{name}.sf2d")), u)?;
        io::write_png(a.out.join(format!("{name}.png")), u, Quantize::Clamp)
    };
    write("clean", &s.image)?;
    if let Some(snr) = a.snr {
        write("noisy", &add_noise(&s.image, snr, a.seed)?)?;
    }
    io::write_curves(a.out.join("gt.json"), &s.ground_truth)?;
    io::write_curves_csv(a.out.join("gt.csv"), &s.ground_truth)?;
    Ok(())
}

fn filter_config(a: &FilterArgs) -> mafod::Result<FilterConfig> {
    if let Some(p) = &a.config {
        return io::read_json(p);
    }
    Ok(match a.method {
        Method::None => FilterConfig::None,
        Method::Mafod => {
            let mut scale = ScaleConfig::new(a.sigmas.0.clone(), a.theta);
            scale.polarity = match a.polarity {
                PolarityArg::Ridges => Polarity::Ridges,
                PolarityArg::Valleys => Polarity::Valleys,
            };
            let mut diffusivity = DiffusivityConfig::new(a.lambda);
            diffusivity.mode = match a.mode {
                ModeArg::Both => DiffusionMode::Both,
                ModeArg::RidgesOnly => DiffusionMode::RidgesOnly,
                ModeArg::ValleysOnly => DiffusionMode::ValleysOnly,
            };
            FilterConfig::Mafod {
                scale,
                diffusivity,
                schedule: ScheduleConfig {
                    t_total: a.time,
                    cycles: a.cycles,
                    tau_max: a.tau_max,
                },
            }
        }
        Method::Ifod => FilterConfig::Ifod {
            lambda: a.lambda,
            sigma: a.ifod_sigma,
            tau: a.tau.unwrap_or(0.03),
            steps: a.steps,
        },
        Method::PeronaMalik => FilterConfig::PeronaMalik {
            lambda: a.lambda,
            tau: a.tau.unwrap_or(0.2),
            steps: a.steps,
        },
        Method::MultiscaleGaussian => FilterConfig::MultiscaleGaussian(RidgeStrengthConfig {
            gamma: a.gamma,
            ..RidgeStrengthConfig::default()
        }),
        Method::Bilateral => FilterConfig::Bilateral {
            sigma_spatial: a.sigma_spatial,
            sigma_range: a.sigma_range,
        },
    })
}

fn filter(a: &FilterArgs) -> mafod::Result<()> {
    let cfg = filter_config(a)?;
    let u = io::read_field(&a.input)?;
    let reference = a.reference.as_ref().map(io::read_field).transpose()?;
    let mut monitor = Progress {
        every: a.progress,
        label: if matches!(cfg, FilterConfig::Mafod { .. }) { "cycle" } else { "step" },
        snapshot_dir: a.snapshot_dir.clone(),
        snapshot_every: a.snapshot_every,
    };
    if a.snapshot_every == Some(0) {
        return Err(Error::Parameter("snapshot interval must be positive".into()));
    }
    let stop = reference.as_ref().map(|_| EarlyStop { patience: a.patience });
    let out = apply_filter(&u, &cfg, reference.as_ref(), stop, &mut monitor)?;
    io::write_field(&a.output, &out.image, Quantize::Clamp)?;
    if let Some(p) = &a.scale_map {
        let map = match (&out.scale_map, &cfg) {
            (Some(m), _) => m.clone(),
            (None, FilterConfig::Mafod { scale, .. }) => mafod::solver::mafod_scale_map(&out.image, scale)?,
            _ => return Err(Error::Parameter(format!("{} has no scale map", cfg.name()))),
        };
        write_scale_map(p, &map)?;
    }
    match out.l2_to_reference {
        Some(l2) => eprintln!(
            "done: {} iterations, kept {} (t={:.4}), l2={l2:.6}",
            out.iterations, out.selected_iteration, out.selected_time
        ),
        None => eprintln!("done: {} iterations", out.iterations),
    }
    Ok(())
}

fn write_scale_map(p: &Path, map: &ScalarField2D) -> mafod::Result<()> {
    match p.extension().and_then(|e| e.to_str()) {
        Some("png") => io::write_colormap_png(p, map, None),
        _ => io::write_field(p, map, Quantize::Clamp),
    }
}

fn extract_cmd(a: &ExtractArgs) -> mafod::Result<()> {
    let u = io::read_field(&a.input)?;
    let cfg = ExtractionConfig {
        scale: match &a.sigmas {
            Some(s) => ExtractionScale::Selected(ScaleConfig::new(s.0.clone(), a.theta)),
            None => ExtractionScale::Fixed(a.sigma),
        },
        crease: CreaseConfig {
            strength_threshold: a.strength_threshold,
            link_gap: a.link_gap,
            min_vertices: a.min_vertices,
        },
        kinds: match a.kinds {
            KindsArg::Ridges => KindFilter::Ridges,
            KindsArg::Valleys => KindFilter::Valleys,
            KindsArg::Both => KindFilter::Both,
        },
    };
    let (curves, map) = extract(&u, &cfg)?;
    io::write_curves(&a.output, &curves)?;
    if let (Some(p), Some(m)) = (&a.scale_map, &map) {
        write_scale_map(p, m)?;
    }
    if let Some(p) = &a.overlay {
        let gt = a.ground_truth.as_ref().map(io::read_curves).transpose()?;
        io::write_overlay_png(p, &u, gt.as_ref(), Some(&curves), a.zoom)?;
    }
    eprintln!("{} curves", curves.len());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> mafod::Result<()> {
    let gt = io::read_curves(&a.ground_truth)?;
    let rec = io::read_curves(&a.curves)?;
    let cfg = EvalConfig {
        neighborhood: a.neighborhood,
        sample_step: a.sample_step,
        segment_length: (a.segment_length > 0.0).then_some(a.segment_length),
        coverage: match a.coverage {
            CoverageArg::Points => CoverageMode::Points,
            CoverageArg::Segments => CoverageMode::Segments,
        },
    };
    let r = match_and_score(&gt, &rec, &cfg)?;
    if let Some(p) = &a.json {
        io::write_json(p, &r)?;
    }
    println!("{}", r.summary());
    Ok(())
}

fn pipeline(a: &PipelineArgs) -> mafod::Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let label = if matches!(cfg.filter, FilterConfig::Mafod { .. }) { "cycle" } else { "step" };
    let every = a.progress;
    let m = run_pipeline(&cfg, a.out.as_deref(), &mut |k, t, l2| {
        if every > 0 && k % every == 0 {
            eprintln!("{label}={k} t={t:.4} l2={l2:.6}");
        }
    })?;
    for w in &m.result.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} curves{}",
        m.result.filter,
        m.result.curves,
        m.result.summary.as_deref().map(|s| format!(", {s}")).unwrap_or_default()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Filter(a) => filter(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
