//! Replayable experiments: one JSON configuration drives input generation,
//! filtering, crease extraction and evaluation, and every run leaves a
//! manifest from which it can be repeated.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    bilateral, ifod_step_regularized, iterate, multiscale_gaussian_with_scales, pm_second_order_step,
    RidgeStrengthConfig,
};
use crate::crease::{crease_field, extract_creases, marching_squares, CreaseConfig, CreaseKind, CurveSet};
use crate::error::{Error, Result};
use crate::evaluate::{l2_distance, match_and_score, EvalConfig, EvalResult};
use crate::grid::ScalarField2D;
use crate::io::{self, Quantize};
use crate::scale_select::ScaleConfig;
use crate::solver::{mafod_scale_map, run_mafod, CycleObserver, FedSchedule, Flow, MafodParams, DEFAULT_TAU_MAX};
use crate::synthgen::{add_noise, SyntheticSpec};
use crate::tensor::DiffusivityConfig;

/// Where the input image comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InputConfig {
    /// Generated image; noise is added when `snr` is set.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        snr: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
    /// Image on disk, with optional ground-truth curves and a noise-free
    /// reference image for early stopping.
    Files {
        image: PathBuf,
        #[serde(default)]
        ground_truth: Option<PathBuf>,
        #[serde(default)]
        reference: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub t_total: f64,
    pub cycles: usize,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
}

fn default_tau_max() -> f64 {
    DEFAULT_TAU_MAX
}

fn default_ifod_sigma() -> f64 {
    1.0
}

fn default_ifod_tau() -> f64 {
    0.03
}

fn default_pm_tau() -> f64 {
    0.2
}

/// Filter and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FilterConfig {
    None,
    Mafod {
        scale: ScaleConfig,
        diffusivity: DiffusivityConfig,
        schedule: ScheduleConfig,
    },
    /// Isotropic fourth-order diffusion; `sigma` regularises the Hessian
    /// that drives the diffusivity (0 for the plain model).
    Ifod {
        lambda: f64,
        #[serde(default = "default_ifod_sigma")]
        sigma: f64,
        #[serde(default = "default_ifod_tau")]
        tau: f64,
        steps: usize,
    },
    PeronaMalik {
        lambda: f64,
        #[serde(default = "default_pm_tau")]
        tau: f64,
        steps: usize,
    },
    MultiscaleGaussian(RidgeStrengthConfig),
    Bilateral {
        sigma_spatial: f64,
        sigma_range: f64,
    },
}

impl FilterConfig {
    pub const NAMES: [&'static str; 6] = ["none", "mafod", "ifod", "perona-malik", "multiscale-gaussian", "bilateral"];

    pub fn name(&self) -> &'static str {
        match self {
            FilterConfig::None => "none",
            FilterConfig::Mafod { .. } => "mafod",
            FilterConfig::Ifod { .. } => "ifod",
            FilterConfig::PeronaMalik { .. } => "perona-malik",
            FilterConfig::MultiscaleGaussian(_) => "multiscale-gaussian",
            FilterConfig::Bilateral { .. } => "bilateral",
        }
    }

    /// MAFOD with the given contrast, threshold, scales and schedule.
    pub fn mafod(lambda: f64, theta: f64, sigmas: Vec<f64>, t_total: f64, cycles: usize) -> Self {
        FilterConfig::Mafod {
            scale: ScaleConfig::new(sigmas, theta),
            diffusivity: DiffusivityConfig::new(lambda),
            schedule: ScheduleConfig {
                t_total,
                cycles,
                tau_max: DEFAULT_TAU_MAX,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            FilterConfig::None => Ok(()),
            FilterConfig::Mafod {
                scale,
                diffusivity,
                schedule,
            } => {
                scale.validate()?;
                diffusivity.validate()?;
                FedSchedule::new(schedule.t_total, schedule.cycles, schedule.tau_max).map(|_| ())
            }
            FilterConfig::Ifod { lambda, sigma, tau, .. } => {
                positive(*lambda, "lambda")?;
                positive(*tau, "tau")?;
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::param("IFOD sigma must be non-negative"));
                }
                Ok(())
            }
            FilterConfig::PeronaMalik { lambda, tau, .. } => {
                positive(*lambda, "lambda")?;
                positive(*tau, "tau")
            }
            FilterConfig::MultiscaleGaussian(cfg) => cfg.validate(),
            FilterConfig::Bilateral {
                sigma_spatial,
                sigma_range,
            } => {
                positive(*sigma_spatial, "spatial width")?;
                positive(*sigma_range, "range width")
            }
        }
    }
}

/// ℓ2 early stopping against the reference image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop { patience: 3 }
    }
}

/// Derivative scale used for crease extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionScale {
    Fixed(f64),
    /// Per-pixel scales selected on the filtered image.
    Selected(ScaleConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KindFilter {
    #[default]
    Ridges,
    Valleys,
    Both,
}

impl KindFilter {
    pub fn apply(self, curves: CurveSet) -> CurveSet {
        let keep = |k: CreaseKind| match self {
            KindFilter::Ridges => k == CreaseKind::Ridge,
            KindFilter::Valleys => k == CreaseKind::Valley,
            KindFilter::Both => true,
        };
        CurveSet {
            curves: curves.curves.into_iter().filter(|c| keep(c.kind)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub scale: ExtractionScale,
    pub crease: CreaseConfig,
    pub kinds: KindFilter,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            scale: ExtractionScale::Fixed(1.0),
            crease: CreaseConfig::default(),
            kinds: KindFilter::Ridges,
        }
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub input: InputConfig,
    pub filter: FilterConfig,
    /// Applies to iterative filters when a reference image is available.
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write the iterate every this many cycles or steps.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.input {
            InputConfig::Synthetic { snr, .. } => {
                if let Some(s) = snr {
                    if !(*s > 0.0 && s.is_finite()) {
                        return Err(Error::param(format!("snr must be positive, got {s}")));
                    }
                }
            }
            InputConfig::Files {
                image,
                ground_truth,
                reference,
            } => {
                for p in std::iter::once(image).chain(ground_truth).chain(reference) {
                    if !p.exists() {
                        return Err(Error::param(format!("input file {} does not exist", p.display())));
                    }
                }
            }
        }
        self.filter.validate()?;
        self.extraction.crease.validate()?;
        if let ExtractionScale::Selected(cfg) = &self.extraction.scale {
            cfg.validate()?;
        }
        if let ExtractionScale::Fixed(s) = self.extraction.scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param("extraction scale must be non-negative"));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::param("snapshot interval must be positive"));
        }
        self.evaluation.validate()
    }

    /// Reads a configuration, or the configuration recorded in a manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let value: serde_json::Value = io::read_json(path)?;
        let value = match value.get("config") {
            Some(c) if value.get("outputs").is_some() => c.clone(),
            _ => value,
        };
        Ok(serde_json::from_value(value)?)
    }
}

/// Input image with whatever ground truth is known about it.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub image: ScalarField2D,
    pub clean: Option<ScalarField2D>,
    pub ground_truth: Option<CurveSet>,
    pub warnings: Vec<String>,
}

pub fn prepare_input(cfg: &InputConfig) -> Result<PreparedInput> {
    match cfg {
        InputConfig::Synthetic { spec, snr, seed } => {
            let s = spec.generate()?;
            let image = match snr {
                Some(snr) => add_noise(&s.image, *snr, *seed)?,
                None => s.image.clone(),
            };
            Ok(PreparedInput {
                image,
                clean: Some(s.image),
                ground_truth: Some(s.ground_truth),
                warnings: s.warnings,
            })
        }
        InputConfig::Files {
            image,
            ground_truth,
            reference,
        } => Ok(PreparedInput {
            image: io::read_field(image)?,
            clean: reference.as_ref().map(io::read_field).transpose()?,
            ground_truth: ground_truth.as_ref().map(io::read_curves).transpose()?,
            warnings: Vec::new(),
        }),
    }
}

/// Result of one filter run.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub image: ScalarField2D,
    /// Cycles (MAFOD) or steps taken before stopping.
    pub iterations: usize,
    /// Iteration and diffusion time of the returned image.
    pub selected_iteration: usize,
    pub selected_time: f64,
    /// ℓ2 distance of the returned image to the reference, if any.
    pub l2_to_reference: Option<f64>,
    /// Per-pixel scales: selected `t` for the multi-scale Gaussian.
    pub scale_map: Option<ScalarField2D>,
}

/// Progress and snapshot hooks of a filter run.
pub trait FilterMonitor {
    /// Called for every observed iterate with the ℓ2 distance to the
    /// reference (or the image norm when there is none).
    fn progress(&mut self, _k: usize, _t: f64, _l2: f64) {}
    fn snapshot(&mut self, _k: usize, _u: &ScalarField2D) -> Result<()> {
        Ok(())
    }
    fn snapshot_every(&self) -> Option<usize> {
        None
    }
}

/// Monitor that does nothing.
pub struct Silent;

impl FilterMonitor for Silent {}

struct Observer<'a> {
    reference: Option<&'a ScalarField2D>,
    early_stop: Option<EarlyStop>,
    monitor: &'a mut dyn FilterMonitor,
    best: Option<(usize, f64, f64, ScalarField2D)>,
    stale: usize,
    last: usize,
    error: Option<Error>,
}

impl CycleObserver for Observer<'_> {
    fn observe(&mut self, k: usize, t: f64, u: &ScalarField2D) -> Flow {
        self.last = k;
        let l2 = match self.reference {
            Some(r) => l2_distance(u, r).unwrap_or(f64::INFINITY),
            None => u.l2_norm(),
        };
        self.monitor.progress(k, t, l2);
        if let Some(every) = self.monitor.snapshot_every() {
            if k % every == 0 {
                if let Err(e) = self.monitor.snapshot(k, u) {
                    self.error = Some(e);
                    return Flow::Stop;
                }
            }
        }
        let (Some(stop), Some(_)) = (self.early_stop, self.reference) else {
            return Flow::Continue;
        };
        if self.best.as_ref().is_none_or(|b| l2 < b.2) {
            self.best = Some((k, t, l2, u.clone()));
            self.stale = 0;
            Flow::Continue
        } else {
            self.stale += 1;
            if self.stale >= stop.patience.max(1) {
                Flow::Stop
            } else {
                Flow::Continue
            }
        }
    }
}

/// Runs the configured filter. With a reference and early stopping, the
/// iterate closest to the reference in ℓ2 is returned.
pub fn apply_filter(
    u: &ScalarField2D,
    filter: &FilterConfig,
    reference: Option<&ScalarField2D>,
    early_stop: Option<EarlyStop>,
    monitor: &mut dyn FilterMonitor,
) -> Result<FilterOutcome> {
    filter.validate()?;
    let l2_ref = |img: &ScalarField2D| reference.map(|r| l2_distance(img, r)).transpose();
    let direct = |image: ScalarField2D, scale_map: Option<ScalarField2D>| -> Result<FilterOutcome> {
        Ok(FilterOutcome {
            l2_to_reference: l2_ref(&image)?,
            image,
            iterations: 0,
            selected_iteration: 0,
            selected_time: 0.0,
            scale_map,
        })
    };
    let mut obs = Observer {
        reference,
        early_stop,
        monitor,
        best: None,
        stale: 0,
        last: 0,
        error: None,
    };
    let (last, dt) = match filter {
        FilterConfig::None => return direct(u.clone(), None),
        FilterConfig::Bilateral {
            sigma_spatial,
            sigma_range,
        } => return direct(bilateral(u, *sigma_spatial, *sigma_range)?, None),
        FilterConfig::MultiscaleGaussian(cfg) => {
            let (image, t) = multiscale_gaussian_with_scales(u, cfg)?;
            return direct(image, Some(t));
        }
        FilterConfig::Mafod {
            scale,
            diffusivity,
            schedule,
        } => {
            let sched = FedSchedule::new(schedule.t_total, schedule.cycles, schedule.tau_max)?;
            let params = MafodParams::new(scale.clone(), *diffusivity);
            let last = run_mafod(u, &params, &sched, &mut obs)?;
            (last, sched.cycle_time())
        }
        FilterConfig::Ifod {
            lambda,
            sigma,
            tau,
            steps,
        } => {
            let last = iterate(u, *steps, *tau, |v| ifod_step_regularized(v, *lambda, *tau, *sigma), &mut obs)?;
            (last, *tau)
        }
        FilterConfig::PeronaMalik { lambda, tau, steps } => {
            let last = iterate(u, *steps, *tau, |v| pm_second_order_step(v, *lambda, *tau), &mut obs)?;
            (last, *tau)
        }
    };
    if let Some(e) = obs.error.take() {
        return Err(e);
    }
    let iterations = obs.last;
    let (k, t, image) = match obs.best.take() {
        Some((k, t, _, img)) => (k, t, img),
        None => (iterations, iterations as f64 * dt, last),
    };
    Ok(FilterOutcome {
        l2_to_reference: l2_ref(&image)?,
        image,
        iterations,
        selected_iteration: k,
        selected_time: t,
        scale_map: None,
    })
}

/// Creases of `u` according to `cfg`, with the scale map when one was
/// selected.
pub fn extract(u: &ScalarField2D, cfg: &ExtractionConfig) -> Result<(CurveSet, Option<ScalarField2D>)> {
    let map = match &cfg.scale {
        ExtractionScale::Fixed(s) => {
            let curves = marching_squares(&crease_field(u, *s)?, &cfg.crease)?;
            return Ok((cfg.kinds.apply(curves), None));
        }
        ExtractionScale::Selected(scale) => mafod_scale_map(u, scale)?,
    };
    let curves = extract_creases(u, Some(&map), &cfg.crease)?;
    Ok((cfg.kinds.apply(curves), Some(map)))
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub input: f64,
    pub filter: f64,
    pub extraction: f64,
    pub evaluation: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub filter: String,
    pub iterations: usize,
    pub selected_iteration: usize,
    pub selected_time: f64,
    pub l2_input: Option<f64>,
    pub l2_filtered: Option<f64>,
    pub curves: usize,
    pub metrics: Option<EvalResult>,
    pub summary: Option<String>,
    pub warnings: Vec<String>,
}

/// Record of a run: the configuration that reproduces it, the files it
/// wrote and what it measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
    pub result: RunSummary,
    pub timing: Timing,
}

struct DirMonitor<'a> {
    dir: PathBuf,
    every: Option<usize>,
    progress: &'a mut dyn FnMut(usize, f64, f64),
    written: Vec<String>,
}

impl FilterMonitor for DirMonitor<'_> {
    fn progress(&mut self, k: usize, t: f64, l2: f64) {
        (self.progress)(k, t, l2);
    }

    fn snapshot(&mut self, k: usize, u: &ScalarField2D) -> Result<()> {
        let dir = self.dir.join("snapshots");
        std::fs::create_dir_all(&dir)?;
        for ext in ["sf2d", "png"] {
            let name = format!("snapshots/iter_{k:06}.{ext}");
            io::write_field(self.dir.join(&name), u, Quantize::Clamp)?;
            self.written.push(name);
        }
        Ok(())
    }

    fn snapshot_every(&self) -> Option<usize> {
        self.every
    }
}

/// Runs the experiment and writes its outputs into `out_dir` (or the
/// configured directory). `progress` receives `(iteration, time, l2)`.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(usize, f64, f64),
) -> Result<Manifest> {
    cfg.validate()?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::param("no output directory given"))?;
    std::fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut timing = Timing::default();
    let mut outputs = Vec::new();
    let put = |name: &str, outputs: &mut Vec<String>| {
        outputs.push(name.to_string());
        dir.join(name)
    };

    let input = prepare_input(&cfg.input)?;
    io::write_sf2d(put("input.sf2d", &mut outputs), &input.image)?;
    io::write_png(put("input.png", &mut outputs), &input.image, Quantize::MinMax)?;
    if let Some(clean) = &input.clean {
        io::write_sf2d(put("clean.sf2d", &mut outputs), clean)?;
    }
    if let Some(gt) = &input.ground_truth {
        io::write_curves(put("gt.json", &mut outputs), gt)?;
    }
    timing.input = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut monitor = DirMonitor {
        dir: dir.clone(),
        every: cfg.snapshot_every,
        progress,
        written: Vec::new(),
    };
    let outcome = apply_filter(&input.image, &cfg.filter, input.clean.as_ref(), cfg.early_stop, &mut monitor)?;
    outputs.append(&mut monitor.written);
    timing.filter = t.elapsed().as_secs_f64();
    io::write_sf2d(put("filtered.sf2d", &mut outputs), &outcome.image)?;
    io::write_png(put("filtered.png", &mut outputs), &outcome.image, Quantize::MinMax)?;
    if let Some(map) = &outcome.scale_map {
        io::write_sf2d(put("filter_scales.sf2d", &mut outputs), map)?;
    }

    let t = Instant::now();
    let (curves, scale_map) = extract(&outcome.image, &cfg.extraction)?;
    timing.extraction = t.elapsed().as_secs_f64();
    if let Some(map) = &scale_map {
        io::write_sf2d(put("scale_map.sf2d", &mut outputs), map)?;
        io::write_colormap_png(put("scale_map.png", &mut outputs), map, None)?;
    }
    io::write_curves(put("curves.json", &mut outputs), &curves)?;
    io::write_curves_csv(put("curves.csv", &mut outputs), &curves)?;
    io::write_overlay_png(
        put("overlay.png", &mut outputs),
        &outcome.image,
        input.ground_truth.as_ref(),
        Some(&curves),
        2,
    )?;

    let t = Instant::now();
    let metrics = match &input.ground_truth {
        Some(gt) if !gt.is_empty() => {
            let m = match_and_score(gt, &curves, &cfg.evaluation)?;
            io::write_json(put("metrics.json", &mut outputs), &m)?;
            Some(m)
        }
        _ => None,
    };
    timing.evaluation = t.elapsed().as_secs_f64();
    timing.total = start.elapsed().as_secs_f64();

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        outputs,
        result: RunSummary {
            filter: cfg.filter.name().to_string(),
            iterations: outcome.iterations,
            selected_iteration: outcome.selected_iteration,
            selected_time: outcome.selected_time,
            l2_input: input.clean.as_ref().map(|c| l2_distance(&input.image, c)).transpose()?,
            l2_filtered: outcome.l2_to_reference,
            curves: curves.len(),
            summary: metrics.as_ref().map(EvalResult::summary),
            metrics,
            warnings: input.warnings,
        },
        timing,
    };
    io::write_json(dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
