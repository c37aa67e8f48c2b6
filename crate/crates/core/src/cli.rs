//! Run configuration and the `train` / `eval` / `report` / `gradcheck`
//! commands behind the `mixact` binary.
//!
//! Configuration comes from an optional flat `key = value` file (`#` starts a
//! comment) with command-line flags taking precedence. Recognised keys:
//!
//! ```text
//! dataset       = mnist | fashion_mnist | kmnist
//! data_root     = data
//! out_dir       = runs/default
//! seed          = 0
//! batch_size    = 64
//! subset_train  = 2000          # or `none`
//! subset_test   = 1000          # or `none`
//! epochs_scale  = 1
//! schedule      = backbone:1e-3:10, mixture:1e-2:10, backbone:1e-3:10
//! ranges        = -3:3, -1:1, -10:10, -100:100
//! adam_moments  = keep | reset
//! curve_points  = 601
//! fit_points    = 201
//! ```
//!
//! Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, stencil_reliable, Fault, GradcheckReport, Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{expected_files, Dataset, DatasetName, Split};
use crate::error::{Error, Result};
use crate::mixture::MixtureWeights;
use crate::model::{forward_graph, Group, Model, ModelConfig, ACTIVATION_LAYERS, IMAGE_SIDE};
use crate::optim::MomentPolicy;
use crate::report::{
    export_curves, fit_leaky_relu, format_weight_table, sample_curve, trend_annotation,
    weight_table, LeakyFit, DEFAULT_CURVE_POINTS, DEFAULT_FIT_POINTS, DEFAULT_RANGES,
};
use crate::schedule::{evaluate, PhaseConfig, Schedule, TrainOptions, TrainReport, Trainer};

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub batch_size: usize,
    pub subset_train: Option<usize>,
    pub subset_test: Option<usize>,
    pub epochs_scale: f64,
    pub schedule: Schedule,
    pub curve_ranges: Vec<(f64, f64)>,
    pub moment_policy: MomentPolicy,
    pub curve_points: usize,
    pub fit_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Mnist,
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            batch_size: 64,
            subset_train: None,
            subset_test: None,
            epochs_scale: 1.0,
            schedule: Schedule::three_cycle(),
            curve_ranges: DEFAULT_RANGES.to_vec(),
            moment_policy: MomentPolicy::Keep,
            curve_points: DEFAULT_CURVE_POINTS,
            fit_points: DEFAULT_FIT_POINTS,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

/// Parses `min:max`.
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .trim()
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("range `{s}` is not `min:max`")))?;
    let (lo, hi): (f64, f64) = (parse_num("range", a.trim())?, parse_num("range", b.trim())?);
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Config(format!("range `{s}` is empty")));
    }
    Ok((lo, hi))
}

fn parse_phase(s: &str) -> Result<PhaseConfig> {
    let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
    let [group, lr, epochs] = parts.as_slice() else {
        return Err(Error::Config(format!(
            "phase `{s}` is not `group:lr:epochs`"
        )));
    };
    let group: Group = group
        .parse()
        .map_err(|e: Error| Error::Config(e.to_string()))?;
    PhaseConfig::new(
        group,
        parse_num("schedule", lr)?,
        parse_num("schedule", epochs)?,
    )
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = value.parse()?,
            "data_root" => self.data_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "batch_size" => {
                self.batch_size = parse_num(key, value)?;
                if self.batch_size == 0 {
                    return Err(Error::Config("batch_size must be at least 1".into()));
                }
            }
            "subset_train" => self.subset_train = parse_optional(key, value)?,
            "subset_test" => self.subset_test = parse_optional(key, value)?,
            "epochs_scale" => {
                self.epochs_scale = parse_num(key, value)?;
                if !(self.epochs_scale > 0.0 && self.epochs_scale.is_finite()) {
                    return Err(Error::Config("epochs_scale must be positive".into()));
                }
            }
            "schedule" => {
                let phases = value
                    .split(',')
                    .map(parse_phase)
                    .collect::<Result<Vec<_>>>()?;
                self.schedule = Schedule::new(phases)?;
            }
            "ranges" => {
                self.curve_ranges = value.split(',').map(parse_range).collect::<Result<_>>()?;
            }
            "adam_moments" => {
                self.moment_policy = match value {
                    "keep" => MomentPolicy::Keep,
                    "reset" => MomentPolicy::Reset,
                    other => {
                        return Err(Error::Config(format!(
                            "adam_moments must be keep or reset, got `{other}`"
                        )))
                    }
                }
            }
            "curve_points" => self.curve_points = parse_num(key, value)?,
            "fit_points" => self.fit_points = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    n + 1
                ))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// The schedule with `epochs_scale` applied.
    pub fn effective_schedule(&self) -> Result<Schedule> {
        self.schedule.scale_epochs(self.epochs_scale)
    }

    /// `key = value` text that [`RunConfig::apply_text`] reads back to the
    /// same configuration.
    pub fn echo(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |n| n.to_string());
        let phases: Vec<String> = self
            .schedule
            .phases()
            .iter()
            .map(|p| format!("{}:{:e}:{}", p.trainable, p.lr, p.epochs))
            .collect();
        let ranges: Vec<String> = self
            .curve_ranges
            .iter()
            .map(|(a, b)| format!("{a}:{b}"))
            .collect();
        let mut s = String::new();
        writeln!(s, "dataset = {}", self.dataset).unwrap();
        writeln!(s, "data_root = {}", self.data_root.display()).unwrap();
        writeln!(s, "out_dir = {}", self.out_dir.display()).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "subset_train = {}", opt(self.subset_train)).unwrap();
        writeln!(s, "subset_test = {}", opt(self.subset_test)).unwrap();
        writeln!(s, "epochs_scale = {}", self.epochs_scale).unwrap();
        writeln!(s, "schedule = {}", phases.join(", ")).unwrap();
        writeln!(s, "ranges = {}", ranges.join(", ")).unwrap();
        writeln!(
            s,
            "adam_moments = {}",
            match self.moment_policy {
                MomentPolicy::Keep => "keep",
                MomentPolicy::Reset => "reset",
            }
        )
        .unwrap();
        writeln!(s, "curve_points = {}", self.curve_points).unwrap();
        writeln!(s, "fit_points = {}", self.fit_points).unwrap();
        s
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run (remove {} if stale)",
                out_dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_split(cfg: &RunConfig, split: Split, subset: Option<usize>) -> Result<Dataset> {
    let d = Dataset::load(&cfg.data_root, cfg.dataset, split)?;
    Ok(match subset {
        Some(n) => d.subset(n, cfg.seed),
        None => d,
    })
}

/// Curves, LeakyReLU fits and the weight table for `model`, written under
/// `out_dir`. Returns the printable summary.
fn write_analysis(
    model: &Model,
    ranges: &[(f64, f64)],
    curve_points: usize,
    fit_points: usize,
    out_dir: &Path,
) -> Result<(String, Vec<LeakyFit>)> {
    let rows = weight_table(model);
    let table = format_weight_table(&rows);
    fs::write(out_dir.join("weight_table.txt"), &table)?;

    let mut samples = Vec::new();
    for w in model.mixtures() {
        for &(lo, hi) in ranges {
            samples.push(sample_curve(&w, lo, hi, curve_points)?);
        }
    }
    export_curves(&samples, &out_dir.join("curves"))?;

    let mut fits = Vec::new();
    let mut fit_text = String::from("layer,h1,h2,residual\n");
    for w in model.mixtures() {
        let fit = fit_leaky_relu(&w, -1.0, 1.0, fit_points)?;
        writeln!(
            fit_text,
            "{},{},{},{}",
            w.layer_name(),
            fit.h1,
            fit.h2,
            fit.residual
        )
        .unwrap();
        fits.push(fit);
    }
    fs::write(out_dir.join("leaky_fit.csv"), &fit_text)?;

    let mut summary = table;
    summary.push_str("\nLeakyReLU fit on [-1, 1]:\n");
    for (w, f) in model.mixtures().iter().zip(&fits) {
        writeln!(
            summary,
            "{}: h1 = {:.4}, h2 = {:.4}, rms residual = {:.3e}",
            w.layer_name(),
            f.h1,
            f.h2,
            f.residual
        )
        .unwrap();
    }
    summary.push('\n');
    summary.push_str(&trend_annotation(&rows));
    Ok((summary, fits))
}

/// Runs the configured schedule and writes every run artifact into
/// `cfg.out_dir`: `config_echo`, `metrics.csv`, `checkpoints/`,
/// `weight_table.txt`, `curves/`, `leaky_fit.csv`, `report.json`, `run.log`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let _lock = RunLock::acquire(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config_echo"), cfg.echo())?;
    let schedule = cfg.effective_schedule()?;

    let train = load_split(cfg, Split::Train, cfg.subset_train)?;
    let test = load_split(cfg, Split::Test, cfg.subset_test)?;

    let started = Instant::now();
    let mut trainer = Trainer::new(
        Model::new(ModelConfig::standard(), cfg.seed),
        TrainOptions {
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            moment_policy: cfg.moment_policy,
            out_dir: Some(cfg.out_dir.clone()),
        },
    );
    let report = trainer.run_schedule(&train, &test, &schedule)?;

    let mut log = String::new();
    writeln!(
        log,
        "dataset {} | train {} | test {} | seed {}",
        cfg.dataset,
        train.len(),
        test.len(),
        cfg.seed
    )
    .unwrap();
    for p in &report.phases {
        let last = p.epochs.last().expect("phases have epochs");
        writeln!(
            log,
            "phase {} ({} lr {:e}, {} epochs): loss {:.4}, test accuracy {:.4}, {:.1}s",
            p.phase,
            p.config.trainable,
            p.config.lr,
            p.config.epochs,
            last.train_loss,
            last.test_accuracy,
            p.wall_clock_secs
        )
        .unwrap();
    }
    let (summary, _) = write_analysis(
        &trainer.model,
        &cfg.curve_ranges,
        cfg.curve_points,
        cfg.fit_points,
        &cfg.out_dir,
    )?;
    log.push('\n');
    log.push_str(&summary);
    writeln!(
        log,
        "\ntotal wall clock {:.1}s",
        started.elapsed().as_secs_f64()
    )
    .unwrap();

    fs::write(
        cfg.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    fs::write(cfg.out_dir.join("run.log"), &log)?;
    print!("{log}");
    Ok(report)
}

/// Test accuracy of a checkpoint on the configured dataset.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<f64> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config_echo"), cfg.echo())?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let test = load_split(cfg, Split::Test, cfg.subset_test)?;
    let acc = evaluate(&ckpt.model, &test)?;
    println!(
        "{}: test accuracy {acc:.4} on {} {} samples",
        checkpoint.display(),
        test.len(),
        cfg.dataset
    );
    Ok(acc)
}

/// Weight table, curve files and LeakyReLU fits for a checkpoint.
pub fn cmd_report(checkpoint: &Path, cfg: &RunConfig) -> Result<String> {
    let _lock = RunLock::acquire(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config_echo"), cfg.echo())?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let (summary, _) = write_analysis(
        &ckpt.model,
        &cfg.curve_ranges,
        cfg.curve_points,
        cfg.fit_points,
        &cfg.out_dir,
    )?;
    print!("{summary}");
    Ok(summary)
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GradcheckSize {
    Tiny,
}

/// Synthetic gradient-check problem: the reduced model at a randomized
/// parameter point and a 4-image batch.
#[derive(Debug, Clone)]
pub struct GradcheckProblem {
    pub model: Model,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Side of the random texture patch in the synthetic images.
const PATCH: usize = 4;
/// Batch draws tried before giving up on a reliable one.
pub const GRADCHECK_MAX_DRAWS: u64 = 64;

impl GradcheckProblem {
    /// Draw `draw` for `seed`. Biases are moved off zero and the mixture
    /// weights off the uniform point so every parameter has a distinct,
    /// nonzero gradient. Images are black with one textured patch, which
    /// keeps the number of ReLU and max-pool kinks the stencil can hit small;
    /// background ties move together under any perturbation.
    pub fn draw(seed: u64, draw: u64) -> Result<Self> {
        let config = ModelConfig::tiny();
        let mut model = Model::new(config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw + 1);
        for (layer, name) in ACTIVATION_LAYERS.iter().enumerate() {
            let w: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..1.5));
            model.set_mixture(layer, &MixtureWeights::new(*name, w)?);
        }
        for p in model.params_mut() {
            if p.group == Group::Backbone && p.name.ends_with(".bias") {
                for v in p.tensor.data_mut() {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    *v = sign * rng.gen_range(0.1..0.5);
                }
            }
        }
        let n = 4;
        let side = IMAGE_SIDE;
        let off = (side - PATCH) / 2;
        let mut pixels = vec![0.0; n * side * side];
        for img in pixels.chunks_exact_mut(side * side) {
            for r in off..off + PATCH {
                for c in off..off + PATCH {
                    img[r * side + c] = rng.gen_range(0.0..1.0);
                }
            }
        }
        let images = Tensor::new(&[n, 1, side, side], pixels)?;
        let labels = (0..n).map(|_| rng.gen_range(0..config.classes)).collect();
        Ok(Self {
            model,
            images,
            labels,
        })
    }

    fn params(&self) -> Vec<Tensor> {
        self.model
            .params()
            .iter()
            .map(|p| p.tensor.clone())
            .collect()
    }

    fn loss<'a>(&'a self, fault: Option<Fault>) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a {
        move |tape, vars| {
            if let Some(f) = fault {
                tape.inject_fault(f);
            }
            let input = tape.leaf(self.images.clone());
            let logits = forward_graph(self.model.config(), tape, vars, input)?;
            tape.softmax_cross_entropy(logits, &self.labels)
        }
    }

    /// Whether central differences at step `h` are accurate to a tenth of
    /// [`GRADCHECK_TOLERANCE`] for this problem (see [`stencil_reliable`]).
    pub fn is_reliable(&self, h: f64) -> Result<bool> {
        stencil_reliable(
            &self.params(),
            h,
            GRADCHECK_TOLERANCE / 10.0,
            self.loss(None),
        )
    }

    pub fn check(&self, h: f64, fault: Option<Fault>) -> Result<GradcheckReport> {
        gradcheck(&self.params(), h, self.loss(fault))
    }
}

/// Central-difference check of the full loss gradient (every backbone and
/// mixture parameter) on the reduced model (2/4 channels, 16 hidden) over a
/// 4-image synthetic batch, with step [`GRADCHECK_STEP`]. A difference
/// quotient that straddles a ReLU or max-pool kink does not estimate the
/// derivative, and where the gradient nearly cancels the quotient's O(h²)
/// truncation dominates. Batches are therefore drawn until the quotient is
/// itself trustworthy, judged from forward evaluations alone.
/// Fails with [`Error::Gradcheck`] above [`GRADCHECK_TOLERANCE`].
pub fn cmd_gradcheck(seed: u64, fault: Option<Fault>) -> Result<GradcheckReport> {
    let mut draw = 0;
    let problem = loop {
        let problem = GradcheckProblem::draw(seed, draw)?;
        if problem.is_reliable(GRADCHECK_STEP)? || draw + 1 == GRADCHECK_MAX_DRAWS {
            break problem;
        }
        draw += 1;
    };
    let report = problem.check(GRADCHECK_STEP, fault)?;
    println!(
        "gradcheck (tiny, seed {seed}, batch draw {draw}): {} elements, {} kink crossings, \
         max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.elements,
        report.kink_crossings,
        report.max_rel_error,
        problem.model.params()[report.worst.0].name,
        report.worst.1,
        report.analytic,
        report.numeric
    );
    if report.max_rel_error > GRADCHECK_TOLERANCE {
        return Err(Error::Gradcheck {
            max_rel_error: report.max_rel_error,
            tolerance: GRADCHECK_TOLERANCE,
        });
    }
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(
    name = "mixact",
    about = "Learnable ReLU/tanh/sin mixture activations in a small CNN"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the training schedule and write all run artifacts.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Weight table, activation curves and LeakyReLU fits of a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of the backward pass on a reduced model.
    Gradcheck {
        #[arg(long, value_enum, default_value = "tiny")]
        size: GradcheckSize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub subset_train: Option<usize>,
    #[arg(long)]
    pub subset_test: Option<usize>,
    /// Multiplies every phase's epoch count.
    #[arg(long)]
    pub epochs_scale: Option<f64>,
    /// Curve range `min:max`; repeatable. Replaces the configured ranges.
    #[arg(long = "range", allow_hyphen_values = true)]
    pub ranges: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.set("dataset", v)?;
        }
        if let Some(v) = &self.data_root {
            cfg.data_root = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.set("batch_size", &v.to_string())?;
        }
        if let Some(v) = self.subset_train {
            cfg.subset_train = Some(v);
        }
        if let Some(v) = self.subset_test {
            cfg.subset_test = Some(v);
        }
        if let Some(v) = self.epochs_scale {
            cfg.set("epochs_scale", &v.to_string())?;
        }
        if !self.ranges.is_empty() {
            cfg.curve_ranges = self
                .ranges
                .iter()
                .map(|r| parse_range(r))
                .collect::<Result<_>>()?;
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            cmd_train(&cfg).map_err(|e| match e {
                Error::Data { .. } => {
                    let expected: Vec<String> = expected_files(&cfg.data_root, cfg.dataset)
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect();
                    eprintln!("expected dataset files:\n  {}", expected.join("\n  "));
                    e
                }
                e => e,
            })?;
        }
        Command::Eval { checkpoint, run } => {
            cmd_eval(&run.resolve()?, &checkpoint)?;
        }
        Command::Report { checkpoint, run } => {
            cmd_report(&checkpoint, &run.resolve()?)?;
        }
        Command::Gradcheck {
            size: GradcheckSize::Tiny,
            seed,
            out,
            inject_fault,
        } => {
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                let mut f = File::create(dir.join("config_echo"))?;
                writeln!(f, "size = tiny\nseed = {seed}\nh = {GRADCHECK_STEP}\ntolerance = {GRADCHECK_TOLERANCE}")?;
            }
            cmd_gradcheck(seed, inject_fault.then_some(Fault::SinBackwardScaled))?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_three_cycle_plan() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.schedule, Schedule::three_cycle());
        assert_eq!(cfg.curve_ranges, DEFAULT_RANGES.to_vec());
        assert_eq!(cfg.batch_size, 64);
    }

    #[test]
    fn config_text_parses_and_echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# desk run\ndataset = kmnist\nseed = 9\nsubset_train = 200 # small\n\
             schedule = backbone:1e-3:2, mixture:0.01:1\nranges = -2:2, -0.5:0.5\nadam_moments = reset\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset, DatasetName::Kmnist);
        assert_eq!(cfg.subset_train, Some(200));
        assert_eq!(cfg.schedule.phases().len(), 2);
        assert_eq!(cfg.curve_ranges, vec![(-2.0, 2.0), (-0.5, 0.5)]);
        assert_eq!(cfg.moment_policy, MomentPolicy::Reset);

        let mut back = RunConfig::default();
        back.apply_text(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        for text in [
            "epochs = 3",
            "seed = many",
            "dataset = cifar",
            "schedule = head:1e-3:1",
            "ranges = 3:1",
            "batch_size = 0",
            "no equals sign",
        ] {
            let err = cfg.apply_text(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "seed = 3\nbatch_size = 32\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            seed: Some(5),
            epochs_scale: Some(0.2),
            ranges: vec!["-4:4".into()],
            ..RunArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.seed, cfg.batch_size), (5, 32));
        assert_eq!(cfg.curve_ranges, vec![(-4.0, 4.0)]);
        assert!(cfg
            .effective_schedule()
            .unwrap()
            .phases()
            .iter()
            .all(|p| p.epochs == 2));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
