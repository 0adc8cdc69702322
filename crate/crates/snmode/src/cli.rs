//! Command-line front end. Every command writes into its own output
//! directory, next to a `config.json` and a `manifest.json`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use snmode_core::data::{self, Dataset, TransferConfig, SHAPE_NAMES};
use snmode_core::field::StableField;
use snmode_core::geometry::ManifoldKind;
use snmode_core::solve::{self, Method, SolveConfig, Stepper, Trajectory};
use snmode_core::train::{self, EpochMetrics, Mode, Monitor, TrainConfig};

use crate::error::{Error, Result};
use crate::experiments::{self, BenchField, DefectSetup};
use crate::io;
use crate::manifest::Run;
use crate::svg::{self, Plot, Series};

#[derive(Parser, Debug)]
#[command(name = "snmode", version = crate::manifest::VERSION, about = "Learn stable vector fields on manifolds from demonstrations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic demonstration dataset on a manifold.
    GenDataset {
        /// One of s-curve, w-curve, bent-line, spiral, multi, line.
        #[arg(long)]
        shape: String,
        /// S3, SPD2, R<n>, or a product such as R3xS3.
        #[arg(long)]
        manifold: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a stable field on a dataset.
    Train {
        /// Dataset manifest or the directory holding `dataset.json`.
        #[arg(long)]
        dataset: PathBuf,
        /// TOML or JSON training config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Override the config's downsampling stride.
        #[arg(long)]
        downsample: Option<usize>,
        /// Print a progress line every this many epochs (0 = quiet).
        #[arg(long, default_value_t = 25)]
        progress: usize,
    },
    /// Integrate a trained model from a start point.
    Rollout {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated ambient coordinates, `demo:k`, or `perturb:k:r`.
        #[arg(long)]
        start: String,
        /// Needed for `demo:` and `perturb:` starts.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// `<ts|exp|dc>-<euler|rk4>`.
        #[arg(long, default_value = "exp-rk4")]
        solver: String,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the random direction of a `perturb:` start.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print every this many V values (1 = all).
        #[arg(long, default_value_t = 1)]
        print_every: usize,
    },
    /// RMSE between each demo and the model's rollout from its start.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "exp-rk4")]
        solver: String,
        #[arg(long, default_value_t = 1)]
        downsample: usize,
    },
    /// Error and wall time of every solver on a field with a known flow.
    SolverBench {
        #[arg(long, default_value = "S3")]
        manifold: String,
        /// `two-plane[:w1,w2]` or `geodesic` (S3), `congruence[:a,b,c,d]`
        /// (SPD2), `linear[:rate]` (R<n>).
        #[arg(long, default_value = "")]
        field: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, value_delimiter = ',', default_value = "100,200,400,800")]
        steps: Vec<usize>,
    },
    /// Rollouts of a random field with and without the equilibrium correction.
    DefectDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "R2")]
        manifold: String,
        #[arg(long, default_value_t = 400)]
        steps: usize,
    },
    /// Per-step cost of the stage-1 and stage-3 objectives.
    Timing {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Shot length; the config's `shot_max` when omitted.
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long)]
        downsample: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    ThreeStage,
    Direct,
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenDataset { shape, manifold, out, seed } => gen_dataset(&shape, &manifold, &out, seed),
        Command::Train { dataset, config, out, mode, downsample, progress } => {
            train_cmd(&dataset, config.as_deref(), &out, mode, downsample, progress)
        }
        Command::Rollout { model, start, dataset, solver, steps, dt, out, seed, print_every } => {
            rollout(&RolloutArgs { model, start, dataset, solver, steps, dt, out, seed, print_every })
        }
        Command::Evaluate { model, dataset, out, solver, downsample } => evaluate(&model, &dataset, &out, &solver, downsample),
        Command::SolverBench { manifold, field, out, horizon, steps } => solver_bench(&manifold, &field, &out, horizon, &steps),
        Command::DefectDemo { out, seed, manifold, steps } => defect_demo(&out, seed, &manifold, steps),
        Command::Timing { dataset, out, config, shot, reps, downsample } => timing(&dataset, &out, config.as_deref(), shot, reps, downsample),
    }
}

fn parse_manifold(s: &str) -> Result<ManifoldKind> {
    ManifoldKind::parse(s).map_err(|e| Error::Usage(e.to_string()))
}

/// `exp-rk4` → (Exp, Rk4).
pub fn parse_solver(s: &str) -> Result<(Method, Stepper)> {
    let bad = || Error::Usage(format!("unknown solver {s:?}; expected <ts|exp|dc>-<euler|rk4>"));
    let (m, st) = s.split_once('-').ok_or_else(bad)?;
    let method = match m.to_ascii_lowercase().as_str() {
        "ts" => Method::Ts,
        "exp" => Method::Exp,
        "dc" => Method::Dc,
        _ => return Err(bad()),
    };
    let stepper = match st.to_ascii_lowercase().as_str() {
        "euler" => Stepper::Euler,
        "rk4" => Stepper::Rk4,
        _ => return Err(bad()),
    };
    Ok((method, stepper))
}

fn write_svg(run: &mut Run, name: &str, panels: &[Plot], cols: usize) -> Result<()> {
    let path = run.output(name);
    io::write_bytes(&path, svg::render(panels, cols))
}

/// Two ambient coordinates with the largest spread, for 2-D previews.
fn preview_axes(points: &[&[f64]]) -> (usize, usize) {
    let m = points.first().map_or(0, |p| p.len());
    let var = |j: usize| {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / points.len() as f64;
        points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>()
    };
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| var(b).total_cmp(&var(a)).then(a.cmp(&b)));
    (idx.first().copied().unwrap_or(0), idx.get(1).copied().unwrap_or(0))
}

fn projection_plot(title: &str, trajs: &[(String, &[Vec<f64>], bool)], axes: (usize, usize)) -> Plot {
    let mut p = Plot::new(title, format!("c{}", axes.0), format!("c{}", axes.1));
    p.equal_aspect = true;
    for (label, pts, dashed) in trajs {
        let s = Series::new(label.clone(), pts.iter().map(|x| (x[axes.0], x[axes.1])).collect());
        p.series.push(if *dashed { s.dashed() } else { s });
    }
    p
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GenConfig<'a> {
    shape: &'a str,
    manifold: String,
    seed: u64,
    transfer: TransferConfig,
}

fn gen_dataset(shape: &str, manifold: &str, out: &Path, seed: u64) -> Result<()> {
    if !SHAPE_NAMES.contains(&shape) {
        return Err(Error::Usage(format!("unknown shape {shape:?}; expected one of {}", SHAPE_NAMES.join(", "))));
    }
    let m = parse_manifold(manifold)?;
    let cfg = GenConfig { shape, manifold: m.name(), seed, transfer: TransferConfig::default() };
    let mut run = Run::start(out, "gen-dataset", seed, &cfg)?;
    let ds = data::generate(shape, &m, seed)?;
    ds.validate()?;
    for p in io::save_dataset(out, &ds)? {
        run.record(&p);
    }
    let all: Vec<&[f64]> = ds.demos.iter().flat_map(|d| d.points.iter().map(|p| &p[..])).collect();
    let axes = preview_axes(&all);
    let trajs: Vec<(String, &[Vec<f64>], bool)> = ds.demos.iter().enumerate().map(|(k, d)| (format!("demo {k}"), &d.points[..], false)).collect();
    write_svg(&mut run, "preview.svg", &[projection_plot(&format!("{shape} on {}", m.name()), &trajs, axes)], 1)?;
    run.finish()?;
    println!("wrote {} demos of {} samples on {} to {}", ds.demos.len(), ds.demos[0].len(), m.name(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------

struct Progress {
    t0: Instant,
    every: usize,
}

impl Monitor for Progress {
    fn now(&self) -> f64 {
        self.t0.elapsed().as_secs_f64()
    }

    fn epoch(&mut self, m: &EpochMetrics) {
        if self.every > 0 && m.epoch.is_multiple_of(self.every) {
            let decay = m.decay_fraction.map(|d| format!(" decay {d:.3}")).unwrap_or_default();
            eprintln!(
                "[{:>7.1}s] {:<11} epoch {:>4} loss {:.6} shot {:>2} violations {}{decay}",
                self.now(),
                m.stage.name(),
                m.epoch,
                m.loss,
                m.shot,
                m.certificate_violations
            );
        }
    }
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => io::load_config(p),
        None => Ok(TrainConfig::default()),
    }
}

fn train_cmd(dataset: &Path, config: Option<&Path>, out: &Path, mode: Option<ModeArg>, downsample: Option<usize>, progress: usize) -> Result<()> {
    let mut cfg = load_train_config(config)?;
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::ThreeStage => Mode::ThreeStage,
            ModeArg::Direct => Mode::Direct,
        };
    }
    if let Some(d) = downsample {
        cfg.downsample = d;
    }
    let full = io::load_dataset(dataset)?;
    let ds = full.downsample(cfg.downsample);
    cfg.validate_for(&ds)?;
    let mut run = Run::start(out, "train", cfg.seed, &cfg)?;
    let mut field = train::init_field(&ds, &cfg)?;
    let mut mon = Progress { t0: Instant::now(), every: progress };
    let report = train::train(&mut field, &ds, &cfg, &mut mon)?;
    io::save_model(&run.output("model.json"), &field)?;
    io::save_metrics(&run.output("metrics.csv"), &report.metrics)?;
    let rows: Vec<Vec<String>> = report.stage_seconds.iter().map(|(s, t)| vec![s.name().to_string(), format!("{t:.3}")]).collect();
    io::save_table(&run.output("stages.csv"), &["stage", "seconds"], &rows)?;
    let rmse = train::evaluate(&field, &ds, Method::Exp, Stepper::Rk4)?;
    run.finish()?;
    for (s, t) in &report.stage_seconds {
        println!("{:<11} {t:>8.2} s", s.name());
    }
    let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
    println!("steps {}  training-set RMSE (Exp+RK4) {mean:.4}  per demo {rmse:.4?}", report.steps);
    println!("model written to {}", out.join("model.json").display());
    Ok(())
}

// ---------------------------------------------------------------------------

struct RolloutArgs {
    model: PathBuf,
    start: String,
    dataset: Option<PathBuf>,
    solver: String,
    steps: usize,
    dt: f64,
    out: PathBuf,
    seed: u64,
    print_every: usize,
}

#[derive(Serialize)]
struct RolloutConfig<'a> {
    model: &'a Path,
    start: &'a str,
    dataset: Option<&'a Path>,
    solver: &'a str,
    steps: usize,
    dt: f64,
    seed: u64,
    x0: &'a [f64],
}

/// Resolve a `--start` spec to a point on the model's manifold.
pub fn resolve_start(spec: &str, field: &StableField, dataset: Option<&Dataset>, seed: u64) -> Result<Vec<f64>> {
    let m = &field.manifold;
    let demo = |k: &str| -> Result<Vec<f64>> {
        let ds = dataset.ok_or_else(|| Error::Usage(format!("--start {spec} needs --dataset")))?;
        let k: usize = k.parse().map_err(|_| Error::Usage(format!("bad demo index in {spec:?}")))?;
        let d = ds.demos.get(k).ok_or_else(|| Error::Usage(format!("dataset has {} demos, asked for {k}", ds.demos.len())))?;
        Ok(d.first().to_vec())
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let x = match parts.as_slice() {
        ["demo", k] => demo(k)?,
        ["perturb", k, r] => {
            let r: f64 = r.parse().map_err(|_| Error::Usage(format!("bad radius in {spec:?}")))?;
            if !(r >= 0.0) {
                return Err(Error::Usage(format!("perturbation radius must be ≥ 0, got {r}")));
            }
            let x0 = demo(k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = m.random_tangent(&x0, &mut rng, r);
            m.exp(&x0, &u)
        }
        _ => {
            let x: Vec<f64> = spec
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Usage(format!("--start {spec:?} is neither coordinates, demo:k nor perturb:k:r")))?;
            m.check_dim(x.len()).map_err(|e| Error::Usage(e.to_string()))?;
            x
        }
    };
    m.validate_tol(&x, 1e-6).map_err(|e| Error::Usage(format!("start point rejected: {e}")))?;
    let mut x = x;
    m.normalize(&mut x);
    Ok(x)
}

fn rollout(a: &RolloutArgs) -> Result<()> {
    let field = io::load_model(&a.model)?;
    let (method, stepper) = parse_solver(&a.solver)?;
    if a.steps == 0 || !(a.dt > 0.0) {
        return Err(Error::Usage("need --steps ≥ 1 and --dt > 0".into()));
    }
    let ds = a.dataset.as_deref().map(io::load_dataset).transpose()?;
    if let Some(ds) = &ds {
        if ds.manifold != field.manifold {
            return Err(Error::Usage(format!("dataset is on {}, model on {}", ds.manifold.name(), field.manifold.name())));
        }
    }
    let x0 = resolve_start(&a.start, &field, ds.as_ref(), a.seed)?;
    let cfg_rec = RolloutConfig {
        model: &a.model,
        start: &a.start,
        dataset: a.dataset.as_deref(),
        solver: &a.solver,
        steps: a.steps,
        dt: a.dt,
        seed: a.seed,
        x0: &x0,
    };
    let mut run = Run::start(&a.out, "rollout", a.seed, &cfg_rec)?;
    let cfg = SolveConfig::new(method, stepper, a.steps, a.dt * a.steps as f64);
    let tr = solve::solve(&field.manifold, |x| field.stable_field(x), &x0, &field.goal, &cfg)?;
    let path = run.output("rollout.csv");
    io::save_trajectory(&path, &tr)?;
    run.record(&io::sidecar_path(&path));
    let v: Vec<f64> = tr.points.iter().map(|p| field.lyapunov_total(p)).collect();
    let rows: Vec<Vec<String>> = v.iter().enumerate().map(|(i, v)| vec![(i as f64 * tr.dt).to_string(), v.to_string()]).collect();
    io::save_table(&run.output("lyapunov.csv"), &["t", "V"], &rows)?;
    run.finish()?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let every = a.print_every.max(1);
    for (i, v) in v.iter().enumerate() {
        if i % every == 0 || i + 1 == tr.len() {
            let _ = writeln!(w, "step {i:>6}  t {:>9.4}  V {v:.6e}", i as f64 * tr.dt);
        }
    }
    let _ = writeln!(w, "final geodesic distance to goal: {:.6e}", field.manifold.distance(tr.last(), &field.goal));
    Ok(())
}

// ---------------------------------------------------------------------------

fn evaluate(model: &Path, dataset: &Path, out: &Path, solver: &str, downsample: usize) -> Result<()> {
    let field = io::load_model(model)?;
    let (method, stepper) = parse_solver(solver)?;
    if downsample == 0 {
        return Err(Error::Usage("--downsample must be ≥ 1".into()));
    }
    let ds = io::load_dataset(dataset)?.downsample(downsample);
    if ds.manifold != field.manifold {
        return Err(Error::Core(snmode_core::Error::InvalidDataset(format!(
            "manifold mismatch: dataset on {}, model on {}",
            ds.manifold.name(),
            field.manifold.name()
        ))));
    }
    #[derive(Serialize)]
    struct EvalConfig<'a> {
        model: &'a Path,
        dataset: &'a Path,
        solver: &'a str,
        downsample: usize,
    }
    let mut run = Run::start(out, "evaluate", 0, &EvalConfig { model, dataset, solver, downsample })?;
    let rmse = train::evaluate(&field, &ds, method, stepper)?;
    let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
    let mut rows: Vec<Vec<String>> = rmse.iter().enumerate().map(|(k, r)| vec![k.to_string(), r.to_string()]).collect();
    rows.push(vec!["mean".into(), mean.to_string()]);
    io::save_table(&run.output("evaluate.csv"), &["demo", "rmse"], &rows)?;

    // Overlay: each ambient coordinate against time, demo solid and
    // rollout dashed.
    let m = &field.manifold;
    let rollouts: Vec<Trajectory> = ds
        .demos
        .iter()
        .map(|d| {
            let cfg = SolveConfig::new(method, stepper, d.len() - 1, d.duration());
            solve::solve(m, |x| field.stable_field(x), d.first(), &field.goal, &cfg)
        })
        .collect::<snmode_core::Result<_>>()?;
    let panels: Vec<Plot> = (0..m.ambient_dim())
        .map(|j| {
            let mut p = Plot::new(format!("coordinate c{j}"), "t", format!("c{j}"));
            for (k, (d, r)) in ds.demos.iter().zip(&rollouts).enumerate() {
                let ser = |t: &Trajectory| t.points.iter().enumerate().map(|(i, x)| (i as f64 * t.dt, x[j])).collect();
                p.series.push(Series::new(format!("demo {k}"), ser(d)));
                p.series.push(Series::new(format!("rollout {k}"), ser(r)).dashed());
            }
            p
        })
        .collect();
    write_svg(&mut run, "overlay.svg", &panels, 4)?;
    run.finish()?;
    for (k, r) in rmse.iter().enumerate() {
        println!("demo {k}: RMSE {r:.5}");
    }
    println!("mean RMSE {mean:.5} ({} {solver})", ds.name);
    Ok(())
}

// ---------------------------------------------------------------------------

fn solver_bench(manifold: &str, spec: &str, out: &Path, horizon: f64, steps: &[usize]) -> Result<()> {
    let field = BenchField::parse(manifold, spec)?;
    if !(horizon > 0.0) || steps.is_empty() || steps.contains(&0) {
        return Err(Error::Usage("need --horizon > 0 and step counts ≥ 1".into()));
    }
    #[derive(Serialize)]
    struct BenchConfig {
        manifold: String,
        field: String,
        horizon: f64,
        steps: Vec<usize>,
    }
    let cfg = BenchConfig { manifold: field.manifold().name(), field: field.label(), horizon, steps: steps.to_vec() };
    let mut run = Run::start(out, "solver-bench", 0, &cfg)?;
    let rows = experiments::solver_bench(&field, horizon, steps)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:?}", r.method),
                format!("{:?}", r.stepper),
                r.steps.to_string(),
                r.error.to_string(),
                r.order.map(|o| o.to_string()).unwrap_or_default(),
                r.seconds.to_string(),
            ]
        })
        .collect();
    io::save_table(&run.output("bench.csv"), &["method", "stepper", "steps", "error", "order", "seconds"], &table)?;
    let mut err_plot = Plot::new(format!("endpoint error, {}", field.label()), "N", "geodesic error");
    let mut time_plot = Plot::new("wall time", "N", "seconds");
    for p in [&mut err_plot, &mut time_plot] {
        p.log_x = true;
        p.log_y = true;
    }
    for method in [Method::Ts, Method::Exp, Method::Dc] {
        for stepper in [Stepper::Euler, Stepper::Rk4] {
            let sel: Vec<_> = rows.iter().filter(|r| r.method == method && r.stepper == stepper).collect();
            let label = format!("{method:?}+{stepper:?}");
            err_plot.series.push(Series::new(label.clone(), sel.iter().map(|r| (r.steps as f64, r.error)).collect()));
            time_plot.series.push(Series::new(label, sel.iter().map(|r| (r.steps as f64, r.seconds)).collect()));
        }
    }
    write_svg(&mut run, "bench.svg", &[err_plot, time_plot], 2)?;
    run.finish()?;
    println!("{:<4} {:<6} {:>6} {:>12} {:>7} {:>10}", "meth", "step", "N", "error", "order", "seconds");
    for r in &rows {
        let order = r.order.map(|o| format!("{o:.3}")).unwrap_or_default();
        println!("{:<4} {:<6} {:>6} {:>12.4e} {:>7} {:>10.2e}", format!("{:?}", r.method), format!("{:?}", r.stepper), r.steps, r.error, order, r.seconds);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn defect_demo(out: &Path, seed: u64, manifold: &str, steps: usize) -> Result<()> {
    let setup = DefectSetup { manifold: parse_manifold(manifold)?, ..DefectSetup::default() };
    if steps == 0 {
        return Err(Error::Usage("--steps must be ≥ 1".into()));
    }
    #[derive(Serialize)]
    struct DefectConfig<'a> {
        setup: &'a DefectSetup,
        seed: u64,
        steps: usize,
        nearby_radius: f64,
    }
    let nearby_radius = 0.05;
    let mut run = Run::start(out, "defect-demo", seed, &DefectConfig { setup: &setup, seed, steps, nearby_radius })?;
    let trial = experiments::defect_trial(seed, &setup)?;
    let mut field = experiments::defect_field(seed, &setup)?;
    let m = field.manifold.clone();
    let xe = field.goal.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let starts: Vec<Vec<f64>> = std::iter::once(xe.clone())
        .chain((0..6).map(|_| {
            let u = m.random_tangent(&xe, &mut rng, nearby_radius);
            m.exp(&xe, &u)
        }))
        .collect();
    let mut panels = Vec::new();
    let mut finals = Vec::new();
    for (title, correction) in [("without correction", false), ("with correction", true)] {
        field.correction = correction;
        field.refresh();
        let trajs: Vec<Vec<Vec<f64>>> = starts
            .iter()
            .map(|x0| experiments::euler_rollout(&field, x0, setup.dt, steps))
            .collect::<Result<_>>()?;
        finals.push(trajs.iter().map(|t| m.distance(t.last().expect("non-empty"), &xe)).collect::<Vec<f64>>());
        let all: Vec<&[f64]> = trajs.iter().flatten().map(|p| &p[..]).collect();
        let axes = if m.ambient_dim() == 2 { (0, 1) } else { preview_axes(&all) };
        let labelled: Vec<(String, &[Vec<f64>], bool)> =
            trajs.iter().enumerate().map(|(k, t)| (if k == 0 { "from x_e".to_string() } else { String::new() }, &t[..], k > 0)).collect();
        panels.push(projection_plot(&format!("{title}, ‖f(x_e)‖ = {:.3}", if correction { trial.f_goal_corrected } else { trial.f_goal_uncorrected }), &labelled, axes));
    }
    write_svg(&mut run, "defect.svg", &panels, 2)?;
    #[derive(Serialize)]
    struct Report<'a> {
        trial: &'a experiments::DefectTrial,
        final_distance_uncorrected: &'a [f64],
        final_distance_corrected: &'a [f64],
    }
    io::write_json(&run.output("report.json"), &Report { trial: &trial, final_distance_uncorrected: &finals[0], final_distance_corrected: &finals[1] })?;
    run.finish()?;
    println!("‖h(x_e)‖ = {:.4}", trial.h_goal_norm);
    println!("‖f(x_e)‖ without correction = {:.4e}", trial.f_goal_uncorrected);
    println!("‖f(x_e)‖ with correction    = {:.4e}", trial.f_goal_corrected);
    match trial.exit_step {
        Some(k) => println!("uncorrected rollout from x_e left the {}-ball at step {k}", setup.radius),
        None => println!("uncorrected rollout from x_e stayed within {} for {} steps", setup.radius, setup.steps),
    }
    println!("corrected rollout from x_e stays at x_e bit for bit: {}", trial.corrected_stays);
    Ok(())
}

// ---------------------------------------------------------------------------

fn timing(dataset: &Path, out: &Path, config: Option<&Path>, shot: Option<usize>, reps: usize, downsample: Option<usize>) -> Result<()> {
    let mut cfg = load_train_config(config)?;
    if let Some(d) = downsample {
        cfg.downsample = d;
    }
    let ds = io::load_dataset(dataset)?.downsample(cfg.downsample);
    cfg.validate_for(&ds)?;
    let shot = shot.unwrap_or(cfg.shot_max);
    if shot < 2 || shot > ds.demos[0].len() - 1 || reps == 0 {
        return Err(Error::Usage(format!("need 2 ≤ shot ≤ {} and reps ≥ 1", ds.demos[0].len() - 1)));
    }
    #[derive(Serialize)]
    struct TimingConfig<'a> {
        train: &'a TrainConfig,
        shot: usize,
        reps: usize,
    }
    let mut run = Run::start(out, "timing", cfg.seed, &TimingConfig { train: &cfg, shot, reps })?;
    let t = experiments::stage_timing(&ds, &cfg, shot, reps)?;
    let row = |name: &str, s: &experiments::Summary| vec![name.to_string(), s.median.to_string(), s.q1.to_string(), s.q3.to_string(), s.iqr().to_string()];
    let rows = vec![row("stage1-base-multishoot", &t.base), row("stage3-stable-multishoot", &t.stable)];
    io::save_table(&run.output("timing.csv"), &["objective", "median_s", "q1_s", "q3_s", "iqr_s"], &rows)?;
    run.finish()?;
    println!("shot {shot}, batch {}, {reps} repetitions", t.batch);
    println!("stage 1 (base field):   median {:.4e} s  IQR {:.2e} s", t.base.median, t.base.iqr());
    println!("stage 3 (stable field): median {:.4e} s  IQR {:.2e} s", t.stable.median, t.stable.iqr());
    println!("ratio {:.3} (speedup {:.2}x)", t.ratio(), 1.0 / t.ratio());
    Ok(())
}
