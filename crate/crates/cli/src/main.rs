use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtot::bench::{run_benchmark_with, BenchConfig, Method};
use mtot::io::{load_model, read_dataset, save_model, save_tensor, write_dataset, SavedModel};
use mtot::metrics::{mspe, smspe};
use mtot::pcr::{pcr_cv, pcr_fit, VARIANCE_GRID};
use mtot::simgen::{generate, Axis, SimKind, SimSpec};
use mtot::tuning::{cross_validate, fit_tuned, RankGrid};
use mtot::{fit, Error, FitConfig, Result};

#[derive(Parser, Debug)]
#[command(name = "mtot", version, about = "Multiple tensor-on-tensor regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a simulated dataset as a manifest plus .ten files.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset manifest and write a model archive.
    Fit(FitArgs),
    /// Predict the response of a dataset with a saved model.
    Predict(PredictArgs),
    /// Cross-validate ranks (mtot) or the retained variance (pcr).
    Cv(CvArgs),
    /// Replicated simulation study written as CSV.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    kind: SimKind,
    /// Noise standard deviation (defaults to the study's own).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Reduced wafer study (50 x 100 polar grid, 100 / 25 samples).
    #[arg(long)]
    desk: bool,
    /// Coordinate of the wafer distortion response.
    #[arg(long, value_parser = parse_axis, default_value = "x")]
    axis: Axis,
}

impl DataArgs {
    fn spec(&self) -> Result<SimSpec> {
        let mut spec = if self.desk {
            if self.kind != SimKind::Wafer {
                return Err(Error::InvalidConfig("--desk only applies to the wafer study".into()));
            }
            SimSpec::wafer_desk()
        } else {
            SimSpec::new(self.kind)
        };
        spec.seed = self.seed;
        if let Some(s) = self.sigma {
            spec.sigma = s;
        }
        if let Some(n) = self.n_train {
            spec.n_train = n;
        }
        if let Some(n) = self.n_test {
            spec.n_test = n;
        }
        spec.wafer_axis = self.axis;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Comma-separated ranks, one per input followed by the output rank.
    /// Without it the ranks are chosen by cross-validation.
    #[arg(long, value_parser = parse_ranks)]
    ranks: Option<Ranks>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Retained-variance fraction for pcr (chosen by cross-validation if
    /// absent).
    #[arg(long)]
    variance: Option<f64>,
}

impl SolverArgs {
    fn base(&self, seed: u64) -> FitConfig {
        let mut c = FitConfig::new(Vec::new(), 1);
        c.tol = self.tol;
        c.max_iter = self.max_iter;
        c.seed = seed;
        if let Some((inputs, out)) = self.ranks.as_ref().map(Ranks::split) {
            c.input_ranks = inputs.to_vec();
            c.output_rank = out;
        }
        c
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "mtot")]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Model archive to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset manifest supplying the inputs (and the response to score).
    #[arg(long)]
    data: PathBuf,
    /// .ten file for the predicted response.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "mtot")]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV report to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    kind: SimKind,
    /// Comma-separated noise levels (defaults to the study's own).
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "mtot,pcr")]
    method: Vec<Method>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    desk: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-replication CSV (seeds, selections, scores).
    #[arg(long)]
    log: Option<PathBuf>,
}

/// Input ranks followed by the output rank.
#[derive(Clone, Debug)]
struct Ranks(Vec<usize>);

impl Ranks {
    fn split(&self) -> (&[usize], usize) {
        let (out, inputs) = self.0.split_last().expect("validated non-empty");
        (inputs, *out)
    }
}

fn parse_ranks(s: &str) -> std::result::Result<Ranks, String> {
    let ranks = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a rank")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ranks.len() < 2 || ranks.contains(&0) {
        return Err("need positive ranks for at least one input and the output".into());
    }
    Ok(Ranks(ranks))
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    match s {
        "x" => Ok(Axis::X),
        "y" => Ok(Axis::Y),
        _ => Err(format!("axis must be x or y, got '{s}'")),
    }
}

fn shape_label(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = args.data.spec()?;
    let data = generate(&spec)?;
    let kind = spec.kind.name();
    let path = write_dataset(
        &args.out,
        "train",
        kind,
        spec.seed,
        spec.sigma,
        &data.train,
        &data.input_names,
        data.train_clean.as_ref(),
    )?;
    println!("kind {kind} sigma {} seed {}", spec.sigma, spec.seed);
    let describe = |label: &str, d: &mtot::Dataset, path: &Path| {
        let inputs: Vec<String> = d.xs.iter().map(|x| shape_label(x.shape())).collect();
        println!(
            "{label}: inputs [{}] output {} -> {}",
            inputs.join(", "),
            shape_label(d.y.shape()),
            path.display()
        );
    };
    describe("train", &data.train, &path);
    if let Some(test) = &data.test {
        let path = write_dataset(
            &args.out,
            "test",
            kind,
            spec.seed,
            spec.sigma,
            test,
            &data.input_names,
            data.test_clean.as_ref(),
        )?;
        describe("test", test, &path);
    }
    Ok(())
}

fn fit_model(args: &FitArgs) -> Result<()> {
    let loaded = read_dataset(&args.data)?;
    let data = &loaded.data;
    let model = match args.method {
        Method::Mtot => {
            let base = args.solver.base(args.seed);
            let model = if args.solver.ranks.is_some() {
                fit(data, &base)?
            } else {
                let (report, model) = fit_tuned(data, args.solver.folds, args.seed, &base)?;
                println!("cross-validated ranks {}", shape_label(&report.chosen));
                model
            };
            println!(
                "final loss {:e} after {} iterations (converged: {})",
                model.final_loss(),
                model.iterations(),
                model.converged
            );
            SavedModel::Mtot(model)
        }
        Method::Pcr => {
            let model = match args.solver.variance {
                Some(v) => pcr_fit(data, v)?,
                None => pcr_cv(data, &VARIANCE_GRID, args.solver.folds, args.seed)?.model,
            };
            println!(
                "pcr v {} with {} input and {} output components",
                model.v,
                model.input_components(),
                model.output_components()
            );
            SavedModel::Pcr(model)
        }
    };
    save_model(&args.out, &model)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let loaded = read_dataset(&args.data)?;
    let pred = model.predict(&loaded.data.xs)?;
    save_tensor(&args.out, &pred)?;
    let y = &loaded.data.y;
    println!(
        "{} prediction {} -> {}",
        model.kind(),
        shape_label(pred.shape()),
        args.out.display()
    );
    println!("mspe {:e}", mspe(y, &pred)?);
    if y.norm_sq() > 0.0 {
        println!("smspe {:e}", smspe(y, &pred)?);
    }
    Ok(())
}

fn cv(args: &CvArgs) -> Result<()> {
    let loaded = read_dataset(&args.data)?;
    let data = &loaded.data;
    let csv = match args.method {
        Method::Mtot => {
            let base = args.solver.base(args.seed);
            let grid = match &args.solver.ranks {
                Some(r) => {
                    let (inputs, out) = r.split();
                    RankGrid::single(inputs, out)
                }
                None => RankGrid::from_data(data)?,
            };
            let report = cross_validate(data, &grid, args.solver.folds, args.seed, &base)?;
            println!(
                "chosen ranks {} ({} tuples scored, {} skipped)",
                shape_label(&report.chosen),
                report.scores.len(),
                report.skipped.len()
            );
            report.to_csv()
        }
        Method::Pcr => {
            let grid = args.solver.variance.map_or(VARIANCE_GRID.to_vec(), |v| vec![v]);
            let sel = pcr_cv(data, &grid, args.solver.folds, args.seed)?;
            println!("chosen v {}", sel.v);
            let mut s = String::from("v,mean_sq_error\n");
            for (v, e) in &sel.scores {
                let _ = writeln!(s, "{v},{e:e}");
            }
            s
        }
    };
    fs::write(&args.out, csv)?;
    Ok(())
}

fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut spec = if args.desk {
        if args.kind != SimKind::Wafer {
            return Err(Error::InvalidConfig("--desk only applies to the wafer study".into()));
        }
        SimSpec::wafer_desk()
    } else {
        SimSpec::new(args.kind)
    };
    if let Some(n) = args.n_train {
        spec.n_train = n;
    }
    if let Some(n) = args.n_test {
        spec.n_test = n;
    }
    let sigmas = if args.sigma.is_empty() {
        vec![spec.sigma]
    } else {
        args.sigma.clone()
    };
    let mut cfg = BenchConfig::new(spec, sigmas, args.reps, args.seed);
    cfg.methods = args.method.clone();
    cfg.folds = args.solver.folds;
    cfg.fit = args.solver.base(args.seed);
    cfg.fixed_ranks = args.solver.ranks.as_ref().map(|r| (r.split().0.to_vec(), r.split().1));
    cfg.pcr_fraction = args.solver.variance;
    let result = run_benchmark_with(&cfg, |r| {
        let scores: Vec<String> = r.values.iter().map(|(m, v)| format!("{m} {v:.6e}")).collect();
        eprintln!(
            "sigma {} rep {} {} [{}] {} ({:.1}s)",
            r.sigma,
            r.rep,
            r.method,
            r.selection,
            scores.join(", "),
            r.seconds
        );
    })?;
    fs::write(&args.out, result.to_csv())?;
    if let Some(log) = &args.log {
        fs::write(log, result.log_csv())?;
    }
    print!("{}", result.to_csv());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_model(a),
        Command::Predict(a) => predict(a),
        Command::Cv(a) => cv(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
