//! Command-line front end: coreset construction, training, risk evaluation,
//! dataset perturbation, the benchmark protocol, and a self-test suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical/domain
//! error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use wdro_core::bench::{self, parse_config};
use wdro_core::coreset::{compute_anchors, sample_coreset, uniform_coreset, Anchors, Coreset};
use wdro_core::dataio::{
    flip_labels, normalize, parse_csv, parse_libsvm, perturb_gaussian, write_libsvm, Dataset,
    MetricSpec, Norm, Scaling,
};
use wdro_core::losses::{LossKind, LossModel};
use wdro_core::wdro::{read_flat_theta, write_flat_result, WdroProblem};
use wdro_core::{Result, WdroError};

#[derive(Parser)]
#[command(name = "wdro", version, about = "Dual coresets for Wasserstein DRO")]
struct Cli {
    /// Cap on worker threads (fallback: WDRO_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a coreset and write it as a text document
    Coreset(CoresetArgs),
    /// Train a hypothesis by projected subgradient descent on the dual risk
    Train(TrainArgs),
    /// Evaluate the worst-case risk of a stored hypothesis
    Eval(EvalArgs),
    /// Apply Gaussian feature noise and/or label flips to a dataset
    Perturb(PerturbArgs),
    /// Run the benchmark protocol from a config file
    Bench(BenchArgs),
    /// Run the built-in invariant checks on tiny instances
    Selftest,
}

#[derive(Args)]
struct DataArgs {
    /// Input dataset path
    #[arg(long)]
    input: PathBuf,
    /// Input format (inferred from the extension when omitted)
    #[arg(long, value_parser = ["libsvm", "csv"])]
    format: Option<String>,
    /// Label column for CSV input (0-based)
    #[arg(long, default_value_t = 0)]
    label_col: usize,
    /// CSV input has a header row
    #[arg(long)]
    header: bool,
    /// Min-max normalize features to [0, 1]
    #[arg(long)]
    normalize: bool,
    /// Write the fitted scaling record here (requires --normalize)
    #[arg(long)]
    scaling_out: Option<PathBuf>,
    /// Apply a stored scaling record instead of fitting one
    #[arg(long)]
    scaling_in: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Loss: `svm | logistic | huber:<delta> | hypercube-svm:<l>`
    #[arg(long)]
    loss: String,
    /// Feature norm: l1 | l2 | linf
    #[arg(long, default_value = "l2")]
    norm: String,
    /// Wasserstein ball radius
    #[arg(long)]
    sigma: f64,
    /// Label transport cost in the feature-label metric
    #[arg(long, default_value_t = 7.0)]
    gamma: f64,
    /// Wasserstein order
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Anchor point, comma-separated reals (default: zero vector)
    #[arg(long)]
    theta_anc: Option<String>,
    /// Hypothesis ball radius
    #[arg(long, default_value_t = 10.0)]
    lp: f64,
}

#[derive(Args)]
struct CoresetArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Support size: fraction of n when <= 1, absolute count otherwise
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Construction: grid sampling or the uniform baseline
    #[arg(long, default_value = "dualcore", value_parser = ["dualcore", "uniform"])]
    method: String,
    /// Output path for the coreset document
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Train on this coreset instead of the full distribution
    #[arg(long)]
    coreset: Option<PathBuf>,
    /// Subgradient steps
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Step scale (default: lp / empirical Lipschitz constant)
    #[arg(long)]
    eta0: Option<f64>,
    /// Start point, comma-separated (default: the anchor point)
    #[arg(long)]
    theta0: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the result document
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Result document holding the hypothesis (theta line)
    #[arg(long)]
    theta: PathBuf,
    /// Evaluate against this coreset's weighted distribution
    #[arg(long)]
    coreset: Option<PathBuf>,
    /// Also write the result as a flat document
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Loss kind, used only to fix the task (classification vs regression)
    #[arg(long, default_value = "svm")]
    loss: String,
    /// Gaussian feature noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Fraction of labels to flip (classification)
    #[arg(long, default_value_t = 0.0)]
    flip_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (LIBSVM format)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Config document (flat key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Raw per-trial rows (CSV)
    #[arg(long)]
    out_csv: PathBuf,
    /// Plot-ready summary blocks
    #[arg(long)]
    out_plot: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config trial count
    #[arg(long)]
    trials: Option<usize>,
    /// Override the config sigma
    #[arg(long)]
    sigma: Option<f64>,
    /// Override the config step count
    #[arg(long)]
    steps: Option<usize>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            std::process::exit(1);
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("WDRO_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(k) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Coreset(args) => cmd_coreset(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Perturb(args) => cmd_perturb(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Selftest => selftest(),
    }
}

fn load_data(args: &DataArgs, task: wdro_core::dataio::Task) -> Result<Dataset> {
    let reader = BufReader::new(File::open(&args.input)?);
    let format = match &args.format {
        Some(f) => f.clone(),
        None => {
            if args.input.extension().is_some_and(|e| e == "csv") {
                "csv".to_string()
            } else {
                "libsvm".to_string()
            }
        }
    };
    let mut ds = match format.as_str() {
        "csv" => parse_csv(reader, args.label_col, args.header, task)?,
        _ => parse_libsvm(reader, task)?,
    };
    if let Some(path) = &args.scaling_in {
        let scaling = Scaling::read(BufReader::new(File::open(path)?))?;
        ds = scaling.apply(&ds)?;
    } else if args.normalize {
        let (scaled, scaling) = normalize(&ds);
        if let Some(path) = &args.scaling_out {
            let mut w = BufWriter::new(File::create(path)?);
            scaling.write(&mut w)?;
        }
        ds = scaled;
    }
    Ok(ds)
}

struct Problem {
    ds: Dataset,
    model: LossModel,
    sigma: f64,
    anchors: Anchors,
}

fn setup(data: &DataArgs, margs: &ModelArgs) -> Result<Problem> {
    let kind = LossKind::parse(&margs.loss)?;
    let metric = MetricSpec::new(Norm::parse(&margs.norm)?, margs.gamma, margs.p)?;
    let model = LossModel::new(kind, metric)?;
    let ds = load_data(data, model.task())?;
    let theta_anc = match &margs.theta_anc {
        Some(text) => parse_vector(text)?,
        None => vec![0.0; ds.dim()],
    };
    let anchors = compute_anchors(&ds, &model, margs.sigma, theta_anc, margs.lp)?;
    Ok(Problem {
        ds,
        model,
        sigma: margs.sigma,
        anchors,
    })
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| WdroError::Config(format!("invalid vector component '{t}'")))
        })
        .collect()
}

fn resolve_budget(budget: f64, n: usize) -> Result<usize> {
    if budget.is_nan() || budget <= 0.0 {
        return Err(WdroError::Domain(format!("budget must be > 0, got {budget}")));
    }
    if budget <= 1.0 {
        Ok(((budget * n as f64).round() as usize).clamp(1, n))
    } else {
        Ok(budget.round() as usize)
    }
}

fn read_coreset(path: &PathBuf) -> Result<Coreset> {
    Coreset::from_text(&std::fs::read_to_string(path)?)
}

fn cmd_coreset(args: CoresetArgs) -> Result<()> {
    let p = setup(&args.data, &args.model)?;
    let s = resolve_budget(args.budget, p.ds.len())?;
    let coreset = match args.method.as_str() {
        "uniform" => uniform_coreset(&p.ds, s, args.seed)?,
        _ => sample_coreset(&p.ds, &p.model, p.sigma, &p.anchors, s, args.seed)?,
    };
    std::fs::write(&args.out, coreset.to_text())?;
    println!(
        "coreset written: {} indices of n = {} to {}",
        coreset.support_size(),
        p.ds.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let p = setup(&args.data, &args.model)?;
    let weights = args.coreset.as_ref().map(read_coreset).transpose()?;
    let problem = WdroProblem::new(p.model, p.sigma, p.anchors.clone(), weights)?;
    let theta0 = match &args.theta0 {
        Some(text) => parse_vector(text)?,
        None => p.anchors.theta_anc.clone(),
    };
    let fit = problem.train(&p.ds, Some(&theta0), args.steps, args.eta0, args.seed)?;
    let rr = problem.worst_case_risk(&p.ds, &fit.theta)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    write_flat_result(&mut w, &fit.theta, fit.risk, rr.lambda_star, fit.iterations)?;
    w.flush()?;
    println!("risk {:.16e}", fit.risk);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let p = setup(&args.data, &args.model)?;
    let theta = read_flat_theta(BufReader::new(File::open(&args.theta)?))?;
    let weights = args.coreset.as_ref().map(read_coreset).transpose()?;
    let problem = WdroProblem::new(p.model, p.sigma, p.anchors, weights)?;
    let rr = problem.worst_case_risk(&p.ds, &theta)?;
    println!("risk {:.16e}", rr.risk);
    println!("lambda_star {:.16e}", rr.lambda_star);
    println!("at_boundary {}", rr.at_boundary);
    if let Some(path) = &args.out {
        let mut w = BufWriter::new(File::create(path)?);
        write_flat_result(&mut w, &theta, rr.risk, rr.lambda_star, 0)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_perturb(args: PerturbArgs) -> Result<()> {
    let kind = LossKind::parse(&args.loss)?;
    let metric = MetricSpec::new(Norm::L2, 7.0, 1)?;
    let task = LossModel::new(kind, metric)?.task();
    let mut ds = load_data(&args.data, task)?;
    if args.noise_std > 0.0 {
        ds = perturb_gaussian(&ds, args.noise_std, args.seed)?;
    }
    if args.flip_rate > 0.0 {
        ds = flip_labels(&ds, args.flip_rate, args.seed)?;
    }
    let mut w = BufWriter::new(File::create(&args.out)?);
    write_libsvm(&ds, &mut w)?;
    w.flush()?;
    println!("perturbed dataset written to {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut cfg = parse_config(&std::fs::read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(sigma) = args.sigma {
        cfg.sigma = sigma;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    let rows = bench::run_bench(&cfg)?;
    let summary = bench::summarize(&rows);

    let mut w = BufWriter::new(File::create(&args.out_csv)?);
    bench::emit_csv_rows(&rows, &mut w)?;
    w.flush()?;
    if let Some(path) = &args.out_plot {
        let mut w = BufWriter::new(File::create(path)?);
        bench::emit_plotdata(&summary, &mut w)?;
        w.flush()?;
    }

    let mut stdout = std::io::stdout().lock();
    match bench::emit_csv_summary(&summary, &mut stdout) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn check(name: &str, ok: bool, detail: String) -> Result<()> {
    if ok {
        println!("ok {name}");
        Ok(())
    } else {
        Err(WdroError::Domain(format!("selftest '{name}' failed: {detail}")))
    }
}

fn selftest() -> Result<()> {
    use rand::Rng;
    use wdro_core::dataio::{synth_blobs, LabeledSample, Task};
    use wdro_core::rng::substream;

    // metric axioms on random triples
    {
        let mut rng = substream(1, &[1]);
        let mut worst: f64 = 0.0;
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            let metric = MetricSpec::new(norm, 7.0, 1)?;
            for _ in 0..1000 {
                let mut draw = || LabeledSample {
                    x: (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                    y: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                };
                let (a, b, c) = (draw(), draw(), draw());
                let excess =
                    metric.distance(&a, &b) - metric.distance(&a, &c) - metric.distance(&c, &b);
                worst = worst.max(excess);
                if metric.distance(&a, &b) != metric.distance(&b, &a)
                    || metric.distance(&a, &a) != 0.0
                {
                    worst = f64::INFINITY;
                }
            }
        }
        check("metric-axioms", worst <= 1e-12, format!("excess {worst}"))?;
    }

    // closed-form oracle spot checks
    {
        let svm = LossModel::new(LossKind::SvmHinge, MetricSpec::new(Norm::L2, 7.0, 1)?)?;
        let s = LabeledSample { x: vec![2.0, 0.0], y: 1.0 };
        let h = svm.h_exact(&[1.0, 0.0], 1.0, &s)?.value;
        check("svm-h-exact", h == 0.0, format!("h = {h}"))?;
        let kappa = svm.kappa(&[3.0, 4.0])?;
        check("svm-kappa", kappa == 5.0, format!("kappa = {kappa}"))?;
    }

    // grid partition invariants on random datasets
    {
        let mut rng = substream(2, &[2]);
        let mut ok = true;
        let mut detail = String::new();
        for trial in 0..5 {
            let n = rng.gen_range(16..200);
            let ds = synth_blobs(n, 3, 3.0, 0.2, trial as u64)?;
            let model = LossModel::new(LossKind::SvmHinge, MetricSpec::new(Norm::L2, 7.0, 1)?)?;
            let anchors = compute_anchors(&ds, &model, 0.3, vec![0.5, -0.2, 0.1], 2.0)?;
            let grid = wdro_core::coreset::build_grid(&ds, &model, &anchors)?;
            let union: usize = grid.cells.values().map(|c| c.len()).sum();
            let (lo, hi) = grid.layer_mass();
            if union != n || lo > 3.0 * n as f64 || hi > 3.0 * n as f64 {
                ok = false;
                detail = format!("n = {n}, union = {union}, mass = ({lo}, {hi})");
            }
        }
        check("grid-partition", ok, detail)?;
    }

    // coreset mass and determinism
    {
        let ds = synth_blobs(100, 3, 3.0, 0.2, 9)?;
        let model = LossModel::new(LossKind::SvmHinge, MetricSpec::new(Norm::L2, 7.0, 1)?)?;
        let anchors = compute_anchors(&ds, &model, 0.3, vec![0.5, -0.2, 0.1], 2.0)?;
        let c1 = sample_coreset(&ds, &model, 0.3, &anchors, 20, 5)?;
        let c2 = sample_coreset(&ds, &model, 0.3, &anchors, 20, 5)?;
        let mass = c1.sum_weights();
        check(
            "coreset-mass-determinism",
            (mass - 1.0).abs() <= 1e-12 && c1 == c2,
            format!("mass = {mass}"),
        )?;
    }

    // dual against brute force on the single-point instance
    {
        let ds = Dataset::new(
            vec![LabeledSample { x: vec![2.0, 0.0], y: 1.0 }],
            Task::Classification,
        )?;
        let model = LossModel::new(LossKind::SvmHinge, MetricSpec::new(Norm::L2, 7.0, 1)?)?;
        let anchors = compute_anchors(&ds, &model, 0.5, vec![0.0, 0.0], 10.0)?;
        let problem = WdroProblem::new(model, 0.5, anchors, None)?;
        let rr = problem.worst_case_risk(&ds, &[1.0, 0.0])?;
        let bf = problem.brute_force_risk(
            &ds,
            &[1.0, 0.0],
            &wdro_core::wdro::BruteForceGrid::default(),
        )?;
        check(
            "dual-vs-brute-force",
            (rr.risk - 0.5).abs() < 1e-8 && (bf - rr.risk).abs() / rr.risk <= 1e-2,
            format!("risk = {}, brute force = {bf}", rr.risk),
        )?;
    }

    // estimator unbiasedness, small instance
    {
        let ds = synth_blobs(200, 3, 3.0, 0.2, 11)?;
        let model = LossModel::new(LossKind::SvmHinge, MetricSpec::new(Norm::L2, 7.0, 1)?)?;
        let anchors = compute_anchors(&ds, &model, 0.3, vec![0.5, -0.2, 0.1], 2.0)?;
        let grid = wdro_core::coreset::build_grid(&ds, &model, &anchors)?;
        let params = wdro_core::coreset::AllocParams::for_problem(&ds, &model, &anchors);
        let counts = wdro_core::coreset::allocate_budget(&grid, 20, &params)?;
        let h: Vec<f64> = ds
            .samples()
            .iter()
            .map(|s| {
                model
                    .h_exact(&anchors.theta_anc, anchors.lambda_anc, s)
                    .map(|o| o.value)
            })
            .collect::<Result<_>>()?;
        let full = h.iter().sum::<f64>() / ds.len() as f64;
        let trials = 2000;
        let mean: f64 = (0..trials)
            .map(|seed| {
                wdro_core::coreset::draw_from_grid(&grid, &counts, ds.len(), seed)
                    .iter()
                    .map(|&(i, w)| w * h[i])
                    .sum::<f64>()
            })
            .sum::<f64>()
            / trials as f64;
        let rel = (mean - full).abs() / full;
        check("estimator-unbiasedness", rel <= 0.02, format!("rel err {rel}"))?;
    }

    println!("selftest passed");
    Ok(())
}
