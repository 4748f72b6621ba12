//! Benchmark protocol: build coresets at a list of compression rates, train
//! on each over repeated trials, evaluate the worst-case risk of every
//! trained hypothesis on the full empirical distribution, and aggregate.
//!
//! Per-trial randomness comes from substreams of the config seed keyed by
//! (method, rate index, trial index), so the methods face identical data and
//! only the sampling varies. Data perturbations (feature noise, label flips)
//! are applied once, before any trial.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::coreset::{compute_anchors, sample_coreset, uniform_coreset};
use crate::dataio::{
    flip_labels, normalize, parse_csv, parse_libsvm, perturb_gaussian, synth_blobs, Dataset,
    MetricSpec, Norm,
};
use crate::error::WdroError;
use crate::losses::{LossKind, LossModel};
use crate::rng::derive_seed;
use crate::wdro::WdroProblem;
use crate::Result;

const TAG_BENCH_NOISE: u64 = 0x6e6f_6973;
const TAG_BENCH_FLIP: u64 = 0x6266_6c70;

/// Compared training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    DualCore,
    UniSamp,
    Whole,
}

impl Method {
    /// Fixed numeric id used in substream derivation.
    fn stream_id(&self) -> u64 {
        match self {
            Method::DualCore => 0,
            Method::UniSamp => 1,
            Method::Whole => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dualcore" => Ok(Method::DualCore),
            "unisamp" => Ok(Method::UniSamp),
            "whole" => Ok(Method::Whole),
            other => Err(WdroError::Config(format!(
                "unknown method '{other}' (expected dualcore|unisamp|whole)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::DualCore => write!(f, "DualCore"),
            Method::UniSamp => write!(f, "UniSamp"),
            Method::Whole => write!(f, "Whole"),
        }
    }
}

/// Where the benchmark data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synth {
        n: usize,
        m: usize,
        separation: f64,
        label_noise: f64,
    },
    Libsvm(PathBuf),
    Csv {
        path: PathBuf,
        label_col: usize,
        header: bool,
    },
}

/// How the anchor point is chosen.
#[derive(Debug, Clone)]
pub enum AnchorSpec {
    /// The zero vector (default).
    Zero,
    /// One-pass discriminant direction `mean(y_i x_i)`, normalized and scaled.
    Pilot { scale: f64 },
    /// Explicit vector.
    Explicit(Vec<f64>),
}

/// Full benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub source: DataSource,
    pub loss: LossKind,
    pub sigma: f64,
    pub gamma: f64,
    pub norm: Norm,
    pub p: u32,
    pub rates: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub steps: usize,
    pub eta0: Option<f64>,
    pub noise_std: f64,
    pub flip_rate: f64,
    pub anchor: AnchorSpec,
    pub l_p: f64,
    pub normalize: bool,
    /// Off (the default) writes the time columns as 0 so identical configs
    /// produce byte-identical output; on reports wall-clock times.
    pub timings: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            source: DataSource::Synth {
                n: 500,
                m: 3,
                separation: 3.0,
                label_noise: 0.0,
            },
            loss: LossKind::SvmHinge,
            sigma: 0.3,
            gamma: 7.0,
            norm: Norm::L2,
            p: 1,
            rates: (1..=10).map(|k| k as f64 / 100.0).collect(),
            trials: 10,
            methods: vec![Method::DualCore, Method::UniSamp, Method::Whole],
            seed: 0,
            steps: 60,
            eta0: None,
            noise_std: 0.0,
            flip_rate: 0.0,
            anchor: AnchorSpec::Zero,
            l_p: 10.0,
            normalize: false,
            timings: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(WdroError::Config("trials must be >= 1".into()));
        }
        if self.rates.is_empty() {
            return Err(WdroError::Config("rates must be nonempty".into()));
        }
        for w in self.rates.windows(2) {
            if w[1] < w[0] {
                return Err(WdroError::Config("rates must be sorted ascending".into()));
            }
        }
        for &r in &self.rates {
            if !(r > 0.0 && r <= 1.0) {
                return Err(WdroError::Config(format!("rate {r} outside (0, 1]")));
            }
        }
        if self.methods.is_empty() {
            return Err(WdroError::Config("methods must be nonempty".into()));
        }
        Ok(())
    }
}

/// Parse the flat `key = value` config document. Unknown keys are rejected;
/// `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BenchConfig> {
    let mut cfg = BenchConfig::default();
    let mut synth = (500usize, 3usize, 3.0f64, 0.0f64);
    let mut source_kind: Option<String> = None;
    let mut csv_label = 0usize;
    let mut csv_header = false;
    let mut path: Option<PathBuf> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| WdroError::Config(format!(
            "line {}: expected 'key = value', got '{line}'",
            lineno + 1
        )))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        let bad = |what: &str| WdroError::Config(format!("line {}: invalid {what} '{value}'", lineno + 1));
        match key.as_str() {
            "data" => {
                if let Some(rest) = value.strip_prefix("libsvm:") {
                    source_kind = Some("libsvm".into());
                    path = Some(PathBuf::from(rest));
                } else if let Some(rest) = value.strip_prefix("csv:") {
                    source_kind = Some("csv".into());
                    path = Some(PathBuf::from(rest));
                } else if value == "synth" {
                    source_kind = Some("synth".into());
                } else {
                    return Err(bad("data source (synth|libsvm:<path>|csv:<path>)"));
                }
            }
            "n" => synth.0 = value.parse().map_err(|_| bad("n"))?,
            "m" => synth.1 = value.parse().map_err(|_| bad("m"))?,
            "separation" => synth.2 = value.parse().map_err(|_| bad("separation"))?,
            "blob-noise" => synth.3 = value.parse().map_err(|_| bad("blob-noise"))?,
            "label-col" => csv_label = value.parse().map_err(|_| bad("label-col"))?,
            "header" => csv_header = parse_bool(value).ok_or_else(|| bad("header"))?,
            "loss" => cfg.loss = LossKind::parse(value)?,
            "sigma" => cfg.sigma = value.parse().map_err(|_| bad("sigma"))?,
            "gamma" => cfg.gamma = value.parse().map_err(|_| bad("gamma"))?,
            "norm" => cfg.norm = Norm::parse(value)?,
            "p" => cfg.p = value.parse().map_err(|_| bad("p"))?,
            "rates" => {
                cfg.rates = value
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("rates"))?;
            }
            "trials" => cfg.trials = value.parse().map_err(|_| bad("trials"))?,
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(Method::parse)
                    .collect::<Result<_>>()?;
            }
            "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
            "steps" => cfg.steps = value.parse().map_err(|_| bad("steps"))?,
            "eta0" => cfg.eta0 = Some(value.parse().map_err(|_| bad("eta0"))?),
            "noise-std" => cfg.noise_std = value.parse().map_err(|_| bad("noise-std"))?,
            "flip-rate" => cfg.flip_rate = value.parse().map_err(|_| bad("flip-rate"))?,
            "anchor" => {
                cfg.anchor = if value == "zero" {
                    AnchorSpec::Zero
                } else if let Some(rest) = value.strip_prefix("pilot:") {
                    AnchorSpec::Pilot {
                        scale: rest.parse().map_err(|_| bad("anchor pilot scale"))?,
                    }
                } else if let Some(rest) = value.strip_prefix("explicit:") {
                    AnchorSpec::Explicit(
                        rest.split(';')
                            .map(|t| t.trim().parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad("anchor vector"))?,
                    )
                } else {
                    return Err(bad("anchor (zero|pilot:<scale>|explicit:v;v;...)"));
                };
            }
            "lp" => cfg.l_p = value.parse().map_err(|_| bad("lp"))?,
            "normalize" => cfg.normalize = parse_bool(value).ok_or_else(|| bad("normalize"))?,
            "timings" => cfg.timings = parse_bool(value).ok_or_else(|| bad("timings"))?,
            other => {
                return Err(WdroError::Config(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    cfg.source = match source_kind.as_deref() {
        None | Some("synth") => DataSource::Synth {
            n: synth.0,
            m: synth.1,
            separation: synth.2,
            label_noise: synth.3,
        },
        Some("libsvm") => DataSource::Libsvm(path.unwrap()),
        Some("csv") => DataSource::Csv {
            path: path.unwrap(),
            label_col: csv_label,
            header: csv_header,
        },
        _ => unreachable!(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// One (method, rate, trial) outcome. `risk` is the worst-case risk of the
/// trained hypothesis evaluated on the full unweighted empirical
/// distribution.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: Method,
    pub c: f64,
    pub trial: usize,
    pub risk: f64,
    pub time_ms: f64,
    pub coreset_ms: f64,
}

/// Aggregated (method, rate) statistics.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: Method,
    pub c: f64,
    pub risk_mean: f64,
    pub risk_std: f64,
    pub time_mean_ms: f64,
    /// Lowest mean risk among the methods reporting this rate.
    pub best: bool,
}

fn load_dataset(cfg: &BenchConfig) -> Result<Dataset> {
    let task = LossModel::new(cfg.loss, MetricSpec::new(cfg.norm, cfg.gamma, cfg.p)?)?.task();
    match &cfg.source {
        DataSource::Synth {
            n,
            m,
            separation,
            label_noise,
        } => synth_blobs(*n, *m, *separation, *label_noise, derive_seed(cfg.seed, &[0x73_79_6e])),
        DataSource::Libsvm(path) => parse_libsvm(BufReader::new(File::open(path)?), task),
        DataSource::Csv {
            path,
            label_col,
            header,
        } => parse_csv(BufReader::new(File::open(path)?), *label_col, *header, task),
    }
}

fn pilot_direction(ds: &Dataset, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; ds.dim()];
    for s in ds.samples() {
        for (acc, x) in v.iter_mut().zip(&s.x) {
            *acc += s.y * x;
        }
    }
    let norm = crate::vecs::l2_norm(&v);
    if norm > 0.0 {
        crate::vecs::scale(&v, scale / norm)
    } else {
        v
    }
}

fn budget_for(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).clamp(1, n)
}

/// Run the full protocol. Deterministic given the config (times excepted;
/// set `timings = off` for byte-stable output).
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let metric = MetricSpec::new(cfg.norm, cfg.gamma, cfg.p)?;
    let model = LossModel::new(cfg.loss, metric)?;

    let mut ds = load_dataset(cfg)?;
    if ds.task() != model.task() {
        return Err(WdroError::Task(format!(
            "loss '{}' expects a {:?} dataset, got {:?}",
            cfg.loss,
            model.task(),
            ds.task()
        )));
    }
    if cfg.normalize {
        ds = normalize(&ds).0;
    }
    if cfg.noise_std > 0.0 {
        ds = perturb_gaussian(&ds, cfg.noise_std, derive_seed(cfg.seed, &[TAG_BENCH_NOISE]))?;
    }
    if cfg.flip_rate > 0.0 {
        ds = flip_labels(&ds, cfg.flip_rate, derive_seed(cfg.seed, &[TAG_BENCH_FLIP]))?;
    }
    let n = ds.len();

    let theta_anc = match &cfg.anchor {
        AnchorSpec::Zero => vec![0.0; ds.dim()],
        AnchorSpec::Pilot { scale } => pilot_direction(&ds, *scale),
        AnchorSpec::Explicit(v) => {
            if v.len() != ds.dim() {
                return Err(WdroError::Dim {
                    expected: ds.dim(),
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    let anchors = compute_anchors(&ds, &model, cfg.sigma, theta_anc, cfg.l_p)?;
    let full = WdroProblem::new(model.clone(), cfg.sigma, anchors.clone(), None)?;
    let theta0 = anchors.theta_anc.clone();

    let mut rows: Vec<BenchRow> = Vec::new();
    for &method in &cfg.methods {
        match method {
            Method::Whole => {
                let start = Instant::now();
                let fit = full.train(&ds, Some(&theta0), cfg.steps, cfg.eta0, cfg.seed)?;
                let risk = full.worst_case_risk(&ds, &fit.theta)?.risk;
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                for trial in 0..cfg.trials {
                    rows.push(BenchRow {
                        method,
                        c: 1.0,
                        trial,
                        risk,
                        time_ms: elapsed,
                        coreset_ms: 0.0,
                    });
                }
            }
            Method::DualCore | Method::UniSamp => {
                let jobs: Vec<(usize, usize)> = (0..cfg.rates.len())
                    .flat_map(|r| (0..cfg.trials).map(move |t| (r, t)))
                    .collect();
                let mut method_rows = jobs
                    .into_par_iter()
                    .map(|(rate_idx, trial)| -> Result<BenchRow> {
                        let rate = cfg.rates[rate_idx];
                        let s = budget_for(rate, n);
                        let job_seed = derive_seed(
                            cfg.seed,
                            &[method.stream_id(), rate_idx as u64, trial as u64],
                        );
                        let start = Instant::now();
                        let coreset = match method {
                            Method::DualCore => {
                                sample_coreset(&ds, &model, cfg.sigma, &anchors, s, job_seed)?
                            }
                            _ => uniform_coreset(&ds, s, job_seed)?,
                        };
                        let coreset_ms = start.elapsed().as_secs_f64() * 1e3;
                        let weighted = WdroProblem::new(
                            model.clone(),
                            cfg.sigma,
                            anchors.clone(),
                            Some(coreset),
                        )?;
                        let fit =
                            weighted.train(&ds, Some(&theta0), cfg.steps, cfg.eta0, job_seed)?;
                        let risk = full.worst_case_risk(&ds, &fit.theta)?.risk;
                        let time_ms = start.elapsed().as_secs_f64() * 1e3;
                        Ok(BenchRow {
                            method,
                            c: rate,
                            trial,
                            risk,
                            time_ms,
                            coreset_ms,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                method_rows.sort_by(|a, b| {
                    a.c.partial_cmp(&b.c).unwrap().then(a.trial.cmp(&b.trial))
                });
                rows.extend(method_rows);
            }
        }
    }
    if !cfg.timings {
        for row in rows.iter_mut() {
            row.time_ms = 0.0;
            row.coreset_ms = 0.0;
        }
    }
    Ok(rows)
}

/// Sample mean and (n-1)-denominator standard deviation per (method, rate),
/// with the best method per rate flagged.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(Method, u64), Vec<&BenchRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.method, row.c.to_bits())).or_default().push(row);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((method, c_bits), members)| {
            let c = f64::from_bits(c_bits);
            let k = members.len() as f64;
            let mean = members.iter().map(|r| r.risk).sum::<f64>() / k;
            let var = if members.len() > 1 {
                members.iter().map(|r| (r.risk - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            let time_mean = members.iter().map(|r| r.time_ms).sum::<f64>() / k;
            SummaryRow {
                method,
                c,
                risk_mean: mean,
                risk_std: var.sqrt(),
                time_mean_ms: time_mean,
                best: false,
            }
        })
        .collect();
    // flag the best mean risk per rate
    let cs: Vec<u64> = {
        let mut v: Vec<u64> = out.iter().map(|r| r.c.to_bits()).collect();
        v.sort();
        v.dedup();
        v
    };
    for c_bits in cs {
        let best_idx = out
            .iter()
            .enumerate()
            .filter(|(_, r)| r.c.to_bits() == c_bits)
            .min_by(|(_, a), (_, b)| a.risk_mean.partial_cmp(&b.risk_mean).unwrap())
            .map(|(i, _)| i);
        if let Some(i) = best_idx {
            out[i].best = true;
        }
    }
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.c.partial_cmp(&b.c).unwrap()));
    out
}

/// Format a real with 6 significant digits, printf `%g` style.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').unwrap();
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    } else {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

/// Raw rows as CSV: `method,c,trial,risk,time_ms,coreset_ms`.
pub fn emit_csv_rows<W: Write>(rows: &[BenchRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,c,trial,risk,time_ms,coreset_ms")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method,
            format_g6(r.c),
            r.trial,
            format_g6(r.risk),
            format_g6(r.time_ms),
            format_g6(r.coreset_ms)
        )?;
    }
    Ok(())
}

/// Summary as CSV: `method,c,risk_mean,risk_std,time_mean_ms`.
pub fn emit_csv_summary<W: Write>(summary: &[SummaryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,c,risk_mean,risk_std,time_mean_ms")?;
    for r in summary {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method,
            format_g6(r.c),
            format_g6(r.risk_mean),
            format_g6(r.risk_std),
            format_g6(r.time_mean_ms)
        )?;
    }
    Ok(())
}

/// Plot-ready blocks: one whitespace-separated `c risk_mean risk_std` block
/// per method, blocks separated by blank lines.
pub fn emit_plotdata<W: Write>(summary: &[SummaryRow], mut w: W) -> std::io::Result<()> {
    let mut current: Option<Method> = None;
    for r in summary {
        if current.is_some() && current != Some(r.method) {
            writeln!(w)?;
        }
        if current != Some(r.method) {
            writeln!(w, "# {}", r.method)?;
            current = Some(r.method);
        }
        writeln!(
            w,
            "{} {} {}",
            format_g6(r.c),
            format_g6(r.risk_mean),
            format_g6(r.risk_std)
        )?;
    }
    Ok(())
}
