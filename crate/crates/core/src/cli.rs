//! Command-line front end.
//!
//! Reports are JSON documents written to `--out` (or standard output when
//! omitted); logs always go to standard error. Set `REPDISC_THREADS` to cap
//! the worker pool used by the Monte Carlo checks.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmat::{
    load_features, read_labels, write_fmat, FeatureMatrix, Labels, TaskVector, FMAT_MAGIC, LBL_MAGIC,
};
use crate::linalg::{InvSqrtOptions, RngStream};
use crate::metrics::{d_cca, d_cka, max_match_greedy, td_linear_with, MetricValue};
use crate::probes::{
    accuracy, fit_linear_head_with, fit_logistic_head, predict_classes, predict_linear, td_generic,
    DistanceKind, HeadKind, LinearHead, LogisticConfig, LogisticHead,
};
use crate::spectral::{d_hat, td_limit_repset, td_limit_restricted};
use crate::synth::{make_spec, sample_joint, SpecKind};
use crate::verify::{self, VerifyReport};

pub const THREADS_ENV: &str = "REPDISC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "repdisc", version, about = "Transferred discrepancy and representation similarity metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute similarity metrics between two feature files.
    Compare(CompareArgs),
    /// Export the singular values of the empirical alignment matrix.
    Spectrum(SpectrumArgs),
    /// Fit a probe head and report its accuracy.
    Probe(ProbeArgs),
    /// Generate a synthetic feature pair from a joint Gaussian.
    Synth(SynthArgs),
    /// Run a Monte Carlo check.
    Verify(VerifyArgs),
    /// Print header fields of an FMAT or LBL1 file.
    Info(InfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricName {
    #[value(name = "td")]
    Td,
    #[value(name = "td_cls")]
    TdCls,
    #[value(name = "td_soft")]
    TdSoft,
    #[value(name = "cca")]
    Cca,
    #[value(name = "cka")]
    Cka,
    #[value(name = "maxmatch")]
    MaxMatch,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    za: PathBuf,
    #[arg(long)]
    zb: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, requires_all = ["eval_zb", "eval_labels"])]
    eval_za: Option<PathBuf>,
    #[arg(long, requires_all = ["eval_za", "eval_labels"])]
    eval_zb: Option<PathBuf>,
    #[arg(long, requires_all = ["eval_za", "eval_zb"])]
    eval_labels: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "td,cca,cka")]
    metrics: Vec<MetricName>,
    /// Residual tolerance for the maximum match.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Pseudo-invert rank-deficient covariances in the linear TD.
    #[arg(long)]
    allow_singular: bool,
    /// Ridge added to covariances in the linear TD.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long)]
    za: PathBuf,
    #[arg(long)]
    zb: PathBuf,
    /// CSV file receiving one singular value per line.
    #[arg(long)]
    out: PathBuf,
    /// Also report the limit over the first `r` aligned directions.
    #[arg(long)]
    restricted: Option<usize>,
    /// Summary JSON; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProbeHead {
    Logistic,
    Linear,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    train_z: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_z: Option<PathBuf>,
    #[arg(long, requires = "test_z")]
    test_labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "logistic")]
    head: ProbeHead,
    #[arg(long, default_value_t = LogisticConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = LogisticConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "random")]
    kind: SpecKind,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    pp: Option<usize>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Theorem {
    Thm1,
    Thm2,
    Thm3,
    Ball,
    Cka,
    Invariance,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    theorem: Theorem,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ball dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value = "random")]
    kind: SpecKind,
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long)]
    pp: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 100_000)]
    num_tasks: usize,
    /// Task coefficients on the first representation, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha2: Option<Vec<f64>>,
    #[arg(long)]
    za: Option<PathBuf>,
    #[arg(long, requires = "za")]
    zb: Option<PathBuf>,
    /// Regression task for the invariance check.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = verify::INVARIANCE_REL_TOL)]
    rel_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long)]
    file: PathBuf,
}

/// Parses `argv` (including the program name) and runs the subcommand.
///
/// Returns 0 on success, 1 on a module error or a failed verification and
/// 2 on an argument error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();

    let outcome = match thread_pool() {
        Some(pool) => pool.install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{}: {e}", e.name());
            1
        }
    }
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    let threads = match raw.trim().parse::<usize>() {
        Ok(t) if t > 0 => t,
        _ => {
            warn!("ignoring {THREADS_ENV}={raw:?}; expected a positive integer");
            return None;
        }
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Spectrum(a) => spectrum(a).map(|_| true),
        Command::Probe(a) => probe(a).map(|_| true),
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
        Command::Info(a) => info_cmd(a).map(|_| true),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Serialize)]
struct CompareReport {
    za: String,
    zb: String,
    p: usize,
    pp: usize,
    n: usize,
    eval_n: Option<usize>,
    seed: u64,
    metrics: Vec<MetricValue>,
}

fn class_labels_required(labels: Option<&Labels>, metric: &str) -> Result<()> {
    match labels {
        Some(Labels::Classes(_)) => Ok(()),
        Some(Labels::Regression(_)) => Err(Error::InvalidArgument(format!(
            "metric {metric} needs class labels, got regression targets"
        ))),
        None => Err(Error::InvalidArgument(format!("metric {metric} needs --labels"))),
    }
}

fn compare(args: CompareArgs) -> Result<()> {
    let za = load_features(&args.za)?;
    let zb = load_features(&args.zb)?;
    let labels = args.labels.as_deref().map(read_labels).transpose()?;
    let eval = match (&args.eval_za, &args.eval_zb, &args.eval_labels) {
        (Some(a), Some(b), Some(l)) => {
            let (ea, eb) = (load_features(a)?, load_features(b)?);
            let el = read_labels(l)?;
            if ea.n() != eb.n() || el.len() != ea.n() {
                return Err(Error::ShapeError(format!(
                    "evaluation files disagree on sample count: {} / {} / {}",
                    ea.n(),
                    eb.n(),
                    el.len()
                )));
            }
            Some((ea, eb))
        }
        _ => None,
    };
    let eval_refs = eval.as_ref().map(|(a, b)| (a, b));
    let opts = InvSqrtOptions {
        allow_singular: args.allow_singular,
        ridge: args.ridge,
        ..InvSqrtOptions::default()
    };

    let mut metrics = Vec::with_capacity(args.metrics.len());
    for &m in &args.metrics {
        info!("computing {m:?}");
        let value = match m {
            MetricName::Td => match (labels.as_ref(), eval_refs) {
                (Some(Labels::Regression(y)), None) => td_linear_with(&za, &zb, y, opts)?,
                (Some(l @ Labels::Regression(_)), Some(e)) => MetricValue::new(
                    "td",
                    td_generic(&za, &zb, l, Some(e), HeadKind::Linear, DistanceKind::Squared)?,
                ),
                (Some(Labels::Classes(_)), _) => {
                    return Err(Error::InvalidArgument(
                        "metric td needs regression targets; use td_cls or td_soft for classes".into(),
                    ))
                }
                (None, _) => return Err(Error::InvalidArgument("metric td needs --labels".into())),
            },
            MetricName::TdCls | MetricName::TdSoft => {
                let (name, distance) = if m == MetricName::TdCls {
                    ("td_cls", DistanceKind::Hard)
                } else {
                    ("td_soft", DistanceKind::Soft)
                };
                class_labels_required(labels.as_ref(), name)?;
                let head = HeadKind::Logistic(LogisticConfig::default());
                let target = labels.as_ref().expect("checked above");
                MetricValue::new(name, td_generic(&za, &zb, target, eval_refs, head, distance)?)
            }
            MetricName::Cca => d_cca(&za, &zb)?,
            MetricName::Cka => d_cka(&za, &zb)?,
            MetricName::MaxMatch => max_match_greedy(&za, &zb, args.eps)?,
        };
        metrics.push(value);
    }

    let report = CompareReport {
        za: path_str(&args.za),
        zb: path_str(&args.zb),
        p: za.p(),
        pp: zb.p(),
        n: za.n(),
        eval_n: eval.as_ref().map(|(a, _)| a.n()),
        seed: args.seed,
        metrics,
    };
    write_json(&report, args.out.as_deref())
}

#[derive(Serialize)]
struct RestrictedLimit {
    r: usize,
    value: f64,
}

#[derive(Serialize)]
struct SpectrumReport {
    p: usize,
    pp: usize,
    n: usize,
    sigma: Vec<f64>,
    repset_limit: f64,
    repset_precondition_unmet: bool,
    restricted: Option<RestrictedLimit>,
}

fn spectrum(args: SpectrumArgs) -> Result<()> {
    let za = load_features(&args.za)?;
    let zb = load_features(&args.zb)?;
    let spec = d_hat(&za, &zb)?;
    let mut csv = String::new();
    for s in spec.sigma.iter() {
        csv.push_str(&format!("{s:.17e}\n"));
    }
    fs::write(&args.out, csv)?;
    let repset = td_limit_repset(&spec);
    let restricted = args
        .restricted
        .map(|r| td_limit_restricted(&spec, r).map(|value| RestrictedLimit { r, value }))
        .transpose()?;
    let report = SpectrumReport {
        p: za.p(),
        pp: zb.p(),
        n: za.n(),
        sigma: spec.sigma.iter().copied().collect(),
        repset_limit: repset.value,
        repset_precondition_unmet: repset.precondition_unmet,
        restricted,
    };
    write_json(&report, args.report.as_deref())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ProbeReport {
    Logistic {
        head: LogisticHead,
        train_accuracy: f64,
        test_accuracy: Option<f64>,
        test_predictions: Option<Vec<u32>>,
    },
    Linear {
        head: LinearHead,
        train_mse: f64,
        test_mse: Option<f64>,
        test_predictions: Option<Vec<f64>>,
    },
}

fn mse(pred: &DVector<f64>, y: &TaskVector) -> f64 {
    (pred - y.values()).norm_squared() / y.len() as f64
}

fn probe(args: ProbeArgs) -> Result<()> {
    let z = load_features(&args.train_z)?;
    let labels = read_labels(&args.train_labels)?;
    let test_z = args.test_z.as_deref().map(load_features).transpose()?;
    let test_labels = args.test_labels.as_deref().map(read_labels).transpose()?;

    let report = match (args.head, labels) {
        (ProbeHead::Logistic, Labels::Classes(c)) => {
            let cfg = LogisticConfig {
                max_iters: args.max_iters,
                learning_rate: args.learning_rate,
                ..LogisticConfig::default()
            };
            let head = fit_logistic_head(&z, &c, cfg)?;
            if !head.converged {
                warn!("logistic head stopped after {} iterations without converging", head.iterations);
            }
            let train_accuracy = accuracy(&predict_classes(&head, &z)?, &c);
            let test_pred = test_z.as_ref().map(|t| predict_classes(&head, t)).transpose()?;
            let test_accuracy = match (&test_pred, &test_labels) {
                (Some(pred), Some(Labels::Classes(tc))) => {
                    if tc.len() != pred.len() {
                        return Err(Error::ShapeError("test labels do not match test features".into()));
                    }
                    Some(accuracy(pred, tc))
                }
                (_, Some(Labels::Regression(_))) => {
                    return Err(Error::InvalidArgument("logistic head needs class test labels".into()))
                }
                _ => None,
            };
            ProbeReport::Logistic {
                head,
                train_accuracy,
                test_predictions: if test_accuracy.is_none() { test_pred } else { None },
                test_accuracy,
            }
        }
        (ProbeHead::Linear, Labels::Regression(y)) => {
            let head = fit_linear_head_with(&z, &y, InvSqrtOptions::default())?;
            let train_mse = mse(&predict_linear(&head, &z)?, &y);
            let test_pred = test_z.as_ref().map(|t| predict_linear(&head, t)).transpose()?;
            let test_mse = match (&test_pred, &test_labels) {
                (Some(pred), Some(Labels::Regression(ty))) => {
                    if ty.len() != pred.len() {
                        return Err(Error::ShapeError("test labels do not match test features".into()));
                    }
                    Some(mse(pred, ty))
                }
                (_, Some(Labels::Classes(_))) => {
                    return Err(Error::InvalidArgument("linear head needs regression test labels".into()))
                }
                _ => None,
            };
            ProbeReport::Linear {
                head,
                train_mse,
                test_predictions: if test_mse.is_none() {
                    test_pred.map(|v| v.iter().copied().collect())
                } else {
                    None
                },
                test_mse,
            }
        }
        (head, _) => {
            return Err(Error::InvalidArgument(format!(
                "{head:?} head does not match the label kind in {}",
                args.train_labels.display()
            )))
        }
    };
    write_json(&report, args.out.as_deref())
}

#[derive(Serialize)]
struct SynthManifest {
    kind: SpecKind,
    p: usize,
    pp: usize,
    n: usize,
    seed: u64,
    sigma: Vec<f64>,
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(args: SynthArgs) -> Result<()> {
    let pp = args.pp.unwrap_or(args.p);
    let spec = make_spec(args.kind, args.p, pp, &mut RngStream::new(args.seed, 0))?;
    let (za, zb) = sample_joint(&spec, args.n, &mut RngStream::new(args.seed, 1))?;
    write_fmat(&za, prefixed(&args.out_prefix, "_a.fmat"))?;
    write_fmat(&zb, prefixed(&args.out_prefix, "_b.fmat"))?;
    let manifest = SynthManifest {
        kind: args.kind,
        p: args.p,
        pp,
        n: args.n,
        seed: args.seed,
        sigma: spec.alignment()?.sigma.iter().copied().collect(),
    };
    write_json(&manifest, Some(&prefixed(&args.out_prefix, "_spec.json")))
}

fn unit_coefficients(given: Option<Vec<f64>>, dim: usize) -> Result<DVector<f64>> {
    match given {
        Some(v) if v.len() != dim => Err(Error::ShapeError(format!(
            "expected {dim} task coefficients, got {}",
            v.len()
        ))),
        Some(v) => Ok(DVector::from_vec(v)),
        None => Ok(DVector::from_element(dim, 1.0 / (dim as f64).sqrt())),
    }
}

fn verify_pair(args: &VerifyArgs, pp: usize) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if let (Some(a), Some(b)) = (&args.za, &args.zb) {
        return Ok((load_features(a)?, load_features(b)?));
    }
    let spec = make_spec(args.kind, args.p, pp, &mut RngStream::new(args.seed, 0))?;
    sample_joint(&spec, args.n, &mut RngStream::new(args.seed, 1))
}

fn run_verify(args: VerifyArgs) -> Result<bool> {
    let pp = args.pp.unwrap_or(args.p);
    let spec = || make_spec(args.kind, args.p, pp, &mut RngStream::new(args.seed, 0));
    let report: VerifyReport = match args.theorem {
        Theorem::Thm1 => {
            let alpha = unit_coefficients(args.alpha.clone(), args.p)?;
            let alpha2 = unit_coefficients(args.alpha2.clone(), pp)?;
            verify::verify_thm1(&spec()?, &alpha, &alpha2, args.n, args.trials, args.seed)?
        }
        Theorem::Thm2 => verify::verify_thm2(&spec()?, args.n, args.trials, args.seed)?,
        Theorem::Thm3 => {
            let (za, zb) = verify_pair(&args, pp)?;
            verify::verify_thm3(&za, &zb, args.num_tasks, args.seed)?
        }
        Theorem::Ball => verify::verify_ball_moment(args.dim, args.samples, args.seed)?,
        Theorem::Cka => verify::verify_cka(&spec()?, args.n, args.trials, args.seed)?,
        Theorem::Invariance => {
            let (za, zb) = verify_pair(&args, pp)?;
            let y = match args.labels.as_deref().map(read_labels).transpose()? {
                Some(Labels::Regression(y)) => y,
                Some(Labels::Classes(_)) => {
                    return Err(Error::InvalidArgument("invariance needs a regression task".into()))
                }
                None => {
                    let mut rng = RngStream::new(args.seed, 2);
                    let v: Vec<f64> = (0..za.n()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                    TaskVector::from_slice(&v)?.centered_copy()
                }
            };
            verify::verify_invariance(&za, &zb, &y, args.trials, args.seed, args.rel_tol)?
        }
    };
    if !report.pass {
        warn!(
            "{} failed: theoretical {} vs empirical {} (stderr {})",
            report.theorem, report.theoretical, report.empirical_mean, report.empirical_stderr
        );
    }
    write_json(&report, args.out.as_deref())?;
    Ok(report.pass)
}

fn info_cmd(args: InfoArgs) -> Result<()> {
    let bytes = fs::read(&args.file)?;
    let line = if bytes.starts_with(&LBL_MAGIC) {
        match crate::fmat::decode_labels(&bytes)? {
            Labels::Classes(c) => format!("kind=classes n={} num_classes={}", c.len(), c.num_classes()),
            Labels::Regression(y) => format!("kind=regression n={}", y.len()),
        }
    } else if bytes.starts_with(&FMAT_MAGIC) {
        let m = crate::fmat::decode_fmat(&bytes)?;
        format!("p={} n={} centered={}", m.p(), m.n(), m.centered())
    } else {
        let m = load_features(&args.file)?;
        format!("p={} n={} centered={}", m.p(), m.n(), m.centered())
    };
    println!("{line}");
    Ok(())
}
