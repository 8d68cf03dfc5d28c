//! Subcommand argument types and implementations.
//!
//! Every command is deterministic given `--seed` and follows one exit-code
//! contract: 0 on success, 1 on error (message on stderr), 2 on degraded
//! success (a fit that stopped at the iteration cap, or an experiment where
//! more than 10% of replicates failed — results are still written).

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use gplag::baselines::{dtw, soft_dtw_divergence, tlcc};
use gplag::bayes::{sample_posterior, save_draws_csv, summarize, PriorSpec};
use gplag::data::{center_series, load_csv, save_csv};
use gplag::inference::{fit_mle_multi, fit_mle_pairwise};
use gplag::predict::blup_predict;
use gplag::simulate::{derive_seed, gen_time_design, sample_gplag, DesignStyle};
use gplag::{
    Error, FitConfig, FitResult, KernelFamily, PairwiseParams, Params, Result, TimeSeriesSet,
};

use crate::experiments::{run_experiment, ExperimentName, ExperimentSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_DEGRADED: u8 = 2;

/// Lead-lag Gaussian-process toolkit: fit time-shift and dissimilarity
/// parameters across series, predict held-out points, simulate from the
/// model, sample posteriors, and benchmark alignment baselines.
#[derive(Debug, Parser)]
#[command(name = "gplag", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the lagged-kernel model to a CSV of two or more series by
    /// constrained maximum likelihood (two series dispatch to the pairwise
    /// model, more to the joint multi-series model).
    Fit(FitArgs),
    /// Draw one synthetic pair of series from the model and write it as CSV.
    Simulate(SimulateArgs),
    /// Predict at query points from a saved fit and its training data.
    Predict(PredictArgs),
    /// Sample the pairwise posterior with an adaptive random-walk chain.
    Bayes(BayesArgs),
    /// Score pair CSVs with every alignment method (model fit, lag scan,
    /// warping distances) as `pair_id,method,score,lag` rows.
    Benchmark(BenchmarkArgs),
    /// Run a named replication experiment end to end.
    Experiment(ExperimentArgs),
}

/// Kernel-family selection shared by the fitting commands.
#[derive(Debug, Args)]
pub struct FamilyOpts {
    /// Kernel family: lrbf, lexp, lmat, gneiting_matern, gneiting_exp_sep,
    /// laplace_scaled, or rational_quadratic.
    #[arg(long, default_value = "lexp")]
    pub family: String,
    /// Smoothness ν for the Matérn-type families (0.5, 1.5, or 2.5).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Separability parameter c > 0 for the Gneiting-type families.
    #[arg(long)]
    pub c: Option<f64>,
}

impl FamilyOpts {
    pub fn resolve(&self) -> Result<KernelFamily> {
        // The complex-exponential family fails positive semidefiniteness as
        // soon as a shift is present, so no command accepts it.
        if self.family == "complex_exponential" {
            return Err(Error::Argument(
                "complex_exponential is not positive semidefinite and cannot be fitted or sampled"
                    .into(),
            ));
        }
        KernelFamily::from_tag(&self.family, self.nu, self.c)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with header `t,series,y`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub family: FamilyOpts,
    /// Lower bound of the shift search box.
    #[arg(long = "s-lo", default_value_t = 0.0, allow_hyphen_values = true)]
    pub s_lo: f64,
    /// Upper bound of the shift search box.
    #[arg(long = "s-hi", default_value_t = 4.0, allow_hyphen_values = true)]
    pub s_hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optimizer starts (library default when omitted).
    #[arg(long)]
    pub multistart: Option<usize>,
    /// Iteration cap per start (library default when omitted).
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Write the fit JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_fit(args: &FitArgs) -> Result<u8> {
    let family = args.family.resolve()?;
    let set = load_csv(&args.data)?;
    let mut config = FitConfig {
        s_bounds: (args.s_lo, args.s_hi),
        seed: args.seed,
        ..FitConfig::default()
    };
    if let Some(m) = args.multistart {
        config.multistart_count = m;
    }
    if let Some(m) = args.max_iter {
        config.max_iter = m;
    }
    let fit = if set.num_series() == 2 {
        fit_mle_pairwise(&set, family, &config)?
    } else {
        fit_mle_multi(&set, family, &config)?
    };
    for note in &fit.constraint_report {
        eprintln!("note: {note}");
    }
    let json =
        serde_json::to_string_pretty(&fit).map_err(|e| Error::Format(e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(if fit.converged { EXIT_OK } else { EXIT_DEGRADED })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub family: FamilyOpts,
    /// Decay/lengthscale parameter b.
    #[arg(long, default_value_t = 0.3)]
    pub b: f64,
    /// Dissimilarity a between the two series.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Time shift of the second series.
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub s: f64,
    /// Signal variance σ².
    #[arg(long, default_value_t = 4.0)]
    pub sigma2: f64,
    /// Observation-noise variance τ².
    #[arg(long, default_value_t = 0.1)]
    pub tau2: f64,
    /// Observations per series.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Start of the sampling time range.
    #[arg(long, default_value_t = -50.0, allow_hyphen_values = true)]
    pub lo: f64,
    /// End of the sampling time range.
    #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
    pub hi: f64,
    /// Sampling design: jittered or regular.
    #[arg(long, default_value = "jittered")]
    pub style: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_style(style: &str) -> Result<DesignStyle> {
    match style {
        "jittered" | "jittered-grid" => Ok(DesignStyle::JitteredGrid),
        "regular" => Ok(DesignStyle::Regular),
        other => Err(Error::Argument(format!(
            "unknown design style `{other}`; expected jittered or regular"
        ))),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let family = args.family.resolve()?;
    let style = parse_style(&args.style)?;
    let params = Params::Pairwise(PairwiseParams {
        sigma2: args.sigma2,
        b: args.b,
        a: args.a,
        s: args.s,
        tau2: args.tau2,
    });
    let design = gen_time_design(
        args.n,
        2,
        style,
        &[0.0, 0.0],
        (args.lo, args.hi),
        derive_seed(args.seed, 0),
    )?;
    let set = sample_gplag(family, &params, &design, derive_seed(args.seed, 1))?;
    save_csv(&set, &args.out)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Training CSV the model was fitted on.
    #[arg(long)]
    pub data: PathBuf,
    /// Fit JSON produced by the fit command.
    #[arg(long)]
    pub fit: PathBuf,
    /// Query CSV with header `t,series`; the series column uses the training
    /// labels (or 1-based indices for series the training set never saw).
    #[arg(long)]
    pub query: PathBuf,
    /// Output CSV (`t,series,mean,variance`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads `t,series` query rows, mapping the label column through the
/// training labels and falling back to 1-based indices for unseen series.
fn read_query(path: &PathBuf, train: &TimeSeriesSet, covered: usize) -> Result<Vec<(f64, usize, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    if headers.len() < 2 || &headers[0] != "t" || &headers[1] != "series" {
        return Err(Error::Format(format!(
            "query header must start with `t,series`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let t: f64 = record[0].parse().map_err(|_| Error::Parse {
            row,
            message: format!("bad time `{}`", &record[0]),
        })?;
        let label = record[1].to_string();
        let series = match train.labels().iter().position(|l| l == &label) {
            Some(pos) => pos + 1,
            None => match label.parse::<usize>() {
                Ok(idx) if (1..=covered).contains(&idx) => idx,
                _ => {
                    return Err(Error::Parse {
                        row,
                        message: format!(
                            "series `{label}` is neither a training label nor an index in 1..={covered}"
                        ),
                    })
                }
            },
        };
        out.push((t, series, label));
    }
    if out.is_empty() {
        return Err(Error::Format("query file has no rows".into()));
    }
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<u8> {
    let train = load_csv(&args.data)?;
    let text = std::fs::read_to_string(&args.fit)?;
    let fit: FitResult =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("fit JSON: {e}")))?;
    let query = read_query(&args.query, &train, fit.params.num_series())?;
    let points: Vec<(f64, usize)> = query.iter().map(|&(t, s, _)| (t, s)).collect();
    let pred = blup_predict(&fit, fit.family, &train, &points)?;

    let mut rows = Vec::with_capacity(query.len());
    rows.push("t,series,mean,variance".to_string());
    for ((t, _, label), (mean, var)) in query
        .iter()
        .zip(pred.mean.iter().zip(pred.variance.iter()))
    {
        rows.push(format!("{t},{label},{mean},{var}"));
    }
    let body = rows.join("\n") + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    /// Input CSV with exactly two series.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub family: FamilyOpts,
    /// Posterior draws kept after burn-in.
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    /// Burn-in iterations (adaptation happens here).
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    /// Lower end of the shift range informing the shift prior.
    #[arg(long = "s-lo", default_value_t = 0.0, allow_hyphen_values = true)]
    pub s_lo: f64,
    /// Upper end of the shift range informing the shift prior.
    #[arg(long = "s-hi", default_value_t = 4.0, allow_hyphen_values = true)]
    pub s_hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV of draws (`a,b,s,sigma2,tau2`).
    #[arg(long)]
    pub out: PathBuf,
    /// Write the posterior summary JSON here instead of stdout.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

pub fn cmd_bayes(args: &BayesArgs) -> Result<u8> {
    let family = args.family.resolve()?;
    let set = load_csv(&args.data)?;
    let priors = PriorSpec::default_for(&set, (args.s_lo, args.s_hi))?;
    let samples = sample_posterior(&set, family, &priors, args.draws, args.burnin, args.seed)?;
    save_draws_csv(&samples, &args.out)?;
    let table = summarize(&samples)?;
    let report = serde_json::json!({
        "family": family.tag(),
        "draws": samples.draws.len(),
        "acceptance_rate": samples.acceptance_rate,
        "seed": samples.seed,
        "parameters": table,
    });
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    match &args.summary {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Pair CSVs to score (each must contain exactly two series).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub family: FamilyOpts,
    /// Soft-alignment temperature γ.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Lower bound of the shift box (also sets the lag-scan half-width).
    #[arg(long = "s-lo", default_value_t = 0.0, allow_hyphen_values = true)]
    pub s_lo: f64,
    /// Upper bound of the shift box (also sets the lag-scan half-width).
    #[arg(long = "s-hi", default_value_t = 4.0, allow_hyphen_values = true)]
    pub s_hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (`pair_id,method,score,lag`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Lag-scan grid: multiples of the median series-1 spacing covering the
/// symmetric box `±max(|s_lo|, |s_hi|)`.
fn lag_grid(times: &[f64], half_width: f64) -> Vec<f64> {
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|x, y| x.partial_cmp(y).expect("times are finite"));
    let step = if gaps.is_empty() { 1.0 } else { gaps[gaps.len() / 2] };
    if !(step > 0.0) {
        return vec![0.0];
    }
    let max_steps = (half_width / step).floor() as i64;
    (-max_steps..=max_steps).map(|j| j as f64 * step).collect()
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<u8> {
    let family = args.family.resolve()?;
    if !(args.gamma > 0.0) {
        return Err(Error::Argument(format!(
            "gamma must be positive, got {}",
            args.gamma
        )));
    }
    let config = FitConfig {
        s_bounds: (args.s_lo, args.s_hi),
        seed: args.seed,
        ..FitConfig::default()
    };
    let half_width = args.s_lo.abs().max(args.s_hi.abs());

    let mut rows = Vec::with_capacity(args.files.len() * 4);
    rows.push("pair_id,method,score,lag".to_string());
    for path in &args.files {
        let set = load_csv(path)?;
        if set.num_series() != 2 {
            return Err(Error::Argument(format!(
                "{}: benchmark needs exactly two series, found {}",
                path.display(),
                set.num_series()
            )));
        }
        let pair_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());

        // The model assumes zero means, so its fit runs on centered values;
        // the alignment baselines score the raw series.
        let fit = fit_mle_pairwise(&center_series(&set), family, &config)?;
        let (a_hat, s_hat) = match &fit.params {
            Params::Pairwise(p) => (p.a, p.s),
            Params::Multi(_) => unreachable!("pairwise fit returned multi parameters"),
        };

        let mut series1: Vec<(f64, f64)> = Vec::new();
        let mut series2: Vec<f64> = Vec::new();
        for obs in set.observations() {
            if obs.series == 1 {
                series1.push((obs.t, obs.y));
            } else {
                series2.push(obs.y);
            }
        }
        let times1: Vec<f64> = series1.iter().map(|&(t, _)| t).collect();
        let y1: Vec<f64> = series1.iter().map(|&(_, y)| y).collect();
        let scan = tlcc(&set, &lag_grid(&times1, half_width))?;
        let warp = dtw(&y1, &series2)?;
        let soft = soft_dtw_divergence(&y1, &series2, args.gamma)?;

        rows.push(format!("{pair_id},gplag,{a_hat},{s_hat}"));
        rows.push(format!("{pair_id},tlcc,{},{}", scan.best_corr, scan.best_lag));
        rows.push(format!("{pair_id},dtw,{},", warp.distance));
        rows.push(format!("{pair_id},soft_dtw,{soft},"));
    }
    let body = rows.join("\n") + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment preset: recovery, consistency, prediction,
    /// arctan-cluster, or three-series.
    #[arg(long)]
    pub name: ExperimentName,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub family: FamilyOpts,
    /// Observations per series (preset default when omitted).
    #[arg(long)]
    pub n: Option<usize>,
    /// Start of the sampling time range (preset default when omitted).
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    /// End of the sampling time range (preset default when omitted).
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Lower bound of the shift box (preset default when omitted).
    #[arg(long = "s-lo", allow_hyphen_values = true)]
    pub s_lo: Option<f64>,
    /// Upper bound of the shift box (preset default when omitted).
    #[arg(long = "s-hi", allow_hyphen_values = true)]
    pub s_hi: Option<f64>,
    /// Generator noise variance τ² (preset default when omitted).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Soft-alignment temperature γ for the clustering baselines.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Optimizer starts per fit (preset default when omitted).
    #[arg(long)]
    pub multistart: Option<usize>,
    /// Iteration cap per start (preset default when omitted).
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Directory receiving estimates.csv and summary.json.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

impl clap::builder::ValueParserFactory for ExperimentName {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| {
            s.parse::<ExperimentName>().map_err(|e| e.to_string())
        })
    }
}

fn paired(lo: Option<f64>, hi: Option<f64>, what: &str) -> Result<Option<(f64, f64)>> {
    match (lo, hi) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Error::Argument(format!(
            "{what} needs both endpoints or neither"
        ))),
    }
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<u8> {
    let mut spec = ExperimentSpec::new(args.name, args.replicates, args.seed, args.family.resolve()?);
    spec.n_per_series = args.n;
    spec.range = paired(args.lo, args.hi, "the time range (--lo/--hi)")?;
    spec.s_bounds = paired(args.s_lo, args.s_hi, "the shift box (--s-lo/--s-hi)")?;
    spec.noise = args.noise;
    spec.gamma = args.gamma;
    spec.multistart = args.multistart;
    spec.max_iter = args.max_iter;
    spec.out_dir = Some(args.out_dir.clone());
    let report = run_experiment(&spec)?;
    let json = serde_json::to_string_pretty(&report.summary)
        .map_err(|e| Error::Format(e.to_string()))?;
    println!("{json}");
    if report.failures > 0 {
        eprintln!(
            "warning: {}/{} replicates failed",
            report.failures, report.attempted
        );
    }
    std::io::stdout().flush()?;
    Ok(if report.failures * 10 > report.attempted {
        EXIT_DEGRADED
    } else {
        EXIT_OK
    })
}

/// Dispatches a parsed command to its implementation.
pub fn run(command: &Command) -> Result<u8> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Bayes(args) => cmd_bayes(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn test_family_resolution() {
        let opts = FamilyOpts {
            family: "lmat".into(),
            nu: Some(1.5),
            c: None,
        };
        assert_eq!(opts.resolve().unwrap(), KernelFamily::LMat { nu: 1.5 });
        let rejected = FamilyOpts {
            family: "complex_exponential".into(),
            nu: None,
            c: None,
        };
        let err = rejected.resolve().unwrap_err().to_string();
        assert!(err.contains("not positive semidefinite"), "{err}");
    }

    #[test]
    fn test_cli_parses_fit_flags() {
        let cli = Cli::try_parse_from([
            "gplag", "fit", "--data", "pair.csv", "--family", "lrbf", "--s-lo", "0", "--s-hi",
            "4", "--seed", "7",
        ])
        .unwrap();
        match cli.command {
            Command::Fit(args) => {
                assert_eq!(args.family.family, "lrbf");
                assert_eq!(args.s_hi, 4.0);
                assert_eq!(args.seed, 7);
                assert!(args.out.is_none());
            }
            _ => panic!("expected the fit subcommand"),
        }
    }

    #[test]
    fn test_cli_parses_experiment_name() {
        let cli = Cli::try_parse_from([
            "gplag",
            "experiment",
            "--name",
            "three-series",
            "--replicates",
            "5",
            "--out-dir",
            "/tmp/out",
        ])
        .unwrap();
        match cli.command {
            Command::Experiment(args) => {
                assert_eq!(args.name, ExperimentName::ThreeSeries);
                assert_eq!(args.replicates, 5);
            }
            _ => panic!("expected the experiment subcommand"),
        }
        assert!(Cli::try_parse_from(["gplag", "experiment", "--name", "warmup", "--out-dir", "x"])
            .is_err());
    }

    #[test]
    fn test_style_parsing() {
        assert_eq!(parse_style("jittered").unwrap(), DesignStyle::JitteredGrid);
        assert_eq!(parse_style("regular").unwrap(), DesignStyle::Regular);
        assert!(parse_style("sobol").is_err());
    }

    #[test]
    fn test_lag_grid_spans_symmetric_box() {
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let grid = lag_grid(&times, 1.5);
        assert_eq!(grid, vec![-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]);
        assert_eq!(lag_grid(&[2.0, 2.0, 2.0], 1.0), vec![0.0]);
    }

    #[test]
    fn test_paired_range_flags() {
        assert_eq!(paired(Some(0.0), Some(4.0), "x").unwrap(), Some((0.0, 4.0)));
        assert_eq!(paired(None, None, "x").unwrap(), None);
        assert!(paired(Some(0.0), None, "x").is_err());
    }
}
