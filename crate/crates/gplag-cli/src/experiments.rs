//! Named experiment presets: each one regenerates a simulation study end to
//! end (simulate → fit → summarize) from a single seed, writing a
//! per-replicate CSV and a summary JSON. Replicates run in parallel with
//! seeds derived per replicate, so results are independent of thread count;
//! `GPLAG_THREADS` caps the worker pool.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde_json::{json, Value};

use gplag::baselines::{ari, dtw, kmeans, nmi, soft_dtw_divergence, tlcc};
use gplag::data::{center_series, train_test_split};
use gplag::inference::{fit_mle_multi, fit_mle_pairwise, fit_mle_single};
use gplag::predict::{blup_predict, single_series_predict};
use gplag::simulate::{derive_seed, gen_arctan, gen_time_design, sample_gplag, DesignStyle};
use gplag::{
    Error, FitConfig, KernelFamily, MultiParams, PairwiseParams, Params, Result, TimeSeriesSet,
};

/// Shared worker pool, sized by `GPLAG_THREADS` when set (invalid values are
/// ignored with a warning; rayon's default is the core count).
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("GPLAG_THREADS") {
            match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => builder = builder.num_threads(n),
                _ => eprintln!("warning: ignoring invalid GPLAG_THREADS value `{v}`"),
            }
        }
        builder
            .build()
            .expect("default thread-pool settings are always buildable")
    })
}

/// Empirical quantile with linear interpolation; `data` need not be sorted.
fn quantile(data: &[f64], p: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("estimates are finite"));
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

fn iqr(data: &[f64]) -> f64 {
    quantile(data, 0.75) - quantile(data, 0.25)
}

/// `{"median": …, "q1": …, "q3": …}` summary of one estimate column.
fn quartile_entry(data: &[f64]) -> Value {
    json!({
        "median": median(data),
        "q1": quantile(data, 0.25),
        "q3": quantile(data, 0.75),
    })
}

/// The five named studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    /// Pairwise parameter recovery on the jittered grid.
    Recovery,
    /// Shrinking spread of the shift estimate as series length grows.
    Consistency,
    /// Held-out prediction: two-series model vs a single-series baseline.
    Prediction,
    /// Clustering nine saturating-ramp series by fitted dissimilarity.
    ArctanCluster,
    /// Three-series joint fit with triangle-constrained dissimilarities.
    ThreeSeries,
}

impl ExperimentName {
    /// CLI tag of the experiment.
    pub fn tag(&self) -> &'static str {
        match self {
            ExperimentName::Recovery => "recovery",
            ExperimentName::Consistency => "consistency",
            ExperimentName::Prediction => "prediction",
            ExperimentName::ArctanCluster => "arctan-cluster",
            ExperimentName::ThreeSeries => "three-series",
        }
    }
}

impl std::str::FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recovery" => Ok(ExperimentName::Recovery),
            "consistency" => Ok(ExperimentName::Consistency),
            "prediction" => Ok(ExperimentName::Prediction),
            "arctan-cluster" => Ok(ExperimentName::ArctanCluster),
            "three-series" => Ok(ExperimentName::ThreeSeries),
            other => Err(Error::Argument(format!(
                "unknown experiment `{other}`; expected one of recovery, consistency, prediction, arctan-cluster, three-series"
            ))),
        }
    }
}

/// A fully specified experiment run: the preset name, replicate count, base
/// seed, kernel family, optional parameter overrides (each preset supplies
/// its own defaults), and where to write outputs (`None` skips writing).
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub replicates: usize,
    pub seed: u64,
    pub family: KernelFamily,
    /// Observations per series; preset default when `None`.
    pub n_per_series: Option<usize>,
    /// Sampling time range; preset default when `None`.
    pub range: Option<(f64, f64)>,
    /// Shift box for fitting; preset default when `None`.
    pub s_bounds: Option<(f64, f64)>,
    /// Generator noise variance τ²; preset default when `None`.
    pub noise: Option<f64>,
    /// Soft-alignment temperature for the clustering baselines.
    pub gamma: f64,
    /// Multistart count override for the fits.
    pub multistart: Option<usize>,
    /// Iteration-cap override for the fits.
    pub max_iter: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// A spec with preset defaults everywhere but the required fields.
    pub fn new(name: ExperimentName, replicates: usize, seed: u64, family: KernelFamily) -> Self {
        Self {
            name,
            replicates,
            seed,
            family,
            n_per_series: None,
            range: None,
            s_bounds: None,
            noise: None,
            gamma: 1.0,
            multistart: None,
            max_iter: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Argument("replicates must be at least 1".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Argument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        self.family.check()
    }

    /// Fit settings for replicate studies: the preset shift box unless
    /// overridden, and a lighter optimizer budget than the library default
    /// since hundreds of fits run back to back.
    fn fit_config(&self, default_s_bounds: (f64, f64)) -> FitConfig {
        FitConfig {
            s_bounds: self.s_bounds.unwrap_or(default_s_bounds),
            max_iter: self.max_iter.unwrap_or(150),
            grad_tol: 1e-4,
            multistart_count: self.multistart.unwrap_or(3),
            ..FitConfig::default()
        }
    }

    /// Fit settings for the clustering study: nine fits total, so the full
    /// library optimizer budget is affordable and buys the sharp â
    /// separation the study is about.
    fn full_fit_config(&self, default_s_bounds: (f64, f64)) -> FitConfig {
        let mut config = FitConfig {
            s_bounds: self.s_bounds.unwrap_or(default_s_bounds),
            ..FitConfig::default()
        };
        if let Some(m) = self.multistart {
            config.multistart_count = m;
        }
        if let Some(m) = self.max_iter {
            config.max_iter = m;
        }
        config
    }
}

/// One fitted replicate of a pairwise study.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub sigma2: f64,
    pub tau2: f64,
    pub loglik: f64,
    pub converged: bool,
}

fn pairwise_estimates(fit: &gplag::FitResult) -> PairwiseParams {
    match &fit.params {
        Params::Pairwise(p) => p.clone(),
        Params::Multi(_) => unreachable!("pairwise fit returned multi parameters"),
    }
}

/// Simulates and fits `replicates` independent datasets from the pairwise
/// model: jittered grid over `range`, exact draw, constrained MLE. Returns
/// the successful fits in replicate order plus one message per failed
/// replicate (hard failures are recorded, not fatal).
pub fn pairwise_replicates(
    family: KernelFamily,
    truth: &PairwiseParams,
    n: usize,
    range: (f64, f64),
    replicates: usize,
    base_seed: u64,
    config: &FitConfig,
) -> (Vec<ReplicateFit>, Vec<String>) {
    let results: Vec<std::result::Result<ReplicateFit, String>> = pool().install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                one_pairwise_replicate(family, truth, n, range, r, base_seed, config)
                    .map_err(|e| format!("replicate {r}: {e}"))
            })
            .collect()
    });
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(fit) => fits.push(fit),
            Err(msg) => failures.push(msg),
        }
    }
    (fits, failures)
}

fn one_pairwise_replicate(
    family: KernelFamily,
    truth: &PairwiseParams,
    n: usize,
    range: (f64, f64),
    replicate: usize,
    base_seed: u64,
    config: &FitConfig,
) -> Result<ReplicateFit> {
    let rep_seed = derive_seed(base_seed, replicate as u64);
    let design = gen_time_design(
        n,
        2,
        DesignStyle::JitteredGrid,
        &[0.0, 0.0],
        range,
        derive_seed(rep_seed, 0),
    )?;
    let set = sample_gplag(
        family,
        &Params::Pairwise(truth.clone()),
        &design,
        derive_seed(rep_seed, 1),
    )?;
    let fit = fit_mle_pairwise(&set, family, config)?;
    let p = pairwise_estimates(&fit);
    Ok(ReplicateFit {
        replicate,
        a: p.a,
        b: p.b,
        s: p.s,
        sigma2: p.sigma2,
        tau2: p.tau2,
        loglik: fit.loglik,
        converged: fit.converged,
    })
}

fn write_summary(out_dir: &Path, summary: &Value) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut file = std::fs::File::create(out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut file, summary)
        .map_err(|e| Error::Format(e.to_string()))?;
    file.write_all(b"\n")?;
    Ok(())
}

fn csv_writer(out_dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    std::fs::create_dir_all(out_dir)?;
    csv::Writer::from_path(out_dir.join(name))
        .map_err(|e| Error::Format(format!("{name}: {e}")))
}

fn fit_record(prefix: &[String], fit: &ReplicateFit) -> Vec<String> {
    let mut rec = prefix.to_vec();
    rec.extend([
        fit.a.to_string(),
        fit.b.to_string(),
        fit.s.to_string(),
        fit.sigma2.to_string(),
        fit.tau2.to_string(),
        fit.loglik.to_string(),
        fit.converged.to_string(),
    ]);
    rec
}

// --- recovery ---------------------------------------------------------------

/// Recovery-study result: raw fits, per-replicate failures, summary JSON.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub fits: Vec<ReplicateFit>,
    pub failures: Vec<String>,
    pub summary: Value,
}

/// Ground truth shared by the recovery and consistency studies.
pub fn recovery_truth(noise: Option<f64>) -> PairwiseParams {
    PairwiseParams {
        sigma2: 4.0,
        b: 0.3,
        a: 1.0,
        s: 2.0,
        tau2: noise.unwrap_or(0.1),
    }
}

/// Parameter-recovery study: replicated jittered-grid datasets at
/// `(b, a, s, σ²) = (0.3, 1, 2, 4)`, fitted with the shift box `(0, 4)`;
/// the summary reports a median/quartile table per parameter.
pub fn run_recovery(spec: &ExperimentSpec) -> Result<RecoveryResult> {
    spec.validate()?;
    let truth = recovery_truth(spec.noise);
    let n = spec.n_per_series.unwrap_or(100);
    let range = spec.range.unwrap_or((-50.0, 50.0));
    let config = spec.fit_config((0.0, 4.0));
    let (fits, failures) =
        pairwise_replicates(spec.family, &truth, n, range, spec.replicates, spec.seed, &config);
    if fits.is_empty() {
        return Err(Error::Optimization(format!(
            "every replicate failed; first failure: {}",
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    let column = |f: fn(&ReplicateFit) -> f64| fits.iter().map(f).collect::<Vec<_>>();
    let summary = json!({
        "experiment": "recovery",
        "family": spec.family.tag(),
        "replicates": spec.replicates,
        "n_per_series": n,
        "failures": failures.len(),
        "truth": {"a": truth.a, "b": truth.b, "s": truth.s, "sigma2": truth.sigma2, "tau2": truth.tau2},
        "estimates": {
            "a": quartile_entry(&column(|f| f.a)),
            "b": quartile_entry(&column(|f| f.b)),
            "s": quartile_entry(&column(|f| f.s)),
            "sigma2": quartile_entry(&column(|f| f.sigma2)),
            "tau2": quartile_entry(&column(|f| f.tau2)),
        },
    });
    let result = RecoveryResult {
        fits,
        failures,
        summary,
    };
    if let Some(dir) = &spec.out_dir {
        let mut w = csv_writer(dir, "estimates.csv")?;
        w.write_record(["replicate", "a", "b", "s", "sigma2", "tau2", "loglik", "converged"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for fit in &result.fits {
            w.write_record(fit_record(&[fit.replicate.to_string()], fit))
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        write_summary(dir, &result.summary)?;
    }
    Ok(result)
}

// --- consistency ------------------------------------------------------------

/// Consistency-study result: fits per series length and the shift-IQR curve.
#[derive(Debug, Clone)]
pub struct ConsistencyResult {
    pub per_n: Vec<(usize, Vec<ReplicateFit>)>,
    pub failures: Vec<String>,
    /// `(n, IQR of ŝ)` in increasing `n`.
    pub iqr_s: Vec<(usize, f64)>,
    pub summary: Value,
}

/// Series lengths swept by the consistency study.
pub const CONSISTENCY_LENGTHS: [usize; 4] = [20, 50, 100, 200];

/// Shift-consistency study: the recovery design rerun at n ∈ {20, 50, 100,
/// 200} with the time span growing alongside n (near-unit spacing at every
/// level, so longer series genuinely carry more evidence about the shift),
/// recording how the interquartile range of ŝ shrinks. A `--lo/--hi`
/// override pins one fixed range across all levels instead (infill design).
pub fn run_consistency(spec: &ExperimentSpec) -> Result<ConsistencyResult> {
    spec.validate()?;
    let truth = recovery_truth(spec.noise);
    let config = spec.fit_config((0.0, 4.0));
    let mut per_n = Vec::new();
    let mut failures = Vec::new();
    for (i, &n) in CONSISTENCY_LENGTHS.iter().enumerate() {
        let half = n as f64 / 2.0;
        let range = spec.range.unwrap_or((-half, half));
        let (fits, fails) = pairwise_replicates(
            spec.family,
            &truth,
            n,
            range,
            spec.replicates,
            derive_seed(spec.seed, i as u64),
            &config,
        );
        failures.extend(fails.into_iter().map(|m| format!("n={n}: {m}")));
        if fits.is_empty() {
            return Err(Error::Optimization(format!(
                "every replicate failed at n = {n}"
            )));
        }
        per_n.push((n, fits));
    }
    let iqr_s: Vec<(usize, f64)> = per_n
        .iter()
        .map(|(n, fits)| (*n, iqr(&fits.iter().map(|f| f.s).collect::<Vec<_>>())))
        .collect();
    let nonincreasing = iqr_s.windows(2).all(|w| w[1].1 <= w[0].1);
    let summary = json!({
        "experiment": "consistency",
        "family": spec.family.tag(),
        "replicates": spec.replicates,
        "failures": failures.len(),
        "per_n": per_n.iter().zip(&iqr_s).map(|((n, fits), (_, iqr_s))| json!({
            "n": n,
            "iqr_s": iqr_s,
            "s": quartile_entry(&fits.iter().map(|f| f.s).collect::<Vec<_>>()),
            "a": quartile_entry(&fits.iter().map(|f| f.a).collect::<Vec<_>>()),
        })).collect::<Vec<_>>(),
        "iqr_s_nonincreasing": nonincreasing,
    });
    let result = ConsistencyResult {
        per_n,
        failures,
        iqr_s,
        summary,
    };
    if let Some(dir) = &spec.out_dir {
        let mut w = csv_writer(dir, "estimates.csv")?;
        w.write_record(["n", "replicate", "a", "b", "s", "sigma2", "tau2", "loglik", "converged"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for (n, fits) in &result.per_n {
            for fit in fits {
                w.write_record(fit_record(
                    &[n.to_string(), fit.replicate.to_string()],
                    fit,
                ))
                .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        w.flush()?;
        write_summary(dir, &result.summary)?;
    }
    Ok(result)
}

// --- prediction -------------------------------------------------------------

/// One held-out comparison: the paired model against the lone-series GP.
#[derive(Debug, Clone)]
pub struct PredictionRow {
    pub replicate: usize,
    pub mse_pair: f64,
    pub mse_single: f64,
    pub pair_wins: bool,
}

/// Prediction-study result.
#[derive(Debug, Clone)]
pub struct PredictionStudyResult {
    pub rows: Vec<PredictionRow>,
    pub failures: Vec<String>,
    pub win_rate: f64,
    pub summary: Value,
}

/// Held-out prediction study at `(b, a, s, σ²) = (1, 0.3, 2, 4)`: each
/// replicate draws an n-per-series pair, splits 50/50, fits both the paired
/// model and a lone-series GP on the target (second) series, and compares
/// held-out mean-squared error on the target series.
pub fn run_prediction(spec: &ExperimentSpec) -> Result<PredictionStudyResult> {
    spec.validate()?;
    let truth = PairwiseParams {
        sigma2: 4.0,
        b: 1.0,
        a: 0.3,
        s: 2.0,
        tau2: spec.noise.unwrap_or(0.1),
    };
    let n = spec.n_per_series.unwrap_or(50);
    let range = spec.range.unwrap_or((-25.0, 25.0));
    let config = spec.fit_config((0.0, 4.0));
    let results: Vec<std::result::Result<PredictionRow, String>> = pool().install(|| {
        (0..spec.replicates)
            .into_par_iter()
            .map(|r| {
                one_prediction_replicate(spec.family, &truth, n, range, r, spec.seed, &config)
                    .map_err(|e| format!("replicate {r}: {e}"))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(row) => rows.push(row),
            Err(msg) => failures.push(msg),
        }
    }
    if rows.is_empty() {
        return Err(Error::Optimization(format!(
            "every replicate failed; first failure: {}",
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    let wins = rows.iter().filter(|r| r.pair_wins).count();
    let win_rate = wins as f64 / rows.len() as f64;
    let summary = json!({
        "experiment": "prediction",
        "family": spec.family.tag(),
        "replicates": spec.replicates,
        "n_per_series": n,
        "failures": failures.len(),
        "win_rate": win_rate,
        "mse_pair": quartile_entry(&rows.iter().map(|r| r.mse_pair).collect::<Vec<_>>()),
        "mse_single": quartile_entry(&rows.iter().map(|r| r.mse_single).collect::<Vec<_>>()),
    });
    let result = PredictionStudyResult {
        rows,
        failures,
        win_rate,
        summary,
    };
    if let Some(dir) = &spec.out_dir {
        let mut w = csv_writer(dir, "estimates.csv")?;
        w.write_record(["replicate", "mse_pair", "mse_single", "pair_wins"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for row in &result.rows {
            w.write_record([
                row.replicate.to_string(),
                row.mse_pair.to_string(),
                row.mse_single.to_string(),
                row.pair_wins.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        write_summary(dir, &result.summary)?;
    }
    Ok(result)
}

fn mean_squared_error(predicted: &[f64], observed: &[f64]) -> f64 {
    predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).powi(2))
        .sum::<f64>()
        / predicted.len().max(1) as f64
}

fn one_prediction_replicate(
    family: KernelFamily,
    truth: &PairwiseParams,
    n: usize,
    range: (f64, f64),
    replicate: usize,
    base_seed: u64,
    config: &FitConfig,
) -> Result<PredictionRow> {
    let rep_seed = derive_seed(base_seed, replicate as u64);
    let design = gen_time_design(
        n,
        2,
        DesignStyle::JitteredGrid,
        &[0.0, 0.0],
        range,
        derive_seed(rep_seed, 0),
    )?;
    let set = sample_gplag(
        family,
        &Params::Pairwise(truth.clone()),
        &design,
        derive_seed(rep_seed, 1),
    )?;
    let split = train_test_split(&set, 0.5, derive_seed(rep_seed, 2))?;

    // Held-out points of the target (second) series, in canonical order.
    let held_out: Vec<(f64, f64)> = split
        .test
        .observations()
        .iter()
        .filter(|o| o.series == 2)
        .map(|o| (o.t, o.y))
        .collect();
    if held_out.is_empty() {
        return Err(Error::Argument("the split left no target test points".into()));
    }

    let fit = fit_mle_pairwise(&split.train, family, config)?;
    let query: Vec<(f64, usize)> = held_out.iter().map(|&(t, _)| (t, 2)).collect();
    let pair_pred = blup_predict(&fit, family, &split.train, &query)?;
    let observed: Vec<f64> = held_out.iter().map(|&(_, y)| y).collect();
    let mse_pair = mean_squared_error(&pair_pred.mean, &observed);

    let (train_t, train_y): (Vec<f64>, Vec<f64>) = split
        .train
        .observations()
        .iter()
        .filter(|o| o.series == 2)
        .map(|o| (o.t, o.y))
        .unzip();
    let (sigma2, b, tau2) = fit_mle_single(&train_t, &train_y, family, config)?;
    let query_t: Vec<f64> = held_out.iter().map(|&(t, _)| t).collect();
    let single_pred =
        single_series_predict(family, sigma2, b, tau2, &train_t, &train_y, &query_t)?;
    let mse_single = mean_squared_error(&single_pred.mean, &observed);

    Ok(PredictionRow {
        replicate,
        mse_pair,
        mse_single,
        pair_wins: mse_pair < mse_single,
    })
}

// --- arctan clustering -------------------------------------------------------

/// One saturating-ramp pair: generator coordinates, the fitted pair
/// parameters, and the three alignment-baseline scores against the shared
/// reference series.
#[derive(Debug, Clone)]
pub struct ArctanRow {
    pub pair_id: usize,
    pub k: f64,
    pub s: f64,
    pub gplag_a: f64,
    pub gplag_s: f64,
    pub tlcc_corr: f64,
    pub dtw_distance: f64,
    pub soft_dtw_divergence: f64,
}

/// Clustering-study result: per-pair scores and per-method agreement with
/// the steepness partition.
#[derive(Debug, Clone)]
pub struct ArctanClusterResult {
    pub rows: Vec<ArctanRow>,
    /// Adjusted Rand index per method (`gplag`, `tlcc`, `dtw`, `soft_dtw`).
    pub ari: BTreeMap<String, f64>,
    /// Normalized mutual information per method.
    pub nmi: BTreeMap<String, f64>,
    pub summary: Value,
}

/// Steepness and shift grids of the clustering study.
pub const ARCTAN_STEEPNESS: [f64; 3] = [0.01, 1.0, 10.0];
pub const ARCTAN_SHIFTS: [f64; 3] = [0.0, 0.5, 1.0];

/// Clustering study: nine series `arctan(k(t+s))/arctan(k)` on 50 points of
/// [−2, 2] (steepness × shift grid), each paired with the flattest unshifted
/// member as a common reference. Every method scores each pair — fitted
/// dissimilarity â for the pair model, peak correlation for the lag scan,
/// alignment costs for the warping baselines — and 1-D k-means with k = 3 on
/// each score column is graded against the steepness partition.
pub fn run_arctan_cluster(spec: &ExperimentSpec) -> Result<ArctanClusterResult> {
    spec.validate()?;
    let n = spec.n_per_series.unwrap_or(50);
    let range = spec.range.unwrap_or((-2.0, 2.0));
    let config = spec.full_fit_config((0.0, 2.0));
    let (ref_t, ref_y) = gen_arctan(ARCTAN_STEEPNESS[0], 0.0, n, range)?;

    let cases: Vec<(usize, f64, f64)> = ARCTAN_STEEPNESS
        .iter()
        .flat_map(|&k| ARCTAN_SHIFTS.iter().map(move |&s| (k, s)))
        .enumerate()
        .map(|(i, (k, s))| (i, k, s))
        .collect();
    let rows: Vec<ArctanRow> = pool().install(|| {
        cases
            .par_iter()
            .map(|&(i, k, s)| -> Result<ArctanRow> {
                let (t, y) = gen_arctan(k, s, n, range)?;
                let set = TimeSeriesSet::from_series(&[
                    (ref_t.clone(), ref_y.clone()),
                    (t.clone(), y.clone()),
                ])?;
                // The ramp family has nonzero means; the GP model assumes
                // them away, so fit on the centered pair. The alignment
                // baselines run on the raw values.
                let fit = fit_mle_pairwise(&center_series(&set), spec.family, &config)?;
                let p = pairwise_estimates(&fit);
                let step = t[1] - t[0];
                let max_lag = (1.5 / step).floor() as i64;
                let lags: Vec<f64> = (-max_lag..=max_lag).map(|j| j as f64 * step).collect();
                let scan = tlcc(&set, &lags)?;
                let warp = dtw(&ref_y, &y)?;
                let soft = soft_dtw_divergence(&ref_y, &y, spec.gamma)?;
                Ok(ArctanRow {
                    pair_id: i,
                    k,
                    s,
                    gplag_a: p.a,
                    gplag_s: p.s,
                    tlcc_corr: scan.best_corr,
                    dtw_distance: warp.distance,
                    soft_dtw_divergence: soft,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // Ground truth: one cluster per steepness value, shifts within a
    // cluster.
    let truth: Vec<usize> = cases.iter().map(|&(i, _, _)| i / ARCTAN_SHIFTS.len()).collect();
    let methods: [(&str, Vec<f64>); 4] = [
        ("gplag", rows.iter().map(|r| r.gplag_a).collect()),
        ("tlcc", rows.iter().map(|r| r.tlcc_corr).collect()),
        ("dtw", rows.iter().map(|r| r.dtw_distance).collect()),
        ("soft_dtw", rows.iter().map(|r| r.soft_dtw_divergence).collect()),
    ];
    let mut ari_scores = BTreeMap::new();
    let mut nmi_scores = BTreeMap::new();
    for (m, (name, scores)) in methods.iter().enumerate() {
        let labels = kmeans(scores, 3, derive_seed(spec.seed, m as u64), 10)?;
        ari_scores.insert(name.to_string(), ari(&labels, &truth)?);
        nmi_scores.insert(name.to_string(), nmi(&labels, &truth)?);
    }

    let summary = json!({
        "experiment": "arctan-cluster",
        "family": spec.family.tag(),
        "pairs": rows.len(),
        "gamma": spec.gamma,
        "ari": ari_scores,
        "nmi": nmi_scores,
    });
    let result = ArctanClusterResult {
        rows,
        ari: ari_scores,
        nmi: nmi_scores,
        summary,
    };
    if let Some(dir) = &spec.out_dir {
        let mut w = csv_writer(dir, "estimates.csv")?;
        w.write_record([
            "pair_id",
            "k",
            "s",
            "gplag_a",
            "gplag_s",
            "tlcc_corr",
            "dtw_distance",
            "soft_dtw_divergence",
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
        for row in &result.rows {
            w.write_record([
                row.pair_id.to_string(),
                row.k.to_string(),
                row.s.to_string(),
                row.gplag_a.to_string(),
                row.gplag_s.to_string(),
                row.tlcc_corr.to_string(),
                row.dtw_distance.to_string(),
                row.soft_dtw_divergence.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        write_summary(dir, &result.summary)?;
    }
    Ok(result)
}

// --- three series -----------------------------------------------------------

/// One fitted replicate of the three-series study.
#[derive(Debug, Clone)]
pub struct ThreeSeriesRow {
    pub replicate: usize,
    pub a12: f64,
    pub a13: f64,
    pub a23: f64,
    pub s2: f64,
    pub s3: f64,
    /// Worst triangle-inequality violation of the fitted dissimilarities.
    pub triangle_violation: f64,
    pub loglik: f64,
    pub converged: bool,
}

/// Three-series study result.
#[derive(Debug, Clone)]
pub struct ThreeSeriesResult {
    pub rows: Vec<ThreeSeriesRow>,
    pub failures: Vec<String>,
    pub summary: Value,
}

/// Joint three-series study at unit dissimilarities and shifts (0, 2, 4):
/// replicated draws, joint constrained MLE with the shift box (0, 6), and a
/// per-replicate record of the fitted dissimilarity triangle.
pub fn run_three_series(spec: &ExperimentSpec) -> Result<ThreeSeriesResult> {
    spec.validate()?;
    let truth = MultiParams {
        sigma2: 4.0,
        b: 0.3,
        a: vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ],
        s: vec![0.0, 2.0, 4.0],
        tau2: spec.noise.unwrap_or(0.1),
    };
    let n = spec.n_per_series.unwrap_or(50);
    let range = spec.range.unwrap_or((-25.0, 25.0));
    let config = spec.fit_config((0.0, 6.0));
    let results: Vec<std::result::Result<ThreeSeriesRow, String>> = pool().install(|| {
        (0..spec.replicates)
            .into_par_iter()
            .map(|r| {
                one_three_series_replicate(spec.family, &truth, n, range, r, spec.seed, &config)
                    .map_err(|e| format!("replicate {r}: {e}"))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(row) => rows.push(row),
            Err(msg) => failures.push(msg),
        }
    }
    if rows.is_empty() {
        return Err(Error::Optimization(format!(
            "every replicate failed; first failure: {}",
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    let column = |f: fn(&ThreeSeriesRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let summary = json!({
        "experiment": "three-series",
        "family": spec.family.tag(),
        "replicates": spec.replicates,
        "n_per_series": n,
        "failures": failures.len(),
        "estimates": {
            "a12": quartile_entry(&column(|r| r.a12)),
            "a13": quartile_entry(&column(|r| r.a13)),
            "a23": quartile_entry(&column(|r| r.a23)),
            "s2": quartile_entry(&column(|r| r.s2)),
            "s3": quartile_entry(&column(|r| r.s3)),
        },
        "max_triangle_violation": column(|r| r.triangle_violation)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(*v)),
    });
    let result = ThreeSeriesResult {
        rows,
        failures,
        summary,
    };
    if let Some(dir) = &spec.out_dir {
        let mut w = csv_writer(dir, "estimates.csv")?;
        w.write_record([
            "replicate",
            "a12",
            "a13",
            "a23",
            "s2",
            "s3",
            "triangle_violation",
            "loglik",
            "converged",
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
        for row in &result.rows {
            w.write_record([
                row.replicate.to_string(),
                row.a12.to_string(),
                row.a13.to_string(),
                row.a23.to_string(),
                row.s2.to_string(),
                row.s3.to_string(),
                row.triangle_violation.to_string(),
                row.loglik.to_string(),
                row.converged.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        write_summary(dir, &result.summary)?;
    }
    Ok(result)
}

/// Worst violation of `a[i][k] ≤ a[i][m] + a[m][k]` over all index triples.
pub fn worst_triangle_violation(a: &[Vec<f64>]) -> f64 {
    let l = a.len();
    let mut worst = 0.0f64;
    for i in 0..l {
        for k in 0..l {
            for m in 0..l {
                if m == i || m == k || i == k {
                    continue;
                }
                worst = worst.max(a[i][k] - a[i][m] - a[m][k]);
            }
        }
    }
    worst
}

fn one_three_series_replicate(
    family: KernelFamily,
    truth: &MultiParams,
    n: usize,
    range: (f64, f64),
    replicate: usize,
    base_seed: u64,
    config: &FitConfig,
) -> Result<ThreeSeriesRow> {
    let rep_seed = derive_seed(base_seed, replicate as u64);
    let design = gen_time_design(
        n,
        3,
        DesignStyle::JitteredGrid,
        &[0.0, 0.0, 0.0],
        range,
        derive_seed(rep_seed, 0),
    )?;
    let set = sample_gplag(
        family,
        &Params::Multi(truth.clone()),
        &design,
        derive_seed(rep_seed, 1),
    )?;
    let fit = fit_mle_multi(&set, family, config)?;
    let p = match &fit.params {
        Params::Multi(p) => p.clone(),
        Params::Pairwise(_) => unreachable!("multi fit returned pairwise parameters"),
    };
    Ok(ThreeSeriesRow {
        replicate,
        a12: p.a[0][1],
        a13: p.a[0][2],
        a23: p.a[1][2],
        s2: p.s[1],
        s3: p.s[2],
        triangle_violation: worst_triangle_violation(&p.a),
        loglik: fit.loglik,
        converged: fit.converged,
    })
}

// --- dispatch ----------------------------------------------------------------

/// What a finished experiment reports back to the command layer.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Value,
    pub failures: usize,
    pub attempted: usize,
}

/// Runs the named experiment, writing outputs when the spec carries an
/// output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let (summary, failures, attempted) = match spec.name {
        ExperimentName::Recovery => {
            let r = run_recovery(spec)?;
            (r.summary, r.failures.len(), spec.replicates)
        }
        ExperimentName::Consistency => {
            let r = run_consistency(spec)?;
            (
                r.summary,
                r.failures.len(),
                spec.replicates * CONSISTENCY_LENGTHS.len(),
            )
        }
        ExperimentName::Prediction => {
            let r = run_prediction(spec)?;
            (r.summary, r.failures.len(), spec.replicates)
        }
        ExperimentName::ArctanCluster => {
            let r = run_arctan_cluster(spec)?;
            let pairs = r.rows.len();
            (r.summary, 0, pairs)
        }
        ExperimentName::ThreeSeries => {
            let r = run_three_series(spec)?;
            (r.summary, r.failures.len(), spec.replicates)
        }
    };
    Ok(ExperimentReport {
        summary,
        failures,
        attempted,
    })
}
