//! Synthetic data generators: exact draws from the lagged-kernel model plus
//! the deterministic arctan family and a heavy-tailed linear generator used
//! by the clustering and prediction studies.
//!
//! Everything here is pure given `(inputs, seed)`: all randomness flows
//! through an explicitly seeded ChaCha8 stream, never global state, so
//! replicate generation parallelizes with per-replicate seeds (see
//! [`derive_seed`]).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::TimeSeriesSet;
use crate::error::{Error, Result};
use crate::kernels::{covariance_matrix_unchecked, validate_params, KernelFamily, Params};
use crate::linalg::cholesky_with_jitter;

/// How the time points of a design were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignStyle {
    /// Equispaced base grid plus iid Unif(−¼, ¼) jitter shared across series.
    JitteredGrid,
    /// Equispaced grid, no jitter.
    Regular,
    /// Caller-provided times.
    Explicit,
}

/// Sampling design: one time vector per series, plus the lag offsets that
/// were added to the non-baseline series.
///
/// Invariants: each series' times are sorted ascending and finite; for
/// generated designs the jitter never exceeds ±¼ around the base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDesign {
    /// Per-series time vectors, index 0 = series 1.
    pub times: Vec<Vec<f64>>,
    /// How the times were produced.
    pub style: DesignStyle,
    /// Offset added to each series' times (0 for the baseline; all zeros for
    /// explicit designs, where any lag is already baked into the times).
    pub lags: Vec<f64>,
}

impl TimeDesign {
    /// Wraps caller-provided per-series times after checking they are
    /// nonempty, finite, and sorted.
    pub fn explicit(times: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Argument("explicit design needs at least one series".into()));
        }
        for (l, ts) in times.iter().enumerate() {
            if ts.is_empty() {
                return Err(Error::Argument(format!("series {} has no time points", l + 1)));
            }
            if ts.iter().any(|t| !t.is_finite()) {
                return Err(Error::Argument(format!(
                    "series {} contains a non-finite time",
                    l + 1
                )));
            }
            if ts.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Argument(format!(
                    "series {} times are not sorted ascending",
                    l + 1
                )));
            }
        }
        let lags = vec![0.0; times.len()];
        Ok(Self {
            times,
            style: DesignStyle::Explicit,
            lags,
        })
    }

    /// Number of series in the design.
    pub fn num_series(&self) -> usize {
        self.times.len()
    }

    /// Total number of time points across series.
    pub fn len(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// True when the design has no time points.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generates a sampling design: `n_per_series` base points equispaced over
/// `range` (inclusive), optionally jittered by shared iid Unif(−¼, ¼), then
/// shifted per series by `lags[l]` — so with jitter the series share one
/// noise realization and series `l+1`'s times equal series 1's plus
/// `lags[l] − lags[0]` pointwise.
///
/// Deterministic per `seed`; `Regular` ignores the seed entirely. `Explicit`
/// is rejected here — build those with [`TimeDesign::explicit`].
pub fn gen_time_design(
    n_per_series: usize,
    num_series: usize,
    style: DesignStyle,
    lags: &[f64],
    range: (f64, f64),
    seed: u64,
) -> Result<TimeDesign> {
    if style == DesignStyle::Explicit {
        return Err(Error::Argument(
            "explicit designs carry their own times; use TimeDesign::explicit".into(),
        ));
    }
    if n_per_series < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 points per series, got {n_per_series}"
        )));
    }
    if num_series == 0 {
        return Err(Error::Argument("need at least one series".into()));
    }
    if lags.len() != num_series {
        return Err(Error::Argument(format!(
            "{} lag offsets for {} series",
            lags.len(),
            num_series
        )));
    }
    if lags.iter().any(|s| !s.is_finite()) {
        return Err(Error::Argument("lag offsets must be finite".into()));
    }
    if !range.0.is_finite() || !range.1.is_finite() || range.0 >= range.1 {
        return Err(Error::Argument(format!(
            "invalid time range ({}, {})",
            range.0, range.1
        )));
    }

    let n = n_per_series;
    let step = (range.1 - range.0) / (n - 1) as f64;
    let mut base: Vec<f64> = (0..n).map(|i| range.0 + step * i as f64).collect();
    if style == DesignStyle::JitteredGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut base {
            *t += rng.gen_range(-0.25..0.25);
        }
        // Sorting restores the invariant if the jitter ever crosses a grid
        // gap; each sorted point stays within ±¼ of its base point (order
        // statistics preserve a monotone envelope), so the jitter bound
        // survives the sort.
        base.sort_by(|p, q| p.partial_cmp(q).expect("jittered times are finite"));
    }

    let times = lags
        .iter()
        .map(|&s| base.iter().map(|&t| t + s).collect())
        .collect();
    Ok(TimeDesign {
        times,
        style,
        lags: lags.to_vec(),
    })
}

/// Draws one dataset from the lagged-kernel model on the given design:
/// `Y = L·z + τ·z′` with `L` the lower-triangular factor of the noise-free
/// covariance and `z, z′` iid standard normal (drawn in that order), so the
/// values are an exact mean-zero multivariate normal sample with covariance
/// `Σ + τ²I` up to the factorization jitter policy.
///
/// Deterministic per `seed`: a fixed seed reproduces the dataset bit for bit.
pub fn sample_gplag(
    family: KernelFamily,
    params: &Params,
    design: &TimeDesign,
    seed: u64,
) -> Result<TimeSeriesSet> {
    family.check()?;
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(Error::Validation(violations.join("; ")));
    }
    if design.num_series() != params.num_series() {
        return Err(Error::Argument(format!(
            "design has {} series but parameters cover {}",
            design.num_series(),
            params.num_series()
        )));
    }
    for (l, ts) in design.times.iter().enumerate() {
        if ts.len() < 2 {
            return Err(Error::Argument(format!(
                "series {} needs at least 2 time points, got {}",
                l + 1,
                ts.len()
            )));
        }
        if ts.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument(format!(
                "series {} contains a non-finite time",
                l + 1
            )));
        }
        if ts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Argument(format!(
                "series {} times are not sorted ascending",
                l + 1
            )));
        }
    }

    // A zero-valued set gives the canonical (series, time) observation order
    // the covariance assembly expects; per-series sorted times mean that
    // order is exactly design order, series-major.
    let columns: Vec<(Vec<f64>, Vec<f64>)> = design
        .times
        .iter()
        .map(|ts| (ts.clone(), vec![0.0; ts.len()]))
        .collect();
    let skeleton = TimeSeriesSet::from_series(&columns)?;
    let n = skeleton.len();

    let sigma = covariance_matrix_unchecked(family, params, &skeleton, false);
    let factor = cholesky_with_jitter(&sigma, n, params.sigma2())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z_noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let tau = params.tau2().sqrt();
    let mut values = factor.lower_times(&z);
    for (v, e) in values.iter_mut().zip(&z_noise) {
        *v += tau * e;
    }

    let mut columns = columns;
    let mut offset = 0;
    for (ts, vs) in &mut columns {
        vs.copy_from_slice(&values[offset..offset + ts.len()]);
        offset += ts.len();
    }
    TimeSeriesSet::from_series(&columns)
}

/// Evaluates the saturating ramp family `f(t) = arctan(k·(t + s)) / arctan(k)`
/// on a regular inclusive grid of `n` points over `range`, returning
/// `(times, values)`. Small `k` is close to the identity line on [−2, 2];
/// large `k` approaches a step. No noise is added.
pub fn gen_arctan(k: f64, s: f64, n: usize, range: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Argument(format!("steepness k must be positive, got {k}")));
    }
    if !s.is_finite() {
        return Err(Error::Argument(format!("shift s must be finite, got {s}")));
    }
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 points, got {n}")));
    }
    if !range.0.is_finite() || !range.1.is_finite() || range.0 >= range.1 {
        return Err(Error::Argument(format!(
            "invalid time range ({}, {})",
            range.0, range.1
        )));
    }
    let step = (range.1 - range.0) / (n - 1) as f64;
    let times: Vec<f64> = (0..n).map(|i| range.0 + step * i as f64).collect();
    let scale = k.atan();
    let values = times.iter().map(|&t| (k * (t + s)).atan() / scale).collect();
    Ok((times, values))
}

/// Generates the heavy-tailed linear pair on the integer grid `t = 0..n−1`:
/// series 1 is `slope·t + intercept + noise_scale·ε`, series 2 is the same
/// line with its mean delayed by `lag` (`slope·(t − lag) + intercept + …`),
/// both with iid Student-t(`df`) noise drawn series 1 first. The default
/// family in the prediction study is `(slope, intercept, noise_scale, lag,
/// df) = (2, 3, 5, 20, 5)`.
///
/// Student-t draws use the normal/chi-square composition
/// `z / sqrt(V/df)`, `V ~ Gamma(df/2, 2)`, which is exact for any `df > 2`
/// (the variance, `noise_scale²·df/(df−2)`, needs df > 2 to exist).
pub fn gen_linear_t_noise(
    n: usize,
    slope: f64,
    intercept: f64,
    noise_scale: f64,
    lag: f64,
    df: f64,
    seed: u64,
) -> Result<TimeSeriesSet> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 points, got {n}")));
    }
    if !(df > 2.0) || !df.is_finite() {
        return Err(Error::Argument(format!(
            "degrees of freedom must exceed 2 for a finite noise variance, got {df}"
        )));
    }
    for (name, v) in [
        ("slope", slope),
        ("intercept", intercept),
        ("noise_scale", noise_scale),
        ("lag", lag),
    ] {
        if !v.is_finite() {
            return Err(Error::Argument(format!("{name} must be finite, got {v}")));
        }
    }
    if noise_scale < 0.0 {
        return Err(Error::Argument(format!(
            "noise_scale must be nonnegative, got {noise_scale}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi2 = Gamma::new(df / 2.0, 2.0)
        .map_err(|e| Error::Argument(format!("invalid Student-t composition: {e}")))?;
    let mut student_t = || -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let v = chi2.sample(&mut rng);
        z / (v / df).sqrt()
    };

    let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let y1: Vec<f64> = times
        .iter()
        .map(|&t| slope * t + intercept + noise_scale * student_t())
        .collect();
    let y2: Vec<f64> = times
        .iter()
        .map(|&t| slope * (t - lag) + intercept + noise_scale * student_t())
        .collect();
    TimeSeriesSet::from_series(&[(times.clone(), y1), (times, y2)])
}

/// Derives a replicate-level seed from a base seed and an index with a
/// SplitMix64 finalizer, so parallel replicates get decorrelated, platform-
/// independent streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
