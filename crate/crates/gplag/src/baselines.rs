//! Alignment and clustering baselines: time-lagged cross-correlation (TLCC),
//! dynamic time warping (DTW), soft-DTW and its divergence, a 1-D k-means,
//! and the ARI/NMI partition-agreement scores.
//!
//! TLCC doubles as the lag initializer for model fitting; the rest exist for
//! benchmark comparisons. All operations are pure and deterministic (k-means
//! takes an explicit seed).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TimeSeriesSet;
use crate::error::{Error, Result};

/// Result of a TLCC scan over a grid of candidate lags.
#[derive(Debug, Clone)]
pub struct LagScan {
    /// Candidate lags, in scan order.
    pub lags: Vec<f64>,
    /// Pearson correlation at each lag; −∞ where fewer than 3 points paired.
    pub correlations: Vec<f64>,
    /// Arg-max lag (smallest lag on ties).
    pub best_lag: f64,
    /// Maximum correlation.
    pub best_corr: f64,
}

/// Optimal DTW alignment between two sequences.
#[derive(Debug, Clone)]
pub struct WarpResult {
    /// Accumulated squared-difference cost along the optimal path.
    pub distance: f64,
    /// Monotone index pairs from `(0, 0)` to `(n-1, m-1)` (0-based).
    pub path: Vec<(usize, usize)>,
}

/// Median of a slice (mean of the central pair for even lengths).
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Index of the element of `sorted` closest to `target`.
fn nearest_index(sorted: &[f64], target: f64) -> usize {
    match sorted.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
        Ok(i) => i,
        Err(i) => {
            if i == 0 {
                0
            } else if i == sorted.len() {
                sorted.len() - 1
            } else if (sorted[i] - target).abs() < (target - sorted[i - 1]).abs() {
                i
            } else {
                i - 1
            }
        }
    }
}

/// Scans candidate lags for the shift of series 2 behind series 1 that
/// maximizes Pearson correlation.
///
/// For each candidate lag δ, series-2 times are shifted by −δ and each
/// series-1 point is paired with the nearest shifted series-2 point within
/// half the median series-1 time spacing (irregular grids have no shared
/// time axis, so nearest-time pairing stands in for exact alignment). Lags
/// pairing fewer than 3 points — or yielding a degenerate correlation —
/// score −∞. Ties go to the smallest lag.
pub fn tlcc(set: &TimeSeriesSet, lag_grid: &[f64]) -> Result<LagScan> {
    if set.num_series() != 2 {
        return Err(Error::Argument(format!(
            "tlcc needs exactly 2 series, got {}",
            set.num_series()
        )));
    }
    if lag_grid.is_empty() {
        return Err(Error::Argument("empty lag grid".to_string()));
    }
    let t1 = set.series_times(1);
    let y1 = set.series_values(1);
    let t2 = set.series_times(2);
    let y2 = set.series_values(2);
    let gaps: Vec<f64> = t1.windows(2).map(|w| w[1] - w[0]).collect();
    let tolerance = 0.5 * if gaps.is_empty() { 0.0 } else { median(&gaps) };

    let mut correlations = Vec::with_capacity(lag_grid.len());
    let mut best_lag = f64::NAN;
    let mut best_corr = f64::NEG_INFINITY;
    for &lag in lag_grid {
        let mut paired1 = Vec::new();
        let mut paired2 = Vec::new();
        for (ti, yi) in t1.iter().zip(&y1) {
            let shifted_target = ti + lag; // series-2 time whose shift lands on ti
            let j = nearest_index(&t2, shifted_target);
            if (t2[j] - shifted_target).abs() <= tolerance {
                paired1.push(*yi);
                paired2.push(y2[j]);
            }
        }
        let corr = if paired1.len() < 3 {
            f64::NEG_INFINITY
        } else {
            let r = pearson(&paired1, &paired2);
            if r.is_finite() {
                r
            } else {
                f64::NEG_INFINITY
            }
        };
        correlations.push(corr);
        let better = corr > best_corr || (corr == best_corr && lag < best_lag);
        if better || best_lag.is_nan() {
            best_corr = corr;
            best_lag = lag;
        }
    }
    Ok(LagScan {
        lags: lag_grid.to_vec(),
        correlations,
        best_lag,
        best_corr,
    })
}

/// Classic DTW with squared-difference local cost and steps
/// {(1,0),(0,1),(1,1)}; returns the optimal cost and one optimal path
/// (backtracking prefers diagonal, then (1,0), then (0,1) on ties).
pub fn dtw(y1: &[f64], y2: &[f64]) -> Result<WarpResult> {
    if y1.is_empty() || y2.is_empty() {
        return Err(Error::Argument("dtw requires nonempty sequences".to_string()));
    }
    let (n, m) = (y1.len(), y2.len());
    let cost = |i: usize, j: usize| (y1[i] - y2[j]) * (y1[i] - y2[j]);
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i][j] = cost(i, j) + best_prev;
        }
    }
    // Backtrack; tie order: diagonal, then (1,0), then (0,1).
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
        let best = diag.min(up).min(left);
        if diag == best {
            i -= 1;
            j -= 1;
        } else if up == best {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(WarpResult {
        distance: acc[n - 1][m - 1],
        path,
    })
}

/// Numerically stable softmin: `−γ·log Σ e^{−v/γ}` computed around the
/// minimum so large costs cannot underflow to spurious ties.
fn softmin(values: [f64; 3], gamma: f64) -> f64 {
    let m = values[0].min(values[1]).min(values[2]);
    if m.is_infinite() {
        return m;
    }
    let sum: f64 = values.iter().map(|v| (-(v - m) / gamma).exp()).sum();
    m - gamma * sum.ln()
}

/// Soft-DTW: the DTW recursion with min replaced by a softmin at temperature
/// `gamma`; recovers [`dtw`] as `gamma → 0⁺` and is a lower bound on it.
pub fn soft_dtw(y1: &[f64], y2: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Argument(format!("gamma must be positive, got {gamma}")));
    }
    if y1.is_empty() || y2.is_empty() {
        return Err(Error::Argument("soft_dtw requires nonempty sequences".to_string()));
    }
    let (n, m) = (y1.len(), y2.len());
    let mut acc = vec![vec![f64::INFINITY; m + 1]; n + 1];
    acc[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = (y1[i - 1] - y2[j - 1]) * (y1[i - 1] - y2[j - 1]);
            acc[i][j] = cost + softmin([acc[i - 1][j - 1], acc[i - 1][j], acc[i][j - 1]], gamma);
        }
    }
    Ok(acc[n][m])
}

/// Soft-DTW divergence: `SDTW(x,y) − ½SDTW(x,x) − ½SDTW(y,y)`. Unlike raw
/// soft-DTW it vanishes at `x = y`.
pub fn soft_dtw_divergence(y1: &[f64], y2: &[f64], gamma: f64) -> Result<f64> {
    Ok(soft_dtw(y1, y2, gamma)?
        - 0.5 * soft_dtw(y1, y1, gamma)?
        - 0.5 * soft_dtw(y2, y2, gamma)?)
}

/// 1-D k-means (Lloyd's algorithm), best of `restarts` seeded initializations
/// by within-cluster sum of squares. Returns 0-based cluster labels.
///
/// Initial centers are `k` distinct values sampled uniformly without
/// replacement, so `k` must not exceed the number of distinct values.
pub fn kmeans(values: &[f64], k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    let mut distinct = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::Argument(format!(
            "k = {k} but data has {} distinct value(s)",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let picks = rand::seq::index::sample(&mut rng, distinct.len(), k);
        let mut centers: Vec<f64> = picks.iter().map(|i| distinct[i]).collect();
        let mut labels = vec![0usize; values.len()];
        for _ in 0..100 {
            let mut changed = false;
            for (idx, &v) in values.iter().enumerate() {
                let nearest = centers
                    .iter()
                    .enumerate()
                    .min_by(|(_, c1), (_, c2)| {
                        (v - *c1).abs().partial_cmp(&(v - *c2).abs()).unwrap()
                    })
                    .map(|(c, _)| c)
                    .unwrap();
                if labels[idx] != nearest {
                    labels[idx] = nearest;
                    changed = true;
                }
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<f64> = values
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(&v, _)| v)
                    .collect();
                if !members.is_empty() {
                    *center = members.iter().sum::<f64>() / members.len() as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let sse: f64 = values
            .iter()
            .zip(&labels)
            .map(|(&v, &l)| (v - centers[l]) * (v - centers[l]))
            .sum();
        if best.as_ref().map_or(true, |(best_sse, _)| sse < *best_sse) {
            best = Some((sse, labels));
        }
    }
    Ok(best.unwrap().1)
}

/// Contingency counts between two labelings.
fn contingency(labels: &[usize], truth: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let ku = labels.iter().max().map_or(0, |m| m + 1);
    let kv = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0.0; kv]; ku];
    for (&u, &v) in labels.iter().zip(truth) {
        table[u][v] += 1.0;
    }
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..kv).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, row, col)
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand Index between two labelings of the same points; 1 iff the
/// partitions are identical up to relabeling. When the expected-index
/// adjustment is degenerate (both partitions trivial — all points together
/// or all apart), the pair counts agree exactly and 1.0 is returned.
pub fn ari(labels: &[usize], truth: &[usize]) -> Result<f64> {
    if labels.len() != truth.len() {
        return Err(Error::Argument(format!(
            "label lengths differ: {} vs {}",
            labels.len(),
            truth.len()
        )));
    }
    let n = labels.len() as f64;
    let (table, row, col) = contingency(labels, truth);
    let index: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let sum_row: f64 = row.iter().map(|&x| choose2(x)).sum();
    let sum_col: f64 = col.iter().map(|&x| choose2(x)).sum();
    let expected = sum_row * sum_col / choose2(n);
    let max_index = 0.5 * (sum_row + sum_col);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Normalized mutual information with arithmetic-mean normalization
/// `I(U,V) / ((H(U)+H(V))/2)`; 1 iff the partitions are identical up to
/// relabeling. Two trivial single-cluster partitions (zero total entropy)
/// score 1.0 by convention.
pub fn nmi(labels: &[usize], truth: &[usize]) -> Result<f64> {
    if labels.len() != truth.len() {
        return Err(Error::Argument(format!(
            "label lengths differ: {} vs {}",
            labels.len(),
            truth.len()
        )));
    }
    let n = labels.len() as f64;
    let (table, row, col) = contingency(labels, truth);
    let entropy = |margin: &[f64]| -> f64 {
        margin
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -(x / n) * (x / n).ln())
            .sum()
    };
    let hu = entropy(&row);
    let hv = entropy(&col);
    if hu + hv == 0.0 {
        return Ok(1.0);
    }
    let mut mutual = 0.0;
    for (i, table_row) in table.iter().enumerate() {
        for (j, &nij) in table_row.iter().enumerate() {
            if nij > 0.0 {
                mutual += (nij / n) * ((nij * n) / (row[i] * col[j])).ln();
            }
        }
    }
    Ok(mutual / (0.5 * (hu + hv)))
}
