//! Posterior (BLUP) prediction at unobserved `(time, series)` points and MSE
//! scoring against held-out observations.
//!
//! The predictive law is the standard Gaussian conditional
//!
//! ```text
//! mean = K*ᵀ (Σ+τ²I)⁻¹ Y        var = K** + τ² − K*ᵀ (Σ+τ²I)⁻¹ K*
//! ```
//!
//! computed through one Cholesky factorization of the training covariance.
//! The variance includes τ²: predictions target the noisy observation, which
//! is what held-out MSE scores.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::path::Path;

use crate::data::TimeSeriesSet;
use crate::error::{Error, Result};
use crate::inference::FitResult;
use crate::kernels::{kernel_value, validate_params, KernelFamily};
use crate::linalg::cholesky_with_jitter;

/// Predictive means and marginal variances at the query points.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// The `(t*, series)` points predicted, in input order.
    pub query: Vec<(f64, usize)>,
    /// Predictive means, per-series centering offsets added back.
    pub mean: Vec<f64>,
    /// Marginal predictive variances (observation scale, τ² included).
    pub variance: Vec<f64>,
    /// How many round-off-negative variances were clamped to 0.
    pub negative_variance_clamps: usize,
}

/// BLUP prediction from a fitted model.
///
/// Uses one factorization of the training covariance for all query points
/// and adds back the per-series centering offsets recorded on the training
/// set, so predictions live on the original observation scale. Query series
/// ids must be covered by the fitted parameters; they need not appear in the
/// training set (that is exactly the cross-series prediction case). An empty
/// training set returns the prior (`mean = offset`, `var = σ² + τ²`).
pub fn blup_predict(
    fit: &FitResult,
    family: KernelFamily,
    train: &TimeSeriesSet,
    query: &[(f64, usize)],
) -> Result<PredictionResult> {
    family.check()?;
    if family != fit.family {
        return Err(Error::Argument(format!(
            "family {} does not match the fitted family {}",
            family.tag(),
            fit.family.tag()
        )));
    }
    let params = &fit.params;
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(Error::Validation(violations.join("; ")));
    }
    let num_series = params.num_series();
    if train.num_series() > num_series {
        return Err(Error::Argument(format!(
            "training set has {} series but parameters cover only {num_series}",
            train.num_series()
        )));
    }
    for &(t, l) in query {
        if l < 1 || l > num_series {
            return Err(Error::Argument(format!(
                "query series id {l} out of range 1..={num_series}"
            )));
        }
        if !t.is_finite() {
            return Err(Error::Argument(format!("query time {t} is not finite")));
        }
    }
    let offset = |l: usize| train.offsets().get(l - 1).copied().unwrap_or(0.0);
    let (sigma2, b, tau2) = (params.sigma2(), params.b(), params.tau2());
    let prior_var = kernel_value(family, sigma2, b, 0.0, 0.0) + tau2;

    if train.is_empty() {
        return Ok(PredictionResult {
            query: query.to_vec(),
            mean: query.iter().map(|&(_, l)| offset(l)).collect(),
            variance: vec![prior_var; query.len()],
            negative_variance_clamps: 0,
        });
    }

    let n = train.len();
    let cov = crate::kernels::covariance_matrix_unchecked(family, params, train, true);
    let factor = cholesky_with_jitter(&cov, n, sigma2)?;
    let y: Vec<f64> = train.observations().iter().map(|o| o.y).collect();
    let alpha = factor.solve(&y);

    // Pre-shift training times once; the lag argument is then a plain
    // difference of shifted times (matching the covariance assembly).
    let shifted: Vec<(f64, usize)> = train
        .observations()
        .iter()
        .map(|o| (o.t + params.shift(o.series), o.series))
        .collect();

    let mut mean = Vec::with_capacity(query.len());
    let mut variance = Vec::with_capacity(query.len());
    let mut clamps = 0;
    let mut cross = vec![0.0; n];
    for &(tq, lq) in query {
        let uq = tq + params.shift(lq);
        for (k, &(ui, li)) in shifted.iter().enumerate() {
            cross[k] = kernel_value(family, sigma2, b, params.dissimilarity(lq, li), uq - ui);
        }
        let m: f64 = cross.iter().zip(&alpha).map(|(c, a)| c * a).sum();
        let q = factor.solve_lower(&cross);
        let mut v = prior_var - q.iter().map(|x| x * x).sum::<f64>();
        if v < 0.0 {
            debug_assert!(
                v >= -1e-10 * prior_var.max(1.0),
                "predictive variance {v} more negative than round-off allows"
            );
            v = 0.0;
            clamps += 1;
        }
        mean.push(m + offset(lq));
        variance.push(v);
    }
    Ok(PredictionResult {
        query: query.to_vec(),
        mean,
        variance,
        negative_variance_clamps: clamps,
    })
}

/// Gaussian-conditional prediction for one series alone under `(σ², b, τ²)`
/// — the no-information-sharing counterpart of [`blup_predict`], typically
/// parameterized by [`crate::inference::fit_mle_single`].
///
/// Returned query points carry series id 1. No centering offsets are
/// involved; values are used as given.
pub fn single_series_predict(
    family: KernelFamily,
    sigma2: f64,
    b: f64,
    tau2: f64,
    train_times: &[f64],
    train_values: &[f64],
    query_times: &[f64],
) -> Result<PredictionResult> {
    family.check()?;
    if !(sigma2 > 0.0) || !(b > 0.0) || !(tau2 >= 0.0) {
        return Err(Error::Argument(format!(
            "need σ² > 0, b > 0, τ² ≥ 0; got ({sigma2}, {b}, {tau2})"
        )));
    }
    if train_times.len() != train_values.len() {
        return Err(Error::Argument(format!(
            "{} training times but {} values",
            train_times.len(),
            train_values.len()
        )));
    }
    if train_times.is_empty() {
        return Err(Error::Argument(
            "single-series prediction needs training observations".to_string(),
        ));
    }
    let n = train_times.len();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut value = kernel_value(family, sigma2, b, 0.0, train_times[i] - train_times[j]);
            if i == j {
                value += tau2;
            }
            cov[i * n + j] = value;
            cov[j * n + i] = value;
        }
    }
    let factor = cholesky_with_jitter(&cov, n, sigma2)?;
    let alpha = factor.solve(train_values);
    let prior_var = kernel_value(family, sigma2, b, 0.0, 0.0) + tau2;
    let mut mean = Vec::with_capacity(query_times.len());
    let mut variance = Vec::with_capacity(query_times.len());
    let mut clamps = 0;
    for &tq in query_times {
        let cross: Vec<f64> = train_times
            .iter()
            .map(|&ti| kernel_value(family, sigma2, b, 0.0, tq - ti))
            .collect();
        let m: f64 = cross.iter().zip(&alpha).map(|(c, a)| c * a).sum();
        let q = factor.solve_lower(&cross);
        let mut v = prior_var - q.iter().map(|x| x * x).sum::<f64>();
        if v < 0.0 {
            v = 0.0;
            clamps += 1;
        }
        mean.push(m);
        variance.push(v);
    }
    Ok(PredictionResult {
        query: query_times.iter().map(|&t| (t, 1)).collect(),
        mean,
        variance,
        negative_variance_clamps: clamps,
    })
}

/// Mean squared error of predictions against held-out observations.
///
/// Every query point must match exactly one truth observation on `(t,
/// series)` (bitwise time equality), and every truth observation must be
/// consumed; replicated points are matched in canonical order. Anything else
/// is a misalignment error.
pub fn mse(pred: &PredictionResult, truth: &TimeSeriesSet) -> Result<f64> {
    if pred.query.is_empty() {
        return Err(Error::Argument(
            "mse needs at least one predicted point".to_string(),
        ));
    }
    if pred.query.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} truth observations",
            pred.query.len(),
            truth.len()
        )));
    }
    let mut by_point: HashMap<(u64, usize), VecDeque<f64>> = HashMap::new();
    for obs in truth.observations() {
        by_point
            .entry((obs.t.to_bits(), obs.series))
            .or_default()
            .push_back(obs.y);
    }
    let mut total = 0.0;
    for (&(t, l), m) in pred.query.iter().zip(&pred.mean) {
        let value = by_point
            .get_mut(&(t.to_bits(), l))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "query point (t={t}, series {l}) has no matching truth observation"
                ))
            })?;
        let r = m - value;
        total += r * r;
    }
    Ok(total / pred.query.len() as f64)
}

/// Writes predictions as CSV `t,series,mean,variance`.
pub fn save_csv<P: AsRef<Path>>(pred: &PredictionResult, path: P) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))?;
    writer
        .write_record(["t", "series", "mean", "variance"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for ((&(t, l), m), v) in pred.query.iter().zip(&pred.mean).zip(&pred.variance) {
        writer
            .write_record([t.to_string(), l.to_string(), m.to_string(), v.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::center_series;
    use crate::kernels::{PairwiseParams, Params};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit_with(family: KernelFamily, params: PairwiseParams) -> FitResult {
        FitResult {
            family,
            params: Params::Pairwise(params),
            loglik: 0.0,
            iterations: 0,
            converged: true,
            constraint_report: Vec::new(),
            start_used: 0,
        }
    }

    fn smooth_pair(n: usize, seed: u64, noise: f64) -> TimeSeriesSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.9).collect();
        let mk = |phase: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
            t.iter()
                .map(|&ti| (0.7 * ti + phase).sin() + noise * rng.gen_range(-1.0..1.0))
                .collect()
        };
        let y1 = mk(0.0, &mut rng);
        let y2 = mk(0.4, &mut rng);
        TimeSeriesSet::from_series(&[(t.clone(), y1), (t, y2)]).unwrap()
    }

    #[test]
    fn test_blup_interpolates_noiseless_training_points() {
        let set = smooth_pair(10, 1, 0.0);
        let fit = fit_with(
            KernelFamily::LRbf,
            PairwiseParams {
                sigma2: 1.5,
                b: 0.8,
                a: 0.5,
                s: 0.3,
                tau2: 0.0,
            },
        );
        let query: Vec<(f64, usize)> = set
            .observations()
            .iter()
            .step_by(4)
            .map(|o| (o.t, o.series))
            .collect();
        let truth: Vec<f64> = set.observations().iter().step_by(4).map(|o| o.y).collect();
        let pred = blup_predict(&fit, KernelFamily::LRbf, &set, &query).unwrap();
        for ((m, v), y) in pred.mean.iter().zip(&pred.variance).zip(&truth) {
            assert_relative_eq!(*m, *y, epsilon = 1e-6);
            assert!(*v <= 1e-8 * 1.5, "variance {v}");
        }
    }

    #[test]
    fn test_blup_far_query_reverts_to_prior_with_offsets() {
        let raw = smooth_pair(12, 2, 0.05);
        let lifted = {
            let lift = |l: usize, d: f64| -> (Vec<f64>, Vec<f64>) {
                (
                    raw.series_times(l),
                    raw.series_values(l).iter().map(|y| y + d).collect(),
                )
            };
            TimeSeriesSet::from_series(&[lift(1, 5.0), lift(2, -3.0)]).unwrap()
        };
        let train = center_series(&lifted);
        let (sigma2, tau2) = (2.0, 0.4);
        let fit = fit_with(
            KernelFamily::LRbf,
            PairwiseParams {
                sigma2,
                b: 1.0,
                a: 0.7,
                s: 0.2,
                tau2,
            },
        );
        // Farthest training time is 9.9; 30 is ≥ 8 lengthscale-units past it
        // even after the series shift, so the kernel weight is ≈ e^{−400}.
        let query = vec![(30.0, 1), (30.0, 2)];
        let pred = blup_predict(&fit, KernelFamily::LRbf, &train, &query).unwrap();
        for (k, &(_, l)) in query.iter().enumerate() {
            assert_relative_eq!(pred.mean[k], train.offsets()[l - 1], max_relative = 1e-8);
            assert_relative_eq!(pred.variance[k], sigma2 + tau2, max_relative = 1e-8);
        }
    }

    #[test]
    fn test_blup_single_training_point_cross_series_hand_oracle() {
        let (sigma2, b, a, s, y0, t0) = (2.5, 0.7, 0.9, 1.3, 1.8, 4.0);
        let train = TimeSeriesSet::unchecked(
            vec![crate::data::Observation {
                t: t0,
                series: 1,
                y: y0,
            }],
            2,
        );
        let fit = fit_with(
            KernelFamily::LRbf,
            PairwiseParams {
                sigma2,
                b,
                a,
                s,
                tau2: 0.0,
            },
        );
        let pred = blup_predict(&fit, KernelFamily::LRbf, &train, &[(t0, 2)]).unwrap();
        let alpha = a * a + 1.0;
        let oracle = y0 / alpha.sqrt() * (-b * s * s / alpha).exp();
        assert_relative_eq!(pred.mean[0], oracle, max_relative = 1e-12);
        // Conditioning on one point leaves σ²(1 − ρ²) behind.
        let rho2 = (1.0 / alpha.sqrt() * (-b * s * s / alpha).exp()).powi(2);
        assert_relative_eq!(pred.variance[0], sigma2 * (1.0 - rho2), max_relative = 1e-10);
    }

    #[test]
    fn test_blup_variance_bounded_by_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let families = crate::kernels::psd_families();
        for trial in 0..40 {
            let family = families[trial % families.len()];
            let set = smooth_pair(9, trial as u64, 0.1);
            let params = PairwiseParams {
                sigma2: rng.gen_range(0.3..3.0),
                b: rng.gen_range(0.2..2.0),
                a: rng.gen_range(0.05..2.0),
                s: rng.gen_range(-1.5..1.5),
                tau2: rng.gen_range(0.0..0.5),
            };
            let fit = fit_with(family, params);
            let query: Vec<(f64, usize)> = (0..6)
                .map(|_| (rng.gen_range(-2.0..12.0), rng.gen_range(1..=2)))
                .collect();
            let pred = blup_predict(&fit, family, &set, &query).unwrap();
            let cap = params.sigma2 + params.tau2 + 1e-8;
            for (m, v) in pred.mean.iter().zip(&pred.variance) {
                assert!(m.is_finite());
                assert!(*v >= 0.0 && *v <= cap, "variance {v} vs cap {cap}");
            }
        }
    }

    /// Dense symmetric inverse by Gauss–Jordan with partial pivoting — an
    /// independent implementation for the leave-one-out oracle.
    fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut work: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| work[i][col].abs().partial_cmp(&work[j][col].abs()).unwrap())
                .unwrap();
            work.swap(col, pivot);
            let p = work[col][col];
            for v in work[col].iter_mut() {
                *v /= p;
            }
            let pivot_row = work[col].clone();
            for (row, r) in work.iter_mut().enumerate() {
                if row != col {
                    let f = r[col];
                    for (v, pv) in r.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        work.iter().map(|r| r[n..].to_vec()).collect()
    }

    #[test]
    fn test_blup_leave_one_out_matches_direct_conditional() {
        let set = smooth_pair(4, 5, 0.1); // 8 observations total
        let family = KernelFamily::LExp;
        let params = PairwiseParams {
            sigma2: 1.2,
            b: 0.6,
            a: 0.8,
            s: 0.5,
            tau2: 0.3,
        };
        let fit = fit_with(family, params);
        let full = crate::kernels::covariance_matrix(
            family,
            &Params::Pairwise(params),
            &set,
            true,
        )
        .unwrap();
        let n = set.len();
        let obs = set.observations().to_vec();
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let sub = TimeSeriesSet::new(
                keep.iter().map(|&j| obs[j]).collect(),
                vec!["1".to_string(), "2".to_string()],
            )
            .unwrap();
            let pred =
                blup_predict(&fit, family, &sub, &[(obs[i].t, obs[i].series)]).unwrap();

            // Direct conditional from the full covariance, independent solve.
            let block: Vec<Vec<f64>> = keep
                .iter()
                .map(|&r| keep.iter().map(|&c| full[r * n + c]).collect())
                .collect();
            let inv = invert(&block);
            let k: Vec<f64> = keep.iter().map(|&j| full[i * n + j]).collect();
            let y: Vec<f64> = keep.iter().map(|&j| obs[j].y).collect();
            let mut mean = 0.0;
            let mut reduction = 0.0;
            for r in 0..keep.len() {
                let w: f64 = (0..keep.len()).map(|c| inv[r][c] * k[c]).sum();
                mean += w * y[r];
                reduction += w * k[r];
            }
            let var = full[i * n + i] - reduction;
            assert_relative_eq!(pred.mean[0], mean, epsilon = 1e-8);
            assert_relative_eq!(pred.variance[0], var, epsilon = 1e-8);
        }
    }

    #[test]
    fn test_blup_rejects_mismatched_family_and_bad_query() {
        let set = smooth_pair(6, 3, 0.1);
        let fit = fit_with(
            KernelFamily::LExp,
            PairwiseParams {
                sigma2: 1.0,
                b: 1.0,
                a: 1.0,
                s: 0.0,
                tau2: 0.1,
            },
        );
        assert!(matches!(
            blup_predict(&fit, KernelFamily::LRbf, &set, &[(0.0, 1)]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            blup_predict(&fit, KernelFamily::LExp, &set, &[(0.0, 3)]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            blup_predict(&fit, KernelFamily::LExp, &set, &[(f64::NAN, 1)]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn test_blup_empty_train_returns_prior() {
        let train = TimeSeriesSet::unchecked(Vec::new(), 2);
        let fit = fit_with(
            KernelFamily::LMat { nu: 1.5 },
            PairwiseParams {
                sigma2: 2.0,
                b: 1.0,
                a: 0.5,
                s: 1.0,
                tau2: 0.25,
            },
        );
        let pred =
            blup_predict(&fit, KernelFamily::LMat { nu: 1.5 }, &train, &[(3.0, 1), (4.0, 2)])
                .unwrap();
        assert_eq!(pred.mean, vec![0.0, 0.0]);
        assert_eq!(pred.variance, vec![2.25, 2.25]);
    }

    #[test]
    fn test_single_series_predict_matches_blup_on_lone_series() {
        let family = KernelFamily::LMat { nu: 2.5 };
        let t: Vec<f64> = (0..9).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = t.iter().map(|&ti| (0.5 * ti).sin()).collect();
        let (sigma2, b, tau2) = (1.3, 0.9, 0.2);
        let single =
            single_series_predict(family, sigma2, b, tau2, &t, &y, &[0.3, 4.4, 9.9]).unwrap();
        let train = TimeSeriesSet::unchecked(
            t.iter()
                .zip(&y)
                .map(|(&t, &y)| crate::data::Observation { t, series: 1, y })
                .collect(),
            2,
        );
        let fit = fit_with(
            family,
            PairwiseParams {
                sigma2,
                b,
                a: 1.0,
                s: 0.0,
                tau2,
            },
        );
        let joint =
            blup_predict(&fit, family, &train, &[(0.3, 1), (4.4, 1), (9.9, 1)]).unwrap();
        for k in 0..3 {
            assert_relative_eq!(single.mean[k], joint.mean[k], epsilon = 1e-12);
            assert_relative_eq!(single.variance[k], joint.variance[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn test_mse_examples() {
        let truth = TimeSeriesSet::unchecked(
            [(0.0, 0.5), (1.0, -0.2), (2.0, 0.9)]
                .iter()
                .map(|&(t, y)| crate::data::Observation { t, series: 1, y })
                .collect(),
            1,
        );
        let exact = PredictionResult {
            query: vec![(0.0, 1), (1.0, 1), (2.0, 1)],
            mean: vec![0.5, -0.2, 0.9],
            variance: vec![0.0; 3],
            negative_variance_clamps: 0,
        };
        assert_eq!(mse(&exact, &truth).unwrap(), 0.0);

        let offset = PredictionResult {
            mean: exact.mean.iter().map(|m| m + 0.3).collect(),
            ..exact.clone()
        };
        assert_relative_eq!(mse(&offset, &truth).unwrap(), 0.09, max_relative = 1e-12);

        let residuals = PredictionResult {
            mean: vec![0.5 + 1.0, -0.2 - 1.0, 0.9 + 2.0],
            ..exact.clone()
        };
        assert_relative_eq!(mse(&residuals, &truth).unwrap(), 2.0, max_relative = 1e-12);

        let misaligned = PredictionResult {
            query: vec![(0.0, 1), (1.0, 1), (2.5, 1)],
            ..exact.clone()
        };
        assert!(matches!(mse(&misaligned, &truth), Err(Error::Argument(_))));

        let short = PredictionResult {
            query: vec![(0.0, 1)],
            mean: vec![0.5],
            variance: vec![0.0],
            negative_variance_clamps: 0,
        };
        assert!(matches!(mse(&short, &truth), Err(Error::Argument(_))));
    }

    #[test]
    fn test_save_csv_writes_predictions() {
        let pred = PredictionResult {
            query: vec![(0.5, 1), (1.5, 2)],
            mean: vec![0.25, -0.75],
            variance: vec![0.01, 0.02],
            negative_variance_clamps: 0,
        };
        let file = tempfile::NamedTempFile::new().unwrap();
        save_csv(&pred, file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,series,mean,variance");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.5,1,0.25,"));
    }
}
