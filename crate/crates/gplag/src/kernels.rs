//! Cross-series covariance kernels with lag and dissimilarity structure.
//!
//! All kernels live on the index set `ℝ × {1..L}` and are *semi-stationary*:
//! the value depends on time only through the lag argument
//!
//! ```text
//! d = t − t′ + s_l − s_{l′}
//! ```
//!
//! where `s_l` is the time shift of series `l` (series 1 is the baseline,
//! `s₁ = 0`). Cross-series covariance is damped by a dissimilarity `a_{ll′} ≥
//! 0` through `α = a_{ll′}² + 1`; `a = 0` makes two series identical up to the
//! lag, `a → ∞` makes them independent. With `L = 2` the matrix/vector
//! parameters reduce to a single `(a, s)` pair.
//!
//! The three primary families:
//!
//! * `LRbf`:  `σ² α^{-1/2} exp(−b d²/α)`
//! * `LExp`:  `σ² α^{-1} exp(−b|d|)`
//! * `LMat(ν)`: `σ² α^{-(ν+1/2)} M_ν(b|d|)` with the closed-form Matérn
//!   `M_ν` for ν ∈ {1/2, 3/2, 5/2} (`M_ν(0) = 1`; ν = 1/2 recovers `LExp`)
//!
//! plus five additional constructions (Gneiting-type Matérn and separable
//! exponential, a rescaled Laplace, a rational-quadratic, and a complex
//! exponential) retained for completeness but excluded from the CLI defaults.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesSet;
use crate::error::{Error, Result};

/// Kernel family tag. `nu` is the Matérn smoothness (½, 3⁄2, or 5⁄2); `c > 0`
/// is the Gneiting separability constant (`c = 1` recovers `LMat`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// Lagged squared-exponential: `σ² α^{-1/2} exp(−b d²/α)`.
    LRbf,
    /// Lagged exponential: `σ² α^{-1} exp(−b|d|)`.
    LExp,
    /// Lagged Matérn with half-integer smoothness `nu`.
    LMat {
        /// Smoothness; one of 0.5, 1.5, 2.5.
        nu: f64,
    },
    /// Gneiting-type Matérn: `σ² √c α^{-ν} (a²+c)^{-1/2} M_ν(b′|d|)` with
    /// `b′ = b √(α/(a²+c))`.
    GneitingMatern {
        /// Smoothness; one of 0.5, 1.5, 2.5.
        nu: f64,
        /// Separability constant, > 0.
        c: f64,
    },
    /// Gneiting-type separable exponential; equals `GneitingMatern` at ν = ½.
    GneitingExpSep {
        /// Separability constant, > 0.
        c: f64,
    },
    /// Laplace with α-rescaled decay: `σ² α^{-1/2} exp(−b|d|/√α)`.
    LaplaceScaled,
    /// Rational quadratic: `σ² √α / (α + b d²)`.
    RationalQuadratic,
    /// Complex exponential: `σ² exp(−a² − b d² − a² d²)`.
    ///
    /// **Known defect**: as defined, this is *not* a valid covariance for
    /// `a > 0`. The cross term decays in `d` at rate `b + a²`, faster than
    /// the same-series rate `b`, so the cross-spectral density has a fatter
    /// Gaussian tail than the same-series spectral density — violating
    /// `|F₁₂(ω)|² ≤ F₁₁(ω)F₂₂(ω)` at high frequency. Covariance matrices on
    /// designs dense enough to resolve those frequencies are indefinite (see
    /// the counterexample test). Retained for completeness; excluded from
    /// [`psd_families`], the CLI, and every fitting path.
    ComplexExponential,
}

impl KernelFamily {
    /// Wire/CLI tag of the family.
    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::LRbf => "lrbf",
            KernelFamily::LExp => "lexp",
            KernelFamily::LMat { .. } => "lmat",
            KernelFamily::GneitingMatern { .. } => "gneiting_matern",
            KernelFamily::GneitingExpSep { .. } => "gneiting_exp_sep",
            KernelFamily::LaplaceScaled => "laplace_scaled",
            KernelFamily::RationalQuadratic => "rational_quadratic",
            KernelFamily::ComplexExponential => "complex_exponential",
        }
    }

    /// Builds a family from its tag plus optional `nu`/`c` attributes.
    pub fn from_tag(tag: &str, nu: Option<f64>, c: Option<f64>) -> Result<Self> {
        let need_nu = || {
            nu.ok_or_else(|| Error::Argument(format!("family `{tag}` requires a `nu` value")))
        };
        let need_c = || {
            c.ok_or_else(|| Error::Argument(format!("family `{tag}` requires a `c` value")))
        };
        let family = match tag {
            "lrbf" => KernelFamily::LRbf,
            "lexp" => KernelFamily::LExp,
            "lmat" => KernelFamily::LMat { nu: need_nu()? },
            "gneiting_matern" => KernelFamily::GneitingMatern {
                nu: need_nu()?,
                c: need_c()?,
            },
            "gneiting_exp_sep" => KernelFamily::GneitingExpSep { c: need_c()? },
            "laplace_scaled" => KernelFamily::LaplaceScaled,
            "rational_quadratic" => KernelFamily::RationalQuadratic,
            "complex_exponential" => KernelFamily::ComplexExponential,
            other => return Err(Error::Argument(format!("unknown kernel family `{other}`"))),
        };
        family.check()?;
        Ok(family)
    }

    /// Validates `nu`/`c` attributes.
    pub fn check(&self) -> Result<()> {
        let check_nu = |nu: f64| {
            if nu == 0.5 || nu == 1.5 || nu == 2.5 {
                Ok(())
            } else {
                Err(Error::Argument(format!(
                    "unsupported Matérn smoothness nu = {nu}; supported: 0.5, 1.5, 2.5"
                )))
            }
        };
        match *self {
            KernelFamily::LMat { nu } => check_nu(nu),
            KernelFamily::GneitingMatern { nu, c } => {
                check_nu(nu)?;
                if c > 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Argument(format!("c must be positive, got {c}")))
                }
            }
            KernelFamily::GneitingExpSep { c } => {
                if c > 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Argument(format!("c must be positive, got {c}")))
                }
            }
            _ => Ok(()),
        }
    }
}

/// Parameters for a two-series model: series 2 is shifted by `s` against
/// series 1, with dissimilarity `a` between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseParams {
    /// Marginal (spatial) variance σ² > 0.
    pub sigma2: f64,
    /// Decay/lengthscale parameter b > 0.
    pub b: f64,
    /// Dissimilarity a ≥ 0.
    pub a: f64,
    /// Time shift of series 2; it enters the lag argument as `+s` on the
    /// series-2 time, so the cross-covariance between series 1 at `t` and
    /// series 2 at `t′` peaks at `t − t′ = s`: positive `s` means series 2
    /// runs ahead of series 1.
    pub s: f64,
    /// Observation-noise variance τ² ≥ 0.
    pub tau2: f64,
}

/// Parameters for `L ≥ 2` series: a symmetric dissimilarity matrix `A` with
/// zero diagonal satisfying the triangle inequality, and per-series shifts
/// `S` with `S[0] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiParams {
    /// Marginal (spatial) variance σ² > 0.
    pub sigma2: f64,
    /// Decay/lengthscale parameter b > 0.
    pub b: f64,
    /// Dissimilarity matrix; `a[l][k]` couples series `l+1` and `k+1`.
    pub a: Vec<Vec<f64>>,
    /// Per-series time shifts entering the lag argument as `+s[l]` on each
    /// series-`l+1` time (positive shift = runs ahead); `s[0]` must be 0.
    pub s: Vec<f64>,
    /// Observation-noise variance τ² ≥ 0.
    pub tau2: f64,
}

/// Either parameterization; most operations accept both.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    /// Two series, scalar `(a, s)`.
    Pairwise(PairwiseParams),
    /// `L ≥ 2` series, matrix/vector `(A, S)`.
    Multi(MultiParams),
}

impl From<PairwiseParams> for Params {
    fn from(p: PairwiseParams) -> Self {
        Params::Pairwise(p)
    }
}

impl From<MultiParams> for Params {
    fn from(p: MultiParams) -> Self {
        Params::Multi(p)
    }
}

impl Params {
    /// Marginal variance σ².
    pub fn sigma2(&self) -> f64 {
        match self {
            Params::Pairwise(p) => p.sigma2,
            Params::Multi(p) => p.sigma2,
        }
    }

    /// Decay parameter b.
    pub fn b(&self) -> f64 {
        match self {
            Params::Pairwise(p) => p.b,
            Params::Multi(p) => p.b,
        }
    }

    /// Noise variance τ².
    pub fn tau2(&self) -> f64 {
        match self {
            Params::Pairwise(p) => p.tau2,
            Params::Multi(p) => p.tau2,
        }
    }

    /// Number of series the parameterization covers.
    pub fn num_series(&self) -> usize {
        match self {
            Params::Pairwise(_) => 2,
            Params::Multi(p) => p.s.len(),
        }
    }

    /// Dissimilarity between series `l` and `l′` (1-based).
    pub fn dissimilarity(&self, l: usize, lp: usize) -> f64 {
        match self {
            Params::Pairwise(p) => {
                if l == lp {
                    0.0
                } else {
                    p.a
                }
            }
            Params::Multi(p) => p.a[l - 1][lp - 1],
        }
    }

    /// Time shift of series `l` (1-based); series 1 is the baseline.
    pub fn shift(&self, l: usize) -> f64 {
        match self {
            Params::Pairwise(p) => {
                if l == 1 {
                    0.0
                } else {
                    p.s
                }
            }
            Params::Multi(p) => p.s[l - 1],
        }
    }
}

/// Unit Matérn correlation `M_ν(x)` for x ≥ 0, normalized so `M_ν(0) = 1`,
/// in closed form for half-integer smoothness.
fn matern_unit(nu: f64, x: f64) -> f64 {
    if nu == 0.5 {
        (-x).exp()
    } else if nu == 1.5 {
        (1.0 + x) * (-x).exp()
    } else {
        // nu == 2.5, enforced by KernelFamily::check
        (1.0 + x + x * x / 3.0) * (-x).exp()
    }
}

/// Scalar kernel value as a function of the pair dissimilarity `a` and the
/// lag argument `d` (already including the series shifts).
pub(crate) fn kernel_value(family: KernelFamily, sigma2: f64, b: f64, a: f64, d: f64) -> f64 {
    let alpha = a * a + 1.0;
    match family {
        KernelFamily::LRbf => sigma2 / alpha.sqrt() * (-b * d * d / alpha).exp(),
        KernelFamily::LExp => sigma2 / alpha * (-b * d.abs()).exp(),
        KernelFamily::LMat { nu } => sigma2 / alpha.powf(nu + 0.5) * matern_unit(nu, b * d.abs()),
        KernelFamily::GneitingMatern { nu, c } => {
            let ac = a * a + c;
            let b_eff = b * (alpha / ac).sqrt();
            sigma2 * c.sqrt() / (alpha.powf(nu) * ac.sqrt()) * matern_unit(nu, b_eff * d.abs())
        }
        KernelFamily::GneitingExpSep { c } => {
            kernel_value(KernelFamily::GneitingMatern { nu: 0.5, c }, sigma2, b, a, d)
        }
        KernelFamily::LaplaceScaled => {
            sigma2 / alpha.sqrt() * (-b * d.abs() / alpha.sqrt()).exp()
        }
        KernelFamily::RationalQuadratic => sigma2 * alpha.sqrt() / (alpha + b * d * d),
        KernelFamily::ComplexExponential => {
            sigma2 * (-a * a - b * d * d - a * a * d * d).exp()
        }
    }
}

/// Evaluates the covariance between points `x = (t, l)` and `x′ = (t′, l′)`.
///
/// Validates the parameters on every call; [`covariance_matrix`] validates
/// once and uses an internal fast path.
pub fn kernel_eval(
    family: KernelFamily,
    params: &Params,
    x: (f64, usize),
    xp: (f64, usize),
) -> Result<f64> {
    family.check()?;
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(Error::Validation(violations.join("; ")));
    }
    let (t, l) = x;
    let (tp, lp) = xp;
    let num_series = params.num_series();
    for id in [l, lp] {
        if id < 1 || id > num_series {
            return Err(Error::Argument(format!(
                "series id {id} out of range 1..={num_series}"
            )));
        }
    }
    // Shift each time by its own series lag before differencing; this keeps
    // the lag argument exactly antisymmetric under argument swap, making the
    // kernel bit-exactly symmetric.
    let d = (t + params.shift(l)) - (tp + params.shift(lp));
    Ok(kernel_value(
        family,
        params.sigma2(),
        params.b(),
        params.dissimilarity(l, lp),
        d,
    ))
}

/// Checks every parameter constraint and returns a human-readable report of
/// the violations (empty means the parameters are valid).
///
/// Pairwise: σ² > 0, b > 0, a ≥ 0, τ² ≥ 0, all finite. Multi additionally:
/// `A` square and symmetric with zero diagonal and strictly positive
/// off-diagonal entries, triangle inequality `a_{lk} ≤ a_{ll′} + a_{l′k}`
/// within 1e-8, and `S[0] = 0` with finite shifts.
pub fn validate_params(params: &Params) -> Vec<String> {
    let mut violations = Vec::new();
    let mut check_positive = |name: &str, value: f64| {
        if !(value > 0.0) || !value.is_finite() {
            violations.push(format!("{name} must be positive and finite, got {value}"));
        }
    };
    check_positive("sigma2", params.sigma2());
    check_positive("b", params.b());
    let tau2 = params.tau2();
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        violations.push(format!("tau2 must be nonnegative and finite, got {tau2}"));
    }
    match params {
        Params::Pairwise(p) => {
            if !(p.a >= 0.0) || !p.a.is_finite() {
                violations.push(format!("a must be nonnegative and finite, got {}", p.a));
            }
            if !p.s.is_finite() {
                violations.push(format!("s must be finite, got {}", p.s));
            }
        }
        Params::Multi(p) => {
            let dim = p.s.len();
            if dim < 2 {
                violations.push(format!("S must cover at least 2 series, got {dim}"));
            }
            if p.a.len() != dim || p.a.iter().any(|row| row.len() != dim) {
                violations.push(format!(
                    "A must be a {dim}×{dim} matrix matching the length of S"
                ));
                return violations; // index checks below assume the shape
            }
            for (l, row) in p.a.iter().enumerate() {
                if row[l] != 0.0 {
                    violations.push(format!("A[{l}][{l}] = {} must be 0 on the diagonal", row[l]));
                }
                for (k, &value) in row.iter().enumerate().skip(l + 1) {
                    if (value - p.a[k][l]).abs() > 0.0 {
                        violations.push(format!(
                            "A[{l}][{k}] = {value} differs from A[{k}][{l}] = {}",
                            p.a[k][l]
                        ));
                    }
                    if !(value > 0.0) || !value.is_finite() {
                        violations.push(format!(
                            "A[{l}][{k}] = {value} must be strictly positive off the diagonal"
                        ));
                    }
                }
            }
            for l in 0..dim {
                for lp in 0..dim {
                    for k in 0..dim {
                        if l == lp || lp == k || l == k {
                            continue;
                        }
                        let excess = p.a[l][k] - p.a[l][lp] - p.a[lp][k];
                        if excess > 1e-8 {
                            violations.push(format!(
                                "triangle inequality violated: A[{l}][{k}] exceeds A[{l}][{lp}] + A[{lp}][{k}] by {excess:.3e}"
                            ));
                        }
                    }
                }
            }
            if dim >= 1 && p.s[0] != 0.0 {
                violations.push(format!("S[0] = {} must be 0 (series 1 is the lag baseline)", p.s[0]));
            }
            if let Some(bad) = p.s.iter().find(|v| !v.is_finite()) {
                violations.push(format!("S contains a non-finite shift {bad}"));
            }
        }
    }
    violations
}

/// Assembles the `n×n` covariance matrix of a set under the given kernel,
/// returned row-major. With `include_noise`, τ² is added to the diagonal.
pub fn covariance_matrix(
    family: KernelFamily,
    params: &Params,
    set: &TimeSeriesSet,
    include_noise: bool,
) -> Result<Vec<f64>> {
    family.check()?;
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(Error::Validation(violations.join("; ")));
    }
    if set.num_series() > params.num_series() {
        return Err(Error::Argument(format!(
            "set has {} series but parameters cover only {}",
            set.num_series(),
            params.num_series()
        )));
    }
    Ok(covariance_matrix_unchecked(family, params, set, include_noise))
}

/// Covariance assembly without re-validating; the optimizer and sampler call
/// this once per likelihood evaluation.
pub(crate) fn covariance_matrix_unchecked(
    family: KernelFamily,
    params: &Params,
    set: &TimeSeriesSet,
    include_noise: bool,
) -> Vec<f64> {
    let n = set.len();
    // Shift every observation by its series lag once; the lag argument then
    // becomes a plain difference of shifted times.
    let shifted: Vec<(f64, usize)> = set
        .observations()
        .iter()
        .map(|o| (o.t + params.shift(o.series), o.series))
        .collect();
    let sigma2 = params.sigma2();
    let b = params.b();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        let (ui, li) = shifted[i];
        for j in 0..=i {
            let (uj, lj) = shifted[j];
            let value = kernel_value(family, sigma2, b, params.dissimilarity(li, lj), ui - uj);
            cov[i * n + j] = value;
            cov[j * n + i] = value;
        }
        if include_noise {
            cov[i * n + i] += params.tau2();
        }
    }
    cov
}

/// Closed-form spectral density of the LRBF/LExp/LMat cross-covariances,
/// including the phase factor `e^{iω(s_l − s_{l′})}`.
///
/// Normalized so that the inverse relation is `K(d) = (c_f/2π) ∫ ρ(ω)
/// e^{iωd} dω` with a per-family constant; concretely the same-series LExp
/// value at ω = 0 is `σ²/b`, and the LMat density is `σ² b^{2ν} / (α^{ν+1/2}
/// (b²+ω²)^{ν+1/2})`. The LRBF density is `(σ²/√b) exp(−α ω²/(4b))` — the
/// `4b` denominator is forced by the Fourier transform of `exp(−b d²/α)`.
pub fn spectral_density(
    family: KernelFamily,
    params: &Params,
    omega: f64,
    l: usize,
    lp: usize,
) -> Result<Complex64> {
    family.check()?;
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(Error::Validation(violations.join("; ")));
    }
    let num_series = params.num_series();
    for id in [l, lp] {
        if id < 1 || id > num_series {
            return Err(Error::Argument(format!(
                "series id {id} out of range 1..={num_series}"
            )));
        }
    }
    let sigma2 = params.sigma2();
    let b = params.b();
    let a = params.dissimilarity(l, lp);
    let alpha = a * a + 1.0;
    let magnitude = match family {
        KernelFamily::LRbf => sigma2 / b.sqrt() * (-alpha * omega * omega / (4.0 * b)).exp(),
        KernelFamily::LExp => sigma2 * b / (alpha * (b * b + omega * omega)),
        KernelFamily::LMat { nu } => {
            sigma2 * b.powf(2.0 * nu)
                / (alpha.powf(nu + 0.5) * (b * b + omega * omega).powf(nu + 0.5))
        }
        other => {
            return Err(Error::Argument(format!(
                "no closed-form spectral density for family `{}`",
                other.tag()
            )))
        }
    };
    let phase = Complex64::from_polar(1.0, omega * (params.shift(l) - params.shift(lp)));
    Ok(magnitude * phase)
}

/// A kernel family bundled with parameters — the JSON wire format used by
/// the CLI for both inputs and fitted estimates.
///
/// Pairwise example:
/// `{"family":"lexp","sigma2":4.0,"b":0.3,"a":1.0,"s":2.0,"tau2":0.1}`;
/// multi-series models use `"A"` (matrix) and `"S"` (vector) instead of
/// `"a"`/`"s"`, and `lmat`/Gneiting families add `"nu"`/`"c"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecWire", into = "KernelSpecWire")]
pub struct KernelSpec {
    /// Kernel family.
    pub family: KernelFamily,
    /// Pairwise or multi-series parameters.
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct KernelSpecWire {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    sigma2: f64,
    b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "A")]
    a_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "S")]
    s_vector: Option<Vec<f64>>,
    tau2: f64,
}

impl TryFrom<KernelSpecWire> for KernelSpec {
    type Error = Error;

    fn try_from(wire: KernelSpecWire) -> Result<Self> {
        let family = KernelFamily::from_tag(&wire.family, wire.nu, wire.c)?;
        let params = match (wire.a, wire.a_matrix, wire.s, wire.s_vector) {
            (Some(a), None, Some(s), None) => Params::Pairwise(PairwiseParams {
                sigma2: wire.sigma2,
                b: wire.b,
                a,
                s,
                tau2: wire.tau2,
            }),
            (None, Some(a), None, Some(s)) => Params::Multi(MultiParams {
                sigma2: wire.sigma2,
                b: wire.b,
                a,
                s,
                tau2: wire.tau2,
            }),
            _ => {
                return Err(Error::Format(
                    "kernel spec needs either scalar `a` and `s` or matrix `A` and vector `S`"
                        .to_string(),
                ))
            }
        };
        Ok(KernelSpec { family, params })
    }
}

impl From<KernelSpec> for KernelSpecWire {
    fn from(spec: KernelSpec) -> Self {
        let (nu, c) = match spec.family {
            KernelFamily::LMat { nu } => (Some(nu), None),
            KernelFamily::GneitingMatern { nu, c } => (Some(nu), Some(c)),
            KernelFamily::GneitingExpSep { c } => (None, Some(c)),
            _ => (None, None),
        };
        let family = spec.family.tag().to_string();
        match spec.params {
            Params::Pairwise(p) => KernelSpecWire {
                family,
                nu,
                c,
                sigma2: p.sigma2,
                b: p.b,
                a: Some(p.a),
                a_matrix: None,
                s: Some(p.s),
                s_vector: None,
                tau2: p.tau2,
            },
            Params::Multi(p) => KernelSpecWire {
                family,
                nu,
                c,
                sigma2: p.sigma2,
                b: p.b,
                a: None,
                a_matrix: Some(p.a),
                s: None,
                s_vector: Some(p.s),
                tau2: p.tau2,
            },
        }
    }
}

/// All eight family tags at representative attribute values.
pub fn all_families() -> Vec<KernelFamily> {
    let mut families = psd_families();
    families.push(KernelFamily::ComplexExponential);
    families
}

/// The families with positive-semidefinite covariance structure (all except
/// [`KernelFamily::ComplexExponential`], which is indefinite as defined) —
/// the population for validity sweeps.
pub fn psd_families() -> Vec<KernelFamily> {
    vec![
        KernelFamily::LRbf,
        KernelFamily::LExp,
        KernelFamily::LMat { nu: 1.5 },
        KernelFamily::LMat { nu: 2.5 },
        KernelFamily::GneitingMatern { nu: 1.5, c: 2.0 },
        KernelFamily::GneitingExpSep { c: 0.5 },
        KernelFamily::LaplaceScaled,
        KernelFamily::RationalQuadratic,
    ]
}
