//! Simultaneous confidence bands, pointwise confidence intervals, and
//! resampling tests for the cause-1 cumulative incidence function.
//!
//! Band construction follows the transformed-process route: the bootstrap
//! path is multiplied pointwise by `g(t) * phi'(F1(t))`, the (1 - alpha)
//! quantile `q` of the sup over the interval is simulated keeping the data
//! fixed, and the band is read off by inverting the transform,
//! `1 - (1 - F1(t))^exp(+-q / (sqrt(n) g(t)))` for the log-log `phi`.
//! Equal-precision bands use `g = log(1 - F1) / sigma`, Hall-Wellner bands
//! `g = log(1 - F1) / (1 + sigma^2)`.
//!
//! The one-sample test rejects exactly when the reference CIF leaves the
//! band; the two-sample Kolmogorov-Smirnov and Cramér-von-Mises tests compare
//! a weighted sup / integral of the scaled CIF difference against the same
//! functional of the two-sample bootstrap paths.

use serde::{Deserialize, Serialize};

use crate::data::{break_ties, build_risk_table, Cohort};
use crate::engine::{
    adjust_factor, eval_grid, one_sample_functionals_on, precompute_z, two_sample_eval,
    two_sample_functionals_on, Adjust, BootstrapPaths, EvalGrid,
};
use crate::error::{Error, Result};
use crate::estimators::StepFunction;
use crate::multipliers::MultiplierScheme;
use crate::scalar::Real;

/// Weight function family of the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandType {
    HallWellner,
    EqualPrecision,
}

impl BandType {
    pub fn name(self) -> &'static str {
        match self {
            BandType::HallWellner => "hw",
            BandType::EqualPrecision => "ep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hw" | "hall-wellner" => Some(BandType::HallWellner),
            "ep" | "equal-precision" => Some(BandType::EqualPrecision),
            _ => None,
        }
    }
}

/// Transformation applied before banding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `phi(x) = log(-log(1 - x))`.
    LogLog,
    Identity,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::LogLog => "loglog",
            Transform::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loglog" | "log-log" => Some(Transform::LogLog),
            "identity" | "id" => Some(Transform::Identity),
            _ => None,
        }
    }
}

/// Parameters of a band or one-sample test run.
#[derive(Debug, Clone, Copy)]
pub struct BandConfig<R> {
    pub scheme: MultiplierScheme,
    pub band_type: BandType,
    pub transform: Transform,
    pub replicates: usize,
    pub alpha: R,
    pub seed: u64,
}

/// A simultaneous confidence band on an interval grid.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceBand<R> {
    pub grid: Vec<R>,
    pub estimate: Vec<R>,
    pub lower: Vec<R>,
    pub upper: Vec<R>,
    pub band_type: BandType,
    pub transform: Transform,
    /// Simulated (1 - alpha) quantile of the sup of the transformed paths.
    pub quantile: R,
    pub alpha: R,
    /// Integral of the band width over the interval.
    pub area: R,
    pub interval: (R, R),
}

/// Outcome of a resampling test.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult<R> {
    pub statistic: R,
    pub critical_value: R,
    pub alpha: R,
    pub reject: bool,
    /// `(1 + #{replicates >= statistic}) / (B + 1)`.
    pub p_value: R,
    #[serde(skip)]
    pub replicate_stats: Vec<R>,
}

/// Two-sample test statistic family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Ks,
    Cvm,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Ks => "ks",
            TestKind::Cvm => "cvm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ks" => Some(TestKind::Ks),
            "cvm" => Some(TestKind::Cvm),
            _ => None,
        }
    }
}

/// Order statistic at rank `ceil((1 - alpha) (B + 1))`, clamped to `[1, B]`,
/// of the ascending sorted values.
///
/// Requires a non-empty slice and `alpha` in (0, 1).
pub fn empirical_quantile<R: Real>(values: &[R], alpha: R) -> R {
    assert!(!values.is_empty(), "empirical_quantile of no values");
    assert!(
        alpha > R::zero() && alpha < R::one(),
        "alpha must be in (0, 1)"
    );
    let b = values.len();
    let raw = ((R::one() - alpha) * R::of_usize(b + 1)).ceil().as_f64() as usize;
    let rank = raw.clamp(1, b);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_order(*b));
    sorted[rank - 1]
}

fn p_value<R: Real>(replicates: &[R], statistic: R) -> R {
    let ge = replicates.iter().filter(|&&v| v >= statistic).count();
    R::of_usize(1 + ge) / R::of_usize(replicates.len() + 1)
}

fn phi_loglog<R: Real>(x: R) -> R {
    (-(R::one() - x).ln()).ln()
}

fn phi_loglog_deriv<R: Real>(x: R) -> R {
    let one_minus = R::one() - x;
    R::one() / (one_minus * (-one_minus.ln()))
}

/// Band weight `g(t)` per grid point. Equal-precision requires a strictly
/// positive variance estimate everywhere.
pub(crate) fn g_vector<R: Real>(band_type: BandType, f1: &[R], sigma2: &[R]) -> Result<Vec<R>> {
    let mut g = Vec::with_capacity(f1.len());
    for (&f, &s2) in f1.iter().zip(sigma2) {
        let log_term = (R::one() - f).ln();
        let value = match band_type {
            BandType::EqualPrecision => {
                if s2 <= R::zero() {
                    return Err(Error::Inadmissible(
                        "equal-precision weight undefined: zero variance estimate on the interval"
                            .into(),
                    ));
                }
                log_term / s2.sqrt()
            }
            BandType::HallWellner => log_term / (R::one() + s2),
        };
        g.push(value);
    }
    Ok(g)
}

/// Pointwise multiplier turning a bootstrap path into the transformed path:
/// `g(t) * phi'(F1(t))` (log-log) or `g(t)` (identity).
pub(crate) fn gamma_weight<R: Real>(transform: Transform, f1: &[R], g: &[R]) -> Vec<R> {
    f1.iter()
        .zip(g)
        .map(|(&f, &gv)| match transform {
            Transform::LogLog => gv * phi_loglog_deriv(f),
            Transform::Identity => gv,
        })
        .collect()
}

/// Multiplies each path pointwise by `g(t) * phi'(F1(t))`.
pub fn gamma_paths<R: Real>(
    paths: &BootstrapPaths<R>,
    f1: &StepFunction<R>,
    sigma2: &[R],
    band_type: BandType,
    transform: Transform,
) -> Result<BootstrapPaths<R>> {
    let f1_vals: Vec<R> = paths.grid().iter().map(|&t| f1.eval(t)).collect();
    if f1_vals.iter().any(|&f| f <= R::zero() || f >= R::one()) {
        return Err(Error::Inadmissible(
            "transformation undefined on interval: F1 leaves (0, 1)".into(),
        ));
    }
    let g = g_vector(band_type, &f1_vals, sigma2)?;
    let w = gamma_weight(transform, &f1_vals, &g);
    Ok(paths.map_pointwise(&w))
}

/// Lower/upper band values at one grid point, by inverting the transform.
pub(crate) fn band_bounds<R: Real>(transform: Transform, f1: R, g: R, q: R, sqrt_n: R) -> (R, R) {
    match transform {
        Transform::LogLog => {
            let c = q / (sqrt_n * g);
            let base = R::one() - f1;
            let a = R::one() - base.powf(c.exp());
            let b = R::one() - base.powf((-c).exp());
            (a.min(b).max(R::zero()), a.max(b).min(R::one()))
        }
        Transform::Identity => {
            let half = (q / (sqrt_n * g)).abs();
            ((f1 - half).max(R::zero()), (f1 + half).min(R::one()))
        }
    }
}

/// Band width integrated over `[t1, t2]` with the step-function cell rule.
pub(crate) fn band_area<R: Real>(points: &[R], t2: R, lower: &[R], upper: &[R]) -> R {
    let mut area = R::zero();
    for k in 0..points.len() {
        let next = if k + 1 < points.len() {
            points[k + 1]
        } else {
            t2
        };
        area = area + (upper[k] - lower[k]) * (next - points[k]);
    }
    area
}

/// Shared pipeline: preprocessing, admissibility, variance curve, band
/// weights, replicate sups, quantile.
struct BandParts<R> {
    eval: EvalGrid<R>,
    g: Vec<R>,
    sups: Vec<R>,
    quantile: R,
    sqrt_n: R,
}

fn band_parts<R: Real>(
    cohort: &Cohort<R>,
    interval: (R, R),
    cfg: &BandConfig<R>,
) -> Result<BandParts<R>> {
    if cfg.replicates == 0 {
        return Err(Error::Invalid(
            "need at least one bootstrap replicate".into(),
        ));
    }
    if !(cfg.alpha > R::zero() && cfg.alpha < R::one()) {
        return Err(Error::Invalid(format!("alpha {} not in (0, 1)", cfg.alpha)));
    }
    let cohort = break_ties(cohort);
    let rt = build_risk_table(&cohort);
    let z = precompute_z(&rt, &cohort);
    let (t1, t2) = interval;
    let eval = eval_grid(&z, t1, t2)?;

    if t1 < t2 && rt.events_in(t1, t2) == 0 {
        return Err(Error::Inadmissible(format!(
            "no events in interval [{t1}, {t2}]"
        )));
    }
    if z.at_risk_at(t2) == 0 {
        return Err(Error::Inadmissible(format!(
            "no subjects at risk at t2 = {t2}"
        )));
    }
    let f1_vals = eval.f1_values();
    if f1_vals[0] <= R::zero() {
        return Err(Error::Inadmissible(format!(
            "transformation undefined on interval: F1({t1}) = 0; shrink the interval"
        )));
    }
    if *f1_vals.last().unwrap() >= R::one() {
        return Err(Error::Inadmissible(format!(
            "transformation undefined on interval: F1({t2}) = 1; shrink the interval"
        )));
    }

    let var_curve = crate::engine::bootstrap_variance_curve(&z, cfg.scheme, &eval);
    let sigma2: Vec<R> = var_curve
        .iter()
        .zip(f1_vals)
        .map(|(&v, &f)| v / ((R::one() - f) * (R::one() - f)))
        .collect();
    let g = g_vector(cfg.band_type, f1_vals, &sigma2)?;
    let w = gamma_weight(cfg.transform, f1_vals, &g);

    let sups = one_sample_functionals_on(
        &z,
        &eval,
        cfg.scheme,
        cfg.replicates,
        cfg.seed,
        |_, path| {
            path.iter()
                .zip(&w)
                .map(|(&p, &wk)| (p * wk).abs())
                .fold(R::zero(), R::max)
        },
    );
    let quantile = empirical_quantile(&sups, cfg.alpha);
    let sqrt_n = R::of_usize(cohort.n()).sqrt();
    Ok(BandParts {
        eval,
        g,
        sups,
        quantile,
        sqrt_n,
    })
}

/// Simultaneous confidence band for the cause-1 CIF on `[t1, t2]`.
pub fn confidence_band<R: Real>(
    cohort: &Cohort<R>,
    interval: (R, R),
    cfg: &BandConfig<R>,
) -> Result<ConfidenceBand<R>> {
    let parts = band_parts(cohort, interval, cfg)?;
    let f1_vals = parts.eval.f1_values();
    let mut lower = Vec::with_capacity(f1_vals.len());
    let mut upper = Vec::with_capacity(f1_vals.len());
    for (&f, &g) in f1_vals.iter().zip(&parts.g) {
        let (lo, hi) = band_bounds(cfg.transform, f, g, parts.quantile, parts.sqrt_n);
        lower.push(lo);
        upper.push(hi);
    }
    let area = band_area(parts.eval.points(), interval.1, &lower, &upper);
    Ok(ConfidenceBand {
        grid: parts.eval.points().to_vec(),
        estimate: f1_vals.to_vec(),
        lower,
        upper,
        band_type: cfg.band_type,
        transform: cfg.transform,
        quantile: parts.quantile,
        alpha: cfg.alpha,
        area,
        interval,
    })
}

/// Pointwise confidence interval at `at`: the band on the singleton grid.
pub fn pointwise_ci<R: Real>(
    cohort: &Cohort<R>,
    at: R,
    cfg: &BandConfig<R>,
) -> Result<ConfidenceBand<R>> {
    confidence_band(cohort, (at, at), cfg)
}

/// One-sample test of `F1 = F_ref` on the interval: rejects exactly when the
/// reference function leaves the simultaneous band.
pub fn one_sample_ks<R: Real>(
    cohort: &Cohort<R>,
    f_ref: &StepFunction<R>,
    interval: (R, R),
    cfg: &BandConfig<R>,
) -> Result<TestResult<R>> {
    let parts = band_parts(cohort, interval, cfg)?;
    let f1_vals = parts.eval.f1_values();

    let mut statistic = R::zero();
    for ((&u, &f_hat), &g) in parts.eval.points().iter().zip(f1_vals).zip(&parts.g) {
        let r = f_ref.eval(u);
        if r < R::zero() || r > R::one() {
            return Err(Error::Invalid(format!(
                "reference CIF value {r} at t = {u} outside [0, 1]"
            )));
        }
        let diff = match cfg.transform {
            Transform::LogLog => phi_loglog(r) - phi_loglog(f_hat),
            Transform::Identity => r - f_hat,
        };
        statistic = statistic.max(parts.sqrt_n * g.abs() * diff.abs());
    }

    Ok(TestResult {
        statistic,
        critical_value: parts.quantile,
        alpha: cfg.alpha,
        reject: statistic > parts.quantile,
        p_value: p_value(&parts.sups, statistic),
        replicate_stats: parts.sups,
    })
}

/// Parameters of a two-sample test run.
#[derive(Debug, Clone, Copy)]
pub struct TwoSampleConfig<R> {
    pub scheme: MultiplierScheme,
    pub replicates: usize,
    pub alpha: R,
    pub seed: u64,
    pub adjust: Adjust,
}

fn ks_functional<R: Real>(w: &[R], path: &[R]) -> R {
    w.iter()
        .zip(path)
        .map(|(&wk, &p)| (wk * p).abs())
        .fold(R::zero(), R::max)
}

fn cvm_functional<R: Real>(w: &[R], path: &[R], widths: &[R]) -> R {
    w.iter()
        .zip(path)
        .zip(widths)
        .map(|((&wk, &p), &dt)| wk * p * p * dt)
        .sum()
}

/// Runs the requested two-sample tests in one pass over shared replicate
/// weight streams, so KS and CvM under the same seed agree on the draws.
pub fn two_sample_tests<R: Real>(
    cohort1: &Cohort<R>,
    cohort2: &Cohort<R>,
    interval: (R, R),
    weight_fn: impl Fn(R) -> R + Sync,
    cfg: &TwoSampleConfig<R>,
    kinds: &[TestKind],
) -> Result<Vec<TestResult<R>>> {
    if cfg.replicates == 0 {
        return Err(Error::Invalid(
            "need at least one bootstrap replicate".into(),
        ));
    }
    if !(cfg.alpha > R::zero() && cfg.alpha < R::one()) {
        return Err(Error::Invalid(format!("alpha {} not in (0, 1)", cfg.alpha)));
    }
    let c1 = break_ties(cohort1);
    let c2 = break_ties(cohort2);
    let rt1 = build_risk_table(&c1);
    let rt2 = build_risk_table(&c2);
    let z1 = precompute_z(&rt1, &c1);
    let z2 = precompute_z(&rt2, &c2);
    let (t1, t2) = interval;
    let eval = two_sample_eval(&z1, &z2, t1, t2)?;
    if t1 < t2 {
        for (rt, label) in [(&rt1, "group 1"), (&rt2, "group 2")] {
            if rt.events_in(t1, t2) == 0 {
                return Err(Error::Inadmissible(format!(
                    "no events in interval [{t1}, {t2}] ({label})"
                )));
            }
        }
    }

    let points = eval.e1.points().to_vec();
    let w_vals: Vec<R> = points.iter().map(|&u| weight_fn(u)).collect();
    if w_vals.iter().any(|&w| !w.is_finite() || w <= R::zero()) {
        return Err(Error::Invalid(
            "weight function must be positive and finite on the interval".into(),
        ));
    }
    let widths: Vec<R> = points
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let next = if k + 1 < points.len() {
                points[k + 1]
            } else {
                t2
            };
            next - u
        })
        .collect();

    // Data statistic W = sqrt(n1 n2 / n) (F1_1 - F1_2) on the union grid.
    let (n1, n2) = (R::of_usize(z1.n()), R::of_usize(z2.n()));
    let data_scale = (n1 * n2 / (n1 + n2)).sqrt();
    let data_path: Vec<R> = points
        .iter()
        .map(|&u| data_scale * (z1.f1().eval(u) - z2.f1().eval(u)))
        .collect();

    let factor = adjust_factor(cfg.adjust, &z1, &z2, t2)?;
    let rep_stats: Vec<(R, R)> = two_sample_functionals_on(
        &z1,
        &z2,
        &eval,
        cfg.scheme,
        cfg.replicates,
        cfg.seed,
        factor,
        |_, path| {
            (
                ks_functional(&w_vals, path),
                cvm_functional(&w_vals, path, &widths),
            )
        },
    );

    let mut results = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let (statistic, stats): (R, Vec<R>) = match kind {
            TestKind::Ks => (
                ks_functional(&w_vals, &data_path),
                rep_stats.iter().map(|s| s.0).collect(),
            ),
            TestKind::Cvm => (
                cvm_functional(&w_vals, &data_path, &widths),
                rep_stats.iter().map(|s| s.1).collect(),
            ),
        };
        let critical_value = empirical_quantile(&stats, cfg.alpha);
        results.push(TestResult {
            statistic,
            critical_value,
            alpha: cfg.alpha,
            reject: statistic > critical_value,
            p_value: p_value(&stats, statistic),
            replicate_stats: stats,
        });
    }
    Ok(results)
}

/// Two-sample Kolmogorov-Smirnov-type test of equal cause-1 CIFs.
pub fn two_sample_ks<R: Real>(
    cohort1: &Cohort<R>,
    cohort2: &Cohort<R>,
    interval: (R, R),
    weight_fn: impl Fn(R) -> R + Sync,
    cfg: &TwoSampleConfig<R>,
) -> Result<TestResult<R>> {
    Ok(
        two_sample_tests(cohort1, cohort2, interval, weight_fn, cfg, &[TestKind::Ks])?
            .pop()
            .unwrap(),
    )
}

/// Two-sample Cramér-von-Mises-type test of equal cause-1 CIFs.
pub fn two_sample_cvm<R: Real>(
    cohort1: &Cohort<R>,
    cohort2: &Cohort<R>,
    interval: (R, R),
    weight_fn: impl Fn(R) -> R + Sync,
    cfg: &TwoSampleConfig<R>,
) -> Result<TestResult<R>> {
    Ok(
        two_sample_tests(cohort1, cohort2, interval, weight_fn, cfg, &[TestKind::Cvm])?
            .pop()
            .unwrap(),
    )
}
