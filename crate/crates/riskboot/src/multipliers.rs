//! Multiplier weight schemes for the bootstrap.
//!
//! Each subject with an observed event owns one active weight slot (slots
//! `0..n` hold the cause-1 component of subject `i`, slots `n..2n` the cause-2
//! component; a subject's counting processes jump at most once in total, so at
//! most one of its slots is active). Censored subjects get no draw and their
//! slots stay at 0.
//!
//! The weird-binomial scheme draws `B(Y, 1/Y) - 1` where `Y` is the number at
//! risk at the subject's exit; its conditional mean is exactly 0 and its
//! conditional variance `1 - 1/Y`. Both count samplers use CDF inversion with
//! the probability mass recurrence, which is exact for every `Y` (the mean is
//! always 1, so the walk is short) and stable at large `Y` via `ln_1p`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, RiskTable, Status};
use crate::scalar::Real;

/// Weight distribution plugged into the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MultiplierScheme {
    /// i.i.d. N(0, 1) per active slot.
    #[serde(rename = "normal")]
    StandardNormal,
    /// i.i.d. Poisson(1) - 1 per active slot.
    #[serde(rename = "poisson")]
    CenteredPoisson,
    /// `Binomial(Y, 1/Y) - 1` at the subject's exit; conditionally
    /// independent given the data.
    #[serde(rename = "weird")]
    WeirdBinomial,
}

impl MultiplierScheme {
    pub fn name(self) -> &'static str {
        match self {
            MultiplierScheme::StandardNormal => "normal",
            MultiplierScheme::CenteredPoisson => "poisson",
            MultiplierScheme::WeirdBinomial => "weird",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(MultiplierScheme::StandardNormal),
            "poisson" => Some(MultiplierScheme::CenteredPoisson),
            "weird" => Some(MultiplierScheme::WeirdBinomial),
            _ => None,
        }
    }
}

/// One realized weight vector over the `2n` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDraw<R> {
    /// Slot weights; inactive slots carry 0.
    pub weights: Vec<R>,
    /// Whether each slot belongs to an observed event.
    pub active: Vec<bool>,
}

impl<R: Real> WeightDraw<R> {
    pub fn n_slots(&self) -> usize {
        self.weights.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Poisson(1) by CDF inversion.
fn poisson_one<G: Rng + ?Sized>(rng: &mut G) -> u64 {
    let u: f64 = rng.random();
    let mut pmf = (-1.0f64).exp();
    let mut cdf = pmf;
    let mut k = 0u64;
    while u >= cdf && k < 64 {
        k += 1;
        pmf /= k as f64;
        cdf += pmf;
    }
    k
}

/// `Binomial(m, 1/m)` by CDF inversion; exact for every `m >= 1`.
fn binomial_one_over_m<G: Rng + ?Sized>(m: u64, rng: &mut G) -> u64 {
    if m <= 1 {
        // Binomial(1, 1) is the constant 1.
        return m;
    }
    let p = 1.0 / m as f64;
    let u: f64 = rng.random();
    let mut pmf = (m as f64 * (-p).ln_1p()).exp();
    let mut cdf = pmf;
    let mut k = 0u64;
    let odds = p / (1.0 - p);
    while u >= cdf && k < m {
        pmf *= (m - k) as f64 / (k + 1) as f64 * odds;
        k += 1;
        cdf += pmf;
    }
    k
}

/// One weight for a slot whose subject exited with `at_risk` subjects at risk.
pub(crate) fn sample_weight<G: Rng + ?Sized>(
    scheme: MultiplierScheme,
    at_risk: u32,
    rng: &mut G,
) -> f64 {
    match scheme {
        MultiplierScheme::StandardNormal => StandardNormal.sample(rng),
        MultiplierScheme::CenteredPoisson => poisson_one(rng) as f64 - 1.0,
        MultiplierScheme::WeirdBinomial => binomial_one_over_m(at_risk as u64, rng) as f64 - 1.0,
    }
}

/// Draws one weight vector. Subjects are visited in cohort order and one
/// value is drawn per active slot, so equal inputs and RNG state reproduce
/// the draw exactly.
pub fn draw_weights<R: Real, G: Rng + ?Sized>(
    scheme: MultiplierScheme,
    rt: &RiskTable<R>,
    cohort: &Cohort<R>,
    rng: &mut G,
) -> WeightDraw<R> {
    let n = cohort.n();
    let mut weights = vec![R::zero(); 2 * n];
    let mut active = vec![false; 2 * n];
    for (i, obs) in cohort.observations().iter().enumerate() {
        if let Status::Event(cause) = obs.status {
            let slot = match cause {
                crate::data::Cause::One => i,
                crate::data::Cause::Two => n + i,
            };
            let y = rt.at_risk_at(obs.exit);
            debug_assert!(y > 0, "exiting subject must be at risk");
            active[slot] = true;
            weights[slot] = R::of(sample_weight(scheme, y, rng));
        }
    }
    WeightDraw { weights, active }
}

/// Conditional mean, variance and fourth central moment of one slot's weight
/// given the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments<R> {
    pub mean: R,
    pub variance: R,
    pub fourth: R,
}

/// Closed-form weird-binomial moments for a slot with `y` at risk.
fn weird_moments<R: Real>(y: u32) -> Moments<R> {
    let yf = y as f64;
    let variance = 1.0 - 1.0 / yf;
    // Central fourth moment of Binomial(m, p) is m p q (1 + 3 (m - 2) p q)
    // with p = 1/m here.
    let pq = (yf - 1.0) / (yf * yf);
    let fourth = variance * (1.0 + 3.0 * (yf - 2.0) * pq);
    Moments {
        mean: R::zero(),
        variance: R::of(variance),
        fourth: R::of(fourth),
    }
}

/// Per-slot conditional moments given the data; `None` for inactive slots.
///
/// Normal slots have moments (0, 1, 3); centered Poisson(1) slots (0, 1, 4);
/// weird slots mean exactly 0, variance `1 - 1/Y` and the exact binomial
/// central fourth moment.
pub fn conditional_moments<R: Real>(
    scheme: MultiplierScheme,
    rt: &RiskTable<R>,
    cohort: &Cohort<R>,
) -> Vec<Option<Moments<R>>> {
    let n = cohort.n();
    let mut out = vec![None; 2 * n];
    for (i, obs) in cohort.observations().iter().enumerate() {
        if let Status::Event(cause) = obs.status {
            let slot = match cause {
                crate::data::Cause::One => i,
                crate::data::Cause::Two => n + i,
            };
            out[slot] = Some(match scheme {
                MultiplierScheme::StandardNormal => Moments {
                    mean: R::zero(),
                    variance: R::one(),
                    fourth: R::of(3.0),
                },
                MultiplierScheme::CenteredPoisson => Moments {
                    mean: R::zero(),
                    variance: R::one(),
                    fourth: R::of(4.0),
                },
                MultiplierScheme::WeirdBinomial => weird_moments(rt.at_risk_at(obs.exit)),
            });
        }
    }
    out
}

/// Thresholds for flagging finite-sample surrogates of the weight-scheme
/// regularity conditions. The fourth-moment surrogate is reported but not
/// gated unless a threshold is set.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticThresholds<R> {
    /// Bound on `sqrt(n) * max_i |E[D_i | data]|`.
    pub mean_tol: R,
    /// Bound on `max_i |Var(D_i | data) - 1|`.
    pub variance_tol: R,
    /// Optional bound on `max_i E[D_i^4 | data] / n`.
    pub fourth_over_n_tol: Option<R>,
}

impl<R: Real> Default for DiagnosticThresholds<R> {
    fn default() -> Self {
        DiagnosticThresholds {
            mean_tol: R::of(1e-8),
            variance_tol: R::of(0.5),
            fourth_over_n_tol: None,
        }
    }
}

/// Finite-sample surrogates of the weight-scheme regularity conditions.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticReport<R> {
    pub scheme: MultiplierScheme,
    /// Number of active slots (= observed events).
    pub n_active: usize,
    /// `sqrt(n) * max |conditional mean|` over active slots.
    pub max_sqrt_n_mean: R,
    /// `max |conditional variance - 1|` over active slots.
    pub max_variance_gap: R,
    /// `max conditional fourth moment / n` over active slots.
    pub max_fourth_over_n: R,
    /// Smallest at-risk count at an observed event, if any.
    pub min_at_risk_at_event: Option<u32>,
    /// Human-readable descriptions of exceeded thresholds.
    pub flags: Vec<String>,
    pub pass: bool,
}

/// Evaluates the finite-sample surrogates of the scheme's moment conditions
/// and flags threshold violations.
pub fn diagnose_conditions<R: Real>(
    scheme: MultiplierScheme,
    rt: &RiskTable<R>,
    cohort: &Cohort<R>,
    thresholds: &DiagnosticThresholds<R>,
) -> DiagnosticReport<R> {
    let moments = conditional_moments(scheme, rt, cohort);
    let n = R::of_usize(cohort.n().max(1));
    let sqrt_n = n.sqrt();

    let mut n_active = 0;
    let mut max_mean = R::zero();
    let mut max_var_gap = R::zero();
    let mut max_fourth = R::zero();
    for m in moments.iter().flatten() {
        n_active += 1;
        max_mean = max_mean.max(m.mean.abs());
        max_var_gap = max_var_gap.max((m.variance - R::one()).abs());
        max_fourth = max_fourth.max(m.fourth);
    }

    let min_at_risk_at_event = cohort
        .observations()
        .iter()
        .filter(|o| o.status.is_event())
        .map(|o| rt.at_risk_at(o.exit))
        .min();

    let max_sqrt_n_mean = sqrt_n * max_mean;
    let max_fourth_over_n = max_fourth / n;

    let mut flags = Vec::new();
    if max_sqrt_n_mean > thresholds.mean_tol {
        flags.push(format!(
            "sqrt(n) * max|mean| = {max_sqrt_n_mean} exceeds {}",
            thresholds.mean_tol
        ));
    }
    if max_var_gap > thresholds.variance_tol {
        flags.push(format!(
            "max|variance - 1| = {max_var_gap} exceeds {}",
            thresholds.variance_tol
        ));
    }
    if let Some(tol) = thresholds.fourth_over_n_tol {
        if max_fourth_over_n > tol {
            flags.push(format!(
                "max fourth moment / n = {max_fourth_over_n} exceeds {tol}"
            ));
        }
    }

    DiagnosticReport {
        scheme,
        n_active,
        max_sqrt_n_mean,
        max_variance_gap: max_var_gap,
        max_fourth_over_n,
        min_at_risk_at_event,
        flags: flags.clone(),
        pass: flags.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_risk_table, Cohort, Observation};
    use crate::rng::base_stream;

    fn cohort(rows: &[(f64, i64)]) -> Cohort<f64> {
        Cohort::new(
            rows.iter()
                .map(|&(x, s)| Observation {
                    id: String::new(),
                    entry: 0.0,
                    exit: x,
                    status: Status::from_code(s).unwrap(),
                    group: 1,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn weird_weight_is_zero_when_alone_at_risk() {
        // Single subject: Y(T) = 1, Binomial(1, 1) - 1 = 0 deterministically.
        let c = cohort(&[(1.0, 1)]);
        let rt = build_risk_table(&c);
        let mut rng = base_stream(1);
        for _ in 0..20 {
            let d = draw_weights(MultiplierScheme::WeirdBinomial, &rt, &c, &mut rng);
            assert_eq!(d.weights[0], 0.0);
            assert!(d.active[0]);
        }
    }

    #[test]
    fn draws_are_deterministic_under_a_seed() {
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 0), (4.0, 1)]);
        let rt = build_risk_table(&c);
        for scheme in [
            MultiplierScheme::StandardNormal,
            MultiplierScheme::CenteredPoisson,
            MultiplierScheme::WeirdBinomial,
        ] {
            let a = draw_weights(scheme, &rt, &c, &mut base_stream(9));
            let b = draw_weights(scheme, &rt, &c, &mut base_stream(9));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn censored_slots_are_inactive_and_zero() {
        let c = cohort(&[(1.0, 1), (2.0, 0), (3.0, 2)]);
        let rt = build_risk_table(&c);
        let d = draw_weights(
            MultiplierScheme::StandardNormal,
            &rt,
            &c,
            &mut base_stream(4),
        );
        let n = c.n();
        // Subject 1 (censored): both slots inactive.
        assert!(!d.active[1] && !d.active[n + 1]);
        assert_eq!(d.weights[1], 0.0);
        assert_eq!(d.weights[n + 1], 0.0);
        // Subject 0 uses its cause-1 slot, subject 2 its cause-2 slot.
        assert!(d.active[0] && !d.active[n]);
        assert!(!d.active[2] && d.active[n + 2]);
        assert_eq!(d.n_active(), 2);
    }

    #[test]
    fn centered_poisson_mean_and_variance() {
        let mut rng = base_stream(11);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let d = poisson_one(&mut rng) as f64 - 1.0;
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 3e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn binomial_inversion_matches_enumeration_at_small_m() {
        // Binomial(2, 1/2): P(0) = 1/4, P(1) = 1/2, P(2) = 1/4.
        let mut rng = base_stream(5);
        let mut counts = [0usize; 3];
        let n = 400_000;
        for _ in 0..n {
            counts[binomial_one_over_m(2, &mut rng) as usize] += 1;
        }
        let p = [0.25, 0.5, 0.25];
        for k in 0..3 {
            let freq = counts[k] as f64 / n as f64;
            let sd = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
            assert!((freq - p[k]).abs() < 4.0 * sd, "k={k}: {freq} vs {}", p[k]);
        }
    }

    #[test]
    fn weird_moments_formulas() {
        // Y = 2: variance 1/2, fourth central moment of Binomial(2, 1/2) about
        // its mean 1 is 0.5 by enumerating the 3-point support.
        let m = weird_moments::<f64>(2);
        assert_eq!(m.mean, 0.0);
        assert_eq!(m.variance, 0.5);
        let enumerated: f64 = [(0.25, -1.0f64), (0.5, 0.0), (0.25, 1.0)]
            .iter()
            .map(|&(p, d)| p * d.powi(4))
            .sum();
        assert!((m.fourth - enumerated).abs() < 1e-15);
        assert_eq!(enumerated, 0.5);

        // Y = 1 degenerates.
        let m1 = weird_moments::<f64>(1);
        assert_eq!(m1.variance, 0.0);
        assert_eq!(m1.fourth, 0.0);
    }

    #[test]
    fn poisson_fourth_moment_matches_enumeration() {
        // E[(X - 1)^4] for X ~ Poisson(1), by truncated enumeration.
        let mut expected = 0.0f64;
        let mut pmf = (-1.0f64).exp();
        for k in 0..60u64 {
            expected += pmf * ((k as f64) - 1.0).powi(4);
            pmf /= (k + 1) as f64;
        }
        assert!((expected - 4.0).abs() < 1e-12, "enumerated {expected}");
    }

    #[test]
    fn conditional_moments_per_scheme() {
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 0)]);
        let rt = build_risk_table(&c);

        let normal = conditional_moments(MultiplierScheme::StandardNormal, &rt, &c);
        let m0 = normal[0].unwrap();
        assert_eq!((m0.mean, m0.variance, m0.fourth), (0.0, 1.0, 3.0));
        assert!(normal[2].is_none());

        let weird = conditional_moments(MultiplierScheme::WeirdBinomial, &rt, &c);
        // Subject 1 exits second with Y = 2: variance 1 - 1/2.
        let m1 = weird[c.n() + 1].unwrap();
        assert_eq!(m1.variance, 0.5);
    }

    #[test]
    fn diagnostics_normal_closed_form() {
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 0), (4.0, 1)]);
        let rt = build_risk_table(&c);
        let report = diagnose_conditions(
            MultiplierScheme::StandardNormal,
            &rt,
            &c,
            &DiagnosticThresholds::default(),
        );
        assert_eq!(report.max_sqrt_n_mean, 0.0);
        assert_eq!(report.max_variance_gap, 0.0);
        assert_eq!(report.max_fourth_over_n, 3.0 / 4.0);
        assert!(report.pass);
    }

    #[test]
    fn diagnostics_weird_variance_gap_is_one_over_min_y() {
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 0), (4.0, 1)]);
        let rt = build_risk_table(&c);
        let report = diagnose_conditions(
            MultiplierScheme::WeirdBinomial,
            &rt,
            &c,
            &DiagnosticThresholds::default(),
        );
        // Last event happens alone at risk: Y = 1, gap 1/1.
        assert_eq!(report.min_at_risk_at_event, Some(1));
        assert_eq!(report.max_variance_gap, 1.0);
        assert!(!report.pass);
    }

    #[test]
    fn weird_diagnostics_shrink_with_sample_size() {
        // The variance gap is 1 / (smallest at-risk count at an event), which
        // grows with n under a common censoring pattern.
        let mut gaps = Vec::new();
        for (n, seed) in [(50usize, 1u64), (100, 2), (200, 3)] {
            let spec = crate::simulation::DgpSpec {
                hazard1: 0.21,
                hazard2: 0.11,
                censor_rate: 0.18,
                admin_end: 5.0,
                n,
                seed,
            };
            let c = crate::simulation::generate_cohort(&spec).unwrap();
            let rt = build_risk_table(&c);
            let report = diagnose_conditions(
                MultiplierScheme::WeirdBinomial,
                &rt,
                &c,
                &DiagnosticThresholds::default(),
            );
            let expect = 1.0 / report.min_at_risk_at_event.unwrap() as f64;
            assert!((report.max_variance_gap - expect).abs() < 1e-15);
            gaps.push(report.max_variance_gap);
        }
        assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2], "{gaps:?}");
    }

    #[test]
    fn weird_centering_is_exact_by_monte_carlo() {
        let c = cohort(&[(1.0, 1), (2.0, 1), (3.0, 2), (4.0, 0), (5.0, 1)]);
        let rt = build_risk_table(&c);
        let mut rng = base_stream(21);
        let reps = 100_000;
        let mut sums = vec![0.0f64; 2 * c.n()];
        for _ in 0..reps {
            let d = draw_weights(MultiplierScheme::WeirdBinomial, &rt, &c, &mut rng);
            for (s, w) in sums.iter_mut().zip(&d.weights) {
                *s += w;
            }
        }
        let moments = conditional_moments(MultiplierScheme::WeirdBinomial, &rt, &c);
        for (slot, m) in moments.iter().enumerate() {
            if let Some(m) = m {
                let mc_mean = sums[slot] / reps as f64;
                let sd = (m.variance / reps as f64).sqrt();
                assert!(
                    mc_mean.abs() <= 4.0 * sd + 1e-12,
                    "slot {slot}: mean {mc_mean} vs sd {sd}"
                );
            } else {
                assert_eq!(sums[slot], 0.0);
            }
        }
    }

    #[test]
    fn distinct_slots_are_uncorrelated() {
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 1), (4.0, 2), (5.0, 1)]);
        let rt = build_risk_table(&c);
        for scheme in [
            MultiplierScheme::StandardNormal,
            MultiplierScheme::CenteredPoisson,
            MultiplierScheme::WeirdBinomial,
        ] {
            let mut rng = base_stream(33);
            let reps = 100_000;
            // Track the first two active slots.
            let probe = draw_weights(scheme, &rt, &c, &mut base_stream(0));
            let slots: Vec<usize> = (0..probe.active.len())
                .filter(|&s| probe.active[s])
                .take(2)
                .collect();
            let (a, b) = (slots[0], slots[1]);
            let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for _ in 0..reps {
                let d = draw_weights(scheme, &rt, &c, &mut rng);
                let (x, y) = (d.weights[a], d.weights[b]);
                sa += x;
                sb += y;
                sab += x * y;
                saa += x * x;
                sbb += y * y;
            }
            let nf = reps as f64;
            let cov = sab / nf - (sa / nf) * (sb / nf);
            let va = saa / nf - (sa / nf).powi(2);
            let vb = sbb / nf - (sb / nf).powi(2);
            let corr = cov / (va * vb).sqrt();
            // 4 sigma Monte Carlo bound for a correlation estimate.
            assert!(
                corr.abs() < 4.0 / nf.sqrt() + 1e-3,
                "{scheme:?}: corr {corr}"
            );
        }
    }
}
