//! Canonical estimators on the event grid: Kaplan-Meier survival,
//! cause-specific Nelson-Aalen cumulative hazards, Aalen-Johansen cumulative
//! incidence functions, and the plug-in covariance of the normalized CIF
//! estimator used as an oracle for the bootstrap.
//!
//! All estimators are right-continuous step functions jumping only at grid
//! times; left limits are taken by evaluating one grid row earlier. Grid rows
//! with `Y = 0` contribute nothing (`0/0 := 0`).

use crate::data::{Cause, RiskTable};
use crate::engine::ZComponents;
use crate::error::{Error, Result};
use crate::multipliers::MultiplierScheme;
use crate::scalar::Real;

/// A right-continuous piecewise-constant function with left limits.
///
/// `eval(t)` returns the value at the largest jump time `<= t`, or
/// `initial` before the first jump.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction<R> {
    times: Vec<R>,
    values: Vec<R>,
    initial: R,
}

impl<R: Real> StepFunction<R> {
    /// Jump times must be strictly increasing and match `values` in length.
    pub fn new(times: Vec<R>, values: Vec<R>, initial: R) -> Self {
        assert_eq!(times.len(), values.len(), "times/values length mismatch");
        assert!(
            times.windows(2).all(|w| w[0] < w[1]),
            "jump times must be strictly increasing"
        );
        StepFunction {
            times,
            values,
            initial,
        }
    }

    pub fn times(&self) -> &[R] {
        &self.times
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    pub fn initial(&self) -> R {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: R) -> R {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`: the value at the largest jump time `< t`.
    pub fn left_limit(&self, t: R) -> R {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }
}

/// Kaplan-Meier estimator of the overall survival function `P(T > t)`.
///
/// Product over grid rows `t_k <= t` of `1 - dN(t_k) / Y(t_k)`; the value
/// before the first grid time is 1.
pub fn kaplan_meier<R: Real>(rt: &RiskTable<R>) -> StepFunction<R> {
    let mut surv = R::one();
    let values = (0..rt.len())
        .map(|k| {
            let y = rt.at_risk()[k];
            if y > 0 {
                // (y - d) / y keeps the factor exact in floating point.
                let d = rt.dn_total(k);
                surv = surv * R::of_usize((y - d) as usize) / R::of_usize(y as usize);
            }
            surv
        })
        .collect();
    StepFunction::new(rt.times().to_vec(), values, R::one())
}

/// Nelson-Aalen estimator of the cumulative cause-specific hazard:
/// sum of `dN_j(t_k) / Y(t_k)` over grid rows `t_k <= t`.
pub fn nelson_aalen<R: Real>(rt: &RiskTable<R>, cause: Cause) -> StepFunction<R> {
    let dnj = match cause {
        Cause::One => rt.dn1(),
        Cause::Two => rt.dn2(),
    };
    let mut acc = R::zero();
    let values = (0..rt.len())
        .map(|k| {
            let y = rt.at_risk()[k];
            if y > 0 {
                acc = acc + R::of_usize(dnj[k] as usize) / R::of_usize(y as usize);
            }
            acc
        })
        .collect();
    StepFunction::new(rt.times().to_vec(), values, R::zero())
}

/// Aalen-Johansen estimator of the cumulative incidence function of `cause`:
/// sum over grid rows `t_k <= t` of `P(T > t_k-) * dN_j(t_k) / Y(t_k)`,
/// where `P(T > t_k-)` is the Kaplan-Meier left limit.
pub fn aalen_johansen<R: Real>(rt: &RiskTable<R>, cause: Cause) -> StepFunction<R> {
    let dnj = match cause {
        Cause::One => rt.dn1(),
        Cause::Two => rt.dn2(),
    };
    let mut surv_left = R::one();
    let mut acc = R::zero();
    let values = (0..rt.len())
        .map(|k| {
            let y = rt.at_risk()[k];
            if y > 0 {
                let yf = R::of_usize(y as usize);
                acc = acc + surv_left * R::of_usize(dnj[k] as usize) / yf;
                surv_left = surv_left * R::of_usize((y - rt.dn_total(k)) as usize) / yf;
            }
            acc
        })
        .collect();
    StepFunction::new(rt.times().to_vec(), values, R::zero())
}

/// Plug-in estimate of the limit covariance of the normalized cause-1 CIF
/// estimator at `(s1, s2)` (symmetric in its arguments).
///
/// The population covariance integrates, over `u <= min(s1, s2)`,
/// `(S2(u) - F1(s2))(S2(u) - F1(s1)) alpha_1(u) / y(u)` plus the analogous
/// cause-2 term with `F1(u)` in place of `S2(u)`. Plugging in
/// `y -> Y/n`, `alpha_j du -> dN_j / Y` and left limits of the estimators
/// inside the sum gives a contribution `n / Y(t_k)^2 * [...]` per event row.
pub fn zeta_plugin<R: Real>(rt: &RiskTable<R>, s1: R, s2: R) -> Result<R> {
    let last = rt
        .last_time()
        .ok_or_else(|| Error::Invalid("empty risk table".into()))?;
    for s in [s1, s2] {
        if s < R::zero() || s > last {
            return Err(Error::Inadmissible(format!(
                "time {s} outside the observed range [0, {last}]"
            )));
        }
    }
    let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };

    let f1 = aalen_johansen(rt, Cause::One);
    let f2 = aalen_johansen(rt, Cause::Two);
    let f1_lo = f1.eval(lo);
    let f1_hi = f1.eval(hi);
    let n = R::of_usize(rt.n());

    let mut f1_left = R::zero();
    let mut s2_left = R::one();
    let mut acc = R::zero();
    for k in 0..rt.len() {
        let t = rt.times()[k];
        if t > lo {
            break;
        }
        let y = rt.at_risk()[k];
        if y > 0 {
            let yf = R::of_usize(y as usize);
            let d1 = R::of_usize(rt.dn1()[k] as usize);
            let d2 = R::of_usize(rt.dn2()[k] as usize);
            let term1 = (s2_left - f1_hi) * (s2_left - f1_lo) * d1;
            let term2 = (f1_left - f1_hi) * (f1_left - f1_lo) * d2;
            acc = acc + n / (yf * yf) * (term1 + term2);
        }
        f1_left = f1.values()[k];
        s2_left = R::one() - f2.values()[k];
    }
    Ok(acc)
}

/// Estimated covariance surface of the cause-1 CIF estimator on a time grid:
/// entries are `zeta_plugin(s_i, s_j) / n`.
#[derive(Debug, Clone)]
pub struct CovarianceGrid<R> {
    times: Vec<R>,
    values: Vec<R>,
}

impl<R: Real> CovarianceGrid<R> {
    pub fn plugin(rt: &RiskTable<R>, times: &[R]) -> Result<Self> {
        let n = R::of_usize(rt.n());
        let dim = times.len();
        let mut values = vec![R::zero(); dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = zeta_plugin(rt, times[i], times[j])? / n;
                values[i * dim + j] = v;
                values[j * dim + i] = v;
            }
        }
        Ok(CovarianceGrid {
            times: times.to_vec(),
            values,
        })
    }

    pub fn times(&self) -> &[R] {
        &self.times
    }

    pub fn get(&self, i: usize, j: usize) -> R {
        self.values[i * self.times.len() + j]
    }
}

/// Variance estimator for the band transforms:
/// `sigma2(t) = Var(W(t) | data) / (1 - F1(t))^2`, where the conditional
/// variance of the bootstrap process is the closed form
/// `n * sum_i sigma_i^2 Z_i(t)^2` from [`crate::engine::bootstrap_covariance`].
pub fn sigma2_hat<R: Real>(
    z: &ZComponents<R>,
    scheme: MultiplierScheme,
    f1: &StepFunction<R>,
    t: R,
) -> Result<R> {
    let f = f1.eval(t);
    if f >= R::one() {
        return Err(Error::Inadmissible(
            "transformation undefined: F1(t) = 1".into(),
        ));
    }
    let var = crate::engine::bootstrap_covariance(z, scheme, t, t);
    Ok(var / ((R::one() - f) * (R::one() - f)))
}
