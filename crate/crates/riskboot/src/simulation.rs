//! Synthetic-data generator and Monte Carlo studies.
//!
//! Cohorts are simulated from constant cause-specific hazards with an
//! independent exponential censoring hazard and an administrative censoring
//! time, so the true cause-1 CIF is available in closed form:
//! `F1(t) = a1 / (a1 + a2) * (1 - exp(-(a1 + a2) t))`.
//!
//! [`calibrate_rates`] inverts the closed-form observation-type probabilities
//! to hit a target mix of type-1 / type-2 / censored observations, pinning
//! the free scale by the probability of still being under observation at the
//! administrative end (default 8%).

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bands::{
    band_area, band_bounds, empirical_quantile, g_vector, gamma_weight, two_sample_tests, BandType,
    TestKind, Transform, TwoSampleConfig,
};
use crate::data::{break_ties, build_risk_table, Cause, Cohort, Observation, Status};
use crate::engine::{
    bootstrap_variance_curve, eval_grid, one_sample_functionals_on, precompute_z, Adjust,
};
use crate::error::{Error, Result};
use crate::multipliers::MultiplierScheme;
use crate::rng::{base_stream, derive_seed, derive_seed2, domain};
use crate::scalar::Real;

/// Constant-hazard data-generating process.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DgpSpec<R> {
    /// Cause-1 event hazard.
    pub hazard1: R,
    /// Cause-2 event hazard.
    pub hazard2: R,
    /// Exponential censoring hazard (0 disables random censoring).
    pub censor_rate: R,
    /// Administrative censoring time; may be infinite.
    pub admin_end: R,
    pub n: usize,
    pub seed: u64,
}

impl<R: Real> DgpSpec<R> {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.hazard1, self.hazard2, self.censor_rate];
        if rates.iter().any(|r| !r.is_finite() || *r < R::zero()) {
            return Err(Error::Invalid(
                "hazard rates must be finite and >= 0".into(),
            ));
        }
        if self.hazard1 + self.hazard2 <= R::zero() {
            return Err(Error::Invalid("hazard1 + hazard2 must be positive".into()));
        }
        if self.admin_end <= R::zero() {
            return Err(Error::Invalid("admin_end must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::Invalid("cohort size must be >= 1".into()));
        }
        Ok(())
    }

    /// True cause-1 CIF of the event process (censoring-free).
    pub fn true_cif1(&self, t: R) -> R {
        let total = self.hazard1 + self.hazard2;
        self.hazard1 / total * (R::one() - (-total * t).exp())
    }

    /// True event-time survival `P(T > t)`.
    pub fn true_survival(&self, t: R) -> R {
        (-(self.hazard1 + self.hazard2) * t).exp()
    }

    /// Closed-form expected percentages of (type-1, type-2, censored)
    /// observations under this process.
    pub fn expected_mix(&self) -> (R, R, R) {
        let theta = self.hazard1 + self.hazard2 + self.censor_rate;
        let k = if self.admin_end.is_finite() {
            R::one() - (-theta * self.admin_end).exp()
        } else {
            R::one()
        };
        let hundred = R::of(100.0);
        let p1 = self.hazard1 / theta * k * hundred;
        let p2 = self.hazard2 / theta * k * hundred;
        (p1, p2, hundred - p1 - p2)
    }
}

/// Inverse-CDF exponential sample; guards the measure-zero `u = 0` draw.
fn exp_sample<R: Real, G: Rng + ?Sized>(rate: R, rng: &mut G) -> R {
    let mut u: f64 = rng.random();
    if u == 0.0 {
        u = f64::MIN_POSITIVE;
    }
    R::of(-(-u).ln_1p()) / rate
}

/// Simulates one cohort (entry = 0, group 1) and breaks the administrative
/// censoring ties so exits are pairwise distinct.
pub fn generate_cohort<R: Real>(spec: &DgpSpec<R>) -> Result<Cohort<R>> {
    spec.validate()?;
    let mut rng = base_stream(spec.seed);
    let total = spec.hazard1 + spec.hazard2;
    let p1 = spec.hazard1 / total;
    let mut rows = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let event_time = exp_sample(total, &mut rng);
        let cause_u: f64 = rng.random();
        let cause = if R::of(cause_u) < p1 {
            Cause::One
        } else {
            Cause::Two
        };
        let censor_time = if spec.censor_rate > R::zero() {
            exp_sample(spec.censor_rate, &mut rng).min(spec.admin_end)
        } else {
            spec.admin_end
        };
        let (exit, status) = if event_time <= censor_time {
            (event_time, Status::Event(cause))
        } else {
            (censor_time, Status::Censored)
        };
        rows.push(Observation {
            id: (i + 1).to_string(),
            entry: R::zero(),
            exit,
            status,
            group: 1,
        });
    }
    Ok(break_ties(&Cohort::new(rows)?))
}

/// Target percentages of observation types, summing to 100.
#[derive(Debug, Clone, Copy)]
pub struct MixTarget<R> {
    pub event1_pct: R,
    pub event2_pct: R,
    pub censored_pct: R,
}

/// Hazards returned by [`calibrate_rates`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CalibratedRates<R> {
    pub hazard1: R,
    pub hazard2: R,
    pub censor_rate: R,
}

impl<R: Real> CalibratedRates<R> {
    pub fn spec(&self, admin_end: R, n: usize, seed: u64) -> DgpSpec<R> {
        DgpSpec {
            hazard1: self.hazard1,
            hazard2: self.hazard2,
            censor_rate: self.censor_rate,
            admin_end,
            n,
            seed,
        }
    }
}

/// Solves for constant hazards whose implied observation-type mix equals the
/// target, inverting the closed-form probabilities.
///
/// For an exponential event/censoring race stopped administratively at
/// `admin_end`, `P(type j) = a_j / theta * (1 - exp(-theta * admin_end))`
/// with `theta` the total exit hazard. The target fixes the ratios only, so
/// the scale is pinned by `at_risk_at_end`, the probability of still being
/// under observation just before `admin_end` (defaults to 8%, capped by the
/// censoring share). With no censoring share the total event hazard is set
/// to 1.
pub fn calibrate_rates<R: Real>(
    target: &MixTarget<R>,
    admin_end: R,
    at_risk_at_end: Option<R>,
) -> Result<CalibratedRates<R>> {
    let hundred = R::of(100.0);
    let (p1, p2, pc) = (
        target.event1_pct / hundred,
        target.event2_pct / hundred,
        target.censored_pct / hundred,
    );
    for p in [p1, p2, pc] {
        if !p.is_finite() || p < R::zero() {
            return Err(Error::Infeasible(
                "percentages must be finite and >= 0".into(),
            ));
        }
    }
    let sum = target.event1_pct + target.event2_pct + target.censored_pct;
    if (sum - hundred).abs() > R::of(0.01) {
        return Err(Error::Infeasible(format!(
            "percentages must sum to 100, got {sum}"
        )));
    }
    if p1 <= R::zero() || p2 <= R::zero() {
        return Err(Error::Infeasible(
            "both event-type percentages must be positive".into(),
        ));
    }

    let p_event = p1 + p2;
    let rates = if pc <= R::zero() {
        if admin_end.is_finite() {
            return Err(Error::Infeasible(
                "a zero censoring share is unreachable with a finite administrative end".into(),
            ));
        }
        // Free scale: unit total event hazard.
        CalibratedRates {
            hazard1: p1,
            hazard2: p2,
            censor_rate: R::zero(),
        }
    } else if !admin_end.is_finite() {
        // Free scale: unit total exit hazard.
        CalibratedRates {
            hazard1: p1,
            hazard2: p2,
            censor_rate: pc,
        }
    } else {
        let rho = match at_risk_at_end {
            Some(r) => {
                if !(r > R::zero() && r <= pc) {
                    return Err(Error::Infeasible(format!(
                        "at-risk-at-end probability {r} must lie in (0, censored share {pc}]"
                    )));
                }
                r
            }
            None => R::of(0.08).min(pc),
        };
        let theta = -(rho.ln()) / admin_end;
        let k = R::one() - rho;
        let total_event = theta * p_event / k;
        let censor = (theta - total_event).max(R::zero());
        CalibratedRates {
            hazard1: total_event * p1 / p_event,
            hazard2: total_event * p2 / p_event,
            censor_rate: censor,
        }
    };

    // Self-check against the closed form the rates were solved from.
    let implied = rates.spec(admin_end, 1, 0).expected_mix();
    let half = R::of(0.5);
    if (implied.0 - target.event1_pct).abs() > half || (implied.1 - target.event2_pct).abs() > half
    {
        return Err(Error::Infeasible(format!(
            "calibration failed: implied mix ({}, {}, {})",
            implied.0, implied.1, implied.2
        )));
    }
    Ok(rates)
}

/// Parameters of a coverage study.
#[derive(Debug, Clone)]
pub struct CoverageConfig<R> {
    pub rates: CalibratedRates<R>,
    pub admin_end: R,
    pub n_list: Vec<usize>,
    pub schemes: Vec<MultiplierScheme>,
    pub band_types: Vec<BandType>,
    pub transform: Transform,
    pub n_sim: usize,
    pub replicates: usize,
    pub interval: (R, R),
    pub alpha: R,
    pub seed: u64,
}

/// One (n, scheme, band) cell of a coverage study.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageCell<R> {
    pub n: usize,
    pub scheme: MultiplierScheme,
    pub band_type: BandType,
    /// Percentage of runs whose band contained the true CIF on the whole
    /// interval; runs without a valid band count as non-coverage.
    pub coverage_pct: R,
    /// Mean band area over the runs with a valid band.
    pub mean_area: R,
    pub n_sim: usize,
    /// Runs where this cell's band could not be constructed.
    pub failed_runs: usize,
}

/// Observed observation-type percentages per cohort size.
#[derive(Debug, Clone, Serialize)]
pub struct EventMixRow<R> {
    pub n: usize,
    pub event1_pct: R,
    pub event2_pct: R,
    pub censored_pct: R,
}

/// Coverage-study output.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport<R> {
    pub cells: Vec<CoverageCell<R>>,
    pub event_mix: Vec<EventMixRow<R>>,
}

struct RunOutcome<R> {
    /// Indexed by scheme-major `scheme_idx * band_types.len() + band_idx`;
    /// `None` when the band was not constructible.
    cells: Vec<Option<(bool, R)>>,
    events1: usize,
    events2: usize,
    censored: usize,
}

fn coverage_run<R: Real>(
    cfg: &CoverageConfig<R>,
    n: usize,
    n_idx: usize,
    run: usize,
) -> RunOutcome<R> {
    let n_cells = cfg.schemes.len() * cfg.band_types.len();
    let run_seed = derive_seed2(cfg.seed, domain::STUDY_RUN, n_idx as u64, run as u64);
    let spec = cfg
        .rates
        .spec(cfg.admin_end, n, derive_seed(run_seed, domain::COHORT, 0));
    let cohort = generate_cohort(&spec).expect("validated spec");

    let mut events1 = 0;
    let mut events2 = 0;
    for obs in cohort.observations() {
        match obs.status {
            Status::Event(Cause::One) => events1 += 1,
            Status::Event(Cause::Two) => events2 += 1,
            Status::Censored => {}
        }
    }
    let censored = n - events1 - events2;
    let failed = |cells: Vec<Option<(bool, R)>>| RunOutcome {
        cells,
        events1,
        events2,
        censored,
    };

    let (t1, t2) = cfg.interval;
    let rt = build_risk_table(&cohort);
    let z = precompute_z(&rt, &cohort);
    let eval = match eval_grid(&z, t1, t2) {
        Ok(e) => e,
        Err(_) => return failed(vec![None; n_cells]),
    };
    let f1_vals = eval.f1_values();
    if rt.events_in(t1, t2) == 0
        || z.at_risk_at(t2) == 0
        || f1_vals[0] <= R::zero()
        || *f1_vals.last().unwrap() >= R::one()
    {
        return failed(vec![None; n_cells]);
    }

    // Truth on the grid cells: monotone, so containment holds iff
    // lower <= F1(u_k) and F1(u_{k+1}) <= upper per cell.
    let points = eval.points();
    let truth: Vec<R> = points.iter().map(|&u| spec.true_cif1(u)).collect();
    let truth_next: Vec<R> = (0..points.len())
        .map(|k| {
            let next = if k + 1 < points.len() {
                points[k + 1]
            } else {
                t2
            };
            spec.true_cif1(next)
        })
        .collect();
    let sqrt_n = R::of_usize(n).sqrt();

    let mut cells = vec![None; n_cells];
    for (s_idx, &scheme) in cfg.schemes.iter().enumerate() {
        let var_curve = bootstrap_variance_curve(&z, scheme, &eval);
        let sigma2: Vec<R> = var_curve
            .iter()
            .zip(f1_vals)
            .map(|(&v, &f)| v / ((R::one() - f) * (R::one() - f)))
            .collect();

        let band_weights: Vec<Option<(Vec<R>, Vec<R>)>> = cfg
            .band_types
            .iter()
            .map(|&bt| {
                g_vector(bt, f1_vals, &sigma2).ok().map(|g| {
                    let w = gamma_weight(cfg.transform, f1_vals, &g);
                    (g, w)
                })
            })
            .collect();
        if band_weights.iter().all(Option::is_none) {
            continue;
        }

        let boot_seed = derive_seed(run_seed, domain::BOOTSTRAP, s_idx as u64);
        // One pass over the replicates computes the sup for every band type.
        let sups: Vec<Vec<R>> =
            one_sample_functionals_on(&z, &eval, scheme, cfg.replicates, boot_seed, |_, path| {
                band_weights
                    .iter()
                    .map(|bw| match bw {
                        Some((_, w)) => path
                            .iter()
                            .zip(w)
                            .map(|(&p, &wk)| (p * wk).abs())
                            .fold(R::zero(), R::max),
                        None => R::zero(),
                    })
                    .collect()
            });

        for (b_idx, bw) in band_weights.iter().enumerate() {
            let Some((g, _)) = bw else { continue };
            let cell_sups: Vec<R> = sups.iter().map(|s| s[b_idx]).collect();
            let q = empirical_quantile(&cell_sups, cfg.alpha);
            let mut covered = true;
            let mut lower = Vec::with_capacity(points.len());
            let mut upper = Vec::with_capacity(points.len());
            for k in 0..points.len() {
                let (lo, hi) = band_bounds(cfg.transform, f1_vals[k], g[k], q, sqrt_n);
                if lo > truth[k] || truth_next[k] > hi {
                    covered = false;
                }
                lower.push(lo);
                upper.push(hi);
            }
            let area = band_area(points, t2, &lower, &upper);
            cells[s_idx * cfg.band_types.len() + b_idx] = Some((covered, area));
        }
    }
    RunOutcome {
        cells,
        events1,
        events2,
        censored,
    }
}

/// Monte Carlo coverage study of the simultaneous bands under the calibrated
/// constant-hazard process. Deterministic under the master seed for any
/// degree of parallelism.
pub fn coverage_study<R: Real>(cfg: &CoverageConfig<R>) -> Result<StudyReport<R>> {
    if cfg.n_sim == 0 || cfg.replicates == 0 {
        return Err(Error::Invalid("n_sim and replicates must be >= 1".into()));
    }
    if cfg.n_list.is_empty() || cfg.schemes.is_empty() || cfg.band_types.is_empty() {
        return Err(Error::Invalid("empty study grid".into()));
    }
    cfg.rates.spec(cfg.admin_end, 1, 0).validate()?;

    let mut cells = Vec::new();
    let mut event_mix = Vec::new();
    for (n_idx, &n) in cfg.n_list.iter().enumerate() {
        let outcomes: Vec<RunOutcome<R>> = (0..cfg.n_sim)
            .into_par_iter()
            .map(|run| coverage_run(cfg, n, n_idx, run))
            .collect();

        let hundred = R::of(100.0);
        let total_subjects = R::of_usize(n * cfg.n_sim);
        let sum_of = |f: fn(&RunOutcome<R>) -> usize| {
            R::of_usize(outcomes.iter().map(f).sum::<usize>()) * hundred / total_subjects
        };
        event_mix.push(EventMixRow {
            n,
            event1_pct: sum_of(|o| o.events1),
            event2_pct: sum_of(|o| o.events2),
            censored_pct: sum_of(|o| o.censored),
        });

        for (s_idx, &scheme) in cfg.schemes.iter().enumerate() {
            for (b_idx, &band_type) in cfg.band_types.iter().enumerate() {
                let idx = s_idx * cfg.band_types.len() + b_idx;
                let mut covered = 0usize;
                let mut failed = 0usize;
                let mut area_sum = R::zero();
                let mut area_count = 0usize;
                for o in &outcomes {
                    match o.cells[idx] {
                        Some((c, area)) => {
                            covered += c as usize;
                            area_sum = area_sum + area;
                            area_count += 1;
                        }
                        None => failed += 1,
                    }
                }
                cells.push(CoverageCell {
                    n,
                    scheme,
                    band_type,
                    coverage_pct: R::of_usize(covered) * hundred / R::of_usize(cfg.n_sim),
                    mean_area: if area_count > 0 {
                        area_sum / R::of_usize(area_count)
                    } else {
                        R::zero()
                    },
                    n_sim: cfg.n_sim,
                    failed_runs: failed,
                });
            }
        }
    }
    Ok(StudyReport { cells, event_mix })
}

/// Parameters of a two-sample size/power study.
#[derive(Debug, Clone)]
pub struct SizePowerConfig<R> {
    pub null_rates: CalibratedRates<R>,
    /// Group 2 under the alternative.
    pub alt_rates: CalibratedRates<R>,
    pub admin_end: R,
    pub n1: usize,
    pub n2: usize,
    pub kinds: Vec<TestKind>,
    pub scheme: MultiplierScheme,
    pub adjust: Adjust,
    pub n_sim: usize,
    pub replicates: usize,
    pub interval: (R, R),
    pub alpha: R,
    pub seed: u64,
}

/// Rejection rates per test kind.
#[derive(Debug, Clone, Serialize)]
pub struct SizePowerRow<R> {
    pub kind: TestKind,
    /// Rejection percentage with both groups from the null process.
    pub size_pct: R,
    /// Rejection percentage with group 2 from the alternative process.
    pub power_pct: R,
}

/// Size/power study output.
#[derive(Debug, Clone, Serialize)]
pub struct SizePowerReport<R> {
    pub rows: Vec<SizePowerRow<R>>,
    pub n_sim: usize,
    /// Runs per hypothesis where the tests were inadmissible (excluded from
    /// the rates).
    pub failed_null: usize,
    pub failed_alt: usize,
}

/// Empirical size and power of the two-sample tests. Deterministic under the
/// master seed for any degree of parallelism.
pub fn size_power_study<R: Real>(cfg: &SizePowerConfig<R>) -> Result<SizePowerReport<R>> {
    if cfg.n_sim == 0 || cfg.replicates == 0 {
        return Err(Error::Invalid("n_sim and replicates must be >= 1".into()));
    }
    if cfg.kinds.is_empty() {
        return Err(Error::Invalid("no test kinds requested".into()));
    }
    cfg.null_rates.spec(cfg.admin_end, 1, 0).validate()?;
    cfg.alt_rates.spec(cfg.admin_end, 1, 0).validate()?;

    let test_cfg = TwoSampleConfig {
        scheme: cfg.scheme,
        replicates: cfg.replicates,
        alpha: cfg.alpha,
        seed: 0,
        adjust: cfg.adjust,
    };

    // Per run and hypothesis: Some(rejections per kind) or None if the tests
    // were inadmissible on that draw.
    let run_one = |run: usize, alt: bool| -> Option<Vec<bool>> {
        let run_seed = derive_seed2(cfg.seed, domain::STUDY_RUN, alt as u64, run as u64);
        let spec1 = cfg.null_rates.spec(
            cfg.admin_end,
            cfg.n1,
            derive_seed(run_seed, domain::COHORT, 1),
        );
        let rates2 = if alt { &cfg.alt_rates } else { &cfg.null_rates };
        let spec2 = rates2.spec(
            cfg.admin_end,
            cfg.n2,
            derive_seed(run_seed, domain::COHORT, 2),
        );
        let c1 = generate_cohort(&spec1).expect("validated spec");
        let c2 = generate_cohort(&spec2).expect("validated spec");
        let mut tc = test_cfg;
        tc.seed = derive_seed(run_seed, domain::BOOTSTRAP, 0);
        two_sample_tests(&c1, &c2, cfg.interval, |_| R::one(), &tc, &cfg.kinds)
            .ok()
            .map(|results| results.iter().map(|r| r.reject).collect())
    };

    let null_runs: Vec<Option<Vec<bool>>> = (0..cfg.n_sim)
        .into_par_iter()
        .map(|r| run_one(r, false))
        .collect();
    let alt_runs: Vec<Option<Vec<bool>>> = (0..cfg.n_sim)
        .into_par_iter()
        .map(|r| run_one(r, true))
        .collect();

    let hundred = R::of(100.0);
    let rate = |runs: &[Option<Vec<bool>>], kind_idx: usize| {
        let valid = runs.iter().flatten().count();
        let rejected = runs.iter().flatten().filter(|rejs| rejs[kind_idx]).count();
        if valid == 0 {
            R::zero()
        } else {
            R::of_usize(rejected) * hundred / R::of_usize(valid)
        }
    };

    let rows = cfg
        .kinds
        .iter()
        .enumerate()
        .map(|(k_idx, &kind)| SizePowerRow {
            kind,
            size_pct: rate(&null_runs, k_idx),
            power_pct: rate(&alt_runs, k_idx),
        })
        .collect();

    Ok(SizePowerReport {
        rows,
        n_sim: cfg.n_sim,
        failed_null: null_runs.iter().filter(|r| r.is_none()).count(),
        failed_alt: alt_runs.iter().filter(|r| r.is_none()).count(),
    })
}
