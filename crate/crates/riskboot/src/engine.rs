//! Resampling engine: the per-subject decomposition of the bootstrapped
//! Aalen-Johansen process and its fast evaluation.
//!
//! For a subject with a cause-1 event at `T` the normalized CIF estimator's
//! linear representation contributes
//! `Z(s) = 1(T <= s) * (S2(T-) - F1(s)) / Y(T)`, and a cause-2 event
//! contributes the same with `F1(T-)` in place of `S2(T-)`; censored subjects
//! contribute nothing. Since `F1(s)` is the only `s`-dependent part, each
//! active slot reduces to two coefficients, and a bootstrap path
//! `sqrt(n) * sum_i D_i Z_i(s)` is evaluated over the whole event grid with
//! two running sums: cost O(n) per replicate after a one-time sort.
//!
//! Replicates are evaluated by an indexed parallel map over per-replicate
//! RNG streams, so the output is identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cause, Cohort, RiskTable, Status};
use crate::error::{Error, Result};
use crate::estimators::{aalen_johansen, StepFunction};
use crate::multipliers::{sample_weight, MultiplierScheme, WeightDraw};
use crate::rng::replicate_stream;
use crate::scalar::Real;

/// One active weight slot: the single jump of one subject's counting process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZSlot<R> {
    /// Global slot index: subject `i` cause-1 at `i`, cause-2 at `n + i`.
    pub slot: usize,
    /// Index into the event grid where this slot's process jumps.
    pub event_index: usize,
    /// `S2(T-) / Y(T)` for cause-1 slots, `F1(T-) / Y(T)` for cause-2 slots.
    pub coef_const: R,
    /// `-1 / Y(T)`, multiplying `F1(s)`.
    pub coef_f1: R,
    /// Number at risk at the subject's exit.
    pub at_risk: u32,
}

/// Precomputed decomposition of the bootstrapped process for one cohort.
#[derive(Debug, Clone)]
pub struct ZComponents<R> {
    n: usize,
    f1: StepFunction<R>,
    event_times: Vec<R>,
    /// Active slots sorted by event index.
    slots: Vec<ZSlot<R>>,
    /// CSR offsets: slots jumping at event `e` are `slots[off[e]..off[e+1]]`.
    bucket_offsets: Vec<usize>,
    /// Positions of the slots in cohort order, fixing the RNG draw order.
    draw_order: Vec<usize>,
    sorted_entries: Vec<R>,
    sorted_exits: Vec<R>,
}

/// Builds the per-subject decomposition from a risk table and its cohort.
pub fn precompute_z<R: Real>(rt: &RiskTable<R>, cohort: &Cohort<R>) -> ZComponents<R> {
    let n = cohort.n();
    let f1 = aalen_johansen(rt, Cause::One);
    let f2 = aalen_johansen(rt, Cause::Two);

    // Event rows of the grid and a map from grid row to event index.
    let mut event_times = Vec::new();
    let mut event_index_of_row = vec![usize::MAX; rt.len()];
    for (k, row_index) in event_index_of_row.iter_mut().enumerate() {
        if rt.dn_total(k) > 0 {
            *row_index = event_times.len();
            event_times.push(rt.times()[k]);
        }
    }

    let mut raw = Vec::with_capacity(cohort.event_count());
    for (i, obs) in cohort.observations().iter().enumerate() {
        let cause = match obs.status {
            Status::Event(c) => c,
            Status::Censored => continue,
        };
        let k = rt
            .index_of(obs.exit)
            .expect("risk table inconsistent with cohort");
        let y = R::of_usize(rt.at_risk()[k] as usize);
        let f1_left = if k == 0 {
            R::zero()
        } else {
            f1.values()[k - 1]
        };
        let f2_left = if k == 0 {
            R::zero()
        } else {
            f2.values()[k - 1]
        };
        let (slot, coef_const) = match cause {
            Cause::One => (i, (R::one() - f2_left) / y),
            Cause::Two => (n + i, f1_left / y),
        };
        raw.push(ZSlot {
            slot,
            event_index: event_index_of_row[k],
            coef_const,
            coef_f1: -R::one() / y,
            at_risk: rt.at_risk()[k],
        });
    }

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&p| (raw[p].event_index, raw[p].slot));
    let slots: Vec<ZSlot<R>> = order.iter().map(|&p| raw[p]).collect();
    let mut draw_order = vec![0usize; raw.len()];
    for (sorted_pos, &raw_pos) in order.iter().enumerate() {
        draw_order[raw_pos] = sorted_pos;
    }

    let mut bucket_offsets = vec![0usize; event_times.len() + 1];
    for s in &slots {
        bucket_offsets[s.event_index + 1] += 1;
    }
    for e in 0..event_times.len() {
        bucket_offsets[e + 1] += bucket_offsets[e];
    }

    let mut sorted_entries: Vec<R> = cohort.observations().iter().map(|o| o.entry).collect();
    sorted_entries.sort_by(|a, b| a.total_order(*b));
    let mut sorted_exits: Vec<R> = cohort.observations().iter().map(|o| o.exit).collect();
    sorted_exits.sort_by(|a, b| a.total_order(*b));

    ZComponents {
        n,
        f1,
        event_times,
        slots,
        bucket_offsets,
        draw_order,
        sorted_entries,
        sorted_exits,
    }
}

impl<R: Real> ZComponents<R> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cause-1 CIF estimate of the cohort, on the full exit grid.
    pub fn f1(&self) -> &StepFunction<R> {
        &self.f1
    }

    /// Times carrying at least one event of either cause.
    pub fn event_times(&self) -> &[R] {
        &self.event_times
    }

    pub fn slots(&self) -> &[ZSlot<R>] {
        &self.slots
    }

    /// Largest observed exit time (events or censorings).
    pub fn last_exit(&self) -> Option<R> {
        self.sorted_exits.last().copied()
    }

    /// At-risk count just before an arbitrary time `t`.
    pub fn at_risk_at(&self, t: R) -> u32 {
        let entries = self.sorted_entries.partition_point(|&x| x < t);
        let exits = self.sorted_exits.partition_point(|&x| x < t);
        (entries - exits) as u32
    }

    /// `Z_i(s)` for the slot stored at `slots()[idx]`.
    pub fn z_value(&self, idx: usize, s: R) -> R {
        let slot = &self.slots[idx];
        if s < self.event_times[slot.event_index] {
            R::zero()
        } else {
            slot.coef_const + slot.coef_f1 * self.f1.eval(s)
        }
    }

    /// Number of event times within `[t1, t2]`.
    fn events_in(&self, t1: R, t2: R) -> usize {
        let lo = self.event_times.partition_point(|&x| x < t1);
        let hi = self.event_times.partition_point(|&x| x <= t2);
        hi - lo
    }

    /// Draws slot weights in cohort order; consumes the RNG exactly like
    /// [`crate::multipliers::draw_weights`] on the same data.
    fn draw_slot_weights_into<G: rand::Rng + ?Sized>(
        &self,
        scheme: MultiplierScheme,
        rng: &mut G,
        out: &mut [R],
    ) {
        for &pos in &self.draw_order {
            out[pos] = R::of(sample_weight(scheme, self.slots[pos].at_risk, rng));
        }
    }

    /// Copies the matching entries of a full `2n` weight vector onto the slots.
    fn slot_weights_from_draw(&self, draw: &WeightDraw<R>, out: &mut [R]) {
        for (pos, s) in self.slots.iter().enumerate() {
            out[pos] = draw.weights[s.slot];
        }
    }
}

/// Evaluation grid for an interval: the left endpoint followed by every
/// event time in `(t1, t2]`, together with the per-point slot cursor and
/// `F1` values.
#[derive(Debug, Clone)]
pub struct EvalGrid<R> {
    points: Vec<R>,
    /// Per point: number of event times `<=` that point.
    event_end: Vec<usize>,
    f1_at: Vec<R>,
    t2: R,
}

impl<R: Real> EvalGrid<R> {
    fn for_points(z: &ZComponents<R>, points: Vec<R>, t2: R) -> Self {
        let event_end = points
            .iter()
            .map(|&p| z.event_times.partition_point(|&x| x <= p))
            .collect();
        let f1_at = points.iter().map(|&p| z.f1.eval(p)).collect();
        EvalGrid {
            points,
            event_end,
            f1_at,
            t2,
        }
    }

    pub fn points(&self) -> &[R] {
        &self.points
    }

    /// `F1` estimate at each grid point.
    pub fn f1_values(&self) -> &[R] {
        &self.f1_at
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Right endpoint of the interval the grid was built for.
    pub fn t2(&self) -> R {
        self.t2
    }
}

fn check_interval<R: Real>(z: &ZComponents<R>, t1: R, t2: R) -> Result<()> {
    if !(t1.is_finite() && t2.is_finite()) || t1 > t2 || t1 < R::zero() {
        return Err(Error::Inadmissible(format!(
            "need 0 <= t1 <= t2, got [{t1}, {t2}]"
        )));
    }
    let last = z
        .last_exit()
        .ok_or_else(|| Error::Inadmissible("empty cohort".into()))?;
    if t2 > last {
        return Err(Error::Inadmissible(format!(
            "t2 = {t2} beyond the last observed time {last}"
        )));
    }
    Ok(())
}

/// Builds the evaluation grid `{t1} + event times in (t1, t2]`.
pub fn eval_grid<R: Real>(z: &ZComponents<R>, t1: R, t2: R) -> Result<EvalGrid<R>> {
    check_interval(z, t1, t2)?;
    let mut points = vec![t1];
    let lo = z.event_times.partition_point(|&x| x <= t1);
    let hi = z.event_times.partition_point(|&x| x <= t2);
    points.extend_from_slice(&z.event_times[lo..hi]);
    Ok(EvalGrid::for_points(z, points, t2))
}

/// Union evaluation grid for a two-sample comparison.
#[derive(Debug, Clone)]
pub struct TwoSampleEval<R> {
    pub e1: EvalGrid<R>,
    pub e2: EvalGrid<R>,
}

/// Builds the shared grid `{t1} + union of both groups' event times in (t1, t2]`.
pub fn two_sample_eval<R: Real>(
    z1: &ZComponents<R>,
    z2: &ZComponents<R>,
    t1: R,
    t2: R,
) -> Result<TwoSampleEval<R>> {
    check_interval(z1, t1, t2)?;
    check_interval(z2, t1, t2)?;
    let mut points = vec![t1];
    let take = |z: &ZComponents<R>| {
        let lo = z.event_times.partition_point(|&x| x <= t1);
        let hi = z.event_times.partition_point(|&x| x <= t2);
        z.event_times[lo..hi].to_vec()
    };
    let (a, b) = (take(z1), take(z2));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => {
                if x <= y {
                    i += 1;
                    if x == y {
                        j += 1;
                    }
                    x
                } else {
                    j += 1;
                    y
                }
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if points.last() != Some(&next) {
            points.push(next);
        }
    }
    Ok(TwoSampleEval {
        e1: EvalGrid::for_points(z1, points.clone(), t2),
        e2: EvalGrid::for_points(z2, points, t2),
    })
}

/// Writes `scale * sum_i w_i Z_i(point_j)` for all grid points in one sweep.
fn eval_weights_into<R: Real>(
    z: &ZComponents<R>,
    w: &[R],
    eval: &EvalGrid<R>,
    scale: R,
    out: &mut [R],
) {
    let mut const_acc = R::zero();
    let mut f1_acc = R::zero();
    let mut cursor = 0usize;
    for (j, &end) in eval.event_end.iter().enumerate() {
        let slot_end = z.bucket_offsets[end];
        while cursor < slot_end {
            let s = &z.slots[cursor];
            let wv = w[cursor];
            const_acc = const_acc + wv * s.coef_const;
            f1_acc = f1_acc + wv * s.coef_f1;
            cursor += 1;
        }
        out[j] = scale * (const_acc + eval.f1_at[j] * f1_acc);
    }
}

/// Bootstrap paths evaluated on an interval grid.
///
/// Row `r` holds replicate `r`, generated from ChaCha stream `r + 1` of the
/// stored seed; evaluation order never affects the result.
#[derive(Debug, Clone)]
pub struct BootstrapPaths<R> {
    grid: Vec<R>,
    values: Vec<R>,
    replicates: usize,
    seed: u64,
}

impl<R: Real> BootstrapPaths<R> {
    pub fn grid(&self) -> &[R] {
        &self.grid
    }

    pub fn n_replicates(&self) -> usize {
        self.replicates
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// ChaCha stream id of replicate `rep`.
    pub fn stream_id(&self, rep: usize) -> u64 {
        rep as u64 + 1
    }

    pub fn row(&self, rep: usize) -> &[R] {
        let g = self.grid.len();
        &self.values[rep * g..(rep + 1) * g]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[R]> {
        self.values.chunks(self.grid.len())
    }

    /// New path set with every row multiplied pointwise by `weights`
    /// (one weight per grid point).
    pub fn map_pointwise(&self, weights: &[R]) -> BootstrapPaths<R> {
        assert_eq!(weights.len(), self.grid.len());
        let values = self
            .values
            .chunks(self.grid.len())
            .flat_map(|row| row.iter().zip(weights).map(|(&v, &w)| v * w))
            .collect();
        BootstrapPaths {
            grid: self.grid.clone(),
            values,
            replicates: self.replicates,
            seed: self.seed,
        }
    }
}

fn require_events_in<R: Real>(z: &ZComponents<R>, t1: R, t2: R, label: &str) -> Result<()> {
    if t1 < t2 && z.events_in(t1, t2) == 0 {
        return Err(Error::Inadmissible(format!(
            "no events in interval [{t1}, {t2}]{label}"
        )));
    }
    if z.event_times.partition_point(|&x| x <= t2) == 0 {
        return Err(Error::Inadmissible(format!(
            "no events at or before t2 = {t2}{label}"
        )));
    }
    Ok(())
}

/// One-sample bootstrap paths `sqrt(n) * sum_i D_i Z_i` on `[t1, t2]`.
pub fn one_sample_paths<R: Real>(
    z: &ZComponents<R>,
    scheme: MultiplierScheme,
    replicates: usize,
    interval: (R, R),
    seed: u64,
) -> Result<BootstrapPaths<R>> {
    let eval = eval_grid(z, interval.0, interval.1)?;
    require_events_in(z, interval.0, interval.1, "")?;
    Ok(one_sample_paths_on(z, &eval, scheme, replicates, seed))
}

/// Same as [`one_sample_paths`] on a prebuilt grid.
pub fn one_sample_paths_on<R: Real>(
    z: &ZComponents<R>,
    eval: &EvalGrid<R>,
    scheme: MultiplierScheme,
    replicates: usize,
    seed: u64,
) -> BootstrapPaths<R> {
    let g = eval.len();
    let scale = R::of_usize(z.n).sqrt();
    let mut values = vec![R::zero(); replicates * g];
    values.par_chunks_mut(g).enumerate().for_each(|(rep, row)| {
        let mut rng = replicate_stream(seed, rep);
        let mut w = vec![R::zero(); z.slots.len()];
        z.draw_slot_weights_into(scheme, &mut rng, &mut w);
        eval_weights_into(z, &w, eval, scale, row);
    });
    BootstrapPaths {
        grid: eval.points.clone(),
        values,
        replicates,
        seed,
    }
}

/// Evaluates one path per supplied weight draw (deterministic injection).
pub fn one_sample_paths_from_draws<R: Real>(
    z: &ZComponents<R>,
    draws: &[WeightDraw<R>],
    interval: (R, R),
) -> Result<BootstrapPaths<R>> {
    if draws.iter().any(|d| d.weights.len() != 2 * z.n) {
        return Err(Error::Invalid(format!(
            "weight draws must have {} slots",
            2 * z.n
        )));
    }
    let eval = eval_grid(z, interval.0, interval.1)?;
    let g = eval.len();
    let scale = R::of_usize(z.n).sqrt();
    let mut values = vec![R::zero(); draws.len() * g];
    for (draw, row) in draws.iter().zip(values.chunks_mut(g)) {
        let mut w = vec![R::zero(); z.slots.len()];
        z.slot_weights_from_draw(draw, &mut w);
        eval_weights_into(z, &w, &eval, scale, row);
    }
    Ok(BootstrapPaths {
        grid: eval.points.clone(),
        values,
        replicates: draws.len(),
        seed: 0,
    })
}

/// Applies `f(grid, path)` to each replicate path without retaining the paths.
pub fn one_sample_functionals_on<R, T, F>(
    z: &ZComponents<R>,
    eval: &EvalGrid<R>,
    scheme: MultiplierScheme,
    replicates: usize,
    seed: u64,
    f: F,
) -> Vec<T>
where
    R: Real,
    T: Send,
    F: Fn(&[R], &[R]) -> T + Sync,
{
    let g = eval.len();
    let scale = R::of_usize(z.n).sqrt();
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_stream(seed, rep);
            let mut w = vec![R::zero(); z.slots.len()];
            z.draw_slot_weights_into(scheme, &mut rng, &mut w);
            let mut row = vec![R::zero(); g];
            eval_weights_into(z, &w, eval, scale, &mut row);
            f(&eval.points, &row)
        })
        .collect()
}

/// Optional conservative reweighting of the two-sample bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjust {
    /// Use the weights as drawn.
    None,
    /// Multiply by `1 + |n1 - n2| / (n1 n2)`.
    Count,
    /// Multiply by `1 + |Y1(t2) - Y2(t2)| / (Y1(t2) Y2(t2))`.
    Risk,
}

impl Adjust {
    pub fn name(self) -> &'static str {
        match self {
            Adjust::None => "none",
            Adjust::Count => "count",
            Adjust::Risk => "risk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Adjust::None),
            "count" => Some(Adjust::Count),
            "risk" => Some(Adjust::Risk),
            _ => None,
        }
    }
}

/// Resolves the adjustment into its multiplicative factor.
pub fn adjust_factor<R: Real>(
    adjust: Adjust,
    z1: &ZComponents<R>,
    z2: &ZComponents<R>,
    t2: R,
) -> Result<R> {
    match adjust {
        Adjust::None => Ok(R::one()),
        Adjust::Count => {
            let (n1, n2) = (z1.n as f64, z2.n as f64);
            Ok(R::of(1.0 + (n1 - n2).abs() / (n1 * n2)))
        }
        Adjust::Risk => {
            let y1 = z1.at_risk_at(t2) as f64;
            let y2 = z2.at_risk_at(t2) as f64;
            if y1 == 0.0 || y2 == 0.0 {
                return Err(Error::Inadmissible(format!(
                    "risk adjustment undefined: no subjects at risk at t2 = {t2}"
                )));
            }
            Ok(R::of(1.0 + (y1 - y2).abs() / (y1 * y2)))
        }
    }
}

fn two_sample_scale<R: Real>(z1: &ZComponents<R>, z2: &ZComponents<R>) -> R {
    let (n1, n2) = (R::of_usize(z1.n), R::of_usize(z2.n));
    (n1 * n2 / (n1 + n2)).sqrt()
}

/// Two-sample bootstrap paths
/// `factor * sqrt(n1 n2 / n) * (sum D1 Z1 + sum D2 Z2)` on the union grid.
///
/// Group-1 weights are drawn before group-2 weights from the same replicate
/// stream.
pub fn two_sample_paths<R: Real>(
    z1: &ZComponents<R>,
    z2: &ZComponents<R>,
    scheme: MultiplierScheme,
    replicates: usize,
    interval: (R, R),
    seed: u64,
    adjust: Adjust,
) -> Result<BootstrapPaths<R>> {
    let eval = two_sample_eval(z1, z2, interval.0, interval.1)?;
    require_events_in(z1, interval.0, interval.1, " (group 1)")?;
    require_events_in(z2, interval.0, interval.1, " (group 2)")?;
    let factor = adjust_factor(adjust, z1, z2, interval.1)?;
    let scale = factor * two_sample_scale(z1, z2);

    let g = eval.e1.len();
    let mut values = vec![R::zero(); replicates * g];
    values.par_chunks_mut(g).enumerate().for_each(|(rep, row)| {
        let mut rng = replicate_stream(seed, rep);
        let mut w1 = vec![R::zero(); z1.slots.len()];
        let mut w2 = vec![R::zero(); z2.slots.len()];
        z1.draw_slot_weights_into(scheme, &mut rng, &mut w1);
        z2.draw_slot_weights_into(scheme, &mut rng, &mut w2);
        let mut part = vec![R::zero(); g];
        eval_weights_into(z1, &w1, &eval.e1, scale, row);
        eval_weights_into(z2, &w2, &eval.e2, scale, &mut part);
        for (a, b) in row.iter_mut().zip(&part) {
            *a = *a + *b;
        }
    });
    Ok(BootstrapPaths {
        grid: eval.e1.points.clone(),
        values,
        replicates,
        seed,
    })
}

/// Streaming variant of [`two_sample_paths`]: applies `f(grid, path)` per
/// replicate.
#[allow(clippy::too_many_arguments)]
pub fn two_sample_functionals_on<R, T, F>(
    z1: &ZComponents<R>,
    z2: &ZComponents<R>,
    eval: &TwoSampleEval<R>,
    scheme: MultiplierScheme,
    replicates: usize,
    seed: u64,
    factor: R,
    f: F,
) -> Vec<T>
where
    R: Real,
    T: Send,
    F: Fn(&[R], &[R]) -> T + Sync,
{
    let scale = factor * two_sample_scale(z1, z2);
    let g = eval.e1.len();
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_stream(seed, rep);
            let mut w1 = vec![R::zero(); z1.slots.len()];
            let mut w2 = vec![R::zero(); z2.slots.len()];
            z1.draw_slot_weights_into(scheme, &mut rng, &mut w1);
            z2.draw_slot_weights_into(scheme, &mut rng, &mut w2);
            let mut row = vec![R::zero(); g];
            let mut part = vec![R::zero(); g];
            eval_weights_into(z1, &w1, &eval.e1, scale, &mut row);
            eval_weights_into(z2, &w2, &eval.e2, scale, &mut part);
            for (a, b) in row.iter_mut().zip(&part) {
                *a = *a + *b;
            }
            f(&eval.e1.points, &row)
        })
        .collect()
}

fn scheme_variance<R: Real>(scheme: MultiplierScheme, at_risk: u32) -> R {
    match scheme {
        MultiplierScheme::StandardNormal | MultiplierScheme::CenteredPoisson => R::one(),
        MultiplierScheme::WeirdBinomial => R::one() - R::one() / R::of_usize(at_risk as usize),
    }
}

/// Closed-form conditional covariance of the bootstrap process:
/// `n * sum_i sigma_i^2 Z_i(s) Z_i(t)` with the scheme's per-slot variances.
pub fn bootstrap_covariance<R: Real>(
    z: &ZComponents<R>,
    scheme: MultiplierScheme,
    s: R,
    t: R,
) -> R {
    let f1_s = z.f1.eval(s);
    let f1_t = z.f1.eval(t);
    let cut = if s <= t { s } else { t };
    let mut acc = R::zero();
    for slot in &z.slots {
        if z.event_times[slot.event_index] > cut {
            // Slots are sorted by event index, so nothing later contributes.
            break;
        }
        let zs = slot.coef_const + slot.coef_f1 * f1_s;
        let zt = slot.coef_const + slot.coef_f1 * f1_t;
        acc = acc + scheme_variance::<R>(scheme, slot.at_risk) * zs * zt;
    }
    R::of_usize(z.n) * acc
}

/// Conditional variance of the bootstrap process at every grid point,
/// computed with running sums (one sweep over the slots).
pub fn bootstrap_variance_curve<R: Real>(
    z: &ZComponents<R>,
    scheme: MultiplierScheme,
    eval: &EvalGrid<R>,
) -> Vec<R> {
    // Var(u) = n * [sum s2 c^2 + 2 F1(u) sum s2 c d + F1(u)^2 sum s2 d^2]
    // over slots with jump time <= u.
    let n = R::of_usize(z.n);
    let mut cc = R::zero();
    let mut cd = R::zero();
    let mut dd = R::zero();
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(eval.len());
    let two = R::of(2.0);
    for (j, &end) in eval.event_end.iter().enumerate() {
        let slot_end = z.bucket_offsets[end];
        while cursor < slot_end {
            let s = &z.slots[cursor];
            let v = scheme_variance::<R>(scheme, s.at_risk);
            cc = cc + v * s.coef_const * s.coef_const;
            cd = cd + v * s.coef_const * s.coef_f1;
            dd = dd + v * s.coef_f1 * s.coef_f1;
            cursor += 1;
        }
        let f = eval.f1_at[j];
        out.push(n * (cc + two * f * cd + f * f * dd));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_risk_table, Cohort, Observation};
    use crate::error::Result as CrateResult;
    use crate::multipliers::draw_weights;
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

    /// Brute-force `X_{j;i}(s)` by summing the defining integral over the grid.
    fn naive_z(rt: &RiskTable<f64>, cohort: &Cohort<f64>, subject: usize, s: f64) -> f64 {
        let f1 = aalen_johansen(rt, Cause::One);
        let f2 = aalen_johansen(rt, Cause::Two);
        let obs = &cohort.observations()[subject];
        let cause = match obs.status {
            Status::Event(c) => c,
            Status::Censored => return 0.0,
        };
        let mut total = 0.0;
        for k in 0..rt.len() {
            let t = rt.times()[k];
            if t > s {
                break;
            }
            if t != obs.exit {
                continue;
            }
            let y = rt.at_risk()[k] as f64;
            let f1_left = if k == 0 { 0.0 } else { f1.values()[k - 1] };
            let f2_left = if k == 0 { 0.0 } else { f2.values()[k - 1] };
            total += match cause {
                Cause::One => ((1.0 - f2_left) - f1.eval(s)) / y,
                Cause::Two => (f1_left - f1.eval(s)) / y,
            };
        }
        total
    }

    /// Naive path evaluation: direct sum over all `2n` slots per grid point.
    /// A subject's single active slot carries its `Z`; every other slot is
    /// weighted zero.
    fn naive_path(
        rt: &RiskTable<f64>,
        cohort: &Cohort<f64>,
        draw: &WeightDraw<f64>,
        points: &[f64],
    ) -> Vec<f64> {
        let n = cohort.n();
        let scale = (n as f64).sqrt();
        points
            .iter()
            .map(|&s| {
                let mut acc = 0.0;
                for i in 0..n {
                    let zi = naive_z(rt, cohort, i, s);
                    let active_slot = match cohort.observations()[i].status {
                        Status::Event(Cause::One) => i,
                        Status::Event(Cause::Two) => n + i,
                        Status::Censored => continue,
                    };
                    acc += draw.weights[active_slot] * zi;
                }
                scale * acc
            })
            .collect()
    }

    fn random_cohort(n: usize, seed: u64) -> Cohort<f64> {
        use rand::Rng;
        let mut rng = base_stream(seed);
        let rows: Vec<Observation<f64>> = (0..n)
            .map(|i| {
                let exit: f64 = 0.05 + 5.0 * rng.random::<f64>();
                let entry = if rng.random::<f64>() < 0.2 {
                    exit * 0.5 * rng.random::<f64>()
                } else {
                    0.0
                };
                let status = match rng.random_range(0..4u32) {
                    0 => Status::Censored,
                    1 | 2 => Status::Event(Cause::One),
                    _ => Status::Event(Cause::Two),
                };
                Observation {
                    id: i.to_string(),
                    entry,
                    exit,
                    status,
                    group: 1,
                }
            })
            .collect();
        crate::data::break_ties(&Cohort::new(rows).unwrap())
    }

    #[test]
    fn z_coefficients_match_hand_computation() {
        // Exits (1, 2, 3), causes (1, 2, 0): the cause-1 slot of subject 0 has
        // coef_const = S2(1-) / Y(1) = 1/3 and coef_f1 = -1/3.
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 0)]);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let slot0 = z
            .slots()
            .iter()
            .find(|s| s.slot == 0)
            .expect("subject 0 active");
        assert!((slot0.coef_const - 1.0 / 3.0).abs() < 1e-15);
        assert!((slot0.coef_f1 + 1.0 / 3.0).abs() < 1e-15);
        // Subject 1 (cause 2 at t = 2): coef_const = F1(2-) / Y(2) = (1/3) / 2.
        let slot1 = z.slots().iter().find(|s| s.slot == c.n() + 1).unwrap();
        assert!((slot1.coef_const - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn censored_subjects_have_no_slots() {
        let c = cohort(&[(1.0, 1), (2.0, 0), (3.0, 2)]);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        assert_eq!(z.slots().len(), 2);
        assert!(z.slots().iter().all(|s| s.slot != 1 && s.slot != c.n() + 1));
    }

    #[test]
    fn z_reconstruction_matches_defining_integral() {
        let c = random_cohort(60, 17);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let beyond = z.last_exit().unwrap() + 1.0;
        for (idx, slot) in z.slots().iter().enumerate() {
            let subject = slot.slot % c.n();
            for &s in &[0.3, 1.1, 2.7, beyond] {
                let direct = naive_z(&rt, &c, subject, s);
                assert!(
                    (z.z_value(idx, s) - direct).abs() < 1e-14,
                    "slot {idx} at s = {s}"
                );
            }
        }
    }

    #[test]
    fn prefix_sum_paths_match_naive_evaluation() -> CrateResult<()> {
        let c = random_cohort(50, 23);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let interval = (0.4, 4.0);
        let b = 8;
        let paths = one_sample_paths(&z, MultiplierScheme::WeirdBinomial, b, interval, 99)?;
        for rep in 0..b {
            let mut rng = replicate_stream(99, rep);
            let draw = draw_weights(MultiplierScheme::WeirdBinomial, &rt, &c, &mut rng);
            let naive = naive_path(&rt, &c, &draw, paths.grid());
            for (a, b) in paths.row(rep).iter().zip(&naive) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
        Ok(())
    }

    #[test]
    fn zero_weights_give_zero_paths_and_doubling_is_linear() -> CrateResult<()> {
        let c = random_cohort(40, 5);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let mut rng = base_stream(3);
        let draw = draw_weights(MultiplierScheme::StandardNormal, &rt, &c, &mut rng);
        let zero = WeightDraw {
            weights: vec![0.0; draw.weights.len()],
            active: draw.active.clone(),
        };
        let doubled = WeightDraw {
            weights: draw.weights.iter().map(|w| 2.0 * w).collect(),
            active: draw.active.clone(),
        };
        let paths = one_sample_paths_from_draws(&z, &[draw, zero, doubled], (0.2, 4.0))?;
        for (&single, (&zero_v, &double_v)) in paths
            .row(0)
            .iter()
            .zip(paths.row(1).iter().zip(paths.row(2)))
        {
            assert_eq!(zero_v, 0.0);
            assert!((double_v - 2.0 * single).abs() < 1e-12);
        }
        Ok(())
    }

    #[test]
    fn paths_are_deterministic_and_thread_independent() -> CrateResult<()> {
        let c = random_cohort(80, 8);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let run = || one_sample_paths(&z, MultiplierScheme::CenteredPoisson, 16, (0.3, 4.5), 7);
        let base = run()?;
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = pool1.install(run)?;
        let b = pool4.install(run)?;
        assert_eq!(base.values, a.values);
        assert_eq!(base.values, b.values);
        Ok(())
    }

    #[test]
    fn interval_errors() {
        let c = cohort(&[(1.0, 1), (2.0, 0)]);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        assert!(one_sample_paths(&z, MultiplierScheme::StandardNormal, 2, (3.0, 1.0), 1).is_err());
        assert!(one_sample_paths(&z, MultiplierScheme::StandardNormal, 2, (0.5, 9.0), 1).is_err());
        // No events inside (1.5, 2.0]: the only event is at t = 1.
        assert!(matches!(
            one_sample_paths(&z, MultiplierScheme::StandardNormal, 2, (1.5, 2.0), 1),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn two_sample_identical_groups_match_direct_expression() -> CrateResult<()> {
        let c = random_cohort(30, 77);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let b = 4;
        let seed = 13;
        let interval = (0.3, 4.0);
        let two = two_sample_paths(
            &z,
            &z,
            MultiplierScheme::StandardNormal,
            b,
            interval,
            seed,
            Adjust::None,
        )?;

        // Direct evaluation: sqrt(n1 n2 / n) * (sum1 + sum2) where both sums
        // reuse the replicate stream in draw order (group 1 first).
        let n = c.n() as f64;
        let scale = (n * n / (2.0 * n)).sqrt();
        for rep in 0..b {
            let mut rng = replicate_stream(seed, rep);
            let d1 = draw_weights(MultiplierScheme::StandardNormal, &rt, &c, &mut rng);
            let d2 = draw_weights(MultiplierScheme::StandardNormal, &rt, &c, &mut rng);
            let naive1 = naive_path(&rt, &c, &d1, two.grid());
            let naive2 = naive_path(&rt, &c, &d2, two.grid());
            for ((a, x), y) in two.row(rep).iter().zip(&naive1).zip(&naive2) {
                // naive_path already multiplies by sqrt(n); rescale.
                let expect = scale * ((x + y) / n.sqrt());
                assert!((a - expect).abs() < 1e-10, "{a} vs {expect}");
            }
        }
        Ok(())
    }

    #[test]
    fn adjustment_factors() {
        let c1 = random_cohort(100, 1);
        let c2 = random_cohort(200, 2);
        let z1 = precompute_z(&build_risk_table(&c1), &c1);
        let z2 = precompute_z(&build_risk_table(&c2), &c2);
        assert_eq!(adjust_factor(Adjust::None, &z1, &z2, 2.0).unwrap(), 1.0);
        let f = adjust_factor(Adjust::Count, &z1, &z2, 2.0).unwrap();
        assert!((f - 1.005).abs() < 1e-12);
        // Equal sizes make the count adjustment a no-op.
        let f_eq = adjust_factor(Adjust::Count, &z1, &z1, 2.0).unwrap();
        assert_eq!(f_eq, 1.0);
        let y1 = z1.at_risk_at(2.0) as f64;
        let y2 = z2.at_risk_at(2.0) as f64;
        let fr = adjust_factor(Adjust::Risk, &z1, &z2, 2.0).unwrap();
        assert!((fr - (1.0 + (y1 - y2).abs() / (y1 * y2))).abs() < 1e-12);
    }

    #[test]
    fn covariance_curve_matches_pointwise_covariance() -> CrateResult<()> {
        let c = random_cohort(70, 31);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let eval = eval_grid(&z, 0.2, 4.0)?;
        for scheme in [
            MultiplierScheme::StandardNormal,
            MultiplierScheme::WeirdBinomial,
        ] {
            let curve = bootstrap_variance_curve(&z, scheme, &eval);
            for (j, &u) in eval.points().iter().enumerate() {
                let direct = bootstrap_covariance(&z, scheme, u, u);
                assert!(
                    (curve[j] - direct).abs() <= 1e-12 * (1.0 + direct.abs()),
                    "{scheme:?} at {u}: {} vs {direct}",
                    curve[j]
                );
            }
        }
        Ok(())
    }

    #[test]
    fn covariance_before_first_event_is_zero() {
        let c = cohort(&[(1.0, 1), (2.0, 2), (3.0, 0)]);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        assert_eq!(
            bootstrap_covariance(&z, MultiplierScheme::StandardNormal, 0.5, 2.0),
            0.0
        );
    }

    #[test]
    fn normal_covariance_equals_unit_variance_sum() {
        let c = random_cohort(25, 3);
        let rt = build_risk_table(&c);
        let z = precompute_z(&rt, &c);
        let (s, t) = (1.0, 3.0);
        let direct: f64 = (0..z.slots().len())
            .map(|i| z.z_value(i, s) * z.z_value(i, t))
            .sum::<f64>()
            * c.n() as f64;
        let cov = bootstrap_covariance(&z, MultiplierScheme::StandardNormal, s, t);
        assert!((cov - direct).abs() < 1e-12);
    }
}
