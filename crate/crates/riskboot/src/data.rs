//! Observation model for right-censored, left-truncated competing-risks data
//! and its counting-process representation.
//!
//! A subject enters the study at `entry` (0 unless left-truncated), leaves at
//! `exit`, and its [`Status`] records whether the exit was a censoring or an
//! event of cause 1 or 2. [`RiskTable`] turns a cohort into the event grid
//! with at-risk counts `Y(t)` (subjects with `entry < t <= exit`) and
//! cause-specific event counts `dN1`, `dN2`. Every estimator downstream works
//! on that grid; whenever `Y` appears in a denominator the `0/0 := 0`
//! convention applies.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One of the two competing event causes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cause {
    One,
    Two,
}

impl Cause {
    pub fn code(self) -> u8 {
        match self {
            Cause::One => 1,
            Cause::Two => 2,
        }
    }
}

/// Outcome recorded at a subject's exit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Censored,
    Event(Cause),
}

impl Status {
    /// Status from the integer code used in input files: 0, 1 or 2.
    pub fn from_code(code: i64) -> Option<Status> {
        match code {
            0 => Some(Status::Censored),
            1 => Some(Status::Event(Cause::One)),
            2 => Some(Status::Event(Cause::Two)),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Status::Censored => 0,
            Status::Event(c) => c.code(),
        }
    }

    pub fn is_event(self) -> bool {
        matches!(self, Status::Event(_))
    }

    pub fn cause(self) -> Option<Cause> {
        match self {
            Status::Censored => None,
            Status::Event(c) => Some(c),
        }
    }
}

/// One subject: entry time (left truncation), exit time, outcome, group.
#[derive(Debug, Clone)]
pub struct Observation<R> {
    pub id: String,
    pub entry: R,
    pub exit: R,
    pub status: Status,
    pub group: u8,
}

/// A validated collection of observations.
#[derive(Debug, Clone)]
pub struct Cohort<R> {
    observations: Vec<Observation<R>>,
}

impl<R: Real> Cohort<R> {
    /// Validates every observation: finite times, `entry >= 0`,
    /// `exit > entry`, group in {1, 2}.
    pub fn new(observations: Vec<Observation<R>>) -> Result<Self> {
        for obs in &observations {
            if !obs.entry.is_finite() || !obs.exit.is_finite() {
                return Err(Error::Invalid(format!(
                    "subject {}: non-finite entry or exit time",
                    obs.id
                )));
            }
            if obs.entry < R::zero() {
                return Err(Error::Invalid(format!(
                    "subject {}: entry {} < 0",
                    obs.id, obs.entry
                )));
            }
            if obs.exit <= obs.entry {
                return Err(Error::Invalid(format!(
                    "subject {}: exit {} <= entry {}",
                    obs.id, obs.exit, obs.entry
                )));
            }
            if obs.group != 1 && obs.group != 2 {
                return Err(Error::Invalid(format!(
                    "subject {}: group {} not in {{1, 2}}",
                    obs.id, obs.group
                )));
            }
        }
        Ok(Cohort { observations })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation<R>] {
        &self.observations
    }

    /// Number of subjects with an observed event of either cause.
    pub fn event_count(&self) -> usize {
        self.observations
            .iter()
            .filter(|o| o.status.is_event())
            .count()
    }

    /// Whether any two subjects share an exit time.
    pub fn has_tied_exits(&self) -> bool {
        let mut exits: Vec<R> = self.observations.iter().map(|o| o.exit).collect();
        exits.sort_by(|a, b| a.total_order(*b));
        exits.windows(2).any(|w| w[0] == w[1])
    }

    /// Split into the group-1 and group-2 sub-cohorts.
    pub fn split_by_group(&self) -> (Cohort<R>, Cohort<R>) {
        let (g1, g2) = self
            .observations
            .iter()
            .cloned()
            .partition(|o| o.group == 1);
        (Cohort { observations: g1 }, Cohort { observations: g2 })
    }

    /// Number of subjects at risk just before `t`: `#{entry < t <= exit}`.
    pub fn at_risk_at(&self, t: R) -> u32 {
        self.observations
            .iter()
            .filter(|o| o.entry < t && t <= o.exit)
            .count() as u32
    }
}

/// Column names used to resolve the input header (matched case-insensitively).
///
/// `time` and `status` are required in the file; the others fall back to
/// defaults (`entry = 0`, `group = 1`, generated ids) when absent.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub id: String,
    pub entry: String,
    pub time: String,
    pub status: String,
    pub group: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            entry: "entry".into(),
            time: "time".into(),
            status: "status".into(),
            group: "group".into(),
        }
    }
}

/// Reads a cohort from a CSV file (header required).
pub fn ingest_csv<R: Real>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Cohort<R>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(file, schema)
}

/// Reads a cohort from any CSV source (header required).
pub fn parse_csv<R: Real>(reader: impl Read, schema: &CsvSchema) -> Result<Cohort<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Invalid(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Invalid("empty file: no header row".into()));
    }

    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let id_col = find(&schema.id);
    let entry_col = find(&schema.entry);
    let time_col = find(&schema.time)
        .ok_or_else(|| Error::Invalid(format!("missing required column '{}'", schema.time)))?;
    let status_col = find(&schema.status)
        .ok_or_else(|| Error::Invalid(format!("missing required column '{}'", schema.status)))?;
    let group_col = find(&schema.group);

    let mut observations = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(row_idx as u64 + 2),
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(row_idx as u64 + 2);
        let malformed = |message: String| Error::Malformed { line, message };

        let get = |col: usize, name: &str| {
            record
                .get(col)
                .ok_or_else(|| malformed(format!("missing field '{name}'")))
        };

        let parse_f64 = |text: &str, name: &str| {
            text.parse::<f64>()
                .map_err(|_| malformed(format!("cannot parse {name} '{text}' as a number")))
        };

        let time_text = get(time_col, "time")?;
        let time = parse_f64(time_text, "time")?;

        let entry = match entry_col {
            Some(c) => {
                let text = get(c, "entry")?;
                if text.is_empty() {
                    0.0
                } else {
                    parse_f64(text, "entry")?
                }
            }
            None => 0.0,
        };

        let status_text = get(status_col, "status")?;
        let status_code = status_text
            .parse::<i64>()
            .map_err(|_| malformed(format!("cannot parse status '{status_text}' as an integer")))?;
        let status = Status::from_code(status_code)
            .ok_or_else(|| malformed(format!("status {status_code} not in {{0, 1, 2}}")))?;

        let group = match group_col {
            Some(c) => {
                let text = get(c, "group")?;
                if text.is_empty() {
                    1
                } else {
                    let g = text.parse::<i64>().map_err(|_| {
                        malformed(format!("cannot parse group '{text}' as an integer"))
                    })?;
                    if g != 1 && g != 2 {
                        return Err(malformed(format!("group {g} not in {{1, 2}}")));
                    }
                    g as u8
                }
            }
            None => 1,
        };

        let id = match id_col {
            Some(c) => {
                let text = get(c, "id")?;
                if text.is_empty() {
                    (row_idx + 1).to_string()
                } else {
                    text.to_string()
                }
            }
            None => (row_idx + 1).to_string(),
        };

        if !time.is_finite() || !entry.is_finite() {
            return Err(malformed("non-finite time or entry".into()));
        }
        if entry < 0.0 {
            return Err(malformed(format!("entry {entry} < 0")));
        }
        if time <= entry {
            return Err(malformed(format!("exit {time} <= entry {entry}")));
        }

        observations.push(Observation {
            id,
            entry: R::of(entry),
            exit: R::of(time),
            status,
            group,
        });
    }

    if observations.is_empty() {
        return Err(Error::Invalid("empty file: no data rows".into()));
    }
    Cohort::new(observations)
}

/// Breaks tied exit times deterministically.
///
/// Tied times `t` become `t + k * eps` for `k = 0, 1, 2, ...` in ascending
/// input order, with `eps` = half the smallest positive gap between distinct
/// original times divided by the largest tie-group size (if all exits are
/// equal, the gap falls back to the time itself). The jitter never reaches
/// the next distinct time, so the relative order of distinct times and the
/// multiset of causes are preserved. Idempotent on tie-free cohorts.
pub fn break_ties<R: Real>(cohort: &Cohort<R>) -> Cohort<R> {
    let obs = cohort.observations();
    let n = obs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| obs[a].exit.total_order(obs[b].exit).then(a.cmp(&b)));

    // Tie groups in the sorted order; within a group indices are ascending.
    let mut groups: Vec<(R, Vec<usize>)> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some((t, members)) if *t == obs[i].exit => members.push(i),
            _ => groups.push((obs[i].exit, vec![i])),
        }
    }

    let max_group = groups.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    if max_group <= 1 {
        return cohort.clone();
    }

    let min_gap = groups
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .fold(None, |acc: Option<R>, gap| match acc {
            Some(g) if g <= gap => Some(g),
            _ => Some(gap),
        })
        // All exits equal: use the time itself as the gap (exit > entry >= 0).
        .unwrap_or(groups[0].0);

    let eps = min_gap / R::of(2.0) / R::of_usize(max_group);
    let mut observations = obs.to_vec();
    for (t, members) in &groups {
        for (k, &i) in members.iter().enumerate() {
            observations[i].exit = *t + R::of_usize(k) * eps;
        }
    }
    Cohort { observations }
}

/// Event grid with at-risk and cause-specific event counts.
///
/// One row per distinct exit time (events and censorings alike);
/// `at_risk[k] = #{entry < t_k <= exit}`.
#[derive(Debug, Clone)]
pub struct RiskTable<R> {
    times: Vec<R>,
    at_risk: Vec<u32>,
    dn1: Vec<u32>,
    dn2: Vec<u32>,
    sorted_entries: Vec<R>,
    sorted_exits: Vec<R>,
    n: usize,
}

/// Builds the event grid from a cohort (exits should already be distinct;
/// tied exits are grouped onto one row if present).
pub fn build_risk_table<R: Real>(cohort: &Cohort<R>) -> RiskTable<R> {
    let obs = cohort.observations();
    let n = obs.len();

    let mut sorted_entries: Vec<R> = obs.iter().map(|o| o.entry).collect();
    sorted_entries.sort_by(|a, b| a.total_order(*b));
    let mut sorted_exits: Vec<R> = obs.iter().map(|o| o.exit).collect();
    sorted_exits.sort_by(|a, b| a.total_order(*b));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| obs[a].exit.total_order(obs[b].exit).then(a.cmp(&b)));

    let mut times = Vec::with_capacity(n);
    let mut dn1 = Vec::with_capacity(n);
    let mut dn2 = Vec::with_capacity(n);
    for &i in &order {
        let t = obs[i].exit;
        if times.last() != Some(&t) {
            times.push(t);
            dn1.push(0);
            dn2.push(0);
        }
        let k = times.len() - 1;
        match obs[i].status {
            Status::Event(Cause::One) => dn1[k] += 1,
            Status::Event(Cause::Two) => dn2[k] += 1,
            Status::Censored => {}
        }
    }

    let count_lt = |v: &[R], t: R| v.partition_point(|&x| x < t);
    let at_risk = times
        .iter()
        .map(|&t| (count_lt(&sorted_entries, t) - count_lt(&sorted_exits, t)) as u32)
        .collect();

    RiskTable {
        times,
        at_risk,
        dn1,
        dn2,
        sorted_entries,
        sorted_exits,
        n,
    }
}

impl<R: Real> RiskTable<R> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Cohort size the table was built from.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn times(&self) -> &[R] {
        &self.times
    }

    pub fn at_risk(&self) -> &[u32] {
        &self.at_risk
    }

    pub fn dn1(&self) -> &[u32] {
        &self.dn1
    }

    pub fn dn2(&self) -> &[u32] {
        &self.dn2
    }

    /// Event count (either cause) at grid row `k`.
    pub fn dn_total(&self, k: usize) -> u32 {
        self.dn1[k] + self.dn2[k]
    }

    /// At-risk count just before an arbitrary time `t`.
    pub fn at_risk_at(&self, t: R) -> u32 {
        let entries = self.sorted_entries.partition_point(|&x| x < t);
        let exits = self.sorted_exits.partition_point(|&x| x < t);
        (entries - exits) as u32
    }

    /// Grid index of an exact exit time.
    pub fn index_of(&self, t: R) -> Option<usize> {
        let k = self.times.partition_point(|&x| x < t);
        (k < self.times.len() && self.times[k] == t).then_some(k)
    }

    pub fn last_time(&self) -> Option<R> {
        self.times.last().copied()
    }

    /// Number of grid rows carrying an event of either cause in `[t1, t2]`.
    pub fn events_in(&self, t1: R, t2: R) -> usize {
        self.times
            .iter()
            .zip(self.dn1.iter().zip(&self.dn2))
            .filter(|(&t, (&d1, &d2))| t1 <= t && t <= t2 && d1 + d2 > 0)
            .count()
    }
}
