//! Ground-truth checkers.
//!
//! [`OracleState`] replays a bank's command bus and keeps exact, unbounded
//! per-row disturbance with refresh resets. It shares no code with the
//! tracker: victim rows, weights and group mapping are computed here from
//! scratch.
//!
//! [`InequalityAuditor`] compares the tracker's estimated counts against
//! true per-row ACT counts, and [`BoundAuditor`] measures estimated-count
//! growth over sliding windows of RFM intervals. [`AuditedMithril`] wires
//! both around a live table.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::{applicable_bound, intervals_per_window, BlastRadius, MithrilConfig};
use crate::controller::{BankController, CommandKind, IssuedCommand};
use crate::error::{Error, Result};
use crate::timing::{Picos, TimingParams};
use crate::tracker::{ActOutcome, Mithril, MithrilTable, RefreshDecision, Row, RowTracker};
use crate::workload::ActEvent;

/// Largest bank the dense oracle arrays accept.
pub const MAX_ORACLE_ROWS: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    #[serde(rename = "FLIP_TH_REACHED")]
    FlipThReached,
    #[serde(rename = "INEQ1")]
    Ineq1,
    #[serde(rename = "INEQ2")]
    Ineq2,
    #[serde(rename = "BOUND_M")]
    BoundM,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::FlipThReached => "FLIP_TH_REACHED",
            ViolationKind::Ineq1 => "INEQ1",
            ViolationKind::Ineq2 => "INEQ2",
            ViolationKind::BoundM => "BOUND_M",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub bank: u32,
    pub row: Option<Row>,
    /// Ordinal of the ACT at (or after) which the condition first held.
    pub at_seq: u64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bank {} ", self.kind, self.bank)?;
        match self.row {
            Some(r) => write!(f, "row {r} ")?,
            None => f.write_str("table ")?,
        }
        write!(f, "at ACT #{}: {}", self.at_seq, self.detail)
    }
}

pub fn write_violations_csv<W: Write>(violations: &[Violation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "bank", "row", "at_seq", "detail"])?;
    for v in violations {
        w.write_record([
            v.kind.to_string(),
            v.bank.to_string(),
            v.row.map(|r| r.to_string()).unwrap_or_default(),
            v.at_seq.to_string(),
            v.detail.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<violations>", e))?;
    Ok(())
}

/// Disturbance weight at distance `d` from an aggressor, in quarter units so
/// that all arithmetic stays exact. Radius 3 uses 1, 0.5, 0.25 per side.
fn quarter_weight(blast_radius: BlastRadius, d: u32) -> u64 {
    match (blast_radius, d) {
        (_, 1) => 4,
        (BlastRadius::Three, 2) => 2,
        (BlastRadius::Three, 3) => 1,
        _ => 0,
    }
}

/// Exact per-row disturbance since each row's last refresh.
#[derive(Debug, Clone)]
pub struct OracleState {
    bank: u32,
    rows_per_bank: u32,
    refresh_groups: u32,
    radius: u32,
    blast_radius: BlastRadius,
    flip_quarters: u64,
    disturbance: Vec<u64>,
    act_since_refresh: Vec<u64>,
    acts_seen: u64,
    max_quarters: u64,
    flipped: Vec<bool>,
}

impl OracleState {
    pub fn new(flip_th: u32, blast_radius: BlastRadius, rows_per_bank: u32, refresh_groups: u32) -> Result<Self> {
        if rows_per_bank == 0 || rows_per_bank > MAX_ORACLE_ROWS {
            return Err(Error::config(format!(
                "oracle rows_per_bank must be in 1..={MAX_ORACLE_ROWS}, got {rows_per_bank}"
            )));
        }
        if refresh_groups == 0 {
            return Err(Error::config("refresh_groups must be >= 1"));
        }
        let n = rows_per_bank as usize;
        Ok(OracleState {
            bank: 0,
            rows_per_bank,
            refresh_groups,
            radius: match blast_radius {
                BlastRadius::One => 1,
                BlastRadius::Three => 3,
            },
            blast_radius,
            flip_quarters: 4 * flip_th as u64,
            disturbance: vec![0; n],
            act_since_refresh: vec![0; n],
            acts_seen: 0,
            max_quarters: 0,
            flipped: vec![false; n],
        })
    }

    pub fn for_config(cfg: &MithrilConfig, timing: &TimingParams, rows_per_bank: u32) -> Result<Self> {
        Self::new(cfg.flip_th, cfg.blast_radius, rows_per_bank, timing.refresh_groups())
    }

    pub fn with_bank(mut self, bank: u32) -> Self {
        self.bank = bank;
        self
    }

    pub fn disturbance(&self, row: Row) -> f64 {
        self.disturbance[row.index()] as f64 / 4.0
    }

    pub fn act_since_refresh(&self, row: Row) -> u64 {
        self.act_since_refresh[row.index()]
    }

    /// Highest disturbance any row has reached so far.
    pub fn max_disturbance(&self) -> f64 {
        self.max_quarters as f64 / 4.0
    }

    pub fn acts_seen(&self) -> u64 {
        self.acts_seen
    }

    fn reset(&mut self, row: u32) {
        let i = row as usize;
        self.disturbance[i] = 0;
        self.act_since_refresh[i] = 0;
        self.flipped[i] = false;
    }

    fn refresh_neighbours(&mut self, aggressor: u32) {
        let a = aggressor as i64;
        for d in 1..=self.radius as i64 {
            for v in [a - d, a + d] {
                if v >= 0 && v < self.rows_per_bank as i64 {
                    self.reset(v as u32);
                }
            }
        }
    }

    /// Applies one command. Every row whose disturbance crosses `flip_th`
    /// on this command is reported once; it is not reported again until it
    /// has been refreshed.
    pub fn step(&mut self, cmd: &IssuedCommand, out: &mut Vec<Violation>) {
        match cmd.kind {
            CommandKind::Act => {
                let Some(row) = cmd.row else { return };
                let seq = self.acts_seen;
                self.acts_seen += 1;
                self.act_since_refresh[row.index()] += 1;
                let a = row.0 as i64;
                for d in 1..=self.radius {
                    let w = quarter_weight(self.blast_radius, d);
                    for v in [a - d as i64, a + d as i64] {
                        if v < 0 || v >= self.rows_per_bank as i64 {
                            continue;
                        }
                        let i = v as usize;
                        self.disturbance[i] += w;
                        self.max_quarters = self.max_quarters.max(self.disturbance[i]);
                        if !self.flipped[i] && self.disturbance[i] >= self.flip_quarters {
                            self.flipped[i] = true;
                            out.push(Violation {
                                kind: ViolationKind::FlipThReached,
                                bank: self.bank,
                                row: Some(Row(v as u32)),
                                at_seq: seq,
                                detail: format!(
                                    "disturbance {} >= flip_th {} after ACT on row {}",
                                    self.disturbance[i] as f64 / 4.0,
                                    self.flip_quarters / 4,
                                    row
                                ),
                            });
                        }
                    }
                }
            }
            CommandKind::Rfm => {
                if let Some(aggressor) = cmd.row {
                    self.refresh_neighbours(aggressor.0);
                }
            }
            CommandKind::RfmSkipped => {}
            CommandKind::AutoRef => {
                let Some(g) = cmd.group else { return };
                let mut r = g % self.refresh_groups;
                while r < self.rows_per_bank {
                    self.reset(r);
                    r += self.refresh_groups;
                }
            }
        }
    }

    /// Single-command form returning the first violation, if any.
    pub fn oracle_step(&mut self, cmd: &IssuedCommand) -> Option<Violation> {
        let mut out = Vec::new();
        self.step(cmd, &mut out);
        out.into_iter().next()
    }
}

/// Recomputes every row's final disturbance from a raw command log by a
/// different route than [`OracleState`]: first locate each row's last
/// refresh, then sum the weighted ACTs of its neighbours after that point.
/// Values are in quarter units.
pub fn recompute_disturbance(
    log: &[IssuedCommand],
    blast_radius: BlastRadius,
    rows_per_bank: u32,
    refresh_groups: u32,
) -> HashMap<u32, u64> {
    let radius = blast_radius.rows() as i64;
    let mut last_refresh: HashMap<u32, usize> = HashMap::new();
    let mut group_refresh: HashMap<u32, usize> = HashMap::new();
    for (i, c) in log.iter().enumerate() {
        match (c.kind, c.row, c.group) {
            (CommandKind::Rfm, Some(a), _) => {
                for v in (a.0 as i64 - radius)..=(a.0 as i64 + radius) {
                    if v != a.0 as i64 && v >= 0 && v < rows_per_bank as i64 {
                        last_refresh.insert(v as u32, i);
                    }
                }
            }
            (CommandKind::AutoRef, _, Some(g)) => {
                group_refresh.insert(g % refresh_groups, i);
            }
            _ => {}
        }
    }
    let refreshed_at = |v: u32| -> Option<usize> {
        let a = last_refresh.get(&v).copied();
        let b = group_refresh.get(&(v % refresh_groups)).copied();
        a.max(b)
    };
    let mut out: HashMap<u32, u64> = HashMap::new();
    for (i, c) in log.iter().enumerate() {
        if c.kind != CommandKind::Act {
            continue;
        }
        let Some(a) = c.row else { continue };
        for v in (a.0 as i64 - radius)..=(a.0 as i64 + radius) {
            if v == a.0 as i64 || v < 0 || v >= rows_per_bank as i64 {
                continue;
            }
            let v = v as u32;
            if refreshed_at(v).is_some_and(|r| r > i) {
                continue;
            }
            let d = (v as i64 - a.0 as i64).unsigned_abs() as u32;
            *out.entry(v).or_default() += quarter_weight(blast_radius, d);
        }
    }
    out.retain(|_, q| *q > 0);
    out
}

/// Checks `actual <= estimated <= actual + Min` for every row the last
/// operation could have affected.
///
/// Actual counts restart when a row is chosen as the RFM aggressor: its
/// estimate is then reset to the table minimum, so the inequalities are
/// stated against ACTs since that reset.
#[derive(Debug, Clone, Default)]
pub struct InequalityAuditor {
    actual: HashMap<Row, u64>,
    bank: u32,
}

impl InequalityAuditor {
    pub fn new(bank: u32) -> Self {
        InequalityAuditor {
            actual: HashMap::new(),
            bank,
        }
    }

    pub fn actual(&self, row: Row) -> u64 {
        self.actual.get(&row).copied().unwrap_or(0)
    }

    /// Checks one row against the table.
    pub fn audit_row(&self, table: &MithrilTable, row: Row, at_seq: u64) -> Option<Violation> {
        let actual = self.actual(row);
        let est = table.shadow_estimate(row);
        let min = table.shadow_min();
        if actual > est {
            return Some(Violation {
                kind: ViolationKind::Ineq1,
                bank: self.bank,
                row: Some(row),
                at_seq,
                detail: format!("actual {actual} > estimated {est}"),
            });
        }
        if est > actual + min {
            return Some(Violation {
                kind: ViolationKind::Ineq2,
                bank: self.bank,
                row: Some(row),
                at_seq,
                detail: format!("estimated {est} > actual {actual} + min {min}"),
            });
        }
        None
    }

    /// Records an ACT that the table reported as `outcome`, then audits the
    /// activated row, any evicted row, and every row still in the table.
    pub fn after_act(
        &mut self,
        table: &MithrilTable,
        row: Row,
        outcome: ActOutcome,
        at_seq: u64,
        out: &mut Vec<Violation>,
    ) {
        *self.actual.entry(row).or_default() += 1;
        let mut check = |r: Row| {
            if let Some(v) = self.audit_row(table, r, at_seq) {
                out.push(v);
            }
        };
        if let ActOutcome::Inserted { evicted: Some(e), .. } = outcome {
            check(e);
        }
        for e in table.entries() {
            if let Some(r) = e.row {
                check(r);
            }
        }
        if table.lookup(row).is_none() {
            check(row);
        }
    }

    pub fn after_rfm(&mut self, decision: &RefreshDecision) {
        if decision.refreshed {
            if let Some(a) = decision.aggressor {
                self.actual.remove(&a);
            }
        }
    }

    /// Audits every row ever activated. Off-table rows only move when they
    /// are evicted, so [`after_act`](Self::after_act) already covers them;
    /// this is the exhaustive form for tests.
    pub fn audit_all(&self, table: &MithrilTable, at_seq: u64) -> Vec<Violation> {
        let mut rows: Vec<Row> = self.actual.keys().copied().collect();
        rows.sort();
        rows.into_iter()
            .filter_map(|r| self.audit_row(table, r, at_seq))
            .collect()
    }
}

/// Sliding-window check of estimated-count growth.
///
/// Over intervals `j..j+L-1` the growth of any single row's estimate is at
/// most the largest count at the end of the last interval minus the
/// smallest count at the start of the first. The auditor tracks exactly
/// that quantity with `L = floor(X)`, the number of complete RFM intervals
/// that fit in one refresh window at the peak ACT rate.
///
/// The table minimum never decreases (a refresh lowers the maximum to the
/// minimum and an ACT only raises counts), so interval start minima are
/// monotone and the window's first entry is its smallest.
#[derive(Debug, Clone)]
pub struct BoundAuditor {
    bound: f64,
    window: usize,
    rfm_th: u32,
    acts_in_interval: u32,
    start_mins: VecDeque<u64>,
    current_start_min: u64,
    max_growth: u64,
    bank: u32,
    reported: bool,
}

impl BoundAuditor {
    pub fn new(bound: f64, window: usize, rfm_th: u32, bank: u32) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("bound audit window must be >= 1 interval"));
        }
        if rfm_th == 0 {
            return Err(Error::config("rfm_th must be >= 1"));
        }
        Ok(BoundAuditor {
            bound,
            window,
            rfm_th,
            acts_in_interval: 0,
            start_mins: VecDeque::with_capacity(window),
            current_start_min: 0,
            max_growth: 0,
            bank,
            reported: false,
        })
    }

    /// Auditor for `cfg` with the applicable bound (M, or M' when the
    /// adaptive policy is on).
    pub fn for_config(cfg: &MithrilConfig, timing: &TimingParams, bank: u32) -> Result<Self> {
        let bound = applicable_bound(cfg, timing);
        let window = Self::window_for(timing, cfg.rfm_th)?;
        Self::new(bound, window, cfg.rfm_th, bank)
    }

    /// Complete RFM intervals per refresh window: `floor(X)`.
    pub fn window_for(timing: &TimingParams, rfm_th: u32) -> Result<usize> {
        let x = intervals_per_window(timing, rfm_th)?;
        Ok((x.floor() as usize).max(1))
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Largest windowed growth observed so far.
    pub fn max_growth(&self) -> u64 {
        self.max_growth
    }

    /// Call after every ACT has been applied to `table`. At the last ACT of
    /// an interval, before any refresh, the window ending here is checked.
    pub fn after_act(&mut self, table: &MithrilTable, at_seq: u64) -> Option<Violation> {
        self.acts_in_interval += 1;
        if self.acts_in_interval < self.rfm_th {
            return None;
        }
        self.acts_in_interval = 0;
        if self.start_mins.len() == self.window {
            self.start_mins.pop_front();
        }
        self.start_mins.push_back(self.current_start_min);
        // The refresh, if any, leaves the minimum in place, so the next
        // interval starts from the current minimum.
        self.current_start_min = table.shadow_min();

        let growth = table.shadow_max() - self.start_mins[0];
        self.max_growth = self.max_growth.max(growth);
        if growth as f64 > self.bound && !self.reported {
            self.reported = true;
            return Some(Violation {
                kind: ViolationKind::BoundM,
                bank: self.bank,
                row: table.entries()[table.max_index()].row,
                at_seq,
                detail: format!(
                    "estimated count grew by {growth} over {} intervals; bound {:.3}",
                    self.start_mins.len(),
                    self.bound
                ),
            });
        }
        None
    }
}

/// A [`Mithril`] tracker with both auditors attached. Violations accumulate
/// in `violations` in the order they are detected.
#[derive(Debug, Clone)]
pub struct AuditedMithril {
    pub mithril: Mithril,
    pub inequalities: Option<InequalityAuditor>,
    pub bound: Option<BoundAuditor>,
    pub violations: Vec<Violation>,
    acts: u64,
}

impl AuditedMithril {
    pub fn new(mithril: Mithril, inequalities: Option<InequalityAuditor>, bound: Option<BoundAuditor>) -> Self {
        AuditedMithril {
            mithril,
            inequalities,
            bound,
            violations: Vec::new(),
            acts: 0,
        }
    }

    /// Fully audited tracker for `cfg`.
    pub fn for_config(cfg: &MithrilConfig, timing: &TimingParams, rows_per_bank: u32, bank: u32) -> Result<Self> {
        let mithril = Mithril::for_config(cfg, timing, rows_per_bank)?;
        Ok(Self::new(
            mithril,
            Some(InequalityAuditor::new(bank)),
            Some(BoundAuditor::for_config(cfg, timing, bank)?),
        ))
    }

    pub fn table(&self) -> &MithrilTable {
        &self.mithril.table
    }
}

impl RowTracker for AuditedMithril {
    fn on_activate(&mut self, row: Row) {
        let seq = self.acts;
        self.acts += 1;
        let outcome = self.mithril.table.on_activate(row);
        if let Some(aud) = &mut self.inequalities {
            aud.after_act(&self.mithril.table, row, outcome, seq, &mut self.violations);
        }
        if let Some(aud) = &mut self.bound {
            if let Some(v) = aud.after_act(&self.mithril.table, seq) {
                self.violations.push(v);
            }
        }
    }

    fn on_rfm(&mut self) -> RefreshDecision {
        let decision = self.mithril.on_rfm();
        if let Some(aud) = &mut self.inequalities {
            aud.after_rfm(&decision);
        }
        decision
    }

    fn refresh_pending(&self) -> bool {
        self.mithril.refresh_pending()
    }
}

/// Command and refresh totals for one simulated bank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCounts {
    pub acts: u64,
    pub rfm_issued: u64,
    pub rfm_skipped: u64,
    pub autorefs: u64,
    /// RFMs during which a preventive refresh actually ran.
    pub preventive_refreshes: u64,
    pub victims_refreshed: u64,
}

/// Result of replaying one bank's stream under the oracle.
#[derive(Debug, Clone)]
pub struct BankRun {
    pub counts: BankCounts,
    pub violations: Vec<Violation>,
    pub max_disturbance: f64,
    pub end_time: Picos,
}

/// Replays `events` through `ctrl` and `tracker`, feeding every command to
/// `oracle` and to `on_cmd`. Oracle violations are returned; tracker-side
/// audits stay inside the tracker.
pub fn run_bank<T, F>(
    ctrl: &mut BankController,
    tracker: &mut T,
    oracle: &mut OracleState,
    events: &[ActEvent],
    horizon: Option<Picos>,
    mut on_cmd: F,
) -> BankRun
where
    T: RowTracker + ?Sized,
    F: FnMut(&IssuedCommand),
{
    let mut counts = BankCounts::default();
    let mut violations = Vec::new();
    ctrl.drive_with(tracker, events, horizon, |cmd, decision| {
        match cmd.kind {
            CommandKind::Act => counts.acts += 1,
            CommandKind::Rfm => {
                counts.rfm_issued += 1;
                if let Some(d) = decision.filter(|d| d.refreshed) {
                    counts.preventive_refreshes += 1;
                    counts.victims_refreshed += d.victims.len() as u64;
                }
            }
            CommandKind::RfmSkipped => counts.rfm_skipped += 1,
            CommandKind::AutoRef => counts.autorefs += 1,
        }
        oracle.step(cmd, &mut violations);
        on_cmd(cmd);
    });
    BankRun {
        counts,
        violations,
        max_disturbance: oracle.max_disturbance(),
        end_time: ctrl.now,
    }
}

/// Outcome of [`verify_mithril`].
#[derive(Debug, Clone)]
pub struct Verification {
    pub run: BankRun,
    pub max_window_growth: u64,
    pub bound: f64,
    pub window: usize,
}

impl Verification {
    pub fn violations(&self) -> &[Violation] {
        &self.run.violations
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.run.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn is_clean(&self) -> bool {
        self.run.violations.is_empty()
    }
}

/// Options for [`verify_mithril`].
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub mithril_plus: bool,
    /// Replaces the computed bound in the window audit. Used by harness
    /// self-tests.
    pub bound_override: Option<f64>,
    pub bank: u32,
}

/// Runs the full audit for one bank: oracle flips, both inequalities and the
/// windowed bound. All violations are merged and ordered by ACT ordinal.
pub fn verify_mithril(
    cfg: &MithrilConfig,
    timing: &TimingParams,
    rows_per_bank: u32,
    events: &[ActEvent],
    opts: VerifyOptions,
) -> Result<Verification> {
    let mut tracker = AuditedMithril::for_config(cfg, timing, rows_per_bank, opts.bank)?;
    if let (Some(b), Some(aud)) = (opts.bound_override, tracker.bound.as_mut()) {
        *aud = BoundAuditor::new(b, aud.window(), cfg.rfm_th, opts.bank)?;
    }
    let mut ctrl = BankController::new(*timing, cfg.rfm_th, opts.mithril_plus)?;
    let mut oracle = OracleState::for_config(cfg, timing, rows_per_bank)?.with_bank(opts.bank);
    let mut run = run_bank(&mut ctrl, &mut tracker, &mut oracle, events, None, |_| {});
    run.violations.append(&mut tracker.violations);
    run.violations.sort_by_key(|v| v.at_seq);
    let aud = tracker.bound.as_ref().expect("bound auditor attached");
    Ok(Verification {
        max_window_growth: aud.max_growth(),
        bound: aud.bound(),
        window: aud.window(),
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::test_timing;
    use crate::tracker::victims_of;

    fn act(row: u32) -> IssuedCommand {
        IssuedCommand {
            kind: CommandKind::Act,
            row: Some(Row(row)),
            group: None,
            at: Picos::ZERO,
        }
    }

    fn rfm(aggressor: u32) -> IssuedCommand {
        IssuedCommand {
            kind: CommandKind::Rfm,
            row: Some(Row(aggressor)),
            group: None,
            at: Picos::ZERO,
        }
    }

    fn autoref(group: u32) -> IssuedCommand {
        IssuedCommand {
            kind: CommandKind::AutoRef,
            row: None,
            group: Some(group),
            at: Picos::ZERO,
        }
    }

    fn oracle(flip: u32, blast: BlastRadius) -> OracleState {
        OracleState::new(flip, blast, 100, 4).unwrap()
    }

    #[test]
    fn double_sided_reaches_threshold() {
        let mut o = oracle(4, BlastRadius::One);
        let mut v = Vec::new();
        for c in [act(9), act(9), act(11)] {
            o.step(&c, &mut v);
        }
        assert!(v.is_empty());
        o.step(&act(11), &mut v);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::FlipThReached);
        assert_eq!(v[0].row, Some(Row(10)));
        assert_eq!(v[0].at_seq, 3);
        assert_eq!(o.disturbance(Row(10)), 4.0);
    }

    #[test]
    fn preventive_refresh_resets() {
        let mut o = oracle(4, BlastRadius::One);
        let mut v = Vec::new();
        for c in [act(9), act(9), act(11), rfm(9), act(11)] {
            o.step(&c, &mut v);
        }
        assert!(v.is_empty());
        assert_eq!(o.disturbance(Row(10)), 1.0);
        // The aggressor itself is not refreshed by its own RFM.
        assert_eq!(o.act_since_refresh(Row(9)), 2);
    }

    #[test]
    fn blast_three_weights() {
        let mut o = oracle(100, BlastRadius::Three);
        o.step(&act(13), &mut Vec::new());
        assert_eq!(o.disturbance(Row(10)), 0.25);
        assert_eq!(o.disturbance(Row(11)), 0.5);
        assert_eq!(o.disturbance(Row(12)), 1.0);
        assert_eq!(o.disturbance(Row(16)), 0.25);
        let total: f64 = (10..=16).map(|r| o.disturbance(Row(r))).sum();
        assert_eq!(total, BlastRadius::Three.aggregated_effect());
    }

    #[test]
    fn autoref_resets_group_rows() {
        let mut o = oracle(100, BlastRadius::One);
        for r in [1, 3, 5, 7] {
            o.step(&act(r), &mut Vec::new());
        }
        // Group 2 covers rows 2, 6, 10, ...
        o.step(&autoref(2), &mut Vec::new());
        assert_eq!(o.disturbance(Row(2)), 0.0);
        assert_eq!(o.disturbance(Row(6)), 0.0);
        assert_eq!(o.disturbance(Row(4)), 2.0);
        assert_eq!(o.disturbance(Row(0)), 1.0);
    }

    #[test]
    fn violation_reported_once_until_refresh() {
        let mut o = oracle(2, BlastRadius::One);
        let mut v = Vec::new();
        for _ in 0..5 {
            o.step(&act(5), &mut v);
        }
        assert_eq!(v.len(), 2);
        o.step(&rfm(5), &mut v);
        o.step(&act(5), &mut v);
        o.step(&act(5), &mut v);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn recomputation_agrees_with_oracle() {
        let log: Vec<IssuedCommand> = [
            act(9),
            act(11),
            act(11),
            rfm(11),
            act(9),
            act(3),
            autoref(2),
            act(5),
            act(1),
        ]
        .to_vec();
        for blast in [BlastRadius::One, BlastRadius::Three] {
            let mut o = OracleState::new(1_000, blast, 100, 4).unwrap();
            for c in &log {
                o.step(c, &mut Vec::new());
            }
            let re = recompute_disturbance(&log, blast, 100, 4);
            for r in 0..100 {
                let q = re.get(&r).copied().unwrap_or(0);
                assert_eq!(o.disturbance(Row(r)), q as f64 / 4.0, "row {r} blast {blast:?}");
            }
        }
    }

    #[test]
    fn inequality_examples() {
        let mut t = MithrilTable::with_rows(2, 16, 1_000).unwrap();
        let mut aud = InequalityAuditor::new(0);
        let mut v = Vec::new();
        let out = t.on_activate(Row(1));
        aud.after_act(&t, Row(1), out, 0, &mut v);
        assert!(v.is_empty());
        assert_eq!(aud.actual(Row(1)), 1);
        assert_eq!(t.shadow_estimate(Row(1)), 1);

        // Build Min = 4 and check an untouched off-table row.
        let mut t = MithrilTable::with_rows(2, 16, 1_000).unwrap();
        let mut aud = InequalityAuditor::new(0);
        for (i, r) in [1, 1, 1, 1, 2, 2, 2, 2].into_iter().enumerate() {
            let out = t.on_activate(Row(r));
            aud.after_act(&t, Row(r), out, i as u64, &mut v);
        }
        assert_eq!(t.shadow_min(), 4);
        assert!(aud.audit_row(&t, Row(77), 8).is_none());
        assert!(v.is_empty());
    }

    #[test]
    fn inequality_detects_corrupted_counts() {
        let mut t = MithrilTable::with_rows(2, 16, 1_000).unwrap();
        let mut aud = InequalityAuditor::new(0);
        let mut v = Vec::new();
        for i in 0..3 {
            let out = t.on_activate(Row(1));
            aud.after_act(&t, Row(1), out, i, &mut v);
        }
        // Pretend extra ACTs happened that the table never saw.
        for _ in 0..5 {
            *aud.actual.entry(Row(1)).or_default() += 1;
        }
        let found = aud.audit_row(&t, Row(1), 3).unwrap();
        assert_eq!(found.kind, ViolationKind::Ineq1);

        let mut aud = InequalityAuditor::new(0);
        aud.actual.insert(Row(1), 0);
        // Row 1 has estimate 3 with Min 0 but no recorded ACTs.
        assert_eq!(aud.audit_row(&t, Row(1), 3).unwrap().kind, ViolationKind::Ineq2);
    }

    #[test]
    fn bound_auditor_single_row_hammer() {
        // N = 2 on a small window: growth never exceeds M.
        let timing = test_timing::x10();
        let cfg = MithrilConfig::new(2, 4, 0, 1_000, 1).unwrap();
        let events: Vec<ActEvent> = (0..2_000).map(|i| ActEvent::new(0, Row(10), i)).collect();
        let out = verify_mithril(&cfg, &timing, 1_000, &events, VerifyOptions::default()).unwrap();
        assert_eq!(out.count(ViolationKind::BoundM), 0);
        assert!(out.max_window_growth as f64 <= out.bound);
        assert_eq!(out.window, 10);
    }

    #[test]
    fn bound_auditor_fires_when_misconfigured() {
        let timing = test_timing::x10();
        let cfg = MithrilConfig::new(2, 4, 0, 1_000, 1).unwrap();
        let events: Vec<ActEvent> = (0..2_000).map(|i| ActEvent::new(0, Row(10), i)).collect();
        let opts = VerifyOptions {
            bound_override: Some(3.0),
            ..Default::default()
        };
        let out = verify_mithril(&cfg, &timing, 1_000, &events, opts).unwrap();
        assert_eq!(out.count(ViolationKind::BoundM), 1);
    }

    #[test]
    fn unsafe_config_flips() {
        let timing = test_timing::x10();
        // M is far above 4/2, so a double-sided hammer must flip.
        let cfg = MithrilConfig::new(2, 64, 0, 4, 1).unwrap();
        let events: Vec<ActEvent> = (0..64)
            .map(|i| ActEvent::new(0, Row(10 + 2 * (i as u32 % 2)), i))
            .collect();
        let out = verify_mithril(&cfg, &timing, 1_000, &events, VerifyOptions::default()).unwrap();
        assert!(out.count(ViolationKind::FlipThReached) >= 1);
        let first = &out.violations()[0];
        assert_eq!(first.row, Some(Row(11)));
    }

    #[test]
    fn violations_csv() {
        let v = vec![Violation {
            kind: ViolationKind::Ineq2,
            bank: 0,
            row: Some(Row(3)),
            at_seq: 12,
            detail: "x".into(),
        }];
        let mut buf = Vec::new();
        write_violations_csv(&v, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "kind,bank,row,at_seq,detail\nINEQ2,0,3,12,x\n"
        );
    }

    #[test]
    fn oracle_victims_match_tracker_victims() {
        for blast in [BlastRadius::One, BlastRadius::Three] {
            for a in [0u32, 1, 2, 50, 98, 99] {
                let mut o = OracleState::new(1_000, blast, 100, 1_000).unwrap();
                for r in 0..100 {
                    o.step(&act(r), &mut Vec::new());
                }
                let before: Vec<f64> = (0..100).map(|r| o.disturbance(Row(r))).collect();
                o.step(&rfm(a), &mut Vec::new());
                let reset: Vec<Row> = (0..100)
                    .filter(|&r| o.disturbance(Row(r)) == 0.0 && before[r as usize] > 0.0)
                    .map(Row)
                    .collect();
                assert_eq!(reset, victims_of(Row(a), blast, 100));
            }
        }
    }
}
