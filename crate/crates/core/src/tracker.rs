//! The per-bank Mithril counter table.
//!
//! Activations are tracked with the Counter-based Summary update: a hit
//! increments the matching counter, a miss takes over the minimum entry and
//! increments it. On RFM the maximum entry is chosen greedily, its victims are
//! refreshed and its counter drops to the table minimum.
//!
//! Counters are stored modulo `2^counter_bits`. Ordering between counters is
//! decided by [`wrapped_compare`], which is exact while the spread between the
//! largest and smallest counter stays below half the modulus. An unbounded
//! shadow copy of every counter is kept alongside for diagnostics.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::{self, BlastRadius, MithrilConfig};
use crate::error::{Error, Result};
use crate::timing::TimingParams;

/// A row address within one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Row(pub u32);

impl Row {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for Row {
    fn from(v: u32) -> Self {
        Row(v)
    }
}

/// One counter table slot. `row == None` is the unused sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrackerEntry {
    pub row: Option<Row>,
    pub count: u32,
}

/// What an RFM did to the table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RefreshDecision {
    pub refreshed: bool,
    pub aggressor: Option<Row>,
    pub victims: Vec<Row>,
    pub skipped_by_adaptive: bool,
}

impl RefreshDecision {
    fn none() -> Self {
        RefreshDecision::default()
    }

    fn skipped() -> Self {
        RefreshDecision {
            skipped_by_adaptive: true,
            ..Default::default()
        }
    }
}

/// How an activation landed in the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActOutcome {
    Hit { index: usize },
    Inserted { index: usize, evicted: Option<Row> },
}

/// Compares two wrapped counters. `a` is greater than `b` iff
/// `(a - b) mod 2^bits` is non-zero and below `2^(bits-1)`.
pub fn wrapped_compare(a: u32, b: u32, bits: u32) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    let mask = counter_mask(bits);
    let half = 1u64 << (bits - 1);
    if ((a.wrapping_sub(b) & mask) as u64) < half {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

fn counter_mask(bits: u32) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

/// Rows within `blast_radius` of `row`, excluding `row` itself, clipped to
/// the bank and sorted ascending.
pub fn victims_of(row: Row, blast_radius: BlastRadius, rows_per_bank: u32) -> Vec<Row> {
    let r = row.0 as i64;
    let d = blast_radius.rows() as i64;
    (r - d..=r + d)
        .filter(|&v| v != r && v >= 0 && v < rows_per_bank as i64)
        .map(|v| Row(v as u32))
        .collect()
}

/// The Mithril counter table for one bank.
#[derive(Debug, Clone)]
pub struct MithrilTable {
    entries: Vec<TrackerEntry>,
    shadow: Vec<u64>,
    index: HashMap<Row, usize>,
    min_index: usize,
    max_index: usize,
    counter_bits: u32,
    mask: u32,
    rows_per_bank: u32,
    total_acts: u64,
}

impl MithrilTable {
    pub fn new(n_entry: u32, counter_bits: u32) -> Result<Self> {
        Self::with_rows(n_entry, counter_bits, u32::MAX)
    }

    pub fn with_rows(n_entry: u32, counter_bits: u32, rows_per_bank: u32) -> Result<Self> {
        if n_entry < 2 {
            return Err(Error::config(format!("n_entry must be >= 2, got {n_entry}")));
        }
        if !(2..=32).contains(&counter_bits) {
            return Err(Error::config(format!(
                "counter_bits must be in 2..=32, got {counter_bits}"
            )));
        }
        let n = n_entry as usize;
        Ok(MithrilTable {
            entries: vec![TrackerEntry::default(); n],
            shadow: vec![0; n],
            index: HashMap::with_capacity(n),
            min_index: 0,
            max_index: 0,
            counter_bits,
            mask: counter_mask(counter_bits),
            rows_per_bank,
            total_acts: 0,
        })
    }

    /// Builds a table sized for `cfg`. With `counter_bits == None` the width
    /// comes from [`bounds::default_counter_bits`]; an explicit width is
    /// rejected unless `2^(bits-1) > bound + rfm_th`.
    pub fn for_config(
        cfg: &MithrilConfig,
        timing: &TimingParams,
        counter_bits: Option<u32>,
        rows_per_bank: u32,
    ) -> Result<Self> {
        let bound = bounds::applicable_bound(cfg, timing);
        let bits = match counter_bits {
            None => bounds::default_counter_bits(bound, cfg.rfm_th),
            Some(b) => {
                let half = 2f64.powi(b as i32 - 1);
                if half <= bound + cfg.rfm_th as f64 {
                    return Err(Error::config(format!(
                        "{b} counter bits cannot order a spread of {:.1}",
                        bound + cfg.rfm_th as f64
                    )));
                }
                b
            }
        };
        Self::with_rows(cfg.n_entry, bits, rows_per_bank)
    }

    pub fn n_entry(&self) -> usize {
        self.entries.len()
    }

    pub fn counter_bits(&self) -> u32 {
        self.counter_bits
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.rows_per_bank
    }

    pub fn entries(&self) -> &[TrackerEntry] {
        &self.entries
    }

    /// Unbounded counterpart of [`entries`](Self::entries)' counts.
    pub fn shadow_counts(&self) -> &[u64] {
        &self.shadow
    }

    pub fn min_index(&self) -> usize {
        self.min_index
    }

    pub fn max_index(&self) -> usize {
        self.max_index
    }

    pub fn total_acts(&self) -> u64 {
        self.total_acts
    }

    pub fn min_count(&self) -> u32 {
        self.entries[self.min_index].count
    }

    pub fn max_count(&self) -> u32 {
        self.entries[self.max_index].count
    }

    pub fn shadow_min(&self) -> u64 {
        self.shadow[self.min_index]
    }

    pub fn shadow_max(&self) -> u64 {
        self.shadow[self.max_index]
    }

    /// `(max - min) mod 2^counter_bits`.
    pub fn spread(&self) -> u32 {
        self.max_count().wrapping_sub(self.min_count()) & self.mask
    }

    pub fn lookup(&self, row: Row) -> Option<usize> {
        self.index.get(&row).copied()
    }

    fn cmp(&self, a: usize, b: usize) -> Ordering {
        wrapped_compare(self.entries[a].count, self.entries[b].count, self.counter_bits)
    }

    fn rescan_min(&mut self) {
        let mut best = 0;
        for i in 1..self.entries.len() {
            if self.cmp(i, best) == Ordering::Less {
                best = i;
            }
        }
        self.min_index = best;
    }

    fn rescan_max(&mut self) {
        let mut best = 0;
        for i in 1..self.entries.len() {
            if self.cmp(i, best) == Ordering::Greater {
                best = i;
            }
        }
        self.max_index = best;
    }

    /// Records one activation of `row`.
    pub fn on_activate(&mut self, row: Row) -> ActOutcome {
        self.total_acts += 1;
        let outcome = match self.lookup(row) {
            Some(index) => ActOutcome::Hit { index },
            None => {
                let index = self.min_index;
                let evicted = self.entries[index].row.replace(row);
                if let Some(old) = evicted {
                    self.index.remove(&old);
                }
                self.index.insert(row, index);
                ActOutcome::Inserted { index, evicted }
            }
        };
        let i = match outcome {
            ActOutcome::Hit { index } | ActOutcome::Inserted { index, .. } => index,
        };
        self.entries[i].count = self.entries[i].count.wrapping_add(1) & self.mask;
        self.shadow[i] += 1;

        match self.cmp(i, self.max_index) {
            Ordering::Greater => self.max_index = i,
            Ordering::Equal if i < self.max_index => self.max_index = i,
            _ => {}
        }
        if i == self.min_index {
            self.rescan_min();
        }
        outcome
    }

    /// Estimated count of `row`: its counter when tracked, else the table
    /// minimum. Returned as the raw wrapped value.
    pub fn estimated_count(&self, row: Row) -> u32 {
        match self.lookup(row) {
            Some(i) => self.entries[i].count,
            None => self.min_count(),
        }
    }

    /// Estimated count measured from the table minimum, which is the
    /// magnitude the wrapped representation preserves.
    pub fn relative_estimate(&self, row: Row) -> u32 {
        self.estimated_count(row).wrapping_sub(self.min_count()) & self.mask
    }

    /// Estimated count from the unbounded shadow counters.
    pub fn shadow_estimate(&self, row: Row) -> u64 {
        match self.lookup(row) {
            Some(i) => self.shadow[i],
            None => self.shadow_min(),
        }
    }

    /// True when the spread exceeds `ad_th`, i.e. a refresh is warranted.
    /// This is the flag a Mithril+ controller reads before each RFM.
    pub fn adaptive_flag(&self, ad_th: u32) -> bool {
        self.spread() > ad_th
    }

    /// Handles an RFM. With `ad_th > 0` the refresh is skipped, without
    /// touching any counter, unless the spread exceeds `ad_th`; `ad_th == 0`
    /// disables the adaptive policy.
    pub fn on_rfm(&mut self, ad_th: u32, blast_radius: BlastRadius) -> RefreshDecision {
        if ad_th > 0 && !self.adaptive_flag(ad_th) {
            return RefreshDecision::skipped();
        }
        let target = self.max_index;
        let Some(aggressor) = self.entries[target].row else {
            return RefreshDecision::none();
        };
        self.entries[target].count = self.min_count();
        self.shadow[target] = self.shadow_min();
        self.rescan_max();
        self.rescan_min();
        RefreshDecision {
            refreshed: true,
            aggressor: Some(aggressor),
            victims: victims_of(aggressor, blast_radius, self.rows_per_bank),
            skipped_by_adaptive: false,
        }
    }

    /// Checks pointer correctness and wrapped-versus-shadow agreement.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.entries.len();
        let smin = *self.shadow.iter().min().unwrap();
        let smax = *self.shadow.iter().max().unwrap();
        let first_min = self.shadow.iter().position(|&c| c == smin).unwrap();
        let first_max = self.shadow.iter().position(|&c| c == smax).unwrap();
        if smax - smin >= 1u64 << (self.counter_bits - 1) {
            return Err(format!(
                "spread {} exceeds half modulus of {} bits",
                smax - smin,
                self.counter_bits
            ));
        }
        if self.min_index != first_min {
            return Err(format!("min_index {} but scan gives {first_min}", self.min_index));
        }
        if self.max_index != first_max {
            return Err(format!("max_index {} but scan gives {first_max}", self.max_index));
        }
        for i in 0..n {
            if (self.shadow[i] & self.mask as u64) as u32 != self.entries[i].count {
                return Err(format!("entry {i}: wrapped count disagrees with shadow"));
            }
            if let Some(r) = self.entries[i].row {
                if self.index.get(&r) != Some(&i) {
                    return Err(format!("row {r} index out of sync"));
                }
            }
        }
        if self.index.len() != self.entries.iter().filter(|e| e.row.is_some()).count() {
            return Err("duplicate or stale rows in table".into());
        }
        Ok(())
    }

    /// Writes `row,shadow_count,wrapped_count` for every used entry.
    pub fn write_dump_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "shadow_count", "wrapped_count"])?;
        for (e, s) in self.entries.iter().zip(&self.shadow) {
            if let Some(r) = e.row {
                w.write_record([r.to_string(), s.to_string(), e.count.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<dump>", e))?;
        Ok(())
    }
}

/// A per-bank aggressor tracker the memory controller can drive.
pub trait RowTracker {
    fn on_activate(&mut self, row: Row);

    fn on_rfm(&mut self) -> RefreshDecision;

    /// Whether the next RFM would do useful work. Mithril+ controllers skip
    /// the RFM entirely when this is false.
    fn refresh_pending(&self) -> bool;
}

/// A [`MithrilTable`] bound to its RFM policy parameters.
#[derive(Debug, Clone)]
pub struct Mithril {
    pub table: MithrilTable,
    pub ad_th: u32,
    pub blast_radius: BlastRadius,
}

impl Mithril {
    pub fn new(table: MithrilTable, ad_th: u32, blast_radius: BlastRadius) -> Self {
        Mithril {
            table,
            ad_th,
            blast_radius,
        }
    }

    pub fn for_config(cfg: &MithrilConfig, timing: &TimingParams, rows_per_bank: u32) -> Result<Self> {
        let table = MithrilTable::for_config(cfg, timing, None, rows_per_bank)?;
        Ok(Self::new(table, cfg.ad_th, cfg.blast_radius))
    }
}

impl RowTracker for Mithril {
    fn on_activate(&mut self, row: Row) {
        self.table.on_activate(row);
    }

    fn on_rfm(&mut self) -> RefreshDecision {
        self.table.on_rfm(self.ad_th, self.blast_radius)
    }

    fn refresh_pending(&self) -> bool {
        self.table.adaptive_flag(self.ad_th)
    }
}
