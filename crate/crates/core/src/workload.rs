//! ACT stream generators and trace files.
//!
//! Generators are pure functions of their spec: the same spec (including the
//! seed) always yields the same stream. Generated streams target bank 0.
//!
//! Trace files are plain text with one `bank,row[,ts_ns]` event per line.
//! `#` starts a comment; blank lines are ignored.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timing::TimingParams;
use crate::tracker::Row;

/// Default bank size: 16-bit row addresses.
pub const DEFAULT_ROWS_PER_BANK: u32 = 65_536;

/// ACTs a streaming access issues to one row before moving on: an 8 KB row
/// read with 64 B cache lines.
pub const SWEEP_BURST: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActEvent {
    pub bank: u32,
    pub row: Row,
    pub seq: u64,
    pub ts_ns: Option<u64>,
}

impl ActEvent {
    pub fn new(bank: u32, row: Row, seq: u64) -> Self {
        ActEvent {
            bank,
            row,
            seq,
            ts_ns: None,
        }
    }
}

/// Describes one ACT stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    /// The same row over and over.
    SingleRow {
        row: u32,
        length: u64,
    },
    /// Cycles through `rows` in order.
    RoundRobinK {
        rows: Vec<u32>,
        length: u64,
    },
    /// Aggressors at stride 2 starting at `base_row`, placed so that exactly
    /// `victims` rows are disturbed; every interior victim is double-sided.
    MultiSided {
        base_row: u32,
        victims: u32,
        length: u64,
    },
    /// Uniformly random rows in `[lo, hi)`.
    UniformRandom {
        lo: u32,
        hi: u32,
        length: u64,
        seed: u64,
    },
    /// Runs of `burst` ACTs to one row, walking `[lo, hi)` and wrapping.
    Sweep {
        lo: u32,
        hi: u32,
        burst: u32,
        length: u64,
    },
    /// `rfm_th` distinct rows activated once each per RFM interval. Rows are
    /// `base_row + stride·i` for `i` cycling through `pool` slots.
    ParfmWorst {
        rfm_th: u32,
        intervals: u64,
        base_row: u32,
        stride: u32,
        pool: u32,
    },
    /// `aggressors` rows activated round-robin until each reaches
    /// `threshold`, so they all cross a reactive threshold together.
    ReactiveWorst {
        threshold: u32,
        aggressors: u32,
        base_row: u32,
        stride: u32,
    },
    TraceFile {
        path: PathBuf,
    },
}

fn events(rows: impl IntoIterator<Item = u32>) -> Vec<ActEvent> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| ActEvent::new(0, Row(r), i as u64))
        .collect()
}

fn check_row(row: u64, rows_per_bank: u32, what: &str) -> Result<()> {
    if row >= rows_per_bank as u64 {
        Err(Error::config(format!(
            "{what}: row {row} outside bank of {rows_per_bank} rows"
        )))
    } else {
        Ok(())
    }
}

impl WorkloadSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            WorkloadSpec::SingleRow { .. } => "single_row",
            WorkloadSpec::RoundRobinK { .. } => "round_robin_k",
            WorkloadSpec::MultiSided { .. } => "multi_sided",
            WorkloadSpec::UniformRandom { .. } => "uniform_random",
            WorkloadSpec::Sweep { .. } => "sweep",
            WorkloadSpec::ParfmWorst { .. } => "parfm_worst",
            WorkloadSpec::ReactiveWorst { .. } => "reactive_worst",
            WorkloadSpec::TraceFile { .. } => "trace_file",
        }
    }

    /// Aggressor rows of a multi-sided pattern.
    pub fn multi_sided_aggressors(base_row: u32, victims: u32) -> Vec<u32> {
        (0..victims.saturating_sub(1)).map(|i| base_row + 2 * i).collect()
    }

    fn validate(&self, rows_per_bank: u32) -> Result<()> {
        let need_len = |len: u64| {
            if len == 0 {
                Err(Error::config("workload length must be >= 1"))
            } else {
                Ok(())
            }
        };
        match self {
            WorkloadSpec::SingleRow { row, length } => {
                need_len(*length)?;
                check_row(*row as u64, rows_per_bank, "single_row")
            }
            WorkloadSpec::RoundRobinK { rows, length } => {
                need_len(*length)?;
                if rows.is_empty() {
                    return Err(Error::config("round_robin_k needs at least one row"));
                }
                rows.iter()
                    .try_for_each(|&r| check_row(r as u64, rows_per_bank, "round_robin_k"))
            }
            WorkloadSpec::MultiSided {
                base_row,
                victims,
                length,
            } => {
                need_len(*length)?;
                if *victims < 2 {
                    return Err(Error::config("multi_sided needs at least 2 victims"));
                }
                if *base_row == 0 {
                    return Err(Error::config(
                        "multi_sided base_row must leave room for its lower victim",
                    ));
                }
                let top_victim = *base_row as u64 + 2 * (*victims as u64 - 2) + 1;
                check_row(top_victim, rows_per_bank, "multi_sided")
            }
            WorkloadSpec::UniformRandom { lo, hi, length, .. } | WorkloadSpec::Sweep { lo, hi, length, .. } => {
                need_len(*length)?;
                if lo >= hi {
                    return Err(Error::config(format!("empty footprint [{lo}, {hi})")));
                }
                check_row(*hi as u64 - 1, rows_per_bank, self.kind())?;
                if let WorkloadSpec::Sweep { burst: 0, .. } = self {
                    return Err(Error::config("sweep burst must be >= 1"));
                }
                Ok(())
            }
            WorkloadSpec::ParfmWorst {
                rfm_th,
                intervals,
                base_row,
                stride,
                pool,
            } => {
                need_len(*intervals)?;
                if *rfm_th == 0 || *stride == 0 {
                    return Err(Error::config("parfm_worst needs rfm_th >= 1 and stride >= 1"));
                }
                if pool < rfm_th {
                    return Err(Error::config(format!(
                        "parfm_worst pool ({pool}) must hold rfm_th ({rfm_th}) distinct rows"
                    )));
                }
                let top = *base_row as u64 + *stride as u64 * (*pool as u64 - 1);
                check_row(top, rows_per_bank, "parfm_worst")
            }
            WorkloadSpec::ReactiveWorst {
                threshold,
                aggressors,
                base_row,
                stride,
            } => {
                if *threshold == 0 || *aggressors == 0 || *stride == 0 {
                    return Err(Error::config(
                        "reactive_worst needs positive threshold, aggressors and stride",
                    ));
                }
                let top = *base_row as u64 + *stride as u64 * (*aggressors as u64 - 1);
                check_row(top, rows_per_bank, "reactive_worst")
            }
            WorkloadSpec::TraceFile { .. } => Ok(()),
        }
    }

    /// Expands this workload into a concrete stream.
    pub fn generate(&self, rows_per_bank: u32) -> Result<Vec<ActEvent>> {
        self.validate(rows_per_bank)?;
        let out = match self {
            WorkloadSpec::SingleRow { row, length } => events((0..*length).map(|_| *row)),
            WorkloadSpec::RoundRobinK { rows, length } => {
                events((0..*length).map(|i| rows[(i % rows.len() as u64) as usize]))
            }
            WorkloadSpec::MultiSided {
                base_row,
                victims,
                length,
            } => {
                let aggressors = Self::multi_sided_aggressors(*base_row, *victims);
                events((0..*length).map(|i| aggressors[(i % aggressors.len() as u64) as usize]))
            }
            WorkloadSpec::UniformRandom { lo, hi, length, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                events((0..*length).map(|_| rng.random_range(*lo..*hi)))
            }
            WorkloadSpec::Sweep { lo, hi, burst, length } => {
                let span = (*hi - *lo) as u64;
                events((0..*length).map(|i| lo + ((i / *burst as u64) % span) as u32))
            }
            WorkloadSpec::ParfmWorst {
                rfm_th,
                intervals,
                base_row,
                stride,
                pool,
            } => {
                let r = *rfm_th as u64;
                let pool = *pool as u64;
                events((0..*intervals * r).map(|i| {
                    let slot = i % pool;
                    base_row + *stride * slot as u32
                }))
            }
            WorkloadSpec::ReactiveWorst {
                threshold,
                aggressors,
                base_row,
                stride,
            } => {
                let n = *aggressors as u64;
                events((0..n * *threshold as u64).map(|i| base_row + *stride * (i % n) as u32))
            }
            WorkloadSpec::TraceFile { path } => load_trace(
                path,
                TraceLimits {
                    rows_per_bank,
                    banks: None,
                },
            )?,
        };
        Ok(out)
    }
}

/// Convenience wrapper around [`WorkloadSpec::generate`].
pub fn generate(spec: &WorkloadSpec, rows_per_bank: u32) -> Result<Vec<ActEvent>> {
    spec.generate(rows_per_bank)
}

/// Analytic worst case of a reactive, threshold-triggered scheme that has to
/// buffer its refreshes until the next RFM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactiveWorstCase {
    /// ACTs that fit in one refresh window with one RFM per `rfm_th` ACTs.
    pub total_acts: u64,
    /// Rows that can all reach the threshold within one window.
    pub rows_reaching: u64,
    /// ACTs the last buffered row waits before its refresh.
    pub extra_wait_acts: u64,
    /// Effective per-aggressor count the scheme lets through.
    pub degraded_threshold: u64,
}

/// `total = tREFW(1 - tRFC/tREFI) / (tRC + tRFM/RFM_TH)`, evaluated exactly
/// and floored; `rows_reaching = total / threshold`.
pub fn reactive_worst_case(threshold: u32, rfm_th: u32, timing: &TimingParams) -> Result<ReactiveWorstCase> {
    if threshold == 0 {
        return Err(Error::config("threshold must be >= 1"));
    }
    if rfm_th == 0 {
        return Err(Error::config("rfm_th must be >= 1"));
    }
    let (num, den) = timing.available_time();
    let per_act_den = timing.t_rc().0 as u128 * rfm_th as u128 + timing.t_rfm().0 as u128;
    let total = num * rfm_th as u128 / (den * per_act_den);
    let rows_reaching = (total / threshold as u128) as u64;
    let extra_wait_acts = rows_reaching * rfm_th as u64;
    Ok(ReactiveWorstCase {
        total_acts: total as u64,
        rows_reaching,
        extra_wait_acts,
        degraded_threshold: threshold as u64 + extra_wait_acts,
    })
}

/// Splits a mixed stream into per-bank streams, renumbering `seq` within
/// each bank. Banks come out in ascending order.
pub fn split_by_bank(events: &[ActEvent]) -> Vec<(u32, Vec<ActEvent>)> {
    let mut banks: std::collections::BTreeMap<u32, Vec<ActEvent>> = Default::default();
    for e in events {
        let v = banks.entry(e.bank).or_default();
        let seq = v.len() as u64;
        v.push(ActEvent { seq, ..*e });
    }
    banks.into_iter().collect()
}

/// Bounds checked while reading a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceLimits {
    pub rows_per_bank: u32,
    pub banks: Option<u32>,
}

impl Default for TraceLimits {
    fn default() -> Self {
        TraceLimits {
            rows_per_bank: DEFAULT_ROWS_PER_BANK,
            banks: None,
        }
    }
}

pub fn load_trace(path: impl AsRef<Path>, limits: TraceLimits) -> Result<Vec<ActEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(BufReader::new(file), path, limits)
}

pub fn parse_trace<R: BufRead>(reader: R, path: &Path, limits: TraceLimits) -> Result<Vec<ActEvent>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let raw = line.map_err(|e| Error::io(path, e))?;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            content: raw.clone(),
            message,
        };
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(err("expected `bank,row[,ts_ns]`".into()));
        }
        let bank: u32 = fields[0].parse().map_err(|e| err(format!("bank: {e}")))?;
        let row: u32 = fields[1].parse().map_err(|e| err(format!("row: {e}")))?;
        let ts_ns = match fields.get(2) {
            Some(s) => Some(s.parse::<u64>().map_err(|e| err(format!("ts_ns: {e}")))?),
            None => None,
        };
        if let Some(banks) = limits.banks {
            if bank >= banks {
                return Err(err(format!("bank {bank} out of range (banks = {banks})")));
            }
        }
        if row >= limits.rows_per_bank {
            return Err(err(format!(
                "row {row} out of range (rows_per_bank = {})",
                limits.rows_per_bank
            )));
        }
        let seq = out.len() as u64;
        out.push(ActEvent {
            bank,
            row: Row(row),
            seq,
            ts_ns,
        });
    }
    Ok(out)
}

pub fn write_trace<W: Write>(events: &[ActEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        match e.ts_ns {
            Some(ts) => writeln!(out, "{},{},{}", e.bank, e.row, ts)?,
            None => writeln!(out, "{},{}", e.bank, e.row)?,
        }
    }
    Ok(())
}
