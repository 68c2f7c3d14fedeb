//! Helpers shared by the integration suites: fuzz traces, an adaptive
//! adversary, and a reference Counter-based Summary written from the
//! algorithm description alone.

#![allow(dead_code)]

use mithril_core::tracker::Mithril;
use mithril_core::workload::WorkloadSpec;
use mithril_core::{ActEvent, BankController, MithrilConfig, Row, RowTracker, TimingParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ROWS: u32 = 4_096;

pub fn to_events(rows: impl IntoIterator<Item = u32>) -> Vec<ActEvent> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| ActEvent::new(0, Row(r), i as u64))
        .collect()
}

/// One random trace. The style is picked from the seed so a corpus mixes
/// uniform, hot-set, bursty, phased round-robin and skewed traffic.
pub fn fuzz_trace(seed: u64, n_entry: u32, rfm_th: u32, len: usize) -> Vec<ActEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = ROWS - 2;
    let row = |rng: &mut ChaCha8Rng, span: u32, step: u32| 1 + (rng.random_range(0..span) * step) % lim;
    let style = rng.random_range(0..5);
    let step = rng.random_range(1..=3);
    let mut out = Vec::with_capacity(len);
    match style {
        0 => {
            let span = rng.random_range(n_entry.saturating_sub(1).max(1)..=4 * n_entry);
            for _ in 0..len {
                out.push(row(&mut rng, span, step));
            }
        }
        1 => {
            let hot: Vec<u32> = (0..rng.random_range(1..=n_entry))
                .map(|_| row(&mut rng, lim, 1))
                .collect();
            let p: f64 = rng.random_range(0.5..0.99);
            for _ in 0..len {
                if rng.random_bool(p) {
                    out.push(hot[rng.random_range(0..hot.len())]);
                } else {
                    out.push(row(&mut rng, lim, 1));
                }
            }
        }
        2 => {
            while out.len() < len {
                let r = row(&mut rng, 8 * n_entry, step);
                let burst = rng.random_range(1..=2 * rfm_th as usize);
                out.extend(std::iter::repeat_n(r, burst.min(len - out.len())));
            }
        }
        3 => {
            while out.len() < len {
                let k = rng.random_range(1..=2 * n_entry);
                let base = row(&mut rng, lim / 2, 1);
                let phase = rng.random_range(rfm_th as usize..=20 * rfm_th as usize);
                for i in 0..phase.min(len - out.len()) {
                    out.push(1 + (base + step * (i as u32 % k)) % lim);
                }
            }
        }
        _ => {
            let span = rng.random_range(n_entry..=16 * n_entry) as f64;
            for _ in 0..len {
                let u: f64 = rng.random();
                out.push(1 + ((span * u * u * u) as u32 * step) % lim);
            }
        }
    }
    to_events(out)
}

/// Steers ACTs at the rows ranked 2..=k+1 in a live table so that, after
/// every refresh of the top row, the next-largest counts keep growing. Rows
/// are spaced two apart so neighbouring aggressors share victims.
pub fn greedy_adversary(cfg: &MithrilConfig, timing: &TimingParams, k: u32, len: usize) -> Vec<ActEvent> {
    let mut tracker = Mithril::for_config(cfg, timing, ROWS).expect("valid config");
    let mut ctrl = BankController::new(*timing, cfg.rfm_th, false).expect("valid rfm_th");
    let n = cfg.n_entry as usize;
    let mut next_fresh = 10u32;
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let mut ranked: Vec<(u64, u32)> = tracker
            .table
            .entries()
            .iter()
            .zip(tracker.table.shadow_counts())
            .filter_map(|(e, &s)| e.row.map(|r| (s, r.0)))
            .collect();
        ranked.sort_by(|a, b| b.cmp(a));
        let row = if ranked.len() < n {
            next_fresh += 2;
            next_fresh
        } else {
            let idx = 1 + (i % k as usize).min(n - 2);
            ranked[idx.min(ranked.len() - 1)].1
        };
        rows.push(row);
        let ev = ActEvent::new(0, Row(row), i as u64);
        ctrl.step(&mut tracker, &ev, &mut |_, _| {});
    }
    to_events(rows)
}

/// Every adversarial generator at parameters suited to `cfg`.
pub fn adversarial_corpus(cfg: &MithrilConfig, timing: &TimingParams, len: u64) -> Vec<(String, Vec<ActEvent>)> {
    let n = cfg.n_entry;
    let r = cfg.rfm_th;
    let mut out: Vec<(String, Vec<ActEvent>)> = Vec::new();
    let mut push = |name: String, spec: WorkloadSpec| {
        out.push((name, spec.generate(ROWS).expect("generator spec fits the bank")));
    };
    push("single_row".into(), WorkloadSpec::SingleRow { row: 100, length: len });
    for k in [n - 1, n, n + 1, 2 * n, 4 * n] {
        push(
            format!("round_robin_k{k}"),
            WorkloadSpec::RoundRobinK {
                rows: (0..k.max(1)).map(|i| 100 + 2 * i).collect(),
                length: len,
            },
        );
    }
    push(
        "multi_sided".into(),
        WorkloadSpec::MultiSided {
            base_row: 100,
            victims: 32,
            length: len,
        },
    );
    for burst in [1, r, 128] {
        push(
            format!("sweep_b{burst}"),
            WorkloadSpec::Sweep {
                lo: 100,
                hi: 100 + 4 * n,
                burst,
                length: len,
            },
        );
    }
    push(
        "parfm_worst".into(),
        WorkloadSpec::ParfmWorst {
            rfm_th: r,
            intervals: len / r as u64,
            base_row: 100,
            stride: 2,
            pool: r,
        },
    );
    push(
        "reactive_worst".into(),
        WorkloadSpec::ReactiveWorst {
            threshold: (len / (2 * n as u64)).max(1) as u32,
            aggressors: 2 * n,
            base_row: 100,
            stride: 2,
        },
    );
    for k in 1..=n {
        out.push((format!("greedy_k{k}"), greedy_adversary(cfg, timing, k, len as usize)));
    }
    out
}

/// Reference Counter-based Summary. Counts are unbounded; the wrapped view
/// is derived on demand. Ties in both the minimum and maximum go to the
/// lowest slot.
#[derive(Debug, Clone)]
pub struct RefCbs {
    pub rows: Vec<Option<u32>>,
    pub counts: Vec<u64>,
    pub bits: u32,
}

impl RefCbs {
    pub fn new(n: usize, bits: u32) -> Self {
        RefCbs {
            rows: vec![None; n],
            counts: vec![0; n],
            bits,
        }
    }

    pub fn min_slot(&self) -> usize {
        let m = *self.counts.iter().min().unwrap();
        self.counts.iter().position(|&c| c == m).unwrap()
    }

    pub fn max_slot(&self) -> usize {
        let m = *self.counts.iter().max().unwrap();
        self.counts.iter().position(|&c| c == m).unwrap()
    }

    pub fn wrapped(&self, slot: usize) -> u32 {
        (self.counts[slot] % (1u64 << self.bits)) as u32
    }

    pub fn act(&mut self, row: u32) {
        let slot = match self.rows.iter().position(|&r| r == Some(row)) {
            Some(s) => s,
            None => {
                let s = self.min_slot();
                self.rows[s] = Some(row);
                s
            }
        };
        self.counts[slot] += 1;
    }

    /// Returns the refreshed row, if any.
    pub fn rfm(&mut self, ad_th: u32) -> Option<u32> {
        let hi = self.max_slot();
        let lo = self.min_slot();
        if ad_th > 0 && self.counts[hi] - self.counts[lo] <= ad_th as u64 {
            return None;
        }
        let row = self.rows[hi]?;
        self.counts[hi] = self.counts[lo];
        Some(row)
    }

    pub fn estimate(&self, row: u32) -> u64 {
        match self.rows.iter().position(|&r| r == Some(row)) {
            Some(s) => self.counts[s],
            None => self.counts[self.min_slot()],
        }
    }
}

/// Compares a live table with the reference; returns a description of the
/// first difference.
pub fn table_matches(t: &mithril_core::MithrilTable, r: &RefCbs) -> Result<(), String> {
    for (i, e) in t.entries().iter().enumerate() {
        let rrow = r.rows[i].map(Row);
        if e.row != rrow {
            return Err(format!("slot {i}: row {:?} vs reference {:?}", e.row, rrow));
        }
        if e.count != r.wrapped(i) {
            return Err(format!("slot {i}: count {} vs reference {}", e.count, r.wrapped(i)));
        }
        if t.shadow_counts()[i] != r.counts[i] {
            return Err(format!(
                "slot {i}: shadow {} vs reference {}",
                t.shadow_counts()[i],
                r.counts[i]
            ));
        }
    }
    if t.min_index() != r.min_slot() {
        return Err(format!("min pointer {} vs reference {}", t.min_index(), r.min_slot()));
    }
    if t.max_index() != r.max_slot() {
        return Err(format!("max pointer {} vs reference {}", t.max_index(), r.max_slot()));
    }
    Ok(())
}

/// Feeds `rows` to `tracker` with an RFM after every `rfm_th` ACTs.
pub fn drive<T: RowTracker>(tracker: &mut T, rfm_th: u32, rows: &[u32]) {
    for (i, &r) in rows.iter().enumerate() {
        tracker.on_activate(Row(r));
        if (i + 1) % rfm_th as usize == 0 {
            tracker.on_rfm();
        }
    }
}
