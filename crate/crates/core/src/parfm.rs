//! PARFM, the probabilistic RFM baseline, and its analytic failure model.
//!
//! At each RFM the DRAM samples one of the rows activated since the previous
//! RFM uniformly at random and refreshes that row's victims.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BlastRadius};
use crate::error::{Error, Result};
use crate::par;
use crate::timing::TimingParams;
use crate::tracker::{victims_of, RefreshDecision, Row, RowTracker};

/// Probabilities below this are flushed to zero.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Largest RFM_TH considered by [`solve_rfm_th`].
pub const MAX_RFM_TH: u32 = 1 << 16;

/// Derives an independent stream seed from a base seed and an index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runtime state of one PARFM bank.
#[derive(Debug, Clone)]
pub struct ParfmState {
    window: VecDeque<Row>,
    rfm_th: u32,
    rng_seed: u64,
    rng: ChaCha8Rng,
    blast_radius: BlastRadius,
    rows_per_bank: u32,
}

impl ParfmState {
    pub fn new(rfm_th: u32, rng_seed: u64, blast_radius: BlastRadius, rows_per_bank: u32) -> Result<Self> {
        if rfm_th == 0 {
            return Err(Error::config("rfm_th must be >= 1"));
        }
        Ok(ParfmState {
            window: VecDeque::with_capacity(rfm_th as usize),
            rfm_th,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            blast_radius,
            rows_per_bank,
        })
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn window(&self) -> impl Iterator<Item = Row> + '_ {
        self.window.iter().copied()
    }

    pub fn record(&mut self, row: Row) {
        if self.window.len() == self.rfm_th as usize {
            self.window.pop_front();
        }
        self.window.push_back(row);
    }

    /// Samples one row of the current window uniformly and clears the window.
    pub fn parfm_on_rfm(&mut self) -> Option<Row> {
        if self.window.is_empty() {
            return None;
        }
        let pick = self.rng.random_range(0..self.window.len());
        let row = self.window[pick];
        self.window.clear();
        Some(row)
    }
}

impl RowTracker for ParfmState {
    fn on_activate(&mut self, row: Row) {
        self.record(row);
    }

    fn on_rfm(&mut self) -> RefreshDecision {
        match self.parfm_on_rfm() {
            Some(row) => RefreshDecision {
                refreshed: true,
                aggressor: Some(row),
                victims: victims_of(row, self.blast_radius, self.rows_per_bank),
                skipped_by_adaptive: false,
            },
            None => RefreshDecision::default(),
        }
    }

    fn refresh_pending(&self) -> bool {
        !self.window.is_empty()
    }
}

/// Attacker cost-effectiveness of activating a row `j` times per RFM
/// interval: `(1 - j/RFM_TH)^(1/j)`.
pub fn cost_effectiveness(j: u32, rfm_th: u32) -> Result<f64> {
    if j == 0 || j > rfm_th {
        return Err(Error::config(format!(
            "need 1 <= j <= rfm_th, got j={j}, rfm_th={rfm_th}"
        )));
    }
    let base = 1.0 - j as f64 / rfm_th as f64;
    Ok(base.powf(1.0 / j as f64))
}

/// Inputs to the single-row failure recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureModel {
    pub rfm_th: u32,
    pub flip_th: u32,
    /// Number of RFM commands in the window.
    pub horizon_intervals: u64,
    pub n_banks: u32,
}

impl FailureModel {
    fn validate(&self) -> Result<()> {
        if self.rfm_th == 0 {
            return Err(Error::config("rfm_th must be >= 1"));
        }
        if self.flip_th < 4 || !self.flip_th.is_multiple_of(2) {
            return Err(Error::config(format!(
                "flip_th must be even and >= 4, got {}",
                self.flip_th
            )));
        }
        if self.n_banks == 0 {
            return Err(Error::config("n_banks must be >= 1"));
        }
        Ok(())
    }
}

fn flush(p: f64) -> f64 {
    if p != 0.0 && p.abs() < PROBABILITY_FLOOR {
        log::debug!("probability {p:e} flushed to zero");
        0.0
    } else {
        p
    }
}

/// The failure probability curve `P[0..=horizon]` for one aggressor row.
pub fn failure_curve(model: &FailureModel) -> Result<Vec<f64>> {
    model.validate()?;
    let half = (model.flip_th / 2) as usize;
    let horizon = model.horizon_intervals as usize;
    let r = model.rfm_th as f64;
    // (1 - 1/R)^(F/2) in log space; R = 1 gives ln(0) = -inf and so 0.
    let survive = flush((half as f64 * (-1.0 / r).ln_1p()).exp());
    let step = survive / r;

    let mut p = vec![0.0f64; horizon + 1];
    if horizon < half {
        return Ok(p);
    }
    p[half] = survive;
    // The curve converges to 1; rounding can carry it one ulp past.
    for i in half + 1..=horizon {
        p[i] = flush((p[i - 1] + step * (1.0 - p[i - half - 1])).min(1.0));
    }
    Ok(p)
}

/// Upper bound on the probability that one row reaches half the flip
/// threshold without being sampled within the horizon.
pub fn fail_single_row(model: &FailureModel) -> Result<f64> {
    Ok(*failure_curve(model)?.last().expect("curve is non-empty"))
}

/// First term of the bank failure series, `C(RFM_TH, 1)·Fail(1)`, capped at 1.
pub fn bank_failure(fail1: f64, rfm_th: u32) -> f64 {
    (rfm_th as f64 * fail1).min(1.0)
}

/// `1 - (1 - p)^n_banks`, evaluated without cancellation for tiny `p`.
pub fn system_failure(p: f64, n_banks: u32) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    -(n_banks as f64 * (-p).ln_1p()).exp_m1()
}

/// Everything the PARFM analysis reports for one RFM_TH.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParfmAnalysis {
    pub rfm_th: u32,
    pub horizon_intervals: u64,
    pub fail1: f64,
    pub bank_failure: f64,
    pub system_failure: f64,
}

/// Evaluates the failure model over one refresh window of `timing`.
pub fn analyze(flip_th: u32, rfm_th: u32, n_banks: u32, timing: &TimingParams) -> Result<ParfmAnalysis> {
    let horizon_intervals = bounds::compute_w(timing, rfm_th)?;
    let model = FailureModel {
        rfm_th,
        flip_th,
        horizon_intervals,
        n_banks,
    };
    let fail1 = fail_single_row(&model)?;
    let bank = bank_failure(fail1, rfm_th);
    Ok(ParfmAnalysis {
        rfm_th,
        horizon_intervals,
        fail1,
        bank_failure: bank,
        system_failure: system_failure(bank, n_banks),
    })
}

/// Largest RFM_TH whose system failure probability over one refresh window
/// stays below `target_prob`.
pub fn solve_rfm_th(flip_th: u32, target_prob: f64, n_banks: u32, timing: &TimingParams) -> Result<u32> {
    if !(target_prob > 0.0 && target_prob < 1.0) {
        return Err(Error::config(format!(
            "target probability must be in (0, 1), got {target_prob}"
        )));
    }
    let ok = |r: u32| -> Result<bool> { Ok(analyze(flip_th, r, n_banks, timing)?.system_failure < target_prob) };
    if !ok(1)? {
        return Err(Error::NotAchievable(format!(
            "failure probability {target_prob:e} for flip_th {flip_th} even at rfm_th 1"
        )));
    }
    let mut lo = 1;
    let mut hi = 2;
    while hi <= MAX_RFM_TH && ok(hi)? {
        lo = hi;
        hi *= 2;
    }
    if hi > MAX_RFM_TH {
        return Ok(lo);
    }
    // invariant: ok(lo) && !ok(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Empirical single-row failure frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub trials: u64,
    pub failures: u64,
    pub frequency: f64,
    pub std_error: f64,
    pub seed: u64,
    pub horizon_intervals: u64,
}

/// One Monte Carlo trial of the worst-case PARFM pattern: `rfm_th` distinct
/// rows activated once per interval. Returns whether row 0 accumulated
/// `flip_th / 2` activations without being sampled within `horizon`
/// intervals. Parameters are assumed valid.
pub fn monte_carlo_trial(flip_th: u32, rfm_th: u32, horizon: u64, seed: u64) -> bool {
    let half = (flip_th / 2) as u64;
    let mut state = ParfmState::new(rfm_th, seed, BlastRadius::One, u32::MAX).expect("rfm_th >= 1");
    let mut since_sampled = vec![0u64; rfm_th as usize];
    for _ in 0..horizon {
        for (r, count) in since_sampled.iter_mut().enumerate() {
            state.record(Row(r as u32));
            *count += 1;
        }
        if let Some(row) = state.parfm_on_rfm() {
            since_sampled[row.index()] = 0;
        }
        if since_sampled[0] >= half {
            return true;
        }
    }
    false
}

/// Runs `trials` independent [`monte_carlo_trial`]s. Trial `t` is seeded
/// from `(seed, t)` so the result does not depend on scheduling.
pub fn monte_carlo_fail1(
    flip_th: u32,
    rfm_th: u32,
    horizon: u64,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    FailureModel {
        rfm_th,
        flip_th,
        horizon_intervals: horizon,
        n_banks: 1,
    }
    .validate()?;
    let one_trial = |t: u64| monte_carlo_trial(flip_th, rfm_th, horizon, derive_seed(seed, t));
    let failures = par::sum_range(trials, |t| one_trial(t) as u64);
    let frequency = failures as f64 / trials.max(1) as f64;
    let std_error = (frequency * (1.0 - frequency) / trials.max(1) as f64).sqrt();
    Ok(MonteCarloEstimate {
        trials,
        failures,
        frequency,
        std_error,
        seed,
        horizon_intervals: horizon,
    })
}
