//! Closed-form safety bounds for the Mithril tracker.
//!
//! Everything here is a pure function of value inputs. The number of RFM
//! intervals per refresh window is exposed twice: [`compute_w`] is the ceiled
//! integer count used to size audit windows, [`intervals_per_window`] is the
//! real-valued term that enters the growth bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timing::TimingParams;

/// Default upper limit for [`find_min_nentry`].
pub const DEFAULT_SEARCH_CAP: u32 = 1_000_000;

/// Distance over which an aggressor disturbs its neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum BlastRadius {
    One,
    Three,
}

impl BlastRadius {
    pub fn rows(self) -> u32 {
        match self {
            BlastRadius::One => 1,
            BlastRadius::Three => 3,
        }
    }

    /// Summed disturbance a victim sees when every aggressor in range
    /// reaches the same count.
    pub fn aggregated_effect(self) -> f64 {
        match self {
            BlastRadius::One => 2.0,
            BlastRadius::Three => 3.5,
        }
    }
}

impl TryFrom<u32> for BlastRadius {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            1 => Ok(BlastRadius::One),
            3 => Ok(BlastRadius::Three),
            other => Err(Error::config(format!("blast_radius must be 1 or 3, got {other}"))),
        }
    }
}

impl From<BlastRadius> for u32 {
    fn from(b: BlastRadius) -> u32 {
        b.rows()
    }
}

/// Protection parameters of one Mithril bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MithrilConfig {
    pub n_entry: u32,
    pub rfm_th: u32,
    pub ad_th: u32,
    pub flip_th: u32,
    pub blast_radius: BlastRadius,
}

impl MithrilConfig {
    pub fn new(n_entry: u32, rfm_th: u32, ad_th: u32, flip_th: u32, blast_radius: u32) -> Result<Self> {
        let cfg = MithrilConfig {
            n_entry,
            rfm_th,
            ad_th,
            flip_th,
            blast_radius: BlastRadius::try_from(blast_radius)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_entry < 2 {
            return Err(Error::config(format!("n_entry must be >= 2, got {}", self.n_entry)));
        }
        if self.rfm_th < 1 {
            return Err(Error::config("rfm_th must be >= 1"));
        }
        if self.flip_th < 1 {
            return Err(Error::config("flip_th must be >= 1"));
        }
        Ok(())
    }

    /// The victim-disturbance budget the growth bound has to stay under.
    pub fn threshold(&self) -> f64 {
        self.flip_th as f64 / self.blast_radius.aggregated_effect()
    }
}

/// Result of [`is_safe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// RFM intervals per refresh window, ceiled.
    pub w: u64,
    /// RFM intervals per refresh window as a real number.
    pub x: f64,
    pub m: f64,
    pub m_adaptive: f64,
    pub n_star: u32,
    /// `m_adaptive` if adaptive refresh is on, else `m`.
    pub bound: f64,
    pub threshold: f64,
    pub safe: bool,
    pub margin: f64,
}

/// Outcome of a minimal-table search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchOutcome {
    Found(u32),
    NotAchievable,
}

impl SearchOutcome {
    pub fn found(self) -> Option<u32> {
        match self {
            SearchOutcome::Found(n) => Some(n),
            SearchOutcome::NotAchievable => None,
        }
    }
}

fn check_rfm_th(rfm_th: u32) -> Result<()> {
    if rfm_th == 0 {
        Err(Error::config("rfm_th must be >= 1"))
    } else {
        Ok(())
    }
}

fn interval_ratio(timing: &TimingParams, rfm_th: u32) -> (u128, u128) {
    let (num, den) = timing.available_time();
    let per_interval = timing.t_rc().0 as u128 * rfm_th as u128 + timing.t_rfm().0 as u128;
    (num, den * per_interval)
}

/// Maximum number of RFM intervals within one refresh window:
/// `ceil((tREFW - (tREFW/tREFI)·tRFC) / (tRC·RFM_TH + tRFM))`, exact.
pub fn compute_w(timing: &TimingParams, rfm_th: u32) -> Result<u64> {
    check_rfm_th(rfm_th)?;
    let (num, den) = interval_ratio(timing, rfm_th);
    if num == 0 {
        return Err(Error::InvalidTiming("no time available for activations".into()));
    }
    Ok(num.div_ceil(den) as u64)
}

/// The un-ceiled interval count `tREFW(1 - tRFC/tREFI) / (tRC·RFM_TH + tRFM)`.
pub fn intervals_per_window(timing: &TimingParams, rfm_th: u32) -> Result<f64> {
    check_rfm_th(rfm_th)?;
    let (num, den) = interval_ratio(timing, rfm_th);
    if num == 0 {
        return Err(Error::InvalidTiming("no time available for activations".into()));
    }
    // Split off the integer part so the fraction keeps full precision.
    let whole = num / den;
    let rem = num % den;
    Ok(whole as f64 + rem as f64 / den as f64)
}

/// `sum_{k=n}^{1} rfm_th / k`, accumulated from the largest k down.
fn harmonic(n: u32, rfm_th: u32) -> f64 {
    let r = rfm_th as f64;
    (1..=n).rev().fold(0.0, |acc, k| acc + r / k as f64)
}

fn growth_bound(n_entry: u32, rfm_th: u32, x: f64) -> f64 {
    let r = rfm_th as f64;
    harmonic(n_entry, rfm_th) + (r / n_entry as f64) * (x - 2.0)
}

/// Bound on the estimated-count increase of any row within a refresh window
/// when every RFM performs a preventive refresh.
pub fn compute_m(n_entry: u32, rfm_th: u32, timing: &TimingParams) -> Result<f64> {
    if n_entry == 0 {
        return Err(Error::config("n_entry must be >= 1"));
    }
    let x = intervals_per_window(timing, rfm_th)?;
    Ok(growth_bound(n_entry, rfm_th, x))
}

/// `ceil(N·RFM_TH / (RFM_TH + Ad_TH))`, clamped to `[1, N]`.
pub fn compute_n_star(n_entry: u32, rfm_th: u32, ad_th: u32) -> Result<u32> {
    if n_entry == 0 {
        return Err(Error::config("n_entry must be >= 1"));
    }
    check_rfm_th(rfm_th)?;
    let num = n_entry as u64 * rfm_th as u64;
    let den = rfm_th as u64 + ad_th as u64;
    Ok((num.div_ceil(den) as u32).clamp(1, n_entry))
}

fn adaptive_bound(n_entry: u32, rfm_th: u32, ad_th: u32, x: f64) -> f64 {
    let n_star = compute_n_star(n_entry, rfm_th, ad_th).expect("validated inputs");
    let n = n_entry as f64;
    let r = rfm_th as f64;
    // ((X - n* + N - 2)·R + (N - n*)·Ad) / N regrouped as
    // (R/N)(X - 2) + (N - n*)(R + Ad)/N so that n* = N reproduces M exactly.
    let spill = (n_entry - n_star) as f64 * (r + ad_th as f64) / n;
    harmonic(n_star, rfm_th) + (r / n) * (x - 2.0) + spill
}

/// Growth bound under the adaptive refresh policy.
pub fn compute_m_adaptive(cfg: &MithrilConfig, timing: &TimingParams) -> Result<f64> {
    let x = intervals_per_window(timing, cfg.rfm_th)?;
    Ok(adaptive_bound(cfg.n_entry, cfg.rfm_th, cfg.ad_th, x))
}

/// Evaluates every bound for `cfg` and checks it against the disturbance
/// budget. The comparison is strict.
pub fn is_safe(cfg: &MithrilConfig, timing: &TimingParams) -> BoundReport {
    let w = compute_w(timing, cfg.rfm_th).expect("validated config");
    let x = intervals_per_window(timing, cfg.rfm_th).expect("validated config");
    let m = growth_bound(cfg.n_entry, cfg.rfm_th, x);
    let m_adaptive = adaptive_bound(cfg.n_entry, cfg.rfm_th, cfg.ad_th, x);
    let n_star = compute_n_star(cfg.n_entry, cfg.rfm_th, cfg.ad_th).expect("validated config");
    let bound = if cfg.ad_th > 0 { m_adaptive } else { m };
    let threshold = cfg.threshold();
    BoundReport {
        w,
        x,
        m,
        m_adaptive,
        n_star,
        bound,
        threshold,
        safe: bound < threshold,
        margin: threshold - bound,
    }
}

/// The bound that applies to `cfg`: M' with adaptive refresh, otherwise M.
pub fn applicable_bound(cfg: &MithrilConfig, timing: &TimingParams) -> f64 {
    is_safe(cfg, timing).bound
}

/// Smallest table that keeps `(flip_th, rfm_th, ad_th)` safe; see
/// [`find_min_nentry_capped`].
pub fn find_min_nentry(
    flip_th: u32,
    rfm_th: u32,
    ad_th: u32,
    timing: &TimingParams,
    blast: BlastRadius,
) -> Result<SearchOutcome> {
    find_min_nentry_capped(flip_th, rfm_th, ad_th, timing, blast, DEFAULT_SEARCH_CAP)
}

/// Searches for the smallest `n_entry <= cap` that [`is_safe`] accepts.
///
/// The growth bound falls with `n_entry` until roughly `X - 2` entries and
/// rises after that, so the search bisects the falling branch and then steps
/// down while the predecessor is still safe.
pub fn find_min_nentry_capped(
    flip_th: u32,
    rfm_th: u32,
    ad_th: u32,
    timing: &TimingParams,
    blast: BlastRadius,
    cap: u32,
) -> Result<SearchOutcome> {
    if flip_th < 4 {
        return Err(Error::config(format!("flip_th must be >= 4, got {flip_th}")));
    }
    check_rfm_th(rfm_th)?;
    if cap < 2 {
        return Err(Error::config("search cap must be >= 2"));
    }
    let x = intervals_per_window(timing, rfm_th)?;
    let threshold = flip_th as f64 / blast.aggregated_effect();
    let safe_at = |n: u32| {
        let b = if ad_th > 0 {
            adaptive_bound(n, rfm_th, ad_th, x)
        } else {
            growth_bound(n, rfm_th, x)
        };
        b < threshold
    };

    let turn = (x - 2.0).ceil().clamp(2.0, cap as f64) as u32;
    let peak = [turn.saturating_sub(1), turn, turn.saturating_add(1)]
        .into_iter()
        .filter(|&n| (2..=cap).contains(&n))
        .find(|&n| safe_at(n));
    let Some(mut hi) = peak else {
        return Ok(SearchOutcome::NotAchievable);
    };

    let mut lo = 2;
    if safe_at(lo) {
        return Ok(SearchOutcome::Found(lo));
    }
    // invariant: !safe_at(lo) && safe_at(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if safe_at(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    while hi > 2 && safe_at(hi - 1) {
        hi -= 1;
    }
    Ok(SearchOutcome::Found(hi))
}

/// Bytes needed for `n_entry` (row address, counter) pairs.
pub fn table_size_bytes(n_entry: u32, row_address_bits: u32, counter_bits: u32) -> Result<f64> {
    if n_entry == 0 || row_address_bits == 0 || counter_bits == 0 {
        return Err(Error::config("table size inputs must be positive"));
    }
    Ok(n_entry as f64 * (row_address_bits + counter_bits) as f64 / 8.0)
}

/// Counter width that can represent `bound + rfm_th` with one spare bit so
/// that half-modulus wrapped ordering stays unambiguous:
/// `ceil(log2(bound + rfm_th + 1)) + 1`.
pub fn default_counter_bits(bound: f64, rfm_th: u32) -> u32 {
    let span = bound.max(0.0) + rfm_th as f64 + 1.0;
    let mut bits = 0u32;
    while (2f64).powi(bits as i32) < span {
        bits += 1;
    }
    (bits + 1).clamp(2, 32)
}

/// Row address width for a bank with `rows_per_bank` rows.
pub fn row_address_bits(rows_per_bank: u32) -> u32 {
    let mut bits = 1;
    while bits < 32 && (1u64 << bits) < rows_per_bank as u64 {
        bits += 1;
    }
    bits
}


#[cfg(test)]
mod tests {
    use super::test_timing::*;
    use super::*;

    fn cfg(n: u32, r: u32, ad: u32, flip: u32, blast: u32) -> MithrilConfig {
        MithrilConfig::new(n, r, ad, flip, blast).unwrap()
    }

    #[test]
    fn w_on_ddr5_32ms_is_9216() {
        // 32e6 - 8192·295 = 29_583_360 ns; 48.64·64 + 97.28 = 3210.24 ns.
        let oracle = (29_583_360.0f64 / 3210.24).ceil() as u64;
        assert_eq!(oracle, 9216);
        assert_eq!(compute_w(&TimingParams::ddr5_32ms(), 64).unwrap(), 9216);
    }

    #[test]
    fn w_ceiling_on_exact_and_inexact_ratios() {
        assert_eq!(compute_w(&x10(), 4).unwrap(), 10);
        let t = with_available(10_001, 200, 200);
        assert_eq!(compute_w(&t, 4).unwrap(), 11);
        assert_eq!(intervals_per_window(&x10(), 4).unwrap(), 10.0);
        assert!(compute_w(&x10(), 0).is_err());
    }

    #[test]
    fn m_closed_form_examples() {
        assert_eq!(compute_m(2, 4, &x10()).unwrap(), 22.0);
        // n_entry = 1, rfm_th = 1, X = 2: tRC + tRFM = 5000 ns for 10_000 ns available.
        let t = with_available(10_000, 2_500, 2_500);
        assert_eq!(compute_m(1, 1, &t).unwrap(), 1.0);
        assert!(compute_m(0, 4, &x10()).is_err());
    }

    #[test]
    fn m_at_256_entries_rfm_128() {
        let m = compute_m(256, 128, &TimingParams::ddr5_32ms()).unwrap();
        assert!((3_100.0..3_140.0).contains(&m), "{m}");
        assert!(m < 3125.0);
        assert!(compute_m(255, 128, &TimingParams::ddr5_32ms()).unwrap() >= 3125.0);
    }

    #[test]
    fn n_star_examples() {
        assert_eq!(compute_n_star(8, 64, 200).unwrap(), 2);
        assert_eq!(compute_n_star(8, 64, 0).unwrap(), 8);
        assert_eq!(compute_n_star(4, 1, 1000).unwrap(), 1);
    }

    #[test]
    fn m_adaptive_examples() {
        // X = W = 100 at rfm_th = 64: tRC·64 + tRFM = 700 ns over 70_000 ns.
        let t = with_available(70_000, 10, 60);
        assert_eq!(compute_w(&t, 64).unwrap(), 100);
        let c = cfg(8, 64, 200, 10_000, 1);
        assert_eq!(compute_m_adaptive(&c, &t).unwrap(), 1078.0);

        let c = cfg(2, 4, 0, 50, 1);
        assert_eq!(compute_m_adaptive(&c, &x10()).unwrap(), 22.0);
    }

    #[test]
    fn is_safe_examples() {
        let r = is_safe(&cfg(2, 4, 0, 50, 1), &x10());
        assert!(r.safe);
        assert_eq!(r.margin, 3.0);
        assert_eq!(r.bound, 22.0);

        assert!(!is_safe(&cfg(2, 4, 0, 44, 1), &x10()).safe);

        let r = is_safe(&cfg(2, 4, 0, 80, 3), &x10());
        assert!(r.safe);
        assert!((r.threshold - 80.0 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_other_blast_radii() {
        assert!(MithrilConfig::new(4, 4, 0, 100, 2).is_err());
        assert!(MithrilConfig::new(1, 4, 0, 100, 1).is_err());
        assert!(MithrilConfig::new(4, 0, 0, 100, 1).is_err());
    }

    fn linear_scan(flip: u32, r: u32, t: &TimingParams) -> Option<u32> {
        (2..5_000).find(|&n| compute_m(n, r, t).unwrap() < flip as f64 / 2.0)
    }

    #[test]
    fn min_nentry_matches_linear_scan() {
        let oracle = linear_scan(100, 4, &x10());
        let got = find_min_nentry(100, 4, 0, &x10(), BlastRadius::One).unwrap();
        assert_eq!(got.found(), oracle);
        assert!(oracle.is_some());

        let ddr5 = TimingParams::ddr5_32ms();
        let oracle = linear_scan(6_250, 128, &ddr5);
        assert_eq!(oracle, Some(256));
        let got = find_min_nentry(6_250, 128, 0, &ddr5, BlastRadius::One).unwrap();
        assert_eq!(got, SearchOutcome::Found(256));
    }

    #[test]
    fn min_nentry_not_achievable() {
        let got = find_min_nentry(4, 256, 0, &TimingParams::ddr5_32ms(), BlastRadius::One).unwrap();
        assert_eq!(got, SearchOutcome::NotAchievable);
        assert!(find_min_nentry(3, 4, 0, &x10(), BlastRadius::One).is_err());
    }

    #[test]
    fn table_size_examples() {
        assert_eq!(table_size_bytes(256, 16, 13).unwrap(), 928.0);
        assert_eq!(table_size_bytes(1, 8, 8).unwrap(), 2.0);
        assert!(table_size_bytes(0, 16, 13).is_err());
    }

    #[test]
    fn counter_bits_for_reference_point() {
        let m = compute_m(256, 128, &TimingParams::ddr5_32ms()).unwrap();
        assert_eq!(default_counter_bits(m, 128), 13);
        assert_eq!(row_address_bits(65_536), 16);
        assert_eq!(row_address_bits(100), 7);
    }
}
