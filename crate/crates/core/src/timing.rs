//! DRAM refresh timing model.
//!
//! Durations are stored as integer picoseconds so that the interval counts
//! derived from them can be computed with exact rational arithmetic. Every
//! DDR5 constant used here is representable exactly at that resolution.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A duration in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Picos(pub u64);

impl Picos {
    pub const ZERO: Picos = Picos(0);

    pub const fn from_ns(ns: u64) -> Self {
        Picos(ns * 1_000)
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Parses a decimal nanosecond literal such as `48.64` without going
    /// through floating point. At most three fractional digits are accepted.
    pub fn parse_ns(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err("empty duration".into());
        }
        if frac_part.len() > 3 {
            return Err(format!("`{s}` has sub-picosecond precision"));
        }
        let digits = |p: &str| p.chars().all(|c| c.is_ascii_digit());
        if !digits(int_part) || !digits(frac_part) {
            return Err(format!("`{s}` is not a non-negative decimal"));
        }
        let whole: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|e| format!("`{s}`: {e}"))?
        };
        let mut frac: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|e| format!("`{s}`: {e}"))?
        };
        for _ in frac_part.len()..3 {
            frac *= 10;
        }
        whole
            .checked_mul(1_000)
            .and_then(|p| p.checked_add(frac))
            .map(Picos)
            .ok_or_else(|| format!("`{s}` overflows"))
    }
}

impl fmt::Display for Picos {
    /// Formats as nanoseconds with trailing fractional zeros removed.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / 1_000;
        let frac = self.0 % 1_000;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:03}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

/// Refresh-window timing constants for one DRAM bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingParams {
    t_refw: Picos,
    t_refi: Picos,
    t_rfc: Picos,
    t_rc: Picos,
    t_rfm: Picos,
    refresh_groups: u32,
}

/// Named presets accepted by [`TimingParams::preset`].
pub const PRESET_NAMES: &[&str] = &["ddr5-32ms", "ddr5-64ms", "synthetic"];

impl TimingParams {
    pub fn new(
        t_refw: Picos,
        t_refi: Picos,
        t_rfc: Picos,
        t_rc: Picos,
        t_rfm: Picos,
        refresh_groups: u32,
    ) -> Result<Self> {
        let t = TimingParams {
            t_refw,
            t_refi,
            t_rfc,
            t_rc,
            t_rfm,
            refresh_groups,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("t_refw", self.t_refw),
            ("t_refi", self.t_refi),
            ("t_rfc", self.t_rfc),
            ("t_rc", self.t_rc),
            ("t_rfm", self.t_rfm),
        ];
        for (name, v) in named {
            if v == Picos::ZERO {
                return Err(Error::InvalidTiming(format!("{name} must be positive")));
            }
        }
        if self.refresh_groups == 0 {
            return Err(Error::InvalidTiming("refresh_groups must be positive".into()));
        }
        // A non-positive numerator here means no time is left for ACTs.
        if self.t_rfc >= self.t_refi {
            return Err(Error::InvalidTiming(format!(
                "t_rfc ({} ns) must be below t_refi ({} ns): no time left for activations",
                self.t_rfc, self.t_refi
            )));
        }
        if self.t_refi > self.t_refw {
            return Err(Error::InvalidTiming(format!(
                "t_refi ({} ns) exceeds t_refw ({} ns)",
                self.t_refi, self.t_refw
            )));
        }
        Ok(())
    }

    /// DDR5-4800 with the given refresh window and 8192 refresh groups:
    /// tRFC 295 ns, tRC 48.64 ns, tRFM 97.28 ns.
    pub fn ddr5(t_refw_ms: u64) -> Self {
        let t_refw = Picos(t_refw_ms * 1_000_000_000);
        let groups = 8192;
        TimingParams::new(
            t_refw,
            Picos(t_refw.0 / groups as u64),
            Picos(295_000),
            Picos(48_640),
            Picos(97_280),
            groups,
        )
        .expect("ddr5 preset is valid")
    }

    /// The default preset: DDR5 with a 32 ms refresh window.
    pub fn ddr5_32ms() -> Self {
        Self::ddr5(32)
    }

    pub fn ddr5_64ms() -> Self {
        Self::ddr5(64)
    }

    /// Small timing for exhaustive simulation: 16 groups, tREFW 12.8 us,
    /// tREFI 800 ns, tRFC 50 ns, tRC 10 ns, tRFM 20 ns. At RFM_TH = 4 this
    /// gives exactly 200 RFM intervals per refresh window.
    pub fn synthetic() -> Self {
        TimingParams::new(
            Picos::from_ns(12_800),
            Picos::from_ns(800),
            Picos::from_ns(50),
            Picos::from_ns(10),
            Picos::from_ns(20),
            16,
        )
        .expect("synthetic preset is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ddr5-32ms" | "ddr5" | "default" => Ok(Self::ddr5_32ms()),
            "ddr5-64ms" => Ok(Self::ddr5_64ms()),
            "synthetic" => Ok(Self::synthetic()),
            other => Err(Error::config(format!(
                "unknown timing preset `{other}` (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    /// Reads a `key = value` timing file. Durations are in nanoseconds.
    /// Recognised keys: `preset` (base values), `t_refw`, `t_refi`, `t_rfc`,
    /// `t_rc`, `t_rfm`, `refresh_groups`. Missing keys fall back to the
    /// preset, or the DDR5 32 ms preset when none is named.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text, path)
    }

    pub(crate) fn parse_kv(text: &str, path: &Path) -> Result<Self> {
        let mut t = Self::ddr5_32ms();
        let mut explicit_refi = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                content: raw.to_string(),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let dur = || Picos::parse_ns(value).map_err(&parse_err);
            match key {
                "preset" => {
                    t = Self::preset(value).map_err(|e| parse_err(e.to_string()))?;
                }
                "t_refw" => t.t_refw = dur()?,
                "t_refi" => {
                    t.t_refi = dur()?;
                    explicit_refi = true;
                }
                "t_rfc" => t.t_rfc = dur()?,
                "t_rc" => t.t_rc = dur()?,
                "t_rfm" => t.t_rfm = dur()?,
                "refresh_groups" => {
                    t.refresh_groups = value.parse().map_err(|e| parse_err(format!("refresh_groups: {e}")))?;
                }
                other => return Err(parse_err(format!("unknown timing key `{other}`"))),
            }
        }
        if !explicit_refi {
            t.t_refi = Picos(t.t_refw.0 / t.refresh_groups.max(1) as u64);
        }
        t.validate()?;
        Ok(t)
    }

    pub fn t_refw(&self) -> Picos {
        self.t_refw
    }
    pub fn t_refi(&self) -> Picos {
        self.t_refi
    }
    pub fn t_rfc(&self) -> Picos {
        self.t_rfc
    }
    pub fn t_rc(&self) -> Picos {
        self.t_rc
    }
    pub fn t_rfm(&self) -> Picos {
        self.t_rfm
    }
    pub fn refresh_groups(&self) -> u32 {
        self.refresh_groups
    }

    /// Time available for ACT/RFM traffic within one refresh window, as the
    /// exact fraction `tREFW * (tREFI - tRFC) / tREFI`.
    pub(crate) fn available_time(&self) -> (u128, u128) {
        let num = self.t_refw.0 as u128 * (self.t_refi.0 - self.t_rfc.0) as u128;
        (num, self.t_refi.0 as u128)
    }

    /// Resolved view for reports.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        vec![
            ("t_refw", self.t_refw.to_string()),
            ("t_refi", self.t_refi.to_string()),
            ("t_rfc", self.t_rfc.to_string()),
            ("t_rc", self.t_rc.to_string()),
            ("t_rfm", self.t_rfm.to_string()),
            ("refresh_groups", self.refresh_groups.to_string()),
        ]
    }
}

impl Default for TimingParams {
    fn default() -> Self {
        Self::ddr5_32ms()
    }
}

impl FromStr for TimingParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}
