//! Reportable runs: bound queries, configuration sweeps, simulations with an
//! oracle verdict, PARFM analysis and full trace verification.
//!
//! An [`ExperimentConfig`] is built from `key = value` settings, which come
//! from a config file, from command-line flags, or both (later settings
//! win). Every report embeds the resolved configuration and the seed, and
//! contains no timestamps, so rerunning a config reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    self, applicable_bound, default_counter_bits, find_min_nentry, is_safe, row_address_bits, table_size_bytes,
    BlastRadius, BoundReport, MithrilConfig, SearchOutcome,
};
use crate::controller::{write_command_log, BankController, IssuedCommand, TimeMode};
use crate::error::{Error, Result};
use crate::oracle::{
    run_bank, write_violations_csv, AuditedMithril, BankCounts, BoundAuditor, InequalityAuditor, OracleState,
    Violation, ViolationKind,
};
use crate::par;
use crate::parfm::{self, derive_seed, MonteCarloEstimate, ParfmAnalysis, ParfmState};
use crate::timing::TimingParams;
use crate::tracker::{Mithril, MithrilTable, RefreshDecision, Row, RowTracker};
use crate::workload::{reactive_worst_case, split_by_bank, ActEvent, TraceLimits, WorkloadSpec, DEFAULT_ROWS_PER_BANK};

pub const SCHEMA_VERSION: u32 = 1;

/// Flip thresholds of the default sweep grid.
pub const DEFAULT_SWEEP_FLIP_THS: &[u32] = &[50_000, 25_000, 12_500, 6_250, 3_125, 1_500];
/// RFM thresholds of the default sweep grid.
pub const DEFAULT_SWEEP_RFM_THS: &[u32] = &[8, 16, 32, 64, 128, 256];

/// Violations listed in a JSON report; the CSV side file has all of them.
const REPORTED_VIOLATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bound,
    Sweep,
    Simulate,
    Parfm,
    Verify,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bound => "bound",
            Mode::Sweep => "sweep",
            Mode::Simulate => "simulate",
            Mode::Parfm => "parfm",
            Mode::Verify => "verify",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bound" => Ok(Mode::Bound),
            "sweep" => Ok(Mode::Sweep),
            "simulate" => Ok(Mode::Simulate),
            "parfm" => Ok(Mode::Parfm),
            "verify" => Ok(Mode::Verify),
            other => Err(Error::config(format!(
                "mode: unknown value `{other}` (expected bound, sweep, simulate, parfm or verify)"
            ))),
        }
    }
}

/// Which tracker sits behind the RFM interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Mithril,
    /// Mithril with the controller skipping RFMs the tracker flags as
    /// unnecessary.
    MithrilPlus,
    Parfm,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mithril" => Ok(Scheme::Mithril),
            "mithril_plus" | "mithril+" => Ok(Scheme::MithrilPlus),
            "parfm" => Ok(Scheme::Parfm),
            other => Err(Error::config(format!(
                "scheme: unknown value `{other}` (expected mithril, mithril_plus or parfm)"
            ))),
        }
    }
}

/// Per-operation weights for [`energy_proxy`], in arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub act: f64,
    pub pre: f64,
    pub victim_refresh: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            act: 1.0,
            pre: 1.0,
            victim_refresh: 2.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("act_energy", self.act),
            ("pre_energy", self.pre),
            ("refresh_energy", self.victim_refresh),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!(
                    "{name}: weight must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Command counts behind the dynamic-energy proxy. Every ACT is followed by
/// a PRE (closed-page policy).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub act_count: u64,
    pub pre_count: u64,
    pub preventive_refresh_count: u64,
    pub rfm_issued: u64,
    pub rfm_skipped: u64,
    pub victims_refreshed: u64,
    pub energy_proxy: f64,
}

impl EnergyReport {
    pub fn from_counts(counts: &BankCounts, weights: &EnergyWeights) -> Self {
        let mut r = EnergyReport {
            act_count: counts.acts,
            pre_count: counts.acts,
            preventive_refresh_count: counts.preventive_refreshes,
            rfm_issued: counts.rfm_issued,
            rfm_skipped: counts.rfm_skipped,
            victims_refreshed: counts.victims_refreshed,
            energy_proxy: 0.0,
        };
        r.energy_proxy = energy_proxy(&r, weights);
        r
    }

    /// Share of RFM opportunities that ended in a preventive refresh.
    pub fn refresh_ratio(&self) -> f64 {
        let opportunities = self.rfm_issued + self.rfm_skipped;
        if opportunities == 0 {
            0.0
        } else {
            self.preventive_refresh_count as f64 / opportunities as f64
        }
    }

    fn add(&mut self, other: &EnergyReport) {
        self.act_count += other.act_count;
        self.pre_count += other.pre_count;
        self.preventive_refresh_count += other.preventive_refresh_count;
        self.rfm_issued += other.rfm_issued;
        self.rfm_skipped += other.rfm_skipped;
        self.victims_refreshed += other.victims_refreshed;
        self.energy_proxy += other.energy_proxy;
    }
}

/// Weighted sum of ACTs, PREs and refreshed victim rows.
pub fn energy_proxy(report: &EnergyReport, weights: &EnergyWeights) -> f64 {
    report.act_count as f64 * weights.act
        + report.pre_count as f64 * weights.pre
        + report.victims_refreshed as f64 * weights.victim_refresh
}

/// One `key = value` setting and where it came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

impl Setting {
    pub fn new(key: impl Into<String>, value: impl Into<String>, origin: impl Into<String>) -> Self {
        Setting {
            key: key.into(),
            value: value.into(),
            origin: origin.into(),
        }
    }
}

/// Every key a config may set.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "timing",
    "timing_file",
    "scheme",
    "n_entry",
    "rfm_th",
    "ad_th",
    "flip_th",
    "blast_radius",
    "counter_bits",
    "rows_per_bank",
    "banks",
    "seed",
    "output",
    "jobs",
    "time_mode",
    "flip_ths",
    "rfm_ths",
    "n_banks",
    "target",
    "horizon",
    "trials",
    "act_energy",
    "pre_energy",
    "refresh_energy",
    "workload",
    "row",
    "rows",
    "k",
    "length",
    "base_row",
    "victims",
    "lo",
    "hi",
    "burst",
    "intervals",
    "stride",
    "pool",
    "threshold",
    "aggressors",
    "path",
];

/// Reads `key = value` lines. `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: PathBuf::from(origin),
                line: i + 1,
                content: raw.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let key = k.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Parse {
                path: PathBuf::from(origin),
                line: i + 1,
                content: raw.to_string(),
                message: format!("unknown key `{key}`"),
            });
        }
        out.push(Setting::new(key, v.trim(), format!("{origin}:{}", i + 1)));
    }
    Ok(out)
}

pub fn read_config_file(path: impl AsRef<Path>) -> Result<Vec<Setting>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text, &path.display().to_string())
}

/// Last value wins for each key.
struct Settings {
    map: BTreeMap<String, (String, String)>,
}

impl Settings {
    fn new(settings: &[Setting]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for s in settings {
            if !CONFIG_KEYS.contains(&s.key.as_str()) {
                return Err(Error::config(format!("{}: unknown key `{}`", s.origin, s.key)));
            }
            map.insert(s.key.clone(), (s.value.clone(), s.origin.clone()));
        }
        Ok(Settings { map })
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, origin)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(format!("{origin}: {key}: invalid value `{v}`: {e}"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<u32>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, origin)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<u32>()
                        .map_err(|e| Error::config(format!("{origin}: {key}: invalid entry `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn origin(&self, key: &str) -> String {
        self.map
            .get(key)
            .map(|(_, o)| o.clone())
            .unwrap_or_else(|| "config".into())
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Preset name, or the path of the timing file.
    pub timing_source: String,
    #[serde(skip)]
    pub timing: TimingParams,
    pub scheme: Scheme,
    /// Table size; when absent the smallest safe size is used.
    pub n_entry: Option<u32>,
    pub rfm_th: u32,
    pub ad_th: u32,
    pub flip_th: u32,
    pub blast_radius: BlastRadius,
    pub counter_bits: Option<u32>,
    pub rows_per_bank: u32,
    /// Highest bank count a trace may use.
    pub banks: Option<u32>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub time_mode: TimeMode,
    pub flip_ths: Vec<u32>,
    pub rfm_ths: Vec<u32>,
    pub n_banks: u32,
    pub target: f64,
    /// RFM intervals for the Monte Carlo check; defaults to W.
    pub horizon: Option<u64>,
    pub trials: u64,
    pub weights: EnergyWeights,
    pub workload: Option<WorkloadSpec>,
}

impl ExperimentConfig {
    /// Resolves `settings` for `mode`. Checks that every field the mode
    /// needs is present and valid, and names the offending key otherwise.
    pub fn from_settings(mode: Mode, settings: &[Setting]) -> Result<Self> {
        let s = Settings::new(settings)?;
        if let Some(m) = s.get::<String>("mode")? {
            let m: Mode = m.parse()?;
            if m != mode {
                return Err(Error::config(format!(
                    "{}: mode: config says `{m}` but `{mode}` was requested",
                    s.origin("mode")
                )));
            }
        }

        let (timing_source, timing) = match (s.raw("timing"), s.raw("timing_file")) {
            (Some(_), Some(_)) => {
                return Err(Error::config("timing and timing_file are mutually exclusive"));
            }
            (_, Some(path)) => (path.to_string(), TimingParams::from_file(path)?),
            (Some(name), None) => (
                name.to_string(),
                TimingParams::preset(name)
                    .map_err(|e| Error::config(format!("{}: timing: {}", s.origin("timing"), e.detail())))?,
            ),
            (None, None) => ("ddr5-32ms".to_string(), TimingParams::ddr5_32ms()),
        };

        let blast: u32 = s.get_or("blast_radius", 1)?;
        let blast_radius = BlastRadius::try_from(blast)
            .map_err(|e| Error::config(format!("{}: blast_radius: {}", s.origin("blast_radius"), e.detail())))?;

        let weights = EnergyWeights {
            act: s.get_or("act_energy", 1.0)?,
            pre: s.get_or("pre_energy", 1.0)?,
            victim_refresh: s.get_or("refresh_energy", 2.0)?,
        };
        weights.validate()?;

        let time_mode = match s.raw("time_mode") {
            None | Some("back_to_back") => TimeMode::BackToBack,
            Some("paced") => TimeMode::Paced,
            Some(other) => {
                return Err(Error::config(format!(
                    "{}: time_mode: unknown value `{other}` (expected back_to_back or paced)",
                    s.origin("time_mode")
                )))
            }
        };

        let mut cfg = ExperimentConfig {
            mode,
            timing_source,
            timing,
            scheme: s.get_or::<String>("scheme", "mithril".into())?.parse()?,
            n_entry: s.get("n_entry")?,
            rfm_th: s.get_or("rfm_th", 64)?,
            ad_th: s.get_or("ad_th", 0)?,
            flip_th: s.get_or("flip_th", 6_250)?,
            blast_radius,
            counter_bits: s.get("counter_bits")?,
            rows_per_bank: s.get_or("rows_per_bank", DEFAULT_ROWS_PER_BANK)?,
            banks: s.get("banks")?,
            seed: s.get_or("seed", 0)?,
            output: s.get::<PathBuf>("output")?,
            jobs: s.get("jobs")?,
            time_mode,
            flip_ths: s.list("flip_ths")?.unwrap_or_else(|| DEFAULT_SWEEP_FLIP_THS.to_vec()),
            rfm_ths: s.list("rfm_ths")?.unwrap_or_else(|| DEFAULT_SWEEP_RFM_THS.to_vec()),
            n_banks: s.get_or("n_banks", 22)?,
            target: s.get_or("target", 1e-15)?,
            horizon: s.get("horizon")?,
            trials: s.get_or("trials", 0)?,
            weights,
            workload: None,
        };

        let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{}: {key}: {msg}", s.origin(key))))
            }
        };
        check(cfg.rfm_th >= 1, "rfm_th", "must be >= 1")?;
        check(cfg.flip_th >= 4, "flip_th", "must be >= 4")?;
        check(cfg.n_entry.is_none_or(|n| n >= 2), "n_entry", "must be >= 2")?;
        check(cfg.rows_per_bank >= 2, "rows_per_bank", "must be >= 2")?;
        check(cfg.banks.is_none_or(|b| b >= 1), "banks", "must be >= 1")?;
        check(cfg.n_banks >= 1, "n_banks", "must be >= 1")?;
        check(
            cfg.counter_bits.is_none_or(|b| (2..=32).contains(&b)),
            "counter_bits",
            "must be in 2..=32",
        )?;
        check(!cfg.flip_ths.is_empty(), "flip_ths", "must list at least one value")?;
        check(!cfg.rfm_ths.is_empty(), "rfm_ths", "must list at least one value")?;
        check(cfg.rfm_ths.iter().all(|&r| r >= 1), "rfm_ths", "entries must be >= 1")?;
        check(cfg.flip_ths.iter().all(|&f| f >= 4), "flip_ths", "entries must be >= 4")?;

        if s.has("workload") || matches!(mode, Mode::Simulate | Mode::Verify) {
            cfg.workload = Some(workload_from_settings(&s, &cfg)?);
        }
        if matches!(mode, Mode::Simulate | Mode::Verify) && cfg.scheme != Scheme::Parfm {
            cfg.resolved_n_entry()?;
        }
        Ok(cfg)
    }

    pub fn mithril_config(&self, n_entry: u32) -> Result<MithrilConfig> {
        MithrilConfig::new(n_entry, self.rfm_th, self.ad_th, self.flip_th, self.blast_radius.into())
    }

    /// `n_entry` as configured, or the smallest safe table.
    pub fn resolved_n_entry(&self) -> Result<u32> {
        if let Some(n) = self.n_entry {
            return Ok(n);
        }
        match find_min_nentry(self.flip_th, self.rfm_th, self.ad_th, &self.timing, self.blast_radius)? {
            SearchOutcome::Found(n) => Ok(n),
            SearchOutcome::NotAchievable => Err(Error::NotAchievable(format!(
                "no n_entry keeps flip_th {} safe at rfm_th {} (ad_th {}); set n_entry explicitly",
                self.flip_th, self.rfm_th, self.ad_th
            ))),
        }
    }

    fn timing_map(&self) -> BTreeMap<&'static str, String> {
        self.timing.describe().into_iter().collect()
    }
}

fn workload_from_settings(s: &Settings, cfg: &ExperimentConfig) -> Result<WorkloadSpec> {
    let kind: String = s
        .get("workload")?
        .ok_or_else(|| Error::config(format!("workload: required for mode {}", cfg.mode)))?;
    let length: u64 = s.get_or("length", 100_000)?;
    let base_row: u32 = s.get_or("base_row", 1_000)?;
    let stride: u32 = s.get_or("stride", 2)?;
    let rows = cfg.rows_per_bank;
    let spec = match kind.as_str() {
        "single_row" => WorkloadSpec::SingleRow {
            row: s.get_or("row", base_row)?,
            length,
        },
        "round_robin_k" => {
            let rows = match s.list("rows")? {
                Some(r) => r,
                None => {
                    let k: u32 = s.get_or("k", 2)?;
                    (0..k).map(|i| base_row + stride * i).collect()
                }
            };
            WorkloadSpec::RoundRobinK { rows, length }
        }
        "multi_sided" => WorkloadSpec::MultiSided {
            base_row,
            victims: s.get_or("victims", 32)?,
            length,
        },
        "uniform_random" => WorkloadSpec::UniformRandom {
            lo: s.get_or("lo", 0)?,
            hi: s.get_or("hi", rows)?,
            length,
            seed: cfg.seed,
        },
        "sweep" => WorkloadSpec::Sweep {
            lo: s.get_or("lo", 0)?,
            hi: s.get_or("hi", rows)?,
            burst: s.get_or("burst", crate::workload::SWEEP_BURST)?,
            length,
        },
        "parfm_worst" => WorkloadSpec::ParfmWorst {
            rfm_th: cfg.rfm_th,
            intervals: match s.get("intervals")? {
                Some(i) => i,
                None => bounds::compute_w(&cfg.timing, cfg.rfm_th)?,
            },
            base_row,
            stride,
            pool: s.get_or("pool", cfg.rfm_th)?,
        },
        "reactive_worst" => {
            let threshold: u32 = s.get_or("threshold", 2_000)?;
            let aggressors = match s.get("aggressors")? {
                Some(a) => a,
                None => {
                    let wc = reactive_worst_case(threshold, cfg.rfm_th, &cfg.timing)?;
                    (wc.rows_reaching as u32).max(1)
                }
            };
            WorkloadSpec::ReactiveWorst {
                threshold,
                aggressors,
                base_row,
                stride,
            }
        }
        "trace_file" => WorkloadSpec::TraceFile {
            path: s
                .get::<PathBuf>("path")?
                .ok_or_else(|| Error::config("path: required for workload trace_file"))?,
        },
        other => {
            return Err(Error::config(format!(
                "{}: workload: unknown kind `{other}`",
                s.origin("workload")
            )))
        }
    };
    Ok(spec)
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mode: Mode,
    /// The primary report (JSON, or CSV for sweeps).
    pub report: String,
    /// Files written, primary report first.
    pub files: Vec<PathBuf>,
    pub violations: usize,
}

impl RunOutcome {
    pub fn is_clean(&self) -> bool {
        self.violations == 0
    }
}

/// Runs `cfg` and writes its reports when an output path is set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    par::with_jobs(cfg.jobs, || match cfg.mode {
        Mode::Bound => run_bound(cfg),
        Mode::Sweep => run_sweep(cfg),
        Mode::Simulate => run_simulation(cfg, false),
        Mode::Verify => run_simulation(cfg, true),
        Mode::Parfm => run_parfm(cfg),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `dir/stem.suffix` next to the primary output.
fn side_path(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}"))
}

fn finish(
    cfg: &ExperimentConfig,
    report: String,
    violations: usize,
    side: Vec<(PathBuf, Vec<u8>)>,
) -> Result<RunOutcome> {
    let mut files = Vec::new();
    if let Some(out) = &cfg.output {
        write_file(out, report.as_bytes())?;
        files.push(out.clone());
        for (p, data) in side {
            write_file(&p, &data)?;
            files.push(p);
        }
    }
    Ok(RunOutcome {
        mode: cfg.mode,
        report,
        files,
        violations,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct TableSize {
    pub n_entry: u32,
    pub row_address_bits: u32,
    pub counter_bits: u32,
    pub bytes: f64,
    pub kb: f64,
}

/// Table footprint for `n_entry` entries, using `counter_bits` or the
/// default width for the applicable bound.
pub fn table_size(
    cfg: &MithrilConfig,
    timing: &TimingParams,
    rows_per_bank: u32,
    counter_bits: Option<u32>,
) -> Result<TableSize> {
    let ctr = counter_bits.unwrap_or_else(|| default_counter_bits(applicable_bound(cfg, timing), cfg.rfm_th));
    let addr = row_address_bits(rows_per_bank);
    let bytes = table_size_bytes(cfg.n_entry, addr, ctr)?;
    Ok(TableSize {
        n_entry: cfg.n_entry,
        row_address_bits: addr,
        counter_bits: ctr,
        bytes,
        kb: bytes / 1024.0,
    })
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    schema_version: u32,
    mode: Mode,
    seed: u64,
    config: &'a ExperimentConfig,
    timing: BTreeMap<&'static str, String>,
    n_entry: u32,
    min_n_entry: Option<u32>,
    report: BoundReport,
    table: TableSize,
}

fn run_bound(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let min = find_min_nentry(cfg.flip_th, cfg.rfm_th, cfg.ad_th, &cfg.timing, cfg.blast_radius)?.found();
    let n_entry = cfg.resolved_n_entry()?;
    let mc = cfg.mithril_config(n_entry)?;
    let report = is_safe(&mc, &cfg.timing);
    let out = BoundOutput {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        seed: cfg.seed,
        config: cfg,
        timing: cfg.timing_map(),
        n_entry,
        min_n_entry: min,
        report,
        table: table_size(&mc, &cfg.timing, cfg.rows_per_bank, cfg.counter_bits)?,
    };
    finish(cfg, to_json(&out)?, 0, Vec::new())
}

/// One sweep grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub flip_th: u32,
    pub rfm_th: u32,
    pub ad_th: u32,
    pub achievable: bool,
    pub min_n_entry: Option<u32>,
    pub bound: Option<f64>,
    pub counter_bits: Option<u32>,
    pub table_bytes: Option<f64>,
    pub table_kb: Option<f64>,
    pub seed: u64,
}

/// Smallest safe table for every `(flip_th, rfm_th)` pair, in grid order
/// (flip thresholds outer, RFM thresholds inner).
pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let points: Vec<(u64, u32, u32)> = cfg
        .flip_ths
        .iter()
        .flat_map(|&f| cfg.rfm_ths.iter().map(move |&r| (f, r)))
        .enumerate()
        .map(|(i, (f, r))| (i as u64, f, r))
        .collect();
    let rows = par::map_slice(&points, |&(i, flip_th, rfm_th)| -> Result<SweepRow> {
        let mut row = SweepRow {
            flip_th,
            rfm_th,
            ad_th: cfg.ad_th,
            achievable: false,
            min_n_entry: None,
            bound: None,
            counter_bits: None,
            table_bytes: None,
            table_kb: None,
            seed: derive_seed(cfg.seed, i),
        };
        if let SearchOutcome::Found(n) = find_min_nentry(flip_th, rfm_th, cfg.ad_th, &cfg.timing, cfg.blast_radius)? {
            let mc = MithrilConfig::new(n, rfm_th, cfg.ad_th, flip_th, cfg.blast_radius.into())?;
            let size = table_size(&mc, &cfg.timing, cfg.rows_per_bank, cfg.counter_bits)?;
            row.achievable = true;
            row.min_n_entry = Some(n);
            row.bound = Some(applicable_bound(&mc, &cfg.timing));
            row.counter_bits = Some(size.counter_bits);
            row.table_bytes = Some(size.bytes);
            row.table_kb = Some(size.kb);
        }
        Ok(row)
    });
    rows.into_iter().collect()
}

/// Writes sweep rows as CSV preceded by `#` comment lines carrying the
/// schema version, seed and resolved configuration.
pub fn write_sweep_csv<W: Write>(cfg: &ExperimentConfig, rows: &[SweepRow], mut out: W) -> Result<()> {
    let io = |e| Error::io("<sweep>", e);
    writeln!(out, "# schema_version={SCHEMA_VERSION}").map_err(io)?;
    writeln!(out, "# seed={}", cfg.seed).map_err(io)?;
    writeln!(out, "# config={}", serde_json::to_string(cfg)?).map_err(io)?;
    let timing: Vec<String> = cfg
        .timing
        .describe()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    writeln!(out, "# timing={}", timing.join(",")).map_err(io)?;
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let rows = sweep_rows(cfg)?;
    let mut buf = Vec::new();
    write_sweep_csv(cfg, &rows, &mut buf)?;
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    finish(cfg, text, 0, Vec::new())
}

/// The tracker behind one simulated bank.
enum BankTracker {
    Mithril(AuditedMithril),
    Parfm(ParfmState),
}

impl RowTracker for BankTracker {
    fn on_activate(&mut self, row: Row) {
        match self {
            BankTracker::Mithril(t) => t.on_activate(row),
            BankTracker::Parfm(t) => t.on_activate(row),
        }
    }

    fn on_rfm(&mut self) -> RefreshDecision {
        match self {
            BankTracker::Mithril(t) => t.on_rfm(),
            BankTracker::Parfm(t) => t.on_rfm(),
        }
    }

    fn refresh_pending(&self) -> bool {
        match self {
            BankTracker::Mithril(t) => t.refresh_pending(),
            BankTracker::Parfm(t) => t.refresh_pending(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BankSummary {
    pub bank: u32,
    pub energy: EnergyReport,
    pub autorefs: u64,
    pub time_overhead: f64,
    pub max_disturbance: f64,
    pub violations: usize,
    /// Largest windowed estimated-count growth, when the bound audit ran.
    pub max_window_growth: Option<u64>,
    #[serde(skip)]
    end_picos: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Verdict {
    pub clean: bool,
    pub flip_th_reached: usize,
    pub ineq1: usize,
    pub ineq2: usize,
    pub bound_m: usize,
    /// The earliest violations, in order.
    pub first: Vec<Violation>,
}

impl Verdict {
    pub fn from_violations(all: &[Violation]) -> Self {
        let count = |k| all.iter().filter(|v| v.kind == k).count();
        Verdict {
            clean: all.is_empty(),
            flip_th_reached: count(ViolationKind::FlipThReached),
            ineq1: count(ViolationKind::Ineq1),
            ineq2: count(ViolationKind::Ineq2),
            bound_m: count(ViolationKind::BoundM),
            first: all.iter().take(REPORTED_VIOLATIONS).cloned().collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.flip_th_reached + self.ineq1 + self.ineq2 + self.bound_m
    }
}

/// Everything a simulation or verification run reports.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub scheme: Scheme,
    pub n_entry: Option<u32>,
    pub counter_bits: Option<u32>,
    pub bound: Option<f64>,
    pub audit_window: Option<usize>,
    pub audited: bool,
    pub total: EnergyReport,
    pub refresh_ratio: f64,
    pub time_overhead: f64,
    pub banks: Vec<BankSummary>,
    pub verdict: Verdict,
    #[serde(skip)]
    pub violations: Vec<Violation>,
    #[serde(skip)]
    pub command_logs: Vec<(u32, Vec<IssuedCommand>)>,
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    schema_version: u32,
    mode: Mode,
    seed: u64,
    config: &'a ExperimentConfig,
    timing: BTreeMap<&'static str, String>,
    events: usize,
    #[serde(flatten)]
    report: &'a SimulationReport,
}

fn bank_run(
    cfg: &ExperimentConfig,
    bank: u32,
    events: &[ActEvent],
    mc: Option<&MithrilConfig>,
    audit: bool,
    keep_log: bool,
) -> Result<(BankSummary, Vec<Violation>, Vec<IssuedCommand>)> {
    let mut tracker = match (cfg.scheme, mc) {
        (Scheme::Parfm, _) => BankTracker::Parfm(ParfmState::new(
            cfg.rfm_th,
            derive_seed(cfg.seed, bank as u64),
            cfg.blast_radius,
            cfg.rows_per_bank,
        )?),
        (_, Some(mc)) => {
            let table = MithrilTable::for_config(mc, &cfg.timing, cfg.counter_bits, cfg.rows_per_bank)?;
            let mithril = Mithril::new(table, mc.ad_th, mc.blast_radius);
            let (ineq, bound) = if audit {
                (
                    Some(InequalityAuditor::new(bank)),
                    Some(BoundAuditor::for_config(mc, &cfg.timing, bank)?),
                )
            } else {
                (None, None)
            };
            BankTracker::Mithril(AuditedMithril::new(mithril, ineq, bound))
        }
        (_, None) => unreachable!("mithril schemes resolve a table config"),
    };
    let mut ctrl =
        BankController::new(cfg.timing, cfg.rfm_th, cfg.scheme == Scheme::MithrilPlus)?.with_mode(cfg.time_mode);
    let mut oracle = OracleState::new(
        cfg.flip_th,
        cfg.blast_radius,
        cfg.rows_per_bank,
        cfg.timing.refresh_groups(),
    )?
    .with_bank(bank);
    let mut log = Vec::new();
    let mut run = run_bank(&mut ctrl, &mut tracker, &mut oracle, events, None, |c| {
        if keep_log {
            log.push(*c);
        }
    });
    let mut growth = None;
    if let BankTracker::Mithril(t) = &mut tracker {
        run.violations.append(&mut t.violations);
        growth = t.bound.as_ref().map(|b| b.max_growth());
    }
    run.violations.sort_by_key(|v| v.at_seq);
    let energy = EnergyReport::from_counts(&run.counts, &cfg.weights);
    let time_overhead = if run.end_time.0 == 0 {
        0.0
    } else {
        (run.counts.rfm_issued * cfg.timing.t_rfm().0) as f64 / run.end_time.0 as f64
    };
    let summary = BankSummary {
        bank,
        energy,
        autorefs: run.counts.autorefs,
        time_overhead,
        max_disturbance: run.max_disturbance,
        violations: run.violations.len(),
        max_window_growth: growth,
        end_picos: run.end_time.0,
    };
    Ok((summary, run.violations, log))
}

/// Simulates every bank of the configured workload. With `audit`, Mithril
/// banks also run the inequality and windowed-bound audits.
pub fn simulate(cfg: &ExperimentConfig, audit: bool, keep_logs: bool) -> Result<(SimulationReport, usize)> {
    let spec = cfg
        .workload
        .as_ref()
        .ok_or_else(|| Error::config("workload: required for simulation"))?;
    let events = match spec {
        WorkloadSpec::TraceFile { path } => crate::workload::load_trace(
            path,
            TraceLimits {
                rows_per_bank: cfg.rows_per_bank,
                banks: cfg.banks,
            },
        )?,
        other => other.generate(cfg.rows_per_bank)?,
    };
    let n_events = events.len();
    let per_bank = split_by_bank(&events);
    drop(events);

    let mc = match cfg.scheme {
        Scheme::Parfm => None,
        _ => Some(cfg.mithril_config(cfg.resolved_n_entry()?)?),
    };
    let results = par::map_slice(&per_bank, |(bank, ev)| {
        bank_run(cfg, *bank, ev, mc.as_ref(), audit, keep_logs)
    });

    let mut banks = Vec::new();
    let mut violations = Vec::new();
    let mut command_logs = Vec::new();
    let mut total = EnergyReport::default();
    let mut rfm_time = 0u128;
    let mut elapsed = 0u128;
    for r in results {
        let (summary, mut v, log) = r?;
        total.add(&summary.energy);
        rfm_time += summary.energy.rfm_issued as u128 * cfg.timing.t_rfm().0 as u128;
        elapsed += summary.end_picos as u128;
        violations.append(&mut v);
        if keep_logs {
            command_logs.push((summary.bank, log));
        }
        banks.push(summary);
    }
    let time_overhead = if elapsed == 0 {
        0.0
    } else {
        rfm_time as f64 / elapsed as f64
    };
    let counter_bits = mc.as_ref().map(|m| {
        cfg.counter_bits
            .unwrap_or_else(|| default_counter_bits(applicable_bound(m, &cfg.timing), m.rfm_th))
    });
    let report = SimulationReport {
        scheme: cfg.scheme,
        n_entry: mc.as_ref().map(|m| m.n_entry),
        counter_bits,
        bound: mc.as_ref().map(|m| applicable_bound(m, &cfg.timing)),
        audit_window: match (&mc, audit) {
            (Some(m), true) => Some(BoundAuditor::window_for(&cfg.timing, m.rfm_th)?),
            _ => None,
        },
        audited: audit && mc.is_some(),
        refresh_ratio: total.refresh_ratio(),
        total,
        time_overhead,
        banks,
        verdict: Verdict::from_violations(&violations),
        violations,
        command_logs,
    };
    Ok((report, n_events))
}

fn run_simulation(cfg: &ExperimentConfig, audit: bool) -> Result<RunOutcome> {
    let keep_logs = cfg.output.is_some() && cfg.mode == Mode::Simulate;
    let (report, events) = simulate(cfg, audit, keep_logs)?;
    let out = SimulationOutput {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        seed: cfg.seed,
        config: cfg,
        timing: cfg.timing_map(),
        events,
        report: &report,
    };
    let json = to_json(&out)?;
    let mut side = Vec::new();
    if let Some(output) = &cfg.output {
        for (bank, log) in &report.command_logs {
            let mut buf = Vec::new();
            write_command_log(log, &mut buf)?;
            side.push((side_path(output, &format!("bank{bank}.csv")), buf));
        }
        if !report.violations.is_empty() {
            let mut buf = Vec::new();
            write_violations_csv(&report.violations, &mut buf)?;
            side.push((side_path(output, "violations.csv"), buf));
        }
    }
    finish(cfg, json, report.violations.len(), side)
}

#[derive(Serialize)]
struct ParfmOutput<'a> {
    schema_version: u32,
    mode: Mode,
    seed: u64,
    config: &'a ExperimentConfig,
    timing: BTreeMap<&'static str, String>,
    analysis: ParfmAnalysis,
    solved_rfm_th: Option<u32>,
    solved: Option<ParfmAnalysis>,
    monte_carlo: Option<MonteCarloReport>,
}

#[derive(Serialize)]
struct MonteCarloReport {
    #[serde(flatten)]
    estimate: MonteCarloEstimate,
    /// The recurrence at the same horizon, for comparison.
    analytic_fail1: f64,
}

fn run_parfm(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let analysis = parfm::analyze(cfg.flip_th, cfg.rfm_th, cfg.n_banks, &cfg.timing)?;
    let solved_rfm_th = match parfm::solve_rfm_th(cfg.flip_th, cfg.target, cfg.n_banks, &cfg.timing) {
        Ok(r) => Some(r),
        Err(Error::NotAchievable(msg)) => {
            log::warn!("{msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let solved = solved_rfm_th
        .map(|r| parfm::analyze(cfg.flip_th, r, cfg.n_banks, &cfg.timing))
        .transpose()?;
    let monte_carlo = if cfg.trials > 0 {
        let horizon = cfg.horizon.unwrap_or(analysis.horizon_intervals);
        let estimate = parfm::monte_carlo_fail1(cfg.flip_th, cfg.rfm_th, horizon, cfg.trials, cfg.seed)?;
        let analytic_fail1 = parfm::fail_single_row(&parfm::FailureModel {
            rfm_th: cfg.rfm_th,
            flip_th: cfg.flip_th,
            horizon_intervals: horizon,
            n_banks: 1,
        })?;
        Some(MonteCarloReport {
            estimate,
            analytic_fail1,
        })
    } else {
        None
    };
    let out = ParfmOutput {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        seed: cfg.seed,
        config: cfg,
        timing: cfg.timing_map(),
        analysis,
        solved_rfm_th,
        solved,
        monte_carlo,
    };
    finish(cfg, to_json(&out)?, 0, Vec::new())
}
