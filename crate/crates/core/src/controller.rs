//! Memory-controller side of the RFM interface for one bank.
//!
//! The controller counts ACTs in its RAA counter and issues an RFM every
//! `rfm_th` ACTs. Auto-refresh fires every tREFI of simulated time and walks
//! the refresh groups round-robin. In Mithril+ mode the controller first
//! reads the tracker's flag and replaces an unnecessary RFM with
//! `RFM_SKIPPED`, which costs no time.

use std::borrow::Borrow;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timing::{Picos, TimingParams};
use crate::tracker::{RefreshDecision, Row, RowTracker};
use crate::workload::ActEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    #[serde(rename = "ACT")]
    Act,
    #[serde(rename = "RFM")]
    Rfm,
    #[serde(rename = "RFM_SKIPPED")]
    RfmSkipped,
    #[serde(rename = "AUTOREF")]
    AutoRef,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Act => "ACT",
            CommandKind::Rfm => "RFM",
            CommandKind::RfmSkipped => "RFM_SKIPPED",
            CommandKind::AutoRef => "AUTOREF",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ACT" => Ok(CommandKind::Act),
            "RFM" => Ok(CommandKind::Rfm),
            "RFM_SKIPPED" => Ok(CommandKind::RfmSkipped),
            "AUTOREF" => Ok(CommandKind::AutoRef),
            other => Err(Error::config(format!("unknown command kind `{other}`"))),
        }
    }
}

/// One command on the bank's command bus. ACT carries the activated row,
/// AUTOREF the refreshed group, and RFM the aggressor whose victims were
/// refreshed (absent when the tracker declined to refresh).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssuedCommand {
    pub kind: CommandKind,
    pub row: Option<Row>,
    pub group: Option<u32>,
    pub at: Picos,
}

impl IssuedCommand {
    pub fn duration(&self, timing: &TimingParams) -> Picos {
        match self.kind {
            CommandKind::Act => timing.t_rc(),
            CommandKind::Rfm => timing.t_rfm(),
            CommandKind::RfmSkipped => Picos::ZERO,
            CommandKind::AutoRef => timing.t_rfc(),
        }
    }
}

/// How ACT timestamps in the input stream are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// ACTs issue back to back at tRC; timestamps are ignored.
    #[default]
    BackToBack,
    /// ACTs wait for their timestamp when it lies in the future.
    Paced,
}

/// State of the memory controller for one bank.
#[derive(Debug, Clone)]
pub struct BankController {
    timing: TimingParams,
    pub raa: u32,
    pub rfm_th: u32,
    pub mithril_plus: bool,
    pub mode: TimeMode,
    pub now: Picos,
    pub next_ref: Picos,
    pub ref_group_cursor: u32,
}

impl BankController {
    pub fn new(timing: TimingParams, rfm_th: u32, mithril_plus: bool) -> Result<Self> {
        if rfm_th == 0 {
            return Err(Error::config("rfm_th must be >= 1"));
        }
        Ok(BankController {
            raa: 0,
            rfm_th,
            mithril_plus,
            mode: TimeMode::BackToBack,
            now: Picos::ZERO,
            next_ref: timing.t_refi(),
            ref_group_cursor: 0,
            timing,
        })
    }

    pub fn with_mode(mut self, mode: TimeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    /// Issues every auto-refresh due at or before `until`, idling the bank up
    /// to each refresh's scheduled time when it is ahead of the clock.
    fn refresh_until<F>(&mut self, until: Picos, sink: &mut F)
    where
        F: FnMut(&IssuedCommand, Option<&RefreshDecision>),
    {
        while self.next_ref <= until {
            self.now = self.now.max(self.next_ref);
            let cmd = IssuedCommand {
                kind: CommandKind::AutoRef,
                row: None,
                group: Some(self.ref_group_cursor),
                at: self.now,
            };
            sink(&cmd, None);
            self.now = Picos(self.now.0 + self.timing.t_rfc().0);
            self.next_ref = Picos(self.next_ref.0 + self.timing.t_refi().0);
            self.ref_group_cursor = (self.ref_group_cursor + 1) % self.timing.refresh_groups();
        }
    }

    /// Processes one ACT, including the RFM it may trigger.
    pub fn step<T, F>(&mut self, tracker: &mut T, ev: &ActEvent, sink: &mut F)
    where
        T: RowTracker + ?Sized,
        F: FnMut(&IssuedCommand, Option<&RefreshDecision>),
    {
        if self.mode == TimeMode::Paced {
            if let Some(ts) = ev.ts_ns {
                let ts = Picos::from_ns(ts);
                if ts > self.now {
                    self.refresh_until(ts, sink);
                    self.now = self.now.max(ts);
                }
            }
        }
        self.refresh_until(self.now, sink);

        let act = IssuedCommand {
            kind: CommandKind::Act,
            row: Some(ev.row),
            group: None,
            at: self.now,
        };
        sink(&act, None);
        self.now = Picos(self.now.0 + self.timing.t_rc().0);
        self.raa += 1;
        tracker.on_activate(ev.row);

        if self.raa >= self.rfm_th {
            self.raa = 0;
            if self.mithril_plus && !tracker.refresh_pending() {
                let cmd = IssuedCommand {
                    kind: CommandKind::RfmSkipped,
                    row: None,
                    group: None,
                    at: self.now,
                };
                sink(&cmd, None);
            } else {
                let decision = tracker.on_rfm();
                let cmd = IssuedCommand {
                    kind: CommandKind::Rfm,
                    row: decision.aggressor.filter(|_| decision.refreshed),
                    group: None,
                    at: self.now,
                };
                sink(&cmd, Some(&decision));
                self.now = Picos(self.now.0 + self.timing.t_rfm().0);
            }
        }
    }

    /// Drives `tracker` with `stream`, handing every issued command to
    /// `sink` in bus order. After the stream ends, auto-refreshes continue
    /// up to `horizon` if one is given.
    pub fn drive_with<T, I, F>(&mut self, tracker: &mut T, stream: I, horizon: Option<Picos>, mut sink: F)
    where
        T: RowTracker + ?Sized,
        I: IntoIterator,
        I::Item: Borrow<ActEvent>,
        F: FnMut(&IssuedCommand, Option<&RefreshDecision>),
    {
        for ev in stream {
            self.step(tracker, ev.borrow(), &mut sink);
        }
        if let Some(h) = horizon {
            self.refresh_until(h, &mut sink);
        }
    }

    /// Like [`drive_with`](Self::drive_with) but collects the command log.
    pub fn drive<T, I>(&mut self, tracker: &mut T, stream: I, horizon: Option<Picos>) -> Vec<IssuedCommand>
    where
        T: RowTracker + ?Sized,
        I: IntoIterator,
        I::Item: Borrow<ActEvent>,
    {
        let mut log = Vec::new();
        self.drive_with(tracker, stream, horizon, |c, _| log.push(*c));
        log
    }
}

/// Fraction of elapsed time spent inside RFM windows.
pub fn time_overhead_fraction(commands: &[IssuedCommand], timing: &TimingParams) -> f64 {
    let Some(last) = commands.last() else {
        return 0.0;
    };
    let end = last.at.0 + last.duration(timing).0;
    if end == 0 {
        return 0.0;
    }
    let rfm = commands.iter().filter(|c| c.kind == CommandKind::Rfm).count() as u64;
    (rfm * timing.t_rfm().0) as f64 / end as f64
}

/// Writes the command log as `at_ns,kind,row,group`.
pub fn write_command_log<W: Write>(commands: &[IssuedCommand], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["at_ns", "kind", "row", "group"])?;
    for c in commands {
        w.write_record([
            c.at.to_string(),
            c.kind.to_string(),
            c.row.map(|r| r.to_string()).unwrap_or_default(),
            c.group.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<command log>", e))?;
    Ok(())
}
