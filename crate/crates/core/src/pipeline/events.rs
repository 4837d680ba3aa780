use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Phase;
use crate::error::{Error, Result};
use crate::posterior::BackendKind;

/// One line of `events.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A real environment step.
    Step {
        step: u64,
        phase: Phase,
        /// Utility of the executed action under the current posterior; absent during warmup.
        utility: Option<f64>,
        action: Vec<f64>,
        /// Whether the commanded action had to be clipped to the bounds.
        clipped: bool,
        state_hash: String,
    },
    /// Episode reset before step `step`.
    Reset { step: u64, episode: u64 },
    /// Posterior refit on the first `buffer_len` transitions.
    Fit {
        step: u64,
        cycle: u64,
        backend: BackendKind,
        buffer_len: usize,
    },
    /// The first `buffer_len` transitions form an evaluation snapshot.
    Snapshot { step: u64, buffer_len: usize },
}

impl Event {
    pub fn step(&self) -> u64 {
        match self {
            Event::Step { step, .. }
            | Event::Reset { step, .. }
            | Event::Fit { step, .. }
            | Event::Snapshot { step, .. } => *step,
        }
    }
}

/// FNV-1a over the bit patterns of a state, as 16 hex digits.
pub fn state_hash(s: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in s {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

pub fn write_events<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e =
            serde_json::from_str(&line).map_err(|e| Error::InvalidArgument(format!("events line {}: {e}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}
