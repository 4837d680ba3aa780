use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Active,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Active => "active",
        }
    }
}

/// One real-environment interaction `(s, a, s′)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub step: u64,
    pub phase: Phase,
}

impl Transition {
    pub fn new(s: Vec<f64>, a: Vec<f64>, s_next: Vec<f64>, step: u64, phase: Phase) -> Self {
        Self {
            s,
            a,
            s_next,
            step,
            phase,
        }
    }
}

/// Append-only store of collected transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    transitions: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
        }
    }

    pub fn from_transitions(
        state_dim: usize,
        action_dim: usize,
        transitions: impl IntoIterator<Item = Transition>,
    ) -> Result<Self> {
        let mut b = Self::new(state_dim, action_dim);
        for t in transitions {
            b.push(t)?;
        }
        Ok(b)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn last_step(&self) -> Option<u64> {
        self.transitions.last().map(|t| t.step)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim {
            return shape_err(format!("transition state dimension differs from {}", self.state_dim));
        }
        if t.a.len() != self.action_dim {
            return shape_err(format!("transition action dimension differs from {}", self.action_dim));
        }
        if let Some(last) = self.last_step() {
            if t.step <= last {
                return Err(Error::InvalidArgument(format!(
                    "step index {} does not follow {last}",
                    t.step
                )));
            }
        }
        self.transitions.push(t);
        Ok(())
    }

    /// Immutable copy of the first `n` transitions.
    pub fn snapshot(&self, n: usize) -> ReplayBuffer {
        ReplayBuffer {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            transitions: self.transitions[..n.min(self.len())].to_vec(),
        }
    }

    /// Splits chronologically into `(first n, rest)`.
    pub fn split_at(&self, n: usize) -> (ReplayBuffer, ReplayBuffer) {
        let n = n.min(self.len());
        let mut rest = ReplayBuffer::new(self.state_dim, self.action_dim);
        rest.transitions = self.transitions[n..].to_vec();
        (self.snapshot(n), rest)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = Vec::new();
        h.extend((0..self.state_dim).map(|i| format!("s_{i}")));
        h.extend((0..self.action_dim).map(|i| format!("a_{i}")));
        h.extend((0..self.state_dim).map(|i| format!("sp_{i}")));
        h.push("step".into());
        h.push("phase".into());
        h
    }

    /// Writes `s_0..,a_0..,sp_0..,step,phase` rows; floats use the shortest
    /// decimal text that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        for t in &self.transitions {
            let mut rec: Vec<String> = Vec::with_capacity(2 * self.state_dim + self.action_dim + 2);
            rec.extend(t.s.iter().map(f64::to_string));
            rec.extend(t.a.iter().map(f64::to_string));
            rec.extend(t.s_next.iter().map(f64::to_string));
            rec.push(t.step.to_string());
            rec.push(t.phase.as_str().into());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let state_dim = headers.iter().filter(|h| h.starts_with("s_")).count();
        let action_dim = headers.iter().filter(|h| h.starts_with("a_")).count();
        let mut buf = ReplayBuffer::new(state_dim, action_dim);
        if headers.len() != 2 * state_dim + action_dim + 2 || buf.header() != headers.iter().collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!(
                "unexpected buffer header: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("row {}: column {}: {e}", line + 1, &headers[i])))
            };
            let s = (0..state_dim).map(num).collect::<Result<Vec<_>>>()?;
            let a = (state_dim..state_dim + action_dim)
                .map(num)
                .collect::<Result<Vec<_>>>()?;
            let sp = (state_dim + action_dim..2 * state_dim + action_dim)
                .map(num)
                .collect::<Result<Vec<_>>>()?;
            let base = 2 * state_dim + action_dim;
            let step = rec[base]
                .parse::<u64>()
                .map_err(|e| Error::InvalidArgument(format!("row {}: step: {e}", line + 1)))?;
            let phase = match &rec[base + 1] {
                "warmup" => Phase::Warmup,
                "active" => Phase::Active,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "row {}: unknown phase {other:?}",
                        line + 1
                    )))
                }
            };
            buf.push(Transition::new(s, a, sp, step, phase))?;
        }
        Ok(buf)
    }
}

impl std::ops::Deref for ReplayBuffer {
    type Target = [Transition];

    fn deref(&self) -> &[Transition] {
        &self.transitions
    }
}
