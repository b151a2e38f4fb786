//! Per-round auction traces, written as JSON lines.

use std::io::Write;

use serde::Serialize;

use crate::auction::{Allocation, Bid};
use crate::overlay::PeerId;
use crate::units::Bandwidth;

#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    /// Layer of the phase; `None` for the single all-layer baseline auction.
    pub phase: Option<usize>,
    pub round: u32,
    pub upstream: PeerId,
    pub remaining: Bandwidth,
    pub bids: Vec<Bid>,
    pub grants: Vec<Allocation>,
}

pub trait TraceSink {
    fn enabled(&self) -> bool {
        true
    }
    fn record(&mut self, rec: &RoundRecord);
}

pub struct NoTrace;

impl TraceSink for NoTrace {
    fn enabled(&self) -> bool {
        false
    }
    fn record(&mut self, _rec: &RoundRecord) {}
}

/// Keeps records in memory.
#[derive(Default)]
pub struct MemoryTrace(pub Vec<RoundRecord>);

impl TraceSink for MemoryTrace {
    fn record(&mut self, rec: &RoundRecord) {
        self.0.push(rec.clone());
    }
}

pub struct JsonLines<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        JsonLines { out, error: None }
    }

    /// Flushes and returns the first write error, if any.
    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for JsonLines<W> {
    fn record(&mut self, rec: &RoundRecord) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.out, rec)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}
