use serde::{Deserialize, Serialize};

use crate::audit::AuditReport;
use crate::bus::Bus;
use crate::config::{Config, Scheme};
use crate::deamortize::Deamortized;
use crate::error::{Error, Result};
use crate::four::FourServer;
use crate::hier::Hier;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Read(u64),
    Write(u64, Vec<u8>),
}

impl Op {
    pub fn addr(&self) -> u64 {
        match self {
            Op::Read(v) | Op::Write(v, _) => *v,
        }
    }
}

/// A simulated ORAM client together with its servers.
pub trait Oram {
    /// Performs one access and returns the value held before it.
    fn access(&mut self, op: &Op) -> Result<Vec<u8>>;
    fn bus(&self) -> &Bus;
    fn config(&self) -> &Config;
    /// Re-checks server state and returns every violation recorded so far.
    fn audit(&mut self) -> AuditReport;
}

pub(crate) fn check_op(cfg: &Config, op: &Op) -> Result<()> {
    if op.addr() >= cfg.n {
        return Err(Error::IndexOutOfRange { index: op.addr(), len: cfg.n });
    }
    if let Op::Write(_, x) = op {
        if x.len() != cfg.payload_bytes() {
            return Err(Error::LengthMismatch { expected: cfg.payload_bytes(), got: x.len() });
        }
    }
    Ok(())
}

/// Validates the configuration and sets up the selected scheme.
pub fn build(cfg: &Config) -> Result<Box<dyn Oram>> {
    build_with(cfg, true)
}

/// As [`build`], optionally without keeping per-message transcripts.
pub fn build_with(cfg: &Config, transcripts: bool) -> Result<Box<dyn Oram>> {
    let cfg = cfg.clone().validate()?;
    Ok(match cfg.scheme {
        Scheme::FourServer => Box::new(FourServer::new(cfg, transcripts)?),
        Scheme::Deamortized => Box::new(Deamortized::new(cfg, transcripts)?),
        _ => Box::new(Hier::new(cfg, transcripts)?),
    })
}
