//! Four-server scheme: two additive shares of the array, each held by a
//! replica pair. Reads are DPF PIR against each pair; writes send the same
//! PIR-write share to both members of a pair.
//!
//! Servers 0 and 1 hold share 0, servers 2 and 3 hold share 1.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::audit::{AuditLog, AuditReport};
use crate::bus::Bus;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::oram::{check_op, Op, Oram};
use crate::pir::{combine, dpf_answer, dpf_read_query, pirw_apply, pirw_gen, xor_into};

pub struct FourServer {
    cfg: Config,
    n: usize,
    rng: ChaCha20Rng,
    arrays: [Vec<Vec<u8>>; 4],
    bus: Bus,
    log: AuditLog,
}

const SHARE: [usize; 4] = [0, 0, 1, 1];

impl FourServer {
    pub fn new(cfg: Config, transcripts: bool) -> Result<FourServer> {
        let n = cfg.n as usize;
        let pb = cfg.payload_bytes();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let x0: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                let mut b = vec![0u8; pb];
                rng.fill_bytes(&mut b);
                b
            })
            .collect();
        // Initial data is all zero, so the two shares coincide.
        let x1 = x0.clone();
        let mut bus = Bus::new(4, transcripts, false);
        for srv in 0..4 {
            bus.up(srv, "setup", cfg.n * cfg.b);
        }
        bus.end_setup();
        let log = AuditLog::new(cfg.audit);
        Ok(FourServer { n, rng, arrays: [x0.clone(), x0, x1.clone(), x1], bus, log, cfg })
    }

    /// Share `b` of block `i` as stored at its first holder.
    pub fn share(&self, b: usize, i: usize) -> &[u8] {
        &self.arrays[2 * b][i]
    }

    fn read(&mut self, i: usize) -> Result<Vec<u8>> {
        let mut shares = Vec::with_capacity(2);
        for b in 0..2 {
            let (q0, q1) = dpf_read_query(&mut self.rng, i, self.n)?;
            let mut answers = Vec::with_capacity(2);
            for (srv, q) in [(2 * b, q0), (2 * b + 1, q1)] {
                self.bus.up(srv, "readQuery", q.bit_len());
                answers.push(dpf_answer(&self.arrays[srv], &q)?);
                self.bus.down(srv, "readAnswer", self.cfg.b);
            }
            shares.push(combine(&answers));
        }
        Ok(combine(&shares))
    }

    fn write(&mut self, i: usize, delta: &[u8]) -> Result<()> {
        let (w0, w1) = pirw_gen(&mut self.rng, i, delta, self.n)?;
        for srv in 0..4 {
            let w = if SHARE[srv] == 0 { &w0 } else { &w1 };
            self.bus.up(srv, "writeQuery", w.bit_len());
            pirw_apply(&mut self.arrays[srv], w)?;
        }
        Ok(())
    }

    fn check(&mut self, i: usize, want: &[u8]) {
        let rep = &mut self.log.report;
        rep.checks += 1;
        if self.arrays[0] != self.arrays[1] || self.arrays[2] != self.arrays[3] {
            rep.replica_mismatch += 1;
            self.log.note(|| format!("replica pair diverged after writing {i}"));
        }
        let mut x = self.arrays[0][i].clone();
        xor_into(&mut x, &self.arrays[2][i]);
        if x != want {
            self.log.report.replica_mismatch += 1;
            self.log.note(|| format!("shares of {i} do not reconstruct the written value"));
        }
    }
}

impl Oram for FourServer {
    fn access(&mut self, op: &Op) -> Result<Vec<u8>> {
        check_op(&self.cfg, op)?;
        let i = op.addr() as usize;
        let old = self.read(i)?;
        let new = match op {
            Op::Read(_) => old.clone(),
            Op::Write(_, x) => x.clone(),
        };
        let mut delta = old.clone();
        xor_into(&mut delta, &new);
        self.write(i, &delta)?;
        if self.log.enabled {
            self.check(i, &new);
            if self.log.report.replica_mismatch > 0 {
                self.bus.end_access();
                return Err(Error::ReplicaMismatch);
            }
        }
        self.bus.end_access();
        Ok(old)
    }

    fn bus(&self) -> &Bus {
        &self.bus
    }

    fn config(&self) -> &Config {
        &self.cfg
    }

    fn audit(&mut self) -> AuditReport {
        self.log.report.clone()
    }
}
