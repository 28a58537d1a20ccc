//! Metered message bus. Every protocol step between the client and a server
//! is one transcript entry carrying its logical bit length.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    /// Client to server.
    Up,
    /// Server to client.
    Down,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Entry {
    pub dir: Dir,
    pub phase: &'static str,
    pub bits: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessBits {
    pub up: u64,
    pub down: u64,
}

impl AccessBits {
    pub fn total(&self) -> u64 {
        self.up + self.down
    }
}

#[derive(Clone, Debug)]
pub struct Bus {
    servers: usize,
    keep: bool,
    transcripts: Vec<Vec<Entry>>,
    up: Vec<u64>,
    down: Vec<u64>,
    setup: AccessBits,
    current: AccessBits,
    series: Vec<AccessBits>,
    in_setup: bool,
    /// Ciphertext fingerprints seen by the client on download (audit only).
    seen: Option<HashSet<u128>>,
    pub linkable: u64,
}

impl Bus {
    pub fn new(servers: usize, keep_transcripts: bool, fingerprints: bool) -> Bus {
        Bus {
            servers,
            keep: keep_transcripts,
            transcripts: vec![Vec::new(); servers],
            up: vec![0; servers],
            down: vec![0; servers],
            setup: AccessBits::default(),
            current: AccessBits::default(),
            series: Vec::new(),
            in_setup: true,
            seen: fingerprints.then(HashSet::new),
            linkable: 0,
        }
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    fn push(&mut self, srv: usize, dir: Dir, phase: &'static str, bits: u64, pos: Option<Vec<u64>>) {
        match dir {
            Dir::Up => {
                self.up[srv] += bits;
                if self.in_setup {
                    self.setup.up += bits
                } else {
                    self.current.up += bits
                }
            }
            Dir::Down => {
                self.down[srv] += bits;
                if self.in_setup {
                    self.setup.down += bits
                } else {
                    self.current.down += bits
                }
            }
        }
        if self.keep {
            self.transcripts[srv].push(Entry { dir, phase, bits, pos });
        }
    }

    pub fn up(&mut self, srv: usize, phase: &'static str, bits: u64) {
        self.push(srv, Dir::Up, phase, bits, None);
    }

    pub fn down(&mut self, srv: usize, phase: &'static str, bits: u64) {
        self.push(srv, Dir::Down, phase, bits, None);
    }

    /// Download that reveals plaintext positions to the server.
    pub fn down_at(&mut self, srv: usize, phase: &'static str, bits: u64, pos: Vec<u64>) {
        self.push(srv, Dir::Down, phase, bits, Some(pos));
    }

    pub fn up_at(&mut self, srv: usize, phase: &'static str, bits: u64, pos: Vec<u64>) {
        self.push(srv, Dir::Up, phase, bits, Some(pos));
    }

    pub fn fingerprinting(&self) -> bool {
        self.seen.is_some()
    }

    pub fn saw(&mut self, fp: u128) {
        if let Some(s) = self.seen.as_mut() {
            s.insert(fp);
        }
    }

    /// Flags an upload whose ciphertext the servers have already seen.
    pub fn sent(&mut self, fp: u128) {
        if let Some(s) = self.seen.as_ref() {
            if s.contains(&fp) {
                self.linkable += 1;
            }
        }
    }

    pub fn end_setup(&mut self) {
        self.in_setup = false;
    }

    pub fn end_access(&mut self) {
        self.series.push(self.current);
        self.current = AccessBits::default();
    }

    pub fn transcripts(&self) -> &[Vec<Entry>] {
        &self.transcripts
    }

    pub fn series(&self) -> &[AccessBits] {
        &self.series
    }

    pub fn setup_bits(&self) -> AccessBits {
        self.setup
    }

    pub fn server_totals(&self) -> Vec<AccessBits> {
        self.up.iter().zip(&self.down).map(|(&up, &down)| AccessBits { up, down }).collect()
    }

    /// Bits exchanged by accesses so far (setup excluded).
    pub fn access_total(&self) -> u64 {
        self.series.iter().map(AccessBits::total).sum::<u64>() + self.current.total()
    }

    pub fn current(&self) -> AccessBits {
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_match_entries() {
        let mut b = Bus::new(2, true, false);
        b.up(0, "a", 10);
        b.end_setup();
        b.down(1, "b", 7);
        b.up_at(1, "c", 3, vec![1, 2]);
        b.end_access();
        let sum: u64 = b.transcripts().iter().flatten().map(|e| e.bits).sum();
        let tot: u64 = b.server_totals().iter().map(AccessBits::total).sum();
        assert_eq!(sum, tot);
        assert_eq!(b.setup_bits().up, 10);
        assert_eq!(b.series(), &[AccessBits { up: 3, down: 7 }]);
        assert_eq!(b.access_total(), 10);
    }

    #[test]
    fn linkability() {
        let mut b = Bus::new(1, false, true);
        b.saw(5);
        b.sent(6);
        assert_eq!(b.linkable, 0);
        b.sent(5);
        assert_eq!(b.linkable, 1);
    }
}
