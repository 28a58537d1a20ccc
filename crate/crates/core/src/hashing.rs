//! Hashing schemes with a stash: standard (one bucket), cuckoo (two slots)
//! and two-tier (one bucket per tier).

use rand::RngCore;
use std::collections::HashSet;

use crate::config::ceil_log2;
use crate::error::{Error, Result};
use crate::prf::Prf;

/// Fresh keys tried before a build gives up.
pub const RETRY_CAP: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HashKind {
    Standard,
    Cuckoo,
    TwoTier,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemeParams {
    pub kind: HashKind,
    /// Input capacity.
    pub n: usize,
    /// Table slots.
    pub m: usize,
    pub s: usize,
    /// Bucket capacity (1 for cuckoo).
    pub b: usize,
    /// Buckets per tier (cuckoo: slots per half).
    pub buckets: usize,
}

impl SchemeParams {
    pub fn new(kind: HashKind, n: usize, big_n: u64, s: usize) -> SchemeParams {
        let log_n = ceil_log2(big_n).max(2) as f64;
        match kind {
            HashKind::Standard => {
                let b = (log_n / log_n.log2()).ceil().max(1.0) as usize;
                let buckets = n.max(1);
                SchemeParams { kind, n, m: buckets * b, s, b, buckets }
            }
            HashKind::Cuckoo => {
                let half = (2 * n).max(1);
                SchemeParams { kind, n, m: 2 * half, s, b: 1, buckets: half }
            }
            HashKind::TwoTier => {
                let b = log_n.powf(0.6).ceil().max(1.0) as usize;
                let buckets = n.div_ceil(b).max(1);
                SchemeParams { kind, n, m: 2 * buckets * b, s, b, buckets }
            }
        }
    }

    pub fn c_lookup(&self) -> usize {
        match self.kind {
            HashKind::Standard => self.b,
            HashKind::Cuckoo => 2,
            HashKind::TwoTier => 2 * self.b,
        }
    }

    pub fn functions(&self) -> usize {
        match self.kind {
            HashKind::Standard => 1,
            _ => 2,
        }
    }

    fn kick_cap(&self) -> usize {
        10 * (ceil_log2(self.n as u64) as usize).max(1)
    }
}

#[derive(Clone, Debug)]
pub struct HashKey {
    pub kind: HashKind,
    fns: Vec<Prf>,
}

impl HashKey {
    pub fn gen<R: RngCore>(rng: &mut R, p: &SchemeParams) -> HashKey {
        HashKey { kind: p.kind, fns: (0..p.functions()).map(|_| Prf::random(rng)).collect() }
    }

    pub fn bits(&self) -> u64 {
        128 * self.fns.len() as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.fns.iter().flat_map(|f| f.key_bytes()).collect()
    }

    fn h(&self, which: usize, tag: u128, range: usize) -> usize {
        (self.fns[which].block(tag) % range as u128) as usize
    }
}

/// Where each input ended up: table slots hold input indices, the stash lists
/// the overflow in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub slots: Vec<Option<usize>>,
    pub stash: Vec<usize>,
}

/// Candidate positions for `tag`, in a fixed order and of constant count.
pub fn lookup(p: &SchemeParams, key: &HashKey, tag: u128) -> Vec<usize> {
    match p.kind {
        HashKind::Standard => {
            let q = key.h(0, tag, p.buckets);
            (q * p.b..(q + 1) * p.b).collect()
        }
        HashKind::Cuckoo => vec![key.h(0, tag, p.buckets), p.buckets + key.h(1, tag, p.buckets)],
        HashKind::TwoTier => {
            let tier = p.buckets * p.b;
            let q1 = key.h(0, tag, p.buckets);
            let q2 = key.h(1, tag, p.buckets);
            (q1 * p.b..(q1 + 1) * p.b).chain(tier + q2 * p.b..tier + (q2 + 1) * p.b).collect()
        }
    }
}

/// Tier-1 and tier-2 bucket of a tag (two-tier and standard only).
pub fn buckets_of(p: &SchemeParams, key: &HashKey, tag: u128) -> (usize, usize) {
    let q2 = if p.functions() > 1 { key.h(1, tag, p.buckets) } else { 0 };
    (key.h(0, tag, p.buckets), q2)
}

/// Non-oblivious build.
pub fn build(p: &SchemeParams, key: &HashKey, tags: &[u128]) -> Result<Placement> {
    if tags.len() > p.n {
        return Err(Error::LengthMismatch { expected: p.n, got: tags.len() });
    }
    let mut seen = HashSet::with_capacity(tags.len());
    if !tags.iter().all(|t| seen.insert(*t)) {
        return Err(Error::DuplicateTag);
    }
    let mut slots = vec![None; p.m];
    let mut stash = Vec::new();
    match p.kind {
        HashKind::Standard | HashKind::TwoTier => {
            let tiers = if p.kind == HashKind::Standard { 1 } else { 2 };
            for (idx, &t) in tags.iter().enumerate() {
                let mut placed = false;
                for tier in 0..tiers {
                    let q = key.h(tier, t, p.buckets);
                    let base = tier * p.buckets * p.b + q * p.b;
                    if let Some(free) = (base..base + p.b).find(|&x| slots[x].is_none()) {
                        slots[free] = Some(idx);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    stash.push(idx);
                }
            }
        }
        HashKind::Cuckoo => {
            let pos = |which: usize, t: u128| which * p.buckets + key.h(which, t, p.buckets);
            for idx in 0..tags.len() {
                let mut cur = idx;
                let mut which = 0;
                let mut placed = false;
                for _ in 0..=p.kick_cap() {
                    let at = pos(which, tags[cur]);
                    match slots[at].replace(cur) {
                        None => {
                            placed = true;
                            break;
                        }
                        Some(evicted) => {
                            cur = evicted;
                            which = if at < p.buckets { 1 } else { 0 };
                        }
                    }
                }
                if !placed {
                    stash.push(cur);
                }
            }
        }
    }
    if stash.len() > p.s {
        return Err(Error::BuildFailure { attempts: 1 });
    }
    Ok(Placement { slots, stash })
}

/// Builds with fresh keys until one succeeds, up to the retry cap.
pub fn build_with_retry<R: RngCore>(rng: &mut R, p: &SchemeParams, tags: &[u128]) -> Result<(HashKey, Placement, u32)> {
    for attempt in 1..=RETRY_CAP {
        let key = HashKey::gen(rng, p);
        match build(p, &key, tags) {
            Ok(pl) => return Ok((key, pl, attempt)),
            Err(Error::BuildFailure { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::BuildFailure { attempts: RETRY_CAP })
}

/// Every input is either in the stash or at one of its lookup positions, and
/// appears exactly once.
pub fn findable(p: &SchemeParams, key: &HashKey, tags: &[u128], pl: &Placement) -> bool {
    let mut count = vec![0usize; tags.len()];
    for (pos, slot) in pl.slots.iter().enumerate() {
        if let Some(i) = *slot {
            if i >= tags.len() || !lookup(p, key, tags[i]).contains(&pos) {
                return false;
            }
            count[i] += 1;
        }
    }
    for &i in &pl.stash {
        if i >= tags.len() {
            return false;
        }
        count[i] += 1;
    }
    pl.stash.len() <= p.s && count.iter().all(|&c| c == 1)
}
