//! Sort-based oblivious build for bucketed schemes. Runs on header items
//! held by one server; the client streams them through linear passes and
//! compare-exchange steps of a fixed sorting network.

use rand::RngCore;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::hashing::{buckets_of, HashKey, HashKind, Placement, SchemeParams, RETRY_CAP};
use crate::sort::{comparators, sort_by_network};

/// Routing metadata carried next to each header during a build.
pub const ROUTING_BITS: u64 = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub down: u64,
    pub up: u64,
    pub comparators: u64,
}

impl Cost {
    pub fn items(&self) -> u64 {
        self.down + self.up
    }

    fn scan(&mut self, down: usize, up: usize) {
        self.down += down as u64;
        self.up += up as u64;
    }

    fn sort(&mut self, p: usize) {
        let c = comparators(p);
        self.down += 2 * c;
        self.up += 2 * c;
        self.comparators += c;
    }

    pub fn add(&mut self, o: &Cost) {
        self.down += o.down;
        self.up += o.up;
        self.comparators += o.comparators;
    }
}

/// Server-visible access sequence of a build.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    hasher_state: u64,
    pub events: u64,
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl Trace {
    pub fn new(keep_pairs: bool) -> Trace {
        Trace { hasher_state: 0, events: 0, pairs: keep_pairs.then(Vec::new) }
    }

    fn mix(&mut self, v: impl Hash) {
        let mut h = DefaultHasher::new();
        self.hasher_state.hash(&mut h);
        v.hash(&mut h);
        self.hasher_state = h.finish();
        self.events += 1;
    }

    fn scan(&mut self, down: usize, up: usize) {
        self.mix(("scan", down, up));
    }

    fn cmp(&mut self, a: usize, b: usize) {
        self.mix((a, b));
        if let Some(p) = self.pairs.as_mut() {
            p.push((a, b));
        }
    }

    pub fn digest(&self) -> u64 {
        self.hasher_state
    }
}

#[derive(Clone, Debug)]
pub struct ObliviousOutput {
    pub key: HashKey,
    pub placement: Placement,
    /// Stash region: overflow inputs first, then fillers.
    pub stash_slots: Vec<Option<usize>>,
    /// Excluded inputs, in index order, as they sit after the stash region.
    pub excluded: Vec<usize>,
    pub attempts: u32,
    pub cost: Cost,
    pub trace: Trace,
}

#[derive(Clone, Copy, Debug)]
struct Item {
    uid: u64,
    origin: Option<usize>,
    tag: u128,
    live: bool,
    excluded: bool,
    dest: u64,
}

const INF: u64 = u64::MAX;

fn tiers(p: &SchemeParams) -> Result<usize> {
    match p.kind {
        HashKind::Standard => Ok(1),
        HashKind::TwoTier => Ok(2),
        HashKind::Cuckoo => Err(Error::bad("hashing", "no oblivious cuckoo build is available")),
    }
}

/// Cost of one build attempt over `n_in` items; depends on the shape only.
pub fn build_cost(p: &SchemeParams, n_in: usize) -> Cost {
    let mut c = Cost::default();
    let Ok(t) = tiers(p) else { return c };
    let cap = p.buckets * p.b;
    for _ in 0..t {
        let big = (n_in + cap).next_power_of_two();
        c.scan(n_in, big);
        c.sort(big);
        c.scan(big, big);
        c.sort(big);
    }
    let fin = (n_in + p.s).next_power_of_two();
    c.scan(n_in, fin);
    c.sort(fin);
    c.scan(1, 0);
    c
}

struct Run<'a> {
    p: &'a SchemeParams,
    network: bool,
    cost: Cost,
    trace: Trace,
}

impl Run<'_> {
    fn sort<K: Ord>(&mut self, v: &mut [Item], key: impl Fn(&Item) -> K) {
        self.cost.sort(v.len());
        if self.network {
            let trace = &mut self.trace;
            sort_by_network(v, key, |a, b| trace.cmp(a, b));
        } else {
            self.trace.mix(("network", v.len()));
            v.sort_unstable_by_key(key);
        }
    }

    fn scan(&mut self, down: usize, up: usize) {
        self.cost.scan(down, up);
        self.trace.scan(down, up);
    }

    fn attempt(&mut self, key: &HashKey, inputs: &[Option<u128>]) -> (Placement, Vec<Option<usize>>, Vec<usize>, bool) {
        let p = self.p;
        let n_in = inputs.len();
        let cap = p.buckets * p.b;
        let tiers = tiers(p).expect("checked by caller");
        let mut uid = n_in as u64;
        let mut cur: Vec<Item> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| Item {
                uid: i as u64,
                origin: Some(i),
                tag: t.unwrap_or(0),
                live: t.is_some(),
                excluded: t.is_none(),
                dest: INF,
            })
            .collect();
        let mut slots = vec![None; p.m];
        for tier in 0..tiers {
            let big = (n_in + cap).next_power_of_two();
            self.scan(n_in, big);
            let mut arr = Vec::with_capacity(big);
            for it in &cur {
                let mut it = *it;
                it.dest = if it.live {
                    let (q1, q2) = buckets_of(p, key, it.tag);
                    (if tier == 0 { q1 } else { q2 }) as u64
                } else {
                    INF
                };
                arr.push(it);
            }
            for q in 0..p.buckets {
                for _ in 0..p.b {
                    arr.push(Item { uid, origin: None, tag: 0, live: false, excluded: false, dest: q as u64 });
                    uid += 1;
                }
            }
            while arr.len() < big {
                arr.push(Item { uid, origin: None, tag: 0, live: false, excluded: false, dest: INF });
                uid += 1;
            }
            self.sort(&mut arr, |it| (it.dest, if it.live { 0u8 } else { 1 }, it.uid));
            // Rank pass: the first b items of each bucket stay.
            self.scan(big, big);
            let mut group = (INF, 0usize);
            let mut sort_key = Vec::with_capacity(big);
            for it in &arr {
                if group.0 != it.dest {
                    group = (it.dest, 0);
                }
                let rank = group.1;
                group.1 += 1;
                let k = if it.dest != INF && rank < p.b {
                    (0u8, it.dest * p.b as u64 + rank as u64)
                } else if it.live {
                    (1, it.uid)
                } else if it.excluded {
                    (2, it.uid)
                } else {
                    (3, it.uid)
                };
                sort_key.push(k);
            }
            let mut keyed: Vec<Item> = arr
                .iter()
                .zip(&sort_key)
                .map(|(it, k)| Item { dest: ((k.0 as u64) << 62) | k.1, ..*it })
                .collect();
            self.sort(&mut keyed, |it| it.dest);
            let offset = tier * cap;
            for (pos, it) in keyed[..cap].iter().enumerate() {
                if it.live {
                    slots[offset + pos] = it.origin;
                }
            }
            cur = keyed[cap..cap + n_in]
                .iter()
                .enumerate()
                .map(|(pos, it)| {
                    let still = it.live && pos < n_in;
                    Item { live: still, dest: INF, ..*it }
                })
                .collect();
        }
        let fin = (n_in + p.s).next_power_of_two();
        self.scan(n_in, fin);
        let mut arr = cur;
        for _ in 0..p.s {
            arr.push(Item { uid, origin: None, tag: 0, live: false, excluded: false, dest: INF });
            uid += 1;
        }
        let stash_fill = uid - p.s as u64;
        while arr.len() < fin {
            arr.push(Item { uid, origin: None, tag: 0, live: false, excluded: false, dest: INF });
            uid += 1;
        }
        self.sort(&mut arr, |it| {
            let class = if it.live {
                0u8
            } else if it.origin.is_none() && it.uid >= stash_fill && it.uid < stash_fill + p.s as u64 {
                1
            } else if it.excluded {
                2
            } else {
                3
            };
            (class, it.uid)
        });
        self.scan(1, 0);
        let failed = arr.get(p.s).is_some_and(|it| it.live);
        let stash_slots: Vec<Option<usize>> = arr[..p.s].iter().map(|it| if it.live { it.origin } else { None }).collect();
        let excluded: Vec<usize> = arr[p.s..].iter().filter(|it| it.excluded).filter_map(|it| it.origin).collect();
        let stash = stash_slots.iter().flatten().copied().collect();
        (Placement { slots, stash }, stash_slots, excluded, failed)
    }
}

/// One attempt with a given key. `inputs[i] = None` marks an excluded item.
pub fn build_with_key(p: &SchemeParams, key: &HashKey, inputs: &[Option<u128>], network: bool) -> Result<ObliviousOutput> {
    tiers(p)?;
    if inputs.iter().filter(|t| t.is_some()).count() > p.n {
        return Err(Error::LengthMismatch { expected: p.n, got: inputs.len() });
    }
    let mut run = Run { p, network, cost: Cost::default(), trace: Trace::new(network) };
    let (placement, stash_slots, excluded, failed) = run.attempt(key, inputs);
    if failed {
        return Err(Error::BuildFailure { attempts: 1 });
    }
    Ok(ObliviousOutput { key: key.clone(), placement, stash_slots, excluded, attempts: 1, cost: run.cost, trace: run.trace })
}

/// Full oblivious build. A failed attempt reruns the whole fixed-shape
/// protocol under a fresh key; cost and trace cover every attempt.
pub fn oblivious_build<R: RngCore>(rng: &mut R, p: &SchemeParams, inputs: &[Option<u128>], network: bool) -> Result<ObliviousOutput> {
    tiers(p)?;
    let mut run = Run { p, network, cost: Cost::default(), trace: Trace::new(network) };
    for attempt in 1..=RETRY_CAP {
        let key = HashKey::gen(rng, p);
        let (placement, stash_slots, excluded, failed) = run.attempt(&key, inputs);
        if !failed {
            return Ok(ObliviousOutput { key, placement, stash_slots, excluded, attempts: attempt, cost: run.cost, trace: run.trace });
        }
    }
    Err(Error::BuildFailure { attempts: RETRY_CAP })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{build, findable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn matches_plain_build() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for kind in [HashKind::Standard, HashKind::TwoTier] {
            for n in [0usize, 1, 5, 64, 300] {
                let p = SchemeParams::new(kind, n, 1 << 10, 10);
                let tags: Vec<u128> = (0..n).map(|_| rng.gen()).collect();
                let inputs: Vec<Option<u128>> = tags.iter().map(|t| Some(*t)).collect();
                let key = HashKey::gen(&mut rng, &p);
                let plain = build(&p, &key, &tags);
                let obl = build_with_key(&p, &key, &inputs, n <= 64);
                match (plain, obl) {
                    (Ok(a), Ok(b)) => {
                        assert_eq!(a, b.placement);
                        assert!(findable(&p, &key, &tags, &b.placement));
                        assert_eq!(b.cost, build_cost(&p, n));
                    }
                    (Err(_), Err(_)) => {}
                    (a, b) => panic!("disagree: {a:?} vs {:?}", b.map(|o| o.placement)),
                }
            }
        }
    }

    #[test]
    fn excluded_items_come_back() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let p = SchemeParams::new(HashKind::TwoTier, 40, 1 << 10, 10);
        let inputs: Vec<Option<u128>> = (0..50).map(|i| if i % 5 == 0 { None } else { Some(rng.gen()) }).collect();
        let out = oblivious_build(&mut rng, &p, &inputs, true).unwrap();
        assert_eq!(out.excluded, (0..50).filter(|i| i % 5 == 0).collect::<Vec<_>>());
        assert_eq!(out.stash_slots.len(), 10);
        let placed = out.placement.slots.iter().flatten().count() + out.placement.stash.len();
        assert_eq!(placed, 40);
    }

    #[test]
    fn traces_independent_of_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let p = SchemeParams::new(HashKind::TwoTier, 128, 1 << 10, 10);
        let a: Vec<Option<u128>> = (0..128).map(|_| Some(rng.gen())).collect();
        let b: Vec<Option<u128>> = (0..128).map(|i| Some(i as u128)).collect();
        let ka = HashKey::gen(&mut rng, &p);
        let kb = HashKey::gen(&mut rng, &p);
        let ta = build_with_key(&p, &ka, &a, true).unwrap().trace;
        let tb = build_with_key(&p, &kb, &b, true).unwrap().trace;
        assert_eq!(ta, tb);
    }

    #[test]
    fn cuckoo_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let p = SchemeParams::new(HashKind::Cuckoo, 8, 64, 4);
        assert!(matches!(oblivious_build(&mut rng, &p, &[], false), Err(Error::BadParameter { .. })));
    }
}
