//! Hierarchical engine shared by the single-server baseline, the
//! three-server scheme and the m-server scheme.
//!
//! Level 0 is the top array, levels `1..=L` hold `d - 1` tables each and
//! level `L + 1` is the bottom table that stores the initial data.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::aead::Aead;
use crate::audit::{AuditLog, AuditReport};
use crate::bus::Bus;
use crate::config::{Config, Mutation, Scheme};
use crate::error::{Error, Result};
use crate::hashing::{self, HashKey, SchemeParams};
use crate::hierarchy::{reshuffle_target, tables_to_scan};
use crate::oblivious::{self, ROUTING_BITS};
use crate::oram::{check_op, Op, Oram};
use crate::pir::{combine, pir2_answer, pirm_query};
use crate::prf::Prf;
use crate::record::{EncRecord, Header, Kind, Record};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Three,
    Multi,
}

#[derive(Clone, Debug)]
struct Table {
    params: SchemeParams,
    key: Option<HashKey>,
    epoch: u64,
    live: bool,
}

#[derive(Clone, Debug, Default)]
struct Store {
    top: Vec<EncRecord>,
    stash: Vec<EncRecord>,
    tables: Vec<Vec<Vec<EncRecord>>>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Stash(usize),
    Table(usize, usize, usize),
}

impl Store {
    fn get(&self, s: Slot) -> &EncRecord {
        match s {
            Slot::Stash(i) => &self.stash[i],
            Slot::Table(lv, j, i) => &self.tables[lv][j - 1][i],
        }
    }

    fn get_mut(&mut self, s: Slot) -> &mut EncRecord {
        match s {
            Slot::Stash(i) => &mut self.stash[i],
            Slot::Table(lv, j, i) => &mut self.tables[lv][j - 1][i],
        }
    }
}

fn slot_pos(s: Slot) -> u64 {
    match s {
        Slot::Stash(i) => i as u64,
        Slot::Table(_, j, i) => (j as u64) << 40 | i as u64,
    }
}

/// Last 16 bytes of a ciphertext: its authentication tag.
fn tag_fp(ct: &[u8]) -> u128 {
    u128::from_le_bytes(ct[ct.len() - 16..].try_into().unwrap())
}

struct Lookup {
    found: bool,
    value: Option<Vec<u8>>,
    dummy: Header,
}

pub struct Hier {
    cfg: Config,
    mode: Mode,
    servers: usize,
    levels: usize,
    k: usize,
    s: usize,
    d: u64,
    pb: usize,
    hb: u64,
    rb: u64,
    aead: Aead,
    prf: Prf,
    rng: ChaCha20Rng,
    srv_rng: Vec<ChaCha20Rng>,
    tables: Vec<Vec<Table>>,
    stores: Vec<Store>,
    t: u64,
    sched: u64,
    r: u64,
    reshuffles: u64,
    bus: Bus,
    log: AuditLog,
}

impl Hier {
    pub fn new(cfg: Config, transcripts: bool) -> Result<Hier> {
        let mode = match cfg.scheme {
            Scheme::SingleServerBaseline => Mode::Baseline,
            Scheme::ThreeServer => Mode::Three,
            Scheme::MServer => Mode::Multi,
            _ => return Err(Error::bad("scheme", "not a hierarchical scheme")),
        };
        let servers = cfg.servers();
        let levels = cfg.levels();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let srv_rng = (0..servers).map(|i| ChaCha20Rng::seed_from_u64(cfg.seed ^ (0x5eed_0000 + i as u64))).collect();
        let aead = Aead::random(&mut rng);
        let prf = Prf::random(&mut rng);
        let mut tables = vec![Vec::new()];
        for lv in 1..=levels {
            let p = cfg.level_params(lv);
            tables.push((1..cfg.d).map(|_| Table { params: p.clone(), key: None, epoch: 0, live: false }).collect());
        }
        tables.push(vec![Table { params: cfg.base_params(), key: None, epoch: 0, live: false }]);
        let store = Store {
            top: Vec::new(),
            stash: Vec::new(),
            tables: tables.iter().map(|l| vec![Vec::new(); l.len()]).collect(),
        };
        let mut h = Hier {
            mode,
            servers,
            levels,
            k: cfg.top_size(),
            s: cfg.stash_size(),
            d: cfg.d,
            pb: cfg.payload_bytes(),
            hb: cfg.header_bits(),
            rb: cfg.header_bits() + cfg.b,
            aead,
            prf,
            rng,
            srv_rng,
            tables,
            stores: vec![store; servers],
            t: 0,
            sched: 0,
            r: 0,
            reshuffles: 0,
            bus: Bus::new(servers, transcripts, cfg.audit),
            log: AuditLog::new(cfg.audit),
            cfg,
        };
        h.setup()?;
        Ok(h)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn reshuffles(&self) -> u64 {
        self.reshuffles
    }

    fn mutation(&self) -> Mutation {
        self.cfg.mutation
    }

    fn all(&self) -> Vec<usize> {
        (0..self.servers).collect()
    }

    /// Servers that store a replica of level `lv`.
    fn holders(&self, lv: usize) -> Vec<usize> {
        match self.mode {
            Mode::Baseline => vec![0],
            Mode::Multi => self.all(),
            Mode::Three => {
                let mut v = vec![lv % 3, (lv + 1) % 3];
                v.sort_unstable();
                v
            }
        }
    }

    fn seal(&mut self, rec: &Record) -> EncRecord {
        EncRecord::seal(&self.aead, &mut self.rng, rec)
    }

    fn seal_head(&mut self, h: &Header) -> Vec<u8> {
        EncRecord::seal_head(&self.aead, &mut self.rng, h)
    }

    fn open(&self, ct: &EncRecord) -> Result<Record> {
        ct.open(&self.aead).map_err(integrity)
    }

    fn open_header(&self, ct: &EncRecord) -> Result<Header> {
        ct.open_header(&self.aead).map_err(integrity)
    }

    fn blank(&self, h: Header) -> Record {
        Record::blank(h, self.pb)
    }

    fn saw_record(&mut self, ct: &EncRecord) {
        if self.bus.fingerprinting() {
            self.bus.saw(tag_fp(ct.head()));
            self.bus.saw(tag_fp(ct.body()));
        }
    }

    fn sent_record(&mut self, ct: &EncRecord) {
        if self.bus.fingerprinting() {
            self.bus.sent(tag_fp(ct.head()));
            self.bus.sent(tag_fp(ct.body()));
        }
    }

    /// Client relay between servers: decrypt and re-encrypt every record,
    /// unless the re-encryption mutation is active.
    fn relay(&mut self, arr: Vec<EncRecord>) -> Result<Vec<EncRecord>> {
        for ct in &arr {
            self.saw_record(ct);
        }
        let out = if self.mutation() == Mutation::NoReencryption {
            arr
        } else {
            let mut out = Vec::with_capacity(arr.len());
            for ct in &arr {
                let rec = self.open(ct)?;
                out.push(self.seal(&rec));
            }
            out
        };
        for ct in &out {
            self.sent_record(ct);
        }
        Ok(out)
    }

    fn setup(&mut self) -> Result<()> {
        let base = self.levels + 1;
        let recs: Vec<Record> = (0..self.cfg.n).map(|v| self.blank(Header::real(v))).collect();
        let epoch = 1;
        let p = self.tables[base][0].params.clone();
        let tags = self.tags_for(base, 1, epoch, &recs, false);
        let (key, pl, _) = hashing::build_with_retry(&mut self.rng, &p, &tags)?;
        let table = pl.slots.iter().map(|s| s.map(|i| recs[i].clone())).collect();
        let stash = pl.stash.iter().map(|&i| Some(recs[i].clone())).collect();
        self.install(base, 1, key, epoch, table, stash)?;
        self.bus.end_setup();
        if self.log.enabled {
            self.check_state();
        }
        Ok(())
    }

    /// Lookup inputs of `recs` for table `(lv, j)` in `epoch`: PRF tags in
    /// the three-server scheme, header keys otherwise.
    fn tags_for(&mut self, lv: usize, j: usize, epoch: u64, recs: &[Record], log: bool) -> Vec<u128> {
        recs.iter()
            .map(|r| {
                if log {
                    self.log.reshuffle_tag((lv as u32, j as u32, epoch, r.header.key()));
                }
                self.lookup_input(lv, j, epoch, &r.header)
            })
            .collect()
    }

    fn lookup_input(&self, lv: usize, j: usize, epoch: u64, h: &Header) -> u128 {
        match self.mode {
            Mode::Three => self.prf.tag(lv as u32, j as u32, epoch, h),
            _ => h.key(),
        }
    }

    /// Converts build output into the stored table and stash, padding with
    /// DummyStash records, and uploads them to the holders.
    fn install(
        &mut self,
        lv: usize,
        j: usize,
        key: HashKey,
        epoch: u64,
        table: Vec<Option<Record>>,
        stash: Vec<Option<Record>>,
    ) -> Result<()> {
        if stash.len() > self.s {
            return Err(Error::BuildFailure { attempts: 1 });
        }
        let pad = self.mutation() != Mutation::NoDummyStashPadding;
        let mut sigma = stash.iter().flatten().filter(|r| !r.header.is_empty()).count();
        let mut cts = Vec::with_capacity(table.len());
        for slot in table {
            let rec = match slot {
                Some(r) if !r.header.is_empty() => r,
                _ if pad && sigma > 0 => {
                    sigma -= 1;
                    self.r += 1;
                    self.blank(Header::dummy_stash(self.r))
                }
                _ => self.blank(Header::empty(0)),
            };
            cts.push(self.seal(&rec));
        }
        let mut st = Vec::with_capacity(self.s);
        for i in 0..self.s {
            let rec = match stash.get(i).cloned().flatten() {
                Some(r) if !r.header.is_empty() => r,
                _ if pad => {
                    self.r += 1;
                    self.blank(Header::dummy_stash(self.r))
                }
                _ => self.blank(Header::empty(0)),
            };
            st.push(self.seal(&rec));
        }
        let empty = self.blank(Header::empty(0));
        let top: Vec<EncRecord> = (0..self.k).map(|_| self.seal(&empty)).collect();
        let (rb, m) = (self.rb, cts.len() as u64);
        for srv in self.holders(lv) {
            self.bus.up(srv, "install.table", m * rb);
            self.stores[srv].tables[lv][j - 1] = cts.clone();
        }
        for srv in self.all() {
            self.bus.up(srv, "install.stash", self.s as u64 * rb);
            self.stores[srv].stash = st.clone();
            self.bus.up(srv, "install.top", self.k as u64 * rb);
            self.stores[srv].top = top.clone();
        }
        if self.cfg.epochs_remote {
            self.bus.up(0, "epoch.store", 64 + key.bits());
        }
        let tb = &mut self.tables[lv][j - 1];
        tb.key = Some(key);
        tb.epoch = epoch;
        tb.live = true;
        Ok(())
    }

    fn query(&mut self, op: &Op) -> Result<Vec<u8>> {
        let v = op.addr();
        let mut q = Lookup { found: false, value: None, dummy: Header::dummy_hash(self.t) };

        let top_cts = self.stores[0].top.clone();
        self.bus.down(0, "top", self.k as u64 * self.rb);
        let mut top = Vec::with_capacity(self.k);
        for ct in &top_cts {
            self.saw_record(ct);
            top.push(self.open(ct)?);
        }
        let hit = top.iter().position(|r| r.header == Header::real(v));
        if let Some(p) = hit {
            q.found = true;
            q.value = Some(top[p].payload.clone());
        }

        self.scan_stash(v, &mut q)?;
        for lv in 1..=self.levels + 1 {
            self.scan_level(lv, v, &mut q)?;
        }
        let old = q.value.ok_or(Error::InternalNotFound(v))?;
        let new = match op {
            Op::Read(_) => old.clone(),
            Op::Write(_, x) => x.clone(),
        };

        let mut changed = vec![false; self.k];
        if let Some(p) = hit {
            top[p].header = q.dummy;
            changed[p] = true;
        }
        let free = top
            .iter()
            .position(|r| r.header.is_empty())
            .ok_or_else(|| Error::IntegrityFailure("top array is full".into()))?;
        top[free] = Record::new(Header::real(v), new);
        changed[free] = true;
        let keep = self.mutation() == Mutation::NoReencryption;
        let mut out = Vec::with_capacity(self.k);
        for (i, rec) in top.iter().enumerate() {
            let ct = if keep && !changed[i] { top_cts[i].clone() } else { self.seal(rec) };
            self.sent_record(&ct);
            out.push(ct);
        }
        for srv in self.all() {
            self.bus.up(srv, "top", self.k as u64 * self.rb);
            self.stores[srv].top = out.clone();
        }

        self.t += 1;
        self.sched += 1;
        if let Some((lv, j)) = reshuffle_target(self.sched, self.k as u64, self.d) {
            self.reshuffle(lv, j)?;
        }
        Ok(old)
    }

    fn scan_stash(&mut self, v: u64, q: &mut Lookup) -> Result<()> {
        let s = self.s;
        if self.mode == Mode::Baseline {
            self.bus.down(0, "stash", s as u64 * self.rb);
            let cts = self.stores[0].stash.clone();
            let mut heads = Vec::with_capacity(s);
            let mut at = None;
            for (i, ct) in cts.iter().enumerate() {
                self.saw_record(ct);
                let rec = self.open(ct)?;
                if !q.found && rec.header == Header::real(v) {
                    at = Some(i);
                    q.value = Some(rec.payload.clone());
                }
                heads.push(rec.header);
            }
            let slots: Vec<Slot> = (0..s).map(Slot::Stash).collect();
            return self.rewrite_heads(&[0], "stash.headers", &slots, &cts, heads, at, q);
        }
        let cts = self.stores[0].stash.clone();
        self.bus.down(0, "stash.headers", s as u64 * self.hb);
        let mut heads = Vec::with_capacity(s);
        let mut at = None;
        for (i, ct) in cts.iter().enumerate() {
            if self.bus.fingerprinting() {
                self.bus.saw(tag_fp(ct.head()));
            }
            let h = self.open_header(ct)?;
            if !q.found && h == Header::real(v) {
                at = Some(i);
            }
            heads.push(h);
        }
        let slots: Vec<Slot> = (0..s).map(Slot::Stash).collect();
        let srvs = if self.mode == Mode::Three { vec![0, 1] } else { self.all() };
        let p = at.unwrap_or_else(|| self.rng.gen_range(0..s));
        let payload = self.pir_read(&srvs, &slots, p, "stash.pir")?;
        if at.is_some() {
            q.value = Some(payload);
        }
        let holders = self.all();
        self.rewrite_heads(&holders, "stash.headers", &slots, &cts, heads, at, q)
    }

    /// Reads the payload at candidate `p` with XOR PIR over `srvs`.
    fn pir_read(&mut self, srvs: &[usize], slots: &[Slot], p: usize, phase: &'static str) -> Result<Vec<u8>> {
        let shares = pirm_query(&mut self.rng, p, slots.len(), srvs.len())?;
        let mut answers = Vec::with_capacity(srvs.len());
        for (&srv, sh) in srvs.iter().zip(&shares) {
            self.bus.up(srv, phase, slots.len() as u64);
            let bodies: Vec<&[u8]> = slots.iter().map(|&x| self.stores[srv].get(x).body()).collect();
            answers.push(pir2_answer(&bodies, sh)?);
            self.bus.down(srv, phase, self.cfg.b);
        }
        self.aead.open(&combine(&answers)).map_err(integrity)
    }

    /// Re-encrypts every header of `slots`, turning the one at `at` into the
    /// round's DummyHash, and uploads them to `holders`.
    #[allow(clippy::too_many_arguments)]
    fn rewrite_heads(
        &mut self,
        holders: &[usize],
        phase: &'static str,
        slots: &[Slot],
        old: &[EncRecord],
        mut heads: Vec<Header>,
        at: Option<usize>,
        q: &mut Lookup,
    ) -> Result<()> {
        if let Some(i) = at {
            heads[i] = q.dummy;
            q.found = true;
        }
        let keep = self.mutation() == Mutation::NoReencryption;
        let mut new = Vec::with_capacity(heads.len());
        for (i, h) in heads.iter().enumerate() {
            let ct = if keep && at != Some(i) { old[i].head().to_vec() } else { self.seal_head(h) };
            if self.bus.fingerprinting() {
                self.bus.sent(tag_fp(&ct));
            }
            new.push(ct);
        }
        let pos: Vec<u64> = slots.iter().map(|&s| slot_pos(s)).collect();
        for &srv in holders {
            self.bus.up_at(srv, phase, heads.len() as u64 * self.hb, pos.clone());
            for (x, ct) in slots.iter().zip(&new) {
                self.stores[srv].get_mut(*x).set_head(ct);
            }
        }
        Ok(())
    }

    fn scan_level(&mut self, lv: usize, v: u64, q: &mut Lookup) -> Result<()> {
        let r = if lv <= self.levels { tables_to_scan(self.sched, self.k as u64, self.d, lv) } else { 1 };
        if r == 0 {
            return Ok(());
        }
        let holders = self.holders(lv);
        let reader = holders[0];
        let full = self.mode == Mode::Baseline;
        let mut slots = Vec::new();
        let mut cts = Vec::new();
        let mut heads = Vec::new();
        let mut at = None;
        for j in (1..=r).rev() {
            let tb = &self.tables[lv][j - 1];
            if !tb.live {
                return Err(Error::IntegrityFailure(format!("level {lv} table {j} scanned while empty")));
            }
            let epoch = tb.epoch;
            let found = q.found || at.is_some();
            let want = if found && self.mutation() != Mutation::NoDummySubstitution { q.dummy } else { Header::real(v) };
            let input = self.lookup_input(lv, j, epoch, &want);
            if self.mode == Mode::Three {
                self.log.query_tag((lv as u32, j as u32, epoch, want.key()));
            }
            self.log.lookup((lv as u32, j as u32, epoch, want.key()));
            let tb = &self.tables[lv][j - 1];
            let key = tb.key.as_ref().expect("live table has a key");
            if self.cfg.epochs_remote {
                self.bus.down(reader, "epoch.fetch", 64 + key.bits());
            }
            let pos = hashing::lookup(&tb.params, key, input);
            let unit = if full { self.rb } else { self.hb };
            self.bus.down_at(reader, "level.read", pos.len() as u64 * unit, pos.iter().map(|&p| p as u64).collect());
            for p in pos {
                let x = Slot::Table(lv, j, p);
                let ct = self.stores[reader].get(x).clone();
                let h = if full {
                    self.saw_record(&ct);
                    let rec = self.open(&ct)?;
                    if !q.found && at.is_none() && rec.header == Header::real(v) {
                        q.value = Some(rec.payload.clone());
                    }
                    rec.header
                } else {
                    if self.bus.fingerprinting() {
                        self.bus.saw(tag_fp(ct.head()));
                    }
                    self.open_header(&ct)?
                };
                if !q.found && at.is_none() && h == Header::real(v) {
                    at = Some(slots.len());
                }
                slots.push(x);
                cts.push(ct);
                heads.push(h);
            }
        }
        if !full {
            let srvs = holders.clone();
            let p = at.unwrap_or_else(|| self.rng.gen_range(0..slots.len()));
            let payload = self.pir_read(&srvs, &slots, p, "level.pir")?;
            if at.is_some() {
                q.value = Some(payload);
            }
        }
        self.rewrite_heads(&holders, "level.headers", &slots, &cts, heads, at, q)
    }

    /// Tables merged by a reshuffle into level `lv`.
    fn sources(&self, lv: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for l in 1..lv.min(self.levels + 1) {
            for j in 1..self.d as usize {
                if self.tables[l][j - 1].live {
                    v.push((l, j));
                }
            }
        }
        if lv == self.levels + 1 {
            v.push((lv, 1));
        }
        v
    }

    fn expected_inputs(&self, lv: usize) -> usize {
        if lv == self.levels + 1 {
            self.cfg.n as usize
        } else {
            self.cfg.level_capacity(lv)
        }
    }

    fn check_count(&mut self, lv: usize, got: usize) {
        let want = self.expected_inputs(lv);
        if got != want {
            self.log.report.receive_count += 1;
            self.log.note(|| format!("level {lv} reshuffle received {got} records, expected {want}"));
        }
    }

    /// Records kept by the client when merging into `lv`: everything but
    /// empties, and only reals when rebuilding the bottom table.
    fn keep(&self, lv: usize, h: &Header) -> bool {
        if lv == self.levels + 1 {
            h.is_real()
        } else {
            !h.is_empty()
        }
    }

    fn reshuffle(&mut self, lv: usize, j: usize) -> Result<()> {
        let sources = self.sources(lv);
        let epoch = self.tables[lv][j - 1].epoch + 1;
        let (key, table, stash) = match self.mode {
            Mode::Three => self.reshuffle_three(lv, j, epoch, &sources)?,
            Mode::Multi => self.reshuffle_multi(lv, j, epoch, &sources)?,
            Mode::Baseline => self.reshuffle_baseline(lv, &sources)?,
        };
        for &(l, jj) in &sources {
            self.tables[l][jj - 1].live = false;
            self.tables[l][jj - 1].key = None;
            for st in self.stores.iter_mut() {
                st.tables[l][jj - 1] = Vec::new();
            }
        }
        self.install(lv, j, key, epoch, table, stash)?;
        self.reshuffles += 1;
        if lv == self.levels + 1 {
            self.sched = 0;
        }
        if self.log.enabled {
            self.check_state();
        }
        Ok(())
    }

    /// Gather, relay through three permutations, tag, and let the third
    /// server build the table.
    #[allow(clippy::type_complexity)]
    fn reshuffle_three(
        &mut self,
        lv: usize,
        j: usize,
        epoch: u64,
        sources: &[(usize, usize)],
    ) -> Result<(HashKey, Vec<Option<Record>>, Vec<Option<Record>>)> {
        let pair = self.holders(lv);
        let (a, b) = (pair[0], pair[1]);
        let c = 3 - a - b;
        let mut temp: Vec<Vec<EncRecord>> = vec![Vec::new(); 3];
        temp[0].extend(self.stores[0].top.iter().cloned());
        temp[0].extend(self.stores[0].stash.iter().cloned());
        for &(l, jj) in sources {
            let h = self.holders(l)[0];
            let t = self.stores[h].tables[l][jj - 1].clone();
            temp[h].extend(t);
        }
        let mut arr = Vec::new();
        for (i, srv) in [c, b, a].into_iter().enumerate() {
            if i > 0 {
                self.bus.up(srv, "reshuffle.relay", arr.len() as u64 * self.rb);
            }
            arr.append(&mut temp[srv]);
            arr.shuffle(&mut self.srv_rng[srv]);
            self.bus.down(srv, "reshuffle.relay", arr.len() as u64 * self.rb);
            if i < 2 {
                arr = self.relay(arr)?;
            }
        }
        let mut recs = Vec::with_capacity(arr.len());
        for ct in &arr {
            self.saw_record(ct);
            let rec = self.open(ct)?;
            if self.keep(lv, &rec.header) {
                recs.push(rec);
            }
        }
        self.check_count(lv, recs.len());
        let tags = self.tags_for(lv, j, epoch, &recs, true);
        for r in &recs {
            let ct = self.seal(r);
            self.sent_record(&ct);
        }
        let n = recs.len() as u64;
        self.bus.up(c, "reshuffle.tagged", n * (self.rb + self.cfg.lambda as u64));
        let p = self.tables[lv][j - 1].params.clone();
        let (key, pl, _) = hashing::build_with_retry(&mut self.srv_rng[c], &p, &tags)?;
        self.bus.down(c, "reshuffle.meta", 64 + key.bits());
        self.bus.down(c, "reshuffle.table", (p.m + self.s) as u64 * self.rb);
        let table = pl.slots.iter().map(|s| s.map(|i| recs[i].clone())).collect();
        let stash = pl.stash.iter().map(|&i| Some(recs[i].clone())).collect();
        Ok((key, table, stash))
    }

    /// Oblivious build at one reshuffler, then tag matching after a
    /// permutation chain through every other server.
    #[allow(clippy::type_complexity)]
    fn reshuffle_multi(
        &mut self,
        lv: usize,
        j: usize,
        epoch: u64,
        sources: &[(usize, usize)],
    ) -> Result<(HashKey, Vec<Option<Record>>, Vec<Option<Record>>)> {
        let m = self.servers;
        let r0 = if self.cfg.fixed_reshuffler { 0 } else { lv % m };
        let r1 = (r0 + 1) % m;
        let (rb, hb, lambda) = (self.rb, self.hb, self.cfg.lambda as u64);

        let mut gathered: Vec<EncRecord> = self.stores[r0].top.clone();
        gathered.extend(self.stores[r0].stash.iter().cloned());
        for &(l, jj) in sources {
            gathered.extend(self.stores[r0].tables[l][jj - 1].iter().cloned());
        }
        self.bus.down(r0, "reshuffle.gather", gathered.len() as u64 * rb);
        let mut ys = Vec::new();
        for ct in &gathered {
            self.saw_record(ct);
            let rec = self.open(ct)?;
            if self.keep(lv, &rec.header) {
                ys.push(rec);
            }
        }
        self.check_count(lv, ys.len());
        let n = ys.len();
        let p = self.tables[lv][j - 1].params.clone();
        let total = p.m + self.s;
        if n > p.n {
            return Err(Error::LengthMismatch { expected: p.n, got: n });
        }
        let y_cts: Vec<EncRecord> = ys.iter().map(|r| self.seal(r)).collect();
        self.bus.up(r1, "reshuffle.y", n as u64 * rb);

        // Header copy to the reshuffler.
        self.bus.down(r1, "reshuffle.y.headers", n as u64 * hb);
        for ct in &y_cts {
            if self.bus.fingerprinting() {
                self.bus.saw(tag_fp(ct.head()));
            }
        }
        self.bus.up(r0, "reshuffle.y.headers", n as u64 * hb);

        let inputs: Vec<Option<u128>> = ys.iter().map(|r| Some(r.header.key())).collect();
        let out = oblivious::oblivious_build(&mut self.rng, &p, &inputs, false)?;
        let unit = hb + ROUTING_BITS;
        self.bus.down(r0, "build", out.cost.down * unit);
        self.bus.up(r0, "build", out.cost.up * unit);

        // Matching tags for every slot of the built table and stash.
        self.bus.down(r0, "match.headers", total as u64 * hb);
        let mut slot_tag: HashMap<u128, usize> = HashMap::with_capacity(total);
        let mut z = 0u64;
        let layout: Vec<Option<usize>> = out.placement.slots.iter().chain(&out.stash_slots).copied().collect();
        for (pos, s) in layout.iter().enumerate() {
            let h = match s {
                Some(i) => ys[*i].header,
                None => {
                    z += 1;
                    Header::empty(z)
                }
            };
            self.log.match_tag((lv as u32, j as u32, epoch, h.key()));
            slot_tag.insert(self.prf.tag(lv as u32, j as u32, epoch, &h), pos);
        }
        self.bus.up(r0, "match.tags", total as u64 * lambda);

        // Fill with numbered empties and permute along the chain.
        let mut arr = y_cts;
        for zz in 1..=(total - n) as u64 {
            let e = self.blank(Header::empty(zz));
            arr.push(self.seal(&e));
        }
        self.bus.up(r1, "match.empties", (total - n) as u64 * rb);
        let chain: Vec<usize> = (1..m).map(|i| (r0 + i) % m).collect();
        for (i, &srv) in chain.iter().enumerate() {
            if i > 0 {
                arr = self.relay(arr)?;
                self.bus.up(srv, "match.chain", total as u64 * rb);
            }
            arr.shuffle(&mut self.srv_rng[srv]);
            self.bus.down(srv, "match.chain", total as u64 * rb);
        }

        let mut placed: Vec<Option<Record>> = vec![None; total];
        for ct in &arr {
            self.saw_record(ct);
            let rec = self.open(ct)?;
            let tag = self.prf.tag(lv as u32, j as u32, epoch, &rec.header);
            let pos = *slot_tag.get(&tag).ok_or(Error::TagMismatch)?;
            placed[pos] = Some(rec);
        }
        self.bus.up(r0, "match.tagged", total as u64 * (rb + lambda));
        self.bus.down(r0, "install.read", total as u64 * rb);
        let stash = placed.split_off(p.m);
        Ok((out.key, placed, stash))
    }

    /// Oblivious build over full records at the single server.
    #[allow(clippy::type_complexity)]
    fn reshuffle_baseline(
        &mut self,
        lv: usize,
        sources: &[(usize, usize)],
    ) -> Result<(HashKey, Vec<Option<Record>>, Vec<Option<Record>>)> {
        let mut cts: Vec<EncRecord> = self.stores[0].top.clone();
        cts.extend(self.stores[0].stash.iter().cloned());
        for &(l, jj) in sources {
            cts.extend(self.stores[0].tables[l][jj - 1].iter().cloned());
        }
        let mut recs = Vec::with_capacity(cts.len());
        let mut inputs = Vec::with_capacity(cts.len());
        for ct in &cts {
            self.saw_record(ct);
            let rec = self.open(ct)?;
            inputs.push(self.keep(lv, &rec.header).then(|| rec.header.key()));
            recs.push(rec);
        }
        let got = inputs.iter().flatten().count();
        self.check_count(lv, got);
        let p = self.tables[lv.min(self.levels + 1)][0].params.clone();
        let out = oblivious::oblivious_build(&mut self.rng, &p, &inputs, false)?;
        let unit = self.rb + ROUTING_BITS;
        self.bus.down(0, "build", out.cost.down * unit);
        self.bus.up(0, "build", out.cost.up * unit);
        self.bus.down(0, "install.read", (p.m + self.s) as u64 * self.rb);
        let table = out.placement.slots.iter().map(|s| s.map(|i| recs[i].clone())).collect();
        let stash = out.stash_slots.iter().map(|s| s.map(|i| recs[i].clone())).collect();
        Ok((out.key, table, stash))
    }

    /// Decrypts the server state and checks the stash, fullness, address
    /// uniqueness and replica invariants.
    fn replica_mismatches(&self, bodies: bool) -> u64 {
        let mut bad = 0;
        let st = &self.stores;
        for srv in 1..self.servers {
            if differ(&st[srv].stash, &st[0].stash, bodies) || differ(&st[srv].top, &st[0].top, bodies) {
                bad += 1;
            }
        }
        for lv in 1..=self.levels + 1 {
            for w in self.holders(lv).windows(2) {
                let (a, b) = (&st[w[0]].tables[lv], &st[w[1]].tables[lv]);
                if a.iter().zip(b).any(|(x, y)| differ(x, y, bodies)) {
                    bad += 1;
                }
            }
        }
        bad
    }

    fn check_state(&mut self) {
        let rep = &mut self.log.report;
        rep.checks += 1;
        let open = |ct: &EncRecord| ct.open_header(&self.aead).ok();
        let mut notes = Vec::new();

        let st = &self.stores[0];
        let stash_ok = st.stash.len() == self.s && st.stash.iter().all(|ct| open(ct).is_some_and(|h| !h.is_empty()));
        let mut fullness_bad = 0;
        let mut addrs = HashSet::new();
        let mut dup = 0;
        let mut add = |h: Option<Header>, dup: &mut u64| {
            if let Some(h) = h {
                if h.kind == Kind::Real && !addrs.insert(h.value) {
                    *dup += 1;
                }
            }
        };
        for ct in st.top.iter().chain(&st.stash) {
            add(open(ct), &mut dup);
        }
        for lv in 1..=self.levels + 1 {
            let want = if lv <= self.levels { tables_to_scan(self.sched, self.k as u64, self.d, lv) } else { 1 };
            let cap = self.expected_inputs(lv);
            let reader = self.holders(lv)[0];
            for (j, tb) in self.tables[lv].iter().enumerate() {
                let cts = &self.stores[reader].tables[lv][j];
                let full = tb.live && cts.iter().filter(|ct| open(ct).is_some_and(|h| !h.is_empty())).count() == cap;
                if full != (j < want) {
                    fullness_bad += 1;
                    notes.push(format!("level {lv} table {} fullness wrong at t={}", j + 1, self.t));
                }
                for ct in cts {
                    add(open(ct), &mut dup);
                }
            }
        }
        let replica_bad = self.replica_mismatches(false);
        let rep = &mut self.log.report;
        if !stash_ok {
            rep.stash_not_full += 1;
            notes.push(format!("stash not full at t={}", self.t));
        }
        rep.fullness_mismatch += fullness_bad;
        rep.duplicate_address += dup;
        rep.replica_mismatch += replica_bad;
        for n in notes {
            self.log.note(|| n);
        }
    }
}

/// Replicated arrays that differ between holders. Only header ciphertexts
/// are compared unless `bodies` is set.
pub(crate) fn differ(a: &[EncRecord], b: &[EncRecord], bodies: bool) -> bool {
    if bodies {
        a != b
    } else {
        a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.head() != y.head())
    }
}

fn integrity(e: Error) -> Error {
    match e {
        Error::AuthFailure | Error::BadHeader => Error::IntegrityFailure(e.to_string()),
        other => other,
    }
}

impl Oram for Hier {
    fn access(&mut self, op: &Op) -> Result<Vec<u8>> {
        check_op(&self.cfg, op)?;
        let out = self.query(op);
        self.bus.end_access();
        out
    }

    fn bus(&self) -> &Bus {
        &self.bus
    }

    fn config(&self) -> &Config {
        &self.cfg
    }

    fn audit(&mut self) -> AuditReport {
        if self.log.enabled {
            self.log.report.checks += 1;
            self.log.report.replica_mismatch += self.replica_mismatches(true);
        }
        let mut rep = self.log.report.clone();
        rep.linkable_upload = self.bus.linkable;
        rep
    }
}
