//! Worst-case two-server variant. Every level has an active and an inactive
//! instance of `d` tables, each table with its own stash. A full level is
//! swapped out and merged into the next level by a reshuffle process that
//! exchanges a fixed number of bits per round.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::aead::Aead;
use crate::audit::{AuditLog, AuditReport};
use crate::bus::{Bus, Dir};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::hashing::{self, HashKey, SchemeParams};
use crate::hier::differ;
use crate::oblivious::{self, Cost, ROUTING_BITS};
use crate::oram::{check_op, Op, Oram};
use crate::pir::{combine, pir2_answer, pirm_query};
use crate::record::{EncRecord, Header, Kind, Record};

/// Plaintext length of a process state blob.
const BLOB_BYTES: usize = 64;
const BLOB_VERSION: u8 = 1;

#[derive(Clone, Debug)]
struct Tbl {
    params: SchemeParams,
    key: HashKey,
    epoch: u64,
    live: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Msg {
    pub srv: usize,
    pub dir: Dir,
    pub phase: &'static str,
    pub bits: u64,
}

/// Position of a record in server storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Pos {
    Top(usize, usize),
    Lvl(usize, usize, usize, usize),
    Base(usize),
}

#[derive(Clone, Copy, Debug)]
enum Item {
    Src(Pos),
    Filler(Header),
}

#[derive(Clone, Debug)]
struct Process {
    dest: usize,
    inst: usize,
    j: usize,
    epoch: u64,
    key: HashKey,
    layout: Vec<Option<Item>>,
    plan: Vec<Msg>,
    idx: usize,
    off: u64,
    sent: u64,
}

#[derive(Clone, Debug, Default)]
struct Store {
    top: [Vec<EncRecord>; 2],
    lv: Vec<[Vec<Vec<EncRecord>>; 2]>,
    base: Vec<EncRecord>,
    blobs: HashMap<usize, Vec<u8>>,
}

impl Store {
    fn get(&self, p: Pos) -> &EncRecord {
        match p {
            Pos::Top(a, i) => &self.top[a][i],
            Pos::Lvl(lv, a, j, i) => &self.lv[lv][a][j - 1][i],
            Pos::Base(i) => &self.base[i],
        }
    }

    fn get_mut(&mut self, p: Pos) -> &mut EncRecord {
        match p {
            Pos::Top(a, i) => &mut self.top[a][i],
            Pos::Lvl(lv, a, j, i) => &mut self.lv[lv][a][j - 1][i],
            Pos::Base(i) => &mut self.base[i],
        }
    }
}

pub struct Deamortized {
    cfg: Config,
    levels: usize,
    k: usize,
    s: usize,
    d: usize,
    pb: usize,
    hb: u64,
    rb: u64,
    aead: Aead,
    rng: ChaCha20Rng,
    top_active: usize,
    top_fill: usize,
    top_live: [bool; 2],
    active: Vec<usize>,
    fill: Vec<usize>,
    tbl: Vec<[Vec<Tbl>; 2]>,
    base: Tbl,
    procs: Vec<Option<Process>>,
    rho: Vec<u64>,
    stores: Vec<Store>,
    t: u64,
    r: u64,
    completed: Vec<u64>,
    bus: Bus,
    log: AuditLog,
}

impl Deamortized {
    pub fn new(cfg: Config, transcripts: bool) -> Result<Deamortized> {
        let levels = cfg.levels();
        let (k, s, d) = (cfg.top_size(), cfg.stash_size(), cfg.d as usize);
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let aead = Aead::random(&mut rng);
        let mut tbl = vec![[Vec::new(), Vec::new()]];
        for lv in 1..=levels {
            let p = cfg.level_params(lv);
            let mut mk = || {
                (0..d)
                    .map(|_| Tbl { params: p.clone(), key: HashKey::gen(&mut rng, &p), epoch: 0, live: false })
                    .collect::<Vec<_>>()
            };
            tbl.push([mk(), mk()]);
        }
        let bp = cfg.base_params();
        let base = Tbl { key: HashKey::gen(&mut rng, &bp), params: bp, epoch: 0, live: false };
        let mut o = Deamortized {
            levels,
            k,
            s,
            d,
            pb: cfg.payload_bytes(),
            hb: cfg.header_bits(),
            rb: cfg.header_bits() + cfg.b,
            aead,
            rng,
            top_active: 0,
            top_fill: 0,
            top_live: [true, false],
            active: vec![0; levels + 1],
            fill: vec![0; levels + 1],
            tbl,
            base,
            procs: vec![None; levels + 2],
            rho: vec![0; levels + 2],
            stores: Vec::new(),
            t: 0,
            r: 0,
            completed: vec![0; levels + 2],
            bus: Bus::new(2, transcripts, false),
            log: AuditLog::new(cfg.audit),
            cfg,
        };
        o.calibrate();
        o.setup()?;
        Ok(o)
    }

    fn blank(&self, h: Header) -> Record {
        Record::blank(h, self.pb)
    }

    fn seal(&mut self, rec: &Record) -> EncRecord {
        EncRecord::seal(&self.aead, &mut self.rng, rec)
    }

    fn open(&self, ct: &EncRecord) -> Result<Record> {
        ct.open(&self.aead).map_err(|e| Error::IntegrityFailure(e.to_string()))
    }

    fn open_header(&self, ct: &EncRecord) -> Result<Header> {
        ct.open_header(&self.aead).map_err(|e| Error::IntegrityFailure(e.to_string()))
    }

    /// Records per round moved by each reshuffle process, by destination level.
    pub fn rho(&self) -> &[u64] {
        &self.rho
    }

    /// Period in rounds between process starts for destination `dest`.
    fn period(&self, dest: usize) -> u64 {
        (self.d as u64).pow(dest as u32 - 1) * self.k as u64
    }

    fn dest_params(&self, dest: usize) -> &SchemeParams {
        if dest == self.levels + 1 {
            &self.base.params
        } else {
            &self.tbl[dest][0][0].params
        }
    }

    /// Source slots and gathered item count of a process into `dest`.
    fn process_shape(&self, dest: usize) -> (usize, usize) {
        let table = |lv: usize| self.tbl[lv][0][0].params.m + self.s;
        if dest == 1 {
            (self.k, self.k)
        } else if dest <= self.levels {
            (self.d * table(dest - 1), self.cfg.level_capacity(dest))
        } else {
            (self.d * table(self.levels) + self.base.params.m + self.s, self.cfg.n as usize)
        }
    }

    /// Messages of one reshuffle into `dest`, in order. Depends only on the
    /// level and the build cost.
    pub fn plan(&self, dest: usize, cost: &Cost) -> Vec<Msg> {
        let (n_src, n) = self.process_shape(dest);
        let p = self.dest_params(dest);
        let total = (p.m + self.s) as u64;
        let (rb, hb, lambda) = (self.rb, self.hb, self.cfg.lambda as u64);
        let (n_src, n) = (n_src as u64, n as u64);
        let r0 = dest % 2;
        let r1 = 1 - r0;
        let m = |srv, dir, phase, bits| Msg { srv, dir, phase, bits };
        use Dir::{Down, Up};
        vec![
            m(r0, Down, "elim.read", n_src * rb),
            m(r0, Up, "elim.write", n_src * rb),
            m(r1, Up, "elim.write", n_src * rb),
            m(r0, Down, "reshuffle.gather", n_src * rb),
            m(r1, Up, "reshuffle.y", n * rb),
            m(r1, Down, "reshuffle.y.headers", n * hb),
            m(r0, Up, "reshuffle.y.headers", n * hb),
            m(r0, Down, "build", cost.down * (hb + ROUTING_BITS)),
            m(r0, Up, "build", cost.up * (hb + ROUTING_BITS)),
            m(r0, Down, "match.headers", total * hb),
            m(r0, Up, "match.tags", total * lambda),
            m(r1, Up, "match.empties", (total - n) * rb),
            m(r1, Down, "match.chain", total * rb),
            m(r0, Up, "match.tagged", total * (rb + lambda)),
            m(r0, Down, "install.read", total * rb),
            m(r0, Up, "install", total * rb),
            m(r1, Up, "install", total * rb),
        ]
    }

    fn plan_bits(&self, dest: usize) -> u64 {
        let (_, n) = self.process_shape(dest);
        let cost = oblivious::build_cost(self.dest_params(dest), n);
        self.plan(dest, &cost).iter().map(|m| m.bits).sum()
    }

    /// Sets each rate from the metered cost of one reshuffle into the level:
    /// `c_i = cost / (rb * (P_i + m_i))` and `rho_i = ceil(c_i (P_i + m_i) / P_i) + 1`
    /// with `P_i` the process period in rounds.
    fn calibrate(&mut self) {
        for dest in 1..=self.levels + 1 {
            let period = self.period(dest);
            let m = self.dest_params(dest).m as u64;
            let c = match self.cfg.rate_constant {
                Some(c) => c,
                None => {
                    let bits = self.plan_bits(dest);
                    if bits == 0 {
                        4.0
                    } else {
                        bits as f64 / (self.rb * (period + m)) as f64
                    }
                }
            };
            self.rho[dest] = (c * (period + m) as f64 / period as f64).ceil() as u64 + 1;
        }
    }

    /// Fixed per-round query cost in bits.
    pub fn query_bits(&self) -> u64 {
        let (k, rb, hb, b) = (self.k as u64, self.rb, self.hb, self.cfg.b);
        let probe = |c: usize| {
            let n = (c + self.s) as u64;
            n * hb + 2 * n + 2 * b + 2 * n * hb
        };
        let mut bits = 2 * k * rb + 4 * k * rb;
        for lv in 1..=self.levels {
            bits += 2 * self.d as u64 * probe(self.tbl[lv][0][0].params.c_lookup());
        }
        bits + probe(self.base.params.c_lookup())
    }

    fn blob_bits(&self) -> u64 {
        (EncRecord::len_for(BLOB_BYTES) - crate::record::HEAD_CT) as u64 * 8
    }

    /// Upper bound on the bits of any single access.
    pub fn static_bound(&self) -> u64 {
        let procs: u64 = (1..=self.levels + 1).map(|i| self.rho[i] * self.rb + 2 * self.blob_bits()).sum();
        self.query_bits() + procs
    }

    /// Completed reshuffle processes per destination level.
    pub fn completed(&self) -> &[u64] {
        &self.completed
    }

    fn setup(&mut self) -> Result<()> {
        let empty = self.blank(Header::empty(0));
        let mut st = Store { lv: vec![[Vec::new(), Vec::new()]], ..Default::default() };
        for a in 0..2 {
            st.top[a] = (0..self.k).map(|_| self.seal(&empty)).collect();
        }
        for lv in 1..=self.levels {
            let len = self.tbl[lv][0][0].params.m + self.s;
            let mut inst = [Vec::new(), Vec::new()];
            for tables in inst.iter_mut() {
                for _ in 0..self.d {
                    tables.push((0..len).map(|_| self.seal(&empty)).collect());
                }
            }
            st.lv.push(inst);
        }
        let recs: Vec<Record> = (0..self.cfg.n).map(|v| self.blank(Header::real(v))).collect();
        let keys: Vec<u128> = recs.iter().map(|r| r.header.key()).collect();
        let (key, pl, _) = hashing::build_with_retry(&mut self.rng, &self.base.params, &keys)?;
        let mut base = Vec::with_capacity(pl.slots.len() + self.s);
        for slot in &pl.slots {
            let rec = slot.map_or(empty.clone(), |i| recs[i].clone());
            base.push(self.seal(&rec));
        }
        for i in 0..self.s {
            let rec = pl.stash.get(i).map_or(empty.clone(), |&x| recs[x].clone());
            base.push(self.seal(&rec));
        }
        st.base = base;
        self.base.key = key;
        self.base.epoch = 1;
        self.base.live = true;
        let bits: u64 = (st.top[0].len() * 2 + st.base.len() + st.lv.iter().flatten().flatten().map(Vec::len).sum::<usize>()) as u64 * self.rb;
        self.stores = vec![st.clone(), st];
        for srv in 0..2 {
            self.bus.up(srv, "setup", bits);
        }
        self.bus.end_setup();
        Ok(())
    }

    fn query(&mut self, op: &Op) -> Result<Vec<u8>> {
        let v = op.addr();
        let dummy = Header::dummy_hash(self.t);
        let mut found = false;
        let mut value = None;

        self.bus.down(0, "top", 2 * self.k as u64 * self.rb);
        let mut tops = [Vec::new(), Vec::new()];
        for a in [self.top_active, 1 - self.top_active] {
            for i in 0..self.k {
                let mut rec = self.open(&self.stores[0].top[a][i])?;
                if self.top_live[a] && !found && rec.header == Header::real(v) {
                    found = true;
                    value = Some(rec.payload.clone());
                    rec.header.current = false;
                }
                tops[a].push(rec);
            }
        }

        for lv in 1..=self.levels {
            for a in [self.active[lv], 1 - self.active[lv]] {
                for j in (1..=self.d).rev() {
                    self.probe(Some((lv, a, j)), v, dummy, &mut found, &mut value)?;
                }
            }
        }
        self.probe(None, v, dummy, &mut found, &mut value)?;
        let old = value.ok_or(Error::InternalNotFound(v))?;
        let new = match op {
            Op::Read(_) => old.clone(),
            Op::Write(_, x) => x.clone(),
        };

        let a = self.top_active;
        tops[a][self.top_fill] = Record::new(Header::real(v), new);
        self.top_fill += 1;
        let swap = self.top_fill == self.k;
        if swap {
            if self.procs[1].is_some() {
                return Err(self.overlap(1));
            }
            tops[1 - a] = (0..self.k).map(|_| self.blank(Header::empty(0))).collect();
            self.top_active = 1 - a;
            self.top_live[1 - a] = true;
            self.top_fill = 0;
        }
        let sealed: Vec<Vec<EncRecord>> =
            tops.iter().map(|inst| inst.iter().map(|r| self.seal(r)).collect()).collect::<Vec<_>>();
        for srv in 0..2 {
            self.bus.up(srv, "top", 2 * self.k as u64 * self.rb);
            self.stores[srv].top = [sealed[0].clone(), sealed[1].clone()];
        }
        if swap {
            self.start(1)?;
        }
        self.t += 1;
        for dest in 1..=self.levels + 1 {
            if self.procs[dest].is_some() {
                self.step(dest)?;
            }
        }
        Ok(old)
    }

    fn overlap(&mut self, level: usize) -> Error {
        self.log.report.overlap += 1;
        self.log.note(|| format!("process into level {level} still live at t={}", self.t));
        Error::OverlapViolation { level }
    }

    /// Looks up one table (or the base when `at` is `None`). Tables that are
    /// not live are probed at random positions and ignored.
    fn probe(
        &mut self,
        at: Option<(usize, usize, usize)>,
        v: u64,
        dummy: Header,
        found: &mut bool,
        value: &mut Option<Vec<u8>>,
    ) -> Result<()> {
        let tb = match at {
            Some((lv, a, j)) => &self.tbl[lv][a][j - 1],
            None => &self.base,
        };
        let live = tb.live;
        let want = if *found && self.cfg.mutation != crate::config::Mutation::NoDummySubstitution {
            dummy
        } else {
            Header::real(v)
        };
        let input = if live { want.key() } else { self.rng.gen() };
        let mut q = hashing::lookup(&tb.params, &tb.key, input);
        let m = tb.params.m;
        q.extend(m..m + self.s);
        if live {
            let tid = match at {
                Some((lv, a, j)) => {
                    if a == self.active[lv] && j == self.d {
                        self.log.report.last_table_probed += 1;
                    }
                    (lv as u32, (a * self.d + j) as u32)
                }
                None => ((self.levels + 1) as u32, 1),
            };
            self.log.lookup((tid.0, tid.1, tb.epoch, want.key()));
        }
        let pos_of = |i: usize| match at {
            Some((lv, a, j)) => Pos::Lvl(lv, a, j, i),
            None => Pos::Base(i),
        };
        let n = q.len() as u64;
        self.bus.down_at(0, "level.read", n * self.hb, q.iter().map(|&x| x as u64).collect());
        let mut heads = Vec::with_capacity(q.len());
        let mut hit = None;
        for (i, &x) in q.iter().enumerate() {
            let h = self.open_header(self.stores[0].get(pos_of(x)))?;
            if live && !*found && h == Header::real(v) {
                hit = Some(i);
            }
            heads.push(h);
        }
        let p = hit.unwrap_or_else(|| self.rng.gen_range(0..q.len()));
        let shares = pirm_query(&mut self.rng, p, q.len(), 2)?;
        let mut answers = Vec::with_capacity(2);
        for (srv, sh) in shares.iter().enumerate() {
            self.bus.up(srv, "level.pir", n);
            let bodies: Vec<&[u8]> = q.iter().map(|&x| self.stores[srv].get(pos_of(x)).body()).collect();
            answers.push(pir2_answer(&bodies, sh)?);
            self.bus.down(srv, "level.pir", self.cfg.b);
        }
        let payload = self.aead.open(&combine(&answers)).map_err(|e| Error::IntegrityFailure(e.to_string()))?;
        if let Some(i) = hit {
            *found = true;
            *value = Some(payload);
            heads[i].current = false;
        }
        let new: Vec<Vec<u8>> = heads.iter().map(|h| EncRecord::seal_head(&self.aead, &mut self.rng, h)).collect();
        for srv in 0..2 {
            self.bus.up_at(srv, "level.headers", n * self.hb, q.iter().map(|&x| x as u64).collect());
            for (&x, ct) in q.iter().zip(&new) {
                self.stores[srv].get_mut(pos_of(x)).set_head(ct);
            }
        }
        Ok(())
    }

    fn sources(&self, dest: usize) -> Vec<Pos> {
        let mut v = Vec::new();
        if dest == 1 {
            let a = 1 - self.top_active;
            v.extend((0..self.k).map(|i| Pos::Top(a, i)));
            return v;
        }
        let lv = dest - 1;
        let a = 1 - self.active[lv];
        let len = self.tbl[lv][0][0].params.m + self.s;
        for j in 1..=self.d {
            v.extend((0..len).map(|i| Pos::Lvl(lv, a, j, i)));
        }
        if dest == self.levels + 1 {
            v.extend((0..self.stores[0].base.len()).map(Pos::Base));
        }
        v
    }

    /// Starts the process into `dest`: removes outdated records from the
    /// source, fixes the layout of the new table, and queues its messages.
    fn start(&mut self, dest: usize) -> Result<()> {
        if self.procs[dest].is_some() {
            return Err(self.overlap(dest));
        }
        let wrap = dest == self.levels + 1;
        let src = self.sources(dest);
        let mut items = Vec::new();
        let mut keys = Vec::new();
        for &p in &src {
            let mut rec = self.open(self.stores[0].get(p))?;
            if rec.header.is_real() && !rec.header.current {
                self.r += 1;
                rec.header = Header::dummy_hash(self.r);
            }
            let ct = self.seal(&rec);
            for st in self.stores.iter_mut() {
                *st.get_mut(p) = ct.clone();
            }
            let keep = if wrap { rec.header.is_real() } else { !rec.header.is_empty() };
            if keep {
                items.push(Item::Src(p));
                keys.push(Some(rec.header.key()));
            }
        }
        let (_, want) = self.process_shape(dest);
        if wrap {
            while items.len() < want {
                self.r += 1;
                let h = Header::dummy_hash(self.r);
                items.push(Item::Filler(h));
                keys.push(Some(h.key()));
            }
        }
        if items.len() != want {
            self.log.report.receive_count += 1;
            self.log.note(|| format!("process into level {dest} gathered {}, expected {want}", items.len()));
        }
        let (inst, j, epoch) = if wrap {
            (0, 1, self.base.epoch + 1)
        } else {
            let a = self.active[dest];
            let j = self.fill[dest] + 1;
            (a, j, self.tbl[dest][a][j - 1].epoch + 1)
        };
        let p = self.dest_params(dest).clone();
        let out = oblivious::oblivious_build(&mut self.rng, &p, &keys, false)?;
        let tid = (inst * self.d + j) as u32;
        let mut z = 0;
        let mut layout = Vec::with_capacity(p.m + self.s);
        for slot in out.placement.slots.iter().chain(&out.stash_slots) {
            let item = slot.map(|i| items[i]);
            let h = match item {
                Some(Item::Src(pos)) => self.open_header(self.stores[0].get(pos))?,
                Some(Item::Filler(h)) => h,
                None => {
                    z += 1;
                    Header::empty(z)
                }
            };
            self.log.match_tag((dest as u32, tid, epoch, h.key()));
            layout.push(item);
        }
        let plan = self.plan(dest, &out.cost);
        self.procs[dest] = Some(Process { dest, inst, j, epoch, key: out.key, layout, plan, idx: 0, off: 0, sent: 0 });
        Ok(())
    }

    fn blob(&mut self, p: &Process) -> Vec<u8> {
        let mut pt = vec![0u8; BLOB_BYTES];
        pt[0] = BLOB_VERSION;
        pt[1] = p.dest as u8;
        pt[2..10].copy_from_slice(&(p.idx as u64).to_le_bytes());
        pt[10..18].copy_from_slice(&p.off.to_le_bytes());
        pt[18..26].copy_from_slice(&p.epoch.to_le_bytes());
        pt[26..34].copy_from_slice(&p.sent.to_le_bytes());
        pt[34] = p.j as u8;
        self.aead.seal(&mut self.rng, &pt)
    }

    /// Runs one round of the process into `dest`.
    fn step(&mut self, dest: usize) -> Result<()> {
        let mut p = self.procs[dest].take().expect("live process");
        let bb = self.blob_bits();
        if let Some(ct) = self.stores[0].blobs.remove(&dest) {
            self.bus.down(0, "state", bb);
            let pt = self.aead.open(&ct).map_err(|_| Error::IntegrityFailure("process state".into()))?;
            if pt[0] != BLOB_VERSION || pt[1] as usize != dest || u64::from_le_bytes(pt[2..10].try_into().unwrap()) != p.idx as u64 {
                return Err(Error::IntegrityFailure("process state".into()));
            }
        }
        let mut budget = self.rho[dest] * self.rb;
        while budget > 0 && p.idx < p.plan.len() {
            let msg = p.plan[p.idx];
            let take = budget.min(msg.bits - p.off);
            if take > 0 {
                match msg.dir {
                    Dir::Up => self.bus.up(msg.srv, msg.phase, take),
                    Dir::Down => self.bus.down(msg.srv, msg.phase, take),
                }
            }
            budget -= take;
            p.off += take;
            p.sent += take;
            if p.off == msg.bits {
                p.idx += 1;
                p.off = 0;
            }
        }
        if p.idx < p.plan.len() {
            let ct = self.blob(&p);
            self.bus.up(0, "state", bb);
            self.stores[0].blobs.insert(dest, ct);
            self.procs[dest] = Some(p);
            Ok(())
        } else {
            self.complete(p)
        }
    }

    fn complete(&mut self, p: Process) -> Result<()> {
        let dest = p.dest;
        let wrap = dest == self.levels + 1;
        let mut recs = Vec::with_capacity(p.layout.len());
        for item in &p.layout {
            recs.push(match item {
                Some(Item::Src(pos)) => self.open(self.stores[0].get(*pos))?,
                Some(Item::Filler(h)) => self.blank(*h),
                None => self.blank(Header::empty(0)),
            });
        }
        let cts: Vec<EncRecord> = recs.iter().map(|r| self.seal(r)).collect();
        if dest == 1 {
            self.top_live[1 - self.top_active] = false;
        } else {
            let lv = dest - 1;
            let a = 1 - self.active[lv];
            for t in self.tbl[lv][a].iter_mut() {
                t.live = false;
            }
        }
        if wrap {
            for st in self.stores.iter_mut() {
                st.base = cts.clone();
            }
            self.base.key = p.key;
            self.base.epoch = p.epoch;
            self.base.live = true;
        } else {
            for st in self.stores.iter_mut() {
                st.lv[dest][p.inst][p.j - 1] = cts.clone();
            }
            let tb = &mut self.tbl[dest][p.inst][p.j - 1];
            tb.key = p.key;
            tb.epoch = p.epoch;
            tb.live = true;
        }
        self.completed[dest] += 1;
        if self.log.enabled {
            self.check_state();
        }
        if !wrap {
            self.fill[dest] += 1;
            if self.fill[dest] == self.d {
                if self.procs[dest + 1].is_some() {
                    return Err(self.overlap(dest + 1));
                }
                self.active[dest] = 1 - self.active[dest];
                self.fill[dest] = 0;
                self.start(dest + 1)?;
            }
        }
        Ok(())
    }

    /// Live storage, as seen in plaintext by the audit.
    fn live_positions(&self) -> Vec<Vec<Pos>> {
        let mut groups: Vec<Vec<Pos>> = (0..2)
            .filter(|&a| self.top_live[a])
            .map(|a| (0..self.k).map(|i| Pos::Top(a, i)).collect())
            .collect();
        for lv in 1..=self.levels {
            let len = self.tbl[lv][0][0].params.m + self.s;
            for a in 0..2 {
                for j in 1..=self.d {
                    if self.tbl[lv][a][j - 1].live {
                        groups.push((0..len).map(|i| Pos::Lvl(lv, a, j, i)).collect());
                    }
                }
            }
        }
        groups.push((0..self.stores[0].base.len()).map(Pos::Base).collect());
        groups
    }

    fn check_state(&mut self) {
        self.log.report.checks += 1;
        let mut current = HashSet::new();
        let (mut stale, mut dup) = (0, 0);
        for group in self.live_positions() {
            let mut keys = HashSet::new();
            for pos in group {
                let Ok(h) = self.stores[0].get(pos).open_header(&self.aead) else { continue };
                if h.is_empty() {
                    continue;
                }
                let within_top = matches!(pos, Pos::Top(..));
                if !within_top && !keys.insert(h.key()) {
                    dup += 1;
                }
                if h.kind == Kind::Real && h.current && !current.insert(h.value) {
                    stale += 1;
                }
            }
        }
        if stale > 0 {
            self.log.note(|| format!("{stale} extra up-to-date copies at t={}", self.t));
        }
        self.log.report.stale_current += stale;
        self.log.report.duplicate_address += dup;
        if self.replicas_differ(false) {
            self.log.report.replica_mismatch += 1;
        }
    }

    fn replicas_differ(&self, bodies: bool) -> bool {
        let (a, b) = (&self.stores[0], &self.stores[1]);
        (0..2).any(|i| differ(&a.top[i], &b.top[i], bodies))
            || differ(&a.base, &b.base, bodies)
            || a.lv.iter().zip(&b.lv).any(|(x, y)| {
                (0..2).any(|i| x[i].iter().zip(&y[i]).any(|(p, q)| differ(p, q, bodies)))
            })
    }
}

impl Oram for Deamortized {
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
            self.check_state();
            if self.replicas_differ(true) {
                self.log.report.replica_mismatch += 1;
            }
        }
        self.log.report.clone()
    }
}
