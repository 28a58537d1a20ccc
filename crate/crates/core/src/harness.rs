//! Trace runner, plain-RAM oracle, transcript shape analyzer, trace
//! generators and overhead fitting.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::audit::AuditReport;
use crate::bus::{AccessBits, Dir, Entry};
use crate::config::{ceil_log2, Config, Mutation, Scheme};
use crate::error::{Error, Result};
use crate::oram::{build_with, Op};

#[derive(Clone, Debug, Serialize)]
pub struct BandwidthReport {
    pub per_server: Vec<AccessBits>,
    pub setup: AccessBits,
    pub series: Vec<AccessBits>,
    pub block_bits: u64,
}

impl BandwidthReport {
    pub fn access_bits(&self) -> u64 {
        self.series.iter().map(AccessBits::total).sum()
    }

    /// Bits exchanged per bit of logical data, over all accesses.
    pub fn amortized_overhead(&self) -> f64 {
        if self.series.is_empty() {
            return 0.0;
        }
        self.access_bits() as f64 / (self.series.len() as u64 * self.block_bits) as f64
    }

    pub fn max_access(&self) -> u64 {
        self.series.iter().map(AccessBits::total).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct Run {
    pub results: Vec<Vec<u8>>,
    pub transcripts: Vec<Vec<Entry>>,
    pub report: BandwidthReport,
    pub audit: AuditReport,
}

/// Runs `ops` against a fresh instance of the configured scheme.
pub fn run_trace(cfg: &Config, ops: &[Op]) -> Result<Run> {
    run_with(cfg, ops, true)
}

pub fn run_with(cfg: &Config, ops: &[Op], transcripts: bool) -> Result<Run> {
    let mut o = build_with(cfg, transcripts)?;
    let mut results = Vec::with_capacity(ops.len());
    for op in ops {
        results.push(o.access(op)?);
    }
    let audit = o.audit();
    let bus = o.bus();
    let report = BandwidthReport {
        per_server: bus.server_totals(),
        setup: bus.setup_bits(),
        series: bus.series().to_vec(),
        block_bits: o.config().b,
    };
    Ok(Run { results, transcripts: bus.transcripts().to_vec(), report, audit })
}

/// Plain array semantics: every access returns the previous value; blocks
/// start zeroed.
pub fn oracle_run(n: u64, payload_bytes: usize, ops: &[Op]) -> Vec<Vec<u8>> {
    let mut mem = vec![vec![0u8; payload_bytes]; n as usize];
    ops.iter()
        .map(|op| match op {
            Op::Read(v) => mem[*v as usize].clone(),
            Op::Write(v, x) => std::mem::replace(&mut mem[*v as usize], x.clone()),
        })
        .collect()
}

pub fn mismatches(a: &[Vec<u8>], b: &[Vec<u8>]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PositionStats {
    pub revealed: u64,
    /// Chi-square statistic of revealed slot indices over 16 residue classes.
    pub chi_square: f64,
}

fn position_stats(t: &[Entry]) -> PositionStats {
    let mut hist = [0u64; 16];
    let mut n = 0;
    for e in t {
        for p in e.pos.iter().flatten() {
            hist[(p & 0xff_ffff_ffff) as usize % 16] += 1;
            n += 1;
        }
    }
    let mean = n as f64 / 16.0;
    let chi_square = if n == 0 { 0.0 } else { hist.iter().map(|&h| (h as f64 - mean).powi(2) / mean).sum() };
    PositionStats { revealed: n, chi_square }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    /// `None` when every server saw the same message shape in both runs.
    pub mismatch: Option<(usize, usize)>,
    pub positions: Vec<(PositionStats, PositionStats)>,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.mismatch.is_none()
    }

    pub fn into_result(self) -> Result<Verdict> {
        match self.mismatch {
            Some((server, index)) => Err(Error::ShapeMismatch { server, index }),
            None => Ok(self),
        }
    }
}

/// Compares per-server message shapes: direction, phase label and bit length.
pub fn analyze(a: &[Vec<Entry>], b: &[Vec<Entry>]) -> Verdict {
    let mut mismatch = None;
    if a.len() != b.len() {
        mismatch = Some((a.len().min(b.len()), 0));
    }
    for (srv, (x, y)) in a.iter().zip(b).enumerate() {
        if mismatch.is_some() {
            break;
        }
        let same = |e: &Entry, f: &Entry| e.dir == f.dir && e.phase == f.phase && e.bits == f.bits;
        if let Some(i) = x.iter().zip(y).position(|(e, f)| !same(e, f)) {
            mismatch = Some((srv, i));
        } else if x.len() != y.len() {
            mismatch = Some((srv, x.len().min(y.len())));
        }
    }
    let positions = a.iter().zip(b).map(|(x, y)| (position_stats(x), position_stats(y))).collect();
    Verdict { mismatch, positions }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Uniform,
    Hot,
    Sequential,
}

impl TraceKind {
    pub fn parse(s: &str) -> Option<TraceKind> {
        match s {
            "uniform" => Some(TraceKind::Uniform),
            "hot" => Some(TraceKind::Hot),
            "sequential" => Some(TraceKind::Sequential),
            _ => None,
        }
    }
}

/// Deterministic trace of `len` accesses over `n` addresses. Every other
/// access is a write of random content.
pub fn generate(kind: TraceKind, len: usize, n: u64, payload_bytes: usize, seed: u64) -> Vec<Op> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| {
            let v = match kind {
                TraceKind::Uniform => rng.gen_range(0..n),
                TraceKind::Hot => 0,
                TraceKind::Sequential => i as u64 % n,
            };
            let write = match kind {
                TraceKind::Uniform => rng.gen_bool(0.5),
                _ => i % 2 == 1,
            };
            if write {
                let mut x = vec![0u8; payload_bytes];
                rng.fill_bytes(&mut x);
                Op::Write(v, x)
            } else {
                Op::Read(v)
            }
        })
        .collect()
}

/// Parses `R addr` and `W addr hex` lines; blank lines and `#` comments are
/// skipped. Short hex payloads are zero padded.
pub fn parse_trace(text: &str, payload_bytes: usize) -> Result<Vec<Op>> {
    let mut ops = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::bad("trace", format!("line {}: {why}", no + 1));
        let mut it = line.split_whitespace();
        let kind = it.next().unwrap_or_default();
        let addr: u64 = it.next().ok_or_else(|| bad("missing address"))?.parse().map_err(|_| bad("bad address"))?;
        let op = match kind {
            "R" | "r" => Op::Read(addr),
            "W" | "w" => {
                let hex = it.next().unwrap_or("");
                if hex.len() % 2 != 0 || hex.len() / 2 > payload_bytes {
                    return Err(bad("payload must be at most B/8 hex bytes"));
                }
                let mut x = vec![0u8; payload_bytes];
                for (i, b) in x.iter_mut().enumerate().take(hex.len() / 2) {
                    *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad("bad hex"))?;
                }
                Op::Write(addr, x)
            }
            _ => return Err(bad("expected R or W")),
        };
        if it.next().is_some() {
            return Err(bad("trailing fields"));
        }
        ops.push(op);
    }
    Ok(ops)
}

pub fn format_trace(ops: &[Op]) -> String {
    let mut out = String::new();
    for op in ops {
        match op {
            Op::Read(v) => writeln!(out, "R {v}").unwrap(),
            Op::Write(v, x) => {
                let hex: String = x.iter().map(|b| format!("{b:02x}")).collect();
                writeln!(out, "W {v} {hex}").unwrap()
            }
        }
    }
    out
}

#[derive(Serialize)]
struct JsonEntry<'a> {
    srv: usize,
    dir: Dir,
    phase: &'a str,
    bits: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pos: Option<&'a [u64]>,
}

/// One JSON object per message.
pub fn transcript_jsonl(srv: usize, entries: &[Entry]) -> String {
    let mut out = String::new();
    for e in entries {
        let j = JsonEntry { srv, dir: e.dir, phase: e.phase, bits: e.bits, pos: e.pos.as_deref() };
        out.push_str(&serde_json::to_string(&j).expect("entry serializes"));
        out.push('\n');
    }
    out
}

/// Rows of (accessIndex, bitsUp, bitsDown, cumulativeOverhead).
pub fn report_rows(r: &BandwidthReport) -> Vec<(usize, u64, u64, f64)> {
    let mut total = 0u64;
    r.series
        .iter()
        .enumerate()
        .map(|(i, a)| {
            total += a.total();
            (i, a.up, a.down, total as f64 / ((i as u64 + 1) * r.block_bits) as f64)
        })
        .collect()
}

/// Growth term of the hierarchical schemes: `k + L + sum_i m_i / (d^{i-1} k)`.
pub fn predicted_shape(cfg: &Config) -> f64 {
    let k = cfg.top_size() as f64;
    let l = cfg.levels();
    let mut x = k + l as f64;
    for i in 1..=l {
        x += cfg.level_params(i).m as f64 / (cfg.d.pow(i as u32 - 1) as f64 * k);
    }
    x
}

/// Least-squares constant `c` for `y = c x`, and the relative residual of
/// each point.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let c = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let res = x.iter().zip(y).map(|(a, b)| if *b == 0.0 { 0.0 } else { (b - c * a).abs() / b }).collect();
    (c, res)
}

/// Smallest multiple of 8 that satisfies the configured block size bound.
pub fn min_block(cfg: &Config) -> u64 {
    let need = cfg.min_block_bits().map_or(8, |(_, b)| b);
    need.div_ceil(8).max(1) * 8
}

/// `cfg` with `N` replaced and `B` set to the smallest admissible size
/// (four_server: at least `lambda * log2 N`).
pub fn sized(cfg: &Config, n: u64) -> Config {
    let mut c = cfg.clone();
    c.n = n;
    c.k = None;
    c.s = None;
    c.l = None;
    c.b = match c.scheme {
        Scheme::FourServer => (c.lambda as u64 * ceil_log2(n) as u64).max(min_block(&c)),
        _ => min_block(&c),
    };
    c
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub scheme: String,
    pub n: u64,
    pub d: u64,
    pub b: u64,
    pub measured: f64,
    pub shape: Option<f64>,
    pub predicted: Option<f64>,
    pub residual: Option<f64>,
}

/// Accesses after which every level of a hierarchical configuration,
/// including the bottom table, has been rebuilt: `d^L k`.
pub fn full_period(cfg: &Config) -> usize {
    cfg.d.pow(cfg.levels() as u32) as usize * cfg.top_size()
}

/// Total access bits of a run split as `fixed + per_block * B`.
///
/// Message sizes depend on `B` only linearly, so two runs at tiny block sizes
/// determine both terms exactly and the same split holds at any `B`.
pub fn affine_bits(cfg: &Config, len: usize, seed: u64) -> Result<(u64, u64)> {
    let mut totals = [0u64; 2];
    for (i, b) in [8u64, 16].into_iter().enumerate() {
        let mut c = cfg.clone();
        c.b = b;
        c.c = f64::MIN_POSITIVE;
        let c = c.validate()?;
        let ops = generate(TraceKind::Uniform, len, c.n, c.payload_bytes(), seed);
        totals[i] = run_with(&c, &ops, false)?.report.access_bits();
    }
    let per_block = (totals[1] - totals[0]) / 8;
    Ok((totals[0] - 8 * per_block, per_block))
}

/// Measures amortized overhead at each `N` over a uniform trace of `len`
/// accesses, or of one full period when `len` is 0. With `affine` the bits are
/// taken from [`affine_bits`] instead of a run at the full block size.
/// Hierarchical schemes also get the fitted prediction.
pub fn bench(cfg: &Config, ns: &[u64], len: usize, seed: u64, affine: bool) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        let c = sized(cfg, n).validate()?;
        let len = if len == 0 { full_period(&c) } else { len };
        let bits = if affine {
            let (fixed, per_block) = affine_bits(&c, len, seed)?;
            fixed + per_block * c.b
        } else {
            let ops = generate(TraceKind::Uniform, len, n, c.payload_bytes(), seed);
            run_with(&c, &ops, false)?.report.access_bits()
        };
        let hier = matches!(c.scheme, Scheme::ThreeServer | Scheme::MServer | Scheme::SingleServerBaseline);
        rows.push(BenchRow {
            scheme: c.scheme.name().to_string(),
            n,
            d: c.d,
            b: c.b,
            measured: bits as f64 / (len as u64 * c.b) as f64,
            shape: hier.then(|| predicted_shape(&c)),
            predicted: None,
            residual: None,
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.shape.map(|s| (s, r.measured))).collect();
    if !pts.is_empty() {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (c, res) = fit_through_origin(&x, &y);
        let mut it = res.into_iter();
        for r in rows.iter_mut().filter(|r| r.shape.is_some()) {
            r.predicted = r.shape.map(|s| c * s);
            r.residual = it.next();
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub scheme: String,
    pub shape: Verdict,
    pub audit: AuditReport,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs a sequential trace and a single-address trace of the same length
/// with auditing on, compares their shapes and collects every violation.
pub fn verify(cfg: &Config, len: usize, seed: u64) -> Result<VerifyReport> {
    let mut c = cfg.clone();
    c.audit = true;
    let pb = c.payload_bytes();
    let seq = generate(TraceKind::Sequential, len, c.n, pb, seed);
    let hot = generate(TraceKind::Hot, len, c.n, pb, seed);
    let mut failures = Vec::new();
    let mut runs = Vec::new();
    for ops in [&seq, &hot] {
        match run_trace(&c, ops) {
            Ok(run) => {
                let want = oracle_run(c.n, pb, ops);
                let bad = mismatches(&run.results, &want);
                if bad > 0 {
                    failures.push(format!("oracle: {bad} mismatching results"));
                }
                runs.push(run);
            }
            Err(e) => {
                failures.push(format!("run aborted: {e}"));
                return Ok(VerifyReport {
                    scheme: c.scheme.name().into(),
                    shape: Verdict { mismatch: None, positions: Vec::new() },
                    audit: AuditReport::default(),
                    failures,
                });
            }
        }
    }
    let shape = analyze(&runs[0].transcripts, &runs[1].transcripts);
    if let Some((srv, i)) = shape.mismatch {
        failures.push(format!("shape: server {srv} diverges at message {i}"));
    }
    let mut audit = runs[0].audit.clone();
    merge(&mut audit, &runs[1].audit);
    for (name, n) in audit.failures() {
        failures.push(format!("audit: {name} = {n}"));
    }
    Ok(VerifyReport { scheme: c.scheme.name().into(), shape, audit, failures })
}

fn merge(a: &mut AuditReport, b: &AuditReport) {
    a.checks += b.checks;
    a.stash_not_full += b.stash_not_full;
    a.fullness_mismatch += b.fullness_mismatch;
    a.duplicate_address += b.duplicate_address;
    a.repeated_query_tag += b.repeated_query_tag;
    a.repeated_reshuffle_tag += b.repeated_reshuffle_tag;
    a.repeated_match_tag += b.repeated_match_tag;
    a.repeated_lookup += b.repeated_lookup;
    a.linkable_upload += b.linkable_upload;
    a.receive_count += b.receive_count;
    a.replica_mismatch += b.replica_mismatch;
    a.overlap += b.overlap;
    a.stale_current += b.stale_current;
    a.last_table_probed += b.last_table_probed;
    a.notes.extend(b.notes.iter().cloned());
}

/// Whether `m` has any effect on `scheme`.
pub fn mutation_applies(scheme: Scheme, m: Mutation) -> bool {
    match m {
        Mutation::None => true,
        Mutation::NoDummySubstitution => scheme != Scheme::FourServer,
        Mutation::NoDummyStashPadding | Mutation::NoReencryption => scheme.is_hierarchical() && scheme != Scheme::Deamortized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_returns_previous_value() {
        let ops = vec![Op::Read(1), Op::Write(1, vec![7]), Op::Read(1), Op::Write(1, vec![8])];
        let r = oracle_run(4, 1, &ops);
        assert_eq!(r, vec![vec![0], vec![0], vec![7], vec![7]]);
    }

    #[test]
    fn trace_text_roundtrip() {
        let ops = generate(TraceKind::Uniform, 50, 16, 4, 3);
        assert_eq!(parse_trace(&format_trace(&ops), 4).unwrap(), ops);
        assert!(parse_trace("X 1", 4).is_err());
        assert!(parse_trace("W 1 abcdef0011", 4).is_err());
        assert_eq!(parse_trace("# c\n\nW 2 ab", 2).unwrap(), vec![Op::Write(2, vec![0xab, 0])]);
    }

    #[test]
    fn generators() {
        let s = generate(TraceKind::Sequential, 10, 4, 1, 0);
        assert_eq!(s.iter().map(Op::addr).collect::<Vec<_>>(), vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 1]);
        assert!(generate(TraceKind::Hot, 10, 4, 1, 0).iter().all(|o| o.addr() == 0));
        assert_eq!(generate(TraceKind::Uniform, 20, 9, 2, 5), generate(TraceKind::Uniform, 20, 9, 2, 5));
    }

    #[test]
    fn fit_recovers_constant() {
        let x = [1.0, 2.0, 4.0];
        let y = [3.0, 6.0, 12.0];
        let (c, r) = fit_through_origin(&x, &y);
        assert!((c - 3.0).abs() < 1e-12);
        assert!(r.iter().all(|v| *v < 1e-12));
    }

    #[test]
    fn analyzer_flags_first_divergence() {
        let e = |bits| Entry { dir: Dir::Up, phase: "x", bits, pos: None };
        let a = vec![vec![e(1), e(2)], vec![e(3)]];
        let mut b = a.clone();
        assert!(analyze(&a, &b).pass());
        b[1].push(e(4));
        assert_eq!(analyze(&a, &b).mismatch, Some((1, 1)));
        b[0][1] = e(5);
        assert!(matches!(analyze(&a, &b).into_result(), Err(Error::ShapeMismatch { server: 0, index: 1 })));
    }

    proptest::proptest! {
        #[test]
        fn any_trace_survives_text(len in 0usize..60, n in 1u64..1000, pb in 1usize..24, seed: u64, kind in 0usize..3) {
            let kind = [TraceKind::Uniform, TraceKind::Hot, TraceKind::Sequential][kind];
            let ops = generate(kind, len, n, pb, seed);
            proptest::prop_assert!(ops.iter().all(|op| op.addr() < n));
            proptest::prop_assert_eq!(parse_trace(&format_trace(&ops), pb).unwrap(), ops);
        }
    }
}
