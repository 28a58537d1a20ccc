//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::collections::HashSet;
use std::time::Instant;

use doram::deamortize::Deamortized;
use doram::dpf;
use doram::harness::{self, generate, mismatches, oracle_run, run_with, sized, verify, TraceKind};
use doram::hashing::{self, HashKind, SchemeParams};
use doram::oblivious;
use doram::pir;
use doram::{Config, Mutation, Oram, Scheme};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const LAMBDA: u64 = 128;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cfg_for(scheme: Scheme, m: usize, n: u64, seed: u64) -> Config {
    let mut c = Config::new(scheme, n, 8, 4);
    c.m = m;
    c.seed = seed;
    sized(&c, n)
}

const ALL: [(Scheme, usize); 7] = [
    (Scheme::SingleServerBaseline, 1),
    (Scheme::FourServer, 4),
    (Scheme::ThreeServer, 3),
    (Scheme::MServer, 2),
    (Scheme::MServer, 3),
    (Scheme::MServer, 4),
    (Scheme::Deamortized, 2),
];

fn label(scheme: Scheme, m: usize) -> String {
    if scheme == Scheme::MServer {
        format!("m_server(m={m})")
    } else {
        scheme.name().to_string()
    }
}

fn oracle_equivalence() -> Outcome {
    let mut bad = Vec::new();
    let mut runs = 0;
    for (scheme, m) in ALL {
        for e in [8u32, 10, 12] {
            let n = 1u64 << e;
            let cfg = cfg_for(scheme, m, n, e as u64);
            let ops = generate(TraceKind::Uniform, 10_000, n, cfg.payload_bytes(), 100 + e as u64);
            let want = oracle_run(n, cfg.payload_bytes(), &ops);
            match run_with(&cfg, &ops, false) {
                Ok(run) => {
                    let k = mismatches(&run.results, &want);
                    if k > 0 {
                        bad.push(format!("{} N=2^{e}: {k} mismatches", label(scheme, m)));
                    }
                }
                Err(err) => bad.push(format!("{} N=2^{e}: {err}", label(scheme, m))),
            }
            runs += 1;
        }
    }
    outcome(bad.is_empty(), format!("{runs} runs of 10^4 accesses; {}", summary(&bad)))
}

fn summary(bad: &[String]) -> String {
    if bad.is_empty() {
        "no violations".into()
    } else {
        bad.join("; ")
    }
}

fn dpf_and_pir() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut bad = Vec::new();

    for n in 0u16..=12 {
        let m = 64u16;
        let mut sizes = HashSet::new();
        for _ in 0..50 {
            let a = if n == 0 { 0 } else { rng.gen_range(0..1u64 << n) };
            let mut b = vec![0u8; 8];
            rng.fill_bytes(&mut b);
            let (k0, k1) = dpf::gen(&mut rng, n, a, &b, m).unwrap();
            let (f0, f1) = (k0.full_eval(), k1.full_eval());
            for x in 0..1u64 << n {
                let mut y = f0[x as usize].clone();
                pir::xor_into(&mut y, &f1[x as usize]);
                let want = if x == a { b.clone() } else { vec![0; 8] };
                if y != want {
                    bad.push(format!("dpf n={n} a={a} x={x}"));
                }
                if n <= 10 && (k0.eval(x) != f0[x as usize] || k1.eval(x) != f1[x as usize]) {
                    bad.push(format!("dpf eval/full_eval differ n={n} x={x}"));
                }
            }
            sizes.insert(k0.to_bytes().len());
            sizes.insert(k1.to_bytes().len());
            let limit = LAMBDA * (n as u64 + 2) + m as u64 + 64;
            if k0.bit_len() > limit || k0.to_bytes().len() as u64 * 8 > limit {
                bad.push(format!("dpf share too large at n={n}"));
            }
        }
        if sizes.len() != 1 {
            bad.push(format!("dpf share size varies at n={n}"));
        }
    }

    for n in 1usize..=256 {
        let x: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                let mut b = vec![0u8; 4];
                rng.fill_bytes(&mut b);
                b
            })
            .collect();
        for i in 0..n {
            let (q0, q1) = pir::pir2_query(&mut rng, i, n).unwrap();
            let got = pir::combine(&[pir::pir2_answer(&x, &q0).unwrap(), pir::pir2_answer(&x, &q1).unwrap()]);
            let qs = pir::pirm_query(&mut rng, i, n, 3).unwrap();
            let ans: Vec<Vec<u8>> = qs.iter().map(|q| pir::pir2_answer(&x, q).unwrap()).collect();
            let (d0, d1) = pir::dpf_read_query(&mut rng, i, n).unwrap();
            let got_dpf = pir::combine(&[pir::dpf_answer(&x, &d0).unwrap(), pir::dpf_answer(&x, &d1).unwrap()]);
            if got != x[i] || pir::combine(&ans) != x[i] || got_dpf != x[i] {
                bad.push(format!("pir n={n} i={i}"));
            }

            let mut h0: Vec<Vec<u8>> = x.iter().map(|_| random_block(&mut rng)).collect();
            let mut h1: Vec<Vec<u8>> = x.iter().zip(&h0).map(|(v, s)| xor(v, s)).collect();
            let delta = random_block(&mut rng);
            let (w0, w1) = pir::pirw_gen(&mut rng, i, &delta, n).unwrap();
            pir::pirw_apply(&mut h0, &w0).unwrap();
            pir::pirw_apply(&mut h1, &w1).unwrap();
            for j in 0..n {
                let want = if j == i { xor(&x[j], &delta) } else { x[j].clone() };
                if xor(&h0[j], &h1[j]) != want {
                    bad.push(format!("pir-write n={n} i={i} j={j}"));
                }
            }
        }
    }

    let (k0, _) = dpf::gen(&mut rng, 16, 12345, &[1], 1).unwrap();
    let t = Instant::now();
    let full = k0.full_eval();
    let t_full = t.elapsed();
    let t = Instant::now();
    let points: Vec<Vec<u8>> = (0..1u64 << 16).map(|x| k0.eval(x)).collect();
    let t_points = t.elapsed();
    if full != points {
        bad.push("full_eval(16) disagrees with point evaluations".into());
    }
    if t_full * 2 > t_points {
        bad.push(format!("full_eval(16) took {t_full:?}, point evaluations {t_points:?}"));
    }
    bad.truncate(10);
    outcome(
        bad.is_empty(),
        format!("dpf n<=12 x50, pir/pir-write n<=256 all indices, full_eval {t_full:?} vs points {t_points:?}; {}", summary(&bad)),
    )
}

fn random_block(rng: &mut ChaCha20Rng) -> Vec<u8> {
    let mut b = vec![0u8; 4];
    rng.fill_bytes(&mut b);
    b
}

fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

fn shape_and_mutations() -> Outcome {
    let len = 1 << 12;
    let n = 1 << 8;
    let mut bad = Vec::new();
    for (scheme, m) in ALL {
        let cfg = cfg_for(scheme, m, n, 3);
        let rep = verify(&cfg, len, 3).unwrap();
        if !rep.ok() {
            bad.push(format!("{}: {}", label(scheme, m), rep.failures.join(", ")));
        }
    }
    let mut detected = 0;
    let mut applicable = 0;
    for (scheme, m) in [(Scheme::ThreeServer, 3), (Scheme::MServer, 2), (Scheme::Deamortized, 2)] {
        for mu in [Mutation::NoDummySubstitution, Mutation::NoDummyStashPadding, Mutation::NoReencryption] {
            if !harness::mutation_applies(scheme, mu) {
                continue;
            }
            applicable += 1;
            let mut cfg = cfg_for(scheme, m, n, 3);
            cfg.mutation = mu;
            let rep = verify(&cfg, len, 3).unwrap();
            if rep.ok() {
                bad.push(format!("{} {mu:?} not detected", label(scheme, m)));
            } else {
                detected += 1;
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("7 schemes at N=2^8, traces of 2^12; {detected}/{applicable} mutations detected; {}", summary(&bad)),
    )
}

fn claim_invariants() -> Outcome {
    let n = 1 << 12;
    let mut bad = Vec::new();
    let mut checks = 0;
    for (scheme, m) in [
        (Scheme::SingleServerBaseline, 1),
        (Scheme::ThreeServer, 3),
        (Scheme::MServer, 2),
        (Scheme::Deamortized, 2),
    ] {
        let mut cfg = cfg_for(scheme, m, n, 4);
        cfg.audit = true;
        let ops = generate(TraceKind::Uniform, 1 << 13, n, cfg.payload_bytes(), 4);
        match run_with(&cfg, &ops, false) {
            Ok(run) => {
                checks += run.audit.checks;
                for (name, k) in run.audit.failures() {
                    bad.push(format!("{} {name}={k}", label(scheme, m)));
                }
            }
            Err(e) => bad.push(format!("{}: {e}", label(scheme, m))),
        }
    }
    outcome(bad.is_empty(), format!("2^13 accesses at N=2^12, d=4, {checks} state checks; {}", summary(&bad)))
}

fn overhead_trends() -> Outcome {
    let mut bad = Vec::new();
    let mut notes = Vec::new();

    let mut four = Vec::new();
    for e in [10u32, 12, 14] {
        let n = 1u64 << e;
        let mut c = Config::new(Scheme::FourServer, n, 8, 4);
        c.c = 0.5;
        let c = sized(&c, n);
        let ops = generate(TraceKind::Uniform, 32, n, c.payload_bytes(), 5);
        four.push(run_with(&c, &ops, false).unwrap().report.amortized_overhead());
    }
    let mean = four.iter().sum::<f64>() / four.len() as f64;
    let spread = four.iter().map(|o| (o - mean).abs() / mean).fold(0.0, f64::max);
    notes.push(format!("four_server {:.2?} spread {:.3}", four, spread));
    if spread > 0.15 {
        bad.push(format!("four_server spread {spread:.3}"));
    }

    let ns: Vec<u64> = (8..=16).step_by(2).map(|e| 1u64 << e).collect();
    for (scheme, m, affine) in [(Scheme::ThreeServer, 3, false), (Scheme::MServer, 2, true)] {
        let mut c = Config::new(scheme, 256, 8, 4);
        c.m = m;
        c.c = 4.0;
        let rows = harness::bench(&c, &ns, 0, 5, affine).unwrap();
        let worst = rows.iter().filter_map(|r| r.residual).fold(0.0, f64::max);
        notes.push(format!(
            "{} residuals [{}]",
            label(scheme, m),
            rows.iter().map(|r| format!("{:.3}", r.residual.unwrap_or(f64::NAN))).collect::<Vec<_>>().join(" ")
        ));
        if worst > 0.25 {
            bad.push(format!("{} worst residual {worst:.3}", label(scheme, m)));
        }
    }

    let cfg = cfg_for(Scheme::Deamortized, 2, 1 << 12, 5);
    let mut o = Deamortized::new(cfg.clone(), false).unwrap();
    let bound = o.static_bound();
    let ops = generate(TraceKind::Uniform, 1 << 14, cfg.n, cfg.payload_bytes(), 5);
    let mut err = None;
    for op in &ops {
        if let Err(e) = o.access(op) {
            err = Some(e);
            break;
        }
    }
    let max = o.bus().series().iter().map(|a| a.total()).max().unwrap_or(0);
    let overlap = o.audit().overlap;
    notes.push(format!("deamortized max {max} <= bound {bound}"));
    if max > bound || overlap > 0 || err.is_some() {
        bad.push(format!("deamortized max={max} bound={bound} overlap={overlap} error={err:?}"));
    }
    outcome(bad.is_empty(), format!("{}; {}", notes.join("; "), summary(&bad)))
}

fn hashing_layer() -> Outcome {
    let mut bad = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let big_n = 1u64 << 12;
    let s = 12;
    let mut failures = Vec::new();
    for (kind, n) in [(HashKind::Standard, 64), (HashKind::Cuckoo, 1024), (HashKind::TwoTier, 1024)] {
        let p = SchemeParams::new(kind, n, big_n, s);
        let mut failed = 0;
        for _ in 0..1000 {
            let tags: Vec<u128> = (0..n).map(|_| rng.gen()).collect();
            let key = hashing::HashKey::gen(&mut rng, &p);
            match hashing::build(&p, &key, &tags) {
                Ok(pl) => {
                    if !hashing::findable(&p, &key, &tags, &pl) {
                        bad.push(format!("{kind:?} placement not findable"));
                    }
                }
                Err(doram::Error::BuildFailure { .. }) => failed += 1,
                Err(e) => bad.push(format!("{kind:?}: {e}")),
            }
        }
        failures.push(format!("{kind:?} n={n}: {failed}"));
        if failed > 0 {
            bad.push(format!("{kind:?} n={n}: {failed} build failures"));
        }
    }

    let mut digests = HashSet::new();
    let mut costs = HashSet::new();
    for kind in [HashKind::Standard, HashKind::TwoTier] {
        let p = SchemeParams::new(kind, 256, big_n, s);
        digests.clear();
        costs.clear();
        for seed in 0..1000u64 {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            let live = r.gen_range(0..=256);
            let mut inputs: Vec<Option<u128>> = (0..256).map(|i| (i < live).then(|| r.gen())).collect();
            inputs.shuffle(&mut r);
            match oblivious::oblivious_build(&mut r, &p, &inputs, true) {
                Ok(out) => {
                    digests.insert(out.trace.digest());
                    costs.insert((out.cost.up, out.cost.down));
                    let tags: Vec<u128> = inputs.iter().flatten().copied().collect();
                    let idx: Vec<usize> = inputs.iter().enumerate().filter(|(_, t)| t.is_some()).map(|(i, _)| i).collect();
                    let remap = |i: usize| idx.iter().position(|&x| x == i);
                    let slots = out.placement.slots.iter().map(|s| s.and_then(remap)).collect();
                    let stash = out.placement.stash.iter().filter_map(|&i| remap(i)).collect();
                    let pl = hashing::Placement { slots, stash };
                    if !hashing::findable(&p, &out.key, &tags, &pl) {
                        bad.push(format!("oblivious {kind:?} placement not findable"));
                    }
                }
                Err(e) => bad.push(format!("oblivious {kind:?}: {e}")),
            }
        }
        if digests.len() != 1 || costs.len() != 1 {
            bad.push(format!("oblivious {kind:?}: {} distinct traces over 10^3 inputs", digests.len()));
        }
    }
    bad.truncate(10);
    outcome(bad.is_empty(), format!("build failures per 10^3 keys [{}], 2x10^3 oblivious builds at n=256; {}", failures.join(", "), summary(&bad)))
}

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("oracle equivalence", oracle_equivalence),
        ("dpf and pir oracles", dpf_and_pir),
        ("transcript shape and mutations", shape_and_mutations),
        ("state invariants", claim_invariants),
        ("overhead trends", overhead_trends),
        ("hashing layer", hashing_layer),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !picked.is_empty() && !picked.contains(&(i + 1)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {name}: {verdict} ({:.0?}) {}", i + 1, t.elapsed(), o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
