use doram::harness::{generate, mismatches, oracle_run, run_with, sized, TraceKind};
use doram::{Config, Op, Scheme};
use proptest::prelude::*;

fn check(scheme: Scheme, m: usize, n: u64, len: usize, kind: TraceKind, seed: u64) {
    let mut base = Config::new(scheme, n, 8, 4);
    base.m = m;
    base.seed = seed;
    if scheme == Scheme::FourServer {
        base.c = 0.5;
    }
    let cfg = sized(&base, n);
    let ops = generate(kind, len, n, cfg.payload_bytes(), seed);
    let run = run_with(&cfg, &ops, false).unwrap();
    let want = oracle_run(n, cfg.payload_bytes(), &ops);
    assert_eq!(mismatches(&run.results, &want), 0, "{} m={m} N={n} {kind:?}", scheme.name());
}

#[test]
fn small_instances_match_plain_memory() {
    for kind in [TraceKind::Uniform, TraceKind::Hot, TraceKind::Sequential] {
        check(Scheme::SingleServerBaseline, 1, 64, 500, kind, 1);
        check(Scheme::ThreeServer, 3, 64, 500, kind, 2);
        check(Scheme::MServer, 2, 64, 500, kind, 3);
        check(Scheme::MServer, 3, 64, 500, kind, 4);
        check(Scheme::Deamortized, 2, 64, 500, kind, 5);
        check(Scheme::FourServer, 4, 64, 200, kind, 6);
    }
}

fn arb_ops(n: u64, pb: usize) -> impl Strategy<Value = Vec<Op>> {
    let op = (0..n, proptest::option::of(proptest::collection::vec(any::<u8>(), pb)))
        .prop_map(|(a, w)| match w {
            Some(x) => Op::Write(a, x),
            None => Op::Read(a),
        });
    proptest::collection::vec(op, 0..150)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn arbitrary_traces_match_plain_memory(scheme in 0usize..4, seed: u64, ops in arb_ops(32, 4)) {
        let scheme = [Scheme::SingleServerBaseline, Scheme::ThreeServer, Scheme::MServer, Scheme::Deamortized][scheme];
        let mut cfg = sized(&Config::new(scheme, 32, 8, 2), 32);
        cfg.seed = seed;
        let ops: Vec<Op> = ops.into_iter().map(|op| match op {
            Op::Write(a, mut x) => {
                x.resize(cfg.payload_bytes(), 0);
                Op::Write(a, x)
            }
            r => r,
        }).collect();
        let run = run_with(&cfg, &ops, false).unwrap();
        prop_assert_eq!(mismatches(&run.results, &oracle_run(32, cfg.payload_bytes(), &ops)), 0);
    }
}
