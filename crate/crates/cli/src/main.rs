use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use doram::harness::{self, TraceKind};
use doram::{Config, Mutation, Op, Scheme};

/// Simulated distributed ORAM: run traces, sweep overheads, audit invariants.
///
/// Exit codes: 0 ok, 1 verification or runtime failure, 2 usage error.
#[derive(Parser)]
#[command(name = "doram", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trace and write results.jsonl, per-server transcripts and report.csv.
    Run(Common),
    /// Measure amortized overhead over a sweep of N and fit the growth term.
    Bench(Common),
    /// Compare sequential and single-address transcripts and audit server state.
    Verify(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme name, overriding the configuration file.
    #[arg(long)]
    scheme: Option<String>,
    /// Number of blocks when no configuration file is given.
    #[arg(long = "n", default_value_t = 1024)]
    n: u64,
    /// Level fan-out when no configuration file is given.
    #[arg(long = "d", default_value_t = 4)]
    d: u64,
    /// Server count for m_server when no configuration file is given.
    #[arg(long = "m", default_value_t = 2)]
    m: usize,
    /// Trace file with `R addr` and `W addr hex` lines.
    #[arg(long, conflicts_with = "gen")]
    trace: Option<PathBuf>,
    /// Trace generator: uniform, hot or sequential.
    #[arg(long)]
    gen: Option<String>,
    /// Generated trace length.
    #[arg(long, default_value_t = 1024)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma separated list of N for bench.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<u64>,
    /// bench: derive bits from two small-block runs instead of running at full B.
    #[arg(long)]
    affine: bool,
    /// Fault injection for tests: no_dummy_substitution, no_dummy_stash_padding, no_reencryption.
    #[arg(long)]
    mutate: Option<String>,
}

enum Failure {
    Usage(anyhow::Error),
    Verify(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure::Verify(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Verify(a) => cmd_verify(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_scheme(name: &str) -> anyhow::Result<Scheme> {
    Scheme::parse(name).with_context(|| format!("scheme: unknown scheme '{name}'"))
}

fn load_config(a: &Common) -> Result<Config, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("config: cannot read {}", p.display())).map_err(usage)?;
            let v: serde_json::Value = serde_json::from_str(&text).context("config: invalid JSON").map_err(usage)?;
            if let Some(s) = v.get("scheme").and_then(|s| s.as_str()) {
                parse_scheme(s).map_err(usage)?;
            }
            Config::from_json(&text).map_err(usage)?
        }
        None => {
            let name = a.scheme.as_deref().context("either --config or --scheme is required").map_err(usage)?;
            let scheme = parse_scheme(name).map_err(usage)?;
            let mut c = Config::new(scheme, a.n, 8, a.d);
            if scheme == Scheme::MServer {
                c.m = a.m;
            }
            c.seed = a.seed;
            harness::sized(&c, a.n)
        }
    };
    if let (Some(name), Some(_)) = (&a.scheme, &a.config) {
        cfg.scheme = parse_scheme(name).map_err(usage)?;
    }
    if let Some(m) = &a.mutate {
        cfg.mutation = Mutation::parse(m).with_context(|| format!("mutate: unknown mutation '{m}'")).map_err(usage)?;
    }
    cfg.clone().validate().map_err(usage)
}

fn load_trace(a: &Common, cfg: &Config) -> Result<Vec<Op>, Failure> {
    if let Some(p) = &a.trace {
        let text = fs::read_to_string(p).with_context(|| format!("trace: cannot read {}", p.display())).map_err(usage)?;
        return harness::parse_trace(&text, cfg.payload_bytes()).map_err(usage);
    }
    let kind = match a.gen.as_deref() {
        None => TraceKind::Uniform,
        Some(g) => TraceKind::parse(g).with_context(|| format!("gen: unknown generator '{g}'")).map_err(usage)?,
    };
    Ok(harness::generate(kind, a.len, cfg.n, cfg.payload_bytes(), a.seed))
}

fn out_dir(a: &Common) -> Result<PathBuf, Failure> {
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("out: cannot create {}", dir.display())).map_err(usage)?;
    Ok(dir)
}

fn hex(x: &[u8]) -> String {
    x.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_run(a: &Common) -> Result<(), Failure> {
    let cfg = load_config(a)?;
    let ops = load_trace(a, &cfg)?;
    for op in &ops {
        if op.addr() >= cfg.n {
            return Err(usage(anyhow::anyhow!("trace: address {} out of range for N = {}", op.addr(), cfg.n)));
        }
    }
    let dir = out_dir(a)?;
    let run = harness::run_trace(&cfg, &ops)?;
    let want = harness::oracle_run(cfg.n, cfg.payload_bytes(), &ops);

    let mut lines = String::new();
    for (i, ((op, got), exp)) in ops.iter().zip(&run.results).zip(&want).enumerate() {
        let row = serde_json::json!({
            "index": i,
            "op": if matches!(op, Op::Read(_)) { "R" } else { "W" },
            "addr": op.addr(),
            "value": hex(got),
            "oracle": got == exp,
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    write(&dir.join("results.jsonl"), &lines)?;
    for (srv, t) in run.transcripts.iter().enumerate() {
        write(&dir.join(format!("transcript_{srv}.jsonl")), &harness::transcript_jsonl(srv, t))?;
    }
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record(["accessIndex", "bitsUp", "bitsDown", "cumulativeOverhead"])?;
    for (i, up, down, ovh) in harness::report_rows(&run.report) {
        w.write_record([i.to_string(), up.to_string(), down.to_string(), format!("{ovh:.4}")])?;
    }
    w.flush()?;

    let bad = harness::mismatches(&run.results, &want);
    println!(
        "{} N={} B={} accesses={} overhead={:.2} mismatches={bad}",
        cfg.scheme.name(),
        cfg.n,
        cfg.b,
        ops.len(),
        run.report.amortized_overhead()
    );
    if bad > 0 {
        return Err(Failure::Verify(anyhow::anyhow!("{bad} results differ from plain memory")));
    }
    Ok(())
}

fn cmd_bench(a: &Common) -> Result<(), Failure> {
    let cfg = load_config(a)?;
    let sweep = if a.sweep.is_empty() { vec![cfg.n] } else { a.sweep.clone() };
    if sweep.iter().any(|&n| n < 2) {
        return Err(usage(anyhow::anyhow!("sweep: every N must be at least 2")));
    }
    let rows = harness::bench(&cfg, &sweep, a.len, a.seed, a.affine).map_err(usage)?;
    let dir = out_dir(a)?;
    let mut w = csv::Writer::from_path(dir.join("bench.csv"))?;
    w.write_record(["scheme", "N", "d", "B", "measuredOverhead", "predictedOverhead", "residual"])?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.scheme.clone(),
            r.n.to_string(),
            r.d.to_string(),
            r.b.to_string(),
            format!("{:.4}", r.measured),
            opt(r.predicted),
            opt(r.residual),
        ])?;
        println!("{} N={} B={} overhead={:.2} predicted={}", r.scheme, r.n, r.b, r.measured, opt(r.predicted));
    }
    w.flush()?;
    Ok(())
}

fn cmd_verify(a: &Common) -> Result<(), Failure> {
    let cfg = load_config(a)?;
    let rep = harness::verify(&cfg, a.len, a.seed)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write(&dir.join("verify.json"), &serde_json::to_string_pretty(&rep)?)?;
    }
    if rep.ok() {
        println!("{}: ok ({} checks)", rep.scheme, rep.audit.checks);
        return Ok(());
    }
    for f in &rep.failures {
        println!("{}: FAIL {f}", rep.scheme);
    }
    Err(Failure::Verify(anyhow::anyhow!("{} check(s) failed", rep.failures.len())))
}

fn write(p: &Path, s: &str) -> Result<(), Failure> {
    fs::write(p, s).with_context(|| format!("cannot write {}", p.display()))?;
    Ok(())
}
