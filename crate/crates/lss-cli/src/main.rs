use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use lss_core::error::Error;
use lss_core::exclusive::{check_exclusive, decide_exclusive};
use lss_core::generators::{
    gen_flexible_philosophers, gen_philosophers, gen_qbf_gadget, gen_random_2lss, QbfInstance,
    RandomParams,
};
use lss_core::initown::{parse_ownership, transform_init};
use lss_core::lockgraph::decide_locally_live;
use lss_core::model::{parse_lss, serialize_lss, Lss};
use lss_core::nested::{check_nested, decide_nested};
use lss_core::oracle::{exists_winning_oracle, trace_to_json, verify_strategy, OracleOpts};
use lss_core::patterns2::decide_general_2lss;
use lss_core::strategy::Strategy;

#[derive(Parser)]
#[command(name = "lss", about = "Deadlock-avoidance control for lock-sharing systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Auto,
    General,
    LocallyLive,
    Exclusive,
    Nested,
    Oracle,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide whether a winning control strategy exists
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        mode: Mode,
        #[arg(long)]
        json: bool,
        /// Product-state cap for the oracle
        #[arg(long, value_name = "N")]
        limit_states: Option<usize>,
        /// Per-process strategy-candidate cap
        #[arg(long, value_name = "N")]
        limit_strategies: Option<usize>,
    },
    /// Verify a user-supplied strategy; losing verdicts print a deadlock trace
    Verify {
        file: PathBuf,
        strategy_file: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long, value_name = "N")]
        limit_states: Option<usize>,
    },
    /// Emit an instance: philosophers N | flexible-philosophers N |
    /// qbf FORMULA_FILE | random PROCS STATES LOCKS P_CTL [plain|exclusive|nested]
    Generate {
        kind: String,
        params: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduce an initial-ownership instance to a standard one via key locks
    TransformInit {
        file: PathBuf,
        ownership_file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Check { file, mode, json, limit_states, limit_strategies } => {
            cmd_check(&file, mode, json, limit_states, limit_strategies)
        }
        Cmd::Verify { file, strategy_file, json, limit_states } => {
            cmd_verify(&file, &strategy_file, json, limit_states)
        }
        Cmd::Generate { kind, params, seed, out } => cmd_generate(&kind, &params, seed, out),
        Cmd::TransformInit { file, ownership_file, out } => {
            cmd_transform_init(&file, &ownership_file, out)
        }
    };
    match res {
        Ok(winning) => {
            if winning {
                ExitCode::from(0)
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_lss(path: &PathBuf) -> Result<Lss, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_lss(&text)
}

struct Classification {
    two_lock: bool,
    exclusive: bool,
    nested: bool,
    locally_live_compatible: bool,
}

fn classify(lss: &Lss) -> Classification {
    let two_lock = lss.is_two_lock();
    Classification {
        two_lock,
        exclusive: two_lock && check_exclusive(lss).is_ok(),
        nested: check_nested(lss).0,
        locally_live_compatible: two_lock && allow_all_is_live(lss),
    }
}

fn allow_all_is_live(lss: &Lss) -> bool {
    use lss_core::annotate::{annotate, AnnMode};
    use lss_core::model::ProcId;
    let padded = match lss.pad_to_two_locks() {
        Ok(p) => p,
        Err(_) => return false,
    };
    (0..padded.processes.len()).all(|i| {
        annotate(&padded, ProcId(i), AnnMode::TwoLock, &[]).is_ok_and(|ann| {
            let allow_all: Vec<_> = (0..ann.n_states())
                .map(|sid| ann.controllable_at(&padded, sid).into_iter().collect())
                .collect();
            lss_core::strategy::is_locally_live(&padded, &ann, &allow_all)
        })
    })
}

fn cmd_check(
    file: &PathBuf,
    mode: Mode,
    json: bool,
    limit_states: Option<usize>,
    limit_strategies: Option<usize>,
) -> Result<bool, Error> {
    let lss = load_lss(file)?;
    let class = classify(&lss);
    let mode = match mode {
        Mode::Auto => {
            // exclusive and locally-live decide the locally-live question,
            // so they only apply when local liveness is attainable at all
            if class.exclusive && class.locally_live_compatible {
                Mode::Exclusive
            } else if class.nested {
                Mode::Nested
            } else if class.locally_live_compatible {
                Mode::LocallyLive
            } else if class.two_lock {
                Mode::General
            } else {
                Mode::Oracle
            }
        }
        m => m,
    };
    let started = Instant::now();
    let winning;
    let mut artifact = json!({});
    let mode_name;
    match mode {
        Mode::Auto => unreachable!(),
        Mode::General => {
            mode_name = "general";
            let d = decide_general_2lss(&lss)?;
            winning = d.winning;
            if let Some(s) = &d.strategy {
                artifact["strategy"] = serde_json::from_str(&s.serialize()).unwrap();
            }
            if let Some(sel) = &d.selection {
                artifact["selection"] = sel.to_json(&lss);
            }
        }
        Mode::LocallyLive => {
            mode_name = "locally-live";
            let d = decide_locally_live(&lss)?;
            winning = d.winning;
            if let Some(s) = &d.strategy {
                artifact["strategy"] = serde_json::from_str(&s.serialize()).unwrap();
            }
            if let Some(scheme) = &d.scheme {
                let procs: Vec<String> =
                    lss.processes.iter().map(|p| p.name.clone()).collect();
                artifact["scheme"] = scheme.to_json(&lss.locks, &procs);
            }
            artifact["stage_trace"] =
                json!(d.trace.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>());
        }
        Mode::Exclusive => {
            mode_name = "exclusive";
            let d = decide_exclusive(&lss)?;
            winning = d.winning;
            if let Some(s) = &d.strategy {
                artifact["strategy"] = serde_json::from_str(&s.serialize()).unwrap();
            }
            artifact["bad_territory"] = json!(d
                .analysis
                .bt
                .iter()
                .map(|t| lss.locks[t.0].clone())
                .collect::<Vec<_>>());
        }
        Mode::Nested => {
            mode_name = "nested";
            let d = decide_nested(&lss, limit_strategies.unwrap_or(10_000))?;
            winning = d.winning;
            if let Some(s) = &d.strategy {
                artifact["strategy"] = serde_json::from_str(&s.serialize()).unwrap();
            }
            if let Some(sel) = &d.selection {
                artifact["selection"] = sel.to_json(&lss);
            }
        }
        Mode::Oracle => {
            mode_name = "oracle";
            let mut opts = OracleOpts::default();
            if let Some(n) = limit_states {
                opts.max_product_states = n;
            }
            if let Some(n) = limit_strategies {
                opts.max_candidates_per_proc = n;
            }
            let (w, strat) = exists_winning_oracle(&lss, &opts)?;
            winning = w;
            if let Some(s) = &strat {
                artifact["strategy"] = serde_json::from_str(&s.serialize()).unwrap();
            }
        }
    }
    let elapsed = started.elapsed();
    if json {
        let mut out = json!({
            "verdict": if winning { "winning" } else { "losing" },
            "mode": mode_name,
            "classification": {
                "two_lock": class.two_lock,
                "exclusive": class.exclusive,
                "nested": class.nested,
                "locally_live_compatible": class.locally_live_compatible,
            },
            "time_ms": elapsed.as_millis() as u64,
        });
        for (k, v) in artifact.as_object().unwrap() {
            out[k] = v.clone();
        }
        println!("{}", serde_json::to_string_pretty(&out).unwrap());
    } else {
        println!(
            "{}: {} (mode {mode_name}, {:?})",
            file.display(),
            if winning { "winning strategy exists" } else { "no winning strategy" },
            elapsed
        );
        if let Some(s) = artifact.get("strategy") {
            println!("strategy: {}", serde_json::to_string(s).unwrap());
        }
        if let Some(s) = artifact.get("selection") {
            println!("deadlock selection: {}", serde_json::to_string(s).unwrap());
        }
        if let Some(s) = artifact.get("scheme") {
            println!("sufficient deadlock scheme: {}", serde_json::to_string(s).unwrap());
        }
    }
    Ok(winning)
}

fn cmd_verify(
    file: &PathBuf,
    strategy_file: &PathBuf,
    json: bool,
    limit_states: Option<usize>,
) -> Result<bool, Error> {
    let lss = load_lss(file)?;
    let text = std::fs::read_to_string(strategy_file)
        .map_err(|e| Error::Parse(format!("{}: {e}", strategy_file.display())))?;
    let strat = Strategy::parse(&text)?;
    let mut opts = OracleOpts::default();
    if let Some(n) = limit_states {
        opts.max_product_states = n;
    }
    let verdict = verify_strategy(&lss, &strat, &opts)?;
    if json {
        let mut out = json!({
            "verdict": if verdict.winning { "winning" } else { "losing" },
        });
        if let Some(w) = &verdict.witness {
            out["witness"] = trace_to_json(&lss, w);
        }
        println!("{}", serde_json::to_string_pretty(&out).unwrap());
    } else if verdict.winning {
        println!("strategy is winning");
    } else {
        println!("strategy loses; deadlock trace:");
        if let Some(w) = &verdict.witness {
            for step in w {
                let p = &lss.processes[step.proc.0];
                println!("  {} {} {:?}", p.name, p.actions[step.action], step.op);
            }
        }
    }
    Ok(verdict.winning)
}

fn write_out(out: Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(
    kind: &str,
    params: &[String],
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<bool, Error> {
    let usize_param = |i: usize| -> Result<usize, Error> {
        params
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("missing or bad parameter {}", i + 1)))
    };
    let lss = match kind {
        "philosophers" => gen_philosophers(usize_param(0)?)?,
        "flexible-philosophers" => gen_flexible_philosophers(usize_param(0)?)?,
        "qbf" => {
            let path = params
                .first()
                .ok_or_else(|| Error::Parse("qbf needs a formula file".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Parse(format!("{path}: {e}")))?;
            gen_qbf_gadget(&QbfInstance::parse(&text)?)?
        }
        "random" => {
            let p_controllable: f64 = params
                .get(3)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse("random needs PROCS STATES LOCKS P_CTL".into()))?;
            let flavor = params.get(4).map(String::as_str).unwrap_or("plain");
            let rp = RandomParams {
                procs: usize_param(0)?,
                states: usize_param(1)?,
                locks: usize_param(2)?,
                p_controllable,
                p_nop: params.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.5),
                exclusive: flavor == "exclusive",
                nested: flavor == "nested",
            };
            if !["plain", "exclusive", "nested"].contains(&flavor) {
                return Err(Error::Parse(format!("unknown random flavor {flavor}")));
            }
            gen_random_2lss(seed.unwrap_or(0), &rp)?
        }
        other => return Err(Error::Parse(format!("unknown generator kind {other}"))),
    };
    write_out(out, &serialize_lss(&lss))?;
    Ok(true)
}

fn cmd_transform_init(
    file: &PathBuf,
    ownership_file: &PathBuf,
    out: Option<PathBuf>,
) -> Result<bool, Error> {
    let lss = load_lss(file)?;
    let text = std::fs::read_to_string(ownership_file)
        .map_err(|e| Error::Parse(format!("{}: {e}", ownership_file.display())))?;
    let own = parse_ownership(&lss, &text)?;
    let transformed = transform_init(&lss, &own)?;
    write_out(out, &serialize_lss(&transformed))?;
    Ok(true)
}
