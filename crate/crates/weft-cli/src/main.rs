//! Command-line front end for the calculus toolkit.
//!
//! Reports are JSON on stdout; anything meant for humans goes to stderr.
//! Exit codes are a total function of the verdict class: 0 accepted,
//! clean, or terminated; 1 rejected program; 2 usage error; 3 blocked
//! migration; 4 stuck thread; 5 property violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use weft::confinement::{typecheck_relaxed, typecheck_static, ConfJudgment};
use weft::decl_effect::{annotate, InfJudgment};
use weft::lattice::{Level, Policy};
use weft::property_check::{
    check_dnd, check_dni, check_fpc, check_ndn, check_simulation, CheckError, Verdict,
    DEFAULT_DEPTH,
};
use weft::semantics::{
    resolve_against, run, Configuration, Mode, Network, NetworkSpec, RunStatus, Scheduler,
};
use weft::syntax::{parse_level_text, parse_policy_text, parse_program, pretty, pretty_type, Expr};
use weft::typecheck_dnd::{typecheck_dnd, DndJudgment, TypeError};

const EXIT_REJECTED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BLOCKED: u8 = 3;
const EXIT_STUCK: u8 = 4;
const EXIT_VIOLATION: u8 = 5;

#[derive(Parser)]
#[command(name = "weft", version, about = "Toolkit for mobile threads under per-domain flow policies")]
struct Cli {
    /// Network description file (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    network: Option<PathBuf>,

    /// Round budget for the bounded property games.
    #[arg(long, global = true, default_value_t = DEFAULT_DEPTH, value_name = "N")]
    depth: u32,

    /// Observation level, e.g. '{H,L}'. All levels of the universe when absent.
    #[arg(long, global = true, value_name = "SET")]
    level: Option<String>,

    /// Worker threads for the property search.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Seed for the seeded scheduler.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a program and print its canonical rendering.
    Parse {
        /// Source text, or a path to a file holding it.
        program: String,
    },
    /// Check a program under one of the type systems.
    Typecheck {
        #[arg(long, value_enum)]
        system: System,
        /// Level of the thread the program runs as. Default: all principals.
        #[arg(long, value_name = "SET")]
        thread_level: Option<String>,
        /// Flow policy context the program starts under. Default: top.
        #[arg(long, value_name = "POLICY")]
        context: Option<String>,
        /// Allowed policy the program is checked against. Default: bot.
        #[arg(long, value_name = "POLICY")]
        allowed: Option<String>,
        program: String,
    },
    /// Infer the declassification effect and annotate every migration.
    Annotate { program: String },
    /// Execute the network's thread pool until it stops.
    Run {
        #[arg(long, value_enum, default_value_t = RunMode::Base)]
        mode: RunMode,
        #[arg(long, value_enum, default_value_t = Sched::RoundRobin)]
        scheduler: Sched,
        #[arg(long, default_value_t = 10_000)]
        max_steps: u64,
    },
    /// Bounded search for a property violation over the network.
    Verify {
        #[arg(long, value_enum)]
        property: Property,
        /// Gate migrations on annotations when checking confinement.
        #[arg(long, value_enum, default_value_t = RunMode::Base)]
        mode: RunMode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Dnd,
    ConfineStatic,
    ConfineRelaxed,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunMode {
    Base,
    Check,
    Annotated,
}

impl From<RunMode> for Mode {
    fn from(m: RunMode) -> Mode {
        match m {
            RunMode::Base => Mode::Base,
            RunMode::Check => Mode::RuntimeCheck,
            RunMode::Annotated => Mode::Annotated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sched {
    RoundRobin,
    First,
    Seeded,
}

#[derive(Clone, Copy, ValueEnum)]
enum Property {
    Dnd,
    Ndn,
    Fpc,
    Dni,
    Simulation,
    Combined,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        // Fails only if a global pool already exists, which it cannot here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(code) => code,
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, ExitCode> {
    match &cli.command {
        Command::Parse { program } => cmd_parse(cli, program),
        Command::Typecheck { system, thread_level, context, allowed, program } => {
            cmd_typecheck(cli, *system, thread_level, context, allowed, program)
        }
        Command::Annotate { program } => cmd_annotate(cli, program),
        Command::Run { mode, scheduler, max_steps } => {
            cmd_run(cli, (*mode).into(), *scheduler, *max_steps)
        }
        Command::Verify { property, mode } => cmd_verify(cli, *property, (*mode).into()),
    }
}

fn usage(msg: impl AsRef<str>) -> ExitCode {
    eprintln!("usage error: {}", msg.as_ref());
    ExitCode::from(EXIT_USAGE)
}

fn emit(v: &Value) {
    println!("{v}");
}

/// Positional program arguments name a file when one exists, first beside
/// the invocation, then beside the network file; otherwise they are the
/// source text itself.
fn read_program(arg: &str, near: Option<&Path>) -> Result<String, ExitCode> {
    let direct = Path::new(arg);
    if direct.is_file() {
        return fs::read_to_string(direct).map_err(|e| usage(format!("cannot read {arg}: {e}")));
    }
    if let Some(dir) = near {
        let p = dir.join(arg);
        if p.is_file() {
            return fs::read_to_string(&p)
                .map_err(|e| usage(format!("cannot read {}: {e}", p.display())));
        }
    }
    Ok(arg.to_owned())
}

fn load_network(cli: &Cli) -> Result<(Network, Configuration, PathBuf), ExitCode> {
    let path = cli
        .network
        .as_ref()
        .ok_or_else(|| usage("this command needs --network <FILE>"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let spec: NetworkSpec = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{} is not a network description: {e}", path.display())))?;
    let (net, cfg) = Network::from_spec(&spec)
        .map_err(|e| usage(format!("bad network {}: {e}", path.display())))?;
    Ok((net, cfg, path.clone()))
}

/// Parse a CLI-supplied program and resolve its literals against the
/// network. Parse and resolution failures reject the program.
fn prepare_program(
    cmd: &str,
    text: &str,
    net: &Network,
    cfg: &Configuration,
) -> Result<Expr, ExitCode> {
    let raw = parse_program(text).map_err(|e| {
        emit(&json!({ "command": cmd, "accepted": false, "error": e.to_string() }));
        ExitCode::from(EXIT_REJECTED)
    })?;
    resolve_against(&raw, &net.universe, &|n| cfg.sigma.contains_key(n)).map_err(|e| {
        emit(&json!({ "command": cmd, "accepted": false, "error": e.to_string() }));
        ExitCode::from(EXIT_REJECTED)
    })
}

fn reject(cmd: &str, extra: &[(&str, Value)], err: &TypeError) -> ExitCode {
    let mut obj = json!({
        "command": cmd,
        "accepted": false,
        "rule": err.rule,
        "condition": err.condition,
        "path": err.path,
    });
    let map = obj.as_object_mut().expect("object literal");
    for (k, v) in extra {
        map.insert((*k).to_owned(), v.clone());
    }
    emit(&obj);
    ExitCode::from(EXIT_REJECTED)
}

fn cmd_parse(cli: &Cli, program: &str) -> Result<ExitCode, ExitCode> {
    let near = cli.network.as_deref().and_then(Path::parent);
    let text = read_program(program, near)?;
    match parse_program(&text) {
        Ok(e) => {
            emit(&json!({ "command": "parse", "accepted": true, "pretty": pretty(&e) }));
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            emit(&json!({ "command": "parse", "accepted": false, "error": e.to_string() }));
            Ok(ExitCode::from(EXIT_REJECTED))
        }
    }
}

fn parse_level_flag(s: &Option<String>, what: &str) -> Result<Option<Level>, ExitCode> {
    match s {
        None => Ok(None),
        Some(t) => parse_level_text(t)
            .map(Some)
            .map_err(|e| usage(format!("bad {what}: {e}"))),
    }
}

fn parse_policy_flag(s: &Option<String>, what: &str) -> Result<Option<Policy>, ExitCode> {
    match s {
        None => Ok(None),
        Some(t) => parse_policy_text(t)
            .map(Some)
            .map_err(|e| usage(format!("bad {what}: {e}"))),
    }
}

fn cmd_typecheck(
    cli: &Cli,
    system: System,
    thread_level: &Option<String>,
    context: &Option<String>,
    allowed: &Option<String>,
    program: &str,
) -> Result<ExitCode, ExitCode> {
    let (net, cfg, path) = load_network(cli)?;
    let text = read_program(program, path.parent())?;
    let m = prepare_program("typecheck", &text, &net, &cfg)?;
    let uni = &net.universe;

    let level = parse_level_flag(thread_level, "--thread-level")?
        .unwrap_or_else(|| Level::bottom(uni));
    let context = parse_policy_flag(context, "--context")?
        .unwrap_or_else(Policy::top)
        .resolve_bottom(uni);
    let allowed = parse_policy_flag(allowed, "--allowed")?
        .unwrap_or_else(|| Policy::bottom(uni))
        .resolve_bottom(uni);
    uni.validate_level(&level).map_err(|e| usage(format!("bad --thread-level: {e}")))?;
    uni.validate_policy(&context).map_err(|e| usage(format!("bad --context: {e}")))?;
    uni.validate_policy(&allowed).map_err(|e| usage(format!("bad --allowed: {e}")))?;

    let name = match system {
        System::Dnd => "dnd",
        System::ConfineStatic => "confine-static",
        System::ConfineRelaxed => "confine-relaxed",
    };
    let sys = [("system", json!(name))];

    let report = match system {
        System::Dnd => {
            let j = DndJudgment {
                universe: uni,
                env: &net.gamma,
                thread_level: level,
                context,
                sigma: &cfg.sigma,
            };
            match typecheck_dnd(&j, &m) {
                Ok((effect, ty)) => json!({
                    "command": "typecheck",
                    "system": name,
                    "accepted": true,
                    "effect": effect,
                    "type": pretty_type(&ty),
                }),
                Err(e) => return Ok(reject("typecheck", &sys, &e)),
            }
        }
        System::ConfineStatic => {
            for d in m.domain_names() {
                if !net.policies.contains_key(&d) {
                    return Err(usage(format!(
                        "domain `{d}` has no allowed policy; add it to the network's domain table"
                    )));
                }
            }
            let j = ConfJudgment { universe: uni, env: &net.gamma, allowed, sigma: &cfg.sigma };
            match typecheck_static(&net.policies, &j, &m) {
                Ok(ty) => json!({
                    "command": "typecheck",
                    "system": name,
                    "accepted": true,
                    "type": pretty_type(&ty),
                }),
                Err(e) => return Ok(reject("typecheck", &sys, &e)),
            }
        }
        System::ConfineRelaxed => {
            let j = ConfJudgment { universe: uni, env: &net.gamma, allowed, sigma: &cfg.sigma };
            match typecheck_relaxed(&j, &m) {
                Ok(ty) => json!({
                    "command": "typecheck",
                    "system": name,
                    "accepted": true,
                    "type": pretty_type(&ty),
                }),
                Err(e) => return Ok(reject("typecheck", &sys, &e)),
            }
        }
    };
    emit(&report);
    Ok(ExitCode::SUCCESS)
}

fn cmd_annotate(cli: &Cli, program: &str) -> Result<ExitCode, ExitCode> {
    let (net, cfg, path) = load_network(cli)?;
    let text = read_program(program, path.parent())?;
    let m = prepare_program("annotate", &text, &net, &cfg)?;
    let j = InfJudgment { universe: &net.universe, env: &net.gamma, sigma: &cfg.sigma };
    match annotate(&j, &m) {
        Ok(r) => {
            emit(&json!({
                "command": "annotate",
                "accepted": true,
                "annotated": pretty(&r.annotated),
                "effect": r.effect,
                "type": pretty_type(&r.vtype),
            }));
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => Ok(reject("annotate", &[], &e)),
    }
}

fn cmd_run(cli: &Cli, mode: Mode, sched: Sched, max_steps: u64) -> Result<ExitCode, ExitCode> {
    let (net, cfg, _) = load_network(cli)?;
    let sched = match sched {
        Sched::RoundRobin => Scheduler::RoundRobin,
        Sched::First => Scheduler::FirstRunnable,
        Sched::Seeded => Scheduler::Seeded(cli.seed),
    };
    let report = run(&net, &cfg, mode, sched, max_steps).map_err(|e| {
        eprintln!("run failed: {e}");
        ExitCode::from(EXIT_USAGE)
    })?;
    for label in &report.labels {
        emit(&serde_json::to_value(label).expect("labels serialize"));
    }
    let store: Value = report
        .config
        .store
        .iter()
        .map(|(a, v)| (a.clone(), json!(pretty(v))))
        .collect::<serde_json::Map<_, _>>()
        .into();
    let mut summary = serde_json::to_value(&report.status).expect("statuses serialize");
    let map = summary.as_object_mut().expect("status is an object");
    map.insert("steps".to_owned(), json!(report.labels.len()));
    map.insert("store".to_owned(), store);
    map.insert("tracker".to_owned(), json!(report.config.tracker));
    emit(&summary);
    Ok(match report.status {
        RunStatus::Terminated | RunStatus::BudgetExhausted => ExitCode::SUCCESS,
        RunStatus::Blocked => ExitCode::from(EXIT_BLOCKED),
        RunStatus::Stuck { .. } => ExitCode::from(EXIT_STUCK),
    })
}

fn verdict_report(property: &str, depth: u32, v: &Verdict) -> Value {
    let mut obj = serde_json::to_value(v).expect("verdicts serialize");
    let map = obj.as_object_mut().expect("verdict is an object");
    map.insert("property".to_owned(), json!(property));
    map.entry("depth").or_insert(json!(depth));
    obj
}

fn check_failed(e: CheckError) -> ExitCode {
    match e {
        CheckError::Store(err) => reject("verify", &[], &err),
        CheckError::BadInput(msg) => usage(msg),
        CheckError::Semantics(err) => usage(err.to_string()),
    }
}

fn cmd_verify(cli: &Cli, property: Property, mode: Mode) -> Result<ExitCode, ExitCode> {
    let (net, cfg, _) = load_network(cli)?;
    let level = match parse_level_flag(&cli.level, "--level")? {
        Some(l) => {
            net.universe.validate_level(&l).map_err(|e| usage(format!("bad --level: {e}")))?;
            Some(l)
        }
        None => None,
    };
    let depth = cli.depth;

    let single = |name: &str, v: Result<Verdict, CheckError>| -> Result<ExitCode, ExitCode> {
        let v = v.map_err(check_failed)?;
        emit(&verdict_report(name, depth, &v));
        Ok(if v.is_violation() {
            ExitCode::from(EXIT_VIOLATION)
        } else {
            ExitCode::SUCCESS
        })
    };

    match property {
        Property::Dnd => single("dnd", check_dnd(&net, &cfg, level.as_ref(), depth)),
        Property::Ndn => single("ndn", check_ndn(&net, &cfg, level.as_ref(), depth)),
        Property::Dni => single("dni", check_dni(&net, &cfg, level.as_ref(), depth)),
        Property::Fpc => single("fpc", check_fpc(&net, &cfg, mode, depth)),
        Property::Simulation => {
            let j = InfJudgment { universe: &net.universe, env: &net.gamma, sigma: &cfg.sigma };
            let mut annotated = std::collections::BTreeMap::new();
            for (n, e) in &cfg.pool {
                match annotate(&j, e) {
                    Ok(r) => {
                        annotated.insert(n.clone(), r.annotated);
                    }
                    Err(e) => {
                        return Ok(reject("verify", &[("thread", json!(n))], &e));
                    }
                }
            }
            single("simulation", check_simulation(&net, &cfg, &annotated, depth))
        }
        Property::Combined => {
            let dnd = check_dnd(&net, &cfg, level.as_ref(), depth).map_err(check_failed)?;
            let fpc = check_fpc(&net, &cfg, mode, depth).map_err(check_failed)?;
            let dni = check_dni(&net, &cfg, level.as_ref(), depth).map_err(check_failed)?;
            let premises_clean = !dnd.is_violation() && !fpc.is_violation();
            let broken = premises_clean && dni.is_violation();
            let mut obj = json!({
                "property": "combined",
                "depth": depth,
                "dnd": verdict_report("dnd", depth, &dnd),
                "fpc": verdict_report("fpc", depth, &fpc),
                "dni": verdict_report("dni", depth, &dni),
                "implicationHolds": !broken,
            });
            if broken {
                let map = obj.as_object_mut().expect("object literal");
                map.insert(
                    "counterexample".to_owned(),
                    json!({
                        "premises": ["dnd", "fpc"],
                        "conclusion": "dni",
                        "witness": match &dni {
                            Verdict::Violation { witness } => serde_json::to_value(witness)
                                .expect("witnesses serialize"),
                            Verdict::NoViolationUpTo { .. } => Value::Null,
                        },
                    }),
                );
            }
            emit(&obj);
            Ok(if broken { ExitCode::from(EXIT_VIOLATION) } else { ExitCode::SUCCESS })
        }
    }
}
