//! Shared machinery for the integration suites: small network builders,
//! a seeded program generator with typability filters, subject-reduction
//! walkers, halt classification, and the pinned example table.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weft::confinement::{typecheck_relaxed, typecheck_static, ConfJudgment};
use weft::decl_effect::{annotate, InfJudgment};
use weft::lattice::{effect_leq, policy_leq, policy_meet, Effect, Level, Policy};
use weft::property_check::Verdict;
use weft::semantics::{
    run, successors, Configuration, Mode, Network, NetworkSpec, RunReport, RunStatus, Scheduler,
    StepKind,
};
use weft::syntax::{split, Abs, Expr, Latent, Split, Type};
use weft::typecheck_dnd::{dnd_type_view, typecheck_dnd, DndJudgment, TypeError};

pub fn network(v: serde_json::Value) -> (Network, Configuration) {
    let spec: NetworkSpec = serde_json::from_value(v).expect("well-formed spec literal");
    Network::from_spec(&spec).expect("spec resolves")
}

/// Judgment for a pool thread under no declared context.
pub fn dnd_thread(net: &Network, cfg: &Configuration, name: &str) -> Result<(Effect, Type), TypeError> {
    let j = DndJudgment {
        universe: &net.universe,
        env: &net.gamma,
        thread_level: cfg.upsilon[name].clone(),
        context: Policy::top(),
        sigma: &cfg.sigma,
    };
    typecheck_dnd(&j, &cfg.pool[name])
}

pub fn static_thread(net: &Network, cfg: &Configuration, name: &str) -> Result<Type, TypeError> {
    let j = ConfJudgment {
        universe: &net.universe,
        env: &net.gamma,
        allowed: net.policies[&cfg.tracker[name]].clone(),
        sigma: &cfg.sigma,
    };
    typecheck_static(&net.policies, &j, &cfg.pool[name])
}

pub fn relaxed_thread(net: &Network, cfg: &Configuration, name: &str) -> Result<Type, TypeError> {
    let j = ConfJudgment {
        universe: &net.universe,
        env: &net.gamma,
        allowed: net.policies[&cfg.tracker[name]].clone(),
        sigma: &cfg.sigma,
    };
    typecheck_relaxed(&j, &cfg.pool[name])
}

pub fn annotate_thread(net: &Network, cfg: &Configuration, name: &str) -> Result<weft::decl_effect::AnnotResult, TypeError> {
    let j = InfJudgment { universe: &net.universe, env: &net.gamma, sigma: &cfg.sigma };
    annotate(&j, &cfg.pool[name])
}

// ---------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------

/// Seeded source of small pools over two principals and three domains.
/// Shapes lean toward ones the checkers accept so that filtered corpora
/// fill quickly; rejected programs are simply skipped by the filters.
pub struct Gen {
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, PartialEq)]
enum Want {
    Unit,
    Bool,
}

const DOMAINS: [&str; 3] = ["d1", "d2", "d3"];
const REFS: [(&str, &[&str]); 3] = [("a", &["H"]), ("b", &["H", "L"]), ("c", &["L"])];

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn policy(&mut self) -> Policy {
        match self.rng.gen_range(0..4u8) {
            0 => Policy::top(),
            1 => Policy::new([("H", "L")]),
            2 => Policy::new([("L", "H")]),
            _ => Policy::new([("H", "L"), ("L", "H"), ("H", "H"), ("L", "L")]),
        }
    }

    fn level(&mut self) -> Level {
        match self.rng.gen_range(0..3u8) {
            0 => Level::new(["H"]),
            1 => Level::new(["L"]),
            _ => Level::new(["H", "L"]),
        }
    }

    fn ref_name(&mut self) -> String {
        REFS[self.rng.gen_range(0..REFS.len())].0.to_owned()
    }

    fn bool_expr(&mut self, depth: u32, bound: Option<&str>) -> Expr {
        let roll = self.rng.gen_range(0..10u8);
        if depth == 0 || roll < 4 {
            return Expr::Bool(self.rng.gen());
        }
        if roll < 7 {
            return Expr::Deref(Box::new(Expr::Loc(self.ref_name())));
        }
        if roll < 8 {
            if let Some(x) = bound {
                return Expr::Var(x.to_owned());
            }
            return Expr::Bool(self.rng.gen());
        }
        Expr::Cond {
            guard: Box::new(self.bool_expr(depth - 1, bound)),
            then_br: Box::new(self.bool_expr(depth - 1, bound)),
            else_br: Box::new(self.bool_expr(depth - 1, bound)),
        }
    }

    fn unit_expr(&mut self, depth: u32, can_spawn: bool, bound: Option<&str>) -> Expr {
        if depth == 0 {
            return if self.rng.gen_ratio(1, 3) {
                Expr::Unit
            } else {
                self.assign(bound)
            };
        }
        match self.rng.gen_range(0..20u8) {
            0..=2 => Expr::Unit,
            3..=7 => self.assign(bound),
            8..=9 => Expr::Seq(
                Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
                Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
            ),
            10..=11 => Expr::Cond {
                guard: Box::new(self.bool_expr(depth - 1, bound)),
                then_br: Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
                else_br: Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
            },
            12..=13 => Expr::Flow {
                policy: self.policy(),
                body: Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
            },
            14..=15 => Expr::Allowed {
                policy: self.policy(),
                then_br: Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
                else_br: Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
            },
            16..=17 if can_spawn => Expr::Thread {
                level: self.level(),
                body: Box::new(self.unit_expr(depth - 1, false, None)),
                domain: DOMAINS[self.rng.gen_range(0..DOMAINS.len())].to_owned(),
                annot: None,
            },
            18 => {
                let var = "x".to_owned();
                let body = self.unit_expr(depth - 1, false, Some(&var));
                Expr::App(
                    Box::new(Expr::Abs(Box::new(Abs {
                        var,
                        param: Type::Bool,
                        latent: Latent::default(),
                        body,
                    }))),
                    Box::new(self.bool_expr(depth - 1, bound)),
                )
            }
            _ => Expr::Seq(
                Box::new(self.assign(bound)),
                Box::new(self.unit_expr(depth - 1, can_spawn, bound)),
            ),
        }
    }

    fn assign(&mut self, bound: Option<&str>) -> Expr {
        Expr::Assign(
            Box::new(Expr::Loc(self.ref_name())),
            Box::new(self.bool_expr(1, bound)),
        )
    }

    /// One pool: 1-2 root threads over the fixed three-domain network.
    pub fn pool(&mut self) -> (Network, Configuration) {
        let threads = if self.rng.gen_ratio(1, 4) { 2 } else { 1 };
        let mut spec = serde_json::json!({
            "universe": ["H", "L"],
            "domains": { "d1": ["H<L"], "d2": [], "d3": "bot" },
            "refs": {
                "a": { "level": ["H"], "type": "bool", "init": "false" },
                "b": { "level": ["H", "L"], "type": "bool", "init": "false" },
                "c": { "level": ["L"], "type": "bool", "init": "false" }
            },
            "threads": []
        });
        let list = spec["threads"].as_array_mut().expect("array literal");
        for i in 0..threads {
            list.push(serde_json::json!({
                "name": format!("t{i}"),
                "level": ["H", "L"],
                "domain": DOMAINS[self.rng.gen_range(0..DOMAINS.len())],
                "program": "()"
            }));
        }
        let (net, mut cfg) = network(spec);
        let names: Vec<String> = cfg.pool.keys().cloned().collect();
        for (i, name) in names.iter().enumerate() {
            let depth = 2 + (i as u32 % 2);
            let e = self.unit_expr(depth, true, None);
            cfg.pool.insert(name.clone(), e);
            cfg.upsilon.insert(name.clone(), self.level());
        }
        (net, cfg)
    }

    pub fn seed_for_run(&mut self) -> u64 {
        self.rng.gen()
    }
}

/// Keep generating pools until `n` satisfy `keep`. The cap bounds a
/// degenerate filter, not the expected path.
pub fn corpus<F>(seed: u64, n: usize, mut keep: F) -> Vec<(Network, Configuration)>
where
    F: FnMut(&Network, &Configuration) -> bool,
{
    let mut g = Gen::new(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0u32;
    while out.len() < n {
        attempts += 1;
        assert!(attempts < 200_000, "filter keeps too few pools");
        let (net, cfg) = g.pool();
        if keep(&net, &cfg) {
            out.push((net, cfg));
        }
    }
    out
}

pub fn all_threads_pass<F>(net: &Network, cfg: &Configuration, mut f: F) -> bool
where
    F: FnMut(&Network, &Configuration, &str) -> bool,
{
    cfg.pool.keys().all(|n| f(net, cfg, n))
}

// ---------------------------------------------------------------------
// Subject-reduction walkers
// ---------------------------------------------------------------------

pub enum SrSystem {
    Static,
    Relaxed,
}

/// Walk a random base-mode path, re-typing every one-step successor along
/// the way. The stepping thread must keep its type with an effect below
/// the one before the step; a spawned thread must type on its own.
pub fn sr_walk_dnd(
    net: &Network,
    cfg: &Configuration,
    max_steps: u32,
    rng: &mut ChaCha8Rng,
) -> Result<u32, String> {
    let mut cur = cfg.clone();
    let mut typing: BTreeMap<String, (Effect, Type)> = BTreeMap::new();
    for name in cur.pool.keys() {
        let (s, t) = dnd_thread(net, &cur, name).map_err(|e| format!("untypable start: {e}"))?;
        typing.insert(name.clone(), (s, t));
    }
    let mut checked = 0;
    for _ in 0..max_steps {
        let succs = successors(net, &cur, Mode::Base).map_err(|e| e.to_string())?;
        if succs.is_empty() {
            break;
        }
        for (next, lab) in &succs {
            let (s0, t0) = &typing[&lab.thread];
            let (s1, t1) = dnd_thread(net, next, &lab.thread)
                .map_err(|e| format!("residual of {} untypable after {:?}: {e}", lab.thread, lab.kind))?;
            let v0 = dnd_type_view(t0).map_err(|e| e.to_string())?;
            let v1 = dnd_type_view(&t1).map_err(|e| e.to_string())?;
            if v0 != v1 {
                return Err(format!("type changed across {:?} of {}", lab.kind, lab.thread));
            }
            if !effect_leq(&s1, s0, &Policy::top()) {
                return Err(format!("effect grew across {:?} of {}", lab.kind, lab.thread));
            }
            for name in next.pool.keys() {
                if !cur.pool.contains_key(name) {
                    let (_, t) = dnd_thread(net, next, name)
                        .map_err(|e| format!("spawned {name} untypable: {e}"))?;
                    if t != Type::Unit {
                        return Err(format!("spawned {name} not of unit type"));
                    }
                }
            }
            checked += 1;
        }
        let (next, lab) = succs[rng.gen_range(0..succs.len())].clone();
        let (s1, t1) = dnd_thread(net, &next, &lab.thread).expect("checked above");
        typing.insert(lab.thread.clone(), (s1, t1));
        for name in next.pool.keys() {
            if !typing.contains_key(name) {
                let entry = dnd_thread(net, &next, name).expect("checked above");
                typing.insert(name.clone(), entry);
            }
        }
        cur = next;
    }
    Ok(checked)
}

/// Same walk for the confinement systems. The static system steps the
/// plain semantics; the relaxed one steps its gate-checked semantics, so
/// migrations that land are exactly the ones its runtime admits. After a
/// step by thread m the residual must type when the thread's allowed
/// parameter is met with its current domain's policy.
pub fn sr_walk_confine(
    net: &Network,
    cfg: &Configuration,
    system: SrSystem,
    max_steps: u32,
    rng: &mut ChaCha8Rng,
) -> Result<u32, String> {
    let mode = match system {
        SrSystem::Static => Mode::Base,
        SrSystem::Relaxed => Mode::RuntimeCheck,
    };
    let check = |net: &Network, cfg: &Configuration, name: &str, a: &Policy| -> Result<Type, String> {
        let j = ConfJudgment {
            universe: &net.universe,
            env: &net.gamma,
            allowed: a.clone(),
            sigma: &cfg.sigma,
        };
        let r = match system {
            SrSystem::Static => typecheck_static(&net.policies, &j, &cfg.pool[name]),
            SrSystem::Relaxed => typecheck_relaxed(&j, &cfg.pool[name]),
        };
        r.map_err(|e| format!("{name} untypable at {a}: {e}"))
    };

    let mut cur = cfg.clone();
    let mut allowed_of: BTreeMap<String, Policy> = BTreeMap::new();
    for name in cur.pool.keys() {
        let a = net.policies[&cur.tracker[name]].clone();
        check(net, &cur, name, &a)?;
        allowed_of.insert(name.clone(), a);
    }
    let mut checked = 0;
    for _ in 0..max_steps {
        let succs = successors(net, &cur, mode).map_err(|e| e.to_string())?;
        let succs: Vec<_> = succs
            .into_iter()
            .filter(|(_, lab)| lab.kind != StepKind::BlockedMigration)
            .collect();
        if succs.is_empty() {
            break;
        }
        for (next, lab) in &succs {
            let here = net.policies[&next.tracker[&lab.thread]].clone();
            let a = policy_meet(&allowed_of[&lab.thread], &here);
            let t = check(net, next, &lab.thread, &a)
                .map_err(|e| format!("after {:?}: {e}", lab.kind))?;
            if t != Type::Unit {
                return Err(format!("residual of {} not of unit type", lab.thread));
            }
            for name in next.pool.keys() {
                if !cur.pool.contains_key(name) {
                    let w = net.policies[&next.tracker[name]].clone();
                    check(net, next, name, &w)
                        .map_err(|e| format!("spawned thread: {e}"))?;
                }
            }
            checked += 1;
        }
        let (next, lab) = succs[rng.gen_range(0..succs.len())].clone();
        let here = net.policies[&next.tracker[&lab.thread]].clone();
        let a = policy_meet(&allowed_of[&lab.thread], &here);
        allowed_of.insert(lab.thread.clone(), a);
        for name in next.pool.keys() {
            if !allowed_of.contains_key(name) {
                allowed_of.insert(name.clone(), net.policies[&next.tracker[name]].clone());
            }
        }
        cur = next;
    }
    Ok(checked)
}

// ---------------------------------------------------------------------
// Halt classification
// ---------------------------------------------------------------------

/// A finished gated run may only stop at values, exhausted budget, or
/// migrations the gate genuinely refuses; anything else is a safety bug.
/// The refusal is re-derived here rather than trusted from the runner.
pub fn classify_halt(net: &Network, report: &RunReport, mode: Mode) -> Result<(), String> {
    match &report.status {
        RunStatus::Terminated | RunStatus::BudgetExhausted => Ok(()),
        RunStatus::Stuck { thread, reason } => Err(format!("stuck at {thread}: {reason}")),
        RunStatus::Blocked => {
            let cfg = &report.config;
            for (name, e) in &cfg.pool {
                let Split::Redex(_, redex) = split(e) else { continue };
                let Expr::Thread { body, domain, annot, .. } = &redex else { continue };
                let w = &net.policies[domain.as_str()];
                let refused = match mode {
                    Mode::Annotated => match annot {
                        Some(f) => !policy_leq(w, f),
                        None => return Err(format!("{name} blocked without an annotation")),
                    },
                    Mode::RuntimeCheck => {
                        let j = ConfJudgment {
                            universe: &net.universe,
                            env: &net.gamma,
                            allowed: w.clone(),
                            sigma: &cfg.sigma,
                        };
                        !matches!(typecheck_relaxed(&j, body), Ok(Type::Unit))
                    }
                    Mode::Base => return Err("blocked in ungated mode".to_owned()),
                };
                if !refused {
                    return Err(format!("{name} blocked on a migration its domain admits"));
                }
            }
            Ok(())
        }
    }
}

pub fn seeded_run(
    net: &Network,
    cfg: &Configuration,
    mode: Mode,
    seed: u64,
    max_steps: u64,
) -> RunReport {
    run(net, cfg, mode, Scheduler::Seeded(seed), max_steps).expect("runner works on built pools")
}

// ---------------------------------------------------------------------
// Pinned example table
// ---------------------------------------------------------------------

pub struct Case {
    pub name: &'static str,
    pub rows: Vec<(String, String)>,
}

pub fn verdict_str(v: &Verdict) -> String {
    match v {
        Verdict::NoViolationUpTo { depth } => format!("clean@{depth}"),
        Verdict::Violation { witness } => {
            let lev = witness
                .level
                .as_ref()
                .map(|l| l.to_string())
                .unwrap_or_else(|| "-".to_owned());
            format!("violation {:?}@{} level {}", witness.label.kind, witness.label.domain, lev)
        }
    }
}

pub fn run_str(report: &RunReport) -> String {
    let status = match &report.status {
        RunStatus::Terminated => "terminated".to_owned(),
        RunStatus::Blocked => "blocked".to_owned(),
        RunStatus::Stuck { thread, .. } => format!("stuck({thread})"),
        RunStatus::BudgetExhausted => "budget".to_owned(),
    };
    let store: Vec<String> = report
        .config
        .store
        .iter()
        .map(|(a, v)| format!("{a}={}", weft::syntax::pretty(v)))
        .collect();
    format!("{status} after {} [{}]", report.labels.len(), store.join(", "))
}

pub fn tc_str<T, E: std::fmt::Display>(r: &Result<T, E>) -> String {
    match r {
        Ok(_) => "accept".to_owned(),
        Err(e) => {
            let s = e.to_string();
            let rule = s.split(',').next().unwrap_or("?").trim().to_owned();
            format!("reject({rule})")
        }
    }
}
