//! Networks and the small-step machine.
//!
//! A network fixes a universe of principals, the allowed policy of each
//! domain, and a typing environment. A configuration carries the running
//! state: the position tracker, the thread pool, the store, the labeling
//! of references and threads, and the counter behind fresh names.
//!
//! Threads step one redex at a time under an evaluation context. Each step
//! is labeled with the thread, its current domain, the policy declared by
//! the context around the redex, and the kind of rule that fired. Migration
//! is the only rule whose firing depends on the chosen mode: the base mode
//! always spawns, the checking mode re-types the body against the target
//! domain's allowed policy, and the annotated mode compares the target's
//! allowed policy against the annotation carried by the thread expression.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confinement;
use crate::decl_effect;
use crate::lattice::{policy_leq, LatticeError, Level, Policy, Universe};
use crate::syntax::{
    context_policy, parse_program, parse_type, plug, split, Expr, Latent, ParseError, Split, Type,
};
use crate::typecheck_dnd::{self, DndJudgment, RefLabeling, TypeEnv, TypeError};

/// On-disk description of a network, with programs and types in concrete
/// syntax. `Network::from_spec` turns it into runnable form.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub universe: Vec<String>,
    pub domains: BTreeMap<String, PolicyText>,
    #[serde(default)]
    pub refs: BTreeMap<String, RefSpec>,
    #[serde(default)]
    pub threads: Vec<ThreadSpec>,
    #[serde(default)]
    pub gamma: BTreeMap<String, String>,
}

/// A policy in JSON form: a list of "p<q" pairs, or "bot" / "top".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PolicyText {
    Keyword(String),
    Pairs(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefSpec {
    pub level: Vec<String>,
    #[serde(rename = "type")]
    pub vtype: String,
    pub init: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadSpec {
    pub name: String,
    pub level: Vec<String>,
    pub domain: String,
    pub program: String,
}

/// The fixed part of a running system.
#[derive(Debug, Clone)]
pub struct Network {
    pub universe: Universe,
    /// Allowed policy of each domain.
    pub policies: BTreeMap<String, Policy>,
    pub gamma: TypeEnv,
}

/// The mutable part: threads, store, labelings, and the fresh-name counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    /// Thread name to current domain.
    pub tracker: BTreeMap<String, String>,
    pub pool: BTreeMap<String, Expr>,
    pub store: BTreeMap<String, Expr>,
    /// Reference name to (level, content type). Grows on allocation.
    pub sigma: RefLabeling,
    /// Thread name to level. Grows on spawn.
    pub upsilon: BTreeMap<String, Level>,
    pub fresh_counter: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Base,
    RuntimeCheck,
    Annotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum StepKind {
    Beta,
    CondTrue,
    CondFalse,
    Seq,
    Fix,
    FlowElim,
    Deref,
    Assign,
    RefCreate,
    AllowedTrue,
    AllowedFalse,
    Spawn,
    BlockedMigration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepLabel {
    pub thread: String,
    pub domain: String,
    /// Meet of the flow declarations the redex sits under.
    pub declared: Policy,
    pub kind: StepKind,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parse error in {what}: {err}")]
    Parse { what: String, err: ParseError },
    #[error("{what}: {err}")]
    Lattice { what: String, err: LatticeError },
    #[error("duplicate thread name `{0}`")]
    DuplicateThread(String),
    #[error("thread `{0}` is placed at unknown domain `{1}`")]
    UnknownDomain(String, String),
    #[error("name `{0}` contains `#`, which is reserved for fresh names")]
    ReservedName(String),
    #[error("initializer of `{0}` is not a value")]
    InitNotValue(String),
    #[error("unknown policy keyword `{0}`")]
    BadPolicyKeyword(String),
    #[error("malformed policy pair `{0}`, expected p<q")]
    BadPolicyPair(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("no thread named `{0}`")]
    UnknownThread(String),
    #[error("thread `{0}` is not tracked to any domain")]
    UntrackedThread(String),
    #[error("domain `{0}` has no allowed policy")]
    UnknownDomain(String),
    #[error("reference `{0}` is not in the store")]
    DanglingReference(String),
    #[error("thread `{0}` migrates without an annotation in annotated mode")]
    MissingAnnotation(String),
}

impl PolicyText {
    pub fn resolve(&self, uni: &Universe) -> Result<Policy, NetworkError> {
        match self {
            PolicyText::Keyword(k) if k == "bot" => Ok(Policy::bottom(uni)),
            PolicyText::Keyword(k) if k == "top" => Ok(Policy::top()),
            PolicyText::Keyword(k) => Err(NetworkError::BadPolicyKeyword(k.clone())),
            PolicyText::Pairs(pairs) => {
                let mut set = Vec::new();
                for p in pairs {
                    let Some((lo, hi)) = p.split_once('<') else {
                        return Err(NetworkError::BadPolicyPair(p.clone()));
                    };
                    set.push((lo.trim().to_owned(), hi.trim().to_owned()));
                }
                let pol = Policy::new(set.iter().map(|(a, b)| (a.as_str(), b.as_str())));
                uni.validate_policy(&pol).map_err(|err| NetworkError::Lattice {
                    what: "policy".into(),
                    err,
                })?;
                Ok(pol)
            }
        }
    }
}

/// Resolve a freshly parsed expression against a universe and a set of
/// known reference names: free variables naming a reference become store
/// locations, `bot` placeholders become the full relation, and every level
/// and policy literal is checked against the universe.
pub fn resolve_against(
    e: &Expr,
    uni: &Universe,
    is_ref: &dyn Fn(&str) -> bool,
) -> Result<Expr, LatticeError> {
    let mut bound = BTreeSet::new();
    resolve_expr(e, uni, is_ref, &mut bound)
}

fn resolve_policy(p: &Policy, uni: &Universe) -> Result<Policy, LatticeError> {
    if p.is_bottom_marker() {
        return Ok(Policy::bottom(uni));
    }
    uni.validate_policy(p)?;
    Ok(p.clone())
}

fn resolve_level(l: &Level, uni: &Universe) -> Result<Level, LatticeError> {
    uni.validate_level(l)?;
    Ok(l.clone())
}

fn resolve_latent(lat: &Latent, uni: &Universe) -> Result<Latent, LatticeError> {
    Ok(Latent {
        thread_level: lat.thread_level.as_ref().map(|l| resolve_level(l, uni)).transpose()?,
        context: lat.context.as_ref().map(|p| resolve_policy(p, uni)).transpose()?,
        effect: lat
            .effect
            .as_ref()
            .map(|s| {
                Ok(crate::lattice::Effect {
                    reading: resolve_level(&s.reading, uni)?,
                    writing: resolve_level(&s.writing, uni)?,
                    termination: resolve_level(&s.termination, uni)?,
                })
            })
            .transpose()?,
        allowed: lat.allowed.as_ref().map(|p| resolve_policy(p, uni)).transpose()?,
        decl: lat.decl.as_ref().map(|p| resolve_policy(p, uni)).transpose()?,
    })
}

pub fn resolve_type(t: &Type, uni: &Universe) -> Result<Type, LatticeError> {
    Ok(match t {
        Type::Unit => Type::Unit,
        Type::Bool => Type::Bool,
        Type::Ref(inner, l) => {
            Type::Ref(Box::new(resolve_type(inner, uni)?), resolve_level(l, uni)?)
        }
        Type::Arrow(p, r, lat) => Type::Arrow(
            Box::new(resolve_type(p, uni)?),
            Box::new(resolve_type(r, uni)?),
            resolve_latent(lat, uni)?,
        ),
    })
}

fn resolve_expr(
    e: &Expr,
    uni: &Universe,
    is_ref: &dyn Fn(&str) -> bool,
    bound: &mut BTreeSet<String>,
) -> Result<Expr, LatticeError> {
    Ok(match e {
        Expr::Unit | Expr::Bool(_) | Expr::Loc(_) => e.clone(),
        Expr::Var(x) => {
            if is_ref(x) && !bound.contains(x) {
                Expr::Loc(x.clone())
            } else {
                Expr::Var(x.clone())
            }
        }
        Expr::Abs(ab) => {
            let param = resolve_type(&ab.param, uni)?;
            let latent = resolve_latent(&ab.latent, uni)?;
            let fresh_binding = bound.insert(ab.var.clone());
            let body = resolve_expr(&ab.body, uni, is_ref, bound);
            if fresh_binding {
                bound.remove(&ab.var);
            }
            Expr::Abs(Box::new(crate::syntax::Abs {
                var: ab.var.clone(),
                param,
                latent,
                body: body?,
            }))
        }
        Expr::Fix(fx) => {
            let self_type = resolve_type(&fx.self_type, uni)?;
            let fresh_binding = bound.insert(fx.var.clone());
            let body = resolve_expr(&fx.body, uni, is_ref, bound);
            if fresh_binding {
                bound.remove(&fx.var);
            }
            Expr::Fix(Box::new(crate::syntax::Fix {
                var: fx.var.clone(),
                self_type,
                body: body?,
            }))
        }
        Expr::App(f, a) => Expr::App(
            Box::new(resolve_expr(f, uni, is_ref, bound)?),
            Box::new(resolve_expr(a, uni, is_ref, bound)?),
        ),
        Expr::Seq(a, b) => Expr::Seq(
            Box::new(resolve_expr(a, uni, is_ref, bound)?),
            Box::new(resolve_expr(b, uni, is_ref, bound)?),
        ),
        Expr::Deref(t) => Expr::Deref(Box::new(resolve_expr(t, uni, is_ref, bound)?)),
        Expr::Assign(t, v) => Expr::Assign(
            Box::new(resolve_expr(t, uni, is_ref, bound)?),
            Box::new(resolve_expr(v, uni, is_ref, bound)?),
        ),
        Expr::RefCreate { level, vtype, init } => Expr::RefCreate {
            level: resolve_level(level, uni)?,
            vtype: resolve_type(vtype, uni)?,
            init: Box::new(resolve_expr(init, uni, is_ref, bound)?),
        },
        Expr::Cond { guard, then_br, else_br } => Expr::Cond {
            guard: Box::new(resolve_expr(guard, uni, is_ref, bound)?),
            then_br: Box::new(resolve_expr(then_br, uni, is_ref, bound)?),
            else_br: Box::new(resolve_expr(else_br, uni, is_ref, bound)?),
        },
        Expr::Flow { policy, body } => Expr::Flow {
            policy: resolve_policy(policy, uni)?,
            body: Box::new(resolve_expr(body, uni, is_ref, bound)?),
        },
        Expr::Allowed { policy, then_br, else_br } => Expr::Allowed {
            policy: resolve_policy(policy, uni)?,
            then_br: Box::new(resolve_expr(then_br, uni, is_ref, bound)?),
            else_br: Box::new(resolve_expr(else_br, uni, is_ref, bound)?),
        },
        Expr::Thread { level, body, domain, annot } => Expr::Thread {
            level: resolve_level(level, uni)?,
            body: Box::new(resolve_expr(body, uni, is_ref, bound)?),
            domain: domain.clone(),
            annot: annot.as_ref().map(|p| resolve_policy(p, uni)).transpose()?,
        },
    })
}

impl Network {
    /// Build a network and its initial configuration from a spec, parsing
    /// and resolving every embedded program and type.
    pub fn from_spec(spec: &NetworkSpec) -> Result<(Network, Configuration), NetworkError> {
        let universe = Universe::new(spec.universe.iter().map(|s| s.as_str()));
        let lat = |what: &str| {
            let what = what.to_owned();
            move |err: LatticeError| NetworkError::Lattice { what: what.clone(), err }
        };

        let mut policies = BTreeMap::new();
        for (d, ptext) in &spec.domains {
            if d.contains('#') {
                return Err(NetworkError::ReservedName(d.clone()));
            }
            policies.insert(d.clone(), ptext.resolve(&universe)?);
        }

        let mut sigma = RefLabeling::new();
        let mut store = BTreeMap::new();
        let ref_names: BTreeSet<String> = spec.refs.keys().cloned().collect();
        let is_ref = |n: &str| ref_names.contains(n);
        for (name, rs) in &spec.refs {
            if name.contains('#') {
                return Err(NetworkError::ReservedName(name.clone()));
            }
            let level = Level::new(rs.level.iter().map(|s| s.as_str()));
            universe.validate_level(&level).map_err(lat(&format!("level of `{name}`")))?;
            let vtype = parse_type(&rs.vtype).map_err(|err| NetworkError::Parse {
                what: format!("type of `{name}`"),
                err,
            })?;
            let vtype = resolve_type(&vtype, &universe)
                .map_err(lat(&format!("type of `{name}`")))?;
            let init = parse_program(&rs.init).map_err(|err| NetworkError::Parse {
                what: format!("initializer of `{name}`"),
                err,
            })?;
            let init = resolve_against(&init, &universe, &is_ref)
                .map_err(lat(&format!("initializer of `{name}`")))?;
            if !init.is_value() {
                return Err(NetworkError::InitNotValue(name.clone()));
            }
            sigma.insert(name.clone(), (level, vtype));
            store.insert(name.clone(), init);
        }

        let mut gamma = TypeEnv::new();
        for (x, tsrc) in &spec.gamma {
            let t = parse_type(tsrc).map_err(|err| NetworkError::Parse {
                what: format!("type of `{x}`"),
                err,
            })?;
            gamma.insert(x.clone(), resolve_type(&t, &universe).map_err(lat(&format!("type of `{x}`")))?);
        }

        let mut tracker = BTreeMap::new();
        let mut pool = BTreeMap::new();
        let mut upsilon = BTreeMap::new();
        for th in &spec.threads {
            if th.name.contains('#') {
                return Err(NetworkError::ReservedName(th.name.clone()));
            }
            if pool.contains_key(&th.name) {
                return Err(NetworkError::DuplicateThread(th.name.clone()));
            }
            if !policies.contains_key(&th.domain) {
                return Err(NetworkError::UnknownDomain(th.name.clone(), th.domain.clone()));
            }
            let level = Level::new(th.level.iter().map(|s| s.as_str()));
            universe
                .validate_level(&level)
                .map_err(lat(&format!("level of thread `{}`", th.name)))?;
            let prog = parse_program(&th.program).map_err(|err| NetworkError::Parse {
                what: format!("program of thread `{}`", th.name),
                err,
            })?;
            let prog = resolve_against(&prog, &universe, &is_ref)
                .map_err(lat(&format!("program of thread `{}`", th.name)))?;
            tracker.insert(th.name.clone(), th.domain.clone());
            upsilon.insert(th.name.clone(), level);
            pool.insert(th.name.clone(), prog);
        }

        let net = Network { universe, policies, gamma };
        let cfg = Configuration {
            tracker,
            pool,
            store,
            sigma,
            upsilon,
            fresh_counter: 0,
        };
        Ok((net, cfg))
    }

    pub fn allowed(&self, domain: &str) -> Result<&Policy, SemanticsError> {
        self.policies
            .get(domain)
            .ok_or_else(|| SemanticsError::UnknownDomain(domain.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThreadStatus {
    /// Fully reduced to a value.
    Terminated,
    Runnable,
    /// A migration redex whose gate fails; this never unblocks.
    Blocked,
    Stuck(String),
}

fn spawn_gate(
    net: &Network,
    sigma: &RefLabeling,
    thread: &str,
    e: &Expr,
    mode: Mode,
) -> Result<bool, SemanticsError> {
    let Expr::Thread { body, domain: target, annot, .. } = e else {
        unreachable!("gate probed on a non-migration redex");
    };
    match mode {
        Mode::Base => Ok(true),
        Mode::RuntimeCheck => {
            let w = net.allowed(target)?;
            let r = confinement::typecheck_relaxed(
                &confinement::ConfJudgment {
                    universe: &net.universe,
                    env: &net.gamma,
                    allowed: w.clone(),
                    sigma,
                },
                body,
            );
            Ok(matches!(r, Ok(Type::Unit)))
        }
        Mode::Annotated => {
            let s = annot
                .as_ref()
                .ok_or_else(|| SemanticsError::MissingAnnotation(thread.to_owned()))?;
            let w = net.allowed(target)?;
            Ok(policy_leq(w, s))
        }
    }
}

pub fn thread_status(
    net: &Network,
    cfg: &Configuration,
    thread: &str,
    mode: Mode,
) -> Result<ThreadStatus, SemanticsError> {
    let e = cfg
        .pool
        .get(thread)
        .ok_or_else(|| SemanticsError::UnknownThread(thread.to_owned()))?;
    match split(e) {
        Split::Value => Ok(ThreadStatus::Terminated),
        Split::Stuck(_, _, why) => Ok(ThreadStatus::Stuck(why)),
        Split::Redex(_, r) => {
            if matches!(r, Expr::Thread { .. }) && !spawn_gate(net, &cfg.sigma, thread, &r, mode)? {
                Ok(ThreadStatus::Blocked)
            } else {
                Ok(ThreadStatus::Runnable)
            }
        }
    }
}

/// Step one thread. Returns `None` when the thread is a value or stuck. A
/// gated migration that fails its check yields a `blockedMigration` label
/// and leaves the configuration unchanged; such a thread never proceeds.
pub fn step_thread(
    net: &Network,
    cfg: &Configuration,
    thread: &str,
    mode: Mode,
) -> Result<Option<(Configuration, StepLabel)>, SemanticsError> {
    let e = cfg
        .pool
        .get(thread)
        .ok_or_else(|| SemanticsError::UnknownThread(thread.to_owned()))?;
    let domain = cfg
        .tracker
        .get(thread)
        .ok_or_else(|| SemanticsError::UntrackedThread(thread.to_owned()))?
        .clone();
    let (ctx, redex) = match split(e) {
        Split::Redex(c, r) => (c, r),
        _ => return Ok(None),
    };
    let declared = context_policy(&ctx);
    let label = |kind: StepKind| StepLabel {
        thread: thread.to_owned(),
        domain: domain.clone(),
        declared: declared.clone(),
        kind,
    };

    let mut next = cfg.clone();
    let (kind, result) = match redex {
        Expr::App(f, a) => {
            let Expr::Abs(ab) = *f else {
                unreachable!("application redex with a non-lambda head");
            };
            (StepKind::Beta, crate::syntax::subst(&ab.body, &ab.var, &a))
        }
        Expr::Fix(fx) => {
            let unfolding = Expr::Fix(fx.clone());
            (StepKind::Fix, crate::syntax::subst(&fx.body, &fx.var, &unfolding))
        }
        Expr::Seq(_, b) => (StepKind::Seq, *b),
        Expr::Cond { guard, then_br, else_br } => {
            let Expr::Bool(b) = *guard else {
                unreachable!("conditional redex with a non-boolean guard");
            };
            if b {
                (StepKind::CondTrue, *then_br)
            } else {
                (StepKind::CondFalse, *else_br)
            }
        }
        Expr::Flow { body, .. } => (StepKind::FlowElim, *body),
        Expr::Deref(t) => {
            let Expr::Loc(a) = *t else {
                unreachable!("dereference redex of a non-location");
            };
            let v = cfg
                .store
                .get(&a)
                .ok_or(SemanticsError::DanglingReference(a))?
                .clone();
            (StepKind::Deref, v)
        }
        Expr::Assign(t, v) => {
            let Expr::Loc(a) = *t else {
                unreachable!("assignment redex to a non-location");
            };
            if !cfg.store.contains_key(&a) {
                return Err(SemanticsError::DanglingReference(a));
            }
            next.store.insert(a, *v);
            (StepKind::Assign, Expr::Unit)
        }
        Expr::RefCreate { level, vtype, init } => {
            let name = format!("r#{}", next.fresh_counter);
            next.fresh_counter += 1;
            next.store.insert(name.clone(), *init);
            next.sigma.insert(name.clone(), (level, vtype));
            (StepKind::RefCreate, Expr::Loc(name))
        }
        Expr::Allowed { policy, then_br, else_br } => {
            let w = net.allowed(&domain)?;
            if policy_leq(w, &policy) {
                (StepKind::AllowedTrue, *then_br)
            } else {
                (StepKind::AllowedFalse, *else_br)
            }
        }
        e @ Expr::Thread { .. } => {
            if !spawn_gate(net, &cfg.sigma, thread, &e, mode)? {
                return Ok(Some((cfg.clone(), label(StepKind::BlockedMigration))));
            }
            let Expr::Thread { level, body, domain: target, .. } = e else {
                unreachable!();
            };
            let name = format!("t#{}", next.fresh_counter);
            next.fresh_counter += 1;
            next.pool.insert(name.clone(), *body);
            next.tracker.insert(name.clone(), target);
            next.upsilon.insert(name, level);
            (StepKind::Spawn, Expr::Unit)
        }
        other => unreachable!("non-redex {other:?} returned by split"),
    };
    next.pool.insert(thread.to_owned(), plug(&ctx, result));
    Ok(Some((next, label(kind))))
}

/// All one-step successors, one entry per runnable thread, in thread-name
/// order. Blocked migrations appear with their label and an unchanged
/// configuration; callers that only care about progress filter them out.
pub fn successors(
    net: &Network,
    cfg: &Configuration,
    mode: Mode,
) -> Result<Vec<(Configuration, StepLabel)>, SemanticsError> {
    let mut out = Vec::new();
    for name in cfg.pool.keys() {
        if let Some(step) = step_thread(net, cfg, name, mode)? {
            out.push(step);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    RoundRobin,
    FirstRunnable,
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "status")]
pub enum RunStatus {
    Terminated,
    Blocked,
    Stuck { thread: String, reason: String },
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: RunStatus,
    pub labels: Vec<StepLabel>,
    pub config: Configuration,
}

/// Drive a configuration until nothing can move or the step budget runs
/// out. Stuck wins over blocked in the final status; both only apply once
/// no thread can progress.
pub fn run(
    net: &Network,
    cfg: &Configuration,
    mode: Mode,
    sched: Scheduler,
    max_steps: u64,
) -> Result<RunReport, SemanticsError> {
    let mut cfg = cfg.clone();
    let mut labels = Vec::new();
    let mut rng = match sched {
        Scheduler::Seeded(seed) => Some(rand_chacha::ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut cursor: Option<String> = None;

    while (labels.len() as u64) < max_steps {
        let names: Vec<String> = cfg.pool.keys().cloned().collect();
        let mut runnable = Vec::new();
        for n in &names {
            if thread_status(net, &cfg, n, mode)? == ThreadStatus::Runnable {
                runnable.push(n.clone());
            }
        }
        if runnable.is_empty() {
            break;
        }
        let pick = match sched {
            Scheduler::FirstRunnable => runnable[0].clone(),
            Scheduler::Seeded(_) => {
                let rng = rng.as_mut().expect("seeded scheduler has a generator");
                runnable[rng.gen_range(0..runnable.len())].clone()
            }
            Scheduler::RoundRobin => {
                // Next runnable strictly after the previous pick, wrapping.
                match &cursor {
                    None => runnable[0].clone(),
                    Some(prev) => runnable
                        .iter()
                        .find(|n| n.as_str() > prev.as_str())
                        .unwrap_or(&runnable[0])
                        .clone(),
                }
            }
        };
        cursor = Some(pick.clone());
        let (next, lab) =
            step_thread(net, &cfg, &pick, mode)?.expect("runnable thread must step");
        debug_assert!(lab.kind != StepKind::BlockedMigration);
        cfg = next;
        labels.push(lab);
    }

    let mut stuck: Option<(String, String)> = None;
    let mut blocked = false;
    let mut all_done = true;
    for n in cfg.pool.keys() {
        match thread_status(net, &cfg, n, mode)? {
            ThreadStatus::Terminated => {}
            ThreadStatus::Blocked => {
                blocked = true;
                all_done = false;
            }
            ThreadStatus::Stuck(why) => {
                if stuck.is_none() {
                    stuck = Some((n.clone(), why));
                }
                all_done = false;
            }
            ThreadStatus::Runnable => {
                all_done = false;
            }
        }
    }
    let status = if let Some((thread, reason)) = stuck {
        RunStatus::Stuck { thread, reason }
    } else if blocked {
        RunStatus::Blocked
    } else if all_done {
        RunStatus::Terminated
    } else {
        RunStatus::BudgetExhausted
    };
    Ok(RunReport { status, labels, config: cfg })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WellFormedError {
    #[error("thread `{0}` mentions reference `{1}` outside the store")]
    PoolRef(String, String),
    #[error("thread `{0}` mentions unknown domain `{1}`")]
    PoolDomain(String, String),
    #[error("thread `{0}` is missing from the {1}")]
    ThreadUnlabeled(String, &'static str),
    #[error("store value at `{0}` mentions reference `{1}` outside the store")]
    StoreRef(String, String),
    #[error("store value at `{0}` mentions unknown domain `{1}`")]
    StoreDomain(String, String),
    #[error("store entry `{0}` is not a value")]
    StoreNonValue(String),
    #[error("store entry `{0}` has no level and type")]
    StoreUnlabeled(String),
    #[error("thread `{0}` sits at unknown domain `{1}`")]
    TrackerDomain(String, String),
}

/// Check the structural conditions a runnable configuration must satisfy:
/// every mentioned reference exists in the store, every mentioned domain
/// has an allowed policy, and both labelings cover everything.
pub fn well_formed(net: &Network, cfg: &Configuration) -> Result<(), WellFormedError> {
    for (name, e) in &cfg.pool {
        for r in e.ref_names() {
            if !cfg.store.contains_key(&r) {
                return Err(WellFormedError::PoolRef(name.clone(), r));
            }
        }
        for d in e.domain_names() {
            if !net.policies.contains_key(&d) {
                return Err(WellFormedError::PoolDomain(name.clone(), d));
            }
        }
        if !cfg.tracker.contains_key(name) {
            return Err(WellFormedError::ThreadUnlabeled(name.clone(), "tracker"));
        }
        if !cfg.upsilon.contains_key(name) {
            return Err(WellFormedError::ThreadUnlabeled(name.clone(), "thread labeling"));
        }
    }
    for (a, v) in &cfg.store {
        if !v.is_value() {
            return Err(WellFormedError::StoreNonValue(a.clone()));
        }
        if !cfg.sigma.contains_key(a) {
            return Err(WellFormedError::StoreUnlabeled(a.clone()));
        }
        for r in v.ref_names() {
            if !cfg.store.contains_key(&r) {
                return Err(WellFormedError::StoreRef(a.clone(), r));
            }
        }
        for d in v.domain_names() {
            if !net.policies.contains_key(&d) {
                return Err(WellFormedError::StoreDomain(a.clone(), d));
            }
        }
    }
    for (t, d) in &cfg.tracker {
        if !net.policies.contains_key(d) {
            return Err(WellFormedError::TrackerDomain(t.clone(), d.clone()));
        }
    }
    Ok(())
}

/// Which typing discipline store values are checked under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFlavor {
    /// Flow-sensitive types and effects, at bottom thread level and the
    /// empty policy; values get the same type under any parameters.
    FlowSensitive,
    /// Domain-confined typing with the allowed-policy map in scope.
    ConfinedStatic,
    /// Domain-confined typing that never consults the allowed policies.
    ConfinedRelaxed,
    /// Informative typing; values must carry the empty effect and their
    /// declared type.
    Informative,
}

/// Check every store value against its declared level and type under the
/// chosen discipline.
pub fn compatible_store(
    net: &Network,
    cfg: &Configuration,
    flavor: StoreFlavor,
) -> Result<(), TypeError> {
    for (a, v) in &cfg.store {
        let (_, want) = cfg
            .sigma
            .get(a)
            .ok_or_else(|| TypeError::new("Store", format!("`{a}` has no declared type")))?;
        let fail = |msg: String| TypeError::new("Store", msg);
        match flavor {
            StoreFlavor::FlowSensitive => {
                let j = DndJudgment {
                    universe: &net.universe,
                    env: &net.gamma,
                    thread_level: Level::bottom(&net.universe),
                    context: Policy::top(),
                    sigma: &cfg.sigma,
                };
                let (_, got) = typecheck_dnd::typecheck_dnd(&j, v)?;
                let want_v = typecheck_dnd::dnd_type_view(want)?;
                if got != want_v {
                    return Err(fail(format!("`{a}` holds a value of the wrong type")));
                }
            }
            StoreFlavor::ConfinedStatic | StoreFlavor::ConfinedRelaxed => {
                let judg = confinement::ConfJudgment {
                    universe: &net.universe,
                    env: &net.gamma,
                    allowed: Policy::top(),
                    sigma: &cfg.sigma,
                };
                let got = if flavor == StoreFlavor::ConfinedStatic {
                    confinement::typecheck_static(&net.policies, &judg, v)?
                } else {
                    confinement::typecheck_relaxed(&judg, v)?
                };
                let want_v = confinement::conf_type_view(want)?;
                if got != want_v {
                    return Err(fail(format!("`{a}` holds a value of the wrong type")));
                }
            }
            StoreFlavor::Informative => {
                let judg = decl_effect::InfJudgment {
                    universe: &net.universe,
                    env: &net.gamma,
                    sigma: &cfg.sigma,
                };
                let out = decl_effect::annotate(&judg, v)?;
                if out.effect != Policy::top() {
                    return Err(fail(format!("`{a}` holds a non-value effect")));
                }
                let want_v = decl_effect::decl_type_view(want)?;
                if out.vtype != want_v {
                    return Err(fail(format!("`{a}` holds a value of the wrong type")));
                }
            }
        }
    }
    Ok(())
}
