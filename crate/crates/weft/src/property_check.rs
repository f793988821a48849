//! Bounded checkers for the semantic security properties.
//!
//! Each checker plays a refutation game to a fixed depth. Stores are not
//! part of the game state: every round re-quantifies them from the finite
//! per-ref value spaces (booleans and units enumerate, everything else
//! keeps its current value). A pair survives a round when every move of
//! either side, from every store pair satisfying that move's low-equality
//! precondition, has a zero-or-one-step answer on the other side that
//! restores low-equality at the empty policy. Pairs already under
//! exploration, or beyond the depth budget, count as related, so a clean
//! result is only ever a bound, while every reported violation is real.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decl_effect::{annotate_store, InfJudgment};
use crate::lattice::{level_leq, policy_leq, Level, Policy};
use crate::semantics::{
    compatible_store, step_thread, Configuration, Mode, Network, SemanticsError, StepKind,
    StepLabel, StoreFlavor,
};
use crate::syntax::{pretty, Expr, Type};
use crate::typecheck_dnd::TypeError;

pub const DEFAULT_DEPTH: u32 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    /// Observation level the refutation was found at, when one applies.
    pub level: Option<Level>,
    /// Steps taken by each side up to the failing round.
    pub trace1: Vec<StepLabel>,
    pub trace2: Vec<StepLabel>,
    /// The move that could not be answered.
    pub label: StepLabel,
    pub reason: String,
    pub state1: String,
    pub state2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "camelCase")]
pub enum Verdict {
    Violation { witness: Box<Witness> },
    NoViolationUpTo { depth: u32 },
}

impl Verdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation { .. })
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("incompatible store: {0}")]
    Store(#[from] TypeError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("{0}")]
    BadInput(String),
}

/// The tracker-and-store part of a state, with its labelings.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub tracker: &'a BTreeMap<String, String>,
    pub store: &'a BTreeMap<String, Expr>,
    pub sigma: &'a crate::typecheck_dnd::RefLabeling,
    pub upsilon: &'a BTreeMap<String, Level>,
}

impl<'a> StateView<'a> {
    pub fn of(cfg: &'a Configuration) -> Self {
        StateView {
            tracker: &cfg.tracker,
            store: &cfg.store,
            sigma: &cfg.sigma,
            upsilon: &cfg.upsilon,
        }
    }
}

/// Agreement on everything visible at `l` under `f`: the low slices of the
/// two stores are equal as sets of pairs, and likewise the low slices of
/// the two trackers. Presence counts: a low name on one side only breaks
/// the equality.
pub fn low_eq(a: &StateView, b: &StateView, f: &Policy, l: &Level) -> bool {
    let low_store = |v: &StateView| -> BTreeMap<String, Expr> {
        v.store
            .iter()
            .filter(|(name, _)| {
                v.sigma
                    .get(*name)
                    .is_some_and(|(lev, _)| level_leq(lev, l, f))
            })
            .map(|(name, val)| (name.clone(), val.clone()))
            .collect()
    };
    let low_tracker = |v: &StateView| -> BTreeMap<String, String> {
        v.tracker
            .iter()
            .filter(|(name, _)| v.upsilon.get(*name).is_some_and(|lev| level_leq(lev, l, f)))
            .map(|(name, d)| (name.clone(), d.clone()))
            .collect()
    };
    low_store(a) == low_store(b) && low_tracker(a) == low_tracker(b)
}

/// All stores obtained by ranging boolean refs over both values and unit
/// refs over unit, keeping every other ref at its current value.
pub fn store_space(cfg: &Configuration) -> Vec<BTreeMap<String, Expr>> {
    let mut spaces: Vec<(String, Vec<Expr>)> = Vec::new();
    for (name, value) in &cfg.store {
        let vals = match cfg.sigma.get(name).map(|(_, t)| t) {
            Some(Type::Bool) => vec![Expr::Bool(false), Expr::Bool(true)],
            Some(Type::Unit) => vec![Expr::Unit],
            _ => vec![value.clone()],
        };
        spaces.push((name.clone(), vals));
    }
    let mut out = vec![BTreeMap::new()];
    for (name, vals) in spaces {
        let mut next = Vec::with_capacity(out.len() * vals.len());
        for partial in &out {
            for v in &vals {
                let mut s = partial.clone();
                s.insert(name.clone(), v.clone());
                next.push(s);
            }
        }
        out = next;
    }
    out
}

/// All total placements of the given threads over the network's domains.
pub fn tracker_space(
    threads: &BTreeSet<String>,
    net: &Network,
) -> Vec<BTreeMap<String, String>> {
    let domains: Vec<&String> = net.policies.keys().collect();
    let mut out = vec![BTreeMap::new()];
    for name in threads {
        let mut next = Vec::with_capacity(out.len() * domains.len());
        for partial in &out {
            for d in &domains {
                let mut t = partial.clone();
                t.insert(name.clone(), (*d).clone());
                next.push(t);
            }
        }
        out = next;
    }
    out
}

fn with_tracker(cfg: &Configuration, t: &BTreeMap<String, String>) -> Configuration {
    let mut c = cfg.clone();
    c.tracker = t.clone();
    c
}

fn with_store(cfg: &Configuration, s: &BTreeMap<String, Expr>) -> Configuration {
    let mut c = cfg.clone();
    c.store = s.clone();
    c
}

fn render_config(cfg: &Configuration) -> String {
    let pool: Vec<String> = cfg
        .pool
        .iter()
        .map(|(n, e)| format!("{n}@{}: {}", cfg.tracker.get(n).map_or("?", |d| d), pretty(e)))
        .collect();
    let store: Vec<String> = cfg
        .store
        .iter()
        .map(|(n, v)| format!("{n} = {}", pretty(v)))
        .collect();
    format!("[{}] {{{}}}", pool.join(" | "), store.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GameKind {
    /// Trackers evolve with the pair; pre-equality at the move's declared
    /// policy.
    Dnd,
    /// Trackers re-quantified each round; pre-equality at the declared
    /// policy.
    Ndn,
    /// Trackers evolve; pre-equality at the allowed policy of the move's
    /// source domain.
    Dni,
}

struct Game<'a> {
    net: &'a Network,
    kind: GameKind,
    level: Level,
}

/// Pairs on the current exploration path count as related, closing
/// cycles. Refuted pairs are cached absolutely: a refutation reached
/// under optimistic assumptions only ever under-reports the attacker. A
/// survival is cached, with the depth budget it survived, only when it
/// leaned on no pair above it on the path (lowlink bookkeeping); caching
/// one that did could mask a refutation once the assumption is withdrawn.
#[derive(Default)]
struct Search {
    stack: HashMap<(String, String), usize>,
    refuted: HashMap<(String, String), Witness>,
    survived: HashMap<(String, String), u32>,
}

/// Lowlink value for a subtree that used no path assumption.
const NO_DEP: usize = usize::MAX;

/// Store values that the next round will re-quantify anyway are excluded
/// from the memo key; for the pool-based game the tracker is too.
fn memo_key(kind: GameKind, cfg: &Configuration) -> String {
    let quantified: BTreeSet<&String> = cfg
        .sigma
        .iter()
        .filter(|(_, (_, t))| matches!(t, Type::Bool | Type::Unit))
        .map(|(n, _)| n)
        .collect();
    let fixed_store: BTreeMap<&String, &Expr> = cfg
        .store
        .iter()
        .filter(|(n, _)| !quantified.contains(n))
        .collect();
    let tracker = match kind {
        GameKind::Ndn => None,
        _ => Some(&cfg.tracker),
    };
    format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{}",
        cfg.pool, tracker, fixed_store, cfg.sigma, cfg.upsilon, cfg.fresh_counter
    )
}

impl Game<'_> {
    fn related(
        &self,
        c1: &Configuration,
        c2: &Configuration,
        depth: u32,
        search: &mut Search,
        tr1: &[StepLabel],
        tr2: &[StepLabel],
    ) -> Result<(Option<Witness>, usize), SemanticsError> {
        if depth == 0 {
            return Ok((None, NO_DEP));
        }
        let key = (memo_key(self.kind, c1), memo_key(self.kind, c2));
        if let Some(pos) = search.stack.get(&key) {
            return Ok((None, *pos));
        }
        if let Some(w) = search.refuted.get(&key) {
            return Ok((Some(w.clone()), NO_DEP));
        }
        if search.survived.get(&key).is_some_and(|d| *d >= depth) {
            return Ok((None, NO_DEP));
        }
        let pos = search.stack.len();
        search.stack.insert(key.clone(), pos);
        let (mut out, mut low) = self.attack(c1, c2, depth, search, tr1, tr2, false)?;
        if out.is_none() {
            let (o2, l2) = self.attack(c2, c1, depth, search, tr2, tr1, true)?;
            out = o2;
            low = low.min(l2);
        }
        search.stack.remove(&key);
        if let Some(w) = &out {
            search.refuted.insert(key, w.clone());
            return Ok((out, NO_DEP));
        }
        if low >= pos {
            let entry = search.survived.entry(key).or_insert(0);
            *entry = (*entry).max(depth);
            return Ok((None, NO_DEP));
        }
        Ok((None, low))
    }

    #[allow(clippy::too_many_arguments)]
    fn attack(
        &self,
        a0: &Configuration,
        d0: &Configuration,
        depth: u32,
        search: &mut Search,
        tra: &[StepLabel],
        trd: &[StepLabel],
        swapped: bool,
    ) -> Result<(Option<Witness>, usize), SemanticsError> {
        let tracker_pairs: Vec<(BTreeMap<String, String>, BTreeMap<String, String>)> =
            match self.kind {
                GameKind::Ndn => {
                    let ta = tracker_space(&a0.pool.keys().cloned().collect(), self.net);
                    let td = tracker_space(&d0.pool.keys().cloned().collect(), self.net);
                    ta.iter()
                        .flat_map(|x| td.iter().map(move |y| (x.clone(), y.clone())))
                        .collect()
                }
                _ => vec![(a0.tracker.clone(), d0.tracker.clone())],
            };
        let attacker_stores = store_space(a0);
        let defender_stores = store_space(d0);

        let mut low = NO_DEP;
        for (ta, td) in &tracker_pairs {
            for sa in &attacker_stores {
                for sd in &defender_stores {
                    let a = with_store(&with_tracker(a0, ta), sa);
                    let d = with_store(&with_tracker(d0, td), sd);
                    let names: Vec<String> = a.pool.keys().cloned().collect();
                    for m in &names {
                        let Some((a2, label)) = step_thread(self.net, &a, m, Mode::Base)? else {
                            continue;
                        };
                        debug_assert!(label.kind != StepKind::BlockedMigration);
                        let pre = match self.kind {
                            GameKind::Dni => self.net.allowed(&label.domain)?.clone(),
                            _ => label.declared.clone(),
                        };
                        if !low_eq(&StateView::of(&a), &StateView::of(&d), &pre, &self.level) {
                            continue;
                        }
                        let (w, l) = self.defend(
                            &a, &a2, &d, &label, depth, search, tra, trd, swapped,
                        )?;
                        if let Some(w) = w {
                            return Ok((Some(w), NO_DEP));
                        }
                        low = low.min(l);
                    }
                }
            }
        }
        Ok((None, low))
    }

    #[allow(clippy::too_many_arguments)]
    fn defend(
        &self,
        a: &Configuration,
        a2: &Configuration,
        d: &Configuration,
        label: &StepLabel,
        depth: u32,
        search: &mut Search,
        tra: &[StepLabel],
        trd: &[StepLabel],
        swapped: bool,
    ) -> Result<(Option<Witness>, usize), SemanticsError> {
        let mut candidates: Vec<(Configuration, Option<StepLabel>)> = vec![(d.clone(), None)];
        let names: Vec<String> = d.pool.keys().cloned().collect();
        for n in &names {
            if let Some((d2, lab)) = step_thread(self.net, d, n, Mode::Base)? {
                candidates.push((d2, Some(lab)));
            }
        }
        let top = Policy::top();
        let mut tra2: Vec<StepLabel> = tra.to_vec();
        tra2.push(label.clone());
        for (d2, lab) in candidates {
            if !low_eq(&StateView::of(a2), &StateView::of(&d2), &top, &self.level) {
                continue;
            }
            let mut trd2: Vec<StepLabel> = trd.to_vec();
            if let Some(l) = lab {
                trd2.push(l);
            }
            let (sub, l) = if swapped {
                self.related(&d2, a2, depth - 1, search, &trd2, &tra2)?
            } else {
                self.related(a2, &d2, depth - 1, search, &tra2, &trd2)?
            };
            if sub.is_none() {
                return Ok((None, l));
            }
        }
        let (t1, t2, s1, s2) = if swapped {
            (trd.to_vec(), tra2, render_config(d), render_config(a))
        } else {
            (tra2, trd.to_vec(), render_config(a), render_config(d))
        };
        Ok((
            Some(Witness {
                level: Some(self.level.clone()),
                trace1: t1,
                trace2: t2,
                label: label.clone(),
                reason: "no zero-or-one-step answer restores low-equality".to_owned(),
                state1: s1,
                state2: s2,
            }),
            NO_DEP,
        ))
    }
}

fn validate_store_space(
    net: &Network,
    cfg: &Configuration,
    flavor: StoreFlavor,
) -> Result<(), CheckError> {
    for s in store_space(cfg) {
        let c = with_store(cfg, &s);
        compatible_store(net, &c, flavor)?;
    }
    Ok(())
}

fn game_verdict(
    net: &Network,
    cfg: &Configuration,
    kind: GameKind,
    level: Option<&Level>,
    depth: u32,
) -> Result<Verdict, CheckError> {
    let flavor = StoreFlavor::FlowSensitive;
    validate_store_space(net, cfg, flavor)?;
    let levels: Vec<Level> = match level {
        Some(l) => vec![l.clone()],
        None => net.universe.all_levels(),
    };
    let results: Vec<Result<Option<Witness>, SemanticsError>> = levels
        .par_iter()
        .map(|l| {
            let game = Game { net, kind, level: l.clone() };
            let mut search = Search::default();
            let initial: Vec<(Configuration, Configuration)> = match kind {
                GameKind::Ndn => vec![(cfg.clone(), cfg.clone())],
                _ => {
                    let threads: BTreeSet<String> = cfg.pool.keys().cloned().collect();
                    let trackers = tracker_space(&threads, net);
                    let mut pairs = Vec::new();
                    for t1 in &trackers {
                        for t2 in &trackers {
                            let c1 = with_tracker(cfg, t1);
                            let c2 = with_tracker(cfg, t2);
                            let tracker_low_eq = {
                                let lt = |c: &Configuration| -> BTreeMap<String, String> {
                                    c.tracker
                                        .iter()
                                        .filter(|(n, _)| {
                                            c.upsilon
                                                .get(*n)
                                                .is_some_and(|lev| level_leq(lev, l, &Policy::top()))
                                        })
                                        .map(|(n, d)| (n.clone(), d.clone()))
                                        .collect()
                                };
                                lt(&c1) == lt(&c2)
                            };
                            if tracker_low_eq {
                                pairs.push((c1, c2));
                            }
                        }
                    }
                    pairs
                }
            };
            for (c1, c2) in initial {
                if let (Some(w), _) = game.related(&c1, &c2, depth, &mut search, &[], &[])? {
                    return Ok(Some(w));
                }
            }
            Ok(None)
        })
        .collect();
    for r in results {
        if let Some(w) = r? {
            return Ok(Verdict::Violation { witness: Box::new(w) });
        }
    }
    Ok(Verdict::NoViolationUpTo { depth })
}

/// The thread-configuration game: trackers travel with each side and the
/// store pair for a move must agree below the observation level under the
/// policy that the move's context declares.
pub fn check_dnd(
    net: &Network,
    cfg: &Configuration,
    level: Option<&Level>,
    depth: u32,
) -> Result<Verdict, CheckError> {
    game_verdict(net, cfg, GameKind::Dnd, level, depth)
}

/// The pool game: positions are not part of the state, so every round
/// ranges over all placements of both sides.
pub fn check_ndn(
    net: &Network,
    cfg: &Configuration,
    level: Option<&Level>,
    depth: u32,
) -> Result<Verdict, CheckError> {
    game_verdict(net, cfg, GameKind::Ndn, level, depth)
}

/// Like the thread-configuration game, but a move's store precondition is
/// judged under the allowed policy of its source domain rather than under
/// its declared policy.
pub fn check_dni(
    net: &Network,
    cfg: &Configuration,
    level: Option<&Level>,
    depth: u32,
) -> Result<Verdict, CheckError> {
    game_verdict(net, cfg, GameKind::Dni, level, depth)
}

/// Reachability check: from every placement and every enumerated store,
/// every step's declared policy must be allowed at its source domain.
pub fn check_fpc(
    net: &Network,
    cfg: &Configuration,
    mode: Mode,
    depth: u32,
) -> Result<Verdict, CheckError> {
    let flavor = match mode {
        Mode::Annotated => StoreFlavor::Informative,
        _ => StoreFlavor::ConfinedRelaxed,
    };
    validate_store_space(net, cfg, flavor)?;
    let threads: BTreeSet<String> = cfg.pool.keys().cloned().collect();
    let placements = tracker_space(&threads, net);
    let results: Vec<Result<Option<Witness>, SemanticsError>> = placements
        .par_iter()
        .map(|t0| {
            let c0 = with_tracker(cfg, t0);
            let mut visited = BTreeMap::new();
            confined(net, &c0, mode, depth, &mut visited, &[])
        })
        .collect();
    for r in results {
        if let Some(w) = r? {
            return Ok(Verdict::Violation { witness: Box::new(w) });
        }
    }
    Ok(Verdict::NoViolationUpTo { depth })
}

fn confined(
    net: &Network,
    cfg: &Configuration,
    mode: Mode,
    depth: u32,
    visited: &mut BTreeMap<String, u32>,
    trail: &[StepLabel],
) -> Result<Option<Witness>, SemanticsError> {
    if depth == 0 {
        return Ok(None);
    }
    let key = memo_key(GameKind::Dnd, cfg);
    if visited.get(&key).is_some_and(|d| *d >= depth) {
        return Ok(None);
    }
    visited.insert(key, depth);
    for s in store_space(cfg) {
        let c = with_store(cfg, &s);
        let names: Vec<String> = c.pool.keys().cloned().collect();
        for m in &names {
            let Some((c2, label)) = step_thread(net, &c, m, mode)? else {
                continue;
            };
            if label.kind == StepKind::BlockedMigration {
                continue;
            }
            let w = net.allowed(&label.domain)?;
            if !policy_leq(w, &label.declared) {
                let mut trace = trail.to_vec();
                trace.push(label.clone());
                return Ok(Some(Witness {
                    level: None,
                    trace1: trace,
                    trace2: Vec::new(),
                    label,
                    reason: format!(
                        "step declares a policy that domain `{}` does not allow",
                        c.tracker.get(m).map_or("?", |d| d)
                    ),
                    state1: render_config(&c),
                    state2: String::new(),
                }));
            }
            let mut trace = trail.to_vec();
            trace.push(label);
            if let Some(v) = confined(net, &c2, mode, depth - 1, visited, &trace)? {
                return Ok(Some(v));
            }
        }
    }
    Ok(None)
}

/// Every annotation-gated step of the annotated pool, from the annotated
/// image of an enumerated store, must be matched by an ungated step of the
/// plain pool with the same label, the same placements, and a store whose
/// annotated image is the annotated side's store.
pub fn check_simulation(
    net: &Network,
    plain: &Configuration,
    annotated_pool: &BTreeMap<String, Expr>,
    depth: u32,
) -> Result<Verdict, CheckError> {
    if plain.pool.keys().ne(annotated_pool.keys()) {
        return Err(CheckError::BadInput(
            "plain and annotated pools name different threads".to_owned(),
        ));
    }
    let threads: BTreeSet<String> = plain.pool.keys().cloned().collect();
    let placements = tracker_space(&threads, net);
    let results: Vec<Result<Option<Witness>, CheckError>> = placements
        .par_iter()
        .map(|t0| {
            let p0 = with_tracker(plain, t0);
            let mut n0 = p0.clone();
            n0.pool = annotated_pool.clone();
            let mut search = Search::default();
            simulated(net, &p0, &n0, depth, &mut search, &[]).map(|(w, _)| w)
        })
        .collect();
    for r in results {
        if let Some(w) = r? {
            return Ok(Verdict::Violation { witness: Box::new(w) });
        }
    }
    Ok(Verdict::NoViolationUpTo { depth })
}

fn annotated_image(
    net: &Network,
    cfg: &Configuration,
) -> Result<BTreeMap<String, Expr>, TypeError> {
    let j = InfJudgment {
        universe: &net.universe,
        env: &net.gamma,
        sigma: &cfg.sigma,
    };
    annotate_store(&j, &cfg.store)
}

fn simulated(
    net: &Network,
    plain: &Configuration,
    annot: &Configuration,
    depth: u32,
    search: &mut Search,
    trail: &[StepLabel],
) -> Result<(Option<Witness>, usize), CheckError> {
    if depth == 0 {
        return Ok((None, NO_DEP));
    }
    let key = (memo_key(GameKind::Dnd, plain), memo_key(GameKind::Dnd, annot));
    if let Some(pos) = search.stack.get(&key) {
        return Ok((None, *pos));
    }
    if let Some(w) = search.refuted.get(&key) {
        return Ok((Some(w.clone()), NO_DEP));
    }
    if search.survived.get(&key).is_some_and(|d| *d >= depth) {
        return Ok((None, NO_DEP));
    }
    let pos = search.stack.len();
    search.stack.insert(key.clone(), pos);
    let (out, low) = simulated_rounds(net, plain, annot, depth, search, trail)?;
    search.stack.remove(&key);
    if let Some(w) = &out {
        search.refuted.insert(key, w.clone());
        return Ok((out, NO_DEP));
    }
    if low >= pos {
        let entry = search.survived.entry(key).or_insert(0);
        *entry = (*entry).max(depth);
        return Ok((None, NO_DEP));
    }
    Ok((None, low))
}

fn simulated_rounds(
    net: &Network,
    plain: &Configuration,
    annot: &Configuration,
    depth: u32,
    search: &mut Search,
    trail: &[StepLabel],
) -> Result<(Option<Witness>, usize), CheckError> {
    let mut low = NO_DEP;
    for s in store_space(plain) {
        let p = with_store(plain, &s);
        let s_hat = annotated_image(net, &p)?;
        let n = with_store(annot, &s_hat);
        let names: Vec<String> = n.pool.keys().cloned().collect();
        for m in &names {
            let Some((n2, label)) = step_thread(net, &n, m, Mode::Annotated)? else {
                continue;
            };
            if label.kind == StepKind::BlockedMigration {
                continue;
            }
            let mut answered = false;
            let plain_names: Vec<String> = p.pool.keys().cloned().collect();
            for cand in &plain_names {
                let Some((p2, plab)) = step_thread(net, &p, cand, Mode::Base)? else {
                    continue;
                };
                if plab != label || p2.tracker != n2.tracker {
                    continue;
                }
                if annotated_image(net, &p2)? != n2.store {
                    continue;
                }
                let mut trace = trail.to_vec();
                trace.push(label.clone());
                let (sub, l) = simulated(net, &p2, &n2, depth - 1, search, &trace)?;
                if sub.is_none() {
                    answered = true;
                    low = low.min(l);
                    break;
                }
            }
            if !answered {
                let mut trace = trail.to_vec();
                trace.push(label.clone());
                return Ok((
                    Some(Witness {
                        level: None,
                        trace1: Vec::new(),
                        trace2: trace,
                        label,
                        reason: "no ungated step matches the annotation-gated step".to_owned(),
                        state1: render_config(&p),
                        state2: render_config(&n),
                    }),
                    NO_DEP,
                ));
            }
        }
    }
    Ok((None, low))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TheoremReport {
    pub pools: usize,
    /// Pools passing both premise checks, hence owing the conclusion.
    pub obligations: usize,
    pub failures: Vec<String>,
}

impl TheoremReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Wherever both the thread-configuration game and the confinement check
/// come back clean, the domain-relative game must too.
pub fn check_theorem_combination(
    corpus: &[(Network, Configuration)],
    depth: u32,
) -> Result<TheoremReport, CheckError> {
    let mut report = TheoremReport::default();
    for (i, (net, cfg)) in corpus.iter().enumerate() {
        report.pools += 1;
        let dnd = check_dnd(net, cfg, None, depth)?;
        let fpc = check_fpc(net, cfg, Mode::Base, depth)?;
        if dnd.is_violation() || fpc.is_violation() {
            continue;
        }
        report.obligations += 1;
        let dni = check_dni(net, cfg, None, depth)?;
        if let Verdict::Violation { witness } = dni {
            report.failures.push(format!(
                "pool #{i}: both premises clean but the domain-relative game fails: {}",
                witness.reason
            ));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{Network, NetworkSpec};

    fn load(json: &str) -> (Network, Configuration) {
        let spec: NetworkSpec = serde_json::from_str(json).unwrap();
        Network::from_spec(&spec).unwrap()
    }

    fn two_domain(program: &str, w1: &str, w2: &str) -> (Network, Configuration) {
        load(&serde_json::json!({
            "universe": ["H", "L"],
            "domains": {"d1": if w1 == "top" { vec![] } else { vec![w1] },
                        "d2": if w2 == "top" { vec![] } else { vec![w2] }},
            "refs": {
                "a": {"level": ["H"], "type": "bool", "init": "false"},
                "b": {"level": ["H", "L"], "type": "bool", "init": "false"}
            },
            "threads": [
                {"name": "t", "level": ["H"], "domain": "d1", "program": program}
            ]
        })
        .to_string())
    }

    #[test]
    fn low_equality_frozen_examples() {
        let (_, cfg) = two_domain("()", "H<L", "top");
        let v = StateView::of(&cfg);
        assert!(low_eq(&v, &v, &Policy::top(), &Level::top()));
        // A store differing only at the high ref is low-equal at the low
        // observation level, but not once the policy lets H flow to L.
        let mut other = cfg.clone();
        other.store.insert("a".into(), Expr::Bool(true));
        let w = StateView::of(&other);
        let low = Level::new(["H", "L"]);
        assert!(low_eq(&v, &w, &Policy::top(), &low));
        assert!(!low_eq(&v, &w, &Policy::new([("H", "L")]), &low));
        // Trackers must agree on visible threads. The empty level is the
        // most privileged observer, so the moved thread shows up there;
        // at the full-universe level it is out of sight.
        let mut moved = cfg.clone();
        moved.tracker.insert("t".into(), "d2".into());
        let m = StateView::of(&moved);
        assert!(!low_eq(&v, &m, &Policy::top(), &Level::new(["H"])));
        assert!(!low_eq(&v, &m, &Policy::top(), &Level::top()));
        assert!(low_eq(&v, &m, &Policy::top(), &Level::new(["H", "L"])));
    }

    #[test]
    fn value_pools_pass_every_game() {
        let (net, cfg) = two_domain("()", "H<L", "top");
        assert!(!check_dnd(&net, &cfg, None, 6).unwrap().is_violation());
        assert!(!check_ndn(&net, &cfg, None, 6).unwrap().is_violation());
        assert!(!check_dni(&net, &cfg, None, 6).unwrap().is_violation());
        assert!(!check_fpc(&net, &cfg, Mode::Base, 6).unwrap().is_violation());
    }

    #[test]
    fn direct_leak_violates_the_thread_game() {
        let (net, cfg) = two_domain("b := !a", "H<L", "top");
        let v = check_dnd(&net, &cfg, None, 8).unwrap();
        assert!(v.is_violation(), "{v:?}");
        // The strategy root is the read of the high ref: once the two
        // stores diverge there, no answer survives the later assignment.
        let Verdict::Violation { witness } = v else { unreachable!() };
        assert_eq!(witness.label.kind, StepKind::Deref);
    }

    #[test]
    fn declaring_the_flow_does_not_help_without_allowance_checks() {
        // The declared policy relaxes the precondition, so the pair of
        // stores feeding the assignment must already agree on the target.
        let (net, cfg) = two_domain("flow {H<L} in b := !a", "H<L", "top");
        let v = check_dnd(&net, &cfg, None, 8).unwrap();
        assert!(!v.is_violation(), "{v:?}");
    }

    #[test]
    fn allowance_test_gates_the_thread_game_but_not_the_pool_game() {
        let src = "allowed {H<L} then () else b := !a";
        let prog = format!("thread<{{H}}> ({src}) at d1");
        let (net, cfg) = two_domain(&prog, "H<L", "top");
        let v = check_dnd(&net, &cfg, None, 8).unwrap();
        assert!(!v.is_violation(), "{v:#?}");
        assert!(check_ndn(&net, &cfg, None, 8).unwrap().is_violation());
    }

    #[test]
    fn confinement_check_reads_the_declared_policy() {
        let (net, cfg) = two_domain("flow top in b := !a", "H<L", "top");
        assert!(!check_fpc(&net, &cfg, Mode::Base, 8).unwrap().is_violation());
        let (net2, cfg2) = two_domain("flow bot in b := !a", "H<L", "top");
        let v = check_fpc(&net2, &cfg2, Mode::Base, 8).unwrap();
        let Verdict::Violation { witness } = v else {
            panic!("expected a violation");
        };
        assert_eq!(witness.label.declared, Policy::bottom(&net2.universe));
    }

    #[test]
    fn simulation_holds_for_annotated_images() {
        let src = "thread<{H}> (flow {H<L} in b := !a) at d2";
        let (net, cfg) = two_domain(src, "H<L", "H<L");
        let env = crate::typecheck_dnd::TypeEnv::new();
        let j = InfJudgment { universe: &net.universe, env: &env, sigma: &cfg.sigma };
        let annotated: BTreeMap<String, Expr> = cfg
            .pool
            .iter()
            .map(|(n, e)| (n.clone(), crate::decl_effect::annotate(&j, e).unwrap().annotated))
            .collect();
        let v = check_simulation(&net, &cfg, &annotated, 10).unwrap();
        assert!(!v.is_violation(), "{v:?}");
    }

    #[test]
    fn verdicts_replay_deterministically() {
        let (net, cfg) = two_domain("b := !a", "H<L", "top");
        let v1 = check_dnd(&net, &cfg, None, 8).unwrap();
        let v2 = check_dnd(&net, &cfg, None, 8).unwrap();
        assert_eq!(v1, v2);
    }
}
