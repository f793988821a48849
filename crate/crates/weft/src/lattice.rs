//! Security levels, flow policies, and the lattice operations over them.
//!
//! A level is the set of principals allowed to read a piece of data, so the
//! order is reverse inclusion: the more readers, the lower the level. A flow
//! policy is a binary relation on principals; a pair (p, q) grants flows from
//! data readable by p to data readable by q. Policies relax the level order
//! through the upward closure of a level under the policy's reflexive
//! transitive closure.
//!
//! Policies are stored non-closed so that union and difference stay literal
//! pair-set operations; closures are computed on demand and memoized per
//! (policy, universe).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Mutex;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("principal `{0}` is not in the declared universe")]
    UnknownPrincipal(String),
}

/// Finite universe of principals, fixed per network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Universe(BTreeSet<String>);

impl Universe {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Universe(names.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, p: &str) -> bool {
        self.0.contains(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate_level(&self, l: &Level) -> Result<(), LatticeError> {
        match l.iter().find(|p| !self.contains(p)) {
            Some(p) => Err(LatticeError::UnknownPrincipal(p.to_owned())),
            None => Ok(()),
        }
    }

    pub fn validate_policy(&self, f: &Policy) -> Result<(), LatticeError> {
        for (p, q) in f.iter() {
            if !self.contains(p) {
                return Err(LatticeError::UnknownPrincipal(p.to_owned()));
            }
            if !self.contains(q) {
                return Err(LatticeError::UnknownPrincipal(q.to_owned()));
            }
        }
        Ok(())
    }

    /// All levels over this universe, i.e. every subset of the principals.
    /// Intended for exhaustive sweeps on small universes.
    pub fn all_levels(&self) -> Vec<Level> {
        let names: Vec<&str> = self.iter().collect();
        let mut out = Vec::with_capacity(1 << names.len());
        for mask in 0u32..(1 << names.len()) {
            let members = names
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, n)| *n);
            out.push(Level::new(members));
        }
        out
    }

    /// All ordered pairs of principals, i.e. the candidate edges of a policy.
    pub fn all_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for p in self.iter() {
            for q in self.iter() {
                out.push((p.to_owned(), q.to_owned()));
            }
        }
        out
    }
}

impl From<Vec<String>> for Universe {
    fn from(v: Vec<String>) -> Self {
        Universe(v.into_iter().collect())
    }
}

impl From<Universe> for Vec<String> {
    fn from(u: Universe) -> Self {
        u.0.into_iter().collect()
    }
}

/// Confidentiality label: the set of principals allowed to read.
///
/// Top is the empty set (nobody may read), bottom is the whole universe.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Level(BTreeSet<String>);

impl Level {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Level(names.into_iter().map(Into::into).collect())
    }

    /// The empty level, readable by nobody.
    pub fn top() -> Self {
        Level(BTreeSet::new())
    }

    /// The level readable by every principal of the universe.
    pub fn bottom(universe: &Universe) -> Self {
        Level(universe.0.clone())
    }

    pub fn contains(&self, p: &str) -> bool {
        self.0.contains(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_superset(&self, other: &Level) -> bool {
        self.0.is_superset(&other.0)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

impl From<Vec<String>> for Level {
    fn from(v: Vec<String>) -> Self {
        Level(v.into_iter().collect())
    }
}

impl From<Level> for Vec<String> {
    fn from(l: Level) -> Self {
        l.0.into_iter().collect()
    }
}

/// Flow policy: a finite relation on principals. A pair (p, q) permits
/// flows from p-readable data toward q.
///
/// Top is the empty relation (least permissive), bottom is the full
/// relation on the universe (most permissive).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Policy(BTreeSet<(String, String)>);

impl Policy {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Policy(pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect())
    }

    /// The empty policy, permitting no extra flows.
    pub fn top() -> Self {
        Policy(BTreeSet::new())
    }

    /// The full relation on the universe, permitting every flow.
    pub fn bottom(universe: &Universe) -> Self {
        Policy(universe.all_pairs().into_iter().collect())
    }

    /// Placeholder produced by the parser for the `bot` keyword; stands for
    /// the full relation once a universe is known. The `*` token cannot be
    /// written as a principal name, so no real policy collides with it.
    pub fn bottom_marker() -> Self {
        Policy::new([("*", "*")])
    }

    pub fn is_bottom_marker(&self) -> bool {
        self.0.len() == 1 && self.contains("*", "*")
    }

    /// Replace a `bot` marker by the full relation on the universe.
    pub fn resolve_bottom(&self, universe: &Universe) -> Policy {
        if self.is_bottom_marker() {
            Policy::bottom(universe)
        } else {
            self.clone()
        }
    }

    pub fn contains(&self, p: &str, q: &str) -> bool {
        self.0.contains(&(p.to_owned(), q.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Principals reachable from `p` by following policy edges, `p` included.
    fn reach(&self, p: &str) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut work = vec![p.to_owned()];
        while let Some(cur) = work.pop() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            for (a, b) in &self.0 {
                if *a == cur && !seen.contains(b) {
                    work.push(b.clone());
                }
            }
        }
        seen
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (p, q)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}<{q}")?;
        }
        write!(f, "}}")
    }
}

impl TryFrom<Vec<String>> for Policy {
    type Error = String;

    fn try_from(v: Vec<String>) -> Result<Self, String> {
        let mut pairs = BTreeSet::new();
        for s in v {
            let (p, q) = s
                .split_once('<')
                .ok_or_else(|| format!("policy pair `{s}` is not of the form p<q"))?;
            pairs.insert((p.trim().to_owned(), q.trim().to_owned()));
        }
        Ok(Policy(pairs))
    }
}

impl From<Policy> for Vec<String> {
    fn from(f: Policy) -> Self {
        f.0.into_iter().map(|(p, q)| format!("{p}<{q}")).collect()
    }
}

static CLOSURE_CACHE: Lazy<Mutex<HashMap<(Policy, Universe), Policy>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Reflexive transitive closure of a policy over the given universe.
pub fn rt_closure(f: &Policy, universe: &Universe) -> Result<Policy, LatticeError> {
    universe.validate_policy(f)?;
    let key = (f.clone(), universe.clone());
    if let Some(hit) = CLOSURE_CACHE.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }

    let names: Vec<&str> = universe.iter().collect();
    let idx: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let n = names.len();
    let mut m = vec![false; n * n];
    for i in 0..n {
        m[i * n + i] = true;
    }
    for (p, q) in f.iter() {
        m[idx[p] * n + idx[q]] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if m[i * n + k] {
                for j in 0..n {
                    if m[k * n + j] {
                        m[i * n + j] = true;
                    }
                }
            }
        }
    }

    let mut pairs = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if m[i * n + j] {
                pairs.insert((names[i].to_owned(), names[j].to_owned()));
            }
        }
    }
    let closed = Policy(pairs);
    CLOSURE_CACHE.lock().unwrap().insert(key, closed.clone());
    Ok(closed)
}

/// Principals that may learn data at level `l` under policy `f`:
/// everything reachable from a member of `l` through `f`, members included.
pub fn upward_closure(f: &Policy, l: &Level) -> Level {
    let mut out = BTreeSet::new();
    for p in l.iter() {
        out.extend(f.reach(p));
    }
    Level(out)
}

/// Level order relaxed by a policy: `l1` is below `l2` when every reader
/// of `l2` is already reachable from some reader of `l1`.
pub fn level_leq(l1: &Level, l2: &Level, f: &Policy) -> bool {
    upward_closure(f, l1).is_superset(&upward_closure(f, l2))
}

/// Level meet is plain union in this instance, for every policy.
pub fn level_meet(l1: &Level, l2: &Level) -> Level {
    Level(l1.0.union(&l2.0).cloned().collect())
}

/// Level join: intersection of the upward closures.
pub fn level_join(l1: &Level, l2: &Level, f: &Policy) -> Level {
    let a = upward_closure(f, l1);
    let b = upward_closure(f, l2);
    Level(a.0.intersection(&b.0).cloned().collect())
}

/// Permissiveness order on policies: `f2` grants nothing beyond what `f1`
/// already grants transitively.
pub fn policy_leq(f1: &Policy, f2: &Policy) -> bool {
    f2.iter().all(|(p, q)| p == q || f1.reach(p).contains(q))
}

/// Meet of policies is pair-set union: both sets of flows granted.
pub fn policy_meet(f1: &Policy, f2: &Policy) -> Policy {
    Policy(f1.0.union(&f2.0).cloned().collect())
}

/// Join of policies: intersection of the closures, the flows both grant.
pub fn policy_join(f1: &Policy, f2: &Policy, universe: &Universe) -> Result<Policy, LatticeError> {
    let a = rt_closure(f1, universe)?;
    let b = rt_closure(f2, universe)?;
    Ok(Policy(a.0.intersection(&b.0).cloned().collect()))
}

/// Pseudo-subtraction: literal pair-set difference, no closure taken first.
pub fn policy_subtract(f1: &Policy, f2: &Policy) -> Policy {
    Policy(f1.0.difference(&f2.0).cloned().collect())
}

/// Effect triple of the flow-sensitive type system: an upper bound on the
/// levels read, a lower bound on the levels written, and an upper bound on
/// the levels controlling termination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Effect {
    pub reading: Level,
    pub writing: Level,
    pub termination: Level,
}

impl Effect {
    /// Least effect: reads and terminates at the lowest level, writes
    /// nowhere observable. This is the effect of every value.
    pub fn bottom(universe: &Universe) -> Self {
        Effect {
            reading: Level::bottom(universe),
            writing: Level::top(),
            termination: Level::bottom(universe),
        }
    }

    /// Greatest effect.
    pub fn top(universe: &Universe) -> Self {
        Effect {
            reading: Level::top(),
            writing: Level::bottom(universe),
            termination: Level::top(),
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.reading, self.writing, self.termination)
    }
}

/// Effect join at the base lattice: reading and termination join
/// covariantly (intersection), writing meets contravariantly (union).
pub fn effect_join(s1: &Effect, s2: &Effect) -> Effect {
    Effect {
        reading: level_join(&s1.reading, &s2.reading, &Policy::top()),
        writing: level_meet(&s1.writing, &s2.writing),
        termination: level_join(&s1.termination, &s2.termination, &Policy::top()),
    }
}

/// Effect order relative to a policy, writing compared contravariantly.
pub fn effect_leq(s1: &Effect, s2: &Effect, f: &Policy) -> bool {
    level_leq(&s1.reading, &s2.reading, f)
        && level_leq(&s2.writing, &s1.writing, f)
        && level_leq(&s1.termination, &s2.termination, f)
}
