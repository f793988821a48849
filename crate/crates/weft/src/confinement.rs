//! Confinement checking.
//!
//! A judgment here carries an allowed policy A and asks whether a program
//! only ever declares flows that A permits. Ref levels play no part:
//! reference types compare with their level erased. The two modes differ
//! in exactly one rule: migration bodies are re-checked against the target
//! domain's allowed policy in static mode, and against the full relation
//! in relaxed mode, which makes the relaxed checker independent of any
//! knowledge about the rest of the network.

use std::collections::BTreeMap;

use crate::lattice::{policy_leq, policy_meet, Level, Policy, Universe};
use crate::syntax::{Expr, Latent, Type};
use crate::typecheck_dnd::{RefLabeling, TypeEnv, TypeError};

/// Judgment parameters: Γ, A, and Σ (only the content types are used).
#[derive(Debug, Clone)]
pub struct ConfJudgment<'a> {
    pub universe: &'a Universe,
    pub env: &'a TypeEnv,
    pub allowed: Policy,
    pub sigma: &'a RefLabeling,
}

/// Static mode carries the allowed policies of every domain; relaxed mode
/// cannot be handed any.
#[derive(Debug, Clone, Copy)]
pub enum ConfMode<'w> {
    Static(&'w BTreeMap<String, Policy>),
    Relaxed,
}

pub fn typecheck_confine(
    j: &ConfJudgment,
    m: &Expr,
    mode: ConfMode,
) -> Result<Type, TypeError> {
    let mut env = j.env.clone();
    check(&mode, j.universe, &mut env, j.sigma, &j.allowed, m)
}

pub fn typecheck_static(
    world: &BTreeMap<String, Policy>,
    j: &ConfJudgment,
    m: &Expr,
) -> Result<Type, TypeError> {
    typecheck_confine(j, m, ConfMode::Static(world))
}

pub fn typecheck_relaxed(j: &ConfJudgment, m: &Expr) -> Result<Type, TypeError> {
    typecheck_confine(j, m, ConfMode::Relaxed)
}

/// Canonical form for comparisons in this system: ref levels erased,
/// arrows keeping only their latent allowed policy, which must be present.
pub fn conf_type_view(t: &Type) -> Result<Type, TypeError> {
    match t {
        Type::Unit => Ok(Type::Unit),
        Type::Bool => Ok(Type::Bool),
        Type::Ref(inner, _) => Ok(Type::Ref(Box::new(conf_type_view(inner)?), Level::top())),
        Type::Arrow(p, r, lat) => {
            let Some(a) = &lat.allowed else {
                return Err(TypeError::new(
                    "Arrow",
                    "arrow annotation is missing a latent A field",
                ));
            };
            Ok(Type::Arrow(
                Box::new(conf_type_view(p)?),
                Box::new(conf_type_view(r)?),
                Latent {
                    thread_level: None,
                    context: None,
                    effect: None,
                    allowed: Some(a.clone()),
                    decl: None,
                },
            ))
        }
    }
}

fn check(
    mode: &ConfMode,
    uni: &Universe,
    env: &mut TypeEnv,
    sigma: &RefLabeling,
    a: &Policy,
    e: &Expr,
) -> Result<Type, TypeError> {
    match e {
        Expr::Unit => Ok(Type::Unit),
        Expr::Bool(_) => Ok(Type::Bool),
        Expr::Var(x) => match env.get(x) {
            Some(t) => conf_type_view(t),
            None => Err(TypeError::new("Var", format!("unbound variable `{x}`"))),
        },
        Expr::Loc(r) => match sigma.get(r) {
            Some((_, t)) => Ok(Type::Ref(Box::new(conf_type_view(t)?), Level::top())),
            None => Err(TypeError::new("Loc", format!("unknown reference `{r}`"))),
        },
        Expr::Abs(ab) => {
            let param = conf_type_view(&ab.param).map_err(|e| e.under("param"))?;
            let lat_a = ab.latent.allowed.clone().unwrap_or_else(|| a.clone());
            let shadowed = env.insert(ab.var.clone(), param.clone());
            let res = check(mode, uni, env, sigma, &lat_a, &ab.body);
            restore(env, &ab.var, shadowed);
            let body_ty = res.map_err(|e| e.under("body"))?;
            Ok(Type::Arrow(
                Box::new(param),
                Box::new(body_ty),
                Latent {
                    thread_level: None,
                    context: None,
                    effect: None,
                    allowed: Some(lat_a),
                    decl: None,
                },
            ))
        }
        Expr::Fix(fx) => {
            let self_ty = conf_type_view(&fx.self_type).map_err(|e| e.under("selfType"))?;
            let shadowed = env.insert(fx.var.clone(), self_ty.clone());
            let res = check(mode, uni, env, sigma, a, &fx.body);
            restore(env, &fx.var, shadowed);
            let got = res.map_err(|e| e.under("body"))?;
            if got != self_ty {
                return Err(TypeError::new(
                    "Rec",
                    "fix body type differs from its annotation",
                ));
            }
            Ok(self_ty)
        }
        Expr::App(f, arg) => {
            let fun_ty = check(mode, uni, env, sigma, a, f).map_err(|e| e.under("fn"))?;
            let arg_ty = check(mode, uni, env, sigma, a, arg).map_err(|e| e.under("arg"))?;
            let Type::Arrow(param, result, lat) = fun_ty else {
                return Err(TypeError::new("App", "applied expression is not a function"));
            };
            if lat.allowed.as_ref() != Some(a) {
                return Err(TypeError::new(
                    "App",
                    "latent A of the applied function differs from the judgment policy",
                ));
            }
            if *param != arg_ty {
                return Err(TypeError::new(
                    "App",
                    "argument type differs from the parameter annotation",
                ));
            }
            Ok(*result)
        }
        Expr::Seq(x, y) => {
            check(mode, uni, env, sigma, a, x).map_err(|e| e.under("first"))?;
            check(mode, uni, env, sigma, a, y).map_err(|e| e.under("second"))
        }
        Expr::Deref(t) => {
            let ty = check(mode, uni, env, sigma, a, t).map_err(|e| e.under("target"))?;
            let Type::Ref(inner, _) = ty else {
                return Err(TypeError::new("Der", "dereference of a non-reference"));
            };
            Ok(*inner)
        }
        Expr::Assign(t, v) => {
            let ty = check(mode, uni, env, sigma, a, t).map_err(|e| e.under("target"))?;
            let vty = check(mode, uni, env, sigma, a, v).map_err(|e| e.under("value"))?;
            let Type::Ref(inner, _) = ty else {
                return Err(TypeError::new("Assign", "assignment to a non-reference"));
            };
            if *inner != vty {
                return Err(TypeError::new(
                    "Assign",
                    "assigned value type differs from the reference content type",
                ));
            }
            Ok(Type::Unit)
        }
        Expr::RefCreate { vtype, init, .. } => {
            let want = conf_type_view(vtype).map_err(|e| e.under("valueType"))?;
            let got = check(mode, uni, env, sigma, a, init).map_err(|e| e.under("init"))?;
            if want != got {
                return Err(TypeError::new(
                    "Ref",
                    "initializer type differs from the reference content annotation",
                ));
            }
            Ok(Type::Ref(Box::new(want), Level::top()))
        }
        Expr::Cond { guard, then_br, else_br } => {
            let gty = check(mode, uni, env, sigma, a, guard).map_err(|e| e.under("guard"))?;
            if gty != Type::Bool {
                return Err(TypeError::new("Cond", "guard is not a boolean"));
            }
            let tt = check(mode, uni, env, sigma, a, then_br).map_err(|e| e.under("then"))?;
            let tf = check(mode, uni, env, sigma, a, else_br).map_err(|e| e.under("else"))?;
            if tt != tf {
                return Err(TypeError::new("Cond", "branch types differ"));
            }
            Ok(tt)
        }
        Expr::Flow { policy, body } => {
            if !policy_leq(a, policy) {
                return Err(TypeError::new(
                    "Flow",
                    format!("A ⋠ F at this flow declaration (A = {a}, F = {policy})"),
                ));
            }
            check(mode, uni, env, sigma, a, body).map_err(|e| e.under("flow"))
        }
        Expr::Allowed { policy, then_br, else_br } => {
            // The then-branch runs only where the test succeeded, so it is
            // checked under the assumption strengthened by the tested policy.
            let stronger = policy_meet(a, policy);
            let tt =
                check(mode, uni, env, sigma, &stronger, then_br).map_err(|e| e.under("then"))?;
            let tf = check(mode, uni, env, sigma, a, else_br).map_err(|e| e.under("else"))?;
            if tt != tf {
                return Err(TypeError::new("Allow", "branch types differ"));
            }
            Ok(tt)
        }
        Expr::Thread { body, domain, annot, .. } => {
            if annot.is_some() {
                return Err(TypeError::new(
                    "Mig",
                    "annotated thread in a plain-program check",
                ));
            }
            let body_a = match mode {
                ConfMode::Static(world) => match world.get(domain) {
                    Some(w) => w.clone(),
                    None => {
                        return Err(TypeError::new(
                            "Mig",
                            format!("domain `{domain}` has no allowed policy"),
                        ));
                    }
                },
                ConfMode::Relaxed => Policy::bottom(uni),
            };
            let ty = check(mode, uni, env, sigma, &body_a, body).map_err(|e| e.under("body"))?;
            if ty != Type::Unit {
                return Err(TypeError::new("Mig", "migrating body is not of unit type"));
            }
            Ok(Type::Unit)
        }
    }
}

fn restore(env: &mut TypeEnv, var: &str, shadowed: Option<Type>) {
    match shadowed {
        Some(t) => {
            env.insert(var.to_owned(), t);
        }
        None => {
            env.remove(var);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MonotonicityReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl MonotonicityReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// For each typable (A, M) in the corpus, re-check M at `samples` random
/// policies below A (supersets of A) and record any rejection. Typability
/// must be preserved downward, so a clean report is expected.
pub fn relaxation_monotonicity_check(
    j: &ConfJudgment,
    mode: ConfMode,
    corpus: &[(Policy, Expr)],
    seed: u64,
    samples: usize,
) -> MonotonicityReport {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pairs = j.universe.all_pairs();
    let mut report = MonotonicityReport::default();
    for (a, m) in corpus {
        let at = |pol: &Policy| {
            let judg = ConfJudgment { allowed: pol.clone(), ..j.clone() };
            typecheck_confine(&judg, m, mode)
        };
        if at(a).is_err() {
            continue;
        }
        report.checked += 1;
        for _ in 0..samples {
            let extra = if pairs.is_empty() {
                0
            } else {
                rng.gen_range(0..=pairs.len())
            };
            let mut lower = a.clone();
            for (p, q) in pairs.choose_multiple(&mut rng, extra) {
                lower = policy_meet(&lower, &Policy::new([(p.as_str(), q.as_str())]));
            }
            debug_assert!(policy_leq(&lower, a));
            if let Err(err) = at(&lower) {
                report.failures.push(format!(
                    "typable at {a} but rejected at {lower}: {err}"
                ));
            }
        }
    }
    report
}
