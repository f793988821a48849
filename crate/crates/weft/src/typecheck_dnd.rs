//! Flow-sensitive type and effect system.
//!
//! Judgments carry a thread level j, the current flow policy F, a typing
//! environment, and the reference labeling. The checker computes a
//! security effect (reading, writing, termination) alongside the type.
//! Reads raise the reading effect, writes bound the writing effect from
//! below, and guards that decide control flow feed the termination effect,
//! with every comparison taken relative to F.
//!
//! Arrows compare syntactically: an applied function must carry latent
//! thread level and policy equal to the judgment parameters. Lambdas take
//! their latent parameters from their annotation block, defaulting to the
//! ambient judgment when the block leaves them out.

use std::collections::BTreeMap;

use thiserror::Error;

pub use crate::lattice::{effect_join, effect_leq, Effect};
use crate::lattice::{level_join, level_leq, level_meet, policy_meet, Level, Policy, Universe};
use crate::syntax::{Expr, Latent, Type};

pub type TypeEnv = BTreeMap<String, Type>;
pub type RefLabeling = BTreeMap<String, (Level, Type)>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("rule {rule}, {condition}, at {path}")]
pub struct TypeError {
    pub rule: &'static str,
    pub condition: String,
    pub path: String,
}

impl TypeError {
    pub(crate) fn new(rule: &'static str, condition: impl Into<String>) -> Self {
        TypeError { rule, condition: condition.into(), path: String::new() }
    }

    pub(crate) fn under(mut self, seg: &str) -> Self {
        self.path = if self.path.is_empty() {
            seg.to_owned()
        } else {
            format!("{seg}/{}", self.path)
        };
        self
    }
}

/// Parameters of a judgment: Γ, j, F, and Σ over a fixed universe.
#[derive(Debug, Clone)]
pub struct DndJudgment<'a> {
    pub universe: &'a Universe,
    pub env: &'a TypeEnv,
    pub thread_level: Level,
    pub context: Policy,
    pub sigma: &'a RefLabeling,
}

/// Check a plain expression, returning its security effect and type.
pub fn typecheck_dnd(j: &DndJudgment, m: &Expr) -> Result<(Effect, Type), TypeError> {
    let mut env = j.env.clone();
    check(j.universe, &mut env, j.sigma, &j.thread_level, &j.context, m)
}

/// Strip foreign latent fields and demand the native ones, recursively.
/// The result is the canonical form this system compares types in.
pub fn dnd_type_view(t: &Type) -> Result<Type, TypeError> {
    view(t)
}

fn view(t: &Type) -> Result<Type, TypeError> {
    match t {
        Type::Unit => Ok(Type::Unit),
        Type::Bool => Ok(Type::Bool),
        Type::Ref(inner, l) => Ok(Type::Ref(Box::new(view(inner)?), l.clone())),
        Type::Arrow(p, r, lat) => {
            let (Some(j), Some(f), Some(eff)) = (&lat.thread_level, &lat.context, &lat.effect)
            else {
                return Err(TypeError::new(
                    "Arrow",
                    "arrow annotation is missing a latent j, F, or eff field",
                ));
            };
            Ok(Type::Arrow(
                Box::new(view(p)?),
                Box::new(view(r)?),
                Latent {
                    thread_level: Some(j.clone()),
                    context: Some(f.clone()),
                    effect: Some(eff.clone()),
                    allowed: None,
                    decl: None,
                },
            ))
        }
    }
}

fn check(
    uni: &Universe,
    env: &mut TypeEnv,
    sigma: &RefLabeling,
    j: &Level,
    f: &Policy,
    e: &Expr,
) -> Result<(Effect, Type), TypeError> {
    match e {
        Expr::Unit => Ok((Effect::bottom(uni), Type::Unit)),
        Expr::Bool(_) => Ok((Effect::bottom(uni), Type::Bool)),
        Expr::Var(x) => match env.get(x) {
            Some(t) => Ok((Effect::bottom(uni), view(t)?)),
            None => Err(TypeError::new("Var", format!("unbound variable `{x}`"))),
        },
        Expr::Loc(a) => match sigma.get(a) {
            Some((l, t)) => Ok((
                Effect::bottom(uni),
                Type::Ref(Box::new(view(t)?), l.clone()),
            )),
            None => Err(TypeError::new("Loc", format!("unknown reference `{a}`"))),
        },
        Expr::Abs(ab) => {
            let param = view(&ab.param).map_err(|e| e.under("param"))?;
            let lat_j = ab.latent.thread_level.clone().unwrap_or_else(|| j.clone());
            let lat_f = ab.latent.context.clone().unwrap_or_else(|| f.clone());
            let shadowed = env.insert(ab.var.clone(), param.clone());
            let res = check(uni, env, sigma, &lat_j, &lat_f, &ab.body);
            restore(env, &ab.var, shadowed);
            let (s_body, sigma_ty) = res.map_err(|e| e.under("body"))?;
            if let Some(declared) = &ab.latent.effect {
                if *declared != s_body {
                    return Err(TypeError::new(
                        "Abs",
                        format!(
                            "declared latent effect {declared} differs from the computed {s_body}"
                        ),
                    ));
                }
            }
            let arrow = Type::Arrow(
                Box::new(param),
                Box::new(sigma_ty),
                Latent {
                    thread_level: Some(lat_j),
                    context: Some(lat_f),
                    effect: Some(s_body),
                    allowed: None,
                    decl: None,
                },
            );
            Ok((Effect::bottom(uni), arrow))
        }
        Expr::Fix(fix) => {
            let self_ty = view(&fix.self_type).map_err(|e| e.under("selfType"))?;
            let shadowed = env.insert(fix.var.clone(), self_ty.clone());
            let res = check(uni, env, sigma, j, f, &fix.body);
            restore(env, &fix.var, shadowed);
            let (s, got) = res.map_err(|e| e.under("body"))?;
            if got != self_ty {
                return Err(TypeError::new(
                    "Rec",
                    format!("fix body has type {got:?}, annotation says {self_ty:?}"),
                ));
            }
            Ok((s, self_ty))
        }
        Expr::App(fun, arg) => {
            let (s, fun_ty) = check(uni, env, sigma, j, f, fun).map_err(|e| e.under("fn"))?;
            let (s_arg, arg_ty) =
                check(uni, env, sigma, j, f, arg).map_err(|e| e.under("arg"))?;
            let Type::Arrow(param, result, lat) = fun_ty else {
                return Err(TypeError::new("App", "applied expression is not a function"));
            };
            if lat.thread_level.as_ref() != Some(j) || lat.context.as_ref() != Some(f) {
                return Err(TypeError::new(
                    "App",
                    "latent (j, F) of the applied function differ from the judgment parameters",
                ));
            }
            let s_lat = lat.effect.expect("viewed arrow carries an effect");
            if *param != arg_ty {
                return Err(TypeError::new(
                    "App",
                    "argument type differs from the parameter annotation",
                ));
            }
            require(level_leq(&s.termination, &s_arg.writing, f), "App", "s.t ⪯_F s''.w")?;
            require(level_leq(&s.reading, &s_lat.writing, f), "App", "s.r ⪯_F s'.w")?;
            require(level_leq(&s_arg.reading, &s_lat.writing, f), "App", "s''.r ⪯_F s'.w")?;
            let term = Effect {
                reading: Level::bottom(uni),
                writing: Level::top(),
                termination: level_join(&s.reading, &s_arg.reading, &Policy::top()),
            };
            let eff = effect_join(&effect_join(&effect_join(&s, &s_lat), &s_arg), &term);
            Ok((eff, *result))
        }
        Expr::Seq(a, b) => {
            let (s, _) = check(uni, env, sigma, j, f, a).map_err(|e| e.under("first"))?;
            let (s2, ty) = check(uni, env, sigma, j, f, b).map_err(|e| e.under("second"))?;
            require(level_leq(&s.termination, &s2.writing, f), "Seq", "s.t ⪯_F s'.w")?;
            Ok((effect_join(&s, &s2), ty))
        }
        Expr::Deref(t) => {
            let (s, ty) = check(uni, env, sigma, j, f, t).map_err(|e| e.under("target"))?;
            let Type::Ref(inner, l) = ty else {
                return Err(TypeError::new("Der", "dereference of a non-reference"));
            };
            let read = Effect {
                reading: l,
                writing: Level::top(),
                termination: Level::bottom(uni),
            };
            Ok((effect_join(&s, &read), *inner))
        }
        Expr::Assign(t, v) => {
            let (s, ty) = check(uni, env, sigma, j, f, t).map_err(|e| e.under("target"))?;
            let (s2, vty) = check(uni, env, sigma, j, f, v).map_err(|e| e.under("value"))?;
            let Type::Ref(inner, l) = ty else {
                return Err(TypeError::new("Assign", "assignment to a non-reference"));
            };
            if *inner != vty {
                return Err(TypeError::new(
                    "Assign",
                    "assigned value type differs from the reference content type",
                ));
            }
            require(level_leq(&s.termination, &s2.writing, f), "Assign", "s.t ⪯_F s'.w")?;
            require(level_leq(&s.reading, &l, f), "Assign", "s.r ⪯_F l")?;
            require(level_leq(&s2.reading, &l, f), "Assign", "s'.r ⪯_F l")?;
            let write = Effect {
                reading: Level::bottom(uni),
                writing: l,
                termination: Level::bottom(uni),
            };
            Ok((effect_join(&effect_join(&s, &s2), &write), Type::Unit))
        }
        Expr::RefCreate { level, vtype, init } => {
            let want = view(vtype).map_err(|e| e.under("valueType"))?;
            let (s, got) = check(uni, env, sigma, j, f, init).map_err(|e| e.under("init"))?;
            if want != got {
                return Err(TypeError::new(
                    "Ref",
                    "initializer type differs from the reference content annotation",
                ));
            }
            require(level_leq(&s.reading, level, f), "Ref", "s.r ⪯_F l")?;
            require(level_leq(&s.termination, level, f), "Ref", "s.t ⪯_F l")?;
            let write = Effect {
                reading: Level::bottom(uni),
                writing: level.clone(),
                termination: Level::bottom(uni),
            };
            Ok((
                effect_join(&s, &write),
                Type::Ref(Box::new(want), level.clone()),
            ))
        }
        Expr::Cond { guard, then_br, else_br } => {
            let (s, gty) = check(uni, env, sigma, j, f, guard).map_err(|e| e.under("guard"))?;
            if gty != Type::Bool {
                return Err(TypeError::new("Cond", "guard is not a boolean"));
            }
            let (st, tt) =
                check(uni, env, sigma, j, f, then_br).map_err(|e| e.under("then"))?;
            let (sf, tf) =
                check(uni, env, sigma, j, f, else_br).map_err(|e| e.under("else"))?;
            if tt != tf {
                return Err(TypeError::new("Cond", "branch types differ"));
            }
            require(level_leq(&s.reading, &st.writing, f), "Cond", "s.r ⪯_F s_t.w")?;
            require(level_leq(&s.reading, &sf.writing, f), "Cond", "s.r ⪯_F s_f.w")?;
            let guard_term = Effect {
                reading: Level::bottom(uni),
                writing: Level::top(),
                termination: s.reading.clone(),
            };
            let eff = effect_join(&effect_join(&effect_join(&s, &st), &sf), &guard_term);
            Ok((eff, tt))
        }
        Expr::Flow { policy, body } => {
            let inner = policy_meet(f, policy);
            check(uni, env, sigma, j, &inner, body).map_err(|e| e.under("flow"))
        }
        Expr::Allowed { then_br, else_br, .. } => {
            // The tested policy does not occur in any premise; both branches
            // are checked under the judgment parameters as the rule is
            // printed, and only the thread level guards the branch writes.
            let (st, tt) =
                check(uni, env, sigma, j, f, then_br).map_err(|e| e.under("then"))?;
            let (sf, tf) =
                check(uni, env, sigma, j, f, else_br).map_err(|e| e.under("else"))?;
            if tt != tf {
                return Err(TypeError::new("Allow", "branch types differ"));
            }
            require(level_leq(j, &st.writing, f), "Allow", "j ⪯_F s_t.w")?;
            require(level_leq(j, &sf.writing, f), "Allow", "j ⪯_F s_f.w")?;
            let test = Effect {
                reading: j.clone(),
                writing: Level::top(),
                termination: j.clone(),
            };
            Ok((effect_join(&effect_join(&st, &sf), &test), tt))
        }
        Expr::Thread { level, body, annot, .. } => {
            if annot.is_some() {
                return Err(TypeError::new(
                    "Mig",
                    "annotated thread in a plain-program check",
                ));
            }
            let (s, ty) =
                check(uni, env, sigma, level, &Policy::top(), body).map_err(|e| e.under("body"))?;
            if ty != Type::Unit {
                return Err(TypeError::new("Mig", "migrating body is not of unit type"));
            }
            let eff = Effect {
                reading: Level::bottom(uni),
                writing: level_meet(level, &s.writing),
                termination: Level::bottom(uni),
            };
            Ok((eff, Type::Unit))
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

fn require(ok: bool, rule: &'static str, condition: &str) -> Result<(), TypeError> {
    if ok {
        Ok(())
    } else {
        Err(TypeError::new(rule, format!("side condition {condition} failed")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;

    fn uni2() -> Universe {
        Universe::new(["H", "L"])
    }

    /// Σ with a high boolean `a` and a low boolean `b`.
    fn sigma_high_low() -> RefLabeling {
        let mut s = RefLabeling::new();
        s.insert("a".into(), (Level::new(["H"]), Type::Bool));
        s.insert("b".into(), (Level::new(["H", "L"]), Type::Bool));
        s
    }

    fn check_at(
        uni: &Universe,
        sigma: &RefLabeling,
        j: Level,
        f: Policy,
        src: &str,
    ) -> Result<(Effect, Type), TypeError> {
        let prog = parse_program(src).unwrap();
        let prog = crate::semantics::resolve_against(&prog, uni, &|n| sigma.contains_key(n))
            .expect("resolution");
        let env = TypeEnv::new();
        let judgment = DndJudgment {
            universe: uni,
            env: &env,
            thread_level: j,
            context: f,
            sigma,
        };
        typecheck_dnd(&judgment, &prog)
    }

    #[test]
    fn unit_has_bottom_effect() {
        let uni = uni2();
        let sigma = RefLabeling::new();
        let (eff, ty) = check_at(&uni, &sigma, Level::top(), Policy::top(), "()").unwrap();
        assert_eq!(eff, Effect::bottom(&uni));
        assert_eq!(ty, Type::Unit);
    }

    #[test]
    fn direct_leak_rejected_at_top_policy() {
        let uni = uni2();
        let sigma = sigma_high_low();
        let err = check_at(&uni, &sigma, Level::top(), Policy::top(), "b := !a").unwrap_err();
        assert_eq!(err.rule, "Assign");
        assert!(err.condition.contains("s'.r"), "{err}");
    }

    #[test]
    fn declared_flow_makes_the_leak_typable() {
        // The flow declaration switches the comparison policy inside, so the
        // same assignment passes even though the judgment policy is empty.
        let uni = uni2();
        let sigma = sigma_high_low();
        let (eff, ty) =
            check_at(&uni, &sigma, Level::top(), Policy::top(), "flow bot in b := !a").unwrap();
        assert_eq!(ty, Type::Unit);
        assert_eq!(eff.reading, Level::new(["H"]));
        assert_eq!(eff.writing, Level::new(["H", "L"]));
    }

    #[test]
    fn high_guard_cannot_drive_low_writes() {
        let uni = uni2();
        let sigma = sigma_high_low();
        let err = check_at(
            &uni,
            &sigma,
            Level::top(),
            Policy::top(),
            "if !a then b := true else b := false",
        )
        .unwrap_err();
        assert_eq!(err.rule, "Cond");
    }

    #[test]
    fn migration_leak_through_low_thread_level_rejected() {
        // A high guard choosing between two spawn targets: each branch
        // writes (spawns) at the low thread level, so the guard reading
        // must flow below it, which fails.
        let uni = uni2();
        let sigma = sigma_high_low();
        let spawnable =
            "if !a then (thread<{H,L}> (allowed {H<L} then b := true else b := false) at d1) \
             else (thread<{H,L}> (allowed {H<L} then b := true else b := false) at d2)";
        let err = check_at(&uni, &sigma, Level::top(), Policy::top(), spawnable).unwrap_err();
        assert_eq!(err.rule, "Cond");
        assert!(err.condition.contains("s.r"), "{err}");
    }

    #[test]
    fn allowed_branches_guarded_by_thread_level() {
        let uni = uni2();
        let sigma = sigma_high_low();
        // At thread level H the low write in a branch of an allowed test is
        // rejected; at the low level it passes.
        let src = "allowed {H<L} then b := true else b := false";
        let err = check_at(&uni, &sigma, Level::new(["H"]), Policy::top(), src).unwrap_err();
        assert_eq!(err.rule, "Allow");
        let (eff, _) = check_at(&uni, &sigma, Level::new(["H", "L"]), Policy::top(), src).unwrap();
        assert_eq!(eff.termination, Level::new(["H", "L"]));
    }

    #[test]
    fn spawn_effect_meets_thread_level_with_body_writes() {
        let uni = uni2();
        let sigma = sigma_high_low();
        let (eff, ty) = check_at(
            &uni,
            &sigma,
            Level::top(),
            Policy::top(),
            "thread<{H}> b := true at d",
        )
        .unwrap();
        assert_eq!(ty, Type::Unit);
        assert_eq!(eff.writing, Level::new(["H", "L"]));
        assert_eq!(eff.reading, Level::bottom(&uni));
    }

    #[test]
    fn values_type_the_same_under_any_parameters() {
        let uni = uni2();
        let sigma = sigma_high_low();
        let src = "\\x : bool . x";
        let a = check_at(&uni, &sigma, Level::top(), Policy::top(), src).unwrap();
        let b = check_at(&uni, &sigma, Level::new(["H"]), Policy::new([("H", "L")]), src);
        // The lambda's latent block is empty, so its latents follow the
        // ambient parameters and the resulting arrow types differ; pinning
        // the latents makes the results coincide.
        assert!(b.is_ok());
        let pinned = "\\[j={}; F={}] x : bool . x";
        let c = check_at(&uni, &sigma, Level::new(["H"]), Policy::new([("H", "L")]), pinned)
            .unwrap();
        assert_eq!(a, c);
    }
}
