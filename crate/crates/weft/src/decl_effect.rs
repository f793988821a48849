//! Declassification effects.
//!
//! This checker computes, for a plain program, a lower bound on the flow
//! policies it may ever declare, and emits the same program with every
//! migrating thread annotated by its body's effect. It is deterministic:
//! no judgment parameters beyond the environment and the ref labeling.
//!
//! Types here are levelless; arrows carry the computed effect of their
//! body as a latent policy. Three relations compare them: `type_leq`
//! (latent effects at least as permissive on the left), `type_compat`
//! (equal up to latent effects), and `type_meet` (pointwise meet of the
//! latent effects of compatible types).

use crate::confinement::{typecheck_relaxed, ConfJudgment};
use crate::lattice::{policy_leq, policy_meet, policy_subtract, Level, Policy, Universe};
use crate::syntax::{Abs, Expr, Fix, Latent, Type};
use crate::typecheck_dnd::{RefLabeling, TypeEnv, TypeError};

#[derive(Debug, Clone)]
pub struct InfJudgment<'a> {
    pub universe: &'a Universe,
    pub env: &'a TypeEnv,
    pub sigma: &'a RefLabeling,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotResult {
    /// The input with `with` clauses filled in on every migration.
    pub annotated: Expr,
    /// Lower bound on the policies the program may declare.
    pub effect: Policy,
    pub vtype: Type,
}

/// Annotate a plain program. Input that already carries annotations is
/// rejected rather than re-annotated.
pub fn annotate(j: &InfJudgment, m: &Expr) -> Result<AnnotResult, TypeError> {
    if m.has_annotations() {
        return Err(TypeError::new(
            "Mig",
            "input already carries migration annotations",
        ));
    }
    let mut env = j.env.clone();
    let (annotated, effect, vtype) = infer(j.universe, &mut env, j.sigma, m)?;
    debug_assert_eq!(crate::syntax::erase_annotations(&annotated), *m);
    Ok(AnnotResult { annotated, effect, vtype })
}

/// Canonical form for comparisons in this system: ref levels erased,
/// arrows keeping only their latent declared effect, which must be present.
pub fn decl_type_view(t: &Type) -> Result<Type, TypeError> {
    match t {
        Type::Unit => Ok(Type::Unit),
        Type::Bool => Ok(Type::Bool),
        Type::Ref(inner, _) => Ok(Type::Ref(Box::new(decl_type_view(inner)?), Level::top())),
        Type::Arrow(p, r, lat) => {
            let Some(s) = &lat.decl else {
                return Err(TypeError::new(
                    "Arrow",
                    "arrow annotation is missing a latent s field",
                ));
            };
            Ok(Type::Arrow(
                Box::new(decl_type_view(p)?),
                Box::new(decl_type_view(r)?),
                decl_latent(s.clone()),
            ))
        }
    }
}

fn decl_latent(s: Policy) -> Latent {
    Latent {
        thread_level: None,
        context: None,
        effect: None,
        allowed: None,
        decl: Some(s),
    }
}

/// Latent effects on the left are at least as permissive, parameters
/// equal, results compared recursively.
pub fn type_leq(a: &Type, b: &Type) -> bool {
    if a == b {
        return true;
    }
    match (a, b) {
        (Type::Arrow(p1, r1, l1), Type::Arrow(p2, r2, l2)) => {
            let (Some(s1), Some(s2)) = (&l1.decl, &l2.decl) else {
                return false;
            };
            p1 == p2 && policy_leq(s1, s2) && type_leq(r1, r2)
        }
        _ => false,
    }
}

/// Equal up to latent effects.
pub fn type_compat(a: &Type, b: &Type) -> bool {
    if a == b {
        return true;
    }
    match (a, b) {
        (Type::Arrow(p1, r1, _), Type::Arrow(p2, r2, _)) => p1 == p2 && type_compat(r1, r2),
        _ => false,
    }
}

/// Greatest lower bound for `type_leq` on compatible types.
pub fn type_meet(a: &Type, b: &Type) -> Result<Type, TypeError> {
    if a == b {
        return Ok(a.clone());
    }
    match (a, b) {
        (Type::Arrow(p1, r1, l1), Type::Arrow(p2, r2, l2)) if p1 == p2 => {
            let (Some(s1), Some(s2)) = (&l1.decl, &l2.decl) else {
                return Err(TypeError::new("Meet", "arrow is missing a latent s field"));
            };
            Ok(Type::Arrow(
                p1.clone(),
                Box::new(type_meet(r1, r2)?),
                decl_latent(policy_meet(s1, s2)),
            ))
        }
        _ => Err(TypeError::new(
            "Meet",
            "structural mismatch between the types being met",
        )),
    }
}

fn leq_error(rule: &'static str, what: &str, want: &Type, got: &Type) -> TypeError {
    if type_compat(want, got) {
        TypeError::new(rule, format!("policy mismatch {what}"))
    } else {
        TypeError::new(rule, format!("structural mismatch {what}"))
    }
}

fn infer(
    uni: &Universe,
    env: &mut TypeEnv,
    sigma: &RefLabeling,
    e: &Expr,
) -> Result<(Expr, Policy, Type), TypeError> {
    match e {
        Expr::Unit => Ok((Expr::Unit, Policy::top(), Type::Unit)),
        Expr::Bool(b) => Ok((Expr::Bool(*b), Policy::top(), Type::Bool)),
        Expr::Var(x) => match env.get(x) {
            Some(t) => Ok((Expr::Var(x.clone()), Policy::top(), decl_type_view(t)?)),
            None => Err(TypeError::new("Var", format!("unbound variable `{x}`"))),
        },
        Expr::Loc(r) => match sigma.get(r) {
            Some((_, t)) => Ok((
                Expr::Loc(r.clone()),
                Policy::top(),
                Type::Ref(Box::new(decl_type_view(t)?), Level::top()),
            )),
            None => Err(TypeError::new("Loc", format!("unknown reference `{r}`"))),
        },
        Expr::Abs(ab) => {
            let param = decl_type_view(&ab.param).map_err(|e| e.under("param"))?;
            let shadowed = env.insert(ab.var.clone(), param.clone());
            let res = infer(uni, env, sigma, &ab.body);
            restore(env, &ab.var, shadowed);
            let (body, s, body_ty) = res.map_err(|e| e.under("body"))?;
            if let Some(pinned) = &ab.latent.decl {
                if *pinned != s {
                    return Err(TypeError::new(
                        "Abs",
                        format!("declared latent effect {pinned} differs from the computed {s}"),
                    ));
                }
            }
            let arrow = Type::Arrow(Box::new(param), Box::new(body_ty), decl_latent(s));
            let out = Expr::Abs(Box::new(Abs {
                var: ab.var.clone(),
                param: ab.param.clone(),
                latent: ab.latent.clone(),
                body,
            }));
            Ok((out, Policy::top(), arrow))
        }
        Expr::Fix(fx) => {
            let self_ty = decl_type_view(&fx.self_type).map_err(|e| e.under("selfType"))?;
            let shadowed = env.insert(fx.var.clone(), self_ty.clone());
            let res = infer(uni, env, sigma, &fx.body);
            restore(env, &fx.var, shadowed);
            let (body, _, got) = res.map_err(|e| e.under("body"))?;
            if got != self_ty {
                return Err(TypeError::new(
                    "Rec",
                    "fix body type differs from its annotation",
                ));
            }
            let out = Expr::Fix(Box::new(Fix {
                var: fx.var.clone(),
                self_type: fx.self_type.clone(),
                body,
            }));
            Ok((out, Policy::top(), self_ty))
        }
        Expr::App(f, a) => {
            let (f_out, s, f_ty) = infer(uni, env, sigma, f).map_err(|e| e.under("fn"))?;
            let (a_out, s2, a_ty) = infer(uni, env, sigma, a).map_err(|e| e.under("arg"))?;
            let Type::Arrow(param, result, lat) = f_ty else {
                return Err(TypeError::new("App", "applied expression is not a function"));
            };
            if !type_leq(&param, &a_ty) {
                return Err(leq_error(
                    "App",
                    "between parameter and argument",
                    &param,
                    &a_ty,
                ));
            }
            let s3 = lat.decl.expect("viewed arrow carries an effect");
            let eff = policy_meet(&policy_meet(&s, &s2), &s3);
            Ok((Expr::App(Box::new(f_out), Box::new(a_out)), eff, *result))
        }
        Expr::Seq(x, y) => {
            let (x_out, s, _) = infer(uni, env, sigma, x).map_err(|e| e.under("first"))?;
            let (y_out, s2, ty) = infer(uni, env, sigma, y).map_err(|e| e.under("second"))?;
            Ok((
                Expr::Seq(Box::new(x_out), Box::new(y_out)),
                policy_meet(&s, &s2),
                ty,
            ))
        }
        Expr::Deref(t) => {
            let (t_out, s, ty) = infer(uni, env, sigma, t).map_err(|e| e.under("target"))?;
            let Type::Ref(inner, _) = ty else {
                return Err(TypeError::new("Der", "dereference of a non-reference"));
            };
            Ok((Expr::Deref(Box::new(t_out)), s, *inner))
        }
        Expr::Assign(t, v) => {
            let (t_out, s, ty) = infer(uni, env, sigma, t).map_err(|e| e.under("target"))?;
            let (v_out, s2, vty) = infer(uni, env, sigma, v).map_err(|e| e.under("value"))?;
            let Type::Ref(inner, _) = ty else {
                return Err(TypeError::new("Assign", "assignment to a non-reference"));
            };
            if !type_leq(&inner, &vty) {
                return Err(leq_error(
                    "Assign",
                    "between reference content and assigned value",
                    &inner,
                    &vty,
                ));
            }
            Ok((
                Expr::Assign(Box::new(t_out), Box::new(v_out)),
                policy_meet(&s, &s2),
                Type::Unit,
            ))
        }
        Expr::RefCreate { level, vtype, init } => {
            let want = decl_type_view(vtype).map_err(|e| e.under("valueType"))?;
            let (i_out, s, got) = infer(uni, env, sigma, init).map_err(|e| e.under("init"))?;
            if !type_leq(&want, &got) {
                return Err(leq_error(
                    "Ref",
                    "between content annotation and initializer",
                    &want,
                    &got,
                ));
            }
            let out = Expr::RefCreate {
                level: level.clone(),
                vtype: vtype.clone(),
                init: Box::new(i_out),
            };
            Ok((out, s, Type::Ref(Box::new(want), Level::top())))
        }
        Expr::Cond { guard, then_br, else_br } => {
            let (g_out, s, gty) = infer(uni, env, sigma, guard).map_err(|e| e.under("guard"))?;
            if gty != Type::Bool {
                return Err(TypeError::new("Cond", "guard is not a boolean"));
            }
            let (t_out, st, tt) =
                infer(uni, env, sigma, then_br).map_err(|e| e.under("then"))?;
            let (f_out, sf, tf) =
                infer(uni, env, sigma, else_br).map_err(|e| e.under("else"))?;
            if !type_compat(&tt, &tf) {
                return Err(TypeError::new(
                    "Cond",
                    "structural mismatch between branch types",
                ));
            }
            let out = Expr::Cond {
                guard: Box::new(g_out),
                then_br: Box::new(t_out),
                else_br: Box::new(f_out),
            };
            let eff = policy_meet(&policy_meet(&s, &st), &sf);
            Ok((out, eff, type_meet(&tt, &tf)?))
        }
        Expr::Flow { policy, body } => {
            let (b_out, s, ty) = infer(uni, env, sigma, body).map_err(|e| e.under("flow"))?;
            let out = Expr::Flow { policy: policy.clone(), body: Box::new(b_out) };
            Ok((out, policy_meet(&s, policy), ty))
        }
        Expr::Allowed { policy, then_br, else_br } => {
            let (t_out, st, tt) =
                infer(uni, env, sigma, then_br).map_err(|e| e.under("then"))?;
            let (f_out, sf, tf) =
                infer(uni, env, sigma, else_br).map_err(|e| e.under("else"))?;
            if !type_compat(&tt, &tf) {
                return Err(TypeError::new(
                    "Allow",
                    "structural mismatch between branch types",
                ));
            }
            // Whatever the then-branch declares is covered by the tested
            // policy at the only places that branch can run, so the test
            // is discounted from its effect.
            let eff = policy_meet(&policy_subtract(&st, policy), &sf);
            let out = Expr::Allowed {
                policy: policy.clone(),
                then_br: Box::new(t_out),
                else_br: Box::new(f_out),
            };
            Ok((out, eff, type_meet(&tt, &tf)?))
        }
        Expr::Thread { level, body, domain, annot } => {
            if annot.is_some() {
                return Err(TypeError::new(
                    "Mig",
                    "input already carries migration annotations",
                ));
            }
            let (b_out, s, ty) = infer(uni, env, sigma, body).map_err(|e| e.under("body"))?;
            if ty != Type::Unit {
                return Err(TypeError::new("Mig", "migrating body is not of unit type"));
            }
            let out = Expr::Thread {
                level: level.clone(),
                body: Box::new(b_out),
                domain: domain.clone(),
                annot: Some(s),
            };
            Ok((out, Policy::top(), Type::Unit))
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

/// Annotate every store value, demanding the empty effect and the declared
/// content type.
pub fn annotate_store(
    j: &InfJudgment,
    store: &std::collections::BTreeMap<String, Expr>,
) -> Result<std::collections::BTreeMap<String, Expr>, TypeError> {
    let mut out = std::collections::BTreeMap::new();
    for (a, v) in store {
        let r = annotate(j, v).map_err(|e| e.under(a))?;
        if r.effect != Policy::top() {
            return Err(TypeError::new(
                "Store",
                format!("value at `{a}` has a non-empty effect {}", r.effect),
            ));
        }
        let want = j
            .sigma
            .get(a)
            .ok_or_else(|| TypeError::new("Store", format!("`{a}` has no declared type")))?;
        let want_v = decl_type_view(&want.1)?;
        if r.vtype != want_v {
            return Err(TypeError::new(
                "Store",
                format!("value at `{a}` does not have its declared type"),
            ));
        }
        out.insert(a.clone(), r.annotated);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct CompareReport {
    pub checked: usize,
    pub failures: Vec<String>,
    /// The fixed two-branch program whose branches differ only in latent
    /// policy: rejected by the confinement checker, accepted here.
    pub fixed_differential_held: bool,
}

impl CompareReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.fixed_differential_held
    }
}

/// Parameters equal up to latent fields, results compared recursively,
/// the left arrow's allowed policy below the right arrow's effect.
fn cross_leq(conf: &Type, decl: &Type) -> bool {
    match (conf, decl) {
        (Type::Unit, Type::Unit) | (Type::Bool, Type::Bool) => true,
        (Type::Ref(a, _), Type::Ref(b, _)) => shape_eq(a, b),
        (Type::Arrow(p1, r1, l1), Type::Arrow(p2, r2, l2)) => {
            let (Some(a), Some(s)) = (&l1.allowed, &l2.decl) else {
                return false;
            };
            shape_eq(p1, p2) && policy_leq(a, s) && cross_leq(r1, r2)
        }
        _ => false,
    }
}

fn shape_eq(a: &Type, b: &Type) -> bool {
    match (a, b) {
        (Type::Unit, Type::Unit) | (Type::Bool, Type::Bool) => true,
        (Type::Ref(x, _), Type::Ref(y, _)) => shape_eq(x, y),
        (Type::Arrow(p1, r1, _), Type::Arrow(p2, r2, _)) => shape_eq(p1, p2) && shape_eq(r1, r2),
        _ => false,
    }
}

/// For each confinement-typable (A, M), annotation must succeed with
/// A below the computed effect and the confinement type below the
/// informative one. Also runs the fixed differential program that the
/// confinement checker rejects and annotation accepts.
pub fn compare_with_relaxed(j: &InfJudgment, corpus: &[(Policy, Expr)]) -> CompareReport {
    let mut report = CompareReport::default();
    for (a, m) in corpus {
        let cj = ConfJudgment {
            universe: j.universe,
            env: j.env,
            allowed: a.clone(),
            sigma: j.sigma,
        };
        let Ok(conf_ty) = typecheck_relaxed(&cj, m) else {
            continue;
        };
        report.checked += 1;
        match annotate(j, m) {
            Err(err) => report
                .failures
                .push(format!("typable at {a} but not annotatable: {err}")),
            Ok(r) => {
                if !policy_leq(a, &r.effect) {
                    report.failures.push(format!(
                        "allowed policy {a} is not below the effect {}",
                        r.effect
                    ));
                }
                if !cross_leq(&conf_ty, &r.vtype) {
                    report
                        .failures
                        .push("confinement type is not below the informative type".to_owned());
                }
            }
        }
    }
    report.fixed_differential_held = fixed_differential();
    report
}

/// A conditional whose branches allocate and read back functions that
/// differ only in their latent policy: not typable by the confinement
/// checker (branch types differ), annotated here at the met type.
fn fixed_differential() -> bool {
    use crate::syntax::parse_program;

    let uni = Universe::new(["p", "q", "r"]);
    let mut sigma = RefLabeling::new();
    sigma.insert("a".into(), (Level::new(["p"]), Type::Bool));
    let src = "if !a \
               then !(ref<{p}, unit -[A={p<q}; s={p<q}]-> unit> (\\[A={p<q}] x : unit . flow {p<q} in ())) \
               else !(ref<{p}, unit -[A={q<r}; s={q<r}]-> unit> (\\[A={q<r}] x : unit . flow {q<r} in ()))";
    let Ok(prog) = parse_program(src) else {
        return false;
    };
    let Ok(prog) = crate::semantics::resolve_against(&prog, &uni, &|n| sigma.contains_key(n))
    else {
        return false;
    };
    let env = TypeEnv::new();
    let cj = ConfJudgment {
        universe: &uni,
        env: &env,
        allowed: Policy::bottom(&uni),
        sigma: &sigma,
    };
    let rejected = matches!(typecheck_relaxed(&cj, &prog), Err(e) if e.rule == "Cond");
    let ij = InfJudgment { universe: &uni, env: &env, sigma: &sigma };
    let accepted = match annotate(&ij, &prog) {
        Ok(r) => {
            let want = Type::Arrow(
                Box::new(Type::Unit),
                Box::new(Type::Unit),
                decl_latent(Policy::new([("p", "q"), ("q", "r")])),
            );
            r.vtype == want
        }
        Err(_) => false,
    };
    rejected && accepted
}
