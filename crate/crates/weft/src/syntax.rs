//! Abstract syntax, call-by-value decomposition, and the context policy.
//!
//! Expressions cover the migrating-thread calculus: lambda terms with
//! references, conditionals, sequencing, flow declarations, allowed tests,
//! and remote thread creation. Thread nodes optionally carry a policy
//! annotation (`with F`), which only the annotated semantics consults.
//!
//! Types annotate lambda parameters and fix-bound variables so every
//! checker is syntax-directed. Arrow types carry a latent block whose
//! fields are optional; each checker reads the fields it understands and
//! demands their presence only where it actually needs them.

mod parse;
mod print;

pub use parse::{parse_level_text, parse_policy_text, parse_program, parse_type, ParseError};

use std::collections::BTreeSet;

use crate::lattice::{policy_meet, Effect, Level, Policy};

/// Latent annotation attached to arrow types and to lambdas themselves.
///
/// `thread_level` (j) and `context` (F) feed the flow-sensitive checker,
/// `allowed` (A) the confinement checkers, `effect` and `decl` record the
/// latent effects of the flow-sensitive and informative systems.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Latent {
    pub thread_level: Option<Level>,
    pub context: Option<Policy>,
    pub effect: Option<Effect>,
    pub allowed: Option<Policy>,
    pub decl: Option<Policy>,
}

impl Latent {
    pub fn is_empty(&self) -> bool {
        self.thread_level.is_none()
            && self.context.is_none()
            && self.effect.is_none()
            && self.allowed.is_none()
            && self.decl.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Type {
    Unit,
    Bool,
    /// Reference holding `inner`, labeled with a confidentiality level.
    /// Checkers that type references levellessly ignore the label.
    Ref(Box<Type>, Level),
    Arrow(Box<Type>, Box<Type>, Latent),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Abs {
    pub var: String,
    pub param: Type,
    /// Latent parameters this lambda is checked under; fields left out
    /// default to the ambient judgment parameters.
    pub latent: Latent,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fix {
    pub var: String,
    pub self_type: Type,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Unit,
    Bool(bool),
    Var(String),
    /// A store location. Appears at runtime and in store initializers.
    Loc(String),
    Abs(Box<Abs>),
    Fix(Box<Fix>),
    App(Box<Expr>, Box<Expr>),
    Seq(Box<Expr>, Box<Expr>),
    Deref(Box<Expr>),
    Assign(Box<Expr>, Box<Expr>),
    RefCreate {
        level: Level,
        vtype: Type,
        init: Box<Expr>,
    },
    Cond {
        guard: Box<Expr>,
        then_br: Box<Expr>,
        else_br: Box<Expr>,
    },
    Flow {
        policy: Policy,
        body: Box<Expr>,
    },
    Allowed {
        policy: Policy,
        then_br: Box<Expr>,
        else_br: Box<Expr>,
    },
    Thread {
        level: Level,
        body: Box<Expr>,
        domain: String,
        annot: Option<Policy>,
    },
}

impl Expr {
    pub fn is_value(&self) -> bool {
        matches!(self, Expr::Unit | Expr::Bool(_) | Expr::Abs(_) | Expr::Loc(_))
    }

    /// Values plus nested fixpoints over them.
    pub fn is_pseudo_value(&self) -> bool {
        match self {
            Expr::Fix(f) => f.body.is_pseudo_value(),
            e => e.is_value(),
        }
    }

    /// Free variables, respecting lambda and fix binders.
    pub fn free_vars(&self) -> BTreeSet<String> {
        fn go(e: &Expr, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
            match e {
                Expr::Unit | Expr::Bool(_) | Expr::Loc(_) => {}
                Expr::Var(x) => {
                    if !bound.iter().any(|b| b == x) {
                        out.insert(x.clone());
                    }
                }
                Expr::Abs(a) => {
                    bound.push(a.var.clone());
                    go(&a.body, bound, out);
                    bound.pop();
                }
                Expr::Fix(f) => {
                    bound.push(f.var.clone());
                    go(&f.body, bound, out);
                    bound.pop();
                }
                Expr::App(a, b) | Expr::Seq(a, b) | Expr::Assign(a, b) => {
                    go(a, bound, out);
                    go(b, bound, out);
                }
                Expr::Deref(t) => go(t, bound, out),
                Expr::RefCreate { init, .. } => go(init, bound, out),
                Expr::Cond { guard, then_br, else_br } => {
                    go(guard, bound, out);
                    go(then_br, bound, out);
                    go(else_br, bound, out);
                }
                Expr::Flow { body, .. } => go(body, bound, out),
                Expr::Allowed { then_br, else_br, .. } => {
                    go(then_br, bound, out);
                    go(else_br, bound, out);
                }
                Expr::Thread { body, .. } => go(body, bound, out),
            }
        }
        let mut out = BTreeSet::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// Reference names occurring in the expression.
    pub fn ref_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Loc(a) = e {
                out.insert(a.clone());
            }
        });
        out
    }

    /// Domain names occurring under thread creations.
    pub fn domain_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Thread { domain, .. } = e {
                out.insert(domain.clone());
            }
        });
        out
    }

    fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unit | Expr::Bool(_) | Expr::Var(_) | Expr::Loc(_) => {}
            Expr::Abs(a) => a.body.walk(f),
            Expr::Fix(x) => x.body.walk(f),
            Expr::App(a, b) | Expr::Seq(a, b) | Expr::Assign(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Deref(t) => t.walk(f),
            Expr::RefCreate { init, .. } => init.walk(f),
            Expr::Cond { guard, then_br, else_br } => {
                guard.walk(f);
                then_br.walk(f);
                else_br.walk(f);
            }
            Expr::Flow { body, .. } => body.walk(f),
            Expr::Allowed { then_br, else_br, .. } => {
                then_br.walk(f);
                else_br.walk(f);
            }
            Expr::Thread { body, .. } => body.walk(f),
        }
    }

    /// Whether any Thread node carries a `with` annotation.
    pub fn has_annotations(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let Expr::Thread { annot: Some(_), .. } = e {
                found = true;
            }
        });
        found
    }
}

/// Capture-avoiding substitution of a closed value for a variable.
///
/// The replacement must be closed; every caller substitutes either a
/// runtime value or a fixpoint of one, so only shadowing needs care.
pub fn subst(e: &Expr, x: &str, v: &Expr) -> Expr {
    debug_assert!(v.free_vars().is_empty(), "substitution payload must be closed");
    match e {
        Expr::Unit | Expr::Bool(_) | Expr::Loc(_) => e.clone(),
        Expr::Var(y) => {
            if y == x {
                v.clone()
            } else {
                e.clone()
            }
        }
        Expr::Abs(a) => {
            if a.var == x {
                e.clone()
            } else {
                Expr::Abs(Box::new(Abs {
                    var: a.var.clone(),
                    param: a.param.clone(),
                    latent: a.latent.clone(),
                    body: subst(&a.body, x, v),
                }))
            }
        }
        Expr::Fix(f) => {
            if f.var == x {
                e.clone()
            } else {
                Expr::Fix(Box::new(Fix {
                    var: f.var.clone(),
                    self_type: f.self_type.clone(),
                    body: subst(&f.body, x, v),
                }))
            }
        }
        Expr::App(a, b) => Expr::App(Box::new(subst(a, x, v)), Box::new(subst(b, x, v))),
        Expr::Seq(a, b) => Expr::Seq(Box::new(subst(a, x, v)), Box::new(subst(b, x, v))),
        Expr::Deref(t) => Expr::Deref(Box::new(subst(t, x, v))),
        Expr::Assign(a, b) => Expr::Assign(Box::new(subst(a, x, v)), Box::new(subst(b, x, v))),
        Expr::RefCreate { level, vtype, init } => Expr::RefCreate {
            level: level.clone(),
            vtype: vtype.clone(),
            init: Box::new(subst(init, x, v)),
        },
        Expr::Cond { guard, then_br, else_br } => Expr::Cond {
            guard: Box::new(subst(guard, x, v)),
            then_br: Box::new(subst(then_br, x, v)),
            else_br: Box::new(subst(else_br, x, v)),
        },
        Expr::Flow { policy, body } => Expr::Flow {
            policy: policy.clone(),
            body: Box::new(subst(body, x, v)),
        },
        Expr::Allowed { policy, then_br, else_br } => Expr::Allowed {
            policy: policy.clone(),
            then_br: Box::new(subst(then_br, x, v)),
            else_br: Box::new(subst(else_br, x, v)),
        },
        Expr::Thread { level, body, domain, annot } => Expr::Thread {
            level: level.clone(),
            body: Box::new(subst(body, x, v)),
            domain: domain.clone(),
            annot: annot.clone(),
        },
    }
}

/// One evaluation-context frame. A context is a list of frames, outermost
/// first, with the hole at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// `[] N`
    AppL(Expr),
    /// `V []`
    AppR(Expr),
    /// `[]; N`
    SeqL(Expr),
    /// `ref<l,T> []`
    RefArg { level: Level, vtype: Type },
    /// `![]`
    DerefArg,
    /// `[] := N`
    AssignL(Expr),
    /// `V := []`
    AssignR(Expr),
    /// `if [] then Nt else Nf`
    CondGuard { then_br: Expr, else_br: Expr },
    /// `flow F in []`
    FlowFrame(Policy),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalContext(pub Vec<Frame>);

impl EvalContext {
    pub fn hole() -> Self {
        EvalContext(Vec::new())
    }

    pub fn is_hole(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reconstruct `E[e]`.
pub fn plug(ctx: &EvalContext, e: Expr) -> Expr {
    let mut out = e;
    for frame in ctx.0.iter().rev() {
        out = match frame.clone() {
            Frame::AppL(n) => Expr::App(Box::new(out), Box::new(n)),
            Frame::AppR(v) => Expr::App(Box::new(v), Box::new(out)),
            Frame::SeqL(n) => Expr::Seq(Box::new(out), Box::new(n)),
            Frame::RefArg { level, vtype } => Expr::RefCreate {
                level,
                vtype,
                init: Box::new(out),
            },
            Frame::DerefArg => Expr::Deref(Box::new(out)),
            Frame::AssignL(n) => Expr::Assign(Box::new(out), Box::new(n)),
            Frame::AssignR(v) => Expr::Assign(Box::new(v), Box::new(out)),
            Frame::CondGuard { then_br, else_br } => Expr::Cond {
                guard: Box::new(out),
                then_br: Box::new(then_br),
                else_br: Box::new(else_br),
            },
            Frame::FlowFrame(p) => Expr::Flow {
                policy: p,
                body: Box::new(out),
            },
        };
    }
    out
}

/// The policy declared by a context: the meet of the policies on its
/// spine of flow frames, starting from the empty policy at the hole.
pub fn context_policy(ctx: &EvalContext) -> Policy {
    let mut acc = Policy::top();
    for frame in &ctx.0 {
        if let Frame::FlowFrame(p) = frame {
            acc = policy_meet(&acc, p);
        }
    }
    acc
}

/// Result of splitting an expression at its unique active position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Split {
    /// The expression is a value; nothing to do.
    Value,
    /// `E[redex]` with a reducible-shaped redex.
    Redex(EvalContext, Expr),
    /// The active position holds something no rule matches, e.g. the
    /// application of a non-function or a free variable.
    Stuck(EvalContext, Expr, String),
}

/// Split an expression into evaluation context and redex.
pub fn split(e: &Expr) -> Split {
    match e {
        Expr::Unit | Expr::Bool(_) | Expr::Abs(_) | Expr::Loc(_) => Split::Value,
        Expr::Var(x) => Split::Stuck(
            EvalContext::hole(),
            e.clone(),
            format!("free variable `{x}`"),
        ),
        Expr::Fix(_) => Split::Redex(EvalContext::hole(), e.clone()),
        Expr::App(f, a) => {
            if !f.is_value() {
                descend(f, Frame::AppL((**a).clone()))
            } else if !a.is_value() {
                descend(a, Frame::AppR((**f).clone()))
            } else if matches!(**f, Expr::Abs(_)) {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                Split::Stuck(
                    EvalContext::hole(),
                    e.clone(),
                    "application of a non-function value".into(),
                )
            }
        }
        Expr::Seq(a, b) => {
            if a.is_value() {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                descend(a, Frame::SeqL((**b).clone()))
            }
        }
        Expr::Deref(t) => {
            if !t.is_value() {
                descend(t, Frame::DerefArg)
            } else if matches!(**t, Expr::Loc(_)) {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                Split::Stuck(
                    EvalContext::hole(),
                    e.clone(),
                    "dereference of a non-reference value".into(),
                )
            }
        }
        Expr::Assign(t, v) => {
            if !t.is_value() {
                descend(t, Frame::AssignL((**v).clone()))
            } else if !v.is_value() {
                descend(v, Frame::AssignR((**t).clone()))
            } else if matches!(**t, Expr::Loc(_)) {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                Split::Stuck(
                    EvalContext::hole(),
                    e.clone(),
                    "assignment to a non-reference value".into(),
                )
            }
        }
        Expr::RefCreate { level, vtype, init } => {
            if init.is_value() {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                descend(
                    init,
                    Frame::RefArg {
                        level: level.clone(),
                        vtype: vtype.clone(),
                    },
                )
            }
        }
        Expr::Cond { guard, then_br, else_br } => {
            if !guard.is_value() {
                descend(
                    guard,
                    Frame::CondGuard {
                        then_br: (**then_br).clone(),
                        else_br: (**else_br).clone(),
                    },
                )
            } else if matches!(**guard, Expr::Bool(_)) {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                Split::Stuck(
                    EvalContext::hole(),
                    e.clone(),
                    "conditional on a non-boolean value".into(),
                )
            }
        }
        Expr::Flow { policy, body } => {
            if body.is_value() {
                Split::Redex(EvalContext::hole(), e.clone())
            } else {
                descend(body, Frame::FlowFrame(policy.clone()))
            }
        }
        Expr::Allowed { .. } | Expr::Thread { .. } => {
            Split::Redex(EvalContext::hole(), e.clone())
        }
    }
}

fn descend(sub: &Expr, frame: Frame) -> Split {
    match split(sub) {
        Split::Value => unreachable!("descend is only called on non-values"),
        Split::Redex(mut ctx, r) => {
            ctx.0.insert(0, frame);
            Split::Redex(ctx, r)
        }
        Split::Stuck(mut ctx, c, why) => {
            ctx.0.insert(0, frame);
            Split::Stuck(ctx, c, why)
        }
    }
}

/// Unique decomposition into context and reducible-shaped redex; absent
/// for values and stuck expressions.
pub fn decompose(e: &Expr) -> Option<(EvalContext, Expr)> {
    match split(e) {
        Split::Redex(ctx, r) => Some((ctx, r)),
        _ => None,
    }
}

/// Strip every Thread annotation, everywhere, binders and all.
pub fn erase_annotations(e: &Expr) -> Expr {
    match e {
        Expr::Unit | Expr::Bool(_) | Expr::Var(_) | Expr::Loc(_) => e.clone(),
        Expr::Abs(a) => Expr::Abs(Box::new(Abs {
            var: a.var.clone(),
            param: a.param.clone(),
            latent: a.latent.clone(),
            body: erase_annotations(&a.body),
        })),
        Expr::Fix(f) => Expr::Fix(Box::new(Fix {
            var: f.var.clone(),
            self_type: f.self_type.clone(),
            body: erase_annotations(&f.body),
        })),
        Expr::App(a, b) => Expr::App(
            Box::new(erase_annotations(a)),
            Box::new(erase_annotations(b)),
        ),
        Expr::Seq(a, b) => Expr::Seq(
            Box::new(erase_annotations(a)),
            Box::new(erase_annotations(b)),
        ),
        Expr::Deref(t) => Expr::Deref(Box::new(erase_annotations(t))),
        Expr::Assign(a, b) => Expr::Assign(
            Box::new(erase_annotations(a)),
            Box::new(erase_annotations(b)),
        ),
        Expr::RefCreate { level, vtype, init } => Expr::RefCreate {
            level: level.clone(),
            vtype: vtype.clone(),
            init: Box::new(erase_annotations(init)),
        },
        Expr::Cond { guard, then_br, else_br } => Expr::Cond {
            guard: Box::new(erase_annotations(guard)),
            then_br: Box::new(erase_annotations(then_br)),
            else_br: Box::new(erase_annotations(else_br)),
        },
        Expr::Flow { policy, body } => Expr::Flow {
            policy: policy.clone(),
            body: Box::new(erase_annotations(body)),
        },
        Expr::Allowed { policy, then_br, else_br } => Expr::Allowed {
            policy: policy.clone(),
            then_br: Box::new(erase_annotations(then_br)),
            else_br: Box::new(erase_annotations(else_br)),
        },
        Expr::Thread { level, body, domain, .. } => Expr::Thread {
            level: level.clone(),
            body: Box::new(erase_annotations(body)),
            domain: domain.clone(),
            annot: None,
        },
    }
}

/// Render an expression in the concrete syntax. `parse_program` of the
/// result reproduces the expression exactly.
pub fn pretty(e: &Expr) -> String {
    print::pretty_expr(e)
}

/// Render a type in the concrete syntax.
pub fn pretty_type(t: &Type) -> String {
    print::pretty_ty(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Expr {
        parse_program(src).unwrap()
    }

    #[test]
    fn unit_parses() {
        assert_eq!(p("()"), Expr::Unit);
    }

    #[test]
    fn flow_of_unit_parses() {
        assert_eq!(
            p("flow {p<q} in ()"),
            Expr::Flow {
                policy: Policy::new([("p", "q")]),
                body: Box::new(Expr::Unit),
            }
        );
    }

    #[test]
    fn allowed_declassification_program_parses() {
        let e = p("thread<{H}> (allowed {H<L} then (flow {H<L} in bL := !aH) else planB ()) at d");
        match &e {
            Expr::Thread { level, body, domain, annot } => {
                assert_eq!(*level, Level::new(["H"]));
                assert_eq!(domain, "d");
                assert!(annot.is_none());
                match &**body {
                    Expr::Allowed { policy, then_br, .. } => {
                        assert_eq!(*policy, Policy::new([("H", "L")]));
                        assert_eq!(
                            **then_br,
                            Expr::Flow {
                                policy: Policy::new([("H", "L")]),
                                body: Box::new(Expr::Assign(
                                    Box::new(Expr::Var("bL".into())),
                                    Box::new(Expr::Deref(Box::new(Expr::Var("aH".into())))),
                                )),
                            }
                        );
                    }
                    other => panic!("unexpected body {other:?}"),
                }
            }
            other => panic!("unexpected parse {other:?}"),
        }
    }

    #[test]
    fn seq_of_value_is_a_root_redex() {
        let e = p("(); ()");
        match split(&e) {
            Split::Redex(ctx, r) => {
                assert!(ctx.is_hole());
                assert_eq!(r, e);
            }
            other => panic!("unexpected split {other:?}"),
        }
    }

    #[test]
    fn flow_wraps_a_single_frame() {
        let e = p("flow {p<q} in ((); ())");
        match split(&e) {
            Split::Redex(ctx, r) => {
                assert_eq!(ctx.0, vec![Frame::FlowFrame(Policy::new([("p", "q")]))]);
                assert_eq!(r, p("(); ()"));
                assert_eq!(plug(&ctx, r), e);
            }
            other => panic!("unexpected split {other:?}"),
        }
    }

    #[test]
    fn lambdas_are_values() {
        let e = p("\\x : bool . x");
        assert!(e.is_value());
        assert_eq!(decompose(&e), None);
    }

    #[test]
    fn context_policy_meets_the_spine() {
        assert_eq!(context_policy(&EvalContext::hole()), Policy::top());
        let one = EvalContext(vec![Frame::FlowFrame(Policy::new([("p", "q")]))]);
        assert_eq!(context_policy(&one), Policy::new([("p", "q")]));
        let two = EvalContext(vec![
            Frame::FlowFrame(Policy::new([("p", "q")])),
            Frame::FlowFrame(Policy::new([("q", "r")])),
        ]);
        assert_eq!(context_policy(&two), Policy::new([("p", "q"), ("q", "r")]));
    }

    #[test]
    fn erase_strips_thread_annotations_only() {
        let annotated = p("thread<{p}> (flow {p<q} in a := true) at d with {p<q}");
        let plain = p("thread<{p}> (flow {p<q} in a := true) at d");
        assert_eq!(erase_annotations(&annotated), plain);
        let no_thread = p("if !a then b := true else b := false");
        assert_eq!(erase_annotations(&no_thread), no_thread);
    }

    #[test]
    fn stuck_shapes_are_not_redexes() {
        let e = p("true false");
        assert_eq!(decompose(&e), None);
        assert!(matches!(split(&e), Split::Stuck(_, _, _)));
        let f = p("!true");
        assert!(matches!(split(&f), Split::Stuck(_, _, _)));
    }

    #[test]
    fn application_argument_evaluates_after_function() {
        let e = p("(\\x : bool . x) (if true then false else true)");
        match split(&e) {
            Split::Redex(ctx, r) => {
                assert_eq!(ctx.0.len(), 1);
                assert!(matches!(ctx.0[0], Frame::AppR(_)));
                assert_eq!(r, p("if true then false else true"));
            }
            other => panic!("unexpected split {other:?}"),
        }
    }
}
