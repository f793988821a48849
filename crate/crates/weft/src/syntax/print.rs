//! Canonical printer. Emits the minimal-surprise parenthesization: one
//! level of parens wherever a child sits at looser precedence than its
//! position requires, so printing then parsing reproduces the tree.

use super::{Expr, Latent, Type};
use crate::lattice::Policy;

/// Precedence of an expression's own form. Loosest 0 (sequencing and the
/// prefix forms), then assignment, application, and the unary prefixes.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Seq(..)
        | Expr::Abs(_)
        | Expr::Fix(_)
        | Expr::Cond { .. }
        | Expr::Flow { .. }
        | Expr::Allowed { .. }
        | Expr::Thread { .. } => 0,
        Expr::Assign(..) => 1,
        Expr::App(..) => 2,
        Expr::Deref(_) | Expr::RefCreate { .. } => 3,
        Expr::Unit | Expr::Bool(_) | Expr::Var(_) | Expr::Loc(_) => 4,
    }
}

fn policy_str(p: &Policy) -> String {
    if p.is_bottom_marker() {
        "bot".to_owned()
    } else {
        p.to_string()
    }
}

fn latent_str(l: &Latent) -> String {
    let mut fields = Vec::new();
    if let Some(j) = &l.thread_level {
        fields.push(format!("j={j}"));
    }
    if let Some(f) = &l.context {
        fields.push(format!("F={}", policy_str(f)));
    }
    if let Some(e) = &l.effect {
        fields.push(format!("eff=({},{},{})", e.reading, e.writing, e.termination));
    }
    if let Some(a) = &l.allowed {
        fields.push(format!("A={}", policy_str(a)));
    }
    if let Some(s) = &l.decl {
        fields.push(format!("s={}", policy_str(s)));
    }
    fields.join("; ")
}

pub fn pretty_ty(t: &Type) -> String {
    ty(t, 0)
}

fn ty(t: &Type, min: u8) -> String {
    match t {
        Type::Unit => "unit".to_owned(),
        Type::Bool => "bool".to_owned(),
        Type::Ref(inner, lvl) => format!("ref<{lvl}, {}>", ty(inner, 0)),
        Type::Arrow(p, r, latent) => {
            let arrow = if latent.is_empty() {
                "->".to_owned()
            } else {
                format!("-[{}]->", latent_str(latent))
            };
            let s = format!("{} {arrow} {}", ty(p, 1), ty(r, 0));
            if min > 0 {
                format!("({s})")
            } else {
                s
            }
        }
    }
}

pub fn pretty_expr(e: &Expr) -> String {
    go(e, 0)
}

fn go(e: &Expr, min: u8) -> String {
    let s = match e {
        Expr::Unit => "()".to_owned(),
        Expr::Bool(true) => "true".to_owned(),
        Expr::Bool(false) => "false".to_owned(),
        Expr::Var(x) => x.clone(),
        Expr::Loc(a) => a.clone(),
        Expr::Abs(a) => {
            let block = if a.latent.is_empty() {
                String::new()
            } else {
                format!("[{}] ", latent_str(&a.latent))
            };
            format!("\\{block}{} : {} . {}", a.var, ty(&a.param, 0), go(&a.body, 0))
        }
        Expr::Fix(f) => {
            format!("fix {} : {} . {}", f.var, ty(&f.self_type, 0), go(&f.body, 0))
        }
        Expr::App(f, a) => format!("{} {}", go(f, 2), go(a, 3)),
        Expr::Seq(a, b) => format!("{}; {}", go(a, 1), go(b, 0)),
        Expr::Deref(t) => format!("!{}", go(t, 3)),
        Expr::Assign(t, v) => format!("{} := {}", go(t, 2), go(v, 1)),
        Expr::RefCreate { level, vtype, init } => {
            format!("ref<{level}, {}> {}", ty(vtype, 0), go(init, 3))
        }
        Expr::Cond { guard, then_br, else_br } => format!(
            "if {} then {} else {}",
            go(guard, 1),
            go(then_br, 1),
            go(else_br, 1)
        ),
        Expr::Flow { policy, body } => {
            format!("flow {} in {}", policy_str(policy), go(body, 0))
        }
        Expr::Allowed { policy, then_br, else_br } => format!(
            "allowed {} then {} else {}",
            policy_str(policy),
            go(then_br, 1),
            go(else_br, 1)
        ),
        Expr::Thread { level, body, domain, annot } => {
            let with = match annot {
                Some(f) => format!(" with {}", policy_str(f)),
                None => String::new(),
            };
            format!("thread<{level}> {} at {domain}{with}", go(body, 1))
        }
    };
    if level(e) < min {
        format!("({s})")
    } else {
        s
    }
}
