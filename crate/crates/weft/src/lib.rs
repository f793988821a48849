//! Toolkit for a calculus of mobile threads under per-domain flow policies.
//!
//! The crate provides the security lattice (principal-set levels, relation
//! flow policies), the syntax and small-step semantics of the calculus in
//! three migration-control modes, four type systems (a flow-sensitive
//! system with security effects, static and relaxed confinement systems,
//! and an informative system computing declassification effects), and
//! bounded checkers for the semantic security properties these systems
//! enforce.

pub mod confinement;
pub mod decl_effect;
pub mod lattice;
pub mod property_check;
pub mod semantics;
pub mod syntax;
pub mod typecheck_dnd;
