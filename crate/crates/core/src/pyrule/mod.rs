//! PyRule frontend: a closed, never-executed rule language with Python-like
//! surface syntax.
//!
//! ```text
//! @rule("r7")
//! def r7(ctx):
//!     if asks_for(ctx.msg, "explanation"):
//!         require(reply_format("markdown"))
//! ```

pub mod ast;
mod lexer;
mod parser;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::*;
pub use parser::{parse_file, parse_rule};
pub use validate::{validate_vocabulary_use, Diagnostic, DiagnosticCode};

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Constructs outside the accepted normal form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Construct {
    Loop(&'static str),
    Comprehension,
    Recursion(String),
    Mutation(String),
    DynamicDispatch(String),
    Import,
    NonWhitelistedCall(String),
    NestedDefinition,
    Lambda,
    ControlFlow(String),
    Subscript,
    Operator(String),
    ConditionalExpression,
}

impl fmt::Display for Construct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Construct::Loop(kw) => write!(f, "`{kw}` loop"),
            Construct::Comprehension => f.write_str("comprehension (loop)"),
            Construct::Recursion(name) => write!(f, "recursive call to `{name}`"),
            Construct::Mutation(what) => write!(f, "mutation ({what})"),
            Construct::DynamicDispatch(what) => write!(f, "dynamic dispatch ({what})"),
            Construct::Import => f.write_str("import"),
            Construct::NonWhitelistedCall(name) => write!(f, "call to non-whitelisted `{name}`"),
            Construct::NestedDefinition => f.write_str("nested definition"),
            Construct::Lambda => f.write_str("lambda"),
            Construct::ControlFlow(kw) => write!(f, "`{kw}` statement"),
            Construct::Subscript => f.write_str("subscript"),
            Construct::Operator(op) => write!(f, "operator `{op}`"),
            Construct::ConditionalExpression => f.write_str("conditional expression"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("rejected construct: {0}")]
    Rejected(Construct),
    #[error("missing @rule(\"<id>\") decorator")]
    MissingDecorator,
    #[error("duplicate @rule decorator")]
    DuplicateDecorator,
    #[error("unsupported decorator `@{0}`")]
    UnsupportedDecorator(String),
    #[error("rule function must take exactly one context parameter, found {0}")]
    WrongArity(usize),
    #[error("no signed primitive call present")]
    NoSignedCall,
    #[error("statement must be a signed primitive call such as require(...)")]
    UnsignedStatement,
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("context field `{0}` is not one of msg, trace, env")]
    UnknownContextField(String),
    #[error("expected exactly one rule, found {0}")]
    RuleCount(usize),
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pos: Pos,
}

impl ParseError {
    pub fn rejected(&self) -> Option<&Construct> {
        match &self.kind {
            ParseErrorKind::Rejected(c) => Some(c),
            _ => None,
        }
    }
}
