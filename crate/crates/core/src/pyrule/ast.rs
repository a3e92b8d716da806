use serde::{Deserialize, Serialize};

use super::Pos;
use crate::formula::CmpOp;
use crate::registry::SortName;
use crate::registry::ForceSign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAst {
    pub rule_id: String,
    pub function_name: String,
    pub context_param: String,
    pub body: Block,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    If(CondNode),
    Signed(SignedCallNode),
    Pass,
}

/// `if`/`else`; an `elif` chain nests as an `else` block holding one `If`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondNode {
    pub condition: Expr,
    pub then_block: Block,
    pub else_block: Option<Block>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedCallNode {
    pub sign: ForceSign,
    pub primitive: String,
    pub args: Vec<Arg>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arg {
    pub keyword: Option<String>,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallExpr {
    pub name: String,
    pub args: Vec<Arg>,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    Cmp(CmpOp),
    In,
    NotIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Bool(bool),
    Int(i64),
    Str(String),
    /// List, tuple, or set literal.
    List(Vec<Expr>),
    SortRef(SortName),
    /// Attribute path below the context parameter, e.g. `["env", "repo"]`.
    Context(Vec<String>),
    Call(CallExpr),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Compare {
        op: CompareOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Block {
    /// Signed calls in source order: depth-first, then-before-else.
    pub fn signed_calls(&self) -> Vec<&SignedCallNode> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a SignedCallNode>) {
        for s in &self.stmts {
            match s {
                Stmt::Signed(c) => out.push(c),
                Stmt::If(c) => {
                    c.then_block.collect(out);
                    if let Some(e) = &c.else_block {
                        e.collect(out);
                    }
                }
                Stmt::Pass => {}
            }
        }
    }
}

impl Expr {
    pub fn visit_calls<'a>(&'a self, f: &mut dyn FnMut(&'a CallExpr)) {
        match self {
            Expr::Call(c) => {
                f(c);
                for a in &c.args {
                    a.value.visit_calls(f);
                }
            }
            Expr::List(items) | Expr::And(items) | Expr::Or(items) => items.iter().for_each(|e| e.visit_calls(f)),
            Expr::Not(e) => e.visit_calls(f),
            Expr::Compare { lhs, rhs, .. } => {
                lhs.visit_calls(f);
                rhs.visit_calls(f);
            }
            _ => {}
        }
    }
}
