use std::collections::BTreeSet;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{Construct, ParseError, ParseErrorKind, Pos};
use crate::formula::CmpOp;
use crate::registry::{ForceSign, SortName, SurfaceRegistry};

const CONTEXT_FIELDS: [&str; 3] = ["msg", "trace", "env"];

const DYNAMIC_NAMES: [&str; 15] = [
    "eval", "exec", "getattr", "setattr", "delattr", "hasattr", "compile", "__import__", "globals", "locals",
    "vars", "type", "open", "callable", "apply",
];

const ASSIGN_OPS: [&str; 13] = ["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "**=", "//=", ">>=", "<<="];

const ARITH_OPS: [&str; 11] = ["+", "-", "*", "/", "%", "**", "//", "|", "&", "^", "@"];

/// Parses a file holding one or more decorated rules. Rule ids must be
/// unique within the file.
pub fn parse_file(source: &str, vocab: &SurfaceRegistry) -> Result<Vec<RuleAst>, ParseError> {
    let toks = tokenize(source)?;
    let def_names = toks
        .windows(2)
        .filter_map(|w| match (&w[0].tok, &w[1].tok) {
            (Tok::Name(k), Tok::Name(n)) if k == "def" => Some(n.clone()),
            _ => None,
        })
        .collect();
    let mut p = Parser { toks, i: 0, vocab, def_names, ctx: String::new() };
    let rules = p.file()?;
    let mut seen = BTreeSet::new();
    for r in &rules {
        if !seen.insert(r.rule_id.clone()) {
            return Err(ParseError { kind: ParseErrorKind::DuplicateRuleId(r.rule_id.clone()), pos: r.pos });
        }
    }
    Ok(rules)
}

/// Parses exactly one decorated rule. Never executes anything.
pub fn parse_rule(source: &str, vocab: &SurfaceRegistry) -> Result<RuleAst, ParseError> {
    let mut rules = parse_file(source, vocab)?;
    if rules.len() != 1 {
        let pos = rules.get(1).map(|r| r.pos).unwrap_or(Pos { line: 1, col: 1 });
        return Err(ParseError { kind: ParseErrorKind::RuleCount(rules.len()), pos });
    }
    Ok(rules.pop().unwrap())
}

struct Parser<'a> {
    toks: Vec<Token>,
    i: usize,
    vocab: &'a SurfaceRegistry,
    def_names: BTreeSet<String>,
    ctx: String,
}

type PResult<T> = Result<T, ParseError>;

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let j = (self.i + off).min(self.toks.len() - 1);
        &self.toks[j].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn is_name(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == name)
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError { kind: ParseErrorKind::Syntax(msg.into()), pos: self.pos() })
    }

    fn reject<T>(&self, c: Construct) -> PResult<T> {
        Err(ParseError { kind: ParseErrorKind::Rejected(c), pos: self.pos() })
    }

    fn fail<T>(&self, kind: ParseErrorKind, pos: Pos) -> PResult<T> {
        Err(ParseError { kind, pos })
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.is_op(op) {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected `{op}`, found {}", describe(self.peek())))
        }
    }

    fn expect_name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Name(n) => {
                self.bump();
                Ok(n)
            }
            other => self.syntax(format!("expected a name, found {}", describe(&other))),
        }
    }

    fn expect_newline(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof => Ok(()),
            other => self.syntax(format!("expected end of line, found {}", describe(other))),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    fn file(&mut self) -> PResult<Vec<RuleAst>> {
        let mut rules = Vec::new();
        loop {
            self.skip_newlines();
            if matches!(self.peek(), Tok::Eof) {
                return Ok(rules);
            }
            rules.push(self.rule_def()?);
        }
    }

    fn rule_def(&mut self) -> PResult<RuleAst> {
        let start = self.pos();
        let mut rule_id: Option<String> = None;
        while self.is_op("@") {
            let pos = self.pos();
            self.bump();
            let name = self.expect_name()?;
            if name != "rule" {
                return self.fail(ParseErrorKind::UnsupportedDecorator(name), pos);
            }
            self.expect_op("(")?;
            let id = match self.bump() {
                Tok::Str(s) => s,
                _ => return self.fail(ParseErrorKind::Syntax("@rule takes one string id".into()), pos),
            };
            self.expect_op(")")?;
            self.expect_newline()?;
            self.skip_newlines();
            if rule_id.is_some() {
                return self.fail(ParseErrorKind::DuplicateDecorator, pos);
            }
            rule_id = Some(id);
        }
        self.reject_statement_keyword()?;
        if !self.is_name("def") {
            return self.syntax(format!("expected a decorated rule definition, found {}", describe(self.peek())));
        }
        let def_pos = self.pos();
        let Some(rule_id) = rule_id else {
            return self.fail(ParseErrorKind::MissingDecorator, def_pos);
        };
        self.bump();
        let function_name = self.expect_name()?;
        self.expect_op("(")?;
        let mut params = Vec::new();
        while !self.is_op(")") {
            if self.is_op("*") || self.is_op("**") {
                return self.reject(Construct::DynamicDispatch("star parameters".into()));
            }
            params.push(self.expect_name()?);
            if self.is_op("=") || self.is_op(":") {
                return self.syntax("parameter defaults and annotations are not supported");
            }
            if !self.is_op(")") {
                self.expect_op(",")?;
            }
        }
        self.bump();
        if params.len() != 1 {
            return self.fail(ParseErrorKind::WrongArity(params.len()), def_pos);
        }
        if self.is_op("->") {
            return self.syntax("return annotations are not supported");
        }
        self.expect_op(":")?;
        self.ctx = params.pop().unwrap();
        let body = if matches!(self.peek(), Tok::Newline) && !matches!(self.peek_at(1), Tok::Indent) {
            return self.fail(ParseErrorKind::NoSignedCall, def_pos);
        } else {
            self.suite()?
        };
        if body.signed_calls().is_empty() {
            return self.fail(ParseErrorKind::NoSignedCall, def_pos);
        }
        Ok(RuleAst { rule_id, function_name, context_param: self.ctx.clone(), body, pos: start })
    }

    fn suite(&mut self) -> PResult<Block> {
        if matches!(self.peek(), Tok::Newline) {
            self.bump();
            if !matches!(self.peek(), Tok::Indent) {
                return self.syntax("expected an indented block");
            }
            self.bump();
            let mut stmts = Vec::new();
            while !matches!(self.peek(), Tok::Dedent | Tok::Eof) {
                stmts.push(self.stmt()?);
            }
            if matches!(self.peek(), Tok::Dedent) {
                self.bump();
            }
            Ok(Block { stmts })
        } else {
            Ok(Block { stmts: vec![self.stmt()?] })
        }
    }

    fn reject_statement_keyword(&self) -> PResult<()> {
        let Tok::Name(kw) = self.peek() else { return Ok(()) };
        match kw.as_str() {
            "while" => self.reject(Construct::Loop("while")),
            "for" => self.reject(Construct::Loop("for")),
            "async" => self.reject(Construct::ControlFlow("async".into())),
            "import" | "from" => self.reject(Construct::Import),
            "class" => self.reject(Construct::NestedDefinition),
            "lambda" => self.reject(Construct::Lambda),
            "global" | "nonlocal" | "del" => self.reject(Construct::Mutation(kw.clone())),
            "return" | "yield" | "break" | "continue" | "raise" | "try" | "except" | "finally" | "with"
            | "assert" | "await" => self.reject(Construct::ControlFlow(kw.clone())),
            _ => Ok(()),
        }
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        self.reject_statement_keyword()?;
        if self.is_name("def") || self.is_op("@") {
            return self.reject(Construct::NestedDefinition);
        }
        if self.is_name("if") {
            return Ok(Stmt::If(self.if_stmt()?));
        }
        if self.is_name("pass") {
            self.bump();
            self.expect_newline()?;
            return Ok(Stmt::Pass);
        }
        if self.is_name("elif") || self.is_name("else") {
            return self.syntax("`else` without a matching `if`");
        }
        self.scan_for_assignment()?;
        let pos = self.pos();
        if let (Tok::Name(n), Tok::Op("(")) = (self.peek().clone(), self.peek_at(1)) {
            if let Some(sign) = ForceSign::from_name(&n) {
                let call = self.signed_call(sign, pos)?;
                self.expect_newline()?;
                return Ok(Stmt::Signed(call));
            }
        }
        // Anything else is rejected; parse it to name the offending construct.
        let expr = self.test()?;
        match expr {
            Expr::Call(_) => self.fail(ParseErrorKind::UnsignedStatement, pos),
            _ => self.fail(ParseErrorKind::UnsignedStatement, pos),
        }
    }

    /// Rejects assignment anywhere in the current logical line.
    fn scan_for_assignment(&self) -> PResult<()> {
        let mut depth = 0usize;
        for t in &self.toks[self.i..] {
            match &t.tok {
                Tok::Newline | Tok::Eof => break,
                Tok::Op(":=") => {
                    return Err(ParseError { kind: ParseErrorKind::Rejected(Construct::Mutation(":=".into())), pos: t.pos })
                }
                Tok::Op("(" | "[" | "{") => depth += 1,
                Tok::Op(")" | "]" | "}") => depth = depth.saturating_sub(1),
                Tok::Op(op) if depth == 0 && (ASSIGN_OPS.contains(op) || *op == ":") => {
                    return Err(ParseError {
                        kind: ParseErrorKind::Rejected(Construct::Mutation(format!("assignment `{op}`"))),
                        pos: t.pos,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn signed_call(&mut self, sign: ForceSign, pos: Pos) -> PResult<SignedCallNode> {
        self.bump();
        self.expect_op("(")?;
        let inner_pos = self.pos();
        let primitive = match (self.peek().clone(), self.peek_at(1).clone()) {
            (Tok::Name(n), Tok::Op("(")) => n,
            (Tok::Name(_), Tok::Op(".")) => {
                return self.reject(Construct::DynamicDispatch("method call as consequent".into()))
            }
            _ => return self.syntax(format!("`{}` must wrap exactly one primitive call", sign.name())),
        };
        if ForceSign::from_name(&primitive).is_some() {
            return self.syntax("force signs cannot be nested");
        }
        self.check_callee(&primitive, inner_pos)?;
        self.bump();
        let args = self.call_args()?;
        self.reject_postfix()?;
        if !self.is_op(")") {
            return self.syntax(format!("`{}` must wrap exactly one primitive call", sign.name()));
        }
        self.bump();
        self.reject_postfix()?;
        Ok(SignedCallNode { sign, primitive, args, pos })
    }

    fn check_callee(&self, name: &str, pos: Pos) -> PResult<()> {
        if self.def_names.contains(name) {
            return self.fail(ParseErrorKind::Rejected(Construct::Recursion(name.to_string())), pos);
        }
        if DYNAMIC_NAMES.contains(&name) {
            return self.fail(ParseErrorKind::Rejected(Construct::DynamicDispatch(name.to_string())), pos);
        }
        Ok(())
    }

    fn reject_postfix(&self) -> PResult<()> {
        if self.is_op(".") || self.is_op("(") {
            return self.reject(Construct::DynamicDispatch("call or attribute on a call result".into()));
        }
        if self.is_op("[") {
            return self.reject(Construct::Subscript);
        }
        Ok(())
    }

    fn if_stmt(&mut self) -> PResult<CondNode> {
        let pos = self.pos();
        self.bump();
        let condition = self.test()?;
        self.expect_op(":")?;
        let then_block = self.suite()?;
        let else_block = if self.is_name("elif") {
            Some(Block { stmts: vec![Stmt::If(self.if_stmt()?)] })
        } else if self.is_name("else") {
            self.bump();
            self.expect_op(":")?;
            Some(self.suite()?)
        } else {
            None
        };
        Ok(CondNode { condition, then_block, else_block, pos })
    }

    fn test(&mut self) -> PResult<Expr> {
        if self.is_name("lambda") {
            return self.reject(Construct::Lambda);
        }
        let e = self.or_test()?;
        if self.is_name("if") {
            return self.reject(Construct::ConditionalExpression);
        }
        if self.is_name("for") || self.is_name("async") {
            return self.reject(Construct::Comprehension);
        }
        Ok(e)
    }

    fn or_test(&mut self) -> PResult<Expr> {
        let first = self.and_test()?;
        if !self.is_name("or") {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.is_name("or") {
            self.bump();
            parts.push(self.and_test()?);
        }
        Ok(Expr::Or(parts))
    }

    fn and_test(&mut self) -> PResult<Expr> {
        let first = self.not_test()?;
        if !self.is_name("and") {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.is_name("and") {
            self.bump();
            parts.push(self.not_test()?);
        }
        Ok(Expr::And(parts))
    }

    fn not_test(&mut self) -> PResult<Expr> {
        if self.is_name("not") {
            self.bump();
            return Ok(Expr::Not(Box::new(self.not_test()?)));
        }
        self.comparison()
    }

    fn comp_op(&mut self) -> PResult<Option<CompareOp>> {
        let op = match self.peek().clone() {
            Tok::Op(o) => match CmpOp::parse(o) {
                Some(c) => CompareOp::Cmp(c),
                None => return Ok(None),
            },
            Tok::Name(n) if n == "in" => CompareOp::In,
            Tok::Name(n) if n == "not" && matches!(self.peek_at(1), Tok::Name(m) if m == "in") => {
                self.bump();
                CompareOp::NotIn
            }
            Tok::Name(n) if n == "is" => return self.reject(Construct::Operator("is".into())),
            _ => return Ok(None),
        };
        self.bump();
        Ok(Some(op))
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let mut lhs = self.arith()?;
        let mut parts = Vec::new();
        while let Some(op) = self.comp_op()? {
            let rhs = self.arith()?;
            parts.push(Expr::Compare { op, lhs: Box::new(lhs.clone()), rhs: Box::new(rhs.clone()) });
            lhs = rhs;
        }
        Ok(match parts.len() {
            0 => lhs,
            1 => parts.pop().unwrap(),
            _ => Expr::And(parts),
        })
    }

    fn arith(&mut self) -> PResult<Expr> {
        let e = self.unary()?;
        if let Tok::Op(op) = self.peek() {
            if ARITH_OPS.contains(op) || *op == "<<" || *op == ">>" {
                return self.reject(Construct::Operator(op.to_string()));
            }
        }
        Ok(e)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.is_op("-") || self.is_op("+") {
            let neg = self.is_op("-");
            if let Tok::Int(n) = self.peek_at(1).clone() {
                self.bump();
                self.bump();
                return Ok(Expr::Int(if neg { -n } else { n }));
            }
            return self.reject(Construct::Operator(if neg { "-" } else { "+" }.into()));
        }
        if self.is_op("~") {
            return self.reject(Construct::Operator("~".into()));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        if let Tok::Name(n) = self.peek().clone() {
            if self.is_keyword(&n) {
                self.reject_statement_keyword()?;
                return self.syntax(format!("unexpected keyword `{n}`"));
            }
            if matches!(self.peek_at(1), Tok::Op("(")) {
                let call = self.call(&n, pos)?;
                self.reject_postfix()?;
                return Ok(call);
            }
            if n == self.ctx {
                self.bump();
                let mut path = Vec::new();
                while self.is_op(".") {
                    self.bump();
                    path.push(self.expect_name()?);
                    if self.is_op("(") {
                        return self.reject(Construct::DynamicDispatch(format!("method call `.{}()`", path.last().unwrap())));
                    }
                }
                if self.is_op("[") {
                    return self.reject(Construct::Subscript);
                }
                let Some(field) = path.first() else {
                    return self.syntax("the context parameter must be used through msg, trace, or env");
                };
                if !CONTEXT_FIELDS.contains(&field.as_str()) {
                    return self.fail(ParseErrorKind::UnknownContextField(field.clone()), pos);
                }
                return Ok(Expr::Context(path));
            }
            self.bump();
            let e = match n.as_str() {
                "True" => Expr::Bool(true),
                "False" => Expr::Bool(false),
                "OpenString" => Expr::SortRef(SortName::OpenString),
                "None" => return self.fail(ParseErrorKind::Syntax("`None` is not a supported constant".into()), pos),
                other => match SortName::parse(other) {
                    Some(s) => Expr::SortRef(s),
                    None => return self.fail(ParseErrorKind::UnknownName(other.to_string()), pos),
                },
            };
            self.reject_value_postfix()?;
            return Ok(e);
        }
        let e = self.atom()?;
        self.reject_value_postfix()?;
        Ok(e)
    }

    fn reject_value_postfix(&self) -> PResult<()> {
        if self.is_op(".") {
            return self.reject(Construct::DynamicDispatch("attribute access on a value".into()));
        }
        if self.is_op("(") {
            return self.reject(Construct::DynamicDispatch("call of a non-name".into()));
        }
        if self.is_op("[") {
            return self.reject(Construct::Subscript);
        }
        Ok(())
    }

    fn is_keyword(&self, n: &str) -> bool {
        matches!(
            n,
            "while" | "for" | "import" | "from" | "class" | "lambda" | "global" | "nonlocal" | "del" | "return"
                | "yield" | "break" | "continue" | "raise" | "try" | "except" | "finally" | "with" | "assert"
                | "await" | "async" | "def" | "if" | "elif" | "else" | "pass" | "and" | "or" | "not" | "in" | "is"
        )
    }

    /// Whether the bracket opening at the current token holds a `for` clause.
    fn bracket_has_for(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.toks[self.i..] {
            match &t.tok {
                Tok::Op("(" | "[" | "{") => depth += 1,
                Tok::Op(")" | "]" | "}") => {
                    depth -= 1;
                    if depth == 0 {
                        return false;
                    }
                }
                Tok::Name(n) if depth == 1 && n == "for" => return true,
                Tok::Eof => return false,
                _ => {}
            }
        }
        false
    }

    fn atom(&mut self) -> PResult<Expr> {
        if matches!(self.peek(), Tok::Op("(" | "[" | "{")) && self.bracket_has_for() {
            return self.reject(Construct::Comprehension);
        }
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                let mut s = s;
                while let Tok::Str(more) = self.peek().clone() {
                    self.bump();
                    s.push_str(&more);
                }
                Ok(Expr::Str(s))
            }
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::Int(n))
            }
            Tok::Op("(") => {
                self.bump();
                if self.is_op(")") {
                    self.bump();
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.test()?;
                if self.is_op(")") {
                    self.bump();
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.is_op(",") {
                    self.bump();
                    if self.is_op(")") {
                        break;
                    }
                    items.push(self.test()?);
                }
                self.expect_op(")")?;
                Ok(Expr::List(items))
            }
            Tok::Op(open @ ("[" | "{")) => {
                let close = if open == "[" { "]" } else { "}" };
                self.bump();
                let mut items = Vec::new();
                while !self.is_op(close) {
                    items.push(self.test()?);
                    if self.is_op(":") {
                        return self.syntax("dict literals are not supported");
                    }
                    if !self.is_op(close) {
                        self.expect_op(",")?;
                    }
                }
                self.bump();
                Ok(Expr::List(items))
            }
            other => self.syntax(format!("unexpected {}", describe(&other))),
        }
    }

    fn call(&mut self, name: &str, pos: Pos) -> PResult<Expr> {
        self.check_callee(name, pos)?;
        let v = self.vocab;
        let whitelisted = v.is_predicate(name) || v.is_extractor(name) || v.is_primitive(name);
        if !whitelisted {
            return self.fail(ParseErrorKind::Rejected(Construct::NonWhitelistedCall(name.to_string())), pos);
        }
        self.bump();
        let args = self.call_args()?;
        Ok(Expr::Call(CallExpr { name: name.to_string(), args, pos }))
    }

    /// Parses `( ... )` after a callee name.
    fn call_args(&mut self) -> PResult<Vec<Arg>> {
        if self.bracket_has_for() {
            return self.reject(Construct::Comprehension);
        }
        self.expect_op("(")?;
        let mut args: Vec<Arg> = Vec::new();
        while !self.is_op(")") {
            if self.is_op("*") || self.is_op("**") {
                return self.reject(Construct::DynamicDispatch("star arguments".into()));
            }
            let keyword = match (self.peek().clone(), self.peek_at(1)) {
                (Tok::Name(k), Tok::Op("=")) => {
                    self.bump();
                    self.bump();
                    if args.iter().any(|a| a.keyword.as_deref() == Some(k.as_str())) {
                        return self.syntax(format!("duplicate keyword argument `{k}`"));
                    }
                    Some(k)
                }
                _ => {
                    if args.iter().any(|a| a.keyword.is_some()) {
                        return self.syntax("positional argument after keyword argument");
                    }
                    None
                }
            };
            let value = self.test()?;
            args.push(Arg { keyword, value });
            if !self.is_op(")") {
                self.expect_op(",")?;
            }
        }
        self.bump();
        Ok(args)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Name(n) => format!("`{n}`"),
        Tok::Str(_) => "string literal".into(),
        Tok::Int(n) => format!("`{n}`"),
        Tok::Op(o) => format!("`{o}`"),
        Tok::Newline => "end of line".into(),
        Tok::Indent => "indent".into(),
        Tok::Dedent => "dedent".into(),
        Tok::Eof => "end of input".into(),
    }
}
