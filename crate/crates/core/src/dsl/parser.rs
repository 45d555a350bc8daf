use std::collections::BTreeSet;
use std::sync::Arc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{lookup, ApiKind, ParseError, ParseErrorKind, CONSTANTS};

const KEYWORDS: [&str; 13] =
    ["def", "if", "elif", "else", "while", "yield", "return", "pass", "and", "or", "not", "True", "False"];

/// Statement keywords of the host language that the DSL refuses outright.
const BANNED_KEYWORDS: [&str; 13] =
    ["import", "from", "for", "lambda", "class", "try", "with", "global", "nonlocal", "del", "raise", "assert", "async"];

/// Callables refused even though they look like ordinary calls.
const BANNED_CALLS: [&str; 8] = ["print", "open", "exec", "eval", "input", "__import__", "compile", "getattr"];

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

fn error(kind: ParseErrorKind, pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError { kind, message: msg.into(), pos }
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.i]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(&self.peek().tok, Tok::Op(o) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Name(n) if n == kw)
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Name(n) => format!("'{n}'"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Str(_) => "string".into(),
            Tok::Op(o) => format!("'{o}'"),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indent".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let t = self.peek();
        error(ParseErrorKind::Syntax, t.pos, format!("expected {wanted}, found {}", Self::describe(&t.tok)))
    }

    fn expect_op(&mut self, op: &str) -> Result<Pos, ParseError> {
        if self.is_op(op) {
            Ok(self.next().pos)
        } else {
            Err(self.unexpected(&format!("'{op}'")))
        }
    }

    fn expect_newline(&mut self) -> Result<(), ParseError> {
        match self.peek().tok {
            Tok::Newline => {
                self.next();
                Ok(())
            }
            Tok::Eof | Tok::Dedent => Ok(()),
            _ => Err(self.unexpected("end of line")),
        }
    }

    fn name(&mut self) -> Result<(String, Pos), ParseError> {
        match &self.peek().tok {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                let n = n.clone();
                let p = self.next().pos;
                Ok((n, p))
            }
            _ => Err(self.unexpected("a name")),
        }
    }

    fn program(&mut self, source: &str) -> Result<Program, ParseError> {
        while self.peek().tok == Tok::Newline {
            self.next();
        }
        if self.is_kw("def") {
            let def_pos = self.next().pos;
            let (name, _) = self.name()?;
            self.expect_op("(")?;
            if !self.is_op(")") {
                return Err(error(ParseErrorKind::Banned, self.peek().pos, "the entry block takes no parameters"));
            }
            self.expect_op(")")?;
            self.expect_op(":")?;
            let body = self.block()?;
            if self.peek().tok != Tok::Eof {
                let p = self.peek().pos;
                if self.is_kw("def") {
                    return Err(error(ParseErrorKind::Banned, p, "only one entry block is allowed"));
                }
                return Err(error(ParseErrorKind::Syntax, p, "statements after the entry block"));
            }
            let _ = def_pos;
            return Ok(Program { source: source.to_string(), entry: Some(name), body });
        }
        let mut body = Vec::new();
        while self.peek().tok != Tok::Eof {
            if self.peek().tok == Tok::Indent {
                return Err(error(ParseErrorKind::Syntax, self.peek().pos, "unexpected indent"));
            }
            body.push(self.statement()?);
        }
        Ok(Program { source: source.to_string(), entry: None, body: body.into() })
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        if self.peek().tok != Tok::Newline {
            // single-line suite: `if x: yield stop()`
            let s = self.simple_statement()?;
            self.expect_newline()?;
            return Ok(Arc::from(vec![s]));
        }
        self.next();
        if self.peek().tok != Tok::Indent {
            return Err(self.unexpected("an indented block"));
        }
        self.next();
        let mut stmts = Vec::new();
        while !matches!(self.peek().tok, Tok::Dedent | Tok::Eof) {
            stmts.push(self.statement()?);
        }
        if self.peek().tok == Tok::Dedent {
            self.next();
        }
        Ok(stmts.into())
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.peek().pos;
        if self.is_kw("if") {
            self.next();
            let mut branches = Vec::new();
            let cond = self.expr()?;
            self.expect_op(":")?;
            branches.push((cond, self.block()?));
            let mut orelse = None;
            loop {
                if self.is_kw("elif") {
                    self.next();
                    let c = self.expr()?;
                    self.expect_op(":")?;
                    branches.push((c, self.block()?));
                } else if self.is_kw("else") {
                    self.next();
                    self.expect_op(":")?;
                    orelse = Some(self.block()?);
                    break;
                } else {
                    break;
                }
            }
            return Ok(Stmt { kind: StmtKind::If { branches, orelse }, pos });
        }
        if self.is_kw("while") {
            self.next();
            let cond = self.expr()?;
            self.expect_op(":")?;
            let body = self.block()?;
            return Ok(Stmt { kind: StmtKind::While { cond, body }, pos });
        }
        if self.is_kw("def") {
            return Err(error(ParseErrorKind::Banned, pos, "nested function definitions are not allowed"));
        }
        if self.is_kw("elif") || self.is_kw("else") {
            return Err(error(ParseErrorKind::Syntax, pos, "'elif'/'else' without a matching 'if'"));
        }
        let s = self.simple_statement()?;
        self.expect_newline()?;
        Ok(s)
    }

    fn simple_statement(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.peek().pos;
        if let Tok::Name(n) = &self.peek().tok {
            if BANNED_KEYWORDS.contains(&n.as_str()) {
                return Err(error(ParseErrorKind::Banned, pos, format!("'{n}' is not allowed")));
            }
        }
        if self.is_kw("pass") {
            self.next();
            return Ok(Stmt { kind: StmtKind::Pass, pos });
        }
        if self.is_kw("return") {
            self.next();
            if !matches!(self.peek().tok, Tok::Newline | Tok::Eof | Tok::Dedent) {
                return Err(error(ParseErrorKind::Banned, self.peek().pos, "return takes no value"));
            }
            return Ok(Stmt { kind: StmtKind::Return, pos });
        }
        if self.is_kw("yield") {
            self.next();
            let e = self.expr()?;
            let ExprKind::Call(call) = e.kind else {
                return Err(error(ParseErrorKind::Syntax, e.pos, "yield expects an action call"));
            };
            return Ok(Stmt { kind: StmtKind::Yield(call), pos });
        }
        if let Some(targets) = self.try_targets()? {
            self.expect_op("=")?;
            let value = self.expr()?;
            return Ok(Stmt { kind: StmtKind::Assign { targets, value }, pos });
        }
        let e = self.expr()?;
        if self.is_op("=") {
            return Err(error(ParseErrorKind::Syntax, self.peek().pos, "invalid assignment target"));
        }
        Ok(Stmt { kind: StmtKind::Expr(e), pos })
    }

    /// Assignment targets `a`, `a, b` or `(a, b)` followed by `=`; otherwise rewinds.
    fn try_targets(&mut self) -> Result<Option<Vec<String>>, ParseError> {
        let save = self.i;
        let paren = self.is_op("(");
        if paren {
            self.next();
        }
        let mut names = Vec::new();
        loop {
            match &self.peek().tok {
                Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                    names.push(n.clone());
                    self.next();
                }
                _ => {
                    self.i = save;
                    return Ok(None);
                }
            }
            if self.is_op(",") {
                self.next();
                continue;
            }
            break;
        }
        if paren {
            if !self.is_op(")") {
                self.i = save;
                return Ok(None);
            }
            self.next();
        }
        if self.is_op("=") {
            Ok(Some(names))
        } else {
            self.i = save;
            Ok(None)
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binary_op(&self) -> Option<BinOp> {
        match &self.peek().tok {
            Tok::Name(n) if n == "or" => Some(BinOp::Or),
            Tok::Name(n) if n == "and" => Some(BinOp::And),
            Tok::Op(o) => match *o {
                "==" => Some(BinOp::Eq),
                "!=" => Some(BinOp::Ne),
                "<" => Some(BinOp::Lt),
                "<=" => Some(BinOp::Le),
                ">" => Some(BinOp::Gt),
                ">=" => Some(BinOp::Ge),
                "+" => Some(BinOp::Add),
                "-" => Some(BinOp::Sub),
                "*" => Some(BinOp::Mul),
                "/" => Some(BinOp::Div),
                _ => None,
            },
            _ => None,
        }
    }

    /// Precedence climbing. `not` sits between `and` and the comparisons.
    fn binary(&mut self, min: u8) -> Result<Expr, ParseError> {
        let mut lhs = if min <= NOT_PRECEDENCE && self.is_kw("not") {
            let pos = self.next().pos;
            let inner = self.binary(NOT_PRECEDENCE)?;
            Expr { kind: ExprKind::Not(Box::new(inner)), pos }
        } else {
            self.unary()?
        };
        while let Some(op) = self.binary_op() {
            let p = op.precedence();
            if p < min {
                break;
            }
            let pos = self.next().pos;
            let rhs = self.binary(p + 1)?;
            if op.is_comparison() && self.binary_op().is_some_and(|o| o.is_comparison()) {
                return Err(error(ParseErrorKind::Syntax, self.peek().pos, "chained comparisons are not supported"));
            }
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_op("-") {
            let pos = self.next().pos;
            let inner = self.unary()?;
            return Ok(Expr { kind: ExprKind::Neg(Box::new(inner)), pos });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.next();
                Ok(Expr { kind: ExprKind::Num(v), pos: t.pos })
            }
            Tok::Str(s) => {
                self.next();
                Ok(Expr { kind: ExprKind::Str(s), pos: t.pos })
            }
            Tok::Op("(") => {
                self.next();
                let e = self.expr()?;
                if self.is_op(",") {
                    return Err(error(ParseErrorKind::Banned, self.peek().pos, "tuple literals are not supported"));
                }
                self.expect_op(")")?;
                Ok(e)
            }
            Tok::Name(ref n) if n == "True" || n == "False" => {
                self.next();
                Ok(Expr { kind: ExprKind::Bool(n == "True"), pos: t.pos })
            }
            Tok::Name(ref n) if BANNED_KEYWORDS.contains(&n.as_str()) => {
                Err(error(ParseErrorKind::Banned, t.pos, format!("'{n}' is not allowed")))
            }
            Tok::Name(ref n) if !KEYWORDS.contains(&n.as_str()) => {
                self.next();
                if self.is_op("(") {
                    self.next();
                    let mut args = Vec::new();
                    if !self.is_op(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.is_op(",") {
                                self.next();
                                continue;
                            }
                            break;
                        }
                    }
                    self.expect_op(")")?;
                    let call = Call { name: n.clone(), args, pos: t.pos };
                    Ok(Expr { kind: ExprKind::Call(call), pos: t.pos })
                } else {
                    Ok(Expr { kind: ExprKind::Name(n.clone()), pos: t.pos })
                }
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}

/// Whitelist, arity, banned-construct and loop-progress checks.
fn validate(program: &Program) -> Result<(), ParseError> {
    let mut assigned = BTreeSet::new();
    visit_stmts(&program.body, &mut |s| {
        if let StmtKind::Assign { targets, .. } = &s.kind {
            assigned.extend(targets.iter().cloned());
        }
    });
    let mut first: Option<ParseError> = None;
    let mut fail = |e: ParseError| {
        if first.is_none() {
            first = Some(e);
        }
    };
    visit_stmts(&program.body, &mut |s| {
        if let StmtKind::Assign { targets, .. } = &s.kind {
            for t in targets {
                if CONSTANTS.contains(&t.as_str()) || lookup(t).is_some() {
                    fail(error(ParseErrorKind::Invalid, s.pos, format!("cannot assign to '{t}'")));
                }
            }
        }
        if let StmtKind::Yield(call) = &s.kind {
            match lookup(&call.name) {
                Some(api) if api.kind == ApiKind::Action => {}
                Some(_) => fail(error(
                    ParseErrorKind::Invalid,
                    call.pos,
                    format!("'{}' is not an action and cannot be yielded", call.name),
                )),
                None => {}
            }
            check_call(call, program, &mut fail);
            for a in &call.args {
                check_expr(a, program, &assigned, &mut fail);
            }
        }
        for e in stmt_exprs(s) {
            if matches!(s.kind, StmtKind::Yield(_)) {
                break;
            }
            check_expr(e, program, &assigned, &mut fail);
        }
        if let StmtKind::While { body, .. } = &s.kind {
            let mut progress = false;
            visit_stmts(body, &mut |inner| {
                if matches!(inner.kind, StmtKind::Yield(_) | StmtKind::Assign { .. }) {
                    progress = true;
                }
            });
            if !progress {
                fail(error(ParseErrorKind::Invalid, s.pos, "loop body must yield an action or assign a variable"));
            }
        }
    });
    first.map_or(Ok(()), Err)
}

fn check_call(call: &Call, program: &Program, fail: &mut dyn FnMut(ParseError)) {
    if program.entry.as_deref() == Some(call.name.as_str()) {
        fail(error(ParseErrorKind::Banned, call.pos, "recursive calls are not allowed"));
        return;
    }
    if BANNED_CALLS.contains(&call.name.as_str()) {
        fail(error(ParseErrorKind::Banned, call.pos, format!("'{}' is not allowed", call.name)));
        return;
    }
    match lookup(&call.name) {
        None => fail(error(ParseErrorKind::UnknownIdentifier, call.pos, format!("unknown function '{}'", call.name))),
        Some(api) => {
            let n = call.args.len();
            if n < api.min_args || n > api.max_args {
                let want = if api.min_args == api.max_args {
                    format!("{}", api.min_args)
                } else if api.max_args == usize::MAX {
                    format!("at least {}", api.min_args)
                } else {
                    format!("{} to {}", api.min_args, api.max_args)
                };
                fail(error(
                    ParseErrorKind::Invalid,
                    call.pos,
                    format!("'{}' takes {want} argument(s), got {n}", call.name),
                ));
            }
        }
    }
}

fn check_expr(e: &Expr, program: &Program, assigned: &BTreeSet<String>, fail: &mut dyn FnMut(ParseError)) {
    visit_expr(e, &mut |x| match &x.kind {
        ExprKind::Name(n) => {
            if !CONSTANTS.contains(&n.as_str()) && !assigned.contains(n) {
                let kind = if BANNED_CALLS.contains(&n.as_str()) {
                    ParseErrorKind::Banned
                } else {
                    ParseErrorKind::UnknownIdentifier
                };
                fail(error(kind, x.pos, format!("unknown identifier '{n}'")));
            }
        }
        ExprKind::Call(c) => {
            if lookup(&c.name).is_some_and(|a| a.kind == ApiKind::Action) {
                fail(error(ParseErrorKind::Invalid, c.pos, format!("action '{}' must be yielded", c.name)));
            }
            check_call(c, program, fail);
        }
        _ => {}
    });
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, i: 0 };
    let program = p.program(text)?;
    validate(&program)?;
    Ok(program)
}
