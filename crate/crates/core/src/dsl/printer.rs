use super::ast::*;

/// Canonical source text. Reparsing the output yields the same AST.
pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    match &program.entry {
        Some(name) => {
            out.push_str(&format!("def {name}():\n"));
            block(&program.body, 1, &mut out);
        }
        None => block(&program.body, 0, &mut out),
    }
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn block(stmts: &[Stmt], level: usize, out: &mut String) {
    if stmts.is_empty() {
        indent(level, out);
        out.push_str("pass\n");
    }
    for s in stmts {
        stmt(s, level, out);
    }
}

fn stmt(s: &Stmt, level: usize, out: &mut String) {
    indent(level, out);
    match &s.kind {
        StmtKind::Assign { targets, value } => {
            out.push_str(&format!("{} = {}\n", targets.join(", "), expr(value)));
        }
        StmtKind::Expr(e) => {
            out.push_str(&expr(e));
            out.push('\n');
        }
        StmtKind::Yield(c) => {
            out.push_str(&format!("yield {}\n", call(c)));
        }
        StmtKind::If { branches, orelse } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                if i > 0 {
                    indent(level, out);
                }
                let kw = if i == 0 { "if" } else { "elif" };
                out.push_str(&format!("{kw} {}:\n", expr(cond)));
                block(body, level + 1, out);
            }
            if let Some(body) = orelse {
                indent(level, out);
                out.push_str("else:\n");
                block(body, level + 1, out);
            }
        }
        StmtKind::While { cond, body } => {
            out.push_str(&format!("while {}:\n", expr(cond)));
            block(body, level + 1, out);
        }
        StmtKind::Return => out.push_str("return\n"),
        StmtKind::Pass => out.push_str("pass\n"),
    }
}

fn call(c: &Call) -> String {
    let args: Vec<String> = c.args.iter().map(expr).collect();
    format!("{}({})", c.name, args.join(", "))
}

fn number(v: f64) -> String {
    // Debug formatting is the shortest representation that round-trips
    format!("{v:?}")
}

fn quote(s: &str) -> String {
    let mut q = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn wrap(e: &Expr, parens: bool) -> String {
    let s = expr(e);
    if parens {
        format!("({s})")
    } else {
        s
    }
}

pub(super) fn expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Num(v) => number(*v),
        ExprKind::Str(s) => quote(s),
        ExprKind::Bool(b) => if *b { "True" } else { "False" }.to_string(),
        ExprKind::Name(n) => n.clone(),
        ExprKind::Call(c) => call(c),
        ExprKind::Neg(x) => format!("-{}", wrap(x, x.kind.precedence() < NEG_PRECEDENCE)),
        ExprKind::Not(x) => format!("not {}", wrap(x, x.kind.precedence() < NOT_PRECEDENCE)),
        ExprKind::Binary(op, l, r) => {
            let p = op.precedence();
            let lp = l.kind.precedence();
            let left_parens = lp < p || (op.is_comparison() && lp == p);
            let right_parens = r.kind.precedence() <= p;
            format!("{} {} {}", wrap(l, left_parens), op.symbol(), wrap(r, right_parens))
        }
    }
}
