use std::fmt;
use std::sync::Arc;

/// Source position, 1-based. Equality ignores positions so that a
/// reformatted program compares equal to its original.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Pos {
    fn eq(&self, _: &Pos) -> bool {
        true
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

pub type Block = Arc<[Stmt]>;

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub source: String,
    /// Name of the `def` entry block, if the program declares one.
    pub entry: Option<String>,
    pub body: Block,
}

impl Program {
    /// Equality of structure only, ignoring source text and positions.
    pub fn same_ast(&self, other: &Program) -> bool {
        self.entry == other.entry && self.body == other.body
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign { targets: Vec<String>, value: Expr },
    Expr(Expr),
    Yield(Call),
    If { branches: Vec<(Expr, Block)>, orelse: Option<Block> },
    While { cond: Expr, body: Block },
    Return,
    Pass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub name: String,
    pub args: Vec<Expr>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

/// Precedence of `not`; unary minus binds tighter than any binary operator.
pub const NOT_PRECEDENCE: u8 = 3;
pub const NEG_PRECEDENCE: u8 = 7;
pub const ATOM_PRECEDENCE: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Str(String),
    Bool(bool),
    Name(String),
    Call(Call),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl ExprKind {
    pub fn precedence(&self) -> u8 {
        match self {
            ExprKind::Binary(op, ..) => op.precedence(),
            ExprKind::Not(_) => NOT_PRECEDENCE,
            ExprKind::Neg(_) => NEG_PRECEDENCE,
            _ => ATOM_PRECEDENCE,
        }
    }
}

/// Walks every statement of a block, depth first.
pub fn visit_stmts<'a>(block: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in block {
        f(s);
        match &s.kind {
            StmtKind::If { branches, orelse } => {
                for (_, b) in branches {
                    visit_stmts(b, f);
                }
                if let Some(b) = orelse {
                    visit_stmts(b, f);
                }
            }
            StmtKind::While { body, .. } => visit_stmts(body, f),
            _ => {}
        }
    }
}

/// Walks every expression of an expression tree, including call arguments.
pub fn visit_expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(e);
    match &e.kind {
        ExprKind::Call(c) => c.args.iter().for_each(|a| visit_expr(a, f)),
        ExprKind::Neg(x) | ExprKind::Not(x) => visit_expr(x, f),
        ExprKind::Binary(_, l, r) => {
            visit_expr(l, f);
            visit_expr(r, f);
        }
        _ => {}
    }
}

/// Top-level expressions of a statement (not nested statements).
pub fn stmt_exprs(s: &Stmt) -> Vec<&Expr> {
    match &s.kind {
        StmtKind::Assign { value, .. } => vec![value],
        StmtKind::Expr(e) => vec![e],
        StmtKind::Yield(c) => c.args.iter().collect(),
        StmtKind::If { branches, .. } => branches.iter().map(|(c, _)| c).collect(),
        StmtKind::While { cond, .. } => vec![cond],
        StmtKind::Return | StmtKind::Pass => vec![],
    }
}
