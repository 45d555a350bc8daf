use std::collections::BTreeMap;
use std::sync::Arc;

use super::ast::*;
use super::{lookup, ActionIntent, ApiKind, DEFAULT_HEADWAY};
use crate::sim::{ContextSnapshot, Direction};

/// Interpreter steps allowed per resume before the program is faulted.
pub const STEP_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    Str(String),
    Dir(Direction),
    Tuple(Vec<Value>),
}

impl Value {
    pub fn truthy(&self) -> bool {
        match self {
            Value::Num(v) => *v != 0.0,
            Value::Bool(b) => *b,
            Value::Str(s) => !s.is_empty(),
            Value::Dir(_) => true,
            Value::Tuple(t) => !t.is_empty(),
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    pub fn as_dir(&self) -> Option<Direction> {
        match self {
            Value::Dir(d) => Some(*d),
            Value::Str(s) => Direction::parse(s),
            _ => None,
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::Dir(_) => "direction",
            Value::Tuple(_) => "tuple",
        }
    }
}

/// Query results for one snapshot. Shared by the interpreter and the gate.
pub(super) fn query(name: &str, args: &[Value], snap: &ContextSnapshot) -> Result<Value, String> {
    Ok(match name {
        "check_front_vehicle" => match &snap.front_vehicle {
            Some(f) => Value::Tuple(vec![Value::Bool(true), Value::Num(f.distance), Value::Num(f.speed)]),
            None => Value::Tuple(vec![Value::Bool(false), Value::Num(f64::INFINITY), Value::Num(0.0)]),
        },
        "check_speed_limit" => Value::Num(snap.speed_limit),
        "current_speed" => Value::Num(snap.ego_speed),
        "current_lane" => Value::Tuple(vec![
            Value::Num(snap.lane_index as f64),
            Value::Num(snap.lane_count as f64),
        ]),
        "at_intersection" => Value::Bool(snap.at_intersection),
        "lane_clear" => {
            let d = args[0].as_dir().ok_or("lane_clear expects left or right")?;
            Value::Bool(match d {
                Direction::Left => snap.left_lane_clear,
                Direction::Right => snap.right_lane_clear,
                Direction::Straight => return Err("lane_clear expects left or right".into()),
            })
        }
        other => return Err(format!("unknown query '{other}'")),
    })
}

pub(super) fn helper(name: &str, args: &[Value]) -> Result<Value, String> {
    let nums: Vec<f64> = args
        .iter()
        .map(|a| a.as_num().ok_or_else(|| format!("{name} expects numbers, got {}", a.type_name())))
        .collect::<Result<_, _>>()?;
    Ok(Value::Num(match name {
        "kmh" => nums[0] / 3.6,
        "abs" => nums[0].abs(),
        "min" => nums.iter().copied().fold(f64::INFINITY, f64::min),
        "max" => nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        other => return Err(format!("unknown helper '{other}'")),
    }))
}

pub(super) fn binary(op: BinOp, l: &Value, r: &Value) -> Result<Value, String> {
    use BinOp::*;
    match op {
        Or | And => unreachable!("short-circuit operators are evaluated lazily"),
        Eq | Ne => {
            let eq = match (l, r) {
                (Value::Str(_) | Value::Dir(_), Value::Str(_) | Value::Dir(_)) => match (l.as_dir(), r.as_dir()) {
                    (Some(a), Some(b)) => a == b,
                    _ => l == r,
                },
                _ => match (l.as_num(), r.as_num()) {
                    (Some(a), Some(b)) => a == b,
                    _ => l == r,
                },
            };
            Ok(Value::Bool(if op == Eq { eq } else { !eq }))
        }
        _ => {
            let (Some(a), Some(b)) = (l.as_num(), r.as_num()) else {
                return Err(format!(
                    "'{}' needs numbers, got {} and {}",
                    op.symbol(),
                    l.type_name(),
                    r.type_name()
                ));
            };
            let v = match op {
                Lt => return Ok(Value::Bool(a < b)),
                Le => return Ok(Value::Bool(a <= b)),
                Gt => return Ok(Value::Bool(a > b)),
                Ge => return Ok(Value::Bool(a >= b)),
                Add => a + b,
                Sub => a - b,
                Mul => a * b,
                Div => {
                    if b == 0.0 {
                        return Err("division by zero".into());
                    }
                    a / b
                }
                _ => unreachable!(),
            };
            if v.is_nan() {
                return Err(format!("'{}' produced an undefined number", op.symbol()));
            }
            Ok(Value::Num(v))
        }
    }
}

/// Builds the intent for an action call from evaluated arguments.
pub(super) fn make_intent(name: &str, args: &[Value]) -> Result<ActionIntent, String> {
    let num = |i: usize| {
        args[i].as_num().filter(|v| v.is_finite()).ok_or_else(|| format!("{name} expects a finite number"))
    };
    let dir = |i: usize| args[i].as_dir().ok_or_else(|| format!("{name} expects a direction"));
    Ok(match name {
        "proceed" => ActionIntent::Proceed { speed: num(0)? },
        "stop" => ActionIntent::Stop,
        "follow_lead" => ActionIntent::FollowLead { headway: if args.is_empty() { DEFAULT_HEADWAY } else { num(0)? } },
        "change_lane" => match dir(0)? {
            Direction::Straight => return Err("change_lane expects left or right".into()),
            d => ActionIntent::ChangeLane { direction: d },
        },
        "turn" => ActionIntent::Turn { direction: dir(0)? },
        "pull_over" => ActionIntent::PullOver,
        other => return Err(format!("unknown action '{other}'")),
    })
}

#[derive(Debug, Clone)]
enum Frame {
    Block { stmts: Block, next: usize },
    Loop { cond: Expr, body: Block },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResumeResult {
    Yielded(ActionIntent),
    Finished,
    Faulted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Running,
    Finished,
    Faulted,
}

/// A suspended program. Each [`Execution::resume`] runs to the next yield.
#[derive(Debug, Clone)]
pub struct Execution {
    program: Arc<Program>,
    frames: Vec<Frame>,
    env: BTreeMap<String, Value>,
    state: State,
    fault: Option<String>,
    budget: usize,
    yields: usize,
}

pub fn start_execution(program: Arc<Program>) -> Execution {
    let body = program.body.clone();
    Execution {
        program,
        frames: vec![Frame::Block { stmts: body, next: 0 }],
        env: BTreeMap::new(),
        state: State::Running,
        fault: None,
        budget: STEP_BUDGET,
        yields: 0,
    }
}

impl Execution {
    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn is_finished(&self) -> bool {
        self.state == State::Finished
    }

    pub fn is_faulted(&self) -> bool {
        self.state == State::Faulted
    }

    pub fn yields(&self) -> usize {
        self.yields
    }

    pub fn variable(&self, name: &str) -> Option<&Value> {
        self.env.get(name)
    }

    fn fault(&mut self, reason: String, pos: Pos) -> ResumeResult {
        let reason = format!("{pos}: {reason}");
        self.state = State::Faulted;
        self.frames.clear();
        self.fault = Some(reason.clone());
        ResumeResult::Faulted(reason)
    }

    /// Runs until the next yield, the end of the program, or a fault.
    pub fn resume(&mut self, snap: &ContextSnapshot) -> ResumeResult {
        match self.state {
            State::Finished => return ResumeResult::Finished,
            State::Faulted => return ResumeResult::Faulted(self.fault.clone().unwrap_or_default()),
            State::Running => {}
        }
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > self.budget {
                let pos = self.current_pos();
                return self.fault(format!("step budget of {} exceeded", self.budget), pos);
            }
            let Some(top) = self.frames.last_mut() else {
                self.state = State::Finished;
                return ResumeResult::Finished;
            };
            match top {
                Frame::Loop { cond, body } => {
                    let (cond, body) = (cond.clone(), body.clone());
                    match self.eval(&cond, snap) {
                        Ok(v) if v.truthy() => self.frames.push(Frame::Block { stmts: body, next: 0 }),
                        Ok(_) => {
                            self.frames.pop();
                        }
                        Err(e) => return self.fault(e, cond.pos),
                    }
                }
                Frame::Block { stmts, next } => {
                    if *next >= stmts.len() {
                        self.frames.pop();
                        continue;
                    }
                    let stmt = stmts[*next].clone();
                    *next += 1;
                    match self.exec(&stmt, snap) {
                        Ok(Some(intent)) => {
                            self.yields += 1;
                            return ResumeResult::Yielded(intent);
                        }
                        Ok(None) => {}
                        Err(e) => return self.fault(e, stmt.pos),
                    }
                    if self.state == State::Finished {
                        return ResumeResult::Finished;
                    }
                }
            }
        }
    }

    fn current_pos(&self) -> Pos {
        match self.frames.last() {
            Some(Frame::Block { stmts, next }) => stmts.get(next.saturating_sub(1)).map(|s| s.pos).unwrap_or_default(),
            Some(Frame::Loop { cond, .. }) => cond.pos,
            None => Pos::default(),
        }
    }

    fn exec(&mut self, stmt: &Stmt, snap: &ContextSnapshot) -> Result<Option<ActionIntent>, String> {
        match &stmt.kind {
            StmtKind::Assign { targets, value } => {
                let v = self.eval(value, snap)?;
                if targets.len() == 1 {
                    self.env.insert(targets[0].clone(), v);
                } else {
                    let Value::Tuple(items) = v else {
                        return Err(format!("cannot unpack {} into {} names", v.type_name(), targets.len()));
                    };
                    if items.len() != targets.len() {
                        return Err(format!("cannot unpack {} values into {} names", items.len(), targets.len()));
                    }
                    for (t, v) in targets.iter().zip(items) {
                        self.env.insert(t.clone(), v);
                    }
                }
                Ok(None)
            }
            StmtKind::Expr(e) => {
                self.eval(e, snap)?;
                Ok(None)
            }
            StmtKind::Yield(call) => {
                let args = call.args.iter().map(|a| self.eval(a, snap)).collect::<Result<Vec<_>, _>>()?;
                make_intent(&call.name, &args).map(Some)
            }
            StmtKind::If { branches, orelse } => {
                for (cond, body) in branches {
                    if self.eval(cond, snap)?.truthy() {
                        self.frames.push(Frame::Block { stmts: body.clone(), next: 0 });
                        return Ok(None);
                    }
                }
                if let Some(body) = orelse {
                    self.frames.push(Frame::Block { stmts: body.clone(), next: 0 });
                }
                Ok(None)
            }
            StmtKind::While { cond, body } => {
                self.frames.push(Frame::Loop { cond: cond.clone(), body: body.clone() });
                Ok(None)
            }
            StmtKind::Return => {
                self.frames.clear();
                self.state = State::Finished;
                Ok(None)
            }
            StmtKind::Pass => Ok(None),
        }
    }

    fn eval(&self, e: &Expr, snap: &ContextSnapshot) -> Result<Value, String> {
        Ok(match &e.kind {
            ExprKind::Num(v) => Value::Num(*v),
            ExprKind::Str(s) => Value::Str(s.clone()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Name(n) => match Direction::parse(n) {
                Some(d) if super::CONSTANTS.contains(&n.as_str()) => Value::Dir(d),
                _ => self.env.get(n).cloned().ok_or_else(|| format!("'{n}' is used before assignment"))?,
            },
            ExprKind::Neg(x) => {
                let v = self.eval(x, snap)?;
                Value::Num(-v.as_num().ok_or_else(|| format!("cannot negate a {}", v.type_name()))?)
            }
            ExprKind::Not(x) => Value::Bool(!self.eval(x, snap)?.truthy()),
            ExprKind::Binary(BinOp::And, l, r) => {
                let lv = self.eval(l, snap)?;
                if !lv.truthy() {
                    lv
                } else {
                    self.eval(r, snap)?
                }
            }
            ExprKind::Binary(BinOp::Or, l, r) => {
                let lv = self.eval(l, snap)?;
                if lv.truthy() {
                    lv
                } else {
                    self.eval(r, snap)?
                }
            }
            ExprKind::Binary(op, l, r) => binary(*op, &self.eval(l, snap)?, &self.eval(r, snap)?)?,
            ExprKind::Call(c) => {
                let args = c.args.iter().map(|a| self.eval(a, snap)).collect::<Result<Vec<_>, _>>()?;
                match lookup(&c.name).map(|a| a.kind) {
                    Some(ApiKind::Query) => query(&c.name, &args, snap)?,
                    Some(ApiKind::Helper) => helper(&c.name, &args)?,
                    _ => return Err(format!("'{}' cannot be called here", c.name)),
                }
            }
        })
    }
}
