use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::interp::{binary, helper, make_intent, query, Value};
use super::{lookup, parse_program, ActionIntent, ApiKind};
use crate::sim::{ContextSnapshot, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateLimits {
    /// Commanded speeds above `speed_factor * limit` are rejected.
    pub speed_factor: f64,
    pub max_headway: f64,
}

impl Default for GateLimits {
    fn default() -> Self {
        Self { speed_factor: 1.1, max_headway: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStage {
    Format,
    Parameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub accepted: bool,
    pub stage: Option<GateStage>,
    pub reason: Option<String>,
}

impl GateVerdict {
    fn accept() -> Self {
        Self { accepted: true, stage: None, reason: None }
    }

    fn reject(stage: GateStage, reason: String) -> Self {
        Self { accepted: false, stage: Some(stage), reason: Some(reason) }
    }

    /// Format-stage rejection of a response that carried no usable program.
    pub fn rejected_format(reason: impl Into<String>) -> Self {
        Self::reject(GateStage::Format, reason.into())
    }
}

/// Parses and checks a program against the current scene.
pub fn check_source(text: &str, snapshot: &ContextSnapshot, limits: &GateLimits) -> (Option<Program>, GateVerdict) {
    match parse_program(text) {
        Ok(p) => {
            let v = safety_gate(&p, snapshot, limits);
            (Some(p), v)
        }
        Err(e) => (None, GateVerdict::reject(GateStage::Format, e.to_string())),
    }
}

/// Parameter-stage check of a parsed program. Every action argument must
/// resolve against the snapshot and every reachable lane must admit the
/// requested maneuver.
pub fn safety_gate(program: &Program, snapshot: &ContextSnapshot, limits: &GateLimits) -> GateVerdict {
    let mut assigns: BTreeMap<String, usize> = BTreeMap::new();
    let mut in_loop: BTreeSet<String> = BTreeSet::new();
    count_assigns(&program.body, false, &mut assigns, &mut in_loop);
    let foldable = assigns
        .into_iter()
        .filter(|(n, c)| *c == 1 && !in_loop.contains(n))
        .map(|(n, _)| n)
        .collect();
    let mut g = Gate { snap: snapshot, limits, foldable, env: BTreeMap::new() };
    let start: BTreeSet<usize> = [snapshot.lane_index].into();
    match g.block(&program.body, start) {
        Ok(_) => GateVerdict::accept(),
        Err(e) => GateVerdict::reject(GateStage::Parameter, e),
    }
}

fn count_assigns(stmts: &[Stmt], looped: bool, counts: &mut BTreeMap<String, usize>, in_loop: &mut BTreeSet<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { targets, .. } => {
                for t in targets {
                    *counts.entry(t.clone()).or_default() += 1;
                    if looped {
                        in_loop.insert(t.clone());
                    }
                }
            }
            StmtKind::If { branches, orelse } => {
                for (_, b) in branches {
                    count_assigns(b, looped, counts, in_loop);
                }
                if let Some(b) = orelse {
                    count_assigns(b, looped, counts, in_loop);
                }
            }
            StmtKind::While { body, .. } => count_assigns(body, true, counts, in_loop),
            _ => {}
        }
    }
}

/// Abstract value. `Known` is fixed for the whole run, `Scene` is the value
/// in the current snapshot but may change while the program runs.
#[derive(Debug, Clone, PartialEq)]
enum AVal {
    Known(Value),
    Scene(Value),
    Unknown,
    Tuple(Vec<AVal>),
}

impl AVal {
    fn lift(v: Value, known: bool) -> AVal {
        match v {
            Value::Tuple(items) => AVal::Tuple(items.into_iter().map(|i| AVal::lift(i, known)).collect()),
            v if known => AVal::Known(v),
            v => AVal::Scene(v),
        }
    }

    fn value(&self) -> Option<Value> {
        match self {
            AVal::Known(v) | AVal::Scene(v) => Some(v.clone()),
            AVal::Unknown => None,
            AVal::Tuple(items) => items.iter().map(AVal::value).collect::<Option<Vec<_>>>().map(Value::Tuple),
        }
    }

    fn is_known(&self) -> bool {
        match self {
            AVal::Known(_) => true,
            AVal::Tuple(items) => items.iter().all(AVal::is_known),
            _ => false,
        }
    }

    fn known_truth(&self) -> Option<bool> {
        if self.is_known() {
            self.value().map(|v| v.truthy())
        } else {
            None
        }
    }
}

fn combine(parts: &[&AVal], f: impl FnOnce(&[Value]) -> Result<Value, String>) -> AVal {
    let Some(vals) = parts.iter().map(|p| p.value()).collect::<Option<Vec<_>>>() else {
        return AVal::Unknown;
    };
    match f(&vals) {
        Ok(v) => AVal::lift(v, parts.iter().all(|p| p.is_known())),
        Err(_) => AVal::Unknown,
    }
}

type Lanes = BTreeSet<usize>;

struct Gate<'a> {
    snap: &'a ContextSnapshot,
    limits: &'a GateLimits,
    foldable: BTreeSet<String>,
    env: BTreeMap<String, AVal>,
}

impl Gate<'_> {
    fn block(&mut self, stmts: &[Stmt], mut lanes: Lanes) -> Result<Lanes, String> {
        for s in stmts {
            if lanes.is_empty() {
                break;
            }
            lanes = self.stmt(s, lanes)?;
        }
        Ok(lanes)
    }

    fn stmt(&mut self, s: &Stmt, lanes: Lanes) -> Result<Lanes, String> {
        match &s.kind {
            StmtKind::Assign { targets, value } => {
                let v = self.eval(value, &lanes);
                if targets.len() == 1 {
                    self.bind(&targets[0], v);
                } else {
                    match v {
                        AVal::Tuple(items) if items.len() == targets.len() => {
                            for (t, v) in targets.iter().zip(items) {
                                self.bind(t, v);
                            }
                        }
                        _ => {
                            for t in targets {
                                self.bind(t, AVal::Unknown);
                            }
                        }
                    }
                }
                Ok(lanes)
            }
            StmtKind::Expr(_) | StmtKind::Pass => Ok(lanes),
            StmtKind::Return => Ok(Lanes::new()),
            StmtKind::Yield(call) => self.action(call, s.pos, lanes),
            StmtKind::If { branches, orelse } => {
                let mut out = Lanes::new();
                let mut rest = lanes;
                for (cond, body) in branches {
                    let (taken, skipped) = self.split(cond, &rest);
                    if !taken.is_empty() {
                        out.extend(self.block(body, taken)?);
                    }
                    rest = skipped;
                }
                match orelse {
                    Some(b) if !rest.is_empty() => out.extend(self.block(b, rest)?),
                    _ => out.extend(rest),
                }
                Ok(out)
            }
            StmtKind::While { cond, body } => {
                let mut cur = lanes.clone();
                loop {
                    let (enter, _) = self.split(cond, &cur);
                    let mut next = lanes.clone();
                    if !enter.is_empty() {
                        next.extend(self.block(body, enter)?);
                    }
                    if next == cur {
                        return Ok(self.split(cond, &cur).1);
                    }
                    cur = next;
                }
            }
        }
    }

    /// Lanes in which `cond` may hold and lanes in which it may fail.
    fn split(&self, cond: &Expr, lanes: &Lanes) -> (Lanes, Lanes) {
        let (mut yes, mut no) = (Lanes::new(), Lanes::new());
        for &l in lanes {
            match self.eval(cond, &[l].into()).known_truth() {
                Some(true) => {
                    yes.insert(l);
                }
                Some(false) => {
                    no.insert(l);
                }
                None => {
                    yes.insert(l);
                    no.insert(l);
                }
            }
        }
        (yes, no)
    }

    fn bind(&mut self, name: &str, v: AVal) {
        let v = if self.foldable.contains(name) { v } else { AVal::Unknown };
        self.env.insert(name.to_string(), v);
    }

    fn action(&mut self, call: &Call, pos: Pos, lanes: Lanes) -> Result<Lanes, String> {
        let args: Vec<AVal> = call.args.iter().map(|a| self.eval(a, &lanes)).collect();
        let Some(vals) = args.iter().map(AVal::value).collect::<Option<Vec<_>>>() else {
            return Err(format!("{pos}: argument of {} cannot be resolved", call.name));
        };
        let intent = make_intent(&call.name, &vals).map_err(|e| format!("{pos}: {e}"))?;
        let n = self.snap.lane_count;
        let limit = self.snap.speed_limit;
        match intent {
            ActionIntent::Proceed { speed } => {
                let max = self.limits.speed_factor * limit;
                if !(speed > 0.0 && speed <= max + 1e-9) {
                    return Err(format!("{pos}: proceed speed {speed:.2} m/s outside (0, {max:.2}]"));
                }
                Ok(lanes)
            }
            ActionIntent::FollowLead { headway } => {
                if !(headway > 0.0 && headway <= self.limits.max_headway) {
                    return Err(format!(
                        "{pos}: headway {headway:.2} s outside (0, {}]",
                        self.limits.max_headway
                    ));
                }
                Ok(lanes)
            }
            ActionIntent::ChangeLane { direction } => {
                let mut out = Lanes::new();
                for &l in &lanes {
                    let to = match direction {
                        Direction::Left if l > 0 => l - 1,
                        Direction::Right if l + 1 < n => l + 1,
                        _ => return Err(format!("{pos}: no lane to the {direction} of lane {l}")),
                    };
                    out.insert(to);
                }
                Ok(out)
            }
            ActionIntent::Turn { direction } => {
                if !self.snap.intersection_exits.contains(&direction) {
                    return Err(format!("{pos}: no {direction} exit available"));
                }
                Ok(lanes)
            }
            ActionIntent::PullOver => Ok([n.saturating_sub(1)].into()),
            ActionIntent::Stop => Ok(lanes),
        }
    }

    fn eval(&self, e: &Expr, lanes: &Lanes) -> AVal {
        match &e.kind {
            ExprKind::Num(v) => AVal::Known(Value::Num(*v)),
            ExprKind::Str(s) => AVal::Known(Value::Str(s.clone())),
            ExprKind::Bool(b) => AVal::Known(Value::Bool(*b)),
            ExprKind::Name(n) => match Direction::parse(n) {
                Some(d) if super::CONSTANTS.contains(&n.as_str()) => AVal::Known(Value::Dir(d)),
                _ => self.env.get(n).cloned().unwrap_or(AVal::Unknown),
            },
            ExprKind::Neg(x) => {
                let v = self.eval(x, lanes);
                combine(&[&v], |a| a[0].as_num().map(|n| Value::Num(-n)).ok_or_else(|| "cannot negate".to_string()))
            }
            ExprKind::Not(x) => {
                let v = self.eval(x, lanes);
                combine(&[&v], |a| Ok(Value::Bool(!a[0].truthy())))
            }
            ExprKind::Binary(op @ (BinOp::And | BinOp::Or), l, r) => {
                let lv = self.eval(l, lanes);
                let short = if *op == BinOp::And { Some(false) } else { Some(true) };
                if lv.known_truth() == short {
                    return lv;
                }
                let rv = self.eval(r, lanes);
                if lv.known_truth().is_some() {
                    return rv;
                }
                let is_and = *op == BinOp::And;
                combine(&[&lv, &rv], |a| {
                    Ok(if a[0].truthy() == is_and { a[1].clone() } else { a[0].clone() })
                })
            }
            ExprKind::Binary(op, l, r) => {
                let (lv, rv) = (self.eval(l, lanes), self.eval(r, lanes));
                combine(&[&lv, &rv], |a| binary(*op, &a[0], &a[1]))
            }
            ExprKind::Call(c) => {
                let args: Vec<AVal> = c.args.iter().map(|a| self.eval(a, lanes)).collect();
                let refs: Vec<&AVal> = args.iter().collect();
                match lookup(&c.name).map(|a| a.kind) {
                    Some(ApiKind::Helper) => combine(&refs, |a| helper(&c.name, a)),
                    Some(ApiKind::Query) => self.query(&c.name, &args, lanes),
                    _ => AVal::Unknown,
                }
            }
        }
    }

    fn query(&self, name: &str, args: &[AVal], lanes: &Lanes) -> AVal {
        match name {
            "check_speed_limit" => AVal::Known(Value::Num(self.snap.speed_limit)),
            "current_lane" => {
                let count = AVal::Known(Value::Num(self.snap.lane_count as f64));
                let index = match (lanes.len(), lanes.first()) {
                    (1, Some(&l)) => AVal::Known(Value::Num(l as f64)),
                    _ => AVal::Unknown,
                };
                AVal::Tuple(vec![index, count])
            }
            // lane_clear never holds toward a missing lane
            "lane_clear" => match args[0].value().and_then(|v| v.as_dir()) {
                Some(Direction::Left) if lanes.iter().all(|&l| l == 0) => AVal::Known(Value::Bool(false)),
                Some(Direction::Right) if lanes.iter().all(|&l| l + 1 >= self.snap.lane_count) => {
                    AVal::Known(Value::Bool(false))
                }
                _ => AVal::Unknown,
            },
            _ => {
                let vals: Option<Vec<Value>> = args.iter().map(AVal::value).collect();
                match vals.map(|v| query(name, &v, self.snap)) {
                    Some(Ok(v)) => AVal::lift(v, false),
                    _ => AVal::Unknown,
                }
            }
        }
    }
}
