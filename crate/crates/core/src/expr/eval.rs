use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BinOp, Builtin, Expr};
use crate::store::{Kind, Sample, Value, Window};

pub const STATE_UP: &str = "up";
pub const STATE_DOWN: &str = "down";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("metric `{0}` is not bound")]
    UnboundMetric(String),
    #[error("metric `{metric}` must be {expected}")]
    KindMismatch { metric: String, expected: Kind },
    #[error("division by zero at t={0}")]
    DivisionByZero(i64),
    #[error("`{0}` cannot be evaluated directly; it is rewritten by the planner")]
    UnsupportedHere(String),
    #[error("unknown state label `{0}` (expected `up` or `down`)")]
    UnknownStateLabel(String),
    #[error("evaluation window must satisfy t0 < t1, got [{0}, {1})")]
    InvalidWindow(i64, i64),
}

/// How rows with a missing operand are treated when series are aligned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingDataPolicy {
    Interpolate,
    #[default]
    Ignore,
}

#[derive(Debug, Clone)]
pub struct EvalContext {
    window: Window,
    bindings: BTreeMap<String, Vec<Sample>>,
    policy: MissingDataPolicy,
}

impl EvalContext {
    pub fn new(t0: i64, t1: i64, policy: MissingDataPolicy) -> Result<Self, EvalError> {
        if t0 >= t1 {
            return Err(EvalError::InvalidWindow(t0, t1));
        }
        Ok(EvalContext {
            window: Window { start: t0, end: t1 },
            bindings: BTreeMap::new(),
            policy,
        })
    }

    /// Binds `name` to a series; samples are sorted by timestamp.
    pub fn bind(&mut self, name: impl Into<String>, mut samples: Vec<Sample>) -> &mut Self {
        samples.sort_by_key(|s| s.timestamp);
        self.bindings.insert(name.into(), samples);
        self
    }

    pub fn with(mut self, name: impl Into<String>, samples: Vec<Sample>) -> Self {
        self.bind(name, samples);
        self
    }

    pub fn window(&self) -> Window {
        self.window
    }
}

#[derive(Debug, Clone)]
enum Operand {
    Scalar(f64),
    Series(Vec<(i64, f64)>),
}

fn apply(op: BinOp, a: f64, b: f64, t: i64) -> Result<f64, EvalError> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::DivisionByZero(t));
            }
            a / b
        }
    })
}

/// Value of `series` at `t`: exact hit, or (under `Interpolate`) linear
/// interpolation between the neighbours. No extrapolation.
fn value_at(series: &[(i64, f64)], t: i64, policy: MissingDataPolicy) -> Option<f64> {
    match series.binary_search_by_key(&t, |p| p.0) {
        Ok(i) => Some(series[i].1),
        Err(i) => {
            if policy == MissingDataPolicy::Ignore || i == 0 || i == series.len() {
                return None;
            }
            let (t_a, v_a) = series[i - 1];
            let (t_b, v_b) = series[i];
            let frac = (t - t_a) as f64 / (t_b - t_a) as f64;
            Some(v_a + (v_b - v_a) * frac)
        }
    }
}

/// Fraction of the window during which the most recent state is `up`.
///
/// The state at `window.start` comes from the latest event before it; when no
/// such event exists, the span up to the first in-window event is excluded
/// from both numerator and denominator. Returns `None` when no instant of the
/// window has a defined state.
pub fn up_ratio(events: &[Sample], window: Window) -> Result<Option<f64>, EvalError> {
    let label = |s: &Sample| -> Result<bool, EvalError> {
        match &s.value {
            Value::State(l) if l == STATE_UP => Ok(true),
            Value::State(l) if l == STATE_DOWN => Ok(false),
            Value::State(l) => Err(EvalError::UnknownStateLabel(l.clone())),
            Value::Number(_) => Err(EvalError::KindMismatch {
                metric: "up_ratio argument".into(),
                expected: Kind::Symbolic,
            }),
        }
    };
    let mut state: Option<bool> = None;
    let mut cursor = window.start;
    let mut up_ms: i128 = 0;
    let mut defined_ms: i128 = 0;
    for e in events {
        if e.timestamp < window.start {
            state = Some(label(e)?);
            continue;
        }
        if e.timestamp >= window.end {
            break;
        }
        let span = (e.timestamp - cursor) as i128;
        if let Some(up) = state {
            defined_ms += span;
            if up {
                up_ms += span;
            }
        }
        cursor = e.timestamp;
        state = Some(label(e)?);
    }
    if let Some(up) = state {
        let span = (window.end - cursor) as i128;
        defined_ms += span;
        if up {
            up_ms += span;
        }
    }
    if defined_ms == 0 {
        return Ok(None);
    }
    Ok(Some(up_ms as f64 / defined_ms as f64))
}

fn eval_node(e: &Expr, ctx: &EvalContext) -> Result<Operand, EvalError> {
    match e {
        Expr::Number(v) => Ok(Operand::Scalar(*v)),
        Expr::Metric(name) => {
            let series = ctx
                .bindings
                .get(name)
                .ok_or_else(|| EvalError::UnboundMetric(name.clone()))?;
            let points = series
                .iter()
                .map(|s| match s.value {
                    Value::Number(v) => Ok((s.timestamp, v)),
                    Value::State(_) => Err(EvalError::KindMismatch {
                        metric: name.clone(),
                        expected: Kind::Numeric,
                    }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Operand::Series(points))
        }
        Expr::Call { func, arg } => match func {
            Builtin::UpRatio => {
                let events = ctx
                    .bindings
                    .get(arg)
                    .ok_or_else(|| EvalError::UnboundMetric(arg.clone()))?;
                if events.iter().any(|s| s.value.kind() != Kind::Symbolic) {
                    return Err(EvalError::KindMismatch {
                        metric: arg.clone(),
                        expected: Kind::Symbolic,
                    });
                }
                Ok(Operand::Series(
                    up_ratio(events, ctx.window)?
                        .map(|r| vec![(ctx.window.start, r)])
                        .unwrap_or_default(),
                ))
            }
            _ => Err(EvalError::UnsupportedHere(format!("{}({arg})", func.name()))),
        },
        Expr::Binary { op, lhs, rhs } => {
            let l = eval_node(lhs, ctx)?;
            let r = eval_node(rhs, ctx)?;
            combine(*op, l, r, ctx)
        }
    }
}

fn combine(op: BinOp, l: Operand, r: Operand, ctx: &EvalContext) -> Result<Operand, EvalError> {
    let t0 = ctx.window.start;
    match (l, r) {
        (Operand::Scalar(a), Operand::Scalar(b)) => Ok(Operand::Scalar(apply(op, a, b, t0)?)),
        (Operand::Series(a), Operand::Scalar(b)) => a
            .into_iter()
            .map(|(t, v)| apply(op, v, b, t).map(|x| (t, x)))
            .collect::<Result<_, _>>()
            .map(Operand::Series),
        (Operand::Scalar(a), Operand::Series(b)) => b
            .into_iter()
            .map(|(t, v)| apply(op, a, v, t).map(|x| (t, x)))
            .collect::<Result<_, _>>()
            .map(Operand::Series),
        (Operand::Series(a), Operand::Series(b)) => {
            let mut out = Vec::with_capacity(a.len());
            for (t, v) in a {
                if let Some(w) = value_at(&b, t, ctx.policy) {
                    out.push((t, apply(op, v, w, t)?));
                }
            }
            Ok(Operand::Series(out))
        }
    }
}

/// Evaluates `e` over the context window. Series operands align on the grid
/// of the leftmost series operand; a pure scalar result is stamped at `t0`.
pub fn evaluate(e: &Expr, ctx: &EvalContext) -> Result<Vec<Sample>, EvalError> {
    let window = ctx.window;
    Ok(match eval_node(e, ctx)? {
        Operand::Scalar(v) => vec![Sample::number(window.start, v)],
        Operand::Series(points) => points
            .into_iter()
            .filter(|(t, _)| window.contains(*t))
            .map(|(t, v)| Sample::number(t, v))
            .collect(),
    })
}
