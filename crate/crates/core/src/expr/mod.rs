//! Quantitative-definition expressions.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := NUMBER | IDENT | IDENT '(' IDENT ')' | '(' expr ')'
//! ```
//!
//! Calls are limited to the builtins `up_ratio`, `sum_over_subentities` and
//! `mean_over_subentities`.

mod eval;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use eval::{
    evaluate, up_ratio, EvalContext, EvalError, MissingDataPolicy, STATE_DOWN, STATE_UP,
};
pub use parse::{parse_expr, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    UpRatio,
    SumOverSubentities,
    MeanOverSubentities,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::UpRatio => "up_ratio",
            Builtin::SumOverSubentities => "sum_over_subentities",
            Builtin::MeanOverSubentities => "mean_over_subentities",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "up_ratio" => Some(Builtin::UpRatio),
            "sum_over_subentities" => Some(Builtin::SumOverSubentities),
            "mean_over_subentities" => Some(Builtin::MeanOverSubentities),
            _ => None,
        }
    }

    /// True for the builtins that aggregate over sub-entities.
    pub fn is_composition(self) -> bool {
        matches!(
            self,
            Builtin::SumOverSubentities | Builtin::MeanOverSubentities
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Metric(String),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: Builtin,
        arg: String,
    },
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Every identifier used as a reference or builtin argument.
    pub fn free_metrics(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| match e {
            Expr::Metric(m) | Expr::Call { arg: m, .. } => {
                out.insert(m.clone());
            }
            _ => {}
        });
        out
    }

    /// `(builtin, argument)` pairs of every `*_over_subentities` call.
    pub fn composition_calls(&self) -> BTreeSet<(Builtin, String)> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Call { func, arg } = e {
                if func.is_composition() {
                    out.insert((*func, arg.clone()));
                }
            }
        });
        out
    }

    pub fn uses_composition(&self) -> bool {
        !self.composition_calls().is_empty()
    }

    /// Identifiers passed to `up_ratio`.
    pub fn up_ratio_args(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Call {
                func: Builtin::UpRatio,
                arg,
            } = e
            {
                out.insert(arg.clone());
            }
        });
        out
    }

    /// Identifiers used as plain arithmetic operands.
    pub fn operand_refs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Metric(m) = e {
                out.insert(m.clone());
            }
        });
        out
    }

    /// Rewrites every call for which `f` returns a name into a plain metric
    /// reference with that name.
    pub fn replace_calls(&self, f: &impl Fn(Builtin, &str) -> Option<String>) -> Expr {
        match self {
            Expr::Call { func, arg } => match f(*func, arg) {
                Some(name) => Expr::Metric(name),
                None => self.clone(),
            },
            Expr::Binary { op, lhs, rhs } => {
                Expr::binary(*op, lhs.replace_calls(f), rhs.replace_calls(f))
            }
            _ => self.clone(),
        }
    }

    /// Renames metric references and builtin arguments.
    pub fn rename_metrics(&self, f: &impl Fn(&str) -> String) -> Expr {
        match self {
            Expr::Number(v) => Expr::Number(*v),
            Expr::Metric(m) => Expr::Metric(f(m)),
            Expr::Call { func, arg } => Expr::Call {
                func: *func,
                arg: f(arg),
            },
            Expr::Binary { op, lhs, rhs } => {
                Expr::binary(*op, lhs.rename_metrics(f), rhs.rename_metrics(f))
            }
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        if let Expr::Binary { lhs, rhs, .. } = self {
            lhs.visit(f);
            rhs.visit(f);
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(v) => write!(f, "{v}"),
            Expr::Metric(m) => f.write_str(m),
            Expr::Call { func, arg } => write!(f, "{}({arg})", func.name()),
            Expr::Binary { op, lhs, rhs } => {
                let wrap = |e: &Expr, strict: bool| match e {
                    Expr::Binary { op: inner, .. } => {
                        if strict {
                            inner.precedence() <= op.precedence()
                        } else {
                            inner.precedence() < op.precedence()
                        }
                    }
                    _ => false,
                };
                if wrap(lhs, false) {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if wrap(rhs, true) {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_metrics_cover_refs_and_calls() {
        let e = parse_expr("up_ratio(status)").unwrap();
        assert_eq!(e.free_metrics(), BTreeSet::from(["status".to_string()]));
        assert!(parse_expr("0.5").unwrap().free_metrics().is_empty());
        let e = parse_expr("load_a + load_b").unwrap();
        assert_eq!(
            e.free_metrics(),
            BTreeSet::from(["load_a".to_string(), "load_b".to_string()])
        );
    }

    #[test]
    fn printing_keeps_needed_parens_only() {
        for (src, printed) in [
            ("a + b * c", "a + b * c"),
            ("(a + b) * c", "(a + b) * c"),
            ("a - (b - c)", "a - (b - c)"),
            ("(a - b) - c", "a - b - c"),
            ("a / (b * c)", "a / (b * c)"),
            ("((up_ratio(s)))", "up_ratio(s)"),
        ] {
            assert_eq!(parse_expr(src).unwrap().to_string(), printed);
        }
    }

    #[test]
    fn composition_calls_are_found() {
        let e = parse_expr("mean_over_subentities(availability) * 2").unwrap();
        assert!(e.uses_composition());
        let calls: Vec<_> = e.composition_calls().into_iter().collect();
        assert_eq!(
            calls,
            vec![(Builtin::MeanOverSubentities, "availability".to_string())]
        );
        let rewritten = e.replace_calls(&|f, a| f.is_composition().then(|| format!("agg_{a}")));
        assert_eq!(rewritten.to_string(), "agg_availability * 2");
        assert!(!parse_expr("up_ratio(s)").unwrap().uses_composition());
    }
}
