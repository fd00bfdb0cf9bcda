//! Scalar expressions over named variable blocks: parsing, evaluation,
//! exact symbolic differentiation and printing.

mod ast;
mod compile;
mod layout;
mod parse;
mod print;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

pub use ast::{simplify, Func, Node, Rational};
pub use compile::{CompiledExpr, CompiledSet};
pub use layout::{Block, BlockLayout};

/// Construction-time failures: layout, syntax and name resolution.
#[derive(Clone, Debug, PartialEq)]
pub enum ExprError {
    Layout(String),
    Syntax { position: usize, expected: Vec<String>, found: String },
    UnknownIdentifier { name: String, position: usize },
    IndexOutOfRange { block: String, index: usize, dim: usize, position: usize },
    LayoutMismatch,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprError::Layout(msg) => write!(f, "layout error: {msg}"),
            ExprError::Syntax { position, expected, found } => write!(
                f,
                "syntax error at position {position}: expected one of [{}], found {found}",
                expected.join(", ")
            ),
            ExprError::UnknownIdentifier { name, position } => {
                write!(f, "unknown identifier `{name}` at position {position}")
            }
            ExprError::IndexOutOfRange { block, index, dim, position } => write!(
                f,
                "index {index} out of range for block `{block}` of dimension {dim} at position {position}"
            ),
            ExprError::LayoutMismatch => write!(f, "expressions live on different layouts"),
        }
    }
}

impl core::error::Error for ExprError {}

/// Evaluation-time failures.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    DimensionMismatch { expected: usize, found: usize },
    UnboundParameter(String),
    /// Point lies on the declared singular locus (zero argument of
    /// `norm`/`abs`/`sgn`, or a zero denominator).
    SingularLocus { subexpression: String, reason: &'static str },
    Domain { subexpression: String, reason: &'static str },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::DimensionMismatch { expected, found } => {
                write!(f, "point has {found} coordinates, layout expects {expected}")
            }
            EvalError::UnboundParameter(p) => write!(f, "parameter `${p}` has no value"),
            EvalError::SingularLocus { subexpression, reason } => {
                write!(f, "singular locus: {reason} in `{subexpression}`")
            }
            EvalError::Domain { subexpression, reason } => {
                write!(f, "domain error: {reason} in `{subexpression}`")
            }
        }
    }
}

impl core::error::Error for EvalError {}

/// Immutable expression tree bound to a layout and a set of parameter values.
#[derive(Clone, Debug)]
pub struct Expression {
    node: Node,
    layout: Arc<BlockLayout>,
    params: BTreeMap<String, f64>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.node == other.node && *self.layout == *other.layout
    }
}

impl Expression {
    pub fn parse(text: &str, layout: &Arc<BlockLayout>) -> Result<Self, ExprError> {
        Ok(Self::from_node(parse::parse(text, layout)?, layout))
    }

    pub fn from_node(node: Node, layout: &Arc<BlockLayout>) -> Self {
        Self { node, layout: layout.clone(), params: BTreeMap::new() }
    }

    pub fn constant(c: f64, layout: &Arc<BlockLayout>) -> Self {
        Self::from_node(Node::Const(c), layout)
    }

    pub fn var(slot: usize, layout: &Arc<BlockLayout>) -> Self {
        assert!(slot < layout.total_dim(), "slot {slot} outside layout");
        Self::from_node(Node::Var(slot), layout)
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Names of all parameters referenced by the tree.
    pub fn referenced_params(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.node.params(&mut out);
        out
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn with_params<'a>(mut self, values: impl IntoIterator<Item = (&'a String, &'a f64)>) -> Self {
        for (k, v) in values {
            self.params.insert(k.clone(), *v);
        }
        self
    }

    fn derive(&self, node: Node) -> Self {
        Self { node, layout: self.layout.clone(), params: self.params.clone() }
    }

    pub fn is_zero(&self) -> bool {
        self.node.is_zero()
    }

    pub fn as_const(&self) -> Option<f64> {
        self.node.as_const()
    }

    pub fn depends_on(&self, slot: usize) -> bool {
        self.node.depends_on(slot)
    }

    pub fn simplified(&self) -> Self {
        self.derive(simplify(&self.node))
    }

    /// Exact derivative with respect to one slot.
    pub fn differentiate(&self, slot: usize) -> Self {
        self.derive(ast::diff(&self.node, slot))
    }

    pub fn gradient(&self, slots: &[usize]) -> Vec<Self> {
        slots.iter().map(|&s| self.differentiate(s)).collect()
    }

    /// Symmetric Hessian; entries below the diagonal are clones.
    pub fn hessian(&self, slots: &[usize]) -> Vec<Vec<Self>> {
        let grad = self.gradient(slots);
        let n = slots.len();
        let mut h: Vec<Vec<Self>> = (0..n).map(|_| Vec::with_capacity(n)).collect();
        for i in 0..n {
            for j in 0..n {
                let e = if j < i { h[j][i].clone() } else { grad[i].differentiate(slots[j]) };
                h[i].push(e);
            }
        }
        h
    }

    /// Rewrites the expression onto `layout`, mapping each old slot to a node there.
    pub fn substitute(&self, layout: &Arc<BlockLayout>, map: &dyn Fn(usize) -> Node) -> Self {
        Self { node: ast::substitute(&self.node, map), layout: layout.clone(), params: self.params.clone() }
    }

    /// Replaces every bound parameter by its value.
    pub fn bind_params(&self) -> Self {
        let params = &self.params;
        self.derive(ast::bind(&self.node, &|p| params.get(p).copied()))
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.evaluate_with(point, &[])
    }

    /// Evaluates with `overrides` taking precedence over stored parameters.
    pub fn evaluate_with(&self, point: &[f64], overrides: &[(&str, f64)]) -> Result<f64, EvalError> {
        self.check_dim(point)?;
        let lookup = |p: &str| {
            overrides
                .iter()
                .find(|(k, _)| *k == p)
                .map(|(_, v)| *v)
                .or_else(|| self.params.get(p).copied())
        };
        self.eval_node(&self.node, point, &lookup)
    }

    fn check_dim(&self, point: &[f64]) -> Result<(), EvalError> {
        if point.len() != self.layout.total_dim() {
            return Err(EvalError::DimensionMismatch {
                expected: self.layout.total_dim(),
                found: point.len(),
            });
        }
        Ok(())
    }

    fn render(&self, n: &Node) -> String {
        let mut s = String::new();
        print::print(n, &self.layout, &mut s);
        s
    }

    fn eval_node(&self, n: &Node, x: &[f64], lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
        let ev = |m: &Node| self.eval_node(m, x, lookup);
        Ok(match n {
            Node::Const(c) => *c,
            Node::Var(s) => x[*s],
            Node::Param(p) => lookup(p).ok_or_else(|| EvalError::UnboundParameter(p.clone()))?,
            Node::Norm { start, len } => {
                let v = libm::sqrt(x[*start..start + len].iter().map(|v| v * v).sum::<f64>());
                if v == 0.0 {
                    return Err(EvalError::SingularLocus { subexpression: self.render(n), reason: "norm of zero vector" });
                }
                v
            }
            Node::Neg(a) => -ev(a)?,
            Node::Add(a, b) => ev(a)? + ev(b)?,
            Node::Sub(a, b) => ev(a)? - ev(b)?,
            Node::Mul(a, b) => ev(a)? * ev(b)?,
            Node::Div(a, b) => {
                let num = ev(a)?;
                let den = ev(b)?;
                if den == 0.0 {
                    return Err(EvalError::SingularLocus { subexpression: self.render(n), reason: "division by zero" });
                }
                num / den
            }
            Node::Pow(a, r) => {
                let v = ev(a)?;
                compile::pow_checked(v, *r).map_err(|reason| {
                    if reason.starts_with("zero") {
                        EvalError::SingularLocus { subexpression: self.render(n), reason }
                    } else {
                        EvalError::Domain { subexpression: self.render(n), reason }
                    }
                })?
            }
            Node::Func(f, a) => {
                let v = ev(a)?;
                match f {
                    Func::Sin => libm::sin(v),
                    Func::Cos => libm::cos(v),
                    Func::Exp => libm::exp(v),
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::Domain { subexpression: self.render(n), reason: "square root of a negative number" });
                        }
                        libm::sqrt(v)
                    }
                    Func::Abs | Func::Sgn => {
                        if v == 0.0 {
                            return Err(EvalError::SingularLocus {
                                subexpression: self.render(n),
                                reason: if *f == Func::Abs { "abs at 0" } else { "sgn at 0" },
                            });
                        }
                        if *f == Func::Abs { v.abs() } else { v.signum() }
                    }
                }
            }
        })
    }

    /// Distance-like margin to the singular locus: the smallest absolute value
    /// among `norm`/`abs`/`sgn` arguments and denominators (`inf` if none).
    pub fn singular_margin(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.check_dim(point)?;
        let lookup = |p: &str| self.params.get(p).copied();
        let mut margin = f64::INFINITY;
        self.margin_node(&self.node, point, &lookup, &mut margin)?;
        Ok(margin)
    }

    fn margin_node(
        &self,
        n: &Node,
        x: &[f64],
        lookup: &dyn Fn(&str) -> Option<f64>,
        margin: &mut f64,
    ) -> Result<(), EvalError> {
        match n {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => {}
            Node::Norm { start, len } => {
                let v = libm::sqrt(x[*start..start + len].iter().map(|v| v * v).sum::<f64>());
                *margin = margin.min(v);
            }
            Node::Neg(a) | Node::Pow(a, _) => self.margin_node(a, x, lookup, margin)?,
            Node::Func(f, a) => {
                self.margin_node(a, x, lookup, margin)?;
                if matches!(f, Func::Abs | Func::Sgn) {
                    *margin = margin.min(self.eval_node(a, x, lookup)?.abs());
                }
            }
            Node::Div(a, b) => {
                self.margin_node(a, x, lookup, margin)?;
                self.margin_node(b, x, lookup, margin)?;
                *margin = margin.min(self.eval_node(b, x, lookup)?.abs());
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => {
                self.margin_node(a, x, lookup, margin)?;
                self.margin_node(b, x, lookup, margin)?;
            }
        }
        Ok(())
    }

    /// Flattens the tree into a stack program; parameters must be bound.
    pub fn compile(&self) -> Result<CompiledExpr, EvalError> {
        CompiledExpr::new(self)
    }

    fn combine(&self, other: &Self, f: fn(Node, Node) -> Node) -> Self {
        assert!(*self.layout == *other.layout, "{}", ExprError::LayoutMismatch);
        let mut params = self.params.clone();
        for (k, v) in &other.params {
            params.entry(k.clone()).or_insert(*v);
        }
        Self { node: f(self.node.clone(), other.node.clone()), layout: self.layout.clone(), params }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&self.node))
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $f:path) => {
        impl core::ops::$tr<&Expression> for &Expression {
            type Output = Expression;
            fn $m(self, rhs: &Expression) -> Expression {
                self.combine(rhs, $f)
            }
        }
        impl core::ops::$tr<Expression> for Expression {
            type Output = Expression;
            fn $m(self, rhs: Expression) -> Expression {
                self.combine(&rhs, $f)
            }
        }
    };
}

binop!(Add, add, ast::add);
binop!(Sub, sub, ast::sub);
binop!(Mul, mul, ast::mul);
binop!(Div, div, ast::div);

impl core::ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        let node = ast::neg(self.node.clone());
        self.derive(node)
    }
}

/// Outcome of an Euler-identity and scaling check.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneityReport {
    pub passed: bool,
    pub degree: f64,
    pub euler_residual: f64,
    pub scaling_residual: f64,
    pub worst_sample: Option<usize>,
    pub samples_checked: usize,
}

impl HomogeneityReport {
    pub fn worst_residual(&self) -> f64 {
        self.euler_residual.max(self.scaling_residual)
    }
}

/// Checks `slots·∇f = degree·f` and `f(λθ) = λ^degree f(θ)` for λ ∈ {0.5, 2, 10},
/// with residuals normalized by `1 + |f|`.
pub fn check_homogeneity(
    expr: &Expression,
    block: &str,
    degree: f64,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<HomogeneityReport, EvalError> {
    let range = expr.layout().range(block).ok_or_else(|| EvalError::Domain {
        subexpression: block.to_string(),
        reason: "unknown block",
    })?;
    let slots: Vec<usize> = range.clone().collect();
    let grad = expr.gradient(&slots);
    let mut euler = 0.0f64;
    let mut scaling = 0.0f64;
    let mut worst = None;
    let mut worst_val = -1.0;
    for (k, x) in samples.iter().enumerate() {
        let f0 = expr.evaluate(x)?;
        let mut dot = 0.0;
        for (g, &s) in grad.iter().zip(&slots) {
            dot += x[s] * g.evaluate(x)?;
        }
        let e = (dot - degree * f0).abs() / (1.0 + f0.abs());
        let mut sc = 0.0f64;
        for lambda in [0.5, 2.0, 10.0] {
            let mut y = x.clone();
            for s in range.clone() {
                y[s] *= lambda;
            }
            let expected = libm::pow(lambda, degree) * f0;
            let r = (expr.evaluate(&y)? - expected).abs() / (1.0 + expected.abs());
            sc = sc.max(r);
        }
        euler = euler.max(e);
        scaling = scaling.max(sc);
        if e.max(sc) > worst_val {
            worst_val = e.max(sc);
            worst = Some(k);
        }
    }
    Ok(HomogeneityReport {
        passed: euler <= tol && scaling <= tol,
        degree,
        euler_residual: euler,
        scaling_residual: scaling,
        worst_sample: worst,
        samples_checked: samples.len(),
    })
}

#[cfg(test)]
mod tests;
