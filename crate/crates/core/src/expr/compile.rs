use alloc::vec;
use alloc::vec::Vec;

use super::ast::{Func, Node, Rational};
use super::{EvalError, Expression};

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Var(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(Rational),
    Func(Func),
    Norm(u32, u32),
}

/// Stack program for hot evaluation loops. Any failure falls back to the
/// tree evaluator so the error names the offending subexpression.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
    dim: usize,
    source: Expression,
}

const INLINE_STACK: usize = 32;

pub(crate) fn pow_checked(v: f64, r: Rational) -> Result<f64, &'static str> {
    if v == 0.0 && r.num() < 0 {
        return Err("zero base with negative exponent");
    }
    if r.is_integer() {
        return Ok(match r.num() {
            1 => v,
            2 => v * v,
            3 => v * v * v,
            -1 => 1.0 / v,
            -2 => 1.0 / (v * v),
            n => libm::pow(v, n as f64),
        });
    }
    if v < 0.0 {
        if r.den() % 2 == 0 {
            return Err("even root of a negative number");
        }
        let m = libm::pow(-v, r.value());
        return Ok(if r.num() % 2 == 0 { m } else { -m });
    }
    if r.den() == 2 {
        let s = libm::sqrt(v);
        return Ok(match r.num() {
            1 => s,
            -1 => 1.0 / s,
            3 => v * s,
            _ => libm::pow(v, r.value()),
        });
    }
    Ok(libm::pow(v, r.value()))
}

fn emit(n: &Node, ops: &mut Vec<Op>, depth: &mut usize, cur: usize, params: &dyn Fn(&str) -> Option<f64>) -> Result<(), EvalError> {
    let push = |ops: &mut Vec<Op>, op: Op, depth: &mut usize, after: usize| {
        ops.push(op);
        *depth = (*depth).max(after);
    };
    match n {
        Node::Const(c) => push(ops, Op::Const(*c), depth, cur + 1),
        Node::Param(p) => {
            let v = params(p).ok_or_else(|| EvalError::UnboundParameter(p.clone()))?;
            push(ops, Op::Const(v), depth, cur + 1)
        }
        Node::Var(s) => push(ops, Op::Var(*s as u32), depth, cur + 1),
        Node::Norm { start, len } => push(ops, Op::Norm(*start as u32, *len as u32), depth, cur + 1),
        Node::Neg(a) => {
            emit(a, ops, depth, cur, params)?;
            ops.push(Op::Neg);
        }
        Node::Pow(a, r) => {
            emit(a, ops, depth, cur, params)?;
            ops.push(Op::Pow(*r));
        }
        Node::Func(f, a) => {
            emit(a, ops, depth, cur, params)?;
            ops.push(Op::Func(*f));
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            emit(a, ops, depth, cur, params)?;
            emit(b, ops, depth, cur + 1, params)?;
            ops.push(match n {
                Node::Add(..) => Op::Add,
                Node::Sub(..) => Op::Sub,
                Node::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
    Ok(())
}

impl CompiledExpr {
    pub(crate) fn new(expr: &Expression) -> Result<Self, EvalError> {
        let mut ops = Vec::new();
        let mut depth = 0;
        let params = expr.params();
        emit(expr.node(), &mut ops, &mut depth, 0, &|p| params.get(p).copied())?;
        Ok(Self { ops, depth, dim: expr.layout().total_dim(), source: expr.clone() })
    }

    pub fn source(&self) -> &Expression {
        &self.source
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.dim {
            return Err(EvalError::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let result = if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(x, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.depth];
            self.run(x, &mut stack)
        };
        match result {
            Some(v) => Ok(v),
            None => match self.source.evaluate(x) {
                Err(e) => Err(e),
                Ok(_) => Err(EvalError::Domain {
                    subexpression: alloc::format!("{}", self.source),
                    reason: "compiled evaluation failed",
                }),
            },
        }
    }

    fn run(&self, x: &[f64], st: &mut [f64]) -> Option<f64> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    st[sp] = c;
                    sp += 1;
                }
                Op::Var(s) => {
                    st[sp] = x[s as usize];
                    sp += 1;
                }
                Op::Norm(s, l) => {
                    let s = s as usize;
                    let mut acc = 0.0;
                    for v in &x[s..s + l as usize] {
                        acc += v * v;
                    }
                    if acc == 0.0 {
                        return None;
                    }
                    st[sp] = libm::sqrt(acc);
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::Add => {
                    sp -= 1;
                    st[sp - 1] += st[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    st[sp - 1] -= st[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    st[sp - 1] *= st[sp];
                }
                Op::Div => {
                    sp -= 1;
                    if st[sp] == 0.0 {
                        return None;
                    }
                    st[sp - 1] /= st[sp];
                }
                Op::Pow(r) => st[sp - 1] = pow_checked(st[sp - 1], r).ok()?,
                Op::Func(f) => {
                    let v = st[sp - 1];
                    st[sp - 1] = match f {
                        Func::Sin => libm::sin(v),
                        Func::Cos => libm::cos(v),
                        Func::Exp => libm::exp(v),
                        Func::Sqrt if v < 0.0 => return None,
                        Func::Sqrt => libm::sqrt(v),
                        Func::Abs | Func::Sgn if v == 0.0 => return None,
                        Func::Abs => v.abs(),
                        Func::Sgn => v.signum(),
                    };
                }
            }
        }
        Some(st[0])
    }
}

/// A batch of compiled expressions sharing one layout.
#[derive(Clone, Debug)]
pub struct CompiledSet {
    items: Vec<CompiledExpr>,
}

impl CompiledSet {
    pub fn new(exprs: &[Expression]) -> Result<Self, EvalError> {
        Ok(Self { items: exprs.iter().map(Expression::compile).collect::<Result<_, _>>()? })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, c) in out.iter_mut().zip(&self.items) {
            *o = c.eval(x)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.items.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}
