use alloc::string::String;
use core::fmt::Write;

use super::ast::{Node, Rational};
use super::BlockLayout;

fn prec(n: &Node) -> u8 {
    match n {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(_) => 3,
        Node::Pow(..) => 4,
        _ => 5,
    }
}

pub(crate) fn format_number(c: f64, out: &mut String) {
    let a = c.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        let _ = write!(out, "{a}");
    } else {
        let _ = write!(out, "{a:e}");
    }
}

fn exponent(r: Rational, out: &mut String) {
    if r.is_integer() && r.num() >= 0 {
        let _ = write!(out, "{}", r.num());
    } else if r.is_integer() {
        let _ = write!(out, "({})", r.num());
    } else {
        let _ = write!(out, "({}/{})", r.num(), r.den());
    }
}

/// Precedence-aware printer whose output parses back to the same tree.
pub(crate) fn print(n: &Node, layout: &BlockLayout, out: &mut String) {
    let child = |c: &Node, paren: bool, out: &mut String| {
        if paren {
            out.push('(');
            print(c, layout, out);
            out.push(')');
        } else {
            print(c, layout, out);
        }
    };
    match n {
        Node::Const(c) => {
            if c.is_sign_negative() {
                out.push_str("(-");
                format_number(*c, out);
                out.push(')');
            } else {
                format_number(*c, out);
            }
        }
        Node::Var(s) => match layout.locate(*s) {
            Some((b, i)) => {
                let _ = write!(out, "{}[{}]", b.name, i);
            }
            None => {
                let _ = write!(out, "?{s}");
            }
        },
        Node::Param(p) => {
            let _ = write!(out, "${p}");
        }
        Node::Norm { start, len } => match layout.locate(*start) {
            Some((b, i)) if i - 1 + len <= b.dim => {
                if i == 1 && *len == b.dim {
                    let _ = write!(out, "norm({})", b.name);
                } else {
                    let _ = write!(out, "norm({}[{}..{}])", b.name, i, i + len - 1);
                }
            }
            _ => {
                out.push_str("sqrt(");
                for k in 0..*len {
                    if k > 0 {
                        out.push_str(" + ");
                    }
                    print(&Node::Var(start + k), layout, out);
                    out.push_str("^2");
                }
                out.push(')');
            }
        },
        Node::Neg(a) => {
            out.push('-');
            child(a, prec(a) < 3, out);
        }
        Node::Add(a, c) | Node::Sub(a, c) => {
            child(a, prec(a) < 1, out);
            out.push_str(if matches!(n, Node::Add(..)) { " + " } else { " - " });
            child(c, prec(c) <= 1, out);
        }
        Node::Mul(a, c) | Node::Div(a, c) => {
            child(a, prec(a) < 2, out);
            out.push_str(if matches!(n, Node::Mul(..)) { "*" } else { "/" });
            child(c, prec(c) <= 2, out);
        }
        Node::Pow(a, r) => {
            child(a, prec(a) <= 4, out);
            out.push('^');
            exponent(*r, out);
        }
        Node::Func(f, a) => {
            out.push_str(f.name());
            out.push('(');
            print(a, layout, out);
            out.push(')');
        }
    }
}
