use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Elementary functions of one argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Sgn,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sgn => "sgn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sgn" => Func::Sgn,
            _ => return None,
        })
    }
}

/// Reduced rational exponent `num/den` with `den > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i64,
    den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i64;
        let s = if den < 0 { -1 } else { 1 };
        Some(Self { num: s * num / g, den: s * den / g })
    }

    pub fn integer(n: i64) -> Self {
        Self { num: n, den: 1 }
    }

    pub fn num(self) -> i64 {
        self.num
    }

    pub fn den(self) -> i64 {
        self.den
    }

    pub fn is_integer(self) -> bool {
        self.den == 1
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn minus_one(self) -> Self {
        Self::new(self.num - self.den, self.den).expect("nonzero denominator")
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Expression tree. Slots refer to the owning expression's layout.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Param(String),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Rational),
    Func(Func, Box<Node>),
    /// Euclidean norm of the contiguous slots `start..start + len`.
    Norm { start: usize, len: usize },
}

impl Node {
    pub fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Visits every slot referenced by the tree (norms contribute all their slots).
    pub fn for_each_slot(&self, f: &mut dyn FnMut(usize)) {
        match self {
            Node::Const(_) | Node::Param(_) => {}
            Node::Var(s) => f(*s),
            Node::Norm { start, len } => (*start..start + len).for_each(f),
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.for_each_slot(f),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.for_each_slot(f);
                b.for_each_slot(f);
            }
        }
    }

    pub fn depends_on(&self, slot: usize) -> bool {
        let mut hit = false;
        self.for_each_slot(&mut |s| hit |= s == slot);
        hit
    }

    pub fn params(&self, out: &mut Vec<String>) {
        match self {
            Node::Param(p) => {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
            Node::Const(_) | Node::Var(_) | Node::Norm { .. } => {}
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.params(out),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.params(out);
                b.params(out);
            }
        }
    }
}

pub(crate) fn b(n: Node) -> Box<Node> {
    Box::new(n)
}

pub(crate) fn add(a: Node, c: Node) -> Node {
    match (a.as_const(), c.as_const()) {
        (Some(x), Some(y)) => Node::Const(x + y),
        (Some(0.0), _) => c,
        (_, Some(0.0)) => a,
        _ => match c {
            Node::Neg(inner) => sub(a, *inner),
            c => Node::Add(b(a), b(c)),
        },
    }
}

pub(crate) fn sub(a: Node, c: Node) -> Node {
    match (a.as_const(), c.as_const()) {
        (Some(x), Some(y)) => Node::Const(x - y),
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(c),
        _ => match c {
            Node::Neg(inner) => add(a, *inner),
            c => Node::Sub(b(a), b(c)),
        },
    }
}

pub(crate) fn mul(a: Node, c: Node) -> Node {
    match (a.as_const(), c.as_const()) {
        (Some(x), Some(y)) => Node::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Const(0.0),
        (Some(1.0), _) => c,
        (_, Some(1.0)) => a,
        (Some(-1.0), _) => neg(c),
        (_, Some(-1.0)) => neg(a),
        _ => match (a, c) {
            (Node::Neg(x), Node::Neg(y)) => mul(*x, *y),
            (Node::Neg(x), y) | (y, Node::Neg(x)) => neg(mul(*x, y)),
            (x, y) => Node::Mul(b(x), b(y)),
        },
    }
}

pub(crate) fn div(a: Node, c: Node) -> Node {
    match (a.as_const(), c.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Node::Const(x / y),
        (Some(0.0), _) => Node::Const(0.0),
        (_, Some(1.0)) => a,
        _ => Node::Div(b(a), b(c)),
    }
}

pub(crate) fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        a => Node::Neg(b(a)),
    }
}

pub(crate) fn pow(a: Node, r: Rational) -> Node {
    if r.num() == 0 {
        return Node::Const(1.0);
    }
    if r.num() == 1 && r.den() == 1 {
        return a;
    }
    match a {
        Node::Const(c) if r.is_integer() && r.num().unsigned_abs() <= 64 && c != 0.0 => {
            Node::Const(libm::pow(c, r.value()))
        }
        a => Node::Pow(b(a), r),
    }
}

pub(crate) fn func(f: Func, a: Node) -> Node {
    match (f, &a) {
        (Func::Sin, Node::Const(c)) if *c == 0.0 => Node::Const(0.0),
        (Func::Cos, Node::Const(c)) if *c == 0.0 => Node::Const(1.0),
        (Func::Exp, Node::Const(c)) if *c == 0.0 => Node::Const(1.0),
        _ => Node::Func(f, b(a)),
    }
}

/// Bottom-up constant folding and 0/1 elimination.
pub fn simplify(n: &Node) -> Node {
    match n {
        Node::Const(_) | Node::Var(_) | Node::Param(_) | Node::Norm { .. } => n.clone(),
        Node::Neg(a) => neg(simplify(a)),
        Node::Add(a, c) => add(simplify(a), simplify(c)),
        Node::Sub(a, c) => sub(simplify(a), simplify(c)),
        Node::Mul(a, c) => mul(simplify(a), simplify(c)),
        Node::Div(a, c) => div(simplify(a), simplify(c)),
        Node::Pow(a, r) => pow(simplify(a), *r),
        Node::Func(f, a) => func(*f, simplify(a)),
    }
}

/// Exact symbolic derivative with respect to `slot`.
pub fn diff(n: &Node, slot: usize) -> Node {
    match n {
        Node::Const(_) | Node::Param(_) => Node::Const(0.0),
        Node::Var(s) => Node::Const(if *s == slot { 1.0 } else { 0.0 }),
        Node::Norm { start, len } => {
            if slot >= *start && slot < start + len {
                div(Node::Var(slot), n.clone())
            } else {
                Node::Const(0.0)
            }
        }
        Node::Neg(a) => neg(diff(a, slot)),
        Node::Add(a, c) => add(diff(a, slot), diff(c, slot)),
        Node::Sub(a, c) => sub(diff(a, slot), diff(c, slot)),
        Node::Mul(a, c) => add(
            mul(diff(a, slot), (**c).clone()),
            mul((**a).clone(), diff(c, slot)),
        ),
        Node::Div(a, c) => {
            let da = diff(a, slot);
            let dc = diff(c, slot);
            let first = div(da, (**c).clone());
            if dc.is_zero() {
                first
            } else {
                sub(
                    first,
                    div(mul((**a).clone(), dc), pow((**c).clone(), Rational::integer(2))),
                )
            }
        }
        Node::Pow(a, r) => {
            let da = diff(a, slot);
            if da.is_zero() {
                return Node::Const(0.0);
            }
            let outer = mul(Node::Const(r.value()), pow((**a).clone(), r.minus_one()));
            mul(outer, da)
        }
        Node::Func(f, a) => {
            let da = diff(a, slot);
            if da.is_zero() {
                return Node::Const(0.0);
            }
            let a = (**a).clone();
            let outer = match f {
                Func::Sin => func(Func::Cos, a),
                Func::Cos => neg(func(Func::Sin, a)),
                Func::Exp => func(Func::Exp, a),
                Func::Sqrt => div(Node::Const(0.5), func(Func::Sqrt, a)),
                Func::Abs => func(Func::Sgn, a),
                Func::Sgn => return Node::Const(0.0),
            };
            mul(outer, da)
        }
    }
}

/// Replaces every variable slot through `map`. Norms whose image is again a
/// contiguous run of plain variables stay norms; otherwise they are expanded.
pub fn substitute(n: &Node, map: &dyn Fn(usize) -> Node) -> Node {
    match n {
        Node::Const(_) | Node::Param(_) => n.clone(),
        Node::Var(s) => map(*s),
        Node::Norm { start, len } => {
            let images: Vec<Node> = (*start..start + len).map(map).collect();
            let contiguous = match images.first() {
                Some(Node::Var(s0)) => images
                    .iter()
                    .enumerate()
                    .all(|(k, im)| *im == Node::Var(s0 + k)),
                _ => false,
            };
            if contiguous {
                if let Node::Var(s0) = images[0] {
                    return Node::Norm { start: s0, len: *len };
                }
            }
            let mut sum = Node::Const(0.0);
            for im in images {
                sum = add(sum, pow(im, Rational::integer(2)));
            }
            func(Func::Sqrt, sum)
        }
        Node::Neg(a) => neg(substitute(a, map)),
        Node::Add(a, c) => add(substitute(a, map), substitute(c, map)),
        Node::Sub(a, c) => sub(substitute(a, map), substitute(c, map)),
        Node::Mul(a, c) => mul(substitute(a, map), substitute(c, map)),
        Node::Div(a, c) => div(substitute(a, map), substitute(c, map)),
        Node::Pow(a, r) => pow(substitute(a, map), *r),
        Node::Func(f, a) => func(*f, substitute(a, map)),
    }
}

/// Replaces named parameters by constants where bound.
pub fn bind(n: &Node, lookup: &dyn Fn(&str) -> Option<f64>) -> Node {
    match n {
        Node::Param(p) => lookup(p).map_or_else(|| n.clone(), Node::Const),
        Node::Const(_) | Node::Var(_) | Node::Norm { .. } => n.clone(),
        Node::Neg(a) => neg(bind(a, lookup)),
        Node::Add(a, c) => add(bind(a, lookup), bind(c, lookup)),
        Node::Sub(a, c) => sub(bind(a, lookup), bind(c, lookup)),
        Node::Mul(a, c) => mul(bind(a, lookup), bind(c, lookup)),
        Node::Div(a, c) => div(bind(a, lookup), bind(c, lookup)),
        Node::Pow(a, r) => pow(bind(a, lookup), *r),
        Node::Func(f, a) => func(*f, bind(a, lookup)),
    }
}
