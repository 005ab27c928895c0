//! The equation language.
//!
//! An equation is a single-variable expression over the primitives
//! `sin cos exp log + * pow x` plus the constants 2, 3 and 4, which may only
//! appear as the exponent of `pow`. Equations are stored as their pre-order
//! primitive list; [`Node`] is the equivalent tree view used by
//! [`simplify`] and [`tree_edit_distance`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Maximum number of primitives in a valid expression.
pub const MAX_PRIMITIVES: usize = 30;

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
/// Size of the token vocabulary: three reserved ids plus eleven primitives.
pub const VOCAB_SIZE: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("incomplete tree: {missing} operand(s) missing")]
    IncompleteTree { missing: usize },
    #[error("trailing primitives after a complete tree at position {at}")]
    TrailingPrimitives { at: usize },
    #[error("expression has {len} primitives, limit is {MAX_PRIMITIVES}")]
    LengthExceeded { len: usize },
    #[error("constant at position {at} is not the exponent of pow")]
    MisplacedConst { at: usize },
    #[error("pow exponent at position {at} must be a constant or x")]
    InvalidExponent { at: usize },
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("unknown primitive name {0:?}")]
    UnknownPrimitive(String),
}

/// Allowed exponents of `pow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Exponent {
    Two,
    Three,
    Four,
}

impl Exponent {
    pub const ALL: [Exponent; 3] = [Exponent::Two, Exponent::Three, Exponent::Four];

    pub fn value(self) -> i32 {
        match self {
            Exponent::Two => 2,
            Exponent::Three => 3,
            Exponent::Four => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Primitive {
    Add,
    Mul,
    Pow,
    Sin,
    Cos,
    Exp,
    Log,
    X,
    Const(Exponent),
}

impl Primitive {
    /// Every primitive in token order.
    pub const ALL: [Primitive; 11] = [
        Primitive::Add,
        Primitive::Mul,
        Primitive::Pow,
        Primitive::Sin,
        Primitive::Cos,
        Primitive::Exp,
        Primitive::Log,
        Primitive::X,
        Primitive::Const(Exponent::Two),
        Primitive::Const(Exponent::Three),
        Primitive::Const(Exponent::Four),
    ];

    pub fn arity(self) -> usize {
        match self {
            Primitive::Add | Primitive::Mul | Primitive::Pow => 2,
            Primitive::Sin | Primitive::Cos | Primitive::Exp | Primitive::Log => 1,
            Primitive::X | Primitive::Const(_) => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Pow => "pow",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::X => "x",
            Primitive::Const(Exponent::Two) => "2",
            Primitive::Const(Exponent::Three) => "3",
            Primitive::Const(Exponent::Four) => "4",
        }
    }

    pub fn token(self) -> u32 {
        match self {
            Primitive::Add => 3,
            Primitive::Mul => 4,
            Primitive::Pow => 5,
            Primitive::Sin => 6,
            Primitive::Cos => 7,
            Primitive::Exp => 8,
            Primitive::Log => 9,
            Primitive::X => 10,
            Primitive::Const(Exponent::Two) => 11,
            Primitive::Const(Exponent::Three) => 12,
            Primitive::Const(Exponent::Four) => 13,
        }
    }

    pub fn from_token(id: u32) -> Option<Primitive> {
        Primitive::ALL.get((id as usize).checked_sub(3)?).copied()
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Primitive::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| ExprError::UnknownPrimitive(s.to_string()))
    }
}

/// A valid equation, stored in pre-order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Expression {
    prims: Vec<Primitive>,
}

/// Tree view of an expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub prim: Primitive,
    pub children: Vec<Node>,
}

/// Outcome of evaluating an expression at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub value: f64,
    pub finite: bool,
}

/// Validates a pre-order primitive list and wraps it as an [`Expression`].
pub fn parse_preorder(prims: &[Primitive]) -> Result<Expression, ExprError> {
    if prims.len() > MAX_PRIMITIVES {
        return Err(ExprError::LengthExceeded { len: prims.len() });
    }
    let mut pending = 1usize;
    for (i, p) in prims.iter().enumerate() {
        if pending == 0 {
            return Err(ExprError::TrailingPrimitives { at: i });
        }
        pending = pending - 1 + p.arity();
    }
    if pending > 0 {
        return Err(ExprError::IncompleteTree { missing: pending });
    }
    check_slots(prims)?;
    Ok(Expression { prims: prims.to_vec() })
}

/// Walks a structurally complete pre-order list and checks constant and
/// exponent placement. Returns the index one past the subtree at `pos`.
fn check_slots(prims: &[Primitive]) -> Result<(), ExprError> {
    fn walk(prims: &[Primitive], pos: usize) -> Result<usize, ExprError> {
        match prims[pos] {
            Primitive::Const(_) => Err(ExprError::MisplacedConst { at: pos }),
            Primitive::Pow => {
                let exp_at = walk(prims, pos + 1)?;
                match prims[exp_at] {
                    Primitive::Const(_) | Primitive::X => Ok(exp_at + 1),
                    _ => Err(ExprError::InvalidExponent { at: exp_at }),
                }
            }
            p => {
                let mut next = pos + 1;
                for _ in 0..p.arity() {
                    next = walk(prims, next)?;
                }
                Ok(next)
            }
        }
    }
    walk(prims, 0).map(|_| ())
}

impl Expression {
    pub fn primitives(&self) -> &[Primitive] {
        &self.prims
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn x() -> Expression {
        Expression {
            prims: vec![Primitive::X],
        }
    }

    pub fn tree(&self) -> Node {
        fn build(prims: &[Primitive], pos: &mut usize) -> Node {
            let prim = prims[*pos];
            *pos += 1;
            let children = (0..prim.arity()).map(|_| build(prims, pos)).collect();
            Node { prim, children }
        }
        build(&self.prims, &mut 0)
    }

    /// Space-separated primitive names, the storage form.
    pub fn preorder_string(&self) -> String {
        self.prims.iter().map(|p| p.name()).collect::<Vec<_>>().join(" ")
    }

    pub fn from_preorder_str(s: &str) -> Result<Expression, ExprError> {
        let prims = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<Primitive>, _>>()?;
        parse_preorder(&prims)
    }

    /// Fully parenthesised infix rendering, e.g. `((x^2)+x)`.
    pub fn infix(&self) -> String {
        self.tree().to_string()
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tree())
    }
}

impl Node {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Node::size).sum::<usize>()
    }

    pub fn preorder(&self) -> Vec<Primitive> {
        let mut out = Vec::with_capacity(self.size());
        self.push_preorder(&mut out);
        out
    }

    fn push_preorder(&self, out: &mut Vec<Primitive>) {
        out.push(self.prim);
        for c in &self.children {
            c.push_preorder(out);
        }
    }

    /// Pre-order name string; the total order used to sort operands.
    pub fn key(&self) -> String {
        self.preorder().iter().map(|p| p.name()).collect::<Vec<_>>().join(" ")
    }

    fn leaf(prim: Primitive) -> Node {
        Node {
            prim,
            children: Vec::new(),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.prim, self.children.as_slice()) {
            (Primitive::Add, [a, b]) => write!(f, "({a}+{b})"),
            (Primitive::Mul, [a, b]) => write!(f, "({a}*{b})"),
            (Primitive::Pow, [a, b]) => write!(f, "({a}^{b})"),
            (p, [a]) => write!(f, "{}({a})", p.name()),
            (p, _) => f.write_str(p.name()),
        }
    }
}

/// `START body END`.
pub fn tokenize(e: &Expression) -> Vec<u32> {
    let mut out = Vec::with_capacity(e.len() + 2);
    out.push(START);
    out.extend(e.prims.iter().map(|p| p.token()));
    out.push(END);
    out
}

/// Inverse of [`tokenize`]. A leading `START` is skipped and everything from
/// the first `END` on is ignored; any other reserved id is an unknown token.
pub fn detokenize(tokens: &[u32]) -> Result<Expression, ExprError> {
    let body = match tokens.first() {
        Some(&START) => &tokens[1..],
        _ => tokens,
    };
    let body = match body.iter().position(|&t| t == END) {
        Some(end) => &body[..end],
        None => body,
    };
    let prims = body
        .iter()
        .map(|&t| Primitive::from_token(t).ok_or(ExprError::UnknownToken(t)))
        .collect::<Result<Vec<_>, _>>()?;
    parse_preorder(&prims)
}

/// Real-valued evaluation at `x`. Any non-finite intermediate value marks the
/// whole result as non-finite, even if a later operation maps it back into
/// range (e.g. `exp(log(0))`).
pub fn evaluate(e: &Expression, x: f64) -> EvalResult {
    fn go(prims: &[Primitive], pos: &mut usize, x: f64, finite: &mut bool) -> f64 {
        let p = prims[*pos];
        *pos += 1;
        let v = match p {
            Primitive::X => x,
            Primitive::Const(c) => c.value() as f64,
            Primitive::Sin => go(prims, pos, x, finite).sin(),
            Primitive::Cos => go(prims, pos, x, finite).cos(),
            Primitive::Exp => go(prims, pos, x, finite).exp(),
            Primitive::Log => go(prims, pos, x, finite).ln(),
            Primitive::Add => go(prims, pos, x, finite) + go(prims, pos, x, finite),
            Primitive::Mul => go(prims, pos, x, finite) * go(prims, pos, x, finite),
            Primitive::Pow => {
                let base = go(prims, pos, x, finite);
                match prims[*pos] {
                    Primitive::Const(c) => {
                        *pos += 1;
                        base.powi(c.value())
                    }
                    _ => base.powf(go(prims, pos, x, finite)),
                }
            }
        };
        if !v.is_finite() {
            *finite = false;
        }
        v
    }
    let mut finite = true;
    let value = go(&e.prims, &mut 0, x, &mut finite);
    EvalResult { value, finite }
}

/// Canonical form: associative `+`/`*` chains are flattened, repeated factors
/// of a product are folded into `pow` (at most exponent 4), operands are
/// sorted by their pre-order key and chains are rebuilt right-nested.
/// Repeated addends are only reordered, since merging them would need a
/// coefficient.
pub fn simplify(e: &Expression) -> Expression {
    let canon = canonical(e.tree());
    Expression {
        prims: canon.preorder(),
    }
}

fn canonical(node: Node) -> Node {
    let Node { prim, children } = node;
    match prim {
        Primitive::Add | Primitive::Mul => {
            // Flatten before canonicalising so the result does not depend on
            // how the chain was associated.
            let mut raw = Vec::new();
            for c in children {
                flatten_into(prim, c, &mut raw);
            }
            let mut operands = Vec::with_capacity(raw.len());
            for c in raw {
                flatten_into(prim, canonical(c), &mut operands);
            }
            if prim == Primitive::Mul {
                merge_factors(&mut operands);
            }
            sort_operands(&mut operands);
            rebuild_chain(prim, operands)
        }
        _ => Node {
            prim,
            children: children.into_iter().map(canonical).collect(),
        },
    }
}

fn flatten_into(op: Primitive, node: Node, out: &mut Vec<Node>) {
    if node.prim == op {
        for c in node.children {
            flatten_into(op, c, out);
        }
    } else {
        out.push(node);
    }
}

fn sort_operands(operands: &mut [Node]) {
    operands.sort_by_cached_key(Node::key);
}

/// Folds runs of identical factors into `pow`, repeating until no two
/// factors are identical.
fn merge_factors(operands: &mut Vec<Node>) {
    loop {
        sort_operands(operands);
        let mut merged = false;
        let mut out = Vec::with_capacity(operands.len());
        let mut i = 0;
        while i < operands.len() {
            let mut j = i + 1;
            while j < operands.len() && j - i < 4 && operands[j] == operands[i] {
                j += 1;
            }
            let run = j - i;
            if run >= 2 {
                let exp = match run {
                    2 => Exponent::Two,
                    3 => Exponent::Three,
                    _ => Exponent::Four,
                };
                out.push(Node {
                    prim: Primitive::Pow,
                    children: vec![operands[i].clone(), Node::leaf(Primitive::Const(exp))],
                });
                merged = true;
            } else {
                out.push(operands[i].clone());
            }
            i = j;
        }
        *operands = out;
        if !merged {
            return;
        }
    }
}

fn rebuild_chain(op: Primitive, mut operands: Vec<Node>) -> Node {
    let mut acc = operands.pop().expect("chain has at least one operand");
    while let Some(prev) = operands.pop() {
        acc = Node {
            prim: op,
            children: vec![prev, acc],
        };
    }
    acc
}

/// Unit-cost ordered tree edit distance between the canonical forms of `a`
/// and `b`.
pub fn tree_edit_distance(a: &Expression, b: &Expression) -> usize {
    zhang_shasha(&simplify(a).tree(), &simplify(b).tree())
}

/// Post-order view of a tree: labels and leftmost-leaf indices.
struct Postorder {
    labels: Vec<Primitive>,
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl Postorder {
    fn new(root: &Node) -> Self {
        fn visit(n: &Node, labels: &mut Vec<Primitive>, lld: &mut Vec<usize>) -> usize {
            let mut first_leaf = None;
            for c in &n.children {
                let leaf = visit(c, labels, lld);
                first_leaf.get_or_insert(leaf);
            }
            let idx = labels.len();
            labels.push(n.prim);
            let leaf = first_leaf.unwrap_or(idx);
            lld.push(leaf);
            leaf
        }
        let mut labels = Vec::new();
        let mut lld = Vec::new();
        visit(root, &mut labels, &mut lld);
        // A keyroot is the highest node sharing its leftmost leaf.
        let n = labels.len();
        let mut keyroots = Vec::new();
        for i in 0..n {
            if !(i + 1..n).any(|j| lld[j] == lld[i]) {
                keyroots.push(i);
            }
        }
        Postorder { labels, lld, keyroots }
    }
}

/// Zhang–Shasha dynamic program with unit insert, delete and relabel costs.
pub fn zhang_shasha(a: &Node, b: &Node) -> usize {
    let ta = Postorder::new(a);
    let tb = Postorder::new(b);
    let (n, m) = (ta.labels.len(), tb.labels.len());
    let mut tree_dist = vec![vec![0usize; m]; n];
    let mut forest = vec![vec![0usize; m + 1]; n + 1];

    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.lld[i], tb.lld[j]);
            // forest[di][dj]: distance between a[li..li+di] and b[lj..lj+dj]
            forest[0][0] = 0;
            for di in 1..=i - li + 1 {
                forest[di][0] = forest[di - 1][0] + 1;
            }
            for dj in 1..=j - lj + 1 {
                forest[0][dj] = forest[0][dj - 1] + 1;
            }
            for di in 1..=i - li + 1 {
                let x = li + di - 1;
                for dj in 1..=j - lj + 1 {
                    let y = lj + dj - 1;
                    let del = forest[di - 1][dj] + 1;
                    let ins = forest[di][dj - 1] + 1;
                    if ta.lld[x] == li && tb.lld[y] == lj {
                        let relabel = usize::from(ta.labels[x] != tb.labels[y]);
                        let sub = forest[di - 1][dj - 1] + relabel;
                        forest[di][dj] = del.min(ins).min(sub);
                        tree_dist[x][y] = forest[di][dj];
                    } else {
                        let pdi = ta.lld[x] - li;
                        let pdj = tb.lld[y] - lj;
                        let sub = forest[pdi][pdj] + tree_dist[x][y];
                        forest[di][dj] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    tree_dist[n - 1][m - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use Primitive::*;

    const C2: Primitive = Const(Exponent::Two);
    const C3: Primitive = Const(Exponent::Three);

    fn e(s: &str) -> Expression {
        Expression::from_preorder_str(s).unwrap()
    }

    #[test]
    fn parses_square_plus_x() {
        let ex = parse_preorder(&[Add, Pow, X, C2, X]).unwrap();
        assert_eq!(ex.infix(), "((x^2)+x)");
        assert_eq!(ex.tree().size(), 5);
        assert_eq!(ex.tree().preorder(), ex.primitives());
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_preorder(&[Sin]), Err(ExprError::IncompleteTree { missing: 1 }));
        assert_eq!(parse_preorder(&[]), Err(ExprError::IncompleteTree { missing: 1 }));
        assert_eq!(parse_preorder(&[X, X]), Err(ExprError::TrailingPrimitives { at: 1 }));
        assert_eq!(parse_preorder(&[Add, C2, X]), Err(ExprError::MisplacedConst { at: 1 }));
        assert_eq!(parse_preorder(&[Pow, C2, C2]), Err(ExprError::MisplacedConst { at: 1 }));
        assert_eq!(
            parse_preorder(&[Pow, X, Sin, X]),
            Err(ExprError::InvalidExponent { at: 2 })
        );
        assert_eq!(parse_preorder(&[C2]), Err(ExprError::MisplacedConst { at: 0 }));
        let long = vec![Sin; 30].into_iter().chain([X]).collect::<Vec<_>>();
        assert_eq!(parse_preorder(&long), Err(ExprError::LengthExceeded { len: 31 }));
        assert!(parse_preorder(&long[1..]).is_ok());
        assert_eq!(parse_preorder(&[X]).unwrap(), Expression::x());
        assert!(parse_preorder(&[Pow, Sin, X, X]).is_ok());
    }

    #[test]
    fn tokens() {
        assert_eq!(tokenize(&Expression::x()), vec![START, 10, END]);
        assert_eq!(tokenize(&e("add pow x 2 x")), vec![START, 3, 5, 10, 11, 10, END]);
        for p in Primitive::ALL {
            assert_eq!(Primitive::from_token(p.token()), Some(p));
        }
        assert_eq!(Primitive::from_token(PAD), None);
        assert_eq!(Primitive::from_token(14), None);
    }

    #[test]
    fn detokenize_errors() {
        assert_eq!(
            detokenize(&[START, 3, END]),
            Err(ExprError::IncompleteTree { missing: 2 })
        );
        assert_eq!(detokenize(&[START, 9999, END]), Err(ExprError::UnknownToken(9999)));
        assert_eq!(detokenize(&[START, 10, END, 3, 3]), Ok(Expression::x()));
        assert_eq!(detokenize(&[START, 6, PAD, END]), Err(ExprError::UnknownToken(PAD)));
    }

    #[test]
    fn evaluation() {
        let cubic = e("add pow x 3 add pow x 2 x");
        assert_eq!(
            evaluate(&cubic, 1.0),
            EvalResult {
                value: 3.0,
                finite: true
            }
        );
        assert_eq!(evaluate(&e("sin x"), 0.0).value, 0.0);
        assert!(!evaluate(&e("log x"), 0.0).finite);
        assert!(!evaluate(&e("exp log x"), 0.0).finite);
        assert!(!evaluate(&e("log sin x"), 3.5).finite);
        assert!(!evaluate(&e("exp exp exp x"), 10.0).finite);
        assert_eq!(evaluate(&e("pow x x"), 2.0).value, 4.0);
    }

    #[test]
    fn simplify_orders_operands() {
        let a = simplify(&e("add x pow x 2"));
        let b = simplify(&e("add pow x 2 x"));
        assert_eq!(a, b);
        assert_eq!(simplify(&e("sin x")), e("sin x"));
        // x + x needs a coefficient to merge, so it stays.
        assert_eq!(simplify(&e("add x x")), e("add x x"));
        assert_eq!(simplify(&e("mul x x")), e("pow x 2"));
        assert_eq!(simplify(&e("mul x mul x mul x mul x x")), e("mul pow x 4 x"));
        assert_eq!(
            simplify(&e("add add x sin x cos x")),
            simplify(&e("add cos x add sin x x"))
        );
    }

    #[test]
    fn simplify_merges_to_fixpoint() {
        // x*x*x^2 -> x^2 * x^2 -> (x^2)^2
        let s = simplify(&e("mul mul x x pow x 2"));
        assert_eq!(s, e("pow pow x 2 2"));
        assert_eq!(simplify(&s), s);
    }

    #[test]
    fn ted_examples() {
        let a = e("add x pow x 2");
        assert_eq!(tree_edit_distance(&a, &a), 0);
        assert_eq!(tree_edit_distance(&a, &e("add x pow x 3")), 1);
        assert_eq!(tree_edit_distance(&a, &e("add pow x 2 x")), 0);
        assert_eq!(tree_edit_distance(&e("x"), &e("sin x")), 1);
        assert_eq!(tree_edit_distance(&e("x"), &e("add x x")), 2);
        assert_eq!(tree_edit_distance(&e("sin x"), &e("cos log x")), 2);
    }

    #[test]
    fn renders() {
        assert_eq!(e("sin mul x exp x").infix(), "sin((x*exp(x)))");
        assert_eq!(e("add x log pow x 4").preorder_string(), "add x log pow x 4");
        assert_eq!(C3.to_string(), "3");
    }
}
