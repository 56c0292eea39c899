//! Kind-level operator graphs.
//!
//! Nodes are the eleven operator kinds followed by the variable kinds `x_1`
//! and `x_2`. Entry `[x, y]` is set when some operator of kind `x` directly
//! consumes the output of kind `y`. Multiple instances of one kind collapse
//! onto a single node, so decoding a matrix back into an expression is a
//! search rather than an inverse.

use std::fmt;

use serde::Deserialize;

use crate::expr::{canonicalize, Expr, OpKind};

/// Number of variable kinds.
pub const MAX_VARS: usize = 2;
/// Matrix dimension: operator kinds plus variable kinds.
pub const NODE_COUNT: usize = 11 + MAX_VARS;

/// A row or column label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Op(OpKind),
    /// 1-based variable index.
    Var(u8),
}

impl Node {
    pub fn index(self) -> usize {
        match self {
            Node::Op(k) => k.index() - 1,
            Node::Var(i) => 10 + i as usize,
        }
    }

    pub fn from_index(i: usize) -> Option<Node> {
        match i {
            0..=10 => OpKind::from_index(i + 1).map(Node::Op),
            11..=12 => Some(Node::Var((i - 10) as u8)),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = Node> {
        (0..NODE_COUNT).filter_map(Node::from_index)
    }

    pub fn label(self) -> String {
        match self {
            Node::Op(k) => k.label().to_string(),
            Node::Var(i) => format!("x_{i}"),
        }
    }

    pub fn is_var(self) -> bool {
        matches!(self, Node::Var(_))
    }

    pub fn op(self) -> Option<OpKind> {
        match self {
            Node::Op(k) => Some(k),
            Node::Var(_) => None,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Boolean consumer-by-producer matrix, one bitmask per row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AdjacencyMatrix {
    rows: [u16; NODE_COUNT],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("variable x_{0} is beyond the supported {MAX_VARS} variables")]
    UnsupportedVariable(u8),
}

#[derive(Debug, thiserror::Error)]
pub enum MatrixFormatError {
    #[error("malformed matrix file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("labels must be {expected:?}")]
    Labels { expected: Vec<String> },
    #[error("matrix must be {NODE_COUNT}x{NODE_COUNT}")]
    Shape,
    #[error("entry [{row}, {col}] is {value}; only 0 and 1 are allowed")]
    Entry { row: usize, col: usize, value: u64 },
}

#[derive(Deserialize)]
struct MatrixFile {
    labels: Vec<String>,
    matrix: Vec<Vec<u64>>,
}

impl AdjacencyMatrix {
    pub fn new() -> AdjacencyMatrix {
        AdjacencyMatrix::default()
    }

    pub fn from_edges(edges: &[(Node, Node)]) -> AdjacencyMatrix {
        let mut m = AdjacencyMatrix::new();
        for (x, y) in edges {
            m.set(*x, *y, true);
        }
        m
    }

    pub fn get(&self, x: Node, y: Node) -> bool {
        self.get_index(x.index(), y.index())
    }

    pub fn get_index(&self, row: usize, col: usize) -> bool {
        self.rows[row] >> col & 1 == 1
    }

    pub fn set(&mut self, x: Node, y: Node, on: bool) {
        self.set_index(x.index(), y.index(), on);
    }

    pub fn set_index(&mut self, row: usize, col: usize, on: bool) {
        if on {
            self.rows[row] |= 1 << col;
        } else {
            self.rows[row] &= !(1 << col);
        }
    }

    /// Copy with one entry inverted.
    pub fn flipped(&self, row: usize, col: usize) -> AdjacencyMatrix {
        let mut m = *self;
        m.rows[row] ^= 1 << col;
        m
    }

    pub fn edges(&self) -> impl Iterator<Item = (Node, Node)> + '_ {
        Node::all().flat_map(move |x| {
            Node::all()
                .filter(move |y| self.get(x, *y))
                .map(move |y| (x, y))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| *r == 0)
    }

    /// Kinds consumed by `x`, in label order.
    pub fn consumed(&self, x: Node) -> Vec<Node> {
        Node::all().filter(|y| self.get(x, *y)).collect()
    }

    /// Every edge of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &AdjacencyMatrix) -> bool {
        self.rows
            .iter()
            .zip(&other.rows)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn labels() -> Vec<String> {
        Node::all().map(Node::label).collect()
    }

    /// File form: a JSON object with `labels` and one matrix row per line.
    pub fn to_text(&self) -> String {
        let labels: Vec<String> = Self::labels().iter().map(|l| format!("\"{l}\"")).collect();
        let mut out = format!("{{\n  \"labels\": [{}],\n  \"matrix\": [\n", labels.join(", "));
        for r in 0..NODE_COUNT {
            let row: Vec<&str> = (0..NODE_COUNT)
                .map(|c| if self.get_index(r, c) { "1" } else { "0" })
                .collect();
            let sep = if r + 1 < NODE_COUNT { "," } else { "" };
            out.push_str(&format!("    [{}]{sep}\n", row.join(", ")));
        }
        out.push_str("  ]\n}\n");
        out
    }

    pub fn from_text(text: &str) -> Result<AdjacencyMatrix, MatrixFormatError> {
        let file: MatrixFile = serde_json::from_str(text)?;
        let expected = Self::labels();
        if file.labels != expected {
            return Err(MatrixFormatError::Labels { expected });
        }
        if file.matrix.len() != NODE_COUNT || file.matrix.iter().any(|r| r.len() != NODE_COUNT) {
            return Err(MatrixFormatError::Shape);
        }
        let mut m = AdjacencyMatrix::new();
        for (row, values) in file.matrix.iter().enumerate() {
            for (col, &value) in values.iter().enumerate() {
                match value {
                    0 => {}
                    1 => m.set_index(row, col, true),
                    value => return Err(MatrixFormatError::Entry { row, col, value }),
                }
            }
        }
        Ok(m)
    }
}

impl fmt::Display for AdjacencyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>5}", "")?;
        for y in Node::all() {
            write!(f, "{:>5}", y.label())?;
        }
        writeln!(f)?;
        for x in Node::all() {
            write!(f, "{:>5}", x.label())?;
            for y in Node::all() {
                write!(f, "{:>5}", if self.get(x, y) { "1" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Kind of the value an expression node produces, as seen by its parent.
/// Leaf-form `c*x_i` counts as the variable.
fn head(e: &Expr) -> Result<Option<Node>, EncodeError> {
    if let Some(i) = e.leaf_var() {
        if i as usize > MAX_VARS || i == 0 {
            return Err(EncodeError::UnsupportedVariable(i));
        }
        return Ok(Some(Node::Var(i)));
    }
    Ok(e.kind().map(Node::Op))
}

fn collect_edges(e: &Expr, m: &mut AdjacencyMatrix) -> Result<(), EncodeError> {
    if e.leaf_var().is_some() {
        head(e)?;
        return Ok(());
    }
    if let Expr::Op { kind, args, .. } = e {
        for a in args {
            if let Some(h) = head(a)? {
                m.set(Node::Op(*kind), h, true);
            }
            collect_edges(a, m)?;
        }
    }
    Ok(())
}

/// Adjacency matrix of the canonical form of `e`.
pub fn encode_expression(e: &Expr) -> Result<AdjacencyMatrix, EncodeError> {
    let mut m = AdjacencyMatrix::new();
    collect_edges(&canonicalize(e), &mut m)?;
    Ok(m)
}

/// Out-degree (distinct consumed kinds) and in-degree (distinct consumers)
/// per node, indexed by [`Node::index`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeProfile {
    pub out_degree: [usize; NODE_COUNT],
    pub in_degree: [usize; NODE_COUNT],
}

impl DegreeProfile {
    pub fn out_of(&self, n: Node) -> usize {
        self.out_degree[n.index()]
    }

    pub fn in_of(&self, n: Node) -> usize {
        self.in_degree[n.index()]
    }
}

pub fn degree_profile(m: &AdjacencyMatrix) -> DegreeProfile {
    let mut out_degree = [0; NODE_COUNT];
    let mut in_degree = [0; NODE_COUNT];
    for (x, y) in m.edges() {
        out_degree[x.index()] += 1;
        in_degree[y.index()] += 1;
    }
    DegreeProfile {
        out_degree,
        in_degree,
    }
}

/// Root candidate and the tier it was ranked in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankedRoot {
    pub kind: OpKind,
    /// 1: no consumer and something consumed. 2: consumes more kinds than
    /// consume it. 3: any remaining operator that consumes something.
    pub tier: u8,
}

/// Operators ranked by how likely each is to be the root: tier first, then
/// out-degree minus in-degree descending, then kind index.
pub fn ranked_roots(m: &AdjacencyMatrix) -> Vec<RankedRoot> {
    let p = degree_profile(m);
    let mut ranked: Vec<(RankedRoot, isize)> = OpKind::ALL
        .iter()
        .filter_map(|&k| {
            let n = Node::Op(k);
            let (out, inn) = (p.out_of(n), p.in_of(n));
            if out == 0 {
                return None;
            }
            let tier = if inn == 0 {
                1
            } else if out > inn {
                2
            } else {
                3
            };
            Some((RankedRoot { kind: k, tier }, out as isize - inn as isize))
        })
        .collect();
    ranked.sort_by(|(a, da), (b, db)| {
        a.tier
            .cmp(&b.tier)
            .then(db.cmp(da))
            .then(a.kind.cmp(&b.kind))
    });
    ranked.into_iter().map(|(r, _)| r).collect()
}

/// Tier-1 and tier-2 roots in ranked order. Falls back to tier 3 so that the
/// list is empty only when no operator consumes anything.
pub fn root_candidates(m: &AdjacencyMatrix) -> Vec<OpKind> {
    let ranked = ranked_roots(m);
    let primary: Vec<OpKind> = ranked.iter().filter(|r| r.tier <= 2).map(|r| r.kind).collect();
    if primary.is_empty() {
        ranked.iter().map(|r| r.kind).collect()
    } else {
        primary
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    /// Consumed by some operator but consumes nothing itself.
    DanglingOperator(OpKind),
    /// More than one operator has no consumer.
    MultipleRoots(Vec<OpKind>),
    /// Has edges but cannot be reached from any root candidate.
    Unreachable(Node),
    /// A variable row has entries; variables are leaves.
    VariableConsumes(u8),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DanglingOperator(k) => write!(f, "dangling operator {k}: consumed but consumes nothing"),
            Diagnostic::MultipleRoots(ks) => {
                let names: Vec<_> = ks.iter().map(|k| k.label()).collect();
                write!(f, "multiple roots: {}", names.join(", "))
            }
            Diagnostic::Unreachable(n) => write!(f, "{n} is unreachable from every root"),
            Diagnostic::VariableConsumes(i) => write!(f, "variable x_{i} consumes other kinds"),
        }
    }
}

pub fn validate_matrix(m: &AdjacencyMatrix) -> Vec<Diagnostic> {
    let p = degree_profile(m);
    let mut out = Vec::new();
    for i in 1..=MAX_VARS as u8 {
        if p.out_of(Node::Var(i)) > 0 {
            out.push(Diagnostic::VariableConsumes(i));
        }
    }
    for k in OpKind::ALL {
        let n = Node::Op(k);
        if p.in_of(n) > 0 && p.out_of(n) == 0 {
            out.push(Diagnostic::DanglingOperator(k));
        }
    }
    let tier1: Vec<OpKind> = ranked_roots(m)
        .iter()
        .filter(|r| r.tier == 1)
        .map(|r| r.kind)
        .collect();
    if tier1.len() > 1 {
        out.push(Diagnostic::MultipleRoots(tier1));
    }

    let mut seen = [false; NODE_COUNT];
    let mut stack: Vec<Node> = root_candidates(m).into_iter().map(Node::Op).collect();
    while let Some(n) = stack.pop() {
        if std::mem::replace(&mut seen[n.index()], true) {
            continue;
        }
        stack.extend(m.consumed(n));
    }
    for n in Node::all() {
        let touched = p.out_of(n) + p.in_of(n) > 0;
        if touched && !seen[n.index()] {
            out.push(Diagnostic::Unreachable(n));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    const ADD: Node = Node::Op(OpKind::Add);
    const SIN: Node = Node::Op(OpKind::Sin);
    const COS: Node = Node::Op(OpKind::Cos);
    const X1: Node = Node::Var(1);
    const X2: Node = Node::Var(2);

    fn enc(s: &str) -> AdjacencyMatrix {
        encode_expression(&parse(s).unwrap()).unwrap()
    }

    fn fig1() -> AdjacencyMatrix {
        AdjacencyMatrix::from_edges(&[(ADD, SIN), (ADD, COS), (ADD, X1), (SIN, X1), (COS, X2)])
    }

    #[test]
    fn node_indices_round_trip() {
        for i in 0..NODE_COUNT {
            assert_eq!(Node::from_index(i).unwrap().index(), i);
        }
        assert_eq!(Node::from_index(NODE_COUNT), None);
    }

    #[test]
    fn encodes_reference_graph() {
        assert_eq!(enc("sin(x_1)+cos(x_2)+x_1"), fig1());
        assert!(enc("x_1").is_empty());
        let m = enc("sin(sin(x_1))");
        assert_eq!(m, AdjacencyMatrix::from_edges(&[(SIN, SIN), (SIN, X1)]));
    }

    #[test]
    fn rejects_third_variable() {
        let err = encode_expression(&parse("sin(x_3)").unwrap()).unwrap_err();
        assert_eq!(err, EncodeError::UnsupportedVariable(3));
    }

    #[test]
    fn degrees() {
        let p = degree_profile(&fig1());
        assert_eq!((p.out_of(ADD), p.in_of(ADD)), (3, 0));
        assert_eq!((p.out_of(SIN), p.in_of(SIN)), (1, 1));
        let p = degree_profile(&enc("sin(sin(x_1))"));
        assert_eq!((p.out_of(SIN), p.in_of(SIN)), (2, 1));
        let p = degree_profile(&AdjacencyMatrix::new());
        assert!(p.out_degree.iter().chain(&p.in_degree).all(|d| *d == 0));
    }

    #[test]
    fn roots() {
        assert_eq!(root_candidates(&fig1()), [OpKind::Add]);
        assert!(root_candidates(&AdjacencyMatrix::new()).is_empty());
        let cyc = enc("cos(x_1)+cos(x_1+x_2)");
        assert!(cyc.get(COS, ADD) && cyc.get(ADD, COS));
        assert_eq!(root_candidates(&cyc), [OpKind::Add, OpKind::Cos]);
    }

    #[test]
    fn diagnostics() {
        assert!(validate_matrix(&fig1()).is_empty());
        let mut dangling = fig1();
        dangling.set(SIN, X1, false);
        assert!(validate_matrix(&dangling).contains(&Diagnostic::DanglingOperator(OpKind::Sin)));
        let two = AdjacencyMatrix::from_edges(&[(SIN, X1), (COS, X2)]);
        assert!(validate_matrix(&two)
            .contains(&Diagnostic::MultipleRoots(vec![OpKind::Sin, OpKind::Cos])));
    }

    #[test]
    fn text_round_trip_is_byte_exact() {
        let m = fig1();
        let text = m.to_text();
        let back = AdjacencyMatrix::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_rejects_bad_entries() {
        let text = fig1().to_text().replacen("[0,", "[2,", 1).replacen("[0, ", "[2, ", 1);
        assert!(AdjacencyMatrix::from_text(&text).is_err());
    }
}
