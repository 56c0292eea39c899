//! Matrix-guided skeleton search.
//!
//! Candidates are built top-down from a root operator, choosing each child
//! kind among the kinds its parent consumes in the matrix. Sums and products
//! start with two operands plus a placeholder; later rounds fill
//! placeholders with independently searched terms. Emission is breadth-first:
//! root tier, then tree height, then kind order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::expr::{canonicalize, structure_key, Constant, Expr, OpKind, SlotId};
use crate::graph::{encode_expression, ranked_roots, root_candidates, AdjacencyMatrix, Node};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestingRules {
    /// A kind may not appear anywhere below another member of its class.
    pub classes: Vec<Vec<OpKind>>,
    /// Let an intervening sum or product lift the class restriction, so that
    /// `sin(x+cos(x))` is allowed while `sin(cos(x))` is not.
    pub allow_across_arith: bool,
}

impl Default for NestingRules {
    fn default() -> Self {
        use OpKind::*;
        NestingRules {
            classes: vec![vec![Sin, Cos], vec![Pow, FracPow], vec![Exp], vec![Log]],
            allow_across_arith: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Placeholder expansion rounds after the base round.
    pub max_expansions: usize,
    /// Sums (and separately products) allowed on one root-to-leaf path.
    pub add_mul_self_limit: usize,
    pub max_candidates_per_round: usize,
    /// Maximum operator height of a candidate.
    pub max_depth: usize,
    pub nesting: NestingRules,
    /// Drop every candidate whose encoding has an edge missing from the
    /// matrix, and never substitute `x_1` under operators that have no
    /// usable input.
    pub strict: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_expansions: 2,
            add_mul_self_limit: 3,
            max_candidates_per_round: 200,
            max_depth: 8,
            nesting: NestingRules::default(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("search option `{0}` must be at least 1")]
    ZeroLimit(&'static str),
    #[error("at most 8 nesting classes are supported, got {0}")]
    TooManyClasses(usize),
    #[error("candidate has no placeholder to expand")]
    NoPlaceholder,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        for (name, v) in [
            ("add_mul_self_limit", self.add_mul_self_limit),
            ("max_candidates_per_round", self.max_candidates_per_round),
            ("max_depth", self.max_depth),
        ] {
            if v == 0 {
                return Err(SearchError::ZeroLimit(name));
            }
        }
        if self.nesting.classes.len() > 8 {
            return Err(SearchError::TooManyClasses(self.nesting.classes.len()));
        }
        Ok(())
    }
}

/// Nesting state along a root-to-leaf path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
struct Ctx {
    classes: u8,
    adds: u16,
    muls: u16,
}

impl Ctx {
    fn push(self, k: OpKind, cfg: &SearchConfig) -> Option<Ctx> {
        let mut next = self;
        match k {
            OpKind::Add | OpKind::Mul => {
                let count = if k == OpKind::Add {
                    &mut next.adds
                } else {
                    &mut next.muls
                };
                *count = count.saturating_add(1);
                if *count as usize > cfg.add_mul_self_limit {
                    return None;
                }
                if cfg.nesting.allow_across_arith {
                    next.classes = 0;
                }
            }
            _ => {
                if let Some(i) = cfg.nesting.classes.iter().position(|c| c.contains(&k)) {
                    let bit = 1u8 << i;
                    if next.classes & bit != 0 {
                        return None;
                    }
                    next.classes |= bit;
                }
            }
        }
        Some(next)
    }
}

/// Whether a root-to-leaf sequence of operator kinds respects the nesting
/// rules.
pub fn check_nesting(path: &[OpKind], cfg: &SearchConfig) -> bool {
    path.iter()
        .try_fold(Ctx::default(), |ctx, k| ctx.push(*k, cfg))
        .is_some()
}

fn paths_ok(e: &Expr, ctx: Ctx, cfg: &SearchConfig) -> bool {
    match e {
        Expr::Op { kind, args, .. } if e.leaf_var().is_none() => match ctx.push(*kind, cfg) {
            Some(inner) => args.iter().all(|a| paths_ok(a, inner, cfg)),
            None => false,
        },
        _ => true,
    }
}

/// Parent/child pairs that canonicalization would fold away, replacing the
/// child's edge with edges the matrix may not have.
fn absorbed(parent: OpKind, child: Node) -> bool {
    use OpKind::*;
    matches!(
        (parent, child),
        (MulConst, Node::Var(_))
            | (Add | Mul | MulConst, Node::Op(MulConst))
            | (MulConst, Node::Op(Mul))
            | (Add, Node::Op(Add))
            | (Mul, Node::Op(Mul))
            | (AddConst, Node::Op(AddConst))
    )
}

const FREE: Constant = Constant::Slot(SlotId(0));

fn build_unary(k: OpKind, t: Expr) -> Expr {
    if k.const_count() == 1 {
        Expr::with_const(k, t, FREE)
    } else {
        Expr::unary(k, t)
    }
}

fn build_binary(k: OpKind, a: Expr, b: Expr) -> Expr {
    if k == OpKind::Add {
        Expr::add(vec![a, b, Expr::Hole], vec![FREE, FREE, Constant::ONE])
    } else {
        Expr::mul(vec![a, b, Expr::Hole], FREE)
    }
}

/// Term and its operator height.
type Terms = Rc<Vec<(Expr, usize)>>;

/// Memoized term lists keyed by head kind, height and nesting context.
struct TermTable {
    m: AdjacencyMatrix,
    cfg: SearchConfig,
    exact: HashMap<(Node, usize, Ctx), Terms>,
    upto: HashMap<(Node, usize, Ctx), Terms>,
}

impl TermTable {
    fn new(m: AdjacencyMatrix, cfg: SearchConfig) -> TermTable {
        TermTable {
            m,
            cfg,
            exact: HashMap::new(),
            upto: HashMap::new(),
        }
    }

    /// Usable input kinds of `k` when its own context is `inner`.
    fn kids(&self, k: OpKind, inner: Ctx) -> Vec<Node> {
        let mut kids: Vec<Node> = self
            .m
            .consumed(Node::Op(k))
            .into_iter()
            .filter(|&c| !absorbed(k, c))
            .filter(|&c| match c {
                Node::Op(ck) => inner.push(ck, &self.cfg).is_some(),
                Node::Var(_) => true,
            })
            .collect();
        if kids.is_empty() && !self.cfg.strict && k != OpKind::MulConst {
            kids.push(Node::Var(1));
        }
        kids
    }

    /// Terms headed by `node` of height exactly `h`, placed under context `ctx`.
    fn exact(&mut self, node: Node, h: usize, ctx: Ctx) -> Terms {
        let key = (node, h, ctx);
        if let Some(t) = self.exact.get(&key) {
            return t.clone();
        }
        let cap = self.cfg.max_candidates_per_round;
        let mut out = Vec::new();
        match node {
            Node::Var(i) if h == 0 => out.push((Expr::scaled_var(i, FREE), 0)),
            Node::Op(k) if h > 0 => {
                if let Some(inner) = ctx.push(k, &self.cfg) {
                    let kids = self.kids(k, inner);
                    if k.is_binary() {
                        'pairs: for (ai, &a) in kids.iter().enumerate() {
                            let la = self.upto(a, h - 1, inner);
                            for &b in &kids[ai..] {
                                let lb = self.upto(b, h - 1, inner);
                                for (i, (ta, ha)) in la.iter().enumerate() {
                                    let start = if a == b { i } else { 0 };
                                    for (tb, hb) in &lb[start..] {
                                        if (*ha).max(*hb) + 1 != h {
                                            continue;
                                        }
                                        out.push((build_binary(k, ta.clone(), tb.clone()), h));
                                        if out.len() >= cap {
                                            break 'pairs;
                                        }
                                    }
                                }
                            }
                        }
                    } else {
                        'kids: for &c in &kids {
                            for (t, _) in self.exact(c, h - 1, inner).iter() {
                                out.push((build_unary(k, t.clone()), h));
                                if out.len() >= cap {
                                    break 'kids;
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        let out = Rc::new(out);
        self.exact.insert(key, out.clone());
        out
    }

    /// Terms of height at most `h`, shallow first.
    fn upto(&mut self, node: Node, h: usize, ctx: Ctx) -> Terms {
        let key = (node, h, ctx);
        if let Some(t) = self.upto.get(&key) {
            return t.clone();
        }
        let cap = self.cfg.max_candidates_per_round;
        let mut out = Vec::new();
        for d in 0..=h {
            out.extend(self.exact(node, d, ctx).iter().cloned());
            if out.len() >= cap {
                out.truncate(cap);
                break;
            }
        }
        let out = Rc::new(out);
        self.upto.insert(key, out.clone());
        out
    }
}

/// One emitted skeleton. Placeholders (`⟨hole⟩`) only occur as operands of
/// sums and products and evaluate as the parent's identity, so they can be
/// ignored when fitting constants.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonCandidate {
    /// Canonical, with slots numbered in print order.
    pub expr: Expr,
    /// Operator the search started from.
    pub root: OpKind,
    /// 0 for the base round, then one more per expansion round.
    pub round: usize,
    pub expansions: usize,
}

struct HoleSite {
    path: Vec<usize>,
    parent: OpKind,
    inner: Ctx,
    /// Maximum height of a term placed here.
    room: usize,
}

fn hole_sites(e: &Expr, cfg: &SearchConfig) -> Vec<HoleSite> {
    fn walk(e: &Expr, path: &mut Vec<usize>, ctx: Ctx, depth: usize, cfg: &SearchConfig, out: &mut Vec<HoleSite>) {
        let Expr::Op { kind, args, .. } = e else { return };
        if e.leaf_var().is_some() {
            return;
        }
        let Some(inner) = ctx.push(*kind, cfg) else { return };
        for (i, a) in args.iter().enumerate() {
            path.push(i);
            if a.is_hole() {
                if depth < cfg.max_depth {
                    out.push(HoleSite {
                        path: path.clone(),
                        parent: *kind,
                        inner,
                        room: cfg.max_depth - depth - 1,
                    });
                }
            } else {
                walk(a, path, inner, depth + 1, cfg, out);
            }
            path.pop();
        }
    }
    let mut out = Vec::new();
    walk(e, &mut Vec::new(), Ctx::default(), 0, cfg, &mut out);
    out
}

struct Expansion {
    path: Vec<usize>,
    terms: Terms,
    index: usize,
}

/// Insert `term` just before the placeholder at `path`, keeping the
/// placeholder for later rounds.
fn insert_at(e: &mut Expr, path: &[usize], term: Expr) {
    let (&pos, parents) = path.split_last().expect("hole path is never empty");
    let mut node = e;
    for &i in parents {
        let Expr::Op { args, .. } = node else { unreachable!("path follows operators") };
        node = &mut args[i];
    }
    if let Expr::Op { kind, args, consts } = node {
        args.insert(pos, term);
        if *kind == OpKind::Add {
            consts.insert(pos, FREE);
        }
    }
}

/// Shared state of one search: term memo, emitted keys, matrix and config.
struct Engine {
    table: TermTable,
    seen: HashSet<String>,
}

impl Engine {
    fn new(m: AdjacencyMatrix, cfg: SearchConfig) -> Engine {
        Engine {
            table: TermTable::new(m, cfg),
            seen: HashSet::new(),
        }
    }

    fn cfg(&self) -> &SearchConfig {
        &self.table.cfg
    }

    fn offer(&mut self, raw: &Expr, root: OpKind, round: usize, expansions: usize) -> Option<SkeletonCandidate> {
        let expr = canonicalize(&raw.renumber_slots());
        if expr.var_count() == 0 || !paths_ok(&expr, Ctx::default(), self.cfg()) {
            return None;
        }
        if self.cfg().strict {
            match encode_expression(&expr) {
                Ok(enc) if enc.is_subset_of(&self.table.m) => {}
                _ => return None,
            }
        }
        if !self.seen.insert(structure_key(&expr)) {
            return None;
        }
        Some(SkeletonCandidate {
            expr,
            root,
            round,
            expansions,
        })
    }

    fn base_round(&mut self) -> Vec<SkeletonCandidate> {
        let cap = self.cfg().max_candidates_per_round;
        let max_depth = self.cfg().max_depth;
        let allowed = root_candidates(&self.table.m);
        let ranked: Vec<_> = ranked_roots(&self.table.m)
            .into_iter()
            .filter(|r| allowed.contains(&r.kind))
            .collect();
        let mut out = Vec::new();
        for tier in 1..=3 {
            let group: Vec<OpKind> = ranked.iter().filter(|r| r.tier == tier).map(|r| r.kind).collect();
            for d in 1..=max_depth {
                for &root in &group {
                    let terms = self.table.exact(Node::Op(root), d, Ctx::default());
                    for (t, _) in terms.iter() {
                        if out.len() >= cap {
                            return out;
                        }
                        out.extend(self.offer(t, root, 0, 0));
                    }
                }
            }
        }
        out
    }

    /// Expansions of `s` as (site, term) choices, shallow terms first. The
    /// expanded trees are only built when a choice is taken.
    fn expansion_options(&mut self, s: &SkeletonCandidate) -> Vec<Expansion> {
        let sites = hole_sites(&s.expr, self.cfg());
        let mut opts = Vec::new();
        for (si, site) in sites.iter().enumerate() {
            for kid in self.table.kids(site.parent, site.inner) {
                let terms = self.table.upto(kid, site.room, site.inner);
                for (ti, (_, h)) in terms.iter().enumerate() {
                    opts.push((*h, si, terms.clone(), ti));
                }
            }
        }
        opts.sort_by_key(|o| o.0);
        opts.into_iter()
            .map(|(_, si, terms, ti)| Expansion {
                path: sites[si].path.clone(),
                terms,
                index: ti,
            })
            .collect()
    }

    /// One expansion round over `sources`, interleaving their options so no
    /// single source fills the round.
    fn expansion_round(&mut self, sources: &[SkeletonCandidate], round: usize) -> Vec<SkeletonCandidate> {
        let cap = self.cfg().max_candidates_per_round;
        let e = self.cfg().max_expansions;
        let lists: Vec<(&SkeletonCandidate, Vec<Expansion>)> = sources
            .iter()
            .filter(|s| s.expansions < e && s.expr.hole_count() > 0)
            .map(|s| (s, self.expansion_options(s)))
            .collect();
        let longest = lists.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
        let mut out = Vec::new();
        for k in 0..longest {
            for (s, list) in &lists {
                if out.len() >= cap {
                    return out;
                }
                if let Some(x) = list.get(k) {
                    let mut raw = s.expr.clone();
                    insert_at(&mut raw, &x.path, x.terms[x.index].0.clone());
                    out.extend(self.offer(&raw, s.root, round, s.expansions + 1));
                }
            }
        }
        out
    }
}

/// Lazy, deterministic candidate stream for one matrix, produced a round at
/// a time: the base round, then up to `max_expansions` expansion rounds.
pub struct Search {
    engine: Engine,
    next_round: usize,
    last: Vec<SkeletonCandidate>,
    buffer: VecDeque<SkeletonCandidate>,
}

pub fn search(m: &AdjacencyMatrix, cfg: &SearchConfig) -> Search {
    Search {
        engine: Engine::new(*m, cfg.clone()),
        next_round: 0,
        last: Vec::new(),
        buffer: VecDeque::new(),
    }
}

impl Search {
    /// Rounds generated so far.
    pub fn rounds(&self) -> usize {
        self.next_round
    }
}

impl Iterator for Search {
    type Item = SkeletonCandidate;

    fn next(&mut self) -> Option<SkeletonCandidate> {
        loop {
            if let Some(c) = self.buffer.pop_front() {
                return Some(c);
            }
            let r = self.next_round;
            if r > self.engine.cfg().max_expansions || (r > 0 && self.last.is_empty()) {
                return None;
            }
            let batch = if r == 0 {
                self.engine.base_round()
            } else {
                let sources = std::mem::take(&mut self.last);
                self.engine.expansion_round(&sources, r)
            };
            self.next_round += 1;
            self.last = batch.clone();
            self.buffer.extend(batch);
        }
    }
}

/// Candidates obtained by filling one placeholder of `s` with a term
/// searched under the placeholder's parent.
pub fn expand_placeholder(
    s: &SkeletonCandidate,
    m: &AdjacencyMatrix,
    cfg: &SearchConfig,
) -> Result<Vec<SkeletonCandidate>, SearchError> {
    if s.expr.hole_count() == 0 {
        return Err(SearchError::NoPlaceholder);
    }
    let mut engine = Engine::new(*m, cfg.clone());
    Ok(engine.expansion_round(std::slice::from_ref(s), s.round + 1))
}
