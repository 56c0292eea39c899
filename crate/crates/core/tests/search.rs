use std::collections::BTreeSet;

use opfeat_core::expr::{canonicalize, shape_key, skeletonize, Constant, Expr, OpKind};
use opfeat_core::graph::{encode_expression, AdjacencyMatrix, NODE_COUNT};
use opfeat_core::search::{check_nesting, search, SearchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [OpKind; 6] = [
    OpKind::Add,
    OpKind::Mul,
    OpKind::Sin,
    OpKind::Cos,
    OpKind::Exp,
    OpKind::Log,
];

/// Every expression of node depth at most `depth` over `KINDS` and two
/// variables, with binary sums and products.
fn enumerate(depth: usize) -> Vec<Expr> {
    if depth == 1 {
        return vec![Expr::var(1), Expr::var(2)];
    }
    let below = enumerate(depth - 1);
    let mut out = below.clone();
    for k in KINDS {
        if k.is_binary() {
            for (i, a) in below.iter().enumerate() {
                for b in &below[i..] {
                    let pair = vec![a.clone(), b.clone()];
                    out.push(match k {
                        OpKind::Add => Expr::add(pair, vec![Constant::ONE; 2]),
                        _ => Expr::mul(pair, Constant::ONE),
                    });
                }
            }
        } else {
            out.extend(below.iter().map(|a| Expr::unary(k, a.clone())));
        }
    }
    out
}

fn kind_paths(e: &Expr, prefix: &mut Vec<OpKind>, out: &mut Vec<Vec<OpKind>>) {
    match e {
        Expr::Op { kind, args, .. } if e.leaf_var().is_none() => {
            prefix.push(*kind);
            for a in args {
                kind_paths(a, prefix, out);
            }
            prefix.pop();
        }
        _ => out.push(prefix.clone()),
    }
}

fn admissible(e: &Expr, cfg: &SearchConfig) -> bool {
    let mut paths = Vec::new();
    kind_paths(e, &mut Vec::new(), &mut paths);
    paths.iter().all(|p| check_nesting(p, cfg))
}

#[test]
fn completeness_up_to_depth_three() {
    let cfg = SearchConfig::default();
    let mut targets = BTreeSet::new();
    for e in enumerate(3) {
        let skel = skeletonize(&e);
        if skel.kind().is_none() || skel.leaf_var().is_some() || !admissible(&skel, &cfg) {
            continue;
        }
        targets.insert((shape_key(&skel), canonicalize(&e).to_string()));
    }
    assert!(targets.len() > 100, "only {} targets", targets.len());
    let mut missing = Vec::new();
    for (key, text) in &targets {
        let e = opfeat_core::expr::parse(text).unwrap();
        let m = encode_expression(&e).unwrap();
        if !search(&m, &cfg).any(|c| &shape_key(&c.expr) == key) {
            missing.push(text.clone());
        }
    }
    assert!(missing.is_empty(), "not found: {missing:?}");
}

fn random_matrix(rng: &mut ChaCha8Rng, density: f64) -> AdjacencyMatrix {
    let mut m = AdjacencyMatrix::new();
    for r in 0..11 {
        for c in 0..NODE_COUNT {
            if rng.gen_bool(density) {
                m.set_index(r, c, true);
            }
        }
    }
    m
}

#[test]
fn strict_search_is_sound() {
    let cfg = SearchConfig {
        strict: true,
        max_expansions: 0,
        ..SearchConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let m = random_matrix(&mut rng, [0.1, 0.2, 0.35][i % 3]);
        for c in search(&m, &cfg) {
            let enc = encode_expression(&c.expr).unwrap();
            assert!(enc.is_subset_of(&m), "{} leaves the matrix", c.expr);
        }
    }
}

#[test]
fn every_single_flip_terminates() {
    let base = encode_expression(&opfeat_core::expr::parse("sin(x_1)+cos(x_2)+x_1").unwrap()).unwrap();
    let cfg = SearchConfig::default();
    for r in 0..NODE_COUNT {
        for c in 0..NODE_COUNT {
            let n = search(&base.flipped(r, c), &cfg).count();
            assert!(n <= cfg.max_candidates_per_round * (cfg.max_expansions + 1));
        }
    }
}

#[test]
fn emitted_paths_respect_nesting() {
    let cfg = SearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let m = random_matrix(&mut rng, 0.25);
        for c in search(&m, &cfg) {
            assert!(admissible(&c.expr, &cfg), "{}", c.expr);
        }
    }
}
