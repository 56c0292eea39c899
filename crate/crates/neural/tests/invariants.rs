use opfeat_core::expr::OpKind;
use opfeat_core::graph::NODE_COUNT;
use opfeat_neural::params::Init;
use opfeat_neural::{HyperParams, Mat, Model, ModelError};
use proptest::prelude::*;

fn small() -> HyperParams {
    HyperParams {
        seed: 17,
        ..HyperParams::default()
    }
}

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.37).sin()).collect()
}

#[test]
fn zero_branch_gives_zero_output() {
    let m = Model::with_init(small(), Init::Zero).unwrap();
    let out = m.deeponet_forward(OpKind::Sin, &ramp(64), &[-0.5, 0.0, 0.7]).unwrap();
    assert_eq!(out, vec![0.0; 3]);
}

#[test]
fn output_is_branch_dot_trunk() {
    let m = Model::new(small()).unwrap();
    let positions = [-0.9, -0.1, 0.4, 0.95];
    let out = m.deeponet_forward(OpKind::Log, &ramp(64), &positions).unwrap();
    let branch = m.branch_vector(OpKind::Log, &ramp(64)).unwrap();
    let trunk = m.trunk_features(&positions);
    for (i, o) in out.iter().enumerate() {
        let dot: f64 = trunk.row(i).iter().zip(&branch).map(|(a, b)| a * b).sum();
        assert!((o - dot).abs() <= 1e-12 * (1.0 + dot.abs()), "{o} vs {dot}");
    }
}

#[test]
fn trunk_is_shared_across_kinds() {
    let m = Model::new(small()).unwrap();
    let positions = [-0.3, 0.2, 0.8];
    let traces: Vec<_> = OpKind::ALL
        .iter()
        .map(|&k| m.deeponet_trace(k, &ramp(64), &positions).unwrap())
        .collect();
    for t in &traces[1..] {
        let bits = |x: &Mat| x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t.trunk), bits(&traces[0].trunk));
    }
    assert_ne!(traces[0].output, traces[1].output);
}

#[test]
fn encoders_are_per_kind_and_decoder_is_shared() {
    let m = Model::new(small()).unwrap();
    let names: Vec<&str> = m.store.blocks().iter().map(|b| b.name.as_str()).collect();
    for k in OpKind::ALL {
        assert!(names.iter().any(|n| n.starts_with(&format!("encoder.{}.", k.label()))), "{k:?}");
    }
    let decoder_blocks = names.iter().filter(|n| n.starts_with("decoder.")).count();
    // four parallel maps of (w, b) plus a residual block and a linear head
    assert_eq!(decoder_blocks, 4 * 2 + 4 + 2);
    let a = m.extract_operator_feature(OpKind::Sin, &ramp(64)).unwrap();
    let b = m.extract_operator_feature(OpKind::Cos, &ramp(64)).unwrap();
    assert_eq!(a.len(), 32);
    assert_ne!(a, b);
    assert_eq!(a, m.extract_operator_feature(OpKind::Sin, &ramp(64)).unwrap());
}

#[test]
fn shape_errors() {
    let m = Model::new(small()).unwrap();
    assert!(matches!(m.deeponet_forward(OpKind::Sin, &ramp(10), &[0.0]), Err(ModelError::Shape(_))));
    assert!(matches!(m.numerical_decode(&[], &[]), Err(ModelError::EmptySet)));
    assert!(matches!(m.numerical_decode(&[[0.0, 0.0]], &[1.0, 2.0]), Err(ModelError::Shape(_))));
    assert!(m.invert_feature(&[0.0; 5]).is_err());
    assert!(m.judge_adjacency(&Mat::zeros(NODE_COUNT, 31), &[0.0; 32]).is_err());
    let bad = HyperParams {
        op_dim: 0,
        ..small()
    };
    assert!(matches!(Model::new(bad), Err(ModelError::Hyper(_))));
}

#[test]
fn degenerate_sets_and_zero_inverse() {
    let m = Model::new(small()).unwrap();
    let one = m.numerical_decode(&[[0.3, 0.1]], &[2.0]).unwrap();
    let many = m.numerical_decode(&[[0.3, 0.1]; 9], &[2.0; 9]).unwrap();
    assert_eq!(one.len(), 16);
    assert!(many.iter().all(|v| v.is_finite()));
    for (a, b) in one.iter().zip(&many) {
        assert!((a - b).abs() < 1e-12);
    }
    let z = Model::with_init(small(), Init::Zero).unwrap();
    assert_eq!(z.invert_feature(&[0.0; 16]).unwrap(), vec![0.0; 32]);
    assert_eq!(m.invert_feature(&one).unwrap().len(), 32);
}

#[test]
fn judgment_probabilities_and_symmetry() {
    let m = Model::new(small()).unwrap();
    let mut basic = m.basic_features();
    let p = m.judge_adjacency(&basic, &[0.1; 32]).unwrap();
    assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
    // give sin and cos the same basic feature
    let sin = OpKind::Sin as usize - 1;
    let cos = OpKind::Cos as usize - 1;
    let row = basic.row(sin).to_vec();
    basic.data[cos * 32..(cos + 1) * 32].copy_from_slice(&row);
    let p = m.judge_adjacency(&basic, &[0.1; 32]).unwrap();
    assert_eq!(p.row(sin), p.row(cos));
}

#[test]
fn ties_round_down() {
    let m = Model::new(small()).unwrap();
    let mut p = Mat::zeros(NODE_COUNT, NODE_COUNT);
    p.data[1] = 0.5;
    p.data[2] = 0.5000001;
    let a = m.binarize(&p);
    assert!(!a.get_index(0, 1));
    assert!(a.get_index(0, 2));
    assert_eq!(a.edge_count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn numerical_decode_ignores_order(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -5.0f64..5.0), 1..40),
        seed in any::<u64>(),
    ) {
        let m = Model::new(small()).unwrap();
        let positions: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let values: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let base = m.numerical_decode(&positions, &values).unwrap();
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pp: Vec<[f64; 2]> = idx.iter().map(|&i| positions[i]).collect();
        let pv: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        let shuffled = m.numerical_decode(&pp, &pv).unwrap();
        for (a, b) in base.iter().zip(&shuffled) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
