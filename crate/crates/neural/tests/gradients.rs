use opfeat_neural::gradcheck::{check_hyperparams, gradient_check, Module};
use opfeat_neural::train::judgment_loss;
use opfeat_neural::{Mat, Model};

#[test]
fn every_block_matches_finite_differences() {
    for m in Module::ALL {
        for seed in [1, 2] {
            let r = gradient_check(m, seed);
            assert!(!r.blocks.is_empty());
            for b in &r.blocks {
                assert!(b.checked > 0, "{m}: {} unchecked", b.block);
                assert!(b.max_relative_error < 1e-4, "{m} seed {seed} {}: {}", b.block, b.max_relative_error);
            }
        }
    }
}

#[test]
fn frozen_blocks_get_exactly_zero_gradient() {
    let mut model = Model::new(check_hyperparams(5)).unwrap();
    model.train_only(&["judge"]);
    let basic = model.basic_features();
    let positions = [[0.2, 0.4], [0.5, -0.3], [0.9, 0.1]];
    let elements = model.set_elements(&positions, &[1.0, -2.0, 0.5]);
    // set encoder and inverse decoder are on the tape but frozen
    let (t, loss) = judgment_loss(&model, &basic, &elements, &Mat::zeros(13, 13));
    let g = t.backward(loss);
    t.accumulate_param_grads(&g, &mut model.store);
    let mut trained = 0;
    for (i, b) in model.store.blocks().iter().enumerate() {
        let grad = model.store.grad(i);
        if b.trainable {
            trained += grad.data.iter().any(|&v| v != 0.0) as usize;
        } else {
            assert!(grad.data.iter().all(|&v| v == 0.0), "{} has a gradient", b.name);
        }
    }
    assert!(trained > 0);
}
