use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::tensor::Tensor;

fn rand_tensor(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(b, c, h, w, data).unwrap()
}

/// Random values bounded away from zero (for ReLU/L1/max tie avoidance).
fn rand_tensor_offset(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * c * h * w)
        .map(|_| {
            let v: f32 = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(b, c, h, w, data).unwrap()
}

/// Build `input -> op(..) -> mse(target)`, then finite-difference check in
/// single and double precision.
fn check_op<F>(in_shape: [usize; 4], input: Tensor<f32>, seed: u64, build: F)
where
    F: FnOnce(&mut NetworkGraph, NodeId, &mut ChaCha8Rng) -> NodeId,
{
    let [_, c, h, w] = in_shape;
    let mut g = NetworkGraph::new(c, h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = g.input_node();
    let y = build(&mut g, x0, &mut rng);
    let [yc, yh, yw] = g.node_dims(y).chw().unwrap();
    let target = g.aux_input(yc, yh, yw, "target");
    let loss = g.mse_loss(y, target, "loss").unwrap();

    let target_value = rand_tensor(in_shape[0], yc, yh, yw, seed ^ 0xabcd);
    let objective = GraphObjective { loss_node: loss };

    let report = grad_check(
        &g,
        &input,
        &[(target, target_value.clone())],
        &objective,
        Mode::Train,
        24,
        7,
    )
    .unwrap();
    assert!(
        report.worst < 1e-3,
        "f32 gradcheck failed: {:?}",
        report.per_param
    );

    let input64 = input.cast::<f64>();
    let target64 = target_value.cast::<f64>();
    let report = grad_check_t::<f64, _>(
        &g,
        &input64,
        &[(target, target64)],
        &objective,
        Mode::Train,
        24,
        7,
    )
    .unwrap();
    assert!(
        report.worst < 1e-5,
        "f64 gradcheck failed: {:?}",
        report.per_param
    );
}

#[test]
fn gradcheck_conv2d_same_padding() {
    check_op(
        [2, 3, 6, 6],
        rand_tensor(2, 3, 6, 6, 1),
        11,
        |g, x, rng| g.conv2d(x, 4, 3, 1, 1, true, rng, "conv").unwrap(),
    );
}

#[test]
fn gradcheck_conv2d_strided_no_padding() {
    check_op(
        [1, 2, 7, 7],
        rand_tensor(1, 2, 7, 7, 2),
        12,
        |g, x, rng| g.conv2d(x, 3, 3, 2, 0, true, rng, "conv").unwrap(),
    );
}

#[test]
fn gradcheck_conv2d_1x1_bias_free() {
    check_op(
        [2, 5, 4, 4],
        rand_tensor(2, 5, 4, 4, 3),
        13,
        |g, x, rng| g.conv2d(x, 2, 1, 1, 0, false, rng, "proj").unwrap(),
    );
}

#[test]
fn gradcheck_conv_transpose() {
    check_op(
        [2, 3, 4, 4],
        rand_tensor(2, 3, 4, 4, 4),
        14,
        |g, x, rng| g.conv2d_transpose(x, 2, 2, 2, true, rng, "up").unwrap(),
    );
}

#[test]
fn gradcheck_linear() {
    check_op(
        [3, 6, 1, 1],
        rand_tensor(3, 6, 1, 1, 5),
        15,
        |g, x, rng| g.linear(x, 4, true, rng, "fc").unwrap(),
    );
}

#[test]
fn gradcheck_relu_away_from_ties() {
    check_op(
        [2, 3, 5, 5],
        rand_tensor_offset(2, 3, 5, 5, 6),
        16,
        |g, x, rng| {
            let y = g.conv2d(x, 3, 3, 1, 1, true, rng, "conv").unwrap();
            g.relu(y, "relu").unwrap()
        },
    );
}

#[test]
fn gradcheck_sigmoid() {
    check_op([2, 2, 4, 4], rand_tensor(2, 2, 4, 4, 7), 17, |g, x, _| {
        g.sigmoid(x, "sig").unwrap()
    });
}

#[test]
fn gradcheck_batchnorm_train_mode_batch_of_four() {
    check_op([4, 3, 4, 4], rand_tensor(4, 3, 4, 4, 8), 18, |g, x, rng| {
        g.batch_norm2d(x, rng, "bn").unwrap()
    });
}

#[test]
fn gradcheck_maxpool() {
    check_op([2, 2, 6, 6], rand_tensor(2, 2, 6, 6, 9), 19, |g, x, _| {
        g.max_pool2d(x, 2, 2, "pool").unwrap()
    });
}

#[test]
fn gradcheck_mul_broadcast_spatial_map() {
    // A frequency-attention shaped product: (b,c,h,w) * (b,1,h,w).
    check_op([2, 3, 4, 4], rand_tensor(2, 3, 4, 4, 10), 20, |g, x, rng| {
        let map = g.conv2d(x, 1, 1, 1, 0, true, rng, "map").unwrap();
        let map = g.sigmoid(map, "map.sig").unwrap();
        g.mul_broadcast(x, map, "scale").unwrap()
    });
}

#[test]
fn gradcheck_mul_broadcast_channel_gate() {
    // A channel-attention shaped product: (b,c,h,w) * (b,c,1,1).
    check_op(
        [2, 3, 4, 4],
        rand_tensor_offset(2, 3, 4, 4, 11),
        21,
        |g, x, rng| {
            let sq = g.l1_reduce_per_channel(x, "sq").unwrap();
            let gate = g.linear(sq, 3, false, rng, "fc").unwrap();
            let gate = g.sigmoid(gate, "fc.sig").unwrap();
            g.mul_broadcast(x, gate, "scale").unwrap()
        },
    );
}

#[test]
fn gradcheck_elementwise_max_without_ties() {
    check_op([2, 2, 4, 4], rand_tensor(2, 2, 4, 4, 12), 22, |g, x, rng| {
        let a = g.conv2d(x, 2, 1, 1, 0, true, rng, "a").unwrap();
        let b = g.conv2d(x, 2, 1, 1, 0, true, rng, "b").unwrap();
        g.elementwise_max(a, b, "max").unwrap()
    });
}

#[test]
fn gradcheck_l1_reduce() {
    check_op(
        [2, 3, 4, 4],
        rand_tensor_offset(2, 3, 4, 4, 13),
        23,
        |g, x, _| g.l1_reduce_per_channel(x, "l1").unwrap(),
    );
}

#[test]
fn gradcheck_add_concat_slice() {
    check_op([2, 4, 4, 4], rand_tensor(2, 4, 4, 4, 14), 24, |g, x, rng| {
        let a = g.conv2d(x, 2, 3, 1, 1, true, rng, "a").unwrap();
        let b = g.slice_channels(x, 1, 2, "sl").unwrap();
        let sum = g.add(a, b, "add").unwrap();
        g.concat(&[sum, b], "cat").unwrap()
    });
}

#[test]
fn elementwise_max_example_values() {
    let mut g = NetworkGraph::new(2, 1, 1);
    let b = g.aux_input(2, 1, 1, "b");
    let x0 = g.input_node();
    let y = g.elementwise_max(x0, b, "max").unwrap();
    let a_val = Tensor::from_vec(1, 2, 1, 1, vec![1.0, -2.0]).unwrap();
    let b_val = Tensor::from_vec(1, 2, 1, 1, vec![0.0, -1.0]).unwrap();
    let exec = g.forward_with_aux(&a_val, &[(b, b_val)], Mode::Eval).unwrap();
    assert_eq!(exec.value(y).unwrap().data(), &[1.0, -1.0]);
}

#[test]
fn relu_and_sigmoid_forward_examples() {
    let mut g = NetworkGraph::new(3, 1, 1);
    let r = g.relu(g.input_node(), "r").unwrap();
    let s = g.sigmoid(g.input_node(), "s").unwrap();
    let input = Tensor::from_vec(1, 3, 1, 1, vec![-1.0, 0.0, 2.0]).unwrap();
    let exec = g.forward(&input, Mode::Eval).unwrap();
    assert_eq!(exec.value(r).unwrap().data(), &[0.0, 0.0, 2.0]);
    let sig = exec.value(s).unwrap().data()[1];
    assert_eq!(sig, 0.5);
}

#[test]
fn add_with_zero_is_identity_bit_exact() {
    let mut g = NetworkGraph::new(2, 3, 3);
    let zero = g.param_leaf("zero", vec![1, 2, 3, 3], vec![0.0; 18], false);
    let y = g.add(g.input_node(), zero, "add").unwrap();
    let input = rand_tensor(1, 2, 3, 3, 42);
    let exec = g.forward(&input, Mode::Eval).unwrap();
    assert_eq!(exec.value(y).unwrap().data(), input.data());
}

#[test]
fn mse_of_node_with_itself_gives_zero_gradients() {
    let mut g = NetworkGraph::new(2, 2, 2);
    let h = g.conv2d(
        g.input_node(),
        2,
        1,
        1,
        0,
        true,
        &mut ChaCha8Rng::seed_from_u64(1),
        "conv",
    )
    .unwrap();
    let loss = g.mse_loss(h, h, "loss").unwrap();
    let input = rand_tensor(1, 2, 2, 2, 3);
    let mut exec = g.forward(&input, Mode::Train).unwrap();
    assert_eq!(exec.value(loss).unwrap().scalar_value(), 0.0);
    g.backward(&mut exec, loss).unwrap();
    for p in g.params() {
        assert!(p.grad.iter().all(|&v| v == 0.0), "{} not zero", p.name);
    }
}

#[test]
fn scalar_linear_product_rule() {
    // y = w * x with scalar w and x: dy/dw = x and dy/dx = w.
    let mut g = NetworkGraph::new(1, 1, 1);
    let y = g.linear(
        g.input_node(),
        1,
        false,
        &mut ChaCha8Rng::seed_from_u64(2),
        "fc",
    )
    .unwrap();
    let w_value = 1.75f32;
    g.params_mut()[0].values[0] = w_value;
    let x_value = -0.6f32;
    let input = Tensor::from_vec(1, 1, 1, 1, vec![x_value]).unwrap();
    let mut exec = g.forward(&input, Mode::Eval).unwrap();
    assert!((exec.value(y).unwrap().scalar_value() - w_value * x_value).abs() < 1e-7);
    g.backward_with_seed(&mut exec, y, Tensor::scalar(1.0)).unwrap();
    assert!((g.params()[0].grad[0] - x_value).abs() < 1e-7);
    let gi = exec.grad(g.input_node()).unwrap().scalar_value();
    assert!((gi - w_value).abs() < 1e-7);
}

#[test]
fn forward_is_deterministic_and_eval_bn_is_pure() {
    let mut g = NetworkGraph::new(2, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = g.conv2d(g.input_node(), 3, 3, 1, 1, true, &mut rng, "conv").unwrap();
    let r = g.relu(c, "relu").unwrap();
    let b = g.batch_norm2d(r, &mut rng, "bn").unwrap();
    let input = rand_tensor(2, 2, 4, 4, 6);

    let e1 = g.forward(&input, Mode::Eval).unwrap();
    let e2 = g.forward(&input, Mode::Eval).unwrap();
    assert_eq!(e1.value(b).unwrap().data(), e2.value(b).unwrap().data());
    assert!(e1.bn_updates().is_empty(), "eval mode must not record updates");

    let t1 = g.forward(&input, Mode::Train).unwrap();
    assert_eq!(t1.bn_updates().len(), 2);
    // Train-mode output normalizes with batch statistics: per-channel mean
    // is beta (0) and variance gamma^2 (1) up to eps.
    let out = t1.value(b).unwrap();
    for ci in 0..3 {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for bi in 0..2 {
            for v in out.plane(bi, ci) {
                sum += *v as f64;
                count += 1;
            }
        }
        assert!((sum / count as f64).abs() < 1e-5);
    }
}

#[test]
fn shape_mismatch_reports_the_node() {
    let g = NetworkGraph::new(4, 8, 8);
    let bad = rand_tensor(1, 3, 8, 8, 7);
    match g.forward(&bad, Mode::Eval) {
        Err(Error::GraphExec { node, op, .. }) => {
            assert_eq!(node, 0);
            assert!(op.contains("input"));
        }
        Err(other) => panic!("expected GraphExec error, got {other:?}"),
        Ok(_) => panic!("expected GraphExec error, got Ok"),
    }
}

#[test]
fn backward_before_forward_is_an_error() {
    let mut g = NetworkGraph::new(1, 2, 2);
    let c = g.conv2d(
        g.input_node(),
        1,
        1,
        1,
        0,
        false,
        &mut ChaCha8Rng::seed_from_u64(0),
        "conv",
    )
    .unwrap();
    let input = rand_tensor(1, 1, 2, 2, 8);
    let exec = g.forward(&input, Mode::Eval).unwrap();
    // Seed at a node that was never computed in this execution.
    let mut other = NetworkGraph::new(1, 2, 2);
    let _ = other.relu(other.input_node(), "r").unwrap();
    drop(exec);
    let mut exec2 = g.forward(&input, Mode::Eval).unwrap();
    // Wrong-shaped seed is rejected with node identification.
    let err = g.backward_with_seed(&mut exec2, c, Tensor::scalar(1.0));
    assert!(err.is_err());
}
