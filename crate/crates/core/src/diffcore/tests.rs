use super::*;
use crate::error::Error;
use crate::testutil::{assert_grad_close, numeric_grad, uniform_tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

/// Gradient of `build(x)` w.r.t. the leaf `x`, analytic and numeric.
fn check_unary_graph(x0: &Tensor<f64>, build: impl Fn(&mut Tape<f64>, Var) -> Var) {
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let loss = build(&mut tape, x);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap().data().to_vec();
    let numeric = numeric_grad(x0.data(), 1e-5, |p| {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(x0.shape().to_vec(), p.to_vec()).unwrap());
        let l = build(&mut tape, x);
        tape.value(l).item().unwrap()
    });
    assert_grad_close(&analytic, &numeric, 1e-4);
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let v = tape.constant(t(&[2, 1], &[3., 4.]));
    let out = tape.matmul(i, v).unwrap();
    assert_eq!(tape.value(out).data(), &[3., 4.]);

    let a = tape.constant(t(&[1, 2], &[1., 2.]));
    let out = tape.matmul(a, v).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 1]);
    assert_eq!(tape.value(out).data(), &[11.]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = RngStream::new(1);
    let a0 = uniform_tensor(&[3, 4], -2.0, 2.0, &mut rng);
    let b0 = uniform_tensor(&[4, 2], -2.0, 2.0, &mut rng);
    let b_fixed = b0.clone();
    check_unary_graph(&a0, |tape, a| {
        let b = tape.constant(b_fixed.clone());
        let m = tape.matmul(a, b).unwrap();
        tape.sum(m)
    });
    let a_fixed = a0.clone();
    check_unary_graph(&b0, |tape, b| {
        let a = tape.constant(a_fixed.clone());
        let m = tape.matmul(a, b).unwrap();
        let sq = tape.square(m);
        tape.sum(sq)
    });
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1., 2.]));
    let b = tape.constant(t(&[2], &[3., 4.]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4., 6.]);
    let z = tape.constant(t(&[1], &[0.]));
    let e = tape.exp(z);
    assert_eq!(tape.value(e).data(), &[1.]);
    let r = tape.constant(t(&[2], &[-1., 2.]));
    let r = tape.relu(r);
    assert_eq!(tape.value(r).data(), &[0., 2.]);
}

#[test]
fn log_of_non_positive_is_domain_error() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1., 0.]));
    assert!(matches!(tape.log(a), Err(Error::Domain(_))));
}

#[test]
fn broadcast_mismatch_is_dimension_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
}

#[test]
fn every_unary_and_binary_op_matches_finite_differences() {
    let mut rng = RngStream::new(2);
    let x0 = uniform_tensor(&[2, 3], -2.0, 2.0, &mut rng);
    let other = uniform_tensor(&[2, 3], -2.0, 2.0, &mut rng);
    let bias = uniform_tensor(&[3], -2.0, 2.0, &mut rng);
    for kind in [UnaryKind::Exp, UnaryKind::Square, UnaryKind::Relu, UnaryKind::Tanh] {
        check_unary_graph(&x0, |tape, x| {
            let y = tape.unary(kind, x).unwrap();
            let w = tape.constant(other.clone());
            let yw = tape.mul(y, w).unwrap();
            tape.sum(yw)
        });
    }
    // log needs positive inputs
    let pos = x0.map(|v| v.abs() + 0.5);
    check_unary_graph(&pos, |tape, x| {
        let y = tape.log(x).unwrap();
        tape.sum(y)
    });
    for kind in [BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul] {
        // full-shape operand
        check_unary_graph(&x0, |tape, x| {
            let o = tape.constant(other.clone());
            let y = tape.binary(kind, o, x).unwrap();
            let y = tape.square(y);
            tape.sum(y)
        });
        // broadcast operand
        check_unary_graph(&bias, |tape, b| {
            let o = tape.constant(other.clone());
            let y = tape.binary(kind, o, b).unwrap();
            let y = tape.square(y);
            tape.mean(y)
        });
    }
    check_unary_graph(&x0, |tape, x| {
        let y = tape.scale(x, -1.7);
        let y = tape.offset(y, 0.3);
        let y = tape.tanh(y);
        tape.sum(y)
    });
}

#[test]
fn reduce_examples_and_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[2., 4.]));
    let m = tape.mean(a);
    assert_eq!(tape.value(m).item().unwrap(), 3.0);
    let b = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let s = tape.reduce(ReduceKind::Sum, b, &[0]).unwrap();
    assert_eq!(tape.value(s).data(), &[4., 6.]);
    let s1 = tape.reduce(ReduceKind::Mean, b, &[1]).unwrap();
    assert_eq!(tape.value(s1).data(), &[1.5, 3.5]);
    assert!(matches!(tape.reduce(ReduceKind::Sum, b, &[2]), Err(Error::Dimension(_))));
}

#[test]
fn mean_gradient_is_uniform_fan_out() {
    let mut rng = RngStream::new(3);
    let x0 = uniform_tensor(&[5], -2.0, 2.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let m = tape.mean(x);
    tape.backward(m).unwrap();
    for g in tape.grad(x).unwrap().data() {
        assert!((g - 0.2).abs() < 1e-15);
    }
    check_unary_graph(&x0, |tape, x| tape.mean(x));
}

#[test]
fn axis_reductions_and_shape_ops_match_finite_differences() {
    let mut rng = RngStream::new(4);
    let x0 = uniform_tensor(&[2, 3, 4], -2.0, 2.0, &mut rng);
    let w = uniform_tensor(&[3], -2.0, 2.0, &mut rng);
    check_unary_graph(&x0, |tape, x| {
        let r = tape.reduce(ReduceKind::Mean, x, &[0, 2]).unwrap();
        let wc = tape.constant(w.clone());
        let r = tape.mul(r, wc).unwrap();
        tape.sum(r)
    });
    let w2 = uniform_tensor(&[2, 4, 3], -2.0, 2.0, &mut rng);
    check_unary_graph(&x0, |tape, x| {
        let s = tape.swap_last_two(x).unwrap();
        let wc = tape.constant(w2.clone());
        let p = tape.mul(s, wc).unwrap();
        let p = tape.reshape(p, &[8, 3]).unwrap();
        let q = tape.narrow_last(p, 1, 2).unwrap();
        let q = tape.square(q);
        tape.sum(q)
    });
    let flat = uniform_tensor(&[10], -2.0, 2.0, &mut rng);
    check_unary_graph(&flat, |tape, f| {
        let a = tape.segment(f, 2, &[2, 2]).unwrap();
        let b = tape.segment(f, 6, &[2, 2]).unwrap();
        let m = tape.matmul(a, b).unwrap();
        let m = tape.square(m);
        tape.sum(m)
    });
}

#[test]
fn filter_bank_ops_are_adjoint_and_differentiable() {
    let mut rng = RngStream::new(5);
    let filt = [0.3, -0.8, 0.5, 0.1];
    let x0 = uniform_tensor(&[2, 6, 2], -2.0, 2.0, &mut rng);
    let y0 = uniform_tensor(&[2, 3, 2], -2.0, 2.0, &mut rng);
    // <D x, y> == <x, U y>
    let mut tape = Tape::new();
    let x = tape.constant(x0.clone());
    let y = tape.constant(y0.clone());
    let dx = tape.downsample(x, &filt).unwrap();
    let uy = tape.upsample(y, &filt).unwrap();
    let lhs: f64 = tape.value(dx).data().iter().zip(y0.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = tape.value(uy).data().iter().zip(x0.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);

    check_unary_graph(&x0, |tape, x| {
        let d = tape.downsample(x, &filt).unwrap();
        let d = tape.tanh(d);
        tape.sum(d)
    });
    check_unary_graph(&y0, |tape, y| {
        let u = tape.upsample(y, &filt).unwrap();
        let u = tape.square(u);
        tape.sum(u)
    });
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[1., 2., 3.]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1., 1., 1.]);

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1., 2.]));
    let sq = tape.square(x);
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2., 4.]);
}

#[test]
fn non_scalar_loss_is_contract_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn constants_never_receive_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1., 2.]));
    let c = tape.constant(t(&[2], &[3., 4.]));
    let p = tape.mul(x, c).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap().data(), &[3., 4.]);
}

#[test]
fn backward_twice_doubles_gradient() {
    let mut rng = RngStream::new(6);
    let x0 = uniform_tensor(&[4], -2.0, 2.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(x0);
    let y = tape.tanh(x);
    let y = tape.square(y);
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    let once = tape.grad(x).unwrap().clone();
    tape.backward(l).unwrap();
    let twice = tape.grad(x).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

/// Three-layer ReLU MLP: analytic gradients of every weight vs central differences.
#[test]
fn three_layer_mlp_gradients() {
    let mut rng = RngStream::new(7);
    let widths = [5, 6, 4, 3];
    let x0 = uniform_tensor(&[4, 5], -2.0, 2.0, &mut rng);
    let mut flat = Vec::new();
    let mut shapes = Vec::new();
    for w in widths.windows(2) {
        shapes.push((flat.len(), vec![w[0], w[1]]));
        flat.extend(uniform_tensor(&[w[0] * w[1]], -1.0, 1.0, &mut rng).into_data());
        shapes.push((flat.len(), vec![w[1]]));
        flat.extend(uniform_tensor(&[w[1]], -1.0, 1.0, &mut rng).into_data());
    }
    let forward = |tape: &mut Tape<f64>, theta: Var| {
        let mut h = tape.constant(x0.clone());
        for (layer, pair) in shapes.chunks(2).enumerate() {
            let w = tape.segment(theta, pair[0].0, &pair[0].1).unwrap();
            let b = tape.segment(theta, pair[1].0, &pair[1].1).unwrap();
            h = tape.linear(h, w, b).unwrap();
            if layer + 1 < shapes.len() / 2 {
                h = tape.relu(h);
            }
        }
        let sq = tape.square(h);
        tape.mean(sq)
    };
    check_unary_graph(&Tensor::vector(flat), forward);
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = RngStream::new(9);
        let x0 = uniform_tensor(&[3, 3], -2.0, 2.0, &mut rng);
        let noise: Tensor<f64> = gaussian_sample(&[3, 3], &mut rng);
        let mut tape = Tape::new();
        let x = tape.param(x0);
        let n = tape.constant(noise);
        let y = tape.mul(x, n).unwrap();
        let y = tape.exp(y);
        let l = tape.mean(y);
        tape.backward(l).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        (bits(tape.value(l)), bits(tape.grad(x).unwrap()))
    };
    assert_eq!(run(), run());
}
