use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_op;
use super::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces a node to a scalar through fixed random weights so every output
/// coordinate carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(rand_t(&mut rng, &shape));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn assert_grad(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let r = check_op(inputs, H, |g, v| {
        let out = build(g, v)?;
        weighted_sum(g, out, 99)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn matmul_identity_and_sum_grad() {
    let mut g = Graph::new();
    let i = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = g.param(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = g.matmul(i, b).unwrap();
    assert_eq!(g.value(c), g.value(b));

    let mut g = Graph::new();
    let a = g.param(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.input(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();
    // ones(2x3) * b^T: each row is the row sums of b.
    assert_eq!(g.grad(a).unwrap(), &[6.0, 15.0, 6.0, 15.0]);
}

#[test]
fn matmul_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[4, 2]);
    assert_grad(&[a.clone(), b], |g, v| g.matmul(v[0], v[1]));
    let bt = rand_t(&mut rng, &[5, 4]);
    assert_grad(&[a.clone(), bt], |g, v| g.matmul_nt(v[0], v[1]));
    assert_grad(&[a], |g, v| g.transpose(v[0]));
}

#[test]
fn linear_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_t(&mut rng, &[3, 4]);
    let w = rand_t(&mut rng, &[4, 5]);
    let b = rand_t(&mut rng, &[5]);
    assert_grad(&[x, w, b], |g, v| g.linear(v[0], v[1], Some(v[2])));
}

#[test]
fn elementwise_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[3, 4]);
    let r = rand_t(&mut rng, &[4]);
    assert_grad(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    assert_grad(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    assert_grad(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    assert_grad(&[a.clone(), r], |g, v| g.add_row(v[0], v[1]));
    assert_grad(&[a.clone()], |g, v| g.affine(v[0], -1.7, 0.3));
    assert_grad(&[a.clone()], |g, v| Ok(g.sigmoid(v[0])));
    assert_grad(&[a.clone()], |g, v| Ok(g.tanh(v[0])));
    assert_grad(&[a.clone()], |g, v| Ok(g.relu(v[0])));
    assert_grad(&[a.clone()], |g, v| Ok(g.gelu(v[0])));
    assert_grad(&[a.clone()], |g, v| g.softmax(v[0]));
    assert_grad(&[a.clone()], |g, v| g.slice_cols(v[0], 1, 2));
    assert_grad(&[a.clone(), b.clone()], |g, v| g.concat_cols(&[v[0], v[1], v[0]]));
    // Mul with a shared operand exercises fan-out accumulation.
    assert_grad(&[a], |g, v| g.mul(v[0], v[0]));
}

#[test]
fn conv_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_t(&mut rng, &[7, 2]);
    let k = rand_t(&mut rng, &[3, 2, 3]);
    let b = rand_t(&mut rng, &[3]);
    assert_grad(&[x.clone(), k.clone(), b], |g, v| g.conv1d(v[0], v[1], Some(v[2]), Padding::Same));
    assert_grad(&[x, k], |g, v| g.conv1d(v[0], v[1], None, Padding::Valid));
}

#[test]
fn conv_examples() {
    let mut g = Graph::new();
    let x = g.input(Tensor::column(vec![1.0, 2.0, 3.0, 4.0]));
    let ones = g.input(Tensor::new(vec![3, 1, 1], vec![1.0; 3]).unwrap());
    let y = g.conv1d(x, ones, None, Padding::Same).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 6.0, 9.0, 7.0]);
    let imp = g.input(Tensor::new(vec![3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap());
    let y = g.conv1d(x, imp, None, Padding::Same).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
    let y = g.conv1d(x, ones, None, Padding::Valid).unwrap();
    assert_eq!(g.value(y).data(), &[6.0, 9.0]);
    let even = g.input(Tensor::new(vec![2, 1, 1], vec![1.0; 2]).unwrap());
    assert!(g.conv1d(x, even, None, Padding::Same).is_err());
}

#[test]
fn pool_and_upsample() {
    let mut g = Graph::new();
    let x = g.input(Tensor::column(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
    let y = g.avg_pool1d(x, 3, 2).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0]);
    assert!(g.avg_pool1d(x, 6, 1).is_err());
    let c = g.input(Tensor::full(&[9, 2], 3.5));
    let y = g.avg_pool1d(c, 5, 2).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 3.5));

    let z = g.input(Tensor::column(vec![0.0, 1.0]));
    let u = g.upsample_linear(z, 3).unwrap();
    assert_eq!(g.value(u).data(), &[0.0, 0.5, 1.0]);
    let u = g.upsample_linear(x, 5).unwrap();
    assert_eq!(g.value(u).data(), g.value(x).data());
    let one = g.input(Tensor::row(vec![2.0, 3.0]));
    let u = g.upsample_linear(one, 3).unwrap();
    assert_eq!(g.value(u).data(), &[2.0, 3.0, 2.0, 3.0, 2.0, 3.0]);
    assert!(g.upsample_linear(x, 0).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_t(&mut rng, &[11, 3]);
    assert_grad(&[x.clone()], |g, v| g.avg_pool1d(v[0], 3, 2));
    assert_grad(&[x.clone()], |g, v| g.upsample_linear(v[0], 25));
    assert_grad(&[x], |g, v| g.upsample_linear(v[0], 4));
}

#[test]
fn layer_norm_behaviour() {
    let mut g = Graph::new();
    let x = g.input(Tensor::matrix(2, 3, vec![5.0, 5.0, 5.0, -1.0, 0.0, 1.0]).unwrap());
    let gain = g.input(Tensor::row(vec![2.0, 2.0, 2.0]));
    let bias = g.input(Tensor::row(vec![0.1, 0.2, 0.3]));
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(&g.value(y).data()[..3], &[0.1, 0.2, 0.3]);
    let s = (2.0f64 / 3.0 + 1e-5).sqrt();
    assert!((g.value(y).data()[5] - (2.0 / s + 0.3)).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_t(&mut rng, &[3, 5]);
    let ga = rand_t(&mut rng, &[5]);
    let b = rand_t(&mut rng, &[5]);
    assert_grad(&[x, ga, b], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let x = g.input(rand_t(&mut rng, &[6, 9]).reshape(vec![6, 9]).unwrap());
    let big = g.affine(x, 300.0, 0.0).unwrap();
    for v in [x, big] {
        let s = g.softmax(v).unwrap();
        for row in g.value(s).data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn sigmoid_value_and_slope() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item().unwrap(), 0.5);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.25]);
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_t(&mut rng, &[6, 1]);
    let b = rand_t(&mut rng, &[6, 1]);
    let r = check_op(&[a, b], H, |g, v| g.mse_mean(v[0], v[1])).unwrap();
    assert!(r.passes(TOL), "{r:?}");

    let p = Tensor::column((0..6).map(|_| rng.random_range(0.05..0.95)).collect());
    let t = Tensor::column(vec![0.0, 1.0, 0.3, 0.6, 0.0, 1.0]);
    let r = check_op(&[p], H, |g, v| {
        let target = g.input(t.clone());
        g.bce_mean(v[0], target)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");

    // bce(w, w) is the mean binary entropy of w, up to the clamp at 0 and 1.
    let mut g = Graph::new();
    let w = g.input(t.clone());
    let l = g.bce_mean(w, w).unwrap();
    let xlnx = |q: f64| if q == 0.0 { 0.0 } else { q * q.ln() };
    let ent = t.data().iter().map(|&q| -(xlnx(q) + xlnx(1.0 - q))).sum::<f64>() / 6.0;
    assert!((g.value(l).item().unwrap() - ent).abs() < 1e-5);
    let bad = g.input(Tensor::column(vec![1.5; 6]));
    assert!(g.bce_mean(w, bad).is_err());
}

#[test]
fn dropout_modes() {
    let mut g = Graph::with_rng(ChaCha8Rng::seed_from_u64(9));
    let x = g.param(Tensor::full(&[50, 4], 1.0));
    assert_eq!(g.dropout(x, 0.1, false).unwrap(), x);
    let y = g.dropout(x, 0.5, true).unwrap();
    let vals = g.value(y).data().to_vec();
    assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(vals.iter().any(|&v| v == 0.0) && vals.iter().any(|&v| v == 2.0));
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &vals[..]);
    let mut plain = Graph::new();
    let x = plain.input(Tensor::scalar(1.0));
    assert!(plain.dropout(x, 0.5, true).is_err());
}

#[test]
fn embedding_lookup() {
    let mut g = Graph::new();
    let t = g.param(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let e = g.embedding(t, &[2, 0, 2]).unwrap();
    assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    let s = g.sum(e);
    g.backward(s).unwrap();
    assert_eq!(g.grad(t).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    assert!(g.embedding(t, &[3]).is_err());
}

#[test]
fn backward_contract() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row(vec![1.0, 2.0, 3.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    assert!(g.backward(s).is_err());

    let mut g = Graph::new();
    let x = g.param(Tensor::row(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::Shape(_))));

    // y = tanh(x) + sigmoid(x): the gradient is the sum of both branches.
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.3));
    let a = g.tanh(x);
    let b = g.sigmoid(x);
    let y = g.add(a, b).unwrap();
    g.backward(y).unwrap();
    let t = 0.3f64.tanh();
    let s = 1.0 / (1.0 + (-0.3f64).exp());
    assert!((g.grad(x).unwrap()[0] - ((1.0 - t * t) + s * (1.0 - s))).abs() < 1e-15);
}
