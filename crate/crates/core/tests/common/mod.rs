#![allow(dead_code)]

pub mod oracle;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use roomgeo::nn::{mse_loss, Layer, Mode, Sequential, Tensor};

/// Central-difference step.
pub const H: f64 = 1e-5;
/// Largest accepted relative gradient error.
pub const GRAD_TOL: f64 = 1e-6;
/// Denominator floor for gradients that are numerically zero.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `[lo, hi]` with a random sign, so nothing sits near zero.
pub fn signed_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + H;
    let plus = f(x);
    x[i] = orig - H;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * H)
}

/// Worst relative error of the input and parameter gradients of
/// `sum(w * layer(x))` for a random upstream weighting `w`.
pub fn check_layer(layer: &mut dyn Layer, x: &Tensor, rng: &mut ChaCha8Rng) -> f64 {
    let y = layer.forward(x).unwrap();
    let w = random_tensor(y.shape(), rng, -1.0, 1.0);
    let dx = layer.backward(&w).unwrap();
    let param_grads: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut xs = x.data().to_vec();
    for i in 0..xs.len() {
        let numeric = central_difference(&mut xs, i, |v| {
            let t = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
            dot(layer.forward(&t).unwrap().data(), w.data())
        });
        worst = worst.max(rel_err(dx.data()[i], numeric));
    }
    for (pi, grads) in param_grads.iter().enumerate() {
        for j in 0..grads.len() {
            let mut values = layer.params()[pi].value.data().to_vec();
            let numeric = central_difference(&mut values, j, |v| {
                layer.params_mut()[pi].value.data_mut().copy_from_slice(v);
                dot(layer.forward(x).unwrap().data(), w.data())
            });
            layer.params_mut()[pi].value.data_mut().copy_from_slice(&values);
            worst = worst.max(rel_err(grads[j], numeric));
        }
    }
    worst
}

/// Worst relative error of the MSE loss gradient with respect to the prediction.
pub fn check_mse(pred: &Tensor, target: &Tensor) -> f64 {
    let analytic = mse_loss(pred, target).unwrap().grad;
    let mut p = pred.data().to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let numeric = central_difference(&mut p, i, |v| {
            let t = Tensor::new(pred.shape().to_vec(), v.to_vec()).unwrap();
            mse_loss(&t, target).unwrap().total
        });
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

/// Worst relative error of every parameter gradient of `mse(net(x), target)`.
pub fn check_network(net: &mut Sequential, x: &Tensor, target: &Tensor) -> f64 {
    let pred = net.forward(x, Mode::Train).unwrap();
    let loss = mse_loss(&pred, target).unwrap();
    net.backward(&loss.grad).unwrap();
    let param_grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (pi, grads) in param_grads.iter().enumerate() {
        for j in 0..grads.len() {
            let mut values = net.params()[pi].value.data().to_vec();
            let numeric = central_difference(&mut values, j, |v| {
                net.params_mut()[pi].value.data_mut().copy_from_slice(v);
                let pred = net.forward(x, Mode::Train).unwrap();
                mse_loss(&pred, target).unwrap().total
            });
            net.params_mut()[pi].value.data_mut().copy_from_slice(&values);
            worst = worst.max(rel_err(grads[j], numeric));
        }
    }
    worst
}

/// Randomized gradient checks over every layer type; returns
/// `(cases run, worst relative error)`.
pub fn run_gradient_suite(seed: u64) -> (usize, f64) {
    use rand::SeedableRng;
    use roomgeo::nn::{BatchNorm1d, Conv1d, Linear, Relu, Reshape};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    let mut worst: f64 = 0.0;

    for _ in 0..30 {
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..5));
        let kernel = rng.random_range(1..5);
        let stride = rng.random_range(1..5);
        let lout = rng.random_range(1..5);
        let len = (lout - 1) * stride + kernel;
        let n = rng.random_range(1..4);
        let mut layer = Conv1d::new(cin, cout, kernel, stride, &mut rng);
        let x = random_tensor(&[n, cin, len], &mut rng, -1.0, 1.0);
        worst = worst.max(check_layer(&mut layer, &x, &mut rng));
        cases += 1;
    }
    for _ in 0..25 {
        let (n, c, len) = (rng.random_range(2..5), rng.random_range(1..4), rng.random_range(1..5));
        let mut layer = BatchNorm1d::new(c);
        for p in layer.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = random_tensor(&shape, &mut rng, 0.5, 1.5);
        }
        let x = random_tensor(&[n, c, len], &mut rng, -2.0, 2.0);
        worst = worst.max(check_layer(&mut layer, &x, &mut rng));
        cases += 1;
    }
    for _ in 0..25 {
        let (n, fin, fout) = (rng.random_range(1..5), rng.random_range(1..8), rng.random_range(1..5));
        let mut layer = Linear::new(fin, fout, &mut rng);
        let x = random_tensor(&[n, fin], &mut rng, -1.0, 1.0);
        worst = worst.max(check_layer(&mut layer, &x, &mut rng));
        cases += 1;
    }
    for _ in 0..15 {
        let shape = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..6)];
        let mut layer = Relu::new();
        let x = signed_away_from_zero(&shape, &mut rng, 0.1, 1.0);
        worst = worst.max(check_layer(&mut layer, &x, &mut rng));
        cases += 1;
    }
    for _ in 0..15 {
        let n = rng.random_range(1..6);
        let pred = random_tensor(&[n, 3], &mut rng, -2.0, 2.0);
        let target = random_tensor(&[n, 3], &mut rng, -2.0, 2.0);
        worst = worst.max(check_mse(&pred, &target));
        cases += 1;
    }
    for _ in 0..10 {
        let n = rng.random_range(2..5);
        let mut net = Sequential::new();
        net.push(Reshape::new(&[1, 16]));
        net.push(Conv1d::new(1, 3, 4, 4, &mut rng));
        net.push(BatchNorm1d::new(3));
        net.push(Reshape::new(&[12]));
        net.push(Linear::new(12, 5, &mut rng));
        net.push(Linear::new(5, 3, &mut rng));
        let x = random_tensor(&[n, 16], &mut rng, -1.0, 1.0);
        let target = random_tensor(&[n, 3], &mut rng, 1.0, 4.0);
        worst = worst.max(check_network(&mut net, &x, &target));
        cases += 1;
    }
    (cases, worst)
}
