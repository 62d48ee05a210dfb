//! Brute-force oracles and finite-difference gradient checks for the layer
//! library, shared by the `nn_layers` and `acceptance` targets.

use egoflow::net::{Architecture, Params};
use egoflow::nn::{
    cross_entropy, dense_backward, dense_forward, maxpool2d_backward, maxpool3d_backward, softmax,
    Conv2d, Conv3d, Dense, MaxPool2d, MaxPool3d, Shape3, Tensor3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const LAYER_GRAD_TOLERANCE: f64 = 1e-5;
pub const NETWORK_GRAD_TOLERANCE: f64 = 1e-4;

/// Worst error seen by a suite, per layer.
#[derive(Debug, Default, Clone)]
pub struct Report {
    pub worst: Vec<(&'static str, f64)>,
    pub cases: usize,
}

impl Report {
    fn record(&mut self, layer: &'static str, err: f64) {
        match self.worst.iter_mut().find(|(l, _)| *l == layer) {
            Some((_, w)) => *w = w.max(err),
            None => self.worst.push((layer, err)),
        }
    }

    pub fn max(&self) -> f64 {
        self.worst.iter().map(|w| w.1).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst.iter().all(|w| w.1 <= tol)
    }
}

/// Error relative to the oracle value, with unit floor for values near zero.
fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, s: Shape3) -> Tensor3 {
    Tensor3::from_vec(s, random_vec(rng, s.len())).unwrap()
}

fn naive_conv3d(x: &Tensor3, c: &Conv3d) -> Vec<Vec<f64>> {
    let (is, ks, st) = (x.shape(), c.kernel_shape, c.stride);
    let ext = |i: usize, k: usize, s: usize| (i - k) / s + 1;
    let (or, oc, od) = (
        ext(is.rows, ks.rows, st.rows),
        ext(is.cols, ks.cols, st.cols),
        ext(is.depth, ks.depth, st.depth),
    );
    let mut maps = Vec::new();
    for k in 0..c.kernels {
        let mut m = Vec::new();
        for r in 0..or {
            for cc in 0..oc {
                for d in 0..od {
                    let mut acc = c.biases[k];
                    for i in 0..ks.rows {
                        for j in 0..ks.cols {
                            for t in 0..ks.depth {
                                acc += c.weights[k * ks.len() + (i * ks.cols + j) * ks.depth + t]
                                    * x.at(r * st.rows + i, cc * st.cols + j, d * st.depth + t);
                            }
                        }
                    }
                    m.push(acc);
                }
            }
        }
        maps.push(m);
    }
    maps
}

fn naive_conv2d(x: &Tensor3, c: &Conv2d) -> Vec<f64> {
    let is = x.shape();
    let (or, oc) = (is.rows - c.kernel_rows + 1, is.cols - c.kernel_cols + 1);
    let mut out = vec![0.0; or * oc * c.kernels];
    for r in 0..or {
        for cc in 0..oc {
            for k in 0..c.kernels {
                let mut acc = c.biases[k];
                for i in 0..c.kernel_rows {
                    for j in 0..c.kernel_cols {
                        for ch in 0..c.channels {
                            let w = k * c.kernel_rows * c.kernel_cols * c.channels
                                + (i * c.kernel_cols + j) * c.channels
                                + ch;
                            acc += c.weights[w] * x.at(r + i, cc + j, ch);
                        }
                    }
                }
                out[(r * oc + cc) * c.kernels + k] = acc;
            }
        }
    }
    out
}

fn naive_pool(x: &Tensor3, w: Shape3, s: Shape3) -> Vec<f64> {
    let is = x.shape();
    let ext = |i: usize, k: usize, st: usize| (i - k) / st + 1;
    let mut out = Vec::new();
    for r in 0..ext(is.rows, w.rows, s.rows) {
        for c in 0..ext(is.cols, w.cols, s.cols) {
            for d in 0..ext(is.depth, w.depth, s.depth) {
                let mut m = f64::NEG_INFINITY;
                for i in 0..w.rows {
                    for j in 0..w.cols {
                        for t in 0..w.depth {
                            m = m.max(x.at(r * s.rows + i, c * s.cols + j, d * s.depth + t));
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

fn random_conv3d(rng: &mut ChaCha8Rng) -> (Conv3d, Tensor3) {
    let ks = Shape3::new(
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..5),
    );
    let st = Shape3::new(
        rng.gen_range(1..3),
        rng.gen_range(1..3),
        rng.gen_range(1..3),
    );
    let is = Shape3::new(
        ks.rows + rng.gen_range(0..4),
        ks.cols + rng.gen_range(0..4),
        ks.depth + rng.gen_range(0..5),
    );
    let mut c = Conv3d::zeros(rng.gen_range(1..4), ks, st).unwrap();
    c.weights = random_vec(rng, c.weights.len());
    c.biases = random_vec(rng, c.kernels);
    (c, random_tensor(rng, is))
}

fn random_conv2d(rng: &mut ChaCha8Rng) -> (Conv2d, Tensor3) {
    let (kr, kc, ch) = (
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..5),
    );
    let mut c = Conv2d::zeros(rng.gen_range(1..4), kr, kc, ch).unwrap();
    c.weights = random_vec(rng, c.weights.len());
    c.biases = random_vec(rng, c.kernels);
    let is = Shape3::new(kr + rng.gen_range(0..4), kc + rng.gen_range(0..4), ch);
    (c, random_tensor(rng, is))
}

fn random_pool3d(rng: &mut ChaCha8Rng) -> (MaxPool3d, Tensor3) {
    let w = Shape3::new(
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
    );
    let s = Shape3::new(
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
    );
    let is = Shape3::new(
        w.rows + rng.gen_range(0..5),
        w.cols + rng.gen_range(0..5),
        w.depth + rng.gen_range(0..5),
    );
    let mut p = MaxPool3d::new(w, s);
    p.strict = false;
    (p, random_tensor(rng, is))
}

fn random_dense(rng: &mut ChaCha8Rng) -> (Dense, Vec<f64>) {
    let mut d = Dense::zeros(rng.gen_range(1..12), rng.gen_range(1..8)).unwrap();
    d.weights = random_vec(rng, d.weights.len());
    d.biases = random_vec(rng, d.out_size);
    let x = random_vec(rng, d.in_size);
    (d, x)
}

/// Runs `instances` random cases of every layer against its brute-force
/// definition.
pub fn oracle_suite(instances: usize, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = Report::default();
    for _ in 0..instances {
        let (c, x) = random_conv3d(&mut rng);
        let got = c.forward(&x).unwrap();
        for (g, w) in got.iter().zip(naive_conv3d(&x, &c)) {
            for (a, b) in g.data().iter().zip(&w) {
                rep.record("conv3d", rel(*a, *b));
            }
        }

        let (c, x) = random_conv2d(&mut rng);
        let got = c.forward(&x).unwrap();
        for (a, b) in got.data().iter().zip(naive_conv2d(&x, &c)) {
            rep.record("conv2d", rel(*a, b));
        }

        let (p, x) = random_pool3d(&mut rng);
        let got = p.forward(&x).unwrap();
        for (a, b) in got
            .output
            .data()
            .iter()
            .zip(naive_pool(&x, p.window, p.stride))
        {
            rep.record("pool3d", rel(*a, b));
        }

        let side = rng.gen_range(1..4);
        let s = Shape3::new(
            side * rng.gen_range(1..4),
            side * rng.gen_range(1..4),
            rng.gen_range(1..4),
        );
        let x = random_tensor(&mut rng, s);
        let got = MaxPool2d::new((side, side), (side, side))
            .forward(&x)
            .unwrap();
        let want = naive_pool(&x, Shape3::new(side, side, 1), Shape3::new(side, side, 1));
        for (a, b) in got.output.data().iter().zip(want) {
            rep.record("pool2d", rel(*a, b));
        }

        let (d, x) = random_dense(&mut rng);
        for (o, a) in dense_forward(&x, &d).unwrap().iter().enumerate() {
            let mut b = d.biases[o];
            for i in 0..d.in_size {
                b += d.weights[o * d.in_size + i] * x[i];
            }
            rep.record("dense", rel(*a, b));
        }

        let z: Vec<f64> = (0..rng.gen_range(1..10))
            .map(|_| rng.gen_range(-30.0..30.0))
            .collect();
        let sum: f64 = z.iter().map(|v| v.exp()).sum();
        for (a, v) in softmax(&z).iter().zip(&z) {
            rep.record("softmax", rel(*a, v.exp() / sum));
        }
        rep.cases += 1;
    }
    rep
}

const STEP: f64 = 1e-6;

/// Relative difference between analytic and numeric derivatives. Both
/// below the floor counts as agreement.
fn grad_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn weighted(out: &[f64], c: &[f64]) -> f64 {
    out.iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Layer-wise checks of `L = Σ c_i y_i` for random `c`, over every weight,
/// bias and input element, then an end-to-end check of the shrunken network
/// on sampled coordinates. Reports layer and network errors separately.
pub fn gradient_suite(seeds: u64) -> (Report, Report) {
    let mut layers = Report::default();
    let mut network = Report::default();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let (c, mut x) = random_conv3d(&mut rng);
        let oshape = c.output_shape(x.shape()).unwrap();
        let up: Vec<Tensor3> = (0..c.kernels)
            .map(|_| random_tensor(&mut rng, oshape))
            .collect();
        let loss = |c: &Conv3d, x: &Tensor3| -> f64 {
            c.forward(x)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(m, u)| weighted(m.data(), u.data()))
                .sum()
        };
        let g = c.backward(&x, &up, true).unwrap();
        for i in 0..c.weights.len() {
            let n = central(
                |v| {
                    let mut cc = c.clone();
                    cc.weights[i] = v;
                    loss(&cc, &x)
                },
                c.weights[i],
            );
            layers.record("conv3d", grad_err(g.weights[i], n));
        }
        for i in 0..c.kernels {
            let n = central(
                |v| {
                    let mut cc = c.clone();
                    cc.biases[i] = v;
                    loss(&cc, &x)
                },
                c.biases[i],
            );
            layers.record("conv3d", grad_err(g.biases[i], n));
        }
        let gx = g.input.unwrap();
        for i in 0..x.data().len() {
            let x0 = x.data()[i];
            let n = central(
                |v| {
                    x.data_mut()[i] = v;
                    loss(&c, &x)
                },
                x0,
            );
            x.data_mut()[i] = x0;
            layers.record("conv3d", grad_err(gx.data()[i], n));
        }

        let (c, mut x) = random_conv2d(&mut rng);
        let up = random_tensor(&mut rng, c.output_shape(x.shape()).unwrap());
        let loss = |c: &Conv2d, x: &Tensor3| weighted(c.forward(x).unwrap().data(), up.data());
        let g = c.backward(&x, &up, true).unwrap();
        for i in 0..c.weights.len() {
            let n = central(
                |v| {
                    let mut cc = c.clone();
                    cc.weights[i] = v;
                    loss(&cc, &x)
                },
                c.weights[i],
            );
            layers.record("conv2d", grad_err(g.weights[i], n));
        }
        for i in 0..c.kernels {
            let n = central(
                |v| {
                    let mut cc = c.clone();
                    cc.biases[i] = v;
                    loss(&cc, &x)
                },
                c.biases[i],
            );
            layers.record("conv2d", grad_err(g.biases[i], n));
        }
        let gx = g.input.unwrap();
        for i in 0..x.data().len() {
            let x0 = x.data()[i];
            let n = central(
                |v| {
                    x.data_mut()[i] = v;
                    loss(&c, &x)
                },
                x0,
            );
            x.data_mut()[i] = x0;
            layers.record("conv2d", grad_err(gx.data()[i], n));
        }

        let (p, mut x) = random_pool3d(&mut rng);
        let pooled = p.forward(&x).unwrap();
        let up = random_tensor(&mut rng, pooled.output.shape());
        let gx = maxpool3d_backward(&pooled, &up).unwrap();
        for i in 0..x.data().len() {
            let x0 = x.data()[i];
            let n = central(
                |v| {
                    x.data_mut()[i] = v;
                    weighted(p.forward(&x).unwrap().output.data(), up.data())
                },
                x0,
            );
            x.data_mut()[i] = x0;
            layers.record("pool3d", grad_err(gx.data()[i], n));
        }

        let mut x = random_tensor(&mut rng, Shape3::new(4, 6, 3));
        let p2 = MaxPool2d::new((2, 2), (2, 2));
        let pooled = p2.forward(&x).unwrap();
        let up = random_tensor(&mut rng, pooled.output.shape());
        let gx = maxpool2d_backward(&pooled, &up).unwrap();
        for i in 0..x.data().len() {
            let x0 = x.data()[i];
            let n = central(
                |v| {
                    x.data_mut()[i] = v;
                    weighted(p2.forward(&x).unwrap().output.data(), up.data())
                },
                x0,
            );
            x.data_mut()[i] = x0;
            layers.record("pool2d", grad_err(gx.data()[i], n));
        }

        let (d, mut x) = random_dense(&mut rng);
        let up = random_vec(&mut rng, d.out_size);
        let g = dense_backward(&x, &d, &up).unwrap();
        for i in 0..d.weights.len() {
            let n = central(
                |v| {
                    let mut dd = d.clone();
                    dd.weights[i] = v;
                    weighted(&dd.forward(&x).unwrap(), &up)
                },
                d.weights[i],
            );
            layers.record("dense", grad_err(g.weights[i], n));
        }
        for i in 0..d.out_size {
            let n = central(
                |v| {
                    let mut dd = d.clone();
                    dd.biases[i] = v;
                    weighted(&dd.forward(&x).unwrap(), &up)
                },
                d.biases[i],
            );
            layers.record("dense", grad_err(g.biases[i], n));
        }
        for i in 0..d.in_size {
            let x0 = x[i];
            let n = central(
                |v| {
                    x[i] = v;
                    weighted(&d.forward(&x).unwrap(), &up)
                },
                x0,
            );
            x[i] = x0;
            layers.record("dense", grad_err(g.input[i], n));
        }

        let n = rng.gen_range(2..8);
        let mut z = random_vec(&mut rng, n);
        let label = rng.gen_range(0..z.len());
        let (_, gz) = cross_entropy(&softmax(&z), label).unwrap();
        for i in 0..z.len() {
            let z0 = z[i];
            let n = central(
                |v| {
                    z[i] = v;
                    cross_entropy(&softmax(&z), label).unwrap().0
                },
                z0,
            );
            z[i] = z0;
            layers.record("softmax+xent", grad_err(gz[i], n));
        }
        layers.cases += 1;

        let arch = Architecture::tiny(3);
        let mut p = Params::xavier(&arch, seed).unwrap();
        // Nonzero biases keep activations off the ReLU kink at exactly 0.
        for t in [1, 3, 5, 7, 9] {
            for b in p.tensors_mut()[t].iter_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
        let x = random_tensor(&mut rng, arch.input);
        let label = rng.gen_range(0..3);
        let trace = p.forward(&arch, &x).unwrap();
        let (_, g) = p.backward(&x, &trace, label).unwrap();
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
        for (t, gt) in grads.iter().enumerate() {
            let picks: Vec<usize> = (0..gt.len().min(12))
                .map(|_| rng.gen_range(0..gt.len()))
                .collect();
            for i in picks {
                let w0 = p.tensors()[t][i];
                let n = central(
                    |v| {
                        p.tensors_mut()[t][i] = v;
                        p.loss(&arch, &x, label).unwrap()
                    },
                    w0,
                );
                p.tensors_mut()[t][i] = w0;
                network.record("network", grad_err(gt[i], n));
            }
        }
        network.cases += 1;
    }
    (layers, network)
}
