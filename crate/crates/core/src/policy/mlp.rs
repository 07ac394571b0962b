//! Hand-rolled fully connected network: rectified-linear hidden layers,
//! analytic backprop, and an adaptive-moment optimizer with decoupled
//! weight decay. Small enough that training a policy takes seconds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PolicyError, TrainConfig};

/// Network parameters: `w[l]` maps layer `l` activations to layer `l + 1`
/// pre-activations. Fields are public so tests can perturb weights for
/// finite-difference checks.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

/// Per-parameter gradients, same shapes as [`Mlp`].
#[derive(Clone, Debug)]
pub struct Grads {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Mlp {
    /// He-initialized weights, zero biases.
    pub fn init(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output layers");
        let mut w = Vec::new();
        let mut b = Vec::new();
        for l in 0..sizes.len() - 1 {
            let scale = (2.0 / sizes[l] as f64).sqrt();
            w.push(DMatrix::from_fn(sizes[l + 1], sizes[l], |_, _| {
                let g: f64 = rng.sample(StandardNormal);
                g * scale
            }));
            b.push(DVector::zeros(sizes[l + 1]));
        }
        Self {
            sizes: sizes.to_vec(),
            w,
            b,
        }
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut a = x.clone();
        for l in 0..self.w.len() {
            a = &self.w[l] * a + &self.b[l];
            if l + 1 < self.w.len() {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        a
    }

    /// Loss `(1/N) sum_i ||f(x_i) - y_i||^2` over the batch, with analytic
    /// gradients for every weight and bias.
    pub fn loss_and_grads(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> (f64, Grads) {
        assert_eq!(xs.len(), ys.len());
        let n = xs.len() as f64;
        let layers = self.w.len();
        let mut grads = Grads {
            w: self.w.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            b: self.b.iter().map(|v| DVector::zeros(v.len())).collect(),
        };
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            // Forward, caching post-activation values per layer.
            let mut acts = vec![x.clone()];
            for l in 0..layers {
                let mut a = &self.w[l] * acts.last().unwrap() + &self.b[l];
                if l + 1 < layers {
                    a.apply(|v| *v = v.max(0.0));
                }
                acts.push(a);
            }
            let err = acts.last().unwrap() - y;
            loss += err.norm_squared() / n;
            // Backward: delta is dLoss/dPreactivation at each layer.
            let mut delta = err * (2.0 / n);
            for l in (0..layers).rev() {
                grads.w[l] += &delta * acts[l].transpose();
                grads.b[l] += &delta;
                if l > 0 {
                    delta = self.w[l].transpose() * delta;
                    // ReLU gate: activation zero means the unit was off.
                    for i in 0..delta.len() {
                        if acts[l][i] <= 0.0 {
                            delta[i] = 0.0;
                        }
                    }
                }
            }
        }
        (loss, grads)
    }
}

/// Adaptive-moment optimizer with decoupled weight decay applied to the
/// weight matrices only (biases are not decayed).
pub struct AdamW {
    m: Grads,
    v: Grads,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(net: &Mlp) -> Self {
        let zero = Grads {
            w: net.w.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            b: net.b.iter().map(|v| DVector::zeros(v.len())).collect(),
        };
        Self {
            m: zero.clone(),
            v: zero,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for l in 0..net.w.len() {
            for (p, g, m, v) in [
                (
                    net.w[l].as_mut_slice(),
                    grads.w[l].as_slice(),
                    self.m.w[l].as_mut_slice(),
                    self.v.w[l].as_mut_slice(),
                ),
                (
                    net.b[l].as_mut_slice(),
                    grads.b[l].as_slice(),
                    self.m.b[l].as_mut_slice(),
                    self.v.b[l].as_mut_slice(),
                ),
            ] {
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                }
            }
            // Decoupled decay on weights only.
            let decay = lr * weight_decay;
            for wi in net.w[l].as_mut_slice() {
                *wi -= decay * *wi;
            }
        }
    }
}

/// Minibatch training loop: uniform with-replacement batches, learning rate
/// halved at the midpoint. Deterministic in (data order, cfg, seed).
pub fn train_mlp(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    sizes: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Mlp, f64), PolicyError> {
    if xs.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea1);
    let mut net = Mlp::init(sizes, &mut rng);
    let mut opt = AdamW::new(&net);
    let batch = cfg.batch_size.min(xs.len());
    let mut bx = Vec::with_capacity(batch);
    let mut by = Vec::with_capacity(batch);
    for step in 0..cfg.steps {
        bx.clear();
        by.clear();
        for _ in 0..batch {
            let i = rng.gen_range(0..xs.len());
            bx.push(xs[i].clone());
            by.push(ys[i].clone());
        }
        let lr = if step >= cfg.steps / 2 {
            cfg.learning_rate / 2.0
        } else {
            cfg.learning_rate
        };
        let (loss, grads) = net.loss_and_grads(&bx, &by);
        if !loss.is_finite() {
            return Err(PolicyError::NonFiniteLoss { step, loss });
        }
        opt.step(&mut net, &grads, lr, cfg.weight_decay);
    }
    let (final_loss, _) = net.loss_and_grads(xs, ys);
    Ok((net, final_loss))
}
