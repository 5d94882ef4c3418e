use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub l1: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![64, 32, 16],
            epochs: 10,
            batch_size: 32,
            dropout: 0.5,
            l1: 0.005,
            l2: 0.001,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bn_momentum: 0.9,
        }
    }
}

const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[n_in × n_out]`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Dense → batch norm → ReLU → dropout per hidden layer, then a single
/// sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub norms: Vec<BatchNorm>,
}

/// Batch-norm behaviour for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the current batch statistics.
    Batch,
    /// Normalize with the running statistics.
    Running,
}

struct HiddenCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    pre_relu: Array2<f64>,
    mask: Option<Array2<f64>>,
}

struct Cache {
    hidden: Vec<HiddenCache>,
    last: Array2<f64>,
    logits: Array1<f64>,
}

fn bce_with_logits(s: f64, y: f64) -> f64 {
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, identity batch norm.
    pub fn new(n_in: usize, hidden: &[usize], rng: &mut Rng) -> Mlp {
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut fan_in = n_in;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            let limit = (6.0 / (fan_in + h) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, h), |_| rng.random_range(-limit..=limit));
            layers.push(Dense { w, b: Array1::zeros(h) });
            fan_in = h;
        }
        for &h in hidden {
            norms.push(BatchNorm {
                gamma: Array1::ones(h),
                beta: Array1::zeros(h),
                running_mean: Array1::zeros(h),
                running_var: Array1::ones(h),
            });
        }
        Mlp { layers, norms }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].w.nrows()
    }

    /// `(n_in, n_out)` of every dense layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.w.dim()).collect()
    }

    fn forward(&self, x: ArrayView2<f64>, mode: BnMode, mut dropout: Option<(&mut Rng, f64)>) -> Cache {
        let mut a = x.to_owned();
        let mut hidden = Vec::with_capacity(self.norms.len());
        for (layer, bn) in self.layers.iter().zip(&self.norms) {
            let z = a.dot(&layer.w) + &layer.b;
            let (mean, var) = match mode {
                BnMode::Batch => {
                    let m = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let v = z.var_axis(Axis(0), 0.0);
                    (m, v)
                }
                BnMode::Running => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let pre_relu = &xhat * &bn.gamma + &bn.beta;
            let mut out = pre_relu.mapv(|u| u.max(0.0));
            let mask = match dropout.as_mut() {
                Some((rng, p)) if *p > 0.0 => {
                    let keep = 1.0 - *p;
                    let m = Array2::from_shape_fn(out.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            hidden.push(HiddenCache { input: a, xhat, inv_std, batch_mean: mean, batch_var: var, pre_relu, mask });
            a = out;
        }
        let out_layer = self.layers.last().unwrap();
        let logits = a.dot(&out_layer.w).column(0).to_owned() + out_layer.b[0];
        Cache { hidden, last: a, logits }
    }

    /// Gradients of the mean data loss, in [`Mlp::trainable_mut`] order.
    fn backward(&self, cache: &Cache, dlogits: &Array1<f64>, mode: BnMode) -> Vec<Vec<f64>> {
        let n_layers = self.layers.len();
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let out_layer = &self.layers[n_layers - 1];
        let g = dlogits.view().insert_axis(Axis(1));
        let dw = cache.last.t().dot(&g);
        let db = dlogits.sum();
        let mut da = g.dot(&out_layer.w.t());
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![vec![dw.iter().copied().collect(), vec![db]]];
        let batch = dlogits.len() as f64;
        for l in (0..n_layers - 1).rev() {
            let hc = &cache.hidden[l];
            let bn = &self.norms[l];
            if let Some(m) = &hc.mask {
                da *= m;
            }
            let du = da * &hc.pre_relu.mapv(|u| if u > 0.0 { 1.0 } else { 0.0 });
            let dgamma = (&du * &hc.xhat).sum_axis(Axis(0));
            let dbeta = du.sum_axis(Axis(0));
            let dxhat = &du * &bn.gamma;
            let dz = match mode {
                BnMode::Running => &dxhat * &hc.inv_std,
                BnMode::Batch => {
                    let s1 = dxhat.sum_axis(Axis(0));
                    let s2 = (&dxhat * &hc.xhat).sum_axis(Axis(0));
                    let inner = &dxhat * batch - &s1 - &hc.xhat * &s2;
                    inner * &(&hc.inv_std / batch)
                }
            };
            let dw = hc.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            da = dz.dot(&self.layers[l].w.t());
            per_layer.push(vec![
                dw.iter().copied().collect(),
                db.to_vec(),
                dgamma.to_vec(),
                dbeta.to_vec(),
            ]);
        }
        per_layer.reverse();
        // hidden layers carry w, b, gamma, beta; the output layer w, b
        for block in per_layer {
            grads.extend(block);
        }
        grads
    }

    /// Trainable tensors: per hidden layer `w, b, gamma, beta`, then output `w, b`.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let n = self.layers.len();
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push(layer.w.as_slice_mut().expect("standard layout"));
            out.push(layer.b.as_slice_mut().expect("standard layout"));
            if i + 1 < n {
                let bn = norms.next().unwrap();
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    fn penalty(&self, l1: f64, l2: f64) -> f64 {
        self.layers.iter().map(|l| l.w.iter().map(|w| l1 * w.abs() + l2 * w * w).sum::<f64>()).sum()
    }

    /// Mean binary cross-entropy plus the weight penalty, without dropout.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[u8], l1: f64, l2: f64, mode: BnMode) -> f64 {
        let c = self.forward(x, mode, None);
        let data = c.logits.iter().zip(y).map(|(s, t)| bce_with_logits(*s, f64::from(*t))).sum::<f64>() / y.len() as f64;
        data + self.penalty(l1, l2)
    }

    /// Analytic gradient of [`Mlp::loss`].
    pub fn loss_grad(&self, x: ArrayView2<f64>, y: &[u8], l1: f64, l2: f64, mode: BnMode) -> Vec<Vec<f64>> {
        let c = self.forward(x, mode, None);
        self.grad_from_cache(&c, y, l1, l2, mode)
    }

    fn grad_from_cache(&self, c: &Cache, y: &[u8], l1: f64, l2: f64, mode: BnMode) -> Vec<Vec<f64>> {
        let n = y.len() as f64;
        let dlogits = Array1::from_iter(c.logits.iter().zip(y).map(|(s, t)| (sigmoid(*s) - f64::from(*t)) / n));
        let mut grads = self.backward(c, &dlogits, mode);
        // weight tensors sit at positions 0, 4, 8, ... and last-but-one
        let n_layers = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let pos = if i + 1 < n_layers { 4 * i } else { 4 * (n_layers - 1) };
            for (g, w) in grads[pos].iter_mut().zip(layer.w.iter()) {
                *g += l1 * w.signum() * f64::from(u8::from(*w != 0.0)) + 2.0 * l2 * w;
            }
        }
        grads
    }

    pub fn fit(x: ArrayView2<f64>, y: &[u8], params: &MlpParams, seed: u64) -> Result<Mlp> {
        Ok(Self::fit_with_history(x, y, params, seed)?.0)
    }

    /// Train and return the mean mini-batch objective of every epoch.
    pub fn fit_with_history(x: ArrayView2<f64>, y: &[u8], params: &MlpParams, seed: u64) -> Result<(Mlp, Vec<f64>)> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(Error::Data("MLP training needs matching, non-empty inputs".into()));
        }
        if !(0.0..1.0).contains(&params.dropout) || params.batch_size == 0 || !(params.learning_rate > 0.0) {
            return Err(Error::Config("invalid MLP hyper-parameters".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut model = Mlp::new(x.ncols(), &params.hidden, &mut rng);
        let mut m1: Vec<Vec<f64>> = model.trainable_mut().iter().map(|t| vec![0.0; t.len()]).collect();
        let mut m2 = m1.clone();
        let mut step = 0i32;
        let n = x.nrows();
        let batch = params.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(params.epochs);
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut n_batches = 0;
            for chunk in order.chunks(batch) {
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
                let cache = model.forward(xb.view(), BnMode::Batch, Some((&mut rng, params.dropout)));
                let data = cache.logits.iter().zip(&yb).map(|(s, t)| bce_with_logits(*s, f64::from(*t))).sum::<f64>()
                    / yb.len() as f64;
                epoch_loss += data + model.penalty(params.l1, params.l2);
                n_batches += 1;
                let grads = model.grad_from_cache(&cache, &yb, params.l1, params.l2, BnMode::Batch);
                let mom = params.bn_momentum;
                for (bn, hc) in model.norms.iter_mut().zip(&cache.hidden) {
                    bn.running_mean = &bn.running_mean * mom + &hc.batch_mean * (1.0 - mom);
                    bn.running_var = &bn.running_var * mom + &hc.batch_var * (1.0 - mom);
                }
                step += 1;
                let c1 = 1.0 - params.beta1.powi(step);
                let c2 = 1.0 - params.beta2.powi(step);
                for (((theta, g), m), v) in model.trainable_mut().into_iter().zip(&grads).zip(&mut m1).zip(&mut m2) {
                    for k in 0..theta.len() {
                        m[k] = params.beta1 * m[k] + (1.0 - params.beta1) * g[k];
                        v[k] = params.beta2 * v[k] + (1.0 - params.beta2) * g[k] * g[k];
                        let mhat = m[k] / c1;
                        let vhat = v[k] / c2;
                        theta[k] -= params.learning_rate * mhat / (vhat.sqrt() + params.epsilon);
                    }
                }
            }
            history.push(epoch_loss / n_batches as f64);
        }
        Ok((model, history))
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.forward(x, BnMode::Running, None).logits.iter().map(|s| sigmoid(*s)).collect()
    }
}
