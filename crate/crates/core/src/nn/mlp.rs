use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    /// Bumped on every parameter update; caches from older versions are stale.
    #[serde(skip)]
    version: u64,
}

/// Activations recorded by a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|g| *g == 0.0)
    }

    /// Same ordering as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g *= k);
        }
    }

    pub(crate) fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g = 0.0);
        }
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for l in &layers {
            l.validate()?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    /// `sizes = [in, hidden..., out]`; hidden layers use `hidden`, the last
    /// layer `output`.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape("need at least input and output sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Multiply-accumulates per forward pass, counting only nonzero weights.
    pub fn active_macs(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.iter().filter(|w| **w != 0.0).count())
            .sum()
    }

    /// Flat parameter vector: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn param_name(&self, mut idx: usize) -> String {
        for (li, l) in self.layers.iter().enumerate() {
            if idx < l.weights.len() {
                return format!("layer{li}.W[{},{}]", idx / l.in_dim, idx % l.in_dim);
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return format!("layer{li}.b[{idx}]");
            }
            idx -= l.bias.len();
        }
        format!("param[{idx}]")
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layers[0].check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            let act = l.activation;
            a = l
                .pre_activation(&a)
                .into_iter()
                .map(|z| act.apply(z))
                .collect();
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache> {
        self.layers[0].check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&a);
            let act = l.activation;
            let next = z.iter().map(|z| act.apply(*z)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(MlpCache {
            version: self.version,
            inputs,
            pre,
            output: a,
        })
    }

    /// Smallest `|z|` over ReLU pre-activations for input `x`.
    pub fn min_relu_margin(&self, x: &[f64]) -> Result<f64> {
        let cache = self.forward_cached(x)?;
        Ok(self
            .layers
            .iter()
            .zip(&cache.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }

    /// Reverse pass accumulating into `grads`.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        loss_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache is stale or from another model".into(),
            ));
        }
        if loss_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "loss gradient has {} entries, model outputs {}",
                loss_grad.len(),
                self.output_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer does not match model".into()));
        }
        let mut delta_out = loss_grad.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let z = &cache.pre[li];
            let a_out: &[f64] = if li + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[li + 1]
            };
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(z)
                .zip(a_out)
                .map(|((d, z), a)| d * l.activation.derivative(*z, *a))
                .collect();
            let x = &cache.inputs[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; l.in_dim];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta_out = prev;
            }
        }
        Ok(())
    }

    /// Plain SGD step. Masked (pruned) weights are left untouched.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer does not match model".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            match &l.mask {
                Some(mask) => {
                    for ((w, gw), keep) in l.weights.iter_mut().zip(&g.weights).zip(mask) {
                        if *keep {
                            *w -= lr * gw;
                        }
                    }
                }
                None => {
                    for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                        *w -= lr * gw;
                    }
                }
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        self.version += 1;
        Ok(())
    }
}

pub fn mlp_forward(model: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    model.forward(x)
}

/// Gradients of a loss with `dL/d(output) = loss_grad`.
pub fn backward(model: &Mlp, cache: &MlpCache, loss_grad: &[f64]) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(model);
    model.backward_into(cache, loss_grad, &mut g)?;
    Ok(g)
}

/// `L = Σ (y - t)²` and its gradient with respect to `y`.
pub fn squared_error(output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if output.len() != target.len() {
        return Err(Error::Shape(format!(
            "output has {} entries, target {}",
            output.len(),
            target.len()
        )));
    }
    let grad: Vec<f64> = output
        .iter()
        .zip(target)
        .map(|(y, t)| 2.0 * (y - t))
        .collect();
    let loss = output
        .iter()
        .zip(target)
        .map(|(y, t)| (y - t).powi(2))
        .sum();
    Ok((loss, grad))
}
