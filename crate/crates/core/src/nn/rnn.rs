use serde::{Deserialize, Serialize};

use super::dense::sigmoid;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// `h_t = σ(W_h h_{t-1} + W_x x_t + b_h)`: a single sigmoid gate, no cell
/// state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCell {
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// `hidden_dim x hidden_dim`, row-major.
    pub w_h: Vec<f64>,
    /// `hidden_dim x input_dim`, row-major.
    pub w_x: Vec<f64>,
    pub b_h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentGradients {
    pub w_h: Vec<f64>,
    pub w_x: Vec<f64>,
    pub b_h: Vec<f64>,
    /// Gradient with respect to the initial hidden state.
    pub h0: Vec<f64>,
}

impl RecurrentGradients {
    /// Same ordering as [`RecurrentCell::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.w_h
            .iter()
            .chain(&self.w_x)
            .chain(&self.b_h)
            .copied()
            .collect()
    }
}

/// Hidden states `h_0..=h_T` and inputs `x_1..=x_T` of an unrolled window.
#[derive(Debug, Clone)]
pub struct RnnCache {
    pub hidden: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    fingerprint: (usize, usize),
}

impl RecurrentCell {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        RecurrentCell {
            hidden_dim,
            input_dim,
            w_h: vec![0.0; hidden_dim * hidden_dim],
            w_x: vec![0.0; hidden_dim * input_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    pub fn init(hidden_dim: usize, input_dim: usize, rng: &mut SimRng) -> Self {
        let lh = (6.0 / (2 * hidden_dim) as f64).sqrt();
        let lx = (6.0 / (hidden_dim + input_dim) as f64).sqrt();
        RecurrentCell {
            hidden_dim,
            input_dim,
            w_h: (0..hidden_dim * hidden_dim)
                .map(|_| rng.uniform_range(-lh, lh))
                .collect(),
            w_x: (0..hidden_dim * input_dim)
                .map(|_| rng.uniform_range(-lx, lx))
                .collect(),
            b_h: vec![0.0; hidden_dim],
        }
    }

    /// Diagonal smoothing cell with `W_h = a I`, `W_x = b I`, bias `c`.
    pub fn diagonal(dim: usize, a: f64, b: f64, c: f64) -> Self {
        let mut cell = RecurrentCell::zeros(dim, dim);
        for i in 0..dim {
            cell.w_h[i * dim + i] = a;
            cell.w_x[i * dim + i] = b;
            cell.b_h[i] = c;
        }
        cell
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim;
        if h == 0 || self.input_dim == 0 {
            return Err(Error::Shape(
                "recurrent cell dimensions must be positive".into(),
            ));
        }
        if self.w_h.len() != h * h || self.w_x.len() != h * self.input_dim || self.b_h.len() != h {
            return Err(Error::Shape(
                "recurrent cell parameter sizes inconsistent".into(),
            ));
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite recurrent parameter".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w_h.len() + self.w_x.len() + self.b_h.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.w_h
            .iter()
            .chain(&self.w_x)
            .chain(&self.b_h)
            .copied()
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
        let (a, rest) = p.split_at(self.w_h.len());
        let (b, c) = rest.split_at(self.w_x.len());
        self.w_h.copy_from_slice(a);
        self.w_x.copy_from_slice(b);
        self.b_h.copy_from_slice(c);
        Ok(())
    }

    pub fn param_name(&self, idx: usize) -> String {
        let h = self.hidden_dim;
        let nh = self.w_h.len();
        let nx = self.w_x.len();
        if idx < nh {
            format!("W_h[{},{}]", idx / h, idx % h)
        } else if idx < nh + nx {
            let j = idx - nh;
            format!("W_x[{},{}]", j / self.input_dim, j % self.input_dim)
        } else {
            format!("b_h[{}]", idx - nh - nx)
        }
    }

    fn step_unchecked(&self, h_prev: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|i| {
                let rh = &self.w_h[i * self.hidden_dim..(i + 1) * self.hidden_dim];
                let rx = &self.w_x[i * self.input_dim..(i + 1) * self.input_dim];
                let z = rh.iter().zip(h_prev).map(|(w, h)| w * h).sum::<f64>()
                    + rx.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
                    + self.b_h[i];
                sigmoid(z)
            })
            .collect()
    }

    fn check(&self, h_prev: &[f64], x: &[f64]) -> Result<()> {
        if h_prev.len() != self.hidden_dim || x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "cell expects h[{}], x[{}]; got h[{}], x[{}]",
                self.hidden_dim,
                self.input_dim,
                h_prev.len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Run the cell over `xs` starting from `h0`.
    pub fn unroll(&self, h0: &[f64], xs: &[Vec<f64>]) -> Result<RnnCache> {
        let mut hidden = Vec::with_capacity(xs.len() + 1);
        hidden.push(h0.to_vec());
        for x in xs {
            let prev = hidden.last().expect("non-empty");
            self.check(prev, x)?;
            let h = self.step_unchecked(prev, x);
            hidden.push(h);
        }
        Ok(RnnCache {
            hidden,
            inputs: xs.to_vec(),
            fingerprint: (self.hidden_dim, self.input_dim),
        })
    }
}

pub fn rnn_step(cell: &RecurrentCell, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    cell.check(h_prev, x)?;
    Ok(cell.step_unchecked(h_prev, x))
}

/// Backpropagation through time. `hidden_grads[t]` is `dL/dh_{t+1}` from
/// the loss directly (zeros where the loss ignores that step).
pub fn rnn_backward(
    cell: &RecurrentCell,
    cache: &RnnCache,
    hidden_grads: &[Vec<f64>],
) -> Result<RecurrentGradients> {
    let steps = cache.inputs.len();
    if cache.fingerprint != (cell.hidden_dim, cell.input_dim) || cache.hidden.len() != steps + 1 {
        return Err(Error::Usage("unroll cache does not match this cell".into()));
    }
    if hidden_grads.len() != steps || hidden_grads.iter().any(|g| g.len() != cell.hidden_dim) {
        return Err(Error::Shape(
            "one hidden-state gradient per step required".into(),
        ));
    }
    let h = cell.hidden_dim;
    let n_in = cell.input_dim;
    let mut g = RecurrentGradients {
        w_h: vec![0.0; h * h],
        w_x: vec![0.0; h * n_in],
        b_h: vec![0.0; h],
        h0: vec![0.0; h],
    };
    let mut carry = vec![0.0; h];
    for t in (0..steps).rev() {
        let h_t = &cache.hidden[t + 1];
        let h_prev = &cache.hidden[t];
        let x_t = &cache.inputs[t];
        let delta: Vec<f64> = (0..h)
            .map(|i| (carry[i] + hidden_grads[t][i]) * h_t[i] * (1.0 - h_t[i]))
            .collect();
        for i in 0..h {
            g.b_h[i] += delta[i];
            for j in 0..h {
                g.w_h[i * h + j] += delta[i] * h_prev[j];
            }
            for j in 0..n_in {
                g.w_x[i * n_in + j] += delta[i] * x_t[j];
            }
        }
        carry = (0..h)
            .map(|j| (0..h).map(|i| cell.w_h[i * h + j] * delta[i]).sum())
            .collect();
    }
    g.h0 = carry;
    Ok(g)
}
