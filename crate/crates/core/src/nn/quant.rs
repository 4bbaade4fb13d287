use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseLayer};
use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Symmetric per-tensor int8 weights (zero point 0); bias kept in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights_q: Vec<i8>,
    pub scale: f64,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl QuantizedLayer {
    pub fn zero_point(&self) -> i32 {
        0
    }

    pub fn dequantized(&self) -> Vec<f64> {
        self.weights_q
            .iter()
            .map(|q| *q as f64 * self.scale)
            .collect()
    }

    /// Forward pass dequantizing each weight on the fly.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        Ok(self
            .weights_q
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                let z = row
                    .iter()
                    .zip(x)
                    .map(|(q, xi)| *q as f64 * self.scale * xi)
                    .sum::<f64>()
                    + b;
                self.activation.apply(z)
            })
            .collect())
    }
}

/// `scale = max|W| / 127`, `q = clamp(round(W / scale), -127, 127)`. An
/// all-zero tensor uses scale 1.
pub fn quantize_int8(layer: &DenseLayer) -> QuantizedLayer {
    let max_abs = layer.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
    let weights_q = layer
        .weights
        .iter()
        .map(|w| (w / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedLayer {
        in_dim: layer.in_dim,
        out_dim: layer.out_dim,
        weights_q,
        scale,
        bias: layer.bias.clone(),
        activation: layer.activation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMlp {
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedMlp {
    pub fn from_mlp(model: &Mlp) -> Self {
        QuantizedMlp {
            layers: model.layers().iter().map(quantize_int8).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.forward(&a)?;
        }
        Ok(a)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Weight storage in bytes (int8 weights plus f64 scale and biases).
    pub fn size_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights_q.len() + 8 + 8 * l.bias.len())
            .sum()
    }
}
