use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub states: usize,
    pub actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        QTable {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.actions + a] = v;
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.values[s * self.actions..(s + 1) * self.actions]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `Q(s,a) += α [r + γ max_a' Q(s',a') − Q(s,a)]`, in place.
pub fn tabular_q_update(
    table: &mut QTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    if s >= table.states || s_next >= table.states {
        return Err(Error::Domain(format!(
            "state index {} outside a {}-state table",
            s.max(s_next),
            table.states
        )));
    }
    if a >= table.actions {
        return Err(Error::Domain(format!(
            "action {a} outside a {}-action table",
            table.actions
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!(
            "learning rate {alpha} outside (0, 1]"
        )));
    }
    let q = table.get(s, a);
    let target = r + gamma * table.max_value(s_next);
    table.set(s, a, q + alpha * (target - q));
    Ok(())
}

/// Deterministic chain: action 0 moves left, 1 moves right (clamped at the
/// ends). Landing on the last state pays 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMdp {
    pub states: usize,
}

impl ChainMdp {
    pub const ACTIONS: usize = 2;

    pub fn step(&self, s: usize, a: usize) -> (usize, f64) {
        let next = if a == 0 {
            s.saturating_sub(1)
        } else {
            (s + 1).min(self.states - 1)
        };
        (next, if next == self.states - 1 { 1.0 } else { 0.0 })
    }
}

/// Optimal action values by synchronous value iteration to machine
/// precision.
pub fn value_iteration(mdp: &ChainMdp, gamma: f64) -> QTable {
    let mut q = QTable::zeros(mdp.states, ChainMdp::ACTIONS);
    loop {
        let mut next = q.clone();
        for s in 0..mdp.states {
            for a in 0..ChainMdp::ACTIONS {
                let (sn, r) = mdp.step(s, a);
                next.set(s, a, r + gamma * q.max_value(sn));
            }
        }
        let delta = next.max_abs_diff(&q);
        q = next;
        if delta == 0.0 {
            return q;
        }
    }
}
