//! Independent reference implementations shared by the integration tests
//! and the acceptance gate. None of these call the code under test.

#![allow(dead_code)]

use edgedrive::nn::{Activation, DenseLayer, Mlp};
use edgedrive::perception::{BoundingBox, CellLabel};
use edgedrive::rl::{train_step, ChainMdp, QTable, Transition};

/// Posterior of a scalar Gaussian prior `N(m, p)` times a likelihood
/// `N(z, r)`, from the product-of-Gaussians identity.
pub fn gaussian_product(m: f64, p: f64, z: f64, r: f64) -> (f64, f64) {
    let precision = 1.0 / p + 1.0 / r;
    ((m / p + z / r) / precision, 1.0 / precision)
}

/// Confusion counts by explicit enumeration of paired cell labels, with
/// `Obstacle` as the positive class.
pub fn brute_confusion(pred: &[bool], truth: &[bool]) -> (u64, u64, u64, u64) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        match (pred[i], truth[i]) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, tn, fp, fn_)
}

/// Intersection and union of two integer boxes in unit cells, by counting
/// every cell of the bounding window.
pub fn raster_iou(a: [i64; 4], b: [i64; 4]) -> (u64, u64) {
    let inside = |bx: [i64; 4], x: i64, y: i64| x >= bx[0] && x < bx[2] && y >= bx[1] && y < bx[3];
    let (mut inter, mut union) = (0, 0);
    for x in a[0].min(b[0])..a[2].max(b[2]) {
        for y in a[1].min(b[1])..a[3].max(b[3]) {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    (inter, union)
}

/// Interval overlap from the middle two of the four sorted endpoints.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    if a1 <= b0 || b1 <= a0 {
        return 0.0;
    }
    let mut pts = [a0, a1, b0, b1];
    pts.sort_by(f64::total_cmp);
    pts[2] - pts[1]
}

/// IoU of real boxes by sorted-endpoint overlap.
pub fn sorted_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let area = |x: &BoundingBox| (x.x_max - x.x_min) * (x.y_max - x.y_min);
    let inter =
        overlap(a.x_min, a.x_max, b.x_min, b.x_max) * overlap(a.y_min, a.y_max, b.y_min, b.y_max);
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    inter / (aa + ab - inter)
}

pub fn labels(bits: &[bool]) -> Vec<CellLabel> {
    bits.iter()
        .map(|b| {
            if *b {
                CellLabel::Obstacle
            } else {
                CellLabel::Free
            }
        })
        .collect()
}

/// Fit a one-hot linear Q-function to the chain MDP with full-batch
/// semi-gradient TD steps, syncing the target every step. Returns the
/// learned table.
pub fn linear_chain_q(mdp: &ChainMdp, gamma: f64, lr: f64, steps: usize) -> QTable {
    let n = mdp.states;
    let layer = DenseLayer::new(
        &vec![vec![0.0; n]; ChainMdp::ACTIONS],
        vec![0.0; ChainMdp::ACTIONS],
        Activation::Linear,
    )
    .expect("valid layer");
    let mut net = Mlp::new(vec![layer]).expect("valid net");
    let one_hot = |s: usize| {
        let mut v = vec![0.0; n];
        v[s] = 1.0;
        v
    };
    let batch: Vec<Transition> = (0..n)
        .flat_map(|s| (0..ChainMdp::ACTIONS).map(move |a| (s, a)))
        .map(|(s, a)| {
            let (sn, r) = mdp.step(s, a);
            Transition {
                s: one_hot(s),
                a,
                r,
                s_next: one_hot(sn),
                done: false,
            }
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    for _ in 0..steps {
        let target = net.clone();
        train_step(&mut net, &target, &refs, lr, gamma).expect("train step");
    }
    let mut q = QTable::zeros(n, ChainMdp::ACTIONS);
    for s in 0..n {
        let out = net.forward(&one_hot(s)).expect("forward");
        for (a, v) in out.iter().enumerate() {
            q.set(s, a, *v);
        }
    }
    q
}

/// Mean of each of `k` equal consecutive blocks of `xs` (a tail shorter
/// than a block is dropped).
pub fn block_means(xs: &[f64], k: usize) -> Vec<f64> {
    let len = xs.len() / k;
    (0..k)
        .map(|i| xs[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64)
        .collect()
}

pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
