//! Multi-sensor fusion: discrete Bayesian update, inverse-variance
//! weighting, and the linear / extended Kalman measurement update.

mod estimator;

pub use estimator::{sense_ego, DrivingStateEstimator, FusionConfig, STATE_DIM};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference step for the numeric Jacobian, scaled by `max(1, |x|)`.
pub const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBelief {
    pub states: Vec<String>,
    pub probs: Vec<f64>,
}

impl DiscreteBelief {
    pub fn new(states: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if states.len() != probs.len() {
            return Err(Error::Shape(format!(
                "{} states but {} probabilities",
                states.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain(
                "probabilities must be finite and >= 0".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(DiscreteBelief { states, probs })
    }

    pub fn uniform(states: Vec<String>) -> Self {
        let n = states.len();
        DiscreteBelief {
            states,
            probs: vec![1.0 / n as f64; n],
        }
    }
}

/// Posterior over discrete states given a per-state observation likelihood.
/// The evidence term is the marginal `sum_j P(O|S_j) P(S_j)`.
pub fn bayes_update(prior: &DiscreteBelief, likelihood: &[f64]) -> Result<DiscreteBelief> {
    if likelihood.len() != prior.probs.len() {
        return Err(Error::Shape(format!(
            "likelihood has {} entries, prior has {}",
            likelihood.len(),
            prior.probs.len()
        )));
    }
    if likelihood.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Domain(
            "likelihood entries must be finite and >= 0".into(),
        ));
    }
    let joint: Vec<f64> = prior
        .probs
        .iter()
        .zip(likelihood)
        .map(|(p, l)| p * l)
        .collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(Error::DegenerateEvidence);
    }
    Ok(DiscreteBelief {
        states: prior.states.clone(),
        probs: joint.into_iter().map(|j| j / evidence).collect(),
    })
}

/// Weights `1/σ_i²`, normalized to sum to one.
pub fn inverse_variance_weights(variances: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, v)) = variances
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(Error::Domain(format!(
            "sensor {i}: variance must be > 0, got {v}"
        )));
    }
    let raw: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Inverse-variance pooling of scalar estimates `(mean, variance)`.
pub fn weighted_fuse(estimates: &[(f64, f64)]) -> Result<(f64, f64)> {
    match estimates {
        [] => Err(Error::Usage(
            "weighted_fuse needs at least one estimate".into(),
        )),
        [single] => {
            inverse_variance_weights(&[single.1])?;
            Ok(*single)
        }
        _ => {
            let vars: Vec<f64> = estimates.iter().map(|e| e.1).collect();
            let w = inverse_variance_weights(&vars)?;
            let mean = estimates.iter().zip(&w).map(|(e, w)| w * e.0).sum();
            let precision: f64 = vars.iter().map(|v| 1.0 / v).sum();
            Ok((mean, 1.0 / precision))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "covariance {:?} does not match state dimension {n}",
                covariance.shape()
            )));
        }
        Ok(GaussianEstimate { mean, covariance })
    }

    pub fn scalar(mean: f64, variance: f64) -> Self {
        GaussianEstimate {
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Largest absolute asymmetry `|P_ij - P_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.covariance - self.covariance.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.covariance
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservation {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearObservation {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let m = h.nrows();
        if r.shape() != (m, m) {
            return Err(Error::Shape(format!(
                "R is {:?}, expected ({m}, {m})",
                r.shape()
            )));
        }
        Ok(LinearObservation { h, r })
    }
}

type VecFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Observation `z = h(x) + v`, `v ~ N(0, R)`, with an optional analytic
/// Jacobian. Without one, central differences are used.
pub struct NonlinearObservation {
    h: VecFn,
    jacobian: Option<JacFn>,
    pub r: DMatrix<f64>,
}

impl NonlinearObservation {
    pub fn new(
        h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        r: DMatrix<f64>,
    ) -> Self {
        NonlinearObservation {
            h: Box::new(h),
            jacobian: None,
            r,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h)(x)
    }

    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let j = match &self.jacobian {
            Some(jac) => jac(x),
            None => numeric_jacobian(&self.h, x),
        };
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Jacobian entry".into()));
        }
        Ok(j)
    }
}

pub fn numeric_jacobian(
    h: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let m = h(x).len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let step = JACOBIAN_STEP * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (h(&xp) - h(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// `K = P Hᵀ (H P Hᵀ + R)⁻¹`, via a solve against the innovation covariance.
pub fn kalman_gain(
    p_pred: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = p_pred.nrows();
    if p_pred.shape() != (n, n) || h.ncols() != n || r.shape() != (h.nrows(), h.nrows()) {
        return Err(Error::Shape(format!(
            "P {:?}, H {:?}, R {:?}",
            p_pred.shape(),
            h.shape(),
            r.shape()
        )));
    }
    let s = h * p_pred * h.transpose() + r;
    // S Kᵀ = H Pᵀ
    let rhs = h * p_pred.transpose();
    let kt = match s.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => s
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?,
    };
    if kt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("singular innovation covariance".into()));
    }
    Ok(kt.transpose())
}

fn joseph_update(
    est: &GaussianEstimate,
    innovation: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<GaussianEstimate> {
    let k = kalman_gain(&est.covariance, h, r)?;
    let mean = &est.mean + &k * innovation;
    let n = est.dim();
    let ikh = DMatrix::identity(n, n) - &k * h;
    let p = &ikh * &est.covariance * ikh.transpose() + &k * r * k.transpose();
    let p = (&p + p.transpose()) * 0.5;
    Ok(GaussianEstimate {
        mean,
        covariance: p,
    })
}

/// Linear measurement update; covariance in Joseph form, re-symmetrized.
pub fn kalman_update(
    est_pred: &GaussianEstimate,
    z: &DVector<f64>,
    model: &LinearObservation,
) -> Result<GaussianEstimate> {
    if model.h.ncols() != est_pred.dim() || model.h.nrows() != z.len() {
        return Err(Error::Shape(format!(
            "H {:?} incompatible with state {} / measurement {}",
            model.h.shape(),
            est_pred.dim(),
            z.len()
        )));
    }
    let innovation = z - &model.h * &est_pred.mean;
    joseph_update(est_pred, &innovation, &model.h, &model.r)
}

pub fn kalman_predict(est: &GaussianEstimate, model: &TransitionModel) -> Result<GaussianEstimate> {
    let n = est.dim();
    if model.f.shape() != (n, n) || model.q.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "F {:?} / Q {:?} incompatible with state {n}",
            model.f.shape(),
            model.q.shape()
        )));
    }
    let mean = &model.f * &est.mean;
    let p = &model.f * &est.covariance * model.f.transpose() + &model.q;
    Ok(GaussianEstimate {
        mean,
        covariance: (&p + p.transpose()) * 0.5,
    })
}

/// EKF update: linearize `h` at the predicted mean, innovate against `h(x)`.
pub fn ekf_update(
    est_pred: &GaussianEstimate,
    z: &DVector<f64>,
    model: &NonlinearObservation,
) -> Result<GaussianEstimate> {
    let hx = model.eval(&est_pred.mean);
    if hx.len() != z.len() {
        return Err(Error::Shape(format!(
            "h(x) has {} rows, z has {}",
            hx.len(),
            z.len()
        )));
    }
    let h = model.jacobian_at(&est_pred.mean)?;
    if h.shape() != (z.len(), est_pred.dim()) {
        return Err(Error::Shape(format!("Jacobian is {:?}", h.shape())));
    }
    let innovation = z - hx;
    joseph_update(est_pred, &innovation, &h, &model.r)
}
