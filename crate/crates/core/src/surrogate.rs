//! Trained models of the deployment dynamics, bundled for adaptation.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::gauss::{confidence_ellipsoid, psd_sqrt, Ellipsoid, Gaussian};
use crate::relu::ReluNetwork;
use crate::train::{concat, predicted_covariance};

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePair {
    /// ReLU mean model; reads `[s; a]`, or `[e; a]` with an embedder.
    pub mean_net: ReluNetwork,
    /// Diagonal log-variance model on the raw `[s; a]`.
    pub cov_net: ReluNetwork,
    pub embedder: Option<ReluNetwork>,
    /// Comparison model on the raw `[s; a]`.
    pub deep_net: Option<ReluNetwork>,
}

impl SurrogatePair {
    pub fn new(mean_net: ReluNetwork, cov_net: ReluNetwork) -> Self {
        Self { mean_net, cov_net, embedder: None, deep_net: None }
    }

    pub fn state_dim(&self) -> usize {
        self.cov_net.output_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.cov_net.input_dim() - self.state_dim()
    }

    /// Width of the state block the mean network reads.
    pub fn mean_state_dim(&self) -> usize {
        self.mean_net.input_dim() - self.action_dim()
    }

    pub fn embed(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.state_dim(), s.len())?;
        match &self.embedder {
            Some(e) => e.forward(s),
            None => Ok(s.clone()),
        }
    }

    pub fn predict_mean(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.mean_net.forward(&concat(&self.embed(s)?, a))
    }

    pub fn predict_cov(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        predicted_covariance(&self.cov_net, &concat(s, a))
    }

    /// Prediction used by the action comparison: the deep model when present.
    pub fn compare_predict(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.deep_net {
            Some(d) => d.forward(&concat(s, a)),
            None => self.predict_mean(s, a),
        }
    }

    /// Confidence region of `N(center, cov)` in the mean network's state coordinates.
    ///
    /// With an embedder the Gaussian is pushed through it by symmetric sigma
    /// points and re-fitted by its first two moments.
    pub fn state_region(&self, center: &DVector<f64>, cov: &DMatrix<f64>, p: f64) -> Result<Ellipsoid> {
        check_dim(self.state_dim(), center.len())?;
        let (mean, cov) = match &self.embedder {
            None => (center.clone(), cov.clone()),
            Some(e) => {
                let n = center.len();
                let root = psd_sqrt(cov) * libm::sqrt(n as f64);
                let mut pts = alloc::vec::Vec::with_capacity(2 * n);
                for i in 0..n {
                    let d = root.column(i).into_owned();
                    pts.push(e.forward(&(center + &d))?);
                    pts.push(e.forward(&(center - &d))?);
                }
                let k = e.output_dim();
                let mut mean = DVector::zeros(k);
                for q in &pts {
                    mean += q;
                }
                mean /= pts.len() as f64;
                let mut c = DMatrix::zeros(k, k);
                for q in &pts {
                    let d = q - &mean;
                    c += &d * d.transpose();
                }
                (mean, c / pts.len() as f64)
            }
        };
        let k = mean.len();
        let floor = 1e-9 * (cov.trace() / k as f64).max(1e-12);
        let cov = (&cov + cov.transpose()) * 0.5 + DMatrix::identity(k, k) * floor;
        confidence_ellipsoid(&Gaussian::new(mean, cov)?, p)
    }
}
