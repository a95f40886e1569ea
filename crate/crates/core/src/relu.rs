//! Layered affine + activation networks used as dynamics surrogates.
//!
//! A network with `layer_dims = [d0, d1, ..., dL]` has `L` affine layers; the
//! first `L - 1` are followed by the hidden activation and the last is affine.
//! An optional linear skip term `D x` can be added to the output.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::gauss::standard_normal_vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => libm::tanh(v),
        }
    }

    // derivative expressed through the pre-activation v and output z
    fn slope(self, v: f64, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z * z,
        }
    }
}

/// Pre- and post-activation values of every hidden layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub pre: Vec<DVector<f64>>,
    pub post: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

impl Trace {
    /// Hidden pre-activations stacked layer-major.
    pub fn stacked_pre(&self) -> DVector<f64> {
        stack(&self.pre)
    }

    /// Hidden post-activations stacked layer-major.
    pub fn stacked_post(&self) -> DVector<f64> {
        stack(&self.post)
    }
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let total = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(total);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layer_dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    hidden_activation: Activation,
    skip: Option<DMatrix<f64>>,
}

impl ReluNetwork {
    pub fn new(
        layer_dims: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        hidden_activation: Activation,
        skip: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer_dims needs at least two positive entries".into()));
        }
        let layers = layer_dims.len() - 1;
        check_dim(layers, weights.len())?;
        check_dim(layers, biases.len())?;
        for i in 0..layers {
            check_dim(layer_dims[i + 1], weights[i].nrows())?;
            check_dim(layer_dims[i], weights[i].ncols())?;
            check_dim(layer_dims[i + 1], biases[i].len())?;
        }
        if let Some(d) = &skip {
            check_dim(layer_dims[layers], d.nrows())?;
            check_dim(layer_dims[0], d.ncols())?;
        }
        Ok(Self { layer_dims, weights, biases, hidden_activation, skip })
    }

    /// He (ReLU) or Glorot-style (tanh) Gaussian initialization, zero biases.
    pub fn random<R: Rng + ?Sized>(layer_dims: &[usize], activation: Activation, with_skip: bool, rng: &mut R) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config("layer_dims needs at least two entries".into()));
        }
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let std = libm::sqrt(gain / w[0] as f64);
            let entries = standard_normal_vector(w[0] * w[1], rng) * std;
            weights.push(DMatrix::from_column_slice(w[1], w[0], entries.as_slice()));
            biases.push(DVector::zeros(w[1]));
        }
        let skip = with_skip.then(|| DMatrix::zeros(*layer_dims.last().unwrap(), layer_dims[0]));
        Self::new(layer_dims.to_vec(), weights, biases, activation, skip)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn skip(&self) -> Option<&DMatrix<f64>> {
        self.skip.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Neuron counts of the hidden layers.
    pub fn hidden_dims(&self) -> &[usize] {
        &self.layer_dims[1..self.layer_dims.len() - 1]
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden_dims().iter().sum()
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for i in 0..last {
            let mut v = &self.weights[i] * &h + &self.biases[i];
            v.apply(|e| *e = self.hidden_activation.apply(*e));
            h = v;
        }
        let mut out = &self.weights[last] * &h + &self.biases[last];
        if let Some(d) = &self.skip {
            out += d * x;
        }
        Ok(out)
    }

    pub fn forward_trace(&self, x: &DVector<f64>) -> Result<Trace> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post = Vec::with_capacity(last);
        for i in 0..last {
            let h = if i == 0 { x } else { &post[i - 1] };
            let v = &self.weights[i] * h + &self.biases[i];
            let z = v.map(|e| self.hidden_activation.apply(e));
            pre.push(v);
            post.push(z);
        }
        let h = if last == 0 { x } else { &post[last - 1] };
        let mut output = &self.weights[last] * h + &self.biases[last];
        if let Some(d) = &self.skip {
            output += d * x;
        }
        Ok(Trace { pre, post, output })
    }

    pub fn num_params(&self) -> usize {
        let layers: usize = self.weights.iter().map(|w| w.len() + w.nrows()).sum();
        layers + self.skip.as_ref().map_or(0, |d| d.len())
    }

    /// Flat parameter vector: per layer `W` row-major then `b`, then the skip matrix.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            push_row_major(&mut out, w);
            out.extend(b.iter());
        }
        if let Some(d) = &self.skip {
            push_row_major(&mut out, d);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.num_params(), p.len())?;
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            off = read_row_major(p, off, w);
            for e in b.iter_mut() {
                *e = p[off];
                off += 1;
            }
        }
        if let Some(d) = &mut self.skip {
            read_row_major(p, off, d);
        }
        Ok(())
    }

    /// Gradient of `gᵀ f(x)` with respect to the parameters (flat layout of
    /// [`ReluNetwork::params`]) and to the input.
    pub fn backward(&self, x: &DVector<f64>, trace: &Trace, g_out: &DVector<f64>) -> Result<(Vec<f64>, DVector<f64>)> {
        let mut grad = Vec::new();
        let g_in = self.backward_into(x, trace, g_out, &mut grad)?;
        Ok((grad, g_in))
    }

    pub(crate) fn backward_into(&self, x: &DVector<f64>, trace: &Trace, g_out: &DVector<f64>, grad: &mut Vec<f64>) -> Result<DVector<f64>> {
        check_dim(self.output_dim(), g_out.len())?;
        let layers = self.weights.len();
        let mut g_w: Vec<DMatrix<f64>> = Vec::with_capacity(layers);
        let mut g_b: Vec<DVector<f64>> = Vec::with_capacity(layers);
        let mut g = g_out.clone();
        for i in (0..layers).rev() {
            if i + 1 < layers {
                let v = &trace.pre[i];
                let z = &trace.post[i];
                for k in 0..g.len() {
                    g[k] *= self.hidden_activation.slope(v[k], z[k]);
                }
            }
            let h = if i == 0 { x } else { &trace.post[i - 1] };
            g_w.push(&g * h.transpose());
            g_b.push(g.clone());
            g = self.weights[i].transpose() * &g;
        }
        grad.clear();
        grad.reserve(self.num_params());
        for (w, b) in g_w.iter().rev().zip(g_b.iter().rev()) {
            push_row_major(grad, w);
            grad.extend(b.iter());
        }
        if let Some(d) = &self.skip {
            push_row_major(grad, &(g_out * x.transpose()));
            g += d.transpose() * g_out;
        }
        Ok(g)
    }

    /// Network computing `x ↦ f(T x + c)`; `T` is `input_dim × k`.
    pub fn with_input_affine(&self, t: &DMatrix<f64>, c: &DVector<f64>) -> Result<Self> {
        check_dim(self.input_dim(), t.nrows())?;
        check_dim(self.input_dim(), c.len())?;
        let mut out = self.clone();
        out.biases[0] = &self.biases[0] + &self.weights[0] * c;
        out.weights[0] = &self.weights[0] * t;
        let last = out.biases.len() - 1;
        if let Some(d) = &self.skip {
            out.biases[last] += d * c;
            out.skip = Some(d * t);
        }
        out.layer_dims[0] = t.ncols();
        Ok(out)
    }

    /// Network computing `x ↦ S f(x) + d`; `S` is `k × output_dim`.
    pub fn with_output_affine(&self, s: &DMatrix<f64>, d: &DVector<f64>) -> Result<Self> {
        check_dim(self.output_dim(), s.ncols())?;
        check_dim(s.nrows(), d.len())?;
        let mut out = self.clone();
        let last = out.weights.len() - 1;
        out.weights[last] = s * &self.weights[last];
        out.biases[last] = s * &self.biases[last] + d;
        out.skip = self.skip.as_ref().map(|k| s * k);
        *out.layer_dims.last_mut().unwrap() = s.nrows();
        Ok(out)
    }

    /// Same network with the skip term made explicit (zero if absent).
    pub fn with_explicit_skip(&self) -> Self {
        let mut out = self.clone();
        if out.skip.is_none() {
            out.skip = Some(DMatrix::zeros(self.output_dim(), self.input_dim()));
        }
        out
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
}

fn read_row_major(p: &[f64], mut off: usize, m: &mut DMatrix<f64>) -> usize {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            m[(r, c)] = p[off];
            off += 1;
        }
    }
    off
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let net = ReluNetwork::new(vec![3, 3], vec![DMatrix::identity(3, 3)], vec![DVector::zeros(3)], Activation::Relu, None).unwrap();
        let x = dvector![1.0, -2.0, 0.5];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_kills_negative() {
        let net = ReluNetwork::new(
            vec![1, 1, 1],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            vec![DVector::zeros(1), DVector::zeros(1)],
            Activation::Relu,
            None,
        )
        .unwrap();
        assert_eq!(net.forward(&dvector![-2.0]).unwrap()[0], 0.0);
        assert_eq!(net.forward(&dvector![3.0]).unwrap()[0], 3.0);
    }

    #[test]
    fn vehicle_dims_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ReluNetwork::random(&[5, 8, 4], Activation::Relu, false, &mut rng).unwrap();
        assert_eq!(net.forward(&DVector::zeros(5)).unwrap().len(), 4);
        assert_eq!(net.hidden_count(), 8);
        assert!(matches!(net.forward(&DVector::zeros(4)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn trace_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = ReluNetwork::random(&[3, 6, 5, 2], Activation::Relu, true, &mut rng).unwrap();
        for _ in 0..50 {
            let x = standard_normal_vector(3, &mut rng);
            let tr = net.forward_trace(&x).unwrap();
            assert_eq!(tr.output, net.forward(&x).unwrap());
            for (v, z) in tr.pre.iter().zip(&tr.post) {
                for k in 0..v.len() {
                    assert_eq!(z[k], v[k].max(0.0));
                }
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ReluNetwork::random(&[3, 4, 2], Activation::Tanh, true, &mut rng).unwrap();
        let mut other = ReluNetwork::random(&[3, 4, 2], Activation::Tanh, true, &mut rng).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
    }

    #[test]
    fn affine_folding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = ReluNetwork::random(&[3, 5, 2], Activation::Relu, true, &mut rng).unwrap();
        let p: Vec<f64> = net.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_params(&p).unwrap();
        let t = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3 - 0.4);
        let c = dvector![0.1, -0.2, 0.3];
        let s = DMatrix::from_fn(4, 2, |i, j| (i * j) as f64 * 0.5 + 1.0);
        let d = dvector![1.0, 2.0, 3.0, 4.0];
        let folded = net.with_input_affine(&t, &c).unwrap().with_output_affine(&s, &d).unwrap();
        for _ in 0..20 {
            let y = standard_normal_vector(2, &mut rng);
            let direct = &s * net.forward(&(&t * &y + &c)).unwrap() + &d;
            assert!((folded.forward(&y).unwrap() - direct).amax() < 1e-12);
        }
    }
}
