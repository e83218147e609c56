//! Feed-forward network with ReLU hidden layers and a sigmoid output unit.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`inputs × outputs`, row-major) followed by the bias vector.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildNet {
    /// `[inputs, hidden.., 1]`
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the gated parent matrix.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pub pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Output logits, one per row.
    pub fn logits(&self) -> ArrayView1<'_, f64> {
        self.pre.last().expect("at least one layer").column(0)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ChildNet {
    /// He-initialized hidden layers, Xavier-scaled output layer, zero biases.
    pub fn new(inputs: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut params = Vec::with_capacity(Self::param_count_for(&sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let scale = if l + 1 == layers { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (scale / fan_in.max(1) as f64).sqrt()).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ChildNet { sizes, params }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        if sizes.len() < 2 || *sizes.last()? != 1 || params.len() != Self::param_count_for(&sizes) {
            return None;
        }
        Some(ChildNet { sizes, params })
    }

    fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for l in 0..layer {
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let w_len = self.sizes[layer] * self.sizes[layer + 1];
        (off, off + w_len, off + w_len + self.sizes[layer + 1])
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w0, w1, _) = self.offsets(layer);
        ArrayView2::from_shape((self.sizes[layer], self.sizes[layer + 1]), &self.params[w0..w1])
            .expect("layout matches sizes")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b0, b1) = self.offsets(layer);
        ArrayView1::from(&self.params[b0..b1])
    }

    pub fn forward(&self, x: Array2<f64>) -> ForwardCache {
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut a = x;
        for l in 0..layers {
            let z = a.dot(&self.weight(l)) + self.bias(l);
            inputs.push(a);
            if l + 1 < layers {
                a = z.mapv(|v| v.max(0.0));
            } else {
                a = Array2::zeros((0, 0));
            }
            pre.push(z);
        }
        ForwardCache { inputs, pre }
    }

    /// Backpropagate `d_logits` (one per row). Returns the gradient with
    /// respect to the input matrix and, when `param_grad` is given, writes
    /// the parameter gradient into it.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: ArrayView1<'_, f64>,
        mut param_grad: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let layers = self.num_layers();
        let mut dz: Array2<f64> = d_logits.insert_axis(Axis(1)).to_owned();
        for l in (0..layers).rev() {
            if let Some(grad) = param_grad.as_deref_mut() {
                let (w0, b0, b1) = self.offsets(l);
                let dw = cache.inputs[l].t().dot(&dz);
                for (g, v) in grad[w0..b0].iter_mut().zip(dw.iter()) {
                    *g = *v;
                }
                let db = dz.sum_axis(Axis(0));
                for (g, v) in grad[b0..b1].iter_mut().zip(db.iter()) {
                    *g = *v;
                }
            }
            let da = dz.dot(&self.weight(l).t());
            if l == 0 {
                return da;
            }
            let mut next = da;
            next.zip_mut_with(&cache.pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = next;
        }
        unreachable!("network has at least one layer")
    }

    /// Multiply every weight matrix entry, leaving biases alone.
    pub fn scale_weights(&mut self, factor: f64) {
        for l in 0..self.num_layers() {
            let (w0, w1, _) = self.offsets(l);
            self.params[w0..w1].iter_mut().for_each(|w| *w *= factor);
        }
    }

    /// Probability output for a single input vector.
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        sigmoid(self.forward(row).logits()[0])
    }
}

pub(crate) fn column_scaled(x: &ArrayView2<'_, f64>, scale: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    out *= &scale.insert_axis(Axis(0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ChildNet::new(21, &[64, 256, 256, 64], &mut rng);
        let expected = 21 * 64 + 64 + 64 * 256 + 256 + 256 * 256 + 256 + 256 * 64 + 64 + 64 + 1;
        assert_eq!(net.param_count(), expected);
        assert_eq!(net.weight(4).shape(), [64, 1]);
        assert_eq!(net.bias(1).len(), 256);
    }

    #[test]
    fn output_is_a_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ChildNet::new(5, &[8, 8], &mut rng);
        for k in 0..20 {
            let x: Vec<f64> = (0..5).map(|j| ((k * 7 + j) % 3) as f64 - 1.0).collect();
            let p = net.predict_one(&x);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn stable_sigmoid() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
