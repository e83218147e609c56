//! Gated per-action networks: one generating network per child action and a
//! matrix of structural gate logits deciding which parent features each
//! network may see.

mod adam;
mod checkpoint;
mod net;
mod train;

pub use adam::Adam;
pub use checkpoint::{LayerTensor, ScaCheckpoint};
pub use net::{ChildNet, ForwardCache};
pub use train::{train, train_on_batches, Batch, TracePoint, TrainConfig, TrainedModel};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{parent_vector, ActionVector, StateVector};
pub(crate) use net::sigmoid;

/// Lower/upper bound applied to probabilities before taking logs.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaModel {
    state_dim: usize,
    action_dim: usize,
    hidden: Vec<usize>,
    nets: Vec<ChildNet>,
    /// `(state_dim + action_dim) × action_dim`
    logits: Array2<f64>,
}

/// Value of the causal loss plus how many probabilities hit the clip bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalLoss {
    pub value: f64,
    pub clipped: usize,
}

/// Gradients of a scalar objective; `nets[i]` follows `ChildNet::params` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub nets: Vec<Vec<f64>>,
    pub logits: Array2<f64>,
}

impl ScaModel {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], gate_init: f64, seed: u64) -> Result<Self> {
        if action_dim == 0 || state_dim + action_dim == 0 {
            return Err(Error::InvalidConfig("model needs at least one child and one parent".into()));
        }
        if !gate_init.is_finite() {
            return Err(Error::InvalidConfig("gate_init must be finite".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        let parents = state_dim + action_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = (0..action_dim).map(|_| ChildNet::new(parents, hidden, &mut rng)).collect();
        Ok(ScaModel {
            state_dim,
            action_dim,
            hidden: hidden.to_vec(),
            nets,
            logits: Array2::from_elem((parents, action_dim), gate_init),
        })
    }

    pub(crate) fn from_parts(
        state_dim: usize,
        action_dim: usize,
        hidden: Vec<usize>,
        nets: Vec<ChildNet>,
        logits: Array2<f64>,
    ) -> Result<Self> {
        let parents = state_dim + action_dim;
        if nets.len() != action_dim {
            return Err(Error::DimensionMismatch {
                expected: action_dim,
                actual: nets.len(),
                context: "child networks",
            });
        }
        if logits.dim() != (parents, action_dim) {
            return Err(Error::DimensionMismatch {
                expected: parents * action_dim,
                actual: logits.len(),
                context: "gate logits",
            });
        }
        let mut sizes = vec![parents];
        sizes.extend_from_slice(&hidden);
        sizes.push(1);
        if nets.iter().any(|n| n.sizes() != sizes.as_slice()) {
            return Err(Error::InvalidConfig("network shape disagrees with hidden widths".into()));
        }
        Ok(ScaModel {
            state_dim,
            action_dim,
            hidden,
            nets,
            logits,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn parent_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn nets(&self) -> &[ChildNet] {
        &self.nets
    }

    pub fn net_mut(&mut self, child: usize) -> &mut ChildNet {
        &mut self.nets[child]
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array2<f64> {
        &mut self.logits
    }

    fn is_self_edge(&self, parent: usize, child: usize) -> bool {
        parent == self.state_dim + child
    }

    /// Gate of parent `parent` into child `child`; self-edges are always 0.
    pub fn gate(&self, parent: usize, child: usize) -> f64 {
        if self.is_self_edge(parent, child) {
            0.0
        } else {
            sigmoid(self.logits[[parent, child]])
        }
    }

    /// Full gate matrix, `parents × children`.
    pub fn gates(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.logits.dim(), |(j, i)| self.gate(j, i))
    }

    fn gate_column(&self, child: usize) -> Array1<f64> {
        Array1::from_shape_fn(self.parent_dim(), |j| self.gate(j, child))
    }

    /// Per-child probabilities for one scenario.
    pub fn forward(&self, state: &StateVector, prev_action: &ActionVector) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: state.len(),
                context: "state vector",
            });
        }
        if prev_action.bits.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim,
                actual: prev_action.bits.len(),
                context: "previous action vector",
            });
        }
        self.forward_parents(&parent_vector(state, prev_action))
    }

    /// Per-child probabilities for a raw parent vector.
    pub fn forward_parents(&self, parents: &[f64]) -> Result<Vec<f64>> {
        if parents.len() != self.parent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.parent_dim(),
                actual: parents.len(),
                context: "parent vector",
            });
        }
        Ok((0..self.action_dim)
            .map(|i| {
                let gated: Vec<f64> = parents.iter().enumerate().map(|(j, x)| x * self.gate(j, i)).collect();
                self.nets[i].predict_one(&gated)
            })
            .collect())
    }

    /// Probabilities for a batch of parent rows, `rows × children`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(x, None)?;
        let mut out = Array2::zeros((x.nrows(), self.action_dim));
        for i in 0..self.action_dim {
            let cache = self.nets[i].forward(net::column_scaled(&x, self.gate_column(i).view()));
            out.column_mut(i).assign(&cache.logits().mapv(sigmoid));
        }
        Ok(out)
    }

    fn check_batch(&self, x: ArrayView2<'_, f64>, y: Option<ArrayView2<'_, f64>>) -> Result<()> {
        if x.ncols() != self.parent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.parent_dim(),
                actual: x.ncols(),
                context: "batch parent columns",
            });
        }
        if let Some(y) = y {
            if y.ncols() != self.action_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.action_dim,
                    actual: y.ncols(),
                    context: "batch target columns",
                });
            }
            if y.nrows() != x.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: x.nrows(),
                    actual: y.nrows(),
                    context: "batch rows",
                });
            }
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        Ok(())
    }

    /// Mean over rows of the summed per-child Bernoulli negative log-likelihood.
    pub fn causal_loss(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<CausalLoss> {
        Ok(self.causal_loss_and_grads(x, y, false, false)?.0)
    }

    /// Causal loss and, on request, its gradients with respect to the network
    /// parameters and the gate logits. Children are reduced in index order.
    pub fn causal_loss_and_grads(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        want_nets: bool,
        want_logits: bool,
    ) -> Result<(CausalLoss, Option<Gradients>)> {
        self.check_batch(x, Some(y))?;
        let rows = x.nrows() as f64;
        let mut loss = CausalLoss { value: 0.0, clipped: 0 };
        let want = want_nets || want_logits;
        let mut grads = want.then(|| Gradients {
            nets: self.nets.iter().map(|n| vec![0.0; if want_nets { n.param_count() } else { 0 }]).collect(),
            logits: Array2::zeros(self.logits.dim()),
        });
        for i in 0..self.action_dim {
            let gate = self.gate_column(i);
            let cache = self.nets[i].forward(net::column_scaled(&x, gate.view()));
            let z = cache.logits();
            let target = y.column(i);
            let mut child_loss = 0.0;
            let mut d_logits = Array1::zeros(x.nrows());
            for r in 0..x.nrows() {
                let p = sigmoid(z[r]);
                let t = target[r];
                let clipped = !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&p);
                let pc = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                if clipped {
                    loss.clipped += 1;
                } else {
                    d_logits[r] = (p - t) / rows;
                }
                child_loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            }
            loss.value += child_loss / rows;
            if let Some(g) = grads.as_mut() {
                let param_grad = want_nets.then_some(g.nets[i].as_mut_slice());
                let d_input = self.nets[i].backward(&cache, d_logits.view(), param_grad);
                if want_logits {
                    let d_gate = (&d_input * &x).sum_axis(Axis(0));
                    for j in 0..self.parent_dim() {
                        if !self.is_self_edge(j, i) {
                            let s = gate[j];
                            g.logits[[j, i]] = d_gate[j] * s * (1.0 - s);
                        }
                    }
                }
            }
        }
        if !loss.value.is_finite() {
            return Err(Error::NonFinite("causal loss"));
        }
        Ok((loss, grads))
    }

    /// Sparsity penalty on the current gates.
    pub fn reg_loss(&self, lambda_reg: f64, edge_prior: f64) -> Result<f64> {
        reg_loss(&self.gates(), lambda_reg, edge_prior)
    }

    /// Gradient of the sparsity penalty with respect to the gate logits.
    pub fn reg_grad(&self, lambda_reg: f64, edge_prior: f64) -> Result<Array2<f64>> {
        check_prior(lambda_reg, edge_prior)?;
        let scale = -lambda_reg * edge_prior.ln();
        Ok(Array2::from_shape_fn(self.logits.dim(), |(j, i)| {
            if self.is_self_edge(j, i) {
                0.0
            } else {
                let s = sigmoid(self.logits[[j, i]]);
                scale * s * (1.0 - s)
            }
        }))
    }
}

fn check_prior(lambda_reg: f64, edge_prior: f64) -> Result<()> {
    if !(edge_prior > 0.0 && edge_prior < 1.0) {
        return Err(Error::InvalidConfig(format!("edge_prior {edge_prior} outside (0, 1)")));
    }
    if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda_reg {lambda_reg} must be finite and >= 0")));
    }
    Ok(())
}

/// `-lambda * sum(gates) * ln(edge_prior)`
pub fn reg_loss(gates: &Array2<f64>, lambda_reg: f64, edge_prior: f64) -> Result<f64> {
    check_prior(lambda_reg, edge_prior)?;
    Ok(-lambda_reg * gates.sum() * edge_prior.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn self_edges_are_zero() {
        let m = ScaModel::new(3, 2, &[4], 2.0, 0).unwrap();
        let g = m.gates();
        assert_eq!(g[[3, 0]], 0.0);
        assert_eq!(g[[4, 1]], 0.0);
        assert!(g[[4, 0]] > 0.8);
    }

    #[test]
    fn half_prediction_costs_ln2() {
        let mut m = ScaModel::new(1, 1, &[2], 0.0, 0).unwrap();
        m.net_mut(0).params_mut().iter_mut().for_each(|p| *p = 0.0);
        for bit in [0.0, 1.0] {
            let loss = m.causal_loss(array![[1.0, 0.0]].view(), array![[bit]].view()).unwrap();
            assert!((loss.value - std::f64::consts::LN_2).abs() < 1e-10);
        }
    }

    #[test]
    fn reg_values() {
        assert_eq!(reg_loss(&Array2::zeros((3, 2)), 1.0, 0.1).unwrap(), 0.0);
        let one = array![[1.0]];
        assert!((reg_loss(&one, 1.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(reg_loss(&one, 1.0, 1.0).is_err());
        assert!(reg_loss(&one, 1.0, 0.0).is_err());
    }

    #[test]
    fn forward_checks_dimensions() {
        let m = ScaModel::new(3, 2, &[4], 0.0, 0).unwrap();
        let s = StateVector::new(vec![0, 1]);
        assert!(m.forward(&s, &ActionVector::sentinel(2)).is_err());
    }
}
