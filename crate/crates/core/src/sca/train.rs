//! Alternating optimization of network parameters and gate logits.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, ScaModel};
use crate::error::{Error, Result};
use crate::schema::parent_vector;
use crate::seed::derive_seed;
use crate::trajectory::Buffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda_reg: f64,
    pub edge_prior: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Initial value of every gate logit.
    pub gate_init: f64,
    /// Record the loss every this many iterations.
    pub trace_every: usize,
    /// Learning rate of the gate logits; `None` uses `lr`.
    pub gate_lr: Option<f64>,
    /// Decoupled decay applied to network weights (not biases) each δ step.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            lambda_reg: 1e-7,
            edge_prior: 0.1,
            iterations: 20_000,
            batch_size: 256,
            seed: 0,
            hidden: vec![64, 256, 256, 64],
            gate_init: 0.0,
            trace_every: 100,
            gate_lr: None,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda_reg {} must be >= 0", self.lambda_reg));
        }
        if !(self.edge_prior > 0.0 && self.edge_prior < 1.0) {
            return bad(format!("edge_prior {} outside (0, 1)", self.edge_prior));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(g) = self.gate_lr {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gate_lr {g} must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.trace_every == 0 {
            return bad("trace_every must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }
}

/// Parent rows and target action rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub state_dim: usize,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Array2<f64>, state_dim: usize) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: y.nrows(),
                context: "dataset rows",
            });
        }
        if x.ncols() != state_dim + y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: state_dim + y.ncols(),
                actual: x.ncols(),
                context: "dataset parent columns",
            });
        }
        Ok(Batch { x, y, state_dim })
    }

    pub fn from_buffer(buffer: &Buffer) -> Result<Self> {
        let (s, a) = (buffer.meta.state_dim, buffer.meta.action_dim);
        let n = buffer.records.len();
        let mut x = Array2::zeros((n, s + a));
        let mut y = Array2::zeros((n, a));
        for (r, rec) in buffer.records.iter().enumerate() {
            if rec.state.len() != s || rec.prev_action.bits.len() != a || rec.action.bits.len() != a {
                return Err(Error::DimensionMismatch {
                    expected: s + 2 * a,
                    actual: rec.state.len() + rec.prev_action.bits.len() + rec.action.bits.len(),
                    context: "buffer record",
                });
            }
            for (j, v) in parent_vector(&rec.state, &rec.prev_action).into_iter().enumerate() {
                x[[r, j]] = v;
            }
            for (i, &b) in rec.action.bits.iter().enumerate() {
                y[[r, i]] = f64::from(b);
            }
        }
        Batch::new(x, y, s)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn action_dim(&self) -> usize {
        self.y.ncols()
    }

    fn gather(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.x.select(Axis(0), rows), self.y.select(Axis(0), rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub causal: f64,
    pub reg: f64,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ScaModel,
    pub config: TrainConfig,
    pub trace: Vec<TracePoint>,
    /// Probabilities clipped over all δ-step evaluations.
    pub clipped: u64,
}

pub fn train(buffer: &Buffer, config: &TrainConfig) -> Result<TrainedModel> {
    if buffer.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty buffer".into()));
    }
    train_on_batches(&Batch::from_buffer(buffer)?, config)
}

pub fn train_on_batches(data: &Batch, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    let mut model = ScaModel::new(
        data.state_dim,
        data.action_dim(),
        &config.hidden,
        config.gate_init,
        derive_seed(config.seed, 0, 0),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, 1));
    let net_len: usize = model.nets().iter().map(|n| n.param_count()).sum();
    let mut net_opt = Adam::new(net_len, config.lr);
    let mut gate_opt = Adam::new(model.logits().len(), config.gate_lr.unwrap_or(config.lr));
    let mut trace = Vec::new();
    let mut clipped_total = 0u64;
    let mut rows = vec![0usize; config.batch_size];

    for it in 0..config.iterations {
        for r in rows.iter_mut() {
            *r = rng.random_range(0..data.len());
        }
        let (x, y) = data.gather(&rows);

        let (loss, grads) = model
            .causal_loss_and_grads(x.view(), y.view(), true, false)
            .map_err(|_| Error::NonFiniteLoss(it))?;
        let grads = grads.expect("requested");
        clipped_total += loss.clipped as u64;
        {
            let params = model.nets_params_mut();
            net_opt.update(params, grads.nets.into_iter().flatten());
        }
        if config.weight_decay > 0.0 {
            let shrink = 1.0 - config.lr * config.weight_decay;
            for net in model.nets.iter_mut() {
                net.scale_weights(shrink);
            }
        }

        let (_, grads) = model
            .causal_loss_and_grads(x.view(), y.view(), false, true)
            .map_err(|_| Error::NonFiniteLoss(it))?;
        let mut g = grads.expect("requested").logits;
        g += &model.reg_grad(config.lambda_reg, config.edge_prior)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss(it));
        }
        gate_opt.update(model.logits_mut().iter_mut(), g.iter().copied());

        if it % config.trace_every == 0 || it + 1 == config.iterations {
            let reg = model.reg_loss(config.lambda_reg, config.edge_prior)?;
            log::debug!("iteration {it}: causal {:.6} reg {:.3e}", loss.value, reg);
            trace.push(TracePoint {
                iteration: it,
                causal: loss.value,
                reg,
                clipped: loss.clipped,
            });
        }
    }

    Ok(TrainedModel {
        model,
        config: config.clone(),
        trace,
        clipped: clipped_total,
    })
}

impl ScaModel {
    fn nets_params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.nets.iter_mut().flat_map(|n| n.params_mut().iter_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Batch {
        let x = array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0]];
        let y = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        Batch::new(x, y, 2).unwrap()
    }

    #[test]
    fn zero_iterations_is_initialization() {
        let cfg = TrainConfig {
            iterations: 0,
            hidden: vec![4],
            ..TrainConfig::default()
        };
        let trained = train_on_batches(&tiny(), &cfg).unwrap();
        let fresh = ScaModel::new(2, 2, &[4], 0.0, derive_seed(0, 0, 0)).unwrap();
        assert_eq!(trained.model, fresh);
        assert!(trained.trace.is_empty());
    }

    #[test]
    fn loss_decreases() {
        let cfg = TrainConfig {
            iterations: 300,
            hidden: vec![8],
            lr: 1e-2,
            batch_size: 3,
            trace_every: 50,
            ..TrainConfig::default()
        };
        let t = train_on_batches(&tiny(), &cfg).unwrap();
        assert!(t.trace.last().unwrap().causal < t.trace[0].causal);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            edge_prior: 1.0,
            ..TrainConfig::default()
        };
        assert!(train_on_batches(&tiny(), &cfg).is_err());
    }
}
