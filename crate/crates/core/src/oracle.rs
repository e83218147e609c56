//! Synthetic structural models with known parents, a closed-form ridge
//! regression over a fixed feature map, and edge-recovery metrics.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sca::Batch;

/// Boolean adjacency, `parents × children`.
pub type EdgeMatrix = Array2<bool>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Non-action parent features.
    pub state_dim: usize,
    /// Children; the same number of previous-action parents follow the state block.
    pub action_dim: usize,
    pub density: f64,
    pub samples: usize,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.3
}

impl SyntheticSpec {
    pub fn new(state_dim: usize, action_dim: usize, density: f64, samples: usize, seed: u64) -> Self {
        SyntheticSpec {
            state_dim,
            action_dim,
            density,
            samples,
            noise_scale: default_noise(),
            seed,
        }
    }

    pub fn parent_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    fn validate(&self) -> Result<()> {
        if self.action_dim == 0 {
            return Err(Error::InvalidConfig("synthetic model needs at least one child".into()));
        }
        if self.parent_dim() < 2 {
            return Err(Error::InvalidConfig("synthetic model needs a non-self parent".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!("density {} outside (0, 1]", self.density)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `true` where parent `j` may feed child `i`.
pub fn permissible(state_dim: usize, action_dim: usize) -> EdgeMatrix {
    Array2::from_shape_fn((state_dim + action_dim, action_dim), |(j, i)| j != state_dim + i)
}

/// Degree-2 feature map over binary parents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub intercept: bool,
    pub interactions: bool,
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap {
            intercept: true,
            interactions: true,
        }
    }
}

impl FeatureMap {
    pub fn identity() -> Self {
        FeatureMap {
            intercept: false,
            interactions: false,
        }
    }

    pub fn id(&self) -> String {
        match (self.intercept, self.interactions) {
            (true, true) => "bias+linear+pairwise",
            (true, false) => "bias+linear",
            (false, true) => "linear+pairwise",
            (false, false) => "linear",
        }
        .to_string()
    }

    /// Parent indices each output feature depends on, in output order.
    pub fn supports(&self, parent_dim: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if self.intercept {
            out.push(Vec::new());
        }
        out.extend((0..parent_dim).map(|j| vec![j]));
        if self.interactions {
            for j in 0..parent_dim {
                for k in j + 1..parent_dim {
                    out.push(vec![j, k]);
                }
            }
        }
        out
    }

    pub fn dim(&self, parent_dim: usize) -> usize {
        let pairs = if self.interactions {
            parent_dim * parent_dim.saturating_sub(1) / 2
        } else {
            0
        };
        usize::from(self.intercept) + parent_dim + pairs
    }

    pub fn expand(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let supports = self.supports(x.ncols());
        Array2::from_shape_fn((x.nrows(), supports.len()), |(r, f)| {
            supports[f].iter().map(|&j| x[[r, j]]).product()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScm {
    pub state_dim: usize,
    pub action_dim: usize,
    pub true_edges: EdgeMatrix,
    pub feature_map: FeatureMap,
    /// `features × children` weights of the latent score.
    pub mechanisms: Array2<f64>,
    pub noise_scale: f64,
}

impl SyntheticScm {
    pub fn parent_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Draw a random sparse model and sample from it. Parents are independent
/// fair coins; each child thresholds a noisy degree-2 score of its parents.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Batch, SyntheticScm)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (p, c) = (spec.parent_dim(), spec.action_dim);
    let allowed = permissible(spec.state_dim, c);
    let mut slots: Vec<(usize, usize)> = allowed.indexed_iter().filter(|(_, &ok)| ok).map(|(ix, _)| ix).collect();
    let count = ((spec.density * slots.len() as f64).round() as usize).clamp(1, slots.len());
    slots.shuffle(&mut rng);
    let mut edges = Array2::from_elem((p, c), false);
    for &(j, i) in &slots[..count] {
        edges[[j, i]] = true;
    }

    let map = FeatureMap::default();
    let supports = map.supports(p);
    let mut mech = Array2::zeros((supports.len(), c));
    for i in 0..c {
        let mut mean = 0.0;
        for (f, s) in supports.iter().enumerate() {
            if s.is_empty() || !s.iter().all(|&j| edges[[j, i]]) {
                continue;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let w = if s.len() == 1 {
                sign * rng.random_range(0.6..1.2)
            } else {
                sign * rng.random_range(0.1..0.4)
            };
            mech[[f, i]] = w;
            mean += w * 0.5f64.powi(s.len() as i32);
        }
        if map.intercept {
            mech[[0, i]] = -mean;
        }
    }

    let x = Array2::from_shape_fn((spec.samples, p), |_| f64::from(u8::from(rng.random::<bool>())));
    let phi = map.expand(x.view());
    let score = phi.dot(&mech);
    let noise = Normal::new(0.0, spec.noise_scale.max(f64::MIN_POSITIVE)).expect("finite scale");
    let y = score.mapv(|s| {
        let e = if spec.noise_scale > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        f64::from(u8::from(s + e > 0.0))
    });

    let scm = SyntheticScm {
        state_dim: spec.state_dim,
        action_dim: c,
        true_edges: edges,
        feature_map: map,
        mechanisms: mech,
        noise_scale: spec.noise_scale,
    };
    Ok((Batch::new(x, y, spec.state_dim)?, scm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    /// `features × children`.
    pub weights: Array2<f64>,
    pub lambda: f64,
    pub feature_map: FeatureMap,
    pub feature_map_id: String,
    pub parent_dim: usize,
}

impl RidgeFit {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Solve `(ΦᵀΦ + λI) W = ΦᵀY` by Cholesky factorization.
pub fn ridge_solve(phi: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, lambda: f64) -> Result<Array2<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge lambda {lambda} must be positive")));
    }
    if phi.nrows() == 0 {
        return Err(Error::InvalidConfig("ridge fit needs at least one sample".into()));
    }
    if phi.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            expected: phi.nrows(),
            actual: targets.nrows(),
            context: "ridge targets",
        });
    }
    if phi.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge design"));
    }
    let (n, d) = phi.dim();
    let k = targets.ncols();
    let design = DMatrix::from_fn(n, d, |r, c| phi[[r, c]]);
    let y = DMatrix::from_fn(n, k, |r, c| targets[[r, c]]);
    let mut gram = design.tr_mul(&design);
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = design.tr_mul(&y);
    let chol = gram
        .cholesky()
        .ok_or(Error::NonFinite("regularized Gram matrix is not positive definite"))?;
    let w = chol.solve(&rhs);
    Ok(Array2::from_shape_fn((d, k), |(r, c)| w[(r, c)]))
}

pub fn ridge_fit(data: &Batch, feature_map: FeatureMap, lambda: f64) -> Result<RidgeFit> {
    let phi = feature_map.expand(data.x.view());
    Ok(RidgeFit {
        weights: ridge_solve(phi.view(), data.y.view(), lambda)?,
        lambda,
        feature_map,
        feature_map_id: feature_map.id(),
        parent_dim: data.x.ncols(),
    })
}

/// Edge `(j, i)` iff some feature involving parent `j` has `|W_i| > threshold`.
pub fn recover_structure(fit: &RidgeFit, threshold: f64) -> Result<EdgeMatrix> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidConfig(format!("threshold {threshold} must be positive")));
    }
    let supports = fit.feature_map.supports(fit.parent_dim);
    let mut edges = Array2::from_elem((fit.parent_dim, fit.weights.ncols()), false);
    for ((f, i), &w) in fit.weights.indexed_iter() {
        if w.abs() > threshold {
            for &j in &supports[f] {
                edges[[j, i]] = true;
            }
        }
    }
    Ok(edges)
}

/// Edges of a gate matrix strictly above `threshold`.
pub fn threshold_gates(gates: &Array2<f64>, threshold: f64) -> EdgeMatrix {
    gates.mapv(|g| g > threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
}

/// Precision and recall are 1 when their denominator is empty.
pub fn structural_metrics(predicted: &EdgeMatrix, truth: &EdgeMatrix) -> Result<StructuralMetrics> {
    if predicted.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
            context: "edge matrices",
        });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth.iter()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(StructuralMetrics {
        precision,
        recall,
        f1,
        shd: fp + fneg,
    })
}

/// Fraction of entries allowed by `mask` on which `a` and `b` agree.
pub fn edge_agreement(a: &EdgeMatrix, b: &EdgeMatrix, mask: &EdgeMatrix) -> Result<f64> {
    if a.dim() != b.dim() || a.dim() != mask.dim() {
        return Err(Error::DimensionMismatch {
            expected: mask.len(),
            actual: a.len().max(b.len()),
            context: "edge matrices",
        });
    }
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return Ok(1.0);
    }
    let same = a
        .iter()
        .zip(b.iter())
        .zip(mask.iter())
        .filter(|((x, y), m)| **m && x == y)
        .count();
    Ok(same as f64 / total as f64)
}
