//! The causal action matrix: learned gate strengths arranged with next
//! actions as rows and parent features as columns.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kitchen::MacroAction;
use crate::sca::ScaCheckpoint;
use crate::schema::{active_indices, ActionVector, FeatureSchema, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalActionMatrix {
    /// `actions × (state + actions)`
    entries: Array2<f64>,
    state_dim: usize,
    column_names: Vec<String>,
    row_names: Vec<String>,
    schema_fingerprint: String,
    provenance: String,
}

/// Zero the weaker direction of every action pair that points both ways.
/// Equal pairs lose the edge whose parent action has the higher index.
pub fn prune_action_cycles(entries: &mut Array2<f64>, state_dim: usize) {
    let actions = entries.nrows();
    for i in 0..actions {
        for j in i + 1..actions {
            let into_i = entries[[i, state_dim + j]];
            let into_j = entries[[j, state_dim + i]];
            if into_i > 0.0 && into_j > 0.0 {
                if into_j > into_i {
                    entries[[i, state_dim + j]] = 0.0;
                } else if into_i > into_j {
                    entries[[j, state_dim + i]] = 0.0;
                } else {
                    entries[[i, state_dim + j]] = 0.0;
                }
            }
        }
    }
}

impl CausalActionMatrix {
    /// Transpose a `parents × actions` gate matrix, clear self-columns and
    /// prune two-cycles. `fingerprint` is the schema the gates were trained on.
    pub fn build(gates: &Array2<f64>, schema: &FeatureSchema, fingerprint: &str, provenance: &str) -> Result<Self> {
        let expected = schema.fingerprint();
        if fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: fingerprint.to_string(),
            });
        }
        let (p, a) = (schema.parent_dim(), schema.action_dim());
        if gates.dim() != (p, a) {
            return Err(Error::DimensionMismatch {
                expected: p * a,
                actual: gates.len(),
                context: "gate matrix",
            });
        }
        let s = schema.state_dim();
        let mut entries = Array2::from_shape_fn((a, p), |(i, j)| if j == s + i { 0.0 } else { gates[[j, i]] });
        prune_action_cycles(&mut entries, s);
        Self::from_entries(entries, schema, provenance)
    }

    pub fn from_checkpoint(checkpoint: &ScaCheckpoint, schema: &FeatureSchema, provenance: &str) -> Result<Self> {
        let gates = checkpoint.to_trained()?.model.gates();
        Self::build(&gates, schema, &checkpoint.schema_fingerprint, provenance)
    }

    /// Wrap an already-arranged matrix, checking shape, range and self-columns.
    pub fn from_entries(entries: Array2<f64>, schema: &FeatureSchema, provenance: &str) -> Result<Self> {
        let (p, a, s) = (schema.parent_dim(), schema.action_dim(), schema.state_dim());
        if entries.dim() != (a, p) {
            return Err(Error::DimensionMismatch {
                expected: a * p,
                actual: entries.len(),
                context: "matrix entries",
            });
        }
        for ((row, col), &value) in entries.indexed_iter() {
            if !(0.0..=1.0).contains(&value) || (col == s + row && value != 0.0) {
                return Err(Error::OutOfRange { row, col, value });
            }
        }
        Ok(CausalActionMatrix {
            entries,
            state_dim: s,
            column_names: (0..p).map(|j| schema.parent_name(j).to_string()).collect(),
            row_names: schema.action_features.clone(),
            schema_fingerprint: schema.fingerprint(),
            provenance: provenance.to_string(),
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn entry(&self, action: MacroAction, column: usize) -> f64 {
        self.entries[[action.index(), column]]
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn parent_dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Number of action pairs with nonzero weight in both directions.
    pub fn two_cycles(&self) -> usize {
        let s = self.state_dim;
        let a = self.action_dim();
        (0..a)
            .flat_map(|i| (i + 1..a).map(move |j| (i, j)))
            .filter(|&(i, j)| self.entries[[i, s + j]] > 0.0 && self.entries[[j, s + i]] > 0.0)
            .count()
    }

    fn check_scenario(&self, state: &StateVector, prev_action: &ActionVector) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: state.len(),
                context: "state vector",
            });
        }
        if prev_action.bits.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim(),
                actual: prev_action.bits.len(),
                context: "previous action vector",
            });
        }
        Ok(())
    }

    /// Sum of the action's row over the active parent columns.
    pub fn query_score(&self, state: &StateVector, prev_action: &ActionVector, action: MacroAction) -> Result<f64> {
        self.check_scenario(state, prev_action)?;
        let row = self.entries.row(action.index());
        Ok(active_indices(state, prev_action).indices.iter().map(|&j| row[j]).sum())
    }

    pub fn query_score_by_name(&self, state: &StateVector, prev_action: &ActionVector, name: &str) -> Result<f64> {
        let action: MacroAction = name.parse()?;
        self.query_score(state, prev_action, action)
    }

    /// Scores of every action in schema order.
    pub fn scores(&self, state: &StateVector, prev_action: &ActionVector) -> Result<Vec<f64>> {
        self.check_scenario(state, prev_action)?;
        let active = active_indices(state, prev_action);
        Ok(self
            .entries
            .rows()
            .into_iter()
            .map(|row| active.indices.iter().map(|&j| row[j]).sum())
            .collect())
    }

    /// Every entry scaled by `factor`, for sensitivity checks.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        out.entries.mapv_inplace(|v| v * factor);
        if out.entries.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(format!("scaling by {factor} leaves [0, 1]")));
        }
        Ok(out)
    }

    /// Copy with entries below `threshold` set to 0; for exports only.
    pub fn thresholded(&self, threshold: f64) -> Self {
        let mut out = self.clone();
        out.entries.mapv_inplace(|v| if v < threshold { 0.0 } else { v });
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("action");
        for name in &self.column_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.row_names.iter().zip(self.entries.rows()) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v:.16e}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, schema: &FeatureSchema, provenance: &str) -> Result<Self> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: provenance.into(),
            line,
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| parse_err(1, "empty matrix file".into()))?;
        let expected: Vec<String> = std::iter::once("action".to_string())
            .chain((0..schema.parent_dim()).map(|j| schema.parent_name(j).to_string()))
            .collect();
        let got: Vec<&str> = header.split(',').map(str::trim).collect();
        if got != expected {
            return Err(parse_err(1, "header does not match the schema".into()));
        }
        let (a, p) = (schema.action_dim(), schema.parent_dim());
        let mut entries = Array2::zeros((a, p));
        let mut rows = 0;
        for (k, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if k >= a {
                return Err(parse_err(k + 2, "more rows than actions".into()));
            }
            if fields[0] != schema.action_features[k] {
                return Err(parse_err(k + 2, format!("expected row {}, found {}", schema.action_features[k], fields[0])));
            }
            if fields.len() != p + 1 {
                return Err(parse_err(k + 2, format!("expected {} values, found {}", p, fields.len() - 1)));
            }
            for (j, f) in fields[1..].iter().enumerate() {
                entries[[k, j]] = f
                    .parse::<f64>()
                    .map_err(|e| parse_err(k + 2, format!("column {j}: {e}")))?;
            }
            rows += 1;
        }
        if rows != a {
            return Err(parse_err(rows + 2, format!("expected {a} rows, found {rows}")));
        }
        Self::from_entries(entries, schema, provenance)
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn import(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, schema, &path.display().to_string())
    }

    /// `parent,child,weight` rows, child-major in schema order.
    pub fn to_triples_csv(&self) -> String {
        let mut out = String::from("parent,child,weight\n");
        for (child, row) in self.row_names.iter().zip(self.entries.rows()) {
            for (parent, v) in self.column_names.iter().zip(row) {
                writeln!(out, "{parent},{child},{v:.16e}").expect("writing to a string");
            }
        }
        out
    }

    pub fn export_triples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_triples_csv()).map_err(|e| Error::io(path, e))
    }
}
