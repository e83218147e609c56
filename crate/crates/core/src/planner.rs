//! Causally reweighted action selection with a matrix-only fallback.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitchen::MacroAction;
use crate::matrix::CausalActionMatrix;
use crate::schema::{ActionVector, StateVector};

/// One candidate action from a proposer. `canonical` is `None` when the
/// text matches no instructed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub raw_text: String,
    pub canonical: Option<MacroAction>,
    pub p_a: f64,
}

impl Proposal {
    pub fn new(raw_text: impl Into<String>, p_a: f64) -> Self {
        let raw_text = raw_text.into();
        Proposal {
            canonical: canonicalize(&raw_text),
            raw_text,
            p_a,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub proposals: Vec<Proposal>,
    /// Set when a remote proposer gave up after its retries.
    #[serde(default)]
    pub transport_failure: bool,
    /// Unprocessed completion texts, when the proposer produced any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_completions: Vec<String>,
}

impl ProposalSet {
    pub fn new(proposals: Vec<Proposal>) -> Self {
        ProposalSet {
            proposals,
            ..Self::default()
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn failed() -> Self {
        ProposalSet {
            transport_failure: true,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn recognized(&self) -> impl Iterator<Item = (MacroAction, &Proposal)> {
        self.proposals.iter().filter_map(|p| p.canonical.map(|a| (a, p)))
    }

    pub fn invalid_count(&self) -> usize {
        self.proposals.iter().filter(|p| p.canonical.is_none()).count()
    }

    pub fn validate(&self) -> Result<()> {
        let mut total = 0.0;
        for p in &self.proposals {
            if !(0.0..=1.0).contains(&p.p_a) {
                return Err(Error::InvalidConfig(format!("p_a {} of {:?} outside [0, 1]", p.p_a, p.raw_text)));
            }
            total += p.p_a;
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::InvalidConfig(format!("proposal probabilities sum to {total}")));
        }
        Ok(())
    }
}

fn squash(text: &str) -> String {
    text.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
}

fn patterns() -> &'static [(MacroAction, Regex)] {
    static PATTERNS: OnceLock<Vec<(MacroAction, Regex)>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        MacroAction::ALL
            .iter()
            .map(|&a| {
                let words: Vec<&str> = a
                    .name()
                    .split('_')
                    .flat_map(|w| if w == "pickup" { vec!["pick", "up"] } else { vec![w] })
                    .collect();
                let body = words.join(r"[\s_\-]*");
                let re = Regex::new(&format!(r"(?i)(^|[^a-z]){body}([^a-z]|$)")).expect("static pattern");
                (a, re)
            })
            .collect()
    })
}

/// Map free text to an instructed action: exact match after lowercasing and
/// dropping everything but letters and digits, then a search for exactly
/// one action name with loose separators.
pub fn canonicalize(text: &str) -> Option<MacroAction> {
    let squashed = squash(text);
    if let Some(a) = MacroAction::ALL.iter().copied().find(|a| squash(a.name()) == squashed) {
        return Some(a);
    }
    let mut hits = patterns().iter().filter(|(_, re)| re.is_match(text)).map(|(a, _)| *a);
    let first = hits.next()?;
    if hits.any(|a| a != first) {
        return None;
    }
    Some(first)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub seed: u64,
    #[serde(default = "unit_temperature")]
    pub temperature: f64,
}

fn unit_temperature() -> f64 {
    1.0
}

impl PlannerConfig {
    pub fn new(gamma: f64, seed: u64) -> Self {
        PlannerConfig {
            gamma,
            seed,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// `gamma * p_a + (1 - gamma) * p_c`
pub fn reweight(p_a: f64, p_c: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(0.0..=1.0).contains(&p_a) {
        return Err(Error::InvalidConfig(format!("p_a {p_a} outside [0, 1]")));
    }
    if !(p_c >= 0.0 && p_c.is_finite()) {
        return Err(Error::InvalidConfig(format!("p_c {p_c} must be finite and >= 0")));
    }
    Ok(gamma * p_a + (1.0 - gamma) * p_c)
}

/// Softmax at temperature 1.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    normalize_with_temperature(values, 1.0)
}

pub fn normalize_with_temperature(values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::DegenerateDistribution("softmax of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Collapse entries sharing an action by summing, keeping first-occurrence order.
/// Group sums are compensated (Neumaier), so 0.2 + 0.1 + 0.3 gives 0.6.
pub fn merge_redundant(items: &[(MacroAction, f64)]) -> Vec<(MacroAction, f64)> {
    let mut groups: Vec<(MacroAction, f64, f64)> = Vec::new();
    for &(a, p) in items {
        match groups.iter_mut().find(|(b, _, _)| *b == a) {
            Some((_, sum, comp)) => {
                let t = *sum + p;
                *comp += if sum.abs() >= p.abs() { (*sum - t) + p } else { (p - t) + *sum };
                *sum = t;
            }
            None => groups.push((a, p, 0.0)),
        }
    }
    groups.into_iter().map(|(a, s, c)| (a, s + c)).collect()
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_action(distribution: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let total: f64 = distribution.iter().sum();
    if distribution.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::DegenerateDistribution(format!("invalid probabilities {distribution:?}")));
    }
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution("all-zero distribution".into()));
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::DegenerateDistribution(format!("probabilities sum to {total}")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in distribution.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return Ok(k);
            }
        }
    }
    Ok(last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupChoice {
    pub action: MacroAction,
    pub scores: Vec<f64>,
    /// Every score was zero, so the choice carries no causal information.
    pub uninformed: bool,
}

/// Highest-scoring action over the full action set; ties go to the lowest index.
pub fn backup_action(matrix: &CausalActionMatrix, state: &StateVector, prev_action: &ActionVector) -> Result<BackupChoice> {
    let scores = matrix.scores(state, prev_action)?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    let uninformed = scores.iter().all(|&s| s == 0.0);
    Ok(BackupChoice {
        action: MacroAction::from_index(best).expect("score per action"),
        scores,
        uninformed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPath {
    Reweighted,
    Backup,
}

/// A recognized proposal with its intermediate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub raw_text: String,
    pub action: MacroAction,
    pub p_a: f64,
    pub p_c: f64,
    pub p_f: f64,
    pub softmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDecision {
    pub chosen: MacroAction,
    pub path: PlanPath,
    /// Merged actions and their final probabilities.
    pub distribution: Vec<(MacroAction, f64)>,
    pub candidates: Vec<CandidateTrace>,
    pub unrecognized: Vec<String>,
    pub backup: Option<BackupChoice>,
    pub transport_failure: bool,
}

impl PlanDecision {
    pub fn invalid_proposals(&self) -> usize {
        self.unrecognized.len()
    }

    pub fn probability_of(&self, action: MacroAction) -> f64 {
        self.distribution.iter().find(|(a, _)| *a == action).map_or(0.0, |(_, p)| *p)
    }
}

/// Actions with their merged probabilities, in first-occurrence order.
pub type MergedDistribution = Vec<(MacroAction, f64)>;

/// Per-candidate and merged values for a recognized proposal list; the
/// sampling step is left to the caller.
pub fn reweighted_distribution(
    proposals: &[(MacroAction, &Proposal)],
    causal: impl Fn(MacroAction) -> Result<f64>,
    config: &PlannerConfig,
) -> Result<(Vec<CandidateTrace>, MergedDistribution)> {
    config.validate()?;
    let mut candidates = Vec::with_capacity(proposals.len());
    for &(action, p) in proposals {
        let p_c = causal(action)?;
        let p_f = reweight(p.p_a, p_c, config.gamma)?;
        candidates.push(CandidateTrace {
            raw_text: p.raw_text.clone(),
            action,
            p_a: p.p_a,
            p_c,
            p_f,
            softmax: 0.0,
        });
    }
    let pf: Vec<f64> = candidates.iter().map(|c| c.p_f).collect();
    let soft = normalize_with_temperature(&pf, config.temperature)?;
    for (c, s) in candidates.iter_mut().zip(&soft) {
        c.softmax = *s;
    }
    let pairs: Vec<(MacroAction, f64)> = candidates.iter().map(|c| (c.action, c.softmax)).collect();
    Ok((candidates, merge_redundant(&pairs)))
}

/// A planner instance owning its random stream.
#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    rng: ChaCha8Rng,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Planner {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn plan(
        &mut self,
        set: &ProposalSet,
        state: &StateVector,
        prev_action: &ActionVector,
        matrix: &CausalActionMatrix,
    ) -> Result<PlanDecision> {
        set.validate()?;
        let unrecognized: Vec<String> = set
            .proposals
            .iter()
            .filter(|p| p.canonical.is_none())
            .map(|p| p.raw_text.clone())
            .collect();
        let recognized: Vec<(MacroAction, &Proposal)> = set.recognized().collect();
        if recognized.is_empty() {
            let backup = backup_action(matrix, state, prev_action)?;
            return Ok(PlanDecision {
                chosen: backup.action,
                path: PlanPath::Backup,
                distribution: vec![(backup.action, 1.0)],
                candidates: Vec::new(),
                unrecognized,
                backup: Some(backup),
                transport_failure: set.transport_failure,
            });
        }
        let (candidates, merged) = reweighted_distribution(
            &recognized,
            |a| matrix.query_score(state, prev_action, a),
            &self.config,
        )?;
        let probs: Vec<f64> = merged.iter().map(|(_, p)| *p).collect();
        let k = sample_action(&probs, &mut self.rng)?;
        Ok(PlanDecision {
            chosen: merged[k].0,
            path: PlanPath::Reweighted,
            distribution: merged,
            candidates,
            unrecognized,
            backup: None,
            transport_failure: set.transport_failure,
        })
    }

    /// Planning from proposer probabilities alone, for runs without a
    /// matrix. `None` when nothing was recognized.
    pub fn plan_unassisted(&mut self, set: &ProposalSet) -> Result<Option<PlanDecision>> {
        set.validate()?;
        let recognized: Vec<(MacroAction, &Proposal)> = set.recognized().collect();
        if recognized.is_empty() {
            return Ok(None);
        }
        let config = PlannerConfig { gamma: 1.0, ..self.config };
        let (candidates, merged) = reweighted_distribution(&recognized, |_| Ok(0.0), &config)?;
        let probs: Vec<f64> = merged.iter().map(|(_, p)| *p).collect();
        let k = sample_action(&probs, &mut self.rng)?;
        Ok(Some(PlanDecision {
            chosen: merged[k].0,
            path: PlanPath::Reweighted,
            distribution: merged,
            candidates,
            unrecognized: set
                .proposals
                .iter()
                .filter(|p| p.canonical.is_none())
                .map(|p| p.raw_text.clone())
                .collect(),
            backup: None,
            transport_failure: set.transport_failure,
        }))
    }
}
