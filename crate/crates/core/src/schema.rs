//! Binary factorization of kitchen states and macro actions.
//!
//! Features are named from the point of view of a controlling seat: `*1`
//! features describe the controlling agent, `*2` features its partner. The
//! parent vector of the causal model is `[state bits ∥ previous action bits]`,
//! so column `j < S` is a state feature and column `S + i` is action `i`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kitchen::{Hand, KitchenLayout, KitchenState, MacroAction, Pot};

/// Fill level of one pot as seen by the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PotLevel {
    Onions(u8),
    Finished,
}

impl PotLevel {
    pub fn of(pot: &Pot) -> PotLevel {
        if pot.finished {
            PotLevel::Finished
        } else {
            PotLevel::Onions(pot.onions)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateFeature {
    /// `agent` is 0 for the controlling agent and 1 for its partner.
    Hand { agent: usize, hand: Hand },
    Pot { pot: usize, level: PotLevel },
    GoalDelivered,
}

impl StateFeature {
    fn parse(name: &str) -> Option<StateFeature> {
        let hand = |stem: &str| match stem {
            "empty_hand" => Some(Hand::Empty),
            "hold_onion" => Some(Hand::Onion),
            "hold_dish" => Some(Hand::Dish),
            "dish_with_soup" => Some(Hand::SoupDish),
            _ => None,
        };
        if name == "goal_delivered" {
            return Some(StateFeature::GoalDelivered);
        }
        if let Some(stem) = name.strip_suffix('1') {
            if let Some(h) = hand(stem) {
                return Some(StateFeature::Hand { agent: 0, hand: h });
            }
        }
        if let Some(stem) = name.strip_suffix('2') {
            if let Some(h) = hand(stem) {
                return Some(StateFeature::Hand { agent: 1, hand: h });
            }
        }
        // Single-pot names: pot0..pot3, pot_finished.
        // Multi-pot names: pot{n}_{p}, pot_finished_{p}.
        let rest = name.strip_prefix("pot")?;
        let (head, pot) = match rest.rsplit_once('_') {
            Some((h, p)) if !h.is_empty() && !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()) => {
                (h, p.parse().ok()?)
            }
            _ => (rest, 0),
        };
        let level = match head {
            "_finished" | "finished" => PotLevel::Finished,
            digits => {
                let n: u8 = digits.parse().ok()?;
                if n > 3 {
                    return None;
                }
                PotLevel::Onions(n)
            }
        };
        Some(StateFeature::Pot { pot, level })
    }

    fn holds(&self, state: &KitchenState, seat: usize) -> bool {
        match *self {
            StateFeature::Hand { agent, hand } => {
                let who = if agent == 0 { seat } else { 1 - seat };
                state.hands[who] == hand
            }
            StateFeature::Pot { pot, level } => PotLevel::of(&state.pots[pot]) == level,
            StateFeature::GoalDelivered => state.deliveries > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSchema {
    pub state_features: Vec<String>,
    pub action_features: Vec<String>,
    #[serde(skip)]
    parsed: Vec<StateFeature>,
    #[serde(skip)]
    num_pots: usize,
}

impl FeatureSchema {
    pub fn new(state_features: Vec<String>, action_features: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for name in state_features.iter().chain(&action_features) {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate feature `{name}`")));
            }
        }
        let expected: Vec<&str> = MacroAction::ALL.iter().map(|a| a.name()).collect();
        if action_features.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::InvalidSchema(format!(
                "action features must be exactly {expected:?} in that order"
            )));
        }
        let parsed = state_features
            .iter()
            .map(|n| {
                StateFeature::parse(n)
                    .ok_or_else(|| Error::InvalidSchema(format!("unknown state feature `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;

        let num_pots = parsed
            .iter()
            .filter_map(|f| match f {
                StateFeature::Pot { pot, .. } => Some(pot + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);

        let schema = FeatureSchema {
            state_features,
            action_features,
            parsed,
            num_pots,
        };
        for group in schema.exclusive_groups() {
            if group.is_empty() {
                return Err(Error::InvalidSchema("incomplete exclusive group".into()));
            }
        }
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            state_features: Vec<String>,
            action_features: Vec<String>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Self::new(raw.state_features, raw.action_features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Single-pot schema: 14 state features, 7 actions.
    pub fn cramped_room() -> Self {
        Self::from_json(include_str!("../assets/schemas/cr.json")).expect("bundled schema")
    }

    /// Two-pot schema: 19 state features, 7 actions.
    pub fn two_pot() -> Self {
        Self::from_json(include_str!("../assets/schemas/two_pot.json")).expect("bundled schema")
    }

    /// Bundled schema matching the pot count of `layout`.
    pub fn for_layout(layout: &KitchenLayout) -> Result<Self> {
        match layout.num_pots {
            1 => Ok(Self::cramped_room()),
            2 => Ok(Self::two_pot()),
            n => Err(Error::InvalidSchema(format!("no bundled schema for {n} pots"))),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_features.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_features.len()
    }

    pub fn parent_dim(&self) -> usize {
        self.state_dim() + self.action_dim()
    }

    pub fn num_pots(&self) -> usize {
        self.num_pots
    }

    pub fn state_feature(&self, index: usize) -> StateFeature {
        self.parsed[index]
    }

    /// Column of the parent vector that carries previous action `action`.
    pub fn action_column(&self, action: MacroAction) -> usize {
        self.state_dim() + action.index()
    }

    /// Name of parent column `j`.
    pub fn parent_name(&self, j: usize) -> &str {
        if j < self.state_dim() {
            &self.state_features[j]
        } else {
            &self.action_features[j - self.state_dim()]
        }
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_features.iter().position(|n| n == name)
    }

    /// Groups of state indices of which exactly one bit is set: the
    /// controlling hand, the partner hand, and each pot.
    pub fn exclusive_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); 2 + self.num_pots];
        for (i, f) in self.parsed.iter().enumerate() {
            match f {
                StateFeature::Hand { agent, .. } => groups[*agent].push(i),
                StateFeature::Pot { pot, .. } => groups[2 + pot].push(i),
                StateFeature::GoalDelivered => {}
            }
        }
        groups
    }

    /// SHA-256 over the ordered feature names.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.state_features {
            hasher.update(b"s:");
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        for name in &self.action_features {
            hasher.update(b"a:");
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Encode `state` from the point of view of `seat`.
    pub fn encode_state(&self, state: &KitchenState, seat: usize) -> Result<StateVector> {
        if state.pots.len() != self.num_pots {
            return Err(Error::DimensionMismatch {
                expected: self.num_pots,
                actual: state.pots.len(),
                context: "pot count",
            });
        }
        if seat > 1 {
            return Err(Error::InvalidConfig(format!("seat {seat} out of range")));
        }
        let bits = self
            .parsed
            .iter()
            .map(|f| u8::from(f.holds(state, seat)))
            .collect();
        Ok(StateVector { bits })
    }

    pub fn encode_action(&self, action: MacroAction) -> ActionVector {
        ActionVector::one_hot(action, self.action_dim())
    }

    /// Encode an action given by name.
    pub fn encode_action_name(&self, name: &str) -> Result<ActionVector> {
        let action: MacroAction = name.parse()?;
        Ok(self.encode_action(action))
    }

    pub fn no_previous_action(&self) -> ActionVector {
        ActionVector::sentinel(self.action_dim())
    }

    /// Inverse of [`encode_state`](Self::encode_state) on the encoded information.
    pub fn decode_state(&self, bits: &StateVector) -> Result<CanonicalState> {
        self.check_state(bits)?;
        let mut hands = [None, None];
        let mut pots = vec![None; self.num_pots];
        let mut delivered = false;
        for (f, &b) in self.parsed.iter().zip(&bits.bits) {
            if b == 0 {
                continue;
            }
            match *f {
                StateFeature::Hand { agent, hand } => {
                    if hands[agent].replace(hand).is_some() {
                        return Err(Error::InvalidSchema("two hand bits set".into()));
                    }
                }
                StateFeature::Pot { pot, level } => {
                    if pots[pot].replace(level).is_some() {
                        return Err(Error::InvalidSchema("two pot bits set".into()));
                    }
                }
                StateFeature::GoalDelivered => delivered = true,
            }
        }
        let missing = || Error::InvalidSchema("exclusive group without a set bit".into());
        Ok(CanonicalState {
            hands: [hands[0].ok_or_else(missing)?, hands[1].ok_or_else(missing)?],
            pots: pots.into_iter().map(|p| p.ok_or_else(missing)).collect::<Result<_>>()?,
            delivered,
        })
    }

    pub fn check_state(&self, v: &StateVector) -> Result<()> {
        if v.bits.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                actual: v.bits.len(),
                context: "state vector",
            });
        }
        Ok(())
    }

    pub fn check_action(&self, v: &ActionVector) -> Result<()> {
        if v.bits.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim(),
                actual: v.bits.len(),
                context: "action vector",
            });
        }
        Ok(())
    }
}

/// The information about a kitchen state that survives encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalState {
    /// Controlling hand first, partner hand second.
    pub hands: [Hand; 2],
    pub pots: Vec<PotLevel>,
    pub delivered: bool,
}

impl CanonicalState {
    pub fn of(state: &KitchenState, seat: usize) -> Self {
        CanonicalState {
            hands: [state.hands[seat], state.hands[1 - seat]],
            pots: state.pots.iter().map(PotLevel::of).collect(),
            delivered: state.deliveries > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector {
    pub bits: Vec<u8>,
}

impl StateVector {
    pub fn new(bits: Vec<u8>) -> Self {
        StateVector { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector {
    pub bits: Vec<u8>,
}

impl ActionVector {
    pub fn one_hot(action: MacroAction, dim: usize) -> Self {
        let mut bits = vec![0; dim];
        bits[action.index()] = 1;
        ActionVector { bits }
    }

    /// All-zero "no previous action" marker used before an agent's first action.
    pub fn sentinel(dim: usize) -> Self {
        ActionVector { bits: vec![0; dim] }
    }

    pub fn is_sentinel(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// The encoded action, if exactly one bit is set.
    pub fn action(&self) -> Option<MacroAction> {
        let mut set = self.bits.iter().enumerate().filter(|(_, &b)| b != 0);
        match (set.next(), set.next()) {
            (Some((i, _)), None) => MacroAction::from_index(i),
            _ => None,
        }
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
}

/// Column indices of the parent vector whose bits are set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn active_indices(state: &StateVector, prev_action: &ActionVector) -> ActiveSet {
    let s = state.len();
    let indices = state
        .bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .map(|(j, _)| j)
        .chain(
            prev_action
                .bits
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(|(i, _)| s + i),
        )
        .collect();
    ActiveSet { indices }
}

/// Concatenated `[state ∥ prev_action]` as floats.
pub fn parent_vector(state: &StateVector, prev_action: &ActionVector) -> Vec<f64> {
    state
        .bits
        .iter()
        .chain(&prev_action.bits)
        .map(|&b| f64::from(b))
        .collect()
}
