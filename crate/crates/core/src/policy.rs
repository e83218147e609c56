//! Scripted behavior policies used as buffer collectors and partner agents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitchen::{ActionSet, Hand, KitchenLayout, KitchenState, MacroAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    GreedyChef,
    RandomLegal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Probability of replacing the greedy choice by a uniform legal action.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::greedy(default_epsilon())
    }
}

impl PolicySpec {
    pub fn greedy(epsilon: f64) -> Self {
        PolicySpec {
            kind: PolicyKind::GreedyChef,
            epsilon,
        }
    }

    pub fn random_legal() -> Self {
        PolicySpec {
            kind: PolicyKind::RandomLegal,
            epsilon: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self.kind {
            PolicyKind::GreedyChef => format!("greedy_chef(eps={})", self.epsilon),
            PolicyKind::RandomLegal => "random_legal".to_string(),
        }
    }
}

/// The soup workflow: deliver, fill, fetch a dish for a ready pot, load the
/// pot, fetch an onion. Falls back to the first legal action in schema order.
pub fn greedy_choice(state: &KitchenState, agent: usize, layout: &KitchenLayout) -> Option<MacroAction> {
    let legal = state.legal_actions(agent, layout);
    let pot_finished = state.pots.iter().any(|p| p.finished);
    let pot_open = state.pots.iter().any(|p| p.is_open());
    let preferred = match state.hands[agent] {
        Hand::SoupDish => Some(MacroAction::DeliverSoup),
        Hand::Dish if pot_finished => Some(MacroAction::FillDishWithSoup),
        Hand::Empty if pot_finished => Some(MacroAction::PickupDish),
        Hand::Onion if pot_open => Some(MacroAction::PutOnionInPot),
        Hand::Empty => Some(MacroAction::PickupOnion),
        _ => None,
    };
    preferred
        .filter(|a| legal.contains(*a))
        .or_else(|| legal.iter().next())
}

/// Action distribution of the greedy chef with `epsilon` exploration,
/// indexed by schema action order. All-zero when nothing is legal.
pub fn greedy_distribution(
    state: &KitchenState,
    agent: usize,
    layout: &KitchenLayout,
    epsilon: f64,
) -> [f64; MacroAction::COUNT] {
    let mut probs = [0.0; MacroAction::COUNT];
    let legal = state.legal_actions(agent, layout);
    let Some(choice) = greedy_choice(state, agent, layout) else {
        return probs;
    };
    let share = epsilon / legal.len() as f64;
    for a in legal.iter() {
        probs[a.index()] = share;
    }
    probs[choice.index()] += 1.0 - epsilon;
    probs
}

/// A behavior policy with its own random stream.
#[derive(Debug, Clone)]
pub struct Policy {
    spec: PolicySpec,
    rng: ChaCha8Rng,
}

impl Policy {
    pub fn new(spec: PolicySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Policy {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    /// `None` is the no-op sentinel, returned only when nothing is legal.
    pub fn act(&mut self, state: &KitchenState, agent: usize, layout: &KitchenLayout) -> Option<MacroAction> {
        let legal = state.legal_actions(agent, layout);
        if legal.is_empty() {
            log::trace!("agent {agent} has no legal action at t={}", state.t);
            return None;
        }
        let explore = match self.spec.kind {
            PolicyKind::RandomLegal => true,
            PolicyKind::GreedyChef => self.rng.random::<f64>() < self.spec.epsilon,
        };
        if explore {
            Some(uniform_from(legal, &mut self.rng))
        } else {
            greedy_choice(state, agent, layout)
        }
    }
}

fn uniform_from(set: ActionSet, rng: &mut impl Rng) -> MacroAction {
    let k = rng.random_range(0..set.len());
    set.iter().nth(k).expect("index below set size")
}
