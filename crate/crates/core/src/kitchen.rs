//! Two-agent macro-action kitchen.
//!
//! Agents never walk: every timestep each agent issues one high-level
//! command (pick up an onion, fill a dish, ...). Agent 0's command is
//! resolved before agent 1's, then pot timers advance. Dispensers never run
//! dry; the shared counter is the only finite item buffer, which is how
//! forced-coordination layouts pass items between agents.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reward granted per delivered soup.
pub const DELIVERY_REWARD: i64 = 20;

/// Default number of timesteps a full pot needs before the soup is ready.
pub const DEFAULT_COOK_TIME: u32 = 20;

/// Onions required to start cooking.
pub const POT_CAPACITY: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroAction {
    PickupOnion,
    PutOnionInPot,
    PickupDish,
    FillDishWithSoup,
    DeliverSoup,
    PlaceOnionOnCounter,
    PlaceDishOnCounter,
}

impl MacroAction {
    pub const COUNT: usize = 7;

    /// Fixed ordering shared with the action rows of every feature schema.
    pub const ALL: [MacroAction; 7] = [
        MacroAction::PickupOnion,
        MacroAction::PutOnionInPot,
        MacroAction::PickupDish,
        MacroAction::FillDishWithSoup,
        MacroAction::DeliverSoup,
        MacroAction::PlaceOnionOnCounter,
        MacroAction::PlaceDishOnCounter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MacroAction::PickupOnion => "pickup_onion",
            MacroAction::PutOnionInPot => "put_onion_in_pot",
            MacroAction::PickupDish => "pickup_dish",
            MacroAction::FillDishWithSoup => "fill_dish_with_soup",
            MacroAction::DeliverSoup => "deliver_soup",
            MacroAction::PlaceOnionOnCounter => "place_onion_on_counter",
            MacroAction::PlaceDishOnCounter => "place_dish_on_counter",
        }
    }
}

impl fmt::Display for MacroAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MacroAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAction(s.to_string()))
    }
}

/// Compact set of macro actions, iterated in schema order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const FULL: ActionSet = ActionSet(0b111_1111);

    pub fn insert(&mut self, action: MacroAction) {
        self.0 |= 1 << action.index();
    }

    pub fn remove(&mut self, action: MacroAction) {
        self.0 &= !(1 << action.index());
    }

    pub fn contains(self, action: MacroAction) -> bool {
        self.0 & (1 << action.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: ActionSet) -> ActionSet {
        ActionSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: ActionSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = MacroAction> {
        MacroAction::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<MacroAction> for ActionSet {
    fn from_iter<I: IntoIterator<Item = MacroAction>>(iter: I) -> Self {
        let mut set = ActionSet::EMPTY;
        for a in iter {
            set.insert(a);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    Dispenser,
    Counter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KitchenLayout {
    pub name: String,
    pub num_pots: usize,
    #[serde(default = "default_cook_time")]
    pub cook_time: u32,
    /// Per-agent permitted actions.
    pub capabilities: [Vec<MacroAction>; 2],
    pub onion_source: [ItemSource; 2],
    pub dish_source: [ItemSource; 2],
}

fn default_cook_time() -> u32 {
    DEFAULT_COOK_TIME
}

impl KitchenLayout {
    pub fn from_json(text: &str) -> Result<Self> {
        let layout: KitchenLayout = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// One of the bundled layouts: `cr`, `aa`, `cor`, `fc`, `cc`.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = match name.to_ascii_lowercase().as_str() {
            "cr" | "cramped_room" => include_str!("../assets/layouts/cr.json"),
            "aa" | "asymmetric_advantages" => include_str!("../assets/layouts/aa.json"),
            "cor" | "coordination_ring" => include_str!("../assets/layouts/cor.json"),
            "fc" | "forced_coordination" => include_str!("../assets/layouts/fc.json"),
            "cc" | "counter_circuit" => include_str!("../assets/layouts/cc.json"),
            other => {
                return Err(Error::InvalidLayout {
                    name: other.to_string(),
                    reason: "no bundled layout with this name".into(),
                })
            }
        };
        Self::from_json(text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidLayout {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.num_pots == 0 {
            return Err(bad("num_pots must be positive"));
        }
        if self.num_pots > 2 {
            return Err(bad("at most two pots are supported"));
        }
        if self.cook_time == 0 {
            return Err(bad("cook_time must be positive"));
        }
        for (agent, caps) in self.capabilities.iter().enumerate() {
            if caps.is_empty() {
                return Err(bad(&format!("agent {agent} has an empty capability mask")));
            }
        }
        Ok(())
    }

    pub fn capability(&self, agent: usize) -> ActionSet {
        self.capabilities[agent].iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Empty,
    Onion,
    Dish,
    SoupDish,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pot {
    pub onions: u8,
    pub cooking_remaining: Option<u32>,
    pub finished: bool,
}

impl Pot {
    pub fn is_open(&self) -> bool {
        self.onions < POT_CAPACITY && self.cooking_remaining.is_none() && !self.finished
    }

    pub fn is_cooking(&self) -> bool {
        self.cooking_remaining.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KitchenState {
    pub hands: [Hand; 2],
    pub pots: Vec<Pot>,
    pub counter_onions: u32,
    pub counter_dishes: u32,
    pub deliveries: u32,
    pub t: u32,
}

impl KitchenState {
    pub fn reset(layout: &KitchenLayout) -> Result<Self> {
        layout.validate()?;
        Ok(KitchenState {
            hands: [Hand::Empty; 2],
            pots: vec![Pot::default(); layout.num_pots],
            counter_onions: 0,
            counter_dishes: 0,
            deliveries: 0,
            t: 0,
        })
    }

    fn fullest_open_pot(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, pot) in self.pots.iter().enumerate() {
            if pot.is_open() && best.is_none_or(|b| pot.onions > self.pots[b].onions) {
                best = Some(i);
            }
        }
        best
    }

    fn first_finished_pot(&self) -> Option<usize> {
        self.pots.iter().position(|p| p.finished)
    }

    fn source_available(&self, source: ItemSource, counter_stock: u32) -> bool {
        match source {
            ItemSource::Dispenser => true,
            ItemSource::Counter => counter_stock > 0,
        }
    }

    /// Preconditions of `action` for `agent`, ignoring capability masks.
    pub fn precondition_holds(&self, action: MacroAction, agent: usize, layout: &KitchenLayout) -> bool {
        let hand = self.hands[agent];
        match action {
            MacroAction::PickupOnion => {
                hand == Hand::Empty
                    && self.source_available(layout.onion_source[agent], self.counter_onions)
            }
            MacroAction::PutOnionInPot => hand == Hand::Onion && self.fullest_open_pot().is_some(),
            MacroAction::PickupDish => {
                hand == Hand::Empty
                    && self.source_available(layout.dish_source[agent], self.counter_dishes)
            }
            MacroAction::FillDishWithSoup => hand == Hand::Dish && self.first_finished_pot().is_some(),
            MacroAction::DeliverSoup => hand == Hand::SoupDish,
            MacroAction::PlaceOnionOnCounter => hand == Hand::Onion,
            MacroAction::PlaceDishOnCounter => hand == Hand::Dish,
        }
    }

    /// Capability-permitted actions whose preconditions hold.
    pub fn legal_actions(&self, agent: usize, layout: &KitchenLayout) -> ActionSet {
        layout
            .capability(agent)
            .iter()
            .filter(|a| self.precondition_holds(*a, agent, layout))
            .collect()
    }

    fn apply(&mut self, action: MacroAction, agent: usize, layout: &KitchenLayout) {
        match action {
            MacroAction::PickupOnion => {
                if layout.onion_source[agent] == ItemSource::Counter {
                    self.counter_onions -= 1;
                }
                self.hands[agent] = Hand::Onion;
            }
            MacroAction::PutOnionInPot => {
                let i = self.fullest_open_pot().expect("precondition checked");
                let pot = &mut self.pots[i];
                pot.onions += 1;
                if pot.onions == POT_CAPACITY {
                    pot.cooking_remaining = Some(layout.cook_time);
                }
                self.hands[agent] = Hand::Empty;
            }
            MacroAction::PickupDish => {
                if layout.dish_source[agent] == ItemSource::Counter {
                    self.counter_dishes -= 1;
                }
                self.hands[agent] = Hand::Dish;
            }
            MacroAction::FillDishWithSoup => {
                let i = self.first_finished_pot().expect("precondition checked");
                self.pots[i] = Pot::default();
                self.hands[agent] = Hand::SoupDish;
            }
            MacroAction::DeliverSoup => {
                self.deliveries += 1;
                self.hands[agent] = Hand::Empty;
            }
            MacroAction::PlaceOnionOnCounter => {
                self.counter_onions += 1;
                self.hands[agent] = Hand::Empty;
            }
            MacroAction::PlaceDishOnCounter => {
                self.counter_dishes += 1;
                self.hands[agent] = Hand::Empty;
            }
        }
    }

    pub fn step(&self, commands: &[Command; 2], layout: &KitchenLayout) -> StepOutcome {
        let mut next = self.clone();
        let was_cooking: Vec<bool> = next.pots.iter().map(Pot::is_cooking).collect();
        let mut executed = [false; 2];
        let mut invalid = [false; 2];

        for agent in 0..2 {
            match &commands[agent] {
                Command::Idle => {}
                Command::Unrecognized(_) => invalid[agent] = true,
                Command::Act(action) => {
                    if next.legal_actions(agent, layout).contains(*action) {
                        next.apply(*action, agent, layout);
                        executed[agent] = true;
                    } else {
                        invalid[agent] = true;
                    }
                }
            }
        }

        for (pot, cooking) in next.pots.iter_mut().zip(was_cooking) {
            if !cooking {
                continue;
            }
            if let Some(remaining) = pot.cooking_remaining.as_mut() {
                *remaining -= 1;
                if *remaining == 0 {
                    pot.cooking_remaining = None;
                    pot.finished = true;
                }
            }
        }

        next.t += 1;
        let reward = DELIVERY_REWARD * i64::from(next.deliveries - self.deliveries);
        StepOutcome {
            next_state: next,
            reward,
            executed,
            invalid,
        }
    }
}

/// What an agent attempts during one timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Act(MacroAction),
    /// Free text that names no macro action. Always an invalid move.
    Unrecognized(String),
    /// Do nothing; neither executed nor invalid.
    Idle,
}

impl From<MacroAction> for Command {
    fn from(a: MacroAction) -> Self {
        Command::Act(a)
    }
}

impl Command {
    /// Parse an action name; unknown names become [`Command::Unrecognized`].
    pub fn parse(name: &str) -> Command {
        name.parse::<MacroAction>()
            .map(Command::Act)
            .unwrap_or_else(|_| Command::Unrecognized(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: KitchenState,
    pub reward: i64,
    pub executed: [bool; 2],
    pub invalid: [bool; 2],
}
