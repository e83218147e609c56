//! Sources of candidate actions: a scripted proposer that imitates an
//! unreliable language model, a replay of recorded proposals, and an HTTP
//! chat-completion client.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kitchen::{Hand, KitchenLayout, KitchenState, MacroAction};
use crate::planner::{canonicalize, sample_action, Proposal, ProposalSet};
use crate::policy::greedy_distribution;

/// Everything a proposer may look at for one decision.
#[derive(Debug, Clone, Copy)]
pub struct ProposeContext<'a> {
    pub state: &'a KitchenState,
    pub agent: usize,
    pub layout: &'a KitchenLayout,
    pub prev_action: Option<MacroAction>,
    pub t: usize,
}

pub trait Proposer {
    fn propose(&mut self, ctx: &ProposeContext<'_>) -> Result<ProposalSet>;
    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HallucinationProfile {
    pub invalid_rate: f64,
    pub empty_rate: f64,
    pub k: usize,
    /// Weight of a flat Dirichlet draw mixed into the greedy distribution.
    pub noise: f64,
    /// Exploration rate of the underlying greedy distribution.
    pub epsilon: f64,
}

impl Default for HallucinationProfile {
    fn default() -> Self {
        HallucinationProfile {
            invalid_rate: 0.3,
            empty_rate: 0.05,
            k: 5,
            noise: 0.3,
            epsilon: 0.1,
        }
    }
}

impl HallucinationProfile {
    pub fn perfect() -> Self {
        HallucinationProfile {
            invalid_rate: 0.0,
            empty_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("invalid_rate", self.invalid_rate),
            ("empty_rate", self.empty_rate),
            ("noise", self.noise),
            ("epsilon", self.epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Strings that look like actions but are not in the instruction set.
pub const HALLUCINATIONS: [&str; 8] = [
    "chop_tomato()",
    "wash_dishes",
    "pickup_tomato()",
    "move_left",
    "serve_customer()",
    "open_fridge",
    "stir_pot()",
    "wait_for_partner",
];

fn surface_form(action: MacroAction, rng: &mut impl Rng) -> String {
    let name = action.name();
    match rng.random_range(0..5) {
        0 => name.to_string(),
        1 => format!("{name}()"),
        2 => format!("{name}()."),
        3 => name
            .split('_')
            .map(|w| {
                let mut c = w.chars();
                c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
            })
            .collect::<Vec<_>>()
            .join(" "),
        _ => format!("Action: {}", name.to_uppercase()),
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedProposer {
    profile: HallucinationProfile,
    rng: ChaCha8Rng,
}

impl ScriptedProposer {
    pub fn new(profile: HallucinationProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        Ok(ScriptedProposer {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn profile(&self) -> &HallucinationProfile {
        &self.profile
    }
}

impl Proposer for ScriptedProposer {
    fn propose(&mut self, ctx: &ProposeContext<'_>) -> Result<ProposalSet> {
        let prof = self.profile;
        if self.rng.random::<f64>() < prof.empty_rate {
            return Ok(ProposalSet::empty());
        }
        let mut base = greedy_distribution(ctx.state, ctx.agent, ctx.layout, prof.epsilon);
        let mass: f64 = base.iter().sum();
        if mass <= 0.0 {
            base = [1.0 / MacroAction::COUNT as f64; MacroAction::COUNT];
        }
        let flat: Vec<f64> = (0..MacroAction::COUNT).map(|_| Exp1.sample(&mut self.rng)).collect();
        let flat_sum: f64 = flat.iter().sum();
        let mut probs: Vec<f64> = base
            .iter()
            .zip(&flat)
            .map(|(b, f)| (1.0 - prof.noise) * b + prof.noise * f / flat_sum)
            .collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);

        let mut drawn = Vec::with_capacity(prof.k);
        for _ in 0..prof.k {
            let idx = sample_action(&probs, &mut self.rng)?;
            let action = MacroAction::from_index(idx).expect("index below action count");
            let text = if self.rng.random::<f64>() < prof.invalid_rate {
                HALLUCINATIONS[self.rng.random_range(0..HALLUCINATIONS.len())].to_string()
            } else {
                surface_form(action, &mut self.rng)
            };
            drawn.push((text, probs[idx]));
        }
        let z: f64 = drawn.iter().map(|(_, p)| p).sum();
        Ok(ProposalSet::new(
            drawn.into_iter().map(|(text, p)| Proposal::new(text, p / z)).collect(),
        ))
    }

    fn name(&self) -> String {
        let p = &self.profile;
        format!(
            "scripted(invalid_rate={}, empty_rate={}, k={}, noise={})",
            p.invalid_rate, p.empty_rate, p.k, p.noise
        )
    }
}

/// The recorded set for timestep `t`.
pub fn replay_propose(log: &[ProposalSet], t: usize) -> Result<ProposalSet> {
    log.get(t).cloned().ok_or(Error::MissingTimestep(t))
}

#[derive(Debug, Clone)]
pub struct ReplayProposer {
    log: Vec<ProposalSet>,
}

impl ReplayProposer {
    pub fn new(log: Vec<ProposalSet>) -> Self {
        ReplayProposer { log }
    }
}

impl Proposer for ReplayProposer {
    fn propose(&mut self, ctx: &ProposeContext<'_>) -> Result<ProposalSet> {
        replay_propose(&self.log, ctx.t)
    }

    fn name(&self) -> String {
        format!("replay({} steps)", self.log.len())
    }
}

fn hand_text(hand: Hand) -> &'static str {
    match hand {
        Hand::Empty => "nothing",
        Hand::Onion => "one onion",
        Hand::Dish => "an empty dish",
        Hand::SoupDish => "a dish with soup",
    }
}

/// Plain-language description of the scene from `agent`'s point of view.
pub fn observation_text(ctx: &ProposeContext<'_>) -> String {
    let s = ctx.state;
    let me = ctx.agent;
    let other = 1 - me;
    let mut out = String::new();
    writeln!(out, "Scene {}: You hold {}. Your partner holds {}.", ctx.t, hand_text(s.hands[me]), hand_text(s.hands[other]))
        .expect("string write");
    out.push_str("Kitchen states:");
    for (k, pot) in s.pots.iter().enumerate() {
        let status = if pot.finished {
            "soup is ready".to_string()
        } else if let Some(left) = pot.cooking_remaining {
            format!("cooking, {left} steps left")
        } else {
            format!("{} onion(s), not cooking", pot.onions)
        };
        write!(out, " pot {k}: {status};").expect("string write");
    }
    writeln!(out, " counter: {} onion(s), {} dish(es).", s.counter_onions, s.counter_dishes).expect("string write");
    writeln!(out, "Soups delivered so far: {}.", s.deliveries).expect("string write");
    match ctx.prev_action {
        Some(a) => writeln!(out, "Your previous action: {a}.").expect("string write"),
        None => out.push_str("You have not acted yet.\n"),
    }
    let names: Vec<&str> = ctx.layout.capability(me).iter().map(MacroAction::name).collect();
    write!(out, "Available actions: {}.", names.join(", ")).expect("string write");
    out
}

pub const ANALYSIS_TEMPLATE: &str = include_str!("../assets/prompts/analysis.txt");
pub const PLAN_TEMPLATE: &str = include_str!("../assets/prompts/plan.txt");

/// Where to find the completion texts in a response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseFields {
    /// JSON pointer to the array of choices.
    pub choices: String,
    /// Pointer, relative to one choice, to its text.
    pub text: String,
    /// Pointer, relative to one choice, to a total log-likelihood.
    pub logprob: Option<String>,
}

impl Default for ResponseFields {
    fn default() -> Self {
        ResponseFields {
            choices: "/choices".into(),
            text: "/message/content".into(),
            logprob: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended. Plain HTTP only.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub credential_env: Option<String>,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub samples_per_step: usize,
    pub timeout_secs: f64,
    pub retries: usize,
    pub analysis_template: Option<PathBuf>,
    pub plan_template: Option<PathBuf>,
    pub response: ResponseFields,
    /// Extra top-level request fields merged into every body.
    pub extra: Value,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            credential_env: Some("CAUSALPLAN_API_KEY".into()),
            temperature: 1.0,
            max_new_tokens: 256,
            top_k: 50,
            top_p: 0.9,
            samples_per_step: 10,
            timeout_secs: 30.0,
            retries: 2,
            analysis_template: None,
            plan_template: None,
            response: ResponseFields::default(),
            extra: Value::Null,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_step == 0 {
            return Err(Error::InvalidConfig("samples_per_step must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::InvalidConfig("timeout_secs must be positive".into()));
        }
        if !(self.base_url.starts_with("http://")) {
            return Err(Error::InvalidConfig(format!("unsupported endpoint scheme in {}", self.base_url)));
        }
        Ok(())
    }

    /// Upper bound on the time one request may take, retries included.
    pub fn worst_case(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs * (self.retries + 1) as f64)
    }
}

/// Outcome of one remote decision, kept for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteExchange {
    pub analysis: Option<String>,
    pub completions: Vec<String>,
    pub set: ProposalSet,
}

pub struct RemoteProposer {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    analysis_template: String,
    plan_template: String,
    pub last: Option<RemoteExchange>,
}

impl RemoteProposer {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let token = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::InvalidConfig(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let read = |p: &Option<PathBuf>, fallback: &str| -> Result<String> {
            match p {
                Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e)),
                None => Ok(fallback.to_string()),
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(RemoteProposer {
            analysis_template: read(&config.analysis_template, ANALYSIS_TEMPLATE)?,
            plan_template: read(&config.plan_template, PLAN_TEMPLATE)?,
            config,
            client,
            token,
            last: None,
        })
    }

    fn body(&self, prompt: &str, n: usize) -> Value {
        let c = &self.config;
        let mut body = json!({
            "model": c.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": c.temperature,
            "max_tokens": c.max_new_tokens,
            "top_p": c.top_p,
            "top_k": c.top_k,
            "n": n,
        });
        if let (Value::Object(extra), Value::Object(map)) = (&c.extra, &mut body) {
            for (k, v) in extra {
                map.insert(k.clone(), v.clone());
            }
        }
        body
    }

    fn post_once(&self, body: &Value) -> Result<Value> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(tok) = &self.token {
            req = req.bearer_auth(tok);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("HTTP {status}")));
        }
        serde_json::from_str(&text).map_err(|e| Error::Transport(format!("bad response body: {e}")))
    }

    fn complete(&self, prompt: &str, n: usize) -> Result<Vec<(String, Option<f64>)>> {
        let body = self.body(prompt, n);
        let mut last_err = Error::Transport("no attempt made".into());
        for attempt in 0..=self.config.retries {
            match self.post_once(&body).and_then(|v| parse_choices(&v, &self.config.response)) {
                Ok(choices) => return Ok(choices),
                Err(e) => {
                    log::warn!("completion attempt {} failed: {e}", attempt + 1);
                    last_err = e;
                }
            }
        }
        Err(last_err)
    }

    fn exchange(&self, observation: &str) -> Result<RemoteExchange> {
        let prompt1 = self.analysis_template.replace("{observation}", observation);
        let analysis = self
            .complete(&prompt1, 1)?
            .into_iter()
            .next()
            .map(|(t, _)| t)
            .unwrap_or_default();
        let prompt2 = self
            .plan_template
            .replace("{observation}", observation)
            .replace("{analysis}", analysis.trim());
        let choices = self.complete(&prompt2, self.config.samples_per_step)?;
        let set = group_completions(&choices, self.config.samples_per_step);
        Ok(RemoteExchange {
            analysis: Some(analysis),
            completions: choices.into_iter().map(|(t, _)| t).collect(),
            set,
        })
    }
}

impl Proposer for RemoteProposer {
    fn propose(&mut self, ctx: &ProposeContext<'_>) -> Result<ProposalSet> {
        let observation = observation_text(ctx);
        match self.exchange(&observation) {
            Ok(ex) => {
                let set = ex.set.clone();
                self.last = Some(ex);
                Ok(set)
            }
            Err(e) => {
                log::warn!("remote proposer degraded to an empty set at t={}: {e}", ctx.t);
                self.last = Some(RemoteExchange {
                    analysis: None,
                    completions: Vec::new(),
                    set: ProposalSet::failed(),
                });
                Ok(ProposalSet::failed())
            }
        }
    }

    fn name(&self) -> String {
        format!("remote({})", self.config.model)
    }
}

/// Completion texts (and log-likelihoods, when reported) from a response.
pub fn parse_choices(body: &Value, fields: &ResponseFields) -> Result<Vec<(String, Option<f64>)>> {
    let choices = body
        .pointer(&fields.choices)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Transport(format!("response has no array at {}", fields.choices)))?;
    choices
        .iter()
        .map(|c| {
            let text = c
                .pointer(&fields.text)
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Transport(format!("choice has no text at {}", fields.text)))?;
            let lp = fields.logprob.as_ref().and_then(|p| c.pointer(p)).and_then(Value::as_f64);
            Ok((text.to_string(), lp))
        })
        .collect()
}

/// One proposal per distinct canonical action (or distinct unrecognized
/// text). `p_a` is the share of the `k` samples, or the normalized
/// likelihood mass when every choice reports one. Every raw text is kept in
/// `raw_completions` order-preserved.
pub fn group_completions(choices: &[(String, Option<f64>)], k: usize) -> ProposalSet {
    let use_lik = !choices.is_empty() && choices.iter().all(|(_, lp)| lp.is_some());
    let weight = |lp: Option<f64>| if use_lik { lp.map_or(0.0, f64::exp) } else { 1.0 / k as f64 };
    let mut groups: Vec<(Option<MacroAction>, String, f64)> = Vec::new();
    let mut seen_texts: Vec<String> = Vec::new();
    for (text, lp) in choices {
        let canon = canonicalize(text);
        let key_text = text.trim().to_string();
        let first_of_text = !seen_texts.contains(&key_text);
        if first_of_text {
            seen_texts.push(key_text.clone());
        }
        // Likelihoods describe a text, so repeated identical texts count once.
        let w = if use_lik && !first_of_text { 0.0 } else { weight(*lp) };
        let slot = groups.iter_mut().find(|(c, t, _)| match canon {
            Some(_) => *c == canon,
            None => c.is_none() && *t == key_text,
        });
        match slot {
            Some(g) => g.2 += w,
            None => groups.push((canon, key_text, w)),
        }
    }
    let total: f64 = groups.iter().map(|g| g.2).sum();
    if total > 1.0 {
        groups.iter_mut().for_each(|g| g.2 /= total);
    }
    let mut set = ProposalSet::new(
        groups
            .into_iter()
            .map(|(canonical, raw_text, p_a)| Proposal { raw_text, canonical, p_a })
            .collect(),
    );
    set.raw_completions = choices.iter().map(|(t, _)| t.clone()).collect();
    set
}
