//! Experiment orchestration: configuration, seeded episodes with a planning
//! agent and a scripted partner, invalid-action accounting and reporting.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kitchen::{Command, KitchenLayout, KitchenState, MacroAction, DELIVERY_REWARD};
use crate::matrix::CausalActionMatrix;
use crate::oracle::{
    edge_agreement, generate_synthetic, permissible, recover_structure, ridge_fit, structural_metrics,
    threshold_gates, FeatureMap, StructuralMetrics, SyntheticSpec,
};
use crate::planner::{canonicalize, PlanDecision, PlanPath, Planner, PlannerConfig, ProposalSet};
use crate::policy::{Policy, PolicySpec};
use crate::proposer::{
    EndpointConfig, HallucinationProfile, ProposeContext, Proposer, RemoteProposer, ReplayProposer, ScriptedProposer,
};
use crate::sca::{train, train_on_batches, ScaCheckpoint, TrainConfig};
use crate::schema::FeatureSchema;
use crate::seed::derive_seed;
use crate::trajectory::{collect_buffer, Buffer, CollectConfig};

/// A bundled layout name (`cr`, `aa`, ...) or a path to a layout JSON file.
pub fn resolve_layout(spec: &str) -> Result<KitchenLayout> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") || path.exists() {
        KitchenLayout::load(path)
    } else {
        KitchenLayout::bundled(spec)
    }
}

/// Schema from a path, or the standard one for the layout.
pub fn resolve_schema(path: Option<&Path>, layout: &KitchenLayout) -> Result<FeatureSchema> {
    match path {
        Some(p) => FeatureSchema::load(p),
        None => FeatureSchema::for_layout(layout),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposerConfig {
    Scripted(HallucinationProfile),
    Remote(Box<EndpointConfig>),
    /// Replays the proposal sets stored in an episode log.
    Replay {
        log: PathBuf,
    },
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig::Scripted(HallucinationProfile::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub layout: String,
    pub schema: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub proposer: ProposerConfig,
    pub partner: PolicySpec,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub output_dir: PathBuf,
    pub controlled_seat: usize,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            layout: "cr".into(),
            schema: None,
            matrix: None,
            proposer: ProposerConfig::default(),
            partner: PolicySpec::default(),
            gamma: 0.5,
            seeds: vec![0, 1, 2],
            horizon: 400,
            output_dir: PathBuf::from("runs/eval"),
            controlled_seat: 1,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.gamma < 1.0 && self.matrix.is_none() {
            return Err(Error::InvalidConfig("a matrix is required when gamma < 1".into()));
        }
        if self.controlled_seat > 1 {
            return Err(Error::InvalidConfig(format!("controlled_seat {} out of range", self.controlled_seat)));
        }
        self.partner.validate()
    }
}

/// Artifacts shared by every episode of a run.
#[derive(Debug, Clone)]
pub struct Resources {
    pub layout: KitchenLayout,
    pub schema: FeatureSchema,
    pub matrix: Option<CausalActionMatrix>,
}

impl Resources {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let layout = resolve_layout(&config.layout)?;
        let schema = resolve_schema(config.schema.as_deref(), &layout)?;
        if schema.num_pots() != layout.num_pots {
            return Err(Error::DimensionMismatch {
                expected: layout.num_pots,
                actual: schema.num_pots(),
                context: "schema pots vs layout",
            });
        }
        let matrix = match &config.matrix {
            Some(p) => Some(CausalActionMatrix::import(p, &schema)?),
            None => None,
        };
        Ok(Resources { layout, schema, matrix })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub total_reward: i64,
    pub deliveries: u32,
    pub invalid_proposals: usize,
    pub invalid_executions: usize,
    pub backup_invocations: usize,
    pub steps: usize,
    pub log: Option<String>,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub proposals: ProposalSet,
    pub decision: Option<PlanDecision>,
    pub command: Command,
    pub partner_command: Command,
    pub executed: bool,
    pub invalid: bool,
    pub reward: i64,
}

/// Reports plus log lines; the log is written by the caller.
#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub report: EpisodeReport,
    pub steps: Vec<StepLog>,
}

fn make_proposer(config: &ExperimentConfig, seed: u64) -> Result<Box<dyn Proposer>> {
    Ok(match &config.proposer {
        ProposerConfig::Scripted(profile) => Box::new(ScriptedProposer::new(*profile, derive_seed(seed, 0, 10))?),
        ProposerConfig::Remote(endpoint) => Box::new(RemoteProposer::new((**endpoint).clone())?),
        ProposerConfig::Replay { log } => {
            let sets = read_log(log)?.into_iter().map(|s| s.proposals).collect();
            Box::new(ReplayProposer::new(sets))
        }
    })
}

pub fn run_episode(config: &ExperimentConfig, resources: &Resources, seed: u64) -> Result<EpisodeOutput> {
    let proposer = make_proposer(config, seed)?;
    run_episode_with(config, resources, seed, proposer)
}

/// Like [`run_episode`] with a caller-supplied proposer.
pub fn run_episode_with(
    config: &ExperimentConfig,
    resources: &Resources,
    seed: u64,
    mut proposer: Box<dyn Proposer>,
) -> Result<EpisodeOutput> {
    config.validate()?;
    let Resources { layout, schema, matrix } = resources;
    if config.gamma < 1.0 && matrix.is_none() {
        return Err(Error::InvalidConfig("a matrix is required when gamma < 1".into()));
    }
    let seat = config.controlled_seat;
    let partner_seat = 1 - seat;
    let mut planner = Planner::new(PlannerConfig::new(config.gamma, derive_seed(seed, 0, 11)))?;
    let mut partner = Policy::new(config.partner, derive_seed(seed, 0, 12))?;

    let mut state = KitchenState::reset(layout)?;
    let mut prev: Option<MacroAction> = None;
    let mut steps = Vec::with_capacity(config.horizon);
    let mut report = EpisodeReport {
        seed,
        total_reward: 0,
        deliveries: 0,
        invalid_proposals: 0,
        invalid_executions: 0,
        backup_invocations: 0,
        steps: 0,
        log: None,
    };

    for t in 0..config.horizon {
        let ctx = ProposeContext {
            state: &state,
            agent: seat,
            layout,
            prev_action: prev,
            t,
        };
        let set = proposer.propose(&ctx)?;
        let state_vec = schema.encode_state(&state, seat)?;
        let prev_vec = prev.map_or_else(|| schema.no_previous_action(), |a| schema.encode_action(a));
        let decision = match matrix {
            Some(m) => Some(planner.plan(&set, &state_vec, &prev_vec, m)?),
            None => planner.plan_unassisted(&set)?,
        };
        let command = match &decision {
            Some(d) => Command::Act(d.chosen),
            // Without a matrix there is nothing to fall back on: the raw
            // text is attempted as is.
            None => set
                .proposals
                .first()
                .map_or(Command::Idle, |p| Command::Unrecognized(p.raw_text.clone())),
        };
        if decision.as_ref().is_some_and(|d| d.path == PlanPath::Backup) {
            report.backup_invocations += 1;
        }
        report.invalid_proposals += set.invalid_count();

        let partner_command = partner.act(&state, partner_seat, layout).map_or(Command::Idle, Command::Act);
        let mut commands = [Command::Idle, Command::Idle];
        commands[seat] = command.clone();
        commands[partner_seat] = partner_command.clone();
        let outcome = state.step(&commands, layout);
        if outcome.invalid[seat] {
            report.invalid_executions += 1;
        }
        if outcome.executed[seat] {
            if let Command::Act(a) = command {
                prev = Some(a);
            }
        }
        report.total_reward += outcome.reward;
        steps.push(StepLog {
            t,
            proposals: set,
            decision,
            command,
            partner_command,
            executed: outcome.executed[seat],
            invalid: outcome.invalid[seat],
            reward: outcome.reward,
        });
        state = outcome.next_state;
    }
    report.deliveries = state.deliveries;
    report.steps = config.horizon;
    debug_assert_eq!(report.total_reward, DELIVERY_REWARD * i64::from(report.deliveries));
    Ok(EpisodeOutput { report, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub reports: Vec<EpisodeReport>,
    pub reward: Stat,
    pub deliveries: Stat,
    pub invalid_proposals: Stat,
    pub invalid_executions: Stat,
    pub backup_invocations: Stat,
    pub config: ExperimentConfig,
    pub version: String,
    /// Set when some episodes failed and only part of the run is reported.
    pub partial: bool,
}

impl RunSummary {
    pub fn from_reports(reports: Vec<EpisodeReport>, config: &ExperimentConfig, partial: bool) -> Self {
        let col = |f: fn(&EpisodeReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        RunSummary {
            reward: col(|r| r.total_reward as f64),
            deliveries: col(|r| f64::from(r.deliveries)),
            invalid_proposals: col(|r| r.invalid_proposals as f64),
            invalid_executions: col(|r| r.invalid_executions as f64),
            backup_invocations: col(|r| r.backup_invocations as f64),
            version: version_fingerprint(config),
            config: config.clone(),
            reports,
            partial,
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:>8} {:>8} {:>10} {:>14} {:>14} {:>8}",
            "seed", "reward", "deliveries", "inv_proposals", "inv_executions", "backups"
        )
        .expect("string write");
        for r in &self.reports {
            writeln!(
                out,
                "{:>8} {:>8} {:>10} {:>14} {:>14} {:>8}",
                r.seed, r.total_reward, r.deliveries, r.invalid_proposals, r.invalid_executions, r.backup_invocations
            )
            .expect("string write");
        }
        let ms = |s: &Stat| format!("{:.2}±{:.2}", s.mean, s.std);
        writeln!(
            out,
            "{:>8} {:>8} {:>10} {:>14} {:>14} {:>8}",
            "mean",
            ms(&self.reward),
            ms(&self.deliveries),
            ms(&self.invalid_proposals),
            ms(&self.invalid_executions),
            ms(&self.backup_invocations)
        )
        .expect("string write");
        out
    }
}

/// Crate version plus a digest of the configuration.
pub fn version_fingerprint(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    format!("{}+{}", env!("CARGO_PKG_VERSION"), &hex::encode(digest)[..16])
}

pub fn log_file_name(seed: u64) -> String {
    format!("seed_{seed}.jsonl")
}

fn write_log(path: &Path, steps: &[StepLog]) -> Result<()> {
    let mut text = String::new();
    for s in steps {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<StepLog>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidCounts {
    pub invalid_proposals: usize,
    pub invalid_executions: usize,
}

/// Recount both invalid-action kinds from an episode log, canonicalizing
/// each logged proposal text afresh.
pub fn count_invalid(path: impl AsRef<Path>) -> Result<InvalidCounts> {
    let steps = read_log(path)?;
    Ok(InvalidCounts {
        invalid_proposals: steps
            .iter()
            .flat_map(|s| &s.proposals.proposals)
            .filter(|p| canonicalize(&p.raw_text).is_none())
            .count(),
        invalid_executions: steps.iter().filter(|s| s.invalid).count(),
    })
}

/// Run every seed, writing per-seed logs, `summary.json`, `table.txt` and
/// `config.json` into the output directory.
pub fn evaluate(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let resources = Resources::load(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)
        .map_err(|e| Error::io(dir.join("config.json"), e))?;

    let workers = config.workers.max(1);
    let mut results: Vec<Option<Result<EpisodeReport>>> = (0..config.seeds.len()).map(|_| None).collect();
    for chunk_start in (0..config.seeds.len()).step_by(workers) {
        let chunk = &config.seeds[chunk_start..(chunk_start + workers).min(config.seeds.len())];
        let outs: Vec<Result<EpisodeReport>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let resources = &resources;
                    scope.spawn(move || -> Result<EpisodeReport> {
                        let out = run_episode(config, resources, seed)?;
                        let path = dir.join(log_file_name(seed));
                        write_log(&path, &out.steps)?;
                        let mut report = out.report;
                        report.log = Some(log_file_name(seed));
                        Ok(report)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::InvalidConfig("episode worker panicked".into())))
                })
                .collect()
        });
        for (k, r) in outs.into_iter().enumerate() {
            results[chunk_start + k] = Some(r);
        }
    }

    let mut reports = Vec::new();
    let mut failure = None;
    for (seed, r) in config.seeds.iter().zip(results) {
        match r.expect("every seed ran") {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failure.get_or_insert((*seed, e));
            }
        }
    }
    let summary = RunSummary::from_reports(reports, config, failure.is_some());
    write_summary(dir, &summary)?;
    match failure {
        Some((seed, e)) => Err(Error::EpisodeFailed {
            episode: seed as usize,
            reason: e.to_string(),
        }),
        None => Ok(summary),
    }
}

fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let path = dir.join("summary.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(serde_json::to_string_pretty(summary)?.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    let table = dir.join("table.txt");
    fs::write(&table, summary.table()).map_err(|e| Error::io(&table, e))
}

/// Build a trajectory buffer and write it to `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectJob {
    pub layout: String,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(flatten)]
    pub collect: CollectConfig,
    pub out: PathBuf,
}

pub fn run_collect(job: &CollectJob) -> Result<Buffer> {
    let layout = resolve_layout(&job.layout)?;
    let schema = resolve_schema(job.schema.as_deref(), &layout)?;
    let buffer = collect_buffer(&layout, &schema, &job.collect)?;
    ensure_parent(&job.out)?;
    buffer.save(&job.out)?;
    Ok(buffer)
}

/// Fit the gated model on a buffer and write a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub buffer: PathBuf,
    pub layout: String,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    pub out: PathBuf,
}

pub fn run_train(job: &TrainJob) -> Result<ScaCheckpoint> {
    let layout = resolve_layout(&job.layout)?;
    let schema = resolve_schema(job.schema.as_deref(), &layout)?;
    let buffer = Buffer::load(&job.buffer)?;
    buffer.validate_against(&schema)?;
    let trained = train(&buffer, &job.train)?;
    let ck = ScaCheckpoint::from_trained(&trained, &schema)?;
    ensure_parent(&job.out)?;
    ck.save(&job.out)?;
    Ok(ck)
}

/// Turn a checkpoint into a matrix CSV and its triple export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJob {
    pub checkpoint: PathBuf,
    pub layout: String,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub triples: Option<PathBuf>,
    /// Applied to the triple export only.
    #[serde(default)]
    pub visualization_threshold: Option<f64>,
}

pub fn run_matrix(job: &MatrixJob) -> Result<CausalActionMatrix> {
    let layout = resolve_layout(&job.layout)?;
    let schema = resolve_schema(job.schema.as_deref(), &layout)?;
    let ck = ScaCheckpoint::load(&job.checkpoint)?;
    ck.check_schema(&schema)?;
    let m = CausalActionMatrix::from_checkpoint(&ck, &schema, &job.checkpoint.display().to_string())?;
    ensure_parent(&job.out)?;
    m.export(&job.out)?;
    if let Some(t) = &job.triples {
        let shown = job.visualization_threshold.map_or_else(|| m.clone(), |th| m.thresholded(th));
        shown.export_triples(t)?;
    }
    Ok(m)
}

/// Synthetic recovery study comparing gate and ridge graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleJob {
    pub state_dim: usize,
    pub action_dim: usize,
    pub density: f64,
    pub samples: usize,
    pub noise_scale: f64,
    pub seeds: Vec<u64>,
    pub ridge_lambda: f64,
    pub ridge_threshold: f64,
    pub gate_threshold: f64,
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
}

impl Default for OracleJob {
    fn default() -> Self {
        OracleJob {
            state_dim: 6,
            action_dim: 4,
            density: 0.3,
            samples: 5000,
            noise_scale: 0.3,
            seeds: vec![0, 1, 2, 3, 4],
            ridge_lambda: 1.0,
            ridge_threshold: 0.1,
            gate_threshold: 0.5,
            train: synthetic_train_config(),
            out: None,
        }
    }
}

/// Training settings under which gates separate on the synthetic models.
pub fn synthetic_train_config() -> TrainConfig {
    TrainConfig {
        hidden: vec![32, 32],
        lambda_reg: 1e-3,
        weight_decay: 1.0,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSeedResult {
    pub seed: u64,
    pub gates: StructuralMetrics,
    pub ridge: StructuralMetrics,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub job: OracleJob,
    pub results: Vec<OracleSeedResult>,
}

pub fn run_oracle(job: &OracleJob) -> Result<OracleReport> {
    let mut results = Vec::with_capacity(job.seeds.len());
    for &seed in &job.seeds {
        let spec = SyntheticSpec {
            noise_scale: job.noise_scale,
            ..SyntheticSpec::new(job.state_dim, job.action_dim, job.density, job.samples, seed)
        };
        let (data, scm) = generate_synthetic(&spec)?;
        let cfg = TrainConfig { seed, ..job.train.clone() };
        let trained = train_on_batches(&data, &cfg)?;
        let gate_graph = threshold_gates(&trained.model.gates(), job.gate_threshold);
        let fit = ridge_fit(&data, FeatureMap::default(), job.ridge_lambda)?;
        let ridge_graph = recover_structure(&fit, job.ridge_threshold)?;
        let mask = permissible(job.state_dim, job.action_dim);
        let res = OracleSeedResult {
            seed,
            gates: structural_metrics(&gate_graph, &scm.true_edges)?,
            ridge: structural_metrics(&ridge_graph, &scm.true_edges)?,
            agreement: edge_agreement(&gate_graph, &ridge_graph, &mask)?,
        };
        log::info!(
            "seed {seed}: gate f1 {:.3}, ridge f1 {:.3}, agreement {:.3}",
            res.gates.f1,
            res.ridge.f1,
            res.agreement
        );
        results.push(res);
    }
    let report = OracleReport {
        job: job.clone(),
        results,
    };
    if let Some(out) = &job.out {
        ensure_parent(out)?;
        fs::write(out, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}
