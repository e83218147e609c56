//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Criterion 10 needs a live endpoint and only runs
//! when `CAUSALPLAN_LIVE_BASE_URL` is set.

use std::collections::BTreeMap;
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;
use std::time::{Duration, Instant};

use causalplan::harness::{
    evaluate, run_collect, run_matrix, run_oracle, run_train, synthetic_train_config, CollectJob, ExperimentConfig,
    MatrixJob, OracleJob, OracleReport, ProposerConfig, RunSummary, TrainJob,
};
use causalplan::kitchen::{Command, KitchenLayout, KitchenState, MacroAction, DELIVERY_REWARD};
use causalplan::matrix::CausalActionMatrix;
use causalplan::oracle::ridge_solve;
use causalplan::planner::{merge_redundant, reweighted_distribution, PlanPath, Planner, PlannerConfig, Proposal};
use causalplan::policy::{Policy, PolicySpec};
use causalplan::proposer::{EndpointConfig, HallucinationProfile, ProposeContext, Proposer, RemoteProposer};
use causalplan::sca::{reg_loss, ScaModel};
use causalplan::schema::{ActionVector, FeatureSchema, StateVector};
use causalplan::trajectory::CollectConfig;
use ndarray::{array, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let h = 1e-4;
    let (lambda, prior) = (0.3, 0.1);
    let mut worst: f64 = 0.0;
    for m in 0..20u64 {
        let mut r = rng(1000 + m);
        let s = r.random_range(2..=4);
        let a = r.random_range(2..=3);
        let hidden: Vec<usize> = (0..r.random_range(1..=2)).map(|_| r.random_range(3..=6)).collect();
        let mut model = ScaModel::new(s, a, &hidden, 0.0, m).unwrap();
        for v in model.logits_mut().iter_mut() {
            *v = r.sample(StandardNormal);
        }
        // Fresh biases are zero, which puts all-zero rows exactly on the ReLU kink.
        for i in 0..a {
            for v in model.net_mut(i).params_mut() {
                *v += 0.1 * r.sample::<f64, _>(StandardNormal);
            }
        }
        let x = random_binary(&mut r, 6, s + a);
        let y = random_binary(&mut r, 6, a);

        let (_, grads) = model.causal_loss_and_grads(x.view(), y.view(), true, true).unwrap();
        let grads = grads.unwrap();
        let loss = |m: &ScaModel| m.causal_loss(x.view(), y.view()).unwrap().value;

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in 0..a {
            for k in 0..model.nets()[i].param_count() {
                let base = model.nets()[i].params()[k];
                model.net_mut(i).params_mut()[k] = base + h;
                let up = loss(&model);
                model.net_mut(i).params_mut()[k] = base - h;
                let down = loss(&model);
                model.net_mut(i).params_mut()[k] = base;
                analytic.push(grads.nets[i][k]);
                numeric.push((up - down) / (2.0 * h));
            }
        }
        worst = worst.max(rel_error(&analytic, &numeric));

        let reg_grad = model.reg_grad(lambda, prior).unwrap();
        let (mut an_eta, mut num_eta, mut an_reg, mut num_reg) = (vec![], vec![], vec![], vec![]);
        for j in 0..s + a {
            for i in 0..a {
                let base = model.logits()[[j, i]];
                model.logits_mut()[[j, i]] = base + h;
                let (up, reg_up) = (loss(&model), model.reg_loss(lambda, prior).unwrap());
                model.logits_mut()[[j, i]] = base - h;
                let (down, reg_down) = (loss(&model), model.reg_loss(lambda, prior).unwrap());
                model.logits_mut()[[j, i]] = base;
                an_eta.push(grads.logits[[j, i]]);
                num_eta.push((up - down) / (2.0 * h));
                an_reg.push(reg_grad[[j, i]]);
                num_reg.push((reg_up - reg_down) / (2.0 * h));
            }
        }
        worst = worst.max(rel_error(&an_eta, &num_eta)).max(rel_error(&an_reg, &num_reg));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("worst relative error {worst:.2e} over 20 models, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut model = ScaModel::new(1, 1, &[3], 0.0, 0).unwrap();
    model.net_mut(0).params_mut().iter_mut().for_each(|p| *p = 0.0);
    let x = array![[1.0, 0.0]];
    let y = array![[1.0]];
    let causal = model.causal_loss(x.view(), y.view()).unwrap().value;
    let lambda = 0.7;
    let reg = reg_loss(&array![[1.0]], lambda, 0.5).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let (dc, dr) = ((causal - ln2).abs(), (reg - lambda * ln2).abs());
    outcome(
        dc <= 1e-10 && dr <= 1e-12,
        format!("causal |Δ| {dc:.1e}, reg |Δ| {dr:.1e}"),
    )
}

/// Minimize ||ΦW − Y||² + λ||W||² by plain gradient descent.
fn ridge_descent(phi: &Array2<f64>, y: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let d = phi.ncols();
    let mut gram = phi.t().dot(phi);
    for i in 0..d {
        gram[[i, i]] += lambda;
    }
    let rhs = phi.t().dot(y);
    let mut v = Array2::from_elem((d, 1), 1.0);
    let mut top = 0.0;
    for _ in 0..500 {
        let w = gram.dot(&v);
        top = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w / top;
    }
    let step = 1.0 / (1.05 * top);
    let mut w = Array2::zeros((d, y.ncols()));
    for _ in 0..200_000 {
        let grad = gram.dot(&w) - &rhs;
        let next = &w - &(grad * step);
        let change = (&next - &w).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        w = next;
        if change < 1e-15 {
            break;
        }
    }
    w
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let mut r = rng(3000 + k);
        let d = r.random_range(5..=50);
        let n = r.random_range(d + 10..=500);
        let phi = Array2::from_shape_fn((n, d), |_| r.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((n, 3), |_| r.sample::<f64, _>(StandardNormal));
        let lambda = r.random_range(0.5..5.0);
        let closed = ridge_solve(phi.view(), y.view(), lambda).unwrap();
        let iterative = ridge_descent(&phi, &y, lambda);
        worst = worst.max((&closed - &iterative).iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    let lambda = 0.25;
    let targets = array![[1.0, -2.0], [0.5, 3.0], [4.0, 0.0], [-1.5, 2.5]];
    let w = ridge_solve(Array2::eye(4).view(), targets.view(), lambda).unwrap();
    let identity_err = (&w - &(&targets / (1.0 + lambda))).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && identity_err <= 1e-12 && elapsed < Duration::from_secs(60),
        format!(
            "max|ΔW| {worst:.1e} over 10 systems, identity design {identity_err:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_job() -> OracleJob {
    OracleJob {
        state_dim: 6,
        action_dim: 4,
        density: 0.3,
        samples: 5000,
        seeds: vec![0, 1, 2, 3, 4],
        ..OracleJob::default()
    }
}

fn criterion_4() -> (Outcome, OracleReport) {
    let start = Instant::now();
    let report = run_oracle(&oracle_job()).unwrap();
    let elapsed = start.elapsed();
    let ok = report
        .results
        .iter()
        .all(|r| r.gates.f1 >= 0.9 && r.ridge.f1 >= 0.9 && r.agreement >= 0.9);
    let detail = report
        .results
        .iter()
        .map(|r| format!("s{}: gate {:.3} ridge {:.3} agree {:.3}", r.seed, r.gates.f1, r.ridge.f1, r.agreement))
        .collect::<Vec<_>>()
        .join("; ");
    (
        outcome(
            ok && elapsed < Duration::from_secs(600),
            format!("{detail}; {:.0}s", elapsed.as_secs_f64()),
        ),
        report,
    )
}

fn criterion_5() -> Outcome {
    let schema = FeatureSchema::cramped_room();
    let (p, a, s) = (schema.parent_dim(), schema.action_dim(), schema.state_dim());
    let fp = schema.fingerprint();
    let mut r = rng(5);
    let mut cycles = 0;
    let mut non_idempotent = 0;
    for _ in 0..1000 {
        let density = r.random_range(0.1..1.0);
        let gates = Array2::from_shape_fn((p, a), |_| {
            if r.random_bool(density) {
                // Coarse values so that ties occur.
                if r.random_bool(0.3) {
                    f64::from(r.random_range(1..=4u8)) / 4.0
                } else {
                    r.random_range(0.0..=1.0)
                }
            } else {
                0.0
            }
        });
        let m = CausalActionMatrix::build(&gates, &schema, &fp, "random").unwrap();
        cycles += m.two_cycles();
        let again = CausalActionMatrix::build(&m.entries().t().to_owned(), &schema, &fp, "random").unwrap();
        if again.entries() != m.entries() {
            non_idempotent += 1;
        }
    }
    let mut gates = Array2::zeros((p, a));
    gates[[s, 1]] = 0.6;
    gates[[s + 1, 0]] = 0.4;
    let m = CausalActionMatrix::build(&gates, &schema, &fp, "example").unwrap();
    let example = m.entries()[[1, s]] == 0.6 && m.entries()[[0, s + 1]] == 0.0;
    outcome(
        cycles == 0 && non_idempotent == 0 && example,
        format!("2-cycles {cycles}, non-idempotent {non_idempotent}, worked example {example}"),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    let mut argmax_fail = 0;
    for trial in 0..1000 {
        let distinct = trial % 2 == 0;
        let n = r.random_range(1..=7);
        let mut actions: Vec<MacroAction> = MacroAction::ALL.to_vec();
        actions.shuffle(&mut r);
        let picked: Vec<MacroAction> = if distinct {
            actions[..n].to_vec()
        } else {
            (0..n).map(|_| MacroAction::ALL[r.random_range(0..7)]).collect()
        };
        let proposals: Vec<Proposal> = picked.iter().map(|a| Proposal::new(a.name(), r.random_range(0.0..=1.0))).collect();
        let p_c: Vec<f64> = (0..7).map(|_| r.random_range(0.0..3.0)).collect();
        let gamma = r.random_range(0.0..=1.0);
        let recognized: Vec<(MacroAction, &Proposal)> = picked.iter().copied().zip(&proposals).collect();
        let causal = |a: MacroAction| Ok(p_c[a.index()]);

        let (_, merged) = reweighted_distribution(&recognized, causal, &PlannerConfig::new(gamma, 0)).unwrap();
        let pf: Vec<f64> = recognized.iter().map(|(a, p)| gamma * p.p_a + (1.0 - gamma) * p_c[a.index()]).collect();
        let z: f64 = pf.iter().map(|v| v.exp()).sum();
        let mut expected: BTreeMap<MacroAction, f64> = BTreeMap::new();
        for ((a, _), v) in recognized.iter().zip(&pf) {
            *expected.entry(*a).or_default() += v.exp() / z;
        }
        if merged.len() != expected.len() {
            worst = f64::INFINITY;
        }
        for (a, p) in &merged {
            worst = worst.max((p - expected[a]).abs());
        }

        if distinct && n > 1 {
            for g in [0.0, 1.0] {
                let (_, merged) = reweighted_distribution(&recognized, causal, &PlannerConfig::new(g, 0)).unwrap();
                let top = merged.iter().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap().0;
                let key = |a: &MacroAction, p: &Proposal| if g == 1.0 { p.p_a } else { p_c[a.index()] };
                let want = recognized.iter().max_by(|x, y| key(&x.0, x.1).total_cmp(&key(&y.0, y.1))).unwrap().0;
                if top != want {
                    argmax_fail += 1;
                }
            }
        }
    }
    let example = merge_redundant(&[
        (MacroAction::PutOnionInPot, 0.2),
        (MacroAction::PutOnionInPot, 0.1),
        (MacroAction::PutOnionInPot, 0.3),
    ]);
    let canon_ok = ["put_onion_in_pot()", "put_onion_in_pot().", "put_onion_In_Pot"]
        .iter()
        .all(|t| Proposal::new(*t, 0.1).canonical == Some(MacroAction::PutOnionInPot));
    let example_ok = canon_ok && example == vec![(MacroAction::PutOnionInPot, 0.6)];
    outcome(
        worst <= 1e-12 && argmax_fail == 0 && example_ok,
        format!("max pipeline |Δ| {worst:.1e}, argmax failures {argmax_fail}, merge example {example_ok}"),
    )
}

fn criterion_7() -> Outcome {
    let schema = FeatureSchema::cramped_room();
    let (p, a, s) = (schema.parent_dim(), schema.action_dim(), schema.state_dim());
    let mut r = rng(7);
    let mut mismatches = 0;
    let mut matrix = None;
    for k in 0..10_000 {
        if k % 100 == 0 {
            let entries = Array2::from_shape_fn((a, p), |(i, j)| {
                if j == s + i || r.random_bool(0.4) {
                    0.0
                } else {
                    r.random_range(0.0..=1.0)
                }
            });
            matrix = Some(CausalActionMatrix::from_entries(entries, &schema, "random").unwrap());
        }
        let m = matrix.as_ref().unwrap();
        let state = StateVector::new((0..s).map(|_| u8::from(r.random_bool(0.4))).collect());
        let prev = if r.random_bool(0.2) {
            schema.no_previous_action()
        } else {
            schema.encode_action(MacroAction::ALL[r.random_range(0..a)])
        };
        let action = MacroAction::ALL[r.random_range(0..a)];
        let parents: Vec<u8> = state.bits.iter().chain(&prev.bits).copied().collect();
        let mut brute = 0.0;
        for (j, &bit) in parents.iter().enumerate() {
            if bit == 1 {
                brute += m.entries()[[action.index(), j]];
            }
        }
        if m.query_score(&state, &prev, action).unwrap() != brute {
            mismatches += 1;
        }
    }
    let mut entries = Array2::zeros((a, p));
    let pot2 = schema.state_index("pot2").unwrap();
    entries[[MacroAction::PutOnionInPot.index(), s + MacroAction::PickupOnion.index()]] = 0.6;
    entries[[MacroAction::PutOnionInPot.index(), pot2]] = 0.9;
    let m = CausalActionMatrix::from_entries(entries, &schema, "hand").unwrap();
    let mut bits = vec![0u8; s];
    bits[pot2] = 1;
    let composite = m
        .query_score(&StateVector::new(bits), &schema.encode_action(MacroAction::PickupOnion), MacroAction::PutOnionInPot)
        .unwrap();
    outcome(
        mismatches == 0 && composite == 1.5,
        format!("mismatches {mismatches}/10000, composite score {composite}"),
    )
}

fn state_hash(s: &KitchenState) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

fn criterion_8() -> Outcome {
    let layout = KitchenLayout::bundled("cr").unwrap();
    let mut r = rng(8);
    let mut reward_fail = 0;
    let mut mutation_fail = 0;
    let mut invalid_seen = 0;
    for ep in 0..100u64 {
        let mut policies = [
            Policy::new(PolicySpec::random_legal(), 2 * ep).unwrap(),
            Policy::new(PolicySpec::random_legal(), 2 * ep + 1).unwrap(),
        ];
        let mut state = KitchenState::reset(&layout).unwrap();
        let mut reward = 0;
        for _ in 0..400 {
            let mut commands = [Command::Idle, Command::Idle];
            for (agent, cmd) in commands.iter_mut().enumerate() {
                let roll: f64 = r.random();
                *cmd = if roll < 0.2 {
                    Command::Act(MacroAction::ALL[r.random_range(0..7)])
                } else if roll < 0.25 {
                    Command::Unrecognized("stir_the_soup".into())
                } else {
                    policies[agent].act(&state, agent, &layout).map_or(Command::Idle, Command::Act)
                };
            }
            let out = state.step(&commands, &layout);
            for agent in 0..2 {
                if out.invalid[agent] {
                    invalid_seen += 1;
                    let mut neutral = commands.clone();
                    neutral[agent] = Command::Idle;
                    let reference = state.step(&neutral, &layout);
                    if state_hash(&reference.next_state) != state_hash(&out.next_state) {
                        mutation_fail += 1;
                    }
                }
            }
            reward += out.reward;
            state = out.next_state;
        }
        if reward != DELIVERY_REWARD * i64::from(state.deliveries) {
            reward_fail += 1;
        }
    }
    outcome(
        reward_fail == 0 && mutation_fail == 0 && invalid_seen > 0,
        format!("reward mismatches {reward_fail}/100, state changes from {mutation_fail} of {invalid_seen} invalid moves"),
    )
}

struct DirectionRun {
    files: BTreeMap<String, Vec<u8>>,
    assisted: RunSummary,
    baseline: RunSummary,
    elapsed: Duration,
}

fn direction_pipeline(dir: &Path) -> DirectionRun {
    let start = Instant::now();
    let _ = fs::remove_dir_all(dir);
    fs::create_dir_all(dir).unwrap();
    run_collect(&CollectJob {
        layout: "cr".into(),
        schema: None,
        collect: CollectConfig::new(PolicySpec::greedy(0.1), 200, 400, 0),
        out: dir.join("buffer.jsonl"),
    })
    .unwrap();
    run_train(&TrainJob {
        buffer: dir.join("buffer.jsonl"),
        layout: "cr".into(),
        schema: None,
        train: synthetic_train_config(),
        out: dir.join("checkpoint.json"),
    })
    .unwrap();
    run_matrix(&MatrixJob {
        checkpoint: dir.join("checkpoint.json"),
        layout: "cr".into(),
        schema: None,
        out: dir.join("matrix.csv"),
        triples: None,
        visualization_threshold: None,
    })
    .unwrap();
    let base = ExperimentConfig {
        layout: "cr".into(),
        matrix: Some(dir.join("matrix.csv")),
        proposer: ProposerConfig::Scripted(HallucinationProfile {
            invalid_rate: 0.3,
            empty_rate: 0.05,
            ..HallucinationProfile::default()
        }),
        seeds: vec![0, 1, 2],
        horizon: 400,
        ..ExperimentConfig::default()
    };
    let assisted = evaluate(&ExperimentConfig {
        gamma: 0.5,
        output_dir: dir.join("gamma_0.5"),
        ..base.clone()
    })
    .unwrap();
    let baseline = evaluate(&ExperimentConfig {
        gamma: 1.0,
        output_dir: dir.join("gamma_1"),
        ..base
    })
    .unwrap();
    let elapsed = start.elapsed();
    DirectionRun {
        files: read_tree(dir),
        assisted,
        baseline,
        elapsed,
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(name, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9(run: &DirectionRun) -> Outcome {
    let (a, b) = (&run.assisted, &run.baseline);
    let total = |s: &RunSummary| s.reports.iter().map(|r| r.invalid_executions).sum::<usize>();
    let ok = total(a) < total(b) && a.reward.mean >= b.reward.mean && run.elapsed < Duration::from_secs(900);
    outcome(
        ok,
        format!(
            "invalid executions {} (γ=0.5) vs {} (γ=1); mean reward {:.1} vs {:.1}; {:.0}s",
            total(a),
            total(b),
            a.reward.mean,
            b.reward.mean,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_10() -> Option<Outcome> {
    let base_url = std::env::var("CAUSALPLAN_LIVE_BASE_URL").ok()?;
    let endpoint = EndpointConfig {
        base_url,
        model: std::env::var("CAUSALPLAN_LIVE_MODEL").unwrap_or_else(|_| "default".into()),
        ..EndpointConfig::default()
    };
    let layout = KitchenLayout::bundled("cr").unwrap();
    let schema = FeatureSchema::cramped_room();
    let state = KitchenState::reset(&layout).unwrap();
    let mut live = RemoteProposer::new(endpoint.clone()).unwrap();
    let mut parsed = 0;
    for t in 0..10 {
        let ctx = ProposeContext {
            state: &state,
            agent: 1,
            layout: &layout,
            prev_action: None,
            t,
        };
        if let Ok(set) = live.propose(&ctx) {
            if !set.transport_failure && set.validate().is_ok() {
                parsed += 1;
            }
        }
    }
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let silent = EndpointConfig {
        base_url: format!("http://{}/v1", listener.local_addr().unwrap()),
        timeout_secs: 0.5,
        retries: 0,
        ..endpoint
    };
    let mut stalled = RemoteProposer::new(silent).unwrap();
    let ctx = ProposeContext {
        state: &state,
        agent: 1,
        layout: &layout,
        prev_action: None,
        t: 0,
    };
    let set = stalled.propose(&ctx).unwrap();
    let matrix = CausalActionMatrix::from_entries(Array2::zeros((7, 21)), &schema, "zero").unwrap();
    let decision = Planner::new(PlannerConfig::new(0.5, 0))
        .unwrap()
        .plan(
            &set,
            &schema.encode_state(&state, 1).unwrap(),
            &ActionVector::sentinel(7),
            &matrix,
        )
        .unwrap();
    drop(listener);
    let backup = set.transport_failure && decision.path == PlanPath::Backup;
    Some(outcome(
        parsed == 10 && backup,
        format!("{parsed}/10 steps parsed, timeout falls back to backup {backup}"),
    ))
}

fn criterion_11(first_oracle: &OracleReport, first_run: &DirectionRun, dir: &Path) -> Outcome {
    let again = run_oracle(&oracle_job()).unwrap();
    let oracle_same = serde_json::to_vec(first_oracle).unwrap() == serde_json::to_vec(&again).unwrap();
    let second = direction_pipeline(dir);
    let differing: Vec<&String> = first_run
        .files
        .iter()
        .filter(|(k, v)| second.files.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    let same_set = first_run.files.len() == second.files.len();
    outcome(
        oracle_same && differing.is_empty() && same_set,
        format!(
            "oracle report identical {oracle_same}; {} files compared, differing {:?}",
            first_run.files.len(),
            differing
        ),
    )
}

fn report(id: &str, name: &str, o: &Outcome, failures: &mut usize) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    if !o.pass {
        *failures += 1;
    }
    println!("{tag} criterion {id} ({name}): {}", o.detail);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test --workspace -- --list` and similar must not trigger a run.
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = 0;
    report("1", "gradient correctness", &criterion_1(), &mut failures);
    report("2", "analytic loss values", &criterion_2(), &mut failures);
    report("3", "ridge oracle", &criterion_3(), &mut failures);
    let (c4, oracle_report) = criterion_4();
    report("4", "structure recovery", &c4, &mut failures);
    report("5", "DAG pruning", &criterion_5(), &mut failures);
    report("6", "planner arithmetic", &criterion_6(), &mut failures);
    report("7", "matrix query equivalence", &criterion_7(), &mut failures);
    report("8", "simulator conservation", &criterion_8(), &mut failures);
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("direction");
    let run = direction_pipeline(&dir);
    report("9", "end-to-end direction check", &criterion_9(&run), &mut failures);
    match criterion_10() {
        Some(o) => report("10", "live endpoint", &o, &mut failures),
        None => println!("SKIP criterion 10 (live endpoint): CAUSALPLAN_LIVE_BASE_URL not set"),
    }
    report("11", "reproducibility", &criterion_11(&oracle_report, &run, &dir), &mut failures);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
