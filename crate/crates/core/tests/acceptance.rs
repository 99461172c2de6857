//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The heavy criteria (5, 6, 7) train real agents and parallelize across
//! seeds; expect the full suite to take on the order of an hour of CPU.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use roam::autodiff::adam::{Adam, AdamConfig};
use roam::autodiff::{gradcheck, Tensor};
use roam::explorer::{intrinsic_reward, lambda_returns};
use roam::metrics::{staleness_probe, ProbeConfig};
use roam::sim::{apply_action, respawn, Action, MapSpec, Mutation, OccupancyMap, SimParams};
use roam::trainer::{AgentKind, MapSource, RunConfig, ScheduledMutation, TrainConfig};
use roam::world_model::{WmBatch, WmConfig, WorldModel};
use std::collections::BTreeSet;
use std::path::PathBuf;

fn tmp_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn verdict(criterion: &str, ok: bool, detail: &str) {
    println!("ACCEPTANCE {criterion}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

// ── 1. Gradient correctness ────────────────────────────────────────────

#[test]
fn a1_gradient_correctness() {
    let start = std::time::Instant::now();
    let reports = gradcheck::run_suite(42, 10).unwrap();
    let worst_op = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);

    let cfg = WmConfig {
        obs_dim: 12,
        embed_dim: 8,
        hidden_dim: 10,
        hidden_layers: 1,
        gru_dim: 6,
        latent_groups: 2,
        latent_classes: 3,
        ..WmConfig::default()
    };
    let mut rng = StdRng::seed_from_u64(1);
    let wm = WorldModel::new(cfg.clone(), &mut rng);
    let batch = WmBatch {
        obs: (0..3)
            .map(|_| {
                Tensor::from_vec(1, cfg.obs_dim, (0..cfg.obs_dim).map(|_| rng.random_range(0.0..1.0)).collect())
                    .unwrap()
            })
            .collect(),
        prev_actions: (0..3)
            .map(|_| {
                let mut a = Tensor::zeros(1, 3);
                a.set(0, rng.random_range(0..3usize), 1.0);
                a
            })
            .collect(),
    };
    let elbo_err = wm.elbo_gradient_check(&batch, 1e-5).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let ok = worst_op < 1e-4 && elbo_err < 1e-3 && elapsed < 60.0;
    verdict(
        "1 (gradient correctness)",
        ok,
        &format!("op max rel err {worst_op:.2e} < 1e-4, sequence objective {elbo_err:.2e} < 1e-3, {elapsed:.1}s < 60s"),
    );
}

// ── 2. Sequence-objective training on a frozen buffer ─────────────────

fn collect_frozen_buffer(map: &OccupancyMap, params: &SimParams, steps: usize, seed: u64) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut pose = respawn(map);
    let mut obs = vec![roam::sim::render(map, pose.col, pose.row, pose.heading, params).to_input(params)];
    let mut actions = vec![Tensor::zeros(1, 3)];
    for _ in 1..steps {
        let action = Action::from_index(rng.random_range(0..3));
        pose = apply_action(map, params, pose, action).0;
        obs.push(roam::sim::render(map, pose.col, pose.row, pose.heading, params).to_input(params));
        let mut one_hot = Tensor::zeros(1, 3);
        one_hot.set(0, action.index(), 1.0);
        actions.push(one_hot);
    }
    (obs, actions)
}

fn window_batch(obs: &[Tensor], actions: &[Tensor], offsets: &[usize], len: usize) -> WmBatch {
    let stack = |rows: Vec<&Tensor>| Tensor::vstack(&rows).unwrap();
    WmBatch {
        obs: (0..len).map(|t| stack(offsets.iter().map(|&o| &obs[o + t]).collect())).collect(),
        prev_actions: (0..len).map(|t| stack(offsets.iter().map(|&o| &actions[o + t]).collect())).collect(),
    }
}

#[test]
fn a2_sequence_objective_training() {
    let start = std::time::Instant::now();
    let params = SimParams::default();
    let map = OccupancyMap::generate(41, &MapSpec { width: 11, height: 11, rooms: 2, door_width: 1 }).unwrap();
    let (obs, actions) = collect_frozen_buffer(&map, &params, 2000, 7);

    let handles: Vec<_> = [1u64, 2, 3]
        .into_iter()
        .map(|seed| {
            let obs = obs.clone();
            let actions = actions.clone();
            std::thread::spawn(move || {
                let params = SimParams::default();
                let cfg = WmConfig { obs_dim: params.obs_dim(), ..WmConfig::default() };
                let mut rng = StdRng::seed_from_u64(seed);
                let mut wm = WorldModel::new(cfg, &mut rng);
                let mut adam = Adam::new(AdamConfig::with_lr(3e-4), &wm.store);
                let seq_len = 8;
                let batch_size = 8;
                let eval_offsets: Vec<usize> = (0..8).map(|i| i * 230).collect();
                let eval_batch = window_batch(&obs, &actions, &eval_offsets, seq_len);

                let mut loss_at_10 = f64::NAN;
                for step in 1..=2000u32 {
                    let offsets: Vec<usize> =
                        (0..batch_size).map(|_| rng.random_range(0..obs.len() - seq_len)).collect();
                    let batch = window_batch(&obs, &actions, &offsets, seq_len);
                    wm.train_step(&mut adam, &batch, &mut rng).unwrap();
                    if step == 10 {
                        loss_at_10 = wm.wm_loss(&eval_batch, &mut rng).unwrap().loss;
                    }
                }
                let final_loss = wm.wm_loss(&eval_batch, &mut rng).unwrap().loss;
                (seed, loss_at_10, final_loss)
            })
        })
        .collect();

    let mut all_ok = true;
    let mut details = Vec::new();
    for handle in handles {
        let (seed, at_10, final_loss) = handle.join().unwrap();
        let ratio = final_loss / at_10;
        all_ok &= ratio <= 0.5;
        details.push(format!("seed {seed}: {at_10:.1} -> {final_loss:.1} (x{ratio:.2})"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    all_ok &= elapsed < 600.0;
    verdict(
        "2 (sequence-objective training)",
        all_ok,
        &format!("{}, {elapsed:.0}s < 600s", details.join("; ")),
    );
}

// ── 3. KL reward oracle ────────────────────────────────────────────────

#[test]
fn a3_kl_reward_oracle() {
    // Independent oracle: plain exponentiation and normalization.
    let direct = |q: &[f64], p: &[f64], classes: usize| -> f64 {
        let mut total = 0.0;
        for (qs, ps) in q.chunks_exact(classes).zip(p.chunks_exact(classes)) {
            let qe: Vec<f64> = qs.iter().map(|v| v.exp()).collect();
            let pe: Vec<f64> = ps.iter().map(|v| v.exp()).collect();
            let qz: f64 = qe.iter().sum();
            let pz: f64 = pe.iter().sum();
            for (a, b) in qe.iter().zip(&pe) {
                let qn = a / qz;
                let pn = b / pz;
                total += qn * (qn / pn).ln();
            }
        }
        total
    };
    let mut rng = StdRng::seed_from_u64(404);
    let mut max_diff = 0.0f64;
    let mut min_reward = f64::INFINITY;
    for _ in 0..1000 {
        let q = Tensor::from_vec(1, 12, (0..12).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let p = Tensor::from_vec(1, 12, (0..12).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let reward = intrinsic_reward(&q, &p, 4).unwrap()[0];
        let oracle = direct(q.data(), p.data(), 4);
        max_diff = max_diff.max((reward - oracle).abs());
        min_reward = min_reward.min(reward);
    }
    let ok = max_diff < 1e-10 && min_reward >= 0.0;
    verdict(
        "3 (KL reward oracle)",
        ok,
        &format!("max |impl - oracle| = {max_diff:.2e} < 1e-10 over 1000 pairs, min reward {min_reward:.2e} >= 0"),
    );
}

// ── 4. Lambda-return oracle ────────────────────────────────────────────

#[test]
fn a4_lambda_return_oracle() {
    // Independent oracle: closed-form geometric expansion of the recursion.
    let expansion = |rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64, t: usize| {
        let h = rewards.len();
        let mut total = 0.0;
        for k in 0..h - t {
            total += (gamma * lambda).powi(k as i32) * (rewards[t + k] + gamma * (1.0 - lambda) * values[t + k]);
        }
        total + (gamma * lambda).powi((h - t) as i32) * bootstrap
    };
    let mut rng = StdRng::seed_from_u64(505);
    let mut max_err = 0.0f64;
    for h in 1..=5usize {
        for _ in 0..200 {
            let rewards: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();
            let values: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();
            let bootstrap = rng.random_range(-3.0..3.0);
            let gamma = rng.random_range(0.2..1.0);
            let lambda = rng.random_range(0.0..1.0);
            let got = lambda_returns(&rewards, &values, bootstrap, gamma, lambda);
            for t in 0..h {
                max_err = max_err.max((got[t] - expansion(&rewards, &values, bootstrap, gamma, lambda, t)).abs());
            }
        }
    }
    // Degenerate cases: one-step TD at lambda=0, discounted sum at lambda=1.
    let rewards = [1.0, 0.5, -0.5, 2.0];
    let values = [0.3, -0.2, 0.8, 0.1];
    let td = lambda_returns(&rewards, &values, 0.1, 0.9, 0.0);
    let mut degenerate_err = 0.0f64;
    for t in 0..4 {
        degenerate_err = degenerate_err.max((td[t] - (rewards[t] + 0.9 * values[t])).abs());
    }
    let mc = lambda_returns(&rewards, &values, 0.1, 0.9, 1.0);
    let want = rewards[0] + 0.9 * (rewards[1] + 0.9 * (rewards[2] + 0.9 * (rewards[3] + 0.9 * 0.1)));
    degenerate_err = degenerate_err.max((mc[0] - want).abs());

    let ok = max_err < 1e-12 && degenerate_err < 1e-12;
    verdict(
        "4 (lambda-return oracle)",
        ok,
        &format!("max recursion-vs-expansion err {max_err:.2e} < 1e-12, degenerate err {degenerate_err:.2e}"),
    );
}

// ── 5 & 6. Exploration performance ─────────────────────────────────────

fn suite_sim_params() -> SimParams {
    // 10-degree turns: the turn increment the reference robot used, and the
    // regime where undirected walks stop saturating these small maps.
    SimParams { obs_width: 16, obs_height: 16, fov_deg: 90.0, headings: 36, collision_channel: false }
}

fn suite_config(agent: AgentKind, seed: u64, map_seed: u64, episodes: usize) -> RunConfig {
    let mut cfg = RunConfig::new(seed, agent, episodes);
    cfg.sim = suite_sim_params();
    cfg.map = MapSource::Generate {
        spec: MapSpec { width: 15, height: 15, rooms: 6, door_width: 1 },
        map_seed,
    };
    cfg.updates_per_episode = match agent {
        AgentKind::Curiosity => 50,
        _ => 1,
    };
    // Desk-scale calibration: with 100-episode budgets and small networks
    // the reference entropy scale lets the actor commit before the world
    // model matures; the standard discrete-control value keeps it
    // exploring. The run-config default stays at the reference value.
    cfg.policy.entropy_scale = 1e-3;
    cfg.train = TrainConfig {
        batch_size: 8,
        seq_len: 8,
        wm_lr: 3e-4,
        imagination_batch: 24,
        buffer_capacity_steps: None,
    };
    cfg
}

fn run_to_coverage(cfg: RunConfig, dir: PathBuf) -> f64 {
    roam::trainer::run_experiment(&cfg, &dir).unwrap().final_coverage
}

#[test]
fn a5_exploration_beats_random_and_count_baseline() {
    let start = std::time::Instant::now();
    let base = tmp_dir("a5_suite");
    let map_seeds = [13u64, 26, 30];

    let mut handles = Vec::new();
    for (i, &map_seed) in map_seeds.iter().enumerate() {
        for agent in [AgentKind::Curiosity, AgentKind::Random, AgentKind::CountNovelty] {
            let seed = 100 * (i as u64 + 1) + agent as u64;
            let cfg = suite_config(agent, seed, map_seed, 100);
            let dir = base.join(format!("{}_{map_seed}", agent.label()));
            handles.push(std::thread::spawn(move || (agent, run_to_coverage(cfg, dir))));
        }
    }
    let mut sums = std::collections::BTreeMap::new();
    for handle in handles {
        let (agent, coverage) = handle.join().unwrap();
        *sums.entry(agent.label()).or_insert(0.0) += coverage / map_seeds.len() as f64;
    }
    let curiosity = sums["curiosity"];
    let random = sums["random"];
    let count = sums["count_novelty"];
    let elapsed = start.elapsed().as_secs_f64();

    let ok = curiosity >= 1.5 * random && curiosity >= 1.15 * count;
    verdict(
        "5 (exploration beats baselines)",
        ok,
        &format!(
            "mean coverage at 50k steps: curiosity {curiosity:.3}, random {random:.3} (x{:.2} >= 1.5), \
             count-novelty {count:.3} (x{:.2} >= 1.15); {elapsed:.0}s wall",
            curiosity / random,
            curiosity / count
        ),
    );
}

#[test]
fn a6_desk_scale_coverage() {
    let start = std::time::Instant::now();
    let base = tmp_dir("a6_coverage");

    let handles: Vec<_> = [1u64, 2, 3]
        .into_iter()
        .map(|seed| {
            let mut cfg = suite_config(AgentKind::Curiosity, seed, 101, 200);
            cfg.map = MapSource::Generate {
                spec: MapSpec { width: 15, height: 15, rooms: 3, door_width: 1 },
                map_seed: 101,
            };
            cfg.updates_per_episode = 30;
            cfg.train.imagination_batch = 16;
            cfg.policy.hidden_dim = 64;
            let dir = base.join(format!("seed{seed}"));
            std::thread::spawn(move || (seed, run_to_coverage(cfg, dir)))
        })
        .collect();

    let results: Vec<(u64, f64)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let passing = results.iter().filter(|(_, c)| *c >= 0.8).count();
    let elapsed = start.elapsed().as_secs_f64();
    let ok = passing >= 2;
    let detail: Vec<String> = results.iter().map(|(s, c)| format!("seed {s}: {:.1}%", c * 100.0)).collect();
    verdict(
        "6 (desk-scale coverage)",
        ok,
        &format!(
            "{} of 3 seeds reached 80% of the three-room map within 200 episodes ({}); {elapsed:.0}s wall",
            passing,
            detail.join(", ")
        ),
    );
}

// ── 7. Staleness probe ─────────────────────────────────────────────────

/// Map with one free-standing obstacle plus a legal destination to move it
/// to, all chosen deterministically.
fn obstacle_course(map_seed: u64) -> (OccupancyMap, (usize, usize), (usize, usize)) {
    let base = OccupancyMap::generate(map_seed, &MapSpec { width: 11, height: 11, rooms: 1, door_width: 1 }).unwrap();
    let cells: Vec<(usize, usize)> = base.visitable_cells().collect();
    for &from in &cells {
        if from == base.start() {
            continue;
        }
        let Ok((with_obstacle, _)) = base.mutate(&Mutation::AddObstacle { cell: from }) else {
            continue;
        };
        for &to in cells.iter().rev() {
            if to == base.start() || to == from {
                continue;
            }
            // The move must span enough distance to change many views.
            let dist = from.0.abs_diff(to.0) + from.1.abs_diff(to.1);
            if dist < 6 {
                continue;
            }
            if with_obstacle.mutate(&Mutation::MoveObstacle { from, to }).is_ok() {
                return (with_obstacle, from, to);
            }
        }
    }
    panic!("no legal obstacle placement found");
}

#[test]
fn a7_staleness_probe() {
    let start = std::time::Instant::now();
    let base = tmp_dir("a7_probe");
    std::fs::create_dir_all(&base).unwrap();
    let (course, from, to) = obstacle_course(55);
    let map_path = base.join("course.txt");
    course.save_ascii(&map_path).unwrap();

    let handles: Vec<_> = [1u64, 2, 3]
        .into_iter()
        .map(|seed| {
            let map_path = map_path.clone();
            let dir = base.join(format!("seed{seed}"));
            std::thread::spawn(move || {
                let mut cfg = suite_config(AgentKind::Curiosity, seed, 0, 41);
                cfg.map = MapSource::File { path: map_path.to_string_lossy().into_owned() };
                cfg.updates_per_episode = 30;
                cfg.train.imagination_batch = 16;
                cfg.policy.hidden_dim = 64;
                cfg.mutations = vec![ScheduledMutation {
                    episode: 40,
                    mutation: Mutation::MoveObstacle { from, to },
                }];
                roam::trainer::run_experiment(&cfg, &dir).unwrap();
                let summary: serde_json::Value = serde_json::from_str(
                    &std::fs::read_to_string(dir.join("probe_ep40_summary.json")).unwrap(),
                )
                .unwrap();
                let mutation_ratio = summary["ratio"].as_f64().unwrap();

                // Control soundness: the same stale checkpoint probed on the
                // unmutated map against a fake changed set of random cells.
                let map_before = OccupancyMap::load_ascii(&dir.join("map_before_ep40.txt")).unwrap();
                let config = RunConfig::from_json(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
                let mut wm_cfg = config.wm.clone();
                wm_cfg.obs_dim = config.sim.obs_dim();
                let mut rng = StdRng::seed_from_u64(config.seed);
                let mut wm = WorldModel::new(wm_cfg.clone(), &mut rng);
                let mut explorer =
                    roam::explorer::Explorer::new(wm_cfg.state_dim(), config.policy.clone(), &mut rng);
                roam::autodiff::checkpoint::load(
                    &dir.join("checkpoint_premutation_ep40.json"),
                    &mut [
                        ("wm", &mut wm.store),
                        ("actor", &mut explorer.actor_store),
                        ("critic", &mut explorer.critic_store),
                        ("slow_critic", &mut explorer.slow_critic_store),
                        ("reward", &mut explorer.reward_store),
                    ],
                )
                .unwrap();
                let mut fake_rng = StdRng::seed_from_u64(seed.wrapping_mul(31) + 7);
                let all_cells: Vec<(usize, usize)> = (0..map_before.height())
                    .flat_map(|r| (0..map_before.width()).map(move |c| (c, r)))
                    .collect();
                let mut fake = BTreeSet::new();
                while fake.len() < 5 {
                    fake.insert(all_cells[fake_rng.random_range(0..all_cells.len())]);
                }
                let control = staleness_probe(
                    &wm,
                    &map_before,
                    &map_before,
                    &fake,
                    &config.sim,
                    &ProbeConfig { seed, ..ProbeConfig::default() },
                )
                .unwrap();
                (seed, mutation_ratio, control.ratio)
            })
        })
        .collect();

    let results: Vec<(u64, f64, f64)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let mutation_passing = results.iter().filter(|(_, m, _)| *m > 1.3).count();
    let control_mean = results.iter().map(|(_, _, c)| c).sum::<f64>() / results.len() as f64;
    let elapsed = start.elapsed().as_secs_f64();

    let ok = mutation_passing >= 2 && (0.8..=1.25).contains(&control_mean);
    let detail: Vec<String> = results
        .iter()
        .map(|(s, m, c)| format!("seed {s}: mutation x{m:.2}, control x{c:.2}"))
        .collect();
    verdict(
        "7 (staleness probe)",
        ok,
        &format!(
            "{} of 3 seeds with mutation ratio > 1.3, control mean x{control_mean:.2} in [0.8, 1.25] ({}); {elapsed:.0}s wall",
            mutation_passing,
            detail.join("; ")
        ),
    );
}

// ── 8. Determinism ─────────────────────────────────────────────────────

#[test]
fn a8_determinism() {
    let base = tmp_dir("a8_determinism");
    let mut cfg = RunConfig::new(33, AgentKind::Curiosity, 3);
    cfg.steps_per_episode = 100;
    cfg.updates_per_episode = 5;
    cfg.sim = SimParams { obs_width: 8, obs_height: 8, ..SimParams::default() };
    cfg.wm = WmConfig {
        obs_dim: cfg.sim.obs_dim(),
        embed_dim: 16,
        hidden_dim: 24,
        hidden_layers: 1,
        gru_dim: 12,
        latent_groups: 2,
        latent_classes: 4,
        ..WmConfig::default()
    };
    cfg.policy.hidden_dim = 24;
    cfg.policy.hidden_layers = 1;
    cfg.train = TrainConfig {
        batch_size: 4,
        seq_len: 8,
        wm_lr: 3e-4,
        imagination_batch: 8,
        buffer_capacity_steps: None,
    };
    cfg.map = MapSource::Generate {
        spec: MapSpec { width: 11, height: 11, rooms: 2, door_width: 1 },
        map_seed: 12,
    };

    roam::trainer::run_experiment(&cfg, &base.join("first")).unwrap();
    roam::trainer::run_experiment(&cfg, &base.join("second")).unwrap();
    let a = std::fs::read(base.join("first/coverage.csv")).unwrap();
    let b = std::fs::read(base.join("second/coverage.csv")).unwrap();
    let ok = a == b && !a.is_empty();
    verdict(
        "8 (determinism)",
        ok,
        &format!("coverage.csv byte-identical across two runs ({} bytes)", a.len()),
    );
}

// ── 9. Coverage and heatmap invariants ─────────────────────────────────

#[test]
fn a9_coverage_and_heatmap_invariants() {
    let mut worst: Option<String> = None;
    let mut checked = 0usize;
    for seed in 0..25u64 {
        let map = OccupancyMap::generate(seed, &MapSpec::default()).unwrap();
        let params = SimParams::default();
        let mut tracker = roam::metrics::CoverageTracker::new(&map);
        let mut pose = respawn(&map);
        let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(977));
        tracker.update(pose.col, pose.row, 0).unwrap();
        let mut prev_coverage = 0.0;
        let len = rng.random_range(50..400);
        for step in 1..=len {
            pose = apply_action(&map, &params, pose, Action::from_index(rng.random_range(0..3))).0;
            tracker.update(pose.col, pose.row, step as u64).unwrap();
            let cov = tracker.coverage();
            if cov < prev_coverage || !(0.0..=1.0).contains(&cov) {
                worst = Some(format!("seed {seed}: coverage not monotone in [0,1]"));
            }
            prev_coverage = cov;
        }
        let total: u64 = tracker.counts().iter().sum();
        if total != tracker.steps_tracked() || total != len as u64 + 1 {
            worst = Some(format!("seed {seed}: count conservation violated ({total} vs {})", len + 1));
        }
        checked += 1;
    }
    let ok = worst.is_none();
    verdict(
        "9 (coverage/heatmap invariants)",
        ok,
        &worst.unwrap_or_else(|| format!("monotone coverage in [0,1] and count conservation over {checked} random action sequences")),
    );
}
