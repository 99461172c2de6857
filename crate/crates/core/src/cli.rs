//! Command-line entry point: `gen-map`, `run`, `report`, `probe`, and
//! `gradcheck`. One command per process; every run directory carries the
//! config snapshot needed to reproduce it bit for bit.

use crate::autodiff::{checkpoint, gradcheck};
use crate::error::{Error, Result};
use crate::explorer::Explorer;
use crate::metrics::{self, ProbeConfig};
use crate::sim::{MapSpec, OccupancyMap, SimParams};
use crate::trainer::{run_experiment, RunConfig};
use crate::world_model::{WmBatch, WmConfig, WorldModel};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
roam <command> [flags]

commands:
  gen-map    --seed N --out PATH [--width W --height H --rooms R --door-width D]
  run        --config PATH --out DIR [--seed N]
  report     --runs DIR [DIR...] --out DIR
  probe      --run DIR --out DIR [--fake-cells N] [--seed N]
  gradcheck  [--seed N] [--rounds N]

Common flags: --seed, --out, --config. Unknown flags are rejected.
";

/// Parsed `--key value` pairs; flags may appear in any order.
struct Flags {
    values: Vec<(String, Vec<String>)>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str], multi: &[&str]) -> Result<Flags> {
        let mut values: Vec<(String, Vec<String>)> = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(key) = arg.strip_prefix("--") else {
                return Err(Error::Config(format!("unexpected argument {arg:?}")));
            };
            if !allowed.contains(&key) {
                return Err(Error::Config(format!("unknown flag --{key}")));
            }
            let mut vals = Vec::new();
            i += 1;
            while i < args.len() && !args[i].starts_with("--") {
                vals.push(args[i].clone());
                i += 1;
                if !multi.contains(&key) {
                    break;
                }
            }
            if vals.is_empty() {
                return Err(Error::Config(format!("--{key} needs a value")));
            }
            if values.iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!("--{key} given twice")));
            }
            values.push((key.to_string(), vals));
        }
        Ok(Flags { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v[0].as_str())
    }

    fn get_all(&self, key: &str) -> Option<&[String]> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing --{key}")))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("--{key} {v:?} is not a valid number"))),
        }
    }
}

pub fn dispatch(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return 2;
    };
    let rest = &args[1..];
    let result = match command.as_str() {
        "gen-map" => cmd_gen_map(rest),
        "run" => cmd_run(rest),
        "report" => cmd_report(rest),
        "probe" => cmd_probe(rest),
        "gradcheck" => cmd_gradcheck(rest),
        "--help" | "help" | "-h" => {
            print!("{USAGE}");
            return 0;
        }
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => {
                    eprint!("{USAGE}");
                    2
                }
                _ => 1,
            }
        }
    }
}

fn cmd_gen_map(args: &[String]) -> Result<i32> {
    let flags = Flags::parse(args, &["seed", "out", "width", "height", "rooms", "door-width"], &[])?;
    let seed: u64 = flags.parse_num("seed")?.unwrap_or(1);
    let out = PathBuf::from(flags.require("out")?);
    let defaults = MapSpec::default();
    let spec = MapSpec {
        width: flags.parse_num("width")?.unwrap_or(defaults.width),
        height: flags.parse_num("height")?.unwrap_or(defaults.height),
        rooms: flags.parse_num("rooms")?.unwrap_or(defaults.rooms),
        door_width: flags.parse_num("door-width")?.unwrap_or(defaults.door_width),
    };
    let map = OccupancyMap::generate(seed, &spec)?;
    map.save_ascii(&out)?;
    println!(
        "wrote {} ({}x{}, {} rooms requested, {} visitable states)",
        out.display(),
        map.width(),
        map.height(),
        spec.rooms,
        map.visitable_count()
    );
    Ok(0)
}

fn cmd_run(args: &[String]) -> Result<i32> {
    let flags = Flags::parse(args, &["config", "out", "seed"], &[])?;
    let config_path = PathBuf::from(flags.require("config")?);
    let out = PathBuf::from(flags.require("out")?);
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(seed) = flags.parse_num::<u64>("seed")? {
        config.seed = seed;
    }
    let artifacts = run_experiment(&config, &out)?;
    println!(
        "run complete: {} episodes, {} steps, coverage {:.1}% ({}/{} cells), artifacts in {}",
        artifacts.episodes,
        artifacts.total_steps,
        artifacts.final_coverage * 100.0,
        artifacts.visited,
        artifacts.visitable,
        out.display()
    );
    Ok(0)
}

fn cmd_report(args: &[String]) -> Result<i32> {
    let flags = Flags::parse(args, &["runs", "out"], &["runs"])?;
    let run_dirs = flags
        .get_all("runs")
        .ok_or_else(|| Error::Config("missing --runs".into()))?;
    let out = PathBuf::from(flags.require("out")?);
    let summaries = run_dirs
        .iter()
        .map(|d| metrics::load_run(Path::new(d)))
        .collect::<Result<Vec<_>>>()?;
    let comparison = metrics::compare_runs(summaries)?;
    metrics::write_comparison(&comparison, &out)?;
    println!("run,agent,final_coverage,ratio_vs_first");
    for (run, ratio) in comparison.runs.iter().zip(&comparison.ratios) {
        println!("{},{},{:.4},{:.4}", run.label, run.agent, run.final_coverage, ratio);
    }
    for (agent, mean) in &comparison.agent_means {
        println!("mean[{agent}] = {mean:.4}");
    }
    println!("wrote {}", out.join("comparison.csv").display());
    Ok(0)
}

/// Rebuild the world model from a run directory's checkpoint and probe it
/// against that run's mutation (or a fake changed set on the final map).
fn cmd_probe(args: &[String]) -> Result<i32> {
    let flags = Flags::parse(args, &["run", "out", "fake-cells", "seed"], &[])?;
    let run_dir = PathBuf::from(flags.require("run")?);
    let out = PathBuf::from(flags.require("out")?);
    let seed: u64 = flags.parse_num("seed")?.unwrap_or(0);
    let fake_cells: usize = flags.parse_num("fake-cells")?.unwrap_or(0);

    let config = RunConfig::from_json(&std::fs::read_to_string(run_dir.join("config.json"))?)?;
    let params: SimParams = config.sim;

    // A recorded mutation gives the real before/after pair; otherwise a
    // fake changed set on the unmutated map measures probe soundness.
    let mutation_maps = find_mutation_maps(&run_dir)?;
    let (map_before, map_after, changed, checkpoint_name) = match (&mutation_maps, fake_cells) {
        (Some((ep, before, after)), 0) => {
            let before_map = OccupancyMap::load_ascii(before)?;
            let after_map = OccupancyMap::load_ascii(after)?;
            let changed = diff_cells(&before_map, &after_map);
            (before_map, after_map, changed, format!("checkpoint_premutation_ep{ep}.json"))
        }
        _ => {
            if fake_cells == 0 {
                return Err(Error::Config(
                    "run has no recorded mutation; pass --fake-cells N for a soundness probe".into(),
                ));
            }
            let map = OccupancyMap::load_ascii(&run_dir.join("map.txt"))?;
            let mut rng = StdRng::seed_from_u64(seed);
            let mut cells: Vec<(usize, usize)> = map.visitable_cells().collect();
            for w in 0..map.width() {
                for h in 0..map.height() {
                    if map.is_wall(w, h) {
                        cells.push((w, h));
                    }
                }
            }
            let mut fake = BTreeSet::new();
            while fake.len() < fake_cells.min(cells.len()) {
                fake.insert(cells[rng.random_range(0..cells.len())]);
            }
            (map.clone(), map, fake, "checkpoint.json".to_string())
        }
    };

    let mut wm_cfg: WmConfig = config.wm.clone();
    wm_cfg.obs_dim = params.obs_dim();
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut wm = WorldModel::new(wm_cfg.clone(), &mut rng);
    let mut explorer = Explorer::new(wm_cfg.state_dim(), config.policy.clone(), &mut rng);
    checkpoint::load(
        &run_dir.join(&checkpoint_name),
        &mut [
            ("wm", &mut wm.store),
            ("actor", &mut explorer.actor_store),
            ("critic", &mut explorer.critic_store),
            ("slow_critic", &mut explorer.slow_critic_store),
            ("reward", &mut explorer.reward_store),
        ],
    )?;

    let report = metrics::staleness_probe(
        &wm,
        &map_before,
        &map_after,
        &changed,
        &params,
        &ProbeConfig { seed, ..ProbeConfig::default() },
    )?;
    std::fs::create_dir_all(&out)?;
    report.write_csv(&out.join("probe.csv"))?;
    println!(
        "probe: {} affected vs {} control poses, mean error {:.6} vs {:.6}, ratio {:.3}",
        report.poses.iter().filter(|p| p.affected).count(),
        report.poses.iter().filter(|p| !p.affected).count(),
        report.affected_mean,
        report.control_mean,
        report.ratio
    );
    Ok(0)
}

fn find_mutation_maps(run_dir: &Path) -> Result<Option<(usize, PathBuf, PathBuf)>> {
    let mut found: Option<(usize, PathBuf, PathBuf)> = None;
    for entry in std::fs::read_dir(run_dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(ep) = name
            .strip_prefix("map_before_ep")
            .and_then(|s| s.strip_suffix(".txt"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            let after = run_dir.join(format!("map_after_ep{ep}.txt"));
            if after.exists() && found.as_ref().map(|(e, _, _)| ep < *e).unwrap_or(true) {
                found = Some((ep, run_dir.join(&name), after));
            }
        }
    }
    Ok(found)
}

fn diff_cells(a: &OccupancyMap, b: &OccupancyMap) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for row in 0..a.height() {
        for col in 0..a.width() {
            if a.is_wall(col, row) != b.is_wall(col, row) {
                out.insert((col, row));
            }
        }
    }
    out
}

/// Finite-difference verification of every op plus the full sequence
/// objective; exit 0 iff everything is within tolerance.
fn cmd_gradcheck(args: &[String]) -> Result<i32> {
    let flags = Flags::parse(args, &["seed", "rounds"], &[])?;
    let seed: u64 = flags.parse_num("seed")?.unwrap_or(42);
    let rounds: usize = flags.parse_num("rounds")?.unwrap_or(10);

    let reports = gradcheck::run_suite(seed, rounds)?;
    let mut worst: f64 = 0.0;
    println!("{:<24} max_rel_err", "op");
    for r in &reports {
        println!("{:<24} {:.3e}", r.name, r.max_rel_err);
        worst = worst.max(r.max_rel_err);
    }

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
    let mut rng = StdRng::seed_from_u64(seed);
    let wm = WorldModel::new(cfg.clone(), &mut rng);
    let batch = WmBatch {
        obs: (0..3)
            .map(|_| {
                let data = (0..cfg.obs_dim).map(|_| rng.random_range(0.0..1.0)).collect();
                crate::autodiff::Tensor::from_vec(1, cfg.obs_dim, data).expect("sized")
            })
            .collect(),
        prev_actions: (0..3)
            .map(|_| {
                let mut a = crate::autodiff::Tensor::zeros(1, 3);
                a.set(0, rng.random_range(0..3usize), 1.0);
                a
            })
            .collect(),
    };
    let elbo_err = wm.elbo_gradient_check(&batch, 1e-5)?;
    println!("{:<24} {:.3e}", "sequence_objective", elbo_err);

    let ops_ok = worst < 1e-4;
    let elbo_ok = elbo_err < 1e-3;
    println!(
        "max op rel err {worst:.3e} (tolerance 1e-4), sequence objective {elbo_err:.3e} (tolerance 1e-3): {}",
        if ops_ok && elbo_ok { "OK" } else { "FAIL" }
    );
    Ok(if ops_ok && elbo_ok { 0 } else { 1 })
}
