//! Cross-run comparison: coverage curves, final-coverage tables, and
//! per-agent means over a shared map suite.

use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub label: String,
    pub agent: String,
    pub seed: u64,
    /// Identity of the map the run explored (hash of its ASCII form).
    pub map_key: String,
    pub visitable: usize,
    /// (environment step, coverage fraction), one point per logged step.
    pub curve: Vec<(u64, f64)>,
    pub final_coverage: f64,
}

#[derive(Deserialize)]
struct ConfigPeek {
    seed: u64,
    agent: serde_json::Value,
}

fn fnv_hex(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Load a completed run directory (config.json, map.txt, coverage.csv).
pub fn load_run(dir: &Path) -> Result<RunSummary> {
    let config_text = std::fs::read_to_string(dir.join("config.json"))
        .map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let peek: ConfigPeek = serde_json::from_str(&config_text)?;
    let agent = match &peek.agent {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let map_text = std::fs::read_to_string(dir.join("map.txt"))?;
    let map = crate::sim::OccupancyMap::from_ascii(&map_text)?;

    let coverage_text = std::fs::read_to_string(dir.join("coverage.csv"))?;
    let mut curve = Vec::new();
    for (i, line) in coverage_text.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let mut fields = line.split(',');
        let step: u64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad coverage.csv line {i}")))?;
        let coverage: f64 = fields
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad coverage.csv line {i}")))?;
        curve.push((step, coverage));
    }
    let final_coverage = curve.last().map(|&(_, c)| c).unwrap_or(0.0);
    Ok(RunSummary {
        label: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        dir: dir.to_path_buf(),
        agent,
        seed: peek.seed,
        map_key: fnv_hex(&map_text),
        visitable: map.visitable_count(),
        curve,
        final_coverage,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    /// Shared step grid for curve output.
    pub grid: Vec<u64>,
    /// Coverage per run, sampled on the grid (forward filled).
    pub curves: Vec<Vec<f64>>,
    /// Final coverage relative to the first run.
    pub ratios: Vec<f64>,
    /// Mean final coverage per agent across maps and seeds.
    pub agent_means: Vec<(String, f64)>,
}

/// Compare runs over a shared map suite. Every agent must have been run on
/// the same set of maps, otherwise the comparison is meaningless.
pub fn compare_runs(runs: Vec<RunSummary>) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::Config("no runs to compare".into()));
    }
    let mut suites: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for run in &runs {
        suites.entry(&run.agent).or_default().insert(&run.map_key);
    }
    let first_suite = suites.values().next().expect("at least one agent").clone();
    for (agent, suite) in &suites {
        if *suite != first_suite {
            return Err(Error::Config(format!(
                "agent {agent} ran on a different map suite than the others"
            )));
        }
    }

    let max_step = runs.iter().filter_map(|r| r.curve.last().map(|&(s, _)| s)).max().unwrap_or(0);
    let stride = (max_step / 1000).max(1);
    let grid: Vec<u64> = (0..=max_step / stride).map(|i| i * stride).collect();
    let curves = runs
        .iter()
        .map(|run| {
            let mut out = Vec::with_capacity(grid.len());
            let mut i = 0;
            let mut last = 0.0;
            for &g in &grid {
                while i < run.curve.len() && run.curve[i].0 <= g {
                    last = run.curve[i].1;
                    i += 1;
                }
                out.push(last);
            }
            out
        })
        .collect();
    let base = runs[0].final_coverage.max(1e-12);
    let ratios = runs.iter().map(|r| r.final_coverage / base).collect();

    let mut by_agent: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for run in &runs {
        let entry = by_agent.entry(run.agent.clone()).or_insert((0.0, 0));
        entry.0 += run.final_coverage;
        entry.1 += 1;
    }
    let agent_means = by_agent
        .into_iter()
        .map(|(agent, (sum, n))| (agent, sum / n as f64))
        .collect();
    Ok(Comparison { runs, grid, curves, ratios, agent_means })
}

/// Write comparison.csv (curves) and comparison_summary.csv (final table).
pub fn write_comparison(cmp: &Comparison, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut curves = String::from("step");
    for run in &cmp.runs {
        curves.push_str(&format!(",{}", run.label));
    }
    curves.push('\n');
    for (gi, step) in cmp.grid.iter().enumerate() {
        curves.push_str(&step.to_string());
        for curve in &cmp.curves {
            curves.push_str(&format!(",{:.6}", curve[gi]));
        }
        curves.push('\n');
    }
    std::fs::write(out_dir.join("comparison.csv"), curves)?;

    let mut summary = String::from("run,agent,seed,map,visitable,final_coverage,ratio_vs_first\n");
    for (run, ratio) in cmp.runs.iter().zip(&cmp.ratios) {
        summary.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6}\n",
            run.label, run.agent, run.seed, run.map_key, run.visitable, run.final_coverage, ratio
        ));
    }
    summary.push('\n');
    summary.push_str("agent,mean_final_coverage\n");
    for (agent, mean) in &cmp.agent_means {
        summary.push_str(&format!("{agent},{mean:.6}\n"));
    }
    std::fs::write(out_dir.join("comparison_summary.csv"), summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_summary(label: &str, agent: &str, map_key: &str, final_cov: f64) -> RunSummary {
        RunSummary {
            dir: PathBuf::from(label),
            label: label.into(),
            agent: agent.into(),
            seed: 1,
            map_key: map_key.into(),
            visitable: 100,
            curve: vec![(1, final_cov / 2.0), (2, final_cov)],
            final_coverage: final_cov,
        }
    }

    #[test]
    fn self_comparison_has_unit_ratio() {
        let a = fake_summary("a", "curiosity", "m1", 0.8);
        let cmp = compare_runs(vec![a.clone(), a]).unwrap();
        assert!((cmp.ratios[0] - 1.0).abs() < 1e-12);
        assert!((cmp.ratios[1] - 1.0).abs() < 1e-12);
        assert_eq!(cmp.curves[0], cmp.curves[1]);
    }

    #[test]
    fn agent_means_stay_in_unit_interval() {
        let runs = vec![
            fake_summary("a", "curiosity", "m1", 0.9),
            fake_summary("b", "curiosity", "m2", 0.7),
            fake_summary("c", "random", "m1", 0.3),
            fake_summary("d", "random", "m2", 0.5),
        ];
        let cmp = compare_runs(runs).unwrap();
        for (_, mean) in &cmp.agent_means {
            assert!((0.0..=1.0).contains(mean));
        }
        let curiosity = cmp.agent_means.iter().find(|(a, _)| a == "curiosity").unwrap();
        assert!((curiosity.1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mismatched_map_suites_are_rejected() {
        let runs = vec![
            fake_summary("a", "curiosity", "m1", 0.9),
            fake_summary("b", "random", "m2", 0.3),
        ];
        assert!(compare_runs(runs).is_err());
    }
}
