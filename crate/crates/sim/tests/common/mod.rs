#![allow(dead_code)]

use std::path::PathBuf;

use rayon::prelude::*;
use stratval_sim::events::EventLog;
use stratval_sim::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

/// Runs `seeds` in parallel; panics if any run aborts.
pub fn run_seeds(scenario: &Scenario, seeds: impl IntoParallelIterator<Item = u64>) -> Vec<EventLog> {
    seeds
        .into_par_iter()
        .map(|seed| {
            let out = stratval_sim::run(scenario, seed, false);
            assert!(out.aborted.is_none(), "seed {seed} aborted: {:?}", out.aborted);
            out.log
        })
        .collect()
}

/// Restores strictly increasing sequence numbers after records were inserted or removed.
pub fn renumber(log: &mut EventLog) {
    for (i, r) in log.records.iter_mut().enumerate() {
        r.seq = i as u64;
    }
}

pub fn metric(metrics: &[(String, f64)], name: &str) -> Option<f64> {
    metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
}
