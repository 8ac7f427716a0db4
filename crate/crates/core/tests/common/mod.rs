#![allow(dead_code)]

use std::path::PathBuf;

use bearing_formation::formation::{self, bearings_of, BearingLaplacian, FormationGraph};
use bearing_formation::scenario::ScenarioDocument;
use bearing_formation::Scenario;
use nalgebra::DVector;
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn load_scenario(name: &str, overrides: &[&str]) -> Scenario {
    let mut doc = ScenarioDocument::load(&scenario_path(name)).expect("bundled scenario loads");
    doc.apply_overrides(overrides).expect("overrides apply");
    doc.parse()
        .expect("bundled scenario parses")
        .to_scenario(name)
        .expect("bundled scenario builds")
}

pub fn bundled_scenarios() -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .expect("scenarios directory")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "json").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

/// Random formation with a unique target: positions in `[-5, 5]^d`, pairs at
/// least `min_gap` apart, each pair connected with probability 0.6.
pub fn random_unique_formation<R: Rng>(
    rng: &mut R,
    n_max: usize,
    d: usize,
    min_gap: f64,
) -> (FormationGraph, DVector<f64>, BearingLaplacian) {
    loop {
        let n = rng.random_range(3..=n_max);
        let n_leaders = rng.random_range(2..=(n - 1).min(3));
        let positions = DVector::from_fn(n * d, |_, _| rng.random_range(-5.0..5.0));
        if formation::min_pairwise_distance(&positions, d) < min_gap {
            continue;
        }
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(0.6) {
                    pairs.push((i, j));
                }
            }
        }
        let Ok(graph) = FormationGraph::from_undirected(n, d, n_leaders, &pairs) else {
            continue;
        };
        let Ok(spec) = bearings_of(&positions, &graph) else { continue };
        let Ok(l) = BearingLaplacian::build(&graph, &spec) else { continue };
        if formation::check_uniqueness(&l).unique {
            return (graph, positions, l);
        }
    }
}
