mod common;

use common::{pagerank_oracle, random_graph};
use proptest::prelude::*;
use rand::Rng;
use saug_core::pagerank::{pagerank, partition_nodes, sample_nodes, SamplerOptions, TailPolicy};
use saug_core::rng::seeded;

#[test]
fn matches_dense_solve_on_random_graphs() {
    let mut rng = seeded(7, "graph-sizes");
    for k in 0..25 {
        let n = rng.gen_range(1..=50);
        let p = rng.gen_range(0.0..0.3);
        let g = random_graph(n, 2, 2, p, k);
        let ours = pagerank(&g, 0.85, 1e-12, 1000).unwrap();
        let oracle = pagerank_oracle(&g, 0.85);
        assert!(ours.converged);
        for (a, b) in ours.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "graph {k}: {a} vs {b}");
        }
        assert!((ours.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_agreement_for_any_damping(n in 1usize..30, p in 0.0f64..0.5, damping in 0.05f64..0.95, seed: u64) {
        let g = random_graph(n, 1, 1, p, seed);
        let ours = pagerank(&g, damping, 1e-13, 5000).unwrap();
        for (a, b) in ours.values.iter().zip(pagerank_oracle(&g, damping)) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn partition_rules(n in 5usize..40, p in 0.05f64..0.5, k in 1.0f64..4.0, m in 1.0f64..100.0, seed: u64) {
        let g = random_graph(n, 1, 1, p, seed);
        let pr = pagerank(&g, 0.85, 1e-10, 500).unwrap();
        let cut = k * pr.mean();
        match partition_nodes(&pr, k, m, TailPolicy::Lowest) {
            Ok(part) => {
                for v in 0..n {
                    prop_assert_eq!(part.is_hub(v), pr.values[v] >= cut);
                    prop_assert!(!(part.is_hub(v) && part.is_tail(v)));
                }
                let rest = n - part.hubs.len();
                prop_assert_eq!(part.tails.len(), (m / 100.0 * rest as f64).floor() as usize);
                // Every tail ranks at or below every other non-hub.
                let worst_tail = part.tails.iter().map(|&t| pr.values[t]).fold(f64::MIN, f64::max);
                for v in (0..n).filter(|&v| !part.is_hub(v) && !part.is_tail(v)) {
                    prop_assert!(pr.values[v] >= worst_tail);
                }
            }
            Err(_) => {
                let rest = pr.values.iter().filter(|&&x| x < cut).count();
                prop_assert!(rest == 0 || (m / 100.0 * rest as f64).floor() == 0.0);
            }
        }
    }
}

#[test]
fn default_options_on_a_power_law_graph() {
    let g = saug_core::graph::generate_powerlaw(300, 2, 8, 3, 5).unwrap();
    let part = sample_nodes(&g, &SamplerOptions::default()).unwrap();
    assert!(!part.hubs.is_empty());
    assert_eq!(part.tails.len(), (0.3 * (300 - part.hubs.len()) as f64).floor() as usize);
}
