//! Temporary pilot for the benchmark's worst seeds.

use equibus_core::optimizers::{genetic_search, random_search, train_rl, Budget, GaConfig};
use equibus_core::qnet::{QNetHyper, QNetworkParams};
use equibus_core::sub_seed;
use equibus_core::territory::generate_grid_scenario;

#[test]
#[ignore]
fn pilot_worst_seeds() {
    use rayon::prelude::*;
    let mut s = generate_grid_scenario::<f64>(
        6,
        6,
        1.0,
        &[vec![12, 13, 14, 15, 16, 17], vec![3, 9, 15, 21, 27, 33]],
        &vec![2.0; 36],
        0x5EED,
    )
    .unwrap();
    s.params.num_lines = 2;
    let budget = Budget::Seconds(120.0);
    let rl_only = std::env::var("PILOT_RL_ONLY").is_ok();
    let rows: Vec<_> = [5u32, 6, 8]
        .into_par_iter()
        .map(|trial| {
            let seed = sub_seed(0xB36C, &format!("bench-{trial}"));
            // Measured deterministic baselines for these seeds; re-used
            // when sweeping only the rl arm.
            let baseline = match trial {
                5 => 92.56590315152163,
                6 => 95.67303356038789,
                8 => 92.08378759317042,
                _ => unreachable!(),
            };
            let rnd_best = if rl_only {
                baseline
            } else {
                random_search(&s, 20.0, budget, seed, false).unwrap().best_value
            };
            let mut hyper = QNetHyper::<f64>::default();
            if let Ok(lr) = std::env::var("PILOT_LR") {
                hyper.learning_rate = lr.parse().unwrap();
            }
            if let Ok(d) = std::env::var("PILOT_EPS_DECAY") {
                hyper.eps_decay_steps = d.parse().unwrap();
            }
            if let Ok(e) = std::env::var("PILOT_EPS_END") {
                hyper.eps_end = e.parse().unwrap();
            }
            let params = QNetworkParams::init(hyper, 2, seed).unwrap();
            let (rl, trained) = train_rl(&s, 20.0, budget, 5, params, seed, false).unwrap();
            let ga_best = if rl_only {
                f64::NAN
            } else {
                genetic_search(&s, 20.0, budget, &GaConfig::default(), seed, false)
                    .unwrap()
                    .best_value
            };
            let finite = trained.weights.is_finite();
            eprintln!(
                "seed {trial}: random {rnd_best:.3}  rl {:.3} ({} ev, finite {finite})  ga {ga_best:.3}",
                rl.best_value, rl.evaluations
            );
            (rnd_best, rl.best_value, ga_best)
        })
        .collect();
    let mean_rl: f64 = rows.iter().map(|(r, a, _)| (a - r) / r).sum::<f64>() / rows.len() as f64;
    eprintln!("pilot mean rl {mean_rl:.5}");
}
