//! Cross-checks of the library against the independent brute-force
//! oracles (exhaustive path enumeration, permutation search, finite
//! differences, quadrature).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use equibus_core::accessibility::{per_centroid_accessibility, shortest_travel_times};
use equibus_core::mdp::{
    apply_action, enumerate_actions, evaluate_assignment, random_assignment, realize_lines,
    realize_state, reward, sort_line, LineAssignment,
};
use equibus_core::qnet::{
    build_features, forward, loss_and_grads, FeatureExtractor, QNetHyper, QNetworkParams,
    StepSample,
};
use equibus_core::stats::{one_sample_ttest, student_t_cdf};
use equibus_core::territory::{generate_grid_scenario, Point, Scenario, StopId};
use equibus_core::transit_graph::build_router_graph;
use equibus_oracles as oracle;

#[test]
fn dijkstra_matches_path_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE55);
    for trial in 0..10 {
        let s = oracle::random_small_scenario(&mut rng);
        let lines = oracle::random_bus_lines(&s, &mut rng);
        let g = build_router_graph(&s, &lines).unwrap();
        for c in &s.centroids {
            let fast = shortest_travel_times(&g, c.id).unwrap();
            let slow = oracle::brute_force_travel_times(&g, &s, c.id);
            for (pid, t) in &fast {
                let expected = slow[pid];
                assert!(
                    (t - expected).abs() <= 1e-9,
                    "trial {trial}, centroid {}, poi {}: dijkstra {t} vs enumeration {expected}",
                    c.id.0,
                    pid.0
                );
            }
        }
    }
}

#[test]
fn hand_checked_two_stop_itinerary() {
    // Centroid at stop A, PoI at stop B 7 km away, line A-B with headway 6
    // (fleet sized to make Eq-1 give 6): wait 3 + ride 15 = 18 minutes,
    // beating the 93.3-minute walk. All itinerary types enumerated by
    // hand: direct walk 93.33; board at A ride to B walk 0 -> 18; board
    // at B is impossible from the centroid side faster than 18.
    let mut s = generate_grid_scenario::<f64>(2, 1, 1.0, &[], &[1.0, 0.0], 4).unwrap();
    s.stops[0].location = Point::new(0.0, 0.0);
    s.stops[1].location = Point::new(7.0, 0.0);
    s.centroids[0].location = Point::new(0.0, 0.0);
    s.centroids[1].location = Point::new(50.0, 50.0);
    s.pois[0].location = Point::new(7.0, 0.0);
    s.params.fleet_per_line = 5; // headway = 60*7/(28*5) = 3 -> wait 1.5
    s.params.num_lines = 1;
    let line =
        equibus_core::transit_graph::BusLine::from_ordered_stops(0, vec![StopId(0), StopId(1)], &s)
            .unwrap();
    assert_eq!(line.headway_minutes, 3.0);
    let g = build_router_graph(&s, &[line]).unwrap();
    let times = shortest_travel_times(&g, equibus_core::territory::CentroidId(0)).unwrap();
    assert_eq!(times[&equibus_core::territory::PoiId(0)], 1.5 + 15.0);

    // And with fleet 10 on a 14 km out-and-back length the spec's
    // wait-3-ride-15 variant: force headway 6 by doubling line length.
    let mut s2 = s.clone();
    s2.params.fleet_per_line = 10;
    // length 28 km: A-B-far-away chain would change geometry; instead set
    // bus fleet so 60*7/(28*N) = 3 -> N = 5 as above. The 18-minute
    // variant needs headway 6: 60*7/(28*N) = 6 -> N = 2.5, not integral,
    // so pin it directly on the line.
    let mut line6 =
        equibus_core::transit_graph::BusLine::from_ordered_stops(0, vec![StopId(0), StopId(1)], &s2)
            .unwrap();
    line6.headway_minutes = 6.0;
    let g6 = build_router_graph(&s2, &[line6]).unwrap();
    let times6 = shortest_travel_times(&g6, equibus_core::territory::CentroidId(0)).unwrap();
    assert_eq!(times6[&equibus_core::territory::PoiId(0)], 3.0 + 15.0);
}

#[test]
fn nearest_neighbor_ordering_never_beats_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let stops: Vec<(StopId, Point<f64>)> = (0..6)
            .map(|i| {
                (
                    StopId(i),
                    Point::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)),
                )
            })
            .collect();
        let order = sort_line(&stops);
        let loc = |id: &StopId| stops.iter().find(|(s, _)| s == id).unwrap().1;
        let heuristic: f64 = order.windows(2).map(|w| loc(&w[0]).distance(&loc(&w[1]))).sum();
        let points: Vec<Point<f64>> = stops.iter().map(|(_, p)| *p).collect();
        let optimum = oracle::shortest_hamiltonian_path(&points);
        assert!(
            heuristic >= optimum - 1e-12,
            "heuristic {heuristic} shorter than optimum {optimum}"
        );
        // And on collinear inputs it attains the optimum.
    }
    let collinear: Vec<(StopId, Point<f64>)> = (0..5)
        .map(|i| (StopId(i), Point::new(i as f64, 0.0)))
        .collect();
    let order = sort_line(&collinear);
    let len: f64 = order
        .windows(2)
        .map(|w| (w[0].0 as f64 - w[1].0 as f64).abs())
        .sum();
    assert_eq!(len, 4.0);
}

#[test]
fn reward_matches_independent_recomputation() {
    // 6 stops, k = 2: recompute both sides of the reward with the
    // brute-force accessibility pipeline.
    let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[vec![0, 4]], &vec![1.0; 6], 99).unwrap();
    s.params.num_lines = 2;
    let st = LineAssignment::new(2, vec![0, 1, 0, 1, 0, 1]).unwrap();
    let a = enumerate_actions(&st)[2];
    let next = apply_action(&st, &a).unwrap();
    let q = 20.0;

    let r = reward(&s, &st, &a, q).unwrap();

    let acc_of = |state: &LineAssignment| -> f64 {
        let (_, g) = realize_state(&s, state).unwrap();
        let per = oracle::brute_force_accessibility(&s, &g);
        oracle::brute_force_quantile(&per, q)
    };
    let expected = acc_of(&next) - acc_of(&st);
    assert!(
        (r - expected).abs() <= 1e-9,
        "reward {r} vs oracle {expected}"
    );
}

#[test]
fn reward_telescopes_along_action_sequences() {
    let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![1.0; 6], 5).unwrap();
    s.params.num_lines = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let mut st = random_assignment(6, 2, &mut rng);
        let first = st.clone();
        let mut total = 0.0;
        for _ in 0..5 {
            let actions = enumerate_actions(&st);
            let a = actions[rng.gen_range(0..actions.len())];
            total += reward(&s, &st, &a, 20.0).unwrap();
            st = apply_action(&st, &a).unwrap();
        }
        let direct = evaluate_assignment(&s, &st, 20.0, false).unwrap()
            - evaluate_assignment(&s, &first, 20.0, false).unwrap();
        assert!((total - direct).abs() <= 1e-9);
    }
}

#[test]
fn adding_a_line_never_reduces_accessibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    for _ in 0..10 {
        let s = oracle::random_small_scenario(&mut rng);
        let mut lines = oracle::random_bus_lines(&s, &mut rng);
        let extra = lines.pop().unwrap();
        let g_without = build_router_graph(&s, &lines).unwrap();
        let g_with = build_router_graph(
            &s,
            &lines.iter().cloned().chain([extra]).collect::<Vec<_>>(),
        )
        .unwrap();
        // The grown graph only gains nodes and service edges.
        assert!(g_with.node_count() >= g_without.node_count());
        let (c0, c1) = (g_without.edge_counts(), g_with.edge_counts());
        assert!(c1.boarding >= c0.boarding && c1.riding >= c0.riding);
        assert_eq!(c1.walking, c0.walking);
        let before = per_centroid_accessibility(&s, &g_without, false).unwrap();
        let after = per_centroid_accessibility(&s, &g_with, false).unwrap();
        for (id, b) in &before {
            assert!(
                after[id] >= *b,
                "centroid {} accessibility dropped from {b} to {}",
                id.0,
                after[id]
            );
        }
    }
}

#[test]
fn forward_is_equivariant_under_stop_relabeling() {
    let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[vec![0, 5]], &vec![1.0; 6], 12).unwrap();
    s.params.num_lines = 2;
    let st = LineAssignment::new(2, vec![0, 1, 0, 1, 0, 1]).unwrap();
    let lines = realize_lines(&s, &st).unwrap();
    let (nf, adj) = build_features(&s, &st, &lines).unwrap();
    let params = QNetworkParams::init(
        QNetHyper {
            embed_dim: 6,
            edge_dim: 4,
            msg_dim: 5,
            rounds: 2,
            ..Default::default()
        },
        2,
        77,
    )
    .unwrap();
    let base = forward(&params, &nf, &adj, &st).unwrap();

    // Permute candidate indices and rebuild features/adjacency/state
    // consistently.
    let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2]; // perm[i] = new index of stop i
    let n = 6;
    let mut x2 = ndarray::Array2::<f64>::zeros(nf.matrix.raw_dim());
    let mut a2 = ndarray::Array2::<u8>::zeros(adj.matrix.raw_dim());
    let mut line_of2 = vec![0u32; n];
    for i in 0..n {
        for col in 0..nf.matrix.ncols() {
            x2[[perm[i], col]] = nf.matrix[[i, col]];
        }
        line_of2[perm[i]] = st.line_of(i);
        for j in 0..n {
            a2[[perm[i], perm[j]]] = adj.matrix[[i, j]];
        }
    }
    let st2 = LineAssignment::new(2, line_of2).unwrap();
    let permuted = forward(
        &params,
        &equibus_core::qnet::NodeFeatures { matrix: x2 },
        &equibus_core::qnet::AdjacencyMatrix { matrix: a2 },
        &st2,
    )
    .unwrap();

    assert_eq!(base.len(), permuted.len());
    for (a, q) in &base {
        let mapped = equibus_core::mdp::Action {
            stop: perm[a.stop],
            target_line: a.target_line,
        };
        let (_, q2) = permuted.iter().find(|(b, _)| *b == mapped).unwrap();
        assert!(
            (q - q2).abs() <= 1e-9,
            "Q({:?}) = {q} but Q({mapped:?}) = {q2}",
            a
        );
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[vec![0, 4]], &vec![1.0; 6], 31).unwrap();
    s.params.num_lines = 2;
    let extractor = FeatureExtractor::new(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..3 {
        let st = random_assignment(6, 2, &mut rng);
        let actions = enumerate_actions(&st);
        let action = actions[rng.gen_range(0..actions.len())];
        let next = apply_action(&st, &action).unwrap();
        let lines = realize_lines(&s, &st).unwrap();
        let next_lines = realize_lines(&s, &next).unwrap();
        let (nf, adj) = extractor.build(&st, &lines).unwrap();
        let (nf2, adj2) = extractor.build(&next, &next_lines).unwrap();
        let params = QNetworkParams::init(
            QNetHyper {
                embed_dim: 5,
                edge_dim: 4,
                msg_dim: 6,
                rounds: 2,
                ..Default::default()
            },
            2,
            1000 + trial,
        )
        .unwrap();
        let sample = StepSample {
            features: &nf,
            adjacency: &adj,
            state: &st,
            action,
            reward: 0.3,
            next_features: &nf2,
            next_adjacency: &adj2,
            next_state: &next,
        };
        let (_, analytic) = loss_and_grads(&params, &sample, 0.95).unwrap();
        let fd = oracle::finite_difference_grads(&params, &sample, 0.95, 1e-5);
        let a = oracle::flatten_weights(&analytic);
        let f = oracle::flatten_weights(&fd);
        for (idx, (ga, gf)) in a.iter().zip(&f).enumerate() {
            let denom = ga.abs().max(gf.abs()).max(1e-7);
            assert!(
                (ga - gf).abs() / denom <= 1e-4,
                "trial {trial}, weight {idx}: analytic {ga} vs fd {gf}"
            );
        }
    }
}

#[test]
fn t_test_p_values_match_quadrature() {
    // Scattered t statistics and dof.
    for (t, df) in [(0.0, 5.0), (1.0, 2.0), (2.5, 9.0), (-1.7, 30.0), (3.46, 2.0)] {
        let cdf = student_t_cdf(t, df);
        let qcdf = oracle::t_cdf_quadrature(t, df);
        assert!(
            (cdf - qcdf).abs() <= 1e-10,
            "t={t}, df={df}: {cdf} vs {qcdf}"
        );
    }
    // Through the full test on a mean-shifted sample.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let samples: Vec<f64> = (0..100).map(|_| 0.05 + rng.gen_range(-0.5..0.5)).collect();
    let tt = one_sample_ttest(&samples, 0.0).unwrap();
    let p_oracle = 2.0 * (1.0 - oracle::t_cdf_quadrature(tt.t_statistic.abs(), tt.df));
    assert!((tt.p_two_sided - p_oracle).abs() <= 1e-6);
}

#[test]
fn random_assignment_matches_conditioned_uniform_law() {
    // n_b = 4, k = 2: 14 valid assignments; line-0 sizes 1, 2, 3 occur
    // with probabilities 4/14, 6/14, 4/14.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let st = random_assignment(4, 2, &mut rng);
        counts[st.line_sizes()[0] - 1] += 1;
    }
    for (i, p) in [(0usize, 4.0 / 14.0), (1, 6.0 / 14.0), (2, 4.0 / 14.0)] {
        let expect = p * n as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let diff = (counts[i] as f64 - expect).abs();
        assert!(
            diff <= 3.0 * sigma,
            "size {} observed {} expected {expect} (3 sigma = {})",
            i + 1,
            counts[i],
            3.0 * sigma
        );
    }
}

#[test]
fn optimizer_best_values_are_reproducible_by_reevaluation() {
    let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![2.0; 6], 17).unwrap();
    s.params.num_lines = 2;
    let q = 20.0;
    let budget = equibus_core::optimizers::Budget::Evaluations(30);

    let rs = equibus_core::optimizers::random_search(&s, q, budget, 3, false).unwrap();
    assert_eq!(
        rs.best_value,
        evaluate_assignment(&s, &rs.best_assignment, q, false).unwrap()
    );

    let ga = equibus_core::optimizers::genetic_search(
        &s,
        q,
        budget,
        &equibus_core::optimizers::GaConfig {
            n_pop: 6,
            n_par: 3,
            p_mut: 0.1,
            tournament_size: 2,
        },
        3,
        false,
    )
    .unwrap();
    assert_eq!(
        ga.best_value,
        evaluate_assignment(&s, &ga.best_assignment, q, false).unwrap()
    );

    let params = QNetworkParams::init(
        QNetHyper {
            embed_dim: 4,
            edge_dim: 3,
            msg_dim: 4,
            rounds: 1,
            ..Default::default()
        },
        2,
        3,
    )
    .unwrap();
    let (rl, _) =
        equibus_core::optimizers::train_rl(&s, q, budget, 5, params, 3, false).unwrap();
    assert_eq!(
        rl.best_value,
        evaluate_assignment(&s, &rl.best_assignment, q, false).unwrap()
    );
}

/// A scenario where a stop belongs to a richer PoI cluster only reachable
/// by transfer through the metro: exercises transfer waits end to end.
#[test]
fn transfer_itineraries_pay_next_line_wait() {
    let s = oracle::tiny_transfer_scenario();
    s.validate().unwrap();
    let st = LineAssignment::new(1, vec![0, 0]).unwrap();
    let (_, g) = realize_state(&s, &st).unwrap();
    for c in &s.centroids {
        let fast = shortest_travel_times(&g, c.id).unwrap();
        let slow = oracle::brute_force_travel_times(&g, &s, c.id);
        for (pid, t) in &fast {
            assert!((t - slow[pid]).abs() <= 1e-9);
        }
    }
}

/// The generic-scalar core gives consistent answers in single precision.
#[test]
fn single_precision_pipeline_tracks_double_precision() {
    let s64: Scenario<f64> =
        generate_grid_scenario(3, 2, 1.0, &[vec![0, 4]], &vec![1.0; 6], 77).unwrap();
    let text = serde_json::to_string(&s64).unwrap();
    let s32: Scenario<f32> = serde_json::from_str(&text).unwrap();
    s32.validate().unwrap();

    let st = LineAssignment::new(3, vec![0, 1, 2, 0, 1, 2]).unwrap();
    let acc64 = evaluate_assignment(&s64, &st, 20.0, false).unwrap();
    let acc32 = evaluate_assignment(&s32, &st, 20.0, false).unwrap();
    assert!(
        (acc64 - f64::from(acc32)).abs() < 1e-3 * acc64.abs().max(1.0),
        "f64 {acc64} vs f32 {acc32}"
    );
}
