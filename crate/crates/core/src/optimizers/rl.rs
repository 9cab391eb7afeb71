//! Online Q-learning search and the greedy test-time policy.
//!
//! Training loops episodes until the budget runs out: each episode starts
//! from a fresh random partition, takes epsilon-greedy actions scored by
//! the Q-network, and performs one SGD update whenever a step improves on
//! the episode's best value; an episode ends after `stall_limit`
//! non-improving steps. The globally best state seen anywhere is the
//! result.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BestTracker, Budget, OptimizerResult};
use crate::error::Result;
use crate::mdp::{apply_action, enumerate_actions, random_assignment, Action, StateEvaluator};
use crate::qnet::{
    embed, forward, loss_and_grads_from, q_values, sgd_step, FeatureExtractor, QNetworkParams,
};
use crate::rng::sub_seed;
use crate::scalar::Scalar;
use crate::territory::Scenario;

/// Argmax over Q-values; ties resolve to the earliest action in
/// enumeration order.
pub(crate) fn choose_greedy<S: Scalar>(qs: &[(Action, S)]) -> Option<Action> {
    let mut best: Option<(Action, S)> = None;
    for &(a, q) in qs {
        match best {
            Some((_, bq)) if bq >= q => {}
            _ => best = Some((a, q)),
        }
    }
    best.map(|(a, _)| a)
}

fn epsilon(start: f64, end: f64, decay_steps: u64, actions_taken: u64) -> f64 {
    if decay_steps == 0 {
        return end;
    }
    let frac = (actions_taken as f64 / decay_steps as f64).min(1.0);
    start + (end - start) * frac
}

/// Train the Q-network online while searching, returning the best state
/// found and the updated weights.
pub fn train_rl<S: Scalar>(
    s: &Scenario<S>,
    q: f64,
    budget: Budget,
    stall_limit: u32,
    params: QNetworkParams<S>,
    seed: u64,
    parallel: bool,
) -> Result<(OptimizerResult<S>, QNetworkParams<S>)> {
    let (mut results, params) =
        train_rl_multi(std::slice::from_ref(s), q, budget, stall_limit, params, seed, parallel)?;
    Ok((results.pop().expect("one result per scenario"), params))
}

struct ScenarioCtx<'a, S: Scalar> {
    extractor: FeatureExtractor<S>,
    evaluator: StateEvaluator<'a, S>,
    tracker: BestTracker<S>,
    n_b: usize,
    k: usize,
    /// Set when the scenario admits no actions (k = 1 or one stop per
    /// line): its episodes are a single evaluation.
    frozen: bool,
}

/// Online training across a list of scenarios: episodes cycle round-robin
/// through the scenarios (each episode draws a fresh random partition of
/// its scenario), while a single network learns from all of them. Every
/// scenario must design the same number of lines, since the feature width
/// depends on it. Returns one best-state result per scenario plus the
/// trained weights. Each scenario is evaluated at least once, even under
/// a degenerate budget.
pub fn train_rl_multi<S: Scalar>(
    scenarios: &[Scenario<S>],
    q: f64,
    budget: Budget,
    stall_limit: u32,
    mut params: QNetworkParams<S>,
    seed: u64,
    parallel: bool,
) -> Result<(Vec<OptimizerResult<S>>, QNetworkParams<S>)> {
    assert!(stall_limit >= 1);
    if scenarios.is_empty() {
        return Err(crate::error::Error::Config(
            "training needs at least one scenario".into(),
        ));
    }
    let k0 = scenarios[0].params.num_lines;
    if scenarios.iter().any(|s| s.params.num_lines != k0) {
        return Err(crate::error::Error::Config(
            "all training scenarios must design the same number of lines".into(),
        ));
    }

    let start = Instant::now();
    let mut contexts: Vec<ScenarioCtx<'_, S>> = scenarios
        .iter()
        .map(|s| {
            Ok(ScenarioCtx {
                extractor: FeatureExtractor::new(s)?,
                evaluator: StateEvaluator::new(s, q, parallel),
                tracker: BestTracker::new(start),
                n_b: s.num_candidates(),
                k: s.params.num_lines as usize,
                frozen: false,
            })
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "train-rl"));
    let hyper = params.hyper;
    let mut actions_taken: u64 = 0;
    let total_evals =
        |ctxs: &[ScenarioCtx<'_, S>]| ctxs.iter().map(|c| c.evaluator.evaluations()).sum::<u64>();

    let mut episode = 0usize;
    'run: loop {
        let idx = episode % contexts.len();
        episode += 1;
        if contexts[idx].frozen && contexts.iter().all(|c| c.frozen) {
            break 'run;
        }
        if contexts[idx].frozen {
            continue;
        }
        let (n_b, k) = (contexts[idx].n_b, contexts[idx].k);

        contexts[idx].evaluator.clear_cache();
        let mut st = random_assignment(n_b, k, &mut rng);
        let mut entry = contexts[idx].evaluator.eval(&st)?;
        let evals = total_evals(&contexts);
        contexts[idx].tracker.offer(entry.acc_q, &st, evals);
        // Degenerate budgets still grant every scenario its initial
        // evaluation before the run stops.
        if budget.exceeded(start, evals) && episode >= contexts.len() {
            break 'run;
        }

        let (mut features, mut adjacency) = contexts[idx].extractor.build(&st, &entry.lines)?;
        let mut embeddings = embed(&params, &features, &adjacency)?;
        let mut episode_best = entry.acc_q;
        let mut stall = 0u32;
        loop {
            let actions = enumerate_actions(&st);
            if actions.is_empty() {
                contexts[idx].frozen = true;
                if contexts.iter().all(|c| c.frozen) {
                    break 'run;
                }
                break;
            }
            let eps = epsilon(
                hyper.eps_start,
                hyper.eps_end,
                hyper.eps_decay_steps,
                actions_taken,
            );
            let action = if rng.gen::<f64>() < eps {
                actions[rng.gen_range(0..actions.len())]
            } else {
                let qs = q_values(&params, &embeddings, &st);
                choose_greedy(&qs).expect("admissible actions exist")
            };
            actions_taken += 1;

            let next = apply_action(&st, &action)?;
            let next_entry = contexts[idx].evaluator.eval(&next)?;
            let reward = next_entry.acc_q - entry.acc_q;
            let evals = total_evals(&contexts);
            contexts[idx].tracker.offer(next_entry.acc_q, &next, evals);

            let (next_features, next_adjacency) =
                contexts[idx].extractor.build(&next, &next_entry.lines)?;
            let mut next_embeddings = embed(&params, &next_features, &next_adjacency)?;

            if next_entry.acc_q > episode_best {
                episode_best = next_entry.acc_q;
                stall = 0;
                let (_, mut grads) = loss_and_grads_from(
                    &params,
                    &embeddings,
                    &st,
                    action,
                    reward,
                    &next_embeddings,
                    &next,
                    hyper.gamma,
                );
                if let Some(max_norm) = hyper.grad_clip_norm {
                    grads.clip_global_norm(max_norm);
                }
                // Training must never corrupt the weights; a non-finite
                // update is dropped and the search simply continues.
                if grads.is_finite() {
                    sgd_step(&mut params, &grads, hyper.learning_rate);
                    // The successor's embeddings feed the next greedy
                    // choice and must reflect the updated weights.
                    next_embeddings = embed(&params, &next_features, &next_adjacency)?;
                }
            } else {
                stall += 1;
            }

            st = next;
            entry = next_entry;
            features = next_features;
            adjacency = next_adjacency;
            embeddings = next_embeddings;
            if budget.exceeded(start, total_evals(&contexts)) {
                if episode >= contexts.len() {
                    break 'run;
                }
                break;
            }
            if stall >= stall_limit {
                break;
            }
        }
    }

    // A scenario the loop never reached still reports its seeded initial
    // state.
    for ctx in &mut contexts {
        if !ctx.tracker.has_best() {
            let st = random_assignment(ctx.n_b, ctx.k, &mut rng);
            let entry = ctx.evaluator.eval(&st)?;
            let evals = ctx.evaluator.evaluations();
            ctx.tracker.offer(entry.acc_q, &st, evals);
        }
    }
    let evals = total_evals(&contexts);
    let results = contexts
        .into_iter()
        .map(|c| c.tracker.finish(evals))
        .collect();
    Ok((results, params))
}

/// Greedy rollout with trained weights: follow the argmax action while it
/// improves quantile accessibility; at a local optimum take one uniformly
/// random admissible action instead and keep going. No weight updates.
pub fn test_policy<S: Scalar>(
    s: &Scenario<S>,
    q: f64,
    budget: Budget,
    params: &QNetworkParams<S>,
    seed: u64,
    parallel: bool,
) -> Result<OptimizerResult<S>> {
    let start = Instant::now();
    let extractor = FeatureExtractor::new(s)?;
    let mut evaluator = StateEvaluator::new(s, q, parallel);
    let mut tracker = BestTracker::new(start);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "test-policy"));
    let n_b = s.num_candidates();
    let k = s.params.num_lines as usize;

    let mut st = random_assignment(n_b, k, &mut rng);
    let mut entry = evaluator.eval(&st)?;
    tracker.offer(entry.acc_q, &st, evaluator.evaluations());

    // Budget against eval requests (cache hits included): a rollout can
    // revisit a fully cached state space without new computations.
    while !budget.exceeded(start, evaluator.requests()) {
        let actions = enumerate_actions(&st);
        if actions.is_empty() {
            break;
        }
        if evaluator.cache_len() > 4096 {
            evaluator.clear_cache();
        }
        let (features, adjacency) = extractor.build(&st, &entry.lines)?;
        let qs = forward(params, &features, &adjacency, &st)?;
        let greedy = choose_greedy(&qs).expect("admissible actions exist");
        let candidate = apply_action(&st, &greedy)?;
        let cand_entry = evaluator.eval(&candidate)?;
        tracker.offer(cand_entry.acc_q, &candidate, evaluator.evaluations());

        if cand_entry.acc_q > entry.acc_q {
            st = candidate;
            entry = cand_entry;
            continue;
        }
        if budget.exceeded(start, evaluator.requests()) {
            break;
        }
        // The greedy move does not improve: treat the state as a local
        // optimum and explore with one uniformly random admissible action.
        let action = actions[rng.gen_range(0..actions.len())];
        let next = apply_action(&st, &action)?;
        let next_entry = evaluator.eval(&next)?;
        tracker.offer(next_entry.acc_q, &next, evaluator.evaluations());
        st = next;
        entry = next_entry;
    }

    Ok(tracker.finish(evaluator.evaluations()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::QNetHyper;
    use crate::territory::generate_grid_scenario;

    fn tiny_hyper() -> QNetHyper<f64> {
        QNetHyper {
            embed_dim: 4,
            edge_dim: 3,
            msg_dim: 4,
            rounds: 1,
            ..Default::default()
        }
    }

    fn scenario_k2() -> Scenario<f64> {
        let mut s = generate_grid_scenario(3, 2, 1.0, &[], &vec![1.0; 6], 31).unwrap();
        s.params.num_lines = 2;
        s
    }

    #[test]
    fn greedy_tie_break_is_first_index() {
        let a0 = Action { stop: 0, target_line: 1 };
        let a1 = Action { stop: 1, target_line: 1 };
        let qs = vec![(a0, 0.0), (a1, 0.0)];
        assert_eq!(choose_greedy(&qs), Some(a0));
        let qs = vec![(a0, -1.0), (a1, 2.0)];
        assert_eq!(choose_greedy(&qs), Some(a1));
        assert_eq!(choose_greedy::<f64>(&[]), None);
    }

    #[test]
    fn epsilon_anneals_linearly() {
        assert_eq!(epsilon(1.0, 0.05, 200, 0), 1.0);
        assert!((epsilon(1.0, 0.05, 200, 200) - 0.05).abs() < 1e-12);
        assert!((epsilon(1.0, 0.05, 200, 10_000) - 0.05).abs() < 1e-12);
        let mid = epsilon(1.0, 0.05, 200, 100);
        assert!((mid - 0.525).abs() < 1e-12);
    }

    #[test]
    fn degenerate_budget_returns_first_initial_state() {
        let s = scenario_k2();
        let params = QNetworkParams::init(tiny_hyper(), 2, 1).unwrap();
        let (r, _) = train_rl(&s, 20.0, Budget::Evaluations(1), 5, params, 3, false).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(
            r.best_value,
            crate::mdp::evaluate_assignment(&s, &r.best_assignment, 20.0, false).unwrap()
        );
    }

    #[test]
    fn frozen_search_space_returns_initial_value() {
        // One stop per line: no admissible actions anywhere.
        let mut s = generate_grid_scenario(2, 1, 1.0, &[], &vec![1.0; 2], 31).unwrap();
        s.params.num_lines = 2;
        let params = QNetworkParams::init(tiny_hyper(), 2, 1).unwrap();
        let (r, _) =
            train_rl(&s, 20.0, Budget::Evaluations(100), 5, params, 3, false).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best_assignment.line_sizes(), vec![1, 1]);
    }

    #[test]
    fn training_is_deterministic_under_evaluation_budget() {
        let s = scenario_k2();
        let params = QNetworkParams::init(tiny_hyper(), 2, 7).unwrap();
        let (r1, p1) =
            train_rl(&s, 20.0, Budget::Evaluations(40), 5, params.clone(), 9, false).unwrap();
        let (r2, p2) = train_rl(&s, 20.0, Budget::Evaluations(40), 5, params, 9, false).unwrap();
        assert_eq!(r1.best_value, r2.best_value);
        assert_eq!(r1.best_assignment, r2.best_assignment);
        assert_eq!(p1, p2);
    }

    #[test]
    fn multi_scenario_training_reports_per_scenario_bests() {
        let mut a = generate_grid_scenario(3, 2, 1.0, &[], &vec![1.0; 6], 41).unwrap();
        a.params.num_lines = 2;
        let mut b = generate_grid_scenario(3, 2, 1.5, &[vec![0, 5]], &vec![2.0; 6], 42).unwrap();
        b.params.num_lines = 2;
        let scenarios = vec![a.clone(), b.clone()];
        let params = QNetworkParams::init(tiny_hyper(), 2, 7).unwrap();
        let (results, _) = train_rl_multi(
            &scenarios,
            20.0,
            Budget::Evaluations(60),
            5,
            params.clone(),
            9,
            false,
        )
        .unwrap();
        assert_eq!(results.len(), 2);
        for (s, r) in scenarios.iter().zip(&results) {
            assert_eq!(
                r.best_value,
                crate::mdp::evaluate_assignment(s, &r.best_assignment, 20.0, false).unwrap()
            );
        }
        // Deterministic.
        let (again, _) = train_rl_multi(
            &scenarios,
            20.0,
            Budget::Evaluations(60),
            5,
            params,
            9,
            false,
        )
        .unwrap();
        assert_eq!(results[0].best_value, again[0].best_value);
        assert_eq!(results[1].best_assignment, again[1].best_assignment);
    }

    #[test]
    fn multi_scenario_degenerate_budget_still_covers_every_scenario() {
        let mut a = generate_grid_scenario(3, 2, 1.0, &[], &vec![1.0; 6], 41).unwrap();
        a.params.num_lines = 2;
        let b = a.clone();
        let params = QNetworkParams::init(tiny_hyper(), 2, 7).unwrap();
        let (results, _) = train_rl_multi(
            &[a, b],
            20.0,
            Budget::Evaluations(1),
            5,
            params,
            9,
            false,
        )
        .unwrap();
        assert_eq!(results.len(), 2);
    }

    #[test]
    fn multi_scenario_mismatched_line_counts_rejected() {
        let mut a = generate_grid_scenario(3, 2, 1.0, &[], &vec![1.0; 6], 41).unwrap();
        a.params.num_lines = 2;
        let mut b = a.clone();
        b.params.num_lines = 3;
        let params = QNetworkParams::init(tiny_hyper(), 2, 7).unwrap();
        assert!(train_rl_multi(
            &[a, b],
            20.0,
            Budget::Evaluations(10),
            5,
            params,
            9,
            false
        )
        .is_err());
    }

    #[test]
    fn test_policy_zero_params_terminates_and_is_deterministic() {
        let s = scenario_k2();
        let params = QNetworkParams::zeros(tiny_hyper(), 2).unwrap();
        let a = test_policy(&s, 20.0, Budget::Evaluations(30), &params, 4, false).unwrap();
        let b = test_policy(&s, 20.0, Budget::Evaluations(30), &params, 4, false).unwrap();
        assert_eq!(a.best_value, b.best_value);
        assert_eq!(a.best_assignment, b.best_assignment);
        assert_eq!(a.trajectory.len(), b.trajectory.len());
    }

    #[test]
    fn local_optimum_triggers_random_exploration() {
        // With no PoIs every state scores 0, so no greedy move ever
        // improves and every second evaluation comes from a random
        // exploration step; the rollout must keep moving rather than
        // terminate at the first non-improving argmax.
        let mut s = generate_grid_scenario(3, 1, 1.0, &[], &vec![0.0; 3], 31).unwrap();
        s.params.num_lines = 2;
        let params = QNetworkParams::zeros(tiny_hyper(), 2).unwrap();
        let r = test_policy(&s, 20.0, Budget::Evaluations(20), &params, 4, false).unwrap();
        assert_eq!(r.best_value, 0.0);
    }
}
