//! The deterministic search space over bus-line designs.
//!
//! A state assigns every candidate stop to exactly one of `k` lines (no
//! line may be empty); an action moves one stop to a different line.
//! Realizing a state orders each line's stops with a nearest-neighbor
//! path heuristic, derives lengths and headways, and builds the router
//! graph. The reward of an action is the quantile-accessibility delta
//! between the successor and the current state.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accessibility::{per_centroid_accessibility, quantile_accessibility};
use crate::error::{Error, Result};
use crate::rng::sub_seed;
use crate::scalar::Scalar;
use crate::territory::{Point, Scenario, StopId};
use crate::transit_graph::{build_router_graph, BusLine, RouterGraph};

/// Partition of the candidate stops into `k` lines. Candidate stops are
/// indexed by their position in the scenario's ascending-id candidate
/// list; `line_of[i]` is the line (in `0..k`) of candidate `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineAssignment {
    k: usize,
    line_of: Vec<u32>,
}

impl LineAssignment {
    /// Validating constructor: the map must be total with every line
    /// non-empty.
    pub fn new(k: usize, line_of: Vec<u32>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidAssignment("k must be at least 1".into()));
        }
        if line_of.len() < k {
            return Err(Error::InvalidAssignment(format!(
                "{} stops cannot fill {} lines",
                line_of.len(),
                k
            )));
        }
        let mut sizes = vec![0usize; k];
        for (i, &l) in line_of.iter().enumerate() {
            let l = l as usize;
            if l >= k {
                return Err(Error::InvalidAssignment(format!(
                    "stop index {i} assigned to line {l} outside 0..{k}"
                )));
            }
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidAssignment(format!("line {empty} is empty")));
        }
        Ok(LineAssignment { k, line_of })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_stops(&self) -> usize {
        self.line_of.len()
    }

    pub fn line_of(&self, stop: usize) -> u32 {
        self.line_of[stop]
    }

    pub fn assignments(&self) -> &[u32] {
        &self.line_of
    }

    /// Candidate indices on the given line, ascending.
    pub fn stops_on(&self, line: u32) -> Vec<usize> {
        self.line_of
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == line)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn line_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.line_of {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Move candidate stop `stop` (index into the candidate list) to
/// `target_line`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub stop: usize,
    pub target_line: u32,
}

/// Order a set of stops into a line with a best-of-all-starts
/// nearest-neighbor path: for every candidate start, greedily extend to
/// the nearest unvisited stop; keep the start whose total path length is
/// smallest. Ties (between next stops and between starts) break toward
/// the smaller stop id, so the result is independent of input order.
pub fn sort_line<S: Scalar>(stops: &[(StopId, Point<S>)]) -> Vec<StopId> {
    assert!(!stops.is_empty(), "sort_line requires at least one stop");
    let mut items: Vec<(StopId, Point<S>)> = stops.to_vec();
    items.sort_by_key(|(id, _)| *id);
    let n = items.len();
    if n == 1 {
        return vec![items[0].0];
    }

    let mut best_order: Option<Vec<usize>> = None;
    let mut best_len = S::infinity();
    for start in 0..n {
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        visited[start] = true;
        order.push(start);
        let mut total = S::zero();
        let mut current = start;
        for _ in 1..n {
            let mut next = None;
            let mut next_dist = S::infinity();
            for (j, item) in items.iter().enumerate() {
                if visited[j] {
                    continue;
                }
                let d = items[current].1.distance(&item.1);
                if d < next_dist {
                    next_dist = d;
                    next = Some(j);
                }
            }
            let j = next.expect("unvisited stop exists");
            visited[j] = true;
            total = total + next_dist;
            order.push(j);
            current = j;
        }
        if total < best_len {
            best_len = total;
            best_order = Some(order);
        }
    }
    best_order
        .expect("at least one start")
        .into_iter()
        .map(|i| items[i].0)
        .collect()
}

/// Realize a state: order every line, derive lengths and headways, and
/// build the router graph.
pub fn realize_state<S: Scalar>(
    s: &Scenario<S>,
    st: &LineAssignment,
) -> Result<(Vec<BusLine<S>>, RouterGraph<S>)> {
    let lines = realize_lines(s, st)?;
    let graph = build_router_graph(s, &lines)?;
    Ok((lines, graph))
}

/// The bus lines of a state, without building the graph.
pub fn realize_lines<S: Scalar>(
    s: &Scenario<S>,
    st: &LineAssignment,
) -> Result<Vec<BusLine<S>>> {
    let candidates = s.candidate_ids();
    if candidates.len() != st.num_stops() {
        return Err(Error::InvalidAssignment(format!(
            "assignment covers {} stops but scenario has {} candidates",
            st.num_stops(),
            candidates.len()
        )));
    }
    if st.k() != s.params.num_lines as usize {
        return Err(Error::InvalidAssignment(format!(
            "assignment has {} lines but scenario requires {}",
            st.k(),
            s.params.num_lines
        )));
    }
    let locs = s.stop_locations();
    let mut lines = Vec::with_capacity(st.k());
    for line in 0..st.k() as u32 {
        let members: Vec<(StopId, Point<S>)> = st
            .stops_on(line)
            .into_iter()
            .map(|i| (candidates[i], locs[&candidates[i]]))
            .collect();
        let ordered = sort_line(&members);
        lines.push(BusLine::from_ordered_stops(line, ordered, s)?);
    }
    Ok(lines)
}

fn check_admissible(st: &LineAssignment, a: &Action) -> Result<()> {
    if a.stop >= st.num_stops() {
        return Err(Error::InadmissibleAction(format!(
            "stop index {} out of range",
            a.stop
        )));
    }
    if a.target_line as usize >= st.k() {
        return Err(Error::InadmissibleAction(format!(
            "target line {} out of range",
            a.target_line
        )));
    }
    let from = st.line_of(a.stop);
    if from == a.target_line {
        return Err(Error::InadmissibleAction(format!(
            "stop {} is already on line {}",
            a.stop, a.target_line
        )));
    }
    if st.line_sizes()[from as usize] == 1 {
        return Err(Error::InadmissibleAction(format!(
            "moving stop {} would empty line {}",
            a.stop, from
        )));
    }
    Ok(())
}

/// Apply an admissible action, producing the successor state. Pure and
/// deterministic.
pub fn apply_action(st: &LineAssignment, a: &Action) -> Result<LineAssignment> {
    check_admissible(st, a)?;
    let mut line_of = st.line_of.clone();
    line_of[a.stop] = a.target_line;
    Ok(LineAssignment { k: st.k, line_of })
}

/// All admissible actions of a state, ordered by (stop index, target
/// line). A stop may not move to its own line, and the last stop of a
/// line may not leave it.
pub fn enumerate_actions(st: &LineAssignment) -> Vec<Action> {
    let sizes = st.line_sizes();
    let mut actions = Vec::new();
    for stop in 0..st.num_stops() {
        let from = st.line_of(stop);
        if sizes[from as usize] == 1 {
            continue;
        }
        for target in 0..st.k() as u32 {
            if target != from {
                actions.push(Action {
                    stop,
                    target_line: target,
                });
            }
        }
    }
    actions
}

/// Uniform random assignment conditioned on no line being empty.
///
/// Implemented by rejection over i.i.d. uniform line choices, which
/// yields exactly the conditioned-uniform law. When `n_b == k` every
/// valid assignment is a bijection, so a uniform random permutation is
/// drawn directly instead.
pub fn random_assignment(n_b: usize, k: usize, rng: &mut impl Rng) -> LineAssignment {
    assert!(k >= 1 && n_b >= k, "need at least one stop per line");
    if n_b == k {
        let mut lines: Vec<u32> = (0..k as u32).collect();
        lines.shuffle(rng);
        return LineAssignment { k, line_of: lines };
    }
    loop {
        let line_of: Vec<u32> = (0..n_b).map(|_| rng.gen_range(0..k as u32)).collect();
        let mut sizes = vec![0usize; k];
        for &l in &line_of {
            sizes[l as usize] += 1;
        }
        if sizes.iter().all(|&s| s > 0) {
            return LineAssignment { k, line_of };
        }
    }
}

/// Seeded random initial state for a scenario.
pub fn random_state<S: Scalar>(s: &Scenario<S>, seed: u64) -> LineAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "random-state"));
    random_assignment(s.num_candidates(), s.params.num_lines as usize, &mut rng)
}

/// Quantile accessibility of a realized state.
pub fn evaluate_assignment<S: Scalar>(
    s: &Scenario<S>,
    st: &LineAssignment,
    q: f64,
    parallel: bool,
) -> Result<S> {
    let (_, graph) = realize_state(s, st)?;
    let per_centroid = per_centroid_accessibility(s, &graph, parallel)?;
    Ok(quantile_accessibility(&per_centroid, q))
}

/// Reward of action `a` in state `st`: the quantile-accessibility change
/// from the current to the successor state.
pub fn reward<S: Scalar>(
    s: &Scenario<S>,
    st: &LineAssignment,
    a: &Action,
    q: f64,
) -> Result<S> {
    let next = apply_action(st, a)?;
    let before = evaluate_assignment(s, st, q, false)?;
    let after = evaluate_assignment(s, &next, q, false)?;
    Ok(after - before)
}

/// Cached state evaluation shared by the optimizers: realizing a state
/// and running all-centroid shortest paths dominates the cost of a search
/// step, and current/successor states repeat within an episode.
pub struct StateEvaluator<'a, S: Scalar> {
    scenario: &'a Scenario<S>,
    q: f64,
    parallel: bool,
    cache: HashMap<LineAssignment, EvalEntry<S>>,
    evaluations: u64,
    requests: u64,
}

#[derive(Clone)]
pub struct EvalEntry<S> {
    pub lines: Vec<BusLine<S>>,
    pub acc_q: S,
}

impl<'a, S: Scalar> StateEvaluator<'a, S> {
    pub fn new(scenario: &'a Scenario<S>, q: f64, parallel: bool) -> Self {
        StateEvaluator {
            scenario,
            q,
            parallel,
            cache: HashMap::new(),
            evaluations: 0,
            requests: 0,
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Number of distinct quantile-accessibility computations performed
    /// (cache hits are free).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Number of evaluation requests, cache hits included. Loops that may
    /// revisit a fully cached state space budget against this counter so
    /// they still terminate.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    /// Drop cached states (called between episodes to bound memory).
    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    pub fn eval(&mut self, st: &LineAssignment) -> Result<EvalEntry<S>> {
        self.requests += 1;
        if let Some(entry) = self.cache.get(st) {
            return Ok(entry.clone());
        }
        let (lines, graph) = realize_state(self.scenario, st)?;
        let per_centroid = per_centroid_accessibility(self.scenario, &graph, self.parallel)?;
        let acc_q = quantile_accessibility(&per_centroid, self.q);
        self.evaluations += 1;
        let entry = EvalEntry { lines, acc_q };
        self.cache.insert(st.clone(), entry.clone());
        Ok(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::territory::generate_grid_scenario;

    fn assignment(k: usize, lines: &[u32]) -> LineAssignment {
        LineAssignment::new(k, lines.to_vec()).unwrap()
    }

    #[test]
    fn constructor_rejects_empty_line() {
        assert!(LineAssignment::new(2, vec![0, 0, 0]).is_err());
        assert!(LineAssignment::new(2, vec![0, 1, 0]).is_ok());
        assert!(LineAssignment::new(3, vec![0, 1]).is_err());
        assert!(LineAssignment::new(2, vec![0, 2]).is_err());
    }

    #[test]
    fn sort_line_singleton() {
        let stops = vec![(StopId(4), Point::new(1.0, 1.0))];
        assert_eq!(sort_line(&stops), vec![StopId(4)]);
    }

    #[test]
    fn sort_line_collinear() {
        let stops = vec![
            (StopId(1), Point::new(1.0, 0.0)),
            (StopId(0), Point::new(0.0, 0.0)),
            (StopId(2), Point::new(2.0, 0.0)),
        ];
        let order = sort_line(&stops);
        assert_eq!(order, vec![StopId(0), StopId(1), StopId(2)]);
        // Input order does not matter.
        let mut shuffled = stops.clone();
        shuffled.reverse();
        assert_eq!(sort_line(&shuffled), order);
    }

    #[test]
    fn sort_line_visits_each_stop_once() {
        let stops: Vec<(StopId, Point<f64>)> = (0..7)
            .map(|i| {
                (
                    StopId(i),
                    Point::new((i as f64 * 13.7) % 5.0, (i as f64 * 7.3) % 3.0),
                )
            })
            .collect();
        let mut order = sort_line(&stops);
        order.sort();
        assert_eq!(order, (0..7).map(StopId).collect::<Vec<_>>());
    }

    #[test]
    fn apply_action_moves_single_stop() {
        // Lines {b0, b1}, {b2}; moving b1 to line 1 yields {b0}, {b1, b2}.
        let st = assignment(2, &[0, 0, 1]);
        let next = apply_action(&st, &Action { stop: 1, target_line: 1 }).unwrap();
        assert_eq!(next.assignments(), &[0, 1, 1]);
        // Everything else unchanged.
        assert_eq!(next.line_of(0), 0);
        assert_eq!(next.line_of(2), 1);
    }

    #[test]
    fn own_line_move_rejected() {
        let st = assignment(2, &[0, 0, 1]);
        let err = apply_action(&st, &Action { stop: 2, target_line: 1 }).unwrap_err();
        assert!(matches!(err, Error::InadmissibleAction(_)));
    }

    #[test]
    fn emptying_move_rejected() {
        let st = assignment(2, &[0, 0, 1]);
        let err = apply_action(&st, &Action { stop: 2, target_line: 0 }).unwrap_err();
        assert!(matches!(err, Error::InadmissibleAction(_)));
    }

    #[test]
    fn enumerate_actions_examples() {
        let st = assignment(2, &[0, 0, 1]);
        let actions = enumerate_actions(&st);
        assert_eq!(
            actions,
            vec![
                Action { stop: 0, target_line: 1 },
                Action { stop: 1, target_line: 1 },
            ]
        );

        let single = LineAssignment::new(1, vec![0, 0, 0]).unwrap();
        assert!(enumerate_actions(&single).is_empty());

        let balanced = assignment(2, &[0, 0, 1, 1]);
        assert_eq!(enumerate_actions(&balanced).len(), 4);
    }

    #[test]
    fn every_enumerated_action_is_applicable() {
        let st = assignment(3, &[0, 1, 2, 0, 1, 0]);
        for a in enumerate_actions(&st) {
            let next = apply_action(&st, &a).unwrap();
            assert_eq!(next.line_sizes().iter().sum::<usize>(), 6);
            assert!(next.line_sizes().iter().all(|&s| s > 0));
        }
    }

    #[test]
    fn random_assignment_pigeonhole() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = random_assignment(4, 4, &mut rng);
        assert_eq!(st.line_sizes(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn random_state_deterministic() {
        let s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![1.0; 6], 8).unwrap();
        assert_eq!(random_state(&s, 5), random_state(&s, 5));
        assert_ne!(random_state(&s, 5), random_state(&s, 6));
    }

    #[test]
    fn realize_state_single_line_holds_all_stops() {
        let mut s = generate_grid_scenario::<f64>(2, 2, 1.0, &[], &vec![1.0; 4], 8).unwrap();
        s.params.num_lines = 1;
        let st = LineAssignment::new(1, vec![0, 0, 0, 0]).unwrap();
        let (lines, _) = realize_state(&s, &st).unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].ordered_stops.len(), 4);
    }

    #[test]
    fn realize_state_is_deterministic() {
        let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![1.0; 6], 8).unwrap();
        s.params.num_lines = 2;
        let st = assignment(2, &[0, 1, 0, 1, 0, 1]);
        let (l1, _) = realize_state(&s, &st).unwrap();
        let (l2, _) = realize_state(&s, &st).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn reward_of_reversed_action_cancels() {
        let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![1.0; 6], 8).unwrap();
        s.params.num_lines = 2;
        let st = assignment(2, &[0, 0, 0, 1, 1, 1]);
        let a = Action { stop: 1, target_line: 1 };
        let next = apply_action(&st, &a).unwrap();
        let back = Action { stop: 1, target_line: 0 };
        let r1 = reward(&s, &st, &a, 20.0).unwrap();
        let r2 = reward(&s, &next, &back, 20.0).unwrap();
        assert_eq!(r1 + r2, 0.0);
    }

    #[test]
    fn evaluator_caches_and_counts() {
        let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![1.0; 6], 8).unwrap();
        s.params.num_lines = 2;
        let st = assignment(2, &[0, 0, 0, 1, 1, 1]);
        let mut ev = StateEvaluator::new(&s, 20.0, false);
        let a = ev.eval(&st).unwrap();
        let b = ev.eval(&st).unwrap();
        assert_eq!(a.acc_q, b.acc_q);
        assert_eq!(ev.evaluations(), 1);
        assert_eq!(a.acc_q, evaluate_assignment(&s, &st, 20.0, false).unwrap());
    }
}
