//! Genetic-algorithm baseline with tournament selection, order crossover
//! (OX1) and per-gene mutation.
//!
//! An individual encodes a state as a permutation of all candidate stops
//! plus `k - 1` cut positions; the permutation segments between cuts are
//! the lines. OX1 acts on the permutation (preserving the relative stop
//! order that the line sorting rewards), mutation swaps stops and shifts
//! cuts, and a deterministic repair re-fills any segment that decoding
//! would leave empty.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BestTracker, Budget, OptimizerResult};
use crate::error::{Error, Result};
use crate::mdp::{LineAssignment, StateEvaluator};
use crate::rng::sub_seed;
use crate::scalar::Scalar;
use crate::territory::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    /// Population size.
    pub n_pop: usize,
    /// Parents selected per generation.
    pub n_par: usize,
    /// Per-gene mutation probability.
    pub p_mut: f64,
    pub tournament_size: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            n_pop: 50,
            n_par: 10,
            p_mut: 0.05,
            tournament_size: 3,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_par < 2 || self.n_par > self.n_pop {
            return Err(Error::Config(format!(
                "n_par {} must be in 2..=n_pop ({})",
                self.n_par, self.n_pop
            )));
        }
        if !(0.0..=1.0).contains(&self.p_mut) {
            return Err(Error::Config(format!("p_mut {} outside [0, 1]", self.p_mut)));
        }
        if self.tournament_size < 1 {
            return Err(Error::Config("tournament_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// GA genome: a permutation of candidate indices `0..n_b` and `k - 1`
/// cut positions in `1..n_b` splitting it into line segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Genome {
    pub perm: Vec<u32>,
    pub cuts: Vec<u32>,
}

impl Genome {
    pub fn random(n_b: usize, k: usize, rng: &mut impl Rng) -> Self {
        assert!(n_b >= k && k >= 1);
        let mut perm: Vec<u32> = (0..n_b as u32).collect();
        perm.shuffle(rng);
        let mut positions: Vec<u32> = (1..n_b as u32).collect();
        positions.shuffle(rng);
        let mut cuts: Vec<u32> = positions[..k - 1].to_vec();
        cuts.sort_unstable();
        Genome { perm, cuts }
    }

    /// Decode into a line assignment. Sorted cuts induce segment sizes;
    /// any empty segment absorbs one stop from the larger adjacent
    /// segment (ties toward the left), falling back to the nearest
    /// segment that can spare a stop, so the result is always a valid
    /// partition.
    pub fn decode(&self, k: usize) -> LineAssignment {
        let n_b = self.perm.len();
        let mut cuts = self.cuts.clone();
        cuts.sort_unstable();
        let mut sizes = Vec::with_capacity(k);
        let mut prev = 0u32;
        for &c in &cuts {
            let c = c.min(n_b as u32);
            sizes.push(c.saturating_sub(prev) as usize);
            prev = prev.max(c);
        }
        sizes.push(n_b - prev as usize);
        repair_sizes(&mut sizes);

        let mut line_of = vec![0u32; n_b];
        let mut pos = 0usize;
        for (line, &size) in sizes.iter().enumerate() {
            for _ in 0..size {
                line_of[self.perm[pos] as usize] = line as u32;
                pos += 1;
            }
        }
        LineAssignment::new(k, line_of).expect("repair yields a valid partition")
    }
}

/// Re-fill empty segments. Each pass moves one stop from a donor with at
/// least two stops into the first empty segment, preferring the larger
/// adjacent segment, so the number of empty segments strictly decreases.
fn repair_sizes(sizes: &mut [usize]) {
    let k = sizes.len();
    loop {
        let Some(i) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let left = i.checked_sub(1).map(|j| sizes[j]).unwrap_or(0);
        let right = sizes.get(i + 1).copied().unwrap_or(0);
        let donor = if left.max(right) >= 2 {
            if left >= right {
                i - 1
            } else {
                i + 1
            }
        } else {
            // Both neighbors too small: nearest segment that can donate.
            (0..k)
                .filter(|&j| sizes[j] >= 2)
                .min_by_key(|&j| (j.abs_diff(i), j))
                .expect("n_b >= k guarantees a donor")
        };
        sizes[donor] -= 1;
        sizes[i] += 1;
    }
}

/// Order crossover (OX1): the child keeps `p1[i..=j]` in place and fills
/// the remaining positions with the other stops in the cyclic order of
/// `p2`, starting just after the segment.
pub fn order_crossover(p1: &[u32], p2: &[u32], i: usize, j: usize) -> Vec<u32> {
    let n = p1.len();
    debug_assert!(i <= j && j < n && p2.len() == n);
    let mut child = vec![u32::MAX; n];
    // Gene labels are arbitrary ids, not necessarily 0-based.
    let max_gene = *p1.iter().max().expect("non-empty permutation") as usize;
    let mut in_segment = vec![false; max_gene + 1];
    for pos in i..=j {
        child[pos] = p1[pos];
        in_segment[p1[pos] as usize] = true;
    }
    let mut fill = (j + 1) % n;
    for step in 0..n {
        let gene = p2[(j + 1 + step) % n];
        if in_segment[gene as usize] {
            continue;
        }
        while fill >= i && fill <= j {
            fill = (fill + 1) % n;
        }
        child[fill] = gene;
        fill = (fill + 1) % n;
    }
    debug_assert!(child.iter().all(|&g| g != u32::MAX));
    child
}

/// Mutate in place: each position swaps with a random other position with
/// probability `p_mut`, and each cut shifts by one with probability
/// `p_mut` (clamped to the valid range).
pub fn mutate_genome(genome: &mut Genome, p_mut: f64, rng: &mut impl Rng) {
    let n = genome.perm.len();
    for pos in 0..n {
        if rng.gen::<f64>() < p_mut {
            let other = rng.gen_range(0..n);
            genome.perm.swap(pos, other);
        }
    }
    let max_cut = (n - 1) as u32;
    for c in genome.cuts.iter_mut() {
        if rng.gen::<f64>() < p_mut {
            let up = rng.gen::<bool>();
            *c = if up {
                (*c + 1).min(max_cut)
            } else {
                c.saturating_sub(1).max(1)
            };
        }
    }
    genome.cuts.sort_unstable();
}

/// Tournament of `size` uniformly drawn individuals; the fittest wins,
/// ties toward the lower population index.
fn tournament<S: Scalar>(fitness: &[S], size: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.gen_range(0..fitness.len());
    for _ in 1..size {
        let challenger = rng.gen_range(0..fitness.len());
        if fitness[challenger] > fitness[best] {
            best = challenger;
        }
    }
    best
}

/// Genetic search for the best line assignment under the budget.
pub fn genetic_search<S: Scalar>(
    s: &Scenario<S>,
    q: f64,
    budget: Budget,
    cfg: &GaConfig,
    seed: u64,
    parallel: bool,
) -> Result<OptimizerResult<S>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "genetic-search"));
    let mut evaluator = StateEvaluator::new(s, q, parallel);
    let mut tracker = BestTracker::new(start);
    let n_b = s.num_candidates();
    let k = s.params.num_lines as usize;

    let mut population: Vec<Genome> = (0..cfg.n_pop)
        .map(|_| Genome::random(n_b, k, &mut rng))
        .collect();
    let mut fitness: Vec<S> = Vec::with_capacity(cfg.n_pop);
    for genome in &population {
        let st = genome.decode(k);
        let entry = evaluator.eval(&st)?;
        tracker.offer(entry.acc_q, &st, evaluator.evaluations());
        fitness.push(entry.acc_q);
        if budget.exceeded(start, evaluator.evaluations()) {
            return Ok(tracker.finish(evaluator.evaluations()));
        }
    }

    'generations: loop {
        evaluator.clear_cache();
        let parents: Vec<Genome> = (0..cfg.n_par)
            .map(|_| population[tournament(&fitness, cfg.tournament_size, &mut rng)].clone())
            .collect();

        let mut children: Vec<Genome> = Vec::with_capacity(cfg.n_pop);
        for _ in 0..cfg.n_pop {
            let pi = rng.gen_range(0..parents.len());
            let mut pj = rng.gen_range(0..parents.len());
            if parents.len() > 1 {
                while pj == pi {
                    pj = rng.gen_range(0..parents.len());
                }
            }
            let (p1, p2) = (&parents[pi], &parents[pj]);
            let a = rng.gen_range(0..n_b);
            let b = rng.gen_range(0..n_b);
            let (i, j) = (a.min(b), a.max(b));
            let mut child = Genome {
                perm: order_crossover(&p1.perm, &p2.perm, i, j),
                cuts: p1.cuts.clone(),
            };
            mutate_genome(&mut child, cfg.p_mut, &mut rng);
            children.push(child);
        }

        let mut next_fitness = Vec::with_capacity(cfg.n_pop);
        for genome in &children {
            let st = genome.decode(k);
            let entry = evaluator.eval(&st)?;
            tracker.offer(entry.acc_q, &st, evaluator.evaluations());
            next_fitness.push(entry.acc_q);
            if budget.exceeded(start, evaluator.evaluations()) {
                break 'generations;
            }
        }
        population = children;
        fitness = next_fitness;
    }

    Ok(tracker.finish(evaluator.evaluations()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::territory::generate_grid_scenario;

    #[test]
    fn ox1_reference_example() {
        // Keep p1's segment at positions 1..=2 and fill the rest in p2's
        // cyclic order after the segment: p2 from position 3 reads
        // 1, 4, 3, 5, 2; dropping the kept {2, 3} leaves 1, 4, 5 for
        // positions 3, 4, 0.
        let p1 = [1, 2, 3, 4, 5];
        let p2 = [3, 5, 2, 1, 4];
        let child = order_crossover(&p1, &p2, 1, 2);
        assert_eq!(child, vec![5, 2, 3, 1, 4]);
    }

    #[test]
    fn ox1_identical_parents_identity() {
        let p = [4u32, 2, 0, 3, 1];
        for (i, j) in [(0, 0), (1, 3), (0, 4), (2, 2)] {
            assert_eq!(order_crossover(&p, &p, i, j), p.to_vec());
        }
    }

    #[test]
    fn zero_mutation_identical_parents_reproduce_genome() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parent = Genome::random(8, 3, &mut rng);
        let mut child = Genome {
            perm: order_crossover(&parent.perm, &parent.perm, 2, 5),
            cuts: parent.cuts.clone(),
        };
        mutate_genome(&mut child, 0.0, &mut rng);
        assert_eq!(child, parent);
    }

    #[test]
    fn decode_repairs_empty_segments() {
        // Duplicate cuts would decode to an empty middle line.
        let genome = Genome {
            perm: vec![0, 1, 2, 3, 4],
            cuts: vec![2, 2],
        };
        let st = genome.decode(3);
        assert!(st.line_sizes().iter().all(|&s| s > 0));
        assert_eq!(st.line_sizes().iter().sum::<usize>(), 5);
    }

    #[test]
    fn repair_handles_all_mass_in_one_segment() {
        let mut sizes = vec![5, 0, 0, 0];
        repair_sizes(&mut sizes);
        assert_eq!(sizes.iter().sum::<usize>(), 5);
        assert!(sizes.iter().all(|&s| s > 0));

        let mut tail = vec![0, 0, 3];
        repair_sizes(&mut tail);
        assert!(tail.iter().all(|&s| s > 0));
    }

    #[test]
    fn random_cycles_always_decode_to_valid_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (n_b, k) = (9, 4);
        let mut a = Genome::random(n_b, k, &mut rng);
        let mut b = Genome::random(n_b, k, &mut rng);
        for _ in 0..500 {
            let x = rng.gen_range(0..n_b);
            let y = rng.gen_range(0..n_b);
            let mut child = Genome {
                perm: order_crossover(&a.perm, &b.perm, x.min(y), x.max(y)),
                cuts: a.cuts.clone(),
            };
            mutate_genome(&mut child, 0.3, &mut rng);
            let st = child.decode(k);
            let mut seen = child.perm.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n_b as u32).collect::<Vec<_>>());
            assert_eq!(st.line_sizes().iter().sum::<usize>(), n_b);
            assert!(st.line_sizes().iter().all(|&s| s > 0));
            a = b;
            b = child;
        }
    }

    #[test]
    fn search_finds_reasonable_state_and_is_deterministic() {
        let mut s = generate_grid_scenario::<f64>(3, 2, 1.0, &[], &vec![1.0; 6], 3).unwrap();
        s.params.num_lines = 2;
        let cfg = GaConfig {
            n_pop: 8,
            n_par: 4,
            p_mut: 0.1,
            tournament_size: 2,
        };
        let a = genetic_search(&s, 20.0, Budget::Evaluations(40), &cfg, 11, false).unwrap();
        let b = genetic_search(&s, 20.0, Budget::Evaluations(40), &cfg, 11, false).unwrap();
        assert_eq!(a.best_value, b.best_value);
        assert_eq!(a.best_assignment, b.best_assignment);
        assert_eq!(
            a.best_value,
            crate::mdp::evaluate_assignment(&s, &a.best_assignment, 20.0, false).unwrap()
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = GaConfig::default();
        cfg.n_par = 1;
        assert!(cfg.validate().is_err());
        cfg = GaConfig::default();
        cfg.p_mut = 1.5;
        assert!(cfg.validate().is_err());
    }
}
