//! Independent brute-force oracles for the test suites.
//!
//! Everything here deliberately re-derives results through a different
//! algorithmic route than the library under test: exhaustive simple-path
//! enumeration instead of label-setting shortest paths, permutation
//! search instead of the nearest-neighbor heuristic, finite differences
//! instead of hand-written backpropagation, and direct quadrature of the
//! t-density instead of incomplete-beta evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use equibus_core::mdp::{Action, LineAssignment};
use equibus_core::qnet::{forward, QNetworkParams, StepSample, Weights};
use equibus_core::territory::{
    Centroid, CentroidId, Point, Poi, PoiId, Scenario, ScenarioParams, Stop, StopId, StopKind,
};
use equibus_core::transit_graph::{BusLine, RouterGraph};

/// Shortest travel time from a centroid to every PoI by exhaustive
/// enumeration of all simple paths in the router graph (cost-pruned but
/// exact).
pub fn brute_force_travel_times(
    g: &RouterGraph<f64>,
    s: &Scenario<f64>,
    origin: CentroidId,
) -> BTreeMap<PoiId, f64> {
    let source = g.centroid_node(origin).expect("origin exists");
    let n = g.node_count();
    let mut poi_of_node: Vec<Option<PoiId>> = vec![None; n];
    let mut best: Vec<f64> = vec![f64::INFINITY; n];
    for &(pid, node) in g.poi_nodes() {
        poi_of_node[node] = Some(pid);
    }

    // Seed with the direct-walk edges so pruning has a finite bound.
    for &(v, w) in g.neighbors(source) {
        let v = v as usize;
        if poi_of_node[v].is_some() && w < best[v] {
            best[v] = w;
        }
    }

    fn dfs(
        g: &RouterGraph<f64>,
        u: usize,
        cost: f64,
        visited: &mut [bool],
        poi_of_node: &[Option<PoiId>],
        best: &mut [f64],
    ) {
        // A nonnegative-weight extension cannot improve anything once the
        // partial cost is at least every PoI's current best.
        let bound = best.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if cost >= bound {
            return;
        }
        for &(v, w) in g.neighbors(u) {
            let v = v as usize;
            if visited[v] {
                continue;
            }
            let c = cost + w;
            if let Some(_) = poi_of_node[v] {
                if c < best[v] {
                    best[v] = c;
                }
                // PoIs are walking sinks; no continuation improves.
                continue;
            }
            visited[v] = true;
            dfs(g, v, c, visited, poi_of_node, best);
            visited[v] = false;
        }
    }

    let mut visited = vec![false; n];
    visited[source] = true;
    dfs(g, source, 0.0, &mut visited, &poi_of_node, &mut best);

    s.pois
        .iter()
        .map(|p| {
            let node = g
                .poi_nodes()
                .iter()
                .find(|(pid, _)| *pid == p.id)
                .expect("poi node")
                .1;
            (p.id, best[node])
        })
        .collect()
}

/// Per-centroid accessibility recomputed from brute-force travel times.
pub fn brute_force_accessibility(
    s: &Scenario<f64>,
    g: &RouterGraph<f64>,
) -> BTreeMap<CentroidId, f64> {
    s.centroids
        .iter()
        .map(|c| {
            let times = brute_force_travel_times(g, s, c.id);
            let mut acc = 0.0;
            for poi in &s.pois {
                let t = times[&poi.id];
                acc += poi.weight * (1.0 - t / s.params.t_max_minutes).max(0.0);
            }
            (c.id, acc)
        })
        .collect()
}

/// Bottom-quantile aggregate recomputed independently: sort by value
/// (ties by id), take `ceil(q/100 * n)`, sum.
pub fn brute_force_quantile(per_centroid: &BTreeMap<CentroidId, f64>, q: f64) -> f64 {
    let mut vals: Vec<(CentroidId, f64)> = per_centroid.iter().map(|(k, v)| (*k, *v)).collect();
    vals.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    let size = ((q / 100.0) * vals.len() as f64).ceil() as usize;
    let mut take: Vec<(CentroidId, f64)> = vals[..size.clamp(1, vals.len())].to_vec();
    take.sort_by_key(|(id, _)| *id);
    take.iter().map(|(_, v)| v).sum()
}

/// Exact shortest open Hamiltonian path length over all orderings.
pub fn shortest_hamiltonian_path(points: &[Point<f64>]) -> f64 {
    fn permute(rest: &mut Vec<usize>, path: &mut Vec<usize>, points: &[Point<f64>], best: &mut f64) {
        if rest.is_empty() {
            let len: f64 = path
                .windows(2)
                .map(|w| points[w[0]].distance(&points[w[1]]))
                .sum();
            if len < *best {
                *best = len;
            }
            return;
        }
        for i in 0..rest.len() {
            let item = rest.remove(i);
            path.push(item);
            permute(rest, path, points, best);
            path.pop();
            rest.insert(i, item);
        }
    }
    let mut best = f64::INFINITY;
    let mut rest: Vec<usize> = (0..points.len()).collect();
    permute(&mut rest, &mut Vec::new(), points, &mut best);
    best
}

/// All valid line assignments (total maps with no empty line).
pub fn enumerate_assignments(n_b: usize, k: usize) -> Vec<LineAssignment> {
    let mut out = Vec::new();
    let mut current = vec![0u32; n_b];
    fn rec(pos: usize, n_b: usize, k: usize, current: &mut Vec<u32>, out: &mut Vec<LineAssignment>) {
        if pos == n_b {
            if let Ok(st) = LineAssignment::new(k, current.clone()) {
                out.push(st);
            }
            return;
        }
        for line in 0..k as u32 {
            current[pos] = line;
            rec(pos + 1, n_b, k, current, out);
        }
    }
    rec(0, n_b, k, &mut current, &mut out);
    out
}

/// Central finite differences of the one-step loss with the target frozen
/// at the base parameters, matching the semi-gradient the analytic
/// backward pass computes.
pub fn finite_difference_grads(
    params: &QNetworkParams<f64>,
    sample: &StepSample<'_, f64>,
    gamma: f64,
    step: f64,
) -> Weights<f64> {
    let q_next = forward(
        params,
        sample.next_features,
        sample.next_adjacency,
        sample.next_state,
    )
    .expect("forward on successor");
    let max_next = q_next
        .iter()
        .map(|(_, q)| *q)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_next = if q_next.is_empty() { 0.0 } else { max_next };
    let target = gamma * max_next + sample.reward;

    let q_of = |p: &QNetworkParams<f64>| -> f64 {
        forward(p, sample.features, sample.adjacency, sample.state)
            .expect("forward on state")
            .into_iter()
            .find(|(a, _)| *a == sample.action)
            .expect("action admissible")
            .1
    };
    let loss_of = |p: &QNetworkParams<f64>| -> f64 {
        let d = target - q_of(p);
        d * d
    };

    fn visit(w: &mut Weights<f64>, f: &mut dyn FnMut(&mut f64)) {
        let aff = |a: &mut equibus_core::qnet::Affine<f64>, f: &mut dyn FnMut(&mut f64)| {
            for v in a.weight.iter_mut() {
                f(v);
            }
            for v in a.bias.iter_mut() {
                f(v);
            }
        };
        aff(&mut w.theta1, f);
        aff(&mut w.theta2, f);
        for a in &mut w.theta3 {
            aff(a, f);
        }
        for a in &mut w.theta4 {
            aff(a, f);
        }
        aff(&mut w.theta5, f);
    }

    let mut count = 0usize;
    {
        let mut probe = params.clone();
        visit(&mut probe.weights, &mut |_| count += 1);
    }

    let mut fd_values = Vec::with_capacity(count);
    for target_idx in 0..count {
        let mut plus = params.clone();
        let mut idx = 0;
        visit(&mut plus.weights, &mut |v| {
            if idx == target_idx {
                *v += step;
            }
            idx += 1;
        });
        let mut minus = params.clone();
        idx = 0;
        visit(&mut minus.weights, &mut |v| {
            if idx == target_idx {
                *v -= step;
            }
            idx += 1;
        });
        fd_values.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * step));
    }

    let mut grads = params.zero_grads();
    let mut idx = 0;
    visit(&mut grads, &mut |v| {
        *v = fd_values[idx];
        idx += 1;
    });
    grads
}

/// Flatten weights for element-wise comparison.
pub fn flatten_weights(w: &Weights<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    let aff = |a: &equibus_core::qnet::Affine<f64>, out: &mut Vec<f64>| {
        out.extend(a.weight.iter().copied());
        out.extend(a.bias.iter().copied());
    };
    aff(&w.theta1, &mut out);
    aff(&w.theta2, &mut out);
    for a in &w.theta3 {
        aff(a, &mut out);
    }
    for a in &w.theta4 {
        aff(a, &mut out);
    }
    aff(&w.theta5, &mut out);
    out
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Student-t CDF by quadrature, fully independent of gamma/beta special
/// functions: substituting `x = sqrt(df) tan(theta)` reduces both the
/// normalization and the partial integral to integrals of
/// `cos(theta)^(df - 1)` over finite intervals.
pub fn t_cdf_quadrature(t: f64, df: f64) -> f64 {
    assert!(df >= 1.0);
    let integrand = move |theta: f64| theta.cos().powf(df - 1.0);
    let half = adaptive_simpson(&integrand, 0.0, std::f64::consts::FRAC_PI_2, 1e-14);
    let x = t.abs();
    let upper = (x / df.sqrt()).atan();
    let partial = adaptive_simpson(&integrand, 0.0, upper, 1e-14);
    let p = 0.5 + 0.5 * partial / half;
    if t >= 0.0 {
        p
    } else {
        1.0 - p
    }
}

/// Small random scenario for oracle comparisons: up to 9 centroids, 10
/// stops in total (metro stations included), 5 PoIs, 2 bus lines.
pub fn random_small_scenario(rng: &mut ChaCha8Rng) -> Scenario<f64> {
    let extent = 3.0;
    let n_centroids = rng.gen_range(1..=9);
    let with_metro = rng.gen_bool(0.6);
    let n_metro = if with_metro { rng.gen_range(2..=3) } else { 0 };
    let k = rng.gen_range(1..=2usize);
    let n_candidates = rng.gen_range(k.max(2)..=(10 - n_metro));
    let n_pois = rng.gen_range(1..=5);
    let point = |rng: &mut ChaCha8Rng| Point::<f64> {
        x: rng.gen_range(0.0..extent),
        y: rng.gen_range(0.0..extent),
    };

    let centroids = (0..n_centroids)
        .map(|i| Centroid {
            id: CentroidId(i as u32),
            location: point(rng),
        })
        .collect();
    let pois = (0..n_pois)
        .map(|i| Poi {
            id: PoiId(i as u32),
            location: point(rng),
            weight: rng.gen_range(0.5..2.0),
        })
        .collect();
    let mut stops: Vec<Stop<f64>> = (0..n_candidates)
        .map(|i| Stop {
            id: StopId(i as u32),
            location: point(rng),
            kind: StopKind::BusCandidate,
        })
        .collect();
    let mut metro_lines = Vec::new();
    if n_metro >= 2 {
        let mut ids = Vec::new();
        for i in 0..n_metro {
            let id = StopId((n_candidates + i) as u32);
            stops.push(Stop {
                id,
                location: point(rng),
                kind: StopKind::Metro,
            });
            ids.push(id);
        }
        metro_lines.push(equibus_core::territory::MetroLine {
            id: 0,
            stops: ids,
            headway_minutes: rng.gen_range(3.0..8.0),
        });
    }

    let s = Scenario {
        centroids,
        pois,
        stops,
        metro_lines,
        params: ScenarioParams {
            walk_speed_kmh: 4.5,
            bus_speed_kmh: 28.0,
            fleet_per_line: rng.gen_range(1..=10),
            t_max_minutes: rng.gen_range(20.0..40.0),
            num_lines: k as u32,
            centroid_spacing_km: 1.0,
            rng_seed: 0,
        },
    };
    s.validate().expect("generated scenario valid");
    s
}

/// Random bus lines over a scenario's candidates: a random partition into
/// `k` lines with random stop orders (not necessarily sorted).
pub fn random_bus_lines(s: &Scenario<f64>, rng: &mut ChaCha8Rng) -> Vec<BusLine<f64>> {
    let k = s.params.num_lines as usize;
    let mut ids = s.candidate_ids();
    ids.shuffle(rng);
    let mut buckets: Vec<Vec<StopId>> = vec![Vec::new(); k];
    for (i, id) in ids.iter().enumerate() {
        buckets[i % k].push(*id);
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(i, stops)| BusLine::from_ordered_stops(i as u32, stops, s).expect("valid line"))
        .collect()
}

/// Convenience: a deterministic admissible action of a state, if any.
pub fn first_action(st: &LineAssignment) -> Option<Action> {
    equibus_core::mdp::enumerate_actions(st).into_iter().next()
}

/// Hand-built scenario where the best centroid-to-PoI itinerary rides two
/// metro lines through their shared station, paying the second line's
/// boarding wait. Bus candidates sit far away so the transfer dominates.
pub fn tiny_transfer_scenario() -> Scenario<f64> {
    let pt = |x: f64, y: f64| Point { x, y };
    Scenario {
        centroids: vec![Centroid {
            id: CentroidId(0),
            location: pt(0.0, 0.0),
        }],
        pois: vec![Poi {
            id: PoiId(0),
            location: pt(5.0, 5.1),
            weight: 1.0,
        }],
        stops: vec![
            Stop { id: StopId(0), location: pt(9.0, 9.0), kind: StopKind::BusCandidate },
            Stop { id: StopId(1), location: pt(9.5, 9.0), kind: StopKind::BusCandidate },
            Stop { id: StopId(2), location: pt(0.1, 0.0), kind: StopKind::Metro },
            Stop { id: StopId(3), location: pt(5.0, 0.0), kind: StopKind::Metro },
            Stop { id: StopId(4), location: pt(5.0, 5.0), kind: StopKind::Metro },
        ],
        metro_lines: vec![
            equibus_core::territory::MetroLine {
                id: 0,
                stops: vec![StopId(2), StopId(3)],
                headway_minutes: 4.0,
            },
            equibus_core::territory::MetroLine {
                id: 1,
                stops: vec![StopId(3), StopId(4)],
                headway_minutes: 6.0,
            },
        ],
        params: ScenarioParams {
            walk_speed_kmh: 4.5,
            bus_speed_kmh: 28.0,
            fleet_per_line: 10,
            t_max_minutes: 60.0,
            num_lines: 1,
            centroid_spacing_km: 1.0,
            rng_seed: 0,
        },
    }
}
