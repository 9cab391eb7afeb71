//! Travel times and accessibility metrics.
//!
//! Accessibility of a centroid counts reachable PoI weight, discounting
//! each PoI linearly by its shortest travel time up to the horizon
//! `t_max`: `sum_poi w_poi * max(0, 1 - T / t_max)`. The equity objective
//! aggregates the `q%` least accessible centroids.
//!
//! Summation orders are canonical (scenario PoI order within a centroid,
//! ascending centroid id across centroids) so that identical states always
//! produce bit-identical values, with or without parallelism.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::territory::{CentroidId, Poi, PoiId, Scenario};
use crate::transit_graph::RouterGraph;

struct HeapEntry<S> {
    dist: S,
    node: u32,
}

impl<S: Scalar> PartialEq for HeapEntry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl<S: Scalar> Eq for HeapEntry<S> {}
impl<S: Scalar> Ord for HeapEntry<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap by distance; weights are finite and nonnegative.
        other
            .dist
            .partial_cmp(&self.dist)
            .expect("finite edge weights")
            .then_with(|| other.node.cmp(&self.node))
    }
}
impl<S: Scalar> PartialOrd for HeapEntry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra<S: Scalar>(g: &RouterGraph<S>, source: usize) -> Vec<S> {
    let mut dist = vec![S::infinity(); g.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = S::zero();
    heap.push(HeapEntry {
        dist: S::zero(),
        node: source as u32,
    });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        let u = node as usize;
        if d > dist[u] {
            continue;
        }
        for &(v, w) in g.neighbors(u) {
            let nd = d + w;
            if nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Shortest travel time in minutes from a centroid to every PoI, over all
/// itineraries the graph admits (direct walk, walk-board-ride-alight-walk,
/// transfers paying the boarding wait of each next line). The direct-walk
/// edge guarantees every PoI is reachable.
pub fn shortest_travel_times<S: Scalar>(
    g: &RouterGraph<S>,
    origin: CentroidId,
) -> Result<BTreeMap<PoiId, S>> {
    let source = g
        .centroid_node(origin)
        .ok_or_else(|| Error::InvalidScenario(format!("unknown centroid {}", origin.0)))?;
    let dist = dijkstra(g, source);
    Ok(g.poi_nodes()
        .iter()
        .map(|&(pid, node)| (pid, dist[node]))
        .collect())
}

/// Accessibility of one centroid given its travel times (Poi weights are
/// matched by id; times for PoIs absent from `times` are an error in the
/// caller's bookkeeping and simply skipped here).
pub fn centroid_accessibility<S: Scalar>(
    times: &BTreeMap<PoiId, S>,
    pois: &[Poi<S>],
    t_max: S,
) -> S {
    debug_assert!(t_max > S::zero());
    let mut acc = S::zero();
    for poi in pois {
        if let Some(&t) = times.get(&poi.id) {
            acc = acc + poi.weight * (S::one() - t / t_max).max(S::zero());
        }
    }
    acc
}

/// Number of centroids in the bottom-`q`-percent set: `ceil(q / 100 * n)`.
pub fn worst_set_size(n: usize, q: f64) -> usize {
    debug_assert!(q > 0.0 && q <= 100.0);
    let size = (q / 100.0 * n as f64).ceil() as usize;
    size.clamp(1, n)
}

/// The ids of the `q%` least accessible centroids, ties broken by
/// ascending centroid id. Returned sorted by id.
pub fn worst_quantile_set<S: Scalar>(
    per_centroid: &BTreeMap<CentroidId, S>,
    q: f64,
) -> Vec<CentroidId> {
    let mut order: Vec<(&CentroidId, &S)> = per_centroid.iter().collect();
    order.sort_by(|a, b| {
        a.1.partial_cmp(b.1)
            .expect("finite accessibility values")
            .then_with(|| a.0.cmp(b.0))
    });
    let size = worst_set_size(per_centroid.len(), q);
    let mut ids: Vec<CentroidId> = order[..size].iter().map(|(id, _)| **id).collect();
    ids.sort();
    ids
}

/// Sum of accessibility over the `q%` least accessible centroids.
pub fn quantile_accessibility<S: Scalar>(per_centroid: &BTreeMap<CentroidId, S>, q: f64) -> S {
    debug_assert!(!per_centroid.is_empty());
    let ids = worst_quantile_set(per_centroid, q);
    // Canonical order: ascending centroid id, so q = 100 reproduces the
    // global sum exactly.
    ids.iter().map(|id| per_centroid[id]).sum()
}

/// Total accessibility of the graph: the q = 100 aggregate.
pub fn global_accessibility<S: Scalar>(per_centroid: &BTreeMap<CentroidId, S>) -> S {
    per_centroid.values().copied().sum()
}

/// Per-centroid accessibility for every centroid of the scenario.
/// `parallel` distributes centroids over threads; results are identical
/// either way.
pub fn per_centroid_accessibility<S: Scalar>(
    s: &Scenario<S>,
    g: &RouterGraph<S>,
    parallel: bool,
) -> Result<BTreeMap<CentroidId, S>> {
    let compute = |c: &crate::territory::Centroid<S>| -> Result<(CentroidId, S)> {
        let times = shortest_travel_times(g, c.id)?;
        Ok((c.id, centroid_accessibility(&times, &s.pois, s.params.t_max_minutes)))
    };
    let entries: Result<Vec<(CentroidId, S)>> = if parallel {
        s.centroids.par_iter().map(compute).collect()
    } else {
        s.centroids.iter().map(compute).collect()
    };
    Ok(entries?.into_iter().collect())
}

/// Quantile aggregate entry of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEntry<S> {
    pub q: f64,
    pub value: S,
    /// The centroids counted by this quantile, sorted by id.
    pub worst_set: Vec<CentroidId>,
}

/// Accessibility of every centroid plus the requested quantile aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityReport<S> {
    pub per_centroid: BTreeMap<CentroidId, S>,
    pub quantiles: Vec<QuantileEntry<S>>,
}

impl<S: Scalar> AccessibilityReport<S> {
    pub fn quantile(&self, q: f64) -> Option<&QuantileEntry<S>> {
        self.quantiles.iter().find(|e| e.q == q)
    }

    pub fn global(&self) -> S {
        global_accessibility(&self.per_centroid)
    }
}

/// Compute a full report for a scenario and an already-built graph.
pub fn compute_report<S: Scalar>(
    s: &Scenario<S>,
    g: &RouterGraph<S>,
    quantiles: &[f64],
    parallel: bool,
) -> Result<AccessibilityReport<S>> {
    for &q in quantiles {
        if !(q > 0.0 && q <= 100.0) {
            return Err(Error::InvalidScenario(format!(
                "quantile {q} outside (0, 100]"
            )));
        }
    }
    let per_centroid = per_centroid_accessibility(s, g, parallel)?;
    let quantiles = quantiles
        .iter()
        .map(|&q| QuantileEntry {
            q,
            value: quantile_accessibility(&per_centroid, q),
            worst_set: worst_quantile_set(&per_centroid, q),
        })
        .collect();
    Ok(AccessibilityReport {
        per_centroid,
        quantiles,
    })
}
