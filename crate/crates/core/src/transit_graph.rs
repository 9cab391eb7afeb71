//! Multi-modal router graph: street nodes for centroids, PoIs and physical
//! stops, plus one line-node per (stop, line) pair. Edge weights are
//! minutes.
//!
//! Edge kinds:
//!
//! * walking — centroid -> every stop, centroid -> every PoI,
//!   stop -> every PoI. Walking edges are oriented from trip origins
//!   toward destinations, so a PoI is never a waypoint of a longer trip;
//!   riding is what carries a traveler between stops.
//! * boarding — street stop -> line-node, weighted `t_l / 2` (the expected
//!   wait for the next vehicle). Transfers between lines pay the boarding
//!   wait of the next line by alighting to the street stop and boarding
//!   again.
//! * riding — consecutive line-nodes of a line, in both directions.
//! * alighting — line-node -> street stop, weight 0.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::territory::{euclidean_minutes, CentroidId, PoiId, Scenario, StopId, StopKind};

/// Headway of a line of length `d_l` km served by `n_l` vehicles at
/// `s_b` km/h: the time between consecutive departures.
pub fn compute_headway<S: Scalar>(d_l: S, s_b: S, n_l: u32) -> S {
    debug_assert!(s_b > S::zero() && n_l >= 1 && d_l >= S::zero());
    S::of(60.0) * d_l / (s_b * S::of(n_l as f64))
}

/// A designed bus line: ordered candidate stops, total length, and the
/// headway implied by the fleet size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusLine<S> {
    pub id: u32,
    pub ordered_stops: Vec<StopId>,
    pub length_km: S,
    pub headway_minutes: S,
}

impl<S: Scalar> BusLine<S> {
    /// Build a line from an already-ordered stop sequence, computing its
    /// length and headway from the scenario constants.
    pub fn from_ordered_stops(id: u32, ordered: Vec<StopId>, s: &Scenario<S>) -> Result<Self> {
        if ordered.is_empty() {
            return Err(Error::InvalidAssignment(format!("bus line {id} is empty")));
        }
        let mut seen = HashSet::new();
        for sid in &ordered {
            match s.stop(*sid) {
                None => {
                    return Err(Error::InvalidAssignment(format!(
                        "bus line {id} references unknown stop {}",
                        sid.0
                    )))
                }
                Some(st) if st.kind != StopKind::BusCandidate => {
                    return Err(Error::InvalidAssignment(format!(
                        "bus line {id} references non-candidate stop {}",
                        sid.0
                    )))
                }
                Some(_) => {}
            }
            if !seen.insert(*sid) {
                return Err(Error::InvalidAssignment(format!(
                    "bus line {id} repeats stop {}",
                    sid.0
                )));
            }
        }
        let locs = s.stop_locations();
        let mut length = S::zero();
        for w in ordered.windows(2) {
            length = length + locs[&w[0]].distance(&locs[&w[1]]);
        }
        let headway = compute_headway(length, s.params.bus_speed_kmh, s.params.fleet_per_line);
        Ok(BusLine {
            id,
            ordered_stops: ordered,
            length_km: length,
            headway_minutes: headway,
        })
    }
}

/// Options for graph construction. Defaults reproduce the plain model:
/// no terminal time, complete walking edges.
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions<S> {
    /// Added to every bus headway before the boarding wait is derived,
    /// modeling time spent at the terminal between runs.
    pub terminal_minutes: S,
    /// If set, walking edges between centroids/stops and stops/PoIs longer
    /// than this radius are dropped. Centroid -> PoI edges are always kept
    /// so every trip has a finite direct-walk fallback.
    pub max_walk_km: Option<S>,
}

impl<S: Scalar> Default for BuildOptions<S> {
    fn default() -> Self {
        BuildOptions {
            terminal_minutes: S::zero(),
            max_walk_km: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCounts {
    pub walking: usize,
    pub boarding: usize,
    pub riding: usize,
    pub alighting: usize,
}

/// Time-weighted directed graph over which shortest travel times are
/// computed. Immutable once built.
#[derive(Debug, Clone)]
pub struct RouterGraph<S> {
    adj: Vec<Vec<(u32, S)>>,
    centroid_nodes: HashMap<CentroidId, usize>,
    poi_nodes: Vec<(PoiId, usize)>,
    stop_nodes: HashMap<StopId, usize>,
    line_node_count: usize,
    counts: EdgeCounts,
}

impl<S: Scalar> RouterGraph<S> {
    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_counts(&self) -> EdgeCounts {
        self.counts
    }

    pub fn line_node_count(&self) -> usize {
        self.line_node_count
    }

    pub fn centroid_node(&self, id: CentroidId) -> Option<usize> {
        self.centroid_nodes.get(&id).copied()
    }

    pub fn stop_node(&self, id: StopId) -> Option<usize> {
        self.stop_nodes.get(&id).copied()
    }

    /// PoI ids with their node indices, in scenario order.
    pub fn poi_nodes(&self) -> &[(PoiId, usize)] {
        &self.poi_nodes
    }

    /// Outgoing edges of a node.
    pub fn neighbors(&self, node: usize) -> &[(u32, S)] {
        &self.adj[node]
    }

    fn add_edge(&mut self, from: usize, to: usize, weight: S) {
        self.adj[from].push((to as u32, weight));
    }
}

/// Build the router graph for a scenario and a set of designed bus lines.
///
/// Node count is `|centroids| + |pois| + |stops| + sum over lines of the
/// stops on each line` (metro lines included). A candidate stop may appear
/// in at most one bus line.
pub fn build_router_graph<S: Scalar>(
    s: &Scenario<S>,
    lines: &[BusLine<S>],
) -> Result<RouterGraph<S>> {
    build_router_graph_with(s, lines, &BuildOptions::default())
}

pub fn build_router_graph_with<S: Scalar>(
    s: &Scenario<S>,
    lines: &[BusLine<S>],
    opts: &BuildOptions<S>,
) -> Result<RouterGraph<S>> {
    let mut assigned = HashSet::new();
    for line in lines {
        for sid in &line.ordered_stops {
            if !assigned.insert(*sid) {
                return Err(Error::InvalidAssignment(format!(
                    "stop {} appears in more than one bus line",
                    sid.0
                )));
            }
        }
    }

    let n_centroids = s.centroids.len();
    let n_pois = s.pois.len();
    let n_stops = s.stops.len();
    let metro_line_nodes: usize = s.metro_lines.iter().map(|l| l.stops.len()).sum();
    let bus_line_nodes: usize = lines.iter().map(|l| l.ordered_stops.len()).sum();
    let total = n_centroids + n_pois + n_stops + metro_line_nodes + bus_line_nodes;

    let mut g = RouterGraph {
        adj: vec![Vec::new(); total],
        centroid_nodes: HashMap::with_capacity(n_centroids),
        poi_nodes: Vec::with_capacity(n_pois),
        stop_nodes: HashMap::with_capacity(n_stops),
        line_node_count: metro_line_nodes + bus_line_nodes,
        counts: EdgeCounts::default(),
    };

    for (i, c) in s.centroids.iter().enumerate() {
        g.centroid_nodes.insert(c.id, i);
    }
    for (i, p) in s.pois.iter().enumerate() {
        g.poi_nodes.push((p.id, n_centroids + i));
    }
    for (i, st) in s.stops.iter().enumerate() {
        g.stop_nodes.insert(st.id, n_centroids + n_pois + i);
    }

    let walk = s.params.walk_speed_kmh;
    let within_radius = |d_km: S| match opts.max_walk_km {
        Some(r) => d_km <= r,
        None => true,
    };

    // Walking edges.
    for c in &s.centroids {
        let from = g.centroid_nodes[&c.id];
        for st in &s.stops {
            if within_radius(c.location.distance(&st.location)) {
                let to = g.stop_nodes[&st.id];
                g.add_edge(from, to, euclidean_minutes(c.location, st.location, walk));
                g.counts.walking += 1;
            }
        }
        for (pi, p) in s.pois.iter().enumerate() {
            let to = n_centroids + pi;
            g.add_edge(from, to, euclidean_minutes(c.location, p.location, walk));
            g.counts.walking += 1;
        }
    }
    for st in &s.stops {
        let from = g.stop_nodes[&st.id];
        for (pi, p) in s.pois.iter().enumerate() {
            if within_radius(st.location.distance(&p.location)) {
                let to = n_centroids + pi;
                g.add_edge(from, to, euclidean_minutes(st.location, p.location, walk));
                g.counts.walking += 1;
            }
        }
    }

    // Service edges. Each line contributes one line-node per stop; a line
    // with a single stop contributes its node but no edges.
    let locs = s.stop_locations();
    let mut next_node = n_centroids + n_pois + n_stops;
    let bus_speed = s.params.bus_speed_kmh;
    let mut add_line = |g: &mut RouterGraph<S>, stops: &[StopId], headway: S| {
        let first = next_node;
        next_node += stops.len();
        if stops.len() < 2 {
            return;
        }
        let wait = headway / S::of(2.0);
        for (i, sid) in stops.iter().enumerate() {
            let street = g.stop_nodes[sid];
            let line_node = first + i;
            g.add_edge(street, line_node, wait);
            g.counts.boarding += 1;
            g.add_edge(line_node, street, S::zero());
            g.counts.alighting += 1;
        }
        for (i, w) in stops.windows(2).enumerate() {
            let t = euclidean_minutes(locs[&w[0]], locs[&w[1]], bus_speed);
            g.add_edge(first + i, first + i + 1, t);
            g.add_edge(first + i + 1, first + i, t);
            g.counts.riding += 2;
        }
    };

    for line in &s.metro_lines {
        add_line(&mut g, &line.stops, line.headway_minutes);
    }
    for line in lines {
        let headway = line.headway_minutes + opts.terminal_minutes;
        add_line(&mut g, &line.ordered_stops, headway);
    }
    debug_assert_eq!(next_node, total);

    Ok(g)
}
