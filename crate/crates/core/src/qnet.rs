//! Message-passing Q-network over the candidate stops.
//!
//! Per-stop feature vectors and a directed adjacency matrix (stop `i`
//! right before stop `j` on some line) feed an embedding network:
//!
//! * node init: `mu_b = relu(Theta1 x_b)`
//! * edge init: `w_ub = relu(Theta2 [x_u; x_b])` per adjacency edge,
//!   constant across rounds
//! * round `t`: message `m_b = relu(Theta3_t [mu_b; mean mu_u; mean w_ub])`
//!   over the in-neighborhood of `b` (zero vectors when the neighborhood
//!   is empty), then `mu_b = relu(Theta4_t [mu_b; m_b])`
//! * readout: `Q(S, (b, l)) = Theta5 [mu_b; mean over stops of line l]`
//!   for every admissible action, computed after `T` rounds.
//!
//! Gradients are hand-written (reverse accumulation over the dense
//! matrix form) and checked against central finite differences in the
//! test suite. The one-step Q-learning target is treated as a constant,
//! so no gradient flows through the successor state's Q-values.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{enumerate_actions, Action, LineAssignment};
use crate::scalar::Scalar;
use crate::territory::{euclidean_minutes, Scenario, StopId, StopKind};
use crate::transit_graph::BusLine;

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QNetHyper<S> {
    /// Node embedding width `n`.
    pub embed_dim: usize,
    /// Edge embedding width `m`.
    pub edge_dim: usize,
    /// Message width `n'`.
    pub msg_dim: usize,
    /// Message-passing rounds `T`.
    pub rounds: usize,
    pub learning_rate: S,
    pub gamma: S,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Training actions over which epsilon anneals linearly.
    pub eps_decay_steps: u64,
    /// Global L2 gradient-norm ceiling applied during training. The
    /// online targets bootstrap on positive rewards only, which lets
    /// unclipped SGD diverge; `None` disables clipping.
    pub grad_clip_norm: Option<S>,
}

impl<S: Scalar> Default for QNetHyper<S> {
    fn default() -> Self {
        QNetHyper {
            embed_dim: 32,
            edge_dim: 16,
            msg_dim: 32,
            rounds: 3,
            learning_rate: S::of(1e-3),
            gamma: S::of(0.95),
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 200,
            grad_clip_norm: Some(S::of(10.0)),
        }
    }
}

impl<S: Scalar> QNetHyper<S> {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.edge_dim == 0 || self.msg_dim == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        let gamma = self.gamma.to_f64_lossy();
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
        }
        Ok(())
    }
}

/// Dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> Affine<S> {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| {
            S::of(rng.gen_range(-scale..scale))
        });
        Affine {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    /// Apply to a batch of row vectors: `(rows, in) -> (rows, out)`.
    fn apply_rows(&self, x: &Array2<S>) -> Array2<S> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// All learnable weights. The same shape doubles as the gradient
/// container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights<S> {
    pub theta1: Affine<S>,
    pub theta2: Affine<S>,
    pub theta3: Vec<Affine<S>>,
    pub theta4: Vec<Affine<S>>,
    pub theta5: Affine<S>,
}

pub type Gradients<S> = Weights<S>;

impl<S: Scalar> Weights<S> {
    fn for_each(&self, mut f: impl FnMut(S)) {
        let mut aff = |a: &Affine<S>, f: &mut dyn FnMut(S)| {
            a.weight.iter().for_each(|&v| f(v));
            a.bias.iter().for_each(|&v| f(v));
        };
        aff(&self.theta1, &mut f);
        aff(&self.theta2, &mut f);
        for a in &self.theta3 {
            aff(a, &mut f);
        }
        for a in &self.theta4 {
            aff(a, &mut f);
        }
        aff(&self.theta5, &mut f);
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|v| ok &= v.is_finite());
        ok
    }

    /// Global L2 norm over every entry.
    pub fn l2_norm(&self) -> S {
        let mut sum = S::zero();
        self.for_each(|v| sum = sum + v * v);
        sum.sqrt()
    }

    /// Scale every entry in place.
    pub fn scale(&mut self, factor: S) {
        let mut aff = |a: &mut Affine<S>| {
            a.weight.mapv_inplace(|v| v * factor);
            a.bias.mapv_inplace(|v| v * factor);
        };
        aff(&mut self.theta1);
        aff(&mut self.theta2);
        for a in &mut self.theta3 {
            aff(a);
        }
        for a in &mut self.theta4 {
            aff(a);
        }
        aff(&mut self.theta5);
    }

    /// Rescale so the global L2 norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: S) {
        let norm = self.l2_norm();
        if norm > max_norm && norm > S::zero() {
            self.scale(max_norm / norm);
        }
    }
}

/// Learnable parameters plus the hyperparameters they were shaped by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetworkParams<S> {
    pub hyper: QNetHyper<S>,
    /// Per-stop feature width `k + 5`.
    pub feature_dim: usize,
    pub weights: Weights<S>,
}

fn weight_shapes<S: Scalar>(hyper: &QNetHyper<S>, d_x: usize) -> Vec<(usize, usize)> {
    let (n, m, np) = (hyper.embed_dim, hyper.edge_dim, hyper.msg_dim);
    let mut shapes = vec![(n, d_x), (m, 2 * d_x)];
    for _ in 0..hyper.rounds {
        shapes.push((np, 2 * n + m));
    }
    for _ in 0..hyper.rounds {
        shapes.push((n, n + np));
    }
    shapes.push((1, 2 * n));
    shapes
}

impl<S: Scalar> QNetworkParams<S> {
    /// Random initialization for a problem with `k` lines (feature width
    /// `k + 5`).
    pub fn init(hyper: QNetHyper<S>, k: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let d_x = k + 5;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::sub_seed(seed, "qnet-init"));
        let (n, m, np) = (hyper.embed_dim, hyper.edge_dim, hyper.msg_dim);
        let weights = Weights {
            theta1: Affine::init(n, d_x, &mut rng),
            theta2: Affine::init(m, 2 * d_x, &mut rng),
            theta3: (0..hyper.rounds)
                .map(|_| Affine::init(np, 2 * n + m, &mut rng))
                .collect(),
            theta4: (0..hyper.rounds)
                .map(|_| Affine::init(n, n + np, &mut rng))
                .collect(),
            theta5: Affine::init(1, 2 * n, &mut rng),
        };
        Ok(QNetworkParams {
            hyper,
            feature_dim: d_x,
            weights,
        })
    }

    /// All-zero weights (useful in tests; all Q-values are zero).
    pub fn zeros(hyper: QNetHyper<S>, k: usize) -> Result<Self> {
        hyper.validate()?;
        let d_x = k + 5;
        let (n, m, np) = (hyper.embed_dim, hyper.edge_dim, hyper.msg_dim);
        let weights = Weights {
            theta1: Affine::zeros(n, d_x),
            theta2: Affine::zeros(m, 2 * d_x),
            theta3: (0..hyper.rounds).map(|_| Affine::zeros(np, 2 * n + m)).collect(),
            theta4: (0..hyper.rounds).map(|_| Affine::zeros(n, n + np)).collect(),
            theta5: Affine::zeros(1, 2 * n),
        };
        Ok(QNetworkParams {
            hyper,
            feature_dim: d_x,
            weights,
        })
    }

    /// Zero gradient container with matching shapes.
    pub fn zero_grads(&self) -> Gradients<S> {
        let w = &self.weights;
        Weights {
            theta1: Affine::zeros(w.theta1.out_dim(), w.theta1.in_dim()),
            theta2: Affine::zeros(w.theta2.out_dim(), w.theta2.in_dim()),
            theta3: w
                .theta3
                .iter()
                .map(|a| Affine::zeros(a.out_dim(), a.in_dim()))
                .collect(),
            theta4: w
                .theta4
                .iter()
                .map(|a| Affine::zeros(a.out_dim(), a.in_dim()))
                .collect(),
            theta5: Affine::zeros(w.theta5.out_dim(), w.theta5.in_dim()),
        }
    }

    /// Verify that every weight matrix matches the declared
    /// hyperparameters.
    pub fn validate_shapes(&self) -> Result<()> {
        self.hyper.validate()?;
        let expected = weight_shapes(&self.hyper, self.feature_dim);
        let w = &self.weights;
        if w.theta3.len() != self.hyper.rounds || w.theta4.len() != self.hyper.rounds {
            return Err(Error::Config(format!(
                "expected {} message/update maps, found {}/{}",
                self.hyper.rounds,
                w.theta3.len(),
                w.theta4.len()
            )));
        }
        let mut actual = vec![
            (w.theta1.out_dim(), w.theta1.in_dim()),
            (w.theta2.out_dim(), w.theta2.in_dim()),
        ];
        actual.extend(w.theta3.iter().map(|a| (a.out_dim(), a.in_dim())));
        actual.extend(w.theta4.iter().map(|a| (a.out_dim(), a.in_dim())));
        actual.push((w.theta5.out_dim(), w.theta5.in_dim()));
        if actual != expected {
            return Err(Error::Config(format!(
                "weight shapes {actual:?} do not match hyperparameters {expected:?}"
            )));
        }
        for a in [&w.theta1, &w.theta2, &w.theta5]
            .into_iter()
            .chain(w.theta3.iter())
            .chain(w.theta4.iter())
        {
            if a.weight.iter().any(|v| !v.is_finite()) || a.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("non-finite weight".into()));
            }
        }
        Ok(())
    }

    /// Structural compatibility with an expected configuration.
    pub fn check_compatible(&self, hyper: &QNetHyper<S>, feature_dim: usize) -> Result<()> {
        if self.hyper.embed_dim != hyper.embed_dim
            || self.hyper.edge_dim != hyper.edge_dim
            || self.hyper.msg_dim != hyper.msg_dim
            || self.hyper.rounds != hyper.rounds
            || self.feature_dim != feature_dim
        {
            return Err(Error::Config(format!(
                "checkpoint structure (n={}, m={}, n'={}, T={}, d_x={}) does not match \
                 expected (n={}, m={}, n'={}, T={}, d_x={})",
                self.hyper.embed_dim,
                self.hyper.edge_dim,
                self.hyper.msg_dim,
                self.hyper.rounds,
                self.feature_dim,
                hyper.embed_dim,
                hyper.edge_dim,
                hyper.msg_dim,
                hyper.rounds,
                feature_dim
            )));
        }
        Ok(())
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint<S> {
    format_version: u32,
    #[serde(bound(
        serialize = "S: Serialize",
        deserialize = "S: serde::de::DeserializeOwned"
    ))]
    params: QNetworkParams<S>,
}

/// Write a versioned JSON checkpoint (hyperparameters plus all weights).
pub fn save_checkpoint<S: Scalar>(params: &QNetworkParams<S>, path: &Path) -> Result<()> {
    params.validate_shapes()?;
    let ck = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    fs::write(path, serde_json::to_string(&ck)?)?;
    Ok(())
}

/// Load a checkpoint, verifying version and internal shape consistency.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<QNetworkParams<S>> {
    let text = fs::read_to_string(path)?;
    let ck: Checkpoint<S> = serde_json::from_str(&text)?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            ck.format_version
        )));
    }
    ck.params.validate_shapes()?;
    Ok(ck.params)
}

/// Load a checkpoint and require it to match an expected structure.
pub fn load_checkpoint_expecting<S: Scalar>(
    path: &Path,
    hyper: &QNetHyper<S>,
    feature_dim: usize,
) -> Result<QNetworkParams<S>> {
    let params = load_checkpoint(path)?;
    params.check_compatible(hyper, feature_dim)?;
    Ok(params)
}

/// Per-stop feature matrix, `n_b x (k + 5)` rows in candidate order:
/// normalized coordinates, one-hot line membership, normalized distance
/// to the nearest metro station, walk-only PoI proximity, and the current
/// line's headway relative to the accessibility horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures<S> {
    pub matrix: Array2<S>,
}

/// Directed stop adjacency: entry `(i, j)` is 1 when stop `i` comes right
/// before stop `j` on some line's current ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub matrix: Array2<u8>,
}

impl AdjacencyMatrix {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for ((i, j), &v) in self.matrix.indexed_iter() {
            if v != 0 {
                edges.push((i, j));
            }
        }
        edges
    }
}

/// Precomputed per-scenario feature context (coordinates, metro
/// distances, PoI proximity do not change with the line assignment).
pub struct FeatureExtractor<S> {
    index_of: HashMap<StopId, usize>,
    static_cols: Array2<S>,
    k: usize,
    t_max: S,
}

impl<S: Scalar> FeatureExtractor<S> {
    pub fn new(scenario: &Scenario<S>) -> Result<Self> {
        scenario.validate()?;
        let candidates = scenario.candidate_ids();
        let n_b = candidates.len();
        let k = scenario.params.num_lines as usize;
        let (min, max) = scenario.bounding_box();
        let width = max.x - min.x;
        let height = max.y - min.y;
        let diag = (width * width + height * height).sqrt();
        let locs = scenario.stop_locations();
        let metro_locs: Vec<_> = scenario
            .stops
            .iter()
            .filter(|s| s.kind == StopKind::Metro)
            .map(|s| s.location)
            .collect();
        let total_weight = scenario.total_poi_weight();
        let walk = scenario.params.walk_speed_kmh;
        let t_max = scenario.params.t_max_minutes;

        let mut cols = Array2::zeros((n_b, 4));
        for (i, sid) in candidates.iter().enumerate() {
            let loc = locs[sid];
            cols[[i, 0]] = if width > S::zero() {
                (loc.x - min.x) / width
            } else {
                S::zero()
            };
            cols[[i, 1]] = if height > S::zero() {
                (loc.y - min.y) / height
            } else {
                S::zero()
            };
            let metro_dist = metro_locs
                .iter()
                .map(|m| loc.distance(m))
                .fold(S::infinity(), |a, b| a.min(b));
            cols[[i, 2]] = if metro_locs.is_empty() {
                S::one()
            } else if diag > S::zero() {
                metro_dist / diag
            } else {
                S::zero()
            };
            let mut prox = S::zero();
            for poi in &scenario.pois {
                let t = euclidean_minutes(loc, poi.location, walk);
                prox = prox + poi.weight * (S::one() - t / t_max).max(S::zero());
            }
            cols[[i, 3]] = if total_weight > S::zero() {
                prox / total_weight
            } else {
                S::zero()
            };
        }

        Ok(FeatureExtractor {
            index_of: candidates
                .iter()
                .enumerate()
                .map(|(i, id)| (*id, i))
                .collect(),
            static_cols: cols,
            k,
            t_max,
        })
    }

    pub fn num_stops(&self) -> usize {
        self.index_of.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.k + 5
    }

    /// Assemble the state-dependent feature matrix and adjacency for a
    /// line assignment and its realized lines.
    pub fn build(
        &self,
        st: &LineAssignment,
        lines: &[BusLine<S>],
    ) -> Result<(NodeFeatures<S>, AdjacencyMatrix)> {
        let n_b = self.num_stops();
        if st.num_stops() != n_b || st.k() != self.k {
            return Err(Error::InvalidAssignment(format!(
                "assignment shape ({} stops, {} lines) does not match scenario ({n_b}, {})",
                st.num_stops(),
                st.k(),
                self.k
            )));
        }
        let mut headway_of_line = vec![None; self.k];
        let mut adjacency = Array2::zeros((n_b, n_b));
        for line in lines {
            let idx = line.id as usize;
            if idx >= self.k {
                return Err(Error::InvalidAssignment(format!(
                    "line id {} outside 0..{}",
                    line.id, self.k
                )));
            }
            headway_of_line[idx] = Some(line.headway_minutes);
            for w in line.ordered_stops.windows(2) {
                let u = *self.index_of.get(&w[0]).ok_or_else(|| {
                    Error::InvalidAssignment(format!("unknown candidate stop {}", w[0].0))
                })?;
                let v = *self.index_of.get(&w[1]).ok_or_else(|| {
                    Error::InvalidAssignment(format!("unknown candidate stop {}", w[1].0))
                })?;
                adjacency[[u, v]] = 1;
            }
        }

        let d_x = self.feature_dim();
        let mut x = Array2::zeros((n_b, d_x));
        for i in 0..n_b {
            x[[i, 0]] = self.static_cols[[i, 0]];
            x[[i, 1]] = self.static_cols[[i, 1]];
            let line = st.line_of(i) as usize;
            x[[i, 2 + line]] = S::one();
            x[[i, 2 + self.k]] = self.static_cols[[i, 2]];
            x[[i, 3 + self.k]] = self.static_cols[[i, 3]];
            let headway = headway_of_line[line].ok_or_else(|| {
                Error::InvalidAssignment(format!("no realized line for index {line}"))
            })?;
            x[[i, 4 + self.k]] = headway / self.t_max;
        }
        Ok((NodeFeatures { matrix: x }, AdjacencyMatrix { matrix: adjacency }))
    }
}

/// One-call feature construction straight from a scenario.
pub fn build_features<S: Scalar>(
    s: &Scenario<S>,
    st: &LineAssignment,
    lines: &[BusLine<S>],
) -> Result<(NodeFeatures<S>, AdjacencyMatrix)> {
    FeatureExtractor::new(s)?.build(st, lines)
}

fn relu<S: Scalar>(x: &Array2<S>) -> Array2<S> {
    x.mapv(|v| v.max(S::zero()))
}

fn relu_mask_into<S: Scalar>(grad: &mut Array2<S>, pre: &Array2<S>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= S::zero() {
            *g = S::zero();
        }
    });
}

/// Forward intermediates kept for the backward pass.
/// Per-state forward pass artifacts: final embeddings for Q readout plus
/// every intermediate the backward pass needs. Opaque outside the module;
/// optimizers hold one per visited state so action scoring and learning
/// never repeat a forward pass.
pub struct Embeddings<S> {
    x: Array2<S>,
    edges: Vec<(usize, usize)>,
    /// 1 / indegree of each edge's target node.
    edge_share: Vec<S>,
    edge_input: Array2<S>,
    w0_pre: Array2<S>,
    nbr_w: Array2<S>,
    mu0_pre: Array2<S>,
    /// `mus[t]` is the embedding entering round `t`; `mus[rounds]` is the
    /// final embedding.
    mus: Vec<Array2<S>>,
    nbr_mus: Vec<Array2<S>>,
    msg_pre: Vec<Array2<S>>,
    msgs: Vec<Array2<S>>,
    mu_pre: Vec<Array2<S>>,
}

fn concat_cols<S: Scalar>(parts: &[&Array2<S>]) -> Array2<S> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("matching row counts")
}

/// Run the message-passing forward pass for one state.
pub fn embed<S: Scalar>(
    params: &QNetworkParams<S>,
    features: &NodeFeatures<S>,
    adjacency: &AdjacencyMatrix,
) -> Result<Embeddings<S>> {
    let x = &features.matrix;
    let n_b = x.nrows();
    if x.ncols() != params.feature_dim {
        return Err(Error::Config(format!(
            "feature width {} does not match network input {}",
            x.ncols(),
            params.feature_dim
        )));
    }
    if adjacency.matrix.shape() != [n_b, n_b] {
        return Err(Error::Config("adjacency shape mismatch".into()));
    }
    params.validate_shapes()?;

    let w = &params.weights;
    let edges = adjacency.edges();
    let n_edges = edges.len();
    let d_x = params.feature_dim;
    let m = params.hyper.edge_dim;
    let n = params.hyper.embed_dim;

    // Edge embeddings: one row [x_u; x_v] per directed adjacency edge.
    let mut edge_input = Array2::zeros((n_edges, 2 * d_x));
    for (e, &(u, v)) in edges.iter().enumerate() {
        edge_input.slice_mut(s![e, ..d_x]).assign(&x.row(u));
        edge_input.slice_mut(s![e, d_x..]).assign(&x.row(v));
    }
    let w0_pre = w.theta2.apply_rows(&edge_input);
    let w0 = relu(&w0_pre);

    let mut indegree = vec![0usize; n_b];
    for &(_, v) in &edges {
        indegree[v] += 1;
    }
    let edge_share: Vec<S> = edges
        .iter()
        .map(|&(_, v)| S::one() / S::of(indegree[v] as f64))
        .collect();

    // Mean incoming edge embedding per node (zero when no in-neighbors).
    let mut nbr_w: Array2<S> = Array2::zeros((n_b, m));
    for (e, &(_, v)) in edges.iter().enumerate() {
        let share = edge_share[e];
        let row = w0.row(e);
        let mut target = nbr_w.row_mut(v);
        for j in 0..m {
            target[j] = target[j] + share * row[j];
        }
    }

    let mu0_pre = w.theta1.apply_rows(x);
    let mut mus = vec![relu(&mu0_pre)];
    let mut nbr_mus = Vec::with_capacity(params.hyper.rounds);
    let mut msg_pre = Vec::with_capacity(params.hyper.rounds);
    let mut msgs = Vec::with_capacity(params.hyper.rounds);
    let mut mu_pre = Vec::with_capacity(params.hyper.rounds);

    for t in 0..params.hyper.rounds {
        let mu = &mus[t];
        // Mean in-neighbor embedding via the edge list.
        let mut nbr_mu: Array2<S> = Array2::zeros((n_b, n));
        for (e, &(u, v)) in edges.iter().enumerate() {
            let share = edge_share[e];
            let src = mu.row(u);
            let mut target = nbr_mu.row_mut(v);
            for j in 0..n {
                target[j] = target[j] + share * src[j];
            }
        }
        let msg_in = concat_cols(&[mu, &nbr_mu, &nbr_w]);
        let z3 = w.theta3[t].apply_rows(&msg_in);
        let msg = relu(&z3);
        let upd_in = concat_cols(&[mu, &msg]);
        let z4 = w.theta4[t].apply_rows(&upd_in);
        let next_mu = relu(&z4);
        nbr_mus.push(nbr_mu);
        msg_pre.push(z3);
        msgs.push(msg);
        mu_pre.push(z4);
        mus.push(next_mu);
    }

    Ok(Embeddings {
        x: x.clone(),
        edges,
        edge_share,
        edge_input,
        w0_pre,
        nbr_w,
        mu0_pre,
        mus,
        nbr_mus,
        msg_pre,
        msgs,
        mu_pre,
    })
}

impl<S: Scalar> Embeddings<S> {
    fn final_mu(&self) -> &Array2<S> {
        self.mus.last().expect("at least the initial embedding")
    }
}

fn q_of_action<S: Scalar>(
    params: &QNetworkParams<S>,
    final_mu: &Array2<S>,
    st: &LineAssignment,
    action: &Action,
) -> (S, Array1<S>) {
    let n = params.hyper.embed_dim;
    let members = st.stops_on(action.target_line);
    let mut pooled = Array1::zeros(n);
    for &u in &members {
        pooled = pooled + &final_mu.row(u);
    }
    pooled.mapv_inplace(|v| v / S::of(members.len() as f64));
    let mut input = Array1::zeros(2 * n);
    input.slice_mut(s![..n]).assign(&final_mu.row(action.stop));
    input.slice_mut(s![n..]).assign(&pooled);
    let q = params.weights.theta5.weight.row(0).dot(&input) + params.weights.theta5.bias[0];
    (q, input)
}

/// Q-values for every admissible action, read out from precomputed
/// embeddings.
pub fn q_values<S: Scalar>(
    params: &QNetworkParams<S>,
    embeddings: &Embeddings<S>,
    st: &LineAssignment,
) -> Vec<(Action, S)> {
    let final_mu = embeddings.final_mu();
    enumerate_actions(st)
        .into_iter()
        .map(|a| {
            let (q, _) = q_of_action(params, final_mu, st, &a);
            (a, q)
        })
        .collect()
}

/// Highest Q-value over the admissible actions, or zero when the state
/// admits none (terminal convention for the bootstrap target).
pub fn max_q<S: Scalar>(
    params: &QNetworkParams<S>,
    embeddings: &Embeddings<S>,
    st: &LineAssignment,
) -> S {
    q_values(params, embeddings, st)
        .into_iter()
        .map(|(_, q)| q)
        .fold(None, |best: Option<S>, q| match best {
            Some(b) if b >= q => Some(b),
            _ => Some(q),
        })
        .unwrap_or(S::zero())
}

/// Q-values for every admissible action of the state, ordered like
/// [`enumerate_actions`]. Inadmissible actions are simply absent (their
/// Q is conceptually negative infinity).
pub fn forward<S: Scalar>(
    params: &QNetworkParams<S>,
    features: &NodeFeatures<S>,
    adjacency: &AdjacencyMatrix,
    st: &LineAssignment,
) -> Result<Vec<(Action, S)>> {
    let embeddings = embed(params, features, adjacency)?;
    Ok(q_values(params, &embeddings, st))
}

/// One observed transition, with the feature matrices of both endpoint
/// states already built.
pub struct StepSample<'a, S> {
    pub features: &'a NodeFeatures<S>,
    pub adjacency: &'a AdjacencyMatrix,
    pub state: &'a LineAssignment,
    pub action: Action,
    pub reward: S,
    pub next_features: &'a NodeFeatures<S>,
    pub next_adjacency: &'a AdjacencyMatrix,
    pub next_state: &'a LineAssignment,
}

/// The scalar one-step Q-learning loss
/// `(gamma * max_next + reward - q_value)^2`.
pub fn one_step_loss<S: Scalar>(gamma: S, max_next: S, reward: S, q_value: S) -> S {
    let delta = gamma * max_next + reward - q_value;
    delta * delta
}

/// One-step Q-learning loss `(gamma * max_a' Q(S', a') + r - Q(S, a))^2`
/// and its gradient with respect to every weight. The bracketed target is
/// a constant of the optimization (semi-gradient update).
pub fn loss_and_grads<S: Scalar>(
    params: &QNetworkParams<S>,
    sample: &StepSample<'_, S>,
    gamma: S,
) -> Result<(S, Gradients<S>)> {
    let next = embed(params, sample.next_features, sample.next_adjacency)?;
    let current = embed(params, sample.features, sample.adjacency)?;
    Ok(loss_and_grads_from(
        params,
        &current,
        sample.state,
        sample.action,
        sample.reward,
        &next,
        sample.next_state,
        gamma,
    ))
}

/// Same as [`loss_and_grads`], but reusing already-computed embeddings of
/// the two endpoint states.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads_from<S: Scalar>(
    params: &QNetworkParams<S>,
    current: &Embeddings<S>,
    state: &LineAssignment,
    action: Action,
    reward: S,
    next: &Embeddings<S>,
    next_state: &LineAssignment,
    gamma: S,
) -> (S, Gradients<S>) {
    // Target from the successor state; no gradient flows through it.
    let max_next = max_q(params, next, next_state);

    let rounds = params.hyper.rounds;
    let (q_sa, readout_input) = q_of_action(params, current.final_mu(), state, &action);

    let delta = gamma * max_next + reward - q_sa;
    let loss = one_step_loss(gamma, max_next, reward, q_sa);

    let w = &params.weights;
    let mut grads = params.zero_grads();
    let n = params.hyper.embed_dim;
    let n_b = current.x.nrows();
    let dq = -(S::of(2.0) * delta);

    // Readout.
    grads.theta5.weight.row_mut(0).assign(&readout_input.mapv(|v| v * dq));
    grads.theta5.bias[0] = dq;

    let mut d_mu: Array2<S> = Array2::zeros((n_b, n));
    {
        let w5 = w.theta5.weight.row(0);
        let members = state.stops_on(action.target_line);
        let share = S::one() / S::of(members.len() as f64);
        for j in 0..n {
            d_mu[[action.stop, j]] = d_mu[[action.stop, j]] + dq * w5[j];
        }
        for &u in &members {
            for j in 0..n {
                d_mu[[u, j]] = d_mu[[u, j]] + dq * w5[n + j] * share;
            }
        }
    }

    // Rounds, in reverse.
    let mut d_nbr_w_total: Array2<S> = Array2::zeros(current.nbr_w.raw_dim());
    for t in (0..rounds).rev() {
        // Through mu_{t+1} = relu(Theta4 [mu_t; msg]).
        let mut dz4 = d_mu;
        relu_mask_into(&mut dz4, &current.mu_pre[t]);
        let upd_in = concat_cols(&[&current.mus[t], &current.msgs[t]]);
        grads.theta4[t].weight = dz4.t().dot(&upd_in);
        grads.theta4[t].bias = dz4.sum_axis(Axis(0));
        let d_upd_in = dz4.dot(&w.theta4[t].weight);
        let mut d_mu_t = d_upd_in.slice(s![.., ..n]).to_owned();
        let d_msg = d_upd_in.slice(s![.., n..]).to_owned();

        // Through msg = relu(Theta3 [mu_t; nbr_mu; nbr_w]).
        let mut dz3 = d_msg;
        relu_mask_into(&mut dz3, &current.msg_pre[t]);
        let msg_in = concat_cols(&[&current.mus[t], &current.nbr_mus[t], &current.nbr_w]);
        grads.theta3[t].weight = dz3.t().dot(&msg_in);
        grads.theta3[t].bias = dz3.sum_axis(Axis(0));
        let d_msg_in = dz3.dot(&w.theta3[t].weight);
        let m = params.hyper.edge_dim;
        d_mu_t = d_mu_t + d_msg_in.slice(s![.., ..n]);
        let d_nbr_mu = d_msg_in.slice(s![.., n..2 * n]);
        d_nbr_w_total = d_nbr_w_total + d_msg_in.slice(s![.., 2 * n..2 * n + m]);

        // nbr_mu[v] averages mu[u] over edges (u, v): scatter the
        // gradient back along the edge list.
        for (e, &(u, v)) in current.edges.iter().enumerate() {
            let share = current.edge_share[e];
            let src = d_nbr_mu.row(v);
            let mut target = d_mu_t.row_mut(u);
            for j in 0..n {
                target[j] = target[j] + share * src[j];
            }
        }
        d_mu = d_mu_t;
    }

    // Node init: mu_0 = relu(Theta1 x).
    let mut dz1 = d_mu;
    relu_mask_into(&mut dz1, &current.mu0_pre);
    grads.theta1.weight = dz1.t().dot(&current.x);
    grads.theta1.bias = dz1.sum_axis(Axis(0));

    // Edge init: w0 = relu(Theta2 [x_u; x_v]); nbr_w[v] averages the
    // incoming w0 rows, so each edge's gradient is its target's share.
    if !current.edges.is_empty() {
        let m = params.hyper.edge_dim;
        let mut dz2: Array2<S> = Array2::zeros((current.edges.len(), m));
        for (e, &(_, v)) in current.edges.iter().enumerate() {
            let share = current.edge_share[e];
            let src = d_nbr_w_total.row(v);
            let mut target = dz2.row_mut(e);
            for j in 0..m {
                target[j] = share * src[j];
            }
        }
        relu_mask_into(&mut dz2, &current.w0_pre);
        grads.theta2.weight = dz2.t().dot(&current.edge_input);
        grads.theta2.bias = dz2.sum_axis(Axis(0));
    }

    (loss, grads)
}

/// Plain SGD: `theta <- theta - lr * grad` for every weight.
pub fn sgd_step<S: Scalar>(params: &mut QNetworkParams<S>, grads: &Gradients<S>, lr: S) {
    let step = |theta: &mut Affine<S>, g: &Affine<S>| {
        theta.weight.scaled_add(-lr, &g.weight);
        theta.bias.scaled_add(-lr, &g.bias);
    };
    step(&mut params.weights.theta1, &grads.theta1);
    step(&mut params.weights.theta2, &grads.theta2);
    for (t, g) in params.weights.theta3.iter_mut().zip(&grads.theta3) {
        t.weight.scaled_add(-lr, &g.weight);
        t.bias.scaled_add(-lr, &g.bias);
    }
    for (t, g) in params.weights.theta4.iter_mut().zip(&grads.theta4) {
        t.weight.scaled_add(-lr, &g.weight);
        t.bias.scaled_add(-lr, &g.bias);
    }
    step(&mut params.weights.theta5, &grads.theta5);
}
