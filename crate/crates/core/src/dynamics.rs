//! Lattices, initial spin states and the discrete Glauber update.
//!
//! The update for node `i` is
//!
//! ```text
//! s_i ← s_i + τ · ( −s_i + g(T)/deg(i) · Σ_j A_ij s_j )
//! ```
//!
//! with the coupling term dropped for isolated nodes.

use num_traits::Float;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{pair_count, pair_index, pairs};

/// Symmetric, zero-diagonal, unweighted connectivity.
///
/// Stored as one flag per upper-triangular pair in [`crate::pairs`] order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AdjacencyMatrix {
    n: usize,
    edges: Vec<bool>,
    lattice_id: Option<u32>,
}

impl AdjacencyMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: vec![false; pair_count(n)],
            lattice_id: None,
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            let k = pair_index(i, j, n)
                .ok_or_else(|| Error::invalid(format!("edge ({i},{j}) invalid for {n} nodes")))?;
            adj.edges[k] = true;
        }
        Ok(adj)
    }

    /// Builds from per-pair flags in pair order.
    pub fn from_pair_flags(n: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != pair_count(n) {
            return Err(Error::dim(format!(
                "{} pair flags for {n} nodes (expected {})",
                flags.len(),
                pair_count(n)
            )));
        }
        Ok(Self {
            n,
            edges: flags,
            lattice_id: None,
        })
    }

    pub fn with_lattice_id(mut self, id: u32) -> Self {
        self.lattice_id = Some(id);
        self
    }

    pub fn lattice_id(&self) -> Option<u32> {
        self.lattice_id
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    /// Per-pair flags in pair order (the label `q_k`).
    pub fn pair_flags(&self) -> &[bool] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        pair_index(i, j, self.n).is_some_and(|k| self.edges[k])
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        pairs(self.n)
            .zip(self.edges.iter())
            .filter_map(|(p, &e)| e.then_some(p))
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.has_edge(i, j)).count()
    }

    /// Same edge set, ignoring the lattice id.
    pub fn same_edges(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }

    /// Packs pair flags LSB-first: pair `k` is bit `k % 8` of byte `k / 8`.
    pub fn to_bitmap(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.edges.len().div_ceil(8)];
        for (k, _) in self.edges.iter().enumerate().filter(|(_, &e)| e) {
            out[k / 8] |= 1 << (k % 8);
        }
        out
    }

    pub fn from_bitmap(n: usize, bytes: &[u8]) -> Result<Self> {
        let k = pair_count(n);
        if bytes.len() != k.div_ceil(8) {
            return Err(Error::dim(format!(
                "bitmap of {} bytes for {k} pairs",
                bytes.len()
            )));
        }
        let flags = (0..k).map(|p| bytes[p / 8] >> (p % 8) & 1 == 1).collect();
        Self::from_pair_flags(n, flags)
    }

    fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.n];
        for (i, j) in self.edges() {
            lists[i].push(j);
            lists[j].push(i);
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        lists
    }
}

/// Node momenta at one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState(pub Vec<f64>);

impl SpinState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `+1` where bit `i` of `mask` is set, `−1` elsewhere.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Self(
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect(),
        )
    }

    /// Inverse of [`SpinState::from_mask`]; `None` unless every entry is ±1.
    pub fn to_mask(&self) -> Option<u64> {
        let mut mask = 0u64;
        for (i, &v) in self.0.iter().enumerate() {
            match v {
                1.0 => mask |= 1 << i,
                -1.0 => {}
                _ => return None,
            }
        }
        Some(mask)
    }

    pub fn is_initial(&self) -> bool {
        self.0.iter().all(|&v| v == 1.0 || v == -1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Temperature-dependent prefactor of the neighbour-average term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// `tanh(T / 2)`, as the update is usually printed.
    PaperVerbatim,
    /// `tanh(1 / (2T))`: coupling fades as temperature grows.
    #[default]
    BetaForm,
}

impl GainMode {
    pub fn gain(self, temperature: f64) -> f64 {
        match self {
            GainMode::PaperVerbatim => (temperature / 2.0).tanh(),
            GainMode::BetaForm => (0.5 / temperature).tanh(),
        }
    }
}

impl std::str::FromStr for GainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-verbatim" => Ok(GainMode::PaperVerbatim),
            "beta-form" => Ok(GainMode::BetaForm),
            other => Err(Error::invalid(format!(
                "gain mode `{other}` (expected paper-verbatim or beta-form)"
            ))),
        }
    }
}

impl std::fmt::Display for GainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GainMode::PaperVerbatim => "paper-verbatim",
            GainMode::BetaForm => "beta-form",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub temperature: f64,
    pub tau: f64,
    /// Recorded time slices, including the initial state.
    pub steps: usize,
    #[serde(default)]
    pub gain_mode: GainMode,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            temperature: 0.4,
            tau: 0.1,
            steps: 100,
            gain_mode: GainMode::BetaForm,
        }
    }
}

impl SimParams {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            ..Self::default()
        }
    }

    pub fn gain(&self) -> f64 {
        self.gain_mode.gain(self.temperature)
    }

    /// Total simulated time `(M − 1) τ`.
    pub fn total_time(&self) -> f64 {
        (self.steps.saturating_sub(1)) as f64 * self.tau
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("at least one time slice is required"));
        }
        Ok(())
    }
}

/// Precomputed neighbour lists and per-node coupling weights `g / deg(i)`.
struct Coupling {
    neighbors: Vec<Vec<usize>>,
    weight: Vec<f64>,
    tau: f64,
}

impl Coupling {
    fn new(adj: &AdjacencyMatrix, params: &SimParams) -> Result<Self> {
        params.validate()?;
        let g = params.gain();
        let neighbors = adj.neighbor_lists();
        let weight = neighbors
            .iter()
            .map(|nb| if nb.is_empty() { 0.0 } else { g / nb.len() as f64 })
            .collect();
        Ok(Self {
            neighbors,
            weight,
            tau: params.tau,
        })
    }

    fn step_into(&self, s: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let field: f64 = self.neighbors[i].iter().map(|&j| s[j]).sum();
            *o = s[i] + self.tau * (-s[i] + self.weight[i] * field);
        }
    }
}

fn check_state(state: &SpinState, adj: &AdjacencyMatrix) -> Result<()> {
    if state.len() != adj.node_count() {
        return Err(Error::dim(format!(
            "state has {} entries, lattice has {} nodes",
            state.len(),
            adj.node_count()
        )));
    }
    if state.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spin state".into()));
    }
    Ok(())
}

/// One discrete Glauber step. The input is left untouched.
pub fn glauber_step(
    state: &SpinState,
    adj: &AdjacencyMatrix,
    params: &SimParams,
) -> Result<SpinState> {
    check_state(state, adj)?;
    let coupling = Coupling::new(adj, params)?;
    let mut out = vec![0.0; state.len()];
    coupling.step_into(&state.0, &mut out);
    Ok(SpinState(out))
}

/// `L × M` momenta, row `i` holding node `i`'s trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionInstance<R = f64> {
    nodes: usize,
    steps: usize,
    data: Vec<R>,
    pub params: SimParams,
    pub lattice_id: Option<u32>,
}

impl<R: Float> EvolutionInstance<R> {
    pub fn from_data(
        nodes: usize,
        steps: usize,
        data: Vec<R>,
        params: SimParams,
        lattice_id: Option<u32>,
    ) -> Result<Self> {
        if data.len() != nodes * steps {
            return Err(Error::dim(format!(
                "{} values for a {nodes}x{steps} instance",
                data.len()
            )));
        }
        Ok(Self {
            nodes,
            steps,
            data,
            params,
            lattice_id,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Row-major `L × M` values.
    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn get(&self, node: usize, step: usize) -> R {
        self.data[node * self.steps + step]
    }

    pub fn trajectory(&self, node: usize) -> &[R] {
        &self.data[node * self.steps..(node + 1) * self.steps]
    }

    pub fn column(&self, step: usize) -> Vec<R> {
        (0..self.nodes).map(|i| self.get(i, step)).collect()
    }

    pub fn initial_state(&self) -> SpinState {
        SpinState(
            self.column(0)
                .into_iter()
                .map(|v| v.to_f64().unwrap_or(f64::NAN))
                .collect(),
        )
    }

    pub fn cast<S: Float>(&self) -> EvolutionInstance<S> {
        EvolutionInstance {
            nodes: self.nodes,
            steps: self.steps,
            data: self
                .data
                .iter()
                .map(|&v| S::from(v).unwrap_or_else(S::nan))
                .collect(),
            params: self.params,
            lattice_id: self.lattice_id,
        }
    }
}

/// Records `params.steps` slices starting from `initial`.
pub fn evolve_instance(
    initial: &SpinState,
    adj: &AdjacencyMatrix,
    params: &SimParams,
) -> Result<EvolutionInstance> {
    check_state(initial, adj)?;
    if !initial.is_initial() {
        return Err(Error::invalid("initial state entries must be ±1"));
    }
    let coupling = Coupling::new(adj, params)?;
    let (n, m) = (adj.node_count(), params.steps);
    let mut data = vec![0.0; n * m];
    let mut cur = initial.0.clone();
    let mut next = vec![0.0; n];
    for t in 0..m {
        for (i, &v) in cur.iter().enumerate() {
            data[i * m + t] = v;
        }
        if t + 1 < m {
            coupling.step_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
    }
    EvolutionInstance::from_data(n, m, data, *params, adj.lattice_id())
}

/// Uniform random `E`-subset of the `L(L−1)/2` candidate pairs.
pub fn random_lattice<G: Rng + ?Sized>(
    nodes: usize,
    edges: usize,
    rng: &mut G,
) -> Result<AdjacencyMatrix> {
    let k = pair_count(nodes);
    if edges > k {
        return Err(Error::invalid(format!(
            "{edges} edges requested but only {k} pairs exist among {nodes} nodes"
        )));
    }
    let mut flags = vec![false; k];
    for p in index::sample(rng, k, edges) {
        flags[p] = true;
    }
    AdjacencyMatrix::from_pair_flags(nodes, flags)
}

/// Independent fair ±1 entries.
pub fn random_initial<G: Rng + ?Sized>(nodes: usize, rng: &mut G) -> Result<SpinState> {
    if nodes == 0 {
        return Err(Error::invalid("at least one node is required"));
    }
    Ok(SpinState(
        (0..nodes)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    ))
}
