//! Train/test/generalization splits and their on-disk format.
//!
//! Protocol enforced by [`build_splits`]:
//!
//! * training instances are spread evenly over the `N_L` training lattices,
//!   with distinct initial states per lattice;
//! * test instances reuse the training lattices but never a training initial
//!   state of the same lattice;
//! * generalization instances come from freshly drawn lattices whose edge
//!   sets differ from every training lattice.
//!
//! All lattices and initial states derive from `spec.seed`; the temperature
//! does not influence any draw, so two specs differing only in `sim` share
//! lattices and initial states exactly.
//!
//! File layout (see [`crate::container`]): a TOML header holding the full
//! [`DatasetSpec`] and counts, then one record per instance:
//! `split: u8`, `lattice_id: u32 LE`, label bitmap (`⌈K/8⌉` bytes, pair `k`
//! at bit `k % 8` of byte `k / 8`), and `L·M` little-endian `f32` values,
//! row-major.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, Cursor};
use crate::dynamics::{evolve_instance, random_lattice, AdjacencyMatrix, EvolutionInstance, SimParams, SpinState};
use crate::error::{Error, Result};
use crate::pairs::pair_count;
use crate::par;

const MAGIC: &str = "ising-topo dataset";
const VERSION: u32 = 1;
const MAX_NODES: usize = 62;
const LATTICE_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// `L`
    pub nodes: usize,
    /// `E`, edges per lattice.
    pub edges: usize,
    /// `N_L`
    pub lattices: usize,
    /// `N_train`, total training instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    /// `n_train`, training instances per lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train_per_lattice: Option<usize>,
    /// `N_test`, total test instances over the training lattices.
    pub n_test: usize,
    pub gen_lattices: usize,
    /// Total generalization instances over the generalization lattices.
    pub n_gen: usize,
    pub sim: SimParams,
    pub seed: u64,
}

impl DatasetSpec {
    /// Twelve nodes, 25 edges, `T = 0.4`, τ = 0.1, 100 slices.
    pub fn new(lattices: usize, n_train: usize, n_test: usize) -> Self {
        Self {
            nodes: 12,
            edges: 25,
            lattices,
            n_train: Some(n_train),
            n_train_per_lattice: None,
            n_test,
            gen_lattices: 0,
            n_gen: 0,
            sim: SimParams::default(),
            seed: 0,
        }
    }

    pub fn total_train(&self) -> usize {
        match (self.n_train, self.n_train_per_lattice) {
            (Some(n), _) => n,
            (None, Some(per)) => per * self.lattices,
            (None, None) => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if !(2..=MAX_NODES).contains(&self.nodes) {
            return Err(Error::invalid(format!(
                "node count must be in 2..={MAX_NODES}, got {}",
                self.nodes
            )));
        }
        if self.edges > pair_count(self.nodes) {
            return Err(Error::invalid(format!(
                "{} edges exceed the {} pairs of {} nodes",
                self.edges,
                pair_count(self.nodes),
                self.nodes
            )));
        }
        if self.lattices == 0 {
            return Err(Error::invalid("at least one training lattice is required"));
        }
        match (self.n_train, self.n_train_per_lattice) {
            (None, None) => return Err(Error::invalid("set n_train or n_train_per_lattice")),
            (Some(total), Some(per)) if total != per * self.lattices => {
                return Err(Error::invalid(format!(
                    "n_train = {total} disagrees with n_train_per_lattice · lattices = {}",
                    per * self.lattices
                )))
            }
            _ => {}
        }
        if self.total_train() == 0 {
            return Err(Error::invalid("at least one training instance is required"));
        }
        if self.n_gen > 0 && self.gen_lattices == 0 {
            return Err(Error::invalid("generalization instances need generalization lattices"));
        }
        let states = 1u64 << self.nodes;
        let per_train = self.total_train().div_ceil(self.lattices) as u64;
        let per_test = self.n_test.div_ceil(self.lattices) as u64;
        if per_train + per_test > states {
            return Err(Error::invalid(format!(
                "{per_train} training + {per_test} test initial states per lattice exceed the {states} distinct states of {} spins",
                self.nodes
            )));
        }
        if self.gen_lattices > 0 && self.n_gen.div_ceil(self.gen_lattices) as u64 > states {
            return Err(Error::invalid(format!(
                "generalization instances per lattice exceed the {states} distinct initial states"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    Generalization,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::Generalization => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            2 => Ok(Split::Generalization),
            _ => Err(Error::Format(format!("unknown split code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Generalization => "generalization",
        }
    }
}

/// An evolution instance paired with the lattice that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub instance: EvolutionInstance<f32>,
    pub label: AdjacencyMatrix,
    pub split: Split,
}

impl LabeledInstance {
    pub fn input(&self) -> &[f32] {
        self.instance.data()
    }

    /// `q_k` per candidate pair.
    pub fn target(&self) -> &[bool] {
        self.label.pair_flags()
    }

    pub fn lattice_id(&self) -> u32 {
        self.label.lattice_id().unwrap_or(u32::MAX)
    }

    /// Initial state as a spin mask (bit `i` set for `+1`).
    pub fn initial_mask(&self) -> Option<u64> {
        self.instance.initial_state().to_mask()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<LabeledInstance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    samples: usize,
    train: usize,
    test: usize,
    generalization: usize,
    spec: DatasetSpec,
}

impl Dataset {
    pub fn empty(spec: DatasetSpec) -> Self {
        Self {
            spec,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.spec.nodes
    }

    pub fn steps(&self) -> usize {
        self.spec.sim.steps
    }

    pub fn inputs(&self) -> Vec<&[f32]> {
        self.samples.iter().map(LabeledInstance::input).collect()
    }

    pub fn targets(&self) -> Vec<&[bool]> {
        self.samples.iter().map(LabeledInstance::target).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    /// Samples of one split, in order.
    pub fn filter(&self, split: Split) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }

    /// Distinct lattices in first-appearance order.
    pub fn lattices(&self) -> Vec<AdjacencyMatrix> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.lattice_id()))
            .map(|s| s.label.clone())
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FileHeader {
            samples: self.samples.len(),
            train: self.count(Split::Train),
            test: self.count(Split::Test),
            generalization: self.count(Split::Generalization),
            spec: self.spec.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        let (l, m) = (self.nodes(), self.steps());
        let record = 1 + 4 + pair_count(l).div_ceil(8) + 4 * l * m;
        let mut payload = Vec::with_capacity(record * self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            if s.instance.nodes() != l || s.instance.steps() != m || s.label.node_count() != l {
                return Err(Error::dim(format!("sample {i} does not match the {l}x{m} dataset shape")));
            }
            payload.push(s.split.code());
            payload.extend_from_slice(&s.lattice_id().to_le_bytes());
            payload.extend_from_slice(&s.label.to_bitmap());
            container::push_f32s(&mut payload, s.input());
        }
        Ok(container::encode(MAGIC, VERSION, &text, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, payload) = container::decode(MAGIC, VERSION, bytes)?;
        let header: FileHeader = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let spec = header.spec;
        let (l, m) = (spec.nodes, spec.sim.steps);
        let bitmap = pair_count(l).div_ceil(8);
        let mut cur = Cursor::new(payload);
        let mut samples = Vec::with_capacity(header.samples);
        for i in 0..header.samples {
            let split = Split::from_code(cur.u8()?)?;
            let id = cur.u32()?;
            let label = AdjacencyMatrix::from_bitmap(l, cur.take(bitmap)?)?.with_lattice_id(id);
            if label.edge_count() != spec.edges {
                return Err(Error::Format(format!(
                    "sample {i}: label has {} edges, header says {}",
                    label.edge_count(),
                    spec.edges
                )));
            }
            let data = cur.f32s(l * m)?;
            let instance = EvolutionInstance::from_data(l, m, data, spec.sim, Some(id))?;
            samples.push(LabeledInstance {
                instance,
                label,
                split,
            });
        }
        cur.finish()?;
        let out = Dataset { spec, samples };
        if out.count(Split::Train) != header.train
            || out.count(Split::Test) != header.test
            || out.count(Split::Generalization) != header.generalization
        {
            return Err(Error::Format("split counts disagree with header".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// The three disjoint sets produced from one [`DatasetSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub generalization: Dataset,
}

impl Splits {
    /// Checks split sizes and the disjointness rules described in the module
    /// documentation.
    pub fn verify_protocol(&self) -> Result<()> {
        let spec = &self.train.spec;
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.train.len() != spec.total_train()
            || self.test.len() != spec.n_test
            || self.generalization.len() != spec.n_gen
        {
            return fail(format!(
                "split sizes {}/{}/{} differ from spec {}/{}/{}",
                self.train.len(),
                self.test.len(),
                self.generalization.len(),
                spec.total_train(),
                spec.n_test,
                spec.n_gen
            ));
        }
        let mut train_states: HashMap<u32, HashSet<u64>> = HashMap::new();
        for s in &self.train.samples {
            let mask = s.initial_mask().ok_or_else(|| Error::invalid("non-spin initial state"))?;
            if !train_states.entry(s.lattice_id()).or_default().insert(mask) {
                return fail(format!("lattice {} repeats a training initial state", s.lattice_id()));
            }
        }
        let counts: Vec<usize> = train_states.values().map(HashSet::len).collect();
        if counts.len() != spec.lattices.min(spec.total_train())
            || counts.iter().max().unwrap_or(&0) - counts.iter().min().unwrap_or(&0) > 1
        {
            return fail(format!("uneven training counts per lattice: {counts:?}"));
        }
        let train_lattices = self.train.lattices();
        for s in &self.test.samples {
            let mask = s.initial_mask().ok_or_else(|| Error::invalid("non-spin initial state"))?;
            if !train_lattices.iter().any(|t| t.same_edges(&s.label)) {
                return fail(format!("test lattice {} is not a training lattice", s.lattice_id()));
            }
            if train_states.get(&s.lattice_id()).is_some_and(|set| set.contains(&mask)) {
                return fail(format!("test state {mask:#x} reuses a training state of lattice {}", s.lattice_id()));
            }
        }
        for s in &self.generalization.samples {
            if train_lattices.iter().any(|t| t.same_edges(&s.label)) {
                return fail(format!("generalization lattice {} was seen in training", s.lattice_id()));
            }
        }
        Ok(())
    }
}

/// Counts per bucket when `total` items are dealt evenly over `buckets`.
fn deal(total: usize, buckets: usize) -> Vec<usize> {
    (0..buckets)
        .map(|b| total / buckets + usize::from(b < total % buckets))
        .collect()
}

fn state_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Job {
    lattice: usize,
    mask: u64,
    split: Split,
}

/// Builds the three splits. Deterministic in `spec` (including `spec.seed`).
pub fn build_splits(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let mut lattice_rng = state_rng(spec.seed, 0);
    let mut lattices: Vec<AdjacencyMatrix> = Vec::with_capacity(spec.lattices + spec.gen_lattices);
    for id in 0..spec.lattices + spec.gen_lattices {
        let mut tries = 0;
        let lat = loop {
            let cand = random_lattice(spec.nodes, spec.edges, &mut lattice_rng)?;
            if !lattices.iter().any(|l| l.same_edges(&cand)) {
                break cand;
            }
            tries += 1;
            if tries >= LATTICE_RETRIES {
                return Err(Error::invalid(format!(
                    "could not draw {} distinct lattices with {} edges on {} nodes",
                    spec.lattices + spec.gen_lattices,
                    spec.edges,
                    spec.nodes
                )));
            }
        };
        lattices.push(lat.with_lattice_id(id as u32));
    }

    let space = 1usize << spec.nodes;
    let train_counts = deal(spec.total_train(), spec.lattices);
    let test_counts = deal(spec.n_test, spec.lattices);
    let gen_counts = deal(spec.n_gen, spec.gen_lattices.max(1));
    let mut jobs = Vec::new();
    for (li, (&tr, &te)) in train_counts.iter().zip(&test_counts).enumerate() {
        let mut rng = state_rng(spec.seed, 1 + li as u64);
        let masks = index::sample(&mut rng, space, tr + te).into_vec();
        for (n, &mask) in masks.iter().enumerate() {
            let split = if n < tr { Split::Train } else { Split::Test };
            jobs.push(Job {
                lattice: li,
                mask: mask as u64,
                split,
            });
        }
    }
    for (gi, &count) in gen_counts.iter().take(spec.gen_lattices).enumerate() {
        let li = spec.lattices + gi;
        let mut rng = state_rng(spec.seed, 1 + li as u64);
        for mask in index::sample(&mut rng, space, count) {
            jobs.push(Job {
                lattice: li,
                mask: mask as u64,
                split: Split::Generalization,
            });
        }
    }
    // Train before test within the job list; order of samples follows lattice
    // then draw order inside each split.
    jobs.sort_by_key(|j| (j.split.code(), j.lattice));

    let samples = par::map(&jobs, |job| -> Result<LabeledInstance> {
        let lat = &lattices[job.lattice];
        let inst = evolve_instance(&SpinState::from_mask(spec.nodes, job.mask), lat, &spec.sim)?;
        Ok(LabeledInstance {
            instance: inst.cast(),
            label: lat.clone(),
            split: job.split,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut train = Dataset::empty(spec.clone());
    let mut test = Dataset::empty(spec.clone());
    let mut generalization = Dataset::empty(spec.clone());
    for s in samples {
        match s.split {
            Split::Train => train.samples.push(s),
            Split::Test => test.samples.push(s),
            Split::Generalization => generalization.samples.push(s),
        }
    }
    Ok(Splits {
        train,
        test,
        generalization,
    })
}
