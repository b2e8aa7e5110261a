//! Correlation-based reconstruction used as a non-learned reference.
//!
//! Each node pair is scored by the absolute Pearson correlation between the
//! trajectory of one node and the (optionally lagged) trajectory of the other.
//! Samples are pooled over every supplied instance and time step, and the
//! two directions are averaged. The `E` best-scoring pairs are then declared
//! connected.

use crate::dataset::Dataset;
use crate::dynamics::{AdjacencyMatrix, EvolutionInstance};
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::pairs::{pair_count, pairs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lag {
    Zero,
    #[default]
    One,
}

impl Lag {
    fn steps(self) -> usize {
        match self {
            Lag::Zero => 0,
            Lag::One => 1,
        }
    }
}

impl std::str::FromStr for Lag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" => Ok(Lag::Zero),
            "1" => Ok(Lag::One),
            _ => Err(Error::invalid(format!("lag must be 0 or 1, got {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationProfile {
    pub nodes: usize,
    pub lag: Lag,
    /// Pair-indexed scores in `[0, 1]`.
    pub scores: Vec<f64>,
    /// Pairs where at least one direction had a constant series and scored 0.
    pub degenerate: Vec<bool>,
}

impl CorrelationProfile {
    pub fn score(&self, i: usize, j: usize) -> Option<f64> {
        crate::pairs::pair_index(i, j, self.nodes).map(|k| self.scores[k])
    }
}

/// Running sums for one directed Pearson correlation.
#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Moments {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    /// `None` for a constant series.
    fn pearson(&self) -> Option<f64> {
        let vx = self.sxx - self.sx * self.sx / self.n;
        let vy = self.syy - self.sy * self.sy / self.n;
        let cov = self.sxy - self.sx * self.sy / self.n;
        let tiny = 1e-24 * self.n;
        if vx <= tiny || vy <= tiny {
            return None;
        }
        Some((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
    }
}

pub fn correlation_scores<R: Real>(instances: &[&EvolutionInstance<R>], lag: Lag) -> Result<CorrelationProfile> {
    let first = instances.first().ok_or_else(|| Error::Empty("no instances to correlate".into()))?;
    let (l, m) = (first.nodes(), first.steps());
    if instances.iter().any(|x| x.nodes() != l || x.steps() != m) {
        return Err(Error::dim("instances differ in shape"));
    }
    let d = lag.steps();
    if m <= d + 1 {
        return Err(Error::invalid(format!("{m} time steps are too few for lag {d}")));
    }
    // directed[i*l+j]: node i at time t against node j at time t+d
    let mut directed = vec![Moments::default(); l * l];
    for inst in instances {
        if inst.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory".into()));
        }
        for i in 0..l {
            let xi = inst.trajectory(i);
            for j in 0..l {
                if i == j {
                    continue;
                }
                let yj = inst.trajectory(j);
                let acc = &mut directed[i * l + j];
                for t in 0..m - d {
                    acc.push(xi[t].as_f64(), yj[t + d].as_f64());
                }
            }
        }
    }
    let mut scores = Vec::with_capacity(pair_count(l));
    let mut degenerate = Vec::with_capacity(pair_count(l));
    for (i, j) in pairs(l) {
        let a = directed[i * l + j].pearson();
        let b = directed[j * l + i].pearson();
        degenerate.push(a.is_none() || b.is_none());
        scores.push((a.unwrap_or(0.0).abs() + b.unwrap_or(0.0).abs()) / 2.0);
    }
    Ok(CorrelationProfile {
        nodes: l,
        lag,
        scores,
        degenerate,
    })
}

/// Marks the `e` highest-scoring pairs as connected. Ties go to the lower
/// pair index.
pub fn reconstruct_top_e(profile: &CorrelationProfile, e: usize) -> Result<AdjacencyMatrix> {
    let k = profile.scores.len();
    if e > k {
        return Err(Error::invalid(format!("{e} edges requested but only {k} pairs exist")));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| profile.scores[b].total_cmp(&profile.scores[a]).then(a.cmp(&b)));
    let mut flags = vec![false; k];
    for &idx in &order[..e] {
        flags[idx] = true;
    }
    AdjacencyMatrix::from_pair_flags(profile.nodes, flags)
}

/// How instances are grouped before correlating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// One profile per lattice from all of its instances in the set.
    #[default]
    Lattice,
    /// One profile per instance.
    Instance,
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lattice" => Ok(Pooling::Lattice),
            "instance" => Ok(Pooling::Instance),
            _ => Err(Error::invalid(format!("pooling must be `lattice` or `instance`, got {s}"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Lattice => "lattice",
            Pooling::Instance => "instance",
        })
    }
}

/// One reconstruction and the dataset instances it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGroup {
    pub lattice_id: u32,
    pub instances: Vec<usize>,
    pub profile: CorrelationProfile,
    pub predicted: AdjacencyMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub groups: Vec<BaselineGroup>,
    /// Pooled over every instance and pair, like the network's accuracy.
    pub gamma: f64,
}

/// Reconstructs every lattice of `data` with `edges` predicted connections
/// and scores the result on `data`. With lattice pooling, instances of the
/// same lattice id in `extra` join the correlation sums but are not scored.
pub fn reconstruct_dataset(
    data: &Dataset,
    extra: &[&Dataset],
    lag: Lag,
    pooling: Pooling,
    edges: usize,
) -> Result<BaselineRun> {
    if data.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let mut members: Vec<(u32, Vec<usize>)> = Vec::new();
    for (n, s) in data.samples.iter().enumerate() {
        match pooling {
            Pooling::Instance => members.push((s.lattice_id(), vec![n])),
            Pooling::Lattice => match members.iter_mut().find(|(id, _)| *id == s.lattice_id()) {
                Some((_, v)) => v.push(n),
                None => members.push((s.lattice_id(), vec![n])),
            },
        }
    }
    let groups = crate::par::map(&members, |(id, idx)| -> Result<BaselineGroup> {
        let mut inst: Vec<_> = idx.iter().map(|&n| &data.samples[n].instance).collect();
        if pooling == Pooling::Lattice {
            for d in extra {
                inst.extend(d.samples.iter().filter(|s| s.lattice_id() == *id).map(|s| &s.instance));
            }
        }
        let profile = correlation_scores(&inst, lag)?;
        let predicted = reconstruct_top_e(&profile, edges)?;
        Ok(BaselineGroup {
            lattice_id: *id,
            instances: idx.clone(),
            profile,
            predicted,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mut hit, mut total) = (0usize, 0usize);
    for g in &groups {
        for &n in &g.instances {
            let truth = data.samples[n].target();
            hit += g.predicted.pair_flags().iter().zip(truth).filter(|(a, b)| a == b).count();
            total += truth.len();
        }
    }
    Ok(BaselineRun {
        groups,
        gamma: hit as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve_instance, SimParams, SpinState};

    fn from_rows(rows: &[Vec<f64>]) -> EvolutionInstance<f64> {
        let m = rows[0].len();
        let data = rows.concat();
        EvolutionInstance::from_data(rows.len(), m, data, SimParams::default(), None).unwrap()
    }

    #[test]
    fn identical_rows_correlate() {
        let row: Vec<f64> = (0..20).map(|t| ((t * 7) % 5) as f64 - 2.0).collect();
        let x = from_rows(&[row.clone(), row]);
        let p = correlation_scores(&[&x], Lag::Zero).unwrap();
        assert!((p.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_scores_zero() {
        let x = from_rows(&[vec![1.0; 10], (0..10).map(f64::from).collect()]);
        let p = correlation_scores(&[&x], Lag::One).unwrap();
        assert_eq!(p.scores[0], 0.0);
        assert!(p.degenerate[0]);
    }

    #[test]
    fn too_few_steps() {
        let x = from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        assert!(correlation_scores(&[&x], Lag::One).is_err());
        assert!(correlation_scores::<f64>(&[], Lag::One).is_err());
    }

    #[test]
    fn top_e_picks_best() {
        let p = CorrelationProfile {
            nodes: 3,
            lag: Lag::One,
            scores: vec![0.2, 0.9, 0.5],
            degenerate: vec![false; 3],
        };
        let a = reconstruct_top_e(&p, 2).unwrap();
        assert_eq!(a.pair_flags(), &[false, true, true]);
        assert!(reconstruct_top_e(&p, 4).is_err());
        assert_eq!(reconstruct_top_e(&p, 0).unwrap().edge_count(), 0);
    }

    #[test]
    fn dataset_reconstruction_low_temperature() {
        let mut spec = crate::dataset::DatasetSpec::new(2, 10, 40);
        spec.nodes = 6;
        spec.edges = 5;
        let s = crate::dataset::build_splits(&spec).unwrap();
        let run = reconstruct_dataset(&s.test, &[], Lag::One, Pooling::Lattice, 5).unwrap();
        let more = reconstruct_dataset(&s.test, &[&s.train], Lag::One, Pooling::Lattice, 5).unwrap();
        assert_eq!(more.groups[0].instances.len(), 20);
        assert!(more.gamma >= 0.5);
        assert_eq!(run.groups.len(), 2);
        assert!(run.groups.iter().all(|g| g.predicted.edge_count() == 5 && g.instances.len() == 20));
        let per = reconstruct_dataset(&s.test, &[], Lag::One, Pooling::Instance, 5).unwrap();
        assert_eq!(per.groups.len(), 40);
        assert!(run.gamma > 0.5 && per.gamma > 0.0);
    }

    #[test]
    fn symmetric_and_scale_free() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let adj = crate::dynamics::random_lattice(5, 4, &mut rng).unwrap();
        let a = evolve_instance(&crate::dynamics::random_initial(5, &mut rng).unwrap(), &adj, &SimParams::new(0.4)).unwrap();
        let b = EvolutionInstance::from_data(5, a.steps(), a.data().iter().map(|v| v * 3.5).collect(), a.params, None).unwrap();
        let pa = correlation_scores(&[&a], Lag::One).unwrap();
        let pb = correlation_scores(&[&b], Lag::One).unwrap();
        for (x, y) in pa.scores.iter().zip(&pb.scores) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(pa.score(1, 3), pa.score(3, 1));
    }

    #[test]
    fn coupled_pair_beats_uncoupled_pairs() {
        // Nodes 0-1 are bonded; 2 and 3 are isolated. Pool over every
        // initial state so the isolated nodes' sign pattern averages out.
        let adj = AdjacencyMatrix::from_edges(4, &[(0, 1)]).unwrap();
        let params = SimParams::new(0.4);
        let runs: Vec<_> = (0..16u64)
            .map(|mask| evolve_instance(&SpinState::from_mask(4, mask), &adj, &params).unwrap())
            .collect();
        let refs: Vec<_> = runs.iter().collect();
        let p = correlation_scores(&refs, Lag::One).unwrap();
        let bonded = p.score(0, 1).unwrap();
        let mut controls: Vec<f64> = [(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            .iter()
            .map(|&(i, j)| p.score(i, j).unwrap())
            .collect();
        controls.sort_by(f64::total_cmp);
        assert!(bonded > controls[2], "{bonded} vs {controls:?}");
    }
}
