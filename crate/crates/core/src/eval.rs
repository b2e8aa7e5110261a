//! Decoding, accuracy, entropy-based confidence and linear fits.
//!
//! Accuracy `γ` is pooled over every candidate connection of every instance.
//! A head predicts "connected" only when `p(edge) > p(no edge)`; exact ties
//! decode to "not connected".

use crate::dataset::{Dataset, Split};
use crate::dynamics::AdjacencyMatrix;
use crate::error::{Error, Result};
use crate::nn::{Model, ProbabilityHeads};
use crate::pairs::pairs;

/// `−Σ_s p(s) ln p(s)` with `0 ln 0 = 0`.
pub fn binary_entropy(p: [f64; 2]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn decode_head(p: [f64; 2]) -> bool {
    p[1] > p[0]
}

/// Predicted pair flags and per-head entropies.
pub fn decode(heads: &ProbabilityHeads) -> (Vec<bool>, Vec<f64>) {
    heads
        .rows()
        .iter()
        .map(|&p| (decode_head(p), binary_entropy(p)))
        .unzip()
}

/// Most likely adjacency for one instance plus the entropy of every head.
pub fn predict_adjacency(model: &Model<f32>, input: &[f32]) -> Result<(AdjacencyMatrix, Vec<f64>)> {
    let heads = model.forward(input)?;
    let (bits, entropies) = decode(&heads);
    Ok((AdjacencyMatrix::from_pair_flags(model.nodes(), bits)?, entropies))
}

/// One candidate connection of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionRecord {
    pub instance: usize,
    pub lattice_id: u32,
    pub pair: (usize, usize),
    pub predicted: bool,
    pub truth: bool,
    pub probs: [f64; 2],
    pub entropy: f64,
}

impl ConnectionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub split: Split,
    pub records: Vec<ConnectionRecord>,
    pub gamma: f64,
}

impl PredictionReport {
    pub fn from_records(split: Split, records: Vec<ConnectionRecord>) -> Self {
        let gamma = fraction_correct(records.iter());
        Self {
            split,
            records,
            gamma,
        }
    }

    /// Records for heads evaluated on `truth` labels.
    pub fn from_heads(split: Split, nodes: usize, heads: &[ProbabilityHeads], truth: &[&[bool]], lattice_ids: &[u32]) -> Result<Self> {
        if heads.len() != truth.len() || heads.len() != lattice_ids.len() {
            return Err(Error::dim("heads, labels and lattice ids differ in length"));
        }
        let mut records = Vec::with_capacity(heads.len() * heads.first().map_or(0, |h| h.len()));
        for (n, ((h, q), &lid)) in heads.iter().zip(truth).zip(lattice_ids).enumerate() {
            if h.len() != q.len() {
                return Err(Error::dim(format!("instance {n}: {} heads vs {} labels", h.len(), q.len())));
            }
            for ((pair, &p), &t) in pairs(nodes).zip(h.rows()).zip(q.iter()) {
                records.push(ConnectionRecord {
                    instance: n,
                    lattice_id: lid,
                    pair,
                    predicted: decode_head(p),
                    truth: t,
                    probs: p,
                    entropy: binary_entropy(p),
                });
            }
        }
        Ok(Self::from_records(split, records))
    }
}

fn fraction_correct<'a>(records: impl Iterator<Item = &'a ConnectionRecord>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for r in records {
        hit += usize::from(r.correct());
        total += 1;
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

/// Runs the model over a dataset in batches and records every head.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<PredictionReport> {
    let split = data.samples.first().map_or(Split::Test, |s| s.split);
    let mut heads = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let inputs: Vec<&[f32]> = chunk.iter().map(|s| s.input()).collect();
        heads.extend(model.forward_batch(&inputs)?);
    }
    let ids: Vec<u32> = data.samples.iter().map(|s| s.lattice_id()).collect();
    PredictionReport::from_heads(split, data.nodes(), &heads, &data.targets(), &ids)
}

/// Pooled accuracy over every record of every report.
pub fn accuracy(reports: &[PredictionReport]) -> Result<f64> {
    let g = fraction_correct(reports.iter().flat_map(|r| r.records.iter()));
    if g.is_nan() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    Ok(g)
}

/// Mean entropy of correct and incorrect predictions; `None` marks an empty
/// subgroup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropySplit {
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

pub fn entropy_split(reports: &[PredictionReport]) -> EntropySplit {
    let (mut sc, mut nc, mut si, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for r in reports.iter().flat_map(|r| r.records.iter()) {
        if r.correct() {
            sc += r.entropy;
            nc += 1;
        } else {
            si += r.entropy;
            ni += 1;
        }
    }
    EntropySplit {
        correct: (nc > 0).then(|| sc / nc as f64),
        incorrect: (ni > 0).then(|| si / ni as f64),
        n_correct: nc,
        n_incorrect: ni,
    }
}

/// One threshold of the confidence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    /// Fraction of connections with entropy below the threshold.
    pub eta: f64,
    /// Accuracy on that subset; `None` when it is empty.
    pub gamma_filtered: Option<f64>,
    pub kept: usize,
}

pub fn confidence_sweep(reports: &[PredictionReport], thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    let all: Vec<&crate::eval::ConnectionRecord> = reports.iter().flat_map(|r| r.records.iter()).collect();
    if all.is_empty() {
        return Err(Error::Empty("no predictions to sweep".into()));
    }
    thresholds
        .iter()
        .map(|&sc| {
            if !(sc > 0.0) || !sc.is_finite() {
                return Err(Error::invalid(format!("threshold {sc} must be positive")));
            }
            let kept: Vec<_> = all.iter().copied().filter(|r| r.entropy < sc).collect();
            let g = fraction_correct(kept.iter().copied());
            Ok(SweepPoint {
                threshold: sc,
                eta: kept.len() as f64 / all.len() as f64,
                gamma_filtered: (!g.is_nan()).then_some(g),
                kept: kept.len(),
            })
        })
        .collect()
}

/// Evenly spaced thresholds `start, start+step, …` up to and including `stop`.
pub fn threshold_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(start > 0.0) || stop < start {
        return Err(Error::invalid(format!("bad threshold range {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Ordinary least squares `y = a·x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

pub fn linear_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("fit points".into()));
    }
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::invalid("a line needs at least two points"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("all abscissae are equal"));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - (a * p.0 + b)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(FitResult { a, b, r2 })
}

/// Expected accuracy of a uniformly random `E`-subset of `K` pairs against
/// a fixed `E`-edge truth: `1 − 2E(K−E)/K²`.
pub fn density_guess_accuracy(k: usize, e: usize) -> f64 {
    let (k, e) = (k as f64, e as f64);
    1.0 - 2.0 * e * (k - e) / (k * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn rec(pred: bool, truth: bool, entropy: f64) -> ConnectionRecord {
        ConnectionRecord {
            instance: 0,
            lattice_id: 0,
            pair: (0, 1),
            predicted: pred,
            truth,
            probs: [0.5, 0.5],
            entropy,
        }
    }

    #[test]
    fn decode_examples() {
        assert!(!decode_head([0.5, 0.5]));
        assert!((binary_entropy([0.5, 0.5]) - LN_2).abs() < 1e-15);
        assert!(!decode_head([1.0, 0.0]));
        assert_eq!(binary_entropy([1.0, 0.0]), 0.0);
        assert!(decode_head([0.1, 0.9]));
        let s = binary_entropy([0.1, 0.9]);
        assert!((s - -(0.1f64 * 0.1f64.ln() + 0.9 * 0.9f64.ln())).abs() < 1e-15);
        assert!((s - 0.325_083).abs() < 1e-6);
    }

    #[test]
    fn all_correct_is_gamma_one() {
        let r = PredictionReport::from_records(Split::Test, vec![rec(true, true, 0.1), rec(false, false, 0.2)]);
        assert_eq!(accuracy(std::slice::from_ref(&r)).unwrap(), 1.0);
        let e = entropy_split(&[r]);
        assert_eq!(e.incorrect, None);
        assert!((e.correct.unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn accuracy_rejects_empty() {
        assert!(accuracy(&[]).is_err());
        assert!(accuracy(&[PredictionReport::from_records(Split::Test, vec![])]).is_err());
    }

    #[test]
    fn entropy_split_means() {
        let r = PredictionReport::from_records(Split::Test, vec![rec(true, true, 0.0), rec(true, false, LN_2)]);
        let e = entropy_split(&[r]);
        assert_eq!(e.correct, Some(0.0));
        assert_eq!(e.incorrect, Some(LN_2));
    }

    #[test]
    fn sweep_without_filtering() {
        let r = PredictionReport::from_records(
            Split::Test,
            vec![rec(true, true, 0.0), rec(true, false, LN_2), rec(false, false, 0.3)],
        );
        let pts = confidence_sweep(std::slice::from_ref(&r), &[LN_2 + 1e-9, 0.1, 1e-6]).unwrap();
        assert_eq!(pts[0].eta, 1.0);
        assert_eq!(pts[0].gamma_filtered, Some(r.gamma));
        assert_eq!(pts[1].kept, 1);
        assert_eq!(pts[1].gamma_filtered, Some(1.0));
        assert!(confidence_sweep(std::slice::from_ref(&r), &[0.0]).is_err());
        let empty = confidence_sweep(&[PredictionReport::from_records(Split::Test, vec![rec(true, true, 0.5)])], &[0.1]).unwrap();
        assert_eq!(empty[0].gamma_filtered, None);
    }

    #[test]
    fn threshold_ranges() {
        let t = threshold_range(0.05, 0.7, 0.05).unwrap();
        assert_eq!(t.len(), 14);
        assert!((t[13] - 0.7).abs() < 1e-12);
        assert!(threshold_range(0.1, 0.05, 0.01).is_err());
    }

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..6).map(|x| (x as f64, 2.0 * x as f64 + 1.0)).collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.a - 2.0).abs() < 1e-12 && (f.b - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tent_has_no_slope() {
        let f = linear_fit(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert!(f.a.abs() < 1e-15);
        assert!((f.b - 1.0 / 3.0).abs() < 1e-15);
        assert!(f.r2.abs() < 1e-15);
    }

    #[test]
    fn degenerate_abscissae() {
        assert!(linear_fit(&[(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(linear_fit(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn density_guess() {
        assert!((density_guess_accuracy(66, 25) - (1.0 - 2050.0 / 4356.0)).abs() < 1e-15);
        assert_eq!(density_guess_accuracy(10, 0), 1.0);
        assert_eq!(density_guess_accuracy(10, 10), 1.0);
    }

    proptest! {
        #[test]
        fn entropy_bounds(p in 0.0f64..=1.0) {
            let s = binary_entropy([1.0 - p, p]);
            prop_assert!((0.0..=LN_2 + 1e-15).contains(&s));
        }

        #[test]
        fn argmax_survives_rescaling(p in 0.0f64..=1.0, c in 0.01f64..100.0) {
            let a = [1.0 - p, p];
            let scaled = [a[0] * c, a[1] * c];
            let z = scaled[0] + scaled[1];
            prop_assert_eq!(decode_head(a), decode_head([scaled[0] / z, scaled[1] / z]));
        }

        #[test]
        fn eta_is_monotone(ents in prop::collection::vec((0.0f64..LN_2, any::<bool>()), 1..50)) {
            let recs = ents.iter().map(|&(s, ok)| rec(ok, true, s)).collect();
            let r = PredictionReport::from_records(Split::Test, recs);
            let th = threshold_range(0.01, 0.7, 0.01).unwrap();
            let pts = confidence_sweep(&[r], &th).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[0].eta <= w[1].eta);
            }
        }

        #[test]
        fn gamma_matches_recount(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let recs: Vec<_> = bits.iter().map(|&(p, t)| rec(p, t, 0.1)).collect();
            let brute = bits.iter().filter(|(p, t)| p == t).count() as f64 / bits.len() as f64;
            let r = PredictionReport::from_records(Split::Test, recs);
            prop_assert_eq!(r.gamma, brute);
        }

        #[test]
        fn residuals_orthogonal(pts in prop::collection::vec((-50.0f64..50.0, -5.0f64..5.0), 3..30)) {
            prop_assume!(pts.iter().any(|p| (p.0 - pts[0].0).abs() > 1e-3));
            let f = linear_fit(&pts).unwrap();
            let r: Vec<f64> = pts.iter().map(|p| p.1 - f.predict(p.0)).collect();
            let s0: f64 = r.iter().sum();
            let s1: f64 = r.iter().zip(&pts).map(|(r, p)| r * p.0).sum();
            prop_assert!(s0.abs() < 1e-9 && s1.abs() < 1e-9 * 50.0);
            prop_assert!(f.r2 <= 1.0 + 1e-12);
        }
    }
}
