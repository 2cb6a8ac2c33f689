//! Pairwise binary CRF over the slice × biomarker grid.
//!
//! Each variable `(s, b)` costs `−unary_scale · logit[s, b]` when labelled 1
//! and nothing when labelled 0. Potts terms `w · [x_i ≠ x_j]` tie biomarkers
//! within a slice (`w = cooc[b, b′]`) and each biomarker across adjacent
//! slices (`w = smooth[b]`). With every `w ≥ 0` the energy is submodular and
//! one min-cut gives an exact minimizer.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelMatrix;
use crate::maxflow::FlowGraph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrfError {
    #[error("negative pairwise weight {weight} on {term}; the energy would not be submodular")]
    NegativeWeight { term: &'static str, weight: f64 },
    #[error("unary scale must be positive and finite, got {0}")]
    UnaryScale(f64),
    #[error("co-occurrence matrix is not symmetric with zero diagonal")]
    Cooc,
    #[error("model has {model} biomarkers but logits have {logits}")]
    Biomarkers { model: usize, logits: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("exhaustive search over {0} variables is too large (limit 20)")]
    TooLarge(usize),
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("no training volumes")]
    NoVolumes,
    #[error("logits are {logit_rows}x{logit_cols} but labels are {label_rows}x{label_cols}")]
    Shape {
        logit_rows: usize,
        logit_cols: usize,
        label_rows: usize,
        label_cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub unary_scale: f64,
    /// `B × B`, symmetric, zero diagonal, nonnegative.
    pub cooc: Vec<Vec<f64>>,
    /// Per-biomarker weight between adjacent slices, nonnegative.
    pub smooth: Vec<f64>,
}

impl CrfModel {
    /// No pairwise terms: the MAP labeling thresholds logits at zero.
    pub fn independent(biomarkers: usize) -> Self {
        Self {
            unary_scale: 1.0,
            cooc: vec![vec![0.0; biomarkers]; biomarkers],
            smooth: vec![0.0; biomarkers],
        }
    }

    pub fn biomarkers(&self) -> usize {
        self.smooth.len()
    }

    pub fn validate(&self) -> Result<(), CrfError> {
        if !(self.unary_scale.is_finite() && self.unary_scale > 0.0) {
            return Err(CrfError::UnaryScale(self.unary_scale));
        }
        let b = self.smooth.len();
        if self.cooc.len() != b || self.cooc.iter().any(|r| r.len() != b) {
            return Err(CrfError::Biomarkers { model: b, logits: self.cooc.len() });
        }
        for (i, row) in self.cooc.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() {
                    return Err(CrfError::NonFinite("co-occurrence weight"));
                }
                if w < 0.0 {
                    return Err(CrfError::NegativeWeight { term: "co-occurrence", weight: w });
                }
                if (i == j && w != 0.0) || w != self.cooc[j][i] {
                    return Err(CrfError::Cooc);
                }
            }
        }
        for &w in &self.smooth {
            if !w.is_finite() {
                return Err(CrfError::NonFinite("smoothing weight"));
            }
            if w < 0.0 {
                return Err(CrfError::NegativeWeight { term: "smoothing", weight: w });
            }
        }
        Ok(())
    }
}

/// Potts term `weight · [x_a ≠ x_b]` between variable indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Variables are indexed `s · B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGraph {
    pub slices: usize,
    pub biomarkers: usize,
    /// `[cost of label 0, cost of label 1]` per variable.
    pub unary: Vec<[f64; 2]>,
    pub pairs: Vec<PairTerm>,
}

impl EnergyGraph {
    pub fn variables(&self) -> usize {
        self.unary.len()
    }

    /// Builds a graph from explicit terms, rejecting negative or non-finite
    /// weights.
    pub fn from_terms(slices: usize, biomarkers: usize, unary: Vec<[f64; 2]>, pairs: Vec<PairTerm>) -> Result<Self, CrfError> {
        if unary.len() != slices * biomarkers {
            return Err(CrfError::Biomarkers { model: biomarkers, logits: unary.len() });
        }
        if unary.iter().flatten().any(|c| !c.is_finite()) {
            return Err(CrfError::NonFinite("unary cost"));
        }
        for p in &pairs {
            if !p.weight.is_finite() {
                return Err(CrfError::NonFinite("pairwise weight"));
            }
            if p.weight < 0.0 {
                return Err(CrfError::NegativeWeight { term: "pairwise", weight: p.weight });
            }
        }
        Ok(Self { slices, biomarkers, unary, pairs })
    }

    /// Energy of a labeling given as one `0/1` entry per variable.
    pub fn energy(&self, labels: &[u8]) -> f64 {
        let mut e = 0.0;
        for (cost, &x) in self.unary.iter().zip(labels) {
            e += cost[usize::from(x)];
        }
        for p in &self.pairs {
            if labels[p.a] != labels[p.b] {
                e += p.weight;
            }
        }
        e
    }

    pub fn energy_of(&self, labeling: &LabelMatrix) -> f64 {
        self.energy(labeling.data())
    }
}

pub fn build_energy(model: &CrfModel, logits: &Tensor) -> Result<EnergyGraph, CrfError> {
    model.validate()?;
    let (slices, biomarkers) = (logits.rows(), logits.cols());
    if biomarkers != model.biomarkers() {
        return Err(CrfError::Biomarkers {
            model: model.biomarkers(),
            logits: biomarkers,
        });
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(CrfError::NonFinite("logit"));
    }
    let unary = logits.data().iter().map(|&l| [0.0, -model.unary_scale * l]).collect();
    let mut pairs = Vec::new();
    for s in 0..slices {
        for b in 0..biomarkers {
            for b2 in b + 1..biomarkers {
                let weight = model.cooc[b][b2];
                if weight > 0.0 {
                    pairs.push(PairTerm { a: s * biomarkers + b, b: s * biomarkers + b2, weight });
                }
            }
        }
    }
    for s in 0..slices.saturating_sub(1) {
        for (b, &weight) in model.smooth.iter().enumerate() {
            if weight > 0.0 {
                pairs.push(PairTerm { a: s * biomarkers + b, b: (s + 1) * biomarkers + b, weight });
            }
        }
    }
    Ok(EnergyGraph { slices, biomarkers, unary, pairs })
}

/// Exact MAP labeling by min-cut. Variables on the source side of the cut
/// (reachable from the source in the final residual graph) take label 1.
pub fn graph_cut_map(g: &EnergyGraph) -> Result<LabelMatrix, CrfError> {
    let n = g.variables();
    let (source, sink) = (n, n + 1);
    let mut flow = FlowGraph::new(n + 2);
    let mut offset = 0.0;
    for (i, &[c0, c1]) in g.unary.iter().enumerate() {
        if !(c0.is_finite() && c1.is_finite()) {
            return Err(CrfError::NonFinite("unary cost"));
        }
        let base = c0.min(c1);
        offset += base;
        // Cutting source→i puts i on the sink side (label 0); i→sink, label 1.
        if c0 > base {
            flow.add_edge(source, i, c0 - base, 0.0);
        }
        if c1 > base {
            flow.add_edge(i, sink, c1 - base, 0.0);
        }
    }
    for p in &g.pairs {
        if !p.weight.is_finite() {
            return Err(CrfError::NonFinite("pairwise weight"));
        }
        if p.weight < 0.0 {
            return Err(CrfError::NegativeWeight { term: "pairwise", weight: p.weight });
        }
        flow.add_edge(p.a, p.b, p.weight, p.weight);
    }
    let value = flow.max_flow(source, sink);
    let side = flow.source_side(source);
    let labels: Vec<u8> = side[..n].iter().map(|&s| u8::from(s)).collect();
    debug_assert!(
        {
            let cut = g.energy(&labels) - offset;
            (cut - value).abs() <= 1e-9 * value.abs().max(1.0)
        },
        "min-cut value does not match max-flow value"
    );
    Ok(LabelMatrix::new(g.slices, g.biomarkers, labels).expect("binary by construction"))
}

/// Exhaustive minimum over all `2^(S·B)` labelings. Among equal energies the
/// lexicographically smallest labeling (variable 0 first) wins.
pub fn brute_force_map(g: &EnergyGraph) -> Result<LabelMatrix, CrfError> {
    let n = g.variables();
    if n > 20 {
        return Err(CrfError::TooLarge(n));
    }
    let mut labels = vec![0u8; n];
    let mut best = (f64::INFINITY, vec![0u8; n]);
    for mask in 0u32..(1u32 << n) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((mask >> (n - 1 - i)) & 1) as u8;
        }
        let e = g.energy(&labels);
        if e < best.0 {
            best = (e, labels.clone());
        }
    }
    Ok(LabelMatrix::new(g.slices, g.biomarkers, best.1).expect("binary by construction"))
}

pub fn crf_predict(model: &CrfModel, logits: &Tensor) -> Result<LabelMatrix, CrfError> {
    graph_cut_map(&build_energy(model, logits)?)
}

/// Candidate values searched by [`fit_crf`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfGrid {
    pub unary_scales: Vec<f64>,
    pub cooc_scales: Vec<f64>,
    pub smooth_scales: Vec<f64>,
}

impl Default for CrfGrid {
    fn default() -> Self {
        Self {
            unary_scales: vec![1.0, 0.5, 2.0],
            cooc_scales: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            smooth_scales: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
        }
    }
}

/// Label statistics that shape the pairwise weights before scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwisePatterns {
    /// Positive part of the phi coefficient between biomarker columns.
    pub cooc: Vec<Vec<f64>>,
    /// Positive part of each biomarker's adjacent-slice correlation.
    pub smooth: Vec<f64>,
}

fn phi(pairs: impl Iterator<Item = (bool, bool)>) -> f64 {
    let (mut n, mut a, mut b, mut ab) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        n += 1.0;
        a += f64::from(u8::from(x));
        b += f64::from(u8::from(y));
        ab += f64::from(u8::from(x && y));
    }
    if n == 0.0 {
        return 0.0;
    }
    let (pa, pb, pab) = (a / n, b / n, ab / n);
    let var = pa * (1.0 - pa) * pb * (1.0 - pb);
    if var <= 0.0 {
        0.0
    } else {
        (pab - pa * pb) / var.sqrt()
    }
}

pub fn pairwise_patterns(labels: &[&LabelMatrix]) -> PairwisePatterns {
    let b = labels.first().map_or(0, |y| y.cols());
    let mut cooc = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in i + 1..b {
            let r = phi(labels.iter().flat_map(|y| (0..y.rows()).map(move |s| (y.get(s, i), y.get(s, j)))));
            cooc[i][j] = r.max(0.0);
            cooc[j][i] = cooc[i][j];
        }
    }
    let smooth = (0..b)
        .map(|k| {
            phi(labels
                .iter()
                .flat_map(|y| (1..y.rows()).map(move |s| (y.get(s - 1, k), y.get(s, k)))))
            .max(0.0)
        })
        .collect();
    PairwisePatterns { cooc, smooth }
}

fn scaled_model(patterns: &PairwisePatterns, unary: f64, cooc: f64, smooth: f64) -> CrfModel {
    CrfModel {
        unary_scale: unary,
        cooc: patterns.cooc.iter().map(|r| r.iter().map(|w| w * cooc).collect()).collect(),
        smooth: patterns.smooth.iter().map(|w| w * smooth).collect(),
    }
}

/// Fraction of slices whose MAP row equals the label row.
pub fn crf_emr(model: &CrfModel, volumes: &[(Tensor, LabelMatrix)]) -> Result<f64, CrfError> {
    let counts: Vec<(usize, usize)> = volumes
        .par_iter()
        .map(|(logits, y)| {
            let map = crf_predict(model, logits)?;
            let hits = (0..y.rows()).filter(|&s| map.row(s) == y.row(s)).count();
            Ok((hits, y.rows()))
        })
        .collect::<Result<_, CrfError>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Selects weights by coordinate-wise search over `grid`, maximizing exact
/// match on `volumes`. Pairwise shapes come from [`pairwise_patterns`] of the
/// labels; the grid scales them. A candidate replaces the current choice only
/// when strictly better, so earlier grid entries win ties.
pub fn fit_crf(volumes: &[(Tensor, LabelMatrix)], grid: &CrfGrid) -> Result<CrfModel, CrfError> {
    if grid.unary_scales.is_empty() || grid.cooc_scales.is_empty() || grid.smooth_scales.is_empty() {
        return Err(CrfError::EmptyGrid);
    }
    if volumes.is_empty() {
        return Err(CrfError::NoVolumes);
    }
    for (logits, y) in volumes {
        if logits.rows() != y.rows() || logits.cols() != y.cols() {
            return Err(CrfError::Shape {
                logit_rows: logits.rows(),
                logit_cols: logits.cols(),
                label_rows: y.rows(),
                label_cols: y.cols(),
            });
        }
    }
    let label_refs: Vec<&LabelMatrix> = volumes.iter().map(|v| &v.1).collect();
    let patterns = pairwise_patterns(&label_refs);
    let axes = [&grid.unary_scales, &grid.cooc_scales, &grid.smooth_scales];

    let mut cache: HashMap<[usize; 3], f64> = HashMap::new();
    let mut score = |idx: [usize; 3]| -> Result<f64, CrfError> {
        if let Some(&s) = cache.get(&idx) {
            return Ok(s);
        }
        let m = scaled_model(&patterns, axes[0][idx[0]], axes[1][idx[1]], axes[2][idx[2]]);
        let s = crf_emr(&m, volumes)?;
        cache.insert(idx, s);
        Ok(s)
    };

    let mut current = [0usize; 3];
    let mut best = score(current)?;
    for _round in 0..16 {
        let mut changed = false;
        for axis in 0..3 {
            for k in 0..axes[axis].len() {
                let mut cand = current;
                cand[axis] = k;
                let s = score(cand)?;
                if s > best {
                    best = s;
                    current = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let model = scaled_model(&patterns, axes[0][current[0]], axes[1][current[1]], axes[2][current[2]]);
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, b: usize, scale: f64) -> CrfModel {
        let mut cooc = vec![vec![0.0; b]; b];
        for i in 0..b {
            for j in i + 1..b {
                let w = rng.random_range(0.0..scale);
                cooc[i][j] = w;
                cooc[j][i] = w;
            }
        }
        CrfModel {
            unary_scale: rng.random_range(0.5..2.0),
            cooc,
            smooth: (0..b).map(|_| rng.random_range(0.0..scale)).collect(),
        }
    }

    fn random_logits(rng: &mut ChaCha8Rng, s: usize, b: usize, spread: f64) -> Tensor {
        Tensor::matrix(s, b, (0..s * b).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
    }

    #[test]
    fn decoupled_map_is_logit_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = random_logits(&mut rng, 5, 3, 3.0);
        let map = crf_predict(&CrfModel::independent(3), &logits).unwrap();
        for (l, x) in logits.data().iter().zip(map.data()) {
            assert_eq!(*x == 1, *l > 0.0);
        }
    }

    #[test]
    fn strongly_negative_logits_give_all_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 3, 2.0);
        let logits = Tensor::filled(vec![4, 3], -100.0).unwrap();
        assert_eq!(crf_predict(&model, &logits).unwrap().positives(), 0);
    }

    #[test]
    fn two_by_two_energy_by_hand() {
        let model = CrfModel {
            unary_scale: 2.0,
            cooc: vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            smooth: vec![1.0, 3.0],
        };
        let logits = Tensor::from_rows(&[vec![1.0, -0.5], vec![0.25, 2.0]]).unwrap();
        let g = build_energy(&model, &logits).unwrap();
        let x = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        // Unary: −2·1 + 0 + 0 + −2·2 = −6; within slice: 0.5 + 0.5; across: 1 + 3.
        assert_eq!(g.energy_of(&x), -6.0 + 1.0 + 4.0);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let mut model = CrfModel::independent(2);
        model.smooth[1] = -0.1;
        let logits = Tensor::zeros(vec![2, 2]);
        assert!(matches!(build_energy(&model, &logits), Err(CrfError::NegativeWeight { .. })));
        assert!(matches!(
            EnergyGraph::from_terms(1, 2, vec![[0.0, 0.0]; 2], vec![PairTerm { a: 0, b: 1, weight: -1.0 }]),
            Err(CrfError::NegativeWeight { .. })
        ));
        let mut asym = CrfModel::independent(2);
        asym.cooc[0][1] = 1.0;
        assert_eq!(asym.validate(), Err(CrfError::Cooc));
    }

    #[test]
    fn graph_cut_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (s, b) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let model = random_model(&mut rng, b, 2.0);
            let g = build_energy(&model, &random_logits(&mut rng, s, b, 2.0)).unwrap();
            let cut = graph_cut_map(&g).unwrap();
            let brute = brute_force_map(&g).unwrap();
            assert_eq!(g.energy_of(&cut), g.energy_of(&brute));
        }
    }

    #[test]
    fn heavy_smoothing_makes_columns_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = CrfModel { unary_scale: 1.0, cooc: vec![vec![0.0; 3]; 3], smooth: vec![1e4; 3] };
        let map = crf_predict(&model, &random_logits(&mut rng, 8, 3, 2.0)).unwrap();
        for b in 0..3 {
            let col = map.column(b);
            assert!(col.iter().all(|&v| v == col[0]));
        }
    }

    #[test]
    fn brute_force_limits_and_ties() {
        let g = EnergyGraph::from_terms(3, 7, vec![[0.0, 0.0]; 21], vec![]).unwrap();
        assert!(matches!(brute_force_map(&g), Err(CrfError::TooLarge(21))));
        let tied = EnergyGraph::from_terms(1, 3, vec![[0.0, 0.0]; 3], vec![]).unwrap();
        assert_eq!(brute_force_map(&tied).unwrap().data(), &[0, 0, 0]);
        let g = EnergyGraph::from_terms(1, 2, vec![[1.0, 0.0], [0.0, 0.0]], vec![]).unwrap();
        assert_eq!(brute_force_map(&g).unwrap().data(), &[1, 0]);
    }

    #[test]
    fn power_of_two_rescaling_keeps_labeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let model = random_model(&mut rng, 3, 1.5);
            let logits = random_logits(&mut rng, 5, 3, 2.0);
            let g = build_energy(&model, &logits).unwrap();
            let base = graph_cut_map(&g).unwrap();
            for factor in [0.5, 2.0, 8.0] {
                let scaled = EnergyGraph {
                    unary: g.unary.iter().map(|u| [u[0] * factor, u[1] * factor]).collect(),
                    pairs: g.pairs.iter().map(|p| PairTerm { weight: p.weight * factor, ..*p }).collect(),
                    ..g.clone()
                };
                assert_eq!(graph_cut_map(&scaled).unwrap(), base);
            }
        }
    }

    #[test]
    fn single_candidate_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vols: Vec<(Tensor, LabelMatrix)> = (0..3)
            .map(|_| {
                let y = LabelMatrix::new(6, 2, (0..12).map(|_| rng.random_range(0..2)).collect()).unwrap();
                (random_logits(&mut rng, 6, 2, 2.0), y)
            })
            .collect();
        let grid = CrfGrid { unary_scales: vec![1.5], cooc_scales: vec![0.0], smooth_scales: vec![0.0] };
        let m = fit_crf(&vols, &grid).unwrap();
        assert_eq!(m.unary_scale, 1.5);
        assert!(m.smooth.iter().all(|&w| w == 0.0));
        let empty = CrfGrid { smooth_scales: vec![], ..grid };
        assert_eq!(fit_crf(&vols, &empty), Err(CrfError::EmptyGrid));
    }

    fn transitions(map: &LabelMatrix) -> usize {
        (1..map.rows())
            .map(|s| (0..map.cols()).filter(|&b| map.get(s, b) != map.get(s - 1, b)).count())
            .sum()
    }

    #[test]
    fn more_smoothing_never_adds_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut model = random_model(&mut rng, 3, 1.0);
            let logits = random_logits(&mut rng, 10, 3, 2.0);
            let mut last = usize::MAX;
            for w in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
                model.smooth = vec![w; 3];
                let t = transitions(&crf_predict(&model, &logits).unwrap());
                assert!(t <= last, "{t} transitions at smoothing {w}, {last} before");
                last = t;
            }
        }
    }

    fn run_volume(rng: &mut ChaCha8Rng, s: usize, b: usize, flip: f64) -> (Tensor, LabelMatrix) {
        let mut y = vec![0u8; s * b];
        for k in 0..b {
            let mut v = rng.random_range(0..2u8);
            for r in 0..s {
                if rng.random_bool(flip) {
                    v = 1 - v;
                }
                y[r * b + k] = v;
            }
        }
        let logits = y.iter().map(|&v| (f64::from(v) * 2.0 - 1.0) + rng.random_range(-2.0..2.0)).collect();
        (Tensor::matrix(s, b, logits).unwrap(), LabelMatrix::new(s, b, y).unwrap())
    }

    #[test]
    fn fit_smooths_coherent_volumes_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coherent: Vec<(Tensor, LabelMatrix)> = (0..20).map(|_| run_volume(&mut rng, 24, 2, 0.1)).collect();
        let memoryless: Vec<(Tensor, LabelMatrix)> = (0..20).map(|_| run_volume(&mut rng, 24, 2, 0.5)).collect();
        let grid = CrfGrid::default();
        let fit_coherent = fit_crf(&coherent, &grid).unwrap();
        let fit_memoryless = fit_crf(&memoryless, &grid).unwrap();
        let strongest = |m: &CrfModel| m.smooth.iter().cloned().fold(0.0, f64::max);
        assert!(strongest(&fit_coherent) > 0.5, "{:?}", fit_coherent.smooth);
        assert!(fit_memoryless.smooth.iter().all(|&w| w == 0.0), "{:?}", fit_memoryless.smooth);
        assert!(crf_emr(&fit_coherent, &coherent).unwrap() > crf_emr(&CrfModel::independent(2), &coherent).unwrap());
    }
}
