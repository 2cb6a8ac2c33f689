//! Volume records, the synthetic generator, patient-disjoint splits and the
//! binary dataset container.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::DescriptorMatrix;
use crate::labels::LabelMatrix;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"SFDS";
pub const DATASET_VERSION: u32 = 1;
const LITTLE_ENDIAN_TAG: u8 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("not a dataset container: {0}")]
    Header(String),
    #[error("dataset truncated while reading {0}")]
    Truncated(&'static str),
    #[error("volume {volume_id}: {descriptors} descriptor rows but {labels} label rows")]
    RowCount {
        volume_id: String,
        descriptors: usize,
        labels: usize,
    },
    #[error("volume {volume_id}: {what} is {got}, dataset expects {expected}")]
    Dims {
        volume_id: String,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("volume {0}: patient id is empty")]
    EmptyPatient(String),
    #[error("volume {0}: descriptor value is not representable as f32")]
    NotF32(String),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("{0} trailing bytes after the last volume")]
    TrailingBytes(usize),
    #[error("split needs {needed} patients, dataset has {available}")]
    TooFewPatients { needed: usize, available: usize },
    #[error("split fractions must be nonnegative and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One annotated volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub volume_id: String,
    pub patient_id: String,
    pub descriptors: DescriptorMatrix,
    pub labels: LabelMatrix,
}

impl VolumeRecord {
    pub fn new(patient_id: impl Into<String>, descriptors: DescriptorMatrix, labels: LabelMatrix) -> Result<Self, DataError> {
        let record = Self {
            volume_id: descriptors.volume_id.clone(),
            patient_id: patient_id.into(),
            descriptors,
            labels,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn slices(&self) -> usize {
        self.labels.rows()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.patient_id.is_empty() {
            return Err(DataError::EmptyPatient(self.volume_id.clone()));
        }
        if self.descriptors.slices() != self.labels.rows() {
            return Err(DataError::RowCount {
                volume_id: self.volume_id.clone(),
                descriptors: self.descriptors.slices(),
                labels: self.labels.rows(),
            });
        }
        Ok(())
    }
}

/// Label process of one biomarker: a stationary two-state Markov chain.
///
/// `p_stay` sets the lag-1 autocorrelation `2·p_stay − 1`; `positive_rate` is
/// the stationary probability of label 1. With `positive_rate = 0.5` the
/// chain keeps its state with probability exactly `p_stay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovParams {
    pub p_stay: f64,
    pub positive_rate: f64,
}

impl MarkovParams {
    /// `(P(1 → 1), P(0 → 0))`.
    pub fn transitions(&self) -> (f64, f64) {
        let lambda = 2.0 * self.p_stay - 1.0;
        let pi = self.positive_rate;
        (pi + (1.0 - pi) * lambda, (1.0 - pi) + pi * lambda)
    }

    fn validate(&self) -> Result<(), DataError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.p_stay) || !unit(self.positive_rate) {
            return Err(DataError::Config(format!(
                "p_stay {} and positive rate {} must lie in [0, 1]",
                self.p_stay, self.positive_rate
            )));
        }
        let (a, d) = self.transitions();
        let tol = 1e-12;
        if !(-tol..=1.0 + tol).contains(&a) || !(-tol..=1.0 + tol).contains(&d) {
            return Err(DataError::Config(format!(
                "p_stay {} is unreachable at positive rate {}",
                self.p_stay, self.positive_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub volumes: usize,
    pub volumes_per_patient: usize,
    pub slices: usize,
    pub dim: usize,
    /// One chain per biomarker.
    pub markov: Vec<MarkovParams>,
    /// Descriptor shift along a biomarker's direction when it is present.
    pub mu: f64,
    pub sigma: f64,
    /// Probability that a stored label is flipped.
    pub label_noise: f64,
    /// Appends a column that is 1 exactly when every other observed label is 0.
    pub healthy_column: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::uniform(100, 49, 64, 11, 0.9, 0.2, 7)
    }
}

impl SyntheticConfig {
    /// Every biomarker shares the same chain; `mu = 1`, `sigma = 1`, label
    /// noise 0.05, two volumes per patient.
    pub fn uniform(volumes: usize, slices: usize, dim: usize, biomarkers: usize, p_stay: f64, positive_rate: f64, seed: u64) -> Self {
        Self {
            volumes,
            volumes_per_patient: 2,
            slices,
            dim,
            markov: vec![MarkovParams { p_stay, positive_rate }; biomarkers],
            mu: 1.0,
            sigma: 1.0,
            label_noise: 0.05,
            healthy_column: false,
            seed,
        }
    }

    /// Label columns in the generated data, including the optional healthy
    /// column.
    pub fn label_columns(&self) -> usize {
        self.markov.len() + usize::from(self.healthy_column)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.volumes == 0 || self.slices == 0 || self.markov.is_empty() {
            return bad("volumes, slices and biomarkers must be positive".into());
        }
        if self.volumes_per_patient == 0 {
            return bad("volumes per patient must be positive".into());
        }
        if self.dim < self.markov.len() {
            return bad(format!("dim {} is smaller than biomarker count {}", self.dim, self.markov.len()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label noise {} must lie in [0, 1]", self.label_noise));
        }
        self.markov.iter().try_for_each(MarkovParams::validate)
    }
}

fn markov_column(params: &MarkovParams, slices: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (stay_pos, stay_neg) = params.transitions();
    let mut state = rng.random::<f64>() < params.positive_rate;
    let mut column = Vec::with_capacity(slices);
    for s in 0..slices {
        if s > 0 {
            let stay = if state { stay_pos } else { stay_neg };
            if rng.random::<f64>() >= stay {
                state = !state;
            }
        }
        column.push(state);
    }
    column
}

fn generate_volume(cfg: &SyntheticConfig, index: usize) -> VolumeRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (s_count, b_count, d_count) = (cfg.slices, cfg.markov.len(), cfg.dim);

    let columns: Vec<Vec<bool>> = cfg.markov.iter().map(|p| markov_column(p, s_count, &mut rng)).collect();
    let noise = Normal::new(0.0, cfg.sigma).expect("sigma validated");
    let mut values = Vec::with_capacity(s_count * d_count);
    for s in 0..s_count {
        for d in 0..d_count {
            let shift = if d < b_count && columns[d][s] { cfg.mu } else { 0.0 };
            let v = shift + noise.sample(&mut rng);
            values.push(f64::from(v as f32));
        }
    }

    let cols = cfg.label_columns();
    let mut labels = LabelMatrix::zeros(s_count, cols);
    for s in 0..s_count {
        let mut any = false;
        for (b, column) in columns.iter().enumerate() {
            let flip = rng.random::<f64>() < cfg.label_noise;
            let observed = column[s] != flip;
            labels.set(s, b, observed);
            any |= observed;
        }
        if cfg.healthy_column {
            labels.set(s, b_count, !any);
        }
    }

    let volume_id = format!("vol-{index:05}");
    let descriptors = DescriptorMatrix::new(volume_id.clone(), Tensor::from_parts(vec![s_count, d_count], values))
        .expect("rank 2 by construction");
    VolumeRecord {
        volume_id,
        patient_id: format!("pat-{:05}", index / cfg.volumes_per_patient),
        descriptors,
        labels,
    }
}

/// Draws `cfg.volumes` records. Each volume uses its own random stream, so
/// the output does not depend on the thread count.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<VolumeRecord>, DataError> {
    cfg.validate()?;
    Ok((0..cfg.volumes).into_par_iter().map(|m| generate_volume(cfg, m)).collect())
}

/// Per-column label statistics over a set of volumes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStats {
    pub slices: usize,
    pub positive_rate: Vec<f64>,
    /// Pearson correlation of labels on adjacent slices of the same volume.
    pub lag1_autocorrelation: Vec<f64>,
}

pub fn label_stats(records: &[VolumeRecord]) -> LabelStats {
    let cols = records.first().map_or(0, |r| r.labels.cols());
    let slices = records.iter().map(VolumeRecord::slices).sum::<usize>();
    let positive_rate = (0..cols)
        .map(|b| {
            let pos: usize = records.iter().map(|r| r.labels.column(b).iter().map(|&v| usize::from(v)).sum::<usize>()).sum();
            pos as f64 / slices.max(1) as f64
        })
        .collect();
    let lag1_autocorrelation = (0..cols)
        .map(|b| {
            let pairs: Vec<(f64, f64)> = records
                .iter()
                .flat_map(|r| {
                    let c = r.labels.column(b);
                    (1..c.len()).map(move |s| (f64::from(c[s - 1]), f64::from(c[s])))
                })
                .collect();
            pearson(&pairs)
        })
        .collect();
    LabelStats { slices, positive_rate, lag1_autocorrelation }
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Record indices of a three-way split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Patient ids in sorted order, each with its record indices.
fn patients(records: &[VolumeRecord], subset: &[usize]) -> Vec<(String, Vec<usize>)> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in subset {
        by_patient.entry(records[i].patient_id.as_str()).or_default().push(i);
    }
    by_patient.into_iter().map(|(p, v)| (p.to_owned(), v)).collect()
}

/// Shares of `n` proportional to `fractions`, rounded by largest remainder
/// (earlier shares win ties).
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>().min(n);
    for &i in order.iter().cycle().take(fractions.len() * 2) {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Splits records by patient into train/validation/test. Every patient's
/// volumes land in one split. Patients are shuffled by `seed` and cut by
/// `fractions`.
pub fn split_patients(records: &[VolumeRecord], fractions: [f64; 3], seed: u64) -> Result<Split, DataError> {
    let all: Vec<usize> = (0..records.len()).collect();
    split_subset(records, &all, fractions, seed)
}

/// [`split_patients`] restricted to the records in `subset`.
pub fn split_subset(records: &[VolumeRecord], subset: &[usize], fractions: [f64; 3], seed: u64) -> Result<Split, DataError> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Fractions(fractions));
    }
    let mut groups = patients(records, subset);
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if groups.len() < needed {
        return Err(DataError::TooFewPatients { needed, available: groups.len() });
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = apportion(groups.len(), &fractions);
    let mut split = Split::default();
    let mut groups = groups.into_iter();
    for (target, count) in [&mut split.train, &mut split.val, &mut split.test].into_iter().zip(counts) {
        for (_, idx) in groups.by_ref().take(count) {
            target.extend(idx);
        }
        target.sort_unstable();
    }
    Ok(split)
}

/// Patient-disjoint `(train, val)` folds over `subset`: patients are shuffled
/// and dealt round-robin into `k` groups, and fold `i` validates on group `i`.
/// With `k = 1` a single 90/10 split is returned.
pub fn patient_folds(records: &[VolumeRecord], subset: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, DataError> {
    if k == 0 {
        return Err(DataError::Config("fold count must be positive".into()));
    }
    if k == 1 {
        let s = split_subset(records, subset, [0.9, 0.1, 0.0], seed)?;
        return Ok(vec![(s.train, s.val)]);
    }
    let mut groups = patients(records, subset);
    if groups.len() < k {
        return Err(DataError::TooFewPatients { needed: k, available: groups.len() });
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..k)
        .map(|fold| {
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (g, (_, idx)) in groups.iter().enumerate() {
                if g % k == fold {
                    val.extend(idx);
                } else {
                    train.extend(idx);
                }
            }
            train.sort_unstable();
            val.sort_unstable();
            (train, val)
        })
        .collect();
    Ok(folds)
}

pub fn select(records: &[VolumeRecord], indices: &[usize]) -> Vec<VolumeRecord> {
    indices.iter().map(|&i| records[i].clone()).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

/// Serializes records into the container format:
///
/// ```text
/// "SFDS" | version u32 | endianness u8 (1 = little) | M, S, D, B as u64
/// per volume: volume id, patient id (u32 length + UTF-8)
///             descriptor rows u64 | label rows u64
///             descriptors f32, row-major | labels, bit-packed row-major, LSB first
/// ```
///
/// `S` is 0 when volumes differ in length. Descriptors must be exactly
/// representable as `f32`.
pub fn encode_dataset(records: &[VolumeRecord]) -> Result<Vec<u8>, DataError> {
    let first = records.first().ok_or(DataError::Empty)?;
    let (dim, cols) = (first.descriptors.dim(), first.labels.cols());
    let slices = if records.iter().all(|r| r.slices() == first.slices()) { first.slices() } else { 0 };

    let mut out = Vec::new();
    out.extend(DATASET_MAGIC);
    out.extend(DATASET_VERSION.to_le_bytes());
    out.push(LITTLE_ENDIAN_TAG);
    for v in [records.len(), slices, dim, cols] {
        out.extend((v as u64).to_le_bytes());
    }
    for r in records {
        r.validate()?;
        check_dims(&r.volume_id, "descriptor width", dim, r.descriptors.dim())?;
        check_dims(&r.volume_id, "label width", cols, r.labels.cols())?;
        put_str(&mut out, &r.volume_id);
        put_str(&mut out, &r.patient_id);
        out.extend((r.descriptors.slices() as u64).to_le_bytes());
        out.extend((r.labels.rows() as u64).to_le_bytes());
        for &v in r.descriptors.values().data() {
            let narrow = v as f32;
            if f64::from(narrow).to_bits() != v.to_bits() {
                return Err(DataError::NotF32(r.volume_id.clone()));
            }
            out.extend(narrow.to_le_bytes());
        }
        out.extend(pack_bits(r.labels.data()));
    }
    Ok(out)
}

fn check_dims(volume_id: &str, what: &'static str, expected: usize, got: usize) -> Result<(), DataError> {
    if expected == got {
        Ok(())
    } else {
        Err(DataError::Dims { volume_id: volume_id.to_owned(), what, expected, got })
    }
}

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= b << (i % 8);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(DataError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<usize, DataError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| DataError::Truncated(what))
    }

    fn string(&mut self, what: &'static str) -> Result<String, DataError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DataError::Utf8(what))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<VolumeRecord>, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|_| DataError::Header("file shorter than the magic bytes".into()))?;
    if magic != DATASET_MAGIC {
        return Err(DataError::Header(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(DataError::Header(format!("unsupported version {version}")));
    }
    let tag = r.take(1, "endianness tag")?[0];
    if tag != LITTLE_ENDIAN_TAG {
        return Err(DataError::Header(format!("unsupported endianness tag {tag}")));
    }
    let volumes = r.u64("volume count")?;
    let slices = r.u64("slice count")?;
    let dim = r.u64("descriptor width")?;
    let cols = r.u64("label width")?;

    let mut records = Vec::with_capacity(volumes.min(1 << 16));
    for _ in 0..volumes {
        let volume_id = r.string("volume id")?;
        let patient_id = r.string("patient id")?;
        let desc_rows = r.u64("descriptor rows")?;
        let label_rows = r.u64("label rows")?;
        if desc_rows != label_rows {
            return Err(DataError::RowCount { volume_id, descriptors: desc_rows, labels: label_rows });
        }
        if slices != 0 {
            check_dims(&volume_id, "slice count", slices, desc_rows)?;
        }
        let n = desc_rows.checked_mul(dim).ok_or(DataError::Truncated("descriptors"))?;
        let raw = r.take(n.checked_mul(4).ok_or(DataError::Truncated("descriptors"))?, "descriptors")?;
        let values: Vec<f64> = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Header(format!("volume {volume_id}: non-finite descriptor")));
        }
        let bits = label_rows * cols;
        let packed = r.take(bits.div_ceil(8), "labels")?;
        let labels: Vec<u8> = (0..bits).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();

        let descriptors = DescriptorMatrix::new(volume_id.clone(), Tensor::from_parts(vec![desc_rows, dim], values))
            .expect("rank 2 by construction");
        let labels = LabelMatrix::new(label_rows, cols, labels).expect("bits are binary");
        let record = VolumeRecord { volume_id, patient_id, descriptors, labels };
        record.validate()?;
        records.push(record);
    }
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(records)
}

pub fn write_dataset(records: &[VolumeRecord], path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_dataset(records)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<VolumeRecord>, DataError> {
    decode_dataset(&std::fs::read(path)?)
}

/// Tab-separated `volume_id, patient_id, slices`, one volume per line.
pub fn manifest(records: &[VolumeRecord]) -> String {
    let mut out = String::from("volume_id\tpatient_id\tslices\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.volume_id, r.patient_id, r.slices());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p_stay: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig::uniform(6, 7, 5, 3, p_stay, 0.3, seed)
    }

    #[test]
    fn absorbing_chain_is_constant() {
        let cfg = SyntheticConfig { label_noise: 0.0, ..small(1.0, 3) };
        for r in generate_synthetic(&cfg).unwrap() {
            for b in 0..3 {
                let c = r.labels.column(b);
                assert!(c.iter().all(|&v| v == c[0]));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let a = generate_synthetic(&small(0.8, 1)).unwrap();
        assert_eq!(a, generate_synthetic(&small(0.8, 1)).unwrap());
        assert_ne!(a, generate_synthetic(&small(0.8, 2)).unwrap());
    }

    #[test]
    fn healthy_column_complements() {
        let cfg = SyntheticConfig { healthy_column: true, ..small(0.7, 4) };
        for r in generate_synthetic(&cfg).unwrap() {
            assert_eq!(r.labels.cols(), 4);
            for s in 0..r.slices() {
                let any = r.labels.row(s)[..3].contains(&1);
                assert_eq!(r.labels.get(s, 3), !any);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(small(1.2, 0).validate().is_err());
        assert!(SyntheticConfig { sigma: 0.0, ..small(0.9, 0) }.validate().is_err());
        assert!(SyntheticConfig { dim: 2, ..small(0.9, 0) }.validate().is_err());
        // Strong anticorrelation cannot keep a rare positive rate.
        assert!(SyntheticConfig::uniform(2, 3, 3, 1, 0.0, 0.2, 0).validate().is_err());
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(100, &[0.8, 0.1, 0.1]), vec![80, 10, 10]);
        assert_eq!(apportion(7, &[1.0, 0.0, 0.0]), vec![7, 0, 0]);
        assert_eq!(apportion(10, &[0.9, 0.1, 0.0]), vec![9, 1, 0]);
        assert_eq!(apportion(3, &[0.5, 0.5, 0.0]).iter().sum::<usize>(), 3);
    }

    #[test]
    fn split_keeps_patients_together() {
        let cfg = SyntheticConfig { volumes: 30, volumes_per_patient: 3, ..small(0.9, 5) };
        let recs = generate_synthetic(&cfg).unwrap();
        let s = split_patients(&recs, [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 30);
        let owner = |i: usize| &recs[i].patient_id;
        for a in &s.train {
            assert!(s.val.iter().chain(&s.test).all(|&b| owner(*a) != owner(b)));
        }
        let all = split_patients(&recs, [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!(all.train.len(), 30);
        assert!(matches!(
            split_patients(&recs[..3], [0.5, 0.5, 0.0], 0),
            Err(DataError::TooFewPatients { .. })
        ));
    }

    #[test]
    fn row_mismatch_names_volume() {
        let mut recs = generate_synthetic(&small(0.9, 6)).unwrap();
        let mut bytes = encode_dataset(&recs).unwrap();
        // Label row count of the first volume follows its descriptor row count.
        let offset = 4 + 4 + 1 + 32 + 4 + recs[0].volume_id.len() + 4 + recs[0].patient_id.len() + 8;
        bytes[offset] += 1;
        match decode_dataset(&bytes) {
            Err(DataError::RowCount { volume_id, .. }) => assert_eq!(volume_id, recs[0].volume_id),
            other => panic!("{other:?}"),
        }
        recs[1].labels = LabelMatrix::zeros(2, 3);
        assert!(matches!(encode_dataset(&recs), Err(DataError::RowCount { .. })));
    }

    #[test]
    fn header_and_truncation_errors() {
        let recs = generate_synthetic(&small(0.9, 7)).unwrap();
        let bytes = encode_dataset(&recs).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), recs);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(DataError::Header(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_dataset(&bad), Err(DataError::Header(_))));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(DataError::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(DataError::TrailingBytes(1))));
    }

    #[test]
    fn non_f32_descriptor_is_rejected() {
        let d = DescriptorMatrix::from_slices("v", &[vec![0.1]]).unwrap();
        let r = VolumeRecord::new("p", d, LabelMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(encode_dataset(&[r]), Err(DataError::NotF32(_))));
    }
}
