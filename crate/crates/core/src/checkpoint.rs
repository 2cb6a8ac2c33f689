//! Versioned binary checkpoint container.
//!
//! ```text
//! "SFCK" | version u32 | section count u32
//! per section: tag [u8; 4] | payload length u64 | payload
//! ```
//!
//! Every number is little-endian. Section payloads:
//!
//! | tag    | header (u64 unless noted)   | tensors (f64)                                  |
//! |--------|-----------------------------|------------------------------------------------|
//! | `FUSE` | D, H, B, head mode (u8)     | W_i W_f W_g W_o, U_i..U_o, b_i..b_o, head W, head b, h0, c0, h′0, c′0 |
//! | `HEAD` | D, B                        | W, b                                           |
//! | `MLPN` | S, D, B, hidden             | W1, b1, W2, b2                                 |
//! | `CRFM` | B                           | unary scale, cooc (B×B row-major), smooth (B)  |

use std::path::Path;

use thiserror::Error;

use crate::crf::CrfModel;
use crate::fusion::{FusionDims, FusionModel, HeadMode};
use crate::mlp::MlpModel;
use crate::params::Parameters;
use crate::slice_head::SliceHeadModel;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: {0}")]
    Header(String),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown section tag {0:?}")]
    UnknownSection([u8; 4]),
    #[error("section {0} appears twice")]
    DuplicateSection(&'static str),
    #[error("section {tag} declares {declared} bytes but holds {used}")]
    SectionLength { tag: &'static str, declared: usize, used: usize },
    #[error("section {0} has invalid dimensions")]
    Dims(&'static str),
    #[error("section {0} holds a non-finite value")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Any subset of the trained models of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub fusion: Option<FusionModel>,
    pub head: Option<SliceHeadModel>,
    pub mlp: Option<MlpModel>,
    pub crf: Option<CrfModel>,
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u64).to_le_bytes());
}

fn put_tensors<'a>(out: &mut Vec<u8>, tensors: impl IntoIterator<Item = &'a Tensor>) {
    for t in tensors {
        out.extend(t.to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend(v.to_le_bytes());
    }
}

fn fusion_payload(m: &FusionModel) -> Vec<u8> {
    let mut out = Vec::new();
    let FusionDims { descriptor, hidden, biomarkers } = m.dims();
    for v in [descriptor, hidden, biomarkers] {
        put_u64(&mut out, v);
    }
    out.push(match m.head_mode {
        HeadMode::Concat => 0,
        HeadMode::Symmetric => 1,
    });
    put_tensors(&mut out, m.parameters().into_iter().chain(m.initial_states()));
    out
}

fn head_payload(m: &SliceHeadModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, m.descriptor_dim());
    put_u64(&mut out, m.biomarkers());
    put_tensors(&mut out, m.parameters());
    out
}

fn mlp_payload(m: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [m.slices, m.descriptor_dim, m.biomarkers, m.hidden()] {
        put_u64(&mut out, v);
    }
    put_tensors(&mut out, m.parameters());
    out
}

fn crf_payload(m: &CrfModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, m.biomarkers());
    put_f64s(&mut out, [m.unary_scale]);
    put_f64s(&mut out, m.cooc.iter().flatten().copied());
    put_f64s(&mut out, m.smooth.iter().copied());
    out
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut sections: Vec<(&[u8; 4], Vec<u8>)> = Vec::new();
        if let Some(m) = &self.fusion {
            sections.push((b"FUSE", fusion_payload(m)));
        }
        if let Some(m) = &self.head {
            sections.push((b"HEAD", head_payload(m)));
        }
        if let Some(m) = &self.mlp {
            sections.push((b"MLPN", mlp_payload(m)));
        }
        if let Some(m) = &self.crf {
            sections.push((b"CRFM", crf_payload(m)));
        }
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend(tag);
            put_u64(&mut out, payload.len());
            out.extend(payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r
            .take(4, "magic")
            .map_err(|_| CheckpointError::Header("file shorter than the magic bytes".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Header(format!("bad magic {magic:?}")));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Header(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.take(4, "section count")?.try_into().unwrap());
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4, "section tag")?.try_into().unwrap();
            let len = r.u64("section length")?;
            let payload = r.take(len, "section payload")?;
            let mut p = Reader { bytes: payload, pos: 0 };
            let name = match &tag {
                b"FUSE" => "FUSE",
                b"HEAD" => "HEAD",
                b"MLPN" => "MLPN",
                b"CRFM" => "CRFM",
                _ => return Err(CheckpointError::UnknownSection(tag)),
            };
            match name {
                "FUSE" => set_once(&mut ck.fusion, read_fusion(&mut p)?, name)?,
                "HEAD" => set_once(&mut ck.head, read_head(&mut p)?, name)?,
                "MLPN" => set_once(&mut ck.mlp, read_mlp(&mut p)?, name)?,
                _ => set_once(&mut ck.crf, read_crf(&mut p)?, name)?,
            }
            if p.pos != payload.len() {
                return Err(CheckpointError::SectionLength { tag: name, declared: len, used: p.pos });
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Header(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn set_once<T>(slot: &mut Option<T>, value: T, tag: &'static str) -> Result<(), CheckpointError> {
    if slot.is_some() {
        return Err(CheckpointError::DuplicateSection(tag));
    }
    *slot = Some(value);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| CheckpointError::Truncated(what))
    }

    fn dims<const N: usize>(&mut self, tag: &'static str) -> Result<[usize; N], CheckpointError> {
        let mut out = [0; N];
        for v in &mut out {
            *v = self.u64("dimensions")?;
            if *v == 0 || *v > 1 << 24 {
                return Err(CheckpointError::Dims(tag));
            }
        }
        Ok(out)
    }

    fn f64s(&mut self, n: usize, tag: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Dims(tag))?, "tensor data")?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(tag));
        }
        Ok(values)
    }

    fn fill<'t>(&mut self, tensors: impl IntoIterator<Item = &'t mut Tensor>, tag: &'static str) -> Result<(), CheckpointError> {
        for t in tensors {
            let values = self.f64s(t.numel(), tag)?;
            t.data_mut().copy_from_slice(&values);
        }
        Ok(())
    }
}

fn read_fusion(r: &mut Reader) -> Result<FusionModel, CheckpointError> {
    let [descriptor, hidden, biomarkers] = r.dims::<3>("FUSE")?;
    let head_mode = match r.take(1, "head mode")?[0] {
        0 => HeadMode::Concat,
        1 => HeadMode::Symmetric,
        _ => return Err(CheckpointError::Dims("FUSE")),
    };
    let mut m = FusionModel::zeros(FusionDims { descriptor, hidden, biomarkers }, head_mode);
    r.fill(m.parameters_mut(), "FUSE")?;
    r.fill(m.initial_states_mut(), "FUSE")?;
    Ok(m)
}

fn read_head(r: &mut Reader) -> Result<SliceHeadModel, CheckpointError> {
    let [d, b] = r.dims::<2>("HEAD")?;
    let mut m = SliceHeadModel::zeros(d, b);
    r.fill(m.parameters_mut(), "HEAD")?;
    Ok(m)
}

fn read_mlp(r: &mut Reader) -> Result<MlpModel, CheckpointError> {
    let [slices, descriptor_dim, biomarkers, hidden] = r.dims::<4>("MLPN")?;
    let mut m = MlpModel {
        slices,
        descriptor_dim,
        biomarkers,
        w1: Tensor::zeros(vec![slices * descriptor_dim, hidden]),
        b1: Tensor::zeros(vec![1, hidden]),
        w2: Tensor::zeros(vec![hidden, slices * biomarkers]),
        b2: Tensor::zeros(vec![1, slices * biomarkers]),
    };
    r.fill(m.parameters_mut(), "MLPN")?;
    Ok(m)
}

fn read_crf(r: &mut Reader) -> Result<CrfModel, CheckpointError> {
    let [b] = r.dims::<1>("CRFM")?;
    let unary_scale = r.f64s(1, "CRFM")?[0];
    let flat = r.f64s(b * b, "CRFM")?;
    let smooth = r.f64s(b, "CRFM")?;
    let m = CrfModel {
        unary_scale,
        cooc: flat.chunks(b).map(<[f64]>::to_vec).collect(),
        smooth,
    };
    m.validate().map_err(|_| CheckpointError::Dims("CRFM"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::init_fusion;

    fn full() -> Checkpoint {
        let mut fusion = init_fusion(FusionDims { descriptor: 3, hidden: 2, biomarkers: 2 }, HeadMode::Symmetric, 4).unwrap();
        fusion.forward_h0.data_mut()[1] = 0.25;
        let mut crf = CrfModel::independent(2);
        crf.cooc = vec![vec![0.0, 0.5], vec![0.5, 0.0]];
        crf.smooth = vec![1.5, 0.0];
        Checkpoint {
            fusion: Some(fusion),
            head: Some(SliceHeadModel::init(3, 2, 1)),
            mlp: Some(MlpModel::init(2, 3, 2, 4, 2).unwrap()),
            crf: Some(crf),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = full();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        let empty = Checkpoint::default();
        assert_eq!(Checkpoint::decode(&empty.encode()).unwrap(), empty);
    }

    #[test]
    fn corrupt_inputs_are_errors() {
        let bytes = full().encode();
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Header(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Header(_))));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[12..16].copy_from_slice(b"XXXX");
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::UnknownSection(_))));
    }
}
