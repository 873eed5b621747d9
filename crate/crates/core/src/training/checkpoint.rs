//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"PIE1"`, `u32` version, `u64` header length, JSON header,
//! `u32` tensor count, then per tensor `u32` name length, name bytes,
//! `u8` dtype tag, `u32` rank, `u64` per dimension, row-major payload,
//! and finally the `"END1"` footer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::editspace::{InsertDictionary, TransformTable};
use crate::error::{CheckpointError, PieError, Result};
use crate::fsio;
use crate::numcore::{AdamConfig, OptimizerState, ParamStore, Scalar, Tensor};
use crate::piemodel::{EditSpace, ModelConfig, PieModel, Vocab};

pub const MAGIC: &[u8; 4] = b"PIE1";
pub const FOOTER: &[u8; 4] = b"END1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Digests {
    vocab: String,
    inserts: String,
    transforms: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    inserts: Vec<(String, u64)>,
    insert_q: usize,
    insert_capacity: usize,
    transforms: String,
    digests: Digests,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

/// A model together with an optional optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: PieModel<T>,
    pub optimizer: Option<OptimizerState<T>>,
}

fn digests(vocab: &Vocab, space: &EditSpace) -> Digests {
    Digests {
        vocab: vocab.digest(),
        inserts: space.dictionary().digest(),
        transforms: space.table().digest(),
    }
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(T::DTYPE_TAG);
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.to_le_bytes(out);
    }
}

pub fn checkpoint_bytes<T: Scalar>(
    model: &PieModel<T>,
    optimizer: Option<&OptimizerState<T>>,
) -> Result<Vec<u8>> {
    let space = model.space();
    let header = Header {
        config: model.config().clone(),
        vocab: model.vocab().tokens().to_vec(),
        inserts: space.dictionary().entries().to_vec(),
        insert_q: space.dictionary().q(),
        insert_capacity: space.dictionary().capacity(),
        transforms: space.table().to_tsv(),
        digests: digests(model.vocab(), space),
        optimizer: optimizer.map(|o| OptimizerHeader {
            config: o.config,
            step: o.step,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 4 * model.params().num_scalars() + 64);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(&json);
    let params = model.params();
    let extra = optimizer.map_or(0, |_| 2 * params.len());
    out.extend(((params.len() + extra) as u32).to_le_bytes());
    for (_, p) in params.iter() {
        put_tensor(&mut out, &p.name, &p.value);
    }
    if let Some(o) = optimizer {
        for ((_, p), m) in params.iter().zip(&o.first_moment) {
            put_tensor(&mut out, &format!("adam.m.{}", p.name), m);
        }
        for ((_, p), v) in params.iter().zip(&o.second_moment) {
            put_tensor(&mut out, &format!("adam.v.{}", p.name), v);
        }
    }
    out.extend(FOOTER);
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &PieModel<T>,
    optimizer: Option<&OptimizerState<T>>,
) -> Result<()> {
    fsio::write_atomic(path, &checkpoint_bytes(model, optimizer)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.at..end).ok_or(CheckpointError::Truncated)?;
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated)
    }
}

fn read_tensor<T: Scalar>(r: &mut Reader) -> Result<(String, Tensor<T>), CheckpointError> {
    let name_len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
        .to_owned();
    let tag = r.take(1)?[0];
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        shape.push(r.len()?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(CheckpointError::Truncated)?;
    let data: Vec<T> = match tag {
        0 => r
            .take(count.checked_mul(4).ok_or(CheckpointError::Truncated)?)?
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4")) as f64))
            .collect(),
        1 => r
            .take(count.checked_mul(8).ok_or(CheckpointError::Truncated)?)?
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8"))))
            .collect(),
        t => return Err(CheckpointError::Malformed(format!("unknown dtype tag {t} for {name}"))),
    };
    let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok((name, t))
}

/// Parses a checkpoint. Tensors stored in another precision are converted.
pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    if bytes.len() < 12 || &bytes[bytes.len() - 4..] != FOOTER {
        return Err(CheckpointError::Truncated.into());
    }
    let body = &bytes[..bytes.len() - 4];
    let mut r = Reader { bytes: body, at: 8 };
    let header_len = r.len()?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        tensors.push(read_tensor::<T>(&mut r)?);
    }
    if r.at != body.len() {
        return Err(CheckpointError::Truncated.into());
    }

    let vocab = Vocab::from_tokens(header.vocab)?;
    let dict = InsertDictionary::from_entries(header.inserts, header.insert_q, header.insert_capacity)?;
    let table = TransformTable::from_tsv(&header.transforms)?;
    let space = EditSpace::new(dict, table, header.config.token_mode);
    let actual = digests(&vocab, &space);
    let stored = &header.digests;
    for (what, s, a) in [
        ("vocabulary", &stored.vocab, &actual.vocab),
        ("insert dictionary", &stored.inserts, &actual.inserts),
        ("transform table", &stored.transforms, &actual.transforms),
    ] {
        if s != a {
            return Err(CheckpointError::DigestMismatch {
                what,
                stored: s.clone(),
                actual: a.clone(),
            }
            .into());
        }
    }

    let n_params = crate::piemodel::parameter_layout(&header.config).len();
    if tensors.len() < n_params {
        return Err(CheckpointError::Malformed(format!(
            "{} tensors for {n_params} parameters",
            tensors.len()
        ))
        .into());
    }
    let mut rest = tensors.split_off(n_params);
    let mut params = ParamStore::new();
    for (name, t) in tensors {
        params.add(name, t)?;
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(o) => {
            if rest.len() != 2 * n_params {
                return Err(CheckpointError::Malformed("incomplete optimizer state".into()).into());
            }
            let second = rest.split_off(n_params);
            Some(OptimizerState {
                config: o.config,
                step: o.step,
                first_moment: rest.into_iter().map(|(_, t)| t).collect(),
                second_moment: second.into_iter().map(|(_, t)| t).collect(),
            })
        }
    };
    let model = PieModel::from_parts(header.config, vocab, space, params)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(Checkpoint { model, optimizer })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    checkpoint_from_bytes(&fsio::read_bytes(path)?)
}

/// Fails unless the checkpoint was trained with exactly these dictionaries.
pub fn verify_edit_space<T: Scalar>(model: &PieModel<T>, expected: &EditSpace) -> Result<()> {
    let pairs = [
        (
            "insert dictionary",
            expected.dictionary().digest(),
            model.space().dictionary().digest(),
        ),
        (
            "transform table",
            expected.table().digest(),
            model.space().table().digest(),
        ),
    ];
    for (what, want, got) in pairs {
        if want != got {
            return Err(PieError::Checkpoint(CheckpointError::DigestMismatch {
                what,
                stored: got,
                actual: want,
            }));
        }
    }
    Ok(())
}
