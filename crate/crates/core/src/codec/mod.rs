//! Systematic `(n, k)` Reed-Solomon erasure code over GF(2^8).
//!
//! A message is prefixed with its length as a big-endian `u64`, zero-padded to a
//! multiple of `k` and split into `k` data shards. `n - k` parity shards follow.
//! Any `k` shards recover the message exactly.

mod bench;

use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::{Arc, Mutex, OnceLock};

use bytes::Bytes;
use reed_solomon_erasure::galois_8::ReedSolomon;
use serde::{Deserialize, Serialize};

use crate::error::{CodecFault, Error, Result};
use crate::params::{ProtocolParams, LENGTH_HEADER};

pub use bench::{bench_codec, BenchReport, BenchRow, CodecOp};

/// One shard of an encoded message.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fragment {
    pub index: usize,
    #[serde(with = "hex_bytes")]
    pub payload: Bytes,
}

impl Fragment {
    pub fn new(index: usize, payload: impl Into<Bytes>) -> Self {
        Fragment {
            index,
            payload: payload.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

mod hex_bytes {
    use bytes::Bytes;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &Bytes, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Bytes, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map(Bytes::from).map_err(serde::de::Error::custom)
    }
}

type CoderCache = Mutex<HashMap<(usize, usize), Arc<ReedSolomon>>>;

fn coder(params: &ProtocolParams) -> Arc<ReedSolomon> {
    static CACHE: OnceLock<CoderCache> = OnceLock::new();
    let key = (params.k(), params.n() - params.k());
    let mut cache = CACHE
        .get_or_init(Default::default)
        .lock()
        .expect("codec cache poisoned");
    cache
        .entry(key)
        .or_insert_with(|| Arc::new(ReedSolomon::new(key.0, key.1).expect("validated shard counts")))
        .clone()
}

/// Encodes `m` into `params.n()` fragments, the first `k` of them systematic.
pub fn get_fragments(m: &[u8], params: &ProtocolParams) -> Result<Vec<Fragment>> {
    if m.is_empty() {
        return Err(Error::InvalidInput("cannot encode an empty message".into()));
    }
    if m.len() > params.ell_max() {
        return Err(Error::MessageTooLarge {
            len: m.len(),
            max: params.ell_max(),
        });
    }
    let shard_len = params.fragment_len(m.len());
    let k = params.k();
    let mut padded = Vec::with_capacity(shard_len * k);
    padded.extend_from_slice(&(m.len() as u64).to_be_bytes());
    padded.extend_from_slice(m);
    padded.resize(shard_len * k, 0);

    let mut shards: Vec<Vec<u8>> = padded.chunks(shard_len).map(<[u8]>::to_vec).collect();
    shards.resize(params.n(), vec![0; shard_len]);
    coder(params)
        .encode(&mut shards)
        .map_err(|e| Error::Codec(CodecFault::Decoder(format!("{e:?}"))))?;
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(index, s)| Fragment::new(index, s))
        .collect())
}

type Shards = Vec<Option<Vec<u8>>>;

/// Checks shape constraints and lays the fragments out by index.
fn arrange(frags: &[Fragment], params: &ProtocolParams) -> Result<(Shards, usize), CodecFault> {
    let need = params.k();
    if frags.len() < need {
        return Err(CodecFault::TooFewFragments { got: frags.len(), need });
    }
    let shard_len = frags[0].len();
    if shard_len == 0 {
        return Err(CodecFault::EmptyPayload);
    }
    let mut slots: Vec<Option<Vec<u8>>> = vec![None; params.n()];
    for f in frags {
        if f.index >= params.n() {
            return Err(CodecFault::IndexOutOfRange(f.index));
        }
        if f.len() != shard_len {
            return Err(CodecFault::RaggedPayloads);
        }
        if slots[f.index].is_some() {
            return Err(CodecFault::DuplicateIndex(f.index));
        }
        slots[f.index] = Some(f.payload.to_vec());
    }
    Ok((slots, shard_len))
}

/// Decodes a message, reporting why decoding failed.
pub fn try_recover(frags: &[Fragment], params: &ProtocolParams) -> Result<Vec<u8>, CodecFault> {
    let (mut slots, shard_len) = arrange(frags, params)?;
    coder(params)
        .reconstruct_data(&mut slots)
        .map_err(|e| CodecFault::Decoder(format!("{e:?}")))?;
    let mut data = Vec::with_capacity(shard_len * params.k());
    for shard in slots.iter().take(params.k()) {
        data.extend_from_slice(shard.as_deref().expect("data shards reconstructed"));
    }
    let capacity = data.len().saturating_sub(LENGTH_HEADER);
    if data.len() < LENGTH_HEADER {
        return Err(CodecFault::BadLengthHeader(0));
    }
    let declared = u64::from_be_bytes(data[..LENGTH_HEADER].try_into().expect("8 bytes"));
    if declared as u128 > capacity as u128 {
        return Err(CodecFault::BadLengthHeader(declared));
    }
    data.truncate(LENGTH_HEADER + declared as usize);
    data.drain(..LENGTH_HEADER);
    Ok(data)
}

/// Decodes a message. Never fails: malformed input yields an all-zero message
/// whose length is the header-declared length if fragment 0 carries a sane
/// header, and `k * payload_len - header` otherwise.
pub fn recover_message(frags: &[Fragment], params: &ProtocolParams) -> Vec<u8> {
    match try_recover(frags, params) {
        Ok(m) => m,
        Err(fault) => {
            log::debug!("recover_message falling back to sentinel: {fault}");
            vec![0; sentinel_len(frags, params)]
        }
    }
}

fn sentinel_len(frags: &[Fragment], params: &ProtocolParams) -> usize {
    let shard_len = frags.first().map_or(0, Fragment::len);
    let capacity = (shard_len * params.k()).saturating_sub(LENGTH_HEADER);
    let header = frags
        .iter()
        .find(|f| f.index == 0 && f.len() >= LENGTH_HEADER)
        .map(|f| u64::from_be_bytes(f.payload[..LENGTH_HEADER].try_into().expect("8 bytes")));
    match header {
        Some(len) if len as u128 <= capacity as u128 => len as usize,
        _ => capacity,
    }
}

/// Rebuilds all `n` fragments from any `k` of them.
pub fn reconstruct_all(frags: &[Fragment], params: &ProtocolParams) -> Result<Vec<Fragment>, CodecFault> {
    let (mut slots, _) = arrange(frags, params)?;
    coder(params)
        .reconstruct(&mut slots)
        .map_err(|e| CodecFault::Decoder(format!("{e:?}")))?;
    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| Fragment::new(i, s.expect("all shards reconstructed")))
        .collect())
}

/// The encode/recover pair the protocol state machines are written against.
pub trait ErasureCode: Debug + Send + Sync {
    fn get_fragments(&self, m: &[u8], params: &ProtocolParams) -> Result<Vec<Fragment>>;
    fn recover_message(&self, frags: &[Fragment], params: &ProtocolParams) -> Vec<u8>;
}

/// The production code: [`get_fragments`] and [`recover_message`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ReedSolomonCode;

impl ErasureCode for ReedSolomonCode {
    fn get_fragments(&self, m: &[u8], params: &ProtocolParams) -> Result<Vec<Fragment>> {
        get_fragments(m, params)
    }

    fn recover_message(&self, frags: &[Fragment], params: &ProtocolParams) -> Vec<u8> {
        recover_message(frags, params)
    }
}
