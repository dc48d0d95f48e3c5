use std::time::Instant;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{get_fragments, reconstruct_all};
use crate::error::{Error, Result};
use crate::params::ProtocolParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecOp {
    Encode,
    /// Rebuild the full codeword from a random `k`-subset.
    Decode,
}

impl CodecOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            CodecOp::Encode => "encode",
            CodecOp::Decode => "decode",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub op: CodecOp,
    pub mean_us: f64,
    pub p5_us: f64,
    pub p95_us: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub input_size: usize,
    pub repetitions: usize,
    pub input_digest: String,
    /// Rows for `params_a` (encode, decode) followed by `params_b`.
    pub rows: Vec<BenchRow>,
    /// Mean time under `params_a` divided by mean time under `params_b`.
    pub encode_speedup: f64,
    pub decode_speedup: f64,
}

impl BenchReport {
    pub fn row(&self, k: usize, op: CodecOp) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.k == k && r.op == op)
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    // nearest rank
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn summarize(params: &ProtocolParams, op: CodecOp, mut samples: Vec<f64>) -> BenchRow {
    samples.sort_by(f64::total_cmp);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    BenchRow {
        n: params.n(),
        k: params.k(),
        op,
        mean_us: mean,
        p5_us: percentile(&samples, 5.0),
        p95_us: percentile(&samples, 95.0),
    }
}

#[derive(Default)]
struct Samples {
    enc: Vec<f64>,
    dec: Vec<f64>,
}

impl Samples {
    fn take(&mut self, params: &ProtocolParams, input: &[u8], rng: &mut ChaCha8Rng) -> Result<()> {
        let start = Instant::now();
        let frags = get_fragments(input, params)?;
        self.enc.push(start.elapsed().as_secs_f64() * 1e6);

        let subset: Vec<_> = sample(rng, params.n(), params.k())
            .into_iter()
            .map(|i| frags[i].clone())
            .collect();
        let start = Instant::now();
        let rebuilt = reconstruct_all(&subset, params).map_err(Error::Codec)?;
        self.dec.push(start.elapsed().as_secs_f64() * 1e6);
        debug_assert_eq!(rebuilt, frags);
        Ok(())
    }

    fn rows(self, params: &ProtocolParams) -> [BenchRow; 2] {
        [
            summarize(params, CodecOp::Encode, self.enc),
            summarize(params, CodecOp::Decode, self.dec),
        ]
    }
}

/// Times encoding and full-codeword decoding of one seeded random input under
/// two parameterizations. Repetitions alternate between the two so that
/// background load hits both alike.
pub fn bench_codec(
    params_a: &ProtocolParams,
    params_b: &ProtocolParams,
    input_size: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = vec![0u8; input_size];
    rng.fill_bytes(&mut input);
    let a = params_a.with_ell_max(input_size.max(params_a.ell_max()))?;
    let b = params_b.with_ell_max(input_size.max(params_b.ell_max()))?;

    let (mut sa, mut sb) = (Samples::default(), Samples::default());
    for _ in 0..repetitions {
        sa.take(&a, &input, &mut rng)?;
        sb.take(&b, &input, &mut rng)?;
    }
    let [ea, da] = sa.rows(&a);
    let [eb, db] = sb.rows(&b);
    Ok(BenchReport {
        input_size,
        repetitions,
        input_digest: hex::encode(Sha256::digest(&input)),
        encode_speedup: ea.mean_us / eb.mean_us,
        decode_speedup: da.mean_us / db.mean_us,
        rows: vec![ea, da, eb, db],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_repetition_collapses_percentiles() {
        let p = ProtocolParams::new(2, 4096).unwrap();
        let r = bench_codec(&p.to_baseline(), &p, 4096, 1, 7).unwrap();
        assert_eq!(r.rows.len(), 4);
        for row in &r.rows {
            assert_eq!(row.p5_us, row.mean_us);
            assert_eq!(row.p95_us, row.mean_us);
        }
    }

    #[test]
    fn structure_is_reproducible() {
        let p = ProtocolParams::new(1, 1024).unwrap();
        let a = bench_codec(&p, &p, 1024, 3, 11).unwrap();
        let b = bench_codec(&p, &p, 1024, 3, 11).unwrap();
        assert_eq!(a.input_digest, b.input_digest);
        let shape = |r: &BenchReport| r.rows.iter().map(|x| (x.n, x.k, x.op)).collect::<Vec<_>>();
        assert_eq!(shape(&a), shape(&b));
        assert!(bench_codec(&p, &p, 1024, 0, 11).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 5.0), 5.0);
        assert_eq!(percentile(&s, 95.0), 95.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }
}
