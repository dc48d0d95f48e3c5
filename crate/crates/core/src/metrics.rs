//! Honest-bit accounting and the overhead factor `L = C / (n * l)`.
//!
//! Only transported messages count; self-addressed copies never reach the
//! trace. For a faulty sender `l` is the largest message whose fragments are
//! as long as the largest fragment any honest node sent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::MessageKind;
use crate::params::LENGTH_HEADER;
use crate::simnet::{RunTrace, SCHEMA};
use crate::NodeId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitsByKind {
    pub fragment: u64,
    pub proposal: u64,
    pub signature: u64,
}

impl BitsByKind {
    pub fn total(&self) -> u64 {
        self.fragment + self.proposal + self.signature
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EllConvention {
    /// The honest sender's input length.
    Input,
    /// Derived from the largest fragment an honest node sent.
    LargestHonestFragment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema: u32,
    pub n: usize,
    pub t: usize,
    pub k: usize,
    /// The `l` in `L`, in bytes.
    pub ell_bytes: usize,
    pub ell_convention: EllConvention,
    pub honest_bits_total: u64,
    pub bits_by_kind: BitsByKind,
    /// Honest bits other than fragment payloads: headers, proofs, proposals, signatures.
    pub constant_bits: u64,
    pub overhead_factor: f64,
    pub rounds: Option<u64>,
    /// Indexed by node id; faulty nodes report their wrapped machine or 0.
    pub per_node_peak_fragment_bytes: Vec<usize>,
    pub max_honest_peak_fragment_bytes: usize,
    /// Honest-to-honest messages the recipient rejected.
    pub drops: usize,
    /// All rejected messages at honest recipients.
    pub rejected: usize,
    pub honest_messages: usize,
    pub transported: usize,
    pub honest_nodes: usize,
    pub delivered: usize,
    pub first_delivery: Option<u64>,
    pub last_delivery: Option<u64>,
    pub ideal_signature_size: bool,
}

/// Bytes charged for a share or signature under the idealized size model.
pub const IDEAL_SIGNATURE_BYTES: usize = 256 / 8;

pub fn account(trace: &RunTrace) -> Result<RunMetrics> {
    if !trace.complete {
        return Err(Error::IncompleteTrace(format!(
            "run stopped after {} messages (ceiling {})",
            trace.transported, trace.ceiling
        )));
    }
    let ideal = trace.config.flags.ideal_signature_size;
    let mut bits = BitsByKind::default();
    let mut payload_bits = 0u64;
    let mut largest_fragment = 0usize;
    let (mut drops, mut rejected, mut honest_messages) = (0, 0, 0);
    for m in trace.messages() {
        if m.to_honest && m.accepted == Some(false) {
            rejected += 1;
            if m.from_honest {
                drops += 1;
            }
        }
        if !m.from_honest {
            continue;
        }
        honest_messages += 1;
        let sig = match (m.sig, ideal) {
            (Some(_), true) => IDEAL_SIGNATURE_BYTES,
            _ => m.sig_bytes,
        };
        let body = (m.bytes - m.sig_bytes) as u64 * 8;
        bits.signature += sig as u64 * 8;
        match m.kind {
            MessageKind::Fragment | MessageKind::Echo => bits.fragment += body,
            _ => bits.proposal += body,
        }
        if let Some(f) = m.fragment_bytes {
            payload_bits += f as u64 * 8;
            largest_fragment = largest_fragment.max(f);
        }
    }
    let p = &trace.params;
    let (ell_bytes, ell_convention) = if trace.input_digest.is_some() || largest_fragment == 0 {
        (trace.config.msg_size.max(1), EllConvention::Input)
    } else {
        (
            (p.k() * largest_fragment).saturating_sub(LENGTH_HEADER).max(1),
            EllConvention::LargestHonestFragment,
        )
    };
    let total = bits.total();
    let honest: Vec<_> = trace.honest().collect();
    let times: Vec<u64> = honest
        .iter()
        .filter_map(|o| o.delivery.as_ref().map(|d| d.time))
        .collect();
    Ok(RunMetrics {
        schema: SCHEMA,
        n: p.n(),
        t: p.t(),
        k: p.k(),
        ell_bytes,
        ell_convention,
        honest_bits_total: total,
        bits_by_kind: bits,
        constant_bits: total - payload_bits,
        overhead_factor: total as f64 / (8.0 * p.n() as f64 * ell_bytes as f64),
        rounds: trace.rounds().ok(),
        per_node_peak_fragment_bytes: trace.nodes.iter().map(|o| o.peak_fragment_bytes).collect(),
        max_honest_peak_fragment_bytes: honest.iter().map(|o| o.peak_fragment_bytes).max().unwrap_or(0),
        drops,
        rejected,
        honest_messages,
        transported: trace.transported,
        honest_nodes: honest.len(),
        delivered: times.len(),
        first_delivery: times.iter().min().copied(),
        last_delivery: times.iter().max().copied(),
        ideal_signature_size: ideal,
    })
}

impl RunMetrics {
    /// `L` with the non-payload bits removed.
    pub fn payload_overhead(&self) -> f64 {
        let payload = self.honest_bits_total - self.constant_bits;
        payload as f64 / (8.0 * self.n as f64 * self.ell_bytes as f64)
    }

    /// Contribution of the non-payload bits to `L`.
    pub fn constant_overhead(&self) -> f64 {
        self.overhead_factor - self.payload_overhead()
    }

    pub fn peak_of(&self, node: NodeId) -> usize {
        self.per_node_peak_fragment_bytes[node]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{run, Adversary, Algorithm, EquivocationStrategy, RunConfig};

    #[test]
    fn decomposition_sums() {
        for alg in [Algorithm::Bit, Algorithm::Sig, Algorithm::Baseline] {
            let trace = run(&RunConfig::new(alg, 7, 5000)).unwrap();
            let m = account(&trace).unwrap();
            assert_eq!(m.honest_bits_total, m.bits_by_kind.total());
            assert_eq!(m.drops, 0);
            assert_eq!(m.delivered, 7);
            assert!((m.payload_overhead() + m.constant_overhead() - m.overhead_factor).abs() < 1e-12);
        }
    }

    #[test]
    fn self_sends_are_not_counted() {
        let trace = run(&RunConfig::new(Algorithm::Bit, 4, 330)).unwrap();
        assert!(trace.messages().all(|m| m.from != m.to));
    }

    #[test]
    fn ideal_signature_model_changes_only_signature_bits() {
        let mut cfg = RunConfig::new(Algorithm::Sig, 7, 1000);
        let actual = account(&run(&cfg).unwrap()).unwrap();
        cfg.flags.ideal_signature_size = true;
        let ideal = account(&run(&cfg).unwrap()).unwrap();
        assert_eq!(actual.bits_by_kind.fragment, ideal.bits_by_kind.fragment);
        assert_eq!(actual.bits_by_kind.proposal, ideal.bits_by_kind.proposal);
        assert_ne!(actual.bits_by_kind.signature, ideal.bits_by_kind.signature);
    }

    #[test]
    fn faulty_sender_uses_fragment_convention() {
        let cfg = RunConfig::new(Algorithm::Sig, 7, 4000).with_adversary(Adversary::Equivocate {
            strategy: EquivocationStrategy::TwoWay,
        });
        let m = account(&run(&cfg).unwrap()).unwrap();
        assert_eq!(m.ell_convention, EllConvention::LargestHonestFragment);
        // Fragments of 4008 bytes over k = 5 are 802 bytes long: 5 * 802 - 8.
        assert_eq!(m.ell_bytes, 4002);
    }

    #[test]
    fn fragment_share_grows_with_message_size() {
        let share = |size| {
            let m = account(&run(&RunConfig::new(Algorithm::Bit, 7, size)).unwrap()).unwrap();
            m.bits_by_kind.fragment as f64 / m.honest_bits_total as f64
        };
        let (a, b, c) = (share(10 << 10), share(100 << 10), share(1 << 20));
        assert!(a < b && b < c && c > 0.99, "{a} {b} {c}");
    }
}
