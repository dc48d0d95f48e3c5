//! `(2t+1)`-of-`n` threshold signatures behind a pluggable interface.
//!
//! [`SimThreshold`] is simulation-grade only: shares and signatures are keyed
//! digests under secrets held by the harness. It gives the protocol the
//! unforgeability it relies on as long as nobody outside the harness sees the
//! secrets, which is all the simulator needs. A pairing-based scheme can
//! implement [`ThresholdScheme`] and [`ShareSigner`] without protocol changes.

use std::collections::BTreeSet;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merkle::{sha256, Digest, RootHash};
use crate::NodeId;

/// What a share or signature certifies: one root hash within one broadcast instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subject {
    pub instance: u64,
    pub root: RootHash,
}

impl Subject {
    pub fn new(instance: u64, root: RootHash) -> Self {
        Subject { instance, root }
    }

    fn bytes(&self) -> [u8; 40] {
        let mut out = [0u8; 40];
        out[..8].copy_from_slice(&self.instance.to_be_bytes());
        out[8..].copy_from_slice(self.root.as_bytes());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignatureShare {
    pub signer: NodeId,
    pub subject: Subject,
    pub blob: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdSignature {
    pub subject: Subject,
    /// Contributing signers, ascending. Carried by the simulated scheme only.
    pub signers: Vec<NodeId>,
    pub blob: Vec<u8>,
}

/// Per-node signing capability.
pub trait ShareSigner: Debug + Send + Sync {
    fn node(&self) -> NodeId;
    fn threshold_sign(&self, subject: &Subject) -> SignatureShare;
}

/// Public verification and combination.
pub trait ThresholdScheme: Debug + Send + Sync {
    fn threshold(&self) -> usize;
    fn valid_share(&self, subject: &Subject, signer: NodeId, share: &SignatureShare) -> bool;
    fn compute_signature(&self, shares: &[SignatureShare]) -> Result<ThresholdSignature>;
    fn valid_signature(&self, subject: &Subject, sig: &ThresholdSignature) -> bool;
}

const SHARE_TAG: &[u8] = b"rbcast/share";
const SIG_TAG: &[u8] = b"rbcast/signature";

#[derive(Debug)]
struct Keys {
    n: usize,
    threshold: usize,
    master: Digest,
    node_keys: Vec<Digest>,
}

impl Keys {
    fn share_blob(&self, signer: NodeId, subject: &Subject) -> Digest {
        sha256(&[
            SHARE_TAG,
            &self.node_keys[signer],
            &(signer as u32).to_be_bytes(),
            &subject.bytes(),
        ])
    }

    fn signature_blob(&self, subject: &Subject, signers: &[NodeId]) -> Digest {
        let ids: Vec<u8> = signers.iter().flat_map(|s| (*s as u32).to_be_bytes()).collect();
        sha256(&[SIG_TAG, &self.master, &subject.bytes(), &ids])
    }
}

/// Keyed-digest threshold scheme for simulations.
#[derive(Clone, Debug)]
pub struct SimThreshold {
    keys: Arc<Keys>,
}

/// Signing key for one node of a [`SimThreshold`] setup.
#[derive(Clone, Debug)]
pub struct SimKeyShare {
    node: NodeId,
    keys: Arc<Keys>,
}

impl SimThreshold {
    /// Derives all keying material from `seed`.
    pub fn setup(n: usize, threshold: usize, seed: u64) -> Result<Self> {
        if threshold == 0 || threshold > n {
            return Err(Error::InvalidParams(format!("threshold {threshold} outside 1..={n}")));
        }
        let master = sha256(&[b"rbcast/master", &seed.to_be_bytes()]);
        let node_keys = (0..n)
            .map(|i| sha256(&[b"rbcast/node-key", &master, &(i as u32).to_be_bytes()]))
            .collect();
        Ok(SimThreshold {
            keys: Arc::new(Keys {
                n,
                threshold,
                master,
                node_keys,
            }),
        })
    }

    pub fn key_share(&self, node: NodeId) -> Result<SimKeyShare> {
        if node >= self.keys.n {
            return Err(Error::UnknownNode(node));
        }
        Ok(SimKeyShare {
            node,
            keys: self.keys.clone(),
        })
    }
}

impl ShareSigner for SimKeyShare {
    fn node(&self) -> NodeId {
        self.node
    }

    fn threshold_sign(&self, subject: &Subject) -> SignatureShare {
        SignatureShare {
            signer: self.node,
            subject: *subject,
            blob: self.keys.share_blob(self.node, subject).to_vec(),
        }
    }
}

impl ThresholdScheme for SimThreshold {
    fn threshold(&self) -> usize {
        self.keys.threshold
    }

    fn valid_share(&self, subject: &Subject, signer: NodeId, share: &SignatureShare) -> bool {
        signer < self.keys.n
            && share.signer == signer
            && share.subject == *subject
            && share.blob[..] == self.keys.share_blob(signer, subject)[..]
    }

    fn compute_signature(&self, shares: &[SignatureShare]) -> Result<ThresholdSignature> {
        let first = shares
            .first()
            .ok_or_else(|| Error::ThresholdNotMet("no shares".into()))?;
        let subject = first.subject;
        let mut signers = BTreeSet::new();
        for s in shares {
            if s.subject != subject {
                return Err(Error::ThresholdNotMet("shares for mixed subjects".into()));
            }
            if !self.valid_share(&subject, s.signer, s) {
                return Err(Error::ThresholdNotMet(format!("invalid share from {}", s.signer)));
            }
            signers.insert(s.signer);
        }
        if signers.len() < self.keys.threshold {
            return Err(Error::ThresholdNotMet(format!(
                "{} distinct signers, {} required",
                signers.len(),
                self.keys.threshold
            )));
        }
        let signers: Vec<NodeId> = signers.into_iter().take(self.keys.threshold).collect();
        Ok(ThresholdSignature {
            subject,
            blob: self.keys.signature_blob(&subject, &signers).to_vec(),
            signers,
        })
    }

    fn valid_signature(&self, subject: &Subject, sig: &ThresholdSignature) -> bool {
        sig.subject == *subject
            && sig.signers.len() >= self.keys.threshold
            && sig.signers.windows(2).all(|w| w[0] < w[1])
            && sig.signers.iter().all(|&s| s < self.keys.n)
            && sig.blob[..] == self.keys.signature_blob(subject, &sig.signers)[..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subject(b: u8) -> Subject {
        Subject::new(1, RootHash([b; 32]))
    }

    fn setup() -> (SimThreshold, Vec<SimKeyShare>) {
        let s = SimThreshold::setup(7, 5, 99).unwrap();
        let keys = (0..7).map(|i| s.key_share(i).unwrap()).collect();
        (s, keys)
    }

    #[test]
    fn shares_are_deterministic_and_bound() {
        let (s, keys) = setup();
        let a = keys[3].threshold_sign(&subject(1));
        assert_eq!(a, keys[3].threshold_sign(&subject(1)));
        assert!(s.valid_share(&subject(1), 3, &a));
        assert!(!s.valid_share(&subject(2), 3, &a));
        assert!(!s.valid_share(&Subject::new(2, subject(1).root), 3, &a));
        let mut moved = a.clone();
        moved.signer = 4;
        assert!(!s.valid_share(&subject(1), 4, &moved));
        assert!(!s.valid_share(&subject(1), 4, &a));
        assert!(matches!(s.key_share(7), Err(Error::UnknownNode(7))));
    }

    #[test]
    fn random_blobs_never_verify() {
        let (s, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let signer = rng.gen_range(0..7);
            let blob: [u8; 32] = rng.gen();
            let share = SignatureShare {
                signer,
                subject: subject(1),
                blob: blob.to_vec(),
            };
            assert!(!s.valid_share(&subject(1), signer, &share));
            let sig = ThresholdSignature {
                subject: subject(1),
                signers: vec![0, 1, 2, 3, 4],
                blob: blob.to_vec(),
            };
            assert!(!s.valid_signature(&subject(1), &sig));
        }
    }

    #[test]
    fn threshold_boundary() {
        let (s, keys) = setup();
        let shares: Vec<_> = keys.iter().map(|k| k.threshold_sign(&subject(1))).collect();
        let sig = s.compute_signature(&shares[..5]).unwrap();
        assert!(s.valid_signature(&subject(1), &sig));
        assert!(!s.valid_signature(&subject(2), &sig));
        let mut forged = sig.clone();
        forged.blob[0] ^= 1;
        assert!(!s.valid_signature(&subject(1), &forged));
        assert!(matches!(
            s.compute_signature(&shares[..4]),
            Err(Error::ThresholdNotMet(_))
        ));
        let dup = vec![shares[0].clone(); 5];
        assert!(s.compute_signature(&dup).is_err());
        let mut mixed = shares[..5].to_vec();
        mixed[4] = keys[4].threshold_sign(&subject(2));
        assert!(s.compute_signature(&mixed).is_err());
        let mut bad = shares[..5].to_vec();
        bad[2].blob[5] ^= 0x80;
        assert!(s.compute_signature(&bad).is_err());
    }

    #[test]
    fn every_quorum_subset_verifies() {
        let (s, keys) = setup();
        let shares: Vec<_> = keys.iter().map(|k| k.threshold_sign(&subject(9))).collect();
        for mask in 0u32..(1 << 7) {
            if mask.count_ones() != 5 {
                continue;
            }
            let subset: Vec<_> = (0..7)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| shares[i].clone())
                .collect();
            let sig = s.compute_signature(&subset).unwrap();
            assert!(s.valid_signature(&subject(9), &sig));
        }
    }
}
