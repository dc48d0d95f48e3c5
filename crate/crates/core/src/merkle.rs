//! Merkle commitments over the `n` fragments of a message.
//!
//! Leaves are `H(0x00 || index_be32 || payload)` and inner nodes
//! `H(0x01 || left || right)`, both SHA-256. A node without a sibling at the
//! end of an odd-width layer is promoted to the next layer unchanged.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec::Fragment;
use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;

pub type Digest = [u8; DIGEST_LEN];

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

/// Root of a fragment Merkle tree; identifies a message.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct RootHash(pub Digest);

impl RootHash {
    pub fn as_bytes(&self) -> &Digest {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for RootHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RootHash({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for RootHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl From<RootHash> for String {
    fn from(h: RootHash) -> String {
        h.to_hex()
    }
}

impl TryFrom<String> for RootHash {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        let bytes = hex::decode(&s).map_err(|e| e.to_string())?;
        let digest: Digest = bytes.try_into().map_err(|_| format!("expected {DIGEST_LEN} bytes"))?;
        Ok(RootHash(digest))
    }
}

/// Sibling path from a leaf to the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: usize,
    /// Width of the leaf layer; fixes where odd nodes are promoted.
    pub leaf_count: usize,
    pub siblings: Vec<Digest>,
}

pub fn sha256(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn leaf_hash(index: usize, payload: &[u8]) -> Digest {
    sha256(&[&[LEAF_TAG], &(index as u32).to_be_bytes(), payload])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    sha256(&[&[NODE_TAG], left, right])
}

/// A fully materialized tree: `layers[0]` are the leaves, the last layer the root.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    layers: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new(frags: &[Fragment]) -> Result<Self> {
        let first = frags
            .first()
            .ok_or_else(|| Error::InvalidInput("no fragments to commit to".into()))?;
        if frags.iter().any(|f| f.len() != first.len()) {
            return Err(Error::InvalidInput("fragments have unequal lengths".into()));
        }
        if let Some((pos, f)) = frags.iter().enumerate().find(|(pos, f)| f.index != *pos) {
            return Err(Error::InvalidInput(format!(
                "fragment at position {pos} carries index {}",
                f.index
            )));
        }
        let mut layers = vec![frags.iter().map(|f| leaf_hash(f.index, &f.payload)).collect::<Vec<_>>()];
        while layers.last().expect("nonempty").len() > 1 {
            let next = layers
                .last()
                .expect("nonempty")
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => node_hash(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            layers.push(next);
        }
        Ok(MerkleTree { layers })
    }

    pub fn root(&self) -> RootHash {
        RootHash(self.layers.last().expect("nonempty")[0])
    }

    pub fn leaf_count(&self) -> usize {
        self.layers[0].len()
    }

    pub fn proof(&self, index: usize) -> Result<MerkleProof> {
        if index >= self.leaf_count() {
            return Err(Error::IndexOutOfRange {
                index,
                n: self.leaf_count(),
            });
        }
        let mut siblings = Vec::new();
        let mut pos = index;
        for layer in &self.layers[..self.layers.len() - 1] {
            let sib = pos ^ 1;
            if sib < layer.len() {
                siblings.push(layer[sib]);
            }
            pos /= 2;
        }
        Ok(MerkleProof {
            leaf_index: index,
            leaf_count: self.leaf_count(),
            siblings,
        })
    }
}

pub fn get_merkle_root(frags: &[Fragment]) -> Result<RootHash> {
    Ok(MerkleTree::new(frags)?.root())
}

pub fn get_merkle_proof(frags: &[Fragment], j: usize) -> Result<MerkleProof> {
    MerkleTree::new(frags)?.proof(j)
}

/// Checks that `f` is leaf `j` of the tree committed to by `h`.
pub fn valid_merkle_proof(h: &RootHash, f: &Fragment, j: usize, proof: &MerkleProof) -> bool {
    if f.index != j || proof.leaf_index != j || j >= proof.leaf_count {
        return false;
    }
    let mut acc = leaf_hash(j, &f.payload);
    let mut pos = j;
    let mut width = proof.leaf_count;
    let mut siblings = proof.siblings.iter();
    while width > 1 {
        let sib = pos ^ 1;
        if sib < width {
            let Some(s) = siblings.next() else {
                return false;
            };
            acc = if pos.is_multiple_of(2) {
                node_hash(&acc, s)
            } else {
                node_hash(s, &acc)
            };
        }
        pos /= 2;
        width = width.div_ceil(2);
    }
    siblings.next().is_none() && acc == h.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frags(n: usize, len: usize) -> Vec<Fragment> {
        (0..n)
            .map(|i| Fragment::new(i, (0..len).map(|b| (b * 31 + i * 7) as u8).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn single_leaf() {
        let f = frags(1, 5);
        assert_eq!(get_merkle_root(&f).unwrap().0, leaf_hash(0, &f[0].payload));
        let p = get_merkle_proof(&f, 0).unwrap();
        assert!(p.siblings.is_empty());
        assert!(valid_merkle_proof(&get_merkle_root(&f).unwrap(), &f[0], 0, &p));
    }

    #[test]
    fn four_leaf_oracle() {
        let f = frags(4, 9);
        // Hand-built from the raw hash definition rather than `leaf_hash`/`node_hash`.
        let leaf = |i: usize| {
            let mut buf = vec![0u8];
            buf.extend_from_slice(&(i as u32).to_be_bytes());
            buf.extend_from_slice(&f[i].payload);
            <[u8; 32]>::from(Sha256::digest(&buf))
        };
        let node = |l: [u8; 32], r: [u8; 32]| {
            let mut buf = vec![1u8];
            buf.extend_from_slice(&l);
            buf.extend_from_slice(&r);
            <[u8; 32]>::from(Sha256::digest(&buf))
        };
        let root = node(node(leaf(0), leaf(1)), node(leaf(2), leaf(3)));
        assert_eq!(get_merkle_root(&f).unwrap().0, root);
        let p = get_merkle_proof(&f, 2).unwrap();
        assert_eq!(p.siblings, vec![leaf(3), node(leaf(0), leaf(1))]);
    }

    #[test]
    fn odd_width_promotes() {
        let f = frags(3, 4);
        let l: Vec<_> = f.iter().map(|x| leaf_hash(x.index, &x.payload)).collect();
        assert_eq!(
            get_merkle_root(&f).unwrap().0,
            node_hash(&node_hash(&l[0], &l[1]), &l[2])
        );
        assert_eq!(get_merkle_proof(&f, 2).unwrap().siblings, vec![node_hash(&l[0], &l[1])]);
    }

    #[test]
    fn completeness_for_many_sizes() {
        for n in 1..=33 {
            let f = frags(n, 3);
            let tree = MerkleTree::new(&f).unwrap();
            for (j, fj) in f.iter().enumerate() {
                let p = tree.proof(j).unwrap();
                assert!(p.siblings.len() <= (n as f64).log2().ceil() as usize);
                assert!(valid_merkle_proof(&tree.root(), fj, j, &p), "n={n} j={j}");
            }
            assert!(tree.proof(n).is_err());
        }
    }

    #[test]
    fn index_is_bound() {
        let f = frags(4, 8);
        let tree = MerkleTree::new(&f).unwrap();
        let p = tree.proof(1).unwrap();
        let mut moved = f[1].clone();
        moved.index = 2;
        let mut p2 = p.clone();
        p2.leaf_index = 2;
        assert!(!valid_merkle_proof(&tree.root(), &moved, 2, &p2));
        assert!(!valid_merkle_proof(&tree.root(), &f[1], 2, &p));
    }

    #[test]
    fn rejects_bad_input() {
        let mut f = frags(4, 8);
        assert!(get_merkle_root(&[]).is_err());
        f[2].payload = bytes::Bytes::from_static(b"short");
        assert!(get_merkle_root(&f).is_err());
        let f = frags(4, 8);
        assert!(matches!(get_merkle_proof(&f, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn root_hex_roundtrip() {
        let r = get_merkle_root(&frags(5, 2)).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RootHash>(&s).unwrap(), r);
    }
}
