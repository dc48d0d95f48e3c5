//! Plumbing shared by the broadcast state machines.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::codec::{ErasureCode, Fragment, ReedSolomonCode};
use crate::error::Result;
use crate::merkle::{valid_merkle_proof, MerkleProof, MerkleTree, RootHash};
use crate::message::{FragmentMessage, Message};
use crate::params::ProtocolParams;
use crate::{NodeId, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Node(NodeId),
    /// Every node except the emitter.
    All,
}

/// Messages a state machine asks the transport to deliver, in emission order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outbox {
    items: Vec<(Target, Message)>,
}

impl Outbox {
    pub fn push(&mut self, target: Target, msg: Message) {
        self.items.push((target, msg));
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Target, Message)> {
        self.items.iter()
    }

    pub fn append(&mut self, other: Outbox) {
        self.items.extend(other.items);
    }
}

impl IntoIterator for Outbox {
    type Item = (Target, Message);
    type IntoIter = std::vec::IntoIter<(Target, Message)>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.into_iter()
    }
}

/// Result of feeding one message to a state machine.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Handled {
    /// Whether the message passed the acceptance rules.
    pub accepted: bool,
    pub outbox: Outbox,
}

/// Per-node settings fixed at construction.
#[derive(Clone)]
pub struct NodeConfig {
    pub params: ProtocolParams,
    pub id: NodeId,
    pub sender: NodeId,
    pub instance: u64,
    /// Reject fragments for a second root hash from the same peer.
    pub strict_single_hash_fragments: bool,
    /// Minimum time between the first accepted fragment and delivery.
    pub delivery_gate: Option<Time>,
    /// A_sig only: attach shares/signatures to fragment messages.
    pub piggyback_signatures: bool,
    pub codec: Arc<dyn ErasureCode>,
}

impl NodeConfig {
    pub fn new(params: ProtocolParams, id: NodeId, sender: NodeId) -> Self {
        NodeConfig {
            params,
            id,
            sender,
            instance: 0,
            strict_single_hash_fragments: false,
            delivery_gate: None,
            piggyback_signatures: false,
            codec: Arc::new(ReedSolomonCode),
        }
    }
}

impl fmt::Debug for NodeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeConfig")
            .field("params", &self.params)
            .field("id", &self.id)
            .field("sender", &self.sender)
            .field("instance", &self.instance)
            .field("strict", &self.strict_single_hash_fragments)
            .field("delivery_gate", &self.delivery_gate)
            .field("piggyback", &self.piggyback_signatures)
            .finish()
    }
}

/// Flat view of a node's bookkeeping, for traces and tests.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    /// `|F(h)|` per root hash.
    pub fragments: BTreeMap<RootHash, usize>,
    /// `|R(h)|` per root hash.
    pub fragment_senders: BTreeMap<RootHash, usize>,
    /// `|H(v)|` per peer.
    pub peer_hashes: Vec<usize>,
    /// `|P(h)|` (A_bit), `|S(h)|` (A_sig), ready count (baseline).
    pub support: BTreeMap<RootHash, usize>,
    pub proposed: Vec<RootHash>,
    pub fragment_broadcasts: Vec<RootHash>,
    pub committed_root: Option<RootHash>,
    pub done: bool,
    pub delivered_digest: Option<String>,
    pub stored_fragment_bytes: usize,
    pub peak_fragment_bytes: usize,
}

/// A broadcast participant driven by message arrivals and timer expiries.
pub trait Protocol: Send {
    fn id(&self) -> NodeId;
    /// Sender only: disseminate `m`.
    fn start_broadcast(&mut self, m: &[u8], now: Time) -> Result<Outbox>;
    fn handle_message(&mut self, from: NodeId, msg: Message, now: Time) -> Handled;
    fn on_timer(&mut self, now: Time) -> Outbox;
    /// When the node next needs [`Protocol::on_timer`], if ever.
    fn next_timer(&self) -> Option<Time>;
    /// The delivered message. Stable once set.
    fn delivered(&self) -> Option<&Bytes>;
    fn is_done(&self) -> bool;
    /// Root hashes for which this node broadcast its own fragment, in order.
    fn fragment_broadcasts(&self) -> Vec<RootHash>;
    /// A_sig's `h*`.
    fn committed_root(&self) -> Option<RootHash> {
        None
    }
    fn peak_fragment_bytes(&self) -> usize;
    fn snapshot(&self) -> NodeSnapshot;
    /// Feeds the protocol-relevant state into `h`; used to deduplicate explored states.
    fn fingerprint(&self, h: &mut dyn Hasher);
    fn clone_box(&self) -> Box<dyn Protocol>;
}

impl Clone for Box<dyn Protocol> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Collects outgoing messages, looping self-addressed ones back locally.
#[derive(Clone, Debug, Default)]
pub(crate) struct Mailer {
    id: NodeId,
    outbox: Outbox,
    loopback: VecDeque<Message>,
}

impl Mailer {
    pub fn new(id: NodeId) -> Self {
        Mailer {
            id,
            ..Default::default()
        }
    }

    pub fn broadcast(&mut self, msg: Message) {
        self.loopback.push_back(msg.clone());
        self.outbox.push(Target::All, msg);
    }

    pub fn send(&mut self, to: NodeId, msg: Message) {
        if to == self.id {
            self.loopback.push_back(msg);
        } else {
            self.outbox.push(Target::Node(to), msg);
        }
    }

    pub fn next_loopback(&mut self) -> Option<Message> {
        self.loopback.pop_front()
    }

    pub fn take(&mut self) -> Outbox {
        std::mem::take(&mut self.outbox)
    }
}

/// The `F`, `R` and `H` maps together with the fragment acceptance rule.
#[derive(Clone, Debug)]
pub(crate) struct FragmentLedger {
    id: NodeId,
    n: usize,
    instance: u64,
    strict: bool,
    /// F: root -> leaf index -> (fragment, proof)
    frags: BTreeMap<RootHash, BTreeMap<NodeId, (Fragment, MerkleProof)>>,
    /// R: root -> peers that delivered an accepted fragment
    senders: BTreeMap<RootHash, BTreeSet<NodeId>>,
    /// H: peer -> roots it sent proposals or fragments for
    seen: Vec<BTreeSet<RootHash>>,
    /// strict mode: the single root each peer may send fragments for
    fragment_root: Vec<Option<RootHash>>,
    stored: usize,
    peak: usize,
}

impl FragmentLedger {
    pub fn new(cfg: &NodeConfig) -> Self {
        let n = cfg.params.n();
        FragmentLedger {
            id: cfg.id,
            n,
            instance: cfg.instance,
            strict: cfg.strict_single_hash_fragments,
            frags: BTreeMap::new(),
            senders: BTreeMap::new(),
            seen: vec![BTreeSet::new(); n],
            fragment_root: vec![None; n],
            stored: 0,
            peak: 0,
        }
    }

    /// The `|H(v)| < 2 or h in H(v)` rule.
    pub fn admits(&self, from: NodeId, h: &RootHash) -> bool {
        from < self.n && (self.seen[from].len() < 2 || self.seen[from].contains(h))
    }

    pub fn note(&mut self, from: NodeId, h: RootHash) {
        self.seen[from].insert(h);
    }

    /// Applies the fragment acceptance rule and stores the fragment on success.
    pub fn accept(&mut self, from: NodeId, m: &FragmentMessage) -> bool {
        let j = m.leaf_index();
        if m.instance != self.instance || from >= self.n || (j != self.id && j != from) {
            return false;
        }
        if !self.admits(from, &m.root) {
            return false;
        }
        if self.strict && self.fragment_root[from].is_some_and(|r| r != m.root) {
            return false;
        }
        if m.proof.leaf_count != self.n || !valid_merkle_proof(&m.root, &m.fragment, j, &m.proof) {
            return false;
        }
        self.seen[from].insert(m.root);
        self.senders.entry(m.root).or_default().insert(from);
        self.fragment_root[from].get_or_insert(m.root);
        let slot = self.frags.entry(m.root).or_default();
        let added = m.fragment.len();
        if let Some((old, _)) = slot.insert(j, (m.fragment.clone(), m.proof.clone())) {
            self.stored -= old.len();
        }
        self.stored += added;
        self.peak = self.peak.max(self.stored);
        true
    }

    /// `|F(h)|`.
    pub fn count(&self, h: &RootHash) -> usize {
        self.frags.get(h).map_or(0, BTreeMap::len)
    }

    /// `|R(h)|`.
    pub fn sender_count(&self, h: &RootHash) -> usize {
        self.senders.get(h).map_or(0, BTreeSet::len)
    }

    pub fn own(&self, h: &RootHash) -> Option<&(Fragment, MerkleProof)> {
        self.frags.get(h)?.get(&self.id)
    }

    pub fn fragments(&self, h: &RootHash) -> Vec<Fragment> {
        self.frags
            .get(h)
            .map(|m| m.values().map(|(f, _)| f.clone()).collect())
            .unwrap_or_default()
    }

    /// `V \ R(h)`.
    pub fn missing_senders(&self, h: &RootHash) -> Vec<NodeId> {
        let have = self.senders.get(h);
        (0..self.n).filter(|j| !have.is_some_and(|s| s.contains(j))).collect()
    }

    /// Every root any peer has sent something for.
    pub fn hashes(&self) -> BTreeSet<RootHash> {
        self.seen.iter().flatten().copied().collect()
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak
    }

    pub fn fill_snapshot(&self, snap: &mut NodeSnapshot) {
        snap.fragments = self.frags.iter().map(|(h, m)| (*h, m.len())).collect();
        snap.fragment_senders = self.senders.iter().map(|(h, s)| (*h, s.len())).collect();
        snap.peer_hashes = self.seen.iter().map(BTreeSet::len).collect();
        snap.stored_fragment_bytes = self.stored;
        snap.peak_fragment_bytes = self.peak;
    }

    pub fn fingerprint(&self, mut h: &mut dyn Hasher) {
        for (root, m) in &self.frags {
            root.hash(&mut h);
            for j in m.keys() {
                j.hash(&mut h);
            }
        }
        self.senders.hash(&mut h);
        self.seen.hash(&mut h);
    }
}

/// A successfully re-verified message and its codeword.
pub(crate) struct Recovered {
    pub message: Bytes,
    pub fragments: Vec<Fragment>,
    pub tree: MerkleTree,
}

/// Recovers from `F(h)`, re-encodes and checks the recomputed root against `h`.
pub(crate) fn recover_and_verify(cfg: &NodeConfig, frags: &[Fragment], h: &RootHash) -> Option<Recovered> {
    let m = cfg.codec.recover_message(frags, &cfg.params);
    let fragments = match cfg.codec.get_fragments(&m, &cfg.params) {
        Ok(f) => f,
        Err(e) => {
            log::debug!("node {}: re-encoding recovered message failed: {e}", cfg.id);
            return None;
        }
    };
    let tree = MerkleTree::new(&fragments).ok()?;
    if tree.root() != *h {
        log::debug!("node {}: recovered root mismatch for {h:?}", cfg.id);
        return None;
    }
    Some(Recovered {
        message: Bytes::from(m),
        fragments,
        tree,
    })
}

/// Orders candidate roots by descending support, ties broken by the smaller digest.
pub(crate) fn by_support(
    candidates: impl IntoIterator<Item = RootHash>,
    support: impl Fn(&RootHash) -> usize,
) -> Vec<RootHash> {
    let mut v: Vec<RootHash> = candidates.into_iter().collect();
    v.sort_by(|a, b| support(b).cmp(&support(a)).then(a.cmp(b)));
    v
}

pub(crate) fn digest_hex(m: &[u8]) -> String {
    hex::encode(crate::merkle::sha256(&[m]))
}

#[cfg(test)]
pub(crate) mod testkit {
    use std::collections::VecDeque;

    use super::*;

    /// FIFO transport over honest machines; returns the number of transported messages.
    pub fn pump(nodes: &mut [Box<dyn Protocol>], from: NodeId, outbox: Outbox) -> usize {
        let n = nodes.len();
        let mut queue: VecDeque<(NodeId, NodeId, Message)> = VecDeque::new();
        let enqueue = |q: &mut VecDeque<_>, from: NodeId, out: Outbox| {
            for (target, msg) in out {
                match target {
                    Target::Node(to) => q.push_back((from, to, msg)),
                    Target::All => {
                        for to in (0..n).filter(|&to| to != from) {
                            q.push_back((from, to, msg.clone()));
                        }
                    }
                }
            }
        };
        enqueue(&mut queue, from, outbox);
        let mut count = 0;
        while let Some((from, to, msg)) = queue.pop_front() {
            count += 1;
            let handled = nodes[to].handle_message(from, msg, 0);
            assert!(handled.accepted, "honest message {from}->{to} rejected");
            enqueue(&mut queue, to, handled.outbox);
        }
        count
    }
}
