//! A_bit: reliable broadcast from collision-resistant hashes alone.
//!
//! Every node keeps the fragment ledger (`F`, `R`, `H`) and the proposal sets
//! `P`. State-based rules run to a fixpoint after each input:
//!
//! * (a) `|P(h)| >= 2t+1` and the own fragment for `h` is held: broadcast it (once).
//! * (b) fragments for `h` arrived from `t+1` distinct peers: propose `h`.
//! * (c) `|P(h)| >= 2t+1` and `|F(h)| >= 2t+1`: recover, re-check the root,
//!   top up the peers missing from `R(h)` and deliver.
//!
//! Rules are tried for every known root in order of descending proposal count.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use bytes::Bytes;

use crate::error::{Error, Result};
use crate::merkle::{MerkleTree, RootHash};
use crate::message::{FragmentMessage, Message, ProposalMessage};
use crate::protocol::{
    by_support, digest_hex, recover_and_verify, FragmentLedger, Handled, Mailer, NodeConfig, NodeSnapshot, Outbox,
    Protocol,
};
use crate::{NodeId, Time};

#[derive(Clone, Debug)]
pub struct BitNode {
    cfg: NodeConfig,
    ledger: FragmentLedger,
    proposals: BTreeMap<RootHash, BTreeSet<NodeId>>,
    proposed: BTreeSet<RootHash>,
    frag_broadcast: Option<RootHash>,
    seen_sender_fragment: bool,
    started: bool,
    first_fragment_at: Option<Time>,
    done: bool,
    delivered: Option<Bytes>,
    mail: Mailer,
}

impl BitNode {
    pub fn new(cfg: NodeConfig) -> Self {
        BitNode {
            ledger: FragmentLedger::new(&cfg),
            mail: Mailer::new(cfg.id),
            cfg,
            proposals: BTreeMap::new(),
            proposed: BTreeSet::new(),
            frag_broadcast: None,
            seen_sender_fragment: false,
            started: false,
            first_fragment_at: None,
            done: false,
            delivered: None,
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    /// `|P(h)|`.
    pub fn proposal_count(&self, h: &RootHash) -> usize {
        self.proposals.get(h).map_or(0, BTreeSet::len)
    }

    pub fn has_proposed(&self, h: &RootHash) -> bool {
        self.proposed.contains(h)
    }

    fn apply(&mut self, from: NodeId, msg: Message, now: Time) -> bool {
        match msg {
            Message::Fragment(m) => self.on_fragment(from, m, now),
            Message::Proposal(p) => self.on_proposal(from, p),
            _ => false,
        }
    }

    fn on_fragment(&mut self, from: NodeId, m: FragmentMessage, now: Time) -> bool {
        if !self.ledger.accept(from, &m) {
            return false;
        }
        self.first_fragment_at.get_or_insert(now);
        if from == self.cfg.sender && m.leaf_index() == self.cfg.id && !self.seen_sender_fragment {
            self.seen_sender_fragment = true;
            self.propose(m.root);
        }
        true
    }

    fn on_proposal(&mut self, from: NodeId, p: ProposalMessage) -> bool {
        if p.instance != self.cfg.instance || !self.ledger.admits(from, &p.root) {
            return false;
        }
        self.ledger.note(from, p.root);
        self.proposals.entry(p.root).or_default().insert(from);
        true
    }

    fn propose(&mut self, h: RootHash) {
        if self.proposed.insert(h) {
            self.mail.broadcast(Message::Proposal(ProposalMessage {
                instance: self.cfg.instance,
                root: h,
            }));
        }
    }

    fn gate_open(&self, now: Time) -> bool {
        match self.cfg.delivery_gate {
            None => true,
            Some(delta) => self.first_fragment_at.is_some_and(|t0| now >= t0 + delta),
        }
    }

    /// Fires at most one rule; returns whether one fired.
    fn evaluate(&mut self, now: Time) -> bool {
        let q = self.cfg.params.quorum();
        let t = self.cfg.params.t();
        let order = by_support(self.ledger.hashes(), |h| self.proposal_count(h));

        if self.frag_broadcast.is_none() {
            for h in &order {
                if self.proposal_count(h) < q {
                    break;
                }
                if let Some((f, proof)) = self.ledger.own(h).cloned() {
                    self.frag_broadcast = Some(*h);
                    self.mail.broadcast(Message::Fragment(FragmentMessage {
                        instance: self.cfg.instance,
                        root: *h,
                        fragment: f,
                        proof,
                        sig: None,
                    }));
                    return true;
                }
            }
        }

        for h in &order {
            if !self.proposed.contains(h) && self.ledger.sender_count(h) > t {
                self.propose(*h);
                return true;
            }
        }

        if !self.done && self.gate_open(now) {
            for h in &order {
                if self.proposal_count(h) < q {
                    break;
                }
                if self.ledger.count(h) >= q {
                    self.deliver_block(*h);
                    return true;
                }
            }
        }
        false
    }

    fn deliver_block(&mut self, h: RootHash) {
        self.done = true;
        let Some(rec) = recover_and_verify(&self.cfg, &self.ledger.fragments(&h), &h) else {
            return;
        };
        send_top_ups(
            &mut self.mail,
            &self.ledger,
            &rec.tree,
            &rec.fragments,
            self.cfg.instance,
            &h,
            None,
        );
        log::debug!("node {} delivers {} bytes for {h:?}", self.cfg.id, rec.message.len());
        self.delivered = Some(rec.message);
    }

    fn settle(&mut self, now: Time) {
        loop {
            while let Some(m) = self.mail.next_loopback() {
                self.apply(self.cfg.id, m, now);
            }
            if !self.evaluate(now) {
                break;
            }
        }
    }
}

/// Sends `f_j` to every `v_j` not in `R(h)`.
pub(crate) fn send_top_ups(
    mail: &mut Mailer,
    ledger: &FragmentLedger,
    tree: &MerkleTree,
    fragments: &[crate::codec::Fragment],
    instance: u64,
    h: &RootHash,
    sig: Option<&crate::message::ProposalSig>,
) {
    for j in ledger.missing_senders(h) {
        let proof = tree.proof(j).expect("index below leaf count");
        mail.send(
            j,
            Message::Fragment(FragmentMessage {
                instance,
                root: *h,
                fragment: fragments[j].clone(),
                proof,
                sig: sig.cloned(),
            }),
        );
    }
}

/// Encodes `m` and addresses fragment `j` to node `j`; shared by both new protocols.
pub(crate) fn disperse(cfg: &NodeConfig, mail: &mut Mailer, m: &[u8]) -> Result<RootHash> {
    let fragments = cfg.codec.get_fragments(m, &cfg.params)?;
    let tree = MerkleTree::new(&fragments)?;
    let root = tree.root();
    for (j, f) in fragments.into_iter().enumerate() {
        mail.send(
            j,
            Message::Fragment(FragmentMessage {
                instance: cfg.instance,
                root,
                fragment: f,
                proof: tree.proof(j)?,
                sig: None,
            }),
        );
    }
    Ok(root)
}

impl Protocol for BitNode {
    fn clone_box(&self) -> Box<dyn Protocol> {
        Box::new(self.clone())
    }

    fn id(&self) -> NodeId {
        self.cfg.id
    }

    fn start_broadcast(&mut self, m: &[u8], now: Time) -> Result<Outbox> {
        if self.cfg.id != self.cfg.sender {
            return Err(Error::NotSender {
                node: self.cfg.id,
                sender: self.cfg.sender,
            });
        }
        if self.started {
            return Err(Error::AlreadyStarted);
        }
        disperse(&self.cfg, &mut self.mail, m)?;
        self.started = true;
        self.settle(now);
        Ok(self.mail.take())
    }

    fn handle_message(&mut self, from: NodeId, msg: Message, now: Time) -> Handled {
        let accepted = self.apply(from, msg, now);
        self.settle(now);
        Handled {
            accepted,
            outbox: self.mail.take(),
        }
    }

    fn on_timer(&mut self, now: Time) -> Outbox {
        self.settle(now);
        self.mail.take()
    }

    fn next_timer(&self) -> Option<Time> {
        match (self.cfg.delivery_gate, self.first_fragment_at) {
            (Some(delta), Some(t0)) if !self.done => Some(t0 + delta),
            _ => None,
        }
    }

    fn delivered(&self) -> Option<&Bytes> {
        self.delivered.as_ref()
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn fragment_broadcasts(&self) -> Vec<RootHash> {
        self.frag_broadcast.into_iter().collect()
    }

    fn peak_fragment_bytes(&self) -> usize {
        self.ledger.peak_bytes()
    }

    fn snapshot(&self) -> NodeSnapshot {
        let mut snap = NodeSnapshot {
            id: self.cfg.id,
            support: self.proposals.iter().map(|(h, s)| (*h, s.len())).collect(),
            proposed: self.proposed.iter().copied().collect(),
            fragment_broadcasts: self.fragment_broadcasts(),
            done: self.done,
            delivered_digest: self.delivered.as_deref().map(digest_hex),
            ..Default::default()
        };
        self.ledger.fill_snapshot(&mut snap);
        snap
    }

    fn fingerprint(&self, mut h: &mut dyn Hasher) {
        self.ledger.fingerprint(h);
        self.proposals.hash(&mut h);
        self.proposed.hash(&mut h);
        self.frag_broadcast.hash(&mut h);
        (
            self.seen_sender_fragment,
            self.started,
            self.done,
            self.delivered.is_some(),
        )
            .hash(&mut h);
        if self.cfg.delivery_gate.is_some() {
            self.first_fragment_at.hash(&mut h);
        }
    }
}
