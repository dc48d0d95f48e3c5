//! A_sig: reliable broadcast with threshold-signed proposals.
//!
//! A node signs only the root of the first own fragment it receives from the
//! sender. `2t+1` shares (or one full signature) fix `h*`; from then on the
//! node only forwards fragments for `h*` and delivers once `|F(h*)| >= 2t+1`.
//! With `piggyback_signatures` shares and `sigma*` ride on fragment messages
//! and the standalone pre-delivery signature broadcast is dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use bytes::Bytes;

use crate::error::{Error, Result};
use crate::merkle::RootHash;
use crate::message::{FragmentMessage, Message, ProposalSig, SignedProposalMessage};
use crate::protocol::{
    by_support, digest_hex, recover_and_verify, FragmentLedger, Handled, Mailer, NodeConfig, NodeSnapshot, Outbox,
    Protocol,
};
use crate::rbc_bit::{disperse, send_top_ups};
use crate::thresh::{ShareSigner, SignatureShare, Subject, ThresholdScheme, ThresholdSignature};
use crate::{NodeId, Time};

#[derive(Clone, Debug)]
pub struct SigNode {
    cfg: NodeConfig,
    signer: Arc<dyn ShareSigner>,
    scheme: Arc<dyn ThresholdScheme>,
    ledger: FragmentLedger,
    shares: BTreeMap<RootHash, BTreeMap<NodeId, SignatureShare>>,
    h_star: Option<RootHash>,
    sigma_star: Option<ThresholdSignature>,
    frag_broadcast: Vec<RootHash>,
    signed: Option<RootHash>,
    started: bool,
    first_fragment_at: Option<Time>,
    done: bool,
    delivered: Option<Bytes>,
    mail: Mailer,
}

impl SigNode {
    pub fn new(cfg: NodeConfig, signer: Arc<dyn ShareSigner>, scheme: Arc<dyn ThresholdScheme>) -> Self {
        SigNode {
            ledger: FragmentLedger::new(&cfg),
            mail: Mailer::new(cfg.id),
            cfg,
            signer,
            scheme,
            shares: BTreeMap::new(),
            h_star: None,
            sigma_star: None,
            frag_broadcast: Vec::new(),
            signed: None,
            started: false,
            first_fragment_at: None,
            done: false,
            delivered: None,
        }
    }

    /// `|S(h)|`.
    pub fn share_count(&self, h: &RootHash) -> usize {
        self.shares.get(h).map_or(0, BTreeMap::len)
    }

    pub fn signature(&self) -> Option<&ThresholdSignature> {
        self.sigma_star.as_ref()
    }

    /// The root this node threshold-signed, if any.
    pub fn signed_root(&self) -> Option<RootHash> {
        self.signed
    }

    fn subject(&self, h: RootHash) -> Subject {
        Subject::new(self.cfg.instance, h)
    }

    fn apply(&mut self, from: NodeId, msg: Message, now: Time) -> bool {
        match msg {
            Message::Fragment(m) => {
                let sig = m.sig.clone();
                let root = m.root;
                let frag_ok = self.on_fragment(from, m, now);
                let sig_ok = match sig {
                    Some(sig) if self.cfg.piggyback_signatures => self.on_signature(from, root, sig),
                    Some(_) => false,
                    None => frag_ok,
                };
                frag_ok && sig_ok
            }
            Message::SignedProposal(p) if p.instance == self.cfg.instance => self.on_signature(from, p.root, p.sig),
            _ => false,
        }
    }

    fn on_fragment(&mut self, from: NodeId, m: FragmentMessage, now: Time) -> bool {
        if !self.ledger.accept(from, &m) {
            return false;
        }
        self.first_fragment_at.get_or_insert(now);
        if from == self.cfg.sender && m.leaf_index() == self.cfg.id && self.signed.is_none() {
            let h = m.root;
            self.signed = Some(h);
            let share = ProposalSig::Share(self.signer.threshold_sign(&self.subject(h)));
            if self.cfg.piggyback_signatures {
                let sig = match self.h_star {
                    Some(hs) if hs == h => self.current_sig().unwrap_or(share),
                    _ => share,
                };
                self.broadcast_fragment(h, m, Some(sig));
            } else {
                self.mail.broadcast(Message::SignedProposal(SignedProposalMessage {
                    instance: self.cfg.instance,
                    root: h,
                    sig: share,
                }));
                self.broadcast_fragment(h, m, None);
            }
        }
        true
    }

    fn on_signature(&mut self, from: NodeId, h: RootHash, sig: ProposalSig) -> bool {
        let subject = self.subject(h);
        match sig {
            ProposalSig::Full(sigma) => {
                if !self.scheme.valid_signature(&subject, &sigma) {
                    return false;
                }
                if self.h_star.is_none() {
                    self.h_star = Some(h);
                    self.sigma_star = Some(sigma);
                }
                true
            }
            ProposalSig::Share(share) => {
                if !self.ledger.admits(from, &h) || !self.scheme.valid_share(&subject, from, &share) {
                    return false;
                }
                self.ledger.note(from, h);
                self.shares.entry(h).or_default().insert(from, share);
                true
            }
        }
    }

    fn current_sig(&self) -> Option<ProposalSig> {
        self.sigma_star.clone().map(ProposalSig::Full)
    }

    fn broadcast_fragment(&mut self, h: RootHash, mut m: FragmentMessage, sig: Option<ProposalSig>) {
        if self.frag_broadcast.contains(&h) {
            return;
        }
        self.frag_broadcast.push(h);
        m.sig = sig;
        self.mail.broadcast(Message::Fragment(m));
    }

    fn gate_open(&self, now: Time) -> bool {
        match self.cfg.delivery_gate {
            None => true,
            Some(delta) => self.first_fragment_at.is_some_and(|t0| now >= t0 + delta),
        }
    }

    fn evaluate(&mut self, now: Time) -> bool {
        let q = self.cfg.params.quorum();
        let Some(h) = self.h_star else {
            let order = by_support(self.shares.keys().copied(), |h| self.share_count(h));
            let Some(h) = order.first().copied().filter(|h| self.share_count(h) >= q) else {
                return false;
            };
            let shares: Vec<SignatureShare> = self.shares[&h].values().cloned().collect();
            match self.scheme.compute_signature(&shares) {
                Ok(sigma) => {
                    self.h_star = Some(h);
                    self.sigma_star = Some(sigma);
                    return true;
                }
                Err(e) => {
                    log::warn!("node {}: combining shares for {h:?} failed: {e}", self.cfg.id);
                    return false;
                }
            }
        };

        if !self.frag_broadcast.contains(&h) {
            if let Some((f, proof)) = self.ledger.own(&h).cloned() {
                let sig = self.cfg.piggyback_signatures.then(|| self.current_sig()).flatten();
                let m = FragmentMessage {
                    instance: self.cfg.instance,
                    root: h,
                    fragment: f,
                    proof,
                    sig: None,
                };
                self.broadcast_fragment(h, m, sig);
                return true;
            }
        }

        if !self.done && self.ledger.count(&h) >= q && self.gate_open(now) {
            let sigma = self.current_sig().expect("sigma* set with h*");
            if !self.cfg.piggyback_signatures {
                self.mail.broadcast(Message::SignedProposal(SignedProposalMessage {
                    instance: self.cfg.instance,
                    root: h,
                    sig: sigma.clone(),
                }));
            }
            self.done = true;
            if let Some(rec) = recover_and_verify(&self.cfg, &self.ledger.fragments(&h), &h) {
                let attach = self.cfg.piggyback_signatures.then_some(&sigma);
                send_top_ups(
                    &mut self.mail,
                    &self.ledger,
                    &rec.tree,
                    &rec.fragments,
                    self.cfg.instance,
                    &h,
                    attach,
                );
                log::debug!("node {} delivers {} bytes for {h:?}", self.cfg.id, rec.message.len());
                self.delivered = Some(rec.message);
            }
            return true;
        }
        false
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

impl Protocol for SigNode {
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
        self.frag_broadcast.clone()
    }

    fn committed_root(&self) -> Option<RootHash> {
        self.h_star
    }

    fn peak_fragment_bytes(&self) -> usize {
        self.ledger.peak_bytes()
    }

    fn snapshot(&self) -> NodeSnapshot {
        let mut snap = NodeSnapshot {
            id: self.cfg.id,
            support: self.shares.iter().map(|(h, s)| (*h, s.len())).collect(),
            proposed: self.signed.into_iter().collect(),
            fragment_broadcasts: self.frag_broadcast.clone(),
            committed_root: self.h_star,
            done: self.done,
            delivered_digest: self.delivered.as_deref().map(digest_hex),
            ..Default::default()
        };
        self.ledger.fill_snapshot(&mut snap);
        snap
    }

    fn fingerprint(&self, mut h: &mut dyn Hasher) {
        self.ledger.fingerprint(h);
        for (root, s) in &self.shares {
            root.hash(&mut h);
            s.keys().collect::<BTreeSet<_>>().hash(&mut h);
        }
        self.h_star.hash(&mut h);
        self.frag_broadcast.hash(&mut h);
        self.signed.hash(&mut h);
        (self.started, self.done, self.delivered.is_some()).hash(&mut h);
        if self.cfg.delivery_gate.is_some() {
            self.first_fragment_at.hash(&mut h);
        }
    }
}
