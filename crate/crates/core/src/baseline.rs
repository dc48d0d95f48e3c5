//! `(n, t+1)` echo/ready dispersal used as the overhead-3 reference point.
//!
//! The sender hands `f_j` to `v_j`; every node echoes its own fragment to all,
//! sends `ready(h)` after `2t+1` echoes or `t+1` readies, and delivers after
//! `2t+1` readies once `t+1` echoed fragments reconstruct a message whose
//! re-encoding matches `h`. Each peer's first echo and first ready count.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use bytes::Bytes;

use crate::codec::Fragment;
use crate::error::{Error, Result};
use crate::merkle::{valid_merkle_proof, RootHash};
use crate::message::{FragmentMessage, Message, ProposalMessage};
use crate::protocol::{digest_hex, recover_and_verify, Handled, Mailer, NodeConfig, NodeSnapshot, Outbox, Protocol};
use crate::rbc_bit::disperse;
use crate::{NodeId, Time};

#[derive(Clone, Debug)]
pub struct BaselineNode {
    cfg: NodeConfig,
    echoes: BTreeMap<RootHash, BTreeMap<NodeId, Fragment>>,
    echoed_by: BTreeSet<NodeId>,
    readies: BTreeMap<RootHash, BTreeSet<NodeId>>,
    ready_by: BTreeSet<NodeId>,
    own_echo: Option<RootHash>,
    ready_sent: Option<RootHash>,
    started: bool,
    done: bool,
    delivered: Option<Bytes>,
    stored: usize,
    peak: usize,
    mail: Mailer,
}

impl BaselineNode {
    /// `cfg.params` must use `k = t+1`.
    pub fn new(cfg: NodeConfig) -> Result<Self> {
        let p = &cfg.params;
        if p.k() != p.t() + 1 {
            return Err(Error::InvalidParams(format!(
                "baseline needs k = t+1, got k = {}",
                p.k()
            )));
        }
        Ok(BaselineNode {
            mail: Mailer::new(cfg.id),
            cfg,
            echoes: BTreeMap::new(),
            echoed_by: BTreeSet::new(),
            readies: BTreeMap::new(),
            ready_by: BTreeSet::new(),
            own_echo: None,
            ready_sent: None,
            started: false,
            done: false,
            delivered: None,
            stored: 0,
            peak: 0,
        })
    }

    fn valid(&self, m: &FragmentMessage, j: NodeId) -> bool {
        m.instance == self.cfg.instance
            && m.leaf_index() == j
            && m.proof.leaf_count == self.cfg.params.n()
            && valid_merkle_proof(&m.root, &m.fragment, j, &m.proof)
    }

    fn apply(&mut self, from: NodeId, msg: Message) -> bool {
        if from >= self.cfg.params.n() {
            return false;
        }
        match msg {
            Message::Fragment(m) => {
                if from != self.cfg.sender || self.own_echo.is_some() || !self.valid(&m, self.cfg.id) {
                    return false;
                }
                self.own_echo = Some(m.root);
                self.mail.broadcast(Message::Echo(m));
                true
            }
            Message::Echo(m) => {
                if self.echoed_by.contains(&from) || !self.valid(&m, from) {
                    return false;
                }
                self.echoed_by.insert(from);
                self.stored += m.fragment.len();
                self.peak = self.peak.max(self.stored);
                self.echoes.entry(m.root).or_default().insert(from, m.fragment);
                true
            }
            Message::Ready(p) => {
                if p.instance != self.cfg.instance || !self.ready_by.insert(from) {
                    return false;
                }
                self.readies.entry(p.root).or_default().insert(from);
                true
            }
            _ => false,
        }
    }

    fn echo_count(&self, h: &RootHash) -> usize {
        self.echoes.get(h).map_or(0, BTreeMap::len)
    }

    fn ready_count(&self, h: &RootHash) -> usize {
        self.readies.get(h).map_or(0, BTreeSet::len)
    }

    fn evaluate(&mut self) -> bool {
        let t = self.cfg.params.t();
        let q = self.cfg.params.quorum();
        let roots: BTreeSet<RootHash> = self.echoes.keys().chain(self.readies.keys()).copied().collect();
        if self.ready_sent.is_none() {
            if let Some(h) = roots
                .iter()
                .find(|h| self.echo_count(h) >= q || self.ready_count(h) > t)
                .copied()
            {
                self.ready_sent = Some(h);
                self.mail.broadcast(Message::Ready(ProposalMessage {
                    instance: self.cfg.instance,
                    root: h,
                }));
                return true;
            }
        }
        if !self.done {
            if let Some(h) = roots
                .iter()
                .find(|h| self.ready_count(h) >= q && self.echo_count(h) > t)
                .copied()
            {
                self.done = true;
                let frags: Vec<Fragment> = self.echoes[&h].values().cloned().collect();
                if let Some(rec) = recover_and_verify(&self.cfg, &frags, &h) {
                    self.delivered = Some(rec.message);
                }
                return true;
            }
        }
        false
    }

    fn settle(&mut self) {
        loop {
            while let Some(m) = self.mail.next_loopback() {
                self.apply(self.cfg.id, m);
            }
            if !self.evaluate() {
                break;
            }
        }
    }
}

impl Protocol for BaselineNode {
    fn clone_box(&self) -> Box<dyn Protocol> {
        Box::new(self.clone())
    }

    fn id(&self) -> NodeId {
        self.cfg.id
    }

    fn start_broadcast(&mut self, m: &[u8], _now: Time) -> Result<Outbox> {
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
        self.settle();
        Ok(self.mail.take())
    }

    fn handle_message(&mut self, from: NodeId, msg: Message, _now: Time) -> Handled {
        let accepted = self.apply(from, msg);
        self.settle();
        Handled {
            accepted,
            outbox: self.mail.take(),
        }
    }

    fn on_timer(&mut self, _now: Time) -> Outbox {
        Outbox::default()
    }

    fn next_timer(&self) -> Option<Time> {
        None
    }

    fn delivered(&self) -> Option<&Bytes> {
        self.delivered.as_ref()
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn fragment_broadcasts(&self) -> Vec<RootHash> {
        self.own_echo.into_iter().collect()
    }

    fn peak_fragment_bytes(&self) -> usize {
        self.peak
    }

    fn snapshot(&self) -> NodeSnapshot {
        NodeSnapshot {
            id: self.cfg.id,
            fragments: self.echoes.iter().map(|(h, e)| (*h, e.len())).collect(),
            fragment_senders: self.echoes.iter().map(|(h, e)| (*h, e.len())).collect(),
            support: self.readies.iter().map(|(h, r)| (*h, r.len())).collect(),
            proposed: self.ready_sent.into_iter().collect(),
            fragment_broadcasts: self.fragment_broadcasts(),
            done: self.done,
            delivered_digest: self.delivered.as_deref().map(digest_hex),
            stored_fragment_bytes: self.stored,
            peak_fragment_bytes: self.peak,
            ..Default::default()
        }
    }

    fn fingerprint(&self, mut h: &mut dyn Hasher) {
        for (root, e) in &self.echoes {
            root.hash(&mut h);
            e.keys().collect::<Vec<_>>().hash(&mut h);
        }
        self.readies.hash(&mut h);
        (
            self.own_echo,
            self.ready_sent,
            self.started,
            self.done,
            self.delivered.is_some(),
        )
            .hash(&mut h);
    }
}
