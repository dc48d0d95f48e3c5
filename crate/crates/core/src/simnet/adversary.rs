use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{ErasureCode, Fragment, ReedSolomonCode};
use crate::error::Result;
use crate::merkle::{MerkleTree, RootHash};
use crate::message::{FragmentMessage, Message, ProposalMessage, ProposalSig, SignedProposalMessage};
use crate::params::ProtocolParams;
use crate::protocol::{Outbox, Protocol, Target};
use crate::simnet::config::{Algorithm, EquivocationStrategy};
use crate::thresh::{ShareSigner, SimThreshold, Subject};
use crate::{NodeId, Time};

/// Largest extra send offset a scripted adversary applies.
pub const SCRIPT_JITTER: Time = 2;

/// One message a scripted node emits at `offset` after the start.
#[derive(Clone, Debug)]
pub struct ScriptedSend {
    pub from: NodeId,
    pub to: NodeId,
    pub msg: Message,
    pub offset: Time,
}

/// Expands targets to point-to-point sends in ascending recipient order.
pub fn expand(from: NodeId, n: usize, out: Outbox) -> Vec<(NodeId, Message)> {
    let mut v = Vec::new();
    for (target, msg) in out {
        match target {
            Target::Node(to) => v.push((to, msg)),
            Target::All => v.extend((0..n).filter(|&to| to != from).map(|to| (to, msg.clone()))),
        }
    }
    v
}

/// A Byzantine node as seen by the simulator.
#[allow(clippy::large_enum_variant)]
pub enum Faulty {
    /// Sends nothing, or only what its script emitted at the start.
    Mute,
    /// Runs the protocol and goes quiet after `budget` sends.
    Crashing { inner: Box<dyn Protocol>, budget: usize },
    /// Runs the protocol and replays what it receives.
    Replaying {
        inner: Box<dyn Protocol>,
        seen: HashSet<u64>,
    },
    /// Runs the protocol and corrupts everything it sends.
    Garbling { inner: Box<dyn Protocol>, rng: ChaCha8Rng },
}

impl Faulty {
    pub fn inner(&self) -> Option<&dyn Protocol> {
        match self {
            Faulty::Mute => None,
            Faulty::Crashing { inner, .. } | Faulty::Replaying { inner, .. } | Faulty::Garbling { inner, .. } => {
                Some(inner.as_ref())
            }
        }
    }

    pub fn start(&mut self, m: &[u8], n: usize) -> Result<Vec<(NodeId, Message)>> {
        let Some(id) = self.inner().map(|p| p.id()) else {
            return Ok(Vec::new());
        };
        let out = match self {
            Faulty::Mute => unreachable!(),
            Faulty::Crashing { inner, .. } | Faulty::Replaying { inner, .. } | Faulty::Garbling { inner, .. } => {
                inner.start_broadcast(m, 0)?
            }
        };
        Ok(self.filter(id, n, expand(id, n, out)))
    }

    /// Returns the sends and whether the inner machine accepted the message.
    pub fn on_message(
        &mut self,
        from: NodeId,
        msg: Message,
        now: Time,
        n: usize,
    ) -> (Vec<(NodeId, Message)>, Option<bool>) {
        let Some(id) = self.inner().map(|p| p.id()) else {
            return (Vec::new(), None);
        };
        let mut echoes = Vec::new();
        if let Faulty::Replaying { seen, .. } = self {
            let mut h = DefaultHasher::new();
            (from, &msg).hash(&mut h);
            if seen.insert(h.finish()) {
                echoes.push((from, msg.clone()));
                if let Message::Fragment(f) | Message::Echo(f) = &msg {
                    let j = f.leaf_index();
                    if j != id && j != from && j < n {
                        echoes.push((j, msg.clone()));
                    }
                }
            }
        }
        let handled = match self {
            Faulty::Mute => unreachable!(),
            Faulty::Crashing { inner, .. } | Faulty::Replaying { inner, .. } | Faulty::Garbling { inner, .. } => {
                inner.handle_message(from, msg, now)
            }
        };
        let mut sends = expand(id, n, handled.outbox);
        sends.extend(echoes);
        (self.filter(id, n, sends), Some(handled.accepted))
    }

    pub fn on_timer(&mut self, now: Time, n: usize) -> Vec<(NodeId, Message)> {
        let Some(id) = self.inner().map(|p| p.id()) else {
            return Vec::new();
        };
        let out = match self {
            Faulty::Mute => unreachable!(),
            Faulty::Crashing { inner, .. } | Faulty::Replaying { inner, .. } | Faulty::Garbling { inner, .. } => {
                inner.on_timer(now)
            }
        };
        self.filter(id, n, expand(id, n, out))
    }

    pub fn next_timer(&self) -> Option<Time> {
        self.inner().and_then(|p| p.next_timer())
    }

    fn filter(&mut self, _id: NodeId, _n: usize, sends: Vec<(NodeId, Message)>) -> Vec<(NodeId, Message)> {
        match self {
            Faulty::Crashing { budget, .. } => {
                let keep = sends.len().min(*budget);
                *budget -= keep;
                sends.into_iter().take(keep).collect()
            }
            Faulty::Garbling { rng, .. } => sends.into_iter().map(|(to, m)| (to, garble(m, rng))).collect(),
            _ => sends,
        }
    }
}

fn flip(bytes: &mut [u8], rng: &mut ChaCha8Rng) {
    if !bytes.is_empty() {
        let i = rng.gen_range(0..bytes.len());
        bytes[i] ^= 1 << rng.gen_range(0..8);
    }
}

fn garble_fragment(mut f: FragmentMessage, rng: &mut ChaCha8Rng) -> FragmentMessage {
    match rng.gen_range(0..3) {
        0 => {
            let mut p = f.fragment.payload.to_vec();
            flip(&mut p, rng);
            f.fragment = Fragment::new(f.fragment.index, p);
        }
        1 => flip(&mut f.root.0, rng),
        _ => match f.proof.siblings.first_mut() {
            Some(s) => flip(s, rng),
            None => flip(&mut f.root.0, rng),
        },
    }
    f
}

fn garble(msg: Message, rng: &mut ChaCha8Rng) -> Message {
    match msg {
        Message::Fragment(f) => Message::Fragment(garble_fragment(f, rng)),
        Message::Echo(f) => Message::Echo(garble_fragment(f, rng)),
        Message::Proposal(mut p) => {
            rng.fill(&mut p.root.0);
            Message::Proposal(p)
        }
        Message::Ready(mut p) => {
            rng.fill(&mut p.root.0);
            Message::Ready(p)
        }
        Message::SignedProposal(mut p) => {
            match &mut p.sig {
                ProposalSig::Share(s) => flip(&mut s.blob, rng),
                ProposalSig::Full(s) => flip(&mut s.blob, rng),
            }
            Message::SignedProposal(p)
        }
    }
}

/// A dispersed message: its fragments and tree.
struct Codeword {
    fragments: Vec<Fragment>,
    tree: MerkleTree,
}

impl Codeword {
    fn new(m: &[u8], params: &ProtocolParams) -> Result<Self> {
        let fragments = ReedSolomonCode.get_fragments(m, params)?;
        let tree = MerkleTree::new(&fragments)?;
        Ok(Codeword { fragments, tree })
    }

    fn root(&self) -> RootHash {
        self.tree.root()
    }

    fn fragment(&self, instance: u64, j: NodeId) -> FragmentMessage {
        FragmentMessage {
            instance,
            root: self.root(),
            fragment: self.fragments[j].clone(),
            proof: self.tree.proof(j).expect("index below n"),
            sig: None,
        }
    }
}

/// Inputs to an equivocation script.
pub struct EquivocationPlan<'a> {
    pub algorithm: Algorithm,
    pub params: &'a ProtocolParams,
    pub instance: u64,
    pub strategy: EquivocationStrategy,
    /// The sender followed by its accomplices.
    pub faulty: &'a [NodeId],
    pub honest: &'a [NodeId],
    pub keys: &'a SimThreshold,
    /// Candidate messages; the strategy uses as many as it needs.
    pub messages: &'a [Vec<u8>],
    pub piggyback: bool,
}

impl EquivocationPlan<'_> {
    /// How many distinct messages the strategy needs.
    pub fn messages_needed(strategy: EquivocationStrategy, honest: usize) -> usize {
        match strategy {
            EquivocationStrategy::TwoWay | EquivocationStrategy::TargetedT => 2,
            EquivocationStrategy::PerRecipient => honest.max(1),
        }
    }

    /// Message index handed to the `i`-th honest node, and the indices the accomplices back.
    fn assignment(&self) -> (Vec<usize>, Vec<usize>) {
        let h = self.honest.len();
        let t = self.params.t();
        match self.strategy {
            EquivocationStrategy::TwoWay => {
                let a = self.params.quorum().div_ceil(2).min(h);
                ((0..h).map(|i| usize::from(i >= a)).collect(), vec![0, 1])
            }
            EquivocationStrategy::TargetedT => {
                let b = h.saturating_sub(t);
                ((0..h).map(|i| usize::from(i >= b)).collect(), vec![0])
            }
            EquivocationStrategy::PerRecipient => ((0..h).collect(), vec![0]),
        }
    }

    pub fn script(&self, rng: &mut ChaCha8Rng) -> Result<Vec<ScriptedSend>> {
        let (assign, backed) = self.assignment();
        let used = assign.iter().chain(&backed).copied().max().unwrap_or(0) + 1;
        let words: Vec<Codeword> = self.messages[..used]
            .iter()
            .map(|m| Codeword::new(m, self.params))
            .collect::<Result<_>>()?;
        let sender = self.faulty[0];
        let mut out = Vec::new();
        let mut push = |from: NodeId, to: NodeId, msg: Message, rng: &mut ChaCha8Rng| {
            out.push(ScriptedSend {
                from,
                to,
                msg,
                offset: rng.gen_range(0..=SCRIPT_JITTER),
            });
        };
        for (i, &v) in self.honest.iter().enumerate() {
            push(
                sender,
                v,
                Message::Fragment(words[assign[i]].fragment(self.instance, v)),
                rng,
            );
        }
        for &c in self.faulty {
            let signer = self.keys.key_share(c)?;
            for &b in &backed {
                let w = &words[b];
                let root = w.root();
                for &v in self.honest {
                    let own = w.fragment(self.instance, c);
                    let share = ProposalSig::Share(signer.threshold_sign(&Subject::new(self.instance, root)));
                    let msgs = match self.algorithm {
                        Algorithm::Bit => vec![
                            Message::Proposal(ProposalMessage {
                                instance: self.instance,
                                root,
                            }),
                            Message::Fragment(own),
                        ],
                        Algorithm::Sig if self.piggyback => vec![Message::Fragment(FragmentMessage {
                            sig: Some(share),
                            ..own
                        })],
                        Algorithm::Sig => vec![
                            Message::SignedProposal(SignedProposalMessage {
                                instance: self.instance,
                                root,
                                sig: share,
                            }),
                            Message::Fragment(own),
                        ],
                        Algorithm::Baseline => vec![
                            Message::Echo(own),
                            Message::Ready(ProposalMessage {
                                instance: self.instance,
                                root,
                            }),
                        ],
                    };
                    for msg in msgs {
                        push(c, v, msg, rng);
                    }
                }
            }
        }
        Ok(out)
    }
}
