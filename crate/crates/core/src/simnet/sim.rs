use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineNode;
use crate::error::{Error, Result};
use crate::merkle::{sha256, RootHash};
use crate::message::{Message, MessageKind, ProposalSig};
use crate::params::ProtocolParams;
use crate::protocol::{digest_hex, NodeConfig, NodeSnapshot, Protocol};
use crate::rbc_bit::BitNode;
use crate::rbc_sig::SigNode;
use crate::simnet::adversary::{expand, EquivocationPlan, Faulty, ScriptedSend};
use crate::simnet::check::{check, Violation};
use crate::simnet::config::{Adversary, Algorithm, DelayModel, RunConfig};
use crate::thresh::SimThreshold;
use crate::{NodeId, Time};

/// Version tag carried by every serialized trace and metrics record.
pub const SCHEMA: u32 = 1;

/// Transported messages allowed per run, as a multiple of `n^2`.
pub const CEILING_FACTOR: usize = 24;

const STREAM_MESSAGE: u64 = 1;
const STREAM_DELAY: u64 = 2;
const STREAM_ADVERSARY: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigKind {
    Share,
    Full,
}

/// One transported message, recorded when it is processed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub time: Time,
    pub seq: u64,
    pub sent_at: Time,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
    pub bytes: usize,
    /// Bytes of the attached share or signature, included in `bytes`.
    pub sig_bytes: usize,
    pub sig: Option<SigKind>,
    /// Fragment payload length for fragment-bearing messages.
    pub fragment_bytes: Option<usize>,
    pub root: RootHash,
    /// `None` when the recipient is faulty and keeps no protocol state.
    pub accepted: Option<bool>,
    pub from_honest: bool,
    pub to_honest: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub time: Time,
    pub node: NodeId,
    pub digest: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum TraceRecord {
    Message(MessageEvent),
    Timer { time: Time, seq: u64, node: NodeId },
    Deliver(DeliveryEvent),
}

#[derive(Serialize)]
struct Line<'a> {
    schema: u32,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

/// Final state of one node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub id: NodeId,
    pub honest: bool,
    pub delivery: Option<DeliveryEvent>,
    pub fragment_broadcasts: Vec<RootHash>,
    pub committed_root: Option<RootHash>,
    pub peak_fragment_bytes: usize,
    pub snapshot: Option<NodeSnapshot>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub params: ProtocolParams,
    pub faulty: Vec<NodeId>,
    /// Digest of the sender's input when the sender is honest.
    pub input_digest: Option<String>,
    pub events: Vec<TraceRecord>,
    pub nodes: Vec<NodeOutcome>,
    /// The queue drained without hitting the message ceiling.
    pub complete: bool,
    pub transported: usize,
    pub ceiling: usize,
    pub end_time: Time,
    pub violations: Vec<Violation>,
}

impl RunTrace {
    pub fn messages(&self) -> impl Iterator<Item = &MessageEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceRecord::Message(m) => Some(m),
            _ => None,
        })
    }

    pub fn honest(&self) -> impl Iterator<Item = &NodeOutcome> {
        self.nodes.iter().filter(|o| o.honest)
    }

    /// JSON lines, one record per line, each tagged with the schema version.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for record in &self.events {
            s.push_str(&serde_json::to_string(&Line { schema: SCHEMA, record }).expect("trace serializes"));
            s.push('\n');
        }
        s
    }

    /// Hex SHA-256 of [`RunTrace::to_jsonl`].
    pub fn digest(&self) -> String {
        hex::encode(sha256(&[self.to_jsonl().as_bytes()]))
    }

    /// Good-case round count: latest honest delivery time divided by the uniform delay.
    pub fn rounds(&self) -> Result<u64> {
        let DelayModel::Uniform { d } = self.config.delay else {
            return Err(Error::Config("rounds are defined for uniform delays only".into()));
        };
        let last = self
            .honest()
            .map(|o| o.delivery.as_ref().map(|d| d.time))
            .collect::<Option<Vec<_>>>()
            .and_then(|v| v.into_iter().max())
            .ok_or_else(|| Error::Config("not every honest node delivered".into()))?;
        Ok(last.div_ceil(d))
    }
}

/// Executes `config` to quiescence.
pub fn run(config: &RunConfig) -> Result<RunTrace> {
    config.validate()?;
    let mut sim = Sim::new(config)?;
    sim.start()?;
    sim.drain();
    Ok(sim.finish())
}

/// Derives the sender's input(s) deterministically from the seed.
pub fn messages_for(config: &RunConfig, count: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_MESSAGE);
    (0..count)
        .map(|_| {
            let mut m = vec![0u8; config.msg_size];
            rng.fill_bytes(&mut m);
            m
        })
        .collect()
}

/// Node ids controlled by the adversary: the sender (when it is faulty) and the highest ids.
pub fn faulty_nodes(config: &RunConfig) -> Result<Vec<NodeId>> {
    let f = config.faulty_count()?;
    let mut v = Vec::with_capacity(f);
    let mut next = config.n;
    if f > 0 && config.adversary.sender_faulty() {
        v.push(0);
    }
    while v.len() < f {
        next -= 1;
        v.push(next);
    }
    Ok(v)
}

pub(crate) fn honest_machine(
    config: &RunConfig,
    params: &ProtocolParams,
    keys: &SimThreshold,
    id: NodeId,
) -> Result<Box<dyn Protocol>> {
    let mut cfg = NodeConfig::new(*params, id, 0);
    cfg.strict_single_hash_fragments = config.flags.strict_storage;
    cfg.delivery_gate = config.flags.delta;
    cfg.piggyback_signatures = config.flags.piggyback;
    Ok(match config.algorithm {
        Algorithm::Bit => Box::new(BitNode::new(cfg)),
        Algorithm::Sig => Box::new(SigNode::new(cfg, Arc::new(keys.key_share(id)?), Arc::new(keys.clone()))),
        Algorithm::Baseline => Box::new(BaselineNode::new(cfg)?),
    })
}

/// Honest machines, faulty behaviours and scripted sends for a config.
pub(crate) struct Setup {
    pub params: ProtocolParams,
    pub slots: Vec<Slot>,
    pub faulty: Vec<NodeId>,
    pub input: Option<Vec<u8>>,
    pub script: Vec<ScriptedSend>,
}

#[allow(clippy::large_enum_variant)]
pub(crate) enum Slot {
    Honest(Box<dyn Protocol>),
    Faulty(Faulty),
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let params = config.params()?;
        let n = params.n();
        let faulty = faulty_nodes(config)?;
        let keys = SimThreshold::setup(n, params.quorum(), config.seed)?;
        let mut adv_rng = ChaCha8Rng::seed_from_u64(config.seed);
        adv_rng.set_stream(STREAM_ADVERSARY);
        let honest: Vec<NodeId> = (0..n).filter(|v| !faulty.contains(v)).collect();

        let mut slots = Vec::with_capacity(n);
        for id in 0..n {
            let slot = if !faulty.contains(&id) {
                Slot::Honest(honest_machine(config, &params, &keys, id)?)
            } else {
                let inner = || honest_machine(config, &params, &keys, id);
                Slot::Faulty(match config.adversary {
                    Adversary::Crash { after } => Faulty::Crashing {
                        inner: inner()?,
                        budget: after,
                    },
                    Adversary::Replay => Faulty::Replaying {
                        inner: inner()?,
                        seen: HashSet::new(),
                    },
                    Adversary::Garble => Faulty::Garbling {
                        inner: inner()?,
                        rng: ChaCha8Rng::from_rng(&mut adv_rng).expect("chacha seeding"),
                    },
                    _ => Faulty::Mute,
                })
            };
            slots.push(slot);
        }

        let (input, script) = match config.adversary {
            Adversary::Equivocate { strategy } => {
                let count = EquivocationPlan::messages_needed(strategy, honest.len());
                let messages = messages_for(config, count);
                let plan = EquivocationPlan {
                    algorithm: config.algorithm,
                    params: &params,
                    instance: 0,
                    strategy,
                    faulty: &faulty,
                    honest: &honest,
                    keys: &keys,
                    messages: &messages,
                    piggyback: config.flags.piggyback,
                };
                (None, plan.script(&mut adv_rng)?)
            }
            _ => (messages_for(config, 1).pop(), Vec::new()),
        };
        Ok(Setup {
            params,
            slots,
            faulty,
            input,
            script,
        })
    }
}

#[allow(clippy::large_enum_variant)]
enum Item {
    Deliver {
        from: NodeId,
        to: NodeId,
        msg: Message,
        sent_at: Time,
    },
    Timer {
        node: NodeId,
    },
}

struct Pending {
    at: Time,
    seq: u64,
    item: Item,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct Sim {
    config: RunConfig,
    params: ProtocolParams,
    slots: Vec<Slot>,
    faulty: Vec<NodeId>,
    input: Option<Vec<u8>>,
    script: Vec<ScriptedSend>,
    queue: BinaryHeap<Reverse<Pending>>,
    timers: Vec<BTreeSet<Time>>,
    seq: u64,
    delay_rng: ChaCha8Rng,
    events: Vec<TraceRecord>,
    deliveries: Vec<Option<DeliveryEvent>>,
    runtime_violations: Vec<Violation>,
    transported: usize,
    ceiling: usize,
    now: Time,
    aborted: bool,
}

impl Sim {
    fn new(config: &RunConfig) -> Result<Self> {
        let setup = Setup::new(config)?;
        let n = setup.params.n();
        let mut delay_rng = ChaCha8Rng::seed_from_u64(config.seed);
        delay_rng.set_stream(STREAM_DELAY);
        Ok(Sim {
            config: config.clone(),
            params: setup.params,
            slots: setup.slots,
            faulty: setup.faulty,
            input: setup.input,
            script: setup.script,
            queue: BinaryHeap::new(),
            timers: vec![BTreeSet::new(); n],
            seq: 0,
            delay_rng,
            events: Vec::new(),
            deliveries: vec![None; n],
            runtime_violations: Vec::new(),
            transported: 0,
            ceiling: CEILING_FACTOR * n * n,
            now: 0,
            aborted: false,
        })
    }

    fn n(&self) -> usize {
        self.params.n()
    }

    fn delay(&mut self) -> Time {
        match self.config.delay {
            DelayModel::Uniform { d } => d,
            DelayModel::Random { max } => self.delay_rng.gen_range(1..=max),
        }
    }

    fn push(&mut self, at: Time, item: Item) {
        self.seq += 1;
        self.queue.push(Reverse(Pending {
            at,
            seq: self.seq,
            item,
        }));
    }

    fn send_all(&mut self, from: NodeId, sends: Vec<(NodeId, Message)>, extra: Time) {
        for (to, msg) in sends {
            if to == from || to >= self.n() {
                continue;
            }
            let at = self.now + extra + self.delay();
            let sent_at = self.now + extra;
            self.push(at, Item::Deliver { from, to, msg, sent_at });
        }
    }

    fn schedule_timer(&mut self, node: NodeId) {
        let next = match &self.slots[node] {
            Slot::Honest(p) => p.next_timer(),
            Slot::Faulty(f) => f.next_timer(),
        };
        if let Some(at) = next {
            if at > self.now && self.timers[node].insert(at) {
                self.push(at, Item::Timer { node });
            }
        }
    }

    fn start(&mut self) -> Result<()> {
        let n = self.n();
        let input = self.input.clone();
        let sends = match (&mut self.slots[0], &input) {
            (Slot::Honest(p), Some(m)) => expand(0, n, p.start_broadcast(m, 0)?),
            (Slot::Faulty(f), Some(m)) => f.start(m, n)?,
            _ => Vec::new(),
        };
        self.send_all(0, sends, 0);
        for s in std::mem::take(&mut self.script) {
            self.send_all(s.from, vec![(s.to, s.msg)], s.offset);
        }
        self.observe(0);
        self.schedule_timer(0);
        Ok(())
    }

    /// Records a first delivery and flags a changed one.
    fn observe(&mut self, node: NodeId) {
        let Slot::Honest(p) = &self.slots[node] else {
            return;
        };
        let Some(m) = p.delivered() else {
            return;
        };
        let digest = digest_hex(m);
        match &self.deliveries[node] {
            None => {
                let d = DeliveryEvent {
                    time: self.now,
                    node,
                    digest,
                    len: m.len(),
                };
                self.events.push(TraceRecord::Deliver(d.clone()));
                self.deliveries[node] = Some(d);
            }
            Some(prev) if prev.digest != digest => {
                self.runtime_violations.push(Violation::Integrity { node });
            }
            Some(_) => {}
        }
    }

    fn drain(&mut self) {
        let n = self.n();
        while let Some(Reverse(Pending { at, seq, item })) = self.queue.pop() {
            self.now = at;
            match item {
                Item::Timer { node } => {
                    self.timers[node].remove(&at);
                    self.events.push(TraceRecord::Timer { time: at, seq, node });
                    let sends = match &mut self.slots[node] {
                        Slot::Honest(p) => expand(node, n, p.on_timer(at)),
                        Slot::Faulty(f) => f.on_timer(at, n),
                    };
                    self.send_all(node, sends, 0);
                    self.observe(node);
                    self.schedule_timer(node);
                }
                Item::Deliver { from, to, msg, sent_at } => {
                    self.transported += 1;
                    if self.transported > self.ceiling {
                        self.aborted = true;
                        self.runtime_violations.push(Violation::MessageCeiling {
                            count: self.transported,
                            ceiling: self.ceiling,
                        });
                        break;
                    }
                    let mut event = describe(&msg, at, seq, sent_at, from, to);
                    event.from_honest = !self.faulty.contains(&from);
                    event.to_honest = !self.faulty.contains(&to);
                    let (sends, accepted) = match &mut self.slots[to] {
                        Slot::Honest(p) => {
                            let h = p.handle_message(from, msg, at);
                            (expand(to, n, h.outbox), Some(h.accepted))
                        }
                        Slot::Faulty(f) => f.on_message(from, msg, at, n),
                    };
                    event.accepted = accepted;
                    self.events.push(TraceRecord::Message(event));
                    self.send_all(to, sends, 0);
                    self.observe(to);
                    self.schedule_timer(to);
                }
            }
        }
    }

    fn finish(mut self) -> RunTrace {
        let nodes: Vec<NodeOutcome> = self
            .slots
            .iter()
            .enumerate()
            .map(|(id, slot)| {
                let machine = match slot {
                    Slot::Honest(p) => Some(p.as_ref()),
                    Slot::Faulty(f) => f.inner(),
                };
                NodeOutcome {
                    id,
                    honest: matches!(slot, Slot::Honest(_)),
                    delivery: self.deliveries[id].clone(),
                    fragment_broadcasts: machine.map(|p| p.fragment_broadcasts()).unwrap_or_default(),
                    committed_root: machine.and_then(|p| p.committed_root()),
                    peak_fragment_bytes: machine.map_or(0, |p| p.peak_fragment_bytes()),
                    snapshot: machine.map(|p| p.snapshot()),
                }
            })
            .collect();
        let input_digest = if self.faulty.contains(&0) {
            None
        } else {
            self.input.as_deref().map(digest_hex)
        };
        let mut trace = RunTrace {
            config: self.config,
            params: self.params,
            faulty: self.faulty,
            input_digest,
            events: std::mem::take(&mut self.events),
            nodes,
            complete: !self.aborted,
            transported: self.transported,
            ceiling: self.ceiling,
            end_time: self.now,
            violations: Vec::new(),
        };
        let mut violations = self.runtime_violations;
        violations.extend(check(&trace));
        trace.violations = violations;
        trace
    }
}

fn describe(msg: &Message, time: Time, seq: u64, sent_at: Time, from: NodeId, to: NodeId) -> MessageEvent {
    MessageEvent {
        time,
        seq,
        sent_at,
        from,
        to,
        kind: msg.kind(),
        bytes: msg.wire_len(),
        sig_bytes: msg.signature_len(),
        sig: msg.sig().map(|s| match s {
            ProposalSig::Share(_) => SigKind::Share,
            ProposalSig::Full(_) => SigKind::Full,
        }),
        fragment_bytes: msg.fragment_payload_len(),
        root: msg.root(),
        accepted: None,
        from_honest: true,
        to_honest: true,
    }
}
