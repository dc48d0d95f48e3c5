//! Exhaustive enumeration of delivery orders for small networks.
//!
//! Time is dropped. Under [`Interleaving::Free`] any pending message may be
//! delivered next. Under [`Interleaving::Phased`] a message sent while handling
//! a phase-p message belongs to phase p+1, and phase p+1 stays closed until
//! phase p has drained; every order within a phase is still enumerated.
//! Inside a phase, deliveries to different recipients commute and cannot
//! enable one another, so only the lowest recipient with pending messages is
//! branched on (a persistent set). Every per-node delivery order and every
//! quiescent state stays reachable. Global states (honest machine fingerprints
//! plus the multiset of in-flight messages) are visited once. Properties are
//! checked at every quiescent state.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::Message;
use crate::protocol::{digest_hex, Protocol};
use crate::simnet::adversary::expand;
use crate::simnet::check::{check_outcomes, Violation};
use crate::simnet::config::{Adversary, Algorithm, EquivocationStrategy, RunConfig};
use crate::simnet::sim::{DeliveryEvent, NodeOutcome, Setup, Slot};
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    HonestSender,
    Equivocate(EquivocationStrategy),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interleaving {
    /// Phase-layered: all orders inside a phase, phases in sequence.
    #[default]
    Phased,
    /// Every pending message is always eligible.
    Free,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    /// Distinct global states reached.
    pub states: usize,
    /// Distinct quiescent states.
    pub terminals: usize,
    pub transitions: usize,
    /// Violations found, deduplicated.
    pub violations: Vec<Violation>,
    /// Every state was expanded within the budget.
    pub exhaustive: bool,
    /// Largest number of messages in flight within one phase.
    pub widest_phase: usize,
}

#[derive(Clone)]
struct InFlight {
    from: NodeId,
    to: NodeId,
    msg: Message,
    phase: usize,
    key: u64,
}

#[derive(Clone)]
struct State {
    nodes: Vec<Option<Box<dyn Protocol>>>,
    pending: Vec<InFlight>,
}

struct Explorer {
    algorithm: Algorithm,
    t: usize,
    n: usize,
    input_digest: Option<String>,
    visited: HashSet<u64>,
    report: ExploreReport,
    budget: usize,
    interleaving: Interleaving,
}

fn message_key(from: NodeId, to: NodeId, phase: usize, msg: &Message) -> u64 {
    let mut h = DefaultHasher::new();
    (from, to, phase, msg).hash(&mut h);
    h.finish()
}

impl State {
    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in self.nodes.iter().flatten() {
            node.fingerprint(&mut h);
        }
        let mut keys: Vec<u64> = self.pending.iter().map(|p| p.key).collect();
        keys.sort_unstable();
        keys.hash(&mut h);
        h.finish()
    }

    fn enqueue(&mut self, from: NodeId, phase: usize, sends: Vec<(NodeId, Message)>) {
        for (to, msg) in sends {
            // Faulty recipients in explored scenarios are mute and keep no state.
            if self.nodes[to].is_some() {
                let key = message_key(from, to, phase, &msg);
                self.pending.push(InFlight {
                    from,
                    to,
                    msg,
                    phase,
                    key,
                });
            }
        }
    }

    /// Width of the open phase and the pending indices to branch on.
    fn eligible(&self, interleaving: Interleaving) -> (usize, Vec<usize>) {
        let all = 0..self.pending.len();
        match interleaving {
            Interleaving::Free => (self.pending.len(), all.collect()),
            Interleaving::Phased => {
                let open = self.pending.iter().map(|p| p.phase).min().unwrap_or(0);
                let live: Vec<usize> = all.filter(|&i| self.pending[i].phase == open).collect();
                let to = live.iter().map(|&i| self.pending[i].to).min().unwrap_or(0);
                let width = live.len();
                (width, live.into_iter().filter(|&i| self.pending[i].to == to).collect())
            }
        }
    }
}

impl Explorer {
    fn outcomes(&self, s: &State) -> Vec<NodeOutcome> {
        s.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, p)| p.as_ref().map(|p| (id, p)))
            .map(|(id, p)| NodeOutcome {
                id,
                honest: true,
                delivery: p.delivered().map(|m| DeliveryEvent {
                    time: 0,
                    node: id,
                    digest: digest_hex(m),
                    len: m.len(),
                }),
                fragment_broadcasts: p.fragment_broadcasts(),
                committed_root: p.committed_root(),
                peak_fragment_bytes: p.peak_fragment_bytes(),
                snapshot: None,
            })
            .collect()
    }

    fn record(&mut self, v: Violation) {
        if !self.report.violations.contains(&v) {
            self.report.violations.push(v);
        }
    }

    fn visit(&mut self, s: State) {
        if !self.visited.insert(s.fingerprint()) {
            return;
        }
        self.report.states += 1;
        if self.report.states > self.budget {
            self.report.exhaustive = false;
            return;
        }
        if s.pending.is_empty() {
            self.report.terminals += 1;
            let outcomes = self.outcomes(&s);
            let refs: Vec<&NodeOutcome> = outcomes.iter().collect();
            for v in check_outcomes(self.algorithm, self.t, self.input_digest.as_deref(), true, &refs) {
                self.record(v);
            }
            return;
        }
        let (width, eligible) = s.eligible(self.interleaving);
        self.report.widest_phase = self.report.widest_phase.max(width);
        let mut tried = HashSet::new();
        for i in eligible {
            if !tried.insert(s.pending[i].key) {
                continue;
            }
            let mut next = s.clone();
            let InFlight {
                from, to, msg, phase, ..
            } = next.pending.swap_remove(i);
            let node = next.nodes[to].as_mut().expect("pending only for honest nodes");
            let before = node.delivered().cloned();
            let handled = node.handle_message(from, msg, 0);
            if !handled.accepted && s.nodes[from].is_some() {
                self.record(Violation::HonestDrop { from, to, seq: 0 });
            }
            if before.is_some() && node.delivered() != before.as_ref() {
                self.record(Violation::Integrity { node: to });
            }
            let sends = expand(to, self.n, handled.outbox);
            next.enqueue(to, phase + 1, sends);
            self.report.transitions += 1;
            self.visit(next);
        }
    }
}

/// Explores the delivery orders of one n = 4 instance, up to `budget` distinct states.
pub fn explore(
    algorithm: Algorithm,
    scenario: Scenario,
    interleaving: Interleaving,
    msg_size: usize,
    budget: usize,
) -> Result<ExploreReport> {
    let adversary = match scenario {
        Scenario::HonestSender => Adversary::None,
        Scenario::Equivocate(strategy) => Adversary::Equivocate { strategy },
    };
    let config = RunConfig::new(algorithm, 4, msg_size).with_adversary(adversary);
    config.validate()?;
    if config.flags.delta.is_some() {
        return Err(Error::Config(
            "exploration ignores time; the delivery gate is unsupported".into(),
        ));
    }
    let setup = Setup::new(&config)?;
    let n = setup.params.n();
    let mut state = State {
        nodes: setup
            .slots
            .into_iter()
            .map(|s| match s {
                Slot::Honest(p) => Some(p),
                Slot::Faulty(_) => None,
            })
            .collect(),
        pending: Vec::new(),
    };
    if let (Some(m), Some(sender)) = (&setup.input, state.nodes[0].as_mut()) {
        let out = sender.start_broadcast(m, 0)?;
        state.enqueue(0, 0, expand(0, n, out));
    }
    for s in setup.script {
        state.enqueue(s.from, 0, vec![(s.to, s.msg)]);
    }
    let input_digest = state.nodes[0].as_ref().and(setup.input.as_deref()).map(digest_hex);
    let mut explorer = Explorer {
        algorithm,
        t: setup.params.t(),
        n,
        input_digest,
        visited: HashSet::new(),
        report: ExploreReport {
            exhaustive: true,
            ..Default::default()
        },
        budget,
        interleaving,
    };
    explorer.visit(state);
    Ok(explorer.report)
}
