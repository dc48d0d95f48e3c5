//! Reliable-broadcast properties and per-protocol invariants checked on finished runs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simnet::config::Algorithm;
use crate::simnet::sim::{NodeOutcome, RunTrace};
use crate::NodeId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "kebab-case")]
pub enum Violation {
    /// Honest sender, but this honest node did not deliver its input.
    Validity {
        node: NodeId,
    },
    /// Honest nodes delivered different messages.
    Agreement {
        digests: Vec<String>,
    },
    /// A node's delivered message changed.
    Integrity {
        node: NodeId,
    },
    /// Some honest node delivered and this one did not.
    Totality {
        node: NodeId,
    },
    /// A_bit: an honest node broadcast fragments for more than one root.
    SingleHashFragments {
        node: NodeId,
        roots: usize,
    },
    /// A_sig: honest nodes committed to different roots.
    CommittedRoot {
        roots: usize,
    },
    /// A_sig: an honest node broadcast fragments for more than two roots.
    FragmentRoots {
        node: NodeId,
        roots: usize,
    },
    /// A_sig: more than `t` honest nodes broadcast fragments for two roots.
    DoubleBroadcasters {
        count: usize,
        t: usize,
    },
    /// An honest node rejected a message from another honest node.
    HonestDrop {
        from: NodeId,
        to: NodeId,
        seq: u64,
    },
    MessageCeiling {
        count: usize,
        ceiling: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Validity { node } => write!(f, "validity: node {node} did not deliver the input"),
            Violation::Agreement { digests } => write!(f, "agreement: {} distinct deliveries", digests.len()),
            Violation::Integrity { node } => write!(f, "integrity: node {node} delivered twice"),
            Violation::Totality { node } => write!(f, "totality: node {node} never delivered"),
            Violation::SingleHashFragments { node, roots } => {
                write!(f, "single-hash fragments: node {node} broadcast for {roots} roots")
            }
            Violation::CommittedRoot { roots } => write!(f, "h* agreement: {roots} distinct roots"),
            Violation::FragmentRoots { node, roots } => {
                write!(f, "fragment roots: node {node} broadcast for {roots} roots")
            }
            Violation::DoubleBroadcasters { count, t } => {
                write!(f, "double broadcasters: {count} honest nodes, bound {t}")
            }
            Violation::HonestDrop { from, to, seq } => write!(f, "honest drop: {from}->{to} (seq {seq})"),
            Violation::MessageCeiling { count, ceiling } => write!(f, "message ceiling: {count} > {ceiling}"),
        }
    }
}

/// Checks the properties that must hold at quiescence.
pub fn check(trace: &RunTrace) -> Vec<Violation> {
    let mut v = Vec::new();
    for m in trace.messages() {
        if m.from_honest && m.to_honest && m.accepted == Some(false) {
            v.push(Violation::HonestDrop {
                from: m.from,
                to: m.to,
                seq: m.seq,
            });
        }
    }
    let honest: Vec<_> = trace.honest().collect();
    v.extend(check_outcomes(
        trace.config.algorithm,
        trace.params.t(),
        trace.input_digest.as_deref(),
        trace.complete,
        &honest,
    ));
    v
}

/// Delivery properties and protocol invariants over the honest nodes' final state.
pub fn check_outcomes(
    algorithm: Algorithm,
    t: usize,
    input_digest: Option<&str>,
    quiescent: bool,
    honest: &[&NodeOutcome],
) -> Vec<Violation> {
    let mut v = Vec::new();
    let digests: BTreeSet<&String> = honest
        .iter()
        .filter_map(|o| o.delivery.as_ref())
        .map(|d| &d.digest)
        .collect();
    if digests.len() > 1 {
        v.push(Violation::Agreement {
            digests: digests.iter().map(|d| d.to_string()).collect(),
        });
    }
    if let Some(input) = input_digest {
        for o in honest {
            if o.delivery.as_ref().map(|d| d.digest.as_str()) != Some(input) {
                v.push(Violation::Validity { node: o.id });
            }
        }
    }
    if quiescent && !digests.is_empty() {
        for o in honest.iter().filter(|o| o.delivery.is_none()) {
            v.push(Violation::Totality { node: o.id });
        }
    }

    match algorithm {
        Algorithm::Bit => {
            for o in honest {
                if o.fragment_broadcasts.len() > 1 {
                    v.push(Violation::SingleHashFragments {
                        node: o.id,
                        roots: o.fragment_broadcasts.len(),
                    });
                }
            }
        }
        Algorithm::Sig => {
            let roots: BTreeSet<_> = honest.iter().filter_map(|o| o.committed_root).collect();
            if roots.len() > 1 {
                v.push(Violation::CommittedRoot { roots: roots.len() });
            }
            for o in honest {
                if o.fragment_broadcasts.len() > 2 {
                    v.push(Violation::FragmentRoots {
                        node: o.id,
                        roots: o.fragment_broadcasts.len(),
                    });
                }
            }
            let doubles = honest.iter().filter(|o| o.fragment_broadcasts.len() >= 2).count();
            if doubles > t {
                v.push(Violation::DoubleBroadcasters { count: doubles, t });
            }
        }
        Algorithm::Baseline => {}
    }
    v
}
