//! Seeded discrete-event simulation of one broadcast instance.
//!
//! Messages are delivered in `(deliver_at, seq)` order under a [`DelayModel`];
//! faulty nodes follow an [`Adversary`] script or wrap an honest machine.
//! Identical [`RunConfig`]s produce identical traces.

pub mod adversary;
pub mod check;
pub mod config;
pub mod explore;
pub(crate) mod sim;
pub mod sweep;

pub use check::{check, Violation};
pub use config::{Adversary, Algorithm, DelayModel, EquivocationStrategy, Flags, RunConfig};
pub use explore::{explore, ExploreReport, Interleaving, Scenario};
pub use sim::{
    faulty_nodes, messages_for, run, DeliveryEvent, MessageEvent, NodeOutcome, RunTrace, SigKind, TraceRecord,
    CEILING_FACTOR, SCHEMA,
};
pub use sweep::{sweep, RunSummary};
