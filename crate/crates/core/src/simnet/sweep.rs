use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::account;
use crate::simnet::config::RunConfig;
use crate::simnet::sim::{run, RunTrace};

/// One CSV row per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub seed: u64,
    pub algorithm: String,
    pub n: usize,
    pub adversary: String,
    pub overhead_factor: Option<f64>,
    pub rounds: Option<u64>,
    pub delivered: usize,
    pub honest: usize,
    pub all_delivered: bool,
    pub violations: usize,
    pub violation_detail: String,
    pub trace_digest: String,
}

impl RunSummary {
    pub fn of(trace: &RunTrace) -> Self {
        let metrics = account(trace).ok();
        let honest = trace.honest().count();
        let delivered = trace.honest().filter(|o| o.delivery.is_some()).count();
        RunSummary {
            config_digest: trace.config.digest(),
            seed: trace.config.seed,
            algorithm: trace.config.algorithm.to_string(),
            n: trace.config.n,
            adversary: trace.config.adversary.name(),
            overhead_factor: metrics.as_ref().map(|m| m.overhead_factor),
            rounds: metrics.as_ref().and_then(|m| m.rounds),
            delivered,
            honest,
            all_delivered: delivered == honest,
            violations: trace.violations.len(),
            violation_detail: trace
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
            trace_digest: trace.digest(),
        }
    }
}

/// Runs every config, applies `f` to each trace, and keeps the input order.
pub fn sweep_map<T, F>(configs: &[RunConfig], jobs: Option<usize>, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(&RunTrace) -> T + Sync,
{
    let work = || configs.par_iter().map(|c| run(c).map(|trace| f(&trace))).collect();
    match jobs {
        None => work(),
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(work),
            Err(e) => configs
                .iter()
                .map(|_| Err(Error::Config(format!("thread pool: {e}"))))
                .collect(),
        },
    }
}

/// Element-wise [`run`] summarized, in config order.
pub fn sweep(configs: &[RunConfig], jobs: Option<usize>) -> Vec<Result<RunSummary>> {
    sweep_map(configs, jobs, RunSummary::of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{Adversary, Algorithm, DelayModel};

    #[test]
    fn empty_sweep() {
        assert!(sweep(&[], Some(2)).is_empty());
    }

    #[test]
    fn order_and_determinism() {
        let configs: Vec<_> = (0..12)
            .map(|s| {
                RunConfig::new(Algorithm::Bit, 4, 100)
                    .with_seed(s)
                    .with_delay(DelayModel::Random { max: 5 })
                    .with_adversary(Adversary::Replay)
            })
            .collect();
        let a: Vec<_> = sweep(&configs, Some(4)).into_iter().map(Result::unwrap).collect();
        let b: Vec<_> = sweep(&configs, Some(1)).into_iter().map(Result::unwrap).collect();
        assert_eq!(a, b);
        for (s, row) in a.iter().enumerate() {
            assert_eq!(row.seed, s as u64);
        }
    }

    #[test]
    fn bad_config_reported_per_element() {
        let good = RunConfig::new(Algorithm::Sig, 4, 10);
        let bad = RunConfig::new(Algorithm::Sig, 5, 10);
        let out = sweep(&[good, bad], None);
        assert!(out[0].is_ok() && out[1].is_err());
    }
}
