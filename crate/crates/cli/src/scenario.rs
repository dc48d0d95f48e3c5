use std::path::Path;

use anyhow::{bail, Context, Result};
use rbcast::simnet::{Adversary, Algorithm, DelayModel, Flags, RunConfig};
use serde::Deserialize;

/// A sweep scenario: everything in a [`RunConfig`] except the seed.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub algo: Algorithm,
    pub n: usize,
    pub msg_size: usize,
    pub adversary: Adversary,
    pub delay: DelayModel,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub faulty: Option<usize>,
    #[serde(default)]
    pub ell_max: Option<usize>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let s: ScenarioFile = serde_json::from_str(text).context("malformed scenario")?;
        if s.schema != 1 {
            bail!("unsupported scenario schema {}", s.schema);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn config(&self, seed: u64) -> RunConfig {
        RunConfig {
            seed,
            algorithm: self.algo,
            n: self.n,
            msg_size: self.msg_size,
            ell_max: self.ell_max,
            adversary: self.adversary,
            faulty: self.faulty,
            delay: self.delay,
            flags: self.flags,
        }
    }
}

/// `a..b`, half-open.
pub fn parse_seed_range(s: &str) -> Result<std::ops::Range<u64>> {
    let (a, b) = s.split_once("..").context("seed range must look like 0..100")?;
    let a: u64 = a.trim().parse().context("seed range start")?;
    let b: u64 = b.trim().parse().context("seed range end")?;
    if b < a {
        bail!("seed range {a}..{b} is reversed");
    }
    Ok(a..b)
}
