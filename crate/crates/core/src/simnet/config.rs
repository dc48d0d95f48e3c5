use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merkle::sha256;
use crate::params::ProtocolParams;
use crate::Time;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bit,
    Sig,
    Baseline,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bit => "bit",
            Algorithm::Sig => "sig",
            Algorithm::Baseline => "baseline",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bit" => Ok(Algorithm::Bit),
            "sig" => Ok(Algorithm::Sig),
            "baseline" => Ok(Algorithm::Baseline),
            _ => Err(Error::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// How long each transported message takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "lowercase")]
pub enum DelayModel {
    /// Every message takes exactly `d`.
    Uniform { d: Time },
    /// Each message independently takes a seeded uniform delay in `1..=max`.
    Random { max: Time },
}

impl DelayModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DelayModel::Uniform { d: 0 } | DelayModel::Random { max: 0 } => {
                Err(Error::Config("delays must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Largest possible delay of one message.
    pub fn max_delay(&self) -> Time {
        match *self {
            DelayModel::Uniform { d } => d,
            DelayModel::Random { max } => max,
        }
    }
}

impl FromStr for DelayModel {
    type Err = Error;

    /// `uniform:<d>` or `random:<max>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("delay {s:?}: expected kind:value")))?;
        let v: Time = arg
            .parse()
            .map_err(|_| Error::Config(format!("delay {s:?}: bad number")))?;
        let model = match kind {
            "uniform" => DelayModel::Uniform { d: v },
            "random" => DelayModel::Random { max: v },
            _ => return Err(Error::Config(format!("unknown delay kind {kind:?}"))),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Which roots the equivocating sender hands to which honest nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivocationStrategy {
    /// `t+1` honest nodes get root A, the rest root B; colluders back both.
    TwoWay,
    /// `t` honest nodes get root B, the rest root A; colluders back A.
    TargetedT,
    /// Every honest node gets its own root; colluders back the first.
    PerRecipient,
}

impl FromStr for EquivocationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-way" => Ok(EquivocationStrategy::TwoWay),
            "targeted-t" => Ok(EquivocationStrategy::TargetedT),
            "per-recipient" => Ok(EquivocationStrategy::PerRecipient),
            _ => Err(Error::Config(format!("unknown equivocation strategy {s:?}"))),
        }
    }
}

impl EquivocationStrategy {
    pub const ALL: [EquivocationStrategy; 3] = [
        EquivocationStrategy::TwoWay,
        EquivocationStrategy::TargetedT,
        EquivocationStrategy::PerRecipient,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EquivocationStrategy::TwoWay => "two-way",
            EquivocationStrategy::TargetedT => "targeted-t",
            EquivocationStrategy::PerRecipient => "per-recipient",
        }
    }
}

/// Byzantine behaviour. Faulty nodes are the sender (when it is faulty) plus
/// the highest node ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "kebab-case")]
pub enum Adversary {
    None,
    /// The sender and its accomplices never send anything.
    Silent,
    /// Honest sender; the faulty peers never send anything.
    SilentPeers,
    /// The sender and its accomplices follow the protocol but stop after `after` sends each.
    Crash {
        after: usize,
    },
    /// The sender disperses several roots; accomplices support them.
    Equivocate {
        strategy: EquivocationStrategy,
    },
    /// Honest sender; faulty peers follow the protocol and also bounce every
    /// received message back to its origin and forward fragments to the owner
    /// of their index.
    Replay,
    /// Honest sender; faulty peers follow the protocol but corrupt their outgoing messages.
    Garble,
}

impl Adversary {
    pub fn sender_faulty(&self) -> bool {
        matches!(
            self,
            Adversary::Silent | Adversary::Crash { .. } | Adversary::Equivocate { .. }
        )
    }

    pub fn name(&self) -> String {
        match self {
            Adversary::None => "none".into(),
            Adversary::Silent => "silent".into(),
            Adversary::SilentPeers => "silent-peers".into(),
            Adversary::Crash { after } => format!("crash:{after}"),
            Adversary::Equivocate { strategy } => format!("equivocate:{}", strategy.as_str()),
            Adversary::Replay => "replay".into(),
            Adversary::Garble => "garble".into(),
        }
    }

    /// Every kind, with a representative argument where one is needed.
    pub fn catalogue(t: usize) -> Vec<Adversary> {
        let mut v = vec![
            Adversary::None,
            Adversary::Silent,
            Adversary::SilentPeers,
            Adversary::Crash { after: t + 1 },
            Adversary::Replay,
            Adversary::Garble,
        ];
        v.extend(EquivocationStrategy::ALL.map(|strategy| Adversary::Equivocate { strategy }));
        v
    }
}

impl FromStr for Adversary {
    type Err = Error;

    /// `none`, `silent`, `silent-peers`, `crash:<sends>`, `equivocate:<strategy>`, `replay`, `garble`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let adv = match (kind, arg) {
            ("none", None) => Adversary::None,
            ("silent", None) => Adversary::Silent,
            ("silent-peers", None) => Adversary::SilentPeers,
            ("replay", None) => Adversary::Replay,
            ("garble", None) => Adversary::Garble,
            ("crash", Some(a)) => Adversary::Crash {
                after: a
                    .parse()
                    .map_err(|_| Error::Config(format!("crash step {a:?} is not a number")))?,
            },
            ("equivocate", Some(a)) => Adversary::Equivocate { strategy: a.parse()? },
            _ => return Err(Error::Config(format!("unknown adversary {s:?}"))),
        };
        Ok(adv)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub strict_storage: bool,
    /// Delivery gate: minimum time between first accepted fragment and delivery.
    pub delta: Option<Time>,
    pub piggyback: bool,
    /// Charge every share or signature as a flat kappa bits instead of its encoded size.
    pub ideal_signature_size: bool,
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub n: usize,
    pub msg_size: usize,
    /// Defaults to `msg_size`.
    #[serde(default)]
    pub ell_max: Option<usize>,
    pub adversary: Adversary,
    /// Number of faulty nodes; defaults to `t` when the adversary is not `None`.
    #[serde(default)]
    pub faulty: Option<usize>,
    pub delay: DelayModel,
    #[serde(default)]
    pub flags: Flags,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, n: usize, msg_size: usize) -> Self {
        RunConfig {
            seed: 0,
            algorithm,
            n,
            msg_size,
            ell_max: None,
            adversary: Adversary::None,
            faulty: None,
            delay: DelayModel::Uniform { d: 1 },
            flags: Flags::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_adversary(mut self, adversary: Adversary) -> Self {
        self.adversary = adversary;
        self
    }

    pub fn with_delay(mut self, delay: DelayModel) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_flags(mut self, flags: Flags) -> Self {
        self.flags = flags;
        self
    }

    pub fn params(&self) -> Result<ProtocolParams> {
        let ell_max = self.ell_max.unwrap_or(self.msg_size).max(1);
        let p = ProtocolParams::for_network(self.n, ell_max)?;
        Ok(match self.algorithm {
            Algorithm::Baseline => p.to_baseline(),
            _ => p,
        })
    }

    pub fn faulty_count(&self) -> Result<usize> {
        let t = (self.n.max(1) - 1) / 3;
        match (self.adversary, self.faulty) {
            (Adversary::None, None | Some(0)) => Ok(0),
            (Adversary::None, Some(f)) => Err(Error::Config(format!("{f} faulty nodes but no adversary"))),
            (_, Some(f)) if f == 0 || f > t => Err(Error::Config(format!("faulty count {f} outside 1..={t}"))),
            (_, f) => Ok(f.unwrap_or(t)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.params()?;
        if self.msg_size > p.ell_max() {
            return Err(Error::Config(format!(
                "message size {} exceeds ell_max {}",
                self.msg_size,
                p.ell_max()
            )));
        }
        self.delay.validate()?;
        self.faulty_count()?;
        if self.flags.delta == Some(0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.flags.piggyback && self.algorithm != Algorithm::Sig {
            return Err(Error::Config("piggyback applies to the sig algorithm only".into()));
        }
        // Honest sig nodes may send fragments for two roots, which strict mode would drop.
        if self.flags.strict_storage && self.algorithm != Algorithm::Bit {
            return Err(Error::Config("strict storage applies to the bit algorithm only".into()));
        }
        if self.algorithm == Algorithm::Baseline && self.flags.delta.is_some() {
            return Err(Error::Config("baseline takes no delivery gate".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(sha256(&[&json]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_cli_forms() {
        assert_eq!("uniform:3".parse::<DelayModel>().unwrap(), DelayModel::Uniform { d: 3 });
        assert_eq!("random:9".parse::<DelayModel>().unwrap(), DelayModel::Random { max: 9 });
        assert!("uniform:0".parse::<DelayModel>().is_err());
        assert!("fixed:1".parse::<DelayModel>().is_err());
        assert_eq!("crash:4".parse::<Adversary>().unwrap(), Adversary::Crash { after: 4 });
        assert_eq!(
            "equivocate:targeted-t".parse::<Adversary>().unwrap(),
            Adversary::Equivocate {
                strategy: EquivocationStrategy::TargetedT
            }
        );
        assert!("equivocate".parse::<Adversary>().is_err());
        for adv in Adversary::catalogue(2) {
            assert_eq!(adv.name().parse::<Adversary>().unwrap(), adv);
        }
    }

    #[test]
    fn json_shapes() {
        let adv: Adversary = serde_json::from_str(r#"{"kind":"equivocate","args":{"strategy":"two-way"}}"#).unwrap();
        assert_eq!(
            adv,
            Adversary::Equivocate {
                strategy: EquivocationStrategy::TwoWay
            }
        );
        let d: DelayModel = serde_json::from_str(r#"{"kind":"uniform","args":{"d":2}}"#).unwrap();
        assert_eq!(d, DelayModel::Uniform { d: 2 });
        let none: Adversary = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(none, Adversary::None);
    }

    #[test]
    fn validation() {
        let base = RunConfig::new(Algorithm::Bit, 7, 100);
        assert!(base.validate().is_ok());
        assert!(RunConfig::new(Algorithm::Bit, 6, 100).validate().is_err());
        let mut c = base.clone();
        c.ell_max = Some(50);
        assert!(c.validate().is_err());
        let mut c = base.clone().with_adversary(Adversary::Silent);
        assert_eq!(c.faulty_count().unwrap(), 2);
        c.faulty = Some(3);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.flags.piggyback = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let a = RunConfig::new(Algorithm::Sig, 4, 10);
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), a.clone().with_seed(1).digest());
    }
}
