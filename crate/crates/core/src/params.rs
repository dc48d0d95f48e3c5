use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merkle::DIGEST_LEN;

/// Bytes of the big-endian length prefix written in front of every encoded message.
pub const LENGTH_HEADER: usize = 8;

/// Network size, fault bound and coding parameters shared by every module.
///
/// `n = 3t + 1` always holds. `k` is the number of fragments needed to recover a
/// message: `2t + 1` for the new protocols, `t + 1` for the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProtocolParams {
    n: usize,
    t: usize,
    k: usize,
    kappa: usize,
    ell_max: usize,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: usize,
    t: usize,
    k: usize,
    kappa: usize,
    ell_max: usize,
}

impl TryFrom<RawParams> for ProtocolParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let params = ProtocolParams {
            n: raw.n,
            t: raw.t,
            k: raw.k,
            kappa: raw.kappa,
            ell_max: raw.ell_max,
        };
        params.validate()?;
        Ok(params)
    }
}

impl From<ProtocolParams> for RawParams {
    fn from(p: ProtocolParams) -> Self {
        RawParams {
            n: p.n,
            t: p.t,
            k: p.k,
            kappa: p.kappa,
            ell_max: p.ell_max,
        }
    }
}

impl ProtocolParams {
    /// Parameters for the (n, 2t+1)-coded protocols.
    pub fn new(t: usize, ell_max: usize) -> Result<Self> {
        Self::with_threshold(t, 2 * t + 1, ell_max)
    }

    /// Parameters for the (n, t+1)-coded baseline.
    pub fn baseline(t: usize, ell_max: usize) -> Result<Self> {
        Self::with_threshold(t, t + 1, ell_max)
    }

    /// Derives `t` from `n`; fails unless `n = 3t + 1`.
    pub fn for_network(n: usize, ell_max: usize) -> Result<Self> {
        if n < 4 || !(n - 1).is_multiple_of(3) {
            return Err(Error::InvalidParams(format!(
                "n = {n} is not of the form 3t+1 with t >= 1"
            )));
        }
        Self::new((n - 1) / 3, ell_max)
    }

    fn with_threshold(t: usize, k: usize, ell_max: usize) -> Result<Self> {
        let params = ProtocolParams {
            n: 3 * t + 1,
            t,
            k,
            kappa: DIGEST_LEN * 8,
            ell_max,
        };
        params.validate()?;
        Ok(params)
    }

    /// The same network with the baseline's `t + 1` recovery threshold.
    pub fn to_baseline(&self) -> Self {
        ProtocolParams { k: self.t + 1, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidParams("t must be at least 1".into()));
        }
        if self.n != 3 * self.t + 1 {
            return Err(Error::InvalidParams(format!(
                "n = {} but 3t+1 = {}",
                self.n,
                3 * self.t + 1
            )));
        }
        if self.k != self.t + 1 && self.k != 2 * self.t + 1 {
            return Err(Error::InvalidParams(format!("k = {} must be t+1 or 2t+1", self.k)));
        }
        if self.kappa != DIGEST_LEN * 8 {
            // Every digest in the crate is SHA-256.
            return Err(Error::InvalidParams(format!(
                "kappa = {} unsupported, the digest is {} bits",
                self.kappa,
                DIGEST_LEN * 8
            )));
        }
        if self.ell_max == 0 {
            return Err(Error::InvalidParams("ell_max must be positive".into()));
        }
        if self.n > 256 {
            return Err(Error::InvalidParams(
                "the GF(2^8) code supports at most 256 nodes".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn ell_max(&self) -> usize {
        self.ell_max
    }

    /// `2t + 1`, the proposal/share/echo quorum regardless of `k`.
    pub fn quorum(&self) -> usize {
        2 * self.t + 1
    }

    pub fn with_ell_max(&self, ell_max: usize) -> Result<Self> {
        let p = ProtocolParams { ell_max, ..*self };
        p.validate()?;
        Ok(p)
    }

    /// Payload bytes per fragment for a message of `msg_len` bytes.
    pub fn fragment_len(&self, msg_len: usize) -> usize {
        (msg_len + LENGTH_HEADER).div_ceil(self.k)
    }
}
