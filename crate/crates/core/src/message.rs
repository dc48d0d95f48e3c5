//! Protocol messages and their canonical byte encoding.
//!
//! Every message starts with `tag: u8 | instance: u64 | root: [u8; 32]`, all
//! integers big-endian. Byte counts in the metrics come from [`Message::wire_len`],
//! which always equals `encode().len()`.

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::codec::Fragment;
use crate::error::{Error, Result};
use crate::merkle::{Digest, MerkleProof, RootHash, DIGEST_LEN};
use crate::thresh::{SignatureShare, Subject, ThresholdSignature};
use crate::NodeId;

const HEADER_LEN: usize = 1 + 8 + DIGEST_LEN;

/// Signature material attached to an A_sig proposal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProposalSig {
    Share(SignatureShare),
    Full(ThresholdSignature),
}

impl ProposalSig {
    fn wire_len(&self) -> usize {
        match self {
            ProposalSig::Share(s) => 1 + 4 + 2 + s.blob.len(),
            ProposalSig::Full(s) => 1 + 2 + 4 * s.signers.len() + 2 + s.blob.len(),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, ProposalSig::Full(_))
    }
}

/// `fragment(h, j, f_j, pi_j)`, optionally carrying a piggybacked share or signature.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FragmentMessage {
    pub instance: u64,
    pub root: RootHash,
    pub fragment: Fragment,
    pub proof: MerkleProof,
    pub sig: Option<ProposalSig>,
}

impl FragmentMessage {
    pub fn leaf_index(&self) -> usize {
        self.fragment.index
    }
}

/// `proposal(h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProposalMessage {
    pub instance: u64,
    pub root: RootHash,
}

/// `proposal(h, sigma)` where sigma is a share or a full signature.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedProposalMessage {
    pub instance: u64,
    pub root: RootHash,
    pub sig: ProposalSig,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Message {
    Fragment(FragmentMessage),
    Proposal(ProposalMessage),
    SignedProposal(SignedProposalMessage),
    /// Baseline: a node forwarding its own fragment.
    Echo(FragmentMessage),
    /// Baseline: readiness to deliver `root`.
    Ready(ProposalMessage),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Fragment,
    Proposal,
    SignedProposal,
    Echo,
    Ready,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::Fragment => "fragment",
            MessageKind::Proposal => "proposal",
            MessageKind::SignedProposal => "signed_proposal",
            MessageKind::Echo => "echo",
            MessageKind::Ready => "ready",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            MessageKind::Fragment => 1,
            MessageKind::Proposal => 2,
            MessageKind::SignedProposal => 3,
            MessageKind::Echo => 4,
            MessageKind::Ready => 5,
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Fragment(_) => MessageKind::Fragment,
            Message::Proposal(_) => MessageKind::Proposal,
            Message::SignedProposal(_) => MessageKind::SignedProposal,
            Message::Echo(_) => MessageKind::Echo,
            Message::Ready(_) => MessageKind::Ready,
        }
    }

    pub fn instance(&self) -> u64 {
        match self {
            Message::Fragment(m) | Message::Echo(m) => m.instance,
            Message::Proposal(m) | Message::Ready(m) => m.instance,
            Message::SignedProposal(m) => m.instance,
        }
    }

    pub fn root(&self) -> RootHash {
        match self {
            Message::Fragment(m) | Message::Echo(m) => m.root,
            Message::Proposal(m) | Message::Ready(m) => m.root,
            Message::SignedProposal(m) => m.root,
        }
    }

    pub fn sig(&self) -> Option<&ProposalSig> {
        match self {
            Message::Fragment(m) | Message::Echo(m) => m.sig.as_ref(),
            Message::SignedProposal(m) => Some(&m.sig),
            _ => None,
        }
    }

    /// Payload bytes of the carried fragment, if any.
    pub fn fragment_payload_len(&self) -> Option<usize> {
        match self {
            Message::Fragment(m) | Message::Echo(m) => Some(m.fragment.len()),
            _ => None,
        }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN
            + match self {
                Message::Fragment(m) | Message::Echo(m) => {
                    4 + 4
                        + m.fragment.len()
                        + 4
                        + 1
                        + DIGEST_LEN * m.proof.siblings.len()
                        + 1
                        + m.sig.as_ref().map_or(0, |s| s.wire_len() - 1)
                }
                Message::Proposal(_) | Message::Ready(_) => 0,
                Message::SignedProposal(m) => m.sig.wire_len(),
            }
    }

    /// Bytes of the encoding spent on a share or signature (including its tag).
    pub fn signature_len(&self) -> usize {
        self.sig().map_or(0, ProposalSig::wire_len)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(self.kind().tag());
        out.extend_from_slice(&self.instance().to_be_bytes());
        out.extend_from_slice(self.root().as_bytes());
        match self {
            Message::Fragment(m) | Message::Echo(m) => {
                out.extend_from_slice(&(m.fragment.index as u32).to_be_bytes());
                out.extend_from_slice(&(m.fragment.len() as u32).to_be_bytes());
                out.extend_from_slice(&m.fragment.payload);
                out.extend_from_slice(&(m.proof.leaf_count as u32).to_be_bytes());
                out.push(m.proof.siblings.len() as u8);
                for s in &m.proof.siblings {
                    out.extend_from_slice(s);
                }
                match &m.sig {
                    None => out.push(0),
                    Some(sig) => encode_sig(sig, &mut out),
                }
            }
            Message::Proposal(_) | Message::Ready(_) => {}
            Message::SignedProposal(m) => encode_sig(&m.sig, &mut out),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message> {
        let mut r = Reader { buf: bytes };
        let tag = r.u8()?;
        let instance = r.u64()?;
        let root = RootHash(r.digest()?);
        let subject = Subject::new(instance, root);
        let msg = match tag {
            1 | 4 => {
                let index = r.u32()? as usize;
                let len = r.u32()? as usize;
                let payload = Bytes::copy_from_slice(r.take(len)?);
                let leaf_count = r.u32()? as usize;
                let count = r.u8()? as usize;
                let siblings = (0..count).map(|_| r.digest()).collect::<Result<Vec<_>>>()?;
                let sig = match r.u8()? {
                    0 => None,
                    t => Some(decode_sig(t, &subject, &mut r)?),
                };
                let m = FragmentMessage {
                    instance,
                    root,
                    fragment: Fragment::new(index, payload),
                    proof: MerkleProof {
                        leaf_index: index,
                        leaf_count,
                        siblings,
                    },
                    sig,
                };
                if tag == 1 {
                    Message::Fragment(m)
                } else {
                    Message::Echo(m)
                }
            }
            2 => Message::Proposal(ProposalMessage { instance, root }),
            5 => Message::Ready(ProposalMessage { instance, root }),
            3 => {
                let t = r.u8()?;
                Message::SignedProposal(SignedProposalMessage {
                    instance,
                    root,
                    sig: decode_sig(t, &subject, &mut r)?,
                })
            }
            t => return Err(Error::Wire(format!("unknown tag {t}"))),
        };
        if !r.buf.is_empty() {
            return Err(Error::Wire(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(msg)
    }
}

fn encode_sig(sig: &ProposalSig, out: &mut Vec<u8>) {
    match sig {
        ProposalSig::Share(s) => {
            out.push(1);
            out.extend_from_slice(&(s.signer as u32).to_be_bytes());
            out.extend_from_slice(&(s.blob.len() as u16).to_be_bytes());
            out.extend_from_slice(&s.blob);
        }
        ProposalSig::Full(s) => {
            out.push(2);
            out.extend_from_slice(&(s.signers.len() as u16).to_be_bytes());
            for id in &s.signers {
                out.extend_from_slice(&(*id as u32).to_be_bytes());
            }
            out.extend_from_slice(&(s.blob.len() as u16).to_be_bytes());
            out.extend_from_slice(&s.blob);
        }
    }
}

fn decode_sig(tag: u8, subject: &Subject, r: &mut Reader<'_>) -> Result<ProposalSig> {
    match tag {
        1 => {
            let signer = r.u32()? as NodeId;
            let len = r.u16()? as usize;
            Ok(ProposalSig::Share(SignatureShare {
                signer,
                subject: *subject,
                blob: r.take(len)?.to_vec(),
            }))
        }
        2 => {
            let count = r.u16()? as usize;
            let signers = (0..count)
                .map(|_| r.u32().map(|v| v as NodeId))
                .collect::<Result<Vec<_>>>()?;
            let len = r.u16()? as usize;
            Ok(ProposalSig::Full(ThresholdSignature {
                subject: *subject,
                signers,
                blob: r.take(len)?.to_vec(),
            }))
        }
        t => Err(Error::Wire(format!("unknown signature tag {t}"))),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Wire("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn digest(&mut self) -> Result<Digest> {
        Ok(self.take(DIGEST_LEN)?.try_into().expect("digest length"))
    }
}
