//! Knowledge-base file: the trained codec, its task-relevance weights and an
//! optional trained policy, shared by transmitter and receiver.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SLNK"  u16 version (1)  u64 codec_len  codec block
//! then zero or more sections: tag[4]  u64 len  payload
//!   "STRW"  f64 vector
//!   "DPPO"  actor network, critic network
//! ```
//!
//! A vector is `u32 n` followed by `n` f64. A network is `u32 layers+1`,
//! that many `u32` layer widths, a `u8` hidden activation (0 tanh,
//! 1 identity) and its flat parameter vector. The codec block is six `u32`
//! (C, W, H, d, classes, hidden), `u64` seed, `f64` training accuracy (NaN
//! when unknown), the encoder weight and bias vectors, then the task head.
//! Unknown section tags are skipped.

use std::path::Path;

use crate::dppo::PolicyParams;
use crate::nn::{Activation, Mlp};
use crate::semcodec::{CodecParams, CodecShape};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SLNK";
pub const VERSION: u16 = 1;
pub const STR_TAG: &[u8; 4] = b"STRW";
pub const POLICY_TAG: &[u8; 4] = b"DPPO";

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub codec: CodecParams,
    pub str_weights: Option<Vec<f64>>,
    pub policy: Option<PolicyParams>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vector(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn mlp(&mut self, m: &Mlp) {
        let sizes = m.sizes();
        self.u32(sizes.len());
        sizes.iter().for_each(|&s| self.u32(s));
        self.u8(match m.hidden_activation() {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        });
        self.vector(m.params());
    }
    fn section(&mut self, tag: &[u8; 4], body: Writer) {
        self.0.extend_from_slice(tag);
        self.u64(body.0.len() as u64);
        self.0.extend(body.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::KnowledgeBase("truncated file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn vector(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n.saturating_mul(8) > self.buf.len() {
            return Err(Error::KnowledgeBase(format!("vector of {n} overruns the file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let n = self.u32()?;
        if !(2..=64).contains(&n) {
            return Err(Error::KnowledgeBase(format!("network with {n} layer widths")));
        }
        let sizes = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let act = match self.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Identity,
            x => return Err(Error::KnowledgeBase(format!("unknown activation {x}"))),
        };
        let mut m = Mlp::zeros(&sizes, act);
        m.set_params(&self.vector()?)
            .map_err(|e| Error::KnowledgeBase(format!("network parameters: {e}")))?;
        Ok(m)
    }
}

fn finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::KnowledgeBase(format!("non-finite {what}")));
    }
    Ok(())
}

impl KnowledgeBase {
    pub fn new(codec: CodecParams) -> Self {
        Self {
            codec,
            str_weights: None,
            policy: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut codec = Writer::default();
        let s = self.codec.shape;
        for v in [s.c, s.w, s.h, s.d, s.n_classes, s.hidden] {
            codec.u32(v);
        }
        codec.u64(self.codec.seed);
        codec.f64(self.codec.train_accuracy.unwrap_or(f64::NAN));
        codec.vector(&self.codec.encoder_weights);
        codec.vector(&self.codec.encoder_bias);
        codec.mlp(&self.codec.head);

        let mut out = Writer::default();
        out.0.extend_from_slice(MAGIC);
        out.u16(VERSION);
        out.u64(codec.0.len() as u64);
        out.0.extend(codec.0);
        if let Some(g) = &self.str_weights {
            let mut body = Writer::default();
            body.vector(g);
            out.section(STR_TAG, body);
        }
        if let Some(p) = &self.policy {
            let mut body = Writer::default();
            body.mlp(&p.actor);
            body.mlp(&p.critic);
            out.section(POLICY_TAG, body);
        }
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(Error::KnowledgeBase("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::KnowledgeBase(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let mut c = Reader { buf: r.take(len)? };
        let dims = (0..6).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let shape = CodecShape {
            c: dims[0],
            w: dims[1],
            h: dims[2],
            d: dims[3],
            n_classes: dims[4],
            hidden: dims[5],
        };
        let seed = c.u64()?;
        let acc = c.f64()?;
        let encoder_weights = c.vector()?;
        let encoder_bias = c.vector()?;
        let head = c.mlp()?;
        if encoder_weights.len() != shape.features() * shape.d
            || encoder_bias.len() != shape.features()
            || head.sizes() != [shape.features(), shape.hidden, shape.n_classes]
        {
            return Err(Error::KnowledgeBase("codec block does not match its shape".into()));
        }
        finite(&encoder_weights, "encoder weights")?;
        finite(&encoder_bias, "encoder bias")?;
        finite(head.params(), "task head")?;
        let mut kb = Self::new(CodecParams {
            shape,
            encoder_weights,
            encoder_bias,
            head,
            seed,
            train_accuracy: (!acc.is_nan()).then_some(acc),
        });
        while !r.buf.is_empty() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
            let len = r.u64()? as usize;
            let mut body = Reader { buf: r.take(len)? };
            match &tag {
                t if t == STR_TAG => {
                    let g = body.vector()?;
                    finite(&g, "task relevance")?;
                    if g.len() != shape.c {
                        return Err(Error::KnowledgeBase(format!(
                            "{} task-relevance weights for {} semantics",
                            g.len(),
                            shape.c
                        )));
                    }
                    kb.str_weights = Some(g);
                }
                t if t == POLICY_TAG => {
                    let policy = PolicyParams {
                        actor: body.mlp()?,
                        critic: body.mlp()?,
                    };
                    finite(policy.actor.params(), "actor")?;
                    finite(policy.critic.params(), "critic")?;
                    kb.policy = Some(policy);
                }
                _ => {}
            }
        }
        Ok(kb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::KnowledgeBase(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
