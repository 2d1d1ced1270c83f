//! Binary parameter dump.
//!
//! Layout, little-endian: magic `MWT1`, method name (u32 length + UTF-8),
//! activation code (u8), tensor count (u32), then per tensor rows (u32),
//! cols (u32) and `rows × cols` f64 values; finally the global sense count
//! (u32) and each sense name (u32 length + UTF-8). Tensors are the shared
//! weight and bias, followed by the global head weight and bias when the
//! sense list is non-empty.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::baselines::{GlobalHead, NeModel};
use crate::error::{Error, Result};
use crate::meta::Method;
use crate::nn::{Activation, SharedBlock, TaskHead};
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MWT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub theta: SharedBlock,
    pub global: Option<GlobalHead>,
}

impl Checkpoint {
    pub fn ne_model(&self) -> Option<NeModel> {
        self.global.as_ref().map(|g| NeModel {
            theta: self.theta.clone(),
            global: g.clone(),
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_str(&mut w, &self.method.to_string())?;
        w.write_all(&[self.theta.activation.code()])?;
        let mut tensors = vec![&self.theta.weight, &self.theta.bias];
        if let Some(g) = &self.global {
            tensors.push(&g.head.weight);
            tensors.push(&g.head.bias);
        }
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for t in tensors {
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        let senses = self.global.as_ref().map_or(&[][..], |g| &g.senses[..]);
        w.write_all(&(senses.len() as u32).to_le_bytes())?;
        for s in senses {
            write_str(&mut w, s)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read, source: &str) -> Result<Self> {
        let mut r = Cursor {
            inner: r,
            offset: 0,
            source,
        };
        let magic = r.bytes(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.error(format!(
                "bad magic {:?}, expected \"MWT1\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let method: Method = r.string()?.parse().map_err(|e| r.error(format!("{e}")))?;
        let code = r.bytes(1)?[0];
        let activation = Activation::from_code(code)
            .ok_or_else(|| r.error(format!("unknown activation {code}")))?;
        let n = r.u32()? as usize;
        if n != 2 && n != 4 {
            return Err(r.error(format!("expected 2 or 4 tensors, found {n}")));
        }
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.bytes(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Matrix::new(rows, cols, data)?);
        }
        let n_senses = r.u32()? as usize;
        let senses = (0..n_senses)
            .map(|_| r.string())
            .collect::<Result<Vec<_>>>()?;
        let mut it = tensors.into_iter();
        let weight = it.next().expect("counted");
        let bias = it.next().expect("counted");
        if bias.shape() != (1, weight.cols()) {
            return Err(r.error("shared bias does not match weight".into()));
        }
        let theta = SharedBlock {
            weight,
            bias,
            activation,
        };
        let global = match (it.next(), it.next()) {
            (Some(weight), Some(bias)) => {
                if weight.rows() != theta.hidden_dim() || bias.shape() != (1, weight.cols()) {
                    return Err(r.error("global head does not match the shared block".into()));
                }
                Some(
                    GlobalHead::new(TaskHead { weight, bias }, senses)
                        .map_err(|e| r.error(e.to_string()))?,
                )
            }
            _ if senses.is_empty() => None,
            _ => return Err(r.error("sense list without a global head".into())),
        };
        Ok(Self {
            method,
            theta,
            global,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(f), &path.display().to_string())
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

struct Cursor<'a, R> {
    inner: R,
    offset: u64,
    source: &'a str,
}

impl<R: Read> Cursor<'_, R> {
    fn error(&self, message: String) -> Error {
        Error::format(self.source, format!("byte {}", self.offset), message)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if got < n {
            return Err(self.error(format!("truncated: wanted {n} bytes, found {got}")));
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.bytes(n)?;
        String::from_utf8(b).map_err(|_| self.error("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::meta::MetaMethod;

    fn block() -> SharedBlock {
        SharedBlock::init(3, 4, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn roundtrip_shared_only() {
        let ck = Checkpoint {
            method: Method::Meta(MetaMethod::ProtoFomaml),
            theta: block(),
            global: None,
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(&buf[..], "mem").unwrap(), ck);
    }

    #[test]
    fn roundtrip_with_global_head() {
        let head = crate::nn::init_head(4, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ck = Checkpoint {
            method: Method::NeBaseline,
            theta: block(),
            global: Some(
                GlobalHead::new(head, vec!["a.1".into(), "b.1".into(), "b.2".into()]).unwrap(),
            ),
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(&buf[..], "mem").unwrap(), ck);
    }

    #[test]
    fn corrupt_input_reports_offset() {
        let ck = Checkpoint {
            method: Method::Meta(MetaMethod::ProtoNet),
            theta: block(),
            global: None,
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let err = Checkpoint::read_from(&buf[..buf.len() - 3], "ck.bin").unwrap_err();
        assert!(err.to_string().contains("ck.bin: byte"), "{err}");
        buf[0] = b'X';
        let err = Checkpoint::read_from(&buf[..], "ck.bin").unwrap_err();
        assert!(err.to_string().contains("MWT1"));
    }
}
