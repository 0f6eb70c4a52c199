//! Named-tensor container: a plain-text header of `meta` key/value lines and
//! `tensor <name> <shape> <byte-offset> <count>` entries, terminated by `end`,
//! followed by the raw little-endian `f64` payload.
//!
//! ```text
//! CORNERSTR-CHECKPOINT 1
//! meta model_config {"d_model":64,...}
//! tensor param.dec.0.ff.1.b 256 0 256
//! tensor param.dec.0.ff.1.w 64,256 2048 16384
//! end
//! <payload bytes>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "CORNERSTR-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, NamedTensor>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.tensors.insert(
            name.into(),
            NamedTensor {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.get(name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            if !valid_token(k) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("unserializable meta entry {k:?}")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            if !valid_token(name) {
                return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
            }
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "tensor {name} {} {offset} {}\n",
                dims.join(","),
                t.data.len()
            ));
            offset += t.data.len() * 8;
        }
        header.push_str("end\n");
        let mut bytes = header.into_bytes();
        bytes.reserve(offset);
        for t in self.tensors.values() {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| bad("header is not UTF-8".into()))?
                .to_string();
            *pos += nl + 1;
            Ok(line)
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(bad("missing checkpoint magic line".into()));
        }
        let mut ckpt = Checkpoint::new();
        let mut entries = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, dims, off, count] = parts[..] else {
                    return Err(bad(format!("malformed tensor entry {line:?}")));
                };
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape in {line:?}")))?;
                let off: usize = off.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
                let count: usize =
                    count.parse().map_err(|_| bad(format!("bad count in {line:?}")))?;
                if shape.iter().product::<usize>() != count {
                    return Err(bad(format!("shape/count disagree in {line:?}")));
                }
                entries.push((name.to_string(), shape, off, count));
            } else {
                return Err(bad(format!("unknown header line {line:?}")));
            }
        }
        let payload = &bytes[pos..];
        for (name, shape, off, count) in entries {
            let end = off + count * 8;
            if end > payload.len() {
                return Err(bad(format!("payload too short for tensor {name}")));
            }
            let data = payload[off..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ckpt.tensors.insert(name, NamedTensor { shape, data });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact(values in prop::collection::vec(any::<f64>(), 1..40),
                               extra in prop::collection::vec(-1e300f64..1e300, 1..6)) {
            let mut c = Checkpoint::new();
            c.set_meta("model.d_model", 64);
            c.set_meta("note", "two words");
            c.insert("a.weight", &[values.len()], values.clone());
            c.insert("b", &[1, extra.len()], extra.clone());
            let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
            let a = &back.get("a.weight").unwrap().data;
            prop_assert_eq!(a.len(), values.len());
            for (x, y) in a.iter().zip(&values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(back.meta("note"), Some("two words"));
            prop_assert_eq!(&back.get("b").unwrap().shape, &vec![1, extra.len()]);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"hello\n").is_err());
        assert!(Checkpoint::from_bytes(format!("{MAGIC}\ntensor x 2 0 2\nend\n").as_bytes()).is_err());
    }
}
