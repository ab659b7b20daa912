//! `SPNM` checkpoint files: a JSON header with the task and configuration,
//! then one record per stored tensor (learnable and running statistics).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Task};
use crate::error::{Result, SpnError};
use crate::nn::Module;
use crate::tensor::FeatureTensor;

const MODEL_MAGIC: &[u8; 4] = b"SPNM";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    task: Task,
    config: ModelConfig,
}

fn put_u32(b: &mut Vec<u8>, v: usize) {
    b.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        task: model.task,
        config: model.config.clone(),
    };
    // Round-trip through Value so object keys come out sorted.
    let value = serde_json::to_value(&header).map_err(|e| SpnError::Config(e.to_string()))?;
    let json = serde_json::to_vec(&value).map_err(|e| SpnError::Config(e.to_string()))?;
    let mut b = Vec::new();
    b.extend_from_slice(MODEL_MAGIC);
    b.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut b, json.len());
    b.extend_from_slice(&json);
    model.visit(&mut |name, t, _| {
        put_u32(&mut b, name.len());
        b.extend_from_slice(name.as_bytes());
        put_u32(&mut b, t.shape().len());
        t.shape().iter().for_each(|&d| put_u32(&mut b, d));
        t.values()
            .iter()
            .for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
    });
    Ok(b)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(SpnError::format(self.origin, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(buf: &[u8], origin: &str) -> Result<Model> {
    let mut r = Cursor {
        buf,
        pos: 0,
        origin,
    };
    if r.take(4)? != MODEL_MAGIC {
        return Err(SpnError::format(origin, "bad magic, expected SPNM"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(SpnError::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    let hlen = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| SpnError::format(origin, format!("bad header: {e}")))?;

    let mut tensors = BTreeMap::new();
    while r.pos < buf.len() {
        let nlen = r.u32()?;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| SpnError::format(origin, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let bytes = r.take(
            count
                .checked_mul(8)
                .ok_or_else(|| SpnError::format(origin, format!("tensor {name} is too large")))?,
        )?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = FeatureTensor::new(&shape, values)
            .map_err(|e| SpnError::format(origin, format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(SpnError::format(origin, format!("duplicate tensor {name}")));
        }
    }

    let mut model = Model::build(&header.config, header.task, 0)
        .map_err(|e| SpnError::format(origin, format!("bad config: {e}")))?;
    let mut problem = None;
    model.visit_mut(&mut |name, t, _| match tensors.remove(name) {
        Some(stored) if stored.shape() == t.shape() => *t = stored,
        Some(stored) => {
            problem.get_or_insert(format!(
                "tensor {name} has shape {:?}, config implies {:?}",
                stored.shape(),
                t.shape()
            ));
        }
        None => {
            problem.get_or_insert(format!("missing tensor {name}"));
        }
    });
    if let Some(p) = problem {
        return Err(SpnError::format(origin, p));
    }
    if let Some(name) = tensors.keys().next() {
        return Err(SpnError::format(
            origin,
            format!("unexpected tensor {name}"),
        ));
    }
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?).map_err(|e| SpnError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let buf = fs::read(path).map_err(|e| SpnError::io(path, e))?;
    decode_checkpoint(&buf, &path.display().to_string())
}
