//! Versioned little-endian binary checkpoints for networks and the
//! knowledge dataset.

use std::path::Path;

use saliency_core::drqn::{Arch, QNetwork};
use saliency_core::hog::{HogDescriptor, HOG_LEN};
use saliency_core::knowledge::{Item, KnowledgeDataset};

const NET_MAGIC: &[u8; 8] = b"SRLNET\0\0";
const KNOWLEDGE_MAGIC: &[u8; 8] = b"SRLKNOW\0";
pub const FORMAT_VERSION: u32 = 1;
const NO_ASSIGNMENT: u32 = u32::MAX;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {0} checkpoint")]
    Magic(&'static str),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint architecture has {planes} planes and {actions} actions, expected {want_planes} and {want_actions}")]
    Arch { planes: usize, actions: usize, want_planes: usize, want_actions: usize },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 8], what: &'static str) -> Result<(), CheckpointError> {
        if self.take(8).map_err(|_| CheckpointError::Magic(what))? != magic {
            return Err(CheckpointError::Magic(what));
        }
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(CheckpointError::Version(v)),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// magic, version, architecture (planes, actions, then the remaining
/// shape fields), parameter count, f64 parameters.
pub fn encode_network(net: &QNetwork) -> Vec<u8> {
    let a = net.arch();
    let mut out = Vec::with_capacity(64 + net.params().len() * 8);
    out.extend_from_slice(NET_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for v in [
        a.planes,
        a.actions,
        a.height,
        a.width,
        a.conv1_filters,
        a.conv1_kernel,
        a.conv1_stride,
        a.conv2_filters,
        a.conv2_kernel,
        a.conv2_stride,
        a.hidden,
    ] {
        put_u32(&mut out, v as u32);
    }
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_network(data: &[u8]) -> Result<QNetwork, CheckpointError> {
    let mut r = Reader { data, pos: 0 };
    r.header(NET_MAGIC, "network")?;
    let mut f = [0usize; 11];
    for v in &mut f {
        *v = r.u32()? as usize;
    }
    let arch = Arch {
        planes: f[0],
        actions: f[1],
        height: f[2],
        width: f[3],
        conv1_filters: f[4],
        conv1_kernel: f[5],
        conv1_stride: f[6],
        conv2_filters: f[7],
        conv2_kernel: f[8],
        conv2_stride: f[9],
        hidden: f[10],
    };
    if arch.conv1_kernel == 0 || arch.conv1_stride == 0 || arch.conv2_kernel == 0 || arch.conv2_stride == 0 || arch.conv1_kernel > arch.height.min(arch.width) {
        return Err(CheckpointError::Corrupt("degenerate architecture".into()));
    }
    let n = r.u64()? as usize;
    if n != arch.layout().total {
        return Err(CheckpointError::Corrupt(format!("{n} parameters for an architecture of {}", arch.layout().total)));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(r.f64()?);
    }
    QNetwork::from_params(arch, params).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

/// Loads a network and checks it against the expected input/output shape.
pub fn decode_network_for(data: &[u8], planes: usize, actions: usize) -> Result<QNetwork, CheckpointError> {
    let net = decode_network(data)?;
    let a = net.arch();
    if a.planes != planes || a.actions != actions {
        return Err(CheckpointError::Arch { planes: a.planes, actions: a.actions, want_planes: planes, want_actions: actions });
    }
    Ok(net)
}

/// magic, version, count, dataset version, seen, centroid count, then
/// per item 81×f32 descriptor, u64 step and u32 assignment, then the
/// centroids as 81×f64.
pub fn encode_knowledge(kd: &KnowledgeDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(KNOWLEDGE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.extend_from_slice(&(kd.len() as u64).to_le_bytes());
    put_u32(&mut out, kd.version());
    out.extend_from_slice(&kd.seen().to_le_bytes());
    put_u32(&mut out, kd.centroids().len() as u32);
    for it in kd.items() {
        for v in it.descriptor.0 {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&it.step.to_le_bytes());
        put_u32(&mut out, it.assignment.map_or(NO_ASSIGNMENT, |a| a as u32));
    }
    for c in kd.centroids() {
        for v in c.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Descriptors come back at f32 precision.
pub fn decode_knowledge(data: &[u8], seed: u64) -> Result<KnowledgeDataset, CheckpointError> {
    let mut r = Reader { data, pos: 0 };
    r.header(KNOWLEDGE_MAGIC, "knowledge")?;
    let count = r.u64()? as usize;
    let version = r.u32()?;
    let seen = r.u64()?;
    let k = r.u32()? as usize;
    if count.saturating_mul(HOG_LEN * 4 + 12) > data.len() {
        return Err(CheckpointError::Truncated);
    }
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let mut d = HogDescriptor::ZERO;
        for v in d.0.iter_mut() {
            *v = r.f32()? as f64;
        }
        let step = r.u64()?;
        let a = r.u32()?;
        let assignment = if a == NO_ASSIGNMENT { None } else { Some(a as usize) };
        if assignment.is_some_and(|a| a >= k) {
            return Err(CheckpointError::Corrupt(format!("assignment {a} with {k} centroids")));
        }
        items.push(Item { descriptor: d, step, assignment });
    }
    let mut centroids = Vec::with_capacity(k);
    for _ in 0..k {
        let mut c = HogDescriptor::ZERO;
        for v in c.0.iter_mut() {
            *v = r.f64()?;
        }
        centroids.push(c);
    }
    if r.pos != data.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(KnowledgeDataset::from_parts(items, centroids, version, seen, seed))
}

pub fn save_network(path: &Path, net: &QNetwork) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, encode_network(net))?)
}

pub fn load_network(path: &Path) -> Result<QNetwork, CheckpointError> {
    decode_network(&std::fs::read(path)?)
}

pub fn save_knowledge(path: &Path, kd: &KnowledgeDataset) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, encode_knowledge(kd))?)
}

pub fn load_knowledge(path: &Path, seed: u64) -> Result<KnowledgeDataset, CheckpointError> {
    decode_knowledge(&std::fs::read(path)?, seed)
}
