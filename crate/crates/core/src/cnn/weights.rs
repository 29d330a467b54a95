//! Weight file: architecture descriptor plus every persisted array.
//!
//! ```text
//! "LSCNNWT\0"  u32 format_version  str descriptor_text
//! u32 block_count
//! { str name  u32 rank  u64 dims[rank]  f32 values[product(dims)] }*
//! u32 crc32(all preceding bytes)
//! ```

use std::path::Path;

use super::{Descriptor, Network};
use crate::codec::{Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LSCNNWT\0";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

struct Block {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

pub fn weights_to_bytes(network: &Network) -> Vec<u8> {
    let mut blocks: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    network.state(&mut |name, dims, values| {
        blocks.push((name, dims, values.iter().map(|&v| v as f32).collect()))
    });
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(WEIGHTS_FORMAT_VERSION);
    w.str(&network.descriptor().to_text());
    w.u32(blocks.len() as u32);
    for (name, dims, values) in blocks {
        w.str(&name);
        w.u32(dims.len() as u32);
        dims.iter().for_each(|&d| w.u64(d as u64));
        values.iter().for_each(|&v| w.f32(v));
    }
    w.finish()
}

fn parse(bytes: &[u8]) -> Result<(Descriptor, Vec<Block>)> {
    let mut r = Reader::checked(bytes)?;
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a CNN weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHTS_FORMAT_VERSION,
        });
    }
    let descriptor = Descriptor::from_text(r.str()?)?;
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = r.str()?.to_string();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        blocks.push(Block { name, dims, values });
    }
    r.expect_end("weight file")?;
    Ok((descriptor, blocks))
}

/// Copies file blocks into `network`, which must have the same parameter
/// layout. Mismatches name the first offending layer.
fn fill(network: &mut Network, blocks: Vec<Block>) -> Result<()> {
    let mut blocks = blocks.into_iter();
    let mut error: Option<Error> = None;
    network.state_mut(&mut |name, dims, values| {
        if error.is_some() {
            return;
        }
        let layer = format!(
            "layer {}",
            name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l)
        );
        match blocks.next() {
            None => {
                error = Some(Error::Shape {
                    layer,
                    reason: format!("weight file has no block for `{name}`"),
                })
            }
            Some(b) if b.name != name || b.dims != dims => {
                error = Some(Error::Shape {
                    layer,
                    reason: format!(
                        "expected `{name}` with dims {dims:?}, file has `{}` with dims {:?}",
                        b.name, b.dims
                    ),
                })
            }
            Some(b) => {
                for (dst, src) in values.iter_mut().zip(b.values) {
                    *dst = src as f64;
                }
            }
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if let Some(extra) = blocks.next() {
        return Err(Error::Shape {
            layer: format!(
                "layer {}",
                extra
                    .name
                    .rsplit_once('.')
                    .map_or(extra.name.as_str(), |(l, _)| l)
            ),
            reason: "weight file has more blocks than the architecture".into(),
        });
    }
    Ok(())
}

/// Rebuilds the network described in the file.
pub fn weights_from_bytes(bytes: &[u8]) -> Result<Network> {
    let (descriptor, blocks) = parse(bytes)?;
    let mut network = Network::new(&descriptor, 0)?;
    fill(&mut network, blocks)?;
    Ok(network)
}

/// Loads into an architecture fixed by the caller; a file written for a
/// different architecture yields a shape error naming the layer.
pub fn weights_from_bytes_for(bytes: &[u8], expected: &Descriptor) -> Result<Network> {
    let (_, blocks) = parse(bytes)?;
    let mut network = Network::new(expected, 0)?;
    fill(&mut network, blocks)?;
    Ok(network)
}

pub fn save_weights(network: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(network)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    weights_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
