//! Binary checkpoint format.
//!
//! ```text
//! "FAUD"            4 bytes magic
//! version           u16 = 1
//! block count       u16
//! per block:
//!   name            u8 length + UTF-8 bytes
//!   trainable       u8 (0/1)
//!   layer count     u16
//!   per layer:
//!     kind tag      u8   (0 conv2d, 1 maxpool2x2, 2 dense, 3 relu, 4 softmax, 5 flatten)
//!     rank          u8   (0 for parameter-free layers)
//!     dims          u32 x rank (weight tensor shape)
//!     weights       f32 x prod(dims)
//!     bias          f32 x dims[rank-1]
//! seed              u64
//! epochs            u32
//! ```
//!
//! All integers and floats are little-endian. The input size is not stored:
//! it is recovered from the head's fan-in and the number of pooling layers
//! (inputs are square).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::layers::{Layer, LayerKind};
use crate::network::{Block, Network, TrainMeta};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FAUD";
pub const VERSION: u16 = 1;

pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.blocks().len() as u16).to_le_bytes());
    for block in net.blocks() {
        let name = block.name.as_bytes();
        out.push(name.len() as u8);
        out.extend_from_slice(name);
        out.push(block.trainable as u8);
        out.extend_from_slice(&(block.layers.len() as u16).to_le_bytes());
        for layer in &net.layers()[block.layers.clone()] {
            out.push(layer.kind().tag());
            match (layer.weights(), layer.bias()) {
                (Some(w), Some(b)) => {
                    out.push(w.rank() as u8);
                    for &d in w.shape() {
                        out.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for &x in w.data().iter().chain(b.data()) {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                _ => out.push(0),
            }
        }
    }
    let meta = net.meta();
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.epochs.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let block_count = r.u16()? as usize;
    let mut blocks = Vec::with_capacity(block_count);
    let mut layers: Vec<Layer<f32>> = Vec::new();
    for _ in 0..block_count {
        let len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            x => return Err(Error::Checkpoint(format!("bad trainable flag {x}"))),
        };
        let count = r.u16()? as usize;
        let start = layers.len();
        for _ in 0..count {
            let tag = r.u8()?;
            let kind = LayerKind::from_tag(tag)
                .ok_or_else(|| Error::Checkpoint(format!("unknown layer tag {tag}")))?;
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let layer = if kind.has_params() {
                if rank == 0 {
                    return Err(Error::Checkpoint(format!("{kind:?} without weights")));
                }
                let n: usize = dims.iter().product();
                let w = Tensor::new(dims.clone(), r.f32s(n)?)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let out = dims[rank - 1];
                let b = Tensor::new(vec![out], r.f32s(out)?)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Layer::with_params(kind, w, b).map_err(|e| Error::Checkpoint(e.to_string()))?
            } else {
                if rank != 0 {
                    return Err(Error::Checkpoint(format!("{kind:?} carries dims")));
                }
                Layer::without_params(kind).map_err(|e| Error::Checkpoint(e.to_string()))?
            };
            layers.push(layer);
        }
        blocks.push(Block {
            name,
            layers: start..layers.len(),
            trainable,
        });
    }
    let meta = TrainMeta {
        seed: r.u64()?,
        epochs: r.u32()?,
    };
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let input_shape = infer_input_shape(&layers)?;
    Network::from_parts(input_shape, blocks, layers, meta)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

fn infer_input_shape(layers: &[Layer<f32>]) -> Result<[usize; 3]> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let first = layers
        .iter()
        .find(|l| l.kind() == LayerKind::Conv2d)
        .ok_or_else(|| bad("no conv layer"))?;
    let in_channels = first.weights().unwrap().shape()[2];
    let last_conv = layers
        .iter()
        .rev()
        .find(|l| l.kind() == LayerKind::Conv2d)
        .unwrap();
    let channels = last_conv.weights().unwrap().shape()[3];
    let dense = layers
        .iter()
        .find(|l| l.kind() == LayerKind::Dense)
        .ok_or_else(|| bad("no dense layer"))?;
    let fan_in = dense.weights().unwrap().shape()[0];
    if fan_in % channels != 0 {
        return Err(bad("head fan-in is not a multiple of the feature channels"));
    }
    let area = fan_in / channels;
    let side = (area as f64).sqrt().round() as usize;
    if side * side != area {
        return Err(bad("feature map is not square"));
    }
    let pools = layers
        .iter()
        .filter(|l| l.kind() == LayerKind::MaxPool2x2)
        .count();
    Ok([side << pools, side << pools, in_channels])
}

pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).with_path(path)?;
    f.write_all(&to_bytes(net)).with_path(path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .with_path(path)?;
    from_bytes(&buf)
}

/// Load weights into an existing network, which must have the same
/// architecture. On error `net` is left untouched.
pub fn load_checkpoint_into(net: &mut Network<f32>, path: &Path) -> Result<()> {
    let loaded = load_checkpoint(path)?;
    if loaded.architecture() != net.architecture() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint {:?} vs network {:?}",
            loaded.architecture(),
            net.architecture()
        )));
    }
    *net = loaded;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> Network<f32> {
        let mut n = Network::new(
            &Architecture::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        n.set_meta(TrainMeta { seed, epochs: 7 });
        n.set_trainable("block2", false).unwrap();
        n
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net(4);
        let bytes = to_bytes(&n);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(back.meta(), n.meta());
        assert_eq!(back.architecture(), Architecture::default());
        assert!(!back.is_trainable("block2").unwrap());
        for (a, b) in n.layers().iter().zip(back.layers()) {
            assert_eq!(
                a.weights().map(|w| w.data().to_vec()),
                b.weights().map(|w| w.data().to_vec())
            );
        }
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&net(1));
        assert_eq!(&bytes[..4], b"FAUD");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 6);
        assert_eq!(bytes[8] as usize, "block1".len());
        assert_eq!(&bytes[9..15], b"block1");
        assert_eq!(bytes[15], 1); // trainable
        assert_eq!(u16::from_le_bytes([bytes[16], bytes[17]]), 3);
        assert_eq!(bytes[18], 0); // conv tag
        assert_eq!(bytes[19], 4); // rank
        let tail = &bytes[bytes.len() - 12..];
        assert_eq!(u64::from_le_bytes(tail[..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(tail[8..].try_into().unwrap()), 7);
    }

    #[test]
    fn truncated_and_corrupt_inputs_fail() {
        let bytes = to_bytes(&net(2));
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }

    #[test]
    fn load_into_checks_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ckpt");
        save_checkpoint(&net(3), &path).unwrap();
        let mut same = net(9);
        load_checkpoint_into(&mut same, &path).unwrap();
        assert_eq!(to_bytes(&same), to_bytes(&net(3)));

        let arch = Architecture {
            num_classes: 2,
            ..Architecture::default()
        };
        let mut other = Network::<f32>::new(&arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = to_bytes(&other);
        assert!(matches!(
            load_checkpoint_into(&mut other, &path),
            Err(Error::ArchitectureMismatch(_))
        ));
        assert_eq!(to_bytes(&other), before);
    }
}
