//! Binary checkpoint format.
//!
//! ```text
//! "ISOPRUNE1"
//! u32 arch id length, arch id bytes (e.g. MLP7_LINEAR)
//! u32 tensor count
//! per tensor: u32 name length, name bytes ("layer{k}.weight"),
//!             u32 rank, rank x u32 dims, f64 values
//! u64 FNV-1a checksum of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::nn::{ArchId, Network};

pub const MAGIC: &[u8; 9] = b"ISOPRUNE1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn tensor_name(k: usize) -> String {
    format!("layer{k}.weight")
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::CheckpointFormat(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let arch = net
        .arch()
        .ok_or_else(|| Error::CheckpointFormat("only built-in architectures can be checkpointed".into()))?;
    let mut out = MAGIC.to_vec();
    let id = arch.as_str().as_bytes();
    put_u32(&mut out, id.len())?;
    out.extend_from_slice(id);
    let weights = net.weights();
    put_u32(&mut out, weights.len())?;
    for (k, w) in weights.into_iter().enumerate() {
        let name = tensor_name(k);
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, w.rank())?;
        for &d in w.shape() {
            put_u32(&mut out, d)?;
        }
        for v in w.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CheckpointFormat(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CheckpointFormat("name is not UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::CheckpointFormat("file too short for checksum".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::CheckpointChecksum { stored, computed });
    }
    let mut r = Reader {
        bytes: payload,
        pos: MAGIC.len(),
    };
    let arch: ArchId = r.string()?.parse()?;
    let count = r.u32()?;
    let mut weights = Vec::with_capacity(count);
    for k in 0..count {
        let name = r.string()?;
        if name != tensor_name(k) {
            return Err(Error::CheckpointFormat(format!(
                "tensor {k} is named `{name}`, expected `{}`",
                tensor_name(k)
            )));
        }
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::CheckpointShape(format!("{name}: shape {shape:?} overflows")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::CheckpointShape(format!("{name}: too large")))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        weights.push(Tensor::new(shape, data).map_err(|e| Error::CheckpointShape(format!("{name}: {e}")))?);
    }
    if r.pos != payload.len() {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes after the last tensor",
            payload.len() - r.pos
        )));
    }
    Network::from_weights(arch, weights).map_err(|e| match e {
        Error::CheckpointShape(_) => e,
        other => Error::CheckpointShape(format!("{arch}: {other}")),
    })
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::pruning::{apply_plan, make_plan, PruneSpec};

    fn net(arch: ArchId) -> Network {
        let mut n = Network::build(arch);
        n.init_orthogonal(9);
        n
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in ArchId::ALL {
            let n = net(arch);
            let bytes = encode_checkpoint(&n).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back.arch(), Some(arch));
            for (a, b) in n.weights().iter().zip(back.weights()) {
                assert_eq!(a.shape(), b.shape());
                assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&net(ArchId::Mlp7Linear)).unwrap();
        assert_eq!(&bytes[..9], b"ISOPRUNE1");
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 11);
        assert_eq!(&bytes[13..24], b"MLP7_LINEAR");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 7);
    }

    #[test]
    fn errors_are_distinct() {
        let good = encode_checkpoint(&net(ArchId::Mlp7Relu)).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad_magic), Err(Error::CheckpointMagic)));

        let mut flipped = good.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::CheckpointChecksum { .. })));

        // Valid checksum, but the first weight has the wrong fan-in for the arch.
        let mut wrong = Network::custom(
            vec![1, 28, 28],
            vec![LayerSpec::Dense {
                in_features: 784,
                out_features: 10,
            }],
        )
        .unwrap();
        wrong.init_orthogonal(1);
        let mut body = MAGIC.to_vec();
        put_u32(&mut body, 11).unwrap();
        body.extend_from_slice(b"MLP7_LINEAR");
        put_u32(&mut body, 1).unwrap();
        let name = tensor_name(0);
        put_u32(&mut body, name.len()).unwrap();
        body.extend_from_slice(name.as_bytes());
        put_u32(&mut body, 2).unwrap();
        put_u32(&mut body, 10).unwrap();
        put_u32(&mut body, 784).unwrap();
        for v in wrong.weights()[0].data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let sum = fnv1a64(&body);
        body.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(decode_checkpoint(&body), Err(Error::CheckpointShape(_))));
    }

    #[test]
    fn pruned_shapes_are_recorded() {
        let n = net(ArchId::Mlp7Linear);
        let plan = make_plan(&n, &PruneSpec::default_for(ArchId::Mlp7Linear, 0.5).unwrap()).unwrap();
        let p = apply_plan(&n, &plan).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back.weights()[0].shape(), &[50, 784]);
        assert_eq!(back.weights()[6].shape(), &[10, 50]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let n = net(ArchId::Lenet5Linear);
        save_checkpoint(&n, &path).unwrap();
        let first = fs::read(&path).unwrap();
        save_checkpoint(&load_checkpoint(&path).unwrap(), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }
}
