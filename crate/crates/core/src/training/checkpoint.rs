//! `RIDC` checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "RIDC" | version u32 | record count u32
//! record*: name (u32 length + UTF-8) | rank u32 | dims u32[rank] | values f32[Π dims]
//! metadata JSON (u32 length + UTF-8) | epoch u32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::Result;
use crate::head::HeadConfig;
use crate::io::binary::{count_u32, put_f32s, put_string, put_u32, read_file, write_file, ByteReader};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RIDC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything besides the tensors needed to rebuild and audit a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub head: HeadConfig,
    pub train: TrainConfig,
    /// Number of training identities (classifier output width).
    pub classes: usize,
    /// Digest of the sampler's random state after the last step.
    pub rng_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor<f32>)>,
    pub meta: CheckpointMeta,
    pub epoch: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, count_u32(self.params.len(), "record count")?);
        for (name, t) in &self.params {
            put_string(&mut out, name);
            put_u32(&mut out, count_u32(t.rank(), "rank")?);
            for &d in t.shape() {
                put_u32(&mut out, count_u32(d, "dimension")?);
            }
            put_f32s(&mut out, t.data());
        }
        put_string(&mut out, &serde_json::to_string(&self.meta)?);
        put_u32(&mut out, self.epoch);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(at, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32("record count")? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string("record name")?;
            let at = r.offset();
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(r.error(at, format!("implausible rank {rank} for {name}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            let at = r.offset();
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.ok_or_else(|| r.error(at, format!("dimensions of {name} overflow")))?;
            let values = r.f32s(n, "record values")?;
            let t = Tensor::new(dims, values).map_err(|e| r.error(at, e.to_string()))?;
            params.push((name, t));
        }
        let at = r.offset();
        let json = r.string("metadata")?;
        let meta: CheckpointMeta =
            serde_json::from_str(&json).map_err(|e| r.error(at, format!("bad metadata JSON: {e}")))?;
        let epoch = r.u32("epoch")?;
        r.finish()?;
        Ok(Checkpoint { params, meta, epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: vec![
                ("a.weight".into(), Tensor::new(vec![2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.0]).unwrap()),
                ("a.bias".into(), Tensor::from_vec(vec![0.25, 0.5, 0.75])),
            ],
            meta: CheckpointMeta {
                head: HeadConfig::default(),
                train: TrainConfig::default(),
                classes: 3,
                rng_digest: "00ff".into(),
            },
            epoch: 12,
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RIDC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()), 12);
    }

    #[test]
    fn corrupted_inputs_are_located() {
        let bytes = sample().to_bytes().unwrap();
        let p = Path::new("x.ckpt");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::Format { offset: 4, .. })));
        for cut in [3, 10, 30, bytes.len() - 2] {
            let err = Checkpoint::from_bytes(&bytes[..cut], p).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "{err}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long, p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            values in proptest::collection::vec(any::<u32>(), 1..64),
            epoch in any::<u32>(),
        ) {
            let floats: Vec<f32> = values.iter().map(|&b| f32::from_bits(b)).collect();
            let mut ck = sample();
            ck.params.push(("x".into(), Tensor::from_vec(floats)));
            ck.epoch = epoch;
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
            let orig: Vec<u32> = ck.params[2].1.data().iter().map(|f| f.to_bits()).collect();
            let got: Vec<u32> = back.params[2].1.data().iter().map(|f| f.to_bits()).collect();
            prop_assert_eq!(orig, got);
        }
    }
}
