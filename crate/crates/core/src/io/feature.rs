//! `RIDF` feature-map files: `"RIDF" | version u32 | H u32 | W u32 | C u32 | f32[H·W·C]`.

use std::path::Path;

use super::binary::{count_u32, put_f32s, put_u32, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::head::FeatureMap;

pub const FEATURE_MAGIC: &[u8; 4] = b"RIDF";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_feature(map: &FeatureMap) -> Result<Vec<u8>> {
    if let Some(i) = map.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("feature map value {i} is not finite")));
    }
    let mut out = Vec::with_capacity(20 + 4 * map.values.len());
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION);
    for d in [map.height, map.width, map.channels] {
        put_u32(&mut out, count_u32(d, "dimension")?);
    }
    put_f32s(&mut out, &map.values);
    Ok(out)
}

pub fn decode_feature(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(FEATURE_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(r.error(at, format!("unsupported feature version {version}")));
    }
    let at = r.offset();
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let c = r.u32("channels")? as usize;
    if h == 0 || w == 0 || c == 0 {
        return Err(r.error(at, format!("empty geometry {h}x{w}x{c}")));
    }
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| r.error(at, "geometry overflows"))?;
    let values = r.f32s(n, "payload")?;
    r.finish()?;
    FeatureMap::new(h, w, c, values)
}

pub fn write_feature(path: &Path, map: &FeatureMap) -> Result<()> {
    write_file(path, &encode_feature(map)?)
}

pub fn read_feature(path: &Path) -> Result<FeatureMap> {
    decode_feature(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> FeatureMap {
        FeatureMap::new(2, 1, 3, vec![0.0, -1.5, 2.25, f32::MAX, f32::MIN_POSITIVE, -0.0]).unwrap()
    }

    #[test]
    fn layout() {
        let b = encode_feature(&map()).unwrap();
        assert_eq!(&b[..4], b"RIDF");
        assert_eq!(b.len(), 20 + 24);
        assert_eq!(&b[8..20], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[24..28], &(-1.5f32).to_le_bytes());
    }

    #[test]
    fn roundtrip_and_rejections() {
        let p = Path::new("m.ridf");
        let b = encode_feature(&map()).unwrap();
        let back = decode_feature(&b, p).unwrap();
        assert_eq!(encode_feature(&back).unwrap(), b);

        match decode_feature(&b[..30], p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        let mut bad = b.clone();
        bad[3] = b'G';
        assert!(matches!(decode_feature(&bad, p), Err(Error::Format { offset: 0, .. })));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(decode_feature(&bad, p), Err(Error::Format { offset: 4, .. })));
        let mut bad = b.clone();
        bad[8] = 0;
        assert!(matches!(decode_feature(&bad, p), Err(Error::Format { offset: 8, .. })));
        let mut long = b.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_feature(&long, p), Err(Error::Format { offset: 44, .. })));

        let nan = FeatureMap::new(1, 1, 1, vec![f32::NAN]).unwrap();
        assert!(encode_feature(&nan).is_err());
    }
}
