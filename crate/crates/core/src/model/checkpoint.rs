//! Head checkpoint: `MFHD`, version `u32 = 1`, architecture tag `u32`
//! (0 linear, 1 mlp1), `d`, `e`, `K` as `u64`, the flat parameter vector as
//! `f64`, then the `K` class identity ids as `u32`. Little-endian throughout.

use std::path::Path;

use super::{Architecture, EmbeddingHead, LabeledHead};
use crate::dataset::io::ByteCursor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MFHD";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &LabeledHead, path: &Path) -> Result<()> {
    let h = &model.head;
    let mut out = Vec::with_capacity(40 + 8 * h.param_count() + 4 * h.num_classes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let tag: u32 = match h.architecture() {
        Architecture::Linear => 0,
        Architecture::Mlp1 => 1,
    };
    out.extend_from_slice(&tag.to_le_bytes());
    for dim in [h.input_dim(), h.embed_dim(), h.num_classes()] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for p in h.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for &c in &model.class_labels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LabeledHead> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = ByteCursor::new(&bytes);
    if cur.take(4)? != MAGIC {
        return Err(Error::Format(format!("{}: missing MFHD magic", path.display())));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = match cur.u32()? {
        0 => Architecture::Linear,
        1 => Architecture::Mlp1,
        t => return Err(Error::Format(format!("unknown architecture tag {t}"))),
    };
    let d = cur.u64()? as usize;
    let e = cur.u64()? as usize;
    let k = cur.u64()? as usize;
    let count = match arch {
        Architecture::Linear => k * d + k,
        Architecture::Mlp1 => e * d + e + k * e + k,
    };
    let params = (0..count).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let classes = (0..k).map(|_| cur.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    LabeledHead::new(EmbeddingHead::from_params(arch, d, e, k, params)?, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_head;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Architecture::Linear, Architecture::Mlp1] {
            let head = init_head(arch, 6, 4, 3, 17).unwrap();
            let model = LabeledHead::new(head, vec![1, 4, 8]).unwrap();
            let p = dir.path().join(format!("{arch}.ckpt"));
            save_checkpoint(&model, &p).unwrap();
            assert_eq!(load_checkpoint(&p).unwrap(), model);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"MFIDxxxx").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }
}
