//! "MFW1" checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MFW1"
//! repeated until EOF:
//!     name_len, name (UTF-8), rank, extent × rank, f32 payload (LE)
//! ```

use std::io::{self, Read, Write};

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFW1";

pub fn write_checkpoint<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> io::Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |off: usize, what: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{what} at byte {off}"));
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad(0, "missing MFW1 magic"));
    }
    let mut off = 4;
    let take = |off: &mut usize, n: usize| -> io::Result<&[u8]> {
        let s = bytes.get(*off..*off + n).ok_or_else(|| bad(*off, "truncated record"))?;
        *off += n;
        Ok(s)
    };
    let u32_at = |off: &mut usize| -> io::Result<usize> {
        let b = take(off, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    let mut out = Vec::new();
    while off < bytes.len() {
        let name_len = u32_at(&mut off)?;
        let start = off;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec()).map_err(|_| bad(start, "name is not UTF-8"))?;
        let rank = u32_at(&mut off)?;
        let shape = (0..rank).map(|_| u32_at(&mut off)).collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload_at = off;
        let data = take(&mut off, n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(payload_at, &e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}
