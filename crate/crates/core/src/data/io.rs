//! Flat binary formats, all integers little-endian.
//!
//! ```text
//! cube    "HSC1" height:u32 width:u32 bands:u32 f32 × (bands·height·width)   band-major
//! labels  "HSL1" height:u32 width:u32 u16 × (height·width)                   row-major
//! patches "HSP1" sp:u32 count:u32 classes:u32
//!         label:u16 × count, pixel:u32 × count, f32 × (count·3·sp·sp)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, HsiCube, LabelRaster, PatchSet};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";
pub const PATCH_MAGIC: &[u8; 4] = b"HSP1";

struct Cursor {
    bytes: Vec<u8>,
    off: usize,
}

impl Cursor {
    fn open<R: Read>(mut r: R, magic: &[u8; 4]) -> Result<Self, DataError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 4 || &bytes[..4] != magic {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(DataError::Format {
                offset: 0,
                detail: format!("expected magic {:?}, found {found:?}", std::str::from_utf8(magic).unwrap_or("")),
            });
        }
        Ok(Self { bytes, off: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        let left = self.bytes.len() - self.off;
        if left < n {
            return Err(DataError::Length { offset: self.off as u64, expected: n as u64, found: left as u64 });
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DataError> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn u16s(&mut self, n: usize) -> Result<Vec<u16>, DataError> {
        Ok(self.take(n * 2)?.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, DataError> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn finish(&self) -> Result<(), DataError> {
        if self.off != self.bytes.len() {
            return Err(DataError::Format {
                offset: self.off as u64,
                detail: format!("{} trailing bytes", self.bytes.len() - self.off),
            });
        }
        Ok(())
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), DataError> {
    let v = u32::try_from(v).map_err(|_| DataError::Parameter(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, vs: &[f32]) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(vs.len() * 4);
    vs.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_cube(mut w: impl Write, cube: &HsiCube) -> Result<(), DataError> {
    w.write_all(CUBE_MAGIC)?;
    put_u32(&mut w, cube.height)?;
    put_u32(&mut w, cube.width)?;
    put_u32(&mut w, cube.bands)?;
    put_f32s(&mut w, &cube.values)?;
    w.flush()?;
    Ok(())
}

pub fn read_cube(r: impl Read) -> Result<HsiCube, DataError> {
    let mut c = Cursor::open(r, CUBE_MAGIC)?;
    let (h, w, b) = (c.u32()?, c.u32()?, c.u32()?);
    let values = c.f32s(h * w * b)?;
    c.finish()?;
    HsiCube::new(h, w, b, values)
}

pub fn write_labels(mut w: impl Write, labels: &LabelRaster) -> Result<(), DataError> {
    w.write_all(LABEL_MAGIC)?;
    put_u32(&mut w, labels.height)?;
    put_u32(&mut w, labels.width)?;
    let mut buf = Vec::with_capacity(labels.labels.len() * 2);
    labels.labels.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_labels(r: impl Read) -> Result<LabelRaster, DataError> {
    let mut c = Cursor::open(r, LABEL_MAGIC)?;
    let (h, w) = (c.u32()?, c.u32()?);
    let labels = c.u16s(h * w)?;
    c.finish()?;
    LabelRaster::new(h, w, labels)
}

pub fn write_patches(mut w: impl Write, p: &PatchSet) -> Result<(), DataError> {
    w.write_all(PATCH_MAGIC)?;
    put_u32(&mut w, p.sp)?;
    put_u32(&mut w, p.len())?;
    put_u32(&mut w, p.classes)?;
    let mut buf = Vec::with_capacity(p.len() * 6);
    p.labels.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    for &px in &p.pixels {
        buf.extend_from_slice(&(px as u32).to_le_bytes());
    }
    w.write_all(&buf)?;
    put_f32s(&mut w, &p.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_patches(r: impl Read) -> Result<PatchSet, DataError> {
    let mut c = Cursor::open(r, PATCH_MAGIC)?;
    let (sp, n, classes) = (c.u32()?, c.u32()?, c.u32()?);
    let labels = c.u16s(n)?;
    let pixels = c.u32s(n)?.into_iter().map(|v| v as usize).collect();
    let data = c.f32s(n * 3 * sp * sp)?;
    c.finish()?;
    PatchSet::new(sp, classes, data, labels, pixels)
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::from(e).in_file(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path).map(BufWriter::new).map_err(|e| DataError::from(e).in_file(path))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube, DataError> {
    let path = path.as_ref();
    read_cube(open(path)?).map_err(|e| e.in_file(path))
}

pub fn save_cube(path: impl AsRef<Path>, cube: &HsiCube) -> Result<(), DataError> {
    let path = path.as_ref();
    write_cube(create(path)?, cube).map_err(|e| e.in_file(path))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelRaster, DataError> {
    let path = path.as_ref();
    read_labels(open(path)?).map_err(|e| e.in_file(path))
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelRaster) -> Result<(), DataError> {
    let path = path.as_ref();
    write_labels(create(path)?, labels).map_err(|e| e.in_file(path))
}

pub fn load_patches(path: impl AsRef<Path>) -> Result<PatchSet, DataError> {
    let path = path.as_ref();
    read_patches(open(path)?).map_err(|e| e.in_file(path))
}

pub fn save_patches(path: impl AsRef<Path>, p: &PatchSet) -> Result<(), DataError> {
    let path = path.as_ref();
    write_patches(create(path)?, p).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_round_trip() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0, 0.5, 0.25, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_cube(&mut buf, &cube).unwrap();
        assert_eq!(&buf[..4], b"HSC1");
        assert_eq!(buf.len(), 4 + 12 + 16);
        assert_eq!(read_cube(&buf[..]).unwrap(), cube);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(read_cube(&b"XXXX\0\0\0\0"[..]), Err(DataError::Format { offset: 0, .. })));
        let cube = HsiCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let mut buf = Vec::new();
        write_cube(&mut buf, &cube).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_cube(&buf[..]), Err(DataError::Length { offset: 16, expected: 16, found: 13 })));
    }

    #[test]
    fn labels_round_trip() {
        let r = LabelRaster::new(2, 3, vec![0, 1, 2, 3, 0, 65535]).unwrap();
        let mut buf = Vec::new();
        write_labels(&mut buf, &r).unwrap();
        assert_eq!(read_labels(&buf[..]).unwrap(), r);
        assert!(matches!(read_labels(&buf[..buf.len() - 1]), Err(DataError::Length { .. })));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_labels("/nonexistent/dir/labels.hsl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/labels.hsl"));
    }
}
