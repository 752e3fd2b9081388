//! STF, the on-disk weight container.
//!
//! ```text
//! "STNS"            4 bytes magic
//! version     u32   = 1
//! count       u32
//! count × {
//!   name_len  u16
//!   name      UTF-8, name_len bytes
//!   dtype     u8    0 = f32
//!   ndim      u8
//!   dims      u32 × ndim
//!   payload   f32 × prod(dims)
//! }
//! ```
//!
//! All integers and floats are little-endian. Tensors are written in
//! lexicographic name order, so a store has exactly one encoding.

use std::path::Path;

use crate::io::store::WeightStore;

pub const MAGIC: &[u8; 4] = b"STNS";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum StfError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("bad magic {0:?}, expected \"STNS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor `{name}` has unknown dtype {dtype}")]
    UnknownDtype { name: String, dtype: u8 },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}` has {found} elements, dims imply {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("empty tensor name")]
    EmptyName,
    #[error("tensor `{0}` does not fit the format limits")]
    TooLarge(String),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}

pub fn encode_stf(store: &WeightStore) -> Result<Vec<u8>, StfError> {
    let mut out = Vec::with_capacity(12 + store.total_elements() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(store.len()).map_err(|_| StfError::TooLarge("<store>".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, rec) in store.iter() {
        let too_large = || StfError::TooLarge(name.to_string());
        let name_len = u16::try_from(name.len()).map_err(|_| too_large())?;
        let ndim = u8::try_from(rec.dims.len()).map_err(|_| too_large())?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(ndim);
        for &d in &rec.dims {
            let d = u32::try_from(d).map_err(|_| too_large())?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &rec.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StfError> {
        if self.buf.len() - self.pos < n {
            return Err(StfError::Truncated { offset: self.buf.len(), what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, StfError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, StfError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, StfError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_stf(bytes: &[u8]) -> Result<WeightStore, StfError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(StfError::BadMagic(magic));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(StfError::UnsupportedVersion(version));
    }
    let count = cur.u32("tensor count")?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| StfError::InvalidName)?
            .to_string();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(StfError::UnknownDtype { name, dtype });
        }
        let ndim = cur.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| StfError::TooLarge(name.clone()))?;
        let payload = cur.take(numel, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, dims, data)?;
    }
    if cur.pos != bytes.len() {
        return Err(StfError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(store)
}

pub fn write_stf(store: &WeightStore, path: impl AsRef<Path>) -> Result<(), StfError> {
    std::fs::write(path, encode_stf(store)?)?;
    Ok(())
}

pub fn read_stf(path: impl AsRef<Path>) -> Result<WeightStore, StfError> {
    decode_stf(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert("z.w", vec![2, 1, 1, 2], vec![1.0, -2.0, 0.5, f32::MIN_POSITIVE]).unwrap();
        s.insert("a.b", vec![3], vec![0.0, -0.0, 7.25]).unwrap();
        s
    }

    #[test]
    fn empty_store_is_twelve_bytes() {
        let bytes = encode_stf(&WeightStore::new()).unwrap();
        assert_eq!(bytes, b"STNS\x01\x00\x00\x00\x00\x00\x00\x00");
        assert!(decode_stf(&bytes).unwrap().is_empty());
    }

    #[test]
    fn layout_is_lexicographic_and_little_endian() {
        let bytes = encode_stf(&sample()).unwrap();
        assert_eq!(&bytes[12..14], &3u16.to_le_bytes());
        assert_eq!(&bytes[14..17], b"a.b");
        assert_eq!(bytes[17], 0);
        assert_eq!(bytes[18], 1);
        assert_eq!(&bytes[19..23], &3u32.to_le_bytes());
        assert_eq!(&bytes[23..27], &0f32.to_le_bytes());
        let back = decode_stf(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(encode_stf(&back).unwrap(), bytes);
    }

    #[test]
    fn typed_parse_errors() {
        let good = encode_stf(&sample()).unwrap();
        let mut b = good.clone();
        b[0] ^= 0xff;
        assert!(matches!(decode_stf(&b), Err(StfError::BadMagic(_))));
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(decode_stf(&b), Err(StfError::UnsupportedVersion(2))));
        let mut b = good.clone();
        b[17] = 1;
        assert!(matches!(decode_stf(&b), Err(StfError::UnknownDtype { dtype: 1, .. })));
        assert!(matches!(decode_stf(&good[..good.len() - 1]), Err(StfError::Truncated { .. })));
        let mut b = good.clone();
        b.push(0);
        assert!(matches!(decode_stf(&b), Err(StfError::TrailingBytes(1))));
        // Second record renamed to collide with the first.
        let mut b = good.clone();
        let second = 12 + 2 + 3 + 2 + 4 + 12;
        b[second..second + 2].copy_from_slice(&3u16.to_le_bytes());
        b.splice(second + 2..second + 5, *b"a.b");
        assert!(matches!(decode_stf(&b), Err(StfError::DuplicateName(_))));
    }
}
