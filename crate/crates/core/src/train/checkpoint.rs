//! Binary checkpoints of parameter stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CSPCKPT\0"
//! version u32      1
//! count   u32
//! count x { name_len u32, name utf-8, rows u64, cols u64, rows*cols f64 }
//! ```

use std::io::{Read, Write};

use super::tape::ParamStore;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 8] = b"CSPCKPT\0";
pub const VERSION: u32 = 1;

fn io(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint(store: &ParamStore, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, m) in store.names().iter().zip(store.values()) {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
        for x in m.data() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(store, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn read_array<const K: usize>(r: &mut impl Read) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(io)?;
    Ok(buf)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore> {
    if &read_array::<8>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::Checkpoint(format!("implausible shape {rows}x{cols}")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        store.push(name, Matrix::new(rows, cols, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};

    fn store() -> ParamStore {
        let mut rng = seeded(1);
        let mut s = ParamStore::new();
        s.push("tok", gaussian_matrix(&mut rng, 3, 4, 1.0));
        s.push("l0.w", gaussian_matrix(&mut rng, 4, 4, 1.0));
        s.push("head.b", Matrix::zeros(1, 2));
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = store();
        let bytes = to_bytes(&s);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(read_checkpoint(bytes.as_slice()).unwrap(), s);
    }

    #[test]
    fn header_layout() {
        let mut s = ParamStore::new();
        s.push("a", Matrix::filled(1, 1, 1.5));
        let bytes = to_bytes(&s);
        let mut expect = MAGIC.to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.push(b'a');
        expect.extend(1u64.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(1.5f64.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&store());
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
    }
}
