//! Binary signal files: a 16-byte header (`ICEXSIG1`, `d` and `N` as u32 LE)
//! followed by `d * N` interleaved re/im f64 little-endian values, row-major.

use crate::error::{IceError, Result};
use crate::linalg::{CMatrix, C64};

pub const MAGIC: &[u8; 8] = b"ICEXSIG1";
pub const HEADER_LEN: usize = 16;

pub fn encode(m: &CMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * m.rows() * m.cols());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for z in m.as_slice() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<CMatrix> {
    if bytes.is_empty() {
        return Err(IceError::Format("empty signal file".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(IceError::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(IceError::Format("bad magic, expected ICEXSIG1".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (d, n) = (word(8), word(12));
    if d == 0 || n == 0 {
        return Err(IceError::Format(format!("empty shape {d} x {n}")));
    }
    let expected = d
        .checked_mul(n)
        .and_then(|c| c.checked_mul(16))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| IceError::Format("shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(IceError::Format(format!(
            "{d} x {n} signal needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<C64> = bytes[HEADER_LEN..]
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    if data.iter().any(|z| !z.is_finite()) {
        return Err(IceError::Format("non-finite sample".into()));
    }
    CMatrix::from_vec(d, n, data)
}

pub fn read(path: &std::path::Path) -> Result<CMatrix> {
    let bytes = std::fs::read(path).map_err(|e| IceError::Format(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| match e {
        IceError::Format(m) => IceError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = CMatrix::from_fn(3, 5, |i, j| C64::new(i as f64 - 0.1 * j as f64, 1e-300 * j as f64));
        let bytes = encode(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 5 * 16);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode(&[]).is_err());
        assert!(decode(b"ICEXSIG1").is_err());
        let mut bytes = encode(&CMatrix::identity(2));
        bytes.pop();
        assert!(decode(&bytes).is_err());
        let mut bad = encode(&CMatrix::identity(2));
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut nan = encode(&CMatrix::identity(2));
        nan[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
    }
}
