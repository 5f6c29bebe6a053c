//! Binary serialization for golden files.
//!
//! Tensor blob: 8-byte magic `DCTENSR1`, one precision-tag byte (4 or 8),
//! four little-endian u64 extents (batch, channels, height, width), then the
//! raw little-endian IEEE-754 elements in layout order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::{Shape4, Tensor};

pub const TENSOR_MAGIC: &[u8; 8] = b"DCTENSR1";

pub fn write_tensor<E: Element, W: Write>(w: &mut W, t: &Tensor<E>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[E::TAG])?;
    let s = t.shape();
    for extent in [s.batch, s.channels, s.height, s.width] {
        w.write_all(&(extent as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        match E::TAG {
            4 => w.write_all(&(v.to_f64() as f32).to_le_bytes())?,
            _ => w.write_all(&v.to_f64().to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn read_tensor<E: Element, R: Read>(r: &mut R) -> Result<Tensor<E>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    if tag[0] != E::TAG {
        return Err(Error::Format(format!(
            "precision tag {} does not match requested element type {}",
            tag[0],
            E::NAME
        )));
    }
    let mut extents = [0usize; 4];
    for e in &mut extents {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let v = u64::from_le_bytes(buf);
        *e = usize::try_from(v).map_err(|_| Error::Format("extent exceeds usize".into()))?;
    }
    let shape = Shape4::new(extents[0], extents[1], extents[2], extents[3])?;
    let len = shape.len()?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let v = match E::TAG {
            4 => {
                let mut buf = [0u8; 4];
                r.read_exact(&mut buf)?;
                f32::from_le_bytes(buf) as f64
            }
            _ => {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                f64::from_le_bytes(buf)
            }
        };
        data.push(E::from_f64(v));
    }
    Tensor::from_vec(shape, data)
}

pub fn save_tensor<E: Element>(path: &std::path::Path, t: &Tensor<E>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn load_tensor<E: Element>(path: &std::path::Path) -> Result<Tensor<E>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_precisions() {
        let s = Shape4::new(2, 3, 4, 5).unwrap();
        let t32 = Tensor::<f32>::seeded_random(s, 9).unwrap();
        let t64 = Tensor::<f64>::seeded_random(s, 9).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t32).unwrap();
        let back = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t32);

        let mut buf = Vec::new();
        write_tensor(&mut buf, &t64).unwrap();
        let back = read_tensor::<f64, _>(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t64);
    }

    #[test]
    fn header_layout_is_fixed() {
        let s = Shape4::new(1, 2, 3, 4).unwrap();
        let t = Tensor::<f32>::zeros(s).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..8], b"DCTENSR1");
        assert_eq!(buf[8], 4);
        assert_eq!(&buf[9..17], &1u64.to_le_bytes());
        assert_eq!(&buf[17..25], &2u64.to_le_bytes());
        assert_eq!(buf.len(), 8 + 1 + 32 + 24 * 4);
    }

    #[test]
    fn precision_tag_mismatch_is_rejected() {
        let s = Shape4::new(1, 1, 1, 1).unwrap();
        let t = Tensor::<f32>::zeros(s).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(matches!(
            read_tensor::<f64, _>(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
