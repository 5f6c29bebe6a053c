//! FilterBank container: magic `DCWGHT01`, the ConvSpec fields as
//! little-endian u64 (kind as its enum tag, then M, N, K, stride, padding,
//! G, P), then the spatial block as a tensor blob and, when present, the
//! pointwise block as a 1 x 1 x rows x cols tensor blob.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::matrix::Matrix;
use crate::scalar::Element;
use crate::tensor::{Shape4, Tensor};

use super::{ConvKind, ConvSpec, FilterBank};

pub const WEIGHT_MAGIC: &[u8; 8] = b"DCWGHT01";

pub fn write_filter_bank<E: Element, W: Write>(
    w: &mut W,
    spec: &ConvSpec,
    bank: &FilterBank<E>,
) -> Result<()> {
    bank.validate_for(spec)?;
    w.write_all(WEIGHT_MAGIC)?;
    for field in [
        spec.kind.tag(),
        spec.in_channels as u64,
        spec.out_channels as u64,
        spec.kernel as u64,
        spec.stride as u64,
        spec.padding as u64,
        spec.groups as u64,
        spec.part as u64,
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    write_tensor(w, &bank.spatial)?;
    if let Some(pw) = &bank.pointwise {
        let t = Tensor::from_vec(Shape4::new(1, 1, pw.rows(), pw.cols())?, pw.data().to_vec())?;
        write_tensor(w, &t)?;
    }
    Ok(())
}

pub fn read_filter_bank<E: Element, R: Read>(r: &mut R) -> Result<(ConvSpec, FilterBank<E>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::Format("bad weight magic".into()));
    }
    let mut fields = [0u64; 8];
    for f in &mut fields {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        *f = u64::from_le_bytes(buf);
    }
    let spec = ConvSpec::new(
        ConvKind::from_tag(fields[0])?,
        fields[1] as usize,
        fields[2] as usize,
        fields[3] as usize,
        fields[4] as usize,
        fields[5] as usize,
        fields[6] as usize,
        fields[7] as usize,
    )?;
    let spatial = read_tensor::<E, _>(r)?;
    let pointwise = if spec.pointwise_width() > 0 {
        let t = read_tensor::<E, _>(r)?;
        let s = t.shape();
        Some(Matrix::from_vec(s.height, s.width, t.data().to_vec())?)
    } else {
        None
    };
    let bank = FilterBank { spatial, pointwise };
    bank.validate_for(&spec)?;
    Ok((spec, bank))
}

pub fn save_filter_bank<E: Element>(
    path: &std::path::Path,
    spec: &ConvSpec,
    bank: &FilterBank<E>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_filter_bank(&mut f, spec, bank)
}

pub fn load_filter_bank<E: Element>(path: &std::path::Path) -> Result<(ConvSpec, FilterBank<E>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_filter_bank(&mut f)
}
