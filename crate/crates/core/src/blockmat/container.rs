//! Binary container: magic, JSON header length (u64 LE), JSON header, then
//! little-endian complex doubles block by block for every listed mode.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlockMatrix, FourierBlockMatrix, Mode, NormParams};
use crate::basis::{enumerate_basis, BasisError, BasisSet};
use crate::linalg::{CMat, C64};

const MAGIC: &[u8; 8] = b"HKAMBM01";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a block-matrix container")]
    Magic,
    #[error("basis: {0}")]
    Basis(#[from] BasisError),
    #[error("payload length mismatch")]
    Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub d: usize,
    pub w_max: u32,
    pub n: usize,
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub norm: Option<NormParams>,
}

pub fn write_container<W: Write>(
    mut w: W,
    q: &FourierBlockMatrix,
    norm: Option<NormParams>,
) -> Result<(), ContainerError> {
    let basis = q.basis();
    let header = ContainerHeader {
        d: basis.d(),
        w_max: basis.w_max(),
        n: q.n(),
        modes: q.modes().map(|(k, _)| k.clone()).collect(),
        norm,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let nc = basis.num_clusters();
    for (_, m) in q.modes() {
        for ca in 0..nc {
            for cb in 0..nc {
                let blk = m.block(ca, cb);
                for i in 0..blk.nrows() {
                    for j in 0..blk.ncols() {
                        w.write_all(&blk[(i, j)].re.to_le_bytes())?;
                        w.write_all(&blk[(i, j)].im.to_le_bytes())?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(FourierBlockMatrix, ContainerHeader), ContainerError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::Magic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: ContainerHeader = serde_json::from_slice(&json)?;
    let basis: Arc<BasisSet> = Arc::new(enumerate_basis(header.d, header.w_max)?);
    let mut out = FourierBlockMatrix::zero(&basis, header.n);
    let nc = basis.num_clusters();
    let mut f = [0u8; 8];
    let mut next = |r: &mut R| -> Result<f64, ContainerError> {
        r.read_exact(&mut f).map_err(|_| ContainerError::Payload)?;
        Ok(f64::from_le_bytes(f))
    };
    for k in &header.modes {
        let mut m = BlockMatrix::zeros(&basis);
        for ca in 0..nc {
            for cb in 0..nc {
                let (ra, rb) = (basis.clusters()[ca].len, basis.clusters()[cb].len);
                let mut blk = CMat::zeros(ra, rb);
                for i in 0..ra {
                    for j in 0..rb {
                        let re = next(&mut r)?;
                        let im = next(&mut r)?;
                        blk[(i, j)] = C64::new(re, im);
                    }
                }
                m.set_block(ca, cb, &blk);
            }
        }
        out.add_mode(k.clone(), m).map_err(|_| ContainerError::Payload)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ContainerError::Payload);
    }
    Ok((out, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bit_exact_roundtrip() {
        let basis = Arc::new(enumerate_basis(2, 8).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut q = FourierBlockMatrix::zero(&basis, 2);
        for k in [vec![0, 0], vec![1, -2], vec![-3, 1]] {
            let m = CMat::from_fn(basis.dim(), basis.dim(), |_, _| {
                C64::new(rng.random::<f64>() * 1e-300, rng.random::<f64>() - 0.5)
            });
            q.add_mode(k, BlockMatrix::from_dense(&basis, m).unwrap()).unwrap();
        }
        let mut buf = Vec::new();
        write_container(&mut buf, &q, Some(NormParams::for_dimension(2, 1.0))).unwrap();
        let (back, header) = read_container(buf.as_slice()).unwrap();
        assert_eq!(header.n, 2);
        for ((ka, a), (kb, b)) in q.modes().zip(back.modes()) {
            assert_eq!(ka, kb);
            for (x, y) in a.dense().iter().zip(b.dense().iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
        assert!(matches!(read_container(&buf[..buf.len() - 3]), Err(ContainerError::Payload)));
    }
}
