//! Fast Walsh-Hadamard transform, Sylvester (natural) ordering.
//!
//! The forward transform is unnormalized: `fwht(v) = H v` with `H` the
//! Sylvester Hadamard matrix, so `H H^T = m I` and `ifwht = fwht / m`.

use crate::{Error, Result};

/// Hadamard matrix ordering identifiers carried in the bitstream header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HadamardOrdering {
    Sylvester,
}

impl HadamardOrdering {
    pub fn id(self) -> u8 {
        match self {
            HadamardOrdering::Sylvester => 0,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(HadamardOrdering::Sylvester),
            _ => Err(Error::Bitstream(format!("unknown hadamard ordering id {id}"))),
        }
    }
}

fn check_pow2(len: usize) -> Result<()> {
    if len == 0 || len & (len - 1) != 0 {
        Err(Error::Dimension(format!("length {len} is not a power of two")))
    } else {
        Ok(())
    }
}

/// In-place unnormalized FWHT, O(m log m) butterfly passes.
pub fn fwht_in_place(v: &mut [f64]) -> Result<()> {
    check_pow2(v.len())?;
    let mut h = 1;
    while h < v.len() {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// Inverse transform: `H^{-1} v = (1/m) H v` (Sylvester H is symmetric).
pub fn ifwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    let inv = 1.0 / v.len() as f64;
    for x in &mut out {
        *x *= inv;
    }
    Ok(out)
}
