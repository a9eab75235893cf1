//! Hadamard and modified-Hadamard transform matrices.
//!
//! The modified transform `Q₈` keeps the four low-sequency rows of the
//! Sylvester `H₈` and replaces the remaining four with shifted copies of the
//! second-difference filter `[1, −2, 1]`. Its inverse has dyadic-rational
//! entries and is stored exactly as eighths.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use crate::error::{Error, Result};

/// Block length of the modified transform.
pub const MHT_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Hadamard,
    Mht,
    Imht,
}

/// Dense real square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    kind: TransformKind,
    dim: usize,
    entries: Vec<f64>,
}

impl TransformMatrix {
    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.dim..(row + 1) * self.dim]
    }

    /// Matrix–vector product.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "transform of size {} applied to vector of length {}",
                self.dim,
                x.len()
            )));
        }
        Ok((0..self.dim)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, rhs: &TransformMatrix) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entry(i, k);
                for j in 0..d {
                    out[i * d + j] += a * rhs.entry(k, j);
                }
            }
        }
        out
    }

    /// Row-major copy as a fixed 8×8 array; `None` for other sizes.
    pub fn as_array8(&self) -> Option<[[f64; 8]; 8]> {
        if self.dim != MHT_DIM {
            return None;
        }
        let mut out = [[0.0; 8]; 8];
        for (r, row) in out.iter_mut().enumerate() {
            row.copy_from_slice(self.row(r));
        }
        Some(out)
    }
}

impl fmt::Display for TransformMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.dim {
            let cells: Vec<String> = self.row(r).iter().map(|v| format!("{v:>7.3}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Unnormalized Sylvester Hadamard matrix `H_D` (entries ±1).
pub fn hadamard_matrix(dim: usize) -> Result<TransformMatrix> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::Config(format!(
            "Hadamard size must be a power of two, got {dim}"
        )));
    }
    let mut entries = vec![1.0];
    let mut d = 1;
    while d < dim {
        let mut next = vec![0.0; 4 * d * d];
        for i in 0..d {
            for j in 0..d {
                let h = entries[i * d + j];
                next[i * 2 * d + j] = h;
                next[i * 2 * d + j + d] = h;
                next[(i + d) * 2 * d + j] = h;
                next[(i + d) * 2 * d + j + d] = -h;
            }
        }
        entries = next;
        d *= 2;
    }
    Ok(TransformMatrix {
        kind: TransformKind::Hadamard,
        dim,
        entries,
    })
}

#[rustfmt::skip]
const Q8: [[f64; 8]; 8] = [
    [1.0,  1.0,  1.0,  1.0,  1.0,  1.0,  1.0,  1.0],
    [1.0, -1.0,  1.0, -1.0,  1.0, -1.0,  1.0, -1.0],
    [1.0,  1.0, -1.0, -1.0,  1.0,  1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0,  1.0,  1.0, -1.0, -1.0,  1.0],
    [1.0, -2.0,  1.0,  0.0,  0.0,  0.0,  0.0,  0.0],
    [0.0,  0.0,  1.0, -2.0,  1.0,  0.0,  0.0,  0.0],
    [0.0,  0.0,  0.0,  1.0, -2.0,  1.0,  0.0,  0.0],
    [0.0,  0.0,  0.0,  0.0,  0.0,  1.0, -2.0,  1.0],
];

// Q₈⁻¹ in units of 1/8.
#[rustfmt::skip]
const Q8_INV_EIGHTHS: [[i32; 8]; 8] = [
    [1,  5,  1,  5, -4,  4,  8,  0],
    [1,  7, -1,  1, -8,  0,  4,  4],
    [1,  9, -3, -3, -4, -4,  0,  8],
    [1,  3, -1, -3,  0, -8, -4,  4],
    [1, -3,  1, -3,  4, -4, -8,  0],
    [1, -9,  3, -3,  8,  0, -4, -4],
    [1, -7,  1,  1,  4,  4,  0, -8],
    [1, -5, -1,  5,  0,  8,  4, -4],
];

/// The modified Hadamard matrix `Q₈`.
pub fn mht_matrix_8() -> TransformMatrix {
    TransformMatrix {
        kind: TransformKind::Mht,
        dim: MHT_DIM,
        entries: Q8.iter().flatten().copied().collect(),
    }
}

/// `Q₈⁻¹`.
pub fn imht_matrix_8() -> TransformMatrix {
    TransformMatrix {
        kind: TransformKind::Imht,
        dim: MHT_DIM,
        entries: Q8_INV_EIGHTHS
            .iter()
            .flatten()
            .map(|&v| f64::from(v) / 8.0)
            .collect(),
    }
}

pub(crate) fn q8() -> &'static [[f64; 8]; 8] {
    &Q8
}

pub(crate) fn q8_inv() -> [[f64; 8]; 8] {
    let mut out = [[0.0; 8]; 8];
    for (r, row) in Q8_INV_EIGHTHS.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[r][c] = f64::from(v) / 8.0;
        }
    }
    out
}

pub(crate) fn apply8(m: &[[f64; 8]; 8], x: &[f64; 8]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    out
}

fn as_block(v: &[f64]) -> Result<[f64; 8]> {
    v.try_into()
        .map_err(|_| Error::Shape(format!("expected a block of length 8, got {}", v.len())))
}

/// `Q₈ · block`.
pub fn mht_forward(block: &[f64]) -> Result<[f64; 8]> {
    Ok(apply8(&Q8, &as_block(block)?))
}

/// `Q₈⁻¹ · coeffs`.
pub fn mht_inverse(coeffs: &[f64]) -> Result<[f64; 8]> {
    Ok(apply8(&q8_inv(), &as_block(coeffs)?))
}

/// Magnitude response `4 sin²(w/2)` of the second-difference filter `[1, −2, 1]`.
pub fn second_derivative_response(w: f64) -> Result<f64> {
    if !(0.0..=std::f64::consts::PI).contains(&w) {
        return Err(Error::Domain(format!("frequency {w} outside [0, pi]")));
    }
    let s = (w / 2.0).sin();
    Ok(4.0 * s * s)
}

/// Cascaded two-channel Haar analysis of one period of a periodic signal.
///
/// Low-pass `{1/√2, 1/√2}`, high-pass `{−1/√2, 1/√2}`, each followed by
/// decimation by two. Subbands come out depth-first with the low branch
/// first, i.e. `(ll, lh, hl, hh)` for two levels.
pub fn haar_packet_analysis(x: &[f64], levels: u32) -> Result<Vec<f64>> {
    let expected = 1usize << levels;
    if x.len() != expected {
        return Err(Error::Shape(format!(
            "{levels}-level packet analysis needs length {expected}, got {}",
            x.len()
        )));
    }
    let mut bands = vec![x.to_vec()];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(bands.len() * 2);
        for band in &bands {
            let n = band.len();
            // y[2i+1] = h[0] x[2i+1] + h[1] x[2i]
            let low: Vec<f64> = (0..n / 2)
                .map(|i| FRAC_1_SQRT_2 * band[2 * i + 1] + FRAC_1_SQRT_2 * band[2 * i])
                .collect();
            let high: Vec<f64> = (0..n / 2)
                .map(|i| -FRAC_1_SQRT_2 * band[2 * i + 1] + FRAC_1_SQRT_2 * band[2 * i])
                .collect();
            next.push(low);
            next.push(high);
        }
        bands = next;
    }
    Ok(bands.into_iter().flatten().collect())
}
