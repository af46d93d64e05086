//! Dense 64-bit vector and matrix kernels plus a seedable generator.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; matrices are row-major
//! [`Matrix`] values. Everything here is pure except [`Rng`].

use crate::error::{check_dims, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dims("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        let data = rng.uniform(lo, hi, rows * cols)?;
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `self += alpha * x yᵀ`
    pub fn add_outer(&mut self, alpha: f64, x: &[f64], y: &[f64]) -> Result<()> {
        check_dims("add_outer rows", self.rows, x.len())?;
        check_dims("add_outer cols", self.cols, y.len())?;
        for (i, &xi) in x.iter().enumerate() {
            let a = alpha * xi;
            if a == 0.0 {
                continue;
            }
            for (dst, &yj) in self.row_mut(i).iter_mut().zip(y) {
                *dst += a * yj;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `A x`
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    check_dims("matvec", a.cols, x.len())?;
    Ok((0..a.rows).map(|i| dot_unchecked(a.row(i), x)).collect())
}

/// `Aᵀ y`
pub fn matvec_transposed(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    check_dims("matvec_transposed", a.rows, y.len())?;
    let mut out = vec![0.0; a.cols];
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(a.row(i)) {
            *o += aij * yi;
        }
    }
    Ok(out)
}

pub fn dot(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims("dot", x.len(), y.len())?;
    Ok(dot_unchecked(x, y))
}

#[inline]
pub(crate) fn dot_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot_unchecked(x, x).sqrt()
}

pub fn add(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims("add", x.len(), y.len())?;
    Ok(x.iter().zip(y).map(|(a, b)| a + b).collect())
}

pub fn mul(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims("mul", x.len(), y.len())?;
    Ok(x.iter().zip(y).map(|(a, b)| a * b).collect())
}

pub fn scale(x: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().map(|v| v * alpha).collect()
}

pub fn map(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().copied().map(f).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_dims("axpy", x.len(), y.len())?;
    for (dst, &v) in y.iter_mut().zip(x) {
        *dst += alpha * v;
    }
    Ok(())
}

/// Logistic function, evaluated so that neither tail overflows.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(z: f64) -> f64 {
    z.tanh()
}

/// SplitMix64 (Steele, Lea & Flood 2014). Output depends only on the seed,
/// so draws are identical across runs and platforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        // also rejects NaN bounds
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidArgument(format!(
                "uniform range requires lo < hi, got [{lo}, {hi})"
            )));
        }
        let width = hi - lo;
        Ok((0..n)
            .map(|_| {
                let v = lo + width * self.next_f64();
                // rounding can land exactly on hi for some (lo, hi)
                if v < hi {
                    v
                } else {
                    lo
                }
            })
            .collect())
    }

    /// Uniform integer in `[0, n)` by rejection, free of modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child generator; the parent advances by one draw.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// SplitMix64 finalizer. Also used to derive seeds from `(base, value)` pairs.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
