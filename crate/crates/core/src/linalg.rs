//! Small dense matrices and vector helpers.
//!
//! State dimensions in this crate are tiny (n <= 8 in practice), so a
//! row-major `Vec<f64>` with straightforward loops beats pulling in a
//! linear-algebra dependency.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Dense row-major matrix. Serializes as a list of rows so configs can
/// spell matrices the way they are written on paper.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Mat::from_rows(&rows).map_err(D::Error::custom)
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Format("matrix rows have unequal lengths".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max column sum of absolute values.
    pub fn one_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += self.data[i * self.cols + j].abs();
            }
            best = best.max(s);
        }
        best
    }

    /// Solve `self * X = B` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &Mat) -> Result<Mat> {
        debug_assert!(self.is_square());
        debug_assert_eq!(self.rows, b.rows);
        let n = self.rows;
        let m = b.cols;
        let mut a = self.data.clone();
        let mut x = b.data.clone();

        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = a[col * n + col].abs();
            for row in (col + 1)..n {
                let v = a[row * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val < 1e-300 {
                return Err(Error::SingularMatrix { pivot: pivot_val });
            }
            if pivot_row != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot_row * n + j);
                }
                for j in 0..m {
                    x.swap(col * m + j, pivot_row * m + j);
                }
            }
            let pivot = a[col * n + col];
            for row in (col + 1)..n {
                let factor = a[row * n + col] / pivot;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
                for j in 0..m {
                    x[row * m + j] -= factor * x[col * m + j];
                }
            }
        }
        for col in (0..n).rev() {
            let pivot = a[col * n + col];
            for j in 0..m {
                let mut sum = x[col * m + j];
                for k in (col + 1)..n {
                    sum -= a[col * n + k] * x[k * m + j];
                }
                x[col * m + j] = sum / pivot;
            }
        }
        Ok(Mat {
            rows: n,
            cols: m,
            data: x,
        })
    }

    /// Determinant via LU with partial pivoting.
    pub fn determinant(&self) -> f64 {
        debug_assert!(self.is_square());
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = a[col * n + col].abs();
            for row in (col + 1)..n {
                let v = a[row * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val == 0.0 {
                return 0.0;
            }
            if pivot_row != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot_row * n + j);
                }
                det = -det;
            }
            let pivot = a[col * n + col];
            det *= pivot;
            for row in (col + 1)..n {
                let factor = a[row * n + col] / pivot;
                for j in col..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
            }
        }
        det
    }
}

/// Pade(13) coefficients for the scaling-and-squaring matrix exponential.
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Scaling threshold for the Pade(13) kernel.
const PADE13_THETA: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with a Pade(13) kernel.
pub fn expm(a: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "matrix exponential of non-square matrix".into(),
            expected: a.rows(),
            got: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix exponential input".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if n == 1 {
        return Ok(Mat::scalar(a.get(0, 0).exp()));
    }

    let norm = a.one_norm();
    let squarings = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings as i32));

    let eye = Mat::identity(n);
    let a2 = scaled.matmul(&scaled);
    let a4 = a2.matmul(&a2);
    let a6 = a2.matmul(&a4);

    let w1 = a6
        .scale(PADE13[13])
        .add(&a4.scale(PADE13[11]))
        .add(&a2.scale(PADE13[9]));
    let w2 = w1
        .matmul(&a6)
        .add(&a6.scale(PADE13[7]))
        .add(&a4.scale(PADE13[5]))
        .add(&a2.scale(PADE13[3]))
        .add(&eye.scale(PADE13[1]));
    let u = scaled.matmul(&w2);

    let v1 = a6
        .scale(PADE13[12])
        .add(&a4.scale(PADE13[10]))
        .add(&a2.scale(PADE13[8]));
    let v = v1
        .matmul(&a6)
        .add(&a6.scale(PADE13[6]))
        .add(&a4.scale(PADE13[4]))
        .add(&a2.scale(PADE13[2]))
        .add(&eye.scale(PADE13[0]));

    let mut result = v.sub(&u).solve(&v.add(&u))?;
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity() {
        let m = Mat::identity(3);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(m.matvec(&x), x);
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x_true = Mat::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let b = a.matmul(&x_true);
        let x = a.solve(&b).unwrap();
        for (got, want) in x.data().iter().zip(x_true.data()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(a.solve(&b).is_err());
    }

    #[test]
    fn determinant_2x2() {
        let a = Mat::from_rows(&[vec![0.0, -2.0], vec![3.0, -1.0]]).unwrap();
        assert!((a.determinant() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn expm_zero_is_identity() {
        let e = expm(&Mat::zeros(3, 3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((e.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expm_diagonal() {
        let e = expm(&Mat::diag(&[-1.0, -2.0])).unwrap();
        assert!((e.get(0, 0) - (-1.0f64).exp()).abs() < 1e-14);
        assert!((e.get(1, 1) - (-2.0f64).exp()).abs() < 1e-14);
        assert!(e.get(0, 1).abs() < 1e-16);
    }

    #[test]
    fn expm_nilpotent() {
        // exp([[0,1],[0,0]]) = [[1,1],[0,1]]
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let e = expm(&a).unwrap();
        for (got, want) in e.data().iter().zip([1.0, 1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn expm_large_norm_uses_scaling() {
        let e = expm(&Mat::diag(&[40.0, -40.0])).unwrap();
        assert!((e.get(0, 0) / 40.0f64.exp() - 1.0).abs() < 1e-12);
        assert!((e.get(1, 1) / (-40.0f64).exp() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn expm_rejects_non_finite() {
        let a = Mat::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(expm(&a).is_err());
    }
}
