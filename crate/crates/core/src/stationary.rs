//! Stationary Ornstein-Uhlenbeck bundles and the conjugation transform.
//!
//! The stationary processes are convolutions of the driving increments
//! against an exponentially decaying kernel over the infinite past. The
//! store truncates that integral to a burn-in window of length T_b chosen
//! so the neglected tail is below 1e-8 (the bound is recorded on the
//! bundle), and evaluates every output time over its own sliding window
//! of exactly T_b:
//!
//! ```text
//! value(t) = sum_{j=1..K} kernel(j h) * Sigma * dB over [t - j h, t - (j-1) h]
//! ```
//!
//! summed oldest-first. Because the window geometry depends only on lag,
//! the value at time t computed from w is the same float sequence as the
//! value at time 0 computed from the shifted realization theta_t w: the
//! stationarity identity holds exactly, not just in distribution.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{expm, Mat};
use crate::noise::{Driving, Provenance};

/// ln(1e8): default burn-in makes exp(-rate * T_b) <= 1e-8.
const BURN_IN_LOG: f64 = 18.420680743952367;

/// Safety factor turning the tail standard deviation into a
/// high-probability envelope for the recorded truncation bound.
const TAIL_ENVELOPE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuKind {
    /// Convolution against exp(A s) Sigma (rate lambda from the class).
    Z1,
    /// Convolution against exp(-s) Sigma (unit rate).
    Z2,
    /// Coordinatewise unit-rate processes u_k plus u_c = sum c_k u_k.
    U,
}

/// Stationary process samples along one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct OUBundle {
    kind: OuKind,
    t_lo: f64,
    step: f64,
    dim: usize,
    /// Flat row-major values, one row of `dim` per grid time.
    values: Vec<f64>,
    /// Weighted combination sum_k c_k u_k, only for `U` bundles.
    u_c: Option<Vec<f64>>,
    weights: Vec<f64>,
    burn_in: f64,
    truncation_bound: f64,
    provenance: Provenance,
}

impl OUBundle {
    pub fn kind(&self) -> OuKind {
        self.kind
    }

    pub fn t_lo(&self) -> f64 {
        self.t_lo
    }

    pub fn t_hi(&self) -> f64 {
        self.t_lo + (self.len() - 1) as f64 * self.step
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }

    pub fn truncation_bound(&self) -> f64 {
        self.truncation_bound
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        let idx = ((t - self.t_lo) / self.step).round();
        if ((self.t_lo + idx * self.step) - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::NotGridAligned {
                what: "bundle evaluation time",
                value: t,
                step: self.step,
            });
        }
        if idx < 0.0 || idx as usize >= self.len() {
            return Err(Error::BundleCoverage {
                lo: t,
                hi: t,
                have_lo: self.t_lo,
                have_hi: self.t_hi(),
            });
        }
        Ok(idx as usize)
    }

    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        let i = self.index_of(t)?;
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// u_c at a grid time; only `U` bundles carry it.
    pub fn u_c_at(&self, t: f64) -> Result<f64> {
        let u_c = self.u_c.as_ref().ok_or(Error::Precondition(
            "bundle does not carry u_c (construct it with ou_u)".into(),
        ))?;
        Ok(u_c[self.index_of(t)?])
    }

    pub fn u_c_values(&self) -> Option<&[f64]> {
        self.u_c.as_deref()
    }

    /// Synthetic bundle from explicit u_c samples (testing and tooling).
    pub fn from_u_c_samples(t_lo: f64, step: f64, u_c: Vec<f64>) -> Self {
        Self {
            kind: OuKind::U,
            t_lo,
            step,
            dim: 1,
            values: u_c.clone(),
            u_c: Some(u_c),
            weights: vec![1.0],
            burn_in: 0.0,
            truncation_bound: 0.0,
            provenance: Provenance {
                seed: 0,
                level: 0,
                step,
                offset: 0.0,
            },
        }
    }

    /// CSV export in the trajectory format with a leading `process` column.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let tag = match self.kind {
            OuKind::Z1 => "z1",
            OuKind::Z2 => "z2",
            OuKind::U => "u",
        };
        write!(w, "process,t")?;
        for i in 1..=self.dim {
            write!(w, ",x{i}")?;
        }
        if self.u_c.is_some() {
            write!(w, ",uc")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{tag},{:.16e}", self.t_lo + k as f64 * self.step)?;
            for v in &self.values[k * self.dim..(k + 1) * self.dim] {
                write!(w, ",{v:.16e}")?;
            }
            if let Some(u_c) = &self.u_c {
                write!(w, ",{:.16e}", u_c[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Convolution kernel per lag step.
enum Kernel {
    /// kernel(j h) = base^j, applied coordinatewise.
    ScalarPow { base: f64 },
    /// kernel(j h) = base^j as a matrix power.
    MatrixPow { base: Mat },
}

struct ConvGrid {
    h: f64,
    count: usize,
    window: usize,
    burn_in: f64,
}

fn conv_grid<D: Driving>(
    drive: &D,
    t_lo: f64,
    t_hi: f64,
    burn_in: Option<f64>,
    rate: f64,
) -> Result<ConvGrid> {
    if rate <= 0.0 {
        return Err(Error::Precondition(format!(
            "stationary construction needs a positive decay rate, got {rate}"
        )));
    }
    if t_hi < t_lo {
        return Err(Error::ReversedInterval { s: t_lo, t: t_hi });
    }
    let h = drive.step();
    let count = ((t_hi - t_lo) / h).round();
    if ((t_lo + count * h) - t_hi).abs() > 1e-9 * t_hi.abs().max(1.0) {
        return Err(Error::NotGridAligned {
            what: "bundle range",
            value: t_hi - t_lo,
            step: h,
        });
    }
    let requested = burn_in.unwrap_or(BURN_IN_LOG / rate);
    if requested <= 0.0 {
        return Err(Error::Precondition(format!(
            "burn-in must be positive, got {requested}"
        )));
    }
    let window = (requested / h - 1e-9).ceil().max(1.0) as usize;
    Ok(ConvGrid {
        h,
        count: count as usize + 1,
        window,
        burn_in: window as f64 * h,
    })
}

/// Sliding-window convolution of per-cell vectors against the kernel,
/// summed oldest-first so the arithmetic depends only on the lag.
fn convolve(kernel: &Kernel, cells: &[f64], width: usize, grid: &ConvGrid) -> Vec<f64> {
    let k = grid.window;
    let mut out = vec![0.0; grid.count * width];
    match kernel {
        Kernel::ScalarPow { base } => {
            // weights[idx] = base^(k - idx): cell idx = 0 is the oldest (lag k)
            let mut weights = vec![0.0; k];
            let mut w = 1.0;
            for idx in (0..k).rev() {
                w *= base;
                weights[idx] = w;
            }
            for o in 0..grid.count {
                let acc = &mut out[o * width..(o + 1) * width];
                for (idx, w) in weights.iter().enumerate() {
                    let cell = &cells[(o + idx) * width..(o + idx + 1) * width];
                    for (a, c) in acc.iter_mut().zip(cell) {
                        *a += w * c;
                    }
                }
            }
        }
        Kernel::MatrixPow { base } => {
            let n = width;
            // powers[idx] = base^(k - idx)
            let mut powers: Vec<Mat> = Vec::with_capacity(k);
            let mut p = base.clone();
            powers.push(p.clone());
            for _ in 1..k {
                p = base.matmul(&p);
                powers.push(p.clone());
            }
            powers.reverse();
            let mut tmp = vec![0.0; n];
            for o in 0..grid.count {
                let acc = &mut out[o * n..(o + 1) * n];
                for (idx, m) in powers.iter().enumerate() {
                    let cell = &cells[(o + idx) * n..(o + idx + 1) * n];
                    m.matvec_into(cell, &mut tmp);
                    for (a, v) in acc.iter_mut().zip(&tmp) {
                        *a += v;
                    }
                }
            }
        }
    }
    out
}

/// Map raw increments to per-cell `Sigma * dB` vectors.
fn sigma_cells(sigma: &Mat, incs: &[f64], m: usize, n_cells: usize) -> Vec<f64> {
    let n = sigma.rows();
    let mut cells = vec![0.0; n_cells * n];
    for c in 0..n_cells {
        sigma.matvec_into(&incs[c * m..(c + 1) * m], &mut cells[c * n..(c + 1) * n]);
    }
    cells
}

/// Stationary solution of `dz = A z dt + Sigma dB` along the realization,
/// truncated to the burn-in window. `lambda` and `c_prefactor` are the
/// declared decay data of A, used for the default burn-in and the
/// recorded tail bound.
#[allow(clippy::too_many_arguments)]
pub fn ou_z1<D: Driving>(
    a: &Mat,
    sigma: &Mat,
    lambda: f64,
    c_prefactor: f64,
    drive: &D,
    t_lo: f64,
    t_hi: f64,
    burn_in: Option<f64>,
) -> Result<OUBundle> {
    let n = a.rows();
    if !a.is_square() || sigma.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "ou_z1 expects square A with matching Sigma rows".into(),
            expected: n,
            got: sigma.rows(),
        });
    }
    let m = drive.dim();
    if sigma.cols() != m {
        return Err(Error::DimensionMismatch {
            context: "Sigma columns must match the driving dimension".into(),
            expected: m,
            got: sigma.cols(),
        });
    }
    let grid = conv_grid(drive, t_lo, t_hi, burn_in, lambda)?;
    let n_cells = grid.window + grid.count - 1;
    let incs = drive.increments_over(t_lo - grid.burn_in, n_cells)?;
    let cells = sigma_cells(sigma, &incs, m, n_cells);
    let kernel = if n == 1 {
        Kernel::ScalarPow {
            base: (a.get(0, 0) * grid.h).exp(),
        }
    } else {
        Kernel::MatrixPow {
            base: expm(&a.scale(grid.h))?,
        }
    };
    let values = convolve(&kernel, &cells, n, &grid);
    let bound = TAIL_ENVELOPE * c_prefactor * sigma.frobenius_norm() / (2.0 * lambda).sqrt()
        * (-lambda * grid.burn_in).exp();
    Ok(OUBundle {
        kind: OuKind::Z1,
        t_lo,
        step: grid.h,
        dim: n,
        values,
        u_c: None,
        weights: vec![],
        burn_in: grid.burn_in,
        truncation_bound: bound,
        provenance: drive.provenance(),
    })
}

/// Stationary solution of `dz = -z dt + Sigma dB` (unit decay rate).
pub fn ou_z2<D: Driving>(
    sigma: &Mat,
    drive: &D,
    t_lo: f64,
    t_hi: f64,
    burn_in: Option<f64>,
) -> Result<OUBundle> {
    let m = drive.dim();
    if sigma.cols() != m {
        return Err(Error::DimensionMismatch {
            context: "Sigma columns must match the driving dimension".into(),
            expected: m,
            got: sigma.cols(),
        });
    }
    let n = sigma.rows();
    let grid = conv_grid(drive, t_lo, t_hi, burn_in, 1.0)?;
    let n_cells = grid.window + grid.count - 1;
    let incs = drive.increments_over(t_lo - grid.burn_in, n_cells)?;
    let cells = sigma_cells(sigma, &incs, m, n_cells);
    let kernel = Kernel::ScalarPow {
        base: (-grid.h).exp(),
    };
    let values = convolve(&kernel, &cells, n, &grid);
    let bound = TAIL_ENVELOPE * sigma.frobenius_norm() / 2.0f64.sqrt() * (-grid.burn_in).exp();
    Ok(OUBundle {
        kind: OuKind::Z2,
        t_lo,
        step: grid.h,
        dim: n,
        values,
        u_c: None,
        weights: vec![],
        burn_in: grid.burn_in,
        truncation_bound: bound,
        provenance: drive.provenance(),
    })
}

/// Coordinatewise unit-rate stationary processes u_k driven by the path
/// coordinates, plus the weighted combination u_c = sum_k c_k u_k.
pub fn ou_u<D: Driving>(
    drive: &D,
    c_k: &[f64],
    t_lo: f64,
    t_hi: f64,
    burn_in: Option<f64>,
) -> Result<OUBundle> {
    let m = drive.dim();
    if c_k.len() != m {
        return Err(Error::DimensionMismatch {
            context: "weights c_k must match the driving dimension".into(),
            expected: m,
            got: c_k.len(),
        });
    }
    let grid = conv_grid(drive, t_lo, t_hi, burn_in, 1.0)?;
    let n_cells = grid.window + grid.count - 1;
    let cells = drive.increments_over(t_lo - grid.burn_in, n_cells)?;
    let kernel = Kernel::ScalarPow {
        base: (-grid.h).exp(),
    };
    let values = convolve(&kernel, &cells, m, &grid);
    let u_c: Vec<f64> = (0..grid.count)
        .map(|o| {
            c_k.iter()
                .zip(&values[o * m..(o + 1) * m])
                .map(|(c, u)| c * u)
                .sum()
        })
        .collect();
    let c_norm = c_k.iter().map(|c| c * c).sum::<f64>().sqrt();
    let bound = TAIL_ENVELOPE * c_norm.max(1.0) / 2.0f64.sqrt() * (-grid.burn_in).exp();
    Ok(OUBundle {
        kind: OuKind::U,
        t_lo,
        step: grid.h,
        dim: m,
        values,
        u_c: Some(u_c),
        weights: c_k.to_vec(),
        burn_in: grid.burn_in,
        truncation_bound: bound,
        provenance: drive.provenance(),
    })
}

/// State scaling by exp(u_c): turns solutions of the conjugated random ODE
/// back into solutions of the Stratonovich system and vice versa.
#[derive(Debug, Clone, Copy)]
pub struct ConjugationTransform<'a> {
    bundle: &'a OUBundle,
}

impl<'a> ConjugationTransform<'a> {
    pub fn new(bundle: &'a OUBundle) -> Result<Self> {
        if bundle.u_c.is_none() {
            return Err(Error::Precondition(
                "conjugation needs a bundle with u_c (construct it with ou_u)".into(),
            ));
        }
        Ok(Self { bundle })
    }

    pub fn u_c_at(&self, t: f64) -> Result<f64> {
        self.bundle.u_c_at(t)
    }

    /// y * exp(u_c(theta_t w)), componentwise.
    pub fn conjugate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let scale = self.u_c_at(t)?.exp();
        Ok(y.iter().map(|v| v * scale).collect())
    }

    /// x / exp(u_c(theta_t w)); inverse of `conjugate` to one rounding.
    pub fn inverse_conjugate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let scale = self.u_c_at(t)?.exp();
        Ok(x.iter().map(|v| v / scale).collect())
    }
}
