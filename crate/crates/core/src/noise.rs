//! Two-sided Brownian driving paths.
//!
//! A pullback trajectory starts ever deeper in the past of one fixed noise
//! realization, so the path store is built around three guarantees:
//!
//! * regeneration with the same seed is bit-identical,
//! * extending either horizon never perturbs already-sampled values
//!   (increments are keyed by absolute grid cell, not draw order),
//! * halving the step fills midpoints by Brownian-bridge sampling keyed to
//!   (seed, level), leaving every coarse value untouched.
//!
//! Shifts are views: `(theta_t w)(s) = w(t+s) - w(t)` evaluated on the
//! stored grid, allocating nothing.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::standard_normal_at;

const DUMP_MAGIC: &[u8; 4] = b"RDSW";
const DUMP_VERSION: u32 = 1;

/// Relative tolerance for deciding whether a time sits on the grid.
const GRID_TOL: f64 = 1e-9;

/// Identity of the realization driving an integration, kept for provenance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub level: u32,
    pub step: f64,
    /// Shift offset of the view relative to the stored path (0 for the path itself).
    pub offset: f64,
}

/// Sampled m-dimensional two-sided Brownian motion on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSidedWienerPath {
    seed: u64,
    dim: usize,
    step: f64,
    /// Refinement level; level 0 increments are keyed by absolute cell index.
    level: u32,
    /// Grid steps on each side of the origin at the current level.
    past_steps: usize,
    future_steps: usize,
    /// Point-major values: (past_steps + future_steps + 1) rows of `dim`.
    values: Vec<f64>,
}

/// Round `t` to a signed number of grid steps, rejecting off-grid times.
fn grid_steps(t: f64, step: f64, what: &'static str) -> Result<i64> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("{what} = {t}")));
    }
    let j = (t / step).round();
    if (j * step - t).abs() > GRID_TOL * t.abs().max(1.0) {
        return Err(Error::NotGridAligned {
            what,
            value: t,
            step,
        });
    }
    Ok(j as i64)
}

impl TwoSidedWienerPath {
    /// Sample a fresh path covering `[-past_horizon, future_horizon]`.
    pub fn sample(
        seed: u64,
        past_horizon: f64,
        future_horizon: f64,
        step: f64,
        dim: usize,
    ) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidStep(step));
        }
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                context: "path dimension".into(),
                expected: 1,
                got: 0,
            });
        }
        if past_horizon < 0.0 || future_horizon < 0.0 || past_horizon + future_horizon <= 0.0 {
            return Err(Error::InvalidHorizons {
                past: past_horizon,
                future: future_horizon,
            });
        }
        let past_steps = grid_steps(past_horizon, step, "past horizon")?;
        let future_steps = grid_steps(future_horizon, step, "future horizon")?;
        let mut path = Self {
            seed,
            dim,
            step,
            level: 0,
            past_steps: past_steps as usize,
            future_steps: future_steps as usize,
            values: Vec::new(),
        };
        path.values = path.generate_level0();
        Ok(path)
    }

    /// Cumulative sums of cell-keyed increments, anchored at w(0) = 0.
    fn generate_level0(&self) -> Vec<f64> {
        let m = self.dim;
        let p = self.past_steps as i64;
        let f = self.future_steps as i64;
        let n_points = (p + f + 1) as usize;
        let mut values = vec![0.0; n_points * m];
        let sqrt_h = self.step.sqrt();
        let origin = p as usize;
        // forward from 0: cell j covers [j*h, (j+1)*h)
        for j in 0..f {
            let base = (origin + j as usize) * m;
            for k in 0..m {
                values[base + m + k] = values[base + k]
                    + sqrt_h * standard_normal_at(self.seed, self.level, j, k as u32);
            }
        }
        // backward from 0
        for j in (-p..0).rev() {
            let i = (j + p) as usize;
            for k in 0..m {
                values[i * m + k] = values[(i + 1) * m + k]
                    - sqrt_h * standard_normal_at(self.seed, self.level, j, k as u32);
            }
        }
        values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn past_horizon(&self) -> f64 {
        self.past_steps as f64 * self.step
    }

    pub fn future_horizon(&self) -> f64 {
        self.future_steps as f64 * self.step
    }

    /// Number of stored grid points.
    pub fn len(&self) -> usize {
        self.past_steps + self.future_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn index_of(&self, t: f64, what: &'static str) -> Result<usize> {
        let j = grid_steps(t, self.step, what)?;
        let p = self.past_steps as i64;
        let f = self.future_steps as i64;
        if j < -p || j > f {
            return Err(Error::OutOfHorizon {
                t,
                lo: -self.past_horizon(),
                hi: self.future_horizon(),
                required_past: (-t).max(self.past_horizon()),
            });
        }
        Ok((j + p) as usize)
    }

    /// Path value w(t) at a stored grid time.
    pub fn value(&self, t: f64) -> Result<&[f64]> {
        let i = self.index_of(t, "evaluation time")?;
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Increment w(t) - w(s) for grid times s <= t.
    pub fn increment(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        if s > t {
            return Err(Error::ReversedInterval { s, t });
        }
        let a = self.value(s)?;
        let b = self.value(t)?;
        Ok(b.iter().zip(a).map(|(x, y)| x - y).collect())
    }

    /// View of the shifted realization `theta_t w`.
    pub fn shift(&self, t: f64) -> Result<ShiftedPathView<'_>> {
        let offset_steps = grid_steps(t, self.step, "shift offset")?;
        // the anchor w(t) must itself be stored
        self.index_of(t, "shift offset")?;
        Ok(ShiftedPathView {
            base: self,
            offset_steps,
        })
    }

    /// Halve the step, preserving every stored value and filling midpoints
    /// by Brownian-bridge sampling keyed to (seed, level + 1).
    pub fn refine(&self) -> Self {
        let m = self.dim;
        let old_points = self.len();
        let new_level = self.level + 1;
        let new_past = self.past_steps * 2;
        let new_future = self.future_steps * 2;
        let n_points = new_past + new_future + 1;
        let mut values = vec![0.0; n_points * m];
        let half_sd = self.step.sqrt() / 2.0;
        let old_p = self.past_steps as i64;
        for i in 0..old_points {
            let src = &self.values[i * m..(i + 1) * m];
            values[(2 * i) * m..(2 * i + 1) * m].copy_from_slice(src);
        }
        for i in 0..old_points - 1 {
            // midpoint of the old cell [j, j+1] sits at new-grid index 2j + 1
            let child_index = 2 * (i as i64 - old_p) + 1;
            for k in 0..m {
                let left = self.values[i * m + k];
                let right = self.values[(i + 1) * m + k];
                values[(2 * i + 1) * m + k] = 0.5 * (left + right)
                    + half_sd * standard_normal_at(self.seed, new_level, child_index, k as u32);
            }
        }
        Self {
            seed: self.seed,
            dim: m,
            step: self.step / 2.0,
            level: new_level,
            past_steps: new_past,
            future_steps: new_future,
            values,
        }
    }

    /// Same geometry, different seed; used for averaging over realizations.
    pub fn sibling(&self, seed_offset: u64) -> Self {
        let base_step = self.step * f64::from(1u32 << self.level);
        let mut path = Self::sample(
            self.seed.wrapping_add(seed_offset),
            self.past_horizon(),
            self.future_horizon(),
            base_step,
            self.dim,
        )
        .expect("sibling reuses validated geometry");
        for _ in 0..self.level {
            path = path.refine();
        }
        path
    }

    /// Regenerate with extended horizons; every currently stored value is
    /// reproduced bit for bit.
    pub fn grow(&self, past_horizon: f64, future_horizon: f64) -> Result<Self> {
        if past_horizon < self.past_horizon() - GRID_TOL
            || future_horizon < self.future_horizon() - GRID_TOL
        {
            return Err(Error::Precondition(format!(
                "grow cannot shrink horizons (have [{}, {}], requested [{}, {}])",
                self.past_horizon(),
                self.future_horizon(),
                past_horizon,
                future_horizon
            )));
        }
        let base_step = self.step * f64::from(1u32 << self.level);
        let mut path = Self::sample(self.seed, past_horizon, future_horizon, base_step, self.dim)?;
        for _ in 0..self.level {
            path = path.refine();
        }
        Ok(path)
    }

    /// Binary dump: fixed header plus row-major little-endian values.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.level.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.past_steps as u64).to_le_bytes())?;
        w.write_all(&(self.future_steps as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:?}, expected {DUMP_MAGIC:?}"
            )));
        }
        let version = read_u32(r)?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!(
                "unsupported path format version {version} (expected {DUMP_VERSION})"
            )));
        }
        let seed = read_u64(r)?;
        let dim = read_u32(r)? as usize;
        let level = read_u32(r)?;
        let step = read_f64(r)?;
        let past_steps = read_u64(r)? as usize;
        let future_steps = read_u64(r)? as usize;
        let n = (past_steps + future_steps + 1) * dim;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(read_f64(r)?);
        }
        Ok(Self {
            seed,
            dim,
            step,
            level,
            past_steps,
            future_steps,
            values,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Shift view `theta_t w`; allocates no samples of its own.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedPathView<'a> {
    base: &'a TwoSidedWienerPath,
    offset_steps: i64,
}

impl<'a> ShiftedPathView<'a> {
    pub fn offset(&self) -> f64 {
        self.offset_steps as f64 * self.base.step
    }

    pub fn base(&self) -> &'a TwoSidedWienerPath {
        self.base
    }

    /// `(theta_t w)(s) = w(t + s) - w(t)`.
    pub fn value(&self, s: f64) -> Result<Vec<f64>> {
        let anchor = self.base.value(self.offset())?;
        let shifted = self.base.value(self.offset() + s)?;
        Ok(shifted.iter().zip(anchor).map(|(x, y)| x - y).collect())
    }

    pub fn increment(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        self.base.increment(self.offset() + s, self.offset() + t)
    }

    /// Composing shifts adds offsets.
    pub fn shift(&self, t: f64) -> Result<ShiftedPathView<'a>> {
        let extra = grid_steps(t, self.base.step, "shift offset")?;
        let combined = self.offset_steps + extra;
        self.base
            .index_of(combined as f64 * self.base.step, "shift offset")?;
        Ok(ShiftedPathView {
            base: self.base,
            offset_steps: combined,
        })
    }
}

/// Common read surface integrators consume: grid geometry plus frozen
/// increments. Implemented by paths and shift views.
pub trait Driving {
    fn dim(&self) -> usize;
    fn step(&self) -> f64;
    /// Valid evaluation window (relative times for views).
    fn time_range(&self) -> (f64, f64);
    fn increment(&self, s: f64, t: f64) -> Result<Vec<f64>>;
    fn provenance(&self) -> Provenance;

    /// Flat `n_steps x dim` buffer of consecutive cell increments starting at `t0`.
    fn increments_over(&self, t0: f64, n_steps: usize) -> Result<Vec<f64>> {
        let m = self.dim();
        let h = self.step();
        let mut out = Vec::with_capacity(n_steps * m);
        for j in 0..n_steps {
            let s = t0 + j as f64 * h;
            out.extend_from_slice(&self.increment(s, s + h)?);
        }
        Ok(out)
    }
}

impl Driving for TwoSidedWienerPath {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self) -> f64 {
        self.step
    }

    fn time_range(&self) -> (f64, f64) {
        (-self.past_horizon(), self.future_horizon())
    }

    fn increment(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        TwoSidedWienerPath::increment(self, s, t)
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.seed,
            level: self.level,
            step: self.step,
            offset: 0.0,
        }
    }

    fn increments_over(&self, t0: f64, n_steps: usize) -> Result<Vec<f64>> {
        let m = self.dim;
        let first = self.index_of(t0, "integration start")?;
        // validates the far end too
        self.index_of(t0 + n_steps as f64 * self.step, "integration end")?;
        let mut out = Vec::with_capacity(n_steps * m);
        for i in first..first + n_steps {
            let a = &self.values[i * m..(i + 1) * m];
            let b = &self.values[(i + 1) * m..(i + 2) * m];
            out.extend(b.iter().zip(a).map(|(x, y)| x - y));
        }
        Ok(out)
    }
}

impl Driving for ShiftedPathView<'_> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn step(&self) -> f64 {
        self.base.step
    }

    fn time_range(&self) -> (f64, f64) {
        let (lo, hi) = self.base.time_range();
        (lo - self.offset(), hi - self.offset())
    }

    fn increment(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        ShiftedPathView::increment(self, s, t)
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.base.seed,
            level: self.base.level,
            step: self.base.step,
            offset: self.offset(),
        }
    }

    fn increments_over(&self, t0: f64, n_steps: usize) -> Result<Vec<f64>> {
        self.base.increments_over(self.offset() + t0, n_steps)
    }
}
