//! Time stepping along a frozen noise path.
//!
//! Every scheme reads its Brownian increments from the driving path and
//! never draws noise of its own, so an integrator output is a pure
//! function of (system, path seed, shift offset, window, initial state,
//! step). Accuracy is controlled by refining the path, not by
//! sub-stepping: the pullback machinery needs one consistent realization
//! across all depths.
//!
//! Blow-ups are flagged and truncate the trajectory instead of aborting,
//! so diagnostics can report a divergent system gracefully.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::linalg::{expm, Mat};
use crate::noise::{Driving, Provenance, TwoSidedWienerPath};
use crate::stationary::{self, OUBundle};
use crate::systems::SystemSpec;

/// States of one integration run on the driving grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub t1: f64,
    pub step: f64,
    pub dim: usize,
    /// Flat row-major states; `(steps + 1) * dim` entries unless truncated.
    pub states: Vec<f64>,
    pub driving: Provenance,
    /// Index of the first non-finite state, when the run blew up.
    pub blow_up: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    /// CSV export: header row, then time plus one column per coordinate,
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{:.16e}", self.time(k))?;
            for v in self.state(k) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Validate an integration window against the driving grid and return the
/// number of steps.
fn window_steps<D: Driving>(drive: &D, t0: f64, t1: f64) -> Result<usize> {
    if t1 < t0 {
        return Err(Error::ReversedInterval { s: t0, t: t1 });
    }
    let h = drive.step();
    let steps = ((t1 - t0) / h).round();
    if ((t0 + steps * h) - t1).abs() > 1e-9 * t1.abs().max(1.0) {
        return Err(Error::NotGridAligned {
            what: "integration window",
            value: t1 - t0,
            step: h,
        });
    }
    Ok(steps as usize)
}

fn check_initial(spec: &SystemSpec, x0: &[f64]) -> Result<()> {
    if x0.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state length".into(),
            expected: spec.state_dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("initial state {x0:?}")));
    }
    Ok(())
}

/// Matrix exponential `exp(A t)` (the deterministic fundamental matrix).
pub fn matrix_exponential(a: &Mat, t: f64) -> Result<Mat> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("time {t}")));
    }
    expm(&a.scale(t))
}

/// Euler-Maruyama on the path grid for the three Ito classes:
/// `x_{j+1} = x_j + drift(x_j) h + diffusion(x_j) dB_j`.
pub fn integrate_ito<D: Driving>(
    spec: &SystemSpec,
    drive: &D,
    t0: f64,
    t1: f64,
    x0: &[f64],
) -> Result<Trajectory> {
    if matches!(spec, SystemSpec::StratonovichDissipative { .. }) {
        return Err(Error::UnsupportedClass {
            op: "integrate_ito",
            class: spec.class_name(),
        });
    }
    check_initial(spec, x0)?;
    let n = spec.state_dim();
    let m = spec.noise_dim();
    let steps = window_steps(drive, t0, t1)?;
    let incs = drive.increments_over(t0, steps)?;
    let h = drive.step();

    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut drift = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut blow_up = None;
    for j in 0..steps {
        spec.drift_into(&x, &mut drift);
        spec.apply_diffusion(&x, &incs[j * m..(j + 1) * m], &mut noise);
        for i in 0..n {
            x[i] += drift[i] * h + noise[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            blow_up = Some(j + 1);
            break;
        }
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        t0,
        t1,
        step: h,
        dim: n,
        states,
        driving: drive.provenance(),
        blow_up,
    })
}

/// Heun predictor-corrector consistent with the Stratonovich integral.
pub fn integrate_stratonovich<D: Driving>(
    spec: &SystemSpec,
    drive: &D,
    t0: f64,
    t1: f64,
    x0: &[f64],
) -> Result<Trajectory> {
    let SystemSpec::StratonovichDissipative { .. } = spec else {
        return Err(Error::UnsupportedClass {
            op: "integrate_stratonovich",
            class: spec.class_name(),
        });
    };
    check_initial(spec, x0)?;
    let n = spec.state_dim();
    let m = spec.noise_dim();
    let steps = window_steps(drive, t0, t1)?;
    let incs = drive.increments_over(t0, steps)?;
    let h = drive.step();

    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut predictor = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut n1 = vec![0.0; n];
    let mut n2 = vec![0.0; n];
    let mut blow_up = None;
    for j in 0..steps {
        let db = &incs[j * m..(j + 1) * m];
        spec.drift_into(&x, &mut d1);
        spec.apply_diffusion(&x, db, &mut n1);
        for i in 0..n {
            predictor[i] = x[i] + d1[i] * h + n1[i];
        }
        spec.drift_into(&predictor, &mut d2);
        spec.apply_diffusion(&predictor, db, &mut n2);
        for i in 0..n {
            x[i] += 0.5 * h * (d1[i] + d2[i]) + 0.5 * (n1[i] + n2[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            blow_up = Some(j + 1);
            break;
        }
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        t0,
        t1,
        step: h,
        dim: n,
        states,
        driving: drive.provenance(),
        blow_up,
    })
}

/// Right-hand side of the conjugated random ODE:
/// `G(w, y) = exp(-u) g(y exp(u)) + y u` with `u = u_c` at the current time.
fn random_ode_rhs(spec: &SystemSpec, u: f64, y: &[f64], scaled: &mut [f64], out: &mut [f64]) {
    let eu = u.exp();
    for (s, yi) in scaled.iter_mut().zip(y) {
        *s = yi * eu;
    }
    spec.drift_into(scaled, out);
    let inv = 1.0 / eu;
    for (o, yi) in out.iter_mut().zip(y) {
        *o = *o * inv + yi * u;
    }
}

/// Classical RK4 on the conjugated random ODE, reading the stationary
/// process `u_c` from the bundle (midpoint values by linear interpolation).
pub fn integrate_random_ode(
    spec: &SystemSpec,
    ou: &OUBundle,
    t0: f64,
    t1: f64,
    y0: &[f64],
) -> Result<Trajectory> {
    let SystemSpec::StratonovichDissipative { .. } = spec else {
        return Err(Error::UnsupportedClass {
            op: "integrate_random_ode",
            class: spec.class_name(),
        });
    };
    check_initial(spec, y0)?;
    let n = spec.state_dim();
    let h = ou.step();
    if t1 < t0 {
        return Err(Error::ReversedInterval { s: t0, t: t1 });
    }
    let steps = ((t1 - t0) / h).round() as usize;
    if ((t0 + steps as f64 * h) - t1).abs() > 1e-9 * t1.abs().max(1.0) {
        return Err(Error::NotGridAligned {
            what: "integration window",
            value: t1 - t0,
            step: h,
        });
    }
    // validates bundle coverage of the whole window up front
    ou.u_c_at(t0)?;
    ou.u_c_at(t1)?;

    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut scaled = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut blow_up = None;
    for j in 0..steps {
        let t = t0 + j as f64 * h;
        let u_lo = ou.u_c_at(t)?;
        let u_hi = ou.u_c_at(t + h)?;
        let u_mid = 0.5 * (u_lo + u_hi);

        random_ode_rhs(spec, u_lo, &y, &mut scaled, &mut k1);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        random_ode_rhs(spec, u_mid, &stage, &mut scaled, &mut k2);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        random_ode_rhs(spec, u_mid, &stage, &mut scaled, &mut k3);
        for i in 0..n {
            stage[i] = y[i] + h * k3[i];
        }
        random_ode_rhs(spec, u_hi, &stage, &mut scaled, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            blow_up = Some(j + 1);
            break;
        }
        states.extend_from_slice(&y);
    }
    Ok(Trajectory {
        t0,
        t1,
        step: h,
        dim: n,
        states,
        driving: ou.provenance(),
        blow_up,
    })
}

/// Fundamental matrix of the linear part on the driving grid.
#[derive(Debug, Clone)]
pub struct FundamentalMatrixPath {
    pub step: f64,
    /// Matrices at times 0, h, 2h, ...; the first entry is the identity.
    pub matrices: Vec<Mat>,
    pub blow_up: Option<usize>,
    /// First index with vanishing determinant, if any.
    pub singular_at: Option<usize>,
}

impl FundamentalMatrixPath {
    pub fn at(&self, k: usize) -> &Mat {
        &self.matrices[k]
    }

    pub fn final_matrix(&self) -> &Mat {
        self.matrices
            .last()
            .expect("fundamental matrix path always holds the identity")
    }
}

/// Matrix Euler-Maruyama for the linear cocycle:
/// `Psi_{j+1} = Psi_j + A Psi_j h + sum_k sigma_k Psi_j dB_{k,j}`, Psi(0) = I.
pub fn fundamental_matrix<D: Driving>(
    spec: &SystemSpec,
    drive: &D,
    t1: f64,
) -> Result<FundamentalMatrixPath> {
    let skeleton = spec.linear_skeleton()?;
    if t1 < 0.0 {
        return Err(Error::ReversedInterval { s: 0.0, t: t1 });
    }
    let steps = window_steps(drive, 0.0, t1)?;
    let m = drive.dim();
    if skeleton.sigma_k.len() != m {
        return Err(Error::DimensionMismatch {
            context: "noise dimension of the driving path".into(),
            expected: skeleton.sigma_k.len(),
            got: m,
        });
    }
    let incs = drive.increments_over(0.0, steps)?;
    let h = drive.step();
    let n = skeleton.a.rows();

    let mut matrices = Vec::with_capacity(steps + 1);
    matrices.push(Mat::identity(n));
    let mut blow_up = None;
    let mut singular_at = None;
    for j in 0..steps {
        let psi = matrices.last().expect("at least the identity is stored");
        let mut next = psi.add(&skeleton.a.matmul(psi).scale(h));
        for (k, s) in skeleton.sigma_k.iter().enumerate() {
            let db = incs[j * m + k];
            if db != 0.0 {
                next = next.add(&s.matmul(psi).scale(db));
            }
        }
        if !next.is_finite() {
            blow_up = Some(j + 1);
            break;
        }
        if singular_at.is_none() && next.determinant() == 0.0 {
            singular_at = Some(j + 1);
        }
        matrices.push(next);
    }
    Ok(FundamentalMatrixPath {
        step: h,
        matrices,
        blow_up,
        singular_at,
    })
}

/// Exact discrete variation-of-constants endpoint for a linear system with
/// additive noise (`dx = A x dt + Sigma dB`):
/// `x(t1) = Phi(t1 - t0) x0 + sum_j Phi(t1 - s_j) Sigma dB_j`
/// with `s_j` the left end of cell j (relative to t0).
///
/// Scalar systems evaluate each kernel weight with its own exponential;
/// matrix systems use the step-kernel recursion `x <- Phi(h)(x + Sigma dB)`.
pub fn exact_linear_endpoint<D: Driving>(
    a: &Mat,
    sigma: &Mat,
    drive: &D,
    t0: f64,
    t1: f64,
    x0: &[f64],
) -> Result<Vec<f64>> {
    let n = a.rows();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state length".into(),
            expected: n,
            got: x0.len(),
        });
    }
    let steps = window_steps(drive, t0, t1)?;
    let m = drive.dim();
    let incs = drive.increments_over(t0, steps)?;
    let h = drive.step();

    if n == 1 {
        let alpha = a.get(0, 0);
        let mut acc = (alpha * (t1 - t0)).exp() * x0[0];
        for j in 0..steps {
            let s_j = j as f64 * h;
            let mut sdb = 0.0;
            for k in 0..m {
                sdb += sigma.get(0, k) * incs[j * m + k];
            }
            acc += (alpha * ((t1 - t0) - s_j)).exp() * sdb;
        }
        return Ok(vec![acc]);
    }

    let phi_h = expm(&a.scale(h))?;
    let mut x = x0.to_vec();
    let mut sdb = vec![0.0; n];
    for j in 0..steps {
        sigma.matvec_into(&incs[j * m..(j + 1) * m], &mut sdb);
        for i in 0..n {
            x[i] += sdb[i];
        }
        x = phi_h.matvec(&x);
    }
    Ok(x)
}

/// Which scheme a self-convergence study exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    EulerMaruyama,
    Heun,
    RandomOdeRk4,
}

/// Expected strong-order bands per scheme, used by the convergence gate.
/// Standard expectations for the schemes as implemented here; the step
/// sampling of u_c limits the random-ODE rate.
pub fn expected_order_band(kind: IntegratorKind, multiplicative: bool) -> (f64, f64) {
    match (kind, multiplicative) {
        (IntegratorKind::EulerMaruyama, false) => (0.8, 1.2),
        (IntegratorKind::EulerMaruyama, true) => (0.3, 0.7),
        (IntegratorKind::Heun, _) => (0.4, f64::INFINITY),
        (IntegratorKind::RandomOdeRk4, _) => (0.7, f64::INFINITY),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergencePoint {
    pub step: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceStudy {
    pub kind: IntegratorKind,
    pub points: Vec<ConvergencePoint>,
    /// Slope of log error against log step.
    pub fitted_order: f64,
    pub reference_step: f64,
}

/// Extra refinements separating the reference grid from the finest fitted
/// level; a reference only one halving away biases the fitted order up.
const REFERENCE_GAP: usize = 3;

/// Strong self-convergence against a much finer refinement of the same path.
///
/// Runs `levels` fitted resolutions plus a reference `REFERENCE_GAP`
/// halvings below the finest, returning `levels` (step, endpoint error)
/// pairs and the fitted order. Strong error is an expectation, so the
/// endpoint errors are averaged over `seed_samples` sibling realizations;
/// one sample is enough for additive noise, multiplicative noise needs
/// tens of samples for a stable fit.
#[allow(clippy::too_many_arguments)]
pub fn self_convergence(
    kind: IntegratorKind,
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    t0: f64,
    t1: f64,
    x0: &[f64],
    levels: usize,
    seed_samples: usize,
) -> Result<ConvergenceStudy> {
    if levels < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 levels, got {levels}"
        )));
    }
    if seed_samples == 0 {
        return Err(Error::Precondition("need at least one seed sample".into()));
    }
    let total = levels + REFERENCE_GAP;
    let mut steps = vec![0.0; total + 1];
    let mut error_sums = vec![0.0; levels];
    for sample in 0..seed_samples {
        let mut endpoints = Vec::with_capacity(total + 1);
        let mut current = if sample == 0 {
            path.clone()
        } else {
            path.sibling(sample as u64)
        };
        #[allow(clippy::needless_range_loop)]
        for level in 0..=total {
            let endpoint = match kind {
                IntegratorKind::EulerMaruyama => integrate_ito(spec, &current, t0, t1, x0)?
                    .final_state()
                    .to_vec(),
                IntegratorKind::Heun => integrate_stratonovich(spec, &current, t0, t1, x0)?
                    .final_state()
                    .to_vec(),
                IntegratorKind::RandomOdeRk4 => {
                    let SystemSpec::StratonovichDissipative { c_k, .. } = spec else {
                        return Err(Error::UnsupportedClass {
                            op: "self_convergence(random-ode)",
                            class: spec.class_name(),
                        });
                    };
                    let ou = stationary::ou_u(&current, c_k, t0, t1, None)?;
                    integrate_random_ode(spec, &ou, t0, t1, x0)?
                        .final_state()
                        .to_vec()
                }
            };
            steps[level] = current.step();
            endpoints.push(endpoint);
            if level < total {
                current = current.refine();
            }
        }
        let reference = endpoints.last().expect("levels >= 2");
        for (sum, endpoint) in error_sums.iter_mut().zip(&endpoints[..levels]) {
            *sum += crate::linalg::dist(endpoint, reference);
        }
    }
    let points: Vec<ConvergencePoint> = error_sums
        .iter()
        .zip(&steps)
        .map(|(sum, &h)| ConvergencePoint {
            step: h,
            error: sum / seed_samples as f64,
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.step.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.max(1e-300).ln()).collect();
    let fitted_order = linear_fit(&xs, &ys).map_or(f64::NAN, |f| f.slope);
    Ok(ConvergenceStudy {
        kind,
        points,
        fitted_order,
        reference_step: steps[total],
    })
}
