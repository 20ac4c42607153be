//! Pullback trajectories, random-equilibrium estimation, and the
//! diagnostics that certify contraction and temperedness empirically.
//!
//! A pullback state starts the dynamics ever deeper in the past of one
//! frozen realization and observes at time 0. When trajectories contract
//! at some exponential rate and displacements stay dominated by a
//! subexponential envelope, those states form a Cauchy sequence whose
//! limit is the unique random equilibrium; the functions here measure
//! exactly those two effects (`verify_h1`, `verify_h2`), the invariance
//! and uniqueness of the limit, Birkhoff time averages, and top Lyapunov
//! exponents of linear cocycles.
//!
//! Everything is sampled per realization: a passing report certifies the
//! sampled seeds, it proves nothing about the full noise space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::integrators::{
    exact_linear_endpoint, integrate_ito, integrate_random_ode, integrate_stratonovich, Trajectory,
};
use crate::linalg::{self, Mat};
use crate::noise::{Driving, TwoSidedWienerPath};
use crate::rng::standard_normal_at;
use crate::stationary::{ou_u, OUBundle};
use crate::systems::{Margins, RatePrediction, SystemSpec};

/// Stream tag separating discrete-map noise from path increments.
const DISCRETE_NOISE_DOMAIN: u32 = u32::MAX;

/// Underflow floor for log fits on separations and residuals.
const LOG_FLOOR: f64 = 1e-300;

/// Which integration route realizes the cocycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PullbackMethod {
    /// Euler-Maruyama (any Ito class).
    EulerMaruyama,
    /// Exact discrete variation-of-constants kernel; additive Lipschitz
    /// class with vanishing nonlinearity only.
    ExactLinear,
    /// Heun directly on the Stratonovich system.
    Heun,
    /// Conjugation: scale into the random ODE, integrate with RK4, scale back.
    ConjugationPipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullbackConfig {
    /// Integration route; `None` picks Euler-Maruyama or Heun by class.
    pub method: Option<PullbackMethod>,
    pub margins: Margins,
    /// Fits ignore schedule times below this transient cutoff.
    pub transient_cut: f64,
    /// Convergence additionally requires this fit quality over the tail.
    pub r2_threshold: f64,
    /// Number of trailing residuals entering the convergence fit.
    pub fit_window: usize,
    /// Burn-in override for conjugation bundles.
    pub burn_in: Option<f64>,
}

impl Default for PullbackConfig {
    fn default() -> Self {
        Self {
            method: None,
            margins: Margins::default(),
            transient_cut: 1.0,
            r2_threshold: 0.9,
            fit_window: 5,
            burn_in: None,
        }
    }
}

fn resolve_method(spec: &SystemSpec, cfg: &PullbackConfig) -> Result<PullbackMethod> {
    let is_strat = matches!(spec, SystemSpec::StratonovichDissipative { .. });
    match cfg.method {
        None => Ok(if is_strat {
            PullbackMethod::Heun
        } else {
            PullbackMethod::EulerMaruyama
        }),
        Some(PullbackMethod::EulerMaruyama) if !is_strat => Ok(PullbackMethod::EulerMaruyama),
        Some(PullbackMethod::ExactLinear) => match spec {
            SystemSpec::AdditiveLipschitz { f, .. } if f.is_zero() => {
                Ok(PullbackMethod::ExactLinear)
            }
            _ => Err(Error::Precondition(
                "exact-linear integration needs an additive Lipschitz system with zero drift \
                 nonlinearity"
                    .into(),
            )),
        },
        Some(m @ (PullbackMethod::Heun | PullbackMethod::ConjugationPipeline)) if is_strat => Ok(m),
        Some(m) => Err(Error::Precondition(format!(
            "method {m:?} does not apply to class {}",
            spec.class_name()
        ))),
    }
}

fn traj_terminal(traj: Trajectory) -> Result<Vec<f64>> {
    if let Some(step_index) = traj.blow_up {
        let depth = -traj.t0;
        return Err(Error::PullbackBlowUp {
            depth,
            step_index,
            partial: Box::new(traj),
        });
    }
    Ok(traj.final_state().to_vec())
}

/// Evolve the system forward over `[t_a, t_b]` along the stored realization.
fn evolve(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    t_a: f64,
    t_b: f64,
    x: &[f64],
    cfg: &PullbackConfig,
) -> Result<Vec<f64>> {
    match resolve_method(spec, cfg)? {
        PullbackMethod::EulerMaruyama => traj_terminal(integrate_ito(spec, path, t_a, t_b, x)?),
        PullbackMethod::ExactLinear => {
            let SystemSpec::AdditiveLipschitz { a, sigma, .. } = spec else {
                unreachable!("resolve_method checked the class")
            };
            exact_linear_endpoint(a, sigma, path, t_a, t_b, x)
        }
        PullbackMethod::Heun => traj_terminal(integrate_stratonovich(spec, path, t_a, t_b, x)?),
        PullbackMethod::ConjugationPipeline => {
            let SystemSpec::StratonovichDissipative { c_k, .. } = spec else {
                unreachable!("resolve_method checked the class")
            };
            let bundle = ou_u(path, c_k, t_a, t_b, cfg.burn_in)?;
            let scale_in = (-bundle.u_c_at(t_a)?).exp();
            let y0: Vec<f64> = x.iter().map(|v| v * scale_in).collect();
            let y = traj_terminal(integrate_random_ode(spec, &bundle, t_a, t_b, &y0)?)?;
            let scale_out = bundle.u_c_at(t_b)?.exp();
            Ok(y.iter().map(|v| v * scale_out).collect())
        }
    }
}

/// State of the pullback trajectory: integrate from time `-t` to 0 along
/// the frozen realization and return the terminal state.
pub fn pullback_state(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    x: &[f64],
    t: f64,
    cfg: &PullbackConfig,
) -> Result<Vec<f64>> {
    if t < 0.0 {
        return Err(Error::Precondition(format!(
            "pullback depth must be nonnegative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    evolve(spec, path, -t, 0.0, x, cfg)
}

/// Grid-snapped geometric schedule t0 * ratio^k, capped at and including
/// `t_max` so the deepest pullback exhausts the available horizon.
pub fn geometric_schedule(t0: f64, ratio: f64, t_max: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = t0;
    while t <= t_max * (1.0 + 1e-12) {
        let snapped = (t / step).round() * step;
        if snapped > 0.0 && Some(&snapped) != out.last() {
            out.push(snapped);
        }
        t *= ratio;
    }
    let cap = (t_max / step).round() * step;
    if cap > 0.0 && out.last().is_none_or(|last| *last < cap) {
        out.push(cap);
    }
    out
}

/// One pullback campaign along an increasing depth schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackRun {
    pub spec_id: String,
    pub seed: u64,
    pub schedule: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// d(state_k, state_{k-1}) for k = 1..
    pub cauchy_residuals: Vec<f64>,
    pub equilibrium: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    /// Log-linear fit of the trailing residuals against depth.
    pub residual_fit: Option<LinearFit>,
}

impl PullbackRun {
    /// Monotone Cauchy envelope check from the stored arrays: the tail max
    /// beyond each pair must sit under `prefactor * exp((slope + band) * t)`
    /// evaluated at the pair's earlier schedule time.
    pub fn cauchy_envelope_holds(&self, band: f64) -> bool {
        let Some(fit) = &self.residual_fit else {
            return false;
        };
        let prefactor = fit.intercept.exp();
        (1..self.schedule.len()).all(|k| {
            let tail_max = self.cauchy_residuals[k - 1..]
                .iter()
                .cloned()
                .fold(0.0f64, f64::max);
            tail_max
                <= prefactor * ((fit.slope + band) * self.schedule[k - 1]).exp() + self.tolerance
        })
    }
}

fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::Precondition("schedule must not be empty".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) || schedule[0] < 0.0 {
        return Err(Error::Precondition(format!(
            "schedule must be strictly increasing and nonnegative: {schedule:?}"
        )));
    }
    Ok(())
}

/// Pullback states along the schedule with Cauchy residuals; converged
/// when the final residual beats the tolerance and the trailing residuals
/// fit a decaying exponential.
pub fn estimate_equilibrium(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    x: &[f64],
    schedule: &[f64],
    tol: f64,
    cfg: &PullbackConfig,
) -> Result<PullbackRun> {
    validate_schedule(schedule)?;
    let mut states = Vec::with_capacity(schedule.len());
    for &t in schedule {
        states.push(pullback_state(spec, path, x, t, cfg)?);
    }
    let cauchy_residuals: Vec<f64> = (1..states.len())
        .map(|k| linalg::dist(&states[k], &states[k - 1]))
        .collect();
    let equilibrium = states.last().expect("schedule is nonempty").clone();

    // residual k measures d(state_k, state_{k-1}) and decays like
    // exp(-rate * t_{k-1}), so the fit abscissa is the earlier time
    let window = cfg.fit_window.min(cauchy_residuals.len());
    let fit = if window >= 2 {
        let xs: Vec<f64> = schedule[schedule.len() - 1 - window..schedule.len() - 1].to_vec();
        let ys: Vec<f64> = cauchy_residuals[cauchy_residuals.len() - window..]
            .iter()
            .map(|r| r.max(LOG_FLOOR).ln())
            .collect();
        linear_fit(&xs, &ys)
    } else {
        None
    };
    let last = cauchy_residuals.last().copied().unwrap_or(0.0);
    let tail = &cauchy_residuals[cauchy_residuals.len().saturating_sub(window.max(1))..];
    let tail_vanishes = tail.iter().all(|r| *r <= LOG_FLOOR);
    let fit_ok = fit.is_some_and(|f| f.slope < 0.0 && f.r_squared >= cfg.r2_threshold);
    // a strictly decreasing tail ending an order of magnitude below the
    // tolerance cannot be a coincidental blip; accept it even when the
    // accelerating (convex) decay spoils the linear fit quality
    let tail_decisive = tail.windows(2).all(|w| w[1] < w[0]) && last < 0.1 * tol;
    // a single-depth schedule carries no Cauchy evidence at all
    let converged = !cauchy_residuals.is_empty()
        && last < tol
        && (tail_vanishes || fit_ok || tail_decisive);
    Ok(PullbackRun {
        spec_id: spec.class_name().into(),
        seed: path.seed(),
        schedule: schedule.to_vec(),
        states,
        cauchy_residuals,
        equilibrium,
        converged,
        tolerance: tol,
        residual_fit: fit,
    })
}

/// Fitted contraction rate of pullback separations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub window: (f64, f64),
    pub slope: f64,
    /// exp(intercept) of the fit; the empirical contraction prefactor.
    pub prefactor: f64,
    pub r_squared: f64,
    pub predicted: RatePrediction,
    /// (depth, log separation) pairs entering the fit.
    pub points: Vec<(f64, f64)>,
    /// True when separations underflowed and the window was shortened.
    pub truncated: bool,
}

/// Measure d(phi(t, theta_{-t} w, x), phi(t, theta_{-t} w, y)) along the
/// schedule and fit its exponential decay rate.
pub fn verify_h1(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    x: &[f64],
    y: &[f64],
    schedule: &[f64],
    cfg: &PullbackConfig,
) -> Result<RateFit> {
    validate_schedule(schedule)?;
    if linalg::dist(x, y) == 0.0 {
        return Err(Error::Precondition(
            "contraction measurement needs distinct initial points".into(),
        ));
    }
    let mut points = Vec::new();
    let mut truncated = false;
    for &t in schedule {
        if t < cfg.transient_cut {
            continue;
        }
        let a = pullback_state(spec, path, x, t, cfg)?;
        let b = pullback_state(spec, path, y, t, cfg)?;
        let sep = linalg::dist(&a, &b);
        if sep < LOG_FLOOR {
            truncated = true;
            break;
        }
        points.push((t, sep.ln()));
    }
    if points.len() < 5 {
        return Err(Error::Precondition(format!(
            "rate fit needs at least 5 usable schedule points past the transient cut, got {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = linear_fit(&xs, &ys).expect("at least 5 spread points");
    Ok(RateFit {
        window: (xs[0], *xs.last().expect("nonempty")),
        slope: fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
        predicted: spec.predicted_rate(&cfg.margins),
        points,
        truncated,
    })
}

/// Sup statistics of pullback displacements against exponential envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperednessReport {
    pub quantity: String,
    pub gamma_grid: Vec<f64>,
    /// sup over the schedule of exp(-gamma t) * displacement, per gamma.
    pub sup_stats: Vec<f64>,
    /// Fitted slope of log running-max displacement against depth.
    pub growth_exponent: f64,
    pub lambda0: f64,
    pub schedule: Vec<f64>,
    pub displacements: Vec<f64>,
    pub blow_up: bool,
    pub passed: bool,
}

/// Track the displacement `d(phi(t, theta_{-t} w, x), x)` over the schedule
/// and test that its growth stays below the `lambda0` envelope.
pub fn verify_h2(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    x: &[f64],
    schedule: &[f64],
    gamma_grid: &[f64],
    lambda0: Option<f64>,
    cfg: &PullbackConfig,
) -> Result<TemperednessReport> {
    validate_schedule(schedule)?;
    if gamma_grid.windows(2).any(|w| w[1] < w[0]) || gamma_grid.iter().any(|g| *g <= 0.0) {
        return Err(Error::Precondition(format!(
            "gamma grid must be positive and sorted: {gamma_grid:?}"
        )));
    }
    let rate = spec.predicted_rate(&cfg.margins).rate;
    let lambda0 = lambda0.unwrap_or(rate / 2.0);
    if lambda0 >= rate {
        return Err(Error::Precondition(format!(
            "lambda0 = {lambda0} must sit strictly below the class rate {rate}"
        )));
    }

    let mut displacements = Vec::with_capacity(schedule.len());
    let mut blow_up = false;
    for &t in schedule {
        match pullback_state(spec, path, x, t, cfg) {
            Ok(state) => displacements.push(linalg::dist(&state, x)),
            Err(Error::PullbackBlowUp { .. }) => {
                blow_up = true;
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let sup_stats: Vec<f64> = gamma_grid
        .iter()
        .map(|&g| {
            if blow_up {
                f64::INFINITY
            } else {
                schedule
                    .iter()
                    .zip(&displacements)
                    .map(|(&t, &r)| (-g * t).exp() * r)
                    .fold(0.0f64, f64::max)
            }
        })
        .collect();

    let mut running_max = 0.0f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &r) in schedule.iter().zip(&displacements) {
        running_max = running_max.max(r);
        if t >= cfg.transient_cut {
            xs.push(t);
            ys.push(running_max.max(LOG_FLOOR).ln());
        }
    }
    let growth_exponent = if blow_up {
        f64::INFINITY
    } else {
        linear_fit(&xs, &ys).map_or(f64::INFINITY, |f| f.slope)
    };
    let passed = !blow_up && growth_exponent.is_finite() && growth_exponent < lambda0;
    Ok(TemperednessReport {
        quantity: "pullback-displacement".into(),
        gamma_grid: gamma_grid.to_vec(),
        sup_stats,
        growth_exponent,
        lambda0,
        schedule: schedule.to_vec(),
        displacements,
        blow_up,
        passed,
    })
}

/// Equilibrium bound check: d(U(w), x) against the measured displacement sup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub distance_to_base: f64,
    pub sup_displacement: f64,
    pub satisfied: bool,
}

/// A pullback equilibrium estimate with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumEstimate {
    pub value: Vec<f64>,
    pub seed: u64,
    pub depth: f64,
    pub base_point: Vec<f64>,
    /// (s, |phi(s, w, U(w)) - U(theta_s w)|) pairs.
    pub invariance_residuals: Vec<(f64, f64)>,
    pub uniqueness_spread: Option<f64>,
    pub bound_check: Option<BoundCheck>,
}

/// Estimate the equilibrium by a single pullback of the given depth.
pub fn equilibrium_estimate(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    x: &[f64],
    depth: f64,
    cfg: &PullbackConfig,
) -> Result<EquilibriumEstimate> {
    let value = pullback_state(spec, path, x, depth, cfg)?;
    Ok(EquilibriumEstimate {
        value,
        seed: path.seed(),
        depth,
        base_point: x.to_vec(),
        invariance_residuals: Vec::new(),
        uniqueness_spread: None,
        bound_check: None,
    })
}

/// For each s: compare the forward-evolved equilibrium `phi(s, w, U(w))`
/// with an independent pullback re-estimate of `U(theta_s w)` (depth ending
/// at time s), appending the residuals to the estimate.
pub fn verify_invariance(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    mut est: EquilibriumEstimate,
    s_values: &[f64],
    cfg: &PullbackConfig,
) -> Result<EquilibriumEstimate> {
    for &s in s_values {
        if s < 0.0 {
            return Err(Error::Precondition(format!(
                "invariance times must be >= 0, got {s}"
            )));
        }
        let forward = evolve(spec, path, 0.0, s, &est.value, cfg)?;
        let re_estimated = evolve(spec, path, s - est.depth, s, &est.base_point, cfg)?;
        est.invariance_residuals
            .push((s, linalg::dist(&forward, &re_estimated)));
    }
    Ok(est)
}

/// Pullback limits from several initial points; the spread of the limits
/// measures uniqueness of the equilibrium.
pub fn verify_uniqueness(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    xs: &[Vec<f64>],
    depth: f64,
    tol: f64,
    cfg: &PullbackConfig,
) -> Result<EquilibriumEstimate> {
    if xs.len() < 2 {
        return Err(Error::Precondition(format!(
            "uniqueness needs at least two initial points, got {}",
            xs.len()
        )));
    }
    let mut limits = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        match pullback_state(spec, path, x, depth, cfg) {
            Ok(v) => limits.push(v),
            Err(Error::PullbackBlowUp { .. }) => {
                return Err(Error::MemberBlowUp {
                    member_index: i,
                    point: x.clone(),
                })
            }
            Err(other) => return Err(other),
        }
    }
    let mut spread = 0.0f64;
    for i in 0..limits.len() {
        for j in i + 1..limits.len() {
            spread = spread.max(linalg::dist(&limits[i], &limits[j]));
        }
    }
    let _ = tol;
    Ok(EquilibriumEstimate {
        value: limits[0].clone(),
        seed: path.seed(),
        depth,
        base_point: xs[0].clone(),
        invariance_residuals: Vec::new(),
        uniqueness_spread: Some(spread),
        bound_check: None,
    })
}

/// Attach the equilibrium bound check d(U(w), x) <= sup_t displacement + tol.
pub fn attach_bound_check(
    mut est: EquilibriumEstimate,
    report: &TemperednessReport,
    tol: f64,
) -> EquilibriumEstimate {
    let sup = report.displacements.iter().cloned().fold(0.0f64, f64::max);
    let distance = linalg::dist(&est.value, &est.base_point);
    est.bound_check = Some(BoundCheck {
        distance_to_base: distance,
        sup_displacement: sup,
        satisfied: distance <= sup + tol,
    });
    est
}

/// Time average (1/t) int_{-t}^0 u_c(theta_s w) ds by trapezoid quadrature.
pub fn birkhoff_average(bundle: &OUBundle, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Precondition(format!(
            "averaging window must be positive, got {t}"
        )));
    }
    let h = bundle.step();
    let steps = (t / h).round() as usize;
    if ((steps as f64 * h) - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::NotGridAligned {
            what: "averaging window",
            value: t,
            step: h,
        });
    }
    let mut acc = 0.5 * (bundle.u_c_at(-t)? + bundle.u_c_at(0.0)?);
    for j in 1..steps {
        acc += bundle.u_c_at(-t + j as f64 * h)?;
    }
    Ok(acc * h / t)
}

/// Top Lyapunov exponent estimate of the linear cocycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub estimate: f64,
    pub per_seed: Vec<f64>,
    pub horizon: f64,
    pub renormalization_interval: f64,
    /// Declared decay rate of the class, when available.
    pub declared_lambda: Option<f64>,
    /// estimate <= -declared_lambda + band, when a rate was declared.
    pub consistent_with_declared: Option<bool>,
    pub tolerance_band: f64,
}

/// Propagate the fundamental matrix with per-interval renormalization and
/// average the per-seed growth exponents `log ||Psi|| / T` over sibling
/// realizations of the path.
pub fn top_lyapunov(
    spec: &SystemSpec,
    path: &TwoSidedWienerPath,
    horizon: f64,
    seed_samples: usize,
) -> Result<LyapunovEstimate> {
    let skeleton = spec.linear_skeleton()?;
    if seed_samples == 0 {
        return Err(Error::Precondition("need at least one seed sample".into()));
    }
    let h = path.step();
    let steps_total = (horizon / h).round() as usize;
    if steps_total == 0 || ((steps_total as f64 * h) - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::NotGridAligned {
            what: "lyapunov horizon",
            value: horizon,
            step: h,
        });
    }
    let renorm_interval = 1.0f64;
    let renorm_every = (renorm_interval / h).round().max(1.0) as usize;
    let m = path.dim();
    if skeleton.sigma_k.len() != m {
        return Err(Error::DimensionMismatch {
            context: "noise dimension of the driving path".into(),
            expected: skeleton.sigma_k.len(),
            got: m,
        });
    }
    let n = skeleton.a.rows();

    let mut per_seed = Vec::with_capacity(seed_samples);
    for i in 0..seed_samples {
        let sibling;
        let p = if i == 0 {
            path
        } else {
            sibling = path.sibling(i as u64);
            &sibling
        };
        let incs = p.increments_over(0.0, steps_total)?;
        let mut psi = Mat::identity(n);
        let mut log_growth = 0.0;
        for j in 0..steps_total {
            let mut next = psi.add(&skeleton.a.matmul(&psi).scale(h));
            for (k, s) in skeleton.sigma_k.iter().enumerate() {
                let db = incs[j * m + k];
                if db != 0.0 {
                    next = next.add(&s.matmul(&psi).scale(db));
                }
            }
            psi = next;
            if !psi.is_finite() {
                return Err(Error::BlowUp {
                    step_index: j + 1,
                    t: (j + 1) as f64 * h,
                });
            }
            if (j + 1) % renorm_every == 0 || j + 1 == steps_total {
                let norm = psi.frobenius_norm();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::BlowUp {
                        step_index: j + 1,
                        t: (j + 1) as f64 * h,
                    });
                }
                log_growth += norm.ln();
                psi.scale_in_place(1.0 / norm);
            }
        }
        per_seed.push(log_growth / horizon);
    }
    let estimate = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let declared_lambda = match spec {
        SystemSpec::AdditiveLipschitz { lambda, .. }
        | SystemSpec::MultiplicativeLipschitz { lambda, .. } => Some(*lambda),
        _ => None,
    };
    let band = 0.1;
    let consistent = declared_lambda.map(|l| estimate <= -l + band);
    Ok(LyapunovEstimate {
        estimate,
        per_seed,
        horizon,
        renormalization_interval: renorm_interval,
        declared_lambda,
        consistent_with_declared: consistent,
        tolerance_band: band,
    })
}

/// Random affine map x -> factor x + xi, with iid Gaussian xi keyed by the
/// integer time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomAffineMap {
    pub factor: Mat,
    pub noise_scale: Vec<f64>,
    pub seed: u64,
}

impl RandomAffineMap {
    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    /// Noise vector at integer time k.
    pub fn xi(&self, k: i64) -> Vec<f64> {
        self.noise_scale
            .iter()
            .enumerate()
            .map(|(c, s)| s * standard_normal_at(self.seed, DISCRETE_NOISE_DOMAIN, k, c as u32))
            .collect()
    }

    /// One application of the map at integer time k.
    pub fn apply(&self, k: i64, x: &[f64]) -> Vec<f64> {
        let mut out = self.factor.matvec(x);
        for (o, xi) in out.iter_mut().zip(self.xi(k)) {
            *o += xi;
        }
        out
    }

    /// Pullback state of depth n: iterate from time -n up to 0.
    pub fn pullback(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut state = x.to_vec();
        for j in 0..n {
            state = self.apply(-(n as i64) + j as i64, &state);
        }
        state
    }
}

/// Discrete-time pullback along an increasing schedule of integer depths.
pub fn discrete_pullback(
    map: &RandomAffineMap,
    x: &[f64],
    depths: &[usize],
    tol: f64,
) -> Result<PullbackRun> {
    if depths.is_empty() || depths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(format!(
            "depth schedule must be strictly increasing and nonempty: {depths:?}"
        )));
    }
    if x.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state length".into(),
            expected: map.dim(),
            got: x.len(),
        });
    }
    let mut states = Vec::with_capacity(depths.len());
    for &n in depths {
        let state = map.pullback(x, n);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step_index: n,
                t: n as f64,
            });
        }
        states.push(state);
    }
    let cauchy_residuals: Vec<f64> = (1..states.len())
        .map(|k| linalg::dist(&states[k], &states[k - 1]))
        .collect();
    let equilibrium = states.last().expect("nonempty").clone();
    let last = cauchy_residuals.last().copied().unwrap_or(f64::INFINITY);
    let schedule: Vec<f64> = depths.iter().map(|&n| n as f64).collect();
    let fit = if cauchy_residuals.len() >= 2 {
        let xs: Vec<f64> = schedule[1..].to_vec();
        let ys: Vec<f64> = cauchy_residuals
            .iter()
            .map(|r| r.max(LOG_FLOOR).ln())
            .collect();
        linear_fit(&xs, &ys)
    } else {
        None
    };
    Ok(PullbackRun {
        spec_id: "discrete-affine".into(),
        seed: map.seed,
        schedule,
        states,
        cauchy_residuals,
        equilibrium,
        converged: last < tol,
        tolerance: tol,
        residual_fit: fit,
    })
}

/// Deterministic fixed point shortcut: points with zero drift and zero
/// diffusion stay put for every realization.
pub fn is_deterministic_fixed_point(spec: &SystemSpec, x: &[f64]) -> Result<bool> {
    let drift = spec.drift(x)?;
    let diffusion = spec.diffusion_matrix(x)?;
    Ok(linalg::norm(&drift) == 0.0 && diffusion.frobenius_norm() == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::matrix_exponential;
    use crate::systems::{preset, DriftFn};

    fn cfg() -> PullbackConfig {
        PullbackConfig::default()
    }

    fn path(seed: u64, past: f64, future: f64, h: f64, dim: usize) -> TwoSidedWienerPath {
        TwoSidedWienerPath::sample(seed, past, future, h, dim).unwrap()
    }

    #[test]
    fn depth_zero_is_the_identity() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(1, 1.0, 0.0, 0.01, 1);
        assert_eq!(
            pullback_state(&spec, &p, &[3.25], 0.0, &cfg()).unwrap(),
            vec![3.25]
        );
    }

    #[test]
    fn pullback_equals_forward_integration_of_the_shifted_view() {
        // integrating over [-t, 0] along w and over [0, t] along theta_{-t} w
        // reads the same stored increments, so the states agree bitwise
        for name in ["scalar-ou", "dissipative-cubic", "trivial-zero"] {
            let spec = preset(name).unwrap();
            let p = path(3, 5.0, 0.0, 0.01, 1);
            let t = 4.0;
            let direct = pullback_state(&spec, &p, &[1.5], t, &cfg()).unwrap();
            let view = p.shift(-t).unwrap();
            let forward = integrate_ito(&spec, &view, 0.0, t, &[1.5]).unwrap();
            assert_eq!(direct, forward.final_state().to_vec(), "{name}");
        }
        // same identity for the Stratonovich route
        let spec = preset("gbm-strat").unwrap();
        let p = path(3, 5.0, 0.0, 0.01, 1);
        let direct = pullback_state(&spec, &p, &[1.5], 4.0, &cfg()).unwrap();
        let view = p.shift(-4.0).unwrap();
        let forward = integrate_stratonovich(&spec, &view, 0.0, 4.0, &[1.5]).unwrap();
        assert_eq!(direct, forward.final_state().to_vec());
    }

    #[test]
    fn exact_linear_pullback_matches_kernel_sum_oracle() {
        // scalar OU pullback state must equal
        // e^{-t} x + sum_j e^{s_j} dB_j over [-t, 0], s_j the cell left ends
        let spec = preset("scalar-ou").unwrap();
        let h = 1e-3;
        let p = path(7, 5.0, 0.0, h, 1);
        let t = 5.0;
        let exact_cfg = PullbackConfig {
            method: Some(PullbackMethod::ExactLinear),
            ..PullbackConfig::default()
        };
        let got = pullback_state(&spec, &p, &[2.0], t, &exact_cfg).unwrap()[0];
        let steps = (t / h).round() as usize;
        let mut oracle = (-t).exp() * 2.0;
        for j in 0..steps {
            let s_j = -t + j as f64 * h;
            oracle += s_j.exp() * p.increment(s_j, s_j + h).unwrap()[0];
        }
        assert!((got - oracle).abs() <= 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn deterministic_linear_pullback_matches_matrix_exponential() {
        let spec = crate::systems::SystemSpec::AdditiveLipschitz {
            a: Mat::from_rows(&[vec![0.0, -2.0], vec![3.0, -1.0]]).unwrap(),
            f: DriftFn::zero(2),
            sigma: Mat::zeros(2, 2),
            lambda: 0.5,
            c: 3.0 * (6.0f64 / 23.0).sqrt(),
            lipschitz: 0.0,
        };
        let p = path(9, 4.0, 0.0, 1e-3, 2);
        let got = pullback_state(&spec, &p, &[1.0, -1.0], 4.0, &cfg()).unwrap();
        let want = matrix_exponential(
            &Mat::from_rows(&[vec![0.0, -2.0], vec![3.0, -1.0]]).unwrap(),
            4.0,
        )
        .unwrap()
        .matvec(&[1.0, -1.0]);
        assert!(linalg::dist(&got, &want) < 0.02, "{got:?} vs {want:?}");
    }

    #[test]
    fn equilibrium_estimation_converges_for_scalar_ou() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(11, 20.0, 0.0, 0.01, 1);
        let schedule = geometric_schedule(1.0, 1.3, 20.0, 0.01);
        let run = estimate_equilibrium(&spec, &p, &[5.0], &schedule, 1e-6, &cfg()).unwrap();
        assert!(run.converged, "residuals {:?}", run.cauchy_residuals);
        assert!(run.cauchy_envelope_holds(0.15));
        // the equilibrium is the truncated kernel integral, which the
        // exact-linear route reproduces to discretization error
        let exact_cfg = PullbackConfig {
            method: Some(PullbackMethod::ExactLinear),
            ..PullbackConfig::default()
        };
        let exact = pullback_state(&spec, &p, &[5.0], 20.0, &exact_cfg).unwrap();
        assert!(
            (run.equilibrium[0] - exact[0]).abs() < 0.05,
            "{} vs {}",
            run.equilibrium[0],
            exact[0]
        );
    }

    #[test]
    fn deterministic_contraction_reaches_the_fixed_point() {
        let spec = crate::systems::SystemSpec::AdditiveLipschitz {
            a: Mat::diag(&[-1.0, -1.0]),
            f: DriftFn::zero(2),
            sigma: Mat::zeros(2, 2),
            lambda: 1.0,
            c: 1.0,
            lipschitz: 0.0,
        };
        assert!(is_deterministic_fixed_point(&spec, &[0.0, 0.0]).unwrap());
        let p = path(13, 16.0, 0.0, 0.01, 2);
        let schedule = geometric_schedule(1.0, 1.5, 16.0, 0.01);
        let run = estimate_equilibrium(&spec, &p, &[1.0, 1.0], &schedule, 1e-4, &cfg()).unwrap();
        assert!(run.converged);
        assert!(linalg::norm(&run.equilibrium) < (-16.0f64).exp() * 2.0);
    }

    #[test]
    fn h1_rejects_equal_points_and_short_windows() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(17, 8.0, 0.0, 0.01, 1);
        let schedule = geometric_schedule(1.0, 1.3, 8.0, 0.01);
        assert!(verify_h1(&spec, &p, &[1.0], &[1.0], &schedule, &cfg()).is_err());
        assert!(verify_h1(&spec, &p, &[1.0], &[2.0], &[2.0, 3.0], &cfg()).is_err());
    }

    #[test]
    fn h1_recovers_the_dissipative_rate() {
        let spec = preset("dissipative-cubic").unwrap();
        let p = path(19, 14.0, 0.0, 0.005, 1);
        let schedule = geometric_schedule(1.0, 1.3, 14.0, 0.005);
        let fit = verify_h1(&spec, &p, &[5.0], &[-5.0], &schedule, &cfg()).unwrap();
        assert_eq!(fit.predicted.rate, 1.0);
        // the cubic term can only accelerate the decay
        assert!(fit.slope <= -1.0 + 0.1, "slope {}", fit.slope);
        assert!(fit.r_squared > 0.9);
    }

    #[test]
    fn h2_passes_for_scalar_ou_and_flags_unstable_dynamics() {
        let stable = preset("scalar-ou").unwrap();
        let p = path(23, 100.0, 0.0, 0.01, 1);
        let schedule = geometric_schedule(1.0, 1.3, 100.0, 0.01);
        let report = verify_h2(
            &stable,
            &p,
            &[1.0],
            &schedule,
            &[0.25, 0.5, 1.0],
            None,
            &cfg(),
        )
        .unwrap();
        assert!(report.passed, "growth exponent {}", report.growth_exponent);
        assert!(report.growth_exponent.abs() < 0.05);
        assert!(report.sup_stats.windows(2).all(|w| w[1] <= w[0] + 1e-12));

        let unstable = preset("unstable-ou").unwrap();
        let report = verify_h2(
            &unstable,
            &p,
            &[1.0],
            &schedule,
            &[0.25, 0.5, 1.0],
            None,
            &cfg(),
        )
        .unwrap();
        assert!(!report.passed);
        assert!(
            (report.growth_exponent - 1.0).abs() < 0.2,
            "{}",
            report.growth_exponent
        );
    }

    #[test]
    fn h2_rejects_bad_gamma_grid_and_lambda0() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(23, 4.0, 0.0, 0.01, 1);
        let schedule = geometric_schedule(1.0, 1.3, 4.0, 0.01);
        assert!(verify_h2(&spec, &p, &[1.0], &schedule, &[0.5, 0.25], None, &cfg()).is_err());
        assert!(verify_h2(&spec, &p, &[1.0], &schedule, &[0.25], Some(2.0), &cfg()).is_err());
    }

    #[test]
    fn invariance_residual_vanishes_at_zero_and_stays_small() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(29, 20.0, 2.0, 1e-3, 1);
        let est = equilibrium_estimate(&spec, &p, &[1.0], 20.0, &cfg()).unwrap();
        let est = verify_invariance(&spec, &p, est, &[0.0, 0.5, 1.0, 2.0], &cfg()).unwrap();
        assert_eq!(
            est.invariance_residuals[0],
            (0.0, 0.0),
            "identity at s = 0 is exact"
        );
        for &(s, r) in &est.invariance_residuals[1..] {
            assert!(r <= 1e-2, "residual {r} at s = {s}");
        }
    }

    #[test]
    fn uniqueness_spread_contracts() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(31, 20.0, 0.0, 0.01, 1);
        let est = verify_uniqueness(
            &spec,
            &p,
            &[vec![5.0], vec![-5.0], vec![0.5]],
            20.0,
            1e-6,
            &cfg(),
        )
        .unwrap();
        let spread = est.uniqueness_spread.unwrap();
        assert!(spread < 1e-6, "spread {spread}");

        // identical entries give exactly zero spread
        let est =
            verify_uniqueness(&spec, &p, &[vec![2.0], vec![2.0]], 10.0, 1e-6, &cfg()).unwrap();
        assert_eq!(est.uniqueness_spread, Some(0.0));
    }

    #[test]
    fn uniqueness_spread_shrinks_with_depth_on_contractions() {
        let spec = preset("dissipative-cubic").unwrap();
        let p = path(37, 24.0, 0.0, 0.01, 1);
        let spread_at = |depth: f64| {
            verify_uniqueness(&spec, &p, &[vec![5.0], vec![-5.0]], depth, 1.0, &cfg())
                .unwrap()
                .uniqueness_spread
                .unwrap()
        };
        let (s8, s12) = (spread_at(8.0), spread_at(12.0));
        // contraction at rate >= 1 over 4 extra units, with safety factor 2
        assert!(s12 <= s8 * (-4.0f64).exp() * 2.0 + 1e-300, "{s8} -> {s12}");
    }

    #[test]
    fn equilibrium_bound_check_holds() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(41, 40.0, 0.0, 0.01, 1);
        let schedule = geometric_schedule(1.0, 1.3, 40.0, 0.01);
        let report = verify_h2(&spec, &p, &[1.0], &schedule, &[0.5], None, &cfg()).unwrap();
        let est = equilibrium_estimate(&spec, &p, &[1.0], 40.0, &cfg()).unwrap();
        let est = attach_bound_check(est, &report, 1e-6);
        assert!(est.bound_check.unwrap().satisfied);
    }

    #[test]
    fn birkhoff_average_of_constant_and_zero() {
        let constant = OUBundle::from_u_c_samples(-10.0, 0.1, vec![2.5; 101]);
        assert!((birkhoff_average(&constant, 10.0).unwrap() - 2.5).abs() < 1e-12);
        let zero = OUBundle::from_u_c_samples(-10.0, 0.1, vec![0.0; 101]);
        assert_eq!(birkhoff_average(&zero, 10.0).unwrap(), 0.0);
        assert!(
            birkhoff_average(&zero, 20.0).is_err(),
            "coverage gap must be rejected"
        );
    }

    #[test]
    fn lyapunov_matches_gbm_exponent() {
        let spec = preset("gbm-ito").unwrap();
        let p = path(43, 0.0, 100.0, 1e-3, 1);
        let est = top_lyapunov(&spec, &p, 100.0, 5).unwrap();
        assert!(
            (est.estimate - (-1.125)).abs() < 0.05,
            "estimate {}",
            est.estimate
        );
        assert_eq!(est.consistent_with_declared, Some(true));
        assert_eq!(est.per_seed.len(), 5);
    }

    #[test]
    fn lyapunov_deterministic_spiral() {
        let spec = crate::systems::SystemSpec::MultiplicativeLipschitz {
            a: Mat::from_rows(&[vec![0.0, -2.0], vec![3.0, -1.0]]).unwrap(),
            h: DriftFn::zero(2),
            sigma_k: vec![Mat::zeros(2, 2)],
            lambda: 0.5,
            rbar_l1: 1.0,
            lipschitz: 0.0,
        };
        let p = path(47, 0.0, 50.0, 1e-3, 1);
        let est = top_lyapunov(&spec, &p, 50.0, 1).unwrap();
        assert!(
            (est.estimate - (-0.5)).abs() < 0.05,
            "estimate {}",
            est.estimate
        );
    }

    #[test]
    fn lyapunov_of_zero_matrix_is_zero() {
        let spec = crate::systems::SystemSpec::MultiplicativeLipschitz {
            a: Mat::zeros(1, 1),
            h: DriftFn::zero(1),
            sigma_k: vec![Mat::zeros(1, 1)],
            lambda: 1.0,
            rbar_l1: 1.0,
            lipschitz: 0.0,
        };
        let p = path(53, 0.0, 10.0, 0.01, 1);
        let est = top_lyapunov(&spec, &p, 10.0, 1).unwrap();
        assert!(est.estimate.abs() < 1e-12);
    }

    #[test]
    fn discrete_pullback_matches_geometric_series_oracle() {
        let map = RandomAffineMap {
            factor: Mat::scalar(0.5),
            noise_scale: vec![1.0],
            seed: 99,
        };
        let n = 60;
        let run = discrete_pullback(&map, &[7.0], &[10, 30, n], 1e-8).unwrap();
        // oracle: sum_{k=1..n} a^{k-1} xi(-k), summed directly
        let mut oracle = 0.0;
        let mut weight = 1.0;
        for k in 1..=n {
            oracle += weight * map.xi(-(k as i64))[0];
            weight *= 0.5;
        }
        assert!(
            (run.equilibrium[0] - oracle).abs() <= 1e-10,
            "{} vs {oracle}",
            run.equilibrium[0]
        );
        assert!(run.converged);
    }

    #[test]
    fn discrete_pullback_degenerate_cases() {
        // a = 0: the limit is xi(-1) after one step
        let map = RandomAffineMap {
            factor: Mat::scalar(0.0),
            noise_scale: vec![1.0],
            seed: 5,
        };
        let run = discrete_pullback(&map, &[123.0], &[1, 2, 3], 1e-12).unwrap();
        assert_eq!(run.equilibrium[0], map.xi(-1)[0]);

        // deterministic contraction without noise: limit 0
        let map = RandomAffineMap {
            factor: Mat::scalar(0.5),
            noise_scale: vec![0.0],
            seed: 5,
        };
        let run = discrete_pullback(&map, &[8.0], &[10, 40], 1e-9).unwrap();
        assert!(run.equilibrium[0].abs() < 1e-11);
    }

    #[test]
    fn blow_up_is_reported_with_partial_trajectory() {
        let spec = crate::systems::SystemSpec::AdditiveDissipative {
            g: DriftFn::parse(&["x1^3"]).unwrap(),
            sigma: Mat::scalar(0.0),
            dissipativity: 1.0,
            growth_a: 2.0,
            growth_b: 1.0,
            growth_p: 3.0,
        };
        let p = path(59, 5.0, 0.0, 0.1, 1);
        match pullback_state(&spec, &p, &[10.0], 5.0, &cfg()) {
            Err(Error::PullbackBlowUp { partial, .. }) => {
                assert!(partial.blow_up.is_some());
                assert!(!partial.states.is_empty());
            }
            other => panic!("expected flagged blow-up, got {other:?}"),
        }
    }

    #[test]
    fn horizon_shortfall_names_the_required_depth() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(61, 2.0, 0.0, 0.01, 1);
        match pullback_state(&spec, &p, &[1.0], 5.0, &cfg()) {
            Err(Error::OutOfHorizon { required_past, .. }) => {
                assert!(required_past >= 5.0)
            }
            other => panic!("expected horizon error, got {other:?}"),
        }
    }

    #[test]
    fn single_depth_schedules_never_claim_convergence() {
        let spec = preset("scalar-ou").unwrap();
        let p = path(71, 10.0, 0.0, 0.01, 1);
        let run = estimate_equilibrium(&spec, &p, &[1.0], &[10.0], 1e-6, &cfg()).unwrap();
        assert!(!run.converged, "one depth gives no Cauchy evidence");
        assert!(run.cauchy_residuals.is_empty());

        let map = RandomAffineMap { factor: Mat::scalar(0.5), noise_scale: vec![1.0], seed: 1 };
        let run = discrete_pullback(&map, &[1.0], &[30], 1e-6).unwrap();
        assert!(!run.converged);
    }

    #[test]
    fn geometric_schedule_is_increasing_and_snapped() {
        let s = geometric_schedule(1.0, 1.3, 20.0, 0.01);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(s
            .iter()
            .all(|t| (t / 0.01 - (t / 0.01).round()).abs() < 1e-9));
        assert!(*s.last().unwrap() <= 20.0);
        assert_eq!(s[0], 1.0);
    }

    #[test]
    fn conjugation_pipeline_agrees_with_direct_heun() {
        let spec = preset("gbm-strat").unwrap();
        let p = path(67, 40.0, 0.0, 1e-3, 1);
        let direct = pullback_state(&spec, &p, &[2.0], 5.0, &cfg()).unwrap();
        let pipeline_cfg = PullbackConfig {
            method: Some(PullbackMethod::ConjugationPipeline),
            ..PullbackConfig::default()
        };
        let pipeline = pullback_state(&spec, &p, &[2.0], 5.0, &pipeline_cfg).unwrap();
        assert!(
            (direct[0] - pipeline[0]).abs() < 1e-2,
            "direct {} vs pipeline {}",
            direct[0],
            pipeline[0]
        );
    }
}
