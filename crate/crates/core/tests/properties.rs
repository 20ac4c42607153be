//! Cross-module properties: budget improvements under refinement, trivial
//! versus nontrivial equilibria, and the displacement bound on converged
//! runs across presets.

use rds_core::linalg::{self, Mat};
use rds_core::noise::TwoSidedWienerPath;
use rds_core::pullback::{
    attach_bound_check, equilibrium_estimate, estimate_equilibrium, geometric_schedule,
    pullback_state, verify_h2, verify_invariance, PullbackConfig,
};
use rds_core::systems::{preset, DriftFn, SystemSpec};

fn path(seed: u64, past: f64, future: f64, h: f64) -> TwoSidedWienerPath {
    TwoSidedWienerPath::sample(seed, past, future, h, 1).unwrap()
}

#[test]
fn invariance_residual_improves_with_finer_step_and_deeper_pullback() {
    // error budget is O(h) + O(e^{-lambda T}); halving h and adding 5 to T
    // must shrink the worst residual
    let spec = preset("scalar-ou").unwrap();
    let cfg = PullbackConfig::default();
    let worst_residual = |seed: u64, h: f64, depth: f64| -> f64 {
        let p = path(seed, depth, 2.0, h);
        let est = equilibrium_estimate(&spec, &p, &[1.0], depth, &cfg).unwrap();
        let est = verify_invariance(&spec, &p, est, &[0.5, 1.0, 2.0], &cfg).unwrap();
        est.invariance_residuals
            .iter()
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    };
    let mut improved = 0;
    for seed in 60..70 {
        let coarse = worst_residual(seed, 4e-3, 10.0);
        let fine = worst_residual(seed, 2e-3, 15.0);
        if fine < coarse {
            improved += 1;
        }
    }
    // the residual is noise-dependent; require a clear majority improvement
    assert!(improved >= 8, "improved on {improved}/10 seeds");
}

#[test]
fn zero_drift_multiplicative_preset_has_the_trivial_equilibrium() {
    let spec = preset("trivial-zero").unwrap();
    let cfg = PullbackConfig::default();
    let tol = 1e-6;
    for seed in 80..85 {
        let p = path(seed, 20.0, 0.0, 0.01);
        let eq = pullback_state(&spec, &p, &[1.0], 20.0, &cfg).unwrap();
        assert!(
            linalg::norm(&eq) <= tol,
            "seed {seed}: |eq| = {}",
            linalg::norm(&eq)
        );
        // from the origin the zero solution is exact
        let zero = pullback_state(&spec, &p, &[0.0], 20.0, &cfg).unwrap();
        assert_eq!(zero, vec![0.0]);
    }
}

#[test]
fn shifted_drift_produces_a_nontrivial_equilibrium() {
    // g(0) = 1 != 0: the equilibrium stays an order of magnitude above the
    // convergence tolerance
    let spec = SystemSpec::AdditiveDissipative {
        g: DriftFn::parse(&["-x1 + 1"]).unwrap(),
        sigma: Mat::scalar(0.1),
        dissipativity: 1.0,
        growth_a: 2.0,
        growth_b: 1.5,
        growth_p: 1.0,
    };
    let cfg = PullbackConfig::default();
    let tol = 1e-6;
    for seed in 90..95 {
        let p = path(seed, 20.0, 0.0, 0.01);
        let schedule = geometric_schedule(1.0, 1.3, 20.0, 0.01);
        let run = estimate_equilibrium(&spec, &p, &[0.0], &schedule, tol, &cfg).unwrap();
        assert!(run.converged);
        assert!(
            linalg::norm(&run.equilibrium) > 10.0 * tol,
            "seed {seed}: equilibrium {:?} too close to zero",
            run.equilibrium
        );
    }
}

#[test]
fn displacement_bound_holds_on_converged_runs_across_presets() {
    // d(U(w), x) <= sup_t d(phi(t, theta_{-t} w, x), x) + tol
    let cfg = PullbackConfig::default();
    let h = 0.01;
    let depth = 20.0;
    let schedule = geometric_schedule(1.0, 1.3, depth, h);
    for name in [
        "scalar-ou",
        "lipschitz-sine",
        "dissipative-cubic",
        "gbm-strat",
    ] {
        let spec = preset(name).unwrap();
        for seed in 70..73 {
            let p = path(seed, depth, 0.0, h);
            let run = estimate_equilibrium(&spec, &p, &[1.0], &schedule, 1e-4, &cfg).unwrap();
            assert!(
                run.converged,
                "{name} seed {seed}: {:?}",
                run.cauchy_residuals
            );
            let report = verify_h2(&spec, &p, &[1.0], &schedule, &[0.5], None, &cfg).unwrap();
            let est = equilibrium_estimate(&spec, &p, &[1.0], depth, &cfg).unwrap();
            let est = attach_bound_check(est, &report, 1e-4);
            assert!(est.bound_check.unwrap().satisfied, "{name} seed {seed}");
        }
    }
}

#[test]
fn deterministic_displacement_is_bounded_by_the_decay_prefactor() {
    // Sigma = 0, f = 0, stable A: |Phi(t) x - x| <= (1 + c) |x| for all t
    let c = 3.0 * (6.0f64 / 23.0).sqrt();
    let spec = SystemSpec::AdditiveLipschitz {
        a: Mat::from_rows(&[vec![0.0, -2.0], vec![3.0, -1.0]]).unwrap(),
        f: DriftFn::zero(2),
        sigma: Mat::zeros(2, 2),
        lambda: 0.5,
        c,
        lipschitz: 0.0,
    };
    let cfg = PullbackConfig::default();
    let p = path(99, 30.0, 0.0, 0.01);
    // dimension of the driving path must match the noise dimension
    let p = TwoSidedWienerPath::sample(p.seed(), 30.0, 0.0, 0.01, 2).unwrap();
    let schedule = geometric_schedule(0.5, 1.4, 30.0, 0.01);
    let x = [2.0, -1.0];
    let report = verify_h2(&spec, &p, &x, &schedule, &[0.25], None, &cfg).unwrap();
    let bound = (1.0 + c) * linalg::norm(&x);
    for (t, r) in report.schedule.iter().zip(&report.displacements) {
        assert!(
            *r <= bound,
            "displacement {r} at t = {t} exceeds (1+c)|x| = {bound}"
        );
    }
    assert!(report.passed);
}

#[test]
fn residual_decay_matches_the_predicted_rate_for_lipschitz_presets() {
    // fitted log-residual slope at most -(lambda - L c) + 0.1
    let cfg = PullbackConfig::default();
    for name in ["scalar-ou", "lipschitz-sine"] {
        let spec = preset(name).unwrap();
        let rate = spec
            .predicted_rate(&rds_core::systems::Margins::default())
            .rate;
        for seed in 40..43 {
            let p = path(seed, 25.0, 0.0, 0.01);
            let schedule = geometric_schedule(1.0, 1.3, 25.0, 0.01);
            let run = estimate_equilibrium(&spec, &p, &[3.0], &schedule, 1e-4, &cfg).unwrap();
            let slope = run.residual_fit.unwrap().slope;
            assert!(
                slope <= -rate + 0.1,
                "{name} seed {seed}: slope {slope} vs rate {rate}"
            );
        }
    }
}

#[test]
fn deterministic_fixed_point_has_zero_invariance_residual() {
    // A x0 + f(x0) = 0 with Sigma = 0: phi(s, w, x0) = x0 for every s
    let spec = SystemSpec::AdditiveLipschitz {
        a: Mat::diag(&[-1.0, -1.0]),
        f: DriftFn::zero(2),
        sigma: Mat::zeros(2, 2),
        lambda: 1.0,
        c: 1.0,
        lipschitz: 0.0,
    };
    let cfg = PullbackConfig::default();
    let p = TwoSidedWienerPath::sample(7, 12.0, 2.0, 0.01, 2).unwrap();
    let est = equilibrium_estimate(&spec, &p, &[0.0, 0.0], 12.0, &cfg).unwrap();
    let est = verify_invariance(&spec, &p, est, &[0.0, 0.5, 2.0], &cfg).unwrap();
    for &(s, r) in &est.invariance_residuals {
        assert_eq!(r, 0.0, "residual at s = {s}");
    }
}
