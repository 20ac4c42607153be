//! Campaign execution: dispatch seeds to a worker pool, run the requested
//! checks, and emit per-(seed, check) JSON reports plus CSV companions and
//! a summary table. Report writing is serialized and ordered, so identical
//! configs produce identical files regardless of worker interleaving.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use rds_core::integrators::{self, IntegratorKind};
use rds_core::noise::TwoSidedWienerPath;
use rds_core::pullback::{self, geometric_schedule, PullbackConfig};
use rds_core::stationary;
use rds_core::systems::{self, SystemSpec, ValidationConfig};

use crate::config::{Check, RunConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The check could not run; the message explains why.
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub tool_version: &'static str,
    pub config_hash: String,
    /// Wall-clock timestamp; excluded from the config hash and from
    /// determinism comparisons.
    pub generated_at: String,
    pub system: String,
    pub check: &'static str,
    pub seed: u64,
    pub verdict: Verdict,
    pub summary: String,
    pub details: serde_json::Value,
    /// Companion CSV rows (header first), written next to the JSON.
    #[serde(skip)]
    pub csv: Option<String>,
}

/// FNV-1a over the canonical JSON encoding of the resolved config.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canonical.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("fnv1a:{h:016x}")
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

fn axis_point(n: usize, axis: usize, value: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[axis] = value;
    x
}

fn initial_point(cfg: &RunConfig, n: usize) -> Vec<f64> {
    if cfg.pullback.initial_point.len() == n {
        cfg.pullback.initial_point.clone()
    } else {
        ones(n)
    }
}

struct SeedContext<'a> {
    cfg: &'a RunConfig,
    spec: &'a SystemSpec,
    system_name: &'a str,
    hash: &'a str,
    pcfg: PullbackConfig,
    seed: u64,
}

impl SeedContext<'_> {
    fn path(&self) -> Result<TwoSidedWienerPath> {
        Ok(TwoSidedWienerPath::sample(
            self.seed,
            self.cfg.path.past_horizon,
            self.cfg.path.future_horizon,
            self.cfg.path.step,
            self.spec.noise_dim(),
        )?)
    }

    fn schedule(&self) -> Vec<f64> {
        geometric_schedule(
            self.cfg.schedule.t0,
            self.cfg.schedule.ratio,
            self.cfg.schedule.depth,
            self.cfg.path.step,
        )
    }

    fn report(
        &self,
        check: Check,
        verdict: Verdict,
        summary: String,
        details: serde_json::Value,
        csv: Option<String>,
    ) -> CheckReport {
        CheckReport {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: self.hash.to_string(),
            generated_at: timestamp(),
            system: self.system_name.to_string(),
            check: check.name(),
            seed: self.seed,
            verdict,
            summary,
            details,
            csv,
        }
    }

    fn run_check(&self, check: Check) -> CheckReport {
        match self.try_check(check) {
            Ok(report) => report,
            Err(err) => self.report(
                check,
                Verdict::Error,
                format!("check failed to run: {err:#}"),
                json!({ "error": format!("{err:#}") }),
                None,
            ),
        }
    }

    fn try_check(&self, check: Check) -> Result<CheckReport> {
        let n = self.spec.state_dim();
        match check {
            Check::Validate => {
                let vcfg = ValidationConfig {
                    seed: self.seed,
                    ..ValidationConfig::default()
                };
                let reports = systems::validate_spec(self.spec, &vcfg)?;
                let pass = reports.iter().all(systems::HypothesisReport::passed);
                let failed: Vec<&str> = reports
                    .iter()
                    .filter(|r| !r.passed())
                    .map(|r| r.constraint.as_str())
                    .collect();
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    if pass {
                        format!("{} constraints not falsified", reports.len())
                    } else {
                        format!("falsified: {failed:?}")
                    },
                    serde_json::to_value(&reports)?,
                    None,
                ))
            }
            Check::Equilibrium => {
                let path = self.path()?;
                let schedule = self.schedule();
                let run = pullback::estimate_equilibrium(
                    self.spec,
                    &path,
                    &initial_point(self.cfg, n),
                    &schedule,
                    self.cfg.tolerances.equilibrium,
                    &self.pcfg,
                )?;
                let mut csv = String::from("t");
                for i in 1..=n {
                    let _ = write!(csv, ",x{i}");
                }
                csv.push_str(",residual\n");
                for (k, t) in run.schedule.iter().enumerate() {
                    let _ = write!(csv, "{t:.16e}");
                    for v in &run.states[k] {
                        let _ = write!(csv, ",{v:.16e}");
                    }
                    if k == 0 {
                        csv.push_str(",\n");
                    } else {
                        let _ = writeln!(csv, ",{:.16e}", run.cauchy_residuals[k - 1]);
                    }
                }
                let verdict = if run.converged {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                let summary = format!(
                    "converged={} at depth {} (last residual {:.3e})",
                    run.converged,
                    run.schedule.last().copied().unwrap_or(0.0),
                    run.cauchy_residuals.last().copied().unwrap_or(0.0),
                );
                Ok(self.report(
                    check,
                    verdict,
                    summary,
                    serde_json::to_value(&run)?,
                    Some(csv),
                ))
            }
            Check::H1 => {
                let path = self.path()?;
                let schedule = self.schedule();
                let x = if self.cfg.h1.x.len() == n {
                    self.cfg.h1.x.clone()
                } else {
                    axis_point(n, 0, 5.0)
                };
                let y = if self.cfg.h1.y.len() == n {
                    self.cfg.h1.y.clone()
                } else {
                    axis_point(n, 0, -5.0)
                };
                let fit = pullback::verify_h1(self.spec, &path, &x, &y, &schedule, &self.pcfg)?;
                let needed = -fit.predicted.rate * (1.0 - self.cfg.tolerances.rate_slack);
                let pass = fit.slope <= needed;
                let mut csv = String::from("t,log_separation\n");
                for (t, v) in &fit.points {
                    let _ = writeln!(csv, "{t:.16e},{v:.16e}");
                }
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!(
                        "fitted slope {:.4} vs predicted -{:.4} (accept <= {:.4}, r2 {:.3})",
                        fit.slope, fit.predicted.rate, needed, fit.r_squared
                    ),
                    serde_json::to_value(&fit)?,
                    Some(csv),
                ))
            }
            Check::H2 => {
                let path = self.path()?;
                let schedule = self.schedule();
                let report = pullback::verify_h2(
                    self.spec,
                    &path,
                    &initial_point(self.cfg, n),
                    &schedule,
                    &self.cfg.h2.gamma,
                    self.cfg.h2.lambda0,
                    &self.pcfg,
                )?;
                let mut csv = String::from("t,displacement\n");
                for (t, r) in report.schedule.iter().zip(&report.displacements) {
                    let _ = writeln!(csv, "{t:.16e},{r:.16e}");
                }
                let pass = report.passed;
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!(
                        "growth exponent {:.4} (lambda0 {:.4}, blow_up={})",
                        report.growth_exponent, report.lambda0, report.blow_up
                    ),
                    serde_json::to_value(&report)?,
                    Some(csv),
                ))
            }
            Check::Invariance => {
                let path = self.path()?;
                let est = pullback::equilibrium_estimate(
                    self.spec,
                    &path,
                    &initial_point(self.cfg, n),
                    self.cfg.schedule.depth,
                    &self.pcfg,
                )?;
                let est = pullback::verify_invariance(
                    self.spec,
                    &path,
                    est,
                    &self.cfg.invariance.s_values,
                    &self.pcfg,
                )?;
                let worst = est
                    .invariance_residuals
                    .iter()
                    .map(|(_, r)| *r)
                    .fold(0.0f64, f64::max);
                let pass = worst <= self.cfg.tolerances.invariance;
                let mut csv = String::from("s,residual\n");
                for (s, r) in &est.invariance_residuals {
                    let _ = writeln!(csv, "{s:.16e},{r:.16e}");
                }
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!(
                        "worst residual {worst:.3e} (tolerance {})",
                        self.cfg.tolerances.invariance
                    ),
                    serde_json::to_value(&est)?,
                    Some(csv),
                ))
            }
            Check::Uniqueness => {
                let path = self.path()?;
                let points = if self.cfg.uniqueness.points.is_empty() {
                    let s = self.cfg.uniqueness.spread;
                    (0..n)
                        .flat_map(|i| [axis_point(n, i, s), axis_point(n, i, -s)])
                        .collect()
                } else {
                    self.cfg.uniqueness.points.clone()
                };
                let est = pullback::verify_uniqueness(
                    self.spec,
                    &path,
                    &points,
                    self.cfg.schedule.depth,
                    self.cfg.tolerances.uniqueness,
                    &self.pcfg,
                )?;
                let spread = est.uniqueness_spread.unwrap_or(f64::INFINITY);
                let pass = spread <= self.cfg.tolerances.uniqueness;
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!(
                        "spread {spread:.3e} over {} initial points (tolerance {})",
                        points.len(),
                        self.cfg.tolerances.uniqueness
                    ),
                    serde_json::to_value(&est)?,
                    None,
                ))
            }
            Check::Birkhoff => {
                let SystemSpec::StratonovichDissipative { c_k, .. } = self.spec else {
                    anyhow::bail!("birkhoff needs a stratonovich-dissipative system");
                };
                let path = self.path()?;
                let max_w = self
                    .cfg
                    .birkhoff
                    .windows
                    .iter()
                    .cloned()
                    .fold(0.0f64, f64::max);
                let bundle = stationary::ou_u(&path, c_k, -max_w, 0.0, None)?;
                let sigma_uc = (c_k.iter().map(|c| c * c).sum::<f64>() / 2.0).sqrt();
                let mut rows = Vec::new();
                let mut pass = true;
                let mut csv = String::from("window,average,band\n");
                for &w in &self.cfg.birkhoff.windows {
                    let avg = pullback::birkhoff_average(&bundle, w)?;
                    let band = 3.0 * sigma_uc / w.sqrt();
                    pass &= avg.abs() <= band;
                    let _ = writeln!(csv, "{w:.16e},{avg:.16e},{band:.16e}");
                    rows.push(json!({ "window": w, "average": avg, "band": band }));
                }
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!("{} windows inside the CLT band: {pass}", rows.len()),
                    json!({ "windows": rows, "truncation_bound": bundle.truncation_bound() }),
                    Some(csv),
                ))
            }
            Check::Lyapunov => {
                let path = self.path()?;
                let est = pullback::top_lyapunov(
                    self.spec,
                    &path,
                    self.cfg.lyapunov.horizon,
                    self.cfg.lyapunov.samples,
                )?;
                let pass = est.consistent_with_declared != Some(false);
                let mut csv = String::from("sample,exponent\n");
                for (i, e) in est.per_seed.iter().enumerate() {
                    let _ = writeln!(csv, "{i},{e:.16e}");
                }
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!(
                        "top exponent {:.4} (declared decay {:?})",
                        est.estimate, est.declared_lambda
                    ),
                    serde_json::to_value(&est)?,
                    Some(csv),
                ))
            }
            Check::Selfconv => {
                let path = self.path()?;
                let is_strat = matches!(self.spec, SystemSpec::StratonovichDissipative { .. });
                let kind = self.cfg.selfconv.integrator.unwrap_or(if is_strat {
                    IntegratorKind::Heun
                } else {
                    IntegratorKind::EulerMaruyama
                });
                let study = integrators::self_convergence(
                    kind,
                    self.spec,
                    &path,
                    0.0,
                    self.cfg.selfconv.t1,
                    &initial_point(self.cfg, n),
                    self.cfg.selfconv.levels,
                    self.cfg.selfconv.samples,
                )?;
                let multiplicative =
                    matches!(self.spec, SystemSpec::MultiplicativeLipschitz { .. });
                let (lo, hi) = integrators::expected_order_band(kind, multiplicative);
                let pass = study.fitted_order >= lo && study.fitted_order <= hi;
                let mut csv = String::from("step,error\n");
                for p in &study.points {
                    let _ = writeln!(csv, "{:.16e},{:.16e}", p.step, p.error);
                }
                Ok(self.report(
                    check,
                    if pass { Verdict::Pass } else { Verdict::Fail },
                    format!("fitted order {:.3}, band [{lo}, {hi}]", study.fitted_order),
                    serde_json::to_value(&study)?,
                    Some(csv),
                ))
            }
        }
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub system: String,
    pub seeds: Vec<u64>,
    pub checks: Vec<&'static str>,
    /// verdicts[check][seed-index]
    pub verdicts: Vec<Vec<Verdict>>,
    pub all_passed: bool,
}

pub struct CampaignOutcome {
    pub all_passed: bool,
    pub summary_table: String,
    pub output_dir: PathBuf,
}

/// Run every (seed, check) cell, write reports, and return the outcome.
pub fn run_campaign(cfg: &RunConfig, out_override: Option<&Path>) -> Result<CampaignOutcome> {
    let (system_name, spec) = cfg.system.resolve()?;
    let hash = config_hash(cfg);
    let pcfg = cfg.pullback_config();
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("rds-out"));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let workers = cfg
        .workers
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(usize::from)
                .unwrap_or(1)
        })
        .clamp(1, cfg.seeds.len().max(1));

    // per-seed results, ordered by position in cfg.seeds
    let results: Mutex<Vec<Option<Vec<CheckReport>>>> = Mutex::new(
        vec![None; cfg.seeds.len()]
            .into_iter()
            .map(|_: Option<()>| None)
            .collect(),
    );
    let next: Mutex<usize> = Mutex::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().expect("scheduler lock");
                    if *guard >= cfg.seeds.len() {
                        return;
                    }
                    let idx = *guard;
                    *guard += 1;
                    idx
                };
                let ctx = SeedContext {
                    cfg,
                    spec: &spec,
                    system_name: &system_name,
                    hash: &hash,
                    pcfg,
                    seed: cfg.seeds[idx],
                };
                let reports: Vec<CheckReport> =
                    cfg.checks.iter().map(|&c| ctx.run_check(c)).collect();
                results.lock().expect("results lock")[idx] = Some(reports);
            });
        }
    });

    let results = results.into_inner().expect("worker pool finished");
    let mut verdicts: Vec<Vec<Verdict>> =
        vec![Vec::with_capacity(cfg.seeds.len()); cfg.checks.len()];
    for (seed_idx, seed_reports) in results.iter().enumerate() {
        let seed_reports = seed_reports.as_ref().expect("every seed was processed");
        for (check_idx, report) in seed_reports.iter().enumerate() {
            verdicts[check_idx].push(report.verdict.clone());
            let stem = format!("{}-seed{}", report.check, cfg.seeds[seed_idx]);
            let json_path = out_dir.join(format!("{stem}.json"));
            let mut body = serde_json::to_string_pretty(report)?;
            body.push('\n');
            fs::write(&json_path, body)
                .with_context(|| format!("writing {}", json_path.display()))?;
            if let Some(csv) = &report.csv {
                fs::write(out_dir.join(format!("{stem}.csv")), csv)?;
            }
        }
    }

    let all_passed = verdicts
        .iter()
        .flatten()
        .all(|v| matches!(v, Verdict::Pass));
    let summary = Summary {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        system: system_name,
        seeds: cfg.seeds.clone(),
        checks: cfg.checks.iter().map(|c| c.name()).collect(),
        verdicts,
        all_passed,
    };
    let mut body = serde_json::to_string_pretty(&summary)?;
    body.push('\n');
    fs::write(out_dir.join("summary.json"), body)?;
    let mut resolved = serde_json::to_string_pretty(cfg)?;
    resolved.push('\n');
    fs::write(out_dir.join("config.json"), resolved)?;

    Ok(CampaignOutcome {
        all_passed,
        summary_table: render_table(&summary),
        output_dir: out_dir,
    })
}

fn render_table(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "system: {}   config: {}",
        summary.system, summary.config_hash
    );
    let width = summary
        .checks
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let _ = write!(out, "{:width$}", "check");
    for seed in &summary.seeds {
        let _ = write!(out, "  seed{seed}");
    }
    let _ = writeln!(out);
    for (check, row) in summary.checks.iter().zip(&summary.verdicts) {
        let _ = write!(out, "{check:width$}");
        for (seed, verdict) in summary.seeds.iter().zip(row) {
            let cell = match verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "FAIL",
                Verdict::Error => "ERR ",
            };
            let pad = format!("seed{seed}").len() + 2;
            let _ = write!(out, "{cell:>pad$}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(
        out,
        "overall: {}",
        if summary.all_passed {
            "all checks passed"
        } else {
            "FAILURES present"
        }
    );
    out
}
