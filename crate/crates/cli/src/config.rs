//! Campaign configuration: one human-readable TOML tree, overridable from
//! the command line with dotted paths.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rds_core::integrators::IntegratorKind;
use rds_core::systems::{preset, SystemSpec};

/// Diagnostic checks a campaign can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Validate,
    Equilibrium,
    H1,
    H2,
    Invariance,
    Uniqueness,
    Birkhoff,
    Lyapunov,
    Selfconv,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Validate => "validate",
            Check::Equilibrium => "equilibrium",
            Check::H1 => "h1",
            Check::H2 => "h2",
            Check::Invariance => "invariance",
            Check::Uniqueness => "uniqueness",
            Check::Birkhoff => "birkhoff",
            Check::Lyapunov => "lyapunov",
            Check::Selfconv => "selfconv",
        }
    }
}

/// System source: a preset name or an inline class definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Preset { preset: String },
    Inline(SystemSpec),
}

impl SystemSource {
    pub fn resolve(&self) -> Result<(String, SystemSpec)> {
        match self {
            SystemSource::Preset { preset: name } => {
                let spec = preset(name)?;
                Ok((name.clone(), spec))
            }
            SystemSource::Inline(spec) => {
                spec.validate_dims()?;
                Ok((format!("inline:{}", spec.class_name()), spec.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub step: f64,
    pub past_horizon: f64,
    pub future_horizon: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            past_horizon: 20.0,
            future_horizon: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t0: f64,
    pub ratio: f64,
    pub depth: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t0: 1.0,
            ratio: 1.3,
            depth: 20.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub equilibrium: f64,
    pub uniqueness: f64,
    pub invariance: f64,
    /// Accepted shortfall of the fitted contraction rate, as a fraction of
    /// the predicted rate.
    pub rate_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            equilibrium: 1e-6,
            uniqueness: 1e-5,
            invariance: 1e-2,
            rate_slack: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H1Config {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Default for H1Config {
    fn default() -> Self {
        Self {
            x: vec![5.0],
            y: vec![-5.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H2Config {
    pub gamma: Vec<f64>,
    pub lambda0: Option<f64>,
}

impl Default for H2Config {
    fn default() -> Self {
        Self {
            gamma: vec![0.25, 0.5, 1.0],
            lambda0: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub s_values: Vec<f64>,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            s_values: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniquenessConfig {
    /// Initial points; empty means +/- spread on the first axis.
    pub points: Vec<Vec<f64>>,
    pub spread: f64,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        Self {
            points: vec![],
            spread: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirkhoffConfig {
    pub windows: Vec<f64>,
}

impl Default for BirkhoffConfig {
    fn default() -> Self {
        Self {
            windows: vec![10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub horizon: f64,
    pub samples: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            samples: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfconvConfig {
    pub integrator: Option<IntegratorKind>,
    pub levels: usize,
    pub samples: usize,
    pub t1: f64,
}

impl Default for SelfconvConfig {
    fn default() -> Self {
        Self {
            integrator: None,
            levels: 4,
            samples: 32,
            t1: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Falsification samples per functional constraint.
    pub samples: usize,
    /// Half-width of the sampling box around the origin.
    pub box_half_width: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { samples: 10_000, box_half_width: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullbackOptions {
    /// "euler-maruyama" | "exact-linear" | "heun" | "conjugation-pipeline"
    pub method: Option<rds_core::pullback::PullbackMethod>,
    pub transient_cut: f64,
    pub eps0: Option<f64>,
    pub eps2: Option<f64>,
    pub initial_point: Vec<f64>,
}

impl Default for PullbackOptions {
    fn default() -> Self {
        Self {
            method: None,
            transient_cut: 1.0,
            eps0: None,
            eps2: None,
            initial_point: vec![1.0],
        }
    }
}

/// Root campaign configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSource,
    pub seeds: Vec<u64>,
    pub checks: Vec<Check>,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub pullback: PullbackOptions,
    #[serde(default)]
    pub h1: H1Config,
    #[serde(default)]
    pub h2: H2Config,
    #[serde(default)]
    pub invariance: InvarianceConfig,
    #[serde(default)]
    pub uniqueness: UniquenessConfig,
    #[serde(default)]
    pub birkhoff: BirkhoffConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default)]
    pub selfconv: SelfconvConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Load a TOML config and apply `key.path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text.parse().context("parsing config TOML")?;
        let mut value = toml::Value::Table(table);
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: RunConfig = value.try_into().context("interpreting config fields")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static validation plus the horizon pre-flight: every requested check
    /// must fit inside the configured path horizons.
    pub fn validate(&self) -> Result<()> {
        if self.checks.is_empty() {
            bail!("config must request at least one check");
        }
        let dupes: BTreeSet<_> = self.checks.iter().collect();
        if dupes.len() != self.checks.len() {
            bail!("duplicate checks in {:?}", self.checks);
        }
        if self.seeds.is_empty() {
            bail!("config must list at least one seed");
        }
        if self.path.step <= 0.0 || self.path.step.is_nan() {
            bail!("path.step must be positive, got {}", self.path.step);
        }
        let (_, spec) = self.system.resolve()?;
        let is_strat = matches!(spec, SystemSpec::StratonovichDissipative { .. });
        if self.checks.contains(&Check::Birkhoff) && !is_strat {
            bail!("the birkhoff check needs a stratonovich-dissipative system (it averages u_c)");
        }

        // conservative default burn-in for unit-rate stationary bundles
        let burn_in = 18.4207 + self.path.step;
        let mut required_past = 0.0f64;
        let mut required_future = 0.0f64;
        let conjugation = matches!(
            self.pullback.method,
            Some(rds_core::pullback::PullbackMethod::ConjugationPipeline)
        );
        for check in &self.checks {
            match check {
                Check::Validate => {}
                Check::Equilibrium | Check::H1 | Check::H2 | Check::Uniqueness => {
                    let mut need = self.schedule.depth;
                    if conjugation {
                        need += burn_in;
                    }
                    required_past = required_past.max(need);
                }
                Check::Invariance => {
                    let max_s = self
                        .invariance
                        .s_values
                        .iter()
                        .cloned()
                        .fold(0.0f64, f64::max);
                    let mut need = self.schedule.depth;
                    if conjugation {
                        need += burn_in;
                    }
                    required_past = required_past.max(need);
                    required_future = required_future.max(max_s);
                }
                Check::Birkhoff => {
                    let max_w = self.birkhoff.windows.iter().cloned().fold(0.0f64, f64::max);
                    required_past = required_past.max(max_w + burn_in);
                }
                Check::Lyapunov => {
                    required_future = required_future.max(self.lyapunov.horizon);
                }
                Check::Selfconv => {
                    required_future = required_future.max(self.selfconv.t1);
                    let kind = self.selfconv.integrator.unwrap_or(if is_strat {
                        IntegratorKind::Heun
                    } else {
                        IntegratorKind::EulerMaruyama
                    });
                    if kind == IntegratorKind::RandomOdeRk4 {
                        required_past = required_past.max(burn_in);
                    }
                }
            }
        }
        if self.path.past_horizon < required_past - 1e-9 {
            bail!(
                "path.past_horizon = {} is too small for the requested checks; need at least {:.4}",
                self.path.past_horizon,
                required_past
            );
        }
        if self.path.future_horizon < required_future - 1e-9 {
            bail!(
                "path.future_horizon = {} is too small for the requested checks; need at least {:.4}",
                self.path.future_horizon,
                required_future
            );
        }
        Ok(())
    }

    pub fn pullback_config(&self) -> rds_core::pullback::PullbackConfig {
        rds_core::pullback::PullbackConfig {
            method: self.pullback.method,
            margins: rds_core::systems::Margins {
                eps0: self.pullback.eps0,
                eps2: self.pullback.eps2,
            },
            transient_cut: self.pullback.transient_cut,
            ..rds_core::pullback::PullbackConfig::default()
        }
    }
}

/// Apply one `dotted.path=value` override onto the raw TOML tree.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key_path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} must look like key.path=value"))?;
    let parsed: toml::Value = match raw.parse::<toml::Value>() {
        Ok(v) => v,
        // bare words become strings: --set system.preset=scalar-ou
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key_path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override {spec:?}: {part:?} is not a table"))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    unreachable!("split always yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seeds = [1, 2]
        checks = ["equilibrium"]
        [system]
        preset = "scalar-ou"
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.path.step, 0.01);
        let (name, _) = cfg.system.resolve().unwrap();
        assert_eq!(name, "scalar-ou");
    }

    #[test]
    fn empty_checks_are_rejected() {
        let text = r#"
            seeds = [1]
            checks = []
            [system]
            preset = "scalar-ou"
        "#;
        let err = RunConfig::parse(text, &[]).unwrap_err().to_string();
        assert!(err.contains("at least one check"), "{err}");
    }

    #[test]
    fn horizon_preflight_names_the_required_past() {
        let text = r#"
            seeds = [1]
            checks = ["equilibrium"]
            [system]
            preset = "scalar-ou"
            [path]
            step = 0.01
            past_horizon = 5.0
            future_horizon = 0.0
            [schedule]
            depth = 50.0
        "#;
        let err = RunConfig::parse(text, &[]).unwrap_err().to_string();
        assert!(err.contains("past_horizon") && err.contains("50"), "{err}");
    }

    #[test]
    fn overrides_replace_leaves_and_create_tables() {
        let cfg = RunConfig::parse(
            MINIMAL,
            &[
                "path.step=0.005".into(),
                "schedule.depth=10.0".into(),
                "workers=2".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.path.step, 0.005);
        assert_eq!(cfg.schedule.depth, 10.0);
        assert_eq!(cfg.workers, Some(2));
    }

    #[test]
    fn inline_system_definitions_parse() {
        let text = r#"
            seeds = [1]
            checks = ["equilibrium"]
            [system]
            class = "additive-dissipative"
            g = ["-x1 - x1^3"]
            sigma = [[0.1]]
            dissipativity = 1.0
            growth_a = 2.0
            growth_b = 1.0
            growth_p = 3.0
        "#;
        let cfg = RunConfig::parse(text, &[]).unwrap();
        let (name, spec) = cfg.system.resolve().unwrap();
        assert_eq!(name, "inline:additive-dissipative");
        assert_eq!(spec.state_dim(), 1);
    }

    #[test]
    fn birkhoff_requires_a_stratonovich_system() {
        let text = r#"
            seeds = [1]
            checks = ["birkhoff"]
            [system]
            preset = "scalar-ou"
            [path]
            past_horizon = 200.0
        "#;
        let err = RunConfig::parse(text, &[]).unwrap_err().to_string();
        assert!(err.contains("stratonovich"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"
            seeds = [1]
            checks = ["equilibrium"]
            typo_field = 1
            [system]
            preset = "scalar-ou"
        "#;
        assert!(RunConfig::parse(text, &[]).is_err());
    }
}
