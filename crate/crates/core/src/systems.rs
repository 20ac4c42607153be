//! The four SDE system classes and their declared stability constants.
//!
//! Each class carries the constants its contraction argument needs
//! (decay rate and prefactor of the linear part, Lipschitz or dissipativity
//! constants, growth bounds). `validate_spec` checks the arithmetic
//! constraints exactly and falsification-samples the functional ones;
//! a "pass" therefore means "not falsified on N samples", never a proof.
//!
//! Drift nonlinearities are expression trees parsed from strings
//! (`+ - * ^ sin cos tanh exp`, variables `x1..xn`), so configs stay
//! declarative and reproducible: no runtime code loading.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, expm, Mat};
use crate::rng::DetRng;

// ---------------------------------------------------------------------------
// Expression trees
// ---------------------------------------------------------------------------

/// Scalar expression over variables x1..xn.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tanh(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Pow(a, p) => {
                let base = a.eval(x);
                if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
                    base.powi(*p as i32)
                } else {
                    base.powf(*p)
                }
            }
            Expr::Neg(a) => -a.eval(x),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Tanh(a) => a.eval(x).tanh(),
            Expr::Exp(a) => a.eval(x).exp(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.max_var().max(b.max_var()),
            Expr::Pow(a, _)
            | Expr::Neg(a)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Tanh(a)
            | Expr::Exp(a) => a.max_var(),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }
}

/// Parse an expression like `-x1 - x1^3` or `0.25*sin(x1)`.
pub fn parse_expr(src: &str) -> Result<Expr> {
    let mut p = Parser {
        chars: src.as_bytes(),
        pos: 0,
        src,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.chars.len() {
        return Err(Error::ExprParse(format!(
            "unexpected trailing input at byte {} in {src:?}",
            p.pos
        )));
    }
    Ok(e)
}

struct Parser<'a> {
    chars: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let neg = if self.peek() == Some(b'-') {
                self.pos += 1;
                true
            } else {
                false
            };
            let p = self.number()?;
            return Ok(Expr::Pow(Box::new(base), if neg { -p } else { p }));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(Error::ExprParse(format!("missing ')' in {:?}", self.src)));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].is_ascii_alphanumeric()
                        || self.chars[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let word = &self.src[start..self.pos];
                if let Some(idx) = word.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if idx == 0 {
                        return Err(Error::ExprParse(format!(
                            "variables are 1-based, got {word:?} in {:?}",
                            self.src
                        )));
                    }
                    return Ok(Expr::Var(idx - 1));
                }
                let func = match word {
                    "sin" => Expr::Sin as fn(Box<Expr>) -> Expr,
                    "cos" => Expr::Cos,
                    "tanh" => Expr::Tanh,
                    "exp" => Expr::Exp,
                    _ => {
                        return Err(Error::ExprParse(format!(
                            "unknown identifier {word:?} in {:?}",
                            self.src
                        )))
                    }
                };
                if self.peek() != Some(b'(') {
                    return Err(Error::ExprParse(format!(
                        "expected '(' after {word:?} in {:?}",
                        self.src
                    )));
                }
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(Error::ExprParse(format!("missing ')' in {:?}", self.src)));
                }
                self.pos += 1;
                Ok(func(Box::new(inner)))
            }
            other => Err(Error::ExprParse(format!(
                "unexpected {:?} at byte {} in {:?}",
                other.map(char::from),
                self.pos,
                self.src
            ))),
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .chars
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == b'+' || n == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map_err(|_| Error::ExprParse(format!("bad number at byte {start} in {:?}", self.src)))
    }
}

/// Drift nonlinearity: one expression per output coordinate, square by
/// construction (maps R^n to R^n with n = number of expressions).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftFn {
    exprs: Vec<Expr>,
    sources: Vec<String>,
}

impl DriftFn {
    pub fn zero(n: usize) -> Self {
        Self {
            exprs: vec![Expr::Const(0.0); n],
            sources: vec!["0".into(); n],
        }
    }

    pub fn parse(sources: &[&str]) -> Result<Self> {
        let n = sources.len();
        let mut exprs = Vec::with_capacity(n);
        for src in sources {
            let e = parse_expr(src)?;
            if let Some(max) = e.max_var() {
                if max >= n {
                    return Err(Error::ExprParse(format!(
                        "expression {src:?} uses x{} but the system has {n} coordinates",
                        max + 1
                    )));
                }
            }
            exprs.push(e);
        }
        Ok(Self {
            exprs,
            sources: sources.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Linear drift x -> M x spelled out as expressions.
    pub fn linear(m: &Mat) -> Self {
        let sources: Vec<String> = (0..m.rows())
            .map(|i| {
                let terms: Vec<String> = (0..m.cols())
                    .filter(|&j| m.get(i, j) != 0.0)
                    .map(|j| format!("{:?}*x{}", m.get(i, j), j + 1))
                    .collect();
                if terms.is_empty() {
                    "0".into()
                } else {
                    terms.join(" + ")
                }
            })
            .collect();
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        Self::parse(&refs).expect("generated linear expressions always parse")
    }

    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.exprs.iter().all(Expr::is_zero)
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.exprs.len()];
        self.eval_into(x, &mut out);
        out
    }
}

impl Serialize for DriftFn {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.sources.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DriftFn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let sources = Vec::<String>::deserialize(deserializer)?;
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        DriftFn::parse(&refs).map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// System classes
// ---------------------------------------------------------------------------

/// Tagged union of the four supported SDE classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum SystemSpec {
    /// dx = (A x + f(x)) dt + Sigma dB, linear part decaying like
    /// `c * exp(-lambda t)`, f globally Lipschitz with constant `lipschitz`.
    AdditiveLipschitz {
        a: Mat,
        f: DriftFn,
        sigma: Mat,
        lambda: f64,
        c: f64,
        lipschitz: f64,
    },
    /// dx = g(x) dt + Sigma dB with one-sided dissipative g:
    /// <x - y, g(x) - g(y)> <= -dissipativity |x - y|^2 and polynomial
    /// growth |g(x)| <= growth_a |x|^growth_p + growth_b.
    AdditiveDissipative {
        g: DriftFn,
        sigma: Mat,
        dissipativity: f64,
        growth_a: f64,
        growth_b: f64,
        growth_p: f64,
    },
    /// dx = (A x + h(x)) dt + sum_k sigma_k x dB_k (Ito), with declared
    /// decay rate `lambda` and integrable prefactor norm `rbar_l1` for the
    /// linear cocycle.
    MultiplicativeLipschitz {
        a: Mat,
        h: DriftFn,
        sigma_k: Vec<Mat>,
        lambda: f64,
        rbar_l1: f64,
        lipschitz: f64,
    },
    /// dx_i = g_i(x) dt + sum_k c_k x_i (Stratonovich) dB_k with one-sided
    /// dissipative g.
    StratonovichDissipative {
        g: DriftFn,
        c_k: Vec<f64>,
        dissipativity: f64,
    },
}

/// How the predicted pullback contraction rate arises for a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    /// lambda - lipschitz * c (additive noise, globally Lipschitz drift)
    LambdaMinusLc,
    /// the dissipativity constant itself (additive noise, one-sided condition)
    DissipativeL,
    /// margin eps0 below (lambda - lipschitz * rbar_l1) / 2 (multiplicative)
    Epsilon0Margin,
    /// dissipativity - eps2 (Stratonovich conformal noise)
    LMinusEpsilon2,
}

/// Predicted contraction rate with the margin parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub rate: f64,
    pub kind: RateKind,
    pub eps0: Option<f64>,
    pub eps2: Option<f64>,
}

/// Margin overrides for the classes whose rate involves a free parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub eps0: Option<f64>,
    pub eps2: Option<f64>,
}

/// Linear skeleton (A, sigma_k) generating the fundamental-matrix cocycle.
#[derive(Debug, Clone)]
pub struct LinearSkeleton {
    pub a: Mat,
    pub sigma_k: Vec<Mat>,
}

impl SystemSpec {
    pub fn class_name(&self) -> &'static str {
        match self {
            SystemSpec::AdditiveLipschitz { .. } => "additive-lipschitz",
            SystemSpec::AdditiveDissipative { .. } => "additive-dissipative",
            SystemSpec::MultiplicativeLipschitz { .. } => "multiplicative-lipschitz",
            SystemSpec::StratonovichDissipative { .. } => "stratonovich-dissipative",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemSpec::AdditiveLipschitz { a, .. } => a.rows(),
            SystemSpec::AdditiveDissipative { g, .. } => g.dim(),
            SystemSpec::MultiplicativeLipschitz { a, .. } => a.rows(),
            SystemSpec::StratonovichDissipative { g, .. } => g.dim(),
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            SystemSpec::AdditiveLipschitz { sigma, .. } => sigma.cols(),
            SystemSpec::AdditiveDissipative { sigma, .. } => sigma.cols(),
            SystemSpec::MultiplicativeLipschitz { sigma_k, .. } => sigma_k.len(),
            SystemSpec::StratonovichDissipative { c_k, .. } => c_k.len(),
        }
    }

    /// Dimensional consistency of matrices and drift expressions.
    pub fn validate_dims(&self) -> Result<()> {
        let n = self.state_dim();
        let check = |cond: bool, context: &str, expected: usize, got: usize| {
            if cond {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context: context.into(),
                    expected,
                    got,
                })
            }
        };
        match self {
            SystemSpec::AdditiveLipschitz { a, f, sigma, .. } => {
                check(
                    a.is_square(),
                    "linear part A must be square",
                    a.rows(),
                    a.cols(),
                )?;
                check(f.dim() == n, "drift f output dimension", n, f.dim())?;
                check(sigma.rows() == n, "Sigma row count", n, sigma.rows())?;
            }
            SystemSpec::AdditiveDissipative { sigma, .. } => {
                check(sigma.rows() == n, "Sigma row count", n, sigma.rows())?;
            }
            SystemSpec::MultiplicativeLipschitz { a, h, sigma_k, .. } => {
                check(
                    a.is_square(),
                    "linear part A must be square",
                    a.rows(),
                    a.cols(),
                )?;
                check(h.dim() == n, "drift h output dimension", n, h.dim())?;
                for (k, s) in sigma_k.iter().enumerate() {
                    check(
                        s.rows() == n && s.cols() == n,
                        &format!("sigma_{} must be {n}x{n}", k + 1),
                        n,
                        s.rows().max(s.cols()),
                    )?;
                }
            }
            SystemSpec::StratonovichDissipative { .. } => {}
        }
        Ok(())
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "state vector length".into(),
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state {x:?}")));
        }
        Ok(())
    }

    /// Full drift including the linear part, with input validation.
    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.state_dim()];
        self.drift_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked drift evaluation for integrator loops.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            SystemSpec::AdditiveLipschitz { a, f, .. } => {
                a.matvec_into(x, out);
                for (i, e) in f.exprs.iter().enumerate() {
                    out[i] += e.eval(x);
                }
            }
            SystemSpec::AdditiveDissipative { g, .. } => g.eval_into(x, out),
            SystemSpec::MultiplicativeLipschitz { a, h, .. } => {
                a.matvec_into(x, out);
                for (i, e) in h.exprs.iter().enumerate() {
                    out[i] += e.eval(x);
                }
            }
            SystemSpec::StratonovichDissipative { g, .. } => g.eval_into(x, out),
        }
    }

    /// Diffusion matrix at state x (n rows, m columns), with input validation.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Result<Mat> {
        self.check_state(x)?;
        let n = self.state_dim();
        let m = self.noise_dim();
        let mut d = Mat::zeros(n, m);
        match self {
            SystemSpec::AdditiveLipschitz { sigma, .. }
            | SystemSpec::AdditiveDissipative { sigma, .. } => return Ok(sigma.clone()),
            SystemSpec::MultiplicativeLipschitz { sigma_k, .. } => {
                for (k, s) in sigma_k.iter().enumerate() {
                    let col = s.matvec(x);
                    for (i, v) in col.iter().enumerate() {
                        d.set(i, k, *v);
                    }
                }
            }
            SystemSpec::StratonovichDissipative { c_k, .. } => {
                for (k, c) in c_k.iter().enumerate() {
                    for (i, xi) in x.iter().enumerate() {
                        d.set(i, k, c * xi);
                    }
                }
            }
        }
        Ok(d)
    }

    /// Unchecked `out = diffusion(x) * db` for integrator loops.
    pub fn apply_diffusion(&self, x: &[f64], db: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match self {
            SystemSpec::AdditiveLipschitz { sigma, .. }
            | SystemSpec::AdditiveDissipative { sigma, .. } => {
                sigma.matvec_into(db, out);
            }
            SystemSpec::MultiplicativeLipschitz { sigma_k, .. } => {
                for (k, s) in sigma_k.iter().enumerate() {
                    let w = db[k];
                    if w == 0.0 {
                        continue;
                    }
                    for (i, o) in out.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (a, b) in s.row(i).iter().zip(x) {
                            acc += a * b;
                        }
                        *o += acc * w;
                    }
                }
            }
            SystemSpec::StratonovichDissipative { c_k, .. } => {
                let scale: f64 = c_k.iter().zip(db).map(|(c, w)| c * w).sum();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = scale * xi;
                }
            }
        }
    }

    /// Predicted pullback contraction rate for the class.
    pub fn predicted_rate(&self, margins: &Margins) -> RatePrediction {
        match self {
            SystemSpec::AdditiveLipschitz {
                lambda,
                c,
                lipschitz,
                ..
            } => RatePrediction {
                rate: lambda - lipschitz * c,
                kind: RateKind::LambdaMinusLc,
                eps0: None,
                eps2: None,
            },
            SystemSpec::AdditiveDissipative { dissipativity, .. } => RatePrediction {
                rate: *dissipativity,
                kind: RateKind::DissipativeL,
                eps0: None,
                eps2: None,
            },
            SystemSpec::MultiplicativeLipschitz {
                lambda,
                rbar_l1,
                lipschitz,
                ..
            } => {
                let admissible = (lambda - lipschitz * rbar_l1) / 2.0;
                let eps0 = margins.eps0.unwrap_or(admissible / 2.0);
                RatePrediction {
                    rate: eps0,
                    kind: RateKind::Epsilon0Margin,
                    eps0: Some(eps0),
                    eps2: None,
                }
            }
            SystemSpec::StratonovichDissipative { dissipativity, .. } => {
                let eps2 = margins.eps2.unwrap_or(dissipativity / 2.0);
                RatePrediction {
                    rate: dissipativity - eps2,
                    kind: RateKind::LMinusEpsilon2,
                    eps0: None,
                    eps2: Some(eps2),
                }
            }
        }
    }

    /// Linear cocycle skeleton for Lyapunov-exponent estimation. For the
    /// additive Lipschitz class the cocycle is deterministic (sigma_k = 0).
    pub fn linear_skeleton(&self) -> Result<LinearSkeleton> {
        match self {
            SystemSpec::AdditiveLipschitz { a, sigma, .. } => Ok(LinearSkeleton {
                a: a.clone(),
                sigma_k: vec![Mat::zeros(a.rows(), a.rows()); sigma.cols()],
            }),
            SystemSpec::MultiplicativeLipschitz { a, sigma_k, .. } => Ok(LinearSkeleton {
                a: a.clone(),
                sigma_k: sigma_k.clone(),
            }),
            other => Err(Error::UnsupportedClass {
                op: "linear_skeleton",
                class: other.class_name(),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Hypothesis validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Not falsified on the sampled points.
    Pass,
    Fail,
    /// Constraint cannot be checked from the declared data alone.
    Inconclusive,
}

/// A concrete sample demonstrating (or extremizing) a constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub t: Option<f64>,
    /// Measured left-hand side of the constraint at the witness.
    pub lhs: f64,
    /// Bound the left-hand side was compared against.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub constraint: String,
    pub declared: Vec<(String, f64)>,
    pub estimate: f64,
    pub verdict: Verdict,
    pub samples: usize,
    /// Extremal sample; always present when the verdict is Fail.
    pub witness: Option<Witness>,
    pub note: String,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        !matches!(self.verdict, Verdict::Fail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub seed: u64,
    pub samples: usize,
    /// Half-width of the sampling box around the origin.
    pub box_half_width: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            samples: 10_000,
            box_half_width: 10.0,
        }
    }
}

/// Relative slack applied to sampled comparisons so constraints that hold
/// with equality do not flip on rounding.
const CHECK_SLACK: f64 = 1e-9;

fn sample_point(rng: &mut DetRng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.next_in(-half_width, half_width))
        .collect()
}

/// Check the arithmetic constraints exactly and falsification-sample the
/// functional conditions of the class hypotheses.
pub fn validate_spec(spec: &SystemSpec, cfg: &ValidationConfig) -> Result<Vec<HypothesisReport>> {
    spec.validate_dims()?;
    let mut reports = Vec::new();
    match spec {
        SystemSpec::AdditiveLipschitz {
            a,
            f,
            lambda,
            c,
            lipschitz,
            ..
        } => {
            reports.push(rate_margin_report(*lipschitz, *c, *lambda));
            reports.push(linear_decay_report(a, *lambda, *c)?);
            reports.push(lipschitz_report(spec, f, *lipschitz, cfg));
        }
        SystemSpec::AdditiveDissipative {
            g,
            dissipativity,
            growth_a,
            growth_b,
            growth_p,
            ..
        } => {
            reports.push(positive_constants_report(&[
                ("dissipativity", *dissipativity),
                ("growth_a", *growth_a),
                ("growth_b", *growth_b),
            ]));
            reports.push(growth_exponent_report(*growth_p));
            reports.push(one_sided_report(spec, g, *dissipativity, cfg));
            reports.push(growth_report(spec, g, *growth_a, *growth_b, *growth_p, cfg));
        }
        SystemSpec::MultiplicativeLipschitz {
            h,
            lambda,
            rbar_l1,
            lipschitz,
            ..
        } => {
            reports.push(rate_margin_report(*lipschitz, *rbar_l1, *lambda));
            reports.push(HypothesisReport {
                constraint: "lyapunov-declared".into(),
                declared: vec![("lambda".into(), *lambda), ("rbar_l1".into(), *rbar_l1)],
                estimate: f64::NAN,
                verdict: Verdict::Inconclusive,
                samples: 0,
                witness: None,
                note: "decay of the linear cocycle is a declared input; cross-check it with the \
                       top Lyapunov exponent estimator"
                    .into(),
            });
            reports.push(lipschitz_report(spec, h, *lipschitz, cfg));
        }
        SystemSpec::StratonovichDissipative {
            g, dissipativity, ..
        } => {
            reports.push(positive_constants_report(&[(
                "dissipativity",
                *dissipativity,
            )]));
            reports.push(one_sided_report(spec, g, *dissipativity, cfg));
        }
    }
    Ok(reports)
}

fn rate_margin_report(lipschitz: f64, prefactor: f64, lambda: f64) -> HypothesisReport {
    let ratio = lipschitz * prefactor / lambda;
    let ok = ratio < 1.0 && lambda > 0.0;
    HypothesisReport {
        constraint: "rate-margin".into(),
        declared: vec![
            ("lipschitz".into(), lipschitz),
            ("prefactor".into(), prefactor),
            ("lambda".into(), lambda),
        ],
        estimate: ratio,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        samples: 0,
        witness: if ok {
            None
        } else {
            Some(Witness {
                x: vec![],
                y: None,
                t: None,
                lhs: ratio,
                rhs: 1.0,
            })
        },
        note: "exact arithmetic check: lipschitz * prefactor / lambda < 1".into(),
    }
}

/// Sample `||exp(A t)||_F <= c e^{-lambda t}` on a time grid.
fn linear_decay_report(a: &Mat, lambda: f64, c: f64) -> Result<HypothesisReport> {
    let t_max = if lambda > 0.0 { 10.0 / lambda } else { 10.0 };
    let points = 200;
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut witness: Option<Witness> = None;
    for i in 0..=points {
        let t = t_max * i as f64 / points as f64;
        let norm = expm(&a.scale(t))?.frobenius_norm();
        let bound = c * (-lambda * t).exp();
        let ratio = norm / bound;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            witness = Some(Witness {
                x: vec![],
                y: None,
                t: Some(t),
                lhs: norm,
                rhs: bound,
            });
        }
    }
    let failed = worst_ratio > 1.0 + CHECK_SLACK;
    Ok(HypothesisReport {
        constraint: "linear-decay".into(),
        declared: vec![("lambda".into(), lambda), ("c".into(), c)],
        estimate: worst_ratio,
        verdict: if failed { Verdict::Fail } else { Verdict::Pass },
        samples: points + 1,
        witness,
        note: format!("sup over t in [0, {t_max:.3}] of ||exp(A t)||_F / (c e^(-lambda t))"),
    })
}

fn lipschitz_report(
    spec: &SystemSpec,
    f: &DriftFn,
    lipschitz: f64,
    cfg: &ValidationConfig,
) -> HypothesisReport {
    let n = spec.state_dim();
    let mut rng = DetRng::new(cfg.seed);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..cfg.samples {
        let x = sample_point(&mut rng, n, cfg.box_half_width);
        let y = sample_point(&mut rng, n, cfg.box_half_width);
        let denom = linalg::dist(&x, &y);
        if denom < 1e-12 {
            continue;
        }
        let ratio = linalg::dist(&f.eval(&x), &f.eval(&y)) / denom;
        if ratio > worst {
            worst = ratio;
            witness = Some(Witness {
                lhs: ratio * denom,
                rhs: lipschitz * denom,
                x,
                y: Some(y),
                t: None,
            });
        }
    }
    let failed = worst > lipschitz * (1.0 + CHECK_SLACK) + 1e-12;
    HypothesisReport {
        constraint: "lipschitz-ratio".into(),
        declared: vec![("lipschitz".into(), lipschitz)],
        estimate: worst,
        verdict: if failed { Verdict::Fail } else { Verdict::Pass },
        samples: cfg.samples,
        witness,
        note: "max sampled |f(x)-f(y)| / |x-y|; pass means not falsified".into(),
    }
}

fn one_sided_report(
    spec: &SystemSpec,
    g: &DriftFn,
    dissipativity: f64,
    cfg: &ValidationConfig,
) -> HypothesisReport {
    let n = spec.state_dim();
    let mut rng = DetRng::new(cfg.seed ^ 0xd155);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..cfg.samples {
        let x = sample_point(&mut rng, n, cfg.box_half_width);
        let y = sample_point(&mut rng, n, cfg.box_half_width);
        let diff = linalg::sub(&x, &y);
        let norm_sq = linalg::dot(&diff, &diff);
        if norm_sq < 1e-24 {
            continue;
        }
        let gdiff = linalg::sub(&g.eval(&x), &g.eval(&y));
        let inner = linalg::dot(&diff, &gdiff);
        let ratio = inner / norm_sq;
        if ratio > worst {
            worst = ratio;
            witness = Some(Witness {
                lhs: inner,
                rhs: -dissipativity * norm_sq,
                x,
                y: Some(y),
                t: None,
            });
        }
    }
    let tol = CHECK_SLACK * dissipativity.abs().max(1.0);
    let failed = worst > -dissipativity + tol;
    HypothesisReport {
        constraint: "one-sided-dissipative".into(),
        declared: vec![("dissipativity".into(), dissipativity)],
        estimate: worst,
        verdict: if failed { Verdict::Fail } else { Verdict::Pass },
        samples: cfg.samples,
        witness,
        note: "max sampled <x-y, g(x)-g(y)> / |x-y|^2 compared against -dissipativity".into(),
    }
}

fn growth_report(
    spec: &SystemSpec,
    g: &DriftFn,
    a: f64,
    b: f64,
    p: f64,
    cfg: &ValidationConfig,
) -> HypothesisReport {
    let n = spec.state_dim();
    let mut rng = DetRng::new(cfg.seed ^ 0x9601);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..cfg.samples {
        let x = sample_point(&mut rng, n, cfg.box_half_width);
        let bound = a * linalg::norm(&x).powf(p) + b;
        let val = linalg::norm(&g.eval(&x));
        let ratio = val / bound;
        if ratio > worst {
            worst = ratio;
            witness = Some(Witness {
                lhs: val,
                rhs: bound,
                x,
                y: None,
                t: None,
            });
        }
    }
    let failed = worst > 1.0 + CHECK_SLACK;
    HypothesisReport {
        constraint: "polynomial-growth".into(),
        declared: vec![
            ("growth_a".into(), a),
            ("growth_b".into(), b),
            ("growth_p".into(), p),
        ],
        estimate: worst,
        verdict: if failed { Verdict::Fail } else { Verdict::Pass },
        samples: cfg.samples,
        witness,
        note: "max sampled |g(x)| / (a |x|^p + b)".into(),
    }
}

fn positive_constants_report(constants: &[(&str, f64)]) -> HypothesisReport {
    let bad: Vec<&(&str, f64)> = constants.iter().filter(|(_, v)| *v <= 0.0).collect();
    HypothesisReport {
        constraint: "positive-constants".into(),
        declared: constants.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        estimate: constants
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min),
        verdict: if bad.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        samples: 0,
        witness: bad.first().map(|(_, v)| Witness {
            x: vec![],
            y: None,
            t: None,
            lhs: *v,
            rhs: 0.0,
        }),
        note: "exact arithmetic check: declared constants must be positive".into(),
    }
}

fn growth_exponent_report(p: f64) -> HypothesisReport {
    HypothesisReport {
        constraint: "growth-exponent".into(),
        declared: vec![("growth_p".into(), p)],
        estimate: p,
        verdict: if p >= 1.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        samples: 0,
        witness: if p >= 1.0 {
            None
        } else {
            Some(Witness {
                x: vec![],
                y: None,
                t: None,
                lhs: p,
                rhs: 1.0,
            })
        },
        note: "exact arithmetic check: growth exponent p >= 1".into(),
    }
}

/// Re-evaluate a stored witness against the spec; `Some(true)` means the
/// recorded violation replays.
pub fn replay_witness(spec: &SystemSpec, report: &HypothesisReport) -> Option<bool> {
    let w = report.witness.as_ref()?;
    match report.constraint.as_str() {
        "lipschitz-ratio" => {
            let y = w.y.as_ref()?;
            let (f, l) = match spec {
                SystemSpec::AdditiveLipschitz { f, lipschitz, .. } => (f, *lipschitz),
                SystemSpec::MultiplicativeLipschitz { h, lipschitz, .. } => (h, *lipschitz),
                _ => return None,
            };
            let lhs = linalg::dist(&f.eval(&w.x), &f.eval(y));
            Some(lhs > l * linalg::dist(&w.x, y) * (1.0 + CHECK_SLACK) + 1e-12)
        }
        "one-sided-dissipative" => {
            let y = w.y.as_ref()?;
            let (g, l) = match spec {
                SystemSpec::AdditiveDissipative {
                    g, dissipativity, ..
                }
                | SystemSpec::StratonovichDissipative {
                    g, dissipativity, ..
                } => (g, *dissipativity),
                _ => return None,
            };
            let diff = linalg::sub(&w.x, y);
            let inner = linalg::dot(&diff, &linalg::sub(&g.eval(&w.x), &g.eval(y)));
            let norm_sq = linalg::dot(&diff, &diff);
            Some(inner > -l * norm_sq + CHECK_SLACK * l.abs().max(1.0) * norm_sq.max(1.0))
        }
        "polynomial-growth" => {
            let (g, a, b, p) = match spec {
                SystemSpec::AdditiveDissipative {
                    g,
                    growth_a,
                    growth_b,
                    growth_p,
                    ..
                } => (g, *growth_a, *growth_b, *growth_p),
                _ => return None,
            };
            let bound = a * linalg::norm(&w.x).powf(p) + b;
            Some(linalg::norm(&g.eval(&w.x)) > bound * (1.0 + CHECK_SLACK))
        }
        "linear-decay" => {
            let t = w.t?;
            let (a, lambda, c) = match spec {
                SystemSpec::AdditiveLipschitz { a, lambda, c, .. } => (a, *lambda, *c),
                _ => return None,
            };
            let norm = expm(&a.scale(t)).ok()?.frobenius_norm();
            Some(norm > c * (-lambda * t).exp() * (1.0 + CHECK_SLACK) + 1e-12)
        }
        "rate-margin" | "positive-constants" | "growth-exponent" => Some(w.lhs >= w.rhs),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Name and one-line summary of every built-in system.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "scalar-ou",
        "scalar additive: dx = -x dt + dB (lambda=1, c=1, f=0)",
    ),
    (
        "remark5",
        "planar additive: A = [[0,-2],[3,-1]], Sigma = I; stable spiral with no one-sided constant",
    ),
    (
        "lipschitz-sine",
        "scalar additive: dx = (-x + 0.25 sin x) dt + 0.3 dB (lambda=1, c=1, L=0.25)",
    ),
    (
        "dissipative-cubic",
        "scalar dissipative: dx = (-x - x^3) dt + 0.1 dB (L=1, a=2, b=1, p=3)",
    ),
    (
        "gbm-strat",
        "scalar Stratonovich: dx = -x dt + 0.5 x o dB (L=1, c1=0.5)",
    ),
    (
        "trivial-zero",
        "scalar multiplicative: dx = -x dt + 0.3 x dB with h=0; equilibrium is 0",
    ),
    (
        "gbm-ito",
        "scalar multiplicative: dx = -x dt + 0.5 x dB (Ito); top exponent -1.125",
    ),
    (
        "unstable-ou",
        "scalar additive with A = +1: deliberately violates the declared decay; for failure demos",
    ),
];

pub fn preset_catalog() -> String {
    PRESETS
        .iter()
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Look up a built-in system by name.
pub fn preset(name: &str) -> Result<SystemSpec> {
    let spec = match name {
        "scalar-ou" => SystemSpec::AdditiveLipschitz {
            a: Mat::scalar(-1.0),
            f: DriftFn::zero(1),
            sigma: Mat::scalar(1.0),
            lambda: 1.0,
            c: 1.0,
            lipschitz: 0.0,
        },
        "remark5" => SystemSpec::AdditiveLipschitz {
            a: Mat::from_rows(&[vec![0.0, -2.0], vec![3.0, -1.0]])?,
            f: DriftFn::zero(2),
            sigma: Mat::identity(2),
            lambda: 0.5,
            c: 3.0 * (6.0f64 / 23.0).sqrt(),
            lipschitz: 0.0,
        },
        "lipschitz-sine" => SystemSpec::AdditiveLipschitz {
            a: Mat::scalar(-1.0),
            f: DriftFn::parse(&["0.25*sin(x1)"])?,
            sigma: Mat::scalar(0.3),
            lambda: 1.0,
            c: 1.0,
            lipschitz: 0.25,
        },
        "dissipative-cubic" => SystemSpec::AdditiveDissipative {
            g: DriftFn::parse(&["-x1 - x1^3"])?,
            sigma: Mat::scalar(0.1),
            dissipativity: 1.0,
            growth_a: 2.0,
            growth_b: 1.0,
            growth_p: 3.0,
        },
        "gbm-strat" => SystemSpec::StratonovichDissipative {
            g: DriftFn::parse(&["-x1"])?,
            c_k: vec![0.5],
            dissipativity: 1.0,
        },
        "trivial-zero" => SystemSpec::MultiplicativeLipschitz {
            a: Mat::scalar(-1.0),
            h: DriftFn::zero(1),
            sigma_k: vec![Mat::scalar(0.3)],
            lambda: 1.0,
            rbar_l1: 1.2,
            lipschitz: 0.0,
        },
        "gbm-ito" => SystemSpec::MultiplicativeLipschitz {
            a: Mat::scalar(-1.0),
            h: DriftFn::zero(1),
            sigma_k: vec![Mat::scalar(0.5)],
            lambda: 1.0,
            rbar_l1: 1.1,
            lipschitz: 0.0,
        },
        "unstable-ou" => SystemSpec::AdditiveLipschitz {
            a: Mat::scalar(1.0),
            f: DriftFn::zero(1),
            sigma: Mat::scalar(1.0),
            lambda: 1.0,
            c: 1.0,
            lipschitz: 0.0,
        },
        _ => {
            return Err(Error::UnknownPreset {
                name: name.into(),
                catalog: preset_catalog(),
            })
        }
    };
    Ok(spec)
}
