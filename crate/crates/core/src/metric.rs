//! Metric definitions: Riemannian, Randers and free-form expression metrics
//! on a single coordinate chart, loaded from TOML definition files.
//!
//! File layout (all expressions use the [`crate::expr`] grammar):
//!
//! ```toml
//! name = "funk-disk"
//! dim = 2
//! kind = "randers"          # "riemannian" | "randers" | "expression"
//! notes = "free text"       # optional
//!
//! [domain]                  # sampling box in x-space
//! min = [-0.6, -0.6]
//! max = [0.6, 0.6]
//!
//! [expression]              # kind = "expression"
//! F = "sqrt(y1^2 + y2^2)"
//!
//! [riemannian]              # kind = "riemannian"; full symmetric matrix in x only
//! a = [["1", "0"], ["0", "1 + x1^2"]]
//!
//! [randers]                 # kind = "randers"; F = sqrt(a_ij y^i y^j) + b_i y^i
//! b = ["0.3", "0"]
//! [randers.alpha]
//! a = [["1", "0"], ["0", "1"]]
//! ```
//!
//! Shipped metrics and the classes they are expected to fall in (`T` holds
//! at every sample, `F` fails somewhere):
//!
//! | metric               | dim | riem. | C-red. | P-red. | gen. P | Berwald | Landsberg | weakly L. | stretch | scalar K |
//! |----------------------|-----|-------|--------|--------|--------|---------|-----------|-----------|---------|----------|
//! | euclidean2           | 2   | T     | T      | T      | T      | T       | T         | T         | T       | T        |
//! | euclidean3           | 3   | T     | T      | T      | T      | T       | T         | T         | T       | T        |
//! | ellipsoid-riemannian | 3   | T     | T      | T      | T      | T       | T         | T         | T       | F        |
//! | sphere-projective    | 3   | T     | T      | T      | T      | T       | T         | T         | T       | T        |
//! | randers-const-beta   | 3   | F     | T      | T      | T      | F       | F         | F         | F       | F        |
//! | funk-disk            | 2   | F     | T      | T      | T      | F       | F         | F         | F       | T        |
//! | quartic-minkowski    | 3   | F     | F      | T      | T      | T       | T         | T         | T       | T        |
//!
//! In dimension 2 the Matsumoto torsion vanishes identically and every
//! metric has scalar flag curvature. The quartic norm is locally Minkowski,
//! so its spray and all its Landsberg-type tensors vanish.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::expr::{self, Expr, ExprError};
use crate::jet::{seed_variables, Jet, JetError};
use crate::linalg::symmetric_eigenvalues;

/// Reject sample points whose fundamental form has eigenvalue ratio below this.
pub const CONVEXITY_RATIO_FLOOR: f64 = 1e-3;

/// Abort sampling when more than this fraction of candidates is rejected.
pub const MAX_REJECTION_RATE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("{field}: expected {expected} entries, found {got}")]
    Dimension {
        field: String,
        expected: usize,
        got: usize,
    },
    #[error("{line}:{column}: in {field}: {source}")]
    Expression {
        field: String,
        line: usize,
        column: usize,
        #[source]
        source: ExprError,
    },
    #[error("riemannian matrix is not symmetric: a[{i}][{j}] != a[{j}][{i}]")]
    Asymmetric { i: usize, j: usize },
    #[error("Randers bound violated: ||beta||_alpha = {norm:.6} >= 1 at x = {x:?}")]
    RandersBound { norm: f64, x: Vec<f64> },
    #[error("alpha is not positive definite at x = {x:?}")]
    AlphaNotPositive { x: Vec<f64> },
    #[error("point x = {x:?} lies outside the domain box")]
    OutsideDomain { x: Vec<f64> },
    #[error("F = {value} is not positive at the evaluation point")]
    NonPositive { value: f64 },
    #[error("point has dimension {got}, metric has dimension {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] ExprError),
    #[error("sampling rejected {rejected} of {attempts} candidates (accepted {accepted})")]
    TooManyRejections {
        accepted: usize,
        rejected: usize,
        attempts: usize,
    },
    #[error("unknown metric {0:?}")]
    Unknown(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned sampling box in x-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Domain {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Domain {
            min: vec![-half_width; dim],
            max: vec![half_width; dim],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.min.len()
            && x.iter()
                .zip(self.min.iter().zip(&self.max))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.min.iter().copied().zip(self.max.iter().copied()).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.min.len();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { self.max[i] } else { self.min[i] })
                    .collect()
            })
            .collect()
    }
}

/// Point of the slit tangent bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EvalPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        EvalPoint { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Parses the command-line form `"x1,..,xn;y1,..,yn"`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let (xs, ys) = text
            .split_once(';')
            .ok_or_else(|| format!("point {text:?} must look like \"x1,..,xn;y1,..,yn\""))?;
        let parse_list = |s: &str| -> Result<Vec<f64>, String> {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
                .collect()
        };
        let (x, y) = (parse_list(xs)?, parse_list(ys)?);
        if x.len() != y.len() {
            return Err(format!("x has {} entries but y has {}", x.len(), y.len()));
        }
        Ok(EvalPoint { x, y })
    }
}

impl fmt::Display for EvalPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "{};{}", join(&self.x), join(&self.y))
    }
}

#[derive(Debug, Clone)]
pub enum MetricKind {
    Riemannian { a: Vec<Vec<Expr>> },
    Randers { a: Vec<Vec<Expr>>, b: Vec<Expr> },
    Expression { f: Expr },
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Riemannian { .. } => "riemannian",
            MetricKind::Randers { .. } => "randers",
            MetricKind::Expression { .. } => "expression",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricSpec {
    pub name: String,
    pub dim: usize,
    pub kind: MetricKind,
    pub domain: Domain,
    pub notes: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    dim: usize,
    kind: String,
    #[serde(default)]
    notes: String,
    domain: Domain,
    expression: Option<RawExpression>,
    riemannian: Option<RawRiemannian>,
    randers: Option<RawRanders>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpression {
    #[serde(rename = "F")]
    f: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRiemannian {
    a: Vec<Vec<Spanned<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRanders {
    alpha: RawRiemannian,
    b: Vec<Spanned<String>>,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}

struct SourceContext<'a> {
    text: &'a str,
}

impl SourceContext<'_> {
    fn expression(
        &self,
        field: &str,
        value: &Spanned<String>,
        dim: usize,
        position_only: bool,
    ) -> Result<Expr, MetricError> {
        let parsed = expr::parse_str(value.get_ref()).and_then(|e| {
            if position_only {
                e.validate_position_only(dim)?;
            } else {
                e.validate(dim)?;
            }
            Ok(e)
        });
        parsed.map_err(|source| {
            // Offset into the file: skip the opening quote of the TOML string.
            let start = value.span().start;
            let offset = if self.text[start..].starts_with('"') {
                start + 1 + source.span.begin
            } else {
                start
            };
            let (line, column) = line_column(self.text, offset);
            MetricError::Expression {
                field: field.to_string(),
                line,
                column,
                source,
            }
        })
    }

    fn matrix(
        &self,
        field: &str,
        raw: &RawRiemannian,
        dim: usize,
    ) -> Result<Vec<Vec<Expr>>, MetricError> {
        if raw.a.len() != dim {
            return Err(MetricError::Dimension {
                field: field.to_string(),
                expected: dim,
                got: raw.a.len(),
            });
        }
        raw.a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != dim {
                    return Err(MetricError::Dimension {
                        field: format!("{field}[{i}]"),
                        expected: dim,
                        got: row.len(),
                    });
                }
                row.iter()
                    .enumerate()
                    .map(|(j, s)| self.expression(&format!("{field}[{i}][{j}]"), s, dim, true))
                    .collect()
            })
            .collect()
    }
}

fn jet_of_matrix(a: &[Vec<Expr>], env: &[Jet]) -> Result<Vec<Vec<Jet>>, ExprError> {
    a.iter()
        .map(|row| row.iter().map(|e| e.eval_jet(env)).collect())
        .collect()
}

fn quadratic_form_jet(a: &[Vec<Expr>], env: &[Jet]) -> Result<Jet, MetricError> {
    let n = a.len();
    let aj = jet_of_matrix(a, env)?;
    let ys = &env[n..];
    let mut acc: Option<Jet> = None;
    for i in 0..n {
        for j in i..n {
            let weight = if i == j { 1.0 } else { 2.0 };
            let term = (&aj[i][j] * &(&ys[i] * &ys[j])).scale(weight);
            acc = Some(match acc {
                Some(s) => s + term,
                None => term,
            });
        }
    }
    Ok(acc.expect("dim >= 1"))
}

impl MetricSpec {
    /// Parses and validates a metric definition file.
    pub fn load(text: &str) -> Result<Self, MetricError> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_column(text, s.start))
                .unwrap_or((1, 1));
            MetricError::Syntax {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let ctx = SourceContext { text };
        let dim = raw.dim;
        if dim < 2 {
            return Err(MetricError::Schema(format!("dim must be at least 2, got {dim}")));
        }
        for (field, v) in [("domain.min", &raw.domain.min), ("domain.max", &raw.domain.max)] {
            if v.len() != dim {
                return Err(MetricError::Dimension {
                    field: field.to_string(),
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        if raw.domain.min.iter().zip(&raw.domain.max).any(|(a, b)| !(a <= b)) {
            return Err(MetricError::Schema("domain.min must not exceed domain.max".into()));
        }
        let present = [
            ("expression", raw.expression.is_some()),
            ("riemannian", raw.riemannian.is_some()),
            ("randers", raw.randers.is_some()),
        ];
        for (section, is_present) in present {
            if is_present && section != raw.kind {
                return Err(MetricError::Schema(format!(
                    "section [{section}] does not match kind = {:?}",
                    raw.kind
                )));
            }
        }
        let kind = match raw.kind.as_str() {
            "expression" => {
                let payload = raw
                    .expression
                    .ok_or_else(|| MetricError::Schema("missing [expression] section".into()))?;
                MetricKind::Expression {
                    f: ctx.expression("expression.F", &payload.f, dim, false)?,
                }
            }
            "riemannian" => {
                let payload = raw
                    .riemannian
                    .ok_or_else(|| MetricError::Schema("missing [riemannian] section".into()))?;
                MetricKind::Riemannian {
                    a: ctx.matrix("riemannian.a", &payload, dim)?,
                }
            }
            "randers" => {
                let payload = raw
                    .randers
                    .ok_or_else(|| MetricError::Schema("missing [randers] section".into()))?;
                let a = ctx.matrix("randers.alpha.a", &payload.alpha, dim)?;
                if payload.b.len() != dim {
                    return Err(MetricError::Dimension {
                        field: "randers.b".into(),
                        expected: dim,
                        got: payload.b.len(),
                    });
                }
                let b = payload
                    .b
                    .iter()
                    .enumerate()
                    .map(|(i, s)| ctx.expression(&format!("randers.b[{i}]"), s, dim, true))
                    .collect::<Result<_, _>>()?;
                MetricKind::Randers { a, b }
            }
            other => {
                return Err(MetricError::Schema(format!(
                    "kind must be riemannian, randers or expression, got {other:?}"
                )))
            }
        };
        let spec = MetricSpec {
            name: raw.name,
            dim,
            kind,
            domain: raw.domain,
            notes: raw.notes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load(&text)
    }

    /// Expression metric from source text.
    pub fn expression(
        name: &str,
        dim: usize,
        src: &str,
        domain: Domain,
    ) -> Result<Self, MetricError> {
        let f = expr::parse_str(src)?;
        f.validate(dim)?;
        let spec = MetricSpec {
            name: name.to_string(),
            dim,
            kind: MetricKind::Expression { f },
            domain,
            notes: String::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn riemannian(name: &str, a: &[&[&str]], domain: Domain) -> Result<Self, MetricError> {
        let dim = a.len();
        let spec = MetricSpec {
            name: name.to_string(),
            dim,
            kind: MetricKind::Riemannian {
                a: parse_matrix(a, dim)?,
            },
            domain,
            notes: String::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn randers(
        name: &str,
        a: &[&[&str]],
        b: &[&str],
        domain: Domain,
    ) -> Result<Self, MetricError> {
        let dim = a.len();
        if b.len() != dim {
            return Err(MetricError::Dimension {
                field: "randers.b".into(),
                expected: dim,
                got: b.len(),
            });
        }
        let b = b
            .iter()
            .map(|s| {
                let e = expr::parse_str(s)?;
                e.validate_position_only(dim)?;
                Ok(e)
            })
            .collect::<Result<_, MetricError>>()?;
        let spec = MetricSpec {
            name: name.to_string(),
            dim,
            kind: MetricKind::Randers {
                a: parse_matrix(a, dim)?,
                b,
            },
            domain,
            notes: String::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks that need evaluation: symmetric coefficient
    /// matrices, positive definite `alpha` and the Randers bound.
    fn validate(&self) -> Result<(), MetricError> {
        if self.domain.min.len() != self.dim || self.domain.max.len() != self.dim {
            return Err(MetricError::Dimension {
                field: "domain".into(),
                expected: self.dim,
                got: self.domain.min.len(),
            });
        }
        let probes = self.probe_points();
        let matrix = match &self.kind {
            MetricKind::Riemannian { a } | MetricKind::Randers { a, .. } => a,
            MetricKind::Expression { .. } => return Ok(()),
        };
        for x in &probes {
            let a = eval_matrix(matrix, x)?;
            let n = self.dim;
            for i in 0..n {
                for j in i + 1..n {
                    let (u, v) = (a[i * n + j], a[j * n + i]);
                    if (u - v).abs() > 1e-12 * (1.0 + u.abs().max(v.abs())) {
                        return Err(MetricError::Asymmetric { i, j });
                    }
                }
            }
            if symmetric_eigenvalues(&a, n)[0] <= 0.0 {
                return Err(MetricError::AlphaNotPositive { x: x.clone() });
            }
            if let Some(norm) = self.beta_norm(x)? {
                if norm >= 1.0 {
                    return Err(MetricError::RandersBound {
                        norm,
                        x: x.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Domain corners, center and a fixed pseudo-random cloud.
    fn probe_points(&self) -> Vec<Vec<f64>> {
        let mut pts = self.domain.corners();
        pts.push(self.domain.center());
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..64 {
            pts.push(
                self.domain
                    .bounds()
                    .iter()
                    .map(|&(a, b)| if a < b { rng.random_range(a..=b) } else { a })
                    .collect(),
            );
        }
        pts
    }

    /// `||beta||_alpha` at `x` for Randers metrics.
    pub fn beta_norm(&self, x: &[f64]) -> Result<Option<f64>, MetricError> {
        let MetricKind::Randers { a, b } = &self.kind else {
            return Ok(None);
        };
        let n = self.dim;
        let am = eval_matrix(a, x)?;
        let bv = b
            .iter()
            .map(|e| e.eval_f64(x, &vec![0.0; n]))
            .collect::<Result<Vec<_>, _>>()?;
        let Ok(inv) = crate::linalg::inverse(&am, n) else {
            return Err(MetricError::AlphaNotPositive { x: x.to_vec() });
        };
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += inv[i * n + j] * bv[i] * bv[j];
            }
        }
        Ok(Some(s.max(0.0).sqrt()))
    }

    fn check_point(&self, p: &EvalPoint) -> Result<(), MetricError> {
        if p.x.len() != self.dim || p.y.len() != self.dim {
            return Err(MetricError::PointDimension {
                expected: self.dim,
                got: p.x.len().max(p.y.len()),
            });
        }
        if p.y.iter().all(|&v| v == 0.0) {
            return Err(JetError::ZeroDirection.into());
        }
        Ok(())
    }

    /// Jet of `F` at `p` truncated at `order`.
    pub fn f_jet(&self, p: &EvalPoint, order: usize) -> Result<Jet, MetricError> {
        self.check_point(p)?;
        let env = seed_variables(&p.x, &p.y, order)?;
        let f = match &self.kind {
            MetricKind::Expression { f } => f.eval_jet(&env)?,
            MetricKind::Riemannian { a } => quadratic_form_jet(a, &env)?.sqrt()?,
            MetricKind::Randers { a, b } => {
                let alpha = quadratic_form_jet(a, &env)?.sqrt()?;
                let n = self.dim;
                let mut beta = Jet::zero(env[0].layout(), order);
                for (i, bi) in b.iter().enumerate() {
                    beta = beta + bi.eval_jet(&env)? * &env[n + i];
                }
                alpha + beta
            }
        };
        if !(f.value() > 0.0) {
            return Err(MetricError::NonPositive { value: f.value() });
        }
        Ok(f)
    }

    /// Jets of `F` and `F^2`; Riemannian metrics get the exact quadratic form.
    pub fn f_and_f2_jets(&self, p: &EvalPoint, order: usize) -> Result<(Jet, Jet), MetricError> {
        if let MetricKind::Riemannian { a } = &self.kind {
            self.check_point(p)?;
            let env = seed_variables(&p.x, &p.y, order)?;
            let f2 = quadratic_form_jet(a, &env)?;
            if !(f2.value() > 0.0) {
                return Err(MetricError::NonPositive { value: f2.value() });
            }
            let f = f2.sqrt()?;
            return Ok((f, f2));
        }
        let f = self.f_jet(p, order)?;
        let f2 = &f * &f;
        Ok((f, f2))
    }

    /// Plain floating-point `F(x, y)`; shares only the expression trees with
    /// the jet path.
    pub fn f_value(&self, x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
        let quad = |a: &[Vec<Expr>]| -> Result<f64, MetricError> {
            let n = self.dim;
            let am = eval_matrix(a, x)?;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += am[i * n + j] * y[i] * y[j];
                }
            }
            if !(s > 0.0) {
                return Err(MetricError::NonPositive { value: s });
            }
            Ok(s.sqrt())
        };
        let f = match &self.kind {
            MetricKind::Expression { f } => f.eval_f64(x, y)?,
            MetricKind::Riemannian { a } => quad(a)?,
            MetricKind::Randers { a, b } => {
                let mut beta = 0.0;
                for (i, bi) in b.iter().enumerate() {
                    beta += bi.eval_f64(x, y)? * y[i];
                }
                quad(a)? + beta
            }
        };
        Ok(f)
    }

    /// Coefficients `a_ij(x)` of a Riemannian metric, row-major.
    pub fn riemannian_matrix(&self, x: &[f64]) -> Option<Result<Vec<f64>, MetricError>> {
        match &self.kind {
            MetricKind::Riemannian { a } => Some(eval_matrix(a, x).map_err(Into::into)),
            _ => None,
        }
    }

    /// Smallest and largest eigenvalue of `g_ij = 1/2 d^2 F^2 / dy^i dy^j`.
    pub fn check_strong_convexity(&self, p: &EvalPoint) -> Result<ConvexityReport, MetricError> {
        let (_, f2) = self.f_and_f2_jets(p, 2)?;
        let n = self.dim;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = 0.5 * f2.partial_vars(&[n + i, n + j])?;
            }
        }
        let ev = symmetric_eigenvalues(&g, n);
        let (min, max) = (ev[0], ev[n - 1]);
        Ok(ConvexityReport {
            point: p.clone(),
            min_eigenvalue: min,
            max_eigenvalue: max,
            positive_definite: min > 0.0,
        })
    }

    /// Regularity test used by the sampler.
    pub fn is_regular(&self, p: &EvalPoint) -> bool {
        if !self.domain.contains(&p.x) {
            return false;
        }
        if let Ok(Some(norm)) = self.beta_norm(&p.x) {
            if norm >= 1.0 {
                return false;
            }
        }
        match self.check_strong_convexity(p) {
            Ok(r) => r.positive_definite && r.min_eigenvalue >= CONVEXITY_RATIO_FLOOR * r.max_eigenvalue,
            Err(_) => false,
        }
    }

    /// Deterministic pseudo-random sample of regular points.
    ///
    /// `x` is uniform in the domain box; `y` is uniform on the unit sphere
    /// scaled by a uniform factor in `[0.5, 2]`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleSet, MetricError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bounds = self.domain.bounds();
        let max_attempts = ((count as f64) / (1.0 - MAX_REJECTION_RATE)).ceil() as usize;
        let mut points = Vec::with_capacity(count);
        let mut attempts = 0;
        while points.len() < count {
            if attempts >= max_attempts.max(count) {
                return Err(MetricError::TooManyRejections {
                    accepted: points.len(),
                    rejected: attempts - points.len(),
                    attempts,
                });
            }
            attempts += 1;
            let x: Vec<f64> = bounds
                .iter()
                .map(|&(a, b)| if a < b { rng.random_range(a..=b) } else { a })
                .collect();
            let y = random_direction(&mut rng, self.dim);
            let p = EvalPoint { x, y };
            if self.is_regular(&p) {
                points.push(p);
            }
        }
        Ok(SampleSet {
            rejections: attempts - count,
            points,
            seed,
            count,
        })
    }
}

fn parse_matrix(a: &[&[&str]], dim: usize) -> Result<Vec<Vec<Expr>>, MetricError> {
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != dim {
                return Err(MetricError::Dimension {
                    field: format!("a[{i}]"),
                    expected: dim,
                    got: row.len(),
                });
            }
            row.iter()
                .map(|s| {
                    let e = expr::parse_str(s)?;
                    e.validate_position_only(dim)?;
                    Ok(e)
                })
                .collect()
        })
        .collect()
}

fn eval_matrix(a: &[Vec<Expr>], x: &[f64]) -> Result<Vec<f64>, ExprError> {
    let zeros = vec![0.0; x.len()];
    let mut out = Vec::with_capacity(a.len() * a.len());
    for row in a {
        for e in row {
            out.push(e.eval_f64(x, &zeros)?);
        }
    }
    Ok(out)
}

/// Unit-sphere direction scaled by a uniform factor in `[0.5, 2]`.
pub fn random_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-8 {
            let scale = rng.random_range(0.5..=2.0) / norm;
            return v.into_iter().map(|c| c * scale).collect();
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub point: EvalPoint,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub positive_definite: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSet {
    pub points: Vec<EvalPoint>,
    pub seed: u64,
    pub count: usize,
    pub rejections: usize,
}

const BUILTIN: &[(&str, &str)] = &[
    ("euclidean2", include_str!("../metrics/euclidean2.toml")),
    ("euclidean3", include_str!("../metrics/euclidean3.toml")),
    ("ellipsoid-riemannian", include_str!("../metrics/ellipsoid-riemannian.toml")),
    ("sphere-projective", include_str!("../metrics/sphere-projective.toml")),
    ("randers-const-beta", include_str!("../metrics/randers-const-beta.toml")),
    ("funk-disk", include_str!("../metrics/funk-disk.toml")),
    ("quartic-minkowski", include_str!("../metrics/quartic-minkowski.toml")),
];

/// Names of the metrics shipped with the library.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<MetricSpec, MetricError> {
    let src = builtin_source(name).ok_or_else(|| MetricError::Unknown(name.to_string()))?;
    MetricSpec::load(src)
}

/// Random regular expression metric used as an adversarial test input:
/// a position-dependent quadratic norm, a small one-form and a small
/// position-dependent quartic norm.
pub fn random_expression_metric(seed: u64, dim: usize) -> Result<MetricSpec, MetricError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = |scale: f64| (rng.random_range(-1.0..1.0) * scale * 1000.0).round() / 1000.0;
    let x = |i: usize| format!("x{}", i + 1);
    let y = |i: usize| format!("y{}", i + 1);

    let mut quad = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let mut c = if i == j { format!("(1 + {} * {}^2", coef(0.4).abs(), x((i + 1) % dim)) } else {
                format!("({}", coef(0.15))
            };
            let k = (i + j) % dim;
            c.push_str(&format!(" + {} * {})", coef(0.2), x(k)));
            let w = if i == j { "" } else { "2 * " };
            quad.push(format!("{w}{c} * {} * {}", y(i), y(j)));
        }
    }
    let beta: Vec<String> = (0..dim)
        .map(|i| format!("({} + {} * {}) * {}", coef(0.1), coef(0.1), x((i + 2) % dim), y(i)))
        .collect();
    let quartic: Vec<String> = (0..dim)
        .map(|i| format!("(1 + {} * {}^2) * {}^4", coef(0.5).abs(), x(i), y(i)))
        .collect();
    let eps = 0.1 + coef(0.1).abs();
    let src = format!(
        "sqrt({}) + {} + {eps} * ({})^(1/4)",
        quad.join(" + "),
        beta.join(" + "),
        quartic.join(" + ")
    );
    let mut spec = MetricSpec::expression(&format!("random-{seed}"), dim, &src, Domain::cube(dim, 0.5))?;
    spec.notes = "randomly generated regular expression metric".into();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn euclid2() -> MetricSpec {
        builtin("euclidean2").unwrap()
    }

    #[test]
    fn all_builtins_load() {
        for name in builtin_names() {
            let spec = builtin(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(spec.name, name);
        }
    }

    #[test]
    fn euclidean_file_loads_as_expression() {
        let spec = euclid2();
        assert_eq!(spec.kind.name(), "expression");
        assert_eq!(spec.dim, 2);
        let f = spec.f_jet(&EvalPoint::new(vec![0.0, 0.0], vec![3.0, 4.0]), 2).unwrap();
        assert_relative_eq!(f.value(), 5.0, epsilon = 1e-15);
    }

    const RANDERS_2D: &str = r#"
name = "randers-2d"
dim = 2
kind = "randers"
[domain]
min = [-1.0, -1.0]
max = [1.0, 1.0]
[randers]
b = ["0.3", "0"]
[randers.alpha]
a = [["1", "0"], ["0", "1"]]
"#;

    #[test]
    fn randers_bound_is_enforced() {
        let spec = MetricSpec::load(RANDERS_2D).unwrap();
        assert_relative_eq!(spec.beta_norm(&[0.0, 0.0]).unwrap().unwrap(), 0.3, epsilon = 1e-15);
        let f = spec.f_jet(&EvalPoint::new(vec![0.0, 0.0], vec![1.0, 0.0]), 2).unwrap();
        assert_relative_eq!(f.value(), 1.3, epsilon = 1e-15);
        let bad = RANDERS_2D.replace("\"0.3\"", "\"1.2\"");
        match MetricSpec::load(&bad) {
            Err(MetricError::RandersBound { norm, .. }) => assert_relative_eq!(norm, 1.2),
            other => panic!("expected bound violation, got {other:?}"),
        }
    }

    #[test]
    fn riemannian_value() {
        let spec = MetricSpec::riemannian(
            "diag",
            &[&["1", "0"], &["0", "x1^2 + 1"]],
            Domain::cube(2, 1.0),
        )
        .unwrap();
        let f = spec.f_jet(&EvalPoint::new(vec![1.0, 0.0], vec![0.0, 1.0]), 2).unwrap();
        assert_relative_eq!(f.value(), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn riemannian_and_expression_encodings_agree() {
        let riem = MetricSpec::riemannian("e", &[&["1", "0"], &["0", "1"]], Domain::cube(2, 1.0)).unwrap();
        let expr = euclid2();
        let p = EvalPoint::new(vec![0.2, -0.4], vec![0.7, -1.1]);
        let (a, b) = (riem.f_jet(&p, 6).unwrap(), expr.f_jet(&p, 6).unwrap());
        for (u, v) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn error_locations() {
        let text = "name = \"bad\"\ndim = 2\nkind = \"expression\"\n[domain]\nmin = [0.0, 0.0]\nmax = [1.0, 1.0]\n[expression]\nF = \"sqrt(y1^2 + $)\"\n";
        match MetricSpec::load(text) {
            Err(MetricError::Expression { line, column, .. }) => assert_eq!((line, column), (8, 18)),
            other => panic!("{other:?}"),
        }
        let text = "name = \"bad\"\ndim = 2\nkind = \"expression\"\n[domain]\nmin = [0.0, 0.0]\nmax = [1.0]\n[expression]\nF = \"y1\"\n";
        assert!(matches!(MetricSpec::load(text), Err(MetricError::Dimension { .. })));
        let text = "name = \"bad\"\ndim = 2\nkind = \"nope\"\n[domain]\nmin = [0.0, 0.0]\nmax = [1.0, 1.0]\n";
        assert!(matches!(MetricSpec::load(text), Err(MetricError::Schema(_))));
        let text = "name = \"bad\"\ndim = 2\nkind = \"expression\"\n[domain]\nmin = [0.0, 0.0]\nmax = [1.0, 1.0]\n[expression]\nF = \"y1\"\ncolour = 3\n";
        assert!(matches!(MetricSpec::load(text), Err(MetricError::Syntax { .. })));
        let asym = MetricSpec::riemannian("a", &[&["1", "x1"], &["0", "1"]], Domain::cube(2, 1.0));
        assert!(matches!(asym, Err(MetricError::Asymmetric { .. })));
        let ydep = MetricSpec::riemannian("a", &[&["1", "0"], &["0", "y1"]], Domain::cube(2, 1.0));
        assert!(ydep.is_err());
    }

    #[test]
    fn strong_convexity() {
        let e = euclid2().check_strong_convexity(&EvalPoint::new(vec![0.0, 0.0], vec![0.3, 1.0])).unwrap();
        assert_relative_eq!(e.min_eigenvalue, 1.0, epsilon = 1e-14);
        let r = MetricSpec::load(RANDERS_2D)
            .unwrap()
            .check_strong_convexity(&EvalPoint::new(vec![0.0, 0.0], vec![1.0, 0.0]))
            .unwrap();
        assert!(r.positive_definite);
    }

    #[test]
    fn quartic_convexity_matches_finite_differences() {
        // Independent check: brute-force 2x2 Hessian of F^2/2 by central
        // differences and its closed-form eigenvalues.
        let spec = MetricSpec::expression(
            "q",
            2,
            "(y1^4 + y2^4)^(1/4)",
            Domain::cube(2, 1.0),
        )
        .unwrap();
        let half_f2 = |y: [f64; 2]| {
            let f = (y[0].powi(4) + y[1].powi(4)).powf(0.25);
            0.5 * f * f
        };
        let h = 1e-4;
        let y = [1.0, 1.0];
        let mut hess = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                let mut pp = y;
                let mut pm = y;
                let mut mp = y;
                let mut mm = y;
                pp[i] += h;
                pp[j] += h;
                pm[i] += h;
                pm[j] -= h;
                mp[i] -= h;
                mp[j] += h;
                mm[i] -= h;
                mm[j] -= h;
                hess[i * 2 + j] = (half_f2(pp) - half_f2(pm) - half_f2(mp) + half_f2(mm)) / (4.0 * h * h);
            }
        }
        let (a, b, d) = (hess[0], hess[1], hess[3]);
        let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
        let fd_min = 0.5 * (a + d) - disc;
        let report = spec
            .check_strong_convexity(&EvalPoint::new(vec![0.0, 0.0], y.to_vec()))
            .unwrap();
        assert!(fd_min > 0.0);
        assert_relative_eq!(report.min_eigenvalue, fd_min, max_relative = 1e-6);
    }

    #[test]
    fn sampling_is_deterministic_and_regular() {
        let spec = euclid2();
        let a = spec.sample(10, 1).unwrap();
        assert_eq!(a.points.len(), 10);
        assert_eq!(a.rejections, 0);
        let b = spec.sample(10, 1).unwrap();
        assert_eq!(a.points, b.points);
        for p in &a.points {
            let norm = p.y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((0.5..=2.0).contains(&norm));
        }
        let funk = builtin("funk-disk").unwrap();
        for p in funk.sample(40, 3).unwrap().points {
            assert!(p.x.iter().map(|v| v * v).sum::<f64>() < 1.0);
        }
    }

    #[test]
    fn hopeless_sampling_aborts() {
        // F = y1 is never strongly convex
        let spec = MetricSpec::expression("line", 2, "sqrt(y1^2)", Domain::cube(2, 1.0)).unwrap();
        assert!(matches!(spec.sample(5, 0), Err(MetricError::TooManyRejections { .. })));
    }

    #[test]
    fn point_syntax() {
        let p = EvalPoint::parse("0,0.5;1,-2").unwrap();
        assert_eq!(p.x, vec![0.0, 0.5]);
        assert_eq!(p.y, vec![1.0, -2.0]);
        assert_eq!(EvalPoint::parse(&p.to_string()).unwrap(), p);
        assert!(EvalPoint::parse("0,0;1").is_err());
        assert!(EvalPoint::parse("0,0").is_err());
    }

    #[test]
    fn random_metrics_are_regular() {
        for seed in 0..5 {
            let spec = random_expression_metric(seed, 3).unwrap();
            let s = spec.sample(10, seed).unwrap();
            assert_eq!(s.points.len(), 10);
            let MetricKind::Expression { f } = &spec.kind else { unreachable!() };
            assert!(expr::validate_homogeneity(f, &spec.domain.bounds(), 50, seed).passed);
        }
    }
}
