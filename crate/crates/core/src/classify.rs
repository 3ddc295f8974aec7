//! Sample-based classification of metrics and the generalized
//! P-reducibility fit `M̄ = λ M`.
//!
//! A class verdict means "numerically true at every sampled point": the
//! worst scale-free residual over the sample must not exceed `tau`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calculus::{
    evaluate_points, flow_derivative, CalcError, Geometry, Quantity, Tensor, FLOW_STEP,
};
use crate::jet::DEFAULT_ORDER;
use crate::metric::{EvalPoint, MetricSpec, SampleSet};

/// Fraction of failed points above which classification aborts.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Minimum number of points with a determinate `λ` for the curvature
/// condition to be considered evaluable.
pub const MIN_DETERMINATE_POINTS: usize = 5;

/// Numerical settings shared by classification and verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Settings {
    /// Jet truncation order.
    pub order: usize,
    /// Verdict threshold on scale-free residuals.
    pub tau: f64,
    /// Threshold below which `|M| F` counts as zero for the `λ` fit.
    pub tau_deg: f64,
    /// Tolerance for comparisons against the finite-difference oracle.
    pub fd_tol: f64,
    /// Step along the geodesic flow for flow derivatives.
    pub flow_step: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            order: DEFAULT_ORDER,
            tau: 1e-7,
            tau_deg: 1e-6,
            fd_tol: 1e-4,
            flow_step: FLOW_STEP,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("{failed} of {total} sample points failed to evaluate (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("no sample points")]
    Empty,
}

/// Fitted generalized P-reducibility data at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpFit {
    /// `λ = <M̄, M> / <M, M>`; `None` where `|M| F <= tau_deg`.
    pub lambda: Option<f64>,
    /// `a_i = (J_i - λ I_i) / (n + 1)`, with `λ = 0` where it is
    /// indeterminate.
    pub a: Vec<f64>,
    /// `|M̄ - λ M| / (|M̄| + |λ| |M|)`, or the scale-free `|M̄|` where `λ`
    /// is indeterminate.
    pub residual: f64,
    /// `|a_i y^i|` relative to `|a| F`.
    pub a_dot_y: f64,
    /// `|M| F`.
    pub m_norm: f64,
}

impl GpFit {
    /// `λ` with the indeterminate case read as zero.
    pub fn lambda_or_zero(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }
}

/// Fits `M̄ = λ M` at the point of `geo`.
pub fn fit_gp(geo: &mut Geometry<'_>, tau_deg: f64) -> Result<GpFit, CalcError> {
    let n = geo.dim();
    let f = geo.f();
    let g = geo.value(Quantity::Fundamental)?;
    let ginv = geo.value(Quantity::InverseFundamental)?;
    let m = geo.value(Quantity::Matsumoto)?;
    let mbar = geo.value(Quantity::PReducibility)?;
    let i = geo.value(Quantity::MeanCartan)?;
    let j = geo.value(Quantity::MeanLandsberg)?;
    let mm = m.g_inner(&m, &g, &ginv);
    let m_norm = mm.max(0.0).sqrt() * f;
    let (lambda, residual) = if m_norm > tau_deg {
        let lambda = mbar.g_inner(&m, &g, &ginv) / mm;
        let diff = mbar.sub(&m.scale(lambda)).g_norm(&g, &ginv);
        let scale = mbar.g_norm(&g, &ginv) + lambda.abs() * mm.sqrt();
        (Some(lambda), if scale > 0.0 { diff / scale } else { 0.0 })
    } else {
        (None, mbar.g_norm(&g, &ginv))
    };
    let lam = lambda.unwrap_or(0.0);
    let a: Vec<f64> = (0..n)
        .map(|k| (j.data[k] - lam * i.data[k]) / (n as f64 + 1.0))
        .collect();
    let ay: f64 = a.iter().zip(&geo.point().y).map(|(a, y)| a * y).sum();
    let a_t = Tensor {
        dim: n,
        slots: vec![crate::calculus::Slot::Lower],
        data: a.clone(),
    };
    let a_scale = a_t.g_norm(&g, &ginv) * f;
    Ok(GpFit {
        lambda,
        a,
        residual,
        a_dot_y: ay.abs() / a_scale.max(1.0),
        m_norm,
    })
}

/// Per-point measurements behind the verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub point: EvalPoint,
    pub f: f64,
    /// `|C| F`
    pub cartan: f64,
    /// `|M| F`
    pub matsumoto: f64,
    /// `|M̄|`
    pub p_reducibility: f64,
    /// `|L|`
    pub landsberg: f64,
    /// `|J|`
    pub mean_landsberg: f64,
    /// `|Σ|`
    pub stretch: f64,
    /// `|G^i_jkl| F`
    pub berwald: f64,
    /// Isotropic curvature value `K = R^m_m / ((n-1) F^2)`.
    pub k: f64,
    /// Residual of the isotropic fit.
    pub k_residual: f64,
    pub gp: GpFit,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn measure(geo: &mut Geometry<'_>, index: usize, tau_deg: f64) -> Result<PointReport, CalcError> {
    let sf = |geo: &mut Geometry<'_>, q| geo.norms(q).map(|n| n.scale_free);
    let fit = geo.scalar_curvature_fit()?;
    Ok(PointReport {
        index,
        point: geo.point().clone(),
        f: geo.f(),
        cartan: sf(geo, Quantity::Cartan)?,
        matsumoto: sf(geo, Quantity::Matsumoto)?,
        p_reducibility: sf(geo, Quantity::PReducibility)?,
        landsberg: sf(geo, Quantity::Landsberg)?,
        mean_landsberg: sf(geo, Quantity::MeanLandsberg)?,
        stretch: sf(geo, Quantity::Stretch)?,
        berwald: sf(geo, Quantity::BerwaldCurvature)?,
        k: fit.k,
        k_residual: fit.residual,
        gp: fit_gp(geo, tau_deg)?,
        warnings: geo.warnings(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub holds: bool,
    pub worst_residual: f64,
}

/// Class verdicts in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub riemannian: Verdict,
    pub c_reducible: Verdict,
    pub p_reducible: Verdict,
    pub gen_p_reducible: Verdict,
    pub berwald: Verdict,
    pub landsberg: Verdict,
    pub weakly_landsberg: Verdict,
    pub stretch: Verdict,
    pub scalar_flag_curvature: Verdict,
}

impl Verdicts {
    pub fn named(&self) -> [(&'static str, Verdict); 9] {
        [
            ("riemannian", self.riemannian),
            ("c_reducible", self.c_reducible),
            ("p_reducible", self.p_reducible),
            ("gen_p_reducible", self.gen_p_reducible),
            ("berwald", self.berwald),
            ("landsberg", self.landsberg),
            ("weakly_landsberg", self.weakly_landsberg),
            ("stretch", self.stretch),
            ("scalar_flag_curvature", self.scalar_flag_curvature),
        ]
    }

    pub fn get(&self, name: &str) -> Option<Verdict> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub point: EvalPoint,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub spec: String,
    pub dim: usize,
    pub seed: u64,
    pub samples: usize,
    pub rejections: usize,
    pub settings: Settings,
    pub verdicts: Verdicts,
    pub points: Vec<PointReport>,
    pub failures: Vec<PointFailure>,
    /// Violated implications between classes; any entry indicates a bug.
    pub internal_errors: Vec<String>,
}

fn verdict(points: &[PointReport], tau: f64, f: impl Fn(&PointReport) -> f64) -> Verdict {
    let worst = points.iter().map(f).fold(0.0, f64::max);
    Verdict {
        holds: worst <= tau,
        worst_residual: worst,
    }
}

/// Implications that every report must respect.
pub const IMPLICATIONS: [(&str, &str); 5] = [
    ("riemannian", "c_reducible"),
    ("c_reducible", "p_reducible"),
    ("berwald", "landsberg"),
    ("landsberg", "weakly_landsberg"),
    ("landsberg", "stretch"),
];

/// Evaluates every sample point and derives class verdicts.
pub fn classify_basic(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
) -> Result<ClassificationReport, ClassifyError> {
    if samples.points.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let indexed: Vec<(usize, EvalPoint)> = samples.points.iter().cloned().enumerate().collect();
    let results: Vec<_> = indexed
        .par_iter()
        .map(|(i, p)| {
            let mut geo = Geometry::new(spec, p, settings.order)?;
            measure(&mut geo, *i, settings.tau_deg)
        })
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for ((index, point), r) in indexed.into_iter().zip(results) {
        match r {
            Ok(p) => points.push(p),
            Err(e) => failures.push(PointFailure {
                index,
                point,
                error: e.to_string(),
            }),
        }
    }
    let total = samples.points.len();
    if failures.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(ClassifyError::TooManyFailures {
            failed: failures.len(),
            total,
            first: failures[0].error.clone(),
        });
    }
    let tau = settings.tau;
    let verdicts = Verdicts {
        riemannian: verdict(&points, tau, |p| p.cartan),
        c_reducible: verdict(&points, tau, |p| p.matsumoto),
        p_reducible: verdict(&points, tau, |p| p.p_reducibility),
        gen_p_reducible: verdict(&points, tau, |p| p.gp.residual),
        berwald: verdict(&points, tau, |p| p.berwald),
        landsberg: verdict(&points, tau, |p| p.landsberg),
        weakly_landsberg: verdict(&points, tau, |p| p.mean_landsberg),
        stretch: verdict(&points, tau, |p| p.stretch),
        scalar_flag_curvature: verdict(&points, tau, |p| p.k_residual),
    };
    let internal_errors = IMPLICATIONS
        .iter()
        .filter_map(|(a, b)| {
            let (va, vb) = (verdicts.get(a)?, verdicts.get(b)?);
            (va.holds && !vb.holds).then(|| {
                format!(
                    "{a} holds (worst {:.3e}) but {b} fails (worst {:.3e})",
                    va.worst_residual, vb.worst_residual
                )
            })
        })
        .collect();
    Ok(ClassificationReport {
        spec: spec.name.clone(),
        dim: spec.dim,
        seed: samples.seed,
        samples: total,
        rejections: samples.rejections,
        settings: *settings,
        verdicts,
        points,
        failures,
        internal_errors,
    })
}

/// Per-point data of the generalized P-reducibility fit.
pub fn fit_gp_data(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
) -> Vec<Result<GpFit, CalcError>> {
    evaluate_points(spec, &samples.points, settings.order, |geo| fit_gp(geo, settings.tau_deg))
}

/// `λ` at a point (zero where indeterminate), for flow differencing.
pub fn lambda_at(spec: &MetricSpec, p: &EvalPoint, settings: &Settings) -> Result<f64, CalcError> {
    let mut geo = Geometry::new(spec, p, Quantity::PReducibility.min_order())?;
    Ok(fit_gp(&mut geo, settings.tau_deg)?.lambda_or_zero())
}

/// `λ' = λ_{|l} y^l`, the derivative of the fitted `λ` along the geodesic
/// flow.
pub fn lambda_prime(spec: &MetricSpec, p: &EvalPoint, settings: &Settings) -> Result<f64, CalcError> {
    let d = flow_derivative(spec, p, settings.flow_step, |q| Ok(vec![lambda_at(spec, q, settings)?]))?;
    Ok(d[0])
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionPoint {
    pub index: usize,
    pub lambda: Option<f64>,
    pub lambda_prime: f64,
    pub k: f64,
    /// `v = λ' + λ^2 + K F^2`, divided by `F^2`.
    pub v: f64,
    /// `|v M| F` with `v` scaled as above.
    pub product: f64,
    /// `|M| F`
    pub m_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub spec: String,
    /// The hypotheses (determinate `λ` on enough points, scalar flag
    /// curvature) hold, so the values below test the theorem.
    pub evaluable: bool,
    pub reason: String,
    pub determinate_points: usize,
    pub points: Vec<ConditionPoint>,
    /// Points where `v != 0` and `M != 0`, contradicting the theorem.
    pub violations: usize,
    /// Points where `v = 0` while `M != 0`: the theorem's nondegeneracy
    /// hypothesis fails there.
    pub degenerate_with_m: usize,
}

/// Curvature condition `(λ' + λ^2 + K F^2) M_ijk = 0` at every sample.
pub fn theorem1_condition(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
) -> Result<ConditionReport, ClassifyError> {
    let report = classify_basic(spec, samples, settings)?;
    let results: Vec<_> = report
        .points
        .par_iter()
        .map(|p| -> Result<ConditionPoint, CalcError> {
            let lp = lambda_prime(spec, &p.point, settings)?;
            let f2 = p.f * p.f;
            let lam = p.gp.lambda_or_zero();
            let v = (lp + lam * lam + p.k * f2) / f2;
            Ok(ConditionPoint {
                index: p.index,
                lambda: p.gp.lambda,
                lambda_prime: lp,
                k: p.k,
                v,
                product: v.abs() * p.gp.m_norm,
                m_norm: p.gp.m_norm,
            })
        })
        .collect();
    let mut points = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(e) => {
                return Err(ClassifyError::TooManyFailures {
                    failed: 1,
                    total: report.points.len(),
                    first: e.to_string(),
                })
            }
        }
    }
    let determinate = points.iter().filter(|p| p.lambda.is_some()).count();
    let scalar = report.verdicts.scalar_flag_curvature.holds;
    let (evaluable, reason) = if !scalar {
        (false, "flag curvature is not scalar on the sample".to_string())
    } else if determinate < MIN_DETERMINATE_POINTS {
        (
            false,
            format!("only {determinate} points with |M| F > tau_deg; the λ fit is indeterminate"),
        )
    } else {
        (true, "hypotheses hold".to_string())
    };
    let tau_deg = settings.tau_deg;
    let violations = points
        .iter()
        .filter(|p| p.v.abs() > tau_deg && p.m_norm > tau_deg)
        .count();
    let degenerate_with_m = points
        .iter()
        .filter(|p| p.v.abs() <= tau_deg && p.m_norm > tau_deg)
        .count();
    Ok(ConditionReport {
        spec: spec.name.clone(),
        evaluable,
        reason,
        determinate_points: determinate,
        points,
        violations,
        degenerate_with_m,
    })
}

impl ClassificationReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## Classification: {}\n", self.spec);
        let _ = writeln!(
            s,
            "{} points (seed {}, {} rejected while sampling, {} failed), tau = {:e}\n",
            self.samples,
            self.seed,
            self.rejections,
            self.failures.len(),
            self.settings.tau
        );
        let _ = writeln!(s, "| class | verdict | worst residual |");
        let _ = writeln!(s, "|---|---|---|");
        for (name, v) in self.verdicts.named() {
            let _ = writeln!(s, "| {name} | {} | {:.3e} |", v.holds, v.worst_residual);
        }
        for e in &self.internal_errors {
            let _ = writeln!(s, "\n**internal error:** {e}");
        }
        s
    }
}
