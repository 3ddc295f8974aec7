//! Verification harness: pointwise checks of the identities relating the
//! Cartan, Landsberg, Matsumoto and Riemann tensors, evaluated over a sample
//! of points.
//!
//! Every check compares a left and a right hand side and reports
//! `|LHS - RHS| / (|LHS| + |RHS| + 1e-30)` with g-contraction norms. When
//! both sides are below a vanishing floor (in scale-free units) the ratio
//! is meaningless, so the check falls back to the scale-free absolute
//! difference and marks the point as a `vanishing` branch.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calculus::{
    flow_transport, CalcError, Geometry, JetTensor, Quantity, Slot,
    Tensor,
};
use crate::classify::{classify_basic, fit_gp, theorem1_condition, ClassificationReport, ClassifyError, Settings};
use crate::linalg::LinalgError;
use crate::metric::{random_direction, MetricError, MetricKind, MetricSpec, SampleSet};

pub mod ladder;
pub mod oracle;

/// Scale-free size below which both sides of an identity count as zero.
pub const VANISHING_FLOOR: f64 = 1e-9;

/// Vanishing floor for comparisons that involve finite differences.
pub const FD_VANISHING_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("singular matrix in oracle: {0}")]
    Singular(#[from] LinalgError),
    #[error("no finite-difference route for {0}")]
    NoOracle(&'static str),
    #[error("metric is not of Riemannian kind")]
    NotRiemannian,
}

/// Class of metrics on which an identity is claimed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Applicability {
    All,
    Riemannian,
    ScalarCurvature,
    GenPReducible,
    StretchAndGenPReducible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// Hypotheses not met; nothing was asserted.
    Skipped,
    /// Hypotheses met but the argument divides by a vanishing quantity;
    /// recorded instead of a violation.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Both sides have genuine size; the residual is relative.
    Genuine,
    /// Both sides are below the vanishing floor; the residual is absolute.
    Vanishing,
    /// The conclusion fails where `λ' + λ^2 = 0`.
    DegenerateDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointResidual {
    pub index: usize,
    pub lhs_scale: f64,
    pub rhs_scale: f64,
    pub residual: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub id: String,
    pub spec: String,
    pub applicability: Applicability,
    pub status: Status,
    pub tolerance: f64,
    pub worst_residual: f64,
    pub points: Vec<PointResidual>,
    /// Points left out of the check (for example where `λ` is
    /// indeterminate).
    pub excluded: usize,
    pub notes: Vec<String>,
}

impl IdentityCheck {
    fn from_points(
        id: &str,
        spec: &MetricSpec,
        applicability: Applicability,
        tolerance: f64,
        points: Vec<PointResidual>,
    ) -> Self {
        let worst = points.iter().map(|p| p.residual).fold(0.0, f64::max);
        let status = if worst <= tolerance { Status::Pass } else { Status::Fail };
        let vanishing = points.iter().filter(|p| p.branch == Branch::Vanishing).count();
        let mut notes = Vec::new();
        if vanishing > 0 {
            notes.push(format!("{vanishing} of {} points: both sides vanish", points.len()));
        }
        IdentityCheck {
            id: id.to_string(),
            spec: spec.name.clone(),
            applicability,
            status,
            tolerance,
            worst_residual: worst,
            points,
            excluded: 0,
            notes,
        }
    }

    fn skipped(id: &str, spec: &MetricSpec, applicability: Applicability, tolerance: f64, reason: String) -> Self {
        IdentityCheck {
            id: id.to_string(),
            spec: spec.name.clone(),
            applicability,
            status: Status::Skipped,
            tolerance,
            worst_residual: 0.0,
            points: Vec::new(),
            excluded: 0,
            notes: vec![reason],
        }
    }

    /// Branch labels present among the points, for summaries.
    pub fn branches(&self) -> Vec<Branch> {
        let mut out = Vec::new();
        for p in &self.points {
            if !out.contains(&p.branch) {
                out.push(p.branch);
            }
        }
        out
    }
}

/// g-norms at one point, used to make residuals scale-free.
#[derive(Debug, Clone)]
pub struct NormContext {
    pub g: Tensor,
    pub ginv: Tensor,
    pub f: f64,
}

impl NormContext {
    pub fn from_geometry(geo: &mut Geometry<'_>) -> Result<Self, CalcError> {
        Ok(NormContext {
            g: geo.value(Quantity::Fundamental)?,
            ginv: geo.value(Quantity::InverseFundamental)?,
            f: geo.f(),
        })
    }

    /// g-norm of a tensor that is homogeneous of degree `deg` in `y`,
    /// made scale-free.
    pub fn scale_free(&self, t: &Tensor, deg: i32) -> f64 {
        t.g_norm(&self.g, &self.ginv) * self.f.powi(-deg)
    }

    pub fn compare(&self, index: usize, lhs: &Tensor, rhs: &Tensor, deg: i32, floor: f64) -> PointResidual {
        self.compare_ref(index, lhs, rhs, deg, floor, 0.0)
    }

    /// Like [`NormContext::compare`], with the denominator raised to at
    /// least `reference` (scale-free). Used for projections such as `M`
    /// or `J`, whose errors are inherited from the tensor they come from.
    pub fn compare_ref(
        &self,
        index: usize,
        lhs: &Tensor,
        rhs: &Tensor,
        deg: i32,
        floor: f64,
        reference: f64,
    ) -> PointResidual {
        let l = self.scale_free(lhs, deg);
        let r = self.scale_free(rhs, deg);
        let d = self.scale_free(&lhs.sub(rhs), deg);
        self.residual_ref(index, l, r, d, floor, reference)
    }

    pub fn residual(&self, index: usize, l: f64, r: f64, d: f64, floor: f64) -> PointResidual {
        self.residual_ref(index, l, r, d, floor, 0.0)
    }

    pub fn residual_ref(&self, index: usize, l: f64, r: f64, d: f64, floor: f64, reference: f64) -> PointResidual {
        let scale = (l + r).max(reference);
        let (residual, branch) = if scale <= floor {
            (d, Branch::Vanishing)
        } else {
            (d / (scale + 1e-30), Branch::Genuine)
        };
        PointResidual {
            index,
            lhs_scale: l,
            rhs_scale: r,
            residual,
            branch,
        }
    }
}

/// Tensor a quantity is projected or traced from, if any; its size sets
/// the scale of errors in the derived quantity.
pub fn reference_quantity(q: Quantity) -> Option<Quantity> {
    match q {
        Quantity::MeanCartan | Quantity::Matsumoto => Some(Quantity::Cartan),
        Quantity::MeanLandsberg | Quantity::PReducibility => Some(Quantity::Landsberg),
        _ => None,
    }
}

/// Contracts the last slot with `y`.
pub fn contract_y(t: &Tensor, y: &[f64]) -> Tensor {
    let r = t.rank() - 1;
    Tensor::from_fn(t.dim, &t.slots[..r], |idx| {
        let mut j = idx.to_vec();
        j.push(0);
        let mut s = 0.0;
        for (m, ym) in y.iter().enumerate() {
            j[r] = m;
            s += t.get(&j) * ym;
        }
        s
    })
}

fn sym3(n: usize, a: &Tensor, h: &Tensor) -> Tensor {
    Tensor::from_fn(n, &[Slot::Lower; 3], |x| {
        let (i, j, k) = (x[0], x[1], x[2]);
        a.get(&[i]) * h.get(&[j, k]) + a.get(&[j]) * h.get(&[i, k]) + a.get(&[k]) * h.get(&[i, j])
    })
}

fn lower_vector(n: usize, data: Vec<f64>) -> Tensor {
    Tensor {
        dim: n,
        slots: vec![Slot::Lower],
        data,
    }
}

fn transport_value(geo: &mut Geometry<'_>, q: Quantity) -> Result<Tensor, CalcError> {
    let t = geo.get(q)?;
    Ok(geo.transport(&t)?.values())
}

/// Runs `f` at every sample point in parallel; per-point errors are
/// collected as messages.
fn per_point<T: Send>(
    spec: &MetricSpec,
    samples: &SampleSet,
    order: usize,
    f: impl Fn(usize, &mut Geometry<'_>) -> Result<T, VerifyError> + Sync,
) -> (Vec<T>, Vec<String>) {
    let results: Vec<Result<T, VerifyError>> = samples
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut geo = Geometry::new(spec, p, order)?;
            f(i, &mut geo)
        })
        .collect();
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => errors.push(format!("point {i}: {e}")),
        }
    }
    (ok, errors)
}

fn with_errors(mut check: IdentityCheck, errors: &[String]) -> IdentityCheck {
    if !errors.is_empty() {
        check.status = Status::Fail;
        check.notes.extend(errors.iter().cloned());
    }
    check
}

/// Tolerance for the universal identities.
pub const UNIVERSAL_TOL: f64 = 1e-6;
/// Tolerance for the scalar-curvature chain and `(S5)`.
pub const CHAIN_TOL: f64 = 1e-5;
/// Tolerance for the transport identity `M̄ = M_{|s} y^s`.
pub const TRANSPORT_TOL: f64 = 1e-7;
/// Tolerance for algebraic consistency of the fit.
pub const ALGEBRAIC_TOL: f64 = 1e-8;
/// Tolerance for the symmetric/antisymmetric split of `Q_ij`.
pub const LEMQ_TOL: f64 = 1e-7;

/// Landsberg-Riemann relations:
/// `L_{ijk|m} y^m + C_ijm R^m_k = -1/3 g_im R^m_{k.j} - 1/3 g_jm R^m_{k.i}
///  - 1/6 g_im R^m_{j.k} - 1/6 g_jm R^m_{i.k}`
/// and its trace `J_{k|m} y^m + I_m R^m_k = -1/3 (2 R^m_{k.m} + R^m_{m.k})`.
pub fn check_moeq(spec: &MetricSpec, samples: &SampleSet, settings: &Settings) -> Vec<IdentityCheck> {
    let (rows, errors) = per_point(spec, samples, settings.order, |idx, geo| {
        let n = geo.dim();
        let ctx = NormContext::from_geometry(geo)?;
        let tl = transport_value(geo, Quantity::Landsberg)?;
        let tj = transport_value(geo, Quantity::MeanLandsberg)?;
        let c = geo.value(Quantity::Cartan)?;
        let i = geo.value(Quantity::MeanCartan)?;
        let r = geo.value(Quantity::Riemann)?;
        let rv = geo.value(Quantity::RiemannVertical)?;
        let g = &ctx.g;
        let lhs1 = Tensor::from_fn(n, &[Slot::Lower; 3], |x| {
            let (a, b, k) = (x[0], x[1], x[2]);
            tl.get(x) + (0..n).map(|m| c.get(&[a, b, m]) * r.get(&[m, k])).sum::<f64>()
        });
        let rhs1 = Tensor::from_fn(n, &[Slot::Lower; 3], |x| {
            let (a, b, k) = (x[0], x[1], x[2]);
            let mut s = 0.0;
            for m in 0..n {
                s -= g.get(&[a, m]) * rv.get(&[m, k, b]) / 3.0;
                s -= g.get(&[b, m]) * rv.get(&[m, k, a]) / 3.0;
                s -= g.get(&[a, m]) * rv.get(&[m, b, k]) / 6.0;
                s -= g.get(&[b, m]) * rv.get(&[m, a, k]) / 6.0;
            }
            s
        });
        let lhs2 = Tensor::from_fn(n, &[Slot::Lower], |x| {
            let k = x[0];
            tj.get(x) + (0..n).map(|m| i.get(&[m]) * r.get(&[m, k])).sum::<f64>()
        });
        let rhs2 = Tensor::from_fn(n, &[Slot::Lower], |x| {
            let k = x[0];
            let s: f64 = (0..n)
                .map(|m| 2.0 * rv.get(&[m, k, m]) + rv.get(&[m, m, k]))
                .sum();
            -s / 3.0
        });
        Ok((
            ctx.compare(idx, &lhs1, &rhs1, 1, VANISHING_FLOOR),
            ctx.compare(idx, &lhs2, &rhs2, 1, VANISHING_FLOOR),
        ))
    });
    let (a, b): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    vec![
        with_errors(IdentityCheck::from_points("Moeq1", spec, Applicability::All, UNIVERSAL_TOL, a), &errors),
        with_errors(IdentityCheck::from_points("Moeq2", spec, Applicability::All, UNIVERSAL_TOL, b), &errors),
    ]
}

/// Generalized P-reducibility chain:
/// (a) `M̄ = M_{|s} y^s` for every metric;
/// (b) the residual of `L = λ C + a_i h_jk + a_j h_ik + a_k h_ij` with the
///     fitted data equals the residual of `M̄ = λ M`;
/// (c) `J_k = λ I_k + (n + 1) a_k` with the fitted data.
pub fn check_p_chain(spec: &MetricSpec, samples: &SampleSet, settings: &Settings) -> Vec<IdentityCheck> {
    let tau_deg = settings.tau_deg;
    let (rows, errors) = per_point(spec, samples, settings.order, |idx, geo| {
        let n = geo.dim();
        let ctx = NormContext::from_geometry(geo)?;
        let tm = transport_value(geo, Quantity::Matsumoto)?;
        let mbar = geo.value(Quantity::PReducibility)?;
        let transport = ctx.compare(idx, &mbar, &tm, 0, VANISHING_FLOOR);
        let fit = fit_gp(geo, tau_deg)?;
        let Some(lambda) = fit.lambda else {
            return Ok((transport, None));
        };
        let l = geo.value(Quantity::Landsberg)?;
        let c = geo.value(Quantity::Cartan)?;
        let h = geo.value(Quantity::Angular)?;
        let m = geo.value(Quantity::Matsumoto)?;
        let i = geo.value(Quantity::MeanCartan)?;
        let j = geo.value(Quantity::MeanLandsberg)?;
        let a = lower_vector(n, fit.a.clone());
        let p2 = l.sub(&c.scale(lambda)).sub(&sym3(n, &a, &h));
        let p6 = mbar.sub(&m.scale(lambda));
        let (r2, r6) = (ctx.scale_free(&p2, 0), ctx.scale_free(&p6, 0));
        let equiv = PointResidual {
            index: idx,
            lhs_scale: r2,
            rhs_scale: r6,
            residual: (r2 - r6).abs() / (1.0 + ctx.scale_free(&l, 0)),
            branch: Branch::Genuine,
        };
        let rhs3 = i.scale(lambda).add(&a.scale(n as f64 + 1.0));
        let p3 = ctx.compare(idx, &j, &rhs3, 0, VANISHING_FLOOR);
        Ok((transport, Some((equiv, p3))))
    });
    let total = rows.len();
    let mut transport = Vec::new();
    let mut equiv = Vec::new();
    let mut p3 = Vec::new();
    for (t, rest) in rows {
        transport.push(t);
        if let Some((e, p)) = rest {
            equiv.push(e);
            p3.push(p);
        }
    }
    let excluded = total - equiv.len();
    let mut b = IdentityCheck::from_points("P2-P6", spec, Applicability::GenPReducible, ALGEBRAIC_TOL, equiv);
    let mut c = IdentityCheck::from_points("P3", spec, Applicability::GenPReducible, ALGEBRAIC_TOL, p3);
    for check in [&mut b, &mut c] {
        check.excluded = excluded;
        if excluded > 0 {
            check
                .notes
                .push(format!("{excluded} points excluded: |M| F <= {tau_deg:e}, λ indeterminate"));
        }
    }
    vec![
        with_errors(
            IdentityCheck::from_points("Mbar-transport", spec, Applicability::All, TRANSPORT_TOL, transport),
            &errors,
        ),
        with_errors(b, &errors),
        with_errors(c, &errors),
    ]
}

/// `a_i(x, y)` from the fit, for flow differencing.
fn a_field(geo: &mut Geometry<'_>, tau_deg: f64) -> Result<Tensor, CalcError> {
    let n = geo.dim();
    Ok(lower_vector(n, fit_gp(geo, tau_deg)?.a))
}

/// Stretch chain:
/// (a) `Σ_ijkl y^l = 2 L_{ijk|l} y^l` for every metric, so stretch metrics
///     have `L_{ijk|l} y^l = 0`;
/// (b) on stretch, generalized P-reducible metrics, `M = 0`;
/// (c) `L_{ijk|l} y^l = (λ' + λ^2) C_ijk + (λ a_i + a'_i) h_jk + (λ a_j + a'_j) h_ik + (λ a_k + a'_k) h_ij`
///     with `λ'` and `a'` from the geodesic flow.
pub fn check_stretch_chain(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
    classes: &ClassificationReport,
) -> Vec<IdentityCheck> {
    let order = settings.order;
    let tau_deg = settings.tau_deg;
    let (rows, errors) = per_point(spec, samples, order, |idx, geo| {
        let y = geo.point().y.clone();
        let ctx = NormContext::from_geometry(geo)?;
        let sigma = geo.value(Quantity::Stretch)?;
        let tl = transport_value(geo, Quantity::Landsberg)?;
        Ok(ctx.compare(idx, &contract_y(&sigma, &y), &tl.scale(2.0), 1, VANISHING_FLOOR))
    });
    let mut out = vec![with_errors(
        IdentityCheck::from_points("S2", spec, Applicability::All, UNIVERSAL_TOL, rows),
        &errors,
    )];

    let stretch = classes.verdicts.stretch;
    let gen_p = classes.verdicts.gen_p_reducible;
    let hypothesis = stretch.holds && gen_p.holds;
    let tau = settings.tau;

    // (b): conclusion M = 0.
    let conclusion: Vec<(usize, f64)> = classes.points.iter().map(|p| (p.index, p.matsumoto)).collect();
    let conclusion_holds = conclusion.iter().all(|(_, m)| *m <= tau);
    let mut s8 = IdentityCheck {
        id: "S8".into(),
        spec: spec.name.clone(),
        applicability: Applicability::StretchAndGenPReducible,
        status: Status::Pass,
        tolerance: tau,
        worst_residual: conclusion.iter().map(|(_, m)| *m).fold(0.0, f64::max),
        points: Vec::new(),
        excluded: 0,
        notes: Vec::new(),
    };
    if !hypothesis {
        let reason = format!(
            "hypothesis unmet: stretch worst {:.3e}, gen-P worst {:.3e}",
            stretch.worst_residual, gen_p.worst_residual
        );
        s8.points = conclusion
            .iter()
            .map(|&(index, m)| PointResidual {
                index,
                lhs_scale: m,
                rhs_scale: 0.0,
                residual: m,
                branch: Branch::Genuine,
            })
            .collect();
        if conclusion_holds {
            s8.notes.push(format!("{reason}; conclusion M = 0 holds anyway"));
        } else {
            s8.status = Status::Skipped;
            s8.notes.push(reason);
        }
    } else {
        let results: Vec<Result<PointResidual, CalcError>> = classes
            .points
            .par_iter()
            .map(|p| {
                if p.matsumoto <= tau {
                    return Ok(PointResidual {
                        index: p.index,
                        lhs_scale: p.matsumoto,
                        rhs_scale: 0.0,
                        residual: p.matsumoto,
                        branch: Branch::Genuine,
                    });
                }
                let lp = crate::classify::lambda_prime(spec, &p.point, settings)?;
                let lam = p.gp.lambda_or_zero();
                let denom = (lp + lam * lam) / (p.f * p.f);
                let branch = if denom.abs() <= tau_deg {
                    Branch::DegenerateDenominator
                } else {
                    Branch::Genuine
                };
                Ok(PointResidual {
                    index: p.index,
                    lhs_scale: p.matsumoto,
                    rhs_scale: denom.abs(),
                    residual: p.matsumoto,
                    branch,
                })
            })
            .collect();
        for r in results {
            match r {
                Ok(p) => s8.points.push(p),
                Err(e) => s8.notes.push(e.to_string()),
            }
        }
        let violations = s8
            .points
            .iter()
            .filter(|p| p.residual > tau && p.branch == Branch::Genuine)
            .count();
        let degenerate = s8
            .points
            .iter()
            .filter(|p| p.residual > tau && p.branch == Branch::DegenerateDenominator)
            .count();
        if violations > 0 || s8.points.len() < classes.points.len() {
            s8.status = Status::Fail;
            s8.notes.push(format!("{violations} points with M != 0 and λ' + λ² != 0"));
        } else if degenerate > 0 {
            s8.status = Status::Degenerate;
            s8.notes.push(format!(
                "{degenerate} points with M != 0 where λ' + λ² = 0: the division by λ' + λ² in the argument is undefined"
            ));
        }
    }
    out.push(s8);

    // (c) needs the fitted data to be meaningful.
    if !gen_p.holds {
        out.push(IdentityCheck::skipped(
            "S5",
            spec,
            Applicability::GenPReducible,
            CHAIN_TOL,
            format!("not generalized P-reducible (worst fit residual {:.3e})", gen_p.worst_residual),
        ));
        return out;
    }
    let h = settings.flow_step;
    let (rows, errors) = per_point(spec, samples, order, |idx, geo| {
        let n = geo.dim();
        let p = geo.point().clone();
        let ctx = NormContext::from_geometry(geo)?;
        let fit = fit_gp(geo, tau_deg)?;
        let lam = fit.lambda_or_zero();
        let lp = crate::classify::lambda_prime(spec, &p, settings)?;
        let a_prime = flow_transport(spec, &p, Quantity::PReducibility.min_order(), h, |g| a_field(g, tau_deg))?;
        let a = lower_vector(n, fit.a);
        let c = geo.value(Quantity::Cartan)?;
        let hh = geo.value(Quantity::Angular)?;
        let lhs = transport_value(geo, Quantity::Landsberg)?;
        let b = a.scale(lam).add(&a_prime);
        let rhs = c.scale(lp + lam * lam).add(&sym3(n, &b, &hh));
        Ok(ctx.compare(idx, &lhs, &rhs, 1, VANISHING_FLOOR))
    });
    let mut s5 = with_errors(
        IdentityCheck::from_points("S5", spec, Applicability::GenPReducible, CHAIN_TOL, rows),
        &errors,
    );
    if !stretch.holds {
        s5.notes.push("metric is not stretch; the relation follows from the fit alone".into());
    }
    out.push(s5);
    out
}

/// Scalar flag curvature chain: `R^i_k = K F^2 h^i_k`, its y-derivative,
/// the resulting formulas for `L_{ijk|m} y^m` and `J_{k|m} y^m`, and the
/// second transport `M_{ijk|p|q} y^p y^q + K F^2 M_ijk = 0`.
pub fn check_scalar_chain(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
    classes: &ClassificationReport,
) -> Vec<IdentityCheck> {
    const IDS: [&str; 5] = ["Kikiso1", "MKdiff", "AZeq1", "AZeq2", "Sijk"];
    let scalar = classes.verdicts.scalar_flag_curvature;
    if !scalar.holds {
        return IDS
            .iter()
            .map(|id| {
                IdentityCheck::skipped(
                    id,
                    spec,
                    Applicability::ScalarCurvature,
                    CHAIN_TOL,
                    format!(
                        "flag curvature is not scalar: isotropic fit residual {:.3e} > {:e}",
                        scalar.worst_residual, settings.tau
                    ),
                )
            })
            .collect();
    }
    let order = settings.order;
    let h = settings.flow_step;
    let (rows, errors) = per_point(spec, samples, order, |idx, geo| {
        let n = geo.dim();
        let p = geo.point().clone();
        let y = p.y.clone();
        let ctx = NormContext::from_geometry(geo)?;
        let f2 = ctx.f * ctx.f;
        let k = geo.scalar_curvature_fit()?.k;
        // K as a jet: R^m_m / ((n - 1) F^2), then its y-derivatives.
        let r_jet = geo.get(Quantity::Riemann)?;
        let mut trace = r_jet.at(&[0, 0]).clone();
        for m in 1..n {
            trace = trace + r_jet.at(&[m, m]);
        }
        let k_jet = (&trace * &geo.f2_jet().recip().map_err(CalcError::from)?).scale(1.0 / (n as f64 - 1.0));
        let k_dy: Vec<f64> = (0..n)
            .map(|l| k_jet.derivative(n + l).map(|d| d.value()))
            .collect::<Result<_, _>>()
            .map_err(CalcError::from)?;
        let k_dy = lower_vector(n, k_dy);

        let g = ctx.g.clone();
        let yl = geo.value(Quantity::LoweredDirection)?;
        let hh = geo.value(Quantity::Angular)?;
        let c = geo.value(Quantity::Cartan)?;
        let i = geo.value(Quantity::MeanCartan)?;
        let m = geo.value(Quantity::Matsumoto)?;
        let r = geo.value(Quantity::Riemann)?;
        let rv = geo.value(Quantity::RiemannVertical)?;

        let iso = geo.isotropic_riemann(k)?;
        let kikiso = ctx.compare(idx, &r, &iso, 2, VANISHING_FLOOR);

        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mk_rhs = Tensor::from_fn(n, &[Slot::Upper, Slot::Lower, Slot::Lower], |x| {
            let (i_, k_, l) = (x[0], x[1], x[2]);
            let h_up = delta(i_, k_) - y[i_] * yl.get(&[k_]) / f2;
            k_dy.get(&[l]) * f2 * h_up
                + k * (2.0 * yl.get(&[l]) * delta(i_, k_) - yl.get(&[k_]) * delta(i_, l) - g.get(&[k_, l]) * y[i_])
        });
        let mkdiff = ctx.compare(idx, &rv, &mk_rhs, 1, VANISHING_FLOOR);

        let tl = transport_value(geo, Quantity::Landsberg)?;
        let az1_rhs = sym3(n, &k_dy, &hh).add(&c.scale(3.0 * k)).scale(-f2 / 3.0);
        let az1 = ctx.compare(idx, &tl, &az1_rhs, 1, VANISHING_FLOOR);

        let tj = transport_value(geo, Quantity::MeanLandsberg)?;
        let az2_rhs = k_dy.scale(n as f64 + 1.0).add(&i.scale(3.0 * k)).scale(-f2 / 3.0);
        let az2 = ctx.compare(idx, &tj, &az2_rhs, 1, VANISHING_FLOOR);

        let second = flow_transport(spec, &p, Quantity::PReducibility.min_order(), h, |g| {
            g.value(Quantity::PReducibility)
        })?;
        let sijk = ctx.compare(idx, &second, &m.scale(-k * f2), 1, VANISHING_FLOOR);
        Ok([kikiso, mkdiff, az1, az2, sijk])
    });
    IDS.iter()
        .enumerate()
        .map(|(c, id)| {
            let pts = rows.iter().map(|r| r[c]).collect();
            with_errors(
                IdentityCheck::from_points(id, spec, Applicability::ScalarCurvature, CHAIN_TOL, pts),
                &errors,
            )
        })
        .collect()
}

/// Decomposition of `Q_ij = L_{ijl|k} - L_{ijk|l} + L_isk L^s_jl - L_isl L^s_jk`
/// for every pair `k != l`: the symmetric part is the derivative part, the
/// antisymmetric part is the quadratic part, and the derivative part equals
/// `-Σ_ijkl / 2`.
pub fn check_lemq(spec: &MetricSpec, samples: &SampleSet, settings: &Settings) -> IdentityCheck {
    let (rows, errors) = per_point(spec, samples, settings.order, |idx, geo| {
        let n = geo.dim();
        let ctx = NormContext::from_geometry(geo)?;
        let l_jet = geo.get(Quantity::Landsberg)?;
        let dl = geo.h_covariant(&l_jet)?.values();
        let l = l_jet.values();
        let sigma = geo.value(Quantity::Stretch)?;
        let ginv = &ctx.ginv;
        // L^s_jl = g^sm L_mjl
        let l_up = l.apply_on_slot(0, &ginv.data);
        let mut worst = ctx.residual(idx, 0.0, 0.0, 0.0, VANISHING_FLOOR);
        let mut antisym_defect: f64 = 0.0;
        for k in 0..n {
            for ll in 0..n {
                if k == ll {
                    continue;
                }
                let two = [Slot::Lower, Slot::Lower];
                let d = Tensor::from_fn(n, &two, |x| dl.get(&[x[0], x[1], ll, k]) - dl.get(&[x[0], x[1], k, ll]));
                let p = Tensor::from_fn(n, &two, |x| {
                    (0..n)
                        .map(|s| l.get(&[x[0], s, k]) * l_up.get(&[s, x[1], ll]) - l.get(&[x[0], s, ll]) * l_up.get(&[s, x[1], k]))
                        .sum()
                });
                let q = d.add(&p);
                let qs = Tensor::from_fn(n, &two, |x| 0.5 * (q.get(x) + q.get(&[x[1], x[0]])));
                let qa = Tensor::from_fn(n, &two, |x| 0.5 * (q.get(x) - q.get(&[x[1], x[0]])));
                let half_sigma = Tensor::from_fn(n, &two, |x| -0.5 * sigma.get(&[x[0], x[1], k, ll]));
                let p_t = Tensor::from_fn(n, &two, |x| p.get(&[x[1], x[0]]));
                antisym_defect = antisym_defect.max(ctx.scale_free(&p.add(&p_t), 0));
                for r in [
                    ctx.compare(idx, &qs, &d, 0, VANISHING_FLOOR),
                    ctx.compare(idx, &qa, &p, 0, VANISHING_FLOOR),
                    ctx.compare(idx, &d, &half_sigma, 0, VANISHING_FLOOR),
                ] {
                    if r.residual > worst.residual || worst.lhs_scale + worst.rhs_scale == 0.0 {
                        worst = r;
                    }
                }
            }
        }
        Ok((worst, antisym_defect))
    });
    let defect = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut check = IdentityCheck::from_points(
        "LemQ",
        spec,
        Applicability::All,
        LEMQ_TOL,
        rows.into_iter().map(|r| r.0).collect(),
    );
    check
        .notes
        .push(format!("quadratic part: largest |P_ij + P_ji| = {defect:.3e} (exact antisymmetry)"));
    with_errors(check, &errors)
}

/// Riemannian metrics: spray against `1/2 Γ^i_jk y^j y^k` and flag
/// curvature against the sectional curvature of `a_ij`, both from the
/// Christoffel symbols.
pub fn check_riemannian_reduction(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
    seed: u64,
) -> Vec<IdentityCheck> {
    if !matches!(spec.kind, MetricKind::Riemannian { .. }) {
        return ["christoffel-spray", "sectional-curvature"]
            .iter()
            .map(|id| {
                IdentityCheck::skipped(id, spec, Applicability::Riemannian, CHAIN_TOL, "metric is not given by a_ij(x)".into())
            })
            .collect();
    }
    let n = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<Vec<f64>> = samples.points.iter().map(|_| random_direction(&mut rng, n)).collect();
    let (rows, errors) = per_point(spec, samples, settings.order, |idx, geo| {
        let p = geo.point().clone();
        let ctx = NormContext::from_geometry(geo)?;
        let spray = geo.value(Quantity::Spray)?;
        let oracle = Tensor {
            dim: n,
            slots: vec![Slot::Upper],
            data: oracle::christoffel_spray(spec, &p, 1e-4)?,
        };
        let a = ctx.compare(idx, &spray, &oracle, 2, FD_VANISHING_FLOOR);
        let u = &directions[idx];
        let k = geo.flag_curvature(u)?;
        let ks = oracle::sectional_curvature(spec, &p, u, 1e-4)?;
        let b = PointResidual {
            index: idx,
            lhs_scale: k.abs(),
            rhs_scale: ks.abs(),
            residual: (k - ks).abs() / (1.0 + ks.abs()),
            branch: Branch::Genuine,
        };
        Ok((a, b))
    });
    let (a, b): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    vec![
        with_errors(IdentityCheck::from_points("christoffel-spray", spec, Applicability::Riemannian, CHAIN_TOL, a), &errors),
        with_errors(IdentityCheck::from_points("sectional-curvature", spec, Applicability::Riemannian, CHAIN_TOL, b), &errors),
    ]
}

/// Curvature condition `(λ' + λ^2 + K F^2) M_ijk = 0` on generalized
/// P-reducible metrics of scalar flag curvature. Points with `M != 0` where
/// the scalar factor vanishes are reported as degenerate, not as
/// violations.
pub fn check_theorem1(spec: &MetricSpec, samples: &SampleSet, settings: &Settings) -> Result<IdentityCheck, VerifyError> {
    let report = theorem1_condition(spec, samples, settings)?;
    let tau_deg = settings.tau_deg;
    if !report.evaluable {
        return Ok(IdentityCheck::skipped(
            "theorem1",
            spec,
            Applicability::ScalarCurvature,
            tau_deg,
            report.reason,
        ));
    }
    let points = report
        .points
        .iter()
        .map(|p| PointResidual {
            index: p.index,
            lhs_scale: p.v.abs(),
            rhs_scale: p.m_norm,
            residual: p.product,
            branch: if p.v.abs() <= tau_deg && p.m_norm > tau_deg {
                Branch::DegenerateDenominator
            } else {
                Branch::Genuine
            },
        })
        .collect();
    let mut check = IdentityCheck::from_points("theorem1", spec, Applicability::ScalarCurvature, tau_deg, points);
    check.status = if report.violations > 0 {
        Status::Fail
    } else if report.degenerate_with_m > 0 {
        Status::Degenerate
    } else {
        Status::Pass
    };
    check.worst_residual = check
        .points
        .iter()
        .filter(|p| p.branch == Branch::Genuine)
        .map(|p| p.residual)
        .fold(0.0, f64::max);
    if report.violations > 0 {
        check
            .notes
            .push(format!("{} points with M != 0 and λ' + λ² + K F² != 0", report.violations));
    }
    if report.degenerate_with_m > 0 {
        check.notes.push(format!(
            "{} points with M != 0 where λ' + λ² + K F² = 0",
            report.degenerate_with_m
        ));
    }
    Ok(check)
}

/// Quantities with a finite-difference route.
pub const ORACLE_QUANTITIES: [Quantity; 14] = [
    Quantity::LoweredDirection,
    Quantity::Fundamental,
    Quantity::InverseFundamental,
    Quantity::Angular,
    Quantity::Cartan,
    Quantity::MeanCartan,
    Quantity::Spray,
    Quantity::NonlinearConnection,
    Quantity::Berwald,
    Quantity::Landsberg,
    Quantity::MeanLandsberg,
    Quantity::Matsumoto,
    Quantity::PReducibility,
    Quantity::Riemann,
];

/// Jet pipeline against the finite-difference oracle. The residual is
/// `|T_fd - T_jet| / max(|T_fd|, |T_jet|, |T_ref|)`, where `T_ref` is the
/// tensor from [`reference_quantity`], or the absolute difference when all
/// are below [`FD_VANISHING_FLOOR`] (all norms scale-free).
pub fn check_oracle(spec: &MetricSpec, samples: &SampleSet, settings: &Settings) -> Vec<IdentityCheck> {
    let fd = oracle::FdOracle::new(spec, oracle::FdSteps::default());
    let (rows, errors) = per_point(spec, samples, settings.order, |idx, geo| {
        let ctx = NormContext::from_geometry(geo)?;
        let mut out = Vec::new();
        let mut warnings = Vec::new();
        for q in ORACLE_QUANTITIES {
            let jet = geo.value(q)?;
            let o = fd.quantity(geo.point(), q)?;
            let deg = q.y_degree();
            let (l, r) = (ctx.scale_free(&o.tensor, deg), ctx.scale_free(&jet, deg));
            let d = ctx.scale_free(&o.tensor.sub(&jet), deg);
            let reference = match reference_quantity(q) {
                Some(p) => ctx.scale_free(&geo.value(p)?, p.y_degree()),
                None => 0.0,
            };
            let scale = l.max(r).max(reference);
            let (residual, branch) = if scale <= FD_VANISHING_FLOOR {
                (d, Branch::Vanishing)
            } else {
                (d / scale, Branch::Genuine)
            };
            if o.error > settings.fd_tol * (1.0 + jet.max_abs()) {
                warnings.push(format!("point {idx}: estimated FD error {:.2e} for {q} exceeds tolerance", o.error));
            }
            out.push(PointResidual {
                index: idx,
                lhs_scale: l,
                rhs_scale: r,
                residual,
                branch,
            });
        }
        Ok((out, warnings))
    });
    ORACLE_QUANTITIES
        .iter()
        .enumerate()
        .map(|(c, q)| {
            let pts = rows.iter().map(|r| r.0[c]).collect();
            let mut check = IdentityCheck::from_points(
                &format!("fd-{}", q.name()),
                spec,
                Applicability::All,
                settings.fd_tol,
                pts,
            );
            for (_, w) in &rows {
                check.notes.extend(w.iter().filter(|s| s.ends_with(&format!("for {q} exceeds tolerance"))).cloned());
            }
            with_errors(check, &errors)
        })
        .collect()
}

/// Identifiers accepted by [`verify_spec`]'s filter.
pub const IDENTITY_IDS: [&str; 24] = [
    "ladder",
    "ladder-fd",
    "Moeq1",
    "Moeq2",
    "Mbar-transport",
    "P2-P6",
    "P3",
    "S2",
    "S8",
    "S5",
    "Kikiso1",
    "MKdiff",
    "AZeq1",
    "AZeq2",
    "Sijk",
    "LemQ",
    "christoffel-spray",
    "sectional-curvature",
    "fd",
    "theorem1",
    "universal",
    "scalar-chain",
    "p-chain",
    "stretch-chain",
];

fn group_of(id: &str) -> &'static [&'static str] {
    match id {
        "universal" => &["Moeq1", "Moeq2", "Mbar-transport", "LemQ"],
        "scalar-chain" => &["Kikiso1", "MKdiff", "AZeq1", "AZeq2", "Sijk"],
        "p-chain" => &["Mbar-transport", "P2-P6", "P3"],
        "stretch-chain" => &["S2", "S8", "S5"],
        _ => &[],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub spec: String,
    pub seed: u64,
    pub samples: usize,
    pub settings: Settings,
    pub checks: Vec<IdentityCheck>,
}

impl VerificationReport {
    pub fn failed(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| c.status == Status::Fail).collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## Verification: {}\n", self.spec);
        let _ = writeln!(s, "{} points, seed {}\n", self.samples, self.seed);
        let _ = writeln!(s, "| identity | status | worst residual | tolerance | branches | notes |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for c in &self.checks {
            let branches: Vec<String> = c
                .branches()
                .iter()
                .map(|b| serde_json::to_value(b).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                .collect();
            let status = serde_json::to_value(c.status)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "| {} | {} | {:.3e} | {:.0e} | {} | {} |",
                c.id,
                status,
                c.worst_residual,
                c.tolerance,
                branches.join(", "),
                c.notes.join("; ").replace('|', "/")
            );
        }
        s
    }
}

/// Runs the selected checks (all when `filter` is empty).
pub fn verify_spec(
    spec: &MetricSpec,
    samples: &SampleSet,
    settings: &Settings,
    filter: &[String],
) -> Result<VerificationReport, VerifyError> {
    let wanted = |id: &str| {
        filter.is_empty()
            || filter.iter().any(|f| f == id || group_of(f).contains(&id))
    };
    let classes = classify_basic(spec, samples, settings)?;
    let mut checks = Vec::new();
    if wanted("ladder") {
        checks.extend(ladder::check_ladder_jet(spec, samples, settings));
    }
    if wanted("ladder-fd") {
        checks.extend(ladder::check_ladder_fd(spec, samples, settings));
    }
    if wanted("Moeq1") || wanted("Moeq2") {
        checks.extend(check_moeq(spec, samples, settings));
    }
    if wanted("Mbar-transport") || wanted("P2-P6") || wanted("P3") {
        checks.extend(check_p_chain(spec, samples, settings));
    }
    if wanted("S2") || wanted("S8") || wanted("S5") {
        checks.extend(check_stretch_chain(spec, samples, settings, &classes));
    }
    if ["Kikiso1", "MKdiff", "AZeq1", "AZeq2", "Sijk"].iter().any(|id| wanted(id)) {
        checks.extend(check_scalar_chain(spec, samples, settings, &classes));
    }
    if wanted("LemQ") {
        checks.push(check_lemq(spec, samples, settings));
    }
    if wanted("christoffel-spray") || wanted("sectional-curvature") {
        checks.extend(check_riemannian_reduction(spec, samples, settings, samples.seed));
    }
    if wanted("theorem1") {
        checks.push(check_theorem1(spec, samples, settings)?);
    }
    if wanted("fd") {
        checks.extend(check_oracle(spec, samples, settings));
    }
    if !filter.is_empty() {
        checks.retain(|c| wanted(&c.id) || (filter.iter().any(|f| f == "ladder") && c.id.starts_with("ladder:"))
            || (filter.iter().any(|f| f == "ladder-fd") && c.id.starts_with("ladder-fd:"))
            || (filter.iter().any(|f| f == "fd") && c.id.starts_with("fd-")));
    }
    Ok(VerificationReport {
        spec: spec.name.clone(),
        seed: samples.seed,
        samples: samples.points.len(),
        settings: *settings,
        checks,
    })
}

/// y-kill residual `|T_{..k} y^k|` against `|T| F` (or the reference
/// scale, when larger).
pub(crate) fn y_kill(
    ctx: &NormContext,
    index: usize,
    t: &Tensor,
    y: &[f64],
    deg: i32,
    floor: f64,
    reference: f64,
) -> PointResidual {
    let scale = ctx.scale_free(t, deg);
    let d = ctx.scale_free(&contract_y(t, y), deg + 1);
    ctx.residual_ref(index, scale, 0.0, d, floor, reference)
}

/// Values of a jet tensor's `y`-directional derivative `y^m dT/dy^m`.
pub(crate) fn euler_derivative(t: &JetTensor, n: usize, y: &[f64]) -> Result<Tensor, CalcError> {
    let mut out = t.values();
    for (k, comp) in t.comps.iter().enumerate() {
        let mut s = 0.0;
        for (m, ym) in y.iter().enumerate() {
            s += ym * comp.derivative(n + m)?.value();
        }
        out.data[k] = s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::builtin;

    fn setup(name: &str, count: usize) -> (MetricSpec, SampleSet, Settings) {
        let spec = builtin(name).unwrap();
        let samples = spec.sample(count, 21).unwrap();
        (spec, samples, Settings::default())
    }

    #[test]
    fn moeq_on_randers() {
        let (spec, samples, settings) = setup("randers-const-beta", 4);
        for c in check_moeq(&spec, &samples, &settings) {
            assert_eq!(c.status, Status::Pass, "{c:?}");
            assert!(c.points.iter().all(|p| p.branch == Branch::Genuine));
        }
    }

    #[test]
    fn euclidean_chains_vanish() {
        let (spec, samples, settings) = setup("euclidean2", 3);
        let report = verify_spec(&spec, &samples, &settings, &[]).unwrap();
        for c in &report.checks {
            assert_ne!(c.status, Status::Fail, "{c:?}");
        }
    }

    #[test]
    fn residual_branches() {
        let ctx = NormContext {
            g: Tensor::from_fn(2, &[Slot::Lower, Slot::Lower], |i| if i[0] == i[1] { 1.0 } else { 0.0 }),
            ginv: Tensor::from_fn(2, &[Slot::Upper, Slot::Upper], |i| if i[0] == i[1] { 1.0 } else { 0.0 }),
            f: 1.0,
        };
        let r = ctx.residual(0, 1e-12, 2e-12, 1e-12, VANISHING_FLOOR);
        assert_eq!(r.branch, Branch::Vanishing);
        assert_eq!(r.residual, 1e-12);
        let r = ctx.residual(0, 1.0, 1.0, 1e-3, VANISHING_FLOOR);
        assert_eq!(r.branch, Branch::Genuine);
        assert!((r.residual - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn filter_selects_groups() {
        let (spec, samples, settings) = setup("euclidean2", 2);
        let report = verify_spec(&spec, &samples, &settings, &["Moeq1".into()]).unwrap();
        assert_eq!(report.checks.len(), 1);
        let report = verify_spec(&spec, &samples, &settings, &["stretch-chain".into()]).unwrap();
        let ids: Vec<_> = report.checks.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["S2", "S8", "S5"]);
    }
}
