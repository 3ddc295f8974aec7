//! Homogeneity, y-kill, trace, symmetry and connection checks, on the jet
//! pipeline and on the finite-difference oracle.

use std::collections::BTreeMap;

use crate::calculus::{CalcError, JetTensor, Quantity, Slot, Tensor};
use crate::classify::Settings;
use crate::metric::{EvalPoint, MetricSpec, SampleSet};

use super::oracle::{FdOracle, FdSteps};
use super::{
    contract_y, euler_derivative, per_point, reference_quantity, with_errors, y_kill, Applicability, IdentityCheck, NormContext,
    PointResidual, VerifyError, FD_VANISHING_FLOOR, VANISHING_FLOOR,
};

/// Tolerance on the jet path.
pub const JET_TOL: f64 = 1e-9;
/// Tolerance on the finite-difference path.
pub const FD_TOL: f64 = 1e-4;

const Y_KILL: [Quantity; 7] = [
    Quantity::Angular,
    Quantity::Cartan,
    Quantity::MeanCartan,
    Quantity::Landsberg,
    Quantity::MeanLandsberg,
    Quantity::Matsumoto,
    Quantity::PReducibility,
];

const TOTALLY_SYMMETRIC: [Quantity; 4] = [
    Quantity::Cartan,
    Quantity::Landsberg,
    Quantity::Matsumoto,
    Quantity::PReducibility,
];

/// Source of tensor values, so the same checks run on both paths.
type Lookup<'a> = dyn FnMut(Quantity) -> Result<Tensor, VerifyError> + 'a;

fn swapped(t: &Tensor, a: usize, b: usize) -> Tensor {
    Tensor::from_fn(t.dim, &t.slots, |idx| {
        let mut j = idx.to_vec();
        j.swap(a, b);
        t.get(&j)
    })
}

/// `g^{jk} T_{ijk}` for a rank-3 all-lower tensor.
fn trace23(t: &Tensor, ginv: &Tensor) -> Tensor {
    let n = t.dim;
    Tensor::from_fn(n, &[Slot::Lower], |i| {
        let mut s = 0.0;
        for j in 0..n {
            for k in 0..n {
                s += ginv.get(&[j, k]) * t.get(&[i[0], j, k]);
            }
        }
        s
    })
}

/// Checks shared by both paths. Homogeneity is checked by the callers
/// since the two paths differentiate differently.
fn algebraic(
    ctx: &NormContext,
    idx: usize,
    y: &[f64],
    floor: f64,
    q: &mut Lookup<'_>,
    out: &mut Vec<(String, PointResidual)>,
) -> Result<(), VerifyError> {
    let n = y.len();
    let mut push = |id: String, r: PointResidual| out.push((id, r));
    for k in Y_KILL {
        let r = match reference_quantity(k) {
            Some(p) => ctx.scale_free(&q(p)?, p.y_degree()),
            None => 0.0,
        };
        let t = q(k)?;
        push(format!("y-kill-{}", k.name()), y_kill(ctx, idx, &t, y, k.y_degree(), floor, r));
    }
    let h = q(Quantity::Angular)?;
    let tr = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| ctx.ginv.get(&[i, j]) * h.get(&[i, j]))
        .sum::<f64>();
    let nm1 = n as f64 - 1.0;
    push(
        "trace-h".into(),
        ctx.residual(idx, tr.abs(), nm1, (tr - nm1).abs(), floor),
    );
    let pairs: &[(Quantity, Option<Quantity>)] = &[
        (Quantity::Cartan, Some(Quantity::MeanCartan)),
        (Quantity::Landsberg, Some(Quantity::MeanLandsberg)),
        (Quantity::Matsumoto, None),
        (Quantity::PReducibility, None),
    ];
    for (full, mean) in pairs {
        let t = trace23(&q(*full)?, &ctx.ginv);
        let rhs = match mean {
            Some(m) => q(*m)?,
            None => Tensor::zeros(n, &[Slot::Lower]),
        };
        let mut r = ctx.scale_free(&q(*full)?, full.y_degree());
        if let Some(p) = reference_quantity(*full) {
            r = r.max(ctx.scale_free(&q(p)?, p.y_degree()));
        }
        push(
            format!("trace-{}", full.name()),
            ctx.compare_ref(idx, &t, &rhs, full.y_degree(), floor, r),
        );
    }
    let g = q(Quantity::Spray)?;
    let nc = q(Quantity::NonlinearConnection)?;
    let ber = q(Quantity::Berwald)?;
    push(
        "connection-N".into(),
        ctx.compare(idx, &contract_y(&nc, y), &g.scale(2.0), 2, floor),
    );
    push(
        "connection-berwald".into(),
        ctx.compare(idx, &contract_y(&ber, y), &nc, 1, floor),
    );
    let mut sym = vec![(Quantity::Fundamental, vec![(0, 1)]), (Quantity::Angular, vec![(0, 1)])];
    for k in TOTALLY_SYMMETRIC {
        sym.push((k, vec![(0, 1), (1, 2), (0, 2)]));
    }
    for (k, swaps) in sym {
        let t = q(k)?;
        let worst = swaps
            .iter()
            .map(|&(a, b)| ctx.compare(idx, &t, &swapped(&t, a, b), k.y_degree(), floor))
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
            .expect("non-empty");
        push(format!("symmetry-{}", k.name()), worst);
    }
    Ok(())
}

fn aggregate(
    prefix: &str,
    spec: &MetricSpec,
    tol: f64,
    rows: Vec<Vec<(String, PointResidual)>>,
    errors: &[String],
) -> Vec<IdentityCheck> {
    // Insertion order of ids is kept so that reports are stable.
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<PointResidual>> = BTreeMap::new();
    for row in rows {
        for (id, r) in row {
            if !by_id.contains_key(&id) {
                order.push(id.clone());
            }
            by_id.entry(id).or_default().push(r);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let pts = by_id.remove(&id).unwrap_or_default();
            with_errors(
                IdentityCheck::from_points(&format!("{prefix}:{id}"), spec, Applicability::All, tol, pts),
                errors,
            )
        })
        .collect()
}

fn scalar_jet(n: usize, j: &crate::jet::Jet) -> JetTensor {
    JetTensor {
        dim: n,
        slots: Vec::new(),
        comps: vec![j.clone()],
    }
}

/// Ladder on the jet pipeline.
pub fn check_ladder_jet(spec: &MetricSpec, samples: &SampleSet, settings: &Settings) -> Vec<IdentityCheck> {
    let (rows, errors) = per_point(spec, samples, settings.order, |idx, geo| {
        let n = geo.dim();
        let y = geo.point().y.clone();
        let ctx = NormContext::from_geometry(geo)?;
        let mut out = Vec::new();
        let f = scalar_jet(n, geo.f_jet());
        let f2 = scalar_jet(n, geo.f2_jet());
        let euler: [(&str, JetTensor, i32); 4] = [
            ("F", f, 1),
            ("F2", f2, 2),
            ("g", (*geo.get(Quantity::Fundamental)?).clone(), 0),
            ("C", (*geo.get(Quantity::Cartan)?).clone(), -1),
        ];
        for (name, t, deg) in euler {
            let d = euler_derivative(&t, n, &y)?;
            let v = t.values();
            out.push((format!("euler-{name}"), ctx.compare(idx, &d, &v.scale(deg as f64), deg, VANISHING_FLOOR)));
        }
        let mut lookup = |q: Quantity| -> Result<Tensor, VerifyError> { Ok(geo.value(q)?) };
        algebraic(&ctx, idx, &y, VANISHING_FLOOR, &mut lookup, &mut out)?;
        let sigma = geo.value(Quantity::Stretch)?;
        out.push((
            "antisymmetry-sigma".into(),
            ctx.compare(idx, &sigma, &swapped(&sigma, 2, 3).scale(-1.0), Quantity::Stretch.y_degree(), VANISHING_FLOOR),
        ));
        Ok(out)
    });
    aggregate("ladder", spec, JET_TOL, rows, &errors)
}

/// Ladder on the finite-difference oracle. Homogeneity is checked by
/// evaluating at `y` and `2y`.
pub fn check_ladder_fd(spec: &MetricSpec, samples: &SampleSet, _settings: &Settings) -> Vec<IdentityCheck> {
    let fd = FdOracle::new(spec, FdSteps::default());
    let (rows, errors) = per_point(spec, samples, Quantity::Fundamental.min_order(), |idx, geo| {
        let p = geo.point().clone();
        let y = p.y.clone();
        let ctx = NormContext {
            g: fd.quantity(&p, Quantity::Fundamental)?.tensor,
            ginv: fd.quantity(&p, Quantity::InverseFundamental)?.tensor,
            f: spec.f_value(&p.x, &p.y).map_err(CalcError::from)?,
        };
        let mut out = Vec::new();
        let p2 = EvalPoint::new(p.x.clone(), y.iter().map(|v| 2.0 * v).collect());
        let f_at = |q: &EvalPoint| -> Result<Tensor, VerifyError> {
            Ok(Tensor::scalar(spec.f_value(&q.x, &q.y).map_err(CalcError::from)?))
        };
        let f2_at = |q: &EvalPoint| -> Result<Tensor, VerifyError> {
            let f = spec.f_value(&q.x, &q.y).map_err(CalcError::from)?;
            Ok(Tensor::scalar(f * f))
        };
        let homog: [(&str, Tensor, Tensor, i32); 4] = [
            ("F", f_at(&p)?, f_at(&p2)?, 1),
            ("F2", f2_at(&p)?, f2_at(&p2)?, 2),
            (
                "g",
                fd.quantity(&p, Quantity::Fundamental)?.tensor,
                fd.quantity(&p2, Quantity::Fundamental)?.tensor,
                0,
            ),
            (
                "C",
                fd.quantity(&p, Quantity::Cartan)?.tensor,
                fd.quantity(&p2, Quantity::Cartan)?.tensor,
                -1,
            ),
        ];
        for (name, t1, t2, deg) in homog {
            let expected = t1.scale(2f64.powi(deg));
            out.push((format!("euler-{name}"), ctx.compare(idx, &t2, &expected, deg, FD_VANISHING_FLOOR)));
        }
        let mut lookup = |q: Quantity| -> Result<Tensor, VerifyError> { Ok(fd.quantity(&p, q)?.tensor) };
        algebraic(&ctx, idx, &y, FD_VANISHING_FLOOR, &mut lookup, &mut out)?;
        Ok(out)
    });
    aggregate("ladder-fd", spec, FD_TOL, rows, &errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::builtin;
    use crate::verify::Status;

    #[test]
    fn jet_ladder_randers() {
        let spec = builtin("randers-const-beta").unwrap();
        let samples = spec.sample(3, 5).unwrap();
        let checks = check_ladder_jet(&spec, &samples, &Settings::default());
        assert!(checks.len() > 20);
        for c in &checks {
            assert_eq!(c.status, Status::Pass, "{} {:.3e} {:?}", c.id, c.worst_residual, c.notes);
        }
    }

    #[test]
    fn fd_ladder_randers() {
        let spec = builtin("randers-const-beta").unwrap();
        let samples = spec.sample(2, 5).unwrap();
        for c in check_ladder_fd(&spec, &samples, &Settings::default()) {
            assert_eq!(c.status, Status::Pass, "{} {:.3e} {:?}", c.id, c.worst_residual, c.notes);
        }
    }

    #[test]
    fn fd_ladder_quartic() {
        let spec = builtin("quartic-minkowski").unwrap();
        let samples = spec.sample(2, 5).unwrap();
        for c in check_ladder_fd(&spec, &samples, &Settings::default()) {
            assert_eq!(c.status, Status::Pass, "{} {:.3e} {:?}", c.id, c.worst_residual, c.notes);
        }
    }
}
