//! Independent evaluation paths used to cross-check the jet pipeline.
//!
//! [`FdOracle`] evaluates `F` in plain floating point (it shares only the
//! expression trees with the jet code) and builds tensors from central
//! finite differences with one Richardson step. Derived quantities nest the
//! stencils: `N` and `G^i_jk` differentiate the finite-difference spray,
//! the Landsberg tensor differentiates the finite-difference Cartan tensor
//! along `(y, -2G)`, and the Riemann curvature differentiates the spray in
//! `x` and `y`.
//!
//! [`christoffel_spray`] and [`sectional_curvature`] work from the
//! coefficients `a_ij(x)` of a Riemannian metric instead.

use crate::calculus::{indices, Quantity, Slot, Tensor};
use crate::linalg;
use crate::metric::{EvalPoint, MetricError, MetricSpec};

use super::VerifyError;

/// Base step sizes, relative to the Euclidean size of `y` for
/// y-derivatives. Higher derivatives get larger steps to balance
/// truncation against cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub first: f64,
    pub second: f64,
    pub third: f64,
    pub fourth: f64,
    /// Outer step when differentiating a quantity that is itself a
    /// finite-difference result.
    pub nested: f64,
    /// Outer step for nested second derivatives.
    pub nested_second: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        FdSteps {
            first: 1e-3,
            second: 2e-3,
            third: 6e-3,
            fourth: 4.8e-2,
            nested: 4e-3,
            nested_second: 2e-2,
        }
    }
}

/// Finite-difference value together with its estimated error (difference
/// between the extrapolated and the finer plain estimate).
#[derive(Debug, Clone)]
pub struct FdValue {
    pub tensor: Tensor,
    pub error: f64,
}

/// Tensor-product central stencil for the mixed directional derivative
/// along `dirs` (each scaled by its step), with one Richardson step.
/// Returns `(extrapolated, |extrapolated - fine|)`.
fn stencil_dirs(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>, VerifyError>,
    z: &[f64],
    dirs: &[Vec<f64>],
    steps: &[f64],
) -> Result<(Vec<f64>, f64), VerifyError> {
    stencil_richardson(f, z, dirs, steps, 1)
}

/// [`stencil_dirs`] with `levels` Richardson steps (steps halved each
/// level). The error estimate compares the last two extrapolants.
fn stencil_richardson(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>, VerifyError>,
    z: &[f64],
    dirs: &[Vec<f64>],
    steps: &[f64],
    levels: usize,
) -> Result<(Vec<f64>, f64), VerifyError> {
    if dirs.is_empty() {
        return Ok((f(z)?, 0.0));
    }
    let plain = |scale: f64| -> Result<Vec<f64>, VerifyError> {
        let k = dirs.len();
        let mut acc: Option<Vec<f64>> = None;
        for mask in 0..1usize << k {
            let mut zz = z.to_vec();
            let mut sign = 1.0;
            for (a, d) in dirs.iter().enumerate() {
                let s = if mask >> a & 1 == 1 { -1.0 } else { 1.0 };
                sign *= s;
                for (zi, di) in zz.iter_mut().zip(d) {
                    *zi += s * steps[a] * scale * di;
                }
            }
            let val = f(&zz)?;
            match &mut acc {
                Some(acc) => acc.iter_mut().zip(&val).for_each(|(a, b)| *a += sign * b),
                None => acc = Some(val.iter().map(|b| sign * b).collect()),
            }
        }
        let denom: f64 = steps.iter().map(|h| 2.0 * h * scale).product();
        Ok(acc.expect("at least one stencil point").into_iter().map(|v| v / denom).collect())
    };
    // Neville-style table: row[k] holds estimates with the h^2..h^2k terms removed.
    let mut row = vec![plain(1.0)?];
    let mut err: f64 = 0.0;
    for level in 1..=levels {
        let mut next = vec![plain(0.5f64.powi(level as i32))?];
        for k in 1..=level {
            let w = 4f64.powi(k as i32);
            let est: Vec<f64> = next[k - 1]
                .iter()
                .zip(&row[k - 1])
                .map(|(fine, coarse)| (w * fine - coarse) / (w - 1.0))
                .collect();
            next.push(est);
        }
        if level == levels {
            err = next[level]
                .iter()
                .zip(&next[level - 1])
                .fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        }
        row = next;
    }
    Ok((row.pop().expect("non-empty table"), err))
}

fn unit(len: usize, var: usize) -> Vec<f64> {
    let mut e = vec![0.0; len];
    e[var] = 1.0;
    e
}

/// [`stencil_dirs`] along coordinate axes.
fn stencil(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>, VerifyError>,
    z: &[f64],
    vars: &[usize],
    steps: &[f64],
) -> Result<(Vec<f64>, f64), VerifyError> {
    let dirs: Vec<Vec<f64>> = vars.iter().map(|&v| unit(z.len(), v)).collect();
    stencil_dirs(f, z, &dirs, steps)
}

pub struct FdOracle<'a> {
    spec: &'a MetricSpec,
    steps: FdSteps,
}

impl<'a> FdOracle<'a> {
    pub fn new(spec: &'a MetricSpec, steps: FdSteps) -> Self {
        FdOracle { spec, steps }
    }

    fn n(&self) -> usize {
        self.spec.dim
    }

    fn f2(&self, z: &[f64]) -> Result<Vec<f64>, VerifyError> {
        let n = self.n();
        let f = self.spec.f_value(&z[..n], &z[n..])?;
        Ok(vec![f * f])
    }

    fn step_for(&self, z: &[f64], var: usize, base: f64) -> f64 {
        let n = self.n();
        if var >= n {
            let ynorm = z[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
            base * ynorm
        } else {
            base
        }
    }

    /// `d^k F^2` along the given variables (`x^i` is `i`, `y^i` is `n + i`).
    fn f2_partial(&self, z: &[f64], vars: &[usize]) -> Result<(f64, f64), VerifyError> {
        let base = match vars.len() {
            0 | 1 => self.steps.first,
            2 => self.steps.second,
            _ => self.steps.third,
        };
        let steps: Vec<f64> = vars.iter().map(|&v| self.step_for(z, v, base)).collect();
        let (v, e) = stencil(&|zz| self.f2(zz), z, vars, &steps)?;
        Ok((v[0], e))
    }

    fn z(p: &EvalPoint) -> Vec<f64> {
        p.x.iter().chain(&p.y).copied().collect()
    }

    /// `g_ij`.
    pub fn fundamental(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        self.fundamental_at(&Self::z(p))
    }

    fn fundamental_at(&self, z: &[f64]) -> Result<FdValue, VerifyError> {
        let n = self.n();
        let mut err: f64 = 0.0;
        let mut t = Tensor::zeros(n, &[Slot::Lower, Slot::Lower]);
        for i in 0..n {
            for j in i..n {
                let (v, e) = self.f2_partial(z, &[n + i, n + j])?;
                err = err.max(0.5 * e);
                t.set(&[i, j], 0.5 * v);
                t.set(&[j, i], 0.5 * v);
            }
        }
        Ok(FdValue { tensor: t, error: err })
    }

    /// `C_ijk`.
    pub fn cartan(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        self.cartan_at(&Self::z(p))
    }

    fn cartan_at(&self, z: &[f64]) -> Result<FdValue, VerifyError> {
        let n = self.n();
        let mut err: f64 = 0.0;
        let mut t = Tensor::zeros(n, &[Slot::Lower; 3]);
        for idx in indices(n, 3) {
            if !(idx[0] <= idx[1] && idx[1] <= idx[2]) {
                continue;
            }
            let (v, e) = self.f2_partial(z, &[n + idx[0], n + idx[1], n + idx[2]])?;
            err = err.max(0.25 * e);
            for perm in permutations3(&idx) {
                t.set(&perm, 0.25 * v);
            }
        }
        Ok(FdValue { tensor: t, error: err })
    }

    /// `G^i`.
    pub fn spray(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        self.spray_at(&Self::z(p))
    }

    fn spray_at(&self, z: &[f64]) -> Result<FdValue, VerifyError> {
        let n = self.n();
        let g = self.fundamental_at(z)?;
        let ginv = linalg::inverse(&g.tensor.data, n)?;
        let mut err = g.error;
        let mut w = vec![0.0; n];
        for (l, wl) in w.iter_mut().enumerate() {
            for k in 0..n {
                let (v, e) = self.f2_partial(z, &[k, n + l])?;
                *wl += v * z[n + k];
                err = err.max(e);
            }
            let (v, e) = self.f2_partial(z, &[l])?;
            *wl -= v;
            err = err.max(e);
        }
        let t = Tensor::from_fn(n, &[Slot::Upper], |i| {
            0.25 * (0..n).map(|l| ginv[i[0] * n + l] * w[l]).sum::<f64>()
        });
        Ok(FdValue { tensor: t, error: err })
    }

    /// Nested derivative of a finite-difference quantity.
    fn nested(
        &self,
        z: &[f64],
        vars: &[usize],
        inner: &dyn Fn(&[f64]) -> Result<FdValue, VerifyError>,
    ) -> Result<(Vec<f64>, f64), VerifyError> {
        let base = if vars.len() > 1 { self.steps.nested_second } else { self.steps.nested };
        let steps: Vec<f64> = vars.iter().map(|&v| self.step_for(z, v, base)).collect();
        stencil(&|zz| Ok(inner(zz)?.tensor.data), z, vars, &steps)
    }

    /// `N^i_j = dG^i/dy^j`.
    pub fn nonlinear_connection(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        let z = Self::z(p);
        let n = self.n();
        let mut t = Tensor::zeros(n, &[Slot::Upper, Slot::Lower]);
        let mut err: f64 = 0.0;
        for j in 0..n {
            let (v, e) = self.nested(&z, &[n + j], &|zz| self.spray_at(zz))?;
            err = err.max(e);
            for i in 0..n {
                t.set(&[i, j], v[i]);
            }
        }
        Ok(FdValue { tensor: t, error: err })
    }

    /// `G^i_jk = d^2 G^i / dy^j dy^k`.
    pub fn berwald(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        let z = Self::z(p);
        let n = self.n();
        let mut t = Tensor::zeros(n, &[Slot::Upper, Slot::Lower, Slot::Lower]);
        let mut err: f64 = 0.0;
        for j in 0..n {
            for k in j..n {
                let (v, e) = self.nested(&z, &[n + j, n + k], &|zz| self.spray_at(zz))?;
                err = err.max(e);
                for i in 0..n {
                    t.set(&[i, j, k], v[i]);
                    t.set(&[i, k, j], v[i]);
                }
            }
        }
        Ok(FdValue { tensor: t, error: err })
    }

    /// `L_ijk = 1/4 D_v d^3F^2/dy^i dy^j dy^k - C_mjk N^m_i - C_imk N^m_j - C_ijm N^m_k`
    /// with `v = (y, -2G)`; the first term is one fourth-order stencil.
    pub fn landsberg(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        let n = self.n();
        let z = Self::z(p);
        let c = self.cartan_at(&z)?;
        let g = self.spray_at(&z)?;
        let nc = self.nonlinear_connection(p)?;
        let mut dir: Vec<f64> = p.y.clone();
        dir.extend(g.tensor.data.iter().map(|v| -2.0 * v));
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let v_unit: Vec<f64> = dir.iter().map(|v| v / len).collect();
        let h = self.step_for(&z, n, self.steps.fourth);
        let mut dc = Tensor::zeros(n, &[Slot::Lower; 3]);
        let mut err: f64 = 0.0;
        for idx in indices(n, 3) {
            if !(idx[0] <= idx[1] && idx[1] <= idx[2]) {
                continue;
            }
            let mut dirs = vec![v_unit.clone()];
            dirs.extend(idx.iter().map(|&i| unit(2 * n, n + i)));
            let (v, e) = stencil_richardson(&|zz| self.f2(zz), &z, &dirs, &[h; 4], 2)?;
            err = err.max(0.25 * e * len);
            for perm in permutations3(&idx) {
                dc.set(&perm, 0.25 * v[0] * len);
            }
        }
        let mut t = Tensor::zeros(n, &[Slot::Lower; 3]);
        for idx in indices(n, 3) {
            let mut v = dc.get(&idx);
            let mut k = idx.clone();
            for a in 0..3 {
                for m in 0..n {
                    k[a] = m;
                    v -= c.tensor.get(&k) * nc.tensor.get(&[m, idx[a]]);
                }
                k[a] = idx[a];
            }
            t.set(&idx, v);
        }
        Ok(FdValue {
            tensor: t,
            error: err.max(c.error).max(nc.error),
        })
    }

    /// `R^i_k` from finite-difference derivatives of the spray.
    pub fn riemann(&self, p: &EvalPoint) -> Result<FdValue, VerifyError> {
        let n = self.n();
        let z = Self::z(p);
        let spray = |zz: &[f64]| self.spray_at(zz);
        let g = spray(&z)?;
        let mut err = g.error;
        let mut dx = vec![vec![0.0; n]; n]; // dx[k][i] = dG^i/dx^k
        let mut dy = vec![vec![0.0; n]; n]; // dy[j][i] = dG^i/dy^j
        for k in 0..n {
            let (v, e) = self.nested(&z, &[k], &spray)?;
            dx[k] = v;
            err = err.max(e);
            let (v, e) = self.nested(&z, &[n + k], &spray)?;
            dy[k] = v;
            err = err.max(e);
        }
        let mut dxy = vec![vec![vec![0.0; n]; n]; n]; // dxy[j][k][i] = d2G^i/dx^j dy^k
        let mut dyy = vec![vec![vec![0.0; n]; n]; n]; // dyy[j][k][i] = d2G^i/dy^j dy^k
        for j in 0..n {
            for k in 0..n {
                let (v, e) = self.nested(&z, &[j, n + k], &spray)?;
                dxy[j][k] = v;
                err = err.max(e);
                let (v, e) = self.nested(&z, &[n + j, n + k], &spray)?;
                dyy[j][k] = v;
                err = err.max(e);
            }
        }
        let gv = &g.tensor.data;
        let t = Tensor::from_fn(n, &[Slot::Upper, Slot::Lower], |idx| {
            let (i, k) = (idx[0], idx[1]);
            let mut r = 2.0 * dx[k][i];
            for j in 0..n {
                r -= p.y[j] * dxy[j][k][i];
                r += 2.0 * gv[j] * dyy[j][k][i];
                r -= dy[j][i] * dy[k][j];
            }
            r
        });
        Ok(FdValue { tensor: t, error: err })
    }

    /// Any quantity up to rank 3 that has a finite-difference route.
    /// Algebraic combinations reuse the finite-difference ingredients.
    pub fn quantity(&self, p: &EvalPoint, q: Quantity) -> Result<FdValue, VerifyError> {
        let n = self.n();
        let z = Self::z(p);
        let f2 = self.f2(&z)?[0];
        let trace = |t: &Tensor, ginv: &[f64]| {
            Tensor::from_fn(n, &[Slot::Lower], |i| {
                let mut s = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        s += ginv[j * n + k] * t.get(&[i[0], j, k]);
                    }
                }
                s
            })
        };
        let lowered = |g: &Tensor| {
            Tensor::from_fn(n, &[Slot::Lower], |i| (0..n).map(|j| g.get(&[i[0], j]) * p.y[j]).sum())
        };
        let angular = |g: &Tensor| {
            let yl = lowered(g);
            Tensor::from_fn(n, &[Slot::Lower, Slot::Lower], |i| {
                g.get(i) - yl.get(&[i[0]]) * yl.get(&[i[1]]) / f2
            })
        };
        let trace_free = |t: &Tensor, a: &Tensor, h: &Tensor| {
            let c = 1.0 / (n as f64 + 1.0);
            Tensor::from_fn(n, &[Slot::Lower; 3], |x| {
                let (i, j, k) = (x[0], x[1], x[2]);
                t.get(x)
                    - c * (a.get(&[i]) * h.get(&[j, k])
                        + a.get(&[j]) * h.get(&[i, k])
                        + a.get(&[k]) * h.get(&[i, j]))
            })
        };
        Ok(match q {
            Quantity::Fundamental => self.fundamental(p)?,
            Quantity::Cartan => self.cartan(p)?,
            Quantity::Spray => self.spray(p)?,
            Quantity::NonlinearConnection => self.nonlinear_connection(p)?,
            Quantity::Berwald => self.berwald(p)?,
            Quantity::Landsberg => self.landsberg(p)?,
            Quantity::Riemann => self.riemann(p)?,
            Quantity::LoweredDirection => {
                let g = self.fundamental(p)?;
                FdValue {
                    tensor: lowered(&g.tensor),
                    error: g.error,
                }
            }
            Quantity::InverseFundamental => {
                let g = self.fundamental(p)?;
                FdValue {
                    tensor: Tensor {
                        dim: n,
                        slots: vec![Slot::Upper, Slot::Upper],
                        data: linalg::inverse(&g.tensor.data, n)?,
                    },
                    error: g.error,
                }
            }
            Quantity::Angular => {
                let g = self.fundamental(p)?;
                FdValue {
                    tensor: angular(&g.tensor),
                    error: g.error,
                }
            }
            Quantity::MeanCartan | Quantity::Matsumoto => {
                let g = self.fundamental(p)?;
                let c = self.cartan(p)?;
                let ginv = linalg::inverse(&g.tensor.data, n)?;
                let i = trace(&c.tensor, &ginv);
                let tensor = if q == Quantity::MeanCartan {
                    i
                } else {
                    trace_free(&c.tensor, &i, &angular(&g.tensor))
                };
                FdValue {
                    tensor,
                    error: c.error.max(g.error),
                }
            }
            Quantity::MeanLandsberg | Quantity::PReducibility => {
                let g = self.fundamental(p)?;
                let l = self.landsberg(p)?;
                let ginv = linalg::inverse(&g.tensor.data, n)?;
                let j = trace(&l.tensor, &ginv);
                let tensor = if q == Quantity::MeanLandsberg {
                    j
                } else {
                    trace_free(&l.tensor, &j, &angular(&g.tensor))
                };
                FdValue {
                    tensor,
                    error: l.error.max(g.error),
                }
            }
            Quantity::BerwaldCurvature | Quantity::Stretch | Quantity::RiemannVertical => {
                return Err(VerifyError::NoOracle(q.name()))
            }
        })
    }
}

fn permutations3(idx: &[usize]) -> [[usize; 3]; 6] {
    let (a, b, c) = (idx[0], idx[1], idx[2]);
    [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]
}

/// Coefficients `a_ij(x)` of a Riemannian metric as a function of `x`.
fn riemannian_coefficients(spec: &MetricSpec, x: &[f64]) -> Result<Vec<f64>, VerifyError> {
    spec.riemannian_matrix(x)
        .ok_or(VerifyError::NotRiemannian)?
        .map_err(|e: MetricError| e.into())
}

/// Christoffel symbols `Gamma^i_jk` (index `(i * n + j) * n + k`) from
/// finite differences of `a_ij`.
pub fn christoffel(spec: &MetricSpec, x: &[f64], h: f64) -> Result<Vec<f64>, VerifyError> {
    let n = spec.dim;
    let a = riemannian_coefficients(spec, x)?;
    let ainv = linalg::inverse(&a, n)?;
    // da[l] = d a_ij / dx^l
    let mut da = Vec::with_capacity(n);
    for l in 0..n {
        let (v, _) = stencil(&|xx| riemannian_coefficients(spec, xx), x, &[l], &[h])?;
        da.push(v);
    }
    let mut gamma = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    let lower = da[j][l * n + k] + da[k][l * n + j] - da[l][j * n + k];
                    s += 0.5 * ainv[i * n + l] * lower;
                }
                gamma[(i * n + j) * n + k] = s;
            }
        }
    }
    Ok(gamma)
}

/// `G^i = 1/2 Gamma^i_jk y^j y^k`.
pub fn christoffel_spray(spec: &MetricSpec, p: &EvalPoint, h: f64) -> Result<Vec<f64>, VerifyError> {
    let n = spec.dim;
    let gamma = christoffel(spec, &p.x, h)?;
    Ok((0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s += 0.5 * gamma[(i * n + j) * n + k] * p.y[j] * p.y[k];
                }
            }
            s
        })
        .collect())
}

/// Sectional curvature of the plane spanned by `y` and `u`, from the
/// Riemann tensor `R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj
/// + Gamma^i_km Gamma^m_lj - Gamma^i_lm Gamma^m_kj`.
pub fn sectional_curvature(
    spec: &MetricSpec,
    p: &EvalPoint,
    u: &[f64],
    h: f64,
) -> Result<f64, VerifyError> {
    let n = spec.dim;
    let x = &p.x;
    let y = &p.y;
    let gamma = christoffel(spec, x, h)?;
    let mut dgamma = Vec::with_capacity(n);
    for k in 0..n {
        let (v, _) = stencil(&|xx| christoffel(spec, xx, h), x, &[k], &[h])?;
        dgamma.push(v);
    }
    let gi = |i: usize, j: usize, k: usize| gamma[(i * n + j) * n + k];
    let riem = |i: usize, j: usize, k: usize, l: usize| {
        let mut r = dgamma[k][(i * n + l) * n + j] - dgamma[l][(i * n + k) * n + j];
        for m in 0..n {
            r += gi(i, k, m) * gi(m, l, j) - gi(i, l, m) * gi(m, k, j);
        }
        r
    };
    let a = riemannian_coefficients(spec, x)?;
    let dot = |v: &[f64], w: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += a[i * n + j] * v[i] * w[j];
            }
        }
        s
    };
    // <R(u, y) y, u>
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let r = riem(i, j, k, l) * y[j] * u[k] * y[l];
                    for m in 0..n {
                        num += a[m * n + i] * r * u[m];
                    }
                }
            }
        }
    }
    let denom = dot(y, y) * dot(u, u) - dot(y, u).powi(2);
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::Geometry;
    use crate::metric::builtin;

    fn rel(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).max_abs() / b.max_abs().max(1e-300)
    }

    #[test]
    fn euclidean_fundamental_is_identity() {
        let spec = builtin("euclidean2").unwrap();
        let fd = FdOracle::new(&spec, FdSteps::default());
        let g = fd.fundamental(&EvalPoint::new(vec![0.0, 0.0], vec![0.6, -0.8])).unwrap();
        assert!((g.tensor.get(&[0, 0]) - 1.0).abs() < 1e-10);
        assert!(g.tensor.get(&[0, 1]).abs() < 1e-10);
        assert!(g.error < 1e-10);
    }

    #[test]
    fn randers_quantities_match_jets() {
        let spec = builtin("randers-const-beta").unwrap();
        let fd = FdOracle::new(&spec, FdSteps::default());
        let p = EvalPoint::new(vec![0.3, -0.4, 0.2], vec![0.8, 0.5, -0.6]);
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        for q in [
            Quantity::Fundamental,
            Quantity::Cartan,
            Quantity::MeanCartan,
            Quantity::Spray,
            Quantity::NonlinearConnection,
            Quantity::Berwald,
            Quantity::Landsberg,
            Quantity::MeanLandsberg,
            Quantity::Riemann,
        ] {
            let jet = geo.value(q).unwrap();
            let o = fd.quantity(&p, q).unwrap();
            let r = rel(&o.tensor, &jet);
            eprintln!("{q}: rel {r:e}, estimated {:e}", o.error);
            assert!(r < 1e-5, "{q}: {r}");
        }
    }

    #[test]
    fn christoffel_spray_matches_pipeline() {
        let spec = builtin("ellipsoid-riemannian").unwrap();
        let p = EvalPoint::new(vec![0.4, -0.3, 0.7], vec![1.0, 0.2, -0.5]);
        let oracle = christoffel_spray(&spec, &p, 1e-4).unwrap();
        let mut geo = Geometry::new(&spec, &p, 4).unwrap();
        let jet = geo.value(Quantity::Spray).unwrap();
        for i in 0..3 {
            assert!((oracle[i] - jet.data[i]).abs() < 1e-7 * (1.0 + jet.data[i].abs()));
        }
    }

    #[test]
    fn sphere_sectional_curvature() {
        let spec = builtin("sphere-projective").unwrap();
        let p = EvalPoint::new(vec![0.2, 0.5, -0.3], vec![1.0, 0.2, -0.5]);
        let k = sectional_curvature(&spec, &p, &[0.1, 1.0, 0.3], 1e-4).unwrap();
        assert!((k - 1.0).abs() < 1e-6, "{k}");
    }
}
