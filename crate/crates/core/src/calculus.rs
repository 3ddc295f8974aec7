//! Tensor pipeline: every geometric quantity at a point of the slit tangent
//! bundle, computed from one truncated Taylor expansion of `F`.
//!
//! Conventions. Indices run over `0..n`. `y_i = g_ij y^j`. The horizontal
//! covariant derivative is taken with respect to the Berwald connection:
//!
//! ```text
//! T_{i..|l} = d_l T_{i..} - sum_a T_{..m..} G^m_{i_a l},   d_l = d/dx^l - N^m_l d/dy^m
//! ```
//!
//! with `+ T^{..m..} G^{i_a}_{m l}` for upper slots. Each derivative costs one
//! jet order, so the truncation order bounds the available quantities; see
//! [`Quantity::min_order`].

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::jet::{seed_variables, Jet, JetError};
use crate::linalg::{self, LinalgError};
use crate::metric::{EvalPoint, MetricError, MetricSpec};

/// Condition number of `g` above which a warning is attached to the point.
pub const CONDITION_WARNING: f64 = 1e8;

/// Relative size below which the g-orthogonal part of a flag direction is
/// considered degenerate.
pub const FLAG_DEGENERACY: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CalcError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("fundamental tensor is singular: {0}")]
    Singular(#[from] LinalgError),
    #[error("{quantity} needs jet order at least {needed}, have {order}")]
    OrderTooSmall {
        quantity: String,
        needed: usize,
        order: usize,
    },
    #[error("degenerate flag: direction is parallel to y (relative size {ratio:e})")]
    DegenerateFlag { ratio: f64 },
    #[error("direction has {got} entries, expected {expected}")]
    Direction { expected: usize, got: usize },
    #[error("unknown quantity {0:?}")]
    UnknownQuantity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Upper,
    Lower,
}

/// Quantities produced by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    /// `y_i = g_ij y^j`
    LoweredDirection,
    /// `g_ij`
    Fundamental,
    /// `g^ij`
    InverseFundamental,
    /// `h_ij`
    Angular,
    /// `C_ijk`
    Cartan,
    /// `I_i`
    MeanCartan,
    /// `G^i`
    Spray,
    /// `N^i_j`
    NonlinearConnection,
    /// `G^i_jk`
    Berwald,
    /// `G^i_jkl`, third y-derivative of the spray
    BerwaldCurvature,
    /// `L_ijk`
    Landsberg,
    /// `J_i`
    MeanLandsberg,
    /// `M_ijk`
    Matsumoto,
    /// `M̄_ijk`
    PReducibility,
    /// `Σ_ijkl`
    Stretch,
    /// `R^i_k`
    Riemann,
    /// `R^i_{k.l} = dR^i_k / dy^l`
    RiemannVertical,
}

impl Quantity {
    pub const ALL: [Quantity; 17] = [
        Quantity::LoweredDirection,
        Quantity::Fundamental,
        Quantity::InverseFundamental,
        Quantity::Angular,
        Quantity::Cartan,
        Quantity::MeanCartan,
        Quantity::Spray,
        Quantity::NonlinearConnection,
        Quantity::Berwald,
        Quantity::BerwaldCurvature,
        Quantity::Landsberg,
        Quantity::MeanLandsberg,
        Quantity::Matsumoto,
        Quantity::PReducibility,
        Quantity::Stretch,
        Quantity::Riemann,
        Quantity::RiemannVertical,
    ];

    /// Short name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Quantity::LoweredDirection => "ylower",
            Quantity::Fundamental => "g",
            Quantity::InverseFundamental => "ginv",
            Quantity::Angular => "h",
            Quantity::Cartan => "C",
            Quantity::MeanCartan => "I",
            Quantity::Spray => "G",
            Quantity::NonlinearConnection => "N",
            Quantity::Berwald => "berwald",
            Quantity::BerwaldCurvature => "berwald-curvature",
            Quantity::Landsberg => "L",
            Quantity::MeanLandsberg => "J",
            Quantity::Matsumoto => "M",
            Quantity::PReducibility => "Mbar",
            Quantity::Stretch => "sigma",
            Quantity::Riemann => "riemann",
            Quantity::RiemannVertical => "riemann-dy",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CalcError> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.name() == name)
            .ok_or_else(|| CalcError::UnknownQuantity(name.to_string()))
    }

    pub fn slots(self) -> &'static [Slot] {
        use Slot::*;
        match self {
            Quantity::LoweredDirection | Quantity::MeanCartan | Quantity::MeanLandsberg => &[Lower],
            Quantity::Fundamental | Quantity::Angular => &[Lower, Lower],
            Quantity::InverseFundamental => &[Upper, Upper],
            Quantity::Cartan | Quantity::Landsberg | Quantity::Matsumoto | Quantity::PReducibility => {
                &[Lower, Lower, Lower]
            }
            Quantity::Spray => &[Upper],
            Quantity::NonlinearConnection | Quantity::Riemann => &[Upper, Lower],
            Quantity::Berwald | Quantity::RiemannVertical => &[Upper, Lower, Lower],
            Quantity::BerwaldCurvature => &[Upper, Lower, Lower, Lower],
            Quantity::Stretch => &[Lower, Lower, Lower, Lower],
        }
    }

    pub fn rank(self) -> usize {
        self.slots().len()
    }

    /// Smallest jet order of `F` from which the quantity can be evaluated.
    pub fn min_order(self) -> usize {
        match self {
            Quantity::LoweredDirection => 1,
            Quantity::Fundamental
            | Quantity::InverseFundamental
            | Quantity::Angular
            | Quantity::Spray => 2,
            Quantity::Cartan
            | Quantity::MeanCartan
            | Quantity::Matsumoto
            | Quantity::NonlinearConnection => 3,
            Quantity::Berwald
            | Quantity::Landsberg
            | Quantity::MeanLandsberg
            | Quantity::PReducibility
            | Quantity::Riemann => 4,
            Quantity::BerwaldCurvature | Quantity::Stretch | Quantity::RiemannVertical => 5,
        }
    }

    /// Homogeneity degree in `y`; the scale-free norm multiplies the
    /// g-norm by `F^-degree`.
    pub fn y_degree(self) -> i32 {
        match self {
            Quantity::LoweredDirection | Quantity::NonlinearConnection => 1,
            Quantity::Fundamental
            | Quantity::InverseFundamental
            | Quantity::Angular
            | Quantity::Berwald
            | Quantity::Landsberg
            | Quantity::MeanLandsberg
            | Quantity::PReducibility
            | Quantity::Stretch => 0,
            Quantity::Cartan
            | Quantity::MeanCartan
            | Quantity::Matsumoto
            | Quantity::BerwaldCurvature => -1,
            Quantity::Spray | Quantity::Riemann => 2,
            Quantity::RiemannVertical => 1,
        }
    }

    /// Groups of slots in which the quantity is symmetric, and pairs of slots
    /// in which it is antisymmetric.
    pub fn symmetry(self) -> Symmetry {
        let (sym, anti): (&[&[usize]], &[[usize; 2]]) = match self {
            Quantity::Fundamental | Quantity::InverseFundamental | Quantity::Angular => (&[&[0, 1]], &[]),
            Quantity::Cartan | Quantity::Landsberg | Quantity::Matsumoto | Quantity::PReducibility => {
                (&[&[0, 1, 2]], &[])
            }
            Quantity::Berwald => (&[&[1, 2]], &[]),
            Quantity::BerwaldCurvature => (&[&[1, 2, 3]], &[]),
            Quantity::Stretch => (&[&[0, 1]], &[[2, 3]]),
            _ => (&[], &[]),
        };
        Symmetry {
            symmetric: sym.iter().map(|g| g.to_vec()).collect(),
            antisymmetric: anti.to_vec(),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Symmetry {
    pub symmetric: Vec<Vec<usize>>,
    pub antisymmetric: Vec<[usize; 2]>,
}

/// Row-major multi-indices of a rank-`rank` tensor.
pub fn indices(dim: usize, rank: usize) -> Vec<Vec<usize>> {
    let total = dim.pow(rank as u32);
    (0..total)
        .map(|mut k| {
            let mut idx = vec![0; rank];
            for s in (0..rank).rev() {
                idx[s] = k % dim;
                k /= dim;
            }
            idx
        })
        .collect()
}

fn flat(dim: usize, idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * dim + i)
}

/// Dense tensor of plain values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor {
    pub dim: usize,
    pub slots: Vec<Slot>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dim: usize, slots: &[Slot]) -> Self {
        Tensor {
            dim,
            slots: slots.to_vec(),
            data: vec![0.0; dim.pow(slots.len() as u32)],
        }
    }

    pub fn from_fn(dim: usize, slots: &[Slot], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let data = indices(dim, slots.len()).iter().map(|i| f(i)).collect();
        Tensor {
            dim,
            slots: slots.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dim: 0,
            slots: Vec::new(),
            data: vec![value],
        }
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.rank());
        self.data[flat(self.dim, idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = flat(self.dim, idx);
        self.data[k] = value;
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.data.len(), other.data.len(), "tensor shapes differ");
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Contracts `matrix` (row-major `n x n`) into slot `slot`:
    /// `out[..a..] = sum_m matrix[a][m] self[..m..]`.
    pub fn apply_on_slot(&self, slot: usize, matrix: &[f64]) -> Tensor {
        let n = self.dim;
        let mut out = self.clone();
        for idx in indices(n, self.rank()) {
            let mut j = idx.clone();
            let mut s = 0.0;
            for m in 0..n {
                j[slot] = m;
                s += matrix[idx[slot] * n + m] * self.get(&j);
            }
            out.set(&idx, s);
        }
        out
    }

    /// Inner product contracting every slot with the fundamental tensor
    /// (`g^ij` on lower slots, `g_ij` on upper slots).
    pub fn g_inner(&self, other: &Tensor, g: &Tensor, ginv: &Tensor) -> f64 {
        let mut dual = other.clone();
        for (a, slot) in self.slots.iter().enumerate() {
            let m = match slot {
                Slot::Lower => &ginv.data,
                Slot::Upper => &g.data,
            };
            dual = dual.apply_on_slot(a, m);
        }
        self.data.iter().zip(&dual.data).map(|(a, b)| a * b).sum()
    }

    pub fn g_norm(&self, g: &Tensor, ginv: &Tensor) -> f64 {
        self.g_inner(self, g, ginv).max(0.0).sqrt()
    }

    /// Largest `|T(..a..b..) -/+ T(..b..a..)|` over the tensor, relative to
    /// its largest entry.
    pub fn max_asymmetry(&self, a: usize, b: usize, anti: bool) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for idx in indices(self.dim, self.rank()) {
            let mut swapped = idx.clone();
            swapped.swap(a, b);
            let (u, v) = (self.get(&idx), self.get(&swapped));
            let d = if anti { u + v } else { u - v };
            worst = worst.max(d.abs());
        }
        worst / scale
    }

    /// Components as nested JSON arrays (a bare number for rank 0).
    pub fn nested(&self) -> serde_json::Value {
        fn build(t: &Tensor, prefix: &mut Vec<usize>) -> serde_json::Value {
            if prefix.len() == t.rank() {
                return serde_json::json!(t.get(prefix));
            }
            let items = (0..t.dim)
                .map(|i| {
                    prefix.push(i);
                    let v = build(t, prefix);
                    prefix.pop();
                    v
                })
                .collect();
            serde_json::Value::Array(items)
        }
        build(self, &mut Vec::new())
    }
}

/// Tensor whose components are jets in `(x, y)` around the base point.
#[derive(Debug, Clone)]
pub struct JetTensor {
    pub dim: usize,
    pub slots: Vec<Slot>,
    pub comps: Vec<Jet>,
}

impl JetTensor {
    fn from_fn(
        dim: usize,
        slots: &[Slot],
        mut f: impl FnMut(&[usize]) -> Result<Jet, CalcError>,
    ) -> Result<Self, CalcError> {
        let comps = indices(dim, slots.len())
            .iter()
            .map(|i| f(i))
            .collect::<Result<_, _>>()?;
        Ok(JetTensor {
            dim,
            slots: slots.to_vec(),
            comps,
        })
    }

    /// Like [`JetTensor::from_fn`] but evaluates `f` once per class of
    /// `canon`, which maps an index to its representative.
    fn from_fn_canonical(
        dim: usize,
        slots: &[Slot],
        canon: impl Fn(&[usize]) -> Vec<usize>,
        mut f: impl FnMut(&[usize]) -> Result<Jet, CalcError>,
    ) -> Result<Self, CalcError> {
        let mut memo: HashMap<Vec<usize>, Jet> = HashMap::new();
        Self::from_fn(dim, slots, |idx| {
            let key = canon(idx);
            if let Some(j) = memo.get(&key) {
                return Ok(j.clone());
            }
            let j = f(&key)?;
            memo.insert(key, j.clone());
            Ok(j)
        })
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn at(&self, idx: &[usize]) -> &Jet {
        &self.comps[flat(self.dim, idx)]
    }

    /// Truncation order of the least accurate component.
    pub fn order(&self) -> usize {
        self.comps.iter().map(Jet::order).min().unwrap_or(0)
    }

    pub fn values(&self) -> Tensor {
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            data: self.comps.iter().map(Jet::value).collect(),
        }
    }

    /// Derivative along `var`, appended as a new lower slot.
    fn derivative_slot(&self, var_of: impl Fn(usize) -> usize) -> Result<JetTensor, CalcError> {
        let mut slots = self.slots.clone();
        slots.push(Slot::Lower);
        JetTensor::from_fn(self.dim, &slots, |idx| {
            let (head, l) = idx.split_at(idx.len() - 1);
            Ok(self.at(head).derivative(var_of(l[0]))?)
        })
    }
}

fn sorted(idx: &[usize]) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.sort_unstable();
    v
}

fn sorted_tail(idx: &[usize]) -> Vec<usize> {
    let mut v = idx.to_vec();
    v[1..].sort_unstable();
    v
}

/// Inverse of a matrix of jets: `(g0 + d)^-1 = sum_k (-g0^-1 d)^k g0^-1`,
/// exact up to the truncation order because `d` has no constant term.
/// Returns the inverse and the condition number of `g0`.
fn invert_jet_matrix(g: &[Jet], n: usize) -> Result<(Vec<Jet>, f64), CalcError> {
    let g0: Vec<f64> = g.iter().map(Jet::value).collect();
    let inv0 = linalg::inverse(&g0, n)?;
    let cond = linalg::condition_number(&g0, &inv0, n);
    let layout = g[0].layout().clone();
    let order = g.iter().map(Jet::order).min().unwrap_or(0);
    let delta: Vec<Jet> = g.iter().map(|j| j.add_scalar(-j.value())).collect();
    let zero = Jet::zero(&layout, order);
    // a = g0^-1 d
    let a: Vec<Jet> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            (0..n).fold(zero.clone(), |acc, m| acc + delta[m * n + j].scale(inv0[i * n + m]))
        })
        .collect();
    let mut term: Vec<Jet> = inv0.iter().map(|&v| Jet::constant(&layout, order, v)).collect();
    let mut sum = term.clone();
    for _ in 0..order {
        term = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let s = (0..n).fold(zero.clone(), |acc, m| acc + &a[i * n + m] * &term[m * n + j]);
                -s
            })
            .collect();
        for (s, t) in sum.iter_mut().zip(&term) {
            *s = &*s + t;
        }
    }
    Ok((sum, cond))
}

/// Per-point memo of the pipeline. Quantities are computed on first request
/// and shared afterwards.
pub struct Geometry<'a> {
    spec: &'a MetricSpec,
    point: EvalPoint,
    order: usize,
    n: usize,
    env: Vec<Jet>,
    f: Jet,
    f2: Jet,
    cache: HashMap<Quantity, Arc<JetTensor>>,
    f2_dy: Option<Vec<Jet>>,
    condition_number: Option<f64>,
}

impl<'a> Geometry<'a> {
    pub fn new(spec: &'a MetricSpec, point: &EvalPoint, order: usize) -> Result<Self, CalcError> {
        let (f, f2) = spec.f_and_f2_jets(point, order)?;
        let env = seed_variables(&point.x, &point.y, order)?;
        Ok(Geometry {
            spec,
            point: point.clone(),
            order,
            n: spec.dim,
            env,
            f,
            f2,
            cache: HashMap::new(),
            f2_dy: None,
            condition_number: None,
        })
    }

    pub fn spec(&self) -> &MetricSpec {
        self.spec
    }

    pub fn point(&self) -> &EvalPoint {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn f_jet(&self) -> &Jet {
        &self.f
    }

    pub fn f2_jet(&self) -> &Jet {
        &self.f2
    }

    pub fn f(&self) -> f64 {
        self.f.value()
    }

    /// Condition number of `g` once it has been inverted.
    pub fn condition_number(&self) -> Option<f64> {
        self.condition_number
    }

    pub fn warnings(&self) -> Vec<String> {
        match self.condition_number {
            Some(c) if c > CONDITION_WARNING => {
                vec![format!("fundamental tensor is ill-conditioned (condition number {c:.3e})")]
            }
            _ => Vec::new(),
        }
    }

    fn xvar(&self, i: usize) -> usize {
        i
    }

    fn yvar(&self, i: usize) -> usize {
        self.n + i
    }

    /// Direction `y^i` as jets (exact, linear).
    pub fn y_jet(&self) -> JetTensor {
        JetTensor {
            dim: self.n,
            slots: vec![Slot::Upper],
            comps: self.env[self.n..].to_vec(),
        }
    }

    fn zero(&self) -> Jet {
        Jet::zero(self.env[0].layout(), self.order)
    }

    fn check_order(&self, what: &str, needed: usize) -> Result<(), CalcError> {
        if self.order < needed {
            return Err(CalcError::OrderTooSmall {
                quantity: what.to_string(),
                needed,
                order: self.order,
            });
        }
        Ok(())
    }

    fn f2_dy(&mut self) -> Result<Vec<Jet>, CalcError> {
        if self.f2_dy.is_none() {
            let d = (0..self.n)
                .map(|i| self.f2.derivative(self.yvar(i)))
                .collect::<Result<Vec<_>, _>>()?;
            self.f2_dy = Some(d);
        }
        Ok(self.f2_dy.clone().expect("just filled"))
    }

    /// Jet-valued quantity, computed on first use.
    pub fn get(&mut self, q: Quantity) -> Result<Arc<JetTensor>, CalcError> {
        if let Some(t) = self.cache.get(&q) {
            return Ok(t.clone());
        }
        self.check_order(q.name(), q.min_order())?;
        let t = Arc::new(self.compute(q)?);
        self.cache.insert(q, t.clone());
        Ok(t)
    }

    /// Values of a quantity at the base point.
    pub fn value(&mut self, q: Quantity) -> Result<Tensor, CalcError> {
        Ok(self.get(q)?.values())
    }

    fn compute(&mut self, q: Quantity) -> Result<JetTensor, CalcError> {
        let n = self.n;
        let slots = q.slots();
        match q {
            Quantity::LoweredDirection => {
                let d = self.f2_dy()?;
                JetTensor::from_fn(n, slots, |i| Ok(d[i[0]].scale(0.5)))
            }
            Quantity::Fundamental => {
                let d = self.f2_dy()?;
                let yv: Vec<usize> = (0..n).map(|i| self.yvar(i)).collect();
                JetTensor::from_fn_canonical(n, slots, sorted, |i| {
                    Ok(d[i[0]].derivative(yv[i[1]])?.scale(0.5))
                })
            }
            Quantity::InverseFundamental => {
                let g = self.get(Quantity::Fundamental)?;
                let (inv, cond) = invert_jet_matrix(&g.comps, n)?;
                self.condition_number = Some(cond);
                Ok(JetTensor {
                    dim: n,
                    slots: slots.to_vec(),
                    comps: inv,
                })
            }
            Quantity::Angular => {
                let g = self.get(Quantity::Fundamental)?;
                let yl = self.get(Quantity::LoweredDirection)?;
                let inv_f2 = self.f2.recip()?;
                JetTensor::from_fn_canonical(n, slots, sorted, |i| {
                    let yy = yl.at(&[i[0]]) * yl.at(&[i[1]]);
                    Ok(g.at(i) - &(&yy * &inv_f2))
                })
            }
            Quantity::Cartan => {
                let g = self.get(Quantity::Fundamental)?;
                let yv: Vec<usize> = (0..n).map(|i| self.yvar(i)).collect();
                JetTensor::from_fn_canonical(n, slots, sorted, |i| {
                    Ok(g.at(&i[..2]).derivative(yv[i[2]])?.scale(0.5))
                })
            }
            Quantity::MeanCartan => {
                let c = self.get(Quantity::Cartan)?;
                let ginv = self.get(Quantity::InverseFundamental)?;
                let zero = self.zero();
                JetTensor::from_fn(n, slots, |i| Ok(trace_last_two(&c, &ginv, i[0], &zero)))
            }
            Quantity::Spray => {
                let ginv = self.get(Quantity::InverseFundamental)?;
                let d = self.f2_dy()?;
                let y = self.y_jet();
                let zero = self.zero();
                // w_l = d^2F^2/dx^k dy^l y^k - dF^2/dx^l
                let mut w = Vec::with_capacity(n);
                for l in 0..n {
                    let mut acc = zero.clone();
                    for k in 0..n {
                        acc = acc + &d[l].derivative(self.xvar(k))? * &y.comps[k];
                    }
                    acc = acc - self.f2.derivative(self.xvar(l))?;
                    w.push(acc);
                }
                JetTensor::from_fn(n, slots, |i| {
                    let s = (0..n).fold(zero.clone(), |acc, l| acc + ginv.at(&[i[0], l]) * &w[l]);
                    Ok(s.scale(0.25))
                })
            }
            Quantity::NonlinearConnection => {
                let g = self.get(Quantity::Spray)?;
                let n0 = self.n;
                g.derivative_slot(|l| n0 + l)
            }
            Quantity::Berwald => {
                let nc = self.get(Quantity::NonlinearConnection)?;
                let yv: Vec<usize> = (0..n).map(|i| self.yvar(i)).collect();
                JetTensor::from_fn_canonical(n, slots, sorted_tail, |i| {
                    Ok(nc.at(&i[..2]).derivative(yv[i[2]])?)
                })
            }
            Quantity::BerwaldCurvature => {
                let b = self.get(Quantity::Berwald)?;
                let yv: Vec<usize> = (0..n).map(|i| self.yvar(i)).collect();
                JetTensor::from_fn_canonical(n, slots, sorted_tail, |i| {
                    Ok(b.at(&i[..3]).derivative(yv[i[3]])?)
                })
            }
            Quantity::Landsberg => {
                let c = self.get(Quantity::Cartan)?;
                let dc = self.h_covariant(&c)?;
                Ok(self.contract_last_with_y(&dc))
            }
            Quantity::MeanLandsberg => {
                let l = self.get(Quantity::Landsberg)?;
                let ginv = self.get(Quantity::InverseFundamental)?;
                let zero = self.zero();
                JetTensor::from_fn(n, slots, |i| Ok(trace_last_two(&l, &ginv, i[0], &zero)))
            }
            Quantity::Matsumoto => {
                let c = self.get(Quantity::Cartan)?;
                let i1 = self.get(Quantity::MeanCartan)?;
                let h = self.get(Quantity::Angular)?;
                trace_free_part(&c, &i1, &h)
            }
            Quantity::PReducibility => {
                let l = self.get(Quantity::Landsberg)?;
                let j = self.get(Quantity::MeanLandsberg)?;
                let h = self.get(Quantity::Angular)?;
                trace_free_part(&l, &j, &h)
            }
            Quantity::Stretch => {
                let l = self.get(Quantity::Landsberg)?;
                let dl = self.h_covariant(&l)?;
                JetTensor::from_fn(n, slots, |i| {
                    let (a, b) = (dl.at(i), dl.at(&[i[0], i[1], i[3], i[2]]));
                    Ok((a - b).scale(2.0))
                })
            }
            Quantity::Riemann => {
                let g = self.get(Quantity::Spray)?;
                let nc = self.get(Quantity::NonlinearConnection)?;
                let b = self.get(Quantity::Berwald)?;
                let y = self.y_jet();
                let zero = self.zero();
                JetTensor::from_fn(n, slots, |idx| {
                    let (i, k) = (idx[0], idx[1]);
                    let mut r = g.at(&[i]).derivative(k)?.scale(2.0);
                    for j in 0..n {
                        r = r - &y.comps[j] * &nc.at(&[i, k]).derivative(j)?;
                        r = r + (g.at(&[j]) * b.at(&[i, j, k])).scale(2.0);
                        r = r - nc.at(&[i, j]) * nc.at(&[j, k]);
                    }
                    Ok(r + &zero)
                })
            }
            Quantity::RiemannVertical => {
                let r = self.get(Quantity::Riemann)?;
                let n0 = self.n;
                r.derivative_slot(|l| n0 + l)
            }
        }
    }

    /// Horizontal covariant derivative with respect to the Berwald
    /// connection; appends one lower slot.
    pub fn h_covariant(&mut self, t: &JetTensor) -> Result<JetTensor, CalcError> {
        self.check_order("horizontal covariant derivative", Quantity::Berwald.min_order())?;
        let n = self.n;
        let nc = self.get(Quantity::NonlinearConnection)?;
        let b = self.get(Quantity::Berwald)?;
        let dx = t.derivative_slot(|l| l)?;
        let dy = t.derivative_slot(|m| n + m)?;
        let r = t.rank();
        let mut slots = t.slots.clone();
        slots.push(Slot::Lower);
        let zero = self.zero();
        JetTensor::from_fn(n, &slots, |idx| {
            let (head, l) = (&idx[..r], idx[r]);
            let mut acc = dx.at(idx).clone() + &zero;
            let mut j = idx.to_vec();
            for m in 0..n {
                j[r] = m;
                acc = acc - nc.at(&[m, l]) * dy.at(&j);
            }
            let mut k = head.to_vec();
            for (a, slot) in t.slots.iter().enumerate() {
                for m in 0..n {
                    k[a] = m;
                    match slot {
                        Slot::Lower => acc = acc - t.at(&k) * b.at(&[m, head[a], l]),
                        Slot::Upper => acc = acc + t.at(&k) * b.at(&[head[a], m, l]),
                    }
                }
                k[a] = head[a];
            }
            Ok(acc)
        })
    }

    /// `T_{..|s} y^s`: horizontal derivative along the direction itself.
    pub fn transport(&mut self, t: &JetTensor) -> Result<JetTensor, CalcError> {
        let d = self.h_covariant(t)?;
        Ok(self.contract_last_with_y(&d))
    }

    fn contract_last_with_y(&self, t: &JetTensor) -> JetTensor {
        let n = self.n;
        let r = t.rank() - 1;
        let y = self.y_jet();
        let zero = self.zero();
        JetTensor::from_fn(n, &t.slots[..r], |idx| {
            let mut j = idx.to_vec();
            j.push(0);
            let mut acc = zero.clone();
            for s in 0..n {
                j[r] = s;
                acc = acc + t.at(&j) * &y.comps[s];
            }
            Ok(acc)
        })
        .expect("contraction cannot fail")
    }

    /// Scale-free norms of a quantity at the base point.
    pub fn norms(&mut self, q: Quantity) -> Result<Norms, CalcError> {
        let t = self.value(q)?;
        self.norms_of(&t, q.y_degree())
    }

    /// g-norm of an arbitrary tensor, with scale-free normalization for a
    /// given homogeneity degree.
    pub fn norms_of(&mut self, t: &Tensor, y_degree: i32) -> Result<Norms, CalcError> {
        let g = self.value(Quantity::Fundamental)?;
        let ginv = self.value(Quantity::InverseFundamental)?;
        let gnorm = t.g_norm(&g, &ginv);
        Ok(Norms {
            raw: t.frobenius(),
            g: gnorm,
            scale_free: gnorm * self.f().powi(-y_degree),
        })
    }

    /// Flag curvature of the flag spanned by `y` and `u`.
    pub fn flag_curvature(&mut self, u: &[f64]) -> Result<f64, CalcError> {
        let n = self.n;
        if u.len() != n {
            return Err(CalcError::Direction {
                expected: n,
                got: u.len(),
            });
        }
        let g = self.value(Quantity::Fundamental)?;
        let r = self.value(Quantity::Riemann)?;
        let y = &self.point.y;
        let gdot = |a: &[f64], b: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += g.get(&[i, j]) * a[i] * b[j];
                }
            }
            s
        };
        let (gyy, gyu, guu) = (gdot(y, y), gdot(y, u), gdot(u, u));
        let perp: Vec<f64> = (0..n).map(|i| u[i] - gyu / gyy * y[i]).collect();
        let gpp = gdot(&perp, &perp);
        let ratio = (gpp / guu.max(f64::MIN_POSITIVE)).max(0.0).sqrt();
        if !(ratio >= FLAG_DEGENERACY) {
            return Err(CalcError::DegenerateFlag { ratio });
        }
        let ru: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| r.get(&[i, k]) * perp[k]).sum())
            .collect();
        Ok(gdot(&perp, &ru) / (gyy * gpp))
    }

    /// Isotropic fit `R^i_k ~ K F^2 h^i_k` with `K = R^m_m / ((n-1) F^2)`.
    ///
    /// The residual is `|R - K F^2 h|_g / (F^2 (1 + |K|))`, homogeneous of
    /// degree zero in `y`.
    pub fn scalar_curvature_fit(&mut self) -> Result<ScalarFit, CalcError> {
        let n = self.n;
        let r = self.value(Quantity::Riemann)?;
        let f2 = self.f2.value();
        let trace: f64 = (0..n).map(|m| r.get(&[m, m])).sum();
        let k = trace / ((n as f64 - 1.0) * f2);
        let model = self.isotropic_riemann(k)?;
        let diff = r.sub(&model);
        let norms = self.norms_of(&diff, 2)?;
        Ok(ScalarFit {
            k,
            residual: norms.scale_free / (1.0 + k.abs()),
        })
    }

    /// `K F^2 h^i_k` for a given value of `K`.
    pub fn isotropic_riemann(&mut self, k: f64) -> Result<Tensor, CalcError> {
        let n = self.n;
        let yl = self.value(Quantity::LoweredDirection)?;
        let f2 = self.f2.value();
        let y = self.point.y.clone();
        Ok(Tensor::from_fn(n, &[Slot::Upper, Slot::Lower], |idx| {
            let (i, kk) = (idx[0], idx[1]);
            let delta = if i == kk { 1.0 } else { 0.0 };
            k * (f2 * delta - y[i] * yl.get(&[kk]))
        }))
    }

    /// JSON-ready dump of a quantity.
    pub fn dump(&mut self, q: Quantity) -> Result<TensorDump, CalcError> {
        let t = self.value(q)?;
        let norms = self.norms(q)?;
        Ok(TensorDump {
            quantity: q.name().to_string(),
            point: self.point.clone(),
            rank: t.rank(),
            dim: self.n,
            variance: t.slots.clone(),
            symmetry: q.symmetry(),
            components: t.nested(),
            norms,
            warnings: self.warnings(),
        })
    }
}

/// `g^jk T_ijk` for the fixed first index `i`.
fn trace_last_two(t: &JetTensor, ginv: &JetTensor, i: usize, zero: &Jet) -> Jet {
    let n = t.dim;
    let mut acc = zero.clone();
    for j in 0..n {
        for k in 0..n {
            acc = acc + ginv.at(&[j, k]) * t.at(&[i, j, k]);
        }
    }
    acc
}

/// `T_ijk - (A_i h_jk + A_j h_ik + A_k h_ij) / (n + 1)`.
fn trace_free_part(t: &JetTensor, a: &JetTensor, h: &JetTensor) -> Result<JetTensor, CalcError> {
    let n = t.dim;
    let c = 1.0 / (n as f64 + 1.0);
    JetTensor::from_fn_canonical(n, &t.slots, sorted, |idx| {
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        let sym = a.at(&[i]) * h.at(&[j, k]) + a.at(&[j]) * h.at(&[i, k]) + a.at(&[k]) * h.at(&[i, j]);
        Ok(t.at(idx) - &sym.scale(c))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    /// Euclidean norm of the components.
    pub raw: f64,
    /// Full g-contraction norm.
    pub g: f64,
    /// g-norm times `F^-degree`, homogeneous of degree zero in `y`.
    pub scale_free: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarFit {
    pub k: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorDump {
    pub quantity: String,
    pub point: EvalPoint,
    pub rank: usize,
    pub dim: usize,
    pub variance: Vec<Slot>,
    pub symmetry: Symmetry,
    pub components: serde_json::Value,
    pub norms: Norms,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Evaluates `f` on a fresh [`Geometry`] at every point, in parallel,
/// returning results in input order.
pub fn evaluate_points<T, F>(
    spec: &MetricSpec,
    points: &[EvalPoint],
    order: usize,
    f: F,
) -> Vec<Result<T, CalcError>>
where
    T: Send,
    F: Fn(&mut Geometry<'_>) -> Result<T, CalcError> + Sync,
{
    points
        .par_iter()
        .map(|p| {
            let mut geo = Geometry::new(spec, p, order)?;
            f(&mut geo)
        })
        .collect()
}

/// Spray coefficients `G^i(x, y)` from a second-order expansion.
pub fn spray_value(spec: &MetricSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CalcError> {
    let mut geo = Geometry::new(spec, &EvalPoint::new(x.to_vec(), y.to_vec()), 2)?;
    Ok(geo.value(Quantity::Spray)?.data)
}

/// One classical Runge-Kutta step of `x' = y, y' = -2 G(x, y)`.
pub fn flow_step(spec: &MetricSpec, x: &[f64], y: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>), CalcError> {
    let n = x.len();
    let rhs = |x: &[f64], y: &[f64]| -> Result<(Vec<f64>, Vec<f64>), CalcError> {
        let g = spray_value(spec, x, y)?;
        Ok((y.to_vec(), g.iter().map(|v| -2.0 * v).collect()))
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { (0..n).map(|i| a[i] + s * b[i]).collect() };
    let (k1x, k1y) = rhs(x, y)?;
    let (k2x, k2y) = rhs(&axpy(x, dt / 2.0, &k1x), &axpy(y, dt / 2.0, &k1y))?;
    let (k3x, k3y) = rhs(&axpy(x, dt / 2.0, &k2x), &axpy(y, dt / 2.0, &k2y))?;
    let (k4x, k4y) = rhs(&axpy(x, dt, &k3x), &axpy(y, dt, &k3y))?;
    let comb = |v: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| v[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    Ok((comb(x, &k1x, &k2x, &k3x, &k4x), comb(y, &k1y, &k2y, &k3y, &k4y)))
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicState {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicTrace {
    pub states: Vec<GeodesicState>,
    /// The path left the domain box (or hit a singular point) and was cut.
    pub truncated: bool,
    /// Largest `|F(t) - F(0)| / F(0)` along the path.
    pub max_relative_drift: f64,
}

/// Fixed-step RK4 integration of the geodesic equation.
pub fn geodesic_trace(
    spec: &MetricSpec,
    x0: &[f64],
    y0: &[f64],
    steps: usize,
    dt: f64,
) -> Result<GeodesicTrace, CalcError> {
    let f0 = spec.f_value(x0, y0)?;
    let mut states = vec![GeodesicState {
        t: 0.0,
        x: x0.to_vec(),
        y: y0.to_vec(),
        f: f0,
    }];
    let mut truncated = false;
    let mut drift: f64 = 0.0;
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    for step in 1..=steps {
        let next = flow_step(spec, &x, &y, dt);
        let Ok((nx, ny)) = next else {
            truncated = true;
            break;
        };
        if !spec.domain.contains(&nx) {
            truncated = true;
            break;
        }
        let Ok(f) = spec.f_value(&nx, &ny) else {
            truncated = true;
            break;
        };
        drift = drift.max((f - f0).abs() / f0);
        states.push(GeodesicState {
            t: step as f64 * dt,
            x: nx.clone(),
            y: ny.clone(),
            f,
        });
        (x, y) = (nx, ny);
    }
    Ok(GeodesicTrace {
        states,
        truncated,
        max_relative_drift: drift,
    })
}

/// Default step for derivatives along the geodesic flow.
pub const FLOW_STEP: f64 = 1e-3;

/// Derivative of `f` along the geodesic through `p` with velocity `p.y`,
/// by central differences at steps `h` and `h/2` with Richardson
/// extrapolation.
pub fn flow_derivative(
    spec: &MetricSpec,
    p: &EvalPoint,
    h: f64,
    f: impl Fn(&EvalPoint) -> Result<Vec<f64>, CalcError>,
) -> Result<Vec<f64>, CalcError> {
    let central = |h: f64| -> Result<Vec<f64>, CalcError> {
        let (xp, yp) = flow_step(spec, &p.x, &p.y, h)?;
        let (xm, ym) = flow_step(spec, &p.x, &p.y, -h)?;
        let fp = f(&EvalPoint::new(xp, yp))?;
        let fm = f(&EvalPoint::new(xm, ym))?;
        Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect())
}

/// Transport `T_{..|s} y^s` of an all-lower tensor field, from values of
/// the field along the geodesic flow: `dT/dt - sum_a T_{..m..} N^m_{i_a}`.
pub fn flow_transport(
    spec: &MetricSpec,
    p: &EvalPoint,
    order: usize,
    h: f64,
    field: impl Fn(&mut Geometry<'_>) -> Result<Tensor, CalcError>,
) -> Result<Tensor, CalcError> {
    let mut geo = Geometry::new(spec, p, order)?;
    let t = field(&mut geo)?;
    assert!(t.slots.iter().all(|s| *s == Slot::Lower), "flow_transport expects lower slots");
    let nc = geo.value(Quantity::NonlinearConnection)?;
    let dt = flow_derivative(spec, p, h, |q| {
        let mut g = Geometry::new(spec, q, order)?;
        Ok(field(&mut g)?.data)
    })?;
    let mut out = Tensor {
        dim: t.dim,
        slots: t.slots.clone(),
        data: dt,
    };
    let n = t.dim;
    for idx in indices(n, t.rank()) {
        let mut v = out.get(&idx);
        let mut k = idx.clone();
        for a in 0..t.rank() {
            for m in 0..n {
                k[a] = m;
                v -= t.get(&k) * nc.get(&[m, idx[a]]);
            }
            k[a] = idx[a];
        }
        out.set(&idx, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{builtin, Domain};
    use approx::assert_relative_eq;

    fn pt(x: &[f64], y: &[f64]) -> EvalPoint {
        EvalPoint::new(x.to_vec(), y.to_vec())
    }

    #[test]
    fn euclidean_basics() {
        let spec = builtin("euclidean2").unwrap();
        let mut geo = Geometry::new(&spec, &pt(&[0.1, 0.2], &[1.0, 0.0]), 6).unwrap();
        let g = geo.value(Quantity::Fundamental).unwrap();
        assert_eq!(g.data, vec![1.0, 0.0, 0.0, 1.0]);
        let h = geo.value(Quantity::Angular).unwrap();
        for (a, b) in h.data.iter().zip([0.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for q in [Quantity::Cartan, Quantity::Spray, Quantity::Landsberg, Quantity::Stretch, Quantity::Riemann] {
            assert!(geo.value(q).unwrap().max_abs() < 1e-14, "{q}");
        }
    }

    #[test]
    fn inverse_is_inverse_as_jets() {
        let spec = builtin("funk-disk").unwrap();
        let mut geo = Geometry::new(&spec, &pt(&[0.2, -0.1], &[0.4, 1.1]), 6).unwrap();
        let g = geo.get(Quantity::Fundamental).unwrap();
        let gi = geo.get(Quantity::InverseFundamental).unwrap();
        let n = 2;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Jet::zero(g.comps[0].layout(), 6);
                for m in 0..n {
                    acc = acc + gi.at(&[i, m]) * g.at(&[m, j]);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(acc.value(), expect, epsilon = 1e-13);
                for c in &acc.coeffs()[1..] {
                    assert!(c.abs() < 1e-10, "{c}");
                }
            }
        }
        assert!(geo.condition_number().unwrap() >= 1.0);
    }

    #[test]
    fn order_requirements_are_enforced() {
        let spec = builtin("euclidean2").unwrap();
        let mut geo = Geometry::new(&spec, &pt(&[0.0, 0.0], &[1.0, 0.0]), 4).unwrap();
        assert!(geo.value(Quantity::Landsberg).is_ok());
        assert!(matches!(
            geo.value(Quantity::Stretch),
            Err(CalcError::OrderTooSmall { needed: 5, .. })
        ));
    }

    #[test]
    fn quantity_names_round_trip() {
        for q in Quantity::ALL {
            assert_eq!(Quantity::from_name(q.name()).unwrap(), q);
        }
        assert!(Quantity::from_name("nope").is_err());
    }

    #[test]
    fn transport_matches_spray_form() {
        // y^l d_l T = y^l dT/dx^l - 2 G^m dT/dy^m and G^m_{il} y^l = N^m_i,
        // so the transport of C can be assembled without the full derivative.
        let spec = builtin("randers-const-beta").unwrap();
        let p = pt(&[0.3, -0.2, 0.1], &[0.5, 1.0, -0.7]);
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        let n = 3;
        let l = geo.value(Quantity::Landsberg).unwrap();
        let c = geo.get(Quantity::Cartan).unwrap();
        let g = geo.value(Quantity::Spray).unwrap();
        let nc = geo.value(Quantity::NonlinearConnection).unwrap();
        for idx in indices(n, 3) {
            let cj = c.at(&idx);
            let mut v = 0.0;
            for s in 0..n {
                v += p.y[s] * cj.derivative(s).unwrap().value();
                v -= 2.0 * g.get(&[s]) * cj.derivative(n + s).unwrap().value();
            }
            let mut k = idx.clone();
            for a in 0..3 {
                for m in 0..n {
                    k[a] = m;
                    v -= c.at(&k).value() * nc.get(&[m, idx[a]]);
                }
                k[a] = idx[a];
            }
            assert_relative_eq!(l.get(&idx), v, epsilon = 1e-12);
        }
        assert!(l.max_abs() > 1e-3, "Landsberg tensor should not vanish here");
    }

    #[test]
    fn landsberg_equals_berwald_curvature_contraction() {
        // L_ijk = -1/2 y_m G^m_ijk, an independent route through the spray.
        let spec = builtin("randers-const-beta").unwrap();
        let p = pt(&[-0.4, 0.5, 0.2], &[1.0, -0.3, 0.6]);
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        let l = geo.value(Quantity::Landsberg).unwrap();
        let b = geo.value(Quantity::BerwaldCurvature).unwrap();
        let yl = geo.value(Quantity::LoweredDirection).unwrap();
        for idx in indices(3, 3) {
            let v: f64 = (0..3)
                .map(|m| -0.5 * yl.get(&[m]) * b.get(&[m, idx[0], idx[1], idx[2]]))
                .sum();
            assert_relative_eq!(l.get(&idx), v, epsilon = 1e-11);
        }
    }

    #[test]
    fn metricity_facts() {
        let spec = builtin("funk-disk").unwrap();
        let p = pt(&[0.1, 0.3], &[-0.8, 0.6]);
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        // F_{|l} = 0
        let f = JetTensor {
            dim: 2,
            slots: vec![],
            comps: vec![geo.f_jet().clone()],
        };
        let df = geo.h_covariant(&f).unwrap().values();
        assert!(df.max_abs() < 1e-12, "{df:?}");
        // y^i_{|l} = 0
        let y = geo.y_jet();
        assert!(geo.h_covariant(&y).unwrap().values().max_abs() < 1e-12);
        // g_{ij|l} y^l = -2 L_ijl y^l = 0
        let g = geo.get(Quantity::Fundamental).unwrap();
        assert!(geo.transport(&g).unwrap().values().max_abs() < 1e-12);
        // g_{ij|l} = -2 L_ijl
        let dg = geo.h_covariant(&g).unwrap().values();
        let l = geo.value(Quantity::Landsberg).unwrap();
        for idx in indices(2, 3) {
            assert_relative_eq!(dg.get(&idx), -2.0 * l.get(&idx), epsilon = 1e-11);
        }
    }

    #[test]
    fn sphere_flag_curvature_is_one() {
        let spec = builtin("sphere-projective").unwrap();
        let p = pt(&[0.3, -0.5, 0.2], &[0.2, 0.9, -0.4]);
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        for u in [[1.0, 0.0, 0.0], [0.3, -0.2, 1.0]] {
            assert_relative_eq!(geo.flag_curvature(&u).unwrap(), 1.0, epsilon = 1e-10);
        }
        let fit = geo.scalar_curvature_fit().unwrap();
        assert_relative_eq!(fit.k, 1.0, epsilon = 1e-10);
        assert!(fit.residual < 1e-10);
        assert!(matches!(
            geo.flag_curvature(&[0.4, 1.8, -0.8]),
            Err(CalcError::DegenerateFlag { .. })
        ));
    }

    #[test]
    fn spray_vanishes_for_minkowski_and_sphere_origin() {
        let quartic = builtin("quartic-minkowski").unwrap();
        let g = spray_value(&quartic, &[0.2, 0.1, -0.3], &[1.0, 0.5, 0.2]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let sphere = builtin("sphere-projective").unwrap();
        let g = spray_value(&sphere, &[0.0, 0.0, 0.0], &[1.0, 0.5, 0.2]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn euclidean_geodesic_is_a_line() {
        let spec = builtin("euclidean2").unwrap();
        let trace = geodesic_trace(&spec, &[0.0, 0.0], &[1.0, 0.0], 50, 0.01).unwrap();
        assert!(!trace.truncated);
        let last = trace.states.last().unwrap();
        assert_relative_eq!(last.x[0], 0.5, epsilon = 1e-14);
        assert!(last.x[1].abs() < 1e-15);
        let cut = geodesic_trace(&spec, &[0.0, 0.0], &[1.0, 0.0], 500, 0.01).unwrap();
        assert!(cut.truncated);
        assert!(cut.states.len() < 501);
    }

    #[test]
    fn geodesics_conserve_f() {
        let spec = builtin("funk-disk").unwrap();
        let trace = geodesic_trace(&spec, &[0.1, 0.0], &[0.3, 0.4], 100, 0.01).unwrap();
        assert!(trace.max_relative_drift < 1e-6, "{}", trace.max_relative_drift);
    }

    #[test]
    fn flow_transport_matches_jets() {
        let spec = builtin("randers-const-beta").unwrap();
        let p = pt(&[0.2, 0.4, -0.3], &[0.7, -0.5, 0.9]);
        let flow = flow_transport(&spec, &p, 4, FLOW_STEP, |g| g.value(Quantity::Cartan)).unwrap();
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        let l = geo.value(Quantity::Landsberg).unwrap();
        let err = flow.sub(&l).max_abs() / l.max_abs();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn declared_symmetries_hold() {
        let spec = crate::metric::random_expression_metric(3, 3).unwrap();
        let p = spec.sample(1, 9).unwrap().points.remove(0);
        let mut geo = Geometry::new(&spec, &p, 6).unwrap();
        for q in Quantity::ALL {
            let t = geo.value(q).unwrap();
            let sym = q.symmetry();
            for group in &sym.symmetric {
                for w in group.windows(2) {
                    assert!(t.max_asymmetry(w[0], w[1], false) <= 1e-10, "{q}");
                }
            }
            for [a, b] in &sym.antisymmetric {
                assert!(t.max_asymmetry(*a, *b, true) <= 1e-10, "{q}");
            }
        }
    }

    #[test]
    fn riemannian_cartan_vanishes() {
        let spec = MetricSpec::riemannian(
            "r",
            &[&["1 + x2^2", "0.1 * x1"], &["0.1 * x1", "2"]],
            Domain::cube(2, 1.0),
        )
        .unwrap();
        let mut geo = Geometry::new(&spec, &pt(&[0.3, 0.7], &[1.0, 2.0]), 6).unwrap();
        assert!(geo.norms(Quantity::Cartan).unwrap().scale_free < 1e-12);
        assert!(geo.norms(Quantity::BerwaldCurvature).unwrap().scale_free < 1e-12);
    }

    #[test]
    fn tensor_dump_shape() {
        let spec = builtin("euclidean2").unwrap();
        let mut geo = Geometry::new(&spec, &pt(&[0.0, 0.0], &[1.0, 0.0]), 6).unwrap();
        let dump = geo.dump(Quantity::Fundamental).unwrap();
        let v = serde_json::to_value(&dump).unwrap();
        assert_eq!(v["components"], serde_json::json!([[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(v["rank"], 2);
        assert_eq!(v["norms"]["scale_free"], serde_json::json!(2f64.sqrt()));
    }
}
