//! Truncated multivariate Taylor polynomials ("jets").
//!
//! A [`Jet`] stores the Taylor coefficients of a scalar function of `nvars`
//! variables around a point, up to a total degree `order`. Coefficients are
//! kept densely in graded-lexicographic order, so truncating to a lower order
//! is a prefix operation and every jet of lower order shares the same
//! [`JetLayout`].
//!
//! Multiplication is a Cauchy product driven by a precomputed table of index
//! pairs grouped by result index. Non-polynomial primitives (`sqrt`, rational
//! powers, reciprocals) compose the jet with the univariate Taylor series of
//! `t^a` around the jet's constant term.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

/// Largest truncation order a layout may be built for.
pub const MAX_ORDER: usize = 10;

/// Default truncation order: enough for every curvature quantity in the
/// pipeline (two horizontal derivatives of the Cartan tensor).
pub const DEFAULT_ORDER: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("jet order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("jet order must be at least {min}, got {order}")]
    OrderTooSmall { order: usize, min: usize },
    #[error("variable count mismatch: {left} vs {right}")]
    NvarsMismatch { left: usize, right: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: usize },
    #[error("division by a jet with zero value")]
    DivisionByZero,
    #[error("sqrt of non-positive value {0}")]
    SqrtDomain(f64),
    #[error("power {num}/{den} of non-positive value {value}")]
    PowDomain { num: i64, den: i64, value: f64 },
    #[error("multi-index degree {degree} exceeds jet order {order}")]
    DegreeOverflow { degree: usize, order: usize },
    #[error("multi-index has {got} entries, expected {expected}")]
    MultiIndexLength { got: usize, expected: usize },
    #[error("direction y must be nonzero")]
    ZeroDirection,
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("point dimensions differ: x has {x}, y has {y}")]
    PointShape { x: usize, y: usize },
}

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn new(exponents: Vec<u8>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(nvars: usize) -> Self {
        MultiIndex(vec![0; nvars])
    }

    /// Sum of `count` unit steps along each listed variable.
    pub fn from_vars(nvars: usize, vars: &[usize]) -> Self {
        let mut e = vec![0u8; nvars];
        for &v in vars {
            e[v] += 1;
        }
        MultiIndex(e)
    }

    pub fn exponents(&self) -> &[u8] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// Product of factorials of the exponents.
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&e| (1..=e as u64).product::<u64>() as f64)
            .product()
    }
}

/// Shared index tables for jets in `nvars` variables up to `max_order`.
pub struct JetLayout {
    nvars: usize,
    max_order: usize,
    /// Flattened exponents, `nvars` per monomial, graded-lex order.
    exponents: Vec<u8>,
    /// `degree_end[d]` = number of monomials of degree `<= d`.
    degree_end: Vec<usize>,
    lookup: HashMap<Vec<u8>, usize>,
    /// CSR table of Cauchy-product pairs grouped by result index.
    pair_start: Vec<usize>,
    pairs: Vec<(u32, u32)>,
    /// `raise[v * len + i]` = index of monomial `i + e_v`, or `NONE`.
    raise: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl fmt::Debug for JetLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetLayout")
            .field("nvars", &self.nvars)
            .field("max_order", &self.max_order)
            .field("len", &self.len(self.max_order))
            .finish()
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl JetLayout {
    fn build(nvars: usize, max_order: usize) -> Self {
        // Graded lexicographic enumeration: by degree, then lexicographically
        // descending in the leading variable.
        let mut exponents = Vec::new();
        let mut degree_end = Vec::with_capacity(max_order + 1);
        let mut count = 0usize;
        for d in 0..=max_order {
            let mut current = vec![0u8; nvars];
            enumerate_degree(nvars, d, 0, &mut current, &mut |m| {
                exponents.extend_from_slice(m);
                count += 1;
            });
            degree_end.push(count);
        }
        debug_assert_eq!(count, binomial(nvars + max_order, max_order));

        let mut lookup = HashMap::with_capacity(count);
        for i in 0..count {
            lookup.insert(exponents[i * nvars..(i + 1) * nvars].to_vec(), i);
        }

        let mut raise = vec![NONE; nvars * count];
        for i in 0..count {
            let base = &exponents[i * nvars..(i + 1) * nvars];
            for v in 0..nvars {
                let mut m = base.to_vec();
                m[v] += 1;
                if let Some(&j) = lookup.get(&m) {
                    raise[v * count + i] = j as u32;
                }
            }
        }

        // For each result monomial r, all splittings r = p + q.
        let mut pair_start = Vec::with_capacity(count + 1);
        let mut pairs = Vec::new();
        for r in 0..count {
            pair_start.push(pairs.len());
            let target = &exponents[r * nvars..(r + 1) * nvars];
            let deg_r: usize = target.iter().map(|&e| e as usize).sum();
            for p in 0..degree_end[deg_r] {
                let pe = &exponents[p * nvars..(p + 1) * nvars];
                if pe.iter().zip(target).all(|(a, b)| a <= b) {
                    let qe: Vec<u8> = target.iter().zip(pe).map(|(t, a)| t - a).collect();
                    let q = lookup[&qe];
                    pairs.push((p as u32, q as u32));
                }
            }
        }
        pair_start.push(pairs.len());

        JetLayout {
            nvars,
            max_order,
            exponents,
            degree_end,
            lookup,
            pair_start,
            pairs,
            raise,
        }
    }

    /// Shared layout for `(nvars, max_order)`; built once per process.
    pub fn shared(nvars: usize, max_order: usize) -> Result<Arc<JetLayout>, JetError> {
        if max_order > MAX_ORDER {
            return Err(JetError::OrderTooLarge {
                order: max_order,
                max: MAX_ORDER,
            });
        }
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetLayout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet layout cache poisoned");
        Ok(guard
            .entry((nvars, max_order))
            .or_insert_with(|| Arc::new(JetLayout::build(nvars, max_order)))
            .clone())
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of coefficients of a jet truncated at `order`.
    pub fn len(&self, order: usize) -> usize {
        self.degree_end[order]
    }

    pub fn exponents(&self, index: usize) -> &[u8] {
        &self.exponents[index * self.nvars..(index + 1) * self.nvars]
    }

    pub fn index_of(&self, m: &MultiIndex) -> Option<usize> {
        self.lookup.get(m.exponents()).copied()
    }
}

fn enumerate_degree(
    nvars: usize,
    remaining: usize,
    var: usize,
    current: &mut Vec<u8>,
    sink: &mut dyn FnMut(&[u8]),
) {
    if var == nvars - 1 {
        current[var] = remaining as u8;
        sink(current);
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e as u8;
        enumerate_degree(nvars, remaining - e, var + 1, current, sink);
    }
    current[var] = 0;
}

/// Truncated Taylor polynomial of a scalar function.
#[derive(Clone)]
pub struct Jet {
    layout: Arc<JetLayout>,
    order: usize,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("nvars", &self.layout.nvars)
            .field("order", &self.order)
            .field("value", &self.value())
            .finish()
    }
}

impl Jet {
    pub fn constant(layout: &Arc<JetLayout>, order: usize, value: f64) -> Self {
        let mut coeffs = vec![0.0; layout.len(order)];
        coeffs[0] = value;
        Jet {
            layout: layout.clone(),
            order,
            coeffs,
        }
    }

    pub fn zero(layout: &Arc<JetLayout>, order: usize) -> Self {
        Self::constant(layout, order, 0.0)
    }

    /// Coordinate function `xi_var` evaluated at `value`.
    pub fn variable(
        layout: &Arc<JetLayout>,
        order: usize,
        var: usize,
        value: f64,
    ) -> Result<Self, JetError> {
        if var >= layout.nvars {
            return Err(JetError::VariableOutOfRange {
                index: var,
                nvars: layout.nvars,
            });
        }
        let mut j = Self::constant(layout, order, value);
        if order >= 1 {
            // degree-1 monomials come right after the constant, in variable order
            j.coeffs[1 + var] = 1.0;
        }
        Ok(j)
    }

    pub fn from_coeffs(
        layout: &Arc<JetLayout>,
        order: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self, JetError> {
        if order > layout.max_order {
            return Err(JetError::OrderTooLarge {
                order,
                max: layout.max_order,
            });
        }
        assert_eq!(coeffs.len(), layout.len(order), "coefficient count");
        Ok(Jet {
            layout: layout.clone(),
            order,
            coeffs,
        })
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Taylor coefficient of monomial `m` (zero when `m` is beyond the order).
    pub fn coeff(&self, m: &MultiIndex) -> f64 {
        match self.layout.index_of(m) {
            Some(i) if i < self.coeffs.len() => self.coeffs[i],
            _ => 0.0,
        }
    }

    /// Mixed partial derivative `m! * coeff(m)` at the expansion point.
    pub fn partial(&self, m: &MultiIndex) -> Result<f64, JetError> {
        if m.exponents().len() != self.nvars() {
            return Err(JetError::MultiIndexLength {
                got: m.exponents().len(),
                expected: self.nvars(),
            });
        }
        let degree = m.degree();
        if degree > self.order {
            return Err(JetError::DegreeOverflow {
                degree,
                order: self.order,
            });
        }
        Ok(m.factorial() * self.coeff(m))
    }

    /// Partial derivative with respect to the listed variables (repeats allowed).
    pub fn partial_vars(&self, vars: &[usize]) -> Result<f64, JetError> {
        self.partial(&MultiIndex::from_vars(self.nvars(), vars))
    }

    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order {
            return self.clone();
        }
        Jet {
            layout: self.layout.clone(),
            order,
            coeffs: self.coeffs[..self.layout.len(order)].to_vec(),
        }
    }

    /// Jet of `d self / d xi_var`, one order lower.
    pub fn derivative(&self, var: usize) -> Result<Jet, JetError> {
        if var >= self.nvars() {
            return Err(JetError::VariableOutOfRange {
                index: var,
                nvars: self.nvars(),
            });
        }
        if self.order == 0 {
            return Err(JetError::OrderTooSmall { order: 0, min: 1 });
        }
        let order = self.order - 1;
        let len = self.layout.len(order);
        let full = self.layout.len(self.layout.max_order);
        let raise = &self.layout.raise[var * full..(var + 1) * full];
        let coeffs = (0..len)
            .map(|i| {
                let j = raise[i];
                debug_assert!(j != NONE);
                let e = self.layout.exponents(i)[var] as f64 + 1.0;
                e * self.coeffs[j as usize]
            })
            .collect();
        Ok(Jet {
            layout: self.layout.clone(),
            order,
            coeffs,
        })
    }

    fn check_compatible(&self, other: &Jet) -> Result<(), JetError> {
        if self.nvars() != other.nvars() || !Arc::ptr_eq(&self.layout, &other.layout) {
            return Err(JetError::NvarsMismatch {
                left: self.nvars(),
                right: other.nvars(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Result<Jet, JetError> {
        self.check_compatible(other)?;
        let order = self.order.min(other.order);
        let len = self.layout.len(order);
        let coeffs = self.coeffs[..len]
            .iter()
            .zip(&other.coeffs[..len])
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Jet {
            layout: self.layout.clone(),
            order,
            coeffs,
        })
    }

    pub fn try_add(&self, other: &Jet) -> Result<Jet, JetError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Jet) -> Result<Jet, JetError> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Cauchy product truncated at the smaller of the two orders.
    pub fn try_mul(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_compatible(other)?;
        let order = self.order.min(other.order);
        let len = self.layout.len(order);
        let layout = &self.layout;
        let (a, b) = (&self.coeffs, &other.coeffs);
        let mut coeffs = Vec::with_capacity(len);
        for r in 0..len {
            let mut acc = 0.0;
            for &(p, q) in &layout.pairs[layout.pair_start[r]..layout.pair_start[r + 1]] {
                acc += a[p as usize] * b[q as usize];
            }
            coeffs.push(acc);
        }
        Ok(Jet {
            layout: layout.clone(),
            order,
            coeffs,
        })
    }

    pub fn try_div(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_compatible(other)?;
        self.try_mul(&other.recip()?)
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            layout: self.layout.clone(),
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    /// Evaluate `sum_k series[k] * (self - value)^k` by Horner's rule.
    fn compose(&self, series: &[f64]) -> Jet {
        let mut tail = self.clone();
        tail.coeffs[0] = 0.0;
        let mut acc = Jet::constant(&self.layout, self.order, series[self.order]);
        for k in (0..self.order).rev() {
            acc = (&acc * &tail).add_scalar(series[k]);
        }
        acc
    }

    /// Series coefficients `binom(a, k) c^(a-k)` of `t^a` around `t = c`.
    fn power_series(c: f64, a: f64, order: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(order + 1);
        let mut binom = 1.0;
        for k in 0..=order {
            out.push(binom * c.powf(a - k as f64));
            binom *= (a - k as f64) / (k as f64 + 1.0);
        }
        out
    }

    pub fn recip(&self) -> Result<Jet, JetError> {
        let c = self.value();
        if c == 0.0 || !c.is_finite() {
            return Err(JetError::DivisionByZero);
        }
        // (c + t)^-1 = sum (-1)^k t^k / c^(k+1)
        let mut series = Vec::with_capacity(self.order + 1);
        let mut term = 1.0 / c;
        for _ in 0..=self.order {
            series.push(term);
            term *= -1.0 / c;
        }
        Ok(self.compose(&series))
    }

    pub fn sqrt(&self) -> Result<Jet, JetError> {
        let c = self.value();
        if !(c > 0.0) {
            return Err(JetError::SqrtDomain(c));
        }
        Ok(self.compose(&Self::power_series(c, 0.5, self.order)))
    }

    /// `self^(num/den)`. Integer exponents work for any nonzero value;
    /// fractional exponents need a positive value.
    pub fn pow_rational(&self, num: i64, den: i64) -> Result<Jet, JetError> {
        assert!(den > 0, "denominator must be positive");
        if den == 1 {
            return self.powi(num);
        }
        let c = self.value();
        if !(c > 0.0) {
            return Err(JetError::PowDomain {
                num,
                den,
                value: c,
            });
        }
        Ok(self.compose(&Self::power_series(c, num as f64 / den as f64, self.order)))
    }

    pub fn powi(&self, exp: i64) -> Result<Jet, JetError> {
        if exp < 0 {
            return self.recip()?.powi(-exp);
        }
        let mut result = Jet::constant(&self.layout, self.order, 1.0);
        let mut base = self.clone();
        let mut e = exp as u64;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(result)
    }
}

/// Jets of the coordinate functions `x^1..x^n, y^1..y^n` at `(x, y)`.
pub fn seed_variables(x: &[f64], y: &[f64], order: usize) -> Result<Vec<Jet>, JetError> {
    if x.len() != y.len() {
        return Err(JetError::PointShape {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(JetError::DimensionTooSmall(x.len()));
    }
    if order < 1 {
        return Err(JetError::OrderTooSmall { order, min: 1 });
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(JetError::ZeroDirection);
    }
    let layout = JetLayout::shared(2 * x.len(), order)?;
    x.iter()
        .chain(y)
        .enumerate()
        .map(|(v, &val)| Jet::variable(&layout, order, v, val))
        .collect()
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait<&Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                self.$checked(rhs).expect("incompatible jet layouts")
            }
        }
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                (&self).$checked(&rhs).expect("incompatible jet layouts")
            }
        }
        impl $trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                (&self).$checked(rhs).expect("incompatible jet layouts")
            }
        }
        impl $trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                self.$checked(&rhs).expect("incompatible jet layouts")
            }
        }
    };
}

forward_binop!(Add, add, try_add);
forward_binop!(Sub, sub, try_sub);
forward_binop!(Mul, mul, try_mul);

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn layout(nvars: usize, order: usize) -> Arc<JetLayout> {
        JetLayout::shared(nvars, order).unwrap()
    }

    #[test]
    fn coefficient_count_matches_binomial() {
        for (nv, d) in [(4, 6), (6, 6), (8, 4)] {
            let l = layout(nv, d);
            assert_eq!(l.len(d), binomial(nv + d, d));
        }
        assert_eq!(layout(6, 6).len(6), 924);
    }

    #[test]
    fn seeded_variable_is_kronecker() {
        let v = seed_variables(&[0.0, 0.0], &[1.0, 0.0], 2).unwrap();
        assert_eq!(v[0].value(), 0.0);
        assert_eq!(v[0].partial_vars(&[0]).unwrap(), 1.0);
        for k in 1..4 {
            assert_eq!(v[0].partial_vars(&[k]).unwrap(), 0.0);
        }
        // y^1 is variable 2
        assert_eq!(v[2].partial_vars(&[2]).unwrap(), 1.0);
        assert_eq!(v[2].partial_vars(&[3]).unwrap(), 0.0);
        let w = seed_variables(&[0.0, 0.0], &[2.0, 3.0], 2).unwrap();
        assert_eq!(w[3].value(), 3.0);
    }

    #[test]
    fn seeding_rejects_bad_input() {
        assert_eq!(
            seed_variables(&[0.0, 0.0], &[0.0, 0.0], 2).unwrap_err(),
            JetError::ZeroDirection
        );
        assert!(matches!(
            seed_variables(&[0.0, 0.0], &[1.0, 0.0], MAX_ORDER + 1),
            Err(JetError::OrderTooLarge { .. })
        ));
        assert!(matches!(
            seed_variables(&[0.0], &[1.0], 2),
            Err(JetError::DimensionTooSmall(1))
        ));
    }

    #[test]
    fn square_of_variable() {
        let v = seed_variables(&[0.0, 0.0], &[2.0, 1.0], 3).unwrap();
        let sq = &v[2] * &v[2];
        assert_eq!(sq.value(), 4.0);
        assert_eq!(sq.coeff(&MultiIndex::from_vars(4, &[2])), 4.0);
        assert_eq!(sq.coeff(&MultiIndex::from_vars(4, &[2, 2])), 1.0);
        assert_eq!(sq.partial_vars(&[2, 2]).unwrap(), 2.0);
    }

    #[test]
    fn sqrt_of_constant() {
        let l = layout(4, 3);
        let c = Jet::constant(&l, 3, 4.0).sqrt().unwrap();
        assert_eq!(c.value(), 2.0);
        assert!(c.coeffs()[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn geometric_series() {
        let v = seed_variables(&[0.0, 0.0], &[0.0, 1.0], 3).unwrap();
        let one = Jet::constant(v[0].layout(), 3, 1.0);
        let q = one.try_div(&v[2].add_scalar(1.0)).unwrap();
        for (k, expected) in [1.0, -1.0, 1.0, -1.0].iter().enumerate() {
            let m = MultiIndex::from_vars(4, &vec![2; k]);
            assert_relative_eq!(q.coeff(&m), *expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn extract_partials() {
        let v = seed_variables(&[0.0, 0.0], &[1.0, 0.0], 3).unwrap();
        let cube = v[2].powi(3).unwrap();
        assert_relative_eq!(cube.partial_vars(&[2, 2, 2]).unwrap(), 6.0);
        assert_eq!(cube.partial(&MultiIndex::zero(4)).unwrap(), 1.0);
        let mixed = &v[0] * &v[2];
        assert_eq!(mixed.partial_vars(&[0, 2]).unwrap(), 1.0);
        assert!(matches!(
            cube.partial_vars(&[2, 2, 2, 2]),
            Err(JetError::DegreeOverflow { .. })
        ));
    }

    #[test]
    fn domain_errors() {
        let l = layout(4, 2);
        let z = Jet::zero(&l, 2);
        assert_eq!(z.recip().unwrap_err(), JetError::DivisionByZero);
        assert!(matches!(
            Jet::constant(&l, 2, -1.0).sqrt(),
            Err(JetError::SqrtDomain(_))
        ));
        assert!(matches!(
            Jet::constant(&l, 2, -1.0).pow_rational(1, 4),
            Err(JetError::PowDomain { .. })
        ));
        // integer powers are fine for negative values
        assert_eq!(Jet::constant(&l, 2, -2.0).powi(3).unwrap().value(), -8.0);
        let other = Jet::zero(&layout(6, 2), 2);
        assert!(matches!(
            z.try_mul(&other),
            Err(JetError::NvarsMismatch { .. })
        ));
    }

    #[test]
    fn mixed_orders_truncate_to_minimum() {
        let v = seed_variables(&[0.5, 0.0], &[1.0, 0.0], 4).unwrap();
        let low = v[0].truncate(2);
        let p = &low * &v[2];
        assert_eq!(p.order(), 2);
        assert_eq!(p.coeffs().len(), layout(4, 4).len(2));
    }

    #[test]
    fn derivative_lowers_order() {
        let v = seed_variables(&[0.3, 0.0], &[1.5, 2.0], 4).unwrap();
        let f = &(&v[0] * &v[2]) * &v[2];
        let d = f.derivative(2).unwrap();
        assert_eq!(d.order(), 3);
        assert_relative_eq!(d.value(), 2.0 * 0.3 * 1.5, epsilon = 1e-15);
        assert_relative_eq!(d.partial_vars(&[0]).unwrap(), 3.0, epsilon = 1e-15);
        let c = Jet::constant(f.layout(), 0, 1.0);
        assert!(c.derivative(0).is_err());
    }
}
