//! Smooth functions on the torus as finite real Fourier series.
//!
//! A [`FourierFunction`] is
//!
//! ```text
//! F(q) = sum_k  a_k cos(2 pi k.q) + b_k sin(2 pi k.q),    k in Z^d
//! ```
//!
//! Derivatives of a trigonometric sum are trigonometric sums, so values,
//! gradients, Hessians and third-derivative tensors are all computed in closed
//! form. The third tensor is stored dense, which costs `d^3` entries per
//! evaluation; in practice `d <= 3`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::torus::TorusPosition;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierFunction {
    dim: usize,
    /// Wave vectors, `dim` entries per term, sorted lexicographically.
    waves: Vec<i64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Value and derivatives of a function at one point.
///
/// Tensors beyond the requested order are left as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub order: usize,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `d x d`.
    pub hessian: Vec<f64>,
    /// Row-major `d x d x d`.
    pub third: Vec<f64>,
}

impl DerivativeBundle {
    pub fn zeros(dim: usize, order: usize) -> Self {
        DerivativeBundle {
            order,
            value: 0.0,
            gradient: vec![0.0; dim],
            hessian: vec![0.0; dim * dim],
            third: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.dim() + j]
    }

    pub fn third(&self, i: usize, j: usize, l: usize) -> f64 {
        let d = self.dim();
        self.third[(i * d + j) * d + l]
    }

    pub fn laplacian(&self) -> f64 {
        (0..self.dim()).map(|i| self.hess(i, i)).sum()
    }

    /// `grad F . v`
    pub fn grad_dot(&self, v: &[f64]) -> f64 {
        self.gradient.iter().zip(v).map(|(g, x)| g * x).sum()
    }

    /// `Hess F (u, v)`
    pub fn hess_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.hessian[i * d + j] * u[i] * v[j];
            }
        }
        acc
    }

    /// `Hess F u`
    pub fn hess_vec(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.hessian[i * d + j] * u[j]).sum())
            .collect()
    }

    /// `D^3 F (u, v, w)`
    pub fn third_form(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                for l in 0..d {
                    acc += self.third[(i * d + j) * d + l] * u[i] * v[j] * w[l];
                }
            }
        }
        acc
    }

    /// The covector `D^3 F (u, v, .)`.
    pub fn third_contract2(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|l| {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += self.third[(i * d + j) * d + l] * u[i] * v[j];
                    }
                }
                acc
            })
            .collect()
    }

    /// `self + s * other`, entrywise.
    pub fn axpy(&mut self, s: f64, other: &DerivativeBundle) {
        self.value += s * other.value;
        for (a, b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += s * b;
        }
        for (a, b) in self.hessian.iter_mut().zip(&other.hessian) {
            *a += s * b;
        }
        for (a, b) in self.third.iter_mut().zip(&other.third) {
            *a += s * b;
        }
    }
}

impl FourierFunction {
    /// Build from `(wave vector, cos coefficient, sin coefficient)` triples.
    /// Repeated wave vectors are summed.
    pub fn new<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i64>, f64, f64)>,
    {
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        let mut map: BTreeMap<Vec<i64>, (f64, f64)> = BTreeMap::new();
        for (k, a, b) in terms {
            if k.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: k.len(),
                });
            }
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::param("coefficient", "must be finite"));
            }
            let e = map.entry(k).or_insert((0.0, 0.0));
            e.0 += a;
            e.1 += b;
        }
        let mut f = FourierFunction {
            dim,
            waves: Vec::with_capacity(map.len() * dim),
            cos: Vec::with_capacity(map.len()),
            sin: Vec::with_capacity(map.len()),
        };
        for (k, (a, b)) in map {
            f.waves.extend_from_slice(&k);
            f.cos.push(a);
            f.sin.push(b);
        }
        Ok(f)
    }

    pub fn zero(dim: usize) -> Self {
        FourierFunction {
            dim,
            waves: Vec::new(),
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, [(vec![0; dim], c, 0.0)]).expect("valid constant")
    }

    /// `amplitude * cos(2 pi k.q)`
    pub fn cosine(wave: &[i64], amplitude: f64) -> Self {
        Self::new(wave.len(), [(wave.to_vec(), amplitude, 0.0)]).expect("valid cosine")
    }

    /// `amplitude * sin(2 pi k.q)`
    pub fn sine(wave: &[i64], amplitude: f64) -> Self {
        Self::new(wave.len(), [(wave.to_vec(), 0.0, amplitude)]).expect("valid sine")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_terms(&self) -> usize {
        self.cos.len()
    }

    /// Iterate over `(wave vector, a_k, b_k)`.
    pub fn terms(&self) -> impl Iterator<Item = (&[i64], f64, f64)> + '_ {
        self.waves
            .chunks(self.dim)
            .zip(self.cos.iter().zip(&self.sin))
            .map(|(k, (&a, &b))| (k, a, b))
    }

    /// Largest `|k_i|` over all terms.
    pub fn max_frequency(&self) -> i64 {
        self.waves.iter().map(|k| k.abs()).max().unwrap_or(0)
    }

    /// `a * self + b * other`
    pub fn linear_combination(&self, a: f64, other: &FourierFunction, b: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let lhs = self.terms().map(|(k, c, s)| (k.to_vec(), a * c, a * s));
        let rhs = other.terms().map(|(k, c, s)| (k.to_vec(), b * c, b * s));
        Self::new(self.dim, lhs.chain(rhs).collect::<Vec<_>>())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.cos.iter_mut().for_each(|a| *a *= s);
        out.sin.iter_mut().for_each(|b| *b *= s);
        out
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.linear_combination(1.0, &Self::constant(self.dim, c), 1.0)
            .expect("same dimension")
    }

    /// `q -> F(m q)`: every wave vector multiplied by `m`.
    pub fn dilate(&self, m: i64) -> Self {
        let terms = self
            .terms()
            .map(|(k, a, b)| (k.iter().map(|v| v * m).collect(), a, b))
            .collect::<Vec<_>>();
        Self::new(self.dim, terms).expect("same dimension")
    }

    #[inline]
    fn phase(&self, term: usize, q: &[f64]) -> f64 {
        let k = &self.waves[term * self.dim..(term + 1) * self.dim];
        TAU * k.iter().zip(q).map(|(&ki, &qi)| ki as f64 * qi).sum::<f64>()
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        let mut acc = 0.0;
        for t in 0..self.n_terms() {
            let (s, c) = self.phase(t, q).sin_cos();
            acc += self.cos[t] * c + self.sin[t] * s;
        }
        acc
    }

    /// Gradient written into `out` without allocating.
    pub fn gradient_into(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.dim);
        out.iter_mut().for_each(|g| *g = 0.0);
        for t in 0..self.n_terms() {
            let (s, c) = self.phase(t, q).sin_cos();
            let amp = TAU * (self.sin[t] * c - self.cos[t] * s);
            let k = &self.waves[t * self.dim..(t + 1) * self.dim];
            for (g, &ki) in out.iter_mut().zip(k) {
                *g += amp * ki as f64;
            }
        }
    }

    /// Value and derivatives up to `order` (at most 3).
    pub fn derivatives(&self, q: &[f64], order: usize) -> DerivativeBundle {
        assert!(order <= 3, "derivative order {order} exceeds 3");
        assert_eq!(q.len(), self.dim, "point dimension");
        let d = self.dim;
        let mut out = DerivativeBundle::zeros(d, order);
        let (tau2, tau3) = (TAU * TAU, TAU * TAU * TAU);
        let mut kf = vec![0.0; d];
        for t in 0..self.n_terms() {
            let (s, c) = self.phase(t, q).sin_cos();
            let (a, b) = (self.cos[t], self.sin[t]);
            let even = a * c + b * s; // F-like part
            let odd = b * c - a * s; // dF/dtheta
            out.value += even;
            if order == 0 {
                continue;
            }
            for (x, &ki) in kf.iter_mut().zip(&self.waves[t * d..(t + 1) * d]) {
                *x = ki as f64;
            }
            for i in 0..d {
                out.gradient[i] += TAU * kf[i] * odd;
            }
            if order >= 2 {
                for i in 0..d {
                    for j in 0..d {
                        out.hessian[i * d + j] -= tau2 * kf[i] * kf[j] * even;
                    }
                }
            }
            if order >= 3 {
                for i in 0..d {
                    for j in 0..d {
                        for l in 0..d {
                            out.third[(i * d + j) * d + l] -= tau3 * kf[i] * kf[j] * kf[l] * odd;
                        }
                    }
                }
            }
        }
        out
    }

    /// Parse the plain-text table: one term per line, `k1 ... kd a_k b_k`.
    /// Blank lines and `#` comments are skipped. When `dim` is `None` it is
    /// inferred from the first term.
    pub fn parse_text(text: &str, dim: Option<usize>) -> Result<Self> {
        let mut dim = dim;
        let mut terms = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let line = lineno + 1;
            if fields.len() < 3 {
                return Err(Error::FourierFormat {
                    line,
                    reason: "need at least one wave index and two coefficients".into(),
                });
            }
            let d = *dim.get_or_insert(fields.len() - 2);
            if fields.len() != d + 2 {
                return Err(Error::FourierFormat {
                    line,
                    reason: format!("expected {} columns, found {}", d + 2, fields.len()),
                });
            }
            let k = fields[..d]
                .iter()
                .map(|s| s.parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::FourierFormat {
                    line,
                    reason: format!("wave index: {e}"),
                })?;
            let coef = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::FourierFormat {
                    line,
                    reason: format!("coefficient `{s}`: {e}"),
                })
            };
            terms.push((k, coef(fields[d])?, coef(fields[d + 1])?));
        }
        let dim = dim.ok_or(Error::FourierFormat {
            line: 0,
            reason: "no terms and no dimension given".into(),
        })?;
        Self::new(dim, terms)
    }

    /// Inverse of [`FourierFunction::parse_text`]; coefficients use the
    /// shortest representation that round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, a, b) in self.terms() {
            for ki in k {
                write!(s, "{ki} ").unwrap();
            }
            writeln!(s, "{a:?} {b:?}").unwrap();
        }
        s
    }
}

/// Derivatives of `f` at a torus point.
pub fn eval_derivatives(f: &FourierFunction, q: &TorusPosition, order: usize) -> Result<DerivativeBundle> {
    if order > 3 {
        return Err(Error::param("order", format!("{order} exceeds 3")));
    }
    if q.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: q.dim(),
        });
    }
    Ok(f.derivatives(q.coords(), order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::wrap;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_at_zero() {
        let f = FourierFunction::cosine(&[1], 1.0);
        let d = eval_derivatives(&f, &wrap(&[0.0]).unwrap(), 3).unwrap();
        assert!(close(d.value, 1.0, 1e-15));
        assert!(close(d.gradient[0], 0.0, 1e-15));
        assert!(close(d.hessian[0], -4.0 * PI * PI, 1e-12));
        assert!(close(d.third[0], 0.0, 1e-12));
    }

    #[test]
    fn cosine_at_quarter() {
        let f = FourierFunction::cosine(&[1], 1.0);
        let d = eval_derivatives(&f, &wrap(&[0.25]).unwrap(), 3).unwrap();
        assert!(close(d.value, 0.0, 1e-15));
        assert!(close(d.gradient[0], -2.0 * PI, 1e-13));
        assert!(close(d.hessian[0], 0.0, 1e-12));
        assert!(close(d.third[0], 8.0 * PI.powi(3), 1e-10));
    }

    #[test]
    fn cosine_matches_finite_differences() {
        let f = FourierFunction::cosine(&[1], 1.0);
        let q = 0.1;
        let h = 1e-5;
        let d = f.derivatives(&[q], 1);
        let fd = (f.value(&[q + h]) - f.value(&[q - h])) / (2.0 * h);
        assert!(((d.gradient[0] - fd) / d.gradient[0]).abs() <= 1e-6);
    }

    #[test]
    fn order_limits() {
        let f = FourierFunction::cosine(&[1], 1.0);
        let q = wrap(&[0.3]).unwrap();
        assert!(eval_derivatives(&f, &q, 4).is_err());
        let d = eval_derivatives(&f, &q, 1).unwrap();
        assert_eq!(d.hessian, vec![0.0]);
        assert!(eval_derivatives(&f, &wrap(&[0.3, 0.1]).unwrap(), 1).is_err());
    }

    #[test]
    fn duplicate_waves_merge() {
        let f = FourierFunction::new(1, [(vec![2], 1.0, 0.0), (vec![2], 0.5, 0.25)]).unwrap();
        assert_eq!(f.n_terms(), 1);
        assert_eq!(f.terms().next().unwrap(), (&[2i64][..], 1.5, 0.25));
    }

    #[test]
    fn text_table_round_trip() {
        let text = "# V\n0 0 1.5 0\n1 -1 0.3 -0.2\n\n2 0 0 0.1 # trailing\n";
        let f = FourierFunction::parse_text(text, None).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.n_terms(), 3);
        let g = FourierFunction::parse_text(&f.to_text(), Some(2)).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn text_table_errors() {
        assert!(matches!(
            FourierFunction::parse_text("1 0.5 0\n1 1 0.5 0\n", None),
            Err(Error::FourierFormat { line: 2, .. })
        ));
        assert!(FourierFunction::parse_text("x 0.5 0\n", None).is_err());
        assert!(FourierFunction::parse_text("1 0.5\n", None).is_err());
        assert!(FourierFunction::parse_text("", None).is_err());
        assert_eq!(FourierFunction::parse_text("", Some(3)).unwrap().n_terms(), 0);
    }

    #[test]
    fn dilate_matches_composition() {
        let chi = FourierFunction::new(1, [(vec![1], 0.7, -0.2), (vec![2], 0.1, 0.3)]).unwrap();
        let k = 3;
        let dil = chi.dilate(k);
        for q in [0.0, 0.13, 0.77] {
            assert!(close(dil.value(&[q]), chi.value(&[k as f64 * q]), 1e-12));
        }
    }

    fn arb_function(dim: usize) -> impl Strategy<Value = FourierFunction> {
        prop::collection::vec(
            (prop::collection::vec(-2i64..=2, dim), -1.0..1.0f64, -1.0..1.0f64),
            1..6,
        )
        .prop_map(move |terms| FourierFunction::new(dim, terms).unwrap())
    }

    fn arb_case() -> impl Strategy<Value = (FourierFunction, Vec<f64>)> {
        (1usize..=3).prop_flat_map(|d| (arb_function(d), prop::collection::vec(0.0..1.0f64, d)))
    }

    proptest! {
        #[test]
        fn periodic_in_each_coordinate((f, q) in arb_case(), axis in 0usize..3) {
            let axis = axis % f.dim();
            let mut shifted = q.clone();
            shifted[axis] += 1.0;
            let shifted = wrap(&shifted).unwrap();
            prop_assert!((f.value(&q) - f.value(shifted.coords())).abs() <= 1e-12);
        }

        #[test]
        fn derivatives_match_finite_differences((f, q) in arb_case()) {
            let d = f.dim();
            let b = f.derivatives(&q, 3);
            let at = |x: &[f64]| f.derivatives(x, 2);
            let shift = |i: usize, h: f64| {
                let mut x = q.clone();
                x[i] += h;
                x
            };
            let rel = |a: f64, e: f64, scale: f64| (a - e).abs() / scale.max(1.0);
            // five-point central stencils: gradient from values, hessian from
            // gradients, third tensor from hessians
            let (h1, h2, h3) = (1e-5, 1e-4, 1e-3);
            let stencil = |fm2: f64, fm1: f64, fp1: f64, fp2: f64, h: f64| {
                (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h)
            };
            let scale1 = b.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale2 = b.hessian.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale3 = b.third.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..d {
                let v = |k: f64| f.value(&shift(i, k * h1));
                let fd = stencil(v(-2.0), v(-1.0), v(1.0), v(2.0), h1);
                prop_assert!(rel(b.gradient[i], fd, scale1) <= 1e-5);
                let g: Vec<_> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| at(&shift(i, k * h2))).collect();
                let hs: Vec<_> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| at(&shift(i, k * h3))).collect();
                for j in 0..d {
                    let fd2 = stencil(g[0].gradient[j], g[1].gradient[j], g[2].gradient[j], g[3].gradient[j], h2);
                    prop_assert!(rel(b.hess(i, j), fd2, scale2) <= 1e-5);
                    for l in 0..d {
                        let fd3 = stencil(hs[0].hess(j, l), hs[1].hess(j, l), hs[2].hess(j, l), hs[3].hess(j, l), h3);
                        prop_assert!(rel(b.third(i, j, l), fd3, scale3) <= 1e-5);
                    }
                }
            }
        }

        #[test]
        fn derivative_tensors_are_symmetric((f, q) in arb_case()) {
            let b = f.derivatives(&q, 3);
            let d = f.dim();
            for i in 0..d {
                for j in 0..d {
                    prop_assert_eq!(b.hess(i, j), b.hess(j, i));
                    for l in 0..d {
                        let t = b.third(i, j, l);
                        prop_assert_eq!(t, b.third(j, i, l));
                        prop_assert_eq!(t, b.third(l, j, i));
                        prop_assert_eq!(t, b.third(i, l, j));
                    }
                }
            }
        }

        #[test]
        fn linear_in_the_function(
            (f, q) in arb_case(),
            a in -2.0..2.0f64,
            s in -2.0..2.0f64,
        ) {
            let g = f.dilate(2).add_constant(0.3);
            let combo = f.linear_combination(a, &g, s).unwrap();
            let mut expected = f.derivatives(&q, 3);
            expected.value *= a;
            expected.gradient.iter_mut().for_each(|v| *v *= a);
            expected.hessian.iter_mut().for_each(|v| *v *= a);
            expected.third.iter_mut().for_each(|v| *v *= a);
            expected.axpy(s, &g.derivatives(&q, 3));
            let got = combo.derivatives(&q, 3);
            let scale = |x: &DerivativeBundle| {
                x.third.iter().chain(&x.hessian).fold(x.value.abs(), |m, v| m.max(v.abs()))
            };
            // absolute 1e-12 on O(1) entries; the third tensor scales with (2 pi k)^3
            let tol = 1e-12 * scale(&expected).max(1.0);
            prop_assert!((got.value - expected.value).abs() <= tol);
            for (x, y) in got.gradient.iter().zip(&expected.gradient) {
                prop_assert!((x - y).abs() <= tol);
            }
            for (x, y) in got.third.iter().zip(&expected.third) {
                prop_assert!((x - y).abs() <= tol);
            }
        }
    }
}
