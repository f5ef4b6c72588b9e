//! Potential energies on the torus and the scalar diagnostics the limit
//! theorem consumes: the oscillation `max V - min V` and sup-norm distances
//! between gradients.

use crate::error::{Error, Result};
use crate::fourier::{DerivativeBundle, FourierFunction};
use crate::torus::{wrap_scalar, TorusPosition};

/// Anything that can act as the potential of a Langevin or overdamped run.
pub trait PotentialField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &[f64]) -> f64;

    fn gradient_into(&self, q: &[f64], out: &mut [f64]);

    /// Value and derivatives up to `order` (at most 3).
    fn derivatives(&self, q: &[f64], order: usize) -> DerivativeBundle;
}

/// A potential `V` given by a Fourier series.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub base: FourierFunction,
    pub label: String,
}

impl Potential {
    pub fn new(base: FourierFunction, label: impl Into<String>) -> Self {
        Potential {
            base,
            label: label.into(),
        }
    }

    pub fn free(dim: usize) -> Self {
        Potential::new(FourierFunction::zero(dim), "free")
    }

    /// Same potential plus a constant; gradients are untouched.
    pub fn shifted(&self, c: f64) -> Self {
        Potential::new(self.base.add_constant(c), self.label.clone())
    }

    /// Shift so that `min V = 0`.
    pub fn normalized(&self) -> Self {
        self.shifted(-minimum(self))
    }
}

impl PotentialField for Potential {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, q: &[f64]) -> f64 {
        self.base.value(q)
    }

    fn gradient_into(&self, q: &[f64], out: &mut [f64]) {
        self.base.gradient_into(q, out)
    }

    fn derivatives(&self, q: &[f64], order: usize) -> DerivativeBundle {
        self.base.derivatives(q, order)
    }
}

const STACK_DIM: usize = 4;

/// The crystal family `V_eps(q) = V(q) + alpha * chi(k q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalPotential {
    pub base: Potential,
    pub chi: FourierFunction,
    pub alpha: f64,
    pub k: u32,
}

impl CrystalPotential {
    pub fn new(base: Potential, chi: FourierFunction, alpha: f64, k: u32) -> Result<Self> {
        if base.dim() != chi.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: chi.dim(),
            });
        }
        if k == 0 {
            return Err(Error::param("k", "crystal frequency must be positive"));
        }
        if !alpha.is_finite() {
            return Err(Error::param("alpha", "must be finite"));
        }
        Ok(CrystalPotential { base, chi, alpha, k })
    }

    pub fn shifted(&self, c: f64) -> Self {
        CrystalPotential {
            base: self.base.shifted(c),
            ..self.clone()
        }
    }

    pub fn normalized(&self) -> Self {
        self.shifted(-minimum(self))
    }

    fn fine_point(&self, q: &[f64]) -> Vec<f64> {
        let k = self.k as f64;
        q.iter().map(|&x| wrap_scalar(k * x)).collect()
    }

    /// `alpha * k^2 * sup |Hess chi|`, the size of the crystal's curvature.
    /// It grows without bound whenever `alpha k^2` does.
    pub fn hessian_bound(&self) -> f64 {
        let k = self.k as f64;
        let chi = &self.chi;
        self.alpha.abs() * k * k * sup_norm(chi.dim(), |q| frobenius(&chi.derivatives(q, 2).hessian))
    }
}

impl PotentialField for CrystalPotential {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, q: &[f64]) -> f64 {
        self.base.value(q) + self.alpha * self.chi.value(&self.fine_point(q))
    }

    fn gradient_into(&self, q: &[f64], out: &mut [f64]) {
        self.base.gradient_into(q, out);
        let d = q.len();
        // stack scratch for the usual small dimensions; this runs every step
        let (mut x_buf, mut g_buf) = ([0.0; STACK_DIM], [0.0; STACK_DIM]);
        let (mut x_heap, mut g_heap);
        let (x, g): (&mut [f64], &mut [f64]) = if d <= STACK_DIM {
            (&mut x_buf[..d], &mut g_buf[..d])
        } else {
            x_heap = vec![0.0; d];
            g_heap = vec![0.0; d];
            (&mut x_heap, &mut g_heap)
        };
        let k = self.k as f64;
        for (xi, &qi) in x.iter_mut().zip(q) {
            *xi = wrap_scalar(k * qi);
        }
        self.chi.gradient_into(x, g);
        let s = self.alpha * k;
        for (o, gi) in out.iter_mut().zip(g.iter()) {
            *o += s * gi;
        }
    }

    fn derivatives(&self, q: &[f64], order: usize) -> DerivativeBundle {
        let mut out = self.base.derivatives(q, order);
        let fine = self.chi.derivatives(&self.fine_point(q), order);
        // chain rule: the n-th derivative picks up a factor k^n
        let k = self.k as f64;
        out.value += self.alpha * fine.value;
        let mut s = self.alpha;
        for (n, (dst, src)) in [
            (&mut out.gradient, &fine.gradient),
            (&mut out.hessian, &fine.hessian),
            (&mut out.third, &fine.third),
        ]
        .into_iter()
        .enumerate()
        {
            s *= k;
            if n < order {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += s * b;
                }
            }
        }
        out
    }
}

/// Value and gradient of a crystal potential (orders 0 and 1).
pub fn crystal_eval(c: &CrystalPotential, q: &TorusPosition, order: usize) -> Result<DerivativeBundle> {
    if order > 1 {
        return Err(Error::param("order", "crystal evaluation supports orders 0 and 1"));
    }
    if q.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            got: q.dim(),
        });
    }
    Ok(c.derivatives(q.coords(), order))
}

/// `max V - min V` over the torus.
pub fn oscillation(p: &dyn PotentialField) -> f64 {
    let d = p.dim();
    let max = sup_norm(d, |q| p.value(q));
    let min = -sup_norm(d, |q| -p.value(q));
    (max - min).max(0.0)
}

/// `min V` over the torus.
pub fn minimum(p: &dyn PotentialField) -> f64 {
    -sup_norm(p.dim(), |q| -p.value(q))
}

/// `sup_q |grad V_eps(q) - grad V(q)|` (Euclidean norm).
pub fn sup_grad_distance(v_eps: &dyn PotentialField, v: &dyn PotentialField) -> Result<f64> {
    if v_eps.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: v_eps.dim(),
        });
    }
    let d = v.dim();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    Ok(sup_norm(d, |q| {
        v_eps.gradient_into(q, &mut ga);
        v.gradient_into(q, &mut gb);
        ga.iter()
            .zip(&gb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }))
}

/// `sup_q |grad V(q)|`.
pub fn sup_gradient(v: &dyn PotentialField) -> f64 {
    let mut g = vec![0.0; v.dim()];
    sup_norm(v.dim(), |q| {
        v.gradient_into(q, &mut g);
        g.iter().map(|x| x * x).sum::<f64>().sqrt()
    })
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Grid points per dimension for the global search.
pub fn grid_resolution(dim: usize) -> usize {
    match dim {
        1 => 1 << 14,
        2 => 1 << 9,
        _ => 1 << 6,
    }
}

const GOLDEN_STEPS: usize = 20;
const POLISH_CANDIDATES: usize = 4;
const POLISH_SWEEPS: usize = 4;

/// Maximum over the torus of a smooth function.
///
/// A dense grid localizes the maximum, then the best few grid points are
/// polished by golden-section searches along coordinate lines within one grid
/// cell.
pub fn sup_norm<F>(dim: usize, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let n = grid_resolution(dim);
    let h = 1.0 / n as f64;
    let total = n.pow(dim as u32);
    let mut q = vec![0.0; dim];
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(POLISH_CANDIDATES + 1);
    for idx in 0..total {
        let mut rest = idx;
        for x in q.iter_mut() {
            *x = (rest % n) as f64 * h;
            rest /= n;
        }
        let v = f(&q);
        if best.len() < POLISH_CANDIDATES || v > best[best.len() - 1].0 {
            let pos = best.partition_point(|&(b, _)| b >= v);
            best.insert(pos, (v, idx));
            best.truncate(POLISH_CANDIDATES);
        }
    }

    let mut sup = best.first().map(|b| b.0).unwrap_or(f64::NEG_INFINITY);
    for &(v0, idx) in &best {
        let mut rest = idx;
        let mut x: Vec<f64> = (0..dim)
            .map(|_| {
                let c = (rest % n) as f64 * h;
                rest /= n;
                c
            })
            .collect();
        let mut v = v0;
        for _ in 0..POLISH_SWEEPS {
            let before = v;
            for axis in 0..dim {
                let (xa, va) = golden_line(&mut f, &mut x, axis, h);
                if va > v {
                    x[axis] = xa;
                    v = va;
                }
            }
            if v <= before {
                break;
            }
        }
        sup = sup.max(v);
    }
    sup
}

fn golden_line<F>(f: &mut F, x: &mut [f64], axis: usize, h: f64) -> (f64, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let center = x[axis];
    let mut eval = |t: f64, x: &mut [f64]| {
        x[axis] = t;
        f(x)
    };
    let (mut a, mut b) = (center - h, center + h);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c, x);
    let mut fd = eval(d, x);
    for _ in 0..GOLDEN_STEPS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c, x);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d, x);
        }
    }
    x[axis] = center;
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::wrap;
    use std::f64::consts::{PI, TAU};

    fn cos1() -> FourierFunction {
        FourierFunction::cosine(&[1], 1.0)
    }

    #[test]
    fn crystal_at_extremum() {
        let c = CrystalPotential::new(Potential::free(1), cos1(), 1.0, 2).unwrap();
        let b = crystal_eval(&c, &wrap(&[0.0]).unwrap(), 1).unwrap();
        assert!((b.value - 1.0).abs() < 1e-15);
        assert!(b.gradient[0].abs() < 1e-12);
    }

    #[test]
    fn crystal_chain_rule() {
        let c = CrystalPotential::new(Potential::free(1), cos1(), 0.5, 3).unwrap();
        let q = 1.0 / 12.0;
        let b = crystal_eval(&c, &wrap(&[q]).unwrap(), 1).unwrap();
        assert!(b.value.abs() < 1e-14);
        assert!((b.gradient[0] + 3.0 * PI).abs() < 1e-12);
        let h = 1e-6;
        let fd = (c.value(&[q + h]) - c.value(&[q - h])) / (2.0 * h);
        assert!((fd - b.gradient[0]).abs() < 1e-7);
    }

    #[test]
    fn crystal_without_amplitude_is_base() {
        let base = Potential::new(FourierFunction::new(1, [(vec![1], 0.4, 0.1), (vec![3], 0.0, 0.2)]).unwrap(), "v");
        let c = CrystalPotential::new(base.clone(), cos1(), 0.0, 7).unwrap();
        for q in [0.0, 0.21, 0.9] {
            let a = crystal_eval(&c, &wrap(&[q]).unwrap(), 1).unwrap();
            let b = base.derivatives(&[q], 1);
            assert_eq!(a.value, b.value);
            assert_eq!(a.gradient, b.gradient);
        }
        assert!(crystal_eval(&c, &wrap(&[0.1]).unwrap(), 2).is_err());
    }

    #[test]
    fn crystal_derivatives_agree_with_dilated_series() {
        let base = Potential::new(FourierFunction::cosine(&[1, 0], 1.0), "v");
        let chi = FourierFunction::new(2, [(vec![1, 1], 0.3, 0.2), (vec![0, 1], -0.5, 0.0)]).unwrap();
        let c = CrystalPotential::new(base.clone(), chi.clone(), 0.7, 4).unwrap();
        let exact = base.base.linear_combination(1.0, &chi.dilate(4), 0.7).unwrap();
        for q in [[0.1, 0.2], [0.73, 0.41]] {
            let a = c.derivatives(&q, 3);
            let b = exact.derivatives(&q, 3);
            for (x, y) in a.third.iter().zip(&b.third) {
                assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
            for (x, y) in a.hessian.iter().zip(&b.hessian) {
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn oscillation_of_cosine() {
        let v = Potential::new(FourierFunction::cosine(&[1], 0.8), "c");
        assert!((oscillation(&v) - 1.6).abs() < 1e-10);
        let flat = Potential::new(FourierFunction::constant(1, 3.0), "flat");
        assert_eq!(oscillation(&flat), 0.0);
        assert_eq!(oscillation(&Potential::free(2)), 0.0);
    }

    #[test]
    fn oscillation_matches_brute_force() {
        let v = Potential::new(
            FourierFunction::new(1, [(vec![1], 1.0, 0.0), (vec![2], 0.3, 0.0)]).unwrap(),
            "two-mode",
        );
        let n = 1_000_000;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let x = v.value(&[i as f64 / n as f64]);
            lo = lo.min(x);
            hi = hi.max(x);
        }
        assert!((oscillation(&v) - (hi - lo)).abs() <= 1e-6);
    }

    #[test]
    fn oscillation_ignores_constants() {
        let f = FourierFunction::new(2, [(vec![1, 0], 1.0, 0.2), (vec![1, 1], 0.0, 0.5)]).unwrap();
        let v = Potential::new(f, "v");
        assert!((oscillation(&v) - oscillation(&v.shifted(12.5))).abs() <= 1e-8);
    }

    #[test]
    fn normalization_keeps_gradients() {
        let v = Potential::new(FourierFunction::new(1, [(vec![1], 1.0, 0.3)]).unwrap(), "v");
        let n = v.normalized();
        assert!(minimum(&n).abs() < 1e-9);
        for q in [0.0, 0.3, 0.55] {
            let (mut a, mut b) = ([0.0], [0.0]);
            v.gradient_into(&[q], &mut a);
            n.gradient_into(&[q], &mut b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn grad_distance_of_crystal() {
        let base = Potential::new(cos1(), "v");
        for (alpha, k) in [(0.3, 2u32), (0.05, 5), (1.0, 1)] {
            let c = CrystalPotential::new(base.clone(), cos1(), alpha, k).unwrap();
            let got = sup_grad_distance(&c, &base).unwrap();
            assert!((got - alpha * k as f64 * TAU).abs() <= 1e-6, "{got}");
        }
        let c = CrystalPotential::new(base.clone(), cos1(), 0.0, 3).unwrap();
        assert_eq!(sup_grad_distance(&c, &base).unwrap(), 0.0);
        assert!(sup_grad_distance(&c, &Potential::free(2)).is_err());
    }

    #[test]
    fn grad_distance_vanishes_along_crystal_rule() {
        let base = Potential::new(cos1(), "v");
        let mut prev = f64::INFINITY;
        for eps in [0.4f64, 0.2, 0.1, 0.05] {
            let alpha = eps.powf(0.75);
            let k = eps.powf(-0.5).ceil() as u32;
            let c = CrystalPotential::new(base.clone(), cos1(), alpha, k).unwrap();
            let dist = sup_grad_distance(&c, &base).unwrap();
            assert!(dist < prev);
            prev = dist;
        }
    }

    #[test]
    fn hessian_bound_of_cosine_crystal() {
        let c = CrystalPotential::new(Potential::free(1), cos1(), 0.5, 3).unwrap();
        assert!((c.hessian_bound() - 0.5 * 9.0 * TAU * TAU).abs() < 1e-6);
    }
}
