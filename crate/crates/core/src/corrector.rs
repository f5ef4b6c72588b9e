//! Perturbed test functions for the overdamped limit.
//!
//! For a test function `f(q)` the corrected function on phase space is
//!
//! ```text
//! f_eps(q, p) = f(q) + eps g1(q, p) + eps^2 g2(q, p)
//! g1 = p . grad f(q)
//! g2 = 1/2 Hess f(q)(p, p)
//! ```
//!
//! `g1` cancels the `1/eps` part of `L_eps f_eps` and `g2` turns the order-one
//! part into the overdamped generator `L f`. What is left over is
//!
//! ```text
//! L_eps f_eps - L f = (grad V - grad V_eps) . grad f
//!                   + eps ( 1/2 D^3 f(p, p, p) - Hess f(p, grad V_eps) )
//! ```
//!
//! Every phase-space function here is polynomial in `p` with Fourier
//! coefficients in `q`, so all derivatives are exact.

use crate::error::{Error, Result};
use crate::fourier::{DerivativeBundle, FourierFunction};
use crate::potentials::PotentialField;

/// A smooth observable of the position.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub f: FourierFunction,
}

impl TestFunction {
    pub fn new(f: FourierFunction) -> Self {
        TestFunction { f }
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }
}

impl From<FourierFunction> for TestFunction {
    fn from(f: FourierFunction) -> Self {
        TestFunction::new(f)
    }
}

/// `f + eps g1 + eps^2 g2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedTestFunction {
    pub f: TestFunction,
    pub eps: f64,
}

pub fn perturb(f: &TestFunction, eps: f64) -> Result<PerturbedTestFunction> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::param("eps", format!("must be positive, got {eps}")));
    }
    Ok(PerturbedTestFunction { f: f.clone(), eps })
}

/// The pieces of a phase-space function that the Langevin generator reads.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDerivatives {
    pub value: f64,
    pub grad_q: Vec<f64>,
    pub grad_p: Vec<f64>,
    pub lap_p: f64,
}

/// A smooth function of `(q, p)` with closed-form derivatives.
pub trait PhaseFunction {
    fn dim(&self) -> usize;

    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        self.phase_derivatives(q, p).value
    }

    fn phase_derivatives(&self, q: &[f64], p: &[f64]) -> PhaseDerivatives;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PhaseFunction for TestFunction {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn value(&self, q: &[f64], _p: &[f64]) -> f64 {
        self.f.value(q)
    }

    fn phase_derivatives(&self, q: &[f64], _p: &[f64]) -> PhaseDerivatives {
        let b = self.f.derivatives(q, 1);
        let d = self.dim();
        PhaseDerivatives {
            value: b.value,
            grad_q: b.gradient,
            grad_p: vec![0.0; d],
            lap_p: 0.0,
        }
    }
}

/// `g1(q, p) = p . grad f(q)`
pub struct FirstCorrector<'a>(pub &'a TestFunction);

/// `g2(q, p) = 1/2 Hess f(q)(p, p)`
pub struct SecondCorrector<'a>(pub &'a TestFunction);

fn first_corrector(b: &DerivativeBundle, p: &[f64]) -> PhaseDerivatives {
    PhaseDerivatives {
        value: b.grad_dot(p),
        grad_q: b.hess_vec(p),
        grad_p: b.gradient.clone(),
        lap_p: 0.0,
    }
}

fn second_corrector(b: &DerivativeBundle, p: &[f64]) -> PhaseDerivatives {
    PhaseDerivatives {
        value: 0.5 * b.hess_form(p, p),
        grad_q: b.third_contract2(p, p).into_iter().map(|x| 0.5 * x).collect(),
        grad_p: b.hess_vec(p),
        lap_p: b.laplacian(),
    }
}

impl PhaseFunction for FirstCorrector<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn phase_derivatives(&self, q: &[f64], p: &[f64]) -> PhaseDerivatives {
        first_corrector(&self.0.f.derivatives(q, 2), p)
    }
}

impl PhaseFunction for SecondCorrector<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn phase_derivatives(&self, q: &[f64], p: &[f64]) -> PhaseDerivatives {
        second_corrector(&self.0.f.derivatives(q, 3), p)
    }
}

impl PerturbedTestFunction {
    fn from_bundle(&self, b: &DerivativeBundle, p: &[f64]) -> PhaseDerivatives {
        let e = self.eps;
        let g1 = first_corrector(b, p);
        let g2 = second_corrector(b, p);
        let combine = |x: f64, y: f64, z: f64| x + e * y + e * e * z;
        PhaseDerivatives {
            value: combine(b.value, g1.value, g2.value),
            grad_q: (0..b.dim())
                .map(|i| combine(b.gradient[i], g1.grad_q[i], g2.grad_q[i]))
                .collect(),
            grad_p: (0..b.dim())
                .map(|i| combine(0.0, g1.grad_p[i], g2.grad_p[i]))
                .collect(),
            lap_p: combine(0.0, g1.lap_p, g2.lap_p),
        }
    }
}

impl PhaseFunction for PerturbedTestFunction {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        let b = self.f.f.derivatives(q, 2);
        b.value + self.eps * b.grad_dot(p) + 0.5 * self.eps * self.eps * b.hess_form(p, p)
    }

    fn phase_derivatives(&self, q: &[f64], p: &[f64]) -> PhaseDerivatives {
        self.from_bundle(&self.f.f.derivatives(q, 3), p)
    }
}

/// The energy `1/2 |p|^2 + V(q)` as a phase-space function.
pub struct HamiltonianFunction<'a>(pub &'a dyn PotentialField);

impl PhaseFunction for HamiltonianFunction<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn phase_derivatives(&self, q: &[f64], p: &[f64]) -> PhaseDerivatives {
        let mut grad_q = vec![0.0; q.len()];
        self.0.gradient_into(q, &mut grad_q);
        PhaseDerivatives {
            value: 0.5 * dot(p, p) + self.0.value(q),
            grad_q,
            grad_p: p.to_vec(),
            lap_p: p.len() as f64,
        }
    }
}

fn langevin_generator_from(g: &PhaseDerivatives, grad_v_eps: &[f64], eps: f64, beta: f64, p: &[f64]) -> f64 {
    let thermostat = g.lap_p / beta - dot(p, &g.grad_p);
    let hamiltonian = dot(p, &g.grad_q) - dot(grad_v_eps, &g.grad_p);
    thermostat / (eps * eps) + hamiltonian / eps
}

/// `L_eps g = (1/eps^2)(Lap_p g / beta - p . grad_p g) + (1/eps)(p . grad_q g - grad V_eps . grad_p g)`
pub fn apply_langevin_generator(
    g: &dyn PhaseFunction,
    v_eps: &dyn PotentialField,
    eps: f64,
    beta: f64,
    q: &[f64],
    p: &[f64],
) -> f64 {
    let mut grad_v = vec![0.0; q.len()];
    v_eps.gradient_into(q, &mut grad_v);
    langevin_generator_from(&g.phase_derivatives(q, p), &grad_v, eps, beta, p)
}

/// `L f = -grad V . grad f + Lap f / beta`
pub fn apply_overdamped_generator(f: &TestFunction, v: &dyn PotentialField, beta: f64, q: &[f64]) -> f64 {
    let b = f.f.derivatives(q, 2);
    let mut grad_v = vec![0.0; q.len()];
    v.gradient_into(q, &mut grad_v);
    overdamped_from(&b, &grad_v, beta)
}

fn overdamped_from(b: &DerivativeBundle, grad_v: &[f64], beta: f64) -> f64 {
    -b.grad_dot(grad_v) + b.laplacian() / beta
}

/// `|f(q) - f_eps(q, p)|`
pub fn residual_r1(f: &TestFunction, eps: f64, q: &[f64], p: &[f64]) -> f64 {
    let b = f.f.derivatives(q, 2);
    residual_r1_from(&b, eps, p)
}

fn residual_r1_from(b: &DerivativeBundle, eps: f64, p: &[f64]) -> f64 {
    (eps * b.grad_dot(p) + 0.5 * eps * eps * b.hess_form(p, p)).abs()
}

/// `L_eps f_eps - L f` computed two ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorDifference {
    /// Generators applied to the structural `f_eps` and `f`, then subtracted.
    pub direct: f64,
    /// The closed-form remainder.
    pub closed: f64,
    /// Size of the largest term cancelled by the direct route.
    pub scale: f64,
}

impl GeneratorDifference {
    pub fn discrepancy(&self) -> f64 {
        (self.direct - self.closed).abs()
    }
}

/// Agreement required between the two routes, relative to `max(1, scale)`.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

fn generator_difference_from(
    b: &DerivativeBundle,
    grad_v: &[f64],
    grad_v_eps: &[f64],
    eps: f64,
    beta: f64,
    p: &[f64],
) -> GeneratorDifference {
    let pf = PerturbedTestFunction {
        f: TestFunction::new(FourierFunction::zero(b.dim())),
        eps,
    };
    let fe = pf.from_bundle(b, p);
    let lf_eps = langevin_generator_from(&fe, grad_v_eps, eps, beta, p);
    let lf = overdamped_from(b, grad_v, beta);

    let mismatch: f64 = (0..b.dim())
        .map(|i| (grad_v[i] - grad_v_eps[i]) * b.gradient[i])
        .sum();
    let closed = mismatch + eps * (0.5 * b.third_form(p, p, p) - b.hess_form(p, grad_v_eps));

    let scale = (b.grad_dot(p).abs() / eps)
        .max(lf.abs())
        .max(lf_eps.abs())
        .max(b.hess_form(p, p).abs());
    GeneratorDifference {
        direct: lf_eps - lf,
        closed,
        scale,
    }
}

/// Both routes for `L_eps f_eps - L f` at one phase point.
pub fn generator_difference(
    f: &TestFunction,
    v: &dyn PotentialField,
    v_eps: &dyn PotentialField,
    eps: f64,
    beta: f64,
    q: &[f64],
    p: &[f64],
) -> GeneratorDifference {
    let d = q.len();
    let b = f.f.derivatives(q, 3);
    let (mut gv, mut ge) = (vec![0.0; d], vec![0.0; d]);
    v.gradient_into(q, &mut gv);
    v_eps.gradient_into(q, &mut ge);
    generator_difference_from(&b, &gv, &ge, eps, beta, p)
}

/// `R2 = |L f - L_eps f_eps|`, failing when the closed form and the direct
/// computation disagree.
pub fn residual_r2(
    f: &TestFunction,
    v: &dyn PotentialField,
    v_eps: &dyn PotentialField,
    eps: f64,
    beta: f64,
    q: &[f64],
    p: &[f64],
) -> Result<f64> {
    checked(generator_difference(f, v, v_eps, eps, beta, q, p))
}

fn checked(g: GeneratorDifference) -> Result<f64> {
    if g.discrepancy() > IDENTITY_TOLERANCE * g.scale.max(1.0) {
        return Err(Error::IdentityViolation {
            direct: g.direct,
            closed: g.closed,
        });
    }
    Ok(g.closed.abs())
}

/// Reusable evaluator of `R1` and `R2` along trajectories.
pub(crate) struct RestTermEvaluator<'a> {
    pub f: &'a TestFunction,
    pub v: &'a dyn PotentialField,
    pub v_eps: &'a dyn PotentialField,
    pub eps: f64,
    pub beta: f64,
    grad_v: Vec<f64>,
    grad_v_eps: Vec<f64>,
}

impl<'a> RestTermEvaluator<'a> {
    pub fn new(f: &'a TestFunction, v: &'a dyn PotentialField, v_eps: &'a dyn PotentialField, eps: f64, beta: f64) -> Self {
        let d = f.dim();
        RestTermEvaluator {
            f,
            v,
            v_eps,
            eps,
            beta,
            grad_v: vec![0.0; d],
            grad_v_eps: vec![0.0; d],
        }
    }

    /// `(R1, R2)` at `(q, p)`.
    pub fn eval(&mut self, q: &[f64], p: &[f64]) -> Result<(f64, f64)> {
        let b = self.f.f.derivatives(q, 3);
        self.v.gradient_into(q, &mut self.grad_v);
        self.v_eps.gradient_into(q, &mut self.grad_v_eps);
        let r1 = residual_r1_from(&b, self.eps, p);
        let r2 = checked(generator_difference_from(&b, &self.grad_v, &self.grad_v_eps, self.eps, self.beta, p))?;
        Ok((r1, r2))
    }
}

/// The `1/eps` coefficient of `L_eps f_eps`:
/// `p . grad f - p . grad_p g1 + Lap_p g1 / beta`. Vanishes identically.
pub fn singular_order_term(f: &TestFunction, beta: f64, q: &[f64], p: &[f64]) -> f64 {
    let b = f.f.derivatives(q, 2);
    let g1 = first_corrector(&b, p);
    b.grad_dot(p) - dot(p, &g1.grad_p) + g1.lap_p / beta
}

/// The order-one coefficient of `L_eps f_eps` with `V_eps = V`:
/// `p . grad_q g1 - grad V . grad_p g1 - p . grad_p g2 + Lap_p g2 / beta`.
/// Equals `L f`.
pub fn regular_order_term(f: &TestFunction, v: &dyn PotentialField, beta: f64, q: &[f64], p: &[f64]) -> f64 {
    let b = f.f.derivatives(q, 3);
    let g1 = first_corrector(&b, p);
    let g2 = second_corrector(&b, p);
    let mut grad_v = vec![0.0; q.len()];
    v.gradient_into(q, &mut grad_v);
    dot(p, &g1.grad_q) - dot(&grad_v, &g1.grad_p) - dot(p, &g2.grad_p) + g2.lap_p / beta
}
