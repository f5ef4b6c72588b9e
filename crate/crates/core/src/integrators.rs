//! Time stepping for the two processes and ensemble sampling.
//!
//! The Langevin system in the overdamped scaling,
//!
//! ```text
//! dQ = (1/eps) P dt
//! dP = -(1/eps) grad V_eps(Q) dt - (1/eps^2) P dt + (1/eps) sqrt(2/beta) dW
//! ```
//!
//! is integrated with the symmetric splitting `B A O A B`. The `O` substep
//! solves the thermostat part exactly over a full step, so the `1/eps^2`
//! stiffness never constrains stability; the step only has to resolve the
//! `1/eps` Hamiltonian motion. The overdamped reference
//! `dQ = -grad V(Q) dt + sqrt(2/beta) dB` uses Euler-Maruyama.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::PotentialField;
use crate::rng::{make_stream, NormalStream, RngStreamSpec};
use crate::torus::{wrap, wrap_scalar, Momentum, TorusPosition};

/// Multiscale, temperature and discretization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub eps: f64,
    pub beta: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl ScalingParams {
    pub fn new(eps: f64, beta: f64, dt: f64, horizon: f64) -> Result<Self> {
        for (name, v) in [("eps", eps), ("beta", beta), ("dt", dt), ("horizon", horizon)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and positive, got {v}")));
            }
        }
        if dt > horizon * (1.0 + 1e-12) {
            return Err(Error::param("dt", format!("{dt} exceeds the horizon {horizon}")));
        }
        let n = (horizon / dt).round();
        if (n * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::param("dt", format!("horizon {horizon} is not a multiple of {dt}")));
        }
        Ok(ScalingParams { eps, beta, dt, horizon })
    }

    /// Default Langevin step `min(0.1 eps^2, 1e-3)`.
    pub fn default_langevin_dt(eps: f64) -> f64 {
        (0.1 * eps * eps).min(1e-3)
    }

    /// Parameters whose step is the largest `dt <= dt_max` that divides the
    /// output spacing `output_dt`, together with the output stride.
    pub fn on_grid(eps: f64, beta: f64, dt_max: f64, horizon: f64, output_dt: f64) -> Result<(Self, usize)> {
        if !(output_dt > 0.0 && output_dt <= horizon) {
            return Err(Error::param("output_dt", format!("must lie in (0, horizon], got {output_dt}")));
        }
        if !(dt_max > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        let outputs = (horizon / output_dt).round();
        if (outputs * output_dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::param(
                "output_dt",
                format!("horizon {horizon} is not a multiple of {output_dt}"),
            ));
        }
        let stride = (output_dt / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let steps = outputs as usize * stride;
        let sp = ScalingParams::new(eps, beta, horizon / steps as f64, horizon)?;
        Ok((sp, stride))
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Time after `step` steps, computed without accumulation so that grids
    /// of different resolution share bit-identical time points.
    pub fn time_of(&self, step: usize) -> f64 {
        self.horizon * step as f64 / self.n_steps() as f64
    }
}

/// State of the Langevin process.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: TorusPosition,
    pub p: Momentum,
    pub t: f64,
}

/// Coefficients of one `B A O A B` step.
#[derive(Debug, Clone, Copy)]
struct LangevinKernel {
    /// `dt / (2 eps)`, used by both half kicks and both half drifts.
    half: f64,
    /// `exp(-dt / eps^2)`
    friction: f64,
    /// `sqrt((1 - c^2) / beta)`
    noise: f64,
}

impl LangevinKernel {
    fn new(sp: &ScalingParams) -> Self {
        let friction = (-sp.dt / (sp.eps * sp.eps)).exp();
        // 1 - c^2 without cancellation for tiny dt / eps^2
        let one_minus_c2 = -(-2.0 * sp.dt / (sp.eps * sp.eps)).exp_m1();
        LangevinKernel {
            half: sp.dt / (2.0 * sp.eps),
            friction,
            noise: (one_minus_c2 / sp.beta).sqrt(),
        }
    }

    /// Advance `(q, p)` in place. `force` holds `grad V(q)` on entry and is
    /// refreshed for the new `q` on exit.
    #[inline]
    fn step(
        &self,
        potential: &dyn PotentialField,
        q: &mut [f64],
        p: &mut [f64],
        force: &mut [f64],
        xi: &[f64],
        mut unwrapped: Option<&mut [f64]>,
    ) {
        let h = self.half;
        for i in 0..q.len() {
            p[i] -= h * force[i];
            let dx = h * p[i];
            q[i] = wrap_scalar(q[i] + dx);
            if let Some(u) = unwrapped.as_deref_mut() {
                u[i] += dx;
            }
            p[i] = self.friction * p[i] + self.noise * xi[i];
            let dx = h * p[i];
            q[i] = wrap_scalar(q[i] + dx);
            if let Some(u) = unwrapped.as_deref_mut() {
                u[i] += dx;
            }
        }
        potential.gradient_into(q, force);
        for i in 0..q.len() {
            p[i] -= h * force[i];
        }
    }
}

/// One `B A O A B` step of the Langevin system.
pub fn langevin_step(s: &PhaseState, potential: &dyn PotentialField, sp: &ScalingParams, xi: &[f64]) -> Result<PhaseState> {
    let d = s.q.dim();
    if potential.dim() != d || s.p.dim() != d || xi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: xi.len().min(s.p.dim()).min(potential.dim()),
        });
    }
    let mut q = s.q.coords().to_vec();
    let mut p = s.p.coords().to_vec();
    let mut force = vec![0.0; d];
    potential.gradient_into(&q, &mut force);
    LangevinKernel::new(sp).step(potential, &mut q, &mut p, &mut force, xi, None);
    Ok(PhaseState {
        q: wrap(&q)?,
        p: Momentum::new(p)?,
        t: s.t + sp.dt,
    })
}

/// One Euler-Maruyama step of the overdamped process.
pub fn overdamped_step(q: &TorusPosition, potential: &dyn PotentialField, sp: &ScalingParams, xi: &[f64]) -> Result<TorusPosition> {
    let d = q.dim();
    if potential.dim() != d || xi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: xi.len().min(potential.dim()),
        });
    }
    let mut x = q.coords().to_vec();
    let mut g = vec![0.0; d];
    overdamped_kernel(potential, sp.dt, (2.0 * sp.dt / sp.beta).sqrt(), &mut x, &mut g, xi, None);
    wrap(&x)
}

#[inline]
fn overdamped_kernel(
    potential: &dyn PotentialField,
    dt: f64,
    sigma: f64,
    q: &mut [f64],
    grad: &mut [f64],
    xi: &[f64],
    unwrapped: Option<&mut [f64]>,
) {
    potential.gradient_into(q, grad);
    match unwrapped {
        Some(u) => {
            for i in 0..q.len() {
                let dx = -grad[i] * dt + sigma * xi[i];
                q[i] = wrap_scalar(q[i] + dx);
                u[i] += dx;
            }
        }
        None => {
            for i in 0..q.len() {
                q[i] = wrap_scalar(q[i] - grad[i] * dt + sigma * xi[i]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Langevin,
    Overdamped,
}

impl ProcessKind {
    pub fn label(self) -> &'static str {
        match self {
            ProcessKind::Langevin => "langevin",
            ProcessKind::Overdamped => "overdamped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PositionLaw {
    Point(Vec<f64>),
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentumLaw {
    Zero,
    /// Centered Gaussian with covariance `variance * I`.
    Gaussian { variance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub position: PositionLaw,
    pub momentum: MomentumLaw,
}

impl InitialLaw {
    pub fn point_at_rest(q0: Vec<f64>) -> Self {
        InitialLaw {
            position: PositionLaw::Point(q0),
            momentum: MomentumLaw::Zero,
        }
    }
}

/// A process to sample: which dynamics, which potential, which initial law.
#[derive(Clone, Copy)]
pub struct Process<'a> {
    pub kind: ProcessKind,
    pub potential: &'a dyn PotentialField,
    pub initial: &'a InitialLaw,
}

impl<'a> Process<'a> {
    pub fn langevin(potential: &'a dyn PotentialField, initial: &'a InitialLaw) -> Self {
        Process {
            kind: ProcessKind::Langevin,
            potential,
            initial,
        }
    }

    pub fn overdamped(potential: &'a dyn PotentialField, initial: &'a InitialLaw) -> Self {
        Process {
            kind: ProcessKind::Overdamped,
            potential,
            initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub n_traj: usize,
    pub seed: u64,
    pub output_stride: usize,
    /// Langevin only.
    pub record_momenta: bool,
    pub record_unwrapped: bool,
    /// Test hook: `false` replaces every Gaussian draw by zero.
    pub noise: bool,
    pub memory_limit_bytes: u128,
}

pub const DEFAULT_MEMORY_LIMIT: u128 = 3 << 30;

impl EnsembleOptions {
    pub fn new(n_traj: usize, seed: u64, output_stride: usize) -> Self {
        EnsembleOptions {
            n_traj,
            seed,
            output_stride,
            record_momenta: false,
            record_unwrapped: false,
            noise: true,
            memory_limit_bytes: DEFAULT_MEMORY_LIMIT,
        }
    }

    pub fn with_momenta(mut self) -> Self {
        self.record_momenta = true;
        self
    }

    pub fn with_unwrapped(mut self) -> Self {
        self.record_unwrapped = true;
        self
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }
}

/// Trajectories sampled on a common output grid.
///
/// Arrays are row-major: trajectory, then grid index, then coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub kind: ProcessKind,
    pub params: ScalingParams,
    pub seed: u64,
    pub output_stride: usize,
    pub dim: usize,
    pub n_traj: usize,
    pub grid: Vec<f64>,
    pub positions: Vec<f64>,
    pub momenta: Option<Vec<f64>>,
    /// Real-valued positions without wrapping, when requested.
    pub unwrapped: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    /// Output grid spacing.
    pub fn spacing(&self) -> f64 {
        self.params.dt * self.output_stride as f64
    }

    #[inline]
    fn offset(&self, traj: usize, j: usize) -> usize {
        (traj * self.grid.len() + j) * self.dim
    }

    pub fn position(&self, traj: usize, j: usize) -> &[f64] {
        let o = self.offset(traj, j);
        &self.positions[o..o + self.dim]
    }

    pub fn momentum(&self, traj: usize, j: usize) -> Option<&[f64]> {
        let o = self.offset(traj, j);
        self.momenta.as_ref().map(|m| &m[o..o + self.dim])
    }

    pub fn unwrapped_position(&self, traj: usize, j: usize) -> Option<&[f64]> {
        let o = self.offset(traj, j);
        self.unwrapped.as_ref().map(|m| &m[o..o + self.dim])
    }

    /// Index of `t` on the output grid.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let h = self.spacing();
        let j = (t / h).round();
        if j < 0.0 || j as usize >= self.grid.len() || (self.grid[j as usize] - t).abs() > 1e-9 * h {
            return Err(Error::OffGrid { time: t });
        }
        Ok(j as usize)
    }

    /// `traj,t,q1..qd[,p1..pd]`
    pub fn csv_columns(&self) -> Vec<String> {
        let mut cols = vec!["traj".to_string(), "t".to_string()];
        cols.extend((1..=self.dim).map(|i| format!("q{i}")));
        if self.momenta.is_some() {
            cols.extend((1..=self.dim).map(|i| format!("p{i}")));
        }
        cols
    }

    /// CSV with header `traj,t,q1..qd[,p1..pd]`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(out, "{}", self.csv_columns().join(","))?;
        for traj in 0..self.n_traj {
            for (j, t) in self.grid.iter().enumerate() {
                write!(out, "{traj},{}", fmt_f64(*t))?;
                for x in self.position(traj, j) {
                    write!(out, ",{}", fmt_f64(*x))?;
                }
                if let Some(p) = self.momentum(traj, j) {
                    for x in p {
                        write!(out, ",{}", fmt_f64(*x))?;
                    }
                }
                writeln!(out)?;
            }
        }
        out.flush()
    }
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct TrajectoryRecord {
    positions: Vec<f64>,
    momenta: Option<Vec<f64>>,
    unwrapped: Option<Vec<f64>>,
}

/// Sample `n_traj` independent trajectories. Trajectory `i` is driven by the
/// stream `(seed, i)`, so the result does not depend on the thread count.
pub fn simulate_ensemble(process: &Process<'_>, sp: &ScalingParams, opts: &EnsembleOptions) -> Result<Ensemble> {
    let d = process.potential.dim();
    if let PositionLaw::Point(q0) = &process.initial.position {
        if q0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q0.len(),
            });
        }
        wrap(q0)?;
    }
    if let MomentumLaw::Gaussian { variance } = process.initial.momentum {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::param("momentum variance", format!("{variance}")));
        }
    }
    if opts.n_traj == 0 {
        return Err(Error::param("n_traj", "must be positive"));
    }
    if opts.output_stride == 0 {
        return Err(Error::param("output_stride", "must be positive"));
    }
    let n_steps = sp.n_steps();
    if n_steps % opts.output_stride != 0 {
        return Err(Error::param(
            "output_stride",
            format!("{} does not divide the {n_steps} steps", opts.output_stride),
        ));
    }
    let record_momenta = opts.record_momenta && process.kind == ProcessKind::Langevin;
    let n_times = n_steps / opts.output_stride + 1;
    let arrays = 1 + record_momenta as u128 + opts.record_unwrapped as u128;
    let requested = opts.n_traj as u128 * n_times as u128 * d as u128 * 8 * arrays;
    if requested > opts.memory_limit_bytes {
        return Err(Error::ResourceLimit {
            requested,
            limit: opts.memory_limit_bytes,
        });
    }

    let row = n_times * d;
    let mut positions = vec![0.0; opts.n_traj * row];
    let mut momenta = record_momenta.then(|| vec![0.0; opts.n_traj * row]);
    let mut unwrapped = opts.record_unwrapped.then(|| vec![0.0; opts.n_traj * row]);

    const BLOCK: usize = 2048;
    for start in (0..opts.n_traj).step_by(BLOCK) {
        let end = (start + BLOCK).min(opts.n_traj);
        let records: Vec<TrajectoryRecord> = (start..end)
            .into_par_iter()
            .map(|i| simulate_one(process, sp, opts, i, n_times, record_momenta))
            .collect();
        for (i, rec) in (start..end).zip(records) {
            positions[i * row..(i + 1) * row].copy_from_slice(&rec.positions);
            if let (Some(dst), Some(src)) = (momenta.as_mut(), rec.momenta) {
                dst[i * row..(i + 1) * row].copy_from_slice(&src);
            }
            if let (Some(dst), Some(src)) = (unwrapped.as_mut(), rec.unwrapped) {
                dst[i * row..(i + 1) * row].copy_from_slice(&src);
            }
        }
    }

    let grid = (0..n_times).map(|j| sp.time_of(j * opts.output_stride)).collect();
    Ok(Ensemble {
        kind: process.kind,
        params: *sp,
        seed: opts.seed,
        output_stride: opts.output_stride,
        dim: d,
        n_traj: opts.n_traj,
        grid,
        positions,
        momenta,
        unwrapped,
    })
}

fn simulate_one(
    process: &Process<'_>,
    sp: &ScalingParams,
    opts: &EnsembleOptions,
    index: usize,
    n_times: usize,
    record_momenta: bool,
) -> TrajectoryRecord {
    let d = process.potential.dim();
    let mut stream = make_stream(RngStreamSpec::new(opts.seed, index as u64));
    let draw = |s: &mut NormalStream, out: &mut [f64]| {
        if opts.noise {
            s.fill_normal(out)
        }
    };

    let mut q = match &process.initial.position {
        PositionLaw::Point(q0) => q0.iter().map(|&x| wrap_scalar(x)).collect::<Vec<_>>(),
        PositionLaw::Uniform => (0..d).map(|_| stream.next_uniform()).collect(),
    };
    let mut p = vec![0.0; d];
    if let MomentumLaw::Gaussian { variance } = process.initial.momentum {
        if process.kind == ProcessKind::Langevin {
            draw(&mut stream, &mut p);
            let s = variance.sqrt();
            p.iter_mut().for_each(|x| *x *= s);
        }
    }
    let mut unw = opts.record_unwrapped.then(|| q.clone());

    let mut rec = TrajectoryRecord {
        positions: Vec::with_capacity(n_times * d),
        momenta: record_momenta.then(|| Vec::with_capacity(n_times * d)),
        unwrapped: opts.record_unwrapped.then(|| Vec::with_capacity(n_times * d)),
    };
    let push = |rec: &mut TrajectoryRecord, q: &[f64], p: &[f64], u: Option<&Vec<f64>>| {
        rec.positions.extend_from_slice(q);
        if let Some(m) = rec.momenta.as_mut() {
            m.extend_from_slice(p);
        }
        if let (Some(dst), Some(u)) = (rec.unwrapped.as_mut(), u) {
            dst.extend_from_slice(u);
        }
    };
    push(&mut rec, &q, &p, unw.as_ref());

    let mut xi = vec![0.0; d];
    let mut force = vec![0.0; d];
    let n_steps = sp.n_steps();
    match process.kind {
        ProcessKind::Langevin => {
            let kernel = LangevinKernel::new(sp);
            process.potential.gradient_into(&q, &mut force);
            for step in 1..=n_steps {
                draw(&mut stream, &mut xi);
                kernel.step(process.potential, &mut q, &mut p, &mut force, &xi, unw.as_deref_mut());
                if step % opts.output_stride == 0 {
                    push(&mut rec, &q, &p, unw.as_ref());
                }
            }
        }
        ProcessKind::Overdamped => {
            let sigma = (2.0 * sp.dt / sp.beta).sqrt();
            for step in 1..=n_steps {
                draw(&mut stream, &mut xi);
                overdamped_kernel(process.potential, sp.dt, sigma, &mut q, &mut force, &xi, unw.as_deref_mut());
                if step % opts.output_stride == 0 {
                    push(&mut rec, &q, &p, unw.as_ref());
                }
            }
        }
    }
    rec
}
