//! Ensemble estimators for the overdamped limit: momentum moments, weak
//! errors, the martingale ladder, the Kurtz-Aldous modulus and the rest
//! terms of the corrector expansion.
//!
//! Every estimator is a reduction over trajectories in index order with
//! pairwise summation, so results do not depend on scheduling.

use std::io::Write;

use rayon::prelude::*;

use crate::corrector::{RestTermEvaluator, TestFunction};
use crate::error::{Error, Result};
use crate::integrators::{fmt_f64, Ensemble};
use crate::potentials::PotentialField;
use crate::stats::{trapezoid, Estimate};

/// `H(q, p) = 1/2 |p|^2 + V(q)`. Expects a potential shifted to `min V = 0`.
pub fn hamiltonian(q: &[f64], p: &[f64], v_eps: &dyn PotentialField) -> f64 {
    0.5 * p.iter().map(|x| x * x).sum::<f64>() + v_eps.value(q)
}

/// Momentum moments `E|P_t|^(2 gamma)` along the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub gamma: f64,
    /// `(t, estimate)` for every grid time.
    pub per_time: Vec<(f64, Estimate)>,
    /// Largest per-time estimate.
    pub sup_over_grid: f64,
    /// `E[max_j |P_{t_j}|^2]`; a lower bound for the continuous supremum.
    pub mean_sup: Estimate,
}

pub fn moment_report(e: &Ensemble, gamma: f64) -> Result<MomentReport> {
    if !(gamma >= 1.0) {
        return Err(Error::param("gamma", format!("must be >= 1, got {gamma}")));
    }
    let momenta = e.momenta.as_ref().ok_or(Error::MissingMomenta)?;
    let (d, m) = (e.dim, e.n_times());
    let norm_sq = |traj: usize, j: usize| -> f64 {
        let o = (traj * m + j) * d;
        momenta[o..o + d].iter().map(|x| x * x).sum()
    };
    let per_time: Vec<(f64, Estimate)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let xs: Vec<f64> = (0..e.n_traj).map(|t| norm_sq(t, j).powf(gamma)).collect();
            (e.grid[j], Estimate::from_samples(&xs))
        })
        .collect();
    let sups: Vec<f64> = (0..e.n_traj)
        .map(|t| (0..m).map(|j| norm_sq(t, j)).fold(0.0, f64::max))
        .collect();
    let sup_over_grid = per_time.iter().map(|(_, est)| est.mean).fold(0.0, f64::max);
    Ok(MomentReport {
        gamma,
        per_time,
        sup_over_grid,
        mean_sup: Estimate::from_samples(&sups),
    })
}

/// A labelled observable for weak-error tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub label: String,
    pub f: TestFunction,
}

impl Observable {
    pub fn new(label: impl Into<String>, f: TestFunction) -> Self {
        Observable {
            label: label.into(),
            f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorRow {
    pub eps: f64,
    pub label: String,
    pub t: f64,
    /// `E f(Q^eps_t) - E f(Q_t)`
    pub estimate: f64,
    /// `sqrt(se_eps^2 + se_ref^2)`
    pub pooled_se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeakErrorTable {
    pub rows: Vec<WeakErrorRow>,
}

impl WeakErrorTable {
    /// Rows at time `t`, for one `eps`.
    pub fn at(&self, eps: f64, t: f64) -> impl Iterator<Item = &WeakErrorRow> {
        self.rows.iter().filter(move |r| r.eps == eps && r.t == t)
    }

    /// The row with the largest `|estimate|` at `(eps, t)`.
    pub fn worst(&self, eps: f64, t: f64) -> Option<&WeakErrorRow> {
        self.at(eps, t)
            .max_by(|a, b| a.estimate.abs().total_cmp(&b.estimate.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eps,f,t,estimate,pooled_se")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(r.eps),
                r.label,
                fmt_f64(r.t),
                fmt_f64(r.estimate),
                fmt_f64(r.pooled_se)
            )?;
        }
        Ok(())
    }
}

fn observable_at(e: &Ensemble, f: &TestFunction, j: usize) -> Estimate {
    let xs: Vec<f64> = (0..e.n_traj).map(|t| f.f.value(e.position(t, j))).collect();
    Estimate::from_samples(&xs)
}

/// Differences of ensemble means between a Langevin ensemble and a reference.
/// The `eps` column is taken from `e_eps`.
pub fn weak_error(e_eps: &Ensemble, e_ref: &Ensemble, fs: &[Observable], times: &[f64]) -> Result<WeakErrorTable> {
    if e_eps.dim != e_ref.dim {
        return Err(Error::GridMismatch(format!(
            "dimensions {} and {}",
            e_eps.dim, e_ref.dim
        )));
    }
    let mut rows = Vec::with_capacity(fs.len() * times.len());
    for &t in times {
        let (ja, jb) = match (e_eps.grid_index(t), e_ref.grid_index(t)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(Error::GridMismatch(format!("time {t} is not on both grids"))),
        };
        for obs in fs {
            let a = observable_at(e_eps, &obs.f, ja);
            let b = observable_at(e_ref, &obs.f, jb);
            rows.push(WeakErrorRow {
                eps: e_eps.params.eps,
                label: obs.label.clone(),
                t,
                estimate: a.mean - b.mean,
                pooled_se: (a.se * a.se + b.se * b.se).sqrt(),
            });
        }
    }
    Ok(WeakErrorTable { rows })
}

/// Times `t_1 <= ... <= t_{p+1}`, observables `phi_1..phi_p` and `f` of the
/// statistic
///
/// ```text
/// I = E[ (f(Q_{t_{p+1}}) - f(Q_{t_p}) - int_{t_p}^{t_{p+1}} L f(Q_s) ds)
///        phi_1(Q_{t_1}) ... phi_p(Q_{t_p}) ]
/// ```
///
/// which vanishes for every choice exactly when `Q` solves the martingale
/// problem of `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSpec {
    pub times: Vec<f64>,
    pub phis: Vec<TestFunction>,
    pub f: TestFunction,
}

impl LadderSpec {
    pub fn new(times: Vec<f64>, phis: Vec<TestFunction>, f: TestFunction) -> Result<Self> {
        if phis.is_empty() {
            return Err(Error::param("ladder", "needs at least one observable"));
        }
        if times.len() != phis.len() + 1 {
            return Err(Error::param(
                "ladder",
                format!("{} observables need {} times, got {}", phis.len(), phis.len() + 1, times.len()),
            ));
        }
        if times.windows(2).any(|w| w[0] > w[1]) || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::param("ladder", "times must be nondecreasing and nonnegative"));
        }
        Ok(LadderSpec { times, phis, f })
    }

    /// One observable repeated at every rung.
    pub fn uniform(times: Vec<f64>, phi: TestFunction, f: TestFunction) -> Result<Self> {
        let p = times.len().saturating_sub(1);
        Self::new(times, vec![phi; p], f)
    }
}

/// Ensemble mean of the ladder product. The time integral of `L f` uses the
/// trapezoid rule on the output grid.
pub fn ladder_statistic<G>(e: &Ensemble, spec: &LadderSpec, generator: G) -> Result<Estimate>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let idx = spec
        .times
        .iter()
        .map(|&t| e.grid_index(t))
        .collect::<Result<Vec<_>>>()?;
    let p = spec.phis.len();
    let (start, stop) = (idx[p - 1], idx[p]);
    let h = e.spacing();
    let samples: Vec<f64> = (0..e.n_traj)
        .into_par_iter()
        .map(|traj| {
            let lf: Vec<f64> = (start..=stop).map(|j| generator(e.position(traj, j))).collect();
            let increment = spec.f.f.value(e.position(traj, stop)) - spec.f.f.value(e.position(traj, start));
            let weight: f64 = spec
                .phis
                .iter()
                .zip(&idx)
                .map(|(phi, &j)| phi.f.value(e.position(traj, j)))
                .product();
            (increment - trapezoid(&lf, h)) * weight
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

/// One entry of the modulus: the worst pair found for a given `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusEntry {
    pub delta: f64,
    pub estimate: Estimate,
    /// Start time and lag of the maximizing pair.
    pub argmax: (f64, f64),
}

/// `max over grid pairs (t, t + h), 0 < h <= delta, of E[(f(Q_{t+h}) - f(Q_t))^2]`.
///
/// The conditional expectations of the tightness criterion are replaced by
/// unconditional second moments maximized over start times.
pub fn ka_modulus(e: &Ensemble, f: &TestFunction, deltas: &[f64], horizon: f64) -> Result<Vec<ModulusEntry>> {
    let h = e.spacing();
    for &delta in deltas {
        if !(delta > 0.0 && delta < horizon) {
            return Err(Error::param("delta", format!("{delta} must lie in (0, T)")));
        }
    }
    let last = e.grid_index(horizon).or_else(|_| {
        if horizon >= *e.grid.last().unwrap() {
            Ok(e.n_times() - 1)
        } else {
            Err(Error::OffGrid { time: horizon })
        }
    })?;
    let m = last + 1;
    let max_lag = deltas
        .iter()
        .map(|d| ((d / h) * (1.0 + 1e-9)).floor() as usize)
        .max()
        .unwrap_or(0)
        .min(m - 1);

    // values[traj * m + j]
    let values: Vec<f64> = (0..e.n_traj)
        .into_par_iter()
        .flat_map_iter(|traj| (0..m).map(move |j| f.f.value(e.position(traj, j))))
        .collect();

    // best[lag] = strongest (start, estimate) for that lag
    let best: Vec<(usize, Estimate)> = (1..=max_lag)
        .into_par_iter()
        .map(|lag| {
            let mut top: Option<(usize, Estimate)> = None;
            let mut sq = vec![0.0; e.n_traj];
            for start in 0..m - lag {
                for (traj, s) in sq.iter_mut().enumerate() {
                    let inc = values[traj * m + start + lag] - values[traj * m + start];
                    *s = inc * inc;
                }
                let est = Estimate::from_samples(&sq);
                if top.map_or(true, |(_, b)| est.mean > b.mean) {
                    top = Some((start, est));
                }
            }
            top.expect("at least one start time")
        })
        .collect();

    Ok(deltas
        .iter()
        .map(|&delta| {
            let lags = ((delta / h) * (1.0 + 1e-9)).floor() as usize;
            let pick = best[..lags.min(max_lag)]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.mean.total_cmp(&b.1 .1.mean));
            match pick {
                Some((i, &(start, est))) => ModulusEntry {
                    delta,
                    estimate: est,
                    argmax: (e.grid[start], (i + 1) as f64 * h),
                },
                None => ModulusEntry {
                    delta,
                    estimate: Estimate { mean: 0.0, se: 0.0 },
                    argmax: (0.0, 0.0),
                },
            }
        })
        .collect())
}

/// `E[max_t R1]` and `E[int_0^T R2 dt]` along a Langevin ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestTermReport {
    pub sup_r1: Estimate,
    pub int_r2: Estimate,
}

pub fn rest_term_report(
    e: &Ensemble,
    f: &TestFunction,
    v: &dyn PotentialField,
    v_eps: &dyn PotentialField,
) -> Result<RestTermReport> {
    if e.momenta.is_none() {
        return Err(Error::MissingMomenta);
    }
    let (eps, beta, h) = (e.params.eps, e.params.beta, e.spacing());
    let per_traj: Vec<(f64, f64)> = (0..e.n_traj)
        .into_par_iter()
        .map(|traj| -> Result<(f64, f64)> {
            let mut eval = RestTermEvaluator::new(f, v, v_eps, eps, beta);
            let mut sup = 0.0f64;
            let mut r2 = Vec::with_capacity(e.n_times());
            for j in 0..e.n_times() {
                let p = e.momentum(traj, j).expect("checked above");
                let (a, b) = eval.eval(e.position(traj, j), p)?;
                sup = sup.max(a);
                r2.push(b);
            }
            Ok((sup, trapezoid(&r2, h)))
        })
        .collect::<Result<_>>()?;
    let (sups, ints): (Vec<f64>, Vec<f64>) = per_traj.into_iter().unzip();
    Ok(RestTermReport {
        sup_r1: Estimate::from_samples(&sups),
        int_r2: Estimate::from_samples(&ints),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::FourierFunction;
    use crate::integrators::{simulate_ensemble, EnsembleOptions, InitialLaw, Process, ProcessKind, ScalingParams};
    use crate::potentials::Potential;

    fn cos_f() -> TestFunction {
        TestFunction::new(FourierFunction::cosine(&[1], 1.0))
    }

    /// Synthetic ensemble with the given per-trajectory momentum rows.
    fn synthetic(positions: Vec<f64>, momenta: Option<Vec<f64>>, n_traj: usize, n_times: usize) -> Ensemble {
        let sp = ScalingParams::new(0.5, 1.0, 0.1, 0.1 * (n_times - 1) as f64).unwrap();
        Ensemble {
            kind: ProcessKind::Langevin,
            params: sp,
            seed: 0,
            output_stride: 1,
            dim: 1,
            n_traj,
            grid: (0..n_times).map(|j| sp.time_of(j)).collect(),
            positions,
            momenta,
            unwrapped: None,
        }
    }

    #[test]
    fn hamiltonian_values() {
        let v = Potential::new(FourierFunction::cosine(&[1], 1.0).add_constant(1.0), "v");
        assert!((hamiltonian(&[0.5], &[0.0], &v)).abs() < 1e-15);
        assert_eq!(hamiltonian(&[0.2], &[2.0], &Potential::free(1)), 2.0);
        assert!((hamiltonian(&[0.0], &[1.0], &v) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_momenta_give_zero_moments() {
        let e = synthetic(vec![0.0; 12], Some(vec![0.0; 12]), 3, 4);
        let r = moment_report(&e, 1.5).unwrap();
        assert!(r.per_time.iter().all(|(_, est)| est.mean == 0.0 && est.se == 0.0));
        assert_eq!(r.sup_over_grid, 0.0);
        assert_eq!(r.mean_sup.mean, 0.0);
        let bare = synthetic(vec![0.0; 12], None, 3, 4);
        assert!(matches!(moment_report(&bare, 1.0), Err(Error::MissingMomenta)));
        assert!(moment_report(&e, 0.5).is_err());
    }

    #[test]
    fn moment_sup_dominates() {
        let p = vec![0.1, 2.0, -0.3, 1.0, 0.5, 0.0];
        let e = synthetic(vec![0.0; 6], Some(p), 2, 3);
        let r = moment_report(&e, 1.0).unwrap();
        for (_, est) in &r.per_time {
            assert!(r.sup_over_grid >= est.mean);
        }
        // per-trajectory maxima: 4.0 and 1.0
        assert!((r.mean_sup.mean - 2.5).abs() < 1e-15);
    }

    #[test]
    fn weak_error_identity_and_antisymmetry() {
        let v = Potential::new(FourierFunction::cosine(&[1], 1.0), "cos");
        let init = InitialLaw::point_at_rest(vec![0.2]);
        let sp = ScalingParams::new(0.3, 1.0, 1e-3, 0.1).unwrap();
        let a = simulate_ensemble(&Process::langevin(&v, &init), &sp, &EnsembleOptions::new(500, 1, 10)).unwrap();
        let b = simulate_ensemble(&Process::overdamped(&v, &init), &sp, &EnsembleOptions::new(500, 2, 10)).unwrap();
        let fs = [Observable::new("cos", cos_f())];
        let same = weak_error(&a, &a, &fs, &[0.05, 0.1]).unwrap();
        assert!(same.rows.iter().all(|r| r.estimate == 0.0 && r.pooled_se > 0.0));
        let ab = weak_error(&a, &b, &fs, &[0.1]).unwrap();
        let ba = weak_error(&b, &a, &fs, &[0.1]).unwrap();
        assert_eq!(ab.rows[0].estimate, -ba.rows[0].estimate);
        assert_eq!(ab.rows[0].pooled_se, ba.rows[0].pooled_se);
        assert!(weak_error(&a, &b, &fs, &[0.0505]).is_err());
    }

    #[test]
    fn ladder_spec_validation() {
        assert!(LadderSpec::new(vec![0.1], vec![], cos_f()).is_err());
        assert!(LadderSpec::new(vec![0.2, 0.1], vec![cos_f()], cos_f()).is_err());
        assert!(LadderSpec::new(vec![0.1, 0.2, 0.3], vec![cos_f()], cos_f()).is_err());
        assert_eq!(LadderSpec::uniform(vec![0.1, 0.2, 0.3], cos_f(), cos_f()).unwrap().phis.len(), 2);
    }

    #[test]
    fn constant_f_gives_zero_ladder() {
        let v = Potential::new(FourierFunction::cosine(&[1], 1.0), "cos");
        let init = InitialLaw::point_at_rest(vec![0.0]);
        let sp = ScalingParams::new(0.3, 1.0, 1e-3, 0.2).unwrap();
        let e = simulate_ensemble(&Process::overdamped(&v, &init), &sp, &EnsembleOptions::new(50, 1, 10)).unwrap();
        let flat = TestFunction::new(FourierFunction::constant(1, 3.0));
        let spec = LadderSpec::uniform(vec![0.05, 0.1, 0.2], cos_f(), flat.clone()).unwrap();
        let est = ladder_statistic(&e, &spec, |q| crate::corrector::apply_overdamped_generator(&flat, &v, 1.0, q)).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.se, 0.0);
        let off = LadderSpec::uniform(vec![0.05, 0.105], cos_f(), flat).unwrap();
        assert!(ladder_statistic(&e, &off, |_| 0.0).is_err());
    }

    #[test]
    fn modulus_on_frozen_paths_is_zero() {
        let v = Potential::free(1);
        let init = InitialLaw::point_at_rest(vec![0.3]);
        let sp = ScalingParams::new(0.3, 1.0, 1e-2, 1.0).unwrap();
        let e = simulate_ensemble(&Process::langevin(&v, &init), &sp, &EnsembleOptions::new(3, 1, 1).without_noise()).unwrap();
        let m = ka_modulus(&e, &cos_f(), &[0.05, 0.2], 1.0).unwrap();
        assert!(m.iter().all(|x| x.estimate.mean == 0.0));
        assert!(ka_modulus(&e, &cos_f(), &[1.5], 1.0).is_err());
    }

    #[test]
    fn rest_terms_of_constant_f_vanish() {
        let v = Potential::new(FourierFunction::cosine(&[1], 1.0), "cos");
        let init = InitialLaw::point_at_rest(vec![0.0]);
        let sp = ScalingParams::new(0.3, 1.0, 1e-3, 0.1).unwrap();
        let e = simulate_ensemble(&Process::langevin(&v, &init), &sp, &EnsembleOptions::new(20, 1, 1).with_momenta()).unwrap();
        let flat = TestFunction::new(FourierFunction::constant(1, 1.0));
        let r = rest_term_report(&e, &flat, &v, &v).unwrap();
        assert_eq!(r.sup_r1.mean, 0.0);
        assert_eq!(r.int_r2.mean, 0.0);
        let bare = simulate_ensemble(&Process::langevin(&v, &init), &sp, &EnsembleOptions::new(2, 1, 1)).unwrap();
        assert!(matches!(rest_term_report(&bare, &flat, &v, &v), Err(Error::MissingMomenta)));
    }
}
