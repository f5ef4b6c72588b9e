//! Experiment recipes behind the command line.
//!
//! Each subcommand writes into `out/<subcommand>/<name>/`, where the name is
//! a prefix of the configuration hash. Files are staged in a hidden
//! `.partial` directory and moved into place only when every file has been
//! written, so a failed run leaves nothing behind.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{ExperimentConfig, NamedFunction};
use crate::corrector::{apply_overdamped_generator, generator_difference, residual_r1, TestFunction};
use crate::diagnostics::{ka_modulus, ladder_statistic, moment_report, rest_term_report, weak_error, LadderSpec, Observable};
use crate::error::{Error, Result};
use crate::integrators::{
    fmt_f64, simulate_ensemble, Ensemble, EnsembleOptions, InitialLaw, Process, ScalingParams,
};
use crate::potentials::{sup_grad_distance, CrystalPotential, Potential, PotentialField};
use crate::rng::{derive_seed, make_stream, RngStreamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Residuals,
    Converge,
    Moments,
    Ladder,
    Modulus,
    RestTerms,
    Crystal,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Simulate,
        Subcommand::Residuals,
        Subcommand::Converge,
        Subcommand::Moments,
        Subcommand::Ladder,
        Subcommand::Modulus,
        Subcommand::RestTerms,
        Subcommand::Crystal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Residuals => "residuals",
            Subcommand::Converge => "converge",
            Subcommand::Moments => "moments",
            Subcommand::Ladder => "ladder",
            Subcommand::Modulus => "modulus",
            Subcommand::RestTerms => "rest-terms",
            Subcommand::Crystal => "crystal",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param("subcommand", format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Replaces the seed of the configuration.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out_dir: PathBuf::from("out"),
            workers: 1,
            seed: None,
        }
    }
}

/// Stream labels for `derive_seed`; one per independent ensemble.
const REFERENCE_STREAM: u64 = 0;
const LANGEVIN_STREAM: u64 = 1;
const CRYSTAL_STREAM: u64 = 1000;
const CONTRAST_STREAM: u64 = 2000;
const RESIDUAL_STREAM: u64 = 3000;

/// Run one subcommand and return the artifact directory.
pub fn run(sub: Subcommand, config: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    if opts.workers == 0 {
        return Err(Error::param("workers", "must be at least 1"));
    }
    let mut cfg = config.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;

    let mut dir = ArtifactDir::create(&opts.out_dir, sub, &cfg)?;
    let outcome = pool.install(|| {
        let exp = Experiment::new(&cfg);
        match sub {
            Subcommand::Simulate => exp.simulate(&mut dir),
            Subcommand::Residuals => exp.residuals(&mut dir),
            Subcommand::Converge => exp.converge(&mut dir),
            Subcommand::Moments => exp.moments(&mut dir),
            Subcommand::Ladder => exp.ladder(&mut dir),
            Subcommand::Modulus => exp.modulus(&mut dir),
            Subcommand::RestTerms => exp.rest_terms(&mut dir),
            Subcommand::Crystal => exp.crystal(&mut dir),
        }
    });
    match outcome {
        Ok(()) => dir.commit(sub, &cfg),
        Err(e) => {
            dir.abandon();
            Err(e)
        }
    }
}

/// Staging area for one run.
struct ArtifactDir {
    partial: PathBuf,
    target: PathBuf,
    schema: Vec<(String, Vec<String>)>,
}

impl ArtifactDir {
    fn create(out: &Path, sub: Subcommand, cfg: &ExperimentConfig) -> Result<Self> {
        let name = cfg.hash()[..16].to_string();
        let parent = out.join(sub.name());
        let partial = parent.join(format!(".{name}.partial"));
        if partial.exists() {
            fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
        }
        fs::create_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
        Ok(ArtifactDir {
            partial,
            target: parent.join(name),
            schema: Vec::new(),
        })
    }

    /// Write one file. `write` produces the whole file, header included.
    fn file<F>(&mut self, name: &str, columns: Vec<String>, write: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.partial.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))?;
        self.schema.push((name.to_string(), columns));
        Ok(())
    }

    /// A CSV file with a header line and preformatted rows.
    fn table(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let cols: Vec<String> = columns.iter().map(|s| s.to_string()).collect();
        self.file(name, cols, |out| {
            writeln!(out, "{}", columns.join(","))?;
            for r in rows {
                writeln!(out, "{}", r.join(","))?;
            }
            Ok(())
        })
    }

    fn commit(mut self, sub: Subcommand, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let config_text = cfg.to_toml_string();
        let path = self.partial.join("config.toml");
        fs::write(&path, &config_text).map_err(|e| Error::io(&path, e))?;

        let mut schema = toml::Table::new();
        for (name, cols) in &self.schema {
            schema.insert(
                name.clone(),
                toml::Value::Array(cols.iter().cloned().map(toml::Value::String).collect()),
            );
        }
        let mut manifest = toml::Table::new();
        manifest.insert("subcommand".into(), sub.name().into());
        manifest.insert("config_hash".into(), cfg.hash().into());
        manifest.insert("seed".into(), crate::config::seed_value(cfg.seed));
        manifest.insert(
            "version".into(),
            format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")).into(),
        );
        manifest.insert("schema".into(), toml::Value::Table(schema));
        let path = self.partial.join("manifest.toml");
        fs::write(&path, toml::to_string(&manifest).expect("manifest serializes")).map_err(|e| Error::io(&path, e))?;

        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.partial, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.schema.clear();
        Ok(self.target.clone())
    }

    fn abandon(self) {
        let _ = fs::remove_dir_all(&self.partial);
    }
}

fn row<I: IntoIterator<Item = String>>(cells: I) -> Vec<String> {
    cells.into_iter().collect()
}

/// Ensembles and potentials derived from one configuration.
struct Experiment<'a> {
    cfg: &'a ExperimentConfig,
    v: Potential,
}

impl<'a> Experiment<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Experiment {
            cfg,
            v: Potential::new(cfg.potential.clone(), "V").normalized(),
        }
    }

    fn observables(&self) -> Vec<Observable> {
        self.cfg
            .observables
            .iter()
            .map(|NamedFunction { label, f }| Observable::new(label.clone(), TestFunction::new(f.clone())))
            .collect()
    }

    fn test_function(&self, label: &str) -> Result<TestFunction> {
        self.cfg
            .observable(label)
            .map(|o| TestFunction::new(o.f.clone()))
            .ok_or_else(|| Error::param("observable", format!("unknown label `{label}`")))
    }

    fn options(&self, label: u64) -> EnsembleOptions {
        let mut o = EnsembleOptions::new(self.cfg.n_traj, derive_seed(self.cfg.seed, label), 1);
        o.memory_limit_bytes = self.cfg.memory_limit_bytes();
        o
    }

    /// Overdamped reference for `V`. Its `eps` field is unused and set to 1.
    fn reference(&self) -> Result<Ensemble> {
        let c = self.cfg;
        let (sp, stride) = ScalingParams::on_grid(1.0, c.beta, c.dt.reference, c.horizon, c.output_dt)?;
        let init = InitialLaw {
            position: c.position.clone(),
            momentum: crate::integrators::MomentumLaw::Zero,
        };
        let mut opts = self.options(REFERENCE_STREAM);
        opts.output_stride = stride;
        simulate_ensemble(&Process::overdamped(&self.v, &init), &sp, &opts)
    }

    fn langevin(&self, i: usize, v_eps: &dyn PotentialField, stream: u64, momenta: bool) -> Result<Ensemble> {
        let c = self.cfg;
        let eps = c.eps[i];
        let (sp, stride) = ScalingParams::on_grid(eps, c.beta, c.langevin_dt(eps), c.horizon, c.output_dt)?;
        let init = InitialLaw {
            position: c.position.clone(),
            momentum: c.momentum.law(eps, c.beta),
        };
        let mut opts = self.options(stream + i as u64);
        opts.output_stride = stride;
        opts.record_momenta = momenta;
        simulate_ensemble(&Process::langevin(v_eps, &init), &sp, &opts)
    }

    fn simulate(&self, dir: &mut ArtifactDir) -> Result<()> {
        let r = self.reference()?;
        dir.file("overdamped.csv", r.csv_columns(), |out| r.write_csv(out))?;
        drop(r);
        for i in 0..self.cfg.eps.len() {
            let e = self.langevin(i, &self.v, LANGEVIN_STREAM, true)?;
            dir.file(&format!("langevin_eps{i}.csv"), e.csv_columns(), |out| e.write_csv(out))?;
        }
        Ok(())
    }

    /// The generator identity and both rest terms at random phase points:
    /// `q` uniform on the torus, `p` uniform in `[-r, r]^d`.
    fn residuals(&self, dir: &mut ArtifactDir) -> Result<()> {
        let c = self.cfg;
        let d = c.dim;
        let mut rows = Vec::new();
        for (i, &eps) in c.eps.iter().enumerate() {
            let mut s = make_stream(RngStreamSpec::new(derive_seed(c.seed, RESIDUAL_STREAM), i as u64));
            for n in 0..c.residual_points {
                let q: Vec<f64> = (0..d).map(|_| s.next_uniform()).collect();
                let p: Vec<f64> = (0..d)
                    .map(|_| c.residual_momentum_range * (2.0 * s.next_uniform() - 1.0))
                    .collect();
                for o in &c.observables {
                    let f = TestFunction::new(o.f.clone());
                    let g = generator_difference(&f, &self.v, &self.v, eps, c.beta, &q, &p);
                    rows.push(row([
                        fmt_f64(eps),
                        o.label.clone(),
                        n.to_string(),
                        fmt_f64(g.direct),
                        fmt_f64(g.closed),
                        fmt_f64(g.discrepancy()),
                        fmt_f64(residual_r1(&f, eps, &q, &p)),
                        fmt_f64(g.closed.abs()),
                    ]));
                }
            }
        }
        dir.table(
            "residuals.csv",
            &["eps", "f", "point", "direct", "closed", "discrepancy", "r1", "r2"],
            &rows,
        )
    }

    fn converge(&self, dir: &mut ArtifactDir) -> Result<()> {
        let r = self.reference()?;
        let fs = self.observables();
        let mut table = crate::diagnostics::WeakErrorTable::default();
        for i in 0..self.cfg.eps.len() {
            let e = self.langevin(i, &self.v, LANGEVIN_STREAM, false)?;
            table.rows.extend(weak_error(&e, &r, &fs, &self.cfg.converge_times)?.rows);
        }
        dir.file("weak_error.csv", cols(&["eps", "f", "t", "estimate", "pooled_se"]), |out| {
            table.write_csv(out)
        })
    }

    fn moments(&self, dir: &mut ArtifactDir) -> Result<()> {
        let c = self.cfg;
        let mut rows = Vec::new();
        for (i, &eps) in c.eps.iter().enumerate() {
            let e = self.langevin(i, &self.v, LANGEVIN_STREAM, true)?;
            for &gamma in &c.gammas {
                let rep = moment_report(&e, gamma)?;
                for (t, est) in &rep.per_time {
                    rows.push(row([fmt_f64(eps), fmt_f64(gamma), "moment".into(), fmt_f64(*t), fmt_f64(est.mean), fmt_f64(est.se)]));
                }
                let (t_max, at_max) = rep
                    .per_time
                    .iter()
                    .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
                    .expect("nonempty grid");
                rows.push(row([
                    fmt_f64(eps),
                    fmt_f64(gamma),
                    "sup_over_grid".into(),
                    fmt_f64(*t_max),
                    fmt_f64(rep.sup_over_grid),
                    fmt_f64(at_max.se),
                ]));
                rows.push(row([
                    fmt_f64(eps),
                    fmt_f64(gamma),
                    "mean_sup".into(),
                    fmt_f64(c.horizon),
                    fmt_f64(rep.mean_sup.mean),
                    fmt_f64(rep.mean_sup.se),
                ]));
                rows.push(row([
                    fmt_f64(eps),
                    fmt_f64(gamma),
                    "scaled_mean_sup".into(),
                    fmt_f64(c.horizon),
                    fmt_f64(eps * eps * rep.mean_sup.mean),
                    fmt_f64(eps * eps * rep.mean_sup.se),
                ]));
            }
        }
        dir.table("moments.csv", &["eps", "gamma", "statistic", "t", "estimate", "se"], &rows)
    }

    fn ladder_specs(&self) -> Result<Vec<LadderSpec>> {
        if self.cfg.ladders.is_empty() {
            return Err(Error::param("ladder", "the configuration has no [[ladder]] blocks"));
        }
        self.cfg
            .ladders
            .iter()
            .map(|l| {
                let phis = l.phis.iter().map(|p| self.test_function(p)).collect::<Result<Vec<_>>>()?;
                LadderSpec::new(l.times.clone(), phis, self.test_function(&l.f)?)
            })
            .collect()
    }

    fn ladder(&self, dir: &mut ArtifactDir) -> Result<()> {
        let specs = self.ladder_specs()?;
        let beta = self.cfg.beta;
        let mut rows = Vec::new();
        let mut emit = |e: &Ensemble, label: &str, eps: f64| -> Result<()> {
            for (n, spec) in specs.iter().enumerate() {
                let est = ladder_statistic(e, spec, |q| apply_overdamped_generator(&spec.f, &self.v, beta, q))?;
                rows.push(row([label.to_string(), fmt_f64(eps), n.to_string(), fmt_f64(est.mean), fmt_f64(est.se)]));
            }
            Ok(())
        };
        emit(&self.reference()?, "overdamped", 0.0)?;
        for (i, &eps) in self.cfg.eps.iter().enumerate() {
            emit(&self.langevin(i, &self.v, LANGEVIN_STREAM, false)?, "langevin", eps)?;
        }
        dir.table("ladder.csv", &["process", "eps", "ladder", "estimate", "se"], &rows)
    }

    fn modulus(&self, dir: &mut ArtifactDir) -> Result<()> {
        let c = self.cfg;
        let f = self.test_function(&c.modulus_f)?;
        let mut rows = Vec::new();
        let mut emit = |e: &Ensemble, label: &str, eps: f64| -> Result<()> {
            for m in ka_modulus(e, &f, &c.modulus_deltas, c.horizon)? {
                rows.push(row([
                    label.to_string(),
                    fmt_f64(eps),
                    fmt_f64(m.delta),
                    fmt_f64(m.estimate.mean),
                    fmt_f64(m.estimate.se),
                    fmt_f64(m.argmax.0),
                    fmt_f64(m.argmax.1),
                ]));
            }
            Ok(())
        };
        emit(&self.reference()?, "overdamped", 0.0)?;
        for (i, &eps) in c.eps.iter().enumerate() {
            emit(&self.langevin(i, &self.v, LANGEVIN_STREAM, false)?, "langevin", eps)?;
        }
        dir.table(
            "modulus.csv",
            &["process", "eps", "delta", "estimate", "se", "t_start", "lag"],
            &rows,
        )
    }

    fn rest_terms(&self, dir: &mut ArtifactDir) -> Result<()> {
        let mut rows = Vec::new();
        for (i, &eps) in self.cfg.eps.iter().enumerate() {
            let e = self.langevin(i, &self.v, LANGEVIN_STREAM, true)?;
            for o in &self.cfg.observables {
                let f = TestFunction::new(o.f.clone());
                let r = rest_term_report(&e, &f, &self.v, &self.v)?;
                rows.push(row([
                    fmt_f64(eps),
                    o.label.clone(),
                    fmt_f64(r.sup_r1.mean),
                    fmt_f64(r.sup_r1.se),
                    fmt_f64(r.int_r2.mean),
                    fmt_f64(r.int_r2.se),
                ]));
            }
        }
        dir.table(
            "rest_terms.csv",
            &["eps", "f", "sup_r1", "sup_r1_se", "int_r2", "int_r2_se"],
            &rows,
        )
    }

    /// Langevin runs in `V_eps = V + alpha chi(k q)` against the overdamped
    /// reference in `V`, for the configured rule and, if requested, the
    /// regime `alpha k = contrast`.
    fn crystal(&self, dir: &mut ArtifactDir) -> Result<()> {
        let c = self.cfg;
        let spec = c
            .crystal
            .as_ref()
            .ok_or_else(|| Error::param("crystal", "the configuration has no [crystal] section"))?;
        let r = self.reference()?;
        let fs = self.observables();
        let mut rows = Vec::new();
        for (i, &eps) in c.eps.iter().enumerate() {
            let (alpha, k) = spec.params(eps)?;
            let mut regimes = vec![("rule", alpha, CRYSTAL_STREAM)];
            if let Some(ak) = spec.contrast {
                regimes.push(("contrast", ak / k as f64, CONTRAST_STREAM));
            }
            for (regime, alpha, stream) in regimes {
                let v_eps = CrystalPotential::new(self.v.clone(), spec.chi.clone(), alpha, k)?;
                let dist = sup_grad_distance(&v_eps, &self.v)?;
                let hess = v_eps.hessian_bound();
                let e = self.langevin(i, &v_eps, stream, false)?;
                for w in weak_error(&e, &r, &fs, &c.converge_times)?.rows {
                    rows.push(row([
                        regime.to_string(),
                        fmt_f64(eps),
                        fmt_f64(alpha),
                        k.to_string(),
                        w.label,
                        fmt_f64(w.t),
                        fmt_f64(w.estimate),
                        fmt_f64(w.pooled_se),
                        fmt_f64(dist),
                        fmt_f64(hess),
                    ]));
                }
            }
        }
        dir.table(
            "crystal.csv",
            &[
                "regime",
                "eps",
                "alpha",
                "k",
                "f",
                "t",
                "estimate",
                "pooled_se",
                "sup_grad_distance",
                "hessian_bound",
            ],
            &rows,
        )
    }
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
