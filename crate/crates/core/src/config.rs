//! Experiment configuration files.
//!
//! TOML with a fixed set of keys and sections; unknown keys are rejected.
//! Every problem in a file is collected before reporting, so one run of the
//! validator lists all of them. See `configs/reference.toml` for an
//! annotated example.

use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::fourier::FourierFunction;
use crate::integrators::{MomentumLaw, PositionLaw};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedFunction {
    pub label: String,
    pub f: FourierFunction,
}

/// `dt = min(langevin_factor * eps^2, langevin_cap)` for Langevin runs and a
/// fixed `reference` step for the overdamped process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtRule {
    pub langevin_factor: f64,
    pub langevin_cap: f64,
    pub reference: f64,
}

impl Default for DtRule {
    fn default() -> Self {
        DtRule {
            langevin_factor: 0.1,
            langevin_cap: 1e-3,
            reference: 1e-4,
        }
    }
}

impl DtRule {
    pub fn langevin(&self, eps: f64) -> f64 {
        (self.langevin_factor * eps * eps).min(self.langevin_cap)
    }
}

/// Initial momentum law as a function of `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentumSpec {
    Zero,
    /// `Gaussian(0, I / beta)`, the equilibrium law.
    Gibbs,
    /// `Gaussian(0, scale * eps^(-exponent) I)`.
    Scaled { scale: f64, exponent: f64 },
}

impl MomentumSpec {
    pub fn law(&self, eps: f64, beta: f64) -> MomentumLaw {
        match *self {
            MomentumSpec::Zero => MomentumLaw::Zero,
            MomentumSpec::Gibbs => MomentumLaw::Gaussian { variance: 1.0 / beta },
            MomentumSpec::Scaled { scale, exponent } => MomentumLaw::Gaussian {
                variance: scale * eps.powf(-exponent),
            },
        }
    }

    /// `eps E|P_0|^3` scales like `eps^(1 - 3 exponent / 2)`, which fails to
    /// vanish once `exponent >= 2/3`.
    pub fn is_heavy(&self) -> bool {
        matches!(*self, MomentumSpec::Scaled { exponent, .. } if exponent >= 2.0 / 3.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrystalEntry {
    pub eps: f64,
    pub alpha: f64,
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrystalRule {
    /// `alpha = eps^a`, `k = ceil(eps^-b)`.
    Power { a: f64, b: f64 },
    Table(Vec<CrystalEntry>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalSpec {
    pub chi: FourierFunction,
    pub rule: CrystalRule,
    /// When set, a second regime with the same `k` and `alpha = contrast / k`.
    pub contrast: Option<f64>,
}

impl CrystalSpec {
    /// `(alpha, k)` for one `eps`.
    pub fn params(&self, eps: f64) -> Result<(f64, u32)> {
        match &self.rule {
            CrystalRule::Power { a, b } => {
                let k = eps.powf(-b).ceil();
                if !(k >= 1.0 && k < u32::MAX as f64) {
                    return Err(Error::param("crystal.rule", format!("k = {k} at eps = {eps}")));
                }
                Ok((eps.powf(*a), k as u32))
            }
            CrystalRule::Table(rows) => rows
                .iter()
                .find(|r| r.eps == eps)
                .map(|r| (r.alpha, r.k))
                .ok_or_else(|| Error::param("crystal.table", format!("no entry for eps = {eps}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderBlock {
    pub times: Vec<f64>,
    /// Observable labels, one per rung.
    pub phis: Vec<String>,
    pub f: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub beta: f64,
    pub eps: Vec<f64>,
    pub horizon: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub output_dt: f64,
    pub memory_limit_mb: u64,
    pub dt: DtRule,
    pub potential: FourierFunction,
    pub crystal: Option<CrystalSpec>,
    pub position: PositionLaw,
    pub momentum: MomentumSpec,
    pub observables: Vec<NamedFunction>,
    pub converge_times: Vec<f64>,
    pub gammas: Vec<f64>,
    pub ladders: Vec<LadderBlock>,
    pub modulus_deltas: Vec<f64>,
    pub modulus_f: String,
    pub residual_points: usize,
    pub residual_momentum_range: f64,
}

pub const DEFAULT_MEMORY_LIMIT_MB: u64 = 3072;

/// Read and validate a configuration file. Relative Fourier file paths are
/// resolved against the file's directory.
pub fn parse_config(path: &Path, allow_heavy_tails: bool) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::parse_str(&text, base, allow_heavy_tails)
}

impl ExperimentConfig {
    pub fn parse_str(text: &str, base_dir: &Path, allow_heavy_tails: bool) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut r = Reader {
            errors: Vec::new(),
            base_dir,
        };
        let cfg = r.config(&table, allow_heavy_tails);
        match cfg {
            Some(c) if r.errors.is_empty() => Ok(c),
            _ => Err(Error::Config(r.errors)),
        }
    }

    pub fn observable(&self, label: &str) -> Option<&NamedFunction> {
        self.observables.iter().find(|o| o.label == label)
    }

    /// Langevin step for `eps` before alignment to the output grid.
    pub fn langevin_dt(&self, eps: f64) -> f64 {
        self.dt.langevin(eps)
    }

    pub fn memory_limit_bytes(&self) -> u128 {
        self.memory_limit_mb as u128 * (1 << 20)
    }
}

pub(crate) fn seed_value(seed: u64) -> Value {
    match i64::try_from(seed) {
        Ok(i) => Value::Integer(i),
        Err(_) => Value::String(seed.to_string()),
    }
}

impl ExperimentConfig {
    /// Canonical text form. Fourier tables are always written inline.
    pub fn to_toml_string(&self) -> String {
        let mut t = Table::new();
        t.insert("dim".into(), Value::Integer(self.dim as i64));
        t.insert("beta".into(), Value::Float(self.beta));
        t.insert("eps".into(), floats(&self.eps));
        t.insert("horizon".into(), Value::Float(self.horizon));
        t.insert("n_traj".into(), Value::Integer(self.n_traj as i64));
        t.insert("seed".into(), seed_value(self.seed));
        t.insert("output_dt".into(), Value::Float(self.output_dt));
        t.insert("memory_limit_mb".into(), Value::Integer(self.memory_limit_mb as i64));

        let mut dt = Table::new();
        dt.insert("langevin_factor".into(), Value::Float(self.dt.langevin_factor));
        dt.insert("langevin_cap".into(), Value::Float(self.dt.langevin_cap));
        dt.insert("reference".into(), Value::Float(self.dt.reference));
        t.insert("dt".into(), Value::Table(dt));

        let mut pot = Table::new();
        pot.insert("terms".into(), Value::String(self.potential.to_text()));
        t.insert("potential".into(), Value::Table(pot));

        if let Some(c) = &self.crystal {
            let mut ct = Table::new();
            ct.insert("chi".into(), Value::String(c.chi.to_text()));
            match &c.rule {
                CrystalRule::Power { a, b } => {
                    ct.insert("rule".into(), Value::String(format!("alpha=eps^{a:?}, k=ceil(eps^-{b:?})")));
                }
                CrystalRule::Table(rows) => {
                    let rows = rows
                        .iter()
                        .map(|r| {
                            let mut e = Table::new();
                            e.insert("eps".into(), Value::Float(r.eps));
                            e.insert("alpha".into(), Value::Float(r.alpha));
                            e.insert("k".into(), Value::Integer(r.k as i64));
                            Value::Table(e)
                        })
                        .collect();
                    ct.insert("table".into(), Value::Array(rows));
                }
            }
            if let Some(c) = c.contrast {
                ct.insert("contrast".into(), Value::Float(c));
            }
            t.insert("crystal".into(), Value::Table(ct));
        }

        let mut init = Table::new();
        match &self.position {
            PositionLaw::Point(q) => init.insert("position".into(), floats(q)),
            PositionLaw::Uniform => init.insert("position".into(), Value::String("uniform".into())),
        };
        match self.momentum {
            MomentumSpec::Zero => {
                init.insert("momentum".into(), Value::String("zero".into()));
            }
            MomentumSpec::Gibbs => {
                init.insert("momentum".into(), Value::String("gibbs".into()));
            }
            MomentumSpec::Scaled { scale, exponent } => {
                init.insert("momentum".into(), Value::String("scaled".into()));
                init.insert("momentum_scale".into(), Value::Float(scale));
                init.insert("momentum_exponent".into(), Value::Float(exponent));
            }
        }
        t.insert("initial".into(), Value::Table(init));

        let obs = self
            .observables
            .iter()
            .map(|o| {
                let mut e = Table::new();
                e.insert("label".into(), Value::String(o.label.clone()));
                e.insert("terms".into(), Value::String(o.f.to_text()));
                Value::Table(e)
            })
            .collect();
        t.insert("observable".into(), Value::Array(obs));

        let mut conv = Table::new();
        conv.insert("times".into(), floats(&self.converge_times));
        t.insert("converge".into(), Value::Table(conv));

        let mut mom = Table::new();
        mom.insert("gamma".into(), floats(&self.gammas));
        t.insert("moments".into(), Value::Table(mom));

        if !self.ladders.is_empty() {
            let ls = self
                .ladders
                .iter()
                .map(|l| {
                    let mut e = Table::new();
                    e.insert("times".into(), floats(&l.times));
                    e.insert("phi".into(), Value::Array(l.phis.iter().cloned().map(Value::String).collect()));
                    e.insert("f".into(), Value::String(l.f.clone()));
                    Value::Table(e)
                })
                .collect();
            t.insert("ladder".into(), Value::Array(ls));
        }

        let mut m = Table::new();
        m.insert("deltas".into(), floats(&self.modulus_deltas));
        m.insert("f".into(), Value::String(self.modulus_f.clone()));
        t.insert("modulus".into(), Value::Table(m));

        let mut res = Table::new();
        res.insert("points".into(), Value::Integer(self.residual_points as i64));
        res.insert("momentum_range".into(), Value::Float(self.residual_momentum_range));
        t.insert("residuals".into(), Value::Table(res));

        toml::to_string(&t).expect("config tables always serialize")
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

const TOP_KEYS: &[&str] = &[
    "dim",
    "beta",
    "eps",
    "horizon",
    "n_traj",
    "seed",
    "output_dt",
    "memory_limit_mb",
    "dt",
    "potential",
    "crystal",
    "initial",
    "observable",
    "converge",
    "moments",
    "ladder",
    "modulus",
    "residuals",
];

struct Reader<'a> {
    errors: Vec<String>,
    base_dir: &'a Path,
}

impl Reader<'_> {
    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn known_keys(&mut self, t: &Table, section: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                let at = if section.is_empty() {
                    String::new()
                } else {
                    format!(" in [{section}]")
                };
                self.err(format!("unknown key `{k}`{at}"));
            }
        }
    }

    fn float(&mut self, t: &Table, key: &str, name: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.err(format!("`{name}` must be a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn positive(&mut self, t: &Table, key: &str, name: &str) -> Option<f64> {
        let x = self.float(t, key, name)?;
        if !(x.is_finite() && x > 0.0) {
            self.err(format!("`{name}` must be finite and positive, got {x}"));
            return None;
        }
        Some(x)
    }

    fn required<T>(&mut self, v: Option<T>, present: bool, name: &str) -> Option<T> {
        if !present {
            self.err(format!("missing required key `{name}`"));
        }
        v
    }

    /// A non-negative integer, or a decimal string for values beyond the TOML integer range.
    fn seed(&mut self, t: &Table) -> Option<u64> {
        let parsed = match t.get("seed")? {
            Value::Integer(i) => u64::try_from(*i).ok(),
            Value::String(s) => s.trim().parse::<u64>().ok(),
            other => {
                self.err(format!("`seed` must be an integer, found {}", other.type_str()));
                return None;
            }
        };
        if parsed.is_none() {
            self.err(format!("`seed` must lie in 0..=18446744073709551615, got {}", t["seed"]));
        }
        parsed
    }

    fn integer(&mut self, t: &Table, key: &str, name: &str) -> Option<i64> {
        match t.get(key)? {
            Value::Integer(i) => Some(*i),
            other => {
                self.err(format!("`{name}` must be an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn float_list(&mut self, t: &Table, key: &str, name: &str) -> Option<Vec<f64>> {
        let arr = match t.get(key)? {
            Value::Array(a) => a,
            other => {
                self.err(format!("`{name}` must be an array of numbers, found {}", other.type_str()));
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for v in arr {
            match v {
                Value::Float(x) => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    self.err(format!("`{name}` entries must be numbers, found {}", other.type_str()));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn string(&mut self, t: &Table, key: &str, name: &str) -> Option<String> {
        match t.get(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.err(format!("`{name}` must be a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn table<'t>(&mut self, t: &'t Table, key: &str) -> Option<&'t Table> {
        match t.get(key)? {
            Value::Table(s) => Some(s),
            other => {
                self.err(format!("`{key}` must be a section, found {}", other.type_str()));
                None
            }
        }
    }

    fn tables<'t>(&mut self, t: &'t Table, key: &str) -> Vec<&'t Table> {
        match t.get(key) {
            None => Vec::new(),
            Some(Value::Array(a)) => a
                .iter()
                .filter_map(|v| match v {
                    Value::Table(s) => Some(s),
                    _ => {
                        self.err(format!("`{key}` entries must be tables"));
                        None
                    }
                })
                .collect(),
            Some(other) => {
                self.err(format!("`{key}` must be an array of tables, found {}", other.type_str()));
                Vec::new()
            }
        }
    }

    /// A Fourier table given inline under `inline` or by path under `file`.
    fn fourier(&mut self, t: &Table, inline: &str, file: &str, section: &str, dim: Option<usize>) -> Option<FourierFunction> {
        let text = match (t.get(inline), t.get(file)) {
            (Some(_), Some(_)) => {
                self.err(format!("[{section}] gives both `{inline}` and `{file}`"));
                return None;
            }
            (Some(_), None) => self.string(t, inline, &format!("{section}.{inline}"))?,
            (None, Some(_)) => {
                let rel = self.string(t, file, &format!("{section}.{file}"))?;
                let path = self.base_dir.join(&rel);
                match std::fs::read_to_string(&path) {
                    Ok(s) => s,
                    Err(e) => {
                        self.err(format!("[{section}] cannot read `{}`: {e}", path.display()));
                        return None;
                    }
                }
            }
            (None, None) => {
                self.err(format!("[{section}] needs `{inline}` or `{file}`"));
                return None;
            }
        };
        match (dim, FourierFunction::parse_text(&text, dim)) {
            (_, Ok(f)) => Some(f),
            (None, Err(_)) => None,
            (Some(_), Err(e)) => {
                self.err(format!("[{section}] {e}"));
                None
            }
        }
    }

    fn config(&mut self, t: &Table, allow_heavy_tails: bool) -> Option<ExperimentConfig> {
        self.known_keys(t, "", TOP_KEYS);

        let dim = self.integer(t, "dim", "dim");
        let dim = self.required(dim, t.contains_key("dim"), "dim").and_then(|d| {
            if d < 1 {
                self.err(format!("`dim` must be at least 1, got {d}"));
                None
            } else {
                Some(d as usize)
            }
        });
        let beta = self.positive(t, "beta", "beta");
        let beta = self.required(beta, t.contains_key("beta"), "beta");
        let horizon = self.positive(t, "horizon", "horizon");
        let horizon = self.required(horizon, t.contains_key("horizon"), "horizon");

        let eps = self.float_list(t, "eps", "eps");
        let eps = self.required(eps, t.contains_key("eps"), "eps").and_then(|e| self.check_eps(e));

        let n_traj = self.integer(t, "n_traj", "n_traj");
        let n_traj = self.required(n_traj, t.contains_key("n_traj"), "n_traj").and_then(|n| {
            if n < 1 {
                self.err(format!("`n_traj` must be at least 1, got {n}"));
                None
            } else {
                Some(n as usize)
            }
        });
        let seed = self.seed(t).unwrap_or(0);
        let output_dt = match t.get("output_dt") {
            Some(_) => self.positive(t, "output_dt", "output_dt"),
            None => horizon.map(|h| h / 100.0),
        };
        if let (Some(o), Some(h)) = (output_dt, horizon) {
            let n = (h / o).round();
            if o > h || (n * o - h).abs() > 1e-9 * h {
                self.err(format!("`output_dt` = {o} must divide the horizon {h}"));
            }
        }
        let memory_limit_mb = match self.integer(t, "memory_limit_mb", "memory_limit_mb") {
            Some(m) if m < 1 => {
                self.err(format!("`memory_limit_mb` must be positive, got {m}"));
                DEFAULT_MEMORY_LIMIT_MB
            }
            Some(m) => m as u64,
            None => DEFAULT_MEMORY_LIMIT_MB,
        };

        let dt = self.dt_rule(t);
        let potential = match self.table(t, "potential") {
            Some(p) => {
                self.known_keys(p, "potential", &["terms", "file"]);
                self.fourier(p, "terms", "file", "potential", dim)
            }
            None => {
                self.err("missing required section [potential]");
                None
            }
        };
        let crystal = match self.table(t, "crystal") {
            Some(c) => self.crystal(c, dim, eps.as_deref()),
            None => None,
        };
        let (position, momentum) = self.initial(t, dim, allow_heavy_tails);
        let observables = self.observables(t, dim);
        let labels: BTreeSet<String> = observables.iter().map(|o| o.label.clone()).collect();

        let converge_times = match self.table(t, "converge") {
            Some(c) => {
                self.known_keys(c, "converge", &["times"]);
                self.float_list(c, "times", "converge.times")
            }
            None => None,
        }
        .or_else(|| horizon.map(|h| vec![h]))
        .unwrap_or_default();
        if let Some(h) = horizon {
            self.check_times(&converge_times, h, "converge.times");
        }

        let gammas = match self.table(t, "moments") {
            Some(m) => {
                self.known_keys(m, "moments", &["gamma"]);
                self.float_list(m, "gamma", "moments.gamma")
            }
            None => None,
        }
        .unwrap_or_else(|| vec![1.0, 1.5]);
        for g in &gammas {
            if !(*g >= 1.0 && g.is_finite()) {
                self.err(format!("`moments.gamma` entries must be >= 1, got {g}"));
            }
        }

        let ladders = self.ladders(t, horizon, &labels);

        let (modulus_deltas, modulus_f) = match self.table(t, "modulus") {
            Some(m) => {
                self.known_keys(m, "modulus", &["deltas", "f"]);
                (
                    self.float_list(m, "deltas", "modulus.deltas"),
                    self.string(m, "f", "modulus.f"),
                )
            }
            None => (None, None),
        };
        let modulus_deltas = modulus_deltas
            .or_else(|| horizon.map(|h| vec![h / 20.0, h / 10.0, h / 4.0]))
            .unwrap_or_default();
        if let Some(h) = horizon {
            for d in &modulus_deltas {
                if !(*d > 0.0 && *d < h) {
                    self.err(format!("`modulus.deltas` entries must lie in (0, horizon), got {d}"));
                }
            }
        }
        let modulus_f = modulus_f.or_else(|| observables.first().map(|o| o.label.clone())).unwrap_or_default();
        if !observables.is_empty() && !labels.contains(&modulus_f) {
            self.err(format!("`modulus.f` names unknown observable `{modulus_f}`"));
        }

        let (points, range) = match self.table(t, "residuals") {
            Some(r) => {
                self.known_keys(r, "residuals", &["points", "momentum_range"]);
                (
                    self.integer(r, "points", "residuals.points"),
                    self.positive(r, "momentum_range", "residuals.momentum_range"),
                )
            }
            None => (None, None),
        };
        let residual_points = match points {
            Some(p) if p < 1 => {
                self.err(format!("`residuals.points` must be positive, got {p}"));
                1
            }
            Some(p) => p as usize,
            None => 1000,
        };

        Some(ExperimentConfig {
            dim: dim?,
            beta: beta?,
            eps: eps?,
            horizon: horizon?,
            n_traj: n_traj?,
            seed,
            output_dt: output_dt?,
            memory_limit_mb,
            dt: dt?,
            potential: potential?,
            crystal,
            position: position?,
            momentum: momentum?,
            observables,
            converge_times,
            gammas,
            ladders,
            modulus_deltas,
            modulus_f,
            residual_points,
            residual_momentum_range: range.unwrap_or(5.0),
        })
    }

    fn check_eps(&mut self, eps: Vec<f64>) -> Option<Vec<f64>> {
        if eps.is_empty() {
            self.err("`eps` must not be empty");
            return None;
        }
        if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            self.err("`eps` entries must be finite and positive");
            return None;
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            self.err("`eps` must be strictly decreasing");
            return None;
        }
        Some(eps)
    }

    fn check_times(&mut self, times: &[f64], horizon: f64, name: &str) {
        if times.is_empty() {
            self.err(format!("`{name}` must not be empty"));
        }
        for t in times {
            if !(*t >= 0.0 && *t <= horizon) {
                self.err(format!("`{name}` entries must lie in [0, horizon], got {t}"));
            }
        }
    }

    fn dt_rule(&mut self, t: &Table) -> Option<DtRule> {
        let mut rule = DtRule::default();
        if let Some(d) = self.table(t, "dt") {
            self.known_keys(d, "dt", &["langevin_factor", "langevin_cap", "reference"]);
            let before = self.errors.len();
            if let Some(x) = self.positive(d, "langevin_factor", "dt.langevin_factor") {
                rule.langevin_factor = x;
            }
            if let Some(x) = self.positive(d, "langevin_cap", "dt.langevin_cap") {
                rule.langevin_cap = x;
            }
            if let Some(x) = self.positive(d, "reference", "dt.reference") {
                rule.reference = x;
            }
            if self.errors.len() > before {
                return None;
            }
        }
        Some(rule)
    }

    fn crystal(&mut self, c: &Table, dim: Option<usize>, eps: Option<&[f64]>) -> Option<CrystalSpec> {
        self.known_keys(c, "crystal", &["chi", "chi_file", "rule", "table", "contrast"]);
        let chi = self.fourier(c, "chi", "chi_file", "crystal", dim);
        let contrast = match c.get("contrast") {
            Some(_) => self.positive(c, "contrast", "crystal.contrast"),
            None => None,
        };
        let rule = match (c.get("rule"), c.get("table")) {
            (Some(_), Some(_)) => {
                self.err("[crystal] gives both `rule` and `table`");
                None
            }
            (Some(_), None) => {
                let s = self.string(c, "rule", "crystal.rule")?;
                match parse_power_rule(&s) {
                    Some((a, b)) => Some(CrystalRule::Power { a, b }),
                    None => {
                        self.err(format!(
                            "`crystal.rule` must read `alpha=eps^a, k=ceil(eps^-b)`, got `{s}`"
                        ));
                        None
                    }
                }
            }
            (None, Some(_)) => {
                let mut rows = Vec::new();
                for row in self.tables(c, "table") {
                    self.known_keys(row, "crystal.table", &["eps", "alpha", "k"]);
                    let e = self.positive(row, "eps", "crystal.table.eps");
                    let a = self.float(row, "alpha", "crystal.table.alpha");
                    let k = self.integer(row, "k", "crystal.table.k");
                    match (e, a, k) {
                        (Some(eps), Some(alpha), Some(k)) if k >= 1 && k <= u32::MAX as i64 => {
                            rows.push(CrystalEntry { eps, alpha, k: k as u32 })
                        }
                        (_, _, Some(k)) if k < 1 => self.err(format!("`crystal.table.k` must be positive, got {k}")),
                        _ => self.err("every `crystal.table` row needs `eps`, `alpha` and `k`"),
                    }
                }
                if let Some(eps) = eps {
                    for e in eps {
                        if !rows.iter().any(|r| r.eps == *e) {
                            self.err(format!("`crystal.table` has no row for eps = {e}"));
                        }
                    }
                }
                Some(CrystalRule::Table(rows))
            }
            (None, None) => {
                self.err("[crystal] needs `rule` or `table`");
                None
            }
        };
        Some(CrystalSpec {
            chi: chi?,
            rule: rule?,
            contrast,
        })
    }

    fn initial(&mut self, t: &Table, dim: Option<usize>, allow_heavy_tails: bool) -> (Option<PositionLaw>, Option<MomentumSpec>) {
        let empty = Table::new();
        let init = self.table(t, "initial").unwrap_or(&empty);
        self.known_keys(
            init,
            "initial",
            &["position", "momentum", "momentum_scale", "momentum_exponent"],
        );
        let position = match init.get("position") {
            None => dim.map(|d| PositionLaw::Point(vec![0.0; d])),
            Some(Value::String(s)) if s == "uniform" => Some(PositionLaw::Uniform),
            Some(Value::Array(_)) => match self.float_list(init, "position", "initial.position") {
                None => None,
                Some(q) => match dim {
                    Some(d) if q.len() != d => {
                        self.err(format!("`initial.position` has {} coordinates, dim is {d}", q.len()));
                        None
                    }
                    _ if q.iter().any(|x| !x.is_finite()) => {
                        self.err("`initial.position` must be finite");
                        None
                    }
                    _ => Some(PositionLaw::Point(q)),
                },
            },
            Some(_) => {
                self.err("`initial.position` must be a coordinate array or \"uniform\"");
                None
            }
        };
        let kind = self.string(init, "momentum", "initial.momentum").unwrap_or_else(|| "gibbs".into());
        let scaled_keys = init.contains_key("momentum_scale") || init.contains_key("momentum_exponent");
        let momentum = match kind.as_str() {
            "zero" | "gibbs" if scaled_keys => {
                self.err("`momentum_scale` and `momentum_exponent` need `initial.momentum = \"scaled\"`");
                None
            }
            "zero" => Some(MomentumSpec::Zero),
            "gibbs" => Some(MomentumSpec::Gibbs),
            "scaled" => {
                let scale = self.positive(init, "momentum_scale", "initial.momentum_scale");
                let scale = self.required(scale, init.contains_key("momentum_scale"), "initial.momentum_scale");
                let exponent = self.float(init, "momentum_exponent", "initial.momentum_exponent");
                let exponent =
                    self.required(exponent, init.contains_key("momentum_exponent"), "initial.momentum_exponent");
                let (Some(scale), Some(exponent)) = (scale, exponent) else {
                    return (position, None);
                };
                let spec = MomentumSpec::Scaled { scale, exponent };
                if spec.is_heavy() && !allow_heavy_tails {
                    self.err(format!(
                        "initial momentum variance ~ eps^-{} violates the initial moment bound \
                         eps E|P_0|^3 -> 0 (needs exponent < 2/3); pass --allow-heavy-tails to run anyway",
                        exponent
                    ));
                    return (position, None);
                }
                Some(spec)
            }
            other => {
                self.err(format!("`initial.momentum` must be \"zero\", \"gibbs\" or \"scaled\", got `{other}`"));
                None
            }
        };
        (position, momentum)
    }

    fn observables(&mut self, t: &Table, dim: Option<usize>) -> Vec<NamedFunction> {
        let mut out: Vec<NamedFunction> = Vec::new();
        for (i, o) in self.tables(t, "observable").into_iter().enumerate() {
            self.known_keys(o, "observable", &["label", "terms", "file"]);
            let label = match self.string(o, "label", "observable.label") {
                Some(l) => l,
                None => {
                    self.err(format!("observable #{} has no `label`", i + 1));
                    continue;
                }
            };
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                self.err(format!("observable label `{label}` must be nonempty and use only [A-Za-z0-9_.-]"));
            }
            if out.iter().any(|x| x.label == label) {
                self.err(format!("duplicate observable label `{label}`"));
            }
            if let Some(f) = self.fourier(o, "terms", "file", &format!("observable.{label}"), dim) {
                out.push(NamedFunction { label, f });
            }
        }
        if out.is_empty() && !t.contains_key("observable") {
            self.err("at least one [[observable]] is required");
        }
        out
    }

    fn ladders(&mut self, t: &Table, horizon: Option<f64>, labels: &BTreeSet<String>) -> Vec<LadderBlock> {
        let mut out = Vec::new();
        for l in self.tables(t, "ladder") {
            self.known_keys(l, "ladder", &["times", "phi", "f"]);
            let times = self.float_list(l, "times", "ladder.times");
            let times = self.required(times, l.contains_key("times"), "ladder.times");
            let f = self.string(l, "f", "ladder.f");
            let f = self.required(f, l.contains_key("f"), "ladder.f");
            let phis = match l.get("phi") {
                Some(Value::String(s)) => times.as_ref().map(|ts| vec![s.clone(); ts.len().saturating_sub(1)]),
                Some(Value::Array(a)) => a
                    .iter()
                    .map(|v| v.as_str().map(String::from))
                    .collect::<Option<Vec<_>>>()
                    .or_else(|| {
                        self.err("`ladder.phi` entries must be observable labels");
                        None
                    }),
                Some(_) => {
                    self.err("`ladder.phi` must be a label or an array of labels");
                    None
                }
                None => {
                    self.err("missing required key `ladder.phi`");
                    None
                }
            };
            let (Some(times), Some(phis), Some(f)) = (times, phis, f) else {
                continue;
            };
            if times.len() < 2 {
                self.err("`ladder.times` needs at least two times");
            }
            if phis.len() + 1 != times.len() {
                self.err(format!(
                    "a ladder with {} times needs {} observables, got {}",
                    times.len(),
                    times.len().saturating_sub(1),
                    phis.len()
                ));
            }
            if times.windows(2).any(|w| w[0] > w[1]) {
                self.err("`ladder.times` must be nondecreasing");
            }
            if let Some(h) = horizon {
                self.check_times(&times, h, "ladder.times");
            }
            for name in phis.iter().chain(std::iter::once(&f)) {
                if !labels.contains(name) {
                    self.err(format!("ladder names unknown observable `{name}`"));
                }
            }
            out.push(LadderBlock { times, phis, f });
        }
        out
    }
}

/// Parse `alpha=eps^a, k=ceil(eps^-b)` into `(a, b)`. Whitespace is ignored.
fn parse_power_rule(s: &str) -> Option<(f64, f64)> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let (alpha, k) = s.split_once(',')?;
    let a = alpha.strip_prefix("alpha=eps^")?.parse().ok()?;
    let b = k.strip_prefix("k=ceil(eps^-")?.strip_suffix(')')?.parse().ok()?;
    Some((a, b))
}
