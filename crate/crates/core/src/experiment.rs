//! Declarative experiments: a flat `key = value` config with `[params]` and
//! `[tolerance]` sections, a dispatcher over the library, and result records
//! with CSV plot data.
//!
//! ```text
//! name = cardy-y2
//! op = sle.cardy
//! replicas = 100000
//! seed = 7
//!
//! [params]
//! kappa = 6
//! y = 2
//!
//! [tolerance]
//! sigmas = 3
//! abs = 0
//! ```

use crate::brownian::{self, BubbleTarget, LoopBox};
use crate::conformal::{self, HullSpec};
use crate::drivers::{self, DriverKind, DriverSpec, RestrictionOptions};
use crate::error::{Error, Result};
use crate::lattice::{self, GridDomain, Side, TargetSet};
use crate::loewner::{self, SlitMapChain, Trace};
use crate::params;
use crate::rng::RngStream;
use crate::stats::Estimate;
use crate::ENGINE_VERSION;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

/// Replicas per chunk for chunked operations. Chunk k draws from
/// `RngStream::new(seed, 0).replica(k)`, so results depend on the seed and
/// the replica count only.
pub const CHUNK: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Allowed deviation in standard errors.
    pub sigmas: f64,
    /// Additional absolute slack (lattice bias, fit tolerance).
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { sigmas: 3.0, abs: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub op: String,
    pub params: BTreeMap<String, String>,
    pub replicas: u64,
    pub seed: u64,
    pub output: Option<String>,
    pub tolerance: Tolerance,
}

fn cfg_err<T>(line: usize, msg: impl fmt::Display) -> Result<T> {
    Err(Error::Config(format!("line {line}: {msg}")))
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut top: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut params = BTreeMap::new();
        let mut tolerance = Tolerance::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[') {
                let Some(s) = s.strip_suffix(']') else {
                    return cfg_err(ln, "unterminated section header");
                };
                section = s.trim().to_string();
                if !matches!(section.as_str(), "params" | "tolerance") {
                    return cfg_err(ln, format!("unknown section [{section}]"));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return cfg_err(ln, "expected key = value");
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return cfg_err(ln, "empty key");
            }
            let dup = match section.as_str() {
                "" => {
                    if !matches!(k.as_str(), "name" | "op" | "replicas" | "seed" | "output") {
                        return cfg_err(ln, format!("unknown key `{k}`"));
                    }
                    top.insert(k.clone(), (ln, v)).is_some()
                }
                "params" => params.insert(k.clone(), v).is_some(),
                _ => {
                    let x: f64 = v.parse().or_else(|_| cfg_err(ln, format!("`{k}` must be a number")))?;
                    match k.as_str() {
                        "sigmas" => tolerance.sigmas = x,
                        "abs" => tolerance.abs = x,
                        _ => return cfg_err(ln, format!("unknown tolerance key `{k}`")),
                    }
                    false
                }
            };
            if dup {
                return cfg_err(ln, format!("duplicate key `{k}`"));
            }
        }
        let get = |k: &str| top.get(k).map(|(l, v)| (*l, v.clone()));
        let int = |k: &str, default: u64| -> Result<u64> {
            match get(k) {
                None => Ok(default),
                Some((l, v)) => v.parse().or_else(|_| cfg_err(l, format!("`{k}` must be a non-negative integer"))),
            }
        };
        let Some((_, op)) = get("op") else {
            return Err(Error::Config("missing required key `op`".into()));
        };
        Ok(Self {
            name: get("name").map(|x| x.1).unwrap_or_else(|| op.clone()),
            op,
            params,
            replicas: int("replicas", 0)?,
            seed: int("seed", 0)?,
            output: get("output").map(|x| x.1),
            tolerance,
        })
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "op = {}", self.op)?;
        writeln!(f, "replicas = {}", self.replicas)?;
        writeln!(f, "seed = {}", self.seed)?;
        if let Some(o) = &self.output {
            writeln!(f, "output = {o}")?;
        }
        if !self.params.is_empty() {
            writeln!(f, "\n[params]")?;
            for (k, v) in &self.params {
                writeln!(f, "{k} = {v}")?;
            }
        }
        writeln!(f, "\n[tolerance]")?;
        writeln!(f, "sigmas = {}", self.tolerance.sigmas)?;
        writeln!(f, "abs = {}", self.tolerance.abs)
    }
}

impl ExperimentConfig {
    pub fn new(op: &str) -> Self {
        Self {
            name: op.to_string(),
            op: op.to_string(),
            params: BTreeMap::new(),
            replicas: 0,
            seed: 0,
            output: None,
            tolerance: Tolerance::default(),
        }
    }

    pub fn param(mut self, k: &str, v: impl fmt::Display) -> Self {
        self.params.insert(k.to_string(), v.to_string());
        self
    }

    pub fn replicas(mut self, n: u64) -> Self {
        self.replicas = n;
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = s;
        self
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }
}

/// Parameter access that remembers which keys were read, so leftovers can
/// be rejected.
struct Params<'a> {
    map: &'a BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Params<'a> {
    fn new(map: &'a BTreeMap<String, String>) -> Self {
        Self {
            map,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    fn raw(&self, k: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(k.to_string());
        self.map.get(k).map(String::as_str)
    }

    fn f64_or(&self, k: &str, default: Option<f64>) -> Result<f64> {
        match self.raw(k) {
            Some(v) => parse_num(v).ok_or_else(|| Error::Config(format!("param `{k}`: `{v}` is not a number"))),
            None => default.ok_or_else(|| Error::Config(format!("missing param `{k}`"))),
        }
    }

    fn f64(&self, k: &str) -> Result<f64> {
        self.f64_or(k, None)
    }

    fn list(&self, k: &str, default: Option<&[f64]>) -> Result<Vec<f64>> {
        match self.raw(k) {
            Some(v) => v
                .split(',')
                .map(|s| parse_num(s.trim()).ok_or_else(|| Error::Config(format!("param `{k}`: `{s}` is not a number"))))
                .collect(),
            None => default
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Config(format!("missing param `{k}`"))),
        }
    }

    fn hull(&self, k: &str) -> Result<HullSpec> {
        match self.raw(k) {
            Some(v) => v.parse().map_err(|e: Error| {
                let msg = match e {
                    Error::Config(m) | Error::Domain(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("param `{k}`: {msg}"))
            }),
            None => Err(Error::Config(format!("missing param `{k}`"))),
        }
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let extra: Vec<&String> = self.map.keys().filter(|k| !used.contains(*k)).collect();
        if extra.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown params: {extra:?}")))
        }
    }
}

/// Numbers with an optional `p/q` rational form, e.g. `8/3`.
fn parse_num(s: &str) -> Option<f64> {
    if let Some((n, d)) = s.split_once('/') {
        let (n, d): (f64, f64) = (n.trim().parse().ok()?, d.trim().parse().ok()?);
        return Some(n / d);
    }
    s.parse().ok()
}

// ---------------------------------------------------------------------------
// Records

fn nan_from_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    #[serde(deserialize_with = "nan_from_null")]
    pub value: f64,
    pub stderr: Option<f64>,
    pub exact: Option<f64>,
    pub pass: Option<bool>,
}

impl Quantity {
    pub fn value(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            stderr: None,
            exact: None,
            pass: None,
        }
    }

    pub fn estimate(name: &str, e: Estimate, exact: Option<f64>) -> Self {
        Self {
            name: name.into(),
            value: e.mean,
            stderr: Some(e.stderr),
            exact,
            pass: None,
        }
    }

    pub fn exact(name: &str, value: f64, exact: f64) -> Self {
        Self {
            exact: Some(exact),
            ..Self::value(name, value)
        }
    }

    fn judge(&mut self, tol: &Tolerance) {
        if let Some(x) = self.exact {
            let slack = tol.sigmas * self.stderr.unwrap_or(0.0) + tol.abs;
            self.pass = Some((self.value - x).abs() <= slack);
        }
    }
}

/// Tabular data attached to a record; `kind` names the CSV layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub footer: Vec<String>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self {
            kind: kind.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
            footer: vec![],
        }
    }

    pub fn from_trace(tr: &Trace) -> Self {
        let mut t = Table::new("trace", &["t", "re", "im"]);
        t.rows = tr.times.iter().zip(&tr.points).map(|(t, z)| vec![*t, z.re, z.im]).collect();
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config: ExperimentConfig,
    pub quantities: Vec<Quantity>,
    pub table: Option<Table>,
    pub pass: Option<bool>,
    pub replicas_done: u64,
    pub interrupted: bool,
    pub engine_version: String,
    pub wall_time_s: f64,
}

impl ResultRecord {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad record: {e}")))
    }

    /// JSON without the wall time: identical for identical config and seed.
    pub fn payload_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(m) = v.as_object_mut() {
            m.remove("wall_time_s");
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Dispatch

pub const OPS: &[&str] = &[
    "params.derive",
    "params.table",
    "params.exponents",
    "params.cardy",
    "conformal.hcap",
    "conformal.bubble",
    "loewner.trace",
    "sle.sample",
    "sle.cardy",
    "sle.bessel",
    "sle.boundary_moment",
    "sle.radial_moment",
    "sle.green_tail",
    "sle.restriction",
    "bm.hcap",
    "bm.bubble",
    "bm.beurling",
    "bm.loops",
    "lattice.saw_count",
    "lattice.lerw",
    "lattice.perc_cross",
];

/// Pools independent chunk estimates.
pub fn pool(parts: &[Estimate]) -> Estimate {
    let n: u64 = parts.iter().map(|e| e.n).sum();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            stderr: f64::NAN,
            n: 0,
        };
    }
    let nf = n as f64;
    let mean = parts.iter().map(|e| e.n as f64 * e.mean).sum::<f64>() / nf;
    let var = parts.iter().map(|e| (e.n as f64 * e.stderr).powi(2)).sum::<f64>();
    Estimate {
        mean,
        stderr: var.sqrt() / nf,
        n,
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    stop: &'a AtomicBool,
    done: u64,
    interrupted: bool,
}

impl Run<'_> {
    /// Runs `f(stream, count)` chunk by chunk until the replica budget is
    /// spent or the stop flag is raised; returns one value per chunk.
    fn chunked<T>(&mut self, mut f: impl FnMut(RngStream, u64) -> Result<T>) -> Result<Vec<T>> {
        let base = RngStream::new(self.cfg.seed, 0);
        let mut out = vec![];
        let mut k = 0;
        while self.done < self.cfg.replicas {
            if self.stop.load(Ordering::Relaxed) {
                self.interrupted = true;
                break;
            }
            let n = CHUNK.min(self.cfg.replicas - self.done);
            out.push(f(base.replica(k), n)?);
            self.done += n;
            k += 1;
        }
        Ok(out)
    }

    fn need_replicas(&self) -> Result<()> {
        if self.cfg.replicas == 0 {
            return Err(Error::Config(format!("op `{}` needs replicas > 0", self.cfg.op)));
        }
        Ok(())
    }

    fn stream(&self) -> RngStream {
        RngStream::new(self.cfg.seed, 0)
    }
}

/// Executes one experiment. Chunked operations check `stop` between chunks
/// and return the partial record with `interrupted` set.
pub fn run_experiment(cfg: &ExperimentConfig, stop: &AtomicBool) -> Result<ResultRecord> {
    let t0 = Instant::now();
    let p = Params::new(&cfg.params);
    let mut run = Run {
        cfg,
        stop,
        done: 0,
        interrupted: false,
    };
    let mut table = None;
    let mut q: Vec<Quantity> = match cfg.op.as_str() {
        "params.derive" => {
            let s = params::derive_params(p.f64("kappa")?)?;
            vec![
                Quantity::value("a", s.a),
                Quantity::value("b", s.b),
                Quantity::value("btilde", s.btilde),
                Quantity::value("bhat", s.bhat),
                Quantity::value("c", s.c_central),
                Quantity::value("d", s.d_dim),
            ]
        }
        "params.table" => {
            let mut t = Table::new("table", &["kappa", "a", "b", "btilde", "c", "d"]);
            let f = |r: num_rational::Rational64| *r.numer() as f64 / *r.denom() as f64;
            for r in params::model_table() {
                t.rows
                    .push(vec![f(r.kappa), f(r.a), f(r.b), f(r.btilde), f(r.c_central), f(r.d_dim)]);
                t.footer.push(format!(
                    "{}: kappa={} a={} b={} btilde={} c={} d={}",
                    r.model, r.kappa, r.a, r.b, r.btilde, r.c_central, r.d_dim
                ));
            }
            table = Some(t);
            vec![]
        }
        "params.exponents" => {
            let a = 2.0 / p.f64("kappa")?;
            let l = p.f64("lambda")?;
            let e = params::ExponentValue::new(l, a)?;
            let mut v = vec![
                Quantity::value("q_plus", e.q_plus),
                Quantity::value("q_minus", e.q_minus),
                Quantity::value("lambda0", e.lambda0),
            ];
            if a >= 0.25 {
                v.push(Quantity::value("beta", params::radial_beta(l, a)?));
            }
            v
        }
        "params.cardy" => {
            let a = 2.0 / p.f64("kappa")?;
            vec![Quantity::value("phi", params::cardy_phi(p.f64("y")?, a)?)]
        }
        "conformal.hcap" => vec![Quantity::value("hcap", p.hull("hull")?.hcap())],
        "conformal.bubble" => vec![Quantity::value("gamma", conformal::bubble_schwarzian(&p.hull("hull")?)?)],
        "loewner.trace" => {
            let kappa = p.f64("kappa")?;
            let stride = p.f64_or("stride", Some(1.0))? as usize;
            let path = match p.raw("driving").unwrap_or("brownian") {
                "brownian" => {
                    let dt = p.f64_or("dt", Some(1e-4))?;
                    let steps = p.f64("steps")? as usize;
                    drivers::sample_chordal_driver(kappa, dt, steps, &mut run.stream().rng())?
                }
                file => {
                    let a = params::derive_params(kappa)?.a;
                    let f = std::fs::File::open(file)?;
                    SlitMapChain::read_csv(a, 0.0, std::io::BufReader::new(f))?.to_path()?
                }
            };
            let tip_eps = match p.raw("tip_eps") {
                Some(_) => p.f64("tip_eps")?,
                None => loewner::default_tip_eps(&path),
            };
            let tr = loewner::reverse_trace_strided(&path, tip_eps, stride)?;
            let tip = *tr.points.last().unwrap_or(&Complex64::new(0.0, 0.0));
            table = Some(Table::from_trace(&tr));
            vec![
                Quantity::value("hcap", path.rate * path.horizon()),
                Quantity::value("tip_re", tip.re),
                Quantity::value("tip_im", tip.im),
            ]
        }
        "sle.sample" => {
            let kappa = p.f64("kappa")?;
            let dt = p.f64_or("dt", Some(1e-4))?;
            let steps = p.f64("steps")? as usize;
            let pt =
                |x: &str, y: &str, dy: f64| -> Result<Complex64> { Ok(Complex64::new(p.f64_or(x, Some(0.0))?, p.f64_or(y, Some(dy))?)) };
            let kind = match p.raw("kind").unwrap_or("chordal") {
                "chordal" => DriverKind::Chordal,
                "kapparho" => DriverKind::KappaRho {
                    rho: p.f64("rho")?,
                    x: p.f64_or("x", Some(1.0))?,
                },
                "radial" => DriverKind::Radial { w: pt("w_x", "w_y", 1.0)? },
                "two-sided" => DriverKind::TwoSidedRadial { z: pt("z_x", "z_y", 1.0)? },
                "subdomain" => DriverKind::Subdomain { hull: p.hull("hull")? },
                other => return Err(Error::Config(format!("unknown driver kind `{other}`"))),
            };
            let spec = DriverSpec { kappa, kind, dt, steps };
            let s = drivers::sample_driver(&spec, &mut run.stream().rng())?;
            let mut t = match &s.force_point {
                Some(_) => Table::new("driver", &["t", "u", "force"]),
                None => Table::new("driver", &["t", "u"]),
            };
            for (k, u) in s.path.values.iter().enumerate() {
                let mut row = vec![s.path.time(k), *u];
                if let Some(f) = &s.force_point {
                    row.push(f[k]);
                }
                t.rows.push(row);
            }
            if let Some(e) = s.stop {
                t.footer.push(format!("stop = {e:?}"));
            }
            table = Some(t);
            let mut v = vec![
                Quantity::value("horizon", s.path.horizon()),
                Quantity::value("u_end", *s.path.values.last().unwrap_or(&0.0)),
            ];
            if let Some(
                drivers::StopEvent::Absorbed { time } | drivers::StopEvent::TargetReached { time } | drivers::StopEvent::NearHull { time },
            ) = s.stop
            {
                v.push(Quantity::value("stop_time", time));
            }
            v
        }
        "sle.cardy" => {
            run.need_replicas()?;
            let (kappa, y) = (p.f64("kappa")?, p.f64("y")?);
            let d = drivers::CardyOptions::default();
            let o = drivers::CardyOptions {
                dt: p.f64_or("dt", Some(d.dt))?,
                eta: p.f64_or("eta", Some(d.eta))?,
                ..d
            };
            let parts = run.chunked(|s, n| drivers::cardy_hitting_mc_with(kappa, y, n, s, &o))?;
            let exact = params::cardy_phi(y, 2.0 / kappa)?;
            let est = pool(&parts.iter().map(|c| c.estimate).collect::<Vec<_>>());
            vec![Quantity::estimate("cardy", est, Some(exact))]
        }
        "sle.bessel" => {
            run.need_replicas()?;
            let (a, x, horizon) = (p.f64("a")?, p.f64_or("x", Some(1.0))?, p.f64("horizon")?);
            let parts = run.chunked(|s, n| drivers::bessel_hit_probability(a, x, horizon, n, s))?;
            let exact = if a < 0.5 {
                Some(drivers::bessel_hit_probability_exact(a, x, horizon)?)
            } else {
                Some(0.0)
            };
            vec![Quantity::estimate("absorbed", pool(&parts), exact)]
        }
        "sle.boundary_moment" => {
            run.need_replicas()?;
            let (a, l) = (p.f64("a")?, p.f64("lambda")?);
            let times = p.list("times", Some(&[10.0, 21.544, 46.416, 100.0, 215.44, 464.16, 1000.0]))?;
            let x = p.f64_or("x", Some(1.0))?;
            let m = drivers::boundary_moment(l, a, &times, x, cfg.replicas, run.stream())?;
            run.done = cfg.replicas;
            table = Some(moment_table(&m.moments, m.slope));
            let mut v = vec![Quantity {
                stderr: Some(m.slope.slope_stderr),
                exact: Some(-m.q / 2.0),
                ..Quantity::value("slope", m.slope.slope)
            }];
            for (i, mp) in m.martingale.iter().enumerate() {
                v.push(Quantity {
                    stderr: Some(mp.stderr),
                    exact: Some(1.0),
                    ..Quantity::value(&format!("martingale[{i}]"), mp.mean)
                });
            }
            v
        }
        "sle.radial_moment" => {
            run.need_replicas()?;
            let (a, l) = (p.f64("a")?, p.f64("lambda")?);
            let theta = p.f64_or("theta", Some(std::f64::consts::FRAC_PI_2))?;
            let times = p.list("times", Some(&[2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]))?;
            let m = drivers::radial_moment(l, a, theta, &times, cfg.replicas, run.stream())?;
            run.done = cfg.replicas;
            vec![Quantity {
                stderr: Some(m.beta_stderr),
                exact: Some(m.beta_exact),
                ..Quantity::value("beta", m.beta)
            }]
        }
        "sle.green_tail" => {
            run.need_replicas()?;
            let kappa = p.f64("kappa")?;
            let z = Complex64::new(p.f64_or("x", Some(0.0))?, p.f64_or("y", Some(1.0))?);
            let deltas = p.list("deltas", Some(&[0.2, 0.1, 0.05, 0.025]))?;
            let g = drivers::green_tail_mc(kappa, z, &deltas, cfg.replicas, run.stream())?;
            run.done = cfg.replicas;
            let mut t = Table::new("tail", &["delta", "p", "stderr"]);
            t.rows = g.deltas.iter().zip(&g.tail).map(|(d, e)| vec![*d, e.mean, e.stderr]).collect();
            t.footer
                .push(format!("fitted exponent = {:.16e} +- {:.16e}", g.fit.slope, g.fit.slope_stderr));
            table = Some(t);
            vec![Quantity {
                stderr: Some(g.fit.slope_stderr),
                exact: Some(g.exponent_exact),
                ..Quantity::value("exponent", g.fit.slope)
            }]
        }
        "sle.restriction" => {
            run.need_replicas()?;
            let kappa = p.f64_or("kappa", Some(8.0 / 3.0))?;
            let hull = p.hull("hull")?;
            let o = RestrictionOptions::default();
            let parts = run.chunked(|s, n| drivers::restriction_mc(kappa, hull, n, s, &o))?;
            let exact = parts.first().map(|r| r.exact);
            let est = pool(&parts.iter().map(|r| r.avoid).collect::<Vec<_>>());
            let censored: u64 = parts.iter().map(|r| r.censored).sum();
            vec![
                Quantity::estimate("avoid", est, exact),
                Quantity::value("censored", censored as f64),
            ]
        }
        "bm.hcap" => {
            run.need_replicas()?;
            let hull = p.hull("hull")?;
            let parts = run.chunked(|s, n| brownian::hcap_mc(hull, n, s))?;
            let est = pool(&parts.iter().map(|h| h.estimate).collect::<Vec<_>>());
            vec![Quantity::estimate("hcap", est, Some(hull.hcap()))]
        }
        "bm.bubble" => {
            run.need_replicas()?;
            let target = match p.raw("exterior_radius") {
                Some(r) => BubbleTarget::HalfDiskExterior {
                    r: parse_num(r).ok_or_else(|| Error::Config("exterior_radius must be a number".into()))?,
                },
                None => BubbleTarget::Hull { hull: p.hull("hull")? },
            };
            let parts = run.chunked(|s, n| brownian::bubble_gamma_integral(target, n, s))?;
            let exact = parts.first().and_then(|b| b.schwarzian);
            let est = pool(&parts.iter().map(|b| b.estimate).collect::<Vec<_>>());
            vec![Quantity::estimate("gamma", est, exact)]
        }
        "bm.beurling" => {
            run.need_replicas()?;
            let eps = p.list("eps", Some(&[0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125]))?;
            let r = brownian::beurling_mc(&eps, cfg.replicas, run.stream())?;
            run.done = cfg.replicas;
            let mut t = Table::new("fit", &["x", "y", "fit"]);
            for (e, s) in r.eps.iter().zip(&r.survival) {
                t.rows.push(vec![e.ln(), s.mean.ln(), r.fit.intercept + r.fit.slope * e.ln()]);
            }
            table = Some(t);
            let mut v = vec![
                Quantity {
                    stderr: Some(r.fit.slope_stderr),
                    exact: Some(r.exact_fit.slope),
                    ..Quantity::value("exponent", r.fit.slope)
                },
                Quantity::value("exponent_limit", 0.5),
            ];
            for ((e, s), x) in r.eps.iter().zip(&r.survival).zip(&r.exact) {
                v.push(Quantity::estimate(&format!("survival[{e}]"), *s, Some(*x)));
            }
            v
        }
        "bm.loops" => {
            let b = p.list("box", Some(&[0.0, 0.0, 1.0, 1.0]))?;
            let [x0, y0, x1, y1] = b[..] else {
                return Err(Error::Config("param `box` needs four numbers x0,y0,x1,y1".into()));
            };
            let count = p.f64("count")? as usize;
            let durations = (p.f64_or("s_min", Some(1e-3))?, p.f64_or("s_max", Some(1e2))?);
            let steps = p.f64_or("steps", Some(256.0))? as usize;
            let set = brownian::sample_rooted_loops(LoopBox { x0, y0, x1, y1 }, count, durations, steps, run.stream())?;
            let mut t = Table::new("loops", &["root_re", "root_im", "duration"]);
            t.rows = set.loops.iter().map(|l| vec![l.root.re, l.root.im, l.duration]).collect();
            t.footer.push(format!("durations = [{:.16e}, {:.16e}]", durations.0, durations.1));
            table = Some(t);
            vec![
                Quantity::value("weight", set.weight),
                Quantity::value("total_mass", set.total_mass),
                Quantity::value("tail_mass_above", set.tail_mass_above),
            ]
        }
        "lattice.saw_count" => {
            let n = p.f64("n")? as usize;
            let b = lattice::connective_bounds(n.max(1))?;
            vec![
                Quantity::value("count", b.counts[n] as f64),
                Quantity::value("upper", b.upper),
                Quantity::value("lower", b.lower),
            ]
        }
        "lattice.lerw" => {
            let size = p.f64("size")? as i32;
            let dom = GridDomain::new(size, size)?;
            let start = (
                p.f64_or("start_x", Some((size / 2) as f64))? as i32,
                p.f64_or("start_y", Some(0.0))? as i32,
            );
            let path = lattice::sample_lerw(&dom, start, &TargetSet::Side { side: Side::Top }, &mut run.stream().rng())?;
            let mut t = Table::new("path", &["x", "y"]);
            t.rows = path.points().iter().map(|&(x, y)| vec![x as f64, y as f64]).collect();
            table = Some(t);
            vec![Quantity::value("length", path.len() as f64)]
        }
        "lattice.perc_cross" => {
            run.need_replicas()?;
            let xs = p.list("x", None)?;
            let size = p.f64_or("size", Some(256.0))? as i32;
            let parts = run.chunked(|s, n| lattice::triangle_crossing_mc(&xs, size, n, s))?;
            let mut v = vec![];
            for (i, x) in xs.iter().enumerate() {
                let fl = pool(&parts.iter().map(|c| c[i].floor).collect::<Vec<_>>());
                let ce = pool(&parts.iter().map(|c| c[i].ceil).collect::<Vec<_>>());
                v.push(Quantity::estimate(&format!("cross[{x}].floor"), fl, Some(*x)));
                v.push(Quantity::estimate(&format!("cross[{x}].ceil"), ce, Some(*x)));
            }
            v
        }
        other => return Err(Error::Config(format!("unknown op `{other}`; available: {}", OPS.join(", ")))),
    };
    p.finish()?;
    for x in &mut q {
        x.judge(&cfg.tolerance);
    }
    let verdicts: Vec<bool> = q.iter().filter_map(|x| x.pass).collect();
    Ok(ResultRecord {
        config: cfg.clone(),
        pass: (!verdicts.is_empty()).then(|| verdicts.iter().all(|&b| b)),
        quantities: q,
        table,
        replicas_done: run.done,
        interrupted: run.interrupted,
        engine_version: ENGINE_VERSION.to_string(),
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}

fn moment_table(m: &[drivers::MomentPoint], fit: crate::stats::LinearFit) -> Table {
    let mut t = Table::new("fit", &["x", "y", "fit"]);
    for p in m {
        let x = p.t.ln();
        t.rows.push(vec![x, p.mean.ln(), fit.intercept + fit.slope * x]);
    }
    t.footer.push(format!("slope = {:.16e} +- {:.16e}", fit.slope, fit.slope_stderr));
    t
}

// ---------------------------------------------------------------------------
// Plot data

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFormat {
    Csv,
    Json,
}

impl FromStr for PlotFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unsupported plot format `{s}` (csv, json)"))),
        }
    }
}

/// Writes a record's table (or, lacking one, its quantities) for plotting.
/// CSV floats use 17 significant digits; footers become `#` comments.
pub fn emit_plot_data<W: Write>(rec: &ResultRecord, format: PlotFormat, mut out: W) -> Result<()> {
    match format {
        PlotFormat::Json => {
            let v = match &rec.table {
                Some(t) => serde_json::to_string_pretty(t),
                None => serde_json::to_string_pretty(&rec.quantities),
            }
            .map_err(|e| Error::Config(e.to_string()))?;
            writeln!(out, "{v}")?;
        }
        PlotFormat::Csv => match &rec.table {
            Some(t) => write_table_csv(t, &mut out)?,
            None => {
                writeln!(out, "name,value,stderr,exact")?;
                for q in &rec.quantities {
                    let o = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
                    writeln!(out, "{},{:.16e},{},{}", q.name, q.value, o(q.stderr), o(q.exact))?;
                }
            }
        },
    }
    Ok(())
}

pub fn write_table_csv<W: Write>(t: &Table, out: &mut W) -> Result<()> {
    writeln!(out, "{}", t.columns.join(","))?;
    for row in &t.rows {
        let mut line = String::new();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let _ = write!(line, "{v:.16e}");
        }
        writeln!(out, "{line}")?;
    }
    for f in &t.footer {
        writeln!(out, "# {f}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "
# cardy check
name = cardy-y2
op = sle.cardy
replicas = 2000
seed = 7

[params]
kappa = 6
y = 2
dt = 1e-3

[tolerance]
sigmas = 3.5
";

    #[test]
    fn parse_and_roundtrip() {
        let c: ExperimentConfig = SAMPLE.parse().unwrap();
        assert_eq!(c.op, "sle.cardy");
        assert_eq!(c.params["kappa"], "6");
        assert_eq!(c.tolerance.sigmas, 3.5);
        assert_eq!(c.tolerance.abs, 0.0);
        let back: ExperimentConfig = c.to_string().parse().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!("op = x\nfoo = 1".parse::<ExperimentConfig>(), Err(Error::Config(_))));
        assert!(matches!("op = x\n[weird]\n".parse::<ExperimentConfig>(), Err(Error::Config(_))));
        assert!(matches!(
            "op = x\n[tolerance]\nrel = 1".parse::<ExperimentConfig>(),
            Err(Error::Config(_))
        ));
        assert!(matches!("name = x".parse::<ExperimentConfig>(), Err(Error::Config(_))));
        assert!(matches!("op = x\nop = y".parse::<ExperimentConfig>(), Err(Error::Config(_))));
        let stop = AtomicBool::new(false);
        let c = ExperimentConfig::new("params.derive").param("kappa", 6).param("kapa", 2);
        assert!(matches!(run_experiment(&c, &stop), Err(Error::Config(_))));
        assert!(matches!(
            run_experiment(&ExperimentConfig::new("nope"), &stop),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn params_only_record() {
        let stop = AtomicBool::new(false);
        let r = run_experiment(&ExperimentConfig::new("params.derive").param("kappa", "8/3"), &stop).unwrap();
        assert_eq!(r.replicas_done, 0);
        assert_eq!(r.pass, None);
        let b = r.quantities.iter().find(|q| q.name == "b").unwrap();
        assert!((b.value - 0.625).abs() < 1e-15);
        assert!(matches!(
            run_experiment(&ExperimentConfig::new("params.derive").param("kappa", -1), &stop),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn deterministic_payload_and_json_roundtrip() {
        let stop = AtomicBool::new(false);
        let c: ExperimentConfig = SAMPLE.parse().unwrap();
        let a = run_experiment(&c, &stop).unwrap();
        let b = run_experiment(&c, &stop).unwrap();
        assert_eq!(a.payload_json().unwrap(), b.payload_json().unwrap());
        assert_eq!(a.pass, Some(true), "{a:?}");
        let back = ResultRecord::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn chunks_pool_and_interrupt() {
        let stop = AtomicBool::new(false);
        let c = ExperimentConfig::new("bm.hcap")
            .param("hull", "slit:0,0.5")
            .replicas(25_000)
            .seed(3);
        let r = run_experiment(&c, &stop).unwrap();
        assert_eq!(r.replicas_done, 25_000);
        assert_eq!(r.quantities[0].stderr.map(|s| s > 0.0), Some(true));
        stop.store(true, Ordering::Relaxed);
        let r = run_experiment(&c, &stop).unwrap();
        assert!(r.interrupted);
        assert_eq!(r.replicas_done, 0);
        assert!(r.quantities[0].value.is_nan());
        let back = ResultRecord::from_json(&r.to_json().unwrap()).unwrap();
        assert!(back.quantities[0].value.is_nan());
    }

    #[test]
    fn pooling_matches_single_estimate() {
        let a = Estimate::proportion(30, 100);
        let b = Estimate::proportion(70, 200);
        let p = pool(&[a, b]);
        assert_eq!(p.n, 300);
        assert!((p.mean - 100.0 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn plot_outputs() {
        let stop = AtomicBool::new(false);
        let c = ExperimentConfig::new("loewner.trace")
            .param("kappa", 4)
            .param("steps", 50)
            .param("dt", 1e-3);
        let r = run_experiment(&c, &stop).unwrap();
        let mut buf = vec![];
        emit_plot_data(&r, PlotFormat::Csv, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("t,re,im"));
        assert_eq!(lines.count(), 51);
        assert!(s.lines().nth(1).unwrap().split(',').all(|f| f.parse::<f64>().is_ok()));

        let mut t = Table::new("tail", &["delta", "p", "stderr"]);
        t.rows.push(vec![0.1, 0.5, 0.01]);
        t.footer.push("fitted exponent = 6.6e-1".into());
        let mut rec = r.clone();
        rec.table = Some(t);
        let mut buf = vec![];
        emit_plot_data(&rec, PlotFormat::Csv, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.lines().last().unwrap().starts_with("# fitted exponent"));
        assert!(s.lines().nth(1).unwrap().split(',').all(|f| f.parse::<f64>().is_ok()));

        rec.table = Some(Table::new("trace", &["t", "re", "im"]));
        let mut buf = vec![];
        emit_plot_data(&rec, PlotFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,re,im\n");
        assert!("svg".parse::<PlotFormat>().is_err());
    }

    #[test]
    fn trace_from_chain_file_matches_slit() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("chain.csv");
        let chain = SlitMapChain::new(0.5, 0.0, vec![(1e-2, 0.0); 100], loewner::StepKind::TiltedSlit).unwrap();
        chain.write_csv(std::fs::File::create(&f).unwrap()).unwrap();
        let c = ExperimentConfig::new("loewner.trace")
            .param("kappa", 4)
            .param("driving", f.display())
            .param("tip_eps", 1e-9);
        let r = run_experiment(&c, &AtomicBool::new(false)).unwrap();
        let im = r.quantities.iter().find(|q| q.name == "tip_im").unwrap().value;
        assert!((im - (2.0f64 * 0.5 * 1.0).sqrt()).abs() < 1e-6, "{im}");
        let missing = ExperimentConfig::new("loewner.trace")
            .param("kappa", 4)
            .param("driving", dir.path().join("none.csv").display());
        assert!(matches!(run_experiment(&missing, &AtomicBool::new(false)), Err(Error::Io(_))));
    }

    #[test]
    fn driver_samples_and_loops() {
        let stop = AtomicBool::new(false);
        for (kind, extra) in [
            ("chordal", None),
            ("kapparho", Some(("rho", "2"))),
            ("radial", None),
            ("two-sided", None),
            ("subdomain", Some(("hull", "halfdisk:3,0.5"))),
        ] {
            let mut c = ExperimentConfig::new("sle.sample")
                .param("kappa", 4)
                .param("kind", kind)
                .param("steps", 100)
                .param("dt", 1e-3);
            if let Some((k, v)) = extra {
                c = c.param(k, v);
            }
            let r = run_experiment(&c, &stop).unwrap();
            let t = r.table.unwrap();
            assert_eq!(t.kind, "driver");
            assert!(t.rows.len() <= 101 && !t.rows.is_empty(), "{kind}");
            assert_eq!(t.rows[0][1], 0.0, "{kind}");
        }
        let bad = ExperimentConfig::new("sle.sample")
            .param("kappa", 4)
            .param("kind", "spiral")
            .param("steps", 10);
        assert!(matches!(run_experiment(&bad, &stop), Err(Error::Config(_))));

        let c = ExperimentConfig::new("bm.loops").param("count", 50).param("box", "0,0,2,1");
        let r = run_experiment(&c, &stop).unwrap();
        let mass = r.quantities.iter().find(|q| q.name == "total_mass").unwrap().value;
        assert!((mass - 2.0 * (1e3 - 1e-2) / (2.0 * std::f64::consts::PI)).abs() < 1e-9);
        assert_eq!(r.table.unwrap().rows.len(), 50);
        let bad = ExperimentConfig::new("bm.loops").param("count", 5).param("box", "0,0,1");
        assert!(matches!(run_experiment(&bad, &stop), Err(Error::Config(_))));
    }

    fn key() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_]{0,8}"
    }

    proptest! {
        #[test]
        fn config_roundtrip(
            name in "[a-z][a-z0-9.-]{0,10}",
            op in "[a-z]{1,6}\\.[a-z_]{1,8}",
            params in proptest::collection::btree_map(key(), "[a-z0-9.,()/_-]{1,12}", 0..5),
            replicas in 0u64..1_000_000,
            seed in any::<u64>(),
            sigmas in 0.0f64..10.0,
            abs in 0.0f64..1.0,
        ) {
            let c = ExperimentConfig {
                name, op, params, replicas, seed, output: None,
                tolerance: Tolerance { sigmas, abs },
            };
            let back: ExperimentConfig = c.to_string().parse().unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
