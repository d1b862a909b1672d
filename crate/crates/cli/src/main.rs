//! `slelab`: command-line front end for the SLE laboratory.
//!
//! Every verb builds an experiment config and runs it through the same
//! dispatcher as `slelab run <file>`. Records are written as JSON; an output
//! path ending in `.csv` receives the plot table instead.
//!
//! Exit codes: 0 success, 1 criterion failure, 2 config error, 3 numerical
//! error, 4 I/O error, 5 invalid parameter, 130 interrupted.

use clap::{Args, Parser, Subcommand};
use sle_core::acceptance::{run_acceptance, Scale};
use sle_core::experiment::{emit_plot_data, run_experiment, PlotFormat};
use sle_core::{Error, ExperimentConfig, ResultRecord};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

static STOP: AtomicBool = AtomicBool::new(false);

const EXIT_CRITERION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_DOMAIN: u8 = 5;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "slelab", version, about = "Numerical laboratory for Schramm-Loewner evolution")]
struct Cli {
    /// Worker threads for replica-parallel kernels (env SLELAB_WORKERS).
    #[arg(long, global = true, env = "SLELAB_WORKERS")]
    workers: Option<usize>,
    /// Directory for relative output paths (env SLELAB_OUT_DIR).
    #[arg(long, global = true, env = "SLELAB_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Parameter dictionary and exponent formulas.
    Params(ParamsCmd),
    /// Closed-form conformal quantities of hulls.
    #[command(subcommand)]
    Conformal(ConformalCmd),
    /// Loewner traces.
    #[command(subcommand)]
    Loewner(LoewnerCmd),
    /// SLE driving processes and Monte Carlo estimators.
    #[command(subcommand)]
    Sle(SleCmd),
    /// Brownian motion estimators.
    #[command(subcommand)]
    Bm(BmCmd),
    /// Lattice models.
    #[command(subcommand)]
    Lattice(LatticeCmd),
    /// Run the acceptance suite; exits 1 if any criterion fails.
    Accept {
        /// `all`, a criterion name or its number.
        #[arg(default_value = "all")]
        suite: String,
        /// Multiplier on replica counts, for quick smoke runs.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// List criterion names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Convert a JSON record into plot data.
    Plot {
        record: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment config file.
    Run {
        config: PathBuf,
        /// Overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct ParamsCmd {
    /// Print the derived parameter row for this κ.
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<String>,
    #[command(subcommand)]
    sub: Option<ParamsSub>,
}

#[derive(Subcommand)]
enum ParamsSub {
    /// The discrete-model table.
    Table,
    /// q±, λ₀ and the radial β for a weight λ.
    Exponents {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long, allow_hyphen_values = true)]
        lambda: String,
    },
    /// Closed-form hitting probability φ(y).
    Cardy {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
    },
}

#[derive(Args)]
struct Run {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON record, or the plot table when the name ends in `.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Mc {
    #[arg(long, default_value_t = 10_000)]
    replicas: u64,
    #[command(flatten)]
    run: Run,
}

#[derive(Subcommand)]
enum ConformalCmd {
    /// Half-plane capacity of `slit:x0,h | halfdisk:x0,r | tilt:x0,l,theta`.
    Hcap {
        #[arg(long, allow_hyphen_values = true)]
        hull: String,
    },
    /// Bubble measure of hulls hit, −SΦ(0)/6.
    Bubble {
        #[arg(long, allow_hyphen_values = true)]
        hull: String,
    },
}

#[derive(Subcommand)]
enum LoewnerCmd {
    /// Trace of a Brownian driver or of a `dt,du` chain file.
    Trace {
        #[arg(long, default_value = "brownian")]
        driving: String,
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, allow_hyphen_values = true)]
        dt: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        tip_eps: Option<String>,
        #[arg(long)]
        stride: Option<u64>,
        #[command(flatten)]
        run: Run,
    },
}

#[derive(Subcommand)]
enum SleCmd {
    /// Sample one driving function.
    Sample {
        #[arg(long, default_value = "chordal", value_parser = ["chordal", "kapparho", "radial", "two-sided", "subdomain"])]
        kind: String,
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long)]
        steps: u64,
        #[arg(long, allow_hyphen_values = true)]
        dt: Option<String>,
        /// SLE(κ,ρ) weight.
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<String>,
        /// SLE(κ,ρ) force point.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        /// Radial or two-sided target as `re,im`.
        #[arg(long, allow_hyphen_values = true)]
        target: Option<String>,
        /// Removed hull for the subdomain driver.
        #[arg(long, allow_hyphen_values = true)]
        hull: Option<String>,
        #[command(flatten)]
        run: Run,
    },
    /// Probability that the trace hits [1, 1+y] before [y+1, ∞).
    CardyMc {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, allow_hyphen_values = true)]
        dt: Option<String>,
        #[command(flatten)]
        mc: Mc,
    },
    /// Fit of a boundary or radial moment exponent.
    ExponentFit {
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        #[arg(long, allow_hyphen_values = true)]
        lambda: String,
        /// Fit the radial β instead of the boundary slope.
        #[arg(long)]
        radial: bool,
        /// Comma-separated times.
        #[arg(long, allow_hyphen_values = true)]
        times: Option<String>,
        #[command(flatten)]
        mc: Mc,
    },
    /// Tail P(dist(z, γ) < δ) and its exponent.
    GreenTail {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        /// Point as `re,im`.
        #[arg(long, default_value = "0,1")]
        z: String,
        #[arg(long, allow_hyphen_values = true)]
        deltas: Option<String>,
        #[command(flatten)]
        mc: Mc,
    },
    /// Absorption probability of a Bessel process.
    Bessel {
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        #[arg(long, default_value = "1")]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        horizon: String,
        #[command(flatten)]
        mc: Mc,
    },
    /// Probability that the trace avoids a hull.
    Restriction {
        #[arg(long, default_value = "8/3")]
        kappa: String,
        #[arg(long, allow_hyphen_values = true)]
        hull: String,
        #[command(flatten)]
        mc: Mc,
    },
}

#[derive(Subcommand)]
enum BmCmd {
    /// Half-plane capacity by Brownian exits.
    Hcap {
        #[arg(long, allow_hyphen_values = true)]
        hull: String,
        #[command(flatten)]
        mc: Mc,
    },
    /// Bubble measure of hulls hit.
    Bubble {
        #[arg(long, required_unless_present = "exterior_radius")]
        hull: Option<String>,
        /// Exterior of the half-disk of this radius about 0.
        #[arg(long, conflicts_with = "hull")]
        exterior_radius: Option<String>,
        #[command(flatten)]
        mc: Mc,
    },
    /// Survival past a slit and the fitted exponent.
    Beurling {
        /// Comma-separated ε values.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[command(flatten)]
        mc: Mc,
    },
    /// Sample rooted loops in a box.
    Loops {
        /// `x0,y0,x1,y1`.
        #[arg(long = "box", default_value = "0,0,1,1")]
        bx: String,
        #[arg(long)]
        count: u64,
        #[arg(long, allow_hyphen_values = true)]
        s_min: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        s_max: Option<String>,
        #[command(flatten)]
        run: Run,
    },
}

#[derive(Subcommand)]
enum LatticeCmd {
    /// Exact self-avoiding walk count and connective constant bounds.
    SawCount {
        #[arg(long)]
        n: u64,
    },
    /// Loop-erased walk from the bottom middle to the top of a square.
    Lerw {
        #[arg(long)]
        size: u64,
        #[command(flatten)]
        run: Run,
    },
    /// Crossing probability of the equilateral triangle.
    PercCross {
        /// Comma-separated arc positions.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, default_value_t = 256)]
        size: u64,
        #[command(flatten)]
        mc: Mc,
    },
}

/// Failure with its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Unsupported(_) => EXIT_CONFIG,
            Error::Numerical { .. } | Error::Swallowed { .. } | Error::Singular(_) => EXIT_NUMERICAL,
            Error::Io(_) => EXIT_IO,
            Error::Domain(_) => EXIT_DOMAIN,
        };
        Fail(code, e.to_string())
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        Fail(EXIT_IO, e.to_string())
    }
}

type Outcome = Result<u8, Fail>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("slelab: {e}");
        }
    }
    if let Err(e) = ctrlc::set_handler(|| STOP.store(true, Ordering::SeqCst)) {
        eprintln!("slelab: cannot install interrupt handler: {e}");
    }
    match dispatch(cli.verb, cli.out_dir.as_deref()) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("slelab: {msg}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(verb: Verb, out_dir: Option<&Path>) -> Outcome {
    let ctx = Ctx { out_dir };
    match verb {
        Verb::Params(p) => ctx.params(p),
        Verb::Conformal(c) => ctx.conformal(c),
        Verb::Loewner(l) => ctx.loewner(l),
        Verb::Sle(s) => ctx.sle(s),
        Verb::Bm(b) => ctx.bm(b),
        Verb::Lattice(l) => ctx.lattice(l),
        Verb::Accept { suite, scale, list } => accept(&suite, scale, list),
        Verb::Plot { record, format, out } => ctx.plot(&record, &format, out.as_deref()),
        Verb::Run { config, out } => {
            let cfg = ExperimentConfig::read(&config)?;
            let out = out.or_else(|| cfg.output.clone().map(PathBuf::from));
            ctx.execute(cfg, out.as_deref())
        }
    }
}

/// Adds `key = value` when the value is present.
trait OptParam {
    fn opt(self, k: &str, v: Option<impl std::fmt::Display>) -> Self;
}

impl OptParam for ExperimentConfig {
    fn opt(self, k: &str, v: Option<impl std::fmt::Display>) -> Self {
        match v {
            Some(v) => self.param(k, v),
            None => self,
        }
    }
}

fn split_point(s: &str) -> Result<(String, String), Fail> {
    match s.split_once(',') {
        Some((x, y)) => Ok((x.trim().to_string(), y.trim().to_string())),
        None => Err(Fail(EXIT_CONFIG, format!("expected a point `re,im`, got `{s}`"))),
    }
}

struct Ctx<'a> {
    out_dir: Option<&'a Path>,
}

impl Ctx<'_> {
    fn resolve(&self, p: &Path) -> PathBuf {
        match self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn params(&self, p: ParamsCmd) -> Outcome {
        let cfg = match (p.kappa, p.sub) {
            (Some(k), None) => ExperimentConfig::new("params.derive").param("kappa", k),
            (None, Some(ParamsSub::Table)) => ExperimentConfig::new("params.table"),
            (None, Some(ParamsSub::Exponents { kappa, lambda })) => ExperimentConfig::new("params.exponents")
                .param("kappa", kappa)
                .param("lambda", lambda),
            (None, Some(ParamsSub::Cardy { kappa, y })) => ExperimentConfig::new("params.cardy").param("kappa", kappa).param("y", y),
            _ => return Err(Fail(EXIT_CONFIG, "params needs --kappa or a subcommand".into())),
        };
        self.execute(cfg, None)
    }

    fn conformal(&self, c: ConformalCmd) -> Outcome {
        let cfg = match c {
            ConformalCmd::Hcap { hull } => ExperimentConfig::new("conformal.hcap").param("hull", hull),
            ConformalCmd::Bubble { hull } => ExperimentConfig::new("conformal.bubble").param("hull", hull),
        };
        self.execute(cfg, None)
    }

    fn loewner(&self, l: LoewnerCmd) -> Outcome {
        let LoewnerCmd::Trace {
            driving,
            kappa,
            steps,
            dt,
            tip_eps,
            stride,
            run,
        } = l;
        let driving = if driving == "brownian" {
            driving
        } else {
            std::path::absolute(&driving)?.display().to_string()
        };
        let cfg = ExperimentConfig::new("loewner.trace")
            .param("kappa", kappa)
            .param("driving", driving)
            .opt("steps", steps)
            .opt("dt", dt)
            .opt("tip_eps", tip_eps)
            .opt("stride", stride)
            .seed(run.seed);
        self.execute(cfg, run.out.as_deref())
    }

    fn sle(&self, s: SleCmd) -> Outcome {
        let (cfg, out) = match s {
            SleCmd::Sample {
                kind,
                kappa,
                steps,
                dt,
                rho,
                x,
                target,
                hull,
                run,
            } => {
                let mut cfg = ExperimentConfig::new("sle.sample")
                    .param("kind", &kind)
                    .param("kappa", kappa)
                    .param("steps", steps)
                    .opt("dt", dt)
                    .opt("rho", rho)
                    .opt("x", x)
                    .opt("hull", hull)
                    .seed(run.seed);
                if let Some(t) = target {
                    let (re, im) = split_point(&t)?;
                    let pre = if kind == "radial" { "w" } else { "z" };
                    cfg = cfg.param(&format!("{pre}_x"), re).param(&format!("{pre}_y"), im);
                }
                (cfg, (None, run.out))
            }
            SleCmd::CardyMc { kappa, y, dt, mc } => (
                ExperimentConfig::new("sle.cardy").param("kappa", kappa).param("y", y).opt("dt", dt),
                mc.apply(),
            ),
            SleCmd::ExponentFit {
                a,
                lambda,
                radial,
                times,
                mc,
            } => {
                let op = if radial { "sle.radial_moment" } else { "sle.boundary_moment" };
                (
                    ExperimentConfig::new(op).param("a", a).param("lambda", lambda).opt("times", times),
                    mc.apply(),
                )
            }
            SleCmd::GreenTail { kappa, z, deltas, mc } => {
                let (x, y) = split_point(&z)?;
                (
                    ExperimentConfig::new("sle.green_tail")
                        .param("kappa", kappa)
                        .param("x", x)
                        .param("y", y)
                        .opt("deltas", deltas),
                    mc.apply(),
                )
            }
            SleCmd::Bessel { a, x, horizon, mc } => (
                ExperimentConfig::new("sle.bessel")
                    .param("a", a)
                    .param("x", x)
                    .param("horizon", horizon),
                mc.apply(),
            ),
            SleCmd::Restriction { kappa, hull, mc } => (
                ExperimentConfig::new("sle.restriction").param("kappa", kappa).param("hull", hull),
                mc.apply(),
            ),
        };
        self.execute_mc(cfg, out)
    }

    fn bm(&self, b: BmCmd) -> Outcome {
        let (cfg, out) = match b {
            BmCmd::Hcap { hull, mc } => (ExperimentConfig::new("bm.hcap").param("hull", hull), mc.apply()),
            BmCmd::Bubble { hull, exterior_radius, mc } => (
                ExperimentConfig::new("bm.bubble")
                    .opt("hull", hull)
                    .opt("exterior_radius", exterior_radius),
                mc.apply(),
            ),
            BmCmd::Beurling { grid, mc } => (ExperimentConfig::new("bm.beurling").opt("eps", grid), mc.apply()),
            BmCmd::Loops {
                bx,
                count,
                s_min,
                s_max,
                run,
            } => (
                ExperimentConfig::new("bm.loops")
                    .param("box", bx)
                    .param("count", count)
                    .opt("s_min", s_min)
                    .opt("s_max", s_max)
                    .seed(run.seed),
                (None, run.out),
            ),
        };
        self.execute_mc(cfg, out)
    }

    fn lattice(&self, l: LatticeCmd) -> Outcome {
        let (cfg, out) = match l {
            LatticeCmd::SawCount { n } => (ExperimentConfig::new("lattice.saw_count").param("n", n), (None, None)),
            LatticeCmd::Lerw { size, run } => (
                ExperimentConfig::new("lattice.lerw").param("size", size).seed(run.seed),
                (None, run.out),
            ),
            LatticeCmd::PercCross { x, size, mc } => (
                ExperimentConfig::new("lattice.perc_cross").param("x", x).param("size", size),
                mc.apply(),
            ),
        };
        self.execute_mc(cfg, out)
    }

    fn execute_mc(&self, cfg: ExperimentConfig, (mc, out): (Option<(u64, u64)>, Option<PathBuf>)) -> Outcome {
        let cfg = match mc {
            Some((replicas, seed)) => cfg.replicas(replicas).seed(seed),
            None => cfg,
        };
        self.execute(cfg, out.as_deref())
    }

    /// Runs one experiment, writes the record and maps it to an exit code.
    fn execute(&self, cfg: ExperimentConfig, out: Option<&Path>) -> Outcome {
        let rec = run_experiment(&cfg, &STOP)?;
        match out {
            Some(p) => {
                let p = self.resolve(p);
                if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(d)?;
                }
                let w = BufWriter::new(File::create(&p)?);
                if p.extension().is_some_and(|e| e == "csv") {
                    emit_plot_data(&rec, PlotFormat::Csv, w)?;
                } else {
                    write_record(&rec, w)?;
                }
                eprintln!("slelab: wrote {}", p.display());
                summarize(&rec);
            }
            None => write_record(&rec, io::stdout().lock())?,
        }
        Ok(verdict(&rec))
    }

    fn plot(&self, record: &Path, format: &str, out: Option<&Path>) -> Outcome {
        let fmt: PlotFormat = format.parse()?;
        let rec = ResultRecord::from_json(&std::fs::read_to_string(record)?)?;
        match out {
            Some(p) => emit_plot_data(&rec, fmt, BufWriter::new(File::create(self.resolve(p))?))?,
            None => emit_plot_data(&rec, fmt, io::stdout().lock())?,
        }
        Ok(0)
    }
}

impl Mc {
    fn apply(self) -> (Option<(u64, u64)>, Option<PathBuf>) {
        (Some((self.replicas, self.run.seed)), self.run.out)
    }
}

fn write_record(rec: &ResultRecord, mut w: impl Write) -> Result<(), Fail> {
    writeln!(w, "{}", rec.to_json()?)?;
    w.flush()?;
    Ok(())
}

fn summarize(rec: &ResultRecord) {
    for q in &rec.quantities {
        let se = q.stderr.map(|s| format!(" ± {s:.3e}")).unwrap_or_default();
        let ex = q.exact.map(|e| format!(" (exact {e:.17})")).unwrap_or_default();
        eprintln!("  {} = {:.17}{se}{ex}", q.name, q.value);
    }
}

fn verdict(rec: &ResultRecord) -> u8 {
    if rec.interrupted {
        eprintln!("slelab: interrupted after {} replicas; partial record written", rec.replicas_done);
        EXIT_INTERRUPTED
    } else if rec.pass == Some(false) {
        eprintln!("slelab: result outside tolerance");
        EXIT_CRITERION
    } else {
        0
    }
}

fn accept(suite: &str, scale: f64, list: bool) -> Outcome {
    if list {
        for c in sle_core::acceptance::criteria() {
            println!("{:2} {:<18} {}", c.id, c.name, c.summary);
        }
        return Ok(0);
    }
    if scale.is_nan() || scale <= 0.0 {
        return Err(Fail(EXIT_CONFIG, format!("scale must be positive, got {scale}")));
    }
    let results = run_acceptance(suite, Scale(scale), |r| println!("{r}"))?;
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    Ok(if failed == 0 { 0 } else { EXIT_CRITERION })
}
