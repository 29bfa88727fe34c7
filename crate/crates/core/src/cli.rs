//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    collapse_spread, decoherence_power_laws, default_fit_window, default_slope_window,
    estimate_slope, export_collapse, fit_moment_forms, fit_tail, flag_minimum, locate_peaks,
    sweep_row, CollapseRegion, PowerLawFit, SweepRow, TailKind, COLLAPSE_BINS,
};
use crate::density::Density;
use crate::ensemble::{run_ensemble, EnsembleResult, MomentSeries, Quantity, RunConfig};
use crate::error::{invalid, Result, WalkError};
use crate::oracle::{
    compare_with_monte_carlo, dense_evolve, exact_ensemble, max_amplitude_deviation,
    DENSE_MAX_TICKS, EXACT_MAX_TICKS,
};
use crate::schedule::StepSchedule;
use crate::walk::{evolve, InitialSpinor};

pub const DEFAULT_SEED: u64 = 1;
pub const META_FILE: &str = "run_meta.json";

const SCHEDULE_HELP: &str = "\
Schedules:
  random:alpha=A,n=N   step 1 with probability A, otherwise 2^N
  periodic:L1,L2,...   cycle through the listed step lengths
  constant:L           always step L

Outputs are CSV with a header row; density files start with a '# t=T' line.
Every run writes run_meta.json, which --replay accepts to reproduce it.";

#[derive(Debug, Parser)]
#[command(name = "qwalk", version, about = "Quantum walks with random long-range steps", after_help = SCHEDULE_HELP)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "QWALK_THREADS")]
    pub threads: Option<usize>,

    /// Directory for all inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,

    /// Re-run the command recorded in a run_meta.json file.
    #[arg(long)]
    pub replay: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Run an ensemble and write densities and moments.
    Simulate(SimulateArgs),
    /// Compare against the dense-matrix or exact-enumeration references.
    Oracle(OracleArgs),
    /// Fit moment forms across a list of alphas.
    Sweep(SweepArgs),
    /// Fit moments, peaks and tails from existing CSV files.
    Fit(FitArgs),
    /// Scaled curves and collapse quality from density files.
    Collapse(CollapseArgs),
    /// Generate the data behind one figure.
    Figures(FiguresArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinorChoice {
    /// (sqrt(1/3), sqrt(2/3))
    Asymmetric,
    /// (1/sqrt 2, i/sqrt 2)
    Symmetric,
}

impl SpinorChoice {
    fn spinor(self) -> InitialSpinor {
        match self {
            SpinorChoice::Asymmetric => InitialSpinor::asymmetric(),
            SpinorChoice::Symmetric => InitialSpinor::symmetric(),
        }
    }
}

fn parse_schedule(s: &str) -> std::result::Result<StepSchedule, String> {
    s.parse().map_err(|e: WalkError| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: StepSchedule,
    #[arg(long)]
    pub tmax: usize,
    #[arg(long, default_value_t = 1000)]
    pub realizations: usize,
    /// Master seed (default 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Snapshot times; defaults to powers of two.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = SpinorChoice::Asymmetric)]
    pub spinor: SpinorChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Exact,
    Dense,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub mode: OracleMode,
    #[arg(long, value_parser = parse_schedule, default_value = "random:alpha=0.5,n=1")]
    pub schedule: StepSchedule,
    /// Walk length for exact mode.
    #[arg(long, default_value_t = 10)]
    pub tmax: usize,
    /// Step sequence for dense mode.
    #[arg(long, value_delimiter = ',')]
    pub sequence: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100_000)]
    pub mc_realizations: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SpinorChoice::Asymmetric)]
    pub spinor: SpinorChoice,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub n: u32,
    #[arg(long, default_value_t = 2048)]
    pub tmax: usize,
    #[arg(long, default_value_t = 1000)]
    pub realizations: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SpinorChoice::Asymmetric)]
    pub spinor: SpinorChoice,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// moments.csv to fit.
    #[arg(long, required_unless_present = "density")]
    pub moments: Option<PathBuf>,
    /// Fit window start for moments (default max(16, t_max/32)).
    #[arg(long)]
    pub tmin: Option<usize>,
    /// Fit window end for moments (default: last tick).
    #[arg(long)]
    pub tend: Option<usize>,
    /// Density file for peak and tail analysis.
    #[arg(long)]
    pub density: Option<PathBuf>,
    /// Alpha used to predict peak positions.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Time of the density, if the file has no '# t=' line.
    #[arg(long)]
    pub time: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CollapseArgs {
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub densities: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0])]
    pub gammas: Vec<f64>,
    #[arg(long, default_value_t = COLLAPSE_BINS)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FiguresArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    /// Overrides the figure's alpha where it uses a single one.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tmax: Option<usize>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    program: String,
    version: String,
    command: Command,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("qwalk: {e}");
            match e {
                WalkError::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return invalid("--threads must be >= 1");
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let command = match (cli.replay, cli.command) {
        (Some(_), Some(_)) => return invalid("--replay cannot be combined with a subcommand"),
        (Some(path), None) => {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let meta: RunMeta = serde_json::from_str(&text)
                .map_err(|e| WalkError::InvalidArgument(format!("{}: {e}", path.display())))?;
            meta.command
        }
        (None, Some(c)) => c,
        (None, None) => return invalid("a subcommand or --replay is required"),
    };
    let out = Output::new(cli.output_dir)?;
    execute(command, &out)
}

/// Runs the command, then records it with the seed made explicit.
fn execute(command: Command, out: &Output) -> Result<()> {
    let command = match command {
        Command::Simulate(mut a) => {
            a.seed = Some(resolve_seed(a.seed));
            simulate(&a, out)?;
            Command::Simulate(a)
        }
        Command::Oracle(mut a) => {
            a.seed = Some(resolve_seed(a.seed));
            oracle(&a, out)?;
            Command::Oracle(a)
        }
        Command::Sweep(mut a) => {
            a.seed = Some(resolve_seed(a.seed));
            sweep(&a, out)?;
            Command::Sweep(a)
        }
        Command::Fit(a) => {
            fit(&a, out)?;
            Command::Fit(a)
        }
        Command::Collapse(a) => {
            collapse(&a, out)?;
            Command::Collapse(a)
        }
        Command::Figures(mut a) => {
            a.seed = Some(resolve_seed(a.seed));
            figures(&a, out)?;
            Command::Figures(a)
        }
    };
    out.meta(&command)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => {
            eprintln!("qwalk: seed = {s}");
            s
        }
        None => {
            eprintln!("qwalk: *** no --seed given, using default seed {DEFAULT_SEED} ***");
            DEFAULT_SEED
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> WalkError {
    WalkError::Internal(format!("{}: {e}", path.display()))
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Output { dir })
    }

    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    fn meta(&self, command: &Command) -> Result<()> {
        let meta = RunMeta {
            program: "qwalk".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
        };
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| WalkError::Internal(e.to_string()))?;
        let path = self.path(META_FILE);
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    fn csv(&self, name: &str, comments: &[String], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let mut buf = String::new();
        for c in comments {
            buf.push_str("# ");
            buf.push_str(c);
            buf.push('\n');
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for r in rows {
            w.write_record(&r).map_err(|e| io_err(&path, e))?;
        }
        let body = w.into_inner().map_err(|e| io_err(&path, e))?;
        buf.push_str(&String::from_utf8_lossy(&body));
        fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
        eprintln!("qwalk: wrote {}", path.display());
        Ok(())
    }

    fn density(&self, name: &str, d: &Density) -> Result<()> {
        let rows = d.iter().map(|(x, f)| vec![x.to_string(), fmt_f64(f)]).collect();
        self.csv(name, &[format!("t={}", d.time)], &["x", "f"], rows)
    }

    fn moments(&self, name: &str, m: &MomentSeries) -> Result<()> {
        let rows = (0..m.len())
            .map(|t| {
                vec![
                    t.to_string(),
                    fmt_f64(m.mean[t]),
                    fmt_f64(m.second_moment[t]),
                    fmt_f64(m.variance[t]),
                ]
            })
            .collect();
        self.csv(name, &[], &["t", "mean", "second_moment", "variance"], rows)
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| WalkError::Internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        eprintln!("qwalk: wrote {}", path.display());
        Ok(())
    }
}

fn ensemble(cfg: &RunConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    cfg.check_memory_ceiling()?;
    eprintln!(
        "qwalk: running {} for t_max = {}, {} realization(s)",
        cfg.schedule, cfg.t_max, cfg.n_realizations
    );
    let r = run_ensemble(cfg)?;
    eprintln!("qwalk: max norm drift {:e}", r.max_norm_drift);
    Ok(r)
}

/// Single-realization config for deterministic schedules.
fn config(schedule: StepSchedule, t_max: usize, realizations: usize, seed: u64) -> RunConfig {
    let n = if schedule.is_random() { realizations } else { 1 };
    RunConfig::new(schedule, t_max)
        .with_realizations(n)
        .with_seed(seed)
}

fn simulate(a: &SimulateArgs, out: &Output) -> Result<()> {
    let mut cfg = config(a.schedule.clone(), a.tmax, a.realizations, a.seed.unwrap_or(DEFAULT_SEED))
        .with_spinor(a.spinor.spinor());
    if let Some(s) = &a.snapshots {
        cfg = cfg.with_snapshots(s.clone());
    }
    let r = ensemble(&cfg)?;
    for d in &r.densities {
        out.density(&format!("density_t{}.csv", d.time), d)?;
    }
    out.moments("moments.csv", &r.moments)
}

fn oracle(a: &OracleArgs, out: &Output) -> Result<()> {
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    match a.mode {
        OracleMode::Dense => {
            let seq = a
                .sequence
                .clone()
                .ok_or_else(|| WalkError::InvalidArgument("dense mode needs --sequence".into()))?;
            if seq.len() > DENSE_MAX_TICKS {
                return Err(WalkError::Refused(format!(
                    "dense oracle is limited to {DENSE_MAX_TICKS} ticks, got {}",
                    seq.len()
                )));
            }
            let cfg = RunConfig::new(StepSchedule::constant(1)?, seq.len().max(1))
                .with_spinor(a.spinor.spinor());
            let dense = dense_evolve(&cfg, &seq)?;
            let kernel = evolve(cfg.spinor, &cfg.coin, &seq)?;
            let dev = max_amplitude_deviation(&dense, &kernel);
            let r = dense.capacity() as i64;
            let rows = (-r..=r)
                .map(|x| {
                    let (dl, dr) = dense.amplitude(x);
                    let (kl, kr) = kernel.amplitude(x);
                    vec![
                        x.to_string(),
                        fmt_f64(dl.re),
                        fmt_f64(dl.im),
                        fmt_f64(dr.re),
                        fmt_f64(dr.im),
                        fmt_f64((dl - kl).norm().max((dr - kr).norm())),
                    ]
                })
                .collect();
            out.csv(
                "dense_amplitudes.csv",
                &[],
                &["x", "left_re", "left_im", "right_re", "right_im", "deviation"],
                rows,
            )?;
            let pass = dev < 1e-12;
            println!(
                "dense oracle: max amplitude deviation {dev:e} ({})",
                if pass { "PASS" } else { "FAIL" }
            );
            out.json(
                "oracle_report.json",
                &serde_json::json!({"mode": "dense", "sequence": seq, "max_amplitude_deviation": dev, "pass": pass}),
            )
        }
        OracleMode::Exact => {
            if a.tmax > EXACT_MAX_TICKS {
                return Err(WalkError::Refused(format!(
                    "exact enumeration is limited to t_max <= {EXACT_MAX_TICKS}, got {}",
                    a.tmax
                )));
            }
            let cfg = RunConfig::new(a.schedule.clone(), a.tmax)
                .with_spinor(a.spinor.spinor())
                .with_snapshots(vec![a.tmax])
                .with_realizations(a.mc_realizations)
                .with_seed(seed);
            let exact = exact_ensemble(&cfg)?;
            out.density("exact_density.csv", &exact)?;
            let mc = ensemble(&cfg)?;
            let report = compare_with_monte_carlo(&exact, &mc)?;
            let rows = report
                .sites
                .iter()
                .map(|s| {
                    vec![
                        s.x.to_string(),
                        fmt_f64(s.exact),
                        fmt_f64(s.monte_carlo),
                        fmt_f64(s.stderr),
                        fmt_f64(s.z),
                    ]
                })
                .collect();
            out.csv("zscores.csv", &[], &["x", "exact", "monte_carlo", "stderr", "z"], rows)?;
            let pass = report.max_abs_z < 4.0 && report.frac_above_two < 0.1;
            println!(
                "exact oracle: max |z| = {:.3}, fraction |z| > 2 = {:.4} ({})",
                report.max_abs_z,
                report.frac_above_two,
                if pass { "PASS" } else { "FAIL" }
            );
            out.json(
                "oracle_report.json",
                &serde_json::json!({
                    "mode": "exact",
                    "t_max": a.tmax,
                    "mc_realizations": a.mc_realizations,
                    "max_abs_z": report.max_abs_z,
                    "frac_above_two": report.frac_above_two,
                    "pass": pass,
                }),
            )
        }
    }
}

fn sweep_rows_csv(rows: &[SweepRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                fmt_f64(r.alpha),
                fmt_f64(r.b1),
                fmt_f64(r.b2),
                fmt_f64(r.b3),
                fmt_f64(r.b4),
                fmt_f64(r.slope_x2),
                fmt_f64(r.x2_at_tmax),
                fmt_f64(r.residual),
                (r.min_flag as u8).to_string(),
            ]
        })
        .collect()
}

const SWEEP_HEADER: [&str; 9] = [
    "alpha", "b1", "b2", "b3", "b4", "slope_x2", "x2_at_tmax", "residuals", "min_flag",
];

fn powerlaw_rows(b2: &PowerLawFit, b4: &PowerLawFit) -> Vec<Vec<String>> {
    [("b2", b2), ("b4", b4)]
        .iter()
        .map(|(name, f)| {
            vec![
                name.to_string(),
                fmt_f64(f.amplitude),
                fmt_f64(f.exponent),
                fmt_f64(f.residual),
                fmt_f64(f.fit_range.0),
                fmt_f64(f.fit_range.1),
            ]
        })
        .collect()
}

const POWERLAW_HEADER: [&str; 6] = [
    "parameter", "amplitude", "beta", "residual", "one_minus_alpha_min", "one_minus_alpha_max",
];

/// Runs each alpha, returning the rows and the second-moment series.
fn run_sweep(alphas: &[f64], n: u32, t_max: usize, realizations: usize, seed: u64, spinor: SpinorChoice) -> Result<(Vec<SweepRow>, Vec<MomentSeries>)> {
    if alphas.is_empty() {
        return invalid("alpha list is empty");
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("alphas must be strictly increasing");
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        let cfg = config(StepSchedule::random(alpha, n)?, t_max, realizations, seed)
            .with_spinor(spinor.spinor())
            .with_snapshots(vec![t_max]);
        let r = ensemble(&cfg)?;
        rows.push(sweep_row(alpha, &r.moments)?);
        series.push(r.moments);
    }
    flag_minimum(&mut rows);
    Ok((rows, series))
}

fn sweep(a: &SweepArgs, out: &Output) -> Result<()> {
    let (rows, _) = run_sweep(&a.alphas, a.n, a.tmax, a.realizations, a.seed.unwrap_or(DEFAULT_SEED), a.spinor)?;
    out.csv("sweep.csv", &[], &SWEEP_HEADER, sweep_rows_csv(&rows))?;
    if let Some(best) = rows.iter().find(|r| r.min_flag) {
        println!("sweep: <x^2>(t_max) is smallest at alpha = {}", best.alpha);
    }
    if rows.len() >= 4 {
        let (b2, b4) = decoherence_power_laws(&rows)?;
        println!("sweep: beta(b2) = {:.4}, beta(b4) = {:.4}", b2.exponent, b4.exponent);
        out.csv("powerlaw.csv", &[], &POWERLAW_HEADER, powerlaw_rows(&b2, &b4))?;
    } else {
        eprintln!("qwalk: fewer than 4 alphas, powerlaw.csv not written");
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| io_err(path, e))?;
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| WalkError::InvalidArgument(format!("{}: no '{name}' column", path.display())))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| WalkError::InvalidArgument(format!("{}: bad value in row {:?}", path.display(), rec)))
}

/// Reads a density CSV with columns `x,f`. The time comes from a `# t=T`
/// line unless given.
pub fn read_density(path: &Path, time: Option<usize>) -> Result<Density> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let stated = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("t=")?.parse().ok());
    let time = time.or(stated).ok_or_else(|| {
        WalkError::InvalidArgument(format!("{}: no '# t=' line, pass --time", path.display()))
    })?;
    let (header, rows) = read_csv(path)?;
    let (ix, iff) = (column(path, &header, "x")?, column(path, &header, "f")?);
    let mut pts: Vec<(i64, f64)> = rows
        .iter()
        .map(|r| Ok((field(path, r, ix)?, field(path, r, iff)?)))
        .collect::<Result<_>>()?;
    pts.sort_by_key(|p| p.0);
    let (lo, hi) = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => (a.0.min(0), b.0.max(0)),
        _ => return invalid(format!("{}: no data rows", path.display())),
    };
    let mut values = vec![0.0; (hi - lo + 1) as usize];
    for (x, f) in pts {
        values[(x - lo) as usize] = f;
    }
    Ok(Density {
        values,
        origin_index: (-lo) as usize,
        time,
    })
}

/// Reads a moments CSV with columns `t,mean,second_moment` covering `t = 0..T`.
pub fn read_moments(path: &Path) -> Result<MomentSeries> {
    let (header, rows) = read_csv(path)?;
    let it = column(path, &header, "t")?;
    let im = column(path, &header, "mean")?;
    let is = column(path, &header, "second_moment")?;
    let mut mean = Vec::with_capacity(rows.len());
    let mut second = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let t: usize = field(path, r, it)?;
        if t != k {
            return invalid(format!("{}: expected t = {k}, found {t}", path.display()));
        }
        mean.push(field(path, r, im)?);
        second.push(field(path, r, is)?);
    }
    Ok(MomentSeries::from_raw(mean, second))
}

fn fit(a: &FitArgs, out: &Output) -> Result<()> {
    if let Some(p) = &a.moments {
        let series = read_moments(&out.path(p))?;
        let t_max = a.tend.unwrap_or(series.t_max());
        let window = (a.tmin.unwrap_or(default_fit_window(t_max).0), t_max);
        let f = fit_moment_forms(&series, window)?;
        println!(
            "fit: b1 = {:.6}, b2 = {:.6}, b3 = {:.6}, b4 = {:.6}, max relative residual = {:.4}",
            f.b1, f.b2, f.b3, f.b4, f.relative_residual_max
        );
        out.csv(
            "fit.csv",
            &[],
            &["b1", "b2", "b3", "b4", "mean_sign", "residual_mean", "residual_second", "t_min", "t_max"],
            vec![vec![
                fmt_f64(f.b1),
                fmt_f64(f.b2),
                fmt_f64(f.b3),
                fmt_f64(f.b4),
                fmt_f64(f.mean_sign),
                fmt_f64(f.residual_mean),
                fmt_f64(f.residual_second),
                window.0.to_string(),
                window.1.to_string(),
            ]],
        )?;
        let sw = default_slope_window(t_max);
        let mut rows = Vec::new();
        for (name, q) in [
            ("mean", Quantity::Mean),
            ("second_moment", Quantity::SecondMoment),
            ("variance", Quantity::Variance),
        ] {
            let s = estimate_slope(&series, q, sw)?;
            println!("fit: slope of {name} over [{}, {}] = {s:.4}", sw.0, sw.1);
            rows.push(vec![name.to_string(), fmt_f64(s), sw.0.to_string(), sw.1.to_string()]);
        }
        out.csv("slopes.csv", &[], &["quantity", "slope", "t_min", "t_max"], rows)?;
    }
    if let Some(p) = &a.density {
        let d = read_density(&out.path(p), a.time)?;
        let peaks = locate_peaks(&d, a.alpha)?;
        println!(
            "fit: ballistic peaks at {} and {} (predicted +-{:.1})",
            peaks.left_peak_x, peaks.right_peak_x, peaks.predicted
        );
        out.csv(
            "peaks.csv",
            &[],
            &["t", "left_peak_x", "right_peak_x", "predicted", "left_relative_error", "right_relative_error", "central_peak_height", "plateau_height"],
            vec![vec![
                peaks.time.to_string(),
                peaks.left_peak_x.to_string(),
                peaks.right_peak_x.to_string(),
                fmt_f64(peaks.predicted),
                fmt_f64(peaks.left_relative_error),
                fmt_f64(peaks.right_relative_error),
                fmt_f64(peaks.central_peak_height),
                fmt_f64(peaks.plateau_height),
            ]],
        )?;
        let tail = fit_tail(&d)?;
        out.csv("tail.csv", &[], &TAIL_HEADER, vec![tail_row(d.time, &tail)])?;
    }
    Ok(())
}

const TAIL_HEADER: [&str; 8] = [
    "t", "kind", "slope", "amplitude", "rate", "exponent", "power_law_log_rms", "u_max",
];

fn tail_row(t: usize, tail: &crate::analysis::TailFit) -> Vec<String> {
    let empty = String::new;
    let (kind, slope, amp, rate, exp, u_max) = match tail.kind {
        TailKind::PowerLaw { slope, amplitude, valid_range } => (
            "power_law",
            fmt_f64(slope),
            fmt_f64(amplitude),
            empty(),
            empty(),
            fmt_f64(valid_range.1),
        ),
        TailKind::StretchedExponential { prefactor, rate, exponent } => (
            "stretched_exponential",
            empty(),
            fmt_f64(prefactor),
            fmt_f64(rate),
            fmt_f64(exponent),
            empty(),
        ),
    };
    println!("fit: tail at t = {t} is {kind}");
    vec![
        t.to_string(),
        kind.to_string(),
        slope,
        amp,
        rate,
        exp,
        fmt_f64(tail.power_law_log_rms),
        u_max,
    ]
}

fn gamma_tag(g: f64) -> String {
    format!("{g}")
}

/// Writes one long-format file per gamma and a quality table.
fn write_collapse(out: &Output, prefix: &str, densities: &[Density], gammas: &[f64], bins: usize) -> Result<()> {
    let mut quality = Vec::new();
    for &g in gammas {
        let c = export_collapse(densities, g);
        let mut rows = Vec::new();
        for curve in &c.curves {
            for p in &curve.points {
                rows.push(vec![
                    curve.time.to_string(),
                    p.x.to_string(),
                    fmt_f64(p.scaled_x),
                    fmt_f64(p.scaled_f),
                ]);
            }
        }
        out.csv(
            &format!("{prefix}_gamma{}.csv", gamma_tag(g)),
            &[format!("gamma={g}")],
            &["t", "x", "scaled_x", "scaled_f"],
            rows,
        )?;
        for (name, region) in [
            ("all", CollapseRegion::All),
            ("central", CollapseRegion::Central(1.0)),
            ("ballistic", CollapseRegion::Ballistic(0.3)),
        ] {
            let s = collapse_spread(&c.curves, region, bins);
            quality.push(vec![fmt_f64(g), name.to_string(), fmt_f64(s)]);
        }
    }
    out.csv(&format!("{prefix}_quality.csv"), &[], &["gamma", "region", "spread"], quality)
}

fn collapse(a: &CollapseArgs, out: &Output) -> Result<()> {
    let ds: Vec<Density> = a
        .densities
        .iter()
        .map(|p| read_density(&out.path(p), None))
        .collect::<Result<_>>()?;
    write_collapse(out, "collapse", &ds, &a.gammas, a.bins)
}

/// Snapshot densities side by side on a common window.
fn wide_densities(out: &Output, name: &str, labels: &[String], ds: &[&Density]) -> Result<()> {
    let h = ds.iter().map(|d| d.support_radius()).max().unwrap_or(0) as i64;
    let mut header = vec!["x".to_string()];
    header.extend(labels.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (-h..=h)
        .map(|x| {
            let mut r = vec![x.to_string()];
            r.extend(ds.iter().map(|d| fmt_f64(d.at(x))));
            r
        })
        .collect();
    let times: Vec<String> = ds.iter().map(|d| d.time.to_string()).collect();
    out.csv(name, &[format!("t={}", times.join(","))], &header, rows)
}

/// Moment series side by side.
fn wide_moments(out: &Output, name: &str, labels: &[String], series: &[&MomentSeries], q: Quantity) -> Result<()> {
    let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (1..len)
        .map(|t| {
            let mut r = vec![t.to_string()];
            r.extend(series.iter().map(|s| fmt_f64(s.quantity(q)[t])));
            r
        })
        .collect();
    out.csv(name, &[], &header, rows)
}

fn slope_rows(labels: &[String], series: &[&MomentSeries], window: (usize, usize)) -> Result<Vec<Vec<String>>> {
    labels
        .iter()
        .zip(series)
        .map(|(l, s)| {
            let slope = estimate_slope(s, Quantity::SecondMoment, window)?;
            println!("figures: {l}: slope of <x^2> over [{}, {}] = {slope:.4}", window.0, window.1);
            Ok(vec![l.clone(), fmt_f64(slope), window.0.to_string(), window.1.to_string()])
        })
        .collect()
}

const PERIODIC_TWO: [&[usize]; 3] = [&[1, 2], &[1, 4], &[1, 8]];
const PERIODIC_LONG: [&[usize]; 3] = [&[1, 2, 4], &[1, 2, 8], &[1, 4, 8]];

fn periodic_label(p: &[usize]) -> String {
    let parts: Vec<String> = p.iter().map(|l| l.to_string()).collect();
    format!("periodic_{}", parts.join("_"))
}

fn figures(a: &FiguresArgs, out: &Output) -> Result<()> {
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let reals = a.realizations.unwrap_or(1000);
    let run = |schedule: StepSchedule, t_max: usize, snaps: Vec<usize>| -> Result<EnsembleResult> {
        ensemble(&config(schedule, t_max, reals, seed).with_snapshots(snaps))
    };
    let label = |alpha: f64| format!("alpha_{alpha}");
    match a.figure {
        Figure::Fig1 => {
            let t = a.tmax.unwrap_or(1024);
            let alphas = [0.5, 0.995, 1.0];
            let rs: Vec<EnsembleResult> = alphas
                .iter()
                .map(|&al| run(StepSchedule::random(al, 1)?, t, vec![t]))
                .collect::<Result<_>>()?;
            let labels: Vec<String> = alphas.iter().map(|&al| label(al)).collect();
            let ds: Vec<&Density> = rs.iter().map(|r| &r.densities[0]).collect();
            wide_densities(out, "fig1_density.csv", &labels, &ds)
        }
        Figure::Fig2 => {
            let t = a.tmax.unwrap_or(4096);
            let mut fits = Vec::new();
            for al in [0.5, 0.995] {
                let r = run(StepSchedule::random(al, 1)?, t, vec![t])?;
                let m = &r.moments;
                let window = default_fit_window(t);
                let f = fit_moment_forms(m, window)?;
                let rows = (1..=t)
                    .map(|k| {
                        let tf = k as f64;
                        vec![
                            k.to_string(),
                            fmt_f64(m.mean[k]),
                            fmt_f64(m.second_moment[k]),
                            fmt_f64(f.mean_at(tf)),
                            fmt_f64(f.second_moment_at(tf)),
                        ]
                    })
                    .collect();
                out.csv(
                    &format!("fig2_{}.csv", label(al)),
                    &[],
                    &["t", "mean", "second_moment", "fit_mean", "fit_second_moment"],
                    rows,
                )?;
                fits.push(vec![
                    fmt_f64(al),
                    fmt_f64(f.b1),
                    fmt_f64(f.b2),
                    fmt_f64(f.b3),
                    fmt_f64(f.b4),
                    fmt_f64(f.relative_residual_max),
                    window.0.to_string(),
                    window.1.to_string(),
                ]);
            }
            out.csv(
                "fig2_fits.csv",
                &[],
                &["alpha", "b1", "b2", "b3", "b4", "residuals", "t_min", "t_max"],
                fits,
            )
        }
        Figure::Fig3 => {
            let t = a.tmax.unwrap_or(2048);
            let alphas = [0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9];
            let (rows, series) = run_sweep(&alphas, 1, t, reals, seed, SpinorChoice::Asymmetric)?;
            let labels: Vec<String> = alphas.iter().map(|&al| label(al)).collect();
            let refs: Vec<&MomentSeries> = series.iter().collect();
            wide_moments(out, "fig3_second_moment.csv", &labels, &refs, Quantity::SecondMoment)?;
            out.csv("fig3_sweep.csv", &[], &SWEEP_HEADER, sweep_rows_csv(&rows))
        }
        Figure::Fig4 | Figure::Fig7 => {
            let (n, prefix) = if a.figure == Figure::Fig4 { (1, "fig4") } else { (3, "fig7") };
            let t = a.tmax.unwrap_or(if n == 1 { 4096 } else { 1024 });
            let alphas = match a.alpha {
                Some(al) => vec![al],
                None => vec![0.5, 0.995],
            };
            for al in alphas {
                let snaps = vec![t / 8, t / 4, t / 2, t];
                let r = run(StepSchedule::random(al, n)?, t, snaps)?;
                write_collapse(out, &format!("{prefix}_{}", label(al)), &r.densities, &[0.5, 1.0], COLLAPSE_BINS)?;
            }
            Ok(())
        }
        Figure::Fig5 => {
            let t = a.tmax.unwrap_or(4096);
            let alphas = [0.9, 0.95, 0.98, 0.99, 0.995];
            let (rows, _) = run_sweep(&alphas, 1, t, a.realizations.unwrap_or(500), seed, SpinorChoice::Asymmetric)?;
            let data = rows
                .iter()
                .map(|r| vec![fmt_f64(1.0 - r.alpha), fmt_f64(r.b2), fmt_f64(r.b4)])
                .collect();
            out.csv("fig5_decoherence.csv", &[], &["one_minus_alpha", "b2", "b4"], data)?;
            let (b2, b4) = decoherence_power_laws(&rows)?;
            println!("figures: beta(b2) = {:.4}, beta(b4) = {:.4}", b2.exponent, b4.exponent);
            out.csv("fig5_powerlaw.csv", &[], &POWERLAW_HEADER, powerlaw_rows(&b2, &b4))
        }
        Figure::Fig6 => {
            let t = a.tmax.unwrap_or(4096);
            let alphas = match a.alpha {
                Some(al) => vec![al],
                None => vec![0.5, 0.9, 0.995, 0.999],
            };
            let mut fits = Vec::new();
            let mut rows = Vec::new();
            let root = (t as f64).sqrt();
            for al in alphas {
                let r = run(StepSchedule::random(al, 1)?, t, vec![t])?;
                let d = &r.densities[0];
                for (x, f) in d.iter().filter(|&(x, f)| x > 0 && f > 0.0) {
                    rows.push(vec![fmt_f64(al), x.to_string(), fmt_f64(x as f64 / root), fmt_f64(f * root)]);
                }
                let mut row = tail_row(t, &fit_tail(d)?);
                row.insert(0, fmt_f64(al));
                fits.push(row);
            }
            out.csv("fig6_tail.csv", &[format!("t={t}")], &["alpha", "x", "u", "scaled_f"], rows)?;
            let mut header = vec!["alpha"];
            header.extend(TAIL_HEADER);
            out.csv("fig6_fits.csv", &[], &header, fits)
        }
        Figure::Fig8 => {
            let t = a.tmax.unwrap_or(1024);
            let alphas = [0.5, 0.8, 0.995, 0.999];
            for n in [2, 3] {
                let rs: Vec<EnsembleResult> = alphas
                    .iter()
                    .map(|&al| run(StepSchedule::random(al, n)?, t, vec![t]))
                    .collect::<Result<_>>()?;
                let labels: Vec<String> = alphas.iter().map(|&al| label(al)).collect();
                let refs: Vec<&MomentSeries> = rs.iter().map(|r| &r.moments).collect();
                wide_moments(out, &format!("fig8_n{n}.csv"), &labels, &refs, Quantity::SecondMoment)?;
            }
            Ok(())
        }
        Figure::Fig9 | Figure::Fig10 => {
            let t = a.tmax.unwrap_or(if a.figure == Figure::Fig9 { 256 } else { 1024 });
            for (panel, set) in [("two", PERIODIC_TWO), ("long", PERIODIC_LONG)] {
                let mut scheds: Vec<&[usize]> = set.to_vec();
                if panel == "long" {
                    scheds.insert(0, &[1, 2]);
                }
                let rs: Vec<EnsembleResult> = scheds
                    .iter()
                    .map(|p| run(StepSchedule::periodic(p.to_vec())?, t, vec![t]))
                    .collect::<Result<_>>()?;
                let labels: Vec<String> = scheds.iter().map(|p| periodic_label(p)).collect();
                if a.figure == Figure::Fig9 {
                    let ds: Vec<&Density> = rs.iter().map(|r| &r.densities[0]).collect();
                    wide_densities(out, &format!("fig9_{panel}.csv"), &labels, &ds)?;
                } else {
                    let refs: Vec<&MomentSeries> = rs.iter().map(|r| &r.moments).collect();
                    wide_moments(out, &format!("fig10_{panel}.csv"), &labels, &refs, Quantity::SecondMoment)?;
                    let window = ((t / 16).max(1), t);
                    let rows = slope_rows(&labels, &refs, window)?;
                    out.csv(&format!("fig10_{panel}_slopes.csv"), &[], &["schedule", "slope_x2", "t_min", "t_max"], rows)?;
                }
            }
            Ok(())
        }
    }
}
