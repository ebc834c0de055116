//! Command-line front end.
//!
//! Exit codes: 0 success (whatever the decision), 2 configuration or usage
//! error, 3 data or I/O error, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::citest::{flowcit, Direction, SplitResult, TestConfig};
use crate::data::{DataTriplet, Dims};
use crate::depmeasure::MeasureKind;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::linalg::Matrix;
use crate::simlab::{ks_statistic, qq_data, run_experiment, ExperimentResult, SimModel, SimSpec, VelocityMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Dimension(_) | Error::Io { .. } => EXIT_DATA,
        Error::Numeric { .. } | Error::Degenerate(_) => EXIT_NUMERIC,
        Error::Split { .. } | Error::Replication { .. } => unreachable!("root unwraps wrappers"),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a headerless (or single-header) numeric CSV into a matrix.
pub fn load_csv_matrix(path: &Path, header: bool) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if cols.is_some_and(|c| c != record.len()) {
            return Err(Error::Data(format!(
                "{}: line {line} has {} columns, expected {}",
                path.display(),
                record.len(),
                cols.unwrap_or(0)
            )));
        }
        cols = Some(record.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: cannot parse `{cell}` at row {}, column {} (line {line})",
                    path.display(),
                    rows + 1,
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite value at row {}, column {}",
                    path.display(),
                    rows + 1,
                    j + 1
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    match cols {
        Some(c) if rows > 0 && c > 0 => Matrix::new(rows, c, data),
        _ => Err(Error::Data(format!("{}: no data rows", path.display()))),
    }
}

/// Loads `X`, `Y`, `Z` from three CSV files with one sample per row.
pub fn load_csv_triplet(x: &Path, y: &Path, z: &Path, header: bool) -> Result<DataTriplet> {
    let mx = load_csv_matrix(x, header)?;
    let my = load_csv_matrix(y, header)?;
    let mz = load_csv_matrix(z, header)?;
    if mx.rows() != my.rows() || mx.rows() != mz.rows() {
        return Err(Error::Data(format!(
            "row counts differ: {} has {}, {} has {}, {} has {}",
            x.display(),
            mx.rows(),
            y.display(),
            my.rows(),
            z.display(),
            mz.rows()
        )));
    }
    DataTriplet::new(mx, my, mz)
}

/// Every knob of a run. Flags override a config file, which overrides these
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub z: Option<PathBuf>,
    pub header: bool,
    pub permutations: usize,
    pub n2: Option<usize>,
    /// Held-out folds; defaults to 1 for `test` and to the model's value for
    /// `simulate`.
    pub m: Option<usize>,
    pub measure: MeasureKind,
    pub direction: Direction,
    pub steps: usize,
    /// First hidden width; 32 for `test`, the model's value for `simulate`.
    pub width: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub resample_noise: bool,
    pub seed: u64,
    pub alpha: f64,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub model: Option<SimModel>,
    pub setting: Option<u8>,
    pub psi: f64,
    pub n: Option<usize>,
    pub dims: Option<Dims>,
    pub reps: usize,
    pub oracle: bool,
    pub input: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let flow = FlowConfig::default();
        Self {
            x: None,
            y: None,
            z: None,
            header: false,
            permutations: 100,
            n2: None,
            m: None,
            measure: MeasureKind::default(),
            direction: Direction::default(),
            steps: flow.steps,
            width: None,
            epochs: flow.epochs,
            batch_size: flow.batch_size,
            learning_rate: flow.learning_rate,
            resample_noise: flow.resample_noise_each_epoch,
            seed: 0,
            alpha: 0.05,
            output: None,
            workers: None,
            model: None,
            setting: None,
            psi: 0.0,
            n: None,
            dims: None,
            reps: 200,
            oracle: false,
            input: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "x" => self.x = Some(value.into()),
            "y" => self.y = Some(value.into()),
            "z" => self.z = Some(value.into()),
            "header" => self.header = parse_bool(&key, value)?,
            "permutations" | "b" => self.permutations = parse(&key, value)?,
            "n2" => self.n2 = Some(parse(&key, value)?),
            "m" | "splits" => self.m = Some(parse(&key, value)?),
            "measure" => self.measure = value.parse()?,
            "direction" => self.direction = value.parse()?,
            "steps" => self.steps = parse(&key, value)?,
            "width" | "hidden" => self.width = Some(parse(&key, value)?),
            "epochs" => self.epochs = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(&key, value)?,
            "resample_noise" => self.resample_noise = parse_bool(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "alpha" => self.alpha = parse(&key, value)?,
            "output" => self.output = Some(value.into()),
            "workers" => self.workers = Some(parse(&key, value)?),
            "model" => self.model = Some(value.parse()?),
            "setting" => self.setting = Some(parse(&key, value)?),
            "psi" => self.psi = parse(&key, value)?,
            "n" => self.n = Some(parse(&key, value)?),
            "dims" => self.dims = Some(value.parse()?),
            "reps" => self.reps = parse(&key, value)?,
            "oracle" => self.oracle = parse_bool(&key, value)?,
            "input" => self.input = Some(value.into()),
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file: `key = value` lines (with `#` comments), or
    /// JSON holding either a bare config object or a report whose `config`
    /// member is one.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        if text.trim_start().starts_with('{') {
            let json: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let obj = json.get("config").unwrap_or(&json);
            let obj = obj
                .as_object()
                .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
            for (k, v) in obj {
                let text = match v {
                    serde_json::Value::Null => continue,
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Object(d) if k == "dims" => format!(
                        "{},{},{}",
                        d.get("x").cloned().unwrap_or_default(),
                        d.get("y").cloned().unwrap_or_default(),
                        d.get("z").cloned().unwrap_or_default()
                    ),
                    other => other.to_string(),
                };
                self.set(k, &text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            }
            return Ok(());
        }
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn test_config(&self, default_m: usize, default_width: usize) -> TestConfig {
        TestConfig {
            permutations: self.permutations,
            n2: self.n2,
            splits: self.m.unwrap_or(default_m),
            measure: self.measure,
            direction: self.direction,
            flow: FlowConfig {
                hidden: self.width.unwrap_or(default_width),
                steps: self.steps,
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                resample_noise_each_epoch: self.resample_noise,
                seed: 0,
            },
            seed: self.seed,
        }
    }

    pub fn sim_spec(&self) -> Result<SimSpec> {
        let model = self
            .model
            .ok_or_else(|| Error::Config("simulation needs a model".into()))?;
        let mut spec = SimSpec::new(model, self.setting, self.psi, self.reps, self.seed);
        if let Some(n) = self.n {
            spec.n = n;
        }
        if let Some(d) = self.dims {
            spec.dims = d;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Flags shared by every subcommand. Unset flags fall through to the config
/// file and then to the defaults.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// `key = value` or JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Permutation count B
    #[arg(long, short = 'B')]
    pub permutations: Option<usize>,
    /// Held-out fold size (default floor(4 sqrt(n)))
    #[arg(long)]
    pub n2: Option<usize>,
    /// Number of disjoint held-out folds
    #[arg(long, short = 'm')]
    pub m: Option<usize>,
    /// dc or ipc
    #[arg(long)]
    pub measure: Option<MeasureKind>,
    /// dc1 or dc2
    #[arg(long)]
    pub direction: Option<Direction>,
    /// RK4 steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// First hidden width
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output file (stdout when absent)
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Worker threads
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct SimArgs {
    /// convergence, univariate, low-low, low-high, high-high
    #[arg(long)]
    pub model: Option<SimModel>,
    #[arg(long)]
    pub setting: Option<u8>,
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// `dx,dy,dz` (convergence model only)
    #[arg(long)]
    pub dims: Option<Dims>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Use the exact Gaussian velocity fields
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Test X independent of Y given Z on CSV data
    Test {
        #[arg(long)]
        x: Option<PathBuf>,
        #[arg(long)]
        y: Option<PathBuf>,
        #[arg(long)]
        z: Option<PathBuf>,
        /// Skip one header row in each file
        #[arg(long)]
        header: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte Carlo size or power of the test on a simulation model
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Uniform Q-Q data and KS distance for a set of p-values
    Qq {
        /// CSV of p-values (one column, or `simulate` output)
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Parser, Debug)]
#[command(name = "flowci", version, about = "Conditional independence testing with learned transport maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn layered(common: &CommonArgs, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    macro_rules! over {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = common.$flag.clone() { cfg.$field = v.into(); })*
        };
    }
    over!(permutations => permutations, measure => measure, direction => direction,
        steps => steps, epochs => epochs, batch_size => batch_size, lr => learning_rate,
        seed => seed, alpha => alpha);
    if common.n2.is_some() {
        cfg.n2 = common.n2;
    }
    if common.m.is_some() {
        cfg.m = common.m;
    }
    if common.width.is_some() {
        cfg.width = common.width;
    }
    if common.output.is_some() {
        cfg.output = common.output.clone();
    }
    if common.workers.is_some() {
        cfg.workers = common.workers;
    }
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_sim(cfg: &mut RunConfig, sim: &SimArgs) {
    if sim.model.is_some() {
        cfg.model = sim.model;
    }
    if sim.setting.is_some() {
        cfg.setting = sim.setting;
    }
    if let Some(psi) = sim.psi {
        cfg.psi = psi;
    }
    if sim.n.is_some() {
        cfg.n = sim.n;
    }
    if sim.dims.is_some() {
        cfg.dims = sim.dims;
    }
    if let Some(r) = sim.reps {
        cfg.reps = r;
    }
    if sim.oracle {
        cfg.oracle = true;
    }
}

/// Builds the layered configuration for a parsed command line.
pub fn resolve(command: &Command) -> Result<RunConfig> {
    match command {
        Command::Test {
            x,
            y,
            z,
            header,
            common,
        } => layered(common, |cfg| {
            if x.is_some() {
                cfg.x = x.clone();
            }
            if y.is_some() {
                cfg.y = y.clone();
            }
            if z.is_some() {
                cfg.z = z.clone();
            }
            if *header {
                cfg.header = true;
            }
        }),
        Command::Simulate { sim, common } => layered(common, |cfg| apply_sim(cfg, sim)),
        Command::Qq { input, sim, common } => layered(common, |cfg| {
            apply_sim(cfg, sim);
            if input.is_some() {
                cfg.input = input.clone();
            }
        }),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {k} workers: {e}")))?
            .install(f),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

/// JSON document written by `test`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CliReport {
    pub n: usize,
    pub n2: usize,
    pub dims: Dims,
    pub splits: Vec<SplitResult>,
    pub combined_p: f64,
    pub alpha: f64,
    pub reject: bool,
    pub decision: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub config: RunConfig,
}

pub fn cmd_test(cfg: &RunConfig) -> Result<CliReport> {
    let need = |p: &Option<PathBuf>, name: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("missing input file for {name}")))
    };
    let (x, y, z) = (need(&cfg.x, "x")?, need(&cfg.y, "y")?, need(&cfg.z, "z")?);
    let data = load_csv_triplet(&x, &y, &z, cfg.header)?;
    let tcfg = cfg.test_config(1, FlowConfig::default().hidden);
    let start = Instant::now();
    let report = with_workers(cfg.workers, || flowcit(&data, &tcfg))?;
    let reject = report.rejects(cfg.alpha);
    Ok(CliReport {
        n: report.n,
        n2: report.n2,
        dims: data.dims(),
        splits: report.splits,
        combined_p: report.combined_p,
        alpha: cfg.alpha,
        reject,
        decision: if reject { "reject" } else { "fail to reject" }.into(),
        seed: cfg.seed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}

fn simulate(cfg: &RunConfig) -> Result<ExperimentResult> {
    let spec = cfg.sim_spec()?;
    let tcfg = cfg.test_config(spec.model.default_splits(), spec.model.default_width());
    let mode = if cfg.oracle {
        VelocityMode::Oracle
    } else {
        VelocityMode::Learned
    };
    with_workers(cfg.workers, || run_experiment(&spec, &tcfg, cfg.alpha, mode))
}

pub fn simulation_csv(res: &ExperimentResult) -> String {
    let mut out = String::from("kind,replication,seed,p_value,alpha,rejection_rate\n");
    for (r, (seed, p)) in res.seeds.iter().zip(&res.p_values).enumerate() {
        out.push_str(&format!("replication,{r},{seed},{p},,\n"));
    }
    out.push_str(&format!("summary,,,,{},{}\n", res.alpha, res.rejection_rate));
    out
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<ExperimentResult> {
    let res = simulate(cfg)?;
    write_output(cfg.output.as_deref(), &simulation_csv(&res))?;
    eprintln!(
        "rejection rate at alpha={}: {} ({} replications)",
        res.alpha,
        res.rejection_rate,
        res.p_values.len()
    );
    Ok(res)
}

/// p-values from a one-column CSV (optional header) or from `simulate` output.
pub fn read_pvalues(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let bad = |line: &str| Error::Data(format!("{}: cannot read a p-value from `{line}`", path.display()));
    let mut ps = Vec::new();
    if first.starts_with("kind,") {
        let col = first.split(',').position(|c| c == "p_value").ok_or_else(|| bad(first))?;
        for line in lines.filter(|l| l.starts_with("replication,")) {
            let cell = line.split(',').nth(col).ok_or_else(|| bad(line))?;
            ps.push(cell.parse().map_err(|_| bad(line))?);
        }
    } else {
        if let Ok(p) = first.parse::<f64>() {
            ps.push(p);
        }
        for line in lines {
            ps.push(line.parse().map_err(|_| bad(line))?);
        }
    }
    if ps.is_empty() {
        return Err(Error::Data(format!("{}: no p-values", path.display())));
    }
    Ok(ps)
}

pub fn cmd_qq(cfg: &RunConfig) -> Result<f64> {
    let ps = match &cfg.input {
        Some(path) => read_pvalues(path)?,
        None => simulate(cfg)?.p_values,
    };
    let pairs = qq_data(&ps)?;
    let ks = ks_statistic(&ps)?;
    let mut out = String::from("theoretical,empirical\n");
    for (t, e) in pairs {
        out.push_str(&format!("{t},{e}\n"));
    }
    write_output(cfg.output.as_deref(), &out)?;
    eprintln!("ks = {ks} (N = {})", ps.len());
    Ok(ks)
}

fn dispatch(command: &Command) -> Result<()> {
    let cfg = resolve(command)?;
    match command {
        Command::Test { .. } => {
            let report = cmd_test(&cfg)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Data(format!("cannot encode report: {e}")))?;
            write_output(cfg.output.as_deref(), &(json + "\n"))?;
            eprintln!("combined p = {} ({})", report.combined_p, report.decision);
        }
        Command::Simulate { .. } => {
            cmd_simulate(&cfg)?;
        }
        Command::Qq { .. } => {
            cmd_qq(&cfg)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
