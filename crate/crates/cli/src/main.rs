use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cm4d_core::channel::eb_n0_db;
use cm4d_core::constellation::{asymptotic_gain_db, make_cartesian, Constellation, PamAlphabet};
use cm4d_core::labeling::{optimize_labeling, LabelingSearchConfig};
use cm4d_core::ldpc::{peg_construct, LdpcCode, PegConfig, DEFAULT_MAX_ITERATIONS};
use cm4d_core::rates::{
    find_crossings, rate_curve, shannon_capacity, snr_grid, EstimatorParams, EstimatorRegistry,
    RateCurve, RateKind, DEFAULT_QUADRATURE_ORDER,
};
use cm4d_core::registry::ConstellationRegistry;
use cm4d_core::simulation::{gmi_threshold_check, run_ber, SimConfig, SimResult};

#[derive(Parser, Debug)]
#[command(
    name = "cm4d",
    version,
    about = "Achievable rates and coded BER for multidimensional constellations"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Describe a constellation or an LDPC code.
    Info(InfoArgs),
    /// MI, per-bit MI and GMI over an SNR grid.
    Rates(RatesArgs),
    /// Shannon capacity of the real AWGN channel over an SNR grid.
    Capacity(CapacityArgs),
    /// Coded BER simulation.
    Ber(BerArgs),
    /// Search for a GMI-maximizing labeling.
    LabelOpt(LabelOptArgs),
    /// Rate at which two constellations' curves cross.
    Crossing(CrossingArgs),
    /// Compare the GMI threshold with a measured BER waterfall.
    Threshold(ThresholdArgs),
    /// Build a PEG LDPC code and write it as alist.
    MakeCode(MakeCodeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct ConstellationArgs {
    /// Built-in constellation name.
    #[arg(short, long, default_value = "pm-qpsk")]
    constellation: String,
    /// Constellation file; overrides --constellation.
    #[arg(long)]
    constellation_file: Option<PathBuf>,
}

impl ConstellationArgs {
    fn load(&self) -> Result<Constellation> {
        match &self.constellation_file {
            Some(p) => Constellation::load(p)
                .with_context(|| format!("--constellation-file {}", p.display())),
            None => ConstellationRegistry::builtin()
                .build(&self.constellation)
                .with_context(|| format!("--constellation {}", self.constellation)),
        }
    }
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    start: f64,
    #[arg(long, default_value_t = 16.0, allow_hyphen_values = true)]
    stop: f64,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Explicit comma-separated Es/N0 values in dB; overrides start/stop/step.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
}

impl GridArgs {
    /// Resolved Es/N0 grid; an empty or malformed grid is a usage error.
    fn grid(&self) -> Result<Vec<f64>> {
        let g = match &self.snr {
            Some(v) => Ok(v.clone()),
            None => snr_grid(self.start, self.stop, self.step).map_err(|e| e.to_string()),
        };
        match g {
            Ok(g) if !g.is_empty() => Ok(g),
            Ok(_) => usage_error("empty SNR grid"),
            Err(e) => usage_error(&format!("SNR grid: {e}")),
        }
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ValueValidation, msg)
        .exit()
}

#[derive(Args, Debug, Clone)]
struct EstimatorArgs {
    /// Rate estimator: quadrature or montecarlo.
    #[arg(long, default_value = "quadrature")]
    method: String,
    /// Gauss–Hermite order per dimension.
    #[arg(long, default_value_t = DEFAULT_QUADRATURE_ORDER)]
    order: usize,
    /// Monte Carlo sample count (accepts forms like 1e6).
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl EstimatorArgs {
    fn curve(&self, c: &Constellation, grid: &[f64]) -> Result<RateCurve> {
        let params = EstimatorParams {
            order: self.order,
            samples: self.samples,
            seed: self.seed,
        };
        let est = EstimatorRegistry::default().create(&self.method, &params)?;
        Ok(rate_curve(c, grid, est.as_ref())?)
    }
}

fn parse_count(s: &str) -> std::result::Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if f >= 0.0 && f.fract() == 0.0 && f <= usize::MAX as f64 {
        Ok(f as usize)
    } else {
        Err(format!("`{s}` is not a non-negative integer"))
    }
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[command(flatten)]
    constellation: ConstellationArgs,
    /// Describe this alist code instead.
    #[arg(long)]
    code: Option<PathBuf>,
    /// List built-in constellations.
    #[arg(long)]
    list: bool,
    /// Print the constellation file text as well.
    #[arg(long)]
    points: bool,
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[command(flatten)]
    constellation: ConstellationArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct CapacityArgs {
    /// Real dimensions (even).
    #[arg(long, default_value_t = 4)]
    dims: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct BerArgs {
    /// Comma-separated built-in constellation names.
    #[arg(long, value_delimiter = ',', default_value = "pm-qpsk")]
    constellations: Vec<String>,
    /// Constellation file; replaces --constellations.
    #[arg(long)]
    constellation_file: Option<PathBuf>,
    /// LDPC parity-check matrix in alist format.
    #[arg(long)]
    code: PathBuf,
    /// exact, maxlog or factorized.
    #[arg(long, default_value = "exact")]
    demapper: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 10_000, value_parser = parse_count)]
    max_blocks: usize,
    /// Stop a point after this many bit errors.
    #[arg(long, default_value_t = 100)]
    min_errors: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Skip higher SNRs once a point's BER falls below this value.
    #[arg(long)]
    ber_floor: Option<f64>,
    /// Output prefix; writes `<prefix>_<constellation>.csv` and `.json`.
    #[arg(short, long, default_value = "ber")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct LabelOptArgs {
    #[command(flatten)]
    constellation: ConstellationArgs,
    /// Target Es/N0 values (dB) whose mean GMI is maximized.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "2,4,6,8,10",
        allow_hyphen_values = true
    )]
    targets: Vec<f64>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(long, default_value_t = 6)]
    search_order: usize,
    #[arg(long, default_value_t = DEFAULT_QUADRATURE_ORDER)]
    final_order: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_passes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Relabeled constellation file.
    #[arg(short, long)]
    output: PathBuf,
    /// JSON report path (default: <output>.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CrossingArgs {
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    /// mi or gmi.
    #[arg(long, default_value = "gmi")]
    kind: RateKind,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Rate-curve CSV written by `rates`.
    #[arg(long)]
    curve: PathBuf,
    /// BER CSV written by `ber`.
    #[arg(long)]
    ber: PathBuf,
    #[arg(long)]
    code_rate: f64,
}

#[derive(Args, Debug)]
struct MakeCodeArgs {
    #[arg(long, default_value_t = 1008)]
    n: usize,
    #[arg(long)]
    checks: usize,
    #[arg(long, default_value_t = 3)]
    column_weight: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

/// Writes through `<path>.partial` and renames once `f` succeeds.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let file = File::create(&partial).with_context(|| format!("creating {}", partial.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    drop(w);
    std::fs::rename(&partial, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn emit(output: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, f),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

fn write_json<T: Serialize>(w: &mut dyn Write, v: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

fn cmd_info(args: &InfoArgs) -> Result<()> {
    let mut out = io::stdout().lock();
    if args.list {
        let reg = ConstellationRegistry::builtin();
        for name in reg.names() {
            let src = reg.get(name).expect("listed");
            writeln!(out, "{name:<12} {}", src.describe())?;
        }
        return Ok(());
    }
    if let Some(path) = &args.code {
        let code =
            LdpcCode::load_alist(path).with_context(|| format!("--code {}", path.display()))?;
        let hist = |d: Vec<usize>| {
            let mut h = std::collections::BTreeMap::new();
            for x in d {
                *h.entry(x).or_insert(0usize) += 1;
            }
            h.iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(out, "code        {}", path.display())?;
        writeln!(out, "n           {}", code.n())?;
        writeln!(out, "k           {}", code.k())?;
        writeln!(out, "checks      {} (rank {})", code.checks(), code.rank())?;
        writeln!(out, "rate        {:.6}", code.rate())?;
        writeln!(out, "col degrees {}", hist(code.column_degrees()))?;
        writeln!(out, "row degrees {}", hist(code.row_degrees()))?;
        return Ok(());
    }
    let c = args.constellation.load()?;
    writeln!(out, "name        {}", c.name())?;
    writeln!(out, "points      {}", c.size())?;
    writeln!(out, "dims        {}", c.dims())?;
    writeln!(out, "bits        {}", c.bits())?;
    writeln!(out, "energy      {:.12}", c.energy())?;
    writeln!(
        out,
        "d2min/Es    {:.6}",
        c.min_squared_distance() / c.energy()
    )?;
    if c.dims() % 2 == 0 && c.bits() % (c.dims() / 2) == 0 {
        // reference: the Cartesian QAM product with the same size
        let per_dim = 1usize << (c.bits() / c.dims());
        if per_dim.pow(c.dims() as u32) == c.size() {
            let reference = make_cartesian(&PamAlphabet::new(per_dim)?, c.dims())?;
            let gain = asymptotic_gain_db(&c, &reference)?;
            writeln!(out, "gain        {gain:+.4} dB vs {}", reference.name())?;
        }
    }
    if args.points {
        write!(out, "{}", c.to_text())?;
    }
    Ok(())
}

fn cmd_rates(args: &RatesArgs) -> Result<()> {
    let c = args.constellation.load()?;
    let grid = args.grid.grid()?;
    let curve = args.estimator.curve(&c, &grid)?;
    emit(args.output.as_deref(), |w| match args.format {
        Format::Csv => Ok(curve.write_csv(w)?),
        Format::Json => write_json(w, &curve),
    })
}

#[derive(Serialize)]
struct CapacityRow {
    es_n0_db: f64,
    eb_n0_db: f64,
    capacity: f64,
}

fn cmd_capacity(args: &CapacityArgs) -> Result<()> {
    let rows = args
        .grid
        .grid()?
        .into_iter()
        .map(|es| {
            let capacity = shannon_capacity(es, args.dims)?;
            Ok(CapacityRow {
                es_n0_db: es,
                eb_n0_db: eb_n0_db(es, capacity)?,
                capacity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(args.output.as_deref(), |w| match args.format {
        Format::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            for r in &rows {
                wr.serialize(r)?;
            }
            wr.flush()?;
            Ok(())
        }
        Format::Json => write_json(w, &rows),
    })
}

fn cmd_ber(args: &BerArgs, threads: usize) -> Result<()> {
    if !args.code.exists() {
        bail!("--code: alist file {} does not exist", args.code.display());
    }
    let grid = args.grid.grid()?;
    let mut jobs: Vec<(String, Option<PathBuf>)> = match &args.constellation_file {
        Some(p) => {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            vec![(stem, Some(p.clone()))]
        }
        None => args
            .constellations
            .iter()
            .map(|n| (n.clone(), None))
            .collect(),
    };
    jobs.retain(|(n, _)| !n.is_empty());
    if jobs.is_empty() {
        bail!("--constellations: no constellation given");
    }
    for (name, file) in jobs {
        let cfg = SimConfig {
            constellation: name.clone(),
            constellation_file: file,
            code: args.code.clone(),
            demapper: args.demapper.clone(),
            es_n0_db: grid.clone(),
            max_blocks: args.max_blocks,
            min_bit_errors: args.min_errors,
            max_iterations: args.max_iters,
            // every constellation sees the same master seed
            seed: args.seed,
            threads,
            ber_floor: args.ber_floor,
        };
        log::info!("ber config: {cfg:?}");
        let res: SimResult = run_ber(&cfg).with_context(|| format!("simulating {name}"))?;
        let mut base = args.output.as_os_str().to_owned();
        base.push(format!("_{name}"));
        let base = PathBuf::from(base);
        let csv_path = base.with_extension("csv");
        let json_path = base.with_extension("json");
        write_atomic(&csv_path, |w| Ok(res.write_csv(w)?))?;
        write_atomic(&json_path, |w| write_json(w, &res))?;
        println!(
            "{name}: R = {:.4} bit/symbol, waterfall (BER < 1e-3) at {}",
            res.transmission_rate,
            res.waterfall_snr()
                .map_or("not reached".to_string(), |s| format!("{s:.3} dB Es/N0"))
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct LabelOptReport<'a> {
    constellation: &'a str,
    config: &'a LabelingSearchConfig,
    objective: f64,
    per_target: &'a [f64],
    best_restart: usize,
    labels: Vec<String>,
    restarts: &'a [cm4d_core::labeling::RestartReport],
}

fn cmd_label_opt(args: &LabelOptArgs) -> Result<()> {
    let c = args.constellation.load()?;
    let cfg = LabelingSearchConfig {
        targets_db: args.targets.clone(),
        search_order: args.search_order,
        final_order: args.final_order,
        restarts: args.restarts as usize,
        max_passes: args.max_passes,
        epsilon: args.epsilon,
        seed: args.seed,
    };
    log::info!("label-opt config: {cfg:?}");
    let res = optimize_labeling(&c, &cfg)?;
    let header = format!(
        "# {} relabeled by label-opt: seed {}, restarts {}, targets {:?} dB, order {}\n# mean GMI {:.6} bit/symbol\n",
        c.name(),
        cfg.seed,
        cfg.restarts,
        cfg.targets_db,
        cfg.search_order,
        res.objective
    );
    write_atomic(&args.output, |w| {
        w.write_all(header.as_bytes())?;
        w.write_all(res.constellation.to_text().as_bytes())?;
        Ok(())
    })?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.output.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    });
    let report = LabelOptReport {
        constellation: c.name(),
        config: &cfg,
        objective: res.objective,
        per_target: &res.per_target,
        best_restart: res.best_restart,
        labels: (0..res.constellation.size())
            .map(|i| res.constellation.label_string(i))
            .collect(),
        restarts: &res.restarts,
    };
    write_atomic(&report_path, |w| write_json(w, &report))?;
    println!(
        "mean GMI {:.6} bit/symbol (restart {})",
        res.objective, res.best_restart
    );
    Ok(())
}

#[derive(Serialize)]
struct CrossingReport {
    a: String,
    b: String,
    kind: String,
    /// First crossing.
    rate: Option<f64>,
    crossings: Vec<f64>,
}

fn cmd_crossing(args: &CrossingArgs) -> Result<()> {
    let reg = ConstellationRegistry::builtin();
    let load = |spec: &str| -> Result<Constellation> {
        let p = Path::new(spec);
        if p.is_file() {
            Ok(Constellation::load(p)?)
        } else {
            Ok(reg.build(spec)?)
        }
    };
    let (ca, cb) = (load(&args.a)?, load(&args.b)?);
    let grid = args.grid.grid()?;
    let a = args.estimator.curve(&ca, &grid)?;
    let b = args.estimator.curve(&cb, &grid)?;
    let crossings = find_crossings(&a, &b, args.kind)?;
    let report = CrossingReport {
        a: ca.name().to_string(),
        b: cb.name().to_string(),
        kind: args.kind.to_string(),
        rate: crossings.first().copied(),
        crossings,
    };
    write_json(&mut io::stdout().lock(), &report)
}

fn cmd_threshold(args: &ThresholdArgs) -> Result<()> {
    let open =
        |p: &Path, flag: &str| File::open(p).with_context(|| format!("{flag} {}", p.display()));
    let name = args
        .curve
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let curve = RateCurve::read_csv(open(&args.curve, "--curve")?, &name)?;
    let rows = SimResult::read_csv(open(&args.ber, "--ber")?)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.es_n0_db, r.ber)).collect();
    let report = gmi_threshold_check(&curve, args.code_rate, &points)?;
    write_json(&mut io::stdout().lock(), &report)
}

fn cmd_make_code(args: &MakeCodeArgs) -> Result<()> {
    let cfg = PegConfig {
        n: args.n,
        checks: args.checks,
        column_weight: args.column_weight,
        seed: args.seed,
    };
    let code = peg_construct(&cfg)?;
    write_atomic(&args.output, |w| {
        Ok(w.write_all(code.to_alist().as_bytes())?)
    })?;
    println!(
        "n = {}, k = {}, rate = {:.6}, written to {}",
        code.n(),
        code.k(),
        code.rate(),
        args.output.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let threads = cli.threads.unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("--threads")?;
    }
    log::info!("{:?}", cli.command);
    match &cli.command {
        Command::Info(a) => cmd_info(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Capacity(a) => cmd_capacity(a),
        Command::Ber(a) => cmd_ber(a, threads),
        Command::LabelOpt(a) => cmd_label_opt(a),
        Command::Crossing(a) => cmd_crossing(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::MakeCode(a) => cmd_make_code(a),
    }
}
