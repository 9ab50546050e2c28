//! `stc`: sparse ternary codes for similarity search, end to end.
//!
//! Analysis commands (`gain`, `identify`) emit CSV with the fully resolved
//! run configuration echoed in a leading `#` JSON comment, so every output
//! file documents how to reproduce itself. Pipeline commands (`sample`,
//! `perturb`, `encode`, `index`, `query`) move data through the binary
//! formats. All randomness derives from `--seed`; reruns with identical
//! flags produce identical bytes.
//!
//! Exit codes: 0 success, 2 configuration or grid errors, 3 resource-cap
//! refusals, 4 unreadable or foreign files, 5 shape/kind/empty-input
//! mismatches, 1 anything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stc::channel::{derive_seed, sample_database, sample_query, ChannelSpec};
use stc::decode::{build_index, sublinear_decode, CodeKind, EncodedDatabase, ScoreAccumulator};
use stc::encode::{alpha_of, ternarize, ThresholdPair};
use stc::error::{Result, StcError};
use stc::experiment::{run_gain_at, run_gain_sweep, run_identification, ExperimentConfig, GainRow, TradeoffPoint};
use stc::info::{default_lambda_y_grid, optimize_lambda_y, transition_matrix, voting_constants, GridSpec};
use stc::io::{
    read_codes, read_features, read_index, read_projection, write_codes, write_features,
    write_index, write_projection,
};
use stc::projection::{ProjectionKind, ProjectionMatrix};

#[derive(Parser)]
#[command(
    name = "stc",
    version,
    about = "Sparse ternary codes: coding-gain analysis, identification benchmarks, and an encode/index/query pipeline"
)]
struct Cli {
    /// Worker thread cap (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic coding-gain sweep over encoder thresholds, to CSV
    Gain(GainArgs),
    /// Identification benchmark comparing binary and ternary pipelines, to CSV
    Identify(IdentifyArgs),
    /// Sample a synthetic feature database to an STCF file
    Sample(SampleArgs),
    /// Perturb enrolled items into query feature vectors (STCF)
    Perturb(PerturbArgs),
    /// Project and threshold features into a code database (STCC)
    Encode(EncodeArgs),
    /// Build the inverted index (STCI) of a ternary code database
    Index(IndexArgs),
    /// Decode query features against an index, printing top-k JSON lines
    Query(QueryArgs),
}

#[derive(Args)]
struct GainArgs {
    /// SNR points in dB (comma-separated or repeated)
    #[arg(long = "snr-db", value_delimiter = ',', num_args = 1..)]
    snr_db: Vec<f64>,
    /// Explicit noise sigma, replacing the SNR list
    #[arg(long)]
    sigma_p: Option<f64>,
    /// Binary baseline code length
    #[arg(long)]
    lb: Option<usize>,
    /// Evaluate one encoder threshold instead of sweeping the grid
    #[arg(long)]
    lambda_x: Option<f64>,
    /// Threshold sweep grid as lo,hi,steps
    #[arg(long, value_name = "LO,HI,STEPS")]
    grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Full run configuration as JSON; explicit flags override its fields
    #[arg(long, value_name = "JSON")]
    config_json: Option<String>,
    /// Print the resolved configuration as JSON and exit
    #[arg(long)]
    show_config: bool,
    /// Output CSV path, - for stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Database size
    #[arg(long)]
    m: Option<usize>,
    /// Feature dimension
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "snr-db", value_delimiter = ',', num_args = 1..)]
    snr_db: Vec<f64>,
    /// Explicit noise sigma, replacing the SNR list
    #[arg(long)]
    sigma_p: Option<f64>,
    /// Binary baseline code length
    #[arg(long)]
    lb: Option<usize>,
    /// Ternary encoder threshold
    #[arg(long)]
    lambda_x: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decoder beam width
    #[arg(long)]
    k: Option<usize>,
    /// Projection family for the binary arm (the ternary arm matches its cost)
    #[arg(long, value_enum)]
    projection: Option<ProjArg>,
    /// Sparse projection parameter s >= 2
    #[arg(long)]
    sparsity: Option<f64>,
    /// Working-set cap in bytes
    #[arg(long)]
    mem_cap: Option<u64>,
    /// Measure decode wall time (runs trials sequentially; output varies run to run)
    #[arg(long)]
    timings: bool,
    /// Full run configuration as JSON; explicit flags override its fields
    #[arg(long, value_name = "JSON")]
    config_json: Option<String>,
    /// Print the resolved configuration as JSON and exit
    #[arg(long)]
    show_config: bool,
    /// Output CSV path, - for stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Feature dimension
    #[arg(long)]
    n: usize,
    /// Number of items
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output STCF path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    /// Enrolled features (STCF)
    #[arg(long)]
    features: PathBuf,
    /// Item ids to perturb (comma-separated or repeated)
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    ids: Vec<usize>,
    /// Query noise level in dB SNR
    #[arg(long)]
    snr_db: Option<f64>,
    /// Explicit noise sigma (overrides --snr-db; default 0)
    #[arg(long)]
    sigma_p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output STCF path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Input features (STCF)
    #[arg(long)]
    features: PathBuf,
    /// Reuse an existing projection (STCW) instead of generating one
    #[arg(long)]
    projection_file: Option<PathBuf>,
    /// Code length when generating a projection
    #[arg(long)]
    l: Option<usize>,
    /// Projection family when generating
    #[arg(long, value_enum, default_value_t = ProjArg::Sparse)]
    projection: ProjArg,
    /// Sparse projection parameter s >= 2
    #[arg(long, default_value_t = 2.0)]
    sparsity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Code kind to produce
    #[arg(long, value_enum, default_value_t = KindArg::Ternary)]
    kind: KindArg,
    /// Encoder threshold for ternary codes
    #[arg(long, default_value_t = 1.0)]
    lambda_x: f64,
    /// Also write the projection used (STCW)
    #[arg(long)]
    save_projection: Option<PathBuf>,
    /// Output STCC path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    /// Input code database (STCC, ternary)
    #[arg(long)]
    codes: PathBuf,
    /// Output STCI path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    /// Inverted index (STCI)
    #[arg(long)]
    index: PathBuf,
    /// Code database the index was built from (STCC)
    #[arg(long)]
    codes: PathBuf,
    /// Query feature vectors (STCF), one decode per row
    #[arg(long)]
    queries: PathBuf,
    /// Projection the database was encoded with (STCW)
    #[arg(long)]
    projection_file: PathBuf,
    /// Assumed query noise in dB SNR
    #[arg(long)]
    snr_db: Option<f64>,
    /// Explicit noise sigma (overrides --snr-db; default 0: clean queries)
    #[arg(long)]
    sigma_p: Option<f64>,
    /// Query threshold; optimized for the channel when omitted
    #[arg(long)]
    lambda_y: Option<f64>,
    /// Results per query
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProjArg {
    Dense,
    Sparse,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Binary,
    Ternary,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
        if let Err(e) = pool {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &StcError) -> u8 {
    match e {
        StcError::Grid(_) | StcError::Config(_) => 2,
        StcError::Capacity(_) => 3,
        StcError::Format(_) => 4,
        StcError::Shape { .. } | StcError::Kind { .. } | StcError::Empty(_) => 5,
        _ => 1,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gain(a) => cmd_gain(a),
        Cmd::Identify(a) => cmd_identify(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Perturb(a) => cmd_perturb(a),
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Index(a) => cmd_index(a),
        Cmd::Query(a) => cmd_query(a),
    }
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || StcError::Grid(format!("grid must be lo,hi,steps, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    GridSpec::new(lo, hi, steps)
}

fn base_config(config_json: Option<&str>) -> Result<ExperimentConfig> {
    match config_json {
        Some(j) => serde_json::from_str(j)
            .map_err(|e| StcError::Config(format!("config JSON does not parse: {e}"))),
        None => Ok(ExperimentConfig::desk_scale()),
    }
}

fn config_line(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

fn write_output(path: &Path, content: &str) -> Result<()> {
    if path.as_os_str() == "-" {
        std::io::stdout().write_all(content.as_bytes())?;
        Ok(())
    } else {
        fs::write(path, content)?;
        Ok(())
    }
}

fn channel_flags(snr_db: Option<f64>, sigma_p: Option<f64>) -> Result<ChannelSpec> {
    match (sigma_p, snr_db) {
        (Some(sp), _) => ChannelSpec::new(1.0, sp),
        (None, Some(snr)) => ChannelSpec::from_snr_db(snr),
        (None, None) => ChannelSpec::new(1.0, 0.0),
    }
}

fn cmd_gain(a: GainArgs) -> Result<()> {
    let mut cfg = base_config(a.config_json.as_deref())?;
    if !a.snr_db.is_empty() {
        cfg.snr_db_list = a.snr_db.clone();
        cfg.sigma_p_override = None;
    }
    if let Some(sp) = a.sigma_p {
        cfg.sigma_p_override = Some(sp);
    }
    if let Some(lb) = a.lb {
        cfg.l_b = lb;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = &a.grid {
        cfg.lambda_x_grid = parse_grid(grid)?;
    }
    cfg.validate()?;
    if a.show_config {
        println!("{}", config_line(&cfg));
        return Ok(());
    }
    let rows = match a.lambda_x {
        Some(lx) => run_gain_at(&cfg, lx)?,
        None => run_gain_sweep(&cfg)?,
    };
    write_output(&a.out, &gain_csv(&cfg, &rows))
}

fn gain_csv(cfg: &ExperimentConfig, rows: &[GainRow]) -> String {
    let mut out = format!("# {}\n", config_line(cfg));
    out.push_str(
        "snr_db,lambda_x,lambda_y_star,alpha,gamma,h_x_bits,mi_bits,gain,l_t_matched,scaled_mi_ternary,scaled_mi_binary\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{},{:.9},{:.9}\n",
            r.snr_db,
            r.lambda_x,
            r.lambda_y_star,
            r.alpha,
            r.gamma,
            r.h_x_bits,
            r.mi_bits,
            r.gain,
            r.l_t_matched,
            r.scaled_mi_ternary,
            r.scaled_mi_binary,
        ));
    }
    out
}

fn cmd_identify(a: IdentifyArgs) -> Result<()> {
    let mut cfg = base_config(a.config_json.as_deref())?;
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if !a.snr_db.is_empty() {
        cfg.snr_db_list = a.snr_db.clone();
        cfg.sigma_p_override = None;
    }
    if let Some(sp) = a.sigma_p {
        cfg.sigma_p_override = Some(sp);
    }
    if let Some(lb) = a.lb {
        cfg.l_b = lb;
    }
    if let Some(lx) = a.lambda_x {
        cfg.identify_lambda_x = lx;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    match (a.projection, a.sparsity) {
        (Some(ProjArg::Dense), _) => cfg.projection = ProjectionKind::DenseGaussian,
        (Some(ProjArg::Sparse), s) => {
            cfg.projection = ProjectionKind::SparseSigned { s: s.unwrap_or(2.0) }
        }
        (None, Some(s)) => cfg.projection = ProjectionKind::SparseSigned { s },
        (None, None) => {}
    }
    if let Some(cap) = a.mem_cap {
        cfg.mem_cap_bytes = cap;
    }
    cfg.timings = a.timings;
    cfg.validate()?;
    if a.show_config {
        println!("{}", config_line(&cfg));
        return Ok(());
    }
    let points = run_identification(&cfg)?;
    write_output(&a.out, &identify_csv(&cfg, &points))
}

fn identify_csv(cfg: &ExperimentConfig, points: &[TradeoffPoint]) -> String {
    let mut out = format!("# {}\n", config_line(cfg));
    out.push_str(
        "scheme,snr_db,lambda_x,lambda_y,l,memory_bits,complexity_ratio_analytic,complexity_ratio_measured,p_correct,ci_halfwidth,decode_wall_time_s\n",
    );
    for p in points {
        let wall = p.decode_wall_time_s.map_or(String::new(), |w| format!("{w:.9}"));
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
            p.scheme,
            p.snr_db,
            p.lambda_x,
            p.lambda_y,
            p.l,
            p.memory_bits,
            p.complexity_ratio_analytic,
            p.complexity_ratio_measured,
            p.p_correct,
            p.ci_halfwidth,
            wall,
        ));
    }
    out
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let spec = ChannelSpec::new(1.0, 0.0)?;
    let fm = sample_database(&spec, a.n, a.m, a.seed)?;
    write_features(&a.out, &fm)
}

fn cmd_perturb(a: PerturbArgs) -> Result<()> {
    let fm = read_features(&a.features)?;
    let spec = channel_flags(a.snr_db, a.sigma_p)?;
    let mut values = Vec::with_capacity(a.ids.len() * fm.dim);
    for (i, &id) in a.ids.iter().enumerate() {
        if id >= fm.rows {
            return Err(StcError::Config(format!(
                "id {id} is out of range for {} enrolled items",
                fm.rows
            )));
        }
        // stream tag 2 mirrors the library's query-noise stream
        values.extend(sample_query(fm.row(id), &spec, derive_seed(a.seed, 2, i as u64)));
    }
    let out = stc::channel::FeatureMatrix {
        rows: a.ids.len(),
        dim: fm.dim,
        values,
        seed: a.seed,
    };
    write_features(&a.out, &out)
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let fm = read_features(&a.features)?;
    let w = match &a.projection_file {
        Some(path) => {
            let w = read_projection(path)?;
            if w.n != fm.dim {
                return Err(StcError::Shape { expected: fm.dim, got: w.n });
            }
            w
        }
        None => {
            let l = a.l.ok_or_else(|| {
                StcError::Config("--l is required when no --projection-file is given".into())
            })?;
            let kind = match a.projection {
                ProjArg::Dense => ProjectionKind::DenseGaussian,
                ProjArg::Sparse => ProjectionKind::SparseSigned { s: a.sparsity },
            };
            ProjectionMatrix::generate(fm.dim, l, kind, a.seed)?
        }
    };
    // the channel snapshot on the in-memory database is advisory and not
    // persisted; encode is channel-free apart from it
    let spec = ChannelSpec::new(1.0, 0.0)?;
    let db = match a.kind {
        KindArg::Binary => EncodedDatabase::enroll_binary(&fm, &w, &spec)?,
        KindArg::Ternary => EncodedDatabase::enroll_ternary(&fm, &w, a.lambda_x, &spec)?,
    };
    if let Some(path) = &a.save_projection {
        write_projection(path, &w)?;
    }
    write_codes(&a.out, &db)
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let db = read_codes(&a.codes)?;
    let ix = build_index(&db)?;
    write_index(&a.out, &ix)
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let db = read_codes(&a.codes)?;
    if db.kind() != CodeKind::Ternary {
        return Err(StcError::Kind { expected: "ternary", got: db.kind().name() });
    }
    let ix = read_index(&a.index)?;
    if ix.items() != db.items() {
        return Err(StcError::Shape { expected: db.items(), got: ix.items() });
    }
    if ix.code_len() != db.code_len() {
        return Err(StcError::Shape { expected: db.code_len(), got: ix.code_len() });
    }
    let w = read_projection(&a.projection_file)?;
    if w.l != db.code_len() {
        return Err(StcError::Shape { expected: db.code_len(), got: w.l });
    }
    let queries = read_features(&a.queries)?;
    if queries.dim != w.n {
        return Err(StcError::Shape { expected: w.n, got: queries.dim });
    }

    let spec = channel_flags(a.snr_db, a.sigma_p)?;
    let alpha = alpha_of(db.lambda_x(), &spec)?;
    let lambda_y = match a.lambda_y {
        Some(ly) => ly,
        None => optimize_lambda_y(db.lambda_x(), &spec, &default_lambda_y_grid(&spec))?.0,
    };
    let p = transition_matrix(&ThresholdPair::new(db.lambda_x(), lambda_y)?, &spec)?;
    let v = voting_constants(&p, alpha)?;

    if a.k > ix.items() {
        eprintln!(
            "warning: k = {} exceeds the {} stored items; clamping to {}",
            a.k,
            ix.items(),
            ix.items()
        );
    }
    let mut acc = ScoreAccumulator::new(ix.items());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for row in 0..queries.rows {
        let y = ternarize(&w.project(queries.row(row))?, lambda_y)?;
        let r = sublinear_decode(&y, &ix, &v, a.k, &mut acc)?;
        for (rank, (id, score)) in r.top_k.iter().enumerate() {
            let score = serde_json::to_string(score).expect("scores are finite");
            writeln!(out, "{{\"rank\":{},\"id\":{},\"score\":{}}}", rank + 1, id, score)?;
        }
    }
    Ok(())
}
