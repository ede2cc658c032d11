//! `derivpq` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or IO error,
//! 4 internal invariant failure.

mod method;

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use derivpq::eval::{calibrate_r2, exact_nn, run_bench, write_rows_csv, BenchConfig, BenchRow};
use derivpq::quantizer::DEFAULT_OPQ_ITERS;
use derivpq::vecio::{load_model, read_vecs, save_model, Persist};
use derivpq::{
    AnnBackend, Dataset, ElementKind, Error, FlatIndex, GroundTruth, InvertedIndex, IvfParams,
    PqParams, ProductQuantizer, QueryParams,
};

use method::Method;

#[derive(Parser, Debug)]
#[command(
    name = "derivpq",
    version,
    about = "Product quantization with derived codebooks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact nearest neighbors of every query, written as ivecs.
    Groundtruth {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a quantizer with derived codebooks.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        pq: PqArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a database with a trained quantizer into a flat index.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an inverted index with residual codes.
    Index {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        pq: PqArgs,
        /// Number of cells.
        #[arg(long = "K", default_value_t = 256)]
        cells: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search a flat or inverted index.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Conventional)]
        mode: Mode,
        #[arg(long, default_value_t = 100)]
        r: usize,
        #[arg(long)]
        r2: Option<usize>,
        /// Cells probed (inverted index only).
        #[arg(long, default_value_t = 8)]
        ma: usize,
        /// Result file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, encode and time one or more methods, writing CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct PqArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    b: u32,
    #[arg(long)]
    bbar: u32,
    /// Learn a rotation before quantizing.
    #[arg(long)]
    opq: bool,
    #[arg(long, default_value_t = DEFAULT_OPQ_ITERS)]
    opq_iters: usize,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl PqArgs {
    fn params(&self) -> PqParams {
        PqParams::new(self.m, self.b, self.bbar)
            .with_seed(self.seed)
            .with_max_iters(self.max_iters)
    }

    fn outer_iters(&self) -> usize {
        if self.opq {
            self.opq_iters
        } else {
            0
        }
    }
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Ground truth ivecs; computed exactly when absent.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Methods such as `8x8`, `4x16` or `4x8,16` (derived bits, full bits).
    #[arg(long = "method", required = true)]
    methods: Vec<Method>,
    /// Recall depths.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    r: Vec<usize>,
    /// Fixed r2 for derived methods.
    #[arg(long, conflicts_with = "r2_grid")]
    r2: Option<usize>,
    /// Calibrate r2 over these ascending values.
    #[arg(long, value_delimiter = ',')]
    r2_grid: Option<Vec<usize>>,
    /// Use an inverted index with this many cells instead of a flat scan.
    #[arg(long = "K")]
    cells: Option<usize>,
    #[arg(long, default_value_t = 8)]
    ma: usize,
    #[arg(long)]
    opq: bool,
    #[arg(long, default_value_t = DEFAULT_OPQ_ITERS)]
    opq_iters: usize,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Run queries concurrently; timings then measure throughput only.
    #[arg(long)]
    parallel: bool,
    /// CSV file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Conventional,
    Derived,
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Lib(Error::Domain(_)) => 2,
            Failure::Lib(Error::Format { .. }) | Failure::Lib(Error::Io(_)) => 3,
            Failure::Lib(Error::Invariant(_)) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Config(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

fn element_kind(path: &Path) -> CliResult<ElementKind> {
    ElementKind::from_path(path).ok_or_else(|| {
        Failure::Config(format!(
            "{}: expected an .fvecs, .bvecs or .ivecs file",
            path.display()
        ))
    })
}

fn load_vectors(path: &Path) -> CliResult<Dataset> {
    require_file(path)?;
    let kind = element_kind(path)?;
    Ok(read_vecs(path, kind)?)
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn train_quantizer(
    train: &Dataset,
    params: &PqParams,
    outer_iters: usize,
) -> CliResult<ProductQuantizer> {
    params.check(train.dim())?;
    Ok(ProductQuantizer::train_opq(train, params, outer_iters)?)
}

fn cmd_groundtruth(base: &Path, queries: &Path, depth: usize, out: &Path) -> CliResult<()> {
    let base = load_vectors(base)?;
    let queries = load_vectors(queries)?;
    eprintln!("params: command=groundtruth depth={depth}");
    let gt = exact_nn(&base, &queries, depth)?;
    gt.write(out)?;
    Ok(())
}

fn cmd_train(train: &Path, pq: &PqArgs, out: &Path) -> CliResult<()> {
    let data = load_vectors(train)?;
    let params = pq.params();
    eprintln!(
        "params: command=train m={} b={} bbar={} opq={} opq_iters={} max_iters={} seed={}",
        pq.m,
        pq.b,
        pq.bbar,
        pq.opq,
        pq.outer_iters(),
        pq.max_iters,
        pq.seed
    );
    let model = train_quantizer(&data, &params, pq.outer_iters())?;
    let per_sub = model.subspace_distortion(&data)?;
    for (j, d) in per_sub.iter().enumerate() {
        println!("subspace {j}: mean distortion {d:.6}");
    }
    println!("total mean distortion {:.6}", per_sub.iter().sum::<f64>());
    model.verify_p1()?;
    println!(
        "P1 verified: {} subspaces x {} centroids, {} groups of {} each",
        model.m(),
        model.k(),
        model.derived_k(),
        model.k() / model.derived_k()
    );
    save_model(&model, out)?;
    Ok(())
}

fn cmd_encode(model: &Path, base: &Path, out: &Path) -> CliResult<()> {
    require_file(model)?;
    let pq: ProductQuantizer = load_model(model)?;
    let base = load_vectors(base)?;
    eprintln!("params: command=encode vectors={}", base.count());
    let index = FlatIndex::build(pq, &base)?;
    save_model(&index, out)?;
    Ok(())
}

fn cmd_index(train: &Path, base: &Path, pq: &PqArgs, cells: usize, out: &Path) -> CliResult<()> {
    let train = load_vectors(train)?;
    let base = load_vectors(base)?;
    let params = pq.params();
    params.check(train.dim())?;
    eprintln!(
        "params: command=index K={cells} m={} b={} bbar={} opq={} opq_iters={} max_iters={} seed={}",
        pq.m, pq.b, pq.bbar, pq.opq, pq.outer_iters(), pq.max_iters, pq.seed
    );
    let ivf = IvfParams {
        cells,
        pq: params,
        opq_iters: pq.outer_iters(),
    };
    let index = InvertedIndex::build(&train, &base, &ivf)?;
    save_model(&index, out)?;
    Ok(())
}

/// Either index kind, told apart by the container magic.
enum AnyIndex {
    Flat(FlatIndex),
    Ivf(InvertedIndex),
}

impl AnyIndex {
    fn load(path: &Path) -> CliResult<Self> {
        require_file(path)?;
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(&InvertedIndex::MAGIC) {
            Ok(AnyIndex::Ivf(InvertedIndex::from_bytes(&bytes)?))
        } else {
            Ok(AnyIndex::Flat(FlatIndex::from_bytes(&bytes)?))
        }
    }

    fn backend(&self) -> &dyn AnnBackend {
        match self {
            AnyIndex::Flat(i) => i,
            AnyIndex::Ivf(i) => i,
        }
    }
}

fn query_params(mode: Mode, r: usize, r2: Option<usize>, ma: usize) -> CliResult<QueryParams> {
    let params = match mode {
        Mode::Conventional => QueryParams::conventional(r),
        Mode::Derived => {
            let r2 = r2.ok_or_else(|| Failure::Config("derived mode needs --r2".into()))?;
            QueryParams::derived(r, r2)
        }
    }
    .with_ma(ma);
    params.validate()?;
    Ok(params)
}

fn cmd_query(
    index: &Path,
    queries: &Path,
    mode: Mode,
    r: usize,
    r2: Option<usize>,
    ma: usize,
    out: Option<&Path>,
) -> CliResult<()> {
    let index = AnyIndex::load(index)?;
    let queries = load_vectors(queries)?;
    let backend = index.backend();
    let ma = if matches!(index, AnyIndex::Flat(_)) {
        1
    } else {
        ma
    };
    let params = query_params(mode, r, r2, ma)?;
    if ma > backend.cells() {
        return Err(Failure::Config(format!(
            "--ma {ma} exceeds the {} cells of the index",
            backend.cells()
        )));
    }
    eprintln!(
        "params: command=query mode={mode:?} r={r} r2={} ma={ma}",
        r2.map_or("-".to_string(), |v| v.to_string())
    );
    let mut w = output(out)?;
    for (q, y) in queries.rows().enumerate() {
        let res = backend.search(y, &params)?;
        let ids: Vec<String> = res.neighbors.iter().map(|n| n.id.to_string()).collect();
        let dists: Vec<String> = res.neighbors.iter().map(|n| n.dist.to_string()).collect();
        writeln!(w, "{q}\t{}\t{}", ids.join(" "), dists.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let train = load_vectors(&args.train)?;
    let base = load_vectors(&args.base)?;
    let queries = load_vectors(&args.queries)?;
    if args.r.is_empty() || args.r.contains(&0) {
        return Err(Failure::Config("--r values must be positive".into()));
    }
    let depth = *args.r.iter().max().expect("not empty");
    if args.methods.iter().any(Method::is_derived) && args.r2.is_none() && args.r2_grid.is_none() {
        return Err(Failure::Config(
            "derived methods need --r2 or --r2-grid".into(),
        ));
    }
    if let Some(r2) = args.r2 {
        if r2 < depth {
            return Err(Failure::Config(format!("--r2 {r2} is below r = {depth}")));
        }
    }
    // Check every method before training anything.
    for m in &args.methods {
        m.pq_params(args.seed, args.max_iters).check(train.dim())?;
    }
    if let Some(k) = args.cells {
        if k == 0 || args.ma == 0 || args.ma > k {
            return Err(Failure::Config(format!(
                "--ma {} must be in 1..={k}",
                args.ma
            )));
        }
    }
    let truth = match &args.gt {
        Some(p) => {
            require_file(p)?;
            GroundTruth::read(p)?
        }
        None => exact_nn(&base, &queries, depth)?,
    };
    if truth.queries() < queries.count() {
        return Err(Failure::Config(
            "ground truth covers fewer queries than given".into(),
        ));
    }
    let outer = if args.opq { args.opq_iters } else { 0 };
    let ma = if args.cells.is_some() { args.ma } else { 1 };
    eprintln!(
        "params: command=bench methods={} K={} ma={ma} r={:?} r2={:?} r2_grid={:?} opq={} opq_iters={outer} max_iters={} seed={}",
        args.methods.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
        args.cells.map_or("flat".to_string(), |k| k.to_string()),
        args.r,
        args.r2,
        args.r2_grid,
        args.opq,
        args.max_iters,
        args.seed
    );

    // Methods sharing (m, b, bbar) share one trained index, so `4x16` and
    // `4x8,16` are timed on the same codes.
    let mut built: HashMap<(usize, u32, u32), Box<dyn AnnBackend>> = HashMap::new();
    let mut rows: Vec<BenchRow> = Vec::new();
    for method in &args.methods {
        let params = method.pq_params(args.seed, args.max_iters);
        let key = (params.m, params.bits, params.derived_bits);
        if let Entry::Vacant(slot) = built.entry(key) {
            info!("training {method}");
            let backend: Box<dyn AnnBackend> = match args.cells {
                None => Box::new(FlatIndex::build(
                    train_quantizer(&train, &params, outer)?,
                    &base,
                )?),
                Some(cells) => Box::new(InvertedIndex::build(
                    &train,
                    &base,
                    &IvfParams {
                        cells,
                        pq: params,
                        opq_iters: outer,
                    },
                )?),
            };
            slot.insert(backend);
        }
        let backend = built[&key].as_ref();
        let query = if method.is_derived() {
            let r2 = match (&args.r2_grid, args.r2) {
                (Some(grid), _) => {
                    let cal = calibrate_r2(backend, &queries, &truth, depth, ma, grid)?;
                    eprintln!(
                        "calibrated {method}: r2={} recall={:.4} reference={:.4}{}",
                        cal.r2,
                        cal.recall,
                        cal.reference_recall,
                        if cal.qualified {
                            ""
                        } else {
                            " (no grid value qualified)"
                        }
                    );
                    cal.r2
                }
                (None, Some(r2)) => r2,
                (None, None) => unreachable!("checked above"),
            };
            QueryParams::derived(depth, r2)
        } else {
            QueryParams::conventional(depth)
        }
        .with_ma(ma);
        let config = BenchConfig {
            method: method.to_string(),
            params: query,
            recall_at: args.r.clone(),
            parallel: args.parallel,
            dataset: args.base.display().to_string(),
            seed: args.seed,
        };
        let report = run_bench(backend, &queries, &truth, &config)?;
        eprintln!(
            "{method}: median total {:.1} us, mean total {:.1} us{}",
            report.median.total_us,
            report.mean.total_us,
            if report.throughput_only {
                " (throughput only)"
            } else {
                ""
            }
        );
        rows.extend(report.rows);
    }
    write_rows_csv(&rows, output(args.out.as_deref())?)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Groundtruth {
            base,
            queries,
            depth,
            out,
        } => cmd_groundtruth(base, queries, *depth, out),
        Command::Train { train, pq, out } => cmd_train(train, pq, out),
        Command::Encode { model, base, out } => cmd_encode(model, base, out),
        Command::Index {
            train,
            base,
            pq,
            cells,
            out,
        } => cmd_index(train, base, pq, *cells, out),
        Command::Query {
            index,
            queries,
            mode,
            r,
            r2,
            ma,
            out,
        } => cmd_query(index, queries, *mode, *r, *r2, *ma, out.as_deref()),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("DERIVPQ_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Config(format!("DERIVPQ_THREADS={v} is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("derivpq: {e}");
            ExitCode::from(e.code())
        }
    }
}
