use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lazyslot::harness::{self, Budget, DictKind, HarnessError, RunConfig, REPORT_CSV_HEADER};
use lazyslot::slot_model::trace_file::{self, TraceHeader};
use lazyslot::slot_model::default_word_bits;
use lazyslot::transfer_tree::{self, TreeSpec};
use lazyslot::workload::{self, OperationSequence};
use lazyslot::xor_demo;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "lazyslot", version, about = "Slot-model dictionary experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random insert/delete/query operation stream.
    Gen {
        #[arg(short = 'n')]
        n: u64,
        #[arg(short = 'U')]
        universe: u64,
        /// Attach values drawn from [0, V) to inserts.
        #[arg(short = 'V')]
        values: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_queries: bool,
        #[arg(short = 'o')]
        output: Option<PathBuf>,
    },
    /// Run a dictionary over an operation stream and report its costs.
    Run {
        /// lazysort, linear-probe, eager or kv-reduction.
        dict: String,
        /// Operation stream; generated from -n/-U/--seed when omitted.
        input: Option<PathBuf>,
        #[arg(short = 'n')]
        n: Option<u64>,
        #[arg(short = 'U')]
        universe: Option<u64>,
        /// Split factor for kv-reduction (key part ranges over U / V).
        #[arg(short = 'V', default_value_t = 16)]
        split_v: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, conflicts_with = "wasted_bits_k")]
        budget_bits: Option<u64>,
        /// Budget n * ceil(log^(k) n) bits.
        #[arg(long)]
        wasted_bits_k: Option<u32>,
        #[arg(long)]
        no_queries: bool,
        /// Check every query against a reference set.
        #[arg(long)]
        verify: bool,
        /// Write the slot trace of the meta-operations here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(short = 'o')]
        output: Option<PathBuf>,
    },
    /// Transfer-tree accounting of a trace file.
    Tree {
        trace: PathBuf,
        /// Number of leaves; defaults to n from the trace header.
        #[arg(short = 'n')]
        n: Option<u64>,
        #[arg(short = 'k', default_value_t = 1)]
        k: u32,
        #[arg(short = 'c', default_value_t = 1.0)]
        c: f64,
        /// Use a uniform tree with this branching instead of the formula.
        #[arg(long)]
        uniform: Option<u64>,
        /// Writes <prefix>.nodes.csv and <prefix>.levels.csv; otherwise the
        /// level table goes to stdout.
        #[arg(short = 'o')]
        output: Option<PathBuf>,
    },
    /// Sweep (n, k, seed) for the budget/moves trade-off.
    Sweep {
        #[arg(short = 'n', value_delimiter = ',', required = true)]
        n: Vec<u64>,
        #[arg(short = 'k', value_delimiter = ',', required = true)]
        k: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        no_queries: bool,
        /// Whitespace-separated columns with a '#' header.
        #[arg(long)]
        gnuplot: bool,
        #[arg(short = 'o')]
        output: Option<PathBuf>,
    },
    /// Two alternative updates on the three-cell XOR structure.
    XorDemo {
        #[arg(short = 'U', default_value_t = 1000)]
        universe: u64,
        #[arg(long, default_value_t = 3500)]
        x2: u64,
        #[arg(long, default_value_t = 4200)]
        x3: u64,
        #[arg(long, default_value_t = 1100)]
        x1d: u64,
        #[arg(long, default_value_t = 500)]
        x1a: u64,
        #[arg(long, default_value_t = 2500)]
        x1b: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Verify(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Verify(_) => EXIT_VERIFY,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Verify(m) | Failure::Io(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Mismatch { .. } => Failure::Verify(e.to_string()),
            HarnessError::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_at(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen { n, universe, values, seed, no_queries, output } => {
            let seq = workload::generate(n, universe, seed, !no_queries, values).map_err(|e| Failure::Usage(e.to_string()))?;
            let mut out = open_output(output.as_deref())?;
            seq.write_to(&mut out)?;
            out.flush()?;
            Ok(())
        }
        Command::Run {
            dict,
            input,
            n,
            universe,
            split_v,
            seed,
            budget_bits,
            wasted_bits_k,
            no_queries,
            verify,
            trace_out,
            format,
            output,
        } => {
            let kind: DictKind = dict.parse()?;
            let seq = load_stream(input.as_deref(), n, universe, seed, !no_queries)?;
            let budget = match (budget_bits, wasted_bits_k) {
                (Some(b), _) => Budget::Bits(b),
                (None, Some(k)) => Budget::WastedBitsK(k),
                (None, None) => Budget::default(),
            };
            let cfg = RunConfig { kind, budget, split_v, verify, ..RunConfig::new(kind) };
            let report = match trace_out {
                Some(path) => {
                    let mut out = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
                    let header = TraceHeader { n: seq.n, cells: seq.n, word_bits: default_word_bits(seq.universe) };
                    trace_file::write_header(&mut out, &header)?;
                    let mut sink = |chunk: Vec<_>| trace_file::write_slot_touches(&mut out, &chunk);
                    let report = harness::run(&seq, &cfg, Some(&mut sink))?;
                    out.flush().map_err(io_at(&path))?;
                    report
                }
                None => harness::run(&seq, &cfg, None)?,
            };
            let mut out = open_output(output.as_deref())?;
            match format {
                Format::Json => writeln!(out, "{}", report.json_line())?,
                Format::Csv => writeln!(out, "{REPORT_CSV_HEADER}\n{}", report.csv_row())?,
            }
            out.flush()?;
            Ok(())
        }
        Command::Tree { trace, n, k, c, uniform, output } => tree(&trace, n, k, c, uniform, output.as_deref()),
        Command::Sweep { n, k, seeds, no_queries, gnuplot, output } => {
            let rows = harness::sweep(&n, &k, &seeds, !no_queries);
            let mut out = open_output(output.as_deref())?;
            harness::write_sweep(&mut out, &rows, gnuplot)?;
            out.flush()?;
            Ok(())
        }
        Command::XorDemo { universe, x2, x3, x1d, x1a, x1b } => {
            let report = xor_demo::run_demo(universe, x2, x3, x1d, x1a, x1b).map_err(|e| Failure::Usage(e.to_string()))?;
            let mut out = open_output(None)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
            out.flush()?;
            let expected_a = ["C1", "C2"];
            let expected_b = ["C2", "C3"];
            if report.probes_a != expected_a || report.probes_b != expected_b || !report.c2_identical {
                return Err(Failure::Verify("probe sets or shared cell contents differ from the expected layout".into()));
            }
            Ok(())
        }
    }
}

fn load_stream(
    input: Option<&Path>,
    n: Option<u64>,
    universe: Option<u64>,
    seed: u64,
    include_queries: bool,
) -> Result<OperationSequence, Failure> {
    match input {
        Some(path) => {
            let file = File::open(path).map_err(io_at(path))?;
            OperationSequence::read_from(BufReader::new(file)).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
        }
        None => {
            let n = n.ok_or_else(|| Failure::Usage("give an operation stream or -n".into()))?;
            let universe = universe.unwrap_or(n * n);
            workload::generate(n, universe, seed, include_queries, None).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

fn tree(path: &Path, n: Option<u64>, k: u32, c: f64, uniform: Option<u64>, output: Option<&Path>) -> Result<(), Failure> {
    let file = File::open(path).map_err(io_at(path))?;
    let (header, records) = trace_file::read_trace(BufReader::new(file)).map_err(|e| match e {
        trace_file::TraceFileError::Io(io) => Failure::Io(io.to_string()),
        other => Failure::Usage(format!("{}: {other}", path.display())),
    })?;
    let leaves = n.unwrap_or(header.n);
    let spec = match uniform {
        Some(b) => TreeSpec::uniform(leaves, b),
        None => TreeSpec::build(leaves, k, c),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let touches: Vec<(u64, u64)> = records.iter().map(|r| (r.time, r.address)).collect();
    let acc = transfer_tree::account(&spec, &touches).map_err(|e| Failure::Usage(e.to_string()))?;
    let rows = transfer_tree::level_summary(&acc);

    let deduped: HashSet<(u64, u64)> = touches.iter().copied().collect();
    let addresses: HashSet<u64> = touches.iter().map(|&(_, a)| a).collect();
    let expected = (deduped.len() - addresses.len()) as u64;
    let total_cost: u64 = rows.iter().map(|r| r.sum_cost).sum();
    let partition = rows.iter().all(|r| r.sum_probe == touches.len() as u64);
    eprintln!(
        "conservation: sum cost = {total_cost}, deduplicated touches - addresses = {} - {} = {expected}; per-level probe sums {}",
        deduped.len(),
        addresses.len(),
        if partition { "all equal" } else { "DIFFER" }
    );

    match output {
        Some(prefix) => {
            let with_ext = |ext: &str| {
                let mut p = prefix.as_os_str().to_owned();
                p.push(ext);
                PathBuf::from(p)
            };
            let nodes_path = with_ext(".nodes.csv");
            let mut nodes = BufWriter::new(File::create(&nodes_path).map_err(io_at(&nodes_path))?);
            transfer_tree::write_nodes_csv(&mut nodes, &acc)?;
            nodes.flush()?;
            let levels_path = with_ext(".levels.csv");
            let mut levels = BufWriter::new(File::create(&levels_path).map_err(io_at(&levels_path))?);
            transfer_tree::write_summary_csv(&mut levels, &rows)?;
            levels.flush()?;
        }
        None => {
            let mut out = open_output(None)?;
            transfer_tree::write_summary_csv(&mut out, &rows)?;
            out.flush()?;
        }
    }
    if total_cost != expected || !partition {
        return Err(Failure::Verify("accounting identities do not hold".into()));
    }
    Ok(())
}
