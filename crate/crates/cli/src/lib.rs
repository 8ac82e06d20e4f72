//! Command-line wiring for the key-semantics-graph similarity pipeline.
//!
//! Exit codes are stable: 0 ok, 2 input error, 3 empty eligible function
//! set, 4 signature parameter mismatch, 5 unknown function selection.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use ksg_core::asm::{parse_listing, parse_objdump, serialize_program, Program};
use ksg_core::diffing::{MinHashParams, SignatureFile};
use ksg_core::graph::to_dot;
use ksg_core::pipeline::{analyze_function, analyze_program, AnalysisStats};
use ksg_core::rank::{rank_all, report_to_csv, RankError};
use ksg_core::symexec::dump_record;
use ksg_core::Config;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable input or parse failure.
    Input(String),
    /// No eligible functions on one side of a diff.
    Empty(String),
    /// Incomparable signature parameters.
    Params(String),
    /// Unknown function selection in `inspect`.
    Selection(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Params(_) => 4,
            CliError::Selection(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m)
            | CliError::Empty(m)
            | CliError::Params(m)
            | CliError::Selection(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ksgdiff",
    version,
    about = "Function-level binary similarity via key-semantics graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Auto,
    Listing,
    Objdump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Symexec,
    Keys,
    Graph,
    Tokens,
    Signature,
}

/// Analysis knobs; every value is recorded verbatim in reports. Each flag
/// can also come from a `KSGDIFF_*` environment variable for CI use.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Drop functions with fewer basic blocks than this.
    #[arg(long = "min-blocks", default_value_t = 5, env = "KSGDIFF_MIN_BLOCKS")]
    pub min_blocks: usize,
    /// MinHash signature length.
    #[arg(long = "k", default_value_t = 128, env = "KSGDIFF_K")]
    pub k: usize,
    /// Shingle width over the token stream (1 = token set).
    #[arg(long = "shingle", default_value_t = 1, env = "KSGDIFF_SHINGLE")]
    pub shingle: usize,
    /// Master seed of the hash family.
    #[arg(long = "seed", default_value_t = 0, env = "KSGDIFF_SEED")]
    pub seed: u64,
    /// Candidates kept per query function.
    #[arg(long = "top-n", default_value_t = 10, env = "KSGDIFF_TOP_N")]
    pub top_n: usize,
    /// Rewrite budget of the expression simplifier.
    #[arg(long = "rule-budget", default_value_t = 1000, env = "KSGDIFF_RULE_BUDGET")]
    pub rule_budget: u32,
}

impl ConfigArgs {
    fn to_config(&self) -> Result<Config, CliError> {
        let config = Config {
            min_blocks: self.min_blocks,
            minhash_k: self.k,
            shingle_w: self.shingle,
            master_seed: self.seed,
            top_n: self.top_n,
            rule_budget: self.rule_budget,
        };
        if config.min_blocks == 0
            || config.minhash_k == 0
            || config.shingle_w == 0
            || config.top_n == 0
            || config.rule_budget == 0
        {
            return Err(CliError::Input(
                "configuration values must be positive".into(),
            ));
        }
        Ok(config)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse disassembly (objdump text or JSON listing) into a normalized
    /// listing document.
    Ingest {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
        format: InputFormat,
        /// Output path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rank every query function against every target function.
    Diff {
        /// Query listing (or precomputed signature file).
        query: PathBuf,
        /// Target listing (or precomputed signature file).
        target: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Emit the full report as JSON (default).
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        /// Emit one CSV row per ranking entry instead of JSON.
        #[arg(long)]
        csv: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Precompute and store a signature index for a listing.
    Sign {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Dump one pipeline stage for a single function.
    Inspect {
        input: PathBuf,
        /// Function name or 0x-prefixed entry address.
        #[arg(long = "function")]
        function: String,
        #[arg(long = "stage", value_enum)]
        stage: Stage,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_program(
    path: &Path,
    format: InputFormat,
    err: &mut dyn Write,
) -> Result<Program, CliError> {
    let text = read_input(path)?;
    let format = match format {
        InputFormat::Auto => {
            if text.trim_start().starts_with('{') {
                InputFormat::Listing
            } else {
                InputFormat::Objdump
            }
        }
        other => other,
    };
    match format {
        InputFormat::Listing => parse_listing(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        InputFormat::Objdump => {
            let (mut program, warnings) = parse_objdump(&text);
            for w in warnings {
                let _ = writeln!(err, "warning: {}: {w}", path.display());
            }
            if program.binary.is_empty() {
                program.binary = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
            }
            Ok(program)
        }
        InputFormat::Auto => unreachable!(),
    }
}

enum DiffInput {
    Signatures(SignatureFile),
    Listing(Program),
}

fn load_diff_input(path: &Path, err: &mut dyn Write) -> Result<DiffInput, CliError> {
    let text = read_input(path)?;
    if text.trim_start().starts_with('{') {
        // A signature file has "params" and slot-bearing "functions".
        if let Ok(sig) = serde_json::from_str::<SignatureFile>(&text) {
            return Ok(DiffInput::Signatures(sig));
        }
        return parse_listing(&text)
            .map(DiffInput::Listing)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
    }
    load_program(path, InputFormat::Objdump, err).map(DiffInput::Listing)
}

fn write_output(
    data: &str,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, data)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            out.write_all(data.as_bytes())
                .map_err(|e| CliError::Input(format!("cannot write output: {e}")))
        }
    }
}

/// Signatures plus stats for one side of a diff.
struct DiffSide {
    signatures: SignatureFile,
    stats: AnalysisStats,
}

fn prepare_side(
    input: DiffInput,
    config: &Config,
    requested: MinHashParams,
) -> Result<DiffSide, CliError> {
    match input {
        DiffInput::Signatures(sig) => {
            if sig.params != requested && requested != MinHashParams::default() {
                return Err(CliError::Params(format!(
                    "precomputed signatures use params {:?} but {:?} were requested",
                    sig.params, requested
                )));
            }
            Ok(DiffSide {
                signatures: sig,
                stats: AnalysisStats::default(),
            })
        }
        DiffInput::Listing(program) => {
            let analysis = analyze_program(&program, config);
            Ok(DiffSide {
                signatures: analysis.signature_file(config),
                stats: analysis.stats.clone(),
            })
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            input,
            format,
            output,
        } => {
            let program = load_program(&input, format, err)?;
            let instructions: usize = program
                .functions
                .iter()
                .map(|f| f.instructions.len())
                .sum();
            let listing = serialize_program(&program);
            write_output(&listing, output.as_deref(), out)?;
            let _ = writeln!(
                err,
                "{}: {} function(s), {} instruction(s)",
                program.binary,
                program.functions.len(),
                instructions
            );
            Ok(())
        }
        Command::Sign {
            input,
            config,
            output,
        } => {
            let config = config.to_config()?;
            let program = load_program(&input, InputFormat::Auto, err)?;
            let analysis = analyze_program(&program, &config);
            let sig_file = analysis.signature_file(&config);
            let json = serde_json::to_string_pretty(&sig_file)
                .expect("signature file serializes");
            write_output(&json, output.as_deref(), out)?;
            let _ = writeln!(
                err,
                "{}: signed {} of {} function(s)",
                analysis.binary, analysis.stats.analyzed_functions, analysis.stats.total_functions
            );
            Ok(())
        }
        Command::Diff {
            query,
            target,
            config,
            json: _,
            csv,
            output,
        } => {
            let mut config = config.to_config()?;
            let requested = config.minhash_params();
            let query_input = load_diff_input(&query, err)?;
            let target_input = load_diff_input(&target, err)?;

            // Precomputed signatures fix the hash parameters for both sides.
            for side in [&query_input, &target_input] {
                if let DiffInput::Signatures(sig) = side {
                    config.minhash_k = sig.params.k;
                    config.shingle_w = sig.params.w;
                    config.master_seed = sig.params.seed;
                }
            }
            let query_side = prepare_side(query_input, &config, requested)?;
            let target_side = prepare_side(target_input, &config, requested)?;

            if query_side.signatures.functions.is_empty() {
                return Err(CliError::Empty(format!(
                    "no functions with at least {} basic blocks in {}",
                    config.min_blocks,
                    query.display()
                )));
            }
            let report = rank_all(
                &query_side.signatures,
                &target_side.signatures,
                &config,
                query_side.stats,
                target_side.stats,
            )
            .map_err(|e| match e {
                RankError::EmptyTarget => CliError::Empty(format!(
                    "no functions with at least {} basic blocks in {}",
                    config.min_blocks,
                    target.display()
                )),
                RankError::Signature(e) => CliError::Params(e.to_string()),
            })?;

            let rendered = if csv {
                report_to_csv(&report)
            } else {
                let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
                s.push('\n');
                s
            };
            write_output(&rendered, output.as_deref(), out)
        }
        Command::Inspect {
            input,
            function,
            stage,
            config,
        } => {
            let config = config.to_config()?;
            let program = load_program(&input, InputFormat::Auto, err)?;
            let selector_entry = function
                .strip_prefix("0x")
                .and_then(|hex| u64::from_str_radix(hex, 16).ok());
            let f = program
                .functions
                .iter()
                .find(|f| {
                    f.name.as_deref() == Some(function.as_str())
                        || Some(f.entry) == selector_entry
                })
                .ok_or_else(|| {
                    let available: Vec<String> = program
                        .functions
                        .iter()
                        .map(|f| match &f.name {
                            Some(n) => format!("{n} (0x{:x})", f.entry),
                            None => format!("0x{:x}", f.entry),
                        })
                        .collect();
                    CliError::Selection(format!(
                        "unknown function `{function}`; available: {}",
                        available.join(", ")
                    ))
                })?;

            let analysis = analyze_function(f, &config);
            let text = match stage {
                Stage::Symexec => dump_record(f, &analysis.record),
                Stage::Keys => {
                    let mut s = String::new();
                    for (addr, key) in &analysis.keys {
                        s.push_str(&format!("{addr:x}: {key}\n"));
                    }
                    s
                }
                Stage::Graph => to_dot(&analysis.graph),
                Stage::Tokens => {
                    let mut s = String::new();
                    for t in &analysis.tokens {
                        s.push_str(t);
                        s.push('\n');
                    }
                    s
                }
                Stage::Signature => {
                    let mut s = serde_json::to_string_pretty(&analysis.signature)
                        .expect("signature serializes");
                    s.push('\n');
                    s
                }
            };
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::Input(format!("cannot write output: {e}")))?;
            for d in &analysis.diagnostics {
                let _ = writeln!(err, "note: {d}");
            }
            Ok(())
        }
    }
}
