#![allow(clippy::result_large_err)]

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use setsdb_core::cloud::Fixture;
use setsdb_core::ontology::ArchitectureDocument;
use setsdb_core::query::{QueryOutput, QueryResult, RunOptions, System};
use setsdb_core::semantics::StreamDocument;
use setsdb_core::similarity::{ScanMode, SimilarityConfig};
use setsdb_core::store::{RetentionPolicy, Sample, SeriesKey};
use setsdb_core::Error;

#[derive(Parser)]
#[command(name = "setsdb", version, about = "Semantically annotated time-series store")]
struct Cli {
    /// Data directory.
    #[arg(long, global = true, env = "SETSDB_DATA", default_value = "setsdb-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a database.
    CreateDb {
        name: String,
        /// `raw_ms[;window_ms:aggregator:keep_ms|inf]...`
        #[arg(long)]
        retention: Option<String>,
    },
    /// Load (or replace) the ontology document.
    LoadOntology { file: PathBuf },
    /// Register the system architecture of a database.
    LoadArchitecture { db: String, file: PathBuf },
    /// Register one stream document or a JSON array of them.
    RegisterStream { file: PathBuf },
    /// Write line protocol from a file or stdin.
    Write {
        db: String,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run a SELECT, DERIVE or MATCH query.
    Query {
        text: String,
        /// Store derived results as streams with provenance.
        #[arg(long)]
        materialize: bool,
        /// Print the reasoning trace.
        #[arg(long)]
        explain: bool,
        #[arg(long)]
        json: bool,
        /// Similarity configuration (JSON).
        #[arg(long)]
        similarity: Option<PathBuf>,
        /// Score every stream instead of pruning with the filter tree.
        #[arg(long)]
        full_scan: bool,
    },
    /// Show the provenance of a stream.
    Lineage {
        key: String,
        /// Raw source nodes.
        #[arg(long, conflicts_with = "descendants")]
        sources: bool,
        /// Streams derived from this one.
        #[arg(long)]
        descendants: bool,
    },
    /// Print the provenance graph as JSON.
    ExportProvenance,
    /// Evict and roll up data older than the retention horizon.
    ApplyRetention {
        db: String,
        /// Current time in epoch milliseconds.
        #[arg(long)]
        now: i64,
    },
    /// Write the cloud fixture files into a directory.
    Fixture {
        dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4)]
        hosts: usize,
        #[arg(long, default_value_t = 60_000)]
        duration: i64,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn json(path: &Path) -> Result<serde_json::Value, Error> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn sample_line(s: &Sample) -> String {
    format!("{} {}", s.timestamp, s.value)
}

fn print_output(out: &mut impl Write, q: &QueryOutput, explain: bool) -> io::Result<()> {
    match &q.result {
        QueryResult::Samples { samples } => {
            for s in samples {
                writeln!(out, "{}", sample_line(s))?;
            }
        }
        QueryResult::Derived {
            samples,
            notes,
            materialized,
            ..
        } => {
            for s in samples {
                writeln!(out, "{}", sample_line(s))?;
            }
            for n in notes {
                writeln!(out, "# note: {n}")?;
            }
            if let Some(k) = materialized {
                writeln!(out, "# materialized {k}")?;
            }
        }
        QueryResult::Matches { matches, .. } => {
            for (i, m) in matches.iter().enumerate() {
                writeln!(out, "# {} {} score {}", i + 1, m.matched.key, m.matched.score)?;
                for s in &m.samples {
                    writeln!(out, "{}", sample_line(s))?;
                }
                for n in &m.notes {
                    writeln!(out, "# note: {n}")?;
                }
            }
        }
    }
    if explain {
        for line in &q.explanation {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut out = io::stdout().lock();
    let io_out = |e: io::Error| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    if let Command::Fixture {
        dir,
        seed,
        hosts,
        duration,
    } = &cli.command
    {
        let f = match seed {
            Some(seed) => Fixture::generate(*seed, *hosts, *duration)?,
            None => Fixture::scripted(),
        };
        f.write_files(dir)?;
        writeln!(out, "wrote fixture to {}", dir.display()).map_err(io_out)?;
        return Ok(());
    }

    let sys = System::open(&cli.data_dir)?;
    match cli.command {
        Command::CreateDb { name, retention } => {
            let policy = retention
                .map(|r| r.parse::<RetentionPolicy>())
                .transpose()?;
            sys.create_database(&name, policy)?;
        }
        Command::LoadOntology { file } => sys.load_ontology(&read(&file)?)?,
        Command::LoadArchitecture { db, file } => {
            let doc: ArchitectureDocument = serde_json::from_value(json(&file)?)?;
            sys.load_architecture(&db, doc)?;
        }
        Command::RegisterStream { file } => {
            let value = json(&file)?;
            let docs: Vec<StreamDocument> = if value.is_array() {
                serde_json::from_value(value)?
            } else {
                vec![serde_json::from_value(value)?]
            };
            for d in &docs {
                let key = sys.register_stream(d)?;
                writeln!(out, "{key}").map_err(io_out)?;
            }
        }
        Command::Write { db, file } => {
            let text = match file {
                Some(f) => read(&f)?,
                None => {
                    let mut s = String::new();
                    io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|source| Error::Io {
                            path: PathBuf::from("<stdin>"),
                            source,
                        })?;
                    s
                }
            };
            let n = sys.write_line_protocol(&db, &text)?;
            writeln!(out, "wrote {n} samples").map_err(io_out)?;
        }
        Command::Query {
            text,
            materialize,
            explain,
            json,
            similarity,
            full_scan,
        } => {
            let similarity = match similarity {
                Some(p) => SimilarityConfig::from_json(&read(&p)?)?,
                None => SimilarityConfig::default(),
            };
            let opts = RunOptions {
                materialize,
                similarity,
                scan: if full_scan {
                    ScanMode::Full
                } else {
                    ScanMode::Pruned
                },
            };
            let result = sys.query(&text, &opts)?;
            if json {
                let text = serde_json::to_string_pretty(&result)?;
                writeln!(out, "{text}").map_err(io_out)?;
            } else {
                print_output(&mut out, &result, explain).map_err(io_out)?;
            }
        }
        Command::Lineage {
            key,
            sources,
            descendants,
        } => {
            let key: SeriesKey = key.parse()?;
            let cat = sys.catalog();
            if sources {
                for n in cat.lineage_sources(&key)? {
                    let line = serde_json::to_string(n)?;
                    writeln!(out, "{line}").map_err(io_out)?;
                }
            } else {
                let keys = if descendants {
                    cat.lineage_descendants(&key)?
                } else {
                    cat.lineage_ancestors(&key)?
                };
                for k in keys {
                    writeln!(out, "{k}").map_err(io_out)?;
                }
            }
        }
        Command::ExportProvenance => {
            let text = serde_json::to_string_pretty(&sys.catalog().export_provenance())?;
            writeln!(out, "{text}").map_err(io_out)?;
        }
        Command::ApplyRetention { db, now } => {
            let handle = sys.store().database(&db)?;
            let n = sys.store().apply_retention(&handle, now)?;
            writeln!(out, "evicted {n} samples").map_err(io_out)?;
        }
        Command::Fixture { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_internal() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
