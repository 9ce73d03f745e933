use std::fs;
use std::io::BufWriter;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use selfreg::harness::{compute_metrics, run_episode_for, sweep, validate_scenario, HarnessError, SweepRow};
use selfreg::Scenario;

#[derive(Debug, Parser)]
#[command(name = "selfreg", version, about = "Run and inspect self-regulation episodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one episode and write its trace and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the scenario horizon.
        #[arg(long)]
        steps: Option<u64>,
        /// Line-delimited JSON trace output.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics JSON output; printed to stdout when omitted.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run one episode per seed and write a CSV metrics table.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// `A..B` (exclusive) or `A..=B` (inclusive).
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// CSV output; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status for a failed command.
enum Failure {
    Validation(Vec<String>),
    Runtime(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Invalid(v) => Failure::Validation(v),
            HarnessError::Parse(e) => Failure::Validation(vec![e.to_string()]),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected A..B or A..=B, got `{s}`"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("bad seed `{a}`: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad seed `{b}`: {e}"))?;
    let end = if inclusive {
        b.checked_add(1).ok_or("seed range overflows")?
    } else {
        b
    };
    if end <= a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(a..end)
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    validate_scenario(&text).map_err(Failure::Validation)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_sweep<W: std::io::Write>(rows: &[SweepRow], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let roots: Vec<String> = rows
        .first()
        .map(|r| r.metrics.attribution.keys().cloned().collect())
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "seed",
        "ticks",
        "monomania_index",
        "allocation_entropy",
        "switch_count",
        "forced_switch_count",
        "need_floor",
        "mean_abs_valence",
        "abandonment_count",
        "idle_fraction",
    ]
    .map(String::from)
    .to_vec();
    header.extend(roots.iter().map(|r| format!("ticks_{r}")));
    w.write_record(&header)?;
    for row in rows {
        let m = &row.metrics;
        let mut rec = vec![
            row.seed.to_string(),
            m.ticks.to_string(),
            m.monomania_index.to_string(),
            m.allocation_entropy.to_string(),
            m.switch_count.to_string(),
            m.forced_switch_count.to_string(),
            m.need_floor.to_string(),
            m.mean_abs_valence.to_string(),
            m.abandonment_count.to_string(),
            m.idle_fraction.to_string(),
        ];
        rec.extend(
            roots
                .iter()
                .map(|r| m.attribution.get(r).copied().unwrap_or(0).to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario } => {
            load(&scenario)?;
            println!("ok");
        }
        Command::Run {
            scenario,
            seed,
            steps,
            trace,
            metrics,
        } => {
            let sc = load(&scenario)?;
            let t = run_episode_for(&sc, seed, steps.unwrap_or(sc.horizon))?;
            if let Some(path) = trace {
                t.write_jsonl(create(&path)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if t.is_empty() {
                return Err(Failure::Other(anyhow::anyhow!("zero steps requested")));
            }
            let m = compute_metrics(&t)?;
            let doc = serde_json::to_string_pretty(&m).context("serializing metrics")?;
            match metrics {
                Some(path) => {
                    fs::write(&path, doc + "\n").with_context(|| format!("writing {}", path.display()))?
                }
                None => println!("{doc}"),
            }
        }
        Command::Sweep {
            scenario,
            seeds,
            steps,
            out,
        } => {
            let sc = load(&scenario)?;
            let seeds: Vec<u64> = seeds.collect();
            let rows = sweep(&sc, &seeds, steps.unwrap_or(sc.horizon))?;
            match out {
                Some(path) => write_sweep(&rows, create(&path)?)?,
                None => write_sweep(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(v)) => {
            eprintln!("invalid scenario:");
            for line in v {
                eprintln!("  - {line}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..10").unwrap(), 0..10);
        assert_eq!(parse_seeds("3..=5").unwrap(), 3..6);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x..3").is_err());
        assert!(parse_seeds("7").is_err());
    }
}
