use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use powerstore::scenario::{self, bench_point, config_for, judge, render_bench, render_table, summarize, sweep, Overrides};
use powerstore::simnet::{self, write_ndjson, DelayModel, FaultDirective, SimConfig};
use powerstore::types::{Mode, PowKind};

#[derive(Parser)]
#[command(name = "powerstore", version, about = "Seeded PoWerStore simulations, checks and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep a scenario over seeds and check every run.
    Run {
        #[arg(long, default_value = "sw-baseline")]
        scenario: String,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Rerun one seed of a scenario and print its log digest and verdict.
    Replay {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Latency and cost per op over t and value size, in simulated ticks.
    Bench {
        #[arg(long, default_value = "mw-baseline")]
        scenario: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// List the built-in scenarios.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sw,
    Mw,
}

#[derive(Clone, Copy, ValueEnum)]
enum PowArg {
    Hash,
    Shamir,
}

#[derive(Args, Default)]
struct Knobs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pow: Option<PowArg>,
    /// Byzantine servers tolerated; bench sweeps 1..=3 when absent.
    #[arg(long)]
    t: Option<usize>,
    /// Bytes per value; bench sweeps 64 KiB, 256 KiB and 1 MiB when absent.
    #[arg(long)]
    value_size: Option<usize>,
    /// uniform:a,b or pareto:mean,var
    #[arg(long)]
    delay: Option<DelayModel>,
    /// Fault directive such as s1:corrupt_vec or w2:crash@40. Repeatable.
    #[arg(long = "fault")]
    faults: Vec<FaultDirective>,
    /// Config file in key = value form, replacing the scenario's base config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Newline-delimited records go here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Knobs {
    fn overrides(&self) -> Result<Overrides, String> {
        let config = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Some(SimConfig::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?)
            }
            None => None,
        };
        Ok(Overrides {
            mode: self.mode.map(|m| match m {
                ModeArg::Sw => Mode::Sw,
                ModeArg::Mw => Mode::Mw,
            }),
            pow: self.pow.map(|p| match p {
                PowArg::Hash => PowKind::Hash,
                PowArg::Shamir => PowKind::Shamir,
            }),
            t: self.t,
            value_size: self.value_size,
            delay: self.delay,
            faults: self.faults.clone(),
            config,
        })
    }

    /// The flags again, for a replay command line.
    fn flags(&self) -> String {
        let mut s = String::new();
        if let Some(m) = self.mode {
            s += match m {
                ModeArg::Sw => " --mode sw",
                ModeArg::Mw => " --mode mw",
            };
        }
        if let Some(p) = self.pow {
            s += match p {
                PowArg::Hash => " --pow hash",
                PowArg::Shamir => " --pow shamir",
            };
        }
        if let Some(t) = self.t {
            s += &format!(" --t {t}");
        }
        if let Some(v) = self.value_size {
            s += &format!(" --value-size {v}");
        }
        if let Some(d) = self.delay {
            s += &format!(" --delay {d}");
        }
        for f in &self.faults {
            s += &format!(" --fault {f}");
        }
        if let Some(p) = &self.config {
            s += &format!(" --config {}", p.display());
        }
        s
    }

    fn sink(&self) -> io::Result<Option<BufWriter<File>>> {
        self.out.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()
    }
}

fn lookup(name: &str) -> Result<scenario::Scenario, String> {
    scenario::scenario(name).ok_or_else(|| {
        let known: Vec<_> = scenario::scenarios().iter().map(|s| s.name).collect();
        format!("unknown scenario {name:?}; known: {}", known.join(", "))
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let io_err = |e: io::Error| e.to_string();
    match cli.command {
        Command::List => {
            for s in scenario::scenarios() {
                println!("{:<14} {}", s.name, s.about);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { scenario, seeds, first_seed, knobs } => {
            let sc = lookup(&scenario)?;
            let ov = knobs.overrides()?;
            config_for(&sc, &ov, first_seed).validate().map_err(|e| e.to_string())?;
            let results = sweep(&sc, &ov, first_seed, seeds);
            print!("{}", render_table(&sc, &results));
            if let Some(mut w) = knobs.sink().map_err(io_err)? {
                write_ndjson(&mut w, &results).and_then(|_| w.flush()).map_err(io_err)?;
            }
            match judge(&sc, &results) {
                Ok(()) => {
                    println!("ok");
                    Ok(ExitCode::SUCCESS)
                }
                Err((seed, why)) => {
                    println!("FAILED at seed {seed}: {why}");
                    println!("replay: powerstore replay --scenario {} --seed {seed}{}", sc.name, knobs.flags());
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Replay { scenario, seed, knobs } => {
            let sc = lookup(&scenario)?;
            let ov = knobs.overrides()?;
            let cfg = config_for(&sc, &ov, seed);
            let report = simnet::run(&cfg).map_err(|e| e.to_string())?;
            let faults = cfg.faults.iter().map(|f| f.to_string()).collect();
            let result = summarize(sc.name, &report, faults);
            print!("{}", cfg.to_text());
            println!("events {}", report.events.len());
            println!("log digest {}", result.log_digest);
            print!("{}", render_table(&sc, std::slice::from_ref(&result)));
            if let Some(mut w) = knobs.sink().map_err(io_err)? {
                write_ndjson(&mut w, &report.events).and_then(|_| w.flush()).map_err(io_err)?;
            }
            match &result.failure {
                None => {
                    println!("verdict ok");
                    Ok(ExitCode::SUCCESS)
                }
                Some(why) => {
                    println!("verdict FAILED: {why}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Bench { scenario, seeds, knobs } => {
            let sc = lookup(&scenario)?;
            let ov = knobs.overrides()?;
            let base = config_for(&sc, &Overrides { t: None, value_size: None, ..ov }, 0);
            let ts = knobs.t.map_or(vec![1, 2, 3], |t| vec![t]);
            let sizes = knobs.value_size.map_or(vec![64 << 10, 256 << 10, 1 << 20], |v| vec![v]);
            let mut rows = Vec::new();
            for &t in &ts {
                for &v in &sizes {
                    rows.push(bench_point(&base, t, v, seeds));
                }
            }
            print!("{}", render_bench(&rows));
            if let Some(mut w) = knobs.sink().map_err(io_err)? {
                write_ndjson(&mut w, &rows).and_then(|_| w.flush()).map_err(io_err)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
