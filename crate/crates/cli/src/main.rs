use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use netabs_core::external::serve;
use netabs_core::model::{build_room_network, RoomNetworkParams};
use netabs_core::scenario::SampleSizeReport;
use netabs_core::{Pipeline, PipelineConfig};

const DEFAULT_OUT: &str = "netabs-out";

#[derive(Parser, Debug)]
#[command(
    name = "netabs",
    version,
    about = "Data-driven symbolic abstractions for networks of black-box subsystems"
)]
struct Cli {
    /// Worker threads for abstraction enumeration and LP row generation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full pipeline with the case-study sample parameters (eps = 0.001, beta = 1e-4, c = 7).
    Casestudy(RunArgs),
    /// Full pipeline: sample, abstract, certify, compose, synthesize, simulate, report.
    Run(RunArgs),
    /// Draw the scenario samples of every subsystem.
    Sample(RunArgs),
    /// Enumerate the finite abstraction of every subsystem.
    Abstract(RunArgs),
    /// Solve the scenario program of every subsystem and write certificates.
    Certify(RunArgs),
    /// Compose the certificates over the network.
    Compose(RunArgs),
    /// Solve the safety game on every abstraction.
    Synthesize(RunArgs),
    /// Simulate the refined controllers in closed loop.
    Simulate(RunArgs),
    /// Summarize the artifacts present in the output directory.
    Report(RunArgs),
    /// Write a configuration file for a preset.
    Init {
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long, default_value_t = 5)]
        rooms: usize,
        /// Destination; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Minimal sample count for the given chance-constraint parameters.
    SampleSize {
        /// One or more eps values; one per decision-variable group.
        #[arg(long, num_args = 1.., required = true)]
        eps: Vec<f64>,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1)]
        c: usize,
        /// Externally reported count to compare against (776 for the case study).
        #[arg(long)]
        reference: Option<usize>,
    },
    /// Answer oracle requests for one room of the benchmark network on stdin/stdout.
    OracleServe {
        #[arg(long, default_value_t = 0)]
        room: usize,
        #[arg(long, default_value_t = 100)]
        rooms: usize,
        /// Reject requests outside the room's state and disturbance boxes.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Desk,
    CaseStudy,
}

impl Preset {
    fn config(self, rooms: usize) -> PipelineConfig {
        match self {
            Preset::Desk => PipelineConfig::desk(rooms),
            Preset::CaseStudy => PipelineConfig::case_study(rooms),
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Configuration file; the desk preset when absent.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (default: `output_dir` of the config, else `netabs-out`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of subsystems.
    #[arg(long)]
    rooms: Option<usize>,
}

impl RunArgs {
    fn resolve(&self, preset: Preset) -> Result<(PipelineConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => preset.config(self.rooms.unwrap_or(5)),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.rooms {
            cfg.system.set_subsystem_count(m);
        }
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok((cfg, out))
    }

    fn pipeline(&self, preset: Preset) -> Result<Pipeline> {
        let (cfg, out) = self.resolve(preset)?;
        info!("writing to {}", out.display());
        Ok(Pipeline::new(cfg, out)?)
    }
}

fn finish(p: &mut Pipeline) -> Result<()> {
    let summary = p.report()?;
    print!("{}", summary.render());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    match cli.command {
        Command::Casestudy(a) => {
            let mut p = a.pipeline(Preset::CaseStudy)?;
            p.run()?;
            finish(&mut p)
        }
        Command::Run(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            p.run()?;
            finish(&mut p)
        }
        Command::Sample(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            let n = p.sample()?.iter().map(|b| b.len()).sum::<usize>();
            println!("wrote {n} samples under {}", p.layout().root().display());
            Ok(())
        }
        Command::Abstract(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            for (i, f) in p.abstraction()?.iter().enumerate() {
                println!(
                    "subsystem {i}: {} states, {} inputs, {} disturbances",
                    f.states(),
                    f.inputs(),
                    f.disturbances()
                );
            }
            Ok(())
        }
        Command::Certify(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            for (i, c) in p.certify()?.iter().enumerate() {
                println!(
                    "subsystem {i}: xi* = {}, margin = {}, {}",
                    c.decision.xi,
                    c.margin,
                    if c.certified {
                        "certified"
                    } else {
                        "NOT certified"
                    }
                );
            }
            Ok(())
        }
        Command::Compose(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            let r = p.compose()?;
            println!(
                "composed: gamma = {}, mu = {}, theta = {}, eps_tilde = {}, confidence = {}",
                r.composed.gamma,
                r.composed.mu,
                r.composed.theta,
                r.eps_tilde,
                r.composed.confidence
            );
            Ok(())
        }
        Command::Synthesize(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            for (i, c) in p.synthesize()?.iter().enumerate() {
                println!(
                    "subsystem {i}: {} of {} cells winning",
                    c.winning_count(),
                    c.winning.len()
                );
            }
            Ok(())
        }
        Command::Simulate(a) => {
            let mut p = a.pipeline(Preset::Desk)?;
            let r = p.simulate()?;
            println!(
                "recorded run {}, {} center runs, {} failures",
                if r.recorded_safe { "safe" } else { "UNSAFE" },
                r.center_runs,
                r.center_failures
            );
            Ok(())
        }
        Command::Report(a) => finish(&mut a.pipeline(Preset::Desk)?),
        Command::Init {
            preset,
            rooms,
            output,
        } => {
            let text = preset.config(rooms).to_toml()?;
            match output {
                Some(p) => std::fs::write(&p, text)
                    .with_context(|| format!("cannot write {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::SampleSize {
            eps,
            beta,
            c,
            reference,
        } => {
            print!(
                "{}",
                SampleSizeReport::new(&eps, beta, c, reference)?.render()
            );
            Ok(())
        }
        Command::OracleServe {
            room,
            rooms,
            strict,
        } => {
            let net = build_room_network(&RoomNetworkParams::with_rooms(rooms))?;
            let Some(sys) = net.rooms.get(room) else {
                bail!("room {room} out of range for {rooms} rooms");
            };
            let stdin = io::stdin();
            serve(
                sys,
                stdin.lock(),
                BufWriter::new(io::stdout().lock()),
                strict,
            )?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
