use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use classaid_core::sim::{run, run_inproc, verify, AssertionFile, Scenario, SimError, Transcript};
use classaid_sim::HttpDriver;

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "classaid-sim", version, about = "Simulated classroom for a feedback session")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plays a scenario and writes transcript.json and metrics.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// `inproc`, or the base URL of a server started with `--manual-clock`.
        #[arg(long, default_value = "inproc")]
        endpoint: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// In-process only: keep the session log here for later replay.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, env = "CLASSAID_INSTRUCTOR_TOKEN")]
        token: Option<String>,
    },
    /// Checks a transcript against an assertion file.
    Verify {
        /// Transcript file, or the directory `run` wrote to.
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long = "assert")]
        assertions: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { scenario, endpoint, seed, out, log, token } => run_cmd(&scenario, &endpoint, seed, &out, log, token),
        Command::Verify { transcript, assertions } => verify_cmd(&transcript, &assertions),
    }
}

fn run_cmd(
    scenario: &std::path::Path,
    endpoint: &str,
    seed: u64,
    out: &std::path::Path,
    log: Option<PathBuf>,
    token: Option<String>,
) -> ExitCode {
    let result = Scenario::load(scenario).and_then(|sc| {
        log::info!("scenario {} with {} students, seed {seed}", sc.name, sc.students.len());
        if endpoint == "inproc" {
            run_inproc(&sc, seed, log)
        } else {
            let mut driver = HttpDriver::new(endpoint, sc.service.session.session_id.as_str(), token);
            run(&sc, &mut driver, seed)
        }
    });
    let transcript = match result {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                SimError::ScenarioInvalid(_) => EXIT_INVALID,
                SimError::EndpointUnreachable(_) => EXIT_UNREACHABLE,
                SimError::Driver(_) => EXIT_FAILED,
            });
        }
    };
    if let Err(e) = transcript.save(out) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::from(EXIT_FAILED);
    }
    let m = &transcript.metrics;
    println!(
        "{}: {} students, {} events, {} agent messages, {} alerts -> {}",
        transcript.scenario,
        transcript.students.len(),
        m.events_emitted,
        m.agent_messages,
        transcript.alerts.len(),
        out.display()
    );
    ExitCode::SUCCESS
}

fn verify_cmd(transcript: &std::path::Path, assertions: &std::path::Path) -> ExitCode {
    let t = match Transcript::load(transcript) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read transcript {}: {e}", transcript.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let file = match AssertionFile::load(assertions) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let report = verify(&t, &file.assertions);
    print!("{}", report.render());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}
