// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rate_duality::harness::{self, exit_code, BenchConfig, Direction, Scenario, VerifyOptions};
use rate_duality::{BcReceivers, InterferenceMode, Parallelism, SystemDimensions};

#[derive(Parser)]
#[command(
    name = "rate-duality",
    version,
    about = "MAC/BC filter duality conversions and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sic,
    Linear,
}

impl From<Mode> for InterferenceMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sic => InterferenceMode::Sic,
            Mode::Linear => InterferenceMode::Linear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    MacToBc,
    BcToMac,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReceiversArg {
    Mmse,
    Given,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario with MAC precoders.
    Random {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        bs_antennas: usize,
        /// Antennas per user, one value or a comma-separated list.
        #[arg(long, value_delimiter = ',')]
        user_antennas: Vec<usize>,
        /// Streams per user, one value or a comma-separated list.
        #[arg(long, value_delimiter = ',')]
        streams: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        noise_var: f64,
        /// Total MAC transmit power.
        #[arg(long, default_value_t = 1.0)]
        power: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "sic")]
        mode: Mode,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert filters from one domain to the other.
    Convert {
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        /// Defaults to the mode stored in the scenario.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// BC receive filters used by bc-to-mac.
        #[arg(long, value_enum, default_value = "mmse")]
        bc_receivers: ReceiversArg,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the numerical checks on a scenario.
    Verify {
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 1e-9, allow_negative_numbers = true)]
        tol_sinr: f64,
        /// Include wall-clock timings in the report.
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time the covariance baseline against the filter duality.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        users: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        bs_antennas: usize,
        #[arg(long, default_value_t = 2)]
        user_antennas: usize,
        #[arg(long, default_value_t = 2)]
        streams: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Verification(String),
}

impl From<rate_duality::Error> for Failure {
    fn from(e: rate_duality::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn per_user(values: Vec<usize>, users: usize, what: &str) -> Result<Vec<usize>, Failure> {
    match values.len() {
        1 => Ok(vec![values[0]; users]),
        n if n == users => Ok(values),
        n => Err(Failure::Input(format!(
            "{what}: expected 1 or {users} values, got {n}"
        ))),
    }
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(Scenario::from_json_lenient(&text)?)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))
        }
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                Err(Failure::Input(format!("stdout: {e}")))
            }
            _ => Ok(()),
        },
    }
}

fn parallelism(flag: bool) -> Parallelism {
    if flag {
        Parallelism::Parallel
    } else {
        Parallelism::Serial
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Random {
            users,
            bs_antennas,
            user_antennas,
            streams,
            noise_var,
            power,
            seed,
            mode,
            output,
        } => {
            let dims = SystemDimensions {
                users,
                bs_antennas,
                user_antennas: per_user(user_antennas, users, "--user-antennas")?,
                streams: per_user(streams, users, "--streams")?,
                noise_var,
            };
            let scenario = harness::generate_random(dims, seed, power, mode.into())?;
            emit(output.as_deref(), &scenario.to_json())
        }
        Command::Convert {
            input,
            direction,
            mode,
            bc_receivers,
            parallel,
            output,
        } => {
            let scenario = read_scenario(&input)?;
            let mode = mode.map_or(scenario.mode, Into::into);
            let direction = match direction {
                DirectionArg::MacToBc => Direction::MacToBc,
                DirectionArg::BcToMac => Direction::BcToMac,
            };
            let receivers = match bc_receivers {
                ReceiversArg::Mmse => BcReceivers::Mmse,
                ReceiversArg::Given => BcReceivers::Given,
            };
            let out =
                harness::convert(&scenario, direction, mode, receivers, parallelism(parallel))?;
            emit(output.as_deref(), &out.to_json())
        }
        Command::Verify {
            input,
            mode,
            tol_sinr,
            timings,
            parallel,
            output,
        } => {
            if !(tol_sinr >= 0.0) {
                return Err(Failure::Input(format!(
                    "--tol-sinr must be nonnegative, got {tol_sinr}"
                )));
            }
            let scenario = read_scenario(&input)?;
            let mut opts = VerifyOptions::for_mode(mode.map_or(scenario.mode, Into::into));
            opts.tolerances.sinr = tol_sinr;
            opts.timings = timings;
            opts.parallelism = parallelism(parallel);
            let report = harness::verify(&scenario, &opts);
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            emit(output.as_deref(), &text)?;
            if report.passed {
                Ok(())
            } else {
                let names: Vec<&str> = report.failed_checks().map(|c| c.name.as_str()).collect();
                Err(Failure::Verification(format!(
                    "failed checks: [{}]; errors: [{}]",
                    names.join(", "),
                    report.errors.join("; ")
                )))
            }
        }
        Command::Bench {
            users,
            bs_antennas,
            user_antennas,
            streams,
            trials,
            seed,
            output,
        } => {
            let config = BenchConfig {
                users,
                bs_antennas,
                user_antennas,
                streams,
                trials,
                seed,
                ..BenchConfig::default()
            };
            let table = harness::run_bench(&config)?;
            emit(output.as_deref(), table.to_csv().trim_end())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => exit_code::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("{}", harness::error_json("input", &msg));
            exit_code::INPUT_ERROR
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("{}", harness::error_json("verification", &msg));
            exit_code::VERIFICATION_FAILED
        }
    };
    ExitCode::from(code as u8)
}
