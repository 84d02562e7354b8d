mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;

/// Multi-factor quadratic Hobson–Rogers volatility engine.
#[derive(Debug, Parser)]
#[command(name = "qhr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory (one file per table); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `csv` at full precision or `table` at display precision.
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = qhr::mc::DEFAULT_STEPS_PER_YEAR)]
    pub steps_per_year: usize,
    /// Disable antithetic pairing.
    #[arg(long)]
    pub no_antithetic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check admissibility and stationarity clause by clause.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Diagnostics table for one or more models.
    Diagnostics {
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
        /// Also list the eigenvalues of the second-order block.
        #[arg(long)]
        eigen: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Forward-volatility curves and their envelope.
    Curves {
        #[arg(long)]
        model: PathBuf,
        /// Initial offsets, comma separated; repeat for several curves.
        #[arg(long, allow_hyphen_values = true)]
        y0: Vec<String>,
        /// Horizons: `a,b,c` or `start:stop:n`.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Principal components of the forward-variance curve.
    Pca {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Stationary density and CDF of a one-factor model.
    Density {
        #[arg(long)]
        model: PathBuf,
        /// Offsets `y`; defaults to ±6 stationary standard deviations.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo option prices and implied volatilities.
    Smile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y0: Option<String>,
        #[arg(long, default_value = "0.25,0.5,1")]
        maturities: String,
        /// Log-moneyness nodes.
        #[arg(long, allow_hyphen_values = true, default_value = "-0.2:0.2:9")]
        grid: String,
        /// Read the grid as `log K / √T`.
        #[arg(long)]
        normalized: bool,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// ATM volatility and skew term structures.
    Atm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y0: Vec<String>,
        #[arg(long, default_value = "0.1,0.25,0.5,1,2")]
        maturities: String,
        /// Log-moneyness step of the central difference.
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Simulated moments of σ², e^x and y against their analytic values.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Fixed start; without it paths start from a burnt-in stationary state.
        #[arg(long, allow_hyphen_values = true)]
        y0: Option<String>,
        /// Probe times.
        #[arg(long, allow_hyphen_values = true, default_value = "0.25,0.5,1")]
        grid: String,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// How a failure maps onto the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, unreadable or malformed input: 2.
    Usage(anyhow::Error),
    /// Model rejected (inadmissible or not stationary): 1.
    Model(anyhow::Error),
}

impl From<qhr::Error> for Failure {
    fn from(e: qhr::Error) -> Self {
        use qhr::Error as E;
        match e {
            E::Parse(_) | E::ConfigInvalid(_) | E::DimensionMismatch(_) | E::MissingNodes(_) => {
                Failure::Usage(e.into())
            }
            other => Failure::Model(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<qhr::Error>() {
            Ok(q) => q.into(),
            Err(e) => Failure::Usage(e),
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("QHR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(anyhow::anyhow!("QHR_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.into()))
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    init_threads()?;
    use commands as c;
    match cli.command {
        Command::Validate { model, output } => c::validate(&model, &output),
        Command::Diagnostics { model, eigen, output } => c::diagnostics(&model, eigen, &output),
        Command::Curves { model, y0, grid, output } => c::curves(&model, &y0, grid.as_deref(), &output),
        Command::Pca { model, grid, output } => c::pca(&model, grid.as_deref(), &output),
        Command::Density { model, grid, output } => c::density(&model, grid.as_deref(), &output),
        Command::Smile {
            model,
            y0,
            maturities,
            grid,
            normalized,
            mc,
            output,
        } => c::smile(&model, y0.as_deref(), &maturities, &grid, normalized, &mc, &output),
        Command::Atm {
            model,
            y0,
            maturities,
            eps,
            mc,
            output,
        } => c::atm(&model, &y0, &maturities, eps, &mc, &output),
        Command::Simulate {
            model,
            y0,
            grid,
            mc,
            output,
        } => c::simulate(&model, y0.as_deref(), &grid, &mc, &output),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
