use clap::{Args, Parser, Subcommand as ClapSub};
use shen_core::app::{configure_threads, error_exit_code, run, RunOptions, Subcommand};
use shen_core::config::load_config;
use shen_core::taylor::TermKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shen", version, about = "Stochastic heat equation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to SHEN_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(ClapSub)]
enum Command {
    /// Tabulate J(t) and Phi(t).
    Phi(Common),
    /// Dalang integral with truncation diagnostics.
    Dalang(Common),
    /// Simulate paths and record u(t, x_obs).
    Simulate(Common),
    /// Martingale approximations F_n over a uniform partition.
    FnSeq {
        #[command(flatten)]
        common: Common,
        /// Number of partition intervals.
        #[arg(long, default_value_t = 8)]
        intervals: usize,
    },
    /// Linear-case Malliavin norm identity.
    MalliavinCheck(Common),
    /// Scaling of windowed Malliavin norms.
    #[command(name = "lemma4-scaling")]
    WindowScaling {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<u32>,
    },
    /// Scaling of F_n - F_(n-1) moments.
    DifferenceScaling(Common),
    /// Small-ball probabilities and negative moments.
    Smallball {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<u32>,
    },
    /// Moment scaling of the Taylor terms.
    TaylorScaling {
        #[command(flatten)]
        common: Common,
        /// Comma-separated terms: j1, j2, r1, r1_drift, r2.
        #[arg(long, value_delimiter = ',')]
        term: Option<Vec<TermKind>>,
        #[arg(long)]
        p: Option<u32>,
        /// Comma-separated interval widths, in steps.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
    },
    /// Density estimate against Gaussian-type envelopes.
    DensityEnvelope(Common),
    /// Pathwise bounds on the quadratic variation and drift.
    Pathwise(Common),
    /// Every applicable check.
    AllChecks(Common),
}

fn split(cmd: Command) -> (Subcommand, Common, RunOptions) {
    let mut o = RunOptions::default();
    let (sub, common) = match cmd {
        Command::Phi(c) => (Subcommand::Phi, c),
        Command::Dalang(c) => (Subcommand::Dalang, c),
        Command::Simulate(c) => (Subcommand::Simulate, c),
        Command::FnSeq { common, intervals } => {
            o.intervals = Some(intervals);
            (Subcommand::FnSeq, common)
        }
        Command::MalliavinCheck(c) => (Subcommand::MalliavinCheck, c),
        Command::WindowScaling { common, p } => {
            o.p = p;
            (Subcommand::WindowScaling, common)
        }
        Command::DifferenceScaling(c) => (Subcommand::DifferenceScaling, c),
        Command::Smallball { common, p } => {
            o.p = p;
            (Subcommand::Smallball, common)
        }
        Command::TaylorScaling { common, term, p, widths } => {
            o.terms = term;
            o.p = p;
            o.widths = widths;
            (Subcommand::TaylorScaling, common)
        }
        Command::DensityEnvelope(c) => (Subcommand::DensityEnvelope, c),
        Command::Pathwise(c) => (Subcommand::Pathwise, c),
        Command::AllChecks(c) => (Subcommand::AllChecks, c),
    };
    o.out = common.out.clone();
    o.seed = common.seed;
    o.paths = common.paths;
    (sub, common, o)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, common, opts) = split(cli.command);
    configure_threads(common.threads);
    let result = load_config(&common.config).and_then(|cfg| run(sub, &cfg, &opts));
    match result {
        Ok(report) => {
            for o in &report.outcomes {
                println!("{:<20} {}", o.name, if o.pass { "pass" } else { "FAIL" });
            }
            println!("artifacts in {}", report.out.display());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("shen: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
