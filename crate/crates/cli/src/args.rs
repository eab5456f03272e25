//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "manyiv",
    version,
    about = "Many-instrument IV estimation with weak-identification-robust inference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: Global,
}

#[derive(Debug, Args, Clone)]
pub struct Global {
    /// Significance level.
    #[arg(long, global = true, default_value_t = 0.05)]
    pub alpha: f64,
    /// Overrides the seed of a simulation design.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Writes the structured report here (`.csv` for CSV, JSON otherwise);
    /// for `simulate` a directory that receives CSV, JSON and SVG files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Format printed to standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Categorical columns to replace by dummies (first level dropped).
    #[arg(long, global = true, value_delimiter = ',')]
    pub expand: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Grid,
    Polynomial,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Input CSV with a header row.
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "x")]
    pub endogenous: String,
    /// Instrument columns; an entry ending in `*` selects by prefix.
    #[arg(long, value_delimiter = ',', default_value = "z*")]
    pub instruments: Vec<String>,
    /// Control columns; an entry ending in `*` selects by prefix.
    #[arg(long, value_delimiter = ',', default_value = "w*")]
    pub controls: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-test, estimates and robust confidence sets.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
    },
    /// The F-tilde pre-test for weak identification.
    Pretest {
        #[command(flatten)]
        data: DataArgs,
    },
    /// One robust test of `beta = beta0`.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, allow_negative_numbers = true)]
        beta0: f64,
        /// ar, lm, arw, ar1 or ar2.
        #[arg(long)]
        stat: String,
        /// phi1, phi2, phi3, psi1 or psi2.
        #[arg(long)]
        variance: Option<String>,
    },
    /// Confidence sets by test inversion.
    Confset {
        #[command(flatten)]
        data: DataArgs,
        /// Statistics to invert; defaults to lm and ar, or arw with controls.
        #[arg(long, value_delimiter = ',')]
        stat: Vec<String>,
        #[arg(long)]
        variance: Option<String>,
        /// Polynomial roots by default; a grid when the normalizer has no
        /// closed form.
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        /// Grid as `lo:hi:points`.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Point estimates with standard errors where available.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// tsls, jive1, jive2, beta1, beta2 or beta3; all applicable by default.
        #[arg(long, value_delimiter = ',')]
        estimator: Vec<String>,
    },
    /// Runs a simulation design.
    Simulate {
        /// A design file, or the name of a bundled design.
        #[arg(long)]
        design: String,
        /// Overrides the replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Also writes an SVG plot of the rejection rates.
        #[arg(long)]
        plot: bool,
    },
    /// Lists or prints the bundled simulation designs.
    Designs { name: Option<String> },
}
