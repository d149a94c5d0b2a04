//! Command-line front end for the `rydbec` library.
//!
//! Every run reads an optional JSON config, applies flag overrides, and
//! writes CSV/JSON results into the output directory. See configs/README.md
//! for the config schema and the units of every field.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Context, FieldEvalArgs, FieldSolveArgs, StarkMapArgs, TrajectoryArgs};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "rydbec",
    about = "Rydberg excitation and cold-cloud analysis toolkit",
    version
)]
struct Cli {
    /// JSON config file; omitted fields use the standard working point.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for CSV/JSON results (default "out").
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for stochastic commands; reruns with the same seed are byte-identical.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also render SVG plots next to the data files.
    #[arg(long, global = true)]
    plot: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diagonalize the Stark Hamiltonian over a field ramp and report the
    /// quadratic shift of the target S state.
    StarkMap(StarkMapCli),
    /// Electrostatics of the plate assembly: presets, evaluation, inversion.
    Field {
        #[command(subcommand)]
        command: FieldCommand,
    },
    /// Integrate an ion trajectory from the cloud to the detector plane.
    Trajectory(TrajectoryCli),
    /// Excitation spectra: synthesis, peak fitting, Stark scans.
    Spectrum {
        #[command(subcommand)]
        command: SpectrumCommand,
    },
    /// Absorption images of the trapped cloud: synthesis and bimodal analysis.
    Cloud {
        #[command(subcommand)]
        command: CloudCommand,
    },
    /// Run every built-in cross-check and write the verdict table.
    Reproduce,
}

#[derive(Args)]
struct StarkMapCli {
    /// Principal quantum number of the target S state.
    #[arg(long)]
    n: Option<u32>,
    /// Shells to include on each side of n.
    #[arg(long)]
    spread: Option<u32>,
    /// Twice the magnetic quantum number (1 means mj = 1/2).
    #[arg(long)]
    mj2: Option<i32>,
    /// Upper end of the field ramp in V/cm.
    #[arg(long)]
    field_max: Option<f64>,
    /// Field samples; 1 lists zero-field energies only.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum FieldCommand {
    /// Write the plate charges for a named preset scaled to a voltage.
    Preset {
        /// Preset name, e.g. "constant_BH".
        name: Option<String>,
        /// Plate voltage in volts.
        #[arg(long, allow_negative_numbers = true)]
        volts: Option<f64>,
        /// Voltage-to-field anchor: "theory" or "measured".
        #[arg(long)]
        anchor: Option<String>,
    },
    /// Evaluate the field at a point or along a segment.
    Eval {
        /// Charges JSON written by `field preset` or `field solve`.
        #[arg(long, value_name = "PATH")]
        charges: Option<PathBuf>,
        /// Segment start x,y,z in mm (default 0,0,0).
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        /// Segment end x,y,z in mm (default 10,0,0).
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        /// Samples along the segment.
        #[arg(long, default_value_t = 41)]
        steps: usize,
        /// Evaluate at a single point x,y,z in mm instead of a segment.
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true, conflicts_with_all = ["from", "to"])]
        at: Option<Vec<f64>>,
    },
    /// Solve for plate charges that realize target field components at the
    /// trap center.
    Solve {
        /// Target Ex in V/cm.
        #[arg(long, allow_negative_numbers = true)]
        ex: Option<f64>,
        /// Target Ey in V/cm.
        #[arg(long, allow_negative_numbers = true)]
        ey: Option<f64>,
        /// Target Ez in V/cm.
        #[arg(long, allow_negative_numbers = true)]
        ez: Option<f64>,
        /// Target dEx/dx in (V/cm)/mm.
        #[arg(long, allow_negative_numbers = true)]
        gxx: Option<f64>,
        /// Target dEy/dy in (V/cm)/mm.
        #[arg(long, allow_negative_numbers = true)]
        gyy: Option<f64>,
        /// Target dEz/dz in (V/cm)/mm.
        #[arg(long, allow_negative_numbers = true)]
        gzz: Option<f64>,
    },
}

#[derive(Args)]
struct TrajectoryCli {
    /// Drop all fields: free flight from the start conditions.
    #[arg(long)]
    zero_fields: bool,
    /// Leave the magnetic trap out of the force model.
    #[arg(long)]
    no_trap: bool,
    /// Integrator step in microseconds.
    #[arg(long)]
    dt_us: Option<f64>,
    /// Time limit in microseconds.
    #[arg(long)]
    t_max_us: Option<f64>,
    /// Extraction pulse voltage on the B and H plates.
    #[arg(long, allow_negative_numbers = true)]
    pulse_volts: Option<f64>,
    /// Cage bias voltage; 0 removes the cage from the model.
    #[arg(long, allow_negative_numbers = true)]
    cage_volts: Option<f64>,
    /// Start position x,y,z in mm.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// Initial velocity x,y,z in m/s.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    velocity: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum SpectrumCommand {
    /// Sample a two-peak excitation spectrum (requires --seed).
    Synth,
    /// Fit a Gaussian to one line of a spectrum CSV.
    Fit {
        /// Spectrum CSV with a detuning_mhz,signal header.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Fit window lo,hi in MHz.
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
        window: Option<Vec<f64>>,
    },
    /// Synthesize a line-center vs plate-voltage scan and invert it for the
    /// stray field and the voltage calibration (requires --seed).
    Starkscan,
}

#[derive(Subcommand)]
enum CloudCommand {
    /// Render a synthetic absorption image (requires --seed).
    Synth {
        /// Condensate fraction in [0, 1].
        #[arg(long)]
        fraction: Option<f64>,
        /// File stem for the image data and its JSON sidecar.
        #[arg(long, default_value = "cloud")]
        stem: String,
        /// Image data format: "csv" or "bin".
        #[arg(long)]
        format: Option<String>,
    },
    /// Run the bimodal fit on an image written by `cloud synth`.
    Analyze {
        /// Image file stem (path without the .csv/.bin/.json extension).
        #[arg(long, value_name = "STEM")]
        stem: PathBuf,
    },
}

fn run(cli: Cli) -> rydbec::Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    let ctx = Context {
        out_dir: cli
            .out
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        seed: cli.seed.or(cfg.seed),
        plot: cli.plot,
    };

    match cli.command {
        Command::StarkMap(args) => commands::stark_map(
            &cfg,
            &ctx,
            StarkMapArgs {
                n: args.n,
                spread: args.spread,
                mj2: args.mj2,
                field_max: args.field_max,
                samples: args.samples,
            },
        ),
        Command::Field { command } => match command {
            FieldCommand::Preset { name, volts, anchor } => {
                commands::field_preset(&cfg, &ctx, name, volts, anchor)
            }
            FieldCommand::Eval { charges, from, to, steps, at } => commands::field_eval(
                &cfg,
                &ctx,
                FieldEvalArgs { charges, from, to, steps, at },
            ),
            FieldCommand::Solve { ex, ey, ez, gxx, gyy, gzz } => {
                commands::field_solve(&ctx, FieldSolveArgs { ex, ey, ez, gxx, gyy, gzz })
            }
        },
        Command::Trajectory(args) => commands::trajectory(
            &cfg,
            &ctx,
            TrajectoryArgs {
                zero_fields: args.zero_fields,
                no_trap: args.no_trap,
                dt_us: args.dt_us,
                t_max_us: args.t_max_us,
                pulse_volts: args.pulse_volts,
                cage_volts: args.cage_volts,
                start: args.start,
                velocity: args.velocity,
            },
        ),
        Command::Spectrum { command } => match command {
            SpectrumCommand::Synth => commands::spectrum_synth(&cfg, &ctx),
            SpectrumCommand::Fit { input, window } => {
                commands::spectrum_fit(&cfg, &ctx, &input, window)
            }
            SpectrumCommand::Starkscan => commands::spectrum_starkscan(&cfg, &ctx),
        },
        Command::Cloud { command } => match command {
            CloudCommand::Synth { fraction, stem, format } => {
                commands::cloud_synth(&cfg, &ctx, fraction, &stem, format)
            }
            CloudCommand::Analyze { stem } => commands::cloud_analyze(&cfg, &ctx, &stem),
        },
        Command::Reproduce => commands::reproduce(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
