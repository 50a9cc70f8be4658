//! Command-line front end. Every subcommand reads one TOML experiment
//! config and writes artifacts into an output directory; all runs are
//! deterministic per (config, seed).
//!
//! Exit codes: 0 success, 2 malformed config (the message names the
//! offending key), 3 missing input file, 1 anything else.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nnmpc::error::Error;
use nnmpc::experiment::{
    closed_loop, config_hash, default_config_toml, load_config, run_pipeline,
    write_gnuplot_script, write_solver_trace, ExperimentConfig, DATASET_FILE, LOSS_CURVE_FILE,
    MODEL_FILE, TRAJECTORY_FILE, VALIDATION_FILE,
};
use nnmpc::narx::NarxModel;
use nnmpc::plant::{steady_input_for, steady_state};
use nnmpc::training::{
    fit_scaling, generate_excitation, sample_plant, train_lm, validate, write_loss_curve, Dataset,
};

#[derive(Parser)]
#[command(
    name = "nnmpc",
    version,
    about = "Concentration control for a simulated stirred tank: identify a neural one-step model and drive a receding-horizon controller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory artifacts are written into.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override the excitation seed; the training seed becomes SEED+1.
    /// The override is part of the effective config, so it changes the
    /// config hash recorded in artifacts.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = load_config(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.train.seed = s.wrapping_add(1);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the excitation signal, drive the simulated tank with it and
    /// write dataset.csv.
    GenData {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Fit the network to a dataset; writes model.json and loss_curve.csv.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Dataset to fit (default: <out-dir>/dataset.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a trained model on a dataset; writes validation.csv and prints
    /// the error summary.
    Validate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Dataset to score against (default: <out-dir>/dataset.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the closed loop with a trained model; writes trajectory.csv.
    Control {
        #[command(flatten)]
        common: ConfigArgs,
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Also write plot.gp, a gnuplot script for the artifacts.
        #[arg(long)]
        gnuplot_script: bool,
        /// Also write solver_trace.csv with every optimizer iterate.
        #[arg(long)]
        solver_trace: bool,
    },
    /// Run every stage end to end: gen-data, train, validate, control.
    Pipeline {
        /// Experiment config file (TOML). Not needed with --dump-defaults.
        #[arg(long, required_unless_present = "dump_defaults")]
        config: Option<PathBuf>,
        /// Directory artifacts are written into.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the excitation seed; the training seed becomes SEED+1.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the default config as TOML and exit.
        #[arg(long)]
        dump_defaults: bool,
        /// Also write plot.gp, a gnuplot script for the artifacts.
        #[arg(long)]
        gnuplot_script: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', "; ");
            eprintln!("error: {line}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::MissingFile { .. } => 3,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Stage { source, .. } => exit_code_for(source),
        _ => 1,
    }
}

/// The identification run starts from the operating point the controller
/// will regulate (same rule as the pipeline stage).
fn gen_dataset(cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    let u = generate_excitation(
        cfg.excitation.kind,
        cfg.excitation.samples,
        cfg.seed,
        (cfg.excitation.u_min, cfg.excitation.u_max),
    )?;
    let u_op = steady_input_for(cfg.reference[0].level, &cfg.plant, cfg.mpc.u_min, cfg.mpc.u_max)?;
    let x0 = steady_state(u_op, &cfg.plant)?;
    sample_plant(&u, &cfg.sampling, &cfg.plant, x0)
}

fn dataset_path(out_dir: &Path, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| out_dir.join(DATASET_FILE))
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData { common } => {
            let cfg = common.load()?;
            let hash = config_hash(&cfg);
            std::fs::create_dir_all(&common.out_dir)?;
            let data = gen_dataset(&cfg)?;
            let path = common.out_dir.join(DATASET_FILE);
            data.write_csv(&path, Some(&hash))?;
            println!("wrote {} ({} samples, config {hash})", path.display(), data.len());
            Ok(())
        }
        Command::Train { common, data } => {
            let cfg = common.load()?;
            let hash = config_hash(&cfg);
            std::fs::create_dir_all(&common.out_dir)?;
            let dataset = Dataset::read_csv(&dataset_path(&common.out_dir, &data))?;
            let mut model = NarxModel::init_random(cfg.narx.spec(), cfg.narx.hidden, cfg.train.seed);
            fit_scaling(&mut model, &dataset)?;
            let (trained, curve) = train_lm(&model, &dataset, &cfg.train)?;
            trained.save(&common.out_dir.join(MODEL_FILE), &hash)?;
            write_loss_curve(&curve, &common.out_dir.join(LOSS_CURVE_FILE), Some(&hash))?;
            let last = curve.last().expect("curve always holds the starting loss");
            println!(
                "trained: loss {} after {} accepted iterations (config {hash})",
                last.loss, last.iter
            );
            Ok(())
        }
        Command::Validate { common, model, data } => {
            let cfg = common.load()?;
            let hash = config_hash(&cfg);
            std::fs::create_dir_all(&common.out_dir)?;
            let m = NarxModel::load(&model)?;
            let dataset = Dataset::read_csv(&dataset_path(&common.out_dir, &data))?;
            let report = validate(&m, &dataset)?;
            report.write_csv(&common.out_dir.join(VALIDATION_FILE), Some(&hash))?;
            println!(
                "rmse_train {} rmse_test {} autocorr_within_band {:.0}% degenerate {}",
                report.rmse_train,
                report.rmse_test,
                100.0 * report.autocorr_within_band_fraction(),
                report.degenerate
            );
            Ok(())
        }
        Command::Control { common, model, gnuplot_script, solver_trace } => {
            let cfg = common.load()?;
            let hash = config_hash(&cfg);
            std::fs::create_dir_all(&common.out_dir)?;
            let m = NarxModel::load(&model)?;
            let model_name = model
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| model.display().to_string());
            let mut trace = solver_trace.then(Vec::new);
            let log = closed_loop(
                &m,
                &cfg.plant,
                &cfg.sampling,
                &cfg.mpc,
                &cfg.reference,
                cfg.duration,
                &hash,
                &model_name,
                trace.as_mut(),
            )?;
            log.write_csv(&common.out_dir.join(TRAJECTORY_FILE))?;
            if let Some(rows) = &trace {
                write_solver_trace(rows, &common.out_dir.join("solver_trace.csv"), &hash)?;
            }
            if gnuplot_script {
                write_gnuplot_script(&common.out_dir, &hash)?;
            }
            match &log.truncation {
                Some(reason) => println!(
                    "ran {} of {} steps, truncated: {reason} (config {hash})",
                    log.steps.len(),
                    cfg.duration
                ),
                None => println!(
                    "ran {} steps, total squared tracking error {} (config {hash})",
                    log.steps.len(),
                    log.total_squared_error()
                ),
            }
            Ok(())
        }
        Command::Pipeline { config, out_dir, seed, dump_defaults, gnuplot_script } => {
            if dump_defaults {
                print!("{}", default_config_toml());
                return Ok(());
            }
            let common = ConfigArgs {
                config: config.expect("clap enforces --config without --dump-defaults"),
                out_dir,
                seed,
            };
            let cfg = common.load()?;
            let out = run_pipeline(&cfg, &common.out_dir)?;
            if gnuplot_script {
                write_gnuplot_script(&common.out_dir, &out.config_hash)?;
            }
            println!(
                "pipeline complete: rmse_test {}, {} control steps, artifacts in {} (config {})",
                out.validation.rmse_test,
                out.trajectory.steps.len(),
                common.out_dir.display(),
                out.config_hash
            );
            Ok(())
        }
    }
}
