//! End-to-end harness: one config file describes the whole experiment —
//! excitation, plant sampling, training, validation and the closed-loop
//! run — and every artifact it writes is reproducible byte-for-byte from
//! (config, seed) and names the config hash that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mpc::{Controller, MpcConfig, TracePoint};
use crate::narx::{HorizonModel, NarxModel, RegressorSpec};
use crate::plant::{integrate, steady_input_for, steady_state, PlantParams};
use crate::training::{
    fit_scaling, generate_excitation, sample_plant, train_lm, validate, Dataset, ExcitationKind,
    SamplingConfig, TrainConfig, ValidationReport,
};

/// Config layout revision this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Excitation block of the experiment config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    pub kind: ExcitationKind,
    pub samples: usize,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for ExcitationConfig {
    /// The excitation range defaults to the operating envelope of the
    /// default reference schedule, not the controller's full input
    /// authority: the tank level is an unmeasured state whose value sets
    /// the concentration's input gain, so data gathered at high feed rates
    /// (level far above 1) teaches the network the wrong gain for the
    /// regime the controller regulates. Identifying over [0, 0.5] keeps the
    /// level near its operating band and the closed loop never leaves the
    /// identified range.
    fn default() -> Self {
        ExcitationConfig { kind: ExcitationKind::Aprbs, samples: 1000, u_min: 0.0, u_max: 0.5 }
    }
}

/// Model-structure block: regressor orders plus the hidden-layer width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NarxConfig {
    pub ny: usize,
    pub nu: usize,
    pub delay: usize,
    pub hidden: usize,
}

impl Default for NarxConfig {
    fn default() -> Self {
        NarxConfig { ny: 2, nu: 2, delay: 1, hidden: 7 }
    }
}

impl NarxConfig {
    pub fn spec(&self) -> RegressorSpec {
        RegressorSpec { ny: self.ny, nu: self.nu, delay: self.delay }
    }
}

/// One piece of the piecewise-constant setpoint profile: `level` applies
/// from sample `start` until the next entry takes over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStep {
    pub start: usize,
    pub level: f64,
}

/// The whole experiment in one editable tree. Scalars sit before the
/// nested blocks so the serialized form is valid TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Seed for the excitation signal; the training seed lives in `train`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Closed-loop run length in samples.
    #[serde(default = "default_duration")]
    pub duration: usize,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub narx: NarxConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default = "default_reference")]
    pub reference: Vec<ReferenceStep>,
}

fn default_seed() -> u64 {
    42
}

fn default_duration() -> usize {
    300
}

fn default_reference() -> Vec<ReferenceStep> {
    vec![
        ReferenceStep { start: 0, level: 12.147 },
        ReferenceStep { start: 100, level: 13.0 },
        ReferenceStep { start: 200, level: 11.5 },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            duration: default_duration(),
            plant: PlantParams::default(),
            sampling: SamplingConfig::default(),
            excitation: ExcitationConfig::default(),
            narx: NarxConfig::default(),
            train: TrainConfig::default(),
            mpc: MpcConfig::default(),
            reference: default_reference(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "schema_version: this build reads version {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.duration < 1 {
            return Err(Error::InvalidParameter("duration: must be at least 1 sample".into()));
        }
        self.plant.validate()?;
        self.sampling.validate()?;
        if self.excitation.samples < crate::training::MIN_DATASET_LEN {
            return Err(Error::InvalidParameter(format!(
                "excitation.samples: {} is below the dataset minimum {}",
                self.excitation.samples,
                crate::training::MIN_DATASET_LEN
            )));
        }
        let (xlo, xhi) = (self.excitation.u_min, self.excitation.u_max);
        if !xlo.is_finite() || !xhi.is_finite() || xlo < 0.0 || xlo >= xhi {
            return Err(Error::InvalidParameter(format!(
                "excitation.u_min/u_max: need 0 <= u_min < u_max and finite, got [{xlo}, {xhi}]"
            )));
        }
        self.narx.spec().validate()?;
        if self.narx.hidden < 1 {
            return Err(Error::InvalidParameter("narx.hidden: must be at least 1".into()));
        }
        self.train.validate()?;
        self.mpc.validate_for(self.narx.delay)?;
        if self.mpc.u_min < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mpc.u_min: the manipulated input is a feed flow and cannot go below 0, got {}",
                self.mpc.u_min
            )));
        }
        self.validate_reference()
    }

    fn validate_reference(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::InvalidParameter("reference: profile must not be empty".into()));
        }
        if self.reference[0].start != 0 {
            return Err(Error::InvalidParameter(format!(
                "reference[0].start: profile must begin at sample 0, got {}",
                self.reference[0].start
            )));
        }
        for (i, w) in self.reference.windows(2).enumerate() {
            if w[1].start <= w[0].start {
                return Err(Error::InvalidParameter(format!(
                    "reference[{}].start: starts must strictly increase, got {} after {}",
                    i + 1,
                    w[1].start,
                    w[0].start
                )));
            }
        }
        if let Some((i, step)) =
            self.reference.iter().enumerate().find(|(_, s)| s.start >= self.duration)
        {
            return Err(Error::InvalidParameter(format!(
                "reference[{i}].start: {} lies beyond the run of {} samples",
                step.start, self.duration
            )));
        }
        let (lo, hi) = self.reachable_band()?;
        for (i, step) in self.reference.iter().enumerate() {
            if !step.level.is_finite() || step.level <= lo || step.level >= hi {
                return Err(Error::InvalidParameter(format!(
                    "reference[{i}].level: {} is outside the steady-state band ({lo:.4}, {hi:.4}) reachable with inputs in [{}, {}]",
                    step.level, self.mpc.u_min, self.mpc.u_max
                )));
            }
        }
        Ok(())
    }

    /// Concentrations reachable in steady state over the controller's input
    /// bounds; the steady map is monotone in the feed flow.
    pub fn reachable_band(&self) -> Result<(f64, f64)> {
        let lo = steady_state(self.mpc.u_min, &self.plant)
            .map_err(|e| Error::InvalidParameter(format!("reference band at u_min: {e}")))?;
        let hi = steady_state(self.mpc.u_max, &self.plant)
            .map_err(|e| Error::InvalidParameter(format!("reference band at u_max: {e}")))?;
        Ok((lo.cb, hi.cb))
    }

    /// Setpoint in force at sample `k`.
    pub fn reference_at(&self, k: usize) -> f64 {
        self.reference
            .iter()
            .take_while(|s| s.start <= k)
            .last()
            .map(|s| s.level)
            .unwrap_or(self.reference[0].level)
    }
}

/// Hex digest naming a config; every artifact records it. Hashes the
/// canonical serialized form, so any field change shows up.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = toml::to_string_pretty(cfg).expect("config serializes: plain data tree");
    let digest = Sha256::digest(text.as_bytes());
    let mut hex = String::with_capacity(16);
    for b in &digest[..8] {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

/// The default config in its on-disk form (`pipeline --dump-defaults`).
pub fn default_config_toml() -> String {
    toml::to_string_pretty(&ExperimentConfig::default())
        .expect("default config serializes: plain data tree")
}

/// Reads and fully validates a config file. Unknown keys, type mismatches
/// and semantic violations all surface as [`Error::Config`] with the
/// offending key path.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.display().to_string() }
        } else {
            Error::Io(e)
        }
    })?;
    let de = toml::de::Deserializer::new(&text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        detail: e.inner().to_string(),
    })?;
    cfg.validate().map_err(|e| match e {
        // Validators phrase messages as "key.path: detail"; surface them
        // with the same shape as deserialization failures.
        Error::InvalidParameter(msg) => match msg.split_once(": ") {
            Some((key, detail)) => {
                Error::Config { path: key.to_string(), detail: detail.to_string() }
            }
            None => Error::Config { path: String::new(), detail: msg },
        },
        other => other,
    })?;
    Ok(cfg)
}

/// One closed-loop sample: the setpoint and measurement at instant `k`,
/// the model's one-step-ahead prediction of that measurement issued at the
/// previous instant (first row repeats the measurement), the input applied
/// over the following interval, and the solver's cost and iteration count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub k: usize,
    pub t: f64,
    pub r: f64,
    pub y: f64,
    pub y_hat: f64,
    pub u: f64,
    pub j: f64,
    pub lm_iters: usize,
}

/// Closed-loop record plus the provenance needed to reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub steps: Vec<TrajectoryStep>,
    pub config_hash: String,
    /// File name (not path) of the model that drove the run, so the log
    /// bytes do not depend on where the artifacts live.
    pub model_file: String,
    /// Present when the run stopped early; names the step and cause.
    pub truncation: Option<String>,
}

impl TrajectoryLog {
    pub fn total_squared_error(&self) -> f64 {
        self.steps.iter().map(|s| (s.r - s.y) * (s.r - s.y)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# config_hash: {}", self.config_hash);
        let _ = writeln!(s, "# model: {}", self.model_file);
        if let Some(reason) = &self.truncation {
            let _ = writeln!(s, "# truncated: {}", reason.replace('\n', " "));
        }
        s.push_str("k,t,r,y,y_hat,u,j,lm_iters\n");
        for p in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                p.k, p.t, p.r, p.y, p.y_hat, p.u, p.j, p.lm_iters
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::fsio::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Per-control-step solver trace rows in CSV form.
pub fn solver_trace_to_csv(trace: &[(usize, TracePoint)], config_hash: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash: {config_hash}");
    s.push_str("k,iter,j,lambda,grad_norm\n");
    for (k, p) in trace {
        let _ = writeln!(s, "{k},{},{},{},{}", p.iteration, p.j, p.lambda, p.gradient_norm);
    }
    s
}

pub fn write_solver_trace(
    trace: &[(usize, TracePoint)],
    path: &Path,
    config_hash: &str,
) -> Result<()> {
    crate::fsio::write_atomic(path, solver_trace_to_csv(trace, config_hash).as_bytes())
}

/// Runs the controller against the simulated tank. The loop starts at the
/// steady state matching the first setpoint. Each sample reads the
/// concentration, solves the horizon problem (the reference is the current
/// setpoint held over the horizon — no preview, so step changes arrive as
/// measured) and applies the first move for one period.
///
/// Solver or integrator failures truncate the run: the partial log is
/// returned with the cause recorded, not an error.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop<M: HorizonModel + ?Sized>(
    model: &M,
    params: &PlantParams,
    sampling: &SamplingConfig,
    mpc_cfg: &MpcConfig,
    reference: &[ReferenceStep],
    duration: usize,
    config_hash: &str,
    model_file: &str,
    mut trace: Option<&mut Vec<(usize, TracePoint)>>,
) -> Result<TrajectoryLog> {
    sampling.validate()?;
    mpc_cfg.validate_for(model.delay())?;
    if reference.is_empty() || reference[0].start != 0 {
        return Err(Error::InvalidParameter(
            "reference: profile must be non-empty and begin at sample 0".into(),
        ));
    }
    let r0 = reference[0].level;
    let u0 = steady_input_for(r0, params, mpc_cfg.u_min, mpc_cfg.u_max)?;
    let mut x = steady_state(u0, params)?;
    let mut controller = Controller::new(*mpc_cfg, model, x.cb, u0)?;

    let horizon_len = mpc_cfg.n2 - mpc_cfg.n1 + 1;
    let mut log = TrajectoryLog {
        steps: Vec::with_capacity(duration),
        config_hash: config_hash.to_string(),
        model_file: model_file.to_string(),
        truncation: None,
    };
    let mut prev_prediction = None;
    for k in 0..duration {
        let r_k = reference
            .iter()
            .take_while(|s| s.start <= k)
            .last()
            .map(|s| s.level)
            .unwrap_or(r0);
        let y_k = x.cb;
        let r_horizon = vec![r_k; horizon_len];
        let mut step_trace = trace.as_deref_mut().map(|_| Vec::new());
        let solved = controller.step(model, y_k, &r_horizon, step_trace.as_mut());
        let (u_k, sol) = match solved {
            Ok(pair) => pair,
            Err(e) => {
                log.truncation = Some(format!("step {k}: solver: {e}"));
                break;
            }
        };
        if let (Some(sink), Some(rows)) = (trace.as_deref_mut(), step_trace) {
            sink.extend(rows.into_iter().map(|p| (k, p)));
        }
        log.steps.push(TrajectoryStep {
            k,
            t: k as f64 * sampling.ts,
            r: r_k,
            y: y_k,
            y_hat: prev_prediction.unwrap_or(y_k),
            u: u_k,
            j: sol.j_value,
            lm_iters: sol.iterations,
        });
        prev_prediction = Some(sol.predicted_y[0]);
        match integrate(x, u_k, sampling.ts, sampling.substep, params) {
            Ok(next) => x = next,
            Err(e) => {
                log.truncation = Some(format!("step {k}: plant: {e}"));
                break;
            }
        }
    }
    Ok(log)
}

/// Uncontrolled baseline: freeze the input at the steady value for the
/// first setpoint and let the tank run. The log carries the same reference
/// column so tracking errors compare directly against the controlled run.
pub fn open_loop_hold(
    params: &PlantParams,
    sampling: &SamplingConfig,
    mpc_cfg: &MpcConfig,
    reference: &[ReferenceStep],
    duration: usize,
    config_hash: &str,
) -> Result<TrajectoryLog> {
    sampling.validate()?;
    if reference.is_empty() || reference[0].start != 0 {
        return Err(Error::InvalidParameter(
            "reference: profile must be non-empty and begin at sample 0".into(),
        ));
    }
    let r0 = reference[0].level;
    let u0 = steady_input_for(r0, params, mpc_cfg.u_min, mpc_cfg.u_max)?;
    let mut x = steady_state(u0, params)?;
    let mut log = TrajectoryLog {
        steps: Vec::with_capacity(duration),
        config_hash: config_hash.to_string(),
        model_file: "none".to_string(),
        truncation: None,
    };
    for k in 0..duration {
        let r_k = reference
            .iter()
            .take_while(|s| s.start <= k)
            .last()
            .map(|s| s.level)
            .unwrap_or(r0);
        log.steps.push(TrajectoryStep {
            k,
            t: k as f64 * sampling.ts,
            r: r_k,
            y: x.cb,
            y_hat: x.cb,
            u: u0,
            j: 0.0,
            lm_iters: 0,
        });
        match integrate(x, u0, sampling.ts, sampling.substep, params) {
            Ok(next) => x = next,
            Err(e) => {
                log.truncation = Some(format!("step {k}: plant: {e}"));
                break;
            }
        }
    }
    Ok(log)
}

/// Everything the pipeline produces, in memory.
#[derive(Debug)]
pub struct PipelineArtifacts {
    pub config_hash: String,
    pub dataset: Dataset,
    pub model: NarxModel,
    pub validation: ValidationReport,
    pub trajectory: TrajectoryLog,
}

pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const GNUPLOT_FILE: &str = "plot.gp";

/// Full experiment: excite, sample, train, validate, control. Artifacts
/// are written into `out_dir` as each stage completes, so a failing stage
/// leaves everything the earlier stages produced on disk; the error names
/// the stage that died.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineArtifacts> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = config_hash(cfg);

    let u = generate_excitation(
        cfg.excitation.kind,
        cfg.excitation.samples,
        cfg.seed,
        (cfg.excitation.u_min, cfg.excitation.u_max),
    )
    .map_err(|e| e.in_stage("excitation"))?;

    // The identification run starts from the operating point the controller
    // will regulate, so the data covers that neighborhood from sample one.
    let dataset = (|| -> Result<Dataset> {
        let u_op =
            steady_input_for(cfg.reference[0].level, &cfg.plant, cfg.mpc.u_min, cfg.mpc.u_max)?;
        let x0 = steady_state(u_op, &cfg.plant)?;
        let data = sample_plant(&u, &cfg.sampling, &cfg.plant, x0)?;
        data.write_csv(&out_dir.join(DATASET_FILE), Some(&hash))?;
        Ok(data)
    })()
    .map_err(|e| e.in_stage("plant-sampling"))?;

    let model = (|| -> Result<NarxModel> {
        let mut m = NarxModel::init_random(cfg.narx.spec(), cfg.narx.hidden, cfg.train.seed);
        fit_scaling(&mut m, &dataset)?;
        let (trained, curve) = train_lm(&m, &dataset, &cfg.train)?;
        trained.save(&out_dir.join(MODEL_FILE), &hash)?;
        crate::training::write_loss_curve(&curve, &out_dir.join(LOSS_CURVE_FILE), Some(&hash))?;
        Ok(trained)
    })()
    .map_err(|e| e.in_stage("training"))?;

    let validation = (|| -> Result<ValidationReport> {
        let report = validate(&model, &dataset)?;
        report.write_csv(&out_dir.join(VALIDATION_FILE), Some(&hash))?;
        Ok(report)
    })()
    .map_err(|e| e.in_stage("validation"))?;

    let trajectory = (|| -> Result<TrajectoryLog> {
        let log = closed_loop(
            &model,
            &cfg.plant,
            &cfg.sampling,
            &cfg.mpc,
            &cfg.reference,
            cfg.duration,
            &hash,
            MODEL_FILE,
            None,
        )?;
        log.write_csv(&out_dir.join(TRAJECTORY_FILE))?;
        Ok(log)
    })()
    .map_err(|e| e.in_stage("control"))?;

    Ok(PipelineArtifacts { config_hash: hash, dataset, model, validation, trajectory })
}

/// Emits a gnuplot script that renders the standard artifacts; plotting
/// stays outside this binary.
pub fn write_gnuplot_script(out_dir: &Path, config_hash: &str) -> Result<()> {
    let script = format!(
        "# config_hash: {config_hash}\n\
         set datafile separator ','\n\
         set terminal pngcairo size 1200,900\n\
         set output 'trajectory.png'\n\
         set multiplot layout 2,1\n\
         set ylabel 'concentration'\n\
         plot 'trajectory.csv' using 2:3 with steps title 'reference', \\\n\
         \x20    'trajectory.csv' using 2:4 with lines title 'plant output', \\\n\
         \x20    'trajectory.csv' using 2:5 with lines dashtype 2 title 'model prediction'\n\
         set ylabel 'feed flow'\n\
         plot 'trajectory.csv' using 2:6 with steps title 'input'\n\
         unset multiplot\n\
         set output 'training.png'\n\
         set multiplot layout 2,1\n\
         set ylabel 'loss'\n\
         set logscale y\n\
         plot 'loss_curve.csv' using 1:2 with lines title 'training loss'\n\
         unset logscale y\n\
         set ylabel 'concentration'\n\
         plot 'dataset.csv' using 2:4 with lines title 'sampled output'\n\
         unset multiplot\n"
    );
    crate::fsio::write_atomic(&out_dir.join(GNUPLOT_FILE), script.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use std::cell::Cell;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn default_toml_round_trips() {
        let text = default_config_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, ExperimentConfig::default());
    }

    #[test]
    fn reference_lookup_is_piecewise_constant() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.reference_at(0), 12.147);
        assert_eq!(cfg.reference_at(99), 12.147);
        assert_eq!(cfg.reference_at(100), 13.0);
        assert_eq!(cfg.reference_at(199), 13.0);
        assert_eq!(cfg.reference_at(200), 11.5);
        assert_eq!(cfg.reference_at(299), 11.5);
    }

    #[test]
    fn config_rejects_bad_references() {
        let mut cfg = ExperimentConfig::default();
        cfg.reference.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.reference[0].start = 5;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.reference[2].start = 100;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.reference[2].start = 400;
        assert!(cfg.validate().is_err(), "start beyond the run must be rejected");

        // 30 is above any steady state reachable with feeds up to 4.
        let mut cfg = ExperimentConfig::default();
        cfg.reference[1].level = 30.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("reachable"), "got {err}");
    }

    #[test]
    fn config_rejects_wrong_schema_version() {
        let mut cfg = ExperimentConfig::default();
        cfg.schema_version = 2;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("schema_version"), "got {err}");
    }

    #[test]
    fn config_rejects_negative_input_floor() {
        let mut cfg = ExperimentConfig::default();
        cfg.mpc.u_min = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let cfg = ExperimentConfig::default();
        let h1 = config_hash(&cfg);
        let h2 = config_hash(&cfg);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 16);
        assert!(h1.chars().all(|c| c.is_ascii_hexdigit()));
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(h1, config_hash(&other));
    }

    #[test]
    fn load_config_reports_the_offending_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let mut text = default_config_toml();
        text = text.replace("rho = 0.05", "rho = \"high\"");
        std::fs::write(&path, &text).unwrap();
        let err = load_config(&path).unwrap_err();
        match &err {
            Error::Config { path, .. } => assert!(path.contains("mpc.rho"), "path was {path}"),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn load_config_reports_semantic_violations_with_key_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let text = default_config_toml().replace("rho = 0.05", "rho = -2.0");
        std::fs::write(&path, &text).unwrap();
        let err = load_config(&path).unwrap_err();
        match &err {
            Error::Config { path, .. } => assert!(path.contains("mpc.rho"), "path was {path}"),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn partial_tables_fill_the_missing_keys_from_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "schema_version = 1\n[mpc]\nrho = 0.1\n").unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.mpc.rho, 0.1);
        assert_eq!(cfg.mpc.n2, MpcConfig::default().n2);
        assert_eq!(cfg.train, crate::training::TrainConfig::default());
    }

    #[test]
    fn load_config_missing_file() {
        let err = load_config(Path::new("/nonexistent/exp.toml")).unwrap_err();
        assert!(matches!(err, Error::MissingFile { .. }));
    }

    #[test]
    fn trajectory_csv_shape() {
        let log = TrajectoryLog {
            steps: vec![TrajectoryStep {
                k: 0,
                t: 0.0,
                r: 12.147,
                y: 12.0,
                y_hat: 12.0,
                u: 0.1,
                j: 0.5,
                lm_iters: 3,
            }],
            config_hash: "abcd".into(),
            model_file: "model.json".into(),
            truncation: None,
        };
        let csv = log.to_csv();
        assert_eq!(
            csv,
            "# config_hash: abcd\n# model: model.json\nk,t,r,y,y_hat,u,j,lm_iters\n0,0,12.147,12,12,0.1,0.5,3\n"
        );
        let mut truncated = log.clone();
        truncated.truncation = Some("step 1: solver: bad".into());
        assert!(truncated.to_csv().contains("# truncated: step 1: solver: bad\n"));
    }

    /// Predictor that fails after a set number of horizon solves; exercises
    /// truncation handling.
    struct FailingModel {
        calls_left: Cell<usize>,
    }

    impl HorizonModel for FailingModel {
        fn delay(&self) -> usize {
            1
        }
        fn required_history(&self) -> (usize, usize) {
            (1, 0)
        }
        fn predict_horizon(
            &self,
            _hist: &crate::narx::History,
            _future_u: &[f64],
            n2: usize,
        ) -> Result<Vec<f64>> {
            if self.calls_left.get() == 0 {
                return Err(Error::Model("synthetic failure".into()));
            }
            self.calls_left.set(self.calls_left.get() - 1);
            Ok(vec![12.147; n2])
        }
        fn jacobian_output_wrt_u(
            &self,
            _hist: &crate::narx::History,
            _future_u: &[f64],
            n2: usize,
        ) -> Result<DMatrix<f64>> {
            Ok(DMatrix::zeros(n2, n2))
        }
    }

    #[test]
    fn closed_loop_truncates_on_model_failure() {
        let cfg = ExperimentConfig::default();
        // Each control step costs at least one predict call; the exact
        // budget per step depends on the solver path, so give enough for a
        // few steps and check the log stopped early with the cause named.
        let model = FailingModel { calls_left: Cell::new(12) };
        let log = closed_loop(
            &model,
            &cfg.plant,
            &cfg.sampling,
            &cfg.mpc,
            &cfg.reference,
            50,
            "hash",
            "mock",
            None,
        )
        .unwrap();
        assert!(log.steps.len() < 50);
        let note = log.truncation.expect("run must record its truncation");
        assert!(note.contains("solver") && note.contains("synthetic failure"), "note: {note}");
    }

    #[test]
    fn open_loop_hold_stays_at_the_matching_steady_state() {
        let cfg = ExperimentConfig::default();
        let reference = [ReferenceStep { start: 0, level: 12.147 }];
        let log = open_loop_hold(&cfg.plant, &cfg.sampling, &cfg.mpc, &reference, 100, "h")
            .unwrap();
        assert_eq!(log.steps.len(), 100);
        assert!(log.truncation.is_none());
        let y0 = log.steps[0].y;
        for s in &log.steps {
            assert!((s.y - y0).abs() < 1e-6, "drift at {}: {} vs {y0}", s.k, s.y);
            assert_eq!(s.u, log.steps[0].u);
        }
    }

    #[test]
    fn solver_trace_csv_shape() {
        let rows = vec![(
            3usize,
            TracePoint { iteration: 0, j: 1.5, lambda: 0.01, gradient_norm: 0.25 },
        )];
        let csv = solver_trace_to_csv(&rows, "beef");
        assert_eq!(csv, "# config_hash: beef\nk,iter,j,lambda,grad_norm\n3,0,1.5,0.01,0.25\n");
    }
}
