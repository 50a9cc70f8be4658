//! Lagged-regressor neural one-step predictor.
//!
//! The predictor maps recent outputs and inputs to the next output:
//! `yhat(k+1) = f(y(k), ..., y(k-ny+1), u(k-delay+1), ..., u(k-delay-nu+2))`.
//! One hidden sigmoid layer feeds a linear output unit; inputs and the
//! output are affinely scaled so training sees values near [-1, 1]. Multi
//! step prediction feeds predictions back into the regressor, which is what
//! the horizon controller differentiates through.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lag structure of the regressor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    /// Number of past outputs fed to the network.
    pub ny: usize,
    /// Number of past inputs fed to the network.
    pub nu: usize,
    /// Input transport delay in samples: the freshest input entry is
    /// `u(k - delay + 1)`.
    pub delay: usize,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec { ny: 2, nu: 2, delay: 1 }
    }
}

impl RegressorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ny < 1 {
            return Err(Error::InvalidParameter("narx.ny: must be at least 1".into()));
        }
        if self.nu < 1 {
            return Err(Error::InvalidParameter("narx.nu: must be at least 1".into()));
        }
        if self.delay < 1 {
            return Err(Error::InvalidParameter("narx.delay: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.ny + self.nu
    }

    /// Output samples a one-step regressor needs (history ending at `y(k)`).
    pub fn min_past_outputs(&self) -> usize {
        self.ny
    }

    /// Input samples a one-step regressor needs (history ending at `u(k)`).
    pub fn min_past_inputs(&self) -> usize {
        self.nu + self.delay - 1
    }
}

/// Builds the regressor for predicting `y(k+1)` from histories that end at
/// time `k`: `past_y` ends with `y(k)`, `past_u` ends with `u(k)`. Ordering
/// is newest-first outputs, then newest-first inputs starting at the delay.
pub fn regressor(past_y: &[f64], past_u: &[f64], spec: &RegressorSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if past_y.len() < spec.min_past_outputs() {
        return Err(Error::Dimension(format!(
            "regressor needs {} past outputs, got {}",
            spec.min_past_outputs(),
            past_y.len()
        )));
    }
    if past_u.len() < spec.min_past_inputs() {
        return Err(Error::Dimension(format!(
            "regressor needs {} past inputs, got {}",
            spec.min_past_inputs(),
            past_u.len()
        )));
    }
    let mut reg = Vec::with_capacity(spec.input_width());
    for m in 0..spec.ny {
        reg.push(past_y[past_y.len() - 1 - m]);
    }
    for l in 0..spec.nu {
        reg.push(past_u[past_u.len() - spec.delay - l]);
    }
    Ok(reg)
}

/// Invertible affine map `x -> scale*x + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineScale {
    pub scale: f64,
    pub offset: f64,
}

impl AffineScale {
    pub fn identity() -> Self {
        AffineScale { scale: 1.0, offset: 0.0 }
    }

    /// Map fitted so `[min, max]` lands on `[-1, 1]`. A degenerate range
    /// (constant signal) falls back to pure centering so the map stays
    /// invertible.
    pub fn from_range(min: f64, max: f64) -> Self {
        let width = max - min;
        if !(width > f64::EPSILON * (1.0 + min.abs() + max.abs())) {
            return AffineScale { scale: 1.0, offset: -0.5 * (min + max) };
        }
        AffineScale {
            scale: 2.0 / width,
            offset: -(max + min) / width,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn invert(&self, z: f64) -> f64 {
        (z - self.offset) / self.scale
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || !self.offset.is_finite() || self.scale == 0.0 {
            return Err(Error::Model(format!(
                "scaling must be finite with nonzero scale, got scale {} offset {}",
                self.scale, self.offset
            )));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Measured past needed to anchor horizon predictions at time `k`:
/// `y` ends with the current measurement `y(k)`, `u` ends with the
/// previously applied input `u(k-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

/// Anything the horizon controller can optimize against: a multi-step
/// predictor with sensitivities of every predicted output to every future
/// input.
pub trait HorizonModel {
    /// Input transport delay in samples.
    fn delay(&self) -> usize;

    /// Minimum `(outputs, inputs)` a `History` must hold.
    fn required_history(&self) -> (usize, usize);

    /// Predicts `yhat(k+1) ..= yhat(k+n2)` under the candidate inputs
    /// `future_u[j] = u(k+j)`; `future_u` must cover the horizon (`n2`
    /// entries).
    fn predict_horizon(&self, hist: &History, future_u: &[f64], n2: usize) -> Result<Vec<f64>>;

    /// Sensitivity matrix `S[i-1][j] = d yhat(k+i) / d u(k+j)` for
    /// `i = 1..=n2`, `j = 0..n2`. Entries with `j > i - delay` are zero:
    /// an input cannot influence outputs before the transport delay.
    fn jacobian_output_wrt_u(&self, hist: &History, future_u: &[f64], n2: usize)
        -> Result<DMatrix<f64>>;
}

/// One-hidden-layer sigmoid network over the lagged regressor, with affine
/// input/output scaling baked into the model file.
#[derive(Clone, Debug, PartialEq)]
pub struct NarxModel {
    pub spec: RegressorSpec,
    /// Hidden weights, one row per hidden unit, one column per regressor entry.
    pub w_hidden: DMatrix<f64>,
    pub b_hidden: DVector<f64>,
    pub w_output: DVector<f64>,
    pub b_output: f64,
    /// Per-regressor-entry scaling applied before the network.
    pub input_scale: Vec<AffineScale>,
    /// Scaling of the physical output into training space.
    pub output_scale: AffineScale,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl NarxModel {
    /// All weights and biases zero, identity scaling.
    pub fn zeroed(spec: RegressorSpec, hidden_width: usize) -> Self {
        let ni = spec.input_width();
        NarxModel {
            spec,
            w_hidden: DMatrix::zeros(hidden_width, ni),
            b_hidden: DVector::zeros(hidden_width),
            w_output: DVector::zeros(hidden_width),
            b_output: 0.0,
            input_scale: vec![AffineScale::identity(); ni],
            output_scale: AffineScale::identity(),
        }
    }

    /// Small random initial weights, uniform in [-0.5, 0.5), reproducible
    /// per seed. Scaling starts as identity and is fitted from data later.
    pub fn init_random(spec: RegressorSpec, hidden_width: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = NarxModel::zeroed(spec, hidden_width);
        for r in 0..hidden_width {
            for c in 0..spec.input_width() {
                m.w_hidden[(r, c)] = rng.gen_range(-0.5..0.5);
            }
        }
        for r in 0..hidden_width {
            m.b_hidden[r] = rng.gen_range(-0.5..0.5);
        }
        for r in 0..hidden_width {
            m.w_output[r] = rng.gen_range(-0.5..0.5);
        }
        m.b_output = rng.gen_range(-0.5..0.5);
        m
    }

    pub fn hidden_width(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let h = self.hidden_width();
        let ni = self.spec.input_width();
        if h == 0 {
            return Err(Error::Model("hidden layer must have at least one unit".into()));
        }
        if self.w_hidden.ncols() != ni
            || self.b_hidden.len() != h
            || self.w_output.len() != h
            || self.input_scale.len() != ni
        {
            return Err(Error::Model(format!(
                "inconsistent dimensions: {} inputs, hidden {}x{}, {} hidden biases, {} output weights, {} input scalers",
                ni,
                self.w_hidden.nrows(),
                self.w_hidden.ncols(),
                self.b_hidden.len(),
                self.w_output.len(),
                self.input_scale.len()
            )));
        }
        let finite = self.w_hidden.iter().all(|v| v.is_finite())
            && self.b_hidden.iter().all(|v| v.is_finite())
            && self.w_output.iter().all(|v| v.is_finite())
            && self.b_output.is_finite();
        if !finite {
            return Err(Error::Model("weights must all be finite".into()));
        }
        for s in &self.input_scale {
            s.validate()?;
        }
        self.output_scale.validate()
    }

    fn check_reg(&self, reg: &[f64]) -> Result<()> {
        if reg.len() != self.spec.input_width() {
            return Err(Error::Dimension(format!(
                "regressor has {} entries, model expects {}",
                reg.len(),
                self.spec.input_width()
            )));
        }
        Ok(())
    }

    /// Hidden activations for a raw (unscaled) regressor.
    fn hidden(&self, reg: &[f64]) -> DVector<f64> {
        let h = self.hidden_width();
        let mut a = DVector::zeros(h);
        for r in 0..h {
            let mut z = self.b_hidden[r];
            for (c, x) in reg.iter().enumerate() {
                z += self.w_hidden[(r, c)] * self.input_scale[c].apply(*x);
            }
            a[r] = sigmoid(z);
        }
        a
    }

    /// Network output in training space (scaled target units).
    pub fn forward_scaled(&self, reg: &[f64]) -> Result<f64> {
        self.check_reg(reg)?;
        let a = self.hidden(reg);
        Ok(self.w_output.dot(&a) + self.b_output)
    }

    /// One-step prediction in physical units: scale the regressor, run the
    /// network, unscale the output.
    pub fn forward(&self, reg: &[f64]) -> Result<f64> {
        Ok(self.output_scale.invert(self.forward_scaled(reg)?))
    }

    /// Training-space output together with its gradient with respect to the
    /// packed weight vector (see [`NarxModel::weights_packed`] for the
    /// layout). The output-bias component is always exactly 1.
    pub fn gradient_wrt_weights(&self, reg: &[f64]) -> Result<(f64, DVector<f64>)> {
        self.check_reg(reg)?;
        let h = self.hidden_width();
        let ni = self.spec.input_width();
        let a = self.hidden(reg);
        let out = self.w_output.dot(&a) + self.b_output;
        let mut g = DVector::zeros(self.weight_count());
        for r in 0..h {
            // d out / d z_r through the sigmoid.
            let dz = self.w_output[r] * a[r] * (1.0 - a[r]);
            for c in 0..ni {
                g[r * ni + c] = dz * self.input_scale[c].apply(reg[c]);
            }
            g[h * ni + r] = dz;
            g[h * ni + h + r] = a[r];
        }
        g[h * ni + 2 * h] = 1.0;
        Ok((out, g))
    }

    /// Physical-units prediction together with its gradient with respect to
    /// each raw regressor entry. This is the single-step kernel the horizon
    /// sensitivity recursion chains through.
    pub fn forward_with_input_gradient(&self, reg: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_reg(reg)?;
        let h = self.hidden_width();
        let ni = self.spec.input_width();
        let a = self.hidden(reg);
        let out = self.w_output.dot(&a) + self.b_output;
        let mut g = vec![0.0; ni];
        for r in 0..h {
            let dz = self.w_output[r] * a[r] * (1.0 - a[r]);
            for (c, gc) in g.iter_mut().enumerate() {
                *gc += dz * self.w_hidden[(r, c)] * self.input_scale[c].scale;
            }
        }
        for (c, gc) in g.iter_mut().enumerate() {
            let _ = c;
            *gc /= self.output_scale.scale;
        }
        Ok((self.output_scale.invert(out), g))
    }

    /// Number of trainable parameters.
    pub fn weight_count(&self) -> usize {
        let h = self.hidden_width();
        h * self.spec.input_width() + 2 * h + 1
    }

    /// Flattens weights as [hidden rows, hidden biases, output weights,
    /// output bias].
    pub fn weights_packed(&self) -> DVector<f64> {
        let h = self.hidden_width();
        let ni = self.spec.input_width();
        let mut v = DVector::zeros(self.weight_count());
        for r in 0..h {
            for c in 0..ni {
                v[r * ni + c] = self.w_hidden[(r, c)];
            }
        }
        for r in 0..h {
            v[h * ni + r] = self.b_hidden[r];
            v[h * ni + h + r] = self.w_output[r];
        }
        v[h * ni + 2 * h] = self.b_output;
        v
    }

    pub fn set_weights_packed(&mut self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.weight_count() {
            return Err(Error::Dimension(format!(
                "packed weight vector has {} entries, model needs {}",
                v.len(),
                self.weight_count()
            )));
        }
        let h = self.hidden_width();
        let ni = self.spec.input_width();
        for r in 0..h {
            for c in 0..ni {
                self.w_hidden[(r, c)] = v[r * ni + c];
            }
        }
        for r in 0..h {
            self.b_hidden[r] = v[h * ni + r];
            self.w_output[r] = v[h * ni + h + r];
        }
        self.b_output = v[h * ni + 2 * h];
        Ok(())
    }

    fn check_horizon_args(&self, hist: &History, future_u: &[f64], n2: usize) -> Result<()> {
        if n2 < 1 {
            return Err(Error::InvalidParameter("horizon n2 must be at least 1".into()));
        }
        let (need_y, need_u) = self.required_history();
        if hist.y.len() < need_y || hist.u.len() < need_u {
            return Err(Error::Dimension(format!(
                "history holds {} outputs and {} inputs, model needs at least {} and {}",
                hist.y.len(),
                hist.u.len(),
                need_y,
                need_u
            )));
        }
        if future_u.len() < n2 {
            return Err(Error::Dimension(format!(
                "future input sequence has {} entries, horizon needs {}",
                future_u.len(),
                n2
            )));
        }
        Ok(())
    }

    /// Shared recursion for prediction and sensitivities. `sens` is filled
    /// with `d yhat(k+i) / d u(k+j)` when requested.
    fn roll_horizon(
        &self,
        hist: &History,
        future_u: &[f64],
        n2: usize,
        mut sens: Option<&mut DMatrix<f64>>,
    ) -> Result<Vec<f64>> {
        self.check_horizon_args(hist, future_u, n2)?;
        let ny = self.spec.ny;
        let nu = self.spec.nu;
        let delay = self.spec.delay;
        let hu = hist.u.len();
        let mut y_ext = hist.y.clone();
        let mut u_ext = Vec::with_capacity(hu + n2);
        u_ext.extend_from_slice(&hist.u);
        u_ext.extend_from_slice(&future_u[..n2]);
        let base_y = hist.y.len();
        let mut preds = Vec::with_capacity(n2);
        for i in 1..=n2 {
            let reg = regressor(&y_ext, &u_ext[..hu + i], &self.spec)?;
            match sens.as_deref_mut() {
                None => {
                    preds.push(self.forward(&reg)?);
                }
                Some(s) => {
                    let (yh, g) = self.forward_with_input_gradient(&reg)?;
                    preds.push(yh);
                    let row = i - 1;
                    // Feedback of earlier predictions through the output lags.
                    for m in 0..ny {
                        if i >= m + 2 {
                            let src = i - 2 - m;
                            for j in 0..n2 {
                                let add = g[m] * s[(src, j)];
                                s[(row, j)] += add;
                            }
                        }
                    }
                    // Direct dependence on future inputs at the delay.
                    for l in 0..nu {
                        let t = i as isize - delay as isize - l as isize;
                        if t >= 0 {
                            s[(row, t as usize)] += g[ny + l];
                        }
                    }
                }
            }
            y_ext.push(preds[i - 1]);
        }
        debug_assert_eq!(y_ext.len(), base_y + n2);
        Ok(preds)
    }
}

impl HorizonModel for NarxModel {
    fn delay(&self) -> usize {
        self.spec.delay
    }

    fn required_history(&self) -> (usize, usize) {
        (self.spec.ny, self.spec.nu + self.spec.delay - 2)
    }

    fn predict_horizon(&self, hist: &History, future_u: &[f64], n2: usize) -> Result<Vec<f64>> {
        self.roll_horizon(hist, future_u, n2, None)
    }

    fn jacobian_output_wrt_u(
        &self,
        hist: &History,
        future_u: &[f64],
        n2: usize,
    ) -> Result<DMatrix<f64>> {
        let mut s = DMatrix::zeros(n2, n2);
        self.roll_horizon(hist, future_u, n2, Some(&mut s))?;
        Ok(s)
    }
}

/// On-disk layout: plain nested arrays so the file is readable and survives
/// byte-identical round trips.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    /// Provenance tag: hash of the configuration that produced the model,
    /// or a caller-chosen marker for hand-built files. Ignored on load.
    config_hash: String,
    spec: RegressorSpec,
    input_scale: Vec<AffineScale>,
    output_scale: AffineScale,
    w_hidden: Vec<Vec<f64>>,
    b_hidden: Vec<f64>,
    w_output: Vec<f64>,
    b_output: f64,
}

impl NarxModel {
    pub fn to_json(&self, config_hash: &str) -> Result<String> {
        self.validate()?;
        let h = self.hidden_width();
        let ni = self.spec.input_width();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            config_hash: config_hash.to_owned(),
            spec: self.spec,
            input_scale: self.input_scale.clone(),
            output_scale: self.output_scale,
            w_hidden: (0..h)
                .map(|r| (0..ni).map(|c| self.w_hidden[(r, c)]).collect())
                .collect(),
            b_hidden: self.b_hidden.iter().copied().collect(),
            w_output: self.w_output.iter().copied().collect(),
            b_output: self.b_output,
        };
        serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Model(format!("serialize: {e}")))
            .map(|mut s| {
                s.push('\n');
                s
            })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("parse: {e}")))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unknown format version {}, this build reads version {}",
                file.format_version, MODEL_FORMAT_VERSION
            )));
        }
        let h = file.w_hidden.len();
        let ni = file.spec.input_width();
        if file.w_hidden.iter().any(|row| row.len() != ni) {
            return Err(Error::Model(format!(
                "hidden weight rows must all have {ni} entries"
            )));
        }
        let model = NarxModel {
            spec: file.spec,
            w_hidden: DMatrix::from_fn(h, ni, |r, c| file.w_hidden[r][c]),
            b_hidden: DVector::from_vec(file.b_hidden),
            w_output: DVector::from_vec(file.w_output),
            b_output: file.b_output,
            input_scale: file.input_scale,
            output_scale: file.output_scale,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path, config_hash: &str) -> Result<()> {
        crate::fsio::write_atomic(path, self.to_json(config_hash)?.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile { path: path.display().to_string() }
            } else {
                Error::Io(e)
            }
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Model(msg) => Error::Model(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
