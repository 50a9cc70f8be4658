//! Receding-horizon control on top of a one-step predictor.
//!
//! Each sampling instant minimizes
//! `J = sum_{i=n1..n2} (r(k+i) - yhat(k+i))^2 + rho * sum_{j=1..nu} du_j^2`
//! over `nu` free moves, the last of which holds to the end of the horizon.
//! The minimizer is a damped Gauss-Newton loop with iterates projected onto
//! the input bounds; the first move of the solution is applied and the rest
//! seeds the next step's warm start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narx::{History, HorizonModel};

/// Horizon and solver settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// First costed prediction step.
    pub n1: usize,
    /// Last costed prediction step (the horizon).
    pub n2: usize,
    /// Free control moves; the final move holds for the rest of the horizon.
    pub nu: usize,
    /// Move-suppression weight.
    pub rho: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub max_lm_iterations: usize,
    /// Initial damping.
    pub lambda0: f64,
    /// Stop once the cost gradient norm falls below this.
    pub tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            n1: 1,
            n2: 7,
            nu: 2,
            rho: 0.05,
            u_min: 0.0,
            u_max: 4.0,
            max_lm_iterations: 50,
            lambda0: 1e-2,
            tol: 1e-9,
        }
    }
}

impl MpcConfig {
    /// Checks the horizon against the model's input-to-output delay: a move
    /// later than `n2 - delay` cannot influence any costed output, so
    /// `nu <= n2 - delay + 1` is required for the problem to be well posed.
    pub fn validate_for(&self, delay: usize) -> Result<()> {
        if self.n1 < 1 || self.n1 > self.n2 {
            return Err(Error::InvalidParameter(format!(
                "mpc.n1: need 1 <= n1 <= n2, got n1={} n2={}",
                self.n1, self.n2
            )));
        }
        if self.nu < 1 {
            return Err(Error::InvalidParameter("mpc.nu: must be at least 1".into()));
        }
        if self.nu + delay > self.n2 + 1 {
            return Err(Error::InvalidParameter(format!(
                "mpc.nu: {} free moves with delay {} exceed the horizon n2={}; moves past n2-delay+1 are never costed",
                self.nu, delay, self.n2
            )));
        }
        if !self.rho.is_finite() || self.rho < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mpc.rho: must be finite and non-negative, got {}",
                self.rho
            )));
        }
        if !self.u_min.is_finite() || !self.u_max.is_finite() || self.u_min >= self.u_max {
            return Err(Error::InvalidParameter(format!(
                "mpc.u_min/u_max: need u_min < u_max and finite, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if self.max_lm_iterations < 1 {
            return Err(Error::InvalidParameter("mpc.max_lm_iterations: must be at least 1".into()));
        }
        if !self.lambda0.is_finite() || self.lambda0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mpc.lambda0: must be positive, got {}",
                self.lambda0
            )));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mpc.tol: must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Spreads `nu` moves over the horizon: `u(k+i) = u_seq[min(i, nu-1)]`.
pub fn expand_controls(u_seq: &[f64], n2: usize) -> Vec<f64> {
    (0..n2).map(|i| u_seq[i.min(u_seq.len() - 1)]).collect()
}

/// Jacobian of [`expand_controls`]: `n2 x nu`, one unit entry per row.
fn expansion_matrix(n2: usize, nu: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n2, nu);
    for i in 0..n2 {
        e[(i, i.min(nu - 1))] = 1.0;
    }
    e
}

/// First-difference operator on the move sequence; the row for the first
/// move differences against the previously applied input, handled via the
/// constant subtracted in [`move_deltas`].
fn difference_matrix(nu: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(nu, nu);
    for j in 0..nu {
        d[(j, j)] = 1.0;
        if j > 0 {
            d[(j, j - 1)] = -1.0;
        }
    }
    d
}

fn move_deltas(u_seq: &[f64], u_prev: f64) -> DVector<f64> {
    DVector::from_iterator(
        u_seq.len(),
        u_seq.iter().enumerate().map(|(j, &u)| if j == 0 { u - u_prev } else { u - u_seq[j - 1] }),
    )
}

fn check_reference_len(r: &[f64], cfg: &MpcConfig) -> Result<()> {
    let want = cfg.n2 - cfg.n1 + 1;
    if r.len() != want {
        return Err(Error::Dimension(format!(
            "reference holds {} entries, horizon n1={}..n2={} needs {want}",
            r.len(),
            cfg.n1,
            cfg.n2
        )));
    }
    Ok(())
}

/// Evaluates the horizon cost at a move sequence. Returns the cost and the
/// model's predictions over steps `1..=n2`.
pub fn cost<M: HorizonModel + ?Sized>(
    model: &M,
    hist: &History,
    r: &[f64],
    u_seq: &[f64],
    u_prev: f64,
    cfg: &MpcConfig,
) -> Result<(f64, Vec<f64>)> {
    check_reference_len(r, cfg)?;
    if u_seq.len() != cfg.nu {
        return Err(Error::Dimension(format!(
            "move sequence holds {} entries, expected nu={}",
            u_seq.len(),
            cfg.nu
        )));
    }
    let expanded = expand_controls(u_seq, cfg.n2);
    let preds = model.predict_horizon(hist, &expanded, cfg.n2)?;
    let mut j = 0.0;
    for i in cfg.n1..=cfg.n2 {
        let e = r[i - cfg.n1] - preds[i - 1];
        j += e * e;
    }
    let du = move_deltas(u_seq, u_prev);
    j += cfg.rho * du.dot(&du);
    Ok((j, preds))
}

/// Gradient and Gauss-Newton Hessian of the horizon cost with respect to
/// the move sequence. For a predictor linear in the inputs the Hessian is
/// exact; otherwise it drops the second-order prediction terms, which is
/// what keeps the damped solve positive semi-definite.
pub fn cost_gradient_hessian<M: HorizonModel + ?Sized>(
    model: &M,
    hist: &History,
    r: &[f64],
    u_seq: &[f64],
    u_prev: f64,
    cfg: &MpcConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_reference_len(r, cfg)?;
    let expanded = expand_controls(u_seq, cfg.n2);
    let preds = model.predict_horizon(hist, &expanded, cfg.n2)?;
    let s = model.jacobian_output_wrt_u(hist, &expanded, cfg.n2)?;
    let phi_full = s * expansion_matrix(cfg.n2, cfg.nu);
    let rows = cfg.n2 - cfg.n1 + 1;
    let phi = phi_full.rows(cfg.n1 - 1, rows).into_owned();
    let e = DVector::from_iterator(rows, (0..rows).map(|q| r[q] - preds[cfg.n1 - 1 + q]));
    let d = difference_matrix(cfg.nu);
    let du = move_deltas(u_seq, u_prev);
    let g = phi.tr_mul(&e) * -2.0 + d.tr_mul(&du) * (2.0 * cfg.rho);
    let h = phi.tr_mul(&phi) * 2.0 + d.tr_mul(&d) * (2.0 * cfg.rho);
    Ok((g, h))
}

/// One record per solver state visited: the entry point and every accepted
/// iterate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub j: f64,
    pub lambda: f64,
    pub gradient_norm: f64,
}

/// Result of one horizon optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSolution {
    /// Optimized move sequence, `nu` entries inside the input bounds.
    pub u_sequence: Vec<f64>,
    pub j_value: f64,
    /// Accepted solver iterations.
    pub iterations: usize,
    /// Cost gradient norm at the returned sequence.
    pub gradient_norm: f64,
    /// Model predictions over `1..=n2` at the returned sequence.
    pub predicted_y: Vec<f64>,
}

const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 10.0;
const LAMBDA_MAX: f64 = 1e10;
const LAMBDA_MIN: f64 = 1e-12;

fn clamp_seq(u: &mut [f64], lo: f64, hi: f64) {
    for v in u.iter_mut() {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes the horizon cost from a warm start (or from the held input).
///
/// Damped Gauss-Newton with projection: each trial step solves
/// `(H + lambda*I) d = -G`, clamps the candidate onto the input bounds and
/// accepts only a strict cost decrease; `lambda` divides by 10 on success
/// and multiplies by 10 on rejection. The loop stops at the gradient
/// tolerance, the iteration cap, or once damping exceeds 1e10 with the best
/// iterate so far.
pub fn solve<M: HorizonModel + ?Sized>(
    model: &M,
    hist: &History,
    r: &[f64],
    u_prev: f64,
    warm: Option<&[f64]>,
    cfg: &MpcConfig,
    mut trace: Option<&mut Vec<TracePoint>>,
) -> Result<ControlSolution> {
    cfg.validate_for(model.delay())?;
    check_reference_len(r, cfg)?;
    let mut u: Vec<f64> = match warm {
        Some(w) => {
            if w.len() != cfg.nu {
                return Err(Error::Dimension(format!(
                    "warm start holds {} moves, expected nu={}",
                    w.len(),
                    cfg.nu
                )));
            }
            w.to_vec()
        }
        None => vec![u_prev; cfg.nu],
    };
    clamp_seq(&mut u, cfg.u_min, cfg.u_max);

    let (mut j, mut preds) = cost(model, hist, r, &u, u_prev, cfg)?;
    if !j.is_finite() {
        return Err(Error::Solver("non-finite cost at the starting sequence".into()));
    }
    let mut lambda = cfg.lambda0;
    let mut accepted = 0usize;
    let mut grad_norm;

    loop {
        let (g, h) = cost_gradient_hessian(model, hist, r, &u, u_prev, cfg)?;
        grad_norm = g.norm();
        if let Some(t) = trace.as_deref_mut() {
            t.push(TracePoint { iteration: accepted, j, lambda, gradient_norm: grad_norm });
        }
        if grad_norm <= cfg.tol || accepted >= cfg.max_lm_iterations {
            break;
        }
        let neg_g = -&g;
        let mut stepped = false;
        while !stepped {
            let delta = crate::training::solve_damped(&h, &neg_g, lambda);
            let improved = delta.and_then(|d| {
                let mut cand: Vec<f64> = u.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                clamp_seq(&mut cand, cfg.u_min, cfg.u_max);
                match cost(model, hist, r, &cand, u_prev, cfg) {
                    Ok((jc, pc)) if jc.is_finite() && jc < j => Some((cand, jc, pc)),
                    _ => None,
                }
            });
            match improved {
                Some((cand, jc, pc)) => {
                    u = cand;
                    j = jc;
                    preds = pc;
                    accepted += 1;
                    lambda = (lambda / LAMBDA_DOWN).max(LAMBDA_MIN);
                    stepped = true;
                }
                None => {
                    lambda *= LAMBDA_UP;
                    if lambda > LAMBDA_MAX {
                        // No improving step at maximal damping: the current
                        // iterate is the best this loop can certify (it may
                        // sit on an active bound).
                        return Ok(ControlSolution {
                            u_sequence: u,
                            j_value: j,
                            iterations: accepted,
                            gradient_norm: grad_norm,
                            predicted_y: preds,
                        });
                    }
                }
            }
        }
    }
    Ok(ControlSolution {
        u_sequence: u,
        j_value: j,
        iterations: accepted,
        gradient_norm: grad_norm,
        predicted_y: preds,
    })
}

/// Closed-loop state: the measurement/input history the predictor needs,
/// the previously applied input, and the last solution for warm starting.
#[derive(Clone, Debug)]
pub struct Controller {
    cfg: MpcConfig,
    hist: History,
    u_prev: f64,
    last: Option<ControlSolution>,
}

impl Controller {
    /// Seeds the history as if the loop had been sitting at `(y0, u0)`
    /// forever, which is exact when starting from a steady state.
    pub fn new<M: HorizonModel + ?Sized>(
        cfg: MpcConfig,
        model: &M,
        y0: f64,
        u0: f64,
    ) -> Result<Self> {
        cfg.validate_for(model.delay())?;
        if !y0.is_finite() || !u0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "controller start: y0 and u0 must be finite, got ({y0}, {u0})"
            )));
        }
        let (need_y, need_u) = model.required_history();
        Ok(Controller {
            cfg,
            hist: History { y: vec![y0; need_y], u: vec![u0; need_u] },
            u_prev: u0,
            last: None,
        })
    }

    pub fn history(&self) -> &History {
        &self.hist
    }

    pub fn last_solution(&self) -> Option<&ControlSolution> {
        self.last.as_ref()
    }

    /// One sampling instant: record the measurement, optimize the horizon
    /// (warm-started from the shifted previous solution), commit the first
    /// move. Returns the applied input and the full solution.
    pub fn step<M: HorizonModel + ?Sized>(
        &mut self,
        model: &M,
        y_k: f64,
        r_horizon: &[f64],
        trace: Option<&mut Vec<TracePoint>>,
    ) -> Result<(f64, ControlSolution)> {
        let (need_y, need_u) = model.required_history();
        self.hist.y.push(y_k);
        if self.hist.y.len() > need_y {
            let cut = self.hist.y.len() - need_y;
            self.hist.y.drain(..cut);
        }
        let warm: Option<Vec<f64>> = self.last.as_ref().map(|s| {
            (0..self.cfg.nu)
                .map(|q| s.u_sequence[(q + 1).min(self.cfg.nu - 1)])
                .collect()
        });
        let sol = solve(model, &self.hist, r_horizon, self.u_prev, warm.as_deref(), &self.cfg, trace)?;
        let u_k = sol.u_sequence[0];
        self.hist.u.push(u_k);
        if self.hist.u.len() > need_u {
            let cut = self.hist.u.len() - need_u;
            self.hist.u.drain(..cut);
        }
        self.u_prev = u_k;
        self.last = Some(sol.clone());
        Ok((u_k, sol))
    }
}
