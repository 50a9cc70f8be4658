//! Continuous stirred-tank reactor with two inlet streams.
//!
//! State is the liquid level `h` and the product concentration `cb`. The
//! concentrated stream flow `w1` is the manipulated input; the dilute stream
//! flow is fixed. Outflow is gravity-driven, `outflow_coeff * sqrt(h)`, and
//! the reaction consumes product at rate `k1*cb / (1 + k2*cb)^2`. The level
//! is not controlled; it floats with the total feed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the tank, feeds and reaction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Concentration of the manipulated feed stream.
    pub cb1: f64,
    /// Concentration of the fixed feed stream.
    pub cb2: f64,
    /// Reaction rate constant.
    pub k1: f64,
    /// Reaction saturation constant.
    pub k2: f64,
    /// Flow of the fixed feed stream.
    pub w2_fixed: f64,
    /// Outflow coefficient `c` in `w_out = c * sqrt(h)`.
    pub outflow_coeff: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            cb1: 24.9,
            cb2: 0.1,
            k1: 1.0,
            k2: 1.0,
            w2_fixed: 0.1,
            outflow_coeff: 0.2,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("plant.cb1", self.cb1),
            ("plant.cb2", self.cb2),
            ("plant.k1", self.k1),
            ("plant.k2", self.k2),
            ("plant.w2_fixed", self.w2_fixed),
            ("plant.outflow_coeff", self.outflow_coeff),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name}: must be finite, got {v}")));
            }
        }
        for (name, v) in fields.iter().take(5) {
            if *v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name}: must be nonnegative, got {v}")));
            }
        }
        if self.outflow_coeff <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "plant.outflow_coeff: must be positive, got {}",
                self.outflow_coeff
            )));
        }
        Ok(())
    }
}

/// Tank level and product concentration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    pub h: f64,
    pub cb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub dh_dt: f64,
    pub dcb_dt: f64,
}

fn check_flow(w1: f64) -> Result<()> {
    if !w1.is_finite() || w1 < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "w1: feed flow must be finite and nonnegative, got {w1}"
        )));
    }
    Ok(())
}

/// Right-hand side of the tank dynamics. Pure: no state, same inputs give
/// bit-identical outputs. `h <= 0` is a hard error (tank dry, the model is
/// meaningless there).
pub fn derivatives(state: PlantState, w1: f64, params: &PlantParams) -> Result<StateDerivative> {
    params.validate()?;
    check_flow(w1)?;
    if !(state.h > 0.0) {
        return Err(Error::Dynamics(format!(
            "tank level must stay positive, got h = {}",
            state.h
        )));
    }
    let h = state.h;
    let cb = state.cb;
    let w2 = params.w2_fixed;
    let dh_dt = w1 + w2 - params.outflow_coeff * h.sqrt();
    let sat = 1.0 + params.k2 * cb;
    let dcb_dt = (params.cb1 - cb) * w1 / h + (params.cb2 - cb) * w2 / h
        - params.k1 * cb / (sat * sat);
    Ok(StateDerivative { dh_dt, dcb_dt })
}

fn advance(s: PlantState, d: &StateDerivative, dt: f64) -> PlantState {
    PlantState {
        h: s.h + dt * d.dh_dt,
        cb: s.cb + dt * d.dcb_dt,
    }
}

/// One classical fourth-order Runge-Kutta step with `w1` held constant.
/// Every stage state must keep `h > 0`; a violation reports which stage died.
pub fn rk4_step(state: PlantState, w1: f64, dt: f64, params: &PlantParams) -> Result<PlantState> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidParameter(format!("dt: must be positive, got {dt}")));
    }
    let stage = |s: PlantState, name: &str| {
        derivatives(s, w1, params).map_err(|e| Error::Dynamics(format!("stage {name}: {e}")))
    };
    let d1 = stage(state, "k1")?;
    let d2 = stage(advance(state, &d1, 0.5 * dt), "k2")?;
    let d3 = stage(advance(state, &d2, 0.5 * dt), "k3")?;
    let d4 = stage(advance(state, &d3, dt), "k4")?;
    let next = PlantState {
        h: state.h + dt / 6.0 * (d1.dh_dt + 2.0 * d2.dh_dt + 2.0 * d3.dh_dt + d4.dh_dt),
        cb: state.cb + dt / 6.0 * (d1.dcb_dt + 2.0 * d2.dcb_dt + 2.0 * d3.dcb_dt + d4.dcb_dt),
    };
    if !(next.h > 0.0) || !next.h.is_finite() || !next.cb.is_finite() {
        return Err(Error::Dynamics(format!(
            "step left the physical region: h = {}, cb = {}",
            next.h, next.cb
        )));
    }
    Ok(next)
}

/// Integrates over `duration` with `w1` held constant (zero-order hold),
/// subdividing into fixed substeps. `duration` must be an integer multiple
/// of `substep`.
pub fn integrate(
    state: PlantState,
    w1: f64,
    duration: f64,
    substep: f64,
    params: &PlantParams,
) -> Result<PlantState> {
    if !duration.is_finite() || duration <= 0.0 || !substep.is_finite() || substep <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "integration window: duration {duration} and substep {substep} must be positive"
        )));
    }
    let n = (duration / substep).round();
    if n < 1.0 || (duration - n * substep).abs() > 1e-9 * duration {
        return Err(Error::InvalidParameter(format!(
            "duration {duration} is not an integer multiple of substep {substep}"
        )));
    }
    let mut s = state;
    for i in 0..n as usize {
        s = rk4_step(s, w1, substep, params)
            .map_err(|e| Error::Dynamics(format!("substep {i}: {e}")))?;
    }
    Ok(s)
}

/// Bisection root search on `[lo, hi]`. The interval must straddle a sign
/// change; otherwise the residuals at both ends are reported.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, what: &str) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::Bracket {
            f_lo,
            f_hi,
            what: what.to_string(),
        });
    }
    let tol = 1e-13 * (1.0 + lo.abs() + hi.abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Equilibrium state for a constant feed flow. The level balance is solved in
/// closed form; the concentration balance is solved by bisection over
/// `[0, max(cb1, cb2)]`, where the residual always changes sign.
pub fn steady_state(w1: f64, params: &PlantParams) -> Result<PlantState> {
    params.validate()?;
    check_flow(w1)?;
    let w2 = params.w2_fixed;
    let total = w1 + w2;
    if total <= 0.0 {
        return Err(Error::InvalidParameter(
            "w1 + w2_fixed: total feed must be positive for an equilibrium".to_string(),
        ));
    }
    let h = (total / params.outflow_coeff).powi(2);
    let hi = params.cb1.max(params.cb2);
    if hi <= 0.0 {
        return Ok(PlantState { h, cb: 0.0 });
    }
    let residual = |cb: f64| {
        let sat = 1.0 + params.k2 * cb;
        (params.cb1 - cb) * w1 + (params.cb2 - cb) * w2 - h * params.k1 * cb / (sat * sat)
    };
    let cb = bisect(residual, 0.0, hi, "steady-state concentration")?;
    Ok(PlantState { h, cb })
}

/// Feed flow whose equilibrium concentration equals `cb_target`, searched by
/// bisection over `[w_lo, w_hi]`. Errors if the target lies outside what the
/// flow range can reach.
pub fn steady_input_for(cb_target: f64, params: &PlantParams, w_lo: f64, w_hi: f64) -> Result<f64> {
    params.validate()?;
    if !(w_lo >= 0.0) || !(w_hi > w_lo) || !w_lo.is_finite() || !w_hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "flow bracket [{w_lo}, {w_hi}]: need 0 <= w_lo < w_hi"
        )));
    }
    if w_lo + params.w2_fixed <= 0.0 {
        return Err(Error::InvalidParameter(
            "flow bracket: w_lo + w2_fixed must be positive".to_string(),
        ));
    }
    // steady_state is total on validated params with positive total feed.
    let g = |w: f64| {
        steady_state(w, params)
            .expect("steady_state holds for validated params and positive total feed")
            .cb
            - cb_target
    };
    bisect(g, w_lo, w_hi, "steady feed flow for target concentration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn defaults() -> PlantParams {
        PlantParams::default()
    }

    #[test]
    fn default_constants() {
        let p = defaults();
        assert_eq!(p.cb1, 24.9);
        assert_eq!(p.cb2, 0.1);
        assert_eq!(p.k1, 1.0);
        assert_eq!(p.k2, 1.0);
        assert_eq!(p.w2_fixed, 0.1);
        assert_eq!(p.outflow_coeff, 0.2);
    }

    #[test]
    fn derivatives_worked_example() {
        // By hand: dh = 0.1 + 0.1 - 0.2*1 = 0
        //          dcb = 23.9*0.1 - 0.9*0.1 - 1/4 = 2.39 - 0.09 - 0.25 = 2.05
        let d = derivatives(PlantState { h: 1.0, cb: 1.0 }, 0.1, &defaults()).unwrap();
        assert_relative_eq!(d.dh_dt, 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.dcb_dt, 2.05, epsilon = 1e-12);
    }

    #[test]
    fn derivatives_pure_drain() {
        let p = PlantParams {
            w2_fixed: 0.0,
            ..defaults()
        };
        let d = derivatives(PlantState { h: 1.0, cb: 0.0 }, 0.0, &p).unwrap();
        assert_eq!(d.dh_dt, -0.2);
        assert_eq!(d.dcb_dt, 0.0);
    }

    #[test]
    fn derivatives_rejects_dry_tank() {
        let err = derivatives(PlantState { h: 0.0, cb: 1.0 }, 0.1, &defaults()).unwrap_err();
        assert!(err.to_string().contains("level"), "got: {err}");
        assert!(derivatives(PlantState { h: -1.0, cb: 1.0 }, 0.1, &defaults()).is_err());
    }

    #[test]
    fn derivatives_rejects_negative_flow() {
        assert!(derivatives(PlantState { h: 1.0, cb: 1.0 }, -0.1, &defaults()).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = defaults();
        p.outflow_coeff = 0.0;
        assert!(p.validate().is_err());
        let mut p = defaults();
        p.cb1 = f64::NAN;
        assert!(p.validate().is_err());
        let mut p = defaults();
        p.k1 = -1.0;
        assert!(p.validate().is_err());
    }

    proptest! {
        // Feed terms push cb toward their stream concentrations: with cb strictly
        // between cb2 and cb1, the concentrated stream contributes positively and
        // the dilute stream negatively. Isolated by zeroing the other flow and the
        // reaction.
        #[test]
        fn feed_terms_have_opposite_signs(
            h in 0.05f64..50.0,
            cb in 0.2f64..24.8,
            w1 in 0.01f64..4.0,
            w2 in 0.01f64..4.0,
        ) {
            let base = PlantParams { k1: 0.0, ..defaults() };
            let only_w1 = PlantParams { w2_fixed: 0.0, ..base };
            let d1 = derivatives(PlantState { h, cb }, w1, &only_w1).unwrap();
            prop_assert!(d1.dcb_dt > 0.0);
            let only_w2 = PlantParams { w2_fixed: w2, ..base };
            let d2 = derivatives(PlantState { h, cb }, 0.0, &only_w2).unwrap();
            prop_assert!(d2.dcb_dt < 0.0);
        }

        // The reaction only ever consumes product.
        #[test]
        fn reaction_consumes(h in 0.05f64..50.0, cb in 1e-6f64..24.9) {
            let p = PlantParams { w2_fixed: 0.0, ..defaults() };
            let d = derivatives(PlantState { h, cb }, 0.0, &p).unwrap();
            prop_assert!(d.dcb_dt < 0.0);
        }

        // Level balance closes at h = ((w1+w2)/c)^2 up to roundoff.
        #[test]
        fn level_equilibrium(w1 in 0.0f64..4.0) {
            let p = defaults();
            let h = ((w1 + p.w2_fixed) / p.outflow_coeff).powi(2);
            let d = derivatives(PlantState { h, cb: 1.0 }, w1, &p).unwrap();
            prop_assert!(d.dh_dt.abs() <= 1e-13 * (1.0 + w1 + p.w2_fixed));
        }

        // Pure function: repeated evaluation is bit-identical.
        #[test]
        fn derivatives_is_pure(h in 0.01f64..100.0, cb in 0.0f64..30.0, w1 in 0.0f64..4.0) {
            let a = derivatives(PlantState { h, cb }, w1, &defaults()).unwrap();
            let b = derivatives(PlantState { h, cb }, w1, &defaults()).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rk4_matches_fine_reference_over_one_sample() {
        // Independent oracle: the same dynamics integrated at dt = 1e-4.
        let x0 = PlantState { h: 1.0, cb: 12.147 };
        let coarse = rk4_step(x0, 0.2, 0.2, &defaults()).unwrap();
        let mut refined = x0;
        for _ in 0..2000 {
            refined = rk4_step(refined, 0.2, 1e-4, &defaults()).unwrap();
        }
        assert!(
            (coarse.h - refined.h).abs() < 1e-6 && (coarse.cb - refined.cb).abs() < 1e-6,
            "coarse {coarse:?} vs reference {refined:?}"
        );
    }

    #[test]
    fn rk4_error_shrinks_sixteenfold_when_dt_halves() {
        let x0 = PlantState { h: 1.0, cb: 12.147 };
        let p = defaults();
        let run = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let mut s = x0;
            for _ in 0..n {
                s = rk4_step(s, 0.2, dt, &p).unwrap();
            }
            s
        };
        let reference = run(1e-4);
        let err = |s: PlantState| {
            ((s.h - reference.h).powi(2) + (s.cb - reference.cb).powi(2)).sqrt()
        };
        let e_coarse = err(run(0.1));
        let e_half = err(run(0.05));
        let ratio = e_coarse / e_half;
        assert!(
            (12.0..22.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio} ({e_coarse} vs {e_half})"
        );
    }

    #[test]
    fn integrate_rejects_non_multiple_window() {
        let x0 = PlantState { h: 1.0, cb: 1.0 };
        assert!(integrate(x0, 0.1, 0.25, 0.2, &defaults()).is_err());
        assert!(integrate(x0, 0.1, 0.0, 0.01, &defaults()).is_err());
    }

    #[test]
    fn integrate_reports_substep_on_collapse() {
        // With all feeds shut the tank drains; sqrt(h) hits zero in finite time.
        let p = PlantParams {
            w2_fixed: 0.0,
            ..defaults()
        };
        let x0 = PlantState { h: 1e-4, cb: 1.0 };
        let err = integrate(x0, 0.0, 0.2, 0.01, &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("substep"), "got: {msg}");
    }

    #[test]
    fn steady_state_matches_hand_bisection() {
        // Oracle: at w1 = 0.1 the concentration balance reduces to
        // 2.5 = 0.2*cb + cb/(1+cb)^2, solved here independently.
        let f = |cb: f64| 2.5 - 0.2 * cb - cb / ((1.0 + cb) * (1.0 + cb));
        let (mut lo, mut hi) = (0.0f64, 24.9f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let ss = steady_state(0.1, &defaults()).unwrap();
        assert_eq!(ss.h, 1.0);
        assert!((ss.cb - oracle).abs() < 1e-9, "impl {} vs oracle {oracle}", ss.cb);
        // The balance root is 12.14865...; the conventional quote of the
        // operating point rounds it to ~12.147.
        assert!((ss.cb - 12.147).abs() < 1e-2);
    }

    #[test]
    fn steady_state_is_rk4_fixed_point() {
        let ss = steady_state(0.1, &defaults()).unwrap();
        let mut s = ss;
        for _ in 0..10 {
            s = rk4_step(s, 0.1, 0.2, &defaults()).unwrap();
        }
        assert!((s.h - ss.h).abs() < 1e-9 && (s.cb - ss.cb).abs() < 1e-9);
    }

    #[test]
    fn steady_state_single_feed_without_reaction() {
        // Only the dilute stream feeding and no reaction: the tank settles at
        // the feed concentration.
        let p = PlantParams {
            k1: 0.0,
            ..defaults()
        };
        let ss = steady_state(0.0, &p).unwrap();
        assert_relative_eq!(ss.h, 0.25, epsilon = 1e-12);
        assert_relative_eq!(ss.cb, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn steady_state_needs_positive_total_feed() {
        let p = PlantParams {
            w2_fixed: 0.0,
            ..defaults()
        };
        assert!(steady_state(0.0, &p).is_err());
    }

    #[test]
    fn bisect_reports_signs_when_bracket_is_bad() {
        let err = bisect(|x| x * x + 1.0, -1.0, 1.0, "unit test").unwrap_err();
        match &err {
            Error::Bracket { f_lo, f_hi, .. } => {
                assert_eq!(*f_lo, 2.0);
                assert_eq!(*f_hi, 2.0);
            }
            other => panic!("expected bracket error, got {other}"),
        }
        let msg = err.to_string();
        assert!(msg.contains("+2e0"), "got: {msg}");
    }

    #[test]
    fn steady_input_recovers_operating_flow() {
        let ss = steady_state(0.1, &defaults()).unwrap();
        let w = steady_input_for(ss.cb, &defaults(), 0.0, 4.0).unwrap();
        assert!((w - 0.1).abs() < 1e-9, "got {w}");
    }

    #[test]
    fn steady_input_rejects_unreachable_target() {
        let err = steady_input_for(30.0, &defaults(), 0.0, 4.0).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }), "got {err}");
    }

    proptest! {
        // Monotone approach: from the old equilibrium, a step up in feed flow
        // raises the concentration derivative immediately.
        #[test]
        fn step_up_raises_concentration(w_new in 0.15f64..1.0) {
            let ss = steady_state(0.1, &defaults()).unwrap();
            let d = derivatives(ss, w_new, &defaults()).unwrap();
            prop_assert!(d.dcb_dt > 0.0);
        }
    }
}
