//! Per-round choice of the local step count `I_t` and compression budget
//! `ε_t`.
//!
//! The default law anchors at the first round:
//! `I_t = (F_t/F₀)^{1/3} I₀` and `ε_t = (F₀/F_t)^{1/3} ε₀`, so as the loss
//! falls the clients communicate more often and with finer updates. A
//! stationary-point mode that solves the two bound-minimising equations with
//! online variance estimates is available as an alternative.

use serde::{Deserialize, Serialize};

use crate::bound::{self, BoundParams};
use crate::{Error, Result};

/// Clamp ranges applied after the raw law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamps {
    pub i_min: u32,
    pub i_max: u32,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl Default for Clamps {
    fn default() -> Self {
        Self { i_min: 1, i_max: 30, eps_min: 4.0, eps_max: 8.0 }
    }
}

impl Clamps {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.i_min && self.i_min <= self.i_max) {
            return Err(Error::config(format!("need 1 <= i_min <= i_max, got [{}, {}]", self.i_min, self.i_max)));
        }
        if !(0.0 < self.eps_min && self.eps_min <= self.eps_max && self.eps_max.is_finite()) {
            return Err(Error::config(format!("need 0 < eps_min <= eps_max, got [{}, {}]", self.eps_min, self.eps_max)));
        }
        Ok(())
    }

    /// Round half up, then clamp.
    pub fn steps(&self, raw: f64) -> u32 {
        let rounded = (raw + 0.5).floor();
        if rounded.is_nan() || rounded < self.i_min as f64 {
            self.i_min
        } else if rounded > self.i_max as f64 {
            self.i_max
        } else {
            rounded as u32
        }
    }

    pub fn budget(&self, raw: f64) -> f64 {
        raw.clamp(self.eps_min, self.eps_max)
    }
}

/// Anchor values and clamps of the cube-root law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub i0: f64,
    pub eps0: f64,
    /// Loss at the anchor point.
    pub f_w0: f64,
    pub clamps: Clamps,
    /// Most recent global loss fed to [`schedule`].
    pub last_f: f64,
}

impl ControllerState {
    pub fn new(i0: f64, eps0: f64, f_w0: f64, clamps: Clamps) -> Result<Self> {
        clamps.validate()?;
        if !(i0 > 0.0 && eps0 > 0.0) {
            return Err(Error::config("I0 and eps0 must be positive"));
        }
        if !(f_w0 > 0.0 && f_w0.is_finite()) {
            return Err(Error::domain(format!("initial loss must be positive, got {f_w0}")));
        }
        Ok(Self { i0, eps0, f_w0, clamps, last_f: f_w0 })
    }
}

/// Output of one controller decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub local_steps: u32,
    pub eps: f64,
    /// Unclamped, unrounded values of the law.
    pub raw_i: f64,
    pub raw_eps: f64,
}

/// Cube-root schedule anchored at `(F₀, I₀, ε₀)`. A loss of exactly zero
/// takes the limit of the law: fewest local steps, largest budget.
pub fn schedule(state: &ControllerState, f_wt: f64) -> Result<Schedule> {
    if !(f_wt >= 0.0 && f_wt.is_finite()) {
        return Err(Error::domain(format!("loss must be non-negative and finite, got {f_wt}")));
    }
    let raw_i = (f_wt / state.f_w0).cbrt() * state.i0;
    let raw_eps = (state.f_w0 / f_wt).cbrt() * state.eps0;
    Ok(Schedule { local_steps: state.clamps.steps(raw_i), eps: state.clamps.budget(raw_eps), raw_i, raw_eps })
}

/// One chained step of the law from `(F_prev, I_prev, ε_prev)`.
pub fn ratio_step(f_prev: f64, f_next: f64, i_prev: f64, eps_prev: f64) -> Result<(f64, f64)> {
    if !(f_prev > 0.0 && f_next > 0.0) {
        return Err(Error::domain(format!("losses must be positive, got {f_prev} and {f_next}")));
    }
    Ok((i_prev * (f_next / f_prev).cbrt(), eps_prev * (f_prev / f_next).cbrt()))
}

/// Square-root factors of the uncoupled ratio updates that the cube-root law
/// drops; both are 1 when the approximations are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscardedFactors {
    /// `sqrt((δ₁ + δ₂ε_t)/(δ₁ + δ₂ε_{t+1}))`.
    pub variance_factor: f64,
    /// `sqrt((1 − ηL(I_{t+1} − 1))/(1 − ηL(I_t − 1)))`.
    pub drift_factor: f64,
}

pub fn discarded_factors(prev: (f64, f64), next: (f64, f64), delta1: f64, delta2: f64, eta_l: f64) -> DiscardedFactors {
    let (i_prev, e_prev) = prev;
    let (i_next, e_next) = next;
    DiscardedFactors {
        variance_factor: ((delta1 + delta2 * e_prev) / (delta1 + delta2 * e_next)).sqrt(),
        drift_factor: ((1.0 - eta_l * (i_next - 1.0)) / (1.0 - eta_l * (i_prev - 1.0))).sqrt(),
    }
}

/// How the controller turns loss feedback into a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ControllerMode {
    #[default]
    CubeRoot,
    /// Solve the stationary equations with `delta1`/`delta2` replaced by the
    /// round's measured values (when available).
    Stationary { bound: BoundParams },
}

/// Variance constants measured from the latest round's uploads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    pub delta1: f64,
    pub delta2: f64,
}

/// Stateful EAFO controller used by the simulator.
#[derive(Debug, Clone)]
pub struct EafoController {
    pub i0: f64,
    pub eps0: f64,
    pub clamps: Clamps,
    pub mode: ControllerMode,
    state: Option<ControllerState>,
    last: Option<Schedule>,
}

impl EafoController {
    pub fn new(i0: f64, eps0: f64, clamps: Clamps, mode: ControllerMode) -> Result<Self> {
        clamps.validate()?;
        if !(i0 > 0.0 && eps0 > 0.0) {
            return Err(Error::config("I0 and eps0 must be positive"));
        }
        Ok(Self { i0, eps0, clamps, mode, state: None, last: None })
    }

    /// Schedule for the very first round, before any loss is known. Equal to
    /// `schedule(state, F₀)` for any anchor.
    pub fn initial(&self) -> Schedule {
        Schedule { local_steps: self.clamps.steps(self.i0), eps: self.clamps.budget(self.eps0), raw_i: self.i0, raw_eps: self.eps0 }
    }

    pub fn anchor(&mut self, f_w0: f64) -> Result<()> {
        self.state = Some(ControllerState::new(self.i0, self.eps0, f_w0, self.clamps)?);
        Ok(())
    }

    pub fn state(&self) -> Option<&ControllerState> {
        self.state.as_ref()
    }

    /// Decide the next round's schedule from the latest global loss.
    pub fn next(&mut self, f_wt: f64, estimate: Option<DeltaEstimate>) -> Result<Schedule> {
        let state = self.state.as_mut().ok_or_else(|| Error::config("controller used before anchoring"))?;
        let cube = schedule(state, f_wt)?;
        state.last_f = f_wt;
        let out = match (&self.mode, estimate) {
            (ControllerMode::Stationary { bound }, Some(est)) => {
                let p = BoundParams { delta1: est.delta1, delta2: est.delta2, ..*bound };
                let start = self.last.map(|s| (s.raw_i.max(1.0), s.raw_eps)).unwrap_or((cube.raw_i.max(1.0), cube.raw_eps));
                match bound::joint_stationary_point(f_wt, &p, start, 0.5, 1e-9, 500) {
                    Ok((i, e)) => Schedule { local_steps: self.clamps.steps(i), eps: self.clamps.budget(e), raw_i: i, raw_eps: e },
                    Err(err) => {
                        log::debug!("stationary controller fell back to cube-root law: {err}");
                        cube
                    }
                }
            }
            _ => cube,
        };
        if let (Some(prev), Some(est)) = (self.last, estimate) {
            match &self.mode {
                ControllerMode::Stationary { bound } => {
                    let f = discarded_factors(
                        (prev.raw_i, prev.raw_eps),
                        (out.raw_i, out.raw_eps),
                        est.delta1,
                        est.delta2,
                        bound.eta * bound.lipschitz,
                    );
                    log::debug!("discarded factors: variance {:.6} drift {:.6}", f.variance_factor, f.drift_factor);
                }
                // Without bound constants only the variance factor is known.
                ControllerMode::CubeRoot => {
                    let f = discarded_factors((prev.raw_i, prev.raw_eps), (out.raw_i, out.raw_eps), est.delta1, est.delta2, 0.0);
                    log::debug!("discarded factors: variance {:.6}", f.variance_factor);
                }
            }
        }
        self.last = Some(out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state() -> ControllerState {
        ControllerState::new(30.0, 4.0, 2.3, Clamps::default()).unwrap()
    }

    #[test]
    fn anchor_returns_initial_values() {
        let s = schedule(&state(), 2.3).unwrap();
        assert_eq!((s.raw_i, s.raw_eps), (30.0, 4.0));
        assert_eq!((s.local_steps, s.eps), (30, 4.0));
    }

    #[test]
    fn eighth_loss_halves_and_doubles() {
        let st = ControllerState::new(12.0, 3.0, 8.0, Clamps { i_min: 1, i_max: 100, eps_min: 0.1, eps_max: 100.0 }).unwrap();
        let s = schedule(&st, 1.0).unwrap();
        assert!((s.raw_i - 6.0).abs() < 1e-12);
        assert!((s.raw_eps - 6.0).abs() < 1e-12);
    }

    #[test]
    fn falling_loss_moves_from_many_steps_to_fine_updates() {
        let st = state();
        let losses = [2.3, 2.0, 1.6, 1.1, 0.8, 0.5, 0.35, 0.2, 0.1, 0.05];
        let runs: Vec<Schedule> = losses.iter().map(|&f| schedule(&st, f).unwrap()).collect();
        for w in runs.windows(2) {
            assert!(w[1].local_steps <= w[0].local_steps);
            assert!(w[1].eps >= w[0].eps);
        }
        assert_eq!(runs[0].local_steps, 30);
        assert_eq!(runs[0].eps, 4.0);
        assert!(runs[9].local_steps < 10);
        assert_eq!(runs[9].eps, 8.0);
    }

    #[test]
    fn rounding_is_half_up() {
        let c = Clamps { i_min: 1, i_max: 100, eps_min: 1.0, eps_max: 2.0 };
        assert_eq!(c.steps(2.5), 3);
        assert_eq!(c.steps(2.4999), 2);
        assert_eq!(c.steps(0.2), 1);
        assert_eq!(c.steps(1e9), 100);
    }

    #[test]
    fn rejects_non_positive_loss() {
        assert!(matches!(schedule(&state(), -1e-3), Err(Error::Domain(_))));
        assert!(matches!(schedule(&state(), f64::NAN), Err(Error::Domain(_))));
        let zero = schedule(&state(), 0.0).unwrap();
        assert_eq!((zero.local_steps, zero.eps), (1, 8.0));
        assert!(ratio_step(1.0, -1.0, 3.0, 3.0).is_err());
        assert!(ControllerState::new(1.0, 1.0, 1.0, Clamps { i_min: 3, i_max: 2, eps_min: 1.0, eps_max: 2.0 }).is_err());
    }

    #[test]
    fn ratio_step_identity_and_composition() {
        assert_eq!(ratio_step(1.5, 1.5, 7.0, 3.0).unwrap(), (7.0, 3.0));
        let (i1, e1) = ratio_step(2.0, 1.3, 10.0, 4.0).unwrap();
        let (i2, e2) = ratio_step(1.3, 0.4, i1, e1).unwrap();
        let (i3, e3) = ratio_step(2.0, 0.4, 10.0, 4.0).unwrap();
        assert!((i2 - i3).abs() < 1e-12 && (e2 - e3).abs() < 1e-12);
    }

    #[test]
    fn chained_steps_reproduce_anchored_law() {
        let st = state();
        let losses = [2.1, 1.9, 2.2, 1.4, 0.9, 0.95, 0.3];
        let (mut f, mut i, mut e) = (st.f_w0, st.i0, st.eps0);
        for &next in &losses {
            (i, e) = ratio_step(f, next, i, e).unwrap();
            f = next;
            let s = schedule(&st, next).unwrap();
            assert!((i - s.raw_i).abs() < 1e-12 && (e - s.raw_eps).abs() < 1e-12);
        }
    }

    #[test]
    fn controller_first_round_uses_anchor_values() {
        let mut c = EafoController::new(30.0, 4.0, Clamps::default(), ControllerMode::CubeRoot).unwrap();
        assert!(c.next(1.0, None).is_err());
        let first = c.initial();
        c.anchor(2.0).unwrap();
        assert_eq!(schedule(c.state().unwrap(), 2.0).unwrap(), first);
        assert_eq!(c.next(2.0, None).unwrap(), first);
    }

    #[test]
    fn stationary_mode_stays_in_clamps() {
        let bound = BoundParams {
            lipschitz: 0.5,
            eta: 0.01,
            horizon_s: 100.0,
            t_comp: 0.1,
            t_comm: 1.0,
            gamma: 0.01,
            delta1: 1.0,
            delta2: 1.0,
            lambda: 0.0,
            num_clients: 32.0,
            f_inf: 0.0,
            alpha: 0.01,
        };
        let mut c = EafoController::new(30.0, 4.0, Clamps::default(), ControllerMode::Stationary { bound }).unwrap();
        c.anchor(2.3).unwrap();
        for f in [2.0, 1.0, 0.5] {
            let s = c.next(f, Some(DeltaEstimate { delta1: 50.0, delta2: 2.0 })).unwrap();
            assert!((1..=30).contains(&s.local_steps));
            assert!((4.0..=8.0).contains(&s.eps));
        }
    }

    proptest! {
        #[test]
        fn product_is_invariant(f in 1e-6..1e3f64, f0 in 1e-3..1e2f64, i0 in 1.0..50.0f64, e0 in 0.5..20.0f64) {
            let st = ControllerState::new(i0, e0, f0, Clamps::default()).unwrap();
            let s = schedule(&st, f).unwrap();
            prop_assert!((s.raw_i * s.raw_eps - i0 * e0).abs() <= 1e-12 * i0 * e0);
            prop_assert!((1..=30).contains(&s.local_steps));
            prop_assert!(s.eps >= 4.0 && s.eps <= 8.0);
        }

        #[test]
        fn monotone_coupling(a in 1e-4..10.0f64, b in 1e-4..10.0f64) {
            let st = state();
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            let s_hi = schedule(&st, hi).unwrap();
            let s_lo = schedule(&st, lo).unwrap();
            prop_assert!(s_lo.raw_i <= s_hi.raw_i);
            prop_assert!(s_lo.raw_eps >= s_hi.raw_eps);
        }
    }
}
