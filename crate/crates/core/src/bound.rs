//! Learning-error upper bounds for local SGD with compressed uploads.
//!
//! With `X = 2[F − F_inf]/(ηT)`, `Z = ηL/N`, `P = η²L²` and
//! `σ(ε) = δ₁/ε + δ₂` the joint bound reads
//!
//! ```text
//! υ(I, ε) = X (T_comp + γ ε / I) + Z σ(ε) + P σ(ε) (I − 1)
//! ```
//!
//! Everything here is a closed-form evaluation; callers supply the loss
//! value they want the bound anchored at.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Constants of the bound. `alpha` multiplies `ε/I` in the Hessian and the
/// stationary-point formulas and plays the role `gamma` plays in the bound
/// itself; the two are kept separate so they can be decoupled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Smoothness constant `L`.
    pub lipschitz: f64,
    pub eta: f64,
    /// Wall-clock budget `T` in seconds.
    pub horizon_s: f64,
    /// Per-round computation time.
    pub t_comp: f64,
    /// Per-round uncompressed communication time (no-compression bound only).
    pub t_comm: f64,
    /// Communication seconds per transmitted atom.
    pub gamma: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Gradient-proportional variance coefficient; carried for diagnostics.
    pub lambda: f64,
    pub num_clients: f64,
    pub f_inf: f64,
    pub alpha: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("L", self.lipschitz), ("eta", self.eta), ("T", self.horizon_s), ("gamma", self.gamma), ("N", self.num_clients)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.delta1 >= 0.0) {
            return Err(Error::domain(format!("delta1 must be non-negative, got {}", self.delta1)));
        }
        Ok(())
    }

    /// `ηL + η²L² I(I − 1) ≤ 1`.
    pub fn learning_rate_ok(&self, local_steps: f64) -> bool {
        let el = self.eta * self.lipschitz;
        el + el * el * local_steps * (local_steps - 1.0) <= 1.0
    }

    fn x_coeff(&self, f: f64) -> f64 {
        2.0 * (f - self.f_inf) / (self.eta * self.horizon_s)
    }

    fn z_coeff(&self) -> f64 {
        self.eta * self.lipschitz / self.num_clients
    }

    fn p_coeff(&self) -> f64 {
        let el = self.eta * self.lipschitz;
        el * el
    }
}

/// A bound value split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    /// Optimisation-progress term.
    pub optimization: f64,
    /// Aggregation-noise term.
    pub noise: f64,
    /// Local-drift term.
    pub drift: f64,
}

impl BoundValue {
    fn from_terms(optimization: f64, noise: f64, drift: f64) -> Self {
        Self { value: optimization + noise + drift, optimization, noise, drift }
    }
}

fn check_steps(local_steps: f64) -> Result<()> {
    if local_steps >= 1.0 && local_steps.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("local step count must be >= 1, got {local_steps}")))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("compression budget must be positive, got {eps}")))
    }
}

fn check_loss(f: f64, p: &BoundParams) -> Result<()> {
    if f >= p.f_inf {
        Ok(())
    } else {
        Err(Error::domain(format!("loss {f} is below F_inf {}", p.f_inf)))
    }
}

/// Bound without compression. The plain mini-batch variance `δ` is read from
/// `p.delta2`; `p.delta1` is ignored.
pub fn bound_no_compression(f_wt: f64, local_steps: f64, p: &BoundParams) -> Result<BoundValue> {
    check_steps(local_steps)?;
    check_loss(f_wt, p)?;
    let delta = p.delta2;
    Ok(BoundValue::from_terms(
        p.x_coeff(f_wt) * (p.t_comp + p.t_comm / local_steps),
        p.z_coeff() * delta,
        p.p_coeff() * delta * (local_steps - 1.0),
    ))
}

/// Joint bound `υ(I, ε)`.
pub fn bound_joint(f_wt: f64, local_steps: f64, eps: f64, p: &BoundParams) -> Result<BoundValue> {
    check_steps(local_steps)?;
    check_eps(eps)?;
    check_loss(f_wt, p)?;
    let sigma = p.delta1 / eps + p.delta2;
    Ok(BoundValue::from_terms(
        p.x_coeff(f_wt) * (p.t_comp + p.gamma * eps / local_steps),
        p.z_coeff() * sigma,
        p.p_coeff() * sigma * (local_steps - 1.0),
    ))
}

/// `[∂υ/∂I, ∂υ/∂ε]`.
pub fn bound_joint_gradient(f_wt: f64, local_steps: f64, eps: f64, p: &BoundParams) -> Result<[f64; 2]> {
    check_steps(local_steps)?;
    check_eps(eps)?;
    let (x, z, pp) = (p.x_coeff(f_wt), p.z_coeff(), p.p_coeff());
    let sigma = p.delta1 / eps + p.delta2;
    let d_sigma = -p.delta1 / (eps * eps);
    let d_i = -x * p.gamma * eps / (local_steps * local_steps) + pp * sigma;
    let d_eps = x * p.gamma / local_steps + (z + pp * (local_steps - 1.0)) * d_sigma;
    Ok([d_i, d_eps])
}

/// Second derivatives of [`bound_joint`] in `(I, ε)`, differentiated
/// directly from the bound (uses `gamma`).
pub fn bound_joint_hessian(f_wt: f64, local_steps: f64, eps: f64, p: &BoundParams) -> Result<[[f64; 2]; 2]> {
    check_steps(local_steps)?;
    check_eps(eps)?;
    let (x, z, pp) = (p.x_coeff(f_wt), p.z_coeff(), p.p_coeff());
    let (i, e) = (local_steps, eps);
    let h_ii = 2.0 * x * p.gamma * e / i.powi(3);
    let h_ie = -x * p.gamma / (i * i) - pp * p.delta1 / (e * e);
    let h_ee = 2.0 * p.delta1 * (z + pp * (i - 1.0)) / e.powi(3);
    Ok([[h_ii, h_ie], [h_ie, h_ee]])
}

/// The Hessian in the simplified `X, Z, P` form, with `α` in the
/// communication slot and `X` anchored at `F(w₀)`.
pub fn hessian(local_steps: f64, eps: f64, f_w0: f64, p: &BoundParams) -> Result<[[f64; 2]; 2]> {
    check_steps(local_steps)?;
    check_eps(eps)?;
    let x = 2.0 * (f_w0 - p.f_inf) / (p.eta * p.horizon_s);
    let z = p.eta * p.lipschitz / p.num_clients;
    let pp = p.eta * p.eta * p.lipschitz * p.lipschitz;
    let (i, e, a, d1) = (local_steps, eps, p.alpha, p.delta1);
    let off = -x * a / (i * i) - pp * d1 / (e * e);
    Ok([[2.0 * x * a * e / (i * i * i), off], [off, 2.0 * z * d1 / (e * e * e) + 2.0 * pp * (i - 1.0) * d1 / (e * e * e)]])
}

/// Largest entrywise gap between [`hessian`] and [`bound_joint_hessian`].
/// Zero (up to rounding) whenever `alpha == gamma`.
pub fn hessian_discrepancy(local_steps: f64, eps: f64, f_w0: f64, p: &BoundParams) -> Result<f64> {
    let a = hessian(local_steps, eps, f_w0, p)?;
    let b = bound_joint_hessian(f_w0, local_steps, eps, p)?;
    Ok((0..2).flat_map(|r| (0..2).map(move |c| (r, c))).map(|(r, c)| (a[r][c] - b[r][c]).abs()).fold(0.0, f64::max))
}

/// Upper limit on the fourth-order determinant term `(ηL)⁴ δ₁² / ε⁴` that
/// the `η⁵ ≈ 0` approximation discards.
pub const NEGLIGIBLE_FOURTH_ORDER: f64 = 1e-10;

/// Determinant slack tolerated by [`check_convexity_conditions`].
pub const DET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCheck {
    pub holds: bool,
    pub det: f64,
    /// (i) `I ≥ 2`.
    pub at_least_two_steps: bool,
    /// (ii)+(iii): the discarded `(ηL)⁴ δ₁²/ε⁴` term is finite and below
    /// [`NEGLIGIBLE_FOURTH_ORDER`].
    pub fourth_order_negligible: bool,
    /// (iv) `2η²LTδ₁I ≥ αNε²(F(w₀) − F_inf)`.
    pub drift_dominates: bool,
}

pub fn check_convexity_conditions(local_steps: f64, eps: f64, f_w0: f64, p: &BoundParams) -> ConvexityCheck {
    let at_least_two_steps = local_steps >= 2.0;
    let el = p.eta * p.lipschitz;
    let fourth = el.powi(4) * p.delta1 * p.delta1 / eps.powi(4);
    let fourth_order_negligible = fourth.is_finite() && fourth <= NEGLIGIBLE_FOURTH_ORDER;
    let drift_dominates =
        2.0 * p.eta * p.eta * p.lipschitz * p.horizon_s * p.delta1 * local_steps >= p.alpha * p.num_clients * eps * eps * (f_w0 - p.f_inf);
    let det = match hessian(local_steps.max(1.0), eps, f_w0, p) {
        Ok(h) => h[0][0] * h[1][1] - h[0][1] * h[1][0],
        Err(_) => f64::NAN,
    };
    let holds = at_least_two_steps && fourth_order_negligible && drift_dominates && det >= -DET_TOLERANCE;
    ConvexityCheck { holds, det, at_least_two_steps, fourth_order_negligible, drift_dominates }
}

/// Simplified stationary `I` for a given `ε`:
/// `sqrt(2α[F − F_inf]ε² / (η³L²(δ₁ + δ₂ε)))`.
pub fn stationary_i(eps: f64, f_wt: f64, p: &BoundParams) -> Result<f64> {
    check_eps(eps)?;
    let gap = f_wt - p.f_inf;
    if !(gap > 0.0) {
        return Err(Error::domain("stationary I needs F(w_t) > F_inf"));
    }
    let denom_var = p.delta1 + p.delta2 * eps;
    if !(denom_var > 0.0) {
        return Err(Error::domain(format!("delta1 + delta2*eps = {denom_var} is not positive")));
    }
    let num = 2.0 * p.alpha * gap * eps * eps;
    Ok((num / (p.eta.powi(3) * p.lipschitz.powi(2) * denom_var)).sqrt())
}

/// Simplified stationary `ε` for a given `I`:
/// `sqrt(δ₁η²LT(1 − ηL(I − 1))I / (2α[F − F_inf]))`.
pub fn stationary_eps(local_steps: f64, f_wt: f64, p: &BoundParams) -> Result<f64> {
    check_steps(local_steps)?;
    let gap = f_wt - p.f_inf;
    if !(gap > 0.0) {
        return Err(Error::domain("stationary eps needs F(w_t) > F_inf"));
    }
    let slack = 1.0 - p.eta * p.lipschitz * (local_steps - 1.0);
    if !(slack > 0.0) {
        return Err(Error::domain(format!("eta*L*(I-1) = {} is not below 1", 1.0 - slack)));
    }
    let num = p.delta1 * p.eta * p.eta * p.lipschitz * p.horizon_s * slack * local_steps;
    Ok((num / (2.0 * p.alpha * gap)).sqrt())
}

/// `I` that zeroes `∂υ/∂I` exactly: `sqrt(X γ ε / (P σ(ε)))`.
pub fn exact_stationary_i(eps: f64, f_wt: f64, p: &BoundParams) -> Result<f64> {
    check_eps(eps)?;
    let sigma = p.delta1 / eps + p.delta2;
    let x = p.x_coeff(f_wt);
    if !(sigma > 0.0 && x > 0.0) {
        return Err(Error::domain("exact stationary I needs positive variance and F > F_inf"));
    }
    Ok((x * p.gamma * eps / (p.p_coeff() * sigma)).sqrt())
}

/// `ε` that zeroes `∂υ/∂ε` exactly: `sqrt(δ₁ I (Z + P(I − 1)) / (X γ))`.
pub fn exact_stationary_eps(local_steps: f64, f_wt: f64, p: &BoundParams) -> Result<f64> {
    check_steps(local_steps)?;
    let x = p.x_coeff(f_wt);
    if !(x > 0.0) {
        return Err(Error::domain("exact stationary eps needs F > F_inf"));
    }
    let drift = p.z_coeff() + p.p_coeff() * (local_steps - 1.0);
    Ok((p.delta1 * local_steps * drift / (x * p.gamma)).sqrt())
}

/// Solve the two simplified stationary equations jointly by damped
/// fixed-point iteration in log space.
pub fn joint_stationary_point(
    f_wt: f64,
    p: &BoundParams,
    start: (f64, f64),
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64)> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::domain("damping must be in (0, 1]"));
    }
    let (mut i, mut e) = start;
    check_steps(i)?;
    check_eps(e)?;
    for _ in 0..max_iter {
        let i_target = stationary_i(e, f_wt, p)?.max(1.0);
        let e_target = stationary_eps(i, f_wt, p)?;
        if !(e_target > 0.0) {
            return Err(Error::domain("stationary eps collapsed to zero"));
        }
        let i_next = (i.ln() * (1.0 - damping) + i_target.ln() * damping).exp();
        let e_next = (e.ln() * (1.0 - damping) + e_target.ln() * damping).exp();
        let change = ((i_next - i) / i).abs().max(((e_next - e) / e).abs());
        i = i_next;
        e = e_next;
        if change < tol {
            return Ok((i, e));
        }
    }
    Err(Error::domain(format!("joint stationary point did not converge in {max_iter} iterations")))
}
