//! Per-round `(I_t, ε_t)` policies: EAFO and the fixed / single-knob
//! baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::{Clamps, ControllerMode, DeltaEstimate, EafoController};
use crate::{Error, Result};

/// Upload budget of a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Every non-zero coordinate is sent; reported as `ε_t = model dim`.
    Lossless,
    /// Expected number of atoms per client.
    Atoms(f64),
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Lossless => f.write_str("lossless"),
            Budget::Atoms(e) => write!(f, "{e}"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "lossless" {
            return Ok(Budget::Lossless);
        }
        let e: f64 = s.parse().map_err(|_| Error::config(format!("bad budget {s:?}")))?;
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::config(format!("budget must be positive, got {e}")));
        }
        Ok(Budget::Atoms(e))
    }
}

/// Which policy picks `(I_t, ε_t)`.
///
/// Text form: `eafo`, `fixed-both:<I>:<eps|lossless>`, `adaptive-i:<I0>`,
/// `fixed-eps:<eps>`, `fedavg:<I>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyConfig {
    /// Cube-root controller on both knobs.
    Eafo,
    FixedBoth {
        local_steps: u32,
        budget: Budget,
    },
    /// Square-root local-step schedule with lossless uploads.
    AdaptiveIOnly {
        i0: u32,
    },
    /// One local step, compressed uploads.
    FixedEpsOnly {
        eps: f64,
    },
    /// Plain FedAvg: fixed local steps, lossless uploads.
    FedAvgPlain {
        local_steps: u32,
    },
}

impl StrategyConfig {
    /// File-name friendly label.
    pub fn label(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for StrategyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyConfig::Eafo => f.write_str("eafo"),
            StrategyConfig::FixedBoth { local_steps, budget } => write!(f, "fixed-both:{local_steps}:{budget}"),
            StrategyConfig::AdaptiveIOnly { i0 } => write!(f, "adaptive-i:{i0}"),
            StrategyConfig::FixedEpsOnly { eps } => write!(f, "fixed-eps:{eps}"),
            StrategyConfig::FedAvgPlain { local_steps } => write!(f, "fedavg:{local_steps}"),
        }
    }
}

fn parse_steps(s: &str) -> Result<u32> {
    match s.parse::<u32>() {
        Ok(i) if i >= 1 => Ok(i),
        _ => Err(Error::config(format!("local steps must be an integer >= 1, got {s:?}"))),
    }
}

impl FromStr for StrategyConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["eafo"] => Ok(StrategyConfig::Eafo),
            ["fixed-both", i, b] => Ok(StrategyConfig::FixedBoth { local_steps: parse_steps(i)?, budget: b.parse()? }),
            ["adaptive-i", i] => Ok(StrategyConfig::AdaptiveIOnly { i0: parse_steps(i)? }),
            ["fixed-eps", e] => match e.parse()? {
                Budget::Atoms(eps) => Ok(StrategyConfig::FixedEpsOnly { eps }),
                Budget::Lossless => Err(Error::config("fixed-eps needs a numeric budget")),
            },
            ["fedavg", i] => Ok(StrategyConfig::FedAvgPlain { local_steps: parse_steps(i)? }),
            _ => Err(Error::config(format!(
                "unknown strategy {s:?} (expected eafo, fixed-both:I:EPS, adaptive-i:I0, fixed-eps:EPS or fedavg:I)"
            ))),
        }
    }
}

impl TryFrom<String> for StrategyConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategyConfig> for String {
    fn from(s: StrategyConfig) -> String {
        s.to_string()
    }
}

/// Anchor values, clamps and mode of the EAFO controller. The clamps on
/// `I` also bound the adaptive-I baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub i0: f64,
    pub eps0: f64,
    pub clamps: Clamps,
    pub mode: ControllerMode,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self { i0: 30.0, eps0: 4.0, clamps: Clamps::default(), mode: ControllerMode::CubeRoot }
    }
}

/// What a round should run with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundPlan {
    pub local_steps: u32,
    pub budget: Budget,
}

/// What a round reports back to its policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundFeedback {
    /// Weighted loss of the clients' first mini-batches, taken at `w_t`.
    pub start_loss: f64,
    /// Weighted loss of the clients' last mini-batches.
    pub final_loss: f64,
    pub delta: Option<DeltaEstimate>,
}

#[derive(Debug, Clone)]
enum Policy {
    Eafo(EafoController),
    Fixed,
    AdaptiveI { i0: f64, clamps: Clamps, anchor: Option<f64> },
}

/// Mutable policy state carried across rounds.
#[derive(Debug, Clone)]
pub struct StrategyState {
    pub config: StrategyConfig,
    policy: Policy,
    plan: RoundPlan,
}

impl StrategyState {
    pub fn new(config: StrategyConfig, controller: &ControllerSettings) -> Result<Self> {
        controller.clamps.validate()?;
        let (policy, plan) = match config {
            StrategyConfig::Eafo => {
                let c = EafoController::new(controller.i0, controller.eps0, controller.clamps, controller.mode.clone())?;
                let s = c.initial();
                (Policy::Eafo(c), RoundPlan { local_steps: s.local_steps, budget: Budget::Atoms(s.eps) })
            }
            StrategyConfig::FixedBoth { local_steps, budget } => (Policy::Fixed, RoundPlan { local_steps, budget }),
            StrategyConfig::AdaptiveIOnly { i0 } => {
                let clamps = controller.clamps;
                let steps = i0.clamp(clamps.i_min, clamps.i_max);
                (Policy::AdaptiveI { i0: i0 as f64, clamps, anchor: None }, RoundPlan { local_steps: steps, budget: Budget::Lossless })
            }
            StrategyConfig::FixedEpsOnly { eps } => (Policy::Fixed, RoundPlan { local_steps: 1, budget: Budget::Atoms(eps) }),
            StrategyConfig::FedAvgPlain { local_steps } => (Policy::Fixed, RoundPlan { local_steps, budget: Budget::Lossless }),
        };
        if plan.local_steps == 0 {
            return Err(Error::config("local steps must be at least 1"));
        }
        if let Budget::Atoms(e) = plan.budget {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config(format!("budget must be positive, got {e}")));
            }
        }
        Ok(Self { config, policy, plan })
    }

    /// Plan for the upcoming round.
    pub fn plan(&self) -> RoundPlan {
        self.plan
    }

    /// Update the plan from the round that just finished. Adaptive policies
    /// anchor at the start loss of the first round that reports a positive
    /// one; until then the initial plan is kept.
    pub fn observe(&mut self, feedback: &RoundFeedback) -> Result<()> {
        if !(feedback.start_loss >= 0.0 && feedback.final_loss >= 0.0) {
            return Err(Error::domain(format!("losses must be non-negative, got {} and {}", feedback.start_loss, feedback.final_loss)));
        }
        match &mut self.policy {
            Policy::Fixed => {}
            Policy::Eafo(c) => {
                if c.state().is_none() {
                    if feedback.start_loss == 0.0 {
                        return Ok(());
                    }
                    c.anchor(feedback.start_loss)?;
                }
                let s = c.next(feedback.final_loss, feedback.delta)?;
                self.plan = RoundPlan { local_steps: s.local_steps, budget: Budget::Atoms(s.eps) };
            }
            Policy::AdaptiveI { i0, clamps, anchor } => {
                if anchor.is_none() && feedback.start_loss == 0.0 {
                    return Ok(());
                }
                let f0 = *anchor.get_or_insert(feedback.start_loss);
                let raw = ((feedback.final_loss / f0).sqrt() * *i0).ceil();
                let steps = if raw < clamps.i_min as f64 {
                    clamps.i_min
                } else if raw > clamps.i_max as f64 {
                    clamps.i_max
                } else {
                    raw as u32
                };
                self.plan.local_steps = steps;
            }
        }
        Ok(())
    }
}
