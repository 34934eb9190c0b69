//! Discrete-time kinematic acceleration envelopes.
//!
//! Three constraint families bound the acceleration held over a reasoning
//! step `Δt_p`:
//!
//! * position: the parabola `q + qd·t + ½·qdd·t²` stays in the box for all
//!   `t ∈ [0, Δt_p]`,
//! * position-velocity (viability): after `Δt_p` the joint can still stop
//!   before the bound with the available braking deceleration,
//! * velocity (baseline only): `|qd + Δt_p·qdd| <= qd_ub`.
//!
//! The voltage-aware pipeline drops the velocity family, because the voltage
//! budget already caps the speed, and feeds the braking deceleration from
//! the realizable acceleration set instead of a constant.

use serde::{Deserialize, Serialize};

use crate::actuator::JointParams;
use crate::error::{Error, Result};
use crate::interval::Interval;

/// Form of the position-velocity constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViabilityForm {
    /// `qd + Δt_p·qdd <= sqrt(2·|qdd_max|·(q_ub − q))`.
    #[default]
    Braking,
    /// Radicand propagated over the step:
    /// `qd_{k+1} <= sqrt(2·|qdd_max|·(q_ub − q − Δt_p·qd − ½·Δt_p²·qdd))`.
    Propagated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    /// Kinematic reasoning step Δt_p (s).
    pub dt_p: f64,
    /// Constant acceleration bounds of the baseline (rad/s²), `lb < 0 < ub`.
    #[serde(default)]
    pub const_bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub viability_form: ViabilityForm,
    /// Latency compensation (s): callers evaluate the envelopes at the state
    /// predicted this far ahead, see [`lead_state`].
    #[serde(default)]
    pub lead: f64,
}

impl EnvelopeConfig {
    pub fn new(dt_p: f64) -> Self {
        EnvelopeConfig {
            dt_p,
            const_bounds: None,
            viability_form: ViabilityForm::Braking,
            lead: 0.0,
        }
    }

    pub fn with_const_bounds(mut self, lb: f64, ub: f64) -> Self {
        self.const_bounds = Some((lb, ub));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_p.is_finite() && self.dt_p > 0.0) {
            return Err(Error::param(
                "dt_p",
                format!("must be > 0, got {}", self.dt_p),
            ));
        }
        if !(self.lead.is_finite() && self.lead >= 0.0) {
            return Err(Error::param(
                "lead",
                format!("must be >= 0, got {}", self.lead),
            ));
        }
        if let Some((lb, ub)) = self.const_bounds {
            if !(lb < 0.0 && 0.0 < ub) {
                return Err(Error::param(
                    "const_bounds",
                    format!("need lb < 0 < ub, got ({lb}, {ub})"),
                ));
            }
        }
        Ok(())
    }
}

/// Position envelope plus whether the state started outside the box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionEnvelope {
    pub interval: Interval,
    pub out_of_box: bool,
}

/// Largest acceleration keeping `q + qd·t + ½·a·t² <= bound` on `[0, T]`,
/// given `gap = bound − q >= 0`.
fn upper_parabola_limit(gap: f64, qd: f64, t: f64) -> f64 {
    // The minimum over t of 2(gap − qd·t)/t² sits at t* = 2·gap/qd when that
    // lies inside the step; otherwise at the end of the step.
    if qd > 0.0 && 2.0 * gap < qd * t {
        -qd * qd / (2.0 * gap)
    } else {
        2.0 * (gap - qd * t) / (t * t)
    }
}

/// Acceleration interval keeping the constant-acceleration parabola inside
/// `[q_lb, q_ub]` over the whole reasoning step.
///
/// A state outside the box (or on a bound and moving out) gets the interval
/// that returns it to the box by the end of the step, flagged `out_of_box`.
pub fn position_envelope(
    q: f64,
    qd: f64,
    cfg: &EnvelopeConfig,
    j: &JointParams,
) -> PositionEnvelope {
    let t = cfg.dt_p;
    let to_ub = j.q_ub - q;
    let to_lb = q - j.q_lb;
    let escaping =
        to_ub < 0.0 || to_lb < 0.0 || (to_ub == 0.0 && qd > 0.0) || (to_lb == 0.0 && qd < 0.0);
    if escaping {
        let hi = 2.0 * (to_ub - qd * t) / (t * t);
        let lo = -2.0 * (to_lb + qd * t) / (t * t);
        return PositionEnvelope {
            interval: Interval::new(lo, hi),
            out_of_box: true,
        };
    }
    let hi = upper_parabola_limit(to_ub, qd, t);
    // Mirror of the upper case with (q, qd) -> (−q, −qd).
    let lo = -upper_parabola_limit(to_lb, -qd, t);
    PositionEnvelope {
        interval: Interval::new(lo, hi),
        out_of_box: false,
    }
}

/// Braking deceleration toward the bound the joint is moving to:
/// `inf(A_v)` for `qd >= 0`, `sup(A_v)` otherwise.
pub fn braking_bound_from_av(a_v: &Interval, qd: f64) -> Result<f64> {
    let (lo, hi) = a_v.bounds().ok_or(Error::NoRealizableBraking)?;
    Ok(if qd >= 0.0 { lo } else { hi })
}

/// Largest next velocity from which `brake` (a magnitude) still stops the
/// joint within `gap`, with the gap propagated over the step.
fn propagated_velocity_cap(gap: f64, qd: f64, brake: f64, t: f64) -> f64 {
    // v <= sqrt(2·B·(gap − ½·t·(qd + v)))  ⇔  v² + B·t·v − (2·B·gap − B·t·qd) <= 0
    let bt = brake * t;
    let c = 2.0 * brake * gap - bt * qd;
    let disc = bt * bt + 4.0 * c;
    if disc < 0.0 {
        return 0.0;
    }
    (0.5 * (-bt + disc.sqrt())).max(0.0)
}

fn velocity_cap(gap: f64, qd: f64, brake: f64, cfg: &EnvelopeConfig) -> f64 {
    match cfg.viability_form {
        ViabilityForm::Braking => (2.0 * brake * gap).sqrt(),
        ViabilityForm::Propagated => propagated_velocity_cap(gap, qd, brake, cfg.dt_p),
    }
}

/// Upper acceleration bound from the position-velocity constraint toward
/// `q_ub`. Uses the magnitude of `qdd_max`.
///
/// Past the bound the joint must brake: the bound becomes the deceleration
/// that stops it within one step, capped at full braking.
pub fn viability_upper(
    q: f64,
    qd: f64,
    qdd_max: f64,
    cfg: &EnvelopeConfig,
    j: &JointParams,
) -> f64 {
    let brake = qdd_max.abs();
    let gap = j.q_ub - q;
    if gap < 0.0 {
        return (-qd / cfg.dt_p).max(-brake);
    }
    (velocity_cap(gap, qd, brake, cfg) - qd) / cfg.dt_p
}

/// Lower acceleration bound from the position-velocity constraint toward
/// `q_lb`; the mirror image of [`viability_upper`].
pub fn viability_lower(
    q: f64,
    qd: f64,
    qdd_max: f64,
    cfg: &EnvelopeConfig,
    j: &JointParams,
) -> f64 {
    let brake = qdd_max.abs();
    let gap = q - j.q_lb;
    if gap < 0.0 {
        return (-qd / cfg.dt_p).min(brake);
    }
    (-velocity_cap(gap, -qd, brake, cfg) - qd) / cfg.dt_p
}

/// `[(−qd_ub − qd)/Δt_p, (qd_ub − qd)/Δt_p]`.
pub fn discrete_velocity_envelope(qd: f64, cfg: &EnvelopeConfig, j: &JointParams) -> Interval {
    Interval::new((-j.qd_ub - qd) / cfg.dt_p, (j.qd_ub - qd) / cfg.dt_p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeMode {
    Vra,
    Vbac,
}

/// The kinematic acceleration set with all its components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicSet {
    pub position: PositionEnvelope,
    /// `(−∞, viability_upper]`.
    pub upper: f64,
    /// `[viability_lower, ∞)`.
    pub lower: f64,
    /// Velocity envelope (baseline mode only).
    pub velocity: Option<Interval>,
    /// Constant bounds (baseline mode only).
    pub constant: Option<Interval>,
    /// Intersection of all components, or the fallback singleton.
    pub set: Interval,
    /// The raw intersection was empty and `set` holds the fallback.
    pub was_empty: bool,
}

/// State `lead` seconds ahead of `(q, qd)` under constant acceleration `qdd`.
pub fn lead_state(q: f64, qd: f64, qdd: f64, lead: f64) -> (f64, f64) {
    (q + qd * lead + 0.5 * qdd * lead * lead, qd + qdd * lead)
}

/// Intersect the kinematic envelope components.
///
/// In `Vra` mode `qdd_max` is the braking bound taken from the realizable
/// acceleration set. In `Vbac` mode the configured constant bounds provide
/// both the braking magnitudes and an outer clamp, and the velocity envelope
/// is included; `qdd_max` is ignored.
///
/// An empty intersection falls back to the most decelerating upper-type
/// bound when the joint sits in the upper half of its range (the most
/// decelerating lower-type bound otherwise).
pub fn kinematic_set(
    q: f64,
    qd: f64,
    qdd_max: f64,
    cfg: &EnvelopeConfig,
    j: &JointParams,
    mode: EnvelopeMode,
) -> KinematicSet {
    let position = position_envelope(q, qd, cfg, j);
    let (upper, lower, velocity, constant) = match mode {
        EnvelopeMode::Vra => (
            viability_upper(q, qd, qdd_max, cfg, j),
            viability_lower(q, qd, qdd_max, cfg, j),
            None,
            None,
        ),
        EnvelopeMode::Vbac => {
            let (lb, ub) = cfg
                .const_bounds
                .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            (
                viability_upper(q, qd, lb, cfg, j),
                viability_lower(q, qd, ub, cfg, j),
                Some(discrete_velocity_envelope(qd, cfg, j)),
                Some(Interval::new(lb, ub)),
            )
        }
    };
    let mut set = position.interval.intersect(&Interval::new(lower, upper));
    for extra in velocity.iter().chain(constant.iter()) {
        set = set.intersect(extra);
    }
    let was_empty = set.is_empty();
    if was_empty {
        let uppers = [position.interval.hi_or_nan(), upper]
            .into_iter()
            .chain(velocity.map(|v| v.hi_or_nan()))
            .chain(constant.map(|c| c.hi_or_nan()))
            .filter(|x| !x.is_nan())
            .fold(f64::INFINITY, f64::min);
        let lowers = [position.interval.lo_or_nan(), lower]
            .into_iter()
            .chain(velocity.map(|v| v.lo_or_nan()))
            .chain(constant.map(|c| c.lo_or_nan()))
            .filter(|x| !x.is_nan())
            .fold(f64::NEG_INFINITY, f64::max);
        let mid = 0.5 * (j.q_lb + j.q_ub);
        set = Interval::point(if q >= mid { uppers } else { lowers });
    }
    KinematicSet {
        position,
        upper,
        lower,
        velocity,
        constant,
        set,
        was_empty,
    }
}
