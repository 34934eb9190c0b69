//! Voltage-realizable current and acceleration sets.
//!
//! At every control step the q-axis currents that keep the predicted dq
//! voltage inside the budget circle are found by solving two scalar quadratic
//! inequalities in `i_q`:
//!
//! * the transient set, which prices the one-step current change, and
//! * the quasi-steady set, which looks `s` steps ahead at the back-EMF the
//!   resulting acceleration would build up.
//!
//! Their intersection is the realizable current set; its affine image through
//! the joint dynamics is the realizable acceleration set. Unmodelled voltage
//! (parameter error, dead time, ripple) enters through a residual computed
//! from the previous step's nominal and applied voltages.

use serde::{Deserialize, Serialize};

use crate::actuator::{DqVoltage, JointParams, MotorParams};
use crate::error::{Error, Result};
use crate::interval::Interval;

/// Coefficients of `a·x² + b·x + c <= 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadCoeffs {
    /// Squared-norm constraint `(αd·x + βd)² + (αq·x + βq)² <= v²`.
    pub fn from_voltage_circle(d: LinearVoltage, q: LinearVoltage, v_limit: f64) -> Self {
        QuadCoeffs {
            a: d.slope * d.slope + q.slope * q.slope,
            b: 2.0 * (d.slope * d.offset + q.slope * q.offset),
            c: d.offset * d.offset + q.offset * q.offset - v_limit * v_limit,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    /// Minimizer of the quadratic, `-b / 2a`. Zero when `a == 0`.
    pub fn vertex(&self) -> f64 {
        if self.a > 0.0 {
            -self.b / (2.0 * self.a)
        } else {
            0.0
        }
    }
}

/// A voltage component that is affine in the candidate current.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinearVoltage {
    pub slope: f64,
    pub offset: f64,
}

impl LinearVoltage {
    pub fn at(&self, i_q: f64) -> f64 {
        self.slope * i_q + self.offset
    }
}

/// Measured history available to the pipeline at step `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlFrame {
    /// Latest measured position `q_{k-1}` (rad).
    pub q_prev: f64,
    /// Latest velocity estimate `qd_{k-1}` (rad/s).
    pub qd_prev: f64,
    /// Velocity estimate one step earlier, `qd_{k-2}` (rad/s).
    pub qd_prev2: f64,
    /// Latest measured q-axis current `i_{q,k-1}` (A).
    pub iq_prev: f64,
    /// Current measured one step earlier, at the start of the period
    /// over which `ud_prev`/`uq_prev` were applied (A).
    pub iq_prev2: f64,
    /// d-axis voltage applied over the previous step (V).
    pub ud_prev: f64,
    /// q-axis voltage applied over the previous step (V).
    pub uq_prev: f64,
    /// Execution step Δt (s).
    pub dt: f64,
    /// Look-ahead step count `s` of the quasi-steady set.
    pub lookahead: f64,
}

impl ControlFrame {
    /// Frame for a joint that has been sitting in `(q, qd, i_q)` with the
    /// nominal voltage applied: the bootstrap used before two real
    /// measurements exist. Its residual is exactly zero.
    pub fn steady(m: &MotorParams, q: f64, qd: f64, i_q: f64, dt: f64, lookahead: f64) -> Self {
        let u = m.dq_voltage(qd, i_q);
        ControlFrame {
            q_prev: q,
            qd_prev: qd,
            qd_prev2: qd,
            iq_prev: i_q,
            iq_prev2: i_q,
            ud_prev: u.d,
            uq_prev: u.q,
            dt,
            lookahead,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.lookahead.is_finite() && self.lookahead >= 1.0) {
            return Err(Error::param(
                "lookahead",
                format!("must be >= 1, got {}", self.lookahead),
            ));
        }
        Ok(())
    }
}

/// Lumped unmodelled voltage, nominal minus applied, per axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoltageResidual {
    pub d: f64,
    pub q: f64,
}

impl VoltageResidual {
    pub const ZERO: VoltageResidual = VoltageResidual { d: 0.0, q: 0.0 };
}

/// How the transient set prices the one-step current change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransientModel {
    /// `û_q = R_s·i + L_q·(i − i_prev)/Δt + p·qd·φ`.
    #[default]
    Standard,
    /// `û_q = R_s·i + (i − i_prev)/Δt · p·qd·φ`: the current change is
    /// weighted by the back-EMF term instead of the inductance.
    #[serde(rename = "emf-scaled")]
    EmfScaled,
}

/// Voltage model the residual compares the applied voltage against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualModel {
    /// Static drop plus back-EMF only.
    Static,
    /// Model of the mean voltage over the previous period: resistive and
    /// cross-coupling terms at the mean current `(i_{k-1} + i_{k-2})/2` plus
    /// the inductive drop `L_q·(i_{k-1} − i_{k-2})/Δt`. A current slew is
    /// then not mistaken for unmodelled voltage and fed into the next
    /// prediction.
    #[default]
    PeriodMean,
}

/// Static configuration of the feasibility stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityConfig {
    #[serde(default)]
    pub transient: TransientModel,
    /// Drive current ceiling used to bound degenerate (unbounded) sets (A).
    pub i_max: f64,
    /// First-order filter weight on the residual; 1 means no filtering.
    #[serde(default = "default_alpha")]
    pub residual_alpha: f64,
    #[serde(default)]
    pub residual_model: ResidualModel,
}

fn default_alpha() -> f64 {
    1.0
}

impl FeasibilityConfig {
    pub fn new(i_max: f64) -> Self {
        FeasibilityConfig {
            transient: TransientModel::Standard,
            i_max,
            residual_alpha: 1.0,
            residual_model: ResidualModel::PeriodMean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i_max.is_finite() && self.i_max > 0.0) {
            return Err(Error::param(
                "i_max",
                format!("must be > 0, got {}", self.i_max),
            ));
        }
        if !(self.residual_alpha > 0.0 && self.residual_alpha <= 1.0) {
            return Err(Error::param(
                "residual_alpha",
                format!("must lie in (0, 1], got {}", self.residual_alpha),
            ));
        }
        Ok(())
    }
}

/// Nominal voltage at step `k−1` minus the voltage actually applied then.
pub fn update_residual(m: &MotorParams, f: &ControlFrame, model: ResidualModel) -> VoltageResidual {
    let (i, inductive) = match model {
        ResidualModel::Static => (f.iq_prev, 0.0),
        ResidualModel::PeriodMean => (
            0.5 * (f.iq_prev + f.iq_prev2),
            m.l_q * (f.iq_prev - f.iq_prev2) / f.dt,
        ),
    };
    let nominal_d = -m.p * f.qd_prev2 * i * m.l_q;
    let nominal_q = m.r_s * i + inductive + m.p * f.qd_prev2 * m.flux;
    VoltageResidual {
        d: nominal_d - f.ud_prev,
        q: nominal_q - f.uq_prev,
    }
}

/// Per-joint residual state with optional low-pass filtering.
#[derive(Clone, Debug)]
pub struct ResidualEstimator {
    alpha: f64,
    model: ResidualModel,
    state: VoltageResidual,
}

impl ResidualEstimator {
    pub fn new(alpha: f64, model: ResidualModel) -> Self {
        ResidualEstimator {
            alpha,
            model,
            state: VoltageResidual::ZERO,
        }
    }

    pub fn update(&mut self, m: &MotorParams, f: &ControlFrame) -> VoltageResidual {
        let raw = update_residual(m, f, self.model);
        self.state.d += self.alpha * (raw.d - self.state.d);
        self.state.q += self.alpha * (raw.q - self.state.q);
        self.state
    }

    pub fn current(&self) -> VoltageResidual {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = VoltageResidual::ZERO;
    }
}

/// Solution set of `a·x² + b·x + c <= 0` for `a >= 0`.
///
/// Sets that are unbounded (only possible when `a == 0`) are clamped to
/// `[-i_max, i_max]`.
pub fn solve_quadratic_set(c: &QuadCoeffs, i_max: f64) -> Result<Interval> {
    let QuadCoeffs { a, b, c } = *c;
    if a > 0.0 {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return Ok(Interval::EMPTY);
        }
        let sq = disc.sqrt();
        // Cancellation-free pair of roots.
        let t = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = if t != 0.0 {
            (t / a, c / t)
        } else {
            // b == 0 and disc == 0, hence c == 0: double root at the origin.
            (0.0, 0.0)
        };
        return Ok(Interval::new(r1.min(r2), r1.max(r2)));
    }
    let ceiling = Interval::symmetric(i_max);
    if b > 0.0 {
        Ok(Interval::new(f64::NEG_INFINITY, -c / b).intersect(&ceiling))
    } else if b < 0.0 {
        Ok(Interval::new(-c / b, f64::INFINITY).intersect(&ceiling))
    } else if c <= 0.0 {
        Ok(ceiling)
    } else {
        Err(Error::DegenerateQuadratic { c })
    }
}

fn solve_or_empty(c: &QuadCoeffs, i_max: f64) -> Interval {
    solve_quadratic_set(c, i_max).unwrap_or(Interval::EMPTY)
}

/// Predicted d-axis voltage `û_d(i) = −p·qd·L_q·i` corrected by the residual.
///
/// The residual is nominal minus applied, so a plant that needs more voltage
/// than the model yields a negative residual; subtracting it moves the
/// prediction toward what the plant actually needs.
pub fn predicted_d(m: &MotorParams, f: &ControlFrame, r: &VoltageResidual) -> LinearVoltage {
    LinearVoltage {
        slope: -m.p * f.qd_prev * m.l_q,
        offset: -r.d,
    }
}

/// Predicted transient q-axis voltage as an affine function of `i_q`.
pub fn predicted_q_transient(
    m: &MotorParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    model: TransientModel,
) -> LinearVoltage {
    match model {
        TransientModel::Standard => {
            let l_over_dt = m.l_q / f.dt;
            LinearVoltage {
                slope: m.r_s + l_over_dt,
                offset: -l_over_dt * f.iq_prev + m.p * f.qd_prev * m.flux - r.q,
            }
        }
        TransientModel::EmfScaled => {
            let k = m.p * f.qd_prev * m.flux / f.dt;
            LinearVoltage {
                slope: m.r_s + k,
                offset: -k * f.iq_prev - r.q,
            }
        }
    }
}

/// Predicted quasi-steady q-axis voltage after a look-ahead of `horizon`
/// seconds at constant current.
fn predicted_q_steady_horizon(
    m: &MotorParams,
    j: &JointParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    horizon: f64,
) -> LinearVoltage {
    let bemf = m.p * m.flux;
    LinearVoltage {
        slope: m.r_s + m.k_t * horizon * bemf / j.inertia,
        offset: f.qd_prev * bemf - r.q,
    }
}

/// Predicted quasi-steady q-axis voltage, horizon `s·Δt`.
pub fn predicted_q_steady(
    m: &MotorParams,
    j: &JointParams,
    f: &ControlFrame,
    r: &VoltageResidual,
) -> LinearVoltage {
    predicted_q_steady_horizon(m, j, f, r, f.lookahead * f.dt)
}

pub fn transient_coeffs(
    m: &MotorParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    model: TransientModel,
) -> QuadCoeffs {
    QuadCoeffs::from_voltage_circle(
        predicted_d(m, f, r),
        predicted_q_transient(m, f, r, model),
        m.v_limit,
    )
}

pub fn steady_coeffs(
    m: &MotorParams,
    j: &JointParams,
    f: &ControlFrame,
    r: &VoltageResidual,
) -> QuadCoeffs {
    QuadCoeffs::from_voltage_circle(
        predicted_d(m, f, r),
        predicted_q_steady(m, j, f, r),
        m.v_limit,
    )
}

/// Currents whose predicted transient voltage stays within `v_limit`.
pub fn transient_set(
    m: &MotorParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    cfg: &FeasibilityConfig,
) -> Interval {
    solve_or_empty(&transient_coeffs(m, f, r, cfg.transient), cfg.i_max)
}

/// Currents whose predicted quasi-steady voltage stays within `v_limit`.
pub fn steady_set(
    m: &MotorParams,
    j: &JointParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    cfg: &FeasibilityConfig,
) -> Interval {
    solve_or_empty(&steady_coeffs(m, j, f, r), cfg.i_max)
}

/// Why the realizable current set came out empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyReason {
    TransientEmpty,
    SteadyEmpty,
    TransientSteadyConflict,
}

impl std::fmt::Display for EmptyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmptyReason::TransientEmpty => "transient set empty",
            EmptyReason::SteadyEmpty => "steady set empty",
            EmptyReason::TransientSteadyConflict => "transient-steady conflict",
        })
    }
}

/// Full result of the current-set stage, kept for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurrentSet {
    pub transient_coeffs: QuadCoeffs,
    pub steady_coeffs: QuadCoeffs,
    pub transient: Interval,
    pub steady: Interval,
    /// `transient ∩ steady`.
    pub set: Interval,
    pub empty_reason: Option<EmptyReason>,
    /// Current used when `set` is empty: the minimizer of the transient
    /// quadratic, the least-violating choice.
    pub fallback: f64,
}

impl CurrentSet {
    pub fn is_feasible(&self) -> bool {
        self.empty_reason.is_none()
    }

    /// The set actually used downstream: `set`, or the fallback singleton.
    pub fn effective(&self) -> Interval {
        if self.is_feasible() {
            self.set
        } else {
            Interval::point(self.fallback)
        }
    }
}

/// Intersect two precomputed current sets, tagging why the result is empty.
pub fn intersect_current_sets(
    transient: Interval,
    steady: Interval,
) -> (Interval, Option<EmptyReason>) {
    let set = transient.intersect(&steady);
    let reason = if transient.is_empty() {
        Some(EmptyReason::TransientEmpty)
    } else if steady.is_empty() {
        Some(EmptyReason::SteadyEmpty)
    } else if set.is_empty() {
        Some(EmptyReason::TransientSteadyConflict)
    } else {
        None
    };
    (set, reason)
}

/// Realizable current set `I_k = S_tr ∩ S_st`.
pub fn realizable_current_set(
    m: &MotorParams,
    j: &JointParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    cfg: &FeasibilityConfig,
) -> CurrentSet {
    let transient_coeffs = transient_coeffs(m, f, r, cfg.transient);
    let steady_coeffs = steady_coeffs(m, j, f, r);
    let transient = solve_or_empty(&transient_coeffs, cfg.i_max);
    let steady = solve_or_empty(&steady_coeffs, cfg.i_max);
    let (set, empty_reason) = intersect_current_sets(transient, steady);
    let fallback = transient_coeffs.vertex().clamp(-cfg.i_max, cfg.i_max);
    CurrentSet {
        transient_coeffs,
        steady_coeffs,
        transient,
        steady,
        set,
        empty_reason,
        fallback,
    }
}

/// Realizable acceleration set: `(k_t·I − h(qd)) / M`.
pub fn realizable_accel_set(
    i_set: &Interval,
    m: &MotorParams,
    j: &JointParams,
    qd: f64,
) -> Interval {
    i_set.affine(m.k_t / j.inertia, -j.friction(qd) / j.inertia)
}

/// Budget `p·qd_ub·φ` at which the zero-current steady set degenerates at
/// exactly `qd_ub`.
pub fn velocity_budget(m: &MotorParams, qd_ub: f64) -> f64 {
    m.p * qd_ub * m.flux
}

/// Predicted dq voltage for a candidate current under the transient model.
pub fn predicted_transient_voltage(
    m: &MotorParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    model: TransientModel,
    i_q: f64,
) -> DqVoltage {
    DqVoltage::new(
        predicted_d(m, f, r).at(i_q),
        predicted_q_transient(m, f, r, model).at(i_q),
    )
}

/// Predicted dq voltage for a candidate current under the quasi-steady model.
pub fn predicted_steady_voltage(
    m: &MotorParams,
    j: &JointParams,
    f: &ControlFrame,
    r: &VoltageResidual,
    i_q: f64,
) -> DqVoltage {
    DqVoltage::new(
        predicted_d(m, f, r).at(i_q),
        predicted_q_steady(m, j, f, r).at(i_q),
    )
}
