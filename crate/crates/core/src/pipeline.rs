//! Per-step joint controllers.
//!
//! The voltage-aware pipeline runs a fixed order every step:
//!
//! ```text
//! state → I_k → A_v → A_k → A_cmd = A_v ∩ A_k → clip → project onto I_k → actuator
//! ```
//!
//! The realizable current set is computed before any kinematic reasoning so
//! the braking deceleration used by the viability constraints is one the
//! motor can actually produce; the last projection back onto `I_k` absorbs
//! rounding between acceleration and current space. By default the braking
//! deceleration comes from the quasi-steady current set alone, since the
//! transient set also prices slewing away from the present current.
//!
//! The baselines reuse the same building blocks: `vbac` clips into the
//! discrete-time kinematic envelope with constant acceleration bounds and is
//! blind to voltage, `vbac-mor` adds a speed-dependent torque clip, and `raw`
//! passes the desired acceleration straight through inverse dynamics. All
//! controllers still evaluate the realizable current set for diagnostics.

use std::fmt;
use std::str::FromStr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::actuator::{accel_from_current, current_from_accel, JointParams, MotorParams};
use crate::envelope::{
    braking_bound_from_av, kinematic_set, lead_state, EnvelopeConfig, EnvelopeMode, KinematicSet,
};
use crate::error::{Error, Result};
use crate::feasibility::{
    realizable_accel_set, realizable_current_set, ControlFrame, CurrentSet, FeasibilityConfig,
    ResidualEstimator, VoltageResidual,
};
use crate::interval::Interval;

bitflags! {
    /// Events raised while computing one command.
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
    pub struct StepFlags: u8 {
        /// The realizable current set was empty; the fallback current was used.
        const EMPTY_CURRENT_SET = 1 << 0;
        /// The kinematic intersection was empty; a braking singleton was used.
        const EMPTY_KINEMATIC_SET = 1 << 1;
        /// `A_v ∩ A_k` was empty; the braking endpoint of `A_v` was used.
        const EMPTY_COMMAND_SET = 1 << 2;
        /// The desired acceleration was clipped.
        const CLIPPED = 1 << 3;
        /// The final projection onto `I_k` moved the current.
        const PROJECTED = 1 << 4;
        /// The joint was outside its position bounds.
        const OUT_OF_BOX = 1 << 5;
        /// The MOR torque clip was active.
        const MOR_CLIPPED = 1 << 6;
    }
}

const FLAG_NAMES: [(StepFlags, &str); 7] = [
    (StepFlags::EMPTY_CURRENT_SET, "empty-current-set"),
    (StepFlags::EMPTY_KINEMATIC_SET, "empty-kinematic-set"),
    (StepFlags::EMPTY_COMMAND_SET, "empty-command-set"),
    (StepFlags::CLIPPED, "clipped"),
    (StepFlags::PROJECTED, "projected"),
    (StepFlags::OUT_OF_BOX, "out-of-box"),
    (StepFlags::MOR_CLIPPED, "mor-clipped"),
];

impl fmt::Display for StepFlags {
    /// `|`-separated names, `-` when no flag is set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let names: Vec<&str> = FLAG_NAMES
            .iter()
            .filter(|(flag, _)| self.contains(*flag))
            .map(|(_, n)| *n)
            .collect();
        f.write_str(&names.join("|"))
    }
}

impl FromStr for StepFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "-" {
            return Ok(StepFlags::empty());
        }
        s.split('|').try_fold(StepFlags::empty(), |acc, name| {
            FLAG_NAMES
                .iter()
                .find(|(_, n)| *n == name)
                .map(|(flag, _)| acc | *flag)
                .ok_or_else(|| Error::param("flags", format!("unknown flag `{name}`")))
        })
    }
}

/// Everything computed on the way to a command, for the trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub residual: VoltageResidual,
    pub current_set: CurrentSet,
    /// Realizable acceleration set (image of the effective current set).
    pub accel_set: Interval,
    /// Braking deceleration fed to the viability constraints.
    pub qdd_max: f64,
    pub kinematic: Option<KinematicSet>,
    /// Set the desired acceleration was clipped into.
    pub command_set: Interval,
    pub flags: StepFlags,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCommand {
    pub qdd_des: f64,
    pub qdd_cmd: f64,
    pub i_q_cmd: f64,
    pub diagnostics: StepDiagnostics,
}

/// Speed-dependent linear torque boundary (motor operating region).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorEnvelope {
    /// Peak torque below the corner speed (Nm).
    pub tau_max: f64,
    /// Corner speed (rad/s).
    pub omega_c: f64,
    /// Zero-torque speed (rad/s).
    pub omega_max: f64,
    /// Bus voltage at which the envelope was identified (V).
    pub v_ref: f64,
}

impl MorEnvelope {
    /// Envelope implied by the nominal model at `v_ref`: peak torque
    /// `k_t·i_max` up to the speed where `R_s·i_max + p·φ·ω` reaches `v_ref`,
    /// then linear down to the no-load speed `v_ref / (p·φ)`.
    pub fn from_motor(m: &MotorParams, i_max: f64, v_ref: f64) -> Self {
        let kb = m.back_emf_constant();
        let omega_max = v_ref / kb;
        let omega_c = ((v_ref - m.r_s * i_max) / kb).clamp(0.05 * omega_max, 0.95 * omega_max);
        MorEnvelope {
            tau_max: m.k_t * i_max,
            omega_c,
            omega_max,
            v_ref,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_max.is_nan() || self.tau_max <= 0.0 {
            return Err(Error::param("tau_max", "must be > 0"));
        }
        if !(0.0 < self.omega_c && self.omega_c < self.omega_max) {
            return Err(Error::param("omega_c", "need 0 < omega_c < omega_max"));
        }
        if self.v_ref.is_nan() || self.v_ref <= 0.0 {
            return Err(Error::param("v_ref", "must be > 0"));
        }
        Ok(())
    }

    /// Torque magnitude available at `qd` with the envelope scaled
    /// uniformly by `σ = v_bus / v_ref`: both speed breakpoints scale by `σ`
    /// and the torque axis by `min(σ, 1)`.
    pub fn torque_limit(&self, qd: f64, v_bus: f64) -> f64 {
        let sigma = v_bus / self.v_ref;
        let corner = self.omega_c * sigma;
        let top = self.omega_max * sigma;
        let peak = self.tau_max * sigma.min(1.0);
        let w = qd.abs();
        if w <= corner {
            peak
        } else if w >= top {
            0.0
        } else {
            peak * (top - w) / (top - corner)
        }
    }
}

/// Clamp a torque into the scaled MOR envelope, four-quadrant symmetric.
pub fn mor_clip(tau: f64, qd: f64, mor: &MorEnvelope, v_bus: f64) -> f64 {
    let lim = mor.torque_limit(qd, v_bus);
    tau.clamp(-lim, lim)
}

pub fn clip_to_interval(x: f64, iv: &Interval) -> Result<f64> {
    iv.clamp(x)
}

/// Controller selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "vra")]
    Vra,
    #[serde(rename = "vbac-ab")]
    VbacAggressive,
    #[serde(rename = "vbac-cb")]
    VbacConservative,
    #[serde(rename = "vbac-mor")]
    VbacMor,
    #[serde(rename = "raw")]
    Raw,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Vra,
        ControllerKind::VbacAggressive,
        ControllerKind::VbacConservative,
        ControllerKind::VbacMor,
        ControllerKind::Raw,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ControllerKind::Vra => "vra",
            ControllerKind::VbacAggressive => "vbac-ab",
            ControllerKind::VbacConservative => "vbac-cb",
            ControllerKind::VbacMor => "vbac-mor",
            ControllerKind::Raw => "raw",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::UnknownController(s.to_string()))
    }
}

/// Static configuration shared by all controllers of one joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub feasibility: FeasibilityConfig,
    /// Reasoning step and viability form; constant bounds are taken from
    /// `aggressive` / `conservative` for the baselines.
    pub envelope: EnvelopeConfig,
    /// Aggressive constant acceleration bounds (rad/s²).
    pub aggressive: (f64, f64),
    /// Conservative constant acceleration bounds (rad/s²).
    pub conservative: (f64, f64),
    pub mor: MorEnvelope,
    pub braking_bound: BrakingBound,
}

/// Which realizable set supplies the braking deceleration of the VRA
/// viability constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrakingBound {
    /// `A_v` itself, including the one-step slew limit from the present current.
    Realizable,
    /// The image of the steady-state current set only: the deceleration the
    /// motor can hold once the current has settled. Falls back to `A_v` when
    /// that set is empty.
    #[default]
    Sustained,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.feasibility.validate()?;
        self.envelope.validate()?;
        self.envelope
            .with_const_bounds(self.aggressive.0, self.aggressive.1)
            .validate()?;
        self.envelope
            .with_const_bounds(self.conservative.0, self.conservative.1)
            .validate()?;
        self.mor.validate()
    }
}

fn voltage_stage(
    frame: &ControlFrame,
    m: &MotorParams,
    j: &JointParams,
    cfg: &FeasibilityConfig,
    residual: &VoltageResidual,
) -> (CurrentSet, Interval, StepFlags) {
    let current_set = realizable_current_set(m, j, frame, residual, cfg);
    let accel_set = realizable_accel_set(&current_set.effective(), m, j, frame.qd_prev);
    let flags = if current_set.is_feasible() {
        StepFlags::empty()
    } else {
        StepFlags::EMPTY_CURRENT_SET
    };
    (current_set, accel_set, flags)
}

fn moved(a: f64, b: f64) -> bool {
    (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Deceleration the viability constraints assume for stopping.
fn braking_bound(
    source: BrakingBound,
    current_set: &CurrentSet,
    accel_set: &Interval,
    m: &MotorParams,
    j: &JointParams,
    qd: f64,
) -> f64 {
    let sustained = match source {
        BrakingBound::Sustained if !current_set.steady.is_empty() => {
            realizable_accel_set(&current_set.steady, m, j, qd)
        }
        _ => *accel_set,
    };
    braking_bound_from_av(&sustained, qd).unwrap_or(0.0)
}

/// Frame state advanced by `lead` at the acceleration of the measured current.
fn lead_state_of(frame: &ControlFrame, m: &MotorParams, j: &JointParams, lead: f64) -> (f64, f64) {
    let qdd_now = accel_from_current(m, j, frame.iq_prev, frame.qd_prev);
    lead_state(frame.q_prev, frame.qd_prev, qdd_now, lead)
}

/// One step of the voltage-realizable acceleration pipeline.
pub fn vra_step(
    qdd_des: f64,
    frame: &ControlFrame,
    m: &MotorParams,
    j: &JointParams,
    cfg: &PipelineConfig,
    residual: &VoltageResidual,
) -> StepCommand {
    let qd = frame.qd_prev;
    let (current_set, accel_set, mut flags) =
        voltage_stage(frame, m, j, &cfg.feasibility, residual);
    let i_set = current_set.effective();

    // The effective current set is never empty, so neither is A_v.
    let qdd_max = braking_bound(cfg.braking_bound, &current_set, &accel_set, m, j, qd);
    let envelope = EnvelopeConfig {
        const_bounds: None,
        ..cfg.envelope
    };
    let (q_lead, qd_lead) = lead_state_of(frame, m, j, cfg.envelope.lead);
    let kin = kinematic_set(q_lead, qd_lead, qdd_max, &envelope, j, EnvelopeMode::Vra);
    if kin.was_empty {
        flags |= StepFlags::EMPTY_KINEMATIC_SET;
    }
    if kin.position.out_of_box {
        flags |= StepFlags::OUT_OF_BOX;
    }

    let mut command_set = accel_set.intersect(&kin.set);
    if command_set.is_empty() {
        // Disjoint: take the endpoint of A_v closest to the kinematic set.
        let target = kin.set.midpoint().unwrap_or(qdd_max);
        command_set = Interval::point(accel_set.clamp(target).unwrap_or(qdd_max));
        flags |= StepFlags::EMPTY_COMMAND_SET;
    }

    let qdd_clip = command_set.clamp(qdd_des).unwrap_or(qdd_max);
    if moved(qdd_clip, qdd_des) {
        flags |= StepFlags::CLIPPED;
    }
    let i_unprojected = current_from_accel(m, j, qdd_clip, qd);
    let i_q_cmd = i_set.clamp(i_unprojected).unwrap_or(current_set.fallback);
    if moved(i_q_cmd, i_unprojected) {
        flags |= StepFlags::PROJECTED;
    }
    let qdd_cmd = accel_from_current(m, j, i_q_cmd, qd);

    StepCommand {
        qdd_des,
        qdd_cmd,
        i_q_cmd,
        diagnostics: StepDiagnostics {
            residual: *residual,
            current_set,
            accel_set,
            qdd_max,
            kinematic: Some(kin),
            command_set,
            flags,
        },
    }
}

/// One step of the viability baseline with constant bounds `(lb, ub)`.
///
/// Optionally clips the resulting torque with a MOR envelope.
#[allow(clippy::too_many_arguments)]
pub fn vbac_step(
    qdd_des: f64,
    frame: &ControlFrame,
    m: &MotorParams,
    j: &JointParams,
    cfg: &PipelineConfig,
    bounds: (f64, f64),
    mor: Option<&MorEnvelope>,
    residual: &VoltageResidual,
) -> StepCommand {
    let qd = frame.qd_prev;
    let (current_set, accel_set, mut flags) =
        voltage_stage(frame, m, j, &cfg.feasibility, residual);
    let envelope = cfg.envelope.with_const_bounds(bounds.0, bounds.1);
    let (q_lead, qd_lead) = lead_state_of(frame, m, j, cfg.envelope.lead);
    let kin = kinematic_set(q_lead, qd_lead, 0.0, &envelope, j, EnvelopeMode::Vbac);
    if kin.was_empty {
        flags |= StepFlags::EMPTY_KINEMATIC_SET;
    }
    if kin.position.out_of_box {
        flags |= StepFlags::OUT_OF_BOX;
    }
    let mut qdd = kin.set.clamp(qdd_des).unwrap_or(0.0);
    if moved(qdd, qdd_des) {
        flags |= StepFlags::CLIPPED;
    }
    let mut i_q_cmd = current_from_accel(m, j, qdd, qd);
    if let Some(mor) = mor {
        let tau = m.torque_from_current(i_q_cmd);
        let clipped = mor_clip(tau, qd, mor, m.v_bus);
        if moved(clipped, tau) {
            flags |= StepFlags::MOR_CLIPPED;
            i_q_cmd = clipped / m.k_t;
            qdd = accel_from_current(m, j, i_q_cmd, qd);
        }
    }
    StepCommand {
        qdd_des,
        qdd_cmd: qdd,
        i_q_cmd,
        diagnostics: StepDiagnostics {
            residual: *residual,
            current_set,
            accel_set,
            qdd_max: bounds.0,
            kinematic: Some(kin),
            command_set: kin.set,
            flags,
        },
    }
}

/// Unconstrained inverse dynamics.
pub fn raw_step(
    qdd_des: f64,
    frame: &ControlFrame,
    m: &MotorParams,
    j: &JointParams,
    cfg: &PipelineConfig,
    residual: &VoltageResidual,
) -> StepCommand {
    let (current_set, accel_set, flags) = voltage_stage(frame, m, j, &cfg.feasibility, residual);
    StepCommand {
        qdd_des,
        qdd_cmd: qdd_des,
        i_q_cmd: current_from_accel(m, j, qdd_des, frame.qd_prev),
        diagnostics: StepDiagnostics {
            residual: *residual,
            current_set,
            accel_set,
            qdd_max: 0.0,
            kinematic: None,
            command_set: Interval::REAL_LINE,
            flags,
        },
    }
}

/// A per-joint controller instance owning its residual state.
#[derive(Clone, Debug)]
pub struct Controller {
    pub kind: ControllerKind,
    pub motor: MotorParams,
    pub joint: JointParams,
    pub cfg: PipelineConfig,
    residual: ResidualEstimator,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        motor: MotorParams,
        joint: JointParams,
        cfg: PipelineConfig,
    ) -> Self {
        let residual = ResidualEstimator::new(
            cfg.feasibility.residual_alpha,
            cfg.feasibility.residual_model,
        );
        Controller {
            kind,
            motor,
            joint,
            cfg,
            residual,
        }
    }

    /// Update the residual from `frame` and compute the next command.
    pub fn step(&mut self, qdd_des: f64, frame: &ControlFrame) -> StepCommand {
        let r = self.residual.update(&self.motor, frame);
        let (m, j, cfg) = (&self.motor, &self.joint, &self.cfg);
        match self.kind {
            ControllerKind::Vra => vra_step(qdd_des, frame, m, j, cfg, &r),
            ControllerKind::VbacAggressive => {
                vbac_step(qdd_des, frame, m, j, cfg, cfg.aggressive, None, &r)
            }
            ControllerKind::VbacConservative => {
                vbac_step(qdd_des, frame, m, j, cfg, cfg.conservative, None, &r)
            }
            ControllerKind::VbacMor => vbac_step(
                qdd_des,
                frame,
                m,
                j,
                cfg,
                cfg.aggressive,
                Some(&cfg.mor),
                &r,
            ),
            ControllerKind::Raw => raw_step(qdd_des, frame, m, j, cfg, &r),
        }
    }

    pub fn reset(&mut self) {
        self.residual.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::Preset;
    use crate::feasibility::{predicted_steady_voltage, predicted_transient_voltage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (MotorParams, JointParams, PipelineConfig) {
        let preset = Preset::Motor8115;
        let m = preset.motor();
        let j = preset.joint();
        let cfg = PipelineConfig {
            feasibility: FeasibilityConfig::new(preset.i_max()),
            envelope: EnvelopeConfig::new(0.01),
            aggressive: (-3000.0, 3000.0),
            conservative: (-600.0, 600.0),
            mor: MorEnvelope::from_motor(&m, preset.i_max(), 48.0),
            braking_bound: BrakingBound::Realizable,
        };
        (m, j, cfg)
    }

    fn frame(m: &MotorParams, q: f64, qd: f64, iq: f64) -> ControlFrame {
        ControlFrame::steady(m, q, qd, iq, 1e-3, 5.0)
    }

    #[test]
    fn sustained_bound_ignores_slew_from_present_current() {
        // Driving at mid speed: the one-step slew down from the present
        // current limits the braking available in a single period, not the
        // settled capability.
        let (m, j, cfg) = setup();
        let f = frame(&m, 0.0, 0.5 * j.qd_ub, 15.0);
        let r = VoltageResidual::ZERO;
        let (cs, av, _) = voltage_stage(&f, &m, &j, &cfg.feasibility, &r);
        let realizable = braking_bound(BrakingBound::Realizable, &cs, &av, &m, &j, f.qd_prev);
        let sustained = braking_bound(BrakingBound::Sustained, &cs, &av, &m, &j, f.qd_prev);
        assert_eq!(realizable, av.lo().unwrap());
        assert!(
            sustained < realizable && realizable < 0.0,
            "{sustained} {realizable}"
        );
        let steady = realizable_accel_set(&cs.steady, &m, &j, f.qd_prev);
        assert_eq!(sustained, steady.lo().unwrap());
    }

    #[test]
    fn wide_open_state_passes_desired_through() {
        let (m, j, cfg) = setup();
        let f = frame(&m, 0.0, 1.0, 0.0);
        let c = vra_step(50.0, &f, &m, &j, &cfg, &VoltageResidual::ZERO);
        assert!((c.qdd_cmd - 50.0).abs() < 1e-9);
        assert!(!c.diagnostics.flags.contains(StepFlags::PROJECTED));
        assert!(!c.diagnostics.flags.contains(StepFlags::CLIPPED));
        let b = vbac_step(
            50.0,
            &f,
            &m,
            &j,
            &cfg,
            cfg.conservative,
            None,
            &VoltageResidual::ZERO,
        );
        assert!((b.qdd_cmd - c.qdd_cmd).abs() < 1e-9);
    }

    #[test]
    fn clipped_command_respects_voltage_budget() {
        let (m, j, cfg) = setup();
        let f = frame(&m, 0.0, 20.0, 5.0);
        let r = VoltageResidual::ZERO;
        let c = vra_step(1e5, &f, &m, &j, &cfg, &r);
        let (_, a_hi) = c.diagnostics.command_set.bounds().unwrap();
        assert!(c.qdd_cmd <= a_hi + 1e-9);
        let utr = predicted_transient_voltage(&m, &f, &r, cfg.feasibility.transient, c.i_q_cmd);
        let ust = predicted_steady_voltage(&m, &j, &f, &r, c.i_q_cmd);
        assert!(utr.norm() <= m.v_limit + 1e-9);
        assert!(ust.norm() <= m.v_limit + 1e-9);
    }

    #[test]
    fn accelerating_current_vanishes_at_budget_speed() {
        let (m, j, cfg) = setup();
        let qd_budget = m.v_limit / m.back_emf_constant();
        let f = frame(&m, 0.0, qd_budget, 0.0);
        let c = vra_step(1e5, &f, &m, &j, &cfg, &VoltageResidual::ZERO);
        assert!(c.i_q_cmd.abs() < 1e-6, "i = {}", c.i_q_cmd);
    }

    #[test]
    fn vbac_at_velocity_bound_does_not_accelerate() {
        let (m, j, cfg) = setup();
        let f = frame(&m, 0.0, j.qd_ub, 0.0);
        let c = vbac_step(
            1e5,
            &f,
            &m,
            &j,
            &cfg,
            cfg.aggressive,
            None,
            &VoltageResidual::ZERO,
        );
        assert!(c.qdd_cmd <= 1e-9);
    }

    #[test]
    fn mor_examples() {
        let mor = MorEnvelope {
            tau_max: 30.0,
            omega_c: 20.0,
            omega_max: 40.0,
            v_ref: 48.0,
        };
        assert!((mor_clip(30.0, 30.0, &mor, 48.0) - 15.0).abs() < 1e-12);
        assert!((mor_clip(-30.0, -30.0, &mor, 48.0) + 15.0).abs() < 1e-12);
        assert_eq!(mor_clip(5.0, 0.0, &mor, 48.0), 5.0);
        // Half the bus: breakpoints at 10 and 20 rad/s, peak torque 15.
        assert!((mor_clip(30.0, 5.0, &mor, 24.0) - 15.0).abs() < 1e-12);
        assert!((mor_clip(30.0, 15.0, &mor, 24.0) - 7.5).abs() < 1e-12);
        assert_eq!(mor_clip(30.0, 50.0, &mor, 48.0), 0.0);
    }

    #[test]
    fn clip_examples() {
        let iv = Interval::new(0.0, 10.0);
        assert_eq!(clip_to_interval(5.0, &iv).unwrap(), 5.0);
        assert_eq!(clip_to_interval(-3.0, &iv).unwrap(), 0.0);
        assert_eq!(clip_to_interval(12.0, &iv).unwrap(), 10.0);
        assert!(clip_to_interval(1.0, &Interval::EMPTY).is_err());
    }

    #[test]
    fn flags_round_trip_through_text() {
        let f = StepFlags::CLIPPED | StepFlags::PROJECTED | StepFlags::OUT_OF_BOX;
        assert_eq!(f.to_string().parse::<StepFlags>().unwrap(), f);
        assert_eq!(StepFlags::empty().to_string(), "-");
        assert_eq!("-".parse::<StepFlags>().unwrap(), StepFlags::empty());
        assert!("bogus".parse::<StepFlags>().is_err());
    }

    #[test]
    fn controller_ids_parse() {
        for k in ControllerKind::ALL {
            assert_eq!(k.id().parse::<ControllerKind>().unwrap(), k);
        }
        assert!("vbac".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn command_lies_in_current_set_and_is_idempotent() {
        let (m, j, cfg) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let q = rng.random_range(-1.6..1.6);
            let qd = rng.random_range(-35.0..35.0);
            let iq = rng.random_range(-50.0..50.0);
            let f = frame(&m, q, qd, iq);
            let r = VoltageResidual {
                d: rng.random_range(-1.0..1.0),
                q: rng.random_range(-1.0..1.0),
            };
            let des = rng.random_range(-5000.0..5000.0);
            let c = vra_step(des, &f, &m, &j, &cfg, &r);
            let cs = c.diagnostics.current_set;
            if cs.is_feasible() {
                assert!(
                    cs.set.contains(c.i_q_cmd),
                    "{} not in {:?}",
                    c.i_q_cmd,
                    cs.set
                );
            }
            let again = vra_step(c.qdd_cmd, &f, &m, &j, &cfg, &r);
            assert!(
                (again.qdd_cmd - c.qdd_cmd).abs() <= 1e-12 * c.qdd_cmd.abs().max(1.0) * 10.0,
                "{} vs {}",
                again.qdd_cmd,
                c.qdd_cmd
            );
            assert!((again.i_q_cmd - c.i_q_cmd).abs() <= 1e-12 * c.i_q_cmd.abs().max(1.0) * 10.0);
        }
    }

    #[test]
    fn kinematics_first_order_violates_budget_but_canonical_order_does_not() {
        // High-speed braking sweep: joint racing toward q_ub with the
        // accelerating current still flowing.
        let (m, j, cfg) = setup();
        let r = VoltageResidual::ZERO;
        let mut swapped_violations = 0;
        for k in 0..200 {
            let q = 0.6 + 0.004 * k as f64;
            let qd = j.qd_ub * (1.0 - 0.003 * k as f64);
            let f = frame(&m, q, qd, 20.0);
            let des = 1e4;

            // Swapped: kinematic set with constant bounds first, then current.
            let env = cfg
                .envelope
                .with_const_bounds(cfg.aggressive.0, cfg.aggressive.1);
            let kin = kinematic_set(q, qd, cfg.aggressive.0, &env, &j, EnvelopeMode::Vra);
            let qdd = kin.set.clamp(des).unwrap();
            let i = current_from_accel(&m, &j, qdd, qd);
            let u = predicted_transient_voltage(&m, &f, &r, cfg.feasibility.transient, i);
            if u.norm() > m.v_limit + 1e-9 {
                swapped_violations += 1;
            }

            let c = vra_step(des, &f, &m, &j, &cfg, &r);
            let u = predicted_transient_voltage(&m, &f, &r, cfg.feasibility.transient, c.i_q_cmd);
            let us = predicted_steady_voltage(&m, &j, &f, &r, c.i_q_cmd);
            assert!(u.norm() <= m.v_limit + 1e-9 && us.norm() <= m.v_limit + 1e-9);
        }
        assert!(swapped_violations > 0);
    }

    #[test]
    fn mor_from_motor_is_valid() {
        for p in Preset::ALL {
            let mor = MorEnvelope::from_motor(&p.motor(), p.i_max(), 48.0);
            mor.validate().unwrap();
            assert!((mor.omega_max - 48.0 / p.motor().back_emf_constant()).abs() < 1e-12);
        }
    }
}
