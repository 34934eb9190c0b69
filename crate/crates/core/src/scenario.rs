//! Scenario files.
//!
//! One TOML file per scenario. Every section is optional and unknown keys are
//! rejected. A minimal file only needs `name`:
//!
//! ```toml
//! name = "braking-vra"
//! controller = "vra"          # vra | vbac-ab | vbac-cb | vbac-mor | raw
//! preset = "8115-like"        # 8115-like | 6210-like
//! trials = 3
//! seed = 7
//!
//! [timing]
//! dt = 0.001                  # control period (s)
//! dt_p = 0.01                 # kinematic reasoning step (s)
//! dt_sim = 2e-5               # plant integration step (s)
//! lookahead = 5.0             # quasi-steady look-ahead, in control periods
//! duration = 0.3              # episode length (s)
//!
//! [motor]                     # overrides of the preset motor
//! v_bus = 24.0
//! v_limit = 21.0
//!
//! [joint]                     # overrides of the preset joint
//! q_ub = 1.5
//!
//! [command]                   # torque step converted to a desired acceleration
//! torque = 30.0
//! t_on = 0.0
//! t_off = 0.25
//!
//! [initial]
//! q = 0.0
//! qd = 0.0
//!
//! [controller_settings]
//! aggressive = [-2000.0, 2000.0]
//! conservative = [-600.0, 600.0]
//! mor_v_ref = 48.0
//! transient = "standard"      # standard | emf-scaled
//! viability_form = "propagated" # propagated | braking
//! residual_model = "periodmean" # periodmean | static
//! residual_alpha = 1.0        # residual low-pass weight, 1 = no filtering
//! braking_bound = "sustained" # sustained | realizable
//! lead = 0.001                # envelope latency compensation (s)
//!
//! [drive]
//! bandwidth_hz = 1500.0
//!
//! [mismatch]
//! r_scale = 1.2
//! encoder_noise = 2e-5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuator::{JointParams, JointState, MotorParams, Preset};
use crate::envelope::{EnvelopeConfig, ViabilityForm};
use crate::error::{Error, Result};
use crate::feasibility::{FeasibilityConfig, ResidualModel, TransientModel};
use crate::pipeline::{BrakingBound, ControllerKind, MorEnvelope, PipelineConfig};
use crate::plant::{MismatchConfig, PiGains};

/// Reasoning steps the pipelines are specified for.
pub const SUPPORTED_DT_P: [f64; 4] = [0.001, 0.005, 0.01, 0.05];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    pub dt: f64,
    pub dt_p: f64,
    pub dt_sim: f64,
    pub lookahead: f64,
    pub duration: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            dt: 0.001,
            dt_p: 0.01,
            dt_sim: 2e-5,
            lookahead: 5.0,
            duration: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_bus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_limit: Option<f64>,
    /// Drive current ceiling (A).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub viscous: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coulomb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_lb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_ub: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qd_ub: Option<f64>,
}

/// Torque step `torque` applied over `[t_on, t_off)`, fed to the controller
/// as the desired acceleration `(torque − h(qd)) / M`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandProfile {
    pub torque: f64,
    pub t_on: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_off: Option<f64>,
}

impl CommandProfile {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_on && self.t_off.is_none_or(|off| t < off)
    }

    pub fn torque_at(&self, t: f64) -> f64 {
        if self.is_active(t) {
            self.torque
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialState {
    pub q: f64,
    pub qd: f64,
    pub i_q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    /// Aggressive constant acceleration bounds (rad/s²); defaults to the
    /// peak-torque acceleration `±k_t·i_max/M`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggressive: Option<(f64, f64)>,
    /// Conservative constant acceleration bounds (rad/s²); defaults to 40 %
    /// of the aggressive ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conservative: Option<(f64, f64)>,
    /// Voltage at which the MOR envelope is identified (V).
    pub mor_v_ref: f64,
    pub transient: TransientModel,
    pub viability_form: ViabilityForm,
    pub residual_alpha: f64,
    pub residual_model: ResidualModel,
    pub braking_bound: BrakingBound,
    /// Latency compensation of the kinematic envelopes (s); defaults to one
    /// control period.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lead: Option<f64>,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings {
            aggressive: None,
            conservative: None,
            mor_v_ref: 48.0,
            transient: TransientModel::Standard,
            viability_form: ViabilityForm::Propagated,
            residual_alpha: 1.0,
            residual_model: ResidualModel::PeriodMean,
            braking_bound: BrakingBound::Sustained,
            lead: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSettings {
    /// Current-loop bandwidth (Hz).
    pub bandwidth_hz: f64,
}

impl Default for DriveSettings {
    fn default() -> Self {
        DriveSettings {
            bandwidth_hz: 1500.0,
        }
    }
}

fn default_controller() -> ControllerKind {
    ControllerKind::Vra
}

fn default_preset() -> Preset {
    Preset::Motor8115
}

fn default_trials() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub motor: MotorOverrides,
    #[serde(default)]
    pub joint: JointOverrides,
    #[serde(default)]
    pub command: CommandProfile,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub controller_settings: ControllerSettings,
    #[serde(default)]
    pub drive: DriveSettings,
    #[serde(default)]
    pub mismatch: MismatchConfig,
}

fn check(ok: bool, field: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(field, reason))
    }
}

fn positive(v: f64, field: &str) -> Result<()> {
    check(
        v.is_finite() && v > 0.0,
        field,
        format!("must be > 0, got {v}"),
    )
}

impl Scenario {
    /// Scenario with every section at its default.
    pub fn new(name: impl Into<String>) -> Self {
        Scenario {
            name: name.into(),
            controller: default_controller(),
            preset: default_preset(),
            trials: default_trials(),
            seed: 0,
            timing: Timing::default(),
            motor: MotorOverrides::default(),
            joint: JointOverrides::default(),
            command: CommandProfile::default(),
            initial: InitialState::default(),
            controller_settings: ControllerSettings::default(),
            drive: DriveSettings::default(),
            mismatch: MismatchConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn motor_params(&self) -> MotorParams {
        let base = self.preset.motor();
        let o = &self.motor;
        MotorParams {
            l_q: o.l_q.unwrap_or(base.l_q),
            r_s: o.r_s.unwrap_or(base.r_s),
            flux: o.flux.unwrap_or(base.flux),
            p: o.p.unwrap_or(base.p),
            k_t: o.k_t.unwrap_or(base.k_t),
            v_bus: o.v_bus.unwrap_or(base.v_bus),
            v_limit: o.v_limit.unwrap_or(base.v_limit),
        }
    }

    pub fn joint_params(&self) -> JointParams {
        let base = self.preset.joint();
        let o = &self.joint;
        JointParams {
            inertia: o.inertia.unwrap_or(base.inertia),
            viscous: o.viscous.unwrap_or(base.viscous),
            coulomb: o.coulomb.unwrap_or(base.coulomb),
            q_lb: o.q_lb.unwrap_or(base.q_lb),
            q_ub: o.q_ub.unwrap_or(base.q_ub),
            qd_ub: o.qd_ub.unwrap_or(base.qd_ub),
        }
    }

    pub fn i_max(&self) -> f64 {
        self.motor.i_max.unwrap_or(self.preset.i_max())
    }

    pub fn initial_state(&self) -> JointState {
        JointState {
            q: self.initial.q,
            qd: self.initial.qd,
            i_q: self.initial.i_q,
        }
    }

    pub fn aggressive_bounds(&self) -> (f64, f64) {
        self.controller_settings.aggressive.unwrap_or_else(|| {
            let a = self.motor_params().k_t * self.i_max() / self.joint_params().inertia;
            (-a, a)
        })
    }

    pub fn conservative_bounds(&self) -> (f64, f64) {
        self.controller_settings.conservative.unwrap_or_else(|| {
            let (lo, hi) = self.aggressive_bounds();
            (0.4 * lo, 0.4 * hi)
        })
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let cs = &self.controller_settings;
        let m = self.motor_params();
        let envelope = EnvelopeConfig {
            dt_p: self.timing.dt_p,
            const_bounds: None,
            viability_form: cs.viability_form,
            lead: cs.lead.unwrap_or(self.timing.dt),
        };
        PipelineConfig {
            feasibility: FeasibilityConfig {
                transient: cs.transient,
                i_max: self.i_max(),
                residual_alpha: cs.residual_alpha,
                residual_model: cs.residual_model,
            },
            envelope,
            aggressive: self.aggressive_bounds(),
            conservative: self.conservative_bounds(),
            mor: MorEnvelope::from_motor(&m, self.i_max(), cs.mor_v_ref),
            braking_bound: cs.braking_bound,
        }
    }

    pub fn pi_gains(&self) -> PiGains {
        PiGains::from_bandwidth(
            &self.motor_params(),
            2.0 * std::f64::consts::PI * self.drive.bandwidth_hz,
        )
    }

    /// Number of control steps in one episode.
    pub fn steps(&self) -> usize {
        (self.timing.duration / self.timing.dt).round() as usize
    }

    /// Check every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        check(!self.name.trim().is_empty(), "name", "must not be empty")?;
        check(self.trials >= 1, "trials", "must be >= 1")?;

        let t = &self.timing;
        positive(t.dt, "timing.dt")?;
        positive(t.dt_p, "timing.dt_p")?;
        check(
            SUPPORTED_DT_P.iter().any(|&v| (v - t.dt_p).abs() <= 1e-12),
            "timing.dt_p",
            format!("must be one of {SUPPORTED_DT_P:?}, got {}", t.dt_p),
        )?;
        positive(t.dt_sim, "timing.dt_sim")?;
        check(
            t.dt_sim <= t.dt / 10.0 * (1.0 + 1e-9),
            "timing.dt_sim",
            format!("must be <= dt/10 = {}, got {}", t.dt / 10.0, t.dt_sim),
        )?;
        check(
            t.lookahead.is_finite() && t.lookahead >= 1.0,
            "timing.lookahead",
            format!("must be >= 1, got {}", t.lookahead),
        )?;
        positive(t.duration, "timing.duration")?;
        check(
            t.duration >= 2.0 * t.dt,
            "timing.duration",
            "must cover at least two control periods",
        )?;

        let m = self.motor_params();
        m.validate()
            .map_err(|e| Error::validation(format!("motor.{}", field_of(&e)), e.to_string()))?;
        positive(self.i_max(), "motor.i_max")?;
        let j = self.joint_params();
        j.validate()
            .map_err(|e| Error::validation(format!("joint.{}", field_of(&e)), e.to_string()))?;

        let c = &self.command;
        check(c.torque.is_finite(), "command.torque", "must be finite")?;
        check(
            c.t_on.is_finite() && c.t_on >= 0.0,
            "command.t_on",
            "must be >= 0",
        )?;
        if let Some(off) = c.t_off {
            check(
                off.is_finite() && off > c.t_on,
                "command.t_off",
                "must be > t_on",
            )?;
        }

        let s = &self.initial;
        check(
            s.q.is_finite() && s.qd.is_finite() && s.i_q.is_finite(),
            "initial",
            "must be finite",
        )?;

        let cs = &self.controller_settings;
        for (field, b) in [
            ("controller_settings.aggressive", self.aggressive_bounds()),
            (
                "controller_settings.conservative",
                self.conservative_bounds(),
            ),
        ] {
            check(
                b.0.is_finite() && b.1.is_finite() && b.0 < 0.0 && 0.0 < b.1,
                field,
                format!("need lb < 0 < ub, got ({}, {})", b.0, b.1),
            )?;
        }
        positive(cs.mor_v_ref, "controller_settings.mor_v_ref")?;
        check(
            cs.residual_alpha > 0.0 && cs.residual_alpha <= 1.0,
            "controller_settings.residual_alpha",
            "must be in (0, 1]",
        )?;
        positive(self.drive.bandwidth_hz, "drive.bandwidth_hz")?;
        self.mismatch
            .validate()
            .map_err(|e| Error::validation(format!("mismatch.{}", field_of(&e)), e.to_string()))?;
        self.pipeline_config()
            .mor
            .validate()
            .map_err(|e| Error::validation("controller_settings.mor_v_ref", e.to_string()))?;
        Ok(())
    }
}

fn field_of(e: &Error) -> &str {
    match e {
        Error::InvalidParam { field, .. } => field,
        _ => "?",
    }
}

/// Read and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Scenario {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let sc: Scenario = toml::from_str(&text).map_err(|e| Error::Scenario {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    sc.validate()?;
    Ok(sc)
}

pub fn save_scenario(sc: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, sc.to_toml_string()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("scenario.rs")
            .lines()
            .filter_map(|l| l.strip_prefix("//!"))
            .skip_while(|l| !l.contains("```toml"))
            .skip(1)
            .take_while(|l| !l.contains("```"))
            .map(|l| format!("{}\n", l.strip_prefix(' ').unwrap_or(l)))
            .collect();
        let sc = Scenario::from_toml_str(&doc).unwrap();
        assert_eq!(sc.controller_settings.braking_bound, BrakingBound::Sustained);
        assert_eq!(sc.controller_settings.lead, Some(0.001));
        assert_eq!(sc.mismatch.r_scale, 1.2);
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let sc = Scenario::from_toml_str("name = \"x\"").unwrap();
        assert_eq!(sc.timing.dt, 0.001);
        assert_eq!(sc.timing.dt_sim, 2e-5);
        assert_eq!(sc.controller, ControllerKind::Vra);
        assert_eq!(sc.trials, 1);
        assert_eq!(sc.motor_params(), Preset::Motor8115.motor());
    }

    #[test]
    fn negative_dt_p_names_the_field() {
        let err = Scenario::from_toml_str("name = \"x\"\n[timing]\ndt_p = -1.0\n").unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "timing.dt_p"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsupported_dt_p_rejected() {
        let err = Scenario::from_toml_str("name = \"x\"\n[timing]\ndt_p = 0.002\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "timing.dt_p"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::from_toml_str("name = \"x\"\nbogus = 1\n").is_err());
        assert!(Scenario::from_toml_str("name = \"x\"\n[timing]\ndtp = 0.01\n").is_err());
        assert!(Scenario::from_toml_str("name = \"x\"\n[mismatch]\nr = 1.0\n").is_err());
    }

    #[test]
    fn nested_field_errors_are_qualified() {
        let err = Scenario::from_toml_str("name = \"x\"\n[mismatch]\nr_scale = 0.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "mismatch.r_scale"));
        let err = Scenario::from_toml_str("name = \"x\"\n[motor]\nv_limit = 30.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "motor.v_limit"));
        let err = Scenario::from_toml_str("name = \"x\"\ntrials = 0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "trials"));
    }

    #[test]
    fn round_trip() {
        let mut sc = Scenario::new("round");
        sc.controller = ControllerKind::VbacMor;
        sc.preset = Preset::Motor6210;
        sc.trials = 3;
        sc.seed = 99;
        sc.timing.dt_p = 0.005;
        sc.motor.v_limit = Some(12.5);
        sc.joint.q_ub = Some(0.9);
        sc.command = CommandProfile {
            torque: -20.0,
            t_on: 0.01,
            t_off: Some(0.2),
        };
        sc.initial.qd = 3.25;
        sc.controller_settings.aggressive = Some((-1234.5, 987.0));
        sc.controller_settings.transient = TransientModel::EmfScaled;
        sc.mismatch.r_scale = 1.2;
        sc.mismatch.encoder_noise = 2e-5;
        let text = sc.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back, sc);
        let minimal = Scenario::from_toml_str("name = \"m\"").unwrap();
        assert_eq!(
            Scenario::from_toml_str(&minimal.to_toml_string().unwrap()).unwrap(),
            minimal
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let sc = Scenario::new("file");
        save_scenario(&sc, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), sc);
        let missing = load_scenario(&dir.path().join("nope.toml"));
        assert!(matches!(missing, Err(Error::Scenario { .. })));
    }

    #[test]
    fn command_profile_window() {
        let c = CommandProfile {
            torque: 5.0,
            t_on: 0.1,
            t_off: Some(0.2),
        };
        assert_eq!(c.torque_at(0.05), 0.0);
        assert_eq!(c.torque_at(0.1), 5.0);
        assert_eq!(c.torque_at(0.2), 0.0);
    }
}
