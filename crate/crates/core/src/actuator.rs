//! Single-joint PMSM actuator model with `i_d = 0`.
//!
//! Maps between q-axis current, joint torque, joint acceleration and the dq
//! voltage the motor needs at a given joint velocity:
//!
//! ```text
//! u_d = -p·qd·L_q·i_q
//! u_q =  R_s·i_q + p·qd·φ
//! τ   =  k_t·i_q = M·qdd + h(qd)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical constants and voltage budgets of one joint motor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    /// q-axis inductance (H).
    pub l_q: f64,
    /// Stator resistance (Ω).
    pub r_s: f64,
    /// Flux linkage (Wb).
    pub flux: f64,
    /// Joint velocity to electrical velocity factor (pole pairs × gear ratio).
    pub p: f64,
    /// Joint torque constant (Nm/A).
    pub k_t: f64,
    /// DC-link voltage (V). Physical ceiling of the voltage circle.
    pub v_bus: f64,
    /// Usable voltage budget for feasibility reasoning (V), `<= v_bus`.
    pub v_limit: f64,
}

impl MotorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l_q", self.l_q),
            ("r_s", self.r_s),
            ("flux", self.flux),
            ("p", self.p),
            ("k_t", self.k_t),
            ("v_bus", self.v_bus),
            ("v_limit", self.v_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if self.v_limit > self.v_bus {
            return Err(Error::param(
                "v_limit",
                format!("{} exceeds v_bus {}", self.v_limit, self.v_bus),
            ));
        }
        Ok(())
    }

    /// Back-EMF constant seen at the joint, `p·φ` (V·s/rad).
    pub fn back_emf_constant(&self) -> f64 {
        self.p * self.flux
    }

    /// Nominal dq voltage for a given joint velocity and q-axis current.
    pub fn dq_voltage(&self, qd: f64, i_q: f64) -> DqVoltage {
        DqVoltage {
            d: -self.p * qd * self.l_q * i_q,
            q: self.r_s * i_q + self.p * qd * self.flux,
        }
    }

    pub fn torque_from_current(&self, i_q: f64) -> f64 {
        self.k_t * i_q
    }

    pub fn with_v_limit(mut self, v_limit: f64) -> Self {
        self.v_limit = v_limit;
        self
    }
}

/// Mechanical constants and kinematic limits of one joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointParams {
    /// Reflected inertia (kg·m²).
    pub inertia: f64,
    /// Viscous friction coefficient (Nm·s/rad).
    #[serde(default)]
    pub viscous: f64,
    /// Coulomb friction magnitude (Nm).
    #[serde(default)]
    pub coulomb: f64,
    /// Lower position bound (rad).
    pub q_lb: f64,
    /// Upper position bound (rad).
    pub q_ub: f64,
    /// Velocity bound (rad/s).
    pub qd_ub: f64,
}

impl JointParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return Err(Error::param(
                "inertia",
                format!("must be > 0, got {}", self.inertia),
            ));
        }
        if !(self.viscous.is_finite() && self.viscous >= 0.0) {
            return Err(Error::param(
                "viscous",
                format!("must be >= 0, got {}", self.viscous),
            ));
        }
        if !(self.coulomb.is_finite() && self.coulomb >= 0.0) {
            return Err(Error::param(
                "coulomb",
                format!("must be >= 0, got {}", self.coulomb),
            ));
        }
        if !(self.q_lb.is_finite() && self.q_ub.is_finite() && self.q_lb < self.q_ub) {
            return Err(Error::param(
                "q_lb",
                format!("need q_lb < q_ub, got [{}, {}]", self.q_lb, self.q_ub),
            ));
        }
        if !(self.qd_ub.is_finite() && self.qd_ub > 0.0) {
            return Err(Error::param(
                "qd_ub",
                format!("must be > 0, got {}", self.qd_ub),
            ));
        }
        Ok(())
    }

    /// `h(qd) = b·qd + τ_c·sign(qd)`, with `sign(0) = 0`.
    pub fn friction(&self, qd: f64) -> f64 {
        let sign = if qd > 0.0 {
            1.0
        } else if qd < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.viscous * qd + self.coulomb * sign
    }

    pub fn range(&self) -> f64 {
        self.q_ub - self.q_lb
    }
}

/// Measured joint and motor state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: f64,
    pub qd: f64,
    pub i_q: f64,
}

/// A dq-frame voltage vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DqVoltage {
    pub d: f64,
    pub q: f64,
}

impl DqVoltage {
    pub fn new(d: f64, q: f64) -> Self {
        DqVoltage { d, q }
    }

    pub fn norm(&self) -> f64 {
        self.d.hypot(self.q)
    }
}

impl std::ops::Sub for DqVoltage {
    type Output = DqVoltage;
    fn sub(self, rhs: DqVoltage) -> DqVoltage {
        DqVoltage::new(self.d - rhs.d, self.q - rhs.q)
    }
}

impl std::ops::Add for DqVoltage {
    type Output = DqVoltage;
    fn add(self, rhs: DqVoltage) -> DqVoltage {
        DqVoltage::new(self.d + rhs.d, self.q + rhs.q)
    }
}

/// Nominal dq voltage, see [`MotorParams::dq_voltage`].
pub fn dq_voltage(m: &MotorParams, qd: f64, i_q: f64) -> DqVoltage {
    m.dq_voltage(qd, i_q)
}

pub fn torque_from_current(m: &MotorParams, i_q: f64) -> f64 {
    m.torque_from_current(i_q)
}

pub fn friction(j: &JointParams, qd: f64) -> f64 {
    j.friction(qd)
}

/// Inverse dynamics: `i_q = (M·qdd + h(qd)) / k_t`.
pub fn current_from_accel(m: &MotorParams, j: &JointParams, qdd: f64, qd: f64) -> f64 {
    (j.inertia * qdd + j.friction(qd)) / m.k_t
}

/// Forward dynamics: `qdd = (k_t·i_q - h(qd)) / M`.
pub fn accel_from_current(m: &MotorParams, j: &JointParams, i_q: f64, qd: f64) -> f64 {
    (m.k_t * i_q - j.friction(qd)) / j.inertia
}

/// Named parameter sets shipped with the crate.
///
/// The values are repository conventions sized so that the 30 Nm and 20 Nm
/// torque steps of the saturation census are representable, loosely modelled
/// on 8115-class and 6210-class quasi-direct-drive actuators behind a 6:1
/// reduction. They are not datasheet values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "8115-like")]
    Motor8115,
    #[serde(rename = "6210-like")]
    Motor6210,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Motor8115, Preset::Motor6210];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Motor8115 => "8115-like",
            Preset::Motor6210 => "6210-like",
        }
    }

    /// Motor constants with `v_limit` set to the budget matching the joint
    /// velocity bound (`p·φ·qd_ub`).
    pub fn motor(&self) -> MotorParams {
        let (l_q, r_s, flux, k_t) = match self {
            Preset::Motor8115 => (3.5e-4, 0.15, 0.0095, 1.197),
            Preset::Motor6210 => (2.5e-4, 0.25, 0.0070, 0.882),
        };
        let p = 84.0;
        let qd_ub = self.joint().qd_ub;
        MotorParams {
            l_q,
            r_s,
            flux,
            p,
            k_t,
            v_bus: 24.0,
            v_limit: p * flux * qd_ub,
        }
    }

    pub fn joint(&self) -> JointParams {
        match self {
            Preset::Motor8115 => JointParams {
                inertia: 0.05,
                viscous: 0.01,
                coulomb: 0.0,
                q_lb: -1.5,
                q_ub: 1.5,
                qd_ub: 27.0,
            },
            Preset::Motor6210 => JointParams {
                inertia: 0.03,
                viscous: 0.01,
                coulomb: 0.0,
                q_lb: -1.5,
                q_ub: 1.5,
                qd_ub: 36.0,
            },
        }
    }

    /// Drive continuous-current ceiling (A).
    pub fn i_max(&self) -> f64 {
        match self {
            Preset::Motor8115 => 60.0,
            Preset::Motor6210 => 40.0,
        }
    }

    /// Torque of the step input used in the saturation census (Nm).
    pub fn step_torque(&self) -> f64 {
        match self {
            Preset::Motor8115 => 30.0,
            Preset::Motor6210 => 20.0,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "8115-like" | "8115" => Ok(Preset::Motor8115),
            "6210-like" | "6210" => Ok(Preset::Motor6210),
            other => Err(Error::param("preset", format!("unknown preset `{other}`"))),
        }
    }
}
