//! Continuous-time single-joint PMSM plant.
//!
//! Electrical state is the q-axis current only (`i_d` is held at zero by the
//! drive). The drive runs a PI current loop with back-EMF feedforward at the
//! simulation rate, saturates the requested voltage onto the bus circle with
//! d-axis priority, and the plant integrates
//!
//! ```text
//! L'·di/dt = u_q + u_offset − R'·i − p·φ'·qd
//! M·qdd    = k_t'·i − b·qd − τ_c·sign(qd)
//! ```
//!
//! with RK4, primes marking mismatch-scaled parameters.

use serde::{Deserialize, Serialize};

use crate::actuator::{DqVoltage, JointParams, MotorParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlantState {
    pub time: f64,
    pub q: f64,
    pub qd: f64,
    pub i_q: f64,
    /// Voltage applied over the last sub-step.
    pub u: DqVoltage,
    pub saturated: bool,
}

impl PlantState {
    pub fn at_rest(q: f64) -> Self {
        PlantState {
            q,
            ..Default::default()
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.q.is_finite() && self.qd.is_finite() && self.i_q.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState {
                time: self.time,
                q: self.q,
                qd: self.qd,
                iq: self.i_q,
            })
        }
    }
}

/// Differences between the plant and the nominal model the controllers use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchConfig {
    pub r_scale: f64,
    /// Scales both back-EMF and torque constant.
    pub flux_scale: f64,
    pub l_scale: f64,
    /// Additive q-axis voltage bias seen by the winding (V).
    pub u_offset: f64,
    /// Standard deviation of additive position noise on the encoder (rad).
    pub encoder_noise: f64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        MismatchConfig {
            r_scale: 1.0,
            flux_scale: 1.0,
            l_scale: 1.0,
            u_offset: 0.0,
            encoder_noise: 0.0,
        }
    }
}

impl MismatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("r_scale", self.r_scale),
            ("flux_scale", self.flux_scale),
            ("l_scale", self.l_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(field, format!("must be > 0, got {v}")));
            }
        }
        if !self.u_offset.is_finite() {
            return Err(Error::param("u_offset", "must be finite"));
        }
        if !(self.encoder_noise.is_finite() && self.encoder_noise >= 0.0) {
            return Err(Error::param("encoder_noise", "must be >= 0"));
        }
        Ok(())
    }

    pub fn is_nominal(&self) -> bool {
        *self == MismatchConfig::default()
    }
}

/// PI current-loop gains, volts per amp and volts per amp-second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl PiGains {
    /// Pole-zero cancellation at bandwidth `omega` (rad/s):
    /// `kp = L_q·ω`, `ki = R_s·ω`.
    pub fn from_bandwidth(m: &MotorParams, omega: f64) -> Self {
        PiGains {
            kp: m.l_q * omega,
            ki: m.r_s * omega,
        }
    }

    /// 1.5 kHz loop.
    pub fn default_for(m: &MotorParams) -> Self {
        Self::from_bandwidth(m, 2.0 * std::f64::consts::PI * 1500.0)
    }
}

/// Drive-side current loop state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CurrentLoop {
    /// Integrator output (V).
    pub integral: f64,
}

/// Requested dq voltage for reference `i_ref` changing at `di_ref` (A/s).
///
/// `u_q = kp·e + integral + R_s·i_ref + p·qd·φ + L_q·di_ref`,
/// `u_d = −p·qd·L_q·i_q`.
pub fn current_controller(
    i_ref: f64,
    di_ref: f64,
    s: &PlantState,
    m: &MotorParams,
    gains: &PiGains,
    state: &CurrentLoop,
) -> DqVoltage {
    let e = i_ref - s.i_q;
    let uq = gains.kp * e + state.integral + m.r_s * i_ref + m.p * s.qd * m.flux + m.l_q * di_ref;
    let ud = -m.p * s.qd * m.l_q * s.i_q;
    DqVoltage::new(ud, uq)
}

impl CurrentLoop {
    /// Integrate the error, freezing the integrator when saturated and the
    /// error would push further into saturation.
    pub fn integrate(
        &mut self,
        error: f64,
        requested_q: f64,
        saturated: bool,
        gains: &PiGains,
        dt: f64,
    ) {
        let winding_up = saturated && error * requested_q > 0.0;
        if !winding_up {
            self.integral += gains.ki * error * dt;
        }
    }
}

/// Project the requested voltage onto the circle of radius `v_bus`, keeping
/// `u_d` when possible. Returns the applied voltage and whether it changed.
pub fn saturate_voltage(ud: f64, uq: f64, v_bus: f64) -> (f64, f64, bool) {
    let norm = ud.hypot(uq);
    if norm <= v_bus {
        return (ud, uq, false);
    }
    if ud.abs() > v_bus {
        let k = v_bus / norm;
        return (ud * k, uq * k, true);
    }
    let room = (v_bus * v_bus - ud * ud).max(0.0).sqrt();
    (ud, uq.clamp(-room, room), true)
}

#[derive(Clone, Copy, Debug)]
struct TrueParams {
    l: f64,
    r: f64,
    emf: f64,
    k_t: f64,
    offset: f64,
}

impl TrueParams {
    fn new(m: &MotorParams, mis: &MismatchConfig) -> Self {
        TrueParams {
            l: m.l_q * mis.l_scale,
            r: m.r_s * mis.r_scale,
            emf: m.p * m.flux * mis.flux_scale,
            k_t: m.k_t * mis.flux_scale,
            offset: mis.u_offset,
        }
    }

    /// Derivatives of `(q, qd, i)` under constant `u_q`.
    fn deriv(&self, j: &JointParams, uq: f64, x: [f64; 3]) -> [f64; 3] {
        let [_, qd, i] = x;
        let di = (uq + self.offset - self.r * i - self.emf * qd) / self.l;
        let qdd = (self.k_t * i - j.friction(qd)) / j.inertia;
        [qd, qdd, di]
    }
}

fn axpy(x: [f64; 3], h: f64, k: [f64; 3]) -> [f64; 3] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2]]
}

/// Advance the plant by `dt_sim` with the applied voltage held constant.
pub fn step(
    s: &PlantState,
    u: DqVoltage,
    saturated: bool,
    m: &MotorParams,
    j: &JointParams,
    mis: &MismatchConfig,
    dt_sim: f64,
) -> Result<PlantState> {
    let p = TrueParams::new(m, mis);
    let x = [s.q, s.qd, s.i_q];
    let h = dt_sim;
    let k1 = p.deriv(j, u.q, x);
    let k2 = p.deriv(j, u.q, axpy(x, 0.5 * h, k1));
    let k3 = p.deriv(j, u.q, axpy(x, 0.5 * h, k2));
    let k4 = p.deriv(j, u.q, axpy(x, h, k3));
    let mut next = [0.0; 3];
    for n in 0..3 {
        next[n] = x[n] + h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
    }
    let out = PlantState {
        time: s.time + h,
        q: next[0],
        qd: next[1],
        i_q: next[2],
        u,
        saturated,
    };
    out.check_finite()?;
    Ok(out)
}

/// Summary of one control period of the drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodOutcome {
    pub state: PlantState,
    /// Mean requested voltage over the period.
    pub requested: DqVoltage,
    /// Mean applied voltage over the period.
    pub applied: DqVoltage,
    /// Any sub-step saturated.
    pub saturated: bool,
}

/// The drive plus plant, advanced one control period at a time.
#[derive(Clone, Debug)]
pub struct Drive {
    pub motor: MotorParams,
    pub joint: JointParams,
    pub mismatch: MismatchConfig,
    pub gains: PiGains,
    pub dt_sim: f64,
    pub state: PlantState,
    pub current_loop: CurrentLoop,
}

impl Drive {
    pub fn new(
        motor: MotorParams,
        joint: JointParams,
        mismatch: MismatchConfig,
        gains: PiGains,
        dt_sim: f64,
        state: PlantState,
    ) -> Self {
        // The feed-forward covers the nominal model, so an initial steady
        // state is an equilibrium with an empty integrator.
        let current_loop = CurrentLoop::default();
        Drive {
            motor,
            joint,
            mismatch,
            gains,
            dt_sim,
            state,
            current_loop,
        }
    }

    /// Track `i_cmd` over one period of length `dt`, ramping the reference
    /// linearly from the current measured at the start of the period.
    pub fn run_period(&mut self, i_cmd: f64, dt: f64) -> Result<PeriodOutcome> {
        let n = (dt / self.dt_sim).round().max(1.0) as usize;
        let h = dt / n as f64;
        let i_start = self.state.i_q;
        let rate = (i_cmd - i_start) / dt;
        let v_bus = self.motor.v_bus;
        let mut req_sum = DqVoltage::default();
        let mut app_sum = DqVoltage::default();
        let mut any_sat = false;
        for k in 0..n {
            let i_ref = i_start + rate * (k as f64 * h);
            let req = current_controller(
                i_ref,
                rate,
                &self.state,
                &self.motor,
                &self.gains,
                &self.current_loop,
            );
            let (ud, uq, sat) = saturate_voltage(req.d, req.q, v_bus);
            let applied = DqVoltage::new(ud, uq);
            self.current_loop
                .integrate(i_ref - self.state.i_q, req.q, sat, &self.gains, h);
            self.state = step(
                &self.state,
                applied,
                sat,
                &self.motor,
                &self.joint,
                &self.mismatch,
                h,
            )?;
            req_sum = req_sum + req;
            app_sum = app_sum + applied;
            any_sat |= sat;
        }
        let inv = 1.0 / n as f64;
        Ok(PeriodOutcome {
            state: self.state,
            requested: DqVoltage::new(req_sum.d * inv, req_sum.q * inv),
            applied: DqVoltage::new(app_sum.d * inv, app_sum.q * inv),
            saturated: any_sat,
        })
    }
}
