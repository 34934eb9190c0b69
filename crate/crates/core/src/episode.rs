//! Closed-loop episodes: controller at the control period, drive and plant
//! underneath, one trace row per control step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::actuator::{accel_from_current, JointParams, MotorParams};
use crate::error::Result;
use crate::feasibility::ControlFrame;
use crate::pipeline::{Controller, ControllerKind};
use crate::plant::{Drive, PlantState};
use crate::scenario::Scenario;
use crate::trace::{RowExtras, Trace, TraceRow};

/// Seed used for trial `trial` of a scenario.
pub fn trial_seed(sc: &Scenario, trial: u32) -> u64 {
    sc.seed.wrapping_add(u64::from(trial))
}

/// Encoder model: true position plus Gaussian noise.
struct Encoder {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl Encoder {
    fn read(&mut self, q: f64) -> f64 {
        if self.sigma > 0.0 {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            q + self.sigma * n
        } else {
            q
        }
    }
}

/// Desired acceleration realizing motor torque `tau` at speed `qd`.
fn desired_accel(m: &MotorParams, j: &JointParams, tau: f64, qd: f64) -> f64 {
    accel_from_current(m, j, tau / m.k_t, qd)
}

/// Run one episode of `sc` with controller `kind` and noise seed `seed`.
pub fn run_episode_with(sc: &Scenario, kind: ControllerKind, seed: u64) -> Result<Trace> {
    sc.validate()?;
    let m = sc.motor_params();
    let j = sc.joint_params();
    let t = sc.timing;
    let init = sc.initial_state();
    let mut drive = Drive::new(
        m,
        j,
        sc.mismatch,
        sc.pi_gains(),
        t.dt_sim,
        PlantState {
            q: init.q,
            qd: init.qd,
            i_q: init.i_q,
            ..Default::default()
        },
    );
    let mut controller = Controller::new(kind, m, j, sc.pipeline_config());
    let mut encoder = Encoder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        sigma: sc.mismatch.encoder_noise,
    };

    let steps = sc.steps();
    let mut trace = Trace {
        rows: Vec::with_capacity(steps),
        extras: Vec::with_capacity(steps),
    };
    // History before step 0 is the initial state held with nominal voltage.
    let mut q_meas = encoder.read(init.q);
    let mut frame = ControlFrame::steady(&m, q_meas, init.qd, init.i_q, t.dt, t.lookahead);

    for k in 0..steps {
        let time = k as f64 * t.dt;
        let s = drive.state;
        if k > 0 {
            let q_new = encoder.read(s.q);
            let qd_est = (q_new - q_meas) / t.dt;
            q_meas = q_new;
            frame = ControlFrame {
                q_prev: q_meas,
                qd_prev: qd_est,
                qd_prev2: frame.qd_prev,
                iq_prev: s.i_q,
                iq_prev2: frame.iq_prev,
                ..frame
            };
        }
        let qdd_des = desired_accel(&m, &j, sc.command.torque_at(time), frame.qd_prev);
        let cmd = controller.step(qdd_des, &frame);
        let out = drive.run_period(cmd.i_q_cmd, t.dt)?;
        frame.ud_prev = out.applied.d;
        frame.uq_prev = out.applied.q;

        let d = &cmd.diagnostics;
        trace.rows.push(TraceRow {
            time,
            q: s.q,
            qd: s.qd,
            iq: s.i_q,
            ud_req: out.requested.d,
            uq_req: out.requested.q,
            ud: out.applied.d,
            uq: out.applied.q,
            saturated: out.saturated,
            acmd_lo: d.command_set.lo_or_nan(),
            acmd_hi: d.command_set.hi_or_nan(),
            iset_lo: d.current_set.set.lo_or_nan(),
            iset_hi: d.current_set.set.hi_or_nan(),
            qdd_des,
            qdd_cmd: cmd.qdd_cmd,
            iq_cmd: cmd.i_q_cmd,
            flags: d.flags,
        });
        trace.extras.push(RowExtras {
            accel_set: d.accel_set,
            velocity_envelope: d.kinematic.and_then(|k| k.velocity),
            q_measured: q_meas,
            residual: d.residual,
        });
    }
    Ok(trace)
}

/// Run trial `trial` of `sc` with its own controller.
pub fn run_episode(sc: &Scenario, trial: u32) -> Result<Trace> {
    run_episode_with(sc, sc.controller, trial_seed(sc, trial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn braking(kind: ControllerKind) -> Scenario {
        let mut sc = Scenario::new("braking");
        sc.controller = kind;
        sc.command.torque = 30.0;
        sc.timing.duration = 0.15;
        sc
    }

    #[test]
    fn zero_command_from_rest_is_all_zero() {
        for kind in ControllerKind::ALL {
            let mut sc = Scenario::new("zero");
            sc.controller = kind;
            sc.timing.duration = 0.05;
            let tr = run_episode(&sc, 0).unwrap();
            assert_eq!(tr.len(), 50);
            for r in &tr.rows {
                assert_eq!((r.q, r.qd, r.iq), (0.0, 0.0, 0.0));
                assert_eq!((r.ud, r.uq, r.iq_cmd, r.qdd_cmd), (0.0, 0.0, 0.0, 0.0));
                assert!(!r.saturated);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut sc = braking(ControllerKind::Vra);
        sc.mismatch.encoder_noise = 2e-5;
        let a = run_episode(&sc, 0).unwrap();
        let b = run_episode(&sc, 0).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let c = run_episode(&sc, 1).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn vra_command_stays_in_current_set() {
        let tr = run_episode(&braking(ControllerKind::Vra), 0).unwrap();
        for r in &tr.rows {
            if !r.current_set().is_empty() {
                assert!(r.current_set().contains(r.iq_cmd));
            }
        }
    }

    /// Joint coasting at 10 rad/s with the commanded torque cancelling
    /// viscous friction, far from every bound.
    fn cruise(mismatch: crate::plant::MismatchConfig) -> Scenario {
        let mut sc = Scenario::new("cruise");
        sc.joint.q_lb = Some(-100.0);
        sc.joint.q_ub = Some(100.0);
        sc.initial.qd = 10.0;
        sc.initial.i_q = 0.01 * 10.0 / sc.motor_params().k_t;
        sc.command.torque = 0.1;
        sc.timing.duration = 0.06;
        sc.mismatch = mismatch;
        sc
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Row k's residual is the nominal-minus-applied voltage of step k-1,
        // so |r_{k+1} - r_k| is the error of the estimate used at step k.
        #[test]
        fn residual_absorbs_constant_mismatch(
            r_scale in 0.8..1.2f64,
            flux_scale in 0.8..1.2f64,
            l_scale in 0.8..1.2f64,
            u_offset in -1.0..1.0f64,
        ) {
            let mis = crate::plant::MismatchConfig { r_scale, flux_scale, l_scale, u_offset, encoder_noise: 0.0 };
            let tr = run_episode(&cruise(mis), 0).unwrap();
            let err = |k: usize| {
                let (a, b) = (tr.extras[k].residual, tr.extras[k + 1].residual);
                (b.d - a.d).hypot(b.q - a.q)
            };
            let initial = err(0);
            prop_assert!(err(50) <= 0.1 * initial + 1e-9, "initial {initial}, after 50 steps {}", err(50));
        }
    }
}
