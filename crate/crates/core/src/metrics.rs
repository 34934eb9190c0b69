//! Trace metrics: realizability census and near-boundary performance.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::actuator::{JointParams, MotorParams};
use crate::error::{Error, Result};
use crate::scenario::CommandProfile;
use crate::trace::{Trace, TraceRow};

/// Torque errors at or below this magnitude (Nm) carry no sign.
pub const TORQUE_SIGN_DEADBAND: f64 = 1e-6;

/// Relative slack on the current-set membership test of the success flag.
const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub realizable_fraction: f64,
    /// Velocity excess over the bound (rad/s).
    pub dqd_max: f64,
    /// RMS of commanded-minus-actual next velocity (rad/s).
    pub dqd_rms: f64,
    /// RMS of commanded-minus-realized torque (Nm).
    pub dtau_rms: f64,
    /// Sign changes of the torque error per second (Hz).
    pub f_zc: f64,
    pub success: bool,
}

/// `1 − saturated / total` over `rows`.
pub fn realizable_fraction(rows: &[TraceRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let sat = rows.iter().filter(|r| r.saturated).count();
    Ok(1.0 - sat as f64 / rows.len() as f64)
}

/// Rows during which the torque command is active, minus the first `skip`.
pub fn command_window(trace: &Trace, command: &CommandProfile, skip: usize) -> Range<usize> {
    let active: Vec<usize> = (0..trace.len())
        .filter(|&k| command.is_active(trace.rows[k].time))
        .collect();
    match (active.first(), active.last()) {
        (Some(&a), Some(&b)) => (a + skip).min(b + 1)..b + 1,
        _ => 0..0,
    }
}

/// Near-boundary window: from the first row within 10 % of the range of a
/// position bound, up to and including the first row whose velocity has
/// crossed zero afterwards (to the end of the trace if it never does).
pub fn boundary_window(trace: &Trace, j: &JointParams) -> Option<Range<usize>> {
    let margin = 0.1 * j.range();
    let rows = &trace.rows;
    let start = rows
        .iter()
        .position(|r| (j.q_ub - r.q).min(r.q - j.q_lb) < margin)?;
    let v0 = rows[start].qd;
    let end = (start + 1..rows.len())
        .find(|&k| rows[k].qd == 0.0 || rows[k].qd.signum() != v0.signum())
        .map_or(rows.len(), |k| k + 1);
    Some(start..end)
}

/// Windows of a braking-to-boundary episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryWindows {
    /// First row within 10 % of the velocity range of the velocity bound,
    /// clamped to `braking.start`.
    pub approach_start: usize,
    /// See [`boundary_window`].
    pub braking: Range<usize>,
}

impl BoundaryWindows {
    /// Approach and braking rows together.
    pub fn span(&self) -> Range<usize> {
        self.approach_start..self.braking.end
    }
}

/// Near-boundary windows of `trace`, `None` if it never nears a position bound.
pub fn boundary_windows(trace: &Trace, j: &JointParams) -> Option<BoundaryWindows> {
    let braking = boundary_window(trace, j)?;
    let margin = 0.1 * 2.0 * j.qd_ub;
    let approach_start = trace.rows[..braking.start]
        .iter()
        .position(|r| j.qd_ub - r.qd.abs() < margin)
        .unwrap_or(braking.start);
    Some(BoundaryWindows {
        approach_start,
        braking,
    })
}

/// Sign changes of `signal` per second, ignoring samples inside `deadband`.
///
/// The duration is `signal.len() · dt`.
pub fn zero_crossing_rate(signal: &[f64], dt: f64, deadband: f64) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    let mut last = 0.0_f64;
    let mut changes = 0usize;
    for &x in signal {
        if x.abs() <= deadband {
            continue;
        }
        if last != 0.0 && x.signum() != last {
            changes += 1;
        }
        last = x.signum();
    }
    changes as f64 / (signal.len() as f64 * dt)
}

fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Velocity excess `max(0, max|qd| − qd_ub)` over `rows`.
pub fn velocity_excess(rows: &[TraceRow], j: &JointParams) -> f64 {
    rows.iter()
        .map(|r| r.qd.abs() - j.qd_ub)
        .fold(0.0, f64::max)
}

/// Largest position excursion beyond `[q_lb, q_ub]` over `rows`.
pub fn position_excess(rows: &[TraceRow], j: &JointParams) -> f64 {
    rows.iter()
        .map(|r| (r.q - j.q_ub).max(j.q_lb - r.q))
        .fold(0.0, f64::max)
}

/// Whether row `r` executed an unsaturated command inside its realizable
/// current set.
pub fn row_realizable(r: &TraceRow) -> bool {
    let set = r.current_set();
    !r.saturated && set.contains_with_tol(r.iq_cmd, MEMBERSHIP_TOL * r.iq_cmd.abs().max(1.0))
}

/// Near-boundary metrics over `window`.
///
/// Tracking errors pair the command of row `k` with the state of row `k+1`,
/// so the last row of the trace only contributes to the velocity excess and
/// the success flag.
pub fn near_boundary_metrics(
    trace: &Trace,
    window: Range<usize>,
    m: &MotorParams,
    j: &JointParams,
    dt: f64,
) -> Result<MetricsReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let window = window.start.min(trace.len())..window.end.min(trace.len());
    if window.len() < 2 {
        return Err(Error::WindowTooShort { len: window.len() });
    }
    let rows = &trace.rows[window.clone()];
    let pairs: Vec<(&TraceRow, &TraceRow)> = (window.start..window.end.min(trace.len() - 1))
        .map(|k| (&trace.rows[k], &trace.rows[k + 1]))
        .collect();
    let torque_err: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| m.k_t * (a.iq_cmd - b.iq))
        .collect();
    Ok(MetricsReport {
        realizable_fraction: realizable_fraction(rows)?,
        dqd_max: velocity_excess(rows, j),
        dqd_rms: rms(pairs.iter().map(|(a, b)| a.qd + a.qdd_cmd * dt - b.qd)),
        dtau_rms: rms(torque_err.iter().copied()),
        f_zc: zero_crossing_rate(&torque_err, dt, TORQUE_SIGN_DEADBAND),
        success: rows.iter().all(row_realizable),
    })
}

/// Metrics over the approach and braking windows of `trace`; the success
/// flag covers the braking window only.
pub fn boundary_metrics(
    trace: &Trace,
    m: &MotorParams,
    j: &JointParams,
) -> Result<(BoundaryWindows, MetricsReport)> {
    let dt = trace.dt().ok_or(Error::EmptyTrace)?;
    let w = boundary_windows(trace, j).ok_or(Error::NoBoundaryApproach)?;
    let mut report = near_boundary_metrics(trace, w.span(), m, j, dt)?;
    let braking = &trace.rows[w.braking.start..w.braking.end.min(trace.len())];
    report.success = braking.iter().all(row_realizable);
    Ok((w, report))
}

/// Field-wise mean over trials; success only if every trial succeeded.
pub fn aggregate(reports: &[MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(MetricsReport {
        realizable_fraction: mean(|r| r.realizable_fraction),
        dqd_max: mean(|r| r.dqd_max),
        dqd_rms: mean(|r| r.dqd_rms),
        dtau_rms: mean(|r| r.dtau_rms),
        f_zc: mean(|r| r.f_zc),
        success: reports.iter().all(|r| r.success),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::Preset;
    use crate::pipeline::StepFlags;
    use proptest::prelude::*;

    fn flat_row(k: usize, dt: f64) -> TraceRow {
        TraceRow {
            time: k as f64 * dt,
            q: 0.0,
            qd: 1.0,
            iq: 2.0,
            ud_req: 0.0,
            uq_req: 0.0,
            ud: 0.0,
            uq: 0.0,
            saturated: false,
            acmd_lo: -10.0,
            acmd_hi: 10.0,
            iset_lo: -5.0,
            iset_hi: 5.0,
            qdd_des: 0.0,
            qdd_cmd: 0.0,
            iq_cmd: 2.0,
            flags: StepFlags::empty(),
        }
    }

    fn trace_of(rows: Vec<TraceRow>) -> Trace {
        Trace {
            rows,
            extras: vec![],
        }
    }

    fn params() -> (MotorParams, JointParams) {
        (Preset::Motor8115.motor(), Preset::Motor8115.joint())
    }

    #[test]
    fn fraction_examples() {
        let mut rows: Vec<TraceRow> = (0..10).map(|k| flat_row(k, 1e-3)).collect();
        assert_eq!(realizable_fraction(&rows).unwrap(), 1.0);
        for r in rows.iter_mut().take(3) {
            r.saturated = true;
        }
        assert!((realizable_fraction(&rows).unwrap() - 0.7).abs() < 1e-15);
        for r in rows.iter_mut() {
            r.saturated = true;
        }
        assert_eq!(realizable_fraction(&rows).unwrap(), 0.0);
        assert!(matches!(realizable_fraction(&[]), Err(Error::EmptyTrace)));
    }

    #[test]
    fn perfect_tracking_is_clean() {
        let (m, j) = params();
        let tr = trace_of((0..20).map(|k| flat_row(k, 1e-3)).collect());
        let rep = near_boundary_metrics(&tr, 0..20, &m, &j, 1e-3).unwrap();
        assert_eq!(rep.dqd_max, 0.0);
        assert_eq!(rep.dqd_rms, 0.0);
        assert_eq!(rep.dtau_rms, 0.0);
        assert_eq!(rep.f_zc, 0.0);
        assert!(rep.success);
        assert_eq!(rep.realizable_fraction, 1.0);
    }

    #[test]
    fn alternating_error_crossing_rate() {
        let signal: Vec<f64> = (0..10)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let f = zero_crossing_rate(&signal, 1e-3, 0.0);
        assert!((f - 900.0).abs() < 1e-9);
    }

    #[test]
    fn alternating_torque_error_in_trace() {
        // Commands alternate ±0.5 A around the realized current.
        let (m, j) = params();
        let rows: Vec<TraceRow> = (0..11)
            .map(|k| {
                let mut r = flat_row(k, 1e-3);
                r.iq_cmd = 2.0 + if k % 2 == 0 { 0.5 } else { -0.5 };
                r
            })
            .collect();
        let tr = trace_of(rows);
        let rep = near_boundary_metrics(&tr, 0..11, &m, &j, 1e-3).unwrap();
        // 10 error samples, 9 sign changes over 10 ms.
        assert!((rep.f_zc - 900.0).abs() < 1e-9);
        assert!((rep.dtau_rms - 0.5 * m.k_t).abs() < 1e-12);
    }

    #[test]
    fn one_saturated_step_fails() {
        let (m, j) = params();
        let mut rows: Vec<TraceRow> = (0..20).map(|k| flat_row(k, 1e-3)).collect();
        rows[7].saturated = true;
        let rep = near_boundary_metrics(&trace_of(rows), 0..20, &m, &j, 1e-3).unwrap();
        assert!(!rep.success);
    }

    #[test]
    fn command_outside_current_set_fails() {
        let (m, j) = params();
        let mut rows: Vec<TraceRow> = (0..20).map(|k| flat_row(k, 1e-3)).collect();
        rows[3].iq_cmd = 5.5;
        let rep = near_boundary_metrics(&trace_of(rows.clone()), 0..20, &m, &j, 1e-3).unwrap();
        assert!(!rep.success);
        rows[3].iq_cmd = 2.0;
        rows[4].iset_lo = f64::NAN;
        rows[4].iset_hi = f64::NAN;
        let rep = near_boundary_metrics(&trace_of(rows), 0..20, &m, &j, 1e-3).unwrap();
        assert!(!rep.success);
    }

    #[test]
    fn velocity_excess_and_rms() {
        let (m, j) = params();
        let mut rows: Vec<TraceRow> = (0..5).map(|k| flat_row(k, 1e-3)).collect();
        rows[2].qd = j.qd_ub + 0.3;
        let tr = trace_of(rows);
        let rep = near_boundary_metrics(&tr, 0..5, &m, &j, 1e-3).unwrap();
        assert!((rep.dqd_max - 0.3).abs() < 1e-12);
        // Errors: 0, −(qd_ub + 0.3 − 1), +(qd_ub + 0.3 − 1), 0.
        let e = j.qd_ub + 0.3 - 1.0;
        assert!((rep.dqd_rms - (2.0 * e * e / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn short_window_rejected() {
        let (m, j) = params();
        let tr = trace_of((0..5).map(|k| flat_row(k, 1e-3)).collect());
        assert!(matches!(
            near_boundary_metrics(&tr, 2..3, &m, &j, 1e-3),
            Err(Error::WindowTooShort { len: 1 })
        ));
        assert!(matches!(
            near_boundary_metrics(&Trace::default(), 0..3, &m, &j, 1e-3),
            Err(Error::EmptyTrace)
        ));
    }

    #[test]
    fn approach_window_opens_near_velocity_bound() {
        let (m, j) = params();
        // Speeds up from rest, passes 0.8·qd_ub at k = 9, nears q_ub at k = 12.
        let rows: Vec<TraceRow> = (0..16)
            .map(|k| {
                let mut r = flat_row(k, 1e-3);
                r.qd = if k < 14 { 2.5 * k as f64 } else { -1.0 };
                r.q = if k < 12 { 0.0 } else { 1.4 };
                r
            })
            .collect();
        let tr = trace_of(rows);
        let w = boundary_windows(&tr, &j).unwrap();
        assert_eq!(w.approach_start, 9);
        assert_eq!(w.braking, 12..15);
        assert_eq!(w.span(), 9..15);
        let (_, rep) = boundary_metrics(&tr, &m, &j).unwrap();
        assert!(rep.success);

        // Saturation during the approach counts in the fraction only.
        let mut rows = tr.rows.clone();
        rows[10].saturated = true;
        let (_, rep) = boundary_metrics(&trace_of(rows.clone()), &m, &j).unwrap();
        assert!(rep.success);
        assert!((rep.realizable_fraction - 5.0 / 6.0).abs() < 1e-12);
        rows[13].saturated = true;
        let (_, rep) = boundary_metrics(&trace_of(rows), &m, &j).unwrap();
        assert!(!rep.success);

        let far = trace_of((0..4).map(|k| flat_row(k, 1e-3)).collect());
        assert!(matches!(
            boundary_metrics(&far, &m, &j),
            Err(Error::NoBoundaryApproach)
        ));
    }

    #[test]
    fn boundary_window_placement() {
        let j = Preset::Motor8115.joint();
        // Range 3 rad: the window opens inside 0.3 rad of a bound.
        let rows: Vec<TraceRow> = (0..10)
            .map(|k| {
                let mut r = flat_row(k, 1e-3);
                r.q = 1.02 + 0.05 * k as f64;
                r.qd = 5.0 - k as f64;
                r
            })
            .collect();
        let w = boundary_window(&trace_of(rows), &j).unwrap();
        // Gap 0.28 at k = 4; qd reaches 0 at k = 5.
        assert_eq!(w, 4..6);
        let far = trace_of((0..4).map(|k| flat_row(k, 1e-3)).collect());
        assert!(boundary_window(&far, &j).is_none());
    }

    #[test]
    fn command_window_skips() {
        let tr = trace_of((0..100).map(|k| flat_row(k, 1e-3)).collect());
        let c = CommandProfile {
            torque: 1.0,
            t_on: 0.010,
            t_off: Some(0.0805),
        };
        assert_eq!(command_window(&tr, &c, 0), 10..81);
        assert_eq!(command_window(&tr, &c, 50), 60..81);
        assert_eq!(command_window(&tr, &c, 500), 81..81);
    }

    #[test]
    fn aggregate_means() {
        let mk = |x: f64, s: bool| MetricsReport {
            realizable_fraction: x,
            dqd_max: 2.0 * x,
            dqd_rms: 3.0 * x,
            dtau_rms: 4.0 * x,
            f_zc: 10.0 * x,
            success: s,
        };
        let agg = aggregate(&[mk(0.2, true), mk(0.5, true), mk(0.8, false)]).unwrap();
        assert!((agg.realizable_fraction - 0.5).abs() < 1e-15);
        assert!((agg.dtau_rms - 2.0).abs() < 1e-15);
        assert!((agg.f_zc - 5.0).abs() < 1e-15);
        assert!(!agg.success);
        assert!(aggregate(&[]).is_none());
    }

    proptest! {
        #[test]
        fn extra_saturation_never_raises_fraction(flags in proptest::collection::vec(any::<bool>(), 1..60),
                                                  extra in 0usize..60) {
            let mut rows: Vec<TraceRow> = flags.iter().enumerate().map(|(k, &s)| {
                let mut r = flat_row(k, 1e-3);
                r.saturated = s;
                r
            }).collect();
            let before = realizable_fraction(&rows).unwrap();
            let n = rows.len();
            rows[extra % n].saturated = true;
            prop_assert!(realizable_fraction(&rows).unwrap() <= before);
        }

        #[test]
        fn metrics_translation_invariant(shift in 0usize..40, amp in 0.1..5.0f64) {
            // Stationary alternating error: metrics over any equal-length
            // window agree.
            let (m, j) = params();
            let rows: Vec<TraceRow> = (0..100).map(|k| {
                let mut r = flat_row(k, 1e-3);
                r.iq_cmd = 2.0 + if k % 2 == 0 { amp } else { -amp };
                r
            }).collect();
            let tr = trace_of(rows);
            let a = near_boundary_metrics(&tr, 0..41, &m, &j, 1e-3).unwrap();
            let b = near_boundary_metrics(&tr, shift..shift + 41, &m, &j, 1e-3).unwrap();
            prop_assert!((a.dtau_rms - b.dtau_rms).abs() < 1e-12);
            prop_assert!((a.f_zc - b.f_zc).abs() < 1e-9);
            prop_assert!((a.dqd_rms - b.dqd_rms).abs() < 1e-12);
        }
    }
}
