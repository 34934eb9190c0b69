//! Per-step episode records and their CSV form.
//!
//! Row `k` holds the true plant state at the start of control period `k`,
//! the command computed from it and the voltages (period means) that
//! command produced.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::VoltageResidual;
use crate::interval::Interval;
use crate::pipeline::StepFlags;

/// CSV column order.
pub const COLUMNS: [&str; 17] = [
    "time",
    "q",
    "qd",
    "iq",
    "ud_req",
    "uq_req",
    "ud",
    "uq",
    "saturated",
    "acmd_lo",
    "acmd_hi",
    "iset_lo",
    "iset_hi",
    "qdd_des",
    "qdd_cmd",
    "iq_cmd",
    "flags",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub q: f64,
    pub qd: f64,
    pub iq: f64,
    pub ud_req: f64,
    pub uq_req: f64,
    pub ud: f64,
    pub uq: f64,
    #[serde(with = "bool_as_int")]
    pub saturated: bool,
    pub acmd_lo: f64,
    pub acmd_hi: f64,
    /// Realizable current set; NaN when it was empty.
    pub iset_lo: f64,
    pub iset_hi: f64,
    pub qdd_des: f64,
    pub qdd_cmd: f64,
    pub iq_cmd: f64,
    #[serde(with = "flags_as_text")]
    pub flags: StepFlags,
}

impl TraceRow {
    pub fn command_set(&self) -> Interval {
        Interval::new(self.acmd_lo, self.acmd_hi)
    }

    pub fn current_set(&self) -> Interval {
        Interval::new(self.iset_lo, self.iset_hi)
    }
}

/// Diagnostics kept in memory but not written to CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RowExtras {
    /// Realizable acceleration set `A_v`.
    pub accel_set: Interval,
    /// Discrete velocity envelope (baseline controllers only).
    pub velocity_envelope: Option<Interval>,
    /// Measured position handed to the controller.
    pub q_measured: f64,
    /// Residual estimate the controller used.
    pub residual: VoltageResidual,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Empty for traces read back from CSV.
    pub extras: Vec<RowExtras>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Control period, from the first two rows.
    pub fn dt(&self) -> Option<f64> {
        (self.rows.len() >= 2).then(|| self.rows[1].time - self.rows[0].time)
    }

    /// Row-wise bit equality on the CSV columns, with any two NaNs equal.
    pub fn bit_identical(&self, other: &Trace) -> bool {
        let floats = |r: &TraceRow| {
            [
                r.time, r.q, r.qd, r.iq, r.ud_req, r.uq_req, r.ud, r.uq, r.acmd_lo, r.acmd_hi,
                r.iset_lo, r.iset_hi, r.qdd_des, r.qdd_cmd, r.iq_cmd,
            ]
        };
        let same = |x: f64, y: f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
        self.len() == other.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                floats(a)
                    .into_iter()
                    .zip(floats(b))
                    .all(|(x, y)| same(x, y))
                    && a.saturated == b.saturated
                    && a.flags == b.flags
            })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(COLUMNS)?;
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(COLUMNS.iter().copied()) {
            return Err(Error::param(
                "trace",
                format!("unexpected CSV header, expected {}", COLUMNS.join(",")),
            ));
        }
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Trace {
            rows,
            extras: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!(
                "saturated must be 0 or 1, got {other}"
            ))),
        }
    }
}

mod flags_as_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::pipeline::StepFlags;

    pub fn serialize<S: Serializer>(v: &StepFlags, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<StepFlags, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> TraceRow {
        TraceRow {
            time: k as f64 * 1e-3,
            q: 0.1 * k as f64,
            qd: -1.0 / 3.0,
            iq: 2.5,
            ud_req: -0.25,
            uq_req: 12.0,
            ud: -0.25,
            uq: 11.999999999999998,
            saturated: k % 2 == 1,
            acmd_lo: -1500.0,
            acmd_hi: 1e300,
            iset_lo: if k == 2 { f64::NAN } else { -60.0 },
            iset_hi: if k == 2 { f64::NAN } else { 17.25 },
            qdd_des: 600.0,
            qdd_cmd: 599.5,
            iq_cmd: 25.0,
            flags: if k == 1 {
                StepFlags::CLIPPED | StepFlags::PROJECTED
            } else {
                StepFlags::empty()
            },
        }
    }

    #[test]
    fn header_is_exact() {
        let t = Trace {
            rows: vec![row(0)],
            extras: vec![],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "time,q,qd,iq,ud_req,uq_req,ud,uq,saturated,acmd_lo,acmd_hi,iset_lo,iset_hi,qdd_des,qdd_cmd,iq_cmd,flags"
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let t = Trace {
            rows: (0..4).map(row).collect(),
            extras: vec![],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in t.rows.iter().zip(&back.rows) {
            for (x, y) in [
                (a.time, b.time),
                (a.qd, b.qd),
                (a.uq, b.uq),
                (a.acmd_hi, b.acmd_hi),
                (a.iset_lo, b.iset_lo),
            ] {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
            assert_eq!(a.flags, b.flags);
            assert_eq!(a.saturated, b.saturated);
        }
        assert!(back.rows[2].current_set().is_empty());
    }

    #[test]
    fn bit_identity() {
        let t = Trace {
            rows: (0..4).map(row).collect(),
            extras: vec![],
        };
        assert_ne!(t, t.clone());
        assert!(t.bit_identical(&t.clone()));
        let mut u = t.clone();
        u.rows[3].q = u.rows[3].q.next_up();
        assert!(!t.bit_identical(&u));
        let mut z = t.clone();
        z.rows[0].q = -0.0;
        assert!(!t.bit_identical(&z));
        assert!(!t.bit_identical(&Trace::default()));
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "time,q\n0,0\n";
        assert!(Trace::read_csv(text.as_bytes()).is_err());
    }
}
