//! Operator models and command sources.
//!
//! A command source produces the operator's desired velocity x_vd each step.
//! Only the spring-damper model reacts to the rendered force; the others
//! are open-loop.

use std::path::Path;
use std::sync::mpsc::{Receiver, TryRecvError};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, Vector};

/// Stylus gain: 1 cm of displacement commands 2 m/s.
pub const STYLUS_GAIN: f64 = 2.0;
/// Half-width of the virtual stylus workspace in cm.
pub const STYLUS_LIMIT_CM: f64 = 5.0;

/// Operator arm as a spring-damper pulled toward a set velocity:
/// `ẍ_vd + p ẋ_vd + q (x_vd − x_v0) = F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringDamperOperator {
    pub p: f64,
    pub q: f64,
    pub x_v0: Vector,
    pub x_vd: Vector,
    pub x_vd_dot: Vector,
}

impl SpringDamperOperator {
    /// Starts at rest on the set velocity.
    pub fn new(p: f64, q: f64, x_v0: Vector) -> Result<Self> {
        let op = Self {
            p,
            q,
            x_v0,
            x_vd: x_v0,
            x_vd_dot: Vector::zeros(x_v0.dim()),
        };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 0.0 && self.q >= 0.0 && self.p.is_finite() && self.q.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "operator gains must be nonnegative, got p={} q={}",
                self.p, self.q
            )));
        }
        check_dim(self.x_v0.dim())?;
        self.x_vd.ensure_dim(self.x_v0.dim())?;
        self.x_vd_dot.ensure_dim(self.x_v0.dim())?;
        self.x_v0.ensure_finite("operator set velocity")?;
        self.x_vd.ensure_finite("operator state")?;
        self.x_vd_dot.ensure_finite("operator state")
    }
}

/// Semi-implicit Euler step of the operator driven by `force`.
pub fn operator_step(
    op: &SpringDamperOperator,
    force: &Vector,
    dt: f64,
) -> Result<(SpringDamperOperator, Vector)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    force.ensure_dim(op.x_vd.dim())?;
    force.ensure_finite("force")?;
    let acc = *force - op.x_vd_dot * op.p - (op.x_vd - op.x_v0) * op.q;
    let x_vd_dot = op.x_vd_dot + acc * dt;
    let x_vd = op.x_vd + x_vd_dot * dt;
    let next = SpringDamperOperator {
        x_vd,
        x_vd_dot,
        ..*op
    };
    Ok((next, x_vd))
}

/// Preset piecewise-linear command along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trapezoid {
    pub rise: f64,
    pub hold: f64,
    pub fall: f64,
    pub peak: f64,
    #[serde(default)]
    pub axis: usize,
}

impl Trapezoid {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let times = [self.rise, self.hold, self.fall];
        if !times.iter().all(|x| *x >= 0.0 && x.is_finite()) || !self.peak.is_finite() {
            return Err(Error::InvalidParameter(format!("trapezoid {self:?}")));
        }
        Vector::axis(dim, self.axis).map(|_| ())
    }

    /// Scalar profile value at `t`.
    pub fn value(&self, t: f64) -> f64 {
        let t1 = self.rise;
        let t2 = t1 + self.hold;
        let t3 = t2 + self.fall;
        if t < 0.0 {
            0.0
        } else if t < t1 {
            self.peak * t / self.rise
        } else if t < t2 {
            self.peak
        } else if t < t3 {
            self.peak * (1.0 - (t - t2) / self.fall)
        } else {
            0.0
        }
    }
}

/// Recorded commands with zero-order hold between samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayTrack {
    samples: Vec<(f64, Vector)>,
}

impl ReplayTrack {
    pub fn new(samples: Vec<(f64, Vector)>) -> Result<Self> {
        let Some((_, first)) = samples.first() else {
            return Err(Error::Scenario("replay track is empty".into()));
        };
        let dim = first.dim();
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Scenario(format!(
                    "replay timestamps must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for (t, v) in &samples {
            v.ensure_dim(dim)?;
            v.ensure_finite("replay sample")?;
            if !t.is_finite() {
                return Err(Error::NonFinite("replay timestamp"));
            }
        }
        Ok(Self { samples })
    }

    /// Reads a CSV with header `t,vx[,vy]`.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let dim = match header.as_slice() {
            [t, vx] if t == "t" && vx == "vx" => 1,
            [t, vx, vy] if t == "t" && vx == "vx" && vy == "vy" => 2,
            _ => {
                return Err(Error::Scenario(format!(
                    "replay header must be t,vx[,vy], got {}",
                    header.join(",")
                )))
            }
        };
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let vals: Vec<f64> = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Scenario(format!("bad number {s:?} in replay")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != dim + 1 {
                return Err(Error::ShapeMismatch(format!(
                    "replay row has {} fields, expected {}",
                    vals.len(),
                    dim + 1
                )));
            }
            samples.push((vals[0], Vector::from_slice(&vals[1..])?));
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.dim() == 1 {
            w.write_record(["t", "vx"])?;
        } else {
            w.write_record(["t", "vx", "vy"])?;
        }
        for (t, v) in &self.samples {
            let mut rec = vec![t.to_string()];
            rec.extend(v.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.samples[0].1.dim()
    }

    pub fn samples(&self) -> &[(f64, Vector)] {
        &self.samples
    }

    /// Sample in effect at `t`, and whether `t` is past the last sample.
    pub fn at(&self, t: f64) -> (Vector, bool) {
        let idx = self.samples.partition_point(|(ts, _)| *ts <= t);
        let last = self.samples.len() - 1;
        let end = t > self.samples[last].0;
        if idx == 0 {
            (self.samples[0].1, end)
        } else {
            (self.samples[idx - 1].1, end)
        }
    }
}

/// Stylus samples pushed by the UI thread, in cm.
pub struct LiveInput {
    rx: Receiver<Vector>,
    latest_cm: Vector,
    disconnected: bool,
}

impl LiveInput {
    pub fn new(rx: Receiver<Vector>, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            rx,
            latest_cm: Vector::zeros(dim),
            disconnected: false,
        })
    }

    /// Drains pending samples and returns the latest displacement.
    fn poll(&mut self) -> Result<Vector> {
        loop {
            match self.rx.try_recv() {
                Ok(v) => {
                    v.ensure_dim(self.latest_cm.dim())?;
                    v.ensure_finite("stylus sample")?;
                    self.latest_cm = v;
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.disconnected = true;
                    break;
                }
            }
        }
        Ok(self.latest_cm)
    }
}

/// Maps a stylus displacement in cm to a commanded velocity in m/s, clamped
/// to the virtual workspace.
pub fn stylus_to_velocity(disp_cm: &Vector) -> Vector {
    let mut v = *disp_cm;
    for i in 0..v.dim() {
        v[i] = v[i].clamp(-STYLUS_LIMIT_CM, STYLUS_LIMIT_CM) * STYLUS_GAIN;
    }
    v
}

pub enum CommandSource {
    Model(SpringDamperOperator),
    Trapezoid { profile: Trapezoid, dim: usize },
    Replay(ReplayTrack),
    Live(LiveInput),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Command {
    pub x_vd: Vector,
    /// Replay ran past its last sample, or the live channel closed.
    pub end_of_data: bool,
}

impl CommandSource {
    pub fn dim(&self) -> usize {
        match self {
            CommandSource::Model(op) => op.x_vd.dim(),
            CommandSource::Trapezoid { dim, .. } => *dim,
            CommandSource::Replay(track) => track.dim(),
            CommandSource::Live(live) => live.latest_cm.dim(),
        }
    }

    /// Command for the step starting at `t`. `force` is the force rendered
    /// on the previous step; only the operator model uses it.
    pub fn command_at(&mut self, t: f64, force: &Vector, dt: f64) -> Result<Command> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")));
        }
        match self {
            CommandSource::Model(op) => {
                let (next, x_vd) = operator_step(op, force, dt)?;
                *op = next;
                Ok(Command {
                    x_vd,
                    end_of_data: false,
                })
            }
            CommandSource::Trapezoid { profile, dim } => {
                let x_vd = Vector::axis(*dim, profile.axis)? * profile.value(t);
                Ok(Command {
                    x_vd,
                    end_of_data: false,
                })
            }
            CommandSource::Replay(track) => {
                let (x_vd, end_of_data) = track.at(t);
                Ok(Command { x_vd, end_of_data })
            }
            CommandSource::Live(live) => {
                let disp = live.poll()?;
                Ok(Command {
                    x_vd: stylus_to_velocity(&disp),
                    end_of_data: live.disconnected,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::mpsc;

    #[test]
    fn equilibrium_is_fixed() {
        let op = SpringDamperOperator::new(1.0, 8.0, Vector::new1(0.4)).unwrap();
        let (next, x) = operator_step(&op, &Vector::new1(0.0), 0.02).unwrap();
        assert_eq!(x[0], 0.4);
        assert_eq!(next, op);
    }

    #[test]
    fn constant_force_settles_at_offset() {
        let mut op = SpringDamperOperator::new(1.0, 8.0, Vector::new1(0.4)).unwrap();
        let f = Vector::new1(-0.8);
        for _ in 0..5000 {
            op = operator_step(&op, &f, 0.02).unwrap().0;
        }
        assert!((op.x_vd[0] - (0.4 - 0.1)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_gains() {
        assert!(SpringDamperOperator::new(-1.0, 1.0, Vector::new1(0.0)).is_err());
        let op = SpringDamperOperator::new(1.0, 1.0, Vector::new1(0.0)).unwrap();
        assert!(operator_step(&op, &Vector::new1(0.0), 0.0).is_err());
    }

    #[test]
    fn trapezoid_midpoint_of_ramp() {
        let tr = Trapezoid {
            rise: 4.0,
            hold: 4.0,
            fall: 4.0,
            peak: 0.4,
            axis: 0,
        };
        let mut src = CommandSource::Trapezoid { profile: tr, dim: 1 };
        let c = src.command_at(2.0, &Vector::new1(0.0), 0.02).unwrap();
        assert!((c.x_vd[0] - 0.2).abs() < 1e-15);
        assert_eq!(tr.value(6.0), 0.4);
        assert!((tr.value(10.0) - 0.2).abs() < 1e-15);
        assert_eq!(tr.value(13.0), 0.0);
    }

    #[test]
    fn replay_zero_order_hold() {
        let track = ReplayTrack::from_csv_reader("t,vx,vy\n0,0,0\n0.5,1,0\n1.0,1,1\n".as_bytes()).unwrap();
        assert_eq!(track.at(0.5), (Vector::new2(1.0, 0.0), false));
        assert_eq!(track.at(0.75), (Vector::new2(1.0, 0.0), false));
        assert_eq!(track.at(1.0), (Vector::new2(1.0, 1.0), false));
        assert_eq!(track.at(3.0), (Vector::new2(1.0, 1.0), true));
        let mut buf = Vec::new();
        track.to_csv_writer(&mut buf).unwrap();
        assert_eq!(ReplayTrack::from_csv_reader(buf.as_slice()).unwrap(), track);
    }

    #[test]
    fn replay_rejects_bad_input() {
        assert!(ReplayTrack::from_csv_reader("t,vx\n0,0\n0,1\n".as_bytes()).is_err());
        assert!(ReplayTrack::from_csv_reader("time,vx\n0,0\n".as_bytes()).is_err());
        assert!(ReplayTrack::from_csv_reader("t,vx\n".as_bytes()).is_err());
        assert!(ReplayTrack::from_csv_reader("t,vx\n0,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn live_stylus_gain() {
        let (tx, rx) = mpsc::channel();
        let mut src = CommandSource::Live(LiveInput::new(rx, 2).unwrap());
        let z = Vector::new2(0.0, 0.0);
        assert_eq!(src.command_at(0.0, &z, 0.02).unwrap().x_vd, z);
        tx.send(Vector::new2(0.5, 0.0)).unwrap();
        tx.send(Vector::new2(1.0, 0.0)).unwrap();
        let c = src.command_at(0.02, &z, 0.02).unwrap();
        assert_eq!(c.x_vd, Vector::new2(2.0, 0.0));
        assert!(!c.end_of_data);
        drop(tx);
        let c = src.command_at(0.04, &z, 0.02).unwrap();
        assert_eq!(c.x_vd, Vector::new2(2.0, 0.0));
        assert!(c.end_of_data);
        assert_eq!(stylus_to_velocity(&Vector::new2(9.0, -9.0)), Vector::new2(10.0, -10.0));
    }

    proptest! {
        #[test]
        fn equilibrium_for_all_horizons(v0 in -2.0..2.0f64, p in 0.0..5.0f64, q in 0.0..20.0f64, n in 1usize..2000) {
            let mut op = SpringDamperOperator::new(p, q, Vector::new1(v0)).unwrap();
            let start = op;
            for _ in 0..n {
                op = operator_step(&op, &Vector::new1(0.0), 0.02).unwrap().0;
            }
            prop_assert_eq!(op, start);
        }

        #[test]
        fn trapezoid_is_continuous(
            rise in 0.1..5.0f64, hold in 0.0..5.0f64, fall in 0.1..5.0f64,
            peak in -1.0..1.0f64, t in 0.0..20.0f64, dt in 0.001..0.05f64,
        ) {
            let tr = Trapezoid { rise, hold, fall, peak, axis: 0 };
            let slope = (peak / rise).abs().max((peak / fall).abs());
            prop_assert!((tr.value(t + dt) - tr.value(t)).abs() <= slope * dt + 1e-12);
        }
    }
}
