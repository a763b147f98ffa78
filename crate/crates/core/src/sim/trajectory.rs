//! Per-step trajectory dump as CSV.

use std::io::Write;

use crate::kinematics::GrappleFrame;
use crate::sim::SimState;

pub const HEADER: [&str; 23] = [
    "time", "q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8", "dq1", "dq2", "dq3", "dq4", "dq7",
    "dq8", "pc_x", "pc_y", "pc_z", "log_x", "log_y", "log_z", "log_yaw", "attached",
];

/// Streams one row per simulator step.
pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(HEADER)?;
        Ok(Self { inner })
    }

    pub fn record(&mut self, state: &SimState, grapple: &GrappleFrame) -> csv::Result<()> {
        let mut row: Vec<String> = Vec::with_capacity(HEADER.len());
        row.push(state.sim_time.to_string());
        row.extend(state.joints.0.iter().map(f64::to_string));
        row.extend(state.actuated_velocities.iter().map(f64::to_string));
        row.extend(grapple.position.iter().map(f64::to_string));
        row.extend(state.log.position.iter().map(f64::to_string));
        row.push(state.log.yaw.to_string());
        row.push(u8::from(state.attached()).to_string());
        self.inner.write_record(&row)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::KinematicsConfig;
    use crate::sim::{ScenarioConfig, SimConfig, Simulator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_row_per_step() {
        let sim = Simulator::new(KinematicsConfig::default(), SimConfig::default()).unwrap();
        let mut st = sim
            .spawn(&ScenarioConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let mut w = TrajectoryWriter::new(Vec::new()).unwrap();
        for _ in 0..3 {
            st = sim.step(&st, &[0.1; 6]).unwrap();
            w.record(&st, &sim.grapple(&st)).unwrap();
        }
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("time,q1"));
        assert_eq!(lines[1].split(',').count(), HEADER.len());
    }
}
