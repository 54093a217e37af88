//! Per-episode metric rows and trajectory lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::{TrainRecord, Trajectory};

pub const METRICS_HEADER: &str = "episode,reward,violations,kl_nats,spike_entropy_nats,coverage,hybrid_loss,wall_ms";

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub reward: f64,
    pub violations: usize,
    pub kl_nats: f64,
    pub spike_entropy_nats: f64,
    pub coverage: f64,
    pub hybrid_loss: f64,
    pub wall_ms: f64,
}

impl MetricsRow {
    pub fn from_record(r: &TrainRecord) -> Self {
        Self {
            episode: r.episode,
            reward: r.mean_reward,
            violations: r.violations,
            kl_nats: r.kl_nats,
            spike_entropy_nats: r.spike_entropy,
            coverage: r.coverage,
            hybrid_loss: r.hybrid_loss,
            wall_ms: r.wall_ms,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let v = [self.reward, self.kl_nats, self.spike_entropy_nats, self.coverage, self.hybrid_loss, self.wall_ms];
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Training(format!("non-finite metric in episode {}: {self:?}", self.episode)))
        }
    }
}

/// Streams rows to a CSV file, flushing after each so partial runs keep
/// their history.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: csv::Writer::from_path(path)? })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        row.check_finite()?;
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    rows.iter().try_for_each(|r| w.write(r))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Input(format!("{}: unexpected header {:?}", path.display(), header.join(","))));
    }
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// One `trajectories.jsonl` line, without the newline.
pub fn trajectory_json(t: &Trajectory) -> Result<String> {
    Ok(serde_json::to_string(t)?)
}

pub struct TrajectoryWriter {
    inner: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: BufWriter::new(File::create(path)?) })
    }

    pub fn write(&mut self, t: &Trajectory) -> Result<()> {
        writeln!(self.inner, "{}", trajectory_json(t)?)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow { episode: 1, reward: 0.1 + 0.2, violations: 3, kl_nats: 1e-17, spike_entropy_nats: 2.1972245773362196, coverage: 1.0 / 3.0, hybrid_loss: -0.4869188, wall_ms: 0.0 },
            MetricsRow { episode: 2, reward: -5e300, violations: 0, kl_nats: 0.0, spike_entropy_nats: 0.0, coverage: 0.0, hybrid_loss: f64::MIN_POSITIVE, wall_ms: 12.5 },
        ];
        write_metrics(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(read_metrics(&p).unwrap(), rows);
    }

    #[test]
    fn non_finite_rows_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(&dir.path().join("m.csv")).unwrap();
        let row = MetricsRow { episode: 1, reward: f64::NAN, violations: 0, kl_nats: 0.0, spike_entropy_nats: 0.0, coverage: 0.0, hybrid_loss: 0.0, wall_ms: 0.0 };
        assert!(w.write(&row).is_err());
    }

    #[test]
    fn hovering_agent_has_constant_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let t = Trajectory { episode: 4, agent: 1, path: vec![[2, 3, 1]; 5], plans: vec![0; 4], violations: vec![] };
        let mut w = TrajectoryWriter::create(&p).unwrap();
        w.write(&t).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(r#"{"episode":4,"agent":1,"path":[[2,3,1],[2,3,1]"#));
        let back = read_trajectories(&p).unwrap();
        assert_eq!(back, vec![t]);
        assert!(back[0].path.windows(2).all(|w| w[0] == w[1]));
    }
}
