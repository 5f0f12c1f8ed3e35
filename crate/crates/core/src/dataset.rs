//! Trajectory storage, resampling, train/test split and segmentation.
//!
//! File layout: one JSON header line ([`DatasetMetadata`]), then CSV with the
//! header `t,q,v,q_des` and one row per sample. Numbers are written in
//! scientific notation with 17 significant digits, which round-trips `f64`
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::dynamics::{Action, JointState, MotorParams, PlantConfig};
use crate::error::{Error, Result};
use crate::excitation::GeneratorMetadata;
use crate::scalar::Scalar;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "motor-trajectory";
const CSV_HEADER: [&str; 4] = ["t", "q", "v", "q_des"];

/// Relative tolerance on grid spacing when checking for a uniform time grid.
const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format: String,
    pub schema_version: u32,
    /// Uniform grid spacing (s), when the data sits on one.
    pub delta: Option<f64>,
    pub plant_config_hash: Option<String>,
    pub generator: Option<GeneratorMetadata>,
    /// Generator ground truth. Kept for scoring only; the fitter never reads it.
    pub hidden_ground_truth: Option<MotorParams<f64>>,
}

impl Default for DatasetMetadata {
    fn default() -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            schema_version: DATASET_SCHEMA_VERSION,
            delta: None,
            plant_config_hash: None,
            generator: None,
            hidden_ground_truth: None,
        }
    }
}

/// Hash identifying a plant configuration inside dataset and report headers.
pub fn plant_config_hash(cfg: &PlantConfig<f64>) -> String {
    let bytes = serde_json::to_vec(cfg).expect("plant config serialises");
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub timestamps: Vec<f64>,
    pub states: Vec<JointState<f64>>,
    pub actions: Vec<Action<f64>>,
    pub metadata: DatasetMetadata,
}

impl TrajectoryDataset {
    pub fn new(
        timestamps: Vec<f64>,
        states: Vec<JointState<f64>>,
        actions: Vec<Action<f64>>,
        metadata: DatasetMetadata,
    ) -> Result<Self> {
        let data = Self {
            timestamps,
            states,
            actions,
            metadata,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if self.states.len() != n || self.actions.len() != n {
            return Err(Error::InvalidDataset(format!(
                "column lengths differ: {} timestamps, {} states, {} actions",
                n,
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDataset(format!(
                "timestamps not strictly increasing at row {}",
                i + 1
            )));
        }
        let finite = self.timestamps.iter().all(|t| t.is_finite())
            && self.states.iter().all(|s| s.is_finite())
            && self.actions.iter().all(|a| a.q_des.is_finite());
        if !finite {
            return Err(Error::InvalidDataset("non-finite value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Grid spacing if the timestamps are uniform.
    pub fn uniform_delta(&self) -> Option<f64> {
        if self.len() < 2 {
            return self.metadata.delta;
        }
        let delta = self
            .metadata
            .delta
            .unwrap_or(self.timestamps[1] - self.timestamps[0]);
        let uniform = self
            .timestamps
            .windows(2)
            .all(|w| ((w[1] - w[0]) - delta).abs() <= GRID_TOLERANCE * delta);
        uniform.then_some(delta)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            states: self.states[range.clone()].to_vec(),
            actions: self.actions[range].to_vec(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut writer = BufWriter::new(writer);
        let header = serde_json::to_string(&self.metadata)?;
        writer
            .write_all(header.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|e| Error::io("<dataset>", e))?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(CSV_HEADER)?;
        for i in 0..self.len() {
            let s = self.states[i];
            csv.write_record([
                format_f64(self.timestamps[i]),
                format_f64(s.q),
                format_f64(s.v),
                format_f64(self.actions[i].q_des),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<dataset>", e))?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io("<dataset>", e))?;
        let metadata: DatasetMetadata = serde_json::from_str(line.trim_end())?;
        if metadata.format != DATASET_FORMAT {
            return Err(Error::InvalidDataset(format!(
                "unexpected format tag {:?}",
                metadata.format
            )));
        }
        if metadata.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::InvalidDataset(format!(
                "unsupported schema version {}",
                metadata.schema_version
            )));
        }
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.iter().ne(CSV_HEADER) {
            return Err(Error::InvalidDataset(format!("unexpected CSV header {headers:?}")));
        }
        let mut timestamps = Vec::new();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for record in csv.records() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| {
                        Error::InvalidDataset(format!(
                            "bad value in column {} of row {:?}",
                            CSV_HEADER[i],
                            record.position().map(|p| p.line())
                        ))
                    })
            };
            timestamps.push(field(0)?);
            states.push(JointState::new(field(1)?, field(2)?));
            actions.push(Action::new(field(3)?));
        }
        Self::new(timestamps, states, actions, metadata)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Linear interpolation of every channel onto `t₀, t₀ + δ, …` inside the raw span.
pub fn resample(raw: &TrajectoryDataset, delta: f64) -> Result<TrajectoryDataset> {
    raw.validate()?;
    if raw.len() < 2 {
        return Err(Error::InvalidDataset("resampling needs at least two samples".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidConfig(format!("resample step {delta} must be > 0")));
    }
    let t0 = raw.timestamps[0];
    let t_end = *raw.timestamps.last().unwrap();
    let span = t_end - t0;
    if delta > span {
        return Err(Error::InvalidConfig(format!(
            "resample step {delta} exceeds the raw span {span}"
        )));
    }
    let count = (span / delta + 1e-9).floor() as usize + 1;

    let mut out_t = Vec::with_capacity(count);
    let mut out_s = Vec::with_capacity(count);
    let mut out_a = Vec::with_capacity(count);
    let mut j = 0;
    let last = raw.len() - 1;
    for k in 0..count {
        let t = (t0 + k as f64 * delta).min(t_end);
        while j + 1 < last && raw.timestamps[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (raw.timestamps[j], raw.timestamps[j + 1]);
        let (s, a) = if t == tb {
            (raw.states[j + 1], raw.actions[j + 1])
        } else {
            let w = (t - ta) / (tb - ta);
            let lerp = |a: f64, b: f64| a + (b - a) * w;
            let (sa, sb) = (raw.states[j], raw.states[j + 1]);
            (
                JointState::new(lerp(sa.q, sb.q), lerp(sa.v, sb.v)),
                Action::new(lerp(raw.actions[j].q_des, raw.actions[j + 1].q_des)),
            )
        };
        out_t.push(t);
        out_s.push(s);
        out_a.push(a);
    }
    let metadata = DatasetMetadata {
        delta: Some(delta),
        ..raw.metadata.clone()
    };
    TrajectoryDataset::new(out_t, out_s, out_a, metadata)
}

/// One window of `N` transitions; the simulated rollout restarts from `s0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub s0: JointState<T>,
    pub actions: Vec<Action<T>>,
    pub targets: Vec<JointState<T>>,
    /// Index of `s0` in the source dataset.
    pub start: usize,
}

impl<T: Scalar> Segment<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Segment<U> {
        Segment {
            s0: self.s0.cast(),
            actions: self.actions.iter().map(|a| a.cast()).collect(),
            targets: self.targets.iter().map(|s| s.cast()).collect(),
            start: self.start,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch<T> {
    pub segments: Vec<Segment<T>>,
    /// Steps per segment.
    pub n: usize,
}

impl<T: Scalar> SegmentBatch<T> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> SegmentBatch<U> {
        SegmentBatch {
            segments: self.segments.iter().map(|s| s.cast()).collect(),
            n: self.n,
        }
    }
}

/// Consecutive non-overlapping windows of `n` steps; a trailing remainder is dropped.
pub fn segment(data: &TrajectoryDataset, n: usize) -> Result<SegmentBatch<f64>> {
    data.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("segment length must be >= 1".into()));
    }
    if data.len() < n + 1 {
        return Err(Error::InvalidDataset(format!(
            "segment length {n} needs at least {} samples, dataset has {}",
            n + 1,
            data.len()
        )));
    }
    if data.uniform_delta().is_none() {
        return Err(Error::InvalidDataset(
            "segmentation requires a uniform time grid; resample first".into(),
        ));
    }
    let count = (data.len() - 1) / n;
    let segments = (0..count)
        .map(|j| {
            let start = j * n;
            Segment {
                s0: data.states[start],
                actions: data.actions[start..start + n].to_vec(),
                targets: data.states[start + 1..=start + n].to_vec(),
                start,
            }
        })
        .collect();
    Ok(SegmentBatch { segments, n })
}

/// Contiguous split: the earlier `train_fraction` trains, the rest tests.
pub fn split(
    data: &TrajectoryDataset,
    train_fraction: f64,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n_train = (train_fraction * data.len() as f64).round() as usize;
    if n_train == 0 || n_train >= data.len() {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} leaves an empty side for {} samples",
            data.len()
        )));
    }
    Ok((data.slice(0..n_train), data.slice(n_train..data.len())))
}
