use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{expect_magic, verify_crc, ByteReader, ByteWriter};
use crate::data::normalize::ActionStats;
use crate::error::{Error, FormatError, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"VQBD";
pub const DATASET_VERSION: u16 = 1;

/// One demonstration: `len` observation/action pairs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<f32>,
    pub actions: Vec<f32>,
}

/// Ordered (observation, action) pairs grouped into trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    obs_dim: usize,
    act_dim: usize,
    trajectories: Vec<Trajectory>,
}

/// Human-readable summary written beside every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub trajectories: usize,
    pub total_steps: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub action_min: Vec<f64>,
    pub action_max: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self, obs_dim: usize) -> usize {
        self.observations.len() / obs_dim.max(1)
    }
}

impl TrajectoryDataset {
    pub fn new(obs_dim: usize, act_dim: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        let ds = TrajectoryDataset { obs_dim, act_dim, trajectories };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(Error::Invalid("dataset dimensions must be positive".into()));
        }
        if self.trajectories.is_empty() {
            return Err(Error::Invalid("dataset has no trajectories".into()));
        }
        for (i, tr) in self.trajectories.iter().enumerate() {
            if tr.observations.is_empty() || tr.observations.len() % self.obs_dim != 0 {
                return Err(Error::Invalid(format!("trajectory {i}: observation buffer has bad length")));
            }
            let steps = tr.observations.len() / self.obs_dim;
            if tr.actions.len() != steps * self.act_dim {
                return Err(Error::Invalid(format!("trajectory {i}: {steps} observations but {} action values", tr.actions.len())));
            }
            if tr.observations.iter().chain(&tr.actions).any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("trajectory {i}: non-finite value")));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn traj_len(&self, i: usize) -> usize {
        self.trajectories[i].len(self.obs_dim)
    }

    pub fn total_steps(&self) -> usize {
        (0..self.trajectories.len()).map(|i| self.traj_len(i)).sum()
    }

    pub fn observation(&self, traj: usize, t: usize) -> &[f32] {
        &self.trajectories[traj].observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, traj: usize, t: usize) -> &[f32] {
        &self.trajectories[traj].actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn action_stats(&self) -> ActionStats {
        let mut min = vec![f64::INFINITY; self.act_dim];
        let mut max = vec![f64::NEG_INFINITY; self.act_dim];
        for tr in &self.trajectories {
            for a in tr.actions.chunks_exact(self.act_dim) {
                for (j, &v) in a.iter().enumerate() {
                    min[j] = min[j].min(v as f64);
                    max[j] = max[j].max(v as f64);
                }
            }
        }
        ActionStats { min, max }
    }

    pub fn manifest(&self) -> Manifest {
        let lens: Vec<usize> = (0..self.trajectories.len()).map(|i| self.traj_len(i)).collect();
        let stats = self.action_stats();
        Manifest {
            format: "VQBD".into(),
            version: DATASET_VERSION,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            trajectories: lens.len(),
            total_steps: lens.iter().sum(),
            min_length: lens.iter().copied().min().unwrap_or(0),
            max_length: lens.iter().copied().max().unwrap_or(0),
            action_min: stats.min,
            action_max: stats.max,
        }
    }

    /// Encodes the VQBD layout:
    ///
    /// ```text
    /// "VQBD" | version u16 | obs_dim u32 | act_dim u32 | count u32
    /// | count x length u32
    /// | per trajectory: observations f32[len*obs_dim], actions f32[len*act_dim]
    /// | crc32 u32 over all preceding bytes
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = ByteWriter::new();
        w.bytes(&DATASET_MAGIC);
        w.u16(DATASET_VERSION);
        w.u32(to_u32(self.obs_dim)?);
        w.u32(to_u32(self.act_dim)?);
        w.u32(to_u32(self.trajectories.len())?);
        for i in 0..self.trajectories.len() {
            w.u32(to_u32(self.traj_len(i))?);
        }
        for tr in &self.trajectories {
            w.f32s(tr.observations.iter().copied());
            w.f32s(tr.actions.iter().copied());
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::decode(bytes)?)
    }

    fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        expect_magic(&mut r, DATASET_MAGIC)?;
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(FormatError::Version { expected: DATASET_VERSION, found: version });
        }
        let obs_dim = r.u32()? as usize;
        let act_dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        // Every declared length must fit in what is actually present before
        // anything is allocated from it.
        if count.saturating_mul(4) > r.remaining() {
            return Err(FormatError::Truncated { needed: r.position() + count.saturating_mul(4), available: bytes.len() });
        }
        let mut lens = Vec::with_capacity(count);
        let mut payload: usize = 0;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let per_step =
                obs_dim.checked_add(act_dim).and_then(|d| d.checked_mul(4)).ok_or_else(|| FormatError::Invalid("dimension overflow".into()))?;
            payload = len.checked_mul(per_step).and_then(|b| payload.checked_add(b)).ok_or_else(|| FormatError::Invalid("length overflow".into()))?;
            lens.push(len);
        }
        let needed = r.position().saturating_add(payload).saturating_add(4);
        if needed > bytes.len() {
            return Err(FormatError::Truncated { needed, available: bytes.len() });
        }
        if needed < bytes.len() {
            return Err(FormatError::Invalid(format!("{} trailing bytes", bytes.len() - needed)));
        }
        verify_crc(bytes)?;
        let mut trajectories = Vec::with_capacity(count);
        for len in lens {
            let observations = r.f32s(len * obs_dim)?;
            let actions = r.f32s(len * act_dim)?;
            trajectories.push(Trajectory { observations, actions });
        }
        let ds = TrajectoryDataset { obs_dim, act_dim, trajectories };
        ds.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
        Ok(ds)
    }

    /// Writes the dataset and a JSON manifest next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes)?;
        fs::write(manifest_path(path), serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("json")
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} does not fit in u32")))
}

/// Convenience alias matching the operation names used elsewhere.
pub fn write_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<()> {
    ds.write(path)
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    TrajectoryDataset::read(path)
}
