//! Binary checkpoint and trajectory formats. All integers and floats are
//! little-endian; strings are UTF-8 prefixed by a `u32` byte length.
//!
//! Checkpoint: `GDB1`, version `u32`, config echo, then named parameter blocks
//! until end of file, each `name, rank u32, shape u32 × rank, f64 payload`.
//!
//! Trajectories: `GDBTRAJ1`, `n_records u32, n_atoms u32, N u32, sigma f64`,
//! then per record `n_atoms` atom ids (`u32`) and `(N+1)·n_atoms·3` coordinates.

use std::path::Path;

use gdb_core::geom::{GeometricState, Vec3};
use gdb_core::scoremodel::ScoreModelParams;
use gdb_core::training::{TrajectoryDataset, TrajectorySample};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GDB1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TRAJECTORY_MAGIC: &[u8; 8] = b"GDBTRAJ1";

fn bad(what: impl Into<String>) -> CliError {
    CliError::Io(what.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            bad(format!("file truncated: need {n} bytes at offset {}, have {}", self.pos, self.bytes.len() - self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CliError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("string is not valid UTF-8"))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn count(v: usize, what: &str) -> Result<u32, CliError> {
    u32::try_from(v).map_err(|_| bad(format!("{what} {v} does not fit the file format")))
}

/// Trained parameters with the configuration that produced them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ScoreModelParams,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_string(&mut out, &ckpt.config.to_text());
    let data = ckpt.params.as_slice();
    for block in &ckpt.params.layout().blocks {
        put_string(&mut out, &block.name);
        put_u32(&mut out, block.shape.len() as u32);
        for &d in &block.shape {
            put_u32(&mut out, d as u32);
        }
        for &v in &data[block.range()] {
            put_f64(&mut out, v);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CliError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint: bad magic bytes"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let config = RunConfig::from_text(&r.string()?)?;
    let mut params = ScoreModelParams::zeros(config.model)?;
    let blocks = params.layout().blocks.clone();
    let mut next = 0;
    while !r.at_end() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let expected = blocks.get(next).ok_or_else(|| bad(format!("unexpected extra block '{name}'")))?;
        if expected.name != name || expected.shape != shape {
            return Err(bad(format!(
                "block {next}: found '{name}' {shape:?}, expected '{}' {:?}",
                expected.name, expected.shape
            )));
        }
        let range = expected.range();
        for k in range {
            params.as_mut_slice()[k] = r.f64()?;
        }
        next += 1;
    }
    if next != blocks.len() {
        return Err(bad(format!("checkpoint has {next} of {} parameter blocks", blocks.len())));
    }
    Ok(Checkpoint { config, params })
}

/// Contents of a trajectory file. `segments` is `N`; each record has `N + 1` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub n_atoms: usize,
    pub segments: usize,
    pub sigma: f64,
    pub records: Vec<TrajectorySample>,
}

impl TrajectoryFile {
    pub fn from_dataset(dataset: &TrajectoryDataset, n_atoms: usize, sigma: f64) -> Self {
        Self { n_atoms, segments: dataset.segments(), sigma, records: dataset.records().to_vec() }
    }

    /// One frame per record.
    pub fn from_states(states: &[GeometricState], sigma: f64) -> Result<Self, CliError> {
        Self::from_frames(states.iter().map(|s| vec![s.clone()]).collect(), sigma)
    }

    /// Records given as frame lists of equal length.
    pub fn from_frames(frames: Vec<Vec<GeometricState>>, sigma: f64) -> Result<Self, CliError> {
        let first = frames.first().and_then(|f| f.first()).ok_or_else(|| bad("nothing to write"))?;
        let n_atoms = first.n_atoms();
        let len = frames[0].len();
        let mut records = Vec::with_capacity(frames.len());
        for rec in frames {
            if rec.len() != len || rec.iter().any(|s| s.n_atoms() != n_atoms || s.features != rec[0].features) {
                return Err(bad("records differ in frame count, atom count or atom ids"));
            }
            records.push(TrajectorySample {
                features: rec[0].features.clone(),
                frames: rec.into_iter().map(|s| s.coords).collect(),
            });
        }
        Ok(Self { n_atoms, segments: len - 1, sigma, records })
    }

    pub fn dataset(&self) -> Result<TrajectoryDataset, CliError> {
        Ok(TrajectoryDataset::new(self.records.clone())?)
    }

    pub fn frame(&self, record: usize, k: usize) -> GeometricState {
        self.records[record].frame_state(k)
    }

    pub fn first_frames(&self) -> Vec<GeometricState> {
        (0..self.records.len()).map(|i| self.frame(i, 0)).collect()
    }

    pub fn last_frames(&self) -> Vec<GeometricState> {
        (0..self.records.len()).map(|i| self.frame(i, self.segments)).collect()
    }
}

pub fn encode_trajectories(file: &TrajectoryFile) -> Result<Vec<u8>, CliError> {
    let frames = file.segments + 1;
    let mut out = Vec::with_capacity(28 + file.records.len() * (4 * file.n_atoms + frames * file.n_atoms * 24));
    out.extend_from_slice(TRAJECTORY_MAGIC);
    put_u32(&mut out, count(file.records.len(), "record count")?);
    put_u32(&mut out, count(file.n_atoms, "atom count")?);
    put_u32(&mut out, count(file.segments, "segment count")?);
    put_f64(&mut out, file.sigma);
    for rec in &file.records {
        if rec.features.len() != file.n_atoms || rec.frames.len() != frames {
            return Err(bad("record shape disagrees with the file header"));
        }
        for &id in &rec.features {
            put_u32(&mut out, id);
        }
        for frame in &rec.frames {
            if frame.len() != file.n_atoms {
                return Err(bad("frame atom count disagrees with the file header"));
            }
            for p in frame {
                for d in 0..3 {
                    put_f64(&mut out, p[d]);
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_trajectories(bytes: &[u8]) -> Result<TrajectoryFile, CliError> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != TRAJECTORY_MAGIC {
        return Err(bad("not a trajectory file: bad magic bytes"));
    }
    let n_records = r.u32()? as usize;
    let n_atoms = r.u32()? as usize;
    let segments = r.u32()? as usize;
    let sigma = r.f64()?;
    let frames = segments + 1;
    let expected = 28 + n_records as u128 * (4 * n_atoms as u128 + frames as u128 * n_atoms as u128 * 24);
    if bytes.len() as u128 != expected {
        return Err(bad(format!("trajectory file has {} bytes, header implies {expected}", bytes.len())));
    }
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let features = (0..n_atoms).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let mut fr = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut coords = Vec::with_capacity(n_atoms);
            for _ in 0..n_atoms {
                coords.push(Vec3::new(r.f64()?, r.f64()?, r.f64()?));
            }
            fr.push(coords);
        }
        records.push(TrajectorySample { features, frames: fr });
    }
    Ok(TrajectoryFile { n_atoms, segments, sigma, records })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| bad(format!("cannot write {}: {e}", path.display())))
}

pub fn read_trajectories(path: &Path) -> Result<TrajectoryFile, CliError> {
    decode_trajectories(&read_file(path)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    decode_checkpoint(&read_file(path)?)
}
