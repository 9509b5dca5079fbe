//! Bit-exact persistence.
//!
//! * TVID v1: `"TVID1\0"`, `u16` version, `u32` t/h/w (all little-endian),
//!   then `t·h·w` little-endian `f32` values, frame-major then row-major.
//! * Checkpoints: a directory holding `manifest.json` and `weights.bin`
//!   (concatenated little-endian `f32` tensors in manifest order).
//! * Training history: one JSON object per line.
//!
//! Files are written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentId, AgentParams};
use crate::pipeline::{
    Artifact, HistoryEvent, PipelineConfig, PipelineRun, RunInputs, RunStatus, StageId, TaskKind,
};
use crate::selfmod::{ChainState, HistoryRecord, ModulationEmbedding};
use crate::video::{EnhancedPrompt, Frame, TextPrompt, Video, VideoError, EMBED_DIM};

pub const TVID_MAGIC: &[u8; 6] = b"TVID1\0";
pub const TVID_VERSION: u16 = 1;
pub const TVID_HEADER_LEN: usize = 6 + 2 + 12;
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a TVID stream (bad magic)")]
    BadMagic,
    #[error("unsupported TVID version {0}")]
    BadVersion(u16),
    #[error("payload holds {actual} bytes, header declares {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("header declares an empty video")]
    EmptyHeader,
    #[error("invalid pixel data: {0}")]
    InvalidPixels(#[from] VideoError),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------- TVID

/// Writes `v` and returns the number of bytes written.
pub fn write_tvid<W: Write>(v: &Video, mut sink: W) -> Result<usize, StoreError> {
    let bytes = encode_tvid(v);
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn encode_tvid(v: &Video) -> Vec<u8> {
    let (h, w) = v.dims();
    let mut out = Vec::with_capacity(TVID_HEADER_LEN + 4 * v.len() * h * w);
    out.extend_from_slice(TVID_MAGIC);
    out.extend_from_slice(&TVID_VERSION.to_le_bytes());
    for d in [v.len(), h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in v.flat() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn read_tvid<R: Read>(mut source: R) -> Result<Video, StoreError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_tvid(&bytes)
}

pub fn decode_tvid(bytes: &[u8]) -> Result<Video, StoreError> {
    if bytes.len() < 6 || &bytes[..6] != TVID_MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < TVID_HEADER_LEN {
        return Err(StoreError::TruncatedPayload {
            expected: TVID_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != TVID_VERSION {
        return Err(StoreError::BadVersion(version));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let count = t
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or(StoreError::EmptyHeader)?;
    if count == 0 {
        return Err(StoreError::EmptyHeader);
    }
    let payload = &bytes[TVID_HEADER_LEN..];
    let expected = count.checked_mul(4).ok_or(StoreError::EmptyHeader)?;
    if payload.len() != expected {
        return Err(StoreError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let frames = values
        .chunks_exact(h * w)
        .map(|px| Frame::new(h, w, px.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Video::from_frames(frames)?)
}

pub fn encode_tvid_b64(v: &Video) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_tvid(v))
}

pub fn decode_tvid_b64(s: &str) -> Result<Video, StoreError> {
    decode_tvid(&base64::engine::general_purpose::STANDARD.decode(s)?)
}

/// Rounds every pixel to `f32`, i.e. what a TVID round trip yields.
pub fn quantize_video(v: &Video) -> Video {
    decode_tvid(&encode_tvid(v)).expect("valid video re-encodes")
}

/// Temp-file-then-rename write.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_tvid(v: &Video, path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &encode_tvid(v))
}

pub fn load_tvid(path: &Path) -> Result<Video, StoreError> {
    decode_tvid(&fs::read(path)?)
}

// ---------------------------------------------------------- checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub agent_id: u8,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationEntry {
    pub agent_id: u8,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iteration: usize,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub chain: Vec<u8>,
    pub tensors: Vec<TensorEntry>,
    pub modulation: Vec<ModulationEntry>,
    pub train_meta: TrainMeta,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

fn push_f32(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Builds the manifest and weight blob without touching the filesystem.
pub fn encode_checkpoint(
    state: &ChainState,
    chain: &[AgentId],
    meta: TrainMeta,
) -> Result<(CheckpointManifest, Vec<u8>), StoreError> {
    let mut weights = Vec::new();
    let mut tensors = Vec::new();
    let mut modulation = Vec::new();
    for &agent in chain {
        let params = state
            .params
            .get(&agent)
            .ok_or_else(|| StoreError::ManifestMismatch(format!("no parameters for {agent}")))?;
        for t in &params.tensors {
            let byte_offset = weights.len() as u64;
            push_f32(&mut weights, &t.data);
            tensors.push(TensorEntry {
                name: t.name.clone(),
                agent_id: agent.index(),
                shape: t.shape(),
                byte_offset,
                byte_len: weights.len() as u64 - byte_offset,
            });
        }
    }
    for &agent in chain {
        let z = state
            .modulation
            .get(&agent)
            .ok_or_else(|| StoreError::ManifestMismatch(format!("no modulation for {agent}")))?;
        let byte_offset = weights.len() as u64;
        push_f32(&mut weights, &z.values);
        modulation.push(ModulationEntry {
            agent_id: agent.index(),
            byte_offset,
            byte_len: weights.len() as u64 - byte_offset,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        chain: chain.iter().map(|a| a.index()).collect(),
        tensors,
        modulation,
        train_meta: meta,
    };
    Ok((manifest, weights))
}

pub fn write_checkpoint(
    state: &ChainState,
    chain: &[AgentId],
    meta: TrainMeta,
    dir: &Path,
) -> Result<(), StoreError> {
    let (manifest, weights) = encode_checkpoint(state, chain, meta)?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(WEIGHTS_FILE), &weights)?;
    write_atomic(&dir.join(MANIFEST_FILE), &canonical_json(&manifest)?)?;
    Ok(())
}

fn read_f32s(weights: &[u8], offset: u64, len: u64) -> Vec<f64> {
    weights[offset as usize..(offset + len) as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect()
}

/// Rebuilds state from a manifest and weight blob, validating every offset
/// and shape against the declared chain.
pub fn decode_checkpoint(
    manifest: &CheckpointManifest,
    weights: &[u8],
) -> Result<(Vec<AgentId>, ChainState), StoreError> {
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(StoreError::ManifestMismatch(format!(
            "format_version {}",
            manifest.format_version
        )));
    }
    let chain = manifest
        .chain
        .iter()
        .map(|&i| AgentId::from_index(i).map_err(|e| StoreError::ManifestMismatch(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut spans: Vec<(u64, u64)> = manifest
        .tensors
        .iter()
        .map(|t| (t.byte_offset, t.byte_len))
        .chain(manifest.modulation.iter().map(|m| (m.byte_offset, m.byte_len)))
        .collect();
    spans.sort_unstable();
    for (off, len) in &spans {
        if off.checked_add(*len).is_none_or(|end| end > weights.len() as u64) {
            return Err(StoreError::ManifestMismatch(format!(
                "span {off}+{len} exceeds weights file ({} bytes)",
                weights.len()
            )));
        }
        if len % 4 != 0 {
            return Err(StoreError::ManifestMismatch(format!("span {off}+{len} is not f32-aligned")));
        }
    }
    for w in spans.windows(2) {
        if w[0].0 + w[0].1 > w[1].0 {
            return Err(StoreError::ManifestMismatch(format!(
                "spans at {} and {} overlap",
                w[0].0, w[1].0
            )));
        }
    }

    let mut params = BTreeMap::new();
    let mut modulation = BTreeMap::new();
    for &agent in &chain {
        let mut p = AgentParams::zeros(agent)
            .map_err(|e| StoreError::ManifestMismatch(e.to_string()))?;
        for t in p.tensors.iter_mut() {
            let entry = manifest
                .tensors
                .iter()
                .find(|e| e.agent_id == agent.index() && e.name == t.name)
                .ok_or_else(|| {
                    StoreError::ManifestMismatch(format!("missing tensor {} for {agent}", t.name))
                })?;
            if entry.shape != t.shape() || entry.byte_len != 4 * t.len() as u64 {
                return Err(StoreError::ShapeMismatch(format!(
                    "{}: declared {:?}, expected {:?}",
                    t.name,
                    entry.shape,
                    t.shape()
                )));
            }
            t.data = read_f32s(weights, entry.byte_offset, entry.byte_len);
        }
        params.insert(agent, p);
        let entry = manifest
            .modulation
            .iter()
            .find(|m| m.agent_id == agent.index())
            .ok_or_else(|| StoreError::ManifestMismatch(format!("missing modulation for {agent}")))?;
        if entry.byte_len != 4 * EMBED_DIM as u64 {
            return Err(StoreError::ShapeMismatch(format!("modulation for {agent}")));
        }
        modulation.insert(
            agent,
            ModulationEmbedding {
                agent,
                values: read_f32s(weights, entry.byte_offset, entry.byte_len),
            },
        );
    }
    Ok((chain, ChainState { params, modulation }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub chain: Vec<AgentId>,
    pub state: ChainState,
    pub meta: TrainMeta,
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint, StoreError> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let weights = fs::read(dir.join(WEIGHTS_FILE))?;
    let (chain, state) = decode_checkpoint(&manifest, &weights)?;
    Ok(Checkpoint {
        chain,
        state,
        meta: manifest.train_meta,
    })
}

/// Pretty JSON with struct-declared key order and shortest round-trip floats.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, StoreError> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

// -------------------------------------------------------------- history

fn normalize_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Appends one JSON line; `-0.0` is written as `0.0`.
pub fn append_history<W: Write>(record: &HistoryRecord, mut log: W) -> Result<(), StoreError> {
    let mut r = record.clone();
    r.loss = normalize_zero(r.loss);
    r.alpha.values_mut().for_each(|a| *a = normalize_zero(*a));
    let mut line = serde_json::to_vec(&r)?;
    line.push(b'\n');
    log.write_all(&line)?;
    Ok(())
}

pub fn read_history<R: BufRead>(log: R) -> Result<Vec<HistoryRecord>, StoreError> {
    log.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn history_path(dir: &Path) -> PathBuf {
    dir.join("history.jsonl")
}

// ------------------------------------------------------------------ runs

pub const RUN_FILE: &str = "run.json";
pub const RUN_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArtifactRecord {
    Prompt { prompt: EnhancedPrompt },
    Frame { file: String },
    Video { file: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub prompt: Option<String>,
    pub frame: Option<String>,
    pub videos: Vec<String>,
}

/// Scalar state of a run as stored in `run.json`; videos live in `artifacts/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub run_id: String,
    pub task: TaskKind,
    pub config: PipelineConfig,
    pub stage: StageId,
    pub status: RunStatus,
    pub inputs: InputRecord,
    pub retry_counts: BTreeMap<StageId, u32>,
    pub artifacts: BTreeMap<StageId, ArtifactRecord>,
    pub history: Vec<HistoryEvent>,
}

fn artifact_file(stage: StageId) -> String {
    format!("artifacts/{}.tvid", stage.name())
}

/// Writes `run.json` and one TVID per frame or video (frames as `T = 1`).
pub fn persist_run(run: &PipelineRun, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir.join("artifacts"))?;
    let save = |v: &Video, rel: &str| save_tvid(v, &dir.join(rel)).map(|_| rel.to_string());
    let frame = match &run.inputs.frame {
        Some(f) => Some(save(&Video::single(f.clone()), "artifacts/input_frame.tvid")?),
        None => None,
    };
    let videos = run
        .inputs
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| save(v, &format!("artifacts/input_video_{i}.tvid")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut artifacts = BTreeMap::new();
    for (stage, a) in &run.artifacts {
        let rec = match a {
            Artifact::Prompt(p) => ArtifactRecord::Prompt { prompt: p.clone() },
            Artifact::Frame(f) => ArtifactRecord::Frame {
                file: save(&Video::single(f.clone()), &artifact_file(*stage))?,
            },
            Artifact::Video(v) => ArtifactRecord::Video {
                file: save(v, &artifact_file(*stage))?,
            },
        };
        artifacts.insert(*stage, rec);
    }
    let record = RunRecord {
        format_version: RUN_FORMAT,
        run_id: run.run_id.clone(),
        task: run.task,
        config: run.config,
        stage: run.stage,
        status: run.status,
        inputs: InputRecord {
            prompt: run.inputs.prompt.as_ref().map(|p| p.text().to_string()),
            frame,
            videos,
        },
        retry_counts: run.retry_counts.clone(),
        artifacts,
        history: run.history.clone(),
    };
    write_atomic(&dir.join(RUN_FILE), &canonical_json(&record)?)
}

fn load_artifact_video(dir: &Path, file: &str, what: &str) -> Result<Video, StoreError> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(StoreError::CorruptRecord(format!(
            "{what}: missing file {}",
            path.display()
        )));
    }
    load_tvid(&path).map_err(|e| StoreError::CorruptRecord(format!("{what}: {e}")))
}

fn single_frame(v: Video, what: &str) -> Result<Frame, StoreError> {
    if v.len() != 1 {
        return Err(StoreError::CorruptRecord(format!(
            "{what}: expected one frame, found {}",
            v.len()
        )));
    }
    Ok(v.into_frames().remove(0))
}

pub fn load_run(dir: &Path) -> Result<PipelineRun, StoreError> {
    let bytes = fs::read(dir.join(RUN_FILE))?;
    let record: RunRecord = serde_json::from_slice(&bytes)
        .map_err(|e| StoreError::CorruptRecord(format!("{RUN_FILE}: {e}")))?;
    if record.format_version != RUN_FORMAT {
        return Err(StoreError::CorruptRecord(format!(
            "unsupported run format {}",
            record.format_version
        )));
    }
    let prompt = record
        .inputs
        .prompt
        .map(TextPrompt::new)
        .transpose()
        .map_err(|e| StoreError::CorruptRecord(format!("input prompt: {e}")))?;
    let frame = match &record.inputs.frame {
        Some(f) => Some(single_frame(
            load_artifact_video(dir, f, "input frame")?,
            "input frame",
        )?),
        None => None,
    };
    let videos = record
        .inputs
        .videos
        .iter()
        .map(|f| load_artifact_video(dir, f, "input video"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut artifacts = BTreeMap::new();
    for (stage, rec) in record.artifacts {
        let what = format!("artifact for stage {stage}");
        let a = match rec {
            ArtifactRecord::Prompt { prompt } => Artifact::Prompt(prompt),
            ArtifactRecord::Frame { file } => {
                Artifact::Frame(single_frame(load_artifact_video(dir, &file, &what)?, &what)?)
            }
            ArtifactRecord::Video { file } => {
                Artifact::Video(load_artifact_video(dir, &file, &what)?)
            }
        };
        artifacts.insert(stage, a);
    }
    if record.history.iter().enumerate().any(|(i, e)| e.seq != i as u64) {
        return Err(StoreError::CorruptRecord("history sequence is not contiguous".into()));
    }
    Ok(PipelineRun {
        run_id: record.run_id,
        task: record.task,
        inputs: RunInputs {
            prompt,
            frame,
            videos,
        },
        config: record.config,
        stage: record.stage,
        status: record.status,
        retry_counts: record.retry_counts,
        artifacts,
        history: record.history,
    })
}
