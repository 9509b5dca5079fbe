//! C ABI over `sopforge`.
//!
//! Objects are opaque handles created and freed by this library. Every
//! fallible call returns an [`SfStatus`]; on failure the message is available
//! from [`sf_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sopforge::metrics::{report, MetricsInput};
use sopforge::pipeline::{
    create_run, AgentSuite, HumanDecision, PipelineConfig, PipelineError, PipelineRun, RunInputs,
    RunStatus, StageId, TaskKind,
};
use sopforge::store::{decode_tvid, encode_tvid, load_tvid, save_tvid};
use sopforge::toyworld::{hash_text, oracle_render, prompt_vector, rng_stream, OracleParams};
use sopforge::video::{Frame, TextPrompt, Video};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Io = 4,
    Format = 5,
    InputMismatch = 6,
    WrongStage = 7,
    NotAwaiting = 8,
    RetryExhausted = 9,
    AgentFailure = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfTask {
    TextToVideo = 0,
    ImageToVideo = 1,
    ExtendVideo = 2,
    VideoEdit = 3,
    ConnectVideos = 4,
    SimulateDigitalWorld = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStage {
    Enhance = 0,
    FirstFrame = 1,
    EditFrame = 2,
    GenerateVideo = 3,
    Connect = 4,
    Done = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfDecision {
    Approve = 0,
    Retry = 1,
    RouteToEdit = 2,
    Abort = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfRunStatus {
    AwaitingDecision = 0,
    Running = 1,
    Done = 2,
    Failed = 3,
}

/// Metrics of one video. `has_*` is 1 when the matching field is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SfMetrics {
    pub video_ti: f64,
    pub has_video_ti: i32,
    pub tcon: f64,
    pub has_tcon: i32,
    pub dynamic_degree: f64,
    pub motion_smoothness: f64,
}

/// Opaque video handle.
pub struct SfVideo {
    video: Video,
}

/// Opaque pipeline run handle; owns the agents it executes with.
pub struct SfRun {
    run: PipelineRun,
    suite: AgentSuite,
}

impl From<TaskKind> for SfTask {
    fn from(t: TaskKind) -> Self {
        match t {
            TaskKind::TextToVideo => SfTask::TextToVideo,
            TaskKind::ImageToVideo => SfTask::ImageToVideo,
            TaskKind::ExtendVideo => SfTask::ExtendVideo,
            TaskKind::VideoEdit => SfTask::VideoEdit,
            TaskKind::ConnectVideos => SfTask::ConnectVideos,
            TaskKind::SimulateDigitalWorld => SfTask::SimulateDigitalWorld,
        }
    }
}

impl From<SfTask> for TaskKind {
    fn from(t: SfTask) -> Self {
        match t {
            SfTask::TextToVideo => TaskKind::TextToVideo,
            SfTask::ImageToVideo => TaskKind::ImageToVideo,
            SfTask::ExtendVideo => TaskKind::ExtendVideo,
            SfTask::VideoEdit => TaskKind::VideoEdit,
            SfTask::ConnectVideos => TaskKind::ConnectVideos,
            SfTask::SimulateDigitalWorld => TaskKind::SimulateDigitalWorld,
        }
    }
}

impl From<StageId> for SfStage {
    fn from(s: StageId) -> Self {
        match s {
            StageId::Enhance => SfStage::Enhance,
            StageId::FirstFrame => SfStage::FirstFrame,
            StageId::EditFrame => SfStage::EditFrame,
            StageId::GenerateVideo => SfStage::GenerateVideo,
            StageId::Connect => SfStage::Connect,
            StageId::Done => SfStage::Done,
        }
    }
}

impl From<SfStage> for StageId {
    fn from(s: SfStage) -> Self {
        match s {
            SfStage::Enhance => StageId::Enhance,
            SfStage::FirstFrame => StageId::FirstFrame,
            SfStage::EditFrame => StageId::EditFrame,
            SfStage::GenerateVideo => StageId::GenerateVideo,
            SfStage::Connect => StageId::Connect,
            SfStage::Done => StageId::Done,
        }
    }
}

impl From<SfDecision> for HumanDecision {
    fn from(d: SfDecision) -> Self {
        match d {
            SfDecision::Approve => HumanDecision::Approve,
            SfDecision::Retry => HumanDecision::Retry,
            SfDecision::RouteToEdit => HumanDecision::RouteToEdit,
            SfDecision::Abort => HumanDecision::Abort,
        }
    }
}

impl From<RunStatus> for SfRunStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::AwaitingDecision => SfRunStatus::AwaitingDecision,
            RunStatus::Running => SfRunStatus::Running,
            RunStatus::Done => SfRunStatus::Done,
            RunStatus::Failed => SfRunStatus::Failed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

type FfiResult<T = ()> = Result<T, (SfStatus, String)>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records any error message, and never lets a panic cross the ABI.
fn guard(f: impl FnOnce() -> FfiResult) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SfStatus::Panic
        }
    }
}

fn pipeline_status(e: PipelineError) -> (SfStatus, String) {
    let status = match &e {
        PipelineError::InputMismatch(_) | PipelineError::InvalidConfig(_) => SfStatus::InputMismatch,
        PipelineError::WrongStage { .. } | PipelineError::IllegalDecision { .. } => {
            SfStatus::WrongStage
        }
        PipelineError::NotAwaitingDecision(_) | PipelineError::NotRunning(_) => SfStatus::NotAwaiting,
        PipelineError::RetryExhausted(_) => SfStatus::RetryExhausted,
        PipelineError::AgentFailure { .. } | PipelineError::MissingArtifact(_) => {
            SfStatus::AgentFailure
        }
    };
    (status, e.to_string())
}

fn invalid(e: impl ToString) -> (SfStatus, String) {
    (SfStatus::InvalidArgument, e.to_string())
}

fn null(what: &str) -> (SfStatus, String) {
    (SfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (SfStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn opt_c_str<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        c_str(p, what).map(Some)
    }
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> FfiResult {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn new_video(video: Video) -> *mut SfVideo {
    Box::into_raw(Box::new(SfVideo { video }))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------ toy world

/// FNV-1a 64 of a UTF-8 string.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_hash_text(text: *const c_char, out: *mut u64) -> SfStatus {
    guard(|| put(out, hash_text(c_str(text, "text")?), "out"))
}

/// First `count` splitmix64 values of `seed`, mapped to [-1, 1).
///
/// # Safety
/// `out` must point to `count` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_rng_stream(seed: u64, count: usize, out: *mut f64) -> SfStatus {
    guard(|| {
        if count == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let values = rng_stream(seed, count);
        ptr::copy_nonoverlapping(values.as_ptr(), out, count);
        Ok(())
    })
}

/// Hidden ground-truth video for `prompt`.
///
/// # Safety
/// `prompt` must be a NUL-terminated string; `out` must be writable. The
/// returned handle is freed with [`sf_video_free`].
#[no_mangle]
pub unsafe extern "C" fn sf_oracle_render(
    prompt: *const c_char,
    digital_style: i32,
    t_frames: usize,
    out: *mut *mut SfVideo,
) -> SfStatus {
    guard(|| {
        let text = c_str(prompt, "prompt")?;
        let params = OracleParams {
            prompt_vec: prompt_vector(text).map_err(invalid)?,
            digital_style: digital_style != 0,
        };
        let video = oracle_render(&params, t_frames).map_err(invalid)?;
        put(out, new_video(video), "out")
    })
}

// ---------------------------------------------------------------- videos

/// Builds a video from `t*h*w` pixels in [-1, 1], frame-major then row-major.
///
/// # Safety
/// `pixels` must point to `t*h*w` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_video_create(
    t: usize,
    h: usize,
    w: usize,
    pixels: *const f64,
    out: *mut *mut SfVideo,
) -> SfStatus {
    guard(|| {
        let n = t
            .checked_mul(h)
            .and_then(|x| x.checked_mul(w))
            .filter(|n| *n > 0)
            .ok_or_else(|| invalid("dimensions must be positive"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let data = std::slice::from_raw_parts(pixels, n);
        let frames = data
            .chunks(h * w)
            .map(|c| Frame::new(h, w, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?;
        let video = Video::from_frames(frames).map_err(invalid)?;
        put(out, new_video(video), "out")
    })
}

/// Frame count and frame size.
///
/// # Safety
/// `video` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_video_dims(
    video: *const SfVideo,
    t: *mut usize,
    h: *mut usize,
    w: *mut usize,
) -> SfStatus {
    guard(|| {
        let v = &borrow(video, "video")?.video;
        put(t, v.len(), "t")?;
        put(h, v.height(), "h")?;
        put(w, v.width(), "w")
    })
}

/// Copies all pixels into `out`, which must hold at least `t*h*w` doubles.
///
/// # Safety
/// `video` must be a live handle; `out` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_video_pixels(
    video: *const SfVideo,
    out: *mut f64,
    capacity: usize,
) -> SfStatus {
    guard(|| {
        let v = &borrow(video, "video")?.video;
        let data: Vec<f64> = v.flat().collect();
        if capacity < data.len() {
            return Err((
                SfStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", data.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
        Ok(())
    })
}

/// Releases a video handle. Null is ignored.
///
/// # Safety
/// `video` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_video_free(video: *mut SfVideo) {
    if !video.is_null() {
        drop(Box::from_raw(video));
    }
}

// ------------------------------------------------------------------ TVID

/// Encodes `video` as TVID bytes. `*written` receives the encoded size; if
/// `capacity` is too small nothing is copied and `BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `video` must be a live handle; `out` must point to `capacity` writable
/// bytes (or be null with `capacity` 0); `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_tvid_encode(
    video: *const SfVideo,
    out: *mut u8,
    capacity: usize,
    written: *mut usize,
) -> SfStatus {
    guard(|| {
        let bytes = encode_tvid(&borrow(video, "video")?.video);
        put(written, bytes.len(), "written")?;
        if capacity < bytes.len() {
            return Err((
                SfStatus::BufferTooSmall,
                format!("need {} bytes, got {capacity}", bytes.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
        Ok(())
    })
}

/// Parses TVID bytes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_tvid_decode(
    bytes: *const u8,
    len: usize,
    out: *mut *mut SfVideo,
) -> SfStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let video = decode_tvid(std::slice::from_raw_parts(bytes, len))
            .map_err(|e| (SfStatus::Format, e.to_string()))?;
        put(out, new_video(video), "out")
    })
}

/// Writes `video` to a TVID file.
///
/// # Safety
/// `video` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sf_tvid_save(video: *const SfVideo, path: *const c_char) -> SfStatus {
    guard(|| {
        let v = &borrow(video, "video")?.video;
        let p = c_str(path, "path")?;
        save_tvid(v, Path::new(p)).map_err(|e| (SfStatus::Io, e.to_string()))
    })
}

/// Reads a TVID file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_tvid_load(path: *const c_char, out: *mut *mut SfVideo) -> SfStatus {
    guard(|| {
        let p = c_str(path, "path")?;
        let video = load_tvid(Path::new(p)).map_err(|e| match e {
            sopforge::store::StoreError::Io(io) => (SfStatus::Io, io.to_string()),
            other => (SfStatus::Format, other.to_string()),
        })?;
        put(out, new_video(video), "out")
    })
}

// --------------------------------------------------------------- metrics

/// Metrics of `video`. `prompt` and `reference` may be null.
///
/// # Safety
/// `video` must be a live handle; `reference` null or live; `prompt` null or
/// NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_metrics(
    video: *const SfVideo,
    prompt: *const c_char,
    reference: *const SfVideo,
    out: *mut SfMetrics,
) -> SfStatus {
    guard(|| {
        let v = &borrow(video, "video")?.video;
        let text = opt_c_str(prompt, "prompt")?;
        let r = reference.as_ref().map(|r| &r.video);
        let m = report(
            v,
            &MetricsInput {
                prompt: text,
                input_frame: None,
                reference: r,
                neighbours: None,
            },
        )
        .map_err(invalid)?;
        put(
            out,
            SfMetrics {
                video_ti: m.video_ti.unwrap_or(0.0),
                has_video_ti: m.video_ti.is_some() as i32,
                tcon: m.tcon.unwrap_or(0.0),
                has_tcon: m.tcon.is_some() as i32,
                dynamic_degree: m.dynamic_degree,
                motion_smoothness: m.motion_smoothness,
            },
            "out",
        )
    })
}

// ------------------------------------------------------------------ runs

/// Creates a run with freshly initialised agents. `prompt` may be null for
/// tasks that do not need one. For image-to-video the first frame of
/// `inputs[0]` is the input image; other tasks take `inputs` as videos.
///
/// # Safety
/// `prompt` null or NUL-terminated; `inputs` must point to `n_inputs` live
/// handles (or be null with `n_inputs` 0); `out` writable. Free the run with
/// [`sf_run_free`].
#[no_mangle]
pub unsafe extern "C" fn sf_run_create(
    task: SfTask,
    prompt: *const c_char,
    inputs: *const *const SfVideo,
    n_inputs: usize,
    seed: u64,
    out: *mut *mut SfRun,
) -> SfStatus {
    guard(|| {
        let task = TaskKind::from(task);
        let prompt = opt_c_str(prompt, "prompt")?
            .map(TextPrompt::new)
            .transpose()
            .map_err(|e| (SfStatus::InputMismatch, e.to_string()))?;
        let mut videos = Vec::with_capacity(n_inputs);
        if n_inputs > 0 {
            if inputs.is_null() {
                return Err(null("inputs"));
            }
            for &h in std::slice::from_raw_parts(inputs, n_inputs) {
                videos.push(borrow(h, "input video")?.video.clone());
            }
        }
        let mut run_inputs = RunInputs {
            prompt,
            ..RunInputs::default()
        };
        if task == TaskKind::ImageToVideo && !videos.is_empty() {
            run_inputs.frame = Some(videos.remove(0).first_frame().clone());
        }
        run_inputs.videos = videos;
        let config = PipelineConfig {
            seed,
            ..PipelineConfig::default()
        };
        let run = create_run(task, run_inputs, config).map_err(pipeline_status)?;
        let suite = AgentSuite::init(seed).map_err(|e| (SfStatus::AgentFailure, e.to_string()))?;
        put(out, Box::into_raw(Box::new(SfRun { run, suite })), "out")
    })
}

/// Executes the current stage if the run is running, stopping at its checkpoint.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_run_advance(run: *mut SfRun) -> SfStatus {
    guard(|| {
        let r = borrow_mut(run, "run")?;
        r.run.advance(&r.suite).map_err(pipeline_status)
    })
}

/// Applies a human decision at `stage`, then executes the next stage.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_run_decide(
    run: *mut SfRun,
    stage: SfStage,
    decision: SfDecision,
) -> SfStatus {
    guard(|| {
        let r = borrow_mut(run, "run")?;
        r.run
            .apply_decision(stage.into(), decision.into())
            .and_then(|_| r.run.advance(&r.suite))
            .map_err(pipeline_status)
    })
}

/// Approves every checkpoint until the run ends.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_run_auto(run: *mut SfRun) -> SfStatus {
    guard(|| {
        let r = borrow_mut(run, "run")?;
        r.run.auto_run(&r.suite).map_err(pipeline_status)
    })
}

/// Current stage and status.
///
/// # Safety
/// `run` must be a live handle; `stage` and `status` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_run_state(
    run: *const SfRun,
    stage: *mut SfStage,
    status: *mut SfRunStatus,
) -> SfStatus {
    guard(|| {
        let r = borrow(run, "run")?;
        put(stage, r.run.stage.into(), "stage")?;
        put(status, r.run.status.into(), "status")
    })
}

/// Retry count at `stage`.
///
/// # Safety
/// `run` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_run_retries(
    run: *const SfRun,
    stage: SfStage,
    out: *mut u32,
) -> SfStatus {
    guard(|| {
        let r = borrow(run, "run")?;
        put(out, r.run.retries(stage.into()), "out")
    })
}

/// Copy of the final video of a finished run.
///
/// # Safety
/// `run` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_run_final_video(run: *const SfRun, out: *mut *mut SfVideo) -> SfStatus {
    guard(|| {
        let r = borrow(run, "run")?;
        let v = r.run.final_video().ok_or_else(|| {
            (
                SfStatus::NotAwaiting,
                format!("run is {}, no final video", r.run.status),
            )
        })?;
        put(out, new_video(v.clone()), "out")
    })
}

/// Releases a run handle. Null is ignored.
///
/// # Safety
/// `run` must be null or a handle from [`sf_run_create`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_run_free(run: *mut SfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
