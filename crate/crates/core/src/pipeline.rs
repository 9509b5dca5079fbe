//! SOP state machine: the six tasks, their stage tables, and the human
//! checkpoint after every stage.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    connect_forward, i2i_forward, i2v_forward, init_params, t2i_forward, AgentError, AgentId,
    AgentParams, AugmentedEmbedding,
};
use crate::selfmod::{init_modulation, ChainState, ModulationEmbedding, ModulationSet, ParamSet};
use crate::toyworld::{derive_seed, embed_text, enhance_prompt, rng_stream, Seed64, ToyError};
use crate::video::{
    EnhancedPrompt, Frame, TextPrompt, Video, VideoError, DEFAULT_FRAMES, DEFAULT_HEIGHT,
    DEFAULT_WIDTH, EMBED_DIM,
};

pub const MAX_RETRIES: u32 = 3;
pub const DIGITAL_WORLD_SUFFIX: &str = " In digital world style";
/// Embedding text for tasks whose prompt is optional and was left out.
pub const DEFAULT_TASK_TEXT: &str = "continue the scene";
pub const DEFAULT_JITTER_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("decision targets stage {requested} but the run is at {current}")]
    WrongStage { current: StageId, requested: StageId },
    #[error("{decision} is not allowed at stage {stage}")]
    IllegalDecision { stage: StageId, decision: HumanDecision },
    #[error("run is {0}, not awaiting a decision")]
    NotAwaitingDecision(RunStatus),
    #[error("run is {0}, not running")]
    NotRunning(RunStatus),
    #[error("stage {0} already retried {MAX_RETRIES} times")]
    RetryExhausted(StageId),
    #[error("agent failure at {stage}: {message}")]
    AgentFailure { stage: StageId, message: String },
    #[error("stage {0} needs an artifact that does not exist")]
    MissingArtifact(StageId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TextToVideo,
    ImageToVideo,
    ExtendVideo,
    VideoEdit,
    ConnectVideos,
    SimulateDigitalWorld,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::TextToVideo,
        TaskKind::ImageToVideo,
        TaskKind::ExtendVideo,
        TaskKind::VideoEdit,
        TaskKind::ConnectVideos,
        TaskKind::SimulateDigitalWorld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TextToVideo => "text_to_video",
            TaskKind::ImageToVideo => "image_to_video",
            TaskKind::ExtendVideo => "extend_video",
            TaskKind::VideoEdit => "video_edit",
            TaskKind::ConnectVideos => "connect_videos",
            TaskKind::SimulateDigitalWorld => "simulate_digital_world",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn first_stage(self) -> StageId {
        match self {
            TaskKind::TextToVideo | TaskKind::SimulateDigitalWorld | TaskKind::ImageToVideo => {
                StageId::Enhance
            }
            TaskKind::ExtendVideo => StageId::GenerateVideo,
            TaskKind::VideoEdit => StageId::EditFrame,
            TaskKind::ConnectVideos => StageId::Connect,
        }
    }

    /// Stage reached by approving `stage`.
    pub fn successor(self, stage: StageId) -> StageId {
        use StageId::*;
        match (self, stage) {
            (TaskKind::TextToVideo | TaskKind::SimulateDigitalWorld, Enhance) => FirstFrame,
            (TaskKind::ImageToVideo, Enhance) => GenerateVideo,
            (_, FirstFrame | EditFrame) => GenerateVideo,
            _ => Done,
        }
    }

    fn prompt_required(self) -> bool {
        !matches!(self, TaskKind::ExtendVideo | TaskKind::ConnectVideos)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Enhance,
    FirstFrame,
    EditFrame,
    GenerateVideo,
    Connect,
    Done,
}

impl StageId {
    pub const ALL: [StageId; 6] = [
        StageId::Enhance,
        StageId::FirstFrame,
        StageId::EditFrame,
        StageId::GenerateVideo,
        StageId::Connect,
        StageId::Done,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageId::Enhance => "enhance",
            StageId::FirstFrame => "first_frame",
            StageId::EditFrame => "edit_frame",
            StageId::GenerateVideo => "generate_video",
            StageId::Connect => "connect",
            StageId::Done => "done",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Agent that produces this stage's artifact; `None` for prompt enhancement.
    pub fn agent(self) -> Option<AgentId> {
        match self {
            StageId::FirstFrame => Some(AgentId::TextToImage),
            StageId::EditFrame => Some(AgentId::ImageToImage),
            StageId::GenerateVideo => Some(AgentId::ImageToVideo),
            StageId::Connect => Some(AgentId::VideoConnect),
            StageId::Enhance | StageId::Done => None,
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanDecision {
    Approve,
    Retry,
    /// Only legal at `FirstFrame`.
    RouteToEdit,
    Abort,
}

impl HumanDecision {
    pub const ALL: [HumanDecision; 4] = [
        HumanDecision::Approve,
        HumanDecision::Retry,
        HumanDecision::RouteToEdit,
        HumanDecision::Abort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HumanDecision::Approve => "approve",
            HumanDecision::Retry => "retry",
            HumanDecision::RouteToEdit => "route_to_edit",
            HumanDecision::Abort => "abort",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for HumanDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    AwaitingDecision,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::AwaitingDecision => "awaiting_decision",
            RunStatus::Running => "running",
            RunStatus::Done => "done",
            RunStatus::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Done | RunStatus::Failed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Prompt(EnhancedPrompt),
    Frame(Frame),
    Video(Video),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Prompt(_) => "prompt",
            Artifact::Frame(_) => "frame",
            Artifact::Video(_) => "video",
        }
    }

    /// Frames become one-frame videos; prompts have no video form.
    pub fn as_video(&self) -> Option<Video> {
        match self {
            Artifact::Prompt(_) => None,
            Artifact::Frame(f) => Some(Video::single(f.clone())),
            Artifact::Video(v) => Some(v.clone()),
        }
    }
}

/// Task payload. Which fields are required depends on the task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunInputs {
    pub prompt: Option<TextPrompt>,
    pub frame: Option<Frame>,
    pub videos: Vec<Video>,
}

impl RunInputs {
    pub fn prompt(text: &str) -> Result<Self, VideoError> {
        Ok(Self {
            prompt: Some(TextPrompt::new(text)?),
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: Seed64,
    pub t_frames: usize,
    /// Transition length for connect; `None` means `t_frames − 2`.
    pub m_frames: Option<usize>,
    /// Scale of the modulation jitter applied on retries.
    pub jitter_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            t_frames: DEFAULT_FRAMES,
            m_frames: None,
            jitter_sigma: DEFAULT_JITTER_SIGMA,
        }
    }
}

impl PipelineConfig {
    pub fn transition_frames(&self) -> usize {
        self.m_frames.unwrap_or(self.t_frames.saturating_sub(2)).max(1)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.t_frames == 0 {
            return Err(PipelineError::InvalidConfig("t_frames must be >= 1".into()));
        }
        if self.m_frames == Some(0) {
            return Err(PipelineError::InvalidConfig("m_frames must be >= 1".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(PipelineError::InvalidConfig("jitter_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Parameters and modulation for every agent the pipeline can call.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSuite {
    pub params: ParamSet,
    pub modulation: ModulationSet,
}

const SUITE_AGENTS: [AgentId; 4] = [
    AgentId::TextToImage,
    AgentId::ImageToImage,
    AgentId::ImageToVideo,
    AgentId::VideoConnect,
];

impl AgentSuite {
    pub fn init(seed: Seed64) -> Result<Self, AgentError> {
        let params = SUITE_AGENTS
            .iter()
            .map(|&a| Ok((a, init_params(a, seed)?)))
            .collect::<Result<ParamSet, AgentError>>()?;
        let mut modulation = init_modulation(&SUITE_AGENTS);
        for z in modulation.values_mut() {
            z.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Ok(Self { params, modulation })
    }

    /// Fresh suite with the trained chain agents swapped in.
    pub fn with_trained(state: &ChainState, seed: Seed64) -> Result<Self, AgentError> {
        let mut suite = Self::init(seed)?;
        suite.params.extend(state.params.clone());
        suite.modulation.extend(state.modulation.clone());
        Ok(suite)
    }

    fn theta(&self, a: AgentId) -> &AgentParams {
        &self.params[&a]
    }

    fn z(&self, a: AgentId) -> &ModulationEmbedding {
        &self.modulation[&a]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunEvent {
    Created,
    Executed,
    Approve,
    Retry,
    RouteToEdit,
    Abort,
    Failed,
    Done,
}

impl From<HumanDecision> for RunEvent {
    fn from(d: HumanDecision) -> Self {
        match d {
            HumanDecision::Approve => RunEvent::Approve,
            HumanDecision::Retry => RunEvent::Retry,
            HumanDecision::RouteToEdit => RunEvent::RouteToEdit,
            HumanDecision::Abort => RunEvent::Abort,
        }
    }
}

impl RunEvent {
    pub fn decision(self) -> Option<HumanDecision> {
        match self {
            RunEvent::Approve => Some(HumanDecision::Approve),
            RunEvent::Retry => Some(HumanDecision::Retry),
            RunEvent::RouteToEdit => Some(HumanDecision::RouteToEdit),
            RunEvent::Abort => Some(HumanDecision::Abort),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub stage: StageId,
    pub event: RunEvent,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub run_id: String,
    pub task: TaskKind,
    pub inputs: RunInputs,
    pub config: PipelineConfig,
    pub stage: StageId,
    pub status: RunStatus,
    pub retry_counts: BTreeMap<StageId, u32>,
    pub artifacts: BTreeMap<StageId, Artifact>,
    pub history: Vec<HistoryEvent>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn check_frame_dims(f: &Frame, what: &str) -> Result<(), PipelineError> {
    if f.dims() != (DEFAULT_HEIGHT, DEFAULT_WIDTH) {
        return Err(PipelineError::InputMismatch(format!(
            "{what} must be {DEFAULT_HEIGHT}x{DEFAULT_WIDTH}, got {}x{}",
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

fn validate_inputs(task: TaskKind, inputs: &RunInputs) -> Result<(), PipelineError> {
    let mismatch = |m: String| Err(PipelineError::InputMismatch(m));
    if task.prompt_required() && inputs.prompt.is_none() {
        return mismatch(format!("{task} requires a prompt"));
    }
    let wants_frame = task == TaskKind::ImageToVideo;
    match (&inputs.frame, wants_frame) {
        (None, true) => return mismatch(format!("{task} requires an input frame")),
        (Some(_), false) => return mismatch(format!("{task} takes no input frame")),
        (Some(f), true) => check_frame_dims(f, "input frame")?,
        (None, false) => {}
    }
    let wanted_videos = match task {
        TaskKind::ExtendVideo | TaskKind::VideoEdit => 1,
        TaskKind::ConnectVideos => 2,
        _ => 0,
    };
    if inputs.videos.len() != wanted_videos {
        return mismatch(format!(
            "{task} requires {wanted_videos} input video(s), got {}",
            inputs.videos.len()
        ));
    }
    for v in &inputs.videos {
        check_frame_dims(v.first_frame(), "input video")?;
    }
    Ok(())
}

/// Creates a run at the task's first stage, status `Running`.
pub fn create_run(
    task: TaskKind,
    inputs: RunInputs,
    config: PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    validate_inputs(task, &inputs)?;
    let mut run = PipelineRun {
        run_id: uuid::Uuid::new_v4().to_string(),
        task,
        inputs,
        config,
        stage: task.first_stage(),
        status: RunStatus::Running,
        retry_counts: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        history: Vec::new(),
    };
    run.log(RunEvent::Created, task.name().to_string());
    Ok(run)
}

impl PipelineRun {
    fn log(&mut self, event: RunEvent, detail: String) {
        self.history.push(HistoryEvent {
            seq: self.history.len() as u64,
            timestamp: now_ms(),
            stage: self.stage,
            event,
            detail,
        });
    }

    pub fn retries(&self, stage: StageId) -> u32 {
        self.retry_counts.get(&stage).copied().unwrap_or(0)
    }

    /// Seed of the current candidate at `stage`; changes with every retry.
    pub fn stage_seed(&self, stage: StageId) -> Seed64 {
        derive_seed(
            self.config.seed,
            &format!("{}#{}", stage.name(), self.retries(stage)),
        )
    }

    /// The final video once the run is done.
    pub fn final_video(&self) -> Option<&Video> {
        if self.status != RunStatus::Done {
            return None;
        }
        let stage = match self.task {
            TaskKind::ConnectVideos => StageId::Connect,
            _ => StageId::GenerateVideo,
        };
        match self.artifacts.get(&stage) {
            Some(Artifact::Video(v)) => Some(v),
            _ => None,
        }
    }

    /// Decisions in the order they were applied.
    pub fn decisions(&self) -> Vec<(StageId, HumanDecision)> {
        self.history
            .iter()
            .filter_map(|e| e.event.decision().map(|d| (e.stage, d)))
            .collect()
    }

    fn text(&self) -> String {
        if let Some(Artifact::Prompt(p)) = self.artifacts.get(&StageId::Enhance) {
            return p.text.clone();
        }
        self.inputs
            .prompt
            .as_ref()
            .map(|p| p.text().to_string())
            .unwrap_or_else(|| DEFAULT_TASK_TEXT.to_string())
    }

    fn embedding(&self, suite: &AgentSuite, agent: AgentId) -> Result<AugmentedEmbedding, AgentError> {
        let e = embed_text(agent, &self.text());
        let mut z = suite.z(agent).values.clone();
        if self.retries(self.stage) > 0 && self.config.jitter_sigma > 0.0 {
            let noise = rng_stream(self.stage_seed(self.stage), EMBED_DIM);
            for (zi, n) in z.iter_mut().zip(noise) {
                *zi += n * self.config.jitter_sigma;
            }
        }
        AugmentedEmbedding::new(e.values(), &z)
    }

    fn frame_artifact(&self, stage: StageId) -> Result<&Frame, PipelineError> {
        match self.artifacts.get(&stage) {
            Some(Artifact::Frame(f)) => Ok(f),
            _ => Err(PipelineError::MissingArtifact(self.stage)),
        }
    }

    /// Frame the video stage starts from.
    fn seed_frame(&self) -> Result<Frame, PipelineError> {
        match self.task {
            TaskKind::ImageToVideo => self
                .inputs
                .frame
                .clone()
                .ok_or(PipelineError::MissingArtifact(self.stage)),
            TaskKind::ExtendVideo => Ok(self.inputs.videos[0].last_frame().clone()),
            TaskKind::VideoEdit => self.frame_artifact(StageId::EditFrame).cloned(),
            _ => self
                .frame_artifact(StageId::EditFrame)
                .or_else(|_| self.frame_artifact(StageId::FirstFrame))
                .cloned(),
        }
    }

    fn produce(&self, suite: &AgentSuite) -> Result<Artifact, PipelineError> {
        let stage = self.stage;
        let agent_err = |e: AgentError| PipelineError::AgentFailure {
            stage,
            message: e.to_string(),
        };
        let toy_err = |e: ToyError| PipelineError::AgentFailure {
            stage,
            message: e.to_string(),
        };
        let t = self.config.t_frames;
        match stage {
            StageId::Enhance => {
                let prompt = self
                    .inputs
                    .prompt
                    .as_ref()
                    .ok_or(PipelineError::MissingArtifact(stage))?;
                let mut enhanced = enhance_prompt(prompt).map_err(toy_err)?;
                if self.task == TaskKind::SimulateDigitalWorld {
                    enhanced.text.push_str(DIGITAL_WORLD_SUFFIX);
                }
                Ok(Artifact::Prompt(enhanced))
            }
            StageId::FirstFrame => {
                let a = AgentId::TextToImage;
                let e = self.embedding(suite, a).map_err(agent_err)?;
                Ok(Artifact::Frame(t2i_forward(suite.theta(a), &e).map_err(agent_err)?))
            }
            StageId::EditFrame => {
                let a = AgentId::ImageToImage;
                let source = match self.task {
                    TaskKind::VideoEdit => self.inputs.videos[0].first_frame().clone(),
                    _ => self.frame_artifact(StageId::FirstFrame)?.clone(),
                };
                let e = self.embedding(suite, a).map_err(agent_err)?;
                Ok(Artifact::Frame(
                    i2i_forward(suite.theta(a), &source, &e).map_err(agent_err)?,
                ))
            }
            StageId::GenerateVideo => {
                let a = AgentId::ImageToVideo;
                let f0 = self.seed_frame()?;
                let e = self.embedding(suite, a).map_err(agent_err)?;
                Ok(Artifact::Video(
                    i2v_forward(suite.theta(a), &f0, &e, t).map_err(agent_err)?,
                ))
            }
            StageId::Connect => {
                let a = AgentId::VideoConnect;
                let (v1, v2) = (&self.inputs.videos[0], &self.inputs.videos[1]);
                let e = self.embedding(suite, a).map_err(agent_err)?;
                let transition = connect_forward(
                    suite.theta(a),
                    v1.last_frame(),
                    v2.first_frame(),
                    &e,
                    self.config.transition_frames(),
                )
                .map_err(agent_err)?;
                let joined = v1
                    .concat(&transition)
                    .and_then(|v| v.concat(v2))
                    .map_err(|e| agent_err(e.into()))?;
                Ok(Artifact::Video(joined))
            }
            StageId::Done => Err(PipelineError::NotRunning(self.status)),
        }
    }

    /// Produces the current stage's artifact and stops at its checkpoint.
    pub fn execute_stage(&mut self, suite: &AgentSuite) -> Result<(), PipelineError> {
        if self.status != RunStatus::Running {
            return Err(PipelineError::NotRunning(self.status));
        }
        match self.produce(suite) {
            Ok(artifact) => {
                let detail = format!(
                    "{} seed={:#018x} retry={}",
                    artifact.kind(),
                    self.stage_seed(self.stage),
                    self.retries(self.stage)
                );
                self.artifacts.insert(self.stage, artifact);
                self.status = RunStatus::AwaitingDecision;
                self.log(RunEvent::Executed, detail);
                Ok(())
            }
            Err(e) => {
                self.status = RunStatus::Failed;
                self.log(RunEvent::Failed, e.to_string());
                Err(e)
            }
        }
    }

    pub fn apply_decision(
        &mut self,
        stage: StageId,
        decision: HumanDecision,
    ) -> Result<(), PipelineError> {
        if self.status != RunStatus::AwaitingDecision {
            return Err(PipelineError::NotAwaitingDecision(self.status));
        }
        if stage != self.stage {
            return Err(PipelineError::WrongStage {
                current: self.stage,
                requested: stage,
            });
        }
        match decision {
            HumanDecision::Approve => {
                self.log(decision.into(), String::new());
                self.stage = self.task.successor(stage);
                if self.stage == StageId::Done {
                    self.status = RunStatus::Done;
                    self.log(RunEvent::Done, String::new());
                } else {
                    self.status = RunStatus::Running;
                }
            }
            HumanDecision::Retry => {
                if self.retries(stage) >= MAX_RETRIES {
                    self.status = RunStatus::Failed;
                    self.log(RunEvent::Failed, format!("retry limit {MAX_RETRIES} reached"));
                    return Err(PipelineError::RetryExhausted(stage));
                }
                *self.retry_counts.entry(stage).or_insert(0) += 1;
                self.log(decision.into(), format!("retry={}", self.retries(stage)));
                self.status = RunStatus::Running;
            }
            HumanDecision::RouteToEdit => {
                if stage != StageId::FirstFrame {
                    return Err(PipelineError::IllegalDecision { stage, decision });
                }
                self.log(decision.into(), String::new());
                self.stage = StageId::EditFrame;
                self.status = RunStatus::Running;
            }
            HumanDecision::Abort => {
                self.log(decision.into(), String::new());
                self.status = RunStatus::Failed;
            }
        }
        Ok(())
    }

    /// Executes if running, so the run ends at a checkpoint or a terminal state.
    pub fn advance(&mut self, suite: &AgentSuite) -> Result<(), PipelineError> {
        if self.status == RunStatus::Running {
            self.execute_stage(suite)?;
        }
        Ok(())
    }

    /// Headless mode: approves every checkpoint until the run ends.
    pub fn auto_run(&mut self, suite: &AgentSuite) -> Result<(), PipelineError> {
        loop {
            match self.status {
                RunStatus::Running => self.execute_stage(suite)?,
                RunStatus::AwaitingDecision => self.apply_decision(self.stage, HumanDecision::Approve)?,
                RunStatus::Done | RunStatus::Failed => return Ok(()),
            }
        }
    }

    /// Re-runs the logged decisions on a fresh run with the same inputs and seeds.
    pub fn replay(&self, suite: &AgentSuite) -> Result<PipelineRun, PipelineError> {
        let mut fresh = create_run(self.task, self.inputs.clone(), self.config)?;
        fresh.run_id = self.run_id.clone();
        for (stage, decision) in self.decisions() {
            fresh.advance(suite)?;
            fresh.apply_decision(stage, decision)?;
        }
        if self.status != RunStatus::Running {
            fresh.advance(suite)?;
        }
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn suite() -> AgentSuite {
        AgentSuite::init(3).unwrap()
    }

    fn t2v() -> PipelineRun {
        create_run(
            TaskKind::TextToVideo,
            RunInputs::prompt("blob").unwrap(),
            PipelineConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn stage_tables() {
        use StageId::*;
        let path = |task: TaskKind| {
            let mut s = task.first_stage();
            let mut out = vec![s];
            while s != Done {
                s = task.successor(s);
                out.push(s);
            }
            out
        };
        assert_eq!(path(TaskKind::TextToVideo), [Enhance, FirstFrame, GenerateVideo, Done]);
        assert_eq!(path(TaskKind::ImageToVideo), [Enhance, GenerateVideo, Done]);
        assert_eq!(path(TaskKind::ExtendVideo), [GenerateVideo, Done]);
        assert_eq!(path(TaskKind::VideoEdit), [EditFrame, GenerateVideo, Done]);
        assert_eq!(path(TaskKind::ConnectVideos), [Connect, Done]);
    }

    #[test]
    fn enhance_checkpoint() {
        let mut run = t2v();
        assert_eq!((run.stage, run.status), (StageId::Enhance, RunStatus::Running));
        run.execute_stage(&suite()).unwrap();
        assert_eq!(run.status, RunStatus::AwaitingDecision);
        assert!(matches!(run.artifacts[&StageId::Enhance], Artifact::Prompt(_)));
    }

    #[test]
    fn retry_cap() {
        let s = suite();
        let mut run = t2v();
        run.execute_stage(&s).unwrap();
        for _ in 0..3 {
            run.apply_decision(StageId::Enhance, HumanDecision::Retry).unwrap();
            run.execute_stage(&s).unwrap();
        }
        assert_eq!(
            run.apply_decision(StageId::Enhance, HumanDecision::Retry),
            Err(PipelineError::RetryExhausted(StageId::Enhance))
        );
        assert_eq!(run.status, RunStatus::Failed);
        assert_eq!(run.retries(StageId::Enhance), 3);
    }

    #[test]
    fn route_to_edit_only_at_first_frame() {
        let s = suite();
        let mut run = t2v();
        run.execute_stage(&s).unwrap();
        assert!(matches!(
            run.apply_decision(StageId::Enhance, HumanDecision::RouteToEdit),
            Err(PipelineError::IllegalDecision { .. })
        ));
        run.apply_decision(StageId::Enhance, HumanDecision::Approve).unwrap();
        run.execute_stage(&s).unwrap();
        run.apply_decision(StageId::FirstFrame, HumanDecision::RouteToEdit).unwrap();
        assert_eq!(run.stage, StageId::EditFrame);
        run.auto_run(&s).unwrap();
        assert_eq!(run.status, RunStatus::Done);
        assert!(run.artifacts.contains_key(&StageId::EditFrame));
    }

    #[test]
    fn retry_changes_candidate() {
        let s = suite();
        let mut run = t2v();
        run.auto_run(&s).unwrap();
        let first = run.final_video().unwrap().clone();
        let mut retried = t2v();
        retried.execute_stage(&s).unwrap();
        retried.apply_decision(StageId::Enhance, HumanDecision::Approve).unwrap();
        retried.execute_stage(&s).unwrap();
        retried.apply_decision(StageId::FirstFrame, HumanDecision::Retry).unwrap();
        retried.auto_run(&s).unwrap();
        assert_ne!(retried.final_video().unwrap(), &first);
    }

    #[test]
    fn input_mismatch() {
        let cfg = PipelineConfig::default();
        let v = Video::single(Frame::zeros(8, 8));
        let one = RunInputs {
            videos: vec![v],
            ..RunInputs::default()
        };
        assert!(matches!(
            create_run(TaskKind::ConnectVideos, one, cfg),
            Err(PipelineError::InputMismatch(_))
        ));
        assert!(matches!(
            create_run(TaskKind::TextToVideo, RunInputs::default(), cfg),
            Err(PipelineError::InputMismatch(_))
        ));
    }

    #[test]
    fn not_awaiting_after_done() {
        let mut run = t2v();
        run.auto_run(&suite()).unwrap();
        assert_eq!(
            run.apply_decision(StageId::Done, HumanDecision::Approve),
            Err(PipelineError::NotAwaitingDecision(RunStatus::Done))
        );
    }
}
