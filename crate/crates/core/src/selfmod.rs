//! Self-modulated multi-agent fine-tuning.
//!
//! Each trainable agent `i` in the chain owns parameters `θ_i` and a modulation
//! embedding `z_i` (initialised from the agent's embedding of the `[Mod]` token).
//! The agent sees `[e_i ; z_i]` where `e_i` embeds the enhanced prompt. A single
//! MSE loss on the last agent's video is backpropagated through the whole chain,
//! and every step updates, per agent and in this order:
//!
//! 1. `z_i ← z_i − η_z · ∂L/∂z_i`
//! 2. `α_i = ‖z_i‖₂ / n` from the *updated* `z_i`
//! 3. `θ_i ← θ_i − α_i · η_θ · ∂L/∂θ_i`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    i2i_backward, i2i_forward, i2v_backward, i2v_forward, init_params, t2i_backward, t2i_forward,
    AgentError, AgentId, AgentParams, AugmentedEmbedding,
};
use crate::toyworld::{
    embed_text, enhance_prompt, oracle_render, synthesize_prompts, OracleParams, Seed64,
    SplitMix64, ToyError, MOD_TOKEN,
};
use crate::video::{EnhancedPrompt, Frame, Video, VideoError, DEFAULT_FRAMES, EMBED_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelfModError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("n must be at least 1")]
    InvalidN,
    #[error("chain cache is incomplete: {0}")]
    CacheIncomplete(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing state for {0}")]
    MissingAgent(AgentId),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationEmbedding {
    pub agent: AgentId,
    pub values: Vec<f64>,
}

impl ModulationEmbedding {
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub type ParamSet = BTreeMap<AgentId, AgentParams>;
pub type ModulationSet = BTreeMap<AgentId, ModulationEmbedding>;

/// `z_i = E_i("[Mod]")` for every agent in the chain.
pub fn init_modulation(chain: &[AgentId]) -> ModulationSet {
    chain
        .iter()
        .map(|&a| {
            (
                a,
                ModulationEmbedding {
                    agent: a,
                    values: embed_text(a, MOD_TOKEN).0,
                },
            )
        })
        .collect()
}

/// `α_i = ‖z_i‖₂ / n`
pub fn modulation_factor(z: &ModulationEmbedding, n: usize) -> Result<f64, SelfModError> {
    if n == 0 {
        return Err(SelfModError::InvalidN);
    }
    Ok(z.l2_norm() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationMode {
    /// Learned `z_i`; `α_i` follows its norm.
    #[default]
    SelfModulated,
    /// Ablation: `z_i` frozen and `α_i = 1/n`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub theta: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub eta_theta: f64,
    pub eta_z: f64,
    /// Per-agent overrides of `eta_theta` / `eta_z`.
    pub per_agent_rates: BTreeMap<AgentId, LearningRates>,
    pub t_frames: usize,
    pub chain: Vec<AgentId>,
    pub seed: Seed64,
    pub modulation_mode: ModulationMode,
    /// Upper bound on `α_i`; `None` leaves it unbounded.
    pub alpha_clamp: Option<f64>,
    pub shuffle: bool,
    /// Round `θ` and `z` to `f32` after every update so persisted checkpoints
    /// reproduce the in-memory state exactly.
    pub f32_state: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 50,
            eta_theta: 0.05,
            eta_z: 0.01,
            per_agent_rates: BTreeMap::new(),
            t_frames: DEFAULT_FRAMES,
            chain: vec![AgentId::TextToImage, AgentId::ImageToVideo],
            seed: 0,
            modulation_mode: ModulationMode::SelfModulated,
            alpha_clamp: None,
            shuffle: false,
            f32_state: true,
        }
    }
}

impl TrainConfig {
    pub fn rates(&self, agent: AgentId) -> LearningRates {
        self.per_agent_rates
            .get(&agent)
            .copied()
            .unwrap_or(LearningRates {
                theta: self.eta_theta,
                z: self.eta_z,
            })
    }

    pub fn validate(&self) -> Result<(), SelfModError> {
        validate_chain(&self.chain)?;
        if self.batch_size == 0 {
            return Err(SelfModError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(SelfModError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.t_frames == 0 {
            return Err(SelfModError::InvalidConfig("t_frames must be >= 1".into()));
        }
        for a in &self.chain {
            let r = self.rates(*a);
            if !(r.theta > 0.0 && r.theta.is_finite() && r.z > 0.0 && r.z.is_finite()) {
                return Err(SelfModError::InvalidConfig(format!(
                    "learning rates for {a} must be positive"
                )));
            }
        }
        if let Some(c) = self.alpha_clamp {
            if c.is_nan() || c <= 0.0 {
                return Err(SelfModError::InvalidConfig("alpha_clamp must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Chains start at text-to-image, may pass through image-to-image edits, and
/// end at image-to-video.
pub fn validate_chain(chain: &[AgentId]) -> Result<(), SelfModError> {
    let bad = |m: &str| Err(SelfModError::InvalidChain(m.to_string()));
    match chain {
        [] => bad("chain is empty"),
        [first, ..] if *first != AgentId::TextToImage => {
            bad("the first agent must need no input artifact (text_to_image)")
        }
        [.., last] if *last != AgentId::ImageToVideo => bad("the last agent must produce a video"),
        [_, middle @ .., _] if middle.iter().any(|a| *a != AgentId::ImageToImage) => {
            bad("only image_to_image may sit between the first and last agents")
        }
        [_] => bad("chain needs at least two agents"),
        [_, middle @ .., _] if middle.len() > 1 => bad("an agent may appear only once"),
        _ => Ok(()),
    }
}

/// Trainable state of a chain: `θ_i` and `z_i` for each agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ParamSet,
    pub modulation: ModulationSet,
}

impl ChainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self, SelfModError> {
        validate_chain(&cfg.chain)?;
        let params = cfg
            .chain
            .iter()
            .map(|&a| Ok((a, init_params(a, cfg.seed)?)))
            .collect::<Result<ParamSet, SelfModError>>()?;
        let mut modulation = init_modulation(&cfg.chain);
        if cfg.f32_state {
            for z in modulation.values_mut() {
                quantize(&mut z.values);
            }
        }
        Ok(Self { params, modulation })
    }

    fn params_of(&self, a: AgentId) -> Result<&AgentParams, SelfModError> {
        self.params.get(&a).ok_or(SelfModError::MissingAgent(a))
    }

    fn z_of(&self, a: AgentId) -> Result<&ModulationEmbedding, SelfModError> {
        self.modulation.get(&a).ok_or(SelfModError::MissingAgent(a))
    }
}

fn quantize(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub prompt: EnhancedPrompt,
    pub target: Video,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainOutput {
    Frame(Frame),
    Video(Video),
}

impl ChainOutput {
    pub fn as_frame(&self) -> Option<&Frame> {
        match self {
            ChainOutput::Frame(f) => Some(f),
            ChainOutput::Video(_) => None,
        }
    }

    pub fn as_video(&self) -> Option<&Video> {
        match self {
            ChainOutput::Video(v) => Some(v),
            ChainOutput::Frame(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub agent: AgentId,
    pub embedding: AugmentedEmbedding,
    pub input: Option<Frame>,
    pub output: ChainOutput,
}

/// Everything the reverse pass needs, one entry per agent in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCache {
    pub entries: Vec<CacheEntry>,
}

impl ChainCache {
    pub fn final_video(&self) -> Option<&Video> {
        self.entries.last().and_then(|e| e.output.as_video())
    }
}

/// Runs `O_i = M_i(O_{i−1}, [e_i ; z_i])` along the chain.
pub fn forward_chain(
    state: &ChainState,
    prompt: &EnhancedPrompt,
    cfg: &TrainConfig,
) -> Result<(Vec<ChainOutput>, ChainCache), SelfModError> {
    forward_chain_with(state, &state.modulation, prompt, &cfg.chain, cfg.t_frames)
}

/// Like [`forward_chain`] but with an explicit modulation set (used for
/// candidate jitter without touching the persisted `z`).
pub fn forward_chain_with(
    state: &ChainState,
    modulation: &ModulationSet,
    prompt: &EnhancedPrompt,
    chain: &[AgentId],
    t_frames: usize,
) -> Result<(Vec<ChainOutput>, ChainCache), SelfModError> {
    validate_chain(chain)?;
    let mut entries: Vec<CacheEntry> = Vec::with_capacity(chain.len());
    for &agent in chain {
        let theta = state.params_of(agent)?;
        let z = modulation.get(&agent).ok_or(SelfModError::MissingAgent(agent))?;
        let e = embed_text(agent, &prompt.text);
        let aug = AugmentedEmbedding::new(e.values(), &z.values)?;
        let input = entries
            .last()
            .and_then(|prev| prev.output.as_frame())
            .cloned();
        let output = match agent {
            AgentId::TextToImage => ChainOutput::Frame(t2i_forward(theta, &aug)?),
            AgentId::ImageToImage => {
                ChainOutput::Frame(i2i_forward(theta, input.as_ref().expect("validated"), &aug)?)
            }
            AgentId::ImageToVideo => ChainOutput::Video(i2v_forward(
                theta,
                input.as_ref().expect("validated"),
                &aug,
                t_frames,
            )?),
            other => return Err(SelfModError::InvalidChain(format!("{other} cannot be chained"))),
        };
        entries.push(CacheEntry {
            agent,
            embedding: aug,
            input,
            output,
        });
    }
    let outputs = entries.iter().map(|e| e.output.clone()).collect();
    Ok((outputs, ChainCache { entries }))
}

/// Mean squared error over every `T·H·W` entry.
pub fn loss_mse(output: &Video, target: &Video) -> Result<f64, SelfModError> {
    output.check_same_shape(target)?;
    let n = (output.len() * output.height() * output.width()) as f64;
    let sum: f64 = output
        .flat()
        .zip(target.flat())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_theta: BTreeMap<AgentId, AgentParams>,
    pub d_z: BTreeMap<AgentId, Vec<f64>>,
}

impl GradientSet {
    pub fn zeros(chain: &[AgentId]) -> Result<Self, SelfModError> {
        Ok(Self {
            d_theta: chain
                .iter()
                .map(|&a| Ok((a, AgentParams::zeros(a)?)))
                .collect::<Result<_, SelfModError>>()?,
            d_z: chain.iter().map(|&a| (a, vec![0.0; EMBED_DIM])).collect(),
        })
    }

    /// `self += scale · other`
    fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, g) in &other.d_theta {
            if let Some(acc) = self.d_theta.get_mut(a) {
                for (x, y) in acc.values_mut().zip(g.values()) {
                    *x += scale * y;
                }
            }
        }
        for (a, g) in &other.d_z {
            if let Some(acc) = self.d_z.get_mut(a) {
                for (x, y) in acc.iter_mut().zip(g) {
                    *x += scale * y;
                }
            }
        }
    }
}

/// Exact gradient of `loss_mse(O_n, target)` w.r.t. every `θ_i` and `z_i`.
/// The text half of each `∂L/∂[e_i ; z_i]` is dropped: embeddings are frozen.
pub fn backward_chain(
    state: &ChainState,
    cache: &ChainCache,
    target: &Video,
) -> Result<GradientSet, SelfModError> {
    let chain: Vec<AgentId> = cache.entries.iter().map(|e| e.agent).collect();
    validate_chain(&chain).map_err(|e| SelfModError::CacheIncomplete(e.to_string()))?;
    let out = cache
        .final_video()
        .ok_or_else(|| SelfModError::CacheIncomplete("no final video".into()))?;
    out.check_same_shape(target)?;
    let n = (out.len() * out.height() * out.width()) as f64;
    let mut grads = GradientSet::zeros(&chain)?;

    let mut video_upstream: Vec<Vec<f64>> = out
        .frames()
        .iter()
        .zip(target.frames())
        .map(|(o, t)| {
            o.pixels()
                .iter()
                .zip(t.pixels())
                .map(|(a, b)| 2.0 * (a - b) / n)
                .collect()
        })
        .collect();
    let mut frame_upstream: Vec<f64> = Vec::new();

    for entry in cache.entries.iter().rev() {
        let theta = state.params_of(entry.agent)?;
        let missing = || SelfModError::CacheIncomplete(format!("{} lacks its input", entry.agent));
        let vjp = match (&entry.output, entry.agent) {
            (ChainOutput::Video(v), AgentId::ImageToVideo) => {
                i2v_backward(theta, &entry.embedding, v, &std::mem::take(&mut video_upstream))?
            }
            (ChainOutput::Frame(f), AgentId::ImageToImage) => i2i_backward(
                theta,
                entry.input.as_ref().ok_or_else(missing)?,
                &entry.embedding,
                f,
                &frame_upstream,
            )?,
            (ChainOutput::Frame(f), AgentId::TextToImage) => {
                t2i_backward(theta, &entry.embedding, f, &frame_upstream)?
            }
            (_, a) => {
                return Err(SelfModError::CacheIncomplete(format!(
                    "output kind does not match {a}"
                )))
            }
        };
        frame_upstream = vjp.d_frames.into_iter().next().unwrap_or_default();
        grads.d_theta.insert(entry.agent, vjp.d_theta);
        grads
            .d_z
            .insert(entry.agent, vjp.d_embedding[EMBED_DIM..].to_vec());
    }
    Ok(grads)
}

/// Batch-mean loss and gradients. Per-sample gradients are reduced in index
/// order so results are bit-stable.
pub fn batch_gradients(
    state: &ChainState,
    batch: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(f64, GradientSet), SelfModError> {
    if batch.is_empty() {
        return Err(SelfModError::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = GradientSet::zeros(&cfg.chain)?;
    let mut loss = 0.0;
    for sample in batch {
        let (_, cache) = forward_chain(state, &sample.prompt, cfg)?;
        loss += loss_mse(cache.final_video().expect("validated chain"), &sample.target)?;
        let g = backward_chain(state, &cache, &sample.target)?;
        total.add_scaled(&g, scale);
    }
    Ok((loss * scale, total))
}

/// One update in the normative order (z, then α from the new z, then θ).
/// Returns the `α_i` that scaled each agent's parameter step.
pub fn sgd_step(
    state: &mut ChainState,
    grads: &GradientSet,
    cfg: &TrainConfig,
) -> Result<BTreeMap<AgentId, f64>, SelfModError> {
    let n = cfg.chain.len();
    if n == 0 {
        return Err(SelfModError::InvalidN);
    }
    let mut alphas = BTreeMap::new();
    for &agent in &cfg.chain {
        let d_theta = grads
            .d_theta
            .get(&agent)
            .ok_or_else(|| SelfModError::ShapeMismatch(format!("no θ gradient for {agent}")))?;
        let d_z = grads
            .d_z
            .get(&agent)
            .ok_or_else(|| SelfModError::ShapeMismatch(format!("no z gradient for {agent}")))?;
        let rates = cfg.rates(agent);

        let z = state
            .modulation
            .get_mut(&agent)
            .ok_or(SelfModError::MissingAgent(agent))?;
        if d_z.len() != z.values.len() {
            return Err(SelfModError::ShapeMismatch(format!("z gradient for {agent}")));
        }
        let alpha = match cfg.modulation_mode {
            ModulationMode::SelfModulated => {
                for (v, g) in z.values.iter_mut().zip(d_z) {
                    *v -= rates.z * g;
                }
                if cfg.f32_state {
                    quantize(&mut z.values);
                }
                let a = modulation_factor(z, n)?;
                cfg.alpha_clamp.map_or(a, |c| a.min(c))
            }
            ModulationMode::Fixed => 1.0 / n as f64,
        };

        let theta = state
            .params
            .get_mut(&agent)
            .ok_or(SelfModError::MissingAgent(agent))?;
        if !d_theta.has_layout_of(agent) || !theta.has_layout_of(agent) {
            return Err(SelfModError::ShapeMismatch(format!("θ gradient for {agent}")));
        }
        let step = alpha * rates.theta;
        for (v, g) in theta.values_mut().zip(d_theta.values()) {
            *v -= step * g;
            if cfg.f32_state {
                *v = *v as f32 as f64;
            }
        }
        alphas.insert(agent, alpha);
    }
    Ok(alphas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub alpha: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `α` trajectory of one agent, one value per batch.
    pub fn alpha_series(&self, agent: AgentId) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.alpha.get(agent.name()).copied())
            .collect()
    }
}

/// Mean per-sample loss over a dataset at the current state.
pub fn evaluate_loss(
    state: &ChainState,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<f64, SelfModError> {
    if dataset.is_empty() {
        return Err(SelfModError::EmptyDataset);
    }
    let mut sum = 0.0;
    for s in dataset {
        let (_, cache) = forward_chain(state, &s.prompt, cfg)?;
        sum += loss_mse(cache.final_video().expect("validated chain"), &s.target)?;
    }
    Ok(sum / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: ChainState,
    pub history: TrainHistory,
}

/// Trains a freshly initialised chain for `cfg.epochs` epochs.
pub fn train(dataset: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome, SelfModError> {
    let mut state = ChainState::init(cfg)?;
    let history = train_from(&mut state, dataset, cfg, 1, &mut |_| {})?;
    Ok(TrainOutcome { state, history })
}

/// Continues training `state` in place. `first_epoch` only labels the history
/// and seeds the optional shuffle, so a resumed run matches an uninterrupted one.
pub fn train_from(
    state: &mut ChainState,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
    first_epoch: usize,
    observer: &mut dyn FnMut(&HistoryRecord),
) -> Result<TrainHistory, SelfModError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(SelfModError::EmptyDataset);
    }
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in first_epoch..first_epoch + cfg.epochs {
        if cfg.shuffle {
            order = (0..dataset.len()).collect();
            let mut rng = SplitMix64::new(cfg.seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            for i in (1..order.len()).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
        }
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainSample> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grads) = batch_gradients(state, &batch, cfg)?;
            let alphas = sgd_step(state, &grads, cfg)?;
            let record = HistoryRecord {
                epoch,
                batch: b + 1,
                loss,
                alpha: alphas
                    .into_iter()
                    .map(|(a, v)| (a.name().to_string(), v))
                    .collect(),
            };
            observer(&record);
            history.records.push(record);
        }
    }
    Ok(history)
}

/// Oracle-rendered training pairs: synthesized prompts, enhanced once, with
/// targets from the hidden renderer.
pub fn oracle_dataset(
    seed: Seed64,
    count: usize,
    t_frames: usize,
    digital_every: Option<usize>,
) -> Result<Vec<TrainSample>, SelfModError> {
    synthesize_prompts(seed, count)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let prompt = enhance_prompt(p)?;
            let digital_style = digital_every.is_some_and(|k| k > 0 && i % k == k - 1);
            let target = oracle_render(
                &OracleParams {
                    prompt_vec: prompt.vector,
                    digital_style,
                },
                t_frames,
            )?;
            Ok(TrainSample { prompt, target })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter or modulation coordinate with the worst error.
    pub worst: String,
    pub checked: usize,
}

/// Compares [`backward_chain`] against central differences over every
/// parameter and modulation coordinate on one seeded oracle sample.
pub fn gradient_check(cfg: &TrainConfig, epsilon: f64) -> Result<GradCheckReport, SelfModError> {
    let state = ChainState::init(cfg)?;
    let sample = oracle_dataset(cfg.seed, 1, cfg.t_frames, None)?.remove(0);
    gradient_check_state(&state, &sample, cfg, epsilon)
}

/// Relative error with the `1e-8` denominator floor used throughout.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn gradient_check_state(
    state: &ChainState,
    sample: &TrainSample,
    cfg: &TrainConfig,
    epsilon: f64,
) -> Result<GradCheckReport, SelfModError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(SelfModError::InvalidConfig("epsilon must be positive".into()));
    }
    let (_, cache) = forward_chain(state, &sample.prompt, cfg)?;
    let analytic = backward_chain(state, &cache, &sample.target)?;

    let final_video = |s: &ChainState| -> Result<Video, SelfModError> {
        let (_, c) = forward_chain(s, &sample.prompt, cfg)?;
        Ok(c.final_video().cloned().expect("validated chain"))
    };
    // L(+) − L(−) summed as Σ (o₊ − o₋)(o₊ + o₋ − 2t) / N avoids cancellation.
    let central = |plus: &Video, minus: &Video| -> f64 {
        let n = (plus.len() * plus.height() * plus.width()) as f64;
        let diff: f64 = plus
            .flat()
            .zip(minus.flat())
            .zip(sample.target.flat())
            .map(|((p, m), t)| (p - m) * (p + m - 2.0 * t))
            .sum();
        diff / n / (2.0 * epsilon)
    };

    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    let mut probe = state.clone();
    for &agent in &cfg.chain {
        let layout = state.params_of(agent)?.tensors.clone();
        for (ti, tensor) in layout.iter().enumerate() {
            for k in 0..tensor.data.len() {
                let orig = tensor.data[k];
                probe.params.get_mut(&agent).expect("present").tensors[ti].data[k] = orig + epsilon;
                let plus = final_video(&probe)?;
                probe.params.get_mut(&agent).expect("present").tensors[ti].data[k] = orig - epsilon;
                let minus = final_video(&probe)?;
                probe.params.get_mut(&agent).expect("present").tensors[ti].data[k] = orig;
                let a = analytic.d_theta[&agent].tensors[ti].data[k];
                let err = relative_error(a, central(&plus, &minus));
                checked += 1;
                if err > worst.0 || !err.is_finite() {
                    worst = (err, format!("{}.{}[{k}]", agent.name(), tensor.name));
                }
            }
        }
        for k in 0..state.z_of(agent)?.values.len() {
            let orig = state.modulation[&agent].values[k];
            probe.modulation.get_mut(&agent).expect("present").values[k] = orig + epsilon;
            let plus = final_video(&probe)?;
            probe.modulation.get_mut(&agent).expect("present").values[k] = orig - epsilon;
            let minus = final_video(&probe)?;
            probe.modulation.get_mut(&agent).expect("present").values[k] = orig;
            let err = relative_error(analytic.d_z[&agent][k], central(&plus, &minus));
            checked += 1;
            if err > worst.0 || !err.is_finite() {
                worst = (err, format!("{}.z[{k}]", agent.name()));
            }
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst: worst.1,
        checked,
    })
}
