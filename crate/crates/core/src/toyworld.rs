//! The synthetic universe everything else runs in.
//!
//! Two primitives are wire-level contracts and must stay bit-exact across
//! reimplementations: FNV-1a 64 ([`hash_text`]) and splitmix64 ([`rng_stream`]).
//! Everything else here (embedders, prompt grammar, the hidden blob renderer)
//! is a pure function of those two.

use std::collections::HashSet;

use thiserror::Error;

use crate::agents::AgentId;
use crate::video::{
    EnhancedPrompt, Embedding, Frame, PromptVec, TextPrompt, Video, VideoError, DEFAULT_HEIGHT,
    DEFAULT_WIDTH, EMBED_DIM, PROMPT_DIM,
};

pub const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Suffix appended by the default prompt enhancer.
pub const ENHANCE_SUFFIX: &str = " | enhanced: subject, motion, style";
pub const MOD_TOKEN: &str = "[Mod]";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("frame count must be at least 1, got {0}")]
    InvalidLength(usize),
    #[error("cannot synthesize {0} distinct prompts (allowed 1..={max})", max = MAX_SYNTH_PROMPTS)]
    InvalidCount(usize),
    #[error(transparent)]
    Video(#[from] VideoError),
}

pub type Seed64 = u64;

/// FNV-1a, 64-bit, over the UTF-8 bytes of `s`.
pub fn hash_text(s: &str) -> Seed64 {
    s.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: Seed64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)` from the top 53 bits.
    pub fn next_signed(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

pub fn rng_stream(seed: Seed64, count: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..count).map(|_| rng.next_signed()).collect()
}

/// Stand-in for the text encoder of agent `agent`.
pub fn embed_text(agent: AgentId, text: &str) -> Embedding {
    let seed = hash_text(text) ^ (agent.index() as u64).wrapping_mul(GOLDEN_GAMMA);
    Embedding(rng_stream(seed, EMBED_DIM))
}

pub fn prompt_vector(text: &str) -> Result<PromptVec, ToyError> {
    if text.trim().is_empty() {
        return Err(ToyError::EmptyPrompt);
    }
    let mut out = [0.0; PROMPT_DIM];
    out.copy_from_slice(&rng_stream(hash_text(text), PROMPT_DIM));
    Ok(PromptVec(out))
}

/// Default prompt enhancer. The vector stays anchored to the original text, so
/// enhancing must happen exactly once per prompt.
pub fn enhance_prompt(p: &TextPrompt) -> Result<EnhancedPrompt, ToyError> {
    Ok(EnhancedPrompt {
        text: format!("{}{}", p.text(), ENHANCE_SUFFIX),
        vector: prompt_vector(p.text())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub prompt_vec: PromptVec,
    pub digital_style: bool,
}

/// Geometry of the blob a prompt vector describes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobGeometry {
    pub cx0: f64,
    pub cy0: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
    pub amplitude: f64,
}

impl BlobGeometry {
    pub fn from_prompt(p: &PromptVec, height: usize, width: usize) -> Self {
        let p = p.values();
        Self {
            cx0: (p[0] + 1.0) / 2.0 * (width as f64 - 1.0),
            cy0: (p[1] + 1.0) / 2.0 * (height as f64 - 1.0),
            vx: 0.8 * p[2],
            vy: 0.8 * p[3],
            radius: 1.0 + 1.5 * (p[4] + 1.0) / 2.0,
            amplitude: 0.5 + (p[5] + 1.0) / 4.0,
        }
    }

    pub fn plain_value(&self, x: usize, y: usize, t: usize) -> f64 {
        let dx = x as f64 - self.cx0 - self.vx * t as f64;
        let dy = y as f64 - self.cy0 - self.vy * t as f64;
        let g = self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.radius * self.radius)).exp();
        2.0 * g - 1.0
    }
}

/// Ground-truth renderer: a Gaussian blob drifting at constant velocity.
pub fn oracle_render(params: &OracleParams, t_frames: usize) -> Result<Video, ToyError> {
    oracle_render_sized(params, t_frames, DEFAULT_HEIGHT, DEFAULT_WIDTH)
}

pub fn oracle_render_sized(
    params: &OracleParams,
    t_frames: usize,
    height: usize,
    width: usize,
) -> Result<Video, ToyError> {
    if t_frames < 1 {
        return Err(ToyError::InvalidLength(t_frames));
    }
    let blob = BlobGeometry::from_prompt(&params.prompt_vec, height, width);
    let frames = (0..t_frames)
        .map(|t| {
            let mut pixels = Vec::with_capacity(height * width);
            for y in 0..height {
                for x in 0..width {
                    let mut v = blob.plain_value(x, y, t);
                    if params.digital_style {
                        let parity = if (x + y) % 2 == 0 { 0.1 } else { -0.1 };
                        v = (v + parity).clamp(-1.0, 1.0);
                    }
                    pixels.push(v);
                }
            }
            Frame::new(height, width, pixels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Video::from_frames(frames)?)
}

pub const SIZES: [&str; 4] = ["tiny", "small", "large", "huge"];
pub const TEXTURES: [&str; 4] = ["smooth", "grainy", "glowing", "striped"];
pub const DIRECTIONS: [&str; 4] = ["left", "right", "up", "down"];
pub const SPEEDS: [&str; 4] = ["slowly", "steadily", "quickly", "erratically"];
pub const MAX_SYNTH_PROMPTS: usize = SIZES.len() * TEXTURES.len() * DIRECTIONS.len() * SPEEDS.len();

fn pick<'a>(rng: &mut SplitMix64, slots: &[&'a str]) -> &'a str {
    let u = (rng.next_signed() + 1.0) / 2.0;
    slots[((u * slots.len() as f64) as usize).min(slots.len() - 1)]
}

/// Draws `count` distinct prompts from the template grammar
/// `a {size} {texture} blob moving {direction} {speed}`.
pub fn synthesize_prompts(seed: Seed64, count: usize) -> Result<Vec<TextPrompt>, ToyError> {
    if count == 0 || count > MAX_SYNTH_PROMPTS {
        return Err(ToyError::InvalidCount(count));
    }
    let mut rng = SplitMix64::new(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let text = format!(
            "a {} {} blob moving {} {}",
            pick(&mut rng, &SIZES),
            pick(&mut rng, &TEXTURES),
            pick(&mut rng, &DIRECTIONS),
            pick(&mut rng, &SPEEDS)
        );
        if seen.insert(text.clone()) {
            out.push(TextPrompt::new(text)?);
        }
    }
    Ok(out)
}

/// Source of raw prompts for data-free training. The grammar is the default;
/// an LLM-backed generator can be substituted by implementing this trait.
pub trait PromptSource: Send + Sync {
    fn prompts(&self, seed: Seed64, count: usize) -> Result<Vec<TextPrompt>, ToyError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GrammarPrompts;

impl PromptSource for GrammarPrompts {
    fn prompts(&self, seed: Seed64, count: usize) -> Result<Vec<TextPrompt>, ToyError> {
        synthesize_prompts(seed, count)
    }
}

/// Derives a child seed from a parent seed and a label, for independent sub-streams.
pub fn derive_seed(parent: Seed64, label: &str) -> Seed64 {
    SplitMix64::new(parent ^ hash_text(label)).next_u64()
}
