//! The five agent roles as single-layer tanh generators.
//!
//! Every trainable role is one dense layer `tanh(Σ M·x + b)` over a flattened
//! 8×8 frame and a 32-wide augmented embedding `[e ; z]`. Forward passes are
//! paired with hand-written vector-Jacobian products that return gradients for
//! the parameters, the input frame(s) and the augmented embedding.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toyworld::{hash_text, rng_stream, Seed64};
use crate::video::{Frame, Video, VideoError, DEFAULT_HEIGHT, DEFAULT_WIDTH, EMBED_DIM, FRAME_LEN};

/// Width of `[e ; z]`.
pub const AUG_DIM: usize = 2 * EMBED_DIM;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("{0} has no trainable parameters")]
    NoParams(AgentId),
    #[error("parameters belong to {actual}, expected {expected}")]
    RoleMismatch { expected: AgentId, actual: AgentId },
    #[error("frame count must be at least 1, got {0}")]
    InvalidLength(usize),
    #[error("agent input must be {expected} wide, got {actual}")]
    BadInput { expected: usize, actual: usize },
    #[error("agent produced a non-finite output")]
    NonFinite,
    #[error("unknown agent id {0}")]
    UnknownAgent(u8),
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    PromptEnhance = 1,
    TextToImage = 2,
    ImageToImage = 3,
    ImageToVideo = 4,
    VideoConnect = 5,
}

impl AgentId {
    pub const ALL: [AgentId; 5] = [
        AgentId::PromptEnhance,
        AgentId::TextToImage,
        AgentId::ImageToImage,
        AgentId::ImageToVideo,
        AgentId::VideoConnect,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self, AgentError> {
        Self::ALL
            .into_iter()
            .find(|a| a.index() == i)
            .ok_or(AgentError::UnknownAgent(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentId::PromptEnhance => "prompt_enhance",
            AgentId::TextToImage => "text_to_image",
            AgentId::ImageToImage => "image_to_image",
            AgentId::ImageToVideo => "image_to_video",
            AgentId::VideoConnect => "video_connect",
        }
    }

    /// Tensor names and shapes `(rows, cols)`; vectors have `cols == 1`.
    pub fn tensor_layout(self) -> &'static [(&'static str, usize, usize)] {
        match self {
            AgentId::PromptEnhance => &[],
            AgentId::TextToImage => &[("W2", FRAME_LEN, AUG_DIM), ("b2", FRAME_LEN, 1)],
            AgentId::ImageToImage => &[
                ("U3", FRAME_LEN, FRAME_LEN),
                ("V3", FRAME_LEN, AUG_DIM),
                ("b3", FRAME_LEN, 1),
            ],
            AgentId::ImageToVideo => &[
                ("U4", FRAME_LEN, FRAME_LEN),
                ("V4", FRAME_LEN, AUG_DIM),
                ("b4", FRAME_LEN, 1),
            ],
            AgentId::VideoConnect => &[
                ("Ua", FRAME_LEN, FRAME_LEN),
                ("Ub", FRAME_LEN, FRAME_LEN),
                ("V5", FRAME_LEN, AUG_DIM),
                ("c5", FRAME_LEN, 1),
                ("b5", FRAME_LEN, 1),
            ],
        }
    }

    /// Summed input width of the role's dense layer.
    fn layer_fan_in(self) -> usize {
        self.tensor_layout()
            .iter()
            .filter(|(_, _, cols)| *cols > 1)
            .map(|(_, _, cols)| cols)
            .sum()
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{} ({})", self.index(), self.name())
    }
}

/// Dense row-major matrix; column vectors have `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        if self.cols == 1 {
            vec![self.rows]
        } else {
            vec![self.rows, self.cols]
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `out += self · x`
    fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · d`
    fn matvec_t_acc(&self, d: &[f64], out: &mut [f64]) {
        for (r, &dr) in d.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * dr;
            }
        }
    }

    /// `self += d · xᵀ`
    fn outer_acc(&mut self, d: &[f64], x: &[f64]) {
        for (r, &dr) in d.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (g, xv) in row.iter_mut().zip(x) {
                *g += dr * xv;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub role: AgentId,
    pub tensors: Vec<Tensor>,
}

impl AgentParams {
    pub fn zeros(role: AgentId) -> Result<Self, AgentError> {
        if role == AgentId::PromptEnhance {
            return Err(AgentError::NoParams(role));
        }
        Ok(Self {
            role,
            tensors: role
                .tensor_layout()
                .iter()
                .map(|(n, r, c)| Tensor::zeros(n, *r, *c))
                .collect(),
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    /// True when the tensor names and shapes match the role's layout.
    pub fn has_layout_of(&self, role: AgentId) -> bool {
        let layout = role.tensor_layout();
        self.role == role
            && self.tensors.len() == layout.len()
            && self
                .tensors
                .iter()
                .zip(layout)
                .all(|(t, (n, r, c))| t.name == *n && t.rows == *r && t.cols == *c)
    }

    fn expect_role(&self, role: AgentId) -> Result<(), AgentError> {
        if self.role != role {
            return Err(AgentError::RoleMismatch {
                expected: role,
                actual: self.role,
            });
        }
        Ok(())
    }

    fn t(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }
}

/// Seeded initialization: every tensor is drawn from its own splitmix64 stream
/// and scaled by `1/sqrt(fan_in)`. Biases use the layer's total fan-in. Values
/// are rounded to `f32` so checkpoints round-trip exactly.
pub fn init_params(role: AgentId, seed: Seed64) -> Result<AgentParams, AgentError> {
    let mut params = AgentParams::zeros(role)?;
    let layer_fan_in = role.layer_fan_in();
    for t in params.tensors.iter_mut() {
        let fan_in = if t.cols > 1 { t.cols } else { layer_fan_in };
        let scale = 1.0 / (fan_in as f64).sqrt();
        let stream_seed = seed ^ hash_text(&t.name) ^ (role.index() as u64).rotate_left(56);
        for (v, u) in t.data.iter_mut().zip(rng_stream(stream_seed, t.rows * t.cols)) {
            *v = (u * scale) as f32 as f64;
        }
    }
    Ok(params)
}

/// `[e ; z]` fed to a trainable agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEmbedding(pub Vec<f64>);

impl AugmentedEmbedding {
    pub fn new(text_embedding: &[f64], modulation: &[f64]) -> Result<Self, AgentError> {
        if text_embedding.len() != EMBED_DIM || modulation.len() != EMBED_DIM {
            return Err(AgentError::BadInput {
                expected: EMBED_DIM,
                actual: text_embedding.len().min(modulation.len()),
            });
        }
        let mut v = Vec::with_capacity(AUG_DIM);
        v.extend_from_slice(text_embedding);
        v.extend_from_slice(modulation);
        Ok(Self(v))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; AUG_DIM])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// The trailing modulation half.
    pub fn modulation(&self) -> &[f64] {
        &self.0[EMBED_DIM..]
    }
}

fn check_frame(f: &Frame) -> Result<(), AgentError> {
    if f.dims() != (DEFAULT_HEIGHT, DEFAULT_WIDTH) {
        return Err(AgentError::BadInput {
            expected: FRAME_LEN,
            actual: f.pixels().len(),
        });
    }
    Ok(())
}

fn check_aug(e: &AugmentedEmbedding) -> Result<(), AgentError> {
    if e.0.len() != AUG_DIM {
        return Err(AgentError::BadInput {
            expected: AUG_DIM,
            actual: e.0.len(),
        });
    }
    Ok(())
}

fn tanh_frame(mut pre: Vec<f64>) -> Result<Frame, AgentError> {
    for v in pre.iter_mut() {
        *v = v.tanh();
    }
    if pre.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite);
    }
    Ok(Frame::new(DEFAULT_HEIGHT, DEFAULT_WIDTH, pre)?)
}

/// `d = upstream ⊙ (1 − out²)`
fn tanh_backward(upstream: &[f64], out: &[f64]) -> Vec<f64> {
    upstream
        .iter()
        .zip(out)
        .map(|(g, y)| g * (1.0 - y * y))
        .collect()
}

fn bias_pre(b: &Tensor) -> Vec<f64> {
    b.data.clone()
}

/// A₂: text embedding to first frame.
pub fn t2i_forward(theta: &AgentParams, e: &AugmentedEmbedding) -> Result<Frame, AgentError> {
    theta.expect_role(AgentId::TextToImage)?;
    check_aug(e)?;
    let mut pre = bias_pre(theta.t(1));
    theta.t(0).matvec_acc(e.values(), &mut pre);
    tanh_frame(pre)
}

/// A₃: frame edit conditioned on the embedding.
pub fn i2i_forward(
    theta: &AgentParams,
    f: &Frame,
    e: &AugmentedEmbedding,
) -> Result<Frame, AgentError> {
    theta.expect_role(AgentId::ImageToImage)?;
    check_frame(f)?;
    check_aug(e)?;
    recurrent_step(theta, f, e)
}

fn recurrent_step(
    theta: &AgentParams,
    f: &Frame,
    e: &AugmentedEmbedding,
) -> Result<Frame, AgentError> {
    let mut pre = bias_pre(theta.t(2));
    theta.t(0).matvec_acc(f.pixels(), &mut pre);
    theta.t(1).matvec_acc(e.values(), &mut pre);
    tanh_frame(pre)
}

/// A₄: rolls a frame forward in time. Frame 0 of the output is `f0` verbatim.
pub fn i2v_forward(
    theta: &AgentParams,
    f0: &Frame,
    e: &AugmentedEmbedding,
    t_frames: usize,
) -> Result<Video, AgentError> {
    theta.expect_role(AgentId::ImageToVideo)?;
    check_frame(f0)?;
    check_aug(e)?;
    if t_frames < 1 {
        return Err(AgentError::InvalidLength(t_frames));
    }
    let mut frames = Vec::with_capacity(t_frames);
    frames.push(f0.clone());
    for t in 1..t_frames {
        let next = recurrent_step(theta, &frames[t - 1], e)?;
        frames.push(next);
    }
    Ok(Video::from_frames(frames)?)
}

fn phase(m: usize, m_frames: usize) -> f64 {
    m as f64 / (m_frames as f64 + 1.0)
}

/// A₅: `m_frames` transition frames between `f_a` and `f_b` (both excluded).
pub fn connect_forward(
    theta: &AgentParams,
    f_a: &Frame,
    f_b: &Frame,
    e: &AugmentedEmbedding,
    m_frames: usize,
) -> Result<Video, AgentError> {
    theta.expect_role(AgentId::VideoConnect)?;
    check_frame(f_a)?;
    check_frame(f_b)?;
    check_aug(e)?;
    if m_frames < 1 {
        return Err(AgentError::InvalidLength(m_frames));
    }
    let mut shared = bias_pre(theta.t(4));
    theta.t(0).matvec_acc(f_a.pixels(), &mut shared);
    theta.t(1).matvec_acc(f_b.pixels(), &mut shared);
    theta.t(2).matvec_acc(e.values(), &mut shared);
    let c5 = &theta.t(3).data;
    let frames = (1..=m_frames)
        .map(|m| {
            let s = phase(m, m_frames);
            tanh_frame(shared.iter().zip(c5).map(|(p, c)| p + c * s).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Video::from_frames(frames)?)
}

/// Gradients produced by a vector-Jacobian product.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentVjp {
    /// Same layout as the agent's parameters.
    pub d_theta: AgentParams,
    /// One entry per input frame, in argument order.
    pub d_frames: Vec<Vec<f64>>,
    pub d_embedding: Vec<f64>,
}

impl AgentVjp {
    fn new(role: AgentId, frames: usize) -> Result<Self, AgentError> {
        Ok(Self {
            d_theta: AgentParams::zeros(role)?,
            d_frames: vec![vec![0.0; FRAME_LEN]; frames],
            d_embedding: vec![0.0; AUG_DIM],
        })
    }
}

fn check_upstream(upstream: &[f64]) -> Result<(), AgentError> {
    if upstream.len() != FRAME_LEN {
        return Err(AgentError::BadInput {
            expected: FRAME_LEN,
            actual: upstream.len(),
        });
    }
    Ok(())
}

/// VJP of [`t2i_forward`] given the forward output and the upstream gradient.
pub fn t2i_backward(
    theta: &AgentParams,
    e: &AugmentedEmbedding,
    out: &Frame,
    upstream: &[f64],
) -> Result<AgentVjp, AgentError> {
    theta.expect_role(AgentId::TextToImage)?;
    check_upstream(upstream)?;
    let mut g = AgentVjp::new(AgentId::TextToImage, 0)?;
    let d = tanh_backward(upstream, out.pixels());
    g.d_theta.tensors[0].outer_acc(&d, e.values());
    add_into(&mut g.d_theta.tensors[1].data, &d);
    theta.t(0).matvec_t_acc(&d, &mut g.d_embedding);
    Ok(g)
}

/// VJP of [`i2i_forward`].
pub fn i2i_backward(
    theta: &AgentParams,
    f: &Frame,
    e: &AugmentedEmbedding,
    out: &Frame,
    upstream: &[f64],
) -> Result<AgentVjp, AgentError> {
    theta.expect_role(AgentId::ImageToImage)?;
    check_upstream(upstream)?;
    let mut g = AgentVjp::new(AgentId::ImageToImage, 1)?;
    let d = tanh_backward(upstream, out.pixels());
    recurrent_step_backward(theta, &mut g, &d, f.pixels(), e.values(), 0);
    Ok(g)
}

fn recurrent_step_backward(
    theta: &AgentParams,
    g: &mut AgentVjp,
    d: &[f64],
    input: &[f64],
    e: &[f64],
    frame_slot: usize,
) {
    g.d_theta.tensors[0].outer_acc(d, input);
    g.d_theta.tensors[1].outer_acc(d, e);
    add_into(&mut g.d_theta.tensors[2].data, d);
    theta.t(1).matvec_t_acc(d, &mut g.d_embedding);
    theta.t(0).matvec_t_acc(d, &mut g.d_frames[frame_slot]);
}

/// VJP of [`i2v_forward`]. `upstream[t]` is the gradient on output frame `t`
/// (including the pass-through frame 0); contributions flow backwards in time.
pub fn i2v_backward(
    theta: &AgentParams,
    e: &AugmentedEmbedding,
    out: &Video,
    upstream: &[Vec<f64>],
) -> Result<AgentVjp, AgentError> {
    theta.expect_role(AgentId::ImageToVideo)?;
    if upstream.len() != out.len() {
        return Err(AgentError::BadInput {
            expected: out.len(),
            actual: upstream.len(),
        });
    }
    upstream.iter().try_for_each(|u| check_upstream(u))?;
    let mut g = AgentVjp::new(AgentId::ImageToVideo, 1)?;
    let frames = out.frames();
    // carry = total gradient on frame t from the loss and from later frames
    let mut carry = upstream[frames.len() - 1].clone();
    for t in (1..frames.len()).rev() {
        let d = tanh_backward(&carry, frames[t].pixels());
        let mut prev = upstream[t - 1].clone();
        g.d_frames[0].iter_mut().for_each(|v| *v = 0.0);
        recurrent_step_backward(theta, &mut g, &d, frames[t - 1].pixels(), e.values(), 0);
        add_into(&mut prev, &g.d_frames[0]);
        carry = prev;
    }
    g.d_frames[0] = carry;
    Ok(g)
}

/// VJP of [`connect_forward`]. `upstream[m]` is the gradient on transition frame `m`.
pub fn connect_backward(
    theta: &AgentParams,
    f_a: &Frame,
    f_b: &Frame,
    e: &AugmentedEmbedding,
    out: &Video,
    upstream: &[Vec<f64>],
) -> Result<AgentVjp, AgentError> {
    theta.expect_role(AgentId::VideoConnect)?;
    if upstream.len() != out.len() {
        return Err(AgentError::BadInput {
            expected: out.len(),
            actual: upstream.len(),
        });
    }
    upstream.iter().try_for_each(|u| check_upstream(u))?;
    let m_frames = out.len();
    let mut g = AgentVjp::new(AgentId::VideoConnect, 2)?;
    let mut d_shared = vec![0.0; FRAME_LEN];
    for (i, (frame, up)) in out.frames().iter().zip(upstream).enumerate() {
        let d = tanh_backward(up, frame.pixels());
        let s = phase(i + 1, m_frames);
        for (gc, dv) in g.d_theta.tensors[3].data.iter_mut().zip(&d) {
            *gc += dv * s;
        }
        add_into(&mut d_shared, &d);
    }
    g.d_theta.tensors[0].outer_acc(&d_shared, f_a.pixels());
    g.d_theta.tensors[1].outer_acc(&d_shared, f_b.pixels());
    g.d_theta.tensors[2].outer_acc(&d_shared, e.values());
    add_into(&mut g.d_theta.tensors[4].data, &d_shared);
    theta.t(0).matvec_t_acc(&d_shared, &mut g.d_frames[0]);
    theta.t(1).matvec_t_acc(&d_shared, &mut g.d_frames[1]);
    theta.t(2).matvec_t_acc(&d_shared, &mut g.d_embedding);
    Ok(g)
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
