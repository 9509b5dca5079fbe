//! Frames, videos, prompts and embeddings shared by every other module.
//!
//! Frames are single-channel (grayscale) images with intensities in `[-1, 1]`.
//! A [`Video`] is a non-empty, shape-homogeneous sequence of frames. Every type
//! here is a plain value: cloning is the only way to "mutate" one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HEIGHT: usize = 8;
pub const DEFAULT_WIDTH: usize = 8;
pub const DEFAULT_FRAMES: usize = 6;
/// Flattened pixel count of a default frame.
pub const FRAME_LEN: usize = DEFAULT_HEIGHT * DEFAULT_WIDTH;
pub const PROMPT_DIM: usize = 8;
pub const EMBED_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VideoError {
    #[error("a video needs at least one frame")]
    EmptyVideo,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("frame needs {expected} pixels, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel {index} is {value}, outside [-1, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("frame dimensions must be positive")]
    ZeroSized,
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Frame {
    /// Builds a frame from row-major pixels, rejecting NaN and out-of-range values.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, VideoError> {
        if height == 0 || width == 0 {
            return Err(VideoError::ZeroSized);
        }
        if pixels.len() != height * width {
            return Err(VideoError::PixelCount {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
        {
            return Err(VideoError::PixelOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, VideoError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0).expect("zero frame is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn check_dims(&self, other: &Frame) -> Result<(), VideoError> {
        if self.dims() != other.dims() {
            return Err(VideoError::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Euclidean distance between two equally-shaped frames.
pub fn frame_l2_distance(a: &Frame, b: &Frame) -> Result<f64, VideoError> {
    a.check_dims(b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Vec<Frame>,
}

impl Video {
    pub fn from_frames(frames: Vec<Frame>) -> Result<Self, VideoError> {
        let first = frames.first().ok_or(VideoError::EmptyVideo)?;
        for f in &frames[1..] {
            first.check_dims(f)?;
        }
        Ok(Self { frames })
    }

    pub fn single(frame: Frame) -> Self {
        Self {
            frames: vec![frame],
        }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Number of frames, always at least one.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn first_frame(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn last_frame(&self) -> &Frame {
        &self.frames[self.frames.len() - 1]
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &Video) -> Result<Video, VideoError> {
        self.frames[0].check_dims(&other.frames[0])?;
        let mut frames = Vec::with_capacity(self.len() + other.len());
        frames.extend_from_slice(&self.frames);
        frames.extend_from_slice(&other.frames);
        Ok(Video { frames })
    }

    /// All pixels, frame-major then row-major.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flat_map(|f| f.pixels.iter().copied())
    }

    pub fn check_same_shape(&self, other: &Video) -> Result<(), VideoError> {
        self.frames[0].check_dims(&other.frames[0])?;
        if self.len() != other.len() {
            return Err(VideoError::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }
}

pub fn video_from_frames(frames: Vec<Frame>) -> Result<Video, VideoError> {
    Video::from_frames(frames)
}

pub fn last_frame(v: &Video) -> Frame {
    v.last_frame().clone()
}

pub fn concat_videos(a: &Video, b: &Video) -> Result<Video, VideoError> {
    a.concat(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TextPrompt(String);

impl TextPrompt {
    pub fn new(text: impl Into<String>) -> Result<Self, VideoError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(VideoError::EmptyPrompt);
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TextPrompt {
    type Error = VideoError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<TextPrompt> for String {
    fn from(p: TextPrompt) -> String {
        p.0
    }
}

/// Numeric stand-in for prompt semantics in the toy world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptVec(pub [f64; PROMPT_DIM]);

impl PromptVec {
    pub fn values(&self) -> &[f64; PROMPT_DIM] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedPrompt {
    pub text: String,
    pub vector: PromptVec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: f64) -> Frame {
        Frame::filled(8, 8, v).unwrap()
    }

    #[test]
    fn from_frames_minimal_and_ordered() {
        let v = video_from_frames(vec![frame(0.0)]).unwrap();
        assert_eq!(v.len(), 1);
        let v = video_from_frames(vec![frame(0.1), frame(0.2)]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.frames()[0], frame(0.1));
        assert_eq!(v.frames()[1], frame(0.2));
    }

    #[test]
    fn from_frames_rejects_empty_and_mixed() {
        assert_eq!(video_from_frames(vec![]), Err(VideoError::EmptyVideo));
        let small = Frame::zeros(4, 4);
        assert!(matches!(
            video_from_frames(vec![frame(0.0), small]),
            Err(VideoError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frame_rejects_bad_pixels() {
        assert!(Frame::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Frame::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Frame::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Frame::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn last_frame_cases() {
        let single = Video::single(frame(0.3));
        assert_eq!(last_frame(&single), frame(0.3));
        let v = video_from_frames(vec![frame(0.0), frame(0.1), frame(0.2)]).unwrap();
        assert_eq!(last_frame(&v), frame(0.2));
        let b = video_from_frames(vec![frame(-0.5), frame(0.7)]).unwrap();
        let c = concat_videos(&v, &b).unwrap();
        assert_eq!(last_frame(&c), last_frame(&b));
        assert_eq!(c.first_frame(), v.first_frame());
    }

    #[test]
    fn concat_lengths_add() {
        let a = video_from_frames(vec![frame(0.0); 2]).unwrap();
        let b = video_from_frames(vec![frame(1.0); 3]).unwrap();
        assert_eq!(concat_videos(&a, &b).unwrap().len(), 5);
        let c = Video::single(Frame::zeros(4, 4));
        assert!(concat_videos(&a, &c).is_err());
    }

    #[test]
    fn l2_distance_known_values() {
        assert_eq!(frame_l2_distance(&frame(0.3), &frame(0.3)).unwrap(), 0.0);
        assert_eq!(frame_l2_distance(&frame(0.0), &frame(1.0)).unwrap(), 8.0);
        assert!(frame_l2_distance(&frame(0.0), &Frame::zeros(4, 4)).is_err());
    }

    #[test]
    fn prompt_must_have_content() {
        assert_eq!(TextPrompt::new("  \t"), Err(VideoError::EmptyPrompt));
        assert_eq!(TextPrompt::new("blob").unwrap().text(), "blob");
    }
}
