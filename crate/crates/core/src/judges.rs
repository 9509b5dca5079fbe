//! Candidate-ranking judges.
//!
//! Two deterministic built-ins stand in for multimodal LLM judges: one ranks by
//! distance to the hidden oracle video, the other by a motion-quality score.
//! They disagree on some candidate sets, which is what feeds human review. A
//! third kind forwards the set to an external HTTP judge.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{dynamic_degree, motion_smoothness};
use crate::selfmod::loss_mse;
use crate::store::encode_tvid_b64;
use crate::toyworld::{rng_stream, Seed64};
use crate::video::Video;

pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(10);
/// Dynamic degree the quality judge considers ideal.
pub const TARGET_DYNAMICS: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("candidate {0} does not match the reference dimensions")]
    DimensionMismatch(usize),
    #[error("the oracle judge needs a target video")]
    MissingTarget,
    #[error("external judge requires an endpoint")]
    MissingEndpoint,
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("ranking is not a permutation of 0..{k}: {order:?}")]
    MalformedRanking { k: usize, order: Vec<i64> },
    #[error("criterion id {0} is outside 1..=10")]
    UnknownCriterion(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub text: &'static str,
}

const CRITERIA: [&str; 10] = [
    "Evaluate the visual clarity and resolution, ranking videos based on image sharpness, smoothness of transitions, and noise levels.",
    "Assess object consistency and scene stability across frames, ranking videos on object motion and interactions.",
    "Examine the temporal coherence, identifying the best frame-to-frame continuity.",
    "Evaluate the narrative coherence or logical progression, ranking based on storytelling consistency.",
    "Assess color grading and lighting consistency, determining the best video based on smooth lighting transitions and uniform color.",
    "Evaluate the realism of objects, background textures, and scene complexity, ranking videos from most realistic to least.",
    "Analyze content relevance to the task, ranking videos based on theme alignment and task appropriateness.",
    "Compare the aesthetic quality, focusing on artistic composition, balance, and overall visual appeal.",
    "Evaluate noise and artifact levels, identifying the video with the cleanest and smoothest output.",
    "Examine frame rate consistency and smoothness of motion, ranking videos based on natural motion without lag or stuttering.",
];

pub fn criteria_catalog() -> Vec<Criterion> {
    CRITERIA
        .iter()
        .enumerate()
        .map(|(i, text)| Criterion {
            id: i as u8 + 1,
            text,
        })
        .collect()
}

pub fn criterion(id: u8) -> Result<Criterion, JudgeError> {
    criteria_catalog()
        .into_iter()
        .find(|c| c.id == id)
        .ok_or(JudgeError::UnknownCriterion(id))
}

/// Criterion drawn for a candidate set: one splitmix64 value mapped onto 1..=10.
pub fn draw_criterion(seed: Seed64) -> Criterion {
    let u = (rng_stream(seed, 1)[0] + 1.0) / 2.0;
    let idx = ((u * CRITERIA.len() as f64) as usize).min(CRITERIA.len() - 1);
    criteria_catalog()[idx]
}

/// Candidate indices, best first. Always a permutation of `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<usize>")]
pub struct Ranking(Vec<usize>);

impl Ranking {
    /// A non-empty permutation of `0..k`.
    pub fn new(order: Vec<i64>) -> Result<Self, JudgeError> {
        let k = order.len();
        if k == 0 {
            return Err(JudgeError::MalformedRanking { k, order });
        }
        let mut seen = vec![false; k];
        for &i in &order {
            if i < 0 || i as usize >= k || std::mem::replace(&mut seen[i as usize], true) {
                return Err(JudgeError::MalformedRanking { k, order });
            }
        }
        Ok(Self(order.into_iter().map(|i| i as usize).collect()))
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn top(&self) -> usize {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for the `len` convention.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sorts indices by `score` ascending, ties by lower index.
    fn by_ascending(scores: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        Self(idx)
    }
}

impl TryFrom<Vec<i64>> for Ranking {
    type Error = JudgeError;
    fn try_from(v: Vec<i64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Ranking> for Vec<usize> {
    fn from(r: Ranking) -> Self {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    OracleDistance,
    QualityProxy,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeSpec {
    pub kind: JudgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub seed: Seed64,
}

impl JudgeSpec {
    pub fn builtin(kind: JudgeKind) -> Self {
        Self {
            kind,
            endpoint: None,
            seed: 0,
        }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self {
            kind: JudgeKind::External,
            endpoint: Some(endpoint.into()),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.kind == JudgeKind::External && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(JudgeError::MissingEndpoint);
        }
        Ok(())
    }

    /// Stable label used as the key of a ranking.
    pub fn label(&self, position: usize) -> String {
        let kind = match self.kind {
            JudgeKind::OracleDistance => "oracle_distance",
            JudgeKind::QualityProxy => "quality_proxy",
            JudgeKind::External => "external",
        };
        format!("judge{position}_{kind}")
    }
}

/// The two built-ins used by default.
pub fn default_judges() -> Vec<JudgeSpec> {
    vec![
        JudgeSpec::builtin(JudgeKind::OracleDistance),
        JudgeSpec::builtin(JudgeKind::QualityProxy),
    ]
}

fn check_count(candidates: &[Video]) -> Result<(), JudgeError> {
    if candidates.len() < 2 {
        return Err(JudgeError::TooFewCandidates(candidates.len()));
    }
    Ok(())
}

/// Ascending MSE to the oracle target; ties by lower index.
pub fn oracle_judge_rank(candidates: &[Video], target: &Video) -> Result<Ranking, JudgeError> {
    check_count(candidates)?;
    let losses = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| loss_mse(c, target).map_err(|_| JudgeError::DimensionMismatch(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ranking::by_ascending(&losses))
}

pub fn quality_score(v: &Video) -> f64 {
    motion_smoothness(v) - (dynamic_degree(v) - TARGET_DYNAMICS).abs()
}

/// Descending quality score; ties by lower index.
pub fn quality_judge_rank(candidates: &[Video]) -> Result<Ranking, JudgeError> {
    check_count(candidates)?;
    let neg: Vec<f64> = candidates.iter().map(|c| -quality_score(c)).collect();
    Ok(Ranking::by_ascending(&neg))
}

/// Wire body POSTed to an external judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalJudgeRequest {
    pub criterion_text: String,
    /// Each candidate as base64 TVID bytes.
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalJudgeResponse {
    pub order: Vec<i64>,
}

pub trait JudgeClient: Send + Sync {
    /// Returns the raw order; validation happens in [`rank_candidates_with`].
    fn rank(&self, endpoint: &str, request: &ExternalJudgeRequest) -> Result<Vec<i64>, JudgeError>;
}

/// Blocking HTTP client for the external judge contract.
#[derive(Debug, Clone)]
pub struct HttpJudgeClient {
    pub timeout: Duration,
}

impl Default for HttpJudgeClient {
    fn default() -> Self {
        Self {
            timeout: EXTERNAL_TIMEOUT,
        }
    }
}

impl JudgeClient for HttpJudgeClient {
    fn rank(&self, endpoint: &str, request: &ExternalJudgeRequest) -> Result<Vec<i64>, JudgeError> {
        let unavailable = |e: reqwest::Error| JudgeError::JudgeUnavailable(e.to_string());
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(unavailable)?;
        let resp = client
            .post(endpoint)
            .json(request)
            .send()
            .map_err(unavailable)?
            .error_for_status()
            .map_err(unavailable)?;
        let body: ExternalJudgeResponse =
            resp.json().map_err(|_| JudgeError::MalformedRanking {
                k: request.candidates.len(),
                order: Vec::new(),
            })?;
        Ok(body.order)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JudgeContext<'a> {
    pub criterion: Criterion,
    pub target: Option<&'a Video>,
}

pub fn rank_candidates(
    spec: &JudgeSpec,
    candidates: &[Video],
    ctx: JudgeContext<'_>,
) -> Result<Ranking, JudgeError> {
    rank_candidates_with(&HttpJudgeClient::default(), spec, candidates, ctx)
}

pub fn rank_candidates_with(
    client: &dyn JudgeClient,
    spec: &JudgeSpec,
    candidates: &[Video],
    ctx: JudgeContext<'_>,
) -> Result<Ranking, JudgeError> {
    spec.validate()?;
    check_count(candidates)?;
    match spec.kind {
        JudgeKind::OracleDistance => {
            oracle_judge_rank(candidates, ctx.target.ok_or(JudgeError::MissingTarget)?)
        }
        JudgeKind::QualityProxy => quality_judge_rank(candidates),
        JudgeKind::External => {
            let request = ExternalJudgeRequest {
                criterion_text: ctx.criterion.text.to_string(),
                candidates: candidates.iter().map(encode_tvid_b64).collect(),
            };
            let order = client.rank(spec.endpoint.as_deref().unwrap_or_default(), &request)?;
            if order.len() != candidates.len() {
                return Err(JudgeError::MalformedRanking {
                    k: candidates.len(),
                    order,
                });
            }
            Ranking::new(order)
        }
    }
}
