//! Data-free training loop: synthesize prompts, generate four candidates per
//! prompt, route each set through judge consensus or human review, then
//! fine-tune on whatever was accepted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judges::{
    default_judges, draw_criterion, oracle_judge_rank, rank_candidates_with, Criterion,
    HttpJudgeClient, JudgeClient, JudgeContext, JudgeError, JudgeSpec, Ranking,
};
use crate::selfmod::{
    evaluate_loss, forward_chain_with, loss_mse, train_from, ChainState, HistoryRecord,
    SelfModError, TrainConfig, TrainSample,
};
use crate::toyworld::{
    derive_seed, enhance_prompt, oracle_render, rng_stream, GrammarPrompts, OracleParams,
    PromptSource, Seed64, ToyError, MAX_SYNTH_PROMPTS,
};
use crate::video::{EnhancedPrompt, Video, EMBED_DIM};

pub const CANDIDATES_PER_SET: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataFreeError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("rankings cover different candidate counts: {0:?}")]
    CountMismatch(Vec<usize>),
    #[error("consensus needs at least 2 rankings, got {0}")]
    TooFewRankings(usize),
    #[error("review item {0} is already resolved")]
    AlreadyResolved(String),
    #[error("candidate index {0} is out of range 0..{CANDIDATES_PER_SET}")]
    BadIndex(usize),
    #[error("{0} review item(s) still pending")]
    PendingHumanReviews(usize),
    #[error("training cancelled")]
    Cancelled,
    #[error(transparent)]
    SelfMod(#[from] SelfModError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlMode {
    Interactive,
    #[default]
    AutoOracle,
    AutoDiscard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataFreeConfig {
    pub iterations: usize,
    pub prompts_per_iter: usize,
    pub judges: Vec<JudgeSpec>,
    pub candidate_noise_sigma: f64,
    pub train_cfg: TrainConfig,
    pub hitl_mode: HitlMode,
}

impl Default for DataFreeConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            prompts_per_iter: 16,
            judges: default_judges(),
            candidate_noise_sigma: 0.1,
            train_cfg: TrainConfig::default(),
            hitl_mode: HitlMode::AutoOracle,
        }
    }
}

impl DataFreeConfig {
    pub fn validate(&self) -> Result<(), DataFreeError> {
        let bad = |m: String| Err(DataFreeError::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.prompts_per_iter == 0 || self.prompts_per_iter > MAX_SYNTH_PROMPTS {
            return bad(format!("prompts_per_iter must be in 1..={MAX_SYNTH_PROMPTS}"));
        }
        if self.judges.len() < 2 {
            return bad("at least 2 judges are required".into());
        }
        for j in &self.judges {
            j.validate()?;
        }
        if !(self.candidate_noise_sigma >= 0.0 && self.candidate_noise_sigma.is_finite()) {
            return bad("candidate_noise_sigma must be >= 0".into());
        }
        self.train_cfg.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub set_id: String,
    pub prompt: EnhancedPrompt,
    pub candidates: Vec<Video>,
    pub gen_seeds: Vec<Seed64>,
    pub criterion: Criterion,
    /// Judge label to ranking; judges that failed are absent.
    pub rankings: BTreeMap<String, Ranking>,
}

/// Four jittered forward passes; `state` is never modified.
pub fn generate_candidates(
    state: &ChainState,
    prompt: &EnhancedPrompt,
    set_seed: Seed64,
    sigma: f64,
    cfg: &TrainConfig,
) -> Result<(Vec<Video>, Vec<Seed64>), DataFreeError> {
    let seeds: Vec<Seed64> = (0..CANDIDATES_PER_SET)
        .map(|j| derive_seed(set_seed, &format!("candidate{j}")))
        .collect();
    let mut videos = Vec::with_capacity(CANDIDATES_PER_SET);
    for &s in &seeds {
        let nu: Vec<f64> = rng_stream(s, EMBED_DIM).iter().map(|v| v * sigma).collect();
        let mut zs = state.modulation.clone();
        for z in zs.values_mut() {
            for (zi, n) in z.values.iter_mut().zip(&nu) {
                *zi += n;
            }
        }
        let (_, cache) = forward_chain_with(state, &zs, prompt, &cfg.chain, cfg.t_frames)?;
        videos.push(cache.final_video().expect("validated chain").clone());
    }
    Ok((videos, seeds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteOutcome {
    AutoAccepted(usize),
    NeedsHuman,
    Discarded,
}

/// Unanimous top-1 accepts; anything else goes to a human.
pub fn consensus_route(rankings: &[Ranking]) -> Result<RouteOutcome, DataFreeError> {
    if rankings.len() < 2 {
        return Err(DataFreeError::TooFewRankings(rankings.len()));
    }
    let k = rankings[0].len();
    if rankings.iter().any(|r| r.len() != k) {
        return Err(DataFreeError::CountMismatch(
            rankings.iter().map(Ranking::len).collect(),
        ));
    }
    let top = rankings[0].top();
    if rankings.iter().all(|r| r.top() == top) {
        Ok(RouteOutcome::AutoAccepted(top))
    } else {
        Ok(RouteOutcome::NeedsHuman)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Accepted(usize),
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    PendingHuman,
    Resolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewItem {
    pub item_id: String,
    pub iteration: usize,
    pub candidate_set: CandidateSet,
    pub status: ReviewStatus,
    pub resolution: Option<Resolution>,
}

impl ReviewItem {
    pub fn new(iteration: usize, candidate_set: CandidateSet) -> Self {
        Self {
            item_id: candidate_set.set_id.clone(),
            iteration,
            candidate_set,
            status: ReviewStatus::PendingHuman,
            resolution: None,
        }
    }
}

pub fn resolve_review(item: &mut ReviewItem, decision: Resolution) -> Result<(), DataFreeError> {
    if item.status == ReviewStatus::Resolved {
        return Err(DataFreeError::AlreadyResolved(item.item_id.clone()));
    }
    if let Resolution::Accepted(i) = decision {
        if i >= item.candidate_set.candidates.len() {
            return Err(DataFreeError::BadIndex(i));
        }
    }
    item.status = ReviewStatus::Resolved;
    item.resolution = Some(decision);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordRoute {
    AutoAccepted,
    HumanAccepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub iteration: usize,
    pub set_id: String,
    pub route: RecordRoute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub prompt: EnhancedPrompt,
    pub video: Video,
    pub provenance: Provenance,
}

/// Per-iteration counters and curves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub prompts: usize,
    pub dataset_size: usize,
    pub auto_accepted: usize,
    pub human_accepted: usize,
    pub discarded: usize,
    pub judge_failures: usize,
    /// Mean MSE to the oracle video of the accepted candidates.
    pub accepted_mse_mean: Option<f64>,
    /// Mean MSE to the oracle video of the other candidates in accepted sets.
    pub rejected_mse_mean: Option<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// Mean batch loss, one value per batch.
    pub losses: Vec<f64>,
    pub skipped: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataFreeReport {
    pub iterations: Vec<IterationReport>,
    pub total_records: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct JudgedSet {
    set: CandidateSet,
    target: Video,
    route: RouteOutcome,
}

/// Candidate sets of one iteration, judged and routed but not yet resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDraft {
    pub iteration: usize,
    sets: Vec<JudgedSet>,
    judge_failures: usize,
}

impl IterationDraft {
    pub fn sets(&self) -> impl Iterator<Item = (&CandidateSet, RouteOutcome)> {
        self.sets.iter().map(|s| (&s.set, s.route))
    }

    /// Review items for every set without consensus.
    pub fn review_items(&self) -> Vec<ReviewItem> {
        self.sets
            .iter()
            .filter(|s| s.route == RouteOutcome::NeedsHuman)
            .map(|s| ReviewItem::new(self.iteration, s.set.clone()))
            .collect()
    }

    /// Oracle target for a set, available to simulated reviewers.
    pub fn target_of(&self, set_id: &str) -> Option<&Video> {
        self.sets.iter().find(|s| s.set.set_id == set_id).map(|s| &s.target)
    }
}

/// Synthesizes, generates, judges and routes the sets of iteration `n`.
pub fn draft_iteration(
    state: &ChainState,
    cfg: &DataFreeConfig,
    n: usize,
    prompts: &dyn PromptSource,
    client: &dyn JudgeClient,
) -> Result<IterationDraft, DataFreeError> {
    let seed = cfg.train_cfg.seed;
    let iter_seed = derive_seed(seed, &format!("iteration{n}"));
    let texts = prompts.prompts(derive_seed(iter_seed, "prompts"), cfg.prompts_per_iter)?;
    let mut sets = Vec::with_capacity(texts.len());
    let mut judge_failures = 0;
    for (s, text) in texts.iter().enumerate() {
        let set_id = format!("it{n}-s{s:02}");
        let set_seed = derive_seed(iter_seed, &set_id);
        let prompt = enhance_prompt(text)?;
        let target = oracle_render(
            &OracleParams {
                prompt_vec: prompt.vector,
                digital_style: false,
            },
            cfg.train_cfg.t_frames,
        )?;
        let (candidates, gen_seeds) = generate_candidates(
            state,
            &prompt,
            set_seed,
            cfg.candidate_noise_sigma,
            &cfg.train_cfg,
        )?;
        let criterion = draw_criterion(derive_seed(set_seed, "criterion"));
        let ctx = JudgeContext {
            criterion,
            target: Some(&target),
        };
        let mut rankings = BTreeMap::new();
        let mut failed = false;
        for (i, spec) in cfg.judges.iter().enumerate() {
            match rank_candidates_with(client, spec, &candidates, ctx) {
                Ok(r) => {
                    rankings.insert(spec.label(i), r);
                }
                Err(JudgeError::JudgeUnavailable(_) | JudgeError::MalformedRanking { .. }) => {
                    failed = true;
                }
                Err(e) => return Err(e.into()),
            }
        }
        let route = if failed {
            judge_failures += 1;
            RouteOutcome::NeedsHuman
        } else {
            consensus_route(&rankings.values().cloned().collect::<Vec<_>>())?
        };
        sets.push(JudgedSet {
            set: CandidateSet {
                set_id,
                prompt,
                candidates,
                gen_seeds,
                criterion,
                rankings,
            },
            target,
            route,
        });
    }
    Ok(IterationDraft {
        iteration: n,
        sets,
        judge_failures,
    })
}

/// Resolves review items without a human, per the simulation mode.
pub fn auto_resolve(
    draft: &IterationDraft,
    items: &mut [ReviewItem],
    mode: HitlMode,
) -> Result<(), DataFreeError> {
    for item in items.iter_mut() {
        let decision = match mode {
            HitlMode::Interactive => continue,
            HitlMode::AutoDiscard => Resolution::Discarded,
            HitlMode::AutoOracle => {
                let target = draft
                    .target_of(&item.item_id)
                    .expect("item comes from this draft");
                Resolution::Accepted(oracle_judge_rank(&item.candidate_set.candidates, target)?.top())
            }
        };
        resolve_review(item, decision)?;
    }
    Ok(())
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Builds `D_n` once every review item is resolved.
pub fn finalize_iteration(
    draft: &IterationDraft,
    items: &[ReviewItem],
) -> Result<(Vec<DatasetRecord>, IterationReport), DataFreeError> {
    let pending = items
        .iter()
        .filter(|i| i.status == ReviewStatus::PendingHuman)
        .count();
    if pending > 0 {
        return Err(DataFreeError::PendingHumanReviews(pending));
    }
    let resolutions: BTreeMap<&str, Resolution> = items
        .iter()
        .filter_map(|i| i.resolution.map(|r| (i.item_id.as_str(), r)))
        .collect();
    let mut report = IterationReport {
        iteration: draft.iteration,
        prompts: draft.sets.len(),
        judge_failures: draft.judge_failures,
        ..IterationReport::default()
    };
    let mut records = Vec::new();
    let (mut accepted_mse, mut rejected_mse) = (Vec::new(), Vec::new());
    for js in &draft.sets {
        let chosen = match js.route {
            RouteOutcome::AutoAccepted(i) => {
                report.auto_accepted += 1;
                Some((i, RecordRoute::AutoAccepted))
            }
            RouteOutcome::NeedsHuman | RouteOutcome::Discarded => {
                match resolutions.get(js.set.set_id.as_str()) {
                    Some(Resolution::Accepted(i)) => {
                        report.human_accepted += 1;
                        Some((*i, RecordRoute::HumanAccepted))
                    }
                    Some(Resolution::Discarded) => {
                        report.discarded += 1;
                        None
                    }
                    None => return Err(DataFreeError::PendingHumanReviews(1)),
                }
            }
        };
        let Some((idx, route)) = chosen else { continue };
        for (j, c) in js.set.candidates.iter().enumerate() {
            let mse = loss_mse(c, &js.target)?;
            if j == idx {
                accepted_mse.push(mse);
            } else {
                rejected_mse.push(mse);
            }
        }
        records.push(DatasetRecord {
            prompt: js.set.prompt.clone(),
            video: js.set.candidates[idx].clone(),
            provenance: Provenance {
                iteration: draft.iteration,
                set_id: js.set.set_id.clone(),
                route,
            },
        });
    }
    report.dataset_size = records.len();
    report.accepted_mse_mean = mean(&accepted_mse);
    report.rejected_mse_mean = mean(&rejected_mse);
    Ok((records, report))
}

/// Progress notifications from [`datafree_train`].
#[derive(Debug, Clone, PartialEq)]
pub enum DataFreeEvent<'a> {
    IterationStarted(usize),
    ReviewsQueued { iteration: usize, count: usize },
    Batch { iteration: usize, record: &'a HistoryRecord },
    IterationFinished(&'a IterationReport),
}

/// Supplies human resolutions in interactive mode. Receives pending items and
/// returns them resolved.
pub trait ReviewResolver {
    fn resolve(&mut self, items: Vec<ReviewItem>) -> Result<Vec<ReviewItem>, DataFreeError>;
}

/// Resolver for non-interactive runs; interactive items stay pending.
pub struct NoHumans;

impl ReviewResolver for NoHumans {
    fn resolve(&mut self, items: Vec<ReviewItem>) -> Result<Vec<ReviewItem>, DataFreeError> {
        Ok(items)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFreeOutcome {
    pub state: ChainState,
    pub report: DataFreeReport,
    pub history: Vec<HistoryRecord>,
    pub datasets: Vec<Vec<DatasetRecord>>,
}

/// `N` rounds of dataset construction followed by fine-tuning; every round
/// starts from the previous round's parameters.
pub fn datafree_train(
    cfg: &DataFreeConfig,
    observer: &mut dyn FnMut(DataFreeEvent<'_>),
    resolver: &mut dyn ReviewResolver,
) -> Result<DataFreeOutcome, DataFreeError> {
    datafree_train_with(cfg, &GrammarPrompts, &HttpJudgeClient::default(), observer, resolver)
}

pub fn datafree_train_with(
    cfg: &DataFreeConfig,
    prompts: &dyn PromptSource,
    client: &dyn JudgeClient,
    observer: &mut dyn FnMut(DataFreeEvent<'_>),
    resolver: &mut dyn ReviewResolver,
) -> Result<DataFreeOutcome, DataFreeError> {
    cfg.validate()?;
    let tc = &cfg.train_cfg;
    let mut state = ChainState::init(tc)?;
    let mut report = DataFreeReport::default();
    let mut history = Vec::new();
    let mut datasets = Vec::new();
    for n in 1..=cfg.iterations {
        observer(DataFreeEvent::IterationStarted(n));
        let draft = draft_iteration(&state, cfg, n, prompts, client)?;
        let mut items = draft.review_items();
        auto_resolve(&draft, &mut items, cfg.hitl_mode)?;
        if cfg.hitl_mode == HitlMode::Interactive && !items.is_empty() {
            observer(DataFreeEvent::ReviewsQueued {
                iteration: n,
                count: items.len(),
            });
            items = resolver.resolve(items)?;
        }
        let (records, mut it_report) = finalize_iteration(&draft, &items)?;
        if records.is_empty() {
            it_report.skipped = true;
            it_report.warning = Some(format!("iteration {n}: empty dataset, training skipped"));
        } else {
            let samples: Vec<TrainSample> = records
                .iter()
                .map(|r| TrainSample {
                    prompt: r.prompt.clone(),
                    target: r.video.clone(),
                })
                .collect();
            it_report.initial_loss = Some(evaluate_loss(&state, &samples, tc)?);
            let first_epoch = (n - 1) * tc.epochs + 1;
            let h = train_from(&mut state, &samples, tc, first_epoch, &mut |rec| {
                observer(DataFreeEvent::Batch {
                    iteration: n,
                    record: rec,
                })
            })?;
            it_report.losses = h.losses();
            it_report.final_loss = Some(evaluate_loss(&state, &samples, tc)?);
            history.extend(h.records);
        }
        observer(DataFreeEvent::IterationFinished(&it_report));
        report.total_records += records.len();
        report.iterations.push(it_report);
        datasets.push(records);
    }
    Ok(DataFreeOutcome {
        state,
        report,
        history,
        datasets,
    })
}
