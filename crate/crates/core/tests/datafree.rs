mod common;

use std::collections::BTreeSet;
use std::sync::atomic::Ordering;

use common::{spawn_judge, JudgeBehaviour};
use sopforge::datafree::*;
use sopforge::judges::{HttpJudgeClient, JudgeKind, JudgeSpec};
use sopforge::selfmod::{loss_mse, ChainState, TrainConfig};
use sopforge::toyworld::GrammarPrompts;

fn small(seed: u64, mode: HitlMode) -> DataFreeConfig {
    DataFreeConfig {
        iterations: 2,
        prompts_per_iter: 6,
        hitl_mode: mode,
        train_cfg: TrainConfig {
            seed,
            epochs: 5,
            ..TrainConfig::default()
        },
        ..DataFreeConfig::default()
    }
}

#[test]
fn default_loop_bounds_and_selection_pressure() {
    for seed in [0u64, 1, 2] {
        let mut cfg = DataFreeConfig::default();
        cfg.train_cfg.seed = seed;
        assert_eq!((cfg.iterations, cfg.prompts_per_iter, cfg.hitl_mode), (3, 16, HitlMode::AutoOracle));
        let out = datafree_train(&cfg, &mut |_| {}, &mut NoHumans).unwrap();

        let total: usize = out.datasets.iter().map(Vec::len).sum();
        assert!(total <= 48);
        assert_eq!(out.report.total_records, total);
        assert_eq!(out.report.iterations.len(), 3);

        let mut ids = BTreeSet::new();
        for (n, (data, r)) in out.datasets.iter().zip(&out.report.iterations).enumerate() {
            assert_eq!(r.iteration, n + 1);
            assert_eq!(r.prompts, 16);
            assert_eq!(r.dataset_size, data.len());
            assert_eq!(r.auto_accepted + r.human_accepted + r.discarded, 16);
            assert_eq!(r.discarded, 0);
            assert_eq!(r.judge_failures, 0);
            let acc = r.accepted_mse_mean.unwrap();
            let rej = r.rejected_mse_mean.unwrap();
            assert!(acc < rej, "seed {seed} it {}: {acc} vs {rej}", r.iteration);
            assert!(r.initial_loss.is_some() && r.final_loss.is_some());
            assert_eq!(r.losses.len(), cfg.train_cfg.epochs * 4);
            assert!(!r.skipped && r.warning.is_none());
            for rec in data {
                assert_eq!(rec.provenance.iteration, n + 1);
                assert!(ids.insert(rec.provenance.set_id.clone()));
            }
        }
        assert_eq!(out.history.len(), 3 * cfg.train_cfg.epochs * 4);
        let epochs: Vec<usize> = out.history.iter().map(|h| h.epoch).collect();
        assert!(epochs.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*epochs.last().unwrap(), 3 * cfg.train_cfg.epochs);
    }
}

#[test]
fn auto_discard_keeps_only_consensus_sets() {
    let cfg = small(3, HitlMode::AutoDiscard);
    let out = datafree_train(&cfg, &mut |_| {}, &mut NoHumans).unwrap();
    for (data, r) in out.datasets.iter().zip(&out.report.iterations) {
        assert_eq!(r.human_accepted, 0);
        assert_eq!(r.auto_accepted, data.len());
        assert_eq!(r.auto_accepted + r.discarded, 6);
        assert!(data.iter().all(|d| d.provenance.route == RecordRoute::AutoAccepted));
        if data.is_empty() {
            assert!(r.skipped && r.warning.is_some() && r.losses.is_empty());
        }
    }
}

#[test]
fn discard_removes_entire_set() {
    let cfg = small(4, HitlMode::AutoOracle);
    let state = ChainState::init(&cfg.train_cfg).unwrap();
    let draft = draft_iteration(&state, &cfg, 1, &GrammarPrompts, &HttpJudgeClient::default()).unwrap();
    let mut items = draft.review_items();
    assert!(!items.is_empty());
    let discarded = items[0].item_id.clone();
    resolve_review(&mut items[0], Resolution::Discarded).unwrap();
    for item in items.iter_mut().skip(1) {
        resolve_review(item, Resolution::Accepted(3)).unwrap();
    }
    let (records, report) = finalize_iteration(&draft, &items).unwrap();
    assert!(records.iter().all(|r| r.provenance.set_id != discarded));
    assert_eq!(report.discarded, 1);
    assert_eq!(records.len(), 6 - 1);
    for r in records.iter().filter(|r| r.provenance.route == RecordRoute::HumanAccepted) {
        let (set, _) = draft.sets().find(|(s, _)| s.set_id == r.provenance.set_id).unwrap();
        assert_eq!(r.video, set.candidates[3]);
    }
}

#[test]
fn finalize_waits_for_pending_items() {
    let cfg = small(4, HitlMode::Interactive);
    let state = ChainState::init(&cfg.train_cfg).unwrap();
    let draft = draft_iteration(&state, &cfg, 1, &GrammarPrompts, &HttpJudgeClient::default()).unwrap();
    let mut items = draft.review_items();
    auto_resolve(&draft, &mut items, HitlMode::Interactive).unwrap();
    assert!(matches!(
        finalize_iteration(&draft, &items),
        Err(DataFreeError::PendingHumanReviews(n)) if n == items.len()
    ));
}

#[test]
fn consensus_sets_take_agreed_candidate() {
    let cfg = small(5, HitlMode::AutoOracle);
    let state = ChainState::init(&cfg.train_cfg).unwrap();
    let draft = draft_iteration(&state, &cfg, 1, &GrammarPrompts, &HttpJudgeClient::default()).unwrap();
    for (set, route) in draft.sets() {
        assert_eq!(set.candidates.len(), CANDIDATES_PER_SET);
        assert_eq!(set.rankings.len(), 2);
        let tops: BTreeSet<usize> = set.rankings.values().map(|r| r.top()).collect();
        match route {
            RouteOutcome::AutoAccepted(i) => assert_eq!(tops, BTreeSet::from([i])),
            RouteOutcome::NeedsHuman => assert!(tops.len() > 1),
            RouteOutcome::Discarded => panic!("drafts never discard"),
        }
        // The oracle judge's order follows distance to the hidden target.
        let target = draft.target_of(&set.set_id).unwrap();
        let oracle = &set.rankings["judge0_oracle_distance"];
        let d: Vec<f64> = oracle.order().iter().map(|&i| loss_mse(&set.candidates[i], target).unwrap()).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }
}

struct ScriptedHuman {
    calls: usize,
}

impl ReviewResolver for ScriptedHuman {
    fn resolve(&mut self, mut items: Vec<ReviewItem>) -> Result<Vec<ReviewItem>, DataFreeError> {
        self.calls += 1;
        for (i, item) in items.iter_mut().enumerate() {
            let d = if i % 2 == 0 { Resolution::Accepted(1) } else { Resolution::Discarded };
            resolve_review(item, d)?;
        }
        Ok(items)
    }
}

#[test]
fn interactive_uses_resolver() {
    let cfg = small(6, HitlMode::Interactive);
    let mut human = ScriptedHuman { calls: 0 };
    let mut queued = 0;
    let out = datafree_train(
        &cfg,
        &mut |e| {
            if let DataFreeEvent::ReviewsQueued { count, .. } = e {
                queued += count;
            }
        },
        &mut human,
    )
    .unwrap();
    assert!(human.calls >= 1);
    let human_total: usize = out.report.iterations.iter().map(|r| r.human_accepted + r.discarded).sum();
    assert_eq!(human_total, queued);
}

#[test]
fn no_humans_in_interactive_mode_is_pending() {
    let cfg = small(6, HitlMode::Interactive);
    let r = datafree_train(&cfg, &mut |_| {}, &mut NoHumans);
    assert!(matches!(r, Err(DataFreeError::PendingHumanReviews(_))), "{r:?}");
}

#[test]
fn seeded_loop_is_deterministic() {
    let cfg = small(7, HitlMode::AutoOracle);
    let a = datafree_train(&cfg, &mut |_| {}, &mut NoHumans).unwrap();
    let b = datafree_train(&cfg, &mut |_| {}, &mut NoHumans).unwrap();
    assert_eq!(a, b);
}

#[test]
fn external_judge_over_http() {
    let (url, hits) = spawn_judge(JudgeBehaviour::Identity);
    let mut cfg = small(8, HitlMode::AutoOracle);
    cfg.iterations = 1;
    cfg.judges = vec![JudgeSpec::builtin(JudgeKind::OracleDistance), JudgeSpec::external(url)];
    let state = ChainState::init(&cfg.train_cfg).unwrap();
    let draft = draft_iteration(&state, &cfg, 1, &GrammarPrompts, &HttpJudgeClient::default()).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 6);
    for (set, route) in draft.sets() {
        assert_eq!(set.rankings["judge1_external"].order(), &[0, 1, 2, 3]);
        let oracle_top = set.rankings["judge0_oracle_distance"].top();
        let want = if oracle_top == 0 { RouteOutcome::AutoAccepted(0) } else { RouteOutcome::NeedsHuman };
        assert_eq!(route, want);
    }
}

#[test]
fn failing_external_judge_routes_to_human() {
    for behaviour in [JudgeBehaviour::Unavailable, JudgeBehaviour::Duplicate] {
        let (url, _) = spawn_judge(behaviour);
        let mut cfg = small(9, HitlMode::AutoOracle);
        cfg.iterations = 1;
        cfg.judges.push(JudgeSpec::external(url));
        let out = datafree_train(&cfg, &mut |_| {}, &mut NoHumans).unwrap();
        let r = &out.report.iterations[0];
        assert_eq!(r.judge_failures, 6, "{behaviour:?}");
        assert_eq!(r.auto_accepted, 0);
        assert_eq!(r.human_accepted, 6);
    }
    // Nothing listens on a just-released port.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = small(9, HitlMode::AutoDiscard);
    cfg.iterations = 1;
    cfg.judges.push(JudgeSpec::external(format!("http://127.0.0.1:{port}/rank")));
    let out = datafree_train(&cfg, &mut |_| {}, &mut NoHumans).unwrap();
    assert_eq!(out.report.iterations[0].judge_failures, 6);
    assert!(out.report.iterations[0].skipped);
}

#[test]
fn config_validation() {
    let bad = |f: &dyn Fn(&mut DataFreeConfig)| {
        let mut c = DataFreeConfig::default();
        f(&mut c);
        matches!(datafree_train(&c, &mut |_| {}, &mut NoHumans), Err(DataFreeError::InvalidConfig(_)))
    };
    assert!(bad(&|c| c.iterations = 0));
    assert!(bad(&|c| c.prompts_per_iter = 0));
    assert!(bad(&|c| c.judges.truncate(1)));
    assert!(bad(&|c| c.candidate_noise_sigma = -1.0));
}
