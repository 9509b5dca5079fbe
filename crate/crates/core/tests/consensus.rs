use sopforge::datafree::{consensus_route, resolve_review, DataFreeError, Resolution, RouteOutcome};
use sopforge::judges::*;
use sopforge::toyworld::{derive_seed, rng_stream, SplitMix64};
use sopforge::video::{Frame, Video};

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn ranking(order: &[usize]) -> Ranking {
    Ranking::new(order.iter().map(|&i| i as i64).collect()).unwrap()
}

fn brute_force(orders: &[Vec<usize>]) -> RouteOutcome {
    let tops: Vec<usize> = orders.iter().map(|o| o[0]).collect();
    if tops.iter().all(|t| *t == tops[0]) {
        RouteOutcome::AutoAccepted(tops[0])
    } else {
        RouteOutcome::NeedsHuman
    }
}

#[test]
fn exhaustive_three_candidates_two_judges() {
    let perms = permutations(3);
    assert_eq!(perms.len(), 6);
    let mut pairs = 0;
    let mut accepted = 0;
    for a in &perms {
        for b in &perms {
            let got = consensus_route(&[ranking(a), ranking(b)]).unwrap();
            let want = brute_force(&[a.clone(), b.clone()]);
            assert_eq!(got, want, "{a:?} {b:?}");
            pairs += 1;
            accepted += matches!(got, RouteOutcome::AutoAccepted(_)) as usize;
        }
    }
    assert_eq!(pairs, 36);
    // 6 first rankings × 2 second rankings sharing the top.
    assert_eq!(accepted, 12);
}

fn shuffled(rng: &mut SplitMix64, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        v.swap(i, j);
    }
    v
}

#[test]
fn sampled_four_candidates() {
    let mut rng = SplitMix64::new(77);
    let mut accepted = 0;
    for _ in 0..10_000 {
        let judges = 2 + (rng.next_u64() % 2) as usize;
        let orders: Vec<Vec<usize>> = (0..judges).map(|_| shuffled(&mut rng, 4)).collect();
        let rs: Vec<Ranking> = orders.iter().map(|o| ranking(o)).collect();
        let got = consensus_route(&rs).unwrap();
        assert_eq!(got, brute_force(&orders));
        accepted += matches!(got, RouteOutcome::AutoAccepted(_)) as usize;
    }
    assert!(accepted > 1000 && accepted < 4000, "{accepted}");
}

#[test]
fn routing_rejects_bad_inputs() {
    assert!(matches!(consensus_route(&[ranking(&[0, 1])]), Err(DataFreeError::TooFewRankings(1))));
    assert!(matches!(consensus_route(&[]), Err(DataFreeError::TooFewRankings(0))));
    assert!(matches!(
        consensus_route(&[ranking(&[0, 1]), ranking(&[0, 1, 2])]),
        Err(DataFreeError::CountMismatch(_))
    ));
}

#[test]
fn ranking_must_be_permutation() {
    assert!(Ranking::new(vec![2, 0, 1, 3]).is_ok());
    for bad in [vec![0, 0, 1], vec![0, 1, 3], vec![-1, 0, 1], vec![]] {
        assert!(Ranking::new(bad.clone()).is_err(), "{bad:?}");
    }
    let r: Ranking = serde_json::from_str("[1,0,2]").unwrap();
    assert_eq!(r.top(), 1);
    assert!(serde_json::from_str::<Ranking>("[1,1,2]").is_err());
}

fn video(seed: u64, t: usize) -> Video {
    Video::from_frames(
        (0..t)
            .map(|i| Frame::new(8, 8, rng_stream(derive_seed(seed, &i.to_string()), 64)).unwrap())
            .collect(),
    )
    .unwrap()
}

fn mse(a: &Video, b: &Video) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for (x, y) in a.flat().zip(b.flat()) {
        s += (x - y) * (x - y);
        n += 1.0;
    }
    s / n
}

#[test]
fn oracle_judge_sorts_by_distance() {
    for seed in 0..50u64 {
        let target = video(seed, 4);
        let mut cands: Vec<Video> = (1..4).map(|j| video(seed * 10 + j, 4)).collect();
        let slot = (seed % 4) as usize;
        cands.insert(slot, target.clone());
        let r = oracle_judge_rank(&cands, &target).unwrap();
        assert_eq!(r.top(), slot);
        let d: Vec<f64> = r.order().iter().map(|&i| mse(&cands[i], &target)).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]), "{d:?}");
    }
}

#[test]
fn quality_judge_is_sorted_and_stable() {
    for seed in 0..50u64 {
        let cands: Vec<Video> = (0..4).map(|j| video(seed * 7 + j, 5)).collect();
        let r = quality_judge_rank(&cands).unwrap();
        let s: Vec<f64> = r.order().iter().map(|&i| quality_score(&cands[i])).collect();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(r, quality_judge_rank(&cands).unwrap());
    }
    let same = vec![video(1, 3); 4];
    assert_eq!(quality_judge_rank(&same).unwrap().order(), &[0, 1, 2, 3]);
}

#[test]
fn judges_need_two_candidates_of_one_shape() {
    let one = vec![video(0, 3)];
    assert!(matches!(quality_judge_rank(&one), Err(JudgeError::TooFewCandidates(_))));
    let mixed = vec![video(0, 3), video(1, 4)];
    assert!(matches!(oracle_judge_rank(&mixed, &video(2, 3)), Err(JudgeError::DimensionMismatch(_))));
    let ctx = JudgeContext { criterion: criterion(1).unwrap(), target: None };
    let spec = JudgeSpec::builtin(JudgeKind::OracleDistance);
    assert!(matches!(
        rank_candidates(&spec, &[video(0, 3), video(1, 3)], ctx),
        Err(JudgeError::MissingTarget)
    ));
}

#[test]
fn criteria_catalog_draws_cover_all_ids() {
    let cat = criteria_catalog();
    assert_eq!(cat.len(), 10);
    assert_eq!(cat.iter().map(|c| c.id).collect::<Vec<_>>(), (1..=10).collect::<Vec<u8>>());
    let mut seen = [false; 10];
    for s in 0..500 {
        seen[draw_criterion(s).id as usize - 1] = true;
    }
    assert!(seen.iter().all(|x| *x));
    assert!(criterion(0).is_err() && criterion(11).is_err());
}

#[test]
fn discarded_review_is_final() {
    use sopforge::datafree::{CandidateSet, ReviewItem, ReviewStatus};
    use sopforge::toyworld::enhance_prompt;
    use sopforge::video::TextPrompt;
    let set = CandidateSet {
        set_id: "it1-s00".into(),
        prompt: enhance_prompt(&TextPrompt::new("x").unwrap()).unwrap(),
        candidates: (0..4).map(|j| video(j, 2)).collect(),
        gen_seeds: vec![0; 4],
        criterion: criterion(3).unwrap(),
        rankings: Default::default(),
    };
    let mut item = ReviewItem::new(1, set);
    assert!(matches!(resolve_review(&mut item.clone(), Resolution::Accepted(4)), Err(DataFreeError::BadIndex(4))));
    resolve_review(&mut item, Resolution::Discarded).unwrap();
    assert_eq!(item.status, ReviewStatus::Resolved);
    assert!(matches!(
        resolve_review(&mut item, Resolution::Accepted(0)),
        Err(DataFreeError::AlreadyResolved(_))
    ));
}
