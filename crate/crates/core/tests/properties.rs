mod common;

use std::collections::BTreeMap;

use common::toy;
use featdesc::describe::{rank_tokens, Method};
use featdesc::eval::{derive_seed, EvalConfig};
use featdesc::pipeline::store::{pass_rate_ci, read_jsonl, summarize_evals, write_jsonl, Timestamps};
use featdesc::pipeline::{EvalRecord, Metric};
use featdesc::revival::{combo_prompts, token_pool};
use proptest::prelude::*;

fn record(feature: usize, method: usize, metric: bool, pass: bool, score: f64, seed: u64) -> EvalRecord {
    EvalRecord {
        feature: toy().sae_feature(feature),
        description_method: Method::all()[method].clone(),
        metric: if metric { Metric::Output } else { Metric::Input },
        payload: serde_json::json!({ "score": score, "list": [score, -score / 3.0] }),
        pass,
        seeds: BTreeMap::from([("global".to_string(), seed)]),
        timestamps: Timestamps { created_at: "1970-01-01T00:00:00Z".into() },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_matches_a_stable_sort(
        scores in proptest::collection::vec(prop_oneof![Just(0.0f64), Just(1.5), -10.0f64..10.0], 64),
        t in 1usize..=32,
    ) {
        let (top, bottom) = rank_tokens(&scores, t, &toy().tokenizer).unwrap();
        // stable sort by score keeps ties in id order
        let mut desc: Vec<usize> = (0..64).collect();
        desc.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut asc: Vec<usize> = (0..64).collect();
        asc.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        prop_assert_eq!(top.iter().map(|s| s.token_id as usize).collect::<Vec<_>>(), desc[..t].to_vec());
        prop_assert_eq!(bottom.iter().map(|s| s.token_id as usize).collect::<Vec<_>>(), asc[..t].to_vec());
        prop_assert!(top.iter().all(|s| s.score == scores[s.token_id as usize]));
    }

    #[test]
    fn interval_brackets_the_rate(n in 0usize..500, frac in 0.0f64..=1.0) {
        let passes = (n as f64 * frac).floor() as usize;
        let (p, lo, hi) = pass_rate_ci(passes, n);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(lo <= p && p <= hi);
        prop_assert!(((p - lo) - (hi - p)).abs() < 1e-12);
        if n > 0 {
            prop_assert_eq!(p, passes as f64 / n as f64);
        }
    }

    #[test]
    fn eval_store_round_trips_and_summaries_count(
        rows in proptest::collection::vec((0usize..24, 0usize..5, any::<bool>(), any::<bool>(), -1e6f64..1e6, any::<u64>()), 0..30),
    ) {
        let records: Vec<EvalRecord> = rows.iter().map(|&(f, m, k, p, s, seed)| record(f, m, k, p, s, seed)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evals.jsonl");
        write_jsonl(&path, &records).unwrap();
        let back: Vec<EvalRecord> = read_jsonl(&path).unwrap();
        prop_assert_eq!(&back, &records);
        let again = dir.path().join("again.jsonl");
        write_jsonl(&again, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

        let summary = summarize_evals(&records);
        prop_assert_eq!(summary.iter().map(|r| r.n).sum::<usize>(), records.len());
        prop_assert_eq!(summary.iter().map(|r| r.passes).sum::<usize>(), records.iter().filter(|r| r.pass).count());
    }

    #[test]
    fn combination_prompts_follow_the_schedule(
        pool in proptest::collection::vec(2u32..64, 0..20),
        schedule in proptest::collection::vec((1usize..8, 0usize..20), 0..4),
        seed in any::<u64>(),
    ) {
        let prompts = combo_prompts(&pool, &schedule, 0, seed);
        if pool.is_empty() {
            prop_assert!(prompts.is_empty());
        } else {
            let total: usize = schedule.iter().map(|s| s.1).sum();
            prop_assert_eq!(prompts.len(), pool.len() + total);
            prop_assert!(prompts.iter().all(|p| p[0] == 0 && p[1..].iter().all(|t| pool.contains(t))));
            let mut i = pool.len();
            for &(len, count) in &schedule {
                prop_assert!(prompts[i..i + count].iter().all(|p| p.len() == len + 1));
                i += count;
            }
            prop_assert_eq!(prompts, combo_prompts(&pool, &schedule, 0, seed));
        }
    }

    #[test]
    fn token_pool_is_a_special_free_union(a in proptest::collection::vec(0u32..64, 0..12), b in proptest::collection::vec(0u32..64, 0..12)) {
        let tok = &toy().tokenizer;
        let scores = |ids: &[u32]| ids.iter().map(|&i| featdesc::describe::TokenScore {
            token_id: i,
            token_text: tok.piece(i).to_string(),
            score: 0.0,
        }).collect::<Vec<_>>();
        let (sa, sb) = (scores(&a), scores(&b));
        let pool = token_pool(&[&sa, &sb], tok);
        let mut seen = std::collections::HashSet::new();
        prop_assert!(pool.iter().all(|t| seen.insert(*t)));
        prop_assert!(pool.iter().all(|&t| !tok.is_special(t)));
        for t in a.iter().chain(&b) {
            prop_assert_eq!(pool.contains(t), !tok.is_special(*t));
        }
    }

    #[test]
    fn schedule_is_the_full_product(targets in proptest::collection::vec(0.01f64..2.0, 1..4)) {
        let cfg = EvalConfig { kl_targets: targets.clone(), ..EvalConfig::default() };
        let s = cfg.clamp_schedule();
        prop_assert_eq!(s.len(), 2 * targets.len());
        for t in &targets {
            prop_assert_eq!(s.iter().filter(|(x, _)| x == t).count(), 2);
        }
    }

    #[test]
    fn derived_seeds_depend_on_every_part(base in any::<u64>(), a in "[a-z]{1,8}", b in "[a-z]{1,8}") {
        prop_assert_eq!(derive_seed(base, &[&a, &b]), derive_seed(base, &[&a, &b]));
        if a != b {
            prop_assert_ne!(derive_seed(base, &[&a, &b]), derive_seed(base, &[&b, &a]));
        }
        prop_assert_ne!(derive_seed(base, &[&a]), derive_seed(base.wrapping_add(1), &[&a]));
    }
}
