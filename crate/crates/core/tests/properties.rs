mod common;

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use promptbeam::analysis::{agreement_table, z_score};
use promptbeam::eval::{accuracy, assign_splits, bleu, macro_f1, sample_eval_set, Split, SplitRatios, Task};
use promptbeam::search::{self, read_transcript, Record, TRANSCRIPT_FILE};

fn numeric_task(n: usize) -> Task {
    let mut text = String::from(
        r#"{"id":"t","name":"t","metric":"accuracy","answer_kind":"numeric","simple_task_prompt":"Solve."}"#,
    );
    for i in 0..n {
        text.push_str(&format!("\n{{\"id\":\"i{i}\",\"input\":\"{i}\",\"gold\":\"{i}\"}}"));
    }
    Task::from_reader(text.as_bytes(), "t").unwrap()
}

fn labelled() -> impl Strategy<Value = (Vec<Option<u8>>, Vec<u8>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(proptest::option::weighted(0.9, 0u8..5), n),
            proptest::collection::vec(0u8..5, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_stay_in_unit_interval((preds, golds) in labelled()) {
        let acc = accuracy(&preds, &golds).unwrap();
        let f1 = macro_f1(&preds, &golds, &[0, 1, 2, 3, 4]).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&f1));
        let perfect: Vec<Option<u8>> = golds.iter().copied().map(Some).collect();
        prop_assert_eq!(accuracy(&perfect, &golds).unwrap(), 1.0);
        prop_assert_eq!(macro_f1(&perfect, &golds, &[0, 1, 2, 3, 4]).unwrap(), 1.0);
    }

    #[test]
    fn bleu_bounds(a in "[a-d ]{0,30}", b in "[a-d ]{0,30}") {
        let s = bleu(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s), "bleu {}", s);
        if !a.trim().is_empty() {
            prop_assert!((bleu(&a, &a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_partition_instances(n in 3usize..300, seed: u64) {
        let task = assign_splits(&numeric_task(n), SplitRatios::default(), seed).unwrap();
        let (train, dev, test) = SplitRatios::default().counts(n);
        let mut seen = HashSet::new();
        for (split, want) in [(Split::Train, train), (Split::Dev, dev), (Split::Test, test)] {
            let ids: Vec<_> = task.split_instances(split).map(|i| i.id.clone()).collect();
            prop_assert_eq!(ids.len(), want);
            for id in ids {
                prop_assert!(seen.insert(id));
            }
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(assign_splits(&numeric_task(n), SplitRatios::default(), seed).unwrap(), task);
    }

    #[test]
    fn samples_are_bounded_and_reproducible(n in 3usize..120, k in 1usize..30, seed: u64) {
        let tasks = vec![assign_splits(&numeric_task(n), SplitRatios::default(), 0).unwrap()];
        let a = sample_eval_set(&tasks, k, seed, Split::Train).unwrap();
        let available = tasks[0].split_instances(Split::Train).count();
        prop_assert_eq!(a.len(), k.min(available));
        let distinct: HashSet<_> = a.items.iter().map(|i| &i.instance_id).collect();
        prop_assert_eq!(distinct.len(), a.len());
        prop_assert_eq!(sample_eval_set(&tasks, k, seed, Split::Train).unwrap(), a);
    }

    #[test]
    fn z_score_sign_follows_excess(n in 1usize..500, p in 0.01f64..0.99, frac in 0.0f64..=1.0) {
        let observed = ((n as f64) * frac).round() as usize;
        let z = z_score(observed, n, p).unwrap();
        let excess = observed as f64 - n as f64 * p;
        prop_assert!(z == 0.0 || z.signum() == excess.signum());
        prop_assert_eq!(z_score(observed, n, 0.0), None);
        prop_assert_eq!(z_score(0, 0, p), None);
    }

    #[test]
    fn agreement_cells_partition(answers in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let a: BTreeMap<String, bool> = answers.iter().enumerate().map(|(i, x)| (format!("q{i}"), x.0)).collect();
        let b: BTreeMap<String, bool> = answers.iter().enumerate().map(|(i, x)| (format!("q{i}"), x.1)).collect();
        let t = agreement_table(&a, &b).unwrap();
        prop_assert_eq!(t.questions, answers.len());
        let sum = t.both_correct + t.only_a_correct + t.only_b_correct + t.both_wrong;
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Beam, dedup and bandit bookkeeping hold for arbitrary search settings.
    #[test]
    fn search_invariants(
        seed in 0u64..1000,
        beam_size in 1usize..5,
        k in 1usize..6,
        shortlist in 1usize..12,
        max_components in 0usize..4,
        elitism: bool,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let tasks = vec![
            common::write_mc_task(dir.path(), "alpha", "Pick one.", 15),
            common::write_mc_task(dir.path(), "beta", "Choose.", 15),
        ];
        let mut config = common::base_config(common::data_corpus(), tasks, common::hash_mock());
        config.seed = seed;
        config.beam_size = beam_size;
        config.k = k;
        config.shortlist_size = shortlist;
        config.max_components = max_components;
        config.elitism = elitism;
        config.steps = 3;
        let run = dir.path().join("run");
        let result = search::run(config, &run).unwrap();
        let records = read_transcript(run.join(TRANSCRIPT_FILE)).unwrap();

        let mut rewarded = 0u64;
        let mut iterations = 0;
        let mut candidate_keys = HashSet::new();
        for record in &records {
            match record {
                Record::Candidate(c) => {
                    prop_assert!(candidate_keys.insert((c.iteration, c.key.clone())), "duplicate candidate {}", c.key);
                    if max_components > 0 {
                        prop_assert!(c.prompt.len() <= max_components);
                    }
                    if c.reward.is_some() {
                        rewarded += 1;
                        prop_assert_eq!(c.reward, c.parent_score.map(|p| c.score - p));
                    }
                }
                Record::Iteration(it) => {
                    iterations += 1;
                    prop_assert!(!it.beam.is_empty() && it.beam.len() <= beam_size);
                    prop_assert!(it.shortlist.len() <= shortlist);
                    let keys: HashSet<_> = it.beam.iter().map(|e| &e.key).collect();
                    prop_assert_eq!(keys.len(), it.beam.len());
                    for pair in it.beam.windows(2) {
                        let (a, b) = (pair[0].score.unwrap(), pair[1].score.unwrap());
                        prop_assert!(a > b || (a == b && pair[0].key < pair[1].key));
                    }
                    prop_assert_eq!(it.best_score, it.beam[0].score.unwrap());
                    prop_assert_eq!(it.bandit_n, rewarded);
                }
                _ => {}
            }
        }
        prop_assert_eq!(iterations, 3);
        prop_assert!(records.iter().any(|r| matches!(r, Record::Result(_))));
        if max_components > 0 {
            prop_assert!(result.best_prompt.len() <= max_components);
        }
    }
}
