use std::collections::HashSet;

use super::*;
use crate::frontend::{synth_dataset, SynthSpec};
use crate::Error;
use proptest::prelude::*;

fn synth(phrases: usize, utts: usize) -> Vec<Utterance> {
    synth_dataset(&SynthSpec {
        num_phrases: phrases,
        utterances_per_phrase: utts,
        frames_per_utterance: 4,
        ..SynthSpec::default()
    })
    .unwrap()
    .to_utterances()
}

#[test]
fn default_batch_recipe() {
    let data = synth(12, 20);
    let b = sample_batch(&data, 8, 10, 3).unwrap();
    assert_eq!(b.num_phrases(), 8);
    assert_eq!(b.indices().len(), 80);
    let enroll: usize = (0..8).map(|i| b.enrollment_indices(i).len()).sum();
    let test: usize = (0..8).map(|i| b.test_indices(i).len()).sum();
    assert_eq!((enroll, test), (40, 40));
    for i in 0..8 {
        for &u in b.indices()[i * 10..(i + 1) * 10].iter() {
            assert_eq!(data[u].phrase, b.phrases()[i]);
        }
    }
}

#[test]
fn minimal_batch() {
    let data = synth(2, 2);
    let b = sample_batch(&data, 2, 2, 0).unwrap();
    for i in 0..2 {
        assert_eq!(b.enrollment_indices(i).len(), 1);
        assert_eq!(b.test_indices(i).len(), 1);
    }
}

#[test]
fn sampling_is_seeded() {
    let data = synth(10, 12);
    assert_eq!(sample_batch(&data, 4, 6, 9).unwrap(), sample_batch(&data, 4, 6, 9).unwrap());
    assert_ne!(sample_batch(&data, 4, 6, 9).unwrap(), sample_batch(&data, 4, 6, 10).unwrap());
}

#[test]
fn parity_roles_follow_one_based_j() {
    // 1-based j = slot + 1; odd j enroll.
    for slot in 0..10 {
        let j = slot + 1;
        assert_eq!(Batch::is_enrollment_slot(slot), j % 2 != 0);
    }
}

#[test]
fn capacity_errors_state_counts() {
    let data = synth(3, 5);
    let err = sample_batch(&data, 4, 4, 0).unwrap_err();
    assert!(matches!(err, Error::Capacity(_)));
    assert!(err.to_string().contains("found 3"));
    assert!(sample_batch(&data, 2, 6, 0).is_err());
    assert!(sample_batch(&data, 1, 2, 0).is_err());
    assert!(sample_batch(&data, 2, 3, 0).is_err());
}

#[test]
fn eval_split_counts() {
    let data = synth(3, 25);
    let s = make_eval_split(&data, 10, 1).unwrap();
    for p in &s.phrases {
        assert_eq!(p.enrollment.len(), 10);
        assert_eq!(p.test.len(), 15);
    }
    assert_eq!(s, make_eval_split(&data, 10, 1).unwrap());
}

#[test]
fn eval_split_needs_test_utterances() {
    let data = synth(2, 10);
    let err = make_eval_split(&data, 10, 0).unwrap_err();
    assert!(err.to_string().contains("phrase00"));
}

proptest! {
    #[test]
    fn batches_never_repeat_utterances(seed in 0u64..1000, x in 2usize..6, half in 1usize..5) {
        let data = synth(6, 10);
        let b = sample_batch(&data, x, half * 2, seed).unwrap();
        let set: HashSet<_> = b.indices().iter().collect();
        prop_assert_eq!(set.len(), b.indices().len());
    }

    #[test]
    fn eval_split_partitions_each_phrase(seed in 0u64..1000, k in 1usize..8) {
        let data = synth(4, 9);
        let s = make_eval_split(&data, k, seed).unwrap();
        for p in &s.phrases {
            let e: HashSet<_> = p.enrollment.iter().collect();
            let t: HashSet<_> = p.test.iter().collect();
            prop_assert!(e.is_disjoint(&t));
            let all: HashSet<_> = data.iter().enumerate().filter(|(_, u)| u.phrase == p.phrase).map(|(i, _)| i).collect();
            let union: HashSet<_> = e.union(&t).map(|v| **v).collect();
            prop_assert_eq!(union, all);
        }
    }
}
