// SPDX-License-Identifier: MIT OR Apache-2.0

use corrlat::datamodel::{
    read_store, write_store, ActivationRecord, ActivationStore, ConfidencePayload, HiddenStates, PromptKind,
    N_LEVELS,
};
use corrlat::Error;
use proptest::prelude::*;

fn bits(xs: &[f32]) -> Vec<u32> {
    xs.iter().map(|x| x.to_bits()).collect()
}

type Bits = (Vec<u32>, Option<Vec<u32>>, Option<(Option<Vec<u32>>, Option<u32>)>);

fn record_bits(r: &ActivationRecord) -> Bits {
    (
        bits(r.hidden.as_slice()),
        r.token_logprobs.as_deref().map(bits),
        r.confidence
            .as_ref()
            .map(|c| (c.level_joint_probs.map(|l| bits(&l)), c.p_true.map(f32::to_bits))),
    )
}

fn arb_kind() -> impl Strategy<Value = PromptKind> {
    prop_oneof![Just(PromptKind::FitCorrect), Just(PromptKind::FitIncorrect), Just(PromptKind::Eval)]
}

fn arb_confidence() -> impl Strategy<Value = Option<ConfidencePayload>> {
    let levels = proptest::option::of(proptest::array::uniform7(0.0f32..=1.0));
    let p = proptest::option::of(0.0f32..=1.0);
    proptest::option::of((levels, p).prop_filter_map("empty payload", |(l, p)| {
        (l.is_some() || p.is_some()).then_some(ConfidencePayload {
            level_joint_probs: l,
            p_true: p,
        })
    }))
}

fn arb_store() -> impl Strategy<Value = Vec<ActivationRecord>> {
    (1usize..4, 1usize..6, 1usize..8).prop_flat_map(|(l, d, n)| {
        let rec = (
            proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL, l * d),
            proptest::option::of(proptest::collection::vec(-50.0f32..=0.0, 0..6)),
            arb_confidence(),
            arb_kind(),
            "[a-z\u{e9}\u{4e2d}/_-]{1,6}",
        );
        proptest::collection::vec(rec, n).prop_map(move |recs| {
            recs.into_iter()
                .enumerate()
                .map(|(i, (hidden, logprobs, confidence, kind, task))| ActivationRecord {
                    record_id: format!("r{i}"),
                    task_id: task,
                    candidate_id: format!("c{i}"),
                    prompt_kind: kind,
                    hidden: HiddenStates::new(l, d, hidden).unwrap(),
                    token_logprobs: logprobs,
                    confidence,
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn bytes_round_trip_bitwise(records in arb_store()) {
        let store = ActivationStore::new(records).unwrap();
        let bytes = store.to_bytes();
        let back = ActivationStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for (a, b) in store.records().iter().zip(back.records()) {
            prop_assert_eq!(&a.record_id, &b.record_id);
            prop_assert_eq!(&a.task_id, &b.task_id);
            prop_assert_eq!(a.prompt_kind, b.prompt_kind);
            prop_assert_eq!(record_bits(a), record_bits(b));
        }
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_strict_prefix_is_rejected(records in arb_store(), cut in 0.0f64..1.0) {
        let bytes = ActivationStore::new(records).unwrap().to_bytes();
        let n = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(ActivationStore::from_bytes(&bytes[..n]).is_err());
    }
}

#[test]
fn file_round_trip_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.acts");
    let rec = ActivationRecord {
        record_id: "x".into(),
        task_id: "t".into(),
        candidate_id: "c".into(),
        prompt_kind: PromptKind::Eval,
        hidden: HiddenStates::from_rows(vec![vec![1.5, -0.0], vec![f32::MIN_POSITIVE, 3.0]]).unwrap(),
        token_logprobs: Some(vec![-0.25, 0.0]),
        confidence: Some(ConfidencePayload {
            level_joint_probs: Some([0.5; N_LEVELS]),
            p_true: None,
        }),
    };
    let summary = write_store(vec![rec.clone()], &path).unwrap();
    assert_eq!(summary.record_count, 1);
    assert_eq!(summary.n_layers, 2);
    let back = read_store(&path).unwrap();
    assert_eq!(back.records()[0], rec);
    assert_eq!(back.records()[0].hidden.as_slice()[1].to_bits(), (-0.0f32).to_bits());

    let missing = read_store(dir.path().join("nope.acts")).unwrap_err();
    assert!(missing.is_io());
    assert!(matches!(read_store(dir.path()), Err(Error::Io { .. })));
}
