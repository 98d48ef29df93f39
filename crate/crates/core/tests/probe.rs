mod common;

use poetgen_core::charclass::CjkRanges;
use poetgen_core::probe::{build_probe_set, eligible_items, read_items, score_probe, write_items, ProbeError};
use poetgen_core::vocab::{Vocabulary, EXTRA_1};

/// A vocabulary with 5000 two- and three-character Chinese tokens.
fn synthetic() -> Vocabulary {
    let mut tokens: Vec<(u32, Vec<u8>)> = (0..256u32).map(|b| (b, vec![b as u8])).collect();
    let mut next = 256u32;
    let mut push = |bytes: Vec<u8>, tokens: &mut Vec<(u32, Vec<u8>)>| {
        tokens.push((next, bytes));
        next += 1;
    };
    for i in 0..5000u32 {
        let a = char::from_u32(0x4E00 + i).unwrap();
        let b = char::from_u32(0x6000 + i).unwrap();
        let s = if i % 3 == 0 {
            format!("{a}{b}{a}")
        } else {
            format!("{a}{b}")
        };
        push(s.into_bytes(), &mut tokens);
    }
    // Mixed and single-character tokens are not eligible by default.
    push("大X".into(), &mut tokens);
    push("山".into(), &mut tokens);
    push(EXTRA_1.into(), &mut tokens);
    Vocabulary::new(tokens, Vec::<(Vec<u8>, Vec<u8>)>::new(), vec![EXTRA_1.to_string()]).unwrap()
}

#[test]
fn split_sizes_and_determinism() {
    let vocab = synthetic();
    let ranges = CjkRanges::default();
    assert_eq!(eligible_items(&vocab, &ranges, false).len(), 5000);
    assert_eq!(eligible_items(&vocab, &ranges, true).len(), 5001);

    let split = build_probe_set(&vocab, 1000, 7, &ranges, false).unwrap();
    assert_eq!(split.test.len(), 1000);
    assert_eq!(split.train.len(), 4000);
    let again = build_probe_set(&vocab, 1000, 7, &ranges, false).unwrap();
    assert_eq!(split, again);
    let other = build_probe_set(&vocab, 1000, 8, &ranges, false).unwrap();
    assert_ne!(split.test, other.test);

    let mut all: Vec<&str> = split
        .test
        .iter()
        .chain(&split.train)
        .map(|i| i.token.as_str())
        .collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 5000);

    assert_eq!(
        build_probe_set(&vocab, 6000, 7, &ranges, false),
        Err(ProbeError::InsufficientTokens {
            wanted: 6000,
            available: 5000
        })
    );
}

#[test]
fn perfect_answers_score_zero() {
    let vocab = synthetic();
    let split = build_probe_set(&vocab, 1000, 1, &CjkRanges::default(), false).unwrap();
    let outputs: Vec<String> = split.test.iter().map(|i| i.expected()).collect();
    let r = score_probe(&split.test, &outputs).unwrap();
    assert_eq!((r.overall, r.by_char_count, r.n), (0.0, 0.0, 1000));
    assert_eq!(read_items(&write_items(&split.test)).unwrap(), split.test);
}

#[test]
fn demo_vocabulary_has_enough_items_for_a_full_probe() {
    let pv = common::demo();
    let split = build_probe_set(pv.vocabulary(), 1000, 0, &CjkRanges::default(), false).unwrap();
    assert_eq!(split.test.len(), 1000);
    assert!(split.train.len() >= 3000);
}
