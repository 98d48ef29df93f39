#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use poetgen_core::vocab::{PrunedVocabulary, Vocabulary};

/// The demo vocabulary, pruned once per test binary.
pub fn demo() -> Arc<PrunedVocabulary> {
    static VOCAB: OnceLock<Arc<PrunedVocabulary>> = OnceLock::new();
    VOCAB.get_or_init(|| Arc::new(Vocabulary::demo().prune())).clone()
}

/// Counts written by the Python generator, independent of the Rust code.
pub fn manifest() -> serde_json::Value {
    serde_json::from_str(include_str!("../fixtures/demo_vocab.manifest.json")).unwrap()
}

pub const FIXTURE_POEM_1: &str = "笑口频开深院，更说秋风天气。心事向人知，却好兴高采烈。休觅，休觅，酒到不知醒地。";
pub const FIXTURE_POEM_2: &str = "生日恰逢今日，母爱万金难拟。恩重更情浓，岁岁同歌同醉。同醉，同醉，寿星高上天际。";
