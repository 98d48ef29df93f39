mod common;

use std::sync::Arc;

use poetgen_core::decoding::{
    Backend, BackendError, Context, DecodeError, DecodePolicy, Decoder, GenerationRequest, NgramBackend, RandomBackend,
    ScriptedBackend, StopReason, UniformBackend,
};
use poetgen_core::forms::FormRegistry;
use poetgen_core::logitmask::Penalty;
use poetgen_core::validation::validate_poem;

use common::{demo, FIXTURE_POEM_1, FIXTURE_POEM_2};

fn decoder() -> Decoder {
    Decoder::new(demo()).unwrap()
}

/// Lays a poem out the way the masked template does: one line per
/// punctuation mark.
fn templated(poem: &str) -> String {
    let mut out = String::new();
    for c in poem.chars() {
        out.push(c);
        if "，。".contains(c) {
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}

#[test]
fn scripted_replay_reproduces_the_fixture() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Rumengling").unwrap();
    let d = decoder();
    for poem in [FIXTURE_POEM_1, FIXTURE_POEM_2] {
        let backend = ScriptedBackend::from_text(d.vocab(), poem).unwrap();
        let request = GenerationRequest {
            user_prompt: "Write me a poem for my mother's birthday.",
            form,
        };
        let result = d.generate(&request, &backend, &DecodePolicy::default()).unwrap();
        assert_eq!(result.text, poem);
        assert_eq!(result.stop_reason, StopReason::Eop);
        assert_eq!(result.steps.len(), poem.chars().count() + 1);
        assert!(validate_poem(&result.text, form).passes);

        // The same poem in template layout also survives strict mode.
        let laid_out = templated(poem);
        let backend = ScriptedBackend::from_text(d.vocab(), &laid_out).unwrap();
        let result = d.generate(&request, &backend, &DecodePolicy::strict()).unwrap();
        assert_eq!(result.text, laid_out);
    }
}

#[test]
fn strict_mode_with_uniform_backend_always_matches_the_form() {
    let registry = FormRegistry::bundled();
    let d = decoder();
    let backend = UniformBackend::new(d.vocab().len());
    for form in registry.forms() {
        for seed in 0..5 {
            let request = GenerationRequest {
                user_prompt: "山水",
                form,
            };
            let result = d
                .generate(&request, &backend, &DecodePolicy::strict().with_seed(seed))
                .unwrap();
            assert_eq!(result.stop_reason, StopReason::Eop);
            assert_eq!(result.text, {
                // Every literal lands exactly where the template puts it.
                let t = form.masked_template();
                let mut chars = result.text.chars();
                t.as_str()
                    .split("[M]")
                    .enumerate()
                    .map(|(i, lit)| {
                        let mut s = String::new();
                        if i > 0 {
                            s.push(chars.next().unwrap());
                        }
                        for _ in lit.chars() {
                            s.push(chars.next().unwrap());
                        }
                        s
                    })
                    .collect::<String>()
            });
            let report = validate_poem(&result.text, form);
            assert!(
                report.passes,
                "{} seed {seed}: {:?}\n{}",
                form.name, report, result.text
            );
        }
    }
}

#[test]
fn no_step_ever_emits_a_long_token() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Qinyuanchun").unwrap();
    let d = decoder();
    let long = d.vocab().long_set().clone();
    // A backend that loves long tokens.
    struct LongLover(Vec<f64>);
    impl Backend for LongLover {
        fn vocab_size(&self) -> usize {
            self.0.len()
        }
        fn logits(&self, _: Context<'_>) -> Result<Vec<f64>, BackendError> {
            Ok(self.0.clone())
        }
    }
    let scores = (0..d.vocab().len())
        .map(|i| if long.contains(i) { 50.0 } else { 0.0 })
        .collect();
    let backend = LongLover(scores);
    for policy in [DecodePolicy::default(), DecodePolicy::strict(), DecodePolicy::greedy()] {
        let request = GenerationRequest {
            user_prompt: "秋",
            form,
        };
        let result = d.generate(&request, &backend, &policy.with_seed(3)).unwrap();
        for step in &result.steps {
            assert!(!long.contains(step.token as usize));
        }
    }
}

#[test]
fn greedy_is_deterministic() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Wuyanjueju").unwrap();
    let d = decoder();
    let backend = RandomBackend::new(d.vocab().len(), 11);
    let request = GenerationRequest {
        user_prompt: "春",
        form,
    };
    let policy = DecodePolicy {
        max_steps: 40,
        ..DecodePolicy::greedy()
    };
    let first = d.generate(&request, &backend, &policy).unwrap();
    for seed in 0..10 {
        let again = d.generate(&request, &backend, &policy.with_seed(seed)).unwrap();
        assert_eq!(again, first);
    }
}

#[test]
fn sampled_runs_depend_only_on_the_seed() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Rumengling").unwrap();
    let d = decoder();
    let backend = RandomBackend::new(d.vocab().len(), 5);
    let request = GenerationRequest {
        user_prompt: "月",
        form,
    };
    let run = |seed| {
        d.generate(&request, &backend, &DecodePolicy::strict().with_seed(seed))
            .unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).text, run(2).text);
}

#[test]
fn max_steps_stops_generation() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Wuyanjueju").unwrap();
    let d = decoder();
    let backend = UniformBackend::new(d.vocab().len());
    // Soft mode with a uniform backend rarely picks [EOP] in time.
    let policy = DecodePolicy {
        max_steps: form.total_chars + form.literal_count() + 1,
        ..DecodePolicy::default()
    };
    let request = GenerationRequest {
        user_prompt: "风",
        form,
    };
    let result = d.generate(&request, &backend, &policy.with_seed(9)).unwrap();
    if result.stop_reason == StopReason::MaxSteps {
        assert_eq!(result.steps.len(), policy.max_steps);
    }
    let short = DecodePolicy { max_steps: 5, ..policy };
    assert!(matches!(
        d.generate(&request, &backend, &short),
        Err(DecodeError::InvalidPolicy(_))
    ));
}

#[test]
fn backend_failure_carries_partial_text() {
    struct Flaky(ScriptedBackend);
    impl Backend for Flaky {
        fn vocab_size(&self) -> usize {
            self.0.vocab_size()
        }
        fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
            if ctx.generated.len() == 3 {
                return Err(BackendError::Unavailable("gone".into()));
            }
            self.0.logits(ctx)
        }
    }
    let registry = FormRegistry::bundled();
    let form = registry.get("Rumengling").unwrap();
    let d = decoder();
    let backend = Flaky(ScriptedBackend::from_text(d.vocab(), FIXTURE_POEM_1).unwrap());
    let request = GenerationRequest { user_prompt: "x", form };
    let err = d.generate(&request, &backend, &DecodePolicy::default()).unwrap_err();
    assert!(matches!(err, DecodeError::Backend { step: 3, .. }));
    assert_eq!(err.partial_text(), Some("笑口频"));
}

#[test]
fn vocabulary_mismatch_and_bad_logits_are_rejected() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Rumengling").unwrap();
    let d = decoder();
    let request = GenerationRequest { user_prompt: "x", form };
    let small = UniformBackend::new(10);
    assert!(matches!(
        d.generate(&request, &small, &DecodePolicy::default()),
        Err(DecodeError::VocabMismatch { .. })
    ));

    struct Nan(usize);
    impl Backend for Nan {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn logits(&self, _: Context<'_>) -> Result<Vec<f64>, BackendError> {
            Ok(vec![f64::NAN; self.0])
        }
    }
    assert!(matches!(
        d.generate(&request, &Nan(d.vocab().len()), &DecodePolicy::default()),
        Err(DecodeError::Backend {
            source: BackendError::Protocol(_),
            ..
        })
    ));
}

#[test]
fn reserved_markers_in_prompts_are_rejected() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Rumengling").unwrap();
    let d = decoder();
    let backend = UniformBackend::new(d.vocab().len());
    for bad in ["", "  ", "please [EOP]", "[M]"] {
        let request = GenerationRequest { user_prompt: bad, form };
        assert!(matches!(
            d.generate(&request, &backend, &DecodePolicy::default()),
            Err(DecodeError::Prompt(_))
        ));
    }
}

#[test]
fn ngram_backend_writes_plausible_chinese() {
    let registry = FormRegistry::bundled();
    let d = decoder();
    let backend = NgramBackend::bundled(d.vocab().clone());
    for name in ["Wuyanjueju", "Rumengling"] {
        let form = registry.get(name).unwrap();
        let request = GenerationRequest {
            user_prompt: "春风",
            form,
        };
        let strict = d
            .generate(&request, &backend, &DecodePolicy::strict().with_seed(1))
            .unwrap();
        assert!(validate_poem(&strict.text, form).passes, "{}", strict.text);
        let soft = d
            .generate(&request, &backend, &DecodePolicy::default().with_seed(1))
            .unwrap();
        assert!(soft.text.chars().any(|c| ('\u{4E00}'..='\u{9FFF}').contains(&c)));
    }
}

#[test]
fn negative_infinity_penalty_behaves_like_the_default() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Qingpingyue").unwrap();
    let vocab = demo();
    let a = Decoder::new(Arc::clone(&vocab)).unwrap();
    let b = Decoder::new(vocab).unwrap().with_penalty(Penalty::neg_infinity());
    let backend = RandomBackend::new(a.vocab().len(), 2);
    let request = GenerationRequest {
        user_prompt: "雨",
        form,
    };
    let policy = DecodePolicy::strict().with_seed(4);
    assert_eq!(
        a.generate(&request, &backend, &policy).unwrap().text,
        b.generate(&request, &backend, &policy).unwrap().text
    );
}
