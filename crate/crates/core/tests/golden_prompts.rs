mod common;

use poetgen_core::forms::FormRegistry;
use poetgen_core::prompting::{build_baseline_prompt_default, build_generation_prompt};

use common::FIXTURE_POEM_2;

#[test]
fn rumengling_layouts_match_golden_files() {
    let registry = FormRegistry::bundled();
    let form = registry.get("Rumengling").unwrap();
    assert_eq!(
        form.masked_template().as_str(),
        include_str!("golden/rumengling_masked.txt")
    );

    let p = build_generation_prompt("Write me a poem for my mother's birthday.", form).unwrap();
    assert_eq!(p.as_str(), include_str!("golden/generation_rumengling.txt"));

    let poem = FIXTURE_POEM_2.replace('，', "，\n").replace('。', "。\n");
    let full = p.with_response(poem.trim_end());
    assert_eq!(
        full.as_str(),
        include_str!("golden/generation_rumengling_with_response.txt")
    );

    let b = build_baseline_prompt_default(form, "兴高采烈").unwrap();
    assert_eq!(b.as_str(), include_str!("golden/baseline_rumengling.txt"));
}

#[test]
fn golden_generation_prompt_counts() {
    let golden = include_str!("golden/generation_rumengling.txt");
    let output = golden
        .split("Output: ")
        .nth(1)
        .unwrap()
        .split("\n[EOP]")
        .next()
        .unwrap();
    assert_eq!(output.matches("[M]").count(), 33);
    // The instruction line names the mask marker once more.
    assert_eq!(golden.matches("[M]").count(), 34);
}
