//! Rendered meta-prompts and task prompts against hand-written golden files.

use protegi::eval::render_task_prompt;
use protegi::{FewShotSet, Label, LabeledExample, MetaPromptSet, PromptCandidate, TaskPreset};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn ex(id: &str, text: &str, label: Label) -> LabeledExample {
    LabeledExample {
        id: id.into(),
        text: text.into(),
        label,
    }
}

#[test]
fn gradient_prompt() {
    let m = MetaPromptSet::default();
    let got = m.render_gradient("PROMPT", "ERRORS", 4);
    assert_eq!(got, golden("gradient.txt"));
    assert!(got.contains("give 4 reasons why the prompt could"));
}

#[test]
fn edit_prompt() {
    let got = MetaPromptSet::default().render_edit("PROMPT", "ERRORS", "GRADIENT", 1);
    assert_eq!(got, golden("edit.txt"));
    assert!(got.contains("Based on the above information, I wrote"));
}

#[test]
fn paraphrase_prompt() {
    let got = MetaPromptSet::default().render_paraphrase("INSTRUCTION");
    assert_eq!(got, golden("paraphrase.txt"));
    assert!(got.starts_with("Generate a variation of the following instruction"));
}

#[test]
fn task_prompts() {
    let shots = FewShotSet {
        examples: vec![ex("a", "first shot", Label::Positive), ex("b", "second shot", Label::Negative)],
    };
    let input = ex("x", "the input text", Label::Positive);
    for preset in TaskPreset::ALL {
        let p = PromptCandidate::initial(preset.template()).unwrap();
        let got = render_task_prompt(&p, &shots, &input).unwrap();
        assert_eq!(got, golden(&format!("task_{}.txt", preset.name())), "{}", preset.name());
        assert!(got.contains("Answer Yes or No as labels"));
    }
}

#[test]
fn overridden_meta_prompts_load_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("paraphrase.txt"), "Reword: {prompt_instruction}").unwrap();
    let m = MetaPromptSet::load_dir(dir.path()).unwrap();
    assert_eq!(m.render_paraphrase("x"), "Reword: x");
    assert_eq!(m.render_gradient("PROMPT", "ERRORS", 4), golden("gradient.txt"));

    std::fs::write(dir.path().join("edit.txt"), "no slots here").unwrap();
    assert!(MetaPromptSet::load_dir(dir.path()).is_err());
}
