//! Classification calls, label parsing and the F1 metric.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FewShotSet, Label, LabeledExample, PromptCandidate};
use crate::llm::{Backend, BackendError, CompletionRequest};
use crate::seed;
use crate::templates::{self, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prediction {
    Label(Label),
    ParseFailure,
}

impl Prediction {
    pub fn label(self) -> Option<Label> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::ParseFailure => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub text: String,
    pub gold: Label,
    pub predicted: Prediction,
    pub raw_completion: String,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == Prediction::Label(self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub n_evaluated: usize,
    pub metric_name: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

const EXAMPLES_HEADER: &str = "# Examples\n";

/// Fills the `{examples}` and `{text}` slots. With an empty few-shot set
/// the whole `# Examples` section is dropped.
pub fn render_task_prompt(
    p: &PromptCandidate,
    fs: &FewShotSet,
    ex: &LabeledExample,
) -> Result<String, TemplateError> {
    let count = templates::count_slot(&p.template, "text");
    if count != 1 {
        return Err(TemplateError::SlotCount {
            template: "task".into(),
            slot: "text".into(),
            count,
        });
    }
    let mut template = p.template.clone();
    if fs.is_empty() {
        if let Some(slot) = templates::slots(&template).into_iter().find(|s| s.name == "examples") {
            let mut start = slot.range.start;
            if template[..start].ends_with(EXAMPLES_HEADER) {
                start -= EXAMPLES_HEADER.len();
            }
            let mut end = slot.range.end;
            if template[end..].starts_with("\n\n") {
                end += 2;
            }
            template.replace_range(start..end, "");
        }
    }
    let shots = fs.render();
    Ok(templates::fill(&template, &[("examples", &shots), ("text", &ex.text)]))
}

/// First standalone "yes"/"no" token, ignoring case and surrounding
/// punctuation.
pub fn parse_label(completion: &str) -> Prediction {
    for token in completion.split_whitespace() {
        let word = token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        match word.as_str() {
            "yes" => return Prediction::Label(Label::Positive),
            "no" => return Prediction::Label(Label::Negative),
            _ => {}
        }
    }
    Prediction::ParseFailure
}

/// One temperature-0 classification call per example, fanned out in
/// parallel. Records come back in input order.
pub fn evaluate<B: Backend + ?Sized>(
    backend: &B,
    p: &PromptCandidate,
    fs: &FewShotSet,
    exs: &[LabeledExample],
) -> Result<Vec<PredictionRecord>, EvalError> {
    let prompts = exs
        .iter()
        .map(|ex| render_task_prompt(p, fs, ex))
        .collect::<Result<Vec<_>, _>>()?;
    prompts
        .into_par_iter()
        .zip(exs.par_iter())
        .map(|(prompt, ex)| {
            let resp = backend.complete(&CompletionRequest::classify(prompt))?;
            let raw = resp.texts.into_iter().next().unwrap_or_default();
            Ok(PredictionRecord {
                example_id: ex.id.clone(),
                text: ex.text.clone(),
                gold: ex.label,
                predicted: parse_label(&raw),
                raw_completion: raw,
            })
        })
        .collect()
}

/// Binary F1 on the positive class. A factor with a zero denominator is
/// taken as 0, and so is the score of an empty list.
pub fn f1_score(records: &[PredictionRecord]) -> MetricScore {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for r in records {
        let said_yes = r.predicted == Prediction::Label(Label::Positive);
        match (r.gold, said_yes) {
            (Label::Positive, true) => tp += 1,
            (Label::Negative, true) => fp += 1,
            (Label::Positive, false) => fneg += 1,
            (Label::Negative, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let value = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricScore {
        value,
        n_evaluated: records.len(),
        metric_name: "f1".into(),
    }
}

/// Fraction of records predicted correctly; 0 for an empty list.
pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64
}

/// Incorrect records (parse failures included), shuffled under `seed` and
/// cut into groups of `group_size`. The last group may be short.
pub fn collect_errors(records: &[PredictionRecord], group_size: usize, seed: u64) -> Vec<Vec<PredictionRecord>> {
    assert!(group_size >= 1, "group_size must be at least 1");
    let mut errors: Vec<PredictionRecord> = records.iter().filter(|r| !r.correct()).cloned().collect();
    errors.shuffle(&mut seed::rng_for(seed, seed::stream::EXPAND, 0xe77));
    errors.chunks(group_size).map(<[_]>::to_vec).collect()
}

/// Error blocks as fed into the gradient and edit meta-prompts.
pub fn render_error_string(group: &[PredictionRecord]) -> String {
    group
        .iter()
        .map(|r| {
            let pred = match r.predicted {
                Prediction::Label(l) => l.answer(),
                Prediction::ParseFailure => "N/A",
            };
            format!("Text: {}\nLabel: {}\nPrediction: {}", r.text, r.gold, pred)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{synthetic_dataset, SimBackend, SimProfile};
    use crate::templates::ETHOS_PROMPT;

    fn ex(id: &str, text: &str, label: Label) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            text: text.into(),
            label,
        }
    }

    fn rec(gold: Label, predicted: Prediction) -> PredictionRecord {
        PredictionRecord {
            example_id: "x".into(),
            text: "t".into(),
            gold,
            predicted,
            raw_completion: String::new(),
        }
    }

    #[test]
    fn renders_ethos_with_shots() {
        let p = PromptCandidate::initial(ETHOS_PROMPT).unwrap();
        let fs = FewShotSet {
            examples: vec![ex("a", "first", Label::Positive), ex("b", "second", Label::Negative)],
        };
        let out = render_task_prompt(&p, &fs, &ex("c", "input text", Label::Negative)).unwrap();
        assert!(out.starts_with("# Task\nIs the following text hate speech?"));
        assert!(out.contains("# Examples\nText: first\nLabel: Yes\n\nText: second\nLabel: No\n\n# Prediction"));
        assert!(out.ends_with("Text: input text\nLabel:"));
    }

    #[test]
    fn zero_shot_drops_examples_section() {
        let p = PromptCandidate::initial(ETHOS_PROMPT).unwrap();
        let out = render_task_prompt(&p, &FewShotSet::default(), &ex("c", "x", Label::Negative)).unwrap();
        assert!(!out.contains("# Examples"));
        assert!(out.contains("Answer Yes or No as labels\n\n# Prediction\nText: x\nLabel:"));
    }

    #[test]
    fn missing_text_slot_is_an_error() {
        let mut p = PromptCandidate::initial(ETHOS_PROMPT).unwrap();
        p.template = "no slot here".into();
        assert!(render_task_prompt(&p, &FewShotSet::default(), &ex("c", "x", Label::Negative)).is_err());
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_label("Yes"), Prediction::Label(Label::Positive));
        assert_eq!(parse_label("  no."), Prediction::Label(Label::Negative));
        assert_eq!(parse_label("I cannot determine this."), Prediction::ParseFailure);
        assert_eq!(parse_label("Label: YES!"), Prediction::Label(Label::Positive));
        assert_eq!(parse_label("nothing"), Prediction::ParseFailure);
        assert_eq!(parse_label(""), Prediction::ParseFailure);
    }

    #[test]
    fn f1_cases() {
        use Label::*;
        let yes = Prediction::Label(Positive);
        let no = Prediction::Label(Negative);
        let perfect = [rec(Positive, yes), rec(Negative, no)];
        assert_eq!(f1_score(&perfect).value, 1.0);
        let mixed = [
            rec(Positive, yes),
            rec(Positive, yes),
            rec(Negative, yes),
            rec(Positive, no),
        ];
        assert!((f1_score(&mixed).value - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_score(&[rec(Negative, no)]).value, 0.0);
        assert_eq!(f1_score(&[]).value, 0.0);
        // parse failure on a positive is a false negative
        let pf = [rec(Positive, yes), rec(Positive, Prediction::ParseFailure)];
        assert!((f1_score(&pf).value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn error_grouping() {
        let records: Vec<_> = (0..12)
            .map(|i| {
                let mut r = rec(Label::Positive, Prediction::Label(if i < 9 { Label::Negative } else { Label::Positive }));
                r.example_id = i.to_string();
                r
            })
            .collect();
        let groups = collect_errors(&records, 4, 5);
        assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 1]);
        assert_eq!(groups, collect_errors(&records, 4, 5));
        assert!(collect_errors(&records[9..], 4, 5).is_empty());
    }

    #[test]
    fn error_string_shape() {
        let mut a = rec(Label::Positive, Prediction::Label(Label::Negative));
        a.text = "one".into();
        let mut b = rec(Label::Negative, Prediction::ParseFailure);
        b.text = "two".into();
        assert_eq!(
            render_error_string(&[a, b]),
            "Text: one\nLabel: Yes\nPrediction: No\n\nText: two\nLabel: No\nPrediction: N/A"
        );
    }

    #[test]
    fn evaluate_against_degenerate_oracles() {
        let ds = synthetic_dataset(10, 2);
        let p = PromptCandidate::initial(ETHOS_PROMPT).unwrap();
        for (acc, want) in [(1.0, 10), (0.0, 0)] {
            let sim = SimBackend::new(SimProfile::fixed(acc), 0, &ds.examples).unwrap();
            let records = evaluate(&sim, &p, &FewShotSet::default(), &ds.examples).unwrap();
            assert_eq!(records.len(), 10);
            assert_eq!(records.iter().filter(|r| r.correct()).count(), want);
            assert!(records.iter().zip(&ds.examples).all(|(r, e)| r.example_id == e.id));
        }
        let sim = SimBackend::new(SimProfile::fixed(1.0), 0, &ds.examples).unwrap();
        assert!(evaluate(&sim, &p, &FewShotSet::default(), &[]).unwrap().is_empty());
    }
}
