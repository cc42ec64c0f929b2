//! Deterministic simulated LLM.
//!
//! Classification accuracy is a known function of the prompt: a base rate
//! plus a bonus for each profile keyword that appears in the template,
//! clamped at a cap. Whether a given (prompt, example) pair is answered
//! correctly is a fixed pseudo-uniform draw, so repeated scoring is exact.
//!
//! The sim also answers the three meta-prompts. Gradients sometimes name a
//! keyword the prompt is missing; edits add any keyword the gradient names;
//! paraphrases reword the framing and only rarely stumble onto a keyword.
//! That gives the optimizer a reachable optimum without any network.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};
use crate::data::{Dataset, Label, LabeledExample, PromptCandidate};
use crate::seed;
use crate::templates::{self, PREDICTION_MARKER, TASK_HEADER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimProfile {
    /// Keyword -> accuracy bonus, matched case-insensitively.
    pub keyword_weights: BTreeMap<String, f64>,
    pub base_accuracy: f64,
    pub cap: f64,
    /// Chance that one sim critique names a keyword the prompt lacks.
    pub gradient_hit_rate: f64,
    /// Chance that one sim paraphrase appends a missing keyword.
    pub paraphrase_hit_rate: f64,
}

impl Default for SimProfile {
    fn default() -> Self {
        Self {
            keyword_weights: BTreeMap::from([
                ("religion".to_string(), 0.15),
                ("targets".to_string(), 0.15),
            ]),
            base_accuracy: 0.55,
            cap: 0.95,
            gradient_hit_rate: 0.5,
            paraphrase_hit_rate: 0.02,
        }
    }
}

impl SimProfile {
    /// A profile with no keywords whose accuracy is exactly `accuracy`.
    pub fn fixed(accuracy: f64) -> Self {
        Self {
            keyword_weights: BTreeMap::new(),
            base_accuracy: accuracy,
            cap: accuracy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let bad = |m: String| Err(BackendError::Config(m));
        if !unit(self.base_accuracy) || !unit(self.cap) || self.base_accuracy > self.cap {
            return bad(format!(
                "sim profile needs 0 <= base_accuracy ({}) <= cap ({}) <= 1",
                self.base_accuracy, self.cap
            ));
        }
        if let Some((k, w)) = self.keyword_weights.iter().find(|(_, w)| !unit(**w)) {
            return bad(format!("sim keyword `{k}` weight {w} outside [0, 1]"));
        }
        if !unit(self.gradient_hit_rate) || !unit(self.paraphrase_hit_rate) {
            return bad("sim hit rates must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn missing_keywords(&self, text: &str) -> Vec<&str> {
        let lower = text.to_lowercase();
        self.keyword_weights
            .iter()
            .filter(|(k, w)| **w > 0.0 && !lower.contains(&k.to_lowercase()))
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// `min(cap, base + Σ weights of keywords found in the template)`.
pub fn sim_accuracy(p: &PromptCandidate, profile: &SimProfile) -> f64 {
    let lower = p.template.to_lowercase();
    let bonus: f64 = profile
        .keyword_weights
        .iter()
        .filter(|(k, _)| lower.contains(&k.to_lowercase()))
        .map(|(_, w)| w)
        .sum();
    (profile.base_accuracy + bonus).min(profile.cap)
}

/// Gold label iff the draw seeded by `(p.id, ex.id)` falls below the
/// prompt's sim accuracy; otherwise the flipped label.
pub fn sim_classify(p: &PromptCandidate, ex: &LabeledExample, profile: &SimProfile) -> Label {
    let u = seed::unit_interval(seed::digest_u64(&[
        b"sim-classify",
        p.id.as_str().as_bytes(),
        ex.id.as_bytes(),
    ]));
    if u < sim_accuracy(p, profile) {
        ex.label
    } else {
        ex.label.flipped()
    }
}

/// Balanced-ish synthetic binary dataset with unique texts.
pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng_for(seed, seed::stream::SIM, 1);
    let examples = (0..n)
        .map(|i| LabeledExample {
            id: format!("syn-{seed}-{i}"),
            text: format!("synthetic message {i} from corpus {seed}"),
            label: if rng.random_bool(0.5) {
                Label::Positive
            } else {
                Label::Negative
            },
        })
        .collect();
    Dataset {
        name: format!("synthetic-{seed}"),
        examples,
    }
}

const KEYWORD_CRITIQUES: &[&str] = &[
    "The prompt never asks whether the text concerns {kw}, which is what the misclassified examples hinge on.",
    "The prompt ignores {kw}; several wrong predictions would flip if the model looked for it.",
    "The prompt is silent about {kw}, so the model cannot use that cue.",
];

const GENERIC_CRITIQUES: &[&str] = &[
    "The prompt is too vague about what counts as a positive case.",
    "The prompt assumes the label is always obvious from explicit wording.",
    "The prompt does not say how to handle sarcasm or indirect phrasing.",
    "The prompt gives no guidance for borderline examples.",
    "The prompt is too narrowly focused on surface features of the text.",
    "The prompt does not explain the context the text comes from.",
];

const KEYWORD_EDITS: &[&str] = &[
    "Consider whether it concerns {kw}.",
    "Pay attention to {kw}.",
    "Check for anything involving {kw}.",
];

const NEUTRAL_EDITS: &[&str] = &[
    "Be precise.",
    "Read the whole text first.",
    "Judge the overall intent.",
    "Look past the surface wording.",
    "Consider indirect phrasing.",
    "Think about borderline cases.",
    "Weigh the context.",
    "Decide from the text alone.",
    "Use the examples as a guide.",
    "Avoid guessing.",
];

const FRAMINGS: &[&str] = &[
    "",
    "Please decide: ",
    "Question: ",
    "Carefully consider this. ",
    "Read the text and answer. ",
    "Your task: ",
    "In short: ",
    "Decide the following. ",
    "Here is the task. ",
    "Answer this: ",
    "Think it over. ",
    "Consider the input. ",
];

const CLOSINGS: &[&str] = &[
    "",
    " Reply with one word.",
    " Be concise.",
    " Keep your answer short.",
    " Answer directly.",
    " Use your best judgment.",
    " No explanation needed.",
    " Respond briefly.",
];

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

fn number_before(text: &str, marker: &str) -> Option<usize> {
    let end = text.find(marker)?;
    let digits: String = text[..end]
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

/// Simulated backend. Knows the gold labels of the examples it was built
/// with; classification prompts for unknown texts get a hashed answer.
pub struct SimBackend {
    profile: SimProfile,
    seed: u64,
    examples: HashMap<String, LabeledExample>,
}

impl SimBackend {
    pub fn new<'a>(
        profile: SimProfile,
        seed: u64,
        examples: impl IntoIterator<Item = &'a LabeledExample>,
    ) -> Result<Self, BackendError> {
        profile.validate()?;
        let mut map = HashMap::new();
        for ex in examples {
            map.entry(ex.text.clone()).or_insert_with(|| ex.clone());
        }
        Ok(Self {
            profile,
            seed,
            examples: map,
        })
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    fn rng(&self, prompt: &str, sample: u32) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed::digest_u64(&[
            b"sim-meta",
            &self.seed.to_le_bytes(),
            prompt.as_bytes(),
            &sample.to_le_bytes(),
        ]))
    }

    fn respond(&self, prompt: &str, sample: u32) -> String {
        if prompt.contains("reasons why the prompt could") {
            self.gradient(prompt, sample)
        } else if prompt.contains("Based on the above information, I wrote") {
            self.edit(prompt, sample)
        } else if prompt.starts_with("Generate a variation of the following instruction") {
            self.paraphrase(prompt, sample)
        } else if prompt.contains(PREDICTION_MARKER) {
            self.classify(prompt)
        } else {
            "I'm not sure what you are asking.".to_string()
        }
    }

    fn classify(&self, rendered: &str) -> String {
        let at = rendered.rfind(PREDICTION_MARKER).expect("checked by caller");
        let tail = &rendered[at + PREDICTION_MARKER.len()..];
        let text = tail.trim_end().strip_suffix("Label:").unwrap_or(tail).trim_end_matches('\n');
        let description = if rendered.contains(TASK_HEADER) {
            &rendered[templates::task_span(rendered)]
        } else {
            &rendered[..at]
        };
        let candidate = PromptCandidate::from_task_description(description);
        match self.examples.get(text) {
            Some(ex) => sim_classify(&candidate, ex, &self.profile).answer().to_string(),
            None => {
                let h = seed::digest_u64(&[b"sim-unknown", candidate.id.as_str().as_bytes(), text.as_bytes()]);
                if h & 1 == 0 { "Yes" } else { "No" }.to_string()
            }
        }
    }

    fn gradient(&self, prompt: &str, sample: u32) -> String {
        let current = between(prompt, "My current prompt is:\n\"", "\"\n\nBut ").unwrap_or(prompt);
        let wanted = number_before(prompt, " reasons why").unwrap_or(1).max(1);
        let missing = self.profile.missing_keywords(current);
        let mut rng = self.rng(prompt, sample);
        let mut out = String::new();
        for i in 0..wanted {
            let reason = if !missing.is_empty() && rng.random_bool(self.profile.gradient_hit_rate) {
                let kw = missing[rng.random_range(0..missing.len())];
                pick(&mut rng, KEYWORD_CRITIQUES).replace("{kw}", kw)
            } else {
                pick(&mut rng, GENERIC_CRITIQUES).to_string()
            };
            out.push_str(&format!("Reason {}: <START>{reason}<END>\n", i + 1));
        }
        out
    }

    fn edit(&self, prompt: &str, sample: u32) -> String {
        let current = between(prompt, "My current prompt is:\n\"", "\"\n\nBut ").unwrap_or("");
        let gradient = between(prompt, "prompt is that ", "\n\nBased on the above information")
            .unwrap_or("")
            .to_lowercase();
        let steps = number_before(prompt, " different improved prompts").unwrap_or(1).max(1);
        let named: Vec<&str> = self
            .profile
            .missing_keywords(current)
            .into_iter()
            .filter(|kw| gradient.contains(&kw.to_lowercase()))
            .collect();
        let mut rng = self.rng(prompt, sample);
        let mut out = String::new();
        for _ in 0..steps {
            let addition = match named.first() {
                Some(kw) => pick(&mut rng, KEYWORD_EDITS).replace("{kw}", kw),
                None => pick(&mut rng, NEUTRAL_EDITS).to_string(),
            };
            out.push_str(&format!("<START>{} {addition}<END>\n", current.trim_end()));
        }
        out
    }

    fn paraphrase(&self, prompt: &str, sample: u32) -> String {
        let instruction = match (prompt.find("Input: "), prompt.rfind("\n\nOutput:")) {
            (Some(s), Some(e)) if s + 7 <= e => &prompt[s + 7..e],
            _ => "",
        };
        let mut core = instruction.trim();
        loop {
            let before = core.len();
            for f in FRAMINGS.iter().filter(|f| !f.is_empty()) {
                if let Some(rest) = core.strip_prefix(f.trim_end()) {
                    core = rest.trim_start();
                }
            }
            for c in CLOSINGS.iter().filter(|c| !c.is_empty()) {
                if let Some(rest) = core.strip_suffix(c.trim_start()) {
                    core = rest.trim_end();
                }
            }
            if core.len() == before {
                break;
            }
        }
        let mut rng = self.rng(prompt, sample);
        let mut text = format!("{}{core}{}", pick(&mut rng, FRAMINGS), pick(&mut rng, CLOSINGS));
        let missing = self.profile.missing_keywords(core);
        if !missing.is_empty() && rng.random_bool(self.profile.paraphrase_hit_rate) {
            let kw = missing[rng.random_range(0..missing.len())];
            text.push(' ');
            text.push_str(&pick(&mut rng, KEYWORD_EDITS).replace("{kw}", kw));
        }
        text
    }
}

impl Backend for SimBackend {
    fn id(&self) -> &str {
        "sim"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        Ok(CompletionResponse {
            texts: (0..req.n_samples)
                .map(|i| self.respond(&req.prompt_text, i))
                .collect(),
            backend_id: "sim".into(),
            cached: false,
        })
    }
}
