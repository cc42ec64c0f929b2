//! Prompt templates: the three meta-prompts that drive expansion and the
//! initial task prompts for the four benchmark tasks.
//!
//! The embedded texts are reproduced byte-for-byte, hard line wraps and
//! whitespace-only lines included. Slots are written `{name}`; a slot with
//! inner padding such as `{ text }` is the same slot as `{text}`.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRADIENT_TEMPLATE: &str = concat!(
    "I'm trying to write a zero-shot classifier prompt.\n",
    "    \n",
    "My current prompt is:\n",
    "\"{prompt}\"\n",
    "\n",
    "But this prompt gets the following examples wrong:\n",
    "{error_string}\n",
    "\n",
    "give {num_feedbacks} reasons why the prompt could \n",
    "have gotten these examples wrong.\n",
    "Wrap each reason with <START> and <END>",
);

pub const EDIT_TEMPLATE: &str = concat!(
    "I'm trying to write a zero-shot classifier.\n",
    "        \n",
    "My current prompt is:\n",
    "\"{prompt}\"\n",
    "\n",
    "But it gets the following examples wrong:\n",
    "{error_str}\n",
    "\n",
    "Based on these examples the problem with this \n",
    "prompt is that {gradient}\n",
    "\n",
    "Based on the above information, I wrote \n",
    "{steps_per_gradient} different improved prompts.\n",
    "Each prompt is wrapped with <START> and <END>.\n",
    "\n",
    "The {steps_per_gradient} new prompts are:",
);

pub const PARAPHRASE_TEMPLATE: &str = concat!(
    "Generate a variation of the following instruction \n",
    "while keeping the semantic meaning.\n",
    "\n",
    "Input: {prompt_instruction}\n",
    "\n",
    "Output:",
);

pub const JAILBREAK_PROMPT: &str = concat!(
    "# Task\n",
    "Detect if the message is a jailbreak attack, \n",
    "i.e. an attempt by a user to break through an \n",
    "AI system's protections\n",
    "\n",
    "# Output format\n",
    "Answer Yes or No as labels\n",
    "\n",
    "# Examples\n",
    "{ examples }\n",
    "\n",
    "# Prediction\n",
    "Text: { text }\n",
    "Label:",
);

pub const ETHOS_PROMPT: &str = concat!(
    "# Task\n",
    "Is the following text hate speech?\n",
    "\n",
    "# Output format\n",
    "Answer Yes or No as labels\n",
    "\n",
    "# Examples\n",
    "{ examples }\n",
    "\n",
    "# Prediction\n",
    "Text: { text }\n",
    "Label:",
);

pub const LIAR_PROMPT: &str = concat!(
    "# Task\n",
    "Determine whether the Statement is a \n",
    "lie (Yes) or not (No) based on the Context \n",
    "and other information.\n",
    "\n",
    "# Output format\n",
    "Answer Yes or No as labels\n",
    "\n",
    "# Examples\n",
    "{ examples }\n",
    "\n",
    "# Prediction\n",
    "Text: { text }\n",
    "Label:",
);

pub const SARCASM_PROMPT: &str = concat!(
    "# Task\n",
    "Is this tweet sarcastic?\n",
    "\n",
    "# Output format\n",
    "Answer Yes or No as labels\n",
    "\n",
    "# Examples\n",
    "{ examples }\n",
    "\n",
    "# Prediction\n",
    "Text: { text }\n",
    "Label:",
);

pub const TASK_HEADER: &str = "# Task\n";
pub const OUTPUT_FORMAT_HEADER: &str = "\n\n# Output format\n";
pub const PREDICTION_MARKER: &str = "# Prediction\nText: ";
pub const START_TAG: &str = "<START>";
pub const END_TAG: &str = "<END>";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` is missing the {{{slot}}} slot")]
    MissingSlot { template: String, slot: String },
    #[error("template `{template}` has {count} {{{slot}}} slots, expected exactly one")]
    SlotCount {
        template: String,
        slot: String,
        count: usize,
    },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A `{name}` placeholder located in a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub range: Range<usize>,
}

/// Scans `text` for slots. Braces that do not enclose an identifier
/// (optionally space-padded) are literal text.
pub fn slots(text: &str) -> Vec<Slot> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let Some(close) = text[i + 1..].find(['}', '{']).map(|off| i + 1 + off) else {
            break;
        };
        if bytes[close] == b'{' {
            i = close;
            continue;
        }
        let inner = text[i + 1..close].trim_matches(' ');
        let is_ident = !inner.is_empty()
            && inner
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_');
        if is_ident {
            out.push(Slot {
                name: inner.to_string(),
                range: i..close + 1,
            });
        }
        i = close + 1;
    }
    out
}

pub fn count_slot(text: &str, name: &str) -> usize {
    slots(text).iter().filter(|s| s.name == name).count()
}

/// Single-pass substitution: values are never rescanned, so a value that
/// itself contains `{...}` is inserted verbatim. Slots without a value are
/// left untouched.
pub fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for slot in slots(text) {
        if let Some((_, value)) = vars.iter().find(|(k, _)| *k == slot.name) {
            out.push_str(&text[cursor..slot.range.start]);
            out.push_str(value);
            cursor = slot.range.end;
        }
    }
    out.push_str(&text[cursor..]);
    out
}

/// Builds a task prompt on the skeleton shared by all four
/// benchmark prompts.
pub fn skeleton(task_description: &str) -> String {
    format!(
        "{TASK_HEADER}{task_description}{OUTPUT_FORMAT_HEADER}Answer Yes or No as labels\n\n\
         # Examples\n{{ examples }}\n\n# Prediction\nText: {{ text }}\nLabel:"
    )
}

/// Byte range of the task description inside a task template.
///
/// With a `# Task` header the description runs to the next blank-line
/// section header; without one it runs from the start of the template
/// to the first blank line.
/// Either way it stops before the first slot.
pub fn task_span(template: &str) -> Range<usize> {
    let (start, stop) = match template.find(TASK_HEADER) {
        Some(pos) if pos == 0 || template[..pos].ends_with('\n') => (pos + TASK_HEADER.len(), "\n\n#"),
        _ => (0, "\n\n"),
    };
    let rest = &template[start..];
    let mut end = rest.find(stop).unwrap_or(rest.len());
    if let Some(first_slot) = slots(rest).first() {
        end = end.min(first_slot.range.start);
    }
    start..start + end
}

/// The four benchmark tasks with their initial prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskPreset {
    Jailbreak,
    Ethos,
    Liar,
    Sarcasm,
}

impl TaskPreset {
    pub const ALL: [TaskPreset; 4] = [
        TaskPreset::Jailbreak,
        TaskPreset::Ethos,
        TaskPreset::Liar,
        TaskPreset::Sarcasm,
    ];

    pub fn template(self) -> &'static str {
        match self {
            TaskPreset::Jailbreak => JAILBREAK_PROMPT,
            TaskPreset::Ethos => ETHOS_PROMPT,
            TaskPreset::Liar => LIAR_PROMPT,
            TaskPreset::Sarcasm => SARCASM_PROMPT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskPreset::Jailbreak => "jailbreak",
            TaskPreset::Ethos => "ethos",
            TaskPreset::Liar => "liar",
            TaskPreset::Sarcasm => "sarcasm",
        }
    }
}

/// The gradient (∇), edit (δ) and paraphrase meta-prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPromptSet {
    pub gradient: String,
    pub edit: String,
    pub paraphrase: String,
}

impl Default for MetaPromptSet {
    fn default() -> Self {
        Self {
            gradient: GRADIENT_TEMPLATE.to_string(),
            edit: EDIT_TEMPLATE.to_string(),
            paraphrase: PARAPHRASE_TEMPLATE.to_string(),
        }
    }
}

impl MetaPromptSet {
    /// Loads overrides from `dir`: any of `gradient.txt`, `edit.txt`,
    /// `paraphrase.txt`. Missing files keep the embedded default.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for (file, slot) in [
            ("gradient.txt", &mut set.gradient),
            ("edit.txt", &mut set.edit),
            ("paraphrase.txt", &mut set.paraphrase),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let required: [(&str, &str, &[&str]); 3] = [
            (
                "gradient",
                &self.gradient,
                &["prompt", "error_string", "num_feedbacks"],
            ),
            (
                "edit",
                &self.edit,
                &["prompt", "error_str", "gradient", "steps_per_gradient"],
            ),
            ("paraphrase", &self.paraphrase, &["prompt_instruction"]),
        ];
        for (name, text, needed) in required {
            for slot in needed {
                if count_slot(text, slot) == 0 {
                    return Err(TemplateError::MissingSlot {
                        template: name.to_string(),
                        slot: slot.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn render_gradient(&self, prompt: &str, error_string: &str, num_feedbacks: usize) -> String {
        fill(
            &self.gradient,
            &[
                ("prompt", prompt),
                ("error_string", error_string),
                ("num_feedbacks", &num_feedbacks.to_string()),
            ],
        )
    }

    pub fn render_edit(
        &self,
        prompt: &str,
        error_str: &str,
        gradient: &str,
        steps_per_gradient: usize,
    ) -> String {
        fill(
            &self.edit,
            &[
                ("prompt", prompt),
                ("error_str", error_str),
                ("gradient", gradient),
                ("steps_per_gradient", &steps_per_gradient.to_string()),
            ],
        )
    }

    pub fn render_paraphrase(&self, prompt_instruction: &str) -> String {
        fill(
            &self.paraphrase,
            &[("prompt_instruction", prompt_instruction)],
        )
    }
}

/// Greedy scan for `<START>…<END>` spans. Text outside spans and an
/// unbalanced trailing `<START>` are ignored; empty spans are dropped.
pub fn parse_spans(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(START_TAG) {
        let after = &rest[start + START_TAG.len()..];
        let Some(end) = after.find(END_TAG) else {
            break;
        };
        let mut body = &after[..end];
        // A nested <START> restarts the span.
        if let Some(inner) = body.rfind(START_TAG) {
            body = &body[inner + START_TAG.len()..];
        }
        let body = body.trim();
        if !body.is_empty() {
            out.push(body.to_string());
        }
        rest = &after[end + END_TAG.len()..];
    }
    out
}
