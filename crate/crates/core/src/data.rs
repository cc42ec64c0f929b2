//! Domain types shared across the engine, plus dataset ingestion and
//! splitting.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, stream};
use crate::templates::{self, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "Yes")]
    Positive,
    #[serde(rename = "No")]
    Negative,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    /// The answer string a classifier prompt asks for.
    pub fn answer(self) -> &'static str {
        match self {
            Label::Positive => "Yes",
            Label::Negative => "No",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.answer())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids and empty texts.
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>) -> Result<Self, IngestError> {
        let mut seen = HashSet::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if ex.text.is_empty() {
                return Err(IngestError::EmptyText { line: i + 1 });
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(IngestError::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples
            .iter()
            .filter(|e| e.label == Label::Positive)
            .count()
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: empty text")]
    EmptyText { line: usize },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("dataset file {0} contains no records")]
    Empty(String),
}

impl IngestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Record { line, .. }
            | IngestError::MissingField { line, .. }
            | IngestError::UnknownLabel { line, .. }
            | IngestError::EmptyText { line } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("need {needed} examples but only {available} are available")]
    Insufficient { needed: usize, available: usize },
}

/// Maps raw label strings from a dataset file onto the two classes.
/// Matching is case-insensitive after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self {
            positive: vec!["Yes".into()],
            negative: vec!["No".into()],
        }
    }
}

impl LabelMap {
    pub fn map(&self, raw: &str) -> Option<Label> {
        let raw = raw.trim();
        let hit = |names: &[String]| names.iter().any(|n| n.trim().eq_ignore_ascii_case(raw));
        if hit(&self.positive) {
            Some(Label::Positive)
        } else if hit(&self.negative) {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

/// Record formats understood by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    /// One JSON object per line with string fields `text` and `label` and
    /// an optional string `id`.
    #[default]
    Jsonl,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    label: Option<serde_json::Value>,
}

/// Loads a line-delimited dataset. Blank lines are skipped; records without
/// an `id` get `<name>-<line>`.
pub fn load_dataset(path: &Path, format: RecordFormat, labels: &LabelMap) -> Result<Dataset, IngestError> {
    let body = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let examples = match format {
        RecordFormat::Jsonl => parse_jsonl(&body, &name, labels)?,
    };
    if examples.is_empty() {
        return Err(IngestError::Empty(path.display().to_string()));
    }
    Dataset::new(name, examples)
}

fn parse_jsonl(body: &str, name: &str, labels: &LabelMap) -> Result<Vec<LabeledExample>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| IngestError::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        let text = raw.text.ok_or(IngestError::MissingField {
            line: line_no,
            field: "text",
        })?;
        let label_raw = match raw.label {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Null) | None => {
                return Err(IngestError::MissingField {
                    line: line_no,
                    field: "label",
                })
            }
            Some(other) => other.to_string(),
        };
        let label = labels.map(&label_raw).ok_or(IngestError::UnknownLabel {
            line: line_no,
            label: label_raw,
        })?;
        if text.is_empty() {
            return Err(IngestError::EmptyText { line: line_no });
        }
        out.push(LabeledExample {
            id: raw.id.unwrap_or_else(|| format!("{name}-{line_no}")),
            text,
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub dev: Dataset,
    pub test: Dataset,
    pub train: Dataset,
}

/// Seeded shuffle, then the first `n_dev` go to dev, the next `n_test` to
/// test, and the rest to train. Each partition keeps the source order.
pub fn split_dataset(ds: &Dataset, seed: u64, n_dev: usize, n_test: usize) -> Result<Split, SplitError> {
    let needed = n_dev + n_test;
    if needed > ds.len() {
        return Err(SplitError::Insufficient {
            needed,
            available: ds.len(),
        });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut seed::rng_for(seed, stream::SPLIT, 0));
    let mut bucket = vec![2u8; ds.len()];
    for &i in &order[..n_dev] {
        bucket[i] = 0;
    }
    for &i in &order[n_dev..needed] {
        bucket[i] = 1;
    }
    let part = |which: u8, suffix: &str| Dataset {
        name: format!("{}-{suffix}", ds.name),
        examples: ds
            .examples
            .iter()
            .zip(&bucket)
            .filter(|(_, b)| **b == which)
            .map(|(e, _)| e.clone())
            .collect(),
    };
    Ok(Split {
        dev: part(0, "dev"),
        test: part(1, "test"),
        train: part(2, "train"),
    })
}

/// Few-shot demonstrations held fixed for a whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSet {
    pub examples: Vec<LabeledExample>,
}

impl FewShotSet {
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `Text: …\nLabel: Yes|No` pairs separated by blank lines.
    pub fn render(&self) -> String {
        self.examples
            .iter()
            .map(|e| format!("Text: {}\nLabel: {}", e.text, e.label))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn select_few_shot(train: &Dataset, k: usize, seed: u64) -> Result<FewShotSet, SplitError> {
    if k > train.len() {
        return Err(SplitError::Insufficient {
            needed: k,
            available: train.len(),
        });
    }
    let mut rng = seed::rng_for(seed, stream::FEW_SHOT, 0);
    let picked = rand::seq::index::sample(&mut rng, train.len(), k);
    Ok(FewShotSet {
        examples: picked.iter().map(|i| train.examples[i].clone()).collect(),
    })
}

/// 128-bit hex digest of a template.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub String);

impl CandidateId {
    pub fn of(template: &str) -> Self {
        let d = seed::digest(&[b"prompt", template.as_bytes()]);
        CandidateId(hex::encode(&d[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Initial,
    GradientEdit,
    Paraphrase,
}

/// Where a candidate came from. `ancestors` runs root-first and ends with
/// the parent, so its length is the generation depth. A paraphrase of an
/// edit made in the same expansion records that edit in `via`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub origin: Origin,
    pub ancestors: Vec<CandidateId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<CandidateId>,
}

impl Lineage {
    pub fn parent(&self) -> Option<&CandidateId> {
        self.ancestors.last()
    }

    pub fn step(&self) -> usize {
        self.ancestors.len()
    }
}

/// A task prompt with `{examples}` and `{text}` slots plus its lineage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: CandidateId,
    pub template: String,
    pub lineage: Lineage,
}

impl PromptCandidate {
    pub fn initial(template: impl Into<String>) -> Result<Self, TemplateError> {
        let template = template.into();
        let count = templates::count_slot(&template, "text");
        if count != 1 {
            return Err(TemplateError::SlotCount {
                template: "task".into(),
                slot: "text".into(),
                count,
            });
        }
        Ok(Self {
            id: CandidateId::of(&template),
            template,
            lineage: Lineage {
                origin: Origin::Initial,
                ancestors: Vec::new(),
                via: None,
            },
        })
    }

    /// A root candidate on the standard task skeleton.
    pub fn from_task_description(description: &str) -> Self {
        Self::initial(templates::skeleton(description)).expect("skeleton has one text slot")
    }

    pub fn task_description(&self) -> &str {
        &self.template[templates::task_span(&self.template)]
    }

    /// A child whose task description is replaced and whose scaffolding is
    /// kept from `self`.
    pub fn child(&self, description: &str, origin: Origin) -> Self {
        let span = templates::task_span(&self.template);
        let mut template = String::with_capacity(self.template.len() + description.len());
        template.push_str(&self.template[..span.start]);
        template.push_str(description);
        template.push_str(&self.template[span.end..]);
        let mut ancestors = self.lineage.ancestors.clone();
        ancestors.push(self.id.clone());
        Self {
            id: CandidateId::of(&template),
            template,
            lineage: Lineage {
                origin,
                ancestors,
                via: None,
            },
        }
    }

    /// A paraphrase of `self` placed at `self`'s own generation: same
    /// ancestors, with `self` recorded as `via`.
    pub fn variant(&self, description: &str) -> Self {
        let mut out = self.child(description, Origin::Paraphrase);
        out.lineage.ancestors.pop();
        out.lineage.via = Some(self.id.clone());
        out
    }

    pub fn is_or_descends_from(&self, id: &CandidateId) -> bool {
        &self.id == id || self.lineage.ancestors.contains(id)
    }
}
