//! Successor generation: textual gradients, gradient-guided edits,
//! paraphrases, dedup and subsampling.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CandidateId, Dataset, FewShotSet, Origin, PromptCandidate};
use crate::eval::{self, EvalError, PredictionRecord};
use crate::llm::{Backend, BackendError, CallKind, CompletionRequest};
use crate::seed::{self, stream};
use crate::templates::{self, MetaPromptSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextGradient {
    pub text: String,
    pub source_prompt_id: CandidateId,
    pub error_group: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub minibatch_size: usize,
    pub error_group_size: usize,
    /// Gradients requested per error group (m).
    pub gradients_per_group: usize,
    /// Edits requested per gradient (q).
    pub edits_per_gradient: usize,
    /// Paraphrases per edited prompt (k).
    pub paraphrases_per_edit: usize,
    pub max_successors: usize,
    pub error_groups_per_expansion: usize,
    /// Extra attempts when a gradient reply has no parseable span.
    pub gradient_retries: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            minibatch_size: 64,
            error_group_size: 4,
            gradients_per_group: 4,
            edits_per_gradient: 1,
            paraphrases_per_edit: 2,
            max_successors: 8,
            error_groups_per_expansion: 1,
            gradient_retries: 1,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("minibatch_size", self.minibatch_size),
            ("error_group_size", self.error_group_size),
            ("gradients_per_group", self.gradients_per_group),
            ("edits_per_gradient", self.edits_per_gradient),
            ("max_successors", self.max_successors),
            ("error_groups_per_expansion", self.error_groups_per_expansion),
        ];
        match positive.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("expansion.{name} must be at least 1")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("gradient reply had no <START>…<END> span")]
    Gradient,
    #[error("edit reply had no usable <START>…<END> span")]
    Edit,
    #[error("minibatch of {needed} needs that many training examples, have {available}")]
    Minibatch { needed: usize, available: usize },
    #[error("evaluating the parent on its minibatch: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("every meta-prompt call failed; first failure: {0}")]
    AllMetaCallsFailed(Box<ExpandError>),
}

impl ExpandError {
    /// The backend failure underneath, if any.
    pub fn backend(&self) -> Option<&BackendError> {
        match self {
            ExpandError::Backend(e) | ExpandError::Eval(EvalError::Backend(e)) => Some(e),
            ExpandError::AllMetaCallsFailed(inner) => inner.backend(),
            _ => None,
        }
    }
}

/// Everything an expansion needs besides the parent and the seed.
#[derive(Clone, Copy)]
pub struct ExpandContext<'a> {
    pub backend: &'a dyn Backend,
    pub metas: &'a MetaPromptSet,
    pub few_shot: &'a FewShotSet,
    pub config: &'a ExpansionConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    /// Sorted by id.
    pub successors: Vec<PromptCandidate>,
    pub gradients: Vec<TextGradient>,
    pub errors_found: usize,
    /// Successors generated before dedup and subsampling.
    pub raw_candidates: usize,
    pub failed_calls: Vec<String>,
}

/// Strips quoting and whitespace the model tends to wrap prompts in.
fn clean(text: &str) -> Option<String> {
    let t = text.trim().trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}').trim();
    // Anything that would break the scaffolding is unusable as a description.
    if t.is_empty() || !templates::slots(t).is_empty() || t.contains("\n\n#") {
        None
    } else {
        Some(t.to_string())
    }
}

/// One ∇ call asking for `m` reasons. A reply without spans is retried
/// with a larger sample count (which also changes the cache key).
pub fn generate_gradients(
    backend: &dyn Backend,
    metas: &MetaPromptSet,
    p: &PromptCandidate,
    errors: &[PredictionRecord],
    m: usize,
    retries: usize,
) -> Result<Vec<TextGradient>, ExpandError> {
    let prompt = metas.render_gradient(p.task_description(), &eval::render_error_string(errors), m);
    let group: Vec<String> = errors.iter().map(|r| r.example_id.clone()).collect();
    for attempt in 0..=retries {
        let req = CompletionRequest::meta(CallKind::Gradient, prompt.clone(), attempt as u32 + 1);
        let resp = backend.complete(&req)?;
        if let Some(spans) = resp
            .texts
            .iter()
            .map(|t| templates::parse_spans(t))
            .find(|s| !s.is_empty())
        {
            return Ok(spans
                .into_iter()
                .take(m)
                .map(|text| TextGradient {
                    text,
                    source_prompt_id: p.id.clone(),
                    error_group: group.clone(),
                })
                .collect());
        }
    }
    Err(ExpandError::Gradient)
}

/// One δ call asking for `q` rewrites of the task description.
pub fn apply_gradient(
    backend: &dyn Backend,
    metas: &MetaPromptSet,
    p: &PromptCandidate,
    g: &TextGradient,
    errors: &[PredictionRecord],
    q: usize,
) -> Result<Vec<PromptCandidate>, ExpandError> {
    let prompt = metas.render_edit(p.task_description(), &eval::render_error_string(errors), &g.text, q);
    let resp = backend.complete(&CompletionRequest::meta(CallKind::Edit, prompt, 1))?;
    let edits: Vec<PromptCandidate> = resp
        .texts
        .iter()
        .flat_map(|t| templates::parse_spans(t))
        .filter_map(|span| clean(&span))
        .take(q)
        .map(|desc| p.child(&desc, Origin::GradientEdit))
        .collect();
    if edits.is_empty() {
        return Err(ExpandError::Edit);
    }
    Ok(edits)
}

fn paraphrase_texts(backend: &dyn Backend, metas: &MetaPromptSet, p: &PromptCandidate, k: usize) -> Result<Vec<String>, BackendError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let prompt = metas.render_paraphrase(p.task_description());
    let resp = backend.complete(&CompletionRequest::meta(CallKind::Paraphrase, prompt, k as u32))?;
    Ok(resp.texts.iter().filter_map(|t| clean(t)).collect())
}

/// `k` paraphrases of `p`, each a child of `p`.
pub fn paraphrase(
    backend: &dyn Backend,
    metas: &MetaPromptSet,
    p: &PromptCandidate,
    k: usize,
) -> Result<Vec<PromptCandidate>, BackendError> {
    Ok(paraphrase_texts(backend, metas, p, k)?
        .iter()
        .map(|d| p.child(d, Origin::Paraphrase))
        .collect())
}

/// Drops `p`, its ancestors and duplicate ids, then keeps a seeded uniform
/// subsample of at most `max`. Output is sorted by id.
pub fn dedup_and_subsample(
    p: &PromptCandidate,
    mut raw: Vec<PromptCandidate>,
    max: usize,
    seed: u64,
) -> Vec<PromptCandidate> {
    raw.retain(|c| !p.is_or_descends_from(&c.id));
    raw.sort_by(|a, b| a.id.cmp(&b.id));
    raw.dedup_by(|a, b| a.id == b.id);
    if raw.len() <= max {
        return raw;
    }
    let mut keep = index::sample(&mut seed::rng_for(seed, stream::SUBSAMPLE, 0), raw.len(), max).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| raw[i].clone()).collect()
}

/// One expansion of `p`: minibatch errors → gradients → edits →
/// paraphrases → dedup → subsample.
pub fn expand(ctx: &ExpandContext<'_>, p: &PromptCandidate, train: &Dataset, seed: u64) -> Result<Expansion, ExpandError> {
    let cfg = ctx.config;
    if train.len() < cfg.minibatch_size {
        return Err(ExpandError::Minibatch {
            needed: cfg.minibatch_size,
            available: train.len(),
        });
    }
    let picks = index::sample(&mut seed::rng_for(seed, stream::EXPAND, 1), train.len(), cfg.minibatch_size);
    let mut picks = picks.into_vec();
    picks.sort_unstable();
    let minibatch: Vec<_> = picks.iter().map(|&i| train.examples[i].clone()).collect();
    let records = eval::evaluate(ctx.backend, p, ctx.few_shot, &minibatch)?;
    let groups = eval::collect_errors(&records, cfg.error_group_size, seed::derive_seed(seed, stream::EXPAND, 2));
    let errors_found = groups.iter().map(Vec::len).sum();

    if groups.is_empty() {
        let raw = paraphrase_texts(ctx.backend, ctx.metas, p, cfg.max_successors)?;
        let raw: Vec<_> = raw.iter().map(|d| p.child(d, Origin::Paraphrase)).collect();
        return Ok(Expansion {
            raw_candidates: raw.len(),
            successors: dedup_and_subsample(p, raw, cfg.max_successors, seed),
            gradients: Vec::new(),
            errors_found,
            failed_calls: Vec::new(),
        });
    }

    let used: Vec<&Vec<PredictionRecord>> = groups.iter().take(cfg.error_groups_per_expansion).collect();
    let mut failures: Vec<ExpandError> = Vec::new();
    let mut calls_ok = 0usize;

    let gradient_results: Vec<_> = used
        .par_iter()
        .map(|group| {
            generate_gradients(ctx.backend, ctx.metas, p, group, cfg.gradients_per_group, cfg.gradient_retries)
                .map(|gs| gs.into_iter().map(|g| (g, *group)).collect::<Vec<_>>())
        })
        .collect();
    let mut gradients = Vec::new();
    for r in gradient_results {
        match r {
            Ok(gs) => {
                calls_ok += 1;
                gradients.extend(gs);
            }
            Err(e) => failures.push(e),
        }
    }

    let edit_results: Vec<_> = gradients
        .par_iter()
        .map(|(g, group)| apply_gradient(ctx.backend, ctx.metas, p, g, group, cfg.edits_per_gradient))
        .collect();
    let mut edits = Vec::new();
    for r in edit_results {
        match r {
            Ok(es) => {
                calls_ok += 1;
                edits.extend(es);
            }
            Err(e) => failures.push(e),
        }
    }

    let para_results: Vec<_> = edits
        .par_iter()
        .map(|e| {
            paraphrase_texts(ctx.backend, ctx.metas, e, cfg.paraphrases_per_edit)
                .map(|texts| texts.iter().map(|d| e.variant(d)).collect::<Vec<_>>())
        })
        .collect();
    let mut raw = edits;
    for r in para_results {
        match r {
            Ok(ps) => {
                calls_ok += 1;
                raw.extend(ps);
            }
            Err(e) => failures.push(e.into()),
        }
    }

    if calls_ok == 0 {
        let first = failures.into_iter().next().unwrap_or(ExpandError::Gradient);
        return Err(ExpandError::AllMetaCallsFailed(Box::new(first)));
    }
    for f in &failures {
        tracing::warn!(prompt = %p.id, error = %f, "meta-prompt call failed during expansion");
    }
    Ok(Expansion {
        raw_candidates: raw.len(),
        successors: dedup_and_subsample(p, raw, cfg.max_successors, seed),
        gradients: gradients.into_iter().map(|(g, _)| g).collect(),
        errors_found,
        failed_calls: failures.iter().map(ToString::to_string).collect(),
    })
}

/// Directionless expansion: `count` paraphrases of `p` and nothing else.
pub fn expand_monte_carlo(ctx: &ExpandContext<'_>, p: &PromptCandidate, count: usize, seed: u64) -> Result<Expansion, ExpandError> {
    let raw: Vec<_> = paraphrase_texts(ctx.backend, ctx.metas, p, count)?
        .iter()
        .map(|d| p.child(d, Origin::Paraphrase))
        .collect();
    Ok(Expansion {
        raw_candidates: raw.len(),
        successors: dedup_and_subsample(p, raw, count, seed),
        ..Expansion::default()
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::llm::{sim_accuracy, synthetic_dataset, CompletionResponse, SimBackend, SimProfile};
    use crate::templates::ETHOS_PROMPT;

    struct Canned(&'static str);

    impl Backend for Canned {
        fn id(&self) -> &str {
            "canned"
        }
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
            Ok(CompletionResponse {
                texts: vec![self.0.to_string(); req.n_samples as usize],
                backend_id: "canned".into(),
                cached: false,
            })
        }
    }

    fn p0() -> PromptCandidate {
        PromptCandidate::initial(ETHOS_PROMPT).unwrap()
    }

    fn profile() -> SimProfile {
        SimProfile {
            keyword_weights: BTreeMap::from([("religion".into(), 0.15), ("targets".into(), 0.15)]),
            base_accuracy: 0.55,
            cap: 0.95,
            ..SimProfile::default()
        }
    }

    #[test]
    fn gradient_spans_are_parsed() {
        let b = Canned("<START>too narrow<END><START>ignores bias<END>");
        let gs = generate_gradients(&b, &MetaPromptSet::default(), &p0(), &[], 2, 0).unwrap();
        assert_eq!(gs.iter().map(|g| g.text.as_str()).collect::<Vec<_>>(), ["too narrow", "ignores bias"]);
        assert!(matches!(
            generate_gradients(&Canned("no spans"), &MetaPromptSet::default(), &p0(), &[], 2, 1),
            Err(ExpandError::Gradient)
        ));
    }

    #[test]
    fn edit_keeps_scaffolding() {
        let b = Canned("<START>Does the text attack people for their religion?<END>");
        let g = TextGradient {
            text: "x".into(),
            source_prompt_id: p0().id,
            error_group: vec![],
        };
        let out = apply_gradient(&b, &MetaPromptSet::default(), &p0(), &g, &[], 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].task_description(), "Does the text attack people for their religion?");
        assert!(out[0].template.ends_with("# Prediction\nText: { text }\nLabel:"));
        assert_eq!(out[0].lineage.parent(), Some(&p0().id));
        assert!(matches!(
            apply_gradient(&Canned("nothing"), &MetaPromptSet::default(), &p0(), &g, &[], 1),
            Err(ExpandError::Edit)
        ));
    }

    #[test]
    fn paraphrase_counts() {
        let b = Canned("Is this hateful?");
        assert!(paraphrase(&b, &MetaPromptSet::default(), &p0(), 0).unwrap().is_empty());
        let two = paraphrase(&b, &MetaPromptSet::default(), &p0(), 2).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.iter().all(|c| c.lineage.parent() == Some(&p0().id)));
    }

    #[test]
    fn dedup_drops_self_and_ancestors() {
        let p = p0();
        let child = p.child("A", Origin::GradientEdit);
        let grandchild = child.child("B", Origin::GradientEdit);
        let raw = vec![p.clone(), child.clone(), grandchild.clone(), grandchild.clone()];
        let out = dedup_and_subsample(&child, raw, 8, 0);
        assert_eq!(out, vec![grandchild]);
    }

    fn expand_with(seed: u64) -> Expansion {
        let ds = synthetic_dataset(200, 1);
        let sim = SimBackend::new(profile(), seed, &ds.examples).unwrap();
        let metas = MetaPromptSet::default();
        let fs = FewShotSet::default();
        let cfg = ExpansionConfig::default();
        let ctx = ExpandContext {
            backend: &sim,
            metas: &metas,
            few_shot: &fs,
            config: &cfg,
        };
        expand(&ctx, &p0(), &ds, seed).unwrap()
    }

    #[test]
    fn expansion_shape() {
        let e = expand_with(3);
        assert!(e.raw_candidates <= 12);
        assert!(!e.successors.is_empty() && e.successors.len() <= 8);
        assert!(e.successors.iter().all(|c| c.id != p0().id && c.lineage.step() == 1));
        assert!(e.successors.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(e, expand_with(3));
    }

    #[test]
    fn zero_errors_gives_paraphrases_only() {
        let ds = synthetic_dataset(100, 1);
        let sim = SimBackend::new(SimProfile::fixed(1.0), 0, &ds.examples).unwrap();
        let metas = MetaPromptSet::default();
        let fs = FewShotSet::default();
        let cfg = ExpansionConfig::default();
        let ctx = ExpandContext {
            backend: &sim,
            metas: &metas,
            few_shot: &fs,
            config: &cfg,
        };
        let e = expand(&ctx, &p0(), &ds, 1).unwrap();
        assert_eq!(e.errors_found, 0);
        assert!(e.gradients.is_empty());
        assert!(e.successors.iter().all(|c| c.lineage.origin == Origin::Paraphrase));
    }

    #[test]
    fn expansion_raises_expected_best_accuracy() {
        let base = sim_accuracy(&p0(), &profile());
        let mean_best: f64 = (0..20)
            .map(|s| {
                expand_with(s)
                    .successors
                    .iter()
                    .map(|c| sim_accuracy(c, &profile()))
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 20.0;
        assert!(mean_best > base, "{mean_best} vs {base}");
    }
}
