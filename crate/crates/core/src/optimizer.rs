//! Beam search over prompts, plus the flat, greedy and monte-carlo
//! variants used as baselines.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CandidateId, Dataset, FewShotSet, Origin, PromptCandidate};
use crate::eval;
use crate::expansion::{self, ExpandContext, ExpandError, Expansion, ExpansionConfig, TextGradient};
use crate::llm::{Backend, CallAudit, Metered};
use crate::selection::{self, PromptArms, ScoreLedger, SelectError, SelectionConfig};
use crate::seed::{derive_seed, stream};
use crate::templates::MetaPromptSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Gradient-guided beam search.
    #[default]
    Protegi,
    /// One widened expansion of p0, one selection.
    Flat,
    /// Beam of one.
    Greedy,
    /// Beam search with paraphrase-only expansion.
    Mc,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Protegi, Mode::Flat, Mode::Greedy, Mode::Mc];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Protegi => "protegi",
            Mode::Flat => "flat",
            Mode::Greedy => "greedy",
            Mode::Mc => "mc",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (protegi, flat, greedy, mc)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub beam_width: usize,
    /// r: the beam is expanded r - 1 times.
    pub depth: usize,
    /// Keep the current beam in the selection pool.
    pub include_parents: bool,
    /// Stop after this many steps without a better dev score.
    pub patience: Option<usize>,
    pub seed: u64,
    pub expansion: ExpansionConfig,
    pub selection: SelectionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Protegi,
            beam_width: 4,
            depth: 6,
            include_parents: true,
            patience: None,
            seed: 0,
            expansion: ExpansionConfig::default(),
            selection: SelectionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.beam_width == 0 {
            return Err("search.beam_width must be at least 1".into());
        }
        if self.depth == 0 {
            return Err("search.depth must be at least 1".into());
        }
        if self.patience == Some(0) {
            return Err("search.patience must be at least 1 when set".into());
        }
        self.expansion.validate()?;
        self.selection.validate()
    }

    /// Successors protegi mode would generate over a full run: one parent
    /// at the first step, a full beam afterwards.
    pub fn nominal_candidate_count(&self) -> usize {
        if self.depth < 2 {
            return 0;
        }
        self.expansion.max_successors * (1 + (self.depth - 2) * self.beam_width)
    }
}

/// Datasets a run works with. `train` feeds minibatches and selection.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub few_shot: FewShotSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub id: CandidateId,
    pub origin: Origin,
    pub parent: Option<CandidateId>,
    pub dev_f1: f64,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub beam: Vec<BeamEntry>,
    pub best_dev_f1: f64,
    /// Successors produced by expansion at this step.
    pub candidates_considered: usize,
    pub pool_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gradients: Vec<TextGradient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger: Option<ScoreLedger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub candidate: PromptCandidate,
    pub dev_f1: f64,
    pub test_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    /// Effective configuration the run was started with.
    pub config: serde_json::Value,
    pub steps: Vec<StepRecord>,
    pub best: Option<FinalResult>,
    pub calls: CallAudit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunReport {
    /// (step, best dev F1) pairs.
    pub fn learning_curve(&self) -> Vec<(usize, f64)> {
        self.steps.iter().map(|s| (s.step, s.best_dev_f1)).collect()
    }

    pub fn candidates_considered(&self) -> usize {
        self.steps.iter().map(|s| s.candidates_considered).sum()
    }
}

/// One generated candidate, for the lineage log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub step: usize,
    pub id: CandidateId,
    pub origin: Origin,
    pub parent: Option<CandidateId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<CandidateId>,
    pub task: String,
}

impl LineageRecord {
    fn of(step: usize, c: &PromptCandidate) -> Self {
        Self {
            step,
            id: c.id.clone(),
            origin: c.lineage.origin,
            parent: c.lineage.parent().cloned(),
            via: c.lineage.via.clone(),
            task: c.task_description().to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub lineage: Vec<LineageRecord>,
}

impl RunOutput {
    pub fn failed(&self) -> bool {
        self.report.failure.is_some()
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// A step failed in a way that ends the run.
#[derive(Debug, Error)]
enum Halt {
    #[error("expansion: {0}")]
    Expand(#[from] ExpandError),
    #[error("selection: {0}")]
    Select(#[from] SelectError),
    #[error("dev evaluation: {0}")]
    Eval(#[from] eval::EvalError),
}

struct Run<'a> {
    backend: &'a Metered<&'a dyn Backend>,
    metas: &'a MetaPromptSet,
    data: &'a RunData,
    cfg: &'a RunConfig,
    dev_scores: HashMap<CandidateId, f64>,
    lineage: Vec<LineageRecord>,
    warnings: Vec<String>,
}

impl Run<'_> {
    fn dev_f1(&mut self, p: &PromptCandidate) -> Result<f64, Halt> {
        if let Some(&s) = self.dev_scores.get(&p.id) {
            return Ok(s);
        }
        let records = eval::evaluate(self.backend, p, &self.data.few_shot, &self.data.dev.examples)?;
        let s = eval::f1_score(&records).value;
        self.dev_scores.insert(p.id.clone(), s);
        Ok(s)
    }

    fn step_record(
        &mut self,
        step: usize,
        beam: &[PromptCandidate],
        candidates_considered: usize,
        pool_size: usize,
        gradients: Vec<TextGradient>,
        ledger: Option<ScoreLedger>,
    ) -> Result<StepRecord, Halt> {
        let mut entries = Vec::with_capacity(beam.len());
        for p in beam {
            entries.push(BeamEntry {
                id: p.id.clone(),
                origin: p.lineage.origin,
                parent: p.lineage.parent().cloned(),
                dev_f1: self.dev_f1(p)?,
                template: p.template.clone(),
            });
        }
        let best_dev_f1 = entries.iter().map(|e| e.dev_f1).fold(0.0, f64::max);
        Ok(StepRecord {
            step,
            beam: entries,
            best_dev_f1,
            candidates_considered,
            pool_size,
            gradients,
            ledger,
        })
    }

    /// Expands each parent under its own seed.
    fn expand_all(
        &mut self,
        config: &ExpansionConfig,
        parents: &[PromptCandidate],
        step: usize,
        seeds: &[u64],
    ) -> Result<Vec<Expansion>, Halt> {
        let ctx = ExpandContext {
            backend: self.backend,
            metas: self.metas,
            few_shot: &self.data.few_shot,
            config,
        };
        let mc = self.cfg.mode == Mode::Mc;
        let max = config.max_successors;
        let results: Vec<Result<Expansion, ExpandError>> = parents
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(p, &s)| {
                if mc {
                    expansion::expand_monte_carlo(&ctx, p, max, s)
                } else {
                    expansion::expand(&ctx, p, &self.data.train, s)
                }
            })
            .collect();
        let mut out = Vec::with_capacity(results.len());
        for (p, r) in parents.iter().zip(results) {
            match r {
                Ok(e) => out.push(e),
                Err(e) if e.backend().is_some() => return Err(e.into()),
                Err(e) => {
                    self.warnings.push(format!("step {step}: expansion of {} produced nothing: {e}", p.id));
                    out.push(Expansion::default());
                }
            }
        }
        for e in &out {
            for c in &e.successors {
                self.lineage.push(LineageRecord::of(step, c));
            }
        }
        Ok(out)
    }

    fn select(
        &self,
        pool: &[PromptCandidate],
        b: usize,
        seed: u64,
    ) -> Result<(Vec<PromptCandidate>, Option<ScoreLedger>), Halt> {
        if pool.len() <= b {
            return Ok((pool.to_vec(), None));
        }
        let ids: Vec<CandidateId> = pool.iter().map(|c| c.id.clone()).collect();
        let arms = PromptArms {
            backend: self.backend,
            candidates: pool,
            few_shot: &self.data.few_shot,
        };
        let s = selection::select(&self.cfg.selection, b, &ids, &self.data.train.examples, &arms, seed)?;
        Ok((s.chosen.iter().map(|&i| pool[i].clone()).collect(), Some(s.ledger)))
    }
}

/// Parents first (if kept), then successors; first occurrence of an id wins.
fn build_pool(parents: &[PromptCandidate], expansions: &[Expansion], include_parents: bool) -> Vec<PromptCandidate> {
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    let parents = parents.iter().filter(|_| include_parents);
    for c in parents.chain(expansions.iter().flat_map(|e| e.successors.iter())) {
        if seen.insert(c.id.clone()) {
            pool.push(c.clone());
        }
    }
    pool
}

/// Runs the configured mode from `p0`. Backend failures end the run early
/// and are reported in `failure`; only configuration problems are errors.
pub fn optimize(
    backend: &dyn Backend,
    metas: &MetaPromptSet,
    p0: &PromptCandidate,
    data: &RunData,
    cfg: &RunConfig,
) -> Result<RunOutput, OptimizeError> {
    cfg.validate().map_err(OptimizeError::Config)?;
    if cfg.mode != Mode::Mc && cfg.depth > 1 && data.train.len() < cfg.expansion.minibatch_size {
        return Err(OptimizeError::Config(format!(
            "minibatch of {} needs that many training examples, have {}",
            cfg.expansion.minibatch_size,
            data.train.len()
        )));
    }
    let metered = Metered::new(backend);
    let mut run = Run {
        backend: &metered,
        metas,
        data,
        cfg,
        dev_scores: HashMap::new(),
        lineage: vec![LineageRecord::of(0, p0)],
        warnings: Vec::new(),
    };
    let mut steps = Vec::new();
    let mut beam = vec![p0.clone()];
    let outcome = drive(&mut run, &mut steps, &mut beam, p0);
    let mut failure = outcome.err().map(|h| h.to_string());

    let mut best = None;
    if let Some(last) = steps.last() {
        // maxpool over the last completed beam; ties keep beam order
        let top = last
            .beam
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.dev_f1.total_cmp(&b.dev_f1).then(j.cmp(i)))
            .map(|(i, _)| i);
        if let Some(i) = top {
            let candidate = beam
                .iter()
                .find(|c| c.id == last.beam[i].id)
                .cloned()
                .expect("beam matches last step");
            let test_f1 = if data.test.is_empty() {
                None
            } else {
                match eval::evaluate(&metered, &candidate, &data.few_shot, &data.test.examples) {
                    Ok(records) => Some(eval::f1_score(&records).value),
                    Err(e) => {
                        failure.get_or_insert_with(|| format!("test evaluation: {e}"));
                        None
                    }
                }
            };
            best = Some(FinalResult {
                dev_f1: last.beam[i].dev_f1,
                candidate,
                test_f1,
            });
        }
    }
    let report = RunReport {
        mode: cfg.mode,
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        steps,
        best,
        calls: metered.audit(),
        warnings: run.warnings,
        failure,
    };
    Ok(RunOutput {
        report,
        lineage: run.lineage,
    })
}

fn drive(run: &mut Run<'_>, steps: &mut Vec<StepRecord>, beam: &mut Vec<PromptCandidate>, p0: &PromptCandidate) -> Result<(), Halt> {
    let cfg = run.cfg;
    let first = run.step_record(0, beam, 0, 1, Vec::new(), None)?;
    steps.push(first);
    match cfg.mode {
        Mode::Flat => flat(run, steps, beam, p0),
        Mode::Protegi | Mode::Greedy | Mode::Mc => iterate(run, steps, beam),
    }
}

fn iterate(run: &mut Run<'_>, steps: &mut Vec<StepRecord>, beam: &mut Vec<PromptCandidate>) -> Result<(), Halt> {
    let cfg = run.cfg;
    let b = if cfg.mode == Mode::Greedy { 1 } else { cfg.beam_width };
    let mut best_so_far = steps[0].best_dev_f1;
    let mut stale = 0;
    for step in 1..cfg.depth {
        let step_seed = derive_seed(cfg.seed, stream::EXPAND, step as u64);
        let seeds: Vec<u64> = (0..beam.len()).map(|j| derive_seed(step_seed, stream::EXPAND, j as u64)).collect();
        let expansions = run.expand_all(&cfg.expansion, beam, step, &seeds)?;
        let considered = expansions.iter().map(|e| e.successors.len()).sum();
        let pool = build_pool(beam, &expansions, cfg.include_parents);
        let (chosen, ledger) = run.select(&pool, b, derive_seed(cfg.seed, stream::SELECT, step as u64))?;
        let gradients = expansions.into_iter().flat_map(|e| e.gradients).collect();
        let record = run.step_record(step, &chosen, considered, pool.len(), gradients, ledger)?;
        let improved = record.best_dev_f1 > best_so_far;
        best_so_far = best_so_far.max(record.best_dev_f1);
        steps.push(record);
        *beam = chosen;
        if beam.is_empty() {
            return Ok(());
        }
        stale = if improved { 0 } else { stale + 1 };
        if cfg.patience.is_some_and(|p| stale >= p) {
            run.warnings.push(format!("stopped after step {step}: no dev improvement for {stale} step(s)"));
            return Ok(());
        }
    }
    Ok(())
}

const FLAT_MAX_ROUNDS: u64 = 4;

/// One widened expansion of p0 sized to the protegi candidate count, then
/// one selection. The expansion uses every error group and scales the
/// paraphrase count; further expansions under fresh seeds top it up if it
/// still falls short.
fn flat(run: &mut Run<'_>, steps: &mut Vec<StepRecord>, beam: &mut Vec<PromptCandidate>, p0: &PromptCandidate) -> Result<(), Halt> {
    let cfg = run.cfg;
    let target = cfg.nominal_candidate_count();
    if cfg.depth != RunConfig::default().depth {
        run.warnings.push(format!(
            "flat mode runs a single expansion round; depth {} only sizes its pool",
            cfg.depth
        ));
    }
    if target == 0 {
        return Ok(());
    }
    let per = cfg.expansion.max_successors;
    let widened = ExpansionConfig {
        error_groups_per_expansion: usize::MAX,
        paraphrases_per_edit: cfg.expansion.paraphrases_per_edit.max(1) * target.div_ceil(per),
        max_successors: target,
        ..cfg.expansion.clone()
    };
    let mut seen: HashSet<CandidateId> = HashSet::from([p0.id.clone()]);
    let mut merged = Expansion::default();
    for round in 0..FLAT_MAX_ROUNDS {
        if merged.successors.len() >= target {
            break;
        }
        let seed = derive_seed(derive_seed(cfg.seed, stream::EXPAND, 1), stream::EXPAND, round);
        for e in run.expand_all(&widened, std::slice::from_ref(p0), 1, &[seed])? {
            merged.gradients.extend(e.gradients);
            for c in e.successors {
                if merged.successors.len() < target && seen.insert(c.id.clone()) {
                    merged.successors.push(c);
                }
            }
        }
    }
    if merged.successors.len() < target {
        run.warnings.push(format!(
            "flat mode found {} distinct candidates, short of the {target} target",
            merged.successors.len()
        ));
    }
    let considered = merged.successors.len();
    let pool = build_pool(beam, std::slice::from_ref(&merged), cfg.include_parents);
    let (chosen, ledger) = run.select(&pool, cfg.beam_width, derive_seed(cfg.seed, stream::SELECT, 1))?;
    let record = run.step_record(1, &chosen, considered, pool.len(), merged.gradients, ledger)?;
    steps.push(record);
    *beam = chosen;
    Ok(())
}
