//! Best-arm identification over prompt candidates.
//!
//! An arm is a candidate; one pull is one example evaluation. Every
//! selector charges a [`ScoreLedger`] that refuses to exceed its budget.

mod halving;
mod rejects;
mod ucb;
mod uniform;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CandidateId, FewShotSet, LabeledExample, PromptCandidate};
use crate::eval;
use crate::llm::{Backend, BackendError};

pub use halving::select_sh;
pub use rejects::{select_sr, sr_schedule, sr_schedule_with_horizon};
pub use ucb::select_ucb;
pub use uniform::select_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "ucb")]
    Ucb,
    #[serde(rename = "ucb-e")]
    UcbE,
    #[serde(rename = "sr")]
    SuccessiveRejects,
    #[serde(rename = "sh")]
    SuccessiveHalving,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Uniform,
        Algorithm::Ucb,
        Algorithm::UcbE,
        Algorithm::SuccessiveRejects,
        Algorithm::SuccessiveHalving,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Uniform => "uniform",
            Algorithm::Ucb => "ucb",
            Algorithm::UcbE => "ucb-e",
            Algorithm::SuccessiveRejects => "sr",
            Algorithm::SuccessiveHalving => "sh",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown selection algorithm `{s}` (uniform, ucb, ucb-e, sr, sh)"))
    }
}

/// How UCB-family selectors update Q after a pull.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UcbUpdate {
    /// Q = reward_sum / N.
    #[default]
    Mean,
    /// Q ← Q + r / N with r the sample's mean reward. Not a running
    /// mean; kept for comparison.
    Incremental,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UcbEBonus {
    /// c · sqrt(c / N)
    #[default]
    Scaled,
    /// sqrt(a / N) with a = c
    Canonical,
}

/// What the SR schedule's horizon T stands for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrHorizon {
    /// T = number of arms.
    #[default]
    Arms,
    /// T = configured UCB round count.
    Rounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub algorithm: Algorithm,
    /// c; also the UCB-E `a`.
    pub exploration: f64,
    /// B = budget_per_prompt · number of candidates.
    pub budget_per_prompt: u64,
    /// Examples per UCB round.
    pub sample_size: usize,
    /// UCB rounds T; defaults to B / sample_size.
    pub rounds: Option<u64>,
    pub ucb_update: UcbUpdate,
    pub ucbe_bonus: UcbEBonus,
    pub sr_horizon: SrHorizon,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ucb,
            exploration: 2.0,
            budget_per_prompt: 50,
            sample_size: 5,
            rounds: None,
            ucb_update: UcbUpdate::Mean,
            ucbe_bonus: UcbEBonus::Scaled,
            sr_horizon: SrHorizon::Arms,
        }
    }
}

impl SelectionConfig {
    pub fn budget(&self, n_arms: usize) -> u64 {
        self.budget_per_prompt * n_arms as u64
    }

    pub fn rounds_for(&self, n_arms: usize) -> u64 {
        self.rounds
            .unwrap_or_else(|| self.budget(n_arms) / self.sample_size.max(1) as u64)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.exploration.is_finite() && self.exploration > 0.0) {
            return Err("selection.exploration must be positive".into());
        }
        if self.budget_per_prompt == 0 || self.sample_size == 0 {
            return Err("selection.budget_per_prompt and selection.sample_size must be positive".into());
        }
        if self.rounds == Some(0) {
            return Err("selection.rounds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("budget {budget} cannot cover {needed} evaluations")]
    Budget { budget: u64, needed: u64 },
    #[error("ledger would exceed budget {budget} (spent {spent}, requested {requested})")]
    Overspend { budget: u64, spent: u64, requested: u64 },
    #[error("{0}")]
    Precondition(String),
    #[error("the example pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub id: CandidateId,
    /// Examples evaluated, N(p).
    pub pulls: u64,
    /// Correct predictions over those examples.
    pub reward_sum: f64,
    /// Q(p); absent until the arm has been pulled.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLedger {
    pub algorithm: Algorithm,
    pub budget: u64,
    pub spent: u64,
    pub arms: Vec<ArmStats>,
    /// Arms in the order they were eliminated (SR, SH).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eliminated: Vec<CandidateId>,
}

impl ScoreLedger {
    pub fn new(algorithm: Algorithm, ids: &[CandidateId], budget: u64) -> Self {
        Self {
            algorithm,
            budget,
            spent: 0,
            arms: ids
                .iter()
                .map(|id| ArmStats {
                    id: id.clone(),
                    pulls: 0,
                    reward_sum: 0.0,
                    estimate: None,
                })
                .collect(),
            eliminated: Vec::new(),
        }
    }

    /// Charges `outcomes.len()` evaluations to `arm`.
    pub fn record(&mut self, arm: usize, outcomes: &[bool], update: UcbUpdate) -> Result<(), SelectError> {
        let n = outcomes.len() as u64;
        if self.spent + n > self.budget {
            return Err(SelectError::Overspend {
                budget: self.budget,
                spent: self.spent,
                requested: n,
            });
        }
        if n == 0 {
            return Ok(());
        }
        let correct = outcomes.iter().filter(|&&o| o).count() as f64;
        let a = &mut self.arms[arm];
        a.pulls += n;
        a.reward_sum += correct;
        self.spent += n;
        a.estimate = Some(match update {
            UcbUpdate::Mean => a.reward_sum / a.pulls as f64,
            UcbUpdate::Incremental => {
                let r = correct / n as f64;
                (a.estimate.unwrap_or(0.0) + r / a.pulls as f64).clamp(0.0, 1.0)
            }
        });
        Ok(())
    }

    /// Arm indices by Q descending, ties (and unpulled arms) by id.
    pub fn ranking(&self, among: &[usize]) -> Vec<usize> {
        rank_by(&self.arms, among, |a| a.estimate)
    }
}

pub(crate) fn rank_by(arms: &[ArmStats], among: &[usize], key: impl Fn(&ArmStats) -> Option<f64>) -> Vec<usize> {
    let mut order = among.to_vec();
    order.sort_by(|&i, &j| {
        let (a, b) = (key(&arms[i]), key(&arms[j]));
        let by_q = match (a, b) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_q.then_with(|| arms[i].id.cmp(&arms[j].id))
    });
    order
}

/// Scores one arm on a sample; `true` marks a correct prediction.
pub trait ArmEvaluator: Sync {
    fn pull(&self, arm: usize, sample: &[&LabeledExample]) -> Result<Vec<bool>, BackendError>;
}

/// Arms backed by real prompt candidates and a backend.
pub struct PromptArms<'a> {
    pub backend: &'a dyn Backend,
    pub candidates: &'a [PromptCandidate],
    pub few_shot: &'a FewShotSet,
}

impl ArmEvaluator for PromptArms<'_> {
    fn pull(&self, arm: usize, sample: &[&LabeledExample]) -> Result<Vec<bool>, BackendError> {
        let exs: Vec<LabeledExample> = sample.iter().map(|e| (*e).clone()).collect();
        match eval::evaluate(self.backend, &self.candidates[arm], self.few_shot, &exs) {
            Ok(records) => Ok(records.iter().map(|r| r.correct()).collect()),
            Err(eval::EvalError::Backend(e)) => Err(e),
            Err(eval::EvalError::Template(e)) => Err(BackendError::InvalidRequest(e.to_string())),
        }
    }
}

/// `n` pool indices, without replacement while `n` fits in the pool.
pub(crate) fn draw(pool_len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= pool_len {
        return rand::seq::index::sample(rng, pool_len, n).into_vec();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut perm: Vec<usize> = (0..pool_len).collect();
        perm.shuffle(rng);
        out.extend(perm.into_iter().take(n - out.len()));
    }
    out
}

/// Pulls every arm in `arms` on the same sample, in parallel, and records
/// the outcomes in arm order.
pub(crate) fn pull_all(
    ledger: &mut ScoreLedger,
    eval: &dyn ArmEvaluator,
    arms: &[usize],
    sample: &[&LabeledExample],
    update: UcbUpdate,
) -> Result<(), SelectError> {
    let needed = (arms.len() * sample.len()) as u64;
    if ledger.spent + needed > ledger.budget {
        return Err(SelectError::Overspend {
            budget: ledger.budget,
            spent: ledger.spent,
            requested: needed,
        });
    }
    let outcomes: Vec<Result<Vec<bool>, BackendError>> = arms.par_iter().map(|&a| eval.pull(a, sample)).collect();
    for (&a, o) in arms.iter().zip(outcomes) {
        ledger.record(a, &o?, update)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Indices into the candidate list, best first.
    pub chosen: Vec<usize>,
    pub ledger: ScoreLedger,
}

/// Runs the configured selector over arms `ids` (indexed like the
/// evaluator), keeping `b`.
pub fn select(
    cfg: &SelectionConfig,
    b: usize,
    ids: &[CandidateId],
    pool: &[LabeledExample],
    eval: &dyn ArmEvaluator,
    seed: u64,
) -> Result<Selection, SelectError> {
    if b == 0 {
        return Err(SelectError::Precondition("beam width must be at least 1".into()));
    }
    let n = ids.len();
    let budget = cfg.budget(n);
    if n <= b {
        let ledger = ScoreLedger::new(cfg.algorithm, ids, budget);
        let all: Vec<usize> = (0..n).collect();
        return Ok(Selection {
            chosen: ledger.ranking(&all),
            ledger,
        });
    }
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    match cfg.algorithm {
        Algorithm::Uniform => select_uniform(ids, pool, eval, b, budget, seed),
        Algorithm::Ucb | Algorithm::UcbE => select_ucb(cfg, ids, pool, eval, b, seed),
        Algorithm::SuccessiveRejects => {
            let horizon = match cfg.sr_horizon {
                SrHorizon::Arms => n as u64,
                SrHorizon::Rounds => cfg.rounds_for(n),
            };
            select_sr(ids, pool, eval, b, budget, horizon, seed)
        }
        Algorithm::SuccessiveHalving => select_sh(ids, pool, eval, b, budget, seed),
    }
}

/// Synthetic arms with fixed accuracies: arm `i` answers example `e`
/// correctly iff a hash of (salt, i, e.id) falls below `accuracy[i]`.
/// Repeat pulls of one example agree, as with a temperature-0 model.
#[derive(Debug, Clone)]
pub struct BernoulliArms {
    pub accuracy: Vec<f64>,
    pub salt: u64,
}

impl ArmEvaluator for BernoulliArms {
    fn pull(&self, arm: usize, sample: &[&LabeledExample]) -> Result<Vec<bool>, BackendError> {
        Ok(sample
            .iter()
            .map(|e| {
                let u = crate::seed::unit_interval(crate::seed::digest_u64(&[
                    &self.salt.to_le_bytes(),
                    &(arm as u64).to_le_bytes(),
                    e.id.as_bytes(),
                ]));
                u < self.accuracy[arm]
            })
            .collect())
    }
}
