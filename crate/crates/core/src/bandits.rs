//! Selector comparison on synthetic arms at matched per-prompt budgets.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CandidateId;
use crate::llm::synthetic_dataset;
use crate::selection::{self, Algorithm, BernoulliArms, SelectError, SelectionConfig};
use crate::seed::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditBenchConfig {
    /// True accuracy of each arm.
    pub arms: Vec<f64>,
    pub budgets_per_prompt: Vec<u64>,
    pub seeds: u64,
    pub seed: u64,
    /// Examples in each seed's pool.
    pub pool_size: usize,
    /// Arms to identify.
    pub beam_width: usize,
    pub sample_size: usize,
    pub exploration: f64,
}

impl Default for BanditBenchConfig {
    fn default() -> Self {
        Self {
            arms: vec![0.9, 0.7, 0.5, 0.3],
            budgets_per_prompt: vec![25, 50],
            seeds: 200,
            seed: 0,
            pool_size: 1000,
            beam_width: 1,
            sample_size: 5,
            exploration: 2.0,
        }
    }
}

impl BanditBenchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.arms.len() < 2 {
            return Err("need at least two arms".into());
        }
        if let Some(a) = self.arms.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(format!("arm accuracy {a} outside [0, 1]"));
        }
        if self.beam_width == 0 || self.beam_width >= self.arms.len() {
            return Err("beam_width must be between 1 and the number of arms - 1".into());
        }
        if self.seeds == 0 || self.pool_size == 0 || self.sample_size == 0 || self.budgets_per_prompt.is_empty() {
            return Err("seeds, pool_size, sample_size and budgets must be non-empty".into());
        }
        Ok(())
    }

    /// Indices of the true top-`beam_width` arms; ties go to the lower index.
    pub fn true_top(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.arms.len()).collect();
        order.sort_by(|&i, &j| self.arms[j].total_cmp(&self.arms[i]).then(i.cmp(&j)));
        order.truncate(self.beam_width);
        order.sort_unstable();
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub algorithm: Algorithm,
    pub budget_per_prompt: u64,
    /// B = budget_per_prompt · arms.
    pub budget: u64,
    /// Largest number of evaluations any seed actually used.
    pub spent_max: u64,
    pub identified: u64,
    pub seeds: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditBenchReport {
    pub config: BanditBenchConfig,
    pub cells: Vec<BenchCell>,
}

impl BanditBenchReport {
    pub fn cell(&self, algorithm: Algorithm, budget_per_prompt: u64) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.budget_per_prompt == budget_per_prompt)
    }
}

/// Runs one selector on one seed; returns (identified, spent).
fn trial(cfg: &BanditBenchConfig, algorithm: Algorithm, budget_per_prompt: u64, seed_index: u64) -> Result<(bool, u64), SelectError> {
    let seed = derive_seed(cfg.seed, stream::BENCH, seed_index);
    let pool = synthetic_dataset(cfg.pool_size, seed).examples;
    let ids: Vec<CandidateId> = (0..cfg.arms.len())
        .map(|i| CandidateId::of(&format!("bench arm {seed} {i}")))
        .collect();
    let arms = BernoulliArms {
        accuracy: cfg.arms.clone(),
        salt: seed,
    };
    let sel = SelectionConfig {
        algorithm,
        exploration: cfg.exploration,
        budget_per_prompt,
        sample_size: cfg.sample_size,
        ..SelectionConfig::default()
    };
    let s = selection::select(&sel, cfg.beam_width, &ids, &pool, &arms, seed)?;
    let mut chosen = s.chosen.clone();
    chosen.sort_unstable();
    Ok((chosen == cfg.true_top(), s.ledger.spent))
}

/// Every algorithm at every budget over `seeds` seeds. Arms, pool and
/// selection seed are shared across algorithms within a seed.
pub fn bench_bandits(cfg: &BanditBenchConfig) -> Result<BanditBenchReport, SelectError> {
    cfg.validate().map_err(SelectError::Precondition)?;
    let mut cells = Vec::new();
    for &budget_per_prompt in &cfg.budgets_per_prompt {
        for algorithm in Algorithm::ALL {
            let results = (0..cfg.seeds)
                .into_par_iter()
                .map(|s| trial(cfg, algorithm, budget_per_prompt, s))
                .collect::<Result<Vec<_>, _>>()?;
            let identified = results.iter().filter(|(hit, _)| *hit).count() as u64;
            cells.push(BenchCell {
                algorithm,
                budget_per_prompt,
                budget: budget_per_prompt * cfg.arms.len() as u64,
                spent_max: results.iter().map(|(_, spent)| *spent).max().unwrap_or(0),
                identified,
                seeds: cfg.seeds,
                rate: identified as f64 / cfg.seeds as f64,
            });
        }
    }
    Ok(BanditBenchReport {
        config: cfg.clone(),
        cells,
    })
}

/// Rows are algorithms, columns are budgets.
pub fn render_bench_table(r: &BanditBenchReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for b in &r.config.budgets_per_prompt {
        let _ = write!(out, "  {:>14}", format!("{b} per prompt"));
    }
    out.push('\n');
    for algorithm in Algorithm::ALL {
        let _ = write!(out, "{:<8}", algorithm.name());
        for &b in &r.config.budgets_per_prompt {
            let rate = r.cell(algorithm, b).map_or(f64::NAN, |c| c.rate);
            let _ = write!(out, "  {:>14.3}", rate);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "budget");
    for &b in &r.config.budgets_per_prompt {
        let _ = write!(out, "  {:>14}", b * r.config.arms.len() as u64);
    }
    out.push('\n');
    out
}
