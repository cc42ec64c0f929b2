use super::{draw, Algorithm, ArmEvaluator, ScoreLedger, SelectError, Selection, SelectionConfig, UcbEBonus};
use crate::data::{CandidateId, LabeledExample};
use crate::seed::{rng_for, stream};

/// UCB / UCB-E: `T` rounds of `sample_size` fresh examples each. The
/// first `n` rounds pull every arm once, in index order. Without an
/// explicit `rounds`, a budget below `n · sample_size` shrinks the sample to
/// `B / n` so that every arm is still pulled.
pub fn select_ucb(
    cfg: &SelectionConfig,
    ids: &[CandidateId],
    pool: &[LabeledExample],
    eval: &dyn ArmEvaluator,
    b: usize,
    seed: u64,
) -> Result<Selection, SelectError> {
    let n = ids.len();
    let mut per_round = cfg.sample_size as u64;
    let budget = match cfg.rounds {
        Some(t) => t * per_round,
        None => {
            let budget = cfg.budget(n);
            // a budget too small for one full sample per arm shrinks the sample
            if budget / per_round < n as u64 {
                per_round = (budget / n as u64).max(1);
            }
            budget
        }
    };
    let rounds = cfg.rounds.unwrap_or(budget / per_round);
    if rounds < n as u64 {
        return Err(SelectError::Precondition(format!(
            "{} needs at least one round per arm: T = {rounds} < n = {n}",
            cfg.algorithm.name()
        )));
    }
    let algorithm = if cfg.algorithm == Algorithm::UcbE {
        Algorithm::UcbE
    } else {
        Algorithm::Ucb
    };
    let c = cfg.exploration;
    let bonus = |t: u64, pulls: u64| -> f64 {
        let pulls = pulls as f64;
        match (algorithm, cfg.ucbe_bonus) {
            (Algorithm::UcbE, UcbEBonus::Scaled) => c * (c / pulls).sqrt(),
            (Algorithm::UcbE, UcbEBonus::Canonical) => (c / pulls).sqrt(),
            _ => c * ((t as f64).ln() / pulls).sqrt(),
        }
    };

    let mut ledger = ScoreLedger::new(algorithm, ids, budget);
    let mut rng = rng_for(seed, stream::SELECT, 0);
    for t in 1..=rounds {
        let arm = if t <= n as u64 {
            (t - 1) as usize
        } else {
            let mut best = 0;
            let mut best_index = f64::NEG_INFINITY;
            for (i, a) in ledger.arms.iter().enumerate() {
                let index = a.estimate.unwrap_or(0.0) + bonus(t, a.pulls);
                if index > best_index || (index == best_index && a.id < ledger.arms[best].id) {
                    best = i;
                    best_index = index;
                }
            }
            best
        };
        let picks = draw(pool.len(), per_round as usize, &mut rng);
        let sample: Vec<&LabeledExample> = picks.iter().map(|&i| &pool[i]).collect();
        let outcomes = eval.pull(arm, &sample)?;
        ledger.record(arm, &outcomes, cfg.ucb_update)?;
    }
    let all: Vec<usize> = (0..n).collect();
    let chosen = ledger.ranking(&all).into_iter().take(b).collect();
    Ok(Selection { chosen, ledger })
}
