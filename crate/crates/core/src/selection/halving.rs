use super::{draw, pull_all, Algorithm, ArmEvaluator, ScoreLedger, SelectError, Selection, UcbUpdate};
use crate::data::{CandidateId, LabeledExample};
use crate::seed::{rng_for, stream};

/// Rounds needed to get from `n` survivors down to `b`; ceil(log2 n)
/// when `b` is 1.
fn halving_rounds(n: usize, b: usize) -> u64 {
    let (mut left, mut rounds) = (n, 0);
    while left > b {
        left = left.div_ceil(2).max(b);
        rounds += 1;
    }
    rounds
}

/// Halves the survivor set (rounding up, never below `b`) each round.
/// Per-arm evaluations per round are `floor(B / (|S| · R))`, at least one,
/// where R is the number of halving rounds. If what is left of the budget
/// cannot cover a round, the current top `b` are returned.
pub fn select_sh(
    ids: &[CandidateId],
    pool: &[LabeledExample],
    eval: &dyn ArmEvaluator,
    b: usize,
    budget: u64,
    seed: u64,
) -> Result<Selection, SelectError> {
    let n = ids.len();
    if n <= b {
        return Err(SelectError::Precondition(format!("need more arms ({n}) than survivors ({b})")));
    }
    let rounds = halving_rounds(n, b);
    let mut ledger = ScoreLedger::new(Algorithm::SuccessiveHalving, ids, budget);
    let mut survivors: Vec<usize> = (0..n).collect();
    let mut round = 0u64;
    while survivors.len() > b {
        let per = (budget / (survivors.len() as u64 * rounds)).max(1);
        if ledger.spent + per * survivors.len() as u64 > budget {
            tracing::debug!(round, survivors = survivors.len(), "halving stopped: budget exhausted");
            break;
        }
        let picks = draw(pool.len(), per as usize, &mut rng_for(seed, stream::SELECT, round));
        let sample: Vec<&LabeledExample> = picks.iter().map(|&i| &pool[i]).collect();
        pull_all(&mut ledger, eval, &survivors, &sample, UcbUpdate::Mean)?;
        let keep = survivors.len().div_ceil(2).max(b);
        let ranked = ledger.ranking(&survivors);
        for &gone in &ranked[keep..] {
            ledger.eliminated.push(ledger.arms[gone].id.clone());
        }
        survivors = ranked[..keep].to_vec();
        round += 1;
    }
    let mut chosen = ledger.ranking(&survivors);
    chosen.truncate(b);
    Ok(Selection { chosen, ledger })
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::BernoulliArms;
    use super::*;
    use crate::llm::synthetic_dataset;

    fn ceil_log2(n: usize) -> u64 {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }

    #[test]
    fn log2_rounds() {
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
    }

    #[test]
    fn rounds_stop_at_the_beam_width() {
        assert_eq!(halving_rounds(9, 1), ceil_log2(9));
        assert_eq!(halving_rounds(11, 9), 1);
        assert_eq!(halving_rounds(16, 4), 2);
    }

    #[test]
    fn tiny_budgets_stop_early_within_budget() {
        let pool = synthetic_dataset(50, 1).examples;
        let arms = BernoulliArms { accuracy: vec![0.5; 11], salt: 0 };
        // first round spends 11 of 22; the second would need 6 at one each
        let s = select_sh(&ids(11), &pool, &arms, 1, 22, 0).unwrap();
        assert!(s.ledger.spent <= 22);
        assert_eq!(s.chosen.len(), 1);
        let s = select_sh(&ids(11), &pool, &arms, 9, 22, 0).unwrap();
        assert_eq!((s.ledger.spent, s.chosen.len()), (22, 9));
    }

    #[test]
    fn eight_arms_halve_to_one() {
        let pool = synthetic_dataset(500, 1).examples;
        let arms = BernoulliArms { accuracy: vec![0.5; 8], salt: 0 };
        let s = select_sh(&ids(8), &pool, &arms, 1, 240, 0).unwrap();
        // rounds of 8, 4, 2 arms; first round gives floor(240 / 24) = 10 each
        assert_eq!(s.ledger.eliminated.len(), 7);
        let pulls: Vec<u64> = s.ledger.arms.iter().map(|a| a.pulls).collect();
        assert!(pulls.iter().all(|&p| p >= 10));
        assert_eq!(pulls.iter().filter(|&&p| p == 10).count(), 4);
        assert!(s.ledger.spent <= 240);
    }

    #[test]
    fn starved_rounds_take_one_example_each() {
        let pool = synthetic_dataset(50, 1).examples;
        let arms = BernoulliArms { accuracy: vec![0.5; 8], salt: 0 };
        // 8 x 1, 4 x 1, then 2 x floor(20 / 6)
        let s = select_sh(&ids(8), &pool, &arms, 1, 20, 0).unwrap();
        assert_eq!((s.ledger.spent, s.ledger.eliminated.len()), (18, 7));
    }

    #[test]
    fn strong_arm_among_coins() {
        let pool = synthetic_dataset(1000, 2).examples;
        let wins = (0..100)
            .filter(|&s| {
                let mut acc = vec![0.5; 8];
                acc[(s % 8) as usize] = 0.95;
                let arms = BernoulliArms { accuracy: acc, salt: s };
                select_sh(&ids(8), &pool, &arms, 1, 1200, s).unwrap().chosen == [(s % 8) as usize]
            })
            .count();
        assert!(wins >= 90, "{wins}");
    }
}
