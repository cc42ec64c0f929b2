use super::{draw, pull_all, Algorithm, ArmEvaluator, ScoreLedger, SelectError, Selection, UcbUpdate};
use crate::data::{CandidateId, LabeledExample};
use crate::seed::{rng_for, stream};

/// Every arm gets `floor(B / n)` evaluations on one shared sample.
pub fn select_uniform(
    ids: &[CandidateId],
    pool: &[LabeledExample],
    eval: &dyn ArmEvaluator,
    b: usize,
    budget: u64,
    seed: u64,
) -> Result<Selection, SelectError> {
    let n = ids.len();
    if budget < n as u64 {
        return Err(SelectError::Budget {
            budget,
            needed: n as u64,
        });
    }
    let per = (budget / n as u64) as usize;
    let picks = draw(pool.len(), per, &mut rng_for(seed, stream::SELECT, 0));
    let sample: Vec<&LabeledExample> = picks.iter().map(|&i| &pool[i]).collect();
    let mut ledger = ScoreLedger::new(Algorithm::Uniform, ids, budget);
    let all: Vec<usize> = (0..n).collect();
    pull_all(&mut ledger, eval, &all, &sample, UcbUpdate::Mean)?;
    let chosen = ledger.ranking(&all).into_iter().take(b).collect();
    Ok(Selection { chosen, ledger })
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::BernoulliArms;
    use super::*;
    use crate::llm::synthetic_dataset;

    #[test]
    fn even_split() {
        let pool = synthetic_dataset(300, 1).examples;
        let arms = BernoulliArms { accuracy: vec![0.5; 4], salt: 1 };
        let s = select_uniform(&ids(4), &pool, &arms, 1, 100, 3).unwrap();
        assert!(s.ledger.arms.iter().all(|a| a.pulls == 25));
        assert_eq!(s.ledger.spent, 100);
    }

    #[test]
    fn too_small_budget() {
        let pool = synthetic_dataset(10, 1).examples;
        let arms = BernoulliArms { accuracy: vec![0.5; 4], salt: 1 };
        assert!(matches!(
            select_uniform(&ids(4), &pool, &arms, 1, 3, 0),
            Err(SelectError::Budget { .. })
        ));
    }

    #[test]
    fn identical_arms_tie_by_id() {
        let pool = synthetic_dataset(50, 1).examples;
        let arms = BernoulliArms { accuracy: vec![1.0; 3], salt: 1 };
        let ids = vec![CandidateId("c".into()), CandidateId("a".into()), CandidateId("b".into())];
        let s = select_uniform(&ids, &pool, &arms, 3, 30, 0).unwrap();
        assert_eq!(s.chosen, [1, 2, 0]);
    }

    #[test]
    fn finds_the_strong_arm() {
        let pool = synthetic_dataset(1000, 2).examples;
        let wins = (0..100)
            .filter(|&s| {
                let arms = BernoulliArms { accuracy: vec![0.5, 0.9, 0.1, 0.5], salt: s };
                select_uniform(&ids(4), &pool, &arms, 1, 400, s).unwrap().chosen == [1]
            })
            .count();
        assert!(wins >= 95, "{wins}");
    }
}
