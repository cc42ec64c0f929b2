use super::{draw, pull_all, Algorithm, ArmEvaluator, ScoreLedger, SelectError, Selection, UcbUpdate};
use crate::data::{CandidateId, LabeledExample};
use crate::seed::{rng_for, stream};

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `1/2 + Σ_{i=2}^{t} 1/i` as a reduced fraction, if it fits.
fn log_bar(t: u64) -> Option<(u128, u128)> {
    let (mut num, mut den) = (1u128, 2u128);
    for i in 2..=t as u128 {
        // num/den + 1/i
        num = num.checked_mul(i)?.checked_add(den)?;
        den = den.checked_mul(i)?;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    Some((num, den))
}

/// Cumulative per-arm sample counts n_1..n_{n-1} for successive rejects,
/// with horizon T = n.
pub fn sr_schedule(n: usize, budget: u64) -> Result<Vec<u64>, SelectError> {
    sr_schedule_with_horizon(n, budget, n as u64)
}

/// `n_k = ceil((B - T) / (logbar(T) · (T + 1 - k)))` for k = 1..n-1.
pub fn sr_schedule_with_horizon(n: usize, budget: u64, horizon: u64) -> Result<Vec<u64>, SelectError> {
    if n < 2 {
        return Err(SelectError::Precondition(format!("successive rejects needs at least 2 arms, got {n}")));
    }
    if horizon + 1 < n as u64 {
        return Err(SelectError::Precondition(format!(
            "horizon {horizon} is shorter than the {} rejection phases",
            n - 1
        )));
    }
    if budget <= horizon {
        return Err(SelectError::Budget {
            budget,
            needed: horizon + 1,
        });
    }
    let spare = (budget - horizon) as u128;
    let exact = log_bar(horizon);
    Ok((1..n as u64)
        .map(|k| {
            let steps = (horizon + 1 - k) as u128;
            let fraction = exact.and_then(|(p, q)| {
                let num = spare.checked_mul(q)?;
                let den = p.checked_mul(steps)?;
                Some(num.div_ceil(den) as u64)
            });
            fraction.unwrap_or_else(|| {
                let lb = 0.5 + (2..=horizon).map(|i| 1.0 / i as f64).sum::<f64>();
                (spare as f64 / (lb * steps as f64)).ceil() as u64
            })
        })
        .collect())
}

/// Drops the lowest-Q survivor after each phase until `b` remain. Phase k
/// evaluates every survivor on `n_k - n_{k-1}` fresh shared examples.
pub fn select_sr(
    ids: &[CandidateId],
    pool: &[LabeledExample],
    eval: &dyn ArmEvaluator,
    b: usize,
    budget: u64,
    horizon: u64,
    seed: u64,
) -> Result<Selection, SelectError> {
    let n = ids.len();
    if n <= b {
        return Err(SelectError::Precondition(format!("need more arms ({n}) than survivors ({b})")));
    }
    let schedule = sr_schedule_with_horizon(n, budget, horizon)?;
    let mut ledger = ScoreLedger::new(Algorithm::SuccessiveRejects, ids, budget);
    let mut survivors: Vec<usize> = (0..n).collect();
    let mut previous = 0;
    for (phase, &target) in schedule.iter().enumerate().take(n - b) {
        let fresh = (target - previous) as usize;
        previous = target;
        let picks = draw(pool.len(), fresh, &mut rng_for(seed, stream::SELECT, phase as u64));
        let sample: Vec<&LabeledExample> = picks.iter().map(|&i| &pool[i]).collect();
        pull_all(&mut ledger, eval, &survivors, &sample, UcbUpdate::Mean)?;
        let mut ranked = ledger.ranking(&survivors);
        let worst = ranked.pop().expect("survivors non-empty");
        ledger.eliminated.push(ledger.arms[worst].id.clone());
        survivors = ranked;
    }
    let chosen = ledger.ranking(&survivors);
    Ok(Selection { chosen, ledger })
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::BernoulliArms;
    use super::*;
    use crate::llm::synthetic_dataset;

    #[test]
    fn reference_schedule() {
        assert_eq!(sr_schedule(4, 100).unwrap(), [16, 21, 31]);
    }

    #[test]
    fn two_arm_closed_form() {
        for b in [3u64, 10, 101, 5000] {
            // logbar(2) = 1, so n_1 = ceil((B - 2) / 2)
            assert_eq!(sr_schedule(2, b).unwrap(), [(b - 2).div_ceil(2)]);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(sr_schedule(1, 100).is_err());
        assert!(sr_schedule(4, 4).is_err());
        assert!(sr_schedule_with_horizon(5, 100, 2).is_err());
    }

    #[test]
    fn large_horizon_falls_back_to_floating_point() {
        let s = sr_schedule_with_horizon(4, 100_000, 400).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn three_arms_two_phases() {
        let pool = synthetic_dataset(200, 1).examples;
        let arms = BernoulliArms { accuracy: vec![0.2, 0.8, 0.5], salt: 0 };
        let s = select_sr(&ids(3), &pool, &arms, 1, 300, 3, 0).unwrap();
        assert_eq!(s.ledger.eliminated.len(), 2);
        assert_eq!(s.chosen.len(), 1);
        assert!(s.ledger.spent <= 300);
    }

    #[test]
    fn keeps_the_top_two() {
        let pool = synthetic_dataset(1000, 4).examples;
        let wins = (0..100)
            .filter(|&s| {
                let arms = BernoulliArms { accuracy: vec![0.3, 0.7, 0.9, 0.5], salt: s };
                let mut got = select_sr(&ids(4), &pool, &arms, 2, 600, 4, s).unwrap().chosen;
                got.sort();
                got == [1, 2]
            })
            .count();
        assert!(wins >= 90, "{wins}");
    }
}
