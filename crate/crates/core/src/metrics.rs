//! Evaluation quantities over sets of allocations.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::domain::{AgeBracket, Allocation, CandidatePool, Race, RashomonSample};
use crate::error::{Error, Result};
use crate::mappings::top_k_scores;

fn check_lengths(allocs: &[Allocation]) -> Result<usize> {
    let n = allocs.first().map_or(0, Allocation::n);
    match allocs.iter().find(|a| a.n() != n) {
        Some(a) => Err(Error::Dimension {
            expected: n,
            got: a.n(),
        }),
        None => Ok(n),
    }
}

fn check_pool(alloc: &Allocation, pool: &CandidatePool) -> Result<()> {
    if alloc.n() != pool.n() {
        return Err(Error::Dimension {
            expected: pool.n(),
            got: alloc.n(),
        });
    }
    Ok(())
}

/// Number of distinct outcome vectors.
pub fn unique_allocations(allocs: &[Allocation]) -> Result<usize> {
    check_lengths(allocs)?;
    Ok(allocs
        .iter()
        .map(Allocation::outcomes)
        .collect::<HashSet<_>>()
        .len())
}

/// Mean chronic illnesses of selected Black patients over that of selected White patients.
pub fn threshold_test_ratio(alloc: &Allocation, pool: &CandidatePool) -> Result<f64> {
    check_pool(alloc, pool)?;
    let mean = |race: Race| {
        let (sum, count) = alloc
            .selected()
            .map(|i| &pool.individuals()[i])
            .filter(|ind| ind.race == race)
            .fold((0u64, 0u64), |(s, c), ind| {
                (s + u64::from(ind.chronic_illnesses), c + 1)
            });
        (count > 0).then(|| sum as f64 / count as f64)
    };
    match (mean(Race::Black), mean(Race::White)) {
        (Some(b), Some(w)) if w > 0.0 => Ok(b / w),
        (Some(_), Some(_)) => Err(Error::UndefinedRatio(
            "selected White patients have no chronic illnesses".into(),
        )),
        (None, _) => Err(Error::UndefinedRatio("no Black patient selected".into())),
        (_, None) => Err(Error::UndefinedRatio("no White patient selected".into())),
    }
}

fn selection_counts(allocs: &[Allocation]) -> Vec<usize> {
    let n = allocs.first().map_or(0, Allocation::n);
    let mut counts = vec![0usize; n];
    for a in allocs {
        for i in a.selected() {
            counts[i] += 1;
        }
    }
    counts
}

/// Probability that an individual gets the same outcome in two distinct allocations of
/// the set, averaged over individuals; exact over all unordered pairs.
pub fn pairwise_consistency(allocs: &[Allocation]) -> Result<f64> {
    let n = check_lengths(allocs)?;
    let m = allocs.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "pairwise consistency needs at least 2 allocations, got {m}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("allocations over zero individuals"));
    }
    let pairs = |s: usize| (s * s.saturating_sub(1) / 2) as f64;
    let total = pairs(m);
    let sum: f64 = selection_counts(allocs)
        .into_iter()
        .map(|s| (pairs(s) + pairs(m - s)) / total)
        .sum();
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProfile {
    pub systemic_rejection: f64,
    pub multiple_outcomes: f64,
    pub always_accepted: f64,
}

/// Outcome spread among qualified individuals only.
pub fn outcome_profile(allocs: &[Allocation], pool: &CandidatePool) -> Result<OutcomeProfile> {
    check_lengths(allocs)?;
    let first = allocs.first().ok_or(Error::EmptyInput("no allocations"))?;
    check_pool(first, pool)?;
    if pool.n_prime() == 0 {
        return Err(Error::Degenerate(
            "no qualified individuals in the pool".into(),
        ));
    }
    let m = allocs.len();
    let counts = selection_counts(allocs);
    let (mut never, mut always) = (0usize, 0usize);
    for ind in pool.individuals().iter().filter(|i| i.qualified) {
        match counts[ind.id] {
            0 => never += 1,
            c if c == m => always += 1,
            _ => {}
        }
    }
    let nq = pool.n_prime();
    let systemic_rejection = never as f64 / nq as f64;
    let always_accepted = always as f64 / nq as f64;
    Ok(OutcomeProfile {
        systemic_rejection,
        multiple_outcomes: (nq - never - always) as f64 / nq as f64,
        always_accepted,
    })
}

pub fn age_histogram(
    alloc: &Allocation,
    pool: &CandidatePool,
) -> Result<[usize; AgeBracket::COUNT]> {
    check_pool(alloc, pool)?;
    let mut h = [0usize; AgeBracket::COUNT];
    for i in alloc.selected() {
        h[pool.individuals()[i].age_bracket.index()] += 1;
    }
    Ok(h)
}

/// Shannon entropy, in bits, of selected individuals over age brackets.
pub fn age_entropy(alloc: &Allocation, pool: &CandidatePool) -> Result<f64> {
    let h = age_histogram(alloc, pool)?;
    let k: usize = h.iter().sum();
    if k == 0 {
        return Err(Error::Degenerate("no individuals selected".into()));
    }
    Ok(h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / k as f64;
            -p * p.log2()
        })
        .sum())
}

/// Unweighted mean of member scores. Each individual's scores are summed in sorted
/// order, so the result does not depend on member order.
pub fn ensemble_scores(sample: &RashomonSample) -> Result<Vec<f64>> {
    let first = sample
        .members
        .first()
        .ok_or(Error::EmptyInput("empty Rashomon sample"))?;
    let n = first.n();
    if let Some(m) = sample.members.iter().find(|m| m.n() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: m.n(),
        });
    }
    let m = sample.len() as f64;
    let mut column = Vec::with_capacity(sample.len());
    Ok((0..n)
        .map(|i| {
            column.clear();
            column.extend(sample.members.iter().map(|p| p.scores()[i]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / m
        })
        .collect())
}

pub fn ensemble_allocation(sample: &RashomonSample, k: usize) -> Result<Allocation> {
    top_k_scores(&ensemble_scores(sample)?, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRisk {
    pub individuals: usize,
    /// Number of (model, individual) scores pooled.
    pub scores: usize,
    pub mean: f64,
    pub sd: f64,
    /// 5th, 25th, 50th, 75th and 95th percentiles.
    pub quantiles: [f64; 5],
}

pub const RISK_QUANTILES: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];

/// Linear interpolation between order statistics (the common "type 7" rule).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample mean and standard deviation (denominator `len - 1`; zero for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Distribution of all member scores for individuals with exactly `illness_level`
/// chronic illnesses, per race. Empty strata map to `None`.
pub fn risk_by_group(
    sample: &RashomonSample,
    pool: &CandidatePool,
    illness_level: u32,
) -> Result<BTreeMap<Race, Option<GroupRisk>>> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("empty Rashomon sample"));
    }
    if let Some(m) = sample.members.iter().find(|m| m.n() != pool.n()) {
        return Err(Error::Dimension {
            expected: pool.n(),
            got: m.n(),
        });
    }
    let mut out = BTreeMap::new();
    for race in Race::ALL {
        let ids: Vec<usize> = pool
            .individuals()
            .iter()
            .filter(|i| i.race == race && i.chronic_illnesses == illness_level)
            .map(|i| i.id)
            .collect();
        if ids.is_empty() {
            out.insert(race, None);
            continue;
        }
        let mut scores: Vec<f64> = sample
            .members
            .iter()
            .flat_map(|m| ids.iter().map(move |&i| m.scores()[i]))
            .collect();
        scores.sort_by(f64::total_cmp);
        let (mean, sd) = mean_sd(&scores);
        out.insert(
            race,
            Some(GroupRisk {
                individuals: ids.len(),
                scores: scores.len(),
                mean,
                sd,
                quantiles: RISK_QUANTILES.map(|p| quantile(&scores, p)),
            }),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Individual, MethodTag, PredictionVector};
    use proptest::prelude::*;

    fn alloc(bits: &[u8]) -> Allocation {
        Allocation::new(bits.iter().map(|&b| b == 1).collect())
    }

    fn pool(spec: &[(Race, u32, usize)], q: u32) -> CandidatePool {
        let inds = spec
            .iter()
            .map(|&(race, ill, age)| {
                Individual::new(vec![], race, AgeBracket::from_index(age).unwrap(), ill)
            })
            .collect();
        CandidatePool::new(inds, q)
    }

    fn member(scores: &[f64]) -> PredictionVector {
        PredictionVector::new(scores.to_vec(), 0.4, MethodTag::Bootstrap, "m").unwrap()
    }

    fn sample(members: Vec<PredictionVector>) -> RashomonSample {
        RashomonSample {
            method: MethodTag::Bootstrap,
            members,
            epsilon: 0.01,
            best_loss: 0.4,
        }
    }

    #[test]
    fn unique_counts() {
        assert_eq!(
            unique_allocations(&[alloc(&[1, 0]), alloc(&[1, 0])]).unwrap(),
            1
        );
        assert_eq!(
            unique_allocations(&[alloc(&[1, 0]), alloc(&[0, 1]), alloc(&[1, 1])]).unwrap(),
            3
        );
        assert!(unique_allocations(&[alloc(&[1, 0]), alloc(&[1])]).is_err());
    }

    #[test]
    fn ratio_examples() {
        let p = pool(
            &[
                (Race::Black, 4, 0),
                (Race::White, 2, 0),
                (Race::Other, 9, 0),
                (Race::White, 5, 0),
            ],
            1,
        );
        assert_eq!(
            threshold_test_ratio(&alloc(&[1, 1, 1, 0]), &p).unwrap(),
            2.0
        );
        let p2 = pool(&[(Race::Black, 3, 0), (Race::White, 3, 0)], 1);
        assert_eq!(threshold_test_ratio(&alloc(&[1, 1]), &p2).unwrap(), 1.0);
        assert!(matches!(
            threshold_test_ratio(&alloc(&[0, 1, 1, 1]), &p),
            Err(Error::UndefinedRatio(_))
        ));
    }

    #[test]
    fn consistency_examples() {
        let a = alloc(&[1, 0, 1, 0]);
        assert_eq!(pairwise_consistency(&[a.clone(), a.clone()]).unwrap(), 1.0);
        assert_eq!(
            pairwise_consistency(&[alloc(&[1, 1, 0, 0]), alloc(&[0, 0, 1, 1])]).unwrap(),
            0.0
        );
        let v = pairwise_consistency(&[alloc(&[1, 0]), alloc(&[1, 0]), alloc(&[0, 1])]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert!(pairwise_consistency(&[a]).is_err());
    }

    #[test]
    fn profile_examples() {
        let p = pool(
            &[
                (Race::White, 3, 0),
                (Race::White, 2, 0),
                (Race::White, 0, 0),
                (Race::Black, 1, 0),
            ],
            1,
        );
        let single = outcome_profile(&[alloc(&[1, 0, 1, 0])], &p).unwrap();
        assert_eq!(single.multiple_outcomes, 0.0);
        let cover = outcome_profile(
            &[
                alloc(&[1, 0, 0, 1]),
                alloc(&[0, 1, 0, 0]),
                alloc(&[0, 0, 1, 1]),
            ],
            &p,
        )
        .unwrap();
        assert_eq!(cover.systemic_rejection, 0.0);
        assert_eq!(cover.always_accepted, 0.0);
        assert_eq!(cover.multiple_outcomes, 1.0);
        let none = pool(&[(Race::White, 0, 0)], 1);
        assert!(outcome_profile(&[alloc(&[1])], &none).is_err());
    }

    #[test]
    fn entropy_examples() {
        let one = pool(&[(Race::White, 0, 3), (Race::White, 0, 3)], 1);
        assert_eq!(age_entropy(&alloc(&[1, 1]), &one).unwrap(), 0.0);
        let seven: Vec<_> = (0..7).map(|a| (Race::White, 0, a)).collect();
        let p = pool(&seven, 1);
        assert!((age_entropy(&alloc(&[1; 7]), &p).unwrap() - 7f64.log2()).abs() < 1e-12);
        let two = pool(&[(Race::White, 0, 0), (Race::White, 0, 6)], 1);
        assert!((age_entropy(&alloc(&[1, 1]), &two).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ensemble_examples() {
        let one = sample(vec![member(&[0.2, 0.9, 0.5])]);
        assert_eq!(
            ensemble_allocation(&one, 2).unwrap(),
            crate::mappings::top_k(&one.members[0], 2).unwrap()
        );
        // opposite rankings average to a tie, broken toward the lower id
        let opposed = sample(vec![member(&[0.8, 0.2]), member(&[0.2, 0.8])]);
        assert_eq!(
            ensemble_allocation(&opposed, 1)
                .unwrap()
                .selected()
                .collect::<Vec<_>>(),
            vec![0]
        );
        assert!(ensemble_allocation(&sample(vec![]), 1).is_err());
    }

    #[test]
    fn risk_single_model() {
        let p = pool(
            &[
                (Race::Black, 2, 0),
                (Race::White, 2, 0),
                (Race::White, 1, 0),
            ],
            1,
        );
        let r = risk_by_group(&sample(vec![member(&[0.3, 0.6, 0.9])]), &p, 2).unwrap();
        assert_eq!(r[&Race::Black].as_ref().unwrap().mean, 0.3);
        assert_eq!(r[&Race::White].as_ref().unwrap().mean, 0.6);
        assert!(r[&Race::Other].is_none());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-12);
        assert_eq!(mean_sd(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
    }

    fn allocs_strategy() -> impl Strategy<Value = Vec<Vec<bool>>> {
        (1usize..9, 2usize..7).prop_flat_map(|(n, m)| {
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), m)
        })
    }

    proptest! {
        #[test]
        fn consistency_matches_brute_force(rows in allocs_strategy()) {
            let allocs: Vec<Allocation> = rows.iter().cloned().map(Allocation::new).collect();
            let n = rows[0].len();
            let mut agree = 0usize;
            let mut pairs = 0usize;
            for a in 0..rows.len() {
                for b in a + 1..rows.len() {
                    pairs += 1;
                    agree += (0..n).filter(|&i| rows[a][i] == rows[b][i]).count();
                }
            }
            let brute = agree as f64 / (pairs * n) as f64;
            prop_assert!((pairwise_consistency(&allocs).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn profile_sums_to_one_and_entropy_is_bounded(
            rows in allocs_strategy(),
            seed in any::<u64>(),
        ) {
            let n = rows[0].len();
            let spec: Vec<_> = (0..n).map(|i| {
                let h = crate::seed::derive(seed, "p", i as u64);
                (Race::ALL[(h % 3) as usize], (h >> 8) as u32 % 4, (h >> 16) as usize % 7)
            }).collect();
            let p = pool(&spec, 1);
            let allocs: Vec<Allocation> = rows.iter().cloned().map(Allocation::new).collect();
            if p.n_prime() > 0 {
                let pr = outcome_profile(&allocs, &p).unwrap();
                prop_assert!((pr.systemic_rejection + pr.multiple_outcomes + pr.always_accepted - 1.0).abs() < 1e-12);
            }
            for a in &allocs {
                if a.k() > 0 {
                    prop_assert!(age_entropy(a, &p).unwrap() <= 7f64.log2() + 1e-12);
                }
            }
        }

        #[test]
        fn ensemble_ignores_member_order(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 2..6),
            k in 1usize..6,
        ) {
            let forward = sample(rows.iter().map(|r| member(r)).collect());
            let backward = sample(rows.iter().rev().map(|r| member(r)).collect());
            prop_assert_eq!(ensemble_scores(&forward).unwrap(), ensemble_scores(&backward).unwrap());
            prop_assert_eq!(ensemble_allocation(&forward, k).unwrap(), ensemble_allocation(&backward, k).unwrap());
        }

        #[test]
        fn consistency_ignores_relabeling(rows in allocs_strategy(), shift in 0usize..9) {
            let n = rows[0].len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let relabel = |r: &Vec<bool>| Allocation::new(perm.iter().map(|&j| r[j]).collect());
            let a: Vec<Allocation> = rows.iter().cloned().map(Allocation::new).collect();
            let b: Vec<Allocation> = rows.iter().map(relabel).collect();
            prop_assert!((pairwise_consistency(&a).unwrap() - pairwise_consistency(&b).unwrap()).abs() < 1e-12);
            prop_assert_eq!(unique_allocations(&a).unwrap(), unique_allocations(&b).unwrap());
        }
    }
}
