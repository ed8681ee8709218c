use allocmult::combinatorics::{
    analytic_space_stats, binomial, count_equal_utility, count_grid, k_prime_from_utility,
    reference_least_discriminatory, sample_equal_utility,
};
use allocmult::domain::{AgeBracket, CandidatePool, EqualUtilitySpace, Individual, Race};
use allocmult::metrics::pairwise_consistency;
use num_bigint::BigUint;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

fn brute_count(n: usize, k: usize, n_prime: usize, k_prime: usize, delta: usize) -> u64 {
    let lo = k_prime.saturating_sub(delta);
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .filter(|m| (lo..=k_prime).contains(&((m & ((1 << n_prime) - 1)).count_ones() as usize)))
        .count() as u64
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn space_params() -> impl Strategy<Value = (usize, usize, usize, usize, usize)> {
    (1usize..=13)
        .prop_flat_map(|n| (Just(n), 0..=n, 0..=n))
        .prop_flat_map(|(n, k, np)| (Just(n), Just(k), Just(np), 0..=k.min(np)))
        .prop_flat_map(|(n, k, np, kp)| (Just(n), Just(k), Just(np), Just(kp), 0..=kp + 1))
}

proptest! {
    #[test]
    fn count_matches_enumeration((n, k, np, kp, d) in space_params()) {
        let space = EqualUtilitySpace::new(n, k, np, kp, d).unwrap();
        prop_assert_eq!(count_equal_utility(&space).value().clone(), BigUint::from(brute_count(n, k, np, kp, d)));
    }

    #[test]
    fn log10_matches_log_gamma(n in 200usize..3000, kf in 0.05f64..0.95, qf in 0.05f64..0.95, uf in 0.0f64..1.0) {
        let k = ((n as f64 * kf) as usize).max(1);
        let np = ((n as f64 * qf) as usize).max(1);
        let lo = k.saturating_sub(n - np);
        let hi = k.min(np);
        let kp = lo + ((hi - lo) as f64 * uf) as usize;
        let space = EqualUtilitySpace::new(n, k, np, kp, 0).unwrap();
        let oracle = (ln_choose(np, kp) + ln_choose(n - np, k - kp)) / std::f64::consts::LN_10;
        let got = count_equal_utility(&space).log10();
        prop_assert!((got - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{} vs {}", got, oracle);
    }

    #[test]
    fn samples_stay_in_the_space((n, k, np, kp, d) in space_params(), seed in any::<u64>()) {
        let space = EqualUtilitySpace::new(n, k, np, kp, d).unwrap();
        match sample_equal_utility(&space, seed) {
            Ok(a) => {
                prop_assert_eq!(a.k(), k);
                let j = a.selected().filter(|&i| i < np).count();
                prop_assert!(j <= kp && j + d >= kp);
            }
            Err(_) => prop_assert!(space.is_empty()),
        }
    }

    #[test]
    fn binomial_symmetry_and_pascal(n in 2usize..400, k in 1usize..400) {
        let k = k.min(n - 1);
        prop_assert_eq!(binomial(n, k), binomial(n, n - k));
        prop_assert_eq!(binomial(n, k), binomial(n - 1, k - 1) + binomial(n - 1, k));
    }
}

#[test]
fn grid_cell_exact_values() {
    let grid = count_grid();
    // C(50,8) * C(50,2), computed independently in u128
    let c = |n: u128, k: u128| (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1));
    assert_eq!(
        grid[0].count.value().clone(),
        BigUint::from(c(50, 8) * c(50, 2))
    );
    assert_eq!(grid[0].count.to_string(), "657676346250");
    assert_eq!(grid[1].k_prime, 21);
}

#[test]
fn floor_utility_mapping() {
    assert_eq!(k_prime_from_utility(0.85, 25), 21);
    assert_eq!(k_prime_from_utility(0.85, 20), 17);
    assert_eq!(k_prime_from_utility(0.95, 100), 95);
    assert_eq!(k_prime_from_utility(0.0, 10), 0);
}

#[test]
fn analytic_consistency_agrees_with_sampling() {
    let space = EqualUtilitySpace::new(200, 50, 70, 40, 0).unwrap();
    let stats = analytic_space_stats(&space).unwrap();
    assert!((stats.p_qualified - 40.0 / 70.0).abs() < 1e-12);
    assert!((stats.p_unqualified - 10.0 / 130.0).abs() < 1e-12);
    let draws: Vec<_> = (0..2000)
        .map(|s| sample_equal_utility(&space, s).unwrap())
        .collect();
    let empirical = pairwise_consistency(&draws).unwrap();
    assert!(
        (empirical - stats.pairwise_consistency).abs() < 0.005,
        "{empirical} vs {}",
        stats.pairwise_consistency
    );
}

fn person(race: Race, illnesses: u32) -> Individual {
    Individual::new(
        vec![0.0],
        race,
        AgeBracket::from_index(0).unwrap(),
        illnesses,
    )
}

#[test]
fn reference_allocation_takes_the_sickest_and_alternates_ties() {
    let pool = CandidatePool::new(
        vec![
            person(Race::White, 5),
            person(Race::White, 3),
            person(Race::Black, 3),
            person(Race::White, 3),
            person(Race::Black, 3),
            person(Race::White, 0),
            person(Race::Black, 1),
            person(Race::White, 1),
        ],
        2,
    );
    let a = reference_least_discriminatory(&pool, 5, 3).unwrap();
    assert_eq!(a.k(), 5);
    assert_eq!(
        a.selected()
            .filter(|&i| pool.individuals()[i].qualified)
            .count(),
        3
    );
    // the 5 first, then the first tie goes to a Black patient, the next to a White one
    assert!(a.is_selected(0) && a.is_selected(2) && a.is_selected(1));
    // unqualified fill: the two with one illness, Black first
    assert!(a.is_selected(6) && a.is_selected(7));
    assert!(reference_least_discriminatory(&pool, 5, 6).is_err());
}
