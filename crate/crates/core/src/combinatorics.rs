//! Exact counting, uniform sampling and closed-form statistics over the space of
//! delta-equal-utility allocations, plus the least-discriminatory reference allocation.

use std::collections::VecDeque;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{Allocation, CandidatePool, EqualUtilitySpace, Individual, Race};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Group that wins the first Black/White tie in the reference allocation.
pub const REFERENCE_TIE_START: Race = Race::Black;

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Natural log of a big integer (`-inf` for zero).
pub fn big_ln(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top = (x >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Size of an allocation space, kept exact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SpaceCount(pub BigUint);

impl SpaceCount {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn log10(&self) -> f64 {
        big_ln(&self.0) / std::f64::consts::LN_10
    }

    /// Scientific notation rounded half-up to `digits` significant figures, e.g. `2e19`
    /// or `1.6e19`. Works directly on the decimal expansion, so it is exact at any size.
    pub fn to_scientific(&self, digits: usize) -> String {
        let digits = digits.max(1);
        let s = self.0.to_str_radix(10);
        if s.len() <= digits {
            let exp = s.len() - 1;
            return format_mantissa(&s, exp);
        }
        let mut kept: Vec<u8> = s.as_bytes()[..digits].iter().map(|b| b - b'0').collect();
        let mut exp = s.len() - 1;
        if s.as_bytes()[digits] >= b'5' {
            let mut i = digits;
            loop {
                if i == 0 {
                    kept.insert(0, 1);
                    kept.pop();
                    exp += 1;
                    break;
                }
                i -= 1;
                if kept[i] == 9 {
                    kept[i] = 0;
                } else {
                    kept[i] += 1;
                    break;
                }
            }
        }
        let mant: String = kept.iter().map(|d| char::from(b'0' + d)).collect();
        format_mantissa(&mant, exp)
    }
}

fn format_mantissa(digits: &str, exp: usize) -> String {
    let trimmed = digits.trim_end_matches('0');
    let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
    if trimmed.len() == 1 {
        format!("{trimmed}e{exp}")
    } else {
        format!("{}.{}e{exp}", &trimmed[..1], &trimmed[1..])
    }
}

impl fmt::Display for SpaceCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for SpaceCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_str_radix(10))
    }
}

impl<'de> Deserialize<'de> for SpaceCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 10)
            .map(SpaceCount)
            .ok_or_else(|| serde::de::Error::custom(format!("not a decimal integer: {s}")))
    }
}

/// Contribution of one qualified-selected level `j`: `C(n', j) * C(n - n', k - j)`.
fn level_term(space: &EqualUtilitySpace, j: usize) -> BigUint {
    if j > space.k {
        return BigUint::zero();
    }
    binomial(space.n_prime, j) * binomial(space.n_unqualified(), space.k - j)
}

/// Number of allocations whose qualified-selected count lies in `[k' - delta, k']`.
pub fn count_equal_utility(space: &EqualUtilitySpace) -> SpaceCount {
    let lo = space.k_prime.saturating_sub(space.delta);
    let total = (lo..=space.k_prime).fold(BigUint::zero(), |acc, j| acc + level_term(space, j));
    SpaceCount(total)
}

/// `k'` reached by a target utility: `floor(u * k)`.
pub fn k_prime_from_utility(utility: f64, k: usize) -> usize {
    // guard against 0.85 * 20 landing at 16.999999999999996
    ((utility * k as f64) + 1e-9).floor().max(0.0) as usize
}

fn draw_level(space: &EqualUtilitySpace, rng: &mut Rng) -> Result<usize> {
    let levels: Vec<usize> = space.feasible_levels().collect();
    match levels.as_slice() {
        [] => Err(Error::InfeasibleSpace(format!(
            "no allocation of k = {} from n = {} (n' = {}) selects between {} and {} qualified",
            space.k,
            space.n,
            space.n_prime,
            space.k_prime.saturating_sub(space.delta),
            space.k_prime
        ))),
        [only] => Ok(*only),
        _ => {
            let lns: Vec<f64> = levels
                .iter()
                .map(|&j| big_ln(&level_term(space, j)))
                .collect();
            let max = lns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = lns.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (j, w) in levels.iter().zip(&weights) {
                if u < *w {
                    return Ok(*j);
                }
                u -= w;
            }
            Ok(*levels.last().expect("nonempty"))
        }
    }
}

fn compose(
    n: usize,
    qualified: &[usize],
    unqualified: &[usize],
    level: usize,
    k: usize,
    rng: &mut Rng,
) -> Allocation {
    let mut outcomes = vec![false; n];
    for i in index::sample(rng, qualified.len(), level) {
        outcomes[qualified[i]] = true;
    }
    for i in index::sample(rng, unqualified.len(), k - level) {
        outcomes[unqualified[i]] = true;
    }
    Allocation::new(outcomes)
}

/// Uniform draw from the space with the canonical labelling: ids `0..n'` are qualified.
pub fn sample_equal_utility(space: &EqualUtilitySpace, rng_seed: u64) -> Result<Allocation> {
    let mut rng = seed::rng(rng_seed);
    sample_equal_utility_with(space, &mut rng)
}

pub fn sample_equal_utility_with(space: &EqualUtilitySpace, rng: &mut Rng) -> Result<Allocation> {
    let level = draw_level(space, rng)?;
    let qualified: Vec<usize> = (0..space.n_prime).collect();
    let unqualified: Vec<usize> = (space.n_prime..space.n).collect();
    Ok(compose(
        space.n,
        &qualified,
        &unqualified,
        level,
        space.k,
        rng,
    ))
}

/// Uniform draw from the equal-utility space of an actual pool.
pub fn sample_pool_equal_utility(
    pool: &CandidatePool,
    k: usize,
    k_prime: usize,
    delta: usize,
    rng: &mut Rng,
) -> Result<Allocation> {
    let space = EqualUtilitySpace::new(pool.n(), k, pool.n_prime(), k_prime, delta)?;
    let level = draw_level(&space, rng)?;
    let (qualified, unqualified): (Vec<&Individual>, Vec<&Individual>) =
        pool.individuals().iter().partition(|i| i.qualified);
    let q: Vec<usize> = qualified.iter().map(|i| i.id).collect();
    let u: Vec<usize> = unqualified.iter().map(|i| i.id).collect();
    Ok(compose(pool.n(), &q, &u, level, k, rng))
}

/// Closed-form selection probabilities and pair agreement of two independent uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticStats {
    pub p_qualified: f64,
    pub p_unqualified: f64,
    pub pairwise_consistency: f64,
}

pub fn analytic_space_stats(space: &EqualUtilitySpace) -> Result<AnalyticStats> {
    if space.delta != 0 {
        return Err(Error::InvalidArgument(
            "closed-form statistics are defined for delta = 0 only".into(),
        ));
    }
    if space.is_empty() {
        return Err(Error::InfeasibleSpace(format!(
            "k - k' = {} exceeds n - n' = {}",
            space.k - space.k_prime,
            space.n_unqualified()
        )));
    }
    let n = space.n as f64;
    let nq = space.n_prime as f64;
    let nu = space.n_unqualified() as f64;
    let ratio = |num: usize, den: f64| if den > 0.0 { num as f64 / den } else { 0.0 };
    let pq = ratio(space.k_prime, nq);
    let pu = ratio(space.k - space.k_prime, nu);
    let agree = |p: f64| p * p + (1.0 - p) * (1.0 - p);
    let pairwise_consistency = (nq / n) * agree(pq) + (nu / n) * agree(pu);
    Ok(AnalyticStats {
        p_qualified: pq,
        p_unqualified: pu,
        pairwise_consistency,
    })
}

/// Sickest-first selection with Black/White alternation on equal illness counts.
///
/// Candidates are merged from three per-race queues, each sorted by illness descending
/// then id. When the Black and White heads tie on illness, a toggle (starting with
/// [`REFERENCE_TIE_START`]) picks the group and flips. An `Other` head tied at the same
/// illness wins only if its id is smaller than the chosen head's id.
fn sickest_first(members: Vec<&Individual>, take: usize) -> Vec<usize> {
    let mut queues: [VecDeque<&Individual>; 3] = Default::default();
    let mut sorted = members;
    sorted.sort_by(|a, b| {
        b.chronic_illnesses
            .cmp(&a.chronic_illnesses)
            .then(a.id.cmp(&b.id))
    });
    for ind in sorted {
        let slot = match ind.race {
            Race::Black => 0,
            Race::White => 1,
            Race::Other => 2,
        };
        queues[slot].push_back(ind);
    }
    let mut black_next = REFERENCE_TIE_START == Race::Black;
    let mut picked = Vec::with_capacity(take);
    while picked.len() < take {
        let top = queues
            .iter()
            .filter_map(|q| q.front().map(|i| i.chronic_illnesses))
            .max();
        let Some(top) = top else { break };
        let at_top =
            |q: &VecDeque<&Individual>| q.front().is_some_and(|i| i.chronic_illnesses == top);
        let (b, w, o) = (at_top(&queues[0]), at_top(&queues[1]), at_top(&queues[2]));
        let mut choice = match (b, w) {
            (true, true) => {
                let c = if black_next { 0 } else { 1 };
                Some((c, true))
            }
            (true, false) => Some((0, false)),
            (false, true) => Some((1, false)),
            (false, false) => None,
        };
        if o {
            let other_id = queues[2].front().map(|i| i.id);
            choice = match choice {
                Some((c, _)) if other_id < queues[c].front().map(|i| i.id) => Some((2, false)),
                None => Some((2, false)),
                keep => keep,
            };
        }
        let (slot, was_tie) = choice.expect("some queue holds the top illness");
        if was_tie {
            black_next = !black_next;
        }
        picked.push(queues[slot].pop_front().expect("nonempty").id);
    }
    picked
}

/// Least-discriminatory equal-utility reference: the `k'` sickest qualified and the
/// `k - k'` sickest unqualified, alternating Black and White on ties.
pub fn reference_least_discriminatory(
    pool: &CandidatePool,
    k: usize,
    k_prime: usize,
) -> Result<Allocation> {
    let n_prime = pool.n_prime();
    if k_prime > n_prime || k < k_prime || k - k_prime > pool.n() - n_prime {
        return Err(Error::InfeasibleSpace(format!(
            "cannot select k' = {k_prime} of n' = {n_prime} qualified and k - k' = {} of {} unqualified",
            k.saturating_sub(k_prime),
            pool.n() - n_prime
        )));
    }
    let (qualified, unqualified): (Vec<&Individual>, Vec<&Individual>) =
        pool.individuals().iter().partition(|i| i.qualified);
    let mut ids = sickest_first(qualified, k_prime);
    ids.extend(sickest_first(unqualified, k - k_prime));
    Allocation::from_selected(pool.n(), ids)
}

/// One cell of the equal-utility count grid over utility, qualification rate,
/// population size and selection rate.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub utility: f64,
    pub qualification_rate: f64,
    pub n: usize,
    pub selection_rate: f64,
    pub k: usize,
    pub n_prime: usize,
    pub k_prime: usize,
    pub count: SpaceCount,
}

/// The 24-cell grid: utility {0.85, 0.95} x qualification {0.50, 0.75} x n {100, 1000}
/// x selection {0.10, 0.25, 0.50}, delta = 0, `k' = floor(u k)`.
pub fn count_grid() -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(24);
    for &(utility, qualification_rate) in &[(0.85, 0.50), (0.95, 0.50), (0.85, 0.75), (0.95, 0.75)]
    {
        for &n in &[100usize, 1000] {
            for &selection_rate in &[0.10, 0.25, 0.50] {
                let k = (selection_rate * n as f64).round() as usize;
                let n_prime = (qualification_rate * n as f64).round() as usize;
                let k_prime = k_prime_from_utility(utility, k);
                let space = EqualUtilitySpace::new(n, k, n_prime, k_prime, 0)
                    .expect("grid parameters are valid");
                cells.push(GridCell {
                    utility,
                    qualification_rate,
                    n,
                    selection_rate,
                    k,
                    n_prime,
                    k_prime,
                    count: count_equal_utility(&space),
                });
            }
        }
    }
    cells
}
