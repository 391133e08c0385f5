//! The two mechanisms under study: random serial dictatorship (RSD) and
//! the probabilistic serial rule (PS), both computed exactly.
//!
//! RSD averages the deterministic serial-dictatorship outcome over all n!
//! priority orderings. Computing its probabilities has no known general
//! shortcut, so the reference path enumerates orderings outright and is
//! capped at n = 10 (3,628,800 orderings). A state-merging fast path
//! ([`rsd_memoized`]) collapses priority prefixes that leave the same
//! agents and objects behind; it produces identical output and is checked
//! against the reference path in the test suite.
//!
//! In markets with fewer agents than objects, serial dictatorship follows
//! the quasi-dictatorial rule: the priority-first agent takes its top
//! m - n + 1 objects and everyone after it takes one.

use std::collections::HashMap;

use num_traits::Zero;

use crate::assignment::{Assignment, Rational};
use crate::error::{Error, Result};
use crate::prefs::{AgentId, ObjectId, Profile};

/// Largest n for which RSD enumeration is attempted by default.
pub const DEFAULT_RSD_CAP: usize = 10;

/// A strict priority ordering over the agents (a permutation of N).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityOrdering {
    agents: Vec<AgentId>,
}

impl PriorityOrdering {
    pub fn new(agents: Vec<AgentId>) -> Result<PriorityOrdering> {
        let n = agents.len();
        let mut seen = vec![false; n];
        for a in &agents {
            if a.0 >= n {
                return Err(Error::UnknownIndex {
                    kind: "agent",
                    index: a.0,
                    bound: n,
                });
            }
            if seen[a.0] {
                return Err(Error::Parse(format!("duplicate agent {} in priority", a)));
            }
            seen[a.0] = true;
        }
        Ok(PriorityOrdering { agents })
    }

    /// Identity priority: agent 0 first.
    pub fn identity(n: usize) -> PriorityOrdering {
        PriorityOrdering {
            agents: (0..n).map(AgentId).collect(),
        }
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.agents
    }
}

/// Number of objects the priority-first dictator takes.
fn first_quota(n: usize, m: usize) -> usize {
    if n < m {
        m - n + 1
    } else {
        1
    }
}

/// Runs serial dictatorship for one priority ordering, reporting each pick
/// through `take(agent, object)`. Objects are picked best-remaining-first
/// per the picking agent's own order.
fn dictatorship_picks(profile: &Profile, priority: &[AgentId], mut take: impl FnMut(AgentId, ObjectId)) {
    let n = profile.num_agents();
    let m = profile.num_objects();
    let mut available = vec![true; m];
    let mut left = m;
    for (pos, &agent) in priority.iter().enumerate() {
        if left == 0 {
            break;
        }
        let quota = if pos == 0 { first_quota(n, m) } else { 1 };
        let mut taken = 0;
        for &obj in profile.order(agent).ranking() {
            if taken == quota {
                break;
            }
            if available[obj.0] {
                available[obj.0] = false;
                left -= 1;
                taken += 1;
                take(agent, obj);
            }
        }
    }
}

/// Deterministic serial dictatorship under `priority`.
///
/// With n = m every agent takes its best remaining object in priority
/// order. With n > m only the first m agents receive anything and the rest
/// keep all-zero rows. With n < m the first agent takes its top m - n + 1
/// objects and each later agent takes one (quasi-dictatorial rule).
pub fn serial_dictatorship(profile: &Profile, priority: &PriorityOrdering) -> Result<Assignment> {
    let n = profile.num_agents();
    let m = profile.num_objects();
    if priority.agents().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: priority.agents().len(),
        });
    }
    let mut rows = vec![vec![Rational::zero(); m]; n];
    dictatorship_picks(profile, priority.agents(), |agent, obj| {
        rows[agent.0][obj.0] = Rational::from_integer(1);
    });
    Assignment::new(rows)
}

/// Exact RSD assignment: the average of [`serial_dictatorship`] over all
/// n! priority orderings, by direct enumeration.
pub fn rsd(profile: &Profile) -> Result<Assignment> {
    rsd_with_cap(profile, DEFAULT_RSD_CAP)
}

/// [`rsd`] with an explicit enumeration cap on n.
pub fn rsd_with_cap(profile: &Profile, cap: usize) -> Result<Assignment> {
    let n = profile.num_agents();
    let m = profile.num_objects();
    if n > cap {
        return Err(Error::Capacity(format!(
            "RSD enumerates n! priority orderings; n = {n} exceeds the cap of {cap}"
        )));
    }
    let mut counts = vec![0u64; n * m];
    let mut orderings: u64 = 0;
    let mut perm: Vec<AgentId> = (0..n).map(AgentId).collect();
    // Heap's algorithm, iterative; visits every permutation exactly once.
    let mut stack = vec![0usize; n];
    let visit = |perm: &[AgentId], counts: &mut [u64], orderings: &mut u64| {
        *orderings += 1;
        dictatorship_picks(profile, perm, |agent, obj| {
            counts[agent.0 * m + obj.0] += 1;
        });
    };
    visit(&perm, &mut counts, &mut orderings);
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            visit(&perm, &mut counts, &mut orderings);
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    let total = orderings as i128;
    let rows: Vec<Vec<Rational>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| Rational::new(counts[i * m + j] as i128, total))
                .collect()
        })
        .collect();
    let a = Assignment::new(rows)?;
    debug_assert!(rows_sum_to_m_over_n(&a));
    Ok(a)
}

/// RSD via forward dynamic programming over (remaining agents, remaining
/// objects) states, merging priority prefixes that lead to the same state.
///
/// Output is identical to [`rsd`]; this path only trades memory for time
/// when many orderings share suffix states. Requires n, m <= 64 for the
/// bitmask representation and honors the same enumeration cap.
pub fn rsd_memoized(profile: &Profile) -> Result<Assignment> {
    rsd_memoized_with_cap(profile, DEFAULT_RSD_CAP)
}

pub fn rsd_memoized_with_cap(profile: &Profile, cap: usize) -> Result<Assignment> {
    let n = profile.num_agents();
    let m = profile.num_objects();
    if n > cap {
        return Err(Error::Capacity(format!(
            "RSD state merging still walks n-stage states; n = {n} exceeds the cap of {cap}"
        )));
    }
    if n > 64 || m > 64 {
        return Err(Error::Capacity(
            "bitmask state space supports at most 64 agents and 64 objects".into(),
        ));
    }
    let full_agents: u64 = ones(n);
    let full_objects: u64 = ones(m);
    let mut probs = vec![Rational::zero(); n * m];
    // reach probability per (agents left, objects left) state
    let mut level: HashMap<(u64, u64), Rational> = HashMap::new();
    level.insert((full_agents, full_objects), Rational::from_integer(1));
    for stage in 0..n {
        let mut next: HashMap<(u64, u64), Rational> = HashMap::new();
        for (&(agents, objects), &p) in &level {
            if objects == 0 {
                continue; // every remaining agent receives nothing
            }
            let k = agents.count_ones() as i128;
            let share = p / Rational::from_integer(k);
            let quota = if stage == 0 { first_quota(n, m) } else { 1 };
            let mut rest = agents;
            while rest != 0 {
                let a = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let mut taken_mask: u64 = 0;
                let mut taken = 0;
                for &obj in profile.order(AgentId(a)).ranking() {
                    if taken == quota {
                        break;
                    }
                    if objects & (1 << obj.0) != 0 {
                        taken_mask |= 1 << obj.0;
                        taken += 1;
                        probs[a * m + obj.0] += share;
                    }
                }
                let state = (agents & !(1u64 << a), objects & !taken_mask);
                *next.entry(state).or_insert_with(Rational::zero) += share;
            }
        }
        level = next;
    }
    let rows: Vec<Vec<Rational>> = (0..n)
        .map(|i| probs[i * m..(i + 1) * m].to_vec())
        .collect();
    let a = Assignment::new(rows)?;
    debug_assert!(rows_sum_to_m_over_n(&a));
    Ok(a)
}

fn ones(k: usize) -> u64 {
    if k == 64 {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

/// Exact probabilistic serial rule via event-driven simultaneous eating.
///
/// All agents eat their most preferred remaining object at unit rate; the
/// next event is the earliest object exhaustion, at which point its eaters
/// move on. Eating ends when every object is gone, at time m/n.
pub fn ps(profile: &Profile) -> Result<Assignment> {
    let n = profile.num_agents();
    let m = profile.num_objects();
    let mut remaining: Vec<Rational> = vec![Rational::from_integer(1); m];
    let mut alive = vec![true; m];
    let mut alive_count = m;
    let mut cursor = vec![0usize; n];
    let mut eaters = vec![0u32; m];
    let mut entries = vec![Rational::zero(); n * m];
    while alive_count > 0 {
        for count in eaters.iter_mut() {
            *count = 0;
        }
        for (i, cur) in cursor.iter_mut().enumerate() {
            let ranking = profile.order(AgentId(i)).ranking();
            while !alive[ranking[*cur].0] {
                *cur += 1;
            }
            eaters[ranking[*cur].0] += 1;
        }
        // earliest exhaustion among objects currently being eaten
        let mut dt: Option<Rational> = None;
        for j in 0..m {
            if alive[j] && eaters[j] > 0 {
                let t = remaining[j] / Rational::from_integer(eaters[j] as i128);
                if dt.map_or(true, |cur| t < cur) {
                    dt = Some(t);
                }
            }
        }
        let dt = dt.expect("every agent eats an alive object");
        for (i, &cur) in cursor.iter().enumerate() {
            let obj = profile.order(AgentId(i)).ranking()[cur];
            entries[i * m + obj.0] += dt;
        }
        for j in 0..m {
            if alive[j] && eaters[j] > 0 {
                remaining[j] -= dt * Rational::from_integer(eaters[j] as i128);
                if remaining[j].is_zero() {
                    alive[j] = false;
                    alive_count -= 1;
                }
            }
        }
    }
    let rows: Vec<Vec<Rational>> = (0..n)
        .map(|i| entries[i * m..(i + 1) * m].to_vec())
        .collect();
    let a = Assignment::new(rows)?;
    debug_assert!(rows_sum_to_m_over_n(&a));
    Ok(a)
}

/// Both mechanisms' outputs satisfy this by construction: every agent's
/// row carries exactly m/n probability mass.
fn rows_sum_to_m_over_n(a: &Assignment) -> bool {
    let expected = Rational::new(a.num_objects() as i128, a.num_agents() as i128);
    a.rows()
        .all(|row| row.iter().copied().sum::<Rational>() == expected)
}

/// Mechanism selector used by audits, the harness, and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Rsd,
    Ps,
}

impl Mechanism {
    pub fn assign(self, profile: &Profile) -> Result<Assignment> {
        match self {
            Mechanism::Rsd => rsd(profile),
            Mechanism::Ps => ps(profile),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Rsd => "rsd",
            Mechanism::Ps => "ps",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mechanism> {
        match s.to_ascii_lowercase().as_str() {
            "rsd" => Ok(Mechanism::Rsd),
            "ps" => Ok(Mechanism::Ps),
            other => Err(Error::Parse(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{assignments_equal, ratio};
    use crate::prefs::enumerate_profiles;

    fn profile(text: &str) -> Profile {
        Profile::parse(text).unwrap()
    }

    fn assert_rows(a: &Assignment, rows: &[&[Rational]]) {
        for (i, expected) in rows.iter().enumerate() {
            assert_eq!(a.row(AgentId(i)), *expected, "agent {} row", i + 1);
        }
    }

    #[test]
    fn dictatorship_identical_preferences() {
        let p = profile("(abc);(abc);(abc)");
        let a = serial_dictatorship(&p, &PriorityOrdering::identity(3)).unwrap();
        assert_rows(
            &a,
            &[
                &[ratio(1, 1), ratio(0, 1), ratio(0, 1)],
                &[ratio(0, 1), ratio(1, 1), ratio(0, 1)],
                &[ratio(0, 1), ratio(0, 1), ratio(1, 1)],
            ],
        );
    }

    #[test]
    fn dictatorship_sole_agent_takes_everything() {
        let p = profile("(bca)");
        let a = serial_dictatorship(&p, &PriorityOrdering::identity(1)).unwrap();
        assert_rows(&a, &[&[ratio(1, 1), ratio(1, 1), ratio(1, 1)]]);
    }

    #[test]
    fn dictatorship_scarcity_leaves_zero_rows() {
        let p = profile("(ab);(ab);(ab)");
        let a = serial_dictatorship(&p, &PriorityOrdering::identity(3)).unwrap();
        assert_rows(
            &a,
            &[
                &[ratio(1, 1), ratio(0, 1)],
                &[ratio(0, 1), ratio(1, 1)],
                &[ratio(0, 1), ratio(0, 1)],
            ],
        );
    }

    #[test]
    fn dictatorship_quasi_quota_takes_top_objects() {
        // n=2, m=4: first agent takes its top 3, second takes the leftover
        let p = profile("(cbda);(abcd)");
        let a = serial_dictatorship(&p, &PriorityOrdering::identity(2)).unwrap();
        assert_rows(
            &a,
            &[
                &[ratio(0, 1), ratio(1, 1), ratio(1, 1), ratio(1, 1)],
                &[ratio(1, 1), ratio(0, 1), ratio(0, 1), ratio(0, 1)],
            ],
        );
    }

    #[test]
    fn rsd_incomparability_profile() {
        let a = rsd(&profile("(acb);(abc);(bac)")).unwrap();
        assert_rows(
            &a,
            &[
                &[ratio(1, 2), ratio(0, 1), ratio(1, 2)],
                &[ratio(1, 2), ratio(1, 6), ratio(1, 3)],
                &[ratio(0, 1), ratio(5, 6), ratio(1, 6)],
            ],
        );
    }

    #[test]
    fn rsd_inefficiency_profile() {
        let a = rsd(&profile("(abcd);(abcd);(badc);(badc)")).unwrap();
        let fav = [ratio(5, 12), ratio(1, 12), ratio(5, 12), ratio(1, 12)];
        let other = [ratio(1, 12), ratio(5, 12), ratio(1, 12), ratio(5, 12)];
        assert_rows(&a, &[&fav, &fav, &other, &other]);
    }

    #[test]
    fn rsd_equals_ps_profile() {
        let a = rsd(&profile("(bca);(cab);(bca)")).unwrap();
        assert_rows(
            &a,
            &[
                &[ratio(1, 3), ratio(1, 2), ratio(1, 6)],
                &[ratio(1, 3), ratio(0, 1), ratio(2, 3)],
                &[ratio(1, 3), ratio(1, 2), ratio(1, 6)],
            ],
        );
    }

    #[test]
    fn ps_incomparability_profile() {
        let a = ps(&profile("(acb);(abc);(bac)")).unwrap();
        assert_rows(
            &a,
            &[
                &[ratio(1, 2), ratio(0, 1), ratio(1, 2)],
                &[ratio(1, 2), ratio(1, 4), ratio(1, 4)],
                &[ratio(0, 1), ratio(3, 4), ratio(1, 4)],
            ],
        );
    }

    #[test]
    fn ps_inefficiency_profile() {
        let a = ps(&profile("(abcd);(abcd);(badc);(badc)")).unwrap();
        let ac = [ratio(1, 2), ratio(0, 1), ratio(1, 2), ratio(0, 1)];
        let bd = [ratio(0, 1), ratio(1, 2), ratio(0, 1), ratio(1, 2)];
        assert_rows(&a, &[&ac, &ac, &bd, &bd]);
    }

    #[test]
    fn ps_shared_order_is_uniform() {
        let a = ps(&profile("(cab);(cab);(cab)")).unwrap();
        let third = ratio(1, 3);
        for i in 0..3 {
            assert_eq!(a.row(AgentId(i)), &[third, third, third]);
        }
    }

    #[test]
    fn ps_handles_more_agents_than_objects() {
        let a = ps(&profile("(ab);(ab);(ba)")).unwrap();
        // total mass 2 split across 3 agents
        for i in 0..3 {
            let sum: Rational = a.row(AgentId(i)).iter().copied().sum();
            assert_eq!(sum, ratio(2, 3));
        }
    }

    #[test]
    fn ps_handles_more_objects_than_agents() {
        let a = ps(&profile("(abc);(abc)")).unwrap();
        for i in 0..2 {
            let sum: Rational = a.row(AgentId(i)).iter().copied().sum();
            assert_eq!(sum, ratio(3, 2));
        }
    }

    #[test]
    fn rsd_cap_is_enforced() {
        let orders = vec![crate::prefs::PrefOrder::canonical(3); 11];
        let p = Profile::new(orders).unwrap();
        assert!(matches!(rsd(&p), Err(Error::Capacity(_))));
        assert!(matches!(rsd_memoized(&p), Err(Error::Capacity(_))));
    }

    #[test]
    fn memoized_rsd_matches_enumeration_on_mixed_regimes() {
        for text in [
            "(acb);(abc);(bac)",
            "(abcd);(abcd);(badc);(badc)",
            "(cbda);(abcd)",        // n < m
            "(ab);(ab);(ba)",       // n > m
            "(bca);(cab);(bca)",
        ] {
            let p = profile(text);
            let direct = rsd(&p).unwrap();
            let merged = rsd_memoized(&p).unwrap();
            assert!(assignments_equal(&direct, &merged).unwrap(), "{text}");
        }
    }

    #[test]
    fn mechanisms_are_anonymous() {
        // permuting agents permutes rows identically
        let p = profile("(acb);(abc);(bac)");
        let swapped = profile("(bac);(abc);(acb)");
        for mech in [Mechanism::Ps, Mechanism::Rsd] {
            let a = mech.assign(&p).unwrap();
            let b = mech.assign(&swapped).unwrap();
            assert_eq!(a.row(AgentId(0)), b.row(AgentId(2)));
            assert_eq!(a.row(AgentId(1)), b.row(AgentId(1)));
            assert_eq!(a.row(AgentId(2)), b.row(AgentId(0)));
        }
    }

    #[test]
    fn ps_equals_rsd_for_tiny_markets() {
        // m <= 2, n <= 3
        for n in 1..=3 {
            for m in 1..=2 {
                for p in enumerate_profiles(n, m).unwrap() {
                    let x = ps(&p).unwrap();
                    let y = rsd(&p).unwrap();
                    assert!(assignments_equal(&x, &y).unwrap(), "n={n} m={m} {p}");
                }
            }
        }
    }
}
