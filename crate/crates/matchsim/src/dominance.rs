//! First-order stochastic and lexicographic dominance, at the level of a
//! single agent's probability row and of whole assignments.
//!
//! Row comparisons are four-way rather than boolean so that callers can
//! count "identical" separately from "incomparable" profiles.

use std::cmp::Ordering;

use num_traits::Zero;

use crate::assignment::{assignments_equal, Assignment, Rational};
use crate::error::{Error, Result};
use crate::prefs::{AgentId, PrefOrder, Profile};

/// Outcome of comparing two probability rows under one agent's order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowComparison {
    /// First row strictly preferred (rows differ, surplus never lower).
    Dominates,
    /// Second row strictly preferred.
    Dominated,
    /// Rows are identical.
    Equal,
    /// Surpluses cross; neither row is preferred at every object.
    Incomparable,
}

fn check_rows(order: &PrefOrder, row_a: &[Rational], row_b: &[Rational]) -> Result<()> {
    let m = order.num_objects();
    for row in [row_a, row_b] {
        if row.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: row.len(),
            });
        }
    }
    Ok(())
}

/// Stochastic-dominance comparison: walks the order once, accumulating
/// both surpluses, and tracks whether either ever falls behind.
pub fn sd_compare_row(
    order: &PrefOrder,
    row_a: &[Rational],
    row_b: &[Rational],
) -> Result<RowComparison> {
    check_rows(order, row_a, row_b)?;
    if row_a == row_b {
        return Ok(RowComparison::Equal);
    }
    let mut surplus_a = Rational::zero();
    let mut surplus_b = Rational::zero();
    let mut a_never_behind = true;
    let mut b_never_behind = true;
    for &obj in order.ranking() {
        surplus_a += row_a[obj.0];
        surplus_b += row_b[obj.0];
        match surplus_a.cmp(&surplus_b) {
            Ordering::Less => a_never_behind = false,
            Ordering::Greater => b_never_behind = false,
            Ordering::Equal => {}
        }
        if !a_never_behind && !b_never_behind {
            return Ok(RowComparison::Incomparable);
        }
    }
    // rows differ, so at least one strict surplus gap exists
    Ok(if a_never_behind {
        RowComparison::Dominates
    } else {
        RowComparison::Dominated
    })
}

/// Lexicographic comparison: the first object (in preference order) whose
/// surplus differs decides; identical surpluses everywhere means equal
/// rows.
pub fn ld_compare_row(
    order: &PrefOrder,
    row_a: &[Rational],
    row_b: &[Rational],
) -> Result<RowComparison> {
    check_rows(order, row_a, row_b)?;
    let mut surplus_a = Rational::zero();
    let mut surplus_b = Rational::zero();
    for &obj in order.ranking() {
        surplus_a += row_a[obj.0];
        surplus_b += row_b[obj.0];
        match surplus_a.cmp(&surplus_b) {
            Ordering::Greater => return Ok(RowComparison::Dominates),
            Ordering::Less => return Ok(RowComparison::Dominated),
            Ordering::Equal => {}
        }
    }
    Ok(RowComparison::Equal)
}

fn check_assignment_dims(profile: &Profile, a: &Assignment, b: &Assignment) -> Result<()> {
    for x in [a, b] {
        if x.num_agents() != profile.num_agents() {
            return Err(Error::DimensionMismatch {
                expected: profile.num_agents(),
                got: x.num_agents(),
            });
        }
        if x.num_objects() != profile.num_objects() {
            return Err(Error::DimensionMismatch {
                expected: profile.num_objects(),
                got: x.num_objects(),
            });
        }
    }
    Ok(())
}

/// True iff `a != b` and every agent weakly prefers its row of `a` under
/// stochastic dominance.
pub fn sd_dominates_assignment(profile: &Profile, a: &Assignment, b: &Assignment) -> Result<bool> {
    check_assignment_dims(profile, a, b)?;
    if assignments_equal(a, b)? {
        return Ok(false);
    }
    for i in 0..profile.num_agents() {
        let agent = AgentId(i);
        match sd_compare_row(profile.order(agent), a.row(agent), b.row(agent))? {
            RowComparison::Dominates | RowComparison::Equal => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// True iff `a != b` and no agent lexicographically prefers its row of
/// `b`.
pub fn ld_dominates_assignment(profile: &Profile, a: &Assignment, b: &Assignment) -> Result<bool> {
    check_assignment_dims(profile, a, b)?;
    if assignments_equal(a, b)? {
        return Ok(false);
    }
    for i in 0..profile.num_agents() {
        let agent = AgentId(i);
        if ld_compare_row(profile.order(agent), a.row(agent), b.row(agent))?
            == RowComparison::Dominated
        {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::ratio;
    use crate::mechanisms::{ps, rsd};
    use crate::prefs::enumerate_profiles;

    fn table3() -> (Profile, Assignment, Assignment) {
        let p = Profile::parse("(acb);(abc);(bac)").unwrap();
        let ps_a = ps(&p).unwrap();
        let rsd_a = rsd(&p).unwrap();
        (p, ps_a, rsd_a)
    }

    fn example1() -> (Profile, Assignment, Assignment) {
        let p = Profile::parse("(abcd);(abcd);(badc);(badc)").unwrap();
        let ps_a = ps(&p).unwrap();
        let rsd_a = rsd(&p).unwrap();
        (p, ps_a, rsd_a)
    }

    #[test]
    fn sd_row_agentwise_table3() {
        let (p, ps_a, rsd_a) = table3();
        let cmp = |i: usize| {
            sd_compare_row(
                p.order(AgentId(i)),
                ps_a.row(AgentId(i)),
                rsd_a.row(AgentId(i)),
            )
            .unwrap()
        };
        // agent 1 ambivalent, agent 2 prefers PS, agent 3 prefers RSD
        assert_eq!(cmp(0), RowComparison::Equal);
        assert_eq!(cmp(1), RowComparison::Dominates);
        assert_eq!(cmp(2), RowComparison::Dominated);
    }

    #[test]
    fn sd_row_self_is_equal() {
        let (p, ps_a, _) = table3();
        for i in 0..3 {
            let row = ps_a.row(AgentId(i));
            assert_eq!(
                sd_compare_row(p.order(AgentId(i)), row, row).unwrap(),
                RowComparison::Equal
            );
        }
    }

    #[test]
    fn sd_row_ps_dominates_rsd_in_example1() {
        let (p, ps_a, rsd_a) = example1();
        for i in 0..4 {
            assert_eq!(
                sd_compare_row(
                    p.order(AgentId(i)),
                    ps_a.row(AgentId(i)),
                    rsd_a.row(AgentId(i))
                )
                .unwrap(),
                RowComparison::Dominates
            );
        }
    }

    #[test]
    fn sd_assignment_level() {
        let (p, ps_a, rsd_a) = example1();
        assert!(sd_dominates_assignment(&p, &ps_a, &rsd_a).unwrap());
        assert!(!sd_dominates_assignment(&p, &rsd_a, &ps_a).unwrap());
        assert!(!sd_dominates_assignment(&p, &ps_a, &ps_a).unwrap());

        let (p, ps_a, rsd_a) = table3();
        assert!(!sd_dominates_assignment(&p, &ps_a, &rsd_a).unwrap());
        assert!(!sd_dominates_assignment(&p, &rsd_a, &ps_a).unwrap());
    }

    #[test]
    fn ld_first_coordinate_decides() {
        let order = PrefOrder::parse("(acb)", 3).unwrap();
        let row_a = [ratio(1, 2), ratio(1, 2), ratio(0, 1)];
        let row_b = [ratio(1, 3), ratio(0, 1), ratio(2, 3)];
        assert_eq!(
            ld_compare_row(&order, &row_a, &row_b).unwrap(),
            RowComparison::Dominates
        );
        assert_eq!(
            ld_compare_row(&order, &row_b, &row_a).unwrap(),
            RowComparison::Dominated
        );
        assert_eq!(
            ld_compare_row(&order, &row_a, &row_a).unwrap(),
            RowComparison::Equal
        );
    }

    #[test]
    fn ld_table3_agent2_prefers_ps() {
        // equal on a (1/2 each), then b: 1/4 vs 1/6
        let (p, ps_a, rsd_a) = table3();
        assert_eq!(
            ld_compare_row(
                p.order(AgentId(1)),
                ps_a.row(AgentId(1)),
                rsd_a.row(AgentId(1))
            )
            .unwrap(),
            RowComparison::Dominates
        );
    }

    #[test]
    fn ld_assignment_level() {
        let (p, ps_a, rsd_a) = example1();
        assert!(ld_dominates_assignment(&p, &ps_a, &rsd_a).unwrap());
        assert!(!ld_dominates_assignment(&p, &ps_a, &ps_a).unwrap());

        // agent 3 ld-prefers RSD (b surplus 5/6 > 3/4)
        let (p, ps_a, rsd_a) = table3();
        assert!(!ld_dominates_assignment(&p, &ps_a, &rsd_a).unwrap());
    }

    #[test]
    fn sd_dominance_implies_ld_dominance_rowwise() {
        for p in enumerate_profiles(3, 3).unwrap() {
            let a = ps(&p).unwrap();
            let b = rsd(&p).unwrap();
            for i in 0..3 {
                let agent = AgentId(i);
                let order = p.order(agent);
                if sd_compare_row(order, a.row(agent), b.row(agent)).unwrap()
                    == RowComparison::Dominates
                {
                    assert_eq!(
                        ld_compare_row(order, a.row(agent), b.row(agent)).unwrap(),
                        RowComparison::Dominates,
                        "{p}"
                    );
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let order = PrefOrder::parse("(ab)", 2).unwrap();
        let row = [ratio(1, 1)];
        assert!(sd_compare_row(&order, &row, &row).is_err());
        assert!(ld_compare_row(&order, &row, &row).is_err());
    }
}
