//! Manipulation and envy audits.
//!
//! Manipulation is checked by exhaustive misreport enumeration: for each
//! agent, every one of the m! - 1 alternative orders is submitted in place
//! of the truth and the resulting allocation is compared against the
//! truthful one *under the agent's true order*. Ordinal audits classify
//! into a three-tier lattice (strategyproof, weakly manipulable, strictly
//! manipulable); cardinal audits measure the best relative expected-utility
//! gain.

use num_traits::Zero;

use crate::assignment::{Assignment, Rational};
use crate::dominance::{ld_compare_row, sd_compare_row, RowComparison};
use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::prefs::{all_orders, AgentId, PrefOrder, Profile};
use crate::utility::{expected_utility, UtilityModel};

/// Absolute epsilon for every strict cardinal comparison.
pub const CARDINAL_EPSILON: f64 = 1e-9;

/// Largest m for which misreport enumeration (m! - 1 orders per agent) is
/// attempted by default.
pub const DEFAULT_MISREPORT_CAP: usize = 8;

/// Which dominance notion decides the strict tier of an ordinal audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrdinalMode {
    Sd,
    Ld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ManipulationClass {
    /// No misreport ever raises any surplus coordinate (resp. the expected
    /// utility, in cardinal mode).
    Strategyproof,
    /// Some misreport raises a surplus coordinate, but none dominates the
    /// truthful allocation outright.
    WeaklyManipulable,
    /// Some misreport dominates the truthful allocation (ordinal) or
    /// strictly improves expected utility (cardinal).
    StrictlyManipulable,
}

/// Per-agent audit outcome.
#[derive(Debug, Clone)]
pub struct ManipulationReport {
    pub agent: AgentId,
    pub classification: ManipulationClass,
    /// A witness misreport; present iff the agent is not strategyproof.
    /// For strict classifications it is the first dominating misreport in
    /// enumeration order (cardinal: the gain-maximizing one).
    pub best_misreport: Option<PrefOrder>,
    /// Relative expected-utility gain, cardinal audits only; >= 0. `None`
    /// for ordinal audits and for the undefined-denominator sentinel.
    pub gain: Option<f64>,
}

fn check_misreport_cap(m: usize, cap: usize) -> Result<Vec<PrefOrder>> {
    if m > cap {
        return Err(Error::Capacity(format!(
            "misreport enumeration needs m! - 1 orders; m = {m} exceeds the cap of {cap}"
        )));
    }
    all_orders(m)
}

/// Does `candidate` raise some surplus coordinate over `truth` under
/// `order`? This is the negation of the strategyproofness inequality, and
/// the weak tier of the manipulation lattice.
fn raises_some_surplus(order: &PrefOrder, candidate: &[Rational], truth: &[Rational]) -> bool {
    let mut surplus_c = Rational::zero();
    let mut surplus_t = Rational::zero();
    for &obj in order.ranking() {
        surplus_c += candidate[obj.0];
        surplus_t += truth[obj.0];
        if surplus_c > surplus_t {
            return true;
        }
    }
    false
}

/// Exhaustive ordinal manipulation audit for one agent.
///
/// Classifies `strictly_manipulable` when some misreported allocation
/// dominates the truthful one under the agent's true order (stochastic or
/// lexicographic dominance per `mode`), `weakly_manipulable` when some
/// misreport raises at least one surplus coordinate without dominating,
/// and `strategyproof` otherwise.
pub fn audit_ordinal_manipulation(
    profile: &Profile,
    mechanism: Mechanism,
    agent: AgentId,
    mode: OrdinalMode,
) -> Result<ManipulationReport> {
    audit_ordinal_manipulation_with_cap(profile, mechanism, agent, mode, DEFAULT_MISREPORT_CAP)
}

pub fn audit_ordinal_manipulation_with_cap(
    profile: &Profile,
    mechanism: Mechanism,
    agent: AgentId,
    mode: OrdinalMode,
    cap: usize,
) -> Result<ManipulationReport> {
    let orders = check_misreport_cap(profile.num_objects(), cap)?;
    let truth_assignment = mechanism.assign(profile)?;
    let true_order = profile.order(agent).clone();
    let truth_row = truth_assignment.row(agent).to_vec();

    let mut weak_witness: Option<PrefOrder> = None;
    let mut scratch = profile.clone();
    for misreport in orders {
        if misreport == true_order {
            continue;
        }
        let prev = scratch.swap_order(agent, misreport);
        let deviated = mechanism.assign(&scratch)?;
        let misreport = scratch.swap_order(agent, prev);
        let row = deviated.row(agent);

        let dominates = match mode {
            OrdinalMode::Sd => {
                sd_compare_row(&true_order, row, &truth_row)? == RowComparison::Dominates
            }
            OrdinalMode::Ld => {
                ld_compare_row(&true_order, row, &truth_row)? == RowComparison::Dominates
            }
        };
        if dominates {
            return Ok(ManipulationReport {
                agent,
                classification: ManipulationClass::StrictlyManipulable,
                best_misreport: Some(misreport),
                gain: None,
            });
        }
        if weak_witness.is_none() && raises_some_surplus(&true_order, row, &truth_row) {
            weak_witness = Some(misreport);
        }
    }
    Ok(match weak_witness {
        Some(witness) => ManipulationReport {
            agent,
            classification: ManipulationClass::WeaklyManipulable,
            best_misreport: Some(witness),
            gain: None,
        },
        None => ManipulationReport {
            agent,
            classification: ManipulationClass::Strategyproof,
            best_misreport: None,
            gain: None,
        },
    })
}

/// Profile-level ordinal manipulability flags, computed with early exit.
///
/// Agrees with running [`audit_ordinal_manipulation`] for every agent:
/// `manipulable` means some agent is at least weakly manipulable (the
/// mechanism is not sd-strategyproof at this profile), `sd_manipulable`
/// and `ld_manipulable` mean some agent has a misreport that sd- (resp.
/// ld-) dominates its truthful allocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProfileManipulability {
    pub manipulable: bool,
    pub sd_manipulable: bool,
    pub ld_manipulable: bool,
}

pub fn profile_manipulability(
    profile: &Profile,
    mechanism: Mechanism,
    cap: usize,
) -> Result<ProfileManipulability> {
    profile_manipulability_query(profile, mechanism, cap, ManipulabilityQuery::all())
}

/// Which manipulability flags a caller needs; unqueried flags stay false
/// and do not hold up the early exit.
#[derive(Debug, Clone, Copy)]
pub struct ManipulabilityQuery {
    pub weak: bool,
    pub sd: bool,
    pub ld: bool,
}

impl ManipulabilityQuery {
    pub fn all() -> ManipulabilityQuery {
        ManipulabilityQuery {
            weak: true,
            sd: true,
            ld: true,
        }
    }
}

pub fn profile_manipulability_query(
    profile: &Profile,
    mechanism: Mechanism,
    cap: usize,
    query: ManipulabilityQuery,
) -> Result<ProfileManipulability> {
    let orders = check_misreport_cap(profile.num_objects(), cap)?;
    let truth_assignment = mechanism.assign(profile)?;
    let mut flags = ProfileManipulability::default();
    let mut scratch = profile.clone();
    let done = |f: &ProfileManipulability| {
        (f.manipulable || !query.weak)
            && (f.sd_manipulable || !query.sd)
            && (f.ld_manipulable || !query.ld)
    };
    'agents: for i in 0..profile.num_agents() {
        let agent = AgentId(i);
        let true_order = profile.order(agent).clone();
        let truth_row = truth_assignment.row(agent).to_vec();
        for misreport in &orders {
            if *misreport == true_order {
                continue;
            }
            let prev = scratch.swap_order(agent, misreport.clone());
            let deviated = mechanism.assign(&scratch)?;
            scratch.swap_order(agent, prev);
            let row = deviated.row(agent);

            if query.weak
                && !flags.manipulable
                && raises_some_surplus(&true_order, row, &truth_row)
            {
                flags.manipulable = true;
            }
            if query.ld
                && !flags.ld_manipulable
                && ld_compare_row(&true_order, row, &truth_row)? == RowComparison::Dominates
            {
                flags.ld_manipulable = true;
            }
            if query.sd
                && !flags.sd_manipulable
                && sd_compare_row(&true_order, row, &truth_row)? == RowComparison::Dominates
            {
                flags.sd_manipulable = true;
            }
            if done(&flags) {
                break 'agents;
            }
        }
    }
    Ok(flags)
}

/// Profile-level cardinal audit: per-agent reports plus the maximum
/// relative gain over agents (the profile's manipulation-gain metric).
#[derive(Debug, Clone)]
pub struct CardinalAudit {
    pub reports: Vec<ManipulationReport>,
    /// `max_i max_misreport (E(u|A') - E(u|A)) / E(u|A)`, floored at 0;
    /// `None` only if every agent had a zero-utility truthful allocation.
    pub max_gain: Option<f64>,
    /// True iff some agent's gain exceeds [`CARDINAL_EPSILON`].
    pub manipulable: bool,
}

/// Exhaustive cardinal manipulation audit under one shared rank-utility
/// model.
pub fn audit_cardinal_manipulation(
    profile: &Profile,
    mechanism: Mechanism,
    model: &UtilityModel,
) -> Result<CardinalAudit> {
    audit_cardinal_manipulation_with_cap(profile, mechanism, model, DEFAULT_MISREPORT_CAP)
}

pub fn audit_cardinal_manipulation_with_cap(
    profile: &Profile,
    mechanism: Mechanism,
    model: &UtilityModel,
    cap: usize,
) -> Result<CardinalAudit> {
    let orders = check_misreport_cap(profile.num_objects(), cap)?;
    let truth_assignment = mechanism.assign(profile)?;
    let mut reports = Vec::with_capacity(profile.num_agents());
    let mut max_gain: Option<f64> = None;
    let mut scratch = profile.clone();
    for i in 0..profile.num_agents() {
        let agent = AgentId(i);
        let true_order = profile.order(agent).clone();
        let eu_truth = expected_utility(model, &true_order, truth_assignment.row(agent))?;
        if eu_truth == 0.0 {
            // no meaningful relative gain; excluded from aggregation
            reports.push(ManipulationReport {
                agent,
                classification: ManipulationClass::Strategyproof,
                best_misreport: None,
                gain: None,
            });
            continue;
        }
        let mut best = 0.0f64;
        let mut witness: Option<PrefOrder> = None;
        for misreport in &orders {
            if *misreport == true_order {
                continue;
            }
            let prev = scratch.swap_order(agent, misreport.clone());
            let deviated = mechanism.assign(&scratch)?;
            scratch.swap_order(agent, prev);
            let eu = expected_utility(model, &true_order, deviated.row(agent))?;
            let gain = (eu - eu_truth) / eu_truth;
            if gain > best {
                best = gain;
                witness = Some(misreport.clone());
            }
        }
        let manipulable = best > CARDINAL_EPSILON;
        reports.push(ManipulationReport {
            agent,
            classification: if manipulable {
                ManipulationClass::StrictlyManipulable
            } else {
                ManipulationClass::Strategyproof
            },
            best_misreport: if manipulable { witness } else { None },
            gain: Some(best.max(0.0)),
        });
        max_gain = Some(max_gain.map_or(best, |g: f64| g.max(best)));
    }
    let manipulable = max_gain.is_some_and(|g| g > CARDINAL_EPSILON);
    Ok(CardinalAudit {
        reports,
        max_gain,
        manipulable,
    })
}

/// How cardinal per-agent envy is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnvyAggregation {
    /// Each agent contributes its worst pairwise envy (the default).
    #[default]
    WorstPair,
    /// Each agent contributes the sum of its positive pairwise envies.
    SumPairs,
}

/// Envy audit outcome; the cardinal fields are `None` for ordinal audits.
#[derive(Debug, Clone)]
pub struct EnvyReport {
    pub envious: Vec<bool>,
    pub fraction_envious: f64,
    pub per_agent_envy: Option<Vec<f64>>,
    pub total_envy: Option<f64>,
}

/// Ordinal envy: agent i is flagged iff some other agent's row beats its
/// own at some surplus coordinate under i's order (the negation of
/// sd-envyfreeness).
pub fn audit_ordinal_envy(profile: &Profile, assignment: &Assignment) -> Result<EnvyReport> {
    check_envy_dims(profile, assignment)?;
    let n = profile.num_agents();
    let mut envious = vec![false; n];
    for (i, flag) in envious.iter_mut().enumerate() {
        let agent = AgentId(i);
        let order = profile.order(agent);
        let own = assignment.row(agent);
        for k in 0..n {
            if k == i {
                continue;
            }
            if raises_some_surplus(order, assignment.row(AgentId(k)), own) {
                *flag = true;
                break;
            }
        }
    }
    let count = envious.iter().filter(|&&e| e).count();
    Ok(EnvyReport {
        fraction_envious: count as f64 / n as f64,
        envious,
        per_agent_envy: None,
        total_envy: None,
    })
}

/// Cardinal envy under one shared rank-utility model: agent i's envy
/// toward k is `E(u_i | A_k) - E(u_i | A_i)` clamped at zero.
pub fn audit_cardinal_envy(
    profile: &Profile,
    assignment: &Assignment,
    model: &UtilityModel,
    aggregation: EnvyAggregation,
) -> Result<EnvyReport> {
    check_envy_dims(profile, assignment)?;
    let n = profile.num_agents();
    let mut envious = vec![false; n];
    let mut per_agent = vec![0.0f64; n];
    for i in 0..n {
        let agent = AgentId(i);
        let order = profile.order(agent);
        let own = expected_utility(model, order, assignment.row(agent))?;
        let mut worst = 0.0f64;
        let mut sum = 0.0f64;
        for k in 0..n {
            if k == i {
                continue;
            }
            let other = expected_utility(model, order, assignment.row(AgentId(k)))?;
            let envy = (other - own).max(0.0);
            worst = worst.max(envy);
            sum += envy;
        }
        envious[i] = worst > CARDINAL_EPSILON;
        per_agent[i] = match aggregation {
            EnvyAggregation::WorstPair => worst,
            EnvyAggregation::SumPairs => sum,
        };
    }
    let count = envious.iter().filter(|&&e| e).count();
    Ok(EnvyReport {
        fraction_envious: count as f64 / n as f64,
        envious,
        total_envy: Some(per_agent.iter().sum()),
        per_agent_envy: Some(per_agent),
    })
}

fn check_envy_dims(profile: &Profile, assignment: &Assignment) -> Result<()> {
    if assignment.num_agents() != profile.num_agents() {
        return Err(Error::DimensionMismatch {
            expected: profile.num_agents(),
            got: assignment.num_agents(),
        });
    }
    if assignment.num_objects() != profile.num_objects() {
        return Err(Error::DimensionMismatch {
            expected: profile.num_objects(),
            got: assignment.num_objects(),
        });
    }
    Ok(())
}
