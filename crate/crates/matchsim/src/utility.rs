//! Risk-parameterized cardinal utilities consistent with the ordinal
//! preferences, plus expected utility, social welfare, and the
//! welfare-change metric comparing PS against RSD.
//!
//! The cardinal layer runs in binary64: the exponential utility values are
//! irrational, and every metric built on them is a statistical aggregate
//! rather than an exact count. Exact rationals are converted to floats at
//! the expected-utility boundary and nowhere earlier.

use crate::assignment::{Assignment, Rational};
use crate::error::{Error, Result};
use crate::prefs::{AgentId, PrefOrder, Profile};

/// Utility of the object at `rank` (1-based) among `m` under risk
/// parameter `alpha`: `(1 - e^(-alpha (m - rank))) / alpha`, with the
/// linear limit `m - rank` at `alpha = 0`. Positive `alpha` is risk
/// averse, negative risk seeking; the last-ranked object is always worth
/// zero.
pub fn exp_utility(alpha: f64, m: usize, rank: usize) -> f64 {
    debug_assert!(rank >= 1 && rank <= m, "rank {rank} out of [1, {m}]");
    let steps = (m - rank) as f64;
    if alpha == 0.0 {
        steps
    } else {
        (1.0 - (-alpha * steps).exp()) / alpha
    }
}

/// Per-rank cardinal values consistent with any strict order over `m`
/// objects (index 0 holds the value of the top-ranked object).
#[derive(Debug, Clone)]
pub struct UtilityModel {
    values: Vec<f64>,
    alpha: Option<f64>,
    normalized: bool,
}

impl UtilityModel {
    /// Exponential model for risk parameter `alpha`, unnormalized.
    pub fn exponential(alpha: f64, m: usize) -> UtilityModel {
        UtilityModel {
            values: (1..=m).map(|r| exp_utility(alpha, m, r)).collect(),
            alpha: Some(alpha),
            normalized: false,
        }
    }

    /// Linear (risk-neutral) model: `m - rank`.
    pub fn linear(m: usize) -> UtilityModel {
        UtilityModel::exponential(0.0, m)
    }

    /// Arbitrary per-rank values; must decrease strictly so the model is
    /// consistent with every strict order it is paired with.
    pub fn from_values(values: Vec<f64>) -> Result<UtilityModel> {
        if values.is_empty() {
            return Err(Error::DegenerateModel("no rank values".into()));
        }
        if values.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::DegenerateModel(
                "rank values must be strictly decreasing".into(),
            ));
        }
        Ok(UtilityModel {
            values,
            alpha: None,
            normalized: false,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.values.len()
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Value of the object at 1-based `rank`.
    pub fn value_at_rank(&self, rank: usize) -> f64 {
        self.values[rank - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rescales so the values sum to 1. Idempotent; fails when the values
    /// carry no positive mass (the single-object model is the degenerate
    /// case: its only value is 0).
    pub fn normalize(&self) -> Result<UtilityModel> {
        if self.normalized {
            return Ok(self.clone());
        }
        let sum: f64 = self.values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::DegenerateModel(format!(
                "cannot normalize values summing to {sum}"
            )));
        }
        Ok(UtilityModel {
            values: self.values.iter().map(|v| v / sum).collect(),
            alpha: self.alpha,
            normalized: true,
        })
    }
}

/// Expected utility of a probability row under `model` and the agent's
/// true order: sum of row mass times the value of each object's rank.
pub fn expected_utility(model: &UtilityModel, order: &PrefOrder, row: &[Rational]) -> Result<f64> {
    let m = order.num_objects();
    if row.len() != m || model.num_objects() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: if row.len() != m {
                row.len()
            } else {
                model.num_objects()
            },
        });
    }
    let mut acc = 0.0;
    for (pos, &obj) in order.ranking().iter().enumerate() {
        acc += to_f64(row[obj.0]) * model.values[pos];
    }
    Ok(acc)
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Utilitarian social welfare under one shared rank-utility model
/// (homogeneous population).
pub fn social_welfare(profile: &Profile, a: &Assignment, model: &UtilityModel) -> Result<f64> {
    let models = vec![model.clone(); profile.num_agents()];
    social_welfare_per_agent(profile, a, &models)
}

/// Utilitarian social welfare with per-agent models (used when comparing
/// hand-picked cardinal values rather than a shared risk attitude).
pub fn social_welfare_per_agent(
    profile: &Profile,
    a: &Assignment,
    models: &[UtilityModel],
) -> Result<f64> {
    if models.len() != profile.num_agents() {
        return Err(Error::DimensionMismatch {
            expected: profile.num_agents(),
            got: models.len(),
        });
    }
    let mut total = 0.0;
    for i in 0..profile.num_agents() {
        let agent = AgentId(i);
        total += expected_utility(&models[i], profile.order(agent), a.row(agent))?;
    }
    Ok(total)
}

/// Relative social-welfare change of PS over RSD:
/// `(SW(PS) - SW(RSD)) / SW(RSD)`. Negative values mean RSD improved on
/// PS. Returns `None` when RSD's welfare is zero (no meaningful ratio);
/// callers exclude such profiles from aggregation.
pub fn welfare_change(
    profile: &Profile,
    ps_assignment: &Assignment,
    rsd_assignment: &Assignment,
    model: &UtilityModel,
) -> Result<Option<f64>> {
    let sw_ps = social_welfare(profile, ps_assignment, model)?;
    let sw_rsd = social_welfare(profile, rsd_assignment, model)?;
    if sw_rsd == 0.0 {
        return Ok(None);
    }
    Ok(Some((sw_ps - sw_rsd) / sw_rsd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{ps, rsd};

    const TOL: f64 = 5e-4;

    #[test]
    fn exponential_three_object_table() {
        // (alpha, value at rank 1, value at rank 2); rank 3 is always 0
        let cases = [
            (-2.0, 26.799, 3.195),
            (-1.0, 6.389, 1.718),
            (0.0, 2.0, 1.0),
            (1.0, 0.865, 0.632),
            (2.0, 0.491, 0.432),
        ];
        for (alpha, top, mid) in cases {
            assert!((exp_utility(alpha, 3, 1) - top).abs() < TOL, "alpha={alpha}");
            assert!((exp_utility(alpha, 3, 2) - mid).abs() < TOL, "alpha={alpha}");
            assert_eq!(exp_utility(alpha, 3, 3), 0.0, "alpha={alpha}");
        }
    }

    #[test]
    fn exp_utility_is_continuous_at_zero() {
        for m in 2..=6 {
            for rank in 1..=m {
                let eps = 1e-8;
                let linear = (m - rank) as f64;
                assert!((exp_utility(eps, m, rank) - linear).abs() < 1e-6);
                assert!((exp_utility(-eps, m, rank) - linear).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn values_strictly_decrease() {
        for alpha in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            for m in 2..=8 {
                let model = UtilityModel::exponential(alpha, m);
                for w in model.values().windows(2) {
                    assert!(w[0] > w[1], "alpha={alpha} m={m}");
                }
            }
        }
    }

    #[test]
    fn normalize_linear() {
        let model = UtilityModel::linear(3).normalize().unwrap();
        assert_eq!(model.values(), &[2.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn normalize_exponential_alpha_one() {
        let model = UtilityModel::exponential(1.0, 3).normalize().unwrap();
        assert!((model.value_at_rank(1) - 0.578).abs() < 1e-3);
        assert!((model.value_at_rank(2) - 0.422).abs() < 1e-3);
        assert_eq!(model.value_at_rank(3), 0.0);
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = UtilityModel::exponential(0.5, 4).normalize().unwrap();
        let twice = once.normalize().unwrap();
        assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn normalize_single_object_is_degenerate() {
        assert!(UtilityModel::linear(1).normalize().is_err());
    }

    #[test]
    fn from_values_requires_strict_decrease() {
        assert!(UtilityModel::from_values(vec![10.0, 9.0, 1.0]).is_ok());
        assert!(UtilityModel::from_values(vec![10.0, 10.0, 1.0]).is_err());
        assert!(UtilityModel::from_values(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn expected_utility_ps_agent1() {
        // utilities 10, 9, 0 by rank; order (acb); PS row a:1/2, b:0, c:1/2
        let model = UtilityModel::from_values(vec![10.0, 9.0, 0.0]).unwrap();
        let p = Profile::parse("(acb);(abc);(bac)").unwrap();
        let a = ps(&p).unwrap();
        let eu = expected_utility(&model, p.order(AgentId(0)), a.row(AgentId(0))).unwrap();
        assert!((eu - 9.5).abs() < 1e-12);
    }

    #[test]
    fn expected_utility_deterministic_top_choice() {
        let model = UtilityModel::exponential(1.0, 3);
        let order = PrefOrder::parse("(bac)", 3).unwrap();
        let row = [
            Rational::from_integer(0),
            Rational::from_integer(1),
            Rational::from_integer(0),
        ];
        let eu = expected_utility(&model, &order, &row).unwrap();
        assert_eq!(eu, model.value_at_rank(1));
    }

    #[test]
    fn expected_utility_rsd_agent3() {
        let model = UtilityModel::from_values(vec![10.0, 9.0, 0.0]).unwrap();
        let p = Profile::parse("(acb);(abc);(bac)").unwrap();
        let a = rsd(&p).unwrap();
        let eu = expected_utility(&model, p.order(AgentId(2)), a.row(AgentId(2))).unwrap();
        assert!((eu - 25.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn social_welfare_table3_both_mechanisms() {
        let model = UtilityModel::from_values(vec![10.0, 9.0, 0.0]).unwrap();
        let p = Profile::parse("(acb);(abc);(bac)").unwrap();
        let sw_rsd = social_welfare(&p, &rsd(&p).unwrap(), &model).unwrap();
        let sw_ps = social_welfare(&p, &ps(&p).unwrap(), &model).unwrap();
        assert!((sw_rsd - (9.5 + 6.5 + 25.0 / 3.0)).abs() < 1e-12);
        assert!((sw_ps - 24.25).abs() < 1e-12);
    }

    #[test]
    fn welfare_change_table3_is_slightly_negative() {
        let model = UtilityModel::from_values(vec![10.0, 9.0, 0.0]).unwrap();
        let p = Profile::parse("(acb);(abc);(bac)").unwrap();
        let wc = welfare_change(&p, &ps(&p).unwrap(), &rsd(&p).unwrap(), &model)
            .unwrap()
            .unwrap();
        let expected = (24.25 - 73.0 / 3.0) / (73.0 / 3.0);
        assert!((wc - expected).abs() < 1e-12);
        assert!((wc - -0.00342).abs() < 1e-5);
    }

    #[test]
    fn welfare_change_zero_when_assignments_match() {
        let model = UtilityModel::exponential(0.5, 3);
        let p = Profile::parse("(bca);(cab);(bca)").unwrap();
        let a = ps(&p).unwrap();
        let wc = welfare_change(&p, &a, &a, &model).unwrap().unwrap();
        assert_eq!(wc, 0.0);
    }

    #[test]
    fn heterogeneous_utilities_flip_the_comparison() {
        // agents 1-2 value ranks 10/9/1, agent 3 values 10/6/4: PS wins
        let p = Profile::parse("(acb);(abc);(bac)").unwrap();
        let models = vec![
            UtilityModel::from_values(vec![10.0, 9.0, 1.0]).unwrap(),
            UtilityModel::from_values(vec![10.0, 9.0, 1.0]).unwrap(),
            UtilityModel::from_values(vec![10.0, 6.0, 4.0]).unwrap(),
        ];
        let sw_ps = social_welfare_per_agent(&p, &ps(&p).unwrap(), &models).unwrap();
        let sw_rsd = social_welfare_per_agent(&p, &rsd(&p).unwrap(), &models).unwrap();
        assert!(sw_ps > sw_rsd);

        // shared 10/9/1 instead: RSD wins
        let shared = UtilityModel::from_values(vec![10.0, 9.0, 1.0]).unwrap();
        let sw_ps = social_welfare(&p, &ps(&p).unwrap(), &shared).unwrap();
        let sw_rsd = social_welfare(&p, &rsd(&p).unwrap(), &shared).unwrap();
        assert!(sw_rsd > sw_ps);
    }
}
