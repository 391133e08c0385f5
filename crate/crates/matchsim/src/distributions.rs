//! Preference-profile generators: uniform, Mallows, Mallows mixtures, and
//! the Pólya-Eggenberger urn, plus the Kendall-tau distance and the exact
//! Mallows pmf they are validated against.
//!
//! Sampling is reproducible: a [`ProfileSampler`] derives one subseed per
//! profile index from the master seed, so the stream is identical across
//! runs and independent of how callers parallelize over indices.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prefs::{factorial, ObjectId, PrefOrder, Profile};

/// Master seed for a sample stream. Identical seed and spec give an
/// identical stream, regardless of thread count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeed(pub u64);

/// Number of discordant object pairs between two orders over the same
/// object set.
pub fn kendall_tau(a: &PrefOrder, b: &PrefOrder) -> Result<usize> {
    let m = a.num_objects();
    if b.num_objects() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.num_objects(),
        });
    }
    let mut discordant = 0;
    for x in 0..m {
        for y in (x + 1)..m {
            let (x, y) = (ObjectId(x), ObjectId(y));
            if a.weakly_prefers(x, y) != b.weakly_prefers(x, y) {
                discordant += 1;
            }
        }
    }
    Ok(discordant)
}

/// A Mallows model: probability proportional to
/// `phi^(Kendall-tau distance to the reference)`.
///
/// `phi = 1` is the uniform distribution; `phi = 0` is admitted as the
/// limit that puts all mass on the reference.
#[derive(Debug, Clone)]
pub struct MallowsSpec {
    pub reference: PrefOrder,
    pub phi: f64,
}

impl MallowsSpec {
    pub fn new(reference: PrefOrder, phi: f64) -> Result<MallowsSpec> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::InvalidConfig(format!(
                "Mallows dispersion must lie in [0, 1], got {phi}"
            )));
        }
        Ok(MallowsSpec { reference, phi })
    }
}

/// Normalizer `Z = 1 (1 + phi) (1 + phi + phi^2) ... (1 + ... + phi^(m-1))`.
fn mallows_normalizer(phi: f64, m: usize) -> f64 {
    let mut z = 1.0;
    for k in 2..=m {
        let mut partial = 1.0;
        let mut power = 1.0;
        for _ in 1..k {
            power *= phi;
            partial += power;
        }
        z *= partial;
    }
    z
}

/// Exact Mallows probability of `order`. At `phi = 0` this degenerates to
/// the indicator of the reference.
pub fn mallows_pmf(spec: &MallowsSpec, order: &PrefOrder) -> Result<f64> {
    let distance = kendall_tau(order, &spec.reference)?;
    if spec.phi == 0.0 {
        return Ok(if distance == 0 { 1.0 } else { 0.0 });
    }
    let m = spec.reference.num_objects();
    Ok(spec.phi.powi(distance as i32) / mallows_normalizer(spec.phi, m))
}

/// Draws one order by repeated insertion: the reference's k-th object is
/// inserted `i` slots above the bottom of the partial ranking with
/// probability proportional to `phi^i` (each displaced object is one
/// discordant pair).
pub fn mallows_sample<R: Rng + ?Sized>(spec: &MallowsSpec, rng: &mut R) -> PrefOrder {
    if spec.phi == 0.0 {
        return spec.reference.clone();
    }
    let m = spec.reference.num_objects();
    let mut ranking: Vec<ObjectId> = Vec::with_capacity(m);
    for (k, &obj) in spec.reference.ranking().iter().enumerate() {
        // weights phi^i for i = 0..=k displaced objects
        let mut total = 1.0;
        let mut power = 1.0;
        for _ in 0..k {
            power *= spec.phi;
            total += power;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut power = 1.0;
        let mut displaced = k; // falls through to the top slot
        for i in 0..=k {
            acc += power;
            if target < acc {
                displaced = i;
                break;
            }
            power *= spec.phi;
        }
        ranking.insert(k - displaced, obj);
    }
    PrefOrder::new(ranking).expect("insertion preserves the permutation property")
}

/// A weighted mixture of Mallows components over one object set.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    components: Vec<MallowsSpec>,
    weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(components: Vec<MallowsSpec>, weights: Vec<f64>) -> Result<MixtureSpec> {
        if components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs components".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig("negative mixture weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let m = components[0].reference.num_objects();
        if components.iter().any(|c| c.reference.num_objects() != m) {
            return Err(Error::InvalidConfig(
                "mixture references span different object sets".into(),
            ));
        }
        Ok(MixtureSpec {
            components,
            weights,
        })
    }

    /// Equal-weight mixture with `count` uniformly drawn reference
    /// rankings sharing one dispersion.
    pub fn random_references<R: Rng + ?Sized>(
        count: usize,
        m: usize,
        phi: f64,
        rng: &mut R,
    ) -> Result<MixtureSpec> {
        if count == 0 {
            return Err(Error::InvalidConfig("mixture needs components".into()));
        }
        let components = (0..count)
            .map(|_| MallowsSpec::new(uniform_order(m, rng), phi))
            .collect::<Result<Vec<_>>>()?;
        MixtureSpec::new(components, vec![1.0 / count as f64; count])
    }

    pub fn components(&self) -> &[MallowsSpec] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Draws a component by weight, then samples it.
pub fn mixture_sample<R: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut R) -> PrefOrder {
    let target = rng.random::<f64>();
    let mut acc = 0.0;
    for (component, &w) in spec.components.iter().zip(&spec.weights) {
        acc += w;
        if target < acc {
            return mallows_sample(component, rng);
        }
    }
    // guard against accumulated rounding in the weights
    mallows_sample(spec.components.last().expect("nonempty"), rng)
}

/// One uniformly random strict order (Fisher-Yates).
pub fn uniform_order<R: Rng + ?Sized>(m: usize, rng: &mut R) -> PrefOrder {
    let mut ranking: Vec<ObjectId> = (0..m).map(ObjectId).collect();
    ranking.shuffle(rng);
    PrefOrder::new(ranking).expect("shuffled identity is a permutation")
}

/// Profile of `n` independent uniform orders.
pub fn uniform_profile<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Profile> {
    Profile::new((0..n).map(|_| uniform_order(m, rng)).collect())
}

/// Profile drawn from a Pólya-Eggenberger urn initialized with one copy of
/// each of the m! orders, where every drawn order is returned together
/// with an extra copy.
///
/// Implemented lazily: the t-th draw (0-based) copies a uniformly chosen
/// previous draw with probability t / (m! + t) and otherwise draws a fresh
/// uniform order, which never materializes the m!-item urn. For m large
/// enough that m! overflows the count type the copy probability is below
/// any representable threshold and fresh draws are used throughout.
pub fn urn_sample_profile<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Profile> {
    let fact = factorial(m).ok();
    let mut orders: Vec<PrefOrder> = Vec::with_capacity(n);
    for t in 0..n {
        let copy_previous = match fact {
            Some(f) if t > 0 => rng.random_range(0..f + t as u128) < t as u128,
            _ => false,
        };
        if copy_previous {
            let source = rng.random_range(0..t);
            orders.push(orders[source].clone());
        } else {
            orders.push(uniform_order(m, rng));
        }
    }
    Profile::new(orders)
}

/// Which generator a sampler draws from.
#[derive(Debug, Clone)]
pub enum DistributionSpec {
    Uniform,
    Mallows(MallowsSpec),
    MallowsMixture(MixtureSpec),
    Urn,
}

impl DistributionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DistributionSpec::Uniform => "uniform",
            DistributionSpec::Mallows(_) => "mallows",
            DistributionSpec::MallowsMixture(_) => "mallows-mixture",
            DistributionSpec::Urn => "urn",
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match self {
            DistributionSpec::Mallows(spec) => Some(spec.phi),
            DistributionSpec::MallowsMixture(mix) => mix.components.first().map(|c| c.phi),
            _ => None,
        }
    }
}

/// Reproducible profile stream: profile `index` is a pure function of
/// `(seed, index)`, so disjoint index ranges can be drawn concurrently
/// and any schedule reproduces the same profiles.
#[derive(Debug, Clone)]
pub struct ProfileSampler {
    spec: DistributionSpec,
    n: usize,
    m: usize,
    seed: RngSeed,
}

impl ProfileSampler {
    pub fn new(spec: DistributionSpec, n: usize, m: usize, seed: RngSeed) -> Result<ProfileSampler> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidConfig(
                "sampling needs n >= 1 and m >= 1".into(),
            ));
        }
        match &spec {
            DistributionSpec::Mallows(s) if s.reference.num_objects() != m => {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: s.reference.num_objects(),
                })
            }
            DistributionSpec::MallowsMixture(mix)
                if mix.components[0].reference.num_objects() != m =>
            {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: mix.components[0].reference.num_objects(),
                })
            }
            _ => {}
        }
        Ok(ProfileSampler { spec, n, m, seed })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn seed(&self) -> RngSeed {
        self.seed
    }

    /// The profile at `index` in this stream.
    pub fn profile(&self, index: u64) -> Profile {
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(self.seed.0, index));
        let drawn = match &self.spec {
            DistributionSpec::Uniform => uniform_profile(self.n, self.m, &mut rng),
            DistributionSpec::Mallows(spec) => Profile::new(
                (0..self.n).map(|_| mallows_sample(spec, &mut rng)).collect(),
            ),
            DistributionSpec::MallowsMixture(mix) => Profile::new(
                (0..self.n).map(|_| mixture_sample(mix, &mut rng)).collect(),
            ),
            DistributionSpec::Urn => urn_sample_profile(self.n, self.m, &mut rng),
        };
        drawn.expect("samplers produce valid profiles for n, m >= 1")
    }

    pub fn iter(&self) -> impl Iterator<Item = Profile> + '_ {
        (0u64..).map(|i| self.profile(i))
    }
}

/// SplitMix64 over the master seed and a per-profile counter; any change
/// to either decorrelates the stream.
fn subseed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seed for the per-m reference-ranking stream used by mixture models;
/// kept separate from the profile streams so reference choice never
/// perturbs the sampled profiles.
pub fn reference_stream_seed(seed: RngSeed, m: usize) -> u64 {
    subseed(seed.0 ^ 0x5EED_0F0E_F5EE_DCAF, m as u64)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefs::all_orders;
    use std::collections::HashMap;

    fn order(text: &str, m: usize) -> PrefOrder {
        PrefOrder::parse(text, m).unwrap()
    }

    fn seeded(n: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(n)
    }

    #[test]
    fn kendall_tau_basics() {
        let abc = order("(abc)", 3);
        assert_eq!(kendall_tau(&abc, &abc).unwrap(), 0);
        assert_eq!(kendall_tau(&abc, &order("(cba)", 3)).unwrap(), 3);
        assert_eq!(kendall_tau(&abc, &order("(acb)", 3)).unwrap(), 1);
        assert!(kendall_tau(&abc, &order("(ab)", 2)).is_err());
    }

    #[test]
    fn pmf_uniform_at_phi_one() {
        let spec = MallowsSpec::new(order("(abc)", 3), 1.0).unwrap();
        for o in all_orders(3).unwrap() {
            assert!((mallows_pmf(&spec, &o).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pmf_of_reference_is_one_over_z() {
        for phi in [0.1, 0.5, 0.9, 1.0] {
            let spec = MallowsSpec::new(order("(bca)", 3), phi).unwrap();
            let z = mallows_normalizer(phi, 3);
            assert!((mallows_pmf(&spec, &order("(bca)", 3)).unwrap() - 1.0 / z).abs() < 1e-12);
        }
    }

    #[test]
    fn pmf_two_objects_half_dispersion() {
        // Z = 1 * (1 + 1/2) = 3/2, so the reference has mass 2/3
        let spec = MallowsSpec::new(order("(ab)", 2), 0.5).unwrap();
        assert!((mallows_pmf(&spec, &order("(ab)", 2)).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((mallows_pmf(&spec, &order("(ba)", 2)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_sums_to_one() {
        for m in 2..=5 {
            for phi in [0.1, 0.5, 0.9, 1.0] {
                let spec = MallowsSpec::new(PrefOrder::canonical(m), phi).unwrap();
                let total: f64 = all_orders(m)
                    .unwrap()
                    .iter()
                    .map(|o| mallows_pmf(&spec, o).unwrap())
                    .sum();
                assert!((total - 1.0).abs() < 1e-9, "m={m} phi={phi}: {total}");
            }
        }
    }

    #[test]
    fn zero_dispersion_returns_reference() {
        let spec = MallowsSpec::new(order("(cab)", 3), 0.0).unwrap();
        let mut rng = seeded(7);
        for _ in 0..50 {
            assert_eq!(mallows_sample(&spec, &mut rng), spec.reference);
        }
        assert_eq!(mallows_pmf(&spec, &spec.reference).unwrap(), 1.0);
        assert_eq!(mallows_pmf(&spec, &order("(abc)", 3)).unwrap(), 0.0);
    }

    fn empirical_frequencies(
        samples: impl Iterator<Item = PrefOrder>,
    ) -> HashMap<String, f64> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for s in samples {
            *counts.entry(s.to_string()).or_default() += 1;
            total += 1;
        }
        counts
            .into_iter()
            .map(|(k, v)| (k, v as f64 / total as f64))
            .collect()
    }

    #[test]
    fn sampler_matches_pmf_in_total_variation() {
        for phi in [0.1, 0.5, 0.9] {
            let spec = MallowsSpec::new(order("(abc)", 3), phi).unwrap();
            let mut rng = seeded(42);
            let freq =
                empirical_frequencies((0..60_000).map(|_| mallows_sample(&spec, &mut rng)));
            let tv: f64 = all_orders(3)
                .unwrap()
                .iter()
                .map(|o| {
                    let p = mallows_pmf(&spec, o).unwrap();
                    let e = freq.get(&o.to_string()).copied().unwrap_or(0.0);
                    (p - e).abs()
                })
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.01, "phi={phi}: tv={tv}");
        }
    }

    #[test]
    fn mixture_of_point_masses_splits_evenly() {
        let mix = MixtureSpec::new(
            vec![
                MallowsSpec::new(order("(abc)", 3), 0.0).unwrap(),
                MallowsSpec::new(order("(cba)", 3), 0.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut rng = seeded(3);
        let freq = empirical_frequencies((0..10_000).map(|_| mixture_sample(&mix, &mut rng)));
        assert!((freq["(abc)"] - 0.5).abs() < 0.01);
        assert!((freq["(cba)"] - 0.5).abs() < 0.01);
    }

    #[test]
    fn mixture_validation() {
        let spec = MallowsSpec::new(order("(ab)", 2), 0.5).unwrap();
        assert!(MixtureSpec::new(vec![], vec![]).is_err());
        assert!(MixtureSpec::new(vec![spec.clone()], vec![0.9]).is_err());
        assert!(MixtureSpec::new(vec![spec.clone()], vec![-1.0]).is_err());
        assert!(MixtureSpec::new(vec![spec], vec![1.0]).is_ok());
    }

    #[test]
    fn urn_collision_probability_two_by_two() {
        // closed form: 1/(m!+1) + (m!/(m!+1)) * 1/m! ... for n=2, m=2 the
        // second agent copies with probability 1/3, else matches by luck
        // 1/2 of the time: 1/3 + 2/3 * 1/2 = 2/3
        let mut rng = seeded(11);
        let mut same = 0u32;
        let trials = 20_000;
        for _ in 0..trials {
            let p = urn_sample_profile(2, 2, &mut rng).unwrap();
            if p.order(crate::prefs::AgentId(0)) == p.order(crate::prefs::AgentId(1)) {
                same += 1;
            }
        }
        let frac = same as f64 / trials as f64;
        assert!((frac - 2.0 / 3.0).abs() < 0.01, "{frac}");
    }

    #[test]
    fn urn_draws_are_exchangeable_in_the_marginal() {
        // each single draw index is marginally uniform over the 6 orders
        let mut rng = seeded(5);
        let mut counts = [0u32; 6];
        let trials = 12_000;
        let orders = all_orders(3).unwrap();
        for _ in 0..trials {
            let p = urn_sample_profile(10, 3, &mut rng).unwrap();
            let last = p.order(crate::prefs::AgentId(9));
            let idx = orders.iter().position(|o| o == last).unwrap();
            counts[idx] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn uniform_order_frequencies() {
        let mut rng = seeded(9);
        let freq = empirical_frequencies((0..60_000).map(|_| uniform_order(3, &mut rng)));
        for (_, f) in freq {
            assert!((f - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn sampler_streams_are_reproducible_and_splittable() {
        let sampler = ProfileSampler::new(
            DistributionSpec::Urn,
            4,
            3,
            RngSeed(123),
        )
        .unwrap();
        let first: Vec<Profile> = sampler.iter().take(20).collect();
        let again: Vec<Profile> = sampler.iter().take(20).collect();
        assert_eq!(first, again);
        // random access agrees with streaming
        for (i, p) in first.iter().enumerate() {
            assert_eq!(&sampler.profile(i as u64), p);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = ProfileSampler::new(DistributionSpec::Uniform, 3, 4, RngSeed(1)).unwrap();
        let b = ProfileSampler::new(DistributionSpec::Uniform, 3, 4, RngSeed(2)).unwrap();
        let sa: Vec<Profile> = a.iter().take(10).collect();
        let sb: Vec<Profile> = b.iter().take(10).collect();
        assert_ne!(sa, sb);
    }
}
