//! Experiment driver: sweeps (n, m, alpha, distribution) cells either
//! exhaustively over all (m!)^n profiles or by seeded sampling, aggregates
//! the per-profile metrics, and emits heatmap-ready CSV.
//!
//! Following the measurements the metrics reproduce, manipulation metrics
//! audit PS (RSD is sd-strategyproof outright) and envy metrics audit RSD
//! (PS is sd-envyfree outright); the dominance, identity, and welfare
//! metrics compare the two mechanisms at each profile.
//!
//! Determinism: exhaustive cells count exactly; sampled cells derive one
//! subseed per profile index, and per-profile results are folded in index
//! order, so a cell's record is bit-identical across runs and thread
//! counts.

mod cli;

pub use cli::cli_main;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{assignments_equal, Rational};
use crate::distributions::{
    DistributionSpec, MallowsSpec, MixtureSpec, ProfileSampler, RngSeed,
};
use crate::dominance::{ld_dominates_assignment, sd_dominates_assignment};
use crate::error::{Error, Result};
use crate::mechanisms::{ps, rsd, Mechanism};
use crate::prefs::{profile_at, profile_count, PrefOrder, Profile};
use crate::strategy::{
    audit_cardinal_manipulation_with_cap, audit_cardinal_envy, audit_ordinal_envy,
    profile_manipulability_query, EnvyAggregation, ManipulabilityQuery, DEFAULT_MISREPORT_CAP,
};
use crate::utility::{welfare_change, UtilityModel};

/// Version string echoed into every output file header.
pub const VERSION: &str = concat!("matchsim-", env!("CARGO_PKG_VERSION"));

/// Environment variable consulted for the thread count when the config
/// does not pin one; an explicit config value wins over the environment.
pub const THREADS_ENV_VAR: &str = "MATCHSIM_THREADS";

/// Default ceiling on profiles per exhaustive cell.
pub const DEFAULT_PROFILE_BUDGET: u128 = 10_000_000;

/// Default sample count per sampled cell.
pub const DEFAULT_SAMPLES: u64 = 1_000;

/// Profiles evaluated between aggregation (and checkpoint) points.
const CHUNK: u64 = 1024;

/// One aggregate the harness can compute per profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    /// PS and RSD prescribe identical matrices.
    Identical,
    /// PS stochastically dominates RSD.
    SdDom,
    /// PS lexicographically dominates RSD.
    LdDom,
    /// PS not sd-strategyproof (some agent gains at some surplus
    /// coordinate), plus the strictly sd-manipulable fraction.
    ManipSd,
    /// Some agent has a misreport that ld-dominates its truthful row.
    ManipLd,
    /// Cardinal manipulability and maximum relative gain under the cell's
    /// utility model.
    ManipCardinal,
    /// Fraction of weakly sd-envious agents under RSD.
    EnvyOrdinal,
    /// Fraction of envious agents and total envy under RSD, cardinal.
    EnvyCardinal,
    /// Relative social-welfare change of PS over RSD.
    WelfareChange,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Identical,
        Metric::SdDom,
        Metric::LdDom,
        Metric::ManipSd,
        Metric::ManipLd,
        Metric::ManipCardinal,
        Metric::EnvyOrdinal,
        Metric::EnvyCardinal,
        Metric::WelfareChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Identical => "identical",
            Metric::SdDom => "sd_dom",
            Metric::LdDom => "ld_dom",
            Metric::ManipSd => "manip_sd",
            Metric::ManipLd => "manip_ld",
            Metric::ManipCardinal => "manip_cardinal",
            Metric::EnvyOrdinal => "envy_ordinal",
            Metric::EnvyCardinal => "envy_cardinal",
            Metric::WelfareChange => "welfare_change",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric {s:?}")))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The set of metrics a sweep evaluates.
#[derive(Debug, Clone, Default)]
pub struct MetricSet(Vec<Metric>);

impl MetricSet {
    pub fn new(mut metrics: Vec<Metric>) -> MetricSet {
        metrics.sort();
        metrics.dedup();
        MetricSet(metrics)
    }

    pub fn all() -> MetricSet {
        MetricSet::new(Metric::ALL.to_vec())
    }

    pub fn contains(&self, metric: Metric) -> bool {
        self.0.contains(&metric)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Metric> + '_ {
        self.0.iter().copied()
    }

    fn needs_model(&self) -> bool {
        [Metric::ManipCardinal, Metric::EnvyCardinal, Metric::WelfareChange]
            .into_iter()
            .any(|m| self.contains(m))
    }

    fn needs_rsd(&self) -> bool {
        [
            Metric::Identical,
            Metric::SdDom,
            Metric::LdDom,
            Metric::EnvyOrdinal,
            Metric::EnvyCardinal,
            Metric::WelfareChange,
        ]
        .into_iter()
        .any(|m| self.contains(m))
    }

    fn needs_ps(&self) -> bool {
        [
            Metric::Identical,
            Metric::SdDom,
            Metric::LdDom,
            Metric::WelfareChange,
        ]
        .into_iter()
        .any(|m| self.contains(m))
    }
}

impl fmt::Display for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|m| m.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Distribution family; concrete specs are instantiated per cell since
/// reference rankings depend on m.
#[derive(Debug, Clone)]
pub enum DistributionConfig {
    Uniform,
    /// Single reference ranking (the canonical order; both mechanisms are
    /// neutral, so the reference choice is irrelevant up to relabeling).
    Mallows { phi: f64 },
    /// Equal-weight mixture with `references` uniformly drawn reference
    /// rankings per (seed, m), sharing one dispersion.
    MallowsMixture { phi: f64, references: usize },
    Urn,
}

impl DistributionConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DistributionConfig::Uniform => "uniform",
            DistributionConfig::Mallows { .. } => "mallows",
            DistributionConfig::MallowsMixture { .. } => "mallows5",
            DistributionConfig::Urn => "urn",
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match self {
            DistributionConfig::Mallows { phi }
            | DistributionConfig::MallowsMixture { phi, .. } => Some(*phi),
            _ => None,
        }
    }

    /// Concrete per-cell spec. Mixture references are drawn from a stream
    /// derived from (seed, m) only, so every cell sharing an object count
    /// sees the same references.
    pub fn instantiate(&self, m: usize, seed: RngSeed) -> Result<DistributionSpec> {
        use rand::SeedableRng;
        match self {
            DistributionConfig::Uniform => Ok(DistributionSpec::Uniform),
            DistributionConfig::Urn => Ok(DistributionSpec::Urn),
            DistributionConfig::Mallows { phi } => Ok(DistributionSpec::Mallows(
                MallowsSpec::new(PrefOrder::canonical(m), *phi)?,
            )),
            DistributionConfig::MallowsMixture { phi, references } => {
                let stream = crate::distributions::reference_stream_seed(seed, m);
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stream);
                Ok(DistributionSpec::MallowsMixture(
                    MixtureSpec::random_references(*references, m, *phi, &mut rng)?,
                ))
            }
        }
    }
}

/// Exhaustive coverage or seeded sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exhaustive,
    Sampled(u64),
}

impl Mode {
    pub fn label(&self, neutrality: bool) -> String {
        match self {
            Mode::Exhaustive if neutrality => "exhaustive-neutral".into(),
            Mode::Exhaustive => "exhaustive".into(),
            Mode::Sampled(k) => format!("sampled({k})"),
        }
    }
}

/// Full sweep configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n_range: Vec<usize>,
    pub m_range: Vec<usize>,
    pub alpha_set: Vec<f64>,
    pub distribution: DistributionConfig,
    pub mode: Mode,
    pub seed: RngSeed,
    pub metrics: MetricSet,
    /// Normalize utility values to sum to 1 (the default for cardinal
    /// metrics).
    pub normalization: bool,
    /// Worker threads; `None` falls back to [`THREADS_ENV_VAR`], then to
    /// the rayon default.
    pub thread_count: Option<usize>,
    /// Ceiling on profiles per exhaustive cell.
    pub budget: u128,
    /// Evaluate exhaustive cells beyond the budget anyway.
    pub force: bool,
    /// Fix agent 0's order to the canonical one and enumerate the
    /// (m!)^(n-1) reduced space; every reduced profile stands for m!
    /// relabelings, and all metrics here are label-invariant.
    pub neutrality_reduction: bool,
}

impl ExperimentConfig {
    /// Uniform-distribution config over single values of n and m with the
    /// library defaults; the starting point most tests and examples tweak.
    pub fn single_cell(n: usize, m: usize, alpha: f64, mode: Mode, metrics: MetricSet) -> Self {
        ExperimentConfig {
            n_range: vec![n],
            m_range: vec![m],
            alpha_set: vec![alpha],
            distribution: DistributionConfig::Uniform,
            mode,
            seed: RngSeed(0),
            metrics,
            normalization: true,
            thread_count: None,
            budget: DEFAULT_PROFILE_BUDGET,
            force: false,
            neutrality_reduction: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("empty metric set".into()));
        }
        if self.n_range.is_empty() || self.m_range.is_empty() {
            return Err(Error::InvalidConfig("empty n or m range".into()));
        }
        if self.alpha_set.is_empty() {
            return Err(Error::InvalidConfig("empty alpha set".into()));
        }
        if self.n_range.iter().any(|&n| n == 0) || self.m_range.iter().any(|&m| m == 0) {
            return Err(Error::InvalidConfig("n and m must be at least 1".into()));
        }
        if self.neutrality_reduction && !matches!(self.mode, Mode::Exhaustive) {
            return Err(Error::InvalidConfig(
                "neutrality reduction applies to exhaustive mode only".into(),
            ));
        }
        if let Mode::Sampled(0) = self.mode {
            return Err(Error::InvalidConfig("sampled mode needs samples >= 1".into()));
        }
        Ok(())
    }

    /// Thread count after applying the environment override.
    pub fn resolved_threads(&self) -> Option<usize> {
        self.thread_count.or_else(|| {
            std::env::var(THREADS_ENV_VAR)
                .ok()
                .and_then(|v| v.parse().ok())
        })
    }

    fn cells(&self) -> Vec<(usize, usize, f64)> {
        let mut cells = Vec::new();
        for &n in &self.n_range {
            for &m in &self.m_range {
                for &alpha in &self.alpha_set {
                    cells.push((n, m, alpha));
                }
            }
        }
        cells
    }
}

/// Exact count/total pair behind every fraction the harness reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FractionStat {
    pub count: u64,
    pub total: u64,
}

impl FractionStat {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }

    pub fn exact(&self) -> Rational {
        if self.total == 0 {
            Rational::from_integer(0)
        } else {
            Rational::new(self.count as i128, self.total as i128)
        }
    }

    /// Normal-approximation 95% half-width (meaningful for sampled cells).
    pub fn ci95_half_width(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let p = self.fraction();
        1.96 * (p * (1.0 - p) / self.total as f64).sqrt()
    }
}

/// Min / quartiles / max of a per-profile distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    fn from_values(values: &mut Vec<f64>) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
        let at = |q: f64| {
            let pos = q * (values.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            values[lo] * (1.0 - frac) + values[hi] * frac
        };
        Some(Quartiles {
            min: values[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: values[values.len() - 1],
        })
    }
}

/// Aggregated result of one sweep cell (one heatmap pixel).
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub distribution: String,
    pub phi: Option<f64>,
    pub seed: u64,
    pub mode: String,
    /// Profiles actually evaluated (the reduced count under neutrality
    /// reduction).
    pub profiles: u64,
    pub frac_identical: Option<FractionStat>,
    pub frac_ps_sd_dom: Option<FractionStat>,
    pub frac_ps_ld_dom: Option<FractionStat>,
    /// Not sd-strategyproof at the profile.
    pub frac_manip: Option<FractionStat>,
    pub frac_sd_manip: Option<FractionStat>,
    pub frac_ld_manip: Option<FractionStat>,
    pub frac_cardinal_manip: Option<FractionStat>,
    /// Joint §4.3 statistic: sd-strategyproof and PS = RSD; present when
    /// both the manip_sd and identical metrics are requested.
    pub frac_strategyproof_identical: Option<FractionStat>,
    /// Mean of the profile-level maximum relative gain, over manipulable
    /// profiles only ("if manipulation is possible").
    pub mean_max_gain: Option<f64>,
    pub frac_envious_agents_ordinal: Option<f64>,
    pub frac_envious_agents_cardinal: Option<f64>,
    pub mean_total_envy: Option<f64>,
    /// Mean over profiles where RSD welfare is nonzero.
    pub mean_welfare_change: Option<f64>,
    pub welfare_change_defined: u64,
    pub gain_quantiles: Option<Quartiles>,
    pub envy_fraction_quantiles_ordinal: Option<Quartiles>,
    pub envy_fraction_quantiles_cardinal: Option<Quartiles>,
}

/// Pinned cell-file column set; CI columns for sampled cells follow it.
pub const CSV_HEADER: &str = "n,m,alpha,dist,phi,seed,mode,profiles,frac_identical,frac_ps_sd_dom,frac_ps_ld_dom,frac_manip,frac_sd_manip,frac_ld_manip,mean_max_gain,frac_envious_agents,mean_total_envy,mean_welfare_change";

const CI_COLUMNS: &str = "ci95_frac_identical,ci95_frac_ps_sd_dom,ci95_frac_ps_ld_dom,ci95_frac_manip,ci95_frac_sd_manip,ci95_frac_ld_manip,ci95_frac_envious_agents";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl CellRecord {
    /// The `frac_envious_agents` column: the cardinal fraction when the
    /// cardinal envy metric ran (it is the alpha-dependent quantity the
    /// heatmaps plot), otherwise the ordinal fraction.
    pub fn envious_agents_column(&self) -> Option<f64> {
        self.frac_envious_agents_cardinal
            .or(self.frac_envious_agents_ordinal)
    }

    pub fn csv_row(&self, sampled: bool) -> String {
        let frac = |s: &Option<FractionStat>| fmt_opt(s.as_ref().map(FractionStat::fraction));
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.m,
            self.alpha,
            self.distribution,
            fmt_opt(self.phi),
            self.seed,
            self.mode,
            self.profiles,
            frac(&self.frac_identical),
            frac(&self.frac_ps_sd_dom),
            frac(&self.frac_ps_ld_dom),
            frac(&self.frac_manip),
            frac(&self.frac_sd_manip),
            frac(&self.frac_ld_manip),
            fmt_opt(self.mean_max_gain),
            fmt_opt(self.envious_agents_column()),
            fmt_opt(self.mean_total_envy),
            fmt_opt(self.mean_welfare_change),
        );
        if sampled {
            let ci = |s: &Option<FractionStat>| fmt_opt(s.as_ref().map(FractionStat::ci95_half_width));
            // the envious-agent column is a mean of fractions rather than
            // a Bernoulli count; the binomial half-width still bounds it
            let envy_ci = fmt_opt(
                self.envious_agents_column()
                    .map(|p| 1.96 * (p * (1.0 - p) / self.profiles.max(1) as f64).sqrt()),
            );
            row = format!(
                "{row},{},{},{},{},{},{},{envy_ci}",
                ci(&self.frac_identical),
                ci(&self.frac_ps_sd_dom),
                ci(&self.frac_ps_ld_dom),
                ci(&self.frac_manip),
                ci(&self.frac_sd_manip),
                ci(&self.frac_ld_manip),
            );
        }
        row
    }
}

/// Everything measured at one profile.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProfileMetrics {
    pub identical: bool,
    pub ps_sd_dominates: bool,
    pub ps_ld_dominates: bool,
    pub manipulable: bool,
    pub sd_manipulable: bool,
    pub ld_manipulable: bool,
    pub cardinal_manipulable: bool,
    pub max_gain: Option<f64>,
    pub fraction_envious_ordinal: Option<f64>,
    pub fraction_envious_cardinal: Option<f64>,
    pub total_envy: Option<f64>,
    pub welfare_change: Option<f64>,
}

struct CellContext {
    n: usize,
    m: usize,
    metrics: MetricSet,
    model: Option<UtilityModel>,
    source: ProfileSource,
}

enum ProfileSource {
    Exhaustive { neutrality: bool },
    Sampler(ProfileSampler),
}

impl CellContext {
    fn profile(&self, index: u64) -> Result<Profile> {
        match &self.source {
            ProfileSource::Exhaustive { neutrality: false } => {
                profile_at(self.n, self.m, index as u128)
            }
            ProfileSource::Exhaustive { neutrality: true } => {
                // agent 0 pinned to the canonical order
                let rest = profile_at(self.n - 1, self.m, index as u128)?;
                let mut orders = vec![PrefOrder::canonical(self.m)];
                orders.extend(rest.orders().iter().cloned());
                Profile::new(orders)
            }
            ProfileSource::Sampler(sampler) => Ok(sampler.profile(index)),
        }
    }
}

/// Computes the requested metrics at one profile by direct module calls;
/// the harness adds no arithmetic beyond the counting and averaging done
/// in the accumulator.
fn evaluate_profile(profile: &Profile, ctx: &CellContext) -> Result<ProfileMetrics> {
    let metrics = &ctx.metrics;
    let mut out = ProfileMetrics::default();

    let ps_assignment = if metrics.needs_ps() {
        Some(ps(profile)?)
    } else {
        None
    };
    let rsd_assignment = if metrics.needs_rsd() {
        Some(rsd(profile)?)
    } else {
        None
    };

    if let (Some(ps_a), Some(rsd_a)) = (&ps_assignment, &rsd_assignment) {
        if metrics.contains(Metric::Identical) {
            out.identical = assignments_equal(ps_a, rsd_a)?;
        }
        if metrics.contains(Metric::SdDom) {
            out.ps_sd_dominates = sd_dominates_assignment(profile, ps_a, rsd_a)?;
        }
        if metrics.contains(Metric::LdDom) {
            out.ps_ld_dominates = ld_dominates_assignment(profile, ps_a, rsd_a)?;
        }
        if metrics.contains(Metric::WelfareChange) {
            let model = ctx.model.as_ref().expect("model built for cardinal metrics");
            out.welfare_change = welfare_change(profile, ps_a, rsd_a, model)?;
        }
    }

    if metrics.contains(Metric::ManipSd) || metrics.contains(Metric::ManipLd) {
        let query = ManipulabilityQuery {
            weak: metrics.contains(Metric::ManipSd),
            sd: metrics.contains(Metric::ManipSd),
            ld: metrics.contains(Metric::ManipLd),
        };
        let flags = profile_manipulability_query(
            profile,
            Mechanism::Ps,
            DEFAULT_MISREPORT_CAP,
            query,
        )?;
        out.manipulable = flags.manipulable;
        out.sd_manipulable = flags.sd_manipulable;
        out.ld_manipulable = flags.ld_manipulable;
    }

    if metrics.contains(Metric::ManipCardinal) {
        let model = ctx.model.as_ref().expect("model built for cardinal metrics");
        let audit =
            audit_cardinal_manipulation_with_cap(profile, Mechanism::Ps, model, DEFAULT_MISREPORT_CAP)?;
        out.cardinal_manipulable = audit.manipulable;
        out.max_gain = audit.max_gain;
    }

    if metrics.contains(Metric::EnvyOrdinal) {
        let rsd_a = rsd_assignment.as_ref().expect("rsd computed for envy");
        let report = audit_ordinal_envy(profile, rsd_a)?;
        out.fraction_envious_ordinal = Some(report.fraction_envious);
    }

    if metrics.contains(Metric::EnvyCardinal) {
        let rsd_a = rsd_assignment.as_ref().expect("rsd computed for envy");
        let model = ctx.model.as_ref().expect("model built for cardinal metrics");
        let report = audit_cardinal_envy(profile, rsd_a, model, EnvyAggregation::WorstPair)?;
        out.fraction_envious_cardinal = Some(report.fraction_envious);
        out.total_envy = report.total_envy;
    }

    Ok(out)
}

/// Running aggregate for one cell; serializable so interrupted exhaustive
/// sweeps can resume from the last completed chunk.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CellAccumulator {
    evaluated: u64,
    identical: u64,
    ps_sd_dom: u64,
    ps_ld_dom: u64,
    manip: u64,
    sd_manip: u64,
    ld_manip: u64,
    cardinal_manip: u64,
    strategyproof_identical: u64,
    gain_sum: f64,
    gain_count: u64,
    gain_values: Vec<f64>,
    envy_ord_sum: f64,
    envy_ord_values: Vec<f64>,
    envy_card_sum: f64,
    envy_card_values: Vec<f64>,
    total_envy_sum: f64,
    welfare_sum: f64,
    welfare_defined: u64,
}

impl CellAccumulator {
    fn add(&mut self, p: &ProfileMetrics, metrics: &MetricSet) {
        self.evaluated += 1;
        self.identical += p.identical as u64;
        self.ps_sd_dom += p.ps_sd_dominates as u64;
        self.ps_ld_dom += p.ps_ld_dominates as u64;
        self.manip += p.manipulable as u64;
        self.sd_manip += p.sd_manipulable as u64;
        self.ld_manip += p.ld_manipulable as u64;
        self.cardinal_manip += p.cardinal_manipulable as u64;
        if metrics.contains(Metric::ManipSd)
            && metrics.contains(Metric::Identical)
            && !p.manipulable
            && p.identical
        {
            self.strategyproof_identical += 1;
        }
        if p.cardinal_manipulable {
            if let Some(g) = p.max_gain {
                self.gain_sum += g;
                self.gain_count += 1;
                self.gain_values.push(g);
            }
        }
        if let Some(f) = p.fraction_envious_ordinal {
            self.envy_ord_sum += f;
            self.envy_ord_values.push(f);
        }
        if let Some(f) = p.fraction_envious_cardinal {
            self.envy_card_sum += f;
            self.envy_card_values.push(f);
        }
        if let Some(t) = p.total_envy {
            self.total_envy_sum += t;
        }
        if let Some(w) = p.welfare_change {
            self.welfare_sum += w;
            self.welfare_defined += 1;
        }
    }

    fn into_record(
        mut self,
        config: &ExperimentConfig,
        n: usize,
        m: usize,
        alpha: f64,
    ) -> CellRecord {
        let metrics = &config.metrics;
        let total = self.evaluated;
        let stat = |count: u64| Some(FractionStat { count, total });
        let when = |metric: Metric, count: u64| {
            if metrics.contains(metric) {
                stat(count)
            } else {
                None
            }
        };
        CellRecord {
            n,
            m,
            alpha,
            distribution: config.distribution.name().into(),
            phi: config.distribution.phi(),
            seed: config.seed.0,
            mode: config.mode.label(config.neutrality_reduction),
            profiles: total,
            frac_identical: when(Metric::Identical, self.identical),
            frac_ps_sd_dom: when(Metric::SdDom, self.ps_sd_dom),
            frac_ps_ld_dom: when(Metric::LdDom, self.ps_ld_dom),
            frac_manip: when(Metric::ManipSd, self.manip),
            frac_sd_manip: when(Metric::ManipSd, self.sd_manip),
            frac_ld_manip: when(Metric::ManipLd, self.ld_manip),
            frac_cardinal_manip: when(Metric::ManipCardinal, self.cardinal_manip),
            frac_strategyproof_identical: if metrics.contains(Metric::ManipSd)
                && metrics.contains(Metric::Identical)
            {
                stat(self.strategyproof_identical)
            } else {
                None
            },
            mean_max_gain: (self.gain_count > 0).then(|| self.gain_sum / self.gain_count as f64),
            frac_envious_agents_ordinal: metrics
                .contains(Metric::EnvyOrdinal)
                .then(|| self.envy_ord_sum / total.max(1) as f64),
            frac_envious_agents_cardinal: metrics
                .contains(Metric::EnvyCardinal)
                .then(|| self.envy_card_sum / total.max(1) as f64),
            mean_total_envy: metrics
                .contains(Metric::EnvyCardinal)
                .then(|| self.total_envy_sum / total.max(1) as f64),
            mean_welfare_change: (self.welfare_defined > 0)
                .then(|| self.welfare_sum / self.welfare_defined as f64),
            welfare_change_defined: self.welfare_defined,
            gain_quantiles: Quartiles::from_values(&mut self.gain_values),
            envy_fraction_quantiles_ordinal: Quartiles::from_values(&mut self.envy_ord_values),
            envy_fraction_quantiles_cardinal: Quartiles::from_values(&mut self.envy_card_values),
        }
    }
}

fn build_context(config: &ExperimentConfig, n: usize, m: usize, alpha: f64) -> Result<CellContext> {
    let model = if config.metrics.needs_model() {
        let base = UtilityModel::exponential(alpha, m);
        Some(if config.normalization {
            base.normalize()?
        } else {
            base
        })
    } else {
        None
    };
    let source = match config.mode {
        Mode::Exhaustive => ProfileSource::Exhaustive {
            neutrality: config.neutrality_reduction,
        },
        Mode::Sampled(_) => ProfileSource::Sampler(ProfileSampler::new(
            config.distribution.instantiate(m, config.seed)?,
            n,
            m,
            config.seed,
        )?),
    };
    Ok(CellContext {
        n,
        m,
        metrics: config.metrics.clone(),
        model,
        source,
    })
}

/// Number of profiles one cell evaluates, post-reduction, after the budget
/// check.
fn cell_profile_total(config: &ExperimentConfig, n: usize, m: usize) -> Result<u64> {
    match config.mode {
        Mode::Sampled(k) => Ok(k),
        Mode::Exhaustive => {
            let agents = if config.neutrality_reduction { n - 1 } else { n };
            let needed = profile_count(agents, m)?;
            if needed > config.budget && !config.force {
                return Err(Error::BudgetExceeded {
                    needed,
                    budget: config.budget,
                });
            }
            u64::try_from(needed).map_err(|_| {
                Error::Capacity(format!("({m}!)^{agents} profiles exceed the evaluation index type"))
            })
        }
    }
}

/// Runs one cell to completion and returns its record. Deterministic for
/// a given config and seed regardless of thread count.
pub fn run_cell(config: &ExperimentConfig, n: usize, m: usize, alpha: f64) -> Result<CellRecord> {
    config.validate()?;
    let pool = build_pool(config)?;
    run_cell_in_pool(config, n, m, alpha, pool.as_ref(), &mut NoSink, None)
        .map(|acc| acc.into_record(config, n, m, alpha))
}

fn build_pool(config: &ExperimentConfig) -> Result<Option<rayon::ThreadPool>> {
    match config.resolved_threads() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Some)
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}"))),
        None => Ok(None),
    }
}

trait ProfileSink {
    fn record(&mut self, profile: &Profile, metrics: &ProfileMetrics) -> Result<()>;
    fn active(&self) -> bool;
}

struct NoSink;

impl ProfileSink for NoSink {
    fn record(&mut self, _: &Profile, _: &ProfileMetrics) -> Result<()> {
        Ok(())
    }
    fn active(&self) -> bool {
        false
    }
}

/// Long-format `profile,metric,value` stream writer.
struct PerProfileWriter {
    file: fs::File,
}

impl PerProfileWriter {
    fn create(path: &Path, config: &ExperimentConfig) -> Result<PerProfileWriter> {
        let mut file = fs::File::create(path)?;
        write_metadata_header(&mut file, config)?;
        writeln!(file, "profile,metric,value")?;
        Ok(PerProfileWriter { file })
    }
}

impl ProfileSink for PerProfileWriter {
    fn record(&mut self, profile: &Profile, p: &ProfileMetrics) -> Result<()> {
        let text = profile.to_string();
        let mut row = |metric: &str, value: String| {
            writeln!(self.file, "{text},{metric},{value}").map_err(Error::from)
        };
        row("identical", (p.identical as u8).to_string())?;
        row("ps_sd_dom", (p.ps_sd_dominates as u8).to_string())?;
        row("ps_ld_dom", (p.ps_ld_dominates as u8).to_string())?;
        row("manip", (p.manipulable as u8).to_string())?;
        row("sd_manip", (p.sd_manipulable as u8).to_string())?;
        row("ld_manip", (p.ld_manipulable as u8).to_string())?;
        row("cardinal_manip", (p.cardinal_manipulable as u8).to_string())?;
        if let Some(g) = p.max_gain {
            row("max_gain", g.to_string())?;
        }
        if let Some(f) = p.fraction_envious_ordinal {
            row("frac_envious_ordinal", f.to_string())?;
        }
        if let Some(f) = p.fraction_envious_cardinal {
            row("frac_envious_cardinal", f.to_string())?;
        }
        if let Some(t) = p.total_envy {
            row("total_envy", t.to_string())?;
        }
        if let Some(w) = p.welfare_change {
            row("welfare_change", w.to_string())?;
        }
        Ok(())
    }

    fn active(&self) -> bool {
        true
    }
}

fn run_cell_in_pool(
    config: &ExperimentConfig,
    n: usize,
    m: usize,
    alpha: f64,
    pool: Option<&rayon::ThreadPool>,
    sink: &mut dyn ProfileSink,
    checkpoint: Option<(&mut Checkpoint, &Path, &str)>,
) -> Result<CellAccumulator> {
    let total = cell_profile_total(config, n, m)?;
    let ctx = build_context(config, n, m, alpha)?;

    let (mut acc, mut next) = match &checkpoint {
        Some((ckpt, _, key)) => ckpt.resume_point(key),
        None => (CellAccumulator::default(), 0),
    };
    let mut checkpoint = checkpoint;

    while next < total {
        let end = (next + CHUNK).min(total);
        let indices: Vec<u64> = (next..end).collect();
        let eval = || -> Result<Vec<ProfileMetrics>> {
            indices
                .par_iter()
                .map(|&i| evaluate_profile(&ctx.profile(i)?, &ctx))
                .collect()
        };
        let results = match pool {
            Some(pool) => pool.install(eval),
            None => eval(),
        }?;
        // merge in index order so float sums are schedule-independent
        for (offset, metrics) in results.iter().enumerate() {
            acc.add(metrics, &config.metrics);
            if sink.active() {
                sink.record(&ctx.profile(next + offset as u64)?, metrics)?;
            }
        }
        next = end;
        if let Some((ckpt, path, key)) = checkpoint.as_mut() {
            ckpt.store(key, next, &acc);
            ckpt.write(path)?;
        }
    }
    Ok(acc)
}

/// Runs every cell of the sweep, returning records in deterministic
/// (n, m, alpha) order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<CellRecord>> {
    run_sweep_with_output(config, &SweepOutput::default())
}

/// File outputs for [`run_sweep_with_output`]; all optional.
#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    /// Cell CSV path; one row appended per completed cell.
    pub cells: Option<PathBuf>,
    /// Per-profile long-format CSV path.
    pub per_profile: Option<PathBuf>,
    /// Checkpoint JSON path; presence enables resumption.
    pub checkpoint: Option<PathBuf>,
}

pub fn run_sweep_with_output(
    config: &ExperimentConfig,
    output: &SweepOutput,
) -> Result<Vec<CellRecord>> {
    config.validate()?;
    let pool = build_pool(config)?;

    let mut checkpoint = match &output.checkpoint {
        Some(path) if path.exists() => Some(Checkpoint::load(path, config)?),
        Some(_) => Some(Checkpoint::new(config)),
        None => None,
    };

    let mut cell_file = match &output.cells {
        Some(path) => {
            let mut file = fs::File::create(path)
                .map_err(|e| Error::InvalidConfig(format!("cell file {}: {e}", path.display())))?;
            write_metadata_header(&mut file, config)?;
            let sampled = matches!(config.mode, Mode::Sampled(_));
            if sampled {
                writeln!(file, "{CSV_HEADER},{CI_COLUMNS}")?;
            } else {
                writeln!(file, "{CSV_HEADER}")?;
            }
            Some(file)
        }
        None => None,
    };

    let mut per_profile: Box<dyn ProfileSink> = match &output.per_profile {
        Some(path) => Box::new(PerProfileWriter::create(path, config)?),
        None => Box::new(NoSink),
    };

    let mut records = Vec::new();
    for (n, m, alpha) in config.cells() {
        let key = cell_key(n, m, alpha);
        let ckpt = checkpoint
            .as_mut()
            .map(|c| (c, output.checkpoint.as_deref().expect("path set"), key.as_str()));
        let acc = run_cell_in_pool(config, n, m, alpha, pool.as_ref(), per_profile.as_mut(), ckpt)?;
        let record = acc.into_record(config, n, m, alpha);
        if let Some(file) = cell_file.as_mut() {
            let sampled = matches!(config.mode, Mode::Sampled(_));
            writeln!(file, "{}", record.csv_row(sampled))?;
            file.flush()?;
        }
        records.push(record);
    }
    Ok(records)
}

fn cell_key(n: usize, m: usize, alpha: f64) -> String {
    format!("n={n},m={m},alpha={alpha}")
}

fn write_metadata_header(file: &mut fs::File, config: &ExperimentConfig) -> Result<()> {
    writeln!(file, "# {VERSION}")?;
    writeln!(
        file,
        "# n={:?} m={:?} alpha={:?}",
        config.n_range, config.m_range, config.alpha_set
    )?;
    writeln!(
        file,
        "# dist={} phi={} seed={} mode={} metrics={} normalization={} neutrality_reduction={} threads={}",
        config.distribution.name(),
        fmt_opt(config.distribution.phi()),
        config.seed.0,
        config.mode.label(config.neutrality_reduction),
        config.metrics,
        config.normalization,
        config.neutrality_reduction,
        config
            .resolved_threads()
            .map(|t| t.to_string())
            .unwrap_or_else(|| "default".into()),
    )?;
    // mixture references are a per-m choice; echo them so a run can be
    // reproduced outside this binary
    if let DistributionConfig::MallowsMixture { .. } = config.distribution {
        for &m in &config.m_range {
            if let Ok(DistributionSpec::MallowsMixture(mix)) =
                config.distribution.instantiate(m, config.seed)
            {
                let refs: Vec<String> = mix
                    .components()
                    .iter()
                    .map(|c| c.reference.to_string())
                    .collect();
                let weights: Vec<String> =
                    mix.weights().iter().map(|w| w.to_string()).collect();
                writeln!(
                    file,
                    "# mixture m={m} references={} weights={}",
                    refs.join("|"),
                    weights.join("|")
                )?;
            }
        }
    }
    Ok(())
}

/// Serialized sweep progress: per-cell next profile index plus the partial
/// accumulator, so an interrupted exhaustive sweep resumes exactly where
/// it stopped.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    fingerprint: String,
    cells: BTreeMap<String, CheckpointCell>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointCell {
    next_index: u64,
    accumulator: CellAccumulator,
}

impl Checkpoint {
    fn new(config: &ExperimentConfig) -> Checkpoint {
        Checkpoint {
            version: VERSION.into(),
            fingerprint: config_fingerprint(config),
            cells: BTreeMap::new(),
        }
    }

    fn load(path: &Path, config: &ExperimentConfig) -> Result<Checkpoint> {
        let data = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&data)
            .map_err(|e| Error::InvalidConfig(format!("checkpoint {}: {e}", path.display())))?;
        if ckpt.fingerprint != config_fingerprint(config) {
            return Err(Error::InvalidConfig(
                "checkpoint was written by a different configuration".into(),
            ));
        }
        Ok(ckpt)
    }

    fn resume_point(&self, key: &str) -> (CellAccumulator, u64) {
        match self.cells.get(key) {
            Some(cell) => (cell.accumulator.clone(), cell.next_index),
            None => (CellAccumulator::default(), 0),
        }
    }

    fn store(&mut self, key: &str, next_index: u64, acc: &CellAccumulator) {
        self.cells.insert(
            key.to_string(),
            CheckpointCell {
                next_index,
                accumulator: acc.clone(),
            },
        );
    }

    fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string(self).expect("checkpoint serializes"))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn config_fingerprint(config: &ExperimentConfig) -> String {
    format!(
        "{:?}|{:?}|{:?}|{}|{:?}|{}|{}|{}|{}|{}",
        config.n_range,
        config.m_range,
        config.alpha_set,
        config.distribution.name(),
        config.distribution.phi(),
        config.seed.0,
        config.mode.label(config.neutrality_reduction),
        config.metrics,
        config.normalization,
        config.neutrality_reduction,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(metrics: Vec<Metric>) -> ExperimentConfig {
        ExperimentConfig::single_cell(3, 3, 0.0, Mode::Exhaustive, MetricSet::new(metrics))
    }

    #[test]
    fn empty_metric_set_is_rejected() {
        let config = base_config(vec![]);
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn budget_is_enforced_and_forceable() {
        let mut config = base_config(vec![Metric::Identical]);
        config.budget = 100; // 216 profiles needed
        assert!(matches!(
            run_cell(&config, 3, 3, 0.0),
            Err(Error::BudgetExceeded { needed: 216, .. })
        ));
        config.force = true;
        assert!(run_cell(&config, 3, 3, 0.0).is_ok());
    }

    #[test]
    fn exhaustive_cell_counts_are_exact() {
        let config = base_config(vec![Metric::Identical, Metric::SdDom]);
        let record = run_cell(&config, 2, 2, 0.0).unwrap();
        assert_eq!(record.profiles, 4);
        // PS = RSD everywhere at n = m = 2
        let identical = record.frac_identical.unwrap();
        assert_eq!(identical.count, 4);
        assert_eq!(record.frac_ps_sd_dom.unwrap().count, 0);
    }

    #[test]
    fn sweep_grid_size() {
        let mut config = base_config(vec![Metric::Identical]);
        config.n_range = vec![2, 3, 4];
        config.m_range = vec![2, 3, 4];
        let records = run_sweep(&config).unwrap();
        assert_eq!(records.len(), 9);
    }

    #[test]
    fn neutrality_reduction_preserves_fractions() {
        let mut config = base_config(vec![Metric::Identical, Metric::SdDom, Metric::LdDom]);
        let raw = run_cell(&config, 3, 3, 0.0).unwrap();
        config.neutrality_reduction = true;
        let reduced = run_cell(&config, 3, 3, 0.0).unwrap();
        assert_eq!(reduced.profiles, 36);
        assert_eq!(
            raw.frac_identical.unwrap().exact(),
            reduced.frac_identical.unwrap().exact()
        );
        assert_eq!(
            raw.frac_ps_sd_dom.unwrap().exact(),
            reduced.frac_ps_sd_dom.unwrap().exact()
        );
        assert_eq!(
            raw.frac_ps_ld_dom.unwrap().exact(),
            reduced.frac_ps_ld_dom.unwrap().exact()
        );
    }

    #[test]
    fn sampled_cells_are_thread_count_invariant() {
        let mut config = ExperimentConfig::single_cell(
            3,
            3,
            0.5,
            Mode::Sampled(200),
            MetricSet::new(vec![Metric::Identical, Metric::WelfareChange]),
        );
        config.seed = RngSeed(7);
        config.thread_count = Some(1);
        let single = run_cell(&config, 3, 3, 0.5).unwrap();
        config.thread_count = Some(3);
        let multi = run_cell(&config, 3, 3, 0.5).unwrap();
        assert_eq!(
            single.frac_identical.unwrap(),
            multi.frac_identical.unwrap()
        );
        assert_eq!(single.mean_welfare_change, multi.mean_welfare_change);
    }

    #[test]
    fn sampled_profiles_shared_across_alpha() {
        // the profile stream depends on (seed, index) only, so cells that
        // differ in alpha see common random numbers
        let mut config = ExperimentConfig::single_cell(
            2,
            3,
            -1.0,
            Mode::Sampled(50),
            MetricSet::new(vec![Metric::Identical]),
        );
        config.seed = RngSeed(99);
        let a = run_cell(&config, 2, 3, -1.0).unwrap();
        let b = run_cell(&config, 2, 3, 2.0).unwrap();
        assert_eq!(a.frac_identical.unwrap(), b.frac_identical.unwrap());
    }

    #[test]
    fn metric_names_round_trip() {
        for metric in Metric::ALL {
            assert_eq!(metric.name().parse::<Metric>().unwrap(), metric);
        }
        assert!("no_such".parse::<Metric>().is_err());
    }
}
