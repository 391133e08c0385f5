//! Command-line front end: `assign`, `compare`, `audit`, `sweep`, and
//! `sample` subcommands over the library.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::assignment::assignments_equal;
use crate::distributions::{ProfileSampler, RngSeed};
use crate::dominance::sd_dominates_assignment;
use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::prefs::Profile;
use crate::strategy::{
    audit_cardinal_manipulation, audit_cardinal_envy, audit_ordinal_envy,
    audit_ordinal_manipulation, EnvyAggregation, ManipulationClass, OrdinalMode,
};
use crate::utility::{welfare_change, UtilityModel};

use super::{
    DistributionConfig, ExperimentConfig, Metric, MetricSet, Mode, SweepOutput, VERSION,
    DEFAULT_PROFILE_BUDGET, DEFAULT_SAMPLES,
};

#[derive(Parser)]
#[command(
    name = "matchsim",
    version,
    about = "Exact RSD/PS matching simulator: assignments, dominance, manipulation, envy, and profile-space sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print one mechanism's exact assignment matrix for a profile.
    Assign {
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Mechanism,
        /// Semicolon-separated orders, e.g. "(acb);(abc);(bac)".
        #[arg(long)]
        profile: String,
    },
    /// Print both mechanisms' matrices, their dominance classification,
    /// and the welfare change.
    Compare {
        #[arg(long)]
        profile: String,
        /// Risk parameter for the welfare comparison.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
        /// Use raw (unnormalized) utility values.
        #[arg(long)]
        raw_utilities: bool,
    },
    /// Per-agent manipulation report plus an envy summary for a profile.
    Audit {
        #[arg(long)]
        profile: String,
        #[arg(long, value_parser = parse_mechanism, default_value = "ps")]
        mechanism: Mechanism,
        /// sd, ld, or cardinal.
        #[arg(long, default_value = "sd")]
        mode: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        raw_utilities: bool,
    },
    /// Sweep (n, m, alpha) cells exhaustively or by sampling and emit CSV.
    Sweep(SweepArgs),
    /// Emit profiles drawn from a preference distribution.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DistArgs {
    /// uniform, mallows, mallows5, or urn.
    #[arg(long, default_value = "uniform")]
    dist: String,
    /// Mallows dispersion in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
}

impl DistArgs {
    fn config(&self) -> Result<DistributionConfig> {
        match self.dist.as_str() {
            "uniform" => Ok(DistributionConfig::Uniform),
            "mallows" => Ok(DistributionConfig::Mallows { phi: self.phi }),
            "mallows5" => Ok(DistributionConfig::MallowsMixture {
                phi: self.phi,
                references: 5,
            }),
            "urn" => Ok(DistributionConfig::Urn),
            other => Err(Error::Parse(format!("unknown distribution {other:?}"))),
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Agent counts: a single value or an inclusive range "2..4".
    #[arg(long, required = true, value_parser = parse_range)]
    n: Vec<Vec<usize>>,
    /// Object counts, same syntax as --n.
    #[arg(long, required = true, value_parser = parse_range)]
    m: Vec<Vec<usize>>,
    /// Comma-separated risk parameters, e.g. "-2,-1,0,1,2".
    #[arg(long, default_value = "0", value_parser = parse_alpha_list, allow_hyphen_values = true)]
    alpha: Vec<Vec<f64>>,
    #[command(flatten)]
    dist: DistArgs,
    /// Cover all (m!)^n profiles per cell.
    #[arg(long, conflicts_with = "samples")]
    exhaustive: bool,
    /// Profiles sampled per cell.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of: identical, sd_dom, ld_dom, manip_sd,
    /// manip_ld, manip_cardinal, envy_ordinal, envy_cardinal,
    /// welfare_change. Defaults to all.
    #[arg(long, value_parser = parse_metric_list)]
    metrics: Option<MetricSet>,
    /// Cell CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-profile long-format CSV output path.
    #[arg(long)]
    per_profile: Option<PathBuf>,
    /// Checkpoint JSON path for resumable exhaustive sweeps.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads (overrides MATCHSIM_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Profile budget per exhaustive cell.
    #[arg(long, default_value_t = DEFAULT_PROFILE_BUDGET)]
    budget: u128,
    /// Run exhaustive cells beyond the budget.
    #[arg(long)]
    force: bool,
    /// Enumerate with agent 0 pinned to the canonical order.
    #[arg(long)]
    neutrality: bool,
    /// Use raw (unnormalized) utility values for cardinal metrics.
    #[arg(long)]
    no_normalize: bool,
}

fn parse_mechanism(s: &str) -> Result<Mechanism> {
    s.parse()
}

fn parse_range(s: &str) -> std::result::Result<Vec<usize>, String> {
    let parse_one = |t: &str| t.trim().parse::<usize>().map_err(|e| e.to_string());
    match s.split_once("..") {
        Some((lo, hi)) => {
            let lo = parse_one(lo)?;
            let hi = parse_one(hi)?;
            if lo > hi {
                return Err(format!("empty range {s:?}"));
            }
            Ok((lo..=hi).collect())
        }
        None => Ok(vec![parse_one(s)?]),
    }
}

fn parse_alpha_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_metric_list(s: &str) -> std::result::Result<MetricSet, String> {
    let metrics = s
        .split(',')
        .map(|t| t.trim().parse::<Metric>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MetricSet::new(metrics))
}

/// Entry point shared by the binary and the CLI tests: 0 on success, 1 on
/// runtime errors, 2 on usage errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Assign { mechanism, profile } => {
            let profile = Profile::parse(&profile)?;
            let assignment = mechanism.assign(&profile)?;
            print!("{}", assignment.to_csv());
            Ok(())
        }
        Command::Compare {
            profile,
            alpha,
            raw_utilities,
        } => compare(&profile, alpha, raw_utilities),
        Command::Audit {
            profile,
            mechanism,
            mode,
            alpha,
            raw_utilities,
        } => audit(&profile, mechanism, &mode, alpha, raw_utilities),
        Command::Sweep(args) => sweep(args),
        Command::Sample {
            n,
            m,
            dist,
            samples,
            seed,
            out,
        } => sample(n, m, &dist, samples, seed, out),
    }
}

fn build_model(alpha: f64, m: usize, raw: bool) -> Result<UtilityModel> {
    let model = UtilityModel::exponential(alpha, m);
    if raw {
        Ok(model)
    } else {
        model.normalize()
    }
}

fn compare(profile: &str, alpha: f64, raw: bool) -> Result<()> {
    let profile = Profile::parse(profile)?;
    let ps_a = Mechanism::Ps.assign(&profile)?;
    let rsd_a = Mechanism::Rsd.assign(&profile)?;
    println!("profile: {profile}");
    println!("\nassignment under PS:");
    print!("{}", ps_a.to_csv());
    println!("\nassignment under RSD:");
    print!("{}", rsd_a.to_csv());

    let classification = if assignments_equal(&ps_a, &rsd_a)? {
        "identical"
    } else if sd_dominates_assignment(&profile, &ps_a, &rsd_a)? {
        "ps sd-dominates rsd"
    } else if sd_dominates_assignment(&profile, &rsd_a, &ps_a)? {
        "rsd sd-dominates ps"
    } else {
        "incomparable"
    };
    println!("\nstochastic dominance: {classification}");

    use crate::dominance::{ld_compare_row, sd_compare_row, RowComparison};
    for i in 0..profile.num_agents() {
        let agent = crate::prefs::AgentId(i);
        let order = profile.order(agent);
        let sd = sd_compare_row(order, ps_a.row(agent), rsd_a.row(agent))?;
        let ld = ld_compare_row(order, ps_a.row(agent), rsd_a.row(agent))?;
        let describe = |c: RowComparison| match c {
            RowComparison::Dominates => "prefers PS",
            RowComparison::Dominated => "prefers RSD",
            RowComparison::Equal => "indifferent",
            RowComparison::Incomparable => "incomparable",
        };
        println!(
            "agent {}: sd {}, ld {}",
            agent,
            describe(sd),
            describe(ld)
        );
    }

    match build_model(alpha, profile.num_objects(), raw) {
        Ok(model) => match welfare_change(&profile, &ps_a, &rsd_a, &model)? {
            Some(wc) => println!("welfare change (alpha = {alpha}): {wc}"),
            None => println!("welfare change (alpha = {alpha}): undefined (zero RSD welfare)"),
        },
        Err(Error::DegenerateModel(_)) => {
            println!("welfare change (alpha = {alpha}): undefined (degenerate utility model)")
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn audit(profile: &str, mechanism: Mechanism, mode: &str, alpha: f64, raw: bool) -> Result<()> {
    let profile = Profile::parse(profile)?;
    println!("profile: {profile}  mechanism: {}", mechanism.name());
    let mut profile_manipulable = false;
    match mode {
        "sd" | "ld" => {
            let ordinal_mode = if mode == "sd" {
                OrdinalMode::Sd
            } else {
                OrdinalMode::Ld
            };
            for i in 0..profile.num_agents() {
                let agent = crate::prefs::AgentId(i);
                let report = audit_ordinal_manipulation(&profile, mechanism, agent, ordinal_mode)?;
                profile_manipulable |=
                    report.classification != ManipulationClass::Strategyproof;
                match report.best_misreport {
                    Some(misreport) => println!(
                        "agent {agent}: {} via misreport {misreport}",
                        describe_class(report.classification)
                    ),
                    None => println!("agent {agent}: strategyproof"),
                }
            }
        }
        "cardinal" => {
            let model = build_model(alpha, profile.num_objects(), raw)?;
            let audit = audit_cardinal_manipulation(&profile, mechanism, &model)?;
            for report in &audit.reports {
                match (&report.best_misreport, report.gain) {
                    (Some(misreport), Some(gain)) => println!(
                        "agent {}: gain {gain:.6} via misreport {misreport}",
                        report.agent
                    ),
                    (None, Some(_)) => println!("agent {}: no gain", report.agent),
                    _ => println!("agent {}: undefined (zero truthful utility)", report.agent),
                }
            }
            profile_manipulable = audit.manipulable;
            if let Some(gain) = audit.max_gain {
                println!("profile max gain: {gain:.6}");
            }
        }
        other => return Err(Error::Parse(format!("unknown audit mode {other:?}"))),
    }
    println!(
        "profile classification: {}",
        if profile_manipulable {
            "manipulable"
        } else {
            "strategyproof"
        }
    );

    let assignment = mechanism.assign(&profile)?;
    let ordinal_envy = audit_ordinal_envy(&profile, &assignment)?;
    println!(
        "ordinal envy: {:.4} of agents envious",
        ordinal_envy.fraction_envious
    );
    if mode == "cardinal" {
        let model = build_model(alpha, profile.num_objects(), raw)?;
        let envy = audit_cardinal_envy(&profile, &assignment, &model, EnvyAggregation::WorstPair)?;
        println!(
            "cardinal envy: {:.4} of agents envious, total envy {:.6}",
            envy.fraction_envious,
            envy.total_envy.unwrap_or(0.0)
        );
    }
    Ok(())
}

fn describe_class(class: ManipulationClass) -> &'static str {
    match class {
        ManipulationClass::Strategyproof => "strategyproof",
        ManipulationClass::WeaklyManipulable => "weakly manipulable",
        ManipulationClass::StrictlyManipulable => "strictly manipulable",
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mode = if args.exhaustive {
        Mode::Exhaustive
    } else {
        Mode::Sampled(args.samples.unwrap_or(DEFAULT_SAMPLES))
    };
    let config = ExperimentConfig {
        n_range: args.n.into_iter().flatten().collect(),
        m_range: args.m.into_iter().flatten().collect(),
        alpha_set: args.alpha.into_iter().flatten().collect(),
        distribution: args.dist.config()?,
        mode,
        seed: RngSeed(args.seed),
        metrics: args.metrics.unwrap_or_else(MetricSet::all),
        normalization: !args.no_normalize,
        thread_count: args.threads,
        budget: args.budget,
        force: args.force,
        neutrality_reduction: args.neutrality,
    };
    let output = SweepOutput {
        cells: args.out.clone(),
        per_profile: args.per_profile,
        checkpoint: args.checkpoint,
    };
    let records = super::run_sweep_with_output(&config, &output)?;
    match &args.out {
        Some(path) => eprintln!("wrote {} cell rows to {}", records.len(), path.display()),
        None => {
            println!("{}", super::CSV_HEADER);
            let sampled = matches!(config.mode, Mode::Sampled(_));
            for record in &records {
                let row = record.csv_row(sampled);
                let pinned: Vec<&str> = row.split(',').take(18).collect();
                println!("{}", pinned.join(","));
            }
        }
    }
    Ok(())
}

fn sample(
    n: usize,
    m: usize,
    dist: &DistArgs,
    samples: u64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = dist.config()?.instantiate(m, RngSeed(seed))?;
    let sampler = ProfileSampler::new(spec, n, m, RngSeed(seed))?;
    let mut lines = Vec::with_capacity(samples as usize + 2);
    lines.push(format!("# {VERSION}"));
    lines.push(format!(
        "# sample n={n} m={m} dist={} phi={} seed={seed} samples={samples}",
        dist.dist,
        sampler
            .spec()
            .phi()
            .map(|p| p.to_string())
            .unwrap_or_default(),
    ));
    for i in 0..samples {
        lines.push(sampler.profile(i).to_string());
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(path) => {
            let mut file = fs::File::create(path)?;
            file.write_all(text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
