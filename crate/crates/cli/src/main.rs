//! `cityscale`: run the analysis stages from the command line.
//!
//! Exit status is 0 on success, 2 for bad inputs or configuration and 1
//! when an internal invariant fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cityscale::corpus::{write_corpus, CorpusPaths, ProbSource};
use cityscale::pipeline::{cmd_full_pipeline, run_stage, PlotMode, RunConfig, ShiftSelection, Stage, Trials};
use cityscale::report::Format;
use cityscale::stats::AbundanceWeighting;
use cityscale::synthetic::{planted_corpus, PlantedConfig};
use cityscale::Error;

#[derive(Parser, Debug)]
#[command(
    name = "cityscale",
    version,
    about = "Automation impact, specialization and scaling across cities"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Employment CSV: city_id,city_name,occ_code,workers
    #[arg(long, global = true)]
    employment: Option<PathBuf>,
    /// Skill CSV: occ_code,skill_id,skill_name,importance
    #[arg(long, global = true)]
    skills: Option<PathBuf>,
    /// Probability CSV: occ_code,p_auto
    #[arg(long, global = true)]
    probs: Option<PathBuf>,
    /// Covariate CSV: city_id,total_employment,median_income,pct_bachelor,gdp_per_capita
    #[arg(long, global = true)]
    covariates: Option<PathBuf>,
    /// Precomputed job clusters (occ_code,cluster_id)
    #[arg(long, global = true)]
    clusters: Option<PathBuf>,
    /// Precomputed skill types (skill_id,cluster_id)
    #[arg(long, global = true)]
    skill_groups: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// csv or json
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    /// svg or none
    #[arg(long, global = true, default_value = "svg")]
    plot: String,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// frey_osborne, oecd or custom
    #[arg(long, global = true, default_value = "frey_osborne")]
    prob_source: String,
    #[arg(long, global = true, default_value_t = 5)]
    k_jobs: usize,
    #[arg(long, global = true, default_value_t = 10)]
    k_skills: usize,
    /// Trials for every Monte-Carlo experiment (overrides the per-experiment defaults)
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and join the inputs; report coverage
    LoadCheck,
    /// Per-city impact, entropies and Theil index with the size trend
    Impact,
    /// Normalized skill entropy of every occupation
    Entropy,
    /// K-means job clusters, centroids and a 2-D PCA projection
    ClusterJobs,
    /// K-means skill types and their z-scores across job clusters
    ClusterSkills,
    /// Scaling exponent of each job cluster with bootstrap intervals
    Scaling {
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        /// Also fit every occupation separately
        #[arg(long)]
        per_occupation: bool,
    },
    /// Cluster exponents under occupation subsampling
    Stability {
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Decompose the impact difference between two cities by occupation
    Shift {
        /// City m (compared)
        city_m: Option<String>,
        /// City n (anchor)
        city_n: Option<String>,
        /// Pool the K largest cities as n
        #[arg(long)]
        largest: Option<usize>,
        /// Pool the K smallest cities as m
        #[arg(long)]
        smallest: Option<usize>,
        /// Bars per quadrant in the chart
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Regression models 1-8 and residual ranking
    Regress,
    /// Repeated half-split out-of-sample R²
    ValidateSplit {
        #[arg(long, value_delimiter = ',', default_value = "1,8")]
        models: Vec<String>,
    },
    /// Correlations of skill-type abundance with impact, size and skill entropy
    Correlations {
        /// share or workers
        #[arg(long, default_value = "share")]
        weighting: String,
    },
    /// Skill-type abundance binned by impact and by skill entropy
    Profiles {
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Correlation under uniform noise on the probabilities
    RobustnessNoise {
        #[arg(long, value_delimiter = ',')]
        errors: Option<Vec<f64>>,
    },
    /// Correlation under random removal of occupations
    RobustnessRemoval {
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Every stage in order, plus manifest.json
    Pipeline,
    /// Write a planted synthetic corpus as input CSVs into --out
    GenerateSynthetic {
        #[arg(long, default_value_t = 120)]
        cities: usize,
    },
}

fn build_config(g: &Global) -> Result<RunConfig, Error> {
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required")))
    };
    let inputs = CorpusPaths {
        employment: need(&g.employment, "employment")?,
        skills: need(&g.skills, "skills")?,
        probs: need(&g.probs, "probs")?,
        covariates: g.covariates.clone(),
    };
    let mut cfg = RunConfig::new(inputs, &g.out);
    cfg.clusters = g.clusters.clone();
    cfg.skill_groups = g.skill_groups.clone();
    cfg.format = g.format.parse::<Format>()?;
    cfg.plot = g.plot.parse::<PlotMode>()?;
    cfg.seed = g.seed;
    cfg.prob_source = g.prob_source.parse::<ProbSource>()?;
    cfg.k_jobs = g.k_jobs;
    cfg.k_skills = g.k_skills;
    if let Some(n) = g.trials {
        cfg.trials = Trials::uniform(n);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Error> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("--threads: {e}")))?;
    }
    if let Command::GenerateSynthetic { cities } = cli.command {
        let cfg = PlantedConfig {
            cities,
            ..PlantedConfig::default()
        };
        let planted = planted_corpus::<f64>(&cfg, cli.global.seed)?;
        let paths = write_corpus(&planted.corpus, &cli.global.out)?;
        let mut files = vec![paths.employment, paths.skills, paths.probs];
        files.extend(paths.covariates);
        return Ok(files);
    }

    let mut cfg = build_config(&cli.global)?;
    let stage = match cli.command {
        Command::LoadCheck => Stage::LoadCheck,
        Command::Impact => Stage::Impact,
        Command::Entropy => Stage::Entropy,
        Command::ClusterJobs => Stage::ClusterJobs,
        Command::ClusterSkills => Stage::ClusterSkills,
        Command::Scaling {
            bootstrap,
            per_occupation,
        } => {
            cfg.bootstrap_resamples = bootstrap;
            cfg.occupation_scaling = per_occupation;
            Stage::Scaling
        }
        Command::Stability { rates } => {
            if let Some(r) = rates {
                cfg.stability_rates = r;
            }
            Stage::Stability
        }
        Command::Shift {
            city_m,
            city_n,
            largest,
            smallest,
            top,
        } => {
            cfg.shift_top = top;
            cfg.shift = match (city_m, city_n) {
                (Some(m), Some(n)) if largest.is_none() && smallest.is_none() => {
                    ShiftSelection::Cities { city_m: m, city_n: n }
                }
                (None, None) => ShiftSelection::Extremes { smallest, largest },
                _ => {
                    return Err(Error::InvalidConfig(
                        "give either two cities or --largest/--smallest".into(),
                    ))
                }
            };
            Stage::Shift
        }
        Command::Regress => Stage::Regress,
        Command::ValidateSplit { models } => {
            cfg.split_models = models;
            Stage::ValidateSplit
        }
        Command::Correlations { weighting } => {
            cfg.weighting = weighting.parse::<AbundanceWeighting>()?;
            Stage::Correlations
        }
        Command::Profiles { bins } => {
            cfg.bins = bins;
            Stage::Profiles
        }
        Command::RobustnessNoise { errors } => {
            if let Some(e) = errors {
                cfg.noise_errors = e;
            }
            Stage::RobustnessNoise
        }
        Command::RobustnessRemoval { fractions } => {
            if let Some(f) = fractions {
                cfg.removal_fractions = f;
            }
            Stage::RobustnessRemoval
        }
        Command::Pipeline => {
            let run = cmd_full_pipeline(&cfg)?;
            let mut files = run.files;
            files.push(run.manifest_path);
            return Ok(files);
        }
        Command::GenerateSynthetic { .. } => unreachable!("handled above"),
    };
    run_stage(stage, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
