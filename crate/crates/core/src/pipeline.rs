//! Stage runners behind the CLI. Each stage loads the inputs named in a
//! [`RunConfig`], runs one analysis on `f64` data and writes its reports
//! under the output directory. [`cmd_full_pipeline`] runs every stage in
//! dependency order and finishes with a manifest of SHA-256 file hashes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::clustering::{
    job_clusters, job_feature_matrix, pca_project, skill_clusters, skill_zscore_profile, KMeansOptions,
    DEFAULT_JOB_CLUSTERS, DEFAULT_SKILL_CLUSTERS,
};
use crate::corpus::{load_corpus, Corpus, CorpusPaths, LoadOptions, ProbSource};
use crate::error::{Error, Result};
use crate::grouping::{group_order, Grouping};
use crate::metrics::{city_metrics_table, SkillProfiles};
use crate::report::{
    box_chart_svg, impact_scatter_svg, loglog_svg, pca_svg, shift_bars_svg, write_json, write_text, BoxStats, Cell,
    Format, LogLogSeriesSvg, ShiftBar, Table, QUADRANTS,
};
use crate::robustness::{noise_experiment, removal_experiment, Experiment, RobustnessRun, DEFAULT_ROBUSTNESS_TRIALS};
use crate::scalar::{compensated_sum, percentile};
use crate::scaling::{
    bootstrap_power_law, city_sizes, cluster_counts, fit_power_law, loglog_plot_points, occupation_scaling,
    scaling_stability, DEFAULT_BOOTSTRAP_RESAMPLES,
};
use crate::shift::{occupation_shift, rank_shift_records, Direction, Resilience, ShiftReport};
use crate::stats::{
    regression_suite, residual_ranking, size_impact_trend, skill_correlation_table, skill_group_profile,
    split_validation, AbundanceWeighting, ProfileTarget, DEFAULT_BINS, DEFAULT_SPLIT_TRIALS, REGRESSION_VARIABLES,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotMode {
    None,
    #[default]
    Svg,
}

impl FromStr for PlotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "svg" => Ok(Self::Svg),
            other => Err(Error::InvalidConfig(format!("unknown plot mode `{other}`"))),
        }
    }
}

/// Which two cities the occupation shift compares.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftSelection {
    /// δ_{m,n} between two named cities; E_n is the anchor.
    Cities { city_m: String, city_n: String },
    /// m pools the `smallest` smallest cities and n the `largest` largest.
    /// `None` means min(50, half the cities).
    Extremes {
        smallest: Option<usize>,
        largest: Option<usize>,
    },
}

impl Default for ShiftSelection {
    fn default() -> Self {
        Self::Extremes {
            smallest: None,
            largest: None,
        }
    }
}

/// Trial counts per experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Trials {
    pub stability: usize,
    pub split: usize,
    pub robustness: usize,
}

impl Default for Trials {
    fn default() -> Self {
        Self {
            stability: 100,
            split: DEFAULT_SPLIT_TRIALS,
            robustness: DEFAULT_ROBUSTNESS_TRIALS,
        }
    }
}

impl Trials {
    /// The same count for every experiment.
    pub fn uniform(n: usize) -> Self {
        Self {
            stability: n,
            split: n,
            robustness: n,
        }
    }
}

/// Everything a stage needs. File locations are left out of the serialized
/// form so a manifest does not depend on where the run happened.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    #[serde(skip)]
    pub inputs: CorpusPaths,
    /// Optional precomputed job clusters (`occ_code,cluster_id`).
    #[serde(skip)]
    pub clusters: Option<PathBuf>,
    /// Optional precomputed skill types (`skill_id,cluster_id`).
    #[serde(skip)]
    pub skill_groups: Option<PathBuf>,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub prob_source: ProbSource,
    pub k_jobs: usize,
    pub k_skills: usize,
    pub seed: u64,
    pub trials: Trials,
    pub format: Format,
    pub plot: PlotMode,
    pub kmeans: KMeansOptions,
    pub bootstrap_resamples: usize,
    pub bins: usize,
    pub noise_errors: Vec<f64>,
    pub removal_fractions: Vec<f64>,
    pub stability_rates: Vec<f64>,
    pub shift: ShiftSelection,
    /// Bars per quadrant in the shift chart.
    pub shift_top: usize,
    pub weighting: AbundanceWeighting,
    /// Also fit every occupation on its own in the scaling stage.
    pub occupation_scaling: bool,
    pub split_models: Vec<String>,
}

impl RunConfig {
    pub fn new(inputs: CorpusPaths, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            inputs,
            clusters: None,
            skill_groups: None,
            out_dir: out_dir.into(),
            prob_source: ProbSource::FreyOsborne,
            k_jobs: DEFAULT_JOB_CLUSTERS,
            k_skills: DEFAULT_SKILL_CLUSTERS,
            seed: 42,
            trials: Trials::default(),
            format: Format::Csv,
            plot: PlotMode::Svg,
            kmeans: KMeansOptions::default(),
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            bins: DEFAULT_BINS,
            noise_errors: vec![0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5],
            removal_fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            stability_rates: (1..=10).map(|i| i as f64 / 10.0).collect(),
            shift: ShiftSelection::default(),
            shift_top: 10,
            weighting: AbundanceWeighting::Share,
            occupation_scaling: false,
            split_models: vec!["1".into(), "8".into()],
        }
    }

    fn load(&self) -> Result<Corpus<f64>> {
        load_corpus(
            &self.inputs,
            &LoadOptions {
                prob_source: self.prob_source,
            },
        )
    }

    fn job_grouping(&self, corpus: &Corpus<f64>) -> Result<Grouping> {
        match &self.clusters {
            Some(p) => Grouping::from_csv(p),
            None => Ok(job_clusters(corpus, self.k_jobs, self.seed, &self.kmeans)?.grouping()),
        }
    }

    fn skill_grouping(&self, corpus: &Corpus<f64>) -> Result<Grouping> {
        match &self.skill_groups {
            Some(p) => Grouping::from_csv(p),
            None => Ok(skill_clusters(corpus, self.k_skills, self.seed, &self.kmeans)?
                .assignment
                .grouping()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    LoadCheck,
    Impact,
    Entropy,
    ClusterJobs,
    ClusterSkills,
    Scaling,
    Stability,
    Shift,
    Regress,
    ValidateSplit,
    Correlations,
    Profiles,
    RobustnessNoise,
    RobustnessRemoval,
}

impl Stage {
    /// Pipeline order.
    pub const ALL: [Stage; 14] = [
        Stage::LoadCheck,
        Stage::Impact,
        Stage::Entropy,
        Stage::ClusterJobs,
        Stage::ClusterSkills,
        Stage::Scaling,
        Stage::Stability,
        Stage::Shift,
        Stage::Regress,
        Stage::ValidateSplit,
        Stage::Correlations,
        Stage::Profiles,
        Stage::RobustnessNoise,
        Stage::RobustnessRemoval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::LoadCheck => "load-check",
            Stage::Impact => "impact",
            Stage::Entropy => "entropy",
            Stage::ClusterJobs => "cluster-jobs",
            Stage::ClusterSkills => "cluster-skills",
            Stage::Scaling => "scaling",
            Stage::Stability => "stability",
            Stage::Shift => "shift",
            Stage::Regress => "regress",
            Stage::ValidateSplit => "validate-split",
            Stage::Correlations => "correlations",
            Stage::Profiles => "profiles",
            Stage::RobustnessNoise => "robustness-noise",
            Stage::RobustnessRemoval => "robustness-removal",
        }
    }

    fn needs_covariates(self) -> bool {
        matches!(self, Stage::Regress | Stage::ValidateSplit)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

/// Collects written files for one stage.
struct Out<'a> {
    config: &'a RunConfig,
    files: Vec<PathBuf>,
}

impl<'a> Out<'a> {
    fn new(config: &'a RunConfig) -> Result<Self> {
        fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
        Ok(Self {
            config,
            files: Vec::new(),
        })
    }

    fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let p = table.write(&self.config.out_dir, stem, self.config.format)?;
        self.files.push(p);
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let p = self.config.out_dir.join(name);
        write_json(&p, value)?;
        self.files.push(p);
        Ok(())
    }

    fn svg(&mut self, name: &str, render: impl FnOnce() -> String) -> Result<()> {
        if self.config.plot == PlotMode::Svg {
            let p = self.config.out_dir.join(name);
            write_text(&p, &render())?;
            self.files.push(p);
        }
        Ok(())
    }

    fn done(self) -> Vec<PathBuf> {
        self.files
    }
}

/// Runs one stage and tags any failure with its name.
pub fn run_stage(stage: Stage, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let run = match stage {
        Stage::LoadCheck => cmd_load_check(config),
        Stage::Impact => cmd_impact(config),
        Stage::Entropy => cmd_entropy(config),
        Stage::ClusterJobs => cmd_cluster_jobs(config),
        Stage::ClusterSkills => cmd_cluster_skills(config),
        Stage::Scaling => cmd_scaling(config),
        Stage::Stability => cmd_stability(config),
        Stage::Shift => cmd_shift(config),
        Stage::Regress => cmd_regress(config),
        Stage::ValidateSplit => cmd_validate_split(config),
        Stage::Correlations => cmd_correlations(config),
        Stage::Profiles => cmd_profiles(config),
        Stage::RobustnessNoise => cmd_robustness(config, Experiment::Noise),
        Stage::RobustnessRemoval => cmd_robustness(config, Experiment::Removal),
    };
    run.map_err(|e| e.in_stage(stage.name()))
}

#[derive(Serialize)]
struct LoadSummary<'a> {
    cities: usize,
    occupations: usize,
    skills: usize,
    missing_probs: &'a [String],
    skill_uncovered: &'a [String],
    dropped_cities: &'a [String],
    skill_only_occupations: &'a [String],
    prob_only_occupations: &'a [String],
    unknown_covariate_cities: &'a [String],
}

pub fn cmd_load_check(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let cov = corpus.coverage();
    let mut t = Table::new(&["city_id", "prob_coverage", "skill_coverage"]);
    for c in &cov.cities {
        t.push(vec![
            (&c.city_id).into(),
            c.prob_coverage.into(),
            c.skill_coverage.into(),
        ]);
    }
    out.table("coverage", &t)?;
    out.json(
        "load_check.json",
        &LoadSummary {
            cities: corpus.cities().len(),
            occupations: corpus.occupations().len(),
            skills: corpus.skills().len(),
            missing_probs: &cov.missing_probs,
            skill_uncovered: &cov.skill_uncovered,
            dropped_cities: &cov.dropped_cities,
            skill_only_occupations: &cov.skill_only_occupations,
            prob_only_occupations: &cov.prob_only_occupations,
            unknown_covariate_cities: &cov.unknown_covariate_cities,
        },
    )?;
    Ok(out.done())
}

#[derive(Serialize)]
struct TrendSummary {
    r: f64,
    p: f64,
    n: usize,
    slope: f64,
    intercept: f64,
}

pub fn cmd_impact(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let metrics = city_metrics_table(&corpus, config.prob_source)?;
    let mut t = Table::new(&[
        "city_id",
        "size",
        "E",
        "H_job",
        "H_skill",
        "T",
        "one_minus_T",
        "coverage",
    ]);
    for m in &metrics {
        t.push(vec![
            (&m.city_id).into(),
            m.size.into(),
            m.e.into(),
            m.h_job.into(),
            m.h_skill.into(),
            m.t.into(),
            m.one_minus_t.into(),
            m.coverage.into(),
        ]);
    }
    out.table("metrics", &t)?;
    let trend = size_impact_trend(&metrics)?;
    out.json(
        "impact_trend.json",
        &TrendSummary {
            r: trend.correlation.r,
            p: trend.correlation.p,
            n: trend.correlation.n,
            slope: trend.slope,
            intercept: trend.intercept,
        },
    )?;
    out.svg("impact.svg", || {
        let pts: Vec<(f64, f64)> = metrics.iter().map(|m| (m.size.log10(), m.e)).collect();
        impact_scatter_svg(&pts, trend.slope, trend.intercept)
    })?;
    Ok(out.done())
}

pub fn cmd_entropy(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let profiles = SkillProfiles::new(&corpus);
    let mut t = Table::new(&["occ_code", "H_j", "skills"]);
    for (o, code) in corpus.occupations().iter().enumerate() {
        if let Some(h) = profiles.job_entropy(o) {
            t.push(vec![code.into(), h.into(), corpus.importance(o).len().into()]);
        }
    }
    out.table("job_entropy", &t)?;
    Ok(out.done())
}

#[derive(Serialize)]
struct ClusterSummary<'a> {
    k: usize,
    seed: u64,
    sizes: Vec<usize>,
    inertia: f64,
    initial_inertia: f64,
    inertia_history: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    explained_variance: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_variance: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degenerate_skill_types: Option<&'a [String]>,
}

pub fn cmd_cluster_jobs(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let features = job_feature_matrix(&corpus, None);
    let a = crate::clustering::kmeans(&features, config.k_jobs, config.seed, &config.kmeans)?;

    let mut t = Table::new(&["occ_code", "cluster_id"]);
    for (id, &l) in a.row_ids.iter().zip(&a.labels) {
        t.push(vec![id.into(), l.into()]);
    }
    out.table("job_clusters", &t)?;

    let mut c = Table::new(&["cluster_id", "skill_id", "importance"]);
    for k in 0..a.k {
        for (j, s) in features.col_ids.iter().enumerate() {
            c.push(vec![k.into(), s.into(), a.centroids[(k, j)].into()]);
        }
    }
    out.table("job_centroids", &c)?;

    let dims = 2.min(features.values.rows()).min(features.values.cols());
    let pca = pca_project(&features.values, dims)?;
    let mut p = Table::new(&["occ_code", "pc1", "pc2", "cluster_id"]);
    let coord = |i: usize, d: usize| if d < dims { pca.coordinates[(i, d)] } else { 0.0 };
    for (i, id) in a.row_ids.iter().enumerate() {
        p.push(vec![
            id.into(),
            coord(i, 0).into(),
            coord(i, 1).into(),
            a.labels[i].into(),
        ]);
    }
    out.table("pca", &p)?;

    out.json(
        "job_clusters_summary.json",
        &ClusterSummary {
            k: a.k,
            seed: a.seed,
            sizes: a.sizes(),
            inertia: a.inertia,
            initial_inertia: a.initial_inertia,
            inertia_history: &a.inertia_history,
            explained_variance: Some(pca.explained_variance.clone()),
            zero_variance: None,
            degenerate_skill_types: None,
        },
    )?;
    out.svg("pca.svg", || {
        let pts: Vec<(f64, f64, usize)> = (0..a.row_ids.len())
            .map(|i| (coord(i, 0), coord(i, 1), a.labels[i]))
            .collect();
        let names: Vec<String> = (0..a.k).map(|k| k.to_string()).collect();
        pca_svg(&pts, &names)
    })?;
    Ok(out.done())
}

pub fn cmd_cluster_skills(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let sc = skill_clusters(&corpus, config.k_skills, config.seed, &config.kmeans)?;
    let a = &sc.assignment;
    let names: std::collections::BTreeMap<&str, &str> = corpus
        .skills()
        .iter()
        .zip(corpus.skill_names())
        .map(|(i, n)| (i.as_str(), n.as_str()))
        .collect();
    let mut t = Table::new(&["skill_id", "skill_name", "cluster_id"]);
    for (id, &l) in a.row_ids.iter().zip(&a.labels) {
        t.push(vec![
            id.into(),
            names.get(id.as_str()).copied().unwrap_or("").into(),
            l.into(),
        ]);
    }
    out.table("skill_clusters", &t)?;

    let jobs = config.job_grouping(&corpus)?;
    let profile = skill_zscore_profile(&corpus, &jobs, &a.grouping())?;
    let mut z = Table::new(&["skill_type", "job_cluster", "total_importance", "z"]);
    for (i, st) in profile.skill_types.iter().enumerate() {
        for (j, jc) in profile.job_clusters.iter().enumerate() {
            z.push(vec![
                st.into(),
                jc.into(),
                profile.totals[(i, j)].into(),
                profile.z[(i, j)].into(),
            ]);
        }
    }
    out.table("skill_zscores", &z)?;
    out.json(
        "skill_clusters_summary.json",
        &ClusterSummary {
            k: a.k,
            seed: a.seed,
            sizes: a.sizes(),
            inertia: a.inertia,
            initial_inertia: a.initial_inertia,
            inertia_history: &a.inertia_history,
            explained_variance: None,
            zero_variance: Some(&sc.zero_variance),
            degenerate_skill_types: Some(&profile.degenerate),
        },
    )?;
    Ok(out.done())
}

pub fn cmd_scaling(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let grouping = config.job_grouping(&corpus)?;
    let (_, sizes) = city_sizes(&corpus);
    let (ids, counts) = cluster_counts(&corpus, &grouping);
    let mut t = Table::new(&[
        "cluster_id",
        "beta",
        "intercept",
        "stderr_beta",
        "r2",
        "n",
        "dropped_zero",
        "boot_stderr",
        "boot_ci_lo",
        "boot_ci_hi",
        "boot_degenerate",
    ]);
    for (id, c) in ids.iter().zip(&counts) {
        let fit = fit_power_law(id, &sizes, c)?;
        let boot = bootstrap_power_law(&sizes, c, config.bootstrap_resamples, config.seed)?;
        t.push(vec![
            id.into(),
            fit.beta.into(),
            fit.intercept.into(),
            fit.stderr_beta.into(),
            fit.r2.into(),
            fit.n.into(),
            fit.dropped_zero.into(),
            boot.stderr.into(),
            boot.ci_lo.into(),
            boot.ci_hi.into(),
            boot.degenerate.into(),
        ]);
    }
    out.table("scaling", &t)?;

    if config.occupation_scaling {
        let (fits, skipped) = occupation_scaling(&corpus)?;
        let mut o = Table::new(&["occ_code", "beta", "intercept", "stderr_beta", "r2", "n"]);
        for f in &fits {
            o.push(vec![
                (&f.series_id).into(),
                f.beta.into(),
                f.intercept.into(),
                f.stderr_beta.into(),
                f.r2.into(),
                f.n.into(),
            ]);
        }
        for s in &skipped {
            o.push(vec![
                s.into(),
                Cell::Missing,
                Cell::Missing,
                Cell::Missing,
                Cell::Missing,
                Cell::Missing,
            ]);
        }
        out.table("occupation_scaling", &o)?;
    }

    if config.plot == PlotMode::Svg {
        let plot = loglog_plot_points(&corpus, &grouping, true)?;
        let series: Vec<LogLogSeriesSvg<'_>> = plot
            .series
            .iter()
            .map(|s| LogLogSeriesSvg {
                name: &s.cluster_id,
                points: s.points.iter().map(|p| (p.log_size, p.log_count)).collect(),
                slope: s.fit.beta,
                intercept: 0.0,
            })
            .collect();
        out.svg("loglog.svg", || loglog_svg(&series, plot.reference))?;
    }
    Ok(out.done())
}

fn box_stats(label: String, values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    Some(BoxStats {
        label,
        p025: percentile(&s, 0.025),
        q1: percentile(&s, 0.25),
        median: percentile(&s, 0.5),
        q3: percentile(&s, 0.75),
        p975: percentile(&s, 0.975),
    })
}

#[derive(Serialize)]
struct RankSummary {
    rate: f64,
    rank: usize,
    mean: f64,
    p025: f64,
    p975: f64,
}

pub fn cmd_stability(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let results = scaling_stability(
        &corpus,
        config.k_jobs,
        &config.stability_rates,
        config.trials.stability,
        config.seed,
        &config.kmeans,
    )?;
    let mut t = Table::new(&["rate", "trial", "rank", "beta"]);
    let mut summary = Vec::new();
    for r in &results {
        for (trial, clusters) in r.trial_clusters.iter().enumerate() {
            for (rank, c) in clusters.iter().enumerate() {
                t.push(vec![
                    r.subsample_rate.into(),
                    trial.into(),
                    (rank + 1).into(),
                    c.beta.into(),
                ]);
            }
        }
        for (rank, betas) in r.beta_by_rank.iter().enumerate() {
            if let Some(b) = box_stats(String::new(), betas) {
                summary.push(RankSummary {
                    rate: r.subsample_rate,
                    rank: rank + 1,
                    mean: compensated_sum(betas.iter().copied()) / betas.len() as f64,
                    p025: b.p025,
                    p975: b.p975,
                });
            }
        }
    }
    out.table("stability", &t)?;
    out.json("stability_summary.json", &summary)?;
    out.svg("stability.svg", || {
        let boxes: Vec<BoxStats> = results
            .iter()
            .filter_map(|r| box_stats(format!("{}%", (r.subsample_rate * 100.0).round()), &r.beta_by_rank[0]))
            .collect();
        box_chart_svg(
            "Top cluster β under subsampling",
            "occupations sampled",
            "β",
            &boxes,
            Some(1.0),
        )
    })?;
    Ok(out.done())
}

#[derive(Serialize)]
struct GroupTotal {
    cluster_id: String,
    total: f64,
}

#[derive(Serialize)]
struct QuadrantSummary {
    quadrant: &'static str,
    total: f64,
    top: Vec<String>,
}

#[derive(Serialize)]
struct ShiftSummary {
    city_m: String,
    city_n: String,
    e_m: f64,
    e_n: f64,
    degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    members_m: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    members_n: Option<Vec<String>>,
    resilient_total: Option<f64>,
    susceptible_total: Option<f64>,
    quadrants: Vec<QuadrantSummary>,
    group_totals: Vec<GroupTotal>,
    excluded: Vec<String>,
}

const QUADRANT_KEYS: [(Resilience, Direction); 4] = [
    (Resilience::Resilient, Direction::Increases),
    (Resilience::Resilient, Direction::Decreases),
    (Resilience::Susceptible, Direction::Increases),
    (Resilience::Susceptible, Direction::Decreases),
];

/// Cities pooled into m and n for an extremes comparison.
type PooledMembers = (Vec<String>, Vec<String>);

/// The shift report for the configured selection, plus the member lists
/// when the two sides are aggregates.
fn shift_report(corpus: &Corpus<f64>, config: &RunConfig) -> Result<(ShiftReport<f64>, Option<PooledMembers>)> {
    match &config.shift {
        ShiftSelection::Cities { city_m, city_n } => {
            Ok((occupation_shift(corpus, city_m, city_n, config.prob_source)?, None))
        }
        ShiftSelection::Extremes { smallest, largest } => {
            let default = 50.min(corpus.analysis_cities().len() / 2);
            let ks = smallest.unwrap_or(default);
            let kl = largest.unwrap_or(default);
            let small = corpus.select_extreme_cities(ks, true)?;
            let large = corpus.select_extreme_cities(kl, false)?;
            let (lm, ln) = (format!("smallest_{ks}"), format!("largest_{kl}"));
            let s_refs: Vec<&str> = small.iter().map(String::as_str).collect();
            let l_refs: Vec<&str> = large.iter().map(String::as_str).collect();
            let pooled = corpus.aggregate_cities(&s_refs, &lm)?.aggregate_cities(&l_refs, &ln)?;
            Ok((
                occupation_shift(&pooled, &lm, &ln, config.prob_source)?,
                Some((small, large)),
            ))
        }
    }
}

pub fn cmd_shift(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let grouping = config.job_grouping(&corpus)?;
    let (report, members) = shift_report(&corpus, config)?;
    let report = report.with_groups(&grouping);

    let mut t = Table::new(&[
        "occ_code",
        "cluster_id",
        "p_auto",
        "share_m",
        "share_n",
        "raw_term",
        "delta_pct",
        "resilience",
        "direction",
    ]);
    for r in &report.records {
        t.push(vec![
            (&r.occ_code).into(),
            r.cluster_id.clone().into(),
            r.p_auto.into(),
            r.share_m.into(),
            r.share_n.into(),
            r.raw_term.into(),
            r.delta_pct.into(),
            r.resilience.to_string().into(),
            r.direction.to_string().into(),
        ]);
    }
    out.table("shift", &t)?;

    let mut quadrants = Vec::new();
    let mut bars = Vec::new();
    if !report.degenerate {
        for (qi, &(res, dir)) in QUADRANT_KEYS.iter().enumerate() {
            let ranked = rank_shift_records(&report, res, dir)?;
            let total = compensated_sum(ranked.iter().filter_map(|r| r.delta_pct));
            let top: Vec<_> = ranked.into_iter().take(config.shift_top).collect();
            bars.extend(top.iter().map(|r| ShiftBar {
                label: r.occ_code.clone(),
                delta_pct: r.delta_pct.unwrap_or(0.0),
                quadrant: qi,
            }));
            quadrants.push(QuadrantSummary {
                quadrant: QUADRANTS[qi],
                total,
                top: top.iter().map(|r| r.occ_code.clone()).collect(),
            });
        }
    }
    let mut group_totals: Vec<GroupTotal> = report
        .group_totals
        .iter()
        .map(|(g, v)| GroupTotal {
            cluster_id: g.clone(),
            total: *v,
        })
        .collect();
    group_totals.sort_by(|a, b| group_order(&a.cluster_id, &b.cluster_id));
    let (members_m, members_n) = match members {
        Some((m, n)) => (Some(m), Some(n)),
        None => (None, None),
    };
    let summary = ShiftSummary {
        city_m: report.city_m.clone(),
        city_n: report.city_n.clone(),
        e_m: report.e_m,
        e_n: report.e_n,
        degenerate: report.degenerate,
        members_m,
        members_n,
        resilient_total: report.resilient_total,
        susceptible_total: report.susceptible_total,
        quadrants,
        group_totals,
        excluded: report.excluded.clone(),
    };
    out.json("shift_summary.json", &summary)?;
    if !report.degenerate {
        out.svg("shift.svg", || {
            let title = format!(
                "{} (E = {:.3}) vs {} (E = {:.3})",
                report.city_m, report.e_m, report.city_n, report.e_n
            );
            let totals: Vec<(String, f64)> = summary
                .quadrants
                .iter()
                .map(|q| (q.quadrant.to_string(), q.total))
                .collect();
            shift_bars_svg(&title, &bars, &totals)
        })?;
    }
    Ok(out.done())
}

#[derive(Serialize)]
struct RegressionSummary<'a> {
    n: usize,
    fitted_models: Vec<&'a str>,
    skipped: &'a [crate::stats::SkippedModel],
    dropped_cities: &'a [String],
    residual_model: Option<&'a str>,
}

pub fn cmd_regress(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let suite = regression_suite(&corpus, config.prob_source)?;
    let model_ids: Vec<String> = (1..=8).map(|i| i.to_string()).collect();
    let mut cols = vec!["term".to_string(), "stat".to_string()];
    cols.extend(model_ids.iter().map(|m| format!("model_{m}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(&col_refs);
    let fit_of = |m: &str| suite.fits.iter().find(|f| f.model_id == m);

    for v in REGRESSION_VARIABLES {
        for (stat, pick) in [("coef", 0), ("stderr", 1)] {
            let mut row: Vec<Cell> = vec![v.into(), stat.into()];
            for m in &model_ids {
                row.push(
                    match fit_of(m).and_then(|f| f.variables.iter().position(|x| x == v).map(|i| (f, i))) {
                        Some((f, i)) => (if pick == 0 { f.coef[i] } else { f.stderr[i] }).into(),
                        None => Cell::Missing,
                    },
                );
            }
            t.push(row);
        }
    }
    type Stat = fn(&crate::stats::RegressionFit<f64>) -> Cell;
    let stats: [(&str, Stat); 5] = [
        ("r2", |f| f.r2.into()),
        ("adj_r2", |f| f.adj_r2.into()),
        ("f_stat", |f| f.f_stat.into()),
        ("p", |f| f.model_p.into()),
        ("n", |f| f.n.into()),
    ];
    for (name, get) in stats {
        let mut row: Vec<Cell> = vec!["model".into(), name.into()];
        for m in &model_ids {
            row.push(fit_of(m).map_or(Cell::Missing, get));
        }
        t.push(row);
    }
    out.table("regression", &t)?;

    // Residuals of the fullest model that could be fit.
    let residual_fit = suite.fits.last();
    if let Some(f) = residual_fit {
        let fitted: std::collections::BTreeMap<&str, f64> = f
            .row_ids
            .iter()
            .map(String::as_str)
            .zip(f.fitted.iter().copied())
            .collect();
        let mut r = Table::new(&["city_id", "fitted", "residual", "rank"]);
        for rr in residual_ranking(f) {
            r.push(vec![
                (&rr.city_id).into(),
                fitted[rr.city_id.as_str()].into(),
                rr.residual.into(),
                rr.rank.into(),
            ]);
        }
        out.table("residuals", &r)?;
    }
    out.json(
        "regression_summary.json",
        &RegressionSummary {
            n: suite.fits.first().map_or(0, |f| f.n),
            fitted_models: suite.fits.iter().map(|f| f.model_id.as_str()).collect(),
            skipped: &suite.skipped,
            dropped_cities: &suite.dropped_cities,
            residual_model: residual_fit.map(|f| f.model_id.as_str()),
        },
    )?;
    Ok(out.done())
}

#[derive(Serialize)]
struct SplitSummary {
    model_id: String,
    train_size: usize,
    test_size: usize,
    trials: usize,
    mean_r2: f64,
    p025: f64,
    median: f64,
    p975: f64,
}

pub fn cmd_validate_split(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let mut t = Table::new(&["model_id", "trial", "r2"]);
    let mut summary = Vec::new();
    for m in &config.split_models {
        let v = split_validation(&corpus, config.prob_source, m, config.trials.split, config.seed)?;
        for (i, r) in v.r2.iter().enumerate() {
            t.push(vec![m.into(), i.into(), (*r).into()]);
        }
        let b = box_stats(String::new(), &v.r2).expect("at least one trial");
        summary.push(SplitSummary {
            model_id: v.model_id.clone(),
            train_size: v.train_size,
            test_size: v.test_size,
            trials: v.r2.len(),
            mean_r2: compensated_sum(v.r2.iter().copied()) / v.r2.len() as f64,
            p025: b.p025,
            median: b.median,
            p975: b.p975,
        });
    }
    out.table("split_validation", &t)?;
    out.json("split_validation_summary.json", &summary)?;
    Ok(out.done())
}

#[derive(Serialize)]
struct CorrelationSummary<'a> {
    weighting: AbundanceWeighting,
    constant_groups: &'a [String],
}

pub fn cmd_correlations(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let grouping = config.skill_grouping(&corpus)?;
    let table = skill_correlation_table(&corpus, &grouping, config.prob_source, config.weighting)?;
    let mut t = Table::new(&["group", "target", "r", "p", "n"]);
    for row in &table.rows {
        t.push(vec![
            (&row.group).into(),
            (&row.target).into(),
            row.result.r.into(),
            row.result.p.into(),
            row.result.n.into(),
        ]);
    }
    out.table("correlations", &t)?;
    out.json(
        "correlations_summary.json",
        &CorrelationSummary {
            weighting: config.weighting,
            constant_groups: &table.constant_groups,
        },
    )?;
    Ok(out.done())
}

pub fn cmd_profiles(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let grouping = config.skill_grouping(&corpus)?;
    let mut t = Table::new(&["target", "group", "bin", "bin_lo", "bin_hi", "probability"]);
    for (name, target) in [("E", ProfileTarget::Impact), ("H_skill", ProfileTarget::SkillEntropy)] {
        let p = skill_group_profile(&corpus, &grouping, config.prob_source, target, config.bins)?;
        for (g, gid) in p.group_ids.iter().enumerate() {
            for b in 0..p.edges.len() - 1 {
                t.push(vec![
                    name.into(),
                    gid.into(),
                    b.into(),
                    p.edges[b].into(),
                    p.edges[b + 1].into(),
                    p.probs[(g, b)].into(),
                ]);
            }
        }
    }
    out.table("profiles", &t)?;
    Ok(out.done())
}

pub fn cmd_robustness(config: &RunConfig, experiment: Experiment) -> Result<Vec<PathBuf>> {
    let corpus = config.load()?;
    let mut out = Out::new(config)?;
    let params = match experiment {
        Experiment::Noise => &config.noise_errors,
        Experiment::Removal => &config.removal_fractions,
    };
    let runs: Vec<RobustnessRun<f64>> = params
        .iter()
        .map(|&p| match experiment {
            Experiment::Noise => {
                noise_experiment(&corpus, config.prob_source, p, config.trials.robustness, config.seed)
            }
            Experiment::Removal => {
                removal_experiment(&corpus, config.prob_source, p, config.trials.robustness, config.seed)
            }
        })
        .collect::<Result<_>>()?;

    let mut t = Table::new(&["experiment", "parameter", "trial", "r", "clamp_rate"]);
    for run in &runs {
        for tr in &run.trials {
            t.push(vec![
                experiment.to_string().into(),
                run.parameter.into(),
                tr.trial.into(),
                tr.r.into(),
                tr.clamp_rate.into(),
            ]);
        }
    }
    let stem = format!("robustness_{experiment}");
    out.table(&stem, &t)?;
    let summaries: Vec<_> = runs.iter().map(RobustnessRun::summary).collect();
    out.json(&format!("{stem}_summary.json"), &summaries)?;
    out.svg(&format!("{stem}.svg"), || {
        let boxes: Vec<BoxStats> = runs
            .iter()
            .filter_map(|r| box_stats(crate::report::format_number(r.parameter), &r.correlations()))
            .collect();
        let (title, x) = match experiment {
            Experiment::Noise => ("Correlation under probability noise", "error"),
            Experiment::Removal => ("Correlation under occupation removal", "fraction removed"),
        };
        let baseline = runs.first().map(|r| r.baseline_r);
        box_chart_svg(title, x, "Pearson r (log10 size vs E*)", &boxes, baseline)
    })?;
    Ok(out.done())
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub stages: Vec<Stage>,
    pub skipped_stages: Vec<Stage>,
    pub files: Vec<FileHash>,
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub files: Vec<PathBuf>,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((bytes.len() as u64, hex))
}

fn hash_entry(path: &Path, label: String) -> Result<FileHash> {
    let (bytes, sha256) = sha256_file(path)?;
    Ok(FileHash {
        path: label,
        bytes,
        sha256,
    })
}

/// Every stage in order, then `manifest.json`.
pub fn cmd_full_pipeline(config: &RunConfig) -> Result<PipelineRun> {
    cmd_full_pipeline_with(config, |_| Ok(()))
}

/// Like [`cmd_full_pipeline`] with `hook` called before each stage; an
/// error from the hook aborts the run as a failure of that stage.
pub fn cmd_full_pipeline_with(config: &RunConfig, hook: impl Fn(Stage) -> Result<()>) -> Result<PipelineRun> {
    let mut files = Vec::new();
    let mut stages = Vec::new();
    let mut skipped = Vec::new();
    for stage in Stage::ALL {
        if stage.needs_covariates() && config.inputs.covariates.is_none() {
            skipped.push(stage);
            continue;
        }
        hook(stage).map_err(|e| e.in_stage(stage.name()))?;
        files.extend(run_stage(stage, config)?);
        stages.push(stage);
    }

    let mut inputs = vec![
        hash_entry(&config.inputs.employment, "employment".into())?,
        hash_entry(&config.inputs.skills, "skills".into())?,
        hash_entry(&config.inputs.probs, "probs".into())?,
    ];
    if let Some(p) = &config.inputs.covariates {
        inputs.push(hash_entry(p, "covariates".into())?);
    }
    for (name, p) in [("clusters", &config.clusters), ("skill_groups", &config.skill_groups)] {
        if let Some(p) = p {
            inputs.push(hash_entry(p, name.into())?);
        }
    }

    let mut hashed: Vec<FileHash> = files
        .iter()
        .map(|p| {
            let rel = p
                .strip_prefix(&config.out_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned();
            hash_entry(p, rel)
        })
        .collect::<Result<_>>()?;
    hashed.sort_by(|a, b| a.path.cmp(&b.path));
    hashed.dedup_by(|a, b| a.path == b.path);

    let manifest = Manifest {
        tool: "cityscale".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        hash: "sha256".into(),
        seed: config.seed,
        config: config.clone(),
        inputs,
        stages,
        skipped_stages: skipped,
        files: hashed,
    };
    let manifest_path = config.out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(PipelineRun {
        files,
        manifest_path,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_corpus;
    use crate::synthetic::{planted_corpus, PlantedConfig};

    fn small_config(dir: &Path) -> RunConfig {
        let planted = planted_corpus::<f64>(
            &PlantedConfig {
                cities: 40,
                occupations_per_archetype: 4,
                skills_per_archetype: 3,
                ..PlantedConfig::default()
            },
            7,
        )
        .unwrap();
        let inputs = write_corpus(&planted.corpus, &dir.join("in")).unwrap();
        let mut cfg = RunConfig::new(inputs, dir.join("out"));
        cfg.trials = Trials::uniform(5);
        cfg.bootstrap_resamples = 50;
        cfg.k_skills = 4;
        cfg.stability_rates = vec![0.7, 1.0];
        cfg.noise_errors = vec![0.0, 0.1];
        cfg.removal_fractions = vec![0.0, 0.25];
        cfg
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn pipeline_writes_manifest_with_sorted_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let run = cmd_full_pipeline(&cfg).unwrap();
        assert!(run.manifest.skipped_stages.is_empty());
        let paths: Vec<&str> = run.manifest.files.iter().map(|f| f.path.as_str()).collect();
        let mut sorted = paths.clone();
        sorted.sort();
        assert_eq!(paths, sorted);
        assert!(paths.contains(&"metrics.csv"));
        assert!(paths.contains(&"shift.svg"));
        assert!(run.manifest.files.iter().all(|f| f.sha256.len() == 64));
    }

    #[test]
    fn hook_failure_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let err = cmd_full_pipeline_with(&cfg, |s| {
            if s == Stage::Entropy {
                Err(Error::InvalidConfig("injected".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(&err, Error::Stage { stage, .. } if stage == "entropy"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn named_shift_of_a_city_with_itself_is_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.shift = ShiftSelection::Cities {
            city_m: "m0001".into(),
            city_n: "m0001".into(),
        };
        let files = cmd_shift(&cfg).unwrap();
        assert!(files.iter().all(|f| f.extension().unwrap() != "svg"));
        let summary = fs::read_to_string(cfg.out_dir.join("shift_summary.json")).unwrap();
        assert!(summary.contains("\"degenerate\": true"));
    }
}
