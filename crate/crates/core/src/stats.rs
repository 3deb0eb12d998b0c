//! Pearson correlation, OLS regression of expected impact on urban and skill
//! covariates, split-half validation, residual ranking and binned profiles.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::FeatureMatrix;
use crate::corpus::{Corpus, ProbSource};
use crate::error::{Error, Result};
use crate::grouping::{group_order, Grouping, UNASSIGNED};
use crate::linalg::{upper_triangular_inverse, HouseholderQr, Matrix};
use crate::metrics::{city_metrics_table, filtered_shares, CityMetrics};
use crate::rng::stream_rng;
use crate::scalar::{compensated_sum, mean, population_std, Scalar};
use crate::special::{f_upper_tail, student_t_two_sided};

pub const DEFAULT_SPLIT_TRIALS: usize = 1000;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationResult<T> {
    pub r: T,
    /// Two-sided p-value under t(n − 2).
    pub p: T,
    pub n: usize,
}

pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<CorrelationResult<T>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewRows { rows: n, needed: 3 });
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx = compensated_sum(x.iter().map(|&a| (a - mx) * (a - mx)));
    let syy = compensated_sum(y.iter().map(|&b| (b - my) * (b - my)));
    if !(sxx > T::zero()) {
        return Err(Error::ZeroVariance("x".into()));
    }
    if !(syy > T::zero()) {
        return Err(Error::ZeroVariance("y".into()));
    }
    let sxy = compensated_sum(x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)));
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    let df = T::from_usize_lossy(n - 2);
    let p = if r.abs() == T::one() {
        T::zero()
    } else {
        student_t_two_sided(r * (df / (T::one() - r * r)).sqrt(), df)
    };
    Ok(CorrelationResult { r, p, n })
}

/// Affine map between the fitted (possibly standardized) scale and data units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardization<T> {
    pub x_means: Vec<T>,
    pub x_scales: Vec<T>,
    pub y_mean: T,
    pub y_scale: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit<T> {
    pub model_id: String,
    pub variables: Vec<String>,
    /// Slopes in `variables` order; standardized when `standardize` was set.
    pub coef: Vec<T>,
    pub stderr: Vec<T>,
    pub intercept: T,
    pub r2: T,
    pub adj_r2: T,
    pub f_stat: T,
    /// Overall F-test p-value.
    pub model_p: T,
    pub n: usize,
    pub row_ids: Vec<String>,
    /// Fitted values and residuals in the response's own units.
    pub fitted: Vec<T>,
    pub residuals: Vec<T>,
    pub transform: Standardization<T>,
}

impl<T: Scalar> RegressionFit<T> {
    /// Predicted response (data units) for one row of raw covariates.
    pub fn predict(&self, row: &[T]) -> T {
        let t = &self.transform;
        let z = compensated_sum(
            row.iter()
                .zip(&self.coef)
                .zip(t.x_means.iter().zip(&t.x_scales))
                .map(|((&x, &b), (&m, &s))| b * (x - m) / s),
        );
        t.y_mean + t.y_scale * (self.intercept + z)
    }
}

/// Least squares with an intercept via Householder QR. With `standardize`,
/// covariates and response are z-scored (population std) before fitting.
pub fn ols<T: Scalar>(design: &FeatureMatrix<T>, response: &[T], standardize: bool) -> Result<RegressionFit<T>> {
    let x = &design.values;
    let (n, p) = (x.rows(), x.cols());
    if response.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: response.len(),
        });
    }
    if n < p + 2 {
        return Err(Error::TooFewRows { rows: n, needed: p + 2 });
    }

    let transform = if standardize {
        let mut x_means = Vec::with_capacity(p);
        let mut x_scales = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let sd = population_std(&col);
            if !(sd > T::zero()) {
                return Err(Error::ZeroVariance(design.col_ids[j].clone()));
            }
            x_means.push(mean(&col));
            x_scales.push(sd);
        }
        let y_scale = population_std(response);
        if !(y_scale > T::zero()) {
            return Err(Error::ZeroVariance("response".into()));
        }
        Standardization {
            x_means,
            x_scales,
            y_mean: mean(response),
            y_scale,
        }
    } else {
        Standardization {
            x_means: vec![T::zero(); p],
            x_scales: vec![T::one(); p],
            y_mean: T::zero(),
            y_scale: T::one(),
        }
    };

    let mut a = Matrix::zeros(n, p + 1);
    for i in 0..n {
        a[(i, 0)] = T::one();
        for j in 0..p {
            a[(i, j + 1)] = (x[(i, j)] - transform.x_means[j]) / transform.x_scales[j];
        }
    }
    let y: Vec<T> = response
        .iter()
        .map(|&v| (v - transform.y_mean) / transform.y_scale)
        .collect();

    let qr = HouseholderQr::new(&a);
    if let Some(col) = qr.first_deficient_column(T::epsilon() * T::lit(1e3) * T::from_usize_lossy(n)) {
        let column = if col == 0 {
            "intercept".to_string()
        } else {
            design.col_ids[col - 1].clone()
        };
        return Err(Error::RankDeficient { column });
    }
    let beta = qr.solve(&y);
    let fitted_z = a.matvec(&beta);
    let res_z: Vec<T> = y.iter().zip(&fitted_z).map(|(&a, &b)| a - b).collect();

    let ssr = compensated_sum(res_z.iter().map(|&e| e * e));
    let ym = mean(&y);
    let sst = compensated_sum(y.iter().map(|&v| (v - ym) * (v - ym)));
    let dof = T::from_usize_lossy(n - p - 1);
    let pk = T::from_usize_lossy(p);
    let r2 = if sst > T::zero() {
        (T::one() - ssr / sst).max(T::zero()).min(T::one())
    } else {
        T::one()
    };
    let adj_r2 = T::one() - (T::one() - r2) * T::from_usize_lossy(n - 1) / dof;
    let sigma2 = ssr / dof;
    let r_inv = upper_triangular_inverse(&qr.r());
    let se: Vec<T> = (0..=p)
        .map(|j| (sigma2 * compensated_sum((j..=p).map(|k| r_inv[(j, k)] * r_inv[(j, k)]))).sqrt())
        .collect();
    let (f_stat, model_p) = if p == 0 {
        (T::nan(), T::one())
    } else if ssr > T::zero() {
        let f = (r2 / pk) / ((T::one() - r2) / dof);
        (f, f_upper_tail(f, pk, dof))
    } else {
        (T::infinity(), T::zero())
    };

    let fitted: Vec<T> = fitted_z
        .iter()
        .map(|&f| transform.y_mean + transform.y_scale * f)
        .collect();
    let residuals = response.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    Ok(RegressionFit {
        model_id: String::new(),
        variables: design.col_ids.clone(),
        coef: beta[1..].to_vec(),
        stderr: se[1..].to_vec(),
        intercept: beta[0],
        r2,
        adj_r2,
        f_stat,
        model_p,
        n,
        row_ids: design.row_ids.clone(),
        fitted,
        residuals,
        transform,
    })
}

pub const REGRESSION_VARIABLES: [&str; 8] = [
    "size_m",
    "income_m",
    "bachelor_m",
    "GDP_m",
    "jobs_m",
    "H_job",
    "H_skill",
    "1-T",
];

/// Column indices into [`REGRESSION_VARIABLES`] for models 1 to 8.
pub const MODELS: [(&str, &[usize]); 8] = [
    ("1", &[0, 1, 2, 3, 4]),
    ("2", &[5]),
    ("3", &[6]),
    ("4", &[7]),
    ("5", &[0, 1, 2, 3, 4, 5]),
    ("6", &[0, 1, 2, 3, 4, 6]),
    ("7", &[0, 1, 2, 3, 4, 7]),
    ("8", &[0, 1, 2, 3, 4, 5, 6, 7]),
];

/// Every regression variable for the cities with complete covariates, and
/// the expected impact as response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSample<T> {
    pub table: FeatureMatrix<T>,
    pub response: Vec<T>,
    /// Analysis cities missing a covariate.
    pub dropped_cities: Vec<String>,
}

impl<T: Scalar> RegressionSample<T> {
    pub fn model(&self, columns: &[usize]) -> FeatureMatrix<T> {
        self.subset(&(0..self.table.row_ids.len()).collect::<Vec<_>>(), columns)
    }

    fn subset(&self, rows: &[usize], columns: &[usize]) -> FeatureMatrix<T> {
        let mut values = Matrix::zeros(rows.len(), columns.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in columns.iter().enumerate() {
                values[(i, j)] = self.table.values[(r, c)];
            }
        }
        FeatureMatrix {
            row_ids: rows.iter().map(|&r| self.table.row_ids[r].clone()).collect(),
            col_ids: columns.iter().map(|&c| self.table.col_ids[c].clone()).collect(),
            values,
        }
    }
}

fn analysis_metrics<T: Scalar>(corpus: &Corpus<T>, source: ProbSource) -> Result<Vec<(usize, CityMetrics<T>)>> {
    let rows = city_metrics_table(corpus, source)?;
    Ok(rows
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !corpus.cities()[*i].aggregate)
        .collect())
}

pub fn regression_sample<T: Scalar>(corpus: &Corpus<T>, source: ProbSource) -> Result<RegressionSample<T>> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut response = Vec::new();
    let mut dropped = Vec::new();
    for (i, m) in analysis_metrics(corpus, source)? {
        let city = &corpus.cities()[i];
        let cov = city.covariates.as_ref();
        let (Some(income), Some(bachelor), Some(gdp)) = (
            cov.and_then(|c| c.median_income),
            cov.and_then(|c| c.pct_bachelor),
            cov.and_then(|c| c.gdp_per_capita),
        ) else {
            dropped.push(city.id.clone());
            continue;
        };
        ids.push(city.id.clone());
        rows.push(vec![
            m.size.log10(),
            income,
            bachelor,
            gdp.log10(),
            T::from_usize_lossy(city.unique_jobs()),
            m.h_job,
            m.h_skill,
            m.one_minus_t,
        ]);
        response.push(m.e);
    }
    let values = if rows.is_empty() {
        Matrix::zeros(0, REGRESSION_VARIABLES.len())
    } else {
        Matrix::from_rows(&rows)
    };
    Ok(RegressionSample {
        table: FeatureMatrix {
            row_ids: ids,
            col_ids: REGRESSION_VARIABLES.iter().map(|s| s.to_string()).collect(),
            values,
        },
        response,
        dropped_cities: dropped,
    })
}

fn model_columns(model_id: &str) -> Result<&'static [usize]> {
    MODELS
        .iter()
        .find(|(id, _)| *id == model_id)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown model `{model_id}` (expected 1-8)")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedModel {
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSuite<T> {
    pub fits: Vec<RegressionFit<T>>,
    pub skipped: Vec<SkippedModel>,
    pub dropped_cities: Vec<String>,
}

/// Models 1 to 8, standardized. A model that cannot be estimated on the
/// sample (too few rows, a constant or collinear column) is listed in
/// `skipped` instead of failing the suite.
pub fn regression_suite<T: Scalar>(corpus: &Corpus<T>, source: ProbSource) -> Result<RegressionSuite<T>> {
    let sample = regression_sample(corpus, source)?;
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (id, cols) in MODELS {
        match ols(&sample.model(cols), &sample.response, true) {
            Ok(mut f) => {
                f.model_id = id.to_string();
                fits.push(f);
            }
            Err(e @ (Error::TooFewRows { .. } | Error::ZeroVariance(_) | Error::RankDeficient { .. })) => {
                skipped.push(SkippedModel {
                    model_id: id.to_string(),
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RegressionSuite {
        fits,
        skipped,
        dropped_cities: sample.dropped_cities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitValidation<T> {
    pub model_id: String,
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out R² per trial, in trial order.
    pub r2: Vec<T>,
}

/// Repeatedly fits the model on a random half of the sample (⌊n/2⌋ cities)
/// and scores R² on the other half.
pub fn split_validation<T: Scalar>(
    corpus: &Corpus<T>,
    source: ProbSource,
    model_id: &str,
    trials: usize,
    seed: u64,
) -> Result<SplitValidation<T>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let cols = model_columns(model_id)?;
    let sample = regression_sample(corpus, source)?;
    let n = sample.response.len();
    let train = n / 2;
    let r2 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(seed, t as u64));
            let (tr, te) = order.split_at(train);
            let y_train: Vec<T> = tr.iter().map(|&i| sample.response[i]).collect();
            let fit = ols(&sample.subset(tr, cols), &y_train, true)?;
            let held = sample.subset(te, cols);
            let y_test: Vec<T> = te.iter().map(|&i| sample.response[i]).collect();
            let m = mean(&y_test);
            let sst = compensated_sum(y_test.iter().map(|&y| (y - m) * (y - m)));
            if !(sst > T::zero()) {
                return Err(Error::ZeroVariance("held-out response".into()));
            }
            let ssr = compensated_sum((0..te.len()).map(|i| (y_test[i] - fit.predict(held.values.row(i))).powi(2)));
            Ok(T::one() - ssr / sst)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(SplitValidation {
        model_id: model_id.to_string(),
        train_size: train,
        test_size: n - train,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRank<T> {
    pub city_id: String,
    pub residual: T,
    /// 1 = most negative residual.
    pub rank: usize,
}

pub fn residual_ranking<T: Scalar>(fit: &RegressionFit<T>) -> Vec<ResidualRank<T>> {
    let mut rows: Vec<(&String, T)> = fit.row_ids.iter().zip(fit.residuals.iter().copied()).collect();
    rows.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    rows.into_iter()
        .enumerate()
        .map(|(i, (id, r))| ResidualRank {
            city_id: id.clone(),
            residual: r,
            rank: i + 1,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedProfile<T> {
    pub group_ids: Vec<String>,
    /// `n_bins + 1` equally spaced edges over the observed target range.
    pub edges: Vec<T>,
    /// `P(bin | group)`, one row per group.
    pub probs: Matrix<T>,
}

/// Bin of `x` among `n_bins` equal-width bins on `[lo, lo + range]`.
fn bin_index<T: Scalar>(x: T, lo: T, range: T, n_bins: usize) -> usize {
    let t = (x - lo) / range;
    let idx = (t * T::from_usize_lossy(n_bins)).floor().to_usize().unwrap_or(0);
    idx.min(n_bins - 1)
}

/// Sums each group's per-city values (`group_values[g][city]`) into target
/// bins and normalizes every group row to 1.
pub fn binned_profile<T: Scalar>(
    group_ids: &[String],
    group_values: &[Vec<T>],
    target: &[T],
    n_bins: usize,
) -> Result<BinnedProfile<T>> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("bin count must be at least 1".into()));
    }
    if group_ids.len() != group_values.len() {
        return Err(Error::LengthMismatch {
            left: group_ids.len(),
            right: group_values.len(),
        });
    }
    if let Some(bad) = group_values.iter().find(|v| v.len() != target.len()) {
        return Err(Error::LengthMismatch {
            left: bad.len(),
            right: target.len(),
        });
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("target values must be finite".into()));
    }
    let lo = target.iter().copied().fold(T::infinity(), T::min);
    let hi = target.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return Err(Error::DegenerateRange);
    }
    let range = hi - lo;
    let bins: Vec<usize> = target.iter().map(|&x| bin_index(x, lo, range, n_bins)).collect();
    let mut probs = Matrix::zeros(group_ids.len(), n_bins);
    for (g, values) in group_values.iter().enumerate() {
        let mut parts: Vec<Vec<T>> = vec![Vec::new(); n_bins];
        for (&b, &v) in bins.iter().zip(values) {
            parts[b].push(v);
        }
        let sums: Vec<T> = parts.into_iter().map(compensated_sum).collect();
        let total = compensated_sum(sums.iter().copied());
        if !(total > T::zero()) {
            return Err(Error::EmptyGroup(group_ids[g].clone()));
        }
        for (b, s) in sums.into_iter().enumerate() {
            probs[(g, b)] = s / total;
        }
    }
    let width = range / T::from_usize_lossy(n_bins);
    let edges = (0..=n_bins)
        .map(|i| {
            if i == n_bins {
                hi
            } else {
                lo + width * T::from_usize_lossy(i)
            }
        })
        .collect();
    Ok(BinnedProfile {
        group_ids: group_ids.to_vec(),
        edges,
        probs,
    })
}

/// How a city's abundance of a skill group is weighted across occupations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum AbundanceWeighting {
    /// Employment shares over skill-covered occupations.
    #[default]
    Share,
    /// Raw worker counts.
    Workers,
}

impl std::str::FromStr for AbundanceWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "share" => Ok(Self::Share),
            "workers" => Ok(Self::Workers),
            other => Err(Error::InvalidConfig(format!("unknown weighting `{other}`"))),
        }
    }
}

/// Per-city abundance of each skill group: Σ_j weight_m(j) · Σ_{s ∈ g}
/// importance(j, s). Skills missing from `grouping` are not counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAbundance<T> {
    pub group_ids: Vec<String>,
    pub city_ids: Vec<String>,
    /// `values[g][city]`.
    pub values: Vec<Vec<T>>,
}

pub fn skill_group_abundance<T: Scalar>(
    corpus: &Corpus<T>,
    grouping: &Grouping,
    weighting: AbundanceWeighting,
) -> Result<GroupAbundance<T>> {
    let skill_group: Vec<&str> = corpus.skills().iter().map(|s| grouping.group_of(s)).collect();
    let mut group_ids: Vec<String> = skill_group
        .iter()
        .filter(|g| **g != UNASSIGNED)
        .map(|g| g.to_string())
        .collect();
    group_ids.sort_by(|a, b| group_order(a, b));
    group_ids.dedup();
    if group_ids.is_empty() {
        return Err(Error::InvalidConfig(
            "skill grouping matches no skills in the corpus".into(),
        ));
    }
    let slot: Vec<Option<usize>> = skill_group
        .iter()
        .map(|g| group_ids.iter().position(|x| x == g))
        .collect();
    // Per occupation, importance summed within each group.
    let per_occ: Vec<Vec<T>> = (0..corpus.occupations().len())
        .map(|o| {
            let mut parts: Vec<Vec<T>> = vec![Vec::new(); group_ids.len()];
            for &(s, v) in corpus.importance(o) {
                if let Some(g) = slot[s] {
                    parts[g].push(v);
                }
            }
            parts.into_iter().map(compensated_sum).collect()
        })
        .collect();

    let mut city_ids = Vec::new();
    let mut values = vec![Vec::new(); group_ids.len()];
    for i in corpus.analysis_cities() {
        let city = &corpus.cities()[i];
        let weights = match weighting {
            AbundanceWeighting::Share => filtered_shares(city.employment(), |o| corpus.has_skills(o))
                .ok_or_else(|| Error::NoSkillCoverage(city.id.clone()))?,
            AbundanceWeighting::Workers => city.employment().to_vec(),
        };
        city_ids.push(city.id.clone());
        for (g, col) in values.iter_mut().enumerate() {
            col.push(compensated_sum(weights.iter().map(|&(o, w)| w * per_occ[o][g])));
        }
    }
    Ok(GroupAbundance {
        group_ids,
        city_ids,
        values,
    })
}

pub const CORRELATION_TARGETS: [&str; 3] = ["E", "log10_size", "H_skill"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCorrelation<T> {
    pub group: String,
    pub target: String,
    pub result: CorrelationResult<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable<T> {
    pub rows: Vec<GroupCorrelation<T>>,
    /// Groups whose abundance is the same in every city.
    pub constant_groups: Vec<String>,
}

/// Correlation of each group's abundance with expected impact, log10 size
/// and skill entropy across analysis cities.
pub fn skill_correlation_table<T: Scalar>(
    corpus: &Corpus<T>,
    grouping: &Grouping,
    source: ProbSource,
    weighting: AbundanceWeighting,
) -> Result<CorrelationTable<T>> {
    let abundance = skill_group_abundance(corpus, grouping, weighting)?;
    let metrics: Vec<CityMetrics<T>> = analysis_metrics(corpus, source)?.into_iter().map(|(_, m)| m).collect();
    let targets: [Vec<T>; 3] = [
        metrics.iter().map(|m| m.e).collect(),
        metrics.iter().map(|m| m.size.log10()).collect(),
        metrics.iter().map(|m| m.h_skill).collect(),
    ];
    let mut rows = Vec::new();
    let mut constant_groups = Vec::new();
    for (g, values) in abundance.group_ids.iter().zip(&abundance.values) {
        if population_std(values) <= T::zero() {
            constant_groups.push(g.clone());
            continue;
        }
        for (name, target) in CORRELATION_TARGETS.iter().zip(&targets) {
            rows.push(GroupCorrelation {
                group: g.clone(),
                target: name.to_string(),
                result: pearson(values, target)?,
            });
        }
    }
    Ok(CorrelationTable { rows, constant_groups })
}

/// Target values per analysis city for binned profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProfileTarget {
    Impact,
    SkillEntropy,
}

impl std::str::FromStr for ProfileTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" | "impact" => Ok(Self::Impact),
            "H_skill" | "skill_entropy" => Ok(Self::SkillEntropy),
            other => Err(Error::InvalidConfig(format!("unknown profile target `{other}`"))),
        }
    }
}

/// Binned profile of skill-group abundance across a city-level target.
pub fn skill_group_profile<T: Scalar>(
    corpus: &Corpus<T>,
    grouping: &Grouping,
    source: ProbSource,
    target: ProfileTarget,
    n_bins: usize,
) -> Result<BinnedProfile<T>> {
    let abundance = skill_group_abundance(corpus, grouping, AbundanceWeighting::Share)?;
    let target: Vec<T> = analysis_metrics(corpus, source)?
        .into_iter()
        .map(|(_, m)| match target {
            ProfileTarget::Impact => m.e,
            ProfileTarget::SkillEntropy => m.h_skill,
        })
        .collect();
    binned_profile(&abundance.group_ids, &abundance.values, &target, n_bins)
}

/// Pearson correlation and least-squares line of expected impact on
/// log10 city size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeImpactTrend<T> {
    pub correlation: CorrelationResult<T>,
    pub slope: T,
    pub intercept: T,
}

pub fn size_impact_trend<T: Scalar>(metrics: &[CityMetrics<T>]) -> Result<SizeImpactTrend<T>> {
    let x: Vec<T> = metrics.iter().map(|m| m.size.log10()).collect();
    let y: Vec<T> = metrics.iter().map(|m| m.e).collect();
    let correlation = pearson(&x, &y)?;
    let (mx, my) = (mean(&x), mean(&y));
    let sxx = compensated_sum(x.iter().map(|&a| (a - mx) * (a - mx)));
    let sxy = compensated_sum(x.iter().zip(&y).map(|(&a, &b)| (a - mx) * (b - my)));
    let slope = sxy / sxx;
    Ok(SizeImpactTrend {
        correlation,
        slope,
        intercept: my - slope * mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_rows(rows)
    }

    #[test]
    fn pearson_perfect_line() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = pearson(&x, &y).unwrap();
        assert!((c.r - 1.0).abs() < 1e-15);
        assert!(c.p < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ZeroVariance(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn pearson_p_for_df_2_closed_form() {
        // t(2): P(|T| ≥ t) = 1 − t/√(2 + t²)
        let x = [1.0_f64, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 5.0];
        let c = pearson(&x, &y).unwrap();
        let t = c.r * (2.0 / (1.0 - c.r * c.r)).sqrt();
        let want = 1.0 - t / (2.0 + t * t).sqrt();
        assert!((c.p - want).abs() < 1e-13);
    }

    #[test]
    fn exact_linear_regression() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, ((i * i) % 5) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 - 2.0 * r[0] + 0.5 * r[1]).collect();
        let f = ols(&fm(&rows), &y, false).unwrap();
        assert!((f.intercept - 3.0).abs() < 1e-10);
        assert!((f.coef[0] + 2.0).abs() < 1e-10);
        assert!((f.coef[1] - 0.5).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.model_p < 1e-12);
    }

    #[test]
    fn ols_error_paths() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        assert!(matches!(ols(&fm(&rows), &y, false), Err(Error::RankDeficient { .. })));
        let single: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            ols(&fm(&single), &[2.0; 6], true),
            Err(Error::ZeroVariance(_))
        ));
        assert!(matches!(
            ols(&fm(&single[..2]), &y[..2], true),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn standardized_predictions_survive_rescaling() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, ((i * 7) % 10) as f64 * 0.3]).collect();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| r[0] - r[1] + (i % 3) as f64 * 0.2)
            .collect();
        let a = ols(&fm(&rows), &y, true).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] * 100.0 - 7.0, r[1]]).collect();
        let b = ols(&fm(&scaled), &y, true).unwrap();
        for (p, q) in a.fitted.iter().zip(&b.fitted) {
            assert!((p - q).abs() < 1e-9);
        }
        assert!(a.residuals.iter().sum::<f64>().abs() < 1e-9);
        assert!(a.adj_r2 <= a.r2);
        for (i, row) in rows.iter().enumerate() {
            assert!((a.predict(row) - a.fitted[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_order_and_ties() {
        let fit = RegressionFit {
            model_id: "x".into(),
            variables: vec![],
            coef: vec![],
            stderr: vec![],
            intercept: 0.0,
            r2: 0.0,
            adj_r2: 0.0,
            f_stat: 0.0,
            model_p: 1.0,
            n: 4,
            row_ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            fitted: vec![0.0; 4],
            residuals: vec![-0.02, 0.01, 0.0, 0.0],
            transform: Standardization {
                x_means: vec![],
                x_scales: vec![],
                y_mean: 0.0,
                y_scale: 1.0,
            },
        };
        let ids: Vec<String> = residual_ranking(&fit).into_iter().map(|r| r.city_id).collect();
        assert_eq!(ids, vec!["a", "c", "d", "b"]);
    }

    #[test]
    fn binned_profile_cases() {
        let ids = vec!["g".to_string(), "h".to_string()];
        let values = vec![vec![2.0, 0.0, 0.0], vec![1.0, 1.0, 2.0]];
        let target = [0.1, 0.5, 0.9];
        let one = binned_profile(&ids, &values, &target, 1).unwrap();
        assert_eq!(one.probs.as_slice(), &[1.0, 1.0]);
        let two = binned_profile(&ids, &values, &target, 2).unwrap();
        // 0.5 sits on the midpoint edge and belongs to the upper bin.
        assert_eq!(two.probs.row(0), &[1.0, 0.0]);
        assert_eq!(two.probs.row(1), &[0.25, 0.75]);
        assert!(matches!(
            binned_profile(&ids, &values, &[1.0; 3], 2),
            Err(Error::DegenerateRange)
        ));
        let empty = vec![vec![0.0; 3], vec![1.0; 3]];
        assert!(matches!(
            binned_profile(&ids, &empty, &target, 2),
            Err(Error::EmptyGroup(_))
        ));
    }
}
