//! Power-law scaling of employment aggregates with city size:
//! `count ∝ size^β`, fitted by OLS in log10–log10 space.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{job_feature_matrix, kmeans, KMeansOptions};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::grouping::{group_order, Grouping, UNASSIGNED};
use crate::rng::{stream_rng, trial_stream};
use crate::scalar::{compensated_sum, mean, percentile, Scalar};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit<T> {
    pub series_id: String,
    pub beta: T,
    /// Intercept of the log10 fit.
    pub intercept: T,
    pub stderr_beta: T,
    pub r2: T,
    pub n: usize,
    /// Points skipped because the count was zero.
    pub dropped_zero: usize,
}

/// Least squares of `log10(count)` on `log10(size)`. Zero counts are skipped
/// and tallied in `dropped_zero`.
pub fn fit_power_law<T: Scalar>(series_id: &str, sizes: &[T], counts: &[T]) -> Result<ScalingFit<T>> {
    let (xs, ys, dropped) = log_points(sizes, counts)?;
    let mut fit = fit_logs(&xs, &ys)?;
    fit.series_id = series_id.to_string();
    fit.dropped_zero = dropped;
    Ok(fit)
}

fn log_points<T: Scalar>(sizes: &[T], counts: &[T]) -> Result<(Vec<T>, Vec<T>, usize)> {
    if sizes.len() != counts.len() {
        return Err(Error::LengthMismatch {
            left: sizes.len(),
            right: counts.len(),
        });
    }
    let mut xs = Vec::with_capacity(sizes.len());
    let mut ys = Vec::with_capacity(sizes.len());
    let mut dropped = 0;
    for (i, (&s, &c)) in sizes.iter().zip(counts).enumerate() {
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::NonPositiveValue {
                index: i,
                value: s.as_f64(),
            });
        }
        if c == T::zero() {
            dropped += 1;
            continue;
        }
        if !(c > T::zero()) || !c.is_finite() {
            return Err(Error::NonPositiveValue {
                index: i,
                value: c.as_f64(),
            });
        }
        xs.push(s.log10());
        ys.push(c.log10());
    }
    Ok((xs, ys, dropped))
}

fn fit_logs<T: Scalar>(xs: &[T], ys: &[T]) -> Result<ScalingFit<T>> {
    let n = xs.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx = compensated_sum(xs.iter().map(|&x| (x - mx) * (x - mx)));
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)));
    let syy = compensated_sum(ys.iter().map(|&y| (y - my) * (y - my)));
    if !(sxx > T::zero()) {
        return Err(Error::ZeroVariance("log10 size".into()));
    }
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let ssr = compensated_sum(xs.iter().zip(ys).map(|(&x, &y)| (y - intercept - beta * x).powi(2)));
    let stderr_beta = (ssr / T::from_usize_lossy(n - 2) / sxx).sqrt();
    // A constant series is fitted exactly by a flat line.
    let r2 = if syy > T::zero() {
        (T::one() - ssr / syy).max(T::zero()).min(T::one())
    } else {
        T::one()
    };
    Ok(ScalingFit {
        series_id: String::new(),
        beta,
        intercept,
        stderr_beta,
        r2,
        n,
        dropped_zero: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult<T> {
    /// β of every usable resample, in resample order.
    pub samples: Vec<T>,
    /// Resamples discarded because every drawn city had the same size.
    pub degenerate: usize,
    pub stderr: T,
    pub ci_lo: T,
    pub ci_hi: T,
}

/// Case-resampling bootstrap of β over cities with a 95% percentile interval.
pub fn bootstrap_power_law<T: Scalar>(
    sizes: &[T],
    counts: &[T],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult<T>> {
    let (xs, ys, _) = log_points(sizes, counts)?;
    fit_logs(&xs, &ys)?;
    let n = xs.len();
    let draws: Vec<Option<T>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let mut bx = Vec::with_capacity(n);
            let mut by = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                bx.push(xs[i]);
                by.push(ys[i]);
            }
            fit_logs(&bx, &by).ok().map(|f| f.beta)
        })
        .collect();
    let samples: Vec<T> = draws.iter().flatten().copied().collect();
    let degenerate = resamples - samples.len();
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite betas"));
    let stderr = if samples.len() > 1 {
        let m = mean(&samples);
        (compensated_sum(samples.iter().map(|&b| (b - m) * (b - m))) / T::from_usize_lossy(samples.len() - 1)).sqrt()
    } else {
        T::nan()
    };
    Ok(BootstrapResult {
        stderr,
        ci_lo: percentile(&sorted, 0.025),
        ci_hi: percentile(&sorted, 0.975),
        samples,
        degenerate,
    })
}

/// Total employment of each analysis city, in corpus order.
pub fn city_sizes<T: Scalar>(corpus: &Corpus<T>) -> (Vec<String>, Vec<T>) {
    corpus
        .analysis_cities()
        .into_iter()
        .map(|i| {
            let c = &corpus.cities()[i];
            (c.id.clone(), c.size())
        })
        .unzip()
}

/// Workers per analysis city summed within each group of `labels`
/// (indexed by occupation; `None` = not counted).
fn group_counts<T: Scalar>(corpus: &Corpus<T>, labels: &[Option<usize>], groups: usize) -> Vec<Vec<T>> {
    let cities = corpus.analysis_cities();
    let mut out = vec![Vec::with_capacity(cities.len()); groups];
    for &ci in &cities {
        let mut parts: Vec<Vec<T>> = vec![Vec::new(); groups];
        for &(o, w) in corpus.cities()[ci].employment() {
            if let Some(g) = labels[o] {
                parts[g].push(w);
            }
        }
        for (g, p) in parts.into_iter().enumerate() {
            out[g].push(compensated_sum(p));
        }
    }
    out
}

fn label_occupations<T: Scalar>(
    corpus: &Corpus<T>,
    grouping: &Grouping,
    keep_unassigned: bool,
) -> (Vec<String>, Vec<Option<usize>>) {
    let raw: Vec<&str> = corpus.occupations().iter().map(|o| grouping.group_of(o)).collect();
    let mut ids: Vec<String> = raw
        .iter()
        .filter(|g| keep_unassigned || **g != UNASSIGNED)
        .map(|g| g.to_string())
        .collect();
    ids.sort_by(|a, b| group_order(a, b));
    ids.dedup();
    let labels = raw.iter().map(|g| ids.iter().position(|x| x == g)).collect();
    (ids, labels)
}

/// Workers per analysis city in each group, groups in [`group_order`].
/// Occupations absent from `grouping` are pooled under [`UNASSIGNED`].
pub fn cluster_counts<T: Scalar>(corpus: &Corpus<T>, grouping: &Grouping) -> (Vec<String>, Vec<Vec<T>>) {
    let (ids, labels) = label_occupations(corpus, grouping, true);
    let counts = group_counts(corpus, &labels, ids.len());
    (ids, counts)
}

/// β per group: each group's series is the number of workers in its member
/// occupations, per city. Occupations absent from `grouping` are pooled
/// under [`UNASSIGNED`].
pub fn cluster_scaling<T: Scalar>(corpus: &Corpus<T>, grouping: &Grouping) -> Result<BTreeMap<String, ScalingFit<T>>> {
    scale_groups(corpus, grouping, true)
}

fn scale_groups<T: Scalar>(
    corpus: &Corpus<T>,
    grouping: &Grouping,
    keep_unassigned: bool,
) -> Result<BTreeMap<String, ScalingFit<T>>> {
    let (_, sizes) = city_sizes(corpus);
    let (ids, labels) = label_occupations(corpus, grouping, keep_unassigned);
    let counts = group_counts(corpus, &labels, ids.len());
    ids.iter()
        .zip(counts)
        .map(|(id, c)| Ok((id.clone(), fit_power_law(id, &sizes, &c)?)))
        .collect()
}

/// Per-occupation fits. Occupations with fewer than three non-zero cities
/// are returned in the second list.
pub fn occupation_scaling<T: Scalar>(corpus: &Corpus<T>) -> Result<(Vec<ScalingFit<T>>, Vec<String>)> {
    let (_, sizes) = city_sizes(corpus);
    let n = corpus.occupations().len();
    let labels: Vec<Option<usize>> = (0..n).map(Some).collect();
    let counts = group_counts(corpus, &labels, n);
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (code, c) in corpus.occupations().iter().zip(counts) {
        match fit_power_law(code, &sizes, &c) {
            Ok(f) => fits.push(f),
            Err(Error::TooFewPoints { .. }) | Err(Error::ZeroVariance(_)) => skipped.push(code.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok((fits, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCluster<T> {
    pub beta: T,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityResult<T> {
    pub subsample_rate: f64,
    pub trials: usize,
    /// `beta_by_rank[r][t]`: β of the rank-`r` cluster (descending β) in trial `t`.
    pub beta_by_rank: Vec<Vec<T>>,
    /// Ranked clusters of every trial, in trial order.
    pub trial_clusters: Vec<Vec<RankedCluster<T>>>,
}

/// Re-clusters uniformly subsampled occupations and refits cluster βs, for
/// each rate and trial. The subsample uses the stream of `(rate index,
/// trial)`; k-means always uses `seed`. A subsample never has fewer than `k`
/// occupations.
pub fn scaling_stability<T: Scalar>(
    corpus: &Corpus<T>,
    k: usize,
    rates: &[f64],
    trials: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<Vec<StabilityResult<T>>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if let Some(&r) = rates.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::RateOutOfRange(r));
    }
    let covered = corpus.skill_covered_occupations();
    rates
        .iter()
        .enumerate()
        .map(|(ri, &rate)| {
            let take = ((rate * covered.len() as f64).round() as usize)
                .clamp(k.min(covered.len()).max(1), covered.len().max(1));
            let per_trial: Vec<Vec<RankedCluster<T>>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(seed, trial_stream(ri, t));
                    let mut picked: Vec<usize> = sample(&mut rng, covered.len(), take)
                        .into_iter()
                        .map(|i| covered[i])
                        .collect();
                    picked.sort_unstable();
                    ranked_clusters(corpus, &picked, k, seed, opts)
                })
                .collect::<Result<_>>()?;
            let mut beta_by_rank = vec![Vec::with_capacity(trials); k];
            for ranked in &per_trial {
                for (r, c) in ranked.iter().enumerate() {
                    beta_by_rank[r].push(c.beta);
                }
            }
            Ok(StabilityResult {
                subsample_rate: rate,
                trials,
                beta_by_rank,
                trial_clusters: per_trial,
            })
        })
        .collect()
}

fn ranked_clusters<T: Scalar>(
    corpus: &Corpus<T>,
    occupations: &[usize],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<Vec<RankedCluster<T>>> {
    let features = job_feature_matrix(corpus, Some(occupations));
    let assignment = kmeans(&features, k, seed, opts)?;
    let grouping = assignment.grouping();
    let fits = scale_groups(corpus, &grouping, false)?;
    let mut ranked: Vec<RankedCluster<T>> = fits
        .into_iter()
        .map(|(id, f)| RankedCluster {
            beta: f.beta,
            members: grouping.members_of(&id).into_iter().map(String::from).collect(),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.beta
            .partial_cmp(&a.beta)
            .expect("finite betas")
            .then_with(|| a.members.cmp(&b.members))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLogPoint<T> {
    pub city_id: String,
    pub log_size: T,
    pub log_count: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLogSeries<T> {
    pub cluster_id: String,
    pub fit: ScalingFit<T>,
    pub points: Vec<LogLogPoint<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLogPlot<T> {
    pub normalized: bool,
    pub series: Vec<LogLogSeries<T>>,
    /// Endpoints of the slope-1 reference line.
    pub reference: [(T, T); 2],
}

/// Log-log points per group. With `normalize_shift` each series is moved
/// down by its own fitted intercept so every fit line passes through the
/// origin.
pub fn loglog_plot_points<T: Scalar>(
    corpus: &Corpus<T>,
    grouping: &Grouping,
    normalize_shift: bool,
) -> Result<LogLogPlot<T>> {
    let (city_ids, sizes) = city_sizes(corpus);
    let (ids, labels) = label_occupations(corpus, grouping, true);
    let counts = group_counts(corpus, &labels, ids.len());
    let mut series = Vec::with_capacity(ids.len());
    for (id, c) in ids.iter().zip(&counts) {
        let fit = fit_power_law(id, &sizes, c)?;
        let shift = if normalize_shift { fit.intercept } else { T::zero() };
        let points = city_ids
            .iter()
            .zip(&sizes)
            .zip(c)
            .filter(|(_, &w)| w > T::zero())
            .map(|((city, &s), &w)| LogLogPoint {
                city_id: city.clone(),
                log_size: s.log10(),
                log_count: w.log10() - shift,
            })
            .collect();
        series.push(LogLogSeries {
            cluster_id: id.clone(),
            fit,
            points,
        });
    }

    let all = || series.iter().flat_map(|s| s.points.iter());
    let lo = all().map(|p| p.log_size).fold(T::infinity(), T::min);
    let hi = all().map(|p| p.log_size).fold(T::neg_infinity(), T::max);
    let offset = if normalize_shift {
        T::zero()
    } else {
        let gaps: Vec<T> = all().map(|p| p.log_count - p.log_size).collect();
        mean(&gaps)
    };
    Ok(LogLogPlot {
        normalized: normalize_shift,
        reference: [(lo, lo + offset), (hi, hi + offset)],
        series,
    })
}
