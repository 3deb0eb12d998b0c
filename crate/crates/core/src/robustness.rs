//! Monte-Carlo checks of the size–impact correlation: uniform noise on the
//! automation probabilities, and random removal of occupations.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, ProbSource};
use crate::error::{Error, Result};
use crate::metrics::impact_with;
use crate::rng::stream_rng;
use crate::scalar::{compensated_sum, percentile, Scalar};
use crate::stats::pearson;

pub const DEFAULT_ROBUSTNESS_TRIALS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Noise,
    Removal,
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Noise => "noise",
            Experiment::Removal => "removal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessTrial<T> {
    pub trial: usize,
    /// `None` when the trial is flagged.
    pub r: Option<T>,
    /// Fraction of perturbed probabilities that were clamped into [0, 1].
    pub clamp_rate: T,
    /// Cities left without any covered employment by a removal.
    pub uncovered_cities: usize,
    /// Set when every city ended up with the same E*, so r is undefined.
    pub constant_impact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRun<T> {
    pub experiment: Experiment,
    /// Noise half-width or removal fraction.
    pub parameter: f64,
    pub seed: u64,
    /// Unperturbed Pearson r of log10 size vs E.
    pub baseline_r: T,
    pub trials: Vec<RobustnessTrial<T>>,
}

impl<T: Scalar> RobustnessRun<T> {
    /// r of every unflagged trial, in trial order.
    pub fn correlations(&self) -> Vec<T> {
        self.trials.iter().filter_map(|t| t.r).collect()
    }

    pub fn summary(&self) -> RobustnessSummary<T> {
        let rs = self.correlations();
        let mut sorted = rs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite r"));
        let mean = if rs.is_empty() {
            T::nan()
        } else {
            compensated_sum(rs.iter().copied()) / T::from_usize_lossy(rs.len())
        };
        RobustnessSummary {
            experiment: self.experiment,
            parameter: self.parameter,
            trials: self.trials.len(),
            valid: rs.len(),
            baseline_r: self.baseline_r,
            mean,
            p025: percentile(&sorted, 0.025),
            p975: percentile(&sorted, 0.975),
            non_negative: rs.iter().filter(|&&r| r >= T::zero()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessSummary<T> {
    pub experiment: Experiment,
    pub parameter: f64,
    pub trials: usize,
    pub valid: usize,
    pub baseline_r: T,
    pub mean: T,
    pub p025: T,
    pub p975: T,
    /// Trials whose correlation was zero or positive.
    pub non_negative: usize,
}

type Employment<'a, T> = &'a [(usize, T)];

/// Log10 sizes and employment of the analysis cities.
fn city_inputs<T: Scalar>(corpus: &Corpus<T>) -> (Vec<T>, Vec<Employment<'_, T>>) {
    corpus
        .analysis_cities()
        .into_iter()
        .map(|i| {
            let c = &corpus.cities()[i];
            (c.size().log10(), c.employment())
        })
        .unzip()
}

/// E per analysis city under `probs`; `None` for cities with no covered
/// employment.
pub fn impacts_under<T: Scalar>(corpus: &Corpus<T>, probs: &[Option<T>]) -> Vec<Option<T>> {
    let (_, employment) = city_inputs(corpus);
    employment.iter().map(|e| impact_with(e, probs)).collect()
}

fn trial_outcome<T: Scalar>(
    trial: usize,
    log_sizes: &[T],
    impacts: Vec<Option<T>>,
    clamp_rate: T,
) -> Result<RobustnessTrial<T>> {
    let uncovered = impacts.iter().filter(|e| e.is_none()).count();
    let mut outcome = RobustnessTrial {
        trial,
        r: None,
        clamp_rate,
        uncovered_cities: uncovered,
        constant_impact: false,
    };
    if uncovered > 0 {
        return Ok(outcome);
    }
    let e: Vec<T> = impacts.into_iter().flatten().collect();
    match pearson(log_sizes, &e) {
        Ok(c) => outcome.r = Some(c.r),
        Err(Error::ZeroVariance(ref which)) if which == "y" => outcome.constant_impact = true,
        Err(err) => return Err(err),
    }
    Ok(outcome)
}

fn baseline<T: Scalar>(corpus: &Corpus<T>, probs: &[Option<T>]) -> Result<T> {
    let (log_sizes, _) = city_inputs(corpus);
    let out = trial_outcome(0, &log_sizes, impacts_under(corpus, probs), T::zero())?;
    out.r
        .ok_or_else(|| Error::Invariant("baseline correlation is undefined".into()))
}

/// Probabilities of noise trial `trial`: each covered p plus U[−error, +error],
/// clamped to [0, 1]. Also returns how many values needed clamping.
pub fn perturb_probs<T: Scalar>(probs: &[Option<T>], error: f64, seed: u64, trial: usize) -> (Vec<Option<T>>, usize) {
    let mut rng = stream_rng(seed, trial as u64);
    let mut clamped = 0usize;
    let perturbed = probs
        .iter()
        .map(|p| {
            let e = if error > 0.0 {
                rng.gen_range(-error..=error)
            } else {
                0.0
            };
            p.map(|p| {
                let v = p + T::lit(e);
                if v < T::zero() || v > T::one() {
                    clamped += 1;
                }
                v.max(T::zero()).min(T::one())
            })
        })
        .collect();
    (perturbed, clamped)
}

/// Adds e_j ~ U[−error, +error] to every occupation's probability, clamps to
/// [0, 1] and correlates log10 size with the recomputed E*. Trial `t` draws
/// from stream `t`, so trial results do not depend on the trial count.
pub fn noise_experiment<T: Scalar>(
    corpus: &Corpus<T>,
    source: ProbSource,
    error: f64,
    trials: usize,
    seed: u64,
) -> Result<RobustnessRun<T>> {
    if !(error >= 0.0) || !error.is_finite() {
        return Err(Error::NegativeError(error));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let probs = corpus.probs(source)?;
    let (log_sizes, _) = city_inputs(corpus);
    let baseline_r = baseline(corpus, probs)?;
    let covered = probs.iter().filter(|p| p.is_some()).count().max(1);
    let out = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (perturbed, clamped) = perturb_probs(probs, error, seed, t);
            let rate = T::from_usize_lossy(clamped) / T::from_usize_lossy(covered);
            trial_outcome(t, &log_sizes, impacts_under(corpus, &perturbed), rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessRun {
        experiment: Experiment::Noise,
        parameter: error,
        seed,
        baseline_r,
        trials: out,
    })
}

/// Drops ⌊fraction · #occupations⌋ occupations chosen uniformly without
/// replacement, renormalizes shares over what remains, and correlates.
/// Trials that leave some city without covered employment are flagged.
pub fn removal_experiment<T: Scalar>(
    corpus: &Corpus<T>,
    source: ProbSource,
    fraction: f64,
    trials: usize,
    seed: u64,
) -> Result<RobustnessRun<T>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::FractionOutOfRange(fraction));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let probs = corpus.probs(source)?;
    let (log_sizes, _) = city_inputs(corpus);
    let baseline_r = baseline(corpus, probs)?;
    let n = probs.len();
    let remove = (fraction * n as f64).floor() as usize;
    let out = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let mut kept = probs.to_vec();
            for o in sample(&mut rng, n, remove) {
                kept[o] = None;
            }
            trial_outcome(t, &log_sizes, impacts_under(corpus, &kept), T::zero())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessRun {
        experiment: Experiment::Removal,
        parameter: fraction,
        seed,
        baseline_r,
        trials: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AutomationProbs, EmploymentRow, SkillRow};

    fn corpus() -> Corpus<f64> {
        let table = [
            ("c1", "A", 10.0),
            ("c1", "B", 30.0),
            ("c2", "A", 50.0),
            ("c2", "B", 20.0),
            ("c2", "C", 30.0),
            ("c3", "A", 300.0),
            ("c3", "C", 100.0),
            ("c4", "B", 100.0),
            ("c4", "C", 900.0),
        ];
        let emp = table
            .iter()
            .map(|&(c, o, w)| EmploymentRow {
                city_id: c.into(),
                city_name: c.into(),
                occ_code: o.into(),
                workers: w,
            })
            .collect();
        let skills = ["A", "B", "C"]
            .iter()
            .map(|o| SkillRow {
                occ_code: o.to_string(),
                skill_id: "s".into(),
                skill_name: "s".into(),
                importance: 0.5,
            })
            .collect();
        let probs = AutomationProbs {
            source: ProbSource::FreyOsborne,
            values: [("A", 0.9), ("B", 0.5), ("C", 0.1)]
                .iter()
                .map(|&(o, p)| (o.to_string(), p))
                .collect(),
        };
        Corpus::from_rows(emp, skills, probs, vec![]).unwrap()
    }

    #[test]
    fn zero_perturbation_reproduces_baseline_bitwise() {
        let c = corpus();
        let noise = noise_experiment(&c, ProbSource::FreyOsborne, 0.0, 20, 3).unwrap();
        let removal = removal_experiment(&c, ProbSource::FreyOsborne, 0.0, 20, 3).unwrap();
        for run in [&noise, &removal] {
            assert!(run
                .trials
                .iter()
                .all(|t| t.r.map(f64::to_bits) == Some(run.baseline_r.to_bits())));
        }
    }

    #[test]
    fn trial_prefix_is_stable() {
        let c = corpus();
        let short = noise_experiment(&c, ProbSource::FreyOsborne, 0.2, 5, 8).unwrap();
        let long = noise_experiment(&c, ProbSource::FreyOsborne, 0.2, 12, 8).unwrap();
        assert_eq!(short.trials[..], long.trials[..5]);
        assert!(long.trials.iter().any(|t| t.r != Some(long.baseline_r)));
    }

    #[test]
    fn clamping_is_counted() {
        let c = corpus();
        let run = noise_experiment(&c, ProbSource::FreyOsborne, 5.0, 10, 1).unwrap();
        assert!(run.trials.iter().all(|t| t.clamp_rate > 0.0));
        for t in &run.trials {
            if let Some(r) = t.r {
                assert!((-1.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let c = corpus();
        assert!(matches!(
            noise_experiment(&c, ProbSource::FreyOsborne, -0.1, 1, 1),
            Err(Error::NegativeError(_))
        ));
        assert!(matches!(
            removal_experiment(&c, ProbSource::FreyOsborne, 1.0, 1, 1),
            Err(Error::FractionOutOfRange(_))
        ));
    }

    #[test]
    fn removing_all_but_one_occupation() {
        let c = corpus();
        // Only A survives: c1, c2, c3 have E = 0.9 and c4 has no coverage.
        let kept = [Some(0.9), None, None];
        assert_eq!(impacts_under(&c, &kept), vec![Some(0.9), Some(0.9), Some(0.9), None]);
        // Two of three occupations go in every trial.
        let run = removal_experiment(&c, ProbSource::FreyOsborne, 0.7, 30, 2).unwrap();
        for t in &run.trials {
            assert!(t.r.is_none());
            assert!(t.uncovered_cities > 0 || t.constant_impact);
        }
    }

    #[test]
    fn removal_by_hand() {
        let c = corpus();
        // Dropping C leaves E = (0.75, 0.8142857, 0.9, 0.5).
        let kept = [Some(0.9), Some(0.5), None];
        let e: Vec<f64> = impacts_under(&c, &kept).into_iter().flatten().collect();
        let want = [
            (10.0 * 0.9 + 30.0 * 0.5) / 40.0,
            (50.0 * 0.9 + 20.0 * 0.5) / 70.0,
            0.9,
            0.5,
        ];
        for (a, b) in e.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
