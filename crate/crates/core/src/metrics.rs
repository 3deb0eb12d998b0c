//! Per-city expected automation impact and the specialization measures:
//! normalized Shannon entropy of the job distribution, of each job's skill
//! distribution and of the city-aggregate skill distribution, and the Theil
//! index relating the latter two.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, ProbSource};
use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};

/// Discrete probability vector over named categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution<T> {
    keys: Vec<String>,
    probs: Vec<T>,
}

pub(crate) fn sum_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(1e3))
}

impl<T: Scalar> Distribution<T> {
    /// Wraps probabilities that already sum to one.
    pub fn new(keys: Vec<String>, probs: Vec<T>) -> Result<Self> {
        if keys.len() != probs.len() {
            return Err(Error::LengthMismatch {
                left: keys.len(),
                right: probs.len(),
            });
        }
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no categories".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= T::zero())) {
            return Err(Error::InvalidDistribution(format!("negative or NaN entry {p}")));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - T::one()).abs() > sum_tolerance() {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { keys, probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(keys: Vec<String>, weights: Vec<T>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= T::zero())) {
            return Err(Error::InvalidDistribution(format!("negative or NaN weight {w}")));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= T::zero() {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Self::new(keys, probs)
    }

    /// Uniform distribution, handy in tests and examples.
    pub fn uniform(keys: Vec<String>) -> Result<Self> {
        let n = keys.len();
        Self::from_weights(keys, vec![T::one(); n])
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn get(&self, key: &str) -> Option<T> {
        self.keys.iter().position(|k| k == key).map(|i| self.probs[i])
    }

    /// Number of strictly positive entries.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > T::zero()).count()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Normalized Shannon entropy of raw probabilities.
///
/// Zero entries are skipped and excluded from the support size K; K = 1
/// yields 0.
pub fn normalized_entropy<T: Scalar>(probs: &[T]) -> T {
    let support = probs.iter().filter(|&&p| p > T::zero()).count();
    if support <= 1 {
        return T::zero();
    }
    let h = -compensated_sum(probs.iter().filter(|&&p| p > T::zero()).map(|&p| p * p.ln()));
    let h = h / T::from_usize_lossy(support).ln();
    // Rounding can push a uniform distribution a hair past the bounds.
    h.max(T::zero()).min(T::one())
}

pub fn normalized_shannon_entropy<T: Scalar>(dist: &Distribution<T>) -> T {
    normalized_entropy(dist.probs())
}

/// Employment shares p_m(j) over every occupation with a row in the city.
pub fn employment_share<T: Scalar>(corpus: &Corpus<T>, city_id: &str) -> Result<Distribution<T>> {
    let city = corpus.city(city_id)?;
    let (keys, weights): (Vec<String>, Vec<T>) = city
        .employment()
        .iter()
        .map(|&(o, w)| (corpus.occupations()[o].clone(), w))
        .unzip();
    Distribution::from_weights(keys, weights).map_err(|_| Error::EmptyCity(city_id.to_string()))
}

/// Shares renormalized over occupations for which `keep` holds.
pub(crate) fn filtered_shares<T: Scalar>(
    employment: &[(usize, T)],
    keep: impl Fn(usize) -> bool,
) -> Option<Vec<(usize, T)>> {
    let kept: Vec<(usize, T)> = employment.iter().copied().filter(|&(o, _)| keep(o)).collect();
    let total = compensated_sum(kept.iter().map(|&(_, w)| w));
    if total <= T::zero() {
        return None;
    }
    Some(kept.into_iter().map(|(o, w)| (o, w / total)).collect())
}

/// Expected impact for one city given per-occupation probabilities. Shares
/// are renormalized over occupations with a probability.
pub(crate) fn impact_with<T: Scalar>(employment: &[(usize, T)], probs: &[Option<T>]) -> Option<T> {
    let shares = filtered_shares(employment, |o| probs[o].is_some())?;
    Some(compensated_sum(
        shares.iter().map(|&(o, s)| probs[o].expect("filtered to covered") * s),
    ))
}

/// E_m = Σ_j p_auto(j)·share_m(j), shares renormalized over covered occupations.
pub fn expected_impact<T: Scalar>(corpus: &Corpus<T>, city_id: &str, source: ProbSource) -> Result<T> {
    let city = corpus.city(city_id)?;
    let probs = corpus.probs(source)?;
    impact_with(city.employment(), probs).ok_or_else(|| Error::ZeroCoverage(city_id.to_string()))
}

/// Relative skill distribution p_j(s) of one occupation as sparse pairs.
fn relative_skills<T: Scalar>(corpus: &Corpus<T>, occ: usize) -> Option<Vec<(usize, T)>> {
    let row = corpus.importance(occ);
    let total = compensated_sum(row.iter().map(|&(_, v)| v));
    if total <= T::zero() {
        return None;
    }
    Some(row.iter().map(|&(s, v)| (s, v / total)).collect())
}

/// p_j(s) and its normalized entropy H_j.
pub fn job_skill_entropy<T: Scalar>(corpus: &Corpus<T>, occ_code: &str) -> Result<(Distribution<T>, T)> {
    let occ = corpus.occupation_index(occ_code)?;
    let rel = relative_skills(corpus, occ).ok_or_else(|| Error::AllZeroSkills(occ_code.to_string()))?;
    let (keys, probs): (Vec<String>, Vec<T>) = rel.iter().map(|&(s, p)| (corpus.skills()[s].clone(), p)).unzip();
    let h = normalized_entropy(&probs);
    Ok((Distribution::new(keys, probs)?, h))
}

/// Sparse (occupation, share) pairs.
type Shares<T> = Vec<(usize, T)>;

/// Precomputed p_j(s) and H_j for every skill-covered occupation.
#[derive(Debug, Clone)]
pub struct SkillProfiles<T> {
    relative: Vec<Option<Vec<(usize, T)>>>,
    entropy: Vec<Option<T>>,
    n_skills: usize,
}

impl<T: Scalar> SkillProfiles<T> {
    pub fn new(corpus: &Corpus<T>) -> Self {
        let relative: Vec<_> = (0..corpus.occupations().len())
            .map(|o| relative_skills(corpus, o))
            .collect();
        let entropy = relative
            .iter()
            .map(|r| {
                r.as_ref().map(|pairs| {
                    let ps: Vec<T> = pairs.iter().map(|&(_, p)| p).collect();
                    normalized_entropy(&ps)
                })
            })
            .collect();
        Self {
            relative,
            entropy,
            n_skills: corpus.skills().len(),
        }
    }

    pub fn job_entropy(&self, occ: usize) -> Option<T> {
        self.entropy[occ]
    }

    /// Skill-covered shares of a city (renormalized).
    fn shares(&self, employment: &[(usize, T)]) -> Option<Vec<(usize, T)>> {
        filtered_shares(employment, |o| self.relative[o].is_some())
    }

    /// Dense p_m(s) over all skills, plus the renormalized shares used.
    fn city_mixture(&self, employment: &[(usize, T)]) -> Option<(Vec<T>, Shares<T>)> {
        let shares = self.shares(employment)?;
        let mut terms: Vec<Vec<T>> = vec![Vec::new(); self.n_skills];
        for &(o, share) in &shares {
            for &(s, p) in self.relative[o].as_ref().expect("filtered to covered") {
                terms[s].push(p * share);
            }
        }
        let mix = terms.into_iter().map(compensated_sum).collect();
        Some((mix, shares))
    }
}

/// p_m(s) = Σ_j p_j(s)·p_m(j), keyed by every skill in the corpus.
pub fn city_skill_distribution<T: Scalar>(corpus: &Corpus<T>, city_id: &str) -> Result<Distribution<T>> {
    let city = corpus.city(city_id)?;
    let profiles = SkillProfiles::new(corpus);
    let (mix, _) = profiles
        .city_mixture(city.employment())
        .ok_or_else(|| Error::NoSkillCoverage(city_id.to_string()))?;
    Distribution::new(corpus.skills().to_vec(), mix)
}

/// Skill entropy and Theil index of one city; the flag marks H_skill = 0.
fn skill_entropy_and_theil<T: Scalar>(
    profiles: &SkillProfiles<T>,
    employment: &[(usize, T)],
    city_id: &str,
) -> Result<(T, T, bool)> {
    let (mix, shares) = profiles
        .city_mixture(employment)
        .ok_or_else(|| Error::NoSkillCoverage(city_id.to_string()))?;
    let h_skill = normalized_entropy(&mix);
    if h_skill <= T::zero() {
        return Ok((h_skill, T::zero(), true));
    }
    let t = compensated_sum(shares.iter().map(|&(o, share)| {
        let h_j = profiles.entropy[o].expect("filtered to covered");
        share * (h_skill - h_j) / h_skill
    }));
    Ok((h_skill, t, false))
}

/// T_m = Σ_j p_m(j)·(H_skill(m) − H_j)/H_skill(m). Returns 0 when H_skill(m) = 0.
pub fn theil<T: Scalar>(corpus: &Corpus<T>, city_id: &str) -> Result<T> {
    let city = corpus.city(city_id)?;
    let profiles = SkillProfiles::new(corpus);
    skill_entropy_and_theil(&profiles, city.employment(), city_id).map(|(_, t, _)| t)
}

/// Every per-city measure in one row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityMetrics<T> {
    pub city_id: String,
    pub size: T,
    #[serde(rename = "E")]
    pub e: T,
    #[serde(rename = "H_job")]
    pub h_job: T,
    #[serde(rename = "H_skill")]
    pub h_skill: T,
    #[serde(rename = "T")]
    pub t: T,
    pub one_minus_t: T,
    pub coverage: T,
    /// Set when H_skill = 0 and T was defined as 0.
    #[serde(skip)]
    pub degenerate_theil: bool,
}

pub fn city_metrics_table<T: Scalar>(corpus: &Corpus<T>, source: ProbSource) -> Result<Vec<CityMetrics<T>>> {
    let probs = corpus.probs(source)?;
    let profiles = SkillProfiles::new(corpus);
    corpus
        .cities()
        .par_iter()
        .map(|city| {
            let emp = city.employment();
            let size = city.size();
            let e = impact_with(emp, probs).ok_or_else(|| Error::ZeroCoverage(city.id.clone()))?;
            let shares: Vec<T> = emp.iter().map(|&(_, w)| w / size).collect();
            let h_job = normalized_entropy(&shares);
            let (h_skill, t, degenerate) = skill_entropy_and_theil(&profiles, emp, &city.id)?;
            let covered = compensated_sum(emp.iter().filter(|&&(o, _)| probs[o].is_some()).map(|&(_, w)| w));
            Ok(CityMetrics {
                city_id: city.id.clone(),
                size,
                e,
                h_job,
                h_skill,
                t,
                one_minus_t: T::one() - t,
                coverage: covered / size,
                degenerate_theil: degenerate,
            })
        })
        .collect()
}
