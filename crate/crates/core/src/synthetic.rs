//! Seeded corpus generators: unstructured random corpora for property
//! checks, and corpora with planted skill archetypes and scaling exponents.
//!
//! The planted generator fixes every city's total employment N first. Each
//! archetype except the designated remainder gets `share_a · N_min ·
//! (N / N_min)^β_a` workers; the remainder archetype takes what is left, so
//! the non-remainder exponents hold exactly against total employment.
//! Workers are split across the archetype's occupations present in the city
//! by fixed random weights, optionally jittered per city by lognormal noise. Every
//! occupation of archetype `a` has high importance on skill block `a` and
//! low importance elsewhere.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution as _, LogNormal, Normal};
use serde::Serialize;

use crate::corpus::{AutomationProbs, Corpus, CovariateRow, Covariates, EmploymentRow, ProbSource, SkillRow};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomConfig {
    pub cities: usize,
    pub occupations: usize,
    pub skills: usize,
    /// Chance an (occupation, city) cell is zero.
    pub zero_rate: f64,
    /// Chance an occupation has no automation probability.
    pub missing_prob_rate: f64,
    /// Chance an (occupation, skill) importance is present.
    pub skill_density: f64,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            cities: 12,
            occupations: 15,
            skills: 8,
            zero_rate: 0.3,
            missing_prob_rate: 0.1,
            skill_density: 0.6,
        }
    }
}

fn code(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:04}")
}

/// Random corpus. Occupation `o0000` always has a probability and skills
/// and employs workers in every city, so every city is covered.
pub fn random_corpus<T: Scalar>(config: &RandomConfig, seed: u64) -> Result<Corpus<T>> {
    if config.cities == 0 || config.occupations == 0 || config.skills == 0 {
        return Err(Error::InvalidConfig(
            "random corpus needs cities, occupations and skills".into(),
        ));
    }
    let mut rng = stream_rng(seed, 0);
    let mut employment = Vec::new();
    for c in 0..config.cities {
        let city = code("c", c);
        for o in 0..config.occupations {
            let zero = o > 0 && rng.gen_bool(config.zero_rate.clamp(0.0, 1.0));
            let workers = if zero {
                0.0
            } else {
                rng.gen_range(1.0..1000.0_f64).round()
            };
            employment.push(EmploymentRow {
                city_id: city.clone(),
                city_name: format!("City {c}"),
                occ_code: code("o", o),
                workers: T::lit(workers),
            });
        }
    }
    let mut skills = Vec::new();
    for o in 0..config.occupations {
        let mut any = false;
        for s in 0..config.skills {
            let force = o == 0 && s == 0;
            if force || rng.gen_bool(config.skill_density.clamp(0.0, 1.0)) {
                any = true;
                skills.push(SkillRow {
                    occ_code: code("o", o),
                    skill_id: code("s", s),
                    skill_name: format!("Skill {s}"),
                    importance: T::lit(rng.gen_range(0.01..1.0)),
                });
            }
        }
        if !any {
            skills.push(SkillRow {
                occ_code: code("o", o),
                skill_id: code("s", 0),
                skill_name: "Skill 0".into(),
                importance: T::lit(0.5),
            });
        }
    }
    let mut values = BTreeMap::new();
    for o in 0..config.occupations {
        let missing = rng.gen_bool(config.missing_prob_rate.clamp(0.0, 1.0));
        let p = rng.gen_range(0.0..=1.0);
        if o == 0 || !missing {
            values.insert(code("o", o), T::lit(p));
        }
    }
    let probs = AutomationProbs {
        source: ProbSource::FreyOsborne,
        values,
    };
    Corpus::from_rows(employment, skills, probs, vec![])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedConfig {
    pub cities: usize,
    pub occupations_per_archetype: usize,
    pub skills_per_archetype: usize,
    /// Scaling exponent of each archetype.
    pub betas: Vec<f64>,
    /// Share of employment in the smallest city (ignored for the remainder).
    pub base_shares: Vec<f64>,
    /// Mean automation probability of each archetype.
    pub p_auto: Vec<f64>,
    /// Archetype absorbing the rest of each city's employment.
    pub remainder: usize,
    /// Total employment of the smallest and largest city (log-uniform between).
    pub size_range: (f64, f64),
    /// σ of per-(occupation, city) lognormal noise on worker counts.
    pub count_noise: f64,
    /// Half-width of the uniform jitter on importances.
    pub skill_jitter: f64,
    /// Half-width of the uniform jitter on p_auto per occupation.
    pub p_jitter: f64,
    /// Chance an occupation is absent from the smallest city, falling
    /// linearly to 0 for the largest. The first occupation of every
    /// archetype is always present.
    pub absence_rate: f64,
}

impl Default for PlantedConfig {
    /// Five archetypes. The superlinear one is the least automatable and the
    /// sublinear ones the most, so small cities carry higher impact.
    fn default() -> Self {
        Self {
            cities: 120,
            occupations_per_archetype: 12,
            skills_per_archetype: 6,
            betas: vec![1.4, 1.1, 1.0, 0.9, 0.8],
            base_shares: vec![0.02, 0.1, 0.0, 0.15, 0.15],
            p_auto: vec![0.15, 0.35, 0.5, 0.75, 0.85],
            remainder: 2,
            size_range: (2.0e4, 2.0e7),
            count_noise: 0.05,
            skill_jitter: 0.05,
            p_jitter: 0.05,
            absence_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus<T> {
    pub corpus: Corpus<T>,
    /// Archetype of every occupation code.
    pub archetype: BTreeMap<String, usize>,
    pub config: PlantedConfig,
}

impl<T: Scalar> PlantedCorpus<T> {
    pub fn members(&self, archetype: usize) -> Vec<&str> {
        self.archetype
            .iter()
            .filter(|&(_, &a)| a == archetype)
            .map(|(o, _)| o.as_str())
            .collect()
    }
}

pub fn planted_corpus<T: Scalar>(config: &PlantedConfig, seed: u64) -> Result<PlantedCorpus<T>> {
    let k = config.betas.len();
    if k == 0 || config.base_shares.len() != k || config.p_auto.len() != k || config.remainder >= k {
        return Err(Error::InvalidConfig(
            "planted corpus needs matching betas, base_shares and p_auto and a valid remainder".into(),
        ));
    }
    if config.cities < 3 || config.occupations_per_archetype == 0 || config.skills_per_archetype == 0 {
        return Err(Error::InvalidConfig("planted corpus is too small".into()));
    }
    let (lo, hi) = config.size_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidConfig("size range must satisfy 0 < min < max".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let per = config.occupations_per_archetype;
    let occ = |a: usize, i: usize| format!("a{a}-o{i:03}");

    // Fixed within-archetype weights.
    let weights: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let w: Vec<f64> = (0..per).map(|_| rng.gen_range(0.5..1.5)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();

    let noise = LogNormal::new(0.0, config.count_noise.max(0.0))
        .map_err(|e| Error::InvalidConfig(format!("count noise: {e}")))?;
    let mut employment = Vec::new();
    let mut covariates = Vec::new();
    let income_noise = Normal::new(0.0, 0.05).expect("valid sigma");
    for c in 0..config.cities {
        let t = c as f64 / (config.cities - 1) as f64;
        let size = lo * (hi / lo).powf(t) * rng.gen_range(0.97..1.03);
        let ratio = size / lo;
        let mut totals: Vec<f64> = (0..k)
            .map(|a| {
                if a == config.remainder {
                    0.0
                } else {
                    config.base_shares[a] * lo * ratio.powf(config.betas[a])
                }
            })
            .collect();
        let used: f64 = totals.iter().sum();
        if used >= size {
            return Err(Error::InvalidConfig(format!(
                "archetype shares exceed city size {size:.0}; lower base_shares"
            )));
        }
        totals[config.remainder] = size - used;
        let city = format!("m{c:04}");
        for a in 0..k {
            let absent = config.absence_rate.clamp(0.0, 1.0) * (1.0 - t);
            let present: Vec<bool> = (0..per).map(|i| i == 0 || !rng.gen_bool(absent)).collect();
            let kept: f64 = (0..per).filter(|&i| present[i]).map(|i| weights[a][i]).sum();
            for i in 0..per {
                let jitter = if config.count_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    1.0
                };
                let workers = if present[i] {
                    totals[a] * weights[a][i] / kept * jitter
                } else {
                    0.0
                };
                employment.push(EmploymentRow {
                    city_id: city.clone(),
                    city_name: format!("Metro {c}"),
                    occ_code: occ(a, i),
                    workers: T::lit(workers),
                });
            }
        }
        let log_size = size.log10();
        covariates.push(CovariateRow {
            city_id: city,
            covariates: Covariates {
                total_employment: Some(T::lit(size)),
                median_income: Some(T::lit(
                    40_000.0 * (1.0 + 0.1 * log_size + income_noise.sample(&mut rng)),
                )),
                pct_bachelor: Some(T::lit(
                    (15.0 + 4.0 * log_size + rng.gen_range(-3.0..3.0)).clamp(0.0, 100.0),
                )),
                gdp_per_capita: Some(T::lit(
                    30_000.0 * 10f64.powf(0.05 * log_size + rng.gen_range(-0.05..0.05)),
                )),
            },
        });
    }

    let n_skills = k * config.skills_per_archetype;
    let mut skills = Vec::new();
    let mut probs = BTreeMap::new();
    let mut archetype = BTreeMap::new();
    for a in 0..k {
        for i in 0..per {
            let code = occ(a, i);
            for s in 0..n_skills {
                let base = if s / config.skills_per_archetype == a { 0.8 } else { 0.1 };
                let v = (base + rng.gen_range(-1.0..=1.0) * config.skill_jitter).clamp(0.01, 1.0);
                skills.push(SkillRow {
                    occ_code: code.clone(),
                    skill_id: format!("s{s:03}"),
                    skill_name: format!("Skill {s} (block {})", s / config.skills_per_archetype),
                    importance: T::lit(v),
                });
            }
            let p = (config.p_auto[a] + rng.gen_range(-1.0..=1.0) * config.p_jitter).clamp(0.0, 1.0);
            probs.insert(code.clone(), T::lit(p));
            archetype.insert(code, a);
        }
    }
    let corpus = Corpus::from_rows(
        employment,
        skills,
        AutomationProbs {
            source: ProbSource::FreyOsborne,
            values: probs,
        },
        covariates,
    )?;
    Ok(PlantedCorpus {
        corpus,
        archetype,
        config: config.clone(),
    })
}
