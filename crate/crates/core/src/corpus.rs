//! Ingest and validation of the four input tables: employment counts per
//! (city, occupation), raw skill importances per (occupation, skill),
//! automation probabilities per occupation, and city covariates.
//!
//! Keys are opaque strings. Every index (cities, occupations, skills) is
//! sorted and duplicate-free, so iteration order is deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grouping::csv_error;
use crate::scalar::{compensated_sum, Scalar};

/// Origin of an automation-probability table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbSource {
    FreyOsborne,
    Oecd,
    Custom,
}

impl fmt::Display for ProbSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbSource::FreyOsborne => "frey_osborne",
            ProbSource::Oecd => "oecd",
            ProbSource::Custom => "custom",
        })
    }
}

impl FromStr for ProbSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frey_osborne" => Ok(ProbSource::FreyOsborne),
            "oecd" => Ok(ProbSource::Oecd),
            "custom" => Ok(ProbSource::Custom),
            other => Err(Error::InvalidConfig(format!(
                "unknown probability source `{other}` (expected frey_osborne, oecd or custom)"
            ))),
        }
    }
}

/// Per-occupation automation probabilities from one source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutomationProbs<T> {
    pub source: ProbSource,
    pub values: BTreeMap<String, T>,
}

/// City-level covariates. Any field may be missing; regression drops
/// cities with gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Covariates<T> {
    pub total_employment: Option<T>,
    pub median_income: Option<T>,
    pub pct_bachelor: Option<T>,
    pub gdp_per_capita: Option<T>,
}

impl<T: Scalar> Covariates<T> {
    pub fn is_complete(&self) -> bool {
        self.total_employment.is_some()
            && self.median_income.is_some()
            && self.pct_bachelor.is_some()
            && self.gdp_per_capita.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct City<T> {
    pub id: String,
    pub name: String,
    /// `true` for pseudo-cities built by [`Corpus::aggregate_cities`]; these
    /// are skipped by cross-city analyses.
    pub aggregate: bool,
    pub covariates: Option<Covariates<T>>,
    /// `(occupation index, workers)` sorted by occupation index.
    employment: Vec<(usize, T)>,
}

impl<T: Scalar> City<T> {
    pub fn employment(&self) -> &[(usize, T)] {
        &self.employment
    }

    /// Sum of workers over all occupations (city size N).
    pub fn size(&self) -> T {
        compensated_sum(self.employment.iter().map(|&(_, w)| w))
    }

    /// Number of occupations with at least one worker.
    pub fn unique_jobs(&self) -> usize {
        self.employment.iter().filter(|&&(_, w)| w > T::zero()).count()
    }
}

/// Coverage of one city's employment by probability and skill data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityCoverage {
    pub city_id: String,
    /// Fraction of workers whose occupation has an automation probability.
    pub prob_coverage: f64,
    /// Fraction of workers whose occupation has skill data.
    pub skill_coverage: f64,
}

/// What was excluded or left uncovered while joining the tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoverageReport {
    pub cities: Vec<CityCoverage>,
    /// Occupations in the employment table with no probability entry.
    pub missing_probs: Vec<String>,
    /// Occupations in the employment table with no positive skill importance.
    pub skill_uncovered: Vec<String>,
    /// Cities dropped because every employment row had zero workers.
    pub dropped_cities: Vec<String>,
    /// Occupations present only in the skill table (ignored).
    pub skill_only_occupations: Vec<String>,
    /// Occupations present only in the probability table (ignored).
    pub prob_only_occupations: Vec<String>,
    /// Covariate rows whose city is absent from the employment table.
    pub unknown_covariate_cities: Vec<String>,
}

/// Input file locations. Covariates and clusters are optional.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusPaths {
    pub employment: PathBuf,
    pub skills: PathBuf,
    pub probs: PathBuf,
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub prob_source: ProbSource,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            prob_source: ProbSource::FreyOsborne,
        }
    }
}

/// The joined, validated analytical corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corpus<T> {
    cities: Vec<City<T>>,
    occupations: Vec<String>,
    skills: Vec<String>,
    skill_names: Vec<String>,
    /// Positive importances per occupation: `(skill index, importance)`.
    importance: Vec<Vec<(usize, T)>>,
    probs: BTreeMap<ProbSource, Vec<Option<T>>>,
    primary_source: ProbSource,
    coverage: CoverageReport,
}

// Raw rows, used by both CSV loading and programmatic construction.

#[derive(Debug, Clone)]
pub struct EmploymentRow<T> {
    pub city_id: String,
    pub city_name: String,
    pub occ_code: String,
    pub workers: T,
}

#[derive(Debug, Clone)]
pub struct SkillRow<T> {
    pub occ_code: String,
    pub skill_id: String,
    pub skill_name: String,
    pub importance: T,
}

#[derive(Debug, Clone)]
pub struct CovariateRow<T> {
    pub city_id: String,
    pub covariates: Covariates<T>,
}

impl<T: Scalar> Corpus<T> {
    /// Joins already-validated rows. Used by the CSV loader and by the
    /// synthetic generators.
    pub fn from_rows(
        employment: Vec<EmploymentRow<T>>,
        skills: Vec<SkillRow<T>>,
        probs: AutomationProbs<T>,
        covariates: Vec<CovariateRow<T>>,
    ) -> Result<Self> {
        if employment.is_empty() {
            return Err(Error::EmptyTable {
                file: "employment".into(),
            });
        }
        if skills.is_empty() {
            return Err(Error::EmptyTable { file: "skills".into() });
        }
        if probs.values.is_empty() {
            return Err(Error::EmptyTable { file: "probs".into() });
        }

        // Cities with at least one positive row are retained.
        let mut city_rows: BTreeMap<String, (String, BTreeMap<String, T>)> = BTreeMap::new();
        for row in &employment {
            let entry = city_rows
                .entry(row.city_id.clone())
                .or_insert_with(|| (row.city_name.clone(), BTreeMap::new()));
            if entry.1.insert(row.occ_code.clone(), row.workers).is_some() {
                return Err(Error::DuplicateKey {
                    file: "employment".into(),
                    row: 0,
                    key: format!("{}/{}", row.city_id, row.occ_code),
                });
            }
        }
        let mut dropped_cities = Vec::new();
        city_rows.retain(|id, (_, occs)| {
            let keep = occs.values().any(|&w| w > T::zero());
            if !keep {
                dropped_cities.push(id.clone());
            }
            keep
        });
        if city_rows.is_empty() {
            return Err(Error::EmptyTable {
                file: "employment".into(),
            });
        }

        let occupations: Vec<String> = city_rows
            .values()
            .flat_map(|(_, occs)| occs.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let occ_index: BTreeMap<&str, usize> = occupations.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();

        // Skills: only occupations present in employment are joined.
        let mut skill_table: BTreeMap<String, String> = BTreeMap::new();
        let mut occ_skills: BTreeMap<String, BTreeMap<String, T>> = BTreeMap::new();
        let mut skill_only = BTreeSet::new();
        for row in &skills {
            skill_table
                .entry(row.skill_id.clone())
                .or_insert_with(|| row.skill_name.clone());
            if !occ_index.contains_key(row.occ_code.as_str()) {
                skill_only.insert(row.occ_code.clone());
                continue;
            }
            let per_occ = occ_skills.entry(row.occ_code.clone()).or_default();
            if per_occ.insert(row.skill_id.clone(), row.importance).is_some() {
                return Err(Error::DuplicateKey {
                    file: "skills".into(),
                    row: 0,
                    key: format!("{}/{}", row.occ_code, row.skill_id),
                });
            }
        }
        let skills_sorted: Vec<String> = skill_table.keys().cloned().collect();
        let skill_names: Vec<String> = skill_table.values().cloned().collect();
        let skill_index: BTreeMap<&str, usize> =
            skills_sorted.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let mut importance = vec![Vec::new(); occupations.len()];
        let mut skill_uncovered = Vec::new();
        for (oi, occ) in occupations.iter().enumerate() {
            let positive: Vec<(usize, T)> = occ_skills
                .get(occ)
                .map(|m| {
                    m.iter()
                        .filter(|(_, &v)| v > T::zero())
                        .map(|(s, &v)| (skill_index[s.as_str()], v))
                        .collect()
                })
                .unwrap_or_default();
            if positive.is_empty() {
                skill_uncovered.push(occ.clone());
            }
            importance[oi] = positive;
        }

        let mut prob_vec = vec![None; occupations.len()];
        let mut prob_only = Vec::new();
        for (occ, &p) in &probs.values {
            match occ_index.get(occ.as_str()) {
                Some(&i) => prob_vec[i] = Some(p),
                None => prob_only.push(occ.clone()),
            }
        }
        let missing_probs = occupations
            .iter()
            .zip(&prob_vec)
            .filter(|(_, p)| p.is_none())
            .map(|(o, _)| o.clone())
            .collect();

        let mut cov_map: BTreeMap<String, Covariates<T>> = BTreeMap::new();
        let mut unknown_covariate_cities = Vec::new();
        for row in covariates {
            if !city_rows.contains_key(&row.city_id) {
                unknown_covariate_cities.push(row.city_id);
                continue;
            }
            if cov_map.insert(row.city_id.clone(), row.covariates).is_some() {
                return Err(Error::DuplicateKey {
                    file: "covariates".into(),
                    row: 0,
                    key: row.city_id,
                });
            }
        }

        let cities: Vec<City<T>> = city_rows
            .into_iter()
            .map(|(id, (name, occs))| City {
                covariates: cov_map.remove(&id),
                employment: occs.into_iter().map(|(o, w)| (occ_index[o.as_str()], w)).collect(),
                id,
                name,
                aggregate: false,
            })
            .collect();

        let mut corpus = Corpus {
            cities,
            occupations,
            skills: skills_sorted,
            skill_names,
            importance,
            probs: BTreeMap::from([(probs.source, prob_vec)]),
            primary_source: probs.source,
            coverage: CoverageReport {
                missing_probs,
                skill_uncovered,
                dropped_cities,
                skill_only_occupations: skill_only.into_iter().collect(),
                prob_only_occupations: prob_only,
                unknown_covariate_cities,
                cities: Vec::new(),
            },
        };
        corpus.coverage.cities = corpus.city_coverage(probs.source)?;
        Ok(corpus)
    }

    /// Adds (or replaces) a second probability table, e.g. OECD estimates.
    pub fn with_probs(mut self, probs: AutomationProbs<T>) -> Self {
        let mut v = vec![None; self.occupations.len()];
        for (occ, &p) in &probs.values {
            if let Ok(i) = self.occupations.binary_search(occ) {
                v[i] = Some(p);
            }
        }
        self.probs.insert(probs.source, v);
        self
    }

    pub fn cities(&self) -> &[City<T>] {
        &self.cities
    }

    pub fn occupations(&self) -> &[String] {
        &self.occupations
    }

    pub fn skills(&self) -> &[String] {
        &self.skills
    }

    pub fn skill_names(&self) -> &[String] {
        &self.skill_names
    }

    pub fn coverage(&self) -> &CoverageReport {
        &self.coverage
    }

    pub fn primary_source(&self) -> ProbSource {
        self.primary_source
    }

    pub fn city_index(&self, id: &str) -> Result<usize> {
        self.cities
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .map_err(|_| Error::UnknownCity(id.to_string()))
    }

    pub fn city(&self, id: &str) -> Result<&City<T>> {
        Ok(&self.cities[self.city_index(id)?])
    }

    pub fn occupation_index(&self, code: &str) -> Result<usize> {
        self.occupations
            .binary_search_by(|o| o.as_str().cmp(code))
            .map_err(|_| Error::UnknownOccupation(code.to_string()))
    }

    /// Positive `(skill index, raw importance)` pairs of an occupation.
    pub fn importance(&self, occ: usize) -> &[(usize, T)] {
        &self.importance[occ]
    }

    pub fn has_skills(&self, occ: usize) -> bool {
        !self.importance[occ].is_empty()
    }

    /// Probabilities indexed by occupation for `source`.
    pub fn probs(&self, source: ProbSource) -> Result<&[Option<T>]> {
        self.probs
            .get(&source)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownProbSource(source.to_string()))
    }

    pub fn prob_sources(&self) -> impl Iterator<Item = ProbSource> + '_ {
        self.probs.keys().copied()
    }

    /// Indices of real (non-aggregate) cities.
    pub fn analysis_cities(&self) -> Vec<usize> {
        (0..self.cities.len()).filter(|&i| !self.cities[i].aggregate).collect()
    }

    /// Occupations with skill data, in index order.
    pub fn skill_covered_occupations(&self) -> Vec<usize> {
        (0..self.occupations.len()).filter(|&o| self.has_skills(o)).collect()
    }

    /// Per-city coverage fractions under `source`.
    pub fn city_coverage(&self, source: ProbSource) -> Result<Vec<CityCoverage>> {
        let probs = self.probs(source)?;
        Ok(self
            .cities
            .iter()
            .map(|c| {
                let total = c.size();
                let covered = compensated_sum(
                    c.employment
                        .iter()
                        .filter(|&&(o, _)| probs[o].is_some())
                        .map(|&(_, w)| w),
                );
                let skilled = compensated_sum(
                    c.employment
                        .iter()
                        .filter(|&&(o, _)| self.has_skills(o))
                        .map(|&(_, w)| w),
                );
                CityCoverage {
                    city_id: c.id.clone(),
                    prob_coverage: (covered / total).as_f64(),
                    skill_coverage: (skilled / total).as_f64(),
                }
            })
            .collect())
    }

    /// Adds a pseudo-city whose counts are the element-wise sum of the
    /// member cities. Total employment is summed when every member has it;
    /// the other covariates are not additive and are omitted.
    pub fn aggregate_cities(&self, city_ids: &[&str], label: &str) -> Result<Corpus<T>> {
        if city_ids.is_empty() {
            return Err(Error::InvalidConfig("aggregate needs at least one city".into()));
        }
        if self.city_index(label).is_ok() {
            return Err(Error::InvalidConfig(format!(
                "aggregate label `{label}` collides with an existing city"
            )));
        }
        let mut members: Vec<usize> = city_ids.iter().map(|id| self.city_index(id)).collect::<Result<_>>()?;
        members.sort_unstable();
        members.dedup();

        let mut counts: BTreeMap<usize, Vec<T>> = BTreeMap::new();
        for &m in &members {
            for &(o, w) in &self.cities[m].employment {
                counts.entry(o).or_default().push(w);
            }
        }
        let employment = counts.into_iter().map(|(o, ws)| (o, compensated_sum(ws))).collect();
        let total_employment = members
            .iter()
            .map(|&m| self.cities[m].covariates.as_ref().and_then(|c| c.total_employment))
            .collect::<Option<Vec<T>>>()
            .map(compensated_sum);
        let city = City {
            id: label.to_string(),
            name: label.to_string(),
            aggregate: true,
            covariates: Some(Covariates {
                total_employment,
                ..Covariates::default()
            }),
            employment,
        };

        let mut out = self.clone();
        let pos = out.cities.binary_search_by(|c| c.id.as_str().cmp(label)).unwrap_err();
        out.cities.insert(pos, city);
        out.coverage.cities = out.city_coverage(out.primary_source)?;
        Ok(out)
    }

    /// The `k` largest (or smallest) real cities by total employment; ties
    /// broken by city id.
    pub fn select_extreme_cities(&self, k: usize, by_size_ascending: bool) -> Result<Vec<String>> {
        let pool = self.analysis_cities();
        if k == 0 || k > pool.len() {
            return Err(Error::KOutOfRange { k, max: pool.len() });
        }
        let mut ranked: Vec<(T, &str)> = pool
            .iter()
            .map(|&i| (self.cities[i].size(), self.cities[i].id.as_str()))
            .collect();
        ranked.sort_by(|a, b| {
            let by_size = a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal);
            let by_size = if by_size_ascending { by_size } else { by_size.reverse() };
            by_size.then_with(|| a.1.cmp(b.1))
        });
        Ok(ranked.into_iter().take(k).map(|(_, id)| id.to_string()).collect())
    }
}

// ---------------------------------------------------------------------------
// CSV ingest

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(&file, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(&file, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&file, e))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        if rows.is_empty() {
            return Err(Error::EmptyTable { file });
        }
        Ok(Self { file, headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                file: self.file.clone(),
                column: name.to_string(),
            })
    }

    fn number<T: Scalar>(&self, line: usize, field: &str, raw: &str) -> Result<T> {
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .and_then(T::from_f64)
            .ok_or_else(|| Error::InvalidNumber {
                file: self.file.clone(),
                row: line,
                field: field.to_string(),
                value: raw.to_string(),
            })
    }

    fn optional_number<T: Scalar>(&self, line: usize, field: &str, raw: &str) -> Result<Option<T>> {
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            Ok(None)
        } else {
            self.number(line, field, raw).map(Some)
        }
    }

    fn out_of_range(&self, line: usize, field: &str, raw: &str) -> Error {
        Error::ValueOutOfRange {
            file: self.file.clone(),
            row: line,
            field: field.to_string(),
            value: raw.to_string(),
        }
    }

    fn duplicate(&self, line: usize, key: String) -> Error {
        Error::DuplicateKey {
            file: self.file.clone(),
            row: line,
            key,
        }
    }
}

pub fn read_employment<T: Scalar>(path: &Path) -> Result<Vec<EmploymentRow<T>>> {
    let t = Table::read(path)?;
    let (ci, ni, oi, wi) = (
        t.column("city_id")?,
        t.column("city_name")?,
        t.column("occ_code")?,
        t.column("workers")?,
    );
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let workers: T = t.number(*line, "workers", &rec[wi])?;
        if workers < T::zero() {
            return Err(t.out_of_range(*line, "workers", &rec[wi]));
        }
        if !seen.insert((rec[ci].clone(), rec[oi].clone())) {
            return Err(t.duplicate(*line, format!("{}/{}", rec[ci], rec[oi])));
        }
        out.push(EmploymentRow {
            city_id: rec[ci].clone(),
            city_name: rec[ni].clone(),
            occ_code: rec[oi].clone(),
            workers,
        });
    }
    Ok(out)
}

pub fn read_skills<T: Scalar>(path: &Path) -> Result<Vec<SkillRow<T>>> {
    let t = Table::read(path)?;
    let (oi, si, ni, vi) = (
        t.column("occ_code")?,
        t.column("skill_id")?,
        t.column("skill_name")?,
        t.column("importance")?,
    );
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let importance: T = t.number(*line, "importance", &rec[vi])?;
        if importance < T::zero() || importance > T::one() {
            return Err(t.out_of_range(*line, "importance", &rec[vi]));
        }
        if !seen.insert((rec[oi].clone(), rec[si].clone())) {
            return Err(t.duplicate(*line, format!("{}/{}", rec[oi], rec[si])));
        }
        out.push(SkillRow {
            occ_code: rec[oi].clone(),
            skill_id: rec[si].clone(),
            skill_name: rec[ni].clone(),
            importance,
        });
    }
    Ok(out)
}

pub fn read_probs<T: Scalar>(path: &Path, source: ProbSource) -> Result<AutomationProbs<T>> {
    let t = Table::read(path)?;
    let (oi, pi) = (t.column("occ_code")?, t.column("p_auto")?);
    let mut values = BTreeMap::new();
    for (line, rec) in &t.rows {
        let p: T = t.number(*line, "p_auto", &rec[pi])?;
        if p < T::zero() || p > T::one() {
            return Err(t.out_of_range(*line, "p_auto", &rec[pi]));
        }
        if values.insert(rec[oi].clone(), p).is_some() {
            return Err(t.duplicate(*line, rec[oi].clone()));
        }
    }
    Ok(AutomationProbs { source, values })
}

pub fn read_covariates<T: Scalar>(path: &Path) -> Result<Vec<CovariateRow<T>>> {
    let t = Table::read(path)?;
    let (ci, ei, ii, bi, gi) = (
        t.column("city_id")?,
        t.column("total_employment")?,
        t.column("median_income")?,
        t.column("pct_bachelor")?,
        t.column("gdp_per_capita")?,
    );
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let total_employment = t.optional_number::<T>(line, "total_employment", &rec[ei])?;
        if total_employment.is_some_and(|v| v <= T::zero()) {
            return Err(t.out_of_range(line, "total_employment", &rec[ei]));
        }
        let median_income = t.optional_number::<T>(line, "median_income", &rec[ii])?;
        if median_income.is_some_and(|v| v < T::zero()) {
            return Err(t.out_of_range(line, "median_income", &rec[ii]));
        }
        let pct_bachelor = t.optional_number::<T>(line, "pct_bachelor", &rec[bi])?;
        if pct_bachelor.is_some_and(|v| v < T::zero() || v > T::lit(100.0)) {
            return Err(t.out_of_range(line, "pct_bachelor", &rec[bi]));
        }
        let gdp_per_capita = t.optional_number::<T>(line, "gdp_per_capita", &rec[gi])?;
        if gdp_per_capita.is_some_and(|v| v <= T::zero()) {
            return Err(t.out_of_range(line, "gdp_per_capita", &rec[gi]));
        }
        if !seen.insert(rec[ci].clone()) {
            return Err(t.duplicate(line, rec[ci].clone()));
        }
        out.push(CovariateRow {
            city_id: rec[ci].clone(),
            covariates: Covariates {
                total_employment,
                median_income,
                pct_bachelor,
                gdp_per_capita,
            },
        });
    }
    Ok(out)
}

/// Reads, validates and joins the input tables.
pub fn load_corpus<T: Scalar>(paths: &CorpusPaths, options: &LoadOptions) -> Result<Corpus<T>> {
    let employment = read_employment(&paths.employment)?;
    let skills = read_skills(&paths.skills)?;
    let probs = read_probs(&paths.probs, options.prob_source)?;
    let covariates = match &paths.covariates {
        Some(p) => read_covariates(p)?,
        None => Vec::new(),
    };
    Corpus::from_rows(employment, skills, probs, covariates)
}

fn opt_cell<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the corpus back as the four input CSVs (primary probability
/// source only). Numbers use shortest round-trip formatting.
pub fn write_corpus<T: Scalar>(corpus: &Corpus<T>, dir: &Path) -> Result<CorpusPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = CorpusPaths {
        employment: dir.join("employment.csv"),
        skills: dir.join("skills.csv"),
        probs: dir.join("probs.csv"),
        covariates: corpus
            .cities
            .iter()
            .any(|c| !c.aggregate && c.covariates.is_some())
            .then(|| dir.join("covariates.csv")),
    };

    let mut emp = String::from("city_id,city_name,occ_code,workers\n");
    for c in &corpus.cities {
        for &(o, w) in &c.employment {
            emp.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&c.id),
                csv_field(&c.name),
                csv_field(&corpus.occupations[o]),
                w
            ));
        }
    }
    let mut sk = String::from("occ_code,skill_id,skill_name,importance\n");
    for (o, row) in corpus.importance.iter().enumerate() {
        for &(s, v) in row {
            sk.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&corpus.occupations[o]),
                csv_field(&corpus.skills[s]),
                csv_field(&corpus.skill_names[s]),
                v
            ));
        }
    }
    let mut pr = String::from("occ_code,p_auto\n");
    for (o, p) in corpus.probs(corpus.primary_source)?.iter().enumerate() {
        if let Some(p) = p {
            pr.push_str(&format!("{},{}\n", csv_field(&corpus.occupations[o]), p));
        }
    }
    let mut cov = String::from("city_id,total_employment,median_income,pct_bachelor,gdp_per_capita\n");
    for c in corpus.cities.iter().filter(|c| !c.aggregate) {
        if let Some(v) = &c.covariates {
            cov.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&c.id),
                opt_cell(v.total_employment),
                opt_cell(v.median_income),
                opt_cell(v.pct_bachelor),
                opt_cell(v.gdp_per_capita)
            ));
        }
    }

    for (path, body) in [(&paths.employment, emp), (&paths.skills, sk), (&paths.probs, pr)] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &paths.covariates {
        fs::write(path, cov).map_err(|e| Error::io(path, e))?;
    }
    Ok(paths)
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    /// 3 cities, 4 occupations, fully covered.
    fn toy(dir: &Path, probs: &str) -> CorpusPaths {
        CorpusPaths {
            employment: write(
                dir,
                "employment.csv",
                "city_id,city_name,occ_code,workers\n\
                 c1,Alpha,A,10\nc1,Alpha,B,30\n\
                 c2,Beta,A,5\nc2,Beta,C,15\nc2,Beta,D,20\n\
                 c3,Gamma,B,8\nc3,Gamma,D,2\n",
            ),
            skills: write(
                dir,
                "skills.csv",
                "occ_code,skill_id,skill_name,importance\n\
                 A,s1,Math,0.5\nA,s2,Writing,0.5\n\
                 B,s1,Math,0.2\nB,s3,Lifting,0.8\n\
                 C,s2,Writing,1.0\n\
                 D,s1,Math,0.3\nD,s2,Writing,0.3\nD,s3,Lifting,0.4\n",
            ),
            probs: write(dir, "probs.csv", probs),
            covariates: Some(write(
                dir,
                "covariates.csv",
                "city_id,total_employment,median_income,pct_bachelor,gdp_per_capita\n\
                 c1,40,50000,30,60000\nc2,40,45000,25,55000\nc3,10,,20,40000\n",
            )),
        }
    }

    const FULL_PROBS: &str = "occ_code,p_auto\nA,0.2\nB,0.8\nC,0.5\nD,0.9\n";

    #[test]
    fn loads_fully_covered_toy() {
        let dir = tempfile::tempdir().unwrap();
        let c: Corpus<f64> = load_corpus(&toy(dir.path(), FULL_PROBS), &LoadOptions::default()).unwrap();
        assert_eq!(c.cities().len(), 3);
        assert_eq!(c.occupations(), ["A", "B", "C", "D"]);
        assert_eq!(c.skills(), ["s1", "s2", "s3"]);
        for cov in &c.coverage().cities {
            assert_eq!(cov.prob_coverage, 1.0);
            assert_eq!(cov.skill_coverage, 1.0);
        }
        assert!(c.coverage().missing_probs.is_empty());
        let c3 = c.city("c3").unwrap();
        assert_eq!(c3.covariates.as_ref().unwrap().median_income, None);
        assert!(!c3.covariates.as_ref().unwrap().is_complete());
    }

    #[test]
    fn missing_prob_lowers_coverage_by_hand_sum() {
        let dir = tempfile::tempdir().unwrap();
        let c: Corpus<f64> = load_corpus(
            &toy(dir.path(), "occ_code,p_auto\nA,0.2\nB,0.8\nC,0.5\n"),
            &LoadOptions::default(),
        )
        .unwrap();
        let cov = &c.coverage().cities;
        // c1 has no D: full coverage. c2: (5 + 15) / 40. c3: 8 / 10.
        assert_eq!(cov[0].prob_coverage, 1.0);
        assert!((cov[1].prob_coverage - 20.0 / 40.0).abs() < 1e-15);
        assert!((cov[2].prob_coverage - 8.0 / 10.0).abs() < 1e-15);
        assert_eq!(c.coverage().missing_probs, vec!["D".to_string()]);
    }

    #[test]
    fn negative_workers_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = toy(dir.path(), FULL_PROBS);
        paths.employment = write(
            dir.path(),
            "bad.csv",
            "city_id,city_name,occ_code,workers\nc1,Alpha,A,-5\n",
        );
        let err = load_corpus::<f64>(&paths, &LoadOptions::default()).unwrap_err();
        assert!(
            matches!(&err, Error::ValueOutOfRange { row: 2, field, .. } if field == "workers"),
            "{err:?}"
        );
    }

    #[test]
    fn schema_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = toy(dir.path(), FULL_PROBS);
        paths.probs = write(dir.path(), "p1.csv", "occ_code,prob\nA,0.2\n");
        assert!(matches!(
            load_corpus::<f64>(&paths, &LoadOptions::default()),
            Err(Error::MissingColumn { column, .. }) if column == "p_auto"
        ));
        paths.probs = write(dir.path(), "p2.csv", "occ_code,p_auto\nA,abc\n");
        assert!(matches!(
            load_corpus::<f64>(&paths, &LoadOptions::default()),
            Err(Error::InvalidNumber { row: 2, .. })
        ));
        paths.probs = write(dir.path(), "p3.csv", "occ_code,p_auto\nA,0.2\nA,0.3\n");
        assert!(matches!(
            load_corpus::<f64>(&paths, &LoadOptions::default()),
            Err(Error::DuplicateKey { row: 3, .. })
        ));
        paths.probs = write(dir.path(), "p4.csv", "occ_code,p_auto\n");
        assert!(matches!(
            load_corpus::<f64>(&paths, &LoadOptions::default()),
            Err(Error::EmptyTable { .. })
        ));
        paths.probs = write(dir.path(), "p5.csv", "occ_code,p_auto\nA,1.5\n");
        assert!(matches!(
            load_corpus::<f64>(&paths, &LoadOptions::default()),
            Err(Error::ValueOutOfRange { .. })
        ));
    }

    #[test]
    fn aggregation_adds_counts() {
        let dir = tempfile::tempdir().unwrap();
        let c: Corpus<f64> = load_corpus(&toy(dir.path(), FULL_PROBS), &LoadOptions::default()).unwrap();
        let agg = c.aggregate_cities(&["c2", "c1"], "pair").unwrap();
        let pair = agg.city("pair").unwrap();
        assert!(pair.aggregate);
        // A: 10 + 5
        assert_eq!(pair.employment(), &[(0, 15.0), (1, 30.0), (2, 15.0), (3, 20.0)]);
        assert_eq!(pair.covariates.as_ref().unwrap().total_employment, Some(80.0));
        assert_eq!(pair.covariates.as_ref().unwrap().median_income, None);
        assert_eq!(agg.analysis_cities().len(), 3);

        let single = c.aggregate_cities(&["c3"], "solo").unwrap();
        assert_eq!(
            single.city("solo").unwrap().employment(),
            c.city("c3").unwrap().employment()
        );

        assert!(matches!(c.aggregate_cities(&["nope"], "x"), Err(Error::UnknownCity(_))));
        assert!(c.aggregate_cities(&["c1"], "c2").is_err());
    }

    #[test]
    fn extreme_cities_tie_break() {
        let dir = tempfile::tempdir().unwrap();
        let c: Corpus<f64> = load_corpus(&toy(dir.path(), FULL_PROBS), &LoadOptions::default()).unwrap();
        // c1 and c2 both have 40 workers.
        assert_eq!(c.select_extreme_cities(1, false).unwrap(), vec!["c1"]);
        assert_eq!(c.select_extreme_cities(2, false).unwrap(), vec!["c1", "c2"]);
        assert_eq!(c.select_extreme_cities(1, true).unwrap(), vec!["c3"]);
        assert_eq!(c.select_extreme_cities(3, true).unwrap(), vec!["c3", "c1", "c2"]);
        assert!(matches!(
            c.select_extreme_cities(4, true),
            Err(Error::KOutOfRange { .. })
        ));
        assert!(matches!(
            c.select_extreme_cities(0, true),
            Err(Error::KOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_worker_city_dropped_and_skill_gaps_reported() {
        let emp = vec![
            EmploymentRow {
                city_id: "x".into(),
                city_name: "X".into(),
                occ_code: "A".into(),
                workers: 0.0,
            },
            EmploymentRow {
                city_id: "y".into(),
                city_name: "Y".into(),
                occ_code: "A".into(),
                workers: 3.0,
            },
            EmploymentRow {
                city_id: "y".into(),
                city_name: "Y".into(),
                occ_code: "B".into(),
                workers: 1.0,
            },
        ];
        let skills = vec![
            SkillRow {
                occ_code: "A".into(),
                skill_id: "s".into(),
                skill_name: "S".into(),
                importance: 0.4,
            },
            SkillRow {
                occ_code: "B".into(),
                skill_id: "s".into(),
                skill_name: "S".into(),
                importance: 0.0,
            },
            SkillRow {
                occ_code: "Z".into(),
                skill_id: "s".into(),
                skill_name: "S".into(),
                importance: 0.9,
            },
        ];
        let probs = AutomationProbs {
            source: ProbSource::Custom,
            values: BTreeMap::from([("A".to_string(), 0.5), ("Q".to_string(), 0.1)]),
        };
        let c = Corpus::from_rows(emp, skills, probs, vec![]).unwrap();
        let r = c.coverage();
        assert_eq!(r.dropped_cities, vec!["x"]);
        assert_eq!(r.skill_uncovered, vec!["B"]);
        assert_eq!(r.skill_only_occupations, vec!["Z"]);
        assert_eq!(r.prob_only_occupations, vec!["Q"]);
        assert_eq!(r.missing_probs, vec!["B"]);
        assert!((r.cities[0].skill_coverage - 0.75).abs() < 1e-15);
    }

    #[test]
    fn prob_source_parsing() {
        assert_eq!("oecd".parse::<ProbSource>().unwrap(), ProbSource::Oecd);
        assert_eq!(ProbSource::FreyOsborne.to_string(), "frey_osborne");
        assert!("x".parse::<ProbSource>().is_err());
    }
}
