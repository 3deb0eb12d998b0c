//! Occupation shift: splits E_m − E_n into per-occupation terms
//! `(p_auto(j) − E_n)·(share_m(j) − share_n(j))`, expresses each as a
//! percentage of the gap, and rolls percentages up by group.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::{Corpus, ProbSource};
use crate::error::{Error, Result};
use crate::grouping::{Grouping, UNASSIGNED};
use crate::metrics::filtered_shares;
use crate::scalar::{compensated_sum, Scalar};

/// Gaps smaller than this leave the percentages undefined.
pub const DEGENERATE_EPS: f64 = 1e-9;

/// Relative automatability of an occupation against the anchor E_n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resilience {
    /// p_auto(j) < E_n
    Resilient,
    /// p_auto(j) ≥ E_n
    Susceptible,
}

/// Whether the term widens (δ > 0) or narrows the gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increases,
    Decreases,
}

impl std::fmt::Display for Resilience {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Resilience::Resilient => "resilient",
            Resilience::Susceptible => "susceptible",
        })
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Increases => "increases",
            Direction::Decreases => "decreases",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRecord<T> {
    pub occ_code: String,
    pub cluster_id: Option<String>,
    pub p_auto: T,
    pub share_m: T,
    pub share_n: T,
    pub raw_term: T,
    /// Percent of E_m − E_n; `None` when the gap is degenerate.
    pub delta_pct: Option<T>,
    pub resilience: Resilience,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport<T> {
    pub city_m: String,
    pub city_n: String,
    pub e_m: T,
    pub e_n: T,
    pub records: Vec<ShiftRecord<T>>,
    /// Group id → Δ (sum of member δ). Empty until [`ShiftReport::with_groups`].
    pub group_totals: BTreeMap<String, T>,
    pub resilient_total: Option<T>,
    pub susceptible_total: Option<T>,
    /// `true` when |E_m − E_n| < [`DEGENERATE_EPS`].
    pub degenerate: bool,
    /// Occupations of either city without a probability, excluded up front.
    pub excluded: Vec<String>,
}

impl<T: Scalar> ShiftReport<T> {
    pub fn is_normalized(&self) -> bool {
        !self.degenerate
    }

    /// Attaches cluster ids to the records and fills `group_totals`.
    pub fn with_groups(mut self, grouping: &Grouping) -> Self {
        for r in &mut self.records {
            r.cluster_id = Some(grouping.group_of(&r.occ_code).to_string());
        }
        self.group_totals = group_shift(&self, grouping);
        self
    }
}

/// Decomposes E_m − E_n with E_n as the anchor constant.
pub fn occupation_shift<T: Scalar>(
    corpus: &Corpus<T>,
    city_m: &str,
    city_n: &str,
    source: ProbSource,
) -> Result<ShiftReport<T>> {
    let m = corpus.city(city_m)?;
    let n = corpus.city(city_n)?;
    let probs = corpus.probs(source)?;

    let covered = |o: usize| probs[o].is_some();
    let shares_m: BTreeMap<usize, T> = filtered_shares(m.employment(), covered)
        .ok_or_else(|| Error::ZeroCoverage(city_m.to_string()))?
        .into_iter()
        .collect();
    let shares_n: BTreeMap<usize, T> = filtered_shares(n.employment(), covered)
        .ok_or_else(|| Error::ZeroCoverage(city_n.to_string()))?
        .into_iter()
        .collect();

    let mut excluded = BTreeSet::new();
    for &(o, _) in m.employment().iter().chain(n.employment()) {
        if !covered(o) {
            excluded.insert(corpus.occupations()[o].clone());
        }
    }

    let union: BTreeSet<usize> = shares_m.keys().chain(shares_n.keys()).copied().collect();
    let p = |o: usize| probs[o].expect("union holds covered occupations");
    let e_m = compensated_sum(shares_m.iter().map(|(&o, &s)| p(o) * s));
    let e_n = compensated_sum(shares_n.iter().map(|(&o, &s)| p(o) * s));
    let gap = e_m - e_n;
    let degenerate = gap.abs() < T::lit(DEGENERATE_EPS);

    let records: Vec<ShiftRecord<T>> = union
        .into_iter()
        .map(|o| {
            let sm = shares_m.get(&o).copied().unwrap_or_else(T::zero);
            let sn = shares_n.get(&o).copied().unwrap_or_else(T::zero);
            let pa = p(o);
            let raw = (pa - e_n) * (sm - sn);
            let delta = (!degenerate).then(|| T::lit(100.0) * raw / gap);
            let widening = match delta {
                Some(d) => d > T::zero(),
                None => raw > T::zero(),
            };
            ShiftRecord {
                occ_code: corpus.occupations()[o].clone(),
                cluster_id: None,
                p_auto: pa,
                share_m: sm,
                share_n: sn,
                raw_term: raw,
                delta_pct: delta,
                resilience: if pa < e_n {
                    Resilience::Resilient
                } else {
                    Resilience::Susceptible
                },
                direction: if widening {
                    Direction::Increases
                } else {
                    Direction::Decreases
                },
            }
        })
        .collect();

    let total_for = |which: Resilience| -> Option<T> {
        (!degenerate).then(|| {
            compensated_sum(
                records
                    .iter()
                    .filter(|r| r.resilience == which)
                    .filter_map(|r| r.delta_pct),
            )
        })
    };
    let resilient_total = total_for(Resilience::Resilient);
    let susceptible_total = total_for(Resilience::Susceptible);

    Ok(ShiftReport {
        city_m: city_m.to_string(),
        city_n: city_n.to_string(),
        e_m,
        e_n,
        records,
        group_totals: BTreeMap::new(),
        resilient_total,
        susceptible_total,
        degenerate,
        excluded: excluded.into_iter().collect(),
    })
}

/// Δ per group: the sum of member δ. Occupations without a group land in
/// [`UNASSIGNED`]. Empty for a degenerate report.
pub fn group_shift<T: Scalar>(report: &ShiftReport<T>, grouping: &Grouping) -> BTreeMap<String, T> {
    if report.degenerate {
        return BTreeMap::new();
    }
    let mut parts: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for r in &report.records {
        let g = grouping.get(&r.occ_code).unwrap_or(UNASSIGNED);
        parts
            .entry(g.to_string())
            .or_default()
            .push(r.delta_pct.expect("normalized report"));
    }
    parts.into_iter().map(|(g, v)| (g, compensated_sum(v))).collect()
}

/// Records of one quadrant sorted by |δ| descending, ties by occupation code.
pub fn rank_shift_records<T: Scalar>(
    report: &ShiftReport<T>,
    resilience: Resilience,
    direction: Direction,
) -> Result<Vec<&ShiftRecord<T>>> {
    if report.degenerate {
        return Err(Error::UnnormalizedReport);
    }
    let mut out: Vec<&ShiftRecord<T>> = report
        .records
        .iter()
        .filter(|r| r.resilience == resilience && r.direction == direction)
        .collect();
    out.sort_by(|a, b| {
        let da = a.delta_pct.expect("normalized").abs();
        let db = b.delta_pct.expect("normalized").abs();
        db.partial_cmp(&da)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.occ_code.cmp(&b.occ_code))
    });
    Ok(out)
}
