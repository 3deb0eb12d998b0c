//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cityscale::corpus::{AutomationProbs, CorpusPaths, EmploymentRow, SkillRow};
use cityscale::{Corpus, ProbSource};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn toy_paths() -> CorpusPaths {
    let d = fixture_dir().join("toy");
    CorpusPaths {
        employment: d.join("employment.csv"),
        skills: d.join("skills.csv"),
        probs: d.join("probs.csv"),
        covariates: Some(d.join("covariates.csv")),
    }
}

/// Copies the toy inputs into `dir` so a test can tamper with them.
pub fn copy_toy(dir: &Path) -> CorpusPaths {
    let src = toy_paths();
    let copy = |p: &Path| {
        let to = dir.join(p.file_name().unwrap());
        std::fs::copy(p, &to).unwrap();
        to
    };
    CorpusPaths {
        employment: copy(&src.employment),
        skills: copy(&src.skills),
        probs: copy(&src.probs),
        covariates: src.covariates.as_deref().map(copy),
    }
}

/// The corpus as raw rows, with worker counts passed through `workers`.
pub struct Rows {
    pub employment: Vec<EmploymentRow<f64>>,
    pub skills: Vec<SkillRow<f64>>,
    pub probs: AutomationProbs<f64>,
}

pub fn rows_of(corpus: &Corpus<f64>) -> Rows {
    let occs = corpus.occupations();
    let mut employment = Vec::new();
    for c in corpus.cities() {
        for &(o, w) in c.employment() {
            employment.push(EmploymentRow {
                city_id: c.id.clone(),
                city_name: c.name.clone(),
                occ_code: occs[o].clone(),
                workers: w,
            });
        }
    }
    let mut skills = Vec::new();
    for (o, code) in occs.iter().enumerate() {
        for &(s, v) in corpus.importance(o) {
            skills.push(SkillRow {
                occ_code: code.clone(),
                skill_id: corpus.skills()[s].clone(),
                skill_name: corpus.skill_names()[s].clone(),
                importance: v,
            });
        }
    }
    let values: BTreeMap<String, f64> = occs
        .iter()
        .zip(corpus.probs(ProbSource::FreyOsborne).unwrap())
        .filter_map(|(o, p)| p.map(|p| (o.clone(), p)))
        .collect();
    Rows {
        employment,
        skills,
        probs: AutomationProbs {
            source: ProbSource::FreyOsborne,
            values,
        },
    }
}

impl Rows {
    pub fn build(self) -> Corpus<f64> {
        Corpus::from_rows(self.employment, self.skills, self.probs, vec![]).unwrap()
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
