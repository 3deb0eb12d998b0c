//! Group memberships (job clusters, skill types, task groups) keyed by
//! opaque row ids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Group key used for rows that carry no assignment.
pub const UNASSIGNED: &str = "unassigned";

/// Mapping row id → group id. Both are opaque strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Grouping {
    members: BTreeMap<String, String>,
}

impl Grouping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, row: impl Into<String>, group: impl Into<String>) {
        self.members.insert(row.into(), group.into());
    }

    /// Group of `row`, or [`UNASSIGNED`].
    pub fn group_of(&self, row: &str) -> &str {
        self.members.get(row).map_or(UNASSIGNED, String::as_str)
    }

    pub fn get(&self, row: &str) -> Option<&str> {
        self.members.get(row).map(String::as_str)
    }

    /// Distinct group ids, numeric ids in numeric order, others lexicographic.
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.members.values().cloned().collect();
        g.sort_by(|a, b| group_order(a, b));
        g.dedup();
        g
    }

    /// Members of `group` in sorted order.
    pub fn members_of(&self, group: &str) -> Vec<&str> {
        self.members
            .iter()
            .filter(|(_, g)| g.as_str() == group)
            .map(|(r, _)| r.as_str())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.members.iter().map(|(r, g)| (r.as_str(), g.as_str()))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Reads a two-column CSV (`occ_code|skill_id|row_id`, `cluster_id`).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(&file, e))?;
        let headers = rdr.headers().map_err(|e| csv_error(&file, e))?.clone();
        let key_col = ["occ_code", "skill_id", "row_id"]
            .iter()
            .find_map(|name| headers.iter().position(|h| h == *name))
            .ok_or_else(|| Error::MissingColumn {
                file: file.clone(),
                column: "occ_code".into(),
            })?;
        let group_col = headers
            .iter()
            .position(|h| h == "cluster_id")
            .ok_or_else(|| Error::MissingColumn {
                file: file.clone(),
                column: "cluster_id".into(),
            })?;
        let mut out = Grouping::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&file, e))?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            let key = rec.get(key_col).unwrap_or("").to_string();
            let group = rec.get(group_col).unwrap_or("").to_string();
            if out.members.contains_key(&key) {
                return Err(Error::DuplicateKey { file, row, key });
            }
            out.insert(key, group);
        }
        if out.is_empty() {
            return Err(Error::EmptyTable { file });
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path, key_header: &str) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut body = format!("{key_header},cluster_id\n");
        for (r, g) in &self.members {
            body.push_str(&format!("{r},{g}\n"));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Orders group ids: integers numerically and before non-numeric ids.
pub fn group_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl FromIterator<(String, String)> for Grouping {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self {
            members: iter.into_iter().collect(),
        }
    }
}

pub(crate) fn csv_error(file: &str, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let msg = e.to_string();
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(file, io),
                _ => Error::Csv {
                    file: file.to_string(),
                    message: msg,
                },
            }
        }
        _ => Error::Csv {
            file: file.to_string(),
            message: e.to_string(),
        },
    }
}
