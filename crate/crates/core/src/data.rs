//! Two-by-two study tables, CSV ingestion and per-study empirical
//! statistics.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::LinkFunction;

/// Column names of the ingestion format.
pub const CSV_COLUMNS: [&str; 5] = ["study", "tp", "fp", "fn", "tn"];

/// One study's cross-classification of index test against reference standard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    id: String,
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

impl StudyRecord {
    pub fn new(id: impl Into<String>, tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Self> {
        let id = id.into();
        if tp + fn_ == 0 {
            return Err(Error::Validation {
                id,
                message: "no diseased subjects (tp + fn = 0)".into(),
            });
        }
        if fp + tn == 0 {
            return Err(Error::Validation {
                id,
                message: "no nondiseased subjects (fp + tn = 0)".into(),
            });
        }
        Ok(Self {
            id,
            tp,
            fp,
            fn_,
            tn,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn tp(&self) -> u64 {
        self.tp
    }
    pub fn fp(&self) -> u64 {
        self.fp
    }
    pub fn fn_(&self) -> u64 {
        self.fn_
    }
    pub fn tn(&self) -> u64 {
        self.tn
    }

    /// Diseased subjects, P = TP + FN.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Nondiseased subjects, N = FP + TN.
    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn has_zero_cell(&self) -> bool {
        self.tp == 0 || self.fp == 0 || self.fn_ == 0 || self.tn == 0
    }

    /// Cell counts after applying `correction`.
    pub fn corrected(&self, correction: CorrectionPolicy) -> CorrectedCounts {
        let add = match correction {
            CorrectionPolicy::HalfCell if self.has_zero_cell() => 0.5,
            _ => 0.0,
        };
        CorrectedCounts {
            tp: self.tp as f64 + add,
            fp: self.fp as f64 + add,
            fn_: self.fn_ as f64 + add,
            tn: self.tn as f64 + add,
        }
    }
}

/// Continuity correction for empirical transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionPolicy {
    None,
    /// Add 0.5 to every cell of a study that has at least one zero cell.
    #[default]
    HalfCell,
}

impl CorrectionPolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::HalfCell => "half-cell",
        }
    }
}

impl fmt::Display for CorrectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "half-cell" => Ok(Self::HalfCell),
            other => Err(Error::Parameter(format!("unknown correction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
}

impl CorrectedCounts {
    pub fn positives(&self) -> f64 {
        self.tp + self.fn_
    }
    pub fn negatives(&self) -> f64 {
        self.fp + self.tn
    }
}

/// An ordered collection of at least two studies with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaDataset {
    studies: Vec<StudyRecord>,
}

impl MetaDataset {
    pub fn new(studies: Vec<StudyRecord>) -> Result<Self> {
        if studies.len() < 2 {
            return Err(Error::DatasetTooSmall {
                found: studies.len(),
            });
        }
        let mut seen = HashSet::new();
        for s in &studies {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation {
                    id: s.id.clone(),
                    message: "duplicate study id".into(),
                });
            }
        }
        Ok(Self { studies })
    }

    pub fn studies(&self) -> &[StudyRecord] {
        &self.studies
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StudyRecord> {
        self.studies.iter()
    }

    /// Parse `study,tp,fp,fn,tn` CSV; columns are matched by header name.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let mut index = [0usize; 5];
        for (slot, name) in index.iter_mut().zip(CSV_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Parse {
                    row: 0,
                    message: format!("missing column '{name}' in header"),
                })?;
        }

        let mut studies = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let row = k + 1;
            let record = record.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            let field = |i: usize| record.get(index[i]).unwrap_or("");
            let mut counts = [0u64; 4];
            for (j, c) in counts.iter_mut().enumerate() {
                let raw = field(j + 1);
                let value: i64 = raw.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("column '{}': '{raw}' is not an integer", CSV_COLUMNS[j + 1]),
                })?;
                if value < 0 {
                    return Err(Error::Validation {
                        id: field(0).to_string(),
                        message: format!("negative count in column '{}'", CSV_COLUMNS[j + 1]),
                    });
                }
                *c = value as u64;
            }
            studies.push(StudyRecord::new(
                field(0),
                counts[0],
                counts[1],
                counts[2],
                counts[3],
            )?);
        }
        Self::new(studies)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("study,tp,fp,fn,tn\n");
        for s in &self.studies {
            out.push_str(&format!("{},{},{},{},{}\n", s.id, s.tp, s.fp, s.fn_, s.tn));
        }
        out
    }
}

impl<'a> IntoIterator for &'a MetaDataset {
    type Item = &'a StudyRecord;
    type IntoIter = std::slice::Iter<'a, StudyRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.studies.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalAccuracy {
    pub sensitivity: f64,
    pub specificity: f64,
    /// Either estimate sits on 0 or 1.
    pub on_boundary: bool,
}

pub fn empirical_accuracy(study: &StudyRecord, correction: CorrectionPolicy) -> EmpiricalAccuracy {
    let c = study.corrected(correction);
    let sensitivity = c.tp / c.positives();
    let specificity = c.tn / c.negatives();
    let on_boundary = [sensitivity, specificity]
        .iter()
        .any(|&p| p <= 0.0 || p >= 1.0);
    EmpiricalAccuracy {
        sensitivity,
        specificity,
        on_boundary,
    }
}

/// Link-scale point estimates and their delta-method within-study variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedEstimates {
    pub eta: f64,
    pub xi: f64,
    pub var_eta: f64,
    pub var_xi: f64,
}

pub fn transform_estimates(
    study: &StudyRecord,
    link: LinkFunction,
    correction: CorrectionPolicy,
) -> Result<TransformedEstimates> {
    let c = study.corrected(correction);
    let acc = empirical_accuracy(study, correction);
    let check = |p: f64, which: &'static str| -> Result<()> {
        if p > 0.0 && p < 1.0 {
            Ok(())
        } else {
            Err(Error::NonFiniteTransform {
                id: study.id.clone(),
                which,
                value: p,
            })
        }
    };
    check(acc.sensitivity, "sensitivity")?;
    check(acc.specificity, "specificity")?;

    let delta_var = |p: f64, m: f64| -> Result<f64> {
        let d = link.derivative(p)?;
        Ok(d * d * p * (1.0 - p) / m)
    };
    let (var_eta, var_xi) = match link {
        LinkFunction::Logit => (1.0 / c.tp + 1.0 / c.fn_, 1.0 / c.tn + 1.0 / c.fp),
        _ => (
            delta_var(acc.sensitivity, c.positives())?,
            delta_var(acc.specificity, c.negatives())?,
        ),
    };
    Ok(TransformedEstimates {
        eta: link.apply(acc.sensitivity)?,
        xi: link.apply(acc.specificity)?,
        var_eta,
        var_xi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub estimate: f64,
    pub std_error: f64,
}

/// Closed-form prevalence maximizers P_i/n_i with binomial standard errors.
pub fn estimate_prevalences(dataset: &MetaDataset) -> Vec<Prevalence> {
    dataset
        .iter()
        .map(|s| {
            let p = s.positives() as f64;
            let n = s.negatives() as f64;
            let total = s.total() as f64;
            Prevalence {
                estimate: p / total,
                std_error: (p * n / total.powi(3)).sqrt(),
            }
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Delirium screening data, columns (tp, fp, fn, tn).
    pub const DELIRIUM: [(u64, u64, u64, u64); 20] = [
        (21, 4, 3, 43),
        (35, 2, 40, 104),
        (77, 0, 3, 16),
        (16, 3, 1, 80),
        (27, 0, 3, 93),
        (22, 0, 3, 19),
        (33, 3, 13, 70),
        (26, 8, 6, 41),
        (19, 0, 6, 75),
        (22, 2, 2, 76),
        (137, 11, 42, 36),
        (225, 12, 60, 706),
        (14, 3, 62, 344),
        (9, 2, 12, 131),
        (15, 0, 2, 71),
        (15, 0, 2, 37),
        (39, 13, 16, 64),
        (15, 0, 6, 58),
        (56, 6, 5, 59),
        (34, 0, 3, 29),
    ];

    pub fn delirium() -> MetaDataset {
        dataset(&DELIRIUM)
    }

    pub fn dataset(rows: &[(u64, u64, u64, u64)]) -> MetaDataset {
        MetaDataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(tp, fp, fn_, tn))| {
                    StudyRecord::new((i + 1).to_string(), tp, fp, fn_, tn).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }
}
