//! Long (tidy) CSV format: one observation per row with header
//! `subject_id,time,variable,value`.
//!
//! Subjects keep the order of their first appearance in the file; each
//! variable of a subject is sorted by time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flcr_core::design::{Curve, ObservedDataset, ObservedSubject};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 4] = ["subject_id", "time", "variable", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRecord {
    pub subject_id: String,
    pub time: f64,
    pub variable: String,
    pub value: f64,
}

/// Parses long-format CSV. Columns are located by header name and may
/// appear in any order; extra columns are ignored. Fields are trimmed.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<LongRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column {name:?}")))?;
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |j: usize| rec.get(idx[j]).unwrap_or("");
        let number = |j: usize| {
            field(j).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Data(format!("line {line}: column {:?} holds {:?}, not a finite number", HEADER[j], field(j)))
            })
        };
        out.push(LongRecord {
            subject_id: field(0).to_owned(),
            time: number(1)?,
            variable: field(2).to_owned(),
            value: number(3)?,
        });
    }
    Ok(out)
}

pub fn read_records_from_path(path: &Path) -> Result<Vec<LongRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file)
}

/// Writes records with a header. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_records<W: Write>(writer: W, records: &[LongRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(HEADER)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_records_to_path(path: &Path, records: &[LongRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(file, records)
}

/// Observations per subject and variable, subjects in first-appearance
/// order.
struct Grouped<'a> {
    subjects: Vec<(&'a str, HashMap<&'a str, Vec<(f64, f64)>>)>,
}

impl<'a> Grouped<'a> {
    fn new(records: &'a [LongRecord]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut subjects: Vec<(&str, HashMap<&str, Vec<(f64, f64)>>)> = Vec::new();
        for r in records {
            let i = *index.entry(&r.subject_id).or_insert_with(|| {
                subjects.push((&r.subject_id, HashMap::new()));
                subjects.len() - 1
            });
            subjects[i].1.entry(&r.variable).or_default().push((r.time, r.value));
        }
        Self { subjects }
    }

    fn has_variable(&self, name: &str) -> bool {
        self.subjects.iter().any(|(_, vars)| vars.contains_key(name))
    }

    fn curve(&self, i: usize, name: &str) -> Result<Curve> {
        let (id, vars) = &self.subjects[i];
        let mut obs = vars
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Data(format!("subject {id:?} has no observations of {name:?}")))?;
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!(
                "subject {id:?}: duplicate observation of {name:?} at time {}",
                w[0].0
            )));
        }
        let (times, values) = obs.into_iter().unzip();
        Ok(Curve::new(times, values)?)
    }
}

/// Builds the test input from records. Every subject must observe the
/// response and every listed covariate; other variables are ignored.
pub fn assemble(records: &[LongRecord], response: &str, covariates: &[String]) -> Result<ObservedDataset> {
    let grouped = Grouped::new(records);
    if grouped.subjects.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    for name in std::iter::once(response).chain(covariates.iter().map(String::as_str)) {
        if !grouped.has_variable(name) {
            return Err(Error::Data(format!("variable {name:?} not found in data")));
        }
    }
    if let Some(dup) = covariates.iter().enumerate().find(|(i, c)| covariates[..*i].contains(c) || *c == response) {
        return Err(Error::Data(format!("variable {:?} listed twice", dup.1)));
    }
    let subjects = (0..grouped.subjects.len())
        .map(|i| {
            Ok(ObservedSubject {
                id: grouped.subjects[i].0.to_owned(),
                response: grouped.curve(i, response)?,
                covariates: covariates.iter().map(|c| grouped.curve(i, c)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservedDataset {
        response_name: response.to_owned(),
        covariate_names: covariates.to_vec(),
        subjects,
    })
}

/// Subject ids and curves of one variable, for subjects that observe it.
pub fn variable_curves(records: &[LongRecord], variable: &str) -> Result<(Vec<String>, Vec<Curve>)> {
    let grouped = Grouped::new(records);
    if !grouped.has_variable(variable) {
        return Err(Error::Data(format!("variable {variable:?} not found in data")));
    }
    let mut ids = Vec::new();
    let mut curves = Vec::new();
    for (i, (id, vars)) in grouped.subjects.iter().enumerate() {
        if vars.contains_key(variable) {
            ids.push((*id).to_owned());
            curves.push(grouped.curve(i, variable)?);
        }
    }
    Ok((ids, curves))
}

pub fn curve_records<'a>(id: &str, variable: &str, curve: &'a Curve) -> impl Iterator<Item = LongRecord> + 'a {
    let (id, variable) = (id.to_owned(), variable.to_owned());
    curve.times.iter().zip(&curve.values).map(move |(&time, &value)| LongRecord {
        subject_id: id.clone(),
        time,
        variable: variable.clone(),
        value,
    })
}

/// Flattens a dataset: per subject the response rows, then each covariate.
pub fn dataset_records(data: &ObservedDataset) -> Vec<LongRecord> {
    let mut out = Vec::new();
    for s in &data.subjects {
        out.extend(curve_records(&s.id, &data.response_name, &s.response));
        for (name, c) in data.covariate_names.iter().zip(&s.covariates) {
            out.extend(curve_records(&s.id, name, c));
        }
    }
    out
}
