use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};
use crate::evaluation::EvalRecord;
use crate::model::data::{Dataset, SubjectRecord, Visit};
use crate::model::spec::ModelSpec;

pub const LONGITUDINAL_FILE: &str = "longitudinal.csv";
pub const SURVIVAL_FILE: &str = "survival.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";

#[derive(Debug, Serialize, Deserialize)]
struct LongRow {
    id: String,
    time: f64,
    outcome: String,
    /// Empty for a missing value.
    value: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SurvRow {
    id: String,
    time: f64,
    event: u8,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let at = e.position().map(|p| format!(" (line {})", p.line())).unwrap_or_default();
    Error::Data(format!("{}{at}: {e}", path.display()))
}

/// Reads `survival.csv`, `covariates.csv` and `longitudinal.csv` from `dir`.
/// Subjects come in `survival.csv` order; the covariate file is wide with an
/// `id` column followed by one column per covariate.
pub fn read_dataset(dir: &Path, spec: &ModelSpec) -> Result<Dataset> {
    let surv_path = dir.join(SURVIVAL_FILE);
    let mut subjects = Vec::new();
    let mut index = HashMap::new();
    for row in csv::Reader::from_path(&surv_path).map_err(|e| csv_error(&surv_path, e))?.deserialize() {
        let row: SurvRow = row.map_err(|e| csv_error(&surv_path, e))?;
        if row.event > 1 {
            return data(format!("{}: subject `{}`: event must be 0 or 1", surv_path.display(), row.id));
        }
        if index.insert(row.id.clone(), subjects.len()).is_some() {
            return data(format!("{}: duplicate subject `{}`", surv_path.display(), row.id));
        }
        subjects.push(SubjectRecord {
            id: row.id,
            covariates: BTreeMap::new(),
            visits: Vec::new(),
            observed_time: row.time,
            event: row.event == 1,
        });
    }

    let cov_path = dir.join(COVARIATES_FILE);
    if cov_path.exists() {
        let mut rdr = csv::Reader::from_path(&cov_path).map_err(|e| csv_error(&cov_path, e))?;
        let headers = rdr.headers().map_err(|e| csv_error(&cov_path, e))?.clone();
        if headers.get(0) != Some("id") {
            return data(format!("{}: first column must be `id`", cov_path.display()));
        }
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&cov_path, e))?;
            let id = &rec[0];
            let Some(&i) = index.get(id) else {
                return data(format!("{}: subject `{id}` is not in {SURVIVAL_FILE}", cov_path.display()));
            };
            for (name, v) in headers.iter().zip(rec.iter()).skip(1) {
                let x: f64 = v.trim().parse().map_err(|_| {
                    Error::Data(format!("{}: subject `{id}`: covariate `{name}` is not a number", cov_path.display()))
                })?;
                subjects[i].covariates.insert(name.to_string(), x);
            }
        }
    }

    let long_path = dir.join(LONGITUDINAL_FILE);
    let mut cells: Vec<BTreeMap<u64, Vec<Option<f64>>>> = vec![BTreeMap::new(); subjects.len()];
    for row in csv::Reader::from_path(&long_path).map_err(|e| csv_error(&long_path, e))?.deserialize() {
        let row: LongRow = row.map_err(|e| csv_error(&long_path, e))?;
        let Some(&i) = index.get(&row.id) else {
            return data(format!("{}: subject `{}` is not in {SURVIVAL_FILE}", long_path.display(), row.id));
        };
        let Some(k) = spec.outcome_index(&row.outcome) else {
            return data(format!("{}: unknown outcome `{}`", long_path.display(), row.outcome));
        };
        if !row.time.is_finite() {
            return data(format!("{}: subject `{}`: non-finite visit time", long_path.display(), row.id));
        }
        // visit times are ordered by their bit pattern, which matches numeric order for non-negative times
        let key = if row.time == 0.0 { 0 } else { row.time.to_bits() };
        if row.time < 0.0 {
            return data(format!("{}: subject `{}`: negative visit time", long_path.display(), row.id));
        }
        let slot = &mut cells[i].entry(key).or_insert_with(|| vec![None; spec.outcomes.len()])[k];
        if slot.is_some() {
            return data(format!(
                "{}: subject `{}` has two values of `{}` at time {}",
                long_path.display(),
                row.id,
                row.outcome,
                row.time
            ));
        }
        *slot = row.value;
    }
    for (s, visits) in subjects.iter_mut().zip(cells) {
        s.visits = visits.into_iter().map(|(k, values)| Visit { time: f64::from_bits(k), values }).collect();
    }
    let dataset = Dataset::new(subjects);
    dataset.validate(spec)?;
    Ok(dataset)
}

/// Writes the three dataset files into `dir`, which must exist.
pub fn write_dataset(dir: &Path, dataset: &Dataset, spec: &ModelSpec) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(SURVIVAL_FILE))?;
    for s in &dataset.subjects {
        w.serialize(SurvRow { id: s.id.clone(), time: s.observed_time, event: u8::from(s.event) })?;
    }
    w.flush()?;

    let names = spec.design.covariate_names();
    let mut w = csv::Writer::from_path(dir.join(COVARIATES_FILE))?;
    w.write_record(std::iter::once("id").chain(names.iter().map(String::as_str)))?;
    for s in &dataset.subjects {
        let mut rec = vec![s.id.clone()];
        for n in &names {
            rec.push(s.covariates.get(n).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(LONGITUDINAL_FILE))?;
    for s in &dataset.subjects {
        for v in &s.visits {
            for (o, value) in spec.outcomes.iter().zip(&v.values) {
                if let Some(value) = value {
                    w.serialize(LongRow { id: s.id.clone(), time: v.time, outcome: o.name.clone(), value: Some(*value) })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalRow {
    id: String,
    risk: f64,
    time: f64,
    event: u8,
}

/// Reads a predictions CSV with columns `id, risk, time, event`.
pub fn read_eval_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?.deserialize() {
        let r: EvalRow = row.map_err(|e| csv_error(path, e))?;
        if r.event > 1 {
            return data(format!("{}: record `{}`: event must be 0 or 1", path.display(), r.id));
        }
        out.push(EvalRecord { id: r.id, risk: r.risk, time: r.time, event: r.event == 1 });
    }
    Ok(out)
}

pub fn write_eval_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(EvalRow { id: r.id.clone(), risk: r.risk, time: r.time, event: u8::from(r.event) })?;
    }
    w.flush()?;
    Ok(())
}
