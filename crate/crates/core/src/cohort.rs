//! Longitudinal cohort data: subjects with a baseline visit and time-stamped
//! follow-up observations, plus delimited-text ingestion.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{PbcError, Result};

/// One visit. `lymph_pct` is the lymphocyte percentage covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time_months: f64,
    pub cd4: f64,
    pub wbc: f64,
    pub lymph_pct: f64,
}

impl Observation {
    fn check(&self) -> std::result::Result<(), String> {
        if !(self.time_months.is_finite() && self.time_months >= 0.0) {
            return Err(format!("time_months must be finite and >= 0, got {}", self.time_months));
        }
        if !(self.cd4.is_finite() && self.cd4 > 0.0) {
            return Err(format!("cd4 must be finite and > 0, got {}", self.cd4));
        }
        if !(self.wbc.is_finite() && self.wbc > 0.0) {
            return Err(format!("wbc must be finite and > 0, got {}", self.wbc));
        }
        if !(self.lymph_pct.is_finite() && self.lymph_pct > 0.0 && self.lymph_pct <= 100.0) {
            return Err(format!("lymph_pct must lie in (0, 100], got {}", self.lymph_pct));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    observations: Vec<Observation>,
}

impl Subject {
    /// Builds a subject, sorting observations by time. The earliest visit must
    /// be at time 0 and visit times must be distinct.
    pub fn new(id: impl Into<String>, mut observations: Vec<Observation>) -> Result<Self> {
        let id = id.into();
        let err = |message: String| PbcError::Subject { id: id.clone(), message };
        if observations.is_empty() {
            return Err(err("no observations".into()));
        }
        for o in &observations {
            o.check().map_err(&err)?;
        }
        observations.sort_by(|a, b| a.time_months.total_cmp(&b.time_months));
        if observations[0].time_months != 0.0 {
            return Err(err(format!(
                "no baseline (t = 0) observation; earliest visit at {} months",
                observations[0].time_months
            )));
        }
        if let Some(w) = observations.windows(2).find(|w| w[1].time_months <= w[0].time_months) {
            return Err(err(format!("duplicate visit time {}", w[1].time_months)));
        }
        Ok(Self { id, observations })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn baseline(&self) -> &Observation {
        &self.observations[0]
    }

    pub fn follow_up(&self) -> &[Observation] {
        &self.observations[1..]
    }

    /// Same subject under a new identifier.
    pub fn with_id(&self, id: impl Into<String>) -> Self {
        Self { id: id.into(), observations: self.observations.clone() }
    }

    /// Replaces follow-up cd4 values while keeping everything else.
    pub fn map_follow_up_cd4(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let mut obs = self.observations.clone();
        for (j, o) in obs.iter_mut().enumerate().skip(1) {
            o.cd4 = f(j, o.cd4);
        }
        Subject::new(self.id.clone(), obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    #[default]
    Learning,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    subjects: Vec<Subject>,
    pub role: DatasetRole,
}

impl CohortDataset {
    pub fn new(subjects: Vec<Subject>, role: DatasetRole) -> Result<Self> {
        let mut seen = HashMap::with_capacity(subjects.len());
        for s in &subjects {
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(PbcError::Subject { id: s.id.clone(), message: "duplicate subject id".into() });
            }
        }
        Ok(Self { subjects, role })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Σ nᵢ including baseline rows.
    pub fn total_records(&self) -> usize {
        self.subjects.iter().map(|s| s.observations.len()).sum()
    }

    pub fn post_baseline_records(&self) -> usize {
        self.total_records() - self.subjects.len()
    }

    pub fn with_role(mut self, role: DatasetRole) -> Self {
        self.role = role;
        self
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subject_id", "time_months", "cd4", "wbc", "lymph_pct"])?;
        for s in &self.subjects {
            for o in &s.observations {
                w.write_record([
                    s.id.clone(),
                    o.time_months.to_string(),
                    o.cd4.to_string(),
                    o.wbc.to_string(),
                    o.lymph_pct.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Column names used to read a cohort export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub subject_id: String,
    pub time_months: String,
    pub cd4: String,
    pub wbc: String,
    pub lymph_pct: String,
    pub delimiter: u8,
}

impl Default for CohortSchema {
    fn default() -> Self {
        Self {
            subject_id: "subject_id".into(),
            time_months: "time_months".into(),
            cd4: "cd4".into(),
            wbc: "wbc".into(),
            lymph_pct: "lymph_pct".into(),
            delimiter: b',',
        }
    }
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &CohortSchema, role: DatasetRole) -> Result<CohortDataset> {
    let file = std::fs::File::open(path)?;
    read_cohort(file, schema, role)
}

/// Parses a delimited cohort export. Rows with a missing wbc or lymphocyte
/// value are dropped with a warning; any other malformed value is an error
/// carrying its 1-based data-row number.
pub fn read_cohort<R: Read>(reader: R, schema: &CohortSchema, role: DatasetRole) -> Result<CohortDataset> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(schema.delimiter).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let wanted = [
        ("subject id", &schema.subject_id),
        ("time", &schema.time_months),
        ("cd4", &schema.cd4),
        ("wbc", &schema.wbc),
        ("lymphocyte percent", &schema.lymph_pct),
    ];
    let mut idx = [0usize; 5];
    let mut missing = Vec::new();
    for (k, (role_name, col)) in wanted.iter().enumerate() {
        match find(col) {
            Some(i) => idx[k] = i,
            None => missing.push(format!("{col} ({role_name})")),
        }
    }
    if !missing.is_empty() {
        return Err(PbcError::Schema(format!("missing column(s): {}", missing.join(", "))));
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Observation>> = HashMap::new();
    let mut dropped = 0usize;
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let number = |k: usize, name: &str| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .map_err(|_| PbcError::Record { row, message: format!("{name} is not numeric: {:?}", field(k)) })
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(PbcError::Record { row, message: "empty subject id".into() });
        }
        let time_months = number(1, "time_months")?;
        let cd4 = number(2, "cd4")?;
        if field(3).is_empty() || field(4).is_empty() {
            warn!("row {row} (subject {id}): missing covariate value, row dropped");
            dropped += 1;
            continue;
        }
        let obs = Observation { time_months, cd4, wbc: number(3, "wbc")?, lymph_pct: number(4, "lymph_pct")? };
        obs.check().map_err(|message| PbcError::Record { row, message })?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(obs);
    }
    if dropped > 0 {
        warn!("{dropped} row(s) dropped for missing covariates");
    }

    let subjects = order
        .into_iter()
        .map(|id| {
            let obs = groups.remove(&id).unwrap_or_default();
            Subject::new(id, obs)
        })
        .collect::<Result<Vec<_>>>()?;
    CohortDataset::new(subjects, role)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: &[&str]) -> String {
        let mut s = String::from("subject_id,time_months,cd4,wbc,lymph_pct\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn groups_and_sorts_subjects() {
        let mut rows = Vec::new();
        for s in ["a", "b", "c"] {
            for t in [3.0, 0.0, 2.0, 0.5] {
                rows.push(format!("{s},{t},250,5.1,22"));
            }
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let data = read_cohort(csv_text(&refs).as_bytes(), &CohortSchema::default(), DatasetRole::Learning).unwrap();
        assert_eq!(data.n_subjects(), 3);
        assert_eq!(data.total_records(), 12);
        let times: Vec<f64> = data.subjects()[1].observations().iter().map(|o| o.time_months).collect();
        assert_eq!(times, vec![0.0, 0.5, 2.0, 3.0]);
    }

    #[test]
    fn negative_cd4_is_a_record_error() {
        let text = csv_text(&["a,0,200,5,20", "a,1,-5,5,20"]);
        match read_cohort(text.as_bytes(), &CohortSchema::default(), DatasetRole::Learning) {
            Err(PbcError::Record { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cd4_is_a_record_error() {
        let text = csv_text(&["a,0,abc,5,20"]);
        assert!(matches!(
            read_cohort(text.as_bytes(), &CohortSchema::default(), DatasetRole::Learning),
            Err(PbcError::Record { row: 1, .. })
        ));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = "subject_id,time_months,cd4,wbc\na,0,200,5\n";
        assert!(matches!(
            read_cohort(text.as_bytes(), &CohortSchema::default(), DatasetRole::Learning),
            Err(PbcError::Schema(_))
        ));
    }

    #[test]
    fn subject_without_baseline_is_reported() {
        let text = csv_text(&["a,0,200,5,20", "zz,1,200,5,20", "zz,2,210,5,20"]);
        match read_cohort(text.as_bytes(), &CohortSchema::default(), DatasetRole::Learning) {
            Err(PbcError::Subject { id, .. }) => assert_eq!(id, "zz"),
            other => panic!("expected subject error, got {other:?}"),
        }
    }

    #[test]
    fn rows_missing_covariates_are_dropped() {
        let text = csv_text(&["a,0,200,5,20", "a,1,210,,20", "a,2,220,5,21"]);
        let data = read_cohort(text.as_bytes(), &CohortSchema::default(), DatasetRole::Learning).unwrap();
        assert_eq!(data.total_records(), 2);
    }

    #[test]
    fn remapped_columns_and_delimiter() {
        let text = "pid;month;CD4;WBC;LYM\nq;0;300;6;30\nq;1;320;6.1;31\n";
        let schema = CohortSchema {
            subject_id: "pid".into(),
            time_months: "month".into(),
            cd4: "CD4".into(),
            wbc: "WBC".into(),
            lymph_pct: "LYM".into(),
            delimiter: b';',
        };
        let data = read_cohort(text.as_bytes(), &schema, DatasetRole::Test).unwrap();
        assert_eq!(data.total_records(), 2);
        assert_eq!(data.role, DatasetRole::Test);
    }

    #[test]
    fn london_shaped_record_counts() {
        // 270 subjects with 2635 records in total: 205 with 10 visits and 65 with 9.
        let mut subjects = Vec::new();
        for i in 0..270 {
            let n = if i < 205 { 10 } else { 9 };
            let obs =
                (0..n).map(|j| Observation { time_months: j as f64, cd4: 200.0, wbc: 5.0, lymph_pct: 20.0 }).collect();
            subjects.push(Subject::new(format!("s{i}"), obs).unwrap());
        }
        let data = CohortDataset::new(subjects, DatasetRole::Learning).unwrap();
        assert_eq!(data.total_records(), 2635);
        assert_eq!(data.post_baseline_records(), 2365);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let obs = vec![Observation { time_months: 0.0, cd4: 100.0, wbc: 4.0, lymph_pct: 20.0 }];
        let s = Subject::new("x", obs).unwrap();
        assert!(CohortDataset::new(vec![s.clone(), s], DatasetRole::Learning).is_err());
    }
}
