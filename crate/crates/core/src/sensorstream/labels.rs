use std::collections::BTreeMap;
use std::io::Read;

use super::{EncodedWeek, SensorStreamError};

pub const DEFAULT_TASKS: [&str; 4] = ["diabetes", "sleep_apnea", "hypertension", "high_cholesterol"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f32 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_sign(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Per-user survey diagnoses: user → task → label.
pub type Diagnoses = BTreeMap<String, BTreeMap<String, Label>>;

/// Reads a `user_id,task,label` CSV (header required, label ∈ {1, -1}).
pub fn parse_labels<R: Read>(reader: R) -> Result<Diagnoses, SensorStreamError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let mut out = Diagnoses::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| SensorStreamError::BadLabel { line, detail: e.to_string() })?;
        if row.len() != 3 {
            return Err(SensorStreamError::BadLabel { line, detail: format!("expected 3 fields, got {}", row.len()) });
        }
        let label = row[2]
            .parse::<i64>()
            .ok()
            .and_then(Label::from_sign)
            .ok_or_else(|| SensorStreamError::BadLabel { line, detail: format!("label {:?} is not 1 or -1", &row[2]) })?;
        out.entry(row[0].to_owned()).or_default().insert(row[1].to_owned(), label);
    }
    Ok(out)
}

/// `Y` slice for one week on the pooled output timeline, `[pooled_len × K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTargets {
    pub pooled_len: usize,
    pub tasks: usize,
    pub y: Vec<f32>,
    pub mask: Vec<f32>,
}

impl TaskTargets {
    /// Row index of the last valid pooled timestep.
    pub fn last_index(&self) -> usize {
        self.pooled_len - 1
    }
}

/// Places every known diagnosis at the last valid pooled timestep,
/// `ceil(valid_len / 2^stages) − 1`; everything else is masked out.
pub fn align_labels(
    week: &EncodedWeek,
    diagnoses: &[Option<super::Label>],
    pooled_len: usize,
    pool_stages: u32,
) -> Result<TaskTargets, SensorStreamError> {
    let expected = week.valid_len.div_ceil(1usize << pool_stages);
    if pooled_len != expected || pooled_len == 0 {
        return Err(SensorStreamError::PooledLength {
            given: pooled_len,
            expected,
            valid_len: week.valid_len,
            stages: pool_stages,
        });
    }
    let k = diagnoses.len();
    let mut y = vec![0.0; pooled_len * k];
    let mut mask = vec![0.0; pooled_len * k];
    let last = pooled_len - 1;
    for (task, d) in diagnoses.iter().enumerate() {
        if let Some(label) = d {
            y[last * k + task] = label.sign();
            mask[last * k + task] = 1.0;
        }
    }
    Ok(TaskTargets { pooled_len, tasks: k, y, mask })
}
