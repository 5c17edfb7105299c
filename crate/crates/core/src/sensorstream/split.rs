use std::collections::BTreeMap;
use std::fmt;

use crate::util::keyed_unit;

use super::SensorStreamError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    Train,
    Tune,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Tune => "tune",
            Partition::Test => "test",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Partition::Train),
            1 => Some(Partition::Tune),
            2 => Some(Partition::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train / tune / test fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub tune: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.6, tune: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, tune: f64, test: f64) -> Result<Self, SensorStreamError> {
        let f = [train, tune, test];
        let ok = f.iter().all(|v| v.is_finite() && *v >= 0.0)
            && f.iter().any(|v| *v > 0.0)
            && (f.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(Self { train, tune, test })
        } else {
            Err(SensorStreamError::BadFractions(f))
        }
    }

    /// Parses `"0.6,0.2,0.2"`.
    pub fn parse(s: &str) -> Result<Self, SensorStreamError> {
        let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().unwrap_or(f64::NAN)).collect();
        match parts[..] {
            [a, b, c] => Self::new(a, b, c),
            _ => Err(SensorStreamError::BadFractions([f64::NAN; 3])),
        }
    }

    fn bucket(&self, u: f64) -> Partition {
        if u < self.train {
            Partition::Train
        } else if u < self.train + self.tune {
            Partition::Tune
        } else {
            Partition::Test
        }
    }
}

/// Disjoint user-level assignment to train / tune / test.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSplit {
    pub assignment: BTreeMap<String, Partition>,
    pub seed: u64,
}

impl CohortSplit {
    pub fn partition_of(&self, user: &str) -> Option<Partition> {
        self.assignment.get(user).copied()
    }

    pub fn count(&self, p: Partition) -> usize {
        self.assignment.values().filter(|&&q| q == p).count()
    }
}

/// Assigns every user by a keyed hash of `(seed, user_id)`, so the split of a
/// given user never depends on which other users are present.
pub fn split_cohort<S: AsRef<str>>(
    user_ids: &[S],
    fractions: SplitFractions,
    seed: u64,
) -> Result<CohortSplit, SensorStreamError> {
    if user_ids.is_empty() {
        return Err(SensorStreamError::NoUsers);
    }
    let assignment = user_ids
        .iter()
        .map(|u| {
            let u = u.as_ref();
            (u.to_owned(), fractions.bucket(keyed_unit(seed, "cohort-split", u)))
        })
        .collect();
    Ok(CohortSplit { assignment, seed })
}

/// Whether `user` keeps its labels at `fraction`. Subsets are nested in the
/// fraction for a fixed seed.
pub fn label_subset_member(seed: u64, user: &str, fraction: f64) -> bool {
    keyed_unit(seed, "label-fraction", user) < fraction
}
