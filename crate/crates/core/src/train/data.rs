use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::biomarkers::{hrv_targets, HRV_WINDOWS_MS};
use crate::cache::{CachedWeek, TensorCache};
use crate::model::ModelConfig;
use crate::sensorstream::{align_labels, Channel, Label, Partition, INPUT_CHANNELS};

use super::TrainError;

/// Which input channels the model may see.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    #[default]
    All,
    HrOnly,
    StepsOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::All, Ablation::HrOnly, Ablation::StepsOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::All => "all",
            Ablation::HrOnly => "hr_only",
            Ablation::StepsOnly => "steps_only",
        }
    }

    /// The event channel whose rows are blanked, if any.
    fn excluded(self) -> Option<Channel> {
        match self {
            Ablation::All => None,
            Ablation::HrOnly => Some(Channel::StepCount),
            Ablation::StepsOnly => Some(Channel::HeartRate),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown ablation {s:?}"))
    }
}

/// One person-week ready for the model: the valid rows of `X` and the
/// pooled targets.
#[derive(Clone, Debug)]
pub struct Example {
    pub user_id: String,
    pub week_start_ms: i64,
    pub split: Partition,
    pub labels: Vec<Option<Label>>,
    /// `[valid_len × 3]`.
    pub x: Tensor<f32>,
    /// `[pooled_len × K]`.
    pub targets: Tensor<f32>,
    pub mask: Tensor<f32>,
    /// Heuristic HRV targets and mask, `[pooled_len × 4]`, when requested.
    pub hrv: Option<(Tensor<f32>, Tensor<f32>)>,
}

impl Example {
    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    pub fn pooled_len(&self) -> usize {
        self.targets.rows()
    }
}

/// Valid rows of the week's `X`, with the excluded channel's value and dt
/// entries zeroed on its own event rows.
pub fn ablated_input(cw: &CachedWeek, ablation: Ablation) -> Tensor<f32> {
    let w = &cw.week;
    let mut x = w.valid_x().to_vec();
    if let Some(excluded) = ablation.excluded() {
        let value_col = match excluded {
            Channel::HeartRate => 0,
            Channel::StepCount => 1,
        };
        for (t, e) in w.events.iter().enumerate().take(w.valid_len) {
            if e.channel == excluded {
                x[t * INPUT_CHANNELS + value_col] = 0.0;
                x[t * INPUT_CHANNELS + 2] = 0.0;
            }
        }
    }
    Tensor::new(vec![w.valid_len, INPUT_CHANNELS], x).expect("valid_len > 0 for cached weeks")
}

/// Builds examples for every cached week accepted by `keep`.
pub fn build_examples(
    cache: &TensorCache,
    cfg: &ModelConfig,
    ablation: Ablation,
    with_hrv: bool,
    keep: impl Fn(&CachedWeek) -> bool,
) -> Result<Vec<Example>, TrainError> {
    if cache.header.tasks != cfg.tasks {
        return Err(TrainError::Incompatible(format!(
            "cache tasks {:?} differ from model tasks {:?}",
            cache.header.tasks, cfg.tasks
        )));
    }
    if cfg.pool != 2 {
        return Err(TrainError::Incompatible("label alignment assumes pool length 2".into()));
    }
    let stages = cfg.pool_stages();
    let k = cfg.tasks.len();
    let mut out = Vec::new();
    for cw in cache.weeks.iter().filter(|w| keep(w)) {
        if cw.week.valid_len == 0 {
            continue;
        }
        let pooled = cfg.output_len(cw.week.valid_len);
        let t = align_labels(&cw.week, &cw.labels, pooled, stages)?;
        let hrv = if with_hrv {
            let h = hrv_targets(&cw.week.events, stages);
            let n = HRV_WINDOWS_MS.len();
            let to32 = |v: &[f64]| v.iter().map(|&a| a as f32).collect::<Vec<_>>();
            Some((Tensor::new(vec![h.len, n], to32(&h.values))?, Tensor::new(vec![h.len, n], to32(&h.mask))?))
        } else {
            None
        };
        out.push(Example {
            user_id: cw.week.user_id.clone(),
            week_start_ms: cw.week.week_start_ms,
            split: cw.split,
            labels: cw.labels.clone(),
            x: ablated_input(cw, ablation),
            targets: Tensor::new(vec![pooled, k], t.y)?,
            mask: Tensor::new(vec![pooled, k], t.mask)?,
            hrv,
        });
    }
    Ok(out)
}
