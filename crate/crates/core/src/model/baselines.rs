//! Logistic-regression and one-hidden-layer MLP baselines over the
//! hand-engineered week features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::train::Adam;

pub const LOGISTIC_L2: f64 = 1e-3;
pub const MLP_HIDDEN: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("need at least 2 positive and 2 negative training labels, got {pos}/{neg}")]
    TooFewLabels { pos: usize, neg: usize },
    #[error("feature rows have inconsistent widths")]
    Ragged,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Per-column z-scoring fitted on the training split. Constant columns map
/// to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..d).map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()).collect();
        Self { mean, sd }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&x, (&m, &s))| if s > 1e-12 { (x - m) / s } else { 0.0 })
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

fn check(x: &[Vec<f64>], y: &[bool]) -> Result<usize, BaselineError> {
    let d = x.first().map_or(0, Vec::len);
    if x.len() != y.len() || x.iter().any(|r| r.len() != d) {
        return Err(BaselineError::Ragged);
    }
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(BaselineError::TooFewLabels { pos, neg });
    }
    Ok(d)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    /// Full-batch gradient descent on mean log-loss + λ/2·‖w‖².
    pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<Self, BaselineError> {
        const STEPS: usize = 3000;
        const LR: f64 = 0.5;
        let d = check(x, y)?;
        let n = x.len() as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        for _ in 0..STEPS {
            gw.iter_mut().zip(&w).for_each(|(g, &wj)| *g = lambda * wj);
            let mut gb = 0.0;
            for (row, &label) in x.iter().zip(y) {
                let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = (sigmoid(z) - f64::from(u8::from(label))) / n;
                gb += r;
                gw.iter_mut().zip(row).for_each(|(g, &a)| *g += r * a);
            }
            w.iter_mut().zip(&gw).for_each(|(wj, g)| *wj -= LR * g);
            b -= LR * gb;
        }
        Ok(Self { weights: w, bias: b })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.bias + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    w1: Tensor<f64>,
    b1: Tensor<f64>,
    w2: Tensor<f64>,
    b2: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct MlpConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { max_epochs: 300, patience: 20, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

impl MlpModel {
    /// `relu(x·W1 + b1)·w2 + b2` through a sigmoid, fitted with Adam on
    /// squared error; keeps the weights with the best tune loss.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[bool],
        tune_x: &[Vec<f64>],
        tune_y: &[bool],
        cfg: &MlpConfig,
    ) -> Result<Self, BaselineError> {
        let d = check(x, y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = (3.0 / d.max(1) as f64).sqrt();
        // Output bias starts at the base-rate logit.
        let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        let mut model = Self {
            w1: Tensor::from_fn(&[d.max(1), MLP_HIDDEN], |_| rng.gen_range(-bound..bound)),
            b1: Tensor::zeros(&[MLP_HIDDEN]),
            w2: Tensor::from_fn(&[MLP_HIDDEN, 1], |_| rng.gen_range(-0.2..0.2)),
            b2: Tensor::filled(&[1], (rate / (1.0 - rate)).ln()),
        };
        let (tx, ty) = if tune_x.is_empty() { (x, y) } else { (tune_x, tune_y) };
        let mut adam = Adam::new(cfg.lr);
        let mut best = (model.loss(tx, ty)?, model.clone());
        let mut stale = 0;
        let mut order: Vec<usize> = (0..x.len()).collect();
        for _ in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let bx: Vec<Vec<f64>> = batch.iter().map(|&i| x[i].clone()).collect();
                let by: Vec<bool> = batch.iter().map(|&i| y[i]).collect();
                let mut tape = Tape::new();
                let vars = [
                    tape.param(model.w1.clone()),
                    tape.param(model.b1.clone()),
                    tape.param(model.w2.clone()),
                    tape.param(model.b2.clone()),
                ];
                let loss = model.graph(&mut tape, vars, &bx, &by)?;
                let grads = tape.backward(loss)?;
                adam.begin_step();
                let mut params = [&mut model.w1, &mut model.b1, &mut model.w2, &mut model.b2];
                for (k, (p, v)) in params.iter_mut().zip(vars).enumerate() {
                    if let Some(g) = grads.get(v) {
                        // Backward already rejects non-finite gradients.
                        let _ = adam.update(["w1", "b1", "w2", "b2"][k], p.data_mut(), g.data());
                    }
                }
            }
            let l = model.loss(tx, ty)?;
            if l < best.0 {
                best = (l, model.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        Ok(best.1)
    }

    fn graph(
        &self,
        tape: &mut Tape<f64>,
        [w1, b1, w2, b2]: [crate::autodiff::Var; 4],
        x: &[Vec<f64>],
        y: &[bool],
    ) -> Result<crate::autodiff::Var, AutodiffError> {
        let rows: Vec<Vec<f64>> = x.iter().map(|r| if r.is_empty() { vec![0.0] } else { r.clone() }).collect();
        let input = tape.constant(Tensor::from_rows(&rows)?);
        let h = tape.matmul(input, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, w2)?;
        let o = tape.add_bias(o, b2)?;
        let p = tape.sigmoid(o)?;
        let target = Tensor::new(vec![y.len(), 1], y.iter().map(|&v| f64::from(u8::from(v))).collect())?;
        let mask = Tensor::filled(&[y.len(), 1], 1.0);
        tape.masked_sse(p, &target, &mask)
    }

    fn loss(&self, x: &[Vec<f64>], y: &[bool]) -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = [
            tape.constant(self.w1.clone()),
            tape.constant(self.b1.clone()),
            tape.constant(self.w2.clone()),
            tape.constant(self.b2.clone()),
        ];
        let l = self.graph(&mut tape, vars, x, y)?;
        Ok(tape.value(l).data()[0])
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut z = self.b2.data()[0];
        for j in 0..MLP_HIDDEN {
            let mut a = self.b1.data()[j];
            for (i, &v) in row.iter().enumerate() {
                a += v * self.w1.at(i, j);
            }
            z += a.max(0.0) * self.w2.data()[j];
        }
        sigmoid(z)
    }
}
