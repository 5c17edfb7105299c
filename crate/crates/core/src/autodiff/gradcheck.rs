use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tape, Tensor, Var};

const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

/// Compares tape gradients against central finite differences.
///
/// `f` rebuilds the scalar objective from the parameter leaves it is given;
/// it must be deterministic. At most `max_coords` coordinates per parameter
/// are probed, picked with `seed`. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)`. The floor keeps derivatives near zero,
/// where central differences carry about 1e-11 of round-off, from reading
/// as large relative errors.
pub fn grad_check<F>(
    params: &[(String, Tensor<f64>)],
    f: F,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut values: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let first = eval(&values)?;
    let second = eval(&values)?;
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, worst_values: (0.0, 0.0), coordinates: 0 };
    for (p, (name, _)) in params.iter().enumerate() {
        let n = values[p].len();
        let analytic = grads.get(vars[p]).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let picks = index::sample(&mut rng, n, max_coords.min(n)).into_vec();
        for i in picks {
            let orig = values[p].data()[i];
            values[p].data_mut()[i] = orig + eps;
            let plus = eval(&values)?;
            values[p].data_mut()[i] = orig - eps;
            let minus = eval(&values)?;
            values[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
