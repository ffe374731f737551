//! Central finite-difference checks of tape gradients, in `f64`.
//!
//! A graph output `y` is reduced to the scalar `L = Σ rᵢ·yᵢ` with a fixed
//! random `r`; the tape's gradient of `L` is compared against
//! `(L(x + h) − L(x − h)) / 2h`, which only ever evaluates the graph forward.

use rand::seq::index::sample;
use rand::Rng;

use crate::{Result, Tape, Tensor, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(input, element, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        if other.worst.is_some() && (self.worst.is_none() || other.max_relative_error > self.max_relative_error) {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
    }
}

fn projected<F>(build: &F, inputs: &[Tensor<f64>], r: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &vars)?;
    Ok(tape.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks up to `per_input` randomly chosen elements of every input (all of
/// them if the input is smaller).
pub fn check_gradients<F, R>(inputs: &[Tensor<f64>], build: F, per_input: usize, rng: &mut R) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &vars)?;
    let r = Tensor::randn(tape.value(y).shape(), 1.0, rng);
    let grads = tape.backward(y, r.clone())?;

    let mut report = GradCheckReport::default();
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(input.shape());
        let analytic = grads.get(vars[i]).unwrap_or(&zeros);
        let coords: Vec<usize> = if input.len() <= per_input {
            (0..input.len()).collect()
        } else {
            sample(rng, input.len(), per_input).into_vec()
        };
        for j in coords {
            let x0 = input.data()[j];
            perturbed[i].data_mut()[j] = x0 + FD_STEP;
            let plus = projected(&build, &perturbed, &r)?;
            perturbed[i].data_mut()[j] = x0 - FD_STEP;
            let minus = projected(&build, &perturbed, &r)?;
            perturbed[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_passes_and_error_is_relative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[1, 2, 2, 1], 1.0, &mut rng);
        let ok = check_gradients(&[x.clone()], |t, v| t.mul(v[0], v[0]), 10, &mut rng).unwrap();
        assert!(ok.max_relative_error < 1e-6);
        assert_eq!(ok.checked, 4);
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(1e-9, 0.0), 1e-9 / RELATIVE_FLOOR);
    }
}
