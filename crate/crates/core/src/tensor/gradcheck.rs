//! Central finite-difference check of tape adjoints.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tape, Tensor, Var};
use crate::error::Result;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckSpec {
    /// Finite-difference step.
    pub h: Real,
    /// Pass threshold on the maximum relative error.
    pub tol: Real,
    /// Upper bound on checked coordinates across all inputs; `None` checks all.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling and the output projection.
    pub seed: u64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            h: 1e-4,
            tol: 1e-4,
            max_coords: Some(64),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: Real,
    pub checked: usize,
    /// Coordinates that needed a smaller step.
    pub refined: usize,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Real,
    pub numeric: Real,
    pub tol: Real,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Retries with a tenfold smaller step for a coordinate that fails.
const REFINEMENTS: usize = 2;

/// Relative error with an absolute floor so that two near-zero derivatives
/// compare as equal.
pub fn rel_error(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compare the analytic gradient of `f` against central differences.
///
/// `f` receives one leaf per entry of `inputs` (all requiring gradients) and
/// may return any tensor; non-scalar outputs are reduced with a fixed random
/// projection so every output element contributes.
pub fn grad_check<F>(f: F, inputs: &[Tensor], spec: GradCheckSpec) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut projection: Option<Tensor> = None;

    let mut eval = |values: &[Tensor], want_grad: bool| -> Result<(Real, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), true)).collect();
        let y = f(&mut tape, &leaves)?;
        let ys = tape.shape(y);
        let loss = if ys.numel() == 1 {
            y
        } else {
            let p = projection
                .get_or_insert_with(|| {
                    let mut r = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9);
                    Tensor::uniform(ys, -1.0, 1.0, &mut r)
                })
                .clone();
            let pv = tape.constant(p);
            let prod = tape.mul(y, pv)?;
            tape.sum(prod)
        };
        let value = tape.value(loss).item();
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let out = leaves
            .iter()
            .zip(values)
            .map(|(&l, v)| grads.get(l).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect();
        Ok((value, out))
    };

    let (_, analytic) = eval(inputs, true)?;

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let picks: Vec<usize> = match spec.max_coords {
        Some(m) if m < total => {
            let mut p = sample(&mut rng, total, m).into_vec();
            p.sort_unstable();
            p
        }
        _ => (0..total).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        refined: 0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        tol: spec.tol,
    };
    let mut values = inputs.to_vec();
    for flat in picks {
        let (mut which, mut idx) = (0, flat);
        while idx >= values[which].numel() {
            idx -= values[which].numel();
            which += 1;
        }
        let orig = values[which].data()[idx];
        let a = analytic[which].data()[idx];
        let mut h = spec.h;
        let (mut numeric, mut err) = (0.0, Real::INFINITY);
        // A ReLU kink within `h` of the point spoils the difference quotient;
        // shrinking the step moves past it, a wrong adjoint stays wrong.
        for attempt in 0..=REFINEMENTS {
            values[which].data_mut()[idx] = orig + h;
            let (plus, _) = eval(&values, false)?;
            values[which].data_mut()[idx] = orig - h;
            let (minus, _) = eval(&values, false)?;
            values[which].data_mut()[idx] = orig;
            let n = (plus - minus) / (2.0 * h);
            let e = rel_error(a, n);
            if e < err {
                (numeric, err) = (n, e);
            }
            if err < spec.tol {
                break;
            }
            if attempt < REFINEMENTS {
                report.refined += 1;
            }
            h *= 0.1;
        }
        report.checked += 1;
        if err > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = err;
            report.worst = (which, idx);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
