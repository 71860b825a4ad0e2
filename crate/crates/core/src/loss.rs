//! Hybrid BCE + IoU loss with deep supervision on the three heads.

use serde::Serialize;

use crate::error::Result;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: Real = 1e-7;

/// Mean binary cross-entropy.
pub fn bce_loss(tape: &mut Tape, m: Var, gt: &Tensor) -> Result<Var> {
    tape.bce(m, gt, PROB_CLAMP)
}

/// `1 - Σ MG / Σ (M + G - MG)` over every pixel of the batch.
pub fn iou_loss(tape: &mut Tape, m: Var, gt: &Tensor) -> Result<Var> {
    tape.iou(m, gt)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct HeadLoss {
    pub bce: Real,
    pub iou: Real,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// `M1`, `M2`, `M3`.
    pub heads: [HeadLoss; 3],
    pub total: Real,
}

impl LossBreakdown {
    /// Sum of the components in the order the tape adds them.
    pub fn component_sum(&self) -> Real {
        let mut acc = self.heads[0].bce;
        acc += self.heads[0].iou;
        for h in &self.heads[1..] {
            acc += h.bce;
            acc += h.iou;
        }
        acc
    }
}

/// Sum of BCE and IoU over the three heads. Returns the scalar loss node and
/// its breakdown.
pub fn total_loss(tape: &mut Tape, masks: &[Var; 3], gt: &Tensor) -> Result<(Var, LossBreakdown)> {
    let mut heads = [HeadLoss::default(); 3];
    let mut total: Option<Var> = None;
    for (k, &m) in masks.iter().enumerate() {
        let b = bce_loss(tape, m, gt)?;
        let i = iou_loss(tape, m, gt)?;
        heads[k] = HeadLoss {
            bce: tape.value(b).item(),
            iou: tape.value(i).item(),
        };
        let acc = match total {
            None => b,
            Some(t) => tape.add(t, b)?,
        };
        total = Some(tape.add(acc, i)?);
    }
    let total = total.expect("three heads");
    let breakdown = LossBreakdown {
        heads,
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}
