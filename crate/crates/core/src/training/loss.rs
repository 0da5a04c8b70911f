//! Classification and auxiliary losses.

use crate::error::{Error, Result};
use crate::model::STAGES;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Mean over rows of `‖onehot(label) − probs‖₂`.
pub fn aux_loss<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (rows, cols) = (probs.rows(), probs.cols());
    if labels.len() != rows || rows == 0 {
        return Err(Error::Contract(format!("{} labels for {rows} probability rows", labels.len())));
    }
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        if l >= cols {
            return Err(Error::Contract(format!("label {l} outside {cols} classes")));
        }
        let sq: f64 = probs
            .row(r)
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let d = if j == l { 1.0 } else { 0.0 } - p.f64();
                d * d
            })
            .sum();
        total += sq.sqrt();
    }
    Ok(total / rows as f64)
}

/// Cross-entropy plus `lambda` times the sum of the per-stage auxiliary losses.
pub fn total_loss(ce: f64, aux: &[f64], lambda: f64) -> Result<f64> {
    check_aux_count(aux.len())?;
    Ok(ce + lambda * aux.iter().sum::<f64>())
}

fn check_aux_count(n: usize) -> Result<()> {
    if n != STAGES - 1 {
        return Err(Error::Contract(format!("{n} auxiliary losses, expected {}", STAGES - 1)));
    }
    Ok(())
}

/// `‖onehot(label) − probs‖₂` for a single `1 × classes` probability row.
pub fn aux_loss_var<T: Scalar>(tape: &mut Tape<'_, T>, probs: Var, label: usize) -> Result<Var> {
    let cols = tape.value(probs).cols();
    if tape.value(probs).rows() != 1 || label >= cols {
        return Err(Error::Contract(format!("aux loss needs one probability row and a label below {cols}")));
    }
    let mut onehot = Tensor::zeros(&[1, cols]);
    onehot.data_mut()[label] = T::one();
    let y = tape.constant(onehot);
    let diff = tape.sub(y, probs)?;
    Ok(tape.l2_norm(diff))
}

/// Per-sample objective on the tape. `aux_probs` must hold one row per
/// stage except the last.
pub fn total_loss_var<T: Scalar>(
    tape: &mut Tape<'_, T>,
    logits: Var,
    aux_probs: &[Var],
    label: usize,
    lambda: f64,
) -> Result<Var> {
    check_aux_count(aux_probs.len())?;
    let ce = tape.cross_entropy(logits, &[label])?;
    let mut aux_sum = aux_loss_var(tape, aux_probs[0], label)?;
    for &p in &aux_probs[1..] {
        let a = aux_loss_var(tape, p, label)?;
        aux_sum = tape.add(aux_sum, a)?;
    }
    let weighted = tape.scale(aux_sum, T::of(lambda));
    tape.add(ce, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aux_loss_examples() {
        let perfect = Tensor::<f64>::from_rows(&[&[0.0, 1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(aux_loss(&perfect, &[1]).unwrap(), 0.0);
        let uniform = Tensor::<f64>::from_rows(&[&[0.25; 4]]).unwrap();
        let v = aux_loss(&uniform, &[2]).unwrap();
        assert!((v - (0.75f64 * 0.75 + 3.0 * 0.0625).sqrt()).abs() < 1e-12);
        assert!((v - 0.8660).abs() < 1e-4);
        let two = Tensor::<f64>::from_rows(&[&[0.25; 4], &[0.25; 4]]).unwrap();
        assert_eq!(aux_loss(&two, &[2, 2]).unwrap(), v);
        assert!(matches!(aux_loss(&two, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn total_loss_examples() {
        let ce = 1.234;
        assert_eq!(total_loss(ce, &[0.5, 0.7], 0.0).unwrap(), ce);
        assert_eq!(total_loss(ce, &[0.0, 0.0], 1.0).unwrap(), ce);
        let u = 0.75f64.sqrt();
        assert!((total_loss(ce, &[u, u], 1.0).unwrap() - (ce + 2.0 * 0.8660)).abs() < 1e-4);
        assert!(matches!(total_loss(ce, &[u], 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_losses_match_plain_ones() {
        let logits = Tensor::<f64>::from_rows(&[&[0.3, -1.0, 2.0, 0.1]]).unwrap();
        let p1 = Tensor::<f64>::from_rows(&[&[0.25; 4]]).unwrap();
        let p2 = Tensor::<f64>::from_rows(&[&[0.1, 0.2, 0.3, 0.4]]).unwrap();
        let mut tape = Tape::new();
        let (l, a, b) = (tape.leaf(&logits), tape.leaf(&p1), tape.leaf(&p2));
        let ce_var = tape.cross_entropy(l, &[2]).unwrap();
        let ce = tape.value(ce_var).item();
        let total = total_loss_var(&mut tape, l, &[a, b], 2, 0.5).unwrap();
        let expect = total_loss(ce, &[aux_loss(&p1, &[2]).unwrap(), aux_loss(&p2, &[2]).unwrap()], 0.5).unwrap();
        assert!((tape.value(total).item() - expect).abs() < 1e-12);
        assert!(total_loss_var(&mut tape, l, &[a], 2, 0.5).is_err());
    }
}
