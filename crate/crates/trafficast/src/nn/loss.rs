use super::NnError;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Scale to unit Euclidean norm. Errors on the zero vector.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, NnError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(NnError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn check_unit_norm(v: &[f64]) -> Result<(), NnError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(NnError::NotUnitNorm(norm));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hinged triplet loss over unit-norm embeddings:
/// `max(0, ||a-p||^2 - ||a-n||^2 + margin)`.
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<f64, NnError> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(NnError::ShapeMismatch(
            "triplet embeddings must share one extent".into(),
        ));
    }
    check_unit_norm(anchor)?;
    check_unit_norm(positive)?;
    check_unit_norm(negative)?;
    Ok(triplet_loss_grads(anchor, positive, negative, margin).0)
}

/// Loss value plus gradients w.r.t. the three embeddings. On the hinge
/// floor all gradients are zero.
pub fn triplet_loss_grads(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d_ap = squared_distance(anchor, positive);
    let d_an = squared_distance(anchor, negative);
    let raw = d_ap - d_an + margin;
    if raw <= 0.0 {
        let zeros = vec![0.0; anchor.len()];
        return (0.0, zeros.clone(), zeros.clone(), zeros);
    }
    let grad_anchor = negative
        .iter()
        .zip(positive)
        .map(|(n, p)| 2.0 * (n - p))
        .collect();
    let grad_positive = anchor
        .iter()
        .zip(positive)
        .map(|(a, p)| -2.0 * (a - p))
        .collect();
    let grad_negative = anchor
        .iter()
        .zip(negative)
        .map(|(a, n)| 2.0 * (a - n))
        .collect();
    (raw, grad_anchor, grad_positive, grad_negative)
}

/// Squared error of one prediction and its gradient w.r.t. the prediction.
pub fn mse_loss(prediction: f64, target: f64) -> (f64, f64) {
    let diff = prediction - target;
    (diff * diff, 2.0 * diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        l2_normalize(v).unwrap()
    }

    #[test]
    fn l2_normalize_3_4() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_unit_vector_unchanged() {
        let v = unit(&[1.0, 2.0, -2.0]);
        let again = l2_normalize(&v).unwrap();
        for (a, b) in v.iter().zip(&again) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn l2_normalize_zero_errors() {
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(NnError::ZeroVector)
        ));
    }

    #[test]
    fn anchor_equals_positive() {
        let a = unit(&[1.0, 0.0]);
        let n = unit(&[0.0, 1.0]);
        let margin = 0.3;
        let loss = triplet_loss(&a, &a, &n, margin).unwrap();
        let d_an = 2.0; // squared distance of orthogonal unit vectors
        assert!((loss - (margin - d_an).max(0.0)).abs() < 1e-12);
        // with a tight margin the hinge clamps to zero
        assert_eq!(triplet_loss(&a, &a, &n, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn anchor_equals_negative() {
        let a = unit(&[1.0, 0.0]);
        let p = unit(&[0.0, 1.0]);
        let margin = 0.2;
        let loss = triplet_loss(&a, &p, &a, margin).unwrap();
        assert!((loss - (2.0 + margin)).abs() < 1e-12);
    }

    #[test]
    fn well_separated_negative_hits_hinge_floor() {
        let a = unit(&[1.0, 0.05]);
        let p = unit(&[1.0, -0.05]);
        let n = unit(&[-1.0, 0.0]);
        assert_eq!(triplet_loss(&a, &p, &n, 0.0).unwrap(), 0.0);
        let (_, ga, gp, gn) = triplet_loss_grads(&a, &p, &n, 0.0);
        assert!(ga.iter().chain(&gp).chain(&gn).all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_non_unit_inputs() {
        let a = vec![2.0, 0.0];
        let u = unit(&[0.0, 1.0]);
        assert!(matches!(
            triplet_loss(&a, &u, &u, 0.2),
            Err(NnError::NotUnitNorm(_))
        ));
    }

    #[test]
    fn loss_nonnegative_and_zero_iff_separated() {
        let a = unit(&[0.8, 0.6]);
        let p = unit(&[0.7, 0.7]);
        let n = unit(&[-0.6, 0.8]);
        let margin = 0.2;
        let loss = triplet_loss(&a, &p, &n, margin).unwrap();
        assert!(loss >= 0.0);
        let d_ap: f64 = a.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum();
        let d_an: f64 = a.iter().zip(&n).map(|(x, y)| (x - y) * (x - y)).sum();
        assert_eq!(loss == 0.0, d_an >= d_ap + margin);
    }
}
