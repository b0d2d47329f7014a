//! Certified Lipschitz upper bounds for MLPs.

use super::mlp::Network;
use super::tensor::{dot, Tensor};
use super::EngineError;

const REL_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 200_000;

/// Largest singular value of `w` by power iteration on `WᵀW`.
pub fn spectral_norm(w: &Tensor) -> f64 {
    let (rows, cols) = (w.rows(), w.cols());
    if w.data().iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // Deterministic, non-symmetric start vector.
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + 0.37 * i as f64 / cols as f64).collect();
    normalize(&mut v);
    let mut wv = vec![0.0; rows];
    let mut u = vec![0.0; cols];
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        for (r, out) in wv.iter_mut().enumerate() {
            *out = dot(w.row(r), &v);
        }
        u.iter_mut().for_each(|x| *x = 0.0);
        for (r, &s) in wv.iter().enumerate() {
            for (o, &wrc) in u.iter_mut().zip(w.row(r)) {
                *o += wrc * s;
            }
        }
        let next = dot(&v, &u);
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Start vector in the null space: restart inside the row space.
            let r = (0..rows)
                .find(|&r| w.row(r).iter().any(|&x| x != 0.0))
                .expect("non-zero matrix");
            v = w.row(r).to_vec();
            normalize(&mut v);
            continue;
        }
        let converged = (next - lambda).abs() <= REL_TOL * next.abs();
        lambda = next;
        for (vi, ui) in v.iter_mut().zip(&u) {
            *vi = ui / norm;
        }
        if converged {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// `K̂ = ∏_i σ_max(W_i)`, valid when every activation is 1-Lipschitz.
pub fn lipschitz_upper_bound(net: &Network) -> Result<f64, EngineError> {
    if let Some(a) = net.activations().iter().find(|a| a.slope_bound() > 1.0) {
        return Err(EngineError::Activation(format!(
            "{a} has slope bound {} > 1",
            a.slope_bound()
        )));
    }
    Ok(net.weights().iter().map(spectral_norm).product())
}
