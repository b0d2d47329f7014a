//! Exact 1-Wasserstein distances.

use super::assignment::{hungarian, AssignmentSolver, CostMatrix};
use super::OtError;
use crate::engine::Tensor;

/// Equal-weight empirical distribution: `n` points in `R^dim`, each with mass `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    points: Tensor,
}

impl EmpiricalSample {
    pub fn new(points: Tensor) -> Result<Self, OtError> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(OtError::Empty);
        }
        if !points.all_finite() {
            return Err(OtError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, OtError> {
        let t = Tensor::from_rows(rows).map_err(|e| OtError::Dim(e.to_string()))?;
        Self::new(t)
    }

    /// One-dimensional sample.
    pub fn from_values(values: &[f64]) -> Result<Self, OtError> {
        Self::new(Tensor::column(values))
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }
}

/// Optimal coupling between two equal-weight samples of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `a_i` is transported to `b_{perm[i]}`.
    pub perm: Vec<usize>,
    /// `(1/n) Σ ‖a_i − b_{perm[i]}‖₂`.
    pub cost: f64,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn cost_matrix(a: &EmpiricalSample, b: &EmpiricalSample) -> CostMatrix {
    CostMatrix::from_fn(a.len(), |i, j| euclidean(a.point(i), b.point(j)))
}

fn check_pair(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<(), OtError> {
    if a.len() != b.len() {
        return Err(OtError::CountMismatch(a.len(), b.len()));
    }
    if a.dim() != b.dim() {
        return Err(OtError::Dim(format!("{} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Exact W1 between equal-size empirical samples under the Euclidean ground
/// metric. The returned matching attains the value.
pub fn w1_exact_equal(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<(f64, Matching), OtError> {
    w1_exact_equal_with(hungarian, a, b)
}

/// As [`w1_exact_equal`] with an explicit assignment solver.
pub fn w1_exact_equal_with(
    solver: AssignmentSolver,
    a: &EmpiricalSample,
    b: &EmpiricalSample,
) -> Result<(f64, Matching), OtError> {
    check_pair(a, b)?;
    let cost = cost_matrix(a, b);
    let perm = solver(&cost);
    let value = cost.total(&perm) / a.len() as f64;
    Ok((value, Matching { perm, cost: value }))
}

/// Finite distribution on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist1D {
    support: Vec<f64>,
    probs: Vec<f64>,
}

pub const NORMALIZATION_TOL: f64 = 1e-12;

impl DiscreteDist1D {
    /// `support` must be strictly increasing; `probs` nonnegative summing to 1.
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self, OtError> {
        if support.is_empty() {
            return Err(OtError::Empty);
        }
        if support.len() != probs.len() {
            return Err(OtError::SupportMismatch(format!(
                "{} support points, {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if support.iter().chain(&probs).any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite);
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OtError::Unsorted);
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(OtError::Unnormalized(total));
        }
        Ok(Self { support, probs })
    }

    /// Normalizes nonnegative `weights` before validating.
    pub fn from_weights(support: Vec<f64>, weights: &[f64]) -> Result<Self, OtError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(OtError::Unnormalized(total));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // Push the rounding residue onto the largest mass.
        let residue = 1.0 - probs.iter().sum::<f64>();
        if let Some(big) = probs
            .iter_mut()
            .max_by(|a, b| a.partial_cmp(b).expect("finite"))
        {
            *big += residue;
        }
        Self::new(support, probs)
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            support: vec![x],
            probs: vec![1.0],
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probabilities re-indexed on the sorted union support `grid` (zeros where absent).
    pub fn on_grid(&self, grid: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        let mut k = 0;
        for (x, p) in self.support.iter().zip(&self.probs) {
            while grid[k] < *x {
                k += 1;
            }
            out[k] = *p;
        }
        out
    }
}

/// Sorted union of two supports.
pub fn union_support(p: &DiscreteDist1D, q: &DiscreteDist1D) -> Vec<f64> {
    let mut grid: Vec<f64> = p.support.iter().chain(&q.support).copied().collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite support"));
    grid.dedup();
    grid
}

/// `∫ |F_p − F_q|` over the merged support, summed piecewise.
pub fn w1_1d_weighted(p: &DiscreteDist1D, q: &DiscreteDist1D) -> f64 {
    let grid = union_support(p, q);
    let pg = p.on_grid(&grid);
    let qg = q.on_grid(&grid);
    let (mut fp, mut fq, mut total) = (0.0, 0.0, 0.0);
    for k in 0..grid.len() - 1 {
        fp += pg[k];
        fq += qg[k];
        total += (fp - fq).abs() * (grid[k + 1] - grid[k]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_multisets_are_zero() {
        let a = EmpiricalSample::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]]).unwrap();
        let b = EmpiricalSample::from_rows(&[vec![-1.0, 0.5], vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let (v, m) = w1_exact_equal(&a, &b).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(m.perm, vec![1, 2, 0]);
    }

    #[test]
    fn single_points() {
        let a = EmpiricalSample::from_values(&[0.0]).unwrap();
        let b = EmpiricalSample::from_values(&[1.0]).unwrap();
        assert_eq!(w1_exact_equal(&a, &b).unwrap().0, 1.0);
    }

    #[test]
    fn square_corners() {
        // Permutations cost 1.0 and sqrt(2); the minimum is 1.0.
        let a = EmpiricalSample::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let b = EmpiricalSample::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (v, m) = w1_exact_equal(&a, &b).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(m.cost, v);
    }

    #[test]
    fn equal_sample_errors() {
        let a = EmpiricalSample::from_values(&[0.0, 1.0]).unwrap();
        let b = EmpiricalSample::from_values(&[0.0]).unwrap();
        assert!(matches!(w1_exact_equal(&a, &b), Err(OtError::CountMismatch(2, 1))));
        let c = EmpiricalSample::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(w1_exact_equal(&a, &c), Err(OtError::Dim(_))));
        assert!(matches!(EmpiricalSample::from_values(&[]), Err(OtError::Empty)));
        assert!(matches!(EmpiricalSample::from_values(&[f64::NAN]), Err(OtError::NonFinite)));
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(w1_1d_weighted(&DiscreteDist1D::dirac(0.0), &DiscreteDist1D::dirac(1.0)), 1.0);
        let p = DiscreteDist1D::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let q = DiscreteDist1D::new(vec![0.0, 1.0], vec![0.4, 0.6]).unwrap();
        assert_eq!(w1_1d_weighted(&p, &p), 0.0);
        assert!((w1_1d_weighted(&p, &q) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(matches!(DiscreteDist1D::new(vec![0.0, 1.0], vec![0.5, 0.6]), Err(OtError::Unnormalized(_))));
        assert!(matches!(DiscreteDist1D::new(vec![1.0, 0.0], vec![0.5, 0.5]), Err(OtError::Unsorted)));
        assert!(matches!(DiscreteDist1D::new(vec![0.0, 1.0], vec![-0.5, 1.5]), Err(OtError::Unnormalized(_))));
    }

    #[test]
    fn one_dimensional_agrees_with_assignment() {
        // Equal weights on n points reduce to the assignment problem.
        let mut rng = crate::rng::Rng::new(8);
        for _ in 0..20 {
            let mut a: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let mut b: Vec<f64> = (0..6).map(|_| rng.normal() + 0.3).collect();
            let via_assignment = w1_exact_equal(
                &EmpiricalSample::from_values(&a).unwrap(),
                &EmpiricalSample::from_values(&b).unwrap(),
            )
            .unwrap()
            .0;
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let p = DiscreteDist1D::new(a, vec![1.0 / 6.0; 6]).unwrap();
            let q = DiscreteDist1D::new(b, vec![1.0 / 6.0; 6]).unwrap();
            assert!((w1_1d_weighted(&p, &q) - via_assignment).abs() < 1e-12);
        }
    }
}
