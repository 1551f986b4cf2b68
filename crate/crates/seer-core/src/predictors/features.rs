//! Feature preprocessing: per-feature standardization and degree-2
//! polynomial expansion.

use super::PredictorError;

/// Per-feature location/scale fitted on training data; transforms features
/// toward zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Fits means and (population) standard deviations on `x` (one row per
    /// sample). Zero-variance features get σ := 1 so they transform to a
    /// constant zero instead of dividing by zero.
    pub fn fit(x: &[Vec<f64>]) -> Result<Self, PredictorError> {
        if x.is_empty() {
            return Err(PredictorError::FitError("no samples to standardize".into()));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            assert_eq!(row.len(), d, "ragged feature matrix");
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in x {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = x - m;
                *v += c * c;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.mean.len(), "feature dimension mismatch");
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub(super) fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Self {
        Self { mean, std }
    }

    pub(super) fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub(super) fn std(&self) -> &[f64] {
        &self.std
    }
}

/// Length of [`poly_expand`]'s output for a `d`-dimensional input.
pub fn poly_expand_len(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

/// All polynomial combinations of the features up to degree 2:
/// `[1, x_i ∀i, x_i·x_j ∀ i≤j]`, quadratic terms in lexicographic order.
pub fn poly_expand(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    assert!(d >= 1, "cannot expand an empty feature vector");
    let mut out = Vec::with_capacity(poly_expand_len(d));
    out.push(1.0);
    out.extend_from_slice(x);
    for i in 0..d {
        for j in i..d {
            out.push(x[i] * x[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn two_point_feature_maps_to_unit_spread() {
        let s = Standardizer::fit(&[vec![0.0], vec![2.0]]).unwrap();
        assert_relative_eq!(s.apply(&[0.0])[0], -1.0);
        assert_relative_eq!(s.apply(&[2.0])[0], 1.0);
    }

    #[test]
    fn constant_feature_becomes_zero() {
        let s = Standardizer::fit(&[vec![5.0, 1.0], vec![5.0, 3.0]]).unwrap();
        assert_relative_eq!(s.apply(&[5.0, 1.0])[0], 0.0);
        assert_relative_eq!(s.apply(&[5.0, 3.0])[0], 0.0);
        assert_relative_eq!(s.apply(&[5.0, 3.0])[1], 1.0);
    }

    #[test]
    fn empty_input_is_a_fit_error() {
        assert!(matches!(
            Standardizer::fit(&[]),
            Err(PredictorError::FitError(_))
        ));
    }

    #[test]
    fn random_matrix_transforms_to_zero_mean_unit_variance() {
        let mut rng = crate::derive_rng(3, "features-test");
        let x: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let s = Standardizer::fit(&x).unwrap();
        let tx: Vec<Vec<f64>> = x.iter().map(|row| s.apply(row)).collect();
        for j in 0..5 {
            let mean: f64 = tx.iter().map(|r| r[j]).sum::<f64>() / 100.0;
            let var: f64 = tx.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-10, "column {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-8, "column {j} var {var}");
        }
    }

    #[test]
    fn expand_enumerates_degree_two_terms() {
        let (a, b) = (3.0, -2.0);
        assert_eq!(poly_expand(&[a, b]), vec![1.0, a, b, a * a, a * b, b * b]);
    }

    #[test]
    fn expand_lengths_for_cluster_features() {
        assert_eq!(poly_expand(&vec![0.5; 5]).len(), 21);
        assert_eq!(poly_expand(&vec![0.5; 9]).len(), 55);
    }

    proptest! {
        #[test]
        fn expand_length_formula_holds(d in 1usize..=20) {
            let x = vec![1.0; d];
            prop_assert_eq!(poly_expand(&x).len(), poly_expand_len(d));
            prop_assert_eq!(poly_expand(&x).len(), 1 + d + d * (d + 1) / 2);
        }

        #[test]
        fn standardize_roundtrips_through_inverse(
            vals in proptest::collection::vec(-100.0f64..100.0, 4..40)
        ) {
            let x: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
            let s = Standardizer::fit(&x).unwrap();
            for row in &x {
                let t = s.apply(row);
                let back = t[0] * s.std()[0] + s.mean()[0];
                prop_assert!((back - row[0]).abs() < 1e-9);
            }
        }
    }
}
