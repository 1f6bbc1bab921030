//! Two-class Fisher linear discriminant with shrinkage regularisation.
//!
//! Class 1 is the target class. Training solves
//! `((1-λ) S_w + λ tr(S_w)/d · I) w = m₁ - m₂` by Cholesky factorisation and
//! normalises `w`; the bias places the boundary midway between the class means.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::LabeledDataset;

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Projected mean of the target class, `wᵀm₁`.
    pub mu_target: f64,
    /// Projected mean of the non-target class, `wᵀm₂`.
    pub mu_nontarget: f64,
    pub shrinkage: f64,
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `wᵀv + b`; larger is more target-like.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.weights.len() {
            return Err(Error::Validation(format!(
                "feature length {} does not match model dimension {}",
                v.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }

    /// Scores every row of `x`.
    pub fn score_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::Validation(format!(
                "feature width {} does not match model dimension {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        let w = DVector::from_column_slice(&self.weights);
        Ok((x * w).iter().map(|s| s + self.bias).collect())
    }
}

fn class_mean(x: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(x.ncols());
    for &r in rows {
        m += x.row(r).transpose();
    }
    m / rows.len() as f64
}

/// Fits the discriminant on rows of `x` labelled by `labels` (true = target).
pub fn train(x: &DMatrix<f64>, labels: &[bool], shrinkage: f64) -> Result<LdaModel> {
    if x.nrows() != labels.len() {
        return Err(Error::Validation(format!(
            "{} feature rows for {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Config(format!("shrinkage {shrinkage} outside [0, 1]")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature values".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Validation("training data must contain both classes".into()));
    }
    let d = x.ncols();
    let m1 = class_mean(x, &pos);
    let m2 = class_mean(x, &neg);

    let mut centered = x.clone();
    for (i, mut row) in centered.row_iter_mut().enumerate() {
        let m = if labels[i] { &m1 } else { &m2 };
        row -= m.transpose();
    }
    let scatter = centered.transpose() * &centered;
    let ridge = shrinkage * scatter.trace() / d as f64;
    let mut regularised = scatter * (1.0 - shrinkage);
    for i in 0..d {
        regularised[(i, i)] += ridge;
    }
    let diff = &m1 - &m2;
    let chol = regularised
        .cholesky()
        .ok_or_else(|| Error::Numeric("within-class scatter is not positive definite".into()))?;
    let w = chol.solve(&diff);
    let norm = w.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numeric("class means coincide; discriminant undefined".into()));
    }
    let w = w / norm;
    let mu_target = w.dot(&m1);
    let mu_nontarget = w.dot(&m2);
    Ok(LdaModel {
        weights: w.iter().copied().collect(),
        bias: -(mu_target + mu_nontarget) / 2.0,
        mu_target,
        mu_nontarget,
        shrinkage,
    })
}

pub fn train_dataset(data: &LabeledDataset, shrinkage: f64) -> Result<LdaModel> {
    train(&data.vectors, &data.labels, shrinkage)
}

/// `(μ₁ - μ₂)² / (S₁² + S₂²)` of the projections `wᵀx`, with `Sᵢ²` the
/// within-class variance. Zero scatter gives `+∞`.
pub fn fisher_criterion_direction(weights: &[f64], x: &DMatrix<f64>, labels: &[bool]) -> Result<f64> {
    if x.ncols() != weights.len() || x.nrows() != labels.len() {
        return Err(Error::Validation("criterion inputs have inconsistent shapes".into()));
    }
    let w = DVector::from_column_slice(weights);
    let y = x * w;
    let stats = |class: bool| {
        let vals: Vec<f64> = y
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(v, _)| *v)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (vals.len(), mean, var)
    };
    let (n1, mu1, s1) = stats(true);
    let (n2, mu2, s2) = stats(false);
    if n1 == 0 || n2 == 0 {
        return Err(Error::Validation("criterion needs both classes".into()));
    }
    let within = s1 + s2;
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((mu1 - mu2).powi(2) / within)
}

pub fn fisher_criterion(model: &LdaModel, data: &LabeledDataset) -> Result<f64> {
    fisher_criterion_direction(&model.weights, &data.vectors, &data.labels)
}

/// Area under the ROC curve (Mann-Whitney, ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over ties
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Validation("AUC needs both classes".into()));
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn angle(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0).acos()
    }

    /// Two classes with exactly the given means and within-class scatter
    /// `diag(s)` (symmetric ±offsets around each mean).
    fn exact_design(m1: &[f64], m2: &[f64], s: &[f64]) -> (DMatrix<f64>, Vec<bool>) {
        let d = m1.len();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (mean, label) in [(m1, true), (m2, false)] {
            for j in 0..d {
                for sign in [1.0, -1.0] {
                    let mut r = mean.to_vec();
                    // two points per axis: scatter along axis j is 2·δ², so δ = sqrt(s/2)
                    r[j] += sign * (s[j] / 2.0).sqrt();
                    rows.extend(r);
                    labels.push(label);
                }
            }
        }
        (DMatrix::from_row_slice(labels.len(), d, &rows), labels)
    }

    #[test]
    fn one_dimensional_boundary_at_midpoint() {
        let x = DMatrix::from_column_slice(4, 1, &[-0.5, 0.5, 0.5, 1.5]);
        let labels = [false, false, true, true];
        let m = train(&x, &labels, 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!((m.score(&[0.5]).unwrap()).abs() < 1e-12);
        assert!(m.score(&[1.0]).unwrap() > 0.0);
    }

    #[test]
    fn identity_scatter_follows_mean_difference() {
        let (x, labels) = exact_design(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]);
        let m = train(&x, &labels, 0.0).unwrap();
        assert!(angle(&m.weights, &[1.0, 0.0]) < 1e-9);
    }

    #[test]
    fn anisotropic_scatter() {
        // S_w = diag(1, 4), Δm = (1, 1) → S_w⁻¹Δm = (1, 0.25)
        let (x, labels) = exact_design(&[1.0, 1.0], &[0.0, 0.0], &[0.5, 2.0]);
        let m = train(&x, &labels, 0.0).unwrap();
        assert!(angle(&m.weights, &[1.0, 0.25]) < 1e-9);
        let norm: f64 = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_shrinkage_gives_mean_difference() {
        let (x, labels) = exact_design(&[1.0, 1.0], &[0.0, 0.0], &[0.5, 2.0]);
        let m = train(&x, &labels, 1.0).unwrap();
        assert!(angle(&m.weights, &[1.0, 1.0]) < 1e-12);
    }

    #[test]
    fn scores_at_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(200, 5, |r, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g + if r < 50 { 1.0 } else { 0.0 }
        });
        let labels: Vec<bool> = (0..200).map(|r| r < 50).collect();
        let m = train(&x, &labels, DEFAULT_SHRINKAGE).unwrap();
        let pos: Vec<usize> = (0..50).collect();
        let neg: Vec<usize> = (50..200).collect();
        let m1 = class_mean(&x, &pos);
        let m2 = class_mean(&x, &neg);
        let s1 = m.score(m1.as_slice()).unwrap();
        let s2 = m.score(m2.as_slice()).unwrap();
        assert!(s1 > 0.0 && s1 > s2);
        let mid = (&m1 + &m2) / 2.0;
        assert!(m.score(mid.as_slice()).unwrap().abs() < 1e-10);
        // moving along w increases the score
        let v: Vec<f64> = mid.iter().zip(&m.weights).map(|(a, w)| a + 0.3 * w).collect();
        assert!(m.score(&v).unwrap() > 0.0);
        assert!(m.score(&[0.0; 3]).is_err());
    }

    #[test]
    fn training_errors() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(train(&x, &[true, true, true], 0.1).is_err());
        let mut y = DMatrix::from_fn(4, 2, |r, c| (r + c) as f64);
        y[(0, 0)] = f64::NAN;
        assert!(train(&y, &[true, false, true, false], 0.1).is_err());
        assert!(train(&x, &[true], 0.1).is_err());
    }

    #[test]
    fn criterion_degenerate_and_gaussian() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]);
        let labels = [false, false, true, true];
        assert_eq!(fisher_criterion_direction(&[1.0], &x, &labels).unwrap(), f64::INFINITY);

        // N(+1, 1) vs N(-1, 1): J = 4 / 2
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 50_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g + if i % 2 == 0 { 1.0 } else { -1.0 }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = DMatrix::from_column_slice(n, 1, &vals);
        let j = fisher_criterion_direction(&[1.0], &x, &labels).unwrap();
        assert!((j - 2.0).abs() <= 0.2, "J = {j}");
        // invariant to positive rescaling
        let j3 = fisher_criterion_direction(&[3.0], &x, &labels).unwrap();
        assert!((j - j3).abs() < 1e-9);
    }

    #[test]
    fn auc_reference() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 1.0], &[true, false]).unwrap(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = auc(&s, &l).unwrap();
        assert!((a + auc(&flipped, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn targets_project_above_nontargets_and_scale_is_irrelevant(
            data in prop::collection::vec(-5.0f64..5.0, 24 * 3),
            shrinkage in 0.05f64..1.0,
            c in 0.1f64..10.0,
        ) {
            let x = DMatrix::from_row_slice(24, 3, &data);
            let labels: Vec<bool> = (0..24).map(|i| i % 3 == 0).collect();
            let m = train(&x, &labels, shrinkage);
            prop_assume!(m.is_ok());
            let m = m.unwrap();
            prop_assert!(m.mu_target > m.mu_nontarget);

            let scaled = train(&(&x * c), &labels, shrinkage).unwrap();
            for (a, b) in m.weights.iter().zip(&scaled.weights) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            prop_assert!((scaled.bias - c * m.bias).abs() < 1e-7 * (1.0 + c * m.bias.abs()));
        }
    }
}
