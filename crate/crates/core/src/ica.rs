//! FastICA: whitening, symmetric fixed-point iteration with a `tanh`
//! contrast, blink-component detection and reconstruction without the
//! flagged components.
//!
//! Observations follow `x = A s`; the fitted model recovers sources as
//! `u = W V (x - mean)` where `V` whitens and `W` is orthonormal.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{ChannelSet, EegRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcaConfig {
    /// Number of components; `None` keeps one per channel.
    pub components: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    /// Excess kurtosis above which a component may be an artifact.
    pub kurtosis_threshold: f64,
    /// Minimum share of mixing-column energy on `frontal_channels`.
    pub frontal_fraction: f64,
    pub frontal_channels: Vec<String>,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            components: None,
            tol: 1e-4,
            max_iter: 200,
            kurtosis_threshold: 10.0,
            frontal_fraction: 0.6,
            frontal_channels: ["AF3", "AF4", "F7", "F8"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A fitted decomposition. `unmixing` rows are orthonormal; `mixing` is the
/// pseudo-inverse of `unmixing · whitening`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    pub mean: DVector<f64>,
    pub whitening: DMatrix<f64>,
    pub unmixing: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
}

impl IcaModel {
    pub fn from_parts(mean: DVector<f64>, whitening: DMatrix<f64>, unmixing: DMatrix<f64>) -> Result<Self> {
        let k = unmixing.nrows();
        if unmixing.ncols() != k || whitening.nrows() != k || whitening.ncols() != mean.len() {
            return Err(Error::Validation(format!(
                "inconsistent ICA shapes: mean {}, whitening {:?}, unmixing {:?}",
                mean.len(),
                whitening.shape(),
                unmixing.shape()
            )));
        }
        let mixing = (&unmixing * &whitening)
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(Self {
            mean,
            whitening,
            unmixing,
            mixing,
        })
    }

    pub fn components(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    /// `u = W V (x - mean)` for every column of `data`.
    pub fn sources(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(data)?;
        Ok(&self.unmixing * (&self.whitening * center(data, &self.mean)))
    }

    fn check_rows(&self, data: &DMatrix<f64>) -> Result<()> {
        if data.nrows() != self.n_channels() {
            return Err(Error::Validation(format!(
                "data has {} channels, model expects {}",
                data.nrows(),
                self.n_channels()
            )));
        }
        Ok(())
    }
}

fn center(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = data.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out
}

fn covariance(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centered.ncols() as f64;
    (centered * centered.transpose()) / n
}

/// Output of [`whiten`].
#[derive(Debug, Clone)]
pub struct Whitened {
    pub mean: DVector<f64>,
    /// `[k × n_channels]`.
    pub whitening: DMatrix<f64>,
    /// `[k × n_samples]`, identity sample covariance.
    pub data: DMatrix<f64>,
}

/// Centres `data` and projects it onto its top `k` principal axes scaled to
/// unit variance. Eigenvalues below `1e-12 ×` the largest count as rank-deficient.
pub fn whiten(data: &DMatrix<f64>, k: usize) -> Result<Whitened> {
    let (n_ch, n_samples) = data.shape();
    if k > n_ch {
        return Err(Error::Rank {
            rank: n_ch,
            requested: k,
        });
    }
    if n_samples <= n_ch {
        return Err(Error::Validation(format!(
            "need more samples ({n_samples}) than channels ({n_ch})"
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("ICA input contains non-finite values".into()));
    }
    let mean = data.column_mean();
    let centered = center(data, &mean);
    let eig = SymmetricEigen::new(covariance(&centered));
    let mut order: Vec<usize> = (0..n_ch).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-12 * largest && eig.eigenvalues[i] > 0.0)
        .count();
    if k > rank || k == 0 {
        return Err(Error::Rank { rank, requested: k });
    }
    let mut whitening = DMatrix::zeros(k, n_ch);
    for (row, &i) in order.iter().take(k).enumerate() {
        let scale = eig.eigenvalues[i].sqrt().recip();
        for c in 0..n_ch {
            whitening[(row, c)] = eig.eigenvectors[(c, i)] * scale;
        }
    }
    let data = &whitening * centered;
    Ok(Whitened { mean, whitening, data })
}

/// `(W Wᵀ)^{-1/2} W`, computed as `U Vᵀ` from the SVD `W = U Σ Vᵀ`.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = w.clone().svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

pub(crate) fn orthonormality_error(w: &DMatrix<f64>) -> f64 {
    let k = w.nrows();
    (w * w.transpose() - DMatrix::<f64>::identity(k, k)).amax()
}

/// Symmetric FastICA on whitened data. Returns the unmixing matrix `W`
/// `[k × k]` and the sources `W z`.
///
/// Convergence is declared when every row satisfies `1 - |cos θ| < tol`,
/// θ being the angle between successive iterates of that row.
pub fn fastica<R: Rng + ?Sized>(
    whitened: &DMatrix<f64>,
    k: usize,
    tol: f64,
    max_iter: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if whitened.nrows() != k {
        return Err(Error::Validation(format!(
            "whitened data has {} rows, expected {k}",
            whitened.nrows()
        )));
    }
    let n = whitened.ncols() as f64;
    let init = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    let mut w = symmetric_decorrelation(&init);
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let wx = &w * whitened;
        let g = wx.map(f64::tanh);
        let g_prime_mean = DVector::from_iterator(
            k,
            g.row_iter().map(|row| row.iter().map(|t| 1.0 - t * t).sum::<f64>() / n),
        );
        let mut next = (&g * whitened.transpose()) / n;
        for i in 0..k {
            let scale = g_prime_mean[i];
            for j in 0..k {
                next[(i, j)] -= scale * w[(i, j)];
            }
        }
        let next = symmetric_decorrelation(&next);
        debug_assert!(orthonormality_error(&next) < 1e-6);
        last_change = (&next * w.transpose())
            .diagonal()
            .iter()
            .map(|c| 1.0 - c.abs())
            .fold(0.0, f64::max);
        w = next;
        if last_change < tol {
            let sources = &w * whitened;
            return Ok((w, sources));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_change,
        last: Box::new(w),
    })
}

/// Result of a full decomposition.
#[derive(Debug, Clone)]
pub struct IcaFit {
    pub model: IcaModel,
    pub sources: DMatrix<f64>,
    pub converged: bool,
}

/// Whitening plus FastICA, with sign fixed so the largest-magnitude entry of
/// every mixing column is positive. Fails on non-convergence.
pub fn fit<R: Rng + ?Sized>(data: &DMatrix<f64>, config: &IcaConfig, rng: &mut R) -> Result<IcaFit> {
    let k = config.components.unwrap_or(data.nrows());
    let white = whiten(data, k)?;
    let (w, _) = fastica(&white.data, k, config.tol, config.max_iter, rng)?;
    finish(white, w, true)
}

/// Like [`fit`], but keeps the last iterate when FastICA does not converge.
pub fn fit_lenient<R: Rng + ?Sized>(data: &DMatrix<f64>, config: &IcaConfig, rng: &mut R) -> Result<IcaFit> {
    let k = config.components.unwrap_or(data.nrows());
    let white = whiten(data, k)?;
    match fastica(&white.data, k, config.tol, config.max_iter, rng) {
        Ok((w, _)) => finish(white, w, true),
        Err(Error::NotConverged {
            last,
            last_change,
            iterations,
        }) => {
            log::warn!("FastICA stopped after {iterations} iterations (change {last_change:.2e}); using last iterate");
            finish(white, *last, false)
        }
        Err(e) => Err(e),
    }
}

fn finish(white: Whitened, mut w: DMatrix<f64>, converged: bool) -> Result<IcaFit> {
    let probe = IcaModel::from_parts(white.mean.clone(), white.whitening.clone(), w.clone())?;
    for i in 0..w.nrows() {
        let col = probe.mixing.column(i);
        let peak = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if peak < 0.0 {
            w.row_mut(i).neg_mut();
        }
    }
    let model = IcaModel::from_parts(white.mean, white.whitening, w)?;
    let sources = &model.unmixing * &white.data;
    Ok(IcaFit {
        model,
        sources,
        converged,
    })
}

/// Excess kurtosis of a series.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (m2, m4) = xs.iter().fold((0.0, 0.0), |(m2, m4), x| {
        let d = (x - mean).powi(2);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

/// Flags components that are both heavy-tailed and frontally concentrated.
pub fn classify_components(
    model: &IcaModel,
    sources: &DMatrix<f64>,
    channels: &ChannelSet,
    config: &IcaConfig,
) -> Vec<bool> {
    let frontal: Vec<usize> = config
        .frontal_channels
        .iter()
        .filter_map(|l| channels.index_of(l))
        .collect();
    (0..model.components())
        .map(|i| {
            let series: Vec<f64> = sources.row(i).iter().copied().collect();
            let kurt = excess_kurtosis(&series);
            let col = model.mixing.column(i);
            let total: f64 = col.iter().map(|a| a * a).sum();
            let front: f64 = frontal.iter().map(|&c| col[c] * col[c]).sum();
            let share = if total > 0.0 { front / total } else { 0.0 };
            log::debug!("component {i}: kurtosis {kurt:.2}, frontal share {share:.2}");
            kurt > config.kurtosis_threshold && share >= config.frontal_fraction
        })
        .collect()
}

/// `A (u with masked rows zeroed) + mean`.
pub fn reconstruct(model: &IcaModel, data: &DMatrix<f64>, mask: &[bool]) -> Result<DMatrix<f64>> {
    if mask.len() != model.components() {
        return Err(Error::Validation(format!(
            "mask has {} entries for {} components",
            mask.len(),
            model.components()
        )));
    }
    let mut sources = model.sources(data)?;
    for (i, &drop) in mask.iter().enumerate() {
        if drop {
            sources.row_mut(i).fill(0.0);
        }
    }
    let mut out = &model.mixing * sources;
    for mut col in out.column_iter_mut() {
        col += &model.mean;
    }
    Ok(out)
}

/// A fitted model together with the components to drop.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactFilter {
    pub model: IcaModel,
    pub mask: Vec<bool>,
}

impl ArtifactFilter {
    /// Fits ICA on `record` and flags artifact components.
    pub fn fit<R: Rng + ?Sized>(record: &EegRecord, config: &IcaConfig, rng: &mut R) -> Result<Self> {
        let fitted = fit_lenient(record.samples(), config, rng)?;
        let mask = classify_components(&fitted.model, &fitted.sources, record.channels(), config);
        log::info!(
            "ICA: {} of {} components flagged as artifacts",
            mask.iter().filter(|&&m| m).count(),
            mask.len()
        );
        Ok(Self {
            model: fitted.model,
            mask,
        })
    }

    pub fn clean(&self, record: &EegRecord) -> Result<EegRecord> {
        if !self.mask.iter().any(|&m| m) {
            return Ok(record.clone());
        }
        let cleaned = reconstruct(&self.model, record.samples(), &self.mask)?;
        record.with_samples(cleaned)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mix = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.1, 2.0, 0.3, 0.0, 0.4, 0.7]);
        let data = &mix * gaussian(3, 4000, &mut rng);
        let w = whiten(&data, 3).unwrap();
        let cov = covariance(&w.data);
        assert!((cov - DMatrix::<f64>::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn whitening_isotropic_data_is_near_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = gaussian(4, 100_000, &mut rng);
        let w = whiten(&data, 4).unwrap();
        let sv = w.whitening.singular_values();
        assert!(sv.iter().all(|s| (s - 1.0).abs() < 0.05), "{sv}");
    }

    #[test]
    fn whitening_rank_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = gaussian(3, 500, &mut rng);
        assert!(matches!(whiten(&data, 4), Err(Error::Rank { .. })));
        // duplicate row: rank 2
        let mut dup = data.clone();
        let row0 = dup.row(0).into_owned();
        dup.row_mut(2).copy_from(&row0);
        assert!(matches!(whiten(&dup, 3), Err(Error::Rank { rank: 2, .. })));
    }

    #[test]
    fn separates_two_uniform_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5000;
        let s = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let x = &a * &s;
        let fitted = fit(&x, &IcaConfig::default(), &mut rng).unwrap();
        assert!(orthonormality_error(&fitted.model.unmixing) < 1e-6);
        for i in 0..2 {
            let truth: Vec<f64> = s.row(i).iter().copied().collect();
            let best = (0..2)
                .map(|j| {
                    let u: Vec<f64> = fitted.sources.row(j).iter().copied().collect();
                    correlation(&truth, &u).abs()
                })
                .fold(0.0, f64::max);
            assert!(best >= 0.95, "source {i}: {best}");
        }
        // recovered components are decorrelated
        let u0: Vec<f64> = fitted.sources.row(0).iter().copied().collect();
        let u1: Vec<f64> = fitted.sources.row(1).iter().copied().collect();
        assert!(correlation(&u0, &u1).abs() <= 0.1);
    }

    #[test]
    fn gaussian_input_is_unidentifiable() {
        // Either FastICA fails to settle or it returns some rotation; both are
        // acceptable, but the result must still be orthonormal.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(3, 2000, &mut rng);
        let white = whiten(&x, 3).unwrap();
        match fastica(&white.data, 3, 1e-4, 200, &mut rng) {
            Ok((w, _)) => assert!(orthonormality_error(&w) < 1e-6),
            Err(Error::NotConverged { last, .. }) => assert!(orthonormality_error(&last) < 1e-6),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn reconstruction_identity_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = DMatrix::from_fn(3, 3000, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.3, 0.4, 1.0, 0.1, 0.2, 0.5, 1.0]);
        let mut x = &a * s;
        for mut col in x.column_iter_mut() {
            col.add_scalar_mut(5.0);
        }
        let fitted = fit(&x, &IcaConfig::default(), &mut rng).unwrap();
        let back = reconstruct(&fitted.model, &x, &[false; 3]).unwrap();
        let rel = (&back - &x).norm() / x.norm();
        assert!(rel <= 1e-8, "relative error {rel}");

        let all = reconstruct(&fitted.model, &x, &[true; 3]).unwrap();
        for col in all.column_iter() {
            assert!((col - &fitted.model.mean).amax() < 1e-9);
        }

        assert!(reconstruct(&fitted.model, &x, &[false; 2]).is_err());
        assert!(reconstruct(&fitted.model, &x.rows(0, 2).into_owned(), &[false; 3]).is_err());
    }

    #[test]
    fn kurtosis_reference_values() {
        let uniform: Vec<f64> = (0..100_000).map(|i| (i as f64 + 0.5) / 100_000.0).collect();
        assert!((excess_kurtosis(&uniform) + 1.2).abs() < 1e-3);
        assert_eq!(excess_kurtosis(&[2.0; 10]), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn whitening_and_unmixing_are_orthonormal(
            seed in any::<u64>(),
            mixing in prop::collection::vec(-2.0f64..2.0, 9),
            max_iter in 1usize..50,
        ) {
            let a = DMatrix::from_row_slice(3, 3, &mixing);
            prop_assume!(a.determinant().abs() > 0.05);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = DMatrix::from_fn(3, 2000, |_, _| rng.random_range(-1.0..1.0));
            let white = whiten(&(&a * s), 3).unwrap();
            let cov = covariance(&white.data);
            prop_assert!((cov - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);

            // The last iterate is orthonormal whether or not FastICA converged.
            let w = match fastica(&white.data, 3, 1e-10, max_iter, &mut rng) {
                Ok((w, _)) => w,
                Err(Error::NotConverged { last, .. }) => *last,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert!(orthonormality_error(&w) < 1e-9);
        }
    }
}
