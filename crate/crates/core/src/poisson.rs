//! Poisson linear inverse problem with the emission-count complete data.
//!
//! Counts `y_j` are Poisson with mean `(Pθ)_j = Σᵢ P_ji θᵢ`. The complete data
//! are the per-pixel, per-detector counts `N_ji`, so given `y` each detector's
//! counts are split multinomially with weights `q_ji(θ) = P_ji θᵢ / (Pθ)_j`.
//! The proximal penalty is therefore a `y`-weighted sum of per-detector
//! multinomial KL divergences.
//!
//! The constant `Σ_j log y_j!` is omitted from the log-likelihood.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, ProblemModel};

/// Relative size of the default positivity floor with respect to `mean(θ⁰)`.
pub const DEFAULT_FLOOR_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PoissonDeblurModel {
    system: DMatrix<f64>,
    counts: DVector<f64>,
    floor: f64,
    /// `s_i = Σ_j P_ji`.
    sensitivity: DVector<f64>,
}

impl PoissonDeblurModel {
    pub fn new(system: DMatrix<f64>, counts: DVector<f64>, floor: f64) -> Result<Self> {
        let (m, p) = system.shape();
        if m == 0 || p == 0 {
            return Err(Error::InvalidModel("system matrix is empty".into()));
        }
        if counts.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: counts.len(),
            });
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "domain floor must be positive, got {floor}"
            )));
        }
        if system.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidModel(
                "system matrix entries must be finite and nonnegative".into(),
            ));
        }
        if counts.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidModel("counts must be finite and nonnegative".into()));
        }
        for (i, col) in system.column_iter().enumerate() {
            if !col.iter().any(|&v| v > 0.0) {
                return Err(Error::UnobservablePixel { pixel: i });
            }
        }
        for (j, row) in system.row_iter().enumerate() {
            if counts[j] > 0.0 && row.sum() <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "detector {j} has counts but sees no pixel"
                )));
            }
        }
        let sensitivity = DVector::from_iterator(p, system.column_iter().map(|c| c.sum()));
        Ok(Self {
            system,
            counts,
            floor,
            sensitivity,
        })
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "domain floor must be positive, got {floor}"
            )));
        }
        self.floor = floor;
        Ok(self)
    }

    /// Floor `1e-10 · mean(θ⁰)`.
    pub fn default_floor(theta0: &ParameterVector) -> f64 {
        DEFAULT_FLOOR_FRACTION * theta0.mean()
    }

    pub fn system(&self) -> &DMatrix<f64> {
        &self.system
    }

    pub fn counts(&self) -> &DVector<f64> {
        &self.counts
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn detectors(&self) -> usize {
        self.system.nrows()
    }

    pub fn sensitivity(&self) -> &DVector<f64> {
        &self.sensitivity
    }

    /// `Σ_j y_j / Σ_{j,i} P_ji`: the flat intensity that matches total counts.
    pub fn mean_count_level(&self) -> f64 {
        self.counts.sum() / self.sensitivity.sum()
    }

    /// SHA-256 of the dimensions, system matrix and counts.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.system.nrows() as u64).to_le_bytes());
        hasher.update((self.system.ncols() as u64).to_le_bytes());
        for v in self.system.iter() {
            hasher.update(v.to_le_bytes());
        }
        for v in self.counts.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn check_point(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.system.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.system.ncols(),
                got: theta.len(),
            });
        }
        if let Some((i, &v)) = theta.iter().enumerate().find(|(_, v)| **v < self.floor) {
            return Err(Error::OutsideDomain {
                coordinate: i,
                value: v,
                floor: self.floor,
            });
        }
        Ok(())
    }

    /// `Pθ`, checked positive wherever the detector has counts.
    pub fn projection(&self, theta: &ParameterVector) -> Result<DVector<f64>> {
        self.check_point(theta)?;
        let proj = &self.system * theta.as_vector();
        for (j, (&pt, &y)) in proj.iter().zip(self.counts.iter()).enumerate() {
            if y > 0.0 && pt <= 0.0 {
                return Err(Error::VanishingProjection { detector: j });
            }
        }
        Ok(proj)
    }

    /// `y_j / (Pθ)_j`, zero where `y_j = 0`.
    fn count_ratio(&self, proj: &DVector<f64>) -> DVector<f64> {
        proj.zip_map(&self.counts, |pt, y| if y > 0.0 { y / pt } else { 0.0 })
    }

    /// Expected complete-data counts per pixel, `aᵢ(θ̄) = θ̄ᵢ Σ_j y_j P_ji / (Pθ̄)_j`.
    pub fn expected_pixel_counts(&self, theta_bar: &ParameterVector) -> Result<DVector<f64>> {
        let ratio = self.count_ratio(&self.projection(theta_bar)?);
        let back = self.system.tr_mul(&ratio);
        Ok(back.component_mul(theta_bar.as_vector()))
    }

    /// `Pᵀ diag(y/(Pθ)²) P`.
    fn count_weighted_gram(&self, proj: &DVector<f64>) -> DMatrix<f64> {
        let weights = proj.zip_map(&self.counts, |pt, y| if y > 0.0 { y / (pt * pt) } else { 0.0 });
        let mut scaled = self.system.clone();
        for (mut row, w) in scaled.row_iter_mut().zip(weights.iter()) {
            row *= w.sqrt();
        }
        scaled.tr_mul(&scaled)
    }
}

impl ProblemModel for PoissonDeblurModel {
    fn dim(&self) -> usize {
        self.system.ncols()
    }

    fn log_likelihood(&self, theta: &ParameterVector) -> Result<f64> {
        let proj = self.projection(theta)?;
        Ok(proj
            .iter()
            .zip(self.counts.iter())
            .map(|(&pt, &y)| if y > 0.0 { y * pt.ln() - pt } else { -pt })
            .sum())
    }

    fn grad_log_likelihood(&self, theta: &ParameterVector) -> Result<DVector<f64>> {
        let proj = self.projection(theta)?;
        Ok(self.system.tr_mul(&self.count_ratio(&proj)) - &self.sensitivity)
    }

    fn hess_log_likelihood(&self, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        let proj = self.projection(theta)?;
        Ok(-self.count_weighted_gram(&proj))
    }

    fn kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<f64> {
        let proj_bar = self.projection(theta_bar)?;
        let proj = self.projection(theta)?;
        // Σ q̄ log(q̄/q) = Σ q̄ (u − 1 − log u) with u = q/q̄, since Σq = Σq̄ = 1.
        // Every summand is nonnegative.
        let mut total = 0.0;
        for (j, row) in self.system.row_iter().enumerate() {
            let y = self.counts[j];
            if y <= 0.0 {
                continue;
            }
            let detector_ratio = proj[j] / proj_bar[j];
            let mut detector_kl = 0.0;
            for (i, &pji) in row.iter().enumerate() {
                if pji <= 0.0 {
                    continue;
                }
                let q_bar = pji * theta_bar[i] / proj_bar[j];
                let u = (theta[i] / theta_bar[i]) / detector_ratio;
                detector_kl += q_bar * (u - 1.0 - u.ln());
            }
            total += y * detector_kl;
        }
        Ok(total)
    }

    fn grad_kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<DVector<f64>> {
        let a = self.expected_pixel_counts(theta_bar)?;
        let proj = self.projection(theta)?;
        let back = self.system.tr_mul(&self.count_ratio(&proj));
        Ok(back - a.component_div(theta.as_vector()))
    }

    fn hess_kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        let a = self.expected_pixel_counts(theta_bar)?;
        let proj = self.projection(theta)?;
        let mut hess = -self.count_weighted_gram(&proj);
        for i in 0..theta.len() {
            hess[(i, i)] += a[i] / (theta[i] * theta[i]);
        }
        Ok(hess)
    }

    /// Multiplicative update `θ⁺ᵢ = aᵢ(θ̄) / sᵢ`, clamped to the floor.
    fn closed_form_em_update(&self, theta_bar: &ParameterVector) -> Result<Option<ParameterVector>> {
        let a = self.expected_pixel_counts(theta_bar)?;
        let next = a.component_div(&self.sensitivity);
        Ok(Some(ParameterVector::new(next)?.clamped(self.floor)))
    }

    fn domain_floor(&self) -> Option<f64> {
        Some(self.floor)
    }

    fn q_function(&self, theta: &ParameterVector, theta_bar: &ParameterVector) -> Result<f64> {
        self.check_point(theta)?;
        let proj_bar = self.projection(theta_bar)?;
        let mut total = 0.0;
        for (j, row) in self.system.row_iter().enumerate() {
            let y = self.counts[j];
            for (i, &pji) in row.iter().enumerate() {
                if pji <= 0.0 {
                    continue;
                }
                let weight = if y > 0.0 {
                    y * pji * theta_bar[i] / proj_bar[j]
                } else {
                    0.0
                };
                let log_term = if weight > 0.0 {
                    weight * (pji * theta[i]).ln()
                } else {
                    0.0
                };
                total += log_term - pji * theta[i];
            }
        }
        Ok(total)
    }
}

/// Row-normalized Gaussian blur, `P_ji ∝ exp(−(j−i)²/(2σ²))`, square `p × p`.
pub fn gaussian_blur_matrix(pixels: usize, sigma: f64) -> Result<DMatrix<f64>> {
    if pixels == 0 {
        return Err(Error::InvalidModel("blur needs at least one pixel".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidModel(format!("blur width must be positive, got {sigma}")));
    }
    let mut p = DMatrix::from_fn(pixels, pixels, |j, i| {
        let d = j as f64 - i as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    });
    for mut row in p.row_iter_mut() {
        let total = row.sum();
        row /= total;
    }
    Ok(p)
}

/// Two rails of height `rail_height` over a flat `background`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub pixels: usize,
    pub rails: [Vec<usize>; 2],
    pub rail_height: f64,
    pub background: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            pixels: 64,
            rails: [vec![24], vec![40]],
            rail_height: 1.0,
            background: 0.1,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pixels == 0 {
            return Err(Error::InvalidPhantom("phantom needs at least one pixel".into()));
        }
        if !(self.background >= 0.0 && self.rail_height > self.background && self.rail_height.is_finite()) {
            return Err(Error::InvalidPhantom(format!(
                "need rail_height > background >= 0, got {} and {}",
                self.rail_height, self.background
            )));
        }
        for rail in &self.rails {
            if rail.is_empty() {
                return Err(Error::InvalidPhantom("rail has no pixels".into()));
            }
            if let Some(&i) = rail.iter().find(|&&i| i >= self.pixels) {
                return Err(Error::InvalidPhantom(format!(
                    "rail pixel {i} outside [0, {})",
                    self.pixels
                )));
            }
        }
        if let Some(i) = self.rails[0].iter().find(|i| self.rails[1].contains(i)) {
            return Err(Error::InvalidPhantom(format!("rails overlap at pixel {i}")));
        }
        Ok(())
    }
}

/// Builds the phantom; a background below `floor` is raised to it.
pub fn two_rail_phantom(spec: &PhantomSpec, floor: Option<f64>) -> Result<ParameterVector> {
    spec.validate()?;
    let background = floor.map_or(spec.background, |f| spec.background.max(f));
    let mut values = DVector::from_element(spec.pixels, background);
    for &i in spec.rails.iter().flatten() {
        values[i] = spec.rail_height;
    }
    ParameterVector::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseMode {
    Noiseless,
    Poisson { seed: u64 },
}

/// Data for `θ_true`: the exact projection, or Poisson draws around it.
pub fn synthesize_data(system: &DMatrix<f64>, theta_true: &ParameterVector, noise: NoiseMode) -> Result<DVector<f64>> {
    if system.ncols() != theta_true.len() {
        return Err(Error::DimensionMismatch {
            expected: system.ncols(),
            got: theta_true.len(),
        });
    }
    let mean = system * theta_true.as_vector();
    match noise {
        NoiseMode::Noiseless => Ok(mean),
        NoiseMode::Poisson { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = DVector::zeros(mean.len());
            for (o, &rate) in out.iter_mut().zip(mean.iter()) {
                *o = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::InvalidModel(format!("bad Poisson rate {rate}: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
            }
            Ok(out)
        }
    }
}
