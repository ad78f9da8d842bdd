//! Mixing densities `phi` with closed-form spectral densities `sigma = F[phi]`,
//! and the band-limited sinc fidelity kernel `lambda_tau`.
//!
//! Fourier convention: `F[f](w) = int e^{-i<x,w>} f(x) dx`, so `sigma(0) = 1`
//! for every probability density.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingFamily {
    /// Standard normal, `sigma(w) = exp(-|w|^2 / 2)`.
    Gaussian,
    /// Product of standard Laplace laws, `sigma(w) = prod 1 / (1 + w_j^2)`.
    TensorLaplace,
    /// Multivariate Cauchy with dispersion `alpha`, `sigma(w) = exp(-sqrt(alpha) |w|_2)`.
    MultivariateCauchy { alpha: f64 },
    /// Product of Cauchy laws with scale `alpha`, `sigma(w) = exp(-alpha |w|_1)`.
    TensorCauchy { alpha: f64 },
    /// Symmetric multivariate Laplace with identity covariance, `sigma(w) = 2 / (2 + |w|^2)`.
    MultivariateLaplace,
    /// General super-smooth law `sigma(w) = exp(-alpha |w|_j^beta)`, `0 < beta <= 2`.
    SuperSmooth { alpha: f64, beta: f64, j: u32 },
}

/// The known mixing density together with its dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingKernelSpec {
    family: MixingFamily,
    dim: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KernelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<u32>,
}

/// JSON form `{"family": "...", "dim": d, "params": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: String,
    pub dim: usize,
    #[serde(default)]
    pub params: KernelParams,
}

impl MixingKernelSpec {
    pub fn new(family: MixingFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be positive".into()));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match family {
            MixingFamily::MultivariateCauchy { alpha } | MixingFamily::TensorCauchy { alpha } => {
                positive("alpha", alpha)?
            }
            MixingFamily::SuperSmooth { alpha, beta, j } => {
                positive("alpha", alpha)?;
                if !(beta > 0.0 && beta <= 2.0) {
                    return Err(Error::InvalidParameter(format!(
                        "super-smooth exponent beta must lie in (0, 2], got {beta}"
                    )));
                }
                if j == 0 {
                    return Err(Error::InvalidParameter("norm index j must be >= 1".into()));
                }
            }
            _ => {}
        }
        Ok(Self { family, dim })
    }

    pub fn gaussian(dim: usize) -> Self {
        Self {
            family: MixingFamily::Gaussian,
            dim,
        }
    }

    /// `sigma(w) = exp(-alpha |w|_j^beta)`; returns the named preset when the
    /// parameters coincide with one (gaussian, tensor Cauchy, multivariate Cauchy).
    pub fn supersmooth(dim: usize, alpha: f64, beta: f64, j: u32) -> Result<Self> {
        let family = if beta == 2.0 && j == 2 && alpha == 0.5 {
            MixingFamily::Gaussian
        } else if beta == 1.0 && j == 1 {
            MixingFamily::TensorCauchy { alpha }
        } else if beta == 1.0 && j == 2 {
            MixingFamily::MultivariateCauchy {
                alpha: alpha * alpha,
            }
        } else {
            MixingFamily::SuperSmooth { alpha, beta, j }
        };
        Self::new(family, dim)
    }

    pub fn from_config(cfg: &KernelConfig) -> Result<Self> {
        let alpha = |default: Option<f64>| {
            cfg.params.alpha.or(default).ok_or_else(|| {
                Error::Config(format!("family {:?} requires params.alpha", cfg.family))
            })
        };
        let family = match cfg.family.as_str() {
            "gaussian" => MixingFamily::Gaussian,
            "tensor-laplace" => MixingFamily::TensorLaplace,
            "multivariate-laplace" => MixingFamily::MultivariateLaplace,
            "multivariate-cauchy" => MixingFamily::MultivariateCauchy {
                alpha: alpha(Some(1.0))?,
            },
            "tensor-cauchy" => MixingFamily::TensorCauchy {
                alpha: alpha(Some(1.0))?,
            },
            "supersmooth" => {
                let beta = cfg
                    .params
                    .beta
                    .ok_or_else(|| Error::Config("supersmooth requires params.beta".into()))?;
                let j = cfg
                    .params
                    .j
                    .ok_or_else(|| Error::Config("supersmooth requires params.j".into()))?;
                return Self::supersmooth(cfg.dim, alpha(None)?, beta, j);
            }
            other => return Err(Error::Config(format!("unknown kernel family {other:?}"))),
        };
        Self::new(family, cfg.dim)
    }

    pub fn to_config(&self) -> KernelConfig {
        let (name, params) = match self.family {
            MixingFamily::Gaussian => ("gaussian", KernelParams::default()),
            MixingFamily::TensorLaplace => ("tensor-laplace", KernelParams::default()),
            MixingFamily::MultivariateLaplace => ("multivariate-laplace", KernelParams::default()),
            MixingFamily::MultivariateCauchy { alpha } => (
                "multivariate-cauchy",
                KernelParams {
                    alpha: Some(alpha),
                    ..Default::default()
                },
            ),
            MixingFamily::TensorCauchy { alpha } => (
                "tensor-cauchy",
                KernelParams {
                    alpha: Some(alpha),
                    ..Default::default()
                },
            ),
            MixingFamily::SuperSmooth { alpha, beta, j } => (
                "supersmooth",
                KernelParams {
                    alpha: Some(alpha),
                    beta: Some(beta),
                    j: Some(j),
                },
            ),
        };
        KernelConfig {
            family: name.into(),
            dim: self.dim,
            params,
        }
    }

    pub fn family(&self) -> MixingFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether `sigma(w) = prod_j s(w_j)` for a one-dimensional factor `s`.
    pub fn is_separable(&self) -> bool {
        match self.family {
            MixingFamily::Gaussian | MixingFamily::TensorLaplace | MixingFamily::TensorCauchy { .. } => true,
            MixingFamily::MultivariateCauchy { .. } | MixingFamily::MultivariateLaplace => self.dim == 1,
            MixingFamily::SuperSmooth { beta, j, .. } => self.dim == 1 || beta == j as f64,
        }
    }

    /// One-dimensional spectral factor for separable families.
    pub fn spectral_factor(&self, w: f64) -> Option<f64> {
        if !self.is_separable() {
            return None;
        }
        let a = w.abs();
        Some(match self.family {
            MixingFamily::Gaussian => (-0.5 * w * w).exp(),
            MixingFamily::TensorLaplace => 1.0 / (1.0 + w * w),
            MixingFamily::TensorCauchy { alpha } => (-alpha * a).exp(),
            MixingFamily::MultivariateCauchy { alpha } => (-alpha.sqrt() * a).exp(),
            MixingFamily::MultivariateLaplace => 2.0 / (2.0 + w * w),
            MixingFamily::SuperSmooth { alpha, beta, .. } => (-alpha * a.powf(beta)).exp(),
        })
    }

    /// Spectral density `sigma(w)`.
    pub fn spectral_density(&self, omega: &[f64]) -> Result<f64> {
        check_dim(self.dim, omega.len())?;
        Ok(self.spectral_unchecked(omega))
    }

    pub(crate) fn spectral_unchecked(&self, omega: &[f64]) -> f64 {
        let sq: f64 = omega.iter().map(|w| w * w).sum();
        match self.family {
            MixingFamily::Gaussian => (-0.5 * sq).exp(),
            MixingFamily::TensorLaplace => omega.iter().map(|w| 1.0 / (1.0 + w * w)).product(),
            MixingFamily::TensorCauchy { alpha } => {
                (-alpha * omega.iter().map(|w| w.abs()).sum::<f64>()).exp()
            }
            MixingFamily::MultivariateCauchy { alpha } => (-alpha.sqrt() * sq.sqrt()).exp(),
            MixingFamily::MultivariateLaplace => 2.0 / (2.0 + sq),
            MixingFamily::SuperSmooth { alpha, beta, j } => {
                let norm = omega
                    .iter()
                    .map(|w| w.abs().powi(j as i32))
                    .sum::<f64>()
                    .powf(1.0 / j as f64);
                (-alpha * norm.powf(beta)).exp()
            }
        }
    }

    /// `inf { sigma(t) : |t|_inf <= half_width }`, attained at a box corner since
    /// every family is nonincreasing in each `|t_j|`.
    pub fn spectral_inf_on_box(&self, half_width: f64) -> f64 {
        self.spectral_unchecked(&vec![half_width.abs(); self.dim])
    }

    /// Density `phi(x)`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let d = self.dim as f64;
        let sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(match self.family {
            MixingFamily::Gaussian => (2.0 * PI).powf(-d / 2.0) * (-0.5 * sq).exp(),
            MixingFamily::TensorLaplace => {
                0.5f64.powi(self.dim as i32) * (-x.iter().map(|v| v.abs()).sum::<f64>()).exp()
            }
            MixingFamily::TensorCauchy { alpha } => x
                .iter()
                .map(|v| alpha / (PI * (v * v + alpha * alpha)))
                .product(),
            MixingFamily::MultivariateCauchy { alpha } => {
                let s = alpha.sqrt();
                cauchy_constant(self.dim) * s / (s * s + sq).powf((d + 1.0) / 2.0)
            }
            MixingFamily::MultivariateLaplace => {
                let r = sq.sqrt();
                if r == 0.0 {
                    if self.dim == 1 {
                        1.0 / SQRT_2
                    } else {
                        f64::INFINITY
                    }
                } else {
                    let nu = 1.0 - d / 2.0;
                    let z = SQRT_2 * r;
                    2.0 * (2.0 * PI).powf(-d / 2.0) * 2f64.powf(-nu) * z.powf(nu) * bessel_k(nu, z)
                }
            }
            MixingFamily::SuperSmooth { alpha, beta, .. } => {
                if !self.is_separable() {
                    return Err(Error::Unsupported(
                        "density of a non-separable super-smooth law".into(),
                    ));
                }
                x.iter()
                    .map(|&v| stable_density_1d(alpha, beta, v).0)
                    .product()
            }
        })
    }

    /// Gradient of the density.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let d = self.dim as f64;
        let sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(match self.family {
            MixingFamily::Gaussian => {
                let phi = self.density(x)?;
                x.iter().map(|v| -v * phi).collect()
            }
            MixingFamily::TensorLaplace => {
                if x.iter().any(|&v| v == 0.0) {
                    return Err(Error::UndefinedGradient(x.to_vec()));
                }
                let phi = self.density(x)?;
                x.iter().map(|v| -v.signum() * phi).collect()
            }
            MixingFamily::TensorCauchy { alpha } => {
                let phi = self.density(x)?;
                x.iter()
                    .map(|v| -2.0 * v / (v * v + alpha * alpha) * phi)
                    .collect()
            }
            MixingFamily::MultivariateCauchy { alpha } => {
                let s = alpha.sqrt();
                let c = -(d + 1.0) * cauchy_constant(self.dim) * s / (s * s + sq).powf((d + 3.0) / 2.0);
                x.iter().map(|v| c * v).collect()
            }
            MixingFamily::MultivariateLaplace => {
                let r = sq.sqrt();
                if r == 0.0 {
                    return Err(Error::UndefinedGradient(x.to_vec()));
                }
                // d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z), z = sqrt(2) r
                let nu = 1.0 - d / 2.0;
                let z = SQRT_2 * r;
                let dphi_dr = -SQRT_2
                    * 2.0
                    * (2.0 * PI).powf(-d / 2.0)
                    * 2f64.powf(-nu)
                    * z.powf(nu)
                    * bessel_k(nu - 1.0, z);
                x.iter().map(|v| dphi_dr * v / r).collect()
            }
            MixingFamily::SuperSmooth { alpha, beta, .. } => {
                if !self.is_separable() {
                    return Err(Error::Unsupported(
                        "gradient of a non-separable super-smooth law".into(),
                    ));
                }
                let parts: Vec<(f64, f64)> =
                    x.iter().map(|&v| stable_density_1d(alpha, beta, v)).collect();
                (0..self.dim)
                    .map(|j| {
                        parts
                            .iter()
                            .enumerate()
                            .map(|(l, &(f, df))| if l == j { df } else { f })
                            .product()
                    })
                    .collect()
            }
        })
    }

    /// Characteristic length of the noise, used to inflate search boxes.
    pub fn noise_scale(&self) -> f64 {
        match self.family {
            MixingFamily::Gaussian | MixingFamily::MultivariateLaplace => 1.0,
            MixingFamily::TensorLaplace => SQRT_2,
            MixingFamily::TensorCauchy { alpha } => alpha,
            MixingFamily::MultivariateCauchy { alpha } => alpha.sqrt(),
            MixingFamily::SuperSmooth { alpha, beta, .. } => SQRT_2 * alpha.powf(1.0 / beta),
        }
    }

    /// Draws one noise vector with density `phi`.
    ///
    /// Gaussian coordinates use Box-Muller; Laplace and Cauchy coordinates use
    /// the inverse CDF; super-smooth laws use the Chambers-Mallows-Stuck transform.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.dim;
        Ok(match self.family {
            MixingFamily::Gaussian => gaussian_vector(rng, d),
            MixingFamily::TensorLaplace => (0..d)
                .map(|_| {
                    let u = uniform_open(rng) - 0.5;
                    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect(),
            MixingFamily::TensorCauchy { alpha } => (0..d)
                .map(|_| alpha * (PI * (uniform_open(rng) - 0.5)).tan())
                .collect(),
            MixingFamily::MultivariateCauchy { alpha } => {
                let z = gaussian_vector(rng, d);
                let g = gaussian_vector(rng, 1)[0].abs();
                let s = alpha.sqrt();
                z.into_iter().map(|v| s * v / g).collect()
            }
            MixingFamily::MultivariateLaplace => {
                let w = -(1.0 - uniform_open(rng)).ln();
                gaussian_vector(rng, d)
                    .into_iter()
                    .map(|v| w.sqrt() * v)
                    .collect()
            }
            MixingFamily::SuperSmooth { alpha, beta, j } => {
                let scale = alpha.powf(1.0 / beta);
                if self.dim == 1 || beta == j as f64 {
                    (0..d)
                        .map(|_| scale * symmetric_stable(rng, beta))
                        .collect()
                } else if j == 2 {
                    let a = positive_stable(rng, beta / 2.0);
                    gaussian_vector(rng, d)
                        .into_iter()
                        .map(|v| scale * (2.0 * a).sqrt() * v)
                        .collect()
                } else {
                    return Err(Error::Unsupported(format!(
                        "sampling super-smooth law with j = {j}, beta = {beta}"
                    )));
                }
            }
        })
    }
}

/// Uniform draw in the open interval (0, 1).
fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d + 1);
    while out.len() < d {
        let u1 = uniform_open(rng);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        out.push(r * (2.0 * PI * u2).cos());
        out.push(r * (2.0 * PI * u2).sin());
    }
    out.truncate(d);
    out
}

/// Standard symmetric stable variate with characteristic function `exp(-|t|^a)`.
fn symmetric_stable<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let v = PI * (uniform_open(rng) - 0.5);
    let w = -uniform_open(rng).ln();
    if (a - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    (a * v).sin() / v.cos().powf(1.0 / a) * (((1.0 - a) * v).cos() / w).powf((1.0 - a) / a)
}

/// Positive stable variate with Laplace transform `exp(-s^a)`, `0 < a <= 1`.
fn positive_stable<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    let u = PI * uniform_open(rng);
    let w = -uniform_open(rng).ln();
    (a * u).sin() / u.sin().powf(1.0 / a) * (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a)
}

/// `Gamma((d+1)/2) / pi^((d+1)/2)`.
fn cauchy_constant(d: usize) -> f64 {
    half_integer_gamma(d + 1) / PI.powf((d as f64 + 1.0) / 2.0)
}

/// `Gamma(k / 2)` for a positive integer `k`.
fn half_integer_gamma(k: usize) -> f64 {
    let mut value = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if k % 2 == 0 { 1.0 } else { 0.5 };
    while 2.0 * x < k as f64 {
        value *= x;
        x += 1.0;
    }
    value
}

/// Modified Bessel function of the second kind via
/// `K_nu(z) = int_0^inf exp(-z cosh s) cosh(nu s) ds` (trapezoid, doubly-exponential decay).
pub(crate) fn bessel_k(nu: f64, z: f64) -> f64 {
    assert!(z > 0.0);
    let s_max = (750.0 / z).max(2.0).acosh() + 1.0;
    let h = 0.02;
    let steps = (s_max / h).ceil() as usize;
    let mut sum = 0.5 * (-z).exp();
    for i in 1..=steps {
        let s = i as f64 * h;
        sum += (-z * s.cosh()).exp() * (nu * s).cosh();
    }
    sum * h
}

/// Value and derivative of the 1-D density with characteristic function
/// `exp(-alpha |w|^beta)`, by numerical Fourier inversion.
fn stable_density_1d(alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let omega_max = (40.0 / alpha).powf(1.0 / beta);
    let panels = ((omega_max * x.abs() / 8.0).ceil() as usize).max(1) + 8;
    let rule = crate::quadrature::GaussLegendre::new(32);
    let (mut f, mut df) = (0.0, 0.0);
    rule.composite(0.0, omega_max, panels, |w, weight| {
        let s = (-alpha * w.powf(beta)).exp();
        f += weight * s * (x * w).cos();
        df -= weight * s * w * (x * w).sin();
    });
    (f / PI, df / PI)
}

/// The sinc fidelity kernel with frequency cutoff `1 / tau`.
///
/// Its spectral measure has density `2^-d` on the box `[-1/tau, 1/tau]^d`, so
/// `lambda_tau(x) = int e^{i<x,w>} dLambda(w) = prod_j sin(x_j / tau) / x_j`
/// and `lambda_tau(0) = tau^-d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelitySpec {
    pub tau: f64,
    pub dim: usize,
    #[serde(default = "default_quad_points")]
    pub quad_points_per_dim: usize,
}

fn default_quad_points() -> usize {
    64
}

impl FidelitySpec {
    pub fn new(tau: f64, dim: usize) -> Result<Self> {
        Self::with_quadrature(tau, dim, default_quad_points())
    }

    pub fn with_quadrature(tau: f64, dim: usize, quad_points_per_dim: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("fidelity dimension must be positive".into()));
        }
        if quad_points_per_dim < 8 {
            return Err(Error::InvalidParameter(format!(
                "need at least 8 quadrature points per dimension, got {quad_points_per_dim}"
            )));
        }
        Ok(Self {
            tau,
            dim,
            quad_points_per_dim,
        })
    }

    /// Cutoff tied to the certificate bandwidth, `1 / tau = 4 m`.
    pub fn from_bandwidth(m: f64, dim: usize) -> Result<Self> {
        Self::new(1.0 / (4.0 * m), dim)
    }

    pub fn cutoff(&self) -> f64 {
        1.0 / self.tau
    }

    /// Density of the spectral measure on its box.
    pub fn spectral_level(&self) -> f64 {
        0.5f64.powi(self.dim as i32)
    }

    /// `lambda_tau(x)`.
    pub fn kernel(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.kernel_unchecked(x))
    }

    pub(crate) fn kernel_unchecked(&self, x: &[f64]) -> f64 {
        let w = self.cutoff();
        x.iter()
            .map(|&v| {
                let arg = w * v;
                if arg.abs() < 1e-8 {
                    w * (1.0 - arg * arg / 6.0)
                } else {
                    arg.sin() / v
                }
            })
            .product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::seeded_rng;

    fn all_families(dim: usize) -> Vec<MixingKernelSpec> {
        [
            MixingFamily::Gaussian,
            MixingFamily::TensorLaplace,
            MixingFamily::MultivariateCauchy { alpha: 2.0 },
            MixingFamily::TensorCauchy { alpha: 0.7 },
            MixingFamily::MultivariateLaplace,
            MixingFamily::SuperSmooth {
                alpha: 0.8,
                beta: 1.5,
                j: 1,
            },
        ]
        .into_iter()
        .map(|f| MixingKernelSpec::new(f, dim).unwrap())
        .collect()
    }

    #[test]
    fn density_examples() {
        let g1 = MixingKernelSpec::gaussian(1);
        assert!((g1.density(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let tl = MixingKernelSpec::new(MixingFamily::TensorLaplace, 2).unwrap();
        assert_eq!(tl.density(&[0.0, 0.0]).unwrap(), 0.25);
        let g2 = MixingKernelSpec::gaussian(2);
        let expect = (2.0 * PI).recip() * (-12.5f64).exp();
        assert!((g2.density(&[3.0, 4.0]).unwrap() - expect).abs() < 1e-20);
        assert!(matches!(
            g2.density(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn spectral_examples() {
        let g1 = MixingKernelSpec::gaussian(1);
        assert_eq!(g1.spectral_density(&[0.0]).unwrap(), 1.0);
        assert!((g1.spectral_density(&[1.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-16);
        let ml = MixingKernelSpec::new(MixingFamily::MultivariateLaplace, 2).unwrap();
        assert_eq!(ml.spectral_density(&[1.0, 1.0]).unwrap(), 0.5);
        for spec in all_families(2) {
            assert!((spec.spectral_density(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_examples() {
        let g3 = MixingKernelSpec::gaussian(3);
        assert_eq!(g3.gradient(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        let g1 = MixingKernelSpec::gaussian(1);
        let expect = -(-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((g1.gradient(&[1.0]).unwrap()[0] - expect).abs() < 1e-16);
        let tc = MixingKernelSpec::new(MixingFamily::TensorCauchy { alpha: 1.0 }, 1).unwrap();
        assert!((tc.gradient(&[1.0]).unwrap()[0] + 1.0 / (2.0 * PI)).abs() < 1e-15);
        let tl = MixingKernelSpec::new(MixingFamily::TensorLaplace, 2).unwrap();
        assert!(matches!(
            tl.gradient(&[0.0, 1.0]),
            Err(Error::UndefinedGradient(_))
        ));
    }

    #[test]
    fn supersmooth_presets() {
        assert_eq!(
            MixingKernelSpec::supersmooth(2, 0.5, 2.0, 2).unwrap().family(),
            MixingFamily::Gaussian
        );
        assert_eq!(
            MixingKernelSpec::supersmooth(1, 3.0, 1.0, 2).unwrap().family(),
            MixingFamily::MultivariateCauchy { alpha: 9.0 }
        );
        assert!(MixingKernelSpec::supersmooth(1, 1.0, 2.5, 2).is_err());
    }

    #[test]
    fn density_and_spectrum_are_symmetric() {
        let mut rng = seeded_rng(3);
        for spec in all_families(2) {
            for _ in 0..20 {
                let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let nx: Vec<f64> = x.iter().map(|v| -v).collect();
                if let (Ok(a), Ok(b)) = (spec.density(&x), spec.density(&nx)) {
                    assert!(a >= 0.0 && (a - b).abs() <= 1e-14 * a.max(1e-300), "{spec:?}");
                }
                let (a, b) = (
                    spec.spectral_density(&x).unwrap(),
                    spec.spectral_density(&nx).unwrap(),
                );
                assert!((a - b).abs() <= 1e-15 && a > 0.0 && a <= 1.0);
            }
        }
    }

    /// `int phi(x) cos(w x) dx` over a wide truncation reproduces `sigma(w)` in d = 1.
    #[test]
    fn density_integrates_to_spectrum_in_1d() {
        let rule = crate::quadrature::GaussLegendre::new(32);
        for spec in all_families(1) {
            // truncation half-width, panel count and the tail mass left outside
            let (half, panels, tol) = match spec.family() {
                MixingFamily::MultivariateCauchy { .. } | MixingFamily::TensorCauchy { .. } => {
                    (4000.0, 40_000, 5e-4)
                }
                MixingFamily::SuperSmooth { .. } => (200.0, 2000, 2e-4),
                _ => (60.0, 400, 1e-8),
            };
            // split at the origin to keep the Laplace cusp on a panel boundary
            let (xs, wts) = rule.composite_points(0.0, half, panels);
            let dens: Vec<f64> = xs.iter().map(|&x| spec.density(&[x]).unwrap()).collect();
            for &w in &[0.0, 0.5, 1.0, 2.0] {
                let acc: f64 = (0..xs.len()).map(|i| 2.0 * wts[i] * dens[i] * (w * xs[i]).cos()).sum();
                let sigma = spec.spectral_density(&[w]).unwrap();
                assert!((acc - sigma).abs() < tol, "{spec:?} w={w}: {acc} vs {sigma}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(11);
        let h = 1e-5;
        for dim in [1, 2, 3] {
            for spec in all_families(dim) {
                for _ in 0..100 {
                    let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    if x.iter().any(|v| v.abs() < 0.05) {
                        continue;
                    }
                    if matches!(spec.family(), MixingFamily::SuperSmooth { .. }) && dim > 1 {
                        continue;
                    }
                    let g = spec.gradient(&x).unwrap();
                    for j in 0..dim {
                        let (mut xp, mut xm) = (x.clone(), x.clone());
                        xp[j] += h;
                        xm[j] -= h;
                        let fd = (spec.density(&xp).unwrap() - spec.density(&xm).unwrap()) / (2.0 * h);
                        assert!((fd - g[j]).abs() < 1e-6, "{spec:?} at {x:?}: {fd} vs {}", g[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn noise_has_the_right_second_moment() {
        let n = 40_000;
        let cases = [
            (MixingKernelSpec::gaussian(2), 1.0),
            (MixingKernelSpec::new(MixingFamily::TensorLaplace, 1).unwrap(), 2.0),
            (MixingKernelSpec::new(MixingFamily::MultivariateLaplace, 3).unwrap(), 1.0),
            (MixingKernelSpec::supersmooth(1, 0.5, 2.0, 1).unwrap(), 1.0),
        ];
        for (spec, var) in cases {
            let mut rng = seeded_rng(5);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += spec.sample_noise(&mut rng).unwrap()[0].powi(2);
            }
            let est = acc / n as f64;
            assert!((est - var).abs() < 0.08 * var, "{spec:?}: {est}");
        }
    }

    /// Empirical characteristic function of heavy-tailed draws matches sigma.
    #[test]
    fn noise_characteristic_function() {
        let n = 40_000;
        let specs = [
            MixingKernelSpec::new(MixingFamily::TensorCauchy { alpha: 0.7 }, 1).unwrap(),
            MixingKernelSpec::new(MixingFamily::MultivariateCauchy { alpha: 2.0 }, 2).unwrap(),
            MixingKernelSpec::supersmooth(1, 0.8, 1.5, 1).unwrap(),
            MixingKernelSpec::supersmooth(2, 0.8, 1.5, 2).unwrap(),
        ];
        for spec in specs {
            let mut rng = seeded_rng(9);
            let t: Vec<f64> = (0..spec.dim()).map(|j| 0.6 + 0.3 * j as f64).collect();
            let mut acc = 0.0;
            for _ in 0..n {
                let e = spec.sample_noise(&mut rng).unwrap();
                acc += e.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>().cos();
            }
            let ecf = acc / n as f64;
            let sigma = spec.spectral_density(&t).unwrap();
            assert!((ecf - sigma).abs() < 0.02, "{spec:?}: {ecf} vs {sigma}");
        }
    }

    #[test]
    fn fidelity_kernel_examples() {
        let f = FidelitySpec::new(0.1, 1).unwrap();
        assert!((f.kernel(&[0.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!(f.kernel(&[0.1 * PI]).unwrap().abs() < 1e-12);
        let f2 = FidelitySpec::new(0.5, 2).unwrap();
        assert!(f2.kernel(&[0.0, 0.5 * PI]).unwrap().abs() < 1e-12);
        assert!((f2.kernel(&[0.0, 0.0]).unwrap() - 4.0).abs() < 1e-12);
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let v = f2.kernel(&x).unwrap();
            assert!((v - f2.kernel(&[-x[0], -x[1]]).unwrap()).abs() < 1e-14);
            assert!(v.abs() <= 4.0 + 1e-12);
        }
        assert!(FidelitySpec::with_quadrature(0.1, 1, 4).is_err());
    }

    #[test]
    fn kernel_config_round_trip() {
        let cfg: KernelConfig =
            serde_json::from_str(r#"{"family":"tensor-cauchy","dim":2,"params":{"alpha":0.5}}"#).unwrap();
        let spec = MixingKernelSpec::from_config(&cfg).unwrap();
        assert_eq!(spec.family(), MixingFamily::TensorCauchy { alpha: 0.5 });
        assert_eq!(MixingKernelSpec::from_config(&spec.to_config()).unwrap(), spec);
        let bad: KernelConfig = serde_json::from_str(r#"{"family":"matern","dim":1}"#).unwrap();
        assert!(MixingKernelSpec::from_config(&bad).is_err());
    }
}
