//! Numerical audits of a built certificate.

use rayon::prelude::*;
use serde::Serialize;

use super::Certificate;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{FidelitySpec, MixingKernelSpec};
use crate::measures::distance;
use crate::grid::GridSpec;
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub m: f64,
    pub dim: usize,
    pub atoms: usize,
    pub condition: f64,
    pub max_value_residual: f64,
    pub max_gradient_residual: f64,
    pub grid_points: usize,
    pub grid_max: f64,
    pub grid_min: f64,
    pub epsilon: f64,
    /// `min (1 - P_m(t)) / (m^2 |t - t_k|^2)` over grid points in the near region; `None` if none fall there.
    pub near_decay_constant: Option<f64>,
    /// `min (1 - P_m(t))` over grid points in the far region.
    pub far_gap: Option<f64>,
    pub admissible_m: f64,
    pub below_admissible: bool,
}

/// `c sqrt(K) d^{3/2} / min(delta, 1)`.
pub fn admissible_bandwidth(k: usize, d: usize, delta: f64, c: f64) -> f64 {
    c * (k as f64).sqrt() * (d as f64).powf(1.5) / delta.min(1.0)
}

/// Evaluates residuals, the grid maximum and the empirical near/far constants.
/// `epsilon` defaults to `1 / (m d)`.
pub fn audit_certificate(cert: &Certificate, grid: &GridSpec, epsilon: Option<f64>) -> Result<AuditReport> {
    check_dim(cert.dim, grid.dim())?;
    let m = cert.m;
    let eps = epsilon.unwrap_or(1.0 / (m * cert.dim as f64));
    let (max_value_residual, max_gradient_residual) = cert.interpolation_residuals();
    let points = grid.points();
    struct Acc {
        max: f64,
        min: f64,
        near: f64,
        far: f64,
    }
    let identity = || Acc {
        max: f64::NEG_INFINITY,
        min: f64::INFINITY,
        near: f64::INFINITY,
        far: f64::INFINITY,
    };
    let acc = points
        .par_iter()
        .fold(identity, |mut acc, t| {
            let v = cert.value_unchecked(t);
            acc.max = acc.max.max(v);
            acc.min = acc.min.min(v);
            let (dist, _) = cert
                .support
                .iter()
                .map(|s| distance(s, t))
                .fold((f64::INFINITY, 0), |(best, i), x| if x < best { (x, i) } else { (best, i) });
            if dist <= eps {
                // the support point itself carries no decay information
                if dist > 1e-9 / m {
                    acc.near = acc.near.min((1.0 - v) / (m * m * dist * dist));
                }
            } else {
                acc.far = acc.far.min(1.0 - v);
            }
            acc
        })
        .reduce(identity, |a, b| Acc {
            max: a.max.max(b.max),
            min: a.min.min(b.min),
            near: a.near.min(b.near),
            far: a.far.min(b.far),
        });
    let delta = if cert.support.len() >= 2 {
        let mut best = f64::INFINITY;
        for i in 0..cert.support.len() {
            for j in (i + 1)..cert.support.len() {
                best = best.min(distance(&cert.support[i], &cert.support[j]));
            }
        }
        best
    } else {
        f64::INFINITY
    };
    let admissible_m = admissible_bandwidth(cert.support.len(), cert.dim, delta, 1.0);
    let finite = |x: f64| if x.is_finite() { Some(x) } else { None };
    Ok(AuditReport {
        m,
        dim: cert.dim,
        atoms: cert.support.len(),
        condition: cert.condition,
        max_value_residual,
        max_gradient_residual,
        grid_points: points.len(),
        grid_max: acc.max,
        grid_min: acc.min,
        epsilon: eps,
        near_decay_constant: finite(acc.near),
        far_gap: finite(acc.far),
        admissible_m,
        below_admissible: m < admissible_m,
    })
}

/// Quadrature settings for `|P_m|_2`: the support box is widened by
/// `margin_factor * d / m`, panels have width `1 / m`, `nodes` Gauss points each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Quadrature {
    pub margin_factor: f64,
    pub nodes: usize,
}

impl Default for L2Quadrature {
    fn default() -> Self {
        Self {
            margin_factor: 40.0,
            nodes: 24,
        }
    }
}

/// `|P_m|_{L^2}` by tensor Gauss-Legendre quadrature.
pub fn certificate_l2_norm(cert: &Certificate, quad: &L2Quadrature) -> f64 {
    let d = cert.dim;
    let m = cert.m;
    let margin = quad.margin_factor * d as f64 / m;
    let rule = GaussLegendre::new(quad.nodes);
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|j| {
            let lo = cert.support.iter().map(|t| t[j]).fold(f64::INFINITY, f64::min) - margin;
            let hi = cert.support.iter().map(|t| t[j]).fold(f64::NEG_INFINITY, f64::max) + margin;
            let panels = ((hi - lo) * m).ceil() as usize;
            rule.composite_points(lo, hi, panels)
        })
        .collect();
    let n0 = axes[0].0.len();
    let total: f64 = (0..n0)
        .into_par_iter()
        .map(|i0| {
            let mut acc = 0.0;
            let rest: usize = axes[1..].iter().map(|a| a.0.len()).product();
            let mut idx = vec![0usize; d];
            idx[0] = i0;
            let mut t = vec![0.0; d];
            for _ in 0..rest {
                let mut w = 1.0;
                for j in 0..d {
                    t[j] = axes[j].0[idx[j]];
                    w *= axes[j].1[idx[j]];
                }
                let v = cert.value_unchecked(&t);
                acc += w * v * v;
                for k in (1..d).rev() {
                    idx[k] += 1;
                    if idx[k] < axes[k].0.len() {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            acc
        })
        .sum();
    total.sqrt()
}

/// `|P_m|_2 / sqrt(inf_{|t|_inf <= 4m} sigma(t)^2 F[lambda](t))`, with `F[lambda] = 2^-d` on the band.
pub fn c0m_norm_bound(
    cert: &Certificate,
    mixing: &MixingKernelSpec,
    fidelity: &FidelitySpec,
    quad: &L2Quadrature,
) -> Result<f64> {
    check_dim(cert.dim, mixing.dim())?;
    check_dim(cert.dim, fidelity.dim)?;
    let band = 4.0 * cert.m;
    if fidelity.cutoff() < band * (1.0 - 1e-12) {
        return Err(Error::BandMismatch {
            cutoff: fidelity.cutoff(),
            band,
        });
    }
    let inf_sigma = mixing.spectral_inf_on_box(band);
    let level = fidelity.spectral_level();
    Ok(certificate_l2_norm(cert, quad) / (inf_sigma * level.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::super::CertificateKind;
    use super::*;
    use crate::kernels::MixingFamily;

    #[test]
    fn admissible_examples() {
        assert_eq!(admissible_bandwidth(1, 1, 1.0, 1.0), 1.0);
        assert!((admissible_bandwidth(3, 1, 12.2, 1.0) - 3f64.sqrt()).abs() < 1e-15);
        assert!((admissible_bandwidth(4, 2, 0.5, 1.0) - 11.313_708_498_984_761).abs() < 1e-12);
    }

    #[test]
    fn single_spike_near_constant() {
        let c = Certificate::build(&[vec![0.5]], 2.0, CertificateKind::Full).unwrap();
        let grid = GridSpec::new(vec![0.49], vec![0.51], 201).unwrap();
        let rep = audit_certificate(&c, &grid, Some(0.02)).unwrap();
        assert!((rep.near_decay_constant.unwrap() - 4.0 / 3.0).abs() < 1e-3);
        assert!(rep.max_value_residual < 1e-15);
    }

    #[test]
    fn figure1_far_gap_positive() {
        let s = vec![vec![-13.1], vec![-0.9], vec![14.0]];
        let c = Certificate::build(&s, 2.0, CertificateKind::Full).unwrap();
        let grid = GridSpec::new(vec![-20.0], vec![20.0], 4001).unwrap();
        let rep = audit_certificate(&c, &grid, None).unwrap();
        assert!(rep.far_gap.unwrap() > 0.0);
        assert!(rep.grid_max <= 1.0 + 1e-9);
        assert!(!rep.below_admissible);
        let low = audit_certificate(&Certificate::build(&s, 1.0, CertificateKind::Full).unwrap(), &grid, None).unwrap();
        assert!(low.below_admissible);
    }

    #[test]
    fn l2_norm_scaling() {
        let q = L2Quadrature::default();
        let n1 = certificate_l2_norm(&Certificate::build(&[vec![0.0]], 1.0, CertificateKind::Full).unwrap(), &q);
        let n2 = certificate_l2_norm(&Certificate::build(&[vec![0.0]], 2.0, CertificateKind::Full).unwrap(), &q);
        assert!(((n2 * n2) / (n1 * n1) - 0.5).abs() < 0.025);
    }

    #[test]
    fn c0m_requires_band() {
        let c = Certificate::build(&[vec![0.0]], 1.0, CertificateKind::Full).unwrap();
        let g = MixingKernelSpec::gaussian(1);
        let q = L2Quadrature::default();
        assert!(matches!(
            c0m_norm_bound(&c, &g, &FidelitySpec::new(0.5, 1).unwrap(), &q),
            Err(Error::BandMismatch { .. })
        ));
        let fid = FidelitySpec::from_bandwidth(1.0, 1).unwrap();
        let b = c0m_norm_bound(&c, &g, &fid, &q).unwrap();
        let expect = certificate_l2_norm(&c, &q) * 2f64.sqrt() * 8f64.exp();
        assert!((b / expect - 1.0).abs() < 1e-12);
        let ml = MixingKernelSpec::new(MixingFamily::MultivariateLaplace, 1).unwrap();
        assert!((ml.spectral_inf_on_box(4.0) - 1.0 / 9.0).abs() < 1e-15);
        assert!((g.spectral_inf_on_box(4.0) - (-8f64).exp()).abs() < 1e-18);
    }
}
