//! Error functionals for an estimate against the true mixing measure, and
//! the rate quantities `rho_n` and `C_m`.

use serde::Serialize;

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{check_dim, Error, Result};
use crate::kernels::MixingKernelSpec;
use crate::measures::{distance, DiscreteMeasure};

/// `|mu_hat|_1 - |mu_0|_1 - int P_m d(mu_hat - mu_0)`.
pub fn bregman_divergence(estimate: &DiscreteMeasure, truth: &DiscreteMeasure, cert: &Certificate) -> Result<f64> {
    check_dim(truth.dim(), estimate.dim())?;
    check_dim(truth.dim(), cert.dim)?;
    if cert.kind != CertificateKind::Full || cert.support.len() != truth.len() {
        return Err(Error::SupportMismatch);
    }
    for atom in truth.atoms() {
        if !cert.support.iter().any(|s| distance(s, &atom.location) <= 1e-12) {
            return Err(Error::SupportMismatch);
        }
    }
    let integral = |mu: &DiscreteMeasure| -> f64 {
        mu.atoms()
            .iter()
            .map(|a| a.weight * cert.value_unchecked(&a.location))
            .sum()
    };
    Ok(estimate.total_variation() - truth.total_variation() - (integral(estimate) - integral(truth)))
}

/// Closed balls `N_k(eps)` around the true support and their complement.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub truth_support: Vec<Vec<f64>>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMasses {
    /// Mass of the negative part over all of R^d.
    pub neg_mass_total: f64,
    /// Mass of the negative part outside every near region.
    pub neg_mass_far: f64,
    /// Mass of the positive part outside every near region.
    pub pos_mass_far: f64,
    /// Signed mass inside each `N_k(eps)`.
    pub near_signed: Vec<f64>,
}

/// Splits the estimate's mass by region; atoms at distance exactly `epsilon` count as near.
pub fn region_masses(estimate: &DiscreteMeasure, region: &RegionSpec) -> Result<RegionMasses> {
    let support = &region.truth_support;
    for t in support {
        check_dim(estimate.dim(), t.len())?;
    }
    let mut delta = f64::INFINITY;
    for i in 0..support.len() {
        for j in (i + 1)..support.len() {
            delta = delta.min(distance(&support[i], &support[j]));
        }
    }
    if region.epsilon >= delta / 2.0 {
        return Err(Error::OverlappingRegions {
            epsilon: region.epsilon,
            half_separation: delta / 2.0,
        });
    }
    let mut out = RegionMasses {
        neg_mass_total: 0.0,
        neg_mass_far: 0.0,
        pos_mass_far: 0.0,
        near_signed: vec![0.0; support.len()],
    };
    for atom in estimate.atoms() {
        if atom.weight < 0.0 {
            out.neg_mass_total -= atom.weight;
        }
        match support.iter().position(|s| distance(s, &atom.location) <= region.epsilon) {
            Some(k) => out.near_signed[k] += atom.weight,
            None if atom.weight > 0.0 => out.pos_mass_far += atom.weight,
            None => out.neg_mass_far -= atom.weight,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateQuantities {
    /// `2^d m^{d/2} / sqrt(n)`.
    pub rho_n: f64,
    /// `K^2 m^{-d/2} 2^{d/2} / inf sigma`.
    pub c_m: f64,
    pub product_bound: f64,
    /// `inf { sigma(t) : |t|_inf <= 4 m }`.
    pub inf_sigma: f64,
}

pub fn rate_quantities(k: usize, d: usize, m: f64, n: usize, mixing: &MixingKernelSpec) -> Result<RateQuantities> {
    check_dim(d, mixing.dim())?;
    if n == 0 || !(m > 0.0) {
        return Err(Error::InvalidParameter("rate quantities need n >= 1 and m > 0".into()));
    }
    let df = d as f64;
    let rho_n = 2f64.powi(d as i32) * m.powf(df / 2.0) / (n as f64).sqrt();
    let inf_sigma = mixing.spectral_inf_on_box(4.0 * m);
    let c_m = (k * k) as f64 * m.powf(-df / 2.0) * 2f64.powf(df / 2.0) / inf_sigma;
    Ok(RateQuantities {
        rho_n,
        c_m,
        product_bound: rho_n * c_m,
        inf_sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportError {
    /// Hausdorff distance between supports (infinite for an empty estimate).
    pub hausdorff: f64,
    /// `sum |w_hat - a_k|` over matched pairs plus `|a_k|` for every unmatched true atom.
    pub matched_weight_l1: f64,
    /// Number of estimate clusters.
    pub k_hat: usize,
}

/// Radius used to cluster estimate atoms before matching: a quarter of the
/// true minimum separation (a quarter unit for a single true atom).
pub fn cluster_radius(truth: &DiscreteMeasure) -> f64 {
    truth.min_separation().map(|d| d / 4.0).unwrap_or(0.25)
}

/// Clusters the estimate, greedily matches the closest (cluster, truth) pairs, and
/// reports the Hausdorff distance and weight error.
pub fn support_error(estimate: &DiscreteMeasure, truth: &DiscreteMeasure) -> Result<SupportError> {
    check_dim(truth.dim(), estimate.dim())?;
    let clusters = estimate.merge_close(cluster_radius(truth))?;
    if clusters.is_empty() {
        return Ok(SupportError {
            hausdorff: f64::INFINITY,
            matched_weight_l1: truth.total_variation(),
            k_hat: 0,
        });
    }
    let est = clusters.atoms();
    let tru = truth.atoms();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(est.len() * tru.len());
    for (i, e) in est.iter().enumerate() {
        for (k, t) in tru.iter().enumerate() {
            pairs.push((distance(&e.location, &t.location), i, k));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.len()];
    let mut used_t = vec![false; tru.len()];
    let mut l1 = 0.0;
    for (_, i, k) in pairs {
        if !used_e[i] && !used_t[k] {
            used_e[i] = true;
            used_t[k] = true;
            l1 += (est[i].weight - tru[k].weight).abs();
        }
    }
    l1 += tru
        .iter()
        .zip(&used_t)
        .filter(|(_, &u)| !u)
        .map(|(t, _)| t.weight.abs())
        .sum::<f64>();
    let directed = |a: &[crate::measures::Atom], b: &[crate::measures::Atom]| {
        a.iter()
            .map(|x| b.iter().map(|y| distance(&x.location, &y.location)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    let hausdorff = if tru.is_empty() {
        f64::INFINITY
    } else {
        directed(est, tru).max(directed(tru, est))
    };
    Ok(SupportError {
        hausdorff,
        matched_weight_l1: l1,
        k_hat: est.len(),
    })
}
