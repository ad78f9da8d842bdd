//! Interpolating dual certificates built from the sinc^4 bump.
//!
//! `p_m(t) = sum_k alpha_k psi_m(t - t_k) + <beta_k, grad psi_m(t - t_k)>` is fitted so
//! that `p_m(t_i)` hits a target and `grad p_m(t_i) = 0` at every support point; the
//! certificate is `P_m = p_m^2`.

mod audit;
mod psi;

pub use crate::grid::GridSpec;
pub use audit::{admissible_bandwidth, audit_certificate, c0m_norm_bound, certificate_l2_norm, AuditReport, L2Quadrature};
pub use psi::{sinc_derivatives, PsiEvaluator};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fidelity::Jet;

/// Condition numbers above this are reported as ill-conditioned.
pub const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// Interpolates 1 at every support point.
    Full,
    /// Interpolates 1 at support point `k` and 0 at the others.
    Selector(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub m: f64,
    pub dim: usize,
    pub support: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub kind: CertificateKind,
    /// 2-norm condition number of the interpolation system.
    pub condition: f64,
}

impl Certificate {
    /// Solves the `K (d + 1)` interpolation system.
    ///
    /// Derivative rows are negated so the matrix is symmetric:
    /// `[[A, D], [D^T, -H]]` with `A_ik = psi_m(t_i - t_k)`,
    /// `D_{i,(k,v)} = d_v psi_m(t_i - t_k)` and `H_{(i,u),(k,v)} = d_u d_v psi_m(t_i - t_k)`.
    pub fn build(support: &[Vec<f64>], m: f64, kind: CertificateKind) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Empty("certificate support"));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth m must be positive, got {m}")));
        }
        let dim = support[0].len();
        for t in support {
            check_dim(dim, t.len())?;
        }
        let k_len = support.len();
        if let CertificateKind::Selector(k) = kind {
            if k >= k_len {
                return Err(Error::InvalidParameter(format!("selector index {k} out of range for {k_len} atoms")));
            }
        }
        let psi = PsiEvaluator::new(m, dim);
        let size = k_len * (dim + 1);
        let mut mat = DMatrix::zeros(size, size);
        let mut u = vec![0.0; dim];
        for i in 0..k_len {
            for k in 0..k_len {
                for j in 0..dim {
                    u[j] = support[i][j] - support[k][j];
                }
                let jet = psi.jet(&u, 2);
                mat[(i, k)] = jet.value;
                for v in 0..dim {
                    mat[(i, k_len + k * dim + v)] = jet.grad[v];
                    mat[(k_len + i * dim + v, k)] = -jet.grad[v];
                    for w in 0..dim {
                        mat[(k_len + i * dim + v, k_len + k * dim + w)] = -jet.hess[v * dim + w];
                    }
                }
            }
        }
        let mut rhs = DVector::zeros(size);
        match kind {
            CertificateKind::Full => (0..k_len).for_each(|i| rhs[i] = 1.0),
            CertificateKind::Selector(k) => rhs[k] = 1.0,
        }
        let sv = mat.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditionedCertificate { condition });
        }
        let sol = mat
            .lu()
            .solve(&rhs)
            .ok_or(Error::IllConditionedCertificate { condition })?;
        let alpha = (0..k_len).map(|k| sol[k]).collect();
        let beta = (0..k_len)
            .map(|k| (0..dim).map(|v| sol[k_len + k * dim + v]).collect())
            .collect();
        Ok(Self {
            m,
            dim,
            support: support.to_vec(),
            alpha,
            beta,
            kind,
            condition,
        })
    }

    pub fn psi(&self) -> PsiEvaluator {
        PsiEvaluator::new(self.m, self.dim)
    }

    /// Target of `p_m` at support point `i`.
    pub fn target(&self, i: usize) -> f64 {
        match self.kind {
            CertificateKind::Full => 1.0,
            CertificateKind::Selector(k) => (i == k) as u8 as f64,
        }
    }

    /// `p_m` with derivatives up to `order` (at most 1).
    pub fn p_jet(&self, t: &[f64], order: u8) -> Jet {
        let d = self.dim;
        let psi = self.psi();
        let mut out = Jet {
            value: 0.0,
            grad: if order >= 1 { vec![0.0; d] } else { Vec::new() },
            hess: Vec::new(),
        };
        let mut u = vec![0.0; d];
        let inner = if order >= 1 { 2 } else { 1 };
        for (k, tk) in self.support.iter().enumerate() {
            for j in 0..d {
                u[j] = t[j] - tk[j];
            }
            let jet = psi.jet(&u, inner);
            out.value += self.alpha[k] * jet.value;
            for v in 0..d {
                out.value += self.beta[k][v] * jet.grad[v];
            }
            if order >= 1 {
                for j in 0..d {
                    out.grad[j] += self.alpha[k] * jet.grad[j];
                    for v in 0..d {
                        out.grad[j] += self.beta[k][v] * jet.hess[j * d + v];
                    }
                }
            }
        }
        out
    }

    pub fn p_value(&self, t: &[f64]) -> Result<f64> {
        check_dim(self.dim, t.len())?;
        Ok(self.p_jet(t, 0).value)
    }

    /// `P_m(t) = p_m(t)^2`.
    pub fn value(&self, t: &[f64]) -> Result<f64> {
        let p = self.p_value(t)?;
        Ok(p * p)
    }

    pub(crate) fn value_unchecked(&self, t: &[f64]) -> f64 {
        let p = self.p_jet(t, 0).value;
        p * p
    }

    /// `(max_k |p_m(t_k) - target_k|, max_k |grad p_m(t_k)|_inf)`.
    pub fn interpolation_residuals(&self) -> (f64, f64) {
        let mut value_res: f64 = 0.0;
        let mut grad_res: f64 = 0.0;
        for (i, t) in self.support.iter().enumerate() {
            let jet = self.p_jet(t, 1);
            value_res = value_res.max((jet.value - self.target(i)).abs());
            grad_res = jet.grad.iter().fold(grad_res, |acc, g| acc.max(g.abs()));
        }
        (value_res, grad_res)
    }
}

/// `P_m` for the support of a measure (kind [`CertificateKind::Full`]).
pub fn build_certificate(support: &[Vec<f64>], m: f64, kind: CertificateKind) -> Result<Certificate> {
    Certificate::build(support, m, kind)
}

/// Evaluates `P_m` on the grid described by `grid`, returning `(point, value)` rows.
pub fn evaluate_on_grid(cert: &Certificate, grid: &GridSpec) -> Result<Vec<(Vec<f64>, f64)>> {
    use rayon::prelude::*;
    check_dim(cert.dim, grid.low.len())?;
    let points = grid.points();
    Ok(points
        .into_par_iter()
        .map(|p| {
            let v = cert.value_unchecked(&p);
            (p, v)
        })
        .collect())
}
