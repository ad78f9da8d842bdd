//! The bump `psi_m(x) = prod_j sinc(m x_j)^4` and its derivatives.

use crate::fidelity::Jet;

/// Below this magnitude the closed-form sinc derivatives lose digits to
/// cancellation (the fourth derivative is `O(x^5) / x^5`), so a power series is used.
const SERIES_RADIUS: f64 = 1.0;

/// `[g, g', g'', g''', g'''']` for `g(x) = sin(x) / x`.
pub fn sinc_derivatives(x: f64) -> [f64; 5] {
    if x.abs() < SERIES_RADIUS {
        return sinc_series(x);
    }
    let (s, c) = x.sin_cos();
    let x2 = x * x;
    [
        s / x,
        (x * c - s) / x2,
        -((x2 - 2.0) * s + 2.0 * x * c) / (x2 * x),
        (3.0 * (x2 - 2.0) * s - x * (x2 - 6.0) * c) / (x2 * x2),
        (4.0 * x * (x2 - 6.0) * c + (x2 * x2 - 12.0 * x2 + 24.0) * s) / (x2 * x2 * x),
    ]
}

/// Term-by-term derivatives of `sum_k (-1)^k x^{2k} / (2k+1)!`.
fn sinc_series(x: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    // coefficient (-1)^k / (2k+1)!
    let mut coef = 1.0;
    for k in 0..14usize {
        let p = 2 * k;
        for (r, slot) in out.iter_mut().enumerate() {
            if p >= r {
                // d^r/dx^r x^p = p!/(p-r)! x^{p-r}
                let falling: f64 = ((p - r + 1)..=p).map(|v| v as f64).product();
                *slot += coef * falling * x.powi((p - r) as i32);
            }
        }
        coef /= -((p + 2) as f64 * (p + 3) as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEvaluator {
    pub m: f64,
    pub dim: usize,
}

impl PsiEvaluator {
    pub fn new(m: f64, dim: usize) -> Self {
        assert!(m > 0.0 && dim > 0);
        Self { m, dim }
    }

    /// `psi_m`, its gradient and Hessian at `x`:
    /// `grad psi_m(x) = 4 m psi^3 grad psi (m x)` and
    /// `D^2 psi_m(x) = 4 m^2 [psi^3 D^2 psi + 3 psi^2 grad psi grad psi^T](m x)`.
    pub fn jet(&self, x: &[f64], order: u8) -> Jet {
        let d = x.len();
        let m = self.m;
        let g: Vec<[f64; 5]> = x.iter().map(|&v| sinc_derivatives(m * v)).collect();
        let prod_except = |skip: &[usize]| -> f64 {
            (0..d).filter(|l| !skip.contains(l)).map(|l| g[l][0]).product()
        };
        let psi = prod_except(&[]);
        let psi2 = psi * psi;
        let psi3 = psi2 * psi;
        let mut jet = Jet {
            value: psi2 * psi2,
            grad: Vec::new(),
            hess: Vec::new(),
        };
        if order == 0 {
            return jet;
        }
        let dpsi: Vec<f64> = (0..d).map(|i| g[i][1] * prod_except(&[i])).collect();
        jet.grad = dpsi.iter().map(|v| 4.0 * m * psi3 * v).collect();
        if order >= 2 {
            jet.hess = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let ddpsi = if i == j {
                        g[i][2] * prod_except(&[i])
                    } else {
                        g[i][1] * g[j][1] * prod_except(&[i, j])
                    };
                    jet.hess[i * d + j] = 4.0 * m * m * (psi3 * ddpsi + 3.0 * psi2 * dpsi[i] * dpsi[j]);
                }
            }
        }
        jet
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x, 0).value
    }

    /// `(psi_m(x), grad psi_m(x), D^2 psi_m(x))` with the Hessian as nested rows.
    pub fn value_grad_hess(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let jet = self.jet(x, 2);
        let d = x.len();
        let hess = (0..d).map(|i| jet.hess[i * d..(i + 1) * d].to_vec()).collect();
        (jet.value, jet.grad, hess)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn series_and_closed_form_agree_at_the_switch() {
        for x in [0.9, 0.99, 1.0, 1.01, 1.2] {
            let a = sinc_series(x);
            let (s, c) = f64::sin_cos(x);
            let x2 = x * x;
            let b = [
                s / x,
                (x * c - s) / x2,
                -((x2 - 2.0) * s + 2.0 * x * c) / (x2 * x),
                (3.0 * (x2 - 2.0) * s - x * (x2 - 6.0) * c) / (x2 * x2),
                (4.0 * x * (x2 - 6.0) * c + (x2 * x2 - 12.0 * x2 + 24.0) * s) / (x2 * x2 * x),
            ];
            for r in 0..5 {
                assert!((a[r] - b[r]).abs() < 1e-13, "x={x} r={r}: {} vs {}", a[r], b[r]);
            }
        }
    }

    #[test]
    fn sinc_values_at_zero() {
        assert_eq!(sinc_derivatives(0.0), [1.0, 0.0, -1.0 / 3.0, 0.0, 0.2]);
    }

    #[test]
    fn sinc_derivatives_match_finite_differences() {
        let h = 1e-5;
        for i in 0..200 {
            let x = -12.0 + 0.1234 * i as f64;
            let gp = sinc_derivatives(x + h);
            let gm = sinc_derivatives(x - h);
            let g = sinc_derivatives(x);
            for r in 0..4 {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                assert!((fd - g[r + 1]).abs() < 1e-8, "x={x} r={r}");
            }
        }
    }

    #[test]
    fn psi_at_origin_and_at_first_zero() {
        for d in 1..=3 {
            for m in [1.0, 3.0, 10.0] {
                let (v, g, h) = PsiEvaluator::new(m, d).value_grad_hess(&vec![0.0; d]);
                assert_eq!(v, 1.0);
                assert!(g.iter().all(|&x| x == 0.0));
                for i in 0..d {
                    for j in 0..d {
                        let expect = if i == j { -4.0 / 3.0 * m * m } else { 0.0 };
                        assert!((h[i][j] - expect).abs() <= 1e-15 * m * m);
                    }
                }
            }
        }
        let (v, g, h) = PsiEvaluator::new(1.0, 1).value_grad_hess(&[PI]);
        assert!(v.abs() < 1e-60 && g[0].abs() < 1e-45 && h[0][0].abs() < 1e-30);
    }
}
