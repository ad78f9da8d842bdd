//! Sliding Frank-Wolfe for the Beurling-LASSO with the RKHS fidelity.
//!
//! Each iteration inserts the maximizer of `|eta|`, re-solves the amplitudes on
//! the enlarged support (LASSO step), then jointly moves amplitudes and locations
//! to decrease `F(a, t) + kappa |a|_1` (sliding step). The search for the
//! maximizer is a grid scan followed by local ascent; it finds a global maximum
//! only if the grid resolves every peak of `eta`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fidelity::{DataTerm, FidelityCache};
use crate::grid::GridSpec;
use crate::measures::{distance, DiscreteMeasure};

/// Atoms closer than this after sliding are fused.
const COINCIDENT: f64 = 1e-7;
/// A new spike this close to an existing atom is not inserted.
const DUPLICATE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl SearchBox {
    /// The data extent widened by `margin` on every side.
    pub fn around(data: &DataTerm, margin: f64) -> Self {
        let ext = data.extent();
        Self {
            low: ext.iter().map(|(a, _)| a - margin).collect(),
            high: ext.iter().map(|(_, b)| b + margin).collect(),
        }
    }

    fn clamp(&self, t: &mut [f64]) {
        for (j, v) in t.iter_mut().enumerate() {
            *v = v.clamp(self.low[j], self.high[j]);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfwConfig {
    pub kappa: f64,
    pub max_iters: usize,
    pub dual_tol: f64,
    pub grid_points_per_dim: usize,
    /// Defaults to the data extent widened by three noise scales.
    pub search_box: Option<SearchBox>,
    pub lasso_max_iters: usize,
    pub lasso_tol: f64,
    pub slide_max_iters: usize,
    pub slide_tol: f64,
    pub prune_threshold: f64,
    pub nonnegative: bool,
    /// Finish each sliding step with Newton iterations on the smooth part for fixed signs.
    pub newton_polish: bool,
}

impl Default for SfwConfig {
    fn default() -> Self {
        Self {
            kappa: 0.01,
            max_iters: 50,
            dual_tol: 1e-3,
            grid_points_per_dim: 512,
            search_box: None,
            lasso_max_iters: 20_000,
            lasso_tol: 1e-12,
            slide_max_iters: 200,
            slide_tol: 1e-12,
            prune_threshold: 1e-10,
            nonnegative: false,
            newton_polish: true,
        }
    }
}

impl SfwConfig {
    pub fn with_kappa(kappa: f64) -> Self {
        Self {
            kappa,
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.dual_tol > 0.0) {
            return Err(Error::InvalidParameter("dual_tol must be positive".into()));
        }
        if self.grid_points_per_dim < 2 {
            return Err(Error::InvalidParameter("grid_points_per_dim must be at least 2".into()));
        }
        if let Some(b) = &self.search_box {
            check_dim(dim, b.low.len())?;
            check_dim(dim, b.high.len())?;
            if b.low.iter().zip(&b.high).any(|(l, h)| !(l < h)) {
                return Err(Error::InvalidParameter("search box must satisfy low < high".into()));
            }
        }
        Ok(())
    }

    fn resolved_box(&self, data: &DataTerm) -> SearchBox {
        self.search_box.clone().unwrap_or_else(|| {
            let scale = data.evaluator().mixing().map_or(1.0, |m| m.noise_scale());
            SearchBox::around(data, 3.0 * scale)
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub estimate: DiscreteMeasure,
    pub iterations: usize,
    pub converged: bool,
    /// `max |eta|` (or `max eta` in nonnegative mode) found at exit.
    pub dual_sup: f64,
    /// `F + kappa |a|_1` after each iteration, starting from the empty measure.
    pub objective_trace: Vec<f64>,
    pub support_trace: Vec<usize>,
}

impl SolveResult {
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["iteration", "objective", "support_size"])?;
        for (k, (obj, n)) in self.objective_trace.iter().zip(&self.support_trace).enumerate() {
            w.write_record([k.to_string(), format!("{obj:e}"), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `F(a, t) + kappa |a|_1` evaluated directly.
pub fn penalized_objective(data: &DataTerm, a: &[f64], t: &[Vec<f64>], kappa: f64) -> f64 {
    let ev = data.evaluator();
    let mut f = data.const_term();
    for i in 0..a.len() {
        f -= a[i] * data.jet(&t[i], 0).value;
        f += 0.5 * a[i] * a[i] * ev.zeta0();
        for j in (i + 1)..a.len() {
            f += a[i] * a[j] * ev.zeta_jet(&diff(&t[i], &t[j]), 0).value;
        }
    }
    f + kappa * a.iter().map(|x| x.abs()).sum::<f64>()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn measure(dim: usize, a: &[f64], t: &[Vec<f64>]) -> Result<DiscreteMeasure> {
    DiscreteMeasure::from_parts(dim, a, t)
}

/// Grid scan of `|eta|` (of `eta` in nonnegative mode) over the search box, then local ascent.
///
/// Ties between grid cells go to the first in lexicographic order.
pub fn find_spike(data: &DataTerm, mu: &DiscreteMeasure, config: &SfwConfig) -> Result<(Vec<f64>, f64)> {
    config.validate(data.dim())?;
    check_dim(data.dim(), mu.dim())?;
    let bx = config.resolved_box(data);
    Ok(find_spike_in(data, mu, config, &bx))
}

fn find_spike_in(data: &DataTerm, mu: &DiscreteMeasure, config: &SfwConfig, bx: &SearchBox) -> (Vec<f64>, f64) {
    let grid = GridSpec {
        low: bx.low.clone(),
        high: bx.high.clone(),
        points_per_dim: config.grid_points_per_dim,
    };
    let points = grid.points();
    let values: Vec<f64> = points
        .par_iter()
        .map(|t| data.residual_jet(mu, t, 0).value)
        .collect();
    let score = |v: f64| if config.nonnegative { v } else { v.abs() };
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if score(v) > score(values[best]) {
            best = i;
        }
    }
    let sign = if config.nonnegative || values[best] >= 0.0 { 1.0 } else { -1.0 };
    let spacing = grid
        .low
        .iter()
        .zip(&grid.high)
        .map(|(l, h)| (h - l) / (grid.points_per_dim - 1) as f64)
        .fold(f64::INFINITY, f64::min);
    let t = ascend(data, mu, points[best].clone(), sign, spacing, bx);
    let v = data.residual_jet(mu, &t, 0).value / config.kappa;
    (t, v)
}

/// Maximizes `sign * residual` from `t` with Newton steps where the Hessian is
/// negative definite and normalized gradient steps otherwise, backtracking to
/// keep the objective nondecreasing.
fn ascend(data: &DataTerm, mu: &DiscreteMeasure, mut t: Vec<f64>, sign: f64, spacing: f64, bx: &SearchBox) -> Vec<f64> {
    let d = t.len();
    let f = |x: &[f64]| sign * data.residual_jet(mu, x, 0).value;
    let mut fv = f(&t);
    for _ in 0..200 {
        let jet = data.residual_jet(mu, &t, 2);
        let g = DVector::from_iterator(d, jet.grad.iter().map(|v| sign * v));
        if g.amax() == 0.0 {
            break;
        }
        let neg_h = DMatrix::from_iterator(d, d, jet.hess.iter().map(|v| -sign * v));
        let dir = match neg_h.cholesky() {
            Some(ch) => ch.solve(&g),
            None => &g * (spacing / g.norm()),
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let mut cand: Vec<f64> = t.iter().zip(dir.iter()).map(|(x, p)| x + step * p).collect();
            bx.clamp(&mut cand);
            let fc = f(&cand);
            if fc >= fv {
                let delta = distance(&cand, &t);
                t = cand;
                fv = fc;
                moved = delta > 1e-15 * (1.0 + t.iter().map(|x| x.abs()).fold(0.0, f64::max));
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    t
}

fn prox(v: f64, thr: f64, nonnegative: bool) -> f64 {
    if nonnegative {
        (v - thr).max(0.0)
    } else {
        v.signum() * (v.abs() - thr).max(0.0)
    }
}

fn lasso_value(cache: &FidelityCache, kappa: f64, a: &[f64]) -> f64 {
    cache.objective_unchecked(a) + kappa * a.iter().map(|x| x.abs()).sum::<f64>()
}

/// Minimizes `F_N(a) + kappa |a|_1` over amplitudes for the cached support.
///
/// Accelerated proximal gradient with step `1/L`, `L` the largest absolute row sum
/// of `Q`, restarted whenever the objective rises; stops when the largest
/// coordinate change is below `lasso_tol * (1 + |a|_inf)`. The result is then
/// refined by solving the optimality system on the active set exactly, kept only
/// if it satisfies the optimality conditions.
pub fn lasso_step(cache: &FidelityCache, kappa: f64, a_init: &[f64], config: &SfwConfig) -> Result<Vec<f64>> {
    if a_init.len() != cache.len() {
        return Err(Error::LengthMismatch {
            expected: cache.len(),
            got: a_init.len(),
        });
    }
    let n = cache.len();
    let q = cache.q();
    let lip = (0..n)
        .map(|i| (0..n).map(|j| q[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if n == 0 || lip == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let nonneg = config.nonnegative;
    let mut x: Vec<f64> = a_init.iter().map(|&v| if nonneg { v.max(0.0) } else { v }).collect();
    let mut fx = lasso_value(cache, kappa, &x);
    let mut y = x.clone();
    let mut tk: f64 = 1.0;
    for _ in 0..config.lasso_max_iters {
        let g = cache.gradient_unchecked(&y);
        let mut cand: Vec<f64> = (0..n).map(|i| prox(y[i] - g[i] / lip, kappa / lip, nonneg)).collect();
        let mut fc = lasso_value(cache, kappa, &cand);
        if fc > fx {
            // momentum overshot: restart with a plain proximal step from x
            let g = cache.gradient_unchecked(&x);
            cand = (0..n).map(|i| prox(x[i] - g[i] / lip, kappa / lip, nonneg)).collect();
            fc = lasso_value(cache, kappa, &cand);
            tk = 1.0;
            if fc > fx {
                break;
            }
        }
        let change = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + cand.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = (0..n).map(|i| cand[i] + (tk - 1.0) / t_next * (cand[i] - x[i])).collect();
        tk = t_next;
        x = cand;
        fx = fc;
        if change <= config.lasso_tol * scale {
            break;
        }
    }
    Ok(refine_active_set(cache, kappa, x, nonneg))
}

fn refine_active_set(cache: &FidelityCache, kappa: f64, x: Vec<f64>, nonneg: bool) -> Vec<f64> {
    let active: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    if active.is_empty() {
        return x;
    }
    let q = cache.q();
    let b = cache.b();
    let k = active.len();
    let qs = DMatrix::from_fn(k, k, |r, c| q[(active[r], active[c])]);
    let rhs = DVector::from_fn(k, |r, _| -b[active[r]] - kappa * x[active[r]].signum());
    let Some(z) = qs.lu().solve(&rhs) else {
        return x;
    };
    let mut cand = vec![0.0; x.len()];
    for (r, &i) in active.iter().enumerate() {
        if z[r] == 0.0 || z[r].signum() != x[i].signum() {
            return x;
        }
        cand[i] = z[r];
    }
    let g = cache.gradient_unchecked(&cand);
    let slack = kappa * 1e-9;
    for i in 0..x.len() {
        if cand[i] == 0.0 {
            let ok = if nonneg { g[i] >= -kappa - slack } else { g[i].abs() <= kappa + slack };
            if !ok {
                return x;
            }
        }
    }
    let fx = lasso_value(cache, kappa, &x);
    if lasso_value(cache, kappa, &cand) <= fx + 1e-14 * fx.abs() {
        cand
    } else {
        x
    }
}

/// Gradient of `F(a, t)` with respect to each location: `a_i [-grad D(t_i) + sum_{j != i} a_j grad zeta(t_i - t_j)]`.
fn location_gradient(data: &DataTerm, a: &[f64], t: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let ev = data.evaluator();
    (0..a.len())
        .map(|i| {
            let mut g: Vec<f64> = data.jet(&t[i], 1).grad.iter().map(|v| -v).collect();
            for j in 0..a.len() {
                if j != i {
                    let z = ev.zeta_jet(&diff(&t[i], &t[j]), 1);
                    for (gv, zv) in g.iter_mut().zip(&z.grad) {
                        *gv += a[j] * zv;
                    }
                }
            }
            g.iter().map(|v| a[i] * v).collect()
        })
        .collect()
}

/// Joint local descent on `(a, t)` from the given start; the returned point has
/// penalized objective no larger than the start.
pub fn slide_step(
    data: &DataTerm,
    a_init: &[f64],
    t_init: &[Vec<f64>],
    kappa: f64,
    config: &SfwConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a_init.len() != t_init.len() {
        return Err(Error::LengthMismatch {
            expected: a_init.len(),
            got: t_init.len(),
        });
    }
    for t in t_init {
        check_dim(data.dim(), t.len())?;
    }
    let mut a = a_init.to_vec();
    let mut t = t_init.to_vec();
    if a.is_empty() {
        return Ok((a, t));
    }
    let ev = data.evaluator();
    // curvature of zeta at the origin, used to precondition location steps
    let h0 = -ev.zeta_jet(&vec![0.0; data.dim()], 2).hess[0];
    let mut j_cur = penalized_objective(data, &a, &t, kappa);
    for _ in 0..config.slide_max_iters {
        let g = location_gradient(data, &a, &t);
        let dir: Vec<Vec<f64>> = g
            .iter()
            .zip(&a)
            .map(|(gi, &ai)| {
                if ai == 0.0 {
                    vec![0.0; gi.len()]
                } else {
                    gi.iter().map(|v| -v / (ai.abs() * h0)).collect()
                }
            })
            .collect();
        let slope: f64 = g.iter().zip(&dir).map(|(gi, di)| gi.iter().zip(di).map(|(x, y)| x * y).sum::<f64>()).sum();
        if !(slope < 0.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<Vec<f64>> = t
                .iter()
                .zip(&dir)
                .map(|(ti, di)| ti.iter().zip(di).map(|(x, p)| x + step * p).collect())
                .collect();
            let jc = penalized_objective(data, &a, &cand, kappa);
            if jc <= j_cur + 1e-4 * step * slope {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(t_new) = accepted else { break };
        let cache = FidelityCache::build(data, &t_new)?;
        let a_new = lasso_step(&cache, kappa, &a, config)?;
        let j_new = penalized_objective(data, &a_new, &t_new, kappa);
        let rel = (j_cur - j_new) / j_cur.abs().max(f64::MIN_POSITIVE);
        if j_new <= j_cur {
            a = a_new;
            t = t_new;
            j_cur = j_new;
        }
        if !(rel > config.slide_tol) {
            break;
        }
    }
    if config.newton_polish {
        newton_polish(data, &mut a, &mut t, kappa, config.nonnegative);
    }
    Ok((a, t))
}

/// Gradient and Hessian of `G(a, t) = F(a, t) + kappa sum_i s_i a_i` for fixed signs `s`.
/// Variables are ordered `a_1..a_N, t_1..t_N` (each location `d` entries).
fn smooth_derivatives(data: &DataTerm, a: &[f64], t: &[Vec<f64>], kappa: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.len();
    let d = data.dim();
    let size = n * (1 + d);
    let ev = data.evaluator();
    let mut grad = DVector::zeros(size);
    let mut hess = DMatrix::zeros(size, size);
    let ti = |i: usize, u: usize| n + i * d + u;
    for i in 0..n {
        let dj = data.jet(&t[i], 2);
        // d^2/da_i dt_i and d^2/dt_i^2 accumulate over j != i
        let mut cross: Vec<f64> = dj.grad.iter().map(|v| -v).collect();
        let mut tt: Vec<f64> = dj.hess.iter().map(|v| -v).collect();
        grad[i] = -dj.value + kappa * a[i].signum();
        for j in 0..n {
            if j == i {
                grad[i] += a[i] * ev.zeta0();
                hess[(i, i)] = ev.zeta0();
                continue;
            }
            let z = ev.zeta_jet(&diff(&t[i], &t[j]), 2);
            grad[i] += a[j] * z.value;
            hess[(i, j)] = z.value;
            for u in 0..d {
                cross[u] += a[j] * z.grad[u];
                hess[(i, ti(j, u))] = -a[j] * z.grad[u];
                for v in 0..d {
                    tt[u * d + v] += a[j] * z.hess[u * d + v];
                    hess[(ti(i, u), ti(j, v))] = -a[i] * a[j] * z.hess[u * d + v];
                }
            }
        }
        for u in 0..d {
            grad[ti(i, u)] = a[i] * cross[u];
            hess[(i, ti(i, u))] = cross[u];
            for v in 0..d {
                hess[(ti(i, u), ti(i, v))] = a[i] * tt[u * d + v];
            }
        }
    }
    // mirror the amplitude/location block
    for i in 0..n {
        for c in n..size {
            hess[(c, i)] = hess[(i, c)];
        }
    }
    (grad, hess)
}

/// Newton iterations on the smooth part with the signs of `a` frozen. A step is
/// taken only if it keeps every sign and lowers the gradient norm without raising
/// the penalized objective beyond rounding.
fn newton_polish(data: &DataTerm, a: &mut Vec<f64>, t: &mut Vec<Vec<f64>>, kappa: f64, nonnegative: bool) {
    if a.iter().any(|&x| x == 0.0) || (nonnegative && a.iter().any(|&x| x < 0.0)) {
        return;
    }
    let n = a.len();
    let d = data.dim();
    let (mut grad, mut hess) = smooth_derivatives(data, a, t, kappa);
    let mut j_cur = penalized_objective(data, a, t, kappa);
    for _ in 0..20 {
        let gnorm = grad.amax();
        if gnorm == 0.0 {
            break;
        }
        let Some(step) = hess.clone().lu().solve(&(-&grad)) else { break };
        let a_new: Vec<f64> = (0..n).map(|i| a[i] + step[i]).collect();
        if a_new.iter().zip(a.iter()).any(|(x, y)| x.signum() != y.signum() || *x == 0.0) {
            break;
        }
        let t_new: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|u| t[i][u] + step[n + i * d + u]).collect()).collect();
        let (g_new, h_new) = smooth_derivatives(data, &a_new, &t_new, kappa);
        let j_new = penalized_objective(data, &a_new, &t_new, kappa);
        if !(g_new.amax() < gnorm) || j_new > j_cur + 1e-13 * j_cur.abs() {
            break;
        }
        *a = a_new;
        *t = t_new;
        grad = g_new;
        hess = h_new;
        j_cur = j_new;
    }
}

/// Fuses atoms closer than [`COINCIDENT`], summing amplitudes at the |a|-weighted mean location.
fn fuse_coincident(a: &mut Vec<f64>, t: &mut Vec<Vec<f64>>) -> bool {
    let mut fused = false;
    let mut i = 0;
    while i < a.len() {
        let mut j = i + 1;
        while j < a.len() {
            if distance(&t[i], &t[j]) < COINCIDENT {
                let (wi, wj) = (a[i].abs(), a[j].abs());
                if wi + wj > 0.0 {
                    for u in 0..t[i].len() {
                        t[i][u] = (wi * t[i][u] + wj * t[j][u]) / (wi + wj);
                    }
                }
                a[i] += a[j];
                a.remove(j);
                t.remove(j);
                fused = true;
            } else {
                j += 1;
            }
        }
        i += 1;
    }
    fused
}

fn prune(a: &mut Vec<f64>, t: &mut Vec<Vec<f64>>, threshold: f64) {
    let keep: Vec<bool> = a.iter().map(|x| x.abs() > threshold).collect();
    let mut k = keep.iter();
    a.retain(|_| *k.next().unwrap());
    let mut k = keep.iter();
    t.retain(|_| *k.next().unwrap());
}

/// Runs Sliding Frank-Wolfe until `|eta(t*)| <= 1 + dual_tol` or `max_iters` insertions.
pub fn solve_sfw(data: &DataTerm, config: &SfwConfig) -> Result<SolveResult> {
    let dim = data.dim();
    config.validate(dim)?;
    let bx = config.resolved_box(data);
    let ext = data.extent();
    let lag = (0..dim)
        .map(|j| bx.high[j].max(ext[j].1) - bx.low[j].min(ext[j].0))
        .fold(0.0, f64::max)
        + 2.0;
    let data = data.covering(lag);
    let data = data.as_ref();
    let kappa = config.kappa;
    let score = |v: f64| if config.nonnegative { v } else { v.abs() };

    let mut a: Vec<f64> = Vec::new();
    let mut t: Vec<Vec<f64>> = Vec::new();
    let mut objective_trace = vec![penalized_objective(data, &a, &t, kappa)];
    let mut support_trace = vec![0];
    let mut converged = false;
    let mut dual_sup = f64::NAN;
    let mut iterations = 0;
    for _ in 0..=config.max_iters {
        let mu = measure(dim, &a, &t)?;
        let (spike, value) = find_spike_in(data, &mu, config, &bx);
        dual_sup = score(value);
        if dual_sup <= 1.0 + config.dual_tol {
            converged = true;
            break;
        }
        if iterations == config.max_iters {
            break;
        }
        iterations += 1;
        if t.iter().all(|s| distance(s, &spike) > DUPLICATE_GUARD) {
            t.push(spike);
            a.push(0.0);
        }
        let cache = FidelityCache::build(data, &t)?;
        a = lasso_step(&cache, kappa, &a, config)?;
        let (a_new, t_new) = slide_step(data, &a, &t, kappa, config)?;
        a = a_new;
        t = t_new;
        prune(&mut a, &mut t, config.prune_threshold);
        if fuse_coincident(&mut a, &mut t) && !a.is_empty() {
            let cache = FidelityCache::build(data, &t)?;
            a = lasso_step(&cache, kappa, &a, config)?;
            prune(&mut a, &mut t, config.prune_threshold);
        }
        objective_trace.push(penalized_objective(data, &a, &t, kappa));
        support_trace.push(a.len());
    }
    Ok(SolveResult {
        estimate: measure(dim, &a, &t)?,
        iterations,
        converged,
        dual_sup,
        objective_trace,
        support_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::CorrelationEvaluator;
    use crate::kernels::{FidelitySpec, MixingKernelSpec};
    use crate::measures::{seeded_rng, Sample};
    use rand::Rng;

    fn ev(tau: f64) -> CorrelationEvaluator {
        CorrelationEvaluator::new(MixingKernelSpec::gaussian(1), FidelitySpec::new(tau, 1).unwrap()).unwrap()
    }

    fn figure1() -> DiscreteMeasure {
        DiscreteMeasure::from_1d(&[(0.36, -13.1), (0.52, -0.9), (0.12, 14.0)]).unwrap()
    }

    #[test]
    fn spike_of_single_point_sample_is_at_the_point() {
        let data = DataTerm::from_sample(&ev(0.25), &Sample::from_1d(&[0.0])).unwrap();
        let cfg = SfwConfig::with_kappa(0.1);
        let (t, v) = find_spike(&data, &DiscreteMeasure::empty(1), &cfg).unwrap();
        assert!(t[0].abs() < 1e-9, "{t:?}");
        assert!((v - data.evaluator().xi(&[0.0]).unwrap() / 0.1).abs() < 1e-9);
    }

    #[test]
    fn spike_of_symmetric_sample_is_symmetric() {
        let data = DataTerm::from_sample(&ev(0.25), &Sample::from_1d(&[-2.0, 2.0])).unwrap();
        let cfg = SfwConfig::with_kappa(0.1);
        let mu = DiscreteMeasure::empty(1);
        let (t, v) = find_spike(&data, &mu, &cfg).unwrap();
        let mirrored = eta_of(&data, &mu, 0.1, &[-t[0]]);
        assert!((v - mirrored).abs() < 1e-9);
    }

    fn eta_of(data: &DataTerm, mu: &DiscreteMeasure, kappa: f64, t: &[f64]) -> f64 {
        crate::fidelity::eta(data, mu, kappa, t).unwrap()
    }

    #[test]
    fn spike_against_half_truth_lands_on_a_true_location() {
        let truth = figure1();
        let data = DataTerm::from_population(&ev(0.1), &truth).unwrap();
        let half = DiscreteMeasure::from_1d(&[(0.18, -13.1), (0.26, -0.9), (0.06, 14.0)]).unwrap();
        let cfg = SfwConfig::with_kappa(0.01);
        let (t, _) = find_spike(&data, &half, &cfg).unwrap();
        // dense-grid oracle
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=40_000 {
            let x = -20.0 + 40.0 * i as f64 / 40_000.0;
            let v = eta_of(&data, &half, 0.01, &[x]).abs();
            if v > best.1 {
                best = (x, v);
            }
        }
        assert!((t[0] - best.0).abs() < 1e-3, "{} vs {}", t[0], best.0);
        assert!(truth.locations().iter().any(|s| (s[0] - t[0]).abs() < 1e-3));
    }

    #[test]
    fn lasso_single_atom_soft_threshold() {
        let data = DataTerm::from_sample(&ev(0.25), &Sample::from_1d(&[0.1, 0.3, -0.2])).unwrap();
        let cache = FidelityCache::build(&data, &[vec![0.05]]).unwrap();
        let kappa = 0.2;
        let a = lasso_step(&cache, kappa, &[0.0], &SfwConfig::with_kappa(kappa)).unwrap();
        let b = cache.b()[0];
        let q = cache.q()[(0, 0)];
        let closed = (-b).signum() * ((b.abs() - kappa).max(0.0)) / q;
        assert!((a[0] - closed).abs() < 1e-8);
        // grid-search oracle
        let obj = |x: f64| cache.objective(&[x]).unwrap() + kappa * x.abs();
        let best = (0..=20_000).map(|i| -2.0 + 4.0 * i as f64 / 20_000.0).fold(f64::INFINITY, |m, x| m.min(obj(x)));
        assert!(obj(a[0]) <= best + 1e-15);
    }

    #[test]
    fn lasso_returns_zero_when_kappa_dominates() {
        let data = DataTerm::from_sample(&ev(0.25), &Sample::from_1d(&[0.0, 5.0])).unwrap();
        let cache = FidelityCache::build(&data, &[vec![0.0], vec![5.0]]).unwrap();
        let kappa = cache.b().iter().map(|b| b.abs()).fold(0.0, f64::max);
        let a = lasso_step(&cache, kappa, &[0.0, 0.0], &SfwConfig::with_kappa(kappa)).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn lasso_descends_from_random_starts() {
        let mut rng = seeded_rng(21);
        let pts: Vec<f64> = (0..30).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let data = DataTerm::from_sample(&ev(0.25), &Sample::from_1d(&pts)).unwrap();
        for _ in 0..20 {
            let support: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.gen_range(-5.0..5.0)]).collect();
            let cache = FidelityCache::build(&data, &support).unwrap();
            let start: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let kappa = 0.05;
            let a = lasso_step(&cache, kappa, &start, &SfwConfig::with_kappa(kappa)).unwrap();
            assert!(lasso_value(&cache, kappa, &a) <= lasso_value(&cache, kappa, &start) + 1e-15);
        }
    }

    #[test]
    fn slide_keeps_truth_fixed() {
        let truth = figure1();
        let data = DataTerm::from_population(&ev(0.1), &truth).unwrap();
        let cfg = SfwConfig::with_kappa(1e-9);
        let (_, t) = slide_step(&data, &truth.weights(), &truth.locations(), 1e-9, &cfg).unwrap();
        for (a, b) in t.iter().zip(truth.locations()) {
            assert!((a[0] - b[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn slide_recovers_misplaced_atom() {
        let truth = figure1();
        let data = DataTerm::from_population(&ev(0.1), &truth).unwrap();
        let cfg = SfwConfig::with_kappa(1e-6);
        let mut locs = truth.locations();
        locs[0][0] += 0.3;
        let (a, t) = slide_step(&data, &truth.weights(), &locs, 1e-6, &cfg).unwrap();
        assert!((t[0][0] + 13.1).abs() < 1e-3, "{t:?}");
        assert!(penalized_objective(&data, &a, &t, 1e-6) <= penalized_objective(&data, &truth.weights(), &locs, 1e-6));
    }

    #[test]
    fn slide_never_increases_objective() {
        let mut rng = seeded_rng(5);
        let truth = figure1();
        let sample = crate::measures::sample_mixture(&truth, &MixingKernelSpec::gaussian(1), 100, 3).unwrap();
        let data = DataTerm::from_sample(&ev(0.1), &sample).unwrap();
        for _ in 0..20 {
            let n = rng.gen_range(1..4);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.8)).collect();
            let t: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-15.0..15.0)]).collect();
            let kappa = 0.01;
            let before = penalized_objective(&data, &a, &t, kappa);
            let (a2, t2) = slide_step(&data, &a, &t, kappa, &SfwConfig::with_kappa(kappa)).unwrap();
            assert!(penalized_objective(&data, &a2, &t2, kappa) <= before + 1e-12 * before.abs());
        }
    }

    #[test]
    fn smooth_derivatives_match_finite_differences() {
        let truth = figure1();
        let sample = crate::measures::sample_mixture(&truth, &MixingKernelSpec::gaussian(1), 50, 9).unwrap();
        let data = DataTerm::from_sample(&ev(0.25), &sample).unwrap();
        let a = vec![0.3, -0.4, 0.2];
        let t = vec![vec![-12.0], vec![-1.5], vec![13.0]];
        let kappa = 0.01;
        let (g, h) = smooth_derivatives(&data, &a, &t, kappa);
        let pack = |a: &[f64], t: &[Vec<f64>]| -> Vec<f64> { a.iter().cloned().chain(t.iter().map(|x| x[0])).collect() };
        let unpack = |x: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) { (x[..3].to_vec(), x[3..].iter().map(|v| vec![*v]).collect()) };
        let x0 = pack(&a, &t);
        let step = 1e-5;
        for k in 0..6 {
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp[k] += step;
            xm[k] -= step;
            let (ap, tp) = unpack(&xp);
            let (am, tm) = unpack(&xm);
            let fd = (penalized_objective(&data, &ap, &tp, kappa) - penalized_objective(&data, &am, &tm, kappa)) / (2.0 * step);
            assert!((fd - g[k]).abs() < 1e-7, "grad {k}: {fd} vs {}", g[k]);
            let (gp, _) = smooth_derivatives(&data, &ap, &tp, kappa);
            let (gm, _) = smooth_derivatives(&data, &am, &tm, kappa);
            for r in 0..6 {
                let fd = (gp[r] - gm[r]) / (2.0 * step);
                assert!((fd - h[(r, k)]).abs() < 1e-6, "hess ({r},{k}): {fd} vs {}", h[(r, k)]);
            }
        }
    }

    #[test]
    fn single_spike_statistical_run() {
        let truth = DiscreteMeasure::from_1d(&[(1.0, 0.0)]).unwrap();
        let g = MixingKernelSpec::gaussian(1);
        let sample = crate::measures::sample_mixture(&truth, &g, 500, 17).unwrap();
        let m = 1.0;
        let fid = FidelitySpec::from_bandwidth(m, 1).unwrap();
        let data = DataTerm::from_sample(&CorrelationEvaluator::new(g, fid).unwrap(), &sample).unwrap();
        let kappa = 0.05;
        let res = solve_sfw(&data, &SfwConfig::with_kappa(kappa)).unwrap();
        assert!(res.converged);
        let est = res.estimate.merge_close(0.5).unwrap();
        assert_eq!(est.len(), 1, "{est:?}");
        assert!(est.atoms()[0].location[0].abs() < 0.2);
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }
}
