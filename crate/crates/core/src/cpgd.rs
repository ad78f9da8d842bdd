//! Conic particle gradient descent.
//!
//! The measure is carried by `N` particles as `(1/N) sum_i r_i^2 delta_{t_i}`. Each
//! step evaluates `eta` of the current measure once at every particle, then applies
//! the multiplicative update `r_i <- r_i exp(2 alpha kappa (eta(t_i) - 1))` and the
//! position update `t_i <- t_i + beta kappa grad eta(t_i)`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fidelity::DataTerm;
use crate::measures::{seeded_rng, DiscreteMeasure};

/// Particles with mass at or below this are dropped from the extracted measure.
pub const EXTRACTION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub r: f64,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CpgdInit {
    /// Positions uniform in a box (the data extent when absent), every `r_i = initial_r`.
    Uniform {
        #[serde(default)]
        low: Option<Vec<f64>>,
        #[serde(default)]
        high: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        initial_r: f64,
    },
    Explicit { particles: Vec<Particle> },
}

fn one() -> f64 {
    1.0
}

impl Default for CpgdInit {
    fn default() -> Self {
        CpgdInit::Uniform {
            low: None,
            high: None,
            seed: 0,
            initial_r: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpgdConfig {
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub num_particles: usize,
    pub num_steps: usize,
    pub init: CpgdInit,
    /// Keep every `record_every`-th step in the trajectory (the last step is always kept).
    pub record_every: usize,
}

impl Default for CpgdConfig {
    fn default() -> Self {
        Self {
            kappa: 0.01,
            alpha: 0.05,
            beta: 1.0,
            num_particles: 20,
            num_steps: 2500,
            init: CpgdInit::default(),
            record_every: 1,
        }
    }
}

impl CpgdConfig {
    /// Step sizes may be zero to freeze masses or positions.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("step sizes must be finite and nonnegative".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        match &self.init {
            CpgdInit::Uniform { initial_r, .. } => {
                if self.num_particles == 0 {
                    return Err(Error::InvalidParameter("num_particles must be at least 1".into()));
                }
                if !(*initial_r >= 0.0) {
                    return Err(Error::InvalidParameter("initial_r must be nonnegative".into()));
                }
            }
            CpgdInit::Explicit { particles } => {
                if particles.is_empty() {
                    return Err(Error::Empty("explicit particle list"));
                }
                if particles.iter().any(|p| !(p.r >= 0.0)) {
                    return Err(Error::InvalidParameter("particle r must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub r: Vec<f64>,
    pub t: Vec<Vec<f64>>,
    pub step_index: usize,
}

impl ParticleState {
    pub fn new(r: Vec<f64>, t: Vec<Vec<f64>>) -> Result<Self> {
        if r.len() != t.len() {
            return Err(Error::LengthMismatch {
                expected: r.len(),
                got: t.len(),
            });
        }
        if r.is_empty() {
            return Err(Error::Empty("particle state"));
        }
        if r.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidParameter("particle r must be nonnegative".into()));
        }
        let dim = t[0].len();
        for x in &t {
            check_dim(dim, x.len())?;
        }
        Ok(Self { r, t, step_index: 0 })
    }

    /// Draws the initial particles described by `config.init`.
    pub fn initial(data: &DataTerm, config: &CpgdConfig) -> Result<Self> {
        config.validate()?;
        let dim = data.dim();
        match &config.init {
            CpgdInit::Explicit { particles } => {
                for p in particles {
                    check_dim(dim, p.t.len())?;
                }
                Self::new(particles.iter().map(|p| p.r).collect(), particles.iter().map(|p| p.t.clone()).collect())
            }
            CpgdInit::Uniform {
                low,
                high,
                seed,
                initial_r,
            } => {
                let ext = data.extent();
                let low = low.clone().unwrap_or_else(|| ext.iter().map(|e| e.0).collect());
                let high = high.clone().unwrap_or_else(|| ext.iter().map(|e| e.1).collect());
                check_dim(dim, low.len())?;
                check_dim(dim, high.len())?;
                if low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidParameter("initial box must satisfy low <= high".into()));
                }
                let mut rng = seeded_rng(*seed);
                let t = (0..config.num_particles)
                    .map(|_| {
                        low.iter()
                            .zip(&high)
                            .map(|(&l, &h)| if l == h { l } else { rng.gen_range(l..h) })
                            .collect()
                    })
                    .collect();
                Self::new(vec![*initial_r; config.num_particles], t)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.t[0].len()
    }

    /// `a_i = r_i^2 / N`.
    pub fn masses(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.r.iter().map(|r| r * r / n).collect()
    }

    /// Every particle, including massless ones.
    pub fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::from_parts(self.dim(), &self.masses(), &self.t).expect("particle state is consistent")
    }

    /// The represented measure with particles of mass at most [`EXTRACTION_THRESHOLD`] removed.
    pub fn extract(&self) -> DiscreteMeasure {
        self.measure().pruned(EXTRACTION_THRESHOLD)
    }
}

/// One synchronous update of every particle.
pub fn cpgd_step(data: &DataTerm, state: &ParticleState, config: &CpgdConfig) -> Result<ParticleState> {
    config.validate()?;
    check_dim(data.dim(), state.dim())?;
    Ok(step_unchecked(data, state, config))
}

fn step_unchecked(data: &DataTerm, state: &ParticleState, config: &CpgdConfig) -> ParticleState {
    let mu = state.measure();
    let kappa = config.kappa;
    let updated: Vec<(f64, Vec<f64>)> = state
        .r
        .par_iter()
        .zip(state.t.par_iter())
        .map(|(&r, t)| {
            let jet = data.residual_jet(&mu, t, 1);
            let eta = jet.value / kappa;
            let r_new = r * (2.0 * config.alpha * kappa * (eta - 1.0)).exp();
            let t_new = t.iter().zip(&jet.grad).map(|(x, g)| x + config.beta * g).collect();
            (r_new, t_new)
        })
        .collect();
    let (r, t) = updated.into_iter().unzip();
    ParticleState {
        r,
        t,
        step_index: state.step_index + 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<ParticleState>,
}

impl Trajectory {
    /// Columns `step, particle_id, mass, x1..xd`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let dim = self.frames.first().map_or(0, |f| f.dim());
        let mut header = vec!["step".to_string(), "particle_id".into(), "mass".into()];
        header.extend((1..=dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for frame in &self.frames {
            for (i, (a, t)) in frame.masses().iter().zip(&frame.t).enumerate() {
                let mut row = vec![frame.step_index.to_string(), i.to_string(), format!("{a:e}")];
                row.extend(t.iter().map(|x| format!("{x:e}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpgdResult {
    pub estimate: DiscreteMeasure,
    pub final_state: ParticleState,
    pub trajectory: Trajectory,
}

/// Runs `num_steps` updates from the configured initialization.
pub fn solve_cpgd(data: &DataTerm, config: &CpgdConfig) -> Result<CpgdResult> {
    let state = ParticleState::initial(data, config)?;
    solve_cpgd_from(data, state, config)
}

pub fn solve_cpgd_from(data: &DataTerm, mut state: ParticleState, config: &CpgdConfig) -> Result<CpgdResult> {
    config.validate()?;
    check_dim(data.dim(), state.dim())?;
    let scale = data.evaluator().mixing().map_or(1.0, |m| m.noise_scale());
    let ext = data.extent();
    let lag = (0..data.dim())
        .map(|j| {
            let lo = state.t.iter().map(|t| t[j]).fold(ext[j].0, f64::min);
            let hi = state.t.iter().map(|t| t[j]).fold(ext[j].1, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
        + 6.0 * scale
        + 2.0;
    let data = data.covering(lag);
    let start = state.step_index;
    let mut frames = vec![state.clone()];
    for k in 1..=config.num_steps {
        state = step_unchecked(&data, &state, config);
        if k % config.record_every == 0 || k == config.num_steps {
            frames.push(state.clone());
        }
    }
    debug_assert_eq!(state.step_index, start + config.num_steps);
    Ok(CpgdResult {
        estimate: state.extract(),
        final_state: state,
        trajectory: Trajectory { frames },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::CorrelationEvaluator;
    use crate::kernels::{FidelitySpec, MixingKernelSpec};
    use crate::measures::{sample_mixture, Sample};

    fn ev() -> CorrelationEvaluator {
        CorrelationEvaluator::new(MixingKernelSpec::gaussian(1), FidelitySpec::new(0.1, 1).unwrap()).unwrap()
    }

    fn sample_data() -> DataTerm {
        let truth = DiscreteMeasure::from_1d(&[(0.36, -13.1), (0.52, -0.9), (0.12, 14.0)]).unwrap();
        let s = sample_mixture(&truth, &MixingKernelSpec::gaussian(1), 60, 4).unwrap();
        DataTerm::from_sample(&ev(), &s).unwrap()
    }

    #[test]
    fn zero_mass_particle_stays_massless() {
        let data = sample_data();
        let state = ParticleState::new(vec![0.0, 1.0], vec![vec![0.5], vec![-1.0]]).unwrap();
        let cfg = CpgdConfig::default();
        let next = cpgd_step(&data, &state, &cfg).unwrap();
        assert_eq!(next.r[0], 0.0);
        assert_ne!(next.t[0], state.t[0]);
        assert_eq!(next.step_index, 1);
    }

    #[test]
    fn frozen_step_sizes() {
        let data = sample_data();
        let state = ParticleState::new(vec![0.4, 1.3], vec![vec![0.5], vec![-1.0]]).unwrap();
        let cfg = CpgdConfig {
            alpha: 0.0,
            ..CpgdConfig::default()
        };
        let next = cpgd_step(&data, &state, &cfg).unwrap();
        assert_eq!(next.r, state.r);
        let cfg = CpgdConfig {
            beta: 0.0,
            ..CpgdConfig::default()
        };
        let next = cpgd_step(&data, &state, &cfg).unwrap();
        assert_eq!(next.t, state.t);
    }

    #[test]
    fn unit_eta_leaves_mass_unchanged() {
        // a single sample and a single particle: choose kappa so eta(t) = 1 at the particle
        let data = DataTerm::from_sample(&ev(), &Sample::from_1d(&[0.0])).unwrap();
        let state = ParticleState::new(vec![0.5], vec![vec![0.3]]).unwrap();
        let residual = data.residual_jet(&state.measure(), &[0.3], 0).value;
        let cfg = CpgdConfig {
            kappa: residual,
            ..CpgdConfig::default()
        };
        let next = cpgd_step(&data, &state, &cfg).unwrap();
        assert!((next.r[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn particle_at_truth_does_not_drift() {
        let truth = DiscreteMeasure::from_1d(&[(1.0, 2.0)]).unwrap();
        let data = DataTerm::from_population(&ev(), &truth).unwrap();
        let state = ParticleState::new(vec![1.0], vec![vec![2.0]]).unwrap();
        let next = cpgd_step(&data, &state, &CpgdConfig::default()).unwrap();
        assert!((next.t[0][0] - 2.0).abs() <= 1e-8);
    }

    #[test]
    fn zero_steps_echo_initial_measure() {
        let data = sample_data();
        let cfg = CpgdConfig {
            num_steps: 0,
            ..CpgdConfig::default()
        };
        let res = solve_cpgd(&data, &cfg).unwrap();
        let init = ParticleState::initial(&data, &cfg).unwrap();
        assert_eq!(res.final_state, init);
        assert_eq!(res.trajectory.frames.len(), 1);
        assert!((res.estimate.total_mass() - 1.0).abs() < 1e-12);
        let ext = data.extent()[0];
        assert!(init.t.iter().all(|t| t[0] >= ext.0 && t[0] <= ext.1));
    }

    #[test]
    fn trajectory_thinning_and_csv() {
        let data = sample_data();
        let cfg = CpgdConfig {
            num_particles: 3,
            num_steps: 7,
            record_every: 3,
            ..CpgdConfig::default()
        };
        let res = solve_cpgd(&data, &cfg).unwrap();
        let steps: Vec<usize> = res.trajectory.frames.iter().map(|f| f.step_index).collect();
        assert_eq!(steps, vec![0, 3, 6, 7]);
        let mut buf = Vec::new();
        res.trajectory.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,particle_id,mass,x1\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 3);
        assert!(res.final_state.r.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = sample_data();
        let cfg = CpgdConfig {
            num_steps: 20,
            ..CpgdConfig::default()
        };
        let a = solve_cpgd(&data, &cfg).unwrap();
        let b = solve_cpgd(&data, &cfg).unwrap();
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn rejects_bad_config() {
        let data = sample_data();
        for cfg in [
            CpgdConfig {
                kappa: 0.0,
                ..CpgdConfig::default()
            },
            CpgdConfig {
                record_every: 0,
                ..CpgdConfig::default()
            },
            CpgdConfig {
                num_particles: 0,
                ..CpgdConfig::default()
            },
        ] {
            assert!(solve_cpgd(&data, &cfg).is_err());
        }
    }
}
