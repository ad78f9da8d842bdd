//! Command implementations. Each returns the files it wrote and whether every
//! solve converged; file output goes through [`OutputDir`].

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, KappaSpec, RatesConfig};
use crate::certificate::{admissible_bandwidth, audit_certificate, build_certificate, evaluate_on_grid, AuditReport, Certificate, GridSpec};
use crate::cpgd::{solve_cpgd, CpgdConfig, CpgdInit, CpgdResult};
use crate::error::{Error, Result};
use crate::fidelity::{CorrelationEvaluator, DataTerm};
use crate::kernels::KernelConfig;
use crate::measures::{sample_mixture, DiscreteMeasure, Sample};
use crate::metrics::{support_error, SupportError};
use crate::sfw::{solve_sfw, SolveResult};

pub const FIGURE1_SEED: u64 = 0;

/// Output directory guarded by a per-command manifest carrying the config hash.
pub struct OutputDir {
    root: PathBuf,
    command: &'static str,
    hash: String,
    files: Vec<String>,
}

#[derive(Serialize, serde::Deserialize)]
struct Manifest {
    command: String,
    config_hash: String,
    created_unix: u64,
    version: String,
    files: Vec<String>,
}

impl OutputDir {
    /// Refuses to reuse a directory whose manifest for `command` records a different hash unless `force`.
    pub fn open(root: &Path, command: &'static str, hash: String, force: bool) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let manifest = root.join(format!("manifest_{command}.json"));
        if manifest.exists() && !force {
            let text = std::fs::read_to_string(&manifest)?;
            let old: Manifest = serde_json::from_str(&text)?;
            if old.config_hash != hash {
                return Err(Error::Config(format!(
                    "{} holds {command} output for a different configuration; pass --force to overwrite",
                    root.display()
                )));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            command,
            hash,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn create(&mut self, name: String) -> Result<BufWriter<File>> {
        let file = File::create(self.root.join(&name))?;
        self.files.push(name);
        Ok(BufWriter::new(file))
    }

    fn write_json<T: Serialize>(&mut self, name: String, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        use std::io::Write;
        writeln!(w)?;
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = Manifest {
            command: self.command.to_string(),
            config_hash: self.hash.clone(),
            created_unix,
            version: env!("CARGO_PKG_VERSION").to_string(),
            files: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.root.join(format!("manifest_{}.json", self.command)), text + "\n")?;
        Ok(self.files.iter().map(|f| self.root.join(f)).collect())
    }
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// False when some solve stopped without meeting its tolerance.
    pub converged: bool,
}

fn sample_name(seed: u64) -> String {
    format!("sample_seed{seed}.csv")
}

/// The sample for `seed`, read from `samples_from` when configured, simulated otherwise.
pub fn sample_for(cfg: &ExperimentConfig, seed: u64, n: usize) -> Result<Sample> {
    match &cfg.samples_from {
        Some(dir) => Sample::read_csv_path(&dir.join(sample_name(seed))),
        None => sample_mixture(&cfg.truth, &cfg.mixing_spec()?, n, seed),
    }
}

/// The data term for one replicate: population moments or the seeded sample.
pub fn data_for(cfg: &ExperimentConfig, seed: u64, n: usize) -> Result<DataTerm> {
    let ev = CorrelationEvaluator::new(cfg.mixing_spec()?, cfg.fidelity_spec()?)?;
    if cfg.exact_moments {
        DataTerm::from_population(&ev, &cfg.truth)
    } else {
        DataTerm::from_sample(&ev, &sample_for(cfg, seed, n)?)
    }
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let mixing = cfg.mixing_spec()?;
    let samples: Vec<Sample> = cfg
        .seeds
        .par_iter()
        .map(|&seed| sample_mixture(&cfg.truth, &mixing, cfg.n, seed))
        .collect::<Result<_>>()?;
    for (seed, sample) in cfg.seeds.iter().zip(&samples) {
        let w = out.create(sample_name(*seed))?;
        sample.write_csv(w)?;
    }
    Ok(Outcome {
        files: Vec::new(),
        converged: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SfwRun {
    pub seed: u64,
    pub n: usize,
    pub kappa: f64,
    pub exact_moments: bool,
    pub result: SolveResult,
    pub support_error: SupportError,
}

pub fn run_sfw(cfg: &ExperimentConfig, seed: u64, n: usize) -> Result<SfwRun> {
    let data = data_for(cfg, seed, n)?;
    let kappa = cfg.kappa_for(n)?;
    let mut sfw = cfg.sfw.clone();
    sfw.kappa = kappa;
    let result = solve_sfw(&data, &sfw)?;
    let support_error = support_error(&result.estimate, &cfg.truth)?;
    Ok(SfwRun {
        seed,
        n,
        kappa,
        exact_moments: cfg.exact_moments,
        result,
        support_error,
    })
}

pub fn cmd_sfw(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let runs: Vec<SfwRun> = cfg.seeds.par_iter().map(|&s| run_sfw(cfg, s, cfg.n)).collect::<Result<_>>()?;
    let mut converged = true;
    for run in &runs {
        converged &= run.result.converged;
        out.write_json(format!("sfw_seed{}.json", run.seed), run)?;
        let w = out.create(format!("sfw_seed{}_estimate.csv", run.seed))?;
        run.result.estimate.write_csv(w)?;
        let w = out.create(format!("sfw_seed{}_trace.csv", run.seed))?;
        run.result.write_trace_csv(w)?;
    }
    Ok(Outcome {
        files: Vec::new(),
        converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CpgdRun {
    pub seed: u64,
    pub kappa: f64,
    pub estimate: DiscreteMeasure,
    pub final_state: crate::cpgd::ParticleState,
    pub support_error: SupportError,
}

fn run_cpgd(cfg: &ExperimentConfig, seed: u64, config: &CpgdConfig) -> Result<(CpgdRun, CpgdResult)> {
    let data = data_for(cfg, seed, cfg.n)?;
    let kappa = cfg.kappa_for(cfg.n)?;
    let config = CpgdConfig {
        kappa,
        ..config.clone()
    };
    let res = solve_cpgd(&data, &config)?;
    let run = CpgdRun {
        seed,
        kappa,
        estimate: res.estimate.clone(),
        final_state: res.final_state.clone(),
        support_error: support_error(&res.estimate, &cfg.truth)?,
    };
    Ok((run, res))
}

pub fn cmd_cpgd(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let runs: Vec<(CpgdRun, CpgdResult)> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_cpgd(cfg, s, &cfg.cpgd))
        .collect::<Result<_>>()?;
    for (run, res) in &runs {
        out.write_json(format!("cpgd_seed{}.json", run.seed), run)?;
        let w = out.create(format!("cpgd_seed{}_trajectory.csv", run.seed))?;
        res.trajectory.write_csv(w)?;
    }
    Ok(Outcome {
        files: Vec::new(),
        converged: true,
    })
}

/// Certificate and audit for the configured support and bandwidth.
pub fn certify(cfg: &ExperimentConfig) -> Result<(Certificate, GridSpec, AuditReport)> {
    let c = &cfg.certificate;
    let m = match c.m {
        Some(m) => m,
        None => cfg.bandwidth()?.1,
    };
    let support = c.support.clone().unwrap_or_else(|| cfg.truth.locations());
    let cert = build_certificate(&support, m, c.kind)?;
    let grid = match &c.grid {
        Some(g) => g.clone(),
        None => {
            let ppd = if cert.dim == 1 { 10_001 } else { 201 };
            GridSpec::around(&support, 20.0 / m, ppd)?
        }
    };
    let mut report = audit_certificate(&cert, &grid, c.epsilon)?;
    let delta = cert
        .support
        .iter()
        .enumerate()
        .flat_map(|(i, a)| cert.support[i + 1..].iter().map(move |b| crate::measures::distance(a, b)))
        .fold(f64::INFINITY, f64::min);
    report.admissible_m = admissible_bandwidth(cert.support.len(), cert.dim, delta, c.admissibility_constant);
    report.below_admissible = m < report.admissible_m;
    Ok((cert, grid, report))
}

pub fn cmd_certify(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let (cert, grid, report) = certify(cfg)?;
    if report.below_admissible {
        eprintln!(
            "warning: m = {} is below the admissible bandwidth {:.4}",
            report.m, report.admissible_m
        );
    }
    out.write_json("certificate.json".into(), &cert)?;
    out.write_json("audit.json".into(), &report)?;
    let w = out.create("certificate_grid.csv".into())?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header: Vec<String> = (1..=cert.dim).map(|j| format!("x{j}")).collect();
    header.push("value".into());
    w.write_record(&header)?;
    for (p, v) in evaluate_on_grid(&cert, &grid)? {
        let mut row: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
        row.push(format!("{v:e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(Outcome {
        files: Vec::new(),
        converged: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub seed: u64,
    pub kappa: f64,
    pub k_hat: usize,
    pub hausdorff: f64,
    pub matched_weight_l1: f64,
    pub dual_sup: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatesReport {
    pub n_grid: Vec<usize>,
    pub median_errors: Vec<f64>,
    /// OLS slope of log median matched-weight error against log n.
    pub slope: f64,
    /// Number of consecutive n where the median error increased.
    pub inversions: usize,
    pub rows: Vec<RateRow>,
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

pub fn run_rates(cfg: &ExperimentConfig) -> Result<RatesReport> {
    let rates: &RatesConfig = cfg
        .rates
        .as_ref()
        .ok_or_else(|| Error::Config("the rates command needs a \"rates\" section".into()))?;
    let mut grid = rates.n_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 3 || grid[0] == 0 {
        return Err(Error::InsufficientGrid(format!("need at least 3 distinct positive n, got {:?}", rates.n_grid)));
    }
    if rates.replicates < 10 {
        return Err(Error::InsufficientGrid(format!("need at least 10 replicates, got {}", rates.replicates)));
    }
    let jobs: Vec<(usize, u64)> = grid
        .iter()
        .flat_map(|&n| (0..rates.replicates as u64).map(move |r| (n, rates.seed_offset + r)))
        .collect();
    let rows: Vec<RateRow> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let run = run_sfw(cfg, seed, n)?;
            Ok(RateRow {
                n,
                seed,
                kappa: run.kappa,
                k_hat: run.support_error.k_hat,
                hausdorff: run.support_error.hausdorff,
                matched_weight_l1: run.support_error.matched_weight_l1,
                dual_sup: run.result.dual_sup,
                converged: run.result.converged,
            })
        })
        .collect::<Result<_>>()?;
    let median_errors: Vec<f64> = grid
        .iter()
        .map(|&n| {
            let mut e: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.matched_weight_l1).collect();
            median(&mut e)
        })
        .collect();
    let logs_n: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let logs_e: Vec<f64> = median_errors.iter().map(|e| e.ln()).collect();
    let inversions = median_errors.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(RatesReport {
        slope: ols_slope(&logs_n, &logs_e),
        n_grid: grid,
        median_errors,
        inversions,
        rows,
    })
}

#[derive(Serialize)]
struct RatesSummary<'a> {
    n_grid: &'a [usize],
    median_errors: &'a [f64],
    slope: f64,
    inversions: usize,
    kappa: &'a KappaSpec,
    kappa_factor: f64,
}

pub fn cmd_rates(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let report = run_rates(cfg)?;
    let w = out.create("rates_ledger.csv".into())?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    out.write_json(
        "rates_summary.json".into(),
        &RatesSummary {
            n_grid: &report.n_grid,
            median_errors: &report.median_errors,
            slope: report.slope,
            inversions: report.inversions,
            kappa: &cfg.kappa,
            kappa_factor: cfg.kappa_factor,
        },
    )?;
    Ok(Outcome {
        files: Vec::new(),
        converged: report.rows.iter().all(|r| r.converged),
    })
}

/// Three Gaussian-mixed spikes at (-13.1, -0.9, 14.0) with weights (0.36, 0.52, 0.12),
/// `n = 200`, `kappa = 0.01`, `tau = 0.1`, 20 particles, 2500 steps, `alpha = 0.05`, `beta = 1`.
pub fn figure1_config(seed: u64, steps: usize, particles: usize) -> ExperimentConfig {
    let truth = DiscreteMeasure::from_1d(&[(0.36, -13.1), (0.52, -0.9), (0.12, 14.0)]).expect("valid truth");
    ExperimentConfig {
        truth,
        mixing: KernelConfig {
            family: "gaussian".into(),
            dim: 1,
            params: Default::default(),
        },
        tau: Some(0.1),
        m: None,
        kappa: KappaSpec::Value(0.01),
        kappa_factor: 1.0,
        n: 200,
        seeds: vec![seed],
        exact_moments: false,
        quad_points_per_dim: 64,
        samples_from: None,
        sfw: Default::default(),
        cpgd: CpgdConfig {
            kappa: 0.01,
            alpha: 0.05,
            beta: 1.0,
            num_particles: particles,
            num_steps: steps,
            init: CpgdInit::Uniform {
                low: None,
                high: None,
                seed,
                initial_r: 1.0,
            },
            record_every: 1,
        },
        certificate: Default::default(),
        rates: None,
        output_dir: None,
    }
}

pub fn run_figure1(seed: u64, steps: usize, particles: usize) -> Result<(Sample, CpgdRun, CpgdResult)> {
    let cfg = figure1_config(seed, steps, particles);
    let sample = sample_for(&cfg, seed, cfg.n)?;
    let (run, res) = run_cpgd(&cfg, seed, &cfg.cpgd)?;
    Ok((sample, run, res))
}

pub fn cmd_figure1(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let seed = cfg.seeds[0];
    let (sample, run, res) = run_figure1(seed, cfg.cpgd.num_steps, cfg.cpgd.num_particles)?;
    let w = out.create("figure1_sample.csv".into())?;
    sample.write_csv(w)?;
    let w = out.create("figure1_trajectory.csv".into())?;
    res.trajectory.write_csv(w)?;
    out.write_json("figure1_final.json".into(), &run)?;
    Ok(Outcome {
        files: Vec::new(),
        converged: true,
    })
}
