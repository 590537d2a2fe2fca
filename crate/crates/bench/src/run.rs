use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use nmfsep::bss_eval::BssEvaluator;
use nmfsep::cnmf::{cnmf_separate, fit_cnmf, fit_cnmf_from, CnmfModel, CnmfOptions};
use nmfsep::datagen::{MixtureCase, OverlapClass};
use nmfsep::factorization::{fit_nmf, Divergence, FactorPair};
use nmfsep::hrnmf::{
    fit_hrnmf, fit_hrnmf_from, hrnmf_separate, stack_models, EmOptions, HrnmfInit, HrnmfModel,
};
use nmfsep::phase::{
    griffin_lim_separate, leroux_separate, phase_targets, wiener_separate, Grouping, SourceEstimateSet,
};
use nmfsep::tf::{stft, unit_phasor, LeRouxKernel, Spectrogram, StftPlan, Truncation};
use nmfsep::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitKind, MethodId, Mode, ProtocolConfig};

/// Scores of one successful run, indexed by reference source.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunScores {
    pub sdr: Vec<f64>,
    pub sir: Vec<f64>,
    pub sar: Vec<f64>,
    /// `permutation[j]` is the estimate matched to reference `j`.
    pub permutation: Vec<usize>,
}

impl RunScores {
    pub fn metric(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Sdr => &self.sdr,
            Metric::Sir => &self.sir,
            Metric::Sar => &self.sar,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    #[serde(rename = "SDR")]
    Sdr,
    #[serde(rename = "SIR")]
    Sir,
    #[serde(rename = "SAR")]
    Sar,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Sdr, Metric::Sir, Metric::Sar];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sdr => "SDR",
            Metric::Sir => "SIR",
            Metric::Sar => "SAR",
        }
    }
}

/// Result of one (method, case, mode, repeat) job.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub method: MethodId,
    pub case: String,
    pub class: OverlapClass,
    pub mode: Mode,
    pub repeat: usize,
    /// Scores, or the error that stopped the run.
    pub outcome: Result<RunScores, String>,
    /// Wall time of fitting and separation (scoring excluded).
    pub seconds: f64,
    /// Objective values of the fit run on the mixture: divergence for NMF,
    /// the CNMF criterion, the HRNMF log-likelihood, or the magnitude
    /// distance of the phase iterations.
    pub trajectory: Vec<f64>,
}

impl RunRecord {
    fn sort_key(&self) -> (OverlapClass, &str, MethodId, Mode, usize) {
        (self.class, &self.case, self.method, self.mode, self.repeat)
    }
}

/// Separated signals and the objective trajectory of a pipeline.
#[derive(Clone, Debug)]
pub struct Separation {
    pub estimates: SourceEstimateSet<f64>,
    pub trajectory: Vec<f64>,
}

fn plan_for(config: &ProtocolConfig, method: MethodId, sample_rate: f64) -> anyhow::Result<Arc<StftPlan<f64>>> {
    let window = config.window_for(method);
    Ok(StftPlan::hann_75(window, sample_rate)?)
}

fn kernel_for(config: &ProtocolConfig, plan: &Arc<StftPlan<f64>>) -> anyhow::Result<LeRouxKernel<f64>> {
    let truncation = config.lr_truncation.unwrap_or_else(|| Truncation::default_for(plan));
    Ok(LeRouxKernel::new(plan.clone(), truncation)?)
}

fn hrnmf_init(config: &ProtocolConfig, kind: InitKind) -> HrnmfInit<f64> {
    match kind {
        InitKind::Random => HrnmfInit::Random,
        InitKind::IsNmf => HrnmfInit::IsNmf { sweeps: config.init_sweeps },
        InitKind::KlNmf => HrnmfInit::KlNmf { sweeps: config.init_sweeps },
    }
}

/// Blind separation of `mixture` into `k` sources (one component each).
pub fn separate_blind(
    mixture: &[f64],
    sample_rate: f64,
    k: usize,
    method: MethodId,
    config: &ProtocolConfig,
    seed: u64,
) -> anyhow::Result<Separation> {
    let plan = plan_for(config, method, sample_rate)?;
    let x = stft(mixture, &plan)?;
    let grouping = Grouping::one_to_one(k);
    match method {
        MethodId::NmfWiener | MethodId::NmfGl | MethodId::NmfLr => {
            let fit = fit_nmf(&x.magnitude(), k, Divergence::KullbackLeibler, config.nmf_iterations, seed)?;
            let mut sep = nmf_phase_step(&x, &fit.factors, &grouping, method, config)?;
            let mut trajectory = fit.trajectory;
            trajectory.append(&mut sep.trajectory);
            sep.trajectory = trajectory;
            Ok(sep)
        }
        MethodId::Cnmf | MethodId::CnmfLr => {
            let gamma = if method == MethodId::CnmfLr { config.cnmf_lr_weight } else { 0.0 };
            let fit = fit_cnmf(&x, k, gamma, config.cnmf_iterations, seed)?;
            Ok(Separation {
                estimates: cnmf_separate(&x, &fit.model, &grouping)?,
                trajectory: fit.trajectory,
            })
        }
        MethodId::Hrnmf => {
            let init = hrnmf_init(config, config.hrnmf_init);
            let fit = fit_hrnmf(&x, k, config.hrnmf_iterations, &init, seed)?;
            Ok(Separation {
                estimates: hrnmf_separate(&x, &fit.model, &grouping)?,
                trajectory: fit.trajectory,
            })
        }
    }
}

/// Turns magnitude factors into source estimates with the phase step of
/// the NMF-family method.
fn nmf_phase_step(
    x: &Spectrogram<f64>,
    factors: &FactorPair<f64>,
    grouping: &Grouping,
    method: MethodId,
    config: &ProtocolConfig,
) -> anyhow::Result<Separation> {
    if method == MethodId::NmfWiener {
        return Ok(Separation {
            estimates: wiener_separate(x, factors, grouping)?,
            trajectory: Vec::new(),
        });
    }
    let targets = phase_targets(x, factors, grouping, config.phase_init)?;
    let kernel = if method == MethodId::NmfLr { Some(kernel_for(config, x.plan())?) } else { None };
    let mut specs = Vec::with_capacity(targets.len());
    let mut trajectory = Vec::new();
    for target in &targets {
        let recon = match &kernel {
            Some(kernel) => leroux_separate(&target.magnitude, &target.init, config.phase_iterations, kernel)?,
            None => griffin_lim_separate(&target.magnitude, &target.init, config.phase_iterations)?,
        };
        trajectory.extend(recon.distances.iter().copied());
        specs.push(recon.spectrogram);
    }
    Ok(Separation {
        estimates: SourceEstimateSet::from_spectrograms(x.clone(), specs)?,
        trajectory,
    })
}

/// Oracle separation: parameters learned on each isolated source, then the
/// assembled model separates the mixture.
pub fn separate_oracle(
    mixture: &[f64],
    sources: &[Vec<f64>],
    sample_rate: f64,
    method: MethodId,
    config: &ProtocolConfig,
    seed: u64,
) -> anyhow::Result<Separation> {
    separate_oracle_with(mixture, sources, sample_rate, method, config, config.hrnmf_init, seed)
}

/// [`separate_oracle`] with an explicit HRNMF initialization.
pub fn separate_oracle_with(
    mixture: &[f64],
    sources: &[Vec<f64>],
    sample_rate: f64,
    method: MethodId,
    config: &ProtocolConfig,
    init: InitKind,
    seed: u64,
) -> anyhow::Result<Separation> {
    if sources.is_empty() {
        bail!("oracle mode needs the isolated sources");
    }
    let plan = plan_for(config, method, sample_rate)?;
    let x = stft(mixture, &plan)?;
    let source_specs = sources
        .iter()
        .map(|s| stft(s, &plan))
        .collect::<nmfsep::Result<Vec<_>>>()
        .context("source analysis")?;
    let k = sources.len();
    let grouping = Grouping::one_to_one(k);
    let source_seed = |i: usize| seed.wrapping_add(0x51_7cc1_b727_220a_u64.wrapping_mul(i as u64 + 1));
    match method {
        MethodId::NmfWiener | MethodId::NmfGl | MethodId::NmfLr => {
            let parts = source_specs
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    Ok(fit_nmf(&s.magnitude(), 1, Divergence::KullbackLeibler, config.nmf_iterations, source_seed(i))?.factors)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let factors = FactorPair::concat(&parts)?;
            nmf_phase_step(&x, &factors, &grouping, method, config)
        }
        MethodId::Cnmf | MethodId::CnmfLr => {
            let gamma = if method == MethodId::CnmfLr { config.cnmf_lr_weight } else { 0.0 };
            let parts = source_specs
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let fit = fit_cnmf(s, 1, gamma, config.cnmf_iterations, source_seed(i))?;
                    Ok(FactorPair::new(fit.model.w, fit.model.h)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let factors = FactorPair::concat(&parts)?;
            let one = Complex::new(1.0, 0.0);
            let phase = x.data().mapv(|c| unit_phasor(c, one));
            let model = CnmfModel {
                w: factors.w,
                h: factors.h,
                phases: vec![phase; k],
                gamma,
                sparsity: 0.0,
            };
            // Magnitudes stay fixed; only the phases adapt to the mixture.
            let options = CnmfOptions { update_w: false, update_h: false };
            let fit = fit_cnmf_from(&x, model, config.cnmf_iterations, options)?;
            Ok(Separation {
                estimates: cnmf_separate(&x, &fit.model, &grouping)?,
                trajectory: fit.trajectory,
            })
        }
        MethodId::Hrnmf => {
            let init = hrnmf_init(config, init);
            let models = source_specs
                .iter()
                .enumerate()
                .map(|(i, s)| Ok(fit_hrnmf(s, 1, config.hrnmf_oracle_iterations, &init, source_seed(i))?.model))
                .collect::<anyhow::Result<Vec<HrnmfModel<f64>>>>()?;
            let mut model = stack_models(&models)?;
            let mut trajectory = Vec::new();
            if config.oracle_refit_h {
                let options = EmOptions { ar: false, noise: false, w: false, h: true };
                let fit = fit_hrnmf_from(&x, model, config.hrnmf_oracle_iterations, options)?;
                model = fit.model;
                trajectory = fit.trajectory;
            }
            Ok(Separation {
                estimates: hrnmf_separate(&x, &model, &grouping)?,
                trajectory,
            })
        }
    }
}

fn finite_or_err(scores: RunScores) -> Result<RunScores, String> {
    let all = scores.sdr.iter().chain(&scores.sir).chain(&scores.sar);
    if all.clone().all(|v| v.is_finite()) {
        Ok(scores)
    } else {
        Err("non-finite score".to_string())
    }
}

/// Runs one job and scores it; failures are captured in the record.
pub fn run_case(
    case: &MixtureCase<f64>,
    evaluator: &BssEvaluator<f64>,
    method: MethodId,
    mode: Mode,
    repeat: usize,
    config: &ProtocolConfig,
) -> RunRecord {
    let seed = config.run_seed(case.seed, method, repeat);
    let start = Instant::now();
    let separation = match mode {
        Mode::Blind => separate_blind(&case.mixture, case.sample_rate, case.n_sources(), method, config, seed),
        Mode::Oracle => separate_oracle(&case.mixture, &case.sources, case.sample_rate, method, config, seed),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (outcome, trajectory) = match separation {
        Ok(sep) => {
            let scored = evaluator
                .scores(sep.estimates.signals())
                .map_err(|e| format!("scoring failed: {e}"))
                .and_then(|s| {
                    finite_or_err(RunScores {
                        sdr: s.sdr,
                        sir: s.sir,
                        sar: s.sar,
                        permutation: s.permutation,
                    })
                });
            (scored, sep.trajectory)
        }
        Err(e) => (Err(format!("{e:#}")), Vec::new()),
    };
    if let Err(e) = &outcome {
        log::warn!("{method} {mode} on {}: {e}", case.id);
    }
    RunRecord {
        method,
        case: case.id.clone(),
        class: case.overlap_class,
        mode,
        repeat,
        outcome,
        seconds,
        trajectory,
    }
}

/// Builds a worker pool honouring `workers` (0 = all cores).
pub fn worker_pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Runs every configured (method, mode, repeat) on every case. Records are
/// returned in a canonical order independent of scheduling.
pub fn run_grid(cases: &[MixtureCase<f64>], config: &ProtocolConfig) -> anyhow::Result<Vec<RunRecord>> {
    config.validate()?;
    for w in config.fairness_warnings() {
        log::warn!("{w}");
    }
    let pool = worker_pool(config.workers)?;
    let per_case = pool.install(|| {
        cases
            .par_iter()
            .map(|case| -> anyhow::Result<Vec<RunRecord>> {
                let evaluator = BssEvaluator::new(&case.sources, config.filter_len)
                    .with_context(|| format!("reference setup for {}", case.id))?;
                let mut out = Vec::new();
                for &method in &config.methods {
                    for &mode in &config.modes {
                        for repeat in 0..config.repeats_per_case {
                            out.push(run_case(case, &evaluator, method, mode, repeat, config));
                        }
                    }
                }
                log::info!("finished {}", case.id);
                Ok(out)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let mut records: Vec<RunRecord> = per_case.into_iter().flatten().collect();
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(records)
}
