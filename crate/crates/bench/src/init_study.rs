use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use nmfsep::bss_eval::BssEvaluator;
use nmfsep::datagen::MixtureCase;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitKind, MethodId, ProtocolConfig};
use crate::report::aligned_table;
use crate::run::{separate_oracle_with, worker_pool};
use crate::stats::FiveNumber;

pub const INIT_STUDY_CSV: &str = "init_study.csv";
pub const INIT_STUDY_MD: &str = "init_study.md";

/// One initialization strategy: median scores over all cases and sources,
/// and mean seconds per case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitRow {
    pub init: InitKind,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub seconds: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitStudy {
    pub rows: Vec<InitRow>,
}

impl InitStudy {
    pub fn row(&self, init: InitKind) -> Option<&InitRow> {
        self.rows.iter().find(|r| r.init == init)
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.init.name().to_string(),
                    format!("{:.2}", r.sdr),
                    format!("{:.2}", r.sir),
                    format!("{:.2}", r.sar),
                    format!("{:.3}", r.seconds),
                ]
            })
            .collect();
        aligned_table(&["init", "SDR", "SIR", "SAR", "time (s)"], &rows)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(INIT_STUDY_CSV);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["init", "SDR", "SIR", "SAR", "time"])?;
        for r in &self.rows {
            w.write_record([
                r.init.name().to_string(),
                format!("{:.6}", r.sdr),
                format!("{:.6}", r.sir),
                format!("{:.6}", r.sar),
                format!("{:.4}", r.seconds),
            ])?;
        }
        w.flush()?;
        let text = format!("# HRNMF initialization study (oracle mode, EM)\n\nMedian dB over all sources; time is mean seconds per mixture.\n\n{}", self.to_text());
        std::fs::write(dir.join(INIT_STUDY_MD), text)?;
        Ok(())
    }
}

/// Oracle HRNMF on every case with random, IS-NMF and KL-NMF
/// initialization of the variance factors.
pub fn init_study(cases: &[MixtureCase<f64>], config: &ProtocolConfig) -> anyhow::Result<InitStudy> {
    config.validate()?;
    let pool = worker_pool(config.workers)?;
    let per_case = pool.install(|| {
        cases
            .par_iter()
            .map(|case| -> anyhow::Result<Vec<(InitKind, Option<[Vec<f64>; 3]>, f64)>> {
                let evaluator = BssEvaluator::new(&case.sources, config.filter_len)?;
                let seed = config.run_seed(case.seed, MethodId::Hrnmf, 0);
                let mut out = Vec::new();
                for init in InitKind::ALL {
                    let start = Instant::now();
                    let sep = separate_oracle_with(&case.mixture, &case.sources, case.sample_rate, MethodId::Hrnmf, config, init, seed);
                    let seconds = start.elapsed().as_secs_f64();
                    let scores = match sep {
                        Ok(sep) => match evaluator.scores(sep.estimates.signals()) {
                            Ok(s) => Some([s.sdr, s.sir, s.sar]),
                            Err(e) => {
                                log::warn!("{} {}: scoring failed: {e}", case.id, init.name());
                                None
                            }
                        },
                        Err(e) => {
                            log::warn!("{} {}: {e:#}", case.id, init.name());
                            None
                        }
                    };
                    out.push((init, scores, seconds));
                }
                Ok(out)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let rows = InitKind::ALL
        .into_iter()
        .map(|init| {
            let mut metrics: [Vec<f64>; 3] = Default::default();
            let mut seconds = Vec::new();
            let mut failures = 0;
            for (kind, scores, secs) in per_case.iter().flatten() {
                if *kind != init {
                    continue;
                }
                seconds.push(*secs);
                match scores {
                    Some(s) => {
                        for (acc, v) in metrics.iter_mut().zip(s) {
                            acc.extend(v.iter().copied().filter(|x| x.is_finite()));
                        }
                    }
                    None => failures += 1,
                }
            }
            let median = |v: &[f64]| FiveNumber::of(v).map_or(f64::NAN, |s| s.median);
            InitRow {
                init,
                sdr: median(&metrics[0]),
                sir: median(&metrics[1]),
                sar: median(&metrics[2]),
                seconds: seconds.iter().sum::<f64>() / seconds.len().max(1) as f64,
                failures,
            }
        })
        .collect();
    Ok(InitStudy { rows })
}
