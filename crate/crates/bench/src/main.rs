use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nmfsep::bss_eval::compute_scores;
use nmfsep::datagen::OverlapClass;
use nmfsep::wav::{wav_read, wav_write, WavFormat};
use nmfsep_bench::dataset::{cases_for, generate_cases, save_cases};
use nmfsep_bench::report::{aligned_table, write_reports, SUMMARY_MD};
use nmfsep_bench::{init_study, run_grid, separate_blind, MethodId, Mode, ProtocolConfig};

#[derive(Parser)]
#[command(name = "nmfsep", version, about = "NMF-family source separation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Protocol file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated method list, e.g. NMF-Wiener,HRNMF.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodId>>,
    /// Comma-separated modes (blind, oracle).
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    /// Dataset manifest (or its directory) to use instead of generating data.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic mixtures and a manifest.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// Mixtures per overlap class.
        #[arg(long)]
        n_cases: Option<usize>,
        /// Comma-separated overlap classes (none, forced).
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<OverlapClass>>,
    },
    /// Separate one mixture blindly and write one WAV per source.
    Separate {
        #[command(flatten)]
        common: Common,
        /// Mono mixture WAV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "NMF-Wiener")]
        method: MethodId,
        /// Number of sources.
        #[arg(long, default_value_t = 2)]
        sources: usize,
    },
    /// Run the full method × case × mode grid.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Score WAV estimates against WAV references.
    Eval {
        /// Reference source files.
        #[arg(long, num_args = 1.., required = true)]
        references: Vec<PathBuf>,
        /// Estimate files, as many as references.
        #[arg(long, num_args = 1.., required = true)]
        estimates: Vec<PathBuf>,
        /// Distortion filter length in taps.
        #[arg(long, default_value_t = nmfsep::bss_eval::DEFAULT_FILTER_LEN)]
        filter_len: usize,
    },
    /// Compare HRNMF initializations in oracle mode.
    InitStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ProtocolConfig> {
    let mut config = match &common.config {
        Some(path) => ProtocolConfig::load(path)?,
        None => ProtocolConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply_grid(config: &mut ProtocolConfig, grid: GridArgs) {
    if let Some(m) = grid.methods {
        config.methods = m;
    }
    if let Some(m) = grid.modes {
        config.modes = m;
    }
    if grid.dataset.is_some() {
        config.dataset = grid.dataset;
    }
    if let Some(w) = grid.workers {
        config.workers = w;
    }
}

fn read_signals(paths: &[PathBuf]) -> anyhow::Result<(Vec<Vec<f64>>, u32)> {
    let mut rate = None;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let (s, sr) = wav_read::<f64>(p).with_context(|| format!("reading {}", p.display()))?;
        if *rate.get_or_insert(sr) != sr {
            bail!("{} has sample rate {sr}, expected {}", p.display(), rate.unwrap_or(sr));
        }
        out.push(s);
    }
    Ok((out, rate.unwrap_or(0)))
}

fn write_config(config: &ProtocolConfig, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Datagen { common, n_cases, classes } => {
            let mut config = load_config(&common)?;
            if let Some(n) = n_cases {
                config.n_cases = n;
            }
            if let Some(c) = classes {
                config.classes = c;
            }
            let cases = generate_cases(&config)?;
            let manifest = save_cases(&cases, &common.out_dir)?;
            println!("wrote {} cases, manifest {}", cases.len(), manifest.display());
        }
        Command::Separate { common, input, method, sources } => {
            let config = load_config(&common)?;
            config.validate()?;
            let (mixture, sr) = wav_read::<f64>(&input).with_context(|| format!("reading {}", input.display()))?;
            let sep = separate_blind(&mixture, f64::from(sr), sources, method, &config, config.seed)?;
            std::fs::create_dir_all(&common.out_dir)?;
            for (j, s) in sep.estimates.signals().iter().enumerate() {
                let path = common.out_dir.join(format!("source{j}.wav"));
                wav_write(&path, s, sr, WavFormat::Float32)?;
                println!("{}", path.display());
            }
        }
        Command::Bench { common, grid } => {
            let mut config = load_config(&common)?;
            apply_grid(&mut config, grid);
            config.validate()?;
            let cases = cases_for(&config)?;
            log::info!("{} cases, {} methods, {} modes", cases.len(), config.methods.len(), config.modes.len());
            let records = run_grid(&cases, &config)?;
            write_reports(&records, &common.out_dir)?;
            write_config(&config, &common.out_dir)?;
            print!("{}", std::fs::read_to_string(common.out_dir.join(SUMMARY_MD))?);
        }
        Command::Eval { references, estimates, filter_len } => {
            if references.len() != estimates.len() {
                bail!("{} references but {} estimates", references.len(), estimates.len());
            }
            let (refs, sr_r) = read_signals(&references)?;
            let (ests, sr_e) = read_signals(&estimates)?;
            if sr_r != sr_e {
                bail!("references and estimates have different sample rates");
            }
            let scores = compute_scores(&ests, &refs, filter_len)?;
            let rows: Vec<Vec<String>> = (0..refs.len())
                .map(|j| {
                    vec![
                        references[j].display().to_string(),
                        estimates[scores.permutation[j]].display().to_string(),
                        format!("{:.2}", scores.sdr[j]),
                        format!("{:.2}", scores.sir[j]),
                        format!("{:.2}", scores.sar[j]),
                    ]
                })
                .collect();
            print!("{}", aligned_table(&["reference", "estimate", "SDR", "SIR", "SAR"], &rows));
        }
        Command::InitStudy { common, dataset, workers } => {
            let mut config = load_config(&common)?;
            if dataset.is_some() {
                config.dataset = dataset;
            }
            if let Some(w) = workers {
                config.workers = w;
            }
            config.modes = vec![Mode::Oracle];
            config.validate()?;
            let cases = cases_for(&config)?;
            let study = init_study(&cases, &config)?;
            study.write(&common.out_dir)?;
            print!("{}", study.to_text());
        }
    }
    Ok(())
}
