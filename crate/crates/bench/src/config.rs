use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use nmfsep::datagen::{DatagenConfig, OverlapClass};
use nmfsep::phase::PhaseInit;
use nmfsep::tf::Truncation;
use serde::{Deserialize, Serialize};

/// The six compared separation methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "NMF-Wiener")]
    NmfWiener,
    #[serde(rename = "NMF-GL")]
    NmfGl,
    #[serde(rename = "NMF-LR")]
    NmfLr,
    #[serde(rename = "CNMF")]
    Cnmf,
    #[serde(rename = "CNMF-LR")]
    CnmfLr,
    #[serde(rename = "HRNMF")]
    Hrnmf,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::NmfWiener,
        MethodId::NmfGl,
        MethodId::NmfLr,
        MethodId::Cnmf,
        MethodId::CnmfLr,
        MethodId::Hrnmf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::NmfWiener => "NMF-Wiener",
            MethodId::NmfGl => "NMF-GL",
            MethodId::NmfLr => "NMF-LR",
            MethodId::Cnmf => "CNMF",
            MethodId::CnmfLr => "CNMF-LR",
            MethodId::Hrnmf => "HRNMF",
        }
    }

    /// Methods built on a magnitude NMF with a separate phase step.
    pub fn is_nmf_family(self) -> bool {
        matches!(self, MethodId::NmfWiener | MethodId::NmfGl | MethodId::NmfLr)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&m| m == self).expect("listed") as u64
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let wanted = s.trim().to_ascii_lowercase();
        MethodId::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == wanted)
            .with_context(|| format!("unknown method {s:?}; expected one of NMF-Wiener, NMF-GL, NMF-LR, CNMF, CNMF-LR, HRNMF"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Models estimated from the mixture alone.
    Blind,
    /// Parameters learned on the isolated sources.
    Oracle,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Blind, Mode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Blind => "blind",
            Mode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blind" => Ok(Mode::Blind),
            "oracle" => Ok(Mode::Oracle),
            other => bail!("unknown mode {other:?}; expected blind or oracle"),
        }
    }
}

/// Initialization of the HRNMF variance factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    IsNmf,
    KlNmf,
}

impl InitKind {
    pub const ALL: [InitKind; 3] = [InitKind::Random, InitKind::IsNmf, InitKind::KlNmf];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::Random => "random",
            InitKind::IsNmf => "ISNMF",
            InitKind::KlNmf => "KLNMF",
        }
    }
}

/// Full benchmark protocol. Every field has a default, so a config file only
/// needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Master seed for data generation and model initialization.
    pub seed: u64,
    /// Generated mixtures per overlap class.
    pub n_cases: usize,
    pub classes: Vec<OverlapClass>,
    pub methods: Vec<MethodId>,
    pub modes: Vec<Mode>,
    /// Dataset manifest to load instead of generating data.
    pub dataset: Option<PathBuf>,
    pub datagen: DatagenConfig,
    /// Window length of NMF-Wiener, NMF-GL and NMF-LR.
    pub nmf_window: usize,
    /// Window length of CNMF, CNMF-LR and HRNMF.
    pub complex_window: usize,
    /// Per-method window lengths that break the default pairing.
    pub window_overrides: BTreeMap<MethodId, usize>,
    pub nmf_iterations: usize,
    pub cnmf_iterations: usize,
    pub phase_iterations: usize,
    pub hrnmf_iterations: usize,
    /// EM steps per isolated source in oracle mode.
    pub hrnmf_oracle_iterations: usize,
    pub hrnmf_init: InitKind,
    /// NMF sweeps used to initialize HRNMF.
    pub init_sweeps: usize,
    /// Re-estimate HRNMF activations on the mixture in oracle mode.
    pub oracle_refit_h: bool,
    /// Consistency weight of CNMF-LR.
    pub cnmf_lr_weight: f64,
    pub phase_init: PhaseInit,
    /// Le Roux kernel truncation; `None` uses the plan default.
    pub lr_truncation: Option<Truncation>,
    /// BSS Eval filter taps.
    pub filter_len: usize,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Independent initializations per case.
    pub repeats_per_case: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 2014,
            n_cases: 30,
            classes: OverlapClass::ALL.to_vec(),
            methods: MethodId::ALL.to_vec(),
            modes: Mode::ALL.to_vec(),
            dataset: None,
            datagen: DatagenConfig::default(),
            nmf_window: 1024,
            complex_window: 512,
            window_overrides: BTreeMap::new(),
            nmf_iterations: 30,
            cnmf_iterations: 30,
            phase_iterations: 50,
            hrnmf_iterations: 30,
            hrnmf_oracle_iterations: 10,
            hrnmf_init: InitKind::KlNmf,
            init_sweeps: 30,
            oracle_refit_h: false,
            cnmf_lr_weight: 1.0,
            phase_init: PhaseInit::WienerMagnitude,
            lr_truncation: None,
            filter_len: nmfsep::bss_eval::DEFAULT_FILTER_LEN,
            workers: 0,
            repeats_per_case: 1,
        }
    }
}

impl ProtocolConfig {
    /// Reads a TOML (`.toml`) or JSON (anything else) file.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(config)
    }

    pub fn default_window(method: MethodId, nmf_window: usize, complex_window: usize) -> usize {
        if method.is_nmf_family() {
            nmf_window
        } else {
            complex_window
        }
    }

    pub fn window_for(&self, method: MethodId) -> usize {
        self.window_overrides
            .get(&method)
            .copied()
            .unwrap_or_else(|| Self::default_window(method, self.nmf_window, self.complex_window))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.methods.is_empty() || self.modes.is_empty() {
            bail!("at least one method and one mode are required");
        }
        if self.n_cases == 0 || self.classes.is_empty() {
            bail!("the dataset must contain at least one case");
        }
        if self.nmf_iterations == 0
            || self.cnmf_iterations == 0
            || self.hrnmf_iterations == 0
            || self.hrnmf_oracle_iterations == 0
            || self.init_sweeps == 0
        {
            bail!("iteration counts must be at least 1");
        }
        if self.filter_len == 0 || self.repeats_per_case == 0 {
            bail!("filter_len and repeats_per_case must be at least 1");
        }
        if !(self.cnmf_lr_weight > 0.0) || !self.cnmf_lr_weight.is_finite() {
            bail!("cnmf_lr_weight must be positive");
        }
        for m in &self.methods {
            let w = self.window_for(*m);
            if w < 4 || w % 4 != 0 {
                bail!("{m}: window length {w} must be a positive multiple of 4");
            }
        }
        Ok(())
    }

    /// Warns about windows that differ from the parameter-count pairing
    /// (1024 for the NMF family, 512 for the complex models).
    pub fn fairness_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &m in &self.methods {
            let expected = Self::default_window(m, 1024, 512);
            let actual = self.window_for(m);
            if actual != expected {
                out.push(format!("{m} uses a {actual}-sample window instead of {expected}"));
            }
        }
        out
    }

    /// Per-run seed derived from the case seed, method and repeat index.
    pub fn run_seed(&self, case_seed: u64, method: MethodId, repeat: usize) -> u64 {
        splitmix(self.seed ^ splitmix(case_seed ^ splitmix(method.index() * 0x9e37 + repeat as u64)))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
