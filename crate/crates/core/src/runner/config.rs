//! Scenario configuration files and named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::FluctuationMode;
use crate::hilbert::BasisKind;
use crate::models::{PxpParams, SpinChainParams};
use crate::spectra::SpectralWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Probe-bath spin chain swept from integrable to chaotic by the coupling.
    IntegrableTransition,
    /// The same chain with on-site disorder.
    Mbl,
    /// Constrained PXP chain with a field on one probe site.
    PxpScars,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::IntegrableTransition => "integrable_transition",
            Scenario::Mbl => "mbl",
            Scenario::PxpScars => "pxp_scars",
        }
    }

    pub fn is_pxp(self) -> bool {
        self == Scenario::PxpScars
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    JxSb,
    JzSb,
    W,
    N,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub variable: ScanVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    Levels,
    Dos,
    Entropy,
    Survival,
    Qfi,
    Fluctuations,
    Fdt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceHamiltonian {
    /// Probe and bath without their coupling.
    #[default]
    Uncoupled,
    Full,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    /// `|↑_x⟩ ⊗ |ψ_B⟩` with `|ψ_B⟩` the bath eigenstate closest to the given
    /// fraction of the bath spectrum.
    ProbeUpXBathEigenstate {
        #[serde(default = "half")]
        bath_energy_fraction: f64,
    },
    /// `|↑_z⟩ ⊗ |ψ_B⟩`, an eigenstate of the uncoupled Hamiltonian.
    ProbeUpZBathEigenstate {
        #[serde(default = "half")]
        bath_energy_fraction: f64,
    },
    /// Ascending-energy eigenstate of the reference Hamiltonian.
    EigenstateIndex {
        index: usize,
        #[serde(default)]
        reference: ReferenceHamiltonian,
    },
    NeelZ2,
    NeelZ2Prime,
    /// Uniform random complex combination of the `count` eigenstates with the
    /// smallest Néel overlap. The realization seed is added to `seed`.
    RandomEigenSuperposition {
        count: usize,
        seed: u64,
    },
    /// A single computational-basis configuration, site 1 leftmost.
    ProductConfig {
        ket: String,
    },
    /// Every spin down, `|0…0⟩`; valid for any `N`.
    AllDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    pub kind: GridKind,
    pub t_min: f64,
    /// Defaults to `horizon_factor` Heisenberg times `2π D(E0)`.
    pub t_max: Option<f64>,
    pub points: usize,
    pub horizon_factor: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self {
            kind: GridKind::Linear,
            t_min: 0.0,
            t_max: None,
            points: 400,
            horizon_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub window: SpectralWindow,
    pub histogram_bins: usize,
    /// Sites kept for the entanglement entropy.
    pub kept_sites: Vec<usize>,
    /// Site of the `σ^z` observable; the probe site when absent.
    pub observable_site: Option<usize>,
    pub fluctuation_mode: FluctuationMode,
    pub fluctuation_samples: usize,
    /// Averaging horizon in Heisenberg times.
    pub fluctuation_horizon_factor: f64,
    /// Half-width of the uncoupled energy shell for `ΔO²`, as a fraction of
    /// the uncoupled spectral width.
    pub shell_fraction: f64,
    pub chi: f64,
    pub dos_bandwidth: Option<f64>,
    pub dos_points: usize,
    /// Points of the logarithmic grid used for decay-rate fits.
    pub decay_points: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            window: SpectralWindow::default(),
            histogram_bins: 40,
            kept_sites: vec![1],
            observable_site: None,
            fluctuation_mode: FluctuationMode::TemporalVariance,
            fluctuation_samples: crate::evolve::DEFAULT_FLUCTUATION_SAMPLES,
            fluctuation_horizon_factor: 20.0,
            shell_fraction: 0.02,
            chi: 1.0,
            dos_bandwidth: None,
            dos_points: 101,
            decay_points: 600,
        }
    }
}

pub const DEFAULT_MAX_DIM: usize = 50_000;

fn default_realizations() -> usize {
    30
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_max_dim() -> usize {
    DEFAULT_MAX_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub diagnostics: Vec<Diagnostic>,
    pub scan: ScanSpec,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub spin_chain: SpinChainParams,
    #[serde(default)]
    pub pxp: PxpParams,
    /// Place the PXP probe at the central site for every scanned `N`.
    #[serde(default)]
    pub central_probe: bool,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
}

/// Model parameters after a scan value has been applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelInstance {
    SpinChain(SpinChainParams),
    Pxp(PxpParams),
}

impl ModelInstance {
    pub fn n_sites(&self) -> usize {
        match self {
            ModelInstance::SpinChain(p) => p.n,
            ModelInstance::Pxp(p) => p.n,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelInstance::SpinChain(p) => 1usize << p.n.min(63),
            ModelInstance::Pxp(p) => fibonacci_dim(p.n),
        }
    }

    pub fn basis_kind(&self) -> BasisKind {
        match self {
            ModelInstance::SpinChain(_) => BasisKind::Full,
            ModelInstance::Pxp(_) => BasisKind::RydbergConstrained,
        }
    }
}

/// Number of blockade-respecting configurations of an open chain.
pub fn fibonacci_dim(n: usize) -> usize {
    let (mut a, mut b) = (1usize, 2usize);
    for _ in 0..n {
        (a, b) = (b, a.saturating_add(b));
    }
    a
}

fn as_count(value: f64, what: &str) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value < 1e9 {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!(
            "{what} scan value {value} is not a non-negative integer"
        )))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model parameters with the scan value applied.
    pub fn instance(&self, scan_value: f64) -> Result<ModelInstance> {
        let var = self.scan.variable;
        if self.scenario.is_pxp() {
            let mut p = self.pxp.clone();
            match var {
                ScanVariable::N => p.n = as_count(scan_value, "N")?,
                ScanVariable::B => p.b = scan_value,
                other => {
                    return Err(Error::Config(format!(
                        "{other:?} cannot be scanned in the PXP scenario"
                    )))
                }
            }
            if self.central_probe {
                p.probe_site = PxpParams::central_site(p.n);
            }
            p.validate()?;
            Ok(ModelInstance::Pxp(p))
        } else {
            let mut p = self.spin_chain.clone();
            match var {
                ScanVariable::JxSb => p.jx_sb = scan_value,
                ScanVariable::JzSb => p.jz_sb = scan_value,
                ScanVariable::W => p.w = scan_value,
                ScanVariable::N => p.n = as_count(scan_value, "N")?,
                ScanVariable::B => p.b = scan_value,
            }
            p.validate()?;
            Ok(ModelInstance::SpinChain(p))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be at least 1".into()));
        }
        if self.scan.values.is_empty() {
            return Err(Error::Config("scan values are empty".into()));
        }
        if self.diagnostics.is_empty() {
            return Err(Error::Config("no diagnostics requested".into()));
        }
        if self.time.points < 2 {
            return Err(Error::Config("time grid needs at least two points".into()));
        }
        if self.analysis.chi <= 0.0 {
            return Err(Error::Config("chi must be positive".into()));
        }
        match &self.initial_state {
            InitialStateSpec::RandomEigenSuperposition { count: 0, .. } => {
                return Err(Error::Config("random superposition needs count ≥ 1".into()))
            }
            InitialStateSpec::ProbeUpXBathEigenstate {
                bath_energy_fraction: f,
            }
            | InitialStateSpec::ProbeUpZBathEigenstate {
                bath_energy_fraction: f,
            } if !(0.0..=1.0).contains(f) => {
                return Err(Error::Config(format!(
                    "bath energy fraction {f} outside [0, 1]"
                )))
            }
            _ => {}
        }
        for &value in &self.scan.values {
            let inst = self.instance(value)?;
            let dim = inst.dim();
            if dim > self.max_dim {
                return Err(Error::Config(format!(
                    "dense dimension {dim} (N = {}) exceeds the cap of {}; raise max_dim to override",
                    inst.n_sites(),
                    self.max_dim
                )));
            }
        }
        Ok(())
    }
}

pub const PRESETS: &[&str] = &[
    "fig1a", "fig1b", "fig1c", "fig1d", "fig1e", "fig1f", "fig2a", "fig2b", "fig2c", "fig3a",
    "fig3b", "fig3c", "fig4",
];

fn base(
    scenario: Scenario,
    diagnostics: Vec<Diagnostic>,
    scan: ScanSpec,
    state: InitialStateSpec,
) -> ScenarioConfig {
    ScenarioConfig {
        scenario,
        diagnostics,
        scan,
        n_realizations: 1,
        base_seed: 0,
        initial_state: state,
        spin_chain: SpinChainParams::default(),
        pxp: PxpParams::default(),
        central_probe: false,
        time: TimeSpec::default(),
        analysis: AnalysisSpec::default(),
        output: default_output(),
        max_dim: DEFAULT_MAX_DIM,
    }
}

fn chain_fig1a() -> SpinChainParams {
    SpinChainParams {
        n: 13,
        b: 0.01,
        bx_bath: 0.3,
        jx: 1.0,
        jz_sb: 0.2,
        ..Default::default()
    }
}

fn mid_bath_x() -> InitialStateSpec {
    InitialStateSpec::ProbeUpXBathEigenstate {
        bath_energy_fraction: 0.5,
    }
}

fn mid_bath_z() -> InitialStateSpec {
    InitialStateSpec::ProbeUpZBathEigenstate {
        bath_energy_fraction: 0.5,
    }
}

/// Named parameter sets for each figure-style run.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    use Diagnostic::*;
    use ScanVariable as V;
    let scan = |variable, values: &[f64]| ScanSpec {
        variable,
        values: values.to_vec(),
    };
    let cfg = match name {
        "fig1a" => ScenarioConfig {
            spin_chain: chain_fig1a(),
            ..base(
                Scenario::IntegrableTransition,
                vec![Levels],
                scan(V::JxSb, &[0.001, 0.01, 0.05, 0.1, 0.4]),
                mid_bath_x(),
            )
        },
        "fig1b" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 10,
                jx_sb: 0.4,
                ..chain_fig1a()
            },
            n_realizations: 30,
            ..base(
                Scenario::Mbl,
                vec![Levels],
                scan(
                    V::W,
                    &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0],
                ),
                mid_bath_x(),
            )
        },
        "fig1c" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 11,
                jx_sb: 0.4,
                ..chain_fig1a()
            },
            n_realizations: 30,
            time: TimeSpec {
                kind: GridKind::Log,
                t_min: 1e-2,
                t_max: Some(1e4),
                points: 200,
                ..TimeSpec::default()
            },
            ..base(
                Scenario::Mbl,
                vec![Entropy],
                scan(V::W, &[0.5, 1.0, 2.0, 4.0, 6.0]),
                InitialStateSpec::EigenstateIndex {
                    index: 1000,
                    reference: ReferenceHamiltonian::Uncoupled,
                },
            )
        },
        "fig1d" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 11,
                jx_sb: 0.4,
                ..chain_fig1a()
            },
            n_realizations: 30,
            ..base(
                Scenario::Mbl,
                vec![Dos],
                scan(V::W, &[0.0, 1.0, 2.0, 4.0, 6.0]),
                mid_bath_x(),
            )
        },
        "fig1e" => ScenarioConfig {
            pxp: PxpParams {
                n: 16,
                b: 0.4,
                probe_site: 1,
                ..PxpParams::default()
            },
            analysis: AnalysisSpec {
                window: SpectralWindow::default(),
                ..AnalysisSpec::default()
            },
            ..base(
                Scenario::PxpScars,
                vec![Levels],
                scan(V::B, &[0.4]),
                InitialStateSpec::NeelZ2,
            )
        },
        "fig1f" => ScenarioConfig {
            pxp: PxpParams {
                n: 16,
                b: 0.4,
                probe_site: 1,
                ..PxpParams::default()
            },
            time: TimeSpec {
                t_max: Some(30.0),
                points: 601,
                ..TimeSpec::default()
            },
            ..base(
                Scenario::PxpScars,
                vec![Survival],
                scan(V::B, &[0.4]),
                InitialStateSpec::NeelZ2,
            )
        },
        "fig2a" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 11,
                ..chain_fig1a()
            },
            ..base(
                Scenario::IntegrableTransition,
                vec![Qfi],
                scan(V::JxSb, &[0.001, 0.01, 0.05, 0.1, 0.4]),
                mid_bath_x(),
            )
        },
        "fig2b" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 13,
                jx_sb: 0.4,
                ..chain_fig1a()
            },
            n_realizations: 30,
            ..base(
                Scenario::Mbl,
                vec![Qfi],
                scan(V::W, &[0.5, 1.0, 2.0, 3.0, 5.0]),
                InitialStateSpec::EigenstateIndex {
                    index: 5500,
                    reference: ReferenceHamiltonian::Uncoupled,
                },
            )
        },
        "fig2c" => ScenarioConfig {
            time: TimeSpec {
                horizon_factor: 1.5,
                ..TimeSpec::default()
            },
            pxp: PxpParams {
                n: 16,
                b: 0.4,
                probe_site: 1,
                ..PxpParams::default()
            },
            ..base(
                Scenario::PxpScars,
                vec![Qfi, Survival],
                scan(V::B, &[0.4]),
                InitialStateSpec::NeelZ2,
            )
        },
        "fig3a" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 13,
                ..chain_fig1a()
            },
            ..base(
                Scenario::IntegrableTransition,
                vec![Fdt],
                scan(V::JxSb, &[0.01, 0.05, 0.1, 0.2, 0.4]),
                mid_bath_z(),
            )
        },
        "fig3b" => ScenarioConfig {
            spin_chain: SpinChainParams {
                n: 12,
                jx_sb: 0.4,
                ..chain_fig1a()
            },
            n_realizations: 30,
            ..base(
                Scenario::Mbl,
                vec![Fdt],
                scan(V::W, &[0.5, 1.0, 2.0, 3.0, 5.0]),
                mid_bath_z(),
            )
        },
        "fig3c" => ScenarioConfig {
            pxp: PxpParams {
                n: 14,
                b: 0.0,
                probe_site: PxpParams::central_site(14),
                ..PxpParams::default()
            },
            central_probe: true,
            analysis: AnalysisSpec {
                chi: 5.5,
                ..AnalysisSpec::default()
            },
            ..base(
                Scenario::PxpScars,
                vec![Fdt],
                scan(V::N, &[14.0, 16.0, 18.0, 20.0, 22.0]),
                InitialStateSpec::AllDown,
            )
        },
        "fig4" => ScenarioConfig {
            spin_chain: SpinChainParams {
                jx_sb: 0.4,
                w: 5.0,
                ..chain_fig1a()
            },
            n_realizations: 30,
            ..base(
                Scenario::Mbl,
                vec![Fluctuations],
                scan(V::N, &[9.0, 10.0, 11.0, 12.0]),
                mid_bath_z(),
            )
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let text = cfg.to_toml_string().unwrap();
            let back = ScenarioConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{name} round trip");
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"
            scenario = "mbl"
            diagnostics = ["levels"]
            initial_state = { kind = "neel_z2" }
            scan = { variable = "w", values = [1.0] }
            spin_chain = { n = 6, jx_sb = 0.4, colour = 3 }
        "#;
        let err = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");

        let typo = r#"
            scenario = "mbl"
            diagnostics = ["levels"]
            initial_state = { kind = "neel_z2" }
            scan = { variable = "w", values = [1.0] }
            n_realisations = 3
        "#;
        assert!(ScenarioConfig::from_toml_str(typo).is_err());
    }

    #[test]
    fn minimal_config_defaults() {
        let text = r#"
            scenario = "integrable_transition"
            diagnostics = ["levels", "qfi"]
            scan = { variable = "jx_sb", values = [0.1, 0.4] }
            [initial_state]
            kind = "probe_up_x_bath_eigenstate"
            [spin_chain]
            n = 7
        "#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.n_realizations, 30);
        assert_eq!(cfg.max_dim, DEFAULT_MAX_DIM);
        assert_eq!(
            cfg.initial_state,
            InitialStateSpec::ProbeUpXBathEigenstate {
                bath_energy_fraction: 0.5
            }
        );
        match cfg.instance(0.1).unwrap() {
            ModelInstance::SpinChain(p) => {
                assert_eq!(p.jx_sb, 0.1);
                assert_eq!(p.n, 7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors() {
        let mut cfg = preset("fig1b").unwrap();
        cfg.n_realizations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = preset("fig1b").unwrap();
        cfg.scan.values.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = preset("fig1b").unwrap();
        cfg.scan = ScanSpec {
            variable: ScanVariable::N,
            values: vec![17.0],
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("exceeds the cap"), "{err}");
        cfg.max_dim = 1 << 17;
        cfg.validate().unwrap();
        let mut cfg = preset("fig3c").unwrap();
        cfg.scan.variable = ScanVariable::W;
        assert!(cfg.validate().is_err());
        cfg.scan = ScanSpec {
            variable: ScanVariable::N,
            values: vec![14.5],
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fibonacci_dims() {
        assert_eq!(fibonacci_dim(1), 2);
        assert_eq!(fibonacci_dim(2), 3);
        assert_eq!(fibonacci_dim(16), 2584);
        assert_eq!(fibonacci_dim(18), 6765);
    }
}
