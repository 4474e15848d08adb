//! Experiment configuration: a TOML file with one section per module.
//!
//! Every field has a default, so an empty file is the canonical profile
//! (d = 30, M = 20, M' = 10, K = 3, α = 0.4, noise 0.2, τ = 0.5, ρ = 0.8,
//! α' = 0.8).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    TrainDynamics,
    CotSweep,
    IclSweep,
    CotVsIcl,
    Example1,
    Gradcheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TrainDynamics => "train_dynamics",
            ExperimentKind::CotSweep => "cot_sweep",
            ExperimentKind::IclSweep => "icl_sweep",
            ExperimentKind::CotVsIcl => "cot_vs_icl",
            ExperimentKind::Example1 => "example1",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, ExperimentKind::CotSweep | ExperimentKind::IclSweep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    AlphaPrime,
    Tau,
    Rho,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::AlphaPrime => "alpha_prime",
            SweepAxis::Tau => "tau",
            SweepAxis::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSection {
    pub dim: usize,
    pub m: usize,
    pub m_prime: usize,
    pub k: usize,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self {
            dim: 30,
            m: 20,
            m_prime: 10,
            k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub eta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub xi: f64,
    pub l_tr: usize,
    pub alpha: f64,
    pub log_every: usize,
    /// Number of random cyclic training tasks.
    pub task_pool: usize,
    /// Fixed probe prompts used for the attention history.
    pub probes: usize,
    /// Training runs for `train_dynamics`.
    pub n_seeds: usize,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    /// Load this checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            eta: t.eta,
            iterations: t.iterations,
            batch_size: t.batch_size,
            xi: t.xi,
            l_tr: t.l_tr,
            alpha: t.alpha,
            log_every: t.log_every,
            task_pool: 64,
            probes: 100,
            n_seeds: 5,
            checkpoint_every: 0,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestingSection {
    pub noise: f64,
    pub alpha_prime: f64,
    pub tau: f64,
    pub rho: f64,
    pub l_ts: Vec<usize>,
    pub n_queries: usize,
    pub n_seeds: usize,
}

impl Default for TestingSection {
    fn default() -> Self {
        Self {
            noise: 0.2,
            alpha_prime: 0.8,
            tau: 0.5,
            rho: 0.8,
            l_ts: vec![1, 2, 4, 6, 8, 12, 16, 20, 30],
            n_queries: 200,
            n_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::AlphaPrime,
            values: vec![0.2, 0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DichotomySection {
    pub tau_o: f64,
    pub rho_o: f64,
    /// Grid resolution of the violating-model search.
    pub grid: usize,
    /// Multiples of the ICL bound evaluated; the CoT bound is always added.
    pub icl_bound_multiples: Vec<f64>,
    pub n_queries: usize,
}

impl Default for DichotomySection {
    fn default() -> Self {
        Self {
            tau_o: 0.4,
            rho_o: 0.1,
            grid: 60,
            icl_bound_multiples: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            n_queries: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub instances: usize,
    pub h: f64,
    pub tolerance: f64,
    pub dims: Vec<usize>,
    pub steps: Vec<usize>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 100,
            h: 1e-5,
            tolerance: 1e-5,
            dims: vec![4, 30],
            steps: vec![1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartSection {
    pub enabled: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for ChartSection {
    fn default() -> Self {
        Self {
            enabled: true,
            width: 640,
            height: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub patterns: PatternSection,
    pub training: TrainingSection,
    pub testing: TestingSection,
    pub sweep: SweepSection,
    pub dichotomy: DichotomySection,
    pub gradcheck: GradcheckSection,
    pub charts: ChartSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            patterns: PatternSection::default(),
            training: TrainingSection::default(),
            testing: TestingSection::default(),
            sweep: SweepSection::default(),
            dichotomy: DichotomySection::default(),
            gradcheck: GradcheckSection::default(),
            charts: ChartSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse TOML text. Errors carry the line and column of the offending
    /// entry.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    /// Short digest of the canonical TOML. The output directory is left out,
    /// so the same experiment written elsewhere keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            eta: t.eta,
            iterations: t.iterations,
            batch_size: t.batch_size,
            xi: t.xi,
            l_tr: t.l_tr,
            alpha: t.alpha,
            seed,
            log_every: t.log_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.patterns;
        if p.dim == 0 || p.m == 0 || p.k == 0 {
            return bad("patterns: dim, m and k must be positive".into());
        }
        if p.m_prime == 0 || p.m_prime > p.m {
            return bad(format!("patterns: m_prime = {} must lie in 1..={}", p.m_prime, p.m));
        }
        self.train_config(self.seed)
            .validate()
            .map_err(|e| Error::Config(format!("training: {e}")))?;
        if self.training.task_pool == 0 || self.training.n_seeds == 0 {
            return bad("training: task_pool and n_seeds must be positive".into());
        }
        let t = &self.testing;
        if t.n_queries == 0 || t.n_seeds == 0 {
            return bad("testing: n_queries and n_seeds must be positive".into());
        }
        if self.kind.is_sweep() {
            if t.l_ts.is_empty() {
                return bad("testing: l_ts must be nonempty for sweeps".into());
            }
            if self.sweep.values.is_empty() {
                return bad("sweep: values must be nonempty".into());
            }
        }
        if t.l_ts.contains(&0) {
            return bad("testing: l_ts entries must be positive".into());
        }
        if self.gradcheck.instances == 0 || !(self.gradcheck.h > 0.0) {
            return bad("gradcheck: instances and h must be positive".into());
        }
        if self.charts.width < 100 || self.charts.height < 100 {
            return bad("charts: width and height must be at least 100".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_profile() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.patterns.dim, 30);
        assert_eq!(cfg.testing.alpha_prime, 0.8);
    }

    #[test]
    fn sections_override_fields() {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"cot_sweep\"\nseed = 7\n[sweep]\naxis = \"tau\"\nvalues = [0.3, 0.5]\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::CotSweep);
        assert_eq!(cfg.sweep.axis, SweepAxis::Tau);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn parse_errors_report_lines() {
        let err = ExperimentConfig::from_toml("seed = 1\n[training]\neta = \"fast\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        let err = ExperimentConfig::from_toml("seed = 1\n\n[testing]\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[training]\neta = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml("kind = \"cot_sweep\"\n[testing]\nl_ts = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[patterns]\nm_prime = 30\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let round = ExperimentConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(round, a);
    }
}
