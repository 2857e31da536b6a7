//! TOML configuration schema for studies, case studies, and one-off
//! simulate/fit commands, with validation producing exit-code-2 errors.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rssmix::mixture::MixtureParams;

use crate::CliError;

/// Mixture truth as written in config files: one variance entry means a
/// shared variance, J entries mean per-component variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl TruthSpec {
    pub fn to_params(&self) -> Result<MixtureParams, CliError> {
        let params = if self.variances.len() == 1 {
            MixtureParams::new_hom(self.weights.clone(), self.means.clone(), self.variances[0])
        } else {
            MixtureParams::new_het(
                self.weights.clone(),
                self.means.clone(),
                self.variances.clone(),
            )
        };
        params.map_err(|e| CliError::Config(format!("invalid truth parameters: {e}")))
    }

    /// Truth means must be strictly increasing so that order-constrained
    /// relabeling makes replicate estimates comparable to the truth.
    pub fn validate(&self) -> Result<(), CliError> {
        self.to_params()?;
        if self.means.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(
                "truth means must be strictly increasing (the relabeling convention)".into(),
            ));
        }
        Ok(())
    }
}

/// Sampling-design grid of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDesign {
    /// Total sample size N; each set size must divide it (balanced
    /// design with n = N / H cycles).
    pub n_total: usize,
    pub set_sizes: Vec<usize>,
    pub rho: Vec<f64>,
}

impl StudyDesign {
    fn validate(&self) -> Result<(), CliError> {
        validate_sizes(self.n_total, &self.set_sizes)?;
        if self.rho.is_empty() {
            return Err(CliError::Config("design.rho must list at least one value".into()));
        }
        for &r in &self.rho {
            if !r.is_finite() || r.abs() <= 0.0 || r.abs() > 1.0 {
                return Err(CliError::Config(format!(
                    "design.rho entry {r} outside (0, 1] in absolute value"
                )));
            }
        }
        Ok(())
    }
}

fn validate_sizes(n_total: usize, set_sizes: &[usize]) -> Result<(), CliError> {
    if n_total == 0 {
        return Err(CliError::Config("design.n_total must be positive".into()));
    }
    if set_sizes.is_empty() {
        return Err(CliError::Config("design.set_sizes must list at least one value".into()));
    }
    for &h in set_sizes {
        if h == 0 {
            return Err(CliError::Config("set size 0 is not a design".into()));
        }
        if n_total % h != 0 {
            return Err(CliError::Config(format!(
                "n_total {n_total} is not divisible by set size {h} (balanced design)"
            )));
        }
    }
    Ok(())
}

/// Which variance structure the fitted model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Hom,
    Het,
}

/// Chain protocol shared by every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn")]
    pub burn: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Credible-interval mass.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Per-scan iteration budget of the embedded EM step; exceeding it
    /// aborts the chain.
    #[serde(default = "default_em_max_iter")]
    pub em_max_iter: usize,
    /// Number of mixture components to fit; defaults to the truth (or
    /// surrogate) component count when one is configured.
    #[serde(default)]
    pub components: Option<usize>,
}

fn default_variant() -> Variant {
    Variant::Hom
}
fn default_iterations() -> usize {
    3000
}
fn default_burn() -> usize {
    1000
}
fn default_thin() -> usize {
    5
}
fn default_level() -> f64 {
    0.95
}
fn default_em_max_iter() -> usize {
    10_000
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            iterations: default_iterations(),
            burn: default_burn(),
            thin: default_thin(),
            level: default_level(),
            em_max_iter: default_em_max_iter(),
            components: None,
        }
    }
}

impl ChainSpec {
    fn validate(&self) -> Result<(), CliError> {
        if self.iterations == 0 || self.burn >= self.iterations {
            return Err(CliError::Config(format!(
                "chain length {} must exceed burn-in {}",
                self.iterations, self.burn
            )));
        }
        if self.thin == 0 {
            return Err(CliError::Config("chains.thin must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("chains.level {} outside (0, 1)", self.level)));
        }
        if self.em_max_iter == 0 {
            return Err(CliError::Config("chains.em_max_iter must be positive".into()));
        }
        if self.components == Some(0) {
            return Err(CliError::Config("chains.components must be positive".into()));
        }
        Ok(())
    }
}

/// Replication protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_stage1_reps")]
    pub stage1_reps: usize,
}

fn default_replicates() -> usize {
    200
}
fn default_stage1_reps() -> usize {
    5000
}

impl Default for StudySpec {
    fn default() -> Self {
        Self { replicates: default_replicates(), stage1_reps: default_stage1_reps() }
    }
}

/// Full configuration of a two-stage simulation study (also the config
/// source for `simulate` and the fit commands).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub truth: TruthSpec,
    pub design: StudyDesign,
    #[serde(default)]
    pub chains: ChainSpec,
    #[serde(default)]
    pub study: StudySpec,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: StudyConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.truth.validate()?;
        self.design.validate()?;
        self.chains.validate()?;
        if let Some(c) = self.chains.components {
            if c != self.truth.weights.len() {
                return Err(CliError::Config(format!(
                    "chains.components {c} disagrees with the {}-component truth",
                    self.truth.weights.len()
                )));
            }
        }
        if self.study.replicates == 0 {
            return Err(CliError::Config("study.replicates must be positive".into()));
        }
        if self.study.stage1_reps == 0 {
            return Err(CliError::Config("study.stage1_reps must be positive".into()));
        }
        match self.chains.variant {
            Variant::Hom if self.truth.variances.len() != 1 => Err(CliError::Config(
                "homoscedastic fit expects a single shared truth variance".into(),
            )),
            Variant::Het if self.truth.variances.len() != self.truth.weights.len() => {
                Err(CliError::Config(
                    "heteroscedastic fit expects one truth variance per component".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn j_count(&self) -> usize {
        self.truth.weights.len()
    }
}

/// Surrogate population of a case study: mixture truth plus the
/// concomitant correlation of the ranker (negative allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    #[serde(flatten)]
    pub truth: TruthSpec,
    pub rho: f64,
}

/// Where the case-study population comes from: a two-column dataset
/// (outcome + concomitant) or a surrogate generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_outcome_column")]
    pub outcome_column: String,
    #[serde(default = "default_concomitant_column")]
    pub concomitant_column: String,
    /// Dataset mode: draw replicate sets with replacement instead of
    /// consuming the population without replacement within a replicate.
    #[serde(default)]
    pub with_replacement: bool,
    #[serde(default)]
    pub surrogate: Option<SurrogateSpec>,
}

fn default_outcome_column() -> String {
    "outcome".into()
}
fn default_concomitant_column() -> String {
    "concomitant".into()
}

/// Full configuration of a case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub population: PopulationSpec,
    pub design: CaseDesign,
    #[serde(default)]
    pub chains: ChainSpec,
    #[serde(default)]
    pub study: StudySpec,
}

/// Sampling design of a case study (the ranking variable fixes the
/// correlation, so no rho grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDesign {
    pub n_total: usize,
    pub set_sizes: Vec<usize>,
}

impl CaseStudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: CaseStudyConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        validate_sizes(self.design.n_total, &self.design.set_sizes)?;
        self.chains.validate()?;
        if self.study.replicates == 0 {
            return Err(CliError::Config("study.replicates must be positive".into()));
        }
        match (&self.population.dataset, &self.population.surrogate) {
            (None, None) => Err(CliError::Config(
                "population needs either a dataset path or a surrogate".into(),
            )),
            (Some(_), Some(_)) => Err(CliError::Config(
                "population.dataset and population.surrogate are mutually exclusive".into(),
            )),
            (Some(_), None) => {
                if self.j_count().is_none() {
                    return Err(CliError::Config(
                        "dataset mode needs chains.components".into(),
                    ));
                }
                Ok(())
            }
            (None, Some(s)) => {
                s.truth.validate()?;
                if !s.rho.is_finite() || s.rho.abs() <= 0.0 || s.rho.abs() > 1.0 {
                    return Err(CliError::Config(format!(
                        "surrogate rho {} outside (0, 1] in absolute value",
                        s.rho
                    )));
                }
                if let Some(c) = self.chains.components {
                    if c != s.truth.weights.len() {
                        return Err(CliError::Config(format!(
                            "chains.components {c} disagrees with the {}-component surrogate",
                            s.truth.weights.len()
                        )));
                    }
                }
                match self.chains.variant {
                    Variant::Hom if s.truth.variances.len() != 1 => Err(CliError::Config(
                        "homoscedastic fit expects a single shared surrogate variance".into(),
                    )),
                    Variant::Het if s.truth.variances.len() != s.truth.weights.len() => {
                        Err(CliError::Config(
                            "heteroscedastic fit expects one surrogate variance per component"
                                .into(),
                        ))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    /// Component count of the fit: explicit, else the surrogate's.
    pub fn j_count(&self) -> Option<usize> {
        self.chains
            .components
            .or_else(|| self.population.surrogate.as_ref().map(|s| s.truth.weights.len()))
    }
}

/// Switch a chain/replication protocol to the full-scale run:
/// 15000 iterations, 5000 burn-in, thin 5, 2000 replicates.
pub fn apply_paper_scale(chains: &mut ChainSpec, study: &mut StudySpec) {
    chains.iterations = 15_000;
    chains.burn = 5000;
    chains.thin = 5;
    study.replicates = 2000;
}
