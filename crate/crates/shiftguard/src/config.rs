//! Experiment configuration: TOML with dotted sections, defaulted per experiment.
//!
//! Loading starts from the defaults of the named experiment, overlays the
//! user's keys and then deserializes strictly, so unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shiftguard_core::adapt::{AnchorKind, EpisodeConfig};
use shiftguard_core::conic::SolverSettings;
use shiftguard_core::envs::{EnvKind, Excitation};
use shiftguard_core::pso::PsoConfig;
use shiftguard_core::relu::Activation;
use shiftguard_core::train::{Architecture, Optimizer, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of `dubins`, `linear_car`, `acc`.
    pub experiment: String,
    pub horizon: usize,
    pub confidence: f64,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub surrogate: SurrogateSection,
    pub training: TrainingSection,
    pub adaptation: AdaptationSection,
    pub pso: PsoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub mean_hidden: Vec<usize>,
    pub linear_skip: bool,
    pub cov_hidden: Vec<usize>,
    /// Empty disables the embedder.
    pub embedder_hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Empty disables the tanh comparison network.
    pub deep_hidden: Vec<usize>,
    pub samples: usize,
    pub dither: f64,
    pub rollout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub optimizer: String,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub cov_epochs: usize,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    /// `linearized`, `pi_star` or `origin`.
    pub anchor: String,
    pub reanchor: usize,
    pub trust_floor: f64,
    pub omega_cap: f64,
    pub initial_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoSection {
    pub swarm: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Rounds per step including the initial one; 0 calibrates against the SDP time.
    pub iterations: usize,
    /// Upper limit for calibrated budgets.
    pub max_iterations: usize,
    /// Search the tanh comparison network instead of the ReLU mean network.
    pub deep: bool,
}

impl ExperimentConfig {
    pub fn defaults(kind: EnvKind) -> Self {
        let (horizon, seeds, samples) = match kind {
            EnvKind::Dubins => (200, 5, 6000),
            EnvKind::LinearCar => (100, 10, 4000),
            EnvKind::Acc => (400, 5, 6000),
        };
        let cov_hidden = if kind == EnvKind::Acc { vec![16] } else { vec![8] };
        Self {
            experiment: kind.name().to_string(),
            horizon,
            confidence: 0.95,
            delta: 1e-6,
            seeds: (0..seeds).collect(),
            output_dir: PathBuf::from("out").join(kind.name()),
            surrogate: SurrogateSection {
                mean_hidden: vec![8],
                linear_skip: true,
                cov_hidden,
                embedder_hidden: vec![],
                embed_dim: 0,
                deep_hidden: vec![],
                samples,
                dither: 1.0,
                rollout: 200,
            },
            training: TrainingSection {
                optimizer: "adam".into(),
                learning_rate: 3e-3,
                lr_decay: 0.98,
                batch_size: 64,
                epochs: 150,
                cov_epochs: 50,
                validation_fraction: 0.1,
            },
            adaptation: AdaptationSection {
                anchor: AnchorKind::Linearized.name().into(),
                reanchor: 1,
                trust_floor: 1e-8,
                omega_cap: 1e6,
                initial_variance: 1e-6,
            },
            pso: PsoSection {
                swarm: 20,
                inertia: 0.729,
                cognitive: 1.494,
                social: 1.494,
                iterations: 0,
                max_iterations: 100_000,
                deep: false,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Usage(format!("config: {e}")))?;
        let name = match user.get("experiment") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Usage("config: experiment must be a string".into())),
            None => return Err(Error::Usage("config: missing key experiment".into())),
        };
        let kind = EnvKind::from_name(&name).ok_or_else(|| Error::Usage(format!("config: unknown experiment {name:?}")))?;
        let mut merged = toml::Table::try_from(Self::defaults(kind)).expect("defaults serialize");
        overlay(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn kind(&self) -> EnvKind {
        EnvKind::from_name(&self.experiment).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Usage(format!("config: {msg}")));
        if EnvKind::from_name(&self.experiment).is_none() {
            return bad("unknown experiment");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if AnchorKind::from_name(&self.adaptation.anchor).is_none() {
            return bad("adaptation.anchor must be linearized, pi_star or origin");
        }
        if !self.surrogate.embedder_hidden.is_empty() && self.surrogate.embed_dim == 0 {
            return bad("surrogate.embed_dim must be positive with an embedder");
        }
        self.train_config(0).validate().map_err(|e| Error::Usage(format!("config: {e}")))?;
        self.pso_config(0, 1).validate().map_err(|e| Error::Usage(format!("config: {e}")))?;
        if self.pso.max_iterations == 0 {
            return bad("pso.max_iterations must be positive");
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed,
            optimizer: if t.optimizer == "sgd" { Optimizer::Sgd } else { Optimizer::Adam },
            validation_fraction: t.validation_fraction,
            lr_decay: t.lr_decay,
        }
    }

    pub fn mean_architecture(&self) -> Architecture {
        Architecture { hidden: self.surrogate.mean_hidden.clone(), activation: Activation::Relu, linear_skip: self.surrogate.linear_skip }
    }

    pub fn excitation(&self) -> Excitation {
        Excitation { dither: self.surrogate.dither, rollout: self.surrogate.rollout }
    }

    pub fn episode_config(&self, settings: SolverSettings) -> EpisodeConfig {
        let a = &self.adaptation;
        EpisodeConfig {
            horizon: self.horizon,
            confidence: self.confidence,
            delta: self.delta,
            trust_floor: a.trust_floor,
            anchor: AnchorKind::from_name(&a.anchor).unwrap_or(AnchorKind::Linearized),
            reanchor: a.reanchor,
            omega_cap: a.omega_cap,
            initial_variance: a.initial_variance,
            settings,
        }
    }

    pub fn pso_config(&self, seed: u64, iterations: usize) -> PsoConfig {
        let p = &self.pso;
        PsoConfig { swarm: p.swarm, inertia: p.inertia, cognitive: p.cognitive, social: p.social, iterations, seed }
    }
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for kind in [EnvKind::Dubins, EnvKind::LinearCar, EnvKind::Acc] {
            let d = ExperimentConfig::defaults(kind);
            assert_eq!(ExperimentConfig::from_toml(&d.to_toml()).unwrap(), d);
        }
    }

    #[test]
    fn partial_file_is_defaulted() {
        let c = ExperimentConfig::from_toml("experiment = \"acc\"\nhorizon = 12\n[pso]\nswarm = 8\n").unwrap();
        assert_eq!(c.horizon, 12);
        assert_eq!(c.pso.swarm, 8);
        assert_eq!(c.pso.inertia, 0.729);
        assert_eq!(c.seeds.len(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("experiment = \"dubins\"\nhorizn = 3\n"), Err(Error::Usage(_))));
        assert!(matches!(ExperimentConfig::from_toml("experiment = \"dubins\"\n[pso]\nswarms = 3\n"), Err(Error::Usage(_))));
        assert!(matches!(ExperimentConfig::from_toml("experiment = \"boat\"\n"), Err(Error::Usage(_))));
    }
}
