use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// The five meta-learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetaMethod {
    ProtoNet,
    Fomaml,
    Maml,
    ProtoFomaml,
    ProtoMaml,
}

impl MetaMethod {
    pub const ALL: [MetaMethod; 5] = [
        MetaMethod::ProtoNet,
        MetaMethod::Fomaml,
        MetaMethod::Maml,
        MetaMethod::ProtoFomaml,
        MetaMethod::ProtoMaml,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaMethod::ProtoNet => "protonet",
            MetaMethod::Fomaml => "fomaml",
            MetaMethod::Maml => "maml",
            MetaMethod::ProtoFomaml => "protofomaml",
            MetaMethod::ProtoMaml => "protomaml",
        }
    }

    /// Whether meta-gradients differentiate through the inner loop.
    pub fn second_order(self) -> bool {
        matches!(self, MetaMethod::Maml | MetaMethod::ProtoMaml)
    }

    /// Whether the method runs an inner loop with a task head.
    pub fn adapts(self) -> bool {
        self != MetaMethod::ProtoNet
    }

    /// Whether the task head starts from prototypes.
    pub fn proto_init(self) -> bool {
        matches!(self, MetaMethod::ProtoFomaml | MetaMethod::ProtoMaml)
    }
}

/// Every runnable method, including baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Meta(MetaMethod),
    /// A meta-learner's test procedure started from random parameters.
    EpisodicFineTune(MetaMethod),
    MajoritySense,
    NearestNeighbor,
    NeBaseline,
}

impl Method {
    pub fn meta_method(self) -> Option<MetaMethod> {
        match self {
            Method::Meta(m) | Method::EpisodicFineTune(m) => Some(m),
            _ => None,
        }
    }

    /// Whether evaluation needs trained parameters.
    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Method::Meta(_) | Method::NeBaseline)
    }

    pub fn is_trainable(self) -> bool {
        self.needs_checkpoint()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Meta(m) => f.write_str(m.as_str()),
            Method::EpisodicFineTune(m) => write!(f, "ef-{}", m.as_str()),
            Method::MajoritySense => f.write_str("majority"),
            Method::NearestNeighbor => f.write_str("nearest-neighbor"),
            Method::NeBaseline => f.write_str("ne-baseline"),
        }
    }
}

impl FromStr for MetaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetaMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Method::MajoritySense),
            "nearest-neighbor" => Ok(Method::NearestNeighbor),
            "ne-baseline" => Ok(Method::NeBaseline),
            _ => match s.strip_prefix("ef-") {
                Some(rest) => Ok(Method::EpisodicFineTune(rest.parse()?)),
                None => Ok(Method::Meta(s.parse()?)),
            },
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|e| match e {
            Error::Config(m) => serde::de::Error::custom(m),
            e => serde::de::Error::custom(e),
        })
    }
}

/// Training and adaptation settings for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub method: Method,
    /// Support-set size `S` in sentences.
    pub support_size: usize,
    /// Words per meta-training episode `r`.
    pub words_per_episode: usize,
    /// Inner-loop rate for the shared block (alpha).
    pub learner_lr: f64,
    /// Inner-loop rate for the task head (gamma).
    pub output_lr: f64,
    /// Outer-loop Adam rate (beta).
    pub meta_lr: f64,
    /// Inner-loop updates `m` during meta-training.
    pub inner_steps: usize,
    /// Inner-loop updates at meta-test time, when different.
    pub test_inner_steps: Option<usize>,
    /// Tasks per outer update.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub create_graph: bool,
    /// Adapt only the task head in the inner loop.
    pub adapt_top_only: bool,
    pub hidden_dim: usize,
    pub activation: Activation,
    /// Halve the outer rate every 500 steps.
    pub lr_decay: bool,
    /// Mini-batch size for non-episodic training.
    pub ne_batch_size: usize,
    /// Restrict non-episodic test predictions to the episode's senses.
    pub ne_mask_test: bool,
    pub seeds: Vec<u64>,
}

impl MetaConfig {
    /// Default hyperparameters for `method` at support size `support_size`.
    pub fn preset(method: Method, support_size: usize) -> Self {
        let mut cfg = Self {
            method,
            support_size,
            words_per_episode: if support_size <= 4 { 2 } else { 4 },
            learner_lr: 1e-3,
            output_lr: 1e-3,
            meta_lr: 1e-3,
            inner_steps: 7,
            test_inner_steps: None,
            batch_size: 16,
            max_epochs: 20,
            patience: 2,
            create_graph: false,
            adapt_top_only: false,
            hidden_dim: 256,
            activation: Activation::Relu,
            lr_decay: true,
            ne_batch_size: 32,
            ne_mask_test: true,
            seeds: vec![0, 1, 2, 3, 4],
        };
        match method.meta_method() {
            Some(MetaMethod::ProtoNet) => {
                cfg.meta_lr = 1e-3;
                cfg.batch_size = 1;
            }
            Some(m @ (MetaMethod::Fomaml | MetaMethod::Maml)) => {
                cfg.learner_lr = 1e-2;
                cfg.output_lr = 1e-1;
                cfg.meta_lr = 5e-3;
                cfg.create_graph = m.second_order();
            }
            Some(m @ (MetaMethod::ProtoFomaml | MetaMethod::ProtoMaml)) => {
                cfg.learner_lr = 1e-3;
                cfg.output_lr = 1e-3;
                cfg.meta_lr = 5e-4;
                cfg.create_graph = m.second_order();
            }
            None => {}
        }
        if method == Method::NeBaseline {
            cfg.learner_lr = 1e-3;
            cfg.output_lr = 1e-1;
        }
        cfg
    }

    /// Inner-loop steps used at meta-test time.
    pub fn eval_inner_steps(&self) -> usize {
        self.test_inner_steps.unwrap_or(self.inner_steps)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, lr) in [
            ("learner_lr", self.learner_lr),
            ("output_lr", self.output_lr),
            ("meta_lr", self.meta_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {lr}"));
            }
        }
        if self.batch_size == 0 || self.ne_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.support_size < 2 {
            return bad(format!(
                "support_size must be at least 2, got {}",
                self.support_size
            ));
        }
        if self.words_per_episode == 0 || self.words_per_episode > self.support_size {
            return bad(format!(
                "words_per_episode must be in 1..={}, got {}",
                self.support_size, self.words_per_episode
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let second_order = self.method.meta_method().is_some_and(|m| m.second_order());
        if self.create_graph && !second_order {
            return bad(format!(
                "create_graph is only valid with maml or protomaml, not {}",
                self.method
            ));
        }
        if second_order && !self.create_graph {
            return bad(format!(
                "{} needs create_graph; use the first-order variant instead",
                self.method
            ));
        }
        if self.adapt_top_only && self.method.meta_method() == Some(MetaMethod::ProtoNet) {
            return bad("adapt_top_only has no effect on protonet".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        let mut all = vec![
            Method::MajoritySense,
            Method::NearestNeighbor,
            Method::NeBaseline,
        ];
        for m in MetaMethod::ALL {
            all.push(Method::Meta(m));
            all.push(Method::EpisodicFineTune(m));
        }
        for m in all {
            let s = m.to_string();
            assert_eq!(s.parse::<Method>().unwrap(), m, "{s}");
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert!("ef-majority".parse::<Method>().is_err());
        assert!("proto".parse::<Method>().is_err());
    }

    #[test]
    fn presets_are_valid() {
        for s in [4, 8, 16, 32] {
            for m in [
                "protonet",
                "fomaml",
                "maml",
                "protofomaml",
                "protomaml",
                "ne-baseline",
            ] {
                MetaConfig::preset(m.parse().unwrap(), s)
                    .validate()
                    .unwrap();
            }
        }
        let p = MetaConfig::preset("protofomaml".parse().unwrap(), 8);
        assert_eq!((p.output_lr, p.learner_lr, p.meta_lr), (1e-3, 1e-3, 5e-4));
        let f = MetaConfig::preset("fomaml".parse().unwrap(), 8);
        assert_eq!((f.output_lr, f.learner_lr, f.meta_lr), (1e-1, 1e-2, 5e-3));
        assert_eq!(f.inner_steps, 7);
        assert_eq!(
            MetaConfig::preset("protonet".parse().unwrap(), 8).meta_lr,
            1e-3
        );
    }

    #[test]
    fn create_graph_with_protonet_rejected() {
        let mut c = MetaConfig::preset(Method::Meta(MetaMethod::ProtoNet), 8);
        c.create_graph = true;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = MetaConfig::preset(Method::Meta(MetaMethod::Maml), 8);
        c.create_graph = false;
        assert!(c.validate().is_err());
    }

    #[test]
    fn degenerate_counts_rejected() {
        let base = MetaConfig::preset(Method::Meta(MetaMethod::Fomaml), 8);
        for f in [
            |c: &mut MetaConfig| c.batch_size = 0,
            |c: &mut MetaConfig| c.patience = 0,
            |c: &mut MetaConfig| c.meta_lr = -1.0,
            |c: &mut MetaConfig| c.seeds.clear(),
            |c: &mut MetaConfig| c.words_per_episode = 9,
        ] {
            let mut c = base.clone();
            f(&mut c);
            assert!(c.validate().is_err());
        }
    }
}
