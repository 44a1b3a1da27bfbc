use crate::kv::{self, KvError};
use crate::model::ModelConfig;
use crate::sim::{DistributionTag, MechanismMix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Decoder,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Encoder => "encoder",
            Stage::Decoder => "decoder",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "encoder" => Some(Stage::Encoder),
            "decoder" => Some(Stage::Decoder),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub distribution: DistributionTag,
    pub mechanisms: MechanismMix,
    pub d: usize,
    /// Rows per dataset; the decoder stage simulates `2n` and splits them.
    pub n: usize,
    pub datasets_per_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Linear ramp from `lr / warmup_steps` to `lr` over the first steps.
    pub warmup_steps: usize,
    /// Cosine decay of the learning rate to zero at the last step.
    pub cosine_decay: bool,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// When set, datasets are drawn from a fixed pool of this many seeds.
    pub corpus_size: Option<usize>,
    /// Checkpoint period in steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Bound of the simulation queue; 0 simulates inline.
    pub prefetch: usize,
    /// Stage-two training reads the encoder's EMA weights instead of its raw ones.
    pub encoder_ema: bool,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// CPU-sized run.
    pub fn desk(stage: Stage) -> Self {
        Self {
            stage,
            distribution: DistributionTag::In,
            mechanisms: MechanismMix::Both,
            d: 5,
            n: 100,
            datasets_per_epoch: 200,
            epochs: 50,
            batch_size: 2,
            lr: 1e-3,
            warmup_steps: 0,
            cosine_decay: false,
            weight_decay: 5e-9,
            ema_decay: 0.999,
            seed: 0,
            corpus_size: None,
            checkpoint_every: 0,
            prefetch: 2,
            encoder_ema: true,
            model: ModelConfig::desk(),
        }
    }

    /// Full-scale hyperparameters.
    pub fn full(stage: Stage) -> Self {
        Self {
            d: 20,
            n: 400,
            datasets_per_epoch: 400,
            epochs: 10_000,
            lr: 1e-4,
            model: ModelConfig::full(),
            ..Self::desk(stage)
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.datasets_per_epoch / self.batch_size).max(1)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.epochs
    }

    /// Learning rate used at optimizer step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr;
        if step < self.warmup_steps {
            lr *= (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.cosine_decay {
            let t = step as f64 / self.total_steps().max(1) as f64;
            lr *= 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        }
        lr
    }

    pub fn validate(&self) -> Result<(), KvError> {
        let bad = |key: &str, value: String| Err(KvError::Value { key: key.into(), value });
        if self.d == 0 {
            return bad("d", "0".into());
        }
        if self.n < 2 {
            return bad("n", self.n.to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", self.lr.to_string());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay", self.ema_decay.to_string());
        }
        if self.corpus_size == Some(0) {
            return bad("corpus_size", "0".into());
        }
        self.model.validate().map_err(|e| KvError::Value { key: "model".into(), value: e.to_string() })
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = [
            ("stage", self.stage.tag().to_string()),
            ("preset", self.distribution.tag().to_lowercase()),
            ("mechanisms", self.mechanisms.tag().to_lowercase()),
            ("d", self.d.to_string()),
            ("n", self.n.to_string()),
            ("datasets_per_epoch", self.datasets_per_epoch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("cosine_decay", self.cosine_decay.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("ema_decay", self.ema_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("corpus_size", self.corpus_size.unwrap_or(0).to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("prefetch", self.prefetch.to_string()),
            ("encoder_ema", self.encoder_ema.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        e.extend(self.model.entries());
        e
    }

    /// Applies `entries` on top of the preset named by `base` (`desk` unless given).
    /// Keys that belong to neither the run nor the model are rejected.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self, KvError> {
        let get = |key: &str| entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let stage = match get("stage") {
            Some(s) => Stage::from_tag(s).ok_or_else(|| KvError::Value { key: "stage".into(), value: s.into() })?,
            None => Stage::Encoder,
        };
        let mut c = match get("base").unwrap_or("desk") {
            "desk" => Self::desk(stage),
            "full" => Self::full(stage),
            other => return Err(KvError::Value { key: "base".into(), value: other.into() }),
        };
        let model_keys: Vec<String> = c.model.entries().into_iter().map(|(k, _)| k).collect();
        for (k, v) in entries {
            match k.as_str() {
                "stage" | "base" => {}
                "preset" => {
                    c.distribution = DistributionTag::from_tag(&v.to_uppercase())
                        .ok_or_else(|| KvError::Value { key: k.clone(), value: v.clone() })?
                }
                "mechanisms" => {
                    c.mechanisms = MechanismMix::from_tag(&v.to_uppercase())
                        .ok_or_else(|| KvError::Value { key: k.clone(), value: v.clone() })?
                }
                "d" => c.d = kv::value(k, v)?,
                "n" => c.n = kv::value(k, v)?,
                "datasets_per_epoch" => c.datasets_per_epoch = kv::value(k, v)?,
                "epochs" => c.epochs = kv::value(k, v)?,
                "batch_size" => c.batch_size = kv::value(k, v)?,
                "lr" => c.lr = kv::value(k, v)?,
                "warmup_steps" => c.warmup_steps = kv::value(k, v)?,
                "cosine_decay" => c.cosine_decay = kv::value(k, v)?,
                "weight_decay" => c.weight_decay = kv::value(k, v)?,
                "ema_decay" => c.ema_decay = kv::value(k, v)?,
                "seed" => c.seed = kv::value(k, v)?,
                "corpus_size" => {
                    let size: usize = kv::value(k, v)?;
                    c.corpus_size = (size > 0).then_some(size);
                }
                "checkpoint_every" => c.checkpoint_every = kv::value(k, v)?,
                "prefetch" => c.prefetch = kv::value(k, v)?,
                "encoder_ema" => c.encoder_ema = kv::value(k, v)?,
                key if model_keys.iter().any(|m| m == key) => {}
                other => return Err(KvError::UnknownKey(other.to_string())),
            }
        }
        c.model = c
            .model
            .clone()
            .with_entries(entries.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| KvError::Value { key: "model".into(), value: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        Self::from_entries(&kv::parse(text)?)
    }
}
