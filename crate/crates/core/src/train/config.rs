use crate::nn::{ModelDims, MAX_GEN_LEN};

/// Per-term multipliers of the joint objective. All ones gives the plain sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub class_td: f64,
    pub class_od: f64,
    pub back_rec: f64,
    pub class_btd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            class_td: 1.0,
            class_od: 1.0,
            back_rec: 1.0,
            class_btd: 1.0,
        }
    }
}

/// `τ(epoch) = max(floor, initial · decay^(epoch−1))`, epochs counted from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            decay: 0.5,
            floor: 0.1,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let e = epoch.saturating_sub(1) as i32;
        (self.initial * self.decay.powi(e)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub emb: usize,
    pub cls_emb: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_epochs: usize,
    /// Epochs of reconstruction plus classifier training (no transfer
    /// terms) run after the classifier warm-up.
    pub pretrain_epochs: usize,
    pub temperature: TemperatureSchedule,
    pub max_gen_len: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub no_attention: bool,
    pub no_back_transfer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 200,
            emb: 100,
            cls_emb: 100,
            filters: 128,
            widths: vec![1, 2, 3, 4],
            lr: 0.0005,
            batch: 64,
            max_epochs: 30,
            patience: 5,
            warmup_epochs: 1,
            pretrain_epochs: 0,
            temperature: TemperatureSchedule::default(),
            max_gen_len: MAX_GEN_LEN,
            weights: LossWeights::default(),
            seed: 1,
            no_attention: false,
            no_back_transfer: false,
        }
    }
}

impl TrainConfig {
    pub fn model_dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            emb: self.emb,
            hidden: self.hidden,
            cls_emb: self.cls_emb,
            filters: self.filters,
            widths: self.widths.clone(),
            attention: !self.no_attention,
        }
    }
}
