use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub segments: usize,
    pub classes: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            segments: 10,
            classes: 5,
            audio_dim: 16,
            visual_dim: 16,
            d_model: 64,
            heads: 4,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("segments", self.segments),
            ("classes", self.classes),
            ("audio_dim", self.audio_dim),
            ("visual_dim", self.visual_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in of the layer the entry belongs to; sets the init bound.
    pub fan_in: usize,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Ordered parameter groups of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (dm, c) = (config.d_model, config.classes);
        let mut groups: Vec<(String, Vec<usize>, usize)> = Vec::new();
        for (name, d_in) in [("input_audio", config.audio_dim), ("input_visual", config.visual_dim)] {
            groups.push((format!("{name}.weight"), vec![d_in, dm], d_in));
            groups.push((format!("{name}.bias"), vec![dm], d_in));
        }
        for block in ["self_audio", "cross_audio", "self_visual", "cross_visual"] {
            for proj in ["query", "key", "value", "output"] {
                groups.push((format!("{block}.{proj}"), vec![dm, dm], dm));
            }
        }
        for name in ["head_audio", "head_visual"] {
            groups.push((format!("{name}.weight"), vec![dm, c], dm));
            groups.push((format!("{name}.bias"), vec![c], dm));
        }
        groups.push(("mmil.time".into(), vec![dm, c], dm));
        groups.push(("mmil.modality".into(), vec![dm, c], dm));

        let mut offset = 0;
        let entries = groups
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let e = ParamEntry {
                    name,
                    shape,
                    offset,
                    fan_in,
                };
                offset += e.numel();
                e
            })
            .collect();
        ParamLayout { entries, len: offset }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// All trainable weights as one flat vector plus the layout naming its parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ModelParams {
    /// Uniform init in `±1/√fan_in`, reproducible from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = Vec::with_capacity(layout.len());
        for e in layout.entries() {
            let bound = 1.0 / (e.fan_in as f64).sqrt();
            values.extend((0..e.numel()).map(|_| rng.random_range(-bound..=bound)));
        }
        Ok(ModelParams {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn from_values(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if values.len() != layout.len() {
            return Err(Error::Mismatch(format!(
                "parameter vector has {} values, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ModelParams {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_tensor(&self, entry: &ParamEntry) -> Tensor {
        Tensor::new(entry.shape.clone(), self.values[entry.range()].to_vec())
            .expect("layout entries fit the vector")
    }

    pub fn group(&self, name: &str) -> Option<Tensor> {
        self.layout.entry(name).map(|e| self.group_tensor(e))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.layout == other.layout
    }
}
