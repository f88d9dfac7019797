//! The conditional score network, the frozen conditioner, and their checkpoints.

mod checkpoint;
mod pretrain;
mod score;

use std::path::Path;

pub use checkpoint::{Checkpoint, ParamBlock, FORMAT_VERSION, MAGIC};
pub use pretrain::{PretrainNet, LEAKY_SLOPE, PRETRAIN_HIDDEN};
pub use score::{Gate, ScoreGradients, ScoreModel, ScoreTape, DEFAULT_HIDDEN};

use crate::data::{ColumnStats, TaskKind};
use crate::error::{Error, Result};
use crate::nn::DenseLayer;
use crate::schedule::NoiseSchedule;

/// A trained score network together with everything needed to run it on raw
/// inputs: the noise schedule, the loss exponent it was trained with, and the
/// standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCheckpoint {
    pub model: ScoreModel,
    pub schedule: NoiseSchedule,
    pub loss_exponent: f64,
    pub task: TaskKind,
    pub x_stats: Option<ColumnStats>,
    pub y_stats: Option<ColumnStats>,
    /// Effective run configuration, echoed verbatim.
    pub config_echo: Vec<(String, String)>,
}

fn push_stats(ckpt: &mut Checkpoint, prefix: &str, stats: &ColumnStats) -> Result<()> {
    let n = stats.len();
    ckpt.blocks.push(ParamBlock::new(format!("{prefix}.mean"), vec![n], stats.mean.clone())?);
    ckpt.blocks.push(ParamBlock::new(format!("{prefix}.std"), vec![n], stats.std.clone())?);
    let flags = stats.degenerate.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
    ckpt.blocks.push(ParamBlock::new(format!("{prefix}.degenerate"), vec![n], flags)?);
    Ok(())
}

fn read_stats(ckpt: &Checkpoint, prefix: &str) -> Result<Option<ColumnStats>> {
    if ckpt.blocks.iter().all(|b| b.name != format!("{prefix}.mean")) {
        return Ok(None);
    }
    Ok(Some(ColumnStats {
        mean: ckpt.block(&format!("{prefix}.mean"))?.data.clone(),
        std: ckpt.block(&format!("{prefix}.std"))?.data.clone(),
        degenerate: ckpt
            .block(&format!("{prefix}.degenerate"))?
            .data
            .iter()
            .map(|&v| v != 0.0)
            .collect(),
    }))
}

impl ScoreCheckpoint {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::default();
        c.push_header("kind", "score");
        c.push_header("m", self.model.input_dim());
        c.push_header("d", self.model.output_dim());
        c.push_header("L", self.model.levels());
        c.push_header("hidden_width", self.model.hidden());
        c.push_header("sigma_first", self.schedule.first());
        c.push_header("ratio", self.schedule.ratio());
        c.push_header("k", self.loss_exponent);
        c.push_header(
            "task",
            match self.task {
                TaskKind::Regression => "regression".to_string(),
                TaskKind::Classification { classes } => format!("classification:{classes}"),
            },
        );
        for (k, v) in &self.config_echo {
            c.push_header(&format!("config.{k}"), v);
        }
        let names = ScoreModel::parameter_names();
        for ((name, shape), data) in names
            .iter()
            .zip(self.model.parameter_shapes())
            .zip(self.model.parameters())
        {
            c.blocks.push(ParamBlock::new(*name, shape, data.to_vec())?);
        }
        if let Some(s) = &self.x_stats {
            push_stats(&mut c, "x_stats", s)?;
        }
        if let Some(s) = &self.y_stats {
            push_stats(&mut c, "y_stats", s)?;
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.header_value("kind") != Some("score") {
            return Err(Error::Format("checkpoint is not a score model".into()));
        }
        let m: usize = c.require("m")?;
        let d: usize = c.require("d")?;
        let levels: usize = c.require("L")?;
        let hidden: usize = c.require("hidden_width")?;
        let schedule = NoiseSchedule::from_ratio(c.require("sigma_first")?, c.require("ratio")?, levels)?;
        let task = match c.header_value("task") {
            Some("regression") | None => TaskKind::Regression,
            Some(other) => {
                let classes = other
                    .strip_prefix("classification:")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::Format(format!("unknown task '{other}'")))?;
                TaskKind::Classification { classes }
            }
        };
        let probe = ScoreModel::zeros(m, d, levels, hidden)?;
        let mut blocks = Vec::new();
        for (name, shape) in ScoreModel::parameter_names().iter().zip(probe.parameter_shapes()) {
            let b = c.block(name)?;
            if b.shape != shape {
                return Err(Error::Format(format!(
                    "block '{name}' has shape {:?}, expected {shape:?}",
                    b.shape
                )));
            }
            blocks.push(b.data.clone());
        }
        let config_echo = c
            .header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            model: ScoreModel::from_blocks(m, d, levels, hidden, blocks)?,
            schedule,
            loss_exponent: c.require("k")?,
            task,
            x_stats: read_stats(c, "x_stats")?,
            y_stats: read_stats(c, "y_stats")?,
            config_echo,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl PretrainNet {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::default();
        c.push_header("kind", "pretrain");
        c.push_header("m", self.input_dim());
        c.push_header("d", self.output_dim());
        c.push_header("layers", self.layers().len());
        c.push_header("frozen", self.is_frozen());
        for (i, layer) in self.layers().iter().enumerate() {
            c.blocks.push(ParamBlock::new(
                format!("layer{i}.weight"),
                vec![layer.out_dim(), layer.in_dim()],
                layer.weights().iter().copied().collect(),
            )?);
            c.blocks.push(ParamBlock::new(
                format!("layer{i}.bias"),
                vec![layer.out_dim()],
                layer.bias().to_vec(),
            )?);
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.header_value("kind") != Some("pretrain") {
            return Err(Error::Format("checkpoint is not a pretrain network".into()));
        }
        let n: usize = c.require("layers")?;
        let frozen: bool = c.require("frozen")?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let w = c.block(&format!("layer{i}.weight"))?;
            let b = c.block(&format!("layer{i}.bias"))?;
            if w.shape.len() != 2 || b.shape.len() != 1 {
                return Err(Error::Format(format!("layer {i} has malformed shapes")));
            }
            let weights = ndarray::Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                .map_err(|e| Error::Format(e.to_string()))?;
            layers.push(DenseLayer::new(weights, ndarray::Array1::from(b.data.clone()))?);
        }
        let net = PretrainNet::from_layers(layers, frozen)?;
        if net.input_dim() != c.require::<usize>("m")? || net.output_dim() != c.require::<usize>("d")? {
            return Err(Error::Format("pretrain header dims disagree with layers".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
