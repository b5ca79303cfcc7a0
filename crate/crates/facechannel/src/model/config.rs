use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Output head: a class distribution over K emotions, or an
/// (arousal, valence) pair with both values in [-1, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadSpec {
    Categorical { classes: usize },
    Dimensional,
}

impl HeadSpec {
    pub fn arity(&self) -> usize {
        match self {
            HeadSpec::Categorical { classes } => *classes,
            HeadSpec::Dimensional => 2,
        }
    }
}

/// Declarative network topology. `block_channels` lists the widths of the
/// plain convolutional layers in each block; the last block additionally
/// ends with the shunting layer (`shunting_channels` wide). Every block is
/// followed by a 2x2 max pool and dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub block_channels: Vec<Vec<usize>>,
    pub shunting_channels: usize,
    pub dense_units: usize,
    pub head: HeadSpec,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// The reference topology: 4 blocks, widths
    /// [32,32 | 64,64 | 128,128,128 | 128,128 + shunting 64], 3x3 kernels,
    /// 128x128 input, dense 200. Ten conv-type layers and four pools.
    pub fn canonical(head: HeadSpec, seed: u64) -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 128,
            block_channels: vec![
                vec![32, 32],
                vec![64, 64],
                vec![128, 128, 128],
                vec![128, 128],
            ],
            shunting_channels: 64,
            dense_units: 200,
            head,
            dropout_rate: 0.5,
            seed,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.block_channels.len()
    }

    /// Conv-type layers, counting the shunting layer once.
    pub fn conv_layer_count(&self) -> usize {
        self.block_channels.iter().map(Vec::len).sum::<usize>() + 1
    }

    /// Spatial size of the feature map after all pools.
    pub fn final_spatial(&self) -> usize {
        self.input_size >> self.num_blocks()
    }

    /// Flattened feature length fed to the dense layer.
    pub fn flatten_len(&self) -> usize {
        self.shunting_channels * self.final_spatial() * self.final_spatial()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        let blocks = self.num_blocks();
        if blocks == 0 {
            return Err(Error::Config("at least one block is required".into()));
        }
        if self.block_channels.iter().any(|b| b.is_empty()) {
            return Err(Error::Config("every block needs at least one conv layer".into()));
        }
        if self
            .block_channels
            .iter()
            .flatten()
            .any(|&w| w == 0)
        {
            return Err(Error::Config("zero-width conv layer".into()));
        }
        if self.shunting_channels == 0 {
            return Err(Error::Config("shunting_channels must be positive".into()));
        }
        if self.input_size % (1 << blocks) != 0 || self.final_spatial() == 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible into {} pooling halvings",
                self.input_size, blocks
            )));
        }
        if self.dense_units == 0 {
            return Err(Error::Config("dense_units must be positive".into()));
        }
        if let HeadSpec::Categorical { classes } = self.head {
            if classes < 2 {
                return Err(Error::Config("categorical head needs >= 2 classes".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0,1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
