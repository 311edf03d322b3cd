use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{IndexWidth, Ratio, DEFAULT_ROWS};
use crate::collectives::{ExecMode, MAX_NIBBLE_WORLD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("theta {0} is outside [0, 100]")]
    ThetaOutOfRange(f64),
    #[error(
        "{ratio}x compression needs theta >= {min}, got {theta} \
         (set allow_below_table to run the estimation-heavy regime)"
    )]
    BelowTable { ratio: u32, min: f64, theta: f64 },
    #[error("sketch needs at least one row")]
    NoRows,
    #[error("world size must be at least 1")]
    WorldSize,
    #[error("a 4-bit index supports at most {MAX_NIBBLE_WORLD} ranks, world size is {0}")]
    NibbleOverflow(usize),
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("layer `{0}` has no parameters")]
    EmptyLayer(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

/// Which layers go through the compressed path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerPolicy {
    AllLayers,
    #[default]
    NonAttentionLinear,
    None,
}

/// Smallest sparsification threshold (percent) at which `ratio` is expected
/// to decode losslessly by peeling.
pub fn min_theta(ratio: Ratio) -> f64 {
    match ratio {
        Ratio::Bypass => 0.0,
        Ratio::X2 => 80.0,
        Ratio::X4 => 90.0,
        Ratio::X10 => 98.75,
    }
}

/// The three sparsity / compression operating points.
pub const OPERATING_POINTS: [(f64, Ratio); 3] =
    [(80.0, Ratio::X2), (90.0, Ratio::X4), (98.75, Ratio::X10)];

fn default_true() -> bool {
    true
}

fn default_rows() -> usize {
    DEFAULT_ROWS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    /// Percentage of entries zeroed before compression.
    pub theta: f64,
    pub ratio: Ratio,
    pub index_width: IndexWidth,
    #[serde(default)]
    pub policy: LayerPolicy,
    /// Whether the attention output projection counts as a non-attention
    /// linear layer.
    #[serde(default = "default_true")]
    pub include_out_proj: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rows")]
    pub rows: usize,
    /// Permits theta below the operating point for `ratio`.
    #[serde(default)]
    pub allow_below_table: bool,
}

impl CompressionConfig {
    pub fn new(theta: f64, ratio: Ratio, index_width: IndexWidth) -> Self {
        Self {
            theta,
            ratio,
            index_width,
            policy: LayerPolicy::default(),
            include_out_proj: true,
            seed: 0,
            rows: DEFAULT_ROWS,
            allow_below_table: false,
        }
    }

    /// No sparsification and no codec: compressed layers travel dense.
    pub fn bypass() -> Self {
        Self::new(0.0, Ratio::Bypass, IndexWidth::Four)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_policy(mut self, policy: LayerPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=100.0).contains(&self.theta) {
            return Err(ConfigError::ThetaOutOfRange(self.theta));
        }
        if self.rows == 0 {
            return Err(ConfigError::NoRows);
        }
        let min = min_theta(self.ratio);
        if self.theta < min && !self.allow_below_table {
            return Err(ConfigError::BelowTable {
                ratio: self.ratio.factor(),
                min,
                theta: self.theta,
            });
        }
        Ok(())
    }

    /// Validation plus the world-size bound of the index width.
    pub fn validate_for_world(&self, world_size: usize) -> Result<(), ConfigError> {
        self.validate()?;
        if world_size == 0 {
            return Err(ConfigError::WorldSize);
        }
        if self.index_width == IndexWidth::Four
            && !self.ratio.is_bypass()
            && world_size > MAX_NIBBLE_WORLD
        {
            return Err(ConfigError::NibbleOverflow(world_size));
        }
        Ok(())
    }
}

/// Contents of an exchange config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub compression: CompressionConfig,
    pub world_size: usize,
    pub mode: ExecMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExchangeFile {
    theta: f64,
    ratio: u32,
    index_width: u32,
    #[serde(default)]
    policy: LayerPolicy,
    #[serde(default = "default_true")]
    include_out_proj: bool,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_rows")]
    rows: usize,
    #[serde(default)]
    allow_below_table: bool,
    world_size: usize,
    #[serde(default)]
    mode: ExecMode,
}

impl ExchangeConfig {
    /// Parses and validates a key-value config such as
    ///
    /// ```toml
    /// theta = 98.75
    /// ratio = 10
    /// index_width = 1
    /// policy = "non_attention_linear"
    /// seed = 7
    /// world_size = 2
    /// mode = "sequential"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: ExchangeFile =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let ratio = Ratio::try_from(raw.ratio).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let index_width = IndexWidth::try_from(raw.index_width)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let compression = CompressionConfig {
            theta: raw.theta,
            ratio,
            index_width,
            policy: raw.policy,
            include_out_proj: raw.include_out_proj,
            seed: raw.seed,
            rows: raw.rows,
            allow_below_table: raw.allow_below_table,
        };
        compression.validate_for_world(raw.world_size)?;
        Ok(Self {
            compression,
            world_size: raw.world_size,
            mode: raw.mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operating_points_validate() {
        for (theta, ratio) in OPERATING_POINTS {
            CompressionConfig::new(theta, ratio, IndexWidth::Four)
                .validate()
                .unwrap();
        }
        CompressionConfig::bypass().validate().unwrap();
    }

    #[test]
    fn below_table_needs_override() {
        let mut c = CompressionConfig::new(50.0, Ratio::X10, IndexWidth::Four);
        assert_eq!(
            c.validate(),
            Err(ConfigError::BelowTable {
                ratio: 10,
                min: 98.75,
                theta: 50.0
            })
        );
        c.allow_below_table = true;
        c.validate().unwrap();
        assert!(CompressionConfig::new(89.9, Ratio::X4, IndexWidth::One)
            .validate()
            .is_err());
    }

    #[test]
    fn nibble_bound() {
        let c = CompressionConfig::new(90.0, Ratio::X4, IndexWidth::Four);
        assert_eq!(
            c.validate_for_world(16),
            Err(ConfigError::NibbleOverflow(16))
        );
        c.validate_for_world(15).unwrap();
        CompressionConfig::new(90.0, Ratio::X4, IndexWidth::One)
            .validate_for_world(64)
            .unwrap();
    }

    #[test]
    fn parses_file() {
        let cfg = ExchangeConfig::from_toml_str(
            "theta = 98.75\nratio = 10\nindex_width = 1\npolicy = \"non_attention_linear\"\nseed = 7\nworld_size = 2\nmode = \"parallel\"\n",
        )
        .unwrap();
        assert_eq!(cfg.compression.ratio, Ratio::X10);
        assert_eq!(cfg.compression.index_width, IndexWidth::One);
        assert_eq!(cfg.mode, ExecMode::Parallel);
        assert_eq!(cfg.world_size, 2);
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let err = ExchangeConfig::from_toml_str(
            "theta = 80\nratio = 2\nindex_width = 4\nworld_size = \"two\"\n",
        )
        .unwrap_err();
        let ConfigError::Parse(msg) = err else {
            panic!("{err:?}")
        };
        assert!(msg.contains("line 4"), "{msg}");
        let err = ExchangeConfig::from_toml_str(
            "theta = 80\nratio = 3\nindex_width = 4\nworld_size = 2\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let err = ExchangeConfig::from_toml_str(
            "theta = 80\nratio = 2\nindex_width = 4\nworld_size = 2\ncolour = 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = ExchangeConfig::from_toml_str(
            "theta = 70\nratio = 2\nindex_width = 4\nworld_size = 2\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::BelowTable { .. }));
    }
}
