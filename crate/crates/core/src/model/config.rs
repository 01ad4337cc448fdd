use serde::{Deserialize, Serialize};

use super::ModelError;

/// Topology of a tower network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtnConfig {
    /// Number of levels (horizontal streams), M.
    pub levels: usize,
    /// Convolutions per level, N.
    pub layers: usize,
    /// Kernels per convolution.
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// LSTM width S, shared by every level.
    pub lstm_size: usize,
    /// Width A of the merged layer.
    pub concat_size: usize,
    /// Side of the square single-channel observation.
    pub input_side: usize,
    /// One policy head is built per distinct size.
    pub action_space_sizes: Vec<usize>,
}

impl Default for GtnConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            layers: 4,
            channels: 32,
            kernel: 3,
            stride: 2,
            lstm_size: 288,
            concat_size: 288,
            input_side: 42,
            action_space_sizes: vec![2, 4, 6],
        }
    }
}

/// Input geometry of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelGeometry {
    pub input_channels: usize,
    pub input_side: usize,
    /// Side after the level's last convolution.
    pub output_side: usize,
    /// Width of the flattened conv output fed to the level's LSTM.
    pub flatten_width: usize,
}

impl GtnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("levels", self.levels),
            ("layers", self.layers),
            ("channels", self.channels),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("lstm_size", self.lstm_size),
            ("concat_size", self.concat_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("`{name}` must be at least 1")));
            }
        }
        if self.action_space_sizes.is_empty() {
            return Err(ModelError::Config("`action_space_sizes` must not be empty".into()));
        }
        let mut sorted = self.action_space_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.action_space_sizes.len() {
            return Err(ModelError::Config("`action_space_sizes` entries must be distinct".into()));
        }
        if sorted[0] == 0 {
            return Err(ModelError::Config("action space sizes must be positive".into()));
        }
        self.level_geometry().map(|_| ())
    }

    /// Per-level geometry, checking that no conv chain collapses below one pixel.
    pub fn level_geometry(&self) -> Result<Vec<LevelGeometry>, ModelError> {
        let mut out = Vec::with_capacity(self.levels);
        let mut side = self.input_side;
        let mut channels = 1;
        for level in 1..=self.levels {
            let input_side = side;
            let mut s = side;
            for layer in 1..=self.layers {
                if s < 1 {
                    return Err(ModelError::Config(format!(
                        "spatial side collapses below 1 at level {level}, layer {layer}"
                    )));
                }
                s = s.div_ceil(self.stride);
                if layer == 1 {
                    // the next level taps this level's first convolution
                    side = s;
                }
            }
            out.push(LevelGeometry {
                input_channels: channels,
                input_side,
                output_side: s,
                flatten_width: self.channels * s * s,
            });
            channels = self.channels;
        }
        Ok(out)
    }

    /// Sorted distinct head sizes.
    pub fn head_sizes(&self) -> Vec<usize> {
        let mut sizes = self.action_space_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }

    /// Key/value text used in checkpoint headers.
    pub fn to_kv_text(&self) -> String {
        let sizes: Vec<String> = self.action_space_sizes.iter().map(usize::to_string).collect();
        format!(
            "levels={}\nlayers={}\nchannels={}\nkernel={}\nstride={}\nlstm_size={}\nconcat_size={}\ninput_side={}\naction_space_sizes={}\n",
            self.levels,
            self.layers,
            self.channels,
            self.kernel,
            self.stride,
            self.lstm_size,
            self.concat_size,
            self.input_side,
            sizes.join(",")
        )
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = GtnConfig::default();
        let mut seen = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ModelError::Config(format!("line {}: expected key=value", lineno + 1)));
            };
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| ModelError::Config(format!("line {}: `{key}`: {e}", lineno + 1)))
            };
            match key.trim() {
                "levels" => cfg.levels = parse(value)?,
                "layers" => cfg.layers = parse(value)?,
                "channels" => cfg.channels = parse(value)?,
                "kernel" => cfg.kernel = parse(value)?,
                "stride" => cfg.stride = parse(value)?,
                "lstm_size" => cfg.lstm_size = parse(value)?,
                "concat_size" => cfg.concat_size = parse(value)?,
                "input_side" => cfg.input_side = parse(value)?,
                "action_space_sizes" => {
                    cfg.action_space_sizes = value.split(',').map(parse).collect::<Result<_, _>>()?;
                }
                other => {
                    return Err(ModelError::Config(format!("line {}: unknown key `{other}`", lineno + 1)));
                }
            }
            seen.push(key.trim().to_string());
        }
        for required in [
            "levels",
            "layers",
            "channels",
            "kernel",
            "stride",
            "lstm_size",
            "concat_size",
            "input_side",
            "action_space_sizes",
        ] {
            if !seen.iter().any(|k| k == required) {
                return Err(ModelError::Config(format!("missing key `{required}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
