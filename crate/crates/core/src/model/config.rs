use crate::error::{Error, Result};

/// Number of spatial experts (one per feature-map quadrant).
pub const EXPERTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Frames per chunk (T).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Output channels of each encoder conv block.
    pub encoder_channels: Vec<usize>,
    /// Side of the square encoder output map.
    pub feature_size: usize,
    /// Hidden width of the gate; 0 means a single linear layer.
    pub gate_hidden: usize,
    /// Remove each pixel's temporal mean and rescale the chunk to unit
    /// variance before encoding.
    pub input_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 60,
            height: 64,
            width: 64,
            in_channels: 3,
            encoder_channels: vec![16, 32, 32, 32],
            feature_size: 8,
            gate_hidden: 0,
            input_norm: true,
        }
    }
}

impl ModelConfig {
    /// Feature channels C seen by the experts.
    pub fn channels(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&self.in_channels)
    }

    /// Side of one quadrant of the feature map.
    pub fn quadrant_size(&self) -> usize {
        self.feature_size / 2
    }

    /// Number of 2x2 poolings that take the input down to `feature_size`.
    pub fn pool_count(&self) -> usize {
        let mut s = self.height;
        let mut n = 0;
        while s > self.feature_size && s.is_multiple_of(2) {
            s /= 2;
            n += 1;
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.frames < 2 {
            return fail(format!("frames must be >= 2, got {}", self.frames));
        }
        if self.in_channels == 0 || self.encoder_channels.contains(&0) {
            return fail("channel counts must be positive".into());
        }
        if self.encoder_channels.is_empty() {
            return fail("encoder needs at least one conv block".into());
        }
        if self.feature_size == 0 || !self.feature_size.is_multiple_of(2) {
            return fail(format!("feature size {} must be even", self.feature_size));
        }
        if self.height != self.width {
            return fail(format!("frames must be square, got {}x{}", self.height, self.width));
        }
        let pools = self.pool_count();
        if self.height >> pools != self.feature_size || !self.height.is_multiple_of(1 << pools) {
            return fail(format!(
                "input side {} does not halve down to feature size {}",
                self.height, self.feature_size
            ));
        }
        if pools > self.encoder_channels.len() {
            return fail(format!(
                "{} encoder blocks cannot perform {pools} poolings",
                self.encoder_channels.len()
            ));
        }
        Ok(())
    }
}
