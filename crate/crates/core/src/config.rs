use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the two-stage sharpening plus stage switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsasConfig {
    /// Number of top columns averaged in the combined flow.
    pub top_k: usize,
    /// Fraction of final layers that receive the intervention, in (0, 1].
    pub layer_fraction: f64,
    /// Exponent on the position-aware weight.
    pub alpha: f64,
    /// Floor of the final gate weights, in [0, 1].
    pub beta: f64,
    pub cgw_enabled: bool,
    pub ras_enabled: bool,
    /// When false the position-aware weight is ignored (same as `alpha = 0`).
    pub position_weight_enabled: bool,
}

impl Default for DsasConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            layer_fraction: 0.5,
            alpha: 1.0,
            beta: 0.7,
            cgw_enabled: true,
            ras_enabled: true,
            position_weight_enabled: true,
        }
    }
}

impl DsasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be positive".into()));
        }
        if !(self.layer_fraction > 0.0 && self.layer_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "layer_fraction {} outside (0, 1]",
                self.layer_fraction
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta {} outside [0, 1]", self.beta)));
        }
        Ok(())
    }

    /// Exponent actually applied to the position-aware weight.
    pub fn effective_alpha(&self) -> f64 {
        if self.position_weight_enabled {
            self.alpha
        } else {
            0.0
        }
    }

    /// Number of trailing layers selected out of `num_layers`: `ceil(n * layers)`.
    pub fn selected_layer_count(&self, num_layers: usize) -> usize {
        // guard against products like 0.7 * 10 = 7.000000000000001
        let raw = self.layer_fraction * num_layers as f64;
        let count = (raw - 1e-9).ceil().max(0.0) as usize;
        count.min(num_layers)
    }

    /// Indices of the selected (final) layers, ascending.
    pub fn selected_layers(&self, num_layers: usize) -> std::ops::Range<usize> {
        num_layers - self.selected_layer_count(num_layers)..num_layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = DsasConfig::default();
        assert_eq!(c.top_k, 10);
        assert_eq!(c.layer_fraction, 0.5);
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.beta, 0.7);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn layer_selection() {
        let mut c = DsasConfig::default();
        assert_eq!(c.selected_layers(8), 4..8);
        c.layer_fraction = 0.75;
        assert_eq!(c.selected_layers(8), 2..8);
        c.layer_fraction = 0.25;
        assert_eq!(c.selected_layers(6), 4..6);
        c.layer_fraction = 0.7;
        assert_eq!(c.selected_layer_count(10), 7);
        c.layer_fraction = 1.0;
        assert_eq!(c.selected_layers(3), 0..3);
        c.layer_fraction = 0.01;
        assert_eq!(c.selected_layer_count(8), 1);
    }

    #[test]
    fn invalid_values() {
        let bad = [
            DsasConfig { top_k: 0, ..Default::default() },
            DsasConfig { layer_fraction: 0.0, ..Default::default() },
            DsasConfig { layer_fraction: 1.5, ..Default::default() },
            DsasConfig { alpha: -1.0, ..Default::default() },
            DsasConfig { beta: 1.1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
