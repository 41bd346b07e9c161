use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FusionError;

/// A `(llm, lvlm)` weighting, written `[llm, lvlm]` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 2]", into = "[f32; 2]")]
pub struct WeightPair {
    pub llm: f32,
    pub lvlm: f32,
}

impl WeightPair {
    pub const fn new(llm: f32, lvlm: f32) -> Self {
        Self { llm, lvlm }
    }

    pub const ONES: WeightPair = WeightPair::new(1.0, 1.0);
}

impl From<[f32; 2]> for WeightPair {
    fn from(v: [f32; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<WeightPair> for [f32; 2] {
    fn from(p: WeightPair) -> Self {
        [p.llm, p.lvlm]
    }
}

impl fmt::Display for WeightPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.llm, self.lvlm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Last token of one branch merged with the last token of the other.
    #[default]
    Pairwise,
    /// The other branch's last token merged into every position.
    Broadcast,
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMode::Pairwise => "pairwise",
            MergeMode::Broadcast => "broadcast",
        })
    }
}

pub const DEFAULT_MAX_NEW_TOKENS: usize = 64;
pub const DEFAULT_SEED: u64 = 42;

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Parameters of one fused decoding run.
///
/// `merge_layers` holds 1-based block indices; `-1` stands for the final
/// block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub head_weights: WeightPair,
    pub feature_weights: WeightPair,
    pub merge_layers: Vec<i32>,
    #[serde(default)]
    pub isolate_lvlm: bool,
    #[serde(default)]
    pub sum_all: bool,
    #[serde(default)]
    pub merge_mode: MergeMode,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl FusionConfig {
    /// Equal weights merged after the final block only.
    pub fn symmetric() -> Self {
        Self {
            head_weights: WeightPair::new(0.5, 0.5),
            feature_weights: WeightPair::new(0.5, 0.5),
            merge_layers: vec![-1],
            isolate_lvlm: false,
            sum_all: false,
            merge_mode: MergeMode::Pairwise,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FusionError> {
        let cfg: FusionConfig =
            toml::from_str(text).map_err(|e| FusionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FusionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| FusionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| FusionError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        for (name, p) in [
            ("head_weights", self.head_weights),
            ("feature_weights", self.feature_weights),
        ] {
            if !(p.llm.is_finite() && p.lvlm.is_finite() && p.llm >= 0.0 && p.lvlm >= 0.0) {
                return Err(FusionError::Config(format!(
                    "{name} must be non-negative finite reals, got {p}"
                )));
            }
        }
        if let Some(bad) = self.merge_layers.iter().find(|&&l| l == 0 || l < -1) {
            return Err(FusionError::Config(format!(
                "merge layer {bad} is invalid; use 1-based indices or -1 for the final layer"
            )));
        }
        Ok(())
    }

    /// Merge layers as sorted, deduplicated 1-based indices for a stack of
    /// `num_layers` blocks.
    pub fn resolved_merge_layers(&self, num_layers: usize) -> Result<Vec<usize>, FusionError> {
        let mut out = Vec::with_capacity(self.merge_layers.len());
        for &l in &self.merge_layers {
            out.push(resolve_layer(l, num_layers)?);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Compact label used in sweep outputs, e.g. `h0.9-0.1_f0.9-0.1_l25,26,27,-1_iso1_sum1`.
    pub fn label(&self) -> String {
        let layers: Vec<String> = self.merge_layers.iter().map(i32::to_string).collect();
        let mut s = format!(
            "h{}-{}_f{}-{}_l{}_iso{}_sum{}",
            self.head_weights.llm,
            self.head_weights.lvlm,
            self.feature_weights.llm,
            self.feature_weights.lvlm,
            layers.join(","),
            u8::from(self.isolate_lvlm),
            u8::from(self.sum_all),
        );
        if self.merge_mode == MergeMode::Broadcast {
            s.push_str("_broadcast");
        }
        s
    }
}

pub(crate) fn resolve_layer(layer: i32, num_layers: usize) -> Result<usize, FusionError> {
    let resolved = match layer {
        -1 => num_layers,
        l if l >= 1 && (l as usize) <= num_layers => l as usize,
        _ => {
            return Err(FusionError::Config(format!(
                "merge layer {layer} is outside 1..={num_layers} (or -1)"
            )))
        }
    };
    Ok(resolved)
}

/// Weights used when merging after `layer`.
///
/// With `sum_all` every merge layer except the last one in the set uses
/// `(1.0, 1.0)`; the last one uses the configured feature weights.
pub fn effective_layer_weights(
    config: &FusionConfig,
    layer: i32,
    num_layers: usize,
) -> Result<WeightPair, FusionError> {
    let resolved = resolve_layer(layer, num_layers)?;
    let layers = config.resolved_merge_layers(num_layers)?;
    if !layers.contains(&resolved) {
        return Err(FusionError::Config(format!(
            "layer {layer} is not a merge layer of {:?}",
            config.merge_layers
        )));
    }
    let final_merge = *layers.last().expect("non-empty: contains resolved");
    if config.sum_all && resolved != final_merge {
        Ok(WeightPair::ONES)
    } else {
        Ok(config.feature_weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_all_cfg(sum_all: bool) -> FusionConfig {
        FusionConfig {
            feature_weights: WeightPair::new(0.9, 0.1),
            merge_layers: vec![25, 26, 27, -1],
            sum_all,
            ..FusionConfig::symmetric()
        }
    }

    #[test]
    fn sum_all_uses_ones_before_final() {
        let cfg = sum_all_cfg(true);
        for l in [25, 26, 27] {
            assert_eq!(
                effective_layer_weights(&cfg, l, 28).unwrap(),
                WeightPair::ONES
            );
        }
        assert_eq!(
            effective_layer_weights(&cfg, -1, 28).unwrap(),
            WeightPair::new(0.9, 0.1)
        );
        assert_eq!(
            effective_layer_weights(&cfg, 28, 28).unwrap(),
            WeightPair::new(0.9, 0.1)
        );
    }

    #[test]
    fn sum_all_off_uses_feature_weights() {
        let cfg = sum_all_cfg(false);
        for l in [25, 26, 27, -1] {
            assert_eq!(
                effective_layer_weights(&cfg, l, 28).unwrap(),
                WeightPair::new(0.9, 0.1)
            );
        }
    }

    #[test]
    fn non_merge_layer_is_error() {
        assert!(effective_layer_weights(&sum_all_cfg(true), 3, 28).is_err());
        assert!(effective_layer_weights(&sum_all_cfg(true), 29, 28).is_err());
    }

    #[test]
    fn resolve_dedupes_alias() {
        let cfg = FusionConfig {
            merge_layers: vec![-1, 4, 2, 4],
            ..FusionConfig::symmetric()
        };
        assert_eq!(cfg.resolved_merge_layers(4).unwrap(), vec![2, 4]);
        assert!(cfg.resolved_merge_layers(3).is_err());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let text = r#"
head_weights = [0.9, 0.1]
feature_weights = [0.3, 0.7]
merge_layers = [25, 26, 27, -1]
isolate_lvlm = true
sum_all = false
merge_mode = "broadcast"
max_new_tokens = 16
seed = 42
"#;
        let cfg = FusionConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.head_weights, WeightPair::new(0.9, 0.1));
        assert_eq!(cfg.merge_mode, MergeMode::Broadcast);
        assert_eq!(
            FusionConfig::from_toml_str(&cfg.to_toml_string()).unwrap(),
            cfg
        );

        let bad = format!("{text}temperature = 0.7\n");
        assert!(matches!(
            FusionConfig::from_toml_str(&bad),
            Err(FusionError::Config(_))
        ));
    }

    #[test]
    fn negative_weights_rejected() {
        let text =
            "head_weights = [-0.1, 1.0]\nfeature_weights = [0.5, 0.5]\nmerge_layers = [-1]\n";
        assert!(FusionConfig::from_toml_str(text).is_err());
        let text = "head_weights = [0.1, 1.0]\nfeature_weights = [0.5, 0.5]\nmerge_layers = [0]\n";
        assert!(FusionConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn label_is_stable() {
        let cfg = FusionConfig {
            head_weights: WeightPair::new(0.9, 0.1),
            isolate_lvlm: true,
            sum_all: true,
            ..sum_all_cfg(true)
        };
        assert_eq!(cfg.label(), "h0.9-0.1_f0.9-0.1_l25,26,27,-1_iso1_sum1");
    }
}
