//! Cartesian sweep grids over the five fusion parameters.

use std::fs;
use std::path::Path;

use dualfuse_core::fusion::{DEFAULT_MAX_NEW_TOKENS, DEFAULT_SEED};
use dualfuse_core::{FusionConfig, MergeMode, WeightPair};
use serde::{Deserialize, Serialize};

use crate::{io_err, EvalError};

/// The five `(llm, lvlm)` weightings tested for both the head and the
/// features.
pub const STANDARD_WEIGHT_PAIRS: [[f32; 2]; 5] =
    [[0.1, 0.9], [0.3, 0.7], [0.5, 0.5], [0.7, 0.3], [0.9, 0.1]];

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub head_weight_pairs: Vec<WeightPair>,
    pub feature_weight_pairs: Vec<WeightPair>,
    pub merge_layer_sets: Vec<Vec<i32>>,
    pub isolate_options: Vec<bool>,
    pub sum_all_options: Vec<bool>,
    #[serde(default)]
    pub merge_mode: MergeMode,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// One grid cell. `id` is its position in enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub id: usize,
    pub config: FusionConfig,
}

impl GridConfig {
    pub fn label(&self) -> String {
        self.config.label()
    }
}

impl SweepGrid {
    /// The 5 x 5 x 3 x 2 x 2 grid for a 28-block base model: merging after
    /// the last block, blocks 20..=28, or blocks 25..=28.
    pub fn standard() -> Self {
        let pairs: Vec<WeightPair> = STANDARD_WEIGHT_PAIRS.iter().map(|&p| p.into()).collect();
        let mut deep: Vec<i32> = (20..=27).collect();
        deep.push(-1);
        Self {
            head_weight_pairs: pairs.clone(),
            feature_weight_pairs: pairs,
            merge_layer_sets: vec![vec![-1], deep, vec![25, 26, 27, -1]],
            isolate_options: vec![false, true],
            sum_all_options: vec![false, true],
            merge_mode: MergeMode::Pairwise,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Parse {
            path: "<grid>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("grid serializes")
    }

    pub fn size(&self) -> usize {
        self.head_weight_pairs.len()
            * self.feature_weight_pairs.len()
            * self.merge_layer_sets.len()
            * self.isolate_options.len()
            * self.sum_all_options.len()
    }
}

/// Every grid cell, nested as head, feature, layers, isolate, sum_all
/// (outermost first), so ids are stable for a given grid.
pub fn enumerate_configs(grid: &SweepGrid) -> Result<Vec<GridConfig>, EvalError> {
    let axes = [
        ("head_weight_pairs", grid.head_weight_pairs.len()),
        ("feature_weight_pairs", grid.feature_weight_pairs.len()),
        ("merge_layer_sets", grid.merge_layer_sets.len()),
        ("isolate_options", grid.isolate_options.len()),
        ("sum_all_options", grid.sum_all_options.len()),
    ];
    if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
        return Err(EvalError::EmptyAxis(name));
    }
    let mut out = Vec::with_capacity(grid.size());
    for &head in &grid.head_weight_pairs {
        for &feature in &grid.feature_weight_pairs {
            for layers in &grid.merge_layer_sets {
                for &isolate in &grid.isolate_options {
                    for &sum_all in &grid.sum_all_options {
                        let config = FusionConfig {
                            head_weights: head,
                            feature_weights: feature,
                            merge_layers: layers.clone(),
                            isolate_lvlm: isolate,
                            sum_all,
                            merge_mode: grid.merge_mode,
                            max_new_tokens: grid.max_new_tokens,
                            seed: grid.seed,
                        };
                        config.validate()?;
                        out.push(GridConfig {
                            id: out.len(),
                            config,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}
