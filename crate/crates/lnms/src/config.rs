//! Run configuration: one JSON document that fixes every knob of an
//! experiment, plus the variant table.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use lnms_core::synth::SynthConfig;
use lnms_core::train::TrainConfig;
use lnms_core::{FeatureConfig, NetConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{LnmsError, Result};

/// Network input variants; each fixes the IoU branch and the score-map thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "S1")]
    S1,
    #[serde(rename = "IoU+S1")]
    IouS1,
    #[serde(rename = "IoU+S1_03")]
    IouS1S03,
    #[serde(rename = "IoU+S1_full")]
    IouFull,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::S1, Variant::IouS1, Variant::IouS1S03, Variant::IouFull];

    pub fn name(self) -> &'static str {
        match self {
            Variant::S1 => "S1",
            Variant::IouS1 => "IoU+S1",
            Variant::IouS1S03 => "IoU+S1_03",
            Variant::IouFull => "IoU+S1_full",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::S1 => "s1",
            Variant::IouS1 => "iou_s1",
            Variant::IouS1S03 => "iou_s1_03",
            Variant::IouFull => "iou_s1_full",
        }
    }

    pub fn uses_iou(self) -> bool {
        self != Variant::S1
    }

    pub fn thresholds(self) -> Vec<f64> {
        match self {
            Variant::S1 | Variant::IouS1 => vec![1.0],
            Variant::IouS1S03 => vec![1.0, 0.3],
            Variant::IouFull => vec![1.0, 0.6, 0.4, 0.3, 0.2, 0.0],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.slug() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected one of S1, IoU+S1, IoU+S1_03, IoU+S1_full)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 5000,
            val: 500,
            test: 1000,
        }
    }
}

/// Grid geometry shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    pub cell_size: u32,
    pub neighborhood: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        let f = FeatureConfig::default();
        GridOptions {
            cell_size: f.cell_size,
            neighborhood: f.neighborhood,
        }
    }
}

/// Layer widths; the input channel counts follow from the variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetWidths {
    pub first_filter_size: usize,
    pub first_filters: usize,
    pub mid_filters: usize,
    pub mid_layers: usize,
}

impl Default for NetWidths {
    fn default() -> Self {
        let n = NetConfig::default();
        NetWidths {
            first_filter_size: n.first_filter_size,
            first_filters: n.first_filters,
            mid_filters: n.mid_filters,
            mid_layers: n.mid_layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub match_iou: f64,
    pub sweep_taus: Vec<f64>,
    /// Upper bound on rows per PR curve in CSV output.
    pub pr_max_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            match_iou: 0.5,
            sweep_taus: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0],
            pr_max_points: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub splits: SplitSizes,
    pub synth: SynthConfig,
    pub grid: GridOptions,
    pub net: NetWidths,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Draw a new scene every training iteration instead of sampling the train split.
    pub fresh_scenes: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LnmsError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LnmsError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Sets one dotted key (`train.learning_rate`) from a JSON literal; bare
    /// words that are not JSON are taken as strings.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), String> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| format!("unknown config key `{key}`"))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(tree).map_err(|e| format!("bad value for `{key}`: {e}"))?;
        Ok(())
    }

    pub fn features(&self, variant: Variant) -> FeatureConfig {
        FeatureConfig {
            cell_size: self.grid.cell_size,
            neighborhood: self.grid.neighborhood,
            use_iou: variant.uses_iou(),
            thresholds: variant.thresholds(),
        }
    }

    pub fn net_config(&self, variant: Variant) -> NetConfig {
        NetConfig {
            first_filter_size: self.net.first_filter_size,
            first_filters: self.net.first_filters,
            mid_filters: self.net.mid_filters,
            mid_layers: self.net.mid_layers,
            ..NetConfig::default()
        }
        .for_features(&self.features(variant))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        for v in Variant::ALL {
            self.features(v).validate()?;
            self.net_config(v).validate()?;
        }
        for &tau in &self.eval.sweep_taus {
            lnms_core::nms::check_tau(tau)?;
        }
        Ok(())
    }

    /// Identifies the experiment: everything except the training seed,
    /// which distinguishes runs within one experiment.
    pub fn config_hash(&self) -> String {
        let mut shared = self.clone();
        shared.train.seed = 0;
        let digest = Sha256::digest(serde_json::to_vec(&shared).expect("config serializes"));
        hex::encode(&digest[..8])
    }
}
