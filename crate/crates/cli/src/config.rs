//! Pipeline configuration as a flat map of dotted keys.
//!
//! A config file is one JSON object such as
//! `{"seed": 3, "rig.radius": 4.0, "ik.max_iters": 50}`. Every key must name
//! a leaf of [`PipelineConfig`]; unknown keys and badly typed values are
//! rejected with the key in the message.

use std::collections::BTreeMap;
use std::path::Path;

use kinrecover::camera::RigParams;
use kinrecover::dataset::motion::MotionParams;
use kinrecover::dataset::NoiseSpec;
use kinrecover::ik::IkOptions;
use kinrecover::lifting::TrainConfig;
use kinrecover::pipeline::{RecoverOptions, RoundtripConfig, ThreeDSource};
use kinrecover::pnp::PnpOptions;
use kinrecover::{fixtures, KinematicModel};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Prefix of the model names that resolve to bundled fixtures.
pub const BUILTIN: &str = "builtin:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// URDF file, or `builtin:humanoid` / `builtin:planar_2link`.
    pub model_path: String,
    pub seed: u64,
    /// Frames per synthesized sequence.
    pub frames: usize,
    pub motion: MotionParams,
    pub rig: RigParams,
    pub distill_k: usize,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub source: ThreeDSource,
    pub ik: IkOptions,
    pub pnp: PnpOptions,
    pub pnp_chaining: bool,
    pub ema_alpha: f64,
    pub max_gap: usize,
    pub fps: f64,
    /// Camera used by `recover`, `eval` and `roundtrip`; `null` picks one.
    pub camera_id: Option<String>,
    pub pck_thresholds: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let recover = RecoverOptions::default();
        let rt = RoundtripConfig::default();
        Self {
            model_path: format!("{BUILTIN}humanoid"),
            seed: 0,
            frames: 100,
            motion: MotionParams::default(),
            rig: RigParams::default(),
            distill_k: 50,
            noise: NoiseSpec::none(),
            train: TrainConfig::default(),
            source: recover.source,
            ik: recover.ik,
            pnp: recover.pnp,
            pnp_chaining: recover.pnp_chaining,
            ema_alpha: recover.ema_alpha,
            max_gap: recover.max_gap,
            fps: recover.fps,
            camera_id: rt.camera_id,
            pck_thresholds: rt.pck_thresholds,
        }
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys never collide with leaves");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl PipelineConfig {
    pub fn flatten(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten_into("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    /// Applies `(key, value)` overrides in order.
    pub fn with_overrides<'a>(
        &self,
        overrides: impl IntoIterator<Item = (&'a str, Value)>,
    ) -> Result<Self, CliError> {
        let mut flat = self.flatten();
        for (key, value) in overrides {
            if !flat.contains_key(key) {
                return Err(CliError::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                });
            }
            // check this key alone so the error can name it
            let mut probe = self.flatten();
            probe.insert(key.to_string(), value.clone());
            if let Err(e) = serde_json::from_value::<PipelineConfig>(unflatten(&probe)) {
                return Err(CliError::Config {
                    key: key.to_string(),
                    message: e.to_string(),
                });
            }
            flat.insert(key.to_string(), value);
        }
        serde_json::from_value(unflatten(&flat)).map_err(|e| CliError::Config {
            key: "<config>".into(),
            message: e.to_string(),
        })
    }

    /// Reads a flat config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut overrides: Vec<(String, Value)> = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
                key: p.display().to_string(),
                message: e.to_string(),
            })?;
            let Value::Object(map) = value else {
                return Err(CliError::Config {
                    key: p.display().to_string(),
                    message: "config must be a JSON object of dotted keys".into(),
                });
            };
            overrides.extend(map);
        }
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config {
                key: s.clone(),
                message: "expected key=value".into(),
            })?;
            // bare words are strings
            let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            overrides.push((k.to_string(), v));
        }
        let cfg = Self::default().with_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, message: String| CliError::Config {
            key: key.into(),
            message,
        };
        if self.frames == 0 {
            return Err(bad("frames", "must be at least 1".into()));
        }
        if self.distill_k == 0 {
            return Err(bad("distill_k", "must be at least 1".into()));
        }
        self.motion.validate().map_err(|e| bad("motion", e.to_string()))?;
        self.noise.validate().map_err(|e| bad("noise", e.to_string()))?;
        self.train.validate().map_err(|e| bad("train", e.to_string()))?;
        self.rig.intrinsics.validate().map_err(|e| bad("rig.intrinsics", e.to_string()))?;
        self.recover_options().validate().map_err(|e| bad("recover", e.to_string()))?;
        if self.pck_thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(bad("pck_thresholds", "thresholds must be positive".into()));
        }
        if !self.model_path.starts_with(BUILTIN) && !Path::new(&self.model_path).exists() {
            return Err(bad("model_path", format!("no such file `{}`", self.model_path)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical flat form (sorted keys).
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.flatten()).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn recover_options(&self) -> RecoverOptions {
        RecoverOptions {
            source: self.source,
            ik: self.ik,
            pnp: self.pnp,
            pnp_chaining: self.pnp_chaining,
            ema_alpha: self.ema_alpha,
            max_gap: self.max_gap,
            fps: self.fps,
        }
    }

    pub fn load_model(&self) -> Result<KinematicModel, CliError> {
        match self.model_path.strip_prefix(BUILTIN) {
            Some("humanoid") => Ok(fixtures::humanoid()),
            Some("planar_2link") => Ok(fixtures::planar_2link()),
            Some(other) => Err(CliError::Config {
                key: "model_path".into(),
                message: format!("unknown builtin model `{other}`"),
            }),
            None => {
                let path = Path::new(&self.model_path);
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                kinrecover::parse_model(&text).map_err(|e| CliError::Core {
                    stage: "model",
                    source: e,
                })
            }
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(serde_json::from_value::<PipelineConfig>(unflatten(&c.flatten())).unwrap(), c);
        assert!(c.flatten().contains_key("rig.intrinsics.fx"));
        assert!(c.flatten().contains_key("ik.max_iters"));
    }

    #[test]
    fn overrides_name_bad_keys() {
        let c = PipelineConfig::default();
        let e = c.with_overrides([("rig.radiuss", Value::from(2.0))]).unwrap_err();
        assert!(e.to_string().contains("rig.radiuss"), "{e}");
        let e = c.with_overrides([("ik.max_iters", Value::from("many"))]).unwrap_err();
        assert!(e.to_string().contains("ik.max_iters"), "{e}");
        let ok = c.with_overrides([("rig.radius", Value::from(4.5))]).unwrap();
        assert_eq!(ok.rig.radius, 4.5);
        assert_ne!(ok.hash(), c.hash());
    }

    #[test]
    fn set_flags_parse_json_or_words() {
        let c = PipelineConfig::load(None, &["camera_id=side_090".into(), "noise.pixel_sigma=1.5".into()]).unwrap();
        assert_eq!(c.camera_id.as_deref(), Some("side_090"));
        assert_eq!(c.noise.pixel_sigma, 1.5);
        assert!(PipelineConfig::load(None, &["frames".into()]).is_err());
        let e = PipelineConfig::load(None, &["model_path=/nonexistent/robot.urdf".into()]).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/robot.urdf"));
    }
}
