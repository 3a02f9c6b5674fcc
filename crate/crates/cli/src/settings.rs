//! Resolved run configuration: defaults, then a `key = value` file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use eiu_core::model::Ei2Config;
use eiu_core::tools::SynthConfig;
use eiu_core::train::TrainConfig;
use eiu_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub model: Ei2Config,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

const SECTIONS: [&str; 3] = ["model", "train", "synth"];

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value, found \"{line}\"", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// JSON if the text parses as JSON, otherwise a bare string. `7:1:2` style
/// triples become arrays.
fn value_of(text: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        return v;
    }
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() > 1 {
        let nums: Option<Vec<Value>> = parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .ok()
                    .and_then(|x| serde_json::Number::from_f64(x).map(Value::Number))
            })
            .collect();
        if let Some(nums) = nums {
            return Value::Array(nums);
        }
    }
    Value::String(text.to_string())
}

impl Settings {
    /// Applies `section.key = value` or `key = value` (every section that
    /// has the key).
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let root = tree.as_object_mut().expect("settings serialize to an object");
        for (key, raw) in pairs {
            let value = value_of(raw);
            let (sections, field): (Vec<&str>, &str) = match key.split_once('.') {
                Some((s, f)) if SECTIONS.contains(&s) => (vec![s], f),
                Some(_) => return Err(Error::Usage(format!("unknown config section in \"{key}\""))),
                None => (SECTIONS.to_vec(), key.as_str()),
            };
            let mut hit = false;
            for s in sections {
                let obj: &mut Map<String, Value> = root[s].as_object_mut().expect("section object");
                if let Some(slot) = obj.get_mut(field) {
                    *slot = value.clone();
                    hit = true;
                }
            }
            if !hit {
                return Err(Error::Usage(format!("unknown config key \"{key}\"")));
            }
        }
        *self = serde_json::from_value(tree).map_err(|e| Error::Usage(format!("invalid config value: {e}")))?;
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            s.apply(&parse_config_text(&text)?)?;
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eiu_core::corpus::ModalitySet;
    use eiu_core::train::TaskMode;

    #[test]
    fn keys_resolve_by_section() {
        let mut s = Settings::default();
        let pairs = parse_config_text(
            "# comment\nmodel.hidden = 16\nlearning_rate=0.01\nseed = 9\nmodality_mask = ta\ntask_mode = emotion_only\nsplit_ratios = 8:1:1\n",
        )
        .unwrap();
        s.apply(&pairs).unwrap();
        assert_eq!(s.model.hidden, 16);
        assert_eq!(s.train.learning_rate, 0.01);
        assert_eq!((s.train.seed, s.synth.seed), (9, 9));
        assert_eq!(s.model.modality_mask, "ta".parse::<ModalitySet>().unwrap());
        assert_eq!(s.train.task_mode, TaskMode::EmotionOnly);
        assert_eq!(s.synth.split_ratios, Some([8.0, 1.0, 1.0]));
    }

    #[test]
    fn bad_keys_are_usage_errors() {
        let mut s = Settings::default();
        let bad = [("nope".to_string(), "1".to_string())];
        assert!(matches!(s.apply(&bad), Err(Error::Usage(_))));
        let bad = [("model.hidden".to_string(), "big".to_string())];
        assert!(matches!(s.apply(&bad), Err(Error::Usage(_))));
        assert!(parse_config_text("no equals sign").is_err());
    }
}
