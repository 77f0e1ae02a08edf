//! Flat `key = value` run configuration shared by the command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::kv;

use super::train::TrainConfig;

/// Everything a run needs: model, optimiser and data settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Corpus root containing `rgb/` (and optionally `pan/`).
    pub data: Option<PathBuf>,
    /// Label tile side.
    pub tile: usize,
    pub out: PathBuf,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: None,
            tile: 64,
            out: PathBuf::from("out"),
        }
    }
}

impl RunSettings {
    /// Applies one setting. `seed` drives both initialisation and data order.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.model.seed = kv::parse_value(key, value)?;
                self.train.seed = self.model.seed;
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "tile" => self.tile = kv::parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => {
                if !self.model.set(key, value)? && !self.train.set(key, value)? {
                    return Err(Error::config(format!("unknown setting {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Task;

    #[test]
    fn file_values_then_overrides() {
        let mut s = RunSettings::default();
        s.apply_text("task = sr_x4\ndepth = 3\nlr = 0.001\nseed = 7\ndata = corpus\n").unwrap();
        assert_eq!((s.model.task, s.model.depth, s.train.lr), (Task::SrX4, 3, 1e-3));
        assert_eq!((s.model.seed, s.train.seed), (7, 7));
        s.set("depth", "2").unwrap();
        assert_eq!(s.model.depth, 2);
        assert!(matches!(s.set("colour", "red"), Err(Error::Config(_))));
        assert!(s.apply_text("lr = fast").is_err());
    }
}
