//! Pipeline settings: built-in defaults, an optional `key = value` file,
//! then command-line flags, each overriding the previous.

use std::path::Path;

use egoflow::{BLOCK_LEN, BLOCK_STRIDE, DEFAULT_ETA, GRID_SIZE, TARGET_FPS};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fps: f64,
    pub grid: usize,
    pub block_len: usize,
    pub block_overlap: usize,
    pub eta: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = egoflow::TrainConfig::default();
        PipelineConfig {
            fps: TARGET_FPS,
            grid: GRID_SIZE,
            block_len: BLOCK_LEN,
            block_overlap: BLOCK_LEN - BLOCK_STRIDE,
            eta: DEFAULT_ETA,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            iterations: train.iterations,
            seed: train.seed,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("config: bad value {value:?} for {key}")))
}

impl PipelineConfig {
    /// Applies `key = value` lines. `#` starts a comment. The frame rate,
    /// grid and block geometry are fixed by the data formats, so the file
    /// may restate them but not change them.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected key = value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            let fixed = |current: f64, wanted: f64| {
                if current == wanted {
                    Ok(())
                } else {
                    Err(CliError::usage(format!(
                        "config: {key} is fixed at {current} by the data formats"
                    )))
                }
            };
            match key {
                "fps" => fixed(self.fps, parse(key, value)?)?,
                "grid" => fixed(self.grid as f64, parse::<usize>(key, value)? as f64)?,
                "block_len" => fixed(self.block_len as f64, parse::<usize>(key, value)? as f64)?,
                "block_overlap" => fixed(
                    self.block_overlap as f64,
                    parse::<usize>(key, value)? as f64,
                )?,
                "eta" => self.eta = parse(key, value)?,
                "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
                "batch_size" | "batch" => self.batch_size = parse(key, value)?,
                "iterations" | "iters" => self.iterations = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                _ => return Err(CliError::usage(format!("config: unknown key {key:?}"))),
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// The settings in the file syntax accepted by [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        format!(
            "fps = {}\ngrid = {}\nblock_len = {}\nblock_overlap = {}\neta = {}\n\
             learning_rate = {}\nbatch_size = {}\niterations = {}\nseed = {}\n",
            self.fps,
            self.grid,
            self.block_len,
            self.block_overlap,
            self.eta,
            self.learning_rate,
            self.batch_size,
            self.iterations,
            self.seed
        )
    }

    pub fn train_config(&self, mode: egoflow::TrainMode) -> egoflow::TrainConfig {
        egoflow::TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            seed: self.seed,
            mode,
        }
    }
}
