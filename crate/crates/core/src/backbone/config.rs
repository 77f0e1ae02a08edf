use std::fmt;
use std::str::FromStr;

use crate::dpa::DpaMode;
use crate::error::{Error, Result};
use crate::kv;
use crate::ssm::{DirectionSet, MergeMode, ZohMode};

/// The restoration task a model is built for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Task {
    /// PAN super-resolution ×2.
    SrX2,
    /// PAN super-resolution ×4.
    SrX4,
    /// Spectral recovery: PAN → RGB at the same resolution.
    Colorize,
    /// Super-resolution ×2 and spectral recovery in one pass.
    #[default]
    JointX2,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::SrX2, Task::SrX4, Task::Colorize, Task::JointX2];

    pub fn tag(self) -> &'static str {
        match self {
            Task::SrX2 => "sr_x2",
            Task::SrX4 => "sr_x4",
            Task::Colorize => "colorize",
            Task::JointX2 => "joint_x2",
        }
    }

    pub fn sr_factor(self) -> usize {
        match self {
            Task::SrX2 | Task::JointX2 => 2,
            Task::SrX4 => 4,
            Task::Colorize => 1,
        }
    }

    pub fn out_channels(self) -> usize {
        match self {
            Task::SrX2 | Task::SrX4 => 1,
            Task::Colorize | Task::JointX2 => 3,
        }
    }

    /// Input side length used in the reference experiments (256-pixel labels).
    pub fn reference_input_size(self) -> usize {
        256 / self.sr_factor()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.tag() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown task {s:?} (expected sr_x2, sr_x4, colorize or joint_x2)")))
    }
}

/// Input/output contract of a task at a given input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub task: Task,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_size: usize,
    pub output_size: usize,
    pub sr_factor: usize,
}

impl TaskSpec {
    pub fn new(task: Task, input_size: usize) -> Self {
        Self {
            task,
            in_channels: 1,
            out_channels: task.out_channels(),
            input_size,
            output_size: input_size * task.sr_factor(),
            sr_factor: task.sr_factor(),
        }
    }

    /// Spec for a label tile of side `tile`.
    pub fn for_tile(task: Task, tile: usize) -> Result<Self> {
        if tile == 0 || tile % task.sr_factor() != 0 {
            return Err(Error::config(format!(
                "tile size {tile} is not divisible by the {task} factor {}",
                task.sr_factor()
            )));
        }
        Ok(Self::new(task, tile / task.sr_factor()))
    }
}

/// Architecture and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    /// UNet++ depth (number of resolution levels), 2–4.
    pub depth: usize,
    /// Base channel width; level `ℓ` has `growth · 2^ℓ` channels.
    pub growth: usize,
    pub mhcb_count: usize,
    pub enable_dpa: bool,
    pub enable_mub: bool,
    pub enable_mhcb: bool,
    pub scan_dirs: DirectionSet,
    pub patch_grid: usize,
    pub state_size: usize,
    pub seed: u64,
    pub dpa_mode: DpaMode,
    pub scan_merge: MergeMode,
    pub zoh: ZohMode,
    /// Required input side length; `None` accepts any compatible size.
    pub input_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            task: Task::JointX2,
            depth: 4,
            growth: 32,
            mhcb_count: 2,
            enable_dpa: true,
            enable_mub: true,
            enable_mhcb: true,
            scan_dirs: DirectionSet::all(),
            patch_grid: 2,
            state_size: 16,
            seed: 10,
            dpa_mode: DpaMode::Dual,
            scan_merge: MergeMode::Sum,
            zoh: ZohMode::Standard,
            input_size: None,
        }
    }
}

/// A module that can be switched off for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationFlag {
    Dpa,
    Mub,
    Mhcb,
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dpa" => Ok(AblationFlag::Dpa),
            "mub" => Ok(AblationFlag::Mub),
            "mhcb" => Ok(AblationFlag::Mhcb),
            other => Err(Error::config(format!("unknown ablation flag {other:?}"))),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {v:?} for {key}"))),
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.depth) {
            return Err(Error::config(format!("depth must be 2, 3 or 4, got {}", self.depth)));
        }
        if self.growth == 0 {
            return Err(Error::config("growth rate must be at least 1"));
        }
        if !(1..=3).contains(&self.patch_grid) {
            return Err(Error::config(format!("patch grid must be 1, 2 or 3, got {}", self.patch_grid)));
        }
        if self.state_size == 0 {
            return Err(Error::config("state size must be at least 1"));
        }
        Ok(())
    }

    /// Channel width at every level.
    pub fn level_widths(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.growth << l).collect()
    }

    pub fn task_spec(&self, input_size: usize) -> TaskSpec {
        TaskSpec::new(self.task, input_size)
    }

    /// Effective number of stem blocks.
    pub fn stem_blocks(&self) -> usize {
        if self.enable_mhcb {
            self.mhcb_count
        } else {
            0
        }
    }

    /// The configuration with one module replaced by its structural fallback.
    pub fn ablate(&self, flag: AblationFlag) -> ModelConfig {
        let mut cfg = self.clone();
        match flag {
            AblationFlag::Dpa => cfg.enable_dpa = false,
            AblationFlag::Mub => cfg.enable_mub = false,
            AblationFlag::Mhcb => {
                cfg.enable_mhcb = false;
                cfg.mhcb_count = 0;
            }
        }
        cfg
    }

    /// Applies one `key = value` setting. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "task" => self.task = value.parse()?,
            "depth" => self.depth = kv::parse_value(key, value)?,
            "growth" => self.growth = kv::parse_value(key, value)?,
            "mhcb_count" => self.mhcb_count = kv::parse_value(key, value)?,
            "enable_dpa" => self.enable_dpa = parse_bool(key, value)?,
            "enable_mub" => self.enable_mub = parse_bool(key, value)?,
            "enable_mhcb" => self.enable_mhcb = parse_bool(key, value)?,
            "scan_dirs" => self.scan_dirs = value.parse()?,
            "patch_grid" | "patches" => self.patch_grid = kv::parse_value(key, value)?,
            "state_size" => self.state_size = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "dpa_mode" => {
                self.dpa_mode = match value {
                    "dual" => DpaMode::Dual,
                    "printed" => DpaMode::PrintedAvgTwice,
                    _ => return Err(Error::config(format!("invalid dpa_mode {value:?}"))),
                }
            }
            "scan_merge" => {
                self.scan_merge = match value {
                    "sum" => MergeMode::Sum,
                    "mean" => MergeMode::Mean,
                    _ => return Err(Error::config(format!("invalid scan_merge {value:?}"))),
                }
            }
            "zoh" => {
                self.zoh = match value {
                    "standard" => ZohMode::Standard,
                    "printed" => ZohMode::PrintedExpA,
                    _ => return Err(Error::config(format!("invalid zoh {value:?}"))),
                }
            }
            "input_size" => {
                let n: usize = kv::parse_value(key, value)?;
                self.input_size = (n > 0).then_some(n);
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Serialises to `key = value` lines accepted by [`ModelConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("task", self.task.to_string());
        put("depth", self.depth.to_string());
        put("growth", self.growth.to_string());
        put("mhcb_count", self.mhcb_count.to_string());
        put("enable_dpa", self.enable_dpa.to_string());
        put("enable_mub", self.enable_mub.to_string());
        put("enable_mhcb", self.enable_mhcb.to_string());
        put("scan_dirs", self.scan_dirs.to_string());
        put("patch_grid", self.patch_grid.to_string());
        put("state_size", self.state_size.to_string());
        put("seed", self.seed.to_string());
        put(
            "dpa_mode",
            match self.dpa_mode {
                DpaMode::Dual => "dual",
                DpaMode::PrintedAvgTwice => "printed",
            }
            .into(),
        );
        put(
            "scan_merge",
            match self.scan_merge {
                MergeMode::Sum => "sum",
                MergeMode::Mean => "mean",
            }
            .into(),
        );
        put(
            "zoh",
            match self.zoh {
                ZohMode::Standard => "standard",
                ZohMode::PrintedExpA => "printed",
            }
            .into(),
        );
        put("input_size", self.input_size.unwrap_or(0).to_string());
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in kv::parse(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::config(format!("unknown model config key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
