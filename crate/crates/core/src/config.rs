//! Run configuration: flat `key = value` text, `#` comments, unknown keys
//! rejected. Every field has a default, so an empty file is a valid config.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::curriculum::{AfterLast, SkillMix, SkillSchedule, TEST_BATCHES};
use crate::net::{Activation, HeadRates};
use crate::optim::Optimizer;
use crate::scene::{GridGeometry, PostureTable, BASE_JOINT_VALUE, JOINTS, POSTURE_OFFSETS, POSTURE_SPANS};
use crate::training::{
    Cadence, PhaseConfig, RunPlan, Study, World, CHECKPOINT_EVERY, EVAL_EVERY,
};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
}

fn value_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub study: u8,
    pub iterations_gesture: usize,
    pub iterations_recitation: usize,
    /// `None` uses the study's own length (2000, 2000, 1050).
    pub iterations_main: Option<usize>,
    pub gesture_pre_lr: f64,
    pub recitation_number_lr: f64,
    pub recitation_gesture_lr: f64,
    pub main_number_lr: f64,
    pub main_gesture_lr: f64,
    pub optimizer: Optimizer,
    pub visual_activation: Activation,
    pub schedule_start: SkillMix,
    pub schedule_end: SkillMix,
    pub after_last: AfterLast,
    pub geometry: GridGeometry,
    pub posture_offsets: [f64; JOINTS],
    pub posture_spans: [f64; JOINTS],
    pub base_joint_value: f64,
    pub test_batches: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![1, 2, 3, 4, 5],
            study: 1,
            iterations_gesture: 2000,
            iterations_recitation: 1000,
            iterations_main: None,
            gesture_pre_lr: 0.004,
            recitation_number_lr: 0.002,
            recitation_gesture_lr: 0.001,
            main_number_lr: 0.001,
            main_gesture_lr: 0.002,
            optimizer: Optimizer::default(),
            visual_activation: Activation::Relu,
            schedule_start: SkillSchedule::STANDARD.start,
            schedule_end: SkillSchedule::STANDARD.end,
            after_last: AfterLast::Hold,
            geometry: GridGeometry::COMPACT,
            posture_offsets: POSTURE_OFFSETS,
            posture_spans: POSTURE_SPANS,
            base_joint_value: BASE_JOINT_VALUE,
            test_batches: TEST_BATCHES,
            eval_every: EVAL_EVERY,
            checkpoint_every: CHECKPOINT_EVERY,
            jobs: 1,
            out: None,
        }
    }
}

const KEYS: &[&str] = &[
    "seeds",
    "study",
    "iterations_gesture",
    "iterations_recitation",
    "iterations_main",
    "gesture_pre_lr",
    "recitation_number_lr",
    "recitation_gesture_lr",
    "main_number_lr",
    "main_gesture_lr",
    "optimizer",
    "visual_activation",
    "schedule_start",
    "schedule_end",
    "after_last",
    "geometry",
    "image_height",
    "image_width",
    "cell_width",
    "cell_height",
    "ball_radius",
    "posture_offsets",
    "posture_spans",
    "base_joint_value",
    "test_batches",
    "eval_every",
    "checkpoint_every",
    "jobs",
    "out",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| value_err(key, format!("cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn parse_joints(key: &str, v: &str) -> Result<[f64; JOINTS], ConfigError> {
    let xs: Vec<f64> = parse_list(key, v)?;
    xs.try_into()
        .map_err(|xs: Vec<f64>| value_err(key, format!("need {JOINTS} values, got {}", xs.len())))
}

/// `paper`, `alt`, or three comma-separated probabilities (puppet, point, no-point).
pub fn parse_mix(key: &str, v: &str) -> Result<SkillMix, ConfigError> {
    match v {
        "paper" => return Ok(SkillSchedule::STANDARD.end),
        "alt" => return Ok(SkillSchedule::ALT.end),
        _ => {}
    }
    let xs: Vec<f64> = parse_list(key, v)?;
    let [puppet, point, no_point] = xs[..] else {
        return Err(value_err(key, "need three probabilities: puppet, point, no_point"));
    };
    Ok(SkillMix {
        puppet,
        point,
        no_point,
    })
}

/// Seed list: `1,2,3`, a range `1-30`, or a count `n` meaning 1..=n when
/// prefixed by `count:`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>, ConfigError> {
    let key = "seeds";
    let seeds: Vec<u64> = if let Some(n) = v.strip_prefix("count:") {
        let n: u64 = parse_num(key, n.trim())?;
        (1..=n).collect()
    } else if let Some((a, b)) = v.split_once('-') {
        let (a, b): (u64, u64) = (parse_num(key, a.trim())?, parse_num(key, b.trim())?);
        if a > b {
            return Err(value_err(key, format!("empty range {v}")));
        }
        (a..=b).collect()
    } else {
        parse_list(key, v)?
    };
    if seeds.is_empty() {
        return Err(value_err(key, "no seeds"));
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(value_err(key, "duplicate seed"));
    }
    Ok(seeds)
}

fn mix_text(m: &SkillMix) -> String {
    format!("{},{},{}", m.puppet, m.point, m.no_point)
}

fn joints_text(xs: &[f64; JOINTS]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut geom = [
            cfg.geometry.image_height,
            cfg.geometry.image_width,
            cfg.geometry.cell_width,
            cfg.geometry.cell_height,
            cfg.geometry.ball_radius,
        ];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(key, value, &mut geom)?;
        }
        if ["image_height", "image_width", "cell_width", "cell_height", "ball_radius"]
            .iter()
            .any(|k| seen.contains(*k))
        {
            if seen.contains("geometry") {
                return Err(value_err("geometry", "give either a preset or explicit sizes, not both"));
            }
            cfg.geometry = GridGeometry::new(geom[0], geom[1], geom[2], geom[3], geom[4])
                .map_err(|e| value_err("geometry", e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single `key = value` pair (also used for command-line overrides).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(value_err(key, "unknown key"));
        }
        let g = self.geometry;
        let mut geom = [g.image_height, g.image_width, g.cell_width, g.cell_height, g.ball_radius];
        self.set(key, value, &mut geom)?;
        if ["image_height", "image_width", "cell_width", "cell_height", "ball_radius"].contains(&key) {
            self.geometry = GridGeometry::new(geom[0], geom[1], geom[2], geom[3], geom[4])
                .map_err(|e| value_err("geometry", e.to_string()))?;
        }
        self.validate()
    }

    fn set(&mut self, key: &str, v: &str, geom: &mut [usize; 5]) -> Result<(), ConfigError> {
        match key {
            "seeds" => self.seeds = parse_seeds(v)?,
            "study" => self.study = parse_num(key, v)?,
            "iterations_gesture" => self.iterations_gesture = parse_num(key, v)?,
            "iterations_recitation" => self.iterations_recitation = parse_num(key, v)?,
            "iterations_main" => {
                self.iterations_main = if v == "default" { None } else { Some(parse_num(key, v)?) }
            }
            "gesture_pre_lr" => self.gesture_pre_lr = parse_num(key, v)?,
            "recitation_number_lr" => self.recitation_number_lr = parse_num(key, v)?,
            "recitation_gesture_lr" => self.recitation_gesture_lr = parse_num(key, v)?,
            "main_number_lr" => self.main_number_lr = parse_num(key, v)?,
            "main_gesture_lr" => self.main_gesture_lr = parse_num(key, v)?,
            "optimizer" => self.optimizer = v.parse().map_err(|e: String| value_err(key, e))?,
            "visual_activation" => self.visual_activation = v.parse().map_err(|e: String| value_err(key, e))?,
            "schedule_start" => self.schedule_start = parse_mix(key, v)?,
            "schedule_end" => self.schedule_end = parse_mix(key, v)?,
            "after_last" => {
                self.after_last = v.parse().map_err(|e: crate::curriculum::CurriculumError| value_err(key, e.to_string()))?
            }
            "geometry" => {
                self.geometry = match v {
                    "full" => GridGeometry::FULL,
                    "compact" => GridGeometry::COMPACT,
                    _ => return Err(value_err(key, format!("unknown preset `{v}` (full or compact)"))),
                };
                *geom = [
                    self.geometry.image_height,
                    self.geometry.image_width,
                    self.geometry.cell_width,
                    self.geometry.cell_height,
                    self.geometry.ball_radius,
                ];
            }
            "image_height" => geom[0] = parse_num(key, v)?,
            "image_width" => geom[1] = parse_num(key, v)?,
            "cell_width" => geom[2] = parse_num(key, v)?,
            "cell_height" => geom[3] = parse_num(key, v)?,
            "ball_radius" => geom[4] = parse_num(key, v)?,
            "posture_offsets" => self.posture_offsets = parse_joints(key, v)?,
            "posture_spans" => self.posture_spans = parse_joints(key, v)?,
            "base_joint_value" => self.base_joint_value = parse_num(key, v)?,
            "test_batches" => self.test_batches = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "jobs" => self.jobs = parse_num(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.study_kind().is_none() {
            return Err(value_err("study", format!("{} is not 1, 2 or 3", self.study)));
        }
        if self.seeds.is_empty() {
            return Err(value_err("seeds", "no seeds"));
        }
        for (k, v) in [
            ("gesture_pre_lr", self.gesture_pre_lr),
            ("recitation_number_lr", self.recitation_number_lr),
            ("recitation_gesture_lr", self.recitation_gesture_lr),
            ("main_number_lr", self.main_number_lr),
            ("main_gesture_lr", self.main_gesture_lr),
            ("base_joint_value", self.base_joint_value),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(value_err(k, format!("must be a finite non-negative number, got {v}")));
            }
        }
        self.schedule()
            .validate()
            .map_err(|e| value_err("schedule_end", e.to_string()))?;
        self.posture_table()
            .validate()
            .map_err(|e| value_err("posture_offsets", e.to_string()))?;
        if self.test_batches == 0 {
            return Err(value_err("test_batches", "must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(value_err("jobs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn study_kind(&self) -> Option<Study> {
        Study::from_number(self.study)
    }

    pub fn schedule(&self) -> SkillSchedule {
        SkillSchedule {
            start: self.schedule_start,
            end: self.schedule_end,
        }
    }

    pub fn posture_table(&self) -> PostureTable {
        PostureTable::synthetic(self.posture_offsets, self.posture_spans, self.base_joint_value)
    }

    pub fn world(&self) -> Result<World, ConfigError> {
        World::new(self.geometry, self.posture_table(), self.after_last)
            .map(|w| w.with_activation(self.visual_activation))
            .map_err(|e| value_err("geometry", e.to_string()))
    }

    pub fn plan(&self) -> RunPlan {
        let mut gesture = PhaseConfig::gesture_pre();
        gesture.iterations = self.iterations_gesture;
        gesture.rates.gesture = self.gesture_pre_lr;
        gesture.optimizer = self.optimizer;
        let mut recitation = PhaseConfig::recitation_pre();
        recitation.iterations = self.iterations_recitation;
        recitation.rates = HeadRates {
            number: self.recitation_number_lr,
            gesture: self.recitation_gesture_lr,
        };
        recitation.optimizer = self.optimizer;
        RunPlan {
            gesture,
            recitation,
            test_batches: self.test_batches,
            cadence: Cadence {
                eval_every: self.eval_every,
                checkpoint_every: self.checkpoint_every,
            },
            allow_unpretrained: false,
        }
    }

    /// Main-phase settings of the configured study.
    pub fn main_phase(&self) -> PhaseConfig {
        let study = self.study_kind().expect("validated");
        let mut c = PhaseConfig::study(study, self.schedule());
        if let Some(n) = self.iterations_main {
            c.iterations = n;
        }
        c.rates = HeadRates {
            number: self.main_number_lr,
            gesture: self.main_gesture_lr,
        };
        c.optimizer = self.optimizer;
        c
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "study = {}", self.study);
        let _ = writeln!(s, "iterations_gesture = {}", self.iterations_gesture);
        let _ = writeln!(s, "iterations_recitation = {}", self.iterations_recitation);
        let _ = writeln!(
            s,
            "iterations_main = {}",
            self.iterations_main.map_or("default".to_string(), |n| n.to_string())
        );
        let _ = writeln!(s, "gesture_pre_lr = {}", self.gesture_pre_lr);
        let _ = writeln!(s, "recitation_number_lr = {}", self.recitation_number_lr);
        let _ = writeln!(s, "recitation_gesture_lr = {}", self.recitation_gesture_lr);
        let _ = writeln!(s, "main_number_lr = {}", self.main_number_lr);
        let _ = writeln!(s, "main_gesture_lr = {}", self.main_gesture_lr);
        let _ = writeln!(s, "optimizer = {}", self.optimizer);
        let _ = writeln!(s, "visual_activation = {}", self.visual_activation);
        let _ = writeln!(s, "schedule_start = {}", mix_text(&self.schedule_start));
        let _ = writeln!(s, "schedule_end = {}", mix_text(&self.schedule_end));
        let after = match self.after_last {
            AfterLast::Hold => "hold",
            AfterLast::ReturnToBase => "base",
        };
        let _ = writeln!(s, "after_last = {after}");
        let _ = writeln!(s, "image_height = {}", g.image_height);
        let _ = writeln!(s, "image_width = {}", g.image_width);
        let _ = writeln!(s, "cell_width = {}", g.cell_width);
        let _ = writeln!(s, "cell_height = {}", g.cell_height);
        let _ = writeln!(s, "ball_radius = {}", g.ball_radius);
        let _ = writeln!(s, "posture_offsets = {}", joints_text(&self.posture_offsets));
        let _ = writeln!(s, "posture_spans = {}", joints_text(&self.posture_spans));
        let _ = writeln!(s, "base_joint_value = {}", self.base_joint_value);
        let _ = writeln!(s, "test_batches = {}", self.test_batches);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        s
    }
}
