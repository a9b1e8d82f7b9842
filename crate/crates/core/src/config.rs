//! Flat `key = value` run configuration.
//!
//! Keys are grouped by prefix (`env.`, `aug.`, `segment.`, `voxel.`, `rl.`)
//! plus a top-level `seed`. Lines starting with `#` are comments. Later
//! assignments override earlier ones, so command-line overrides are simply
//! applied after the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mea::{AugmentMode, AugmentationPolicy, Interval, IsometricGroup, IsometricOverlay, RadialMode};
use crate::phase::Segmenter;
use crate::rl::RlConfig;
use crate::sim::{ActionSpace, EnvConfig};
use crate::voxel::VoxelGridConfig;

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "env.action_space",
    "env.delta_xyz",
    "env.delta_theta",
    "env.h_max",
    "env.l_z",
    "env.workspace_min",
    "env.workspace_max",
    "env.object_count",
    "env.object_size",
    "env.spawn_radius",
    "env.gripper_start_height",
    "env.capture_radius",
    "env.lift_height",
    "env.points_per_segment",
    "aug.mode",
    "aug.delta_r",
    "aug.delta_z",
    "aug.delta_rot",
    "aug.delta_theta",
    "aug.trivial_prob",
    "aug.radial_mode",
    "aug.per_demo",
    "aug.isometric",
    "aug.isometric_copies",
    "aug.max_retries",
    "segment.method",
    "segment.margin",
    "segment.h_p",
    "voxel.n_voxel",
    "voxel.min",
    "voxel.max",
    "rl.gamma",
    "rl.learning_rate",
    "rl.updates",
    "rl.batch_size",
    "rl.eval_interval",
    "rl.eval_rollouts",
    "rl.bias",
    "rl.conservative_alpha",
    "rl.eval_seed",
    "rl.blocks",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    fn floats<const N: usize>(&self, key: &str) -> Result<Option<[f64; N]>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))?;
        parts
            .try_into()
            .map(Some)
            .map_err(|_| Error::Config(format!("{key} needs {N} comma-separated numbers")))
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.parsed("seed")
    }

    pub fn env(&self) -> Result<EnvConfig> {
        let mut env = match self.parsed::<ActionSpace>("env.action_space")? {
            Some(ActionSpace::Discrete) => EnvConfig::discrete(),
            _ => EnvConfig::default(),
        };
        macro_rules! assign {
            ($field:ident, $key:literal) => {
                if let Some(v) = self.parsed($key)? {
                    env.$field = v;
                }
            };
        }
        assign!(delta_xyz, "env.delta_xyz");
        assign!(delta_theta, "env.delta_theta");
        assign!(h_max, "env.h_max");
        assign!(l_z, "env.l_z");
        assign!(object_count, "env.object_count");
        assign!(object_size, "env.object_size");
        assign!(spawn_radius, "env.spawn_radius");
        assign!(capture_radius, "env.capture_radius");
        assign!(lift_height, "env.lift_height");
        assign!(points_per_segment, "env.points_per_segment");
        if let Some(v) = self.floats::<3>("env.workspace_min")? {
            env.workspace.min = v;
        }
        if let Some(v) = self.floats::<3>("env.workspace_max")? {
            env.workspace.max = v;
        }
        if let Some(v) = self.floats::<2>("env.gripper_start_height")? {
            env.gripper_start_height = v;
        }
        env.validate()?;
        Ok(env)
    }

    /// Policy for `mode` (defaults to the one matching `env`), with `aug.*`
    /// overrides applied.
    pub fn policy(&self, env: &EnvConfig) -> Result<AugmentationPolicy> {
        let mode = self.parsed::<AugmentMode>("aug.mode")?.unwrap_or(match env.action_space {
            ActionSpace::Continuous => AugmentMode::Continuous,
            ActionSpace::Discrete => AugmentMode::Discrete,
        });
        let mut p = AugmentationPolicy::for_mode(mode);
        let interval = |key: &str| -> Result<Option<Interval>> {
            Ok(self.floats::<2>(key)?.map(|[lo, hi]| Interval::new(lo, hi)))
        };
        if let Some(v) = interval("aug.delta_r")? {
            p.delta_r_range = v;
        }
        if let Some(v) = interval("aug.delta_z")? {
            p.delta_z_range = v;
        }
        if let Some(v) = interval("aug.delta_rot")? {
            p.delta_rot_range = v;
        }
        if let Some(v) = interval("aug.delta_theta")? {
            p.delta_theta_range = v;
        }
        if let Some(v) = self.parsed("aug.trivial_prob")? {
            p.discrete_trivial_prob = v;
        }
        if let Some(v) = self.parsed::<RadialMode>("aug.radial_mode")? {
            p.radial_mode = v;
        }
        if let Some(v) = self.parsed("aug.per_demo")? {
            p.augmentations_per_demo = v;
        }
        if let Some(v) = self.parsed("aug.max_retries")? {
            p.max_resample_retries = v;
        }
        match self.get("aug.isometric") {
            Some("none") => p.isometric_overlay = None,
            Some(g) => {
                let group = g
                    .parse::<IsometricGroup>()
                    .map_err(|e| Error::Config(format!("aug.isometric: {e}")))?;
                let copies = p.isometric_overlay.map_or(4, |o| o.copies);
                p.isometric_overlay = Some(IsometricOverlay { group, copies });
            }
            None => {}
        }
        if let Some(copies) = self.parsed::<usize>("aug.isometric_copies")? {
            if let Some(o) = p.isometric_overlay.as_mut() {
                o.copies = copies;
            }
        }
        if mode == AugmentMode::Discrete {
            if let Some(IsometricOverlay { group: IsometricGroup::So2, .. }) = p.isometric_overlay {
                return Err(Error::Config(
                    "an SO(2) overlay would leave the discrete action set; use aug.isometric = c4".into(),
                ));
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn segmenter(&self, env: &EnvConfig) -> Result<Segmenter> {
        match self.get("segment.method").unwrap_or("height") {
            "height" => Ok(Segmenter::Height {
                l_z: env.l_z,
                margin: self.parsed("segment.margin")?.unwrap_or(Segmenter::DEFAULT_MARGIN),
            }),
            "timestep" => Ok(Segmenter::Timestep {
                h_p: self
                    .parsed("segment.h_p")?
                    .ok_or_else(|| Error::Config("segment.method = timestep needs segment.h_p".into()))?,
            }),
            other => Err(Error::Config(format!("unknown segment.method {other:?}"))),
        }
    }

    pub fn voxel(&self) -> Result<VoxelGridConfig> {
        let mut v = VoxelGridConfig::default();
        if let Some(n) = self.parsed("voxel.n_voxel")? {
            v.n_voxel = n;
        }
        if let Some(m) = self.floats::<3>("voxel.min")? {
            v.workspace.min = m;
        }
        if let Some(m) = self.floats::<3>("voxel.max")? {
            v.workspace.max = m;
        }
        v.validate()?;
        Ok(v)
    }

    pub fn rl(&self) -> Result<RlConfig> {
        let mut r = RlConfig::default();
        macro_rules! assign {
            ($field:ident, $key:literal) => {
                if let Some(v) = self.parsed($key)? {
                    r.$field = v;
                }
            };
        }
        assign!(gamma, "rl.gamma");
        assign!(learning_rate, "rl.learning_rate");
        assign!(updates, "rl.updates");
        assign!(batch_size, "rl.batch_size");
        assign!(eval_interval, "rl.eval_interval");
        assign!(eval_rollouts, "rl.eval_rollouts");
        assign!(bias, "rl.bias");
        assign!(conservative_alpha, "rl.conservative_alpha");
        assign!(eval_seed, "rl.eval_seed");
        r.features.grid = self.voxel()?;
        if let Some(b) = self.parsed("rl.blocks")? {
            r.features.blocks = b;
        }
        r.validate()?;
        Ok(r)
    }

    /// Builds every block once so that bad values fail before any work.
    pub fn validate(&self) -> Result<()> {
        let env = self.env()?;
        self.policy(&env)?;
        self.segmenter(&env)?;
        self.rl()?;
        self.seed()?;
        Ok(())
    }
}
