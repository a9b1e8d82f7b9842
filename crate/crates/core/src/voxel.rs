//! Voxelization and orthographic min-z depth projection.
//!
//! Pixel values are `1 + min z-index` of the occupied voxels in a column and
//! `0` for an empty column. Translating a cloud by whole voxels shifts the
//! image by whole pixels.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::Vec3;
use crate::sim::Bounds;
use crate::trajectory::{Episode, Observation, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridConfig {
    pub n_voxel: usize,
    pub workspace: Bounds,
}

impl Default for VoxelGridConfig {
    /// 64³ grid over a 0.32 m cube centred on the gripper.
    fn default() -> Self {
        VoxelGridConfig {
            n_voxel: 64,
            workspace: Bounds {
                min: [-0.16, -0.16, -0.16],
                max: [0.16, 0.16, 0.16],
            },
        }
    }
}

impl VoxelGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_voxel == 0 || self.n_voxel > u16::MAX as usize {
            return Err(Error::Config(format!("voxel.n_voxel = {} is out of range", self.n_voxel)));
        }
        if !self.workspace.is_valid() {
            return Err(Error::Config("voxel.workspace bounds are degenerate".into()));
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> Vec3 {
        self.workspace.size() / self.n_voxel as f64
    }

    /// Index of the half-open voxel containing `p`; the upper workspace face
    /// belongs to the last voxel. `None` outside the workspace.
    pub fn index_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let n = self.n_voxel;
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let (lo, hi) = (self.workspace.min[axis], self.workspace.max[axis]);
            let v = p[axis];
            if !(v >= lo && v <= hi) {
                return None;
            }
            let size = (hi - lo) / n as f64;
            let i = ((v - lo) / size).floor() as usize;
            idx[axis] = i.min(n - 1);
        }
        Some(idx)
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Vec3 {
        let size = self.voxel_size();
        Vec3::new(
            self.workspace.min[0] + (idx[0] as f64 + 0.5) * size.x,
            self.workspace.min[1] + (idx[1] as f64 + 0.5) * size.y,
            self.workspace.min[2] + (idx[2] as f64 + 0.5) * size.z,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccupiedSet {
    pub indices: BTreeSet<[usize; 3]>,
}

impl OccupiedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: [usize; 3]) -> bool {
        self.indices.contains(&idx)
    }
}

/// Row-major `n × n` image; `pixels[y * n + x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub n: usize,
    pub pixels: Vec<u16>,
}

impl DepthImage {
    pub fn empty(n: usize) -> Self {
        DepthImage {
            n,
            pixels: vec![0; n * n],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.n + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.pixels[y * self.n + x] = v;
    }

    /// Binary PGM (P5) with maxval `n_voxel`; two bytes per pixel when
    /// `n_voxel > 255`.
    pub fn write_pgm<W: Write>(&self, mut w: W, maxval: usize) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n{}\n", self.n, self.n, maxval)?;
        if maxval < 256 {
            let bytes: Vec<u8> = self.pixels.iter().map(|&p| p as u8).collect();
            w.write_all(&bytes)?;
        } else {
            for p in &self.pixels {
                w.write_all(&p.to_be_bytes())?;
            }
        }
        Ok(())
    }
}

pub fn voxelize(clouds: &[&PointCloud], cfg: &VoxelGridConfig) -> OccupiedSet {
    let mut indices = BTreeSet::new();
    let mut dropped = 0usize;
    for p in clouds.iter().flat_map(|c| c.points.iter()) {
        match cfg.index_of(p) {
            Some(idx) => {
                indices.insert(idx);
            }
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        debug!("dropped {dropped} points outside the voxel workspace");
    }
    OccupiedSet { indices }
}

pub fn project(occ: &OccupiedSet, cfg: &VoxelGridConfig) -> DepthImage {
    let mut img = DepthImage::empty(cfg.n_voxel);
    for &[x, y, z] in &occ.indices {
        let v = (z + 1) as u16;
        let current = img.get(x, y);
        if current == 0 || v < current {
            img.set(x, y, v);
        }
    }
    img
}

/// One image per segment: object channels in order, then the gripper.
pub fn render_observation(obs: &Observation, cfg: &VoxelGridConfig) -> Vec<DepthImage> {
    obs.object_clouds
        .iter()
        .chain(std::iter::once(&obs.gripper_cloud))
        .map(|c| project(&voxelize(&[c], cfg), cfg))
        .collect()
}

/// Writes `<episode>_<t>_<channel>.pgm` for every transition of `ep`.
pub fn export_episode_pgm(
    ep: &Episode,
    episode_index: usize,
    cfg: &VoxelGridConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (t, tr) in ep.transitions.iter().enumerate() {
        for (c, img) in render_observation(&tr.observation, cfg).iter().enumerate() {
            let path = dir.join(format!("{episode_index}_{t}_{c}.pgm"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            img.write_pgm(&mut w, cfg.n_voxel)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
