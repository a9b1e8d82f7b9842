//! JSON-lines persistence for episodes and a CSV per-episode summary.
//!
//! Layout: one header line, then for every episode an episode-start record
//! followed by one line per transition.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::group::Vec3;
use crate::mea::GroupSequence;
use crate::sim::{Bounds, EnvConfig, SimState};
use crate::trajectory::{Action, Episode, EpisodeMeta, Observation, Origin, PointCloud, Transition};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    #[serde(rename = "M")]
    m: usize,
    delta_xyz: f64,
    delta_theta: f64,
    #[serde(rename = "H_max")]
    h_max: usize,
    #[serde(rename = "L_z")]
    l_z: f64,
    workspace: Bounds,
    env: EnvConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRecord {
    record: String,
    origin: Origin,
    #[serde(rename = "H_p")]
    h_p: Option<usize>,
    source: Option<usize>,
    group_sequence: Option<GroupSequence>,
    isometric_angle: Option<f64>,
    initial_state: Option<SimState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionRecord {
    t: usize,
    action: [f64; 5],
    reward: f64,
    terminal: bool,
    jaw_obs: f64,
    gripper_cloud: Vec<Vec3>,
    object_clouds: Vec<Vec<Vec3>>,
}

/// Episodes together with the environment they were recorded in.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFile {
    pub env: EnvConfig,
    pub episodes: Vec<Episode>,
}

pub fn write_episodes<W: Write>(mut w: W, env: &EnvConfig, episodes: &[Episode]) -> std::io::Result<()> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        m: env.object_count,
        delta_xyz: env.delta_xyz,
        delta_theta: env.delta_theta,
        h_max: env.h_max,
        l_z: env.l_z,
        workspace: env.workspace,
        env: env.clone(),
    };
    write_line(&mut w, &header)?;
    for ep in episodes {
        let record = EpisodeRecord {
            record: "episode".into(),
            origin: ep.origin,
            h_p: ep.phase_boundary,
            source: ep.meta.source,
            group_sequence: ep.meta.group_sequence.clone(),
            isometric_angle: ep.meta.isometric_angle,
            initial_state: ep.meta.initial_state.clone(),
        };
        write_line(&mut w, &record)?;
        for (t, tr) in ep.transitions.iter().enumerate() {
            let rec = TransitionRecord {
                t,
                action: tr.action.to_array(),
                reward: tr.reward,
                terminal: tr.terminal,
                jaw_obs: tr.observation.jaw,
                gripper_cloud: tr.observation.gripper_cloud.points.clone(),
                object_clouds: tr.observation.object_clouds.iter().map(|c| c.points.clone()).collect(),
            };
            write_line(&mut w, &rec)?;
        }
    }
    w.flush()
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

pub fn save_episodes(path: &Path, env: &EnvConfig, episodes: &[Episode]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_episodes(BufWriter::new(file), env, episodes).map_err(|e| Error::io(path, e))
}

pub fn load_episodes(path: &Path) -> Result<EpisodeFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_episodes(BufReader::new(file), path)
}

/// Parses a JSONL stream; `path` is only used in error messages.
pub fn read_episodes<R: BufRead>(reader: R, path: &Path) -> Result<EpisodeFile> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (first_no, first) = match lines.next() {
        Some((n, l)) => (n, l.map_err(|e| Error::io(path, e))?),
        None => return Err(parse_err(1, "missing header record".into())),
    };
    let header_value: Value =
        serde_json::from_str(&first).map_err(|e| parse_err(first_no, format!("malformed header: {e}")))?;
    let found = header_value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(first_no, "header has no schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: found.min(u32::MAX as u64) as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(header_value).map_err(|e| parse_err(first_no, format!("malformed header: {e}")))?;
    let env = header.env;
    env.validate().map_err(|e| parse_err(first_no, e.to_string()))?;
    if header.m != env.object_count || header.h_max != env.h_max {
        return Err(parse_err(first_no, "header fields disagree with the embedded env".into()));
    }

    let mut episodes = Vec::new();
    let mut current: Option<(usize, Episode)> = None;
    let finish = |current: Option<(usize, Episode)>, episodes: &mut Vec<Episode>| -> Result<()> {
        if let Some((line, ep)) = current {
            ep.validate(&env).map_err(|e| parse_err(line, e.to_string()))?;
            episodes.push(ep);
        }
        Ok(())
    };

    for (no, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(no, e.to_string()))?;
        if value.get("record").is_some() {
            let rec: EpisodeRecord = serde_json::from_value(value).map_err(|e| parse_err(no, e.to_string()))?;
            if rec.record != "episode" {
                return Err(parse_err(no, format!("unknown record type {:?}", rec.record)));
            }
            finish(current.take(), &mut episodes)?;
            current = Some((
                no,
                Episode {
                    transitions: Vec::new(),
                    phase_boundary: rec.h_p,
                    origin: rec.origin,
                    meta: EpisodeMeta {
                        initial_state: rec.initial_state,
                        source: rec.source,
                        group_sequence: rec.group_sequence,
                        isometric_angle: rec.isometric_angle,
                    },
                },
            ));
            continue;
        }
        let rec: TransitionRecord = serde_json::from_value(value).map_err(|e| parse_err(no, e.to_string()))?;
        let (_, ep) = current
            .as_mut()
            .ok_or_else(|| parse_err(no, "transition before any episode record".into()))?;
        if rec.t != ep.transitions.len() {
            return Err(parse_err(
                no,
                format!("expected t = {}, found t = {}", ep.transitions.len(), rec.t),
            ));
        }
        ep.transitions.push(Transition {
            action: Action::from_array(rec.action),
            reward: rec.reward,
            observation: Observation {
                object_clouds: rec.object_clouds.into_iter().map(PointCloud::new).collect(),
                gripper_cloud: PointCloud::new(rec.gripper_cloud),
                jaw: rec.jaw_obs,
            },
            terminal: rec.terminal,
        });
    }
    finish(current.take(), &mut episodes)?;
    Ok(EpisodeFile { env, episodes })
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    episode: usize,
    #[serde(rename = "H")]
    horizon: usize,
    success: bool,
    origin: &'a str,
}

/// CSV with columns `episode, H, success, origin`.
pub fn write_summary_csv<W: Write>(w: W, episodes: &[Episode]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for (i, ep) in episodes.iter().enumerate() {
        wtr.serialize(SummaryRow {
            episode: i,
            horizon: ep.horizon(),
            success: ep.is_success(),
            origin: ep.origin.as_str(),
        })
        .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}
