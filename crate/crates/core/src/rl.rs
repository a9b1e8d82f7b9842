//! Linear Q-learning over voxel depth features, with rollout evaluation.

use std::fmt::Write as _;
use std::io::Write;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ActionSpace, DiscreteAction, EnvConfig, KinSim};
use crate::trajectory::{Observation, ReplayBuffer};
use crate::voxel::{render_observation, VoxelGridConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid: VoxelGridConfig,
    /// Coarse image side; must divide `grid.n_voxel`.
    pub blocks: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            grid: VoxelGridConfig::default(),
            blocks: 8,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.blocks == 0 || self.grid.n_voxel % self.blocks != 0 {
            return Err(Error::Config(format!(
                "rl.blocks = {} must divide voxel.n_voxel = {}",
                self.blocks, self.grid.n_voxel
            )));
        }
        Ok(())
    }

    pub fn dim(&self, object_count: usize) -> usize {
        (object_count + 1) * self.blocks * self.blocks + 1
    }
}

/// Depth channels reduced to `blocks × blocks` by taking the smallest
/// occupied value in each block (0 when the block is empty), scaled to
/// `[0, 1]`, followed by the jaw.
pub fn featurize(obs: &Observation, cfg: &FeatureConfig) -> Vec<f64> {
    let n = cfg.grid.n_voxel;
    let b = cfg.blocks;
    let step = n / b;
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity((obs.object_clouds.len() + 1) * b * b + 1);
    for img in render_observation(obs, &cfg.grid) {
        for by in 0..b {
            for bx in 0..b {
                let mut m = 0u16;
                for y in by * step..(by + 1) * step {
                    for x in bx * step..(bx + 1) * step {
                        let v = img.get(x, y);
                        if v != 0 && (m == 0 || v < m) {
                            m = v;
                        }
                    }
                }
                out.push(m as f64 * scale);
            }
        }
    }
    out.push(obs.jaw);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub updates: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub eval_rollouts: usize,
    /// Per-action bias term in addition to the feature weights.
    pub bias: bool,
    /// Weight of the conservative penalty `logsumexp_a Q(s,a) − Q(s,a_data)`;
    /// 0 gives plain Q-learning.
    pub conservative_alpha: f64,
    /// Reset seed of the first evaluation rollout; rollout `i` uses `eval_seed + i`.
    pub eval_seed: u64,
    pub features: FeatureConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 0.99,
            learning_rate: 1e-2,
            updates: 20_000,
            batch_size: 32,
            eval_interval: 1_000,
            eval_rollouts: 20,
            bias: true,
            conservative_alpha: 0.0,
            eval_seed: 1_000_000,
            features: FeatureConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("rl.gamma = {} must lie in [0, 1)", self.gamma)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("rl.learning_rate must be positive".into()));
        }
        if !(self.conservative_alpha.is_finite() && self.conservative_alpha >= 0.0) {
            return Err(Error::Config("rl.conservative_alpha must be a non-negative number".into()));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("rl.batch_size and rl.eval_interval must be positive".into()));
        }
        self.features.validate()
    }
}

/// One linear Q-function per discrete action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub features: FeatureConfig,
}

impl QModel {
    pub fn zeros(n_actions: usize, dim: usize, bias: bool, features: FeatureConfig) -> Self {
        QModel {
            weights: vec![vec![0.0; dim]; n_actions],
            bias: bias.then(|| vec![0.0; n_actions]),
            features,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn q(&self, f: &[f64], a: usize) -> f64 {
        let dot: f64 = self.weights[a].iter().zip(f).map(|(w, x)| w * x).sum();
        dot + self.bias.as_ref().map_or(0.0, |b| b[a])
    }

    pub fn q_values(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n_actions()).map(|a| self.q(f, a)).collect()
    }

    pub fn max_q(&self, f: &[f64]) -> f64 {
        (0..self.n_actions()).map(|a| self.q(f, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, f: &[f64]) -> usize {
        let mut best = 0;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..self.n_actions() {
            let q = self.q(f, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.weights.iter().any(|w| w.len() != dim) {
            return Err(Error::Config(format!("model weights do not have dimension {dim}")));
        }
        let finite = self.weights.iter().flatten().chain(self.bias.iter().flatten()).all(|w| w.is_finite());
        if !finite {
            return Err(Error::Config("model has non-finite weights".into()));
        }
        Ok(())
    }
}

/// `(s, a, r', s', done')` with features precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatTransition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Turns every non-final transition of every episode into a learning sample.
pub fn dataset_from_buffer(buffer: &ReplayBuffer, features: &FeatureConfig) -> Result<Vec<FeatTransition>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if buffer.env().action_space != ActionSpace::Discrete {
        return Err(Error::ContinuousActions);
    }
    let mut out = Vec::with_capacity(buffer.transition_count());
    for ep in buffer.episodes() {
        let feats: Vec<Vec<f64>> = ep.transitions.iter().map(|t| featurize(&t.observation, features)).collect();
        for t in 0..ep.horizon() {
            let action = DiscreteAction::from_command(&ep.transitions[t].action)
                .ok_or(Error::NotDiscreteAction(ep.transitions[t].action.to_array()))?;
            out.push(FeatTransition {
                state: feats[t].clone(),
                action: action.index(),
                reward: ep.transitions[t + 1].reward,
                next_state: feats[t + 1].clone(),
                done: ep.transitions[t + 1].terminal,
            });
        }
    }
    Ok(out)
}

/// One semi-gradient Q-learning update on a minibatch, averaged over samples.
pub fn q_update(model: &mut QModel, batch: &[&FeatTransition], gamma: f64, lr: f64, alpha: f64) {
    let n_actions = model.n_actions();
    let dim = model.dim();
    let mut grad = vec![vec![0.0; dim]; n_actions];
    let mut grad_b = vec![0.0; n_actions];
    for tr in batch {
        let bootstrap = if tr.done { 0.0 } else { gamma * model.max_q(&tr.next_state) };
        let td = tr.reward + bootstrap - model.q(&tr.state, tr.action);
        for (g, x) in grad[tr.action].iter_mut().zip(&tr.state) {
            *g += td * x;
        }
        grad_b[tr.action] += td;
        if alpha > 0.0 {
            let q = model.q_values(&tr.state);
            let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = q.iter().map(|v| (v - m).exp()).sum();
            for (b, qb) in q.iter().enumerate() {
                let coeff = alpha * ((b == tr.action) as u8 as f64 - (qb - m).exp() / z);
                for (g, x) in grad[b].iter_mut().zip(&tr.state) {
                    *g += coeff * x;
                }
                grad_b[b] += coeff;
            }
        }
    }
    let scale = lr / batch.len() as f64;
    for (w, g) in model.weights.iter_mut().zip(&grad) {
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi += scale * gi;
        }
    }
    if let Some(b) = model.bias.as_mut() {
        for (bi, gi) in b.iter_mut().zip(&grad_b) {
            *bi += scale * gi;
        }
    }
}

/// Runs `updates` minibatch updates with uniform sampling. `on_interval`
/// is called after every `interval`-th update with the update count.
pub fn fit<R, F>(
    model: &mut QModel,
    data: &[FeatTransition],
    cfg: &RlConfig,
    rng: &mut R,
    mut on_interval: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &QModel) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.updates {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(&data[rng.random_range(0..data.len())]);
        }
        q_update(model, &batch, cfg.gamma, cfg.learning_rate, cfg.conservative_alpha);
        if step % cfg.eval_interval == 0 {
            on_interval(step, model)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub success_rate: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub points: Vec<EvalPoint>,
}

impl EvalCurve {
    pub fn final_success(&self) -> Option<f64> {
        self.points.last().map(|p| p.success_rate)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for p in &self.points {
            wtr.serialize(p).map_err(|e| Error::Config(format!("csv: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Success rate against training step as a standalone SVG line chart.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 300.0, 40.0);
        let max_step = self.points.iter().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
        let x = |s: usize| pad + (w - 2.0 * pad) * s as f64 / max_step;
        let y = |r: f64| h - pad - (h - 2.0 * pad) * r;
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
            h - pad,
            w - pad
        );
        let _ = writeln!(svg, r#"<text x="{pad}" y="{}" font-size="12">success rate</text>"#, pad - 8.0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">step {}</text>"#,
            w - pad,
            h - pad + 24.0,
            max_step
        );
        let pts: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.step), y(p.success_rate)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            pts.join(" ")
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// First evaluation step after which every rate, including its own, is
/// positive.
pub fn improvement_timestep(curve: &EvalCurve) -> Option<usize> {
    let mut candidate = None;
    for p in &curve.points {
        if p.success_rate > 0.0 {
            candidate.get_or_insert(p.step);
        } else {
            candidate = None;
        }
    }
    candidate
}

/// `(H_max − H)/H_max` for a successful rollout of length `H`, 0 otherwise.
pub fn grasp_score(horizon: usize, h_max: usize, success: bool) -> Result<f64> {
    if horizon > h_max {
        return Err(Error::HorizonExceeded { horizon, h_max });
    }
    if horizon == 0 {
        return Err(Error::validation("horizon", 0, "a rollout needs at least one step"));
    }
    Ok(if success {
        (h_max - horizon) as f64 / h_max as f64
    } else {
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutResult {
    pub seed: u64,
    pub horizon: usize,
    pub success: bool,
    pub score: f64,
}

/// Greedy rollouts from reset seeds `first_seed .. first_seed + n`.
pub fn evaluate(model: &QModel, sim: &KinSim, first_seed: u64, n: usize) -> Result<Vec<RolloutResult>> {
    let cfg = sim.config();
    (0..n as u64)
        .map(|i| {
            let seed = first_seed + i;
            let (s0, _) = sim.reset(seed);
            let ep = sim.rollout(s0, |s, obs| {
                let f = featurize(obs, &model.features);
                DiscreteAction::from_index(model.greedy(&f))
                    .expect("model has nine actions")
                    .to_command(s.jaw)
            });
            let success = ep.is_success();
            Ok(RolloutResult {
                seed,
                horizon: ep.horizon(),
                success,
                score: grasp_score(ep.horizon(), cfg.h_max, success)?,
            })
        })
        .collect()
}

fn summarize(step: usize, results: &[RolloutResult]) -> EvalPoint {
    let n = results.len().max(1) as f64;
    EvalPoint {
        step,
        success_rate: results.iter().filter(|r| r.success).count() as f64 / n,
        mean_score: results.iter().map(|r| r.score).sum::<f64>() / n,
    }
}

/// Q-learning on the buffer's discrete transitions with periodic greedy
/// evaluation in the buffer's environment.
pub fn train_q<R: Rng + ?Sized>(buffer: &ReplayBuffer, cfg: &RlConfig, rng: &mut R) -> Result<(QModel, EvalCurve)> {
    cfg.validate()?;
    let data = dataset_from_buffer(buffer, &cfg.features)?;
    let env: &EnvConfig = buffer.env();
    let sim = KinSim::new(env.clone())?;
    let mut model = QModel::zeros(
        DiscreteAction::ALL.len(),
        cfg.features.dim(env.object_count),
        cfg.bias,
        cfg.features,
    );
    let mut curve = EvalCurve::default();
    fit(&mut model, &data, cfg, rng, |step, m| {
        let results = evaluate(m, &sim, cfg.eval_seed, cfg.eval_rollouts)?;
        let point = summarize(step, &results);
        info!("step {step}: success rate {:.2}", point.success_rate);
        curve.points.push(point);
        Ok(())
    })?;
    Ok((model, curve))
}
