//! Deployment dataset container, its on-disk format "COSPADS1", and the
//! samplers feeding representation learning, latent-sequence regression, and
//! offline RL.
//!
//! File layout: magic, a structured-text header, then per deployment the raw
//! little-endian f32 arrays in (states, actions, rewards, next_states, hips)
//! order, then the generating behavior checkpoint, length-prefixed. Loading
//! verifies structure exactly; a round trip is bit-identical.

use std::path::Path;

use rand::Rng;

use crate::envs::{EnvId, EnvSpec, HipSchedule};
use crate::error::{CospaError, Result};

pub const MAGIC: &[u8; 8] = b"COSPADS1";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub env: EnvId,
    pub n_deployments: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub schedule: HipSchedule,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            id: self.env,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            horizon: self.horizon,
            episodes: self.episodes,
            schedule: self.schedule.clone(),
        }
    }
}

/// M episodes of H transitions each, plus the generating HiP sequence. The
/// HiPs ride along for oracle augmentation and probe labels only.
#[derive(Clone, Debug, PartialEq)]
pub struct Deployment {
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub hips: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub deployments: Vec<Deployment>,
    /// COSPAPR1 bytes of the behavior policy that generated the data, kept
    /// embedded so evaluation can regenerate context episodes.
    pub behavior_ckpt: Vec<u8>,
}

/// Borrowed view of one episode.
#[derive(Clone, Copy, Debug)]
pub struct TrajSlice<'a> {
    pub states: &'a [f32],
    pub actions: &'a [f32],
    pub rewards: &'a [f32],
    pub next_states: &'a [f32],
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl<'a> TrajSlice<'a> {
    /// Flattened transition dimension (s, a, r, s').
    pub fn transition_dim(&self) -> usize {
        2 * self.state_dim + self.action_dim + 1
    }

    /// Append transition t as one flat (s, a, r, s') row.
    pub fn push_transition_row(&self, t: usize, out: &mut Vec<f32>) {
        let sd = self.state_dim;
        let ad = self.action_dim;
        out.extend_from_slice(&self.states[t * sd..(t + 1) * sd]);
        out.extend_from_slice(&self.actions[t * ad..(t + 1) * ad]);
        out.push(self.rewards[t]);
        out.extend_from_slice(&self.next_states[t * sd..(t + 1) * sd]);
    }

    pub fn episode_return(&self) -> f32 {
        self.rewards.iter().sum()
    }
}

impl Dataset {
    pub fn trajectory(&self, dep: usize, ep: usize) -> TrajSlice<'_> {
        let h = self.header.horizon;
        let sd = self.header.state_dim;
        let ad = self.header.action_dim;
        let d = &self.deployments[dep];
        TrajSlice {
            states: &d.states[ep * h * sd..(ep + 1) * h * sd],
            actions: &d.actions[ep * h * ad..(ep + 1) * h * ad],
            rewards: &d.rewards[ep * h..(ep + 1) * h],
            next_states: &d.next_states[ep * h * sd..(ep + 1) * h * sd],
            horizon: h,
            state_dim: sd,
            action_dim: ad,
        }
    }

    pub fn total_transitions(&self) -> usize {
        self.header.n_deployments * self.header.episodes * self.header.horizon
    }

    fn validate(&self) -> Result<()> {
        let h = &self.header;
        if self.deployments.len() != h.n_deployments {
            return Err(CospaError::Format(format!(
                "deployments: header says {}, found {}",
                h.n_deployments,
                self.deployments.len()
            )));
        }
        let per_ep = h.episodes * h.horizon;
        for (i, d) in self.deployments.iter().enumerate() {
            if d.states.len() != per_ep * h.state_dim
                || d.next_states.len() != per_ep * h.state_dim
                || d.actions.len() != per_ep * h.action_dim
                || d.rewards.len() != per_ep
                || d.hips.len() != h.episodes
            {
                return Err(CospaError::Format(format!("deployment {i}: array sizes off")));
            }
        }
        Ok(())
    }

    /// Trajectory counts grouped by ground-truth HiP, sorted by value.
    pub fn hip_histogram(&self) -> Vec<(f32, usize)> {
        let mut counts: Vec<(f32, usize)> = Vec::new();
        for d in &self.deployments {
            for z in &d.hips {
                match counts.iter_mut().find(|(v, _)| v == z) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((*z, 1)),
                }
            }
        }
        counts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        counts
    }

    /// Ablation control: permute whole trajectories (and their HiPs) across
    /// all deployment/episode slots, destroying within-deployment temporal
    /// structure while keeping every marginal intact.
    pub fn shuffle_trajectories(&self, rng: &mut impl rand::Rng) -> Dataset {
        let n = self.header.n_deployments;
        let m = self.header.episodes;
        let h = self.header.horizon;
        let sd = self.header.state_dim;
        let ad = self.header.action_dim;
        let mut perm: Vec<usize> = (0..n * m).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let deployments = (0..n)
            .map(|dep| {
                let mut out = Deployment {
                    states: Vec::with_capacity(m * h * sd),
                    actions: Vec::with_capacity(m * h * ad),
                    rewards: Vec::with_capacity(m * h),
                    next_states: Vec::with_capacity(m * h * sd),
                    hips: Vec::with_capacity(m),
                };
                for ep in 0..m {
                    let src = perm[dep * m + ep];
                    let (sdep, sep) = (src / m, src % m);
                    let d = &self.deployments[sdep];
                    out.states.extend_from_slice(&d.states[sep * h * sd..(sep + 1) * h * sd]);
                    out.actions.extend_from_slice(&d.actions[sep * h * ad..(sep + 1) * h * ad]);
                    out.rewards.extend_from_slice(&d.rewards[sep * h..(sep + 1) * h]);
                    out.next_states
                        .extend_from_slice(&d.next_states[sep * h * sd..(sep + 1) * h * sd]);
                    out.hips.push(d.hips[sep]);
                }
                out
            })
            .collect();
        Dataset {
            header: self.header.clone(),
            deployments,
            behavior_ckpt: self.behavior_ckpt.clone(),
        }
    }
}

fn schedule_to_line(s: &HipSchedule) -> String {
    fn join(values: &[f32]) -> String {
        values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
    }
    match s {
        HipSchedule::AlternatingBinary { switch_prob } => {
            format!("alternating_binary switch_prob={switch_prob}")
        }
        HipSchedule::TriangleWave { values } => format!("triangle_wave values={}", join(values)),
        HipSchedule::SawtoothWave { values } => format!("sawtooth_wave values={}", join(values)),
        HipSchedule::UniformCorrupt { base, sigma } => {
            format!("uniform_corrupt sigma={sigma} {}", schedule_to_line(base))
        }
    }
}

fn schedule_from_line(line: &str) -> Result<HipSchedule> {
    let bad = |why: &str| CospaError::Format(format!("schedule line '{line}': {why}"));
    let mut parts = line.split(' ');
    let kind = parts.next().ok_or_else(|| bad("empty"))?;
    let parse_values = |kv: &str| -> Result<Vec<f32>> {
        let list = kv.strip_prefix("values=").ok_or_else(|| bad("expected values="))?;
        list.split(',')
            .map(|v| v.parse::<f32>().map_err(|_| bad("unparseable value")))
            .collect()
    };
    match kind {
        "alternating_binary" => {
            let kv = parts.next().ok_or_else(|| bad("missing switch_prob"))?;
            let p = kv
                .strip_prefix("switch_prob=")
                .and_then(|v| v.parse::<f32>().ok())
                .ok_or_else(|| bad("bad switch_prob"))?;
            Ok(HipSchedule::AlternatingBinary { switch_prob: p })
        }
        "triangle_wave" => {
            Ok(HipSchedule::TriangleWave { values: parse_values(parts.next().unwrap_or(""))? })
        }
        "sawtooth_wave" => {
            Ok(HipSchedule::SawtoothWave { values: parse_values(parts.next().unwrap_or(""))? })
        }
        "uniform_corrupt" => {
            let kv = parts.next().ok_or_else(|| bad("missing sigma"))?;
            let sigma = kv
                .strip_prefix("sigma=")
                .and_then(|v| v.parse::<f32>().ok())
                .ok_or_else(|| bad("bad sigma"))?;
            let rest: Vec<&str> = parts.collect();
            let base = schedule_from_line(&rest.join(" "))?;
            Ok(HipSchedule::UniformCorrupt { base: Box::new(base), sigma })
        }
        other => Err(bad(&format!("unknown kind {other}"))),
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], off: &mut usize, count: usize, field: &str) -> Result<Vec<f32>> {
    let need = count * 4;
    if *off + need > bytes.len() {
        return Err(CospaError::Format(format!("truncated while reading {field}")));
    }
    let out = bytes[*off..*off + need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *off += need;
    Ok(out)
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let h = &ds.header;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let header = format!(
        "version 1\nenv {}\ndeployments {}\nepisodes {}\nhorizon {}\nstate_dim {}\naction_dim {}\nseed {}\nschedule {}\n\n",
        h.env.as_str(),
        h.n_deployments,
        h.episodes,
        h.horizon,
        h.state_dim,
        h.action_dim,
        h.seed,
        schedule_to_line(&h.schedule),
    );
    out.extend_from_slice(header.as_bytes());
    for d in &ds.deployments {
        push_f32s(&mut out, &d.states);
        push_f32s(&mut out, &d.actions);
        push_f32s(&mut out, &d.rewards);
        push_f32s(&mut out, &d.next_states);
        push_f32s(&mut out, &d.hips);
    }
    out.extend_from_slice(&(ds.behavior_ckpt.len() as u64).to_le_bytes());
    out.extend_from_slice(&ds.behavior_ckpt);
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CospaError::Format("dataset magic mismatch".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let mut header_end = None;
    for i in 0..rest.len().saturating_sub(1) {
        if rest[i] == b'\n' && rest[i + 1] == b'\n' {
            header_end = Some(i + 2);
            break;
        }
    }
    let header_end =
        header_end.ok_or_else(|| CospaError::Format("dataset header unterminated".into()))?;
    let header_text = std::str::from_utf8(&rest[..header_end])
        .map_err(|_| CospaError::Format("dataset header is not utf-8".into()))?;

    let mut env = None;
    let mut n_deployments = None;
    let mut episodes = None;
    let mut horizon = None;
    let mut state_dim = None;
    let mut action_dim = None;
    let mut seed = None;
    let mut schedule = None;
    let mut version_ok = false;
    for line in header_text.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| CospaError::Format(format!("bad header line: {line}")))?;
        let parse_usize = |v: &str, k: &str| -> Result<usize> {
            v.parse().map_err(|_| CospaError::Format(format!("bad {k}: {v}")))
        };
        match key {
            "version" => {
                if value != "1" {
                    return Err(CospaError::Format(format!("unsupported dataset version {value}")));
                }
                version_ok = true;
            }
            "env" => env = Some(value.parse::<EnvId>()?),
            "deployments" => n_deployments = Some(parse_usize(value, key)?),
            "episodes" => episodes = Some(parse_usize(value, key)?),
            "horizon" => horizon = Some(parse_usize(value, key)?),
            "state_dim" => state_dim = Some(parse_usize(value, key)?),
            "action_dim" => action_dim = Some(parse_usize(value, key)?),
            "seed" => {
                seed = Some(
                    value.parse::<u64>().map_err(|_| CospaError::Format("bad seed".into()))?,
                )
            }
            "schedule" => schedule = Some(schedule_from_line(value)?),
            other => return Err(CospaError::Format(format!("unknown header key {other}"))),
        }
    }
    if !version_ok {
        return Err(CospaError::Format("dataset header missing version".into()));
    }
    let missing = |k: &str| CospaError::Format(format!("dataset header missing {k}"));
    let header = DatasetHeader {
        env: env.ok_or_else(|| missing("env"))?,
        n_deployments: n_deployments.ok_or_else(|| missing("deployments"))?,
        episodes: episodes.ok_or_else(|| missing("episodes"))?,
        horizon: horizon.ok_or_else(|| missing("horizon"))?,
        state_dim: state_dim.ok_or_else(|| missing("state_dim"))?,
        action_dim: action_dim.ok_or_else(|| missing("action_dim"))?,
        schedule: schedule.ok_or_else(|| missing("schedule"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };

    let payload = &rest[header_end..];
    let mut off = 0;
    let per_ep = header.episodes * header.horizon;
    let mut deployments = Vec::with_capacity(header.n_deployments);
    for i in 0..header.n_deployments {
        let field = |what: &str| format!("deployment {i} {what}");
        deployments.push(Deployment {
            states: read_f32s(payload, &mut off, per_ep * header.state_dim, &field("states"))?,
            actions: read_f32s(payload, &mut off, per_ep * header.action_dim, &field("actions"))?,
            rewards: read_f32s(payload, &mut off, per_ep, &field("rewards"))?,
            next_states: read_f32s(
                payload,
                &mut off,
                per_ep * header.state_dim,
                &field("next_states"),
            )?,
            hips: read_f32s(payload, &mut off, header.episodes, &field("hips"))?,
        });
    }
    if off + 8 > payload.len() {
        return Err(CospaError::Format("truncated before behavior checkpoint".into()));
    }
    let ck_len = u64::from_le_bytes(payload[off..off + 8].try_into().unwrap()) as usize;
    off += 8;
    if off + ck_len != payload.len() {
        return Err(CospaError::Format(format!(
            "behavior checkpoint length {} does not match remaining {} bytes",
            ck_len,
            payload.len() - off
        )));
    }
    let behavior_ckpt = payload[off..].to_vec();
    let ds = Dataset { header, deployments, behavior_ckpt };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| CospaError::MissingArtifact(format!("{}: {e}", path.display())))?;
    dataset_from_bytes(&bytes)
}

/// Contrastive sampling geometry: context length, lookahead, negatives.
#[derive(Clone, Copy, Debug)]
pub struct CpcWindow {
    pub n_cpc: usize,
    pub k: usize,
    pub n_neg: usize,
}

/// Index view of one contrastive batch: a context window ending at episode
/// `i` (1-indexed) of the positive deployment, the positive future at i+k,
/// and negatives at the same future index from distinct other deployments.
#[derive(Clone, Debug)]
pub struct CpcBatchIdx {
    pub pos_dep: usize,
    /// 1-indexed context end; context spans episodes i-n_cpc+1 ..= i.
    pub i: usize,
    pub neg_deps: Vec<usize>,
}

impl CpcBatchIdx {
    pub fn context_range_0idx(&self, n_cpc: usize) -> std::ops::Range<usize> {
        (self.i - n_cpc)..self.i
    }

    pub fn future_0idx(&self, k: usize) -> usize {
        self.i + k - 1
    }
}

pub fn sample_cpc_batch(
    ds: &Dataset,
    window: CpcWindow,
    rng: &mut impl Rng,
) -> Result<CpcBatchIdx> {
    let CpcWindow { n_cpc, k, n_neg } = window;
    let m = ds.header.episodes;
    let n = ds.header.n_deployments;
    if n_cpc == 0 || k == 0 || n_cpc + k > m {
        return Err(CospaError::Config(format!(
            "cpc sampling needs n_cpc + k <= episodes ({n_cpc} + {k} vs {m})"
        )));
    }
    if n < n_neg + 1 {
        return Err(CospaError::Config(format!(
            "cpc sampling needs {} deployments, dataset has {n}",
            n_neg + 1
        )));
    }
    let pos_dep = rng.random_range(0..n);
    let i = rng.random_range(n_cpc..=m - k);
    let mut neg_deps = Vec::with_capacity(n_neg);
    while neg_deps.len() < n_neg {
        let cand = rng.random_range(0..n);
        if cand != pos_dep && !neg_deps.contains(&cand) {
            neg_deps.push(cand);
        }
    }
    Ok(CpcBatchIdx { pos_dep, i, neg_deps })
}

/// Flat transition store for offline RL. Every transition carries its
/// trajectory's augmentation vector (empty when blind); per-trajectory
/// augmentations are kept alongside for latent-sequence sampling. The
/// ground-truth HiPs do not survive into this structure.
#[derive(Clone, Debug)]
pub struct AugmentedDataset {
    pub env: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub aug_dim: usize,
    pub n_deployments: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    /// Per-transition augmentation, aug_dim wide.
    pub aug: Vec<f32>,
    /// Per-trajectory augmentation, (n_deployments * episodes) x aug_dim.
    pub traj_aug: Vec<f32>,
}

impl AugmentedDataset {
    pub fn total_transitions(&self) -> usize {
        self.n_deployments * self.episodes * self.horizon
    }

    /// Terminal flag: the final step of each fixed-horizon episode.
    pub fn done_at(&self, flat_idx: usize) -> bool {
        flat_idx % self.horizon == self.horizon - 1
    }

    pub fn traj_aug_at(&self, dep: usize, ep: usize) -> &[f32] {
        let idx = dep * self.episodes + ep;
        &self.traj_aug[idx * self.aug_dim..(idx + 1) * self.aug_dim]
    }
}

/// Uniform-with-replacement transition indices.
pub fn sample_rl_batch(
    aug: &AugmentedDataset,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let total = aug.total_transitions();
    if total == 0 {
        return Err(CospaError::Config("empty dataset".into()));
    }
    if batch == 0 {
        return Err(CospaError::Config("batch size must be >= 1".into()));
    }
    Ok((0..batch).map(|_| rng.random_range(0..total)).collect())
}

/// One latent regression window: (deployment, 0-indexed target episode).
/// The context is the n_c episodes before the target, never crossing a
/// deployment boundary.
pub fn sample_latent_window(
    aug: &AugmentedDataset,
    n_c: usize,
    rng: &mut impl Rng,
) -> Result<(usize, usize)> {
    if n_c == 0 || n_c + 1 > aug.episodes {
        return Err(CospaError::Config(format!(
            "latent window of {n_c} needs at least {} episodes, have {}",
            n_c + 1,
            aug.episodes
        )));
    }
    let dep = rng.random_range(0..aug.n_deployments);
    let target = rng.random_range(n_c..aug.episodes);
    Ok((dep, target))
}
