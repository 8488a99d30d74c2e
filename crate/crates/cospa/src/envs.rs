//! Low-dimensional non-stationary environment suite. The hidden parameter z
//! is constant within an episode and evolves between episodes according to a
//! schedule; a deployment is M consecutive episodes sharing one schedule
//! rollout.
//!
//! goal1d: s in [-2,2], a in [-0.1,0.1], s' = s + a, r = -|s - z| with the
//! goal z alternating between -1 and 1.
//! goal2d: the 2-D analogue with goal (sin z, cos z) and z on a triangle wave.
//! wind2d: start at the origin, goal (1,0), r = 1 inside radius 0.2, and a
//! constant drift 0.09*(sin z, cos z) added each step, z on a sawtooth wave.

use rand::Rng;

use crate::error::{CospaError, Result};

pub const STATE_BOUND: f32 = 2.0;
pub const ACTION_BOUND: f32 = 0.1;
pub const WIND_STRENGTH: f32 = 0.09;
pub const WIND_GOAL_RADIUS: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvId {
    Goal1d,
    Goal2d,
    Wind2d,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::Goal1d => "goal1d",
            EnvId::Goal2d => "goal2d",
            EnvId::Wind2d => "wind2d",
        }
    }
}

impl std::str::FromStr for EnvId {
    type Err = CospaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goal1d" => Ok(EnvId::Goal1d),
            "goal2d" => Ok(EnvId::Goal2d),
            "wind2d" => Ok(EnvId::Wind2d),
            other => Err(CospaError::Config(format!(
                "unknown env '{other}' (expected goal1d, goal2d, or wind2d)"
            ))),
        }
    }
}

/// Between-episode transition law of the hidden parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum HipSchedule {
    /// z in {-1, 1}, switching sign with the given probability each episode.
    AlternatingBinary { switch_prob: f32 },
    /// Walk up the value list then back down; period 2*(len-1).
    TriangleWave { values: Vec<f32> },
    /// Walk up the value list and wrap; period len.
    SawtoothWave { values: Vec<f32> },
    /// Follow the base law, then with probability sigma jump to a uniformly
    /// random value (possibly the same one).
    UniformCorrupt { base: Box<HipSchedule>, sigma: f32 },
}

impl HipSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            HipSchedule::AlternatingBinary { switch_prob } => {
                if !(0.0..=1.0).contains(switch_prob) {
                    return Err(CospaError::Config(format!(
                        "switch_prob {switch_prob} outside [0,1]"
                    )));
                }
            }
            HipSchedule::TriangleWave { values } => {
                if values.len() < 2 {
                    return Err(CospaError::Config("triangle wave needs >= 2 values".into()));
                }
            }
            HipSchedule::SawtoothWave { values } => {
                if values.is_empty() {
                    return Err(CospaError::Config("sawtooth wave needs >= 1 value".into()));
                }
            }
            HipSchedule::UniformCorrupt { base, sigma } => {
                if !(0.0..=1.0).contains(sigma) {
                    return Err(CospaError::Config(format!("sigma {sigma} outside [0,1]")));
                }
                if !matches!(**base, HipSchedule::AlternatingBinary { .. }) {
                    return Err(CospaError::Config(
                        "uniform corruption is only defined over the alternating schedule".into(),
                    ));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// The discrete hidden-parameter set Z, in schedule order.
    pub fn hip_values(&self) -> Vec<f32> {
        match self {
            HipSchedule::AlternatingBinary { .. } => vec![-1.0, 1.0],
            HipSchedule::TriangleWave { values } | HipSchedule::SawtoothWave { values } => {
                values.clone()
            }
            HipSchedule::UniformCorrupt { base, .. } => base.hip_values(),
        }
    }

    pub fn period(&self) -> usize {
        match self {
            HipSchedule::AlternatingBinary { .. } => 2,
            HipSchedule::TriangleWave { values } => 2 * (values.len() - 1),
            HipSchedule::SawtoothWave { values } => values.len(),
            HipSchedule::UniformCorrupt { base, .. } => base.period(),
        }
    }

    fn wave_value(&self, phase: usize) -> f32 {
        match self {
            HipSchedule::TriangleWave { values } => {
                let n = values.len();
                let p = phase % (2 * (n - 1));
                if p < n {
                    values[p]
                } else {
                    values[2 * (n - 1) - p]
                }
            }
            HipSchedule::SawtoothWave { values } => values[phase % values.len()],
            _ => unreachable!("wave_value on a non-wave schedule"),
        }
    }

    /// Sample z_0 from a uniformly random phase, then apply the transition
    /// law length-1 times.
    pub fn sequence(&self, length: usize, rng: &mut impl Rng) -> Vec<f32> {
        debug_assert!(length >= 1);
        match self {
            HipSchedule::AlternatingBinary { switch_prob } => {
                let mut z: f32 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let mut out = Vec::with_capacity(length);
                out.push(z);
                for _ in 1..length {
                    if rng.random::<f64>() < *switch_prob as f64 {
                        z = -z;
                    }
                    out.push(z);
                }
                out
            }
            HipSchedule::TriangleWave { .. } | HipSchedule::SawtoothWave { .. } => {
                let phase0 = rng.random_range(0..self.period());
                (0..length).map(|i| self.wave_value(phase0 + i)).collect()
            }
            HipSchedule::UniformCorrupt { base, sigma } => {
                let values = base.hip_values();
                let HipSchedule::AlternatingBinary { switch_prob } = **base else {
                    unreachable!("validated corrupt base")
                };
                let mut z: f32 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let mut out = Vec::with_capacity(length);
                out.push(z);
                for _ in 1..length {
                    if rng.random::<f64>() < switch_prob as f64 {
                        z = -z;
                    }
                    if rng.random::<f64>() < *sigma as f64 {
                        z = values[rng.random_range(0..values.len())];
                    }
                    out.push(z);
                }
                out
            }
        }
    }
}

/// One noisy step of the alternating binary schedule: deterministic switch,
/// then with probability sigma a uniform redraw over Z. For sigma = 0 this is
/// the plain alternation; overall the switch probability is 1 - sigma/2.
pub fn hip_next_noisy(
    z_prev: f32,
    sigma: f32,
    values: &[f32],
    rng: &mut impl Rng,
) -> Result<f32> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(CospaError::Config(format!("sigma {sigma} outside [0,1]")));
    }
    if values.len() != 2 || !values.contains(&z_prev) {
        return Err(CospaError::Config(
            "noisy hip step expects a binary value set containing z_prev".into(),
        ));
    }
    let mut z = if z_prev == values[0] { values[1] } else { values[0] };
    if rng.random::<f64>() < sigma as f64 {
        z = values[rng.random_range(0..values.len())];
    }
    Ok(z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Episode length H.
    pub horizon: usize,
    /// Episodes per deployment M.
    pub episodes: usize,
    pub schedule: HipSchedule,
}

impl EnvSpec {
    pub fn standard(id: EnvId) -> EnvSpec {
        use std::f32::consts::PI;
        match id {
            EnvId::Goal1d => EnvSpec {
                id,
                state_dim: 1,
                action_dim: 1,
                horizon: 50,
                episodes: 10,
                schedule: HipSchedule::AlternatingBinary { switch_prob: 1.0 },
            },
            EnvId::Goal2d => EnvSpec {
                id,
                state_dim: 2,
                action_dim: 2,
                horizon: 50,
                episodes: 20,
                schedule: HipSchedule::TriangleWave {
                    values: vec![0.0, 3.0 * PI / 8.0, 6.0 * PI / 8.0, 9.0 * PI / 8.0, 3.0 * PI / 2.0],
                },
            },
            EnvId::Wind2d => EnvSpec {
                id,
                state_dim: 2,
                action_dim: 2,
                horizon: 50,
                episodes: 20,
                schedule: HipSchedule::SawtoothWave {
                    values: vec![0.0, 2.0 * PI / 5.0, 4.0 * PI / 5.0, 6.0 * PI / 5.0, 8.0 * PI / 5.0],
                },
            },
        }
    }

    /// Replace the schedule with its sigma-corrupted variant.
    pub fn with_hip_sigma(mut self, sigma: f32) -> Result<EnvSpec> {
        if sigma == 0.0 {
            return Ok(self);
        }
        self.schedule =
            HipSchedule::UniformCorrupt { base: Box::new(self.schedule), sigma };
        self.schedule.validate()?;
        Ok(self)
    }

    pub fn hip_values(&self) -> Vec<f32> {
        self.schedule.hip_values()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub s: Vec<f32>,
    pub t: usize,
    pub z: f32,
}

pub fn env_reset(spec: &EnvSpec, z: f32, rng: &mut impl Rng) -> EnvState {
    let s = match spec.id {
        EnvId::Goal1d | EnvId::Goal2d => (0..spec.state_dim)
            .map(|_| {
                (-STATE_BOUND as f64 + 2.0 * STATE_BOUND as f64 * rng.random::<f64>()) as f32
            })
            .collect(),
        EnvId::Wind2d => vec![0.0; spec.state_dim],
    };
    EnvState { s, t: 0, z }
}

fn goal_of(spec: &EnvSpec, z: f32) -> Vec<f32> {
    match spec.id {
        EnvId::Goal1d => vec![z],
        EnvId::Goal2d => vec![z.sin(), z.cos()],
        EnvId::Wind2d => vec![1.0, 0.0],
    }
}

fn dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

/// Pure transition: reward is computed on the pre-step state, actions and
/// next states are clipped to their boxes, done fires exactly at the horizon.
pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f32]) -> Result<(EnvState, f32, bool)> {
    if state.t >= spec.horizon {
        return Err(CospaError::Config("env_step on a finished episode".into()));
    }
    if action.len() != spec.action_dim {
        return Err(CospaError::Shape(format!(
            "action dim {} for {}-d env",
            action.len(),
            spec.action_dim
        )));
    }
    let a: Vec<f32> = action.iter().map(|v| v.clamp(-ACTION_BOUND, ACTION_BOUND)).collect();
    let goal = goal_of(spec, state.z);
    let reward = match spec.id {
        EnvId::Goal1d | EnvId::Goal2d => -dist(&state.s, &goal),
        EnvId::Wind2d => {
            if dist(&state.s, &goal) < WIND_GOAL_RADIUS {
                1.0
            } else {
                0.0
            }
        }
    };
    let mut s_next: Vec<f32> = state.s.iter().zip(&a).map(|(s, a)| s + a).collect();
    if spec.id == EnvId::Wind2d {
        s_next[0] += WIND_STRENGTH * state.z.sin();
        s_next[1] += WIND_STRENGTH * state.z.cos();
    }
    for v in &mut s_next {
        *v = v.clamp(-STATE_BOUND, STATE_BOUND);
    }
    let t = state.t + 1;
    let done = t == spec.horizon;
    Ok((EnvState { s: s_next, t, z: state.z }, reward, done))
}
