//! Identification datasets: simulated trajectories with measurement noise,
//! split labels and normalization statistics.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mprs::{mprs_with_rng, ExcitationSpec};
use super::{simulate, Plant, Sampling};
use crate::error::{Error, Result};
use crate::model::NormalizationStats;
use crate::seeds::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

/// One recorded experiment; `u[k]` and `y[k]` are per-sample channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub split: Split,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Standard deviation as a fraction of each channel's maximum deviation
    /// over the noiseless training split.
    Relative { fraction: f64 },
    /// Per-channel standard deviations.
    Absolute { u_std: Vec<f64>, y_std: Vec<f64> },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Relative { fraction: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Either one spec shared by every trajectory or one per trajectory.
    pub excitation: Vec<ExcitationSpec>,
    pub trajectory_length: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub sampling_time: f64,
    pub inner_steps: usize,
}

impl DatasetSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    fn excitation_for(&self, idx: usize) -> &ExcitationSpec {
        if self.excitation.len() == 1 {
            &self.excitation[0]
        } else {
            &self.excitation[idx]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::config("dataset must contain at least one trajectory"));
        }
        if self.trajectory_length < 2 {
            return Err(Error::config("trajectory length must be at least 2"));
        }
        if self.excitation.is_empty() || (self.excitation.len() != 1 && self.excitation.len() != self.total()) {
            return Err(Error::config(format!(
                "need 1 or {} excitation specs, got {}",
                self.total(),
                self.excitation.len()
            )));
        }
        for e in &self.excitation {
            e.validate()?;
        }
        match &self.noise {
            NoiseSpec::Relative { fraction } if !(*fraction >= 0.0 && fraction.is_finite()) => {
                return Err(Error::config("relative noise fraction must be nonnegative"));
            }
            NoiseSpec::Absolute { u_std, y_std }
                if u_std.iter().chain(y_std).any(|s| !(*s >= 0.0 && s.is_finite())) =>
            {
                return Err(Error::config("noise standard deviations must be nonnegative"));
            }
            _ => {}
        }
        Sampling::new(self.sampling_time, self.inner_steps)?;
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub plant: String,
    pub plant_params: serde_json::Value,
    pub spec: DatasetSpec,
    /// Realized noise standard deviations `(u, y)` per channel.
    pub noise_u_std: Vec<f64>,
    pub noise_y_std: Vec<f64>,
    /// Noise is added to the stored signals only; the plant sees clean inputs.
    pub noise_model: String,
    /// Which trajectories the normalization statistics were computed on.
    pub norm_source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub sampling_time: f64,
    pub norm: NormalizationStats,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn input_dim(&self) -> usize {
        self.norm.u_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.norm.y_mean.len()
    }

    /// Trajectories of `split` mapped through the dataset's normalization.
    pub fn normalized(&self, split: Split) -> Vec<Trajectory> {
        self.split(split).map(|t| normalize_trajectory(t, &self.norm)).collect()
    }
}

pub fn normalize_trajectory(t: &Trajectory, norm: &NormalizationStats) -> Trajectory {
    Trajectory {
        id: t.id,
        split: t.split,
        u: t.u.iter().map(|u| norm.normalize_u(u)).collect(),
        y: t.y.iter().map(|y| norm.normalize_y(y)).collect(),
    }
}

/// Normalization statistics from the training trajectories (all
/// trajectories if there are none).
pub fn compute_norm(trajectories: &[Trajectory]) -> Result<(NormalizationStats, String)> {
    let has_train = trajectories.iter().any(|t| t.split == Split::Train);
    let pick = |t: &&Trajectory| !has_train || t.split == Split::Train;
    let u = trajectories.iter().filter(pick).flat_map(|t| t.u.iter().map(|v| v.as_slice()));
    let y = trajectories.iter().filter(pick).flat_map(|t| t.y.iter().map(|v| v.as_slice()));
    let norm = NormalizationStats::from_samples(u, y)?;
    Ok((norm, if has_train { "train" } else { "all" }.to_string()))
}

fn split_for(idx: usize, spec: &DatasetSpec) -> Split {
    if idx < spec.n_train {
        Split::Train
    } else if idx < spec.n_train + spec.n_val {
        Split::Val
    } else {
        Split::Test
    }
}

fn max_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (sum, count) = values.clone().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return 0.0;
    }
    let mean = sum / count as f64;
    values.fold(0.0f64, |a, v| a.max((v - mean).abs()))
}

/// Simulates `spec.total()` trajectories with seeded excitation and initial
/// states, then adds Gaussian measurement noise to the stored signals.
pub fn build_dataset(plant: &dyn Plant, spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let sampling = Sampling::new(spec.sampling_time, spec.inner_steps)?;
    let (m, p) = (plant.input_dim(), plant.output_dim());
    let (lo, hi) = plant.input_range();

    let mut clean = Vec::with_capacity(spec.total());
    for idx in 0..spec.total() {
        let i = idx as u32;
        let mut exc_rng = stream(spec.seed, Purpose::Excitation, i);
        let channels = (0..m)
            .map(|_| mprs_with_rng(spec.excitation_for(idx), spec.trajectory_length, &mut exc_rng))
            .collect::<Result<Vec<_>>>()?;
        let u: Vec<Vec<f64>> = (0..spec.trajectory_length)
            .map(|k| channels.iter().map(|c| c[k]).collect())
            .collect();
        if u.iter().flatten().any(|v| *v < lo || *v > hi) {
            return Err(Error::config(format!(
                "excitation levels leave the admissible input range [{lo}, {hi}] of plant {}",
                plant.name()
            )));
        }
        let mut init_rng = stream(spec.seed, Purpose::PlantInitialState, i);
        let x0 = plant.initial_state(&mut init_rng);
        let y = simulate(plant, &x0, &u, sampling)?;
        clean.push(Trajectory {
            id: idx,
            split: split_for(idx, spec),
            u,
            y,
        });
    }

    let (u_std, y_std) = match &spec.noise {
        NoiseSpec::Absolute { u_std, y_std } => {
            if u_std.len() != m || y_std.len() != p {
                return Err(Error::config("absolute noise needs one std per channel"));
            }
            (u_std.clone(), y_std.clone())
        }
        NoiseSpec::Relative { fraction } => {
            let basis: Vec<&Trajectory> = if spec.n_train > 0 {
                clean.iter().filter(|t| t.split == Split::Train).collect()
            } else {
                clean.iter().collect()
            };
            let u_std = (0..m)
                .map(|c| fraction * max_dev(basis.iter().flat_map(|t| t.u.iter().map(move |v| v[c]))))
                .collect();
            let y_std = (0..p)
                .map(|c| fraction * max_dev(basis.iter().flat_map(|t| t.y.iter().map(move |v| v[c]))))
                .collect();
            (u_std, y_std)
        }
    };

    let mut trajectories = clean;
    for t in trajectories.iter_mut() {
        let mut rng = stream(spec.seed, Purpose::MeasurementNoise, t.id as u32);
        add_noise(&mut t.u, &u_std, &mut rng)?;
        add_noise(&mut t.y, &y_std, &mut rng)?;
    }

    let (norm, norm_source) = compute_norm(&trajectories)?;
    Ok(Dataset {
        trajectories,
        sampling_time: spec.sampling_time,
        norm,
        provenance: Provenance {
            plant: plant.name().to_string(),
            plant_params: plant.describe(),
            spec: spec.clone(),
            noise_u_std: u_std,
            noise_y_std: y_std,
            noise_model: "measurement-only".into(),
            norm_source,
        },
    })
}

fn add_noise(signal: &mut [Vec<f64>], std: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
    let dists = std
        .iter()
        .map(|s| Normal::new(0.0, *s).map_err(|e| Error::config(format!("noise: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    for sample in signal.iter_mut() {
        for (v, d) in sample.iter_mut().zip(&dists) {
            // zero std still draws, so streams stay aligned across noise levels
            let n = d.sample(rng);
            *v += n;
        }
    }
    Ok(())
}
