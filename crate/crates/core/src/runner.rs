//! Experiment orchestration: experiment files, seeded ensembles and CSV/JSON output.
//!
//! Realization `i` always runs on stream `(seed, i)` and results are reduced
//! in realization order, so output depends only on the experiment and its seed,
//! never on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boltzmann::{analytic_entropy_lower_bound, short_time_entropy, BoltzmannConfig, BoltzmannGas};
use crate::decoherence::{
    apply_channel, averaged_estimate, concurrence_vs_distance, epsilon_moments, markovian_analytic, ProbeChannel,
    TwoQubitState,
};
use crate::entanglement::{concurrence, meyer_wallach_closed_form, renyi2_entropy, von_neumann_entropy};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Partition};
use crate::lattice::{check_times, Axis, LatticeConfig, LatticeRun, ProbeMode};
use crate::rng::{stream, StreamRng};
use crate::state::{brute_force_reduced, reduced_density_matrix};
use crate::stats::{Accumulator, EnsembleSeries, SeriesRow};

/// Version of the CSV layout below.
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 6] = ["t", "mean", "stderr", "observable", "params_hash", "n"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Boltzmann,
    Lattice,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Boltzmann => "boltzmann",
            Self::Lattice => "lattice",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMeasure {
    #[default]
    VonNeumann,
    Renyi2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockSelection {
    /// Fresh uniformly random particles per realization.
    #[default]
    Random,
    /// Particles 0..size.
    First,
    /// Mean over the disjoint consecutive blocks covering the gas.
    All,
}

fn default_z() -> Vec<i8> {
    vec![1, 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    BlockEntropy {
        size: usize,
        #[serde(default)]
        measure: EntropyMeasure,
        #[serde(default)]
        selection: BlockSelection,
    },
    /// Entropy of the probe set with the rest of the gas.
    ProbeEntropy {
        #[serde(default)]
        measure: EntropyMeasure,
    },
    /// Largest cluster, plus the largest in-cluster lattice distance on a lattice.
    ClusterStats,
    MeyerWallach,
    /// Two-probe concurrence over the time grid.
    Concurrence { state: TwoQubitState },
    /// Two-probe concurrence at `t_o` against probe separation; the `t`
    /// column of these rows holds the distance.
    ConcurrenceScan {
        states: Vec<TwoQubitState>,
        distances: Vec<usize>,
        t_o: f64,
        #[serde(default = "default_axis")]
        axis: Axis,
    },
    /// |C̄(z)| of the averaged probe channel.
    ProbeCoherence {
        #[serde(default = "default_z")]
        z: Vec<i8>,
    },
    /// Exact ⟨ε⟩ and σ_Γ of the probe coherence z.
    EpsilonStats {
        #[serde(default = "default_z")]
        z: Vec<i8>,
    },
    /// Closed-form short-time entropy and lower bound for a block of `size`.
    EntropyBounds { size: usize },
    /// Markovian coherence curve for fast-dragged probes.
    MarkovianReference,
}

fn default_axis() -> Axis {
    Axis::Y
}

impl Observable {
    fn name(&self) -> &'static str {
        match self {
            Self::BlockEntropy { .. } => "block_entropy",
            Self::ProbeEntropy { .. } => "probe_entropy",
            Self::ClusterStats => "cluster_stats",
            Self::MeyerWallach => "meyer_wallach",
            Self::Concurrence { .. } => "concurrence",
            Self::ConcurrenceScan { .. } => "concurrence_scan",
            Self::ProbeCoherence { .. } => "probe_coherence",
            Self::EpsilonStats { .. } => "epsilon_stats",
            Self::EntropyBounds { .. } => "entropy_bounds",
            Self::MarkovianReference => "markovian_reference",
        }
    }

    fn check(&self, spec: &ExperimentSpec) -> Result<()> {
        let incompatible = || {
            Err(Error::IncompatibleObservable {
                observable: self.name().into(),
                model: spec.model.name().into(),
            })
        };
        let lattice = spec.lattice.as_ref();
        let probes = lattice.map_or(0, |l| l.n_probes());
        let primary = spec.primary_count();
        match self {
            Self::BlockEntropy { size, .. } => {
                if *size == 0 || *size > 12 || *size > primary {
                    return Err(Error::Config {
                        path: "observables.size".into(),
                        message: format!("block size must lie in 1..=min(12, {primary}), got {size}"),
                    });
                }
            }
            Self::ProbeEntropy { .. } | Self::ProbeCoherence { .. } | Self::EpsilonStats { .. } => {
                if probes == 0 || probes > 12 {
                    return incompatible();
                }
            }
            Self::Concurrence { .. } | Self::ConcurrenceScan { .. } => {
                if probes != 2 {
                    return incompatible();
                }
            }
            Self::EntropyBounds { size } => {
                if spec.model != ModelKind::Boltzmann {
                    return incompatible();
                }
                if *size > primary {
                    return Err(Error::Config {
                        path: "observables.size".into(),
                        message: format!("block larger than the gas: {size}"),
                    });
                }
            }
            Self::MarkovianReference => {
                let dragged = lattice
                    .and_then(|l| l.probes.as_ref())
                    .is_some_and(|p| matches!(p.mode, ProbeMode::Dragged { crossing_phase: Some(_), .. }));
                if !dragged {
                    return incompatible();
                }
            }
            Self::ClusterStats | Self::MeyerWallach => {}
        }
        if let Self::ProbeCoherence { z } | Self::EpsilonStats { z } = self {
            if z.len() != probes || z.iter().any(|x| !(-1..=1).contains(x)) {
                return Err(Error::Config {
                    path: "observables.z".into(),
                    message: format!("need {probes} entries from {{-1, 0, 1}}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Self::List(v) => v.clone(),
            Self::Range { start, stop, step } => {
                if step.is_nan() || *step <= 0.0 {
                    return Vec::new();
                }
                let count = ((stop - start) / step + 1e-9).floor().max(-1.0) as i64 + 1;
                (0..count.max(0)).map(|i| start + i as f64 * step).collect()
            }
        }
    }
}

fn default_name() -> String {
    "run".into()
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boltzmann: Option<BoltzmannConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    pub observables: Vec<Observable>,
    pub times: TimeGrid,
    #[serde(default = "one")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn prefixed(prefix: &str, err: Error) -> Error {
    match err {
        Error::Config { path, message } => Error::Config {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => other,
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().message().trim().to_string(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Reads `.json` as JSON and anything else as TOML, then validates.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        spec.validate()?;
        Ok(spec)
    }

    fn primary_count(&self) -> usize {
        match self.model {
            ModelKind::Boltzmann => self.boltzmann.as_ref().map_or(0, |b| b.n_particles),
            ModelKind::Lattice => self.lattice.as_ref().map_or(0, |l| l.n_background),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            ModelKind::Boltzmann => {
                let cfg = self.boltzmann.as_ref().ok_or_else(|| Error::Config {
                    path: "boltzmann".into(),
                    message: "model is boltzmann but the [boltzmann] table is missing".into(),
                })?;
                cfg.validate().map_err(|e| prefixed("boltzmann", e))?;
            }
            ModelKind::Lattice => {
                let cfg = self.lattice.as_ref().ok_or_else(|| Error::Config {
                    path: "lattice".into(),
                    message: "model is lattice but the [lattice] table is missing".into(),
                })?;
                cfg.validate().map_err(|e| prefixed("lattice", e))?;
            }
        }
        if self.ensemble == 0 {
            return Err(Error::Config {
                path: "ensemble".into(),
                message: "need at least one realization".into(),
            });
        }
        check_times(&self.times.points()).map_err(|e| Error::Config {
            path: "times".into(),
            message: e.to_string(),
        })?;
        for obs in &self.observables {
            obs.check(self)?;
        }
        Ok(())
    }

    /// SHA-256 of the experiment with seed and output location removed.
    pub fn params_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seed = 0;
        canonical.output = None;
        let json = serde_json::to_string(&canonical).expect("experiment serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything a run produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutput {
    pub name: String,
    pub params_hash: String,
    pub seed: u64,
    pub series: Vec<EnsembleSeries>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Realizations per flushed chunk.
    pub chunk: Option<usize>,
}

enum World {
    Gas(BoltzmannGas),
    Lattice(Box<LatticeRun>),
}

impl World {
    fn new(spec: &ExperimentSpec, rng: &mut StreamRng) -> Result<Self> {
        Ok(match spec.model {
            ModelKind::Boltzmann => World::Gas(BoltzmannGas::new(spec.boltzmann.clone().expect("validated"))?),
            ModelKind::Lattice => World::Lattice(Box::new(LatticeRun::new(spec.lattice.clone().expect("validated"), rng)?)),
        })
    }

    fn graph(&self) -> &InteractionGraph {
        match self {
            World::Gas(g) => &g.graph,
            World::Lattice(l) => &l.graph,
        }
    }

    fn advance_to(&mut self, t: f64, rng: &mut StreamRng) {
        match self {
            World::Gas(g) => {
                g.advance_to(t, rng);
            }
            World::Lattice(l) => l.advance_to(t, rng),
        }
    }

    fn probe_partition(&self) -> Result<Partition> {
        match self {
            World::Lattice(l) => l.probe_partition(),
            World::Gas(_) => Err(Error::InvalidParameter("no probes in a Boltzmann gas".into())),
        }
    }
}

enum Measured {
    Scalars(Vec<f64>),
    Channel(ProbeChannel),
    Nothing,
}

fn entropy(measure: EntropyMeasure, g: &InteractionGraph, p: &Partition) -> Result<f64> {
    let rho = reduced_density_matrix(g, p, false)?;
    match measure {
        EntropyMeasure::VonNeumann => von_neumann_entropy(&rho),
        EntropyMeasure::Renyi2 => Ok(renyi2_entropy(&rho)),
    }
}

fn blocks_for(obs: &Observable, primary: usize, total: usize, rng: &mut StreamRng) -> Result<Vec<Partition>> {
    let Observable::BlockEntropy { size, selection, .. } = obs else {
        return Ok(Vec::new());
    };
    let blocks: Vec<Vec<usize>> = match selection {
        BlockSelection::Random => vec![sample(rng, primary, *size).into_vec()],
        BlockSelection::First => vec![(0..*size).collect()],
        BlockSelection::All => (0..primary / size).map(|b| (b * size..(b + 1) * size).collect()).collect(),
    };
    blocks.into_iter().map(|b| Partition::new(total, b)).collect()
}

fn measure(obs: &Observable, world: &World, blocks: &[Partition]) -> Result<Measured> {
    let g = world.graph();
    Ok(match obs {
        Observable::BlockEntropy { measure, .. } => {
            let s: Result<Vec<f64>> = blocks.iter().map(|p| entropy(*measure, g, p)).collect();
            let s = s?;
            Measured::Scalars(vec![s.iter().sum::<f64>() / s.len() as f64])
        }
        Observable::ProbeEntropy { measure } => Measured::Scalars(vec![entropy(*measure, g, &world.probe_partition()?)?]),
        Observable::ClusterStats => {
            let largest = g.largest_cluster_size() as f64;
            match world {
                World::Lattice(l) => {
                    let metric = l.config.metric();
                    let d = g.max_entangled_distance(&l.state.positions(), &metric)? as f64;
                    Measured::Scalars(vec![largest, d])
                }
                World::Gas(_) => Measured::Scalars(vec![largest]),
            }
        }
        Observable::MeyerWallach => Measured::Scalars(vec![meyer_wallach_closed_form(g)?]),
        Observable::Concurrence { .. } | Observable::ProbeCoherence { .. } => {
            let p = world.probe_partition()?;
            Measured::Channel(ProbeChannel::from_graph(g, &p, 0.0, None)?)
        }
        Observable::EpsilonStats { z } => {
            let (mean, width) = epsilon_moments(g, &world.probe_partition()?, z)?;
            Measured::Scalars(vec![mean, width])
        }
        Observable::ConcurrenceScan { .. } | Observable::EntropyBounds { .. } | Observable::MarkovianReference => {
            Measured::Nothing
        }
    })
}

/// Per-realization traces: `[realization][time][observable]`.
fn simulate(spec: &ExperimentSpec, times: &[f64], range: std::ops::Range<usize>) -> Result<Vec<Vec<Vec<Measured>>>> {
    let primary = spec.primary_count();
    range
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, i as u64);
            let mut world = World::new(spec, &mut rng)?;
            let total = world.graph().n_particles();
            let blocks: Vec<Vec<Partition>> = spec
                .observables
                .iter()
                .map(|o| blocks_for(o, primary, total, &mut rng))
                .collect::<Result<_>>()?;
            times
                .iter()
                .map(|&t| {
                    world.advance_to(t, &mut rng);
                    spec.observables
                        .iter()
                        .zip(&blocks)
                        .map(|(o, b)| measure(o, &world, b))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn exact_series(name: String, times: &[f64], values: impl Iterator<Item = f64>) -> EnsembleSeries {
    EnsembleSeries {
        observable: name,
        rows: times
            .iter()
            .zip(values)
            .map(|(&t, mean)| SeriesRow { t, mean, stderr: 0.0, n: 0 })
            .collect(),
        metadata: BTreeMap::from([("kind".to_string(), "analytic".to_string())]),
    }
}

fn z_label(z: &[i8]) -> String {
    z.iter().map(|x| match x {
        -1 => 'm',
        0 => '0',
        _ => 'p',
    })
    .collect()
}

/// With `partial` set, observables that run their own ensembles are skipped.
fn reduce(
    spec: &ExperimentSpec,
    times: &[f64],
    traces: &[Vec<Vec<Measured>>],
    partial: bool,
) -> Result<Vec<EnsembleSeries>> {
    let mut out = Vec::new();
    for (j, obs) in spec.observables.iter().enumerate() {
        if partial && matches!(obs, Observable::ConcurrenceScan { .. }) {
            continue;
        }
        let scalar = |slot: usize| -> Vec<Accumulator> {
            (0..times.len())
                .map(|ti| {
                    traces
                        .iter()
                        .filter_map(|r| match &r[ti][j] {
                            Measured::Scalars(v) => v.get(slot).copied(),
                            _ => None,
                        })
                        .collect()
                })
                .collect()
        };
        let channels = |ti: usize| -> Vec<ProbeChannel> {
            traces
                .iter()
                .filter_map(|r| match &r[ti][j] {
                    Measured::Channel(c) => Some(c.clone()),
                    _ => None,
                })
                .collect()
        };
        match obs {
            Observable::BlockEntropy { size, measure, selection } => {
                let name = match measure {
                    EntropyMeasure::VonNeumann => format!("block_entropy_{size}"),
                    EntropyMeasure::Renyi2 => format!("block_renyi2_{size}"),
                };
                out.push(
                    EnsembleSeries::from_accumulators(name, times, &scalar(0))
                        .with_metadata("block_selection", format!("{selection:?}").to_lowercase()),
                );
            }
            Observable::ProbeEntropy { measure } => {
                let name = match measure {
                    EntropyMeasure::VonNeumann => "probe_entropy",
                    EntropyMeasure::Renyi2 => "probe_renyi2",
                };
                out.push(EnsembleSeries::from_accumulators(name, times, &scalar(0)));
            }
            Observable::ClusterStats => {
                out.push(EnsembleSeries::from_accumulators("cluster_size", times, &scalar(0)));
                if spec.model == ModelKind::Lattice {
                    out.push(EnsembleSeries::from_accumulators("max_entangled_distance", times, &scalar(1)));
                }
            }
            Observable::MeyerWallach => out.push(EnsembleSeries::from_accumulators("meyer_wallach", times, &scalar(0))),
            Observable::EpsilonStats { z } => {
                let label = z_label(z);
                out.push(EnsembleSeries::from_accumulators(format!("epsilon_mean_{label}"), times, &scalar(0)));
                out.push(EnsembleSeries::from_accumulators(format!("epsilon_width_{label}"), times, &scalar(1)));
            }
            Observable::ProbeCoherence { z } => {
                let mut rows = Vec::new();
                for (ti, &t) in times.iter().enumerate() {
                    let ch = channels(ti);
                    let (mean, stderr) = averaged_estimate(&ch, |c| Ok(c.factor(z)?.norm()))?;
                    rows.push(SeriesRow { t, mean, stderr, n: ch.len() });
                }
                out.push(EnsembleSeries {
                    observable: format!("probe_coherence_{}", z_label(z)),
                    rows,
                    metadata: BTreeMap::from([("averaging".to_string(), "averaged channel".to_string())]),
                });
            }
            Observable::Concurrence { state } => {
                let rho = state.density_matrix();
                let (mut avg_rows, mut mean_rows) = (Vec::new(), Vec::new());
                for (ti, &t) in times.iter().enumerate() {
                    let ch = channels(ti);
                    let (mean, stderr) = averaged_estimate(&ch, |c| concurrence(&apply_channel(c, &rho)?))?;
                    avg_rows.push(SeriesRow { t, mean, stderr, n: ch.len() });
                    let acc: Accumulator = ch
                        .iter()
                        .map(|c| concurrence(&apply_channel(c, &rho)?))
                        .collect::<Result<Vec<f64>>>()?
                        .into_iter()
                        .collect();
                    mean_rows.push(SeriesRow {
                        t,
                        mean: acc.mean(),
                        stderr: acc.stderr(),
                        n: acc.count(),
                    });
                }
                out.push(EnsembleSeries {
                    observable: format!("concurrence_{}", state.name()),
                    rows: avg_rows,
                    metadata: BTreeMap::from([("averaging".to_string(), "concurrence of the averaged state".to_string())]),
                });
                out.push(EnsembleSeries {
                    observable: format!("mean_concurrence_{}", state.name()),
                    rows: mean_rows,
                    metadata: BTreeMap::from([("averaging".to_string(), "mean of per-realization concurrences".to_string())]),
                });
            }
            Observable::ConcurrenceScan { states, distances, t_o, axis } => {
                let cfg = spec.lattice.as_ref().expect("validated");
                let rows = concurrence_vs_distance(cfg, states, *t_o, distances, *axis, spec.ensemble, spec.seed)?;
                for &state in states {
                    let mine: Vec<_> = rows.iter().filter(|r| r.state == state).collect();
                    let series = |name: String, pick: &dyn Fn(&&crate::decoherence::ConcurrenceRow) -> (f64, f64)| EnsembleSeries {
                        observable: name,
                        rows: mine
                            .iter()
                            .map(|r| {
                                let (mean, stderr) = pick(r);
                                SeriesRow { t: r.distance as f64, mean, stderr, n: r.n }
                            })
                            .collect(),
                        metadata: BTreeMap::from([
                            ("abscissa".to_string(), "distance".to_string()),
                            ("t_o".to_string(), t_o.to_string()),
                        ]),
                    };
                    out.push(series(format!("concurrence_{}_vs_distance", state.name()), &|r| {
                        (r.averaged_state, r.averaged_state_stderr)
                    }));
                    out.push(series(format!("mean_concurrence_{}_vs_distance", state.name()), &|r| {
                        (r.mean_concurrence, r.mean_concurrence_stderr)
                    }));
                }
            }
            Observable::EntropyBounds { size } => {
                let cfg = spec.boltzmann.as_ref().expect("validated");
                let r = cfg.collision_rate();
                let n = cfg.n_particles;
                let short: Vec<f64> = times
                    .iter()
                    .map(|&t| short_time_entropy(n, *size, r * t).map(|f| f.value))
                    .collect::<Result<_>>()?;
                let bound: Vec<f64> = times
                    .iter()
                    .map(|&t| analytic_entropy_lower_bound(n, *size, r, t))
                    .collect::<Result<_>>()?;
                out.push(exact_series(format!("short_time_entropy_{size}"), times, short.into_iter()));
                out.push(exact_series(format!("entropy_lower_bound_{size}"), times, bound.into_iter()));
            }
            Observable::MarkovianReference => {
                let cfg = spec.lattice.as_ref().expect("validated");
                let Some(ProbeMode::Dragged { speed, crossing_phase: Some(phi), .. }) = cfg.probes.as_ref().map(|p| &p.mode)
                else {
                    unreachable!("validated")
                };
                let nu = cfg.filling();
                let values = times.iter().map(|&t| {
                    let steps = (t / cfg.dt).round();
                    let k = (speed * steps * cfg.dt + 1e-9).floor() as u32;
                    markovian_analytic(nu, *phi, k)
                });
                out.push(exact_series("markovian_reference".into(), times, values));
            }
        }
    }
    Ok(out)
}

fn design_metadata(spec: &ExperimentSpec) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("csv_schema".into(), CSV_SCHEMA_VERSION.to_string());
    m.insert("model".into(), spec.model.name().into());
    m.insert("ensemble".into(), spec.ensemble.to_string());
    m.insert("seed".into(), spec.seed.to_string());
    m.insert("rng".into(), "ChaCha8 stream (seed, realization)".into());
    m.insert("stderr".into(), "sample std / sqrt(n); jackknife over 20 groups for averaged-channel quantities".into());
    m.insert("entropy_units".into(), "bits".into());
    match spec.model {
        ModelKind::Boltzmann => {
            let cfg = spec.boltzmann.as_ref().expect("validated");
            m.insert("collision_sampler".into(), "pairwise Bernoulli per substep, r*h <= 0.1".into());
            m.insert("relative_speed".into(), "flux-weighted Maxwell, floor 1e-6 sigma".into());
            m.insert("interaction_range".into(), "equal to diameter".into());
            m.insert("collision_rate".into(), cfg.collision_rate().to_string());
            m.insert("sigma".into(), cfg.sigma().to_string());
        }
        ModelKind::Lattice => {
            let cfg = spec.lattice.as_ref().expect("validated");
            m.insert("boundaries".into(), "periodic".into());
            m.insert("exclusion".into(), "hops onto occupied sites rejected".into());
            m.insert("background_coupling".into(), "nearest neighbours, 4-neighbourhood".into());
            m.insert("probe_coupling".into(), "same site only".into());
            m.insert("filling".into(), cfg.filling().to_string());
            m.insert("eta_dt".into(), (cfg.hop_rate * cfg.dt).to_string());
            m.insert("distance".into(), "periodic Manhattan".into());
        }
    }
    m
}

/// Runs every realization and reduces the observables.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutput> {
    run_with(spec, &RunOptions::default(), |_, _| Ok(()))
}

/// Like [`run`], calling `flush` with the partial output after each chunk of
/// realizations and with the final output at the end.
pub fn run_with<F>(spec: &ExperimentSpec, opts: &RunOptions, mut flush: F) -> Result<RunOutput>
where
    F: FnMut(&RunOutput, bool) -> Result<()> + Send,
{
    spec.validate()?;
    let work = |flush: &mut F| -> Result<RunOutput> {
        let times = spec.times.points();
        let chunk = opts.chunk.unwrap_or(spec.ensemble).max(1);
        let mut traces = Vec::with_capacity(spec.ensemble);
        let mut start = 0;
        let has_dynamic = spec
            .observables
            .iter()
            .any(|o| !matches!(o, Observable::EntropyBounds { .. } | Observable::MarkovianReference | Observable::ConcurrenceScan { .. }));
        while has_dynamic && start < spec.ensemble {
            let end = (start + chunk).min(spec.ensemble);
            traces.extend(simulate(spec, &times, start..end)?);
            start = end;
            if start < spec.ensemble {
                flush(&package(spec, reduce(spec, &times, &traces, true)?), false)?;
            }
        }
        let output = package(spec, reduce(spec, &times, &traces, false)?);
        flush(&output, true)?;
        Ok(output)
    };
    match opts.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            pool.install(|| work(&mut flush))
        }
        None => work(&mut flush),
    }
}

fn package(spec: &ExperimentSpec, series: Vec<EnsembleSeries>) -> RunOutput {
    RunOutput {
        name: spec.name.clone(),
        params_hash: spec.params_hash(),
        seed: spec.seed,
        series,
        metadata: design_metadata(spec),
    }
}

impl RunOutput {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_error)?;
        for s in &self.series {
            for r in &s.rows {
                w.write_record([
                    r.t.to_string(),
                    r.mean.to_string(),
                    r.stderr.to_string(),
                    s.observable.clone(),
                    self.params_hash.clone(),
                    r.n.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidState(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn series(&self, observable: &str) -> Option<&EnsembleSeries> {
        self.series.iter().find(|s| s.observable == observable)
    }

    /// Writes `<name>.csv`, `<name>.json` and `<name>.meta.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.name));
        let json_path = dir.join(format!("{}.json", self.name));
        let meta_path = dir.join(format!("{}.meta.json", self.name));
        fs::write(&csv_path, self.to_csv()?)?;
        fs::write(&json_path, self.to_json()?)?;
        let meta = serde_json::json!({
            "name": self.name,
            "params_hash": self.params_hash,
            "seed": self.seed,
            "csv_header": CSV_HEADER,
            "design": self.metadata,
        });
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
        Ok(vec![csv_path, json_path, meta_path])
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidState(format!("CSV write failed: {e}"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub trials: usize,
    pub max_error: f64,
    pub failures: usize,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares the coherence-factor construction with brute-force partial traces
/// on random graphs of up to `n_max` particles and random blocks.
pub fn oracle_check(n_max: usize, trials: usize, seed: u64) -> Result<OracleReport> {
    use rand::Rng;
    use std::f64::consts::TAU;
    if !(2..=crate::state::BRUTE_FORCE_CAP).contains(&n_max) {
        return Err(Error::InvalidParameter(format!(
            "n must lie in 2..={}, got {n_max}",
            crate::state::BRUTE_FORCE_CAP
        )));
    }
    let tolerance = 1e-10;
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let n = rng.random_range(2..=n_max);
            let density = rng.random_range(0.1..0.9);
            let mut g = InteractionGraph::new(n);
            for k in 0..n {
                for l in k + 1..n {
                    if rng.random::<f64>() < density {
                        g.add_phase(k, l, rng.random_range(0.0..TAU))?;
                    }
                }
            }
            let n_a = rng.random_range(1..=n.min(6));
            let block = sample(&mut rng, n, n_a).into_vec();
            let p = Partition::new(n, block)?;
            let fast = reduced_density_matrix(&g, &p, true)?;
            let slow = brute_force_reduced(&g, &p)?;
            let err = (0..fast.dim())
                .flat_map(|r| (0..fast.dim()).map(move |c| (r, c)))
                .map(|(r, c)| (fast.entry(r, c) - slow.entry(r, c)).norm())
                .fold(0.0, f64::max);
            Ok(err)
        })
        .collect::<Result<_>>()?;
    Ok(OracleReport {
        trials,
        max_error: errors.iter().copied().fold(0.0, f64::max),
        failures: errors.iter().filter(|&&e| e.is_nan() || e > tolerance).count(),
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LATTICE_SPEC: &str = r#"
name = "tiny"
model = "lattice"
ensemble = 6
seed = 3
times = { start = 0.0, stop = 2.0, step = 0.5 }

[lattice]
dims = [6, 6]
n_background = 12
hop_rate = 1.0
coupling = 0.8
dt = 0.1

[lattice.probes]
positions = [[1, 1], [1, 1]]
mode = { kind = "hopping", rate = 0.0 }

[[observables]]
kind = "block_entropy"
size = 3

[[observables]]
kind = "probe_entropy"

[[observables]]
kind = "cluster_stats"

[[observables]]
kind = "concurrence"
state = "phi-plus"

[[observables]]
kind = "probe_coherence"
z = [1, -1]

[[observables]]
kind = "epsilon_stats"
"#;

    fn boltzmann_spec(seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            name: "gas".into(),
            model: ModelKind::Boltzmann,
            boltzmann: Some(BoltzmannConfig::with_collision_rate(
                10,
                1.0,
                0.0,
                crate::boltzmann::PhaseMode::RandomUniform,
            )),
            lattice: None,
            observables: vec![
                Observable::BlockEntropy {
                    size: 2,
                    measure: EntropyMeasure::VonNeumann,
                    selection: BlockSelection::First,
                },
                Observable::EntropyBounds { size: 2 },
                Observable::MeyerWallach,
            ],
            times: TimeGrid::List(vec![0.0, 0.5, 1.0]),
            ensemble: 20,
            seed,
            output: None,
        }
    }

    #[test]
    fn parses_and_runs_a_lattice_experiment() {
        let spec = ExperimentSpec::from_toml_str(LATTICE_SPEC).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.times.points(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let out = run(&spec).unwrap();
        let names: Vec<&str> = out.series.iter().map(|s| s.observable.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "block_entropy_3",
                "probe_entropy",
                "cluster_size",
                "max_entangled_distance",
                "concurrence_phi+",
                "mean_concurrence_phi+",
                "probe_coherence_pm",
                "epsilon_mean_pp",
                "epsilon_width_pp",
            ]
        );
        // co-located fixed probes keep the antisymmetric coherence intact
        for r in &out.series("probe_coherence_pm").unwrap().rows {
            assert!((r.mean - 1.0).abs() < 1e-12);
        }
        assert_eq!(out.series("block_entropy_3").unwrap().rows[0].mean, 0.0);
        assert!(out.series.iter().all(|s| s.rows.iter().all(|r| r.n == 6)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = ExperimentSpec::from_toml_str(LATTICE_SPEC).unwrap();
        let a = run(&spec).unwrap().to_csv().unwrap();
        let b = run_with(&spec, &RunOptions { workers: Some(2), chunk: Some(4) }, |_, _| Ok(())).unwrap().to_csv().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("t,mean,stderr,observable,params_hash,n\n"));
        let mut other = spec.clone();
        other.seed = 4;
        assert_ne!(run(&other).unwrap().to_csv().unwrap(), a);
        assert_eq!(other.params_hash(), spec.params_hash());
    }

    #[test]
    fn analytic_columns_ignore_the_seed() {
        let a = run(&boltzmann_spec(1)).unwrap();
        let b = run(&boltzmann_spec(2)).unwrap();
        for name in ["short_time_entropy_2", "entropy_lower_bound_2"] {
            assert_eq!(a.series(name), b.series(name));
        }
        assert_ne!(a.series("block_entropy_2"), b.series("block_entropy_2"));
        assert_eq!(a.series("entropy_lower_bound_2").unwrap().rows[0].mean, 0.0);
    }

    #[test]
    fn trivial_model_gives_zero_entropy() {
        let spec = ExperimentSpec::from_toml_str(
            r#"
model = "lattice"
times = [0.0, 1.0, 2.0]
[lattice]
dims = [8, 8]
n_background = 4
hop_rate = 0.0
coupling = 0.8
dt = 0.1
[[observables]]
kind = "block_entropy"
size = 2
selection = "first"
"#,
        )
        .unwrap();
        // particles 0..4 land on random sites; freeze them far apart instead
        let mut rng = stream(0, 0);
        let cfg = spec.lattice.clone().unwrap();
        let mut state = crate::lattice::LatticeState::from_positions(&cfg, &[(0, 0), (0, 4), (4, 0), (4, 4)]).unwrap();
        let mut g = InteractionGraph::new(4);
        for _ in 0..20 {
            crate::lattice::hop_step(&mut state, &cfg, &mut g, &mut rng);
        }
        let p = Partition::new(4, [0, 1]).unwrap();
        assert_eq!(entropy(EntropyMeasure::VonNeumann, &g, &p).unwrap(), 0.0);
        assert_eq!(run(&spec).unwrap().series[0].rows[0].mean, 0.0);
    }

    #[test]
    fn config_errors_carry_field_paths() {
        let err = ExperimentSpec::from_toml_str(&LATTICE_SPEC.replace("hop_rate = 1.0", "hop_rate = \"fast\"")).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "lattice.hop_rate"),
            other => panic!("{other:?}"),
        }
        let err = ExperimentSpec::from_toml_str(&LATTICE_SPEC.replace("dt = 0.1", "dt = 0.1\nwidth = 3")).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err:?}");

        let spec = ExperimentSpec::from_toml_str(&LATTICE_SPEC.replace("dt = 0.1", "dt = -0.1")).unwrap();
        match spec.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "lattice.dt"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn incompatible_observables_are_rejected() {
        let mut spec = boltzmann_spec(0);
        spec.observables.push(Observable::ProbeEntropy {
            measure: EntropyMeasure::VonNeumann,
        });
        assert!(matches!(spec.validate(), Err(Error::IncompatibleObservable { .. })));
        let mut spec = ExperimentSpec::from_toml_str(LATTICE_SPEC).unwrap();
        spec.observables.push(Observable::EntropyBounds { size: 2 });
        assert!(matches!(spec.validate(), Err(Error::IncompatibleObservable { .. })));
        spec.observables.pop();
        spec.observables.push(Observable::MarkovianReference);
        assert!(matches!(spec.validate(), Err(Error::IncompatibleObservable { .. })));
    }

    #[test]
    fn json_mirror_parses() {
        let spec = boltzmann_spec(5);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(ExperimentSpec::from_json_str(&text).unwrap(), spec);
    }

    #[test]
    fn stderr_halves_roughly_when_ensemble_quadruples() {
        let mut spec = boltzmann_spec(9);
        spec.ensemble = 100;
        let small = run(&spec).unwrap().series("block_entropy_2").unwrap().rows[2].stderr;
        spec.ensemble = 400;
        let large = run(&spec).unwrap().series("block_entropy_2").unwrap().rows[2].stderr;
        let ratio = small / large;
        assert!((1.5..2.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn partial_flushes_precede_the_final_one() {
        let spec = ExperimentSpec::from_toml_str(LATTICE_SPEC).unwrap();
        let mut seen = Vec::new();
        run_with(&spec, &RunOptions { workers: None, chunk: Some(2) }, |out, done| {
            seen.push((out.series[0].rows[0].n, done));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(2, false), (4, false), (6, true)]);
    }

    #[test]
    fn oracle_check_passes() {
        let report = oracle_check(8, 40, 1).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(oracle_check(1, 1, 0).is_err());
    }
}
