//! Lattice gas: background particles hopping incoherently on a periodic
//! grid with hard-core exclusion, plus probe particles on a separate layer.
//!
//! Background neighbours on the 4-neighbourhood accumulate `g_o·δt` per step.
//! A probe couples only to the background particle on its own site, at the
//! same rate, or, when dragged with a fixed crossing phase, picks up `φ` from
//! the occupant of each site it enters.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::von_neumann_entropy;
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, LatticeMetric, Partition};
use crate::rng::{stream, BernoulliSkipper, StreamRng};
use crate::state::reduced_density_matrix;
use crate::stats::{Accumulator, EnsembleSeries};

/// Neighbour offsets in the order up, down, left, right.
const STEPS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// First coordinate.
    X,
    /// Second coordinate.
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProbeMode {
    /// Random hops at `rate`; zero pins the probe.
    Hopping { rate: f64 },
    /// Uniform motion at `speed` sites per unit time in the + direction of
    /// `axis`. With `crossing_phase` set, each entered occupied site adds that
    /// phase; otherwise the probe couples at `g_o` like a resting one.
    Dragged {
        speed: f64,
        axis: Axis,
        #[serde(default)]
        crossing_phase: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub positions: Vec<(usize, usize)>,
    pub mode: ProbeMode,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// (M₁, M₂), both periodic.
    pub dims: (usize, usize),
    pub n_background: usize,
    /// η.
    pub hop_rate: f64,
    /// g_o.
    pub coupling: f64,
    pub dt: f64,
    #[serde(default)]
    pub probes: Option<ProbeSpec>,
    /// Background-background phases. Probe observables do not need them.
    #[serde(default = "yes")]
    pub track_background_phases: bool,
}

impl LatticeConfig {
    /// Square-ish lattice at filling ν with η·δt = 0.1 and no probes.
    pub fn with_filling(dims: (usize, usize), filling: f64, hop_rate: f64, coupling: f64) -> Self {
        let sites = dims.0 * dims.1;
        Self {
            dims,
            n_background: (filling * sites as f64).round() as usize,
            hop_rate,
            coupling,
            dt: if hop_rate > 0.0 { 0.1 / hop_rate } else { 0.1 },
            probes: None,
            track_background_phases: true,
        }
    }

    pub fn sites(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    /// ν = N / (M₁M₂).
    pub fn filling(&self) -> f64 {
        self.n_background as f64 / self.sites() as f64
    }

    pub fn n_probes(&self) -> usize {
        self.probes.as_ref().map_or(0, |p| p.positions.len())
    }

    /// Background particles then probes.
    pub fn n_total(&self) -> usize {
        self.n_background + self.n_probes()
    }

    pub fn metric(&self) -> LatticeMetric {
        LatticeMetric { dims: self.dims }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(Error::Config {
                path: path.into(),
                message,
            })
        };
        if self.dims.0 < 3 || self.dims.1 < 3 {
            return bad("dims", format!("each side needs at least 3 sites, got {:?}", self.dims));
        }
        if self.n_background == 0 || self.n_background > self.sites() {
            return bad(
                "n_background",
                format!("filling must lie in (0, 1], got {}/{}", self.n_background, self.sites()),
            );
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.hop_rate >= 0.0 && self.hop_rate * self.dt <= 0.5) {
            return bad("hop_rate", format!("need 0 ≤ η·δt ≤ 0.5, got {}", self.hop_rate * self.dt));
        }
        if !self.coupling.is_finite() {
            return bad("coupling", format!("must be finite, got {}", self.coupling));
        }
        if let Some(probes) = &self.probes {
            for (i, &(x, y)) in probes.positions.iter().enumerate() {
                if x >= self.dims.0 || y >= self.dims.1 {
                    return bad(&format!("probes.positions[{i}]"), format!("({x}, {y}) is off the lattice"));
                }
            }
            match probes.mode {
                ProbeMode::Hopping { rate } => {
                    if !(rate >= 0.0 && rate * self.dt <= 0.5) {
                        return bad("probes.mode.rate", format!("need 0 ≤ η_p·δt ≤ 0.5, got {}", rate * self.dt));
                    }
                }
                ProbeMode::Dragged { speed, crossing_phase, .. } => {
                    if !(speed >= 0.0 && speed.is_finite()) {
                        return bad("probes.mode.speed", format!("must be non-negative, got {speed}"));
                    }
                    if crossing_phase.is_some_and(|p| !p.is_finite()) {
                        return bad("probes.mode.crossing_phase", "must be finite".into());
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeState {
    dims: (usize, usize),
    dt: f64,
    /// Site → background particle.
    occupancy: Vec<Option<usize>>,
    /// Background particle → site.
    sites: Vec<usize>,
    probe_start: Vec<(usize, usize)>,
    probes: Vec<(usize, usize)>,
    /// Sites advanced so far by dragged probes.
    drag_offset: usize,
    step: u64,
}

impl LatticeState {
    /// Background particles on uniformly random distinct sites.
    pub fn random<R: Rng + ?Sized>(cfg: &LatticeConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let sites = sample(rng, cfg.sites(), cfg.n_background).into_vec();
        Self::build(cfg, sites)
    }

    pub fn from_positions(cfg: &LatticeConfig, positions: &[(usize, usize)]) -> Result<Self> {
        cfg.validate()?;
        if positions.len() != cfg.n_background {
            return Err(Error::DimensionMismatch {
                expected: cfg.n_background,
                got: positions.len(),
            });
        }
        let mut sites = Vec::with_capacity(positions.len());
        for &(x, y) in positions {
            if x >= cfg.dims.0 || y >= cfg.dims.1 {
                return Err(Error::InvalidState(format!("({x}, {y}) is off the lattice")));
            }
            sites.push(x * cfg.dims.1 + y);
        }
        Self::build(cfg, sites)
    }

    fn build(cfg: &LatticeConfig, sites: Vec<usize>) -> Result<Self> {
        let mut occupancy = vec![None; cfg.sites()];
        for (k, &s) in sites.iter().enumerate() {
            if occupancy[s].replace(k).is_some() {
                return Err(Error::InvalidState(format!("site {s} occupied twice")));
            }
        }
        let probe_start = cfg.probes.as_ref().map(|p| p.positions.clone()).unwrap_or_default();
        Ok(Self {
            dims: cfg.dims,
            dt: cfg.dt,
            occupancy,
            sites,
            probes: probe_start.clone(),
            probe_start,
            drag_offset: 0,
            step: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn coords(&self, site: usize) -> (usize, usize) {
        (site / self.dims.1, site % self.dims.1)
    }

    fn site(&self, (x, y): (usize, usize)) -> usize {
        x * self.dims.1 + y
    }

    fn shifted(&self, (x, y): (usize, usize), (dx, dy): (isize, isize)) -> (usize, usize) {
        let m = (self.dims.0 as isize, self.dims.1 as isize);
        (
            (x as isize + dx).rem_euclid(m.0) as usize,
            (y as isize + dy).rem_euclid(m.1) as usize,
        )
    }

    pub fn position(&self, k: usize) -> (usize, usize) {
        self.coords(self.sites[k])
    }

    /// Background positions followed by probe positions, in graph order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = (0..self.sites.len()).map(|k| self.position(k)).collect();
        out.extend_from_slice(&self.probes);
        out
    }

    pub fn probe_positions(&self) -> &[(usize, usize)] {
        &self.probes
    }

    pub fn occupant(&self, pos: (usize, usize)) -> Option<usize> {
        self.occupancy[self.site(pos)]
    }

    pub fn is_occupied(&self, pos: (usize, usize)) -> bool {
        self.occupant(pos).is_some()
    }

    /// Occupancy grid and particle map agree and no site holds two particles.
    pub fn is_consistent(&self) -> bool {
        let mut seen = vec![false; self.occupancy.len()];
        for (k, &s) in self.sites.iter().enumerate() {
            if seen[s] || self.occupancy[s] != Some(k) {
                return false;
            }
            seen[s] = true;
        }
        self.occupancy.iter().filter(|o| o.is_some()).count() == self.sites.len()
    }
}

/// Advances the lattice by one δt and accumulates the resulting phases in `g`.
pub fn hop_step<R: Rng + ?Sized>(state: &mut LatticeState, cfg: &LatticeConfig, g: &mut InteractionGraph, rng: &mut R) {
    let n = state.sites.len();
    let mut hoppers = BernoulliSkipper::new(n, cfg.hop_rate * cfg.dt);
    while let Some(k) = hoppers.next_index(rng) {
        let from = state.sites[k];
        let to = state.site(state.shifted(state.coords(from), STEPS[rng.random_range(0..4)]));
        if state.occupancy[to].is_none() {
            state.occupancy[from] = None;
            state.occupancy[to] = Some(k);
            state.sites[k] = to;
        }
    }
    state.step += 1;

    let dphi = cfg.coupling * cfg.dt;
    if cfg.track_background_phases && dphi != 0.0 {
        for k in 0..n {
            let here = state.position(k);
            for step in [(0, 1), (1, 0)] {
                if let Some(l) = state.occupant(state.shifted(here, step)) {
                    g.add_phase(k, l, dphi).expect("particles on the lattice are in range");
                }
            }
        }
    }

    let Some(spec) = &cfg.probes else { return };
    match &spec.mode {
        ProbeMode::Hopping { rate } => {
            for i in 0..state.probes.len() {
                if *rate > 0.0 && rng.random::<f64>() < rate * cfg.dt {
                    state.probes[i] = state.shifted(state.probes[i], STEPS[rng.random_range(0..4)]);
                }
                couple_resting(state, g, n + i, state.probes[i], dphi);
            }
        }
        ProbeMode::Dragged {
            speed,
            axis,
            crossing_phase,
        } => {
            let target = (speed * state.time() + 1e-9).floor() as usize;
            let entered = target.saturating_sub(state.drag_offset);
            for i in 0..state.probes.len() {
                let start = state.probe_start[i];
                for j in 1..=entered {
                    let along = (state.drag_offset + j) as isize;
                    let delta = match axis {
                        Axis::X => (along, 0),
                        Axis::Y => (0, along),
                    };
                    let pos = state.shifted(start, delta);
                    if let Some(phase) = crossing_phase {
                        if let Some(k) = state.occupant(pos) {
                            g.add_phase(k, n + i, *phase).expect("probe index in range");
                        }
                    }
                    state.probes[i] = pos;
                }
                if crossing_phase.is_none() {
                    couple_resting(state, g, n + i, state.probes[i], dphi);
                }
            }
            state.drag_offset = state.drag_offset.max(target);
        }
    }
}

fn couple_resting(state: &LatticeState, g: &mut InteractionGraph, probe: usize, pos: (usize, usize), dphi: f64) {
    if dphi == 0.0 {
        return;
    }
    if let Some(k) = state.occupant(pos) {
        g.add_phase(k, probe, dphi).expect("probe index in range");
    }
}

/// One realization: lattice, phases and the stream that drives them.
#[derive(Clone, Debug)]
pub struct LatticeRun {
    pub config: LatticeConfig,
    pub state: LatticeState,
    pub graph: InteractionGraph,
}

impl LatticeRun {
    pub fn new<R: Rng + ?Sized>(config: LatticeConfig, rng: &mut R) -> Result<Self> {
        let state = LatticeState::random(&config, rng)?;
        let graph = InteractionGraph::new(config.n_total());
        Ok(Self { config, state, graph })
    }

    pub fn time(&self) -> f64 {
        self.state.time()
    }

    /// Steps until the clock reaches the step nearest to `t`.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) {
        let target = (t / self.config.dt).round().max(0.0) as u64;
        while self.state.steps() < target {
            hop_step(&mut self.state, &self.config, &mut self.graph, rng);
        }
    }

    pub fn background_partition(&self, block: &[usize]) -> Result<Partition> {
        Partition::new(self.config.n_total(), block.iter().copied())
    }

    pub fn probe_partition(&self) -> Result<Partition> {
        let n = self.config.n_background;
        Partition::new(self.config.n_total(), n..n + self.config.n_probes())
    }
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be finite, non-negative and sorted".into()));
    }
    Ok(())
}

/// Runs `ensemble` realizations on streams `(seed, 0..ensemble)` and collects
/// what `observe` returns at every grid time. `setup` draws per-realization
/// choices before the dynamics starts.
pub fn realizations<S, T, Setup, Observe>(
    cfg: &LatticeConfig,
    times: &[f64],
    ensemble: usize,
    seed: u64,
    setup: Setup,
    observe: Observe,
) -> Result<Vec<Vec<T>>>
where
    S: Send,
    T: Send,
    Setup: Fn(&LatticeRun, &mut StreamRng) -> Result<S> + Sync,
    Observe: Fn(&LatticeRun, &S) -> Result<T> + Sync,
{
    cfg.validate()?;
    check_times(times)?;
    (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let mut run = LatticeRun::new(cfg.clone(), &mut rng)?;
            let choice = setup(&run, &mut rng)?;
            times
                .iter()
                .map(|&t| {
                    run.advance_to(t, &mut rng);
                    observe(&run, &choice)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSeries {
    /// Mean largest-cluster size N_C.
    pub largest: EnsembleSeries,
    /// Mean largest lattice distance within a cluster.
    pub max_distance: EnsembleSeries,
    /// Mean first grid time at which one cluster holds ≥ 95% of the particles,
    /// over the realizations that got there.
    pub t0: Option<f64>,
    pub t0_reached: usize,
}

pub fn cluster_timeseries(cfg: &LatticeConfig, times: &[f64], ensemble: usize, seed: u64) -> Result<ClusterSeries> {
    let metric = cfg.metric();
    let traces = realizations(
        cfg,
        times,
        ensemble,
        seed,
        |_, _| Ok(()),
        |run, _| {
            let largest = run.graph.largest_cluster_size() as f64;
            let dist = run.graph.max_entangled_distance(&run.state.positions(), &metric)? as f64;
            Ok((largest, dist))
        },
    )?;
    let total = cfg.n_total() as f64;
    let mut t0 = Accumulator::default();
    for trace in &traces {
        if let Some(j) = trace.iter().position(|&(c, _)| c >= 0.95 * total) {
            t0.push(times[j]);
        }
    }
    let largest: Vec<Vec<f64>> = traces.iter().map(|tr| tr.iter().map(|x| x.0).collect()).collect();
    let distance: Vec<Vec<f64>> = traces.iter().map(|tr| tr.iter().map(|x| x.1).collect()).collect();
    Ok(ClusterSeries {
        largest: EnsembleSeries::from_traces("cluster_size", times, &largest),
        max_distance: EnsembleSeries::from_traces("max_entangled_distance", times, &distance)
            .with_metadata("lattice_diameter", metric.diameter()),
        t0: (t0.count() > 0).then(|| t0.mean()),
        t0_reached: t0.count(),
    })
}

/// Entropy of a block of `block_size` background particles drawn uniformly
/// at random per realization.
pub fn block_entropy_timeseries(
    cfg: &LatticeConfig,
    block_size: usize,
    times: &[f64],
    ensemble: usize,
    seed: u64,
) -> Result<EnsembleSeries> {
    if block_size == 0 || block_size > 12 || block_size > cfg.n_background {
        return Err(Error::InvalidParameter(format!(
            "block size must lie in 1..=min(12, N), got {block_size}"
        )));
    }
    let traces = realizations(
        cfg,
        times,
        ensemble,
        seed,
        |run, rng| run.background_partition(&sample(rng, cfg.n_background, block_size).into_vec()),
        |run, p| von_neumann_entropy(&reduced_density_matrix(&run.graph, p, false)?),
    )?;
    Ok(EnsembleSeries::from_traces(format!("block_entropy_{block_size}"), times, &traces)
        .with_metadata("block_selection", "uniform random particles"))
}

/// Entropy of the probe pair with everything else.
pub fn probe_entropy_timeseries(cfg: &LatticeConfig, times: &[f64], ensemble: usize, seed: u64) -> Result<EnsembleSeries> {
    if cfg.n_probes() != 2 {
        return Err(Error::InvalidParameter(format!("need exactly 2 probes, got {}", cfg.n_probes())));
    }
    let traces = realizations(
        cfg,
        times,
        ensemble,
        seed,
        |run, _| run.probe_partition(),
        |run, p| von_neumann_entropy(&reduced_density_matrix(&run.graph, p, false)?),
    )?;
    Ok(EnsembleSeries::from_traces("probe_entropy", times, &traces))
}

/// Two probes `separation` sites apart along `axis`, the first at `origin`.
pub fn probe_pair(cfg: &LatticeConfig, origin: (usize, usize), separation: usize, axis: Axis, mode: ProbeMode) -> ProbeSpec {
    let second = match axis {
        Axis::X => ((origin.0 + separation) % cfg.dims.0, origin.1),
        Axis::Y => (origin.0, (origin.1 + separation) % cfg.dims.1),
    };
    ProbeSpec {
        positions: vec![origin, second],
        mode,
    }
}

/// Interior local minima of `values`: points strictly below both neighbours
/// after a centred moving average of half-width `smooth`.
pub fn local_minima(values: &[f64], smooth: usize) -> Vec<usize> {
    let n = values.len();
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(smooth);
            let hi = (i + smooth + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    (1..n.saturating_sub(1))
        .filter(|&i| smoothed[i] < smoothed[i - 1] && smoothed[i] <= smoothed[i + 1])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::coherence_factor;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small(n_background: usize, hop_rate: f64) -> LatticeConfig {
        LatticeConfig {
            dims: (6, 5),
            n_background,
            hop_rate,
            coupling: 0.8,
            dt: 0.1,
            probes: None,
            track_background_phases: true,
        }
    }

    #[test]
    fn validation() {
        assert!(small(10, 1.0).validate().is_ok());
        assert!(small(0, 1.0).validate().is_err());
        assert!(small(31, 1.0).validate().is_err());
        assert!(small(10, 6.0).validate().is_err());
        let mut cfg = small(10, 1.0);
        cfg.dims = (2, 8);
        assert!(cfg.validate().is_err());
        let mut cfg = small(10, 1.0);
        cfg.probes = Some(ProbeSpec {
            positions: vec![(9, 0)],
            mode: ProbeMode::Hopping { rate: 0.0 },
        });
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "probes.positions[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = small(10, 1.0);
        cfg.probes = Some(ProbeSpec {
            positions: vec![(0, 0), (3, 0)],
            mode: ProbeMode::Dragged {
                speed: 20.0,
                axis: Axis::Y,
                crossing_phase: Some(0.1),
            },
        });
        let text = toml::to_string(&cfg).unwrap();
        let back: LatticeConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let parsed: LatticeConfig = toml::from_str(
            "dims = [20, 20]\nn_background = 100\nhop_rate = 1.0\ncoupling = 0.8\ndt = 0.1\n\
             [probes]\npositions = [[0, 0], [0, 0]]\nmode = { kind = \"hopping\", rate = 0.0 }\n",
        )
        .unwrap();
        assert!(parsed.track_background_phases);
        assert_eq!(parsed.n_probes(), 2);
    }

    #[test]
    fn frozen_gas_accumulates_linearly_on_bonds() {
        let cfg = small(3, 0.0);
        let mut state = LatticeState::from_positions(&cfg, &[(0, 0), (0, 1), (3, 3)]).unwrap();
        let mut g = InteractionGraph::new(3);
        let mut rng = stream(1, 0);
        for _ in 0..25 {
            hop_step(&mut state, &cfg, &mut g, &mut rng);
        }
        assert_eq!(state.position(0), (0, 0));
        assert_abs_diff_eq!(g.phase(0, 1), 0.8 * 2.5, epsilon = 1e-12);
        assert_eq!(g.phase(0, 2), 0.0);
        assert_eq!(g.phase(1, 2), 0.0);
    }

    #[test]
    fn periodic_bonds_wrap() {
        let cfg = small(2, 0.0);
        let mut state = LatticeState::from_positions(&cfg, &[(0, 0), (5, 0)]).unwrap();
        let mut g = InteractionGraph::new(2);
        hop_step(&mut state, &cfg, &mut g, &mut stream(1, 0));
        assert_abs_diff_eq!(g.phase(0, 1), 0.08, epsilon = 1e-12);
    }

    #[test]
    fn full_lattice_is_jammed() {
        let cfg = small(30, 5.0);
        let mut rng = stream(1, 1);
        let mut state = LatticeState::random(&cfg, &mut rng).unwrap();
        let before = state.clone();
        let mut g = InteractionGraph::new(30);
        for _ in 0..20 {
            hop_step(&mut state, &cfg, &mut g, &mut rng);
        }
        assert_eq!(state.positions(), before.positions());
    }

    #[test]
    fn resting_probe_on_a_parked_particle() {
        let mut cfg = small(1, 0.0);
        cfg.probes = Some(ProbeSpec {
            positions: vec![(2, 2)],
            mode: ProbeMode::Hopping { rate: 0.0 },
        });
        let mut state = LatticeState::from_positions(&cfg, &[(2, 2)]).unwrap();
        let mut g = InteractionGraph::new(2);
        let mut rng = stream(1, 2);
        for _ in 0..37 {
            hop_step(&mut state, &cfg, &mut g, &mut rng);
        }
        assert_abs_diff_eq!(g.phase(0, 1), 0.8 * state.time(), epsilon = 1e-12);
    }

    #[test]
    fn fast_dragged_probe_counts_crossings() {
        let mut cfg = small(2, 0.0);
        cfg.dt = 0.05;
        cfg.probes = Some(ProbeSpec {
            positions: vec![(1, 0)],
            mode: ProbeMode::Dragged {
                speed: 20.0,
                axis: Axis::Y,
                crossing_phase: Some(0.1),
            },
        });
        let mut state = LatticeState::from_positions(&cfg, &[(1, 2), (1, 4)]).unwrap();
        let mut g = InteractionGraph::new(3);
        let mut rng = stream(1, 3);
        for _ in 0..5 {
            hop_step(&mut state, &cfg, &mut g, &mut rng);
        }
        // one site per step; the row wraps after five
        assert_eq!(state.probe_positions()[0], (1, 0));
        assert_abs_diff_eq!(g.phase(0, 2), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.phase(1, 2), 0.1, epsilon = 1e-12);
        assert_eq!(g.phase(0, 1), 0.0);
    }

    #[test]
    fn drag_covers_several_sites_per_step() {
        let mut cfg = small(5, 0.0);
        cfg.probes = Some(ProbeSpec {
            positions: vec![(0, 0)],
            mode: ProbeMode::Dragged {
                speed: 25.0,
                axis: Axis::X,
                crossing_phase: Some(0.3),
            },
        });
        let positions: Vec<_> = (1..6).map(|x| (x, 0)).collect();
        let mut state = LatticeState::from_positions(&cfg, &positions).unwrap();
        let mut g = InteractionGraph::new(6);
        hop_step(&mut state, &cfg, &mut g, &mut stream(1, 4));
        assert_eq!(state.probe_positions()[0], (2, 0));
        let hits: Vec<f64> = (0..5).map(|k| g.phase(k, 5)).collect();
        assert_eq!(hits, vec![0.3, 0.3, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn colocated_fixed_probes_share_their_rows() {
        let mut cfg = small(12, 1.0);
        cfg.probes = Some(ProbeSpec {
            positions: vec![(2, 2), (2, 2)],
            mode: ProbeMode::Hopping { rate: 0.0 },
        });
        cfg.track_background_phases = false;
        let mut rng = stream(2, 0);
        let mut run = LatticeRun::new(cfg, &mut rng).unwrap();
        let p = run.probe_partition().unwrap();
        for step in 1..=40 {
            run.advance_to(step as f64, &mut rng);
            for k in 0..12 {
                assert_eq!(run.graph.phase(k, 12), run.graph.phase(k, 13));
            }
            assert_eq!(coherence_factor(&run.graph, &p, &[1, -1]).unwrap().value(), crate::state::C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn occupation_matches_filling() {
        let cfg = small(9, 2.0);
        let mut counts = vec![0usize; cfg.sites()];
        let mut rng = stream(3, 0);
        let mut state = LatticeState::random(&cfg, &mut rng).unwrap();
        let mut g = InteractionGraph::new(9);
        let samples = 20_000;
        for _ in 0..samples {
            for _ in 0..5 {
                hop_step(&mut state, &cfg, &mut g, &mut rng);
            }
            for (s, c) in counts.iter_mut().enumerate() {
                *c += usize::from(state.occupancy[s].is_some());
            }
        }
        let nu = cfg.filling();
        let total: usize = counts.iter().sum();
        assert_eq!(total, 9 * samples);
        for c in counts {
            let rate = c as f64 / samples as f64;
            assert!((rate - nu).abs() < 0.05, "{rate} vs {nu}");
        }
    }

    #[test]
    fn empty_lattice_series_start_at_zero() {
        let cfg = small(6, 1.0);
        let times = [0.0, 1.0, 2.0];
        let s = block_entropy_timeseries(&cfg, 3, &times, 8, 5).unwrap();
        assert_eq!(s.rows[0].mean, 0.0);
        assert!(s.rows[2].mean > 0.0);
        let c = cluster_timeseries(&cfg, &times, 8, 5).unwrap();
        assert_eq!(c.largest.rows[0].mean, 1.0);
        assert_eq!(c.max_distance.rows[0].mean, 0.0);
        assert!(block_entropy_timeseries(&cfg, 13, &times, 1, 0).is_err());
        assert!(probe_entropy_timeseries(&cfg, &times, 1, 0).is_err());
    }

    #[test]
    fn isolated_frozen_particles_stay_unentangled() {
        let mut cfg = small(4, 0.0);
        cfg.dims = (8, 8);
        let mut rng = stream(0, 0);
        let mut state = LatticeState::from_positions(&cfg, &[(0, 0), (0, 4), (4, 0), (4, 4)]).unwrap();
        let mut g = InteractionGraph::new(4);
        for _ in 0..50 {
            hop_step(&mut state, &cfg, &mut g, &mut rng);
        }
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn series_are_reproducible() {
        let mut cfg = small(10, 1.0);
        cfg.probes = Some(probe_pair(&cfg, (1, 1), 2, Axis::X, ProbeMode::Hopping { rate: 0.2 }));
        let times = [0.0, 0.5, 1.5];
        let a = probe_entropy_timeseries(&cfg, &times, 6, 11).unwrap();
        let b = probe_entropy_timeseries(&cfg, &times, 6, 11).unwrap();
        assert_eq!(a, b);
        let c = probe_entropy_timeseries(&cfg, &times, 6, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn minima_detection() {
        let v = [3.0, 2.0, 1.0, 2.0, 3.0, 2.5, 3.5];
        assert_eq!(local_minima(&v, 0), vec![2, 5]);
        assert!(local_minima(&[1.0, 2.0, 3.0], 0).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn exclusion_holds_after_every_step(seed in 0u64..1000, n in 1usize..30, rate in 0.0f64..5.0) {
            let cfg = small(n, rate);
            let mut rng = stream(seed, 0);
            let mut state = LatticeState::random(&cfg, &mut rng).unwrap();
            let mut g = InteractionGraph::new(n);
            for _ in 0..30 {
                hop_step(&mut state, &cfg, &mut g, &mut rng);
                prop_assert!(state.is_consistent());
            }
        }
    }
}
