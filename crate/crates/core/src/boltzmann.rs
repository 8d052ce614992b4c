//! Stochastic collision model of a dilute gas under molecular chaos.
//!
//! Positions are never tracked. Every unordered pair collides at the same
//! rate, and each collision draws a relative speed from the flux-weighted
//! Maxwell distribution. The interaction range is taken equal to the
//! hard-sphere diameter, so a collision at speed `v` adds phase `γ/v`.
//! No container geometry is needed.

use std::f64::consts::{LN_2, LOG2_E, PI, TAU};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::rng::BernoulliSkipper;

/// Largest expected per-particle collision number allowed in one substep.
pub const MAX_STEP_COLLISIONS: f64 = 0.1;

/// Sampled speeds never fall below this fraction of σ.
pub const VELOCITY_FLOOR: f64 = 1e-6;

/// 2 − log₂ e, the mean entropy produced by one fully random collision.
pub const SHORT_TIME_CONSTANT: f64 = 2.0 - LOG2_E;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    /// γ/v from the sampled relative speed.
    #[default]
    Exact,
    /// Uniform on [0, 2π), the large-phase limit.
    RandomUniform,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoltzmannConfig {
    /// Number density.
    pub n: f64,
    pub temperature: f64,
    pub mass: f64,
    pub diameter: f64,
    pub gamma: f64,
    #[serde(alias = "N")]
    pub n_particles: usize,
    #[serde(default = "one")]
    pub boltzmann_constant: f64,
    #[serde(default)]
    pub phase_mode: PhaseMode,
}

impl BoltzmannConfig {
    /// Natural units (k_B = m = T = d = 1) with density chosen so that r = `rate`.
    pub fn with_collision_rate(n_particles: usize, rate: f64, gamma: f64, phase_mode: PhaseMode) -> Self {
        let mut cfg = Self {
            n: 1.0,
            temperature: 1.0,
            mass: 1.0,
            diameter: 1.0,
            gamma,
            n_particles,
            boltzmann_constant: 1.0,
            phase_mode,
        };
        cfg.n = rate / cfg.collision_rate();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("temperature", self.temperature),
            ("mass", self.mass),
            ("diameter", self.diameter),
            ("boltzmann_constant", self.boltzmann_constant),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config {
                    path: name.into(),
                    message: format!("must be positive and finite, got {value}"),
                });
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config {
                path: "gamma".into(),
                message: format!("must be non-negative and finite, got {}", self.gamma),
            });
        }
        if self.n_particles < 2 {
            return Err(Error::Config {
                path: "n_particles".into(),
                message: "need at least two particles".into(),
            });
        }
        Ok(())
    }

    /// σ = √(k_B T / m).
    pub fn sigma(&self) -> f64 {
        (self.boltzmann_constant * self.temperature / self.mass).sqrt()
    }

    /// ⟨v_r⟩ = √(16 k_B T / (π m)).
    pub fn mean_rel_speed(&self) -> f64 {
        (16.0 * self.boltzmann_constant * self.temperature / (PI * self.mass)).sqrt()
    }

    /// r = π d² n ⟨v_r⟩, collisions per particle per unit time.
    pub fn collision_rate(&self) -> f64 {
        PI * self.diameter * self.diameter * self.n * self.mean_rel_speed()
    }
}

/// Relative speed of a colliding pair: density ∝ v³ exp(−v²/4σ²).
///
/// With u = v²/4σ² the density is u e^{−u}, a Gamma(2) variate.
pub fn sample_relative_speed<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let e1: f64 = rng.sample(Exp1);
    let e2: f64 = rng.sample(Exp1);
    (2.0 * sigma * (e1 + e2).sqrt()).max(VELOCITY_FLOOR * sigma)
}

pub fn sample_phase<R: Rng + ?Sized>(cfg: &BoltzmannConfig, rng: &mut R) -> f64 {
    match cfg.phase_mode {
        PhaseMode::Exact => cfg.gamma / sample_relative_speed(cfg.sigma(), rng),
        PhaseMode::RandomUniform => rng.random_range(0.0..TAU),
    }
}

/// Evolves `g` by `dt`: each pair collides with probability r·h/(N−1) per
/// substep h, where substeps keep r·h ≤ 0.1. Returns the number of collisions.
pub fn sample_collisions<R: Rng + ?Sized>(
    cfg: &BoltzmannConfig,
    g: &mut InteractionGraph,
    dt: f64,
    rng: &mut R,
) -> usize {
    let n = g.n_particles();
    if dt.is_nan() || dt <= 0.0 || n < 2 {
        return 0;
    }
    let rate = cfg.collision_rate();
    let substeps = (rate * dt / MAX_STEP_COLLISIONS).ceil().max(1.0) as usize;
    let p = rate * dt / substeps as f64 / (n - 1) as f64;
    let pairs = n * (n - 1) / 2;
    let mut count = 0;
    for _ in 0..substeps {
        // pairs (k, l), k < l, in row order; row k starts at linear index `row_start`
        let mut skipper = BernoulliSkipper::new(pairs, p);
        let (mut k, mut row_start) = (0usize, 0usize);
        while let Some(m) = skipper.next_index(rng) {
            while m >= row_start + (n - 1 - k) {
                row_start += n - 1 - k;
                k += 1;
            }
            let l = k + 1 + (m - row_start);
            let phase = sample_phase(cfg, rng);
            g.add_phase(k, l, phase).expect("pair indices are in range");
            count += 1;
        }
    }
    count
}

/// One realization of the gas: its graph and clock.
#[derive(Clone, Debug)]
pub struct BoltzmannGas {
    pub config: BoltzmannConfig,
    pub graph: InteractionGraph,
    pub time: f64,
}

impl BoltzmannGas {
    pub fn new(config: BoltzmannConfig) -> Result<Self> {
        config.validate()?;
        let graph = InteractionGraph::new(config.n_particles);
        Ok(Self {
            config,
            graph,
            time: 0.0,
        })
    }

    pub fn advance_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> usize {
        let dt = t - self.time;
        if dt <= 0.0 {
            return 0;
        }
        self.time = t;
        sample_collisions(&self.config, &mut self.graph, dt, rng)
    }
}

/// A closed-form value together with whether its regime of validity holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Flagged {
    pub value: f64,
    pub in_regime: bool,
}

/// Short-time entropy N_A N_B/(N−1) · rt · (2 − log₂ e), valid for rt < 1.
pub fn short_time_entropy(n: usize, n_a: usize, rt: f64) -> Result<Flagged> {
    check_sizes(n, n_a)?;
    let n_b = n - n_a;
    Ok(Flagged {
        value: (n_a * n_b) as f64 / (n - 1) as f64 * rt * SHORT_TIME_CONSTANT,
        in_regime: rt < 1.0,
    })
}

pub fn analytic_short_time_entropy(cfg: &BoltzmannConfig, n_a: usize, t: f64) -> Result<Flagged> {
    short_time_entropy(cfg.n_particles, n_a, cfg.collision_rate() * t)
}

fn check_sizes(n: usize, n_a: usize) -> Result<()> {
    if n < 2 || n_a > n {
        return Err(Error::InvalidParameter(format!(
            "need N ≥ 2 and N_A ≤ N, got N = {n}, N_A = {n_a}"
        )));
    }
    Ok(())
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Lower bound on the ensemble entropy of N_A particles,
/// −log₂(2^{−N} Σ_Z C(N_A, Z) (1 + e^{−rtZ/(N−1)})^{N_B}), summed in the log domain.
pub fn analytic_entropy_lower_bound(n: usize, n_a: usize, r: f64, t: f64) -> Result<f64> {
    check_sizes(n, n_a)?;
    let rt = r * t;
    if rt == 0.0 || n_a == 0 || n_a == n {
        return Ok(0.0);
    }
    let n_b = (n - n_a) as f64;
    let mut log_binom = 0.0;
    let mut terms = Vec::with_capacity(n_a + 1);
    for z in 0..=n_a {
        if z > 0 {
            log_binom += ((n_a - z + 1) as f64 / z as f64).ln();
        }
        let p = (-rt * z as f64 / (n - 1) as f64).exp();
        terms.push(log_binom + n_b * p.ln_1p());
    }
    let log_sum = log_sum_exp(&terms) - n as f64 * LN_2;
    Ok((-log_sum / LN_2).max(0.0))
}

/// The t → ∞ limit −log₂(2^{−N_A} + 2^{−N_B} − 2^{−N}).
pub fn long_time_entropy_bound(n: usize, n_a: usize) -> Result<f64> {
    check_sizes(n, n_a)?;
    let n_b = n - n_a;
    let s = 2f64.powi(-(n_a as i32)) + 2f64.powi(-(n_b as i32)) - 2f64.powi(-(n as i32));
    Ok(-s.log2())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaEstimate {
    /// ¼ n √π d² γ²/σ.
    pub closed_form: f64,
    /// Full integral over the relative-speed distribution.
    pub quadrature: f64,
    /// γ/σ < 1.
    pub small_phase: bool,
}

/// Decay rate of ⟨|C₀₁|²⟩ in the small-phase regime.
pub fn analytic_alpha(cfg: &BoltzmannConfig) -> AlphaEstimate {
    let sigma = cfg.sigma();
    let d2n = cfg.diameter * cfg.diameter * cfg.n;
    let closed_form = 0.25 * cfg.n * PI.sqrt() * cfg.diameter * cfg.diameter * cfg.gamma * cfg.gamma / sigma;

    // v = 2σ√u turns ∫ v³ e^{−v²/4σ²} f(v) dv into 8σ⁴ ∫ u e^{−u} f(2σ√u) du
    let integrand = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let v = (2.0 * sigma * u.sqrt()).max(VELOCITY_FLOOR * sigma);
        u * (-u).exp() * (cfg.gamma / (2.0 * v)).sin().powi(2)
    };
    let integral = 8.0 * sigma.powi(4) * simpson(integrand, 0.0, 60.0, 200_000);
    let quadrature = 4.0 * PI * PI * d2n * (4.0 * PI * sigma * sigma).powf(-1.5) * integral;
    AlphaEstimate {
        closed_form,
        quadrature,
        small_phase: cfg.gamma / sigma < 1.0,
    }
}

/// Small-phase entropy slope α N_A N_B / (2 ln 2 (N−1)).
pub fn small_phase_entropy_slope(alpha: f64, n: usize, n_a: usize) -> Result<f64> {
    check_sizes(n, n_a)?;
    Ok(alpha * (n_a * (n - n_a)) as f64 / (2.0 * LN_2 * (n - 1) as f64))
}

pub(crate) fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Exponential (τ_e = 8δt/δφ²) and Gaussian (τ_g = 2δt/δφ) decay times.
pub fn decoherence_times(delta_phi: f64, delta_t: f64) -> Result<(f64, f64)> {
    if !(delta_phi > 0.0 && delta_phi < PI) {
        return Err(Error::InvalidParameter(format!("δφ must lie in (0, π), got {delta_phi}")));
    }
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(Error::InvalidParameter(format!("δt must be positive, got {delta_t}")));
    }
    Ok((8.0 * delta_t / (delta_phi * delta_phi), 2.0 * delta_t / delta_phi))
}

/// Long-time state: every pair carries an independent uniform phase.
pub fn equilibrium_graph<R: Rng + ?Sized>(n: usize, rng: &mut R) -> InteractionGraph {
    let mut g = InteractionGraph::new(n);
    for k in 0..n {
        for l in k + 1..n {
            g.add_phase(k, l, rng.random_range(0.0..TAU)).expect("indices in range");
        }
    }
    g
}
