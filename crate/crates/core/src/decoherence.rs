//! The channel a gas applies to a set of probe qubits.
//!
//! Tracing out the background multiplies each coherence |s⟩⟨s'| of the
//! probes by C(s − s'), so a channel is just the table of coherence factors.
//! Ensemble quantities use the averaged channel, i.e. properties of the
//! average probe state.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::concurrence;
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Partition};
use crate::lattice::{probe_pair, Axis, LatticeConfig, LatticeRun};
use crate::state::{ternary_index, CoherenceEngine, ReducedDensityMatrix, C64};
use crate::stats::{jackknife, linear_fit, Accumulator};

/// Most negative eigenvalue tolerated in a channel output.
pub const PSD_TOLERANCE: f64 = 1e-8;

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeChannel {
    n_a: usize,
    /// C(z) at [`ternary_index`]`(z)`.
    table: Vec<C64>,
    pub time: f64,
    pub realization: Option<u64>,
}

fn ternary_digits(mut index: usize, n_a: usize) -> Vec<i8> {
    let mut z = vec![0i8; n_a];
    for slot in z.iter_mut().rev() {
        *slot = (index % 3) as i8 - 1;
        index /= 3;
    }
    z
}

impl ProbeChannel {
    /// Channel on the qubits of `p` induced by the rest of `g`.
    pub fn from_graph(g: &InteractionGraph, p: &Partition, time: f64, realization: Option<u64>) -> Result<Self> {
        let engine = CoherenceEngine::new(g, p)?;
        Ok(Self {
            n_a: p.n_a(),
            table: engine.table(),
            time,
            realization,
        })
    }

    pub fn from_table(n_a: usize, table: Vec<C64>) -> Result<Self> {
        let len = 3usize.pow(n_a as u32);
        if table.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: table.len(),
            });
        }
        let ch = Self {
            n_a,
            table,
            time: 0.0,
            realization: None,
        };
        if (ch.table[len / 2] - ONE).norm() > 1e-12 {
            return Err(Error::InvalidState("C(0) must be 1".into()));
        }
        for i in 0..len {
            let c = ch.table[i];
            if c.norm() > 1.0 + 1e-12 {
                return Err(Error::InvalidState(format!("|C| = {} exceeds one", c.norm())));
            }
            // negating z mirrors the base-3 index
            if (ch.table[len - 1 - i] - c.conj()).norm() > 1e-12 {
                return Err(Error::InvalidState("C(−z) must equal conj C(z)".into()));
            }
        }
        Ok(ch)
    }

    pub fn identity(n_a: usize) -> Self {
        Self {
            n_a,
            table: vec![ONE; 3usize.pow(n_a as u32)],
            time: 0.0,
            realization: None,
        }
    }

    /// Kills every coherence.
    pub fn fully_dephasing(n_a: usize) -> Self {
        let len = 3usize.pow(n_a as u32);
        let mut table = vec![ZERO; len];
        table[len / 2] = ONE;
        Self {
            n_a,
            table,
            time: 0.0,
            realization: None,
        }
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn table(&self) -> &[C64] {
        &self.table
    }

    pub fn factor(&self, z: &[i8]) -> Result<C64> {
        if z.len() != self.n_a {
            return Err(Error::DimensionMismatch {
                expected: self.n_a,
                got: z.len(),
            });
        }
        if z.iter().any(|x| !(-1..=1).contains(x)) {
            return Err(Error::InvalidParameter("difference entries must be in {-1,0,1}".into()));
        }
        Ok(self.table[ternary_index(z)])
    }

    /// All difference vectors with their factors.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<i8>, C64)> + '_ {
        self.table.iter().enumerate().map(|(i, &c)| (ternary_digits(i, self.n_a), c))
    }
}

/// Multiplies each coherence of `rho_in` by its factor; the diagonal is untouched.
pub fn apply_channel(ch: &ProbeChannel, rho_in: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
    let dim = 1usize << ch.n_a;
    if rho_in.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: rho_in.dim(),
        });
    }
    // base-3 code with digits s_j; z index = code(s) − code(s') + code(1…1)
    let code: Vec<usize> = (0..dim)
        .map(|s| (0..ch.n_a).fold(0, |acc, j| acc * 3 + ((s >> (ch.n_a - 1 - j)) & 1)))
        .collect();
    let offset = ch.table.len() / 2;
    let m = DMatrix::from_fn(dim, dim, |r, c| rho_in.entry(r, c) * ch.table[code[r] + offset - code[c]]);
    let out = ReducedDensityMatrix::from_matrix(rho_in.subset().to_vec(), m)?;
    let min = out.eigenvalues().last().copied().unwrap_or(0.0);
    if min < -PSD_TOLERANCE {
        return Err(Error::InvalidState(format!(
            "channel output has eigenvalue {min:e}; the coherence table is inconsistent"
        )));
    }
    Ok(out)
}

/// Channel whose factors are the ensemble means.
pub fn average_channel(ensemble: &[ProbeChannel]) -> Result<ProbeChannel> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot average an empty ensemble".into()))?;
    let mut table = vec![ZERO; first.table.len()];
    for ch in ensemble {
        if ch.n_a != first.n_a {
            return Err(Error::DimensionMismatch {
                expected: first.n_a,
                got: ch.n_a,
            });
        }
        for (acc, c) in table.iter_mut().zip(&ch.table) {
            *acc += c;
        }
    }
    let m = ensemble.len() as f64;
    for c in &mut table {
        *c /= m;
    }
    Ok(ProbeChannel {
        n_a: first.n_a,
        table,
        time: first.time,
        realization: None,
    })
}

/// |ν e^{iδφ/2} cos(δφ/2) + 1 − ν|^{2k}: two probes that each meet a fresh
/// particle with probability ν at every step.
pub fn markovian_analytic(nu: f64, delta_phi: f64, k: u32) -> f64 {
    let half = 0.5 * delta_phi;
    let c = C64::from_polar(half.cos(), half) * nu + (1.0 - nu);
    c.norm().powi(2 * k as i32)
}

/// Distribution of the coherence phase ε = z·Γ_AB·s_B over background configurations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonStats {
    pub samples: Vec<f64>,
    /// ⟨ε⟩, the acquired phase Φ.
    pub mean: f64,
    /// σ_Γ.
    pub width: f64,
    /// All 2^{N_B} configurations enumerated rather than sampled.
    pub exact: bool,
}

impl EpsilonStats {
    /// `bins` equal-width bins over the sample range: (centre, probability).
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64)> {
        if self.samples.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = self.samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &x in &self.samples {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let m = self.samples.len() as f64;
        counts
            .into_iter()
            .enumerate()
            .map(|(b, c)| (lo + (b as f64 + 0.5) * width, c as f64 / m))
            .collect()
    }

    /// exp(−σ_Γ²/2), the Gaussian estimate of |C|.
    pub fn gaussian_coherence(&self) -> f64 {
        (-0.5 * self.width * self.width).exp()
    }
}

/// Partners up to this count are enumerated exhaustively.
pub const EXACT_EPSILON_PARTNERS: usize = 20;

pub fn epsilon_distribution<R: Rng + ?Sized>(
    g: &InteractionGraph,
    p: &Partition,
    z: &[i8],
    n_samples: usize,
    rng: &mut R,
) -> Result<EpsilonStats> {
    if n_samples < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 samples, got {n_samples}")));
    }
    let engine = CoherenceEngine::new(g, p)?;
    if z.len() != engine.n_a() {
        return Err(Error::DimensionMismatch {
            expected: engine.n_a(),
            got: z.len(),
        });
    }
    let theta: Vec<f64> = engine
        .partner_rows()
        .iter()
        .map(|row| z.iter().zip(row).map(|(&zj, &g)| zj as f64 * g).sum())
        .collect();
    let exact = theta.len() <= EXACT_EPSILON_PARTNERS;
    let samples: Vec<f64> = if exact {
        (0..1usize << theta.len())
            .map(|s| theta.iter().enumerate().filter(|(k, _)| s >> k & 1 == 1).map(|(_, t)| t).sum())
            .collect()
    } else {
        (0..n_samples)
            .map(|_| theta.iter().filter(|_| rng.random::<bool>()).sum())
            .collect()
    };
    let acc: Accumulator = samples.iter().copied().collect();
    let width = if exact {
        // population width, no Bessel correction
        let m = samples.len() as f64;
        (acc.variance() * (m - 1.0).max(0.0) / m).sqrt()
    } else {
        acc.variance().sqrt()
    };
    Ok(EpsilonStats {
        mean: acc.mean(),
        width,
        samples,
        exact,
    })
}

/// Exact (⟨ε⟩, σ_Γ): each partner contributes θ_k = z·Γ_k with probability ½.
pub fn epsilon_moments(g: &InteractionGraph, p: &Partition, z: &[i8]) -> Result<(f64, f64)> {
    let engine = CoherenceEngine::new(g, p)?;
    if z.len() != engine.n_a() {
        return Err(Error::DimensionMismatch {
            expected: engine.n_a(),
            got: z.len(),
        });
    }
    let (mut mean, mut var) = (0.0, 0.0);
    for row in engine.partner_rows() {
        let theta: f64 = z.iter().zip(row).map(|(&zj, &g)| zj as f64 * g).sum();
        mean += 0.5 * theta;
        var += 0.25 * theta * theta;
    }
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// σ_Γ ∝ √t.
    Markovian,
    /// σ_Γ ∝ t.
    NonMarkovian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeFit {
    pub exponent: f64,
    pub regime: Regime,
    pub points: usize,
}

/// Log-log slope of σ_Γ(t), fitted where 0.1 ≤ σ_Γ ≤ 1.
pub fn regime_exponent(times: &[f64], widths: &[f64]) -> Option<RegimeFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(widths)
        .filter(|&(&t, &w)| t > 0.0 && (0.1..=1.0).contains(&w))
        .map(|(&t, &w)| (t.ln(), w.ln()))
        .unzip();
    let fit = linear_fit(&lx, &ly)?;
    let regime = if (fit.slope - 0.5).abs() <= (fit.slope - 1.0).abs() {
        Regime::Markovian
    } else {
        Regime::NonMarkovian
    };
    Some(RegimeFit {
        exponent: fit.slope,
        regime,
        points: lx.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoQubitState {
    /// (|01⟩ + |10⟩)/√2.
    PsiPlus,
    /// (|00⟩ + |11⟩)/√2.
    PhiPlus,
    /// (|+0⟩ + |−1⟩)/√2.
    Cluster,
}

impl TwoQubitState {
    pub const ALL: [TwoQubitState; 3] = [Self::PsiPlus, Self::PhiPlus, Self::Cluster];

    pub fn name(&self) -> &'static str {
        match self {
            Self::PsiPlus => "psi+",
            Self::PhiPlus => "phi+",
            Self::Cluster => "G",
        }
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let q = C64::new(0.5, 0.0);
        match self {
            Self::PsiPlus => [ZERO, h, h, ZERO],
            Self::PhiPlus => [h, ZERO, ZERO, h],
            Self::Cluster => [q, q, q, -q],
        }
    }

    pub fn density_matrix(&self) -> ReducedDensityMatrix {
        ReducedDensityMatrix::from_pure(vec![0, 1], &self.amplitudes()).expect("normalized two-qubit state")
    }
}

/// Cluster-state concurrence implied by the Bell-state value for independent
/// identical dephasing: max{0, ½(−1 + 2√C + C)}.
pub fn cluster_from_bell(c_bell: f64) -> f64 {
    (0.5 * (-1.0 + 2.0 * c_bell.max(0.0).sqrt() + c_bell)).max(0.0)
}

/// Number of jackknife groups used for ensemble error bars.
pub const JACKKNIFE_GROUPS: usize = 20;

fn groups_of(len: usize) -> Vec<std::ops::Range<usize>> {
    let g = JACKKNIFE_GROUPS.min(len).max(1);
    (0..g).map(|i| i * len / g..(i + 1) * len / g).collect()
}

/// Estimate on the averaged channel with a grouped jackknife error.
pub fn averaged_estimate<F>(channels: &[ProbeChannel], estimate: F) -> Result<(f64, f64)>
where
    F: Fn(&ProbeChannel) -> Result<f64>,
{
    let groups = groups_of(channels.len());
    let sums: Vec<(Vec<C64>, usize)> = groups
        .iter()
        .map(|r| {
            let avg = average_channel(&channels[r.clone()]);
            avg.map(|a| (a.table.iter().map(|c| c * r.len() as f64).collect(), r.len()))
        })
        .collect::<Result<_>>()?;
    let n_a = channels[0].n_a;
    let mut failure = None;
    let (value, se) = jackknife(groups.len(), |kept| {
        let mut table = vec![ZERO; sums[0].0.len()];
        let mut count = 0;
        for &g in kept {
            for (acc, c) in table.iter_mut().zip(&sums[g].0) {
                *acc += c;
            }
            count += sums[g].1;
        }
        for c in &mut table {
            *c /= count as f64;
        }
        let ch = ProbeChannel {
            n_a,
            table,
            time: channels[0].time,
            realization: None,
        };
        estimate(&ch).unwrap_or_else(|e| {
            failure = Some(e);
            f64::NAN
        })
    });
    match failure {
        Some(e) => Err(e),
        None => Ok((value, se)),
    }
}

/// Probe channels at each grid time for every realization.
pub fn channel_ensemble(cfg: &LatticeConfig, times: &[f64], ensemble: usize, seed: u64) -> Result<Vec<Vec<ProbeChannel>>> {
    if cfg.n_probes() == 0 {
        return Err(Error::InvalidParameter("the lattice has no probes".into()));
    }
    crate::lattice::realizations(
        cfg,
        times,
        ensemble,
        seed,
        |run, _| run.probe_partition(),
        |run: &LatticeRun, p| ProbeChannel::from_graph(&run.graph, p, run.time(), None),
    )
    .map(|per_realization| {
        per_realization
            .into_iter()
            .enumerate()
            .map(|(i, chans)| {
                chans
                    .into_iter()
                    .map(|mut c| {
                        c.realization = Some(i as u64);
                        c
                    })
                    .collect()
            })
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcurrenceRow {
    pub state: TwoQubitState,
    pub distance: usize,
    /// Concurrence of the ensemble-averaged output state.
    pub averaged_state: f64,
    pub averaged_state_stderr: f64,
    /// Ensemble mean of the per-realization concurrences.
    pub mean_concurrence: f64,
    pub mean_concurrence_stderr: f64,
    pub n: usize,
}

/// Two-probe concurrence at `t_o` against probe separation along `axis`.
///
/// The probe mode and the first probe's position come from `cfg.probes`.
pub fn concurrence_vs_distance(
    cfg: &LatticeConfig,
    states: &[TwoQubitState],
    t_o: f64,
    distances: &[usize],
    axis: Axis,
    ensemble: usize,
    seed: u64,
) -> Result<Vec<ConcurrenceRow>> {
    let spec = cfg
        .probes
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("the lattice has no probes".into()))?;
    let origin = *spec
        .positions
        .first()
        .ok_or_else(|| Error::InvalidParameter("probe origin missing".into()))?;
    let mut rows = Vec::new();
    for &d in distances {
        let mut local = cfg.clone();
        local.probes = Some(probe_pair(cfg, origin, d, axis, spec.mode.clone()));
        let channels: Vec<ProbeChannel> = channel_ensemble(&local, &[t_o], ensemble, seed)?
            .into_iter()
            .map(|mut v| v.remove(0))
            .collect();
        for &state in states {
            let rho = state.density_matrix();
            let (averaged_state, averaged_state_stderr) =
                averaged_estimate(&channels, |ch| concurrence(&apply_channel(ch, &rho)?))?;
            let per: Vec<f64> = channels
                .par_iter()
                .map(|ch| concurrence(&apply_channel(ch, &rho)?))
                .collect::<Result<_>>()?;
            let acc: Accumulator = per.into_iter().collect();
            rows.push(ConcurrenceRow {
                state,
                distance: d,
                averaged_state,
                averaged_state_stderr,
                mean_concurrence: acc.mean(),
                mean_concurrence_stderr: acc.stderr(),
                n: acc.count(),
            });
        }
    }
    Ok(rows)
}
