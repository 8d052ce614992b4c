//! Quantum states generated by an interaction graph acting on |+⟩^⊗N.
//!
//! Two independent routes to a reduced density matrix live here:
//!
//! * [`reduced_density_matrix`] multiplies per-partner coherence factors, so
//!   its cost grows linearly with the number of particles outside the block.
//! * [`brute_force_reduced`] builds all 2^N amplitudes and traces them out.
//!   It only exists to validate the first route.
//!
//! Basis ordering is big-endian throughout: the first listed qubit is the most
//! significant bit of a basis index.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Partition};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;

/// Largest block handed to [`reduced_density_matrix`] unless a cap is given.
pub const DEFAULT_SUBSYSTEM_CAP: usize = 12;
/// Largest register simulated amplitude by amplitude.
pub const BRUTE_FORCE_CAP: usize = 20;

const ZERO: C64 = Complex { re: 0.0, im: 0.0 };
const ONE: C64 = Complex { re: 1.0, im: 0.0 };

/// Computational-basis label of a block of qubits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryIndex {
    bits: Vec<u8>,
}

impl BinaryIndex {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter("basis bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn from_index(index: usize, len: usize) -> Self {
        let bits = (0..len).map(|j| ((index >> (len - 1 - j)) & 1) as u8).collect();
        Self { bits }
    }

    pub fn index(&self) -> usize {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// `self − other`, entries in {−1, 0, 1}.
    pub fn difference(&self, other: &BinaryIndex) -> Result<Vec<i8>> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a as i8 - b as i8)
            .collect())
    }
}

/// Number of nonzero entries of a difference vector.
pub fn support_size(z: &[i8]) -> usize {
    z.iter().filter(|&&x| x != 0).count()
}

/// Multiplier applied to one coherence of the block by the rest of the gas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceFactor {
    log_magnitude: f64,
    phase: f64,
}

impl CoherenceFactor {
    const ZERO: Self = Self {
        log_magnitude: f64::NEG_INFINITY,
        phase: 0.0,
    };

    pub fn value(&self) -> C64 {
        C64::from_polar(self.log_magnitude.exp(), self.phase)
    }

    pub fn magnitude(&self) -> f64 {
        self.log_magnitude.exp()
    }

    /// Natural log of |C|; stays finite where the magnitude itself underflows.
    pub fn log_magnitude(&self) -> f64 {
        self.log_magnitude
    }

    /// Argument of C in [0, 2π).
    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn is_zero(&self) -> bool {
        self.log_magnitude == f64::NEG_INFINITY
    }
}

/// Per-partner phase vectors Γ_k restricted to the block, for every k outside
/// the block with at least one nonzero coupling into it.
#[derive(Clone, Debug)]
pub struct CoherenceEngine {
    n_a: usize,
    partners: Vec<Vec<f64>>,
}

impl CoherenceEngine {
    pub fn new(g: &InteractionGraph, p: &Partition) -> Result<Self> {
        if p.n_total() != g.n_particles() {
            return Err(Error::DimensionMismatch {
                expected: g.n_particles(),
                got: p.n_total(),
            });
        }
        let n_a = p.n_a();
        let mut rows: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for (j, &a) in p.set_a().iter().enumerate() {
            for (k, phase) in g.row(a) {
                if p.contains(k) || phase == 0.0 {
                    continue;
                }
                rows.entry(k).or_insert_with(|| vec![0.0; n_a])[j] = phase;
            }
        }
        Ok(Self {
            n_a,
            partners: rows.into_values().collect(),
        })
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_partners(&self) -> usize {
        self.partners.len()
    }

    pub fn partner_rows(&self) -> &[Vec<f64>] {
        &self.partners
    }

    /// Product over partners of e^{iθ/2} cos(θ/2) with θ = z·Γ_k, accumulated
    /// as log-magnitude plus phase so long products do not underflow to zero.
    pub fn factor(&self, z: &[i8]) -> Result<CoherenceFactor> {
        if z.len() != self.n_a {
            return Err(Error::DimensionMismatch {
                expected: self.n_a,
                got: z.len(),
            });
        }
        if z.iter().any(|&x| !(-1..=1).contains(&x)) {
            return Err(Error::InvalidParameter("difference entries must be in {-1,0,1}".into()));
        }
        Ok(self.factor_unchecked(z))
    }

    fn factor_unchecked(&self, z: &[i8]) -> CoherenceFactor {
        let mut log_mag = 0.0;
        let mut phase = 0.0;
        for row in &self.partners {
            let theta: f64 = z.iter().zip(row).map(|(&zj, &g)| zj as f64 * g).sum();
            if theta == 0.0 {
                continue;
            }
            let half = 0.5 * theta;
            let c = half.cos();
            if c == 0.0 {
                return CoherenceFactor::ZERO;
            }
            log_mag += c.abs().ln();
            phase += half.rem_euclid(TAU);
            if c < 0.0 {
                phase += PI;
            }
            phase = phase.rem_euclid(TAU);
        }
        CoherenceFactor {
            log_magnitude: log_mag,
            phase,
        }
    }

    /// Factors for all 3^{N_A} difference vectors, indexed in base 3 with
    /// digit `z_j + 1` and the first qubit most significant.
    pub fn table(&self) -> Vec<C64> {
        let len = 3usize.pow(self.n_a as u32);
        let mut z = vec![0i8; self.n_a];
        (0..len)
            .map(|idx| {
                let mut rest = idx;
                for j in (0..self.n_a).rev() {
                    z[j] = (rest % 3) as i8 - 1;
                    rest /= 3;
                }
                self.factor_unchecked(&z).value()
            })
            .collect()
    }
}

/// Base-3 index of a difference vector, as used by [`CoherenceEngine::table`].
pub fn ternary_index(z: &[i8]) -> usize {
    z.iter().fold(0, |acc, &x| acc * 3 + (x + 1) as usize)
}

pub fn coherence_factor(g: &InteractionGraph, p: &Partition, z: &[i8]) -> Result<CoherenceFactor> {
    CoherenceEngine::new(g, p)?.factor(z)
}

/// Density matrix of a block of qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedDensityMatrix {
    subset: Vec<usize>,
    matrix: DMatrix<C64>,
}

impl ReducedDensityMatrix {
    /// Wrap a matrix after checking it is square with power-of-two dimension
    /// matching the subset, Hermitian, and of unit trace.
    pub fn from_matrix(subset: Vec<usize>, matrix: DMatrix<C64>) -> Result<Self> {
        let dim = 1usize << subset.len();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        let rho = Self { subset, matrix };
        let herm = rho.hermiticity_error();
        if herm > 1e-9 {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
            return Err(Error::InvalidState(format!("trace {tr} is not one")));
        }
        Ok(rho)
    }

    /// Projector onto a pure state of `subset.len()` qubits.
    pub fn from_pure(subset: Vec<usize>, amplitudes: &[C64]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        let v: Vec<C64> = amplitudes.iter().map(|a| a / norm).collect();
        let d = v.len();
        let matrix = DMatrix::from_fn(d, d, |r, c| v[r] * v[c].conj());
        Self::from_matrix(subset, matrix)
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn n_qubits(&self) -> usize {
        self.subset.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self.matrix[(r, c)] - self.matrix[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// tr ρ², without diagonalizing.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn to_export(&self) -> DensityMatrixExport {
        let d = self.dim();
        let mut entries = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                let x = self.matrix[(r, c)];
                entries.push([x.re, x.im]);
            }
        }
        DensityMatrixExport {
            dim: d,
            subset: self.subset.clone(),
            entries,
        }
    }

    pub fn from_export(export: &DensityMatrixExport) -> Result<Self> {
        let d = export.dim;
        if export.entries.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: export.entries.len(),
            });
        }
        let matrix = DMatrix::from_fn(d, d, |r, c| {
            let [re, im] = export.entries[r * d + c];
            C64::new(re, im)
        });
        Self::from_matrix(export.subset.clone(), matrix)
    }
}

/// JSON form of a density matrix: `dim`, the qubit labels, and row-major
/// `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixExport {
    pub dim: usize,
    pub subset: Vec<usize>,
    pub entries: Vec<[f64; 2]>,
}

pub fn reduced_density_matrix(
    g: &InteractionGraph,
    p: &Partition,
    include_internal: bool,
) -> Result<ReducedDensityMatrix> {
    reduced_density_matrix_capped(g, p, include_internal, DEFAULT_SUBSYSTEM_CAP)
}

/// Reduced state of block A built from coherence factors.
///
/// Without `include_internal` this is ρ̃_A, where couplings inside A are
/// dropped; with it, the diagonal phase e^{i Σ_{j<l∈A} Γ_jl s_j s_l} is
/// reinstated, which is the exact partial trace of the global state.
pub fn reduced_density_matrix_capped(
    g: &InteractionGraph,
    p: &Partition,
    include_internal: bool,
    cap: usize,
) -> Result<ReducedDensityMatrix> {
    let n_a = p.n_a();
    if n_a > cap {
        return Err(Error::SubsystemTooLarge { size: n_a, cap });
    }
    let engine = CoherenceEngine::new(g, p)?;
    let table = engine.table();
    Ok(assemble_from_table(
        p.set_a().to_vec(),
        &table,
        include_internal.then(|| internal_phases(g, p.set_a())),
    ))
}

/// Σ_{j<l} Γ_{a_j a_l} s_j s_l for every basis state of the block.
fn internal_phases(g: &InteractionGraph, set_a: &[usize]) -> Vec<f64> {
    let n_a = set_a.len();
    let dim = 1usize << n_a;
    (0..dim)
        .map(|s| {
            let mut phase = 0.0;
            for j in 0..n_a {
                if (s >> (n_a - 1 - j)) & 1 == 0 {
                    continue;
                }
                for l in j + 1..n_a {
                    if (s >> (n_a - 1 - l)) & 1 == 1 {
                        phase += g.phase(set_a[j], set_a[l]);
                    }
                }
            }
            phase
        })
        .collect()
}

fn assemble_from_table(
    subset: Vec<usize>,
    table: &[C64],
    internal: Option<Vec<f64>>,
) -> ReducedDensityMatrix {
    let n_a = subset.len();
    let dim = 1usize << n_a;
    // base-3 code of each basis state: digit s_j
    let code: Vec<usize> = (0..dim)
        .map(|s| (0..n_a).fold(0, |acc, j| acc * 3 + ((s >> (n_a - 1 - j)) & 1)))
        .collect();
    let offset = (0..n_a).fold(0, |acc, _| acc * 3 + 1);
    let scale = 1.0 / dim as f64;
    let internal_units: Option<Vec<C64>> =
        internal.map(|ph| ph.iter().map(|&x| C64::from_polar(1.0, x.rem_euclid(TAU))).collect());
    let matrix = DMatrix::from_fn(dim, dim, |r, c| {
        let z = code[r] + offset - code[c];
        let mut v = table[z] * scale;
        if let Some(u) = &internal_units {
            v *= u[r] * u[c].conj();
        }
        v
    });
    ReducedDensityMatrix { subset, matrix }
}

/// All 2^N amplitudes 2^{−N/2} e^{i Σ_{k<l} Γ_kl s_k s_l}.
pub fn brute_force_state(g: &InteractionGraph) -> Result<Vec<C64>> {
    let n = g.n_particles();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::SubsystemTooLarge {
            size: n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let dim = 1usize << n;
    // bit b of an index belongs to particle n-1-b
    let mut coupling = vec![vec![0.0; n]; n];
    for (k, l, p) in g.edges() {
        coupling[n - 1 - k][n - 1 - l] = p;
        coupling[n - 1 - l][n - 1 - k] = p;
    }
    let mut phase = vec![0.0f64; dim];
    for s in 1..dim {
        let low = s.trailing_zeros() as usize;
        let rest = s & (s - 1);
        let mut extra = 0.0;
        let mut bits = rest;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            extra += coupling[low][b];
            bits &= bits - 1;
        }
        phase[s] = phase[rest] + extra;
    }
    let amp = (dim as f64).sqrt().recip();
    Ok(phase
        .iter()
        .map(|&ph| C64::from_polar(amp, ph.rem_euclid(TAU)))
        .collect())
}

/// Exact partial trace of [`brute_force_state`] over the complement of A.
pub fn brute_force_reduced(g: &InteractionGraph, p: &Partition) -> Result<ReducedDensityMatrix> {
    let psi = brute_force_state(g)?;
    Ok(partial_trace(&psi, g.n_particles(), p))
}

/// Partial trace of an N-qubit pure state onto the qubits of A.
pub fn partial_trace(psi: &[C64], n: usize, p: &Partition) -> ReducedDensityMatrix {
    let set_a = p.set_a();
    let set_b: Vec<usize> = p.complement().collect();
    let place = |set: &[usize], local: usize| {
        let m = set.len();
        set.iter().enumerate().fold(0usize, |acc, (j, &q)| {
            if (local >> (m - 1 - j)) & 1 == 1 {
                acc | (1 << (n - 1 - q))
            } else {
                acc
            }
        })
    };
    let da = 1usize << set_a.len();
    let db = 1usize << set_b.len();
    let idx_a: Vec<usize> = (0..da).map(|a| place(set_a, a)).collect();
    let idx_b: Vec<usize> = (0..db).map(|b| place(&set_b, b)).collect();
    let mut matrix = DMatrix::from_element(da, da, ZERO);
    for r in 0..da {
        for c in r..da {
            let mut acc = ZERO;
            for &b in &idx_b {
                acc += psi[idx_a[r] | b] * psi[idx_a[c] | b].conj();
            }
            matrix[(r, c)] = acc;
            matrix[(c, r)] = acc.conj();
        }
    }
    ReducedDensityMatrix {
        subset: set_a.to_vec(),
        matrix,
    }
}

/// Concurrence of a (not necessarily normalized) two-qubit pure state,
/// scaled by its squared norm: 2|c00 c11 − c01 c10|.
fn weighted_pure_concurrence(c: [C64; 4]) -> f64 {
    2.0 * (c[0] * c[3] - c[1] * c[2]).norm()
}

/// Outcome of the measurement-based localization protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    /// Outcome-weighted mean concurrence of the pair left behind.
    pub concurrence: f64,
    pub connected: bool,
    pub path: Vec<usize>,
    /// True when every measurement branch was enumerated.
    pub exact: bool,
    pub branches: usize,
}

/// Localize entanglement between `i` and `j` along a shortest path.
///
/// Particles off the path are measured in the z basis, which only leaves
/// local phases on the path and so is modelled by dropping them. Path
/// intermediates are measured in the x basis.
pub fn localize_entanglement<R: Rng + ?Sized>(
    g: &InteractionGraph,
    i: usize,
    j: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Localization> {
    match g.shortest_path(i, j)? {
        Some(path) if path.len() >= 2 => localize_along_path(g, &path, samples, rng),
        Some(_) => Err(Error::InvalidParameter(format!(
            "localization needs two distinct particles, got {i} twice"
        ))),
        None => Ok(Localization {
            concurrence: 0.0,
            connected: false,
            path: Vec::new(),
            exact: true,
            branches: 0,
        }),
    }
}

/// Run the protocol along a caller-chosen path (endpoints first and last).
///
/// Couplings among path particles, including chords, are all kept. Paths of
/// up to [`BRUTE_FORCE_CAP`] particles are enumerated exactly; longer paths
/// are sampled with `samples` measurement trajectories and may only carry
/// chords that touch the first endpoint.
pub fn localize_along_path<R: Rng + ?Sized>(
    g: &InteractionGraph,
    path: &[usize],
    samples: usize,
    rng: &mut R,
) -> Result<Localization> {
    if path.len() < 2 {
        return Err(Error::InvalidParameter("path needs two endpoints".into()));
    }
    let sub = g.induced_subgraph(path)?;
    if path.len() <= BRUTE_FORCE_CAP {
        let (concurrence, branches) = enumerate_path_branches(&sub)?;
        return Ok(Localization {
            concurrence,
            connected: true,
            path: path.to_vec(),
            exact: true,
            branches,
        });
    }
    let concurrence = sample_path_branches(&sub, samples.max(1), rng)?;
    Ok(Localization {
        concurrence,
        connected: true,
        path: path.to_vec(),
        exact: false,
        branches: samples.max(1),
    })
}

/// Exact average concurrence over all x-measurement outcomes on the path
/// interior.
fn enumerate_path_branches(path_graph: &InteractionGraph) -> Result<(f64, usize)> {
    let len = path_graph.n_particles();
    let psi = brute_force_state(path_graph)?;
    let interior = len - 2;
    let m = 1usize << interior;
    // interior bits sit between the endpoint bits: index = s_i<<(len-1) | mid<<1 | s_j
    let mut blocks: Vec<Vec<C64>> = Vec::with_capacity(4);
    for (si, sj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let mut v: Vec<C64> = (0..m).map(|mid| psi[(si << (len - 1)) | (mid << 1) | sj]).collect();
        walsh_hadamard(&mut v);
        blocks.push(v);
    }
    let total: f64 = (0..m)
        .map(|out| weighted_pure_concurrence([blocks[0][out], blocks[1][out], blocks[2][out], blocks[3][out]]))
        .sum();
    Ok((total, m))
}

/// In-place normalized Walsh-Hadamard transform (projects every bit onto |±⟩).
fn walsh_hadamard(v: &mut [C64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for k in start..start + h {
                let a = v[k];
                let b = v[k + h];
                v[k] = (a + b) * FRAC_1_SQRT_2;
                v[k + h] = (a - b) * FRAC_1_SQRT_2;
            }
        }
        h *= 2;
    }
}

/// Monte Carlo over measurement trajectories, sweeping along the path with a
/// two-qubit state (first endpoint, current interior particle).
fn sample_path_branches<R: Rng + ?Sized>(
    path_graph: &InteractionGraph,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let len = path_graph.n_particles();
    for (k, l, p) in path_graph.edges() {
        if k != 0 && l != k + 1 && crate::graph::is_effective_phase(p) {
            return Err(Error::InvalidParameter(format!(
                "sampled localization cannot handle the chord ({k}, {l})"
            )));
        }
    }
    let mut total = 0.0;
    for _ in 0..samples {
        // amplitudes over (s_first, s_current), index 2*s_first + s_current
        let half = 0.5;
        let g01 = C64::from_polar(1.0, path_graph.phase(0, 1).rem_euclid(TAU));
        let mut state = [C64::new(half, 0.0), C64::new(half, 0.0), C64::new(half, 0.0), g01 * half];
        for cur in 1..len - 1 {
            let next = cur + 1;
            let e_cn = C64::from_polar(1.0, path_graph.phase(cur, next).rem_euclid(TAU));
            let e_fn = C64::from_polar(1.0, path_graph.phase(0, next).rem_euclid(TAU));
            // three qubits (first, cur, next), then project cur onto |±⟩
            let mut plus = [ZERO; 4];
            let mut minus = [ZERO; 4];
            for sf in 0..2 {
                for sn in 0..2 {
                    let mut a0 = state[2 * sf] * FRAC_1_SQRT_2;
                    let mut a1 = state[2 * sf + 1] * FRAC_1_SQRT_2;
                    if sn == 1 {
                        a1 *= e_cn;
                        if sf == 1 {
                            a0 *= e_fn;
                            a1 *= e_fn;
                        }
                    }
                    plus[2 * sf + sn] = (a0 + a1) * FRAC_1_SQRT_2;
                    minus[2 * sf + sn] = (a0 - a1) * FRAC_1_SQRT_2;
                }
            }
            let p_plus: f64 = plus.iter().map(|a| a.norm_sqr()).sum();
            let p_minus: f64 = minus.iter().map(|a| a.norm_sqr()).sum();
            let chosen = if rng.random::<f64>() * (p_plus + p_minus) < p_plus {
                (plus, p_plus)
            } else {
                (minus, p_minus)
            };
            let norm = chosen.1.sqrt();
            state = chosen.0.map(|a| a / norm);
        }
        total += weighted_pure_concurrence(state);
    }
    Ok(total / samples as f64)
}

/// Global state used only as a neutral starting point in tests and channels.
pub fn plus_state(n_qubits: usize) -> Vec<C64> {
    let dim = 1usize << n_qubits;
    vec![ONE / (dim as f64).sqrt(); dim]
}
