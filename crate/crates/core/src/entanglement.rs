//! Entanglement measures on reduced density matrices. Entropies are in bits.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Partition};
use crate::state::{coherence_factor, reduced_density_matrix, ReducedDensityMatrix, C64};

/// Eigenvalues down to this (negative) value are treated as rounding noise.
pub const EIGEN_FLOOR: f64 = -1e-10;

/// Eigenvalues at or below this weight add nothing to entropies.
pub const EIGEN_CUTOFF: f64 = 1e-12;

/// Spectrum in descending order with round-off negatives clamped to zero.
pub fn spectrum(rho: &ReducedDensityMatrix) -> Result<Vec<f64>> {
    let ev = rho.eigenvalues();
    if let Some(&min) = ev.last() {
        if min < EIGEN_FLOOR {
            return Err(Error::InvalidState(format!(
                "density matrix has eigenvalue {min:e}"
            )));
        }
    }
    Ok(ev.into_iter().map(|x| x.max(0.0)).collect())
}

pub fn entropy_of_spectrum(ev: &[f64]) -> f64 {
    let s = -ev.iter().filter(|&&x| x > EIGEN_CUTOFF).map(|&x| x * x.log2()).sum::<f64>();
    if s < EIGEN_CUTOFF {
        0.0
    } else {
        s
    }
}

/// S = −Σ λ log₂ λ with 0·log 0 = 0.
pub fn von_neumann_entropy(rho: &ReducedDensityMatrix) -> Result<f64> {
    Ok(entropy_of_spectrum(&spectrum(rho)?).max(0.0))
}

pub fn renyi_entropy(rho: &ReducedDensityMatrix, q: f64) -> Result<f64> {
    if !q.is_finite() || q <= 0.0 || q == 1.0 {
        return Err(Error::InvalidParameter(format!(
            "Rényi order must be positive, finite and not 1, got {q}"
        )));
    }
    let ev = spectrum(rho)?;
    let power_sum: f64 = ev.iter().filter(|&&x| x > 0.0).map(|&x| x.powf(q)).sum();
    Ok((power_sum.log2() / (1.0 - q)).max(0.0))
}

/// S₂ = −log₂ tr ρ², computed from the entries without diagonalizing.
pub fn renyi2_entropy(rho: &ReducedDensityMatrix) -> f64 {
    (-rho.purity().log2()).max(0.0)
}

/// Meyer-Wallach Q = 2(1 − N⁻¹ Σ_k tr ρ_k²) from the single-particle marginals.
pub fn meyer_wallach(g: &InteractionGraph) -> Result<f64> {
    let n = g.n_particles();
    if n == 0 {
        return Ok(0.0);
    }
    let mut purity_sum = 0.0;
    for k in 0..n {
        let p = Partition::new(n, [k])?;
        purity_sum += reduced_density_matrix(g, &p, false)?.purity();
    }
    Ok((2.0 * (1.0 - purity_sum / n as f64)).clamp(0.0, 1.0))
}

/// Meyer-Wallach through the closed form tr ρ_k² = (1 + |C_k|²)/2.
pub fn meyer_wallach_closed_form(g: &InteractionGraph) -> Result<f64> {
    let n = g.n_particles();
    if n == 0 {
        return Ok(0.0);
    }
    let mut purity_sum = 0.0;
    for k in 0..n {
        let p = Partition::new(n, [k])?;
        let c = coherence_factor(g, &p, &[1])?.magnitude();
        purity_sum += 0.5 * (1.0 + c * c);
    }
    Ok((2.0 * (1.0 - purity_sum / n as f64)).clamp(0.0, 1.0))
}

fn require_two_qubits(rho: &ReducedDensityMatrix) -> Result<()> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: rho.dim(),
        });
    }
    Ok(())
}

fn hermitian_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|x| C64::new(x.max(0.0).sqrt(), 0.0));
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&roots) * u.adjoint()
}

fn pauli(which: char) -> DMatrix<C64> {
    let (o, l, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    match which {
        'x' => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        'y' => DMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
        'z' => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
        _ => DMatrix::identity(2, 2),
    }
}

/// λ₁ ≥ … ≥ λ₄: square roots of the eigenvalues of ρ (σ_y⊗σ_y) ρ* (σ_y⊗σ_y),
/// obtained from the Hermitian form √ρ ρ̃ √ρ.
pub fn wootters_spectrum(rho: &ReducedDensityMatrix) -> Result<[f64; 4]> {
    require_two_qubits(rho)?;
    let yy = pauli('y').kronecker(&pauli('y'));
    let m = rho.matrix();
    let flipped = &yy * m.map(|x| x.conj()) * &yy;
    let root = hermitian_sqrt(m);
    let r = &root * flipped * &root;
    let r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
    let mut lam: Vec<f64> = r.symmetric_eigenvalues().iter().map(|&x| x.max(0.0).sqrt()).collect();
    lam.sort_by(|a, b| b.total_cmp(a));
    Ok([lam[0], lam[1], lam[2], lam[3]])
}

/// Wootters concurrence max{0, λ₁ − λ₂ − λ₃ − λ₄}.
pub fn concurrence(rho: &ReducedDensityMatrix) -> Result<f64> {
    let l = wootters_spectrum(rho)?;
    Ok((l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0))
}

/// Concurrence of assistance Σ λᵢ.
pub fn concurrence_of_assistance(rho: &ReducedDensityMatrix) -> Result<f64> {
    let l = wootters_spectrum(rho)?;
    Ok(l.iter().sum::<f64>().min(1.0))
}

/// Best connected Pauli correlation |⟨σ_a⊗σ_b⟩ − ⟨σ_a⟩⟨σ_b⟩| over a, b ∈ {x, y, z}.
pub fn max_pauli_correlation(rho: &ReducedDensityMatrix) -> Result<f64> {
    require_two_qubits(rho)?;
    let m = rho.matrix();
    let id = pauli('i');
    let expect = |op: DMatrix<C64>| (m * op).trace().re;
    let mut best: f64 = 0.0;
    for a in ['x', 'y', 'z'] {
        let local_a = expect(pauli(a).kronecker(&id));
        for b in ['x', 'y', 'z'] {
            let local_b = expect(id.kronecker(&pauli(b)));
            let joint = expect(pauli(a).kronecker(&pauli(b)));
            best = best.max((joint - local_a * local_b).abs());
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizableBounds {
    /// Largest connected two-point Pauli correlation.
    pub lower: f64,
    /// Concurrence of assistance.
    pub upper: f64,
}

pub fn localizable_bounds(rho: &ReducedDensityMatrix) -> Result<LocalizableBounds> {
    Ok(LocalizableBounds {
        lower: max_pauli_correlation(rho)?,
        upper: concurrence_of_assistance(rho)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntanglementReport {
    pub von_neumann: f64,
    pub renyi2: f64,
    pub partition: Partition,
    pub connected: bool,
}

pub fn entanglement_report(g: &InteractionGraph, p: &Partition) -> Result<EntanglementReport> {
    let rho = reduced_density_matrix(g, p, false)?;
    Ok(EntanglementReport {
        von_neumann: von_neumann_entropy(&rho)?,
        renyi2: renyi2_entropy(&rho),
        partition: p.clone(),
        connected: g.is_entangled_partition(p),
    })
}
