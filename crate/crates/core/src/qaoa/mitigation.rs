//! Zero-noise extrapolation and readout-error mitigation.
//!
//! The simulator itself is noiseless. [`NoiseModel`] layers a global
//! depolarizing factor per gate and a readout confusion matrix on top of the
//! exact probabilities so both mitigation paths have something to undo.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::quantum::{run_circuit, sample_from, CostTable, Gate};

/// Value at `λ = 0` of the quadratic through `(1,E₁)`, `(2,E₂)`, `(3,E₃)`.
pub fn zne_extrapolate(values: [f64; 3]) -> Result<f64> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("ZNE inputs must be finite"));
    }
    // Lagrange weights of the nodes 1, 2, 3 evaluated at 0.
    Ok(3.0 * values[0] - 3.0 * values[1] + values[2])
}

/// Global unitary folding: each gate `G` becomes `G (G† G)^k` with
/// `k = (scale − 1) / 2`.
pub fn fold_noise(circuit: &[Gate], scale: usize) -> Result<Vec<Gate>> {
    if scale == 0 || scale % 2 == 0 {
        return Err(Error::usage(format!("fold scale must be an odd integer >= 1, got {scale}")));
    }
    let k = (scale - 1) / 2;
    let mut out = Vec::with_capacity(circuit.len() * scale);
    for g in circuit {
        out.push(g.clone());
        for _ in 0..k {
            out.push(g.inverse());
            out.push(g.clone());
        }
    }
    Ok(out)
}

/// Folds only the first `folds` gates once each.
pub fn fold_noise_partial(circuit: &[Gate], folds: usize) -> Vec<Gate> {
    let mut out = Vec::with_capacity(circuit.len() + 2 * folds);
    for (i, g) in circuit.iter().enumerate() {
        out.push(g.clone());
        if i < folds {
            out.push(g.inverse());
            out.push(g.clone());
        }
    }
    out
}

/// Circuit at noise scale `λ ∈ {1, 2, 3}`; `λ = 2` folds half the gates.
pub fn scale_noise(circuit: &[Gate], lambda: usize) -> Result<Vec<Gate>> {
    match lambda {
        1 | 3 | 5 => fold_noise(circuit, lambda),
        2 => Ok(fold_noise_partial(circuit, circuit.len() / 2)),
        _ => Err(Error::usage(format!("unsupported noise scale {lambda}"))),
    }
}

/// Column-stochastic readout map: `entries[(observed, true)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    entries: DMatrix<f64>,
}

pub const MAX_CONDITION: f64 = 1e8;

impl ConfusionMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::usage("confusion matrix must be square"));
        }
        if entries.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(Error::usage("confusion matrix entries must lie in [0, 1]"));
        }
        for (j, col) in entries.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::usage(format!("confusion column {j} sums to {s}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: DMatrix::identity(dim, dim) }
    }

    /// Independent per-qubit readout flips: `p01` = P(read 1 | 0), `p10` = P(read 0 | 1).
    pub fn from_qubit_flips(n_qubits: usize, p01: f64, p10: f64) -> Result<Self> {
        let one = DMatrix::from_row_slice(2, 2, &[1.0 - p01, p10, p01, 1.0 - p10]);
        // Qubit 0 is the least significant bit, so it is the rightmost factor.
        let mut m = DMatrix::identity(1, 1);
        for _ in 0..n_qubits {
            m = one.kronecker(&m);
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Observed distribution for a true distribution.
    pub fn apply(&self, probs: &[f64]) -> Vec<f64> {
        (&self.entries * DVector::from_column_slice(probs)).iter().copied().collect()
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.entries.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MitigatedDistribution {
    pub probs: Vec<f64>,
    /// Negative entries after inversion were clipped and the rest renormalized.
    pub clipped: bool,
}

/// `M⁻¹ · observed`, clipped to the simplex.
pub fn mitigate_readout(m: &ConfusionMatrix, observed: &[f64]) -> Result<MitigatedDistribution> {
    if observed.len() != m.dim() {
        return Err(Error::usage(format!("distribution has {} entries, matrix is {}x{}", observed.len(), m.dim(), m.dim())));
    }
    let cond = m.condition_number();
    if cond.is_nan() || cond > MAX_CONDITION {
        return Err(Error::Mitigation(format!("confusion matrix condition number {cond:e} exceeds {MAX_CONDITION:e}")));
    }
    let solved = m
        .entries
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(observed))
        .ok_or_else(|| Error::Mitigation("confusion matrix is singular".into()))?;
    let mut probs: Vec<f64> = solved.iter().copied().collect();
    let clipped = probs.iter().any(|&p| p < 0.0);
    if clipped {
        probs.iter_mut().for_each(|p| *p = p.max(0.0));
    }
    let s: f64 = probs.iter().sum();
    if s > 0.0 && (clipped || (s - 1.0).abs() > 1e-12) {
        probs.iter_mut().for_each(|p| *p /= s);
    }
    Ok(MitigatedDistribution { probs, clipped })
}

/// Synthetic hardware noise for the mitigation demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Depolarizing probability per gate.
    pub depolarizing: f64,
    pub readout: ConfusionMatrix,
}

impl NoiseModel {
    pub fn new(n_qubits: usize, depolarizing: f64, readout_flip: f64) -> Result<Self> {
        Ok(Self { depolarizing, readout: ConfusionMatrix::from_qubit_flips(n_qubits, readout_flip, readout_flip)? })
    }

    /// Observed outcome distribution of `circuit` under this model.
    pub fn observed_probabilities(&self, n_qubits: usize, circuit: &[Gate]) -> Result<Vec<f64>> {
        let ideal = run_circuit(n_qubits, circuit)?.probabilities();
        let fidelity = (1.0 - self.depolarizing).powi(circuit.len() as i32);
        let mixed = 1.0 / ideal.len() as f64;
        let noisy: Vec<f64> = ideal.iter().map(|p| fidelity * p + (1.0 - fidelity) * mixed).collect();
        Ok(self.readout.apply(&noisy))
    }
}

/// Outcome of one mitigated expectation estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZneReport {
    pub exact: f64,
    /// Unmitigated shot estimate at `λ = 1`.
    pub raw: f64,
    pub mitigated: f64,
    pub clipped: bool,
    /// Readout inversion failed and raw distributions were used.
    pub fallback: bool,
}

/// Estimates `E[cost]` with readout correction at `λ = 1, 2, 3` and
/// extrapolates to zero noise.
pub fn mitigated_expectation<R: Rng + ?Sized>(
    n_qubits: usize,
    circuit: &[Gate],
    cost: &CostTable,
    noise: &NoiseModel,
    shots: usize,
    rng: &mut R,
) -> Result<ZneReport> {
    let exact = run_circuit(n_qubits, circuit)?.expectation(cost)?;
    let mut values = [0.0; 3];
    let mut raw = 0.0;
    let mut clipped = false;
    let mut fallback = false;
    for (k, lambda) in [1usize, 2, 3].into_iter().enumerate() {
        let scaled = scale_noise(circuit, lambda)?;
        let observed = noise.observed_probabilities(n_qubits, &scaled)?;
        let mut hist = vec![0.0; observed.len()];
        for z in sample_from(&observed, shots, rng) {
            hist[z] += 1.0 / shots as f64;
        }
        let dot = |p: &[f64]| p.iter().zip(cost.values()).map(|(a, b)| a * b).sum::<f64>();
        if lambda == 1 {
            raw = dot(&hist);
        }
        let corrected = match mitigate_readout(&noise.readout, &hist) {
            Ok(m) => {
                clipped |= m.clipped;
                m.probs
            }
            Err(Error::Mitigation(_)) => {
                fallback = true;
                hist
            }
            Err(e) => return Err(e),
        };
        values[k] = dot(&corrected);
    }
    Ok(ZneReport { exact, raw, mitigated: zne_extrapolate(values)?, clipped, fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zne_examples() {
        assert!((zne_extrapolate([0.5, 0.5, 0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!((zne_extrapolate([0.9, 0.82, 0.7]).unwrap() - 0.94).abs() < 1e-12);
        assert!(zne_extrapolate([0.9, f64::NAN, 0.7]).is_err());
    }

    #[test]
    fn folding_examples() {
        let circuit: Vec<Gate> = (0..10).map(|k| if k % 2 == 0 { Gate::H(k % 3) } else { Gate::Ry(k % 3, 0.3 * k as f64) }).collect();
        assert_eq!(fold_noise(&circuit, 1).unwrap(), circuit);
        let folded = fold_noise(&circuit, 3).unwrap();
        assert_eq!(folded.len(), 30);
        let a = run_circuit(3, &circuit).unwrap();
        let b = run_circuit(3, &folded).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-10);
        }
        assert!(fold_noise(&circuit, 2).is_err());
        assert_eq!(scale_noise(&circuit, 2).unwrap().len(), 20);
    }

    #[test]
    fn readout_examples() {
        let id = ConfusionMatrix::identity(4);
        let p = [0.1, 0.2, 0.3, 0.4];
        let out = mitigate_readout(&id, &p).unwrap();
        for (a, b) in out.probs.iter().zip(p) {
            assert!((a - b).abs() < 1e-15);
        }

        let m = ConfusionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8])).unwrap();
        let out = mitigate_readout(&m, &[0.55, 0.45]).unwrap();
        assert!((out.probs[0] - 0.5).abs() < 1e-12 && (out.probs[1] - 0.5).abs() < 1e-12);
        assert!(!out.clipped);

        let singular = ConfusionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        assert!(matches!(mitigate_readout(&singular, &[0.5, 0.5]), Err(Error::Mitigation(_))));

        // An observation outside M's image forces clipping.
        let out = mitigate_readout(&m, &[1.0, 0.0]).unwrap();
        assert!(out.clipped);
        assert!(out.probs.iter().all(|&p| p >= 0.0));
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qubit_flip_matrix_is_column_stochastic() {
        let m = ConfusionMatrix::from_qubit_flips(3, 0.02, 0.05).unwrap();
        assert_eq!(m.dim(), 8);
        // P(read 001 | true 000) = p01 on qubit 0 only.
        assert!((m.entries()[(1, 0)] - 0.02 * 0.98 * 0.98).abs() < 1e-15);
    }

    #[test]
    fn mitigation_beats_raw_on_noisy_estimate() {
        let circuit = vec![Gate::H(0), Gate::Ry(1, 0.7), Gate::Cz { control: 0, target: 1 }, Gate::Rx(2, 1.1), Gate::H(1)];
        let cost = CostTable::new((0..8).map(|z| z as f64).collect()).unwrap();
        let noise = NoiseModel::new(3, 0.02, 0.03).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = mitigated_expectation(3, &circuit, &cost, &noise, 200_000, &mut rng).unwrap();
        assert!((r.mitigated - r.exact).abs() < (r.raw - r.exact).abs());
    }
}
