//! Dense statevector simulation for circuits of up to ten qubits.
//!
//! Basis state `z` is the integer whose bit `b` (LSB = qubit 0) holds qubit
//! `b`'s value. Global phase is never normalized away; every observable
//! contract is stated in terms of `|amplitude|²`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 10;

/// Elementary operations understood by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    H(usize),
    /// `exp(-i θ Y / 2)`.
    Ry(usize, f64),
    /// `exp(-i θ X / 2)`.
    Rx(usize, f64),
    Cz { control: usize, target: usize },
    /// `exp(-i γ C)` for a diagonal cost operator `C`.
    CostPhase { cost: CostTable, gamma: f64 },
    /// `exp(-i θ Z_S / 2)` where `Z_S` is the product of `Z` over the qubits in `mask`.
    ZRotation { mask: usize, angle: f64 },
}

impl Gate {
    /// The adjoint gate.
    pub fn inverse(&self) -> Gate {
        match self {
            Gate::H(q) => Gate::H(*q),
            Gate::Ry(q, t) => Gate::Ry(*q, -t),
            Gate::Rx(q, t) => Gate::Rx(*q, -t),
            Gate::Cz { control, target } => Gate::Cz { control: *control, target: *target },
            Gate::CostPhase { cost, gamma } => Gate::CostPhase { cost: cost.clone(), gamma: -gamma },
            Gate::ZRotation { mask, angle } => Gate::ZRotation { mask: *mask, angle: -angle },
        }
    }

    /// 2×2 matrix of a single-qubit gate, row-major.
    pub fn single_qubit_matrix(&self) -> Option<[[Complex64; 2]; 2]> {
        let re = |x: f64| Complex64::new(x, 0.0);
        match *self {
            Gate::H(_) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                Some([[re(s), re(s)], [re(s), re(-s)]])
            }
            Gate::Ry(_, t) => {
                let (s, c) = (t / 2.0).sin_cos();
                Some([[re(c), re(-s)], [re(s), re(c)]])
            }
            Gate::Rx(_, t) => {
                let (s, c) = (t / 2.0).sin_cos();
                let mis = Complex64::new(0.0, -s);
                Some([[re(c), mis], [mis, re(c)]])
            }
            _ => None,
        }
    }

    fn check(&self, n_qubits: usize) -> Result<()> {
        let in_range = |q: usize| {
            if q < n_qubits {
                Ok(())
            } else {
                Err(Error::usage(format!("qubit {q} out of range for {n_qubits}-qubit state")))
            }
        };
        match self {
            Gate::H(q) | Gate::Ry(q, _) | Gate::Rx(q, _) => in_range(*q),
            Gate::Cz { control, target } => {
                in_range(*control)?;
                in_range(*target)?;
                if control == target {
                    return Err(Error::usage("CZ control and target must differ"));
                }
                Ok(())
            }
            Gate::CostPhase { cost, .. } => {
                if cost.len() != 1 << n_qubits {
                    return Err(Error::usage(format!(
                        "cost table has {} entries, state has {}",
                        cost.len(),
                        1usize << n_qubits
                    )));
                }
                Ok(())
            }
            Gate::ZRotation { mask, .. } => {
                if *mask >> n_qubits != 0 {
                    return Err(Error::usage(format!("Z-string mask {mask:#b} exceeds {n_qubits} qubits")));
                }
                Ok(())
            }
        }
    }
}

/// Real cost assigned to every computational basis state.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    values: Vec<f64>,
}

impl CostTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("cost entry {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coefficients `c_S` with `C = Σ_S c_S Z_S`, indexed by qubit mask `S`.
    ///
    /// Computed with an in-place Walsh–Hadamard transform.
    pub fn pauli_z_coefficients(&self) -> Vec<f64> {
        let mut c = self.values.clone();
        let n = c.len();
        let mut h = 1;
        while h < n {
            for i in (0..n).step_by(2 * h) {
                for j in i..i + h {
                    let (a, b) = (c[j], c[j + h]);
                    c[j] = a + b;
                    c[j + h] = a - b;
                }
            }
            h *= 2;
        }
        let scale = 1.0 / n as f64;
        c.iter_mut().for_each(|v| *v *= scale);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn new(n_qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::config(format!("qubit count {n_qubits} outside 1..={MAX_QUBITS}")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amplitudes })
    }

    /// Wraps explicit amplitudes; the vector must be normalized.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if !len.is_power_of_two() || len < 2 {
            return Err(Error::usage(format!("amplitude count {len} is not 2^n with n >= 1")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::config(format!("qubit count {n_qubits} exceeds {MAX_QUBITS}")));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("state norm {norm} is not 1")));
        }
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        gate.check(self.n_qubits)?;
        match gate {
            Gate::Cz { control, target } => {
                let m = (1 << control) | (1 << target);
                for (z, a) in self.amplitudes.iter_mut().enumerate() {
                    if z & m == m {
                        *a = -*a;
                    }
                }
            }
            Gate::CostPhase { cost, gamma } => self.phase_unchecked(cost.values(), *gamma),
            Gate::ZRotation { mask, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let minus = Complex64::new(c, -s);
                let plus = Complex64::new(c, s);
                for (z, a) in self.amplitudes.iter_mut().enumerate() {
                    *a *= if (z & mask).count_ones() % 2 == 0 { minus } else { plus };
                }
            }
            Gate::H(q) | Gate::Ry(q, _) | Gate::Rx(q, _) => {
                let m = gate.single_qubit_matrix().expect("single-qubit gate");
                self.apply_single(*q, &m);
            }
        }
        Ok(())
    }

    pub fn apply_all<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) -> Result<()> {
        for g in gates {
            self.apply_gate(g)?;
        }
        Ok(())
    }

    fn apply_single(&mut self, q: usize, m: &[[Complex64; 2]; 2]) {
        let bit = 1 << q;
        for i in 0..self.amplitudes.len() {
            if i & bit == 0 {
                let j = i | bit;
                let (a, b) = (self.amplitudes[i], self.amplitudes[j]);
                self.amplitudes[i] = m[0][0] * a + m[0][1] * b;
                self.amplitudes[j] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    /// `amplitude[z] ← exp(-i γ cost[z]) · amplitude[z]`.
    pub fn apply_cost_phase(&mut self, cost: &CostTable, gamma: f64) -> Result<()> {
        if cost.len() != self.dim() {
            return Err(Error::usage(format!(
                "cost table has {} entries, state has {}",
                cost.len(),
                self.dim()
            )));
        }
        self.phase_unchecked(cost.values(), gamma);
        Ok(())
    }

    fn phase_unchecked(&mut self, cost: &[f64], gamma: f64) {
        for (a, c) in self.amplitudes.iter_mut().zip(cost) {
            let (s, co) = (-gamma * c).sin_cos();
            *a *= Complex64::new(co, s);
        }
    }

    /// Transverse-field mixer `exp(-i β Σ_j X_j)`, i.e. `RX(2β)` on every qubit.
    pub fn apply_mixer(&mut self, beta: f64) {
        let (s, c) = beta.sin_cos();
        let m = [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ];
        for q in 0..self.n_qubits {
            self.apply_single(q, &m);
        }
    }

    /// `|amplitude[z]|²` for every basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `Σ_z prob[z] · cost[z]`.
    pub fn expectation(&self, cost: &CostTable) -> Result<f64> {
        if cost.len() != self.dim() {
            return Err(Error::usage(format!(
                "cost table has {} entries, state has {}",
                cost.len(),
                self.dim()
            )));
        }
        Ok(self.amplitudes.iter().zip(cost.values()).map(|(a, c)| a.norm_sqr() * c).sum())
    }

    /// Draws `shots` measurement outcomes in the computational basis.
    pub fn sample_outcomes<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Result<Vec<usize>> {
        if shots == 0 {
            return Err(Error::usage("shot count must be at least 1"));
        }
        Ok(sample_from(&self.probabilities(), shots, rng))
    }

    /// Outcome histogram over all `2^n` basis states; sums to `shots`.
    pub fn sample<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Result<Vec<u32>> {
        let mut counts = vec![0u32; self.dim()];
        for z in self.sample_outcomes(shots, rng)? {
            counts[z] += 1;
        }
        Ok(counts)
    }
}

/// Inverse-CDF sampling from an (unnormalized-tolerant) probability vector.
pub(crate) fn sample_from<R: Rng + ?Sized>(probs: &[f64], shots: usize, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    (0..shots)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Runs a gate list on `|0…0⟩`.
pub fn run_circuit(n_qubits: usize, gates: &[Gate]) -> Result<StateVector> {
    let mut s = StateVector::new(n_qubits)?;
    s.apply_all(gates)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn new_state_is_all_zero_ket() {
        assert_eq!(StateVector::new(1).unwrap().amplitudes(), &[c(1.0, 0.0), c(0.0, 0.0)]);
        let s = StateVector::new(2).unwrap();
        assert_eq!(s.probabilities(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(StateVector::new(11), Err(Error::Config(_))));
        assert!(matches!(StateVector::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn single_gate_examples() {
        let mut s = StateVector::new(1).unwrap();
        s.apply_gate(&Gate::H(0)).unwrap();
        assert!(close(s.amplitudes(), &[c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)], 1e-15));

        let mut s = StateVector::new(1).unwrap();
        s.apply_gate(&Gate::Ry(0, PI)).unwrap();
        assert!(close(s.amplitudes(), &[c(0.0, 0.0), c(1.0, 0.0)], 1e-15));

        let mut amps = vec![c(0.0, 0.0); 4];
        amps[3] = c(1.0, 0.0);
        let mut s = StateVector::from_amplitudes(amps).unwrap();
        s.apply_gate(&Gate::Cz { control: 0, target: 1 }).unwrap();
        assert_eq!(s.amplitudes()[3], c(-1.0, 0.0));
    }

    #[test]
    fn gate_errors() {
        let mut s = StateVector::new(2).unwrap();
        assert!(matches!(s.apply_gate(&Gate::H(2)), Err(Error::Usage(_))));
        assert!(matches!(s.apply_gate(&Gate::Cz { control: 1, target: 1 }), Err(Error::Usage(_))));
        let cost = CostTable::new(vec![0.0; 2]).unwrap();
        assert!(matches!(s.apply_cost_phase(&cost, 1.0), Err(Error::Usage(_))));
        assert!(matches!(s.expectation(&cost), Err(Error::Usage(_))));
        assert!(CostTable::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn single_qubit_matrices_are_unitary() {
        for g in [Gate::H(0), Gate::Ry(0, 0.37), Gate::Rx(0, -2.1)] {
            let m = g.single_qubit_matrix().unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let dot: Complex64 = (0..2).map(|k| m[k][i].conj() * m[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - c(want, 0.0)).norm() < 1e-12, "{g:?}");
                }
            }
        }
    }

    #[test]
    fn cost_phase_examples() {
        let mut plus = StateVector::new(1).unwrap();
        plus.apply_gate(&Gate::H(0)).unwrap();

        let mut s = plus.clone();
        s.apply_cost_phase(&CostTable::new(vec![3.0, -2.0]).unwrap(), 0.0).unwrap();
        assert_eq!(s, plus);

        let mut s = plus.clone();
        s.apply_cost_phase(&CostTable::new(vec![0.7, 0.7]).unwrap(), 1.3).unwrap();
        for (a, b) in s.probabilities().iter().zip(plus.probabilities()) {
            assert!((a - b).abs() < 1e-15);
        }

        let mut s = plus.clone();
        s.apply_cost_phase(&CostTable::new(vec![0.0, 1.0]).unwrap(), PI).unwrap();
        assert!(close(s.amplitudes(), &[c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)], 1e-12));
    }

    #[test]
    fn mixer_examples() {
        let mut s = StateVector::new(3).unwrap();
        s.apply_gate(&Gate::Ry(1, 0.4)).unwrap();
        let before = s.clone();
        s.apply_mixer(0.0);
        assert!(close(s.amplitudes(), before.amplitudes(), 1e-15));

        let mut s = StateVector::new(1).unwrap();
        s.apply_mixer(PI / 2.0);
        let p = s.probabilities();
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);

        let mut twice = before.clone();
        twice.apply_mixer(PI / 4.0);
        twice.apply_mixer(PI / 4.0);
        let mut once = before;
        once.apply_mixer(PI / 2.0);
        assert!(close(twice.amplitudes(), once.amplitudes(), 1e-12));
    }

    #[test]
    fn measurement_examples() {
        assert_eq!(StateVector::new(1).unwrap().probabilities(), vec![1.0, 0.0]);
        let mut s = StateVector::new(2).unwrap();
        s.apply_all(&[Gate::H(0), Gate::H(1)]).unwrap();
        for p in s.probabilities() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let mut s = StateVector::new(6).unwrap();
        for q in 0..6 {
            s.apply_gate(&Gate::H(q)).unwrap();
        }
        for p in s.probabilities() {
            assert!((p - 1.0 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = StateVector::new(1).unwrap();
        assert_eq!(zero.sample(500, &mut rng).unwrap(), vec![500, 0]);
        assert!(matches!(zero.sample(0, &mut rng), Err(Error::Usage(_))));

        let mut s = StateVector::new(2).unwrap();
        s.apply_all(&[Gate::H(0), Gate::H(1)]).unwrap();
        let counts = s.sample(10_000, &mut rng).unwrap();
        assert_eq!(counts.iter().sum::<u32>(), 10_000);
        let tv: f64 = counts.iter().map(|&k| (k as f64 / 1e4 - 0.25).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.05, "tv {tv}");

        let a = s.sample(100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = s.sample(100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expectation_examples() {
        let zero = StateVector::new(1).unwrap();
        assert_eq!(zero.expectation(&CostTable::new(vec![3.0, 7.0]).unwrap()).unwrap(), 3.0);
        let mut s = StateVector::new(1).unwrap();
        s.apply_gate(&Gate::H(0)).unwrap();
        let e = s.expectation(&CostTable::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        let mut s = StateVector::new(2).unwrap();
        s.apply_all(&[Gate::H(0), Gate::H(1)]).unwrap();
        let e = s.expectation(&CostTable::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert!((e - 2.5).abs() < 1e-12);
    }

    #[test]
    fn z_rotation_decomposition_reproduces_cost_phase() {
        let cost = CostTable::new(vec![0.3, -1.2, 2.0, 0.1, 0.0, 0.9, -0.4, 1.7]).unwrap();
        let gamma = 0.83;
        let mut direct = StateVector::new(3).unwrap();
        direct.apply_all(&[Gate::H(0), Gate::Ry(1, 0.3), Gate::H(2)]).unwrap();
        let mut decomposed = direct.clone();
        direct.apply_cost_phase(&cost, gamma).unwrap();
        for (mask, coef) in cost.pauli_z_coefficients().into_iter().enumerate() {
            decomposed.apply_gate(&Gate::ZRotation { mask, angle: 2.0 * gamma * coef }).unwrap();
        }
        // Identical up to the identity term, which is already included above.
        assert!(close(direct.amplitudes(), decomposed.amplitudes(), 1e-12));
    }

    fn arb_gate(n: usize) -> impl Strategy<Value = Gate> {
        let angle = -6.3f64..6.3;
        prop_oneof![
            (0..n).prop_map(Gate::H),
            (0..n, angle.clone()).prop_map(|(q, t)| Gate::Ry(q, t)),
            (0..n, angle).prop_map(|(q, t)| Gate::Rx(q, t)),
            (0..n, 1..n).prop_map(move |(c, d)| Gate::Cz { control: c, target: (c + d) % n }),
        ]
    }

    proptest! {
        #[test]
        fn norm_is_preserved(gates in proptest::collection::vec(arb_gate(4), 1..100)) {
            let s = run_circuit(4, &gates).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ry_round_trip(theta in -6.3f64..6.3, q in 0usize..3, prep in proptest::collection::vec(arb_gate(3), 0..10)) {
            let s0 = run_circuit(3, &prep).unwrap();
            let mut s = s0.clone();
            s.apply_gate(&Gate::Ry(q, theta)).unwrap();
            s.apply_gate(&Gate::Ry(q, -theta)).unwrap();
            prop_assert!(close(s.amplitudes(), s0.amplitudes(), 1e-12));
        }

        #[test]
        fn cost_phase_keeps_probabilities(gamma in -5.0f64..5.0, costs in proptest::collection::vec(-3.0f64..3.0, 8), prep in proptest::collection::vec(arb_gate(3), 0..10)) {
            let mut s = run_circuit(3, &prep).unwrap();
            let before = s.probabilities();
            s.apply_cost_phase(&CostTable::new(costs).unwrap(), gamma).unwrap();
            for (a, b) in s.probabilities().iter().zip(before) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
