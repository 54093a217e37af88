//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use qnmarl_core::qaoa::{Ansatz, QaoaPolicy};
use qnmarl_core::quantum::{CostTable, Gate};

type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn single(g: &Gate) -> Option<(usize, [[Complex64; 2]; 2])> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Some(match *g {
        Gate::H(q) => (q, [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]]),
        Gate::Ry(q, t) => {
            let (co, si) = ((t / 2.0).cos(), (t / 2.0).sin());
            (q, [[c(co, 0.0), c(-si, 0.0)], [c(si, 0.0), c(co, 0.0)]])
        }
        Gate::Rx(q, t) => {
            let (co, si) = ((t / 2.0).cos(), (t / 2.0).sin());
            (q, [[c(co, 0.0), c(0.0, -si)], [c(0.0, -si), c(co, 0.0)]])
        }
        _ => return None,
    })
}

/// `I ⊗ … ⊗ U ⊗ … ⊗ I` with qubit 0 as the least significant factor, built
/// from Kronecker products.
fn embed(n: usize, q: usize, u: [[Complex64; 2]; 2]) -> CMat {
    let u = CMat::from_fn(2, 2, |r, k| u[r][k]);
    let mut m = CMat::identity(1, 1);
    for k in (0..n).rev() {
        let f = if k == q { u.clone() } else { CMat::identity(2, 2) };
        m = m.kronecker(&f);
    }
    m
}

/// Dense `2^n × 2^n` unitary of one gate.
pub fn gate_matrix(n: usize, g: &Gate) -> CMat {
    let dim = 1 << n;
    if let Some((q, u)) = single(g) {
        return embed(n, q, u);
    }
    match g {
        Gate::Cz { control, target } => CMat::from_diagonal(&DVector::from_fn(dim, |z, _| {
            if (z >> control) & 1 == 1 && (z >> target) & 1 == 1 {
                c(-1.0, 0.0)
            } else {
                c(1.0, 0.0)
            }
        })),
        Gate::CostPhase { cost, gamma } => {
            CMat::from_diagonal(&DVector::from_fn(dim, |z, _| Complex64::from_polar(1.0, -gamma * cost.values()[z])))
        }
        Gate::ZRotation { mask, angle } => CMat::from_diagonal(&DVector::from_fn(dim, |z, _| {
            let parity = if (z & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            Complex64::from_polar(1.0, -angle / 2.0 * parity)
        })),
        _ => unreachable!(),
    }
}

/// Final state of `gates` on `|0…0⟩` by dense matrix products.
pub fn dense_run(n: usize, gates: &[Gate]) -> Vec<Complex64> {
    let dim = 1 << n;
    let mut psi = DVector::from_fn(dim, |z, _| if z == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) });
    for g in gates {
        psi = gate_matrix(n, g) * psi;
    }
    psi.iter().copied().collect()
}

/// The planner state written out gate by gate from its definition:
/// `|+⟩` on every qubit, the input `RY` layer, then for each layer either
/// `exp(-iγC)` and `RX(2β)` on every qubit or an `RY` layer and a `CZ` chain.
pub fn dense_policy_state(policy: &QaoaPolicy, angles: &[f64], cost: &CostTable) -> Vec<Complex64> {
    let n = policy.n_qubits;
    let mut gates: Vec<Gate> = (0..n).map(Gate::H).collect();
    gates.extend((0..n).map(|q| Gate::Ry(q, angles[q])));
    let p = policy.params();
    for l in 0..policy.depth {
        match policy.ansatz {
            Ansatz::Qaoa => {
                gates.push(Gate::CostPhase { cost: cost.clone(), gamma: p[l] });
                gates.extend((0..n).map(|q| Gate::Rx(q, 2.0 * p[policy.depth + l])));
            }
            Ansatz::Pqc => {
                gates.extend((0..n).map(|q| Gate::Ry(q, p[l * n + q])));
                gates.extend((0..n - 1).map(|q| Gate::Cz { control: q, target: q + 1 }));
            }
        }
    }
    dense_run(n, &gates)
}

/// Central finite difference of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}
