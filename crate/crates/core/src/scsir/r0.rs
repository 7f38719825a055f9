use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to recovery rates before dividing by them.
pub const GAMMA_FLOOR: f64 = 1e-6;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const ROOT_MAX_ITERS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    /// Triangular (including diagonal) matrix: the largest diagonal modulus.
    Triangular,
    PowerIteration,
    /// Roots of the characteristic polynomial, used when power iteration stalls.
    CharacteristicPolynomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct R0Estimate {
    pub value: f64,
    pub method: RadiusMethod,
    /// At least one recovery rate was raised to [`GAMMA_FLOOR`].
    pub floored_gamma: bool,
    pub iterations: usize,
}

/// Reproduction number of one day: the spectral radius of
/// `diag(β/γ) · C`, with `contact` row-major `Q × Q` and `C[i][j]` the
/// contact intensity from region `j` into region `i`.
pub fn effective_r0(beta: &[f64], gamma: &[f64], contact: &[f64]) -> Result<R0Estimate> {
    let q = beta.len();
    if gamma.len() != q || contact.len() != q * q {
        return Err(Error::shape("effective_r0", &[q, q], &[gamma.len(), contact.len()]));
    }
    if q == 0 {
        return Err(Error::InvalidArgument("effective_r0 needs at least one region".into()));
    }
    let all = beta.iter().chain(gamma).chain(contact);
    if let Some(v) = all.copied().find(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("rate {v} is negative or non-finite")));
    }
    let mut floored = false;
    let ratio: Vec<f64> = beta
        .iter()
        .zip(gamma)
        .map(|(b, g)| {
            if *g < GAMMA_FLOOR {
                floored = true;
            }
            b / g.max(GAMMA_FLOOR)
        })
        .collect();
    let m: Vec<f64> = (0..q * q).map(|k| ratio[k / q] * contact[k]).collect();
    let mut est = spectral_radius(&m, q)?;
    est.floored_gamma = floored;
    Ok(est)
}

/// Spectral radius of a nonnegative row-major `q × q` matrix.
pub fn spectral_radius(matrix: &[f64], q: usize) -> Result<R0Estimate> {
    if matrix.len() != q * q || q == 0 {
        return Err(Error::shape("spectral_radius", &[q, q], &[matrix.len()]));
    }
    let estimate = |value, method, iterations| R0Estimate {
        value,
        method,
        floored_gamma: false,
        iterations,
    };
    if is_triangular(matrix, q) {
        let value = (0..q).map(|i| matrix[i * q + i].abs()).fold(0.0, f64::max);
        return Ok(estimate(value, RadiusMethod::Triangular, 0));
    }
    if let Some((value, iters)) = power_iteration(matrix, q) {
        return Ok(estimate(value, RadiusMethod::PowerIteration, iters));
    }
    let (value, iters) = characteristic_radius(matrix, q)?;
    Ok(estimate(value, RadiusMethod::CharacteristicPolynomial, iters))
}

fn is_triangular(m: &[f64], q: usize) -> bool {
    let upper = (0..q).all(|i| (0..i).all(|j| m[i * q + j] == 0.0));
    let lower = (0..q).all(|i| (i + 1..q).all(|j| m[i * q + j] == 0.0));
    upper || lower
}

fn mat_vec(m: &[f64], q: usize, x: &[f64]) -> Vec<f64> {
    (0..q)
        .map(|i| m[i * q..(i + 1) * q].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Power iteration from the all-ones vector. While every coordinate stays
/// positive the Collatz-Wielandt bounds `min (Mx)_i/x_i ≤ ρ ≤ max (Mx)_i/x_i`
/// bracket the answer; otherwise successive norm ratios must settle.
/// Returns `None` when neither criterion is met within the budget.
fn power_iteration(m: &[f64], q: usize) -> Option<(f64, usize)> {
    let mut x = vec![1.0 / q as f64; q];
    let mut previous = f64::NAN;
    for iter in 1..=POWER_MAX_ITERS {
        let y = mat_vec(m, q, &x);
        let norm: f64 = y.iter().sum();
        if norm == 0.0 {
            // Nilpotent on this vector; e.g. strictly triangular after permutation.
            return None;
        }
        if x.iter().all(|v| *v > 0.0) {
            let (lo, hi) = x.iter().zip(&y).fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| {
                let r = b / a;
                (lo.min(r), hi.max(r))
            });
            if hi - lo <= POWER_TOL * hi {
                return Some((0.5 * (lo + hi), iter));
            }
        } else if (norm - previous).abs() <= POWER_TOL * norm {
            return Some((norm, iter));
        }
        previous = norm;
        x = y.into_iter().map(|v| v / norm).collect();
    }
    None
}

/// Coefficients `[1, a_1, ..., a_q]` of `det(λI − M) = λ^q + a_1 λ^{q-1} + ...`
/// by the Faddeev-LeVerrier recursion.
fn characteristic_polynomial(m: &[f64], q: usize) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    let mut aux = vec![0.0; q * q];
    for k in 1..=q {
        // aux_k = M · aux_{k-1} + a_{k-1} I, with aux_0 = 0 and a_0 = 1.
        let mut next = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..q {
                next[i * q + j] = (0..q).map(|l| m[i * q + l] * aux[l * q + j]).sum();
            }
            next[i * q + i] += coeffs[k - 1];
        }
        aux = next;
        let trace: f64 = (0..q)
            .map(|i| (0..q).map(|l| m[i * q + l] * aux[l * q + i]).sum::<f64>())
            .sum();
        coeffs.push(-trace / k as f64);
    }
    coeffs
}

fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
}

/// Largest root modulus of the characteristic polynomial, all roots found
/// simultaneously by Durand-Kerner iteration.
fn characteristic_radius(m: &[f64], q: usize) -> Result<(f64, usize)> {
    let coeffs = characteristic_polynomial(m, q);
    // Cauchy bound on root moduli.
    let bound = 1.0 + coeffs[1..].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..q).map(|k| seed.powu(k as u32) * bound).collect();
    for iter in 1..=ROOT_MAX_ITERS {
        let mut moved = 0.0f64;
        for k in 0..q {
            let zk = roots[k];
            let denom = (0..q)
                .filter(|&j| j != k)
                .fold(Complex64::new(1.0, 0.0), |acc, j| acc * (zk - roots[j]));
            let step = horner(&coeffs, zk) / denom;
            if step.is_finite() {
                roots[k] = zk - step;
                moved = moved.max(step.norm());
            }
        }
        if moved <= 1e-14 * bound {
            let radius = roots.iter().map(|z| z.norm()).fold(0.0, f64::max);
            return Ok((radius, iter));
        }
    }
    Err(Error::InvalidArgument(
        "spectral radius: characteristic roots did not converge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_case() {
        let est = effective_r0(&[0.3], &[0.1], &[0.8]).unwrap();
        assert!((est.value - 0.3 * 0.8 / 0.1).abs() < 1e-12);
    }

    #[test]
    fn diagonal_contact_is_exact() {
        let est = effective_r0(&[0.3, 0.5, 0.2], &[0.1, 0.25, 0.05], &[0.5, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.7])
            .unwrap();
        assert_eq!(est.method, RadiusMethod::Triangular);
        assert_eq!(est.value, (0.2 / 0.05) * 0.7);
    }

    #[test]
    fn zero_gamma_is_floored() {
        let est = effective_r0(&[0.2], &[0.0], &[1.0]).unwrap();
        assert!(est.floored_gamma);
        assert!((est.value - 0.2 / GAMMA_FLOOR).abs() < 1e-6);
    }

    #[test]
    fn power_iteration_on_symmetric_two_by_two() {
        // Eigenvalues of [[2,1],[1,2]] are 3 and 1.
        let est = spectral_radius(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(est.method, RadiusMethod::PowerIteration);
        assert!((est.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn periodic_matrix_falls_back_to_characteristic_roots() {
        // Eigenvalues ±2; the iterate oscillates between two directions.
        let est = spectral_radius(&[0.0, 1.0, 4.0, 0.0], 2).unwrap();
        assert_eq!(est.method, RadiusMethod::CharacteristicPolynomial);
        assert!((est.value - 2.0).abs() < 1e-9, "{est:?}");
    }

    #[test]
    fn faddeev_leverrier_on_known_matrix() {
        // det(λI − [[1,2],[3,4]]) = λ² − 5λ − 2.
        let c = characteristic_polynomial(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(c, vec![1.0, -5.0, -2.0]);
    }

    #[test]
    fn rejects_negative_rates() {
        assert!(effective_r0(&[-0.1], &[0.1], &[1.0]).is_err());
        assert!(effective_r0(&[0.1], &[0.1], &[1.0, 0.0]).is_err());
    }
}
