//! Discrete Fourier transforms over `Z_p` and the spectrum metrics built on them.
//!
//! Conventions: `û(j) = Σ_a u(a) exp(-2πi j a / p)` (unnormalized forward),
//! inverse carries the `1/p`. Transforms are direct O(p²) sums; phases are
//! looked up by `(j * a) mod p` so every coefficient uses exactly the same
//! `p` roots of unity.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::budget;
use crate::error::{Error, Result};

/// `exp(sign * 2πi t / p)` for `t = 0..p`.
fn roots(p: usize, sign: f64) -> Vec<Complex64> {
    (0..p)
        .map(|t| Complex64::from_polar(1.0, sign * std::f64::consts::TAU * t as f64 / p as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub p: usize,
    pub coeffs: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    pub p: usize,
    /// Row-major `p × p`, entry `(j1, j2)` at `j1 * p + j2`.
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, j: i64) -> Complex64 {
        self.coeffs[j.rem_euclid(self.p as i64) as usize]
    }

    /// `|û(j)|²` for every bin.
    pub fn power(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm_sqr()).collect()
    }

    /// `P(ζ) = |û(ζ)|² + |û(-ζ)|²` for `ζ = 1..=(p-1)/2`; index 0 holds ζ = 1.
    pub fn frequency_power(&self) -> Vec<f64> {
        let p = self.p;
        (1..=(p - 1) / 2)
            .map(|z| self.coeffs[z].norm_sqr() + self.coeffs[p - z].norm_sqr())
            .collect()
    }
}

impl Spectrum2D {
    pub fn at(&self, j1: i64, j2: i64) -> Complex64 {
        let p = self.p as i64;
        self.coeffs[(j1.rem_euclid(p) * p + j2.rem_euclid(p)) as usize]
    }

    pub fn power(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm_sqr()).collect()
    }
}

pub fn dft1(u: &[f64], p: usize) -> Result<Spectrum> {
    if u.len() != p {
        return Err(Error::Shape(format!("dft1 expects length {p}, got {}", u.len())));
    }
    let tw = roots(p, -1.0);
    let coeffs = (0..p)
        .map(|j| {
            u.iter()
                .enumerate()
                .map(|(a, &x)| tw[(j * a) % p] * x)
                .sum()
        })
        .collect();
    Ok(Spectrum { p, coeffs })
}

/// Inverse transform; returns the real part (imaginary residue is dropped).
pub fn idft1(s: &Spectrum) -> Vec<f64> {
    idft1_complex(s).into_iter().map(|c| c.re).collect()
}

pub fn idft1_complex(s: &Spectrum) -> Vec<Complex64> {
    let p = s.p;
    let tw = roots(p, 1.0);
    (0..p)
        .map(|a| {
            let sum: Complex64 = s.coeffs.iter().enumerate().map(|(j, &c)| tw[(j * a) % p] * c).sum();
            sum / p as f64
        })
        .collect()
}

/// 2-D transform of a row-major `p × p` matrix.
pub fn dft2(m: &[f64], p: usize) -> Result<Spectrum2D> {
    if m.len() != p * p {
        return Err(Error::Shape(format!(
            "dft2 expects a {p}x{p} matrix ({} entries), got {}",
            p * p,
            m.len()
        )));
    }
    let tw = roots(p, -1.0);
    // Separable: transform rows, then columns.
    let mut rows = vec![Complex64::new(0.0, 0.0); p * p];
    for a in 0..p {
        for j2 in 0..p {
            rows[a * p + j2] = (0..p).map(|b| tw[(j2 * b) % p] * m[a * p + b]).sum();
        }
    }
    let mut coeffs = vec![Complex64::new(0.0, 0.0); p * p];
    for j1 in 0..p {
        for j2 in 0..p {
            coeffs[j1 * p + j2] = (0..p).map(|a| tw[(j1 * a) % p] * rows[a * p + j2]).sum();
        }
    }
    Ok(Spectrum2D { p, coeffs })
}

pub fn idft2(s: &Spectrum2D) -> Vec<f64> {
    let p = s.p;
    let tw = roots(p, 1.0);
    let mut rows = vec![Complex64::new(0.0, 0.0); p * p];
    for j1 in 0..p {
        for b in 0..p {
            rows[j1 * p + b] = (0..p).map(|j2| tw[(j2 * b) % p] * s.coeffs[j1 * p + j2]).sum();
        }
    }
    let scale = (p * p) as f64;
    let mut out = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            let v: Complex64 = (0..p).map(|j1| tw[(j1 * a) % p] * rows[j1 * p + b]).sum();
            out[a * p + b] = v.re / scale;
        }
    }
    out
}

/// Dominant frequency of a signal and its share of the non-DC power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPeak {
    /// ζ in `[1, (p-1)/2]`.
    pub frequency: usize,
    /// `max_ζ P(ζ) / Σ_ζ P(ζ)`, in `(0, 1]`.
    pub power: f64,
}

/// Relative width within which two frequency powers count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Non-DC power below this fraction of the total energy is treated as none.
const MASS_FLOOR: f64 = 1e-24;

/// Picks the largest entry of a per-frequency power vector (index 0 ↔ ζ = 1).
/// Ties (within [`TIE_TOLERANCE`]) go to the smaller frequency.
pub fn peak_of(freq_power: &[f64]) -> Result<FrequencyPeak> {
    let total: f64 = freq_power.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Empty("spectrum has no non-DC power"));
    }
    let mut best = 0;
    for (i, &v) in freq_power.iter().enumerate() {
        if v > freq_power[best] * (1.0 + TIE_TOLERANCE) {
            best = i;
        }
    }
    Ok(FrequencyPeak { frequency: best + 1, power: freq_power[best] / total })
}

/// Maximum normalized power of a length-`p` real signal, DC bin excluded.
pub fn max_normalized_power(u: &[f64], p: usize) -> Result<FrequencyPeak> {
    let s = dft1(u, p)?;
    let fp = s.frequency_power();
    check_mass(&fp, s.power().iter().sum())?;
    peak_of(&fp)
}

fn check_mass(freq_power: &[f64], energy: f64) -> Result<()> {
    let ac: f64 = freq_power.iter().sum();
    if !(ac > MASS_FLOOR * energy) {
        return Err(Error::Empty("spectrum has no non-DC power"));
    }
    Ok(())
}

/// Per-frequency power summed over several length-`p` signals
/// (e.g. all weight vectors of one neuron).
pub fn combined_frequency_power(signals: &[&[f64]], p: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; (p - 1) / 2];
    let mut energy = 0.0;
    for s in signals {
        let spec = dft1(s, p)?;
        energy += spec.power().iter().sum::<f64>();
        for (a, v) in acc.iter_mut().zip(spec.frequency_power()) {
            *a += v;
        }
    }
    // Flush numerically-zero AC content so callers see an empty spectrum.
    if acc.iter().sum::<f64>() <= MASS_FLOOR * energy {
        acc.iter_mut().for_each(|a| *a = 0.0);
    }
    Ok(acc)
}

/// CSV with header `freq,power,normalized_power` (ζ = 1..=(p-1)/2).
pub fn spectrum_csv(freq_power: &[f64]) -> String {
    let total: f64 = freq_power.iter().sum();
    let mut out = String::from("freq,power,normalized_power\n");
    for (i, &v) in freq_power.iter().enumerate() {
        let norm = if total > 0.0 { v / total } else { 0.0 };
        writeln!(out, "{},{:.17e},{:.17e}", i + 1, v, norm).unwrap();
    }
    out
}

/// Values of a function on `Z_p^{k+1}`, enumerated with the last coordinate
/// (the class `c`) fastest.
#[derive(Debug, Clone)]
pub struct NetworkGrid {
    p: usize,
    dims: usize,
    values: Vec<f64>,
}

impl NetworkGrid {
    /// Evaluates `f(a_1..a_k, c)` everywhere. Requires `p^{k+1}` within budget.
    pub fn evaluate<F>(p: usize, k: usize, f: F) -> Result<Self>
    where
        F: Fn(&[usize], usize) -> f64 + Sync,
    {
        let dims = k + 1;
        let total = budget::power(p, dims);
        budget::check(total)?;
        let block = budget::power(p, k) as usize;
        let mut values = vec![0.0; total as usize];
        // One chunk per input tuple; chunk index decodes to (a_1..a_k).
        values.par_chunks_mut(p).enumerate().for_each(|(idx, chunk)| {
            let mut a = vec![0usize; k];
            let mut rest = idx;
            for slot in a.iter_mut().rev() {
                *slot = rest % p;
                rest /= p;
            }
            for (c, out) in chunk.iter_mut().enumerate() {
                *out = f(&a, c);
            }
        });
        debug_assert_eq!(values.len(), block * p);
        Ok(Self { p, dims, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `f̂(j_1..j_{k+1}) = Σ f(a, c) exp(-2πi (Σ j_i a_i + j_{k+1} c) / p)`.
    /// Indices may be negative; they are reduced mod p.
    pub fn coefficient(&self, j: &[i64]) -> Result<Complex64> {
        if j.len() != self.dims {
            return Err(Error::Shape(format!("expected {} indices, got {}", self.dims, j.len())));
        }
        let p = self.p;
        let jr: Vec<usize> = j.iter().map(|&x| x.rem_euclid(p as i64) as usize).collect();
        let tw = roots(p, -1.0);
        // Partial sums per leading coordinate, reduced in fixed order.
        let chunk = self.values.len() / p;
        let partial: Vec<Complex64> = (0..p)
            .into_par_iter()
            .map(|a0| {
                let vals = &self.values[a0 * chunk..(a0 + 1) * chunk];
                let mut idx = vec![0usize; self.dims];
                idx[0] = a0;
                let mut sum = Complex64::new(0.0, 0.0);
                for &v in vals {
                    let phase = idx.iter().zip(&jr).map(|(a, b)| a * b).sum::<usize>() % p;
                    sum += tw[phase] * v;
                    for d in (1..self.dims).rev() {
                        idx[d] += 1;
                        if idx[d] < p {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                sum
            })
            .collect();
        Ok(partial.into_iter().sum())
    }
}

/// Single brute-force coefficient of the `(k+1)`-dimensional DFT of `f`.
pub fn network_dft<F>(f: F, p: usize, k: usize, j: &[i64]) -> Result<Complex64>
where
    F: Fn(&[usize], usize) -> f64 + Sync,
{
    NetworkGrid::evaluate(p, k, f)?.coefficient(j)
}
