//! Closed-form maximum-margin network for k-input modular addition.
//!
//! For each frequency ζ the network realises `cos_ζ(a_1 + .. + a_k - c)`:
//! the angle-sum expansion turns it into `2^k` signed products of `k + 1`
//! cos/sin factors, and the sum-to-product identity turns each product of
//! the `k` input factors into `2^{k-1}` k-th powers of signed sums. Every
//! resulting neuron is a single-frequency cosine neuron, so the network has
//! `2^{2k-1}` neurons per frequency and `2^{2k-1}(p-1)/2` in total.
//!
//! Summing over ζ = 1..(p-1)/2 gives `(p-1)/2` on the correct class and
//! `-1/2` on every wrong class (`Σ_{ζ=1}^{(p-1)/2} cos(2πζδ/p) = -1/2` for
//! δ ≢ 0), i.e. a margin of `p/2` at every point.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;

use crate::budget;
use crate::error::{Error, Result};
use crate::mlp::{l2k1_norm, MlpParams, NeuronParams};

pub const MIN_ARITY: usize = 2;
pub const MAX_ARITY: usize = 6;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn check_setup(p: usize, k: usize) -> Result<()> {
    budget::check_modulus(p)?;
    budget::check_arity(k, MIN_ARITY, MAX_ARITY)
}

/// Maximum normalized `L_{2,k+1}` margin,
/// `γ* = 2·k! / ((2k+2)^{(k+1)/2} · (p-1) · p^{(k-1)/2})`.
pub fn gamma_star(k: usize, p: usize) -> Result<f64> {
    budget::check_modulus(p)?;
    if k < 2 {
        return Err(Error::InvalidArity { k, min: 2, max: usize::MAX });
    }
    let (kf, pf) = (k as f64, p as f64);
    Ok(2.0 * factorial(k) / ((2.0 * kf + 2.0).powf((kf + 1.0) / 2.0) * (pf - 1.0) * pf.powf((kf - 1.0) / 2.0)))
}

/// Number of neurons in the constructed network.
pub fn neuron_count(p: usize, k: usize) -> usize {
    (1usize << (2 * k - 1)) * (p - 1) / 2
}

/// Analytic neuron `u_j(a) = β cos(θ_{u_j} + 2πζa/p)`, `w(c) = β cos(θ_w + 2πζc/p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineNeuronSpec {
    pub frequency: usize,
    pub input_phases: Vec<f64>,
    pub output_phase: f64,
    pub scale: f64,
}

/// Reduces an angle to `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI { r - TAU } else { r }
}

impl CosineNeuronSpec {
    /// `θ_{u_1} + .. + θ_{u_k} - θ_w`, wrapped to `(-π, π]`. Zero for
    /// margin-optimal neurons.
    pub fn phase_residual(&self) -> f64 {
        wrap_angle(self.input_phases.iter().sum::<f64>() - self.output_phase)
    }
}

/// `β` giving a cosine neuron unit `L2` norm: `sqrt(2 / ((k+1) p))`.
pub fn unit_scale(p: usize, k: usize) -> f64 {
    (2.0 / ((k + 1) as f64 * p as f64)).sqrt()
}

pub fn cosine_neuron(spec: &CosineNeuronSpec, p: usize, k: usize) -> Result<NeuronParams> {
    budget::check_modulus(p)?;
    if spec.input_phases.len() != k {
        return Err(Error::Shape(format!("{} input phases for k = {k}", spec.input_phases.len())));
    }
    let max = (p - 1) / 2;
    if spec.frequency < 1 || spec.frequency > max {
        return Err(Error::InvalidFrequency { zeta: spec.frequency, max });
    }
    let table = |phase: f64| -> Vec<f64> {
        (0..p)
            .map(|a| {
                // (ζ a) mod p keeps the argument small and exact.
                let t = ((spec.frequency * a) % p) as f64 / p as f64;
                spec.scale * (phase + TAU * t).cos()
            })
            .collect()
    };
    Ok(NeuronParams {
        u: spec.input_phases.iter().map(|&ph| table(ph)).collect(),
        w: table(spec.output_phase),
    })
}

/// One summand `coefficient · (Σ_j signs_j a_j)^k` of the sum-to-product identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedTerm {
    pub signs: Vec<i8>,
    /// `(-1)^{(k - Σ signs)/2}`, i.e. `-1` to the number of negative signs.
    pub coefficient: i8,
}

impl SignedTerm {
    pub fn evaluate(&self, a: &[f64]) -> f64 {
        let k = self.signs.len() as i32;
        let s: f64 = self.signs.iter().zip(a).map(|(&c, &x)| c as f64 * x).sum();
        self.coefficient as f64 * s.powi(k)
    }
}

/// All `2^k` terms with `Σ coefficient·(Σ c_j a_j)^k = 2^k · k! · Π a_j`.
/// Bit `j` of the enumeration index set means `c_j = -1`.
pub fn sum_to_product_terms(k: usize) -> Result<Vec<SignedTerm>> {
    budget::check_arity(k, 1, MAX_ARITY)?;
    Ok((0..1u32 << k)
        .map(|mask| {
            let signs: Vec<i8> = (0..k).map(|j| if mask >> j & 1 == 1 { -1 } else { 1 }).collect();
            let coefficient = if mask.count_ones() % 2 == 0 { 1 } else { -1 };
            SignedTerm { signs, coefficient }
        })
        .collect())
}

pub fn evaluate_sum_to_product(terms: &[SignedTerm], a: &[f64]) -> f64 {
    terms.iter().map(|t| t.evaluate(a)).sum()
}

/// One product in the angle-sum expansion of `cos(x_1 + .. + x_{k+1})`:
/// factor `i` is `sin x_i` when `sines[i]`, else `cos x_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrigTerm {
    pub sines: Vec<bool>,
    /// `-1` exactly when the number of sines is `2 mod 4`.
    pub sign: i8,
}

impl TrigTerm {
    pub fn sine_count(&self) -> usize {
        self.sines.iter().filter(|&&b| b).count()
    }

    pub fn evaluate(&self, angles: &[f64]) -> f64 {
        let prod: f64 = self
            .sines
            .iter()
            .zip(angles)
            .map(|(&s, &x)| if s { x.sin() } else { x.cos() })
            .product();
        self.sign as f64 * prod
    }
}

/// The `2^k` surviving terms of `cos(x_1 + .. + x_{k+1})` (even sine count).
pub fn cos_sum_expansion(k: usize) -> Result<Vec<TrigTerm>> {
    budget::check_arity(k, 1, MAX_ARITY)?;
    Ok((0..1u32 << (k + 1))
        .filter(|mask| mask.count_ones() % 2 == 0)
        .map(|mask| TrigTerm {
            sines: (0..=k).map(|i| mask >> i & 1 == 1).collect(),
            sign: if mask.count_ones() % 4 == 2 { -1 } else { 1 },
        })
        .collect())
}

pub fn evaluate_trig_terms(terms: &[TrigTerm], angles: &[f64]) -> f64 {
    terms.iter().map(|t| t.evaluate(angles)).sum()
}

/// The half of `{-1,+1}^k` used by the construction: `(c, -c)` contribute
/// identical neurons, so keep `Σc > 0`, breaking `Σc = 0` by `c_1 = +1`.
fn half_sign_patterns(k: usize) -> Vec<SignedTerm> {
    sum_to_product_terms(k)
        .expect("k already validated")
        .into_iter()
        .filter(|t| {
            let s: i32 = t.signs.iter().map(|&c| c as i32).sum();
            s > 0 || (s == 0 && t.signs[0] == 1)
        })
        .collect()
}

/// Neuron descriptions for the canonical construction, grouped by frequency,
/// then by trig term, then by sign pattern.
///
/// Phases are derived mechanically: a cos factor has phase 0, a sin factor
/// `-π/2` (the output factor is `sin(-x)`, phase `+π/2`), and each negation
/// adds `π`. The scalar `2·sign·coefficient / (2^k k!)` that turns the
/// `2^{k-1}` powers into one product is split evenly across the `k + 1`
/// tables: its sign becomes a `π` shift on `θ_w`, its magnitude sets
/// `β = (2 / (2^k k!))^{1/(k+1)}`. Equal amplitudes on every table keep each
/// neuron on the optimal single-neuron ray, which the `L_{2,k+1}` margin needs.
pub fn construction_specs(p: usize, k: usize) -> Result<Vec<CosineNeuronSpec>> {
    check_setup(p, k)?;
    budget::check(neuron_count(p, k) as u128 * p as u128 * (k as u128 + 1))?;
    let beta = (2.0 / (2f64.powi(k as i32) * factorial(k))).powf(1.0 / (k as f64 + 1.0));
    let trig = cos_sum_expansion(k)?;
    let signs = half_sign_patterns(k);
    let mut specs = Vec::with_capacity(neuron_count(p, k));
    for zeta in 1..=(p - 1) / 2 {
        for term in &trig {
            for pattern in &signs {
                let input_phases: Vec<f64> = (0..k)
                    .map(|j| {
                        let sin_shift = if term.sines[j] { -FRAC_PI_2 } else { 0.0 };
                        let neg_shift = if pattern.signs[j] < 0 { PI } else { 0.0 };
                        wrap_angle(sin_shift + neg_shift)
                    })
                    .collect();
                let out_sin = if term.sines[k] { FRAC_PI_2 } else { 0.0 };
                let negative = term.sign * pattern.coefficient < 0;
                let output_phase = wrap_angle(out_sin + if negative { PI } else { 0.0 });
                specs.push(CosineNeuronSpec { frequency: zeta, input_phases, output_phase, scale: beta });
            }
        }
    }
    Ok(specs)
}

/// Canonical network computing `Σ_ζ cos_ζ(a_1 + .. + a_k - c)` exactly.
pub fn construct_max_margin(p: usize, k: usize) -> Result<MlpParams> {
    let neurons = construction_specs(p, k)?
        .iter()
        .map(|s| cosine_neuron(s, p, k))
        .collect::<Result<Vec<_>>>()?;
    MlpParams::new(p, k, neurons)
}

/// Rescales every neuron by the same factor so that `‖θ‖_{2,k+1} = 1`.
pub fn normalize_network(params: &MlpParams) -> Result<MlpParams> {
    let norm = l2k1_norm(params);
    if norm == 0.0 {
        return Err(Error::ZeroNetwork);
    }
    Ok(params.scaled(1.0 / norm))
}

/// Expected output values of an indicator-computing network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorTarget {
    pub correct: f64,
    pub wrong: f64,
}

impl IndicatorTarget {
    /// What the canonical construction computes: `(p-1)/2` and `-1/2`.
    pub fn fourier_sum(p: usize) -> Self {
        Self { correct: (p as f64 - 1.0) / 2.0, wrong: -0.5 }
    }

    /// `(p-1)/2` on the correct class and exactly zero elsewhere.
    pub fn zero_floor(p: usize) -> Self {
        Self { correct: (p as f64 - 1.0) / 2.0, wrong: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorReport {
    pub target: IndicatorTarget,
    pub max_deviation: f64,
    /// `(a_1..a_k, c)` attaining the maximum deviation.
    pub worst_tuple: Vec<usize>,
    /// Largest spread between wrong-class outputs at a single input.
    pub wrong_class_spread: f64,
    pub evaluations: usize,
}

/// Exhaustive comparison of `f(a)[c]` with the target over all of `Z_p^{k+1}`.
pub fn verify_indicator(params: &MlpParams, target: IndicatorTarget) -> Result<IndicatorReport> {
    let (p, k) = (params.p(), params.k());
    budget::check(budget::power(p, k + 1))?;
    let n_inputs = budget::power(p, k) as usize;
    let per_input: Vec<(f64, usize, f64)> = (0..n_inputs)
        .into_par_iter()
        .map(|idx| {
            let a = decode(idx, p, k);
            let logits = params.logits_unchecked(&a);
            let y = a.iter().sum::<usize>() % p;
            let mut worst = (0.0f64, 0usize);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (c, &v) in logits.iter().enumerate() {
                let want = if c == y { target.correct } else { target.wrong };
                let dev = (v - want).abs();
                if dev > worst.0 {
                    worst = (dev, c);
                }
                if c != y {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            (worst.0, worst.1, hi - lo)
        })
        .collect();
    let mut best = (0.0f64, 0usize, 0usize);
    let mut spread = 0.0f64;
    for (idx, &(dev, c, s)) in per_input.iter().enumerate() {
        if dev > best.0 {
            best = (dev, idx, c);
        }
        spread = spread.max(s);
    }
    let mut worst_tuple = decode(best.1, p, k);
    worst_tuple.push(best.2);
    Ok(IndicatorReport {
        target,
        max_deviation: best.0,
        worst_tuple,
        wrong_class_spread: spread,
        evaluations: n_inputs * p,
    })
}

/// Lexicographic index → tuple (last coordinate fastest).
fn decode(mut idx: usize, p: usize, k: usize) -> Vec<usize> {
    let mut a = vec![0usize; k];
    for slot in a.iter_mut().rev() {
        *slot = idx % p;
        idx /= p;
    }
    a
}

/// Number of constructed neurons per frequency (index 0 ↔ ζ = 1).
pub fn frequency_histogram(specs: &[CosineNeuronSpec], p: usize) -> Vec<usize> {
    let mut h = vec![0usize; (p - 1) / 2];
    for s in specs {
        h[s.frequency - 1] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ModAddDataset;
    use crate::mlp::{dataset_margin_h, forward_mlp};
    use crate::rng::SplitMix64;

    // Oracle for network outputs: the cosine sum itself.
    fn cosine_sum(p: usize, a: &[usize], c: usize) -> f64 {
        let s = (a.iter().sum::<usize>() + p - c) % p;
        (1..=(p - 1) / 2).map(|z| (TAU * (z * s) as f64 / p as f64).cos()).sum()
    }

    #[test]
    fn gamma_star_values() {
        for p in [3, 5, 7, 11, 97] {
            let closed = 3.0 / (16.0 * p as f64 * (p as f64 - 1.0));
            assert!((gamma_star(3, p).unwrap() - closed).abs() < 1e-15 * closed);
        }
        assert!((gamma_star(3, 5).unwrap() - 0.009375).abs() < 1e-15);
        let k2 = 4.0 / (6.0 * 6f64.sqrt() * 4.0 * 5f64.sqrt());
        assert!((gamma_star(2, 5).unwrap() - k2).abs() < 1e-15);
        assert!((gamma_star(2, 5).unwrap() - 0.0304290).abs() < 1e-7);
        assert!(gamma_star(1, 5).is_err());
        assert!(gamma_star(3, 4).is_err());
    }

    #[test]
    fn cosine_neuron_tables() {
        let spec = CosineNeuronSpec { frequency: 1, input_phases: vec![0.0, 0.0], output_phase: 0.0, scale: 1.0 };
        assert!(matches!(cosine_neuron(&spec, 4, 2), Err(Error::InvalidModulus(4))));
        let n = cosine_neuron(&spec, 5, 2).unwrap();
        assert_eq!(n.u[0][0], 1.0);
        assert!((n.u[0][1] - 0.309017).abs() < 1e-6);
        let bad = CosineNeuronSpec { frequency: 3, ..spec.clone() };
        assert!(matches!(cosine_neuron(&bad, 5, 2), Err(Error::InvalidFrequency { .. })));

        for (p, k) in [(5, 2), (7, 3), (11, 4)] {
            let spec = CosineNeuronSpec {
                frequency: 2,
                input_phases: vec![0.3; k],
                output_phase: 0.3 * k as f64,
                scale: unit_scale(p, k),
            };
            let n = cosine_neuron(&spec, p, k).unwrap();
            assert!((n.l2_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_to_product_small_cases() {
        let t2 = sum_to_product_terms(2).unwrap();
        assert_eq!(t2.len(), 4);
        let parts: Vec<f64> = t2.iter().map(|t| t.evaluate(&[1.0, 1.0])).collect();
        assert_eq!(parts.iter().sum::<f64>(), 8.0);
        assert_eq!(evaluate_sum_to_product(&sum_to_product_terms(3).unwrap(), &[1.0, 1.0, 1.0]), 48.0);
        let t1 = sum_to_product_terms(1).unwrap();
        assert_eq!(evaluate_sum_to_product(&t1, &[0.37]), 2.0 * 0.37);
        assert!(sum_to_product_terms(0).is_err());
        assert!(sum_to_product_terms(7).is_err());
    }

    #[test]
    fn cos_sum_small_cases() {
        let t1 = cos_sum_expansion(1).unwrap();
        assert_eq!(t1.len(), 2);
        // cos(a - c) with x_2 = -c.
        let (a, c) = (0.4, 1.3);
        assert!((evaluate_trig_terms(&t1, &[a, -c]) - (a.cos() * c.cos() + a.sin() * c.sin())).abs() < 1e-15);
        let t3 = cos_sum_expansion(3).unwrap();
        assert_eq!(t3.len(), 8);
        for t in &t3 {
            assert_eq!(t.sine_count() % 2, 0);
            assert_eq!(t.sign == -1, t.sine_count() % 4 == 2);
        }
        // The eight products of the k = 3 expansion, as (sines, sign).
        let expected: Vec<(Vec<bool>, i8)> = vec![
            (vec![false, false, false, false], 1),
            (vec![true, true, false, false], -1),
            (vec![true, false, true, false], -1),
            (vec![false, true, true, false], -1),
            (vec![true, false, false, true], -1),
            (vec![false, true, false, true], -1),
            (vec![false, false, true, true], -1),
            (vec![true, true, true, true], 1),
        ];
        for (sines, sign) in expected {
            assert!(t3.iter().any(|t| t.sines == sines && t.sign == sign), "{sines:?}");
        }
    }

    #[test]
    fn neuron_counts_and_phase_constraint() {
        for (p, k) in [(5, 2), (3, 3), (7, 3), (5, 4)] {
            let specs = construction_specs(p, k).unwrap();
            assert_eq!(specs.len(), neuron_count(p, k));
            for count in frequency_histogram(&specs, p) {
                assert_eq!(count, 1 << (2 * k - 1));
            }
            for s in &specs {
                assert!(s.phase_residual().abs() < 1e-12, "{s:?}");
            }
        }
        assert_eq!(neuron_count(5, 3), 64);
        assert_eq!(neuron_count(5, 2), 16);
        assert_eq!(neuron_count(3, 3), 32);
        assert_eq!(frequency_histogram(&construction_specs(5, 3).unwrap(), 5), vec![32, 32]);
    }

    #[test]
    fn all_cos_term_phases_match_reference_table() {
        // k = 3, first trig term: (0,0,0,0), (0,0,π,π), (0,π,0,π), (π,0,0,π).
        let specs = construction_specs(5, 3).unwrap();
        let first: Vec<Vec<f64>> = specs[..4]
            .iter()
            .map(|s| {
                let mut v = s.input_phases.clone();
                v.push(s.output_phase);
                v
            })
            .collect();
        let want = [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, PI, PI], [0.0, PI, 0.0, PI], [PI, 0.0, 0.0, PI]];
        for w in want {
            assert!(
                first.iter().any(|f| f.iter().zip(&w).all(|(a, b)| wrap_angle(a - b).abs() < 1e-12)),
                "missing {w:?}"
            );
        }
    }

    #[test]
    fn each_term_group_realises_its_product() {
        // For every trig term, its 2^{k-1} neurons sum to sign · Π factors.
        let (p, k) = (7, 3);
        let specs = construction_specs(p, k).unwrap();
        let terms = cos_sum_expansion(k).unwrap();
        let group = 1 << (k - 1);
        let x = |v: usize| TAU * v as f64 / p as f64;
        for (ti, term) in terms.iter().enumerate() {
            let neurons: Vec<NeuronParams> =
                specs[ti * group..(ti + 1) * group].iter().map(|s| cosine_neuron(s, p, k).unwrap()).collect();
            for (a, c) in [([1, 2, 3], 4), ([0, 5, 6], 2), ([6, 6, 1], 0)] {
                let got: f64 =
                    neurons.iter().map(|n| n.preactivation(&a).powi(k as i32) * n.w[c]).sum();
                let angles = [x(a[0]), x(a[1]), x(a[2]), -x(c)];
                assert!((got - term.evaluate(&angles)).abs() < 1e-12, "term {ti}");
            }
        }
    }

    #[test]
    fn construction_outputs_cosine_sum() {
        for (p, k) in [(5, 2), (3, 3), (7, 2)] {
            let net = construct_max_margin(p, k).unwrap();
            let ds = ModAddDataset::generate_full(p, k).unwrap();
            for (a, _) in ds.iter() {
                let out = forward_mlp(&net, a).unwrap();
                for (c, v) in out.iter().enumerate() {
                    assert!((v - cosine_sum(p, a, c)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn logits_for_one_three_at_p5() {
        let net = construct_max_margin(5, 2).unwrap();
        let out = forward_mlp(&net, &[1, 3]).unwrap();
        assert!((out[4] - 2.0).abs() < 1e-9);
        for c in 0..4 {
            assert!((out[c] + 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn indicator_reports() {
        let net = construct_max_margin(7, 2).unwrap();
        let r = verify_indicator(&net, IndicatorTarget::fourier_sum(7)).unwrap();
        assert!(r.max_deviation < 1e-9);
        assert!(r.wrong_class_spread < 1e-9);
        assert_eq!(r.evaluations, 343);

        let strict = verify_indicator(&net, IndicatorTarget::zero_floor(7)).unwrap();
        assert!((strict.max_deviation - 0.5).abs() < 1e-9);

        let broken = net.without_neuron(0);
        let r = verify_indicator(&broken, IndicatorTarget::fourier_sum(7)).unwrap();
        assert!(r.max_deviation > 0.01);

        let zero = MlpParams::zeros(3, 2, 1);
        let r = verify_indicator(&zero, IndicatorTarget::fourier_sum(3)).unwrap();
        assert!((r.max_deviation - 1.0).abs() < 1e-15);
        let (a, c) = (&r.worst_tuple[..2], r.worst_tuple[2]);
        assert_eq!((a[0] + a[1]) % 3, c);
    }

    #[test]
    fn normalization() {
        let net = construct_max_margin(5, 3).unwrap();
        let unit = normalize_network(&net).unwrap();
        assert!((l2k1_norm(&unit) - 1.0).abs() < 1e-12);
        let again = normalize_network(&unit).unwrap();
        for (x, y) in unit.neurons().iter().zip(again.neurons()) {
            for (a, b) in x.w.iter().zip(&y.w) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let from_scaled = normalize_network(&net.scaled(3.7)).unwrap();
        for (x, y) in unit.neurons().iter().zip(from_scaled.neurons()) {
            for (a, b) in x.u[0].iter().zip(&y.u[0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(matches!(normalize_network(&MlpParams::zeros(5, 3, 2)), Err(Error::ZeroNetwork)));

        let ds = ModAddDataset::generate_full(5, 3).unwrap();
        let r = dataset_margin_h(&unit, &ds, true).unwrap();
        assert!((r.normalized_margin - 0.009375).abs() < 1e-9 * 0.009375);
        let per = r.per_point_margins.unwrap();
        assert!(per.iter().all(|m| (m - per[0]).abs() < 1e-12));
    }

    #[test]
    fn unit_cosine_neuron_attains_gamma_star() {
        use crate::mlp::neuron_weighted_objective;
        for (p, k, zeta) in [(5, 2, 1), (5, 2, 2), (5, 3, 1), (7, 3, 3)] {
            let spec = CosineNeuronSpec {
                frequency: zeta,
                input_phases: (0..k).map(|j| 0.2 * j as f64).collect(),
                output_phase: (0..k).map(|j| 0.2 * j as f64).sum(),
                scale: unit_scale(p, k),
            };
            let n = cosine_neuron(&spec, p, k).unwrap();
            let obj = neuron_weighted_objective(&n).unwrap();
            let g = gamma_star(k, p).unwrap();
            assert!((obj - g).abs() < 1e-9 * g, "p={p} k={k}: {obj} vs {g}");
        }
        assert!((gamma_star(3, 5).unwrap() - 3.0 / 320.0).abs() < 1e-16);
    }

    #[test]
    fn random_unit_neurons_do_not_beat_gamma_star() {
        use crate::mlp::neuron_weighted_objective;
        let (p, k) = (5, 2);
        let g = gamma_star(k, p).unwrap();
        let mut rng = SplitMix64::new(1);
        for _ in 0..500 {
            let mut n = NeuronParams {
                u: (0..k).map(|_| (0..p).map(|_| rng.normal()).collect()).collect(),
                w: (0..p).map(|_| rng.normal()).collect(),
            };
            n = n.scaled(1.0 / n.l2_norm());
            assert!(neuron_weighted_objective(&n).unwrap() <= g + 1e-12);
        }
    }

    #[test]
    fn eta_profile_of_cosine_neuron_is_cosine_in_delta() {
        use crate::mlp::eta_profile;
        let (p, k, zeta) = (7, 2, 3);
        let spec = CosineNeuronSpec { frequency: zeta, input_phases: vec![0.5, -0.2], output_phase: 0.9, scale: 1.0 };
        let prof = eta_profile(&cosine_neuron(&spec, p, k).unwrap()).unwrap();
        // Least-squares fit A cos(2πζδ/p) + B sin(2πζδ/p); residual must vanish.
        let basis = |d: usize| {
            let t = TAU * (zeta * d) as f64 / p as f64;
            (t.cos(), t.sin())
        };
        let (mut a, mut b) = (0.0, 0.0);
        for (d, v) in prof.iter().enumerate() {
            let (c, s) = basis(d);
            a += v * c * 2.0 / p as f64;
            b += v * s * 2.0 / p as f64;
        }
        for (d, v) in prof.iter().enumerate() {
            let (c, s) = basis(d);
            assert!((v - (a * c + b * s)).abs() < 1e-12);
        }
        assert!(a.abs() + b.abs() > 1e-3);
    }

    #[test]
    fn rejects_out_of_range_setups() {
        assert!(construct_max_margin(4, 2).is_err());
        assert!(construct_max_margin(5, 1).is_err());
        assert!(construct_max_margin(5, 7).is_err());
    }
}
