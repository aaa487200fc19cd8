//! One-hidden-layer network with activation `x^k` and its margin quantities.
//!
//! `f(θ, a)[c] = Σ_i (u_{i,1}(a_1) + .. + u_{i,k}(a_k))^k · w_i(c)`, where each
//! `u_{i,j}` and `w_i` is a length-`p` table (equivalently a linear map on
//! one-hot inputs). The network is homogeneous of degree `k + 1`.

use rayon::prelude::*;

use crate::budget;
use crate::dataset::ModAddDataset;
use crate::error::{Error, Result};

/// Largest arity accepted by enumeration-based routines.
pub const MAX_ENUM_ARITY: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams {
    /// `k` input tables, each of length `p`.
    pub u: Vec<Vec<f64>>,
    /// Output table of length `p`.
    pub w: Vec<f64>,
}

impl NeuronParams {
    pub fn zeros(p: usize, k: usize) -> Self {
        Self { u: vec![vec![0.0; p]; k], w: vec![0.0; p] }
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    pub fn k(&self) -> usize {
        self.u.len()
    }

    /// `‖θ_i‖_2` over all `k + 1` tables.
    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self.u.iter().chain(std::iter::once(&self.w)).flatten().map(|x| x * x).sum();
        sq.sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            u: self.u.iter().map(|v| v.iter().map(|x| x * alpha).collect()).collect(),
            w: self.w.iter().map(|x| x * alpha).collect(),
        }
    }

    /// Pre-activation `u_1(a_1) + .. + u_k(a_k)`.
    #[inline]
    pub fn preactivation(&self, a: &[usize]) -> f64 {
        self.u.iter().zip(a).map(|(u, &x)| u[x]).sum()
    }

    /// All `k + 1` tables, inputs first.
    pub fn tables(&self) -> Vec<&[f64]> {
        self.u.iter().map(|v| v.as_slice()).chain(std::iter::once(self.w.as_slice())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    p: usize,
    k: usize,
    neurons: Vec<NeuronParams>,
}

impl MlpParams {
    pub fn new(p: usize, k: usize, neurons: Vec<NeuronParams>) -> Result<Self> {
        for (i, n) in neurons.iter().enumerate() {
            if n.u.len() != k || n.w.len() != p || n.u.iter().any(|v| v.len() != p) {
                return Err(Error::Shape(format!("neuron {i} does not have {} tables of length {p}", k + 1)));
            }
        }
        Ok(Self { p, k, neurons })
    }

    pub fn zeros(p: usize, k: usize, m: usize) -> Self {
        Self { p, k, neurons: vec![NeuronParams::zeros(p, k); m] }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.neurons.len()
    }

    pub fn neurons(&self) -> &[NeuronParams] {
        &self.neurons
    }

    pub fn neurons_mut(&mut self) -> &mut [NeuronParams] {
        &mut self.neurons
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { p: self.p, k: self.k, neurons: self.neurons.iter().map(|n| n.scaled(alpha)).collect() }
    }

    /// Network with neuron `i` removed.
    pub fn without_neuron(&self, i: usize) -> Self {
        let mut neurons = self.neurons.clone();
        neurons.remove(i);
        Self { p: self.p, k: self.k, neurons }
    }

    /// Logits without input validation; `a` must have length `k` and entries `< p`.
    pub fn logits_unchecked(&self, a: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for n in &self.neurons {
            let act = n.preactivation(a).powi(self.k as i32);
            if act != 0.0 {
                for (o, w) in out.iter_mut().zip(&n.w) {
                    *o += act * w;
                }
            }
        }
        out
    }

    fn check_input(&self, a: &[usize]) -> Result<()> {
        if a.len() != self.k {
            return Err(Error::Shape(format!("expected {} inputs, got {}", self.k, a.len())));
        }
        if let Some(&bad) = a.iter().find(|&&x| x >= self.p) {
            return Err(Error::OutOfRange { value: bad, bound: self.p });
        }
        Ok(())
    }
}

pub fn forward_mlp(params: &MlpParams, a: &[usize]) -> Result<Vec<f64>> {
    params.check_input(a)?;
    Ok(params.logits_unchecked(a))
}

/// `‖θ‖_{2,k+1} = (Σ_i ‖θ_i‖_2^{k+1})^{1/(k+1)}`.
pub fn l2k1_norm(params: &MlpParams) -> f64 {
    let e = (params.k + 1) as f64;
    let s: f64 = params.neurons.iter().map(|n| n.l2_norm().powf(e)).sum();
    if s == 0.0 { 0.0 } else { s.powf(1.0 / e) }
}

fn margin_from_logits(logits: &[f64], y: usize) -> f64 {
    let wrong = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[y] - wrong
}

/// `g(θ, a, y) = f[y] - max_{y' ≠ y} f[y']`.
pub fn margin_g(params: &MlpParams, a: &[usize], y: usize) -> Result<f64> {
    let logits = forward_mlp(params, a)?;
    if y >= params.p {
        return Err(Error::OutOfRange { value: y, bound: params.p });
    }
    Ok(margin_from_logits(&logits, y))
}

/// Weighting of wrong classes in the class-weighted margin. Only the uniform
/// weighting `1/(p-1)` is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassWeighting {
    #[default]
    Uniform,
}

impl ClassWeighting {
    pub fn weight(&self, p: usize) -> f64 {
        match self {
            ClassWeighting::Uniform => 1.0 / (p as f64 - 1.0),
        }
    }
}

/// `g'(θ, a, y) = f[y] - Σ_{y' ≠ y} τ[y'] f[y']`.
pub fn class_weighted_margin_gprime(
    params: &MlpParams,
    a: &[usize],
    y: usize,
    tau: ClassWeighting,
) -> Result<f64> {
    let logits = forward_mlp(params, a)?;
    if y >= params.p {
        return Err(Error::OutOfRange { value: y, bound: params.p });
    }
    let w = tau.weight(params.p);
    let wrong: f64 = logits.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, v)| v * w).sum();
    Ok(logits[y] - wrong)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    /// `h(θ) = min over the dataset of g`.
    pub min_margin: f64,
    pub per_point_margins: Option<Vec<f64>>,
    /// `‖θ‖_{2,k+1}`.
    pub norm: f64,
    /// `min_margin / norm^{k+1}` (0 for the zero network).
    pub normalized_margin: f64,
}

pub fn dataset_margin_h(params: &MlpParams, ds: &ModAddDataset, keep_per_point: bool) -> Result<MarginReport> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if ds.p() != params.p || ds.k() != params.k {
        return Err(Error::Shape(format!(
            "dataset (p={}, k={}) does not match network (p={}, k={})",
            ds.p(),
            ds.k(),
            params.p,
            params.k
        )));
    }
    let margins: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| margin_from_logits(&params.logits_unchecked(ds.input(i)), ds.label(i)))
        .collect();
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let norm = l2k1_norm(params);
    let normalized_margin = if norm > 0.0 { min_margin / norm.powi(params.k as i32 + 1) } else { 0.0 };
    Ok(MarginReport {
        min_margin,
        per_point_margins: keep_per_point.then_some(margins),
        norm,
        normalized_margin,
    })
}

fn check_enumerable(n: &NeuronParams) -> Result<()> {
    let (p, k) = (n.p(), n.k());
    if n.u.iter().any(|v| v.len() != p) {
        return Err(Error::Shape("neuron tables differ in length".into()));
    }
    budget::check_arity(k, 1, MAX_ENUM_ARITY)?;
    budget::check(budget::power(p, k))
}

/// `η(δ)` for every `δ ∈ Z_p`, by exact enumeration of `Z_p^k`.
///
/// `η(δ) = E_a[(u_1(a_1) + .. + u_k(a_k))^k · w(a_1 + .. + a_k - δ)]`.
pub fn eta_profile(n: &NeuronParams) -> Result<Vec<f64>> {
    check_enumerable(n)?;
    let (p, k) = (n.p(), n.k());
    let total = budget::power(p, k) as usize;
    let mut acc = vec![0.0; p];
    let mut a = vec![0usize; k];
    for _ in 0..total {
        let act = n.preactivation(&a).powi(k as i32);
        let s = a.iter().sum::<usize>() % p;
        for (delta, slot) in acc.iter_mut().enumerate() {
            *slot += act * n.w[(s + p - delta) % p];
        }
        for slot in a.iter_mut().rev() {
            *slot += 1;
            if *slot < p {
                break;
            }
            *slot = 0;
        }
    }
    Ok(acc.into_iter().map(|v| v / total as f64).collect())
}

pub fn single_neuron_eta(n: &NeuronParams, delta: usize) -> Result<f64> {
    if delta >= n.p() {
        return Err(Error::OutOfRange { value: delta, bound: n.p() });
    }
    Ok(eta_profile(n)?[delta])
}

/// Class-weighted single-neuron objective `η(0) - mean_{δ≠0} η(δ)`.
pub fn neuron_weighted_objective(n: &NeuronParams) -> Result<f64> {
    let eta = eta_profile(n)?;
    let p = eta.len() as f64;
    let rest: f64 = eta[1..].iter().sum();
    Ok(eta[0] - rest / (p - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn delta(p: usize, at: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; p];
        v[at] = scale;
        v
    }

    fn random_params(p: usize, k: usize, m: usize, seed: u64) -> MlpParams {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let mut mk = || (0..p).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>();
        let neurons = (0..m)
            .map(|_| NeuronParams { u: (0..k).map(|_| mk()).collect(), w: mk() })
            .collect();
        MlpParams::new(p, k, neurons).unwrap()
    }

    #[test]
    fn zero_network() {
        let z = MlpParams::zeros(5, 2, 4);
        assert_eq!(forward_mlp(&z, &[1, 3]).unwrap(), vec![0.0; 5]);
        assert_eq!(l2k1_norm(&z), 0.0);
        assert_eq!(margin_g(&z, &[1, 3], 4).unwrap(), 0.0);
        assert_eq!(class_weighted_margin_gprime(&z, &[1, 3], 4, ClassWeighting::Uniform).unwrap(), 0.0);
        let ds = ModAddDataset::generate_full(5, 2).unwrap();
        let r = dataset_margin_h(&z, &ds, false).unwrap();
        assert_eq!(r.min_margin, 0.0);
        assert_eq!(r.normalized_margin, 0.0);
    }

    #[test]
    fn single_neuron_arithmetic() {
        let n = NeuronParams { u: vec![delta(5, 0, 2.0), delta(5, 0, 3.0)], w: delta(5, 1, 1.0) };
        let net = MlpParams::new(5, 2, vec![n]).unwrap();
        let out = forward_mlp(&net, &[0, 0]).unwrap();
        assert_eq!(out[1], 25.0);
        assert_eq!(out.iter().sum::<f64>(), 25.0);
    }

    #[test]
    fn norm_of_three_unit_entries() {
        let n = NeuronParams { u: vec![delta(5, 1, 1.0), delta(5, 2, 1.0)], w: delta(5, 3, 1.0) };
        let net = MlpParams::new(5, 2, vec![n]).unwrap();
        assert!((l2k1_norm(&net) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn margins_from_explicit_outputs() {
        // Output table w makes f = act * w; with act = 1 the logits are w.
        let n = NeuronParams { u: vec![vec![1.0; 5], vec![0.0; 5]], w: vec![1.0, 3.0, 0.0, 0.0, 0.0] };
        let net = MlpParams::new(5, 2, vec![n]).unwrap();
        assert_eq!(margin_g(&net, &[0, 0], 0).unwrap(), -2.0);

        let n = NeuronParams { u: vec![vec![1.0; 5], vec![0.0; 5]], w: vec![4.0, 1.0, 1.0, 1.0, 1.0] };
        let net = MlpParams::new(5, 2, vec![n]).unwrap();
        let gp = class_weighted_margin_gprime(&net, &[0, 0], 0, ClassWeighting::Uniform).unwrap();
        assert!((gp - 3.0).abs() < 1e-15);
    }

    #[test]
    fn arity_and_range_errors() {
        let z = MlpParams::zeros(5, 2, 1);
        assert!(forward_mlp(&z, &[1]).is_err());
        assert!(forward_mlp(&z, &[1, 5]).is_err());
        assert!(MlpParams::new(5, 2, vec![NeuronParams::zeros(5, 3)]).is_err());
        let ds = ModAddDataset::generate_full(3, 2).unwrap();
        assert!(dataset_margin_h(&z, &ds, false).is_err());
    }

    #[test]
    fn eta_of_zero_neuron() {
        let n = NeuronParams::zeros(5, 2);
        assert_eq!(eta_profile(&n).unwrap(), vec![0.0; 5]);
        assert_eq!(neuron_weighted_objective(&n).unwrap(), 0.0);
        assert!(eta_profile(&NeuronParams::zeros(3, 7)).is_err());
    }

    #[test]
    fn eta_matches_naive_definition() {
        // Oracle: nested loops straight from the definition, k = 2.
        let net = random_params(5, 2, 1, 9);
        let n = &net.neurons()[0];
        let prof = eta_profile(n).unwrap();
        for d in 0..5 {
            let mut s = 0.0;
            for a1 in 0..5 {
                for a2 in 0..5 {
                    s += (n.u[0][a1] + n.u[1][a2]).powi(2) * n.w[(a1 + a2 + 10 - d) % 5];
                }
            }
            assert!((prof[d] - s / 25.0).abs() < 1e-13);
            assert!((single_neuron_eta(n, d).unwrap() - s / 25.0).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn homogeneity_and_margin_relations(seed in any::<u64>(), alpha in 0.1f64..3.0) {
            let (p, k) = (5, 3);
            let net = random_params(p, k, 3, seed);
            let scaled = net.scaled(alpha);
            let factor = alpha.powi(k as i32 + 1);
            let ds = ModAddDataset::generate_full(p, k).unwrap();
            for (a, y) in ds.iter().step_by(7) {
                let f = forward_mlp(&net, a).unwrap();
                let fs = forward_mlp(&scaled, a).unwrap();
                // Vector-wise relative error: single logits may cancel to ~0.
                let scale = f.iter().map(|x| (factor * x).abs()).fold(1e-300, f64::max);
                for (x, y) in f.iter().zip(&fs) {
                    prop_assert!((y - factor * x).abs() <= 1e-12 * scale);
                }
                let g = margin_g(&net, a, y).unwrap();
                let gp = class_weighted_margin_gprime(&net, a, y, ClassWeighting::Uniform).unwrap();
                prop_assert!(g <= gp + 1e-12);
            }
            prop_assert!((l2k1_norm(&scaled) - alpha * l2k1_norm(&net)).abs() < 1e-12 * alpha * l2k1_norm(&net));
            let r = dataset_margin_h(&net, &ds, false).unwrap();
            let rs = dataset_margin_h(&scaled, &ds, false).unwrap();
            prop_assert!((rs.min_margin - factor * r.min_margin).abs() <= 1e-10 * (factor * r.min_margin).abs().max(1e-12));
            prop_assert!((rs.normalized_margin - r.normalized_margin).abs() <= 1e-10 * r.normalized_margin.abs().max(1e-12));
        }

        #[test]
        fn objective_scales_with_degree(seed in any::<u64>(), alpha in 0.1f64..3.0) {
            let net = random_params(5, 2, 1, seed);
            let n = &net.neurons()[0];
            let o = neuron_weighted_objective(n).unwrap();
            let os = neuron_weighted_objective(&n.scaled(alpha)).unwrap();
            prop_assert!((os - alpha.powi(3) * o).abs() <= 1e-12 * (alpha.powi(3) * o).abs().max(1e-12));
        }
    }
}
