//! k-input modular addition datasets.

use std::fmt::Write as _;

use crate::budget;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Tuples `(a_1, .., a_k)` over `Z_p^k` labelled with `(a_1 + .. + a_k) mod p`.
///
/// Inputs are stored row-major, `k` entries per point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModAddDataset {
    p: usize,
    k: usize,
    inputs: Vec<usize>,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

fn check_setup(p: usize, k: usize) -> Result<()> {
    budget::check_modulus(p)?;
    if k < 2 {
        return Err(Error::InvalidArity { k, min: 2, max: usize::MAX });
    }
    Ok(())
}

impl ModAddDataset {
    /// Every tuple of `Z_p^k` in lexicographic order (last coordinate fastest).
    pub fn generate_full(p: usize, k: usize) -> Result<Self> {
        check_setup(p, k)?;
        let n = budget::power(p, k);
        budget::check(n)?;
        let n = n as usize;
        let mut inputs = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        let mut tuple = vec![0usize; k];
        for _ in 0..n {
            inputs.extend_from_slice(&tuple);
            labels.push(tuple.iter().sum::<usize>() % p);
            for slot in tuple.iter_mut().rev() {
                *slot += 1;
                if *slot < p {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(Self { p, k, inputs, labels })
    }

    /// `n` tuples drawn uniformly with replacement.
    pub fn generate_sampled(p: usize, k: usize, n: usize, seed: u64) -> Result<Self> {
        check_setup(p, k)?;
        budget::check(n as u128)?;
        let mut rng = SplitMix64::derive(seed, 0x5A3);
        let mut inputs = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let start = inputs.len();
            for _ in 0..k {
                inputs.push(rng.below(p as u64) as usize);
            }
            labels.push(inputs[start..].iter().sum::<usize>() % p);
        }
        Ok(Self { p, k, inputs, labels })
    }

    /// Builds a dataset from explicit tuples, computing labels.
    pub fn from_tuples(p: usize, k: usize, tuples: &[Vec<usize>]) -> Result<Self> {
        check_setup(p, k)?;
        let mut inputs = Vec::with_capacity(tuples.len() * k);
        let mut labels = Vec::with_capacity(tuples.len());
        for t in tuples {
            if t.len() != k {
                return Err(Error::Shape(format!("tuple of length {} for k = {k}", t.len())));
            }
            for &a in t {
                if a >= p {
                    return Err(Error::OutOfRange { value: a, bound: p });
                }
            }
            inputs.extend_from_slice(t);
            labels.push(t.iter().sum::<usize>() % p);
        }
        Ok(Self { p, k, inputs, labels })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[usize] {
        &self.inputs[i * self.k..(i + 1) * self.k]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Flat row-major inputs, `k` per point.
    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], usize)> + '_ {
        self.inputs.chunks_exact(self.k).zip(self.labels.iter().copied())
    }

    /// Subset by point indices, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(idx.len() * self.k);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Self { p: self.p, k: self.k, inputs, labels }
    }

    /// Seeded partition into (train, test).
    ///
    /// `|train| = floor(fraction * n + 0.5)`. A SplitMix64 Fisher-Yates
    /// permutation picks the members; both halves keep the original order.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Self, Self)> {
        let f = spec.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidFraction(f));
        }
        if self.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let n = self.len();
        let n_train = ((f * n as f64) + 0.5).floor().min(n as f64) as usize;
        let mut perm: Vec<usize> = (0..n).collect();
        SplitMix64::derive(spec.seed, 0x5911).shuffle(&mut perm);
        let mut in_train = vec![false; n];
        for &i in &perm[..n_train] {
            in_train[i] = true;
        }
        let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
        Ok((self.select(&train), self.select(&test)))
    }

    /// CSV with header `a_1,...,a_k,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.k).map(|i| format!("a_{i}")).collect();
        writeln!(out, "{},label", header.join(",")).unwrap();
        for (a, y) in self.iter() {
            for v in a {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{y}").unwrap();
        }
        out
    }
}

/// Indicator vector of length `p` with a one at `a`.
pub fn one_hot(a: usize, p: usize) -> Result<Vec<f64>> {
    if a >= p {
        return Err(Error::OutOfRange { value: a, bound: p });
    }
    let mut v = vec![0.0; p];
    v[a] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_p3_k2() {
        let ds = ModAddDataset::generate_full(3, 2).unwrap();
        assert_eq!(ds.len(), 9);
        let i = ds.iter().position(|(a, _)| a == [2, 2]).unwrap();
        assert_eq!(ds.label(i), 1);
        assert_eq!(ds.input(0), &[0, 0]);
        assert_eq!(ds.input(1), &[0, 1]);
    }

    #[test]
    fn full_p5_k3() {
        let ds = ModAddDataset::generate_full(5, 3).unwrap();
        assert_eq!(ds.len(), 125);
        assert_eq!(ds.input(124), &[4, 4, 4]);
        assert_eq!(ds.label(124), 2);
    }

    #[test]
    fn full_p47_k4_cardinality() {
        let ds = ModAddDataset::generate_full(47, 4).unwrap();
        assert_eq!(ds.len(), 4_879_681);
        for i in [0, 1, 12345, 4_879_680] {
            assert_eq!(ds.label(i), ds.input(i).iter().sum::<usize>() % 47);
        }
    }

    #[test]
    fn rejects_bad_setups() {
        assert!(matches!(ModAddDataset::generate_full(4, 2), Err(Error::InvalidModulus(4))));
        assert!(matches!(ModAddDataset::generate_full(5, 1), Err(Error::InvalidArity { .. })));
        assert!(matches!(
            ModAddDataset::generate_full(97, 4),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn no_duplicates_in_full_mode() {
        let ds = ModAddDataset::generate_full(7, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (a, _) in ds.iter() {
            assert!(seen.insert(a.to_vec()));
        }
    }

    #[test]
    fn split_sizes_round_half_up() {
        let ds = ModAddDataset::generate_full(3, 2).unwrap();
        let (tr, te) = ds.split(&SplitSpec { train_fraction: 0.5, seed: 11 }).unwrap();
        assert_eq!(tr.len(), 5);
        assert_eq!(te.len(), 4);
        let (tr, te) = ds.split(&SplitSpec { train_fraction: 1.0, seed: 11 }).unwrap();
        assert_eq!(tr.len(), 9);
        assert!(te.is_empty());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = ModAddDataset::generate_full(3, 2).unwrap();
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(ds.split(&SplitSpec { train_fraction: f, seed: 0 }).is_err());
        }
    }

    #[test]
    fn one_hot_vectors() {
        assert_eq!(one_hot(0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot(2, 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(one_hot(3, 3).is_err());
    }

    #[test]
    fn csv_header() {
        let ds = ModAddDataset::generate_full(3, 2).unwrap();
        let csv = ds.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("a_1,a_2,label"));
        assert_eq!(lines.next(), Some("0,0,0"));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn sampled_labels_correct() {
        let ds = ModAddDataset::generate_sampled(11, 4, 500, 3).unwrap();
        assert_eq!(ds.len(), 500);
        for (a, y) in ds.iter() {
            assert_eq!(y, a.iter().sum::<usize>() % 11);
        }
    }

    proptest! {
        #[test]
        fn split_is_deterministic_partition(seed in any::<u64>(), frac in 0.01f64..=1.0) {
            let ds = ModAddDataset::generate_full(5, 2).unwrap();
            let spec = SplitSpec { train_fraction: frac, seed };
            let (a, b) = ds.split(&spec).unwrap();
            let (a2, b2) = ds.split(&spec).unwrap();
            prop_assert_eq!(&a, &a2);
            prop_assert_eq!(&b, &b2);
            prop_assert_eq!(a.len() + b.len(), ds.len());
            let mut all: Vec<Vec<usize>> = a.iter().chain(b.iter()).map(|(x, _)| x.to_vec()).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), ds.len());
        }

        #[test]
        fn one_hot_sums_to_one(p in 3usize..50, a in 0usize..50) {
            prop_assume!(a < p);
            let v = one_hot(a, p).unwrap();
            prop_assert_eq!(v.iter().sum::<f64>(), 1.0);
        }
    }
}
