//! Multi-head attention classifier for modular addition.
//!
//! A sequence is the `k` value tokens followed by an EQUALS token (index `p`).
//! Each layer runs `m` heads in parallel,
//! `head_h(X) = softmax((X W^Q_h)(X W^K_h)ᵀ / √d_h) · X W^V_h`,
//! concatenates them and projects with `W^P`. Logits are read at the final
//! position through an unembedding (or the value-token embeddings when tied).

use crate::autodiff::{Graph, Tensor, Var};
use crate::budget;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AttnConfig {
    pub p: usize,
    pub k: usize,
    /// Number of heads `m`.
    pub heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    /// Depth, 1 or 2.
    pub layers: usize,
    pub seed: u64,
    /// Add each block's output back onto its input.
    pub residual: bool,
    /// Standardise activations after each block.
    pub layer_norm: bool,
    /// Add learned positional embeddings.
    pub positional: bool,
    /// Read logits through the value-token embeddings instead of a separate
    /// unembedding.
    pub tied_unembed: bool,
}

impl AttnConfig {
    /// One layer, no residual, no layer norm, learned positions.
    pub fn new(p: usize, k: usize, heads: usize, d_model: usize, d_head: usize) -> Self {
        Self {
            p,
            k,
            heads,
            d_model,
            d_head,
            layers: 1,
            seed: 0,
            residual: false,
            layer_norm: false,
            positional: true,
            tied_unembed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        budget::check_modulus(self.p)?;
        budget::check_arity(self.k, 2, usize::MAX)?;
        for (name, v) in [("heads", self.heads), ("d_model", self.d_model), ("d_head", self.d_head)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(1..=2).contains(&self.layers) {
            return Err(Error::Config(format!("layers must be 1 or 2 (got {})", self.layers)));
        }
        Ok(())
    }

    /// Tokens per sequence: `k` values plus EQUALS.
    pub fn seq_len(&self) -> usize {
        self.k + 1
    }

    pub fn equals_token(&self) -> usize {
        self.p
    }

    pub fn parameter_count(&self) -> usize {
        let (p, k, m, d, dh) = (self.p, self.k, self.heads, self.d_model, self.d_head);
        let unembed = if self.tied_unembed { 0 } else { d * p };
        (p + 1) * d + (k + 1) * d + self.layers * (3 * m * d * dh + m * dh * d) + unembed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnHead {
    pub wk: Tensor,
    pub wq: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayer {
    pub heads: Vec<AttnHead>,
    /// `(m·d_h) × d` output projection.
    pub wp: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    config: AttnConfig,
    /// `(p+1) × d`; row `p` is EQUALS.
    pub embed: Tensor,
    /// `(k+1) × d`.
    pub pos: Tensor,
    pub layers: Vec<AttnLayer>,
    /// `d × p`, absent when tied.
    pub unembed: Option<Tensor>,
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut SplitMix64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::matrix(rows, cols, data).expect("sized by construction")
}

/// Seeded uniform initialisation in `[-1/√d, 1/√d]`.
pub fn init_transformer(cfg: &AttnConfig) -> Result<AttnParams> {
    cfg.validate()?;
    let (p, d, dh) = (cfg.p, cfg.d_model, cfg.d_head);
    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = SplitMix64::derive(cfg.seed, 0xA77E);
    let embed = uniform_matrix(p + 1, d, bound, &mut rng);
    let pos = uniform_matrix(cfg.seq_len(), d, bound, &mut rng);
    let layers = (0..cfg.layers)
        .map(|_| {
            let heads = (0..cfg.heads)
                .map(|_| AttnHead {
                    wk: uniform_matrix(d, dh, bound, &mut rng),
                    wq: uniform_matrix(d, dh, bound, &mut rng),
                    wv: uniform_matrix(d, dh, bound, &mut rng),
                })
                .collect();
            AttnLayer { heads, wp: uniform_matrix(cfg.heads * dh, d, bound, &mut rng) }
        })
        .collect();
    let unembed = (!cfg.tied_unembed).then(|| uniform_matrix(d, p, bound, &mut rng));
    Ok(AttnParams { config: cfg.clone(), embed, pos, layers, unembed })
}

impl AttnParams {
    pub fn config(&self) -> &AttnConfig {
        &self.config
    }

    /// Parameter tensors in canonical order, with their names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed), ("pos".to_string(), &self.pos)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{h}.wk"), &head.wk));
                out.push((format!("layer{l}.head{h}.wq"), &head.wq));
                out.push((format!("layer{l}.head{h}.wv"), &head.wv));
            }
            out.push((format!("layer{l}.wp"), &layer.wp));
        }
        if let Some(u) = &self.unembed {
            out.push(("unembed".to_string(), u));
        }
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Rebuilds parameters from tensors in [`AttnParams::named_tensors`] order.
    pub fn from_tensors(config: &AttnConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let template = AttnShapes::of(config);
        if tensors.len() != template.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", template.len(), tensors.len())));
        }
        for (i, (t, want)) in tensors.iter().zip(&template).enumerate() {
            if t.shape() != want.as_slice() {
                return Err(Error::Shape(format!("tensor {i}: expected {want:?}, got {:?}", t.shape())));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let embed = next();
        let pos = next();
        let layers = (0..config.layers)
            .map(|_| {
                let heads = (0..config.heads).map(|_| AttnHead { wk: next(), wq: next(), wv: next() }).collect();
                AttnLayer { heads, wp: next() }
            })
            .collect();
        let unembed = (!config.tied_unembed).then(&mut next);
        Ok(Self { config: config.clone(), embed, pos, layers, unembed })
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Logits for a flat row-major batch of `k`-tuples, recorded on `g` using
    /// `vars` (one per tensor, canonical order). Returns an `N × p` node.
    pub fn logits_graph(&self, g: &mut Graph, vars: &[Var], inputs: &[usize]) -> Result<Var> {
        let cfg = &self.config;
        let (p, k, t, dh) = (cfg.p, cfg.k, cfg.seq_len(), cfg.d_head);
        if inputs.is_empty() || inputs.len() % k != 0 {
            return Err(Error::Shape(format!("{} inputs is not a positive multiple of k={k}", inputs.len())));
        }
        if let Some(&bad) = inputs.iter().find(|&&a| a >= p) {
            return Err(Error::OutOfRange { value: bad, bound: p });
        }
        let n = inputs.len() / k;
        let mut tokens = Vec::with_capacity(n * t);
        for row in inputs.chunks_exact(k) {
            tokens.extend_from_slice(row);
            tokens.push(cfg.equals_token());
        }
        let (embed, pos) = (vars[0], vars[1]);
        let mut x = g.gather_rows(embed, &tokens)?;
        if cfg.positional {
            let positions: Vec<usize> = (0..n).flat_map(|_| 0..t).collect();
            let pe = g.gather_rows(pos, &positions)?;
            x = g.add(x, pe)?;
        }
        let mut cursor = 2;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let last: Vec<usize> = (0..n).map(|i| i * t + t - 1).collect();
        for layer in 0..cfg.layers {
            // Only the final position feeds the logits, so the last layer
            // computes queries there alone.
            let final_layer = layer + 1 == cfg.layers;
            let (xq, tq) = if final_layer { (g.gather_rows(x, &last)?, 1) } else { (x, t) };
            let mut outs = Vec::with_capacity(cfg.heads);
            for _ in 0..cfg.heads {
                let (wk, wq, wv) = (vars[cursor], vars[cursor + 1], vars[cursor + 2]);
                cursor += 3;
                let kk = g.matmul(x, wk)?;
                let q = g.matmul(xq, wq)?;
                let v = g.matmul(x, wv)?;
                let kk = g.reshape(kk, &[n, t, dh])?;
                let q = g.reshape(q, &[n, tq, dh])?;
                let v = g.reshape(v, &[n, t, dh])?;
                let scores = g.batch_matmul(q, kk, true)?;
                let scores = g.scale(scores, inv_sqrt);
                let att = g.softmax_rows(scores);
                let o = g.batch_matmul(att, v, false)?;
                outs.push(g.reshape(o, &[n * tq, dh])?);
            }
            let wp = vars[cursor];
            cursor += 1;
            let cat = g.concat_cols(&outs)?;
            let y = g.matmul(cat, wp)?;
            x = if cfg.residual { g.add(xq, y)? } else { y };
            if cfg.layer_norm {
                x = g.layer_norm_rows(x, LAYER_NORM_EPS);
            }
        }
        let h = x;
        let readout = if cfg.tied_unembed {
            let values: Vec<usize> = (0..p).collect();
            let e = g.gather_rows(embed, &values)?;
            g.transpose(e)?
        } else {
            vars[cursor]
        };
        g.matmul(h, readout)
    }

    /// Logits for a batch of tuples (flat, row-major), one row per tuple.
    pub fn logits_batch(&self, inputs: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.constant(t)).collect();
        let out = self.logits_graph(&mut g, &vars, inputs)?;
        Ok(g.value(out).data().chunks(self.config.p).map(<[f64]>::to_vec).collect())
    }

    fn head(&self, head: usize, layer: usize) -> Result<&AttnHead> {
        let l = self.layers.get(layer).ok_or(Error::OutOfRange { value: layer, bound: self.layers.len() })?;
        l.heads.get(head).ok_or(Error::OutOfRange { value: head, bound: l.heads.len() })
    }
}

/// Expected tensor shapes in canonical order.
struct AttnShapes;

impl AttnShapes {
    fn of(cfg: &AttnConfig) -> Vec<Vec<usize>> {
        let (d, dh) = (cfg.d_model, cfg.d_head);
        let mut out = vec![vec![cfg.p + 1, d], vec![cfg.seq_len(), d]];
        for _ in 0..cfg.layers {
            for _ in 0..cfg.heads {
                out.extend([vec![d, dh], vec![d, dh], vec![d, dh]]);
            }
            out.push(vec![cfg.heads * dh, d]);
        }
        if !cfg.tied_unembed {
            out.push(vec![d, cfg.p]);
        }
        out
    }
}

/// Logits for one tuple.
pub fn forward_transformer(params: &AttnParams, a: &[usize]) -> Result<Vec<f64>> {
    if a.len() != params.config.k {
        return Err(Error::Shape(format!("expected {} inputs, got {}", params.config.k, a.len())));
    }
    Ok(params.logits_batch(a)?.remove(0))
}

fn matmul_plain(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let x = a[i * k + l];
            for j in 0..m {
                out[i * m + j] += x * b[l * m + j];
            }
        }
    }
    out
}

/// `W^{KQ} = W^K W^{Q⊤}` for one head, `d × d`.
pub fn attention_matrix(params: &AttnParams, head: usize, layer: usize) -> Result<Tensor> {
    let h = params.head(head, layer)?;
    let (d, dh) = h.wk.dims2()?;
    let mut qt = vec![0.0; dh * d];
    for i in 0..d {
        for j in 0..dh {
            qt[j * d + i] = h.wq.at2(i, j);
        }
    }
    Tensor::matrix(d, d, matmul_plain(h.wk.data(), &qt, d, dh, d))
}

/// `Ẽ W^{KQ} Ẽᵀ`, `p × p`, where `Ẽ` holds the value-token embeddings.
pub fn token_space_attention(params: &AttnParams, head: usize, layer: usize) -> Result<Tensor> {
    let kq = attention_matrix(params, head, layer)?;
    let (p, d) = (params.config.p, params.config.d_model);
    let e = &params.embed.data()[..p * d];
    let ekq = matmul_plain(e, kq.data(), p, d, d);
    let mut et = vec![0.0; d * p];
    for i in 0..p {
        for j in 0..d {
            et[j * p + i] = e[i * d + j];
        }
    }
    Tensor::matrix(p, p, matmul_plain(&ekq, &et, p, d, p))
}

/// `row,col,value` CSV of a matrix.
pub fn matrix_csv(m: &Tensor) -> Result<String> {
    let (r, c) = m.dims2()?;
    let mut out = String::from("row,col,value\n");
    for i in 0..r {
        for j in 0..c {
            out.push_str(&format!("{i},{j},{:.17e}\n", m.at2(i, j)));
        }
    }
    Ok(out)
}
