//! The batched tape forward against a direct per-sequence evaluation written
//! with plain loops over every position.

use fourier_circuits::transformer::{forward_transformer, init_transformer, AttnConfig, AttnParams};

fn mat_row(m: &fourier_circuits::autodiff::Tensor, r: usize) -> Vec<f64> {
    let (_, c) = m.dims2().unwrap();
    m.data()[r * c..(r + 1) * c].to_vec()
}

fn vec_mat(x: &[f64], m: &fourier_circuits::autodiff::Tensor) -> Vec<f64> {
    let (r, c) = m.dims2().unwrap();
    (0..c).map(|j| (0..r).map(|i| x[i] * m.at2(i, j)).sum()).collect()
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    x.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
}

fn reference(params: &AttnParams, a: &[usize]) -> Vec<f64> {
    let cfg = params.config();
    let mut tokens = a.to_vec();
    tokens.push(cfg.p);
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let e = mat_row(&params.embed, tok);
            if cfg.positional {
                e.iter().zip(mat_row(&params.pos, t)).map(|(x, y)| x + y).collect()
            } else {
                e
            }
        })
        .collect();
    for layer in &params.layers {
        let mut next = Vec::new();
        for q_pos in 0..xs.len() {
            let mut cat = Vec::new();
            for h in &layer.heads {
                let q = vec_mat(&xs[q_pos], &h.wq);
                let scores: Vec<f64> = xs
                    .iter()
                    .map(|x| {
                        let k = vec_mat(x, &h.wk);
                        q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (cfg.d_head as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                let mut o = vec![0.0; cfg.d_head];
                for (x, s) in xs.iter().zip(&scores) {
                    for (oi, vi) in o.iter_mut().zip(vec_mat(x, &h.wv)) {
                        *oi += s.exp() / z * vi;
                    }
                }
                cat.extend(o);
            }
            let mut y = vec_mat(&cat, &layer.wp);
            if cfg.residual {
                y.iter_mut().zip(&xs[q_pos]).for_each(|(a, b)| *a += b);
            }
            if cfg.layer_norm {
                y = layer_norm(&y);
            }
            next.push(y);
        }
        xs = next;
    }
    let last = xs.last().unwrap();
    match &params.unembed {
        Some(u) => vec_mat(last, u),
        None => (0..cfg.p).map(|c| mat_row(&params.embed, c).iter().zip(last).map(|(a, b)| a * b).sum()).collect(),
    }
}

#[test]
fn batched_forward_matches_reference() {
    let base = AttnConfig::new(7, 3, 3, 5, 2);
    let variants = [
        base.clone(),
        AttnConfig { layers: 2, residual: true, ..base.clone() },
        AttnConfig { layers: 2, residual: true, layer_norm: true, seed: 4, ..base.clone() },
        AttnConfig { positional: false, tied_unembed: true, seed: 9, ..base.clone() },
    ];
    for cfg in variants {
        let params = init_transformer(&cfg).unwrap();
        for a in [[0, 0, 0], [1, 5, 6], [6, 2, 3], [4, 4, 1]] {
            let got = forward_transformer(&params, &a).unwrap();
            let want = reference(&params, &a);
            for (x, y) in got.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{cfg:?} {a:?}: {x} vs {y}");
            }
        }
    }
}
