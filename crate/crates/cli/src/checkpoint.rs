//! Plain-text checkpoints.
//!
//! ```text
//! fourier-circuits-checkpoint 1
//! kind mlp
//! p 11
//! ...
//! tensor u1 11 160
//! <one row of values per line>
//! end
//! ```
//!
//! Values are written with 17 significant digits, so every `f64` survives a
//! save/load cycle bitwise.

use std::fmt::Write as _;
use std::path::Path;

use fourier_circuits::autodiff::Tensor;
use fourier_circuits::training::{init_mlp, Model};
use fourier_circuits::transformer::{AttnConfig, AttnParams};
use fourier_circuits::{Error, Result};

pub const MAGIC: &str = "fourier-circuits-checkpoint";
pub const VERSION: u32 = 1;

fn tensor_names(model: &Model) -> Vec<String> {
    match model {
        Model::Mlp(m) => (1..=m.k()).map(|j| format!("u{j}")).chain(["w".to_string()]).collect(),
        Model::Attention(a) => a.named_tensors().into_iter().map(|(n, _)| n).collect(),
    }
}

/// Serialises a model. `seed` is echoed for provenance of the run.
pub fn to_string(model: &Model, seed: u64) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    let mut kv = |k: &str, v: String| writeln!(out, "{k} {v}").expect("string write");
    match model {
        Model::Mlp(m) => {
            kv("kind", "mlp".into());
            kv("p", m.p().to_string());
            kv("k", m.k().to_string());
            kv("width", m.m().to_string());
        }
        Model::Attention(a) => {
            let c = a.config();
            kv("kind", "attention".into());
            kv("p", c.p.to_string());
            kv("k", c.k.to_string());
            kv("width", c.heads.to_string());
            kv("d_model", c.d_model.to_string());
            kv("d_head", c.d_head.to_string());
            kv("layers", c.layers.to_string());
            kv("residual", c.residual.to_string());
            kv("layer_norm", c.layer_norm.to_string());
            kv("positional", c.positional.to_string());
            kv("tied_unembed", c.tied_unembed.to_string());
        }
    }
    kv("seed", seed.to_string());
    for (name, t) in tensor_names(model).iter().zip(model.tensors()) {
        let (r, c) = t.dims2().expect("all parameters are matrices");
        writeln!(out, "tensor {name} {r} {c}").expect("string write");
        for row in t.data().chunks(c) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn save(path: &Path, model: &Model, seed: u64) -> Result<()> {
    std::fs::write(path, to_string(model, seed))?;
    Ok(())
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

/// Parsed checkpoint: the model and the echoed seed.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
}

pub fn from_str(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    if header != format!("{MAGIC} {VERSION}") {
        return Err(bad(n, format!("expected header '{MAGIC} {VERSION}'")));
    }
    let mut meta = std::collections::BTreeMap::new();
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    let mut ended = false;
    while let Some((n, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("end") => {
                ended = true;
                break;
            }
            Some("tensor") => {
                let f: Vec<&str> = parts.collect();
                let [name, r, c] = f[..] else { return Err(bad(n, "tensor needs a name and two dims")) };
                let r: usize = r.parse().map_err(|e| bad(n, e))?;
                let c: usize = c.parse().map_err(|e| bad(n, e))?;
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    let (n, row) = lines.next().ok_or_else(|| bad(n, "truncated tensor"))?;
                    let before = data.len();
                    for v in row.split_whitespace() {
                        data.push(v.parse::<f64>().map_err(|e| bad(n, format!("{v}: {e}")))?);
                    }
                    if data.len() - before != c {
                        return Err(bad(n, format!("expected {c} values")));
                    }
                }
                tensors.push((name.to_string(), Tensor::matrix(r, c, data)?));
            }
            Some(key) => {
                let value = parts.collect::<Vec<_>>().join(" ");
                meta.insert(key.to_string(), (n, value));
            }
            None => {}
        }
    }
    if !ended {
        return Err(Error::Checkpoint("missing 'end' marker".into()));
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| Error::Checkpoint(format!("missing key '{k}'")));
    let num = |k: &str| -> Result<usize> {
        let (n, v) = get(k)?;
        v.parse().map_err(|e| bad(*n, format!("{k}: {e}")))
    };
    let flag = |k: &str| -> Result<bool> {
        let (n, v) = get(k)?;
        v.parse().map_err(|e| bad(*n, format!("{k}: {e}")))
    };
    let seed = {
        let (n, v) = get("seed")?;
        v.parse::<u64>().map_err(|e| bad(*n, format!("seed: {e}")))?
    };
    let (p, k, width) = (num("p")?, num("k")?, num("width")?);
    let template = match get("kind")?.1.as_str() {
        "mlp" => Model::Mlp(init_mlp(p, k, width, 0.0, 0)),
        "attention" => {
            let cfg = AttnConfig {
                p,
                k,
                heads: width,
                d_model: num("d_model")?,
                d_head: num("d_head")?,
                layers: num("layers")?,
                seed,
                residual: flag("residual")?,
                layer_norm: flag("layer_norm")?,
                positional: flag("positional")?,
                tied_unembed: flag("tied_unembed")?,
            };
            cfg.validate()?;
            // Shapes only; values come from the file.
            let zeros = AttnParams::from_tensors(&cfg, shapes_of(&cfg))?;
            Model::Attention(zeros)
        }
        other => return Err(Error::Checkpoint(format!("unknown checkpoint kind '{other}'"))),
    };
    let names = tensor_names(&template);
    let got: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
    if got != names.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Checkpoint(format!("tensor names {got:?} do not match {names:?}")));
    }
    let model = template.with_tensors(tensors.into_iter().map(|(_, t)| t).collect())?;
    Ok(Checkpoint { model, seed })
}

fn shapes_of(cfg: &AttnConfig) -> Vec<Tensor> {
    let (d, dh) = (cfg.d_model, cfg.d_head);
    let mut out = vec![Tensor::zeros(&[cfg.p + 1, d]), Tensor::zeros(&[cfg.k + 1, d])];
    for _ in 0..cfg.layers {
        for _ in 0..cfg.heads * 3 {
            out.push(Tensor::zeros(&[d, dh]));
        }
        out.push(Tensor::zeros(&[cfg.heads * dh, d]));
    }
    if !cfg.tied_unembed {
        out.push(Tensor::zeros(&[d, cfg.p]));
    }
    out
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_str(&std::fs::read_to_string(path)?)
}
