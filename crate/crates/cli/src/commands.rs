//! Bodies of the five subcommands.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use fourier_circuits::budget;
use fourier_circuits::construction::{self, IndicatorTarget};
use fourier_circuits::dataset::ModAddDataset;
use fourier_circuits::fourier::{self, NetworkGrid};
use fourier_circuits::mlp::{self, MlpParams};
use fourier_circuits::rng::SplitMix64;
use fourier_circuits::training::{self, Model, TrainConfig, TrainOutcome, GROK_THRESHOLD};
use fourier_circuits::transformer::{self, AttnParams};
use fourier_circuits::{Error, Result};

use crate::{checkpoint, config, AnalyzeArgs, ConstructArgs, GrokArgs, Status, TrainArgs, VerifyArgs};

/// Tolerance for the exact analytic checks.
pub const EXACT_TOL: f64 = 1e-9;
/// Random draws per identity check.
pub const IDENTITY_DRAWS: usize = 1000;
/// Power at or above which a neuron counts as single-frequency.
pub const SINGLE_FREQUENCY_POWER: f64 = 0.9;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn construct(args: &ConstructArgs, out: &mut dyn Write) -> Result<Status> {
    let (p, k) = (args.p, args.k);
    let raw = construction::construct_max_margin(p, k)?;
    // Normalising scales every parameter by 1/‖θ‖, so outputs scale by
    // ‖θ‖^{-(k+1)}.
    let (params, scale) = if args.normalize {
        let norm = mlp::l2k1_norm(&raw);
        (construction::normalize_network(&raw)?, norm.powi(-(k as i32 + 1)))
    } else {
        (raw, 1.0)
    };
    let gamma = construction::gamma_star(k, p)?;
    let ds = ModAddDataset::generate_full(p, k)?;
    let margin = mlp::dataset_margin_h(&params, &ds, false)?;
    let base = IndicatorTarget::fourier_sum(p);
    let target = IndicatorTarget { correct: base.correct * scale, wrong: base.wrong * scale };
    let report = construction::verify_indicator(&params, target)?;
    let margin_dev = rel_err(margin.normalized_margin, gamma);
    writeln!(out, "p {p}")?;
    writeln!(out, "k {k}")?;
    writeln!(out, "m {}", params.m())?;
    writeln!(out, "norm {:.12e}", margin.norm)?;
    writeln!(out, "gamma_star {gamma:.12e}")?;
    writeln!(out, "min_margin {:.12e}", margin.min_margin)?;
    writeln!(out, "normalized_margin {:.12e}", margin.normalized_margin)?;
    writeln!(out, "margin_rel_deviation {margin_dev:.3e}")?;
    writeln!(out, "output_correct {}", target.correct)?;
    writeln!(out, "output_wrong {}", target.wrong)?;
    writeln!(out, "indicator_max_deviation {:.3e}", report.max_deviation)?;
    if let Some(path) = &args.out {
        checkpoint::save(path, &Model::Mlp(params), 0)?;
        writeln!(out, "checkpoint {}", path.display())?;
    }
    let ok = margin_dev < EXACT_TOL && report.max_deviation < EXACT_TOL * target.correct.abs().max(1.0);
    Ok(if ok { Status::Pass } else { Status::Fail })
}

fn with_overrides(mut cfg: TrainConfig, steps: Option<usize>, seed: Option<u64>) -> Result<TrainConfig> {
    if let Some(s) = steps {
        cfg.run.steps = s;
    }
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_run(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.csv"), outcome.trace.to_csv())?;
    fs::write(dir.join("config.toml"), config::echo(cfg))?;
    checkpoint::save(&dir.join("final.ckpt"), &outcome.model, cfg.run.seed)
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = with_overrides(config::load(&args.config)?, args.steps, args.seed)?;
    let outcome = training::train(&cfg)?;
    write_run(&args.out, &cfg, &outcome)?;
    let last = outcome.trace.last().expect("trace always has a final record");
    writeln!(out, "step {}", last.step)?;
    writeln!(out, "train_loss {}", last.train_loss)?;
    writeln!(out, "train_acc {}", last.train_acc)?;
    if let Some(v) = last.val_acc {
        writeln!(out, "val_acc {v}")?;
    }
    writeln!(out, "output {}", args.out.display())?;
    match outcome.divergence {
        Some(d) => Err(Error::Diverged { step: d.step, loss: d.loss }),
        None => Ok(Status::Pass),
    }
}

pub fn analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<Status> {
    let ckpt = checkpoint::load(&args.ckpt)?;
    fs::create_dir_all(&args.out)?;
    match &ckpt.model {
        Model::Mlp(m) => analyze_mlp(m, &args.out, out),
        Model::Attention(a) => analyze_attention(a, &args.out, out),
    }
}

/// Per-neuron dominant frequency, histogram over active neurons and the list
/// of frequencies no active neuron uses.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAnalysis {
    pub freqs: Vec<training::NeuronFrequency>,
    pub active: usize,
    /// Active neurons at or above [`SINGLE_FREQUENCY_POWER`].
    pub single_frequency: usize,
    /// Index ζ holds the count for frequency ζ (index 0 unused).
    pub histogram: Vec<usize>,
    pub missing: Vec<usize>,
    pub median_power: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mlp_analysis(params: &MlpParams) -> Result<MlpAnalysis> {
    let freqs = training::neuron_frequencies(params)?;
    let half = (params.p() - 1) / 2;
    let mut histogram = vec![0usize; half + 1];
    let mut powers = Vec::new();
    let mut single_frequency = 0;
    let active = training::active_neurons(&freqs);
    for f in &active {
        let power = f.peak.map_or(0.0, |pk| pk.power);
        if let Some(pk) = f.peak {
            histogram[pk.frequency] += 1;
        }
        single_frequency += usize::from(power >= SINGLE_FREQUENCY_POWER);
        powers.push(power);
    }
    let missing = (1..=half).filter(|&z| histogram[z] == 0).collect();
    Ok(MlpAnalysis {
        active: active.len(),
        freqs,
        single_frequency,
        histogram,
        missing,
        median_power: median(powers),
    })
}

fn analyze_mlp(params: &MlpParams, dir: &Path, out: &mut dyn Write) -> Result<Status> {
    let a = mlp_analysis(params)?;
    let max_norm = a.freqs.iter().map(|f| f.norm).fold(0.0, f64::max);
    let mut neurons = String::from("neuron,norm,active,frequency,max_normalized_power\n");
    let mut spectrum = String::from("neuron,freq,power,normalized_power\n");
    for (f, n) in a.freqs.iter().zip(params.neurons()) {
        let active = max_norm > 0.0 && f.norm >= training::ACTIVE_NEURON_FRACTION * max_norm;
        let (freq, power) = f.peak.map_or((String::new(), String::new()), |pk| (pk.frequency.to_string(), pk.power.to_string()));
        neurons.push_str(&format!("{},{},{},{freq},{power}\n", f.neuron, f.norm, u8::from(active)));
        let fp = fourier::combined_frequency_power(&n.tables(), params.p())?;
        for line in fourier::spectrum_csv(&fp).lines().skip(1) {
            spectrum.push_str(&format!("{},{line}\n", f.neuron));
        }
    }
    let mut hist = String::from("freq,count\n");
    for (z, c) in a.histogram.iter().enumerate().skip(1) {
        hist.push_str(&format!("{z},{c}\n"));
    }
    fs::write(dir.join("neurons.csv"), neurons)?;
    fs::write(dir.join("spectrum.csv"), spectrum)?;
    fs::write(dir.join("histogram.csv"), hist)?;
    writeln!(out, "kind mlp")?;
    writeln!(out, "neurons {}", params.m())?;
    writeln!(out, "active {}", a.active)?;
    writeln!(out, "median_max_normalized_power {:.6}", a.median_power)?;
    writeln!(out, "single_frequency_fraction {:.6}", a.single_frequency as f64 / a.active.max(1) as f64)?;
    let hist: Vec<String> = a.histogram.iter().enumerate().skip(1).map(|(z, c)| format!("{z}:{c}")).collect();
    writeln!(out, "histogram {}", hist.join(" "))?;
    if a.missing.is_empty() {
        writeln!(out, "missing_frequencies none")?;
    } else {
        let m: Vec<String> = a.missing.iter().map(ToString::to_string).collect();
        writeln!(out, "missing_frequencies {}", m.join(" "))?;
    }
    Ok(Status::Pass)
}

/// Share of non-DC 2-D power captured by the `top` largest conjugate pairs
/// `{(j1, j2), (-j1, -j2)}`, and the leading pair.
pub fn pair_concentration(power: &[f64], p: usize, top: usize) -> (f64, (usize, usize)) {
    let mut classes: Vec<((usize, usize), f64)> = Vec::new();
    for j1 in 0..p {
        for j2 in 0..p {
            let (n1, n2) = ((p - j1) % p, (p - j2) % p);
            if (j1, j2) == (0, 0) || (n1, n2) < (j1, j2) {
                continue;
            }
            let mut w = power[j1 * p + j2];
            if (n1, n2) != (j1, j2) {
                w += power[n1 * p + n2];
            }
            classes.push(((j1, j2), w));
        }
    }
    let total: f64 = classes.iter().map(|c| c.1).sum();
    classes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if total <= 0.0 {
        return (0.0, (0, 0));
    }
    let share = classes.iter().take(top).map(|c| c.1).sum::<f64>() / total;
    (share, classes[0].0)
}

fn analyze_attention(params: &AttnParams, dir: &Path, out: &mut dyn Write) -> Result<Status> {
    let cfg = params.config();
    let p = cfg.p;
    let mut summary = String::from("layer,head,top_pair_j1,top_pair_j2,top4_pair_share\n");
    writeln!(out, "kind attention")?;
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            let a = transformer::token_space_attention(params, h, l)?;
            fs::write(dir.join(format!("attention_l{l}_h{h}.csv")), transformer::matrix_csv(&a)?)?;
            let power = fourier::dft2(a.data(), p)?.power();
            let non_dc: f64 = power.iter().sum::<f64>() - power[0];
            let mut csv = String::from("j1,j2,power,normalized_power\n");
            for j1 in 0..p {
                for j2 in 0..p {
                    let w = power[j1 * p + j2];
                    let norm = if (j1, j2) == (0, 0) || non_dc <= 0.0 { 0.0 } else { w / non_dc };
                    csv.push_str(&format!("{j1},{j2},{w:.17e},{norm:.17e}\n"));
                }
            }
            fs::write(dir.join(format!("spectrum2d_l{l}_h{h}.csv")), csv)?;
            let (share, (j1, j2)) = pair_concentration(&power, p, 4);
            summary.push_str(&format!("{l},{h},{j1},{j2},{share}\n"));
            writeln!(out, "layer {l} head {h} top_pair ({j1},{j2}) top4_pair_share {share:.4}")?;
        }
    }
    fs::write(dir.join("heads.csv"), summary)?;
    Ok(Status::Pass)
}

/// One line of the verification battery.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub metric: String,
}

fn check(name: &'static str, passed: bool, metric: String) -> Check {
    Check { name, passed, metric }
}

/// Analytic checks for one `(p, k)`. `tamper` scales the reference γ*.
pub fn verification_battery(p: usize, k: usize, tamper: Option<f64>) -> Result<Vec<Check>> {
    let gamma_ref = construction::gamma_star(k, p)? * tamper.unwrap_or(1.0);
    let mut checks = Vec::new();
    let mut rng = SplitMix64::derive(p as u64 * 1000 + k as u64, 0x7E51);

    // γ* against the objective of an explicit unit cosine neuron.
    let spec = construction::CosineNeuronSpec {
        frequency: 1,
        input_phases: vec![0.0; k],
        output_phase: 0.0,
        scale: construction::unit_scale(p, k),
    };
    let neuron = construction::cosine_neuron(&spec, p, k)?;
    let obj = mlp::neuron_weighted_objective(&neuron)?;
    let e = rel_err(obj, gamma_ref);
    checks.push(check("gamma_star", e < EXACT_TOL, format!("rel_err={e:.3e}")));
    if k == 3 {
        let closed = 3.0 / (16.0 * p as f64 * (p as f64 - 1.0));
        let e = rel_err(gamma_ref, closed);
        checks.push(check("gamma_star_closed_form", e < EXACT_TOL, format!("rel_err={e:.3e}")));
    }

    if k <= construction::MAX_ARITY {
        let terms = construction::sum_to_product_terms(k)?;
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        let mut worst: f64 = 0.0;
        for _ in 0..IDENTITY_DRAWS {
            let a: Vec<f64> = (0..k).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let want = 2f64.powi(k as i32) * fact * a.iter().product::<f64>();
            let got = construction::evaluate_sum_to_product(&terms, &a);
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
        checks.push(check("sum_to_product", worst < EXACT_TOL, format!("max_rel_err={worst:.3e}")));

        let trig = construction::cos_sum_expansion(k)?;
        let mut worst: f64 = 0.0;
        for _ in 0..IDENTITY_DRAWS {
            let angles: Vec<f64> = (0..=k).map(|_| rng.uniform(-std::f64::consts::PI, std::f64::consts::PI)).collect();
            let want = angles.iter().sum::<f64>().cos();
            worst = worst.max((construction::evaluate_trig_terms(&trig, &angles) - want).abs());
        }
        checks.push(check("cos_sum_expansion", worst < 1e-12, format!("max_abs_err={worst:.3e}")));
    }

    let raw = construction::construct_max_margin(p, k)?;
    let m_expected = construction::neuron_count(p, k);
    checks.push(check("neuron_count", raw.m() == m_expected, format!("m={} expected={m_expected}", raw.m())));

    let report = construction::verify_indicator(&raw, IndicatorTarget::fourier_sum(p))?;
    checks.push(check(
        "indicator",
        report.max_deviation < EXACT_TOL,
        format!("max_abs_dev={:.3e}", report.max_deviation),
    ));

    let unit = construction::normalize_network(&raw)?;
    let ds = ModAddDataset::generate_full(p, k)?;
    let margin = mlp::dataset_margin_h(&unit, &ds, false)?;
    let e = rel_err(margin.normalized_margin, gamma_ref);
    checks.push(check("normalized_margin", e < EXACT_TOL, format!("rel_err={e:.3e}")));

    let a = crate::commands::mlp_analysis(&raw)?;
    let pure = a.freqs.iter().all(|f| f.peak.is_some_and(|pk| pk.power > 1.0 - EXACT_TOL));
    let per = m_expected / ((p - 1) / 2);
    let uniform = a.histogram.iter().skip(1).all(|&c| c == per);
    checks.push(check(
        "frequency_coverage",
        pure && uniform && a.missing.is_empty(),
        format!("per_frequency={per} missing={}", a.missing.len()),
    ));

    if budget::check(budget::power(p, k + 1)).is_ok() {
        let grid = NetworkGrid::evaluate(p, k, |x, c| raw.logits_unchecked(x)[c])?;
        let mut min_re = f64::INFINITY;
        for z in 1..=(p as i64 - 1) / 2 {
            let mut j = vec![z; k];
            j.push(-z);
            min_re = min_re.min(grid.coefficient(&j)?.re);
        }
        checks.push(check("network_dft_positive", min_re > 0.0, format!("min_real={min_re:.6e}")));
    }

    let u: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
    let s = fourier::dft1(&u, p)?;
    let lhs: f64 = s.power().iter().sum();
    let rhs = p as f64 * u.iter().map(|x| x * x).sum::<f64>();
    let e = rel_err(lhs, rhs);
    checks.push(check("plancherel", e < 1e-12, format!("rel_err={e:.3e}")));
    let back = fourier::idft1(&s);
    let e = u.iter().zip(&back).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    checks.push(check("dft_roundtrip", e < 1e-12, format!("max_abs_err={e:.3e}")));
    Ok(checks)
}

pub fn verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<Status> {
    let checks = verification_battery(args.p, args.k, args.tamper_gamma)?;
    for c in &checks {
        writeln!(out, "{} {} {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.metric)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(out, "summary {} passed {failed} failed", checks.len() - failed)?;
    Ok(if failed == 0 { Status::Pass } else { Status::Fail })
}

/// One row of `grok_metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrokRow {
    pub seed: u64,
    pub k: usize,
    pub p: usize,
    pub metrics: training::GrokMetrics,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn grok_csv(rows: &[GrokRow]) -> String {
    let mut s = String::from("seed,k,p,step_train,step_val,delay\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed,
            r.k,
            r.p,
            opt(r.metrics.step_train),
            opt(r.metrics.step_val),
            opt(r.metrics.delay)
        ));
    }
    s
}

/// Trains one run per seed (in parallel) and collects grokking metrics in
/// seed order.
pub fn grok_runs(base: &TrainConfig, seeds: &[u64], dir: &Path) -> Result<Vec<GrokRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let results: Vec<Result<GrokRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = with_overrides(base.clone(), None, Some(seed))?;
            let outcome = training::train(&cfg)?;
            write_run(&dir.join(format!("seed_{seed}")), &cfg, &outcome)?;
            if let Some(d) = outcome.divergence {
                return Err(Error::Diverged { step: d.step, loss: d.loss });
            }
            let metrics = training::grokking_metrics(&outcome.trace, GROK_THRESHOLD)?;
            Ok(GrokRow { seed, k: cfg.model.k, p: cfg.model.p, metrics })
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    fs::write(dir.join("grok_metrics.csv"), grok_csv(&rows))?;
    Ok(rows)
}

pub fn grok(args: &GrokArgs, out: &mut dyn Write) -> Result<Status> {
    let base = with_overrides(config::load(&args.config)?, args.steps, None)?;
    fs::create_dir_all(&args.out)?;
    let rows = grok_runs(&base, &args.seeds, &args.out)?;
    write!(out, "{}", grok_csv(&rows))?;
    Ok(Status::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_small_cases() {
        for (p, k) in [(5, 2), (3, 2), (5, 3)] {
            let checks = verification_battery(p, k, None).unwrap();
            assert!(checks.iter().all(|c| c.passed), "{checks:?}");
        }
    }

    #[test]
    fn tampering_fails_the_gamma_checks() {
        let checks = verification_battery(5, 3, Some(1.001)).unwrap();
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["gamma_star", "gamma_star_closed_form", "normalized_margin"]);
    }

    #[test]
    fn pair_concentration_of_a_single_cosine() {
        let p = 7;
        let m: Vec<f64> = (0..p * p)
            .map(|i| (2.0 * std::f64::consts::PI * 2.0 * ((i / p) as f64 - (i % p) as f64) / p as f64).cos())
            .collect();
        let power = fourier::dft2(&m, p).unwrap().power();
        let (share, pair) = pair_concentration(&power, p, 1);
        assert!((share - 1.0).abs() < 1e-12);
        assert_eq!(pair, (2, 5));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
        assert_eq!(median(vec![]), 0.0);
    }

    #[test]
    fn grok_csv_blanks_missing_values() {
        let rows = [GrokRow {
            seed: 7,
            k: 2,
            p: 31,
            metrics: training::GrokMetrics { step_train: Some(100), step_val: None, delay: None },
        }];
        assert_eq!(grok_csv(&rows), "seed,k,p,step_train,step_val,delay\n7,2,31,100,,\n");
    }
}
