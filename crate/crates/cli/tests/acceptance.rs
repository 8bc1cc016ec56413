//! Acceptance suite: one line per criterion.
//!
//! `cargo test -p ljp-cli --test acceptance -- 4 6` runs a subset. Criterion 8
//! reads the released corpus from `$LJP_ECHR_DATA` and is skipped without it.

use std::fmt;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ljp_core::anonymizer::{anonymize_corpus, Gazetteer};
use ljp_core::baselines::BaselineKind;
use ljp_core::corpus::{
    compute_stats, ingest_corpus, stratify_labels, Corpus, FieldMap, LabelVocabulary, SplitName, TokenVocab, PAD,
};
use ljp_core::encoders::{
    AttentionPool, BiGru, Embedding, Gru, LabelWiseAttention, StackedBiGru, TransformerBlock, TransformerConfig,
    TransformerEncoder,
};
use ljp_core::evaluation::{average_ranks, macro_prf, mae, micro_counts, spearman_rho, MetricsReport};
use ljp_core::experiment::{run_experiment, run_seed, ExperimentConfig, Method};
use ljp_core::models::{
    Architecture, CaseInput, Model, ModelSpec, MultilabelActivation, Target, Task, TransformerSpec,
};
use ljp_core::synth::SynthConfig;
use ljp_core::training::{
    check_case_gradients, mean_std, sample_configs, Example, SearchSpace, TrainConfig, DEFAULT_TRIALS,
};
use ljp_tensor::{grad_check_params, GradCheckReport, ParamStore, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Outcome {
            status: Status::Skip,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradients),
        (2, "attention invariants", attention),
        (3, "metric oracles", metrics),
        (4, "learning check", learning),
        (5, "truncation contrast", truncation),
        (6, "anonymization probe", anonymization),
        (7, "protocol conformance", protocol),
        (8, "dataset statistics", dataset),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (n, title, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        if out.status == Status::Fail {
            failed += 1;
        }
        println!(
            "criterion {n}: {}  {title}  ({}; {:.1}s)",
            out.status,
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- shared

const VOCAB: usize = 12;
const LABELS: usize = 3;

fn toy_vocab(n: usize) -> TokenVocab {
    let mut t = vec!["<pad>".to_string(), "<unk>".to_string()];
    t.extend((2..n).map(|i| format!("w{i}")));
    TokenVocab::from_tokens(t).unwrap()
}

fn toy_labels(n: usize) -> LabelVocabulary {
    LabelVocabulary::new((1..=n).map(|i| i.to_string()).collect()).unwrap()
}

fn toy_spec(arch: Architecture, task: Task, act: MultilabelActivation, labels: usize) -> ModelSpec {
    ModelSpec {
        arch,
        task,
        embedding_dim: 4,
        hidden: 3,
        dropout: 0.0,
        max_len: 6,
        labels: if task == Task::Multilabel { labels } else { 0 },
        multilabel_activation: act,
        transformer: TransformerSpec {
            layers: 1,
            heads: 2,
            model_dim: 4,
            ff_dim: 5,
        },
        ..ModelSpec::default()
    }
}

fn pairs() -> Vec<(Architecture, Task, MultilabelActivation)> {
    let mut out = Vec::new();
    for arch in Architecture::ALL {
        for task in [Task::Binary, Task::Multilabel, Task::Importance] {
            if arch == Architecture::Lwan && task != Task::Multilabel {
                continue;
            }
            out.push((arch, task, MultilabelActivation::Sigmoid));
            if task == Task::Multilabel && arch != Architecture::Lwan {
                out.push((arch, task, MultilabelActivation::SoftmaxWithNone));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- 1

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 5;

fn te(e: ljp_core::Error) -> TensorError {
    TensorError::Argument(e.to_string())
}

fn readout(tape: &mut Tape<f64>, y: Var, seed: u64) -> ljp_tensor::Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = tape.constant(Tensor::from_vec(&shape, r)?);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn random_mask(rng: &mut ChaCha8Rng, t: usize) -> Option<Vec<bool>> {
    if rng.gen_bool(0.5) {
        return None;
    }
    let mut m: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.7)).collect();
    m[rng.gen_range(0..t)] = true;
    Some(m)
}

fn layer_checks(seed: u64) -> Vec<(String, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let t = rng.gen_range(1..=5);
    let data = (0..t * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = store.add("x", Tensor::from_vec(&[t, 4], data).unwrap(), true).unwrap();
    let m = random_mask(&mut rng, t);
    let gru = Gru::new(&mut store, "gru", 4, 2, &mut rng).unwrap();
    let bi = BiGru::new(&mut store, "bi", 4, 2, &mut rng).unwrap();
    let st = StackedBiGru::new(&mut store, "st", 4, 2, 2, &mut rng).unwrap();
    let pool = AttentionPool::new(&mut store, "pool", 4, &mut rng).unwrap();
    let lwa = LabelWiseAttention::new(&mut store, "lwa", 4, LABELS, &mut rng).unwrap();
    let tcfg = TransformerConfig {
        layers: 2,
        heads: 2,
        model_dim: 4,
        ff_dim: 5,
        max_positions: 6,
    };
    let block = TransformerBlock::new(&mut store, "blk", &tcfg, &mut rng).unwrap();
    let emb = Embedding::new(&mut store, "emb", VOCAB, 4, true, &mut rng).unwrap();
    let enc = TransformerEncoder::new(&mut store, "enc", tcfg, &mut rng).unwrap();
    let ids: Vec<usize> = (0..t).map(|_| rng.gen_range(0..VOCAB)).collect();
    let m = m.as_deref();

    type Layer<'a> = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>, Var) -> ljp_tensor::Result<Vec<Var>> + 'a>;
    let layers: Vec<(&str, Layer)> = vec![
        (
            "gru",
            Box::new(|tape, s, xv| gru.run(tape, s, xv, m, seed % 2 == 1).map_err(te)),
        ),
        ("bigru", Box::new(|tape, s, xv| Ok(vec![bi.encode(tape, s, xv, m).map_err(te)?]))),
        ("stacked-bigru", Box::new(|tape, s, xv| Ok(vec![st.encode(tape, s, xv, m).map_err(te)?]))),
        (
            "attention-pool",
            Box::new(|tape, s, xv| {
                let (p, a) = pool.pool(tape, s, xv, m).map_err(te)?;
                Ok(vec![p, a])
            }),
        ),
        (
            "label-wise-attention",
            Box::new(|tape, s, xv| {
                let (e, a) = lwa.attend(tape, s, xv, m).map_err(te)?;
                Ok(vec![e, a])
            }),
        ),
        (
            "transformer-block",
            Box::new(|tape, s, xv| {
                let (y, heads) = block.forward(tape, s, xv, m).map_err(te)?;
                Ok([vec![y], heads].concat())
            }),
        ),
        (
            "transformer-encoder",
            Box::new(|tape, s, _| Ok(vec![enc.encode(tape, s, &emb, &ids, m).map_err(te)?.states])),
        ),
        ("embedding", Box::new(|tape, s, _| Ok(vec![emb.embed(tape, s, &ids).map_err(te)?]))),
    ];
    layers
        .into_iter()
        .map(|(name, layer)| {
            let r = grad_check_params(
                &store,
                |tape, s| {
                    let xv = tape.param(s, x);
                    let mut total = None;
                    for (k, y) in layer(tape, s, xv)?.into_iter().enumerate() {
                        let r = readout(tape, y, seed * 31 + k as u64)?;
                        total = Some(match total {
                            None => r,
                            Some(t) => tape.add(t, r)?,
                        });
                    }
                    Ok(total.expect("at least one output"))
                },
                H,
                TOL,
                None,
            )
            .unwrap();
            (name.to_string(), r)
        })
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut reports = Vec::new();
    for seed in 0..SEEDS {
        reports.extend(layer_checks(seed).into_iter().map(|(n, r)| (format!("{n} seed {seed}"), r)));
        for (arch, task, act) in pairs() {
            let model = Model::<f64>::new(&toy_spec(arch, task, act, LABELS), toy_vocab(VOCAB), toy_labels(LABELS), seed)
                .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            // Two facts, six words.
            let split = rng.gen_range(1..=5);
            let words: Vec<usize> = (0..6).map(|_| rng.gen_range(2..VOCAB)).collect();
            let target = match task {
                Task::Binary => Target::Binary(rng.gen_bool(0.5)),
                Task::Multilabel => Target::Multilabel((0..LABELS).filter(|_| rng.gen_bool(0.4)).collect()),
                Task::Importance => Target::Importance(rng.gen_range(1..=4) as f64),
            };
            let ex = Example {
                case_id: "toy".into(),
                input: CaseInput::from_ids(vec![words[..split].to_vec(), words[split..].to_vec()]),
                target,
            };
            let r = check_case_gradients(&model, &ex, H, TOL, None).unwrap();
            reports.push((format!("{} {} {act:?} seed {seed}", arch.as_str(), task.as_str()), r));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let coords: usize = reports.iter().map(|(_, r)| r.checked).sum();
    let failed: Vec<&(String, GradCheckReport)> = reports.iter().filter(|(_, r)| !r.passed).collect();
    let misses: Vec<_> = failed.iter().flat_map(|(_, r)| &r.failures).collect();
    let mut detail = format!(
        "{}/{} checks pass at h={H:e} tol={TOL:e} over {coords} coordinates, {secs:.1}s",
        reports.len() - failed.len(),
        reports.len()
    );
    if !misses.is_empty() {
        let max_gap = misses.iter().map(|m| (m.analytic - m.numeric).abs()).fold(0.0, f64::max);
        let max_grad = misses.iter().map(|m| m.analytic.abs().max(m.numeric.abs())).fold(0.0, f64::max);
        let names: Vec<&str> = failed.iter().map(|(n, _)| n.as_str()).collect();
        detail += &format!(
            "; {} coordinate misses in [{}], all with |grad| <= {max_grad:.1e} and |gap| <= {max_gap:.1e}",
            misses.len(),
            names.join(", ")
        );
    }
    Outcome::check(failed.is_empty() && secs < 60.0, detail)
}

// ---------------------------------------------------------------- 2

fn attention() -> Outcome {
    const V: usize = 15;
    let models: Vec<Model<f64>> = Architecture::ALL
        .into_iter()
        .flat_map(|arch| {
            (0..2u64).map(move |seed| {
                let task = if arch == Architecture::Lwan { Task::Multilabel } else { Task::Binary };
                let spec = ModelSpec {
                    embedding_dim: 6,
                    hidden: 4,
                    layers: 1 + seed as usize,
                    max_len: 8,
                    transformer: TransformerSpec {
                        layers: 2,
                        heads: 2,
                        model_dim: 6,
                        ff_dim: 8,
                    },
                    ..toy_spec(arch, task, MultilabelActivation::Sigmoid, 4)
                };
                Model::new(&spec, toy_vocab(V), toy_labels(4), seed).unwrap()
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut vectors, mut worst_sum, mut pad_mass) = (0usize, 0.0f64, 0.0f64);
    let mut check = |row: &[f64], ids: &[Option<usize>]| {
        assert_eq!(row.len(), ids.len());
        vectors += 1;
        worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        for (w, id) in row.iter().zip(ids) {
            if *id == Some(PAD) {
                pad_mass = pad_mass.max(w.abs());
            }
        }
    };
    for i in 0..1000 {
        let m = &models[i % models.len()];
        let facts: Vec<Vec<usize>> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let mut f: Vec<usize> = (0..rng.gen_range(1..=7))
                    .map(|_| if rng.gen_bool(0.25) { PAD } else { rng.gen_range(2..V) })
                    .collect();
                let k = rng.gen_range(0..f.len());
                f[k] = rng.gen_range(2..V);
                f
            })
            .collect();
        let (tape, fwd) = m.run(&CaseInput::from_ids(facts)).unwrap();
        let arch = m.spec().arch;
        let seg = |s: usize| fwd.segments[s].iter().map(|&i| Some(i)).collect::<Vec<_>>();
        let vars = fwd.attention_vars();
        let per = if arch.is_transformer() { m.spec().transformer.heads } else { 1 };
        let words = if arch.is_hierarchical() { vars.len() - 1 } else { vars.len() };
        for (k, &v) in vars.iter().enumerate() {
            let t = tape.value(v);
            let ids = if k == words {
                vec![None; fwd.segments.len()]
            } else if arch.is_transformer() {
                std::iter::once(None).chain(seg(k / per)).collect()
            } else {
                seg(k / per)
            };
            for r in 0..t.rows() {
                check(t.row_slice(r), &ids);
            }
        }
    }
    Outcome::check(
        worst_sum <= 1e-6 && pad_mass == 0.0,
        format!("{vectors} vectors over 1000 inputs; max |sum-1| {worst_sum:.1e}; max PAD weight {pad_mass:e}"),
    )
}

// ---------------------------------------------------------------- 3

/// Exact P, R, F1 of pooled counts as (numerator, denominator) pairs.
fn exact_prf(tp: u64, fp: u64, fn_: u64) -> [(u64, u64); 3] {
    [(tp, tp + fp), (tp, tp + fn_), (2 * tp, 2 * tp + fp + fn_)]
}

fn frac(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_rho, mut count_mismatch) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        // Binary macro.
        let n = rng.gen_range(1..=12);
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let gold: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let mut want = [0.0; 3];
        for class in [true, false] {
            let tp = pred.iter().zip(&gold).filter(|(p, g)| **p == class && **g == class).count() as u64;
            let fp = pred.iter().zip(&gold).filter(|(p, g)| **p == class && **g != class).count() as u64;
            let fn_ = pred.iter().zip(&gold).filter(|(p, g)| **p != class && **g == class).count() as u64;
            for (w, (a, b)) in want.iter_mut().zip(exact_prf(tp, fp, fn_)) {
                *w += 50.0 * frac(a, b);
            }
        }
        let got = macro_prf(&pred, &gold).unwrap().prf;
        for (g, w) in [got.precision, got.recall, got.f1].into_iter().zip(want) {
            worst = worst.max((g - w).abs());
        }

        // Multilabel micro.
        let labels = rng.gen_range(1..=6);
        let sets: Vec<(Vec<usize>, Vec<usize>)> = (0..rng.gen_range(1..=8))
            .map(|_| {
                let mut s = || (0..labels).filter(|_| rng.gen_bool(0.35)).collect::<Vec<_>>();
                (s(), s())
            })
            .collect();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (p, g) in &sets {
            for l in 0..labels {
                match (p.contains(&l), g.contains(&l)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let (p, g): (Vec<_>, Vec<_>) = sets.into_iter().unzip();
        let c = micro_counts(&p, &g, labels, None).unwrap();
        if (c.tp as u64, c.fp as u64, c.fn_ as u64) != (tp, fp, fn_) {
            count_mismatch += 1;
        }
        let got = c.prf().prf;
        for (g, (a, b)) in [got.precision, got.recall, got.f1].into_iter().zip(exact_prf(tp, fp, fn_)) {
            worst = worst.max((g - 100.0 * frac(a, b)).abs());
        }

        // MAE over quarters and Spearman over small integers.
        let n = rng.gen_range(2..=10);
        let a: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=16)).collect();
        let b: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
        let af: Vec<f64> = a.iter().map(|x| *x as f64 / 4.0).collect();
        let bf: Vec<f64> = b.iter().map(|x| *x as f64).collect();
        let gap: i64 = a.iter().zip(&b).map(|(x, y)| (x - 4 * y).abs()).sum();
        worst = worst.max((mae(&af, &bf).unwrap() - gap as f64 / (4.0 * n as f64)).abs());

        let ranks = |v: &[i64]| -> Vec<i64> {
            v.iter()
                .map(|x| 2 * v.iter().filter(|y| *y < x).count() as i64 + v.iter().filter(|y| *y == x).count() as i64 + 1)
                .collect()
        };
        let (ra, rb) = (ranks(&a), ranks(&b));
        let nn = n as i64;
        let (sa, sb): (i64, i64) = (ra.iter().sum(), rb.iter().sum());
        let cov = nn * ra.iter().zip(&rb).map(|(x, y)| x * y).sum::<i64>() - sa * sb;
        let va = nn * ra.iter().map(|x| x * x).sum::<i64>() - sa * sa;
        let vb = nn * rb.iter().map(|x| x * x).sum::<i64>() - sb * sb;
        let want = (va != 0 && vb != 0).then(|| cov as f64 / ((va as f64) * (vb as f64)).sqrt());
        match (spearman_rho(&af, &bf).unwrap(), want) {
            (Some(x), Some(y)) => worst_rho = worst_rho.max((x - y).abs()),
            (None, None) => {}
            _ => worst_rho = f64::INFINITY,
        }
        if average_ranks(&af).iter().zip(&ra).any(|(x, y)| *x * 2.0 != *y as f64) {
            count_mismatch += 1;
        }
    }
    let gold: Vec<bool> = (0..100).map(|i| i < 66).collect();
    let maj = macro_prf(&[true; 100], &gold).unwrap().prf;
    let closed = format!("{:.1}/{:.1}/{:.1}", maj.precision, maj.recall, maj.f1);
    let paper_gap = [(maj.precision, 32.9), (maj.recall, 50.0), (maj.f1, 39.7)]
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Outcome::check(
        worst <= 1e-12 && worst_rho <= 1e-9 && count_mismatch == 0 && closed == "33.0/50.0/39.8" && paper_gap <= 1.0,
        format!(
            "1000 instances: max P/R/F1/MAE gap {worst:.1e}, max rho gap {worst_rho:.1e}, {count_mismatch} count mismatches; majority at 66% positive {closed}"
        ),
    )
}

// ---------------------------------------------------------------- 4–6

fn neural(arch: Architecture, task: Task) -> ExperimentConfig {
    ExperimentConfig {
        arch: Method::Neural(arch),
        task,
        model: ModelSpec {
            embedding_dim: 32,
            hidden: 16,
            dropout: 0.1,
            max_len: 64,
            transformer: TransformerSpec {
                layers: 1,
                heads: 2,
                model_dim: 32,
                ff_dim: 64,
            },
            ..ModelSpec::default()
        },
        train: TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        },
        seeds: vec![0],
        ..ExperimentConfig::default()
    }
}

fn score(cfg: &ExperimentConfig, corpus: &Corpus) -> MetricsReport {
    let mut cfg = cfg.clone();
    if cfg.task == Task::Multilabel {
        cfg.model.labels = corpus.labels.len();
    }
    run_seed(&cfg, corpus, cfg.seeds[0], None).unwrap().metrics
}

fn get(r: &MetricsReport, key: &str) -> f64 {
    r.get(key).unwrap_or(f64::NAN)
}

fn baseline(kind: BaselineKind, corpus: &Corpus) -> f64 {
    let cfg = ExperimentConfig {
        arch: Method::Baseline(kind),
        ..ExperimentConfig::default()
    };
    get(&score(&cfg, corpus), "macro_f1")
}

fn coin_toss(corpus: &Corpus) -> f64 {
    baseline(BaselineKind::CoinToss, corpus)
}

fn learning() -> Outcome {
    let corpus = SynthConfig::default().generate().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for arch in [Architecture::BigruAtt, Architecture::Han, Architecture::HierEnc] {
        let b = get(&score(&neural(arch, Task::Binary), &corpus), "macro_f1");
        let m = get(&score(&neural(arch, Task::Multilabel), &corpus), "micro_f1");
        ok &= b >= 95.0 && m >= 90.0;
        parts.push(format!("{} binary {b:.1} micro {m:.1}", arch.as_str()));
    }
    let flat = score(&neural(Architecture::BigruAtt, Task::Multilabel), &corpus);
    let lw = score(&neural(Architecture::Lwan, Task::Multilabel), &corpus);
    let (f_flat, f_lw) = (get(&flat, "few_f1"), get(&lw, "few_f1"));
    ok &= f_lw >= f_flat;
    parts.push(format!("few micro-F1 lwan {f_lw:.1} vs bigru-att {f_flat:.1}"));
    Outcome::check(ok, parts.join("; "))
}

fn truncation() -> Outcome {
    // Signatures sit in the last of six facts, past token 64 of the flat sequence.
    let corpus = SynthConfig {
        n_cases: 2000,
        facts_per_case: 6,
        fact_len: 16,
        signal_fact: Some(5),
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    let coin = coin_toss(&corpus);
    let flat = get(&score(&neural(Architecture::FlatTrunc, Task::Binary), &corpus), "macro_f1");
    let hier = get(&score(&neural(Architecture::HierEnc, Task::Binary), &corpus), "macro_f1");
    Outcome::check(
        (flat - coin).abs() <= 5.0 && hier >= 90.0,
        format!(
            "macro-F1 flat-trunc {flat:.1}, coin-toss {coin:.1}, majority {:.1}, hier-enc {hier:.1}",
            baseline(BaselineKind::Majority, &corpus)
        ),
    )
}

fn anonymization() -> Outcome {
    let cfg = SynthConfig::default();
    let corpus = cfg.generate().unwrap();
    let entities = Gazetteer::parse(&cfg.entity_gazetteer(), true).unwrap();
    let signatures = Gazetteer::parse(&cfg.signature_gazetteer(), true).unwrap();
    let masked = anonymize_corpus(&corpus, &entities).unwrap();
    let blind = anonymize_corpus(&corpus, &signatures).unwrap();
    let chance = coin_toss(&blind);
    let mut ok = true;
    let mut parts = Vec::new();
    for arch in [Architecture::BigruAtt, Architecture::Han] {
        let mut exp = neural(arch, Task::Binary);
        exp.model.freeze_embeddings = true;
        // Frozen tables learn slowly; both sides of the comparison must converge.
        exp.train.max_epochs = 40;
        exp.train.patience = 5;
        let (a, b, c) = (
            get(&score(&exp, &corpus), "macro_f1"),
            get(&score(&exp, &masked), "macro_f1"),
            get(&score(&exp, &blind), "macro_f1"),
        );
        ok &= (a - b).abs() < 2.0 && (c - chance).abs() <= 5.0;
        parts.push(format!("{} frozen: raw {a:.1}, entities masked {b:.1}, signatures masked {c:.1}", arch.as_str()));
    }
    parts.push(format!("coin-toss {chance:.1}, majority on masked {:.1}", baseline(BaselineKind::Majority, &blind)));
    Outcome::check(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 7

fn protocol() -> Outcome {
    let space = SearchSpace::default();
    let trials = sample_configs(&space, DEFAULT_TRIALS, 11).unwrap();
    let inside = trials.iter().all(|t| {
        [8, 12, 16].contains(&t.batch_size)
            && [0.1, 0.2, 0.3, 0.4].contains(&t.dropout)
            && [0.0, 0.01, 0.02].contains(&t.word_dropout)
            && [200, 300, 400].contains(&t.hidden)
            && [1, 2].contains(&t.layers)
    });

    let dir = tempfile::tempdir().unwrap();
    let corpus = SynthConfig {
        n_cases: 150,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    let mut cfg = neural(Architecture::BigruAtt, Task::Binary);
    cfg.name = "five".into();
    cfg.model.embedding_dim = 8;
    cfg.model.hidden = 8;
    cfg.train.max_epochs = 2;
    cfg.search.hidden = vec![8];
    cfg.seeds = vec![0, 1, 2, 3, 4];
    let (runs, agg) = run_experiment(&cfg, &corpus, dir.path()).unwrap();
    let agg = agg.expect("five seeds aggregate");
    let root = cfg.run_dir(dir.path());
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("aggregate.json")).unwrap()).unwrap();
    let mut exact = runs.len() == 5;
    for (name, ms) in &agg.metrics {
        let per_run: Vec<f64> = cfg
            .seeds
            .iter()
            .map(|s| {
                let text = std::fs::read_to_string(root.join(format!("seed-{s}/metrics.json"))).unwrap();
                let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                v["binary"][name].as_f64().unwrap()
            })
            .collect();
        let (m, s) = mean_std(&per_run);
        let disk = &on_disk["metrics"][name];
        exact &= ms.mean.map(f64::to_bits) == Some(m.to_bits())
            && ms.std.map(f64::to_bits) == Some(s.to_bits())
            && disk["mean"].as_f64().map(f64::to_bits) == Some(m.to_bits())
            && disk["std"].as_f64().map(f64::to_bits) == Some(s.to_bits());
    }
    Outcome::check(
        trials.len() == DEFAULT_TRIALS && inside && exact,
        format!(
            "{} configs, all in range: {inside}; mean/std of {} metrics over 5 seeds recomputed bit-exactly: {exact}",
            trials.len(),
            agg.metrics.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn dataset() -> Outcome {
    let Some(path) = std::env::var_os("LJP_ECHR_DATA") else {
        return Outcome::skip("LJP_ECHR_DATA not set");
    };
    let corpus = match ingest_corpus(Path::new(&path), &FieldMap::echr()) {
        Ok(c) => c,
        Err(e) => return Outcome::check(false, format!("ingest failed: {e}")),
    };
    let stats = compute_stats(&corpus);
    let table = [
        (SplitName::Train, 7100, 2421.0, 43.0, 0.71),
        (SplitName::Dev, 1380, 1931.0, 30.0, 0.96),
        (SplitName::Test, 2998, 2588.0, 45.0, 0.71),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (split, cases, words, facts, arts) in table {
        let s = stats.splits.iter().find(|s| s.split == split).unwrap();
        let near = |got: f64, want: f64| (got - want).abs() <= 0.02 * want;
        ok &= s.cases == cases && near(s.mean_words, words) && near(s.mean_facts, facts) && near(s.mean_articles, arts);
        parts.push(format!(
            "{} {}/{:.0}/{:.1}/{:.2}",
            split.as_str(),
            s.cases,
            s.mean_words,
            s.mean_facts,
            s.mean_articles
        ));
    }
    let strata = stratify_labels(corpus.require(SplitName::Train).unwrap(), &corpus.labels, 50).unwrap();
    ok &= strata.zero.len() == 45 && strata.few.len() == 11;
    parts.push(format!("zero-shot {} few-shot {}", strata.zero.len(), strata.few.len()));
    Outcome::check(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 9

fn ljp(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ljp")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "ljp {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Synthesizes, trains, evaluates and explains under `root`.
fn pipeline(root: &Path, jobs: &str) {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"name": "det", "model": {"embedding_dim": 8, "hidden": 8, "max_len": 64},
            "train": {"max_epochs": 2}, "search": {"hidden": [8]}, "seeds": [0, 1]}"#,
    )
    .unwrap();
    ljp(&["synth", "--n-cases", "120", "--seed", "5", "--out", &p("data"), "--jobs", jobs]);
    ljp(&["train", "--config", &p("config.json"), "--data", &p("data"), "--out", &p("runs"), "--jobs", jobs]);
    let ck = p("runs/det/seed-1/checkpoint.ljpt");
    ljp(&["evaluate", "--checkpoint", &ck, "--data", &p("data"), "--out", &p("eval"), "--jobs", jobs]);
    ljp(&["explain", "--checkpoint", &ck, "--data", &p("data"), "--out", &p("explain"), "--jobs", jobs]);
}

fn files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files(&p, base, out);
        } else {
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "1");
    pipeline(b.path(), "0");
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    files(a.path(), a.path(), &mut fa);
    files(b.path(), b.path(), &mut fb);
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let kinds = ["checkpoint.ljpt", "metrics.json", "trace.html"];
    let covered = kinds.iter().all(|k| names.iter().any(|n| n.ends_with(k)));
    Outcome::check(
        fa.len() == fb.len() && differing.is_empty() && covered,
        format!(
            "{} artifacts compared between --jobs 1 and the default pool; differing: {:?}",
            fa.len(),
            differing
        ),
    )
}
