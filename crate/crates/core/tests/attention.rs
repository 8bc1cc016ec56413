//! Every attention distribution sums to one and ignores padding.

use ljp_core::corpus::{LabelVocabulary, TokenVocab, PAD};
use ljp_core::encoders::{Embedding, TransformerConfig, TransformerEncoder};
use ljp_core::models::{Architecture, CaseInput, Model, ModelSpec, Task, TransformerSpec};
use ljp_tensor::Tape;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INPUTS: usize = 1000;
const VOCAB: usize = 15;
const SUM_TOL: f64 = 1e-6;

fn model(arch: Architecture, seed: u64) -> Model<f64> {
    let mut t = vec!["<pad>".to_string(), "<unk>".to_string()];
    t.extend((2..VOCAB).map(|i| format!("w{i}")));
    let task = if arch == Architecture::Lwan { Task::Multilabel } else { Task::Binary };
    let spec = ModelSpec {
        arch,
        task,
        embedding_dim: 6,
        hidden: 4,
        layers: 1 + (seed % 2) as usize,
        dropout: 0.0,
        max_len: 8,
        labels: if task == Task::Multilabel { 4 } else { 0 },
        transformer: TransformerSpec {
            layers: 2,
            heads: 2,
            model_dim: 6,
            ff_dim: 8,
        },
        ..ModelSpec::default()
    };
    let labels = LabelVocabulary::new((1..=4).map(|i| i.to_string()).collect()).unwrap();
    Model::new(&spec, TokenVocab::from_tokens(t).unwrap(), labels, seed).unwrap()
}

/// 1–4 facts of 1–7 tokens, a quarter of them padding, none all padding.
fn random_input(rng: &mut ChaCha8Rng) -> CaseInput {
    let facts = (0..rng.gen_range(1..=4))
        .map(|_| {
            let mut f: Vec<usize> = (0..rng.gen_range(1..=7))
                .map(|_| if rng.gen_bool(0.25) { PAD } else { rng.gen_range(2..VOCAB) })
                .collect();
            let keep = rng.gen_range(0..f.len());
            f[keep] = rng.gen_range(2..VOCAB);
            f
        })
        .collect();
    CaseInput::from_ids(facts)
}

fn check_rows(what: &str, rows: &[Vec<f64>], ids: &[Option<usize>]) {
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), ids.len(), "{what}: row {r} width");
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() <= SUM_TOL, "{what}: row {r} sums to {s}");
        for (w, id) in row.iter().zip(ids) {
            assert!(*w >= 0.0, "{what}: negative weight");
            if *id == Some(PAD) {
                assert_eq!(*w, 0.0, "{what}: padding weight {w}");
            }
        }
    }
}

fn rows_of(tape: &Tape<f64>, v: ljp_tensor::Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Checks one case: raw matrices on the tape and the summarized weights.
fn check_case(m: &Model<f64>, input: &CaseInput) {
    let arch = m.spec().arch;
    let (tape, fwd) = m.run(input).unwrap();
    let vars = fwd.attention_vars();
    let seg_ids = |s: usize| fwd.segments[s].iter().map(|&i| Some(i)).collect::<Vec<_>>();
    // Transformer matrices carry a leading classification column.
    let with_cls = |s: usize| std::iter::once(None).chain(seg_ids(s)).collect::<Vec<_>>();
    let what = arch.as_str();

    // Models keep the heads of the last transformer layer only.
    let per_segment = if arch.is_transformer() {
        m.spec().transformer.heads
    } else {
        1
    };
    let (word_vars, fact_var) = if arch.is_hierarchical() {
        (&vars[..vars.len() - 1], vars.last().copied())
    } else {
        (&vars[..], None)
    };
    assert_eq!(word_vars.len(), per_segment * fwd.segments.len(), "{what}: matrix count");
    for (k, &v) in word_vars.iter().enumerate() {
        let s = k / per_segment;
        let ids = if arch.is_transformer() { with_cls(s) } else { seg_ids(s) };
        check_rows(what, &rows_of(&tape, v), &ids);
    }
    if let Some(f) = fact_var {
        check_rows(what, &rows_of(&tape, f), &vec![None; fwd.segments.len()]);
    }

    let a = fwd.attention(&tape);
    for (s, w) in a.words.iter().enumerate() {
        check_rows(what, std::slice::from_ref(w), &seg_ids(s));
    }
    if let Some(f) = &a.facts {
        check_rows(what, std::slice::from_ref(f), &vec![None; f.len()]);
    }
    if let Some(rows) = fwd.label_attention(&tape) {
        assert_eq!(rows.len(), m.labels.len());
        check_rows(what, &rows, &seg_ids(0));
    }
}

#[test]
fn attention_sums_to_one_and_skips_padding() {
    let models: Vec<Model<f64>> = Architecture::ALL
        .into_iter()
        .flat_map(|a| (0..2).map(move |s| model(a, s)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..INPUTS {
        let input = random_input(&mut rng);
        check_case(&models[i % models.len()], &input);
    }
}

#[test]
fn every_encoder_layer_and_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = TransformerConfig {
        layers: 3,
        heads: 3,
        model_dim: 6,
        ff_dim: 7,
        max_positions: 9,
    };
    let mut store = ljp_tensor::ParamStore::<f64>::new();
    let emb = Embedding::new(&mut store, "emb", VOCAB, 6, true, &mut rng).unwrap();
    let enc = TransformerEncoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
    for _ in 0..200 {
        let t = rng.gen_range(1..=9);
        let mut ids: Vec<usize> = (0..t).map(|_| if rng.gen_bool(0.3) { PAD } else { rng.gen_range(2..VOCAB) }).collect();
        ids[rng.gen_range(0..t)] = 2;
        let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let mut tape = Tape::new();
        let e = enc.encode(&mut tape, &store, &emb, &ids, Some(&mask)).unwrap();
        assert_eq!(e.attention.len(), 3);
        let cols: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        for heads in &e.attention {
            assert_eq!(heads.len(), 3);
            for &h in heads {
                check_rows("encoder", &rows_of(&tape, h), &cols);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn padding_extension_leaves_hierarchical_outputs_unchanged(
        facts in prop::collection::vec(prop::collection::vec(2usize..VOCAB, 1..6), 1..4),
        pad in 1usize..3,
        which in 0usize..4,
    ) {
        for arch in [Architecture::Han, Architecture::HierEnc] {
            let m = model(arch, 0);
            let base = m.output(&CaseInput::from_ids(facts.clone())).unwrap();
            let mut padded = facts.clone();
            let k = which % padded.len();
            padded[k].extend(std::iter::repeat_n(PAD, pad));
            let got = m.output(&CaseInput::from_ids(padded)).unwrap();
            for (x, y) in base.iter().zip(&got) {
                prop_assert!((x - y).abs() < 1e-12, "{}: {x} vs {y}", arch.as_str());
            }
        }
    }
}
