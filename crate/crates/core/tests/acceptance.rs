//! Acceptance criteria. Every test writes one `PASS`/`FAIL` line to stderr
//! (bypassing the test harness capture) before asserting.

use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use cyst::autodiff::{Axis, Tape, Var};
use cyst::config::RunConfig;
use cyst::corpus::{
    oracle_transfer_score, synth_generate, Batch, EpochPlan, Sentence, Style, StyledCorpus,
    SubstitutionOracle, SynthConfig, Vocabulary, BOS, EOS,
};
use cyst::eval::{
    content_preservation, eval_accuracy, perplexity, run_ablations, AblationRow, EmbeddingTable,
    Evaluator, FrozenClassifier, StyleJudge, TokenScorer, UniformLm, Variant,
};
use cyst::gradcheck;
use cyst::nn::{
    read_checkpoint, write_checkpoint, Attention, Gru, Lstm, LstmState, ModelDims, SeqInput,
    SoftSequence, TransferModel,
};
use cyst::optim::AdamState;
use cyst::params::ParamStore;
use cyst::rng::seeded_rng;
use cyst::tensor::Tensor;
use cyst::train::{loss_class_od, objective, train, TrainConfig};
use cyst::Result;
use rand::Rng;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr().lock(),
        "{status} criterion {id} ({name}): {detail}"
    );
}

// ---------------------------------------------------------------- 1 ----

const OP_TOL: f64 = 1e-4;
const OBJECTIVE_TOL: f64 = 1e-3;
const GRAD_FLOOR: f64 = 1e-6;

/// Max relative error of `f` over inputs of the given shapes, all treated as
/// parameters, reduced to a scalar with fixed random weights.
fn op_case<F>(shapes: &[(usize, usize)], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            store
                .add(format!("x{i}"), Tensor::uniform(&[r, c], 1.0, &mut rng))
                .unwrap()
        })
        .collect();
    let weights_seed: u64 = rng.gen();
    let coords = gradcheck::all_coords(&store);
    let probes = gradcheck::check(
        &mut store,
        &coords,
        gradcheck::DEFAULT_STEP,
        |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let out = f(tape, &vars)?;
            let (r, c) = tape.dims(out);
            let w = Tensor::uniform(&[r, c], 1.0, &mut seeded_rng(weights_seed));
            let w = tape.constant(&w);
            let prod = tape.mul(out, w)?;
            Ok(tape.sum(prod))
        },
    )
    .unwrap();
    gradcheck::max_relative_error(&probes, GRAD_FLOOR)
}

fn randomize(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = seeded_rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.get_mut(id).data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

fn tiny_model(seed: u64, attention: bool) -> TransferModel {
    let vocab = Vocabulary::from_tokens((0..6).map(|i| format!("t{i}")), 1);
    let dims = ModelDims {
        vocab: vocab.len(),
        emb: 3,
        hidden: 4,
        cls_emb: 3,
        filters: 2,
        widths: vec![1, 2],
        attention,
    };
    let mut model = TransferModel::new(vocab, dims, seed).unwrap();
    randomize(&mut model.params, 0.5, seed + 100);
    model
}

fn composite_cases() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    let mut rng = seeded_rng(31);
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "g", 3, 4, &mut rng).unwrap();
    randomize(&mut store, 0.8, 1);
    let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
    let h = Tensor::uniform(&[2, 4], 1.0, &mut rng);
    let coords = gradcheck::all_coords(&store);
    let p = gradcheck::check(
        &mut store,
        &coords,
        gradcheck::DEFAULT_STEP,
        |tape, store| {
            let (xv, hv) = (tape.constant(&x), tape.constant(&h));
            let o = gru.step(tape, store, xv, hv)?;
            let sq = tape.mul(o, o)?;
            Ok(tape.sum(sq))
        },
    )
    .unwrap();
    out.push(("gru step", gradcheck::max_relative_error(&p, GRAD_FLOOR)));

    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 3, 4, &mut rng).unwrap();
    randomize(&mut store, 0.8, 2);
    let c = Tensor::uniform(&[2, 4], 1.0, &mut rng);
    let coords = gradcheck::all_coords(&store);
    let p = gradcheck::check(
        &mut store,
        &coords,
        gradcheck::DEFAULT_STEP,
        |tape, store| {
            let (xv, hv, cv) = (tape.constant(&x), tape.constant(&h), tape.constant(&c));
            let s = lstm.step(tape, store, xv, LstmState { h: hv, c: cv })?;
            let both = tape.concat_cols(&[s.h, s.c])?;
            let sq = tape.mul(both, both)?;
            Ok(tape.sum(sq))
        },
    )
    .unwrap();
    out.push(("lstm step", gradcheck::max_relative_error(&p, GRAD_FLOOR)));

    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "a", 4, 4, 3, &mut rng).unwrap();
    let states = store
        .add("states", Tensor::uniform(&[2 * 5, 4], 1.0, &mut rng))
        .unwrap();
    let query = store
        .add("query", Tensor::uniform(&[2, 4], 1.0, &mut rng))
        .unwrap();
    randomize(&mut store, 0.9, 3);
    let coords = gradcheck::all_coords(&store);
    let p = gradcheck::check(
        &mut store,
        &coords,
        gradcheck::DEFAULT_STEP,
        |tape, store| {
            let s = tape.param(store, states);
            let q = tape.param(store, query);
            let keys = att.keys(tape, store, s)?;
            let (ctx, w) = att.attend(tape, store, q, keys, s, &[5, 3])?;
            let sq = tape.mul(ctx, ctx)?;
            let a = tape.sum(sq);
            let b = tape.mul(w, w)?;
            let b = tape.sum(b);
            tape.add(a, b)
        },
    )
    .unwrap();
    out.push(("attention", gradcheck::max_relative_error(&p, GRAD_FLOOR)));

    let mut model = tiny_model(4, true);
    let batch = Batch::new(Style::Source, &[&[4, 5, 6], &[7, 8]]);
    let coords = gradcheck::all_coords(&model.params);
    let m = model.clone();
    let p = gradcheck::check(
        &mut model.params,
        &coords,
        gradcheck::DEFAULT_STEP,
        |tape, store| {
            let mut mm = m.clone();
            mm.params.copy_values_from(store)?;
            let enc = mm.encode(tape, &SeqInput::from(&batch), &[Style::Source; 2])?;
            let soft = mm.decode_soft(tape, &enc, &[Style::Target; 2], 0.7, 4)?;
            let logits = mm.classify(tape, &SeqInput::Soft(&soft))?;
            let sq = tape.mul(logits, logits)?;
            Ok(tape.sum(sq))
        },
    )
    .unwrap();
    out.push((
        "encode, soft decode, classify",
        gradcheck::max_relative_error(&p, GRAD_FLOOR),
    ));
    out
}

fn objective_case() -> f64 {
    let mut model = tiny_model(9, true);
    let b0 = Batch::new(Style::Source, &[&[4, 5, 6], &[7, 8]]);
    let b1 = Batch::new(Style::Target, &[&[9, 4], &[6, 6, 5]]);
    let cfg = TrainConfig {
        max_gen_len: 4,
        ..TrainConfig::default()
    };
    let coords = gradcheck::all_coords(&model.params);
    let m = model.clone();
    let p = gradcheck::check(
        &mut model.params,
        &coords,
        gradcheck::DEFAULT_STEP,
        |tape, store| {
            let mut mm = m.clone();
            mm.params.copy_values_from(store)?;
            Ok(objective(tape, &mm, &b0, &b1, &cfg, 0.7)?.0)
        },
    )
    .unwrap();
    gradcheck::max_relative_error(&p, GRAD_FLOOR)
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    type Case = (
        &'static str,
        Vec<(usize, usize)>,
        Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
    );
    let cases: Vec<Case> = vec![
        (
            "add",
            vec![(2, 3), (2, 3)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![(2, 3), (2, 3)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![(2, 3), (2, 3)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![(2, 3)],
            Box::new(|t, v| Ok(t.scale(v[0], -1.7))),
        ),
        (
            "add_row",
            vec![(3, 4), (1, 4)],
            Box::new(|t, v| t.add_row(v[0], v[1])),
        ),
        (
            "matmul",
            vec![(4, 5), (5, 3)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "linear",
            vec![(2, 3), (3, 4), (1, 4)],
            Box::new(|t, v| t.linear(v[0], v[1], v[2])),
        ),
        (
            "concat_cols",
            vec![(2, 2), (2, 3)],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]])),
        ),
        (
            "slice_cols",
            vec![(2, 5)],
            Box::new(|t, v| t.slice_cols(v[0], 1, 4)),
        ),
        (
            "concat_rows",
            vec![(2, 3), (1, 3)],
            Box::new(|t, v| t.concat_rows(&[v[0], v[1]])),
        ),
        (
            "slice_rows",
            vec![(4, 3)],
            Box::new(|t, v| t.slice_rows(v[0], 1, 3)),
        ),
        (
            "reshape",
            vec![(2, 6)],
            Box::new(|t, v| t.reshape(v[0], 3, 4)),
        ),
        (
            "transpose",
            vec![(2, 3)],
            Box::new(|t, v| Ok(t.transpose(v[0]))),
        ),
        (
            "sigmoid",
            vec![(2, 3)],
            Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        ),
        ("tanh", vec![(2, 3)], Box::new(|t, v| Ok(t.tanh(v[0])))),
        (
            "softmax rows",
            vec![(3, 4)],
            Box::new(|t, v| Ok(t.softmax(v[0], Axis::Rows))),
        ),
        (
            "softmax cols",
            vec![(3, 4)],
            Box::new(|t, v| Ok(t.softmax(v[0], Axis::Cols))),
        ),
        (
            "masked_softmax",
            vec![(2, 4)],
            Box::new(|t, v| t.masked_softmax(v[0], Some(&[2, 4]))),
        ),
        (
            "lookup",
            vec![(5, 3)],
            Box::new(|t, v| t.lookup(v[0], &[4, 0, 4, 2])),
        ),
        (
            "max_over_time",
            vec![(6, 3)],
            Box::new(|t, v| t.max_over_time(v[0], &[3, 2])),
        ),
        ("sum", vec![(2, 3)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", vec![(2, 3)], Box::new(|t, v| Ok(t.mean(v[0])))),
        (
            "cross_entropy",
            vec![(3, 4)],
            Box::new(|t, v| t.cross_entropy(v[0], &[1, 3, 0], &[0.5, 0.2, 0.3])),
        ),
        (
            "repeat_add",
            vec![(6, 3), (2, 3)],
            Box::new(|t, v| t.repeat_add(v[0], v[1], 3)),
        ),
        (
            "weighted_rows",
            vec![(2, 3), (6, 4)],
            Box::new(|t, v| t.weighted_rows(v[0], v[1])),
        ),
    ];
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, (name, shapes, f)) in cases.iter().enumerate() {
        let err = op_case(shapes, 50 + i as u64, f);
        worst = worst.max(err);
        if !(err < OP_TOL) {
            failures.push(format!("{name}={err:.2e}"));
        }
    }
    for (name, err) in composite_cases() {
        worst = worst.max(err);
        if !(err < OP_TOL) {
            failures.push(format!("{name}={err:.2e}"));
        }
    }
    let obj = objective_case();
    if !(obj < OBJECTIVE_TOL) {
        failures.push(format!("objective={obj:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 60.0;
    verdict(
        1,
        "gradient suite",
        ok,
        &format!("max op/composite rel err {worst:.2e} (< {OP_TOL:e}), five-loss objective {obj:.2e} (< {OBJECTIVE_TOL:e}), {secs:.1}s (< 60s) {failures:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 2 ----

fn small_corpus(per_style: usize) -> (StyledCorpus, SubstitutionOracle) {
    synth_generate(&SynthConfig {
        per_style,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        emb: 8,
        cls_emb: 6,
        filters: 4,
        lr: 0.005,
        batch: 16,
        max_epochs: 2,
        pretrain_epochs: 1,
        max_gen_len: 8,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn criterion_2_loss_identities() {
    let (corpus, _) = small_corpus(120);
    let cfg = small_config();
    let mut model = TransferModel::new(
        corpus.vocab.clone(),
        cfg.model_dims(corpus.vocab.len()),
        cfg.seed,
    )
    .unwrap();
    let mut opt = AdamState::new(&model.params, cfg.lr);
    let plan = EpochPlan::new(&corpus.train, cfg.batch, &mut seeded_rng(1));
    let mut worst_sum: f64 = 0.0;
    for (a, b) in &plan.steps {
        let mut tape = Tape::new();
        let (loss, parts) = objective(&mut tape, &model, a, b, &cfg, 0.8).unwrap();
        let terms: f64 = parts.terms().iter().map(|(_, v)| v).sum();
        worst_sum = worst_sum
            .max((tape.scalar(loss) - terms).abs())
            .max((parts.total - terms).abs());
        tape.backward(loss, &mut model.params).unwrap();
        opt.step(&mut model.params).unwrap();
    }

    let v = corpus.vocab.len();
    let mut tape = Tape::new();
    let logits = tape.constant_matrix(3, v, vec![0.0; 3 * v]);
    let ce = tape
        .cross_entropy(logits, &[4, 9, EOS], &[1.0 / 3.0; 3])
        .unwrap();
    let uniform_err = (tape.scalar(ce) - (v as f64).ln()).abs();

    let batch = &plan.steps[0].0;
    let mut tape = Tape::new();
    let od = loss_class_od(&mut tape, &model, batch).unwrap();
    tape.backward(od, &mut model.params).unwrap();
    let leaked: Vec<String> = model
        .params
        .iter()
        .filter(|(id, _, _)| !model.is_classifier_param(*id))
        .filter(|(_, _, t)| t.grad().map_or(false, |g| g.iter().any(|&x| x != 0.0)))
        .map(|(_, name, _)| name.to_string())
        .collect();

    let ok = worst_sum <= 1e-9 && uniform_err <= 1e-9 && leaked.is_empty();
    verdict(
        2,
        "loss identities",
        ok,
        &format!(
            "|total - sum of terms| max {worst_sum:.1e} over {} steps, |CE(uniform) - ln V| {uniform_err:.1e}, class_od grads on E/G nonzero in {leaked:?}",
            plan.steps.len()
        ),
    );
    assert!(ok);
}

// ------------------------------------------------------------ 3 and 4 ----

struct Experiment {
    config: RunConfig,
    corpus: StyledCorpus,
    oracle: SubstitutionOracle,
    sources: Vec<Vec<usize>>,
    rows: Vec<AblationRow>,
    real_ppl: f64,
}

fn experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synthetic.cfg");
        let config = RunConfig::load(&path).unwrap();
        let (corpus, oracle) = synth_generate(&SynthConfig::default()).unwrap();
        let evaluator = Evaluator::build(&corpus, Some(&oracle), None, &config.eval).unwrap();
        let real: Vec<Vec<usize>> = StyledCorpus::of_style(&corpus.test, Style::Target)
            .map(|s| s.ids.clone())
            .collect();
        let real_ppl = perplexity(&evaluator.lm, &real).unwrap();
        let rows = run_ablations(&corpus, &config.train, &evaluator).unwrap();
        let sources = StyledCorpus::of_style(&corpus.test, Style::Source)
            .map(|s| s.ids.clone())
            .collect();
        Experiment {
            config,
            corpus,
            oracle,
            sources,
            rows,
            real_ppl,
        }
    })
}

fn row(exp: &Experiment, v: Variant) -> &AblationRow {
    exp.rows.iter().find(|r| r.variant == v).unwrap()
}

#[test]
fn criterion_3_synthetic_end_to_end() {
    let exp = experiment();
    let full = row(exp, Variant::Full);
    let t = &exp.config.train;
    let epochs = t.warmup_epochs + t.pretrain_epochs + full.log.len();
    let transferred = full
        .model
        .transfer(&exp.sources, Style::Source, Style::Target)
        .unwrap();
    let kept = exp
        .sources
        .iter()
        .zip(&transferred)
        .map(|(s, o)| oracle_transfer_score(s, o, &exp.oracle).content_kept)
        .sum::<f64>()
        / exp.sources.len() as f64;
    let r = &full.report;
    let ppl_ratio = r.ppl / exp.real_ppl;
    let ok = epochs <= 30
        && full.train_seconds < 1200.0
        && r.acc >= 95.0
        && kept >= 0.80
        && r.cp >= 0.85
        && ppl_ratio <= 2.0
        && exp.corpus.vocab.len() == 60;
    verdict(
        3,
        "synthetic end-to-end",
        ok,
        &format!(
            "epochs {epochs} (<= 30), train {:.0}s (< 1200s), oracle acc {:.2}% (>= 95), content_kept {kept:.3} (>= 0.80), CP {:.3} (>= 0.85), PPL {:.3} vs real {:.3} ratio {ppl_ratio:.3} (<= 2)",
            full.train_seconds, r.acc, r.cp, r.ppl, exp.real_ppl
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_ablation_directionality() {
    let exp = experiment();
    let full = &row(exp, Variant::Full).report;
    let neither = &row(exp, Variant::Neither).report;
    let table: Vec<String> = exp
        .rows
        .iter()
        .map(|r| r.table_line().replace('\t', " "))
        .collect();
    let ok = neither.cp < full.cp
        && neither.ppl > full.ppl
        && neither.acc >= full.acc
        && exp.rows.len() == 4;
    verdict(
        4,
        "ablation directionality",
        ok,
        &format!(
            "neither CP {:.4} < full {:.4}, PPL {:.3} > {:.3}, acc {:.2} >= {:.2}; rows {table:?}",
            neither.cp, full.cp, neither.ppl, full.ppl, neither.acc, full.acc
        ),
    );
    assert!(ok);
}

/// Properties of the converged full model from the shared experiment.
#[test]
fn converged_synthetic_model() {
    let exp = experiment();
    let full = row(exp, Variant::Full);
    let model = &full.model;

    // i -> i path reproduces its input
    let test: Vec<&Sentence> = exp.corpus.test.iter().collect();
    let mut same = 0usize;
    let mut total = 0usize;
    for style in [Style::Source, Style::Target] {
        let sents: Vec<Vec<usize>> = StyledCorpus::of_style(&exp.corpus.test, style)
            .map(|s| s.ids.clone())
            .collect();
        let out = model.transfer(&sents, style, style).unwrap();
        for (s, o) in sents.iter().zip(&out) {
            same += s.iter().zip(o).filter(|(a, b)| a == b).count();
            total += s.len().max(o.len());
        }
    }
    let self_exact = same as f64 / total as f64;
    assert!(self_exact >= 0.90, "i->i token-exact {self_exact:.3}");

    // the model's own classifier on held-out real text
    let mut tape = Tape::new();
    let mut hits = 0usize;
    let mut od = 0.0;
    for style in [Style::Source, Style::Target] {
        let sents: Vec<Sentence> = test
            .iter()
            .filter(|s| s.style == style)
            .map(|s| (*s).clone())
            .collect();
        let batch = Batch::from_sentences(style, &sents);
        let pred = model
            .classifier()
            .predict(&model.params, &SeqInput::from(&batch))
            .unwrap();
        hits += pred.iter().filter(|&&p| p == style.index()).count();
        let l = loss_class_od(&mut tape, model, &batch).unwrap();
        od += tape.scalar(l) / 2.0;
    }
    let cls_acc = hits as f64 / test.len() as f64;
    assert!(cls_acc >= 0.99, "classifier held-out accuracy {cls_acc:.4}");
    assert!(od < 0.05, "class_od on held-out text {od:.4}");

    // no marked token survives transfer
    let transferred = model
        .transfer(&exp.sources, Style::Source, Style::Target)
        .unwrap();
    let leaks = transferred
        .iter()
        .filter(|t| t.iter().any(|&i| exp.oracle.is_marked(i)))
        .count();
    assert_eq!(leaks, 0);

    // CNN judge and oracle agree on the transferred test set
    let judge = FrozenClassifier::train(
        exp.corpus.vocab.len(),
        &exp.corpus.test,
        &exp.config.eval.judge,
    )
    .unwrap();
    let cnn = eval_accuracy(&transferred, Style::Target, &StyleJudge::Cnn(judge)).unwrap();
    let exact = eval_accuracy(
        &transferred,
        Style::Target,
        &StyleJudge::Oracle(exp.oracle.clone()),
    )
    .unwrap();
    assert!(
        (cnn - exact).abs() <= 2.0,
        "cnn {cnn:.2} vs oracle {exact:.2}"
    );

    // selected epoch is no worse than the first on dev
    let best = full
        .log
        .iter()
        .map(|r| r.dev_total)
        .fold(f64::INFINITY, f64::min);
    assert!(best <= full.log[0].dev_total);

    // every ablation loses content relative to the full model
    for r in &exp.rows {
        assert!(
            full.report.cp >= r.report.cp,
            "{} CP {:.4} above full {:.4}",
            r.variant,
            r.report.cp,
            full.report.cp
        );
    }
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_5_hard_soft_consistency() {
    let mut model = tiny_model(12, true);
    model.randomize(0.6, &mut seeded_rng(13));
    let v = model.vocab.len();
    let mut rng = seeded_rng(14);
    let sentences: Vec<Vec<usize>> = (0..100)
        .map(|_| {
            let n = rng.gen_range(1..=12);
            (0..n).map(|_| rng.gen_range(4..v)).collect()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for chunk in sentences.chunks(10) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        let batch = Batch::new(Style::Source, &refs);
        let styles = vec![Style::Source; chunk.len()];
        let mut tape = Tape::new();
        let soft = SoftSequence::one_hot(&mut tape, &batch, v);
        let hard_enc = model
            .encode(&mut tape, &SeqInput::from(&batch), &styles)
            .unwrap();
        let soft_enc = model
            .encode(&mut tape, &SeqInput::Soft(&soft), &styles)
            .unwrap();
        let hard_cls = model.classify(&mut tape, &SeqInput::from(&batch)).unwrap();
        let soft_cls = model.classify(&mut tape, &SeqInput::Soft(&soft)).unwrap();
        for (a, b) in [
            (hard_enc.states, soft_enc.states),
            (hard_enc.final_state, soft_enc.final_state),
            (hard_cls, soft_cls),
        ] {
            for (x, y) in tape.value(a).iter().zip(tape.value(b)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let ok = worst <= 1e-9;
    verdict(
        5,
        "hard/soft consistency",
        ok,
        &format!("max |hard - one-hot soft| {worst:.1e} over 100 sentences (<= 1e-9)"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 6 ----

struct TableLm {
    probs: Vec<Vec<f64>>,
}

impl TokenScorer for TableLm {
    fn log_probs(&self, sentences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(sentences
            .iter()
            .map(|s| {
                let mut prev = BOS;
                s.iter()
                    .chain(std::iter::once(&EOS))
                    .map(|&t| {
                        let lp = self.probs[prev][t].ln();
                        prev = t;
                        lp
                    })
                    .collect()
            })
            .collect())
    }
}

#[test]
fn criterion_6_metric_oracles() {
    let mut rng = seeded_rng(21);
    let mut table = EmbeddingTable::new(5);
    for i in 0..20 {
        table
            .insert(
                format!("t{i}"),
                (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
    }
    let mut self_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..8);
        let s: Vec<String> = (0..n)
            .map(|_| format!("t{}", rng.gen_range(0..20)))
            .collect();
        self_err = self_err.max((content_preservation(&s, &s, &table).unwrap() - 1.0).abs());
    }

    let uniform_err = [60usize, 100]
        .iter()
        .map(|&v| {
            (perplexity(&UniformLm { vocab_size: v }, &[vec![4, 5, 6], vec![7]]).unwrap()
                - v as f64)
                .abs()
        })
        .fold(0.0, f64::max);

    let mut probs = vec![vec![0.0; 7]; 7];
    probs[BOS][4] = 0.5;
    probs[4][5] = 0.25;
    probs[5][6] = 0.8;
    probs[6][EOS] = 0.9;
    let hand_ppl = (-(0.5f64.ln() + 0.25f64.ln() + 0.8f64.ln() + 0.9f64.ln()) / 4.0).exp();
    let ppl_err = (perplexity(&TableLm { probs }, &[vec![4, 5, 6]]).unwrap() - hand_ppl).abs();

    // a=(1,2) b=(3,-1) c=(0,1); [a b] pools to (1,-1, 2,0.5, 3,2), [a c] to (0,1, 0.5,1.5, 1,2)
    let mut cp_table = EmbeddingTable::new(2);
    cp_table.insert("a", vec![1.0, 2.0]).unwrap();
    cp_table.insert("b", vec![3.0, -1.0]).unwrap();
    cp_table.insert("c", vec![0.0, 1.0]).unwrap();
    let hand_cp = 7.75 / (19.25f64.sqrt() * 8.5f64.sqrt());
    let cp_err =
        (content_preservation(&["a", "b"], &["a", "c"], &cp_table).unwrap() - hand_cp).abs();

    let ok = self_err <= 1e-9 && uniform_err <= 1e-6 && ppl_err <= 1e-9 && cp_err <= 1e-9;
    verdict(
        6,
        "metric oracles",
        ok,
        &format!("|CP(s,s)-1| {self_err:.1e}, |PPL_uniform-V| {uniform_err:.1e}, 3-token PPL err {ppl_err:.1e}, 2-d CP err {cp_err:.1e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_7_determinism() {
    let (corpus, _) = small_corpus(150);
    let cfg = small_config();
    let run = || {
        let mut lines = Vec::new();
        let out = train(&corpus, &cfg, |r, _, _| {
            lines.push(format!("{}\t{:x}", r.log_line(), r.dev_total.to_bits()));
            Ok(())
        })
        .unwrap();
        (lines, write_checkpoint(&out.model))
    };
    let (log_a, ckpt_a) = run();
    let (log_b, ckpt_b) = run();
    let ok = log_a == log_b && ckpt_a == ckpt_b && !log_a.is_empty();
    verdict(
        7,
        "determinism",
        ok,
        &format!(
            "{} epoch log lines identical: {}, {}-byte checkpoints identical: {}",
            log_a.len(),
            log_a == log_b,
            ckpt_a.len(),
            ckpt_a == ckpt_b
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_8_checkpoint_round_trip() {
    let (corpus, _) = small_corpus(150);
    let cfg = TrainConfig {
        max_epochs: 1,
        ..small_config()
    };
    let model = train(&corpus, &cfg, |_, _, _| Ok(())).unwrap().model;
    let bytes = write_checkpoint(&model);
    let loaded = read_checkpoint(&bytes).unwrap();
    let again = write_checkpoint(&loaded);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    cyst::nn::save_checkpoint(&loaded, &path).unwrap();
    let from_disk = cyst::nn::load_checkpoint(&path).unwrap();
    let sources: Vec<Vec<usize>> = corpus.test.iter().map(|s| s.ids.clone()).collect();
    let before = model
        .transfer(&sources, Style::Source, Style::Target)
        .unwrap();
    let after = from_disk
        .transfer(&sources, Style::Source, Style::Target)
        .unwrap();
    let ok = bytes == again && write_checkpoint(&from_disk) == bytes && before == after;
    verdict(
        8,
        "checkpoint round trip",
        ok,
        &format!(
            "save(load(save(m))) identical: {}, transfers identical on {} sentences: {}",
            bytes == again,
            sources.len(),
            before == after
        ),
    );
    assert!(ok);
}
