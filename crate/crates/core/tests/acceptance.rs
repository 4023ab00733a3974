//! Acceptance criteria. Each test prints one PASS/FAIL line straight to
//! stderr so the summary shows up even when output is captured.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replysent_core::aggregate::{aggregate_label, AggregationThresholds, ReplyLabelCounts};
use replysent_core::corpus::{
    load_labeled_corpus, load_threads, write_labeled_corpus, write_threads, LabeledTweet, RecordFormat,
    SentimentLabel, ThreadRecord,
};
use replysent_core::models::{
    encode_checkpoint, load_checkpoint, lstm_cell, save_checkpoint, ArchitectureConfig, BiLstmConfig, Classifier,
    CnnConfig, LstmWeights, SentimentModel,
};
use replysent_core::nncore::{grad_check, Graph, ParamStore, RngStream, Tensor, Var};
use replysent_core::pipeline::{
    eq1, evaluate, two_stage_run, ConfusionMatrix, Metrics, PipelineConfig, Report, TrainConfig,
};
use replysent_core::text::{build_vocabulary, tokenize};
use replysent_core::Result;

fn verdict(n: u32, name: &str, failures: &[String], elapsed: Duration) {
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "acceptance criterion {n} ({name}): {status} [{:.2}s]",
        elapsed.as_secs_f64()
    );
    assert!(failures.is_empty(), "criterion {n} failed:\n{}", failures.join("\n"));
}

fn check(failures: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        failures.push(msg());
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

const GRAD_TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn seeded(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// `sum(tanh(x) * k)` for a fixed random `k`: a nonlinear scalar readout.
fn readout(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let k = g.constant(seeded(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))?;
    let t = g.tanh(x)?;
    let m = g.mul(t, k)?;
    g.sum(m)
}

fn unit_scale(m: &mut Classifier<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut().iter_mut() {
        for x in p.value.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    // The pad row is frozen at zero.
    let emb = m.params().ids().next().unwrap();
    let dim = m.params().value(emb).shape()[1];
    m.params_mut().get_mut(emb).value.data_mut()[..dim].fill(0.0);
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut run = |name: &str, params: &mut ParamStore<f64>, f: &dyn for<'a> Fn(&mut Graph<'a, f64>) -> Result<Var>| {
        match grad_check(params, f, EPS, None) {
            Ok(err) if err < GRAD_TOL => {}
            Ok(err) => failures.push(format!("{name}: max relative error {err:e}")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    };

    let mut p = ParamStore::new();
    let table = p.add("table", seeded(&[6, 4], 1.0, &mut rng));
    run("embedding", &mut p, &|g| {
        let x = g.embedding(table, &[1, 3, 3, 5], Some(0))?;
        readout(g, x, 10)
    });

    let mut p = ParamStore::new();
    let w = p.add("w", seeded(&[3, 4], 1.0, &mut rng));
    run("dropout (inference path)", &mut p, &|g| {
        let w = g.param(w);
        let x = g.dropout(w, 0.5, false, &mut RngStream::new(3))?;
        readout(g, x, 11)
    });

    let mut p = ParamStore::new();
    let (inp, hid) = (3, 4);
    let cell = LstmWeights {
        w_ih: p.add("w_ih", seeded(&[inp, 4 * hid], 1.0, &mut rng)),
        w_hh: p.add("w_hh", seeded(&[hid, 4 * hid], 1.0, &mut rng)),
        bias: p.add("bias", seeded(&[4 * hid], 1.0, &mut rng)),
    };
    let (x0, h0, c0) = (
        seeded(&[2, inp], 1.0, &mut rng),
        seeded(&[2, hid], 1.0, &mut rng),
        seeded(&[2, hid], 1.0, &mut rng),
    );
    run("lstm cell", &mut p, &|g| {
        let vars = cell.bind(g);
        let x = g.constant(x0.clone())?;
        let h = g.constant(h0.clone())?;
        let c = g.constant(c0.clone())?;
        let (h1, c1) = lstm_cell(g, vars, x, h, c)?;
        let a = readout(g, h1, 12)?;
        let b = readout(g, c1, 13)?;
        g.add(a, b)
    });

    let mut p = ParamStore::new();
    let input = p.add("input", seeded(&[6, 3], 1.0, &mut rng));
    let filt = p.add("filter", seeded(&[3, 3, 4], 1.0, &mut rng));
    run("conv1d", &mut p, &|g| {
        let (x, w) = (g.param(input), g.param(filt));
        let y = g.conv1d(x, w)?;
        readout(g, y, 14)
    });

    let mut p = ParamStore::new();
    // Well-separated values keep the argmax away from ties.
    let vals: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64 * 0.1 - 1.0).collect();
    let seq = p.add("seq", Tensor::new(vec![5, 4], vals));
    run("max_over_time", &mut p, &|g| {
        let x = g.param(seq);
        let y = g.max_over_time(x)?;
        readout(g, y, 15)
    });

    let mut p = ParamStore::new();
    let fc_w = p.add("fc.weight", seeded(&[5, 3], 1.0, &mut rng));
    let fc_b = p.add("fc.bias", seeded(&[3], 1.0, &mut rng));
    let feats = seeded(&[4, 5], 1.0, &mut rng);
    run("fully connected + weighted cross-entropy", &mut p, &|g| {
        let x = g.constant(feats.clone())?;
        let (w, b) = (g.param(fc_w), g.param(fc_b));
        let z = g.matmul(x, w)?;
        let z = g.add_bias(z, b)?;
        g.weighted_cross_entropy(z, &[0, 2, 1, 2], &[1.6, 1.1, 0.7])
    });

    let mut p = ParamStore::new();
    let logits = p.add("logits", seeded(&[3, 3], 3.0, &mut rng));
    run("weighted cross-entropy", &mut p, &|g| {
        let z = g.param(logits);
        g.weighted_cross_entropy(z, &[2, 0, 1], &[0.5, 2.0, 1.25])
    });

    let lstm_cfg = BiLstmConfig {
        vocab_size: 12,
        embed_dim: 4,
        hidden_size: 5,
        ..BiLstmConfig::stage1(12)
    };
    let mut stack = Classifier::<f64>::new(ArchitectureConfig::BiLstm(lstm_cfg), None, 4).unwrap();
    unit_scale(&mut stack, 20);
    let mut p = stack.params().clone();
    run("bilstm stack (padded batch)", &mut p, &|g| {
        let z = stack.logits(g, &[vec![3, 7, 2, 9], vec![5, 4]], false, &mut RngStream::new(0))?;
        g.weighted_cross_entropy(z, &[2, 0], &[1.0, 1.0, 1.0])
    });
    let mut p = stack.params().clone();
    run("full bilstm model, 3-token input", &mut p, &|g| {
        let z = stack.logits(g, &[vec![3, 7, 2]], false, &mut RngStream::new(0))?;
        g.weighted_cross_entropy(z, &[1], &[0.7, 1.3, 1.0])
    });

    let cnn_cfg = CnnConfig {
        vocab_size: 12,
        embed_dim: 4,
        maps_per_width: 3,
        ..CnnConfig::standard(12)
    };
    let mut cnn = Classifier::<f64>::new(ArchitectureConfig::Cnn(cnn_cfg), None, 4).unwrap();
    unit_scale(&mut cnn, 21);
    let mut p = cnn.params().clone();
    // Five tokens fill the widest filter, so no frozen pad row is read.
    run("full cnn model, 5-token input", &mut p, &|g| {
        let z = cnn.logits(g, &[vec![3, 7, 2, 9, 4]], false, &mut RngStream::new(0))?;
        g.weighted_cross_entropy(z, &[0], &[0.7, 1.3, 1.0])
    });

    let elapsed = start.elapsed();
    check(&mut failures, elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"));
    verdict(1, "gradient correctness", &failures, elapsed);
}

// ---------------------------------------------------------------------------
// 2. Aggregation rule against an independent brute-force oracle

fn brute_force(p: u64, n: u64, u: u64) -> SentimentLabel {
    let q = |x: u64| Ratio::from_integer(x as i128);
    let total = q(p + n + u);
    if q(u) > Ratio::new(85, 100) * total {
        SentimentLabel::Neutral
    } else if q(p) > Ratio::new(3, 2) * q(n) {
        SentimentLabel::Positive
    } else if q(n) > Ratio::new(8, 5) * q(p) {
        SentimentLabel::Negative
    } else {
        SentimentLabel::Neutral
    }
}

#[test]
fn criterion_2_aggregation_oracle() {
    let start = Instant::now();
    let th = AggregationThresholds::default();
    let mut failures = Vec::new();
    let mut triples = 0;
    for total in 0..=30u64 {
        for p in 0..=total {
            for n in 0..=total - p {
                let u = total - p - n;
                triples += 1;
                let got = aggregate_label(ReplyLabelCounts::new(p, n, u), &th);
                match (total, got) {
                    (0, Err(_)) => {}
                    (0, Ok(l)) => failures.push(format!("(0,0,0) gave {l}")),
                    (_, Ok(l)) if l == brute_force(p, n, u) => {}
                    (_, other) => failures.push(format!("({p},{n},{u}): {other:?} vs {}", brute_force(p, n, u))),
                }
            }
        }
    }
    check(&mut failures, triples == 5456, || format!("enumerated {triples} triples"));
    let agg = |p, n, u| aggregate_label(ReplyLabelCounts::new(p, n, u), &th).unwrap();
    // 17 of 20 neutral is exactly 85%: the first guard must not fire.
    check(&mut failures, agg(3, 0, 17) == SentimentLabel::Positive, || "17/20 neutral boundary".into());
    // 3 vs 2 is exactly 1.5x: falls through to neutral.
    check(&mut failures, agg(3, 2, 0) == SentimentLabel::Neutral, || "3 pos vs 2 neg boundary".into());
    let elapsed = start.elapsed();
    check(&mut failures, elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"));
    verdict(2, "aggregation oracle equivalence", &failures, elapsed);
}

// ---------------------------------------------------------------------------
// 3. Metric fixtures

#[test]
fn criterion_3_metric_fixtures() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let cm = ConfusionMatrix::new([[3, 1, 0], [1, 2, 1], [0, 1, 3]]);
    let m = Metrics::from_confusion(&cm);
    check(&mut failures, (m.accuracy - 0.6667).abs() <= 1e-4, || format!("accuracy {}", m.accuracy));
    check(&mut failures, (m.eq1_f1 - 0.75).abs() <= 1e-6, || format!("eq1_f1 {}", m.eq1_f1));
    check(&mut failures, eq1(1.0, 0.0) == 0.5, || "eq1(1, 0)".into());
    check(&mut failures, eq1(0.75, 0.75) == 0.75, || "eq1(0.75, 0.75)".into());

    // The same matrix reached through evaluate() on a scripted predictor.
    struct Scripted(Vec<SentimentLabel>);
    impl replysent_core::models::Predictor for Scripted {
        fn predict(&self, texts: &[&str]) -> Result<Vec<replysent_core::models::PredictedDistribution>> {
            Ok(texts
                .iter()
                .map(|t| {
                    let mut p = [0.0; 3];
                    p[self.0[t.parse::<usize>().unwrap()].index()] = 1.0;
                    replysent_core::models::PredictedDistribution(p)
                })
                .collect())
        }
    }
    let mut data = Vec::new();
    let mut preds = Vec::new();
    for gold in SentimentLabel::ALL {
        for pred in SentimentLabel::ALL {
            for _ in 0..cm.get(gold, pred) {
                data.push(LabeledTweet {
                    id: data.len().to_string(),
                    text: data.len().to_string(),
                    label: gold,
                });
                preds.push(pred);
            }
        }
    }
    let (em, ecm) = evaluate(&Scripted(preds), &data).unwrap();
    check(&mut failures, ecm == cm, || format!("evaluate built {ecm:?}"));
    check(&mut failures, (em.accuracy - 0.6667).abs() <= 1e-4, || format!("evaluate accuracy {}", em.accuracy));
    check(&mut failures, (em.eq1_f1 - 0.75).abs() <= 1e-6, || format!("evaluate eq1_f1 {}", em.eq1_f1));
    verdict(3, "metric fixtures", &failures, start.elapsed());
}

// ---------------------------------------------------------------------------
// 4. Overfit sanity

#[test]
fn criterion_4_overfit_sanity() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let data = load_labeled_corpus(common::fixtures().join("overfit.jsonl"), RecordFormat::JsonLines).unwrap();
    check(&mut failures, data.len() == 12, || format!("fixture has {} examples", data.len()));
    let vocab = build_vocabulary(data.iter().map(|t| tokenize(&t.text)), 50_000);
    // Stage-1 architecture (two stacked BiLSTM layers, dropout 0.5) at
    // fixture width.
    let arch = BiLstmConfig {
        embed_dim: 16,
        hidden_size: 16,
        ..BiLstmConfig::stage1(vocab.len())
    };
    let model = SentimentModel::new(ArchitectureConfig::BiLstm(arch), vocab, None, 1).unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        batch_size: 4,
        max_epochs: 200,
        ..TrainConfig::stage1(1)
    };
    let (model, history) = replysent_core::pipeline::train(model, &cfg, &data, &[]).unwrap();
    let (m, _) = evaluate(&model, &data).unwrap();
    check(&mut failures, m.accuracy >= 0.95, || format!("training accuracy {}", m.accuracy));
    check(&mut failures, history.epochs.len() <= 200, || "too many epochs".into());
    let elapsed = start.elapsed();
    check(&mut failures, elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"));
    verdict(4, "overfit sanity", &failures, elapsed);
}

// ---------------------------------------------------------------------------
// 5. End-to-end smoke run

const METRIC_FILES: [&str; 6] = [
    "metrics_proposed.json",
    "metrics_ensemble.json",
    "metrics_direct_baseline.json",
    "confusion_proposed.csv",
    "confusion_ensemble.csv",
    "confusion_direct_baseline.csv",
];

#[test]
fn criterion_5_end_to_end_smoke() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = two_stage_run(&common::fixture_config(a.path()));
    let rb = two_stage_run(&common::fixture_config(b.path()));
    match (ra, rb) {
        (Ok(ra), Ok(rb)) => {
            for f in METRIC_FILES {
                let same = fs::read(a.path().join(f)).ok() == fs::read(b.path().join(f)).ok();
                check(&mut failures, same && a.path().join(f).exists(), || format!("{f} not reproduced"));
            }
            check(&mut failures, ra.proposed == rb.proposed && ra.ensemble == rb.ensemble, || {
                "reports differ".into()
            });
            let json: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
            for block in ["proposed", "ensemble", "direct_baseline"] {
                check(&mut failures, json[block]["metrics"]["eq1_f1"].is_number(), || {
                    format!("report lacks `{block}`")
                });
            }
        }
        (ra, rb) => failures.push(format!("run failed: {:?} / {:?}", ra.err(), rb.err())),
    }
    verdict(5, "end-to-end smoke", &failures, start.elapsed());
}

// ---------------------------------------------------------------------------
// 6. Pipeline direction on an inverse-sentiment corpus

const POS: [&str; 8] = ["love", "great", "happy", "wonderful", "awesome", "amazing", "fantastic", "excellent"];
const NEG: [&str; 8] = ["hate", "awful", "terrible", "sad", "horrible", "worst", "angry", "disgusting"];
const NEU: [&str; 8] = ["meeting", "report", "schedule", "update", "noon", "announced", "released", "weather"];
const FILL: [&str; 8] = ["the", "a", "this", "is", "so", "really", "just", "today"];

fn sentence(label: SentimentLabel, len: usize, rng: &mut ChaCha8Rng) -> String {
    let pool = match label {
        SentimentLabel::Positive => &POS,
        SentimentLabel::Negative => &NEG,
        SentimentLabel::Neutral => &NEU,
    };
    let mut words: Vec<&str> = (0..2).map(|_| pool[rng.gen_range(0..8)]).collect();
    words.extend((2..len).map(|_| FILL[rng.gen_range(0..8)]));
    for i in (1..words.len()).rev() {
        words.swap(i, rng.gen_range(0..=i));
    }
    words.join(" ")
}

fn inverse(label: SentimentLabel) -> SentimentLabel {
    match label {
        SentimentLabel::Positive => SentimentLabel::Negative,
        SentimentLabel::Negative => SentimentLabel::Positive,
        SentimentLabel::Neutral => SentimentLabel::Neutral,
    }
}

fn inverse_thread(id: String, label: SentimentLabel, gold: bool, rng: &mut ChaCha8Rng) -> ThreadRecord {
    ThreadRecord {
        source_id: id,
        source_text: sentence(label, 6, rng),
        replies: (0..20).map(|_| sentence(inverse(label), 5, rng)).collect(),
        gold_label: gold.then(|| inverse(label)),
    }
}

fn write_inverse_corpus(dir: &Path) -> PipelineConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let labeled: Vec<LabeledTweet> = (0..240)
        .map(|i| {
            let label = SentimentLabel::ALL[i % 3];
            LabeledTweet {
                id: format!("l{i}"),
                text: sentence(label, 5, &mut rng),
                label,
            }
        })
        .collect();
    let threads: Vec<ThreadRecord> = (0..90)
        .map(|i| inverse_thread(format!("t{i}"), SentimentLabel::ALL[i % 3], false, &mut rng))
        .collect();
    let gold: Vec<ThreadRecord> = (0..30)
        .map(|i| inverse_thread(format!("g{i}"), SentimentLabel::ALL[i % 3], true, &mut rng))
        .collect();
    write_labeled_corpus(dir.join("labeled.jsonl"), &labeled).unwrap();
    write_threads(dir.join("threads.jsonl"), &threads).unwrap();
    write_threads(dir.join("gold.jsonl"), &gold).unwrap();
    PipelineConfig {
        labeled_path: Some(dir.join("labeled.jsonl")),
        threads_path: Some(dir.join("threads.jsonl")),
        gold_path: Some(dir.join("gold.jsonl")),
        out_dir: dir.join("out"),
        ..common::fixture_config(&dir.join("out"))
    }
}

#[test]
fn criterion_6_pipeline_direction() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inverse_corpus(dir.path());
    match two_stage_run(&cfg) {
        Ok(report) => {
            let proposed = report.proposed.metrics.eq1_f1;
            let direct = report.direct_baseline.metrics.eq1_f1;
            let _ = writeln!(
                std::io::stderr(),
                "  inverse corpus: proposed eq1_f1 {proposed:.4}, ensemble {:.4}, direct baseline {direct:.4}",
                report.ensemble.metrics.eq1_f1
            );
            // Sources carry the opposite polarity of their replies, so
            // labeling the source text should score near zero.
            check(&mut failures, direct < 0.1, || format!("direct baseline {direct} is not near zero"));
            check(&mut failures, proposed > direct, || {
                format!("proposed {proposed} does not exceed direct baseline {direct}")
            });
        }
        Err(e) => failures.push(format!("run failed: {e}")),
    }
    verdict(6, "pipeline direction", &failures, start.elapsed());
}

// ---------------------------------------------------------------------------
// 7. Serialization round trips

#[test]
fn criterion_7_serialization() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let report = two_stage_run(&common::fixture_config(out)).unwrap();

    for name in ["stage1.ckpt", "stage2_bilstm.ckpt", "stage2_cnn.ckpt"] {
        let first = fs::read(out.join(name)).unwrap();
        let model = load_checkpoint(out.join(name)).unwrap();
        let again = out.join(format!("again_{name}"));
        save_checkpoint(&model, &again).unwrap();
        check(&mut failures, fs::read(&again).unwrap() == first, || format!("{name} not byte-identical"));
        check(&mut failures, encode_checkpoint(&model) == first, || format!("{name} re-encoding differs"));
    }

    let corpus = load_labeled_corpus(out.join("autolabeled.jsonl"), RecordFormat::JsonLines).unwrap();
    write_labeled_corpus(out.join("corpus_again.jsonl"), &corpus).unwrap();
    let back = load_labeled_corpus(out.join("corpus_again.jsonl"), RecordFormat::JsonLines).unwrap();
    check(&mut failures, back == corpus, || "labeled corpus round trip".into());

    let threads = load_threads(common::fixtures().join("threads.jsonl")).unwrap();
    write_threads(out.join("threads_again.jsonl"), &threads).unwrap();
    let back = load_threads(out.join("threads_again.jsonl")).unwrap();
    check(&mut failures, back == threads, || "thread corpus round trip".into());

    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let parsed: Report = serde_json::from_str(&text).unwrap();
    check(&mut failures, parsed == report, || "report round trip".into());
    let rewritten = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    check(&mut failures, rewritten == text, || "report re-serialization differs".into());
    verdict(7, "serialization", &failures, start.elapsed());
}

// ---------------------------------------------------------------------------
// 8. Dropout statistics

#[test]
fn criterion_8_dropout_statistics() {
    let start = Instant::now();
    let mut failures = Vec::new();
    const DRAWS: usize = 100_000;
    let params = ParamStore::<f64>::new();
    for p in [0.5, 0.2] {
        let mut g = Graph::new(&params);
        let x = g.constant(Tensor::new(vec![1, DRAWS], vec![1.0; DRAWS])).unwrap();
        let y = g.dropout(x, p, true, &mut RngStream::new(8)).unwrap();
        let kept = g.value(y).data().iter().filter(|&&v| v != 0.0).count();
        let rate = kept as f64 / DRAWS as f64;
        check(&mut failures, (rate - (1.0 - p)).abs() <= 0.005, || format!("p={p}: keep rate {rate}"));
        let scale_ok = g.value(y).data().iter().all(|&v| v == 0.0 || (v - 1.0 / (1.0 - p)).abs() < 1e-12);
        check(&mut failures, scale_ok, || format!("p={p}: kept values not scaled by 1/(1-p)"));

        let vals: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let x = g.constant(Tensor::new(vec![8, 8], vals.clone())).unwrap();
        let y = g.dropout(x, p, false, &mut RngStream::new(8)).unwrap();
        check(&mut failures, g.value(y).data() == &vals[..], || format!("p={p}: inference not identity"));
    }
    verdict(8, "dropout statistics", &failures, start.elapsed());
}
