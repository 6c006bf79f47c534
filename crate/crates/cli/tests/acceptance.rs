//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use callmove::baselines::{build_idf, log1p_vector, mean_reversion_predict, tfidf_vector};
use callmove::corpus::{
    build_vocabulary, prepare_answer_sequence, ComponentKind, Prepared, RawTranscript, Sector,
    SequenceLimits, StopWords, TranscriptComponent,
};
use callmove::eval::{holdout_split, mcc, ConfusionCounts, Observation};
use callmove::labels::PriceSeries;
use callmove::model::{
    aggregate, attention_weights, forward, Mode, Model, ModelConfig, ModelInput, ModelRng,
    SentenceMatrix,
};
use chrono::{Days, NaiveDate};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        format!(
            "{detail}; {:.2}s of {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

fn normal_matrix(rng: &mut ModelRng, rows: usize, cols: usize) -> Array2<f64> {
    // Sum of uniforms: close enough to Gaussian for test inputs, no extra crate.
    Array2::from_shape_simple_fn((rows, cols), || {
        (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.87
    })
}

fn random_input(rng: &mut ModelRng, n: usize, dim: usize) -> ModelInput {
    ModelInput {
        sentences: SentenceMatrix::from_rows(normal_matrix(rng, n, dim)).unwrap(),
        sector: Sector::new(rng.random_range(0..11)).unwrap(),
    }
}

fn gradient_fidelity(work: &Path) -> Outcome {
    std::fs::write(work.join("d4.toml"), "embedding_dim = 4\n").unwrap();
    cli(
        &["synth", "--config", "d4.toml", "--seed", "3", "--out", "d4"],
        work,
    );
    let start = Instant::now();
    let out = cli(&["gradcheck", "--config", "d4/config.toml"], work);
    let elapsed = start.elapsed();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let per_seed: Vec<f64> = stdout
        .lines()
        .filter(|l| l.starts_with("seed "))
        .filter_map(|l| l.split_whitespace().nth(5)?.parse().ok())
        .collect();
    let worst = per_seed.iter().copied().fold(0.0, f64::max);
    let detail = format!(
        "max relative error {worst:.2e} over {} seeds (d=4, k=3, N=5, B=4)",
        per_seed.len()
    );
    check(
        per_seed.len() == 10 && per_seed.iter().all(|&e| e < 1e-4),
        detail,
    )
    .and_then(|d| within(elapsed, Duration::from_secs(10), d))
}

fn eval_logit(model: &Model, input: &ModelInput) -> f64 {
    forward(model, std::slice::from_ref(input), Mode::Eval)
        .unwrap()
        .logits()[0]
}

fn attention_invariants() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        sentence_dim: 8,
        industry_dim: 3,
        hidden: vec![8, 8],
        ..ModelConfig::default()
    };
    let mut rng = ModelRng::seed_from_u64(2);
    let (mut norm, mut shift, mut mask, mut perm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for case in 0..200u64 {
        let mut model = Model::init(config.clone(), case).unwrap();
        model.attention.b = rng.random_range(-3.0..3.0);
        let n = rng.random_range(1..=12);
        let input = random_input(&mut rng, n, 8);
        let v = input.sentences.vectors();

        let alpha = attention_weights(v.view(), input.sentences.mask(), &model.attention).unwrap();
        norm = norm.max((alpha.sum() - 1.0).abs());

        let base = eval_logit(&model, &input);
        let mut shifted = model.clone();
        shifted.attention.b += rng.random_range(-50.0..50.0);
        shift = shift.max((eval_logit(&shifted, &input) - base).abs());

        let extra = rng.random_range(1..=6);
        let mut padded = normal_matrix(&mut rng, n + extra, 8) * 100.0;
        padded.slice_mut(ndarray::s![..n, ..]).assign(v);
        let mut m = vec![true; n];
        m.resize(n + extra, false);
        let padded_input = ModelInput {
            sentences: SentenceMatrix::new(padded, m).unwrap(),
            sector: input.sector,
        };
        mask = mask.max((eval_logit(&model, &padded_input) - base).abs());

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pv = Array2::from_shape_fn((n, 8), |(i, j)| v[[order[i], j]]);
        let palpha = attention_weights(pv.view(), &vec![true; n], &model.attention).unwrap();
        let e: Array1<f64> = aggregate(v.view(), alpha.view());
        let pe = aggregate(pv.view(), palpha.view());
        perm = perm.max((&e - &pe).iter().fold(0.0, |a, x| a.max(x.abs())));
    }
    let detail = format!(
        "200 cases each: |sum alpha - 1| {norm:.1e}, bias shift {shift:.1e}, mask {mask:.1e}, permutation {perm:.1e}"
    );
    check(
        norm <= 1e-6 && shift <= 1e-12 && mask <= 1e-12 && perm <= 1e-12,
        detail,
    )
    .and_then(|d| within(start.elapsed(), Duration::from_secs(30), d))
}

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_callmove"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "callmove {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn metrics(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Criteria 3 and 4 share the strength-0.9 run.
fn learnability(work: &Path) -> (Outcome, Outcome) {
    let start = Instant::now();
    cli(
        &[
            "synth",
            "--seed",
            "7",
            "--strength",
            "0.9",
            "--out",
            "strong",
        ],
        work,
    );
    cli(&["train", "--config", "strong/config.toml"], work);
    cli(
        &["synth", "--seed", "7", "--strength", "0.0", "--out", "null"],
        work,
    );
    cli(&["train", "--config", "null/config.toml"], work);
    let elapsed = start.elapsed();

    let strong = metrics(&work.join("strong/out/metrics.json"));
    let null = metrics(&work.join("null/out/metrics.json"));
    let train_acc = strong["extra"]["train_accuracy"].as_f64().unwrap();
    let test_acc = strong["overall"]["accuracy"].as_f64().unwrap();
    let null_acc = null["overall"]["accuracy"].as_f64().unwrap();
    let c3 = check(
        train_acc >= 0.99 && test_acc >= 0.90 && (0.45..=0.55).contains(&null_acc),
        format!(
            "strength 0.9: train {train_acc:.4}, holdout {test_acc:.4}; strength 0.0: holdout {null_acc:.4}"
        ),
    )
    .and_then(|d| within(elapsed, Duration::from_secs(300), d));

    let ratio = strong["extra"]["attention_signal_ratio"]
        .as_f64()
        .unwrap_or(0.0);
    let c4 = check(
        ratio >= 2.0,
        format!("mean attention on signal sentences is {ratio:.3} x uniform over the test split"),
    );
    (c3, c4)
}

fn metric_correctness() -> Outcome {
    let hand = [
        (ConfusionCounts::new(40, 60, 0, 0), 1.0),
        (ConfusionCounts::new(0, 0, 60, 40), -1.0),
        (ConfusionCounts::new(3, 2, 1, 2), 4.0 / 240f64.sqrt()),
        (ConfusionCounts::new(7, 0, 3, 0), 0.0),
        (ConfusionCounts::new(0, 0, 0, 0), 0.0),
    ];
    let hand_ok = hand.iter().all(|(c, want)| (mcc(c) - want).abs() < 1e-12);
    let mut rng = ModelRng::seed_from_u64(5);
    let swap_ok = (0..1000).all(|_| {
        let c = ConfusionCounts::new(
            rng.random_range(0..500),
            rng.random_range(0..500),
            rng.random_range(0..500),
            rng.random_range(0..500),
        );
        let m = mcc(&c);
        m == mcc(&c.swapped()) && (-1.0..=1.0).contains(&m)
    });
    check(
        hand_ok && swap_ok,
        format!(
            "hand values {}, swap symmetry over 1000 tables {}; mcc(3,2,1,2) = {:.4}",
            if hand_ok { "match" } else { "differ" },
            if swap_ok { "holds" } else { "broken" },
            mcc(&ConfusionCounts::new(3, 2, 1, 2))
        ),
    )
}

fn feature_oracle() -> Outcome {
    let words = ["ab", "cd", "ef", "gh", "ij", "kl", "mn"];
    let mut rng = ModelRng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut entries = 0;
    for _ in 0..25 {
        let n_docs = rng.random_range(1..=10);
        let docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| {
                let len = rng.random_range(0..=30);
                (0..len)
                    .map(|_| words[rng.random_range(0..words.len())].to_string())
                    .collect()
            })
            .collect();
        if docs.iter().all(|d| d.is_empty()) {
            continue;
        }
        let vocab = build_vocabulary(&docs, 1, &StopWords::empty()).unwrap();
        let ids: Vec<Vec<u32>> = docs
            .iter()
            .map(|d| d.iter().map(|w| vocab.id(w).unwrap()).collect())
            .collect();
        let idf = build_idf(&ids, vocab.len()).unwrap();
        for (doc, doc_ids) in docs.iter().zip(&ids) {
            // Recount from the strings themselves.
            let mut tfidf = Vec::new();
            let mut log1p = Vec::new();
            for w in words {
                let tc = doc.iter().filter(|x| *x == w).count();
                if tc == 0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.iter().any(|x| x == w)).count();
                let id = vocab.id(w).unwrap();
                let weight = tc as f64 * (n_docs as f64 / df as f64).ln();
                if weight != 0.0 {
                    tfidf.push((id, weight));
                }
                log1p.push((id, (tc as f64).ln_1p()));
            }
            tfidf.sort_by_key(|e| e.0);
            log1p.sort_by_key(|e| e.0);
            entries += tfidf.len() + log1p.len();
            if tfidf_vector(doc_ids, &idf).entries() != tfidf.as_slice()
                || log1p_vector(doc_ids, vocab.len()).unwrap().entries() != log1p.as_slice()
            {
                mismatches += 1;
            }
        }
    }
    check(
        mismatches == 0,
        format!("25 micro-corpora, {entries} oracle entries, {mismatches} mismatching documents"),
    )
}

struct Dated {
    company: String,
    date: NaiveDate,
}

impl Observation for Dated {
    fn company_id(&self) -> &str {
        &self.company
    }
    fn date(&self) -> NaiveDate {
        self.date
    }
    fn sector(&self) -> Sector {
        Sector::new(0).unwrap()
    }
    fn label(&self) -> bool {
        false
    }
}

fn holdout_protocol() -> Outcome {
    let start = NaiveDate::from_ymd_opt(2005, 1, 3).unwrap();
    let mut rng = ModelRng::seed_from_u64(7);
    let mut items = Vec::new();
    for count in 3..=40u64 {
        for i in 0..count {
            items.push(Dated {
                company: format!("co{count:02}"),
                date: start + Days::new(90 * i + count),
            });
        }
    }
    items.shuffle(&mut rng);
    let split = holdout_split(items, 5);
    let mut bad = Vec::new();
    for count in 3..=40u64 {
        let name = format!("co{count:02}");
        let mut test: Vec<NaiveDate> = split
            .test
            .iter()
            .filter(|x| x.company == name)
            .map(|x| x.date)
            .collect();
        let mut train: Vec<NaiveDate> = split
            .train
            .iter()
            .filter(|x| x.company == name)
            .map(|x| x.date)
            .collect();
        test.sort();
        train.sort();
        let want_test = count.min(5);
        let newest: Vec<NaiveDate> = (count - want_test..count)
            .map(|i| start + Days::new(90 * i + count))
            .collect();
        if test != newest || train.len() as u64 != count - want_test {
            bad.push(count);
        }
    }
    check(
        bad.is_empty(),
        format!("38 companies with 3..=40 examples, failures at counts {bad:?}"),
    )
}

fn transcript(sentences: usize) -> RawTranscript {
    RawTranscript {
        company_id: "c".into(),
        ticker: "T".into(),
        call_date: NaiveDate::from_ymd_opt(2020, 5, 1).unwrap(),
        sector: Sector::new(2).unwrap(),
        components: vec![TranscriptComponent {
            kind: ComponentKind::Answer,
            text: "Margins improved steadily. ".repeat(sentences),
            order_index: 0,
        }],
    }
}

fn preprocessing_rules() -> Outcome {
    let mut docs: Vec<Vec<String>> = Vec::new();
    for f in 1..=6 {
        docs.push(vec![format!("word{f}"); f]);
    }
    let stop = StopWords::default();
    let vocab = build_vocabulary(&docs, 4, &stop).unwrap();
    let vocab_ok = (1..=6).all(|f| vocab.id(&format!("word{f}")).is_some() == (f >= 4));

    let corpus: Vec<Vec<&str>> = vec![vec!["margins", "improved", "steadily"]; 4];
    let vocab = build_vocabulary(&corpus, 4, &stop).unwrap();
    let limits = SequenceLimits::default();
    let kept = |n: usize| match prepare_answer_sequence(
        &transcript(n),
        &vocab,
        limits,
        ComponentKind::Answer,
    ) {
        Prepared::Ready(s) => Some((s.sentences.len(), s.original_sentence_count)),
        Prepared::Skipped(_) => None,
    };
    let floor_ok = kept(9).is_none() && kept(10) == Some((10, 10)) && kept(11) == Some((11, 11));
    let cap_ok = kept(299) == Some((299, 299))
        && kept(300) == Some((300, 300))
        && kept(301) == Some((300, 301));
    check(
        vocab_ok && floor_ok && cap_ok,
        format!(
            "frequency threshold {}, 9/10/11 floor {}, 299/300/301 cap {}",
            ok(vocab_ok),
            ok(floor_ok),
            ok(cap_ok)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn series(closes: &[f64]) -> PriceSeries {
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    PriceSeries::new(
        "T",
        closes
            .iter()
            .enumerate()
            .map(|(i, &p)| (start + Days::new(i as u64), p))
            .collect(),
    )
    .unwrap()
}

fn mean_reversion() -> Outcome {
    let last = |s: &PriceSeries| s.observations().last().unwrap().0;
    let predict = |closes: Vec<f64>| {
        let s = series(&closes);
        mean_reversion_predict(&s, last(&s), 60).unwrap()
    };
    let constant = predict(vec![10.0; 80]);
    let rising = predict((0..80).map(|i| 10.0 + 0.5 * i as f64).collect());
    let falling = predict((0..80).map(|i| 90.0 - 0.5 * i as f64).collect());
    let fixed_ok = (constant, rising, falling) == (false, false, true);

    let mut rng = ModelRng::seed_from_u64(9);
    let scale_ok = (0..100).all(|_| {
        let n = rng.random_range(60..120);
        let mut p = rng.random_range(5.0..500.0);
        let closes: Vec<f64> = (0..n)
            .map(|_| {
                p *= 1.0 + rng.random_range(-0.03..0.03);
                p
            })
            .collect();
        let s = series(&closes);
        let c = rng.random_range(1e-3..1e3);
        mean_reversion_predict(&s, last(&s), 60)
            == mean_reversion_predict(&s.scaled(c).unwrap(), last(&s), 60)
    });
    check(
        fixed_ok && scale_ok,
        format!(
            "constant/rising/falling -> {}/{}/{}, scale invariance over 100 series {}",
            u8::from(constant),
            u8::from(rising),
            u8::from(falling),
            ok(scale_ok)
        ),
    )
}

fn reproducibility(work: &Path) -> Outcome {
    cli(&["synth", "--seed", "11", "--out", "repro"], work);
    cli(
        &["train", "--config", "repro/config.toml", "--out", "run_a"],
        work,
    );
    cli(
        &["train", "--config", "repro/config.toml", "--out", "run_b"],
        work,
    );
    let ckpt_a = std::fs::read(work.join("run_a/model.ckpt")).unwrap();
    let ckpt_b = std::fs::read(work.join("run_b/model.ckpt")).unwrap();
    let strip = |p: &str| {
        let mut m = metrics(&work.join(p));
        m.as_object_mut().unwrap().remove("generated_at");
        m
    };
    let same_ckpt = ckpt_a == ckpt_b;
    let same_metrics = strip("run_a/metrics.json") == strip("run_b/metrics.json");
    check(
        same_ckpt && same_metrics,
        format!(
            "checkpoints ({} bytes) {}, metrics without timestamp {}",
            ckpt_a.len(),
            if same_ckpt { "identical" } else { "differ" },
            if same_metrics { "identical" } else { "differ" }
        ),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let (c3, c4) = learnability(work.path());
    let results: BTreeMap<u8, (&str, Outcome)> = BTreeMap::from([
        (1, ("gradient fidelity", gradient_fidelity(work.path()))),
        (2, ("attention invariants", attention_invariants())),
        (3, ("end-to-end learnability", c3)),
        (4, ("attention on planted sentences", c4)),
        (5, ("metric correctness", metric_correctness())),
        (6, ("TFIDF/LOG1P oracle", feature_oracle())),
        (7, ("holdout protocol", holdout_protocol())),
        (8, ("preprocessing rules", preprocessing_rules())),
        (9, ("mean reversion", mean_reversion())),
        (10, ("reproducibility", reproducibility(work.path()))),
    ]);

    let mut failed = 0;
    for (n, (name, outcome)) in &results {
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
