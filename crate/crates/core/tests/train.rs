mod common;

use common::oracles::count_metrics;
use common::tasks::{highlight_task, random_label_task};
use common::*;
use mrc::corpus::Dataset;
use mrc::model::{Checkpoint, Head, Model, ModelConfig};
use mrc::strategies::OrderScheme;
use mrc::text::{build_vocab, Tagger, Vocab};
use mrc::train::*;
use rand::Rng;

fn small_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        max_len: 40,
        vocab_size: vocab,
        dropout: 0.1,
        init_std: 0.05,
        highlight: true,
    }
}

fn setup(sets: &[&Dataset]) -> (Model, Vocab) {
    let texts: Vec<&str> = sets.iter().flat_map(|d| d.texts()).collect();
    let vocab = build_vocab(&texts, 500).unwrap();
    (Model::new(small_config(vocab.len()), &mut rng(0)).unwrap(), vocab)
}

fn stage(name: &str, epochs: usize) -> StageConfig {
    let mut s = StageConfig::new(name, epochs);
    s.lr = 3e-3;
    s
}

#[test]
fn metrics_match_counting_oracle() {
    let mut r = rng(21);
    let scores: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..r.random_range(2..6)).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let gold: Vec<Vec<usize>> = scores
        .iter()
        .map(|s: &Vec<f64>| (0..s.len()).filter(|_| r.random_bool(0.4)).collect())
        .collect();
    let m = compute_metrics(Head::Sigmoid, &scores, &gold);
    let o = count_metrics(&scores, &gold);
    assert_eq!((m.f1_m, m.f1_a, m.em0), (Some(o.f1_m), Some(o.f1_a), Some(o.em0)));
    let single: Vec<Vec<usize>> = scores.iter().map(|s| vec![r.random_range(0..s.len())]).collect();
    let m = compute_metrics(Head::Softmax, &scores, &single);
    assert_eq!(m.accuracy, Some(count_metrics(&scores, &single).accuracy));
}

#[test]
fn training_is_reproducible_and_selects_best_epoch() {
    let train = highlight_task(24, 60, 6, 1, "t");
    let dev = highlight_task(12, 60, 6, 2, "d");
    let (model, vocab) = setup(&[&train, &dev]);
    let run = || train_stage(model.clone(), &vocab, Tagger::bundled(), &train, Some(&dev), &stage("s", 4)).unwrap();
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(r1.epochs, r2.epochs);
    let traj = r1.dev_trajectory();
    let best = traj.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(r1.selected_value, Some(best));
    assert_eq!(traj[r1.selected_epoch - 1], best);
    assert_eq!(traj.iter().position(|&v| v == best), Some(r1.selected_epoch - 1));
    let kept = evaluate(&m1, &vocab, Tagger::bundled(), &dev, &OrderScheme::dq_o(), Head::Softmax).unwrap();
    assert_eq!(kept.accuracy, Some(best));
}

#[test]
fn single_stage_plan_equals_train_stage() {
    let train = highlight_task(16, 60, 6, 3, "t");
    let (model, vocab) = setup(&[&train]);
    let s = stage("only", 2);
    let (direct, report) = train_stage(model.clone(), &vocab, Tagger::bundled(), &train, None, &s).unwrap();
    let out = run_stages(
        model,
        vocab,
        Tagger::bundled(),
        &[StageData {
            config: s,
            train,
            dev: None,
        }],
        None,
    )
    .unwrap();
    assert_eq!(out.checkpoint.model, direct);
    assert_eq!(out.reports[0].epochs, report.epochs);
}

#[test]
fn null_second_stage_keeps_first_selection() {
    let train = highlight_task(16, 60, 6, 4, "t");
    let dev = highlight_task(8, 60, 6, 5, "d");
    let (model, vocab) = setup(&[&train, &dev]);
    let first = stage("first", 2);
    let mut second = stage("second", 2);
    second.lr = 0.0;
    let data = |config| StageData {
        config,
        train: train.clone(),
        dev: Some(dev.clone()),
    };
    let one = run_stages(model.clone(), vocab.clone(), Tagger::bundled(), &[data(first.clone())], None).unwrap();
    let two = run_stages(model, vocab, Tagger::bundled(), &[data(first), data(second)], None).unwrap();
    assert_eq!(one.checkpoint.model, two.checkpoint.model);
    let traj = two.reports[1].dev_trajectory();
    assert!(traj.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let train = random_label_task(12, 30, 6);
    let (model, vocab) = setup(&[&train]);
    let (trained, _) = train_stage(model, &vocab, Tagger::bundled(), &train, None, &stage("s", 2)).unwrap();
    let ck = Checkpoint {
        model: trained,
        vocab,
        scheme: OrderScheme::o_qd(),
        head: Head::Softmax,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let eval = |c: &Checkpoint| {
        let scores = score_encoded(
            &c.model,
            &encode_dataset(
                &mrc::strategies::Encoder::new(&c.vocab, Tagger::bundled(), c.scheme.clone(), 40),
                &train,
            )
            .unwrap(),
        )
        .unwrap();
        (
            scores,
            evaluate(&c.model, &c.vocab, Tagger::bundled(), &train, &c.scheme, c.head).unwrap(),
        )
    };
    assert_eq!(eval(&ck), eval(&back));
}

#[test]
fn pipeline_from_plan_file_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    highlight_task(16, 60, 6, 7, "a").save_jsonl(&d.join("a.jsonl")).unwrap();
    highlight_task(8, 60, 6, 8, "b").save_jsonl(&d.join("b.jsonl")).unwrap();
    let plan_text = r#"{
        "model": {"layers":1,"heads":2,"d_model":16,"d_ff":32,"max_len":40,"vocab_size":500,"dropout":0.0,"init_std":0.05},
        "run_dir": "run",
        "stages": [
            {"name":"source","train":"a.jsonl","epochs":1,"lr":0.003},
            {"name":"target","train":"a.jsonl","dev":"b.jsonl","epochs":2,"scheme":"o_qd","lr":0.003}
        ]
    }"#;
    std::fs::write(d.join("plan.json"), plan_text).unwrap();
    let plan = StagePlan::load(&d.join("plan.json")).unwrap();
    let out = run_pipeline(&plan).unwrap();
    assert_eq!(out.reports.len(), 2);
    assert_eq!(out.checkpoint.scheme, OrderScheme::o_qd());
    for name in [
        "01-source.ckpt",
        "02-target.ckpt",
        "01-source.metrics.json",
        "02-target.metrics.json",
        "report.json",
    ] {
        assert!(d.join("run").join(name).exists(), "{name}");
    }
    let saved = Checkpoint::load(&d.join("run/02-target.ckpt")).unwrap();
    assert_eq!(saved.model, out.checkpoint.model);

    // continuing from a checkpoint needs a matching architecture
    let mut resumed = plan.clone();
    resumed.init_checkpoint = Some(d.join("run/02-target.ckpt"));
    resumed.run_dir = None;
    assert!(run_pipeline(&resumed).is_ok());
    resumed.model.d_model = 32;
    let err = run_pipeline(&resumed).unwrap_err();
    assert!(err.to_string().contains("mismatch"), "{err}");

    let mut missing = plan;
    missing.stages[0].train = d.join("nope.jsonl");
    assert!(run_pipeline(&missing).unwrap_err().is_io());
}

#[test]
fn sigmoid_stage_selects_on_micro_f1() {
    let mut data = highlight_task(12, 60, 6, 9, "m");
    for inst in &mut data.instances {
        let extra = (inst.gold[0] + 1) % 4;
        inst.gold.push(extra);
    }
    let data = Dataset::new(data.instances, true).unwrap();
    let (model, vocab) = setup(&[&data]);
    let mut s = stage("multi", 2);
    s.head = Head::Sigmoid;
    let (_, report) = train_stage(model, &vocab, Tagger::bundled(), &data, Some(&data), &s).unwrap();
    assert_eq!(report.selection_metric, "f1_a");
    let dev = report.epochs[0].dev.as_ref().unwrap();
    assert!(dev.f1_a.is_some() && dev.em0.is_some() && dev.accuracy.is_none());
}
