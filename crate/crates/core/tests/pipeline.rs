use std::collections::HashSet;

use clipdesk_core::datagen::{all_combos, generate_corpus, read_manifest, ShiftConfig, Split};
use clipdesk_core::encoders::TextMode;
use clipdesk_core::eval::{
    batch_size_sweep, efficiency_curve, evaluate_model, read_report, write_report, EvalSet, PromptVariant, ReportFormat,
};
use clipdesk_core::index::{build_from_corpus, build_from_manifest, RetrievalIndex};
use clipdesk_core::probe::{few_shot_curve, shift_gap, Shots};
use clipdesk_core::trainer::{train, Batch, Optimizer, Trainer, TrainingSet};
use clipdesk_core::zeroshot::{build_class_embeddings, instantiate_prompts, PromptTemplate};
use clipdesk_core::{ClipModel, Corpus, CorpusConfig, Error, TrainConfig};

fn small_config() -> CorpusConfig {
    CorpusConfig {
        n_train: 320,
        n_test: 48,
        ..CorpusConfig::default()
    }
}

fn small_train(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        steps,
        ..TrainConfig::default()
    }
}

fn trained(corpus: &Corpus, steps: usize) -> ClipModel {
    let cfg = small_train(steps);
    train(&cfg, &TrainingSet::from_corpus(corpus, cfg.dims.max_len))
        .unwrap()
        .model
}

#[test]
fn corpus_splits_are_clean() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let ids: Vec<u64> = corpus.entries.iter().map(|e| e.id).collect();
    assert_eq!(ids, (0..corpus.entries.len() as u64).collect::<Vec<_>>());
    let heldout: HashSet<_> = small_config().heldout.into_iter().collect();
    for e in &corpus.entries {
        let held = heldout.contains(&e.spec.combo());
        assert_eq!(held, e.split == Split::TestHeldout, "{e:?}");
    }
    let c = corpus.counts();
    assert_eq!((c.train, c.test_iid, c.test_heldout, c.test_shifted), (320, 48, 48, 48));
}

#[test]
fn heldout_pair_never_co_occurs_in_train_captions() {
    let corpus = generate_corpus(&small_config()).unwrap();
    for e in corpus.entries.iter().filter(|e| e.split == Split::Train) {
        assert!(
            !(e.caption.contains("triangle") && e.caption.contains("magenta")),
            "{}",
            e.caption
        );
    }
}

#[test]
fn holding_out_everything_is_an_error() {
    let cfg = CorpusConfig {
        heldout: all_combos(),
        ..small_config()
    };
    assert!(matches!(generate_corpus(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn identity_shift_reproduces_iid_split() {
    let cfg = CorpusConfig {
        shift: ShiftConfig {
            noise_sigma: 0.0,
            swap_background: false,
        },
        ..small_config()
    };
    let corpus = generate_corpus(&cfg).unwrap();
    let iid = corpus.split_indices(Split::TestIid);
    let shifted = corpus.split_indices(Split::TestShifted);
    for (a, b) in iid.iter().zip(&shifted) {
        assert_eq!(corpus.rasters[*a], corpus.rasters[*b]);
    }
}

#[test]
fn corpus_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_config()).unwrap();
    corpus.write(dir.path()).unwrap();
    assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
    let (seed, entries) = read_manifest(dir.path()).unwrap();
    assert_eq!((seed, entries.len()), (7, corpus.entries.len()));

    let again = tempfile::tempdir().unwrap();
    generate_corpus(&small_config()).unwrap().write(again.path()).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("manifest.jsonl")).unwrap(),
        std::fs::read(again.path().join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn training_is_deterministic_and_one_step_is_one_train_step() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let cfg = small_train(5);
    let set = TrainingSet::from_corpus(&corpus, cfg.dims.max_len);
    let a = train(&cfg, &set).unwrap();
    let b = train(&cfg, &set).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.model.to_checkpoint_bytes(), b.model.to_checkpoint_bytes());
    assert_eq!(a.loss_trace.len(), 5);

    let one = train(
        &TrainConfig {
            steps: 1,
            ..cfg.clone()
        },
        &set,
    )
    .unwrap();
    let mut manual = Trainer::new(TrainConfig { steps: 1, ..cfg }, &set).unwrap();
    let loss = manual.step(&set).unwrap();
    assert_eq!(one.loss_trace, vec![loss]);
    assert_eq!(one.model.to_checkpoint_bytes(), manual.model.to_checkpoint_bytes());
}

#[test]
fn zero_learning_rate_leaves_params_alone() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let set = TrainingSet::from_corpus(&corpus, 16).truncated(24);
    let cfg = TrainConfig {
        batch_size: 24,
        steps: 3,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let report = train(&cfg, &set).unwrap();
    let init = ClipModel::init(set.vocab.clone(), cfg.text_mode, cfg.dims, cfg.seed).unwrap();
    assert_eq!(report.model.to_checkpoint_bytes(), init.to_checkpoint_bytes());
    // every step sees the whole set, only reordered
    for l in &report.loss_trace {
        assert!((l - report.loss_trace[0]).abs() < 1e-9);
    }
}

#[test]
fn too_small_corpus_is_rejected() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let set = TrainingSet::from_corpus(&corpus, 16).truncated(8);
    assert!(matches!(
        train(&small_train(1), &set),
        Err(Error::CorpusTooSmall { .. })
    ));
}

#[test]
fn temperature_is_learned() {
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let cfg = TrainConfig {
        steps: 100,
        ..TrainConfig::default()
    };
    let report = train(&cfg, &TrainingSet::from_corpus(&corpus, cfg.dims.max_len)).unwrap();
    assert_ne!(report.model.params.log_scale, (1.0f64 / 0.07).ln());
    assert!(report.model.params.log_scale.exp() <= 100.0);
}

#[test]
fn index_from_disk_equals_index_from_memory() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_config()).unwrap();
    corpus.write(dir.path()).unwrap();
    let model = trained(&corpus, 3);
    let d = model.dims.d_embed;

    let mut mem = RetrievalIndex::new(d).unwrap();
    assert_eq!(
        build_from_corpus(&model, &corpus, |_| true, &mut mem).unwrap(),
        corpus.entries.len()
    );
    let mut disk = RetrievalIndex::new(d).unwrap();
    let entries: Vec<_> = corpus.entries.iter().collect();
    build_from_manifest(&model, &entries, dir.path(), &mut disk).unwrap();
    assert_eq!(mem.to_bytes(), disk.to_bytes());

    let mut empty = RetrievalIndex::new(d).unwrap();
    assert_eq!(build_from_manifest(&model, &[], dir.path(), &mut empty).unwrap(), 0);

    let missing = tempfile::tempdir().unwrap();
    let err = build_from_manifest(&model, &entries[..1], missing.path(), &mut empty).unwrap_err();
    assert!(err.to_string().contains("000000.ppm"), "{err}");
}

#[test]
fn stored_items_retrieve_themselves() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let model = trained(&corpus, 3);
    let mut index = RetrievalIndex::new(model.dims.d_embed).unwrap();
    build_from_corpus(&model, &corpus, |e| e.split == Split::TestIid, &mut index).unwrap();
    for i in corpus.split_indices(Split::TestIid).into_iter().step_by(7) {
        let q = model.encode_image(&corpus.rasters[i].to_pixels()).unwrap();
        let hits = index.search(&q, 1).unwrap();
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        // exact duplicates may outrank by lower id
        let dup = index
            .search(&q, index.len())
            .unwrap()
            .into_iter()
            .take_while(|h| (h.score - hits[0].score).abs() < 1e-12)
            .any(|h| h.id == corpus.entries[i].id);
        assert!(dup);
    }
}

#[test]
fn evaluation_never_touches_the_model_and_is_reproducible() {
    // the probe ladder needs 16 training examples of every class
    let corpus = generate_corpus(&CorpusConfig {
        n_train: 1024,
        ..small_config()
    })
    .unwrap();
    let model = trained(&corpus, 10);
    let before = model.to_checkpoint_bytes();
    let a = evaluate_model(&model, &corpus, 7).unwrap();
    let b = evaluate_model(&model, &corpus, 7).unwrap();
    assert_eq!(model.to_checkpoint_bytes(), before);
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
        let p = dir.path().join(name);
        write_report(&a, &p, fmt).unwrap();
        assert_eq!(read_report(&p, fmt).unwrap(), a);
    }
}

#[test]
fn few_shot_curve_and_shift_gaps() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let model = trained(&corpus, 10);
    let set = EvalSet::from_corpus(&model, &corpus).unwrap();
    let ce = build_class_embeddings(&model, &set.classes, &PromptTemplate::defaults()).unwrap();
    let ls = model.params.log_scale;

    let curve = few_shot_curve(&ce, ls, &set.train, &set.test_iid, &[Shots::K(1), Shots::K(2)], 3).unwrap();
    let ks: Vec<Shots> = curve.iter().map(|p| p.shots).collect();
    assert_eq!(ks, vec![Shots::Zero, Shots::K(1), Shots::K(2)]);

    let same = shift_gap(&ce, ls, &set.train, &set.test_iid, &set.test_iid, 3).unwrap();
    assert_eq!(same.zero_shot.gap, 0.0);
    assert_eq!(same.probe.gap, 0.0);
    let all = few_shot_curve(&ce, ls, &set.train, &set.test_iid, &[Shots::All], 3).unwrap();
    assert_eq!(all[1].accuracy, same.probe.acc_iid);
}

#[test]
fn contextless_prompts_are_bare_class_names() {
    let classes = vec!["red circle".to_string(), "blue square".to_string()];
    let prompts = instantiate_prompts(&classes, &PromptVariant::Contextless.templates());
    assert_eq!(
        prompts,
        vec![vec!["red circle".to_string()], vec!["blue square".to_string()]]
    );
    let single = instantiate_prompts(&classes, &PromptVariant::Single.templates());
    assert_eq!(single[0], vec!["a photo of a red circle".to_string()]);
}

#[test]
fn sweeps_have_one_row_per_run_and_equal_budgets() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let base = small_train(2);
    let rows = efficiency_curve(&corpus, &[32, 64], &[TextMode::Bow, TextMode::Positional], &base).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.zero_shot_acc)));
    assert!(matches!(
        efficiency_curve(&corpus, &[10_000], &[TextMode::Bow], &base),
        Err(Error::CorpusTooSmall { .. })
    ));

    let budget = 100;
    let sweep = batch_size_sweep(&corpus, &[4, 8, 16], budget, &base).unwrap();
    assert_eq!(sweep.len(), 3);
    for r in &sweep {
        let seen = r.steps * r.batch_size;
        assert!(seen <= budget && budget - seen < r.batch_size, "{r:?}");
        assert_eq!(r.loss_trace.len(), r.steps);
    }
}

#[test]
fn batch_needs_aligned_pairs() {
    let corpus = generate_corpus(&small_config()).unwrap();
    let mut model = trained(&corpus, 1);
    let set = TrainingSet::from_corpus(&corpus, 16);
    let batch = Batch {
        images: set.images.iter().take(3).collect(),
        captions: set.captions.iter().take(2).map(Vec::as_slice).collect(),
    };
    let mut opt = Optimizer::new(&model.params, TrainConfig::default().adam());
    let r = clipdesk_core::trainer::train_step(&mut model.params, &batch, TextMode::Bow, &model.dims, &mut opt, 0);
    assert!(matches!(r, Err(Error::Shape { .. })));
}
