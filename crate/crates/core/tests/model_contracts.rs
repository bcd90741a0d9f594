use coknow_core::encoders::{EncoderConfig, TextEncoder, Vocabulary};
use coknow_core::knowledge::{EntrySource, KnowledgeBank, KnowledgeEntry, KnowledgeKind};
use coknow_core::model::{
    compute_targets, forward_train, full_gradient_check, loss_and_backward, train, Checkpoint,
    CoKnowConfig, CoKnowModel, GradCheckCase, TrainingData, TrainingState, Variant,
    CHECKPOINT_FORMAT,
};
use coknow_core::numerics::{l2_normalize_rows, SgdCosineConfig, Tensor2, DEFAULT_EPS};
use coknow_core::prompting::HandcraftedTemplate;
use coknow_core::rng::SeededRng;

struct Fixture {
    encoder: TextEncoder,
    vocab: Vocabulary,
    bank: KnowledgeBank,
    classes: Vec<String>,
}

fn fixture(k: usize) -> Fixture {
    let enc_cfg = EncoderConfig {
        d_model: 16,
        d_joint: 16,
        d_in: 16,
        max_len: 24,
        vocab_size: 64,
        ..EncoderConfig::default()
    };
    let classes: Vec<String> = (0..k).map(|i| format!("class_{i}")).collect();
    let mut bank = KnowledgeBank::new("toy", "fixture");
    for c in &classes {
        bank.entries.insert(
            c.clone(),
            KnowledgeEntry {
                vk: format!("{c} looks round"),
                nvk: format!("{c} feels calm"),
                pk: format!("{c} looks round and feels calm"),
                source: EntrySource::Fixture,
            },
        );
    }
    let texts: Vec<String> = bank
        .entries
        .values()
        .flat_map(|e| [e.vk.clone(), e.nvk.clone(), e.pk.clone()])
        .chain(["a photo of a".to_string()])
        .collect();
    Fixture {
        encoder: TextEncoder::new(&enc_cfg),
        vocab: Vocabulary::build(texts.iter().map(String::as_str), 64),
        bank,
        classes,
    }
}

#[test]
fn twenty_configuration_gradient_sweep() {
    for case in GradCheckCase::sweep() {
        let r = full_gradient_check(&case, 1e-5, 1e-4).unwrap();
        assert!(r.passed(), "{case:?}: {r:?}");
    }
}

#[test]
fn changing_knowledge_kind_changes_only_t1() {
    let f = fixture(3);
    let t = |kind| {
        compute_targets(
            &f.classes,
            &f.bank,
            kind,
            &HandcraftedTemplate::default(),
            &f.encoder,
            &f.vocab,
        )
        .unwrap()
    };
    let (a, b) = (t(KnowledgeKind::Pk), t(KnowledgeKind::Vk));
    assert_ne!(a.t1, b.t1);
    assert_eq!(a.t2, b.t2);
    assert_eq!(a.t1.shape(), (3, 16));
    let airplane = f
        .encoder
        .encode_text("a photo of a class_1", &f.vocab)
        .unwrap();
    assert_eq!(a.t2.row(1), &airplane[..]);
}

#[test]
fn beta_one_fuses_to_the_original_embedding() {
    let f = fixture(3);
    let targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let cfg = CoKnowConfig {
        beta: 1.0,
        ..CoKnowConfig::default()
    };
    let model = CoKnowModel::new(&cfg, 16, 16, 3).unwrap();
    let i0 = l2_normalize_rows(
        &Tensor2::randn(4, 16, 1.0, &mut SeededRng::new(1)),
        DEFAULT_EPS,
    )
    .out;
    let out = forward_train(&model, &f.encoder, &targets, &i0, &cfg).unwrap();
    assert_eq!(out.i_fused, i0);
}

#[test]
fn uniform_logits_give_three_ln_k() {
    // Identical class targets make every branch uniform.
    let f = fixture(4);
    let mut targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let row = targets.t1.row(0).to_vec();
    targets.t1 = Tensor2::from_rows(&vec![row.clone(); 4]).unwrap();
    targets.t2 = Tensor2::from_rows(&vec![row; 4]).unwrap();
    targets.class_tokens = vec![targets.class_tokens[0].clone(); 4];
    let cfg = CoKnowConfig::default();
    let mut model = CoKnowModel::new(&cfg, 16, 16, 0).unwrap();
    let i0 = l2_normalize_rows(
        &Tensor2::randn(3, 16, 1.0, &mut SeededRng::new(2)),
        DEFAULT_EPS,
    )
    .out;
    let out = forward_train(&model, &f.encoder, &targets, &i0, &cfg).unwrap();
    let loss = loss_and_backward(&mut model, &f.encoder, &targets, &out, &[0, 1, 2], &cfg).unwrap();
    assert!((loss.total - 3.0 * 4f64.ln()).abs() < 1e-12, "{loss:?}");
}

#[test]
fn frozen_mappers_still_leave_a_context_gradient() {
    let f = fixture(3);
    let targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let cfg = CoKnowConfig {
        mapper_losses: false,
        ..CoKnowConfig::default()
    };
    let mut model = CoKnowModel::new(&cfg, 16, 16, 5).unwrap();
    let i0 = l2_normalize_rows(
        &Tensor2::randn(3, 16, 1.0, &mut SeededRng::new(3)),
        DEFAULT_EPS,
    )
    .out;
    model.zero_grads();
    let out = forward_train(&model, &f.encoder, &targets, &i0, &cfg).unwrap();
    loss_and_backward(&mut model, &f.encoder, &targets, &out, &[0, 1, 2], &cfg).unwrap();
    assert!(model.prompt.context.grad.max_abs() > 0.0);
}

fn toy_training(k: usize, shots: usize, seed: u64) -> (Fixture, TrainingData) {
    let f = fixture(k);
    let mut rng = SeededRng::new(seed);
    let protos = l2_normalize_rows(&Tensor2::randn(k, 16, 1.0, &mut rng), DEFAULT_EPS).out;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        for _ in 0..shots {
            let noise = Tensor2::randn(1, 16, 0.1, &mut rng);
            let v: Vec<f64> = protos
                .row(c)
                .iter()
                .zip(noise.data())
                .map(|(a, b)| a + b)
                .collect();
            rows.push(v);
            labels.push(c);
        }
    }
    let i0 = l2_normalize_rows(&Tensor2::from_rows(&rows).unwrap(), DEFAULT_EPS).out;
    (f, TrainingData { i0, labels })
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (f, data) = toy_training(3, 2, 0);
    let targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let cfg = CoKnowConfig::default();
    let opt = SgdCosineConfig {
        lr_max: 0.0,
        total_steps: 1,
        ..SgdCosineConfig::default()
    };
    let model = CoKnowModel::new(&cfg, 16, 16, 0).unwrap();
    let mut state = TrainingState::new(model.clone());
    let r1 = train(
        &mut state, &f.encoder, &targets, &data, &cfg, &opt, 1, 32, 0,
    )
    .unwrap();
    for (a, b) in state.model.params().iter().zip(model.params()) {
        assert_eq!(a.value, b.value);
    }
    let mut again = TrainingState::new(model);
    let r2 = train(
        &mut again, &f.encoder, &targets, &data, &cfg, &opt, 1, 32, 0,
    )
    .unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn training_leaves_targets_and_encoder_frozen() {
    let (f, data) = toy_training(4, 16, 1);
    let targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let (t_before, enc_before) = (targets.clone(), f.encoder.clone());
    let cfg = CoKnowConfig::default();
    let opt = SgdCosineConfig {
        lr_max: 0.002,
        total_steps: 50 * 2,
        ..SgdCosineConfig::default()
    };
    let mut state = TrainingState::new(CoKnowModel::new(&cfg, 16, 16, 0).unwrap());
    let recs = train(
        &mut state, &f.encoder, &targets, &data, &cfg, &opt, 50, 32, 0,
    )
    .unwrap();
    assert_eq!(recs.len(), 50);
    assert!(recs[49].loss < recs[0].loss);
    assert_eq!(targets, t_before);
    assert_eq!(f.encoder, enc_before);
}

#[test]
fn empty_dataset_is_rejected() {
    let f = fixture(2);
    let targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let cfg = CoKnowConfig::default();
    let data = TrainingData {
        i0: Tensor2::zeros(0, 16),
        labels: vec![],
    };
    let mut state = TrainingState::new(CoKnowModel::new(&cfg, 16, 16, 0).unwrap());
    assert!(train(
        &mut state,
        &f.encoder,
        &targets,
        &data,
        &cfg,
        &SgdCosineConfig::default(),
        1,
        32,
        0
    )
    .is_err());
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let (f, data) = toy_training(3, 4, 2);
    let targets = compute_targets(
        &f.classes,
        &f.bank,
        KnowledgeKind::Pk,
        &HandcraftedTemplate::default(),
        &f.encoder,
        &f.vocab,
    )
    .unwrap();
    let cfg = CoKnowConfig {
        variant: Variant::Standard,
        ..CoKnowConfig::default()
    };
    let opt = SgdCosineConfig {
        total_steps: 6,
        ..SgdCosineConfig::default()
    };
    let fresh = TrainingState::new(CoKnowModel::new(&cfg, 16, 16, 9).unwrap());

    let mut straight = fresh.clone();
    train(
        &mut straight,
        &f.encoder,
        &targets,
        &data,
        &cfg,
        &opt,
        6,
        4,
        9,
    )
    .unwrap();

    let mut first = fresh;
    train(&mut first, &f.encoder, &targets, &data, &cfg, &opt, 3, 4, 9).unwrap();
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        seed: 9,
        config: cfg.clone(),
        optimizer: opt,
        encoder: f.encoder.config.clone(),
        vocab: f.vocab.tokens().to_vec(),
        classes: f.classes.clone(),
        state: first,
        branch_targets: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_json().unwrap(), ck.to_json().unwrap());
    let mut resumed = loaded.state;
    train(
        &mut resumed,
        &f.encoder,
        &targets,
        &data,
        &cfg,
        &opt,
        3,
        4,
        9,
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&resumed).unwrap(),
        serde_json::to_string(&straight).unwrap()
    );
}
