use neurodenoise::config::ModelConfig;
use neurodenoise::datasynth::{synth_pairset, toy_corpus, MixSpec, ToyCorpusSpec};
use neurodenoise::model::Model;
use neurodenoise::neurons::{NeuronKind, SpikeMode};
use neurodenoise::spectral::Stft;
use neurodenoise::trainer::{
    bptt_step, grad_check, grad_check_with, loss_and_grad, train, AdamW, Example, GradCheckOptions, TrainingConfig,
};
use neurodenoise::AudioBuffer;

fn tiny_config(kind: NeuronKind) -> ModelConfig {
    let mut cfg = ModelConfig::desk();
    cfg.fullband.layer_sizes = vec![12, 10];
    cfg.subband.layer_sizes = vec![vec![8]; 3];
    cfg.neuron.kind = kind;
    cfg.init.input_scale = 4.0;
    cfg.init.hidden_scale = 2.0;
    cfg.init.readout_scale = 0.5;
    cfg.loss.synops_weight = 1e-5;
    cfg
}

fn examples(count: usize, seconds: f64, seed: u64) -> Vec<Example> {
    let (src, noi) = toy_corpus(&ToyCorpusSpec { sources: 4, noises: 3, seconds: 1.0, seed });
    let spec = MixSpec { clip_seconds: seconds, seed, ..Default::default() };
    let stft = Stft::new(ModelConfig::default().stft).unwrap();
    synth_pairset(&src, &noi, &spec, count)
        .unwrap()
        .into_iter()
        .map(|p| Example::new(p.noisy, p.clean, &stft).unwrap())
        .collect()
}

#[test]
fn gradients_match_finite_differences_in_relaxed_mode() {
    let ex = &examples(1, 0.12, 3)[0];
    // ALIF thresholds add curvature; a smaller step keeps truncation error down
    for (kind, eps) in [(NeuronKind::Gsn, 1e-4), (NeuronKind::Lif, 1e-4), (NeuronKind::Alif, 3e-6)] {
        let model = Model::new(tiny_config(kind), 11).unwrap();
        let report = grad_check(&model, ex, &GradCheckOptions { samples: 220, eps, ..Default::default() }).unwrap();
        assert!(report.checked >= 200, "{kind:?}: only {} checked, {} skipped", report.checked, report.skipped);
        assert!(report.max_rel_error < 1e-4, "{kind:?}: {}", report.max_rel_error);
        for module in ["fullband.layer0", "subband0.layer0", "subband2", "readout"] {
            assert!(report.entries.iter().any(|e| e.name.contains(module)), "{module} not sampled");
        }
        if kind == NeuronKind::Gsn {
            assert!(report.entries.iter().any(|e| e.name.ends_with("gate_bias")));
        }
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let ex = &examples(1, 0.1, 4)[0];
    let model = Model::new(tiny_config(NeuronKind::Gsn), 12).unwrap();
    let corrupt = |g: &mut [f64]| g.iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
    let report =
        grad_check_with(&model, ex, &GradCheckOptions { samples: 40, ..Default::default() }, Some(&corrupt)).unwrap();
    assert!(report.max_rel_error > 1e-2);
}

#[test]
fn smoke_step_on_zero_model() {
    let ex = &examples(1, 0.1, 5)[0];
    let silent = Example::new(
        ex.noisy.clone(),
        AudioBuffer::new(ex.clean.samples().iter().map(|v| v * 1e-3).collect()).unwrap(),
        &Stft::new(ModelConfig::default().stft).unwrap(),
    )
    .unwrap();
    let model = Model::identity(tiny_config(NeuronKind::Gsn)).unwrap();
    let stft = Stft::new(model.config.stft).unwrap();
    let (loss, grads) = loss_and_grad(&model, &stft, &silent, SpikeMode::Hard).unwrap();
    assert!(loss.total.is_finite());
    let mut finite = true;
    grads.visit_params(&mut |_, v| finite &= v.iter().all(|g| g.is_finite()));
    assert!(finite);
}

#[test]
fn clipped_update_respects_norm_and_is_reproducible() {
    let data = examples(2, 0.2, 6);
    let run = || {
        let mut model = Model::new(tiny_config(NeuronKind::Gsn), 13).unwrap();
        let cfg = TrainingConfig { grad_clip_norm: 1e-3, ..Default::default() };
        let mut opt = AdamW::new(&cfg, model.num_params());
        let stft = Stft::new(model.config.stft).unwrap();
        let batch: Vec<&Example> = data.iter().collect();
        let a = bptt_step(&mut model, &mut opt, &stft, &batch, &cfg).unwrap();
        let b = bptt_step(&mut model, &mut opt, &stft, &batch, &cfg).unwrap();
        (a, b, model)
    };
    let (a1, b1, m1) = run();
    let (a2, b2, m2) = run();
    assert_eq!((a1.loss, b1.loss), (a2.loss, b2.loss));
    assert_eq!(m1, m2);
}

#[test]
fn training_loss_decreases_on_a_toy_task() {
    let data = examples(6, 0.5, 7);
    let mut model = Model::new(tiny_config(NeuronKind::Gsn), 14).unwrap();
    let cfg = TrainingConfig { epochs: 6, batch_size: 2, learning_rate: 3e-3, ..Default::default() };
    let logs = train(&mut model, &data, &data[..2], &cfg, |_| {}).unwrap();
    let first = logs[1].train_loss;
    let last = logs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}
