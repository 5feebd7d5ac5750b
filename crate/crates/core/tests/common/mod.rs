//! Helpers shared by integration tests.
#![allow(dead_code)]

use delaynet::network::{init_parameters, ForwardOptions, KernelChoice, Model};
use delaynet::neuron::SpikeMode;
use delaynet::{seeded_rng, DelayMechanism, ModelConfig, SeededRng};
use ndarray::{Array2, Array3};

pub const SOFT_TRAIN: ForwardOptions = ForwardOptions {
    mode: SpikeMode::Soft,
    training: true,
    kernels: KernelChoice::Gaussian,
};

struct Probe {
    x: Array3<f64>,
    g_logits: Array2<f64>,
    g_spikes: Vec<Array3<f64>>,
}

impl Probe {
    fn new(model: &Model, steps: usize, batch: usize, rng: &mut SeededRng) -> Self {
        let cfg = &model.config;
        let x = Array3::from_shape_simple_fn((steps, batch, cfg.input_channels), || {
            rng.bernoulli(0.35) as u8 as f64
        });
        let g_logits = Array2::from_shape_simple_fn((batch, cfg.classes), || rng.gaussian());
        let g_spikes = (0..cfg.layers)
            .map(|_| Array3::from_shape_simple_fn((steps, batch, cfg.hidden), || 0.3 * rng.gaussian()))
            .collect();
        Self { x, g_logits, g_spikes }
    }

    fn loss(&self, model: &Model) -> f64 {
        let (rec, _) = model.forward(&self.x, SOFT_TRAIN, None).unwrap();
        let mut l = (&rec.logits * &self.g_logits).sum();
        for (s, g) in rec.spikes.iter().zip(&self.g_spikes) {
            l += (s * g).sum();
        }
        l
    }
}

pub fn random_model(mech: DelayMechanism, rng: &mut SeededRng) -> Model {
    let cfg = ModelConfig {
        layers: 1 + rng.below(2),
        hidden: 3 + rng.below(6),
        input_channels: 2 + rng.below(5),
        classes: 2 + rng.below(3),
        d_max: 3 + rng.below(6),
        delay_mechanism: mech,
        dropout_p: 0.0,
        threshold: 0.6,
        surrogate_slope: 2.0,
        sigma_init: Some(0.7 + 1.5 * rng.uniform()),
        seed: rng.next_u64(),
        ..Default::default()
    };
    let mut m = init_parameters(&cfg, &seeded_rng(cfg.seed));
    // Move BN affine off its identity init so its gradients are exercised.
    for l in &mut m.layers {
        if let Some(bn) = &mut l.bn {
            bn.gamma.mapv_inplace(|_| 0.8 + 0.6 * rng.uniform());
            bn.beta.mapv_inplace(|_| 0.4 * rng.gaussian());
        }
    }
    m
}

/// Worst relative error between BPTT and central differences over every
/// trainable parameter of a random soft-mode instance.
pub fn gradient_check(mech: DelayMechanism, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let model = random_model(mech, &mut rng);
    let steps = 4 + rng.below(12);
    let probe = Probe::new(&model, steps, 3, &mut rng);
    let (_, cache) = model.forward(&probe.x, SOFT_TRAIN, None).unwrap();
    let grads = model.backward(&cache, &probe.g_logits, Some(&probe.g_spikes));
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    let n_params = m.params_mut().len();
    assert_eq!(n_params, analytic.len());
    for p in 0..n_params {
        let len = m.params_mut()[p].values.len();
        for i in 0..len {
            let orig = m.params_mut()[p].values[i];
            m.params_mut()[p].values[i] = orig + h;
            let lp = probe.loss(&m);
            m.params_mut()[p].values[i] = orig - h;
            let lm = probe.loss(&m);
            m.params_mut()[p].values[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[p][i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}


/// Desk-scale training setup used by the accuracy-level checks.
pub mod desk {
    use delaynet::data::{generate, Dataset, SynthSpec};
    use delaynet::network::{init_parameters, Model};
    use delaynet::train::{evaluate, train_with_hook};
    use delaynet::{seeded_rng, DelayMechanism, ModelConfig, SchedulerKind, TrainConfig};

    pub const TRAIN_SAMPLES: usize = 800;
    pub const TEST_SAMPLES: usize = 400;
    pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

    pub fn data(seed: u64) -> (Dataset, Dataset) {
        let spec = SynthSpec {
            samples: TRAIN_SAMPLES + TEST_SAMPLES,
            seed,
            ..Default::default()
        };
        generate(&spec).unwrap().split_at(TRAIN_SAMPLES)
    }

    pub fn model_config(mech: DelayMechanism, d_max: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 64,
            input_channels: 20,
            classes: 8,
            d_max,
            delay_mechanism: mech,
            dropout_p: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn train_config() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr_weights: 0.01,
            lr_delays: 0.1,
            weight_scheduler: SchedulerKind::OneCycle,
            delay_scheduler: SchedulerKind::Cosine,
            ..Default::default()
        }
    }

    #[derive(Debug, Clone)]
    pub struct Outcome {
        pub model: Model,
        /// Inference-mode test accuracy.
        pub accuracy: f64,
        /// Inference-mode hidden spikes per test sample.
        pub spikes: f64,
        /// Training-mode spikes per neuron per sample in the last epoch.
        pub mean_rate: f64,
    }

    pub fn run(cfg: &ModelConfig, tcfg: &TrainConfig, hook: impl FnMut(usize, &Model)) -> Outcome {
        let (train_set, test_set) = data(cfg.seed);
        let mut model = init_parameters(cfg, &seeded_rng(cfg.seed));
        let history = train_with_hook(&mut model, &train_set, None, tcfg, hook).unwrap();
        let last = history.last().unwrap();
        let ev = evaluate(&model, &test_set, 100).unwrap();
        Outcome {
            accuracy: ev.accuracy,
            spikes: ev.spikes,
            mean_rate: last.spikes / (cfg.layers * cfg.hidden) as f64,
            model,
        }
    }

    pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
        let v: Vec<f64> = xs.into_iter().collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}
