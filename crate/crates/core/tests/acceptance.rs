//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,2,9` restricts the run to the listed criteria.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::desk;
use delaynet::delays::{depthwise_conv, synaptic_conv, KernelBank};
use delaynet::engine::{compile, run, EngineOptions};
use delaynet::metrics::{buffer_bits, layer_buffer_bits, BufferModelInputs, Buffering};
use delaynet::network::{init_parameters, ForwardOptions, Model};
use delaynet::train::{firing_rate_reg, lr_schedule, metrics_csv, sigma_schedule, train};
use delaynet::{seeded_rng, DelayMechanism, ModelConfig, RegConfig, SchedulerKind, SpikeTrain, TrainConfig};
use ndarray::{Array2, Array3};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for mech in DelayMechanism::ALL {
        for seed in 0..6 {
            worst = worst.max(common::gradient_check(mech, 1000 + seed));
            instances += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 120.0,
        format!("{instances} instances, worst relative error {worst:.2e}, {secs:.1}s"),
    )
}

fn random_engine_model(mech: DelayMechanism, seed: u64) -> (Model, SpikeTrain) {
    let mut rng = seeded_rng(seed);
    let cfg = ModelConfig {
        layers: 1 + rng.below(2),
        hidden: 1 + rng.below(16),
        input_channels: 1 + rng.below(12),
        classes: 2 + rng.below(4),
        d_max: 1 + rng.below(12),
        delay_mechanism: mech,
        threshold: 0.2 + 0.6 * rng.uniform(),
        weight_sparsity: if rng.bernoulli(0.3) { 0.5 } else { 0.0 },
        seed,
        ..Default::default()
    };
    let mut model = init_parameters(&cfg, &seeded_rng(seed));
    for layer in &mut model.layers {
        if let Some(d) = &mut layer.delays {
            for (p, keep) in d.positions.iter_mut().zip(&d.mask) {
                if *keep {
                    *p = rng.below(cfg.d_max) as f64;
                }
            }
        }
        if let Some(bn) = &mut layer.bn {
            bn.running_mean.mapv_inplace(|_| 0.3 * rng.gaussian());
            bn.running_var.mapv_inplace(|_| 0.3 + rng.uniform());
            bn.gamma.mapv_inplace(|_| 0.5 + rng.uniform());
            bn.beta.mapv_inplace(|_| 0.2 * rng.gaussian());
        }
    }
    let steps = 1 + rng.below(50);
    let data = (0..steps * cfg.input_channels).map(|_| rng.bernoulli(0.35) as u8).collect();
    (model, SpikeTrain::from_dense(steps, cfg.input_channels, data).unwrap())
}

fn engine_equivalence() -> Verdict {
    let start = Instant::now();
    let (mut cases, mut mismatches, mut spikes) = (0, 0, 0usize);
    for seed in 0..100u64 {
        for mech in DelayMechanism::ALL {
            let (model, x) = random_engine_model(mech, seed);
            let rec = model.forward_trains(&[&x], ForwardOptions::EVAL).unwrap();
            let want: Vec<Vec<u8>> = rec
                .spikes
                .iter()
                .map(|s| s.iter().map(|&v| v as u8).collect())
                .collect();
            let em = compile(&model).unwrap();
            for strategy in Buffering::ALL {
                let got = run(&em, &x, EngineOptions::new(strategy)).unwrap();
                cases += 1;
                let same = got.spikes.iter().zip(&want).all(|(g, w)| g.as_slice() == w.as_slice());
                if !same {
                    mismatches += 1;
                }
                spikes += got.spikes.iter().map(SpikeTrain::count).sum::<usize>();
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < 120.0 && spikes > 0,
        format!("{cases} runs (100 networks x 4 mechanisms x 2 strategies), {mismatches} mismatches, {spikes} spikes compared, {secs:.1}s"),
    )
}

fn dendritic_distributivity() -> Verdict {
    let mut exact = 0;
    let total = 60;
    for seed in 0..total {
        let mut rng = seeded_rng(5000 + seed);
        let (steps, pre, post, d_max) = (1 + rng.below(40), 1 + rng.below(10), 1 + rng.below(10), 1 + rng.below(12));
        let w = Array2::from_shape_simple_fn((post, pre), || rng.int_inclusive(-128, 128) as f64 / 128.0);
        let x = Array3::from_shape_simple_fn((steps, 3, pre), || rng.bernoulli(0.4) as u8 as f64);
        let delays: Vec<usize> = (0..post).map(|_| rng.below(d_max)).collect();
        let mut mixed = Array3::<f64>::zeros((steps, 3, post));
        for t in 0..steps {
            mixed.index_axis_mut(ndarray::Axis(0), t).assign(&x.index_axis(ndarray::Axis(0), t).dot(&w.t()));
        }
        let mix_then_delay = depthwise_conv(mixed.view(), KernelBank::one_hot(&delays, d_max).lag_major().view());
        let tied: Vec<usize> = (0..post).flat_map(|i| std::iter::repeat_n(delays[i], pre)).collect();
        let delay_then_mix = synaptic_conv(x.view(), w.view(), KernelBank::one_hot(&tied, d_max).lag_major().view());
        if mix_then_delay == delay_then_mix {
            exact += 1;
        }
    }
    verdict(exact == total, format!("{exact}/{total} instances bit-identical"))
}

fn buffer_model() -> Verdict {
    let bits = |mech, hidden| buffer_bits(&BufferModelInputs::new(3, hidden, 15, mech, Buffering::Unshared));
    let ax = bits(DelayMechanism::Axonal, 512);
    let syn = bits(DelayMechanism::Synaptic, 512);
    let den = bits(DelayMechanism::Dendritic, 512);
    let values_ok = ax == 47_616 && syn == 11_821_056 && den == 393_216;
    let mut ratios = Vec::new();
    let mut scaling_ok = true;
    for h in [8usize, 64, 512] {
        let state = (h * 16) as u64;
        let inp = |mech| BufferModelInputs::new(1, h, 15, mech, Buffering::Unshared);
        let c_ax = layer_buffer_bits(h, h, &inp(DelayMechanism::Axonal)) - state;
        let c_syn = layer_buffer_bits(h, h, &inp(DelayMechanism::Synaptic)) - state;
        scaling_ok &= c_syn == c_ax * h as u64;
        ratios.push(format!(
            "H={h}: delay-term ratio {} total ratio {:.1}",
            c_syn / c_ax,
            bits(DelayMechanism::Synaptic, h) as f64 / bits(DelayMechanism::Axonal, h) as f64
        ));
    }
    verdict(
        values_ok && scaling_ok,
        format!("axonal {ax}, synaptic {syn}, dendritic {den}; {}", ratios.join("; ")),
    )
}

/// Trained desk-scale outcomes keyed by variant name, one per seed.
type Runs = BTreeMap<&'static str, Vec<desk::Outcome>>;

fn train_variant(name: &'static str, cfg_of: impl Fn(u64) -> ModelConfig, tcfg: &TrainConfig, runs: &mut Runs) {
    if runs.contains_key(name) {
        return;
    }
    let outcomes = desk::SEEDS
        .iter()
        .map(|&seed| {
            let t0 = Instant::now();
            let o = desk::run(&cfg_of(seed), tcfg, |_, _| {});
            eprintln!(
                "  {name} seed {seed}: accuracy {:.3}, spikes/sample {:.1} ({:.1}s)",
                o.accuracy,
                o.spikes,
                t0.elapsed().as_secs_f64()
            );
            o
        })
        .collect();
    runs.insert(name, outcomes);
}

fn mean_accuracy(runs: &Runs, name: &str) -> f64 {
    desk::mean(runs[name].iter().map(|o| o.accuracy))
}

fn axonal(runs: &mut Runs) {
    let tcfg = desk::train_config();
    train_variant("axonal", |s| desk::model_config(DelayMechanism::Axonal, 15, s), &tcfg, runs);
}

fn delay_learning_benefit(runs: &mut Runs) -> Verdict {
    let start = Instant::now();
    let tcfg = desk::train_config();
    axonal(runs);
    train_variant("none", |s| desk::model_config(DelayMechanism::None, 15, s), &tcfg, runs);
    train_variant("dendritic", |s| desk::model_config(DelayMechanism::Dendritic, 15, s), &tcfg, runs);
    train_variant("synaptic", |s| desk::model_config(DelayMechanism::Synaptic, 15, s), &tcfg, runs);
    let secs = start.elapsed().as_secs_f64();
    let [ax, none, den, syn] = ["axonal", "none", "dendritic", "synaptic"].map(|n| mean_accuracy(runs, n));
    let pass = ax >= 0.90 && ax - none >= 0.20 && (den - ax).abs() <= 0.05 && (syn - ax).abs() <= 0.05 && secs < 1800.0;
    verdict(
        pass,
        format!(
            "mean test accuracy axonal {:.1}%, no delays {:.1}%, dendritic {:.1}%, synaptic {:.1}%; {secs:.0}s",
            100.0 * ax,
            100.0 * none,
            100.0 * den,
            100.0 * syn
        ),
    )
}

fn delay_range_trend(runs: &mut Runs) -> Verdict {
    let tcfg = desk::train_config();
    axonal(runs);
    train_variant("axonal_dmax5", |s| desk::model_config(DelayMechanism::Axonal, 5, s), &tcfg, runs);
    let (wide, narrow) = (mean_accuracy(runs, "axonal"), mean_accuracy(runs, "axonal_dmax5"));
    verdict(
        wide - narrow >= 0.10,
        format!("d_max=15 {:.1}% vs d_max=5 {:.1}%", 100.0 * wide, 100.0 * narrow),
    )
}

fn masks_zero(model: &Model) -> bool {
    model.layers.iter().all(|l| {
        let weights = l.weights.iter().zip(&l.weight_mask).all(|(w, m)| *m != 0.0 || *w == 0.0);
        let delays = l
            .delays
            .as_ref()
            .is_none_or(|d| d.positions.iter().zip(&d.mask).all(|(p, keep)| *keep || *p == 0.0));
        weights && delays
    })
}

fn sparsity_robustness(runs: &mut Runs) -> Verdict {
    let tcfg = desk::train_config();
    axonal(runs);
    let mut violations = 0usize;
    let mut checks = 0usize;
    let mut outcomes = Vec::new();
    for &seed in &desk::SEEDS {
        let cfg = ModelConfig {
            delay_sparsity: 0.8,
            weight_sparsity: 0.0,
            ..desk::model_config(DelayMechanism::Axonal, 15, seed)
        };
        let o = desk::run(&cfg, &tcfg, |_, m| {
            checks += 1;
            if !masks_zero(m) {
                violations += 1;
            }
        });
        eprintln!("  axonal eta=0.8 seed {seed}: accuracy {:.3}", o.accuracy);
        outcomes.push(o);
    }
    let dense = mean_accuracy(runs, "axonal");
    let sparse = desk::mean(outcomes.iter().map(|o| o.accuracy));
    let active = outcomes[0].model.layers[0].delays.as_ref().unwrap().mask.iter().filter(|&&k| k).count();
    verdict(
        dense - sparse <= 0.10 && violations == 0,
        format!(
            "dense {:.1}% vs eta=0.8 {:.1}% ({active}/20 first-layer delays active); masks checked after {checks} steps, {violations} violations",
            100.0 * dense,
            100.0 * sparse
        ),
    )
}

fn regularizer_behavior(runs: &mut Runs) -> Verdict {
    axonal(runs);
    let base = &runs["axonal"];
    let mut outcomes = Vec::new();
    let mut alpha = Vec::new();
    for (i, &seed) in desk::SEEDS.iter().enumerate() {
        let alpha_max = 0.5 * base[i].mean_rate;
        alpha.push(alpha_max);
        let tcfg = TrainConfig {
            reg: Some(RegConfig {
                alpha_min: 0.0,
                alpha_max,
                r: REG_STRENGTH,
            }),
            ..desk::train_config()
        };
        let o = desk::run(&desk::model_config(DelayMechanism::Axonal, 15, seed), &tcfg, |_, _| {});
        eprintln!("  axonal regularized seed {seed}: accuracy {:.3}, spikes/sample {:.1}", o.accuracy, o.spikes);
        outcomes.push(o);
    }
    let (acc0, acc1) = (mean_accuracy(runs, "axonal"), desk::mean(outcomes.iter().map(|o| o.accuracy)));
    let (sp0, sp1) = (
        desk::mean(base.iter().map(|o| o.spikes)),
        desk::mean(outcomes.iter().map(|o| o.spikes)),
    );
    let reduction = 1.0 - sp1 / sp0;

    let inside = RegConfig {
        alpha_min: 0.5,
        alpha_max: 3.0,
        r: 2.0,
    };
    let mut rng = seeded_rng(77);
    let mut dead_zone = true;
    for _ in 0..200 {
        let rates: Vec<Vec<f64>> = (0..3).map(|_| (0..16).map(|_| rng.uniform_range(0.5, 3.0)).collect()).collect();
        let (penalty, grads) = firing_rate_reg(&rates, &inside);
        dead_zone &= penalty == 0.0 && grads.iter().flatten().all(|&g| g == 0.0);
    }
    verdict(
        reduction >= 0.20 && acc0 - acc1 <= 0.10 && dead_zone,
        format!(
            "alpha_max = half the unregularized rate (mean {:.3}), r={REG_STRENGTH}: spikes/sample {sp0:.1} -> {sp1:.1} ({:.1}% fewer), accuracy {:.1}% -> {:.1}%; dead zone exact: {dead_zone}",
            desk::mean(alpha.iter().copied()),
            100.0 * reduction,
            100.0 * acc0,
            100.0 * acc1
        ),
    )
}

const REG_STRENGTH: f64 = 0.01;

fn schedules_and_determinism() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    ok &= sigma_schedule(0.0, 100, 15, 0.25) == 7.5;
    ok &= (25..100).all(|e| sigma_schedule(e as f64, 100, 15, 0.25) == 0.5);
    ok &= sigma_schedule(12.5, 100, 15, 0.25) == 4.0;
    let base = 1e-3;
    ok &= lr_schedule(SchedulerKind::Cosine, 0, 1000, base) == base;
    ok &= lr_schedule(SchedulerKind::Cosine, 1000, 1000, base) == 0.0;
    ok &= lr_schedule(SchedulerKind::OneCycle, 0, 1000, base) == base / 25.0;
    ok &= lr_schedule(SchedulerKind::OneCycle, 300, 1000, base) == base;
    ok &= lr_schedule(SchedulerKind::OneCycle, 1000, 1000, base) == base / 100.0;
    ok &= (0..1000).all(|s| lr_schedule(SchedulerKind::OneCycle, s, 1000, base) <= base);
    ok &= (0..1000).all(|s| lr_schedule(SchedulerKind::None, s, 1000, base) == base);
    notes.push(format!("schedule endpoints exact: {ok}"));

    let csv = |seed| {
        let (train_set, test_set) = desk::data(seed);
        let (train_set, _) = train_set.split_at(120);
        let (test_set, _) = test_set.split_at(60);
        let cfg = ModelConfig {
            hidden: 16,
            ..desk::model_config(DelayMechanism::Axonal, 15, seed)
        };
        let tcfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            ..desk::train_config()
        };
        let mut model = init_parameters(&cfg, &seeded_rng(seed));
        metrics_csv(&train(&mut model, &train_set, Some(&test_set), &tcfg).unwrap())
    };
    let (a, b) = (csv(7), csv(7));
    let identical = a.as_bytes() == b.as_bytes();
    notes.push(format!("metrics CSV byte-identical across reruns: {identical} ({} bytes)", a.len()));
    verdict(ok && identical, notes.join("; "))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut runs = Runs::new();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let t0 = Instant::now();
        let v = f();
        let took: Duration = t0.elapsed();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("[{tag}] {n}. {name}: {} [{:.1}s]", v.detail, took.as_secs_f64());
    };
    report(1, "gradient correctness", &mut gradient_correctness);
    report(2, "engine equivalence", &mut engine_equivalence);
    report(3, "dendritic distributivity", &mut dendritic_distributivity);
    report(4, "buffer model", &mut buffer_model);
    report(5, "delay-learning benefit", &mut || delay_learning_benefit(&mut runs));
    report(6, "delay-range trend", &mut || delay_range_trend(&mut runs));
    report(7, "sparsity robustness", &mut || sparsity_robustness(&mut runs));
    report(8, "regularizer behavior", &mut || regularizer_behavior(&mut runs));
    report(9, "schedules and determinism", &mut schedules_and_determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
