use std::path::Path;

use delaynet::data::{generate, read_events, write_events, Dataset, SynthSpec};
use delaynet::engine::{compile, occupancy_report, run, EngineOptions};
use delaynet::metrics::{buffer_bits, model_buffer_bits, BufferModelInputs, Buffering};
use delaynet::network::{init_parameters, ForwardOptions, Model};
use delaynet::train::{evaluate, metrics_csv, train as train_model, Evaluation};
use delaynet::{seeded_rng, Config, DelayMechanism, ModelConfig, SpikeTrain};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::output::{emit, write_file, Table};
use crate::{Common, StrategyArg};

/// Reads `--config` (defaults otherwise), applies `--seed` and validates.
pub fn load_config(common: &Common) -> CliResult<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path).map_err(|e| CliError::context(e, path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.model.seed = seed;
    }
    cfg.ensure_valid()?;
    Ok(cfg)
}

pub fn load_data(path: &Path) -> CliResult<Dataset> {
    read_events(path).map_err(|e| CliError::context(e, path.display()))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Model> {
    Model::load(path).map_err(|e| CliError::context(e, path.display()))
}

/// Rejects datasets whose shape does not fit the model.
pub fn check_fit(model: &ModelConfig, data: &Dataset, path: &Path) -> CliResult {
    if data.channels != model.input_channels {
        return Err(CliError::Validation(format!(
            "{}: data has {} channels but the model expects input_channels = {}",
            path.display(),
            data.channels,
            model.input_channels
        )));
    }
    if data.classes > model.classes {
        return Err(CliError::Validation(format!(
            "{}: data has {} classes but the model has {}",
            path.display(),
            data.classes,
            model.classes
        )));
    }
    Ok(())
}

pub fn train(common: &Common, data: &Path, test: Option<&Path>) -> CliResult {
    let cfg = load_config(common)?;
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("train needs --out <DIR>".into()))?;
    let train_set = load_data(data)?;
    check_fit(&cfg.model, &train_set, data)?;
    let test_set = match test {
        Some(p) => {
            let d = load_data(p)?;
            check_fit(&cfg.model, &d, p)?;
            Some(d)
        }
        None => None,
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    write_file(&out.join("config.toml"), &cfg.to_toml_string())?;

    let mut model = init_parameters(&cfg.model, &seeded_rng(cfg.model.seed));
    let history = train_model(&mut model, &train_set, test_set.as_ref(), &cfg.train)?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&history))?;
    let ckpt = out.join("model.json");
    model.save(&ckpt).map_err(|e| CliError::context(e, ckpt.display()))?;

    let mut table = Table::new(&["epoch", "split", "loss", "accuracy", "spikes", "sops"]);
    let last_epoch = history.last().map_or(0, |r| r.epoch);
    for row in history.iter().filter(|r| r.epoch == last_epoch) {
        table.push(vec![
            json!(row.epoch),
            json!(row.split),
            json!(row.loss),
            json!(row.accuracy),
            json!(row.spikes),
            json!(row.sops),
        ]);
    }
    print!("{}", table.render(common.format));
    Ok(())
}

pub fn eval(common: &Common, checkpoint: &Path, data: &Path, strategy: StrategyArg) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let set = load_data(data)?;
    check_fit(&model.config, &set, data)?;
    let Evaluation {
        loss,
        accuracy,
        spikes,
        sops,
    } = evaluate(&model, &set, 100)?;
    let mut table = Table::new(&[
        "samples",
        "accuracy",
        "loss",
        "spikes_per_sample",
        "sops_per_sample",
        "strategy",
        "buffer_bits",
    ]);
    let base = BufferModelInputs::new(
        model.config.layers,
        model.config.hidden,
        model.config.d_max,
        model.mechanism(),
        Buffering::Unshared,
    );
    for s in strategy.strategies() {
        table.push(vec![
            json!(set.len()),
            json!(accuracy),
            json!(loss),
            json!(spikes),
            json!(sops),
            json!(s.name()),
            json!(model_buffer_bits(&model, s, &base)),
        ]);
    }
    emit(common, &table.render(common.format))
}

#[derive(Debug, Clone, Copy, Default)]
struct Occ {
    peak: usize,
    mean_sum: f64,
    rho_sum: f64,
    rho_window: f64,
}

pub fn events(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    strategy: StrategyArg,
    limit: Option<usize>,
    spikes_out: Option<&Path>,
) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let set = load_data(data)?;
    check_fit(&model.config, &set, data)?;
    let em = compile(&model)?;
    let n = limit.unwrap_or(set.len()).min(set.len());
    let strategies = strategy.strategies();
    let layers = em.layers.len();
    let mut occ = vec![vec![Occ::default(); layers]; strategies.len()];
    let mut mismatches = vec![0usize; strategies.len()];
    let mut out_trains: Vec<SpikeTrain> = Vec::new();

    for x in &set.samples[..n] {
        let rec = model.forward_trains(&[x], ForwardOptions::EVAL)?;
        let dense: Vec<Vec<u8>> = rec
            .spikes
            .iter()
            .map(|s| s.iter().map(|&v| v as u8).collect())
            .collect();
        for (si, &s) in strategies.iter().enumerate() {
            let r = run(&em, x, EngineOptions::new(s))?;
            if r.spikes.iter().zip(&dense).any(|(a, b)| a.as_slice() != b.as_slice()) {
                mismatches[si] += 1;
            }
            for summary in occupancy_report(&r.occupancy) {
                let o = &mut occ[si][summary.layer];
                o.peak = o.peak.max(summary.peak);
                o.mean_sum += summary.mean;
                o.rho_sum += summary.rho_per_step;
                o.rho_window = o.rho_window.max(summary.rho_window_peak);
            }
            if si == 0 && spikes_out.is_some() {
                if let Some(last) = r.spikes.last() {
                    out_trains.push(last.clone());
                }
            }
        }
    }

    let mut table = Table::new(&[
        "strategy",
        "layer",
        "mechanism",
        "equivalent",
        "samples",
        "peak_occupancy",
        "mean_occupancy",
        "rho_per_step",
        "rho_window_peak",
        "assumed_rho_p",
    ]);
    let nf = n.max(1) as f64;
    for (si, s) in strategies.iter().enumerate() {
        for (l, o) in occ[si].iter().enumerate() {
            table.push(vec![
                json!(s.name()),
                json!(l),
                json!(em.layers[l].mechanism.name()),
                json!(mismatches[si] == 0),
                json!(n),
                json!(o.peak),
                json!(o.mean_sum / nf),
                json!(o.rho_sum / nf),
                json!(o.rho_window),
                json!(0.2),
            ]);
        }
    }
    emit(common, &table.render(common.format))?;

    if let Some(path) = spikes_out {
        if let Some(first) = out_trains.first() {
            let out = Dataset {
                steps: first.steps(),
                channels: first.channels(),
                classes: set.classes,
                labels: set.labels[..out_trains.len()].to_vec(),
                samples: out_trains,
            };
            write_events(path, &out).map_err(|e| CliError::context(e, path.display()))?;
        }
    }
    let bad: usize = mismatches.iter().sum();
    if bad > 0 {
        return Err(CliError::Correctness(format!(
            "event engine disagreed with the dense model on {bad} sample runs"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct CostFlags {
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub d_max: Option<usize>,
    pub s: u32,
    pub v: u32,
    pub m: Option<u32>,
    pub rho_n: f64,
    pub rho_p: f64,
    pub weight_sparsity: Option<f64>,
}

pub fn cost(common: &Common, flags: CostFlags) -> CliResult {
    let base = match &common.config {
        Some(_) => load_config(common)?.model,
        None => ModelConfig::default(),
    };
    let layers = flags.layers.unwrap_or(base.layers);
    let hidden = flags.hidden.unwrap_or(base.hidden);
    let d_max = flags.d_max.unwrap_or(base.d_max);
    let kappa = flags.weight_sparsity.unwrap_or(base.weight_sparsity);
    if layers == 0 || hidden == 0 || d_max == 0 {
        return Err(CliError::Validation("layers, hidden and d_max must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&flags.rho_p) || flags.rho_n <= 0.0 || !(0.0..=1.0).contains(&kappa) {
        return Err(CliError::Validation(
            "need rho_p in [0,1], rho_n > 0 and weight_sparsity in [0,1]".into(),
        ));
    }
    let mut table = Table::new(&[
        "mechanism",
        "strategy",
        "layers",
        "hidden",
        "d_max",
        "state_bits",
        "delay_bits",
        "buffer_bits",
        "sops_per_spike",
    ]);
    let state = (layers * hidden) as u64 * flags.s as u64;
    for mech in [DelayMechanism::Synaptic, DelayMechanism::Axonal, DelayMechanism::Dendritic] {
        for strategy in Buffering::ALL {
            let inp = BufferModelInputs {
                s: flags.s,
                v: flags.v,
                m: flags.m,
                rho_n: flags.rho_n,
                rho_p: flags.rho_p,
                ..BufferModelInputs::new(layers, hidden, d_max, mech, strategy)
            };
            let bits = buffer_bits(&inp);
            table.push(vec![
                json!(mech.name()),
                json!(strategy.name()),
                json!(layers),
                json!(hidden),
                json!(d_max),
                json!(state),
                json!(bits - state),
                json!(bits),
                json!(hidden as f64 * (1.0 - kappa)),
            ]);
        }
    }
    emit(common, &table.render(common.format))
}

pub fn gen_data(common: &Common, flags: SynthSpec, test_out: Option<&Path>, test_samples: Option<usize>) -> CliResult {
    let mut spec = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => flags,
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("gen-data needs --out <FILE>".into()))?;
    let extra = test_samples.unwrap_or(0);
    let train_n = spec.samples;
    let all = generate(&SynthSpec {
        samples: train_n + extra,
        ..spec.clone()
    })
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let (train_set, test_set) = all.split_at(train_n);
    let mut table = Table::new(&["file", "samples", "classes", "channels", "steps", "events"]);
    let mut write = |path: &Path, d: &Dataset| -> CliResult {
        write_events(path, d).map_err(|e| CliError::context(e, path.display()))?;
        let events: usize = d.samples.iter().map(SpikeTrain::count).sum();
        table.push(vec![
            Value::String(path.display().to_string()),
            json!(d.len()),
            json!(d.classes),
            json!(d.channels),
            json!(d.steps),
            json!(events),
        ]);
        Ok(())
    };
    write(out, &train_set)?;
    if let Some(path) = test_out {
        write(path, &test_set)?;
    }
    print!("{}", table.render(common.format));
    Ok(())
}
