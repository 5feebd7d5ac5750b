use std::path::PathBuf;

use delaynet::data::{generate, Dataset, SynthSpec};
use delaynet::network::init_parameters;
use delaynet::train::{evaluate, train, Evaluation};
use delaynet::{seeded_rng, Config, RegConfig};
use serde_json::json;

use crate::commands::{check_fit, load_config, load_data};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Table};
use crate::{Common, SweepKind};

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub kind: SweepKind,
    pub grid: String,
    pub seeds: usize,
    pub reg_strength: f64,
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// One grid value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    DelayRange(usize),
    Sparsity { eta: f64, kappa: f64 },
    Regularization(f64),
}

impl Point {
    fn label(&self) -> String {
        match self {
            Point::DelayRange(d) => d.to_string(),
            Point::Sparsity { eta, kappa } => format!("{eta}:{kappa}"),
            Point::Regularization(a) => a.to_string(),
        }
    }

    fn apply(&self, cfg: &mut Config, reg_strength: f64) {
        match *self {
            Point::DelayRange(d) => cfg.model.d_max = d,
            Point::Sparsity { eta, kappa } => {
                cfg.model.delay_sparsity = eta;
                cfg.model.weight_sparsity = kappa;
            }
            Point::Regularization(alpha_max) => {
                cfg.train.reg = Some(RegConfig {
                    alpha_min: 0.0,
                    alpha_max,
                    r: reg_strength,
                })
            }
        }
    }
}

fn number<T: std::str::FromStr>(s: &str) -> CliResult<T> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad grid value `{s}`")))
}

pub fn parse_grid(kind: SweepKind, grid: &str) -> CliResult<Vec<Point>> {
    let items: Vec<&str> = grid.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::Usage("empty --grid".into()));
    }
    items
        .into_iter()
        .map(|item| match kind {
            SweepKind::DelayRange => Ok(Point::DelayRange(number(item)?)),
            SweepKind::Regularization => Ok(Point::Regularization(number(item)?)),
            SweepKind::Sparsity => {
                let (eta, kappa) = item
                    .split_once(':')
                    .ok_or_else(|| CliError::Usage(format!("sparsity values are eta:kappa, got `{item}`")))?;
                Ok(Point::Sparsity {
                    eta: number(eta)?,
                    kappa: number(kappa)?,
                })
            }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn run_cell(cfg: &Config, data: &(Dataset, Dataset)) -> CliResult<Evaluation> {
    cfg.ensure_valid()?;
    let mut model = init_parameters(&cfg.model, &seeded_rng(cfg.model.seed));
    train(&mut model, &data.0, None, &cfg.train)?;
    let ev = evaluate(&model, &data.1, 100)?;
    if !ev.loss.is_finite() {
        return Err(CliError::Runtime("non-finite test loss".into()));
    }
    Ok(ev)
}

pub fn sweep(common: &Common, args: &SweepArgs) -> CliResult {
    let points = parse_grid(args.kind, &args.grid)?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let base = load_config(common)?;
    let fixed = match (&args.data, &args.test) {
        (Some(d), Some(t)) => {
            let pair = (load_data(d)?, load_data(t)?);
            check_fit(&base.model, &pair.0, d)?;
            check_fit(&base.model, &pair.1, t)?;
            Some(pair)
        }
        _ => None,
    };

    let mut table = Table::new(&[
        "kind",
        "value",
        "seeds",
        "accuracy_mean",
        "accuracy_std",
        "spikes_mean",
        "spikes_std",
        "sops_mean",
        "sops_std",
        "failures",
    ]);
    let mut total_failures = 0;
    for (gi, point) in points.iter().enumerate() {
        let (mut acc, mut spikes, mut sops) = (Vec::new(), Vec::new(), Vec::new());
        let mut failures = 0;
        for rep in 0..args.seeds {
            let seed = base.model.seed + (gi * args.seeds + rep) as u64;
            let mut cfg = base.clone();
            cfg.model.seed = seed;
            point.apply(&mut cfg, args.reg_strength);
            let outcome = match &fixed {
                Some(pair) => run_cell(&cfg, pair),
                None => {
                    let spec = SynthSpec {
                        samples: args.train_samples + args.test_samples,
                        seed,
                        ..Default::default()
                    };
                    generate(&spec).map_err(CliError::from).and_then(|all| {
                        cfg.model.input_channels = all.channels;
                        cfg.model.classes = all.classes;
                        run_cell(&cfg, &all.split_at(args.train_samples))
                    })
                }
            };
            match outcome {
                Ok(ev) => {
                    acc.push(ev.accuracy);
                    spikes.push(ev.spikes);
                    sops.push(ev.sops);
                }
                Err(e) => {
                    eprintln!("cell {} seed {seed} failed: {e}", point.label());
                    failures += 1;
                }
            }
        }
        total_failures += failures;
        let (am, asd) = mean_std(&acc);
        let (sm, ssd) = mean_std(&spikes);
        let (om, osd) = mean_std(&sops);
        table.push(vec![
            json!(kind_name(args.kind)),
            json!(point.label()),
            json!(args.seeds),
            json!(am),
            json!(asd),
            json!(sm),
            json!(ssd),
            json!(om),
            json!(osd),
            json!(failures),
        ]);
    }
    emit(common, &table.render(common.format))?;
    if total_failures > 0 {
        return Err(CliError::Runtime(format!("{total_failures} sweep cells failed")));
    }
    Ok(())
}

fn kind_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::DelayRange => "delay_range",
        SweepKind::Sparsity => "sparsity",
        SweepKind::Regularization => "regularization",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(
            parse_grid(SweepKind::DelayRange, "5, 15").unwrap(),
            vec![Point::DelayRange(5), Point::DelayRange(15)]
        );
        assert_eq!(
            parse_grid(SweepKind::Sparsity, "0.8:0.5").unwrap(),
            vec![Point::Sparsity { eta: 0.8, kappa: 0.5 }]
        );
        assert_eq!(parse_grid(SweepKind::DelayRange, " , ").unwrap_err().exit_code(), 1);
        assert!(parse_grid(SweepKind::Sparsity, "0.8").is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
