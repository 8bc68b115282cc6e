use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::model::{evaluate, train_with_history, ClassifierError, Target, TrainConfig};
use crate::corpus::{split, Corpus, SplitSpec};
use crate::parallel::{self, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        Self {
            mean: values.clone().sum::<f64>() / n,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// `0.703 (0.702-0.704)`: mean with the observed range.
impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ({:.3}-{:.3})", self.mean, self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Stat,
    pub f1_weighted: Stat,
    pub f1_micro: Stat,
    pub f1_macro: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub target: Target,
    pub runs: Vec<MetricsReport>,
    pub summary: MetricSummary,
}

impl ExperimentSummary {
    pub fn table_header() -> &'static str {
        "Experiment | Accuracy | F1-weighted | F1-micro | F1-macro"
    }

    /// One results row: each metric as mean with (min-max).
    pub fn table_row(&self, name: &str) -> String {
        let s = &self.summary;
        format!(
            "{name} | {} | {} | {} | {}",
            s.accuracy, s.f1_weighted, s.f1_micro, s.f1_macro
        )
    }
}

/// Runs `runs` independent split/train/evaluate cycles. Run `i` splits with
/// seed `config.seed + i` at the default 20% test fraction. Runs execute
/// concurrently under [`ExecMode::Parallel`]; results are in run order.
pub fn repeat_experiment(
    corpus: &Corpus,
    target: Target,
    config: &TrainConfig,
    runs: usize,
    mode: ExecMode,
) -> Result<ExperimentSummary, ClassifierError> {
    if runs == 0 {
        return Err(ClassifierError::InvalidConfig("runs must be at least 1".into()));
    }
    let results = parallel::map_range(mode, runs, |i| -> Result<MetricsReport, ClassifierError> {
        let spec = SplitSpec::with_seed(config.seed.wrapping_add(i as u64));
        let (train, test) = split(corpus, spec)
            .map_err(|e| ClassifierError::InvalidConfig(e.to_string()))?;
        let (model, _) = train_with_history(&train, target, config, ExecMode::Sequential)?;
        Ok(evaluate(&model, &test))
    });
    let runs: Vec<MetricsReport> = results.into_iter().collect::<Result<_, _>>()?;
    let summary = MetricSummary {
        accuracy: Stat::of(runs.iter().map(|r| r.accuracy)),
        f1_weighted: Stat::of(runs.iter().map(|r| r.f1_weighted)),
        f1_micro: Stat::of(runs.iter().map(|r| r.f1_micro)),
        f1_macro: Stat::of(runs.iter().map(|r| r.f1_macro)),
    };
    Ok(ExperimentSummary {
        target,
        runs,
        summary,
    })
}
