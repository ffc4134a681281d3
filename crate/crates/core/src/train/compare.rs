use std::fmt::Write as _;
use std::time::Instant;

use super::{train, EpochMetrics, TrainConfig, TrainError};
use crate::autograd::Scalar;
use crate::dataset::Dataset;
use crate::zoo::{NetKind, Network, StreamConfig};

/// Training settings for the two kinds of network; every run in a
/// comparison uses the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub unimodal: TrainConfig,
    pub multimodal: TrainConfig,
    pub seed: u64,
}

impl CompareConfig {
    pub fn config_for(&self, kind: NetKind) -> TrainConfig {
        let base = if kind.is_multimodal() {
            &self.multimodal
        } else {
            &self.unimodal
        };
        base.clone().with_seed(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub kind: NetKind,
    /// Test accuracy after the last epoch.
    pub accuracy: f64,
    pub epochs: usize,
    pub wall_secs: f64,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn row(&self, kind: NetKind) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn best_unimodal(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.kind.is_multimodal())
            .map(|r| r.accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `strategy,accuracy,epochs`. Wall time is left out so that reruns
    /// produce identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,accuracy,epochs\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.kind, r.accuracy, r.epochs).expect("string write");
        }
        out
    }

    /// Aligned table including wall time.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12} {:>9} {:>7} {:>10}\n", "strategy", "accuracy", "epochs", "wall_s");
        for r in &self.rows {
            writeln!(
                out,
                "{:<12} {:>9.4} {:>7} {:>10.2}",
                r.kind.name(),
                r.accuracy,
                r.epochs,
                r.wall_secs
            )
            .expect("string write");
        }
        out
    }
}

/// Trains the two unimodal baselines and all six fusion networks.
pub fn compare_strategies<T: Scalar>(
    data: &Dataset<T>,
    stream: &StreamConfig,
    cfg: &CompareConfig,
) -> Result<CompareReport, TrainError> {
    let mut rows = Vec::with_capacity(NetKind::ALL.len());
    for kind in NetKind::ALL {
        let tc = cfg.config_for(kind);
        let start = Instant::now();
        let mut net = Network::<T>::build(kind, stream, cfg.seed)?;
        let outcome = train(&mut net, data, &tc)?;
        let wall_secs = start.elapsed().as_secs_f64();
        let accuracy = outcome
            .metrics
            .last()
            .and_then(|m| m.test_accuracy)
            .unwrap_or(f64::NAN);
        log::info!("{kind}: accuracy {accuracy:.4} in {wall_secs:.1}s");
        rows.push(CompareRow {
            kind,
            accuracy,
            epochs: tc.epochs,
            wall_secs,
            metrics: outcome.metrics,
        });
    }
    Ok(CompareReport { rows })
}
