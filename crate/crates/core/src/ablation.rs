//! Trains and evaluates every architecture variant under one protocol.

use std::collections::HashMap;
use std::fmt::Write as _;

use rgnet_tensor::Scalar;

use crate::config::{ModelConfig, ModelVariant, TrainConfig};
use crate::dataset::{Manifest, Samples};
use crate::error::Result;
use crate::train::{evaluate, train};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub variant: ModelVariant,
    pub seed: u64,
    pub accuracy: f64,
    pub ap: f64,
}

/// Mean over seeds for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: ModelVariant,
    pub accuracy: f64,
    pub ap: f64,
    pub runs: usize,
}

/// Decoded train and test sets, cached per input side.
struct SideCache<'a, T> {
    train: &'a Manifest,
    test: &'a Manifest,
    loaded: HashMap<usize, (Samples<T>, Samples<T>)>,
}

impl<T: Scalar> SideCache<'_, T> {
    fn get(&mut self, side: usize, cfg: &ModelConfig) -> Result<&(Samples<T>, Samples<T>)> {
        if !self.loaded.contains_key(&side) {
            let tr = Samples::load(self.train, side, cfg.task)?;
            let te = Samples::load(self.test, side, cfg.task)?;
            self.loaded.insert(side, (tr, te));
        }
        Ok(&self.loaded[&side])
    }
}

/// Every `(variant, seed)` pair trained from scratch on `train_set` and
/// evaluated on `test_set`. `observer` sees each run as it finishes.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Manifest,
    test_set: &Manifest,
    variants: &[ModelVariant],
    seeds: &[u64],
    mut observer: impl FnMut(&AblationRun),
) -> Result<Vec<AblationRun>> {
    let mut cache = SideCache::<T> {
        train: train_set,
        test: test_set,
        loaded: HashMap::new(),
    };
    let mut runs = Vec::with_capacity(variants.len() * seeds.len());
    for &variant in variants {
        let cfg = ModelConfig {
            variant,
            ..base.clone()
        };
        let side = train_cfg.side_for(variant);
        for &seed in seeds {
            let tc = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let (tr, te) = cache.get(side, &cfg)?;
            let (state, _) = train(&cfg, &tc, tr, None)?;
            let m = evaluate(&state.model, te, tc.batch_size)?;
            let run = AblationRun {
                variant,
                seed,
                accuracy: m.accuracy,
                ap: m.ap,
            };
            observer(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}

/// Per-variant means in first-appearance order.
pub fn summarize(runs: &[AblationRun]) -> Vec<AblationRow> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for r in runs {
        match rows.iter_mut().find(|row| row.variant == r.variant) {
            Some(row) => {
                row.accuracy += r.accuracy;
                row.ap += r.ap;
                row.runs += 1;
            }
            None => rows.push(AblationRow {
                variant: r.variant,
                accuracy: r.accuracy,
                ap: r.ap,
                runs: 1,
            }),
        }
    }
    for row in &mut rows {
        row.accuracy /= row.runs as f64;
        row.ap /= row.runs as f64;
    }
    rows
}

/// `variant,accuracy,ap` table.
pub fn summary_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,accuracy,ap\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.variant, r.accuracy, r.ap);
    }
    out
}

/// `variant,seed,accuracy,ap` table.
pub fn runs_csv(runs: &[AblationRun]) -> String {
    let mut out = String::from("variant,seed,accuracy,ap\n");
    for r in runs {
        let _ = writeln!(out, "{},{},{},{}", r.variant, r.seed, r.accuracy, r.ap);
    }
    out
}
