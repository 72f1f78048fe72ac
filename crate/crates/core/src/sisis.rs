//! Confounder screening by intersecting the screened treatment predictors with
//! the screened predictors of the effect-adjusted outcome.

use std::collections::BTreeSet;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{ridge_cv_augmented, RidgeCvOptions};
use crate::screening::{isis, IsisOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SisisOptions {
    pub max_iter: usize,
    pub isis: IsisOptions,
    pub ridge: RidgeCvOptions,
}

impl SisisOptions {
    pub fn for_rows(n: usize) -> Self {
        Self { max_iter: 10, isis: IsisOptions::for_rows(n), ridge: RidgeCvOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SisisOutput {
    /// Screened predictors of the treatment, sorted ascending.
    pub d_set: Vec<usize>,
    /// Screened predictors of `y - d * gamma_hat`, sorted ascending.
    pub r_set: Vec<usize>,
    /// `d_set` intersected with `r_set`, sorted ascending.
    pub confounders: Vec<usize>,
    pub gamma_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the screening loop on standardized `x` with centered `d` and `y`.
///
/// The effect starts at the `d` coefficient of a cross-validated ridge of `y`
/// on `[d | X]`. Each pass screens `y - d * gamma`, intersects with the
/// treatment screen, and refits the effect by ridge of `y` on `d` plus the
/// current intersection. The loop ends when the outcome screen repeats.
pub fn sisis_select(y: ArrayView1<f64>, d: ArrayView1<f64>, x: ArrayView2<f64>, opts: &SisisOptions) -> Result<SisisOutput> {
    let (_, mut gamma, _) = ridge_cv_augmented(x, d, y, &opts.ridge)?;
    let d_set: BTreeSet<usize> = isis(x, d, &opts.isis)?.selected.into_iter().collect();

    let mut prev_r: Option<BTreeSet<usize>> = None;
    let mut confounders = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let target = &y - &(&d * gamma);
        let r_set: BTreeSet<usize> = isis(x, target.view(), &opts.isis)?.selected.into_iter().collect();
        if prev_r.as_ref() == Some(&r_set) {
            converged = true;
            break;
        }
        confounders = d_set.intersection(&r_set).cloned().collect();
        let xc = x.select(Axis(1), &confounders);
        gamma = ridge_cv_augmented(xc.view(), d, y, &opts.ridge)?.1;
        prev_r = Some(r_set);
    }
    Ok(SisisOutput {
        d_set: d_set.into_iter().collect(),
        r_set: prev_r.unwrap_or_default().into_iter().collect(),
        confounders,
        gamma_hat: gamma,
        iterations,
        converged,
    })
}
