//! Seeded simulation scenarios and selection metrics.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`) seeded with a 64-bit seed.
//! Standard normals use `rand_distr::StandardNormal`; uniforms use
//! `Rng::random::<f64>()`. Draws happen in this fixed order:
//! `X1, X2, X3, X4` (each row by row, columns left to right), then
//! `alpha1, alpha2, beta1, beta2` (coefficient index order), then the
//! treatment noise and the outcome noise.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a covariate in the data generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Affects treatment and outcome.
    Confounder,
    /// Affects treatment only.
    TreatmentPredictor,
    /// Affects outcome only.
    OutcomePredictor,
    /// Affects neither.
    Redundant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Confounder => "confounder",
            Role::TreatmentPredictor => "treatment_predictor",
            Role::OutcomePredictor => "outcome_predictor",
            Role::Redundant => "redundant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confounder" => Some(Role::Confounder),
            "treatment_predictor" => Some(Role::TreatmentPredictor),
            "outcome_predictor" => Some(Role::OutcomePredictor),
            "redundant" => Some(Role::Redundant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub p4: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub gamma_true: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// The three simulation presets (1-based).
    pub fn preset(scenario: u8, seed: u64) -> Option<Self> {
        let base = Self { n: 1200, p1: 10, p2: 300, p3: 300, p4: 390, sigma2: 1.0, rho: 0.2, gamma_true: 1.0, seed };
        match scenario {
            1 => Some(base),
            2 => Some(Self { rho: 0.4, ..base }),
            3 => Some(Self { p2: 500, p3: 500, p4: 490, ..base }),
            _ => None,
        }
    }

    pub fn p(&self) -> usize {
        self.p1 + self.p2 + self.p3 + self.p4
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::TooFewRows { rows: self.n, required: 2 });
        }
        if !(self.sigma2 > 0.0) || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!(
                "need sigma2 > 0 and 0 <= rho < 1, got sigma2 = {}, rho = {}",
                self.sigma2, self.rho
            )));
        }
        if self.p() == 0 {
            return Err(Error::InvalidInput("scenario has no covariates".into()));
        }
        Ok(())
    }
}

/// Seed of replication `index` under `master`: a SplitMix64 step, so child
/// seeds do not depend on scheduling order.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generated data set on the raw (unstandardized) scale.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: ScenarioConfig,
    /// Columns ordered `X1 | X2 | X3 | X4`.
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub d: Array1<f64>,
    pub roles: Vec<Role>,
    /// Treatment-model coefficients per column (zero outside `X1, X2`).
    pub alpha_true: Array1<f64>,
    /// Outcome-model coefficients per column (zero outside `X1, X3`).
    pub beta_true: Array1<f64>,
    pub noise_d: Array1<f64>,
    pub noise_y: Array1<f64>,
}

impl SimDataset {
    pub fn confounders(&self) -> Vec<usize> {
        self.roles.iter().enumerate().filter(|(_, r)| **r == Role::Confounder).map(|(i, _)| i).collect()
    }
}

/// `rows` draws from `N_p(0, Sigma)` with `Sigma_jk = sigma2 * rho^|j-k|`.
///
/// Uses the AR(1) recursion `x_j = rho x_{j-1} + sigma sqrt(1 - rho^2) z_j`,
/// which is exactly the lower Cholesky factor of `Sigma` applied to `z`.
pub fn ar1_block<R: Rng>(rng: &mut R, rows: usize, cols: usize, sigma2: f64, rho: f64) -> Array2<f64> {
    let sigma = sigma2.sqrt();
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut out = Array2::zeros((rows, cols));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mut prev = 0.0;
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { sigma * z } else { rho * prev + innov * z };
            row[j] = v;
            prev = v;
        }
    }
    out
}

/// Uniform on `(-1, -0.2) U (0.2, 1)`: one uniform draw mapped piecewise
/// linearly, redrawn on the measure-zero boundary values.
pub fn draw_coefficient<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        let v = if u < 0.5 { -1.0 + 1.6 * u } else { 0.2 + 1.6 * (u - 0.5) };
        if v.abs() > 0.2 && v.abs() < 1.0 {
            return v;
        }
    }
}

pub fn generate(config: &ScenarioConfig) -> Result<SimDataset> {
    config.validate()?;
    let ScenarioConfig { n, p1, p2, p3, p4, sigma2, rho, gamma_true, seed } = *config;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let x1 = ar1_block(&mut rng, n, p1, sigma2, rho);
    let x2 = ar1_block(&mut rng, n, p2, sigma2, rho);
    let x3 = ar1_block(&mut rng, n, p3, sigma2, rho);
    let x4 = ar1_block(&mut rng, n, p4, sigma2, rho);

    let mut draw = |k: usize| Array1::from_shape_simple_fn(k, || draw_coefficient(&mut rng));
    let alpha1 = draw(p1);
    let alpha2 = draw(p2);
    let beta1 = draw(p1);
    let beta2 = draw(p3);

    let sigma = sigma2.sqrt();
    let noise_d = Array1::from_shape_simple_fn(n, || sigma * rng.sample::<f64, _>(StandardNormal));
    let noise_y = Array1::from_shape_simple_fn(n, || sigma * rng.sample::<f64, _>(StandardNormal));

    let d = x1.dot(&alpha1) + x2.dot(&alpha2) + &noise_d;
    let y = &d * gamma_true + x1.dot(&beta1) + x3.dot(&beta2) + &noise_y;

    let x = concatenate(Axis(1), &[x1.view(), x2.view(), x3.view(), x4.view()]).expect("blocks share the row count");
    let p = config.p();
    let mut alpha_true = Array1::zeros(p);
    let mut beta_true = Array1::zeros(p);
    alpha_true.slice_mut(ndarray::s![..p1]).assign(&alpha1);
    alpha_true.slice_mut(ndarray::s![p1..p1 + p2]).assign(&alpha2);
    beta_true.slice_mut(ndarray::s![..p1]).assign(&beta1);
    beta_true.slice_mut(ndarray::s![p1 + p2..p1 + p2 + p3]).assign(&beta2);

    let roles = std::iter::repeat_n(Role::Confounder, p1)
        .chain(std::iter::repeat_n(Role::TreatmentPredictor, p2))
        .chain(std::iter::repeat_n(Role::OutcomePredictor, p3))
        .chain(std::iter::repeat_n(Role::Redundant, p4))
        .collect();

    Ok(SimDataset { config: *config, x, y, d, roles, alpha_true, beta_true, noise_d, noise_y })
}

/// Selection quality against the known confounders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    /// Number of variables selected as confounders.
    pub sn: usize,
    /// True confounders among the selected.
    pub tn: usize,
    /// Largest 1-based rank of a true confounder in the importance-ordered
    /// selection; only defined when every true confounder was selected.
    pub cn: Option<usize>,
}

/// `ranked` lists the selected variables in decreasing importance.
pub fn compute_metrics(ranked: &[usize], roles: &[Role]) -> Metrics {
    let p1 = roles.iter().filter(|r| **r == Role::Confounder).count();
    let mut tn = 0;
    let mut last = 0;
    for (rank, &i) in ranked.iter().enumerate() {
        if roles.get(i) == Some(&Role::Confounder) {
            tn += 1;
            last = rank + 1;
        }
    }
    let cn = (tn == p1 && p1 > 0).then_some(last);
    Metrics { sn: ranked.len(), tn, cn }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::{Cholesky, UPLO};

    fn small(seed: u64, rho: f64) -> ScenarioConfig {
        ScenarioConfig { n: 400, p1: 3, p2: 4, p3: 4, p4: 5, sigma2: 1.0, rho, gamma_true: 1.0, seed }
    }

    #[test]
    fn presets_match_published_dimensions() {
        let s1 = ScenarioConfig::preset(1, 0).unwrap();
        assert_eq!((s1.n, s1.p1, s1.p2, s1.p3, s1.p4, s1.rho), (1200, 10, 300, 300, 390, 0.2));
        assert_eq!(s1.p(), 1000);
        assert_eq!(ScenarioConfig::preset(2, 0).unwrap().rho, 0.4);
        let s3 = ScenarioConfig::preset(3, 0).unwrap();
        assert_eq!((s3.p2, s3.p3, s3.p4, s3.p()), (500, 500, 490, 1500));
        assert!(ScenarioConfig::preset(4, 0).is_none());
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = generate(&small(9, 0.3)).unwrap();
        let b = generate(&small(9, 0.3)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.d, b.d);
        let c = generate(&small(10, 0.3)).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn mechanism_reconstructs_exactly() {
        let s = generate(&small(1, 0.2)).unwrap();
        let eps_d = &s.d - &s.x.dot(&s.alpha_true);
        let eps_y = &s.y - &(&s.d * 1.0) - &s.x.dot(&s.beta_true);
        for (a, b) in eps_d.iter().zip(s.noise_d.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in eps_y.iter().zip(s.noise_y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_avoid_the_dead_zone() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let v = draw_coefficient(&mut rng);
            assert!(v.abs() > 0.2 && v.abs() < 1.0);
        }
        let s = generate(&small(2, 0.2)).unwrap();
        for (a, r) in s.alpha_true.iter().zip(&s.roles) {
            let active = matches!(r, Role::Confounder | Role::TreatmentPredictor);
            assert_eq!(*a != 0.0, active);
        }
    }

    #[test]
    fn ar1_recursion_equals_cholesky_factor() {
        let (p, sigma2, rho) = (6, 2.0, 0.4);
        let mut rng_a = ChaCha20Rng::seed_from_u64(5);
        let mut rng_b = ChaCha20Rng::seed_from_u64(5);
        let block = ar1_block(&mut rng_a, 3, p, sigma2, rho);
        let sigma = Array2::from_shape_fn((p, p), |(j, k)| sigma2 * rho.powi((j as i32 - k as i32).abs()));
        let l = sigma.cholesky(UPLO::Lower).unwrap();
        for row in block.axis_iter(Axis(0)) {
            let z = Array1::from_shape_simple_fn(p, || rng_b.sample::<f64, _>(StandardNormal));
            let via_chol = l.dot(&z);
            for (a, b) in row.iter().zip(via_chol.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn independence_limit_has_small_covariances() {
        let cfg = ScenarioConfig { n: 1200, p1: 0, p2: 0, p3: 0, p4: 8, rho: 0.0, ..small(4, 0.0) };
        let s = generate(&cfg).unwrap();
        let n = cfg.n as f64;
        let mut total = 0.0;
        let mut count = 0.0;
        for j in 0..8 {
            for k in (j + 1)..8 {
                total += (s.x.column(j).dot(&s.x.column(k)) / n).abs();
                count += 1.0;
            }
        }
        assert!(total / count < 4.0 / n.sqrt());
    }

    #[test]
    fn adjacent_columns_have_rho_covariance() {
        let s = generate(&ScenarioConfig::preset(1, 11).unwrap()).unwrap();
        let n = s.config.n as f64;
        // Adjacent pairs inside the X2 block, averaged.
        let mut total = 0.0;
        for j in 10..309 {
            let a = s.x.column(j);
            let b = s.x.column(j + 1);
            let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
            total += a.iter().zip(b.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / (n - 1.0);
        }
        let mean_cov = total / 299.0;
        assert!((mean_cov - 0.2).abs() < 0.03, "{mean_cov}");
        let single = {
            let a = s.x.column(100);
            let b = s.x.column(101);
            a.dot(&b) / n
        };
        assert!((single - 0.2).abs() < 0.1);
    }

    #[test]
    fn metrics_cover_number() {
        let roles: Vec<Role> = (0..30).map(|i| if i < 10 { Role::Confounder } else { Role::Redundant }).collect();
        let perfect: Vec<usize> = (0..12).collect();
        assert_eq!(compute_metrics(&perfect, &roles), Metrics { sn: 12, tn: 10, cn: Some(10) });

        // Truths at ranks 1..9 and 14.
        let mut ranked: Vec<usize> = (0..9).collect();
        ranked.extend([20, 21, 22, 23, 9, 24, 25, 26]);
        let m = compute_metrics(&ranked, &roles);
        assert_eq!((m.sn, m.tn, m.cn), (17, 10, Some(14)));

        let partial: Vec<usize> = (0..7).chain(20..25).collect();
        assert_eq!(compute_metrics(&partial, &roles).cn, None);
        assert_eq!(compute_metrics(&partial, &roles).tn, 7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn metrics_are_permutation_equivariant(
                perm_seed in 0u64..10_000,
                picks in proptest::collection::vec(0usize..40, 0..40),
            ) {
                let roles: Vec<Role> = (0..40).map(|i| if i % 7 == 0 { Role::Confounder } else { Role::OutcomePredictor }).collect();
                let mut ranked = Vec::new();
                for i in picks {
                    if !ranked.contains(&i) {
                        ranked.push(i);
                    }
                }
                let mut rng = ChaCha20Rng::seed_from_u64(perm_seed);
                let mut perm: Vec<usize> = (0..40).collect();
                for i in (1..40).rev() {
                    let j = rng.random_range(0..=i);
                    perm.swap(i, j);
                }
                let mut relabeled_roles = vec![Role::Redundant; 40];
                for (old, &new) in perm.iter().enumerate() {
                    relabeled_roles[new] = roles[old];
                }
                let relabeled: Vec<usize> = ranked.iter().map(|&i| perm[i]).collect();
                prop_assert_eq!(compute_metrics(&ranked, &roles), compute_metrics(&relabeled, &relabeled_roles));
                let m = compute_metrics(&ranked, &roles);
                prop_assert!(m.tn <= m.sn.min(6));
                if let Some(cn) = m.cn { prop_assert!(cn >= m.tn); }
            }
        }
    }
}
