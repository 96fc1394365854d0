//! Data-generating processes for the three simulation studies.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset, VariableKind, VariableRole};
use crate::rng::{stage, Streams};

/// Seed of the fixed stream used to calibrate residual variances.
pub const CALIBRATION_SEED: u64 = 0x5EED_CA11;
pub const CALIBRATION_DRAWS: usize = 1_000_000;

pub const COX_BASE_HAZARD: f64 = 0.002;
pub const COX_CENSOR_HAZARD: f64 = 0.002;

/// `mu` and variance of the normal whose exponential has mean 2 and variance 1.
pub fn lognormal_params() -> (f64, f64) {
    (3.2f64.sqrt().ln(), 1.25f64.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XDist {
    Normal,
    Lognormal,
    NormalMixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovDist {
    Bvnormal,
    Bvlognormal,
    QuadConditional,
    BernNormal,
    BernLognormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dgp {
    Quadratic { x_dist: XDist },
    Interaction { cov_dist: CovDist },
    CoxBinNormal,
}

impl Dgp {
    /// Substantive model of the study, in this crate's formula syntax.
    pub fn formula(&self) -> &'static str {
        match self {
            Dgp::Quadratic { .. } => "y ~ x + x^2",
            Dgp::Interaction { .. } => "y ~ x1 + x2 + x1*x2",
            Dgp::CoxBinNormal => "surv(t, d) ~ x1 + x2",
        }
    }

    pub fn family(&self) -> crate::substantive::SubstantiveFamily {
        match self {
            Dgp::CoxBinNormal => crate::substantive::SubstantiveFamily::Cox,
            _ => crate::substantive::SubstantiveFamily::Linear,
        }
    }

    /// True coefficients in formula order.
    pub fn truth(&self) -> Vec<f64> {
        match self {
            Dgp::Quadratic { .. } => vec![4.0, -4.0, 1.0],
            Dgp::Interaction { .. } => vec![0.0, 1.0, 1.0, 1.0],
            Dgp::CoxBinNormal => vec![1.0, 1.0],
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        match *self {
            Dgp::Quadratic { x_dist } => gen_quadratic(x_dist, n, rng),
            Dgp::Interaction { cov_dist } => gen_interaction(cov_dist, n, rng),
            Dgp::CoxBinNormal => gen_cox(n, rng),
        }
    }
}

fn z<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    f64::from(u8::from(rng.random::<f64>() < p))
}

pub fn draw_x<R: Rng + ?Sized>(dist: XDist, rng: &mut R) -> f64 {
    match dist {
        XDist::Normal => 2.0 + z(rng),
        XDist::Lognormal => {
            let (mu, s2) = lognormal_params();
            (mu + s2.sqrt() * z(rng)).exp()
        }
        XDist::NormalMixture => {
            let centre = if rng.random::<f64>() < 0.5 { 1.125 } else { 2.875 };
            centre + 0.234f64.sqrt() * z(rng)
        }
    }
}

pub fn draw_x12<R: Rng + ?Sized>(dist: CovDist, rng: &mut R) -> (f64, f64) {
    let (mu, s2) = lognormal_params();
    let rho = 0.5;
    match dist {
        CovDist::Bvnormal => {
            let (z1, z2) = (z(rng), z(rng));
            (2.0 + z1, 2.0 + rho * z1 + (1.0 - rho * rho).sqrt() * z2)
        }
        CovDist::Bvlognormal => {
            let (z1, z2) = (z(rng), z(rng));
            let s = s2.sqrt();
            ((mu + s * z1).exp(), (mu + s * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)).exp())
        }
        CovDist::QuadConditional => {
            let x1 = 2.0 + z(rng);
            (x1, (x1 - 2.0).powi(2) + 2.0f64.sqrt() * z(rng))
        }
        CovDist::BernNormal => {
            let x1 = bernoulli(0.5, rng);
            (x1, x1 + z(rng))
        }
        CovDist::BernLognormal => {
            let x1 = bernoulli(0.5, rng);
            (x1, x1 + (mu + s2.sqrt() * z(rng)).exp())
        }
    }
}

fn quadratic_mean(x: f64) -> f64 {
    4.0 - 4.0 * x + x * x
}

fn interaction_mean(x1: f64, x2: f64) -> f64 {
    x1 + x2 + x1 * x2
}

fn sample_variance(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    m2 / (n - 1.0)
}

fn calibration_stream(label: u64) -> crate::rng::SimRng {
    Streams::new(CALIBRATION_SEED).child2(stage::CALIBRATE, label).rng()
}

/// Residual variance giving R^2 = 0.5: the variance of the regression
/// function over a fixed-seed Monte-Carlo sample, computed once per process.
pub fn noise_variance(dgp: Dgp) -> f64 {
    static CACHE: [OnceLock<f64>; 8] = [const { OnceLock::new() }; 8];
    let idx = match dgp {
        Dgp::Quadratic { x_dist } => x_dist as usize,
        Dgp::Interaction { cov_dist } => 3 + cov_dist as usize,
        Dgp::CoxBinNormal => return 0.0,
    };
    *CACHE[idx].get_or_init(|| {
        let mut rng = calibration_stream(idx as u64);
        match dgp {
            Dgp::Quadratic { x_dist } => {
                sample_variance((0..CALIBRATION_DRAWS).map(|_| quadratic_mean(draw_x(x_dist, &mut rng))))
            }
            Dgp::Interaction { cov_dist } => sample_variance((0..CALIBRATION_DRAWS).map(|_| {
                let (x1, x2) = draw_x12(cov_dist, &mut rng);
                interaction_mean(x1, x2)
            })),
            Dgp::CoxBinNormal => unreachable!(),
        }
    })
}

fn partial(name: &str, kind: VariableKind, values: Vec<f64>) -> Column {
    Column::complete(name, kind, VariableRole::PartialCovariate, values)
}

/// Columns `y` (outcome) and `x` (partial covariate), fully observed.
pub fn gen_quadratic<R: Rng + ?Sized>(x_dist: XDist, n: usize, rng: &mut R) -> Dataset {
    let sd = noise_variance(Dgp::Quadratic { x_dist }).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = draw_x(x_dist, rng);
        x.push(xi);
        y.push(quadratic_mean(xi) + sd * z(rng));
    }
    Dataset::new(vec![
        Column::complete("y", VariableKind::Continuous, VariableRole::Outcome, y),
        partial("x", VariableKind::Continuous, x),
    ])
    .expect("generated data is valid")
}

/// Columns `y`, `x1`, `x2`; `x1` is binary for the Bernoulli designs.
pub fn gen_interaction<R: Rng + ?Sized>(cov_dist: CovDist, n: usize, rng: &mut R) -> Dataset {
    let sd = noise_variance(Dgp::Interaction { cov_dist }).sqrt();
    let (mut x1, mut x2, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (a, b) = draw_x12(cov_dist, rng);
        x1.push(a);
        x2.push(b);
        y.push(interaction_mean(a, b) + sd * z(rng));
    }
    let kind1 = match cov_dist {
        CovDist::BernNormal | CovDist::BernLognormal => VariableKind::Binary,
        _ => VariableKind::Continuous,
    };
    Dataset::new(vec![
        Column::complete("y", VariableKind::Continuous, VariableRole::Outcome, y),
        partial("x1", kind1, x1),
        partial("x2", VariableKind::Continuous, x2),
    ])
    .expect("generated data is valid")
}

/// Event time by inversion of the exponential survivor function.
pub fn cox_event_time<R: Rng + ?Sized>(x1: f64, x2: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    -u.ln() / (COX_BASE_HAZARD * (x1 + x2).exp())
}

/// Columns `t` (observed time), `d` (event), `x1` (binary), `x2`.
pub fn gen_cox<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Dataset {
    let censor = Exp::new(COX_CENSOR_HAZARD).expect("positive rate");
    let (mut t, mut d, mut x1, mut x2) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a = bernoulli(0.5, rng);
        let b = a + z(rng);
        let ti = cox_event_time(a, b, rng);
        let ci: f64 = rng.sample(censor);
        t.push(ti.min(ci).max(f64::MIN_POSITIVE));
        d.push(f64::from(u8::from(ti < ci)));
        x1.push(a);
        x2.push(b);
    }
    Dataset::new(vec![
        Column::complete("t", VariableKind::Continuous, VariableRole::Time, t),
        Column::complete("d", VariableKind::Binary, VariableRole::Event, d),
        partial("x1", VariableKind::Binary, x1),
        partial("x2", VariableKind::Continuous, x2),
    ])
    .expect("generated data is valid")
}
