use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dgp::{CovDist, Dgp, XDist};
use super::missingness::Mechanism;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    /// Complete-case analysis.
    Cc,
    /// Standard FCS with passively derived terms.
    FcsLinear,
    /// Derived terms imputed as just another variable.
    Jav,
    Smcfcs,
}

impl SimMethod {
    pub const ALL: [SimMethod; 4] = [SimMethod::Cc, SimMethod::FcsLinear, SimMethod::Jav, SimMethod::Smcfcs];
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMethod::Cc => "cc",
            SimMethod::FcsLinear => "fcs_linear",
            SimMethod::Jav => "jav",
            SimMethod::Smcfcs => "smcfcs",
        })
    }
}

impl FromStr for SimMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SimMethod::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected cc, fcs_linear, jav or smcfcs)")))
    }
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub reps: usize,
    pub m: usize,
    pub seed: u64,
    pub methods: Vec<SimMethod>,
    /// Sweeps per FCS imputation; the engine default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fcs_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smcfcs_iterations: Option<usize>,
    #[serde(default = "default_level")]
    pub level: f64,
    pub dgp: Dgp,
    pub mechanism: Mechanism,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let p = match self.mechanism {
            Mechanism::Mcar { p_obs } => p_obs,
            Mechanism::Mar { target_p_obs } => target_p_obs,
        };
        if !(p > 0.0 && p < 1.0) {
            return bad(format!("observation probability {p} outside (0, 1)"));
        }
        if matches!(self.mechanism, Mechanism::Mar { .. }) && self.dgp == Dgp::CoxBinNormal {
            return bad("MAR missingness is defined through an uncensored outcome; use mcar for the Cox design".into());
        }
        if self.reps < 1 {
            return bad("reps must be at least 1".into());
        }
        if self.m < 2 {
            return bad("m must be at least 2 for Rubin's rules".into());
        }
        if self.n < 10 {
            return bad(format!("n = {} is too small", self.n));
        }
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("confidence level {} outside (0, 1)", self.level));
        }
        if self.fcs_iterations == Some(0) || self.smcfcs_iterations == Some(0) {
            return bad("iterations must be at least 1".into());
        }
        Ok(())
    }
}

pub const BUILTIN_SEED: u64 = 20_140_101;

/// Names accepted by [`builtin`].
pub fn builtin_names() -> Vec<String> {
    let mut names = Vec::new();
    for x in ["normal", "lognormal", "mixture"] {
        for mech in ["mcar", "mar"] {
            names.push(format!("quad-{x}-{mech}"));
        }
    }
    for c in ["bvnormal", "bvlognormal", "quadcond", "bernnormal", "bernlognormal"] {
        for mech in ["mcar", "mar"] {
            names.push(format!("interact-{c}-{mech}"));
        }
    }
    names.push("cox-n1000".into());
    names.push("cox-n100".into());
    names
}

/// Builtin simulation scenarios at full scale (1000 replications).
pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let parts: Vec<&str> = name.split('-').collect();
    let mcar = Mechanism::Mcar { p_obs: 0.7 };
    let mech = |s: &str| match s {
        "mcar" => Some(mcar),
        "mar" => Some(Mechanism::Mar { target_p_obs: 0.7 }),
        _ => None,
    };
    let base = |dgp, mechanism, n, methods: &[SimMethod], smcfcs_iterations| ScenarioConfig {
        name: name.to_string(),
        n,
        reps: 1000,
        m: 10,
        seed: BUILTIN_SEED,
        methods: methods.to_vec(),
        fcs_iterations: None,
        smcfcs_iterations,
        level: 0.95,
        dgp,
        mechanism,
    };
    use SimMethod::*;
    match parts.as_slice() {
        ["quad", x, m] => {
            let x_dist = match *x {
                "normal" => XDist::Normal,
                "lognormal" => XDist::Lognormal,
                "mixture" => XDist::NormalMixture,
                _ => return None,
            };
            Some(base(Dgp::Quadratic { x_dist }, mech(m)?, 1000, &[Cc, FcsLinear, Jav, Smcfcs], Some(10)))
        }
        ["interact", c, m] => {
            let cov_dist = match *c {
                "bvnormal" => CovDist::Bvnormal,
                "bvlognormal" => CovDist::Bvlognormal,
                "quadcond" => CovDist::QuadConditional,
                "bernnormal" => CovDist::BernNormal,
                "bernlognormal" => CovDist::BernLognormal,
                _ => return None,
            };
            Some(base(Dgp::Interaction { cov_dist }, mech(m)?, 1000, &[Cc, FcsLinear, Jav, Smcfcs], None))
        }
        ["cox", "n1000"] => Some(base(Dgp::CoxBinNormal, mcar, 1000, &[Cc, FcsLinear, Smcfcs], None)),
        ["cox", "n100"] => Some(base(Dgp::CoxBinNormal, mcar, 100, &[Cc, FcsLinear, Smcfcs], None)),
        _ => None,
    }
}
