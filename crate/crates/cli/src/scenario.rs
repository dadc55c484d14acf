use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use slowfast::katriel::{self, TwoPatchModel};
use slowfast::sim::{Initial, SimOptions, SmParams};
use slowfast::PiecewiseFunction;

pub const FIG2: &str = "x<2*pi: cos(x)+cos(2*x)+0.4 ; else: -1";
pub const FIG5: &str = "all: 0.5*cos(x)+0.1";
pub const FIG8: &str = "x<3.1416: 0.5*cos(x) ; else: 1.5+1.8*sin(x)";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Piecewise text for `f`.
    pub f: String,
    pub eps: f64,
    pub rho: Option<f64>,
    pub m: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    /// Starting ordinates.
    #[serde(default)]
    pub y0: Vec<f64>,
    /// Starting ordinates in units of `m`.
    #[serde(default)]
    pub u0: Vec<f64>,
    pub t_end: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_ds")]
    pub ds: f64,
    pub kappa: Option<f64>,
    pub halo_y: Option<f64>,
    pub stride: Option<f64>,
}

fn default_tol() -> f64 {
    0.15
}

fn default_ds() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KatrielConfig {
    /// Mean rate `s` and difference `d`; `r1 = s + d/2`, `r2 = s − d/2`.
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_d")]
    pub d: String,
    #[serde(default = "default_nus")]
    pub nu: Vec<f64>,
    /// Sweep points as `ρ = ν ln(2μ)`; ignored when `mu` is given.
    #[serde(default = "default_rhos")]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(default = "default_burn")]
    pub burn: usize,
    pub ln_mu_lo: Option<f64>,
    pub per_decade: Option<usize>,
}

fn default_s() -> f64 {
    -0.1
}

fn default_d() -> String {
    katriel::EXAMPLE_D.to_string()
}

fn default_nus() -> Vec<f64> {
    vec![0.1, 0.05, 0.02]
}

fn default_rhos() -> Vec<f64> {
    vec![-0.05, -0.3, -0.6]
}

fn default_periods() -> usize {
    50
}

fn default_burn() -> usize {
    10
}

impl Default for KatrielConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

impl KatrielConfig {
    pub fn model(&self, nu: f64, mu: f64) -> Result<TwoPatchModel> {
        let d = PiecewiseFunction::parse(&self.d).context("katriel.d")?;
        Ok(TwoPatchModel::from_mean_and_difference(self.s, &d, nu, mu)?)
    }

    pub fn mus(&self, nu: f64) -> Vec<f64> {
        if self.mu.is_empty() {
            self.rho.iter().map(|r| 0.5 * (r / nu).exp()).collect()
        } else {
            self.mu.clone()
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: Option<Scenario>,
    pub katriel: Option<KatrielConfig>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("in {}", path.display()))
    }
}

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub eps: Option<f64>,
    pub rho: Option<f64>,
    pub tol: Option<f64>,
}

impl Scenario {
    pub fn apply(mut self, o: Overrides) -> Self {
        if let Some(eps) = o.eps {
            self.eps = eps;
        }
        if let Some(rho) = o.rho {
            self.rho = Some(rho);
            self.m = None;
        }
        if let Some(tol) = o.tol {
            self.tol = tol;
        }
        self
    }

    pub fn function(&self) -> Result<PiecewiseFunction> {
        PiecewiseFunction::parse(&self.f).with_context(|| format!("scenario {}: f", self.name))
    }

    pub fn params(&self) -> Result<SmParams> {
        let p = match (self.rho, self.m) {
            (Some(rho), None) => SmParams::with_rho(self.eps, rho),
            (None, Some(m)) => SmParams::with_m(self.eps, m),
            _ => bail!("scenario {}: give exactly one of rho and m", self.name),
        };
        p.validate().with_context(|| format!("scenario {}", self.name))?;
        Ok(p)
    }

    pub fn rho(&self) -> Result<f64> {
        Ok(self.params()?.rho())
    }

    pub fn sim_options(&self) -> SimOptions {
        let mut o = SimOptions { kappa: self.kappa, stride: self.stride, ..SimOptions::default() };
        if let Some(h) = self.halo_y {
            o.halo_y = h;
        }
        o
    }

    /// Starting points in order: raw ordinates first, then `m` units.
    pub fn initials(&self) -> Result<Vec<Initial>> {
        let v: Vec<Initial> = self.y0.iter().map(|&y| Initial::Y(y)).chain(self.u0.iter().map(|&u| Initial::MUnits(u))).collect();
        if v.is_empty() {
            bail!("scenario {}: no initial conditions (y0 or u0)", self.name);
        }
        Ok(v)
    }

    fn base(name: &str, f: &str, eps: f64, rho: f64, x0: f64, y0: Vec<f64>, t_end: f64) -> Scenario {
        Scenario {
            name: name.to_string(),
            f: f.to_string(),
            eps,
            rho: Some(rho),
            m: None,
            x0,
            y0,
            u0: Vec::new(),
            t_end,
            tol: default_tol(),
            ds: default_ds(),
            kappa: None,
            halo_y: None,
            stride: None,
        }
    }
}

pub const FIGURES: &[&str] = &["retard5", "retard10", "retard5bis", "retard6bis", "cisim", "katriel"];

/// Built-in scenarios behind the figures; `katriel` has none.
pub fn builtin(name: &str) -> Result<Vec<Scenario>> {
    Ok(match name {
        "retard5" => vec![Scenario::base("retard5", FIG2, 0.01, -0.4, 0.0, vec![2.0], 7.0)],
        "retard10" => vec![Scenario::base("retard10", FIG5, 0.01, -0.6, 0.0, vec![2.0], 8.0)],
        "retard5bis" => vec![Scenario::base("retard5bis", FIG2, 0.01, -0.1, 0.0, vec![2.0], 7.0)],
        "retard6bis" => vec![
            Scenario::base("retard6bis_eps0.01", FIG2, 0.01, -0.4, 0.0, vec![2.0], 7.0),
            Scenario::base("retard6bis_eps0.1", FIG2, 0.1, -0.4, 0.0, vec![2.0], 7.0),
        ],
        "cisim" => {
            let mut s = Scenario::base("cisim", FIG8, 0.01, -1.2, 1.0, Vec::new(), 5.5);
            s.u0 = (1..=9).map(|k| (k as f64 - 5.0) * 0.2).collect();
            vec![s]
        }
        "katriel" => Vec::new(),
        other => bail!("unknown scenario {other:?}; known: {}", FIGURES.join(", ")),
    })
}
