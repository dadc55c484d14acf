use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use slowfast::approx::{self, ExitObservation};
use slowfast::ctraj::{self, CTrajectory};
use slowfast::katriel::{self, OrbitOptions, ThresholdOptions};
use slowfast::sim::{self, Initial, Trajectory};
use slowfast::{par, props};

use crate::scenario::{KatrielConfig, Scenario};

/// Output directory plus the files written so far, in order.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, |w| writeln!(w, "{text}"))
    }

    /// Lists every file written, under `{stem}.manifest.json`.
    pub fn manifest(&mut self, stem: &str, command: &str, extra: serde_json::Value) -> Result<()> {
        let m = serde_json::json!({ "command": command, "files": self.written, "details": extra });
        let name = format!("{stem}.manifest.json");
        self.json(&name, &m)
    }
}

/// Level reached by a simulated passage, read off its sides.
fn level_of(e: &ExitObservation) -> &'static str {
    match (e.side_in, e.side_out) {
        (a, b) if a == b => "0",
        (1, _) => "2rho",
        _ => "-2rho",
    }
}

pub fn write_exits(w: &mut dyn Write, exits: &[ExitObservation]) -> std::io::Result<()> {
    writeln!(w, "x_entry,x_exit,level,side_in,side_out")?;
    for e in exits {
        writeln!(w, "{},{},{},{},{}", e.x_entry, e.x_exit, level_of(e), e.side_in, e.side_out)?;
    }
    Ok(())
}

fn write_lens(w: &mut dyn Write, tr: &Trajectory, s: &Scenario) -> std::io::Result<()> {
    let f = s.function().map_err(std::io::Error::other)?;
    writeln!(w, "t,x,z,f_lens,chart")?;
    for q in &tr.samples {
        writeln!(w, "{},{},{},{},{}", q.t, q.x, q.z, sim::lens(f.value(q.x), s.eps), q.chart.as_str())?;
    }
    Ok(())
}

/// Every starting point of a scenario, integrated in parallel and returned in order.
pub fn simulate_all(s: &Scenario) -> Result<Vec<(Initial, Trajectory)>> {
    let (p, f, opts) = (s.params()?, s.function()?, s.sim_options());
    let starts = s.initials()?;
    let runs = par::map(&starts, |&y0| sim::integrate(&p, &f, s.x0, y0, s.t_end, &opts));
    starts
        .into_iter()
        .zip(runs)
        .enumerate()
        .map(|(k, (y0, r))| r.map(|t| (y0, t)).with_context(|| format!("scenario {} start {k} ({y0:?})", s.name)))
        .collect()
}

fn raw_start(y0: Initial) -> Option<f64> {
    match y0 {
        Initial::Y(y) => Some(y),
        _ => None,
    }
}

pub fn c_trajectory(s: &Scenario, y0: f64) -> Result<CTrajectory> {
    let ct = ctraj::build(&s.function()?, s.rho()?, s.x0, y0, s.x0 + s.t_end)
        .with_context(|| format!("scenario {}: C-trajectory from ({}, {y0})", s.name, s.x0))?;
    Ok(ct)
}

pub fn simulate(s: &Scenario, out: &mut Outputs) -> Result<()> {
    let runs = simulate_all(s)?;
    for (k, (_, tr)) in runs.iter().enumerate() {
        out.write(&format!("{}_{k}.traj.csv", s.name), |mut w| sim::write_trajectory_csv(tr, &mut w))?;
        out.write(&format!("{}_{k}.events.csv", s.name), |mut w| sim::write_events_csv(tr, &mut w))?;
        println!("{} start {k}: {} samples, {} events, kappa {:.6}", s.name, tr.samples.len(), tr.events.len(), tr.kappa);
    }
    out.manifest(&s.name, "simulate", serde_json::to_value(s)?)
}

pub fn ctraj(s: &Scenario, out: &mut Outputs) -> Result<()> {
    for (k, y0) in s.initials()?.into_iter().enumerate() {
        let Some(y) = raw_start(y0) else {
            eprintln!("{} start {k}: skipped, C-trajectories need a raw ordinate", s.name);
            continue;
        };
        let ct = c_trajectory(s, y)?;
        out.write(&format!("{}_{k}.ctraj.csv", s.name), |mut w| ct.write_csv(&mut w))?;
        for e in ct.exits() {
            println!("{} start {k}: entry {:.6} exit {:.6} level {}", s.name, e.x_entry, e.s, e.level.as_str());
        }
    }
    out.manifest(&s.name, "ctraj", serde_json::to_value(s)?)
}

/// Returns whether every start passed.
pub fn verify(s: &Scenario, out: &mut Outputs) -> Result<bool> {
    let mut all = true;
    let mut reports = Vec::new();
    for (k, (y0, tr)) in simulate_all(s)?.into_iter().enumerate() {
        let Some(y) = raw_start(y0) else {
            eprintln!("{} start {k}: skipped, C-trajectories need a raw ordinate", s.name);
            continue;
        };
        let ct = c_trajectory(s, y)?;
        let r = approx::verify(&tr, &ct, s.tol, s.ds)?;
        println!("{} start {k}: frechet {:.6} tol {} {}", s.name, r.frechet, r.tol, if r.pass { "pass" } else { "FAIL" });
        all &= r.pass;
        reports.push(serde_json::json!({ "start": k, "y0": y, "report": r, "predicted_exits": ct.exits() }));
    }
    out.json(&format!("{}.verify.json", s.name), &reports)?;
    out.manifest(&s.name, "verify", serde_json::to_value(s)?)?;
    Ok(all)
}

pub fn exits(s: &Scenario, out: &mut Outputs) -> Result<Vec<Vec<ExitObservation>>> {
    let mut all = Vec::new();
    for (k, (_, tr)) in simulate_all(s)?.into_iter().enumerate() {
        let ex = approx::extract_exits(&tr, tr.kappa);
        out.write(&format!("{}_{k}.exits.csv", s.name), |w| write_exits(w, &ex))?;
        for e in &ex {
            println!("{} start {k}: entry {:.6} exit {:.6} level {}", s.name, e.x_entry, e.x_exit, level_of(e));
        }
        all.push(ex);
    }
    out.manifest(&s.name, "exits", serde_json::to_value(s)?)?;
    Ok(all)
}

pub fn lens_view(s: &Scenario, out: &mut Outputs) -> Result<()> {
    for (k, (_, tr)) in simulate_all(s)?.into_iter().enumerate() {
        out.write(&format!("{}_{k}.lens.csv", s.name), |w| write_lens(w, &tr, s))?;
    }
    out.manifest(&s.name, "lens-view", serde_json::to_value(s)?)
}

struct SweepRow {
    nu: f64,
    mu: f64,
    delta: f64,
    delta_direct: f64,
    chi: f64,
    converged: bool,
}

pub fn katriel_sweep(cfg: &KatrielConfig, out: &mut Outputs, stem: &str) -> Result<()> {
    let grid: Vec<(f64, f64)> = cfg.nu.iter().flat_map(|&nu| cfg.mus(nu).into_iter().map(move |mu| (nu, mu))).collect();
    let rows = par::map(&grid, |&(nu, mu)| -> Result<SweepRow> {
        let model = cfg.model(nu, mu)?;
        let eval = katriel::delta_eval(&model, &OrbitOptions::default()).with_context(|| format!("nu {nu} mu {mu}"))?;
        let direct = katriel::delta_direct(&model, cfg.periods, cfg.burn).with_context(|| format!("nu {nu} mu {mu}"))?;
        Ok(SweepRow { nu, mu, delta: eval.delta, delta_direct: direct, chi: katriel::chi(&model)?, converged: eval.converged })
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    out.write(&format!("{stem}.sweep.csv"), |w| {
        writeln!(w, "nu,mu,delta,delta_direct,chi,converged")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{},{}", r.nu, r.mu, r.delta, r.delta_direct, r.chi, r.converged)?;
        }
        Ok(())
    })?;
    for r in &rows {
        println!("nu {} mu {:.6e}: delta {:.6} direct {:.6}", r.nu, r.mu, r.delta, r.delta_direct);
    }
    out.manifest(stem, "katriel-sweep", serde_json::to_value(cfg)?)
}

pub fn katriel_threshold(cfg: &KatrielConfig, out: &mut Outputs, stem: &str) -> Result<()> {
    let mut opts = ThresholdOptions::default();
    if let Some(lo) = cfg.ln_mu_lo {
        opts.ln_mu_lo = lo;
    }
    if let Some(n) = cfg.per_decade {
        opts.per_decade = n;
    }
    let mut found = Vec::new();
    for &nu in &cfg.nu {
        let t = katriel::mu_star(&cfg.model(nu, 0.0)?, &opts).with_context(|| format!("threshold at nu {nu}"))?;
        println!("nu {nu}: mu* {:.6e} (ln {:.6}), {} sign change(s)", t.mu_star, t.ln_mu_star, t.sign_changes);
        out.write(&format!("{stem}.scan_nu{nu}.csv"), |w| {
            writeln!(w, "ln_mu,delta")?;
            for (l, d) in &t.scan {
                writeln!(w, "{l},{d}")?;
            }
            Ok(())
        })?;
        found.push(t);
    }
    out.write(&format!("{stem}.threshold.csv"), |w| {
        writeln!(w, "nu,mu_star,ln_mu_star")?;
        for t in &found {
            writeln!(w, "{},{},{}", t.nu, t.mu_star, t.ln_mu_star)?;
        }
        Ok(())
    })?;
    if found.len() >= 3 {
        let nus: Vec<f64> = found.iter().map(|t| t.nu).collect();
        let mus: Vec<f64> = found.iter().map(|t| t.mu_star).collect();
        let fit = katriel::decay_fit(&nus, &mus)?;
        println!("fit: ln mu* = {:.6} / nu + {:.6}, max residual {:.4}", fit.slope, fit.intercept, fit.max_residual);
        out.json(&format!("{stem}.fit.json"), &fit)?;
    }
    out.manifest(stem, "katriel-threshold", serde_json::to_value(cfg)?)
}

/// Returns whether every check passed.
pub fn props(eps_list: &[f64], out: &mut Outputs) -> Result<bool> {
    let mut all = true;
    let mut suites = Vec::new();
    for &eps in eps_list {
        let suite = props::default_suite(eps);
        for r in &suite {
            for c in r.flatten() {
                println!("eps {eps:<6} {:<40} {:>12.4e} <= {:<12.4e} {}", c.name, c.measured, c.bound, if c.pass { "pass" } else { "FAIL" });
                all &= c.pass;
            }
        }
        suites.push(serde_json::json!({ "eps": eps, "checks": suite }));
    }
    out.json("props.json", &suites)?;
    out.manifest("props", "props", serde_json::json!({ "eps": eps_list }))?;
    Ok(all)
}

/// Orbit samples of the reduced model, `t,x,y,z`.
fn write_orbit(cfg: &KatrielConfig, nu: f64, mu: f64, w: &mut dyn Write) -> Result<()> {
    let (p, f) = katriel::reduce(&cfg.model(nu, mu)?)?;
    let orbit = katriel::periodic_orbit(&p, &f, &OrbitOptions::default())?;
    writeln!(w, "t,x,y,z")?;
    for s in &orbit.samples {
        let y = s.y.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(w, "{},{},{},{}", s.t, s.x, y, s.z)?;
    }
    Ok(())
}

pub fn figure(name: &str, scenarios: &[Scenario], out: &mut Outputs) -> Result<()> {
    if name == "katriel" {
        let mut cfg = KatrielConfig { nu: vec![0.1], ..KatrielConfig::default() };
        cfg.rho = (1..=12).map(|i| -0.05 * i as f64).collect();
        katriel_sweep(&cfg, out, "katriel")?;
        for rho in [-0.05, -0.3, -0.6] {
            let mu = 0.5 * (rho / 0.1f64).exp();
            let mut buf = Vec::new();
            write_orbit(&cfg, 0.1, mu, &mut buf)?;
            out.write(&format!("katriel.orbit_rho{rho}.csv"), |w| w.write_all(&buf))?;
        }
        cfg.ln_mu_lo = Some(-40.0);
        return katriel_threshold(&cfg, out, "katriel");
    }
    for s in scenarios {
        let runs = simulate_all(s)?;
        let mut ordering = Vec::new();
        for (k, (y0, tr)) in runs.iter().enumerate() {
            out.write(&format!("{}_{k}.traj.csv", s.name), |mut w| sim::write_trajectory_csv(tr, &mut w))?;
            out.write(&format!("{}_{k}.lens.csv", s.name), |w| write_lens(w, tr, s))?;
            let ex = approx::extract_exits(tr, tr.kappa);
            out.write(&format!("{}_{k}.exits.csv", s.name), |w| write_exits(w, &ex))?;
            if let Some(y) = raw_start(*y0) {
                let ct = c_trajectory(s, y)?;
                out.write(&format!("{}_{k}.ctraj.csv", s.name), |mut w| ct.write_csv(&mut w))?;
                let predicted: Vec<String> = ct.exits().iter().map(|e| format!("{:.4}", e.s)).collect();
                let simulated: Vec<String> = ex.iter().map(|e| format!("{:.4}", e.x_exit)).collect();
                println!("{} start {k}: predicted exits [{}], simulated [{}]", s.name, predicted.join(", "), simulated.join(", "));
            }
            ordering.push((k, tr.samples[0].z, ex.first().map(|e| e.x_exit)));
        }
        if s.u0.len() > 1 {
            out.write(&format!("{}.ordering.csv", s.name), |w| {
                writeln!(w, "k,z0,x_exit")?;
                for (k, z0, x) in &ordering {
                    writeln!(w, "{},{},{}", k + 1, z0, x.map(|v| v.to_string()).unwrap_or_default())?;
                }
                Ok(())
            })?;
            let exited = ordering.iter().filter(|o| o.2.is_some()).count();
            println!("{}: {exited} of {} exited by x = {}", s.name, ordering.len(), s.x0 + s.t_end);
        }
    }
    out.manifest(name, "figure", serde_json::to_value(scenarios)?)
}
