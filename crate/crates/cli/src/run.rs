//! Experiment dispatch and report tables.

use penal_core::experiments::{
    calibrate_power_constant, calibrate_rate_constant, calibrate_stable_lt_constant, constant_clock_limit, direction_statistics,
    exponential_clock_limit, fmt17, martingale_identity_suite, persistence_exponent_langevin, ClockSpec, ConvergenceReport, RatioReference,
};
use penal_core::measure::{build_penalised_ensemble, penalised_longtime_stats, subsequent_markov_check, universality_ratio_test};
use penal_core::{EnsembleConfig, Error, MCEstimate, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{Experiment, ExperimentConfig, Resolved};

/// A finished experiment: its JSON body, its CSV table and the `--check` verdict.
pub struct Report {
    pub json: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub check: bool,
}

fn est(e: &MCEstimate) -> [String; 2] {
    [fmt17(e.mean), fmt17(e.se)]
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), fmt17)
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialise")
}

fn header(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn ensemble_config(cfg: &ExperimentConfig, r: &Resolved) -> Result<EnsembleConfig> {
    let s = &cfg.sampling;
    let mut e = EnsembleConfig::new(r.dynamics, s.horizon()?, s.n, cfg.seed).recording(&s.times);
    e.resample_below = (s.resample_below > 0.0).then_some(s.resample_below);
    Ok(e)
}

fn ratio_reference(cfg: &ExperimentConfig) -> RatioReference {
    cfg.sampling.ratio_reference.map_or(RatioReference::Ensemble, RatioReference::Known)
}

fn need_s(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.sampling
        .s
        .ok_or_else(|| Error::Config("sampling.s is required for this experiment".into()))
}

fn convergence(report: ConvergenceReport) -> Report {
    Report {
        check: report.passed(),
        header: header(&ConvergenceReport::HEADER),
        rows: report.rows(),
        json: json(&report),
    }
}

fn in_band(band: Option<[f64; 2]>, x: f64) -> bool {
    band.is_none_or(|[lo, hi]| x >= lo && x <= hi)
}

pub fn run(cfg: &ExperimentConfig, r: &Resolved) -> Result<Report> {
    let s = &cfg.sampling;
    let weight = || r.weight.as_ref().expect("validated");
    let x0 = || r.starts[0];
    let f = cfg.functional;
    match cfg.experiment {
        Experiment::MartingaleIdentitySuite => {
            let (spec, phi) = weight();
            let rep = martingale_identity_suite(spec, phi, &r.starts, &s.times, r.dynamics, s.n, cfg.seed, s.halving)?;
            Ok(Report {
                check: rep.passed(),
                header: header(&penal_core::experiments::MartingaleReport::HEADER),
                rows: rep.rows(),
                json: json(&rep),
            })
        }
        Experiment::ConstantClockLimit | Experiment::ExponentialClockLimit => Ok(convergence(clock_report(cfg, r)?)),
        Experiment::PersistenceExponentLangevin => {
            let rep = persistence_exponent_langevin(&x0(), &s.times, s.dt, s.n, cfg.seed, s.bootstrap)?;
            Ok(Report {
                check: in_band(s.band, rep.slope.mean),
                header: header(&penal_core::experiments::PersistenceReport::HEADER),
                rows: rep.rows(),
                json: json(&rep),
            })
        }
        Experiment::DirectionStatistics => {
            let (spec, phi) = weight();
            let rep = direction_statistics(spec, phi, &x0(), s.threshold, &ensemble_config(cfg, r)?)?;
            let mut row = vec![rep.weight.clone(), fmt17(rep.horizon), fmt17(rep.threshold)];
            row.extend(est(&rep.below));
            row.extend(est(&rep.above));
            match &rep.split {
                Some(e) => row.extend(est(e)),
                None => row.extend([String::new(), String::new()]),
            }
            row.extend([
                opt(rep.reference),
                rep.pass.map_or(String::new(), |b| b.to_string()),
                fmt17(rep.n_eff),
            ]);
            Ok(Report {
                check: rep.pass != Some(false),
                header: header(&[
                    "weight",
                    "horizon",
                    "threshold",
                    "below",
                    "below_se",
                    "above",
                    "above_se",
                    "split",
                    "split_se",
                    "reference",
                    "pass",
                    "n_eff",
                ]),
                rows: vec![row],
                json: json(&rep),
            })
        }
        Experiment::BuildPenalisedEnsemble => {
            let (spec, phi) = weight();
            let ens = build_penalised_ensemble(spec, phi, &x0(), &ensemble_config(cfg, r)?)?;
            let mut rows = Vec::with_capacity(ens.times.len());
            let mut check = true;
            for (k, t) in ens.times.iter().enumerate() {
                let m = ens.mean_weight(k);
                check &= m.within(1.0, 3.0);
                let mut row = vec![fmt17(*t)];
                row.extend(est(&m));
                row.extend(est(&ens.survival(k)));
                row.push(fmt17(ens.n_eff[k]));
                rows.push(row);
            }
            Ok(Report {
                check,
                header: header(&["t", "mean_weight", "mean_weight_se", "survival", "survival_se", "n_eff"]),
                rows,
                json: json(&ens),
            })
        }
        Experiment::PenalisedLongtimeStats => {
            let (spec, phi) = weight();
            let rep = penalised_longtime_stats(spec, phi, &x0(), &s.times, s.threshold, &ensemble_config(cfg, r)?)?;
            let rows = rep
                .rows
                .iter()
                .map(|row| {
                    let mut v = vec![fmt17(row.time)];
                    v.extend(est(&row.survival));
                    v.push(fmt17(row.median_phi));
                    v.extend(est(&row.below));
                    v.extend(est(&row.above));
                    v.extend([fmt17(row.n_eff), opt(row.median_z)]);
                    v
                })
                .collect();
            Ok(Report {
                check: rep.median_phi_increasing,
                header: header(&[
                    "t",
                    "survival",
                    "survival_se",
                    "median_phi",
                    "below",
                    "below_se",
                    "above",
                    "above_se",
                    "n_eff",
                    "median_z",
                ]),
                rows,
                json: json(&rep),
            })
        }
        Experiment::SubsequentMarkovCheck => {
            let (spec, phi) = weight();
            let g = cfg.test_function;
            let rep = subsequent_markov_check(
                spec,
                phi,
                &x0(),
                need_s(cfg)?,
                s.horizon()?,
                move |st: &[f64; 3]| f.eval(st),
                move |st: &[f64; 3]| g.eval(st),
                r.dynamics,
                s.n,
                s.inner,
                cfg.seed,
            )?;
            let mut row = vec![fmt17(rep.t), fmt17(rep.horizon), rep.inner.to_string()];
            row.extend(est(&rep.lhs));
            row.extend(est(&rep.rhs));
            row.extend([fmt17(rep.z), rep.degenerate_inner.to_string()]);
            Ok(Report {
                check: rep.z <= 3.0,
                header: header(&["t", "horizon", "inner", "lhs", "lhs_se", "rhs", "rhs_se", "z", "degenerate_inner"]),
                rows: vec![row],
                json: json(&rep),
            })
        }
        Experiment::UniversalityRatioTest => {
            let (gs, gp) = weight();
            let (es, ep) = r.other.as_ref().expect("validated");
            let identity = s.identity.map(|[a, b]| (a, b, move |st: &[f64; 3]| f.eval(st)));
            let rep = universality_ratio_test((gs, gp), (es, ep), &x0(), &s.times, identity, &ensemble_config(cfg, r)?)?;
            let mut rows = Vec::new();
            for (law, table) in [("gamma", &rep.under_gamma), ("other", &rep.under_other)] {
                for row in table {
                    let mut v = vec![law.to_string(), fmt17(row.time), fmt17(row.median)];
                    v.extend(est(&row.mean));
                    v.extend([fmt17(row.median_negative), fmt17(row.median_positive)]);
                    v.extend(est(&row.negative));
                    v.push(fmt17(row.n_eff));
                    rows.push(v);
                }
            }
            let mut check = rep.identity.as_ref().is_none_or(|i| i.z <= 3.0);
            for table in [&rep.under_gamma, &rep.under_other] {
                if let Some(last) = table.iter().max_by(|a, b| a.time.total_cmp(&b.time)) {
                    check &= in_band(s.band, last.median_negative);
                }
            }
            Ok(Report {
                check,
                header: header(&[
                    "law",
                    "t",
                    "median",
                    "mean",
                    "mean_se",
                    "median_negative",
                    "median_positive",
                    "negative",
                    "negative_se",
                    "n_eff",
                ]),
                rows,
                json: json(&rep),
            })
        }
    }
}

/// One calibrated constant.
#[derive(Debug, Clone, Serialize)]
pub struct Constant {
    pub name: &'static str,
    pub value: f64,
    pub se: Option<f64>,
}

/// Runs the configured experiment and extracts the constants it determines:
/// `k` (constant clock), `c_r` (exponential clock), `c1` (persistence) and,
/// for stable local-time weights, `C_{α,β}`.
pub fn calibrate(cfg: &ExperimentConfig, r: &Resolved) -> Result<Vec<Constant>> {
    let s = &cfg.sampling;
    let mut out = Vec::new();
    if let Some((penal_core::weights::WeightSpec::LtF { .. }, _)) = &r.weight {
        if let Some(p) = cfg.model.stable()? {
            let bandwidth = r.dynamics.bandwidth().unwrap_or(s.dt.sqrt());
            let c = calibrate_stable_lt_constant(&p, s.horizon()?, s.dt, bandwidth, s.n, cfg.seed)?;
            out.push(Constant {
                name: "stable_lt_constant",
                value: c.mean,
                se: Some(c.se),
            });
            return Ok(out);
        }
    }
    let unavailable = |what: &str| Error::Numerical(format!("{what} could not be calibrated: no weight survived"));
    match cfg.experiment {
        Experiment::ConstantClockLimit => {
            let rep = clock_report(cfg, r)?;
            let k = calibrate_power_constant(&rep, cfg.constant_normaliser()?).ok_or_else(|| unavailable("k"))?;
            out.push(Constant {
                name: "k",
                value: k.mean,
                se: Some(k.se),
            });
        }
        Experiment::ExponentialClockLimit => {
            let rep = clock_report(cfg, r)?;
            let Some(ClockSpec::Exponential { normaliser, .. }) = &cfg.clock else {
                return Err(Error::Config("exponential_clock_limit needs an exponential clock".into()));
            };
            let c = calibrate_rate_constant(&rep, *normaliser).ok_or_else(|| unavailable("c_r"))?;
            out.push(Constant {
                name: "c_r",
                value: c,
                se: None,
            });
        }
        Experiment::PersistenceExponentLangevin => {
            let rep = persistence_exponent_langevin(&r.starts[0], &s.times, s.dt, s.n, cfg.seed, s.bootstrap)?;
            out.push(Constant {
                name: "c1",
                value: rep.c1.ok_or_else(|| unavailable("c1"))?,
                se: None,
            });
            out.push(Constant {
                name: "persistence_slope",
                value: rep.slope.mean,
                se: Some(rep.slope.se),
            });
        }
        _ => {
            return Err(Error::Config(
                "calibrate needs a constant_clock_limit, exponential_clock_limit or persistence_exponent_langevin experiment, or a stable lt_f weight"
                    .into(),
            ))
        }
    }
    Ok(out)
}

fn clock_report(cfg: &ExperimentConfig, r: &Resolved) -> Result<ConvergenceReport> {
    let s = &cfg.sampling;
    let (spec, phi) = r.weight.as_ref().expect("validated");
    let f = cfg.functional;
    let functional = move |st: &[f64; 3]| f.eval(st);
    if cfg.experiment == Experiment::ConstantClockLimit {
        constant_clock_limit(
            spec,
            phi,
            cfg.constant_normaliser()?,
            &r.starts[0],
            functional,
            need_s(cfg)?,
            &s.times,
            ratio_reference(cfg),
            s.rel_tol,
            r.dynamics,
            s.n,
            cfg.seed,
        )
    } else {
        let clock = cfg
            .clock
            .as_ref()
            .ok_or_else(|| Error::Config("exponential_clock_limit needs a [clock] block".into()))?;
        exponential_clock_limit(
            spec,
            phi,
            clock,
            &r.starts[0],
            functional,
            need_s(cfg)?,
            ratio_reference(cfg),
            s.rel_tol,
            r.dynamics,
            s.n,
            cfg.seed,
        )
    }
}
