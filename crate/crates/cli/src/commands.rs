use std::fs;
use std::io::Write;

use anyhow::{bail, Context, Result};
use cams::information::{MseBound, MseEvaluator};
use cams::model::{extended_f64, format_f64};
use cams::montecarlo::{block_mse_experiment, chebyshev_bound, concentration_experiment, TrialOptions};
use cams::scenarios::{angle_grid, beam_pattern};
use cams::solver::{capacity_only, solve_capacity_mse, solve_ofdm, sweep_curve, TradeoffSolver};
use cams::{CovMatrix, Exec, ScenarioShape, TradeoffPoint, TradeoffStatus};
use serde::Serialize;

use crate::config::{InputChoice, OutputFormat, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_OPTIMAL: u8 = 2;

/// Angles in the beam-pattern file.
const BEAM_GRID: usize = 721;

pub struct Ctx {
    pub out_dir: std::path::PathBuf,
    pub quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn create_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.note(format!("wrote {}", path.display()));
        Ok(())
    }
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn exit_for(points: &[&TradeoffPoint]) -> u8 {
    if points.iter().all(|p| p.status == TradeoffStatus::Optimal) {
        EXIT_OK
    } else {
        EXIT_NOT_OPTIMAL
    }
}

#[derive(Serialize)]
struct CurveRow {
    #[serde(serialize_with = "extended_f64::serialize")]
    delta: f64,
    rate_bits: f64,
    #[serde(serialize_with = "extended_f64::serialize")]
    rate_bits_bcrb_bound: f64,
    #[serde(serialize_with = "extended_f64::serialize")]
    lambda_sensing: f64,
    kkt_residual: f64,
    status: TradeoffStatus,
}

pub fn sweep(cfg: &RunConfig, ctx: &Ctx) -> Result<u8> {
    let s = cfg.build_scenario()?;
    ctx.note(format!("sweep: {} points", cfg.sweep.n_points));
    let sweep = sweep_curve(&s, cfg.sweep.n_points, &cfg.solver, cfg.sweep.include_bcrb)?;
    ctx.note(format!(
        "delta_min {}, delta_comm {}{}",
        format_f64(sweep.delta_min),
        format_f64(sweep.delta_comm),
        if sweep.open_ended { " (open-ended, capped)" } else { "" }
    ));
    let rows: Vec<CurveRow> = sweep
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| CurveRow {
            delta: p.delta,
            rate_bits: p.rate_bits,
            rate_bits_bcrb_bound: sweep.bcrb_points.as_ref().map_or(f64::NAN, |b| b[i].rate_bits),
            lambda_sensing: p.lambda_sensing,
            kkt_residual: p.kkt_residual,
            status: p.status,
        })
        .collect();
    ctx.create_dir()?;
    match cfg.output.format {
        OutputFormat::Csv => {
            let header = ["delta", "rate_bits", "rate_bits_bcrb_bound", "lambda_sensing", "kkt_residual", "status"];
            let body = rows.iter().map(|r| {
                vec![
                    format_f64(r.delta),
                    format_f64(r.rate_bits),
                    format_f64(r.rate_bits_bcrb_bound),
                    format_f64(r.lambda_sensing),
                    format_f64(r.kkt_residual),
                    r.status.to_string(),
                ]
            });
            ctx.write("curve.csv", &csv(&header, body))?;
        }
        OutputFormat::Json => ctx.write("curve.json", &json(&rows)?)?,
    }
    for (i, p) in sweep.points.iter().enumerate() {
        ctx.write(&format!("q_opt_{i}.json"), &json(&p.q_opt)?)?;
    }
    let mut all: Vec<&TradeoffPoint> = sweep.points.iter().collect();
    if let Some(b) = &sweep.bcrb_points {
        all.extend(b.iter());
    }
    Ok(exit_for(&all))
}

pub fn beampattern(cfg: &RunConfig, deltas: &[f64], ctx: &Ctx) -> Result<u8> {
    if !cfg.is_doa() {
        bail!("beam patterns are defined for DoA scenarios only");
    }
    let s = cfg.build_scenario()?;
    let solver = TradeoffSolver::new(&s, cfg.solver)?;
    let endpoint = solver.sensing_optimum(MseBound::Ecrb);
    let comm = solver.capacity_only();
    let mut series: Vec<(String, TradeoffPoint)> = vec![("comm_optimal".into(), comm.clone())];
    series.push(("sensing_optimal".into(), solver.solve_with(endpoint.delta_min, MseBound::Ecrb, &endpoint)?));
    for (i, &d) in deltas.iter().enumerate() {
        let p = if d >= comm.delta { comm.clone() } else { solver.solve_with(d, MseBound::Ecrb, &endpoint)? };
        series.push((format!("point_{i}"), p));
    }
    let grid = angle_grid(BEAM_GRID);
    let mut rows = vec![];
    for (label, p) in &series {
        for (theta, b) in beam_pattern(&p.q_opt, s.power, &grid) {
            rows.push(vec![label.clone(), format_f64(p.delta), format_f64(theta), format_f64(b)]);
        }
    }
    ctx.create_dir()?;
    ctx.write("beampattern.csv", &csv(&["series", "delta", "theta", "b"], rows))?;
    Ok(exit_for(&series.iter().map(|(_, p)| p).collect::<Vec<_>>()))
}

#[derive(Serialize)]
struct McSummary {
    n_block: usize,
    trials: usize,
    seed: u64,
    /// `N` times the empirical MSE (sum over parameters, weighted).
    n_mse_empirical: f64,
    n_mse_stderr: f64,
    /// Trial average of the CRB at each block's empirical covariance.
    ecrb_predicted: f64,
    ratio: f64,
    /// ECRB of the nominal input on the scenario's prior sample set.
    ecrb_nominal: f64,
    concentration_delta: f64,
    concentration_rate: f64,
    chebyshev_bound: f64,
    concentration_sigma: f64,
    /// Chebyshev's bound is exact only for a rank-one input; otherwise indicative.
    input_rank_one: bool,
}

pub fn simulate(cfg: &RunConfig, ctx: &Ctx) -> Result<u8> {
    let s = cfg.build_scenario()?;
    let mc = &cfg.montecarlo;
    let q = match mc.input {
        InputChoice::Isotropic => CovMatrix::scaled_identity(s.tx_dim(), s.power),
        InputChoice::Capacity => capacity_only(&s)?.q_opt,
        InputChoice::SensingOptimal => TradeoffSolver::new(&s, cfg.solver)?.sensing_optimum(MseBound::Ecrb).q,
        InputChoice::Delta(d) => solve_capacity_mse(&s, d, &cfg.solver)?.q_opt,
    };
    let opts = TrialOptions {
        n_block: mc.n_block,
        trials: mc.trials,
        grid_size: mc.grid_size,
        delta_band: mc.delta_band,
        seed: cfg.seed,
        exec: Exec::Parallel,
    };
    ctx.note(format!("simulate: {} trials of N = {}", mc.trials, mc.n_block));
    let report = block_mse_experiment(&s, &q, &opts)?;
    let thetas = s.theta_samples();
    let ecrb_nominal = MseEvaluator::new(&s, &thetas)?.ecrb(&q);
    let lmax = q.max_eigenvalue();
    let conc =
        concentration_experiment(&q, mc.n_block, mc.concentration_delta * lmax, mc.trials, cfg.seed, Exec::Parallel)?;
    let eig = q.eigenvalues();
    let rank_one = eig.iter().filter(|&&v| v > 1e-12 * lmax).count() == 1;
    let summary = McSummary {
        n_block: mc.n_block,
        trials: mc.trials,
        seed: cfg.seed,
        n_mse_empirical: report.n_mse_empirical,
        n_mse_stderr: report.n_mse_stderr,
        ecrb_predicted: report.ecrb_predicted,
        ratio: report.ratio,
        ecrb_nominal,
        concentration_delta: conc.delta,
        concentration_rate: conc.rate,
        chebyshev_bound: chebyshev_bound(&q, conc.delta, mc.n_block),
        concentration_sigma: conc.sigma,
        input_rank_one: rank_one,
    };
    ctx.note(format!("ratio N*MSE / ECRB = {:.4}", report.ratio));
    ctx.create_dir()?;
    ctx.write("mc_summary.json", &json(&summary)?)?;
    if mc.per_trial_csv {
        let scalar = s.shape == ScenarioShape::Doa;
        let header: &[&str] = if scalar {
            &["trial", "theta", "theta_hat", "squared_error", "crb"]
        } else {
            &["trial", "squared_error", "crb"]
        };
        let rows = report.records.iter().map(|r| {
            let mut row = vec![r.trial.to_string()];
            if scalar {
                row.push(format_f64(r.theta[0].re));
                row.push(format_f64(r.theta_hat[0].re));
            }
            row.push(format_f64(r.squared_error));
            row.push(format_f64(r.crb));
            row
        });
        ctx.write("trials.csv", &csv(header, rows))?;
    }
    Ok(EXIT_OK)
}

pub fn solve(cfg: &RunConfig, delta: f64, out: &mut dyn Write) -> Result<u8> {
    let s = cfg.build_scenario()?;
    let point = if delta == f64::INFINITY {
        capacity_only(&s)?
    } else if s.shape == ScenarioShape::Ofdm {
        solve_ofdm(&s, delta, &cfg.solver)?
    } else {
        solve_capacity_mse(&s, delta, &cfg.solver)?
    };
    out.write_all(json(&point)?.as_bytes())?;
    Ok(exit_for(&[&point]))
}
