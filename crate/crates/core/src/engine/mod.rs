//! Quasi-static co-simulation loop.
//!
//! Every control interval the engine samples the load, lets the policy
//! decide, applies flag changes whose latency has elapsed, solves the plane
//! for current sharing and evaluates per-regulator losses and ripple.

mod metrics;
mod report;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::{
    calibrate_losses, vr_loss, Calibration, CalibrationAnchors, ConductionMode, ConverterError,
    ConverterParams, ConverterState, LossBreakdown, LossCoeffs,
};
use crate::plane::{NodalSolver, PlaneError, PlaneModel};
use crate::policy::{
    pfm_frequency, ActivationState, LapsaController, PolicyConfig, PolicyError, PolicyKind,
};
use crate::workload::{sample_at, LoadTrace, WorkloadError};

pub use metrics::{accumulate_metrics, Aggregate, MetricsAccumulator};
pub use report::{
    write_results_csv, write_summary_csv, write_sweep_csv, RESULTS_COLUMNS, SUMMARY_COLUMNS,
    SWEEP_COLUMNS,
};
pub use sweep::{steady_state, sweep, SweepPoint, SweepSetup};

/// Tolerance when comparing scheduled apply times with step times (s).
pub const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("plane solve failed at t = {t:e} s: {source}")]
    Solver { t: f64, source: PlaneError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Converter(#[from] ConverterError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Plane(#[from] PlaneError),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Delay from a load sample to the gate clamp acting on it (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBudget {
    pub sensing: f64,
    pub compute: f64,
    pub comm: f64,
    pub gate: f64,
}

impl Default for LatencyBudget {
    fn default() -> Self {
        LatencyBudget {
            sensing: 1e-6,
            compute: 1e-7,
            comm: 5e-8,
            gate: 1e-8,
        }
    }
}

impl LatencyBudget {
    pub fn total(&self) -> f64 {
        self.sensing + self.compute + self.comm + self.gate
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sensing", self.sensing),
            ("compute", self.compute),
            ("comm", self.comm),
            ("gate", self.gate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(EngineError::Config(format!(
                    "latency.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How load current is divided among active regulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    /// Full nodal solve of the plane.
    #[default]
    Solved,
    /// Equal split with no plane loss; for electrically symmetric setups.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt_ctrl: f64,
    pub sharing: Sharing,
    /// Full system load used to express load fractions (W).
    pub p_max: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt_ctrl: 1e-6,
            sharing: Sharing::Solved,
            p_max: 1000.0,
        }
    }
}

/// One control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub p_load: f64,
    pub p_in: f64,
    pub losses: LossBreakdown,
    pub loss_plane: f64,
    pub n_act: usize,
    /// Worst inductor ripple over the mean per-regulator current.
    pub di_rel: f64,
    /// Worst inductor ripple over the rated current.
    pub di_rated: f64,
    pub dv: f64,
    pub ir_drop: f64,
    pub dcm_count: usize,
    pub f_min: f64,
}

impl StepRecord {
    pub fn total_loss(&self) -> f64 {
        self.losses.total() + self.loss_plane
    }

    pub fn efficiency(&self) -> f64 {
        if self.p_in > 0.0 {
            self.p_load / self.p_in
        } else {
            0.0
        }
    }
}

/// A regulator flag change as it took effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlagEvent {
    pub vr: usize,
    pub enable: bool,
    pub apply_time: f64,
    /// Time of the control step at which the change was first in force.
    pub effective_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: PolicyKind,
    pub steps: Vec<StepRecord>,
    pub events: Vec<FlagEvent>,
    pub aggregate: Aggregate,
    /// Regulator flags in force at the last step.
    pub final_enabled: Vec<bool>,
}

fn check_regions(trace: &LoadTrace, plane: &PlaneModel) -> Result<Vec<usize>> {
    let mut map = Vec::with_capacity(plane.regions().len());
    for r in plane.regions() {
        let k = trace
            .regions()
            .iter()
            .position(|id| *id == r.id)
            .ok_or_else(|| {
                EngineError::Config(format!("trace has no column for plane region '{}'", r.id))
            })?;
        map.push(k);
    }
    if let Some(extra) = trace
        .regions()
        .iter()
        .find(|id| !plane.regions().iter().any(|r| &r.id == *id))
    {
        return Err(EngineError::Config(format!(
            "trace region '{extra}' is not defined on the plane"
        )));
    }
    Ok(map)
}

pub fn simulate(
    trace: &LoadTrace,
    plane: &PlaneModel,
    params: &ConverterParams,
    cfg: &PolicyConfig,
    latency: &LatencyBudget,
    opts: &SimOptions,
) -> Result<SimResult> {
    params.validate()?;
    cfg.validate()?;
    latency.validate()?;
    if !(opts.dt_ctrl > 0.0) {
        return Err(EngineError::Config(format!(
            "dt_ctrl must be positive, got {}",
            opts.dt_ctrl
        )));
    }
    if !(opts.p_max > 0.0) {
        return Err(EngineError::Config(format!(
            "p_max must be positive, got {}",
            opts.p_max
        )));
    }
    let m = plane.vr_count();
    if cfg.m_total != m {
        return Err(EngineError::Config(format!(
            "policy expects {} regulators, plane has {m}",
            cfg.m_total
        )));
    }
    let region_map = check_regions(trace, plane)?;
    let v_out = params.v_out_ref;
    let currents_at = |t: f64| -> Result<(f64, Vec<f64>)> {
        let s = sample_at(trace, t)?;
        let cur = region_map.iter().map(|&k| s.power[k] / v_out).collect();
        Ok((s.total(), cur))
    };

    let mut solver = NodalSolver::new(plane, params);
    let mut lapsa = match cfg.kind {
        PolicyKind::Lapsa => Some(LapsaController::new(plane, params, cfg)?),
        _ => None,
    };
    let mut state = ActivationState::all_on(m);
    let mut steps = Vec::new();
    let mut events = Vec::new();
    let mut acc = MetricsAccumulator::new();

    let n_steps = (trace.duration() / opts.dt_ctrl + 1e-9).floor() as usize + 1;
    for k in 0..n_steps {
        let t = k as f64 * opts.dt_ctrl;
        let (p_load, region_currents) = currents_at(t)?;

        if let Some(ctl) = lapsa.as_mut() {
            if k == 0 {
                state = ctl.boot(p_load, &region_currents)?;
            } else {
                for ch in state.apply_due(t, TIME_EPS) {
                    events.push(FlagEvent {
                        vr: ch.vr,
                        enable: ch.enable,
                        apply_time: ch.apply_time,
                        effective_at: t,
                    });
                }
            }
            ctl.step(p_load, &region_currents, &mut state, t, latency)?;
        }

        let rec = evaluate_step(
            t,
            p_load,
            &region_currents,
            &state.enabled,
            params,
            cfg,
            opts,
            &mut solver,
        )?;
        acc.push(&rec);
        steps.push(rec);
    }

    Ok(SimResult {
        policy: cfg.kind,
        steps,
        events,
        aggregate: acc.finish(),
        final_enabled: state.enabled,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_step(
    t: f64,
    p_load: f64,
    region_currents: &[f64],
    enabled: &[bool],
    params: &ConverterParams,
    cfg: &PolicyConfig,
    opts: &SimOptions,
    solver: &mut NodalSolver<'_>,
) -> Result<StepRecord> {
    let n_act = enabled.iter().filter(|&&e| e).count();
    let i_total: f64 = region_currents.iter().sum();
    if n_act == 0 && i_total > 0.0 {
        return Err(EngineError::Config(format!(
            "no active regulator at t = {t:e} s with {p_load} W of load"
        )));
    }

    let (vr_currents, loss_plane, ir_drop) = match (opts.sharing, n_act) {
        (_, 0) => (vec![0.0; enabled.len()], 0.0, 0.0),
        (Sharing::Equal, _) => {
            let share = i_total / n_act as f64;
            let i = enabled
                .iter()
                .map(|&e| if e { share } else { 0.0 })
                .collect();
            (i, 0.0, 0.0)
        }
        (Sharing::Solved, _) => {
            let sol = solver
                .solve(enabled, region_currents)
                .map_err(|source| EngineError::Solver { t, source })?;
            (sol.vr_currents, sol.plane_loss, sol.worst_ir_drop)
        }
    };

    let load_fraction = p_load / opts.p_max;
    let mut losses = LossBreakdown::default();
    let (mut di_max, mut dv_max, mut dcm_count) = (0.0f64, 0.0f64, 0usize);
    let mut f_min = f64::INFINITY;
    for (&on, &i) in enabled.iter().zip(&vr_currents) {
        let st = if on {
            let f = match cfg.kind {
                PolicyKind::Pfm => pfm_frequency(load_fraction, params, cfg, i),
                PolicyKind::Pwm | PolicyKind::Lapsa => params.f_nom,
            };
            ConverterState::active(params, i, f)?
        } else {
            ConverterState::off()
        };
        if st.active {
            di_max = di_max.max(st.delta_i);
            dv_max = dv_max.max(st.delta_v);
            f_min = f_min.min(st.f_sw);
            if st.mode == ConductionMode::Dcm {
                dcm_count += 1;
            }
        }
        losses += vr_loss(params, &st);
    }
    let mean_i = if n_act > 0 {
        i_total / n_act as f64
    } else {
        0.0
    };
    let di_rel = if mean_i > 0.0 { di_max / mean_i } else { 0.0 };

    Ok(StepRecord {
        t,
        p_load,
        p_in: p_load + losses.total() + loss_plane,
        losses,
        loss_plane,
        n_act,
        di_rel,
        di_rated: di_max / params.i_rated,
        dv: dv_max,
        ir_drop,
        dcm_count,
        f_min: if f_min.is_finite() { f_min } else { 0.0 },
    })
}

/// Per-regulator coefficients calibrated against the plane.
///
/// The anchor fit gives a system polynomial `c I^2 + a I + b` at full
/// activation. Part of the quadratic term is the lateral plane loss, so the
/// regulator conduction coefficient is reduced by the plane's share and
/// scaled by how unevenly the solved currents split:
/// `c_vr = (c - R_plane) / S` with `S = sum(i_k^2) / I^2`.
pub fn calibrate_for_plane(
    anchors: &CalibrationAnchors,
    plane: &PlaneModel,
    params: &ConverterParams,
) -> Result<Calibration> {
    let base = calibrate_losses(anchors)?;
    let m = plane.vr_count();
    if m != anchors.m_total {
        return Err(EngineError::Config(format!(
            "anchors assume {} regulators, plane has {m}",
            anchors.m_total
        )));
    }
    let i_ref = 0.5 * anchors.p_max / anchors.v_out;
    let currents: Vec<f64> = plane.demand_shares().iter().map(|s| s * i_ref).collect();
    let sol = NodalSolver::new(plane, params).solve(&vec![true; m], &currents)?;
    let spread = sol.vr_currents.iter().map(|i| i * i).sum::<f64>() / (i_ref * i_ref);
    let r_plane = sol.plane_loss / (i_ref * i_ref);
    let c_left = base.system.c - r_plane;
    if !(c_left > 0.0) {
        return Err(EngineError::Converter(ConverterError::Calibration(
            format!(
            "plane resistance {r_plane:.4e} ohm exceeds the fitted conduction term {:.4e} ohm; \
             lower the segment resistance",
            base.system.c
        ),
        )));
    }
    Ok(Calibration {
        system: base.system,
        per_vr: LossCoeffs {
            c_cond: c_left / spread,
            a_sw: base.system.a,
            b_fix: base.system.b / m as f64,
        },
    })
}
