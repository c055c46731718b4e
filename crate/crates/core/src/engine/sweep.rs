use rayon::prelude::*;

use crate::converter::ConverterParams;
use crate::plane::PlaneModel;
use crate::policy::{PolicyConfig, PolicyKind};
use crate::workload::{gen_synthetic, GeneratorKind, GeneratorSpec, RegionWeight};

use super::{simulate, Aggregate, EngineError, LatencyBudget, Result, SimOptions, StepRecord};

/// Fixed inputs shared by every point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub plane: &'a PlaneModel,
    pub params: ConverterParams,
    /// Base policy settings; `kind` is replaced per run.
    pub policy: PolicyConfig,
    pub latency: LatencyBudget,
    pub opts: SimOptions,
    /// Length of each constant-load run (us).
    pub duration_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub policy: PolicyKind,
    pub load_frac: f64,
    /// Final control step, taken as the steady state.
    pub steady: StepRecord,
    pub aggregate: Aggregate,
}

/// Runs a constant load of `load_frac * p_max` split by region weight.
pub fn steady_state(
    setup: &SweepSetup<'_>,
    kind: PolicyKind,
    load_frac: f64,
) -> Result<SweepPoint> {
    if !(load_frac > 0.0 && load_frac <= 1.0) {
        return Err(EngineError::Config(format!(
            "sweep load fraction {load_frac} outside (0, 1]"
        )));
    }
    let spec = GeneratorSpec {
        kind: GeneratorKind::Constant {
            power_w: load_frac * setup.opts.p_max,
        },
        duration_us: setup.duration_us,
        sample_us: setup.duration_us.max(1e-3),
        regions: setup
            .plane
            .regions()
            .iter()
            .map(|r| RegionWeight {
                id: r.id.clone(),
                weight: r.weight,
            })
            .collect(),
        p_max: setup.opts.p_max,
    };
    let trace = gen_synthetic(&spec, 0)?;
    let cfg = PolicyConfig {
        kind,
        ..setup.policy
    };
    let res = simulate(
        &trace,
        setup.plane,
        &setup.params,
        &cfg,
        &setup.latency,
        &setup.opts,
    )?;
    Ok(SweepPoint {
        policy: kind,
        load_frac,
        steady: *res.steps.last().expect("at least one step"),
        aggregate: res.aggregate,
    })
}

/// One steady-state run per `(kind, fraction)`, ordered by kind then
/// fraction. `threads` caps parallelism; `Some(1)` runs serially.
pub fn sweep(
    setup: &SweepSetup<'_>,
    fractions: &[f64],
    kinds: &[PolicyKind],
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    let jobs: Vec<(PolicyKind, f64)> = kinds
        .iter()
        .flat_map(|&k| fractions.iter().map(move |&f| (k, f)))
        .collect();
    let run = |&(k, f): &(PolicyKind, f64)| steady_state(setup, k, f);
    match threads {
        Some(1) => jobs.iter().map(run).collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| EngineError::Config(format!("thread pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(run).collect())
        }
        None => jobs.par_iter().map(run).collect(),
    }
}
