use crate::converter::LossBreakdown;

use super::StepRecord;

/// Energies and worst-case figures over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub energy_in: f64,
    pub energy_out: f64,
    /// Energy lost per category (J).
    pub loss_energy: LossBreakdown,
    pub plane_loss_energy: f64,
    pub mean_efficiency: f64,
    pub n_act_min: usize,
    pub n_act_max: usize,
    pub di_rel_max: f64,
    pub di_rated_max: f64,
    pub dv_max: f64,
    pub ir_drop_max: f64,
    pub dcm_steps: usize,
    pub steps: usize,
}

impl Aggregate {
    pub fn total_loss_energy(&self) -> f64 {
        self.loss_energy.total() + self.plane_loss_energy
    }
}

/// Streaming trapezoidal integrator over step records.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    agg: Aggregate,
    last: Option<StepRecord>,
    /// Efficiency of a single-sample stream, which spans no time.
    instant_eff: f64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        MetricsAccumulator {
            agg: Aggregate {
                n_act_min: usize::MAX,
                ..Aggregate::default()
            },
            ..Default::default()
        }
    }

    pub fn push(&mut self, rec: &StepRecord) {
        let a = &mut self.agg;
        if let Some(prev) = &self.last {
            let dt = rec.t - prev.t;
            let h = 0.5 * dt;
            a.energy_in += h * (prev.p_in + rec.p_in);
            a.energy_out += h * (prev.p_load + rec.p_load);
            a.loss_energy.conduction += h * (prev.losses.conduction + rec.losses.conduction);
            a.loss_energy.switching += h * (prev.losses.switching + rec.losses.switching);
            a.loss_energy.gate_drive += h * (prev.losses.gate_drive + rec.losses.gate_drive);
            a.loss_energy.leakage += h * (prev.losses.leakage + rec.losses.leakage);
            a.plane_loss_energy += h * (prev.loss_plane + rec.loss_plane);
        } else {
            self.instant_eff = rec.efficiency();
        }
        a.n_act_min = a.n_act_min.min(rec.n_act);
        a.n_act_max = a.n_act_max.max(rec.n_act);
        a.di_rel_max = a.di_rel_max.max(rec.di_rel);
        a.di_rated_max = a.di_rated_max.max(rec.di_rated);
        a.dv_max = a.dv_max.max(rec.dv);
        a.ir_drop_max = a.ir_drop_max.max(rec.ir_drop);
        if rec.dcm_count > 0 {
            a.dcm_steps += 1;
        }
        a.steps += 1;
        self.last = Some(*rec);
    }

    pub fn finish(mut self) -> Aggregate {
        let a = &mut self.agg;
        if a.steps == 0 {
            a.n_act_min = 0;
        }
        a.mean_efficiency = if a.energy_in > 0.0 {
            a.energy_out / a.energy_in
        } else {
            self.instant_eff
        };
        self.agg
    }
}

pub fn accumulate_metrics<'a, I>(records: I) -> Aggregate
where
    I: IntoIterator<Item = &'a StepRecord>,
{
    let mut acc = MetricsAccumulator::new();
    for r in records {
        acc.push(r);
    }
    acc.finish()
}
