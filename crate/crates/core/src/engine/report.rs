use std::io::{self, Write};

use super::{SimResult, SweepPoint};
use crate::policy::PolicyKind;

pub const RESULTS_COLUMNS: &str =
    "t_us,p_load_w,p_in_w,loss_cond_w,loss_sw_w,loss_gate_w,loss_leak_w,loss_plane_w,n_act,di_rel,dv_v,ir_drop_v";
pub const SWEEP_COLUMNS: &str =
    "policy,load_frac,efficiency,loss_cond_w,loss_freq_w,loss_leak_w,loss_plane_w,n_act";
pub const SUMMARY_COLUMNS: &str = "policy,load_frac,mean_efficiency,energy_in_j,energy_out_j,total_loss_j,n_act_max,di_rel_max,dv_max_v,ir_drop_max_v";

fn header<W: Write>(w: &mut W, lines: &[String]) -> io::Result<()> {
    for l in lines {
        writeln!(w, "# {l}")?;
    }
    Ok(())
}

pub fn write_results_csv<W: Write>(
    w: &mut W,
    res: &SimResult,
    comments: &[String],
) -> io::Result<()> {
    header(w, comments)?;
    writeln!(w, "{RESULTS_COLUMNS}")?;
    for s in &res.steps {
        writeln!(
            w,
            "{:.6},{},{},{},{},{},{},{},{},{},{},{}",
            s.t * 1e6,
            s.p_load,
            s.p_in,
            s.losses.conduction,
            s.losses.switching,
            s.losses.gate_drive,
            s.losses.leakage,
            s.loss_plane,
            s.n_act,
            s.di_rel,
            s.dv,
            s.ir_drop
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(
    w: &mut W,
    points: &[SweepPoint],
    comments: &[String],
) -> io::Result<()> {
    header(w, comments)?;
    writeln!(w, "{SWEEP_COLUMNS}")?;
    for p in points {
        let s = &p.steady;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.policy,
            p.load_frac,
            s.efficiency(),
            s.losses.conduction,
            s.losses.frequency_dependent(),
            s.losses.leakage,
            s.loss_plane,
            s.n_act
        )?;
    }
    Ok(())
}

/// One summary row: a run's aggregate tagged with its policy and mean load
/// fraction.
pub fn write_summary_csv<W: Write>(
    w: &mut W,
    rows: &[(PolicyKind, f64, super::Aggregate)],
    comments: &[String],
) -> io::Result<()> {
    header(w, comments)?;
    writeln!(w, "{SUMMARY_COLUMNS}")?;
    for (kind, frac, a) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            kind,
            frac,
            a.mean_efficiency,
            a.energy_in,
            a.energy_out,
            a.total_loss_energy(),
            a.n_act_max,
            a.di_rel_max,
            a.dv_max,
            a.ir_drop_max
        )?;
    }
    Ok(())
}
