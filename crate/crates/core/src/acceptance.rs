//! The acceptance suite: thirteen numbered checks plus a supplementary
//! consistency check on the PFM efficiency floor. Shared by the
//! `acceptance` test target and the `selftest` command.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::converter::{
    conduction_mode, dcm_conversion_ratio, min_ccm_frequency, ripple_current, ripple_voltage,
    CalibrationAnchors, ConductionMode, ConverterParams, DcmOperatingPoint,
};
use crate::engine::{
    calibrate_for_plane, simulate, sweep, write_results_csv, write_sweep_csv, LatencyBudget,
    SimOptions, SweepPoint, SweepSetup,
};
use crate::oracle::{best_subset, dense_node_voltages, n_active_integer};
use crate::plane::{
    build_plane, effective_resistance, solve_nodal, LoadRegion, PlaneConfig, PlaneModel, Segment,
    VrLayout,
};
use crate::policy::{n_active, pfm_frequency, PolicyConfig, PolicyKind, Selector};
use crate::workload::{gen_synthetic, GeneratorKind, GeneratorSpec, RegionWeight};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>3} {}: {}", self.id, self.name, self.detail)
    }
}

/// Inputs of the suite. [`AcceptanceSetup::reference`] is the default
/// design point; tests swap in other anchors as a negative control.
#[derive(Debug, Clone)]
pub struct AcceptanceSetup {
    pub plane: PlaneConfig,
    pub anchors: CalibrationAnchors,
    pub params: ConverterParams,
    pub policy: PolicyConfig,
    pub latency: LatencyBudget,
    pub opts: SimOptions,
    pub sweep_duration_us: f64,
    pub threads: Option<usize>,
}

impl AcceptanceSetup {
    pub fn reference() -> Self {
        AcceptanceSetup {
            plane: PlaneConfig::reference(),
            anchors: CalibrationAnchors::reference(),
            params: ConverterParams::reference(),
            policy: PolicyConfig::reference(PolicyKind::Lapsa),
            latency: LatencyBudget::default(),
            opts: SimOptions::default(),
            sweep_duration_us: 3.0,
            threads: None,
        }
    }
}

struct Context {
    setup: AcceptanceSetup,
    plane: PlaneModel,
    params: ConverterParams,
}

impl Context {
    fn sweep_setup(&self) -> SweepSetup<'_> {
        SweepSetup {
            plane: &self.plane,
            params: self.params,
            policy: self.setup.policy,
            latency: self.setup.latency,
            opts: self.setup.opts,
            duration_us: self.setup.sweep_duration_us,
        }
    }

    fn point(&self, kind: PolicyKind, frac: f64) -> Result<SweepPoint, String> {
        crate::engine::steady_state(&self.sweep_setup(), kind, frac).map_err(|e| e.to_string())
    }
}

fn result(
    id: &'static str,
    name: &'static str,
    outcome: Result<(bool, String), String>,
) -> CriterionResult {
    match outcome {
        Ok((passed, detail)) => CriterionResult {
            id,
            name,
            passed,
            detail,
        },
        Err(e) => CriterionResult {
            id,
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every criterion; never panics on model errors, which count as
/// failures.
pub fn run_all(setup: &AcceptanceSetup) -> Vec<CriterionResult> {
    let mut out = vec![
        result("1", "activation count exactness", c1(&setup.policy)),
        result("4", "DCM ratio continuity", c4()),
        result("5", "ripple scaling laws", c5(&setup.params)),
        result("10", "nodal solver", c10(&setup.params)),
        result("11", "selector optimality", c11(&setup.params)),
    ];

    let ctx = build_plane(&setup.plane)
        .map_err(|e| e.to_string())
        .and_then(|plane| {
            let cal = calibrate_for_plane(&setup.anchors, &plane, &setup.params)
                .map_err(|e| e.to_string())?;
            let params = setup.params.with_loss(cal.per_vr);
            Ok(Context {
                setup: setup.clone(),
                plane,
                params,
            })
        });
    match ctx {
        Ok(ctx) => {
            out.push(result("2", "calibration anchors", c2(&ctx)));
            out.push(result("3", "PWM light-load ripple", c3(&ctx)));
            out.push(result("6", "PFM behaviour", c6(&ctx)));
            let lapsa = lapsa_sweep(&ctx);
            out.push(result("7", "LAPSA efficiency plateau", c7(&lapsa)));
            out.push(result("8", "loss reduction at 5% load", c8(&ctx)));
            out.push(result("9", "LAPSA ripple preservation", c9(&lapsa)));
            out.push(result("12", "latency pipeline", c12(&ctx)));
            out.push(result("13", "determinism", c13(&ctx)));
            out.push(result(
                "S1",
                "PFM floor matches PWM efficiency at transition",
                s1(&ctx),
            ));
        }
        Err(e) => {
            for (id, name) in [
                ("2", "calibration anchors"),
                ("3", "PWM light-load ripple"),
                ("6", "PFM behaviour"),
                ("7", "LAPSA efficiency plateau"),
                ("8", "loss reduction at 5% load"),
                ("9", "LAPSA ripple preservation"),
                ("12", "latency pipeline"),
                ("13", "determinism"),
                ("S1", "PFM floor matches PWM efficiency at transition"),
            ] {
                out.push(result(id, name, Err(format!("setup failed: {e}"))));
            }
        }
    }
    let order = |id: &str| id.parse::<u32>().unwrap_or(u32::MAX);
    out.sort_by_key(|r| order(r.id));
    out
}

fn c1(base: &PolicyConfig) -> Result<(bool, String), String> {
    let cfg = PolicyConfig {
        m_total: 70,
        p_opt: 500.0,
        ..*base
    };
    let mut bad = Vec::new();
    for k in 0..=40u64 {
        let p = 25 * k;
        let got = n_active(p as f64, &cfg) as u64;
        let want = n_active_integer(p, 500, 70, cfg.n_min as u64);
        if got != want {
            bad.push(format!("{p} W: {got} != {want}"));
        }
    }
    let at50 = n_active(50.0, &cfg);
    Ok((
        bad.is_empty() && at50 == 7,
        format!(
            "41 grid points, {} mismatches, n(50 W) = {at50}{}",
            bad.len(),
            bad.first()
                .map(|b| format!(" (first: {b})"))
                .unwrap_or_default()
        ),
    ))
}

fn c2(ctx: &Context) -> Result<(bool, String), String> {
    let half = ctx.point(PolicyKind::Pwm, 0.5)?;
    let tenth = ctx.point(PolicyKind::Pwm, 0.1)?;
    let e50 = half.steady.efficiency();
    let e10 = tenth.steady.efficiency();
    let cond = half.steady.losses.conduction + half.steady.loss_plane;
    let freq = half.steady.losses.frequency_dependent();
    let balance = (cond - freq).abs() / freq;
    let ok = (e50 - 0.86).abs() <= 0.001 && (e10 - 0.77).abs() <= 0.005 && balance <= 0.01;
    Ok((
        ok,
        format!(
            "eta(50%) = {:.3}%, eta(10%) = {:.3}%, conduction {cond:.3} W vs frequency-dependent {freq:.3} W (rel diff {balance:.2e})",
            100.0 * e50,
            100.0 * e10
        ),
    ))
}

fn c3(ctx: &Context) -> Result<(bool, String), String> {
    let p = ctx.point(PolicyKind::Pwm, 0.1)?;
    let r = p.steady.di_rel;
    Ok((
        (0.50..=0.62).contains(&r),
        format!("delta_i / I at 10% load = {:.2}%", 100.0 * r),
    ))
}

fn c4() -> Result<(bool, String), String> {
    let mut worst: f64 = 0.0;
    for k in 1..=18 {
        let d = 0.05 * k as f64;
        let m = dcm_conversion_ratio(&DcmOperatingPoint {
            duty: d,
            k_param: 1.0 - d,
            t_s: 0.25e-6,
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max((m - d).abs());
    }
    let mut worst_zero: f64 = 0.0;
    for k in 1..=18 {
        let d = 0.05 * k as f64;
        let m = dcm_conversion_ratio(&DcmOperatingPoint {
            duty: d,
            k_param: 1e-9,
            t_s: 0.25e-6,
        })
        .map_err(|e| e.to_string())?;
        worst_zero = worst_zero.max((m - 1.0).abs());
    }
    Ok((
        worst < 1e-9 && worst_zero < 1e-6,
        format!("max |M(D, 1-D) - D| = {worst:.2e}, max |M(D, 1e-9) - 1| = {worst_zero:.2e}"),
    ))
}

fn c5(params: &ConverterParams) -> Result<(bool, String), String> {
    let freqs: Vec<f64> = (0..=30).map(|k| 0.5e6 + k as f64 * 0.25e6).collect();
    let mut di_f = Vec::new();
    let mut dv_f2 = Vec::new();
    for &f in &freqs {
        let di = ripple_current(params, f).map_err(|e| e.to_string())?;
        let dv = ripple_voltage(params, di, f).map_err(|e| e.to_string())?;
        di_f.push(di * f);
        dv_f2.push(dv * f * f);
    }
    let spread = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / lo
    };
    let (a, b) = (spread(&di_f), spread(&dv_f2));
    Ok((
        a <= 1e-12 && b <= 1e-12,
        format!("31 frequencies 0.5-8 MHz: rel spread delta_i*f = {a:.1e}, delta_v*f^2 = {b:.1e}"),
    ))
}

fn c6(ctx: &Context) -> Result<(bool, String), String> {
    let params = &ctx.params;
    let cfg = PolicyConfig {
        kind: PolicyKind::Pfm,
        ..ctx.setup.policy
    };
    let per_vr = |x: f64| x * ctx.setup.opts.p_max / (params.v_out_ref * cfg.m_total as f64);
    let mut problems = Vec::new();
    for k in 1..=1000 {
        let x = k as f64 / 1000.0;
        let i = per_vr(x);
        let f = pfm_frequency(x, params, &cfg, i);
        let floor = min_ccm_frequency(params, i).map_err(|e| e.to_string())?;
        let prop = params.f_nom * x / cfg.pfm_transition_load;
        if x >= cfg.pfm_transition_load && f != params.f_nom {
            problems.push(format!("f({x}) = {f} != f_nom"));
        }
        if x < cfg.pfm_transition_load && prop >= floor && (f - prop).abs() > 1e-6 * prop {
            problems.push(format!("f({x}) = {f} not proportional"));
        }
        let di = ripple_current(params, f).map_err(|e| e.to_string())?;
        if conduction_mode(i, di) == ConductionMode::Dcm {
            problems.push(format!("DCM at {x}"));
        }
    }
    // exact crossing of the proportional law with the CCM floor
    let (mut lo, mut hi) = (1e-6, cfg.pfm_transition_load);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let floor = min_ccm_frequency(params, per_vr(mid)).map_err(|e| e.to_string())?;
        if floor > params.f_nom * mid / cfg.pfm_transition_load {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_c = 0.5 * (lo + hi);
    let i_c = per_vr(x_c);
    let f_c = pfm_frequency(x_c, params, &cfg, i_c);
    let dv_c = ripple_voltage(
        params,
        ripple_current(params, f_c).map_err(|e| e.to_string())?,
        f_c,
    )
    .map_err(|e| e.to_string())?;

    let sweep_dcm: usize = [0.02, 0.05, 0.08, 0.1, 0.15, 0.2, 0.5]
        .iter()
        .map(|&x| ctx.point(PolicyKind::Pfm, x).map(|p| p.steady.dcm_count))
        .sum::<Result<usize, String>>()?;
    if sweep_dcm > 0 {
        problems.push(format!("{sweep_dcm} regulators in DCM during engine sweep"));
    }
    let ok = problems.is_empty() && (0.06..=0.12).contains(&x_c) && (0.08..=0.15).contains(&dv_c);
    Ok((
        ok,
        format!(
            "clamp onset at {:.2}% load, delta_v there = {:.4} V, {} law violations{}",
            100.0 * x_c,
            dv_c,
            problems.len(),
            problems
                .first()
                .map(|p| format!(" (first: {p})"))
                .unwrap_or_default()
        ),
    ))
}

fn lapsa_sweep(ctx: &Context) -> Result<Vec<SweepPoint>, String> {
    let fracs: Vec<f64> = (1..=10).map(|k| 0.05 * k as f64).collect();
    sweep(
        &ctx.sweep_setup(),
        &fracs,
        &[PolicyKind::Lapsa],
        ctx.setup.threads,
    )
    .map_err(|e| e.to_string())
}

fn c7(points: &Result<Vec<SweepPoint>, String>) -> Result<(bool, String), String> {
    let points = points.as_ref().map_err(Clone::clone)?;
    let eff: Vec<f64> = points.iter().map(|p| p.steady.efficiency()).collect();
    let lo = eff.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let low_band: Vec<f64> = points
        .iter()
        .filter(|p| p.load_frac <= 0.30 + 1e-9)
        .map(|p| p.steady.efficiency())
        .collect();
    let mean = low_band.iter().sum::<f64>() / low_band.len() as f64;
    Ok((
        lo >= 0.85 && hi - lo <= 0.01 && mean >= 0.86,
        format!(
            "5-50%: min {:.3}%, max {:.3}%, spread {:.3} pp; mean over 5-30% = {:.3}%",
            100.0 * lo,
            100.0 * hi,
            100.0 * (hi - lo),
            100.0 * mean
        ),
    ))
}

fn c8(ctx: &Context) -> Result<(bool, String), String> {
    let loss = |k| ctx.point(k, 0.05).map(|p| p.steady.total_loss());
    let (pwm, pfm, lapsa) = (
        loss(PolicyKind::Pwm)?,
        loss(PolicyKind::Pfm)?,
        loss(PolicyKind::Lapsa)?,
    );
    let (r_pwm, r_pfm) = (pwm / lapsa, pfm / lapsa);
    Ok((
        r_pwm >= 2.5 && r_pfm >= 1.8,
        format!(
            "losses PWM {pwm:.2} W, PFM {pfm:.2} W, LAPSA {lapsa:.2} W; reduction {r_pwm:.2}x vs PWM, {r_pfm:.2}x vs PFM"
        ),
    ))
}

fn c9(points: &Result<Vec<SweepPoint>, String>) -> Result<(bool, String), String> {
    let points = points.as_ref().map_err(Clone::clone)?;
    let di = points
        .iter()
        .map(|p| p.aggregate.di_rated_max)
        .fold(0.0, f64::max);
    let dv = points
        .iter()
        .map(|p| p.aggregate.dv_max)
        .fold(0.0, f64::max);
    Ok((
        di <= 0.06 + 1e-9 && dv <= 0.02 + 1e-9,
        format!(
            "worst delta_i / i_rated = {:.4}%, worst delta_v = {dv:.6} V",
            100.0 * di
        ),
    ))
}

fn region_weights(plane: &PlaneModel) -> Vec<RegionWeight> {
    plane
        .regions()
        .iter()
        .map(|r| RegionWeight {
            id: r.id.clone(),
            weight: r.weight,
        })
        .collect()
}

fn c12(ctx: &Context) -> Result<(bool, String), String> {
    let t_step_us = 10.0;
    let spec = GeneratorSpec {
        kind: GeneratorKind::Step {
            before_w: 500.0,
            after_w: 50.0,
            at_us: t_step_us,
        },
        duration_us: 20.0,
        sample_us: 1.0,
        regions: region_weights(&ctx.plane),
        p_max: ctx.setup.opts.p_max,
    };
    let trace = gen_synthetic(&spec, 0).map_err(|e| e.to_string())?;
    let cfg = PolicyConfig {
        kind: PolicyKind::Lapsa,
        ..ctx.setup.policy
    };
    let res = simulate(
        &trace,
        &ctx.plane,
        &ctx.params,
        &cfg,
        &ctx.setup.latency,
        &ctx.setup.opts,
    )
    .map_err(|e| e.to_string())?;
    let total = ctx.setup.latency.total();
    let dt = ctx.setup.opts.dt_ctrl;
    let t_step = t_step_us * 1e-6;
    let first = res
        .events
        .iter()
        .min_by(|a, b| a.effective_at.total_cmp(&b.effective_at))
        .ok_or("no flag change after the step")?;
    let delay = first.effective_at - t_step;
    let sched_err = (first.apply_time - (t_step + total)).abs();
    let n_final = res.steps.last().map_or(0, |s| s.n_act);
    let ok =
        delay >= total - 1e-12 && delay <= total + dt + 1e-12 && sched_err < 1e-15 && n_final == 7;
    Ok((
        ok,
        format!(
            "budget {:.3} us; first change scheduled at t_step + {:.3} us, in force at t_step + {:.3} us; n_act 70 -> {n_final}",
            total * 1e6,
            (first.apply_time - t_step) * 1e6,
            delay * 1e6
        ),
    ))
}

fn c13(ctx: &Context) -> Result<(bool, String), String> {
    let spec = GeneratorSpec {
        kind: GeneratorKind::RandomWalk {
            start_w: 200.0,
            sigma_w: 20.0,
            min_w: 20.0,
            max_w: 600.0,
        },
        duration_us: 40.0,
        sample_us: 1.0,
        regions: region_weights(&ctx.plane),
        p_max: ctx.setup.opts.p_max,
    };
    let run = || -> Result<String, String> {
        let trace = gen_synthetic(&spec, 42).map_err(|e| e.to_string())?;
        let res = simulate(
            &trace,
            &ctx.plane,
            &ctx.params,
            &ctx.setup.policy,
            &ctx.setup.latency,
            &ctx.setup.opts,
        )
        .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &res, &["seed: 42".to_string()]).map_err(|e| e.to_string())?;
        Ok(hex::encode(Sha256::digest(&buf)))
    };
    let (h1, h2) = (run()?, run()?);

    let fracs = [0.05, 0.2, 0.5, 0.9];
    let kinds = PolicyKind::ALL;
    let sweep_hash = |threads| -> Result<String, String> {
        let pts = sweep(&ctx.sweep_setup(), &fracs, &kinds, threads).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &pts, &[]).map_err(|e| e.to_string())?;
        Ok(hex::encode(Sha256::digest(&buf)))
    };
    let (s1, s4) = (sweep_hash(Some(1))?, sweep_hash(Some(4))?);
    Ok((
        h1 == h2 && s1 == s4,
        format!(
            "results.csv sha256 {}.. twice {}; sweep serial vs 4 threads {}",
            &h1[..12],
            if h1 == h2 { "identical" } else { "DIFFERENT" },
            if s1 == s4 { "identical" } else { "DIFFERENT" }
        ),
    ))
}

fn s1(ctx: &Context) -> Result<(bool, String), String> {
    let p = ctx.point(PolicyKind::Pwm, ctx.setup.policy.pfm_transition_load)?;
    let e = p.steady.efficiency();
    let floor = ctx.setup.policy.pfm_efficiency_floor;
    Ok((
        (e - floor).abs() <= 0.005,
        format!(
            "eta_PWM({:.0}%) = {:.2}% vs configured floor {:.2}%",
            100.0 * ctx.setup.policy.pfm_transition_load,
            100.0 * e,
            100.0 * floor
        ),
    ))
}

/// Square grid with per-segment resistances drawn from `rng`.
fn random_mesh(
    rng: &mut ChaCha8Rng,
    nx: usize,
    ny: usize,
    n_vr: usize,
    n_regions: usize,
) -> PlaneModel {
    let n = nx * ny;
    let coords = (0..n).map(|v| ((v % nx) as f64, (v / nx) as f64)).collect();
    let mut segments = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            let v = y * nx + x;
            if x + 1 < nx {
                segments.push(Segment {
                    a: v,
                    b: v + 1,
                    r: rng.random_range(0.2e-3..2e-3),
                });
            }
            if y + 1 < ny {
                segments.push(Segment {
                    a: v,
                    b: v + nx,
                    r: rng.random_range(0.2e-3..2e-3),
                });
            }
        }
    }
    let mut nodes: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        nodes.swap(i, rng.random_range(0..=i));
    }
    let vr_nodes = nodes[..n_vr].to_vec();
    let regions = (0..n_regions)
        .map(|k| {
            let count = rng.random_range(1..=3);
            let mut r: Vec<usize> = (0..count).map(|_| rng.random_range(0..n)).collect();
            r.sort_unstable();
            r.dedup();
            LoadRegion {
                id: format!("L{k}"),
                nodes: r,
                weight: 1.0,
            }
        })
        .collect();
    PlaneModel::new(coords, segments, vr_nodes, regions).expect("grid is connected")
}

fn c10(params: &ConverterParams) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_kcl: f64 = 0.0;
    for _ in 0..60 {
        let nx = rng.random_range(2..=9);
        let ny = rng.random_range(2..=9);
        let n_vr = rng.random_range(1..=(nx * ny).min(12));
        let n_reg = rng.random_range(1..=4);
        let m = random_mesh(&mut rng, nx, ny, n_vr, n_reg);
        let mut active: Vec<bool> = (0..n_vr).map(|_| rng.random_bool(0.6)).collect();
        active[0] = true;
        let cur: Vec<f64> = (0..n_reg).map(|_| rng.random_range(0.0..20.0)).collect();
        let sol = solve_nodal(&m, &active, params, &cur).map_err(|e| e.to_string())?;
        worst_kcl = worst_kcl.max(sol.kcl_residual);
    }

    let cfg3 = PlaneConfig {
        nx: 3,
        ny: 3,
        r_seg: 1e-3,
        segment_overrides: Vec::new(),
        removed_segments: Vec::new(),
        vr_layout: VrLayout::Nodes { nodes: vec![0, 8] },
        regions: vec![crate::plane::RegionConfig {
            id: "c".into(),
            rect: None,
            nodes: vec![4, 5],
            weight: 1.0,
        }],
    };
    let m3 = build_plane(&cfg3).map_err(|e| e.to_string())?;
    let fast = solve_nodal(&m3, &[true, true], params, &[12.0]).map_err(|e| e.to_string())?;
    let dense =
        dense_node_voltages(&m3, &[true, true], params, &[12.0]).ok_or("dense oracle singular")?;
    let dense_err = fast
        .node_voltages
        .iter()
        .zip(&dense)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let sym = PlaneConfig {
        vr_layout: VrLayout::Nodes { nodes: vec![0, 2] },
        regions: vec![crate::plane::RegionConfig {
            id: "mid".into(),
            rect: None,
            nodes: vec![1],
            weight: 1.0,
        }],
        nx: 3,
        ny: 1,
        ..cfg3.clone()
    };
    let ms = build_plane(&sym).map_err(|e| e.to_string())?;
    let s = solve_nodal(&ms, &[true, true], params, &[10.0]).map_err(|e| e.to_string())?;
    let split_err = (s.vr_currents[0] - s.vr_currents[1]).abs();

    Ok((
        worst_kcl < 1e-9 && dense_err <= 1e-10 && split_err <= 1e-12,
        format!(
            "60 random meshes, worst KCL residual {worst_kcl:.1e} A; 3x3 vs dense oracle {dense_err:.1e} V; symmetric split diff {split_err:.1e} A"
        ),
    ))
}

fn c11(params: &ConverterParams) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 1.0;
    let instances = 24;
    for _ in 0..instances {
        let nx = rng.random_range(3..=6);
        let ny = rng.random_range(3..=6);
        let n_vr = rng.random_range(4..=(nx * ny).min(12));
        let n_reg = rng.random_range(1..=3);
        let m = random_mesh(&mut rng, nx, ny, n_vr, n_reg);
        let cur: Vec<f64> = (0..n_reg).map(|_| rng.random_range(0.5..15.0)).collect();
        let n = rng.random_range(1..n_vr);
        let sel = Selector::new(&m, params).map_err(|e| e.to_string())?;
        let flags = sel
            .select(n, &cur, &vec![false; n_vr], 0.05)
            .map_err(|e| e.to_string())?;
        let got = solve_nodal(&m, &flags, params, &cur)
            .map_err(|e| e.to_string())?
            .plane_loss;
        let (_, opt) = best_subset(&m, params, n, &cur).map_err(|e| e.to_string())?;
        if opt > 0.0 {
            worst = worst.max(got / opt);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let m = random_mesh(&mut rng, 6, 6, 8, 1);
    let hot = m.regions()[0].nodes[0];
    let single = PlaneModel::new(
        m.coords().to_vec(),
        m.segments().to_vec(),
        m.vr_nodes().to_vec(),
        vec![LoadRegion {
            id: "hot".into(),
            nodes: vec![hot],
            weight: 1.0,
        }],
    )
    .map_err(|e| e.to_string())?;
    let sel = Selector::new(&single, params).map_err(|e| e.to_string())?;
    let flags = sel
        .select(1, &[10.0], &[false; 8], 0.05)
        .map_err(|e| e.to_string())?;
    let chosen = flags.iter().position(|&f| f).ok_or("nothing selected")?;
    let mut nearest = 0;
    let mut best_r = f64::INFINITY;
    for (k, &node) in single.vr_nodes().iter().enumerate() {
        let r = effective_resistance(&single, node, hot).map_err(|e| e.to_string())?;
        if r < best_r {
            best_r = r;
            nearest = k;
        }
    }
    Ok((
        worst <= 1.10 && chosen == nearest,
        format!(
            "{instances} instances, worst selected/optimal plane loss = {worst:.4}; hotspot n = 1 picks VR {chosen} (nearest {nearest})"
        ),
    ))
}
