use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dvpdsim_core::acceptance::{run_all, AcceptanceSetup};
use dvpdsim_core::engine::{
    self, simulate, write_results_csv, write_summary_csv, write_sweep_csv, SimResult, SweepPoint,
    SweepSetup,
};
use dvpdsim_core::plane::{solve_nodal, write_node_voltages};
use dvpdsim_core::policy::PolicyKind;
use dvpdsim_core::workload::{sample_at, LoadTrace};

use crate::config::{self, Loaded, Resolved};
use crate::svg::{line_chart, stacked_area, Chart, Series};
use crate::{CliError, Overrides};

pub const THREADS_ENV: &str = "DVPDSIM_THREADS";

fn load(path: Option<&Path>) -> Result<Loaded, CliError> {
    path.map_or_else(|| Ok(Loaded::builtin()), config::load)
}

fn header(loaded: &Loaded, seed: u64, extra: &[String]) -> Vec<String> {
    let mut h = vec![
        format!("dvpdsim {}", env!("CARGO_PKG_VERSION")),
        format!("config_sha256: {}", loaded.hash),
        format!("seed: {seed}"),
        "note: plane geometry, sheet resistance and regulator placement are assumed modelling defaults".into(),
    ];
    h.extend_from_slice(extra);
    h
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

fn output_dir(loaded: &Loaded, ov: &Overrides) -> Result<PathBuf, CliError> {
    let dir = ov
        .out
        .clone()
        .or_else(|| {
            loaded
                .config
                .output_dir
                .as_ref()
                .map(|d| loaded.base_dir.join(d))
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{THREADS_ENV}: {e}"))),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{s}'"
            ))),
        },
    }
}

/// Region currents ordered like the plane's regions.
fn plane_currents(r: &Resolved, trace: &LoadTrace, t: f64) -> Result<Vec<f64>, CliError> {
    let s = sample_at(trace, t).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(r.plane
        .regions()
        .iter()
        .map(|reg| {
            trace
                .regions()
                .iter()
                .position(|id| *id == reg.id)
                .map_or(0.0, |k| s.power[k] / r.params.v_out_ref)
        })
        .collect())
}

pub fn run(config: Option<&Path>, ov: &Overrides) -> Result<(), CliError> {
    let Some(path) = config else {
        return Err(CliError::Config(
            "run needs --config with a [trace] or [generator] section".into(),
        ));
    };
    let mut loaded = load(Some(path))?;
    if let Some(seed) = ov.seed {
        loaded.config.seed = seed;
    }
    if let Some(kind) = ov.policy {
        loaded.config.policy.kind = Some(kind);
    }
    let cfg = &loaded.config;
    let r = cfg.resolve()?;
    let trace = cfg.load_trace(&loaded.base_dir, &r.plane, r.opts.p_max)?;
    let dir = output_dir(&loaded, ov)?;
    let res = simulate(&trace, &r.plane, &r.params, &r.policy, &r.latency, &r.opts)?;
    let hdr = header(&loaded, cfg.seed, &[format!("policy: {}", r.policy.kind)]);

    write_file(&dir.join("results.csv"), |w| {
        write_results_csv(w, &res, &hdr)
    })?;
    let mean_frac = res.steps.iter().map(|s| s.p_load).sum::<f64>()
        / res.steps.len().max(1) as f64
        / r.opts.p_max;
    write_file(&dir.join("summary.csv"), |w| {
        write_summary_csv(w, &[(res.policy, mean_frac, res.aggregate)], &hdr)
    })?;
    write_file(&dir.join("events.csv"), |w| write_events(w, &res, &hdr))?;

    if let Some(last) = res.steps.last() {
        let cur = plane_currents(&r, &trace, last.t)?;
        if res.final_enabled.iter().any(|&e| e) {
            let sol = solve_nodal(&r.plane, &res.final_enabled, &r.params, &cur).map_err(|e| {
                CliError::from(engine::EngineError::Solver {
                    t: last.t,
                    source: e,
                })
            })?;
            write_file(&dir.join("node_voltages.csv"), |w| {
                for line in &hdr {
                    writeln!(w, "# {line}")?;
                }
                writeln!(w, "# t_us: {:.6}", last.t * 1e6)?;
                write_node_voltages(w, &r.plane, &sol)
            })?;
        }
    }

    if ov.svg {
        write_file(&dir.join("losses.svg"), |w| {
            w.write_all(run_chart(&res).as_bytes())
        })?;
    }

    let a = &res.aggregate;
    println!(
        "{}: mean efficiency {:.3}%, total loss {:.6e} J, max n_act {} ({} steps, out {})",
        res.policy,
        100.0 * a.mean_efficiency,
        a.total_loss_energy(),
        a.n_act_max,
        a.steps,
        dir.display()
    );
    Ok(())
}

fn write_events<W: Write>(w: &mut W, res: &SimResult, hdr: &[String]) -> std::io::Result<()> {
    for line in hdr {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "vr,enable,apply_time_us,effective_at_us")?;
    for e in &res.events {
        writeln!(
            w,
            "{},{},{:.6},{:.6}",
            e.vr,
            u8::from(e.enable),
            e.apply_time * 1e6,
            e.effective_at * 1e6
        )?;
    }
    Ok(())
}

fn run_chart(res: &SimResult) -> String {
    let xs: Vec<f64> = res.steps.iter().map(|s| s.t * 1e6).collect();
    let col = |f: fn(&engine::StepRecord) -> f64| res.steps.iter().map(f).collect::<Vec<_>>();
    let series = [
        Series {
            name: "conduction",
            values: col(|s| s.losses.conduction),
        },
        Series {
            name: "switching",
            values: col(|s| s.losses.switching),
        },
        Series {
            name: "gate drive",
            values: col(|s| s.losses.gate_drive),
        },
        Series {
            name: "leakage",
            values: col(|s| s.losses.leakage),
        },
        Series {
            name: "plane",
            values: col(|s| s.loss_plane),
        },
    ];
    let title = format!("Loss breakdown, {}", res.policy);
    stacked_area(
        &Chart {
            title: &title,
            x_label: "time (us)",
            y_label: "loss (W)",
        },
        &xs,
        &series,
    )
}

pub fn sweep(config: Option<&Path>, ov: &Overrides) -> Result<(), CliError> {
    let mut loaded = load(config)?;
    if let Some(seed) = ov.seed {
        loaded.config.seed = seed;
    }
    let cfg = &loaded.config;
    let r = cfg.resolve()?;
    let fractions = cfg.sweep_fractions()?;
    let kinds = match ov.policy {
        Some(k) => vec![k],
        None => cfg.sweep_policies(),
    };
    if kinds.is_empty() {
        return Err(CliError::Config("sweep.policies is empty".into()));
    }
    let threads = threads_from_env()?;
    let setup = SweepSetup {
        plane: &r.plane,
        params: r.params,
        policy: r.policy,
        latency: r.latency,
        opts: r.opts,
        duration_us: cfg.sweep_duration_us()?,
    };
    let dir = output_dir(&loaded, ov)?;
    let points = engine::sweep(&setup, &fractions, &kinds, threads)?;
    let hdr = header(&loaded, cfg.seed, &[]);

    write_file(&dir.join("sweep.csv"), |w| {
        write_sweep_csv(w, &points, &hdr)
    })?;
    let rows: Vec<_> = points
        .iter()
        .map(|p| (p.policy, p.load_frac, p.aggregate))
        .collect();
    write_file(&dir.join("summary.csv"), |w| {
        write_summary_csv(w, &rows, &hdr)
    })?;

    if ov.svg {
        write_file(&dir.join("efficiency.svg"), |w| {
            w.write_all(efficiency_chart(&points, &kinds, &fractions).as_bytes())
        })?;
        for &k in &kinds {
            let name = format!("losses_{k}.svg");
            write_file(&dir.join(name), |w| {
                w.write_all(sweep_loss_chart(&points, k).as_bytes())
            })?;
        }
    }

    for &k in &kinds {
        let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.policy == k).collect();
        let eff = pts.iter().map(|p| p.steady.efficiency());
        let (lo, hi) = eff.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| {
            (a.min(e), b.max(e))
        });
        println!(
            "{k}: {} points, efficiency {:.3}% to {:.3}%",
            pts.len(),
            100.0 * lo,
            100.0 * hi
        );
    }
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}

fn efficiency_chart(points: &[SweepPoint], kinds: &[PolicyKind], fractions: &[f64]) -> String {
    let xs: Vec<f64> = fractions.iter().map(|f| 100.0 * f).collect();
    let names: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
    let series: Vec<Series> = kinds
        .iter()
        .zip(&names)
        .map(|(&k, name)| Series {
            name,
            values: points
                .iter()
                .filter(|p| p.policy == k)
                .map(|p| 100.0 * p.steady.efficiency())
                .collect(),
        })
        .collect();
    line_chart(
        &Chart {
            title: "Efficiency against load",
            x_label: "load (%)",
            y_label: "efficiency (%)",
        },
        &xs,
        &series,
    )
}

fn sweep_loss_chart(points: &[SweepPoint], kind: PolicyKind) -> String {
    let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.policy == kind).collect();
    let xs: Vec<f64> = pts.iter().map(|p| 100.0 * p.load_frac).collect();
    let col = |f: fn(&SweepPoint) -> f64| pts.iter().map(|p| f(p)).collect::<Vec<_>>();
    let series = [
        Series {
            name: "conduction",
            values: col(|p| p.steady.losses.conduction),
        },
        Series {
            name: "frequency",
            values: col(|p| p.steady.losses.frequency_dependent()),
        },
        Series {
            name: "leakage",
            values: col(|p| p.steady.losses.leakage),
        },
        Series {
            name: "plane",
            values: col(|p| p.steady.loss_plane),
        },
    ];
    let title = format!("Loss breakdown against load, {kind}");
    stacked_area(
        &Chart {
            title: &title,
            x_label: "load (%)",
            y_label: "loss (W)",
        },
        &xs,
        &series,
    )
}

/// One `summary.csv` row keyed by policy and load fraction.
struct SummaryRow {
    key: (String, String),
    values: Vec<f64>,
}

fn read_summary(path: &Path) -> Result<(Vec<String>, Vec<SummaryRow>), CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "policy" || &headers[1] != "load_frac" {
        return Err(bad(
            "expected a summary.csv with policy,load_frac,... columns".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("'{v}': {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(SummaryRow {
            key: (rec[0].to_owned(), rec[1].to_owned()),
            values,
        });
    }
    Ok((names, rows))
}

pub fn compare(baseline: &Path, candidate: &Path, ov: &Overrides) -> Result<(), CliError> {
    let (names, base) = read_summary(baseline)?;
    let (names_c, cand) = read_summary(candidate)?;
    if names != names_c {
        return Err(CliError::Config(
            "summary files have different columns".into(),
        ));
    }
    let mut table = Vec::new();
    for b in &base {
        match cand.iter().find(|c| c.key == b.key) {
            Some(c) => table.push((b, c)),
            None => eprintln!(
                "dvpdsim: {} at {} only in {}",
                b.key.0,
                b.key.1,
                baseline.display()
            ),
        }
    }
    for c in cand.iter().filter(|c| !base.iter().any(|b| b.key == c.key)) {
        eprintln!(
            "dvpdsim: {} at {} only in {}",
            c.key.0,
            c.key.1,
            candidate.display()
        );
    }
    if table.is_empty() {
        return Err(CliError::Config(
            "the two summaries share no (policy, load_frac) rows".into(),
        ));
    }

    let shown = ["mean_efficiency", "total_loss_j", "n_act_max"];
    let idx: Vec<usize> = shown
        .iter()
        .filter_map(|s| names.iter().position(|n| n == s))
        .collect();
    print!("{:<8}{:>10}", "policy", "load_frac");
    for &i in &idx {
        print!("{:>18}", format!("d_{}", names[i]));
    }
    println!();
    for (b, c) in &table {
        print!("{:<8}{:>10}", b.key.0, b.key.1);
        for &i in &idx {
            print!("{:>18.6e}", c.values[i] - b.values[i]);
        }
        println!();
    }

    if let Some(dir) = &ov.out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("compare.csv");
        write_file(&path, |w| {
            writeln!(w, "# dvpdsim {}", env!("CARGO_PKG_VERSION"))?;
            writeln!(w, "# baseline: {}", baseline.display())?;
            writeln!(w, "# candidate: {}", candidate.display())?;
            writeln!(w, "policy,load_frac,column,baseline,candidate,delta")?;
            for (b, c) in &table {
                for (k, name) in names.iter().enumerate() {
                    let (x, y) = (b.values[k], c.values[k]);
                    writeln!(w, "{},{},{name},{x},{y},{}", b.key.0, b.key.1, y - x)?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn selftest(config: Option<&Path>) -> Result<(), CliError> {
    let mut setup = AcceptanceSetup::reference();
    if config.is_some() {
        let loaded = load(config)?;
        let cfg = &loaded.config;
        let r = cfg.resolve_uncalibrated()?;
        setup.plane = r.plane_cfg;
        setup.anchors = r.anchors;
        setup.params = r.base_params;
        setup.policy = r.policy;
        setup.latency = r.latency;
        setup.opts = r.opts;
    }
    setup.threads = threads_from_env()?;
    let started = std::time::Instant::now();
    let results = run_all(&setup);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(CliError::Selftest(failed));
    }
    Ok(())
}
