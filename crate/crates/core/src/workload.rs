//! Spatio-temporal load traces: CSV ingestion and emission, synthetic
//! generators and zero-order-hold sampling.
//!
//! Trace files look like
//!
//! ```text
//! # regions: die,io
//! # duration_us: 10
//! time_us,region_id,power_w
//! 0,die,400
//! 0,io,100
//! 5,die,40
//! 5,io,10
//! ```
//!
//! The `regions` and `duration_us` directives are optional; other `#` lines
//! are ignored. Times are kept in microseconds exactly as written so a parsed
//! trace re-emits byte for byte.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ceiling on total trace power (W).
pub const DEFAULT_P_MAX: f64 = 1000.0;

const HEADER: &str = "time_us,region_id,power_w";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("invalid generator: {0}")]
    Generator(String),
    #[error("time {t:e} s outside trace span [0, {duration:e}] s")]
    OutOfRange { t: f64, duration: f64 },
}

pub type Result<T> = std::result::Result<T, WorkloadError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSample {
    pub time_us: f64,
    /// Power per region (W), in the trace's region order.
    pub power: Vec<f64>,
}

impl LoadSample {
    pub fn time(&self) -> f64 {
        self.time_us * 1e-6
    }

    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadTrace {
    regions: Vec<String>,
    samples: Vec<LoadSample>,
    duration_us: f64,
}

impl LoadTrace {
    /// Builds and validates a trace against `p_max`.
    pub fn new(
        regions: Vec<String>,
        samples: Vec<LoadSample>,
        duration_us: f64,
        p_max: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(WorkloadError::Invalid(m));
        if regions.is_empty() {
            return bad("trace declares no regions".into());
        }
        for (k, r) in regions.iter().enumerate() {
            if r.is_empty() || r.contains(',') || r.trim() != r {
                return bad(format!(
                    "region id '{r}' is empty or contains a comma or padding"
                ));
            }
            if regions[..k].contains(r) {
                return bad(format!("region '{r}' declared twice"));
            }
        }
        if samples.is_empty() {
            return bad("trace has no samples".into());
        }
        let mut last = f64::NEG_INFINITY;
        for s in &samples {
            if !s.time_us.is_finite() || s.time_us < 0.0 {
                return bad(format!(
                    "sample time {} us is negative or not finite",
                    s.time_us
                ));
            }
            if s.time_us <= last {
                return bad(format!(
                    "sample times must increase strictly ({} us follows {} us)",
                    s.time_us, last
                ));
            }
            last = s.time_us;
            if s.power.len() != regions.len() {
                return bad(format!(
                    "sample at {} us covers {} of {} regions",
                    s.time_us,
                    s.power.len(),
                    regions.len()
                ));
            }
            if let Some(p) = s.power.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
                return bad(format!(
                    "negative or non-finite power {p} W at {} us",
                    s.time_us
                ));
            }
            let total = s.total();
            if total > p_max * (1.0 + 1e-12) {
                return bad(format!(
                    "total power {total} W at {} us exceeds the system maximum {p_max} W",
                    s.time_us
                ));
            }
        }
        if !(duration_us >= last) || !duration_us.is_finite() {
            return bad(format!(
                "duration {duration_us} us ends before the last sample at {last} us"
            ));
        }
        Ok(LoadTrace {
            regions,
            samples,
            duration_us,
        })
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn samples(&self) -> &[LoadSample] {
        &self.samples
    }

    pub fn duration_us(&self) -> f64 {
        self.duration_us
    }

    pub fn duration(&self) -> f64 {
        self.duration_us * 1e-6
    }

    pub fn peak_power(&self) -> f64 {
        self.samples
            .iter()
            .map(LoadSample::total)
            .fold(0.0, f64::max)
    }
}

/// Parses a trace with the default power ceiling.
pub fn parse_trace(text: &str) -> Result<LoadTrace> {
    parse_trace_with_limit(text, DEFAULT_P_MAX)
}

pub fn parse_trace_with_limit(text: &str, p_max: f64) -> Result<LoadTrace> {
    let mut declared: Option<Vec<String>> = None;
    let mut duration: Option<f64> = None;
    let mut seen_header = false;
    let mut rows: Vec<(usize, f64, String, f64)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| WorkloadError::Parse { line, msg };
        let Some(comment) = raw.trim().strip_prefix('#') else {
            continue;
        };
        let comment = comment.trim();
        if let Some(list) = comment.strip_prefix("regions:") {
            let ids: Vec<String> = list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if ids.is_empty() {
                return Err(err("empty regions directive".into()));
            }
            declared = Some(ids);
        } else if let Some(d) = comment.strip_prefix("duration_us:") {
            duration = Some(
                d.trim()
                    .parse()
                    .map_err(|_| err(format!("bad duration '{}'", d.trim())))?,
            );
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| WorkloadError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| WorkloadError::Parse { line, msg };
        if !seen_header {
            if rec.iter().collect::<Vec<_>>() != ["time_us", "region_id", "power_w"] {
                let found = rec.iter().collect::<Vec<_>>().join(",");
                return Err(err(format!("expected header '{HEADER}', found '{found}'")));
            }
            seen_header = true;
            continue;
        }
        if rec.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", rec.len())));
        }
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| err(format!("bad time '{}'", &rec[0])))?;
        let p: f64 = rec[2]
            .parse()
            .map_err(|_| err(format!("bad power '{}'", &rec[2])))?;
        if !t.is_finite() || t < 0.0 {
            return Err(err(format!("time {t} us must be finite and non-negative")));
        }
        if !p.is_finite() || p < 0.0 {
            return Err(err(format!("power {p} W must be finite and non-negative")));
        }
        if rec[1].is_empty() {
            return Err(err("empty region id".into()));
        }
        rows.push((line, t, rec[1].to_string(), p));
    }
    if !seen_header {
        return Err(WorkloadError::Parse {
            line: text.lines().count().max(1),
            msg: format!("missing header '{HEADER}'"),
        });
    }
    if rows.is_empty() {
        return Err(WorkloadError::Invalid("trace has no samples".into()));
    }

    let regions = match declared {
        Some(r) => r,
        None => {
            let t0 = rows[0].1;
            let mut r: Vec<String> = Vec::new();
            for (_, _, id, _) in rows.iter().take_while(|row| row.1 == t0) {
                if !r.contains(id) {
                    r.push(id.clone());
                }
            }
            r
        }
    };

    let mut samples: Vec<LoadSample> = Vec::new();
    let mut filled: Vec<bool> = Vec::new();
    let mut group_line = 0;
    for (line, t, id, p) in rows {
        let err = |msg: String| WorkloadError::Parse { line, msg };
        let k = regions
            .iter()
            .position(|r| *r == id)
            .ok_or_else(|| err(format!("unknown region '{id}'")))?;
        let same = samples.last().is_some_and(|s| s.time_us == t);
        if !same {
            if let Some(prev) = samples.last() {
                if t < prev.time_us {
                    return Err(err(format!(
                        "time {t} us goes backwards (previous {} us)",
                        prev.time_us
                    )));
                }
                if let Some(miss) = filled.iter().position(|f| !f) {
                    return Err(WorkloadError::Parse {
                        line: group_line,
                        msg: format!(
                            "sample at {} us has no value for region '{}'",
                            prev.time_us, regions[miss]
                        ),
                    });
                }
            }
            samples.push(LoadSample {
                time_us: t,
                power: vec![0.0; regions.len()],
            });
            filled = vec![false; regions.len()];
            group_line = line;
        }
        if filled[k] {
            return Err(err(format!("region '{id}' repeated at {t} us")));
        }
        filled[k] = true;
        samples.last_mut().expect("pushed above").power[k] = p;
    }
    if let Some(miss) = filled.iter().position(|f| !f) {
        return Err(WorkloadError::Parse {
            line: group_line,
            msg: format!(
                "sample at {} us has no value for region '{}'",
                samples.last().map_or(0.0, |s| s.time_us),
                regions[miss]
            ),
        });
    }
    let last = samples.last().map_or(0.0, |s| s.time_us);
    LoadTrace::new(regions, samples, duration.unwrap_or(last), p_max)
}

/// Canonical text form; [`parse_trace`] inverts it exactly.
pub fn emit_trace(trace: &LoadTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# regions: {}", trace.regions.join(","));
    let _ = writeln!(out, "# duration_us: {}", trace.duration_us);
    let _ = writeln!(out, "{HEADER}");
    for s in &trace.samples {
        for (id, p) in trace.regions.iter().zip(&s.power) {
            let _ = writeln!(out, "{},{id},{p}", s.time_us);
        }
    }
    out
}

/// Zero-order hold: the latest sample at or before `t` (seconds).
pub fn sample_at(trace: &LoadTrace, t: f64) -> Result<&LoadSample> {
    let t_us = t * 1e6;
    let tol = 1e-9 * t_us.abs().max(1.0);
    let first = trace.samples[0].time_us;
    if !(t_us >= first - tol) || t_us > trace.duration_us + tol {
        return Err(WorkloadError::OutOfRange {
            t,
            duration: trace.duration(),
        });
    }
    let idx = trace.samples.partition_point(|s| s.time_us <= t_us + tol);
    Ok(&trace.samples[idx.max(1) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionWeight {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    Constant {
        power_w: f64,
    },
    Step {
        before_w: f64,
        after_w: f64,
        at_us: f64,
    },
    Ramp {
        from_w: f64,
        to_w: f64,
    },
    /// A share `fraction` of the power sits on one region at a time, moving
    /// to the next region every `dwell_us`; the rest follows the weights.
    Hotspot {
        power_w: f64,
        fraction: f64,
        dwell_us: f64,
    },
    /// Gaussian increments of standard deviation `sigma_w`, reflected into
    /// `[min_w, max_w]`.
    RandomWalk {
        start_w: f64,
        sigma_w: f64,
        min_w: f64,
        max_w: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub duration_us: f64,
    pub sample_us: f64,
    #[serde(default)]
    pub regions: Vec<RegionWeight>,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
}

fn default_p_max() -> f64 {
    DEFAULT_P_MAX
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WorkloadError::Generator(m));
        if !(self.duration_us >= 0.0) || !self.duration_us.is_finite() {
            return bad(format!(
                "duration {} us must be finite and >= 0",
                self.duration_us
            ));
        }
        if !(self.sample_us > 0.0) {
            return bad(format!(
                "sample period {} us must be positive",
                self.sample_us
            ));
        }
        if self.duration_us / self.sample_us > 1e7 {
            return bad("more than 10 million samples requested".into());
        }
        if self.regions.is_empty() {
            return bad("no regions given".into());
        }
        if self.regions.iter().any(|r| !(r.weight >= 0.0)) {
            return bad("region weights must be non-negative".into());
        }
        if !(self.regions.iter().map(|r| r.weight).sum::<f64>() > 0.0) {
            return bad("region weights sum to zero".into());
        }
        let in_range = |name: &str, p: f64| -> Result<()> {
            if !(p >= 0.0 && p <= self.p_max) {
                return Err(WorkloadError::Generator(format!(
                    "{name} = {p} W outside [0, {}] W",
                    self.p_max
                )));
            }
            Ok(())
        };
        match &self.kind {
            GeneratorKind::Constant { power_w } => in_range("power_w", *power_w)?,
            GeneratorKind::Step {
                before_w, after_w, ..
            } => {
                in_range("before_w", *before_w)?;
                in_range("after_w", *after_w)?;
            }
            GeneratorKind::Ramp { from_w, to_w } => {
                in_range("from_w", *from_w)?;
                in_range("to_w", *to_w)?;
            }
            GeneratorKind::Hotspot {
                power_w,
                fraction,
                dwell_us,
            } => {
                in_range("power_w", *power_w)?;
                if !(0.0..=1.0).contains(fraction) {
                    return bad(format!("hotspot fraction {fraction} outside [0, 1]"));
                }
                if !(*dwell_us > 0.0) {
                    return bad(format!("hotspot dwell {dwell_us} us must be positive"));
                }
            }
            GeneratorKind::RandomWalk {
                start_w,
                sigma_w,
                min_w,
                max_w,
            } => {
                in_range("min_w", *min_w)?;
                in_range("max_w", *max_w)?;
                if min_w > max_w {
                    return bad(format!("min_w {min_w} exceeds max_w {max_w}"));
                }
                if !(start_w >= min_w && start_w <= max_w) {
                    return bad(format!("start_w {start_w} outside [{min_w}, {max_w}]"));
                }
                if !(*sigma_w >= 0.0) || !sigma_w.is_finite() {
                    return bad(format!("sigma_w {sigma_w} must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * span);
    if y > span {
        y = 2.0 * span - y;
    }
    lo + y
}

/// Deterministic synthetic trace for `(spec, seed)`.
pub fn gen_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<LoadTrace> {
    spec.validate()?;
    let ids: Vec<String> = spec.regions.iter().map(|r| r.id.clone()).collect();
    let wsum: f64 = spec.regions.iter().map(|r| r.weight).sum();
    let weights: Vec<f64> = spec.regions.iter().map(|r| r.weight / wsum).collect();
    let split = |total: f64| -> Vec<f64> { weights.iter().map(|w| w * total).collect() };

    let count = (spec.duration_us / spec.sample_us + 1e-9).floor() as usize + 1;
    let times: Vec<f64> = (0..count).map(|k| k as f64 * spec.sample_us).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = Vec::with_capacity(count);
    match &spec.kind {
        GeneratorKind::Constant { power_w } => {
            for &t in &times {
                samples.push(LoadSample {
                    time_us: t,
                    power: split(*power_w),
                });
            }
        }
        GeneratorKind::Step {
            before_w,
            after_w,
            at_us,
        } => {
            for &t in &times {
                let p = if t < *at_us { *before_w } else { *after_w };
                samples.push(LoadSample {
                    time_us: t,
                    power: split(p),
                });
            }
        }
        GeneratorKind::Ramp { from_w, to_w } => {
            for &t in &times {
                let x = if spec.duration_us > 0.0 {
                    t / spec.duration_us
                } else {
                    0.0
                };
                let p = (from_w + (to_w - from_w) * x).clamp(0.0, spec.p_max);
                samples.push(LoadSample {
                    time_us: t,
                    power: split(p),
                });
            }
        }
        GeneratorKind::Hotspot {
            power_w,
            fraction,
            dwell_us,
        } => {
            let n = ids.len();
            let offset = rng.random_range(0..n);
            for &t in &times {
                let hot = (offset + (t / dwell_us + 1e-9).floor() as usize) % n;
                let mut power = split(power_w * (1.0 - fraction));
                power[hot] += power_w * fraction;
                samples.push(LoadSample { time_us: t, power });
            }
        }
        GeneratorKind::RandomWalk {
            start_w,
            sigma_w,
            min_w,
            max_w,
        } => {
            let step =
                Normal::new(0.0, *sigma_w).map_err(|e| WorkloadError::Generator(e.to_string()))?;
            let mut p = *start_w;
            for &t in &times {
                samples.push(LoadSample {
                    time_us: t,
                    power: split(p),
                });
                p = reflect(p + step.sample(&mut rng), *min_w, *max_w);
            }
        }
    }
    LoadTrace::new(ids, samples, spec.duration_us, spec.p_max * (1.0 + 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regions(n: usize) -> Vec<RegionWeight> {
        (0..n)
            .map(|k| RegionWeight {
                id: format!("R{k}"),
                weight: 1.0 + k as f64,
            })
            .collect()
    }

    fn spec(kind: GeneratorKind) -> GeneratorSpec {
        GeneratorSpec {
            kind,
            duration_us: 100.0,
            sample_us: 1.0,
            regions: regions(3),
            p_max: DEFAULT_P_MAX,
        }
    }

    #[test]
    fn single_row() {
        let t = parse_trace("time_us,region_id,power_w\n0,R0,500.0\n").unwrap();
        assert_eq!(t.regions(), ["R0"]);
        assert_eq!(t.samples().len(), 1);
        assert_eq!(t.samples()[0].power, vec![500.0]);
        assert_eq!(t.duration_us(), 0.0);
    }

    #[test]
    fn decreasing_time_names_line() {
        let text = "# comment\ntime_us,region_id,power_w\n5,R0,1\n3,R0,2\n";
        match parse_trace(text) {
            Err(WorkloadError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_region_rejected() {
        let text = "# regions: a,b\ntime_us,region_id,power_w\n0,a,1\n0,c,1\n";
        match parse_trace(text) {
            Err(WorkloadError::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("unknown region"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_region_and_overload_rejected() {
        let text = "# regions: a,b\ntime_us,region_id,power_w\n0,a,1\n1,a,1\n1,b,1\n";
        assert!(matches!(
            parse_trace(text),
            Err(WorkloadError::Parse { line: 3, .. })
        ));
        let text = "time_us,region_id,power_w\n0,a,600\n0,b,600\n";
        assert!(matches!(parse_trace(text), Err(WorkloadError::Invalid(_))));
        assert!(parse_trace("0,a,1\n").is_err());
        assert!(parse_trace("time_us,region_id,power_w\n0,a,-1\n").is_err());
    }

    #[test]
    fn round_trip_synthetic() {
        let mut s = spec(GeneratorKind::RandomWalk {
            start_w: 300.0,
            sigma_w: 25.0,
            min_w: 0.0,
            max_w: 900.0,
        });
        s.duration_us = 99.0;
        let t = gen_synthetic(&s, 7).unwrap();
        assert_eq!(t.samples().len(), 100);
        let text = emit_trace(&t);
        let back = parse_trace(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(emit_trace(&back), text);
    }

    #[test]
    fn generators() {
        let c = gen_synthetic(&spec(GeneratorKind::Constant { power_w: 50.0 }), 1).unwrap();
        assert!(c.samples().iter().all(|s| (s.total() - 50.0).abs() < 1e-12));

        let st = gen_synthetic(
            &spec(GeneratorKind::Step {
                before_w: 100.0,
                after_w: 500.0,
                at_us: 40.0,
            }),
            1,
        )
        .unwrap();
        let mut levels: Vec<f64> = st.samples().iter().map(|s| s.total()).collect();
        levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(levels.len(), 2);

        let rw = spec(GeneratorKind::RandomWalk {
            start_w: 200.0,
            sigma_w: 10.0,
            min_w: 50.0,
            max_w: 400.0,
        });
        assert_eq!(
            gen_synthetic(&rw, 42).unwrap(),
            gen_synthetic(&rw, 42).unwrap()
        );
        assert_ne!(
            gen_synthetic(&rw, 42).unwrap(),
            gen_synthetic(&rw, 43).unwrap()
        );
        for s in gen_synthetic(&rw, 42).unwrap().samples() {
            assert!((50.0 - 1e-9..=400.0 + 1e-9).contains(&s.total()));
        }

        let hs = gen_synthetic(
            &spec(GeneratorKind::Hotspot {
                power_w: 300.0,
                fraction: 0.6,
                dwell_us: 10.0,
            }),
            3,
        )
        .unwrap();
        for s in hs.samples() {
            assert!((s.total() - 300.0).abs() < 1e-9);
            assert!(s.power.iter().cloned().fold(0.0, f64::max) >= 180.0);
        }

        assert!(gen_synthetic(&spec(GeneratorKind::Constant { power_w: 2000.0 }), 1).is_err());
    }

    #[test]
    fn zero_order_hold() {
        let text = "time_us,region_id,power_w\n0,a,1\n2,a,5\n";
        let t = parse_trace(text).unwrap();
        assert_eq!(sample_at(&t, 0.0).unwrap().power, vec![1.0]);
        assert_eq!(sample_at(&t, 1.5e-6).unwrap().power, vec![1.0]);
        assert_eq!(sample_at(&t, 2e-6).unwrap().power, vec![5.0]);
        assert!(sample_at(&t, 3e-6).is_err());
        assert!(sample_at(&t, -1e-6).is_err());
    }

    #[test]
    fn reflect_stays_in_bounds() {
        assert_eq!(reflect(5.0, 0.0, 10.0), 5.0);
        assert_eq!(reflect(12.0, 0.0, 10.0), 8.0);
        assert_eq!(reflect(-3.0, 0.0, 10.0), 3.0);
        assert_eq!(reflect(7.0, 4.0, 4.0), 4.0);
    }
}
