//! TOML run manifest.

use std::path::{Path, PathBuf};

use dvpdsim_core::converter::{
    capacitance_for_ripple, inductance_for_ripple, reference, CalibrationAnchors, ConverterParams,
    EfficiencyAnchor, LossCoeffs,
};
use dvpdsim_core::engine::{calibrate_for_plane, LatencyBudget, Sharing, SimOptions};
use dvpdsim_core::plane::{build_plane, PlaneConfig, PlaneModel};
use dvpdsim_core::policy::{PolicyConfig, PolicyKind};
use dvpdsim_core::workload::{
    gen_synthetic, parse_trace_with_limit, GeneratorSpec, LoadTrace, RegionWeight,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub plane: Option<PlaneConfig>,
    #[serde(default)]
    pub converter: ConverterSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub latency: LatencySection,
    #[serde(default)]
    pub sim: SimSection,
    pub trace: Option<TraceSection>,
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterSection {
    pub v_in: Option<f64>,
    pub v_out: Option<f64>,
    pub i_rated: Option<f64>,
    pub f_nom_hz: Option<f64>,
    /// Sized for the nominal current ripple when absent.
    pub inductance_h: Option<f64>,
    /// Sized for the nominal voltage ripple when absent.
    pub capacitance_f: Option<f64>,
    pub r_out_ohm: Option<f64>,
    pub p_leak_off_w: Option<f64>,
    /// Explicit per-regulator loss coefficients; skips calibration.
    pub loss: Option<LossCoeffs>,
    pub anchors: Option<AnchorSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSection {
    pub points: Vec<EfficiencyAnchor>,
    pub balance_at: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: Option<PolicyKind>,
    pub p_opt_w: Option<f64>,
    pub hysteresis: Option<f64>,
    pub pfm_floor: Option<f64>,
    pub pfm_transition: Option<f64>,
    pub n_min: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    pub sensing_s: Option<f64>,
    pub compute_s: Option<f64>,
    pub comm_s: Option<f64>,
    pub gate_s: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt_us: Option<f64>,
    pub sharing: Option<Sharing>,
    pub p_max_w: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub fractions: Option<Vec<f64>>,
    pub policies: Option<Vec<PolicyKind>>,
    pub duration_us: Option<f64>,
}

/// A parsed manifest together with where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    /// Directory that relative trace paths resolve against.
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the manifest bytes, or `builtin` without one.
    pub hash: String,
}

impl Loaded {
    pub fn builtin() -> Self {
        Loaded {
            config: RunConfig::default(),
            base_dir: PathBuf::from("."),
            hash: "builtin".into(),
        }
    }
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| CliError::Config(format!("config {} is not UTF-8: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    Ok(Loaded {
        config,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        hash: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything a simulation needs, validated and calibrated.
pub struct Resolved {
    pub plane_cfg: PlaneConfig,
    pub plane: PlaneModel,
    pub base_params: ConverterParams,
    pub anchors: CalibrationAnchors,
    pub params: ConverterParams,
    pub policy: PolicyConfig,
    pub latency: LatencyBudget,
    pub opts: SimOptions,
}

impl RunConfig {
    /// Validates every section and fits the loss coefficients unless they
    /// are given explicitly.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut r = self.resolve_uncalibrated()?;
        let loss = match self.converter.loss {
            Some(loss) => loss,
            None => {
                calibrate_for_plane(&r.anchors, &r.plane, &r.base_params)
                    .map_err(|e| CliError::Config(format!("calibration: {e}")))?
                    .per_vr
            }
        };
        r.params = r.base_params.with_loss(loss);
        r.params
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(r)
    }

    /// Like [`RunConfig::resolve`] with the loss coefficients left at zero.
    pub fn resolve_uncalibrated(&self) -> Result<Resolved, CliError> {
        let plane_cfg = self.plane.clone().unwrap_or_else(PlaneConfig::reference);
        let plane = build_plane(&plane_cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let base_params = self.converter_params()?;
        let opts = self.sim_options()?;
        let anchors = self.anchors(&base_params, &opts, plane.vr_count());
        let policy = self.policy_config(plane.vr_count())?;
        let latency = self.latency();
        latency
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Resolved {
            plane_cfg,
            plane,
            base_params,
            anchors,
            params: base_params,
            policy,
            latency,
            opts,
        })
    }

    fn converter_params(&self) -> Result<ConverterParams, CliError> {
        let c = &self.converter;
        let r = ConverterParams::reference();
        let v_in = c.v_in.unwrap_or(r.v_in);
        let v_out = c.v_out.unwrap_or(r.v_out_ref);
        let f_nom = c.f_nom_hz.unwrap_or(r.f_nom);
        if !(v_in > v_out && v_out > 0.0 && f_nom > 0.0) {
            return Err(CliError::Config(format!(
                "converter needs v_in > v_out > 0 and f_nom_hz > 0 (v_in {v_in}, v_out {v_out}, f_nom_hz {f_nom})"
            )));
        }
        let inductance = c
            .inductance_h
            .unwrap_or_else(|| inductance_for_ripple(v_in, v_out, f_nom, reference::DELTA_I));
        let di = (v_in - v_out) * (v_out / v_in) / (inductance * f_nom);
        let capacitance = c
            .capacitance_f
            .unwrap_or_else(|| capacitance_for_ripple(di, f_nom, reference::DELTA_V));
        let p = ConverterParams {
            v_in,
            v_out_ref: v_out,
            i_rated: c.i_rated.unwrap_or(r.i_rated),
            f_nom,
            inductance,
            capacitance,
            loss: r.loss,
            r_out: c.r_out_ohm.unwrap_or(r.r_out),
            p_leak_off: c.p_leak_off_w.unwrap_or(r.p_leak_off),
        };
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    fn anchors(
        &self,
        params: &ConverterParams,
        opts: &SimOptions,
        m_total: usize,
    ) -> CalibrationAnchors {
        let mut a = CalibrationAnchors::reference();
        if let Some(s) = &self.converter.anchors {
            a.points = s.points.clone();
            a.balance_at = s.balance_at;
        }
        a.p_max = opts.p_max;
        a.v_out = params.v_out_ref;
        a.m_total = m_total;
        a
    }

    fn policy_config(&self, m_total: usize) -> Result<PolicyConfig, CliError> {
        let s = &self.policy;
        let r = PolicyConfig::reference(s.kind.unwrap_or(PolicyKind::Lapsa));
        let cfg = PolicyConfig {
            kind: r.kind,
            p_opt: s.p_opt_w.unwrap_or(r.p_opt),
            m_total,
            pfm_efficiency_floor: s.pfm_floor.unwrap_or(r.pfm_efficiency_floor),
            pfm_transition_load: s.pfm_transition.unwrap_or(r.pfm_transition_load),
            hysteresis_band: s.hysteresis.unwrap_or(r.hysteresis_band),
            n_min: s.n_min.unwrap_or(r.n_min),
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn latency(&self) -> LatencyBudget {
        let s = &self.latency;
        let d = LatencyBudget::default();
        LatencyBudget {
            sensing: s.sensing_s.unwrap_or(d.sensing),
            compute: s.compute_s.unwrap_or(d.compute),
            comm: s.comm_s.unwrap_or(d.comm),
            gate: s.gate_s.unwrap_or(d.gate),
        }
    }

    fn sim_options(&self) -> Result<SimOptions, CliError> {
        let d = SimOptions::default();
        let opts = SimOptions {
            dt_ctrl: self.sim.dt_us.map_or(d.dt_ctrl, |us| us * 1e-6),
            sharing: self.sim.sharing.unwrap_or(d.sharing),
            p_max: self.sim.p_max_w.unwrap_or(d.p_max),
        };
        if !(opts.dt_ctrl > 0.0 && opts.dt_ctrl.is_finite()) {
            return Err(CliError::Config(format!(
                "sim.dt_us must be positive, got {}",
                opts.dt_ctrl * 1e6
            )));
        }
        if !(opts.p_max > 0.0 && opts.p_max.is_finite()) {
            return Err(CliError::Config(format!(
                "sim.p_max_w must be positive, got {}",
                opts.p_max
            )));
        }
        Ok(opts)
    }

    /// Reads the trace file or runs the generator, whichever is configured.
    pub fn load_trace(
        &self,
        base_dir: &Path,
        plane: &PlaneModel,
        p_max: f64,
    ) -> Result<LoadTrace, CliError> {
        match (&self.trace, &self.generator) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "config sets both [trace] and [generator]; keep exactly one".into(),
            )),
            (None, None) => Err(CliError::Config(
                "config needs a [trace] path or a [generator] section".into(),
            )),
            (Some(t), None) => {
                let path = base_dir.join(&t.path);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Config(format!("cannot read trace {}: {e}", path.display()))
                })?;
                parse_trace_with_limit(&text, p_max)
                    .map_err(|e| CliError::Config(format!("trace {}: {e}", path.display())))
            }
            (None, Some(g)) => {
                let mut spec = g.clone();
                if spec.regions.is_empty() {
                    spec.regions = plane
                        .regions()
                        .iter()
                        .map(|r| RegionWeight {
                            id: r.id.clone(),
                            weight: r.weight,
                        })
                        .collect();
                }
                gen_synthetic(&spec, self.seed)
                    .map_err(|e| CliError::Config(format!("generator: {e}")))
            }
        }
    }

    pub fn sweep_fractions(&self) -> Result<Vec<f64>, CliError> {
        let f = self
            .sweep
            .fractions
            .clone()
            .unwrap_or_else(|| (1..=20).map(|k| k as f64 / 20.0).collect());
        if f.is_empty() {
            return Err(CliError::Config("sweep.fractions is empty".into()));
        }
        if let Some(bad) = f.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
            return Err(CliError::Config(format!(
                "sweep fraction {bad} is outside (0, 1]"
            )));
        }
        Ok(f)
    }

    pub fn sweep_policies(&self) -> Vec<PolicyKind> {
        self.sweep
            .policies
            .clone()
            .unwrap_or_else(|| PolicyKind::ALL.to_vec())
    }

    pub fn sweep_duration_us(&self) -> Result<f64, CliError> {
        let d = self.sweep.duration_us.unwrap_or(3.0);
        if !(d >= 0.0 && d.is_finite()) {
            return Err(CliError::Config(format!(
                "sweep.duration_us must be >= 0, got {d}"
            )));
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_resolves_to_reference() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.plane.vr_count(), 70);
        assert_eq!(r.policy, PolicyConfig::reference(PolicyKind::Lapsa));
        assert_eq!(r.base_params, ConverterParams::reference());
        assert!(r.params.loss.c_cond > 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[policy]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("speed = 3\n").is_err());
    }

    #[test]
    fn explicit_loss_skips_calibration() {
        let cfg: RunConfig =
            toml::from_str("[converter.loss]\nc_cond = 0.001\na_sw = 0.02\nb_fix = 0.3\n").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(
            r.params.loss,
            LossCoeffs {
                c_cond: 0.001,
                a_sw: 0.02,
                b_fix: 0.3
            }
        );
    }

    #[test]
    fn generator_inherits_plane_regions() {
        let cfg: RunConfig = toml::from_str(
            "[generator]\nkind = \"constant\"\npower_w = 100.0\nduration_us = 4.0\nsample_us = 1.0\n",
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        let t = cfg.load_trace(Path::new("."), &r.plane, 1000.0).unwrap();
        assert_eq!(t.regions().len(), r.plane.regions().len());
        assert!((t.samples()[0].total() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn default_fractions_are_twenty_steps() {
        let f = RunConfig::default().sweep_fractions().unwrap();
        assert_eq!(f.len(), 20);
        assert_eq!(f[0], 0.05);
        assert_eq!(f[19], 1.0);
    }

    #[test]
    fn both_trace_sources_is_an_error() {
        let cfg: RunConfig = toml::from_str(
            "[trace]\npath = \"t.csv\"\n[generator]\nkind = \"constant\"\npower_w = 1.0\nduration_us = 1.0\nsample_us = 1.0\n",
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert!(matches!(
            cfg.load_trace(Path::new("."), &r.plane, 1000.0),
            Err(CliError::Config(_))
        ));
    }
}
