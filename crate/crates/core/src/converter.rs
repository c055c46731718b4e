//! Analytic model of a single 48 V to 1 V buck regulator.
//!
//! Ripple follows the ideal CCM buck relations, conduction mode is decided
//! from the half-ripple versus the average inductor current, and losses use a
//! three-term model:
//!
//! ```text
//! P_loss = c_cond * I^2 + a_sw * I * (f / f_nom) + b_fix * (f / f_nom)
//! ```
//!
//! The coefficients come from [`calibrate_losses`], which fits the
//! system-level efficiency anchors and distributes the result per regulator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative band inside which `delta_i / 2 == i_out` counts as boundary
/// conduction.
pub const BCM_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConverterError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid converter parameters: {0}")]
    InvalidParams(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, ConverterError>;

/// Per-regulator loss coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoeffs {
    /// Ohm-equivalent conduction term: routing, inductor DCR and switch
    /// on-resistance lumped together.
    pub c_cond: f64,
    /// Current-proportional switching loss at `f_nom` (V).
    pub a_sw: f64,
    /// Fixed gate-drive and control loss at `f_nom` (W).
    pub b_fix: f64,
}

impl LossCoeffs {
    pub const ZERO: LossCoeffs = LossCoeffs {
        c_cond: 0.0,
        a_sw: 0.0,
        b_fix: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub v_in: f64,
    pub v_out_ref: f64,
    pub i_rated: f64,
    pub f_nom: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub loss: LossCoeffs,
    /// Thevenin source impedance seen by the power plane.
    pub r_out: f64,
    /// Power drawn by a regulator whose gates are clamped off.
    pub p_leak_off: f64,
}

/// Nominal design point of the reference regulator.
pub mod reference {
    pub const V_IN: f64 = 48.0;
    pub const V_OUT: f64 = 1.0;
    pub const I_RATED: f64 = 15.0;
    pub const F_NOM: f64 = 4e6;
    /// Peak-to-peak inductor ripple at `F_NOM`.
    pub const DELTA_I: f64 = 0.825;
    /// Peak-to-peak output ripple at `F_NOM`.
    pub const DELTA_V: f64 = 0.02;
    pub const R_OUT: f64 = 1e-3;
    pub const P_LEAK_OFF: f64 = 1e-3;
    pub const M_TOTAL: usize = 70;
    pub const P_MAX: f64 = 1000.0;
}

/// Inductance that yields `delta_i` peak-to-peak at `f_sw` in CCM.
pub fn inductance_for_ripple(v_in: f64, v_out: f64, f_sw: f64, delta_i: f64) -> f64 {
    (v_in - v_out) * (v_out / v_in) / (f_sw * delta_i)
}

/// Output capacitance that yields `delta_v` for a given inductor ripple.
pub fn capacitance_for_ripple(delta_i: f64, f_sw: f64, delta_v: f64) -> f64 {
    delta_i / (8.0 * f_sw * delta_v)
}

impl ConverterParams {
    /// The 48 V to 1 V, 15 A, 4 MHz regulator with L and C sized so the
    /// nominal ripple is exactly 0.825 A and 0.02 V. Loss coefficients are
    /// left at zero; attach calibrated ones with [`ConverterParams::with_loss`].
    pub fn reference() -> Self {
        use reference::*;
        let inductance = inductance_for_ripple(V_IN, V_OUT, F_NOM, DELTA_I);
        let capacitance = capacitance_for_ripple(DELTA_I, F_NOM, DELTA_V);
        ConverterParams {
            v_in: V_IN,
            v_out_ref: V_OUT,
            i_rated: I_RATED,
            f_nom: F_NOM,
            inductance,
            capacitance,
            loss: LossCoeffs::ZERO,
            r_out: R_OUT,
            p_leak_off: P_LEAK_OFF,
        }
    }

    pub fn with_loss(mut self, loss: LossCoeffs) -> Self {
        self.loss = loss;
        self
    }

    pub fn duty(&self) -> f64 {
        self.v_out_ref / self.v_in
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ConverterError::InvalidParams(msg));
        if !(self.v_out_ref > 0.0 && self.v_in > self.v_out_ref) {
            return bad(format!(
                "need v_in > v_out_ref > 0 (v_in = {}, v_out_ref = {})",
                self.v_in, self.v_out_ref
            ));
        }
        if !(self.f_nom > 0.0) {
            return bad(format!("f_nom must be positive, got {}", self.f_nom));
        }
        if !(self.inductance > 0.0 && self.capacitance > 0.0) {
            return bad(format!(
                "inductance and capacitance must be positive (L = {}, C = {})",
                self.inductance, self.capacitance
            ));
        }
        if !(self.i_rated > 0.0) {
            return bad(format!("i_rated must be positive, got {}", self.i_rated));
        }
        if !(self.r_out >= 0.0) {
            return bad(format!("r_out must be non-negative, got {}", self.r_out));
        }
        let LossCoeffs {
            c_cond,
            a_sw,
            b_fix,
        } = self.loss;
        if !(c_cond >= 0.0 && a_sw >= 0.0 && b_fix >= 0.0) {
            return bad(format!(
                "loss coefficients must be non-negative: {:?}",
                self.loss
            ));
        }
        if !(self.p_leak_off >= 0.0) {
            return bad(format!(
                "p_leak_off must be non-negative, got {}",
                self.p_leak_off
            ));
        }
        // Leakage of a clamped regulator must stay far below its fixed loss.
        if b_fix > 0.0 && self.p_leak_off >= 0.01 * b_fix {
            return bad(format!(
                "p_leak_off ({} W) must be below 1% of the per-VR fixed loss ({} W)",
                self.p_leak_off, b_fix
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConductionMode {
    Ccm,
    Bcm,
    Dcm,
    /// Regulator clamped off; no inductor current.
    Off,
}

impl ConductionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConductionMode::Ccm => "CCM",
            ConductionMode::Bcm => "BCM",
            ConductionMode::Dcm => "DCM",
            ConductionMode::Off => "off",
        }
    }
}

/// Operating point of one regulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterState {
    pub active: bool,
    pub f_sw: f64,
    pub i_out: f64,
    pub mode: ConductionMode,
    pub delta_i: f64,
    pub delta_v: f64,
}

impl ConverterState {
    pub fn off() -> Self {
        ConverterState {
            active: false,
            f_sw: 0.0,
            i_out: 0.0,
            mode: ConductionMode::Off,
            delta_i: 0.0,
            delta_v: 0.0,
        }
    }

    /// Evaluates ripple and conduction mode of an active regulator.
    pub fn active(params: &ConverterParams, i_out: f64, f_sw: f64) -> Result<Self> {
        let delta_i = ripple_current(params, f_sw)?;
        let delta_v = ripple_voltage(params, delta_i, f_sw)?;
        Ok(ConverterState {
            active: true,
            f_sw,
            i_out,
            mode: conduction_mode(i_out.abs(), delta_i),
            delta_i,
            delta_v,
        })
    }
}

/// Peak-to-peak inductor current ripple in CCM:
/// `(V_in - V_out) * D / (L * f_sw)`.
pub fn ripple_current(params: &ConverterParams, f_sw: f64) -> Result<f64> {
    if !(f_sw > 0.0) {
        return Err(ConverterError::Domain(format!(
            "switching frequency must be positive, got {f_sw}"
        )));
    }
    if !(params.inductance > 0.0) {
        return Err(ConverterError::Domain(format!(
            "inductance must be positive, got {}",
            params.inductance
        )));
    }
    Ok((params.v_in - params.v_out_ref) * params.duty() / (params.inductance * f_sw))
}

/// Peak-to-peak output voltage ripple: `delta_i / (8 * C * f_sw)`.
pub fn ripple_voltage(params: &ConverterParams, delta_i: f64, f_sw: f64) -> Result<f64> {
    if !(params.capacitance > 0.0) {
        return Err(ConverterError::Domain(format!(
            "capacitance must be positive, got {}",
            params.capacitance
        )));
    }
    if !(f_sw > 0.0) {
        return Err(ConverterError::Domain(format!(
            "switching frequency must be positive, got {f_sw}"
        )));
    }
    if !(delta_i >= 0.0) {
        return Err(ConverterError::Domain(format!(
            "ripple current must be non-negative, got {delta_i}"
        )));
    }
    Ok(delta_i / (8.0 * params.capacitance * f_sw))
}

pub fn conduction_mode(i_out: f64, delta_i: f64) -> ConductionMode {
    let half = delta_i / 2.0;
    let scale = half.abs().max(i_out.abs());
    if (half - i_out).abs() <= BCM_REL_TOL * scale {
        ConductionMode::Bcm
    } else if half < i_out {
        ConductionMode::Ccm
    } else {
        ConductionMode::Dcm
    }
}

/// Operating point for the DCM conversion-ratio formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmOperatingPoint {
    /// `T_on / T_s`.
    pub duty: f64,
    /// `K = 2 L / (R_L * T_s)`.
    pub k_param: f64,
    pub t_s: f64,
}

impl DcmOperatingPoint {
    pub fn from_circuit(duty: f64, inductance: f64, r_load: f64, f_sw: f64) -> Self {
        let t_s = 1.0 / f_sw;
        DcmOperatingPoint {
            duty,
            k_param: 2.0 * inductance / (r_load * t_s),
            t_s,
        }
    }

    /// Whether the circuit actually runs discontinuous (`K < 1 - D`).
    pub fn is_dcm(&self) -> bool {
        self.k_param < 1.0 - self.duty
    }
}

/// DCM buck conversion ratio `2 / (1 + sqrt(1 + 4K / D^2))`.
pub fn dcm_conversion_ratio(pt: &DcmOperatingPoint) -> Result<f64> {
    if !(pt.duty > 0.0 && pt.duty < 1.0) {
        return Err(ConverterError::Domain(format!(
            "duty cycle must lie in (0, 1), got {}",
            pt.duty
        )));
    }
    if !(pt.k_param > 0.0) {
        return Err(ConverterError::Domain(format!(
            "K must be positive, got {}",
            pt.k_param
        )));
    }
    let d2 = pt.duty * pt.duty;
    Ok(2.0 / (1.0 + (1.0 + 4.0 * pt.k_param / d2).sqrt()))
}

/// Lowest switching frequency that keeps `i_out` in CCM, i.e. the frequency
/// at which `delta_i == 2 * i_out`.
pub fn min_ccm_frequency(params: &ConverterParams, i_out: f64) -> Result<f64> {
    if !(i_out > 0.0) {
        return Err(ConverterError::Domain(format!(
            "no finite CCM frequency for output current {i_out} A"
        )));
    }
    if !(params.inductance > 0.0) {
        return Err(ConverterError::Domain(format!(
            "inductance must be positive, got {}",
            params.inductance
        )));
    }
    Ok((params.v_in - params.v_out_ref) * params.duty() / (2.0 * params.inductance * i_out))
}

/// Losses of one regulator split by mechanism (W).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub conduction: f64,
    pub switching: f64,
    pub gate_drive: f64,
    pub leakage: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.conduction + self.switching + self.gate_drive + self.leakage
    }

    /// Switching plus gate drive: everything that scales with `f_sw`.
    pub fn frequency_dependent(&self) -> f64 {
        self.switching + self.gate_drive
    }
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.conduction += rhs.conduction;
        self.switching += rhs.switching;
        self.gate_drive += rhs.gate_drive;
        self.leakage += rhs.leakage;
    }
}

pub fn vr_loss(params: &ConverterParams, state: &ConverterState) -> LossBreakdown {
    if !state.active {
        return LossBreakdown {
            leakage: params.p_leak_off,
            ..LossBreakdown::default()
        };
    }
    let i = state.i_out.abs();
    let ratio = state.f_sw / params.f_nom;
    let LossCoeffs {
        c_cond,
        a_sw,
        b_fix,
    } = params.loss;
    LossBreakdown {
        conduction: c_cond * i * i,
        switching: a_sw * i * ratio,
        gate_drive: b_fix * ratio,
        leakage: 0.0,
    }
}

/// Efficiency target at a fraction of full system load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyAnchor {
    pub load_fraction: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAnchors {
    pub points: Vec<EfficiencyAnchor>,
    /// Load fraction at which conduction loss equals the frequency-dependent
    /// loss, if that constraint is part of the fit.
    pub balance_at: Option<f64>,
    /// Full system load (W).
    pub p_max: f64,
    pub v_out: f64,
    pub m_total: usize,
}

impl CalibrationAnchors {
    /// 86% at half load, 77% at 10% load, losses balanced at half load.
    pub fn reference() -> Self {
        CalibrationAnchors {
            points: vec![
                EfficiencyAnchor {
                    load_fraction: 0.5,
                    efficiency: 0.86,
                },
                EfficiencyAnchor {
                    load_fraction: 0.1,
                    efficiency: 0.77,
                },
            ],
            balance_at: Some(0.5),
            p_max: reference::P_MAX,
            v_out: reference::V_OUT,
            m_total: reference::M_TOTAL,
        }
    }
}

/// System-level loss polynomial in total output current `I`:
/// `loss = c * I^2 + a * I + b` with every regulator at `f_nom`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemLossCoeffs {
    pub c: f64,
    pub a: f64,
    pub b: f64,
}

impl SystemLossCoeffs {
    pub fn loss(&self, i_total: f64) -> f64 {
        self.c * i_total * i_total + self.a * i_total + self.b
    }

    /// Per-regulator coefficients that reproduce this polynomial when the
    /// current splits equally over `m` regulators.
    pub fn per_vr(&self, m: usize) -> LossCoeffs {
        let m = m as f64;
        LossCoeffs {
            c_cond: self.c * m,
            a_sw: self.a,
            b_fix: self.b / m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub system: SystemLossCoeffs,
    pub per_vr: LossCoeffs,
}

/// Fits `(c, a, b)` to the anchors. Three constraints are solved exactly;
/// more are solved in the least-squares sense.
pub fn calibrate_losses(anchors: &CalibrationAnchors) -> Result<Calibration> {
    let err = |m: String| Err(ConverterError::Calibration(m));
    if anchors.m_total == 0 {
        return err("m_total must be at least 1".into());
    }
    if !(anchors.p_max > 0.0 && anchors.v_out > 0.0) {
        return err(format!(
            "p_max and v_out must be positive (p_max = {}, v_out = {})",
            anchors.p_max, anchors.v_out
        ));
    }
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for pt in &anchors.points {
        if !(pt.load_fraction > 0.0 && pt.efficiency > 0.0 && pt.efficiency <= 1.0) {
            return err(format!(
                "anchor ({}, {}) outside load fraction > 0, efficiency in (0, 1]",
                pt.load_fraction, pt.efficiency
            ));
        }
        let p = pt.load_fraction * anchors.p_max;
        let i = p / anchors.v_out;
        rows.push(([i * i, i, 1.0], p / pt.efficiency - p));
    }
    if let Some(frac) = anchors.balance_at {
        if !(frac > 0.0) {
            return err(format!(
                "balance load fraction must be positive, got {frac}"
            ));
        }
        let i = frac * anchors.p_max / anchors.v_out;
        rows.push(([i * i, -i, -1.0], 0.0));
    }
    if rows.len() < 3 {
        return err(format!(
            "need at least 3 constraints to fit three coefficients, got {}",
            rows.len()
        ));
    }

    let [c, a, b] = match fit_rows(&rows) {
        Some(x) => x,
        None => return err("anchor constraints are linearly dependent (singular system)".into()),
    };
    let system = SystemLossCoeffs { c, a, b };
    for (name, v) in [
        ("c (conduction)", c),
        ("a (switching)", a),
        ("b (fixed)", b),
    ] {
        if !(v >= 0.0) {
            return err(format!(
                "fitted coefficient {name} = {v:.6e} is negative; anchors are not \
                 consistent with a conduction/switching/fixed loss model \
                 (c = {c:.6e}, a = {a:.6e}, b = {b:.6e})"
            ));
        }
    }
    Ok(Calibration {
        system,
        per_vr: system.per_vr(anchors.m_total),
    })
}

/// Least-squares solution of the constraint rows, exact when there are
/// three. Columns are scaled to unit magnitude first. `None` when the rows
/// do not determine all three coefficients.
fn fit_rows(rows: &[([f64; 3], f64)]) -> Option<[f64; 3]> {
    let mut m = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r].0[c]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let mut scale = [0.0; 3];
    for (c, s) in scale.iter_mut().enumerate() {
        *s = m.column(c).amax();
        if *s == 0.0 {
            return None;
        }
        m.column_mut(c).unscale_mut(*s);
    }
    let svd = m.svd(true, true);
    if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
        return None;
    }
    let x = svd.solve(&y, 0.0).ok()?;
    Some([x[0] / scale[0], x[1] / scale[1], x[2] / scale[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    fn params_with_l(l: f64) -> ConverterParams {
        ConverterParams {
            inductance: l,
            ..ConverterParams::reference()
        }
    }

    #[test]
    fn reference_component_values() {
        let p = ConverterParams::reference();
        assert!(close(p.inductance, 296.7e-9, 1e-4), "L = {}", p.inductance);
        assert!(
            close(p.capacitance, 1.289e-6, 1e-3),
            "C = {}",
            p.capacitance
        );
        assert!(p.validate().is_ok());
    }

    #[test]
    fn ripple_current_examples() {
        let p = params_with_l(296.7e-9);
        assert!(close(ripple_current(&p, 4e6).unwrap(), 0.825, 1e-4));
        assert!(close(ripple_current(&p, 2e6).unwrap(), 1.650, 1e-4));
        let p = params_with_l(593.4e-9);
        assert!(close(ripple_current(&p, 4e6).unwrap(), 0.4125, 1e-4));
    }

    #[test]
    fn ripple_current_rejects_bad_inputs() {
        let p = ConverterParams::reference();
        assert!(matches!(
            ripple_current(&p, 0.0),
            Err(ConverterError::Domain(_))
        ));
        assert!(matches!(
            ripple_current(&p, -1.0),
            Err(ConverterError::Domain(_))
        ));
        assert!(ripple_current(&params_with_l(0.0), 4e6).is_err());
    }

    #[test]
    fn ripple_voltage_examples() {
        let p = ConverterParams {
            capacitance: 1.289e-6,
            ..ConverterParams::reference()
        };
        assert!(close(ripple_voltage(&p, 0.825, 4e6).unwrap(), 0.020, 1e-3));
        // 2.17 / (8 * 1.289e-6 * 1.52e6)
        assert!(close(
            ripple_voltage(&p, 2.17, 1.52e6).unwrap(),
            0.13844,
            1e-3
        ));

        let exact = ConverterParams::reference();
        let di = ripple_current(&exact, 2e6).unwrap();
        assert!(close(
            ripple_voltage(&exact, di, 2e6).unwrap(),
            0.080,
            1e-12
        ));

        let no_cap = ConverterParams {
            capacitance: 0.0,
            ..exact
        };
        assert!(ripple_voltage(&no_cap, 0.825, 4e6).is_err());
    }

    #[test]
    fn conduction_mode_examples() {
        assert_eq!(conduction_mode(14.29, 0.825), ConductionMode::Ccm);
        assert_eq!(conduction_mode(0.4125, 0.825), ConductionMode::Bcm);
        assert_eq!(conduction_mode(0.30, 0.825), ConductionMode::Dcm);
        // inside the relative band
        assert_eq!(
            conduction_mode(0.4125 * (1.0 + 5e-10), 0.825),
            ConductionMode::Bcm
        );
        assert_eq!(
            conduction_mode(0.4125 * (1.0 + 1e-6), 0.825),
            ConductionMode::Ccm
        );
    }

    #[test]
    fn dcm_ratio_examples() {
        let at = |duty, k_param| {
            dcm_conversion_ratio(&DcmOperatingPoint {
                duty,
                k_param,
                t_s: 1.0,
            })
            .unwrap()
        };
        assert!((at(0.25, 0.75) - 0.25).abs() < 1e-15);
        assert!((at(0.5, 1e-12) - 1.0).abs() < 1e-5);
        assert!((at(0.5, 0.09375) - 2.0 / (1.0 + 2.5f64.sqrt())).abs() < 1e-15);
        assert!((at(0.5, 0.09375) - 0.7749).abs() < 1e-4);
    }

    #[test]
    fn dcm_ratio_domain_errors() {
        for (duty, k_param) in [
            (0.0, 0.1),
            (1.0, 0.1),
            (0.5, 0.0),
            (0.5, -1.0),
            (f64::NAN, 0.1),
        ] {
            let pt = DcmOperatingPoint {
                duty,
                k_param,
                t_s: 1.0,
            };
            assert!(
                dcm_conversion_ratio(&pt).is_err(),
                "D = {duty}, K = {k_param}"
            );
        }
    }

    #[test]
    fn dcm_operating_point_from_circuit() {
        let pt = DcmOperatingPoint::from_circuit(0.5, 0.046875, 1.0, 1.0);
        assert!((pt.k_param - 0.09375).abs() < 1e-15);
        assert!(pt.is_dcm());
        assert!(!DcmOperatingPoint::from_circuit(0.5, 1.0, 1.0, 1.0).is_dcm());
    }

    #[test]
    fn min_ccm_frequency_examples() {
        let p = params_with_l(296.7e-9);
        let f = min_ccm_frequency(&p, 1.429).unwrap();
        assert!(close(f, 1.155e6, 1e-3), "{f}");
        let f = min_ccm_frequency(&p, 14.29).unwrap();
        assert!(close(f, 115.5e3, 1e-3), "{f}");
        assert!(min_ccm_frequency(&p, 0.0).is_err());
        assert!(min_ccm_frequency(&p, -1.0).is_err());
        for i in [0.01, 0.3, 1.429, 7.0, 14.29] {
            let f = min_ccm_frequency(&p, i).unwrap();
            assert_eq!(
                conduction_mode(i, ripple_current(&p, f).unwrap()),
                ConductionMode::Bcm
            );
        }
    }

    // c, a, b from an independent numpy solve of the three anchor equations.
    const SYS_C: f64 = 1.6279069767441868e-4;
    const SYS_A: f64 = 0.03113862881304748;
    const SYS_B: f64 = 25.128360012080922;

    #[test]
    fn calibration_matches_independent_solve() {
        let cal = calibrate_losses(&CalibrationAnchors::reference()).unwrap();
        assert!(close(cal.system.c, SYS_C, 1e-9));
        assert!(close(cal.system.a, SYS_A, 1e-9));
        assert!(close(cal.system.b, SYS_B, 1e-9));
        assert!(close(cal.per_vr.c_cond, SYS_C * 70.0, 1e-9));
        assert!(close(cal.per_vr.b_fix, SYS_B / 70.0, 1e-9));
    }

    #[test]
    fn calibration_reproduces_anchors() {
        let cal = calibrate_losses(&CalibrationAnchors::reference()).unwrap();
        let eta = |frac: f64| {
            let p = frac * 1000.0;
            p / (p + cal.system.loss(p))
        };
        assert!((eta(0.5) - 0.86).abs() < 1e-6);
        assert!((eta(0.1) - 0.77).abs() < 1e-6);

        // Closed-form curve is flat near the top: peak within 35-55% load and
        // less than half a point above the 50% value.
        let (mut best_f, mut best_eta) = (0.0, 0.0);
        for k in 1..=1000 {
            let f = k as f64 / 1000.0;
            if eta(f) > best_eta {
                best_eta = eta(f);
                best_f = f;
            }
        }
        assert!((0.35..=0.55).contains(&best_f), "peak at {best_f}");
        assert!(best_eta - eta(0.5) < 0.005);
        let i_star = (cal.system.b / cal.system.c).sqrt();
        assert!((i_star - 393.0).abs() < 1.0, "I* = {i_star}");
    }

    #[test]
    fn calibrated_vr_loss_at_half_load() {
        let cal = calibrate_losses(&CalibrationAnchors::reference()).unwrap();
        let p = ConverterParams::reference().with_loss(cal.per_vr);
        p.validate().unwrap();
        let i = 500.0 / 70.0;
        let st = ConverterState::active(&p, i, p.f_nom).unwrap();
        let loss = vr_loss(&p, &st);
        assert!((loss.total() - 1.163).abs() < 1e-3, "{}", loss.total());
        assert!(close(loss.conduction, loss.frequency_dependent(), 1e-9));
        assert!(close(loss.total() * 70.0, 500.0 / 0.86 - 500.0, 1e-9));
    }

    #[test]
    fn vr_loss_edge_cases() {
        let cal = calibrate_losses(&CalibrationAnchors::reference()).unwrap();
        let p = ConverterParams::reference().with_loss(cal.per_vr);
        let off = vr_loss(&p, &ConverterState::off());
        assert_eq!(off.total(), p.p_leak_off);
        assert_eq!(off.leakage, p.p_leak_off);

        let idle = ConverterState::active(&p, 0.0, p.f_nom).unwrap();
        let loss = vr_loss(&p, &idle);
        assert_eq!(loss.total(), p.loss.b_fix);
    }

    #[test]
    fn calibration_rejects_bad_anchors() {
        let mut anchors = CalibrationAnchors::reference();
        anchors.points[1].efficiency = 0.50;
        let e = calibrate_losses(&anchors).unwrap_err();
        assert!(e.to_string().contains("negative"), "{e}");

        let mut two = CalibrationAnchors::reference();
        two.balance_at = None;
        assert!(calibrate_losses(&two).is_err());

        let mut dup = CalibrationAnchors::reference();
        dup.points[1] = dup.points[0];
        let e = calibrate_losses(&dup).unwrap_err();
        assert!(e.to_string().contains("singular"), "{e}");
    }

    #[test]
    fn least_squares_with_consistent_extra_anchor() {
        let cal = calibrate_losses(&CalibrationAnchors::reference()).unwrap();
        let mut anchors = CalibrationAnchors::reference();
        let p = 300.0;
        anchors.points.push(EfficiencyAnchor {
            load_fraction: 0.3,
            efficiency: p / (p + cal.system.loss(p)),
        });
        let fit = calibrate_losses(&anchors).unwrap();
        assert!(close(fit.system.c, cal.system.c, 1e-6));
        assert!(close(fit.system.b, cal.system.b, 1e-6));
    }

    #[test]
    fn validate_rejects_heavy_leakage() {
        let cal = calibrate_losses(&CalibrationAnchors::reference()).unwrap();
        let mut p = ConverterParams::reference().with_loss(cal.per_vr);
        p.p_leak_off = 0.01;
        assert!(p.validate().is_err());
        p.p_leak_off = 1e-3;
        assert!(p.validate().is_ok());
        p.v_in = 0.5;
        assert!(p.validate().is_err());
    }
}
