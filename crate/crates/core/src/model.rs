//! Rate models for the per-patch demography.
//!
//! A [`RateModel`] carries the per-capita birth and death sequences `b_i`,
//! `d_i` (defined for `i >= 1`), their limits, the per-individual migration
//! rate `gamma`, the per-patch catastrophe rate `nu` and the migrant success
//! probability `rho`.
//!
//! `b_0` is never needed: every place where it would appear is multiplied by
//! the occupancy `0`. [`RateModel::birth`] maps `i = 0` onto `i = 1`, which is
//! only visible through the continuous extension on `[0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizon used when a routine needs the concavity/convexity hypothesis but
/// has no truncation level of its own to scale from.
pub const DEFAULT_H1_HORIZON: usize = 1024;

/// Parametric families of birth and death sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum RateFamily {
    /// `b_i = birth`, `d_i = death` for every `i`.
    Constant { birth: f64, death: f64 },
    /// Explicit prefix `b_1.., d_1..`; beyond the table the declared limits
    /// are used.
    Table {
        birth: Vec<f64>,
        death: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        birth_limit: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        death_limit: Option<f64>,
    },
    /// `b_i = b0`, `d_i = d0 + delta (i - 1) / i`, so `d_inf = d0 + delta`.
    LogisticDeath { b0: f64, d0: f64, delta: f64 },
}

/// On-disk model description: `{family, params, gamma, nu, rho}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub family: RateFamily,
    pub gamma: f64,
    pub nu: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(format!("malformed model JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn build(&self) -> Result<RateModel> {
        build_rate_model(self.family.clone(), self.gamma, self.nu, self.rho)
    }
}

/// Immutable, validated rate model.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    family: RateFamily,
    gamma: f64,
    nu: f64,
    rho: f64,
    // Extra death rate folded in by `normalize_rho`.
    death_shift: f64,
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidModel(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Validates `family` and the migration/catastrophe parameters.
pub fn build_rate_model(family: RateFamily, gamma: f64, nu: f64, rho: f64) -> Result<RateModel> {
    match &family {
        RateFamily::Constant { birth, death } => {
            check_rate("birth", *birth)?;
            check_rate("death", *death)?;
        }
        RateFamily::Table { birth, death, birth_limit, death_limit } => {
            let (Some(bl), Some(dl)) = (birth_limit, death_limit) else {
                return Err(Error::InvalidModel(
                    "table family requires both birth_limit and death_limit".into(),
                ));
            };
            check_rate("birth_limit", *bl)?;
            check_rate("death_limit", *dl)?;
            for (i, v) in birth.iter().enumerate() {
                check_rate(&format!("birth[{}]", i + 1), *v)?;
            }
            for (i, v) in death.iter().enumerate() {
                check_rate(&format!("death[{}]", i + 1), *v)?;
            }
        }
        RateFamily::LogisticDeath { b0, d0, delta } => {
            check_rate("b0", *b0)?;
            check_rate("d0", *d0)?;
            check_rate("delta", *delta)?;
        }
    }
    check_rate("gamma", gamma)?;
    check_rate("nu", nu)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidModel(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(RateModel { family, gamma, nu, rho, death_shift: 0.0 })
}

impl RateModel {
    pub fn family(&self) -> &RateFamily {
        &self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_normalized(&self) -> bool {
        self.rho == 1.0
    }

    /// Per-capita birth rate `b_i`; `i = 0` is treated as `i = 1`.
    pub fn birth(&self, i: usize) -> f64 {
        let i = i.max(1);
        match &self.family {
            RateFamily::Constant { birth, .. } => *birth,
            RateFamily::Table { birth, birth_limit, .. } => {
                birth.get(i - 1).copied().unwrap_or_else(|| birth_limit.unwrap_or(0.0))
            }
            RateFamily::LogisticDeath { b0, .. } => *b0,
        }
    }

    /// Per-capita death rate `d_i`; `i = 0` is treated as `i = 1`.
    pub fn death(&self, i: usize) -> f64 {
        let i = i.max(1);
        let base = match &self.family {
            RateFamily::Constant { death, .. } => *death,
            RateFamily::Table { death, death_limit, .. } => {
                death.get(i - 1).copied().unwrap_or_else(|| death_limit.unwrap_or(0.0))
            }
            RateFamily::LogisticDeath { d0, delta, .. } => {
                let x = i as f64;
                d0 + delta * (x - 1.0) / x
            }
        };
        base + self.death_shift
    }

    /// Total birth rate `i b_i` of a patch with `i` individuals.
    #[inline]
    pub fn total_birth(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            i as f64 * self.birth(i)
        }
    }

    /// Total death rate `i d_i` of a patch with `i` individuals.
    #[inline]
    pub fn total_death(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            i as f64 * self.death(i)
        }
    }

    pub fn b_inf(&self) -> f64 {
        match &self.family {
            RateFamily::Constant { birth, .. } => *birth,
            RateFamily::Table { birth_limit, .. } => birth_limit.unwrap_or(0.0),
            RateFamily::LogisticDeath { b0, .. } => *b0,
        }
    }

    pub fn d_inf(&self) -> f64 {
        let base = match &self.family {
            RateFamily::Constant { death, .. } => *death,
            RateFamily::Table { death_limit, .. } => death_limit.unwrap_or(0.0),
            RateFamily::LogisticDeath { d0, delta, .. } => d0 + delta,
        };
        base + self.death_shift
    }

    /// Copy of the model with a different catastrophe rate.
    pub fn with_nu(&self, nu: f64) -> Result<RateModel> {
        check_rate("nu", nu)?;
        Ok(RateModel { nu, ..self.clone() })
    }

    /// Copy of the model with a different migration rate.
    pub fn with_gamma(&self, gamma: f64) -> Result<RateModel> {
        check_rate("gamma", gamma)?;
        Ok(RateModel { gamma, ..self.clone() })
    }

    pub(crate) fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "expected a model with rho = 1, got rho = {}; call normalize_rho first",
                self.rho
            )))
        }
    }
}

/// Which part of the concavity/convexity hypothesis failed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H1Violation {
    BirthDecreasing,
    BirthNotConcave,
    DeathDecreasing,
    DeathNotConvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Check {
    pub holds: bool,
    pub first_violation_index: Option<usize>,
    pub violation: Option<H1Violation>,
    pub n_checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H2Check {
    pub holds: bool,
    /// `d_inf + gamma (1 - rho) + nu - b_inf`.
    pub margin: f64,
    /// `nu + d_inf - b_inf`, the same quantity without the migration loss.
    pub a: f64,
}

/// Combined outcome of both hypothesis checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1_holds: bool,
    pub h2_holds: bool,
    pub first_violation_index: Option<usize>,
    pub violation: Option<H1Violation>,
    pub margin: f64,
    pub a: f64,
    pub n_checked: usize,
}

impl HypothesisReport {
    pub fn all_hold(&self) -> bool {
        self.h1_holds && self.h2_holds
    }
}

fn slack(a: f64, b: f64, c: f64) -> f64 {
    1e-12 * (1.0 + a.abs() + b.abs() + c.abs())
}

/// Checks that `i b_i` is nondecreasing and concave and `i d_i` is
/// nondecreasing and convex, using first differences `f_{i+1} - f_i` and
/// centred second differences `f_{i-1} - 2 f_i + f_{i+1}` for
/// `1 <= i <= n_check`, with `f_0 = 0`.
///
/// `n_check` values below 3 are raised to 3.
pub fn check_h1(model: &RateModel, n_check: usize) -> H1Check {
    let n_check = n_check.max(3);
    let fb: Vec<f64> = (0..=n_check + 1).map(|i| model.total_birth(i)).collect();
    let fd: Vec<f64> = (0..=n_check + 1).map(|i| model.total_death(i)).collect();
    for i in 1..=n_check {
        let (b0, b1, b2) = (fb[i - 1], fb[i], fb[i + 1]);
        let (d0, d1, d2) = (fd[i - 1], fd[i], fd[i + 1]);
        let violation = if b2 - b1 < -slack(b1, b2, 0.0) {
            Some(H1Violation::BirthDecreasing)
        } else if b0 - 2.0 * b1 + b2 > slack(b0, b1, b2) {
            Some(H1Violation::BirthNotConcave)
        } else if d2 - d1 < -slack(d1, d2, 0.0) {
            Some(H1Violation::DeathDecreasing)
        } else if d0 - 2.0 * d1 + d2 < -slack(d0, d1, d2) {
            Some(H1Violation::DeathNotConvex)
        } else {
            None
        };
        if violation.is_some() {
            return H1Check {
                holds: false,
                first_violation_index: Some(i),
                violation,
                n_checked: n_check,
            };
        }
    }
    H1Check { holds: true, first_violation_index: None, violation: None, n_checked: n_check }
}

pub fn check_h2(model: &RateModel) -> H2Check {
    let margin = model.d_inf() + model.gamma() * (1.0 - model.rho()) + model.nu() - model.b_inf();
    let a = model.nu() + model.d_inf() - model.b_inf();
    H2Check { holds: margin > 0.0, margin, a }
}

pub fn check_hypotheses(model: &RateModel, n_check: usize) -> HypothesisReport {
    let h1 = check_h1(model, n_check);
    let h2 = check_h2(model);
    HypothesisReport {
        h1_holds: h1.holds,
        h2_holds: h2.holds,
        first_violation_index: h1.first_violation_index,
        violation: h1.violation,
        margin: h2.margin,
        a: h2.a,
        n_checked: h1.n_checked,
    }
}

/// Folds unsuccessful migration into death: `d'_i = d_i + gamma (1 - rho)`,
/// `gamma' = gamma rho`, `rho' = 1`.
pub fn normalize_rho(model: &RateModel) -> RateModel {
    if model.is_normalized() {
        return model.clone();
    }
    RateModel {
        family: model.family.clone(),
        gamma: model.gamma * model.rho,
        nu: model.nu,
        rho: 1.0,
        death_shift: model.death_shift + model.gamma * (1.0 - model.rho),
    }
}

/// Continuous extensions `b(x)`, `d(x)` of the rate sequences.
///
/// `x b(x)` and `x d(x)` are the piecewise-linear interpolants of `i b_i` and
/// `i d_i` through the integer nodes; on `[0, 1)` the rates are held at
/// `b_1`, `d_1`, which keeps `x b(x)` linear through the origin.
#[derive(Debug, Clone)]
pub struct ContinuousRates {
    model: RateModel,
}

// beyond this the interpolation nodes are no longer exactly representable
const INTERP_CAP: f64 = 4.0e15;

impl ContinuousRates {
    fn interpolate(&self, x: f64, total: impl Fn(usize) -> f64, limit: f64, first: f64) -> f64 {
        if x < 1.0 {
            return first;
        }
        if x >= INTERP_CAP || !x.is_finite() {
            return limit;
        }
        let lo = x.floor();
        let w = x - lo;
        let lo_i = lo as usize;
        if w == 0.0 {
            return total(lo_i) / x;
        }
        ((1.0 - w) * total(lo_i) + w * total(lo_i + 1)) / x
    }

    pub fn birth(&self, x: f64) -> f64 {
        let m = &self.model;
        self.interpolate(x, |i| m.total_birth(i), m.b_inf(), m.birth(1))
    }

    pub fn death(&self, x: f64) -> f64 {
        let m = &self.model;
        self.interpolate(x, |i| m.total_death(i), m.d_inf(), m.death(1))
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }
}

/// Builds the continuous extension; requires the concavity hypothesis on
/// [`DEFAULT_H1_HORIZON`].
pub fn continuous_extension(model: &RateModel) -> Result<ContinuousRates> {
    let h1 = check_h1(model, DEFAULT_H1_HORIZON);
    if !h1.holds {
        return Err(Error::InvalidModel(format!(
            "concavity/convexity hypothesis fails at index {:?} ({:?})",
            h1.first_violation_index, h1.violation
        )));
    }
    Ok(ContinuousRates { model: model.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(b: f64, d: f64, gamma: f64, nu: f64, rho: f64) -> RateModel {
        build_rate_model(RateFamily::Constant { birth: b, death: d }, gamma, nu, rho).unwrap()
    }

    fn logistic() -> RateModel {
        build_rate_model(RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 }, 1.0, 0.5, 1.0)
            .unwrap()
    }

    fn ricker() -> RateModel {
        let birth = (1..=40).map(|i| 2.0 * (-(i as f64)).exp()).collect();
        build_rate_model(
            RateFamily::Table {
                birth,
                death: vec![1.0],
                birth_limit: Some(0.0),
                death_limit: Some(1.0),
            },
            1.0,
            0.5,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_family() {
        let m = constant(1.0, 2.0, 1.0, 0.0, 1.0);
        for i in 1..20 {
            assert_eq!(m.birth(i), 1.0);
            assert_eq!(m.death(i), 2.0);
        }
        assert_eq!(m.b_inf(), 1.0);
        assert_eq!(m.d_inf(), 2.0);
    }

    #[test]
    fn logistic_family() {
        let m = logistic();
        for i in 1..50 {
            let x = i as f64;
            assert!((m.death(i) - (1.0 + 3.0 * (x - 1.0) / x)).abs() < 1e-15);
        }
        assert_eq!(m.d_inf(), 4.0);
    }

    #[test]
    fn table_without_limits_is_rejected() {
        let err = build_rate_model(
            RateFamily::Table {
                birth: vec![2.0, 1.5, 1.2],
                death: vec![1.0, 1.1],
                birth_limit: None,
                death_limit: None,
            },
            1.0,
            0.0,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn negative_rates_are_rejected() {
        let err = build_rate_model(RateFamily::Constant { birth: -1.0, death: 1.0 }, 1.0, 0.0, 1.0);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let err = build_rate_model(RateFamily::Constant { birth: 1.0, death: 1.0 }, 1.0, -0.1, 1.0);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let err = build_rate_model(RateFamily::Constant { birth: 1.0, death: 1.0 }, 1.0, 0.1, 1.5);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn h1_cases() {
        assert!(check_h1(&logistic(), 100).holds);
        assert!(check_h1(&constant(1.0, 2.0, 1.0, 0.0, 1.0), 100).holds);
        let r = check_h1(&ricker(), 30);
        assert!(!r.holds);
        assert_eq!(r.first_violation_index, Some(1));
        assert_eq!(r.violation, Some(H1Violation::BirthDecreasing));
    }

    #[test]
    fn ricker_totals_match_hand_values() {
        let m = ricker();
        let expect = [0.7358, 0.5413, 0.2987];
        for (i, e) in expect.iter().enumerate() {
            assert!((m.total_birth(i + 1) - e).abs() < 1e-4);
        }
    }

    #[test]
    fn convex_death_violation_is_located() {
        // i d_i = 1, 4, 5: concave bend at i = 2
        let m = build_rate_model(
            RateFamily::Table {
                birth: vec![1.0],
                death: vec![1.0, 2.0, 5.0 / 3.0],
                birth_limit: Some(1.0),
                death_limit: Some(2.0),
            },
            1.0,
            0.0,
            1.0,
        )
        .unwrap();
        let r = check_h1(&m, 10);
        assert!(!r.holds);
        assert_eq!(r.violation, Some(H1Violation::DeathNotConvex));
        assert_eq!(r.first_violation_index, Some(2));
    }

    #[test]
    fn h2_cases() {
        let m = constant(1.0, 1.0, 0.5, 0.5, 1.0);
        let r = check_h2(&m);
        assert!(r.holds);
        assert!((r.margin - 0.5).abs() < 1e-15);

        let m = constant(2.0, 1.0, 1.0, 0.5, 1.0);
        let r = check_h2(&m);
        assert!(!r.holds);
        assert!((r.margin + 0.5).abs() < 1e-15);

        let r = check_h2(&logistic());
        assert!(r.holds);
        assert!((r.margin - 1.5).abs() < 1e-15);
        assert!((r.a - 1.5).abs() < 1e-15);
    }

    #[test]
    fn normalization_cases() {
        let m = constant(1.0, 1.0, 2.0, 0.0, 0.5);
        let n = normalize_rho(&m);
        assert_eq!(n.rho(), 1.0);
        assert_eq!(n.gamma(), 1.0);
        assert_eq!(n.death(3), 2.0);
        assert_eq!(n.d_inf(), 2.0);

        let l = logistic();
        assert_eq!(normalize_rho(&l), l);

        let m = constant(1.0, 1.0, 1.0, 0.0, 0.0);
        let n = normalize_rho(&m);
        assert_eq!(n.gamma(), 0.0);
        assert_eq!(n.death(1), 2.0);
    }

    #[test]
    fn extension_hand_values() {
        let c = continuous_extension(&constant(1.0, 2.0, 1.0, 0.0, 1.0)).unwrap();
        for x in [0.1, 0.5, 1.0, 1.7, 9.25, 1e6] {
            assert!((c.birth(x) - 1.0).abs() < 1e-12);
            assert!((c.death(x) - 2.0).abs() < 1e-12);
        }
        let l = continuous_extension(&logistic()).unwrap();
        assert!((l.death(1.5) - 2.0).abs() < 1e-14);
        for i in 1..=50 {
            assert!((l.birth(i as f64) - logistic().birth(i)).abs() < 1e-14);
            assert!((l.death(i as f64) - logistic().death(i)).abs() < 1e-14);
        }
        assert!(continuous_extension(&ricker()).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"family":"logistic_death","params":{"b0":3,"d0":1,"delta":3},"gamma":1,"nu":0.5,"rho":1}"#;
        let spec = ModelSpec::from_json(text).unwrap();
        assert_eq!(spec.family, RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 });
        let again = ModelSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, again);
        assert_eq!(spec.build().unwrap(), logistic());

        let table = r#"{"family":"table","params":{"birth":[2,1.5],"death":[1]},"gamma":1,"nu":0}"#;
        let spec = ModelSpec::from_json(table).unwrap();
        assert!(matches!(spec.build(), Err(Error::InvalidModel(_))));
        assert!(ModelSpec::from_json("{\"family\":\"nope\"}").is_err());
    }
}
