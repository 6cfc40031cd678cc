//! Sufficient regularity conditions relating Matérn prior smoothness to the
//! smoothness of the functions they target.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    fn strict(label: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            label: label.to_string(),
            lhs,
            rhs,
            holds: lhs > rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityCheck {
    pub parametrization: String,
    pub inequalities: Vec<Inequality>,
    pub all_hold: bool,
}

impl RegularityCheck {
    fn new(parametrization: &str, inequalities: Vec<Inequality>) -> Self {
        let all_hold = inequalities.iter().all(|i| i.holds);
        Self {
            parametrization: parametrization.to_string(),
            inequalities,
            all_hold,
        }
    }
}

/// Conditions for the `(β, m)` parametrization with Matérn priors of
/// regularity `α₁`, `α₂` on truths of smoothness `α₀₁`, `α₀₂`.
pub fn beta_m_conditions(
    alpha1: f64,
    alpha01: f64,
    alpha2: f64,
    alpha02: f64,
    dw: usize,
) -> RegularityCheck {
    let d = dw as f64;
    RegularityCheck::new(
        "beta-m",
        vec![
            Inequality::strict("alpha1 > d_w/2", alpha1, d / 2.0),
            Inequality::strict(
                "alpha01 > alpha1/2 + d_w/4",
                alpha01,
                alpha1 / 2.0 + d / 4.0,
            ),
            Inequality::strict("alpha2 > d_w/2", alpha2, d / 2.0),
            Inequality::strict(
                "alpha02 > alpha2/2 + d_w/4",
                alpha02,
                alpha2 / 2.0 + d / 4.0,
            ),
        ],
    )
}

/// Conditions for the `(β, η)` parametrization with a Matérn prior of
/// regularity `α_η`; the last one couples the prior to `m₀₂`.
pub fn beta_eta_conditions(
    alpha_eta: f64,
    alpha0_eta: f64,
    alpha02: f64,
    dw: usize,
) -> RegularityCheck {
    let d = dw as f64;
    let bar = alpha_eta / 2.0 + d / 4.0;
    RegularityCheck::new(
        "beta-eta",
        vec![
            Inequality::strict("alpha_eta > d_w/2", alpha_eta, d / 2.0),
            Inequality::strict("alpha0_eta > alpha_eta/2 + d_w/4", alpha0_eta, bar),
            Inequality::strict("alpha02 > alpha_eta/2 + d_w/4", alpha02, bar),
        ],
    )
}
