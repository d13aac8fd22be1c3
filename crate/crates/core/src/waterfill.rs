//! Sum-capacity power allocation over OFDM subcarriers.
//!
//! The solver is the exact sorted active-set form of water-filling:
//! `p_k = max(0, μ − 1/c_k)` with `μ` fixed by `Σ p_k = P`. The validator
//! checks a proposed allocation (for instance one parsed from a model's
//! `ALLOCATION:` line) against the solver by capacity gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Carrier-to-noise ratio per unit power, `c_k = g_k / σ²` (1/mW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SubcarrierCnrs(Vec<f64>);

impl SubcarrierCnrs {
    pub fn new(cnrs: Vec<f64>) -> Result<Self> {
        if cnrs.is_empty() {
            return Err(Error::invalid("at least one subcarrier is required"));
        }
        if let Some(bad) = cnrs.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::invalid(format!("CNR must be positive and finite, got {bad}")));
        }
        Ok(SubcarrierCnrs(cnrs))
    }

    /// Builds CNRs from channel power gains and a common noise power.
    pub fn from_gains(gains: &[f64], noise_mw: f64) -> Result<Self> {
        Self::new(gains.iter().map(|g| g / noise_mw).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SubcarrierCnrs {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SubcarrierCnrs::new(v)
    }
}

impl From<SubcarrierCnrs> for Vec<f64> {
    fn from(c: SubcarrierCnrs) -> Vec<f64> {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PowerBudget(f64);

impl PowerBudget {
    pub fn new(total_mw: f64) -> Result<Self> {
        if total_mw.is_finite() && total_mw > 0.0 {
            Ok(PowerBudget(total_mw))
        } else {
            Err(Error::invalid(format!("power budget must be positive and finite, got {total_mw}")))
        }
    }

    pub fn total_mw(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PowerBudget {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        PowerBudget::new(v)
    }
}

impl From<PowerBudget> for f64 {
    fn from(b: PowerBudget) -> f64 {
        b.0
    }
}

/// Solution file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub powers_mw: Vec<f64>,
    #[serde(rename = "water_level_mw")]
    pub water_level: f64,
    pub capacity_bits: f64,
}

/// Problem file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub cnrs: SubcarrierCnrs,
    pub budget_mw: PowerBudget,
}

/// `Σ log2(1 + p_k c_k)`.
pub fn capacity(powers: &[f64], cnrs: &SubcarrierCnrs) -> Result<f64> {
    if powers.len() != cnrs.len() {
        return Err(Error::LengthMismatch {
            expected: cnrs.len(),
            actual: powers.len(),
        });
    }
    Ok(capacity_unchecked(powers, cnrs.as_slice()))
}

fn capacity_unchecked(powers: &[f64], cnrs: &[f64]) -> f64 {
    powers
        .iter()
        .zip(cnrs)
        .map(|(p, c)| (p * c).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

pub fn waterfill(cnrs: &SubcarrierCnrs, budget: PowerBudget) -> Allocation {
    let inv: Vec<f64> = cnrs.as_slice().iter().map(|c| 1.0 / c).collect();
    let mut order: Vec<usize> = (0..inv.len()).collect();
    order.sort_by(|&a, &b| inv[a].total_cmp(&inv[b]).then(a.cmp(&b)));

    // Grow the active set in order of increasing 1/c while the next
    // subcarrier's floor lies strictly below the implied water level.
    let total = budget.total_mw();
    let mut active = 1;
    let mut floor_sum = inv[order[0]];
    let mut level = total + floor_sum;
    while active < order.len() {
        let next = inv[order[active]];
        if next >= level {
            break;
        }
        floor_sum += next;
        active += 1;
        level = (total + floor_sum) / active as f64;
    }

    let mut powers = vec![0.0; inv.len()];
    for &k in &order[..active] {
        powers[k] = (level - inv[k]).max(0.0);
    }
    let capacity_bits = capacity_unchecked(&powers, cnrs.as_slice());
    Allocation {
        powers_mw: powers,
        water_level: level,
        capacity_bits,
    }
}

/// Optimality certificate. Tolerances scale with `max(1, ·)` of the
/// quantity compared, so instances with large floors are not penalised
/// for rounding.
pub fn kkt_check(alloc: &Allocation, cnrs: &SubcarrierCnrs, budget: PowerBudget, tol: f64) -> bool {
    let p = &alloc.powers_mw;
    if p.len() != cnrs.len() || p.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let total = budget.total_mw();
    let spent: f64 = p.iter().sum();
    if (spent - total).abs() > tol * total.max(1.0) {
        return false;
    }
    if p.iter().any(|&v| v < -tol) {
        return false;
    }

    let inv: Vec<f64> = cnrs.as_slice().iter().map(|c| 1.0 / c).collect();
    let levels: Vec<f64> = p
        .iter()
        .zip(&inv)
        .filter(|(pk, _)| **pk > tol)
        .map(|(pk, ik)| pk + ik)
        .collect();
    if levels.is_empty() {
        return false;
    }
    let mu = levels.iter().sum::<f64>() / levels.len() as f64;
    let slack = tol * mu.max(1.0);
    if levels.iter().any(|l| (l - mu).abs() > slack) {
        return false;
    }
    p.iter()
        .zip(&inv)
        .filter(|(pk, _)| **pk <= tol)
        .all(|(_, ik)| *ik >= mu - slack)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    Nonnegativity { index: usize, value: f64 },
    Budget { spent_mw: f64, budget_mw: f64 },
    NonFinite { index: usize },
}

impl Violation {
    pub fn magnitude(&self) -> f64 {
        match *self {
            Violation::Nonnegativity { value, .. } => -value,
            Violation::Budget { spent_mw, budget_mw } => (spent_mw - budget_mw).abs(),
            Violation::NonFinite { .. } => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Optimal,
    Suboptimal { gap_bits: f64 },
    Infeasible { violation: Violation },
}

/// Grades an externally proposed power vector against the internal solver.
pub fn validate_external_solution(
    proposed: &[f64],
    cnrs: &SubcarrierCnrs,
    budget: PowerBudget,
    tol: f64,
) -> Result<Verdict> {
    if proposed.len() != cnrs.len() {
        return Err(Error::LengthMismatch {
            expected: cnrs.len(),
            actual: proposed.len(),
        });
    }
    if let Some(index) = proposed.iter().position(|v| !v.is_finite()) {
        return Ok(Verdict::Infeasible {
            violation: Violation::NonFinite { index },
        });
    }
    if let Some((index, &value)) = proposed.iter().enumerate().find(|(_, v)| **v < -tol) {
        return Ok(Verdict::Infeasible {
            violation: Violation::Nonnegativity { index, value },
        });
    }
    let total = budget.total_mw();
    let spent: f64 = proposed.iter().sum();
    if (spent - total).abs() > tol * total.max(1.0) {
        return Ok(Verdict::Infeasible {
            violation: Violation::Budget {
                spent_mw: spent,
                budget_mw: total,
            },
        });
    }
    let clamped: Vec<f64> = proposed.iter().map(|v| v.max(0.0)).collect();
    let gap = waterfill(cnrs, budget).capacity_bits - capacity_unchecked(&clamped, cnrs.as_slice());
    if gap <= tol {
        Ok(Verdict::Optimal)
    } else {
        Ok(Verdict::Suboptimal { gap_bits: gap })
    }
}

/// Equal split of the budget across all subcarriers.
pub fn uniform_allocation(cnrs: &SubcarrierCnrs, budget: PowerBudget) -> Vec<f64> {
    vec![budget.total_mw() / cnrs.len() as f64; cnrs.len()]
}

/// Checks a batch of instances, in parallel when the feature is enabled.
pub fn kkt_check_batch(instances: &[(SubcarrierCnrs, PowerBudget)], tol: f64) -> Vec<bool> {
    let check = |(c, b): &(SubcarrierCnrs, PowerBudget)| kkt_check(&waterfill(c, *b), c, *b, tol);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        instances.par_iter().map(check).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        instances.iter().map(check).collect()
    }
}
