//! Transfer when the source is known to be one of two non-commuting qubit
//! states `ρ`, `χ` related by `ρ₁₁ χ₁₂ = χ₁₁ ρ₁₂`.
//!
//! Exact transfer of the diagonal element on both states still wipes the
//! memory on `λ₁₂`; exact transfer of the off-diagonal element does not force
//! a complete loss.

use serde::Serialize;
use thiserror::Error;

use crate::channel::ChannelSpec;
use crate::constraints::{
    check_constraint, sample_satisfying_channel, structural_zero_report, ConstraintError,
    ConstraintKind, SamplerConfig, TransferConstraint,
};
use crate::memory::memory_table;
use crate::optimizer::{maximize_memory, OptError, OptResult, OptimizerConfig};
use crate::qcore::{frobenius_norm, ComplexMatrix, DensityMatrix};

pub const CASTRO_TOL: f64 = 1e-12;
pub const DISTINCT_TOL: f64 = 1e-9;
pub const TWO_STATE_RESIDUAL_TOL: f64 = 1e-10;
pub const THEOREM_TOL: f64 = 1e-7;
/// Memory a counterexample channel has to exhibit.
pub const COUNTEREXAMPLE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("states must be 2x2, got {0}x{0}")]
    NotQubit(usize),
    #[error("rho_11 chi_12 != chi_11 rho_12 (residual {0:e})")]
    CastroViolated(f64),
    #[error("states commute: ||[rho, chi]|| = {0:e}")]
    StatesCommute(f64),
    #[error("degenerate states: {0}")]
    DegenerateStates(&'static str),
    #[error("channel {index} does not transfer the diagonal element on both states (residual {residual:e})")]
    Precondition { index: usize, residual: f64 },
}

fn commutator_norm(rho: &DensityMatrix, chi: &DensityMatrix) -> f64 {
    let (r, c) = (rho.matrix(), chi.matrix());
    frobenius_norm(&(r * c - c * r))
}

/// Checks `ρ ≠ χ`, `[ρ, χ] ≠ 0`, `ρ₁₁ χ₁₂ = χ₁₁ ρ₁₂`, `ρ₁₁ ≠ χ₁₁` and `ρ₁₂ ≠ χ₁₂`,
/// in that order.
pub fn castro_conditions(rho: &DensityMatrix, chi: &DensityMatrix) -> Result<(), ScenarioError> {
    for s in [rho, chi] {
        if s.dim() != 2 {
            return Err(ScenarioError::NotQubit(s.dim()));
        }
    }
    if frobenius_norm(&(rho.matrix() - chi.matrix())) <= DISTINCT_TOL {
        return Err(ScenarioError::DegenerateStates("rho = chi"));
    }
    let comm = commutator_norm(rho, chi);
    if comm <= DISTINCT_TOL {
        return Err(ScenarioError::StatesCommute(comm));
    }
    let castro = (rho.get(0, 0) * chi.get(0, 1) - chi.get(0, 0) * rho.get(0, 1)).norm();
    if castro > CASTRO_TOL {
        return Err(ScenarioError::CastroViolated(castro));
    }
    if (rho.get(0, 0) - chi.get(0, 0)).norm() <= DISTINCT_TOL {
        return Err(ScenarioError::DegenerateStates("rho_11 = chi_11"));
    }
    if (rho.get(0, 1) - chi.get(0, 1)).norm() <= DISTINCT_TOL {
        return Err(ScenarioError::DegenerateStates("rho_12 = chi_12"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStateSetup {
    rho: DensityMatrix,
    chi: DensityMatrix,
    castro_residual: f64,
    commutator_norm: f64,
}

impl TwoStateSetup {
    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn chi(&self) -> &DensityMatrix {
        &self.chi
    }

    pub fn castro_residual(&self) -> f64 {
        self.castro_residual
    }

    pub fn commutator_norm(&self) -> f64 {
        self.commutator_norm
    }

    pub fn diagonal_constraint(&self) -> TransferConstraint {
        TransferConstraint::new(
            2,
            ConstraintKind::TwoStateDiagonal {
                rho: self.rho.clone(),
                chi: self.chi.clone(),
                a: 0,
            },
        )
        .expect("setup already validated")
    }

    pub fn nondiagonal_constraint(&self) -> TransferConstraint {
        TransferConstraint::new(
            2,
            ConstraintKind::TwoStateNondiagonal {
                rho: self.rho.clone(),
                chi: self.chi.clone(),
                a: 0,
                b: 1,
            },
        )
        .expect("setup already validated")
    }
}

pub fn make_two_state_setup(rho: DensityMatrix, chi: DensityMatrix) -> Result<TwoStateSetup, ScenarioError> {
    castro_conditions(&rho, &chi)?;
    Ok(TwoStateSetup {
        castro_residual: (rho.get(0, 0) * chi.get(0, 1) - chi.get(0, 0) * rho.get(0, 1)).norm(),
        commutator_norm: commutator_norm(&rho, &chi),
        rho,
        chi,
    })
}

/// `ρ = [[1/2, 1/8], [1/8, 1/2]]`, `χ = [[1/4, 1/16], [1/16, 3/4]]`.
pub fn example_setup() -> TwoStateSetup {
    let real = |v: [f64; 4]| {
        let m = ComplexMatrix::from_row_slice(2, 2, &v.map(|x| num_complex::Complex64::new(x, 0.0)));
        crate::qcore::validate_density(&m).expect("example state is valid")
    };
    make_two_state_setup(real([0.5, 0.125, 0.125, 0.5]), real([0.25, 0.0625, 0.0625, 0.75]))
        .expect("example satisfies the two-state conditions")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStateDiagonalReport {
    pub channels: usize,
    pub max_constraint_residual: f64,
    /// max over channels of ‖Θ₁₂‖
    pub max_memory_12: f64,
    /// max over channels of ‖c^2_k1‖, ‖c^1_k2‖
    pub max_structural_zero: f64,
}

impl TwoStateDiagonalReport {
    pub fn theorem_holds(&self) -> bool {
        self.max_memory_12 <= THEOREM_TOL
    }
}

/// Memory on `λ₁₂` for channels that transfer `λ₁₁` exactly on both states.
pub fn verify_two_state_diagonal_theorem(
    setup: &TwoStateSetup,
    channels: &[ChannelSpec],
) -> Result<TwoStateDiagonalReport, ConstraintError> {
    let tc = setup.diagonal_constraint();
    let mut rep = TwoStateDiagonalReport {
        channels: channels.len(),
        max_constraint_residual: 0.0,
        max_memory_12: 0.0,
        max_structural_zero: 0.0,
    };
    for (index, ch) in channels.iter().enumerate() {
        let residual = check_constraint(ch, &tc)?;
        if residual > TWO_STATE_RESIDUAL_TOL {
            return Err(ScenarioError::Precondition { index, residual }.into());
        }
        rep.max_constraint_residual = rep.max_constraint_residual.max(residual);
        rep.max_memory_12 = rep.max_memory_12.max(memory_table(ch).entry(0, 1));
        rep.max_structural_zero = rep
            .max_structural_zero
            .max(structural_zero_report(ch, &tc)?.max_norm());
    }
    Ok(rep)
}

/// `count` channels per ancilla dimension in `dcs` satisfying the two-state
/// diagonal constraint, seeds `seed, seed + 1, …`.
pub fn sample_two_state_diagonal_channels(
    setup: &TwoStateSetup,
    count: usize,
    dcs: &[usize],
    seed: u64,
) -> Result<Vec<ChannelSpec>, ConstraintError> {
    let tc = setup.diagonal_constraint();
    let mut out = Vec::with_capacity(count * dcs.len());
    for &dc in dcs {
        for i in 0..count {
            let cfg = SamplerConfig {
                dc,
                seed: seed + i as u64,
                ..SamplerConfig::default()
            };
            out.push(sample_satisfying_channel(&tc, &cfg)?);
        }
    }
    Ok(out)
}

/// Largest `‖Θ₁₂‖` among channels transferring `λ₁₂` exactly on both states.
pub fn search_two_state_nondiagonal_counterexample(
    setup: &TwoStateSetup,
    cfg: &OptimizerConfig,
) -> Result<OptResult, OptError> {
    maximize_memory(&setup.nondiagonal_constraint(), (0, 1), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::validate_density;
    use num_complex::Complex64;

    fn diag(a: f64) -> DensityMatrix {
        let m = ComplexMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(a, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0 - a, 0.0)],
        );
        validate_density(&m).unwrap()
    }

    #[test]
    fn example_setup_is_valid() {
        let s = example_setup();
        assert!(s.castro_residual() <= 1e-15);
        assert!(s.commutator_norm() > 1e-3);
    }

    #[test]
    fn rejects_degenerate_and_commuting_states() {
        let s = example_setup();
        assert!(matches!(
            make_two_state_setup(s.rho().clone(), s.rho().clone()),
            Err(ScenarioError::DegenerateStates(_))
        ));
        assert!(matches!(
            make_two_state_setup(diag(0.3), diag(0.6)),
            Err(ScenarioError::StatesCommute(_))
        ));
        assert!(matches!(
            make_two_state_setup(s.rho().clone(), crate::qcore::sample_density(2, 1)),
            Err(ScenarioError::CastroViolated(_))
        ));
    }

    #[test]
    fn swap_is_a_zero_memory_witness() {
        let s = example_setup();
        let swap = ChannelSpec::swap(2);
        let rep = verify_two_state_diagonal_theorem(&s, std::slice::from_ref(&swap)).unwrap();
        assert_eq!(rep.max_memory_12, 0.0);
        assert_eq!(check_constraint(&swap, &s.nondiagonal_constraint()).unwrap(), 0.0);
    }

    #[test]
    fn identity_violates_precondition() {
        let s = example_setup();
        assert!(matches!(
            verify_two_state_diagonal_theorem(&s, &[ChannelSpec::identity(2)]),
            Err(ConstraintError::TwoState(ScenarioError::Precondition { index: 0, .. }))
        ));
    }
}
