//! Dimensionless groups and the scaling relations between microscopic and
//! dimensionless parameters.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NondimError {
    #[error("reference quantity `{name}` must be strictly positive, got {value}")]
    InvalidReference { name: &'static str, value: f64 },
}

/// Reference scales for nondimensionalization.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceQuantities {
    /// tau [s]
    pub time_scale: f64,
    /// L [m]
    pub length_scale: f64,
    /// d [m²/s]
    pub diffusivity_scale: f64,
    /// u0 [1/m³]
    pub mobile_conc_scale: f64,
    /// v0 [1/m²]
    pub deposited_conc_scale: f64,
    /// a0 [m/s]
    pub deposition_rate_scale: f64,
}

impl ReferenceQuantities {
    pub fn new(
        time_scale: f64,
        length_scale: f64,
        diffusivity_scale: f64,
        mobile_conc_scale: f64,
        deposited_conc_scale: f64,
        deposition_rate_scale: f64,
    ) -> Result<Self, NondimError> {
        let fields = [
            ("time_scale", time_scale),
            ("length_scale", length_scale),
            ("diffusivity_scale", diffusivity_scale),
            ("mobile_conc_scale", mobile_conc_scale),
            ("deposited_conc_scale", deposited_conc_scale),
            ("deposition_rate_scale", deposition_rate_scale),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(NondimError::InvalidReference { name, value });
            }
        }
        Ok(Self {
            time_scale,
            length_scale,
            diffusivity_scale,
            mobile_conc_scale,
            deposited_conc_scale,
            deposition_rate_scale,
        })
    }

    /// Constructor choosing the diffusive time scale tau = L²/d.
    pub fn diffusive(
        length_scale: f64,
        diffusivity_scale: f64,
        mobile_conc_scale: f64,
        deposited_conc_scale: f64,
        deposition_rate_scale: f64,
    ) -> Result<Self, NondimError> {
        Self::new(
            length_scale * length_scale / diffusivity_scale,
            length_scale,
            diffusivity_scale,
            mobile_conc_scale,
            deposited_conc_scale,
            deposition_rate_scale,
        )
    }

    /// Constructor fixing L := v0/u0, which removes the proportionality
    /// constant in the scaled deposition boundary condition.
    pub fn with_concentration_length(
        diffusivity_scale: f64,
        mobile_conc_scale: f64,
        deposited_conc_scale: f64,
        deposition_rate_scale: f64,
    ) -> Result<Self, NondimError> {
        let length_scale = deposited_conc_scale / mobile_conc_scale;
        Self::diffusive(
            length_scale,
            diffusivity_scale,
            mobile_conc_scale,
            deposited_conc_scale,
            deposition_rate_scale,
        )
    }
}

/// Process regime as read off the dimensionless groups.
///
/// The thresholds (Thiele >= 1e3 for fast reaction, Bi <= 1e-3 for slow
/// deposition) are reporting conveniences, not physics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeReport {
    pub fast_reaction: bool,
    pub slow_deposition: bool,
}

/// The three dimensionless groups of the scaled system.
#[derive(Debug, Clone, Copy)]
pub struct DimensionlessGroups {
    /// Scale ratio / homogenization parameter, epsilon = a0 L / d.
    pub epsilon: f64,
    /// Thiele modulus, Lambda = L² u0 / d.
    pub thiele: f64,
    /// Biot number, Bi = a0 L² u0 / (d v0).
    pub biot: f64,
}

impl DimensionlessGroups {
    pub fn regime(&self) -> RegimeReport {
        RegimeReport {
            fast_reaction: self.thiele >= 1e3,
            slow_deposition: self.biot <= 1e-3,
        }
    }
}

/// Compute epsilon, the Thiele modulus and the Biot number from the
/// reference scales.
pub fn dimensionless_groups(r: &ReferenceQuantities) -> DimensionlessGroups {
    let epsilon = r.deposition_rate_scale * r.length_scale / r.diffusivity_scale;
    let thiele = r.length_scale * r.length_scale * r.mobile_conc_scale / r.diffusivity_scale;
    let biot = r.deposition_rate_scale * r.length_scale * r.length_scale * r.mobile_conc_scale
        / (r.diffusivity_scale * r.deposited_conc_scale);
    DimensionlessGroups {
        epsilon,
        thiele,
        biot,
    }
}

/// Microscopic parameters in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroParams {
    pub diffusivities: Vec<f64>,
    pub deposition_a: Vec<f64>,
    pub deposition_b: Vec<f64>,
    pub mobile: Vec<f64>,
    pub deposited: Vec<f64>,
}

/// Apply the tilde scalings: d/d0, a/a0, b v0/(a0 u0), u/u0, v/v0.
pub fn scale_micro_to_dimensionless(params: &MicroParams, r: &ReferenceQuantities) -> MicroParams {
    let b_scale = r.deposited_conc_scale / (r.deposition_rate_scale * r.mobile_conc_scale);
    MicroParams {
        diffusivities: params
            .diffusivities
            .iter()
            .map(|d| d / r.diffusivity_scale)
            .collect(),
        deposition_a: params
            .deposition_a
            .iter()
            .map(|a| a / r.deposition_rate_scale)
            .collect(),
        deposition_b: params.deposition_b.iter().map(|b| b * b_scale).collect(),
        mobile: params.mobile.iter().map(|u| u / r.mobile_conc_scale).collect(),
        deposited: params
            .deposited
            .iter()
            .map(|v| v / r.deposited_conc_scale)
            .collect(),
    }
}

/// Inverse of [`scale_micro_to_dimensionless`].
pub fn unscale_micro(params: &MicroParams, r: &ReferenceQuantities) -> MicroParams {
    let b_scale = r.deposition_rate_scale * r.mobile_conc_scale / r.deposited_conc_scale;
    MicroParams {
        diffusivities: params
            .diffusivities
            .iter()
            .map(|d| d * r.diffusivity_scale)
            .collect(),
        deposition_a: params
            .deposition_a
            .iter()
            .map(|a| a * r.deposition_rate_scale)
            .collect(),
        deposition_b: params.deposition_b.iter().map(|b| b * b_scale).collect(),
        mobile: params.mobile.iter().map(|u| u * r.mobile_conc_scale).collect(),
        deposited: params
            .deposited
            .iter()
            .map(|v| v * r.deposited_conc_scale)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_scales_give_unit_groups() {
        let r = ReferenceQuantities::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let g = dimensionless_groups(&r);
        assert_eq!(g.epsilon, 1.0);
        assert_eq!(g.thiele, 1.0);
        assert_eq!(g.biot, 1.0);
    }

    #[test]
    fn diffusive_constructor_sets_tau() {
        let r = ReferenceQuantities::diffusive(2.0, 0.5, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(r.time_scale, 8.0);
    }

    #[test]
    fn concentration_length_constructor() {
        let r = ReferenceQuantities::with_concentration_length(1e-9, 1e14, 1e12, 5e-7).unwrap();
        assert!((r.length_scale - 1e-2).abs() < 1e-16);
    }

    #[test]
    fn rejects_nonpositive_scales() {
        assert!(ReferenceQuantities::new(1.0, 0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ReferenceQuantities::new(1.0, 1.0, 1.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn regime_classification() {
        let r = ReferenceQuantities::new(1.0, 1.0, 1.0, 1e6, 1e12, 1e-9).unwrap();
        let g = dimensionless_groups(&r);
        let regime = g.regime();
        assert!(regime.fast_reaction);
        assert!(regime.slow_deposition);
    }

    #[test]
    fn paper_magnitudes_classify_as_fast_reaction_slow_deposition() {
        // Reported magnitudes accepted as regime labels only; the inputs
        // behind them are not published.
        let g = DimensionlessGroups {
            epsilon: 7.61e-7,
            thiele: 3.8934e21,
            biot: 7.6914e-8,
        };
        let regime = g.regime();
        assert!(regime.fast_reaction);
        assert!(regime.slow_deposition);
    }

    #[test]
    fn ladder_scaling_gives_inverse_power_law() {
        let ladder = crate::kinetics::build_ladder(5, 1e-7, 2e-12, 2.5).unwrap();
        let r = ReferenceQuantities::diffusive(0.1, ladder.monomer_diffusivity, 1.0, 1.0, 1.0)
            .unwrap();
        let p = MicroParams {
            diffusivities: ladder.diffusivities.clone(),
            deposition_a: vec![],
            deposition_b: vec![],
            mobile: vec![],
            deposited: vec![],
        };
        let scaled = scale_micro_to_dimensionless(&p, &r);
        for (i, &d) in scaled.diffusivities.iter().enumerate() {
            let expected = ((i + 1) as f64).powf(-1.0 / 2.5);
            assert!((d - expected).abs() / expected < 1e-14);
        }
    }

    proptest! {
        /// Defining identities, including the Bi = eps * (L u0 / v0) relation.
        #[test]
        fn prop_group_identities(
            length in 1e-6_f64..1e3,
            diff in 1e-15_f64..1e-3,
            u0 in 1e3_f64..1e20,
            v0 in 1e3_f64..1e20,
            a0 in 1e-12_f64..1e0,
        ) {
            let r = ReferenceQuantities::diffusive(length, diff, u0, v0, a0).unwrap();
            let g = dimensionless_groups(&r);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
            prop_assert!(rel(g.epsilon, a0 * length / diff) <= 1e-14);
            prop_assert!(rel(g.thiele, length * length * u0 / diff) <= 1e-14);
            prop_assert!(rel(g.biot, a0 * length * length * u0 / (diff * v0)) <= 1e-14);
            prop_assert!(rel(g.biot, g.epsilon * length * u0 / v0) <= 1e-14);
        }

        /// Increasing a0 increases epsilon and Bi and leaves the Thiele
        /// modulus fixed.
        #[test]
        fn prop_regime_monotone_in_a0(
            a0 in 1e-12_f64..1e-2,
            factor in 1.0001_f64..100.0,
        ) {
            let r1 = ReferenceQuantities::diffusive(0.1, 1e-9, 1e14, 1e12, a0).unwrap();
            let r2 = ReferenceQuantities::diffusive(0.1, 1e-9, 1e14, 1e12, a0 * factor).unwrap();
            let g1 = dimensionless_groups(&r1);
            let g2 = dimensionless_groups(&r2);
            prop_assert!(g2.epsilon > g1.epsilon);
            prop_assert!(g2.biot > g1.biot);
            prop_assert_eq!(g1.thiele, g2.thiele);
        }

        /// Round-trip scale -> unscale is the identity to 1e-15 relative.
        #[test]
        fn prop_scaling_roundtrip(
            d in 1e-15_f64..1e-3,
            a in 1e-12_f64..1.0,
            b in 1e-12_f64..1.0,
            u in 0.0_f64..1e20,
            v in 0.0_f64..1e20,
        ) {
            let r = ReferenceQuantities::diffusive(0.1, 1e-9, 1e14, 1e12, 5e-7).unwrap();
            let p = MicroParams {
                diffusivities: vec![d],
                deposition_a: vec![a],
                deposition_b: vec![b],
                mobile: vec![u],
                deposited: vec![v],
            };
            let round = unscale_micro(&scale_micro_to_dimensionless(&p, &r), &r);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
            prop_assert!(rel(round.diffusivities[0], d) <= 1e-15);
            prop_assert!(rel(round.deposition_a[0], a) <= 1e-15);
            prop_assert!(rel(round.deposition_b[0], b) <= 1e-15);
            if u > 0.0 { prop_assert!(rel(round.mobile[0], u) <= 1e-15); }
            if v > 0.0 { prop_assert!(rel(round.deposited[0], v) <= 1e-15); }
        }
    }
}
