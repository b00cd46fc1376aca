//! Path loss, per-subchannel SINR, EESM reception and the interference
//! exclusion radius.

use crate::params::ScenarioConfig;

/// Linear gain `(A r)^-beta`. Panics on `r <= 0`.
pub fn pathloss(r: f64, cfg: &ScenarioConfig) -> f64 {
    assert!(r > 0.0, "distance must be positive, got {r}");
    (cfg.pathloss_a * r).powf(-cfg.pathloss_beta)
}

/// Power received at distance `r` from a transmitter, spread over its `M`
/// subchannels, in watts per subchannel.
pub fn rx_power_per_subchannel(r: f64, cfg: &ScenarioConfig) -> f64 {
    pathloss(r, cfg) * cfg.tx_power_s / f64::from(cfg.packet_width_m)
}

/// SINR on a subchannel without interference, `l(r) S / (M sigma)`.
pub fn sinr_no_interference(r: f64, cfg: &ScenarioConfig) -> f64 {
    pathloss(r, cfg) * cfg.tx_power_s / (f64::from(cfg.packet_width_m) * cfg.noise_sigma)
}

/// SINR on a subchannel shared with one interferer at `r_int`.
pub fn sinr_single_interferer(r: f64, r_int: f64, cfg: &ScenarioConfig) -> f64 {
    pathloss(r, cfg) * cfg.tx_power_s
        / (pathloss(r_int, cfg) * cfg.tx_power_s + f64::from(cfg.packet_width_m) * cfg.noise_sigma)
}

/// Minimum distance an interferer must keep from the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExclusionRadius {
    /// Any interferer distance is tolerated.
    Zero,
    Finite(f64),
    /// No interferer distance is enough.
    Infinite,
}

impl ExclusionRadius {
    /// The radius as a float, `f64::INFINITY` for [`ExclusionRadius::Infinite`].
    pub fn meters(self) -> f64 {
        match self {
            ExclusionRadius::Zero => 0.0,
            ExclusionRadius::Finite(r) => r,
            ExclusionRadius::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExclusionRadius::Infinite)
    }
}

/// `xi_{M,m}(r)`: the bound `exp(-SINR_1 / gamma)` must stay under for the
/// EESM of an `m`-subchannel overlap to exceed `T`.
pub fn xi(r: f64, m_overlap: u32, cfg: &ScenarioConfig) -> f64 {
    let ratio = f64::from(cfg.packet_width_m) / f64::from(m_overlap);
    let sinr0 = sinr_no_interference(r, cfg);
    ratio * (-cfg.sinr_threshold_t / cfg.eesm_gamma).exp()
        - (ratio - 1.0) * (-sinr0 / cfg.eesm_gamma).exp()
}

/// Exclusion radius `rho_{M,m}(r)` for an overlap of `m_overlap` subchannels
/// with a single interferer.
pub fn exclusion_radius(r: f64, m_overlap: u32, cfg: &ScenarioConfig) -> ExclusionRadius {
    assert!(
        (1..=cfg.packet_width_m).contains(&m_overlap),
        "overlap {m_overlap} outside 1..={}",
        cfg.packet_width_m
    );
    let xi = xi(r, m_overlap, cfg);
    if xi >= 1.0 {
        return ExclusionRadius::Zero;
    }
    if xi <= 0.0 {
        return ExclusionRadius::Infinite;
    }
    let bracket = -pathloss(r, cfg) / (cfg.eesm_gamma * xi.ln())
        - cfg.noise_sigma * f64::from(cfg.packet_width_m) / cfg.tx_power_s;
    if bracket <= 0.0 {
        return ExclusionRadius::Infinite;
    }
    ExclusionRadius::Finite(bracket.powf(-1.0 / cfg.pathloss_beta) / cfg.pathloss_a)
}

/// `rho_{M,m}(r)` for `m = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionProfile {
    rho: Vec<ExclusionRadius>,
}

impl ExclusionProfile {
    pub fn new(r: f64, cfg: &ScenarioConfig) -> Self {
        ExclusionProfile {
            rho: (1..=cfg.packet_width_m)
                .map(|m| exclusion_radius(r, m, cfg))
                .collect(),
        }
    }

    /// Radius for overlap `m` (1-based).
    pub fn get(&self, m: usize) -> ExclusionRadius {
        self.rho[m - 1]
    }

    pub fn radii(&self) -> &[ExclusionRadius] {
        &self.rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EesmOutcome {
    pub effective_sinr: f64,
    pub success: bool,
}

/// Effective SINR `-gamma ln(mean(exp(-SINR_i / gamma)))`, with success iff it
/// strictly exceeds `T`.
///
/// The mean is taken relative to the smallest SINR so that very large values
/// do not underflow to `ln 0`.
pub fn eesm_receive(per_subchannel_sinr: &[f64], cfg: &ScenarioConfig) -> Option<EesmOutcome> {
    let effective_sinr = effective_sinr(per_subchannel_sinr, cfg.eesm_gamma)?;
    Some(EesmOutcome {
        effective_sinr,
        success: effective_sinr > cfg.sinr_threshold_t,
    })
}

pub fn effective_sinr(per_subchannel_sinr: &[f64], gamma: f64) -> Option<f64> {
    if per_subchannel_sinr.is_empty() {
        return None;
    }
    let min = per_subchannel_sinr
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let n = per_subchannel_sinr.len() as f64;
    let mean = per_subchannel_sinr
        .iter()
        .map(|s| (-(s - min) / gamma).exp())
        .sum::<f64>()
        / n;
    Some(min - gamma * mean.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{db_to_linear, ScenarioConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn pathloss_values() {
        let c = cfg();
        assert_relative_eq!(pathloss(100.0, &c), 3600f64.powi(-3), max_relative = 1e-14);
        assert_relative_eq!(pathloss(100.0, &c), 2.143e-11, max_relative = 1e-3);
        assert_relative_eq!(pathloss(1.0 / 36.0, &c), 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            pathloss(50.0, &c) / pathloss(100.0, &c),
            8.0,
            max_relative = 1e-12
        );
    }

    #[test]
    #[should_panic]
    fn pathloss_rejects_zero() {
        pathloss(0.0, &cfg());
    }

    #[test]
    fn sinr0_reference() {
        let c = cfg();
        let s0 = sinr_no_interference(100.0, &c);
        assert_relative_eq!(s0, 14.25, max_relative = 2e-3);
        assert!((10.0 * s0.log10() - 11.5).abs() < 0.05);

        let c1 = ScenarioConfig {
            packet_width_m: 1,
            ..c.clone()
        };
        assert_relative_eq!(
            sinr_no_interference(100.0, &c1) / s0,
            3.0,
            max_relative = 1e-14
        );
        let loud = ScenarioConfig {
            noise_sigma: 1e30,
            ..c
        };
        assert!(sinr_no_interference(100.0, &loud) < 1e-30);
    }

    #[test]
    fn zero_threshold_gives_zero_radius() {
        let c = ScenarioConfig {
            sinr_threshold_t: 1e-300,
            ..cfg()
        };
        for m in 1..=3 {
            assert_eq!(exclusion_radius(100.0, m, &c), ExclusionRadius::Zero);
        }
    }

    #[test]
    fn reference_full_overlap_radius() {
        let rho = exclusion_radius(100.0, 3, &cfg()).meters();
        assert!((rho - 124.0).abs() / 124.0 < 0.01, "rho = {rho}");
    }

    #[test]
    fn out_of_coverage_is_infinite() {
        let c = cfg();
        // SINR_0 drops below T = 2.3 dB a little beyond 200 m
        let r = 250.0;
        assert!(sinr_no_interference(r, &c) < db_to_linear(2.3));
        assert_eq!(exclusion_radius(r, 3, &c), ExclusionRadius::Infinite);
        assert!(xi(r, 1, &c) <= 0.0 || exclusion_radius(r, 1, &c).is_infinite());
    }

    #[test]
    fn eesm_constant_vector() {
        let c = cfg();
        let out = eesm_receive(&[4.2, 4.2, 4.2], &c).unwrap();
        assert_relative_eq!(out.effective_sinr, 4.2, max_relative = 1e-12);
        assert!(out.success);
        assert!(eesm_receive(&[], &c).is_none());
    }

    #[test]
    fn eesm_two_term_form() {
        let c = cfg();
        let (r, r_int) = (120.0, 300.0);
        let s0 = sinr_no_interference(r, &c);
        let s1 = sinr_single_interferer(r, r_int, &c);
        let g = c.eesm_gamma;
        for m in 0..=3usize {
            let mut v = vec![s0; 3];
            v[..m].iter_mut().for_each(|x| *x = s1);
            let w = m as f64 / 3.0;
            let two_term = -g * ((1.0 - w) * (-s0 / g).exp() + w * (-s1 / g).exp()).ln();
            assert_relative_eq!(
                eesm_receive(&v, &c).unwrap().effective_sinr,
                two_term,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn boundary_flip_at_radius() {
        let c = cfg();
        for (r, m) in [(100.0, 3u32), (60.0, 1), (150.0, 2)] {
            let ExclusionRadius::Finite(rho) = exclusion_radius(r, m, &c) else {
                panic!("expected a finite radius at r = {r}, m = {m}");
            };
            let trial = |r_int: f64| {
                let mut v = vec![sinr_no_interference(r, &c); 3];
                for x in v.iter_mut().take(m as usize) {
                    *x = sinr_single_interferer(r, r_int, &c);
                }
                eesm_receive(&v, &c).unwrap().success
            };
            assert!(trial(rho * (1.0 + 1e-6)));
            assert!(!trial(rho * (1.0 - 1e-6)));
        }
    }

    proptest! {
        #[test]
        fn effective_sinr_bounded(v in prop::collection::vec(0.0f64..1e3, 1..8)) {
            let e = effective_sinr(&v, 1.15).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(0.0, f64::max);
            prop_assert!(e >= lo - 1e-9 * lo.max(1.0));
            prop_assert!(e <= hi + 1e-9 * hi.max(1.0));
        }

        #[test]
        fn effective_sinr_monotone(
            v in prop::collection::vec(0.0f64..100.0, 1..8),
            idx in 0usize..8,
            bump in 0.0f64..10.0,
        ) {
            let i = idx % v.len();
            let mut w = v.clone();
            w[i] += bump;
            prop_assert!(effective_sinr(&w, 1.15).unwrap() >= effective_sinr(&v, 1.15).unwrap() - 1e-12);
        }
    }
}
