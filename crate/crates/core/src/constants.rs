//! The timing cascade derived from `n`, `f` and `d`.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::time::Span;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConstants {
    pub n: usize,
    pub f: usize,
    pub d: Span,
    pub delta: Span,
    pub pi: Span,
    pub rho: Ratio<i64>,
    pub tau_skew: Span,
    pub phi: Span,
    pub d_agr: Span,
    pub d_zero: Span,
    pub d_rmv: Span,
    pub d_val: Span,
    pub d_node: Span,
    pub d_reset: Span,
    pub d_stb: Span,
}

/// Derives every constant from the topology and timing parameters.
///
/// `d` must equal `(delta + pi) * (1 + rho)`. When the product is not a whole
/// number of ticks, `d` must be its ceiling.
pub fn derive_constants(
    n: usize,
    f: usize,
    d: Span,
    delta: Span,
    pi: Span,
    rho: Ratio<i64>,
) -> Result<ProtocolConstants, ConfigError> {
    if n <= 3 * f {
        return Err(ConfigError::Topology { n, f });
    }
    if d.0 <= 0 || delta.0 <= 0 || pi.0 < 0 {
        return Err(ConfigError::Timing("d and delta must be positive, pi non-negative".into()));
    }
    if *rho.numer() < 0 || rho >= Ratio::from_integer(1) {
        return Err(ConfigError::Timing(format!("rho must lie in [0, 1), got {rho}")));
    }
    let exact = Ratio::from_integer((delta.0 + pi.0) as i128)
        * Ratio::new(
            (*rho.denom() + *rho.numer()) as i128,
            *rho.denom() as i128,
        );
    if exact.ceil().to_integer() != d.0 as i128 {
        return Err(ConfigError::InconsistentD {
            d: d.0,
            product: format!("{exact}"),
        });
    }

    let fi = f as i64;
    let tau_skew = d * 6;
    let phi = tau_skew + d * 2;
    let d_agr = phi * (2 * fi + 1);
    let d_zero = d * 13;
    let d_rmv = d_agr + d_zero;
    let d_val = d * 15 + d_rmv * 2;
    let d_node = d_val + d_agr;
    let d_reset = d * 20 + d_rmv * 4;
    let d_stb = d_reset * 2;
    Ok(ProtocolConstants {
        n,
        f,
        d,
        delta,
        pi,
        rho,
        tau_skew,
        phi,
        d_agr,
        d_zero,
        d_rmv,
        d_val,
        d_node,
        d_reset,
        d_stb,
    })
}

impl ProtocolConstants {
    /// Quorum that guarantees at least one correct sender.
    pub fn weak(&self) -> usize {
        self.n - 2 * self.f
    }

    /// Quorum that guarantees at least `n - 2f` correct senders.
    pub fn strong(&self) -> usize {
        self.n - self.f
    }

    /// `k * d`.
    pub fn ds(&self, k: i64) -> Span {
        self.d * k
    }

    /// Agreement-layer retention `(2f+1)Φ + 3d`.
    pub fn agreement_horizon(&self) -> Span {
        self.d_agr + self.d * 3
    }

    /// Broadcast-layer retention `(2f+3)Φ`.
    pub fn broadcast_horizon(&self) -> Span {
        self.phi * (2 * self.f as i64 + 3)
    }

    /// The named cascade in display order, as spans.
    pub fn table(&self) -> Vec<(&'static str, Span)> {
        vec![
            ("tau_skew", self.tau_skew),
            ("phi", self.phi),
            ("d_agr", self.d_agr),
            ("d_zero", self.d_zero),
            ("d_rmv", self.d_rmv),
            ("d_val", self.d_val),
            ("d_node", self.d_node),
            ("d_reset", self.d_reset),
            ("d_stb", self.d_stb),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: Span = Span(1000);

    fn unit(n: usize, f: usize) -> ProtocolConstants {
        derive_constants(n, f, D, Span(900), Span(100), Ratio::from_integer(0)).unwrap()
    }

    fn in_d(s: Span) -> i64 {
        assert_eq!(s.0 % 1000, 0);
        s.0 / 1000
    }

    #[test]
    fn four_one_cascade() {
        let c = unit(4, 1);
        assert_eq!(in_d(c.phi), 8);
        assert_eq!(in_d(c.d_agr), 24);
        assert_eq!(in_d(c.d_zero), 13);
        assert_eq!(in_d(c.d_rmv), 37);
        assert_eq!(in_d(c.d_val), 89);
        assert_eq!(in_d(c.d_node), 113);
        assert_eq!(in_d(c.d_reset), 168);
        assert_eq!(in_d(c.d_stb), 336);
    }

    #[test]
    fn seven_two_cascade() {
        let c = unit(7, 2);
        assert_eq!(in_d(c.phi), 8);
        assert_eq!(in_d(c.d_agr), 40);
        assert_eq!(in_d(c.d_rmv), 53);
        assert_eq!(in_d(c.d_reset), 232);
    }

    #[test]
    fn rejects_small_topology() {
        let e = derive_constants(3, 1, D, Span(900), Span(100), Ratio::from_integer(0));
        assert!(matches!(e, Err(ConfigError::Topology { n: 3, f: 1 })));
    }

    #[test]
    fn rejects_inconsistent_d() {
        let e = derive_constants(4, 1, D, Span(900), Span(200), Ratio::from_integer(0));
        assert!(matches!(e, Err(ConfigError::InconsistentD { .. })));
    }

    #[test]
    fn accepts_drift_inclusive_d() {
        // (900 + 100) * (1 + 1/100) = 1010
        let c = derive_constants(4, 1, Span(1010), Span(900), Span(100), Ratio::new(1, 100)).unwrap();
        assert_eq!(c.phi, Span(8080));
        // rounding up: (900 + 100) * (1 + 1/3000) = 1000.33.. -> 1001
        assert!(derive_constants(4, 1, Span(1001), Span(900), Span(100), Ratio::new(1, 3000)).is_ok());
        assert!(derive_constants(4, 1, Span(1000), Span(900), Span(100), Ratio::new(1, 3000)).is_err());
    }

    #[test]
    fn derived_horizons() {
        let c = unit(4, 1);
        assert_eq!(c.broadcast_horizon(), Span(40_000));
        assert_eq!(c.agreement_horizon(), Span(27_000));
        assert_eq!((c.weak(), c.strong()), (2, 3));
    }
}
