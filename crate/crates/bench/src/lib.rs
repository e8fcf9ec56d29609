//! Benchmark fixtures shared by the criterion targets.

use newton_spectra::surfaces::generate;
use newton_spectra::{Analysis, AnalyticSurface};

pub const ELLIPSOID: AnalyticSurface = AnalyticSurface::Ellipsoid { a: 2.0, b: 1.0, c: 1.0 };

/// Ellipsoid analysis at the given refinement level and order.
pub fn ellipsoid(subdiv: u32, r: usize) -> Analysis {
    Analysis::new(generate(&ELLIPSOID, subdiv).expect("valid surface"), r).expect("convex input")
}
