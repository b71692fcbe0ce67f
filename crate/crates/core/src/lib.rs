//! Semiclassical nonlinear Schrödinger laboratory.
//!
//! The equation `ih∂ₛv + h²Δv = ω|v|^{p−1}v` on a periodic box is approached
//! two ways: through the WKB hierarchy for `v ≈ a e^{iS/h}` ([`wkb`],
//! cross-checked by the analytic fixed point in [`symbolcalc`]) and through a
//! Strang split-step solver ([`solver`]). [`rescale`] converts to physical
//! variables and [`experiments`] runs the instability sweeps.

pub mod grid;
pub mod rescale;
pub mod series;
pub mod symbolcalc;
pub mod wkb;
pub mod solver;
pub mod experiments;
pub mod fit;
pub mod report;

pub use grid::{Field, GridSpec, C64};
