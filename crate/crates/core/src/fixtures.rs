//! Shipped example models.

use nalgebra::DMatrix;

use crate::model::{self, FluidModel, Model, QuadSystem};

/// The Lorenz system in JSON model form.
pub const LORENZ_JSON: &str = include_str!("../fixtures/lorenz.json");
/// Nine-mode shear-flow Galerkin model (α = 1/2, β = π/2, γ = 1, Re = 60,
/// laminar profile c = e₁, the first six modes measured).
pub const MFE9_JSON: &str = include_str!("../fixtures/mfe9.json");

/// Fixture names accepted by [`by_name`].
pub const NAMES: [&str; 2] = ["lorenz", "mfe9"];

/// Lorenz system with σ = 10, ρ = 28, β = 8/3 and output `y = x₂`.
pub fn lorenz() -> QuadSystem {
    let a = DMatrix::from_row_slice(3, 3, &[-10.0, 10.0, 0.0, 28.0, -1.0, 0.0, 0.0, 0.0, -8.0 / 3.0]);
    let m1 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
    let nmats = vec![m1, DMatrix::zeros(3, 3), DMatrix::zeros(3, 3)];
    let c = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
    model::build_system(a, nmats, c).expect("Lorenz coefficients are energy preserving")
}

pub fn mfe9() -> FluidModel {
    match model::parse_model(MFE9_JSON).expect("shipped shear-flow fixture parses") {
        Model::Fluid(f) => f,
        Model::Quad(_) => unreachable!("the shear-flow fixture is stored in fluid form"),
    }
}

pub fn by_name(name: &str) -> Option<Model> {
    match name {
        "lorenz" => Some(Model::Quad(lorenz())),
        "mfe9" => Some(Model::Fluid(mfe9())),
        _ => None,
    }
}
