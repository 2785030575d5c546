#![allow(dead_code)]

use gmcf::data::ScalarFn;
use gmcf::flow::Ibvp;
use gmcf::geometry::{DomainSpec, Grid, Point};

pub fn ball() -> DomainSpec {
    DomainSpec::ball(1.0, 2).unwrap()
}

pub fn grid(domain: &DomainSpec, h: f64) -> Grid {
    Grid::build(domain, h).unwrap()
}

pub fn r2(x: &Point) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

/// x₁ + 0.5 (1 − |x|²)³ on the unit ball; matches x₁ on the boundary to
/// second order.
pub fn bump() -> ScalarFn {
    ScalarFn::new("x1 + 0.5*(1-|x|^2)^3", |x| x[0] + 0.5 * (1.0 - r2(x)).powi(3))
}

pub fn linear_problem() -> Ibvp {
    Ibvp::new(ball(), ScalarFn::coordinate(0), ScalarFn::coordinate(0)).unwrap()
}

pub fn bump_problem() -> Ibvp {
    Ibvp::new(ball(), ScalarFn::coordinate(0), bump()).unwrap()
}
