//! Scalar functions used as boundary and initial data.

use std::fmt;
use std::sync::Arc;

use crate::expr::Expr;
use crate::geometry::Point;

/// A scalar function of position, shareable across threads.
#[derive(Clone)]
pub struct ScalarFn {
    f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    label: String,
}

impl ScalarFn {
    pub fn new(label: impl Into<String>, f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), label: label.into() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), move |_| c)
    }

    /// Coordinate function `x_{axis+1}`.
    pub fn coordinate(axis: usize) -> Self {
        Self::new(format!("x{}", axis + 1), move |x| x[axis])
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        (self.f)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `-f`.
    pub fn negated(&self) -> Self {
        let f = self.f.clone();
        Self::new(format!("-({})", self.label), move |x| -f(x))
    }

    /// `f + g`.
    pub fn plus(&self, other: &ScalarFn) -> Self {
        let (f, g) = (self.f.clone(), other.f.clone());
        Self::new(format!("({}) + ({})", self.label, other.label), move |x| f(x) + g(x))
    }
}

impl From<Expr> for ScalarFn {
    fn from(e: Expr) -> Self {
        let label = e.text().to_string();
        Self::new(label, move |x| e.eval(x))
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFn({})", self.label)
    }
}
