//! Energy `J(t) = ∫ sqrt(|∇u|² + ε²)` and its balance `J' + D − S = 0`.

use crate::flow::FlowReport;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub source: Vec<f64>,
    /// `J'` by centered differences, one-sided at the ends.
    pub derivative: Vec<f64>,
    /// `R = J' + D − S`.
    pub residual: Vec<f64>,
}

impl EnergyTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// max |R| over interior steps (endpoints use one-sided `J'` and are skipped).
    pub fn max_abs_residual(&self) -> f64 {
        let n = self.residual.len();
        if n < 3 {
            return 0.0;
        }
        self.residual[1..n - 1].iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest single-step increase of `J` (0 if it never increases).
    pub fn max_increase(&self) -> f64 {
        self.energy.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// `J(t₂) ≤ J(t₁) + tol·(steps between)` for all pairs.
    pub fn is_descent(&self, tol: f64) -> bool {
        let mut best = f64::INFINITY;
        for (k, &j) in self.energy.iter().enumerate() {
            // min over earlier i of J(i) − tol·i, compared with J(k) − tol·k
            let shifted = j - tol * k as f64;
            if shifted > best + 1e-15 * j.abs().max(1.0) {
                return false;
            }
            best = best.min(shifted);
        }
        true
    }

    pub fn all_finite(&self) -> bool {
        [&self.t, &self.energy, &self.dissipation, &self.source, &self.derivative, &self.residual]
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
    }
}

pub fn energy_series(report: &FlowReport) -> EnergyTrace {
    let s = &report.series;
    let n = s.len();
    let t = s.t.clone();
    let j = &s.energy;
    let derivative: Vec<f64> = (0..n)
        .map(|k| match (k, n) {
            (_, 0 | 1) => 0.0,
            (0, _) => (j[1] - j[0]) / (t[1] - t[0]),
            (k, n) if k == n - 1 => (j[k] - j[k - 1]) / (t[k] - t[k - 1]),
            (k, _) => (j[k + 1] - j[k - 1]) / (t[k + 1] - t[k - 1]),
        })
        .collect();
    let residual = (0..n).map(|k| derivative[k] + s.dissipation[k] - s.source[k]).collect();
    EnergyTrace {
        t,
        energy: j.clone(),
        dissipation: s.dissipation.clone(),
        source: s.source.clone(),
        derivative,
        residual,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationBudget {
    /// `Σ dt ∫ u_t²` (left rule over completed steps).
    pub total: f64,
    /// `Σ dt D`, which the identity equates with `J(0) − J(T) + Σ dt S`.
    pub dissipation_integral: f64,
    pub source_integral: f64,
    pub energy_drop: f64,
    /// `(sup|∇u| + ε)(J(0) + |ν| |D| 2 sup|u|)`.
    pub bound: f64,
    pub within_bound: bool,
}

impl DissipationBudget {
    /// `|Σ dt D − (J(0) − J(T) + Σ dt S)|`.
    pub fn identity_gap(&self) -> f64 {
        (self.dissipation_integral - self.energy_drop - self.source_integral).abs()
    }
}

fn left_sum(t: &[f64], f: &[f64], from: f64, to: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..t.len().saturating_sub(1) {
        if t[k] >= from - 1e-12 && t[k + 1] <= to + 1e-12 {
            acc += (t[k + 1] - t[k]) * f[k];
        }
    }
    acc
}

/// `measure` is |D|; `tol` is added to the bound.
pub fn dissipation_budget(report: &FlowReport, measure: f64, tol: f64) -> DissipationBudget {
    let s = &report.series;
    let end = report.final_time();
    let total = left_sum(&s.t, &s.ut_sq, 0.0, end);
    let dissipation_integral = left_sum(&s.t, &s.dissipation, 0.0, end);
    let source_integral = left_sum(&s.t, &s.source, 0.0, end);
    let energy_drop = match (s.energy.first(), s.energy.last()) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    };
    let sup_grad = s.sup_grad.iter().copied().fold(0.0, f64::max);
    let sup_u = s.sup_u.iter().copied().fold(0.0, f64::max);
    let j0 = s.energy.first().copied().unwrap_or(0.0);
    let bound = (sup_grad + report.params.epsilon) * (j0 + report.params.nu.abs() * measure * 2.0 * sup_u);
    DissipationBudget {
        total,
        dissipation_integral,
        source_integral,
        energy_drop,
        bound,
        within_bound: total <= bound + tol,
    }
}

/// `(∫_0^T ∫u_t², ∫_T^{2T} ∫u_t²)` for a run reaching `2T`.
pub fn head_and_tail(report: &FlowReport, split: f64) -> (f64, f64) {
    let s = &report.series;
    (left_sum(&s.t, &s.ut_sq, 0.0, split), left_sum(&s.t, &s.ut_sq, split, 2.0 * split))
}
