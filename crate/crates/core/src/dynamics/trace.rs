use std::io::Write;

use serde::{Deserialize, Serialize};

use super::FEJER_SLACK;
use crate::envelope::{estimate_rate, linear_fit, RateEstimate};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::solver::SolveStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub p: Point,
    pub pstar: Point,
    /// D_t = D_ψ(p_t‖p_t*).
    pub d: f64,
    /// W_t = D_ψ(p_{t−1}*‖p_t*), zero at t = 0.
    pub w: f64,
    /// Running drift budget V_t = Σ_{s≤t} W_s.
    pub v: f64,
    pub kkt: f64,
    /// Status of the solve that produced p_t (none at t = 0).
    pub status: Option<SolveStatus>,
    /// f_t(p_t) − f_t(p_t*).
    pub regret: f64,
    /// R_t = Σ_{s=1}^t regret_s.
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    pub kappa: f64,
    pub sigma_obs: f64,
    /// Whether the per-step Fejér inequality is checked (noiseless static runs).
    pub fejer_checked: bool,
    /// Steps t with D_t > (1−κ)D_{t−1} + 1e-9.
    pub fejer_violations: Vec<usize>,
    pub records: Vec<TraceRecord>,
}

impl IterateTrace {
    pub fn new(kappa: f64, sigma_obs: f64, fejer_checked: bool) -> Self {
        Self {
            kappa,
            sigma_obs,
            fejer_checked,
            fejer_violations: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: TraceRecord) {
        if self.fejer_checked {
            if let Some(prev) = self.records.last() {
                if record.d > (1.0 - self.kappa) * prev.d + FEJER_SLACK {
                    self.fejer_violations.push(record.t);
                }
            }
        }
        self.records.push(record);
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace always holds the initial record")
    }

    /// Number of steps T.
    pub fn horizon(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// D_0..D_T.
    pub fn distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d).collect()
    }

    /// V_T = Σ_{t=1}^T W_t.
    pub fn drift_budget(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.v)
    }

    /// Σ_{t=1}^T D_t.
    pub fn total_deviation(&self) -> f64 {
        self.records.iter().skip(1).map(|r| r.d).sum()
    }

    pub fn regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    /// R_T / T.
    pub fn normalized_regret(&self) -> f64 {
        self.regret() / self.horizon().max(1) as f64
    }

    pub fn fejer_holds(&self) -> bool {
        self.fejer_violations.is_empty()
    }

    pub fn rate_estimate(&self) -> Result<RateEstimate> {
        estimate_rate(&self.distances())
    }

    /// Slope of log D_t against t over the positive part of the run (gaps
    /// above 1e-14), or None with fewer than two such points.
    pub fn log_slope(&self) -> Option<f64> {
        let (t, logd): (Vec<f64>, Vec<f64>) = self
            .records
            .iter()
            .take_while(|r| r.d > crate::envelope::ZERO_GAP)
            .map(|r| (r.t as f64, r.d.ln()))
            .unzip();
        (t.len() >= 2).then(|| linear_fit(&t, &logd).0)
    }

    /// CSV with header `t,p_0..p_{n−1},pstar_0..pstar_{n−1},D,W,kkt,regret`,
    /// where `regret` is the cumulative R_t.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Invalid(format!("writing trace: {e}"));
        let n = self.records.first().map_or(0, |r| r.p.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("p_{i}")));
        header.extend((0..n).map(|i| format!("pstar_{i}")));
        header.extend(["D", "W", "kkt", "regret"].map(String::from));
        w.write_record(&header).map_err(io)?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.p.iter().map(f64::to_string));
            row.extend(r.pstar.iter().map(f64::to_string));
            row.extend([r.d, r.w, r.kkt, r.cum_regret].map(|v| v.to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Invalid(format!("writing trace: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBoundReport {
    pub kappa: f64,
    pub c: f64,
    /// Σ_{t=1}^T D_t.
    pub lhs: f64,
    /// (1/κ)D_0 + (C/κ)V_T.
    pub rhs: f64,
    pub ratio: f64,
    /// ratio ≤ 1 + 1e-6.
    pub pass: bool,
    /// Steps violating D_t ≤ 2(1−κ)D_{t−1} + 2(1−κ)W_t.
    pub lemma_violations: Vec<usize>,
    /// Steps violating D_t ≤ (1−κ)D_{t−1} + C·W_t.
    pub one_step_violations: Vec<usize>,
}

impl DriftBoundReport {
    pub fn lemma_holds(&self) -> bool {
        self.lemma_violations.is_empty()
    }

    pub fn one_step_holds(&self) -> bool {
        self.one_step_violations.is_empty()
    }
}

/// Checks Σ D_t ≤ (1/κ)D_0 + (C/κ)V_T and both per-step forms of the drift
/// inequality.
pub fn check_drift_bound(trace: &IterateTrace, kappa: f64, c: f64) -> DriftBoundReport {
    let d0 = trace.records.first().map_or(0.0, |r| r.d);
    let lhs = trace.total_deviation();
    let rhs = d0 / kappa + c / kappa * trace.drift_budget();
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let slack = |v: f64| 1e-12 + 1e-9 * v.abs();
    let mut lemma_violations = Vec::new();
    let mut one_step_violations = Vec::new();
    for pair in trace.records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let lemma = 2.0 * (1.0 - kappa) * (prev.d + cur.w);
        if cur.d > lemma + slack(lemma) {
            lemma_violations.push(cur.t);
        }
        let one_step = (1.0 - kappa) * prev.d + c * cur.w;
        if cur.d > one_step + slack(one_step) {
            one_step_violations.push(cur.t);
        }
    }
    DriftBoundReport {
        kappa,
        c,
        lhs,
        rhs,
        ratio,
        pass: ratio <= 1.0 + 1e-6,
        lemma_violations,
        one_step_violations,
    }
}
