//! Convergence trajectories shared by every iterative driver.

use std::time::{Duration, Instant};

pub const CSV_HEADER: &str = "method,seed,iteration,elapsed_s,residual,lyapunov,lambda_min_X";

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub elapsed_s: f64,
    pub residual: f64,
    pub lyapunov: Option<f64>,
    pub lambda_min_x: Option<f64>,
}

impl ConvergenceRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.seed,
            self.iteration,
            fmt_num(self.elapsed_s),
            fmt_num(self.residual),
            opt(self.lyapunov),
            opt(self.lambda_min_x)
        )
    }
}

/// Shortest round-trip scientific notation.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub max_iter: usize,
    /// Record every `record_every` iterations; the initial and final iterates are always recorded.
    pub record_every: usize,
    pub time_budget: Option<Duration>,
}

impl RunOptions {
    pub fn iterations(max_iter: usize, record_every: usize) -> Self {
        RunOptions { max_iter, record_every: record_every.max(1), time_budget: None }
    }

    pub fn with_budget(self, budget: Duration) -> Self {
        RunOptions { time_budget: Some(budget), ..self }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub records: Vec<ConvergenceRecord>,
    pub state: S,
    /// Stopped by the time budget before `max_iter`.
    pub truncated: bool,
}

impl<S> Trajectory<S> {
    pub fn last_residual(&self, method: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.method == method).map(|r| r.residual)
    }
}

pub(crate) struct Clock {
    start: Instant,
    budget: Option<Duration>,
}

impl Clock {
    pub(crate) fn start(budget: Option<Duration>) -> Self {
        Clock { start: Instant::now(), budget }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub(crate) fn expired(&self) -> bool {
        self.budget.is_some_and(|b| self.start.elapsed() >= b)
    }
}

/// Whether iteration `k` of a run capped at `max_iter` is recorded.
pub(crate) fn should_record(k: usize, every: usize, max_iter: usize) -> bool {
    k == 0 || k == max_iter || k.is_multiple_of(every.max(1))
}
