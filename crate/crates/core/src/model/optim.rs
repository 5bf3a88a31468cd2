use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;

/// Piecewise-constant learning rate: after epoch `e` of a `(e, divisor)`
/// pair the base rate is divided by `divisor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub stages: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, stages: Vec::new() }
    }

    /// 1e-3, divided by 3, 10, 30, 100 after 150, 225, 300, 325 epochs.
    pub fn long_run() -> Self {
        Self {
            base: 1e-3,
            stages: vec![(150, 3.0), (225, 10.0), (300, 30.0), (325, 100.0)],
        }
    }

    /// Rate for a zero-based epoch index.
    pub fn rate(&self, epoch: usize) -> f64 {
        let div = self
            .stages
            .iter()
            .filter(|(after, _)| epoch >= *after)
            .map(|(_, d)| *d)
            .next_back()
            .unwrap_or(1.0);
        self.base / div
    }

    /// Parses `150:3,225:10`.
    pub fn parse_stages(s: &str) -> Result<Vec<(usize, f64)>, String> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Vec::new());
        }
        let mut out: Vec<(usize, f64)> = Vec::new();
        for part in s.split(',') {
            let (e, d) = part
                .split_once(':')
                .ok_or_else(|| format!("schedule entry '{part}' is not epoch:divisor"))?;
            let e: usize = e.trim().parse().map_err(|_| format!("bad epoch in '{part}'"))?;
            let d: f64 = d.trim().parse().map_err(|_| format!("bad divisor in '{part}'"))?;
            if !(d > 0.0) {
                return Err(format!("divisor must be positive in '{part}'"));
            }
            if out.last().is_some_and(|(prev, _)| *prev >= e) {
                return Err("schedule epochs must increase".into());
            }
            out.push((e, d));
        }
        Ok(out)
    }

    pub fn format_stages(&self) -> String {
        if self.stages.is_empty() {
            return "none".into();
        }
        self.stages
            .iter()
            .map(|(e, d)| format!("{e}:{d}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}
