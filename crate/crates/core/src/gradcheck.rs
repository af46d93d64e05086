//! Central finite-difference check of the analytic gradients.

use std::collections::BTreeMap;
use std::fmt;

use crate::corpus::DialogExample;
use crate::encoder::Gate;
use crate::error::Result;
use crate::model::{Gradients, RankingModel};
use crate::numkit::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many entries per tensor (sampled); `None` = all.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error. Central differences of an
    /// O(1) loss carry about `1e-16 / epsilon` absolute noise, so entries whose
    /// gradient is far below this floor are effectively compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_per_tensor: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassStats {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries whose analytic gradient magnitude exceeds the floor.
    pub above_floor: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub classes: BTreeMap<String, ClassStats>,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.classes.values().map(|c| c.checked).sum()
    }

    pub fn above_floor(&self) -> usize {
        self.classes.values().map(|c| c.above_floor).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (class, st) in &self.classes {
            writeln!(f, "{class:<10} n={:<6} max_rel_err={:.3e}", st.checked, st.max_rel_err)?;
        }
        write!(f, "overall max_rel_err={:.3e}", self.max_rel_err)
    }
}

/// `|g - ĝ| / max(|g|, |ĝ|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn param_class(name: &str, rows: usize, index: usize, cols: usize) -> String {
    if name.ends_with(".weight") {
        let s = rows / 4;
        let row = index / cols;
        let gate = Gate::ALL[(row / s).min(3)];
        format!("W_{}", gate.name())
    } else if name.ends_with(".bias") {
        "b_lstm".to_string()
    } else if name == "head.m" {
        "M".to_string()
    } else if name == "bias" {
        "b".to_string()
    } else {
        name.to_string()
    }
}

/// Compares the analytic gradient of the example loss with
/// `(L(θ+ε) - L(θ-ε)) / 2ε` for each trainable entry.
pub fn gradient_check(model: &mut RankingModel, example: &DialogExample, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let eg = model.example_grads(example)?;
    let mut analytic = Gradients::zeros_for(model);
    analytic.add_example(model, &eg, 1.0)?;

    let layout: Vec<(String, usize, usize, usize)> = model
        .params()
        .into_iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name, p.rows, p.cols, p.data.len()))
        .collect();

    let mut rng = Rng::new(opts.seed);
    let mut report = GradCheckReport::default();
    let eps = opts.epsilon;
    for (slot, (name, rows, cols, len)) in layout.iter().enumerate() {
        let indices: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < *len => (0..k).map(|_| rng.below(*len)).collect(),
            _ => (0..*len).collect(),
        };
        for idx in indices {
            let orig = model.trainable_params_mut()[slot].data[idx];
            model.trainable_params_mut()[slot].data[idx] = orig + eps;
            let lp = model.loss(example)?;
            model.trainable_params_mut()[slot].data[idx] = orig - eps;
            let lm = model.loss(example)?;
            model.trainable_params_mut()[slot].data[idx] = orig;

            let numeric = (lp - lm) / (2.0 * eps);
            let g = analytic.tensors[slot][idx];
            let err = relative_error(g, numeric, opts.floor);
            let class = param_class(name, *rows, idx, *cols);
            let st = report.classes.entry(class).or_default();
            st.checked += 1;
            st.above_floor += usize::from(g.abs() > opts.floor);
            st.max_rel_err = st.max_rel_err.max(err);
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert_eq!(relative_error(1.0, 1.0, 1e-8), 0.0);
        assert!((relative_error(1e-9, 0.0, 1e-8) - 0.1).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn class_names() {
        // s = 2, cols = 3: rows 0-1 input gate, 2-3 forget, 4-5 output, 6-7 candidate
        assert_eq!(param_class("context.l0.weight", 8, 0, 3), "W_i");
        assert_eq!(param_class("context.l0.weight", 8, 2 * 3, 3), "W_f");
        assert_eq!(param_class("context.l0.weight", 8, 5 * 3 + 2, 3), "W_o");
        assert_eq!(param_class("response.l1.weight", 8, 7 * 3, 3), "W_g");
        assert_eq!(param_class("context.l0.bias", 8, 0, 1), "b_lstm");
        assert_eq!(param_class("head.m", 2, 0, 2), "M");
        assert_eq!(param_class("bias", 1, 0, 1), "b");
        assert_eq!(param_class("embedding", 12, 0, 4), "embedding");
    }
}
