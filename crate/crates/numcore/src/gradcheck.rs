//! Central finite-difference verification of tape gradients.

use crate::error::NumError;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation applied to each coordinate.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Lower bound of the relative-error denominator, so coordinates whose
    /// true gradient is (near) zero are judged by absolute error instead.
    pub floor: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-5,
            floor: 1e-3,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamGradReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error and its two estimates.
    pub worst: (usize, f64, f64),
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamGradReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamGradReport> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "gradient check: {} parameters, max relative error {:.3e} ({})",
            self.params.len(),
            self.max_rel_error,
            if self.passed { "pass" } else { "FAIL" }
        )?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<40} coords={:<6} rel={:.3e} abs={:.3e}{}",
                p.name,
                p.coords_checked,
                p.max_rel_error,
                p.max_abs_error,
                if p.passed { "" } else { "  <-- exceeds tolerance" }
            )?;
        }
        Ok(())
    }
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn evaluate<F, E>(f: &F, store: &ParamStore<f64>) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<NumError>,
{
    let mut tape = Tape::inference();
    let root = f(&mut tape, store)?;
    Ok(tape.value(root).item()?)
}

/// Compares reverse-mode gradients of the scalar `f` against
/// `(f(θ + eps) - f(θ - eps)) / (2 eps)` for every trainable parameter.
pub fn grad_check<F, E>(f: F, store: &ParamStore<f64>, config: &GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<NumError>,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let grads = tape.backward(root)?;

    let mut work = store.clone();
    let mut reports = Vec::new();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let value = store.value(id).clone();
        let analytic = grads
            .param(id)
            .map(|g| g.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; value.numel()]);
        let coords: Vec<usize> = match config.max_coords {
            Some(k) if k < value.numel() => (0..k).map(|i| i * value.numel() / k).collect(),
            _ => (0..value.numel()).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut worst = (0, 0.0, 0.0);
        for &c in &coords {
            let mut shifted = value.to_vec();
            shifted[c] = value.data()[c] + config.eps;
            work.set_value(id, Tensor::new(value.shape().to_vec(), shifted.clone())?)?;
            let plus = evaluate(&f, &work)?;
            shifted[c] = value.data()[c] - config.eps;
            work.set_value(id, Tensor::new(value.shape().to_vec(), shifted)?)?;
            let minus = evaluate(&f, &work)?;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let rel = relative_error(analytic[c], numeric, config.floor);
            max_abs = max_abs.max((analytic[c] - numeric).abs());
            if rel >= max_rel {
                max_rel = rel;
                worst = (c, analytic[c], numeric);
            }
        }
        work.set_value(id, value)?;
        reports.push(ParamGradReport {
            name: store.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            worst,
            passed: max_rel <= config.tol,
        });
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: reports.iter().all(|r| r.passed),
        params: reports,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_of_linear_map() {
        // f(W) = |W x|^2
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Tensor::from_f64([2, 3], &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7]).unwrap())
            .unwrap();
        let x = Tensor::from_f64([3, 1], &[1.5, -0.5, 2.0]).unwrap();
        let report = grad_check(
            |tape: &mut Tape<f64>, s: &ParamStore<f64>| -> Result<Var, NumError> {
                let wv = tape.param(s, w);
                let xv = tape.constant(x.clone());
                let y = tape.matmul(wv, xv)?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq)
            },
            &store,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{report}");
        assert!(report.max_rel_error <= 1e-6, "{report}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_f64([2], &[1.0, 2.0]).unwrap()).unwrap();
        let report = grad_check(
            |tape: &mut Tape<f64>, _: &ParamStore<f64>| -> Result<Var, NumError> {
                Ok(tape.constant(Tensor::scalar(4.0)))
            },
            &store,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.params[0].max_abs_error, 0.0);
        assert_eq!(report.params[0].worst.1, 0.0);
    }
}
