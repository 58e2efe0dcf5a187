//! Finite-difference verification of analytic gradients.
//!
//! Runs at 64-bit only: central differences at `h ≈ 1e-5` are meaningless in
//! single precision.

use crate::error::{Error, Result};

use super::{zero_grads, Parameter, Tensor};

/// Absolute agreement below which a gradient pair counts as exact. Central
/// differences carry ~1e-11 of roundoff noise on O(1) values; this floor
/// keeps near-zero gradients from producing spurious relative errors.
const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "grad check: {} (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tol
        )?;
        for p in &self.params {
            writeln!(f, "  {:<44} max rel err {:.3e}", p.name, p.max_rel_error)?;
        }
        Ok(())
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    let abs = (a - b).abs();
    if abs <= ABS_FLOOR {
        return 0.0;
    }
    abs / a.abs().max(b.abs())
}

/// Compare the backward-pass gradient of `f` against central finite
/// differences, per parameter element.
///
/// `f` must be deterministic (seed or disable dropout); this is verified by
/// evaluating it twice and demanding bit-equal values. The analytic gradient
/// is taken from one `backward()` call; the numeric one perturbs each
/// parameter element by ±h through the shared handles.
pub fn grad_check(
    f: &dyn Fn() -> Result<Tensor<f64>>,
    params: &[Parameter<f64>],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let eval = || -> Result<f64> {
        let out = f()?;
        if out.numel() != 1 {
            return Err(Error::InvalidArg(format!(
                "grad_check expects a scalar-valued function, got shape {:?}",
                out.shape()
            )));
        }
        Ok(out.item())
    };

    let v1 = eval()?;
    let v2 = eval()?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "function returned {v1} then {v2}; seed or disable its randomness"
        )));
    }

    zero_grads(params);
    let loss = f()?;
    loss.backward()?;

    let mut report = GradCheckReport { params: Vec::with_capacity(params.len()), tol };
    for p in params {
        let analytic = p
            .tensor
            .grad()
            .unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for i in 0..p.tensor.numel() {
            let orig = p.tensor.to_vec()[i];
            p.tensor.with_data_mut(|d| d[i] = orig + h);
            let plus = eval()?;
            p.tensor.with_data_mut(|d| d[i] = orig - h);
            let minus = eval()?;
            p.tensor.with_data_mut(|d| d[i] = orig);
            let fd = (plus - minus) / (2.0 * h);
            max_rel = max_rel.max(rel_error(analytic[i], fd));
            max_abs = max_abs.max((analytic[i] - fd).abs());
        }
        report.params.push(ParamError {
            name: p.name.clone(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(report)
}
