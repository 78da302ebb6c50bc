//! Finite-difference derivatives on a closed box.

use crate::error::Result;
use crate::model::ParamBox;

/// Gradient step `max(1e-6, 1e-7 |x|)`.
pub fn gradient_step(x: f64) -> f64 {
    (1e-7 * x.abs()).max(1e-6)
}

/// Hessian step `max(1e-4, 1e-4 |x|)`.
pub fn hessian_step(x: f64) -> f64 {
    (1e-4 * x.abs()).max(1e-4)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stencil {
    Central,
    Forward,
    Backward,
}

fn stencil(x: f64, h: f64, lo: f64, hi: f64, reach: f64) -> Stencil {
    if x - reach * h >= lo && x + reach * h <= hi {
        Stencil::Central
    } else if x + 2.0 * reach * h <= hi {
        Stencil::Forward
    } else {
        Stencil::Backward
    }
}

/// First-derivative weights as `(offset, coefficient)` in units of the step.
fn first_weights(s: Stencil) -> &'static [(f64, f64)] {
    match s {
        Stencil::Central => &[(-1.0, -0.5), (1.0, 0.5)],
        Stencil::Forward => &[(0.0, -1.0), (1.0, 1.0)],
        Stencil::Backward => &[(-1.0, -1.0), (0.0, 1.0)],
    }
}

fn second_weights(s: Stencil) -> &'static [(f64, f64)] {
    match s {
        Stencil::Central => &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
        Stencil::Forward => &[(0.0, 1.0), (1.0, -2.0), (2.0, 1.0)],
        Stencil::Backward => &[(-2.0, 1.0), (-1.0, -2.0), (0.0, 1.0)],
    }
}

/// Central differences with step [`gradient_step`]; a one-sided difference
/// replaces the central one where the stencil would leave the box.
pub fn gradient<F>(mut f: F, point: &[f64], bounds: Option<&ParamBox>) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    gradient_with_steps(&mut f, point, bounds, &point.iter().map(|&x| gradient_step(x)).collect::<Vec<_>>())
}

pub fn gradient_with_steps<F>(f: &mut F, point: &[f64], bounds: Option<&ParamBox>, steps: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = point.len();
    let mut grad = vec![0.0; m];
    let mut x = point.to_vec();
    let mut center: Option<f64> = None;
    for i in 0..m {
        let h = steps[i];
        let s = match bounds {
            Some(b) => stencil(point[i], h, b.lower()[i], b.upper()[i], 1.0),
            None => Stencil::Central,
        };
        let mut acc = 0.0;
        for &(off, c) in first_weights(s) {
            let v = if off == 0.0 {
                match center {
                    Some(v) => v,
                    None => {
                        let v = f(point)?;
                        center = Some(v);
                        v
                    }
                }
            } else {
                x[i] = point[i] + off * h;
                let v = f(&x)?;
                x[i] = point[i];
                v
            };
            acc += c * v;
        }
        grad[i] = acc / h;
    }
    Ok(grad)
}

/// Symmetric finite-difference Hessian (row-major m×m) with step [`hessian_step`].
pub fn hessian<F>(mut f: F, point: &[f64], bounds: Option<&ParamBox>) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = point.len();
    let steps: Vec<f64> = point.iter().map(|&x| hessian_step(x)).collect();
    let stencils: Vec<Stencil> = (0..m)
        .map(|i| match bounds {
            Some(b) => stencil(point[i], steps[i], b.lower()[i], b.upper()[i], 1.0),
            None => Stencil::Central,
        })
        .collect();
    let mut hess = vec![0.0; m * m];
    let mut x = point.to_vec();
    for i in 0..m {
        let mut acc = 0.0;
        for &(off, c) in second_weights(stencils[i]) {
            x[i] = point[i] + off * steps[i];
            acc += c * f(&x)?;
        }
        x[i] = point[i];
        hess[i * m + i] = acc / (steps[i] * steps[i]);
        for j in 0..i {
            let mut acc = 0.0;
            for &(oi, ci) in first_weights(stencils[i]) {
                for &(oj, cj) in first_weights(stencils[j]) {
                    x[i] = point[i] + oi * steps[i];
                    x[j] = point[j] + oj * steps[j];
                    acc += ci * cj * f(&x)?;
                }
            }
            x[i] = point[i];
            x[j] = point[j];
            let v = acc / (steps[i] * steps[j]);
            hess[i * m + j] = v;
            hess[j * m + i] = v;
        }
    }
    Ok(hess)
}
