//! Central finite differences with a Richardson fallback.

/// A derivative estimate from step `h`, plus the half-step estimate used to
/// judge it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdEstimate {
    pub value: f64,
    pub coarse: f64,
    pub fine: f64,
    pub extrapolated: bool,
}

pub fn central_first(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn central_second(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

fn with_fallback(rule: impl Fn(f64) -> f64, h: f64, tol: f64) -> FdEstimate {
    let coarse = rule(h);
    let fine = rule(h / 2.0);
    if (coarse - fine).abs() > 10.0 * tol {
        FdEstimate { value: (4.0 * fine - coarse) / 3.0, coarse, fine, extrapolated: true }
    } else {
        FdEstimate { value: coarse, coarse, fine, extrapolated: false }
    }
}

/// First derivative at step `h`; Richardson-extrapolated when the `h` and
/// `h/2` estimates disagree by more than `10 * tol`.
pub fn first_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64, tol: f64) -> FdEstimate {
    with_fallback(|s| central_first(&f, x, s), h, tol)
}

pub fn second_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64, tol: f64) -> FdEstimate {
    with_fallback(|s| central_second(&f, x, s), h, tol)
}
