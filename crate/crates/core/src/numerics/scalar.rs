//! Numerically stable scalar links used by the objectives.

/// Logistic sigmoid, stable for inputs of any magnitude.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `softplus(x) = ln(1 + exp(x))` without overflow; `softplus(x) = -ln
/// sigmoid(-x)`, so `-ln sigmoid(m) = softplus(-m)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

/// `ln sigmoid(x)`, stable for large negative `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}
