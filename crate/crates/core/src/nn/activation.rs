/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Softplus,
    /// `x` for `x >= 0`, `slope * x` otherwise.
    LeakyRelu(f64),
}

/// `ln(1 + u)` for `u` in `[0, 1]`, accurate to a few ulps relative.
#[inline]
fn ln_1p_unit(u: f64) -> f64 {
    if u < 1e-4 {
        u * (1.0 - u * (0.5 - u * (1.0 / 3.0 - 0.25 * u)))
    } else {
        (1.0 + u).ln()
    }
}

/// `ln(1 + e^x)` without overflow: for `x > 0` this evaluates `x + ln(1 + e^-x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    x.max(0.0) + ln_1p_unit(e)
}

/// `(softplus(x), sigmoid(x))` sharing one exponential.
#[inline]
pub fn softplus_with_slope(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let value = x.max(0.0) + ln_1p_unit(e);
    let inv = 1.0 / (1.0 + e);
    let slope = if x >= 0.0 { inv } else { e * inv };
    (value, slope)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    softplus_with_slope(x).1
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Softplus => softplus(x),
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(x),
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    pub fn apply_slice(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}
