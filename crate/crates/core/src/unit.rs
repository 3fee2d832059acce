//! AMOS units: parameter sets, the sequential reference evaluator, the
//! closed-form ReLU unit and parameter accounting.
//!
//! A unit of `K` threshold gates evaluates, for `i = 1..K` in order,
//!
//! ```text
//! H_i = sum_{j<i} h_ij * z_j
//! z_i = step(c_i * x [+ c2_i * x2] - H_i - T_i)
//! y   = sum_i d_i * z_i
//! ```
//!
//! where `step(v) = 1` iff `v >= 0`. Every neuron fires at most once per
//! evaluation. This evaluator is the reference the clocked simulator is
//! checked against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("unit has arity {expected}, got {got} input(s)")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid unit parameters: {0}")]
    Invalid(String),
    #[error("unknown gate kind `{0}`")]
    UnknownKind(String),
}

/// Nonlinear ANN gates that have a reference implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Relu,
    Sigmoid,
    Swish,
    Mult,
}

impl GateKind {
    pub const ALL: [GateKind; 4] = [GateKind::Relu, GateKind::Sigmoid, GateKind::Swish, GateKind::Mult];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Mult => 2,
            _ => 1,
        }
    }

    /// Unit size used for this gate kind when nothing else is specified.
    pub fn default_k(self) -> usize {
        match self {
            GateKind::Relu => 10,
            GateKind::Sigmoid => 8,
            GateKind::Swish => 12,
            GateKind::Mult => 40,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::Relu => "relu",
            GateKind::Sigmoid => "sigmoid",
            GateKind::Swish => "swish",
            GateKind::Mult => "mult",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateKind {
    type Err = UnitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(GateKind::Relu),
            "sigmoid" => Ok(GateKind::Sigmoid),
            "swish" => Ok(GateKind::Swish),
            "mult" => Ok(GateKind::Mult),
            other => Err(UnitError::UnknownKind(other.to_string())),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Exact floating-point value of the gate `kind` on `inputs`.
pub fn reference_activation(kind: GateKind, inputs: &[f64]) -> Result<f64, UnitError> {
    if inputs.len() != kind.arity() {
        return Err(UnitError::ArityMismatch { expected: kind.arity(), got: inputs.len() });
    }
    Ok(match kind {
        GateKind::Relu => inputs[0].max(0.0),
        GateKind::Sigmoid => sigmoid(inputs[0]),
        GateKind::Swish => swish(inputs[0]),
        GateKind::Mult => inputs[0] * inputs[1],
    })
}

/// Heaviside step with `step(0) = 1`.
pub fn heaviside(v: f64) -> Result<u8, UnitError> {
    if !v.is_finite() {
        return Err(UnitError::NonFinite(v));
    }
    Ok(u8::from(v >= 0.0))
}

/// `(2 + arity) * K + K (K - 1) / 2`: the `c`, optional `c2`, `d` and `T`
/// vectors plus the strictly lower triangle of `h`.
///
/// Panics if `arity` is not 1 or 2 or `k` is zero.
pub fn parameter_count(arity: usize, k: usize) -> usize {
    assert!(arity == 1 || arity == 2, "arity must be 1 or 2, got {arity}");
    assert!(k >= 1, "K must be positive");
    (2 + arity) * k + k * (k - 1) / 2
}

/// Index of `h_ij` (0-based, `j < i`) in the row-major lower-triangular list.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

/// Parameter set of one AMOS unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmosUnitParams {
    pub arity: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Vec<f64>>,
    pub d: Vec<f64>,
    /// Row-major strictly lower triangle: `h_10, h_20, h_21, h_30, ...`.
    pub h: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    /// Gate this unit approximates; absent for user-supplied targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<GateKind>,
    /// Input interval per operand the unit was built or trained for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
}

/// Result of one reference evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEvaluation {
    pub y: f64,
    pub z: Vec<u8>,
    pub spike_count: usize,
}

impl AmosUnitParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(arity: usize, k: usize) -> Self {
        AmosUnitParams {
            arity,
            k,
            c: vec![0.0; k],
            c2: (arity == 2).then(|| vec![0.0; k]),
            d: vec![0.0; k],
            h: vec![0.0; k * k.saturating_sub(1) / 2],
            t: vec![0.0; k],
            kind: None,
            domain: None,
        }
    }

    pub fn validate(&self) -> Result<(), UnitError> {
        let k = self.k;
        if k == 0 {
            return Err(UnitError::Invalid("K must be positive".into()));
        }
        if self.arity != 1 && self.arity != 2 {
            return Err(UnitError::Invalid(format!("arity must be 1 or 2, got {}", self.arity)));
        }
        let check = |name: &str, v: &[f64], len: usize| -> Result<(), UnitError> {
            if v.len() != len {
                return Err(UnitError::Invalid(format!("`{name}` has length {}, expected {len}", v.len())));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(UnitError::Invalid(format!("`{name}` contains non-finite value {bad}")));
            }
            Ok(())
        };
        check("c", &self.c, k)?;
        check("d", &self.d, k)?;
        check("T", &self.t, k)?;
        check("h", &self.h, k * (k - 1) / 2)?;
        match (&self.c2, self.arity) {
            (Some(c2), 2) => check("c2", c2, k)?,
            (None, 1) => {}
            (Some(_), _) => return Err(UnitError::Invalid("`c2` present on a unary unit".into())),
            (None, _) => return Err(UnitError::Invalid("`c2` missing on a binary unit".into())),
        }
        if let Some(kind) = self.kind {
            if kind.arity() != self.arity {
                return Err(UnitError::Invalid(format!(
                    "kind `{kind}` has arity {} but unit has arity {}",
                    kind.arity(),
                    self.arity
                )));
            }
        }
        if let Some(domain) = &self.domain {
            if domain.len() != self.arity {
                return Err(UnitError::Invalid("`domain` needs one interval per input".into()));
            }
            if domain.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                return Err(UnitError::Invalid("`domain` intervals must be finite with lo < hi".into()));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn h_at(&self, i: usize, j: usize) -> f64 {
        self.h[tri_index(i, j)]
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.arity, self.k)
    }

    /// Pre-activation `c_i x [+ c2_i x2]` of neuron `i`, before inhibition and threshold.
    #[inline]
    pub(crate) fn drive(&self, i: usize, x: f64, x2: f64) -> f64 {
        match &self.c2 {
            Some(c2) => self.c[i] * x + c2[i] * x2,
            None => self.c[i] * x,
        }
    }

    /// Sequential forward pass writing the spike pattern into `z` and
    /// (optionally) the net inputs into `v`. Inputs are assumed finite.
    pub(crate) fn forward_raw(&self, x: f64, x2: f64, z: &mut [bool], mut v: Option<&mut [f64]>) -> f64 {
        let mut y = 0.0;
        for i in 0..self.k {
            let mut inhibition = 0.0;
            let row = i * i.saturating_sub(1) / 2;
            for j in 0..i {
                if z[j] {
                    inhibition += self.h[row + j];
                }
            }
            let net = self.drive(i, x, x2) - inhibition - self.t[i];
            if let Some(v) = v.as_deref_mut() {
                v[i] = net;
            }
            z[i] = net >= 0.0;
            if z[i] {
                y += self.d[i];
            }
        }
        y
    }

    /// Reference output `y` only.
    pub fn output(&self, x: f64, x2: Option<f64>) -> Result<f64, UnitError> {
        Ok(self.evaluate(x, x2)?.y)
    }

    pub fn evaluate(&self, x: f64, x2: Option<f64>) -> Result<UnitEvaluation, UnitError> {
        let got = 1 + usize::from(x2.is_some());
        if got != self.arity {
            return Err(UnitError::ArityMismatch { expected: self.arity, got });
        }
        for v in std::iter::once(x).chain(x2) {
            if !v.is_finite() {
                return Err(UnitError::NonFinite(v));
            }
        }
        let mut z = vec![false; self.k];
        let y = self.forward_raw(x, x2.unwrap_or(0.0), &mut z, None);
        let spike_count = z.iter().filter(|&&s| s).count();
        Ok(UnitEvaluation { y, z: z.into_iter().map(u8::from).collect(), spike_count })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("unit params always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, UnitError> {
        let p: AmosUnitParams = serde_json::from_str(s).map_err(|e| UnitError::Invalid(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

pub fn evaluate_unit(params: &AmosUnitParams, x: f64, x2: Option<f64>) -> Result<UnitEvaluation, UnitError> {
    params.evaluate(x, x2)
}

/// Untrained ReLU unit: binary extraction of `clamp(x, 0, alpha)`.
///
/// `c_i = 1`, `T_i = d_i = alpha 2^-i`, `h_ij = alpha 2^-j`. For `x <= alpha`
/// the output is `ReLU(x)` rounded down to a multiple of `alpha 2^-K`.
/// `alpha = 2^K` gives integer thresholds `2^(K-i)`.
pub fn build_relu_unit(k: usize, alpha: f64) -> Result<AmosUnitParams, UnitError> {
    if k == 0 {
        return Err(UnitError::Invalid("K must be positive".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(UnitError::Invalid(format!("alpha must be positive and finite, got {alpha}")));
    }
    // exponents are 1-based
    let weight = |i: usize| alpha * 0.5f64.powi(i as i32 + 1);
    let mut p = AmosUnitParams::zeros(1, k);
    for i in 0..k {
        p.c[i] = 1.0;
        p.t[i] = weight(i);
        p.d[i] = weight(i);
        for j in 0..i {
            p.h[tri_index(i, j)] = weight(j);
        }
    }
    p.kind = Some(GateKind::Relu);
    p.domain = Some(vec![[-alpha, alpha]]);
    Ok(p)
}
