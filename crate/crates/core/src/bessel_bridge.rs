//! Three-dimensional Bessel bridge simulation.
//!
//! The hitting-time density of the OU process carries the functional
//! `E[exp(-(l²/2) ∫₀ᵘ (r_s - b)² ds)]` where `r` is a BES(3) bridge from 0 to
//! `e > 0` over `[0, u]`. The forward bridge starts at 0, where Euler cannot
//! be applied, so we simulate the time-reversed bridge `r̃_s = r_{u-s}`:
//!
//! ```text
//! dr̃_s = (-r̃_s / (u - s) + 1 / r̃_s) ds + dB_s,   r̃_0 = e,  r̃_u = 0
//! ```
//!
//! Integrals of the path are invariant under reversal, so the functional can
//! be evaluated directly on `r̃`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, StreamKey};

/// Grid resolution used by [`BridgeSpec::default_steps`], in bridge time units.
pub const DEFAULT_STEP_SIZE: f64 = 5e-3;
/// Lower bound on the Euler step count of any bridge.
pub const MIN_STEPS: usize = 200;
/// Monte Carlo size per node.
pub const DEFAULT_PATHS: usize = 10_000;
/// Clamp floor relative to the starting value.
const FLOOR_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSpec {
    /// Bridge duration.
    pub u: f64,
    /// Terminal value of the forward bridge (`a - x`), start of the reversed one.
    pub endpoint: f64,
    pub steps: usize,
    pub paths: usize,
}

impl BridgeSpec {
    pub fn new(u: f64, endpoint: f64, steps: usize, paths: usize) -> Result<Self> {
        let spec = Self { u, endpoint, steps, paths };
        spec.validate()?;
        Ok(spec)
    }

    /// `steps = max(200, ceil(u / 5e-3))`, `paths = 10_000`.
    pub fn with_default_grid(u: f64, endpoint: f64) -> Result<Self> {
        Self::new(u, endpoint, Self::default_steps(u), DEFAULT_PATHS)
    }

    pub fn default_steps(u: f64) -> usize {
        MIN_STEPS.max((u / DEFAULT_STEP_SIZE).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::invalid("bridge duration u must be positive"));
        }
        if !(self.endpoint > 0.0 && self.endpoint.is_finite()) {
            return Err(Error::invalid("bridge endpoint must be positive"));
        }
        if self.steps < 2 {
            return Err(Error::invalid("bridge needs at least 2 Euler steps"));
        }
        if self.paths < 1 {
            return Err(Error::invalid("bridge expectation needs at least one path"));
        }
        Ok(())
    }
}

/// Discretised reversed bridge, `values[k] = r̃(k·u/steps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgePath {
    pub u: f64,
    pub values: Vec<f64>,
    /// Number of Euler steps that fell under the positivity floor.
    pub clamps: usize,
}

impl BridgePath {
    pub fn step(&self) -> f64 {
        self.u / (self.values.len() - 1) as f64
    }

    /// The forward bridge `r_s = r̃_{u-s}` on the same grid.
    pub fn forward(&self) -> Vec<f64> {
        self.values.iter().rev().copied().collect()
    }
}

/// Left Riemann sums of a bridge path: `∫ r ds` and `∫ r² ds`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathMoments {
    pub int_r: f64,
    pub int_r2: f64,
    pub clamps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeExpectation {
    pub value: f64,
    pub std_error: f64,
    pub clamps: usize,
}

/// Core Euler loop. `visit(k, r)` sees every grid value from `k = 0`
/// (the start `e`) to `k = steps` (pinned to 0).
fn euler_reversed<R: Rng + ?Sized>(
    u: f64,
    endpoint: f64,
    steps: usize,
    rng: &mut R,
    mut visit: impl FnMut(usize, f64),
) -> usize {
    let h = u / steps as f64;
    let sqrt_h = h.sqrt();
    let floor = FLOOR_FRACTION * endpoint;
    let mut clamps = 0;
    let mut r = endpoint;
    visit(0, r);
    for k in 0..steps - 1 {
        // Drift-implicit step: solve c·r² - y·r - h = 0 for the positive root,
        // with c = 1 + h/(u - s_{k+1}) and y = r_k + √h·Z.
        let remaining = u - (k + 1) as f64 * h;
        let c = 1.0 + h / remaining;
        let y = r + sqrt_h * standard_normal(rng);
        r = (y + (y * y + 4.0 * c * h).sqrt()) / (2.0 * c);
        if r < floor {
            r = floor;
            clamps += 1;
        }
        visit(k + 1, r);
    }
    // The 1/(u-s) drift is singular on the last cell; pin instead of stepping.
    visit(steps, 0.0);
    clamps
}

pub fn simulate_reversed_bridge<R: Rng + ?Sized>(spec: &BridgeSpec, rng: &mut R) -> Result<BridgePath> {
    spec.validate()?;
    let mut values = vec![0.0; spec.steps + 1];
    let clamps = euler_reversed(spec.u, spec.endpoint, spec.steps, rng, |k, r| values[k] = r);
    Ok(BridgePath { u: spec.u, values, clamps })
}

/// Riemann-sum moments of one reversed bridge without storing the path.
pub fn reversed_bridge_moments<R: Rng + ?Sized>(u: f64, endpoint: f64, steps: usize, rng: &mut R) -> PathMoments {
    let h = u / steps as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    let clamps = euler_reversed(u, endpoint, steps, rng, |k, r| {
        if k < steps {
            s1 += r;
            s2 += r * r;
        }
    });
    PathMoments { int_r: s1 * h, int_r2: s2 * h, clamps }
}

/// Log of `exp(-(l²/2) ∫ (r - offset)² ds)` for one path.
#[inline]
pub fn log_functional(l: f64, offset: f64, u: f64, m: &PathMoments) -> f64 {
    let quad = m.int_r2 - 2.0 * offset * m.int_r + offset * offset * u;
    -0.5 * l * l * quad.max(0.0)
}

/// Mean and standard error of `exp(x_i)` given the `x_i`, computed in a
/// scaled form so very negative exponents do not underflow to zero.
pub fn mean_exp(logs: &[f64]) -> (f64, f64) {
    let n = logs.len();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || max == f64::NEG_INFINITY {
        return (0.0, 0.0);
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for &x in logs {
        let w = (x - max).exp();
        s += w;
        s2 += w * w;
    }
    let mean_w = s / n as f64;
    let var_w = if n > 1 { ((s2 / n as f64) - mean_w * mean_w).max(0.0) * n as f64 / (n - 1) as f64 } else { 0.0 };
    let scale = max.exp();
    let value = (mean_w * scale).max(f64::MIN_POSITIVE);
    let se = (var_w / n as f64).sqrt() * scale;
    (value, se)
}

/// Monte Carlo estimate of `E[exp(-(l²/2) ∫₀ᵘ (r_s - offset)² ds)]`.
///
/// Path `j` draws from stream `j` of `key`, so results are identical for
/// any thread count and two calls with the same key share their paths
/// (common random numbers across `l` and `offset`).
pub fn bridge_exponential_expectation(
    l: f64,
    offset: f64,
    spec: &BridgeSpec,
    key: StreamKey,
) -> Result<BridgeExpectation> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::invalid("l must be positive"));
    }
    spec.validate()?;
    let moments = simulate_moments(spec, key);
    Ok(expectation_from_moments(l, offset, spec.u, &moments))
}

/// Simulate `spec.paths` reversed bridges and keep only their moments.
pub fn simulate_moments(spec: &BridgeSpec, key: StreamKey) -> Vec<PathMoments> {
    (0..spec.paths as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = key.stream(j);
            reversed_bridge_moments(spec.u, spec.endpoint, spec.steps, &mut rng)
        })
        .collect()
}

pub fn expectation_from_moments(l: f64, offset: f64, u: f64, moments: &[PathMoments]) -> BridgeExpectation {
    let logs: Vec<f64> = moments.iter().map(|m| log_functional(l, offset, u, m)).collect();
    let (value, std_error) = mean_exp(&logs);
    BridgeExpectation { value: value.min(1.0), std_error, clamps: moments.iter().map(|m| m.clamps).sum() }
}
