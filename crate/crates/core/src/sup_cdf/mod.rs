//! Distribution of the supremum (and infimum) of the OU process over `[0, t)`.
//!
//! With `U_s = X_{s/β} - μ` the rescaled process `dU = -l·U ds + dW`, the
//! supremum over `[0, t)` stays below `a` exactly when `U` has not hit
//! `b = a - μ` by time `T = t·β`. The hitting density from `u₀ = x - μ` is
//!
//! ```text
//! f(u) = exp(-(l/2)(b² - u₀² - u)) · e/√(2πu³) · exp(-e²/(2u)) · G(u, e),   e = b - u₀
//! ```
//!
//! where `G` is the Bessel-bridge expectation from [`crate::bessel_bridge`].
//! The `u` integral is taken in the variable `z = e/√u`, for which the
//! Brownian part of the density is the half-normal `√(2/π)·exp(-z²/2)`;
//! this removes the boundary layer at `u → 0` entirely. Midpoint sums are
//! used in `z` and in `e` for the stationary average over `X₀`.

mod table;

use std::collections::HashMap;
use std::f64::consts::{FRAC_2_PI, PI};
use std::sync::{Arc, Mutex, OnceLock};

use crate::bessel_bridge::{bridge_exponential_expectation, BridgeSpec, DEFAULT_STEP_SIZE, MIN_STEPS};
use crate::error::{Error, Result};
use crate::ou_process::OUParams;
use crate::rng::{domain, StreamKey};

use table::TableKey;
pub use table::{BridgeTable, LnG, TableLayout};

/// Numerical-integration configuration for the supremum CDF.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CdfGrid {
    /// Midpoint nodes for the hitting-time integral.
    pub u_steps: usize,
    /// Midpoint nodes for the integral over the starting point.
    pub x_nodes: usize,
    /// Lower truncation of the starting-point integral, in stationary sds.
    pub x_lower_sigmas: f64,
    /// Euler steps per unit bridge in the cached table.
    pub bridge_steps: usize,
    /// Monte Carlo paths per bridge expectation.
    pub bridge_paths: usize,
    /// Bridge time step for uncached evaluation (`steps = max(200, ⌈u/δ⌉)`).
    pub direct_step_size: f64,
    /// Seed of the frozen bridge ensemble (common random numbers).
    pub seed: u64,
    pub cache_enabled: bool,
    pub table: TableLayout,
    /// Reject evaluations whose propagated MC error exceeds this.
    pub max_mc_error: Option<f64>,
    /// Allowance for quadrature bias when deciding whether a value outside
    /// [0, 1] is plain noise (clipped) or an error.
    pub quadrature_tolerance: f64,
}

impl Default for CdfGrid {
    fn default() -> Self {
        Self {
            u_steps: 64,
            x_nodes: 64,
            x_lower_sigmas: 8.0,
            bridge_steps: 400,
            bridge_paths: crate::bessel_bridge::DEFAULT_PATHS,
            direct_step_size: DEFAULT_STEP_SIZE,
            seed: 0x0005_EED0_F00D,
            cache_enabled: true,
            table: TableLayout::default(),
            max_mc_error: None,
            quadrature_tolerance: 5e-3,
        }
    }
}

impl CdfGrid {
    /// Smaller ensemble for quick runs.
    pub fn quick() -> Self {
        Self { bridge_paths: 2_000, bridge_steps: 200, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_steps < 8 {
            return Err(Error::invalid("u_steps must be at least 8"));
        }
        if self.x_nodes < 8 {
            return Err(Error::invalid("x_nodes must be at least 8"));
        }
        if !(self.x_lower_sigmas >= 4.0) {
            return Err(Error::invalid("x_lower_sigmas must be at least 4"));
        }
        if self.bridge_steps < 2 || self.bridge_paths < 1 {
            return Err(Error::invalid("bridge ensemble needs >= 2 steps and >= 1 path"));
        }
        if !(self.direct_step_size > 0.0) {
            return Err(Error::invalid("direct_step_size must be positive"));
        }
        let t = &self.table;
        if t.z_nodes < 2 || t.s_nodes < 2 || t.c_nodes < 2 || !(t.z_max > 0.0 && t.s_max > 0.0 && t.c_max > t.c_min) {
            return Err(Error::invalid("degenerate table layout"));
        }
        Ok(())
    }
}

/// A probability with its propagated Monte Carlo error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfValue {
    pub p: f64,
    pub mc_error: f64,
    /// Value before clipping to [0, 1].
    pub raw: f64,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

type TableSlots = Mutex<HashMap<TableKey, Arc<OnceLock<Arc<BridgeTable>>>>>;

fn table_cache() -> &'static TableSlots {
    static CACHE: OnceLock<TableSlots> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Process-wide table for `grid`, built on first use. Concurrent callers
/// asking for the same key wait on one build.
pub fn shared_table(grid: &CdfGrid) -> Arc<BridgeTable> {
    let key = TableKey::new(grid.seed, grid.bridge_steps, grid.bridge_paths, &grid.table);
    let cell = {
        let mut map = table_cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key).or_default().clone()
    };
    cell.get_or_init(|| {
        let t0 = std::time::Instant::now();
        let t = BridgeTable::build(grid.table, grid.bridge_steps, grid.bridge_paths, grid.seed);
        log::info!("built bridge table ({} paths) in {:.1}s", grid.bridge_paths, t0.elapsed().as_secs_f64());
        Arc::new(t)
    })
    .clone()
}

/// Evaluator bound to one grid (and, when caching, one bridge table).
#[derive(Debug, Clone)]
pub struct SupCdf {
    grid: CdfGrid,
    table: Option<Arc<BridgeTable>>,
}

/// Value and variance accumulator of a hitting-probability integral.
#[derive(Debug, Clone, Copy, Default)]
struct Integral {
    value: f64,
    var: f64,
}

impl SupCdf {
    pub fn new(grid: CdfGrid) -> Result<Self> {
        grid.validate()?;
        let table = grid.cache_enabled.then(|| shared_table(&grid));
        Ok(Self { grid, table })
    }

    pub fn grid(&self) -> &CdfGrid {
        &self.grid
    }

    fn ln_g(&self, z: f64, e: f64, l: f64, offset: f64) -> Result<Option<LnG>> {
        match &self.table {
            Some(t) => {
                let s = z.recip() * e * l.sqrt();
                Ok(t.ln_g(z, s, offset * l.sqrt()))
            }
            None => {
                if z > self.grid.table.z_max {
                    return Ok(None);
                }
                let u = (e / z).powi(2);
                let steps = MIN_STEPS.max((u / self.grid.direct_step_size).ceil() as usize);
                let spec = BridgeSpec::new(u, e, steps, self.grid.bridge_paths)?;
                let key = StreamKey::new(self.grid.seed, domain::BRIDGE);
                let g = bridge_exponential_expectation(l, offset, &spec, key)?;
                Ok(Some(LnG { value: g.value.ln(), rel_se: g.std_error / g.value }))
            }
        }
    }

    /// `∫₀ᵀ exp(log_pref + u·l/2) · e/√(2πu³) · exp(-e²/2u) · G du` in the variable `z`.
    fn hit_integral(&self, e: f64, offset: f64, l: f64, horizon: f64, log_pref: f64) -> Result<Integral> {
        let z_max = self.grid.table.z_max;
        let z0 = e / horizon.sqrt();
        if z0 >= z_max {
            return Ok(Integral::default());
        }
        let n = self.grid.u_steps;
        let h = (z_max - z0) / n as f64;
        let log_norm = FRAC_2_PI.sqrt().ln();
        let mut out = Integral::default();
        for k in 0..n {
            let z = z0 + (k as f64 + 0.5) * h;
            let kappa = l * (e / z).powi(2);
            let Some(g) = self.ln_g(z, e, l, offset)? else { continue };
            let f = (log_norm - 0.5 * z * z + log_pref + 0.5 * kappa + g.value).exp() * h;
            out.value += f;
            out.var += (f * g.rel_se).powi(2);
        }
        Ok(out)
    }

    fn finish(&self, raw: f64, var: f64, what: &str) -> Result<CdfValue> {
        let mc_error = var.sqrt();
        if !raw.is_finite() {
            return Err(Error::Numerical(format!("{what}: non-finite value")));
        }
        let slack = 2.0 * mc_error + self.grid.quadrature_tolerance;
        if raw < -slack || raw > 1.0 + slack {
            return Err(Error::Numerical(format!("{what}: value {raw} outside [0, 1] beyond tolerance {slack:.2e}")));
        }
        if let Some(max) = self.grid.max_mc_error {
            if mc_error > max {
                return Err(Error::Numerical(format!(
                    "{what}: Monte Carlo error {mc_error:.2e} exceeds requested {max:.2e}; increase bridge_paths"
                )));
            }
        }
        let p = raw.clamp(0.0, 1.0);
        if p != raw {
            log::debug!("{what}: clipped raw value {raw} to {p}");
        }
        Ok(CdfValue { p, mc_error, raw })
    }

    fn check(params: &OUParams, t: f64) -> Result<()> {
        params.validate()?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::invalid("time window t must be positive"));
        }
        Ok(())
    }

    /// `P(S_[0,t) <= a | X₀ = x)`.
    pub fn conditional_sup(&self, a: f64, params: &OUParams, t: f64, x: f64) -> Result<CdfValue> {
        Self::check(params, t)?;
        if a <= x {
            return Ok(CdfValue { p: 0.0, mc_error: 0.0, raw: 0.0 });
        }
        let (b, u0) = (a - params.mu, x - params.mu);
        let l = params.l;
        let hit = self.hit_integral(a - x, b, l, t * params.beta, -0.5 * l * (b * b - u0 * u0))?;
        self.finish(1.0 - hit.value, hit.var, "conditional_sup_cdf")
    }

    /// `P(I_[0,t) <= a | X₀ = x)`: the hitting probability of the level
    /// `a < x` from above, i.e. the supremum problem reflected about `μ`.
    pub fn conditional_inf(&self, a: f64, params: &OUParams, t: f64, x: f64) -> Result<CdfValue> {
        Self::check(params, t)?;
        if x <= a {
            return Ok(CdfValue { p: 0.0, mc_error: 0.0, raw: 0.0 });
        }
        let (b, u0) = (a - params.mu, x - params.mu);
        let l = params.l;
        let hit = self.hit_integral(x - a, -b, l, t * params.beta, -0.5 * l * (b * b - u0 * u0))?;
        self.finish(hit.value, hit.var, "conditional_inf_cdf")
    }

    /// `P(S_[0,t) <= a)` under the stationary law of `X₀`.
    pub fn stationary_sup(&self, a: f64, params: &OUParams, t: f64) -> Result<CdfValue> {
        Self::check(params, t)?;
        let (mu, l) = (params.mu, params.l);
        let b = a - mu;
        let base = normal_cdf(b * (2.0 * l).sqrt());
        let x_lo = mu - self.grid.x_lower_sigmas * params.stationary_sd();
        let horizon = t * params.beta;
        // starts farther than z_max·√horizon below a never hit in the quadrature
        let e_max = (a - x_lo).min(self.grid.table.z_max * horizon.sqrt());
        if e_max <= 0.0 {
            return self.finish(base, 0.0, "stationary_sup_cdf");
        }
        let n = self.grid.x_nodes;
        let he = e_max / n as f64;
        let log_density_norm = 0.5 * (l / PI).ln();
        let mut deficit = Integral::default();
        for k in 0..n {
            let e = (k as f64 + 0.5) * he;
            let u0 = b - e;
            // stationary density times the conditional prefactor, in logs
            let log_pref = log_density_norm - 0.5 * l * (b * b + u0 * u0);
            let hit = self.hit_integral(e, b, l, horizon, log_pref)?;
            deficit.value += hit.value * he;
            deficit.var += hit.var * he * he;
        }
        self.finish(base - deficit.value, deficit.var, "stationary_sup_cdf")
    }

    /// Level `a` with `stationary_sup(a) = p`, by bisection on
    /// `[μ - 10σ, μ + 10σ]` down to a bracket of 1e-3 °C.
    pub fn sup_inverse(&self, p: f64, params: &OUParams, t: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("probability must lie in (0, 1), got {p}")));
        }
        let sd = params.stationary_sd();
        let (mut lo, mut hi) = (params.mu - 10.0 * sd, params.mu + 10.0 * sd);
        let f_lo = self.stationary_sup(lo, params, t)?;
        let f_hi = self.stationary_sup(hi, params, t)?;
        if p < f_lo.p || p > f_hi.p {
            return Err(Error::Numerical(format!(
                "probability {p} outside the attainable range [{:.3e}, {:.6}] of the bracket",
                f_lo.p, f_hi.p
            )));
        }
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            let f = self.stationary_sup(mid, params, t)?;
            if f.p < p {
                lo = mid;
            } else {
                hi = mid;
            }
            // once p sits inside the Monte Carlo band, further halving is noise
            if (f.p - p).abs() < 0.1 * f.mc_error {
                return Ok(mid);
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn conditional_sup_cdf(a: f64, params: &OUParams, t: f64, x: f64, grid: &CdfGrid) -> Result<CdfValue> {
    SupCdf::new(*grid)?.conditional_sup(a, params, t, x)
}

pub fn stationary_sup_cdf(a: f64, params: &OUParams, t: f64, grid: &CdfGrid) -> Result<CdfValue> {
    SupCdf::new(*grid)?.stationary_sup(a, params, t)
}

pub fn conditional_inf_cdf(a: f64, params: &OUParams, t: f64, x: f64, grid: &CdfGrid) -> Result<CdfValue> {
    SupCdf::new(*grid)?.conditional_inf(a, params, t, x)
}

pub fn sup_cdf_inverse(p: f64, params: &OUParams, t: f64, grid: &CdfGrid) -> Result<f64> {
    SupCdf::new(*grid)?.sup_inverse(p, params, t)
}
