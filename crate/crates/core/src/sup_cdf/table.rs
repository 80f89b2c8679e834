//! Precomputed bridge functional on a scaled grid.
//!
//! A BES(3) bridge of duration `u` ending at `e` is `√u` times a unit-time
//! bridge ending at `z = e/√u`, so `∫r = u^{3/2}·J₁` and `∫r² = u²·J₂` with
//! `(J₁, J₂)` the moments of the unit bridge. Writing `κ = l·u = s²` and
//! `c = (a-μ)·√l`, the bridge expectation becomes
//!
//! ```text
//! ln G = -s²c²/2 + s³c·m₁(z) - s⁴·m₂(z)/2 + R(z, s, c)
//! R    = ln E[exp(s³c·(J₁ - m₁) - s⁴·(J₂ - m₂)/2)]
//! ```
//!
//! with `m₁, m₂` the sample means at `z`. The explicit part is exact given
//! the means; only the small cumulant remainder `R` is interpolated.
//! Unit bridges at every `z` node share their driving noise (path `j` uses
//! stream `j`), which keeps `R` smooth across nodes.

use rayon::prelude::*;

use crate::bessel_bridge::{mean_exp, reversed_bridge_moments, PathMoments};
use crate::rng::{domain, StreamKey};

/// Node layout of the table. Queries outside the `(s, c)` box are answered
/// from the stored per-path moments instead of the interpolant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TableLayout {
    pub z_max: f64,
    pub z_nodes: usize,
    /// Upper end of `s = √(l·u)`.
    pub s_max: f64,
    pub s_nodes: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub c_nodes: usize,
}

impl Default for TableLayout {
    fn default() -> Self {
        Self { z_max: 7.0, z_nodes: 64, s_max: 2.5, s_nodes: 51, c_min: -7.5, c_max: 7.5, c_nodes: 61 }
    }
}

impl TableLayout {
    fn dz(&self) -> f64 {
        self.z_max / (self.z_nodes - 1) as f64
    }
    fn ds(&self) -> f64 {
        self.s_max / (self.s_nodes - 1) as f64
    }
    fn dc(&self) -> f64 {
        (self.c_max - self.c_min) / (self.c_nodes - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct TableKey {
    seed: u64,
    steps: usize,
    paths: usize,
    layout_bits: [u64; 7],
}

impl TableKey {
    pub(crate) fn new(seed: u64, steps: usize, paths: usize, layout: &TableLayout) -> Self {
        Self {
            seed,
            steps,
            paths,
            layout_bits: [
                layout.z_max.to_bits(),
                layout.z_nodes as u64,
                layout.s_max.to_bits(),
                layout.s_nodes as u64,
                layout.c_min.to_bits(),
                layout.c_max.to_bits(),
                layout.c_nodes as u64,
            ],
        }
    }
}

/// `ln G` and its relative Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LnG {
    pub value: f64,
    pub rel_se: f64,
}

pub struct BridgeTable {
    layout: TableLayout,
    m1: Vec<f64>,
    m2: Vec<f64>,
    resid: Vec<f64>,
    rel_se: Vec<f64>,
    moments: Vec<Vec<PathMoments>>,
    clamps: usize,
}

impl std::fmt::Debug for BridgeTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeTable")
            .field("layout", &self.layout)
            .field("paths", &self.moments.first().map_or(0, Vec::len))
            .field("clamps", &self.clamps)
            .finish()
    }
}

struct ZSlice {
    m1: f64,
    m2: f64,
    resid: Vec<f64>,
    rel_se: Vec<f64>,
    moments: Vec<PathMoments>,
}

impl BridgeTable {
    pub fn build(layout: TableLayout, steps: usize, paths: usize, seed: u64) -> Self {
        assert!(layout.z_nodes >= 2 && layout.s_nodes >= 2 && layout.c_nodes >= 2);
        let key = StreamKey::new(seed, domain::CDF_TABLE);
        let slices: Vec<ZSlice> = (0..layout.z_nodes)
            .into_par_iter()
            .map(|iz| build_slice(&layout, iz as f64 * layout.dz(), steps, paths, key))
            .collect();
        let mut table = Self {
            layout,
            m1: Vec::with_capacity(layout.z_nodes),
            m2: Vec::with_capacity(layout.z_nodes),
            resid: Vec::with_capacity(layout.z_nodes * layout.s_nodes * layout.c_nodes),
            rel_se: Vec::with_capacity(layout.z_nodes * layout.s_nodes * layout.c_nodes),
            moments: Vec::with_capacity(layout.z_nodes),
            clamps: 0,
        };
        for s in slices {
            table.m1.push(s.m1);
            table.m2.push(s.m2);
            table.resid.extend(s.resid);
            table.rel_se.extend(s.rel_se);
            table.clamps += s.moments.iter().map(|m| m.clamps).sum::<usize>();
            table.moments.push(s.moments);
        }
        table
    }

    pub fn layout(&self) -> &TableLayout {
        &self.layout
    }

    /// Total positivity-floor events over all simulated bridges.
    pub fn clamps(&self) -> usize {
        self.clamps
    }

    #[inline]
    fn idx(&self, iz: usize, is: usize, ic: usize) -> usize {
        (iz * self.layout.s_nodes + is) * self.layout.c_nodes + ic
    }

    /// `ln G(z, s, c)`; `None` when `z` exceeds `z_max`.
    pub fn ln_g(&self, z: f64, s: f64, c: f64) -> Option<LnG> {
        let lay = &self.layout;
        if !(z >= 0.0 && z <= lay.z_max) {
            return None;
        }
        let (iz, fz) = cell(z, lay.dz(), lay.z_nodes);
        let in_box = s <= lay.s_max && c >= lay.c_min && c <= lay.c_max;
        if !in_box {
            return Some(self.ln_g_from_moments(iz, fz, s, c));
        }
        let (is, fs) = cell(s, lay.ds(), lay.s_nodes);
        let (ic, fc) = cell(c - lay.c_min, lay.dc(), lay.c_nodes);
        let tri = |v: &[f64]| {
            let mut acc = 0.0;
            for (dz_, wz) in [(0, 1.0 - fz), (1, fz)] {
                for (ds_, ws) in [(0, 1.0 - fs), (1, fs)] {
                    for (dc_, wc) in [(0, 1.0 - fc), (1, fc)] {
                        acc += wz * ws * wc * v[self.idx(iz + dz_, is + ds_, ic + dc_)];
                    }
                }
            }
            acc
        };
        let m1 = self.m1[iz] * (1.0 - fz) + self.m1[iz + 1] * fz;
        let m2 = self.m2[iz] * (1.0 - fz) + self.m2[iz + 1] * fz;
        let (s2, s3) = (s * s, s * s * s);
        let explicit = -0.5 * s2 * c * c + s3 * c * m1 - 0.5 * s2 * s2 * m2;
        Some(LnG { value: explicit + tri(&self.resid), rel_se: tri(&self.rel_se) })
    }

    /// Exact average over the stored paths at the two bracketing `z` nodes,
    /// interpolated linearly in `z`.
    fn ln_g_from_moments(&self, iz: usize, fz: f64, s: f64, c: f64) -> LnG {
        let at = |i: usize| {
            let logs: Vec<f64> = self.moments[i]
                .iter()
                .map(|m| -0.5 * s.powi(4) * m.int_r2 + s.powi(3) * c * m.int_r - 0.5 * s * s * c * c)
                .collect();
            let (v, se) = mean_exp(&logs);
            (v.ln(), se / v)
        };
        let (v0, r0) = at(iz);
        let (v1, r1) = at(iz + 1);
        LnG { value: v0 * (1.0 - fz) + v1 * fz, rel_se: r0 * (1.0 - fz) + r1 * fz }
    }

    /// Same quantity evaluated directly at node `iz` (test hook).
    pub fn ln_g_at_node(&self, iz: usize, s: f64, c: f64) -> LnG {
        self.ln_g_from_moments(iz, 0.0, s, c)
    }

    pub fn z_node(&self, iz: usize) -> f64 {
        iz as f64 * self.layout.dz()
    }
}

#[inline]
fn cell(x: f64, step: f64, nodes: usize) -> (usize, f64) {
    let pos = (x / step).max(0.0);
    let i = (pos.floor() as usize).min(nodes - 2);
    (i, (pos - i as f64).min(1.0))
}

fn build_slice(lay: &TableLayout, z: f64, steps: usize, paths: usize, key: StreamKey) -> ZSlice {
    let moments: Vec<PathMoments> =
        (0..paths as u64).map(|j| reversed_bridge_moments(1.0, z, steps, &mut key.stream(j))).collect();
    let n = paths as f64;
    let m1 = moments.iter().map(|m| m.int_r).sum::<f64>() / n;
    let m2 = moments.iter().map(|m| m.int_r2).sum::<f64>() / n;
    let (ds, dc) = (lay.ds(), lay.dc());
    let mut resid = Vec::with_capacity(lay.s_nodes * lay.c_nodes);
    let mut rel_se = Vec::with_capacity(lay.s_nodes * lay.c_nodes);
    let mut acc = vec![0.0; lay.c_nodes];
    let mut acc2 = vec![0.0; lay.c_nodes];
    for is in 0..lay.s_nodes {
        let s = is as f64 * ds;
        let (s3, s4h) = (s.powi(3), 0.5 * s.powi(4));
        acc.iter_mut().for_each(|v| *v = 0.0);
        acc2.iter_mut().for_each(|v| *v = 0.0);
        // exp(c_k·A - B) by geometric recurrence over the uniform c grid
        for m in &moments {
            let a = s3 * (m.int_r - m1);
            let b = s4h * (m.int_r2 - m2);
            let mut w = (lay.c_min * a - b).exp();
            let ratio = (dc * a).exp();
            for k in 0..lay.c_nodes {
                acc[k] += w;
                acc2[k] += w * w;
                w *= ratio;
            }
        }
        for k in 0..lay.c_nodes {
            let c = lay.c_min + k as f64 * dc;
            let (mean, se) = if acc[k].is_finite() && acc2[k].is_finite() && acc[k] > 0.0 {
                let mean = acc[k] / n;
                let var = (acc2[k] / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
                (mean, (var / n).sqrt())
            } else {
                let logs: Vec<f64> = moments.iter().map(|m| c * s3 * (m.int_r - m1) - s4h * (m.int_r2 - m2)).collect();
                mean_exp(&logs)
            };
            resid.push(mean.ln());
            rel_se.push(se / mean);
        }
    }
    ZSlice { m1, m2, resid, rel_se, moments }
}
