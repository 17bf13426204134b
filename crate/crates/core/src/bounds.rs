//! Closed-form constants of the moment, decay and log-Harnack estimates, the hypothesis
//! checks on `nu`, and truncation-certified values of the bilinear constants `C1`, `C2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{NoiseOperator, PhysicsParams};
use crate::error::{Error, Result};
use crate::nonlinearity::BilinearWorkspace;
use crate::rng::{path_rng, Purpose};
use crate::spectral::{mode_norm_sq, FourierField, SpectralGrid};

/// Radius up to which the lattice sum in `C1` is summed directly.
pub const C1_DIRECT_RADIUS: i64 = 100;

/// Multiplier applied to the numerically found maximum of the `C2` ratio.
pub const C2_SAFETY: f64 = 1.5;

/// `sum_{0<|k|<=r} |k|^{-4}` over the integer lattice.
pub fn lattice_sum_inv4(r: i64) -> f64 {
    let mut s = 0.0;
    for k1 in -r..=r {
        for k2 in -r..=r {
            let n = mode_norm_sq([k1 as i32, k2 as i32]);
            if n > 0 && n <= r * r {
                s += 1.0 / (n * n) as f64;
            }
        }
    }
    s
}

/// Upper bound on `sum_{|k|>r} |k|^{-4}`.
pub fn lattice_tail_inv4(r: i64) -> f64 {
    2.0 * PI / (r * r) as f64
}

/// `C1` valid on truncation `N`: `|<x, B(y, z)>| <= C1 |x| |y| |A^{3/2} z|`.
///
/// `|grad z|_inf <= (2 pi)^{-1} sum |k| |z_k|`, then Cauchy-Schwarz against `|k|^{-4}`.
pub fn constant_c1(grid: &SpectralGrid) -> f64 {
    let n = grid.n() as i64;
    let mut s = lattice_sum_inv4(n.min(C1_DIRECT_RADIUS));
    if n > C1_DIRECT_RADIUS {
        s += lattice_tail_inv4(C1_DIRECT_RADIUS);
    }
    s.sqrt() / (2.0 * PI)
}

/// `|<x, B(y, z)>| / (|x|^{1/2} |A^{1/2}x|^{1/2} |y|^{1/2} |A^{1/2}y|^{1/2} |A^{1/2}z|)`.
pub fn c2_ratio(ws: &BilinearWorkspace, x: &FourierField, y: &FourierField, z: &FourierField) -> Result<f64> {
    let t = x.inner(&ws.bilinear(y, z)?)?;
    let d = (x.norm() * x.sobolev_norm(0.5) * y.norm() * y.sobolev_norm(0.5)).sqrt() * z.sobolev_norm(0.5);
    Ok(if d > 0.0 { t.abs() / d } else { 0.0 })
}

/// Outcome of the numerical `C2` search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct C2Certificate {
    /// `C2_SAFETY * max_m raw[m]`.
    pub value: f64,
    /// Best ratio found on each truncation `m = 1..=N`.
    pub raw: Vec<f64>,
    pub safety: f64,
}

fn random_triple_member(grid: &Arc<SpectralGrid>, rng: &mut ChaCha8Rng) -> FourierField {
    let decay: f64 = rng.random_range(0.0..2.5);
    let sparse = rng.random_bool(0.5);
    let amps = (0..grid.len())
        .map(|i| {
            if sparse && rng.random_bool(0.7) {
                return Complex64::new(0.0, 0.0);
            }
            let w = grid.norm_sq(i).powf(-0.5 * decay);
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex64::new(a * w, b * w)
        })
        .collect();
    FourierField::from_amplitudes(grid, amps).expect("length matches grid")
}

fn normalized(f: &FourierField) -> FourierField {
    let n = f.norm();
    if n > 0.0 {
        f * (1.0 / n)
    } else {
        f.clone()
    }
}

/// Local ascent of `log ratio` from one starting triple.
fn ascend(ws: &BilinearWorkspace, mut w: [FourierField; 3], iters: usize) -> Result<f64> {
    let mut best = c2_ratio(ws, &w[0], &w[1], &w[2])?;
    let mut eta = 0.3;
    for _ in 0..iters {
        let (t, gx, gy, gz) = ws.trilinear_gradients(&w[0], &w[1], &w[2])?;
        if t == 0.0 {
            break;
        }
        let [x, y, z] = &w;
        let mut g = [&gx * (1.0 / t), &gy * (1.0 / t), &gz * (1.0 / t)];
        g[0].axpy(-0.5 / x.norm_sq(), x);
        g[0].axpy(-0.5 / x.h1_norm_sq(), &x.stokes_apply(1.0));
        g[1].axpy(-0.5 / y.norm_sq(), y);
        g[1].axpy(-0.5 / y.h1_norm_sq(), &y.stokes_apply(1.0));
        g[2].axpy(-1.0 / z.h1_norm_sq(), &z.stokes_apply(1.0));
        let gn = g.iter().map(|f| f.norm_sq()).sum::<f64>().sqrt();
        if !(gn > 1e-12) {
            break;
        }
        let mut improved = false;
        while eta > 1e-8 {
            let trial: [FourierField; 3] = std::array::from_fn(|i| {
                let mut f = w[i].clone();
                f.axpy(eta / gn, &g[i]);
                normalized(&f)
            });
            let r = c2_ratio(ws, &trial[0], &trial[1], &trial[2])?;
            if r > best {
                best = r;
                w = trial;
                eta *= 1.5;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

/// Best ratio found on truncation `m` with deterministic restarts.
pub fn c2_search(grid: &Arc<SpectralGrid>, restarts: usize, iters: usize) -> Result<f64> {
    let ws = BilinearWorkspace::new(grid);
    let mut rng = path_rng(0xc2, Purpose::Inputs, grid.n() as u64);
    let mut best: f64 = 0.0;
    for _ in 0..restarts {
        let w = std::array::from_fn(|_| normalized(&random_triple_member(grid, &mut rng)));
        best = best.max(ascend(&ws, w, iters)?);
    }
    Ok(best)
}

/// Certified `C2` on truncation `N`: maximum over all sub-truncations `m <= N`, so the
/// value is monotone in `N`, times [`C2_SAFETY`].
pub fn constant_c2(grid: &SpectralGrid) -> Result<C2Certificate> {
    let mut raw = Vec::with_capacity(grid.n() as usize);
    for m in 1..=grid.n() {
        let g = SpectralGrid::new(m)?;
        raw.push(c2_search(&g, 16, 120)?);
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    Ok(C2Certificate {
        value: C2_SAFETY * max,
        raw,
        safety: C2_SAFETY,
    })
}

/// All constants entering the estimates, for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub trace_qq: f64,
    pub nu: f64,
    pub n0: u32,
}

fn factorial(p: u32) -> f64 {
    (1..=p).map(f64::from).product()
}

impl BoundConstants {
    pub fn new(params: &PhysicsParams, noise: &NoiseOperator, c1: f64, c2: f64) -> Self {
        Self {
            c0: noise.c0(),
            c1,
            c2,
            trace_qq: noise.trace_qq(),
            nu: params.nu,
            n0: params.n0,
        }
    }

    fn n0f(&self) -> f64 {
        self.n0 as f64
    }

    /// Exponent `nu N0^2 - tr(QQ*)/2` of `delta(t)`.
    pub fn delta_rate(&self) -> f64 {
        self.nu * self.n0f().powi(2) - 0.5 * self.trace_qq
    }

    pub fn delta(&self, t: f64) -> f64 {
        (-self.delta_rate() * t).exp()
    }

    fn require(name: &str, lhs: f64, rhs: f64) -> Result<()> {
        if lhs > rhs {
            Ok(())
        } else {
            Err(Error::Hypothesis {
                name: name.into(),
                lhs,
                rhs,
            })
        }
    }

    /// Hypothesis of the high-frequency decay lemma for moment order `p`.
    pub fn require_decay(&self, p: u32) -> Result<()> {
        let rhs = (self.c2 * (p as f64 / 2.0).sqrt()).max(2.0 * self.trace_qq);
        Self::require(&format!("nu > max(C2 sqrt(p/2), 2 trQQ) [p = {p}]"), self.nu, rhs)
    }

    /// High-frequency moment constant `K_p` for `|x - y| = z`.
    pub fn kp(&self, p: u32, z: f64) -> Result<f64> {
        if p == 0 {
            return Err(Error::InvalidParameter("K_p needs p >= 1".into()));
        }
        self.require_decay(p)?;
        let (c1, c2, nu, n0) = (self.c1, self.c2, self.nu, self.n0f());
        let pf = p as f64;
        let expo = c1 * pf * n0.powi(2) * (z * z + z) + c1 * pf * n0.powi(3) / 2.0 + self.trace_qq;
        let first = (1.0 + c1 * n0.powi(3) + nu * n0.powi(2) / 4.0).powi(p as i32);
        let second = factorial(p)
            * (c2 * c2 / (4.0 * nu) + c1 * n0.powi(3) / 2.0).powi(p as i32)
            * (c2 * c2 * pf / (4.0 * nu)).powi(-(p as i32));
        Ok(2f64.powi(p as i32 - 1) * expo.exp() * (first + second))
    }

    /// `(L1, L2, L3, L4)` of the control-energy bound, for `|y| = y` and `|x - y| = z`.
    pub fn l_constants(&self, y: f64, z: f64) -> Result<[f64; 4]> {
        let (c0, c1, nu, n0, tr) = (self.c0, self.c1, self.nu, self.n0f(), self.trace_qq);
        Self::require("4 nu N0^2 > trQQ", 4.0 * nu * n0 * n0, tr)?;
        Self::require("2 nu N0^2 > trQQ", 2.0 * nu * n0 * n0, tr)?;
        let k2 = self.kp(2, z)?;
        let ey = (y * y).exp();
        let n06 = n0.powi(6);
        let l1 = 24.0 * c0 * c0 * c1 * c1 * n06 * (1.0 + k2 * ey);
        let l2 = 3.0
            * c0
            * c0
            * (4.0 * n0.powi(4)
                + 4.0 * 2f64.sqrt() * c1 * c1 * n06 * (1.0 + k2 * ey).sqrt() * ((y * y + tr) / 2.0).exp());
        let l3 = 2.0 * c0 * c0 * c1 * c1 * n06 * (2.0 * y * y + 4.0 * nu * n0 * n0).exp() * k2
            / (4.0 * nu * n0 * n0 - tr);
        let l4 = 4.0 * c0 * c0 * c1 * c1 * n06 * (2.0 * k2).sqrt() * (1.5 * y * y + 2.0 * nu * n0 * n0).exp()
            / (2.0 * nu * n0 * n0 - tr);
        Ok([l1, l2, l3, l4])
    }

    /// Bound on the control energy `E int_0^t |v|^2` (any `t`).
    pub fn control_energy_bound(&self, y: f64, z: f64) -> Result<f64> {
        let [l1, l2, l3, l4] = self.l_constants(y, z)?;
        Ok((l1 + l3) * z.powi(4) + (l2 + l4) * z * z)
    }

    /// Envelope for `E_P sup_{[0,1]} |Z^h|^{2p}` started from `|x| = x`.
    pub fn zh_sup_envelope(&self, p: u32, x: f64, z: f64) -> Result<f64> {
        Ok(self.kp(p, z)? * (x * x).exp() * z.powi(2 * p as i32))
    }

    /// Envelope for `E_P |Z^h(t)|^{2p}`, `t > 1`.
    pub fn zh_envelope(&self, p: u32, t: f64, x: f64, z: f64) -> Result<f64> {
        let pf = p as f64;
        let a = 2.0 * self.nu * pf * self.n0f().powi(2);
        Ok((-(a - self.trace_qq) * t).exp() * self.kp(p, z)? * (2.0 * x * x + a).exp() * z.powi(2 * p as i32))
    }

    /// Theoretical decay exponent `2 nu p N0^2 - trQQ` of the envelope.
    pub fn zh_envelope_rate(&self, p: u32) -> f64 {
        2.0 * self.nu * p as f64 * self.n0f().powi(2) - self.trace_qq
    }

    /// Hypotheses of the log-Harnack estimate.
    pub fn require_mlh(&self) -> Result<()> {
        Self::require("nu N0^2 > trQQ / 2", self.nu * self.n0f().powi(2), 0.5 * self.trace_qq)?;
        Self::require("nu > max(trQQ, C2)", self.nu, self.trace_qq.max(self.c2))
    }

    /// Right-hand side of the modified log-Harnack inequality, split into its parts.
    pub fn mlh_rhs(&self, log_ptf_x: f64, z: f64, dlogf_sup: f64, t: f64, y: f64) -> Result<MlhRhs> {
        self.require_mlh()?;
        let [l1, l2, l3, l4] = self.l_constants(y, z)?;
        let k1 = self.kp(1, z)?;
        let entropy = 0.5 * (l1 + l3) * z.powi(4) + 0.5 * (l2 + l4) * z * z;
        let shift = (-self.delta_rate() * t + y * y + self.nu * self.n0f().powi(2)).exp() * k1.sqrt() * z * dlogf_sup;
        Ok(MlhRhs {
            log_ptf_x,
            entropy_term: entropy,
            shift_term: shift,
        })
    }
}

/// `log P_t f(x) + entropy_term + shift_term`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlhRhs {
    pub log_ptf_x: f64,
    /// `((L1 + L3) z^4 + (L2 + L4) z^2) / 2`.
    pub entropy_term: f64,
    /// `delta(t) e^{|y|^2 + nu N0^2} sqrt(K1) z ||D log f||`.
    pub shift_term: f64,
}

impl MlhRhs {
    pub fn total(&self) -> f64 {
        self.total_scaled(1.0)
    }

    /// Right-hand side with every constant term divided by `scale`.
    pub fn total_scaled(&self, scale: f64) -> f64 {
        self.log_ptf_x + (self.entropy_term + self.shift_term) / scale
    }
}

/// One strict inequality `lhs > rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub all_pass: bool,
}

impl HypothesisReport {
    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Evaluates every hypothesis separately (strict inequalities; ties fail).
pub fn hypothesis_report(consts: &BoundConstants, p_list: &[u32]) -> HypothesisReport {
    let (nu, n0, tr) = (consts.nu, consts.n0 as f64, consts.trace_qq);
    let mut checks = Vec::new();
    let mut push = |name: String, lhs: f64, rhs: f64| {
        checks.push(HypothesisCheck {
            name,
            lhs,
            rhs,
            pass: lhs > rhs,
        })
    };
    push("exp_moment: nu > 2 trQQ".into(), nu, 2.0 * tr);
    for &p in p_list {
        push(
            format!("zh_decay_p{p}: nu > max(C2 sqrt(p/2), 2 trQQ)"),
            nu,
            (consts.c2 * (p as f64 / 2.0).sqrt()).max(2.0 * tr),
        );
    }
    push("mlh_rate: nu N0^2 > trQQ / 2".into(), nu * n0 * n0, 0.5 * tr);
    push("mlh_nu: nu > max(trQQ, C2)".into(), nu, tr.max(consts.c2));
    push("l3_denominator: 4 nu N0^2 > trQQ".into(), 4.0 * nu * n0 * n0, tr);
    push("l4_denominator: 2 nu N0^2 > trQQ".into(), 2.0 * nu * n0 * n0, tr);
    push("noise_invertible: 1/C0 > 0".into(), 1.0 / consts.c0, 0.0);
    let all_pass = checks.iter().all(|c| c.pass);
    HypothesisReport { checks, all_pass }
}

/// JSON-ready dump of the constants at one operating point.
pub fn constants_table(consts: &BoundConstants, y: f64, z: f64) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("C0".into(), consts.c0);
    m.insert("C1".into(), consts.c1);
    m.insert("C2".into(), consts.c2);
    m.insert("trQQ".into(), consts.trace_qq);
    m.insert("delta_rate".into(), consts.delta_rate());
    for p in [1, 2] {
        if let Ok(k) = consts.kp(p, z) {
            m.insert(format!("K{p}"), k);
        }
    }
    if let Ok(l) = consts.l_constants(y, z) {
        for (i, v) in l.iter().enumerate() {
            m.insert(format!("L{}", i + 1), *v);
        }
    }
    m
}
