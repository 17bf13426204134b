//! Algebraic identity and estimate suite for the spectral calculus and the bilinear term.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sns_core::rng::{path_rng, Purpose};
use sns_core::spectral::mode_norm_sq;
use sns_core::{leray_project, BilinearWorkspace, FourierField, RawField, SpectralGrid};

use crate::config::IdentityConfig;
use crate::error::Result;

/// Tolerance of the exact identities of the bilinear term.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Tolerance for comparisons that should agree to rounding.
pub const ROUNDING_TOL: f64 = 1e-12;

const ALPHAS: [f64; 4] = [0.25, 0.5, 1.0, 1.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub n: usize,
    pub violations: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub grid_n: u32,
    pub oracle_n: u32,
    pub checks: Vec<IdentityCheck>,
    pub violations: usize,
    pub pass: bool,
}

/// Constants entering the estimates.
#[derive(Clone, Copy, Debug)]
pub struct SuiteConstants {
    pub c1: f64,
    pub c2: f64,
}

/// Relative error with `0/0 = 0`.
fn rel(err: f64, scale: f64) -> f64 {
    if err == 0.0 {
        0.0
    } else {
        err / scale
    }
}

/// Excess of `lhs` over `rhs` relative to `rhs` (0 when the bound holds).
fn excess(lhs: f64, rhs: f64) -> f64 {
    if lhs <= rhs {
        0.0
    } else {
        rel(lhs - rhs, rhs.abs())
    }
}

fn random_field<R: Rng>(grid: &Arc<SpectralGrid>, rng: &mut R) -> FourierField {
    // random support and scale, so both smooth and rough fields occur
    let keep = rng.random_range(0.3..1.0);
    let scale = 10f64.powf(rng.random_range(-2.0..1.0));
    let amps = (0..grid.len())
        .map(|_| {
            if rng.random::<f64>() < keep {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    FourierField::from_amplitudes(grid, amps).expect("grid length")
}

fn random_raw<R: Rng>(grid: &Arc<SpectralGrid>, rng: &mut R) -> RawField {
    let mut w = RawField::zeros(grid);
    for c in w.coeffs.iter_mut() {
        for v in c.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
    }
    w
}

/// Raw-space projection under test; `corrupt` keeps half of the gradient part.
fn project(w: &RawField, corrupt: bool) -> RawField {
    if !corrupt {
        return w.project();
    }
    let mut out = w.clone();
    for (k, c) in w.grid.modes().iter().zip(out.coeffs.iter_mut()) {
        let (k1, k2) = (k[0] as f64, k[1] as f64);
        let kw = (c[0] * k1 + c[1] * k2) / (k1 * k1 + k2 * k2);
        c[0] -= kw * k1 * 0.5;
        c[1] -= kw * k2 * 0.5;
    }
    out
}

fn raw_diff_rel(a: &RawField, b: &RawField) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
        for j in 0..2 {
            num = num.max((x[j] - y[j]).norm());
            den = den.max(x[j].norm().max(y[j].norm()));
        }
    }
    rel(num, den)
}

fn field_diff_rel(a: &FourierField, b: &FourierField) -> f64 {
    let num = a
        .amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    let den = a
        .amplitudes()
        .iter()
        .chain(b.amplitudes())
        .map(|x| x.norm())
        .fold(0.0, f64::max);
    rel(num, den)
}

/// Brute-force `pi_N P[(u . grad) v]`: velocity convolution over all lattice pairs in the
/// truncation, without the index table, then the Leray projection.
pub fn naive_bilinear(u: &FourierField, v: &FourierField) -> FourierField {
    let g = u.grid().clone();
    let n = g.n() as i32;
    let mut w = RawField::zeros(&g);
    for (i, &k) in g.modes().iter().enumerate() {
        let mut acc = [Complex64::new(0.0, 0.0); 2];
        for p1 in -n..=n {
            for p2 in -n..=n {
                let p = [p1, p2];
                let q = [k[0] - p1, k[1] - p2];
                let (np, nq) = (mode_norm_sq(p), mode_norm_sq(q));
                if np == 0 || nq == 0 || np > (n * n) as i64 || nq > (n * n) as i64 {
                    continue;
                }
                let up = u.velocity_at(p);
                let vq = v.velocity_at(q);
                let s = (up[0] * q[0] as f64 + up[1] * q[1] as f64) * Complex64::new(0.0, 1.0);
                acc[0] += s * vq[0];
                acc[1] += s * vq[1];
            }
        }
        let c = 0.5 / std::f64::consts::PI;
        w.coeffs[i] = [acc[0] * c, acc[1] * c];
    }
    leray_project(&w)
}

#[derive(Default, Clone)]
struct Tally {
    n: usize,
    violations: usize,
    max: f64,
}

impl Tally {
    fn add(&mut self, e: f64, tol: f64) {
        self.n += 1;
        if !(e <= tol) {
            self.violations += 1;
        }
        if e > self.max || e.is_nan() {
            self.max = e;
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.n += o.n;
        self.violations += o.violations;
        if o.max > self.max || o.max.is_nan() {
            self.max = o.max;
        }
    }
}

const NAMES: [(&str, f64); 16] = [
    ("energy_neutrality", IDENTITY_TOL),
    ("skew_symmetry", IDENTITY_TOL),
    ("zinf_estimate", ROUNDING_TOL),
    ("x12y12z12_estimate", ROUNDING_TOL),
    ("b_low_estimate", ROUNDING_TOL),
    ("b_low_composition", ROUNDING_TOL),
    ("b_tilde_symmetry", ROUNDING_TOL),
    ("inner_symmetry_cauchy_schwarz", ROUNDING_TOL),
    ("stokes_semigroup", ROUNDING_TOL),
    ("poincare", ROUNDING_TOL),
    ("high_low_inequality_per_mode", 0.0),
    ("high_low_inequality_norms", ROUNDING_TOL),
    ("leray_divergence_free", ROUNDING_TOL),
    ("leray_idempotent", ROUNDING_TOL),
    ("leray_fixes_fields_and_self_adjoint", ROUNDING_TOL),
    ("oracle_convolution", ROUNDING_TOL),
];

fn idx(name: &str) -> usize {
    NAMES.iter().position(|(n, _)| *n == name).expect("known check")
}

fn trial<R: Rng>(
    ws: &BilinearWorkspace,
    consts: SuiteConstants,
    corrupt: bool,
    rng: &mut R,
    t: &mut [Tally],
) -> Result<()> {
    let g = ws.grid();
    let mut add = |name: &str, e: f64| {
        let i = idx(name);
        t[i].add(e, NAMES[i].1);
    };
    let (x, y, z) = (random_field(g, rng), random_field(g, rng), random_field(g, rng));

    let byx = ws.bilinear(&y, &x)?;
    let byz = ws.bilinear(&y, &z)?;
    let e = x.inner(&byx)?;
    add("energy_neutrality", rel(e.abs(), x.norm() * byx.norm()));
    let (a, b) = (x.inner(&byz)?, z.inner(&byx)?);
    add("skew_symmetry", rel((a + b).abs(), x.norm() * byz.norm() + z.norm() * byx.norm()));

    add("zinf_estimate", excess(a.abs(), consts.c1 * x.norm() * y.norm() * z.sobolev_norm(1.5)));
    let d = (x.norm() * x.sobolev_norm(0.5) * y.norm() * y.sobolev_norm(0.5)).sqrt() * z.sobolev_norm(0.5);
    add("x12y12z12_estimate", excess(a.abs(), consts.c2 * d));

    let n0 = rng.random_range(1..=g.n());
    let bl = ws.bilinear_low(&x, &y, n0)?;
    add("b_low_estimate", excess(bl.norm(), consts.c1 * (n0 as f64).powi(3) * x.norm() * y.norm()));
    let (low, _) = ws.bilinear(&x, &y)?.split_low_high(n0)?;
    add("b_low_composition", field_diff_rel(&bl, &low));
    add(
        "b_tilde_symmetry",
        field_diff_rel(&ws.bilinear_tilde(&x, &y)?, &ws.bilinear_tilde(&y, &x)?)
            .max(field_diff_rel(&ws.bilinear_tilde(&x, &x)?, &(&ws.bilinear(&x, &x)? * 2.0))),
    );

    let (xy, yx) = (x.inner(&y)?, y.inner(&x)?);
    add(
        "inner_symmetry_cauchy_schwarz",
        rel((xy - yx).abs(), x.norm() * y.norm()).max(excess(xy.abs(), x.norm() * y.norm())),
    );
    let (al, be) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    add(
        "stokes_semigroup",
        field_diff_rel(&x.stokes_apply(al).stokes_apply(be), &x.stokes_apply(al + be)),
    );
    for alpha in ALPHAS {
        add("poincare", excess(x.norm(), x.sobolev_norm(alpha)));
    }

    for n0 in 1..=g.n() {
        let (l, h) = x.split_low_high(n0)?;
        let cut = (n0 * n0) as i64;
        // per mode: low part strictly inside the disc, high part outside, sum exact
        let mut bad = 0.0;
        for (i, k) in g.modes().iter().enumerate() {
            let inside = mode_norm_sq(*k) <= cut;
            let (la, ha) = (l.amplitudes()[i], h.amplitudes()[i]);
            let ok = la + ha == x.amplitudes()[i] && if inside { ha == Complex64::new(0.0, 0.0) } else { la == Complex64::new(0.0, 0.0) };
            if !ok {
                bad = 1.0;
            }
        }
        add("high_low_inequality_per_mode", bad);
        for alpha in ALPHAS {
            let f = (n0 as f64).powf(2.0 * alpha);
            add("high_low_inequality_norms", excess(l.sobolev_norm(alpha), f * l.norm()));
            add("high_low_inequality_norms", excess(f * h.norm(), h.sobolev_norm(alpha)));
        }
    }

    let w = random_raw(g, rng);
    let pw = project(&w, corrupt);
    let div = pw
        .divergence()
        .iter()
        .zip(g.modes().iter().zip(&w.coeffs))
        .map(|(d, (k, c))| rel(d.norm(), (mode_norm_sq(*k) as f64).sqrt() * (c[0].norm() + c[1].norm())))
        .fold(0.0, f64::max);
    add("leray_divergence_free", div);
    add("leray_idempotent", raw_diff_rel(&project(&pw, corrupt), &pw));
    let v = random_raw(g, rng);
    let pv = project(&v, corrupt);
    let sa = rel((pw.inner(&v)? - w.inner(&pv)?).abs(), pw.inner(&pw)?.sqrt() * v.inner(&v)?.sqrt());
    let fix = raw_diff_rel(&project(&x.to_raw(), corrupt), &x.to_raw()).max(field_diff_rel(&leray_project(&x.to_raw()), &x));
    add("leray_fixes_fields_and_self_adjoint", sa.max(fix));
    Ok(())
}

/// Runs the suite; each trial draws its inputs from its own stream of `seed`.
pub fn run_identity_suite(
    grid: &Arc<SpectralGrid>,
    cfg: &IdentityConfig,
    consts: SuiteConstants,
    seed: u64,
) -> Result<IdentityReport> {
    let ws = BilinearWorkspace::new(grid);
    let per: Vec<Result<Vec<Tally>>> = (0..cfg.n_triples)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, Purpose::Inputs, i as u64);
            let mut t = vec![Tally::default(); NAMES.len()];
            trial(&ws, consts, cfg.corrupt_projection, &mut rng, &mut t)?;
            Ok(t)
        })
        .collect();
    let mut tallies = vec![Tally::default(); NAMES.len()];
    for r in per {
        for (a, b) in tallies.iter_mut().zip(&r?) {
            a.merge(b);
        }
    }

    let og = SpectralGrid::new(cfg.oracle_n)?;
    let ows = BilinearWorkspace::new(&og);
    let oracle: Vec<f64> = (0..cfg.oracle_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed ^ 0x6f72_6163, Purpose::Inputs, i as u64);
            let (u, v) = (random_field(&og, &mut rng), random_field(&og, &mut rng));
            let fast = ows.bilinear(&u, &v).expect("same grid");
            field_diff_rel(&fast, &naive_bilinear(&u, &v))
        })
        .collect();
    let oi = idx("oracle_convolution");
    for e in oracle {
        tallies[oi].add(e, NAMES[oi].1);
    }

    let checks: Vec<IdentityCheck> = NAMES
        .iter()
        .zip(&tallies)
        .map(|((name, tol), t)| IdentityCheck {
            name: name.to_string(),
            n: t.n,
            violations: t.violations,
            max_rel_error: t.max,
            tolerance: *tol,
            pass: t.violations == 0,
        })
        .collect();
    let violations = checks.iter().map(|c| c.violations).sum();
    Ok(IdentityReport {
        grid_n: grid.n(),
        oracle_n: cfg.oracle_n,
        checks,
        violations,
        pass: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(grid: &SpectralGrid) -> SuiteConstants {
        SuiteConstants {
            c1: sns_core::bounds::constant_c1(grid),
            c2: 1.0,
        }
    }

    #[test]
    fn small_suite_passes_and_corruption_is_caught() {
        let g = SpectralGrid::new(3).unwrap();
        let mut cfg = IdentityConfig {
            n_triples: 50,
            oracle_n: 2,
            oracle_pairs: 5,
            corrupt_projection: false,
        };
        let r = run_identity_suite(&g, &cfg, consts(&g), 1).unwrap();
        assert!(r.pass, "{r:?}");
        cfg.corrupt_projection = true;
        let bad = run_identity_suite(&g, &cfg, consts(&g), 1).unwrap();
        assert!(!bad.pass);
        assert!(bad.checks.iter().any(|c| c.name == "leray_idempotent" && !c.pass));
    }
}
