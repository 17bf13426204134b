//! Monte Carlo estimators built on the simulator and the coupling.
//!
//! Every estimator runs `n_paths` paths from a fixed master seed; per-path samples come
//! back in path order and are reduced with compensated summation, so results are
//! bit-reproducible regardless of thread count.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds::{BoundConstants, MlhRhs};
use crate::coupling::{Coupler, CoupledView, LowModeDrift};
use crate::dynamics::{steps_for, Simulator, XView, LANES};
use crate::error::{Error, Result};
use crate::rng::{path_rng, Purpose};
use crate::spectral::FourierField;
use crate::stats::{effective_sample_size, log_mean_exp, neumaier_sum, weighted_slope, Estimate, LogMeanExp};
use crate::testfn::{PseudoMetric, TestFunction};

/// Weighted estimates with fewer effective samples than this carry a warning.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 10.0;

/// Sigmas allowed by the one-sided pass rule.
pub const PASS_SIGMAS: f64 = 3.0;

/// Factor dividing the constants in forced-failure mode.
pub const FORCED_FAILURE_SCALE: f64 = 1e6;

/// One-sided check `lhs <= rhs`, passing when `lhs.mean - 3 sigma <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: f64,
    /// Standard error of an estimated right-hand side (0 when exact).
    pub rhs_stderr: f64,
    /// Standard error of `lhs - rhs` used by the pass rule.
    pub sigma: f64,
    pub margin: f64,
    /// `margin / sigma`; absent when `sigma = 0`.
    pub margin_sigmas: Option<f64>,
    pub pass: bool,
    pub inputs: serde_json::Value,
}

impl InequalityReport {
    pub fn new(name: &str, lhs: Estimate, rhs: f64, rhs_stderr: f64, sigma: f64, inputs: serde_json::Value) -> Self {
        let margin = rhs - lhs.mean;
        Self {
            name: name.into(),
            lhs,
            rhs,
            rhs_stderr,
            sigma,
            margin,
            margin_sigmas: (sigma > 0.0).then(|| margin / sigma),
            pass: lhs.mean - PASS_SIGMAS * sigma <= rhs,
            inputs,
        }
    }

    /// Exact right-hand side: the pass rule uses `lhs.stderr`.
    pub fn exact_rhs(name: &str, lhs: Estimate, rhs: f64, inputs: serde_json::Value) -> Self {
        Self::new(name, lhs, rhs, 0.0, lhs.stderr, inputs)
    }
}

/// Weighted estimate of `P_t f(y0)` with the effective sample size of the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    pub estimate: Estimate,
    pub effective_samples: f64,
    pub low_ess_warning: bool,
    pub mean_weight: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub t: f64,
    /// `E_P[M 1/2 int |v|^2]`.
    pub weighted_control_energy: Estimate,
    /// `E_P[M log M]`.
    pub m_log_m: Estimate,
    /// Distance between the two forms in combined standard errors.
    pub agreement_sigmas: f64,
    pub forms_agree: bool,
    pub effective_samples: f64,
    pub low_ess_warning: bool,
    /// Comparison with `((L1 + L3) z^4 + (L2 + L4) z^2) / 2`, when the constants exist.
    pub bound: Option<InequalityReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub t: f64,
    pub moment: Estimate,
    pub envelope: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub p: u32,
    /// `E sup_{[0,1]} |Z^h|^{2p}`.
    pub sup_unit: Estimate,
    pub sup_envelope: f64,
    pub sup_pass: bool,
    pub rows: Vec<DecayRow>,
    /// Slope of `log E|Z^h(t)|^{2p}` in `t`; absent when the moments vanish.
    pub fitted_rate: Option<f64>,
    pub fitted_rate_stderr: Option<f64>,
    /// `-(2 nu p N0^2 - trQQ)`, the slope of the envelope.
    pub envelope_rate: f64,
    pub all_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentReport {
    pub report: InequalityReport,
    pub log_lhs: LogMeanExp,
    pub log_rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlhReport {
    pub t: f64,
    /// Index of the test function in the matrix call.
    pub test_function: usize,
    pub z_norm: f64,
    pub y_norm: f64,
    pub report: InequalityReport,
    pub rhs_parts: MlhRhs,
    /// Direct estimate of `P_t f(x0)`.
    pub ptf_x: Estimate,
    pub effective_samples: f64,
    pub low_ess_warning: bool,
    pub forced_scale: f64,
    pub forced_rhs: f64,
    pub forced_pass: bool,
}

/// Log-Harnack cells and entropy estimates of one coupled run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MlhMatrix {
    pub cells: Vec<MlhReport>,
    pub entropy: Vec<EntropyReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub direction: usize,
    pub eps: f64,
    pub t: f64,
    /// `(P_t f(x0 + eps h) - P_t f(x0)) / eps`.
    pub quotient: Estimate,
    /// `Df(x0) . h`, reported at `t = 0`.
    pub analytic: Option<f64>,
    pub envelope: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub t: f64,
    pub gamma: f64,
    pub z_norm: f64,
    pub upper: Estimate,
    pub lower: Estimate,
    /// Dictionary entry attaining the lower bound.
    pub witness: usize,
    pub sandwich_ok: bool,
}

/// Lipschitz witness for the dual lower bound.
#[derive(Clone, Debug)]
enum Witness {
    /// `min(1, |u - c| / gamma)`.
    Distance(FourierField),
    /// `clamp(<u - c, d> / gamma, -1/2, 1/2)`, `|d| = 1`.
    Ramp(FourierField, FourierField),
}

impl Witness {
    fn eval(&self, u: &FourierField, gamma: f64) -> f64 {
        match self {
            Witness::Distance(c) => ((u - c).norm() / gamma).min(1.0),
            Witness::Ramp(c, d) => {
                let (a, ca, da) = (u.amplitudes(), c.amplitudes(), d.amplitudes());
                let mut s = 0.0;
                for i in 0..a.len() {
                    let w = a[i] - ca[i];
                    s += w.re * da[i].re + w.im * da[i].im;
                }
                (2.0 * s / gamma).clamp(-0.5, 0.5)
            }
        }
    }
}

/// Monte Carlo settings shared by the estimators.
#[derive(Clone, Debug)]
pub struct Estimators {
    sim: Arc<Simulator>,
    consts: BoundConstants,
    n_paths: usize,
    seed: u64,
    drift: LowModeDrift,
}

/// Sorted distinct step indices for a list of times.
fn node_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut s = times.iter().map(|&t| steps_for(t, dt)).collect::<Result<Vec<_>>>()?;
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

fn position(steps: &[usize], t: f64, dt: f64) -> Result<usize> {
    let n = steps_for(t, dt)?;
    steps.binary_search(&n).map_err(|_| Error::OffGrid(t))
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

impl Estimators {
    pub fn new(sim: Arc<Simulator>, consts: BoundConstants, n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths < 2 {
            return Err(Error::InvalidParameter(format!("n_paths must be >= 2, got {n_paths}")));
        }
        Ok(Self {
            sim,
            consts,
            n_paths,
            seed,
            drift: LowModeDrift::Exact,
        })
    }

    pub fn with_drift(mut self, drift: LowModeDrift) -> Self {
        self.drift = drift;
        self
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }

    pub fn constants(&self) -> &BoundConstants {
        &self.consts
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn dt(&self) -> f64 {
        self.sim.dt()
    }

    fn coupler(&self, x0: &FourierField, y0: &FourierField) -> Result<Coupler> {
        Coupler::new(self.sim.clone(), x0, y0, self.drift)
    }

    /// Per-path rows of values recorded by `eval` at each of `steps` (sorted, distinct).
    fn sample_x<E>(&self, starts: &[FourierField], steps: &[usize], purpose: Purpose, eval: E) -> Result<Vec<Vec<f64>>>
    where
        E: Fn(&[XView], &mut Vec<f64>) + Sync,
    {
        let last = steps.last().copied().unwrap_or(0);
        self.sim.ensemble(
            starts,
            last,
            self.n_paths,
            self.seed,
            purpose,
            |_| Vec::new(),
            |acc, views| {
                if steps.binary_search(&views[0].step).is_ok() {
                    eval(views, acc)
                }
            },
        )
    }

    fn sample_coupled<E>(&self, c: &Coupler, steps: &[usize], eval: E) -> Result<Vec<Vec<f64>>>
    where
        E: Fn(&CoupledView, &mut Vec<f64>) + Sync,
    {
        let last = steps.last().copied().unwrap_or(0);
        c.ensemble(last, self.n_paths, self.seed, |_| Vec::new(), |acc, v| {
            if steps.binary_search(&v.step).is_ok() {
                eval(v, acc)
            }
        })
    }

    /// `P_t f(x0)` from paths on base streams.
    pub fn semigroup_estimate(&self, f: &TestFunction, x0: &FourierField, t: f64) -> Result<Estimate> {
        self.semigroup_estimate_on(f, x0, t, Purpose::Base)
    }

    /// `P_t f(x0)` from streams independent of every coupled run.
    pub fn semigroup_estimate_independent(&self, f: &TestFunction, x0: &FourierField, t: f64) -> Result<Estimate> {
        self.semigroup_estimate_on(f, x0, t, Purpose::Independent)
    }

    fn semigroup_estimate_on(&self, f: &TestFunction, x0: &FourierField, t: f64, purpose: Purpose) -> Result<Estimate> {
        let steps = node_steps(&[t], self.dt())?;
        let rows = self.sample_x(std::slice::from_ref(x0), &steps, purpose, |v, acc| acc.push(f.eval(v[0].x)))?;
        Estimate::from_samples(&column(&rows, 0))
    }

    /// `P_t f(y0)` as `E_P[M f(X + Z)]` over coupled paths from `(x0, y0)`.
    pub fn weighted_semigroup_estimate(
        &self,
        f: &TestFunction,
        x0: &FourierField,
        y0: &FourierField,
        t: f64,
    ) -> Result<WeightedEstimate> {
        let mut v = self.weighted_semigroup_estimates(std::slice::from_ref(f), x0, y0, t)?;
        Ok(v.pop().expect("one function"))
    }

    /// [`Estimators::weighted_semigroup_estimate`] for several functions on one coupled run.
    pub fn weighted_semigroup_estimates(
        &self,
        fs: &[TestFunction],
        x0: &FourierField,
        y0: &FourierField,
        t: f64,
    ) -> Result<Vec<WeightedEstimate>> {
        let c = self.coupler(x0, y0)?;
        let steps = node_steps(&[t], self.dt())?;
        let rows = self.sample_coupled(&c, &steps, |v, acc| {
            let w = v.log_m.exp();
            let y = v.y();
            acc.push(w);
            for f in fs {
                acc.push(w * f.eval(&y));
            }
        })?;
        let w = column(&rows, 0);
        let ess = effective_sample_size(&w);
        let mean_weight = Estimate::from_samples(&w)?;
        (0..fs.len())
            .map(|j| {
                Ok(WeightedEstimate {
                    estimate: Estimate::from_samples(&column(&rows, 1 + j))?,
                    effective_samples: ess,
                    low_ess_warning: ess < MIN_EFFECTIVE_SAMPLES,
                    mean_weight,
                })
            })
            .collect()
    }

    /// Relative entropy of the shifted law in its two forms.
    pub fn entropy_estimate(&self, x0: &FourierField, y0: &FourierField, t: f64) -> Result<EntropyReport> {
        let c = self.coupler(x0, y0)?;
        let steps = node_steps(&[t], self.dt())?;
        let rows = self.sample_coupled(&c, &steps, |v, acc| {
            let w = v.log_m.exp();
            acc.push(w);
            acc.push(w * 0.5 * v.v_energy);
            acc.push(w * v.log_m);
        })?;
        self.entropy_report(&column(&rows, 0), &column(&rows, 1), &column(&rows, 2), x0, y0, t)
    }

    fn entropy_report(
        &self,
        w: &[f64],
        half_energy: &[f64],
        m_log_m: &[f64],
        x0: &FourierField,
        y0: &FourierField,
        t: f64,
    ) -> Result<EntropyReport> {
        let ess = effective_sample_size(w);
        let weighted = Estimate::from_samples(half_energy)?;
        let mlogm = Estimate::from_samples(m_log_m)?;
        let z = (y0 - x0).norm();
        let y = y0.norm();
        let bound = self.consts.control_energy_bound(y, z).ok().map(|b| {
            InequalityReport::exact_rhs(
                "entropy <= ((L1 + L3) z^4 + (L2 + L4) z^2) / 2",
                weighted,
                0.5 * b,
                json!({"x0_norm": x0.norm(), "y_norm": y, "z_norm": z, "t": t}),
            )
        });
        Ok(EntropyReport {
            t,
            weighted_control_energy: weighted,
            m_log_m: mlogm,
            agreement_sigmas: weighted.sigmas_from(&mlogm),
            forms_agree: weighted.agrees_with(&mlogm, PASS_SIGMAS),
            effective_samples: ess,
            low_ess_warning: ess < MIN_EFFECTIVE_SAMPLES,
            bound,
        })
    }

    /// Moments of `Z^h` under the base measure: the supremum over `[0, 1]` and the values on
    /// `t_grid` (all `> 1`), each against its envelope, plus a fitted decay rate per `p`.
    pub fn zh_moment_decay(
        &self,
        p_list: &[u32],
        x0: &FourierField,
        y0: &FourierField,
        t_grid: &[f64],
    ) -> Result<Vec<DecayReport>> {
        if t_grid.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "decay fit needs at least 3 grid points, got {}",
                t_grid.len()
            )));
        }
        if let Some(t) = t_grid.iter().find(|&&t| !(t > 1.0)) {
            return Err(Error::InvalidParameter(format!("decay grid must lie in t > 1, got {t}")));
        }
        if p_list.is_empty() || p_list.contains(&0) {
            return Err(Error::InvalidParameter("moment orders must be >= 1".into()));
        }
        let z = (y0 - x0).norm();
        for &p in p_list {
            self.consts.kp(p, z)?;
        }
        let c = self.coupler(x0, y0)?;
        let dt = self.dt();
        let steps = node_steps(t_grid, dt)?;
        let n_one = steps_for(1.0, dt)?;
        let last = *steps.last().expect("nonempty grid");
        let np = p_list.len();
        // per path: [sup_0..np, then per step: |zh|^{2p} for each p]
        let rows = c.ensemble(
            last,
            self.n_paths,
            self.seed,
            |_| vec![0.0; np],
            |acc: &mut Vec<f64>, v| {
                let r2 = v.zh.norm_sq();
                if v.step <= n_one {
                    for (j, &p) in p_list.iter().enumerate() {
                        acc[j] = acc[j].max(r2.powi(p as i32));
                    }
                }
                if steps.binary_search(&v.step).is_ok() {
                    acc.extend(p_list.iter().map(|&p| r2.powi(p as i32)));
                }
            },
        )?;
        let x = x0.norm();
        let mut out = Vec::with_capacity(np);
        for (j, &p) in p_list.iter().enumerate() {
            let sup_unit = Estimate::from_samples(&column(&rows, j))?;
            let sup_envelope = self.consts.zh_sup_envelope(p, x, z)?;
            let sup_pass = sup_unit.mean - PASS_SIGMAS * sup_unit.stderr <= sup_envelope;
            let mut rows_p = Vec::with_capacity(t_grid.len());
            for &t in t_grid {
                let k = position(&steps, t, dt)?;
                let moment = Estimate::from_samples(&column(&rows, np + k * np + j))?;
                let envelope = self.consts.zh_envelope(p, t, x, z)?;
                rows_p.push(DecayRow {
                    t,
                    moment,
                    envelope,
                    pass: moment.mean - PASS_SIGMAS * moment.stderr <= envelope,
                });
            }
            let fit = if rows_p.iter().all(|r| r.moment.mean > 0.0) {
                let ts: Vec<f64> = rows_p.iter().map(|r| r.t).collect();
                let ys: Vec<f64> = rows_p.iter().map(|r| r.moment.mean.ln()).collect();
                let ws: Vec<f64> = rows_p
                    .iter()
                    .map(|r| {
                        let rel = r.moment.stderr / r.moment.mean;
                        if rel > 0.0 {
                            1.0 / (rel * rel)
                        } else {
                            1.0
                        }
                    })
                    .collect();
                Some(weighted_slope(&ts, &ys, &ws)?)
            } else {
                None
            };
            let all_pass = sup_pass && rows_p.iter().all(|r| r.pass);
            out.push(DecayReport {
                p,
                sup_unit,
                sup_envelope,
                sup_pass,
                rows: rows_p,
                fitted_rate: fit.map(|f| f.0),
                fitted_rate_stderr: fit.map(|f| f.1),
                envelope_rate: -self.consts.zh_envelope_rate(p),
                all_pass,
            });
        }
        Ok(out)
    }

    /// `E exp(|X(t)|^2 + nu int |A^{1/2} X|^2) <= exp(|x0|^2 + trQQ t)`, aggregated in log space.
    pub fn exp_moment_check(&self, x0: &FourierField, t: f64) -> Result<ExpMomentReport> {
        let (nu, tr) = (self.consts.nu, self.consts.trace_qq);
        if !(nu > 2.0 * tr) {
            return Err(Error::Hypothesis {
                name: "exp_moment: nu > 2 trQQ".into(),
                lhs: nu,
                rhs: 2.0 * tr,
            });
        }
        let steps = node_steps(&[t], self.dt())?;
        let rows = self.sample_x(std::slice::from_ref(x0), &steps, Purpose::Base, |v, acc| {
            acc.push(v[0].x.norm_sq() + v[0].dissipation)
        })?;
        let s = column(&rows, 0);
        let log_lhs = LogMeanExp::from_exponents(&s, self.seed)?;
        let log_rhs = x0.norm_sq() + tr * t;
        // compare in units of exp(log_rhs) to keep both sides finite
        let lhs = Estimate::new(
            (log_lhs.log_mean - log_rhs).exp(),
            (log_lhs.log_mean - log_rhs).exp() * log_lhs.rel_stderr,
            log_lhs.n,
        );
        let report = InequalityReport::exact_rhs(
            "E exp(|X_t|^2 + nu int |A^1/2 X|^2) / exp(|x0|^2 + trQQ t) <= 1",
            lhs,
            1.0,
            json!({"x0_norm": x0.norm(), "t": t, "nu": nu, "trQQ": tr}),
        );
        Ok(ExpMomentReport {
            report,
            log_lhs,
            log_rhs,
        })
    }

    /// Modified log-Harnack check for one cell.
    pub fn mlh_check(&self, f: &TestFunction, x0: &FourierField, y0: &FourierField, t: f64) -> Result<MlhReport> {
        Ok(self
            .mlh_matrix(std::slice::from_ref(f), x0, y0, &[t])?
            .cells
            .pop()
            .expect("one cell"))
    }

    /// Modified log-Harnack checks for every `(t, f)` from one coupled run, ordered by `t`
    /// then by test function, with the entropy estimate at each `t` from the same paths.
    pub fn mlh_matrix(
        &self,
        fs: &[TestFunction],
        x0: &FourierField,
        y0: &FourierField,
        times: &[f64],
    ) -> Result<MlhMatrix> {
        self.consts.require_mlh()?;
        let c = self.coupler(x0, y0)?;
        let dt = self.dt();
        let steps = node_steps(times, dt)?;
        let nf = fs.len();
        // per step: w, w v_energy / 2, w log w, then (w log f(Y), f(X)) per function
        let rows = self.sample_coupled(&c, &steps, |v, acc| {
            let w = v.log_m.exp();
            let y = v.y();
            acc.push(w);
            acc.push(w * 0.5 * v.v_energy);
            acc.push(w * v.log_m);
            for f in fs {
                acc.push(w * f.log_eval(&y));
                acc.push(f.eval(v.x));
            }
        })?;
        let width = 3 + 2 * nf;
        let z = c.z_norm();
        let y_norm = y0.norm();
        let mut out = Vec::new();
        let mut entropy = Vec::new();
        for &t in times {
            let k = position(&steps, t, dt)?;
            let w = column(&rows, k * width);
            let ess = effective_sample_size(&w);
            entropy.push(self.entropy_report(
                &w,
                &column(&rows, k * width + 1),
                &column(&rows, k * width + 2),
                x0,
                y0,
                t,
            )?);
            for (j, f) in fs.iter().enumerate() {
                let a = column(&rows, k * width + 3 + 2 * j);
                let b = column(&rows, k * width + 4 + 2 * j);
                let lhs = Estimate::from_samples(&a)?;
                let ptf = Estimate::from_samples(&b)?;
                // delta method for log of the mean, paired with lhs samples
                let lin: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b / ptf.mean).collect();
                let sigma = Estimate::from_samples(&lin)?.stderr;
                let parts = self.consts.mlh_rhs(ptf.mean.ln(), z, f.sup_dlogf(), t, y_norm)?;
                let inputs = json!({
                    "x0": x0.sparse_rows(),
                    "y0": y0.sparse_rows(),
                    "z_norm": z,
                    "y_norm": y_norm,
                    "t": t,
                    "f": f.describe(),
                });
                let report = InequalityReport::new(
                    "P_t log f(y) <= log P_t f(x) + entropy + shift",
                    lhs,
                    parts.total(),
                    ptf.stderr / ptf.mean,
                    sigma,
                    inputs,
                );
                let forced_rhs = parts.total_scaled(FORCED_FAILURE_SCALE);
                out.push(MlhReport {
                    t,
                    test_function: j,
                    z_norm: z,
                    y_norm,
                    forced_scale: FORCED_FAILURE_SCALE,
                    forced_rhs,
                    forced_pass: lhs.mean - PASS_SIGMAS * sigma <= forced_rhs,
                    report,
                    rhs_parts: parts,
                    ptf_x: ptf,
                    effective_samples: ess,
                    low_ess_warning: ess < MIN_EFFECTIVE_SAMPLES,
                });
            }
        }
        Ok(MlhMatrix { cells: out, entropy })
    }

    /// Bound on `|P_t f(y) - P_t f(x)|` for `|x - y| = z` obtained by applying the
    /// log-Harnack estimate to `1 + e f` and optimising over `e > 0`:
    /// `2 ||f|| sqrt(entropy) + shift(||Df||)`.
    pub fn difference_envelope(&self, f: &TestFunction, z: f64, t: f64, y: f64) -> Result<f64> {
        let parts = self.consts.mlh_rhs(0.0, z, f.sup_df(), t, y)?;
        Ok(2.0 * f.sup_f() * parts.entropy_term.sqrt() + parts.shift_term)
    }

    /// Difference quotients `(P_t f(x0 + eps h) - P_t f(x0)) / eps` with common random numbers,
    /// for unit directions `h`, against the envelope divided by `eps`.
    pub fn gradient_probe(
        &self,
        f: &TestFunction,
        x0: &FourierField,
        directions: &[FourierField],
        times: &[f64],
        eps_list: &[f64],
    ) -> Result<Vec<GradientRow>> {
        if let Some(e) = eps_list.iter().find(|&&e| !(e > 0.0)) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {e}")));
        }
        let dt = self.dt();
        let steps = node_steps(times, dt)?;
        let mut out = Vec::new();
        for (hi, h) in directions.iter().enumerate() {
            let hn = h.norm();
            if !(hn > 0.0) {
                return Err(Error::InvalidParameter(format!("direction {hi} is zero")));
            }
            let h = h * (1.0 / hn);
            for chunk in eps_list.chunks(LANES - 1) {
                let mut starts = vec![x0.clone()];
                for &e in chunk {
                    let mut s = x0.clone();
                    s.axpy(e, &h);
                    starts.push(s);
                }
                let rows = self.sample_x(&starts, &steps, Purpose::Base, |v, acc| {
                    let base = f.eval(v[0].x);
                    for (j, &e) in chunk.iter().enumerate() {
                        acc.push((f.eval(v[j + 1].x) - base) / e);
                    }
                })?;
                for &t in times {
                    let k = position(&steps, t, dt)?;
                    for (j, &e) in chunk.iter().enumerate() {
                        let quotient = Estimate::from_samples(&column(&rows, k * chunk.len() + j))?;
                        let y = x0.norm().max(starts[j + 1].norm());
                        let envelope = self.difference_envelope(f, e, t, y)? / e;
                        let analytic = if t == 0.0 {
                            Some(f.directional_derivative(x0, &h)?)
                        } else {
                            None
                        };
                        out.push(GradientRow {
                            direction: hi,
                            eps: e,
                            t,
                            quotient,
                            analytic,
                            envelope,
                            pass: quotient.mean.abs() - PASS_SIGMAS * quotient.stderr <= envelope,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Deterministic dictionary of `size` witnesses with `||phi||_{d_gamma} <= 1` and
    /// `||phi||_inf <= 1`, adapted to the linearised means at time `t`.
    fn dictionary(&self, x0: &FourierField, y0: &FourierField, t: f64, size: usize) -> Vec<Witness> {
        let g = self.sim.grid();
        let nu = self.sim.params().nu;
        let relax = |u: &FourierField| {
            let mut r = u.clone();
            for (i, a) in r.amplitudes_mut().iter_mut().enumerate() {
                *a *= (-nu * g.norm_sq(i) * t).exp();
            }
            r
        };
        let (mx, my) = (relax(x0), relax(y0));
        let mid = &(&mx + &my) * 0.5;
        let diff = &my - &mx;
        let mut rng = path_rng(self.seed, Purpose::Inputs, 0x6469_6374);
        let random_unit = |rng: &mut rand_chacha::ChaCha8Rng| {
            let amps: Vec<Complex64> = (0..g.len())
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let u = FourierField::from_amplitudes(g, amps).expect("grid length");
            let n = u.norm();
            &u * (1.0 / n)
        };
        let mut out = Vec::with_capacity(size);
        for j in 0..size {
            let w = match j {
                0 if diff.norm() > 0.0 => Witness::Ramp(mid.clone(), &diff * (1.0 / diff.norm())),
                1 => Witness::Distance(mx.clone()),
                2 => Witness::Distance(my.clone()),
                _ if j % 2 == 0 => Witness::Ramp(mid.clone(), random_unit(&mut rng)),
                _ => {
                    let mut c = mid.clone();
                    let d = random_unit(&mut rng);
                    c.axpy(diff.norm().max(1e-3), &d);
                    Witness::Distance(c)
                }
            };
            out.push(w);
        }
        out
    }

    /// Upper and lower bounds on the `d_gamma` transport distance between the laws of
    /// `X^x(t)` and `X^y(t)`, for every `(t, gamma)`. The upper bound uses the synchronous
    /// coupling; the lower bound maximises `|E phi(X^x) - E phi(X^y)|` over a dictionary.
    pub fn dgamma_distance_bounds(
        &self,
        x0: &FourierField,
        y0: &FourierField,
        times: &[f64],
        gammas: &[f64],
        dictionary_size: usize,
    ) -> Result<Vec<DistanceRow>> {
        if dictionary_size == 0 {
            return Err(Error::InvalidParameter("witness dictionary is empty".into()));
        }
        let metrics = gammas.iter().map(|&g| PseudoMetric::new(g)).collect::<Result<Vec<_>>>()?;
        let dt = self.dt();
        let steps = node_steps(times, dt)?;
        let dicts: Vec<(usize, Vec<Witness>)> = steps
            .iter()
            .map(|&n| (n, self.dictionary(x0, y0, n as f64 * dt, dictionary_size)))
            .collect();
        let ng = gammas.len();
        // per step and gamma: upper sample, then one paired difference per witness
        let rows = self.sample_x(&[x0.clone(), y0.clone()], &steps, Purpose::Base, |v, acc| {
            let dict = &dicts[steps.binary_search(&v[0].step).expect("sampled step")].1;
            let r = (v[0].x - v[1].x).norm();
            for m in &metrics {
                acc.push(m.from_norm(r));
                for w in dict {
                    acc.push(w.eval(v[0].x, m.gamma()) - w.eval(v[1].x, m.gamma()));
                }
            }
        })?;
        let width = ng * (1 + dictionary_size);
        let z = (y0 - x0).norm();
        let mut out = Vec::new();
        for &t in times {
            let k = position(&steps, t, dt)?;
            for (gi, m) in metrics.iter().enumerate() {
                let base = k * width + gi * (1 + dictionary_size);
                let upper = Estimate::from_samples(&column(&rows, base))?;
                let mut best = (0usize, f64::NEG_INFINITY);
                let mut cols = Vec::with_capacity(dictionary_size);
                for j in 0..dictionary_size {
                    let c = column(&rows, base + 1 + j);
                    let m = neumaier_sum(c.iter().copied()).abs();
                    if m > best.1 {
                        best = (j, m);
                    }
                    cols.push(c);
                }
                let c = &cols[best.0];
                let sign = if neumaier_sum(c.iter().copied()) < 0.0 { -1.0 } else { 1.0 };
                let lower = Estimate::from_samples(&c.iter().map(|x| sign * x).collect::<Vec<_>>())?;
                let sandwich_ok =
                    lower.mean - PASS_SIGMAS * lower.stderr <= upper.mean + PASS_SIGMAS * upper.stderr;
                out.push(DistanceRow {
                    t,
                    gamma: m.gamma(),
                    z_norm: z,
                    upper,
                    lower,
                    witness: best.0,
                    sandwich_ok,
                });
            }
        }
        Ok(out)
    }
}

/// `E[fg] <= Ef log E e^g + E[f log f] - Ef log Ef` on the empirical measure of the samples.
/// The inequality is exact here; `pass` allows a relative `1e-12` of rounding, measured
/// against the largest of the terms.
pub fn entropy_inequality_check(f: &[f64], g: &[f64]) -> Result<InequalityReport> {
    if f.len() != g.len() || f.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need equal-length samples of size >= 2, got {} and {}",
            f.len(),
            g.len()
        )));
    }
    if f.iter().chain(g).any(|x| !x.is_finite()) || f.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter("f must be finite and nonnegative, g finite".into()));
    }
    let n = f.len() as f64;
    let ef = neumaier_sum(f.iter().copied()) / n;
    if !(ef > 0.0) {
        return Err(Error::Degenerate("f is identically zero".into()));
    }
    let efg = neumaier_sum(f.iter().zip(g).map(|(a, b)| a * b)) / n;
    let eflogf = neumaier_sum(f.iter().map(|&a| if a > 0.0 { a * a.ln() } else { 0.0 })) / n;
    let terms = [ef * log_mean_exp(g), eflogf, ef * ef.ln()];
    let rhs = terms[0] + terms[1] - terms[2];
    let scale = terms.iter().fold(rhs.abs(), |m, t| m.max(t.abs()));
    let lhs = Estimate::new(efg, 0.0, f.len());
    let mut r = InequalityReport::exact_rhs("E[fg] <= Ef log Ee^g + Ent(f)", lhs, rhs, json!({"n": f.len()}));
    r.pass = efg <= rhs + 1e-12 * scale;
    Ok(r)
}
