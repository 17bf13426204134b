//! Asymptotic coupling driven by one base noise.
//!
//! With `z = y0 - x0`, the difference `Z = Y - X` has a prescribed low part
//! `Z^l(t) = (1 - t)^+ pi_{N0} z` and a high part solving
//! `dZ^h/dt + nu A Z^h + [B(Z) + B~(Z, X)]^h = 0`. The control
//! `v = Q^{-1}[drift + B^l(Z) + B~^l(Z, X)]` shifts the noise of `Y`; `logM` accumulates
//! `-sum <v, dW> - 1/2 sum |v|^2 dt` (left-point).
//!
//! The default drift ([`LowModeDrift::Exact`]) is the discrete inverse of the low-mode
//! step: `(e^{nu A dt} Z^l(t + dt) - Z^l(t)) / dt`. With it `Y = X + Z` is exactly the
//! exponential Euler scheme from `y0` driven by `dW + v dt`, so the discrete weight is
//! an exact likelihood ratio.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{draw_standard_increment, steps_for, SdePath, Simulator, LANES};
use crate::error::{Error, Result};
use crate::nonlinearity::Lanes;
use crate::rng::{path_rng, Purpose};
use crate::spectral::{FourierField, SpectralGrid};

/// Low-mode drift term of the control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowModeDrift {
    /// `(e^{nu A dt} Z^l(t+dt) - Z^l(t)) / dt`.
    #[default]
    Exact,
    /// `-z^l + (1 - t) nu A z^l` for `t < 1`.
    Continuous,
    /// `-z^l + (1 - t) A z^l` for `t < 1`.
    ContinuousInviscid,
}

/// `Z^l(t) = (1 - t) pi_{N0} z` on `[0, 1]`, zero afterwards.
pub fn zl_schedule(t: f64, z: &FourierField, n0: u32) -> Result<FourierField> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    let (low, _) = z.split_low_high(n0)?;
    Ok(if t < 1.0 {
        &low * (1.0 - t)
    } else {
        FourierField::zeros(z.grid())
    })
}

/// Coupling setup for one pair of initial conditions.
#[derive(Clone, Debug)]
pub struct Coupler {
    sim: Arc<Simulator>,
    drift: LowModeDrift,
    x0: FourierField,
    y0: FourierField,
    zl0: FourierField,
    zh0: FourierField,
    n_one: usize,
    m0: usize,
}

/// State of one coupled path at a node, handed to observers.
#[derive(Clone, Copy, Debug)]
pub struct CoupledView<'a> {
    pub step: usize,
    pub t: f64,
    pub x: &'a FourierField,
    pub zl: &'a FourierField,
    pub zh: &'a FourierField,
    /// Control used on `[t, t + dt)`.
    pub v: &'a FourierField,
    pub log_m: f64,
    pub v_energy: f64,
    /// Dissipation functional of `X`.
    pub dissipation: f64,
}

impl CoupledView<'_> {
    /// `Y = X + Z^l + Z^h`.
    pub fn y(&self) -> FourierField {
        let mut y = self.x + self.zl;
        y += self.zh;
        y
    }
}

struct LaneState {
    x: FourierField,
    zh: FourierField,
    v: FourierField,
    h: f64,
    diss: f64,
    log_m: f64,
    v_energy: f64,
}

impl Coupler {
    pub fn new(sim: Arc<Simulator>, x0: &FourierField, y0: &FourierField, drift: LowModeDrift) -> Result<Self> {
        let g = sim.grid().clone();
        g.check_same(x0.grid())?;
        g.check_same(y0.grid())?;
        if !sim.noise().is_invertible() {
            return Err(Error::Degenerate("coupling needs Q invertible on the low modes".into()));
        }
        let n_one = steps_for(1.0, sim.dt())?;
        let (zl0, zh0) = (y0 - x0).split_low_high(sim.params().n0)?;
        let m0 = sim.noise().forced_len();
        Ok(Self {
            sim,
            drift,
            x0: x0.clone(),
            y0: y0.clone(),
            zl0,
            zh0,
            n_one,
            m0,
        })
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.sim.grid()
    }

    pub fn drift_kind(&self) -> LowModeDrift {
        self.drift
    }

    pub fn x0(&self) -> &FourierField {
        &self.x0
    }

    pub fn y0(&self) -> &FourierField {
        &self.y0
    }

    /// `|y0 - x0|`.
    pub fn z_norm(&self) -> f64 {
        (&self.y0 - &self.x0).norm()
    }

    fn node(&self, t: f64) -> Result<usize> {
        steps_for(t, self.sim.dt())
    }

    /// `Z^l` at node `n`; exactly zero from `t = 1` on.
    pub fn zl_at(&self, n: usize) -> FourierField {
        if n >= self.n_one {
            FourierField::zeros(self.grid())
        } else {
            &self.zl0 * (1.0 - n as f64 * self.sim.dt())
        }
    }

    /// Low-mode drift of the control on step `n`.
    pub fn drift_at(&self, n: usize) -> FourierField {
        let g = self.grid();
        let mut out = FourierField::zeros(g);
        if n >= self.n_one {
            return out;
        }
        let dt = self.sim.dt();
        let t = n as f64 * dt;
        let nu = self.sim.params().nu;
        let z = self.zl0.amplitudes();
        let zl_n = self.zl_at(n);
        let zl_next = self.zl_at(n + 1);
        for (i, o) in out.amplitudes_mut()[..self.m0].iter_mut().enumerate() {
            let k2 = g.norm_sq(i);
            *o = match self.drift {
                LowModeDrift::Exact => {
                    (zl_next.amplitudes()[i] / self.sim.decay()[i] - zl_n.amplitudes()[i]) / dt
                }
                LowModeDrift::Continuous => -z[i] + z[i] * ((1.0 - t) * nu * k2),
                LowModeDrift::ContinuousInviscid => -z[i] + z[i] * ((1.0 - t) * k2),
            };
        }
        out
    }

    /// One step of the high-frequency equation given `Z^l`, `Z^h`, `X` at the step start.
    pub fn step_zh(&self, zh: &FourierField, zl: &FourierField, x: &FourierField) -> Result<FourierField> {
        let ws = self.sim.workspace();
        let z = zl + zh;
        let nz = ws.difference_term(&z, x)?;
        let mut out = zh.high_pass(self.sim.params().n0);
        self.advance_zh(out.amplitudes_mut(), nz.amplitudes());
        if !out.is_finite() {
            return Err(Error::BlowUp {
                time: f64::NAN,
                reason: "non-finite Z^h".into(),
            });
        }
        Ok(out)
    }

    /// In place: `zh <- e^{-nu A dt}(zh - dt N)` on modes above `N0`.
    fn advance_zh(&self, zh: &mut [Complex64], nz: &[Complex64]) {
        let dt = self.sim.dt();
        let decay = self.sim.decay();
        for i in self.m0..zh.len() {
            zh[i] = (zh[i] - nz[i] * dt) * decay[i];
        }
    }

    fn v_from(&self, drift: &FourierField, nl_low: &[Complex64]) -> FourierField {
        let q = self.sim.noise().amplitudes();
        let mut v = FourierField::zeros(self.grid());
        for (i, o) in v.amplitudes_mut()[..self.m0].iter_mut().enumerate() {
            *o = (drift.amplitudes()[i] + nl_low[i]) / q[i];
        }
        v
    }

    /// Control in the `X` form: `Q^{-1}[drift + B^l(Z) + B~^l(Z, X)]`, `Z = Z^l + Z^h`.
    pub fn control_v(&self, t: f64, zl: &FourierField, zh: &FourierField, x: &FourierField) -> Result<FourierField> {
        let n = self.node(t)?;
        let z = zl + zh;
        let nz = self.sim.workspace().difference_term(&z, x)?;
        Ok(self.v_from(&self.drift_at(n), nz.amplitudes()))
    }

    /// Control in the `Y` form: `Q^{-1}[drift - B^l(Z) + B~^l(Z, Y)]`.
    pub fn control_v_y_form(
        &self,
        t: f64,
        zl: &FourierField,
        zh: &FourierField,
        y: &FourierField,
    ) -> Result<FourierField> {
        let n = self.node(t)?;
        let ws = self.sim.workspace();
        let n0 = self.sim.params().n0;
        let z = zl + zh;
        let nl = &ws.bilinear_tilde(&z, y)?.low_pass(n0) - &ws.bilinear_low(&z, &z, n0)?;
        Ok(self.v_from(&self.drift_at(n), nl.amplitudes()))
    }

    /// Full coupled trajectory on stream 0 of `seed` (the stream of path 0 in
    /// [`Coupler::ensemble`] and of [`Simulator::simulate_x`]).
    pub fn run_coupled(&self, t_end: f64, seed: u64) -> Result<CouplingTrajectory> {
        let n_steps = steps_for(t_end, self.sim.dt())?;
        let mut tr = CouplingTrajectory {
            x0: self.x0.clone(),
            y0: self.y0.clone(),
            x_path: SdePath {
                dt: self.sim.dt(),
                states: Vec::with_capacity(n_steps + 1),
                dissipation: Vec::with_capacity(n_steps + 1),
                increments: Vec::with_capacity(n_steps),
            },
            zl: Vec::with_capacity(n_steps + 1),
            zh: Vec::with_capacity(n_steps + 1),
            v: Vec::with_capacity(n_steps + 1),
            log_m: Vec::with_capacity(n_steps + 1),
            v_energy: Vec::with_capacity(n_steps + 1),
        };
        let g = self.grid().clone();
        let mut rng = path_rng(seed, Purpose::Base, 0);
        let mut xi = FourierField::zeros(&g);
        let mut increments = Vec::with_capacity(n_steps);
        self.run_lanes::<1>(
            n_steps,
            std::slice::from_mut(&mut rng),
            |_, view| {
                tr.x_path.states.push(view.x.clone());
                tr.x_path.dissipation.push(view.dissipation);
                tr.zl.push(view.zl.clone());
                tr.zh.push(view.zh.clone());
                tr.v.push(view.v.clone());
                tr.log_m.push(view.log_m);
                tr.v_energy.push(view.v_energy);
            },
            |_, inc| {
                xi.amplitudes_mut()[..inc.len()].copy_from_slice(inc);
                increments.push(xi.clone());
            },
        )?;
        tr.x_path.increments = increments;
        Ok(tr)
    }

    /// Runs `n_paths` coupled paths; path `i` uses base stream `i` of `seed`, so its `X`
    /// coincides bitwise with path `i` of [`Simulator::ensemble`] from `x0`.
    pub fn ensemble<T, I, F>(&self, n_steps: usize, n_paths: usize, seed: u64, init: I, observe: F) -> Result<Vec<T>>
    where
        T: Send,
        I: Fn(usize) -> T + Sync,
        F: Fn(&mut T, &CoupledView) + Sync,
    {
        let batches: Vec<usize> = (0..n_paths.div_ceil(LANES)).collect();
        let out: Vec<Result<Vec<T>>> = batches
            .par_iter()
            .map(|&bi| {
                let first = bi * LANES;
                let count = LANES.min(n_paths - first);
                let mut rngs: Vec<ChaCha8Rng> =
                    (0..count).map(|j| path_rng(seed, Purpose::Base, (first + j) as u64)).collect();
                let mut results: Vec<T> = (0..count).map(|j| init(first + j)).collect();
                self.run_lanes::<LANES>(n_steps, &mut rngs, |j, v| observe(&mut results[j], v), |_, _| {})?;
                Ok(results)
            })
            .collect();
        let mut all = Vec::with_capacity(n_paths);
        for r in out {
            all.extend(r?);
        }
        Ok(all)
    }

    fn run_lanes<const L: usize>(
        &self,
        n_steps: usize,
        rngs: &mut [ChaCha8Rng],
        mut observe: impl FnMut(usize, &CoupledView),
        mut on_increment: impl FnMut(usize, &[Complex64]),
    ) -> Result<()> {
        let sim = &self.sim;
        let g = self.grid().clone();
        let count = rngs.len();
        assert!(count <= L);
        let dt = sim.dt();
        let nonlinear = sim.params().nonlinear;
        let mut lanes: Vec<LaneState> = (0..count)
            .map(|_| LaneState {
                x: self.x0.clone(),
                zh: self.zh0.clone(),
                v: FourierField::zeros(&g),
                h: sim.h1(self.x0.amplitudes()),
                diss: 0.0,
                log_m: 0.0,
                v_energy: 0.0,
            })
            .collect();
        sim.check_state(&self.x0, 0)?;
        let (nf, m) = (g.full_len(), g.len());
        let (mut lx, mut lz) = (Lanes::<L>::zeros(nf), Lanes::<L>::zeros(nf));
        let (mut lbx, mut lnz) = (Lanes::<L>::zeros(m), Lanes::<L>::zeros(m));
        let mut bx = vec![Complex64::new(0.0, 0.0); m];
        let mut nz = vec![Complex64::new(0.0, 0.0); m];
        let mut xi = vec![Complex64::new(0.0, 0.0); self.m0];
        let q = sim.noise().amplitudes();
        for n in 0..=n_steps {
            let t = n as f64 * dt;
            let zl = self.zl_at(n);
            let drift = self.drift_at(n);
            if nonlinear {
                for (l, s) in lanes.iter().enumerate() {
                    let (xa, za, ha) = (s.x.amplitudes(), zl.amplitudes(), s.zh.amplitudes());
                    for i in 0..m {
                        let z = za[i] + ha[i];
                        lx.set_full(l, i, xa[i]);
                        lz.set_full(l, i, z);
                    }
                }
                sim.workspace().coupled_lanes(&lx, &lz, &mut lbx, &mut lnz);
            }
            for (l, s) in lanes.iter_mut().enumerate() {
                let da = drift.amplitudes();
                for (i, o) in s.v.amplitudes_mut()[..self.m0].iter_mut().enumerate() {
                    let nl = if nonlinear { lnz.get(l, i) } else { Complex64::new(0.0, 0.0) };
                    *o = (da[i] + nl) / q[i];
                }
                observe(
                    l,
                    &CoupledView {
                        step: n,
                        t,
                        x: &s.x,
                        zl: &zl,
                        zh: &s.zh,
                        v: &s.v,
                        log_m: s.log_m,
                        v_energy: s.v_energy,
                        dissipation: s.diss,
                    },
                );
            }
            if n == n_steps {
                break;
            }
            for (l, s) in lanes.iter_mut().enumerate() {
                if nonlinear {
                    lbx.store(l, &mut bx);
                    lnz.store(l, &mut nz);
                }
                draw_standard_increment(&mut rngs[l], dt, &mut xi);
                on_increment(l, &xi);
                let va = &s.v.amplitudes()[..self.m0];
                let v_xi: f64 = 2.0 * va.iter().zip(&xi).map(|(a, b)| a.re * b.re + a.im * b.im).sum::<f64>();
                let v2 = s.v.norm_sq();
                s.log_m += -v_xi - 0.5 * v2 * dt;
                s.v_energy += v2 * dt;
                sim.advance(s.x.amplitudes_mut(), &bx, &xi);
                sim.check_state(&s.x, n + 1)?;
                self.advance_zh(s.zh.amplitudes_mut(), &nz);
                let zn = s.zh.norm();
                if !zn.is_finite() || zn > crate::dynamics::BLOWUP_NORM {
                    return Err(Error::BlowUp {
                        time: (n + 1) as f64 * dt,
                        reason: format!("|Z^h| = {zn}"),
                    });
                }
                let h_next = sim.h1(s.x.amplitudes());
                s.diss += sim.dissipation_step(s.h, h_next);
                s.h = h_next;
            }
        }
        Ok(())
    }
}

/// A stored coupled trajectory.
#[derive(Clone, Debug)]
pub struct CouplingTrajectory {
    pub x0: FourierField,
    pub y0: FourierField,
    pub x_path: SdePath,
    pub zl: Vec<FourierField>,
    pub zh: Vec<FourierField>,
    /// Control at each node (used on the following step).
    pub v: Vec<FourierField>,
    pub log_m: Vec<f64>,
    pub v_energy: Vec<f64>,
}

impl CouplingTrajectory {
    pub fn len(&self) -> usize {
        self.zl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zl.is_empty()
    }

    /// `Y = X + Z^l + Z^h` at node `n`.
    pub fn y(&self, n: usize) -> FourierField {
        let mut y = &self.x_path.states[n] + &self.zl[n];
        y += &self.zh[n];
        y
    }

    pub fn log_m_range(&self) -> (f64, f64) {
        self.log_m
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `t, |Z^l|, |Z^h|^2, |v|^2, logM, v_energy` per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "zl_norm", "zh_norm_sq", "v_norm_sq", "log_m", "v_energy"])?;
        for n in 0..self.len() {
            wr.write_record([
                format!("{}", self.x_path.time(n)),
                format!("{:e}", self.zl[n].norm()),
                format!("{:e}", self.zh[n].norm_sq()),
                format!("{:e}", self.v[n].norm_sq()),
                format!("{:e}", self.log_m[n]),
                format!("{:e}", self.v_energy[n]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
