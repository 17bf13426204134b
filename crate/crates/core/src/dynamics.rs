//! Time stepping of the Galerkin system
//!
//! ```text
//! dX + nu A X dt + B(X, X) dt = Q dW,   X(0) = x0
//! ```
//!
//! with an exponential Euler scheme: per stored mode,
//! `a <- exp(-nu |k|^2 dt) (a - dt B(X)_k + (Q dW)_k)`.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{BilinearWorkspace, Lanes};
use crate::rng::{path_rng, Purpose};
use crate::spectral::{FourierField, SpectralGrid};

/// Paths advanced together through the batched bilinear kernel.
pub const LANES: usize = 4;

/// Abort threshold on `|X|`.
pub const BLOWUP_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub nu: f64,
    pub n0: u32,
    /// `false` drops `B` entirely (Ornstein-Uhlenbeck dynamics), used by oracles.
    #[serde(default = "default_true")]
    pub nonlinear: bool,
}

fn default_true() -> bool {
    true
}

impl PhysicsParams {
    pub fn new(grid: &SpectralGrid, nu: f64, n0: u32) -> Result<Self> {
        let p = Self {
            nu,
            n0,
            nonlinear: true,
        };
        p.validate(grid)?;
        Ok(p)
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {}", self.nu)));
        }
        grid.check_cutoff(self.n0)
    }
}

/// Diagonal noise operator on the low modes `|k| <= N0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseOperator {
    grid: Arc<SpectralGrid>,
    n0: u32,
    q: Vec<f64>,
}

impl NoiseOperator {
    /// `q[i]` is the amplitude on the `i`-th stored mode; length must equal the number of
    /// modes with `|k| <= N0`.
    pub fn new(grid: &Arc<SpectralGrid>, n0: u32, q: Vec<f64>) -> Result<Self> {
        grid.check_cutoff(n0)?;
        let m0 = grid.count_within(n0);
        if q.len() != m0 {
            return Err(Error::InvalidParameter(format!(
                "expected {m0} noise amplitudes for N0 = {n0}, got {}",
                q.len()
            )));
        }
        if q.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("noise amplitudes must be finite and >= 0".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            n0,
            q,
        })
    }

    pub fn uniform(grid: &Arc<SpectralGrid>, n0: u32, q: f64) -> Result<Self> {
        grid.check_cutoff(n0)?;
        Self::new(grid, n0, vec![q; grid.count_within(n0)])
    }

    /// `Q = 0`.
    pub fn zero(grid: &Arc<SpectralGrid>, n0: u32) -> Result<Self> {
        Self::uniform(grid, n0, 0.0)
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn n0(&self) -> u32 {
        self.n0
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.q
    }

    /// Number of forced stored modes.
    pub fn forced_len(&self) -> usize {
        self.q.len()
    }

    /// `tr(QQ*)`: both members of each conjugate pair, two real directions each, with
    /// unit-norm real basis vectors; equals `E|Q dW|^2 / dt`.
    pub fn trace_qq(&self) -> f64 {
        2.0 * self.q.iter().map(|q| q * q).sum::<f64>()
    }

    /// `C0 = max 1/q_k` (infinite if some low mode is unforced).
    pub fn c0(&self) -> f64 {
        self.q.iter().map(|&q| 1.0 / q).fold(0.0, f64::max)
    }

    pub fn is_invertible(&self) -> bool {
        self.q.iter().all(|&q| q > 0.0)
    }

    /// `Q xi` for a standard increment `xi` (only its low modes are read).
    pub fn apply(&self, xi: &FourierField) -> FourierField {
        let mut out = FourierField::zeros(&self.grid);
        for (o, (a, q)) in out.amplitudes_mut().iter_mut().zip(xi.amplitudes().iter().zip(&self.q)) {
            *o = a * q;
        }
        out
    }

    /// `Q^{-1}` on `H^l`; modes above `N0` are ignored.
    pub fn apply_inverse(&self, x: &FourierField) -> Result<FourierField> {
        if !self.is_invertible() {
            return Err(Error::Degenerate("Q is not invertible on the low modes".into()));
        }
        let mut out = FourierField::zeros(&self.grid);
        for (o, (a, q)) in out.amplitudes_mut().iter_mut().zip(x.amplitudes().iter().zip(&self.q)) {
            *o = a / q;
        }
        Ok(out)
    }
}

/// Fills `xi[..m0]` with a standard cylindrical increment over `dt`: each stored low mode
/// gets `(g1 + i g2) sqrt(dt/2)`, so each real degree of freedom is `N(0, dt)`.
pub fn draw_standard_increment(rng: &mut ChaCha8Rng, dt: f64, xi: &mut [Complex64]) {
    let s = (0.5 * dt).sqrt();
    for a in xi.iter_mut() {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        *a = Complex64::new(g1 * s, g2 * s);
    }
}

/// Standard increment `dW` restricted to `|k| <= N0`, as a field.
pub fn standard_increment(noise: &NoiseOperator, dt: f64, rng: &mut ChaCha8Rng) -> FourierField {
    let mut out = FourierField::zeros(noise.grid());
    draw_standard_increment(rng, dt, &mut out.amplitudes_mut()[..noise.forced_len()]);
    out
}

/// `Q dW` over a step `dt`.
pub fn wiener_increment(noise: &NoiseOperator, dt: f64, rng: &mut ChaCha8Rng) -> Result<FourierField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    Ok(noise.apply(&standard_increment(noise, dt, rng)))
}

/// Number of steps of size `dt` in `[0, t]`; errors unless `dt` divides `t`.
pub fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and t >= 0, got dt = {dt}, t = {t}")));
    }
    let n = (t / dt).round();
    if (n * dt - t).abs() > 1e-9 * t.max(dt) {
        return Err(Error::OffGrid(t));
    }
    Ok(n as usize)
}

/// One exponential Euler step with a given increment `dw = Q dW` (not a standard one).
pub fn step_exponential_euler(
    x: &FourierField,
    dw: &FourierField,
    dt: f64,
    params: &PhysicsParams,
    ws: &BilinearWorkspace,
) -> Result<FourierField> {
    x.grid().check_same(dw.grid())?;
    x.grid().check_same(ws.grid())?;
    if !x.is_finite() {
        return Err(Error::BlowUp {
            time: f64::NAN,
            reason: "non-finite state".into(),
        });
    }
    let b = if params.nonlinear {
        ws.quadratic(x)?
    } else {
        FourierField::zeros(x.grid())
    };
    let g = x.grid();
    let amps = (0..g.len())
        .map(|i| {
            let decay = (-params.nu * g.norm_sq(i) * dt).exp();
            (x.amplitudes()[i] - b.amplitudes()[i] * dt + dw.amplitudes()[i]) * decay
        })
        .collect();
    FourierField::from_amplitudes(g, amps)
}

/// Immutable simulation setup shared by all paths.
#[derive(Clone, Debug)]
pub struct Simulator {
    ws: Arc<BilinearWorkspace>,
    params: PhysicsParams,
    noise: NoiseOperator,
    dt: f64,
    decay: Vec<f64>,
    k2: Vec<f64>,
}

/// State of one path at a time node, handed to observers.
#[derive(Clone, Copy, Debug)]
pub struct XView<'a> {
    pub step: usize,
    pub t: f64,
    pub x: &'a FourierField,
    /// `nu int_0^t |A^{1/2} X|^2 ds`, trapezoidal.
    pub dissipation: f64,
}

impl Simulator {
    pub fn new(ws: Arc<BilinearWorkspace>, params: PhysicsParams, noise: NoiseOperator, dt: f64) -> Result<Self> {
        let g = ws.grid().clone();
        params.validate(&g)?;
        g.check_same(noise.grid())?;
        if noise.n0() != params.n0 {
            return Err(Error::InvalidParameter(format!(
                "noise cutoff {} differs from N0 = {}",
                noise.n0(),
                params.n0
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let k2: Vec<f64> = (0..g.len()).map(|i| g.norm_sq(i)).collect();
        let decay = k2.iter().map(|k| (-params.nu * k * dt).exp()).collect();
        Ok(Self {
            ws,
            params,
            noise,
            dt,
            decay,
            k2,
        })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.ws.grid()
    }

    pub fn workspace(&self) -> &Arc<BilinearWorkspace> {
        &self.ws
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseOperator {
        &self.noise
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `exp(-nu |k|^2 dt)` per stored mode.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// `|A^{1/2} x|^2`.
    pub fn h1(&self, a: &[Complex64]) -> f64 {
        2.0 * a.iter().zip(&self.k2).map(|(a, k)| k * a.norm_sqr()).sum::<f64>()
    }

    /// In-place step given `b = B(X)` and the standard increment `xi` on low modes.
    pub(crate) fn advance(&self, a: &mut [Complex64], b: &[Complex64], xi: &[Complex64]) {
        let dt = self.dt;
        let q = self.noise.amplitudes();
        for i in 0..a.len() {
            let mut v = a[i] - b[i] * dt;
            if i < q.len() {
                v += xi[i] * q[i];
            }
            a[i] = v * self.decay[i];
        }
    }

    pub(crate) fn check_state(&self, x: &FourierField, step: usize) -> Result<()> {
        let n = x.norm();
        if !n.is_finite() || n > BLOWUP_NORM {
            return Err(Error::BlowUp {
                time: step as f64 * self.dt,
                reason: format!("|X| = {n}"),
            });
        }
        Ok(())
    }

    /// Trapezoidal dissipation increment between two nodes.
    pub(crate) fn dissipation_step(&self, h_prev: f64, h_next: f64) -> f64 {
        0.5 * self.params.nu * self.dt * (h_prev + h_next)
    }

    /// Single path with every state and increment stored. Uses stream 0 of `seed`, the
    /// same stream as path 0 of [`Simulator::ensemble`].
    pub fn simulate_x(&self, x0: &FourierField, t_end: f64, seed: u64) -> Result<SdePath> {
        self.simulate_x_stream(x0, t_end, seed, Purpose::Base, 0)
    }

    pub fn simulate_x_stream(
        &self,
        x0: &FourierField,
        t_end: f64,
        seed: u64,
        purpose: Purpose,
        index: u64,
    ) -> Result<SdePath> {
        let g = self.grid().clone();
        g.check_same(x0.grid())?;
        let n_steps = steps_for(t_end, self.dt)?;
        let mut rng = path_rng(seed, purpose, index);
        let m0 = self.noise.forced_len();
        let mut states = Vec::with_capacity(n_steps + 1);
        let mut dissipation = Vec::with_capacity(n_steps + 1);
        let mut increments = Vec::with_capacity(n_steps);
        let mut x = x0.clone();
        self.check_state(&x, 0)?;
        let mut h = self.h1(x.amplitudes());
        let mut diss = 0.0;
        states.push(x.clone());
        dissipation.push(0.0);
        let mut lx = Lanes::<1>::zeros(g.full_len());
        let mut lb = Lanes::<1>::zeros(g.len());
        let mut b = vec![Complex64::new(0.0, 0.0); g.len()];
        for n in 0..n_steps {
            let mut xi = FourierField::zeros(&g);
            draw_standard_increment(&mut rng, self.dt, &mut xi.amplitudes_mut()[..m0]);
            if self.params.nonlinear {
                lx.load_full(0, x.amplitudes());
                self.ws.quadratic_lanes(&lx, 0..g.len(), &mut lb);
                lb.store(0, &mut b);
            }
            self.advance(x.amplitudes_mut(), &b, xi.amplitudes());
            self.check_state(&x, n + 1)?;
            let h_next = self.h1(x.amplitudes());
            diss += self.dissipation_step(h, h_next);
            h = h_next;
            states.push(x.clone());
            dissipation.push(diss);
            increments.push(xi);
        }
        Ok(SdePath {
            dt: self.dt,
            states,
            dissipation,
            increments,
        })
    }

    /// Runs `n_paths` independent noise realisations for `n_steps`. Path `i` uses stream
    /// `i` of `(seed, purpose)` and advances one trajectory per entry of `starts`, all
    /// driven by that same noise (common random numbers). `observe` is called at every
    /// node `0..=n_steps` with one view per start; per-path results come back in index
    /// order, independent of batching and threads.
    pub fn ensemble<T, I, F>(
        &self,
        starts: &[FourierField],
        n_steps: usize,
        n_paths: usize,
        seed: u64,
        purpose: Purpose,
        init: I,
        observe: F,
    ) -> Result<Vec<T>>
    where
        T: Send,
        I: Fn(usize) -> T + Sync,
        F: Fn(&mut T, &[XView]) + Sync,
    {
        let k = starts.len();
        if k == 0 || k > LANES {
            return Err(Error::InvalidParameter(format!("need 1..={LANES} starting points, got {k}")));
        }
        for s in starts {
            self.grid().check_same(s.grid())?;
            self.check_state(s, 0)?;
        }
        let per_batch = LANES / k;
        let batches: Vec<usize> = (0..n_paths.div_ceil(per_batch)).collect();
        let out: Vec<Result<Vec<T>>> = batches
            .par_iter()
            .map(|&bi| {
                let first = bi * per_batch;
                let count = per_batch.min(n_paths - first);
                self.run_batch(starts, n_steps, first, count, seed, purpose, &init, &observe)
            })
            .collect();
        let mut all = Vec::with_capacity(n_paths);
        for r in out {
            all.extend(r?);
        }
        Ok(all)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_batch<T, I, F>(
        &self,
        starts: &[FourierField],
        n_steps: usize,
        first: usize,
        count: usize,
        seed: u64,
        purpose: Purpose,
        init: &I,
        observe: &F,
    ) -> Result<Vec<T>>
    where
        I: Fn(usize) -> T,
        F: Fn(&mut T, &[XView]),
    {
        let g = self.grid();
        let k = starts.len();
        let m0 = self.noise.forced_len();
        let mut rngs: Vec<ChaCha8Rng> = (0..count).map(|j| path_rng(seed, purpose, (first + j) as u64)).collect();
        let mut results: Vec<T> = (0..count).map(|j| init(first + j)).collect();
        // lane j * k + s holds start s of path first + j
        let mut xs: Vec<FourierField> = (0..count).flat_map(|_| starts.iter().cloned()).collect();
        let mut h: Vec<f64> = xs.iter().map(|x| self.h1(x.amplitudes())).collect();
        let mut diss = vec![0.0; xs.len()];
        let mut xi = vec![Complex64::new(0.0, 0.0); m0];
        let mut b = vec![Complex64::new(0.0, 0.0); g.len()];
        let mut lx = Lanes::<LANES>::zeros(g.full_len());
        let mut lb = Lanes::<LANES>::zeros(g.len());
        for n in 0..=n_steps {
            let t = n as f64 * self.dt;
            for (j, res) in results.iter_mut().enumerate() {
                let views: Vec<XView> = (0..k)
                    .map(|s| XView {
                        step: n,
                        t,
                        x: &xs[j * k + s],
                        dissipation: diss[j * k + s],
                    })
                    .collect();
                observe(res, &views);
            }
            if n == n_steps {
                break;
            }
            if self.params.nonlinear {
                for (l, x) in xs.iter().enumerate() {
                    lx.load_full(l, x.amplitudes());
                }
                self.ws.quadratic_lanes(&lx, 0..g.len(), &mut lb);
            }
            for j in 0..count {
                draw_standard_increment(&mut rngs[j], self.dt, &mut xi);
                for s in 0..k {
                    let l = j * k + s;
                    if self.params.nonlinear {
                        lb.store(l, &mut b);
                    }
                    self.advance(xs[l].amplitudes_mut(), &b, &xi);
                    self.check_state(&xs[l], n + 1)?;
                    let h_next = self.h1(xs[l].amplitudes());
                    diss[l] += self.dissipation_step(h[l], h_next);
                    h[l] = h_next;
                }
            }
        }
        Ok(results)
    }
}

/// A stored trajectory of `X` on a uniform time grid.
#[derive(Clone, Debug)]
pub struct SdePath {
    pub dt: f64,
    pub states: Vec<FourierField>,
    /// `nu int_0^{t_n} |A^{1/2} X|^2`, trapezoidal, per node.
    pub dissipation: Vec<f64>,
    /// Standard increments `dW` (not multiplied by `Q`), one per step.
    pub increments: Vec<FourierField>,
}

impl SdePath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn node(&self, t: f64) -> Result<usize> {
        let n = steps_for(t, self.dt)?;
        if n >= self.states.len() {
            return Err(Error::OffGrid(t));
        }
        Ok(n)
    }

    /// Time-series dump: `t, |X|^2, |A^{1/2}X|^2, dissipation`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "norm_sq", "h1_norm_sq", "dissipation"])?;
        for (n, (x, d)) in self.states.iter().zip(&self.dissipation).enumerate() {
            wr.write_record([
                format!("{}", self.time(n)),
                format!("{:e}", x.norm_sq()),
                format!("{:e}", x.h1_norm_sq()),
                format!("{d:e}"),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `|X(t)|^2 + nu int_0^t |A^{1/2} X|^2`.
pub fn energy_functional(path: &SdePath, t: f64) -> Result<f64> {
    let n = path.node(t)?;
    Ok(path.states[n].norm_sq() + path.dissipation[n])
}
