//! Galerkin-truncated Navier-Stokes bilinear term `B(u, v) = pi_N P[(u . grad) v]`.
//!
//! With `u_p = a_p p_perp/|p|` and `v_q = b_q q_perp/|q|`, the stream amplitude of the
//! output at `k = p + q` is
//!
//! ```text
//! c_k = (i / 2 pi) sum_{p+q=k} (p_perp . q)(q . k) / (|p| |q| |k|) a_p b_q
//! ```
//!
//! The `1/(2 pi)` comes from `e_p e_q = e_{p+q} / (2 pi)` in the orthonormal basis.
//! The sum runs over the exact truncated index set, so there is no aliasing.

use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::Result;
use crate::spectral::{mode_norm_sq, FourierField, Mode, SpectralGrid};

/// Real and imaginary parts of one mode across `L` lanes, one cache line for `L = 4`.
#[derive(Clone, Copy, Debug)]
#[repr(C, align(64))]
pub struct Cell<const L: usize> {
    pub re: [f64; L],
    pub im: [f64; L],
}

/// Lane-interleaved amplitudes: entry `j` holds mode `j` of `L` independent fields.
#[derive(Clone, Debug)]
pub struct Lanes<const L: usize> {
    pub cells: Vec<Cell<L>>,
}

impl<const L: usize> Lanes<L> {
    pub fn zeros(len: usize) -> Self {
        Self {
            cells: vec![
                Cell {
                    re: [0.0; L],
                    im: [0.0; L]
                };
                len
            ],
        }
    }

    /// Loads the full-lattice expansion of `f` into lane `l`.
    pub fn load_full(&mut self, l: usize, f: &[Complex64]) {
        for (i, a) in f.iter().enumerate() {
            self.set_full(l, i, *a);
        }
    }

    /// Sets stored mode `i` of lane `l` to `a` (and its conjugate partner).
    #[inline]
    pub fn set_full(&mut self, l: usize, i: usize, a: Complex64) {
        self.cells[2 * i].re[l] = a.re;
        self.cells[2 * i].im[l] = a.im;
        self.cells[2 * i + 1].re[l] = -a.re;
        self.cells[2 * i + 1].im[l] = a.im;
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize) -> Complex64 {
        Complex64::new(self.cells[i].re[l], self.cells[i].im[l])
    }

    pub fn store(&self, l: usize, out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.get(l, i);
        }
    }
}

/// Precomputed convolution table of the truncated bilinear term.
#[derive(Debug)]
pub struct BilinearWorkspace {
    grid: Arc<SpectralGrid>,
    offsets: Vec<usize>,
    p_idx: Vec<u32>,
    q_idx: Vec<u32>,
    coef: Vec<f64>,
    // unordered pairs {p, q} with the symmetrised coefficient c(p,q) + c(q,p), zeros dropped
    sym_offsets: Vec<usize>,
    sym_p: Vec<u32>,
    sym_q: Vec<u32>,
    sym_coef: Vec<f64>,
}

fn perp_dot(p: Mode, q: Mode) -> i64 {
    // p_perp . q with p_perp = (-p2, p1)
    -(p[1] as i64) * q[0] as i64 + p[0] as i64 * q[1] as i64
}

fn dot(p: Mode, q: Mode) -> i64 {
    p[0] as i64 * q[0] as i64 + p[1] as i64 * q[1] as i64
}

impl BilinearWorkspace {
    pub fn new(grid: &Arc<SpectralGrid>) -> Self {
        let inv_2pi = 0.5 / std::f64::consts::PI;
        let mut offsets = Vec::with_capacity(grid.len() + 1);
        let (mut p_idx, mut q_idx, mut coef) = (Vec::new(), Vec::new(), Vec::new());
        offsets.push(0);
        for &k in grid.modes() {
            let kn = (mode_norm_sq(k) as f64).sqrt();
            for jp in 0..grid.full_len() {
                let p = grid.full_mode(jp);
                let q = [k[0] - p[0], k[1] - p[1]];
                let Some(jq) = grid.full_index(q) else {
                    continue;
                };
                let denom = (mode_norm_sq(p) as f64).sqrt() * (mode_norm_sq(q) as f64).sqrt() * kn;
                p_idx.push(jp as u32);
                q_idx.push(jq as u32);
                coef.push(inv_2pi * (perp_dot(p, q) * dot(q, k)) as f64 / denom);
            }
            offsets.push(p_idx.len());
        }
        let mut sym_offsets = vec![0];
        let (mut sym_p, mut sym_q, mut sym_coef) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &k) in grid.modes().iter().enumerate() {
            let kn = (mode_norm_sq(k) as f64).sqrt();
            for j in offsets[i]..offsets[i + 1] {
                let (jp, jq) = (p_idx[j], q_idx[j]);
                if jp >= jq {
                    continue;
                }
                let (p, q) = (grid.full_mode(jp as usize), grid.full_mode(jq as usize));
                // c(p,q) + c(q,p) = (p_perp . q)(q.k - p.k) / (|p||q||k|) / (2 pi)
                let num = perp_dot(p, q) * (dot(q, k) - dot(p, k));
                if num == 0 {
                    continue;
                }
                let denom = (mode_norm_sq(p) as f64).sqrt() * (mode_norm_sq(q) as f64).sqrt() * kn;
                sym_p.push(jp);
                sym_q.push(jq);
                sym_coef.push(inv_2pi * num as f64 / denom);
            }
            sym_offsets.push(sym_p.len());
        }
        Self {
            grid: grid.clone(),
            offsets,
            p_idx,
            q_idx,
            coef,
            sym_offsets,
            sym_p,
            sym_q,
            sym_coef,
        }
    }

    /// Number of unordered pairs with nonzero symmetrised coefficient.
    pub fn sym_table_len(&self) -> usize {
        self.sym_coef.len()
    }

    /// `out = B(u, u)` on output modes in `range`, via the symmetrised table.
    pub fn quadratic_lanes<const L: usize>(&self, u: &Lanes<L>, range: Range<usize>, out: &mut Lanes<L>) {
        assert!(u.cells.len() >= self.grid.full_len() && out.cells.len() >= range.end);
        for i in range {
            let (lo, hi) = (self.sym_offsets[i], self.sym_offsets[i + 1]);
            let mut ar = [0.0; L];
            let mut ai = [0.0; L];
            for ((&p, &q), &c) in self.sym_p[lo..hi]
                .iter()
                .zip(&self.sym_q[lo..hi])
                .zip(&self.sym_coef[lo..hi])
            {
                // SAFETY: table indices are < full_len, asserted above.
                let (ur, ui, vr, vi) = unsafe {
                    (
                        &u.cells.get_unchecked(p as usize).re,
                        &u.cells.get_unchecked(p as usize).im,
                        &u.cells.get_unchecked(q as usize).re,
                        &u.cells.get_unchecked(q as usize).im,
                    )
                };
                for l in 0..L {
                    let sr = ur[l] * vr[l] - ui[l] * vi[l];
                    let si = ur[l] * vi[l] + ui[l] * vr[l];
                    ar[l] += sr * c;
                    ai[l] += si * c;
                }
            }
            out.cells[i].re = ai.map(|x| -x);
            out.cells[i].im = ar;
        }
    }

    /// Symmetric two-term form: `out = sum s (u1_p v1_q + u2_p v2_q)` over unordered pairs.
    ///
    /// This equals `B(u1, v1) + B(u2, v2)` whenever the summand is symmetric under
    /// swapping `p` and `q` after summing, e.g. `B~(u, v)` with `(u, v), (v, u)`.
    pub fn sym_pair_lanes<const L: usize>(
        &self,
        (u1, v1): (&Lanes<L>, &Lanes<L>),
        (u2, v2): (&Lanes<L>, &Lanes<L>),
        range: Range<usize>,
        out: &mut Lanes<L>,
    ) {
        let n = self.grid.full_len();
        assert!([u1, v1, u2, v2].iter().all(|b| b.cells.len() >= n) && out.cells.len() >= range.end);
        for i in range {
            let (lo, hi) = (self.sym_offsets[i], self.sym_offsets[i + 1]);
            let mut ar = [0.0; L];
            let mut ai = [0.0; L];
            for ((&p, &q), &c) in self.sym_p[lo..hi]
                .iter()
                .zip(&self.sym_q[lo..hi])
                .zip(&self.sym_coef[lo..hi])
            {
                let (p, q) = (p as usize, q as usize);
                // SAFETY: table indices are < full_len, asserted above.
                let (ar1, ai1, br1, bi1, ar2, ai2, br2, bi2) = unsafe {
                    (
                        &u1.cells.get_unchecked(p).re,
                        &u1.cells.get_unchecked(p).im,
                        &v1.cells.get_unchecked(q).re,
                        &v1.cells.get_unchecked(q).im,
                        &u2.cells.get_unchecked(p).re,
                        &u2.cells.get_unchecked(p).im,
                        &v2.cells.get_unchecked(q).re,
                        &v2.cells.get_unchecked(q).im,
                    )
                };
                for l in 0..L {
                    let sr = (ar1[l] * br1[l] - ai1[l] * bi1[l]) + (ar2[l] * br2[l] - ai2[l] * bi2[l]);
                    let si = (ar1[l] * bi1[l] + ai1[l] * br1[l]) + (ar2[l] * bi2[l] + ai2[l] * br2[l]);
                    ar[l] += sr * c;
                    ai[l] += si * c;
                }
            }
            out.cells[i].re = ai.map(|x| -x);
            out.cells[i].im = ar;
        }
    }

    /// Fused coupled-step kernel: `bx = B(x, x)` and `nz = B(z) + B~(z, x)` in one sweep,
    /// the latter as `sum s (z_p (z_q + x_q) + x_p z_q)`.
    pub fn coupled_lanes<const L: usize>(&self, x: &Lanes<L>, z: &Lanes<L>, bx: &mut Lanes<L>, nz: &mut Lanes<L>) {
        let n = self.grid.full_len();
        let m = self.grid.len();
        assert!(x.cells.len() >= n && z.cells.len() >= n && bx.cells.len() >= m && nz.cells.len() >= m);
        for i in 0..m {
            let (lo, hi) = (self.sym_offsets[i], self.sym_offsets[i + 1]);
            let (mut br, mut bi) = ([0.0; L], [0.0; L]);
            let (mut nr, mut ni) = ([0.0; L], [0.0; L]);
            for ((&p, &q), &c) in self.sym_p[lo..hi]
                .iter()
                .zip(&self.sym_q[lo..hi])
                .zip(&self.sym_coef[lo..hi])
            {
                let (p, q) = (p as usize, q as usize);
                // SAFETY: table indices are < full_len, asserted above.
                let (xpr, xpi, xqr, xqi, zpr, zpi, zqr, zqi) = unsafe {
                    (
                        &x.cells.get_unchecked(p).re,
                        &x.cells.get_unchecked(p).im,
                        &x.cells.get_unchecked(q).re,
                        &x.cells.get_unchecked(q).im,
                        &z.cells.get_unchecked(p).re,
                        &z.cells.get_unchecked(p).im,
                        &z.cells.get_unchecked(q).re,
                        &z.cells.get_unchecked(q).im,
                    )
                };
                for l in 0..L {
                    let sr = xpr[l] * xqr[l] - xpi[l] * xqi[l];
                    let si = xpr[l] * xqi[l] + xpi[l] * xqr[l];
                    br[l] += sr * c;
                    bi[l] += si * c;
                    let (yqr, yqi) = (zqr[l] + xqr[l], zqi[l] + xqi[l]);
                    let tr = (zpr[l] * yqr - zpi[l] * yqi) + (xpr[l] * zqr[l] - xpi[l] * zqi[l]);
                    let ti = (zpr[l] * yqi + zpi[l] * yqr) + (xpr[l] * zqi[l] + xpi[l] * zqr[l]);
                    nr[l] += tr * c;
                    ni[l] += ti * c;
                }
            }
            bx.cells[i].re = bi.map(|v| -v);
            bx.cells[i].im = br;
            nz.cells[i].re = ni.map(|v| -v);
            nz.cells[i].im = nr;
        }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    /// Number of `(p, q)` pairs in the table.
    pub fn table_len(&self) -> usize {
        self.coef.len()
    }

    /// Pairs `(p, q)` contributing to stored output mode `i`.
    pub fn pairs_for(&self, i: usize) -> impl Iterator<Item = (Mode, Mode)> + '_ {
        (self.offsets[i]..self.offsets[i + 1]).map(|j| {
            (
                self.grid.full_mode(self.p_idx[j] as usize),
                self.grid.full_mode(self.q_idx[j] as usize),
            )
        })
    }

    /// `out[i] = i * sum_pairs coef * (u_p v_q)` on stored output modes in `range`, for
    /// `L` fields at once. Every lane sees exactly the scalar operation sequence.
    pub fn eval_lanes<const L: usize>(
        &self,
        u: &Lanes<L>,
        v: &Lanes<L>,
        range: Range<usize>,
        out: &mut Lanes<L>,
    ) {
        let n = self.grid.full_len();
        assert!(u.cells.len() >= n && v.cells.len() >= n && out.cells.len() >= range.end);
        for i in range {
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            let mut ar = [0.0; L];
            let mut ai = [0.0; L];
            for ((&p, &q), &c) in self.p_idx[lo..hi]
                .iter()
                .zip(&self.q_idx[lo..hi])
                .zip(&self.coef[lo..hi])
            {
                // SAFETY: table indices are < full_len, asserted above.
                let (ur, ui, vr, vi) = unsafe {
                    (
                        &u.cells.get_unchecked(p as usize).re,
                        &u.cells.get_unchecked(p as usize).im,
                        &v.cells.get_unchecked(q as usize).re,
                        &v.cells.get_unchecked(q as usize).im,
                    )
                };
                for l in 0..L {
                    let sr = ur[l] * vr[l] - ui[l] * vi[l];
                    let si = ur[l] * vi[l] + ui[l] * vr[l];
                    ar[l] += sr * c;
                    ai[l] += si * c;
                }
            }
            out.cells[i].re = ai.map(|x| -x);
            out.cells[i].im = ar;
        }
    }

    fn eval_single(&self, u: &FourierField, v: &FourierField, range: Range<usize>) -> FourierField {
        let n = self.grid.full_len();
        let (mut lu, mut lv) = (Lanes::<1>::zeros(n), Lanes::<1>::zeros(n));
        lu.load_full(0, u.amplitudes());
        lv.load_full(0, v.amplitudes());
        let mut lo = Lanes::<1>::zeros(self.grid.len());
        self.eval_lanes(&lu, &lv, range, &mut lo);
        let mut out = FourierField::zeros(&self.grid);
        lo.store(0, out.amplitudes_mut());
        out
    }

    /// `B(u, v)`.
    pub fn bilinear(&self, u: &FourierField, v: &FourierField) -> Result<FourierField> {
        self.grid.check_same(u.grid())?;
        self.grid.check_same(v.grid())?;
        Ok(self.eval_single(u, v, 0..self.grid.len()))
    }

    /// `B(u, u)` through the symmetrised table (about half the work of [`Self::bilinear`]).
    pub fn quadratic(&self, u: &FourierField) -> Result<FourierField> {
        self.grid.check_same(u.grid())?;
        let mut lu = Lanes::<1>::zeros(self.grid.full_len());
        lu.load_full(0, u.amplitudes());
        let mut lo = Lanes::<1>::zeros(self.grid.len());
        self.quadratic_lanes(&lu, 0..self.grid.len(), &mut lo);
        let mut out = FourierField::zeros(&self.grid);
        lo.store(0, out.amplitudes_mut());
        Ok(out)
    }

    /// `B~(u, v) = B(u, v) + B(v, u)`.
    pub fn bilinear_tilde(&self, u: &FourierField, v: &FourierField) -> Result<FourierField> {
        self.grid.check_same(u.grid())?;
        self.grid.check_same(v.grid())?;
        let n = self.grid.full_len();
        let (mut lu, mut lv) = (Lanes::<1>::zeros(n), Lanes::<1>::zeros(n));
        lu.load_full(0, u.amplitudes());
        lv.load_full(0, v.amplitudes());
        let mut lo = Lanes::<1>::zeros(self.grid.len());
        self.sym_pair_lanes((&lu, &lv), (&lv, &lu), 0..self.grid.len(), &mut lo);
        let mut out = FourierField::zeros(&self.grid);
        lo.store(0, out.amplitudes_mut());
        Ok(out)
    }

    /// `B^l(u, v) = pi_{N0} B(u, v)`; only the low output modes are evaluated.
    pub fn bilinear_low(&self, u: &FourierField, v: &FourierField, n0: u32) -> Result<FourierField> {
        self.grid.check_same(u.grid())?;
        self.grid.check_same(v.grid())?;
        self.grid.check_cutoff(n0)?;
        Ok(self.eval_single(u, v, 0..self.grid.count_within(n0)))
    }

    /// `B(z) + B~(z, x) = B(z, z + x) + B(x, z)`, the nonlinear part of the difference
    /// equation between two solutions `x` and `x + z`, in one pass.
    pub fn difference_term(&self, z: &FourierField, x: &FourierField) -> Result<FourierField> {
        self.grid.check_same(z.grid())?;
        self.grid.check_same(x.grid())?;
        let n = self.grid.full_len();
        let (mut lz, mut lx, mut ly) = (Lanes::<1>::zeros(n), Lanes::<1>::zeros(n), Lanes::<1>::zeros(n));
        lz.load_full(0, z.amplitudes());
        lx.load_full(0, x.amplitudes());
        ly.load_full(0, (z + x).amplitudes());
        let mut lo = Lanes::<1>::zeros(self.grid.len());
        self.sym_pair_lanes((&lz, &ly), (&lx, &lz), 0..self.grid.len(), &mut lo);
        let mut out = FourierField::zeros(&self.grid);
        lo.store(0, out.amplitudes_mut());
        Ok(out)
    }

    /// Value and gradients of the trilinear form `T(x, y, z) = <x, B(y, z)>`.
    ///
    /// Gradients are Riesz representatives in `H`: `dT = <g_x, dx> + <g_y, dy> + <g_z, dz>`.
    pub fn trilinear_gradients(
        &self,
        x: &FourierField,
        y: &FourierField,
        z: &FourierField,
    ) -> Result<(f64, FourierField, FourierField, FourierField)> {
        let gx = self.bilinear(y, z)?;
        let t = x.inner(&gx)?;
        let gz = -&self.bilinear(y, x)?;
        // d/dy: T = 2 sum_k Re(conj(X_k) i sum c Y_p Z_q) over stored k
        let fx = x.full_amplitudes();
        let fz = z.full_amplitudes();
        let mut w = vec![Complex64::new(0.0, 0.0); self.grid.full_len()];
        for i in 0..self.grid.len() {
            let xk = fx[2 * i].conj();
            for j in self.offsets[i]..self.offsets[i + 1] {
                let s = xk * fz[self.q_idx[j] as usize] * self.coef[j];
                w[self.p_idx[j] as usize] += Complex64::new(-2.0 * s.im, 2.0 * s.re);
            }
        }
        let amps = (0..self.grid.len())
            .map(|i| (w[2 * i] - w[2 * i + 1].conj()).conj() * 0.5)
            .collect();
        let gy = FourierField::from_amplitudes(&self.grid, amps)?;
        Ok((t, gx, gy, gz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{leray_project, RawField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Arc<SpectralGrid>, rng: &mut impl Rng) -> FourierField {
        let amps = (0..grid.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        FourierField::from_amplitudes(grid, amps).unwrap()
    }

    /// Independent evaluation: raw velocity convolution over all lattice pairs, then Leray.
    fn naive_bilinear(u: &FourierField, v: &FourierField) -> FourierField {
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

    #[test]
    fn table_covers_exactly_the_truncated_pairs() {
        let g = SpectralGrid::new(4).unwrap();
        let ws = BilinearWorkspace::new(&g);
        for (i, &k) in g.modes().iter().enumerate() {
            let mut listed: Vec<(Mode, Mode)> = ws.pairs_for(i).collect();
            listed.sort();
            let mut expect = Vec::new();
            for p1 in -4..=4 {
                for p2 in -4..=4 {
                    let p = [p1, p2];
                    let q = [k[0] - p1, k[1] - p2];
                    if (1..=16).contains(&mode_norm_sq(p)) && (1..=16).contains(&mode_norm_sq(q)) {
                        expect.push((p, q));
                    }
                }
            }
            expect.sort();
            assert_eq!(listed, expect);
        }
    }

    #[test]
    fn zero_arguments() {
        let g = SpectralGrid::new(4).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_field(&g, &mut rng);
        let z = FourierField::zeros(&g);
        assert_eq!(ws.bilinear(&z, &v).unwrap().norm(), 0.0);
        assert_eq!(ws.bilinear(&v, &z).unwrap().norm(), 0.0);
    }

    #[test]
    fn matches_naive_two_mode() {
        let g = SpectralGrid::new(2).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut u = FourierField::single_mode(&g, [1, 0], Complex64::new(0.7, 0.2)).unwrap();
        u.set_mode([1, 1], Complex64::new(-0.3, 0.5)).unwrap();
        let mut v = FourierField::single_mode(&g, [0, 1], Complex64::new(0.4, -0.9)).unwrap();
        v.set_mode([-1, 1], Complex64::new(1.1, 0.1)).unwrap();
        let fast = ws.bilinear(&u, &v).unwrap();
        let slow = naive_bilinear(&u, &v);
        assert!(slow.norm() > 1e-3);
        assert!((&fast - &slow).norm() <= 1e-12 * slow.norm());
    }

    #[test]
    fn energy_neutral_and_skew() {
        let g = SpectralGrid::new(4).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random_field(&g, &mut rng);
            let y = random_field(&g, &mut rng);
            let z = random_field(&g, &mut rng);
            let scale = x.norm() * ws.bilinear(&y, &x).unwrap().norm();
            assert!(x.inner(&ws.bilinear(&y, &x).unwrap()).unwrap().abs() <= 1e-10 * scale);
            let a = x.inner(&ws.bilinear(&y, &z).unwrap()).unwrap();
            let b = z.inner(&ws.bilinear(&y, &x).unwrap()).unwrap();
            assert!((a + b).abs() <= 1e-10 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn tilde_and_low_parts() {
        let g = SpectralGrid::new(5).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        let t = ws.bilinear_tilde(&u, &v).unwrap();
        let sum = &ws.bilinear(&u, &v).unwrap() + &ws.bilinear(&v, &u).unwrap();
        assert!((&t - &sum).norm() <= 1e-13 * sum.norm());
        assert!((&t - &ws.bilinear_tilde(&v, &u).unwrap()).norm() <= 1e-13 * t.norm());
        let uu = ws.bilinear_tilde(&u, &u).unwrap();
        assert!((&uu - &(&ws.bilinear(&u, &u).unwrap() * 2.0)).norm() <= 1e-13 * uu.norm());
        let low = ws.bilinear_low(&u, &v, 2).unwrap();
        let (expect, _) = ws.bilinear(&u, &v).unwrap().split_low_high(2).unwrap();
        assert!((&low - &expect).norm() <= 1e-14 * expect.norm());
        // inputs above N0 = 1 whose convolutions stay above N0 give nothing at low modes
        let a = FourierField::single_mode(&g, [3, 0], Complex64::new(1.0, 0.0)).unwrap();
        let b = FourierField::single_mode(&g, [0, 3], Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(ws.bilinear_low(&a, &b, 1).unwrap().norm(), 0.0);
    }

    #[test]
    fn difference_term_matches_expansion() {
        let g = SpectralGrid::new(4).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_field(&g, &mut rng);
        let x = random_field(&g, &mut rng);
        let fused = ws.difference_term(&z, &x).unwrap();
        let expect = &ws.bilinear(&z, &z).unwrap() + &ws.bilinear_tilde(&z, &x).unwrap();
        assert!((&fused - &expect).norm() <= 1e-13 * expect.norm());
    }

    #[test]
    fn symmetric_table_matches_full_table() {
        let g = SpectralGrid::new(6).unwrap();
        let ws = BilinearWorkspace::new(&g);
        assert!(ws.sym_table_len() * 2 < ws.table_len());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&g, &mut rng);
        let q = ws.quadratic(&u).unwrap();
        let full = ws.bilinear(&u, &u).unwrap();
        assert!((&q - &full).norm() <= 1e-13 * full.norm());
    }

    #[test]
    fn lanes_are_bitwise_independent_of_batch_width() {
        let g = SpectralGrid::new(5).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<FourierField> = (0..4).map(|_| random_field(&g, &mut rng)).collect();
        let zs: Vec<FourierField> = (0..4).map(|_| random_field(&g, &mut rng)).collect();
        let (n, m) = (g.full_len(), g.len());
        let (mut x4, mut z4) = (Lanes::<4>::zeros(n), Lanes::<4>::zeros(n));
        for l in 0..4 {
            x4.load_full(l, xs[l].amplitudes());
            z4.load_full(l, zs[l].amplitudes());
        }
        let (mut b4, mut n4) = (Lanes::<4>::zeros(m), Lanes::<4>::zeros(m));
        ws.coupled_lanes(&x4, &z4, &mut b4, &mut n4);
        for l in 0..4 {
            let mut b = FourierField::zeros(&g);
            let mut d = FourierField::zeros(&g);
            b4.store(l, b.amplitudes_mut());
            n4.store(l, d.amplitudes_mut());
            assert_eq!(b, ws.quadratic(&xs[l]).unwrap());
            assert_eq!(d, ws.difference_term(&zs[l], &xs[l]).unwrap());
        }
    }

    #[test]
    fn trilinear_gradient_matches_finite_differences() {
        let g = SpectralGrid::new(3).unwrap();
        let ws = BilinearWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_field(&g, &mut rng);
        let y = random_field(&g, &mut rng);
        let z = random_field(&g, &mut rng);
        let (t, gx, gy, gz) = ws.trilinear_gradients(&x, &y, &z).unwrap();
        let d = random_field(&g, &mut rng);
        let h = 1e-6;
        let tri = |a: &FourierField, b: &FourierField, c: &FourierField| {
            a.inner(&ws.bilinear(b, c).unwrap()).unwrap()
        };
        assert!((tri(&x, &y, &z) - t).abs() < 1e-13);
        let fd_x = (tri(&(&x + &(&d * h)), &y, &z) - tri(&(&x - &(&d * h)), &y, &z)) / (2.0 * h);
        let fd_y = (tri(&x, &(&y + &(&d * h)), &z) - tri(&x, &(&y - &(&d * h)), &z)) / (2.0 * h);
        let fd_z = (tri(&x, &y, &(&z + &(&d * h))) - tri(&x, &y, &(&z - &(&d * h)))) / (2.0 * h);
        assert!((fd_x - gx.inner(&d).unwrap()).abs() < 1e-6);
        assert!((fd_y - gy.inner(&d).unwrap()).abs() < 1e-6);
        assert!((fd_z - gz.inner(&d).unwrap()).abs() < 1e-6);
    }
}
