//! Divergence-free, mean-zero real vector fields on the 2-torus in Fourier space.
//!
//! The basis is `e_k(x) = exp(i k.x) / (2 pi)`, orthonormal on `[0, 2 pi)^2`, so every
//! coefficient-space sum below is already the L^2 quantity.
//!
//! A real solenoidal field has velocity coefficients `u_k = a_k k_perp / |k|` with
//! `k_perp = (-k2, k1)` and `u_{-k} = conj(u_k)`. Only one representative `k` of each
//! conjugate pair is stored (the half lattice); the partner amplitude is
//! `a_{-k} = -conj(a_k)`. Both divergence-freeness and reality hold structurally.
//!
//! The real-coefficient convention (`x_k` in `R^2` against the real orthonormal basis
//! `sqrt(2) cos(k.x) / (2 pi)`, `sqrt(2) sin(k.x) / (2 pi)`) is reached through
//! [`FourierField::to_real_coefficients`], an isometry: `alpha_k = sqrt(2) Re a_k`,
//! `beta_k = -sqrt(2) Im a_k`.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer wavevector.
pub type Mode = [i32; 2];

#[inline]
pub fn mode_norm_sq(k: Mode) -> i64 {
    let (a, b) = (k[0] as i64, k[1] as i64);
    a * a + b * b
}

/// Galerkin index set `{0 < |k| <= N}`, one representative per conjugate pair.
///
/// Modes are ordered by `(|k|^2, k1, k2)`, so every low-pass set `|k| <= N0` is a prefix.
#[derive(Clone, PartialEq, Eq)]
pub struct SpectralGrid {
    n: u32,
    half: Vec<Mode>,
    norm_sq: Vec<i64>,
    // Dense lookup over the (2N+1)^2 box; value = full-lattice index + 1, 0 = absent.
    lookup: Vec<u32>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("modes", &self.half.len())
            .finish()
    }
}

fn is_representative(k: Mode) -> bool {
    k[1] > 0 || (k[1] == 0 && k[0] > 0)
}

impl SpectralGrid {
    pub fn new(n: u32) -> Result<Arc<Self>> {
        if n == 0 || n > 128 {
            return Err(Error::InvalidParameter(format!(
                "truncation radius must lie in 1..=128, got {n}"
            )));
        }
        let r = n as i32;
        let r2 = (n as i64) * (n as i64);
        let mut half = Vec::new();
        for k1 in -r..=r {
            for k2 in 0..=r {
                let k = [k1, k2];
                let nk = mode_norm_sq(k);
                if nk > 0 && nk <= r2 && is_representative(k) {
                    half.push(k);
                }
            }
        }
        half.sort_by_key(|k| (mode_norm_sq(*k), k[0], k[1]));
        let norm_sq: Vec<i64> = half.iter().map(|k| mode_norm_sq(*k)).collect();
        let side = (2 * n + 1) as usize;
        let mut lookup = vec![0u32; side * side];
        for (i, k) in half.iter().enumerate() {
            for (sign, j) in [(1, 2 * i), (-1, 2 * i + 1)] {
                let idx = Self::box_index(n, [sign * k[0], sign * k[1]]);
                lookup[idx] = j as u32 + 1;
            }
        }
        Ok(Arc::new(Self {
            n,
            half,
            norm_sq,
            lookup,
        }))
    }

    #[inline]
    fn box_index(n: u32, k: Mode) -> usize {
        let side = (2 * n + 1) as i32;
        ((k[0] + n as i32) * side + (k[1] + n as i32)) as usize
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of stored (half-lattice) modes.
    pub fn len(&self) -> usize {
        self.half.len()
    }

    pub fn is_empty(&self) -> bool {
        self.half.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.half
    }

    pub fn mode(&self, i: usize) -> Mode {
        self.half[i]
    }

    /// `|k|^2` of stored mode `i`.
    pub fn norm_sq(&self, i: usize) -> f64 {
        self.norm_sq[i] as f64
    }

    /// Number of stored modes with `|k| <= cutoff` (a prefix of the ordering).
    pub fn count_within(&self, cutoff: u32) -> usize {
        let c2 = (cutoff as i64) * (cutoff as i64);
        self.norm_sq.partition_point(|&n2| n2 <= c2)
    }

    /// Full-lattice index of `k`: `2 i` for a stored mode, `2 i + 1` for its partner.
    pub fn full_index(&self, k: Mode) -> Option<usize> {
        let r = self.n as i32;
        if k[0].abs() > r || k[1].abs() > r {
            return None;
        }
        match self.lookup[Self::box_index(self.n, k)] {
            0 => None,
            j => Some(j as usize - 1),
        }
    }

    /// Wavevector of full-lattice index `j`.
    pub fn full_mode(&self, j: usize) -> Mode {
        let k = self.half[j / 2];
        if j % 2 == 0 {
            k
        } else {
            [-k[0], -k[1]]
        }
    }

    pub fn full_len(&self) -> usize {
        2 * self.half.len()
    }

    pub(crate) fn check_same(&self, other: &SpectralGrid) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }

    pub(crate) fn check_cutoff(&self, n0: u32) -> Result<()> {
        if n0 == 0 || n0 > self.n {
            return Err(Error::InvalidCutoff { n0, n: self.n });
        }
        Ok(())
    }
}

/// Raw (not necessarily solenoidal) coefficient array: one `C^2` vector per stored mode.
/// The partner coefficient is the complex conjugate, as for any real field.
#[derive(Clone, Debug, PartialEq)]
pub struct RawField {
    pub grid: Arc<SpectralGrid>,
    pub coeffs: Vec<[Complex64; 2]>,
}

impl RawField {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![[Complex64::new(0.0, 0.0); 2]; grid.len()],
        }
    }

    /// `k . w_k` for every stored mode.
    pub fn divergence(&self) -> Vec<Complex64> {
        self.grid
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, w)| w[0] * k[0] as f64 + w[1] * k[1] as f64)
            .collect()
    }

    /// Per-mode Leray projection `w - (k.w) k / |k|^2`, kept in raw form.
    pub fn project(&self) -> RawField {
        let coeffs = self
            .grid
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, w)| {
                let (k1, k2) = (k[0] as f64, k[1] as f64);
                let kk = k1 * k1 + k2 * k2;
                let kw = (w[0] * k1 + w[1] * k2) / kk;
                [w[0] - kw * k1, w[1] - kw * k2]
            })
            .collect();
        RawField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Full L^2 inner product over both conjugate modes.
    pub fn inner(&self, other: &RawField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a[0] * b[0].conj() + a[1] * b[1].conj()).re)
            .sum();
        Ok(2.0 * s)
    }
}

/// Leray projection of a raw coefficient array onto the solenoidal fields.
pub fn leray_project(w: &RawField) -> FourierField {
    let amps = w
        .grid
        .modes()
        .iter()
        .zip(&w.coeffs)
        .map(|(k, c)| {
            let kn = (mode_norm_sq(*k) as f64).sqrt();
            // component along k_perp / |k|; the k-parallel part is discarded
            (c[1] * k[0] as f64 - c[0] * k[1] as f64) / kn
        })
        .collect();
    FourierField {
        grid: w.grid.clone(),
        amps,
    }
}

/// A mean-zero, divergence-free real vector field stored as stream amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    grid: Arc<SpectralGrid>,
    amps: Vec<Complex64>,
}

impl FourierField {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        Self {
            grid: grid.clone(),
            amps: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_amplitudes(grid: &Arc<SpectralGrid>, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} amplitudes, got {}",
                grid.len(),
                amps.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            amps,
        })
    }

    /// Field with the single conjugate pair `{k, -k}` excited, stream amplitude `amp` at `k`.
    pub fn single_mode(grid: &Arc<SpectralGrid>, k: Mode, amp: Complex64) -> Result<Self> {
        let mut f = Self::zeros(grid);
        f.set_mode(k, amp)?;
        Ok(f)
    }

    /// Sets the stream amplitude at `k` (either member of the conjugate pair).
    pub fn set_mode(&mut self, k: Mode, amp: Complex64) -> Result<()> {
        let j = self
            .grid
            .full_index(k)
            .ok_or(Error::UnknownMode(k[0], k[1]))?;
        self.amps[j / 2] = if j % 2 == 0 { amp } else { -amp.conj() };
        Ok(())
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    /// Stream amplitude at any lattice vector in the truncation (zero outside).
    pub fn amplitude_at(&self, k: Mode) -> Complex64 {
        match self.grid.full_index(k) {
            Some(j) if j % 2 == 0 => self.amps[j / 2],
            Some(j) => -self.amps[j / 2].conj(),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Velocity coefficient `u_k in C^2` at any lattice vector.
    pub fn velocity_at(&self, k: Mode) -> [Complex64; 2] {
        let a = self.amplitude_at(k);
        let kn = (mode_norm_sq(k) as f64).sqrt();
        if kn == 0.0 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        [a * (-k[1] as f64 / kn), a * (k[0] as f64 / kn)]
    }

    /// Amplitudes expanded over the full lattice (index layout of [`SpectralGrid::full_index`]).
    pub fn full_amplitudes(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(2 * self.amps.len());
        for a in &self.amps {
            out.push(*a);
            out.push(-a.conj());
        }
        out
    }

    pub fn to_raw(&self) -> RawField {
        let coeffs = self
            .grid
            .modes()
            .iter()
            .zip(&self.amps)
            .map(|(k, a)| {
                let kn = (mode_norm_sq(*k) as f64).sqrt();
                [a * (-k[1] as f64 / kn), a * (k[0] as f64 / kn)]
            })
            .collect();
        RawField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Coordinates against the real orthonormal (cos, sin) basis, one pair per stored mode.
    pub fn to_real_coefficients(&self) -> Vec<[f64; 2]> {
        let r = std::f64::consts::SQRT_2;
        self.amps.iter().map(|a| [r * a.re, -r * a.im]).collect()
    }

    pub fn from_real_coefficients(grid: &Arc<SpectralGrid>, c: &[[f64; 2]]) -> Result<Self> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let amps = c.iter().map(|p| Complex64::new(r * p[0], -r * p[1])).collect();
        Self::from_amplitudes(grid, amps)
    }

    /// L^2 inner product `<u, v>`.
    pub fn inner(&self, other: &FourierField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &FourierField) -> f64 {
        2.0 * self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum::<f64>()
    }

    pub fn norm_sq(&self) -> f64 {
        2.0 * self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `A^alpha u`: amplitude `a_k -> |k|^{2 alpha} a_k`.
    pub fn stokes_apply(&self, alpha: f64) -> FourierField {
        let mut out = self.clone();
        for (i, a) in out.amps.iter_mut().enumerate() {
            *a *= self.grid.norm_sq(i).powf(alpha);
        }
        out
    }

    /// `|A^alpha u|^2 = sum |k|^{4 alpha} |u_k|^2` over the full lattice.
    pub fn sobolev_norm_sq(&self, alpha: f64) -> f64 {
        let s: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| self.grid.norm_sq(i).powf(2.0 * alpha) * a.norm_sqr())
            .sum();
        2.0 * s
    }

    pub fn sobolev_norm(&self, alpha: f64) -> f64 {
        self.sobolev_norm_sq(alpha).sqrt()
    }

    /// `|A^{1/2} u|^2`, the enstrophy-type quantity used by the dissipation integrals.
    pub fn h1_norm_sq(&self) -> f64 {
        let s: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| self.grid.norm_sq(i) * a.norm_sqr())
            .sum();
        2.0 * s
    }

    /// `(pi_{N0} u, (Id - pi_{N0}) u)`.
    pub fn split_low_high(&self, n0: u32) -> Result<(FourierField, FourierField)> {
        self.grid.check_cutoff(n0)?;
        let m = self.grid.count_within(n0);
        let mut low = self.clone();
        let mut high = self.clone();
        low.amps[m..].fill(Complex64::new(0.0, 0.0));
        high.amps[..m].fill(Complex64::new(0.0, 0.0));
        Ok((low, high))
    }

    /// `pi_m u` for any `m >= 0` (`m >= N` is the identity, `m = 0` gives zero).
    pub fn low_pass(&self, m: u32) -> FourierField {
        let cut = self.grid.count_within(m);
        let mut out = self.clone();
        out.amps[cut..].fill(Complex64::new(0.0, 0.0));
        out
    }

    pub fn high_pass(&self, m: u32) -> FourierField {
        let cut = self.grid.count_within(m);
        let mut out = self.clone();
        out.amps[..cut].fill(Complex64::new(0.0, 0.0));
        out
    }

    /// Largest `|k|` carrying a nonzero amplitude (0 for the zero field).
    pub fn support_radius_sq(&self) -> i64 {
        self.amps
            .iter()
            .enumerate()
            .rev()
            .find(|(_, a)| a.re != 0.0 || a.im != 0.0)
            .map(|(i, _)| self.grid.norm_sq[i])
            .unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &FourierField) {
        assert_eq!(self.grid.n, other.grid.n, "grid mismatch");
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += b * s;
        }
    }

    /// Writes `(k1, k2, re, im)` rows in mode order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k1", "k2", "re", "im"])?;
        for (k, a) in self.grid.modes().iter().zip(&self.amps) {
            wtr.serialize((k[0], k[1], a.re, a.im))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads rows written by [`write_csv`](Self::write_csv). Rows may name either member
    /// of a conjugate pair; absent modes are zero; duplicates are rejected.
    pub fn read_csv<R: Read>(grid: &Arc<SpectralGrid>, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut out = Self::zeros(grid);
        let mut seen = vec![false; grid.len()];
        for row in rdr.deserialize() {
            let (k1, k2, re, im): (i32, i32, f64, f64) = row?;
            let j = grid
                .full_index([k1, k2])
                .ok_or(Error::UnknownMode(k1, k2))?;
            if std::mem::replace(&mut seen[j / 2], true) {
                return Err(Error::InvalidParameter(format!(
                    "mode ({k1}, {k2}) listed twice"
                )));
            }
            out.set_mode([k1, k2], Complex64::new(re, im))?;
        }
        Ok(out)
    }
}

impl Add for &FourierField {
    type Output = FourierField;
    fn add(self, rhs: &FourierField) -> FourierField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &FourierField {
    type Output = FourierField;
    fn sub(self, rhs: &FourierField) -> FourierField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&FourierField> for FourierField {
    fn add_assign(&mut self, rhs: &FourierField) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&FourierField> for FourierField {
    fn sub_assign(&mut self, rhs: &FourierField) {
        self.axpy(-1.0, rhs);
    }
}

impl Mul<f64> for &FourierField {
    type Output = FourierField;
    fn mul(self, s: f64) -> FourierField {
        let mut out = self.clone();
        for a in &mut out.amps {
            *a *= s;
        }
        out
    }
}

impl Neg for &FourierField {
    type Output = FourierField;
    fn neg(self) -> FourierField {
        self * -1.0
    }
}

/// Serializable stand-in for a field: the CSV rows as a list.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModeAmplitude {
    pub k: Mode,
    pub re: f64,
    pub im: f64,
}

impl FourierField {
    /// Nonzero amplitudes as `(k, re, im)` records.
    pub fn sparse_rows(&self) -> Vec<ModeAmplitude> {
        self.grid
            .modes()
            .iter()
            .zip(&self.amps)
            .filter(|(_, a)| a.re != 0.0 || a.im != 0.0)
            .map(|(k, a)| ModeAmplitude {
                k: *k,
                re: a.re,
                im: a.im,
            })
            .collect()
    }

    pub fn from_rows(grid: &Arc<SpectralGrid>, rows: &[ModeAmplitude]) -> Result<Self> {
        let mut out = Self::zeros(grid);
        for r in rows {
            out.set_mode(r.k, Complex64::new(r.re, r.im))?;
        }
        Ok(out)
    }
}
