//! Bounded test functions `f >= 1` with analytic derivative bounds, and the pseudo-metric `d_gamma`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::spectral::FourierField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `base + a exp(-|pi_m u - c|^2 / s^2)`.
    GaussBump,
    /// `base + a sigmoid(<u - c, d> / s)` with `|d| = 1`.
    CoordinateSigmoid,
}

#[derive(Clone, Debug)]
pub struct TestFunction {
    kind: TestFunctionKind,
    center: FourierField,
    direction: Option<FourierField>,
    cutoff: u32,
    scale: f64,
    amplitude: f64,
    base: f64,
    mask: Vec<bool>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TestFunction {
    fn build(
        kind: TestFunctionKind,
        center: &FourierField,
        direction: Option<FourierField>,
        cutoff: u32,
        scale: f64,
        amplitude: f64,
        base: f64,
    ) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("test-function scale must be positive, got {scale}")));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "test-function amplitude must be >= 0, got {amplitude}"
            )));
        }
        if !(base >= 1.0 && base.is_finite()) {
            return Err(Error::InvalidParameter(format!("test-function base must be >= 1, got {base}")));
        }
        let g = center.grid();
        let m2 = (cutoff as f64).powi(2);
        let mask = (0..g.len()).map(|i| g.norm_sq(i) <= m2).collect();
        let center = center.low_pass(cutoff);
        Ok(Self {
            kind,
            center,
            direction,
            cutoff,
            scale,
            amplitude,
            base,
            mask,
        })
    }

    /// `1 + a exp(-|pi_m u - c|^2 / s^2)`; `c` is projected onto modes `|k| <= m`.
    pub fn gauss_bump(center: &FourierField, cutoff: u32, scale: f64, amplitude: f64) -> Result<Self> {
        Self::build(TestFunctionKind::GaussBump, center, None, cutoff, scale, amplitude, 1.0)
    }

    /// `1 + a / (1 + exp(-<u - c, d> / s))`; `d` is normalised.
    pub fn coordinate_sigmoid(center: &FourierField, direction: &FourierField, scale: f64, amplitude: f64) -> Result<Self> {
        center.grid().check_same(direction.grid())?;
        let n = direction.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidParameter("sigmoid direction must be nonzero".into()));
        }
        let d = direction * (1.0 / n);
        let cutoff = center.grid().n();
        Self::build(TestFunctionKind::CoordinateSigmoid, center, Some(d), cutoff, scale, amplitude, 1.0)
    }

    /// `f = c` for `c >= 1`: a bump of amplitude 0 shifted to level `c`.
    pub fn constant(grid_field: &FourierField, c: f64) -> Result<Self> {
        let zero = FourierField::zeros(grid_field.grid());
        Self::build(TestFunctionKind::GaussBump, &zero, None, 1, 1.0, 0.0, c)
    }

    pub fn kind(&self) -> TestFunctionKind {
        self.kind
    }

    pub fn center(&self) -> &FourierField {
        &self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn is_constant(&self) -> bool {
        self.amplitude == 0.0
    }

    /// Distance^2 to the centre (bump) or the sigmoid argument.
    fn argument(&self, u: &FourierField) -> f64 {
        let (a, c) = (u.amplitudes(), self.center.amplitudes());
        match &self.direction {
            None => {
                let mut r2 = 0.0;
                for i in 0..a.len() {
                    if self.mask[i] {
                        r2 += (a[i] - c[i]).norm_sqr();
                    }
                }
                2.0 * r2
            }
            Some(d) => {
                let d = d.amplitudes();
                let mut s = 0.0;
                for i in 0..a.len() {
                    let w = a[i] - c[i];
                    s += w.re * d[i].re + w.im * d[i].im;
                }
                2.0 * s / self.scale
            }
        }
    }

    pub fn eval(&self, u: &FourierField) -> f64 {
        if self.is_constant() {
            return self.base;
        }
        match self.kind {
            TestFunctionKind::GaussBump => {
                self.base + self.amplitude * (-self.argument(u) / (self.scale * self.scale)).exp()
            }
            TestFunctionKind::CoordinateSigmoid => self.base + self.amplitude * logistic(self.argument(u)),
        }
    }

    pub fn log_eval(&self, u: &FourierField) -> f64 {
        self.eval(u).ln()
    }

    /// Directional derivative `Df(u) . h`.
    pub fn directional_derivative(&self, u: &FourierField, h: &FourierField) -> Result<f64> {
        if self.is_constant() {
            return Ok(0.0);
        }
        match self.kind {
            TestFunctionKind::GaussBump => {
                let s2 = self.scale * self.scale;
                let e = (-self.argument(u) / s2).exp();
                let w = &u.low_pass(self.cutoff) - &self.center;
                Ok(-2.0 * self.amplitude / s2 * e * w.inner(h)?)
            }
            TestFunctionKind::CoordinateSigmoid => {
                let sg = logistic(self.argument(u));
                let d = self.direction.as_ref().expect("sigmoid has a direction");
                Ok(self.amplitude * sg * (1.0 - sg) / self.scale * d.inner(h)?)
            }
        }
    }

    /// `|Df(u)|`.
    pub fn gradient_norm(&self, u: &FourierField) -> f64 {
        if self.is_constant() {
            return 0.0;
        }
        match self.kind {
            TestFunctionKind::GaussBump => {
                let s2 = self.scale * self.scale;
                let r2 = self.argument(u);
                2.0 * self.amplitude / s2 * (-r2 / s2).exp() * r2.sqrt()
            }
            TestFunctionKind::CoordinateSigmoid => {
                let sg = logistic(self.argument(u));
                self.amplitude * sg * (1.0 - sg) / self.scale
            }
        }
    }

    /// `||f||_inf`.
    pub fn sup_f(&self) -> f64 {
        self.base + self.amplitude
    }

    /// `||Df||_inf`.
    pub fn sup_df(&self) -> f64 {
        match self.kind {
            TestFunctionKind::GaussBump => self.amplitude * 2f64.sqrt() * (-0.5f64).exp() / self.scale,
            TestFunctionKind::CoordinateSigmoid => self.amplitude / (4.0 * self.scale),
        }
    }

    /// Bound on `||D log f||_inf`, using `f >= base >= 1`.
    pub fn sup_dlogf(&self) -> f64 {
        self.sup_df() / self.base
    }

    /// Parameters for report echoes.
    pub fn describe(&self) -> serde_json::Value {
        json!({
            "kind": self.kind,
            "center": self.center.sparse_rows(),
            "direction": self.direction.as_ref().map(|d| d.sparse_rows()),
            "cutoff": self.cutoff,
            "scale": self.scale,
            "amplitude": self.amplitude,
            "base": self.base,
            "sup_f": self.sup_f(),
            "sup_Df": self.sup_df(),
            "sup_DlogF": self.sup_dlogf(),
        })
    }
}

/// `d_gamma(x, y) = min(1, |x - y| / gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoMetric {
    gamma: f64,
}

impl PseudoMetric {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn from_norm(&self, r: f64) -> f64 {
        (r / self.gamma).min(1.0)
    }

    pub fn distance(&self, x: &FourierField, y: &FourierField) -> f64 {
        self.from_norm((x - y).norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralGrid;
    use num_complex::Complex64;

    #[test]
    fn bump_values_and_bounds() {
        let g = SpectralGrid::new(4).unwrap();
        let c = FourierField::single_mode(&g, [1, 0], Complex64::new(0.3, 0.0)).unwrap();
        let f = TestFunction::gauss_bump(&c, 2, 0.5, 2.0).unwrap();
        assert_eq!(f.eval(&c), 3.0);
        assert_eq!(f.sup_f(), 3.0);
        // high modes are ignored
        let mut u = c.clone();
        u.set_mode([3, 1], Complex64::new(5.0, 1.0)).unwrap();
        assert_eq!(f.eval(&u), 3.0);
        assert!(TestFunction::gauss_bump(&c, 2, 0.0, 1.0).is_err());
        assert!(TestFunction::gauss_bump(&c, 2, 1.0, -1.0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = SpectralGrid::new(4).unwrap();
        let c = FourierField::single_mode(&g, [1, 1], Complex64::new(0.2, -0.1)).unwrap();
        let h = FourierField::single_mode(&g, [1, 1], Complex64::new(0.6, 0.8)).unwrap();
        let mut u = FourierField::single_mode(&g, [1, 0], Complex64::new(0.1, 0.3)).unwrap();
        u.set_mode([1, 1], Complex64::new(-0.1, 0.0)).unwrap();
        let fs = [
            TestFunction::gauss_bump(&c, 2, 0.7, 1.5).unwrap(),
            TestFunction::coordinate_sigmoid(&c, &h, 0.3, 2.0).unwrap(),
        ];
        for f in &fs {
            let e = 1e-6;
            let up = f.eval(&(&u + &(&h * e)));
            let dn = f.eval(&(&u - &(&h * e)));
            let fd = (up - dn) / (2.0 * e);
            let an = f.directional_derivative(&u, &h).unwrap();
            assert!((fd - an).abs() < 1e-7, "{fd} vs {an}");
            assert!(f.gradient_norm(&u) <= f.sup_df());
        }
    }

    #[test]
    fn constant_function() {
        let g = SpectralGrid::new(2).unwrap();
        let z = FourierField::zeros(&g);
        let f = TestFunction::constant(&z, 2.5).unwrap();
        assert_eq!(f.eval(&z), 2.5);
        assert_eq!(f.sup_dlogf(), 0.0);
        assert!(TestFunction::constant(&z, 0.5).is_err());
    }

    #[test]
    fn metric_basics() {
        let g = SpectralGrid::new(2).unwrap();
        let x = FourierField::single_mode(&g, [1, 0], Complex64::new(1.0, 0.0)).unwrap();
        let y = FourierField::zeros(&g);
        let d = PseudoMetric::new(4.0).unwrap();
        assert_eq!(d.distance(&x, &x), 0.0);
        assert!((d.distance(&x, &y) - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert_eq!(PseudoMetric::new(0.1).unwrap().distance(&x, &y), 1.0);
        assert!(PseudoMetric::new(0.0).is_err());
    }
}
