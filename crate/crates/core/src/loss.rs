//! Convex per-label losses and their proximal calculus.
//!
//! For a loss `L_y` and a scale `κ > 0`:
//!
//! * `prox(u, κ) = argmin_w κ L_y(w) + ½(u − w)²`
//! * `ξ(u, κ) = u − prox(u, κ) = κ L_y'(prox(u, κ))`
//! * `e(u, κ) = min_v (u − v)²/(2κ) + L_y(v)`, with `∂_u e = ξ/κ` and
//!   `∂_κ e = −ξ²/(2κ²)`.

use crate::{Error, Result};

/// Which values a label may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSpace {
    Real,
    BinaryPM1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `½(v − y)²`
    Squared,
    /// `log(1 + exp(−y v))`, `y ∈ {−1, +1}`
    Logistic,
}

/// A loss family. Cheap to copy; all methods are pure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Loss {
    pub kind: LossKind,
}

const PROX_TOL: f64 = 1e-13;
const PROX_MAX_ITERS: usize = 200;

impl Loss {
    pub const SQUARED: Loss = Loss {
        kind: LossKind::Squared,
    };
    pub const LOGISTIC: Loss = Loss {
        kind: LossKind::Logistic,
    };

    pub fn new(kind: LossKind) -> Self {
        Loss { kind }
    }

    pub fn label_space(&self) -> LabelSpace {
        match self.kind {
            LossKind::Squared => LabelSpace::Real,
            LossKind::Logistic => LabelSpace::BinaryPM1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
        }
    }

    /// Upper bound on `L_y''`, the Lipschitz constant of `L_y'`.
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            LossKind::Squared => 1.0,
            LossKind::Logistic => 0.25,
        }
    }

    pub fn check_label(&self, y: f64) -> Result<()> {
        let ok = match self.kind {
            LossKind::Squared => y.is_finite(),
            LossKind::Logistic => y == 1.0 || y == -1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLabel {
                label: y,
                family: self.name(),
            })
        }
    }

    fn check(&self, y: f64, kappa: f64) -> Result<()> {
        self.check_label(y)?;
        if kappa > 0.0 && kappa.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")))
        }
    }

    /// `L_y(v)`.
    pub fn value(&self, y: f64, v: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.value_unchecked(y, v))
    }

    /// `L_y'(v)`.
    pub fn deriv(&self, y: f64, v: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.deriv_unchecked(y, v))
    }

    /// `L_y''(v)`.
    pub fn second_deriv(&self, y: f64, v: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.second_unchecked(y, v))
    }

    pub fn prox(&self, y: f64, u: f64, kappa: f64) -> Result<f64> {
        self.check(y, kappa)?;
        Ok(self.prox_unchecked(y, u, kappa))
    }

    /// `ξ_y(u, κ) = u − prox(u, κ)`.
    pub fn xi(&self, y: f64, u: f64, kappa: f64) -> Result<f64> {
        self.check(y, kappa)?;
        Ok(u - self.prox_unchecked(y, u, kappa))
    }

    /// `∂_u ξ_y(u, κ) = κL''(p) / (1 + κL''(p))` at `p = prox(u, κ)`.
    pub fn xi_du(&self, y: f64, u: f64, kappa: f64) -> Result<f64> {
        self.check(y, kappa)?;
        Ok(self.xi_and_du_unchecked(y, u, kappa).1)
    }

    pub fn moreau(&self, y: f64, u: f64, kappa: f64) -> Result<f64> {
        self.check(y, kappa)?;
        let p = self.prox_unchecked(y, u, kappa);
        Ok((u - p).powi(2) / (2.0 * kappa) + self.value_unchecked(y, p))
    }

    /// `∂_u e = ξ/κ`.
    pub fn moreau_du(&self, y: f64, u: f64, kappa: f64) -> Result<f64> {
        Ok(self.xi(y, u, kappa)? / kappa)
    }

    /// `∂_κ e = −ξ²/(2κ²)`.
    pub fn moreau_dkappa(&self, y: f64, u: f64, kappa: f64) -> Result<f64> {
        let xi = self.xi(y, u, kappa)?;
        Ok(-xi * xi / (2.0 * kappa * kappa))
    }

    pub(crate) fn value_unchecked(&self, y: f64, v: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 0.5 * (v - y) * (v - y),
            LossKind::Logistic => softplus(-y * v),
        }
    }

    pub(crate) fn deriv_unchecked(&self, y: f64, v: f64) -> f64 {
        match self.kind {
            LossKind::Squared => v - y,
            LossKind::Logistic => -y * sigmoid(-y * v),
        }
    }

    pub(crate) fn second_unchecked(&self, y: f64, v: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 1.0,
            LossKind::Logistic => {
                let s = sigmoid(-y * v);
                s * (1.0 - s)
            }
        }
    }

    pub(crate) fn prox_unchecked(&self, y: f64, u: f64, kappa: f64) -> f64 {
        match self.kind {
            LossKind::Squared => (u + kappa * y) / (1.0 + kappa),
            // L_{-1}(w) = L_{+1}(-w), hence prox_{-1}(u) = -prox_{+1}(-u)
            LossKind::Logistic => y * logistic_prox_pos(y * u, kappa),
        }
    }

    /// `(ξ, ∂_u ξ)` in one prox evaluation.
    #[inline]
    pub(crate) fn xi_and_du_unchecked(&self, y: f64, u: f64, kappa: f64) -> (f64, f64) {
        match self.kind {
            LossKind::Squared => {
                let c = kappa / (1.0 + kappa);
                (c * (u - y), c)
            }
            LossKind::Logistic => {
                let p = y * logistic_prox_pos(y * u, kappa);
                let s = sigmoid(-y * p);
                let kl2 = kappa * s * (1.0 - s);
                (u - p, kl2 / (1.0 + kl2))
            }
        }
    }
}

/// `log(1 + eᵗ)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e⁻ᵗ)` without overflow.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Root of `w + κ L'(w) = u` for the `y = +1` logistic loss, where
/// `L'(w) = −σ(−w)`. Newton steps, falling back to bisection whenever a step
/// leaves the bracket. `|L'| < 1` puts the root in `[u − κ, u + κ]`.
fn logistic_prox_pos(u: f64, kappa: f64) -> f64 {
    let h = |w: f64| w - u - kappa * sigmoid(-w);
    let mut lo = u - kappa;
    let mut hi = u + kappa;
    // h(u) = −κσ(−u) < 0, so u is a valid lower end and a good start.
    let mut w = u;
    let mut last = f64::INFINITY;
    for _ in 0..PROX_MAX_ITERS {
        let hv = h(w);
        if hv.abs() <= PROX_TOL {
            return w;
        }
        if hv < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let s = sigmoid(-w);
        let next = w - hv / (1.0 + kappa * s * (1.0 - s));
        // Newton can bounce across a kink-like root; bisect when it stalls
        let next = if next > lo && next < hi && hv.abs() <= 0.5 * last {
            next
        } else {
            0.5 * (lo + hi)
        };
        last = hv.abs();
        if next == w || hi - lo <= f64::EPSILON * w.abs().max(1.0) {
            return next;
        }
        w = next;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Independent oracle: plain bisection on the prox optimality condition.
    fn bisect_prox(loss: Loss, y: f64, u: f64, kappa: f64) -> f64 {
        let g = |w: f64| w + kappa * loss.deriv_unchecked(y, w) - u;
        let (mut lo, mut hi) = (u - 10.0 * (1.0 + kappa), u + 10.0 * (1.0 + kappa));
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn reference_values() {
        let sq = Loss::SQUARED;
        let lg = Loss::LOGISTIC;
        assert_eq!(sq.value(1.0, 3.0).unwrap(), 2.0);
        assert_relative_eq!(lg.value(1.0, 0.0).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(lg.value(-1.0, 2.0).unwrap(), 2.126_928_011_042_972_5, epsilon = 1e-12);
        assert_eq!(sq.prox(1.0, 3.0, 1.0).unwrap(), 2.0);
        assert_eq!(sq.xi(1.0, 3.0, 1.0).unwrap(), 1.0);
        assert_eq!(sq.moreau(1.0, 3.0, 1.0).unwrap(), 1.0);
        assert_eq!(sq.moreau_du(1.0, 3.0, 1.0).unwrap(), 1.0);
        assert_eq!(sq.moreau_dkappa(1.0, 3.0, 1.0).unwrap(), -0.5);
    }

    #[test]
    fn logistic_prox_at_origin() {
        // w − 1/(1 + eʷ) = 0
        let oracle = bisect_prox(Loss::LOGISTIC, 1.0, 0.0, 1.0);
        let p = Loss::LOGISTIC.prox(1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(p, oracle, epsilon = 1e-12);
        assert_relative_eq!(p, 0.401_058_137_5, epsilon = 1e-9);
        assert_relative_eq!(Loss::LOGISTIC.xi(1.0, 0.0, 1.0).unwrap(), -p, epsilon = 1e-15);
    }

    #[test]
    fn prox_vanishing_kappa_is_identity() {
        for loss in [Loss::SQUARED, Loss::LOGISTIC] {
            for u in [-3.0, 0.2, 4.0] {
                let p = loss.prox(1.0, u, 1e-12).unwrap();
                assert_relative_eq!(p, u, epsilon = 1e-10);
                let e = loss.moreau(1.0, u, 1e-12).unwrap();
                assert_relative_eq!(e, loss.value(1.0, u).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn labels_are_validated() {
        assert!(Loss::LOGISTIC.value(0.5, 1.0).is_err());
        assert!(Loss::LOGISTIC.prox(0.0, 1.0, 1.0).is_err());
        assert!(Loss::SQUARED.value(f64::NAN, 1.0).is_err());
        assert!(Loss::SQUARED.prox(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn squared_closed_form_xi() {
        for i in 0..50 {
            let u = -5.0 + 0.2 * i as f64;
            for kappa in [0.1, 0.7, 3.0, 10.0] {
                let xi = Loss::SQUARED.xi(0.3, u, kappa).unwrap();
                assert!((xi - kappa / (1.0 + kappa) * (u - 0.3)).abs() <= 1e-12);
            }
        }
        assert_eq!(Loss::SQUARED.xi(2.0, 2.0, 5.0).unwrap(), 0.0);
        assert_eq!(Loss::SQUARED.moreau(2.0, 2.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        for u in [-1e6, -50.0, 50.0, 1e6] {
            for kappa in [1e-8, 1.0, 1e4] {
                for y in [-1.0, 1.0] {
                    let xi = Loss::LOGISTIC.xi(y, u, kappa).unwrap();
                    assert!(xi.is_finite());
                    assert!(xi.abs() <= kappa + 1e-9 * u.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn prox_grid_against_bisection() {
        // includes a point where undamped Newton oscillates around the root
        let mut cases = vec![(-1.0, 2.809204914460074, 38.73992910979263)];
        for &u in &[-30.0, -5.0, -1.0, 0.0, 0.5, 3.0, 12.0] {
            for &kappa in &[0.01, 0.3, 2.0, 10.0, 40.0, 200.0] {
                cases.push((1.0, u, kappa));
                cases.push((-1.0, u, kappa));
            }
        }
        for (y, u, kappa) in cases {
            let p = Loss::LOGISTIC.prox(y, u, kappa).unwrap();
            let oracle = bisect_prox(Loss::LOGISTIC, y, u, kappa);
            assert!((p - oracle).abs() <= 1e-12 * u.abs().max(kappa).max(1.0), "{y} {u} {kappa}: {p} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn prox_is_nonexpansive(u in -20.0..20.0f64, v in -20.0..20.0f64, kappa in 0.01..50.0f64, pos in any::<bool>()) {
            let y = if pos { 1.0 } else { -1.0 };
            for loss in [Loss::SQUARED, Loss::LOGISTIC] {
                let d = (loss.prox(y, u, kappa).unwrap() - loss.prox(y, v, kappa).unwrap()).abs();
                prop_assert!(d <= (u - v).abs() + 1e-12);
            }
        }

        #[test]
        fn xi_matches_scaled_derivative(u in -20.0..20.0f64, kappa in 0.01..50.0f64, pos in any::<bool>()) {
            let y = if pos { 1.0 } else { -1.0 };
            let loss = Loss::LOGISTIC;
            let p = loss.prox(y, u, kappa).unwrap();
            let xi = loss.xi(y, u, kappa).unwrap();
            prop_assert!((p + xi - u).abs() <= 2.0 * f64::EPSILON * u.abs().max(p.abs()));
            prop_assert!((xi - kappa * loss.deriv(y, p).unwrap()).abs() <= 1e-10);
            prop_assert!((p - bisect_prox(loss, y, u, kappa)).abs() <= 1e-12 * u.abs().max(1.0));
        }

        #[test]
        fn envelope_nonincreasing_in_kappa(u in -10.0..10.0f64, k1 in 0.01..20.0f64, dk in 0.0..20.0f64) {
            for (loss, y) in [(Loss::SQUARED, 0.7), (Loss::LOGISTIC, -1.0)] {
                let e1 = loss.moreau(y, u, k1).unwrap();
                let e2 = loss.moreau(y, u, k1 + dk).unwrap();
                prop_assert!(e2 <= e1 + 1e-12);
            }
        }

        #[test]
        fn xi_derivative_matches_finite_difference(u in -8.0..8.0f64, kappa in 0.1..10.0f64) {
            let loss = Loss::LOGISTIC;
            let h = 1e-5;
            let fd = (loss.xi(1.0, u + h, kappa).unwrap() - loss.xi(1.0, u - h, kappa).unwrap()) / (2.0 * h);
            prop_assert!((fd - loss.xi_du(1.0, u, kappa).unwrap()).abs() <= 1e-6);
        }
    }
}
