//! Bivariate free-energy density for the coupled system.
//!
//! The mixing entropy of each order parameter is the logarithmic
//! (Flory-Huggins) density
//!
//! ```text
//! S(r; theta, theta0) = (theta/2) [(1+r) ln(1+r) + (1-r) ln(1-r)] - (theta0/2) r^2
//! ```
//!
//! singular at r = +-1. The global regularization replaces the singular
//! part outside |r| <= 1 - delta by its fourth-order Taylor polynomial
//! about the knots +-(1 - delta), giving a C^4 function on all of R
//! whose evaluation on the interior region is the same code path as the
//! singular density. The full density is
//!
//! ```text
//! F_delta(u, v) = S_delta(u; theta_u, theta_0u) + S_delta(v; theta_v, theta_0v) + C(u, v),
//! C(u, v) = alpha u v + beta u v^2 + gamma u^2 v.
//! ```
//!
//! All derivatives are closed-form log/rational expressions; nothing
//! here is differentiated numerically.

use crate::error::{Error, Result};

/// Default regularization knot distance. Small enough that the
/// convexity and coercivity certificates pass for all shipped presets.
pub const DEFAULT_DELTA: f64 = 1e-3;

/// Which order parameter a single-variable quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U,
    V,
}

/// Selector for `coupling` and `f_delta`: the value or one of the two
/// first partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partial {
    Value,
    Du,
    Dv,
}

/// Singular entropy density without the concave quadratic,
/// `(theta/2) [(1+r) ln(1+r) + (1-r) ln(1-r)]`. Even in `r`, zero at 0.
pub fn hat_s(r: f64, theta: f64) -> Result<f64> {
    check_open_interval(r)?;
    Ok(hat_s_raw(r, theta))
}

/// k-th derivative of `hat_s` in closed form, 1 <= k <= 4.
pub fn hat_s_deriv(r: f64, theta: f64, k: usize) -> Result<f64> {
    check_open_interval(r)?;
    if !(1..=4).contains(&k) {
        return Err(Error::Domain {
            what: "derivative order k",
            value: k as f64,
            domain: "1..=4",
        });
    }
    Ok(hat_s_deriv_raw(r, theta, k))
}

fn check_open_interval(r: f64) -> Result<()> {
    if !(r.is_finite() && r.abs() < 1.0) {
        return Err(Error::Domain {
            what: "r",
            value: r,
            domain: "(-1, 1)",
        });
    }
    Ok(())
}

#[inline]
fn hat_s_raw(r: f64, theta: f64) -> f64 {
    // ln_1p keeps full precision near the endpoints.
    0.5 * theta * ((1.0 + r) * r.ln_1p() + (1.0 - r) * (-r).ln_1p())
}

#[inline]
fn hat_s_deriv_raw(r: f64, theta: f64, k: usize) -> f64 {
    let q = 1.0 - r * r;
    match k {
        1 => 0.5 * theta * (r.ln_1p() - (-r).ln_1p()),
        2 => theta / q,
        3 => 2.0 * theta * r / (q * q),
        4 => 2.0 * theta * (1.0 + 3.0 * r * r) / (q * q * q),
        _ => unreachable!("derivative order checked by callers"),
    }
}

/// Temperatures, coupling coefficients, and the regularization knot.
///
/// Fields are public for literal construction in tests; [`PotentialParams::new`]
/// is the validated path and is what configuration parsing uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub theta_u: f64,
    pub theta_0u: f64,
    pub theta_v: f64,
    pub theta_0v: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            theta_u: 1.0,
            theta_0u: 2.0,
            theta_v: 1.0,
            theta_0v: 2.0,
            alpha: 0.1,
            beta: 0.05,
            gamma: 0.05,
            delta: DEFAULT_DELTA,
        }
    }
}

impl PotentialParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        theta_u: f64,
        theta_0u: f64,
        theta_v: f64,
        theta_0v: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
    ) -> Result<Self> {
        let p = Self {
            theta_u,
            theta_0u,
            theta_v,
            theta_0v,
            alpha,
            beta,
            gamma,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pair = |name: &'static str, theta: f64, theta0: f64| -> Result<()> {
            if !(theta.is_finite() && theta0.is_finite() && 0.0 < theta && theta < theta0) {
                return Err(Error::InvalidParams {
                    what: name,
                    why: format!("require 0 < theta < theta0, got theta = {theta}, theta0 = {theta0}"),
                });
            }
            Ok(())
        };
        pair("theta_u/theta_0u", self.theta_u, self.theta_0u)?;
        pair("theta_v/theta_0v", self.theta_v, self.theta_0v)?;
        for (name, x) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !x.is_finite() {
                return Err(Error::InvalidParams {
                    what: name,
                    why: format!("must be finite, got {x}"),
                });
            }
        }
        if !(self.delta.is_finite() && 0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::InvalidParams {
                what: "delta",
                why: format!("must lie in (0, 1), got {}", self.delta),
            });
        }
        // The regularized entropy must stay convex; sample its second
        // derivative (the minimum over R is attained inside [-3, 3]).
        for comp in [Component::U, Component::V] {
            let theta = self.theta(comp);
            let n = 100_001;
            for i in 0..n {
                let r = -3.0 + 6.0 * (i as f64) / ((n - 1) as f64);
                if self.hat_s_delta(r, comp, 2) <= 0.0 {
                    return Err(Error::InvalidParams {
                        what: "delta",
                        why: format!(
                            "regularized entropy not convex at r = {r} (theta = {theta}, delta = {})",
                            self.delta
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn theta(&self, comp: Component) -> f64 {
        match comp {
            Component::U => self.theta_u,
            Component::V => self.theta_v,
        }
    }

    pub fn theta0(&self, comp: Component) -> f64 {
        match comp {
            Component::U => self.theta_0u,
            Component::V => self.theta_0v,
        }
    }

    /// Regularized singular part and its derivatives up to order 4.
    ///
    /// Equals `hat_s` (or the requested closed-form derivative) exactly
    /// for |r| <= 1 - delta and the fourth-order Taylor polynomial
    /// about +-(1 - delta) beyond; value and derivatives up to order 4
    /// are continuous at the knots by construction.
    pub fn hat_s_delta(&self, r: f64, comp: Component, k: usize) -> f64 {
        assert!(k <= 4, "hat_s_delta derivative order must be 0..=4");
        let theta = self.theta(comp);
        let a = 1.0 - self.delta;
        if r.abs() <= a {
            return if k == 0 {
                hat_s_raw(r, theta)
            } else {
                hat_s_deriv_raw(r, theta, k)
            };
        }
        // Taylor tail about the nearer knot.
        let knot = if r > 0.0 { a } else { -a };
        taylor_tail(r - knot, knot, theta, k)
    }

    /// Coupling term `C(u,v) = alpha uv + beta uv^2 + gamma u^2 v`
    /// or one of its first partial derivatives.
    pub fn coupling(&self, u: f64, v: f64, which: Partial) -> f64 {
        let (a, b, g) = (self.alpha, self.beta, self.gamma);
        match which {
            Partial::Value => a * u * v + b * u * v * v + g * u * u * v,
            Partial::Du => a * v + b * v * v + 2.0 * g * u * v,
            Partial::Dv => a * u + 2.0 * b * u * v + g * u * u,
        }
    }

    /// Full regularized density `F_delta` or one of its first partials.
    ///
    /// For |u|, |v| <= 1 - delta the value coincides with the singular
    /// density bit for bit, because the same code path evaluates the
    /// entropy there.
    pub fn f_delta(&self, u: f64, v: f64, which: Partial) -> f64 {
        match which {
            Partial::Value => {
                self.hat_s_delta(u, Component::U, 0) - 0.5 * self.theta_0u * u * u
                    + self.hat_s_delta(v, Component::V, 0)
                    - 0.5 * self.theta_0v * v * v
                    + self.coupling(u, v, Partial::Value)
            }
            Partial::Du => {
                self.hat_s_delta(u, Component::U, 1) - self.theta_0u * u
                    + self.coupling(u, v, Partial::Du)
            }
            Partial::Dv => {
                self.hat_s_delta(v, Component::V, 1) - self.theta_0v * v
                    + self.coupling(u, v, Partial::Dv)
            }
        }
    }

    /// Both first partials in one call; the stepper's hot loop.
    pub fn f_delta_grad(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.f_delta(u, v, Partial::Du),
            self.f_delta(u, v, Partial::Dv),
        )
    }

    /// Hessian of `F_delta`, symmetric 2x2.
    pub fn f_delta_hessian(&self, u: f64, v: f64) -> [[f64; 2]; 2] {
        let huu = self.hat_s_delta(u, Component::U, 2) - self.theta_0u + 2.0 * self.gamma * v;
        let hvv = self.hat_s_delta(v, Component::V, 2) - self.theta_0v + 2.0 * self.beta * u;
        let huv = self.alpha + 2.0 * self.beta * v + 2.0 * self.gamma * u;
        [[huu, huv], [huv, hvv]]
    }

    /// Constants `(k1, k2)` with `F_delta(u,v) >= k1 (u^4 + v^4) - k2`.
    ///
    /// `k1 = c/48` with `c = 2 min(theta_u, theta_v)`, the global lower
    /// bound of the fourth entropy derivative (which is increasing in
    /// |r|, so the bound over any knot neighborhood is attained at its
    /// inner edge and the whole interval is the maximal choice). That
    /// makes `k1` independent of delta. `k2` is then raised until the
    /// sampled bound holds with margin 1e-9 on the verification lattice
    /// [-4,4]^2 at resolution 1e-2, and until two one-variable Young
    /// splittings certify the tail beyond the lattice.
    pub fn coercivity_constants(&self) -> Result<(f64, f64)> {
        let c = 2.0 * self.theta_u.min(self.theta_v);
        let k1 = c / 48.0;
        let margin = 1e-9;

        // Young splitting of the coupling:
        //   |uv| <= (u^2 + v^2)/2,  |u|v^2 <= (|u|^3 + 2|v|^3)/3,  u^2|v| <= (2|u|^3 + |v|^3)/3,
        // so F_delta - k1(u^4 + v^4) >= phi_u(|u|) + phi_v(|v|) with the
        // one-variable functions scanned below. Bounding each phi from
        // below by -k2/2 certifies the inequality on all of R^2.
        let quad_u = 0.5 * (self.theta_0u + self.alpha.abs());
        let quad_v = 0.5 * (self.theta_0v + self.alpha.abs());
        let cub_u = (self.beta.abs() + 2.0 * self.gamma.abs()) / 3.0;
        let cub_v = (2.0 * self.beta.abs() + self.gamma.abs()) / 3.0;

        let m_u = self.scan_split_min(Component::U, quad_u, cub_u, k1)?;
        let m_v = self.scan_split_min(Component::V, quad_v, cub_v, k1)?;
        let need_split = 2.0 * (-(m_u.min(m_v))).max(0.0);

        // Direct 2D verification lattice.
        let mut min2d = f64::INFINITY;
        let n = 801;
        for i in 0..n {
            let u = -4.0 + 8.0 * (i as f64) / ((n - 1) as f64);
            let u4 = u * u * u * u;
            for j in 0..n {
                let v = -4.0 + 8.0 * (j as f64) / ((n - 1) as f64);
                let g = self.f_delta(u, v, Partial::Value) - k1 * (u4 + v * v * v * v);
                if g < min2d {
                    min2d = g;
                }
            }
        }
        let need_lattice = (-min2d).max(0.0);

        let k2 = need_split.max(need_lattice) + margin;
        if k2 > 1e6 {
            return Err(Error::CoercivityCertificate { required_k2: k2 });
        }
        Ok((k1, k2))
    }

    /// Re-check the lattice part of the coercivity certificate for a
    /// given pair of constants.
    pub fn verify_coercivity(&self, k1: f64, k2: f64) -> bool {
        let n = 801;
        for i in 0..n {
            let u = -4.0 + 8.0 * (i as f64) / ((n - 1) as f64);
            let u4 = u * u * u * u;
            for j in 0..n {
                let v = -4.0 + 8.0 * (j as f64) / ((n - 1) as f64);
                if self.f_delta(u, v, Partial::Value) - k1 * (u4 + v * v * v * v) + k2 < 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Minimum over p >= 0 of
    /// `phi(p) = S_delta_hat(p) - quad p^2 - cub p^3 - k1 p^4`,
    /// by a dense scan up to a radius beyond which the quartic entropy
    /// tail provably dominates.
    fn scan_split_min(&self, comp: Component, quad: f64, cub: f64, k1: f64) -> Result<f64> {
        let theta = self.theta(comp);
        // For p >= P with P >= 20:
        //   S_delta_hat(p) >= (theta/12)(p-1)^4 >= (theta/12)(1 - 1/P)^4 p^4,
        // and the leftover quartic coefficient after subtracting k1
        // dominates the quadratic and cubic terms once
        //   g P >= cub + quad / P,  g = (theta/12)(1 - 1/P)^4 - k1.
        let mut p_star = 20.0f64;
        loop {
            let g = theta / 12.0 * (1.0 - 1.0 / p_star).powi(4) - k1;
            if g > 0.0 && g * p_star >= cub + quad / p_star {
                break;
            }
            p_star *= 2.0;
            if p_star > 1e9 {
                return Err(Error::CoercivityCertificate { required_k2: f64::INFINITY });
            }
        }
        let steps = ((p_star / 1e-3).ceil() as usize).clamp(10_000, 2_000_000);
        let mut min = f64::INFINITY;
        for i in 0..=steps {
            let p = p_star * (i as f64) / (steps as f64);
            let phi = self.hat_s_delta(p, comp, 0)
                - quad * p * p
                - cub * p * p * p
                - k1 * p * p * p * p;
            if phi < min {
                min = phi;
            }
        }
        Ok(min)
    }
}

/// Fourth-order Taylor polynomial of `hat_s` about `knot`, evaluated at
/// offset `s = r - knot`, differentiated `k` times:
/// `sum_{i=k}^{4} hat_s^(i)(knot) s^(i-k) / (i-k)!`.
fn taylor_tail(s: f64, knot: f64, theta: f64, k: usize) -> f64 {
    let d = [
        hat_s_raw(knot, theta),
        hat_s_deriv_raw(knot, theta, 1),
        hat_s_deriv_raw(knot, theta, 2),
        hat_s_deriv_raw(knot, theta, 3),
        hat_s_deriv_raw(knot, theta, 4),
    ];
    let mut sum = 0.0;
    let mut fact = 1.0;
    for (m, i) in (k..=4).enumerate() {
        if m > 0 {
            fact *= m as f64;
        }
        sum += d[i] / fact * s.powi(m as i32);
    }
    sum
}
