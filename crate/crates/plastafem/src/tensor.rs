//! Small fixed-size linear algebra: 2-vectors, symmetric 2x2 tensors and
//! their trace-free parameterization.
//!
//! Symmetric tensors use the Frobenius inner product A:B = sum_ij A_ij B_ij,
//! so the off-diagonal entry counts twice. Trace-free symmetric tensors are
//! stored by their two independent entries, q = [[d11, d12], [d12, -d11]].

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Isotropic material data for one quasi-static elastoplastic step:
/// Lame parameters, linear kinematic/isotropic hardening moduli and the
/// yield stress of the dissipation density sigma_y * |q|.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub mu: f64,
    pub lambda: f64,
    pub h_kin: f64,
    pub h_iso: f64,
    pub sigma_y: f64,
}

impl Material {
    /// Ranges accepted by the solver: mu > 0, lambda >= 0, hardening > 0,
    /// sigma_y > 0. Everything must be finite.
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            ("mu", self.mu, self.mu > 0.0),
            ("lambda", self.lambda, self.lambda >= 0.0),
            ("h_kin", self.h_kin, self.h_kin > 0.0),
            ("h_iso", self.h_iso, self.h_iso > 0.0),
            ("sigma_y", self.sigma_y, self.sigma_y > 0.0),
        ];
        for (name, value, ok) in checks {
            if !value.is_finite() || !ok {
                return Err(format!("material parameter {name} = {value} out of range"));
            }
        }
        Ok(())
    }

    /// Elasticity tensor applied to a symmetric tensor:
    /// C t = 2 mu t + lambda tr(t) I.
    pub fn cee(&self, t: SymTensor2) -> SymTensor2 {
        let tr = self.lambda * t.trace();
        SymTensor2 {
            xx: 2.0 * self.mu * t.xx + tr,
            yy: 2.0 * self.mu * t.yy + tr,
            xy: 2.0 * self.mu * t.xy,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// 2D cross product (z component of the 3D one).
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        Vec2::new(self * v.x, self * v.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Symmetric 2x2 tensor; xy is stored once.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymTensor2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SymTensor2 {
    pub const ZERO: SymTensor2 = SymTensor2 { xx: 0.0, yy: 0.0, xy: 0.0 };

    pub fn identity() -> Self {
        SymTensor2 { xx: 1.0, yy: 1.0, xy: 0.0 }
    }

    /// Symmetric part of the outer product a (x) b.
    pub fn sym_outer(a: Vec2, b: Vec2) -> Self {
        SymTensor2 {
            xx: a.x * b.x,
            yy: a.y * b.y,
            xy: 0.5 * (a.x * b.y + a.y * b.x),
        }
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    /// Trace-free part, returned in the two-entry parameterization.
    pub fn deviator(self) -> DevTensor2 {
        DevTensor2 {
            d11: 0.5 * (self.xx - self.yy),
            d12: self.xy,
        }
    }

    /// Frobenius inner product (off-diagonal counted twice).
    pub fn dot(self, o: SymTensor2) -> f64 {
        self.xx * o.xx + self.yy * o.yy + 2.0 * self.xy * o.xy
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Matrix-vector product (the tensor acting as a 2x2 matrix).
    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }
}

impl Add for SymTensor2 {
    type Output = SymTensor2;
    fn add(self, o: SymTensor2) -> SymTensor2 {
        SymTensor2 { xx: self.xx + o.xx, yy: self.yy + o.yy, xy: self.xy + o.xy }
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, o: SymTensor2) {
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
    }
}

impl Sub for SymTensor2 {
    type Output = SymTensor2;
    fn sub(self, o: SymTensor2) -> SymTensor2 {
        SymTensor2 { xx: self.xx - o.xx, yy: self.yy - o.yy, xy: self.xy - o.xy }
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, t: SymTensor2) -> SymTensor2 {
        SymTensor2 { xx: self * t.xx, yy: self * t.yy, xy: self * t.xy }
    }
}

/// Trace-free symmetric 2x2 tensor stored as [[d11, d12], [d12, -d11]].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DevTensor2 {
    pub d11: f64,
    pub d12: f64,
}

impl DevTensor2 {
    pub const ZERO: DevTensor2 = DevTensor2 { d11: 0.0, d12: 0.0 };

    pub fn to_sym(self) -> SymTensor2 {
        SymTensor2 { xx: self.d11, yy: -self.d11, xy: self.d12 }
    }

    /// Frobenius norm: |q|^2 = 2 d11^2 + 2 d12^2.
    ///
    /// Every feasibility comparison |p| <= alpha in the crate funnels through
    /// this one function so that stored alpha = |p| matches exactly.
    pub fn norm(self) -> f64 {
        (2.0 * (self.d11 * self.d11 + self.d12 * self.d12)).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        2.0 * (self.d11 * self.d11 + self.d12 * self.d12)
    }

    pub fn dot(self, o: DevTensor2) -> f64 {
        2.0 * (self.d11 * o.d11 + self.d12 * o.d12)
    }

    pub fn is_finite(self) -> bool {
        self.d11.is_finite() && self.d12.is_finite()
    }
}

impl Add for DevTensor2 {
    type Output = DevTensor2;
    fn add(self, o: DevTensor2) -> DevTensor2 {
        DevTensor2 { d11: self.d11 + o.d11, d12: self.d12 + o.d12 }
    }
}

impl Sub for DevTensor2 {
    type Output = DevTensor2;
    fn sub(self, o: DevTensor2) -> DevTensor2 {
        DevTensor2 { d11: self.d11 - o.d11, d12: self.d12 - o.d12 }
    }
}

impl Mul<DevTensor2> for f64 {
    type Output = DevTensor2;
    fn mul(self, t: DevTensor2) -> DevTensor2 {
        DevTensor2 { d11: self * t.d11, d12: self * t.d12 }
    }
}
