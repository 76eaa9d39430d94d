//! Reference-frame transforms and per-unit bases.
//!
//! The Clarke transform is amplitude invariant: a balanced set with phase
//! amplitude `M` maps to an αβ vector of length `M`. Three-phase power is
//! therefore `3/2 (v_d i_d + v_q i_q)` in dq coordinates. The dq frame
//! follows the usual convention where `d = α cos θ + β sin θ`, so a
//! positive-sequence set at angle `θ` lands on the d axis.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const TWO_PI_3: f64 = 2.0 * PI / 3.0;

/// Instantaneous values of a three-phase quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhase {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    /// Positive-sequence set `M [cos θ, cos(θ - 2π/3), cos(θ + 2π/3)]`.
    pub fn balanced(amplitude: f64, angle: f64) -> Self {
        Self {
            a: amplitude * angle.cos(),
            b: amplitude * (angle - TWO_PI_3).cos(),
            c: amplitude * (angle + TWO_PI_3).cos(),
        }
    }

    pub fn dot(&self, other: &ThreePhase) -> f64 {
        self.a * other.a + self.b * other.b + self.c * other.c
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.a * k, self.b * k, self.c * k)
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }
}

/// Stationary two-axis (αβ) quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwoAxis {
    pub alpha: f64,
    pub beta: f64,
}

impl TwoAxis {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn magnitude(&self) -> f64 {
        self.alpha.hypot(self.beta)
    }
}

/// Rotating two-axis quantity. Also used as a plain 2-vector (complex
/// number `d + j q`) throughout the plant and controller code.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq {
    pub d: f64,
    pub q: f64,
}

impl Dq {
    pub const ZERO: Dq = Dq { d: 0.0, q: 0.0 };

    pub const fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        Self::new(magnitude * angle.cos(), magnitude * angle.sin())
    }

    pub fn magnitude(&self) -> f64 {
        self.d.hypot(self.q)
    }

    pub fn dot(&self, other: &Dq) -> f64 {
        self.d * other.d + self.q * other.q
    }

    /// Multiplication by `j`: `(d, q) -> (-q, d)`.
    pub fn j(&self) -> Dq {
        Dq::new(-self.q, self.d)
    }

    /// Multiplication by `e^{j angle}`; expresses a vector given in a frame
    /// at `angle` in a frame lagging it by `angle`.
    pub fn rotate(&self, angle: f64) -> Dq {
        let (s, c) = angle.sin_cos();
        Dq::new(c * self.d - s * self.q, s * self.d + c * self.q)
    }
}

impl Add for Dq {
    type Output = Dq;
    fn add(self, rhs: Dq) -> Dq {
        Dq::new(self.d + rhs.d, self.q + rhs.q)
    }
}

impl AddAssign for Dq {
    fn add_assign(&mut self, rhs: Dq) {
        self.d += rhs.d;
        self.q += rhs.q;
    }
}

impl Sub for Dq {
    type Output = Dq;
    fn sub(self, rhs: Dq) -> Dq {
        Dq::new(self.d - rhs.d, self.q - rhs.q)
    }
}

impl Mul<f64> for Dq {
    type Output = Dq;
    fn mul(self, k: f64) -> Dq {
        Dq::new(self.d * k, self.q * k)
    }
}

impl Neg for Dq {
    type Output = Dq;
    fn neg(self) -> Dq {
        Dq::new(-self.d, -self.q)
    }
}

/// Amplitude-invariant Clarke transform; the zero sequence is discarded.
pub fn abc_to_alphabeta(x: ThreePhase) -> TwoAxis {
    TwoAxis {
        alpha: (2.0 / 3.0) * (x.a - 0.5 * x.b - 0.5 * x.c),
        beta: (x.b - x.c) / SQRT3,
    }
}

pub fn alphabeta_to_abc(x: TwoAxis) -> ThreePhase {
    let half_sqrt3_beta = 0.5 * SQRT3 * x.beta;
    ThreePhase {
        a: x.alpha,
        b: -0.5 * x.alpha + half_sqrt3_beta,
        c: -0.5 * x.alpha - half_sqrt3_beta,
    }
}

/// Park transform onto a frame at angle `theta`.
pub fn alphabeta_to_dq(x: TwoAxis, theta: f64) -> Dq {
    let (s, c) = theta.sin_cos();
    Dq {
        d: x.alpha * c + x.beta * s,
        q: -x.alpha * s + x.beta * c,
    }
}

pub fn dq_to_alphabeta(x: Dq, theta: f64) -> TwoAxis {
    let (s, c) = theta.sin_cos();
    TwoAxis {
        alpha: x.d * c - x.q * s,
        beta: x.d * s + x.q * c,
    }
}

pub fn dq_to_abc(x: Dq, theta: f64) -> ThreePhase {
    alphabeta_to_abc(dq_to_alphabeta(x, theta))
}

pub fn abc_to_dq(x: ThreePhase, theta: f64) -> Dq {
    alphabeta_to_dq(abc_to_alphabeta(x), theta)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_to_pi(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped == -PI {
        PI
    } else {
        wrapped
    }
}

/// Per-unit base of the converter system. Voltages are phase peak values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    pub p_b: f64,
    pub f_b: f64,
    pub v_base: f64,
}

impl PerUnitBase {
    pub fn new(p_b: f64, f_b: f64, v_base: f64) -> Result<Self> {
        for (name, v) in [("p_b", p_b), ("f_b", f_b), ("v_base", v_base)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("per-unit base {name} must be positive, got {v}")));
            }
        }
        Ok(Self { p_b, f_b, v_base })
    }

    /// Peak current base, `(2/3) p_b / v_base`.
    pub fn i_base(&self) -> f64 {
        (2.0 / 3.0) * self.p_b / self.v_base
    }

    pub fn omega_b(&self) -> f64 {
        2.0 * PI * self.f_b
    }

    pub fn z_base(&self) -> f64 {
        self.v_base / self.i_base()
    }
}
