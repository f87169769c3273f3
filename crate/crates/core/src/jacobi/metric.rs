//! Conformal metrics on the punctured plane: the bubble metric `g_b`, the
//! catenoid metric `g̃_λ`, the glued metric `g_λ` and the round sphere.
//!
//! Factors are given against `dr² + r²dθ²`; the cylinder factor against
//! `dt² + dθ²` (with `r = e^t`) is `r²` times that.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{NeckError, Result};
use crate::grid::CylinderGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// The flat cylinder `dt² + dθ²`.
    Flat,
    BubbleGb,
    CatenoidGti,
    GluedGi,
    RoundSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalMetric {
    pub kind: MetricKind,
    #[serde(default)]
    pub lambda: f64,
}

/// Smooth step: 0 on `(-∞, 1]`, 1 on `[2, ∞)`.
pub fn cutoff(s: f64) -> f64 {
    let psi = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let a = psi(s - 1.0);
    let b = psi(2.0 - s);
    a / (a + b)
}

/// `f(r)`: `(1+r²)^{-2}` for `r ≤ 1`, `r^{-4}` for `r ≥ 2`.
pub fn bubble_profile(r: f64) -> f64 {
    let inner = (1.0 + r * r).powi(-2);
    if r <= 1.0 {
        return inner;
    }
    let outer = r.powi(-4);
    if r >= 2.0 {
        return outer;
    }
    let w = cutoff(r);
    (1.0 - w) * inner + w * outer
}

/// Base metric on `S²` used by the glued metric: flat on `B_{1/2}`, the
/// inversion of `g_b` elsewhere.
fn base_factor(r: f64) -> f64 {
    bubble_profile(1.0 / r) / r.powi(4)
}

fn catenoid_factor(r: f64, lambda: f64) -> f64 {
    let a = 1.0 + lambda / (r * r);
    a * a
}

/// `(L_λ)^* g_b` with `L_λ(x) = x/λ`.
fn scaled_bubble(r: f64, lambda: f64) -> f64 {
    bubble_profile(r / lambda) / (lambda * lambda)
}

/// One smooth piece of the glued factor, evaluable past its own interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GluedPiece {
    Base,
    OuterBlend,
    Catenoid,
    InnerBlend,
    Bubble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeamJump {
    pub r: f64,
    /// `|f₋ − f₊| / |f|` at the seam.
    pub value_jump: f64,
    /// `|f₋' − f₊'| / max(|f'|, |f|/r)`.
    pub slope_jump: f64,
}

impl ConformalMetric {
    pub fn new(kind: MetricKind, lambda: f64) -> Result<Self> {
        let m = ConformalMetric { kind, lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn flat() -> Self {
        ConformalMetric { kind: MetricKind::Flat, lambda: 0.0 }
    }

    pub fn round_sphere() -> Self {
        ConformalMetric { kind: MetricKind::RoundSphere, lambda: 0.0 }
    }

    pub fn bubble() -> Self {
        ConformalMetric { kind: MetricKind::BubbleGb, lambda: 0.0 }
    }

    pub fn catenoid(lambda: f64) -> Result<Self> {
        Self::new(MetricKind::CatenoidGti, lambda)
    }

    /// `g_λ`; `λ = 0` is the base metric `g` itself.
    pub fn glued(lambda: f64) -> Result<Self> {
        Self::new(MetricKind::GluedGi, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.lambda;
        match self.kind {
            MetricKind::CatenoidGti if !(l > 0.0 && l.is_finite()) => Err(NeckError::InvalidArgument(format!(
                "catenoid metric needs lambda > 0, got {l}"
            ))),
            MetricKind::GluedGi if !(0.0..1.0 / 16.0).contains(&l) => Err(NeckError::InvalidArgument(format!(
                "glued metric needs 0 <= lambda < 1/16, got {l}"
            ))),
            _ => Ok(()),
        }
    }

    fn glued_piece(&self, r: f64) -> GluedPiece {
        let l = self.lambda;
        if r >= 0.5 {
            GluedPiece::Base
        } else if r > 0.25 {
            GluedPiece::OuterBlend
        } else if l == 0.0 || r >= 4.0 * l {
            GluedPiece::Catenoid
        } else if r > 2.0 * l {
            GluedPiece::InnerBlend
        } else {
            GluedPiece::Bubble
        }
    }

    fn glued_eval(&self, piece: GluedPiece, r: f64) -> f64 {
        let l = self.lambda;
        match piece {
            GluedPiece::Base => base_factor(r),
            GluedPiece::OuterBlend => {
                let w = cutoff(4.0 * r);
                w * base_factor(r) + (1.0 - w) * catenoid_factor(r, l)
            }
            GluedPiece::Catenoid => catenoid_factor(r, l),
            GluedPiece::InnerBlend => {
                let w = cutoff(r / (2.0 * l));
                w * catenoid_factor(r, l) + (1.0 - w) * scaled_bubble(r, l)
            }
            GluedPiece::Bubble => scaled_bubble(r, l),
        }
    }

    /// Conformal factor against `dr² + r²dθ²`.
    pub fn factor(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(NeckError::InvalidArgument(format!("radius {r} outside [0, ∞)")));
        }
        let singular = matches!(self.kind, MetricKind::CatenoidGti | MetricKind::GluedGi | MetricKind::Flat);
        if r == 0.0 && singular {
            return Err(NeckError::InvalidArgument(format!(
                "{:?} metric is singular at r = 0",
                self.kind
            )));
        }
        Ok(match self.kind {
            MetricKind::Flat => 1.0 / (r * r),
            MetricKind::RoundSphere => 4.0 / (1.0 + r * r).powi(2),
            MetricKind::BubbleGb => bubble_profile(r),
            MetricKind::CatenoidGti => catenoid_factor(r, self.lambda),
            MetricKind::GluedGi => self.glued_eval(self.glued_piece(r), r),
        })
    }

    /// Conformal factor `ρ(t)` against `dt² + dθ²`.
    pub fn cylinder_factor(&self, t: f64) -> f64 {
        match self.kind {
            MetricKind::Flat => 1.0,
            MetricKind::RoundSphere => 1.0 / t.cosh().powi(2),
            MetricKind::CatenoidGti => {
                let e = t.exp() + self.lambda * (-t).exp();
                e * e
            }
            _ => {
                let r = t.exp();
                r * r * self.factor(r).expect("r = e^t is positive")
            }
        }
    }

    /// `ρ` at every axial node of `grid`.
    pub fn cylinder_factors(&self, grid: &CylinderGrid) -> Result<Vec<f64>> {
        self.validate()?;
        let rho: Vec<f64> = grid.t_values().into_iter().map(|t| self.cylinder_factor(t)).collect();
        if let Some(bad) = rho.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
            return Err(NeckError::InvalidArgument(format!("non-positive conformal factor {bad}")));
        }
        Ok(rho)
    }

    /// Radii where the piecewise definition switches formula.
    pub fn seams(&self) -> Vec<f64> {
        let l = self.lambda;
        match self.kind {
            MetricKind::BubbleGb => vec![1.0, 2.0],
            MetricKind::GluedGi if l > 0.0 => vec![l, 2.0 * l, 4.0 * l, 0.25, 0.5, 1.0],
            MetricKind::GluedGi => vec![0.25, 0.5, 1.0],
            _ => Vec::new(),
        }
    }

    /// Pieces meeting at a seam, as closures valid on both sides.
    fn sides(&self, r: f64) -> (Box<dyn Fn(f64) -> f64 + '_>, Box<dyn Fn(f64) -> f64 + '_>) {
        let l = self.lambda;
        let inner = |x: f64| (1.0 + x * x).powi(-2);
        let outer = |x: f64| x.powi(-4);
        let blend = move |x: f64| {
            let w = cutoff(x);
            (1.0 - w) * inner(x) + w * outer(x)
        };
        match self.kind {
            MetricKind::BubbleGb => {
                if r == 1.0 {
                    (Box::new(inner), Box::new(blend))
                } else {
                    (Box::new(blend), Box::new(outer))
                }
            }
            _ => {
                let eps = 1e-9 * r;
                let below = self.glued_piece(r - eps);
                let above = self.glued_piece(r + eps);
                if below != above {
                    return (
                        Box::new(move |x| self.glued_eval(below, x)),
                        Box::new(move |x| self.glued_eval(above, x)),
                    );
                }
                // seams inside the bubble or base profile
                let (f_in, f_out): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) =
                    if (r - l).abs() < eps || (r - 2.0 * l).abs() < eps {
                        let (a, b) = if (r - l).abs() < eps {
                            (Box::new(inner) as Box<dyn Fn(f64) -> f64>, Box::new(blend) as Box<dyn Fn(f64) -> f64>)
                        } else {
                            (Box::new(blend) as Box<dyn Fn(f64) -> f64>, Box::new(outer) as Box<dyn Fn(f64) -> f64>)
                        };
                        (
                            Box::new(move |x| a(x / l) / (l * l)),
                            Box::new(move |x| b(x / l) / (l * l)),
                        )
                    } else {
                        // r = 1 is where 1/r crosses 1 in the base profile
                        (
                            Box::new(move |x| blend(1.0 / x) / x.powi(4)),
                            Box::new(move |x| inner(1.0 / x) / x.powi(4)),
                        )
                    };
                (f_in, f_out)
            }
        }
    }

    /// Value and slope mismatch of the two formulas meeting at each seam.
    pub fn seam_jumps(&self) -> Vec<SeamJump> {
        self.seams()
            .into_iter()
            .map(|r| {
                let (lo, hi) = self.sides(r);
                let h = 1e-4 * r;
                let d = |f: &dyn Fn(f64) -> f64| {
                    (-f(r + 2.0 * h) + 8.0 * f(r + h) - 8.0 * f(r - h) + f(r - 2.0 * h)) / (12.0 * h)
                };
                let (a, b) = (lo(r), hi(r));
                let (da, db) = (d(&*lo), d(&*hi));
                let scale = a.abs().max(b.abs());
                SeamJump {
                    r,
                    value_jump: (a - b).abs() / scale,
                    slope_jump: (da - db).abs() / da.abs().max(db.abs()).max(scale / r),
                }
            })
            .collect()
    }
}

/// Free-function form of [`ConformalMetric::factor`].
pub fn metric_factor(m: &ConformalMetric, r: f64) -> Result<f64> {
    m.validate()?;
    m.factor(r)
}

/// `2π ∫_{λ/δ}^{δ} ρ(r) r dr` by composite Gauss–Legendre in `t = log r`.
pub fn annulus_volume(m: &ConformalMetric, delta: f64, lambda: f64) -> Result<f64> {
    m.validate()?;
    if !(lambda > 0.0 && delta > 0.0 && lambda / delta < delta) {
        return Err(NeckError::InvalidArgument(format!(
            "annulus needs 0 < lambda/delta < delta (lambda = {lambda}, delta = {delta})"
        )));
    }
    let (a, b) = ((lambda / delta).ln(), delta.ln());
    let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
    let mut seams: Vec<f64> = m
        .seams()
        .into_iter()
        .map(f64::ln)
        .filter(|s| *s > a && *s < b)
        .collect();
    seams.insert(0, a);
    seams.push(b);
    let mut total = 0.0;
    for w in seams.windows(2) {
        let panels = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            let lo = w[0] + k as f64 * h;
            total += rule.integrate(lo, lo + h, |t| m.cylinder_factor(t));
        }
    }
    Ok(2.0 * PI * total)
}

/// Exact `Vol_{g̃_λ}(B_δ ∖ B_{λ/δ}) = 2π(δ² − λ²/δ² + 2λ log(δ²/λ))`.
pub fn catenoid_annulus_volume(delta: f64, lambda: f64) -> f64 {
    // 2πλ ∫_{-T}^{T} (e^t + e^{-t})² dt with e^{2T} = δ²/λ
    let e2t = delta * delta / lambda;
    2.0 * PI * lambda * (e2t - 1.0 / e2t + 2.0 * e2t.ln())
}
