//! Catalogs of pair couplings `C`, pair functions `g`, and weight dynamics
//! `F`, with their recorded Lipschitz and sup constants and the fixed id
//! strings used by configuration files.
//!
//! All couplings are scalar-valued. For state dimension above one they
//! evaluate on the first coordinate pair and the integrators broadcast the
//! resulting scalar identically to every coordinate; dimension one is the
//! primary verified regime.
//!
//! Id grammar (colon-separated, fixed arity per head):
//!
//! ```text
//! C: kuramoto | linear_attraction | constant:<c> | sum_drive:<kappa>
//! g: cos | constant:<c>
//! F: linear:<a>:<g> | saturating:<g> | constant:<c>
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{CoreError, CoreResult};

/// Pair coupling `C(phi, psi)`, scalar-valued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairCoupling {
    /// `sin(psi_0 - phi_0)`.
    Kuramoto,
    /// `psi_0 - phi_0`.
    LinearAttraction,
    /// Constant `c`, ignoring both states.
    Constant(f64),
    /// `kappa * (phi_0 + psi_0)`: positive feedback through the joint state,
    /// used by expansive stress tests of the stability bounds.
    SumDrive(f64),
}

impl PairCoupling {
    pub fn eval(&self, phi: &[f64], psi: &[f64]) -> f64 {
        match *self {
            PairCoupling::Kuramoto => (psi[0] - phi[0]).sin(),
            PairCoupling::LinearAttraction => psi[0] - phi[0],
            PairCoupling::Constant(c) => c,
            PairCoupling::SumDrive(k) => k * (phi[0] + psi[0]),
        }
    }

    /// Lipschitz constant with respect to `|d phi| + |d psi|`.
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            PairCoupling::Kuramoto => 1.0,
            PairCoupling::LinearAttraction => 1.0,
            PairCoupling::Constant(_) => 0.0,
            PairCoupling::SumDrive(k) => k.abs(),
        }
    }

    /// Sup bound over all states; infinite for the unbounded couplings.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            PairCoupling::Kuramoto => 1.0,
            PairCoupling::LinearAttraction => f64::INFINITY,
            PairCoupling::Constant(c) => c.abs(),
            PairCoupling::SumDrive(k) => {
                if k == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Scalar pair function `g(phi, psi)` forcing the weight dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairFunction {
    /// `cos(psi_0 - phi_0)`.
    Cos,
    /// Constant `c`.
    Constant(f64),
}

impl PairFunction {
    pub fn eval(&self, phi: &[f64], psi: &[f64]) -> f64 {
        match *self {
            PairFunction::Cos => (psi[0] - phi[0]).cos(),
            PairFunction::Constant(c) => c,
        }
    }

    /// Lipschitz constant with respect to `|d phi| + |d psi|`.
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            PairFunction::Cos => 1.0,
            PairFunction::Constant(_) => 0.0,
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match *self {
            PairFunction::Cos => 1.0,
            PairFunction::Constant(c) => c.abs(),
        }
    }
}

/// Per-entry weight dynamics `F(w, phi, psi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightDynamics {
    /// `F = -a * w + g(phi, psi)` with decay rate `a > 0`.
    Linear { decay: f64, forcing: PairFunction },
    /// `F = w * (1 - w) * g(phi, psi)`; intended for weights in `[0, 1]`.
    Saturating { forcing: PairFunction },
    /// `F = c` independent of everything; `constant:0` freezes the weights.
    Constant(f64),
}

impl WeightDynamics {
    pub fn linear(decay: f64, forcing: PairFunction) -> CoreResult<Self> {
        if !decay.is_finite() || decay <= 0.0 {
            return Err(CoreError::Domain(format!(
                "linear weight dynamics needs decay a > 0, got {decay}"
            )));
        }
        Ok(WeightDynamics::Linear { decay, forcing })
    }

    pub fn eval(&self, w: f64, phi: &[f64], psi: &[f64]) -> f64 {
        match *self {
            WeightDynamics::Linear { decay, forcing } => -decay * w + forcing.eval(phi, psi),
            WeightDynamics::Saturating { forcing } => w * (1.0 - w) * forcing.eval(phi, psi),
            WeightDynamics::Constant(c) => c,
        }
    }

    /// Lipschitz constant in `(w, phi, psi)` jointly (sum of differences),
    /// on the weight range the dynamics preserves.
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            WeightDynamics::Linear { decay, forcing } => decay.max(forcing.lipschitz_bound()),
            WeightDynamics::Saturating { forcing } => forcing
                .sup_bound()
                .max(forcing.lipschitz_bound() / 4.0),
            WeightDynamics::Constant(_) => 0.0,
        }
    }

    /// Bound on `|w(t)|` over `[0, t_end]` given `|w(0)| <= w0_max`.
    /// Saturating dynamics assumes weights start in `[0, 1]`.
    pub fn weight_range(&self, w0_max: f64, t_end: f64) -> f64 {
        match *self {
            WeightDynamics::Linear { decay, forcing } => {
                w0_max.max(forcing.sup_bound() / decay)
            }
            WeightDynamics::Saturating { .. } => w0_max.max(1.0),
            WeightDynamics::Constant(c) => w0_max + c.abs() * t_end,
        }
    }
}

// ---------------------------------------------------------------------------
// Id strings: fixed-arity recursive descent on colon-separated tokens.
// ---------------------------------------------------------------------------

/// Cursor over the colon-separated tokens of a catalog id.
pub(crate) struct Tokens<'a> {
    parts: Vec<&'a str>,
    pos: usize,
    source: &'a str,
}

impl<'a> Tokens<'a> {
    pub(crate) fn new(s: &'a str) -> Self {
        Tokens {
            parts: s.split(':').collect(),
            pos: 0,
            source: s,
        }
    }

    pub(crate) fn next(&mut self) -> CoreResult<&'a str> {
        let t = self.parts.get(self.pos).copied().ok_or_else(|| {
            CoreError::Validation(format!("catalog id '{}' ends early", self.source))
        })?;
        self.pos += 1;
        Ok(t)
    }

    pub(crate) fn next_f64(&mut self) -> CoreResult<f64> {
        let t = self.next()?;
        t.parse::<f64>().map_err(|_| {
            CoreError::Validation(format!(
                "catalog id '{}': expected a number, found '{t}'",
                self.source
            ))
        })
    }

    pub(crate) fn finish(&self) -> CoreResult<()> {
        if self.pos == self.parts.len() {
            Ok(())
        } else {
            Err(CoreError::Validation(format!(
                "catalog id '{}' has trailing tokens after position {}",
                self.source, self.pos
            )))
        }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.parts.len()
    }
}

pub(crate) fn parse_coupling(t: &mut Tokens) -> CoreResult<PairCoupling> {
    match t.next()? {
        "kuramoto" => Ok(PairCoupling::Kuramoto),
        "linear_attraction" => Ok(PairCoupling::LinearAttraction),
        "constant" => Ok(PairCoupling::Constant(t.next_f64()?)),
        "sum_drive" => Ok(PairCoupling::SumDrive(t.next_f64()?)),
        other => Err(CoreError::Validation(format!(
            "unknown pair coupling '{other}'"
        ))),
    }
}

pub(crate) fn parse_pair_function(t: &mut Tokens) -> CoreResult<PairFunction> {
    match t.next()? {
        "cos" => Ok(PairFunction::Cos),
        "constant" => Ok(PairFunction::Constant(t.next_f64()?)),
        other => Err(CoreError::Validation(format!(
            "unknown pair function '{other}'"
        ))),
    }
}

pub(crate) fn parse_weight_dynamics(t: &mut Tokens) -> CoreResult<WeightDynamics> {
    match t.next()? {
        "linear" => {
            let a = t.next_f64()?;
            let g = parse_pair_function(t)?;
            WeightDynamics::linear(a, g)
        }
        "saturating" => Ok(WeightDynamics::Saturating {
            forcing: parse_pair_function(t)?,
        }),
        "constant" => Ok(WeightDynamics::Constant(t.next_f64()?)),
        other => Err(CoreError::Validation(format!(
            "unknown weight dynamics '{other}'"
        ))),
    }
}

impl FromStr for PairCoupling {
    type Err = CoreError;
    fn from_str(s: &str) -> CoreResult<Self> {
        let mut t = Tokens::new(s);
        let c = parse_coupling(&mut t)?;
        t.finish()?;
        Ok(c)
    }
}

impl FromStr for PairFunction {
    type Err = CoreError;
    fn from_str(s: &str) -> CoreResult<Self> {
        let mut t = Tokens::new(s);
        let g = parse_pair_function(&mut t)?;
        t.finish()?;
        Ok(g)
    }
}

impl FromStr for WeightDynamics {
    type Err = CoreError;
    fn from_str(s: &str) -> CoreResult<Self> {
        let mut t = Tokens::new(s);
        let f = parse_weight_dynamics(&mut t)?;
        t.finish()?;
        Ok(f)
    }
}

impl fmt::Display for PairCoupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PairCoupling::Kuramoto => write!(f, "kuramoto"),
            PairCoupling::LinearAttraction => write!(f, "linear_attraction"),
            PairCoupling::Constant(c) => write!(f, "constant:{c}"),
            PairCoupling::SumDrive(k) => write!(f, "sum_drive:{k}"),
        }
    }
}

impl fmt::Display for PairFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PairFunction::Cos => write!(f, "cos"),
            PairFunction::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

impl fmt::Display for WeightDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            WeightDynamics::Linear { decay, forcing } => write!(f, "linear:{decay}:{forcing}"),
            WeightDynamics::Saturating { forcing } => write!(f, "saturating:{forcing}"),
            WeightDynamics::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_values() {
        let phi = [0.2];
        let psi = [0.9];
        assert_eq!(
            PairCoupling::Kuramoto.eval(&phi, &psi),
            (0.9f64 - 0.2).sin()
        );
        assert_eq!(PairCoupling::LinearAttraction.eval(&phi, &psi), 0.7);
        assert_eq!(PairCoupling::Constant(3.0).eval(&phi, &psi), 3.0);
        assert_eq!(PairCoupling::SumDrive(2.0).eval(&phi, &psi), 2.0 * 1.1);
    }

    #[test]
    fn coupling_lipschitz_constants_hold() {
        let cases = [
            PairCoupling::Kuramoto,
            PairCoupling::LinearAttraction,
            PairCoupling::Constant(-2.0),
            PairCoupling::SumDrive(1.5),
        ];
        let probes = [-1.3, -0.4, 0.0, 0.7, 2.1];
        for c in cases {
            let lip = c.lipschitz_bound();
            for &a in &probes {
                for &b in &probes {
                    for &a2 in &probes {
                        for &b2 in &probes {
                            let lhs = (c.eval(&[a], &[b]) - c.eval(&[a2], &[b2])).abs();
                            let rhs = lip * ((a - a2).abs() + (b - b2).abs());
                            assert!(lhs <= rhs + 1e-12, "{c}: {lhs} > {rhs}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn weight_dynamics_values_and_bounds() {
        let f = WeightDynamics::linear(1.0, PairFunction::Cos).unwrap();
        assert_eq!(f.eval(0.5, &[0.0], &[0.0]), -0.5 + 1.0);
        assert_eq!(f.lipschitz_bound(), 1.0);
        assert_eq!(f.weight_range(2.0, 1.0), 2.0);
        assert_eq!(f.weight_range(0.5, 1.0), 1.0);

        let s = WeightDynamics::Saturating {
            forcing: PairFunction::Constant(2.0),
        };
        assert_eq!(s.eval(0.5, &[0.0], &[0.0]), 0.5);
        assert_eq!(s.lipschitz_bound(), 2.0);

        let z = WeightDynamics::Constant(0.0);
        assert_eq!(z.eval(7.0, &[1.0], &[2.0]), 0.0);
        assert_eq!(z.lipschitz_bound(), 0.0);
        assert_eq!(z.weight_range(3.0, 10.0), 3.0);

        assert!(WeightDynamics::linear(0.0, PairFunction::Cos).is_err());
        assert!(WeightDynamics::linear(-1.0, PairFunction::Cos).is_err());
    }

    #[test]
    fn id_strings_roundtrip() {
        let ids = [
            "kuramoto",
            "linear_attraction",
            "constant:0.5",
            "sum_drive:2",
        ];
        for id in ids {
            let c: PairCoupling = id.parse().unwrap();
            let back: PairCoupling = c.to_string().parse().unwrap();
            assert_eq!(c, back);
        }
        let fs = ["linear:1:cos", "linear:0.5:constant:2", "saturating:cos", "constant:0"];
        for id in fs {
            let f: WeightDynamics = id.parse().unwrap();
            let back: WeightDynamics = f.to_string().parse().unwrap();
            assert_eq!(f, back);
        }
    }

    #[test]
    fn id_strings_reject_garbage() {
        assert!("kuramotox".parse::<PairCoupling>().is_err());
        assert!("constant".parse::<PairCoupling>().is_err()); // missing value
        assert!("constant:x".parse::<PairCoupling>().is_err());
        assert!("kuramoto:1".parse::<PairCoupling>().is_err()); // trailing
        assert!("linear:cos".parse::<WeightDynamics>().is_err()); // missing a
        assert!("linear:-1:cos".parse::<WeightDynamics>().is_err()); // a <= 0
        assert!("saturating".parse::<WeightDynamics>().is_err());
    }
}
