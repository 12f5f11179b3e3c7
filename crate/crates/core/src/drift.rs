//! Prior drift families: gradient drift `-∇V(x)` and the mixed
//! conservative-dissipative (Langevin) drift `(η, -∇V(ξ) - κη)`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One monomial `coefficient · Π xᵢ^{exponents[i]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PotentialSpec {
    dim: usize,
    terms: Vec<Monomial>,
}

/// Multivariate polynomial with exact evaluation and gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialSpec", into = "PotentialSpec")]
pub struct PolynomialPotential {
    dim: usize,
    terms: Vec<Monomial>,
}

impl PolynomialPotential {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "potential dimension must be at least 1"));
        }
        for t in &terms {
            if t.exponents.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: t.exponents.len() });
            }
            if !t.coefficient.is_finite() {
                return Err(Error::param("terms", "coefficients must be finite"));
            }
        }
        Ok(Self { dim, terms })
    }

    /// Builds from `(coefficient, exponents)` pairs.
    pub fn from_terms(dim: usize, terms: &[(f64, &[u32])]) -> Result<Self> {
        Self::new(
            dim,
            terms
                .iter()
                .map(|(c, e)| Monomial { coefficient: *c, exponents: e.to_vec() })
                .collect(),
        )
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    /// `½‖x‖²`.
    pub fn quadratic(dim: usize) -> Self {
        let terms = (0..dim)
            .map(|i| {
                let mut e = vec![0; dim];
                e[i] = 2;
                Monomial { coefficient: 0.5, exponents: e }
            })
            .collect();
        Self { dim, terms }
    }

    /// Double well `¼(1 + x₁⁴) + ½(x₂² - x₁²)` in two dimensions.
    pub fn double_well() -> Self {
        Self::from_terms(2, &[(0.25, &[0, 0]), (0.25, &[4, 0]), (0.5, &[0, 2]), (-0.5, &[2, 0])])
            .expect("static terms are well formed")
    }

    /// `5ξ⁴` in one dimension.
    pub fn quartic() -> Self {
        Self::from_terms(1, &[(5.0, &[4])]).expect("static terms are well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn value(&self, x: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|t| t.coefficient * t.exponents.iter().zip(x.iter()).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>())
            .sum()
    }

    pub fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        debug_assert_eq!(x.len(), self.dim);
        let mut g = Array1::zeros(self.dim);
        for t in &self.terms {
            for k in 0..self.dim {
                let ek = t.exponents[k];
                if ek == 0 {
                    continue;
                }
                let mut prod = t.coefficient * ek as f64;
                for (j, (&e, &xj)) in t.exponents.iter().zip(x.iter()).enumerate() {
                    let p = if j == k { e - 1 } else { e };
                    prod *= xj.powi(p as i32);
                }
                g[k] += prod;
            }
        }
        g
    }

    fn check(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    pub fn try_value(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check(x)?;
        Ok(self.value(x))
    }

    pub fn try_gradient(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check(x)?;
        Ok(self.gradient(x))
    }
}

impl TryFrom<PotentialSpec> for PolynomialPotential {
    type Error = Error;

    fn try_from(spec: PotentialSpec) -> Result<Self> {
        PolynomialPotential::new(spec.dim, spec.terms)
    }
}

impl From<PolynomialPotential> for PotentialSpec {
    fn from(p: PolynomialPotential) -> Self {
        PotentialSpec { dim: p.dim, terms: p.terms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDrift {
    pub potential: PolynomialPotential,
}

/// Langevin drift on `x = (ξ, η)` with `ξ, η ∈ ℝᵐ`; noise and control act on `η` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDrift {
    pub potential: PolynomialPotential,
    pub kappa: f64,
}

impl MixedDrift {
    pub fn new(potential: PolynomialPotential, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::param("kappa", format!("must be finite and positive, got {kappa}")));
        }
        Ok(Self { potential, kappa })
    }

    pub fn half_dim(&self) -> usize {
        self.potential.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriftModel {
    Gradient(GradientDrift),
    Mixed(MixedDrift),
}

impl DriftModel {
    pub fn gradient(potential: PolynomialPotential) -> Self {
        DriftModel::Gradient(GradientDrift { potential })
    }

    pub fn mixed(potential: PolynomialPotential, kappa: f64) -> Result<Self> {
        MixedDrift::new(potential, kappa).map(DriftModel::Mixed)
    }

    pub fn validate(&self) -> Result<()> {
        if let DriftModel::Mixed(m) = self {
            MixedDrift::new(m.potential.clone(), m.kappa)?;
        }
        Ok(())
    }

    pub fn potential(&self) -> &PolynomialPotential {
        match self {
            DriftModel::Gradient(g) => &g.potential,
            DriftModel::Mixed(m) => &m.potential,
        }
    }

    /// Full state dimension: `n` for gradient drift, `2m` for mixed drift.
    pub fn state_dim(&self) -> usize {
        match self {
            DriftModel::Gradient(g) => g.potential.dim(),
            DriftModel::Mixed(m) => 2 * m.half_dim(),
        }
    }

    /// Dimension of the noise and control channel.
    pub fn noise_dim(&self) -> usize {
        match self {
            DriftModel::Gradient(g) => g.potential.dim(),
            DriftModel::Mixed(m) => m.half_dim(),
        }
    }

    /// First state coordinate touched by noise and control.
    pub fn noise_offset(&self) -> usize {
        self.state_dim() - self.noise_dim()
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, DriftModel::Mixed(_))
    }

    pub fn kappa(&self) -> Option<f64> {
        match self {
            DriftModel::Gradient(_) => None,
            DriftModel::Mixed(m) => Some(m.kappa),
        }
    }

    pub fn check_state(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn check_states(&self, states: &Array2<f64>) -> Result<()> {
        if states.ncols() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: states.ncols() });
        }
        Ok(())
    }

    /// Writes the drift at `x` into `out` without dimension checks.
    pub(crate) fn drift_into(&self, x: ArrayView1<f64>, out: &mut [f64]) {
        match self {
            DriftModel::Gradient(g) => {
                let grad = g.potential.gradient(x);
                for (o, gi) in out.iter_mut().zip(grad.iter()) {
                    *o = -gi;
                }
            }
            DriftModel::Mixed(m) => {
                let half = m.half_dim();
                let xi = x.slice(ndarray::s![..half]);
                let eta = x.slice(ndarray::s![half..]);
                let grad = m.potential.gradient(xi);
                for i in 0..half {
                    out[i] = eta[i];
                    out[half + i] = -grad[i] - m.kappa * eta[i];
                }
            }
        }
    }

    /// Potential used in the free-energy term of the proximal step:
    /// `V(x)` for gradient drift, `½‖η‖²` for mixed drift.
    pub fn prox_potential(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            DriftModel::Gradient(g) => g.potential.value(x),
            DriftModel::Mixed(m) => {
                let half = m.half_dim();
                0.5 * x.slice(ndarray::s![half..]).iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    /// Energy defining the stationary density: `V` (gradient) or `H` (mixed).
    pub fn energy(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            DriftModel::Gradient(g) => g.potential.value(x),
            DriftModel::Mixed(m) => {
                let half = m.half_dim();
                let kinetic = 0.5 * x.slice(ndarray::s![half..]).iter().map(|v| v * v).sum::<f64>();
                kinetic + m.potential.value(x.slice(ndarray::s![..half]))
            }
        }
    }

    /// Row-wise [`DriftModel::energy`].
    pub fn energy_rows(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_states(states)?;
        Ok(states.axis_iter(Axis(0)).map(|r| self.energy(r)).collect())
    }

    /// Negates the velocity block of every row (identity for gradient drift).
    pub fn flip_velocity(&self, states: &Array2<f64>) -> Array2<f64> {
        let mut out = states.clone();
        if let DriftModel::Mixed(m) = self {
            let half = m.half_dim();
            out.slice_mut(ndarray::s![.., half..]).mapv_inplace(|v| -v);
        }
        out
    }
}

/// `f(x)`: `-∇V(x)` for gradient drift, `(η, -∇V(ξ) - κη)` for mixed drift.
pub fn drift_eval(model: &DriftModel, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    model.check_state(x)?;
    let mut out = Array1::zeros(model.state_dim());
    model.drift_into(x, out.as_slice_mut().expect("fresh array is contiguous"));
    Ok(out)
}

/// `H(x) = ½‖η‖² + V(ξ)`; only defined for mixed drift.
pub fn hamiltonian(model: &DriftModel, x: ArrayView1<f64>) -> Result<f64> {
    match model {
        DriftModel::Gradient(_) => Err(Error::WrongDriftKind { expected: "mixed" }),
        DriftModel::Mixed(_) => {
            model.check_state(x)?;
            Ok(model.energy(x))
        }
    }
}

/// Unnormalized log stationary density `-V/ε` or `-H/ε`.
pub fn stationary_log_density(model: &DriftModel, x: ArrayView1<f64>, epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("must be finite and positive, got {epsilon}")));
    }
    model.check_state(x)?;
    Ok(-model.energy(x) / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn quadratic_gradient_drift() {
        let m = DriftModel::gradient(PolynomialPotential::quadratic(2));
        assert_eq!(drift_eval(&m, array![1.0, 2.0].view()).unwrap(), array![-1.0, -2.0]);
    }

    #[test]
    fn mixed_zero_potential() {
        let m = DriftModel::mixed(PolynomialPotential::zero(1), 0.5).unwrap();
        assert_eq!(drift_eval(&m, array![3.0, 2.0].view()).unwrap(), array![2.0, -1.0]);
    }

    #[test]
    fn double_well_has_critical_point_at_one() {
        let m = DriftModel::gradient(PolynomialPotential::double_well());
        let f = drift_eval(&m, array![1.0, 0.0].view()).unwrap();
        assert_eq!(f, array![0.0, 0.0]);
        // Symbolic gradient (x₁³ - x₁, x₂) at a generic point.
        let (x1, x2) = (0.7, -1.3);
        let f = drift_eval(&m, array![x1, x2].view()).unwrap();
        assert_relative_eq!(f[0], -(x1 * x1 * x1 - x1), epsilon = 1e-15);
        assert_relative_eq!(f[1], -x2, epsilon = 1e-15);
        assert_relative_eq!(
            PolynomialPotential::double_well().value(array![x1, x2].view()),
            0.25 * (1.0 + x1.powi(4)) + 0.5 * (x2 * x2 - x1 * x1),
            epsilon = 1e-15
        );
    }

    #[test]
    fn hamiltonian_values() {
        let free = DriftModel::mixed(PolynomialPotential::zero(2), 1.0).unwrap();
        assert_eq!(hamiltonian(&free, array![0.0, 0.0, 2.0, 0.0].view()).unwrap(), 2.0);
        let quartic = DriftModel::mixed(PolynomialPotential::quartic(), 0.5).unwrap();
        assert_eq!(hamiltonian(&quartic, array![1.0, 1.0].view()).unwrap(), 5.5);
        assert_relative_eq!(hamiltonian(&quartic, array![0.8, 0.0].view()).unwrap(), 5.0 * 0.8f64.powi(4), max_relative = 1e-15);
        let grad = DriftModel::gradient(PolynomialPotential::quadratic(1));
        assert!(matches!(hamiltonian(&grad, array![1.0].view()), Err(Error::WrongDriftKind { .. })));
    }

    #[test]
    fn stationary_log_density_values() {
        let zero = DriftModel::gradient(PolynomialPotential::zero(2));
        assert_eq!(stationary_log_density(&zero, array![3.0, -1.0].view(), 0.7).unwrap(), 0.0);
        let ou = DriftModel::gradient(PolynomialPotential::quadratic(2));
        assert_relative_eq!(stationary_log_density(&ou, array![1.0, 2.0].view(), 1.0).unwrap(), -2.5);
        let quartic = DriftModel::mixed(PolynomialPotential::quartic(), 0.5).unwrap();
        assert_relative_eq!(stationary_log_density(&quartic, array![1.0, 1.0].view(), 5.0).unwrap(), -1.1);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = DriftModel::gradient(PolynomialPotential::quadratic(2));
        assert!(matches!(drift_eval(&m, array![1.0].view()), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn serde_round_trip() {
        let m = DriftModel::mixed(PolynomialPotential::quartic(), 0.5).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"kind\":\"mixed\""));
        let back: DriftModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    fn random_potential() -> impl Strategy<Value = PolynomialPotential> {
        (1usize..=3).prop_flat_map(|dim| {
            prop::collection::vec((-2.0f64..2.0, prop::collection::vec(0u32..=4, dim)), 0..6).prop_map(move |terms| {
                PolynomialPotential::new(
                    dim,
                    terms.into_iter().map(|(c, e)| Monomial { coefficient: c, exponents: e }).collect(),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(p in random_potential(), seed in prop::collection::vec(-1.5f64..1.5, 3)) {
            let x = Array1::from(seed[..p.dim()].to_vec());
            let g = p.gradient(x.view());
            let h = 1e-5;
            for k in 0..p.dim() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (p.value(xp.view()) - p.value(xm.view())) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "fd {} vs exact {}", fd, g[k]);
            }
        }

        #[test]
        fn gradient_drift_is_conservative(
            p in random_potential(),
            center in prop::collection::vec(-1.0f64..1.0, 3),
            offsets in prop::collection::vec(prop::collection::vec(-0.05f64..0.05, 3), 3..7),
        ) {
            // Closed polygon through center + offsets; each edge integrated with
            // 8-point Gauss-Legendre, exact for the polynomial degrees used here.
            let dim = p.dim();
            let m = DriftModel::gradient(p);
            let verts: Vec<Array1<f64>> = offsets
                .iter()
                .map(|o| Array1::from_iter((0..dim).map(|i| center[i] + o[i])))
                .collect();
            let (nodes, weights) = gauss_legendre_8();
            let mut circulation = 0.0;
            for k in 0..verts.len() {
                let a = &verts[k];
                let b = &verts[(k + 1) % verts.len()];
                let d = b - a;
                for (t, w) in nodes.iter().zip(weights.iter()) {
                    let x = a + &(&d * *t);
                    let f = drift_eval(&m, x.view()).unwrap();
                    circulation += w * f.dot(&d);
                }
            }
            prop_assert!(circulation.abs() < 1e-6, "circulation {}", circulation);
        }

        #[test]
        fn mixed_position_drift_ignores_potential(p in random_potential(), kappa in 0.1f64..2.0, x in prop::collection::vec(-2.0f64..2.0, 6)) {
            let half = p.dim();
            let with_v = DriftModel::mixed(p.clone(), kappa).unwrap();
            let without = DriftModel::mixed(PolynomialPotential::zero(half), kappa).unwrap();
            let state = Array1::from(x[..2 * half].to_vec());
            let a = drift_eval(&with_v, state.view()).unwrap();
            let b = drift_eval(&without, state.view()).unwrap();
            for i in 0..half {
                prop_assert_eq!(a[i], b[i]);
                prop_assert_eq!(a[i], state[half + i]);
            }
        }
    }

    // Nodes on [0, 1].
    fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
        let x = [
            -0.960_289_856_497_536_3,
            -0.796_666_477_413_626_7,
            -0.525_532_409_916_329_0,
            -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8,
            0.525_532_409_916_329_0,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_3,
        ];
        let w = [
            0.101_228_536_290_376_3,
            0.222_381_034_453_374_5,
            0.313_706_645_877_887_3,
            0.362_683_783_378_362_0,
            0.362_683_783_378_362_0,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        (x.map(|v| 0.5 * (v + 1.0)), w.map(|v| 0.5 * v))
    }
}
