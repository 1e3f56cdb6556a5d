//! The two-layer network `g_Θ(x) = M^{-1/2} Σ_r a_r σ(b_rᵀx + γ c_r)`, its
//! symmetric initialization, and the gradient feature map at the initial
//! point.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::numerics::{dot, sample_sphere, SeededRng};
use crate::{Error, Result};

/// Parameters `Θ = (a, B, c)` plus the scale constants.
///
/// `b` is stored unit-major (`M x d`, row `r` is `b_r`) so that per-unit
/// updates touch contiguous memory.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub a: Vec<f64>,
    pub b: Array2<f64>,
    pub c: Vec<f64>,
    pub gamma: f64,
    pub r_scale: f64,
}

const INIT_TOL: f64 = 1e-12;

impl NetworkParams {
    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// Length of the flattened parameter vector, `M (d + 2)`.
    pub fn num_params(&self) -> usize {
        self.width() * (self.dim() + 2)
    }

    /// Checks the symmetric-initialization invariants: `a_r = ±R` split at
    /// `M/2`, `b_r = b_{r+M/2}` with unit norm, `c = 0`.
    pub fn is_symmetric_init(&self) -> bool {
        let m = self.width();
        if m == 0 || m % 2 == 1 {
            return false;
        }
        let half = m / 2;
        let r = self.r_scale;
        (0..half).all(|i| {
            let bi = self.b.row(i);
            let bj = self.b.row(i + half);
            (self.a[i] - r).abs() <= INIT_TOL
                && (self.a[i + half] + r).abs() <= INIT_TOL
                && bi == bj
                && (bi.dot(&bi).sqrt() - 1.0).abs() <= INIT_TOL
        }) && self.c.iter().all(|&v| v == 0.0)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Flattened `[a; B (unit-major); c]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.a);
        v.extend(self.b.iter().copied());
        v.extend_from_slice(&self.c);
        v
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<NetworkParams> {
        let (m, d) = (self.width(), self.dim());
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        Ok(NetworkParams {
            a: flat[..m].to_vec(),
            b: Array2::from_shape_vec((m, d), flat[m..m + m * d].to_vec())
                .expect("shape checked above"),
            c: flat[m + m * d..].to_vec(),
            gamma: self.gamma,
            r_scale: self.r_scale,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ParamsDoc::from(self)).expect("params serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_value(value.clone())
            .map_err(|e| Error::Config(format!("network params: {e}")))?;
        doc.try_into()
    }
}

/// On-disk layout: `B` is `d x M` as in the math (`B[i][r]` is coordinate
/// `i` of unit `r`).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    #[serde(rename = "M")]
    width: usize,
    d: usize,
    #[serde(rename = "R")]
    r_scale: f64,
    gamma: f64,
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    c: Vec<f64>,
}

impl From<&NetworkParams> for ParamsDoc {
    fn from(p: &NetworkParams) -> Self {
        ParamsDoc {
            width: p.width(),
            d: p.dim(),
            r_scale: p.r_scale,
            gamma: p.gamma,
            a: p.a.clone(),
            b: p.b.columns().into_iter().map(|c| c.to_vec()).collect(),
            c: p.c.clone(),
        }
    }
}

impl TryFrom<ParamsDoc> for NetworkParams {
    type Error = Error;

    fn try_from(doc: ParamsDoc) -> Result<Self> {
        let (m, d) = (doc.width, doc.d);
        if doc.a.len() != m || doc.c.len() != m || doc.b.len() != d {
            return Err(Error::Config("network params: inconsistent M/d".into()));
        }
        let mut b = Array2::zeros((m, d));
        for (i, row) in doc.b.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Config(format!("network params: B row {i} has wrong length")));
            }
            for (r, &v) in row.iter().enumerate() {
                b[[r, i]] = v;
            }
        }
        Ok(NetworkParams {
            a: doc.a,
            b,
            c: doc.c,
            gamma: doc.gamma,
            r_scale: doc.r_scale,
        })
    }
}

/// Symmetric initialization: `a_r = R` for the first half and `-R` for the
/// second, `b_r = b_{r+M/2}` uniform on the sphere, `c = 0`. The resulting
/// network is identically zero.
pub fn symmetric_init(
    rng: &mut SeededRng,
    width: usize,
    d: usize,
    r_scale: f64,
    gamma: f64,
) -> Result<NetworkParams> {
    if width < 2 || width % 2 == 1 {
        return Err(Error::invalid(format!("width M={width} must be even and >= 2")));
    }
    if !(r_scale > 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid("R must be positive and gamma nonnegative"));
    }
    let half = width / 2;
    let dirs = sample_sphere(rng, d, half)?;
    let mut b = Array2::zeros((width, d));
    for r in 0..half {
        b.row_mut(r).assign(&dirs.row(r));
        b.row_mut(r + half).assign(&dirs.row(r));
    }
    let a = (0..width)
        .map(|r| if r < half { r_scale } else { -r_scale })
        .collect();
    Ok(NetworkParams {
        a,
        b,
        c: vec![0.0; width],
        gamma,
        r_scale,
    })
}

/// `g_Θ(x)`.
pub fn forward(params: &NetworkParams, act: &ActivationSpec, x: &[f64]) -> Result<f64> {
    params.check_point(x)?;
    Ok(forward_unchecked(params, act, x))
}

#[inline]
pub(crate) fn forward_unchecked(params: &NetworkParams, act: &ActivationSpec, x: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (r, br) in params.b.rows().into_iter().enumerate() {
        let z = dot(br.as_slice().expect("standard layout"), x) + params.gamma * params.c[r];
        sum += params.a[r] * act.value(z);
    }
    sum / (params.width() as f64).sqrt()
}

/// Gradient of `g_Θ(x)` with respect to the flattened parameters
/// `[a; B; c]`, at arbitrary `Θ`.
pub fn param_gradient(params: &NetworkParams, act: &ActivationSpec, x: &[f64]) -> Result<Vec<f64>> {
    params.check_point(x)?;
    let (m, d) = (params.width(), params.dim());
    let scale = 1.0 / (m as f64).sqrt();
    let mut out = vec![0.0; m * (d + 2)];
    let (head, rest) = out.split_at_mut(m);
    let (mid, tail) = rest.split_at_mut(m * d);
    for (r, br) in params.b.rows().into_iter().enumerate() {
        let z = dot(br.as_slice().expect("standard layout"), x) + params.gamma * params.c[r];
        let (s, sp) = act.value_and_grad(z);
        head[r] = s * scale;
        let coef = params.a[r] * sp * scale;
        for (o, xi) in mid[r * d..(r + 1) * d].iter_mut().zip(x) {
            *o = coef * xi;
        }
        tail[r] = coef * params.gamma;
    }
    Ok(out)
}

/// Feature vector in the layout `[output block (M); input block (M d,
/// unit-major); bias block (M)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dot(&self, other: &FeatureVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// The parameter gradient of `g_Θ` at a symmetric initialization. Inner
/// products of these vectors are the random-feature NTK `k_M` (including the
/// `R²` factor on the derivative term).
pub fn feature_map(
    init: &NetworkParams,
    act: &ActivationSpec,
    x: &[f64],
) -> Result<FeatureVector> {
    if !init.is_symmetric_init() {
        return Err(Error::invalid("feature_map requires a symmetric initialization"));
    }
    param_gradient(init, act, x).map(FeatureVector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
        sample_sphere(rng, d, 1).unwrap().row(0).to_vec()
    }

    #[test]
    fn symmetric_init_is_zero_function() {
        let mut rng = SeededRng::new(1, 0);
        let p = symmetric_init(&mut rng, 4, 2, 1.0, 0.5).unwrap();
        assert!(p.is_symmetric_init());
        assert_eq!(p.b.row(0), p.b.row(2));
        assert_eq!(p.b.row(1), p.b.row(3));
        let act = ActivationSpec::swish(3.0).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(forward(&p, &act, &x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn odd_width_rejected() {
        let mut rng = SeededRng::new(1, 0);
        assert!(symmetric_init(&mut rng, 3, 2, 1.0, 0.5).is_err());
    }

    #[test]
    fn forward_hand_value() {
        let p = NetworkParams {
            a: vec![1.0, 1.0],
            b: ndarray::array![[1.0, 0.0], [1.0, 0.0]],
            c: vec![0.0, 0.0],
            gamma: 0.5,
            r_scale: 1.0,
        };
        let act = ActivationSpec::relu();
        let v = forward(&p, &act, &[1.0, 0.0]).unwrap();
        assert!((v - 2.0f64.sqrt()).abs() < 1e-15);
        let mut p2 = p.clone();
        p2.a.iter_mut().for_each(|v| *v *= 2.0);
        assert!((forward(&p2, &act, &[1.0, 0.0]).unwrap() - 2.0 * v).abs() < 1e-15);
        assert!(forward(&p, &act, &[1.0]).is_err());
    }

    #[test]
    fn identical_units_scale_with_sqrt_width() {
        let act = ActivationSpec::tanh();
        let x = [0.3, -0.4, 0.5];
        let unit = 0.7 * act.value(0.2 * 0.3 + 0.9 * -0.4 + 0.1 * 0.5);
        for &m in &[1usize, 4, 16] {
            let p = NetworkParams {
                a: vec![0.7; m],
                b: Array2::from_shape_fn((m, 3), |(_, j)| [0.2, 0.9, 0.1][j]),
                c: vec![0.0; m],
                gamma: 1.0,
                r_scale: 1.0,
            };
            let v = forward(&p, &act, &x).unwrap();
            assert!((v - (m as f64).sqrt() * unit).abs() < 1e-13);
        }
    }

    #[test]
    fn feature_norm_and_bias_block() {
        let mut rng = SeededRng::new(2, 0);
        let p = symmetric_init(&mut rng, 8, 3, 1.0, 0.0).unwrap();
        let act = ActivationSpec::swish(2.0).unwrap();
        let x = random_unit(&mut rng, 3);
        let f = feature_map(&p, &act, &x).unwrap();
        assert!(f.dot(&f) >= 0.0);
        assert!(f.0[8 + 8 * 3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_map_is_gradient_of_forward() {
        let mut rng = SeededRng::new(3, 0);
        let act = ActivationSpec::swish(5.0).unwrap();
        let p = symmetric_init(&mut rng, 6, 3, 1.0, 0.7).unwrap();
        let x = random_unit(&mut rng, 3);
        let grad = feature_map(&p, &act, &x).unwrap().0;
        let flat = p.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            up[i] += h;
            let mut dn = flat.clone();
            dn[i] -= h;
            let fd = (forward(&p.from_flat(&up).unwrap(), &act, &x).unwrap()
                - forward(&p.from_flat(&dn).unwrap(), &act, &x).unwrap())
                / (2.0 * h);
            let denom = grad[i].abs().max(1e-3);
            assert!((fd - grad[i]).abs() / denom < 1e-5, "coord {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn relu_feature_norm_matches_sphere_moments() {
        // E[ReLU(b₁)²] = 1/(2d), E[1{b₁>0}] = 1/2 over the uniform sphere, so
        // ⟨φ(x),φ(x)⟩ → 1/(2d) + R²(1+γ²)/2 for unit x.
        let (d, m, gamma) = (3usize, 1usize << 12, 0.5);
        let act = ActivationSpec::relu();
        let mut rng = SeededRng::new(4, 0);
        let p = symmetric_init(&mut rng, m, d, 1.0, gamma).unwrap();
        let x = random_unit(&mut rng, d);
        let f = feature_map(&p, &act, &x).unwrap();
        let got = f.dot(&f);
        let expected = 1.0 / (2.0 * d as f64) + (1.0 + gamma * gamma) / 2.0;
        // Per-unit contributions; M/2 independent pairs.
        let vals: Vec<f64> = (0..m / 2)
            .map(|r| {
                let z = p.b.row(r).dot(&ndarray::ArrayView1::from(&x));
                z.max(0.0).powi(2) + (1.0 + gamma * gamma) * if z > 0.0 { 1.0 } else { 0.0 }
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let se = (var / vals.len() as f64).sqrt();
        assert!((mean - got).abs() < 1e-12);
        assert!((got - expected).abs() < 3.0 * se, "{got} vs {expected} (se {se})");

        // Independent oracle for the two sphere moments: 10^6 fresh directions.
        let mut orng = SeededRng::new(99, 1);
        let dirs = sample_sphere(&mut orng, d, 1_000_000).unwrap();
        let (mut m2, mut pos) = (0.0f64, 0.0f64);
        for row in dirs.rows() {
            let z = row[0];
            if z > 0.0 {
                m2 += z * z;
                pos += 1.0;
            }
        }
        assert!((m2 / 1e6 - 1.0 / (2.0 * d as f64)).abs() < 2e-3);
        assert!((pos / 1e6 - 0.5).abs() < 2e-3);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = SeededRng::new(5, 0);
        let p = symmetric_init(&mut rng, 4, 3, 0.5, 2.0).unwrap();
        let v = p.to_json();
        assert_eq!(v["B"].as_array().unwrap().len(), 3);
        let q = NetworkParams::from_json(&v).unwrap();
        assert_eq!(p, q);
    }
}
