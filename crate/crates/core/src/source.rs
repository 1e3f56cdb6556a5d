//! Target functions built from empirical eigenfunctions, and source-condition
//! norms `‖Σ^{-r} g‖`.
//!
//! Indices are 0-based here; configs use 1-based ranks.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::activation::ActivationSpec;
use crate::kernel::{eval_unchecked, Component, KernelMode, KernelSpec};
use crate::model::{feature_map, NetworkParams};
use crate::numerics::{dot, gegenbauer_eval, multiplicity};
use crate::spectrum::SpectrumEstimate;
use crate::{Error, Result};

fn check_resolvable(est: &SpectrumEstimate, i: usize) -> Result<()> {
    let vecs = est
        .eigenvectors
        .as_ref()
        .ok_or_else(|| Error::invalid("spectrum estimate carries no eigenvectors"))?;
    if i >= vecs.ncols() {
        return Err(Error::invalid(format!(
            "eigenfunction index {i} exceeds the {} stored eigenvectors",
            vecs.ncols()
        )));
    }
    let value = est.eigenvalues[i];
    let floor = est.floor();
    if !(value > floor) {
        return Err(Error::BelowFloor { index: i, value, floor });
    }
    Ok(())
}

fn kernel_column(kernel: &KernelSpec, points: &Array2<f64>, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != points.ncols() {
        return Err(Error::DimensionMismatch {
            expected: points.ncols(),
            found: x.len(),
        });
    }
    let first = points.row(0);
    crate::kernel::kernel_eval(kernel, x, first.as_slice().expect("standard layout"))?;
    Ok(points
        .rows()
        .into_iter()
        .map(|z| eval_unchecked(kernel, x, z.as_slice().expect("standard layout")))
        .collect())
}

/// Nyström extension `φ̂_i(x) = (1 / (λ_i √n)) Σ_j u_{ji} k(x, z_j)`, which
/// equals `√n u_{ji}` at the sample points.
pub fn nystrom_eigenfunction(est: &SpectrumEstimate, i: usize, x: &[f64]) -> Result<f64> {
    check_resolvable(est, i)?;
    let u = est.eigenvectors.as_ref().expect("checked");
    let col = kernel_column(&est.kernel, &est.sample_points, x)?;
    let s: f64 = col.iter().zip(u.column(i)).map(|(k, u)| k * u).sum();
    Ok(s / (est.eigenvalues[i] * (est.n as f64).sqrt()))
}

#[derive(Clone, Debug)]
enum TargetKind {
    Zero,
    /// `scale · P_k(⟨e, x⟩)`.
    Zonal {
        degree: usize,
        direction: Vec<f64>,
        scale: f64,
    },
    /// `Σ_j α_j k(x, z_j)`; for random-feature kernels also stored as
    /// feature-space weights `Σ_j α_j φ(z_j)`.
    Nystrom {
        points: Arc<Array2<f64>>,
        kernel: KernelSpec,
        dual: Vec<f64>,
        primal: Option<Arc<PrimalForm>>,
    },
}

/// Feature-space weights folded over mirrored unit pairs, which share their
/// pre-activation at a symmetric init. Evaluating costs one activation per
/// pair and no allocation.
#[derive(Clone, Debug)]
struct PrimalForm {
    b: Array2<f64>,
    c: Vec<f64>,
    gamma: f64,
    out_w: Vec<f64>,
    in_w: Array2<f64>,
    bias_w: Vec<f64>,
}

impl PrimalForm {
    /// Folds weights laid out as `[a (M); B (M d); c (M)]`.
    fn fold(init: &NetworkParams, weights: &[f64]) -> Self {
        let (m, d) = (init.width(), init.dim());
        let h = m / 2;
        let scale = 1.0 / (m as f64).sqrt();
        let (wa, rest) = weights.split_at(m);
        let (wb, wc) = rest.split_at(m * d);
        let mut in_w = Array2::zeros((h, d));
        for r in 0..h {
            let (a0, a1) = (init.a[r], init.a[r + h]);
            for j in 0..d {
                in_w[[r, j]] = (a0 * wb[r * d + j] + a1 * wb[(r + h) * d + j]) * scale;
            }
        }
        PrimalForm {
            b: init.b.slice(ndarray::s![..h, ..]).to_owned(),
            c: init.c[..h].to_vec(),
            gamma: init.gamma,
            out_w: (0..h).map(|r| (wa[r] + wa[r + h]) * scale).collect(),
            in_w,
            bias_w: (0..h)
                .map(|r| init.gamma * (init.a[r] * wc[r] + init.a[r + h] * wc[r + h]) * scale)
                .collect(),
        }
    }

    fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.out_w.iter_mut().for_each(|v| *v *= k);
        out.in_w.iter_mut().for_each(|v| *v *= k);
        out.bias_w.iter_mut().for_each(|v| *v *= k);
        out
    }

    fn eval(&self, act: &ActivationSpec, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, (br, wr)) in self.b.rows().into_iter().zip(self.in_w.rows()).enumerate() {
            let br = br.as_slice().expect("standard layout");
            let wr = wr.as_slice().expect("standard layout");
            let z = dot(br, x) + self.gamma * self.c[r];
            let (s, sp) = act.value_and_grad(z);
            acc += s * self.out_w[r] + sp * (dot(wr, x) + self.bias_w[r]);
        }
        acc
    }
}

#[derive(Clone, Debug)]
pub struct TargetFunction {
    kind: TargetKind,
    coefficients: BTreeMap<usize, f64>,
    d: usize,
    id: u64,
    label: String,
}

fn hash_words(label: &str, words: impl Iterator<Item = u64>) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for w in words {
        h.update(w.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

impl TargetFunction {
    pub fn zero(d: usize) -> Self {
        Self {
            kind: TargetKind::Zero,
            coefficients: BTreeMap::new(),
            d,
            id: hash_words("zero", std::iter::once(d as u64)),
            label: "zero".into(),
        }
    }

    /// `scale · P_k(⟨e, x⟩)` with `P_k` the dimension-`d` Legendre
    /// polynomial; `‖g‖² = scale² / N(d, k)`.
    pub fn zonal(degree: usize, direction: Vec<f64>, scale: f64) -> Result<Self> {
        let d = direction.len();
        if d < 2 {
            return Err(Error::invalid("zonal target needs dimension >= 2"));
        }
        let norm = dot(&direction, &direction).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("zonal direction must be a unit vector"));
        }
        let id = hash_words(
            "zonal",
            [degree as u64, scale.to_bits()]
                .into_iter()
                .chain(direction.iter().map(|v| v.to_bits())),
        );
        Ok(Self {
            kind: TargetKind::Zonal {
                degree,
                direction,
                scale,
            },
            coefficients: BTreeMap::new(),
            d,
            id,
            label: format!("zonal{degree}"),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Stable identifier (part of the sample-stream fingerprint).
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Coefficients `a_i = ⟨g, φ_i⟩` in the synthesizing basis.
    pub fn coefficients(&self) -> &BTreeMap<usize, f64> {
        &self.coefficients
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, TargetKind::Zero)
    }

    /// `‖g‖²_{L2}`: exact for zonal targets, `Σ a_i²` for synthesized ones.
    pub fn l2_norm_sq(&self) -> f64 {
        match &self.kind {
            TargetKind::Zero => 0.0,
            TargetKind::Zonal { degree, scale, .. } => scale * scale / multiplicity(self.d, *degree),
            TargetKind::Nystrom { .. } => self.coefficients.values().map(|a| a * a).sum(),
        }
    }

    /// `c · g`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coefficients.values_mut().for_each(|a| *a *= c);
        match &mut out.kind {
            TargetKind::Zero => return out,
            TargetKind::Zonal { scale, .. } => *scale *= c,
            TargetKind::Nystrom { dual, primal, .. } => {
                dual.iter_mut().for_each(|a| *a *= c);
                if let Some(p) = primal.as_mut() {
                    *p = Arc::new(p.scaled(c));
                }
            }
        }
        out.id = hash_words("scaled", [self.id, c.to_bits()].into_iter());
        out
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        match &self.kind {
            TargetKind::Zero => Ok(0.0),
            TargetKind::Zonal {
                degree,
                direction,
                scale,
            } => Ok(scale * gegenbauer_eval(*degree, self.d, dot(direction, x))),
            TargetKind::Nystrom {
                points,
                kernel,
                dual,
                primal,
            } => {
                if let Some(p) = primal {
                    Ok(p.eval(&kernel.activation, x))
                } else {
                    let col = kernel_column(kernel, points, x)?;
                    Ok(dot(&col, dual))
                }
            }
        }
    }

    /// Values at every row of `points`, in row order.
    pub fn eval_rows(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        (0..points.nrows())
            .into_par_iter()
            .map(|i| self.eval(points.row(i).as_slice().expect("standard layout")))
            .collect()
    }
}

/// Zeroes the feature blocks a kernel component does not use.
pub(crate) fn mask_features(phi: &mut [f64], width: usize, d: usize, component: Component) {
    match component {
        Component::Full => {}
        Component::OutputLayer => phi[width..].iter_mut().for_each(|v| *v = 0.0),
        Component::InputLayer => phi[..width].iter_mut().for_each(|v| *v = 0.0),
    }
    debug_assert_eq!(phi.len(), width * (d + 2));
}

/// `g(x) = Σ_m w_m φ̂_{i_m}(x)` over 0-based eigen-indices.
pub fn synthesize_target(
    est: &SpectrumEstimate,
    indices: &[usize],
    weights: &[f64],
) -> Result<TargetFunction> {
    if indices.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} indices but {} weights",
            indices.len(),
            weights.len()
        )));
    }
    if indices.is_empty() {
        return Ok(TargetFunction::zero(est.dim()));
    }
    let mut coefficients = BTreeMap::new();
    for (&i, &w) in indices.iter().zip(weights) {
        check_resolvable(est, i)?;
        *coefficients.entry(i).or_insert(0.0) += w;
    }
    let u = est.eigenvectors.as_ref().expect("checked");
    let sqrt_n = (est.n as f64).sqrt();
    let mut dual = vec![0.0; est.n];
    for (&i, &w) in &coefficients {
        let scale = w / (est.eigenvalues[i] * sqrt_n);
        for (a, u) in dual.iter_mut().zip(u.column(i)) {
            *a += scale * u;
        }
    }
    let primal = match &est.kernel.mode {
        KernelMode::RandomFeature(init) => {
            let (m, d) = (init.width(), init.dim());
            let mut weights = vec![0.0; init.num_params()];
            for (j, z) in est.sample_points.rows().into_iter().enumerate() {
                let mut phi = feature_map(init, &est.kernel.activation, z.as_slice().expect("standard layout"))?.0;
                mask_features(&mut phi, m, d, est.kernel.component);
                for (w, p) in weights.iter_mut().zip(&phi) {
                    *w += dual[j] * p;
                }
            }
            Some(Arc::new(PrimalForm::fold(init, &weights)))
        }
        _ => None,
    };
    let id = hash_words(
        &est.kernel.label(),
        dual.iter()
            .map(|v| v.to_bits())
            .chain(est.sample_points.iter().map(|v| v.to_bits())),
    );
    let label = format!("nystrom-{}", est.kernel.component.name());
    Ok(TargetFunction {
        kind: TargetKind::Nystrom {
            points: est.sample_points.clone(),
            kernel: est.kernel.clone(),
            dual,
            primal,
        },
        coefficients,
        d: est.dim(),
        id,
        label,
    })
}

/// Coefficients `a_i = (1/√n) Σ_j g(z_j) u_{ji}` of `target` in another
/// estimate's eigenbasis, one per stored eigenvector.
pub fn project_target(target: &TargetFunction, est: &SpectrumEstimate) -> Result<Vec<f64>> {
    let u = est
        .eigenvectors
        .as_ref()
        .ok_or_else(|| Error::invalid("spectrum estimate carries no eigenvectors"))?;
    let g = target.eval_rows(&est.sample_points)?;
    let sqrt_n = (est.n as f64).sqrt();
    Ok((0..u.ncols())
        .into_par_iter()
        .map(|i| {
            let col = u.column(i);
            g.iter().zip(col).map(|(g, u)| g * u).sum::<f64>() / sqrt_n
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SourceNormReport {
    /// `√(Σ a_i² λ_i^{-2r})` over indices above the floor.
    pub norm: f64,
    /// `Σ a_i²` over indices at or below the floor.
    pub excluded_mass: f64,
    pub excluded_count: usize,
    /// `Σ a_i²` over all indices.
    pub total_mass: f64,
    pub floor: f64,
}

impl SourceNormReport {
    /// True when the excluded part carries more than `rel_tol` of the
    /// target's mass, i.e. the target is not resolvable in this operator's
    /// range and its norm is effectively infinite.
    pub fn is_unbounded(&self, rel_tol: f64) -> bool {
        self.excluded_mass > rel_tol * self.total_mass
    }
}

/// Source-norm computation with the eigenvalue floor `1e-10 λ₁`; indices
/// at or below the floor are excluded and reported.
pub fn source_norm_report(coefficients: &[(usize, f64)], eigenvalues: &[f64], r: f64) -> Result<SourceNormReport> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("source exponent r={r} must lie in [0, 1]")));
    }
    let floor = crate::spectrum::EIGEN_FLOOR_REL * eigenvalues.first().copied().unwrap_or(0.0);
    let (mut sum, mut excluded, mut total, mut count) = (0.0, 0.0, 0.0, 0usize);
    for &(i, a) in coefficients {
        let lam = *eigenvalues
            .get(i)
            .ok_or_else(|| Error::invalid(format!("coefficient index {i} beyond spectrum length")))?;
        total += a * a;
        if lam > floor {
            sum += a * a * lam.powf(-2.0 * r);
        } else if a != 0.0 {
            excluded += a * a;
            count += 1;
        }
    }
    Ok(SourceNormReport {
        norm: sum.sqrt(),
        excluded_mass: excluded,
        excluded_count: count,
        total_mass: total,
        floor,
    })
}

/// `‖Σ^{-r} g‖ = √(Σ a_i² λ_i^{-2r})` with `λ_i` from the supplied spectrum.
/// A nonzero coefficient on a zero eigenvalue is rejected.
pub fn source_norm(target: &TargetFunction, spectrum_eigenvalues: &[f64], r: f64) -> Result<SourceNormReport> {
    let coeffs: Vec<(usize, f64)> = target.coefficients().iter().map(|(&i, &a)| (i, a)).collect();
    for &(i, a) in &coeffs {
        if a != 0.0 && spectrum_eigenvalues.get(i).is_some_and(|&l| l <= 0.0) {
            return Err(Error::BelowFloor {
                index: i,
                value: spectrum_eigenvalues[i],
                floor: 0.0,
            });
        }
    }
    source_norm_report(&coeffs, spectrum_eigenvalues, r)
}
