//! Weight-space and token-space symmetry actions with invariance meters.

use crate::error::{LabError, Result};
use crate::linalg::random::{gaussian, LabRng};
use crate::linalg::{singular_values, Matrix};
use crate::model::{mha, LayerWeights, ModelConfig};

/// Pass threshold for a gauge invariance error at condition number `cond`.
pub fn gauge_tolerance(cond: f64) -> f64 {
    1e-12 * (cond / 1e3).max(1.0)
}

/// Per-head invertible `d_k × d_k` matrices with cached inverses.
#[derive(Debug, Clone)]
pub struct GaugeSet {
    matrices: Vec<Matrix>,
    inverses: Vec<Matrix>,
    conditions: Vec<f64>,
}

impl GaugeSet {
    /// Inverts each `A_h` by LU and checks `‖A_h A_h⁻¹ − I‖_F ≤ 1e-8 √d_k`.
    pub fn new(matrices: Vec<Matrix>) -> Result<Self> {
        let mut inverses = Vec::with_capacity(matrices.len());
        let mut conditions = Vec::with_capacity(matrices.len());
        for (h, a) in matrices.iter().enumerate() {
            let named = |e: LabError| LabError::Singular(format!("gauge for head {h}: {e}"));
            let inv = a.inverse().map_err(named)?;
            let d = a.rows();
            let resid = a.matmul(&inv)?.try_sub(&Matrix::identity(d))?.frobenius_norm();
            if !(resid <= 1e-8 * (d as f64).sqrt()) {
                return Err(LabError::Singular(format!(
                    "gauge for head {h}: inverse residual {resid:e} exceeds bound"
                )));
            }
            let sv = singular_values(a)?;
            conditions.push(sv[0] / sv[sv.len() - 1]);
            inverses.push(inv);
        }
        Ok(GaugeSet {
            matrices,
            inverses,
            conditions,
        })
    }

    /// Identity gauge on `heads` heads of width `d_k`.
    pub fn identity(heads: usize, d_k: usize) -> Self {
        GaugeSet {
            matrices: vec![Matrix::identity(d_k); heads],
            inverses: vec![Matrix::identity(d_k); heads],
            conditions: vec![1.0; heads],
        }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrix(&self, head: usize) -> &Matrix {
        &self.matrices[head]
    }

    pub fn inverse(&self, head: usize) -> &Matrix {
        &self.inverses[head]
    }

    /// `σ_max / σ_min` of `A_h`.
    pub fn condition(&self, head: usize) -> f64 {
        self.conditions[head]
    }

    /// Inverse gauge set `{A_h⁻¹}`.
    pub fn inverted(&self) -> Result<Self> {
        GaugeSet::new(self.inverses.clone())
    }
}

/// `W_V → W_V A_h`, `W_O → A_h⁻¹ W_O` for each head in `heads`; other heads
/// are copied untouched.
pub fn apply_gauge(weights: &LayerWeights, gauges: &GaugeSet, heads: &[usize]) -> Result<LayerWeights> {
    if gauges.len() != weights.heads.len() {
        return Err(LabError::shape(
            "apply_gauge",
            format!("{} gauges for {} heads", gauges.len(), weights.heads.len()),
        ));
    }
    let mut out = weights.clone();
    for &h in heads {
        let head = out.heads.get_mut(h).ok_or(LabError::OutOfRange {
            index: h,
            len: weights.heads.len(),
        })?;
        head.w_v = head.w_v.matmul(gauges.matrix(h))?;
        head.w_o = gauges.inverse(h).matmul(&head.w_o)?;
    }
    Ok(out)
}

/// Moves head `h` to slot `pi[h]`.
pub fn apply_head_permutation(weights: &LayerWeights, pi: &[usize]) -> Result<LayerWeights> {
    let h = weights.heads.len();
    let mut seen = vec![false; h];
    if pi.len() != h || pi.iter().any(|&p| p >= h || std::mem::replace(&mut seen[p], true)) {
        return Err(LabError::InvalidArgument(format!(
            "{pi:?} is not a permutation of 0..{h}"
        )));
    }
    let mut slots: Vec<Option<_>> = vec![None; h];
    for (src, &dst) in pi.iter().enumerate() {
        slots[dst] = Some(weights.heads[src].clone());
    }
    let mut out = weights.clone();
    out.heads = slots.into_iter().map(|s| s.expect("bijection")).collect();
    Ok(out)
}

/// Row `i → scales_i · x_i + shifts_i · 1ᵀ`.
pub fn apply_row_rescale_shift(x: &Matrix, scales: &[f64], shifts: &[f64]) -> Result<Matrix> {
    if scales.len() != x.rows() || shifts.len() != x.rows() {
        return Err(LabError::shape(
            "apply_row_rescale_shift",
            format!("{} scales, {} shifts for {} rows", scales.len(), shifts.len(), x.rows()),
        ));
    }
    if let Some(i) = scales.iter().position(|s| !(*s > 0.0)) {
        return Err(LabError::InvalidArgument(format!(
            "scale {} at row {i} is not positive",
            scales[i]
        )));
    }
    let mut out = x.clone();
    for i in 0..x.rows() {
        out.row_mut(i).iter_mut().for_each(|v| *v = scales[i] * *v + shifts[i]);
    }
    Ok(out)
}

/// `‖f(transformed, X) − f(base, X)‖_F / ‖f(base, X)‖_F`.
pub fn invariance_error<W, F>(f: F, base: &W, transformed: &W, x: &Matrix) -> Result<f64>
where
    F: Fn(&W, &Matrix) -> Result<Matrix>,
{
    let reference = f(base, x)?;
    if reference.frobenius_norm() == 0.0 {
        return Err(LabError::Undefined("baseline output is zero".into()));
    }
    let other = f(transformed, x)?;
    if other.shape() != reference.shape() {
        return Err(LabError::shape("invariance_error", "outputs differ in shape"));
    }
    Ok(other.rel_error(&reference))
}

/// Replaces every row by the column-mean row.
pub fn uniform_average_fixed_point(x: &Matrix) -> Matrix {
    if x.rows() == 0 {
        return x.clone();
    }
    // Mean as an offset from the first row keeps equal-row input bit-exact.
    let first = x.row(0);
    let n = x.rows() as f64;
    let means: Vec<f64> = (0..x.cols())
        .map(|j| first[j] + x.row_iter().map(|r| r[j] - first[j]).sum::<f64>() / n)
        .collect();
    Matrix::from_fn(x.rows(), x.cols(), |_, j| means[j])
}

/// Two head contributions changed in opposite directions so that their sum
/// is untouched.
#[derive(Debug, Clone)]
pub struct KernelWitness {
    /// Perturbed head contributions.
    pub contributions: Vec<Matrix>,
    /// `‖Y′ − Y‖_F` for the perturbed head's value tensor.
    pub value_change: f64,
    /// `‖C′_a − C_a‖_F`, equal to the requested magnitude.
    pub head_change: f64,
    /// Relative change of `Σ_h` contributions.
    pub sum_change: f64,
}

/// Moves `Z = Y_z W_O^(a)` from head `b` to head `a`: `Y^(a) → Y^(a) + Y_z`
/// and `C_b → C_b − Z`. The pair `(Z, −Z)` lies in the kernel of the
/// summation map, so the MHA output cannot tell the two configurations apart.
/// `Y_z` is Gaussian, scaled so that `‖Z‖_F = magnitude`.
pub fn non_identifiability_witness(
    x: &Matrix,
    layer: &LayerWeights,
    cfg: &ModelConfig,
    (a, b): (usize, usize),
    magnitude: f64,
    rng: &mut LabRng,
) -> Result<KernelWitness> {
    let h = layer.heads.len();
    for i in [a, b] {
        if i >= h {
            return Err(LabError::OutOfRange { index: i, len: h });
        }
    }
    if a == b {
        return Err(LabError::InvalidArgument("witness needs two distinct heads".into()));
    }
    let base = mha(x, layer, cfg)?;
    let y_z = gaussian(rng, x.rows(), cfg.d_k, 1.0);
    let z = y_z.matmul(&layer.heads[a].w_o)?;
    let norm = z.frobenius_norm();
    if norm == 0.0 {
        return Err(LabError::Undefined(format!("W_O of head {a} is zero")));
    }
    let s = magnitude / norm;
    let (y_z, z) = (y_z.scale(s), z.scale(s));

    let mut contributions = base.contributions.clone();
    contributions[a] = base.heads[a].values.try_add(&y_z)?.matmul(&layer.heads[a].w_o)?;
    contributions[b] = contributions[b].try_sub(&z)?;
    let mut sum = Matrix::zeros(x.rows(), cfg.d_model);
    for c in &contributions {
        sum.add_assign(c)?;
    }
    Ok(KernelWitness {
        value_change: y_z.frobenius_norm(),
        head_change: contributions[a].try_sub(&base.contributions[a])?.frobenius_norm(),
        sum_change: sum.rel_error(&base.output),
        contributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{conditioned_from_rng, rng_stream};
    use crate::linalg::{numerical_rank, DEFAULT_REL_TOL};
    use crate::model::layer_norm;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            n: 10,
            d_model: 12,
            heads: 3,
            d_k: 4,
            d_ff: 16,
            layers: 1,
            ..ModelConfig::default()
        }
    }

    fn mha_out(w: &LayerWeights, x: &Matrix) -> Result<Matrix> {
        mha(x, w, &small_cfg()).map(|o| o.output)
    }

    #[test]
    fn identity_gauge_is_a_no_op() {
        let cfg = small_cfg();
        let w = LayerWeights::random(&cfg, &mut rng_stream(1, 0));
        let g = GaugeSet::identity(3, 4);
        assert_eq!(apply_gauge(&w, &g, &[0, 1, 2]).unwrap(), w);
    }

    #[test]
    fn gauge_round_trip_and_diag_scaling() {
        let cfg = small_cfg();
        let mut rng = rng_stream(2, 0);
        let w = LayerWeights::random(&cfg, &mut rng);
        let g = GaugeSet::new((0..3).map(|_| conditioned_from_rng(&mut rng, 4, 3.0).matrix).collect())
            .unwrap();
        let there = apply_gauge(&w, &g, &[0, 2]).unwrap();
        assert_eq!(there.heads[1], w.heads[1]);
        let back = apply_gauge(&there, &g.inverted().unwrap(), &[0, 2]).unwrap();
        for (a, b) in back.heads.iter().zip(&w.heads) {
            assert!(a.w_v.rel_error(&b.w_v) < 1e-10);
            assert!(a.w_o.rel_error(&b.w_o) < 1e-10);
        }

        let mut mats = vec![Matrix::identity(4); 3];
        mats[1] = Matrix::from_diag(&[2.0; 4]);
        let scaled = apply_gauge(&w, &GaugeSet::new(mats).unwrap(), &[1]).unwrap();
        assert_eq!(scaled.heads[1].w_v, w.heads[1].w_v.scale(2.0));
        assert_eq!(scaled.heads[1].w_o, w.heads[1].w_o.scale(0.5));

        let x = gaussian(&mut rng, 10, 12, 1.0);
        let err = invariance_error(mha_out, &w, &there, &x).unwrap();
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn singular_gauge_names_head() {
        let mut mats = vec![Matrix::identity(2); 3];
        mats[2] = Matrix::zeros(2, 2);
        let err = GaugeSet::new(mats).unwrap_err().to_string();
        assert!(err.contains("head 2"), "{err}");
    }

    #[test]
    fn permutations() {
        let cfg = small_cfg();
        let mut rng = rng_stream(3, 0);
        let w = LayerWeights::random(&cfg, &mut rng);
        assert_eq!(apply_head_permutation(&w, &[0, 1, 2]).unwrap(), w);
        let p = apply_head_permutation(&w, &[2, 0, 1]).unwrap();
        assert_eq!(p.heads[2], w.heads[0]);
        assert_eq!(p.heads[0], w.heads[1]);
        let x = gaussian(&mut rng, 10, 12, 1.0);
        assert!(invariance_error(mha_out, &w, &p, &x).unwrap() < 1e-13);
        let a = mha(&x, &w, &cfg).unwrap();
        let b = mha(&x, &p, &cfg).unwrap();
        assert_ne!(a.contributions, b.contributions);
        assert_eq!(b.contributions[2], a.contributions[0]);
        assert!(apply_head_permutation(&w, &[0, 0, 1]).is_err());
        assert!(apply_head_permutation(&w, &[0, 1]).is_err());
        assert!(apply_head_permutation(&w, &[0, 1, 3]).is_err());
    }

    #[test]
    fn row_rescale_shift() {
        let mut rng = rng_stream(4, 0);
        let x = gaussian(&mut rng, 5, 6, 1.0);
        assert_eq!(apply_row_rescale_shift(&x, &[1.0; 5], &[0.0; 5]).unwrap(), x);
        let scales = [0.5, 2.0, 3.0, 1.5, 7.0];
        let shifts = [1.0, -2.0, 0.0, 4.0, 0.3];
        let y = apply_row_rescale_shift(&x, &scales, &shifts).unwrap();
        let g = [1.0; 6];
        let b = [0.0; 6];
        let lx = layer_norm(&x, &g, &b, 0.0).unwrap();
        assert!(layer_norm(&y, &g, &b, 0.0).unwrap().rel_error(&lx) < 1e-10);
        let doubled = apply_row_rescale_shift(&x, &[2.0; 5], &[0.0; 5]).unwrap();
        assert_eq!(
            numerical_rank(&doubled, DEFAULT_REL_TOL).unwrap(),
            numerical_rank(&x, DEFAULT_REL_TOL).unwrap()
        );
        assert!(apply_row_rescale_shift(&x, &[1.0, 1.0, 0.0, 1.0, 1.0], &[0.0; 5]).is_err());
    }

    #[test]
    fn invariance_error_edges() {
        let cfg = small_cfg();
        let w = LayerWeights::random(&cfg, &mut rng_stream(5, 0));
        let x = gaussian(&mut rng_stream(5, 1), 10, 12, 1.0);
        assert_eq!(invariance_error(mha_out, &w, &w, &x).unwrap(), 0.0);
        let zero = LayerWeights::zeros(&cfg);
        assert!(invariance_error(mha_out, &zero, &w, &x).is_err());
    }

    #[test]
    fn uniform_average() {
        let x = gaussian(&mut rng_stream(6, 0), 7, 4, 1.0);
        let u = uniform_average_fixed_point(&x);
        assert!(numerical_rank(&u, DEFAULT_REL_TOL).unwrap() <= 1);
        assert_eq!(uniform_average_fixed_point(&u), u);
        let flat = Matrix::from_fn(3, 2, |_, j| j as f64 + 0.5);
        assert_eq!(uniform_average_fixed_point(&flat), flat);
    }

    #[test]
    fn witness_hides_in_the_sum() {
        let cfg = small_cfg();
        let mut rng = rng_stream(7, 0);
        let w = LayerWeights::random(&cfg, &mut rng);
        let x = gaussian(&mut rng, 10, 12, 1.0);
        let wit = non_identifiability_witness(&x, &w, &cfg, (0, 2), 0.5, &mut rng).unwrap();
        assert!((wit.head_change - 0.5).abs() < 1e-12);
        assert!(wit.value_change > 0.0);
        assert!(wit.sum_change < 1e-12, "{}", wit.sum_change);
        assert!(non_identifiability_witness(&x, &w, &cfg, (1, 1), 0.5, &mut rng).is_err());
        assert!(non_identifiability_witness(&x, &w, &cfg, (0, 3), 0.5, &mut rng).is_err());
    }
}
