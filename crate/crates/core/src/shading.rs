//! Specular shading head: an SH environment prefiltered by roughness, feeding
//! a small feed-forward network that outputs the specular colour and the
//! attenuation `β` applied to subsurface transport.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::FEATURE_DIM;
use crate::sh;

pub const ENV_DEGREE: usize = 4;
pub const ENV_COEFFS: usize = sh::coeff_count(ENV_DEGREE);
pub const HEAD_INPUT: usize = 3 + FEATURE_DIM + 1;
pub const HEAD_HIDDEN: usize = 64;
pub const HEAD_OUTPUT: usize = 4;

/// Environment SH coefficients and head weights.
///
/// Weight matrices are row-major `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadingParams {
    pub env: Vec<[f64; 3]>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl ShadingParams {
    pub fn zeros() -> Self {
        Self {
            env: vec![[0.0; 3]; ENV_COEFFS],
            w1: vec![0.0; HEAD_HIDDEN * HEAD_INPUT],
            b1: vec![0.0; HEAD_HIDDEN],
            w2: vec![0.0; HEAD_HIDDEN * HEAD_HIDDEN],
            b2: vec![0.0; HEAD_HIDDEN],
            w3: vec![0.0; HEAD_OUTPUT * HEAD_HIDDEN],
            b3: vec![0.0; HEAD_OUTPUT],
        }
    }

    /// Glorot-uniform head weights, zero biases, and a grey environment.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = Self::zeros();
        let glorot = |fan_in: usize, fan_out: usize, w: &mut [f64], rng: &mut R| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = rng.gen_range(-limit..limit);
            }
        };
        glorot(HEAD_INPUT, HEAD_HIDDEN, &mut p.w1, rng);
        glorot(HEAD_HIDDEN, HEAD_HIDDEN, &mut p.w2, rng);
        glorot(HEAD_HIDDEN, HEAD_OUTPUT, &mut p.w3, rng);
        // Radiance 0.5 in every direction.
        p.env[0] = [0.5 * 2.0 * std::f64::consts::PI.sqrt(); 3];
        p
    }

    pub fn slices(&self) -> [&[f64]; 7] {
        [
            self.env.as_flattened(),
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w3,
            &self.b3,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.env.as_flattened_mut(),
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros()
    }

    pub fn validate(&self) -> Result<()> {
        let z = Self::zeros();
        for (a, b) in self.slices().iter().zip(z.slices()) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch("shading parameter block".into()));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite shading weight".into()));
            }
        }
        Ok(())
    }
}

fn is_unit(v: &Vector3<f64>) -> bool {
    (v.norm() - 1.0).abs() <= 1e-6
}

/// Mirror reflection of the direction toward the camera about the normal:
/// `r = 2 (n·v) n − v`.
pub fn reflect_dir(n: &Vector3<f64>, v: &Vector3<f64>) -> Result<Vector3<f64>> {
    if !is_unit(n) || !is_unit(v) {
        return Err(Error::InvalidParameter(format!(
            "reflect_dir needs unit vectors, got |n| = {}, |v| = {}",
            n.norm(),
            v.norm()
        )));
    }
    Ok(n * (2.0 * n.dot(v)) - v)
}

/// Per-band roughness prefilter `a_l(ρ) = exp(−l(l+1)ρ²)`.
#[inline]
pub fn band_attenuation(l: usize, roughness: f64) -> f64 {
    (-((l * (l + 1)) as f64) * roughness * roughness).exp()
}

/// Intermediate values of [`env_eval`] needed for its gradient.
#[derive(Clone, Debug)]
pub struct EnvEval {
    pub rgb: [f64; 3],
    pub clamped: [bool; 3],
    /// `a_l(ρ) Y_k(r)` per coefficient.
    pub weights: [f64; ENV_COEFFS],
}

/// Evaluates the prefiltered environment along `r`, clamped below at zero.
pub fn env_eval(env: &[[f64; 3]], r: &Vector3<f64>, roughness: f64) -> [f64; 3] {
    env_eval_full(env, r, roughness).rgb
}

pub fn env_eval_full(env: &[[f64; 3]], r: &Vector3<f64>, roughness: f64) -> EnvEval {
    let mut basis = [0.0; ENV_COEFFS];
    sh::eval_basis(ENV_DEGREE, [r.x, r.y, r.z], &mut basis);
    let mut weights = [0.0; ENV_COEFFS];
    let mut rgb = [0.0; 3];
    for k in 0..ENV_COEFFS {
        weights[k] = band_attenuation(sh::band_of(k), roughness) * basis[k];
        for c in 0..3 {
            rgb[c] += env[k][c] * weights[k];
        }
    }
    let mut clamped = [false; 3];
    for c in 0..3 {
        if rgb[c] < 0.0 {
            rgb[c] = 0.0;
            clamped[c] = true;
        }
    }
    EnvEval {
        rgb,
        clamped,
        weights,
    }
}

/// Gradients of [`env_eval`] given the upstream gradient on its output.
/// Accumulates into `d_env`; returns `(d_r, d_roughness)`.
pub fn env_backward(
    env: &[[f64; 3]],
    r: &Vector3<f64>,
    roughness: f64,
    eval: &EnvEval,
    d_rgb: [f64; 3],
    d_env: &mut [[f64; 3]],
) -> (Vector3<f64>, f64) {
    let d = [
        if eval.clamped[0] { 0.0 } else { d_rgb[0] },
        if eval.clamped[1] { 0.0 } else { d_rgb[1] },
        if eval.clamped[2] { 0.0 } else { d_rgb[2] },
    ];
    if d == [0.0; 3] {
        return (Vector3::zeros(), 0.0);
    }
    let mut basis = [0.0; ENV_COEFFS];
    let mut grads = [[0.0; 3]; ENV_COEFFS];
    sh::eval_basis_grad(ENV_DEGREE, [r.x, r.y, r.z], &mut basis, &mut grads);
    let mut d_r = Vector3::zeros();
    let mut d_rough = 0.0;
    for k in 0..ENV_COEFFS {
        let l = sh::band_of(k);
        let a = band_attenuation(l, roughness);
        let proj: f64 = (0..3).map(|c| d[c] * env[k][c]).sum();
        for c in 0..3 {
            d_env[k][c] += d[c] * eval.weights[k];
        }
        d_r += Vector3::from(grads[k]) * (a * proj);
        d_rough += -2.0 * (l * (l + 1)) as f64 * roughness * a * basis[k] * proj;
    }
    (d_r, d_rough)
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Input vector of the head: environment radiance, material feature, `n·v`.
pub fn head_input(env_rgb: [f64; 3], feature: &[f64; FEATURE_DIM], n_dot_v: f64) -> [f64; HEAD_INPUT] {
    let mut x = [0.0; HEAD_INPUT];
    x[..3].copy_from_slice(&env_rgb);
    x[3..3 + FEATURE_DIM].copy_from_slice(feature);
    x[HEAD_INPUT - 1] = n_dot_v;
    x
}

/// Evaluates the head for one pixel: `(C_spec, β)`.
pub fn spec_head(
    params: &ShadingParams,
    env_rgb: [f64; 3],
    feature: &[f64; FEATURE_DIM],
    n_dot_v: f64,
) -> Result<([f64; 3], f64)> {
    let x = head_input(env_rgb, feature, n_dot_v);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite shading input".into()));
    }
    let out = head_forward_single(params, &x).output;
    Ok(([out[0], out[1], out[2]], out[3]))
}

/// Activations of one head evaluation.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    pub h1: [f64; HEAD_HIDDEN],
    pub h2: [f64; HEAD_HIDDEN],
    /// Logistic outputs.
    pub output: [f64; HEAD_OUTPUT],
}

pub fn head_forward_single(params: &ShadingParams, x: &[f64; HEAD_INPUT]) -> HeadTrace {
    let mut h1 = [0.0; HEAD_HIDDEN];
    for j in 0..HEAD_HIDDEN {
        let row = &params.w1[j * HEAD_INPUT..(j + 1) * HEAD_INPUT];
        let s: f64 = params.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        h1[j] = s.max(0.0);
    }
    let mut h2 = [0.0; HEAD_HIDDEN];
    for j in 0..HEAD_HIDDEN {
        let row = &params.w2[j * HEAD_HIDDEN..(j + 1) * HEAD_HIDDEN];
        let s: f64 = params.b2[j] + row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>();
        h2[j] = s.max(0.0);
    }
    let mut output = [0.0; HEAD_OUTPUT];
    for j in 0..HEAD_OUTPUT {
        let row = &params.w3[j * HEAD_HIDDEN..(j + 1) * HEAD_HIDDEN];
        let s: f64 = params.b3[j] + row.iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>();
        output[j] = logistic(s);
    }
    HeadTrace { h1, h2, output }
}

/// Backward of one head evaluation; accumulates weight gradients into `grad`
/// and returns the gradient on the input vector.
pub fn head_backward_single(
    params: &ShadingParams,
    x: &[f64; HEAD_INPUT],
    trace: &HeadTrace,
    d_out: &[f64; HEAD_OUTPUT],
    grad: &mut ShadingParams,
) -> [f64; HEAD_INPUT] {
    let mut d_z3 = [0.0; HEAD_OUTPUT];
    for j in 0..HEAD_OUTPUT {
        let o = trace.output[j];
        d_z3[j] = d_out[j] * o * (1.0 - o);
    }
    let mut d_h2 = [0.0; HEAD_HIDDEN];
    for j in 0..HEAD_OUTPUT {
        grad.b3[j] += d_z3[j];
        for i in 0..HEAD_HIDDEN {
            grad.w3[j * HEAD_HIDDEN + i] += d_z3[j] * trace.h2[i];
            d_h2[i] += d_z3[j] * params.w3[j * HEAD_HIDDEN + i];
        }
    }
    let mut d_h1 = [0.0; HEAD_HIDDEN];
    for j in 0..HEAD_HIDDEN {
        let dz = if trace.h2[j] > 0.0 { d_h2[j] } else { 0.0 };
        grad.b2[j] += dz;
        for i in 0..HEAD_HIDDEN {
            grad.w2[j * HEAD_HIDDEN + i] += dz * trace.h1[i];
            d_h1[i] += dz * params.w2[j * HEAD_HIDDEN + i];
        }
    }
    let mut d_x = [0.0; HEAD_INPUT];
    for j in 0..HEAD_HIDDEN {
        let dz = if trace.h1[j] > 0.0 { d_h1[j] } else { 0.0 };
        grad.b1[j] += dz;
        for i in 0..HEAD_INPUT {
            grad.w1[j * HEAD_INPUT + i] += dz * x[i];
            d_x[i] += dz * params.w1[j * HEAD_INPUT + i];
        }
    }
    d_x
}

/// Batched head activations for many pixels (one row per pixel).
#[derive(Clone, Debug)]
pub struct HeadBatch {
    pub x: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub output: DMatrix<f64>,
}

fn weight_matrix(w: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, w)
}

/// Runs the head on every row of `x` (`n × HEAD_INPUT`).
pub fn head_forward_batch(params: &ShadingParams, x: DMatrix<f64>) -> HeadBatch {
    let w1 = weight_matrix(&params.w1, HEAD_HIDDEN, HEAD_INPUT);
    let w2 = weight_matrix(&params.w2, HEAD_HIDDEN, HEAD_HIDDEN);
    let w3 = weight_matrix(&params.w3, HEAD_OUTPUT, HEAD_HIDDEN);
    let mut h1 = &x * w1.transpose();
    for (j, mut col) in h1.column_iter_mut().enumerate() {
        col.apply(|v| *v = (*v + params.b1[j]).max(0.0));
    }
    let mut h2 = &h1 * w2.transpose();
    for (j, mut col) in h2.column_iter_mut().enumerate() {
        col.apply(|v| *v = (*v + params.b2[j]).max(0.0));
    }
    let mut output = &h2 * w3.transpose();
    for (j, mut col) in output.column_iter_mut().enumerate() {
        col.apply(|v| *v = logistic(*v + params.b3[j]));
    }
    HeadBatch { x, h1, h2, output }
}

/// Batched backward; accumulates weight gradients and returns `dL/dx` rows.
pub fn head_backward_batch(
    params: &ShadingParams,
    batch: &HeadBatch,
    d_out: &DMatrix<f64>,
    grad: &mut ShadingParams,
) -> DMatrix<f64> {
    let w1 = weight_matrix(&params.w1, HEAD_HIDDEN, HEAD_INPUT);
    let w2 = weight_matrix(&params.w2, HEAD_HIDDEN, HEAD_HIDDEN);
    let w3 = weight_matrix(&params.w3, HEAD_OUTPUT, HEAD_HIDDEN);
    let d_z3 = d_out.zip_map(&batch.output, |d, o| d * o * (1.0 - o));
    accumulate_layer(&d_z3, &batch.h2, &mut grad.w3, &mut grad.b3);
    let d_z2 = (&d_z3 * &w3).zip_map(&batch.h2, |d, h| if h > 0.0 { d } else { 0.0 });
    accumulate_layer(&d_z2, &batch.h1, &mut grad.w2, &mut grad.b2);
    let d_z1 = (&d_z2 * &w2).zip_map(&batch.h1, |d, h| if h > 0.0 { d } else { 0.0 });
    accumulate_layer(&d_z1, &batch.x, &mut grad.w1, &mut grad.b1);
    &d_z1 * &w1
}

fn accumulate_layer(d_z: &DMatrix<f64>, input: &DMatrix<f64>, w: &mut [f64], b: &mut [f64]) {
    let dw = d_z.transpose() * input;
    let (rows, cols) = dw.shape();
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] += dw[(r, c)];
        }
    }
    for (j, col) in d_z.column_iter().enumerate() {
        b[j] += col.sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn reflect_examples() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(reflect_dir(&n, &n).unwrap(), n);
        let v = Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        let r = reflect_dir(&n, &v).unwrap();
        assert!((r - Vector3::new(-1.0, 0.0, 1.0) / 2f64.sqrt()).norm() < 1e-15);
        assert!((n.dot(&r) - n.dot(&v)).abs() < 1e-15);
        assert!(reflect_dir(&(n * 2.0), &v).is_err());
    }

    #[test]
    fn env_dc_only_gives_unit_radiance() {
        let mut env = vec![[0.0; 3]; ENV_COEFFS];
        env[0] = [2.0 * std::f64::consts::PI.sqrt(); 3];
        for r in [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.6, -0.8, 0.0)] {
            for rho in [0.0, 0.5, 1.0] {
                let rgb = env_eval(&env, &r, rho);
                for c in rgb {
                    assert!((c - 1.0).abs() < 1e-12);
                }
            }
        }
        assert_eq!(band_attenuation(0, 0.7), 1.0);
        assert!((band_attenuation(1, 1.0) - 0.135_335_283_236_612_7).abs() < 1e-12);
    }

    #[test]
    fn zero_head_outputs_half() {
        let p = ShadingParams::zeros();
        let (c, b) = spec_head(&p, [0.3, 0.2, 0.1], &[0.1; FEATURE_DIM], 0.7).unwrap();
        assert_eq!(c, [0.5; 3]);
        assert_eq!(b, 0.5);
    }

    #[test]
    fn head_is_deterministic() {
        let p = ShadingParams::init(&mut rng());
        let a = spec_head(&p, [0.3, 0.2, 0.1], &[0.1; FEATURE_DIM], 0.7).unwrap();
        let b = spec_head(&p, [0.3, 0.2, 0.1], &[0.1; FEATURE_DIM], 0.7).unwrap();
        assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert!(spec_head(&p, [f64::NAN, 0.0, 0.0], &[0.0; FEATURE_DIM], 0.5).is_err());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut r = rng();
        let mut p = ShadingParams::init(&mut r);
        for b in p.b1.iter_mut().chain(p.b2.iter_mut()) {
            *b = r.gen_range(-0.1..0.1);
        }
        let x: [f64; HEAD_INPUT] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let d_out = [0.3, -0.7, 0.2, 1.1];
        let loss = |p: &ShadingParams, x: &[f64; HEAD_INPUT]| -> f64 {
            let t = head_forward_single(p, x);
            t.output.iter().zip(&d_out).map(|(o, d)| o * d).sum()
        };
        let trace = head_forward_single(&p, &x);
        let mut g = ShadingParams::zeros();
        let dx = head_backward_single(&p, &x, &trace, &d_out, &mut g);
        let h = 1e-6;
        for i in 0..HEAD_INPUT {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() <= 1e-4 * fd.abs().max(1e-6), "x[{i}]");
        }
        let gs: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
        for block in 1..7 {
            for i in (0..gs[block].len()).step_by(7) {
                let mut pp = p.clone();
                pp.slices_mut()[block][i] += h;
                let mut pm = p.clone();
                pm.slices_mut()[block][i] -= h;
                let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
                let a = gs[block][i];
                assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-6), "block {block} idx {i}: {fd} vs {a}");
            }
        }
    }

    #[test]
    fn batched_head_agrees_with_single() {
        let mut r = rng();
        let p = ShadingParams::init(&mut r);
        let rows: Vec<[f64; HEAD_INPUT]> = (0..5)
            .map(|_| std::array::from_fn(|_| r.gen_range(-1.0..1.0)))
            .collect();
        let x = DMatrix::from_fn(5, HEAD_INPUT, |i, j| rows[i][j]);
        let batch = head_forward_batch(&p, x);
        let d_out = DMatrix::from_fn(5, HEAD_OUTPUT, |i, j| (i + 2 * j) as f64 * 0.1 - 0.3);
        let mut gb = ShadingParams::zeros();
        let dx = head_backward_batch(&p, &batch, &d_out, &mut gb);
        let mut gs = ShadingParams::zeros();
        for (i, row) in rows.iter().enumerate() {
            let t = head_forward_single(&p, row);
            for j in 0..HEAD_OUTPUT {
                assert!((t.output[j] - batch.output[(i, j)]).abs() < 1e-14);
            }
            let d: [f64; HEAD_OUTPUT] = std::array::from_fn(|j| d_out[(i, j)]);
            let dxi = head_backward_single(&p, row, &t, &d, &mut gs);
            for j in 0..HEAD_INPUT {
                assert!((dxi[j] - dx[(i, j)]).abs() < 1e-13);
            }
        }
        for (a, b) in gb.slices().iter().zip(gs.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn env_is_linear_in_coefficients() {
        let mut r = rng();
        let e1: Vec<[f64; 3]> = (0..ENV_COEFFS).map(|_| std::array::from_fn(|_| r.gen_range(0.0..1.0))).collect();
        let e2: Vec<[f64; 3]> = (0..ENV_COEFFS).map(|_| std::array::from_fn(|_| r.gen_range(0.0..1.0))).collect();
        // Keep coefficients positive-dominant so the zero clamp stays inactive.
        let mut e1 = e1;
        let mut e2 = e2;
        e1[0] = [20.0; 3];
        e2[0] = [20.0; 3];
        let (a, b) = (0.7, 1.3);
        let mix: Vec<[f64; 3]> = e1
            .iter()
            .zip(&e2)
            .map(|(x, y)| std::array::from_fn(|c| a * x[c] + b * y[c]))
            .collect();
        let dir = Vector3::new(0.2, 0.5, -0.3).normalize();
        let lhs = env_eval(&mix, &dir, 0.4);
        let r1 = env_eval(&e1, &dir, 0.4);
        let r2 = env_eval(&e2, &dir, 0.4);
        for c in 0..3 {
            assert!((lhs[c] - (a * r1[c] + b * r2[c])).abs() < 1e-10);
        }
    }

    #[test]
    fn env_gradients_match_finite_differences() {
        let mut r = rng();
        let mut env: Vec<[f64; 3]> = (0..ENV_COEFFS).map(|_| std::array::from_fn(|_| r.gen_range(-0.5..0.5))).collect();
        env[0] = [3.0; 3];
        let dir = Vector3::new(0.3, -0.4, 0.5).normalize();
        let rho = 0.35;
        let d_rgb = [0.4, -0.2, 0.9];
        let loss = |env: &[[f64; 3]], dir: &Vector3<f64>, rho: f64| -> f64 {
            let v = env_eval(env, dir, rho);
            (0..3).map(|c| v[c] * d_rgb[c]).sum()
        };
        let eval = env_eval_full(&env, &dir, rho);
        let mut d_env = vec![[0.0; 3]; ENV_COEFFS];
        let (d_r, d_rho) = env_backward(&env, &dir, rho, &eval, d_rgb, &mut d_env);
        let h = 1e-6;
        let fd = (loss(&env, &dir, rho + h) - loss(&env, &dir, rho - h)) / (2.0 * h);
        assert!((fd - d_rho).abs() < 1e-8);
        for k in 0..3 {
            let mut dp = dir;
            let mut dm = dir;
            dp[k] += h;
            dm[k] -= h;
            let fd = (loss(&env, &dp, rho) - loss(&env, &dm, rho)) / (2.0 * h);
            assert!((fd - d_r[k]).abs() < 1e-7);
        }
        let mut ep = env.clone();
        ep[7][1] += h;
        let mut em = env.clone();
        em[7][1] -= h;
        let fd = (loss(&ep, &dir, rho) - loss(&em, &dir, rho)) / (2.0 * h);
        assert!((fd - d_env[7][1]).abs() < 1e-8);
    }
}
