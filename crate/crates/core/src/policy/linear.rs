//! Dense affine layers and their spectral-norm bookkeeping.

use serde::{Deserialize, Serialize};

/// Power-iteration stopping rule for [`max_singular_value`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    /// Relative change of the estimate below which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 500,
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `rows × cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Persistent left singular vector estimate (length `rows`).
    pub power_u: Vec<f64>,
    /// Persistent right singular vector estimate (length `cols`).
    pub power_v: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let v0 = 1.0 / (cols as f64).sqrt();
        let u0 = 1.0 / (rows as f64).sqrt();
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            power_u: vec![u0; rows],
            power_v: vec![v0; cols],
        }
    }

    pub fn from_weights(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weight.len(), rows * cols);
        assert_eq!(bias.len(), rows);
        let mut l = Self::zeros(rows, cols);
        l.weight = weight;
        l.bias = bias;
        l
    }

    #[inline]
    pub fn w(&self, r: usize, c: usize) -> f64 {
        self.weight[r * self.cols + c]
    }

    /// Single-sample forward pass.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Batched forward pass: `y (batch × rows) = x (batch × cols) · Wᵀ + b`.
    pub fn forward_batch(&self, x: &[f64], batch: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), batch * self.cols);
        debug_assert_eq!(y.len(), batch * self.rows);
        for row in y.chunks_mut(self.rows) {
            row.copy_from_slice(&self.bias);
        }
        unsafe {
            // SAFETY: slice lengths checked above; strides describe row-major layouts.
            matrixmultiply::dgemm(
                batch,
                self.cols,
                self.rows,
                1.0,
                x.as_ptr(),
                self.cols as isize,
                1,
                self.weight.as_ptr(),
                1,
                self.cols as isize,
                1.0,
                y.as_mut_ptr(),
                self.rows as isize,
                1,
            );
        }
    }

    /// Accumulates `dW += dyᵀ x`, `db += Σ dy` and, if requested, writes `dx = dy W`.
    pub fn backward_batch(
        &self,
        x: &[f64],
        dy: &[f64],
        batch: usize,
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        debug_assert_eq!(dy.len(), batch * self.rows);
        for row in dy.chunks(self.rows) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        unsafe {
            // SAFETY: dy is batch×rows, x is batch×cols, dw is rows×cols.
            matrixmultiply::dgemm(
                self.rows,
                batch,
                self.cols,
                1.0,
                dy.as_ptr(),
                1,
                self.rows as isize,
                x.as_ptr(),
                self.cols as isize,
                1,
                1.0,
                dw.as_mut_ptr(),
                self.cols as isize,
                1,
            );
        }
        if let Some(dx) = dx {
            debug_assert_eq!(dx.len(), batch * self.cols);
            unsafe {
                // SAFETY: dx is batch×cols.
                matrixmultiply::dgemm(
                    batch,
                    self.rows,
                    self.cols,
                    1.0,
                    dy.as_ptr(),
                    self.rows as isize,
                    1,
                    self.weight.as_ptr(),
                    self.cols as isize,
                    1,
                    0.0,
                    dx.as_mut_ptr(),
                    self.cols as isize,
                    1,
                );
            }
        }
    }

    /// Largest singular value, refining the persistent singular vectors.
    pub fn spectral_norm(&mut self, rule: PowerIteration) -> f64 {
        max_singular_value(
            &self.weight,
            self.rows,
            self.cols,
            &mut self.power_u,
            &mut self.power_v,
            rule,
        )
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Power iteration on `WᵀW`, warm-started from `(u, v)`.
///
/// Returns 0 for a zero matrix. `u` and `v` are left holding the current
/// singular vector estimates.
pub fn max_singular_value(
    w: &[f64],
    rows: usize,
    cols: usize,
    u: &mut [f64],
    v: &mut [f64],
    rule: PowerIteration,
) -> f64 {
    assert!(rows > 0 && cols > 0, "empty matrix");
    assert_eq!(w.len(), rows * cols);
    if w.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    if normalize(v) == 0.0 || v.iter().any(|x| !x.is_finite()) {
        v.iter_mut().for_each(|x| *x = 1.0 / (cols as f64).sqrt());
    }
    let mut sigma = 0.0;
    for it in 0..rule.max_iterations.max(1) {
        // u = W v
        for r in 0..rows {
            u[r] = w[r * cols..(r + 1) * cols]
                .iter()
                .zip(v.iter())
                .map(|(a, b)| a * b)
                .sum();
        }
        if normalize(u) == 0.0 {
            // v fell into the null space; restart from a different direction
            for (i, x) in v.iter_mut().enumerate() {
                *x = if i % 2 == 0 { 1.0 } else { -0.5 } + i as f64 * 1e-3;
            }
            normalize(v);
            continue;
        }
        // v = Wᵀ u
        v.iter_mut().for_each(|x| *x = 0.0);
        for r in 0..rows {
            let ur = u[r];
            for (x, a) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *x += a * ur;
            }
        }
        let next = normalize(v);
        let done = it > 0 && (next - sigma).abs() <= rule.tolerance * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

/// Rescales `W` so its largest singular value does not exceed `k_lip`.
///
/// Returns the singular value measured before projection. Biases are untouched.
pub fn spectral_project(layer: &mut Linear, k_lip: f64, rule: PowerIteration) -> f64 {
    assert!(k_lip > 0.0);
    let sigma = layer.spectral_norm(rule);
    if sigma > k_lip {
        let s = k_lip / sigma;
        layer.weight.iter_mut().for_each(|x| *x *= s);
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_matrix_norm() {
        let mut l = Linear::from_weights(2, 2, vec![2.0, 0.0, 0.0, 0.5], vec![0.0; 2]);
        assert_relative_eq!(
            l.spectral_norm(PowerIteration::default()),
            2.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let mut l = Linear::zeros(3, 4);
        assert_eq!(l.spectral_norm(PowerIteration::default()), 0.0);
    }

    #[test]
    fn projection_scales_only_when_needed() {
        let mut l = Linear::from_weights(2, 2, vec![2.0, 0.0, 0.0, 0.5], vec![0.3, -0.1]);
        spectral_project(&mut l, 1.5, PowerIteration::default());
        assert_relative_eq!(l.weight[0], 1.5, epsilon = 1e-10);
        assert_relative_eq!(l.weight[3], 0.375, epsilon = 1e-10);
        assert_eq!(l.bias, vec![0.3, -0.1]);

        let before = vec![1.0, 0.0, 0.0, 0.2];
        let mut l = Linear::from_weights(2, 2, before.clone(), vec![0.0; 2]);
        spectral_project(&mut l, 1.5, PowerIteration::default());
        assert_eq!(l.weight, before);
    }

    #[test]
    fn rotation_has_unit_norm() {
        let (s, c) = 0.7f64.sin_cos();
        let mut l = Linear::from_weights(2, 2, vec![c, -s, s, c], vec![0.0; 2]);
        assert_relative_eq!(
            l.spectral_norm(PowerIteration::default()),
            1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn batched_forward_matches_single_sample() {
        let l = Linear::from_weights(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0], vec![0.1, -0.2]);
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 0.25];
        let mut y = [0.0; 4];
        l.forward_batch(&x, 2, &mut y);
        let mut single = [0.0; 2];
        l.apply(&x[3..], &mut single);
        assert_relative_eq!(y[2], single[0]);
        assert_relative_eq!(y[3], single[1]);
        assert_relative_eq!(y[0], 0.1 + 1.0 - 4.0 + 1.5);
    }
}
