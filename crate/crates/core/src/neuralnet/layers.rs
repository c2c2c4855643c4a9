//! Layer primitives: forward passes with caches, and the matching
//! backward passes.
//!
//! Activations use channels-last layout: a sample is `(height, width,
//! channels)`. Convolutions are materialized as matrix products via
//! im2col — each output pixel's receptive field becomes one row of a patch
//! matrix, so the convolution is `patches @ weights` and both weight and
//! input gradients are matrix products too.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;

/// An activation flowing between layers: 3-d before the flatten, 1-d
/// after it.
#[derive(Debug, Clone)]
pub enum Value<F> {
    /// `(height, width, channels)`.
    Grid(Array3<F>),
    /// Flat vector.
    Flat(Array1<F>),
}

impl<F: Scalar> Value<F> {
    pub fn grid(self) -> Array3<F> {
        match self {
            Value::Grid(g) => g,
            Value::Flat(_) => panic!("expected a 3-d activation"),
        }
    }

    pub fn flat(self) -> Array1<F> {
        match self {
            Value::Flat(v) => v,
            Value::Grid(_) => panic!("expected a flat activation"),
        }
    }
}

/// Rows = output pixels (row-major over the output grid), columns = the
/// receptive field flattened as (ky, kx, channel).
pub fn im2col<F: Scalar>(input: &Array3<F>, kh: usize, kw: usize) -> Array2<F> {
    let (h, w, c) = input.dim();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Array2::zeros((oh * ow, kh * kw * c));
    let src = input.as_slice().expect("standard layout");
    for y in 0..oh {
        for x in 0..ow {
            let row = y * ow + x;
            let mut dst_off = 0;
            for ky in 0..kh {
                for kx in 0..kw {
                    let src_off = ((y + ky) * w + (x + kx)) * c;
                    let mut row_view = out.row_mut(row);
                    let dst = row_view.as_slice_mut().expect("standard layout");
                    dst[dst_off..dst_off + c].copy_from_slice(&src[src_off..src_off + c]);
                    dst_off += c;
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds patch-matrix gradients back onto
/// the input grid.
pub fn col2im<F: Scalar>(
    d_patches: &Array2<F>,
    input_dim: (usize, usize, usize),
    kh: usize,
    kw: usize,
) -> Array3<F> {
    let (h, w, c) = input_dim;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Array3::zeros((h, w, c));
    {
        let dst = out.as_slice_mut().expect("standard layout");
        for y in 0..oh {
            for x in 0..ow {
                let row = d_patches.row(y * ow + x);
                let src = row.as_slice().expect("standard layout");
                let mut src_off = 0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dst_off = ((y + ky) * w + (x + kx)) * c;
                        for i in 0..c {
                            dst[dst_off + i] = dst[dst_off + i] + src[src_off + i];
                        }
                        src_off += c;
                    }
                }
            }
        }
    }
    out
}

// --- Conv ----------------------------------------------------------------

/// Valid-padding stride-1 convolution with optional fused ReLU.
#[derive(Debug, Clone)]
pub struct ConvLayer<F> {
    /// `(kh * kw * c_in, c_out)`, rows in (ky, kx, channel) order to match
    /// [`im2col`].
    pub weights: Array2<F>,
    /// `(c_out,)`.
    pub bias: Array1<F>,
    /// Kernel height and width.
    pub kernel: (usize, usize),
    /// Input channels.
    pub c_in: usize,
    /// Output channels.
    pub c_out: usize,
    /// Fused ReLU after the affine map.
    pub relu: bool,
}

/// Cache from a conv forward pass.
pub struct ConvCache<F> {
    patches: Array2<F>,
    /// Post-activation output, flat `(n_pix, c_out)`; the ReLU mask is
    /// recovered as `out > 0`.
    out_flat: Array2<F>,
    input_dim: (usize, usize, usize),
}

impl<F: Scalar> ConvLayer<F> {
    pub fn output_dim(&self, input: (usize, usize, usize)) -> (usize, usize, usize) {
        (
            input.0 - self.kernel.0 + 1,
            input.1 - self.kernel.1 + 1,
            self.c_out,
        )
    }

    pub fn forward(&self, input: &Array3<F>, want_cache: bool) -> (Array3<F>, Option<ConvCache<F>>) {
        let in_dim = input.dim();
        let (oh, ow, _) = self.output_dim(in_dim);
        let patches = im2col(input, self.kernel.0, self.kernel.1);
        let mut out_flat = patches.dot(&self.weights);
        for mut row in out_flat.rows_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.iter()) {
                *v = *v + *b;
            }
        }
        if self.relu {
            out_flat.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        }
        let out = Array3::from_shape_vec(
            (oh, ow, self.c_out),
            out_flat.iter().copied().collect(),
        )
        .expect("conv output shape");
        let cache = want_cache.then(|| ConvCache {
            patches,
            out_flat,
            input_dim: in_dim,
        });
        (out, cache)
    }

    /// Returns `(d_input, d_weights, d_bias)`.
    pub fn backward(
        &self,
        cache: &ConvCache<F>,
        d_out: &Array3<F>,
    ) -> (Array3<F>, Array2<F>, Array1<F>) {
        let n_pix = cache.out_flat.nrows();
        let mut d_flat = Array2::from_shape_vec(
            (n_pix, self.c_out),
            d_out.iter().copied().collect(),
        )
        .expect("grad shape");
        if self.relu {
            // ReLU derivative from the cached post-activation values.
            ndarray::Zip::from(&mut d_flat)
                .and(&cache.out_flat)
                .for_each(|d, &o| {
                    if o <= F::zero() {
                        *d = F::zero();
                    }
                });
        }
        let d_weights = cache.patches.t().dot(&d_flat);
        let d_bias = d_flat.sum_axis(ndarray::Axis(0));
        let d_patches = d_flat.dot(&self.weights.t());
        let d_input = col2im(&d_patches, cache.input_dim, self.kernel.0, self.kernel.1);
        (d_input, d_weights, d_bias)
    }
}

// --- Max pooling -----------------------------------------------------------

/// 2x2 max pooling with stride 2; trailing rows/columns that do not fill a
/// window are dropped (floor division).
#[derive(Debug, Clone, Copy)]
pub struct PoolLayer;

/// Cache: flat input index of each window's maximum.
pub struct PoolCache {
    argmax: Vec<usize>,
    input_dim: (usize, usize, usize),
}

impl PoolLayer {
    pub fn output_dim(&self, input: (usize, usize, usize)) -> (usize, usize, usize) {
        (input.0 / 2, input.1 / 2, input.2)
    }

    pub fn forward<F: Scalar>(
        &self,
        input: &Array3<F>,
        want_cache: bool,
    ) -> (Array3<F>, Option<PoolCache>) {
        let in_dim = input.dim();
        let (oh, ow, c) = self.output_dim(in_dim);
        let src = input.as_slice().expect("standard layout");
        let (_, w, _) = in_dim;
        let mut out = Array3::zeros((oh, ow, c));
        let mut argmax = want_cache.then(|| Vec::with_capacity(oh * ow * c));
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let base = (2 * y * w + 2 * x) * c + ch;
                    let idx = [base, base + c, base + w * c, base + w * c + c];
                    let mut best = idx[0];
                    for &i in &idx[1..] {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out[(y, x, ch)] = src[best];
                    if let Some(a) = argmax.as_mut() {
                        a.push(best);
                    }
                }
            }
        }
        (out, argmax.map(|a| PoolCache { argmax: a, input_dim: in_dim }))
    }

    pub fn backward<F: Scalar>(&self, cache: &PoolCache, d_out: &Array3<F>) -> Array3<F> {
        let mut d_input = Array3::zeros(cache.input_dim);
        {
            let dst = d_input.as_slice_mut().expect("standard layout");
            for (&i, &g) in cache.argmax.iter().zip(d_out.iter()) {
                dst[i] = dst[i] + g;
            }
        }
        d_input
    }
}

// --- Dropout -----------------------------------------------------------------

/// Inverted dropout: in training, elements are zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)` so activations keep
/// their expectation; at inference it is the identity.
#[derive(Debug, Clone, Copy)]
pub struct DropoutLayer {
    pub rate: f64,
}

/// Cache: the multiplicative mask that was applied.
pub struct DropoutCache<F> {
    mask: Vec<F>,
}

impl DropoutLayer {
    /// Training-mode forward over any activation; the mask is drawn from
    /// `rng` element by element.
    pub fn forward_train<F: Scalar>(
        &self,
        value: &mut Value<F>,
        rng: &mut ChaCha8Rng,
    ) -> DropoutCache<F> {
        let keep = 1.0 - self.rate;
        let scale = F::from_f64(1.0 / keep);
        let mut apply = |v: &mut F| {
            let m = if rng.random::<f64>() < self.rate {
                F::zero()
            } else {
                scale
            };
            *v = *v * m;
            m
        };
        let mask = match value {
            Value::Grid(g) => g.iter_mut().map(&mut apply).collect(),
            Value::Flat(f) => f.iter_mut().map(&mut apply).collect(),
        };
        DropoutCache { mask }
    }

    pub fn backward<F: Scalar>(&self, cache: &DropoutCache<F>, d_out: &mut Value<F>) {
        match d_out {
            Value::Grid(g) => {
                for (d, &m) in g.iter_mut().zip(&cache.mask) {
                    *d = *d * m;
                }
            }
            Value::Flat(f) => {
                for (d, &m) in f.iter_mut().zip(&cache.mask) {
                    *d = *d * m;
                }
            }
        }
    }
}

// --- Dense ---------------------------------------------------------------------

/// Fully connected layer with optional fused ReLU.
#[derive(Debug, Clone)]
pub struct DenseLayer<F> {
    /// `(units_in, units_out)`.
    pub weights: Array2<F>,
    /// `(units_out,)`.
    pub bias: Array1<F>,
    pub relu: bool,
}

pub struct DenseCache<F> {
    input: Array1<F>,
    out: Array1<F>,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn forward(&self, input: &Array1<F>, want_cache: bool) -> (Array1<F>, Option<DenseCache<F>>) {
        let mut out = input.dot(&self.weights);
        for (v, b) in out.iter_mut().zip(self.bias.iter()) {
            *v = *v + *b;
        }
        if self.relu {
            out.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        }
        let cache = want_cache.then(|| DenseCache {
            input: input.clone(),
            out: out.clone(),
        });
        (out, cache)
    }

    /// Returns `(d_input, d_weights, d_bias)`.
    pub fn backward(
        &self,
        cache: &DenseCache<F>,
        d_out: &Array1<F>,
    ) -> (Array1<F>, Array2<F>, Array1<F>) {
        let mut d = d_out.clone();
        if self.relu {
            for (g, &o) in d.iter_mut().zip(cache.out.iter()) {
                if o <= F::zero() {
                    *g = F::zero();
                }
            }
        }
        let d_weights = {
            let x = cache.input.view().insert_axis(ndarray::Axis(1));
            let dy = d.view().insert_axis(ndarray::Axis(0));
            x.dot(&dy)
        };
        let d_bias = d.clone();
        let d_input = self.weights.dot(&d);
        (d_input, d_weights, d_bias)
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &Array1<F>) -> Array1<F> {
    let max = logits
        .iter()
        .copied()
        .fold(F::from_f64(f64::NEG_INFINITY), |m, v| if v > m { v } else { m });
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.iter().copied().fold(F::zero(), |a, b| a + b);
    out.mapv_inplace(|v| v / sum);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn im2col_lays_out_receptive_fields_row_major() {
        // 3x3 input, 1 channel, 2x2 kernel -> 4 patches of 4.
        let input = Array3::from_shape_vec(
            (3, 3, 1),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let p = im2col(&input, 2, 2);
        assert_eq!(p.nrows(), 4);
        assert_eq!(p.row(0).to_vec(), vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(p.row(1).to_vec(), vec![2.0, 3.0, 5.0, 6.0]);
        assert_eq!(p.row(2).to_vec(), vec![4.0, 5.0, 7.0, 8.0]);
        assert_eq!(p.row(3).to_vec(), vec![5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)> for random-ish data: the defining
        // property of the adjoint, checked exactly.
        let input = Array3::from_shape_fn((4, 5, 2), |(i, j, k)| {
            (i * 10 + j * 2 + k) as f64 * 0.5 - 3.0
        });
        let g = Array2::from_shape_fn((3 * 4, 2 * 2 * 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let lhs: f64 = im2col(&input, 2, 2)
            .iter()
            .zip(g.iter())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = input
            .iter()
            .zip(col2im(&g, (4, 5, 2), 2, 2).iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_matches_a_hand_computed_example() {
        // 1-channel 3x3 input, single 2x2 filter of ones, bias 0.5: each
        // output is the window sum plus 0.5.
        let input = Array3::from_shape_vec(
            (3, 3, 1),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let conv = ConvLayer {
            weights: Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
            bias: array![0.5],
            kernel: (2, 2),
            c_in: 1,
            c_out: 1,
            relu: false,
        };
        let (out, _) = conv.forward(&input, false);
        assert_eq!(out.dim(), (2, 2, 1));
        assert_eq!(out[(0, 0, 0)], 12.5);
        assert_eq!(out[(0, 1, 0)], 16.5);
        assert_eq!(out[(1, 0, 0)], 24.5);
        assert_eq!(out[(1, 1, 0)], 28.5);
    }

    #[test]
    fn relu_clamps_and_masks_gradients() {
        let input = Array3::from_shape_vec((1, 2, 1), vec![1.0, -1.0]).unwrap();
        let conv = ConvLayer {
            weights: Array2::from_shape_vec((1, 1), vec![2.0]).unwrap(),
            bias: array![0.0],
            kernel: (1, 1),
            c_in: 1,
            c_out: 1,
            relu: true,
        };
        let (out, cache) = conv.forward(&input, true);
        assert_eq!(out[(0, 0, 0)], 2.0);
        assert_eq!(out[(0, 1, 0)], 0.0);

        let d_out = Array3::from_shape_vec((1, 2, 1), vec![1.0, 1.0]).unwrap();
        let (d_in, d_w, _) = conv.backward(&cache.unwrap(), &d_out);
        // The clamped position contributes nothing.
        assert_eq!(d_in[(0, 0, 0)], 2.0);
        assert_eq!(d_in[(0, 1, 0)], 0.0);
        assert_eq!(d_w[(0, 0)], 1.0);
    }

    #[test]
    fn maxpool_takes_window_maxima_and_drops_remainders() {
        // 3x5 input pools to 1x2 (floor), keeping the max of each 2x2.
        let input = Array3::from_shape_fn((3, 5, 1), |(i, j, _)| (i * 5 + j) as f64);
        let (out, cache) = PoolLayer.forward(&input, true);
        assert_eq!(out.dim(), (1, 2, 1));
        assert_eq!(out[(0, 0, 0)], 6.0);
        assert_eq!(out[(0, 1, 0)], 8.0);

        let d_out = Array3::from_shape_vec((1, 2, 1), vec![1.0, 2.0]).unwrap();
        let d_in = PoolLayer.backward(&cache.unwrap(), &d_out);
        assert_eq!(d_in[(1, 1, 0)], 1.0);
        assert_eq!(d_in[(1, 3, 0)], 2.0);
        let total: f64 = d_in.iter().sum();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn dense_forward_and_backward_match_hand_computation() {
        let dense = DenseLayer {
            weights: array![[1.0, -1.0], [2.0, 0.5]],
            bias: array![0.1, -0.2],
            relu: false,
        };
        let x = array![3.0, -1.0];
        let (y, cache) = dense.forward(&x, true);
        assert_eq!(y, array![1.1, -3.7]);

        let dy = array![1.0, 2.0];
        let (dx, dw, db) = dense.backward(&cache.unwrap(), &dy);
        assert_eq!(dx, array![-1.0, 3.0]);
        assert_eq!(dw, array![[3.0, 6.0], [-1.0, -2.0]]);
        assert_eq!(db, dy);
    }

    #[test]
    fn softmax_is_a_probability_vector_and_shift_invariant() {
        let p = softmax(&array![1.0_f64, 2.0, 3.0]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        let q = softmax(&array![1001.0_f64, 1002.0, 1003.0]);
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_scales_survivors_and_masks_gradients() {
        use rand::SeedableRng;
        let layer = DropoutLayer { rate: 0.5 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut v = Value::Flat(Array1::from_elem(1000, 1.0_f64));
        let cache = layer.forward_train(&mut v, &mut rng);
        let flat = v.flat();
        let kept = flat.iter().filter(|&&x| x != 0.0).count();
        // Survivors are scaled to 2.0; expectation is preserved.
        assert!(flat.iter().all(|&x| x == 0.0 || x == 2.0));
        assert!((350..=650).contains(&kept), "kept {kept} of 1000");

        let mut g = Value::Flat(Array1::from_elem(1000, 1.0_f64));
        layer.backward(&cache, &mut g);
        let g = g.flat();
        for (gv, m) in g.iter().zip(&cache.mask) {
            assert_eq!(gv, m);
        }
    }
}
