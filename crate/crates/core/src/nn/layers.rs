//! Forward and backward kernels for the layer types the tower network uses.
//!
//! Kernels are plain functions over [`Tensor`]s. The recording [`Tape`](super::Tape)
//! calls into them; they are also usable directly for one-off evaluation.

use super::{NnError, Tensor};

/// Output side and leading pad for "same"-style padding: `out = ceil(input / stride)`.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, needed / 2)
}

/// Spatial side after `layers` stride-`stride` convolutions with same padding.
pub fn conv_chain_side(input: usize, layers: usize, stride: usize) -> usize {
    (0..layers).fold(input, |side, _| side.div_ceil(stride))
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
    pad_top: usize,
    pad_left: usize,
}

fn conv_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<ConvGeometry, NnError> {
    let &[c_in, h, w] = input.shape() else {
        return Err(NnError::Shape(format!("conv input must be [C,H,W], got {:?}", input.shape())));
    };
    let &[c_out, wc_in, k, k2] = weights.shape() else {
        return Err(NnError::Shape(format!(
            "conv weights must be [C_out,C_in,k,k], got {:?}",
            weights.shape()
        )));
    };
    if k != k2 {
        return Err(NnError::Shape(format!("non-square kernel {k}x{k2}")));
    }
    if wc_in != c_in {
        return Err(NnError::Config(format!(
            "conv weights expect {wc_in} input channels, input has {c_in}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(NnError::Shape(format!("conv bias must be [{c_out}], got {:?}", bias.shape())));
    }
    if stride == 0 {
        return Err(NnError::Config("conv stride must be positive".into()));
    }
    let (h_out, pad_top) = same_padding(h, k, stride);
    let (w_out, pad_left) = same_padding(w, k, stride);
    Ok(ConvGeometry { c_in, h, w, c_out, k, h_out, w_out, pad_top, pad_left })
}

/// 2-D cross-correlation with same-style zero padding.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor, NnError> {
    let g = conv_geometry(input, weights, bias, stride)?;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; g.c_out * g.h_out * g.w_out];
    for co in 0..g.c_out {
        let plane = &mut out[co * g.h_out * g.w_out..(co + 1) * g.h_out * g.w_out];
        plane.iter_mut().for_each(|v| *v = bias.data()[co]);
        for ci in 0..g.c_in {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let kern = &wt[(co * g.c_in + ci) * g.k * g.k..(co * g.c_in + ci + 1) * g.k * g.k];
            for oy in 0..g.h_out {
                for ky in 0..g.k {
                    let iy = (oy * stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = &xin[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let krow = &kern[ky * g.k..(ky + 1) * g.k];
                    let orow = &mut plane[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, o) in orow.iter_mut().enumerate() {
                        let base = (ox * stride) as isize - g.pad_left as isize;
                        for (kx, &kv) in krow.iter().enumerate() {
                            let ix = base + kx as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o += kv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Accumulates weight/bias gradients and returns the gradient w.r.t. `input`.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Result<Tensor, NnError> {
    let g = conv_geometry(input, weights, grad_bias, stride)?;
    if grad_weights.shape() != weights.shape() {
        return Err(NnError::Shape("conv weight gradient slot has the wrong shape".into()));
    }
    if grad_out.shape() != [g.c_out, g.h_out, g.w_out] {
        return Err(NnError::Shape(format!(
            "conv upstream gradient {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            g.c_out,
            g.h_out,
            g.w_out
        )));
    }
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();
    let gw = grad_weights.data_mut();
    let mut gx = vec![0.0; x.len()];
    for co in 0..g.c_out {
        let plane = &go[co * g.h_out * g.w_out..(co + 1) * g.h_out * g.w_out];
        grad_bias.data_mut()[co] += plane.iter().sum::<f64>();
        for ci in 0..g.c_in {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let gxin = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let koff = (co * g.c_in + ci) * g.k * g.k;
            for oy in 0..g.h_out {
                for ky in 0..g.k {
                    let iy = (oy * stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let orow = &plane[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, &d) in orow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let base = (ox * stride) as isize - g.pad_left as isize;
                        for kx in 0..g.k {
                            let ix = base + kx as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let xi = iy * g.w + ix as usize;
                                let wi = koff + ky * g.k + kx;
                                gw[wi] += d * xin[xi];
                                gxin[xi] += d * wt[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), gx)
}

/// `y = x W + b` for a vector `x` of width D and `W` of shape [D, A].
pub fn linear_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let mut y = matvec(x, weights)?;
    if bias.shape() != [y.len()] {
        return Err(NnError::Shape(format!(
            "linear bias must be [{}], got {:?}",
            y.len(),
            bias.shape()
        )));
    }
    y.add_assign(bias);
    Ok(y)
}

/// `x W` without bias.
pub fn matvec(x: &Tensor, weights: &Tensor) -> Result<Tensor, NnError> {
    let &[d, a] = weights.shape() else {
        return Err(NnError::Shape(format!("linear weights must be [D,A], got {:?}", weights.shape())));
    };
    if x.len() != d {
        return Err(NnError::Config(format!("linear expects input width {d}, got {}", x.len())));
    }
    let mut y = vec![0.0; a];
    accumulate_matvec(x.data(), weights.data(), a, &mut y);
    Ok(Tensor::vector(y))
}

fn accumulate_matvec(x: &[f64], w: &[f64], cols: usize, y: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
}

/// Gradient for `y = x W`: accumulates `outer(x, dy)` into `grad_weights`, returns `W dy`.
pub fn matvec_backward(x: &Tensor, weights: &Tensor, grad_y: &[f64], grad_weights: &mut Tensor) -> Tensor {
    let cols = grad_y.len();
    let w = weights.data();
    let gw = grad_weights.data_mut();
    let mut gx = vec![0.0; x.len()];
    for (i, &xi) in x.data().iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let grow = &mut gw[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for j in 0..cols {
            grow[j] += xi * grad_y[j];
            acc += row[j] * grad_y[j];
        }
        gx[i] = acc;
    }
    Tensor::vector(gx)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Softmax with max-subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y = x.clone();
    let mut total = 0.0;
    for v in y.data_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    y.data_mut().iter_mut().for_each(|v| *v /= total);
    y
}

/// Log-softmax computed via log-sum-exp.
pub fn log_softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v -= lse);
    y
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden and cell vectors of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(size: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[size]),
            cell: Tensor::zeros(&[size]),
        }
    }

    pub fn size(&self) -> usize {
        self.hidden.len()
    }
}

/// Borrowed LSTM weights. Gate blocks are laid out `[input, forget, candidate, output]`
/// along the last axis of every tensor.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    /// `[D, 4S]`
    pub input_weights: &'a Tensor,
    /// `[S, 4S]`
    pub hidden_weights: &'a Tensor,
    /// `[4S]`
    pub bias: &'a Tensor,
}

impl LstmParams<'_> {
    fn validate(&self, input_width: usize, state: &LstmState) -> Result<usize, NnError> {
        let s = state.size();
        if state.cell.len() != s {
            return Err(NnError::Config(format!(
                "LSTM hidden width {s} differs from cell width {}",
                state.cell.len()
            )));
        }
        if self.input_weights.shape() != [input_width, 4 * s] {
            return Err(NnError::Config(format!(
                "LSTM input weights {:?} do not fit input width {input_width} and state width {s}",
                self.input_weights.shape()
            )));
        }
        if self.hidden_weights.shape() != [s, 4 * s] || self.bias.shape() != [4 * s] {
            return Err(NnError::Config(format!("LSTM recurrent parameters do not fit state width {s}")));
        }
        Ok(s)
    }
}

/// Activated gates of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    /// `[i, f, g, o]` after their nonlinearities, length 4S.
    pub gates: Vec<f64>,
    /// `tanh(c_t)`
    pub tanh_cell: Vec<f64>,
}

pub(crate) fn lstm_forward(
    x: &Tensor,
    state: &LstmState,
    params: LstmParams<'_>,
) -> Result<(LstmState, LstmCache), NnError> {
    let s = params.validate(x.len(), state)?;
    let mut z = params.bias.data().to_vec();
    accumulate_matvec(x.data(), params.input_weights.data(), 4 * s, &mut z);
    accumulate_matvec(state.hidden.data(), params.hidden_weights.data(), 4 * s, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * s..3 * s).contains(&k) { v.tanh() } else { sigmoid(*v) };
    }
    let mut cell = vec![0.0; s];
    let mut hidden = vec![0.0; s];
    let mut tanh_cell = vec![0.0; s];
    for j in 0..s {
        let (i, f, g, o) = (z[j], z[s + j], z[2 * s + j], z[3 * s + j]);
        cell[j] = f * state.cell.data()[j] + i * g;
        tanh_cell[j] = cell[j].tanh();
        hidden[j] = o * tanh_cell[j];
    }
    let next = LstmState {
        hidden: Tensor::vector(hidden),
        cell: Tensor::vector(cell),
    };
    Ok((next, LstmCache { gates: z, tanh_cell }))
}

/// One standard LSTM cell update. The output equals the new hidden state.
pub fn lstm_step(x: &Tensor, state: &LstmState, params: LstmParams<'_>) -> Result<(Tensor, LstmState), NnError> {
    let (next, _) = lstm_forward(x, state, params)?;
    Ok((next.hidden.clone(), next))
}

/// Gradients flowing out of one LSTM step.
pub(crate) struct LstmGrads {
    pub input: Tensor,
    pub hidden: Tensor,
    pub cell: Tensor,
}

/// Backward through one step given upstream `dh_t`, `dc_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    x: &Tensor,
    prev: &LstmState,
    params: LstmParams<'_>,
    cache: &LstmCache,
    grad_hidden: &[f64],
    grad_cell: &[f64],
    grad_input_weights: &mut Tensor,
    grad_hidden_weights: &mut Tensor,
    grad_bias: &mut Tensor,
) -> LstmGrads {
    let s = prev.size();
    let z = &cache.gates;
    let mut dz = vec![0.0; 4 * s];
    let mut dc_prev = vec![0.0; s];
    for j in 0..s {
        let (i, f, g, o) = (z[j], z[s + j], z[2 * s + j], z[3 * s + j]);
        let tc = cache.tanh_cell[j];
        let dc = grad_cell[j] + grad_hidden[j] * o * (1.0 - tc * tc);
        let d_o = grad_hidden[j] * tc;
        let d_i = dc * g;
        let d_g = dc * i;
        let d_f = dc * prev.cell.data()[j];
        dc_prev[j] = dc * f;
        dz[j] = d_i * i * (1.0 - i);
        dz[s + j] = d_f * f * (1.0 - f);
        dz[2 * s + j] = d_g * (1.0 - g * g);
        dz[3 * s + j] = d_o * o * (1.0 - o);
    }
    for (gb, d) in grad_bias.data_mut().iter_mut().zip(&dz) {
        *gb += d;
    }
    let input = matvec_backward(x, params.input_weights, &dz, grad_input_weights);
    let hidden = matvec_backward(&prev.hidden, params.hidden_weights, &dz, grad_hidden_weights);
    LstmGrads {
        input,
        hidden,
        cell: Tensor::vector(dc_prev),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_output_shape_42() {
        let x = Tensor::zeros(&[1, 42, 42]);
        let w = Tensor::zeros(&[32, 1, 3, 3]);
        let b = Tensor::zeros(&[32]);
        let y = conv2d_forward(&x, &w, &b, 2).unwrap();
        assert_eq!(y.shape(), &[32, 21, 21]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_chain_flattens_to_288() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = random(&[1, 42, 42], &mut rng);
        let mut c_in = 1;
        for _ in 0..4 {
            let w = random(&[32, c_in, 3, 3], &mut rng);
            x = conv2d_forward(&x, &w, &Tensor::zeros(&[32]), 2).unwrap();
            c_in = 32;
        }
        assert_eq!(x.shape(), &[32, 3, 3]);
        assert_eq!(x.len(), 288);
    }

    #[test]
    fn conv_channel_mismatch_is_config_error() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let err = conv2d_forward(&x, &w, &Tensor::zeros(&[4]), 2).unwrap_err();
        assert!(matches!(err, NnError::Config(_)));
    }

    #[test]
    fn conv_matches_naive_padded_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 7, 6], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let y = conv2d_forward(&x, &w, &b, 2).unwrap();
        // explicit zero-padded copy, then valid correlation
        let (ho, pt) = same_padding(7, 3, 2);
        let (wo, pl) = same_padding(6, 3, 2);
        let ph = (ho - 1) * 2 + 3;
        let pw = (wo - 1) * 2 + 3;
        let mut padded = vec![0.0; 2 * ph * pw];
        for c in 0..2 {
            for i in 0..7 {
                for j in 0..6 {
                    if i + pt < ph && j + pl < pw {
                        padded[c * ph * pw + (i + pt) * pw + j + pl] = x.data()[c * 42 + i * 6 + j];
                    }
                }
            }
        }
        for co in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                    * padded[ci * ph * pw + (oy * 2 + ky) * pw + ox * 2 + kx];
                            }
                        }
                    }
                    let got = y.data()[(co * ho + oy) * wo + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_examples() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = linear_forward(&Tensor::vector(vec![1.0, 2.0]), &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let w = Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap();
        let y = linear_forward(&Tensor::vector(vec![1.0, 1.0]), &w, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(y.data(), &[6.0]);

        let bad = linear_forward(&Tensor::vector(vec![1.0; 3]), &w, &Tensor::vector(vec![1.0]));
        assert!(matches!(bad, Err(NnError::Config(_))));
    }

    #[test]
    fn linear_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[5], &mut rng);
        let w = random(&[5, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let y = linear_forward(&x, &w, &b).unwrap();
        for j in 0..4 {
            let mut acc = b.data()[j];
            for i in 0..5 {
                acc += x.data()[i] * w.data()[i * 4 + j];
            }
            assert!((y.data()[j] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn relu_examples() {
        let y = relu(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let neg = relu(&Tensor::vector(vec![-3.0, -0.5]));
        assert!(neg.data().iter().all(|&v| v == 0.0));
        let x = Tensor::vector(vec![-1.0, 4.0, -2.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&Tensor::vector(vec![0.0, 0.0, 0.0]));
        for &p in y.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax(&Tensor::vector(vec![1000.0, 0.0]));
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-300);

        let x = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let shifted = Tensor::vector(x.data().iter().map(|v| v + 17.0).collect());
        assert!(softmax(&x).max_abs_diff(&softmax(&shifted)) < 1e-12);
    }

    #[test]
    fn lstm_zero_everything_gives_zero() {
        let s = 3;
        let wx = Tensor::zeros(&[2, 4 * s]);
        let wh = Tensor::zeros(&[s, 4 * s]);
        let b = Tensor::zeros(&[4 * s]);
        let params = LstmParams { input_weights: &wx, hidden_weights: &wh, bias: &b };
        let (out, st) = lstm_step(&Tensor::zeros(&[2]), &LstmState::zeros(s), params).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(st.cell.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, s) = (4, 3);
        let x = random(&[d], &mut rng);
        let wx = random(&[d, 4 * s], &mut rng);
        let wh = random(&[s, 4 * s], &mut rng);
        let b = random(&[4 * s], &mut rng);
        let prev = LstmState { hidden: random(&[s], &mut rng), cell: random(&[s], &mut rng) };
        let params = LstmParams { input_weights: &wx, hidden_weights: &wh, bias: &b };
        let (out, next) = lstm_step(&x, &prev, params).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..s {
            let pre = |gate: usize| {
                let col = gate * s + j;
                let mut acc = b.data()[col];
                for k in 0..d {
                    acc += x.data()[k] * wx.data()[k * 4 * s + col];
                }
                for k in 0..s {
                    acc += prev.hidden.data()[k] * wh.data()[k * 4 * s + col];
                }
                acc
            };
            let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            let c = f * prev.cell.data()[j] + i * g;
            let h = o * c.tanh();
            assert!((next.cell.data()[j] - c).abs() < 1e-14);
            assert!((out.data()[j] - h).abs() < 1e-14);
        }

        let (again, _) = lstm_step(&x, &prev, params).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn lstm_width_mismatch() {
        let s = 2;
        let wx = Tensor::zeros(&[3, 4 * s]);
        let wh = Tensor::zeros(&[s, 4 * s]);
        let b = Tensor::zeros(&[4 * s]);
        let params = LstmParams { input_weights: &wx, hidden_weights: &wh, bias: &b };
        let err = lstm_step(&Tensor::zeros(&[5]), &LstmState::zeros(s), params).unwrap_err();
        assert!(matches!(err, NnError::Config(_)));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
