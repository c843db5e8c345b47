//! A single unidirectional LSTM layer without peepholes.
//!
//! Gate rows are stacked in the order input, forget, cell candidate, output,
//! so `wx` is `4h × input_dim`, `wh` is `4h × h` and `bias` has `4h` entries.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, matmul_into, sigmoid, Mat};

pub(crate) const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub(crate) wx: Mat,
    pub(crate) wh: Mat,
    pub(crate) bias: Vec<f64>,
}

/// Parameter gradients for one layer; same shapes as [`LstmLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub wx: Mat,
    pub wh: Mat,
    pub bias: Vec<f64>,
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct LstmTape {
    pub(crate) input: Mat,
    /// post-nonlinearity gate values, `T × 4h`
    pub(crate) gates: Mat,
    pub(crate) cells: Mat,
    pub(crate) hidden: Mat,
}

impl LstmTape {
    pub fn hidden(&self) -> &Mat {
        &self.hidden
    }

    pub fn len(&self) -> usize {
        self.hidden.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.rows() == 0
    }
}

impl LstmLayer {
    /// All-zero layer (forget bias included).
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            wx: Mat::zeros(4 * hidden_dim, input_dim),
            wh: Mat::zeros(4 * hidden_dim, hidden_dim),
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    /// Weights uniform in `[-0.05, 0.05]` (input weights drawn before
    /// recurrent weights, row-major), forget-gate bias 1, other biases 0.
    pub fn random<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input_dim, hidden_dim);
        for v in layer.wx.as_mut_slice() {
            *v = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        for v in layer.wh.as_mut_slice() {
            *v = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        layer.bias[hidden_dim..2 * hidden_dim].fill(1.0);
        layer
    }

    pub fn from_parts(wx: Mat, wh: Mat, bias: Vec<f64>) -> Result<Self> {
        let h = wh.cols();
        if wh.rows() != 4 * h {
            return Err(Error::DimensionMismatch {
                what: "recurrent weight rows",
                expected: 4 * h,
                actual: wh.rows(),
            });
        }
        if wx.rows() != 4 * h {
            return Err(Error::DimensionMismatch {
                what: "input weight rows",
                expected: 4 * h,
                actual: wx.rows(),
            });
        }
        if bias.len() != 4 * h {
            return Err(Error::DimensionMismatch {
                what: "bias length",
                expected: 4 * h,
                actual: bias.len(),
            });
        }
        Ok(Self { wx, wh, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.wx.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wh.cols()
    }

    pub fn input_weights(&self) -> &Mat {
        &self.wx
    }

    pub fn recurrent_weights(&self) -> &Mat {
        &self.wh
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 3] {
        [self.wx.as_slice(), self.wh.as_slice(), &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [self.wx.as_mut_slice(), self.wh.as_mut_slice(), &mut self.bias]
    }

    pub fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            wx: Mat::zeros(self.wx.rows(), self.wx.cols()),
            wh: Mat::zeros(self.wh.rows(), self.wh.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Runs the recurrence from zero hidden and cell state over every row of
    /// `input`.
    pub fn forward(&self, input: &Mat) -> Result<(Mat, LstmTape)> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "LSTM input",
                expected: self.input_dim(),
                actual: input.cols(),
            });
        }
        let steps = input.rows();
        let h = self.hidden_dim();

        let mut gates = Mat::zeros(steps, 4 * h);
        for t in 0..steps {
            gates.row_mut(t).copy_from_slice(&self.bias);
        }
        matmul_into(input, false, &self.wx, true, 1.0, &mut gates);

        let mut cells = Mat::zeros(steps, h);
        let mut hidden = Mat::zeros(steps, h);
        let zeros = vec![0.0; h];
        for t in 0..steps {
            let (h_prev, c_prev) = if t == 0 {
                (zeros.clone(), zeros.clone())
            } else {
                (hidden.row(t - 1).to_vec(), cells.row(t - 1).to_vec())
            };
            let g = gates.row_mut(t);
            if t > 0 {
                for (r, gr) in g.iter_mut().enumerate() {
                    *gr += dot(self.wh.row(r), &h_prev);
                }
            }
            for v in &mut g[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut g[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut g[3 * h..] {
                *v = sigmoid(*v);
            }
            let g = gates.row(t);
            let c = cells.row_mut(t);
            for j in 0..h {
                c[j] = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
            }
            let c = cells.row(t).to_vec();
            let hr = hidden.row_mut(t);
            for j in 0..h {
                hr[j] = g[3 * h + j] * c[j].tanh();
            }
        }
        let out = hidden.clone();
        Ok((
            out,
            LstmTape {
                input: input.clone(),
                gates,
                cells,
                hidden,
            },
        ))
    }

    /// Backpropagation through time. `d_hidden` is the loss gradient with
    /// respect to every emitted hidden vector.
    pub fn backward(&self, tape: &LstmTape, d_hidden: &Mat) -> Result<(LstmGrads, Mat)> {
        let steps = tape.len();
        let h = self.hidden_dim();
        if d_hidden.shape() != (steps, h) {
            return Err(Error::DimensionMismatch {
                what: "LSTM output gradient rows",
                expected: steps,
                actual: d_hidden.rows(),
            });
        }
        let mut d_pre = Mat::zeros(steps, 4 * h);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..steps).rev() {
            let g = tape.gates.row(t);
            let c = tape.cells.row(t);
            let dh_out = d_hidden.row(t);
            let dp = d_pre.row_mut(t);
            for j in 0..h {
                let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let c_prev = if t > 0 { tape.cells.get(t - 1, j) } else { 0.0 };
                let tc = c[j].tanh();
                let dh = dh_out[j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dc_next[j] = dc * f;
                dp[j] = dc * cand * i * (1.0 - i);
                dp[h + j] = dc * c_prev * f * (1.0 - f);
                dp[2 * h + j] = dc * i * (1.0 - cand * cand);
                dp[3 * h + j] = d_o * o * (1.0 - o);
            }
            dh_next.fill(0.0);
            if t > 0 {
                for (r, &d) in dp.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, self.wh.row(r), &mut dh_next);
                    }
                }
            }
        }

        let mut grads = self.zero_grads();
        matmul_into(&d_pre, true, &tape.input, false, 0.0, &mut grads.wx);
        if steps > 1 {
            let mut shifted = Mat::zeros(steps, h);
            for t in 1..steps {
                shifted.row_mut(t).copy_from_slice(tape.hidden.row(t - 1));
            }
            matmul_into(&d_pre, true, &shifted, false, 0.0, &mut grads.wh);
        }
        for row in d_pre.iter_rows() {
            for (b, d) in grads.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        let mut d_input = Mat::zeros(steps, self.input_dim());
        matmul_into(&d_pre, false, &self.wx, false, 0.0, &mut d_input);
        Ok((grads, d_input))
    }
}

impl LstmGrads {
    pub(crate) fn tensors(&self) -> [&[f64]; 3] {
        [self.wx.as_slice(), self.wh.as_slice(), &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [self.wx.as_mut_slice(), self.wh.as_mut_slice(), &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Mat {
        let mut m = Mat::zeros(steps, dim);
        for v in m.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        m
    }

    fn randomized_layer(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmLayer {
        let mut layer = LstmLayer::random(input, hidden, rng);
        // Larger weights exercise the nonlinearities properly.
        for t in layer.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        layer
    }

    #[test]
    fn zero_layer_gives_zero_hidden() {
        let layer = LstmLayer {
            bias: vec![0.0; 12],
            ..LstmLayer::zeros(2, 3)
        };
        let (h, _) = layer.forward(&Mat::zeros(4, 2)).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let layer = LstmLayer::zeros(3, 2);
        assert!(matches!(
            layer.forward(&Mat::zeros(2, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_step_has_no_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = randomized_layer(&mut rng, 3, 2);
        let x = random_input(&mut rng, 1, 3);
        let (h, _) = layer.forward(&x).unwrap();
        let mut no_rec = layer.clone();
        no_rec.wh.fill(0.0);
        let (h2, _) = no_rec.forward(&x).unwrap();
        assert_eq!(h, h2);
    }

    /// Scalar re-computation gate by gate.
    #[test]
    fn matches_scalar_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (din, hd) = (3, 4);
        let layer = randomized_layer(&mut rng, din, hd);
        let x = random_input(&mut rng, 3, din);
        let (out, _) = layer.forward(&x).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hp = vec![0.0; hd];
        let mut cp = vec![0.0; hd];
        for t in 0..3 {
            let pre = |gate: usize, j: usize| {
                let r = gate * hd + j;
                let mut s = layer.bias[r];
                for k in 0..din {
                    s += layer.wx.get(r, k) * x.get(t, k);
                }
                for k in 0..hd {
                    s += layer.wh.get(r, k) * hp[k];
                }
                s
            };
            let mut hn = vec![0.0; hd];
            let mut cn = vec![0.0; hd];
            for j in 0..hd {
                let i = sig(pre(0, j));
                let f = sig(pre(1, j));
                let g = pre(2, j).tanh();
                let o = sig(pre(3, j));
                cn[j] = f * cp[j] + i * g;
                hn[j] = o * cn[j].tanh();
            }
            for j in 0..hd {
                assert!((out.get(t, j) - hn[j]).abs() < 1e-13);
            }
            hp = hn;
            cp = cn;
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (din, hd, steps) = (3, 4, 5);
        let layer = randomized_layer(&mut rng, din, hd);
        let x = random_input(&mut rng, steps, din);
        let weights = random_input(&mut rng, steps, hd);
        // loss = Σ weights ⊙ hidden
        let loss = |l: &LstmLayer, x: &Mat| -> f64 {
            let (h, _) = l.forward(x).unwrap();
            h.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = layer.forward(&x).unwrap();
        let (grads, d_input) = layer.backward(&tape, &weights).unwrap();
        let step = 1e-6;
        let check = |fd: f64, an: f64| {
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            assert!(rel < 1e-5, "fd={fd} an={an}");
        };
        for (ti, analytic) in grads.tensors().iter().enumerate() {
            for idx in 0..analytic.len() {
                let mut plus = layer.clone();
                plus.tensors_mut()[ti][idx] += step;
                let mut minus = layer.clone();
                minus.tensors_mut()[ti][idx] -= step;
                check((loss(&plus, &x) - loss(&minus, &x)) / (2.0 * step), analytic[idx]);
            }
        }
        for idx in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[idx] += step;
            let mut xm = x.clone();
            xm.as_mut_slice()[idx] -= step;
            check(
                (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * step),
                d_input.as_slice()[idx],
            );
        }
    }
}
