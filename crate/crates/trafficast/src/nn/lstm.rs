use super::tensor::Tensor;
use super::NnError;

/// LSTM over a `[T, features]` sequence with zero initial state.
///
/// Gate blocks are packed in (input, forget, candidate, output) order:
/// `wx` is `[4H, features]`, `wh` is `[4H, H]`, `bias` is `[4H]`. Input and
/// forget and output gates use the logistic activation, the candidate uses
/// tanh. With `return_sequence` the layer emits every hidden state
/// (`[T, H]`), otherwise only the final one (`[H]`).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: Tensor,
    pub wh: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
    pub return_sequence: bool,
}

pub struct LstmCache {
    input: Tensor,
    /// per step: i, f, g, o (each `hidden` long, post-activation)
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hiddens: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Lstm {
    fn features(&self) -> usize {
        self.wx.shape()[1]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LstmCache), NnError> {
        let h = self.hidden;
        let (steps, features) = match input.shape() {
            [t, f] => (*t, *f),
            other => {
                return Err(NnError::ShapeMismatch(format!(
                    "lstm expects [T, features], got {other:?}"
                )))
            }
        };
        if features != self.features() {
            return Err(NnError::ShapeMismatch(format!(
                "lstm expects {} features, got {features}",
                self.features()
            )));
        }
        if steps == 0 {
            return Err(NnError::ShapeMismatch("empty sequence".into()));
        }

        let x = input.data();
        let wx = self.wx.data();
        let wh = self.wh.data();
        let b = self.bias.data();

        let mut gates = vec![0.0_f64; steps * 4 * h];
        let mut cells = vec![0.0_f64; steps * h];
        let mut tanh_cells = vec![0.0_f64; steps * h];
        let mut hiddens = vec![0.0_f64; steps * h];
        let mut pre = vec![0.0_f64; 4 * h];

        for t in 0..steps {
            pre.copy_from_slice(b);
            let xt = &x[t * features..(t + 1) * features];
            for (row, p) in pre.iter_mut().enumerate() {
                let wrow = &wx[row * features..(row + 1) * features];
                for (w, xv) in wrow.iter().zip(xt) {
                    *p += w * xv;
                }
            }
            if t > 0 {
                let hprev = &hiddens[(t - 1) * h..t * h];
                for (row, p) in pre.iter_mut().enumerate() {
                    let wrow = &wh[row * h..(row + 1) * h];
                    for (w, hv) in wrow.iter().zip(hprev) {
                        *p += w * hv;
                    }
                }
            }
            let gate = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                gate[j] = sigmoid(pre[j]); // input
                gate[h + j] = sigmoid(pre[h + j]); // forget
                gate[2 * h + j] = pre[2 * h + j].tanh(); // candidate
                gate[3 * h + j] = sigmoid(pre[3 * h + j]); // output
            }
            for j in 0..h {
                let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
                let c = gate[h + j] * c_prev + gate[j] * gate[2 * h + j];
                cells[t * h + j] = c;
                tanh_cells[t * h + j] = c.tanh();
                hiddens[t * h + j] = gate[3 * h + j] * tanh_cells[t * h + j];
            }
        }

        let out = if self.return_sequence {
            Tensor::from_vec(&[steps, h], hiddens.clone())?
        } else {
            Tensor::from_vec(&[h], hiddens[(steps - 1) * h..].to_vec())?
        };
        Ok((
            out,
            LstmCache {
                input: input.clone(),
                gates,
                cells,
                tanh_cells,
                hiddens,
            },
        ))
    }

    /// Backpropagation through time. `grad_out` matches the forward output
    /// shape. Returns the input gradient and `[dWx, dWh, dBias]`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let h = self.hidden;
        let features = self.features();
        let steps = cache.input.shape()[0];
        let expected = if self.return_sequence {
            vec![steps, h]
        } else {
            vec![h]
        };
        if grad_out.shape() != expected.as_slice() {
            return Err(NnError::ShapeMismatch("lstm grad shape".into()));
        }

        let x = cache.input.data();
        let wx = self.wx.data();
        let wh = self.wh.data();

        let mut d_wx = Tensor::zeros(self.wx.shape());
        let mut d_wh = Tensor::zeros(self.wh.shape());
        let mut d_b = Tensor::zeros(self.bias.shape());
        let mut grad_in = Tensor::zeros(cache.input.shape());

        let mut dh_next = vec![0.0_f64; h];
        let mut dc_next = vec![0.0_f64; h];
        let mut da = vec![0.0_f64; 4 * h];

        for t in (0..steps).rev() {
            let gate = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
            let tanh_c = &cache.tanh_cells[t * h..(t + 1) * h];
            for j in 0..h {
                let mut dh = dh_next[j];
                if self.return_sequence {
                    dh += grad_out.data()[t * h + j];
                } else if t == steps - 1 {
                    dh += grad_out.data()[j];
                }
                let i_g = gate[j];
                let f_g = gate[h + j];
                let g_g = gate[2 * h + j];
                let o_g = gate[3 * h + j];
                let d_o = dh * tanh_c[j];
                let dc = dc_next[j] + dh * o_g * (1.0 - tanh_c[j] * tanh_c[j]);
                let c_prev = if t > 0 { cache.cells[(t - 1) * h + j] } else { 0.0 };
                let d_i = dc * g_g;
                let d_f = dc * c_prev;
                let d_g = dc * i_g;
                dc_next[j] = dc * f_g;
                // to pre-activations
                da[j] = d_i * i_g * (1.0 - i_g);
                da[h + j] = d_f * f_g * (1.0 - f_g);
                da[2 * h + j] = d_g * (1.0 - g_g * g_g);
                da[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }

            let xt = &x[t * features..(t + 1) * features];
            {
                let dwx = d_wx.data_mut();
                let db = d_b.data_mut();
                for (row, &g) in da.iter().enumerate() {
                    db[row] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let wrow = &mut dwx[row * features..(row + 1) * features];
                    for (w, &xv) in wrow.iter_mut().zip(xt) {
                        *w += g * xv;
                    }
                }
            }
            if t > 0 {
                let hprev = &cache.hiddens[(t - 1) * h..t * h];
                let dwh = d_wh.data_mut();
                for (row, &g) in da.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let wrow = &mut dwh[row * h..(row + 1) * h];
                    for (w, &hv) in wrow.iter_mut().zip(hprev) {
                        *w += g * hv;
                    }
                }
            }

            // input gradient and carry to h_{t-1}
            let gin = &mut grad_in.data_mut()[t * features..(t + 1) * features];
            for (row, &g) in da.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wrow = &wx[row * features..(row + 1) * features];
                for (gi, &wv) in gin.iter_mut().zip(wrow) {
                    *gi += g * wv;
                }
            }
            dh_next.fill(0.0);
            for (row, &g) in da.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wrow = &wh[row * h..(row + 1) * h];
                for (dhn, &wv) in dh_next.iter_mut().zip(wrow) {
                    *dhn += g * wv;
                }
            }
        }

        Ok((grad_in, vec![d_wx, d_wh, d_b]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seeded_lstm(features: usize, hidden: usize, return_sequence: bool, seed: u64) -> Lstm {
        let mut rng = crate::rng::stage_rng(seed, "lstm-test");
        let mut tensor = |shape: &[usize]| {
            let len = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        Lstm {
            wx: tensor(&[4 * hidden, features]),
            wh: tensor(&[4 * hidden, hidden]),
            bias: tensor(&[4 * hidden]),
            hidden,
            return_sequence,
        }
    }

    #[test]
    fn zero_parameters_give_zero_hidden_state() {
        let lstm = Lstm {
            wx: Tensor::zeros(&[8, 1]),
            wh: Tensor::zeros(&[8, 2]),
            bias: Tensor::zeros(&[8]),
            hidden: 2,
            return_sequence: false,
        };
        let input = Tensor::from_vec(&[5, 1], vec![1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        let (out, _) = lstm.forward(&input).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_step_equals_cell_evaluation() {
        let lstm = seeded_lstm(3, 4, false, 11);
        let input = Tensor::from_vec(&[1, 3], vec![0.2, -0.7, 0.4]).unwrap();
        let (out, _) = lstm.forward(&input).unwrap();
        // direct evaluation with h0 = c0 = 0
        let x = input.data();
        let h = 4;
        for j in 0..h {
            let pre = |row: usize| -> f64 {
                let mut z = lstm.bias.data()[row];
                for (k, xv) in x.iter().enumerate() {
                    z += lstm.wx.data()[row * 3 + k] * xv;
                }
                z
            };
            let i_g = sigmoid(pre(j));
            let g_g = pre(2 * h + j).tanh();
            let o_g = sigmoid(pre(3 * h + j));
            let c = i_g * g_g;
            let expected = o_g * c.tanh();
            assert!((out.data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn order_sensitivity_under_generic_weights() {
        let lstm = seeded_lstm(1, 6, false, 23);
        let a = Tensor::from_vec(&[4, 1], vec![0.9, -0.3, 0.5, 0.1]).unwrap();
        let b = Tensor::from_vec(&[4, 1], vec![0.1, 0.5, -0.3, 0.9]).unwrap();
        let (ha, _) = lstm.forward(&a).unwrap();
        let (hb, _) = lstm.forward(&b).unwrap();
        let diff: f64 = ha
            .data()
            .iter()
            .zip(hb.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6, "permuting the sequence should change h");
    }

    #[test]
    fn rejects_feature_mismatch() {
        let lstm = seeded_lstm(2, 3, false, 5);
        assert!(lstm.forward(&Tensor::zeros(&[4, 3])).is_err());
    }
}
