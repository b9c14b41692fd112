/// Numerically stable softmax.
pub fn softmax(y: &[f64], out: &mut [f64]) {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Cross-entropy of `softmax(y)` against class `label`.
pub fn cross_entropy(y: &[f64], label: usize) -> f64 {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + y.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - y[label]
}

/// `pi - onehot(label)`, the loss gradient with respect to `y`.
pub fn output_error(y: &[f64], label: usize, out: &mut [f64]) {
    softmax(y, out);
    out[label] -= 1.0;
}

/// Per-hidden learning signal `sum_k W_out[k][j] * err[k]`, i.e. the error
/// fed back through the transpose of the output weights.
pub fn learning_signal(w_out: &[f64], num_hidden: usize, err: &[f64], out: &mut [f64]) {
    assert_eq!(w_out.len(), err.len() * num_hidden);
    out.fill(0.0);
    for (k, &ek) in err.iter().enumerate() {
        let row = &w_out[k * num_hidden..(k + 1) * num_hidden];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * ek;
        }
    }
}

/// Delta-rule accumulator for a leaky readout `y <- alpha y + W z + b`.
///
/// The bias is treated as a weight from a unit that is always on, so its
/// presynaptic trace is the filtered constant `b_bar <- alpha b_bar + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrad {
    pub num_out: usize,
    pub num_hidden: usize,
    /// Row-major `num_out x num_hidden`.
    pub d_w: Vec<f64>,
    pub d_b: Vec<f64>,
    pub b_bar: f64,
}

impl OutputGrad {
    pub fn new(num_out: usize, num_hidden: usize) -> Self {
        Self { num_out, num_hidden, d_w: vec![0.0; num_out * num_hidden], d_b: vec![0.0; num_out], b_bar: 0.0 }
    }

    pub fn reset_trace(&mut self) {
        self.b_bar = 0.0;
    }

    pub fn reset_grad(&mut self) {
        self.d_w.fill(0.0);
        self.d_b.fill(0.0);
    }

    /// Add one step. `z_bar` must already include this step's spikes.
    pub fn accumulate(&mut self, err: &[f64], z_bar: &[f64], alpha: f64) {
        self.b_bar = alpha * self.b_bar + 1.0;
        for (k, &ek) in err.iter().enumerate() {
            if ek == 0.0 {
                continue;
            }
            let row = &mut self.d_w[k * self.num_hidden..(k + 1) * self.num_hidden];
            for (d, &z) in row.iter_mut().zip(z_bar) {
                *d += ek * z;
            }
            self.d_b[k] += ek * self.b_bar;
        }
    }
}
