use ndarray::Array2;
use rand::Rng;

use super::params::{glorot, ParamId, Params};
use super::tape::{Graph, Var};

/// `x · W + b` applied to every row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        Self {
            w: params.add(
                format!("{name}.w"),
                glorot(rng, inputs, outputs, inputs, outputs),
            ),
            b: params.add(format!("{name}.b"), Array2::zeros((1, outputs))),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Params, x: Var) -> Var {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// "Same"-padded 1-D convolution over rows (time).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let fan_in = inputs * kernel;
        Self {
            w: params.add(
                format!("{name}.w"),
                glorot(rng, fan_in, outputs, fan_in, outputs),
            ),
            b: params.add(format!("{name}.b"), Array2::zeros((1, outputs))),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Params, x: Var) -> Var {
        let cols = if self.kernel == 1 {
            x
        } else {
            g.im2col(x, self.kernel)
        };
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
    pub reverse: bool,
}

impl Lstm {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        hidden: usize,
        reverse: bool,
    ) -> Self {
        let mut bias = Array2::zeros((1, 4 * hidden));
        // forget gate starts open
        bias.slice_mut(ndarray::s![0, hidden..2 * hidden]).fill(1.0);
        Self {
            w_ih: params.add(
                format!("{name}.w_ih"),
                glorot(rng, inputs, 4 * hidden, inputs, hidden),
            ),
            w_hh: params.add(
                format!("{name}.w_hh"),
                glorot(rng, hidden, 4 * hidden, hidden, hidden),
            ),
            b: params.add(format!("{name}.b"), bias),
            hidden,
            reverse,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Params, x: Var) -> Var {
        let w_ih = g.param(p, self.w_ih);
        let w_hh = g.param(p, self.w_hh);
        let b = g.param(p, self.b);
        g.lstm(x, w_ih, w_hh, b, self.reverse)
    }
}
