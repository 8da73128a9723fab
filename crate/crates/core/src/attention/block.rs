use nalgebra::DMatrix;
use rand::Rng;

use super::FeatureMap;
use crate::{Error, Result};

pub const LN_EPSILON: f64 = 1e-5;

/// Tensor names in checkpoint order.
pub const PARAM_NAMES: [&str; 9] = ["w_q", "w_k", "w_v", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "ln.gain", "ln.bias"];

/// Weights of one contextual-reasoning block. Biases and layer-norm
/// vectors are `1 x n` matrices so every tensor has the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct CrParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub ln_gain: DMatrix<f64>,
    pub ln_bias: DMatrix<f64>,
}

impl CrParams {
    /// All-zero weights with unit layer-norm gain; the block is then the
    /// identity on its query.
    pub fn identity(channels: usize, hidden: usize) -> Self {
        Self {
            w_q: DMatrix::zeros(channels, channels),
            w_k: DMatrix::zeros(channels, channels),
            w_v: DMatrix::zeros(channels, channels),
            w1: DMatrix::zeros(channels, hidden),
            b1: DMatrix::zeros(1, hidden),
            w2: DMatrix::zeros(hidden, channels),
            b2: DMatrix::zeros(1, channels),
            ln_gain: DMatrix::from_element(1, channels, 1.0),
            ln_bias: DMatrix::zeros(1, channels),
        }
    }

    /// Uniform fan-in scaled initialisation with hidden width `4 * channels`.
    pub fn random<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self::random_with_hidden(channels, 4 * channels, rng)
    }

    pub fn random_with_hidden<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        let mut uniform = |rows: usize, cols: usize, bound: f64| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        let a = (3.0 / channels as f64).sqrt();
        let h = (3.0 / hidden as f64).sqrt();
        let mut p = Self {
            w_q: uniform(channels, channels, a),
            w_k: uniform(channels, channels, a),
            w_v: uniform(channels, channels, a),
            w1: uniform(channels, hidden, a),
            b1: uniform(1, hidden, 0.1),
            w2: uniform(hidden, channels, h),
            b2: uniform(1, channels, 0.1),
            ln_gain: uniform(1, channels, 0.2),
            ln_bias: uniform(1, channels, 0.1),
        };
        p.ln_gain.add_scalar_mut(1.0);
        p
    }

    pub fn channels(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn tensors(&self) -> [(&'static str, &DMatrix<f64>); 9] {
        [
            (PARAM_NAMES[0], &self.w_q),
            (PARAM_NAMES[1], &self.w_k),
            (PARAM_NAMES[2], &self.w_v),
            (PARAM_NAMES[3], &self.w1),
            (PARAM_NAMES[4], &self.b1),
            (PARAM_NAMES[5], &self.w2),
            (PARAM_NAMES[6], &self.b2),
            (PARAM_NAMES[7], &self.ln_gain),
            (PARAM_NAMES[8], &self.ln_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut DMatrix<f64>); 9] {
        [
            (PARAM_NAMES[0], &mut self.w_q),
            (PARAM_NAMES[1], &mut self.w_k),
            (PARAM_NAMES[2], &mut self.w_v),
            (PARAM_NAMES[3], &mut self.w1),
            (PARAM_NAMES[4], &mut self.b1),
            (PARAM_NAMES[5], &mut self.w2),
            (PARAM_NAMES[6], &mut self.b2),
            (PARAM_NAMES[7], &mut self.ln_gain),
            (PARAM_NAMES[8], &mut self.ln_bias),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Shapes are mutually consistent and all values finite.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let h = self.hidden();
        let expected = [(c, c), (c, c), (c, c), (c, h), (1, h), (h, c), (1, c), (1, c), (1, c)];
        for ((name, t), shape) in self.tensors().iter().zip(expected) {
            if t.shape() != shape {
                return Err(Error::dims(format!("{name} is {:?}, expected {shape:?}", t.shape())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} contains non-finite values")));
            }
        }
        if c == 0 || h == 0 {
            return Err(Error::dims("block has zero channels or hidden units"));
        }
        Ok(())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

/// Activations recorded by [`cr_forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTape {
    params: CrParams,
    query: FeatureMap,
    context: FeatureMap,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    attn: DMatrix<f64>,
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    y: DMatrix<f64>,
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    output: FeatureMap,
}

impl GradTape {
    /// Attention weights, one row per query position.
    pub fn attention(&self) -> &DMatrix<f64> {
        &self.attn
    }

    pub fn output(&self) -> &FeatureMap {
        &self.output
    }

    /// Hidden pre-activations of the feed-forward stage.
    pub fn pre_activations(&self) -> &DMatrix<f64> {
        &self.z1
    }

    /// Re-runs the forward pass from the recorded inputs and weights.
    pub fn replay(&self) -> Result<FeatureMap> {
        cr_forward(&self.params, &self.query, &self.context).map(|(out, _)| out)
    }
}

/// Gradients of a scalar loss with respect to the block weights and both
/// inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CrGradients {
    pub params: CrParams,
    pub query: FeatureMap,
    pub context: FeatureMap,
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Attention stage on token matrices: `Q' = Xq + softmax(Q K^T / sqrt(C)) V`.
pub(crate) struct Attended {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub attn: DMatrix<f64>,
    pub q_prime: DMatrix<f64>,
}

pub(crate) fn attend(params: &CrParams, xq: &DMatrix<f64>, xc: &DMatrix<f64>) -> Attended {
    let q = xq * &params.w_q;
    let k = xc * &params.w_k;
    let v = xc * &params.w_v;
    let logits = (&q * k.transpose()) / (params.channels() as f64).sqrt();
    let attn = softmax_rows(&logits);
    let q_prime = xq + &attn * &v;
    Attended { q, k, v, attn, q_prime }
}

/// Residual feed-forward stage applied to the rows of `Q'`.
pub(crate) struct FedForward {
    pub xhat: DMatrix<f64>,
    pub inv_std: Vec<f64>,
    pub y: DMatrix<f64>,
    pub z1: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub out: DMatrix<f64>,
}

pub(crate) fn feed_forward(params: &CrParams, q_prime: &DMatrix<f64>) -> FedForward {
    let (n, c) = q_prime.shape();
    let mut xhat = DMatrix::zeros(n, c);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = q_prime.row(r);
        let mean = row.mean();
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LN_EPSILON).sqrt();
        inv_std.push(inv);
        for j in 0..c {
            xhat[(r, j)] = (row[j] - mean) * inv;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.row_iter_mut() {
        row.component_mul_assign(&params.ln_gain);
        row += &params.ln_bias;
    }

    let mut z1 = &y * &params.w1;
    for mut row in z1.row_iter_mut() {
        row += &params.b1;
    }
    let h1 = z1.map(|v| v.max(0.0));
    let mut out = &h1 * &params.w2;
    for mut row in out.row_iter_mut() {
        row += &params.b2;
    }
    out += q_prime;
    FedForward { xhat, inv_std, y, z1, h1, out }
}

/// Cross-attention of `query` over `context` followed by the residual
/// feed-forward stage:
///
/// ```text
/// Q = Xq Wq, K = Xc Wk, V = Xc Wv
/// Q' = Xq + softmax(Q K^T / sqrt(C)) V
/// out = Q' + relu(LN(Q') W1 + b1) W2 + b2
/// ```
pub fn cr_forward(params: &CrParams, query: &FeatureMap, context: &FeatureMap) -> Result<(FeatureMap, GradTape)> {
    params.validate()?;
    let c = params.channels();
    if query.channels() != c || context.channels() != c {
        return Err(Error::dims(format!("block expects {c} channels, query has {} and context {}", query.channels(), context.channels())));
    }
    let xq = query.to_tokens();
    let xc = context.to_tokens();
    let a = attend(params, &xq, &xc);
    let f = feed_forward(params, &a.q_prime);

    let output = FeatureMap::from_tokens(query.height(), query.width(), &f.out);
    let tape = GradTape {
        params: params.clone(),
        query: query.clone(),
        context: context.clone(),
        q: a.q,
        k: a.k,
        v: a.v,
        attn: a.attn,
        xhat: f.xhat,
        inv_std: f.inv_std,
        y: f.y,
        z1: f.z1,
        h1: f.h1,
        output: output.clone(),
    };
    Ok((output, tape))
}

/// Backward pass of [`cr_forward`] for the loss whose gradient with
/// respect to the block output is `upstream`.
pub fn cr_backward(tape: &GradTape, upstream: &FeatureMap) -> Result<CrGradients> {
    if upstream.shape() != tape.output.shape() {
        return Err(Error::dims(format!("upstream gradient {:?} does not match block output {:?}", upstream.shape(), tape.output.shape())));
    }
    let p = &tape.params;
    let c = p.channels();
    let scale = 1.0 / (c as f64).sqrt();
    let g = upstream.to_tokens();
    let xq = tape.query.to_tokens();
    let xc = tape.context.to_tokens();
    let mut grads = p.zeros_like();

    // out = Q' + H1 W2 + b2
    grads.w2 = tape.h1.transpose() * &g;
    grads.b2 = row_sums(&g);
    let mut dz1 = &g * p.w2.transpose();
    dz1.zip_apply(&tape.z1, |d, z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });

    // Z1 = Y W1 + b1
    grads.w1 = tape.y.transpose() * &dz1;
    grads.b1 = row_sums(&dz1);
    let dy = &dz1 * p.w1.transpose();

    // Y = gain * xhat + bias
    grads.ln_gain = row_sums(&dy.component_mul(&tape.xhat));
    grads.ln_bias = row_sums(&dy);
    let mut dq_prime = g.clone();
    for r in 0..dy.nrows() {
        let dxhat: Vec<f64> = (0..c).map(|j| dy[(r, j)] * p.ln_gain[(0, j)]).collect();
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = (0..c).map(|j| dxhat[j] * tape.xhat[(r, j)]).sum();
        let k = tape.inv_std[r] / c as f64;
        for j in 0..c {
            dq_prime[(r, j)] += k * (c as f64 * dxhat[j] - sum - tape.xhat[(r, j)] * dot);
        }
    }

    // Q' = Xq + A V
    let mut d_xq = dq_prime.clone();
    let d_attn = &dq_prime * tape.v.transpose();
    let dv = tape.attn.transpose() * &dq_prime;

    // A = softmax(S)
    let mut d_logits = d_attn;
    for r in 0..d_logits.nrows() {
        let dot = d_logits.row(r).dot(&tape.attn.row(r));
        for j in 0..d_logits.ncols() {
            d_logits[(r, j)] = tape.attn[(r, j)] * (d_logits[(r, j)] - dot);
        }
    }
    d_logits *= scale;

    // S = Q K^T / sqrt(C)
    let dq = &d_logits * &tape.k;
    let dk = d_logits.transpose() * &tape.q;

    grads.w_q = xq.transpose() * &dq;
    grads.w_k = xc.transpose() * &dk;
    grads.w_v = xc.transpose() * &dv;
    d_xq += &dq * p.w_q.transpose();
    let d_xc = &dk * p.w_k.transpose() + &dv * p.w_v.transpose();

    Ok(CrGradients {
        params: grads,
        query: FeatureMap::from_tokens(tape.query.height(), tape.query.width(), &d_xq),
        context: FeatureMap::from_tokens(tape.context.height(), tape.context.width(), &d_xc),
    })
}

fn row_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_weights_pass_query_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_map(&mut rng, 3, 4, 6);
        let ctx = random_map(&mut rng, 2, 2, 6);
        let mut params = CrParams::random(6, &mut rng);
        params.w_v.fill(0.0);
        params.w1.fill(0.0);
        params.w2.fill(0.0);
        params.b1.fill(0.0);
        params.b2.fill(0.0);
        let (out, _) = cr_forward(&params, &q, &ctx).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn single_key_attends_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_map(&mut rng, 2, 3, 5);
        let ctx = random_map(&mut rng, 1, 1, 5);
        let params = CrParams::random(5, &mut rng);
        let (_, tape) = cr_forward(&params, &q, &ctx).unwrap();
        assert!(tape.attention().iter().all(|a| *a == 1.0));
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = CrParams::random(4, &mut rng);
        let q = FeatureMap::zeros(2, 2, 4);
        let ctx = FeatureMap::zeros(2, 2, 3);
        assert!(matches!(cr_forward(&params, &q, &ctx), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_map(&mut rng, 2, 2, 4);
        let ctx = random_map(&mut rng, 2, 2, 4);
        let params = CrParams::random(4, &mut rng);
        let (_, tape) = cr_forward(&params, &q, &ctx).unwrap();
        let g = cr_backward(&tape, &FeatureMap::zeros(2, 2, 4)).unwrap();
        for (_, t) in g.params.tensors() {
            assert!(t.iter().all(|v| *v == 0.0));
        }
        assert!(g.query.data().iter().all(|v| *v == 0.0));
        assert!(g.context.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_block_has_identity_input_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_map(&mut rng, 2, 3, 4);
        let ctx = random_map(&mut rng, 2, 2, 4);
        let params = CrParams::identity(4, 16);
        let (_, tape) = cr_forward(&params, &q, &ctx).unwrap();
        let up = random_map(&mut rng, 2, 3, 4);
        let g = cr_backward(&tape, &up).unwrap();
        assert_eq!(g.query, up);
        assert!(g.context.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_map(&mut rng, 3, 3, 8);
        let ctx = random_map(&mut rng, 2, 2, 8);
        let params = CrParams::random(8, &mut rng);
        let (out, tape) = cr_forward(&params, &q, &ctx).unwrap();
        let again = tape.replay().unwrap();
        assert!(out.data().iter().zip(again.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 3.0, 3.0, -4.0]);
        let shifted = logits.map(|v| v + 17.25);
        let (a, b) = (softmax_rows(&logits), softmax_rows(&shifted));
        assert!((a - b).amax() < 1e-15);
    }
}
