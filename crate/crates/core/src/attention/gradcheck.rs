//! Central finite-difference verification of the analytic backward pass.

use nalgebra::DMatrix;

use super::block::{attend, feed_forward};
use super::{ContextReasoning, CrParams, FeatureMap, QueryMode};
use crate::Result;

/// Central-difference step for 64-bit checks.
pub const GRADCHECK_STEP: f64 = 1e-4;
/// Denominator floor of [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const GRADCHECK_REL_FLOOR: f64 = 1e-6;

/// Retries with a ten times smaller step when a perturbation flips a ReLU.
const KINK_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub mode: QueryMode,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Coordinates whose default step crossed a ReLU kink.
    pub kink_retries: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_REL_FLOOR);
    (analytic - numeric).abs() / denom
}

struct Tracker {
    report: GradCheckReport,
}

impl Tracker {
    fn record(&mut self, name: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.report.coordinates += 1;
        let err = relative_error(analytic, numeric);
        if err > self.report.max_rel_error || self.report.worst_coordinate.is_empty() {
            self.report.max_rel_error = err;
            self.report.worst_coordinate = name();
            self.report.worst_analytic = analytic;
            self.report.worst_numeric = numeric;
        }
    }
}

/// Terms of `sum(upstream * block(query, context))` and the ReLU activation
/// pattern. The terms are kept apart so that two evaluations can be
/// differenced before summation, which keeps the large residual part of the
/// output out of the cancellation.
fn block_loss(params: &CrParams, xq: &DMatrix<f64>, xc: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<Eval> {
    Ok(head_loss(params, &attend(params, xq, xc).q_prime, upstream))
}

/// Feed-forward stage only, for perturbations that leave `Q'` unchanged.
fn head_loss(params: &CrParams, q_prime: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Eval {
    let f = feed_forward(params, q_prime);
    (weighted(upstream, &f.out), f.z1.iter().map(|z| *z > 0.0).collect())
}

/// Loss terms that depend on hidden unit `j`, for perturbations of its
/// input weights or bias. The other units contribute identical terms to
/// both sides of the difference and are left out.
fn hidden_unit_loss(params: &CrParams, y: &DMatrix<f64>, j: usize, upstream: &DMatrix<f64>) -> Eval {
    let z = y * params.w1.column(j) + DMatrix::from_element(y.nrows(), 1, params.b1[j]);
    let h = z.map(|v| v.max(0.0));
    let contribution = &h * params.w2.row(j);
    (weighted(upstream, &contribution), z.iter().map(|v| *v > 0.0).collect())
}

/// Loss terms of output column `k`, for perturbations of the second
/// feed-forward layer. The activation pattern is not affected.
fn output_column_loss(params: &CrParams, q_prime: &DMatrix<f64>, h1: &DMatrix<f64>, k: usize, upstream: &DMatrix<f64>) -> Eval {
    let col = q_prime.column(k) + h1 * params.w2.column(k) + DMatrix::from_element(h1.nrows(), 1, params.b2[k]);
    (upstream.column(k).iter().zip(col.iter()).map(|(u, o)| u * o).collect(), Vec::new())
}

type Eval = (Vec<f64>, Vec<bool>);

fn weighted(upstream: &DMatrix<f64>, out: &DMatrix<f64>) -> Vec<f64> {
    upstream.iter().zip(out.iter()).map(|(u, o)| u * o).collect()
}

fn slope(plus: &[f64], minus: &[f64], width: f64) -> f64 {
    plus.iter().zip(minus).map(|(p, m)| p - m).sum::<f64>() / width
}

/// Central difference of `eval` at zero. Steps that change the activation
/// pattern are shrunk; if every step crosses a kink the one-sided difference
/// from the side that keeps the pattern is used.
fn derivative(base_pattern: &[bool], retries: &mut usize, mut eval: impl FnMut(f64) -> Result<Eval>) -> Result<f64> {
    let mut h = GRADCHECK_STEP;
    let mut last = None;
    for attempt in 0..=KINK_RETRIES {
        let (fp, pp) = eval(h)?;
        let (fm, pm) = eval(-h)?;
        let (plus_ok, minus_ok) = (pp == base_pattern, pm == base_pattern);
        if plus_ok && minus_ok {
            if attempt > 0 {
                *retries += 1;
            }
            return Ok(slope(&fp, &fm, 2.0 * h));
        }
        last = Some((h, fp, fm, plus_ok, minus_ok));
        h /= 10.0;
    }
    *retries += 1;
    let (h, fp, fm, plus_ok, _) = last.expect("at least one attempt");
    let (f0, _) = eval(0.0)?;
    Ok(if plus_ok { slope(&fp, &f0, h) } else { slope(&f0, &fm, h) })
}

/// Checks every weight of every block and every coordinate of the three
/// input maps against central finite differences of
/// `L = <upstream_hand, out_hand> + <upstream_object, out_object>`.
pub fn gradcheck(
    module: &ContextReasoning,
    hand: &FeatureMap,
    object: &FeatureMap,
    inter: &FeatureMap,
    upstream_hand: &FeatureMap,
    upstream_object: &FeatureMap,
) -> Result<GradCheckReport> {
    let (_, tape) = module.forward(hand, object, inter)?;
    let grads = module.backward(&tape, upstream_hand, upstream_object)?;
    let mut tracker = Tracker {
        report: GradCheckReport {
            mode: module.mode(),
            coordinates: 0,
            max_rel_error: 0.0,
            worst_coordinate: String::new(),
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            kink_retries: 0,
        },
    };
    let mut retries = 0;

    let streams = [
        ("hand", module.hand_block(), grads.hand_block.as_ref(), hand, upstream_hand, &grads.hand),
        ("object", module.object_block(), grads.object_block.as_ref(), object, upstream_object, &grads.object),
    ];
    let xc = inter.to_tokens();

    let mut base_patterns = Vec::new();
    for (stream, block, block_grad, query, upstream, query_grad) in &streams {
        let (xq, up) = (query.to_tokens(), upstream.to_tokens());
        let c = query.channels();
        let Some(params) = block else {
            // no block: the stream output is its query map
            let mut work = xq.clone();
            for i in 0..work.len() {
                let (r, j) = (i / c, i % c);
                let orig = xq[(r, j)];
                let numeric = derivative(&[], &mut retries, |d| {
                    work[(r, j)] = orig + d;
                    Ok((weighted(&up, &work), Vec::new()))
                })?;
                work[(r, j)] = orig;
                tracker.record(|| format!("input.{stream}[{i}]"), query_grad.data()[i], numeric);
            }
            continue;
        };
        let block_grad = block_grad.expect("a module with a block returns its gradient");
        let base = attend(params, &xq, &xc);
        let head = feed_forward(params, &base.q_prime);
        let pattern: Vec<bool> = head.z1.iter().map(|z| *z > 0.0).collect();
        base_patterns.push(pattern.clone());
        let hidden = params.hidden();
        let unit_pattern = |j: usize| -> Vec<bool> { head.z1.column(j).iter().map(|z| *z > 0.0).collect() };

        // block weights: the attention weights need the full forward, the
        // layer norm the feed-forward stage, and the two feed-forward
        // layers a single hidden unit or output column
        let mut work = (*params).clone();
        for t in 0..9 {
            let (name, len) = {
                let (name, tensor) = &params.tensors()[t];
                (*name, tensor.len())
            };
            for i in 0..len {
                let orig = params.tensors()[t].1.as_slice()[i];
                let base_pattern = match t {
                    3 => unit_pattern(i / c),
                    4 => unit_pattern(i),
                    5 | 6 => Vec::new(),
                    _ => pattern.clone(),
                };
                let numeric = derivative(&base_pattern, &mut retries, |d| {
                    work.tensors_mut()[t].1.as_mut_slice()[i] = orig + d;
                    match t {
                        0..=2 => block_loss(&work, &xq, &xc, &up),
                        3 => Ok(hidden_unit_loss(&work, &head.y, i / c, &up)),
                        4 => Ok(hidden_unit_loss(&work, &head.y, i, &up)),
                        5 => Ok(output_column_loss(&work, &base.q_prime, &head.h1, i / hidden, &up)),
                        6 => Ok(output_column_loss(&work, &base.q_prime, &head.h1, i, &up)),
                        _ => Ok(head_loss(&work, &base.q_prime, &up)),
                    }
                })?;
                work.tensors_mut()[t].1.as_mut_slice()[i] = orig;
                let analytic = block_grad.tensors()[t].1.as_slice()[i];
                let shape = params.tensors()[t].1.shape();
                tracker.record(|| format!("{stream}.{name}[{},{}]", i % shape.0, i / shape.0), analytic, numeric);
            }
        }

        // query input: a query token only reaches its own output row
        let z1 = &head.z1;
        for r in 0..xq.nrows() {
            let mut row = xq.rows(r, 1).clone_owned();
            let up_row = up.rows(r, 1).clone_owned();
            let row_pattern: Vec<bool> = z1.row(r).iter().map(|z| *z > 0.0).collect();
            for j in 0..c {
                let orig = row[j];
                let numeric = derivative(&row_pattern, &mut retries, |d| {
                    row[j] = orig + d;
                    block_loss(params, &row, &xc, &up_row)
                })?;
                row[j] = orig;
                let i = r * c + j;
                tracker.record(|| format!("input.{stream}[{i}]"), query_grad.data()[i], numeric);
            }
        }
    }

    // intersection features feed every block
    let joint_base: Vec<bool> = base_patterns.concat();
    let blocks: Vec<_> = streams
        .iter()
        .filter_map(|(_, block, _, query, upstream, _)| block.map(|p| (p, query.to_tokens(), upstream.to_tokens())))
        .collect();
    let mut work = xc.clone();
    let c = inter.channels();
    for i in 0..work.len() {
        let (r, j) = (i / c, i % c);
        let orig = xc[(r, j)];
        let numeric = derivative(&joint_base, &mut retries, |d| {
            work[(r, j)] = orig + d;
            let mut terms = Vec::new();
            let mut pattern = Vec::new();
            for (p, xq, up) in &blocks {
                let (t, pat) = block_loss(p, xq, &work, up)?;
                terms.extend(t);
                pattern.extend(pat);
            }
            Ok((terms, pattern))
        })?;
        work[(r, j)] = orig;
        tracker.record(|| format!("input.inter[{i}]"), grads.inter.data()[i], numeric);
    }

    tracker.report.kink_retries = retries;
    Ok(tracker.report)
}
