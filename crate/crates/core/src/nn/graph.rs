//! Forward evaluation and reverse-mode differentiation of dense networks.

use super::{GradSet, Layer, NetworkSpec, NnError, ParamSet};
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

/// Activations recorded during a forward pass, one entry per layer input.
pub struct Trace {
    rows: usize,
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
    out_dim: usize,
}

impl Trace {
    pub fn logits(&self) -> Tensor {
        Tensor::from_raw(vec![self.rows, self.out_dim], self.output.clone())
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_batch(spec: &NetworkSpec, batch: &Tensor) -> Result<(), NnError> {
    let d = spec.input_dim();
    if batch.shape().len() < 2 || batch.cols() != d {
        return Err(NnError::ShapeMismatch {
            layer: spec.first_dense(),
            expected: d,
            found: if batch.shape().len() < 2 {
                batch.len()
            } else {
                batch.cols()
            },
        });
    }
    Ok(())
}

/// Runs the network and keeps every intermediate activation.
pub fn forward_trace(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor) -> Result<Trace, NnError> {
    check_batch(spec, batch)?;
    let n = batch.rows();
    let mut cur = batch.data().to_vec();
    let mut dim = spec.input_dim();
    let mut inputs = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            Layer::Dense { input, output, .. } => {
                if input != dim {
                    return Err(NnError::ShapeMismatch {
                        layer: i,
                        expected: input,
                        found: dim,
                    });
                }
                let p = params
                    .layer(i)
                    .ok_or_else(|| NnError::Incongruent(format!("missing parameters for layer {i}")))?;
                if p.weight.shape() != [output, input] {
                    return Err(NnError::Incongruent(format!(
                        "layer {i}: weight shape {:?}, expected [{output}, {input}]",
                        p.weight.shape()
                    )));
                }
                let mut out = matmul_bt(&cur, p.weight.data(), n, input, output);
                if let Some(b) = &p.bias {
                    for row in out.chunks_mut(output) {
                        for (o, bv) in row.iter_mut().zip(b.data()) {
                            *o += bv;
                        }
                    }
                }
                inputs.push(std::mem::replace(&mut cur, out));
                dim = output;
            }
            Layer::Relu => {
                let out = cur.iter().map(|&v| v.max(0.0)).collect();
                inputs.push(std::mem::replace(&mut cur, out));
            }
            Layer::Sigmoid => {
                let out = cur.iter().map(|&v| sigmoid(v)).collect();
                inputs.push(std::mem::replace(&mut cur, out));
            }
            Layer::SoftmaxXentHead => {
                inputs.push(cur.clone());
            }
        }
    }
    Ok(Trace {
        rows: n,
        inputs,
        output: cur,
        out_dim: dim,
    })
}

/// Logits of the network on `batch` (`rows × output_dim`).
pub fn forward(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor) -> Result<Tensor, NnError> {
    forward_trace(spec, params, batch).map(|t| t.logits())
}

/// Pulls `grad_out` (∂L/∂output, `rows × output_dim`) back through the
/// network. Returns the parameter gradient and ∂L/∂input.
pub fn backward(spec: &NetworkSpec, params: &ParamSet, trace: &Trace, grad_out: &[f64]) -> (GradSet, Vec<f64>) {
    let n = trace.rows;
    let mut grads = params.zeros_like();
    let mut g = grad_out.to_vec();
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let x = &trace.inputs[i];
        match *layer {
            Layer::Dense { input, output, .. } => {
                let p = params.layer(i).expect("forward checked layers");
                let gw = matmul_at(&g, x, n, output, input);
                let gp = grads.layer_mut(i).expect("congruent");
                gp.weight.data_mut().copy_from_slice(&gw);
                if let Some(gb) = gp.bias.as_mut() {
                    let gb = gb.data_mut();
                    for row in g.chunks(output) {
                        for (b, v) in gb.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                g = matmul(&g, p.weight.data(), n, output, input);
            }
            Layer::Relu => {
                for (gv, &xv) in g.iter_mut().zip(x) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            Layer::Sigmoid => {
                for (gv, &xv) in g.iter_mut().zip(x) {
                    let s = sigmoid(xv);
                    *gv *= s * (1.0 - s);
                }
            }
            Layer::SoftmaxXentHead => {}
        }
    }
    (grads, g)
}

/// Loss value, parameter gradient and input gradient for an arbitrary scalar
/// loss of the network output. `loss` receives the output buffer and returns
/// the loss together with ∂loss/∂output.
pub fn value_and_grad(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &Tensor,
    loss: impl FnOnce(&[f64], usize) -> Result<(f64, Vec<f64>), NnError>,
) -> Result<(f64, GradSet, Vec<f64>), NnError> {
    let trace = forward_trace(spec, params, batch)?;
    let (value, dout) = loss(trace.output(), trace.out_dim)?;
    let (grads, dinput) = backward(spec, params, &trace, &dout);
    Ok((value, grads, dinput))
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub fn softmax_xent(logits: &[f64], classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>), NnError> {
    let n = logits.len() / classes;
    if labels.len() != n {
        return Err(NnError::LabelCount {
            rows: n,
            labels: labels.len(),
        });
    }
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (r, (row, &y)) in logits.chunks(classes).zip(labels).enumerate() {
        if y >= classes {
            return Err(NnError::LabelOutOfRange {
                row: r,
                label: y,
                classes,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gv, v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Mean cross-entropy of the network on a labeled batch and its exact
/// gradient.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, GradSet), NnError> {
    let (loss, grads, _) = value_and_grad(spec, params, batch, |out, c| softmax_xent(out, c, labels))?;
    Ok((loss, grads))
}

/// Mean cross-entropy without gradients.
pub fn loss(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor, labels: &[usize]) -> Result<f64, NnError> {
    let logits = forward(spec, params, batch)?;
    softmax_xent(logits.data(), logits.cols(), labels).map(|(l, _)| l)
}

/// Arg-max class per row; ties go to the lowest class index.
pub fn predict(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor) -> Result<Vec<usize>, NnError> {
    let logits = forward(spec, params, batch)?;
    Ok(logits
        .data()
        .chunks(logits.cols())
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
