//! Training: exact analytic gradients of the bits-per-point objective,
//! an Adam optimizer over the flat parameter vector, and a central
//! finite-difference gradient checker that runs the model at f64.

use crate::error::{Error, Result};
use crate::geometry::Hierarchy;
use crate::model::forward::{hierarchy_bits, hierarchy_forward, NeighborTable, ScaleForward};
use crate::model::{Fop, Scalar, COST_EPS};

/// Loss (bits per finest-level point) and its gradient with respect to
/// every parameter, in layout order.
pub fn loss_and_grad<T: Scalar>(model: &Fop<T>, h: &Hierarchy) -> Result<(f64, Vec<T>)> {
    let (bits, scales) = hierarchy_forward(model, h)?;
    let n_points = h.point_count() as f64;
    let loss = bits / n_points;
    let mut grad = vec![T::zero(); model.layout.total];
    // d loss / d logit flows through -log2(p+eps): coef * (p - onehot)
    // with coef = p_t / ((p_t + eps) * ln2 * N).
    let inv_ln2_n = T::from_f64(1.0 / (n_points * std::f64::consts::LN_2));
    let eps = T::from_f64(COST_EPS);
    let c = model.config.channels;
    for sf in &scales {
        let n = sf.n;
        let mut dbase = vec![T::zero(); n * c];
        for j in 0..model.num_stages() {
            stage_backward(model, sf, j, inv_ln2_n, eps, &mut grad, &mut dbase);
        }
        if sf.parent_codes.is_empty() {
            let r0 = model.layout.root_emb.start;
            for v in 0..n {
                for i in 0..c {
                    grad[r0 + i] += dbase[v * c + i];
                }
            }
        } else {
            let pe = model.layout.prior_code_emb.start;
            let oe = model.layout.octant_emb.start;
            for v in 0..n {
                let pc = sf.parent_codes[v] as usize;
                let oc = sf.octants[v] as usize;
                for i in 0..c {
                    let g = dbase[v * c + i];
                    grad[pe + pc * c + i] += g;
                    grad[oe + oc * c + i] += g;
                }
            }
        }
    }
    Ok((loss, grad))
}

fn stage_backward<T: Scalar>(
    model: &Fop<T>,
    sf: &ScaleForward<T>,
    j: usize,
    inv_ln2_n: T,
    eps: T,
    grad: &mut [T],
    dbase: &mut [T],
) {
    let cfg = &model.config;
    let c = cfg.channels;
    let st = &model.layout.stages[j];
    let acts = &sf.stages[j];
    let n = sf.n;
    let s = 1usize << st.width;

    let mut dlogits = vec![T::zero(); n * s];
    for v in 0..n {
        let t = sf.segments[j][v] as usize;
        let prow = &acts.probs[v * s..][..s];
        let coef = prow[t] / (prow[t] + eps) * inv_ln2_n;
        let drow = &mut dlogits[v * s..][..s];
        for k in 0..s {
            drow[k] = coef * prow[k];
        }
        drow[t] -= coef;
    }

    // Head: logits = head_in . W + b.
    let head_in = acts.head_input();
    let hw = model.p(&st.head_w);
    let mut dy = vec![T::zero(); n * c];
    for v in 0..n {
        let x = &head_in[v * c..][..c];
        let dl = &dlogits[v * s..][..s];
        for (k, &g) in dl.iter().enumerate() {
            grad[st.head_b.start + k] += g;
        }
        for ci in 0..c {
            let xi = x[ci];
            let wrow = &hw[ci * s..][..s];
            let g0 = st.head_w.start + ci * s;
            let mut acc = T::zero();
            for (k, &g) in dl.iter().enumerate() {
                grad[g0 + k] += xi * g;
                acc += wrow[k] * g;
            }
            dy[v * c + ci] = acc;
        }
    }

    // Stage refresh off: head input was last block output + bit embedding,
    // so the embedding rows take the same gradient as the block output.
    if j > 0 && !cfg.stage_refresh {
        scatter_bit_embedding(grad, st.bit_emb.start, &sf.prefixes[j], &dy, c);
    }

    for bi in (0..st.blocks.len()).rev() {
        let bl = &st.blocks[bi];
        let a = &acts.blocks[bi].0;
        let mut da = vec![T::zero(); n * c];
        mix_backward(a, n, c, model.p(&bl.w2), sf.nt.as_ref(), &dy, grad, bl.w2.start, bl.b2.start, &mut da);
        // ReLU: pass gradient only where the activation was positive.
        for (d, &ai) in da.iter_mut().zip(a.iter()) {
            if ai <= T::zero() {
                *d = T::zero();
            }
        }
        let x_in: &[T] = if bi == 0 { &acts.x0 } else { &acts.blocks[bi - 1].1 };
        let mut dx = vec![T::zero(); n * c];
        mix_backward(x_in, n, c, model.p(&bl.w1), sf.nt.as_ref(), &da, grad, bl.w1.start, bl.b1.start, &mut dx);
        dy = dx;
    }

    if j > 0 && cfg.stage_refresh {
        scatter_bit_embedding(grad, st.bit_emb.start, &sf.prefixes[j], &dy, c);
    }
    for i in 0..n * c {
        dbase[i] += dy[i];
    }
}

fn scatter_bit_embedding<T: Scalar>(
    grad: &mut [T],
    emb_start: usize,
    prefixes: &[u16],
    d: &[T],
    c: usize,
) {
    for (v, &q) in prefixes.iter().enumerate() {
        let g0 = emb_start + q as usize * c;
        for i in 0..c {
            grad[g0 + i] += d[v * c + i];
        }
    }
}

/// Backward of one conv or linear mix: accumulates weight and bias
/// gradients into `grad` at the given layout offsets and the input
/// gradient into `dinput`.
fn mix_backward<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    w: &[T],
    nt: Option<&NeighborTable>,
    dout: &[T],
    grad: &mut [T],
    w_start: usize,
    b_start: usize,
    dinput: &mut [T],
) {
    match nt {
        Some(nt) => {
            for v in 0..n {
                let drow = &dout[v * c..][..c];
                for (co, &g) in drow.iter().enumerate() {
                    grad[b_start + co] += g;
                }
                for (oi, &nb) in nt.row(v).iter().enumerate() {
                    if nb < 0 {
                        continue;
                    }
                    let nb = nb as usize;
                    let src = &input[nb * c..][..c];
                    let wofs = &w[oi * c * c..][..c * c];
                    let gofs = w_start + oi * c * c;
                    for (ci, &x) in src.iter().enumerate() {
                        let wrow = &wofs[ci * c..][..c];
                        let g0 = gofs + ci * c;
                        let mut acc = T::zero();
                        for (co, &g) in drow.iter().enumerate() {
                            grad[g0 + co] += x * g;
                            acc += wrow[co] * g;
                        }
                        dinput[nb * c + ci] += acc;
                    }
                }
            }
        }
        None => {
            for v in 0..n {
                let drow = &dout[v * c..][..c];
                for (co, &g) in drow.iter().enumerate() {
                    grad[b_start + co] += g;
                }
                let src = &input[v * c..][..c];
                for (ci, &x) in src.iter().enumerate() {
                    let wrow = &w[ci * c..][..c];
                    let g0 = w_start + ci * c;
                    let mut acc = T::zero();
                    for (co, &g) in drow.iter().enumerate() {
                        grad[g0 + co] += x * g;
                        acc += wrow[co] * g;
                    }
                    dinput[v * c + ci] += acc;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { step: 0, m: vec![0.0; param_count], v: vec![0.0; param_count] }
    }
}

/// One Adam step on one hierarchy. Returns the loss (bits per point)
/// measured before the update.
pub fn train_step(
    model: &mut Fop<f32>,
    batch: &Hierarchy,
    state: &mut AdamState,
    hp: &Hyper,
) -> Result<f64> {
    assert_eq!(state.m.len(), model.params.len(), "optimizer state size mismatch");
    let (loss, grad) = loss_and_grad(model, batch)?;
    if !loss.is_finite() {
        return Err(Error::DivergedTraining);
    }
    state.step += 1;
    let bc1 = 1.0 - (hp.beta1 as f64).powi(state.step as i32);
    let bc2 = 1.0 - (hp.beta2 as f64).powi(state.step as i32);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let mhat = state.m[i] as f64 / bc1;
        let vhat = state.v[i] as f64 / bc2;
        model.params[i] -= (hp.lr as f64 * mhat / (vhat.sqrt() + hp.eps as f64)) as f32;
    }
    Ok(loss)
}

/// Compares the analytic gradient of every parameter against central
/// finite differences (h = 1e-5) at double precision. Returns the max
/// relative error with denominator max(|analytic|, |numeric|, 1e-8).
pub fn grad_check(model: &Fop<f32>, batch: &Hierarchy) -> Result<f64> {
    let mut m = model.to_f64();
    let (_, grad) = loss_and_grad(&m, batch)?;
    let n_points = batch.point_count() as f64;
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for i in 0..m.params.len() {
        let orig = m.params[i];
        m.params[i] = orig + h;
        let lp = hierarchy_bits(&m, batch)? / n_points;
        m.params[i] = orig - h;
        let lm = hierarchy_bits(&m, batch)? / n_points;
        m.params[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
