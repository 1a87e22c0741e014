//! LSTM cell, directional scan, and the bidirectional layer with full BPTT.
//!
//! Gate order everywhere is [input, forget, cell-candidate, output], stacked
//! as four H-sized slices of the 4H pre-activation.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{sigmoid, xavier_fill};
use crate::Scalar;

/// Weights for one scan direction: input map W (4H × D), recurrent map
/// V (4H × H), bias b (4H).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams<F: Scalar> {
    pub w: Array2<F>,
    pub v: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> LstmDirectionParams<F> {
    /// Xavier-uniform W and V (per-gate fan), zero bias except the forget
    /// slice, which starts at 1 so early training does not flush memory.
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> LstmDirectionParams<F> {
        let mut w = Array2::zeros((4 * hidden, input_dim));
        xavier_fill(&mut w, input_dim, hidden, rng);
        let mut v = Array2::zeros((4 * hidden, hidden));
        xavier_fill(&mut v, hidden, hidden, rng);
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(F::one());
        LstmDirectionParams { w, v, b }
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Gradients with the same geometry as [`LstmDirectionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrads<F: Scalar> {
    pub w: Array2<F>,
    pub v: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> DirectionGrads<F> {
    pub fn zeros(input_dim: usize, hidden: usize) -> DirectionGrads<F> {
        DirectionGrads {
            w: Array2::zeros((4 * hidden, input_dim)),
            v: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }
}

/// Per-step activations kept for backward.
#[derive(Debug, Clone)]
pub struct StepCache<F: Scalar> {
    pub i: Array2<F>,
    pub f: Array2<F>,
    pub g: Array2<F>,
    pub o: Array2<F>,
    /// tanh(c_t), the output squash.
    pub tc: Array2<F>,
    pub c_prev: Array2<F>,
    pub h_prev: Array2<F>,
}

/// One cell step over a batch. Shapes: x_t (B×D), h_prev/c_prev (B×H).
fn step<F: Scalar>(
    x_t: ArrayView2<F>,
    h_prev: &Array2<F>,
    c_prev: &Array2<F>,
    p: &LstmDirectionParams<F>,
) -> (Array2<F>, Array2<F>, StepCache<F>) {
    let h = p.hidden();
    debug_assert_eq!(x_t.ncols(), p.input_dim());
    debug_assert_eq!(h_prev.ncols(), h);
    let mut a = x_t.dot(&p.w.t()) + h_prev.dot(&p.v.t());
    a += &p.b;
    let i = a.slice(s![.., 0..h]).mapv(sigmoid);
    let f = a.slice(s![.., h..2 * h]).mapv(sigmoid);
    let g = a.slice(s![.., 2 * h..3 * h]).mapv(|v| v.tanh());
    let o = a.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
    let c = &f * c_prev + &i * &g;
    let tc = c.mapv(|v| v.tanh());
    let h_t = &o * &tc;
    let cache = StepCache {
        i,
        f,
        g,
        o,
        tc,
        c_prev: c_prev.clone(),
        h_prev: h_prev.clone(),
    };
    (h_t, c, cache)
}

/// Reverse-mode step: given dL/dh_t and dL/dc_t (from later steps), push
/// gradients into the parameters and return (dx_t, dh_prev, dc_prev).
#[allow(clippy::too_many_arguments)]
fn step_backward<F: Scalar>(
    dh: &Array2<F>,
    dc_in: &Array2<F>,
    x_t: ArrayView2<F>,
    cache: &StepCache<F>,
    p: &LstmDirectionParams<F>,
    grads: &mut DirectionGrads<F>,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let h = p.hidden();
    let one = F::one();
    let StepCache {
        i,
        f,
        g,
        o,
        tc,
        c_prev,
        h_prev,
    } = cache;

    let d_o = dh * tc;
    let da_o = &d_o * o * &o.mapv(|v| one - v);
    let dc = dc_in + &(&(dh * o) * &tc.mapv(|v| one - v * v));
    let d_f = &dc * c_prev;
    let da_f = &d_f * f * &f.mapv(|v| one - v);
    let d_i = &dc * g;
    let da_i = &d_i * i * &i.mapv(|v| one - v);
    let d_g = &dc * i;
    let da_g = &d_g * &g.mapv(|v| one - v * v);
    let dc_prev = &dc * f;

    let bsz = dh.nrows();
    let mut da = Array2::zeros((bsz, 4 * h));
    da.slice_mut(s![.., 0..h]).assign(&da_i);
    da.slice_mut(s![.., h..2 * h]).assign(&da_f);
    da.slice_mut(s![.., 2 * h..3 * h]).assign(&da_g);
    da.slice_mut(s![.., 3 * h..4 * h]).assign(&da_o);

    grads.w += &da.t().dot(&x_t);
    grads.v += &da.t().dot(h_prev);
    grads.b += &da.sum_axis(Axis(0));

    let dx_t = da.dot(&p.w);
    let dh_prev = da.dot(&p.v);
    (dx_t, dh_prev, dc_prev)
}

/// Single-example cell step: the standard gate equations
/// i,f,o = sigmoid, g = tanh, c_t = f⊙c_prev + i⊙g, h_t = o⊙tanh(c_t).
pub fn lstm_cell_forward<F: Scalar>(
    x_t: ArrayView1<F>,
    h_prev: ArrayView1<F>,
    c_prev: ArrayView1<F>,
    p: &LstmDirectionParams<F>,
) -> Result<(Array1<F>, Array1<F>, StepCache<F>)> {
    if x_t.len() != p.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell_forward",
            detail: format!("x has {} features, params expect {}", x_t.len(), p.input_dim()),
        });
    }
    if h_prev.len() != p.hidden() || c_prev.len() != p.hidden() {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell_forward",
            detail: format!(
                "state sizes ({}, {}) do not match hidden size {}",
                h_prev.len(),
                c_prev.len(),
                p.hidden()
            ),
        });
    }
    let h_prev = h_prev.insert_axis(Axis(0)).to_owned();
    let c_prev = c_prev.insert_axis(Axis(0)).to_owned();
    let (h_t, c_t, cache) = step(x_t.insert_axis(Axis(0)), &h_prev, &c_prev, p);
    Ok((h_t.row(0).to_owned(), c_t.row(0).to_owned(), cache))
}

/// Everything one directional pass needs for BPTT. `x` is stored in scan
/// order (already time-reversed for the backward direction).
#[derive(Debug, Clone)]
pub struct ScanCache<F: Scalar> {
    pub x: Array3<F>,
    pub steps: Vec<StepCache<F>>,
    /// h_t for every step, (B × L × H) in scan order.
    pub hs: Array3<F>,
}

/// Run one direction over the whole window from zero initial state.
pub fn scan_forward<F: Scalar>(x: Array3<F>, p: &LstmDirectionParams<F>) -> ScanCache<F> {
    let (bsz, len, _) = x.dim();
    let hidden = p.hidden();
    let mut h = Array2::zeros((bsz, hidden));
    let mut c = Array2::zeros((bsz, hidden));
    let mut hs = Array3::zeros((bsz, len, hidden));
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let (h_t, c_t, cache) = step(x.slice(s![.., t, ..]), &h, &c, p);
        hs.slice_mut(s![.., t, ..]).assign(&h_t);
        steps.push(cache);
        h = h_t;
        c = c_t;
    }
    ScanCache { x, steps, hs }
}

/// BPTT over one direction. `d_hs` holds dL/dh_t per step in scan order.
pub fn scan_backward<F: Scalar>(
    cache: &ScanCache<F>,
    p: &LstmDirectionParams<F>,
    d_hs: &Array3<F>,
) -> (Array3<F>, DirectionGrads<F>) {
    let (bsz, len, _) = cache.x.dim();
    let hidden = p.hidden();
    let mut grads = DirectionGrads::zeros(p.input_dim(), hidden);
    let mut dx = Array3::zeros(cache.x.dim());
    let mut dh_next: Array2<F> = Array2::zeros((bsz, hidden));
    let mut dc_next: Array2<F> = Array2::zeros((bsz, hidden));
    for t in (0..len).rev() {
        let dh = &d_hs.slice(s![.., t, ..]) + &dh_next;
        let (dx_t, dh_prev, dc_prev) = step_backward(
            &dh,
            &dc_next,
            cache.x.slice(s![.., t, ..]),
            &cache.steps[t],
            p,
            &mut grads,
        );
        dx.slice_mut(s![.., t, ..]).assign(&dx_t);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    (dx, grads)
}

/// How the per-step outputs collapse to one vector per example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryMode {
    /// concat(forward h at the last valid step, backward h at position 0).
    LastFirst,
    /// Mean over valid positions of the concatenated directional outputs.
    MeanPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams<F: Scalar> {
    pub fwd: LstmDirectionParams<F>,
    pub bwd: LstmDirectionParams<F>,
}

impl<F: Scalar> BiLstmParams<F> {
    /// Draw order is fixed (fwd.w, fwd.v, bwd.w, bwd.v) so a given seed
    /// always produces the same layer.
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> BiLstmParams<F> {
        BiLstmParams {
            fwd: LstmDirectionParams::new(input_dim, hidden, rng),
            bwd: LstmDirectionParams::new(input_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<F: Scalar> {
    pub fwd: ScanCache<F>,
    /// Backward direction, realized as a forward scan over time-reversed
    /// input; index L−1−t corresponds to original position t.
    pub bwd: ScanCache<F>,
    pub lengths: Vec<usize>,
    pub mode: SummaryMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmGrads<F: Scalar> {
    pub fwd: DirectionGrads<F>,
    pub bwd: DirectionGrads<F>,
}

fn check_bilstm_shapes<F: Scalar>(
    x: &Array3<F>,
    lengths: &[usize],
    p: &BiLstmParams<F>,
) -> Result<()> {
    let (bsz, len, dim) = x.dim();
    if dim != p.input_dim() || p.bwd.input_dim() != p.fwd.input_dim()
        || p.bwd.hidden() != p.fwd.hidden()
    {
        return Err(Error::ShapeMismatch {
            op: "bilstm_forward",
            detail: format!(
                "input dim {dim} vs params (fwd {}×{}, bwd {}×{})",
                p.fwd.input_dim(),
                p.fwd.hidden(),
                p.bwd.input_dim(),
                p.bwd.hidden()
            ),
        });
    }
    if lengths.len() != bsz {
        return Err(Error::ShapeMismatch {
            op: "bilstm_forward",
            detail: format!("{} lengths for a batch of {bsz}", lengths.len()),
        });
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l > len) {
        return Err(Error::ShapeMismatch {
            op: "bilstm_forward",
            detail: format!("length {bad} exceeds window {len}"),
        });
    }
    Ok(())
}

/// Both directions over the padded window, collapsed to a (B × 2H) summary.
/// Rows with length 0 summarize to zeros.
pub fn bilstm_forward<F: Scalar>(
    x: &Array3<F>,
    lengths: &[usize],
    p: &BiLstmParams<F>,
    mode: SummaryMode,
) -> Result<(Array2<F>, BiLstmCache<F>)> {
    check_bilstm_shapes(x, lengths, p)?;
    let (bsz, len, _) = x.dim();
    let hidden = p.hidden();

    let fwd = scan_forward(x.clone(), &p.fwd);
    let x_rev = x.slice(s![.., ..;-1, ..]).to_owned();
    let bwd = scan_forward(x_rev, &p.bwd);

    let mut summary = Array2::zeros((bsz, 2 * hidden));
    for b in 0..bsz {
        let true_len = lengths[b];
        if true_len == 0 {
            continue;
        }
        match mode {
            SummaryMode::LastFirst => {
                summary
                    .slice_mut(s![b, 0..hidden])
                    .assign(&fwd.hs.slice(s![b, true_len - 1, ..]));
                summary
                    .slice_mut(s![b, hidden..])
                    .assign(&bwd.hs.slice(s![b, len - 1, ..]));
            }
            SummaryMode::MeanPool => {
                let scale = F::from_f(1.0 / true_len as f64);
                for t in 0..true_len {
                    let mut front = summary.slice_mut(s![b, 0..hidden]);
                    front += &fwd.hs.slice(s![b, t, ..]).mapv(|v| v * scale);
                    let mut back = summary.slice_mut(s![b, hidden..]);
                    back += &bwd.hs.slice(s![b, len - 1 - t, ..]).mapv(|v| v * scale);
                }
            }
        }
    }
    let cache = BiLstmCache {
        fwd,
        bwd,
        lengths: lengths.to_vec(),
        mode,
    };
    Ok((summary, cache))
}

/// BPTT through both directions; returns dL/dx in original time order.
pub fn bilstm_backward<F: Scalar>(
    d_summary: &Array2<F>,
    cache: &BiLstmCache<F>,
    p: &BiLstmParams<F>,
) -> (Array3<F>, BiLstmGrads<F>) {
    let (bsz, len, _) = cache.fwd.x.dim();
    let hidden = p.hidden();
    let mut d_hs_f: Array3<F> = Array3::zeros((bsz, len, hidden));
    let mut d_hs_b: Array3<F> = Array3::zeros((bsz, len, hidden));
    for b in 0..bsz {
        let true_len = cache.lengths[b];
        if true_len == 0 {
            continue;
        }
        match cache.mode {
            SummaryMode::LastFirst => {
                d_hs_f
                    .slice_mut(s![b, true_len - 1, ..])
                    .assign(&d_summary.slice(s![b, 0..hidden]));
                d_hs_b
                    .slice_mut(s![b, len - 1, ..])
                    .assign(&d_summary.slice(s![b, hidden..]));
            }
            SummaryMode::MeanPool => {
                let scale = F::from_f(1.0 / true_len as f64);
                for t in 0..true_len {
                    let mut front = d_hs_f.slice_mut(s![b, t, ..]);
                    front += &d_summary.slice(s![b, 0..hidden]).mapv(|v| v * scale);
                    let mut back = d_hs_b.slice_mut(s![b, len - 1 - t, ..]);
                    back += &d_summary.slice(s![b, hidden..]).mapv(|v| v * scale);
                }
            }
        }
    }
    let (dx_f, grads_f) = scan_backward(&cache.fwd, &p.fwd, &d_hs_f);
    let (dx_b, grads_b) = scan_backward(&cache.bwd, &p.bwd, &d_hs_b);
    let dx = dx_f + dx_b.slice(s![.., ..;-1, ..]);
    (
        dx,
        BiLstmGrads {
            fwd: grads_f,
            bwd: grads_b,
        },
    )
}
