//! Layer math with explicit backward passes.
//!
//! Parameters live in one flat buffer described by a [`ParamLayout`]; layers
//! operate on slices into it. Sequences are never padded internally: a
//! document is an `L×d` matrix of real token embeddings, `L = 0` included
//! (pooled features and recurrent final states degrade to zeros). Gradients
//! therefore exist for every input component the forward pass actually
//! reads, which is what the finite-difference checks verify.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::num::Real;

#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: &str, rows: usize, cols: usize) {
        self.entries.push(ParamEntry {
            name: name.to_owned(),
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn slice<'a, R>(&self, buf: &'a [R], name: &str) -> &'a [R] {
        let e = self.entry(name);
        &buf[e.offset..e.offset + e.len()]
    }

    pub fn slice_mut<'a, R>(&self, buf: &'a mut [R], name: &str) -> &'a mut [R] {
        let e = self.entry(name);
        &mut buf[e.offset..e.offset + e.len()]
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// y = W x + b, W row-major (out × in).
pub(crate) fn dense_forward<R: Real>(w: &[R], b: &[R], x: &[R]) -> Vec<R> {
    let out = b.len();
    let inp = x.len();
    debug_assert_eq!(w.len(), out * inp);
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            crate::linalg::dot(row, x) + b[o]
        })
        .collect()
}

pub(crate) fn dense_backward<R: Real>(
    w: &[R],
    x: &[R],
    dy: &[R],
    dw: &mut [R],
    db: &mut [R],
) -> Vec<R> {
    let out = dy.len();
    let inp = x.len();
    let mut dx = vec![R::zero(); inp];
    for o in 0..out {
        db[o] += dy[o];
        let row = &w[o * inp..(o + 1) * inp];
        let drow = &mut dw[o * inp..(o + 1) * inp];
        for i in 0..inp {
            drow[i] += dy[o] * x[i];
            dx[i] += row[i] * dy[o];
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// 1-D convolution over the token axis, "same" zero padding, then ReLU
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct ConvTrace<R> {
    pub width: usize,
    /// Pre-activation (L × filters); empty for L = 0.
    pub pre: Matrix<R>,
    /// ReLU output (L × filters).
    pub act: Matrix<R>,
}

/// w is (filters × width·d); position t reads rows `t+j-pad_left`, zeros
/// outside the sequence.
pub(crate) fn conv1d_forward<R: Real>(
    w: &[R],
    b: &[R],
    x: &Matrix<R>,
    width: usize,
) -> ConvTrace<R> {
    let filters = b.len();
    let d = x.cols();
    let len = x.rows();
    let pad_left = (width - 1) / 2;
    let mut pre = Matrix::zeros(len, filters);
    for t in 0..len {
        for f in 0..filters {
            let wrow = &w[f * width * d..(f + 1) * width * d];
            let mut acc = b[f];
            for j in 0..width {
                let s = t as isize + j as isize - pad_left as isize;
                if s < 0 || s >= len as isize {
                    continue;
                }
                acc += crate::linalg::dot(&wrow[j * d..(j + 1) * d], x.row(s as usize));
            }
            pre.set(t, f, acc);
        }
    }
    let mut act = pre.clone();
    for v in act.as_mut_slice() {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
    ConvTrace { width, pre, act }
}

/// Backward through ReLU + convolution. `dact` is (L × filters).
pub(crate) fn conv1d_backward<R: Real>(
    w: &[R],
    x: &Matrix<R>,
    trace: &ConvTrace<R>,
    dact: &Matrix<R>,
    dw: &mut [R],
    db: &mut [R],
    dx: &mut Matrix<R>,
) {
    let filters = db.len();
    let d = x.cols();
    let len = x.rows();
    let width = trace.width;
    let pad_left = (width - 1) / 2;
    for t in 0..len {
        for f in 0..filters {
            if trace.pre.get(t, f) <= R::zero() {
                continue;
            }
            let g = dact.get(t, f);
            if g == R::zero() {
                continue;
            }
            db[f] += g;
            let wrow = &w[f * width * d..(f + 1) * width * d];
            let dwrow = &mut dw[f * width * d..(f + 1) * width * d];
            for j in 0..width {
                let s = t as isize + j as isize - pad_left as isize;
                if s < 0 || s >= len as isize {
                    continue;
                }
                let s = s as usize;
                let xrow = x.row(s);
                for u in 0..d {
                    dwrow[j * d + u] += g * xrow[u];
                }
                let dxrow = dx.row_mut(s);
                for u in 0..d {
                    dxrow[u] += g * wrow[j * d + u];
                }
            }
        }
    }
}

/// Column-wise max over positions with the winning row per filter. Empty
/// sequences pool to zeros with no winner.
pub(crate) fn max_pool<R: Real>(act: &Matrix<R>) -> (Vec<R>, Vec<Option<usize>>) {
    let filters = act.cols();
    if act.rows() == 0 {
        return (vec![R::zero(); filters], vec![None; filters]);
    }
    let mut pooled = vec![R::neg_infinity(); filters];
    let mut arg = vec![None; filters];
    for t in 0..act.rows() {
        for f in 0..filters {
            let v = act.get(t, f);
            if v > pooled[f] {
                pooled[f] = v;
                arg[f] = Some(t);
            }
        }
    }
    (pooled, arg)
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Per-step caches for backward-through-time. Gate order in the packed
/// weights is input, forget, cell, output.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace<R> {
    pub hidden: usize,
    /// h_t for t = 0..T (h[T-1] is the summary state; empty for T = 0).
    pub h: Vec<Vec<R>>,
    pub c: Vec<Vec<R>>,
    pub gates: Vec<[Vec<R>; 4]>,
}

impl<R: Real> LstmTrace<R> {
    pub fn final_state(&self) -> Vec<R> {
        self.h
            .last()
            .cloned()
            .unwrap_or_else(|| vec![R::zero(); self.hidden])
    }
}

/// Run an LSTM over the rows of `x`. `w` is (4H × D), `u` (4H × H), `b` (4H).
pub(crate) fn lstm_forward<R: Real>(
    w: &[R],
    u: &[R],
    b: &[R],
    x: &Matrix<R>,
    hidden: usize,
) -> LstmTrace<R> {
    let d = x.cols();
    let steps = x.rows();
    let mut h_prev = vec![R::zero(); hidden];
    let mut c_prev = vec![R::zero(); hidden];
    let mut trace = LstmTrace {
        hidden,
        h: Vec::with_capacity(steps),
        c: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let xt = x.row(t);
        let mut z = b.to_vec();
        for r in 0..4 * hidden {
            let wrow = &w[r * d..(r + 1) * d];
            let urow = &u[r * hidden..(r + 1) * hidden];
            z[r] += crate::linalg::dot(wrow, xt) + crate::linalg::dot(urow, &h_prev);
        }
        let i: Vec<R> = z[..hidden].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<R> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<R> = z[2 * hidden..3 * hidden].iter().map(|&v| v.tanh()).collect();
        let o: Vec<R> = z[3 * hidden..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<R> = (0..hidden)
            .map(|k| f[k] * c_prev[k] + i[k] * g[k])
            .collect();
        let h: Vec<R> = (0..hidden).map(|k| o[k] * c[k].tanh()).collect();
        trace.gates.push([i, f, g, o]);
        trace.c.push(c.clone());
        trace.h.push(h.clone());
        h_prev = h;
        c_prev = c;
    }
    trace
}

/// Backward-through-time from a gradient on the final hidden state.
/// Returns d(input rows); parameter gradients accumulate into the slices.
pub(crate) fn lstm_backward<R: Real>(
    w: &[R],
    u: &[R],
    x: &Matrix<R>,
    trace: &LstmTrace<R>,
    dh_final: &[R],
    dw: &mut [R],
    du: &mut [R],
    db: &mut [R],
    dx: &mut Matrix<R>,
) {
    let hidden = trace.hidden;
    let d = x.cols();
    let steps = x.rows();
    if steps == 0 {
        return;
    }
    let zero = vec![R::zero(); hidden];
    let mut dh = dh_final.to_vec();
    let mut dc = vec![R::zero(); hidden];
    for t in (0..steps).rev() {
        let [i, f, g, o] = &trace.gates[t];
        let c = &trace.c[t];
        let c_prev = if t == 0 { &zero } else { &trace.c[t - 1] };
        let h_prev = if t == 0 { &zero } else { &trace.h[t - 1] };

        let mut dz = vec![R::zero(); 4 * hidden];
        for k in 0..hidden {
            let tc = c[k].tanh();
            let do_ = dh[k] * tc;
            let dck = dc[k] + dh[k] * o[k] * (R::one() - tc * tc);
            let di = dck * g[k];
            let dg = dck * i[k];
            let df = dck * c_prev[k];
            dc[k] = dck * f[k];
            dz[k] = di * i[k] * (R::one() - i[k]);
            dz[hidden + k] = df * f[k] * (R::one() - f[k]);
            dz[2 * hidden + k] = dg * (R::one() - g[k] * g[k]);
            dz[3 * hidden + k] = do_ * o[k] * (R::one() - o[k]);
        }

        let xt = x.row(t);
        let mut dh_prev = vec![R::zero(); hidden];
        for r in 0..4 * hidden {
            let gz = dz[r];
            if gz == R::zero() {
                continue;
            }
            db[r] += gz;
            let wrow = &w[r * d..(r + 1) * d];
            let dwrow = &mut dw[r * d..(r + 1) * d];
            let dxrow = dx.row_mut(t);
            for col in 0..d {
                dwrow[col] += gz * xt[col];
                dxrow[col] += gz * wrow[col];
            }
            let urow = &u[r * hidden..(r + 1) * hidden];
            let durow = &mut du[r * hidden..(r + 1) * hidden];
            for k in 0..hidden {
                durow[k] += gz * h_prev[k];
                dh_prev[k] += gz * urow[k];
            }
        }
        dh = dh_prev;
    }
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling) and the shared classification head
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct DropoutTrace<R> {
    /// Kept-unit scale per component; identity in eval mode.
    pub scale: Option<Vec<R>>,
}

pub(crate) fn dropout_forward<R: Real>(
    x: &[R],
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Vec<R>, DropoutTrace<R>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = R::from_f64_lit(1.0 - rate);
            let inv = R::one() / keep;
            let scale: Vec<R> = x
                .iter()
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        R::zero()
                    } else {
                        inv
                    }
                })
                .collect();
            let out = x.iter().zip(&scale).map(|(&v, &s)| v * s).collect();
            (out, DropoutTrace { scale: Some(scale) })
        }
        _ => (x.to_vec(), DropoutTrace { scale: None }),
    }
}

pub(crate) fn dropout_backward<R: Real>(trace: &DropoutTrace<R>, dy: &[R]) -> Vec<R> {
    match &trace.scale {
        Some(scale) => dy.iter().zip(scale).map(|(&g, &s)| g * s).collect(),
        None => dy.to_vec(),
    }
}

pub(crate) fn relu_forward<R: Real>(x: &[R]) -> Vec<R> {
    x.iter().map(|&v| v.max(R::zero())).collect()
}

pub(crate) fn relu_backward<R: Real>(pre: &[R], dy: &[R]) -> Vec<R> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > R::zero() { g } else { R::zero() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{finite_difference_gradient, max_relative_error};

    #[test]
    fn dense_backward_matches_finite_differences() {
        let w = vec![0.3, -0.2, 0.5, 0.7, 0.1, -0.4]; // 2x3
        let b = vec![0.05, -0.1];
        let x = vec![1.0, -2.0, 0.5];
        // Scalar head: sum of outputs.
        let mut f = |params: &[f64]| {
            let (w, rest) = params.split_at(6);
            let (b, x) = rest.split_at(2);
            dense_forward(w, b, x).iter().sum::<f64>()
        };
        let mut flat = Vec::new();
        flat.extend(&w);
        flat.extend(&b);
        flat.extend(&x);
        let fd = finite_difference_gradient(&mut f, &flat, 1e-6);

        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        let dx = dense_backward(&w, &x, &[1.0, 1.0], &mut dw, &mut db);
        let mut analytic = Vec::new();
        analytic.extend(dw);
        analytic.extend(db);
        analytic.extend(dx);
        assert!(max_relative_error(&analytic, &fd) < 1e-7);
    }

    #[test]
    fn lstm_final_state_of_empty_sequence_is_zero() {
        let hidden = 3;
        let w = vec![0.1; 4 * hidden * 2];
        let u = vec![0.1; 4 * hidden * hidden];
        let b = vec![0.0; 4 * hidden];
        let x = Matrix::<f64>::zeros(0, 2);
        let t = lstm_forward(&w, &u, &b, &x, hidden);
        assert_eq!(t.final_state(), vec![0.0; hidden]);
    }

    #[test]
    fn conv_same_padding_shapes() {
        let d = 2;
        let filters = 2;
        let width = 3;
        let w: Vec<f64> = vec![0.5; filters * width * d];
        let b = vec![0.0; filters];
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let t = conv1d_forward(&w, &b, &x, width);
        assert_eq!(t.act.rows(), 2);
        assert_eq!(t.act.cols(), 2);
        // t=0: window rows {-1,0,1} -> rows 0,1 contribute: 0.5*(2 + 4) = 3
        assert!((t.act.get(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn max_pool_tracks_argmax() {
        let act = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]);
        let (pooled, arg) = max_pool(&act);
        assert_eq!(pooled, vec![3.0, 5.0]);
        assert_eq!(arg, vec![Some(1), Some(0)]);
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let x = vec![1.0, 2.0, 3.0];
        let (y, trace) = dropout_forward::<f64>(&x, 0.5, None);
        assert_eq!(y, x);
        assert!(trace.scale.is_none());
    }

    #[test]
    fn dropout_train_mode_scales_kept_units() {
        let mut rng = crate::rng::seeded_rng(3);
        let x: Vec<f64> = vec![1.0; 1000];
        let (y, _) = dropout_forward(&x, 0.3, Some(&mut rng));
        let kept = y.iter().filter(|&&v| v != 0.0).count();
        assert!((kept as f64 / 1000.0 - 0.7).abs() < 0.06);
        for &v in &y {
            assert!(v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
        }
    }
}
