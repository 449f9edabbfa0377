//! Forward and backward passes.
//!
//! Word-level features (embeddings → convolutions → highway) are computed
//! once per distinct surface in a window; the recurrent part runs over
//! `T` steps × `B` parallel streams with one matrix column per stream.

use nalgebra::{DMatrix, DVector};

use super::model::{LanguageModel, LstmLayer, ModelConfig, ModelWeights, LSTM_LAYERS};
use super::vocab::{CharVocab, PAD};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) struct HighwayCache {
    input: DMatrix<f64>,
    gate: DMatrix<f64>,
    proj: DMatrix<f64>,
}

/// Word-level features for a set of distinct surfaces (one column each).
pub(crate) struct CharForward {
    ids: Vec<Vec<usize>>,
    /// (max_word_len · char_embed_dim) × U
    pub embedding: DMatrix<f64>,
    /// For each conv bank, filters × U argmax positions.
    argmax: Vec<Vec<usize>>,
    /// conv_dim × U, tanh of the max-pooled pre-activations
    pub conv: DMatrix<f64>,
    highway: Vec<HighwayCache>,
    /// conv_dim × U, input to the first LSTM layer
    pub output: DMatrix<f64>,
}

pub(crate) fn char_forward(cfg: &ModelConfig, w: &ModelWeights, chars: &CharVocab, surfaces: &[&str]) -> CharForward {
    let e = cfg.char_embed_dim;
    let len = cfg.max_word_len;
    let u = surfaces.len();
    let ids: Vec<Vec<usize>> = surfaces.iter().map(|s| chars.encode_word(s, len)).collect();

    let mut embedding = DMatrix::zeros(len * e, u);
    for (col, word) in ids.iter().enumerate() {
        for (p, &id) in word.iter().enumerate() {
            if id != PAD {
                for k in 0..e {
                    embedding[(p * e + k, col)] = w.char_embedding[(id, k)];
                }
            }
        }
    }

    let mut conv = DMatrix::zeros(cfg.conv_dim(), u);
    let mut argmax = Vec::with_capacity(w.conv.len());
    let mut row0 = 0;
    for bank in &w.conv {
        let span = bank.width * e;
        let npos = len - bank.width + 1;
        // Unfolded windows: column (word, position) is a contiguous slice of
        // the word's concatenated embeddings.
        let mut unfolded = DMatrix::zeros(span, u * npos);
        for col in 0..u {
            let src = embedding.column(col);
            for p in 0..npos {
                unfolded
                    .column_mut(col * npos + p)
                    .copy_from(&src.rows(p * e, span));
            }
        }
        let pre = &bank.kernel * &unfolded;
        let nf = bank.kernel.nrows();
        let mut arg = vec![0usize; nf * u];
        for col in 0..u {
            for f in 0..nf {
                let (mut best, mut best_p) = (f64::NEG_INFINITY, 0);
                for p in 0..npos {
                    let v = pre[(f, col * npos + p)];
                    if v > best {
                        best = v;
                        best_p = p;
                    }
                }
                arg[f * u + col] = best_p;
                conv[(row0 + f, col)] = (best + bank.bias[f]).tanh();
            }
        }
        argmax.push(arg);
        row0 += nf;
    }

    let mut z = conv.clone();
    let mut highway = Vec::with_capacity(w.highway.len());
    for hw in &w.highway {
        let mut gate = &hw.gate_w * &z;
        let mut proj = &hw.proj_w * &z;
        for mut c in gate.column_iter_mut() {
            c += &hw.gate_b;
            c.apply(|v| *v = sigmoid(*v));
        }
        for mut c in proj.column_iter_mut() {
            c += &hw.proj_b;
            c.apply(|v| *v = v.max(0.0));
        }
        let next = gate.zip_zip_map(&proj, &z, |t, g, x| t * g + (1.0 - t) * x);
        highway.push(HighwayCache { input: z, gate, proj });
        z = next;
    }

    CharForward {
        ids,
        embedding,
        argmax,
        conv,
        highway,
        output: z,
    }
}

/// Accumulates gradients of the word-level layers given `d_output`
/// (conv_dim × U).
pub(crate) fn char_backward(cfg: &ModelConfig, w: &ModelWeights, cache: &CharForward, d_output: DMatrix<f64>, grads: &mut ModelWeights) {
    let e = cfg.char_embed_dim;
    let len = cfg.max_word_len;
    let u = cache.ids.len();

    let mut dz = d_output;
    for (hw, (hc, g)) in w.highway.iter().zip(cache.highway.iter().zip(grads.highway.iter_mut())).rev() {
        let d_gate_pre = dz.zip_zip_map(&hc.proj, &hc.input, |d, p, x| d * (p - x))
            .component_mul(&hc.gate.map(|t| t * (1.0 - t)));
        let d_proj_pre = dz.zip_zip_map(&hc.gate, &hc.proj, |d, t, p| if p > 0.0 { d * t } else { 0.0 });
        let carry = dz.zip_map(&hc.gate, |d, t| d * (1.0 - t));
        g.gate_w += &d_gate_pre * hc.input.transpose();
        g.gate_b += d_gate_pre.column_sum();
        g.proj_w += &d_proj_pre * hc.input.transpose();
        g.proj_b += d_proj_pre.column_sum();
        dz = carry + hw.gate_w.tr_mul(&d_gate_pre) + hw.proj_w.tr_mul(&d_proj_pre);
    }

    let mut d_emb = DMatrix::<f64>::zeros(len * e, u);
    let mut row0 = 0;
    for (k, bank) in w.conv.iter().enumerate() {
        let nf = bank.kernel.nrows();
        let span = bank.width * e;
        let gk = &mut grads.conv[k];
        for col in 0..u {
            for f in 0..nf {
                let out = cache.conv[(row0 + f, col)];
                let ds = dz[(row0 + f, col)] * (1.0 - out * out);
                if ds == 0.0 {
                    continue;
                }
                let p = cache.argmax[k][f * u + col];
                gk.bias[f] += ds;
                for j in 0..span {
                    gk.kernel[(f, j)] += ds * cache.embedding[(p * e + j, col)];
                    d_emb[(p * e + j, col)] += ds * bank.kernel[(f, j)];
                }
            }
        }
        row0 += nf;
    }

    for (col, word) in cache.ids.iter().enumerate() {
        for (p, &id) in word.iter().enumerate() {
            if id != PAD {
                for k in 0..e {
                    grads.char_embedding[(id, k)] += d_emb[(p * e + k, col)];
                }
            }
        }
    }
}

pub(crate) struct LstmCache {
    x: DMatrix<f64>,
    h_prev: DMatrix<f64>,
    c_prev: DMatrix<f64>,
    i: DMatrix<f64>,
    f: DMatrix<f64>,
    o: DMatrix<f64>,
    g: DMatrix<f64>,
    tanh_c: DMatrix<f64>,
}

pub(crate) fn lstm_forward(layer: &LstmLayer, x: DMatrix<f64>, h_prev: DMatrix<f64>, c_prev: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, LstmCache) {
    let h = layer.w_recurrent.ncols();
    let mut gates = &layer.w_input * &x + &layer.w_recurrent * &h_prev;
    for mut c in gates.column_iter_mut() {
        c += &layer.bias;
    }
    let i = gates.rows(0, h).map(sigmoid);
    let f = gates.rows(h, h).map(sigmoid);
    let o = gates.rows(2 * h, h).map(sigmoid);
    let g = gates.rows(3 * h, h).map(f64::tanh);
    let c = f.component_mul(&c_prev) + i.component_mul(&g);
    let tanh_c = c.map(f64::tanh);
    let h_new = o.component_mul(&tanh_c);
    let cache = LstmCache {
        x,
        h_prev,
        c_prev,
        i,
        f,
        o,
        g,
        tanh_c,
    };
    (h_new, c, cache)
}

/// Returns (d_input, d_h_prev, d_c_prev).
pub(crate) fn lstm_backward(
    layer: &LstmLayer,
    cache: &LstmCache,
    dh: &DMatrix<f64>,
    dc_next: &DMatrix<f64>,
    grads: &mut LstmLayer,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let h = layer.w_recurrent.ncols();
    let b = dh.ncols();
    let dc = dc_next + dh.component_mul(&cache.o).component_mul(&cache.tanh_c.map(|t| 1.0 - t * t));
    let mut dgates = DMatrix::zeros(4 * h, b);
    dgates
        .rows_mut(0, h)
        .copy_from(&dc.component_mul(&cache.g).component_mul(&cache.i.map(|v| v * (1.0 - v))));
    dgates
        .rows_mut(h, h)
        .copy_from(&dc.component_mul(&cache.c_prev).component_mul(&cache.f.map(|v| v * (1.0 - v))));
    dgates
        .rows_mut(2 * h, h)
        .copy_from(&dh.component_mul(&cache.tanh_c).component_mul(&cache.o.map(|v| v * (1.0 - v))));
    dgates
        .rows_mut(3 * h, h)
        .copy_from(&dc.component_mul(&cache.i).component_mul(&cache.g.map(|v| 1.0 - v * v)));
    grads.w_input += &dgates * cache.x.transpose();
    grads.w_recurrent += &dgates * cache.h_prev.transpose();
    grads.bias += dgates.column_sum();
    let dx = layer.w_input.tr_mul(&dgates);
    let dh_prev = layer.w_recurrent.tr_mul(&dgates);
    let dc_prev = dc.component_mul(&cache.f);
    (dx, dh_prev, dc_prev)
}

/// Column-wise log-softmax of `logits`.
pub(crate) fn log_softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut c in out.column_iter_mut() {
        let m = c.max();
        let lse = m + c.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        c.apply(|v| *v -= lse);
    }
    out
}

pub(crate) fn output_logits(w: &ModelWeights, h_top: &DMatrix<f64>) -> DMatrix<f64> {
    let mut logits = &w.out_w * h_top;
    for mut c in logits.column_iter_mut() {
        c += &w.out_b;
    }
    logits
}

/// Recurrent state for `B` parallel streams.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub h: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
}

impl BatchState {
    pub fn zeros(cfg: &ModelConfig, streams: usize) -> Self {
        let z = DMatrix::zeros(cfg.lstm_hidden_dim, streams);
        BatchState {
            h: vec![z.clone(); LSTM_LAYERS],
            c: vec![z; LSTM_LAYERS],
        }
    }

    fn reset_columns(&mut self, mask: &[bool]) {
        for m in self.h.iter_mut().chain(self.c.iter_mut()) {
            for (b, &r) in mask.iter().enumerate() {
                if r {
                    m.column_mut(b).fill(0.0);
                }
            }
        }
    }
}

/// One time step across all streams.
pub(crate) struct Step {
    /// Index into the window's distinct surfaces, per stream.
    pub word: Vec<usize>,
    /// Zero this stream's state before the step (document start).
    pub reset: Vec<bool>,
    /// Target word id, or `None` when the position is excluded from the loss.
    pub target: Vec<Option<usize>>,
}

pub(crate) struct Window<'a> {
    pub surfaces: Vec<&'a str>,
    pub steps: Vec<Step>,
}

impl Window<'_> {
    pub fn counted_targets(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.target.iter().filter(|t| t.is_some()).count())
            .sum()
    }
}

/// Runs a window forward from `state` (which is advanced in place),
/// returning the summed negative log-likelihood over counted targets. When
/// `grads` is given, accumulates gradients of the *mean* NLL over
/// `normalizer` targets.
pub(crate) fn window_pass(
    model: &LanguageModel,
    window: &Window<'_>,
    state: &mut BatchState,
    grads: Option<(&mut ModelWeights, f64)>,
) -> f64 {
    let cfg = &model.config;
    let w = &model.weights;
    let chars = char_forward(cfg, w, &model.chars, &window.surfaces);
    let d = cfg.conv_dim();

    let mut nll = 0.0;
    let mut caches: Vec<Vec<LstmCache>> = Vec::with_capacity(window.steps.len());
    let mut probs: Vec<DMatrix<f64>> = Vec::with_capacity(window.steps.len());
    let mut tops: Vec<DMatrix<f64>> = Vec::with_capacity(window.steps.len());
    let keep = grads.is_some();

    for step in &window.steps {
        state.reset_columns(&step.reset);
        let b = step.word.len();
        let mut input = DMatrix::from_fn(d, b, |r, col| chars.output[(r, step.word[col])]);
        let mut step_caches = Vec::with_capacity(LSTM_LAYERS);
        for (l, layer) in w.lstm.iter().enumerate() {
            let (h, c, cache) = lstm_forward(layer, input, state.h[l].clone(), state.c[l].clone());
            state.h[l] = h.clone();
            state.c[l] = c;
            input = h;
            if keep {
                step_caches.push(cache);
            }
        }
        let logp = log_softmax_columns(&output_logits(w, &input));
        for (col, t) in step.target.iter().enumerate() {
            if let Some(t) = t {
                nll -= logp[(*t, col)];
            }
        }
        if keep {
            caches.push(step_caches);
            probs.push(logp.map(f64::exp));
            tops.push(input);
        }
    }

    let Some((grads, normalizer)) = grads else {
        return nll;
    };
    let scale = 1.0 / normalizer;
    let b = window.steps.first().map_or(0, |s| s.word.len());
    let hdim = cfg.lstm_hidden_dim;
    let mut dh_next = vec![DMatrix::zeros(hdim, b); LSTM_LAYERS];
    let mut dc_next = vec![DMatrix::zeros(hdim, b); LSTM_LAYERS];
    let mut d_words = DMatrix::<f64>::zeros(d, window.surfaces.len());

    for (t, step) in window.steps.iter().enumerate().rev() {
        let mut dlogits = probs[t].clone();
        for (col, target) in step.target.iter().enumerate() {
            match target {
                Some(y) => {
                    dlogits[(*y, col)] -= 1.0;
                    dlogits.column_mut(col).scale_mut(scale);
                }
                None => dlogits.column_mut(col).fill(0.0),
            }
        }
        grads.out_w += &dlogits * tops[t].transpose();
        grads.out_b += dlogits.column_sum();
        let mut dh = w.out_w.tr_mul(&dlogits);
        for l in (0..LSTM_LAYERS).rev() {
            dh += &dh_next[l];
            let (dx, dh_prev, dc_prev) = lstm_backward(&w.lstm[l], &caches[t][l], &dh, &dc_next[l], &mut grads.lstm[l]);
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            dh = dx;
        }
        for (col, &word) in step.word.iter().enumerate() {
            let mut dst = d_words.column_mut(word);
            dst += dh.column(col);
        }
        // State was zeroed before this step on reset streams, so nothing
        // flows further back for them.
        for (col, &r) in step.reset.iter().enumerate() {
            if r {
                for l in 0..LSTM_LAYERS {
                    dh_next[l].column_mut(col).fill(0.0);
                    dc_next[l].column_mut(col).fill(0.0);
                }
            }
        }
    }
    char_backward(cfg, w, &chars, d_words, grads);
    nll
}

/// Single-stream state for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<DVector<f64>>,
    pub c: Vec<DVector<f64>>,
}

impl LstmState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let z = DVector::zeros(cfg.lstm_hidden_dim);
        LstmState {
            h: vec![z.clone(); LSTM_LAYERS],
            c: vec![z; LSTM_LAYERS],
        }
    }
}
