//! Straight-line f64 forward pass over the raw tensors, written without the
//! engine's code paths. Used as an oracle by integration tests.

use featdesc::model::ModelConfig;
use featdesc::weights::TensorStore;

pub struct Reference {
    cfg: ModelConfig,
    store: TensorStore,
}

/// Optional edit at a residual-post layer: `v += (m - relu(w·v + b))·dir`,
/// with a JumpReLU threshold.
pub struct RefClamp {
    pub layer: usize,
    pub enc: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub dir: Vec<f64>,
    pub value: f64,
}

fn mat(store: &TensorStore, name: &str) -> Vec<Vec<f64>> {
    let t = store.get(name).unwrap();
    let (r, c) = (t.shape[0], t.shape[1]);
    (0..r)
        .map(|i| (0..c).map(|j| t.data[i * c + j] as f64).collect())
        .collect()
}

fn vecf(store: &TensorStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data.iter().map(|&x| x as f64).collect()
}

fn matvec(x: &[f64], w: &[Vec<f64>], b: Option<&[f64]>) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for j in 0..cols {
        let mut acc = b.map_or(0.0, |b| b[j]);
        for i in 0..x.len() {
            acc += x[i] * w[i][j];
        }
        out[j] = acc;
    }
    out
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + eps).sqrt() * g[i] + b[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

impl Reference {
    pub fn new(store: TensorStore, cfg: ModelConfig) -> Self {
        Self { cfg, store }
    }

    /// Returns (residual-post hidden per layer per position, logits per position).
    pub fn forward(&self, tokens: &[u32], clamp: Option<&RefClamp>) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let s = &self.store;
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let eps = cfg.ln_eps as f64;
        let embed = mat(s, "embed");
        let pos = mat(s, "pos_embed");
        let mut xs: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (0..d).map(|c| embed[t as usize][c] + pos[i][c]).collect())
            .collect();
        let mut resid = Vec::new();
        for l in 0..cfg.n_layers {
            let p = |n: &str| format!("blocks.{l}.{n}");
            let (g1, b1) = (vecf(s, &p("ln1.weight")), vecf(s, &p("ln1.bias")));
            let (g2, b2) = (vecf(s, &p("ln2.weight")), vecf(s, &p("ln2.bias")));
            let (wq, wk, wv, wo) = (mat(s, &p("attn.w_q")), mat(s, &p("attn.w_k")), mat(s, &p("attn.w_v")), mat(s, &p("attn.w_o")));
            let (bq, bk, bv, bo) = (vecf(s, &p("attn.b_q")), vecf(s, &p("attn.b_k")), vecf(s, &p("attn.b_v")), vecf(s, &p("attn.b_o")));
            let (win, bin, wout, bout) = (mat(s, &p("mlp.w_in")), vecf(s, &p("mlp.b_in")), mat(s, &p("mlp.w_out")), vecf(s, &p("mlp.b_out")));
            let hs: Vec<Vec<f64>> = xs.iter().map(|x| layer_norm(x, &g1, &b1, eps)).collect();
            let qs: Vec<Vec<f64>> = hs.iter().map(|h| matvec(h, &wq, Some(&bq))).collect();
            let ks: Vec<Vec<f64>> = hs.iter().map(|h| matvec(h, &wk, Some(&bk))).collect();
            let vs: Vec<Vec<f64>> = hs.iter().map(|h| matvec(h, &wv, Some(&bv))).collect();
            let hd = d / cfg.n_heads;
            for i in 0..tokens.len() {
                let mut z = vec![0.0; d];
                for h in 0..cfg.n_heads {
                    let r = h * hd..(h + 1) * hd;
                    let sc: Vec<f64> = (0..=i)
                        .map(|j| r.clone().map(|c| qs[i][c] * ks[j][c]).sum::<f64>() / (hd as f64).sqrt())
                        .collect();
                    let mx = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let ex: Vec<f64> = sc.iter().map(|v| (v - mx).exp()).collect();
                    let tot: f64 = ex.iter().sum();
                    for c in r.clone() {
                        z[c] = (0..=i).map(|j| ex[j] / tot * vs[j][c]).sum();
                    }
                }
                let o = matvec(&z, &wo, Some(&bo));
                for c in 0..d {
                    xs[i][c] += o[c];
                }
            }
            for x in xs.iter_mut() {
                let h = layer_norm(x, &g2, &b2, eps);
                let a: Vec<f64> = matvec(&h, &win, Some(&bin)).into_iter().map(gelu).collect();
                let o = matvec(&a, &wout, Some(&bout));
                for c in 0..d {
                    x[c] += o[c];
                }
                if let Some(cl) = clamp.filter(|c| c.layer == l) {
                    let pre: f64 = cl.bias + x.iter().zip(&cl.enc).map(|(a, b)| a * b).sum::<f64>();
                    let act = if pre >= cl.threshold && pre > 0.0 { pre } else { 0.0 };
                    for c in 0..d {
                        x[c] += (cl.value - act) * cl.dir[c];
                    }
                }
            }
            resid.push(xs.clone());
        }
        let (gf, bf) = (vecf(s, "ln_final.weight"), vecf(s, "ln_final.bias"));
        let un = mat(s, "unembed");
        let logits = xs
            .iter()
            .map(|x| matvec(&layer_norm(x, &gf, &bf, eps), &un, None))
            .collect();
        (resid, logits)
    }

    pub fn softmax(logits: &[f64]) -> Vec<f64> {
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let tot: f64 = ex.iter().sum();
        ex.into_iter().map(|e| e / tot).collect()
    }
}
