use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;

/// Parameters of one decoder block. Projection matrices are row-major
/// `[in, out]`; attention projections carry no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Vec<f32>,
    pub ln1_b: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ln2_g: Vec<f32>,
    pub ln2_b: Vec<f32>,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

/// All model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Vec<f32>,
    pub pos_emb: Vec<f32>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Vec<f32>,
    pub lnf_b: Vec<f32>,
    pub out_w: Vec<f32>,
}

pub const INIT_STD: f64 = 0.02;

impl Params {
    /// Seeded Gaussian initialization: std 0.02 everywhere except the
    /// residual projections (attention output and second FFN matrix),
    /// which use 0.02 / sqrt(2 * num_layers). Layer-norm gains start at 1,
    /// all biases at 0. Draw order is fixed by the manifest order.
    pub fn init(config: &ModelConfig) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let std = Normal::new(0.0, INIT_STD).unwrap();
        let resid_std = Normal::new(0.0, INIT_STD / (2.0 * config.num_layers as f64).sqrt()).unwrap();
        let draw = |n: usize, dist: &Normal<f64>, rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..n).map(|_| dist.sample(rng) as f32).collect()
        };
        let tok_emb = draw(config.vocab_size * d, &std, &mut rng);
        let pos_emb = draw(config.max_seq_len * d, &std, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: draw(d * d, &std, &mut rng),
                wk: draw(d * d, &std, &mut rng),
                wv: draw(d * d, &std, &mut rng),
                wo: draw(d * d, &resid_std, &mut rng),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: draw(d * config.d_ff, &std, &mut rng),
                b1: vec![0.0; config.d_ff],
                w2: draw(config.d_ff * d, &resid_std, &mut rng),
                b2: vec![0.0; d],
            })
            .collect();
        let lnf_g = vec![1.0; d];
        let lnf_b = vec![0.0; d];
        let out_w = draw(d * config.vocab_size, &std, &mut rng);
        Params {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            out_w,
        }
    }

    pub fn zeros_like(config: &ModelConfig) -> Params {
        let d = config.d_model;
        Params {
            tok_emb: vec![0.0; config.vocab_size * d],
            pos_emb: vec![0.0; config.max_seq_len * d],
            layers: (0..config.num_layers)
                .map(|_| LayerParams {
                    ln1_g: vec![0.0; d],
                    ln1_b: vec![0.0; d],
                    wq: vec![0.0; d * d],
                    wk: vec![0.0; d * d],
                    wv: vec![0.0; d * d],
                    wo: vec![0.0; d * d],
                    ln2_g: vec![0.0; d],
                    ln2_b: vec![0.0; d],
                    w1: vec![0.0; d * config.d_ff],
                    b1: vec![0.0; config.d_ff],
                    w2: vec![0.0; config.d_ff * d],
                    b2: vec![0.0; d],
                })
                .collect(),
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            out_w: vec![0.0; d * config.vocab_size],
        }
    }

    /// Tensor views in manifest order.
    pub fn flatten(&self) -> Vec<&Vec<f32>> {
        let mut out: Vec<&Vec<f32>> = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend([
                &l.ln1_g, &l.ln1_b, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_g, &l.ln2_b, &l.w1, &l.b1,
                &l.w2, &l.b2,
            ]);
        }
        out.extend([&self.lnf_g, &self.lnf_b, &self.out_w]);
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out: Vec<&mut Vec<f32>> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.out_w]);
        out
    }
}

/// Ordered (name, shape) manifest matching `Params::flatten`.
pub fn manifest(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![
        ("tok_emb".to_string(), vec![config.vocab_size, d]),
        ("pos_emb".to_string(), vec![config.max_seq_len, d]),
    ];
    for l in 0..config.num_layers {
        let n = |suffix: &str| format!("layer{l}.{suffix}");
        out.extend([
            (n("ln1.gain"), vec![d]),
            (n("ln1.bias"), vec![d]),
            (n("attn.wq"), vec![d, d]),
            (n("attn.wk"), vec![d, d]),
            (n("attn.wv"), vec![d, d]),
            (n("attn.wo"), vec![d, d]),
            (n("ln2.gain"), vec![d]),
            (n("ln2.bias"), vec![d]),
            (n("ffn.w1"), vec![d, config.d_ff]),
            (n("ffn.b1"), vec![config.d_ff]),
            (n("ffn.w2"), vec![config.d_ff, d]),
            (n("ffn.b2"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.gain".to_string(), vec![d]),
        ("ln_f.bias".to_string(), vec![d]),
        ("out_head".to_string(), vec![d, config.vocab_size]),
    ]);
    out
}
