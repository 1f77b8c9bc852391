//! Seeded random weights and the `PQL3` weight file.
//!
//! File layout (little endian): `"PQL3"`, `u32` version, the config as
//! `u32 vocab_size, d_emb, n_layers, n_heads, n_kv_groups, d_ffn,
//! max_seq_len`, `f64 rope_base`, `u64 weight_seed`, `u8 scale_by_head_dim`,
//! then every tensor as row-major `f32` in this order: token embedding
//! `[vocab × d_emb]`; per layer: attention gain `[d_emb]`, q `[H·dh × d_emb]`,
//! k `[G·dh × d_emb]`, v `[G·dh × d_emb]`, o `[d_emb × H·dh]`, ffn gain
//! `[d_emb]`, gate `[d_ffn × d_emb]`, up `[d_ffn × d_emb]`, down
//! `[d_emb × d_ffn]`; final gain `[d_emb]`; lm head `[vocab × d_emb]`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::layers::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PQL3";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub rms_gain_attn: Vec<f64>,
    pub q_proj: Matrix,
    pub k_proj: Matrix,
    pub v_proj: Matrix,
    pub o_proj: Matrix,
    pub rms_gain_ffn: Vec<f64>,
    pub gate_proj: Matrix,
    pub up_proj: Matrix,
    pub down_proj: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub token_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_rms_gain: Vec<f64>,
    pub lm_head: Matrix,
}

struct Init {
    rng: ChaCha20Rng,
}

impl Init {
    // Values are rounded through f32 so files reproduce them exactly.
    fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let n = Normal::new(0.0, std).unwrap();
        let data = (0..rows * cols).map(|_| n.sample(&mut self.rng) as f32 as f64).collect();
        Matrix { rows, cols, data }
    }

    fn gain(&mut self, d: usize) -> Vec<f64> {
        let n = Normal::new(1.0, 0.1).unwrap();
        (0..d).map(|_| n.sample(&mut self.rng) as f32 as f64).collect()
    }
}

impl Weights {
    pub fn random(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init { rng: ChaCha20Rng::seed_from_u64(cfg.weight_seed) };
        let d = cfg.d_emb;
        let dh = cfg.d_head();
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let token_embedding = init.matrix(cfg.vocab_size, d, 1.0);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                rms_gain_attn: init.gain(d),
                q_proj: init.matrix(cfg.n_heads * dh, d, inv(d)),
                k_proj: init.matrix(cfg.n_kv_groups * dh, d, inv(d)),
                v_proj: init.matrix(cfg.n_kv_groups * dh, d, inv(d)),
                o_proj: init.matrix(d, cfg.n_heads * dh, inv(d)),
                rms_gain_ffn: init.gain(d),
                gate_proj: init.matrix(cfg.d_ffn, d, inv(d)),
                up_proj: init.matrix(cfg.d_ffn, d, inv(d)),
                down_proj: init.matrix(d, cfg.d_ffn, inv(cfg.d_ffn)),
            })
            .collect();
        let final_rms_gain = init.gain(d);
        let lm_head = init.matrix(cfg.vocab_size, d, inv(d));
        Ok(Self { token_embedding, layers, final_rms_gain, lm_head })
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embedding.data];
        for l in &self.layers {
            out.extend([
                &l.rms_gain_attn[..],
                &l.q_proj.data,
                &l.k_proj.data,
                &l.v_proj.data,
                &l.o_proj.data,
                &l.rms_gain_ffn,
                &l.gate_proj.data,
                &l.up_proj.data,
                &l.down_proj.data,
            ]);
        }
        out.push(&self.final_rms_gain);
        out.push(&self.lm_head.data);
        out
    }

    pub fn to_bytes(&self, cfg: &ModelConfig) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [cfg.vocab_size, cfg.d_emb, cfg.n_layers, cfg.n_heads, cfg.n_kv_groups, cfg.d_ffn, cfg.max_seq_len] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&cfg.rope_base.to_le_bytes());
        out.extend_from_slice(&cfg.weight_seed.to_le_bytes());
        out.push(cfg.scale_by_head_dim as u8);
        for t in self.tensors() {
            for &x in t {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ModelConfig, Self)> {
        let bad = |m: &str| Error::Config(format!("weight file: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        }
        let rope_base = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let weight_seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let scale_by_head_dim = take(1)?[0] != 0;
        let cfg = ModelConfig {
            vocab_size: dims[0],
            d_emb: dims[1],
            n_layers: dims[2],
            n_heads: dims[3],
            n_kv_groups: dims[4],
            d_ffn: dims[5],
            max_seq_len: dims[6],
            rope_base,
            weight_seed,
            scale_by_head_dim,
        };
        cfg.validate()?;
        // Shapes come from a random instance; the data is then overwritten.
        let mut w = Weights::random(&ModelConfig { weight_seed: 0, ..cfg.clone() })?;
        let mut fill = |dst: &mut [f64]| -> Result<()> {
            for x in dst.iter_mut() {
                *x = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
            }
            Ok(())
        };
        fill(&mut w.token_embedding.data)?;
        for l in w.layers.iter_mut() {
            fill(&mut l.rms_gain_attn)?;
            fill(&mut l.q_proj.data)?;
            fill(&mut l.k_proj.data)?;
            fill(&mut l.v_proj.data)?;
            fill(&mut l.o_proj.data)?;
            fill(&mut l.rms_gain_ffn)?;
            fill(&mut l.gate_proj.data)?;
            fill(&mut l.up_proj.data)?;
            fill(&mut l.down_proj.data)?;
        }
        fill(&mut w.final_rms_gain)?;
        fill(&mut w.lm_head.data)?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok((cfg, w))
    }

    pub fn save(&self, cfg: &ModelConfig, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(&self.to_bytes(cfg)).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<(ModelConfig, Self)> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}
