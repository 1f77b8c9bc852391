#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use pqllama::circuit::{compile_layer, ExecutionPlan};
use pqllama::enc_attn::{calibrate_block, extend_greedy, CalibrationRecord, EncAttnConfig};
use pqllama::model::{tokenize, Model, ModelConfig};

pub const PROMPTS: [&str; 24] = [
    "the cat", "a dog ran", "hello", "rain falls", "keys open", "blue sky", "cold tea", "old road",
    "fast car", "red fox", "small boat", "tall tree", "deep sea", "warm bread", "soft wind", "dark room",
    "new book", "bright star", "quiet town", "green leaf", "sharp knife", "slow river", "light snow", "loud bell",
];

pub fn model() -> Model {
    Model::random(ModelConfig::toy()).unwrap()
}

pub fn prompts(n: usize) -> Vec<Vec<usize>> {
    PROMPTS.iter().take(n).map(|p| tokenize(p)).collect()
}

pub fn calibrate(model: &Model, cfg: &EncAttnConfig, new_tokens: usize) -> CalibrationRecord {
    let batch = extend_greedy(model, &prompts(PROMPTS.len()), new_tokens).unwrap();
    calibrate_block(model, &batch, cfg).unwrap()
}

pub fn plans(model: &Model, cfg: &EncAttnConfig, len: usize) -> BTreeMap<usize, Arc<ExecutionPlan>> {
    let rec = calibrate(model, cfg, 4);
    cfg.target_layers.iter().map(|&l| (l, Arc::new(compile_layer(model, &rec, cfg, l, len).unwrap()))).collect()
}
