mod common;

use pqllama::bench::{kv_timing, load_prompts, run_experiment, ExperimentSpec, PlanCache};
use pqllama::enc_attn::{EncAttnConfig, FheMode};
use pqllama::Error;
use pqllama_fhe::LweCiphertext;

fn spec(prompts: usize, modes: Vec<FheMode>, top_k: Vec<usize>) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(common::prompts(prompts), EncAttnConfig::default());
    s.modes = modes;
    s.top_k = top_k;
    s.max_new_tokens = vec![3];
    s.repetitions = 1;
    s.timings = false;
    s
}

#[test]
fn disable_mode_matches_itself() {
    let model = common::model();
    let r = run_experiment(&model, &spec(1, vec![FheMode::Disable], vec![1]), &mut PlanCache::default(), None).unwrap();
    assert_eq!(r.compiles, 0);
    let a = &r.cells[0].aggregates;
    assert_eq!(a.accuracy_pct, 100.0);
    assert_eq!(a.epr_short, f64::INFINITY);
    assert_eq!(a.pbs_count, 0);
    assert_eq!(a.mem_per_token_bytes, 0.0);
}

#[test]
fn grid_reuses_one_plan_and_is_reproducible() {
    let model = common::model();
    let s = spec(3, vec![FheMode::Simulate], vec![1, 2, 4, 256, 400]);
    let mut cache = PlanCache::default();
    let a = run_experiment(&model, &s, &mut cache, None).unwrap();
    assert_eq!(a.compiles, 1);
    let b = run_experiment(&model, &s, &mut cache, None).unwrap();
    assert_eq!(b.compiles, 0);
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    let mut last = 0.0;
    for c in &a.cells {
        assert_eq!(c.aggregate().unwrap(), c.aggregates);
        assert!(c.aggregates.accuracy_pct >= last);
        last = c.aggregates.accuracy_pct;
        assert_eq!(c.aggregates.pbs_per_token, a.cells[0].aggregates.pbs_per_token);
        for r in &c.runs {
            assert_eq!(r.pbs, r.static_pbs);
            assert!(r.pbs > 0);
            let short = r.steps.iter().map(|t| t.signal_norm / t.noise_norm).fold(f64::INFINITY, f64::min);
            assert!(r.epr_long().unwrap() >= short);
        }
        let bytes = LweCiphertext::encoded_len(s.enc.crypto.lwe_dim) as u64;
        let cts: u64 = c.runs.iter().map(|r| r.ciphertexts).sum();
        assert!(c.aggregates.total_ciphertext_bytes >= bytes * cts);
    }
    assert_eq!(last, 100.0);
}

#[test]
fn missing_prompt_file_names_the_path() {
    let e = load_prompts(std::path::Path::new("/nonexistent/prompts.txt")).unwrap_err();
    assert!(matches!(&e, Error::File { path, .. } if path.contains("nonexistent")));
}

#[test]
fn invalid_grids_are_refused() {
    let model = common::model();
    let mut s = spec(1, vec![FheMode::Disable], vec![]);
    assert!(run_experiment(&model, &s, &mut PlanCache::default(), None).is_err());
    s.top_k = vec![1];
    s.repetitions = 0;
    assert!(run_experiment(&model, &s, &mut PlanCache::default(), None).is_err());
    s.repetitions = 1;
    s.max_new_tokens = vec![model.cfg.max_seq_len + 1];
    assert!(matches!(run_experiment(&model, &s, &mut PlanCache::default(), None), Err(Error::Capacity { .. })));
}

#[test]
fn cache_and_recompute_agree() {
    let model = common::model();
    let tokens: Vec<usize> = (0..24).map(|i| (i * 37 + 5) % 256).collect();
    let t = kv_timing(&model, &tokens, 3).unwrap();
    assert!(t.max_logit_diff < 1e-9);
    assert_eq!(t.cached_s.len(), 24);
}
