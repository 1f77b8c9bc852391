//! Soundness of the noise ledger against actual decryption.

use pqllama_fhe::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
struct Pair {
    ct: LweCiphertext,
    clear: ClearCiphertext,
}

fn check(km: &KeyMaterial, p: &Pair, violations: &mut u64, checked: &mut u64) {
    let params = km.client.params();
    assert_eq!(p.ct.noise, p.clear.noise);
    assert_eq!(p.ct.plaintext_space, p.clear.plaintext_space);
    if p.ct.noise.within_decrypt_limit(params) {
        *checked += 1;
        let r = km.client.decrypt_residue(&p.ct).unwrap();
        let err = km.client.phase_error(&p.ct, p.clear.residue as i64).unwrap();
        if r != p.clear.residue || err.unsigned_abs() as f64 > p.ct.noise.magnitude {
            *violations += 1;
        }
    } else {
        assert!(matches!(km.client.decrypt(&p.ct), Err(FheError::BudgetExhausted { .. })));
    }
}

#[test]
fn ledger_is_sound_over_random_sequences() {
    let params = CryptoParams::micro();
    let km = keygen(&params).unwrap();
    let sk = &km.server;
    let sim = ClearEvaluator::new(params.clone());
    let w = params.widened_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0u64;
    let mut checked = 0u64;
    for _ in 0..10_000 {
        let fresh = |rng: &mut ChaCha8Rng| {
            let ps = rng.gen_range(1..=4u8);
            let v = rng.gen_range(0..1i64 << ps);
            Pair { ct: km.client.encrypt_value(v, ps).unwrap(), clear: sim.encrypt_value(v, ps) }
        };
        let mut pool = vec![fresh(&mut rng), fresh(&mut rng)];
        let len = rng.gen_range(1..10);
        for _ in 0..len {
            let i = rng.gen_range(0..pool.len());
            let j = rng.gen_range(0..pool.len());
            let (a, b) = (&pool[i], &pool[j]);
            let next = match rng.gen_range(0..100) {
                0..=29 => Some(Pair { ct: sk.add(&a.ct, &b.ct).unwrap(), clear: sim.add(&a.clear, &b.clear).unwrap() }),
                30..=49 => Some(Pair { ct: sk.sub(&a.ct, &b.ct).unwrap(), clear: sim.sub(&a.clear, &b.clear).unwrap() }),
                50..=69 => {
                    let k = rng.gen_range(-9..=9);
                    match (sk.mul_scalar(&a.ct, k), sim.mul_scalar(&a.clear, k)) {
                        (Ok(ct), Ok(clear)) => Some(Pair { ct, clear }),
                        (Err(_), Err(_)) => None,
                        _ => panic!("evaluators disagree on mul_scalar"),
                    }
                }
                70..=84 => {
                    let k = rng.gen_range(-40..40);
                    Some(Pair { ct: sk.add_scalar(&a.ct, k), clear: sim.add_scalar(&a.clear, k) })
                }
                85..=89 => Some(fresh(&mut rng)),
                _ => {
                    let ps = a.ct.plaintext_space;
                    let out_bits = rng.gen_range(1..=w);
                    let entries: Vec<i64> = (0..1 << ps).map(|_| rng.gen_range(-64..64)).collect();
                    let t = LookupTable::new(entries, out_bits).unwrap();
                    match (sk.pbs(&a.ct, &t), sim.pbs(&a.clear, &t)) {
                        (Ok(ct), Ok(clear)) => Some(Pair { ct, clear }),
                        (Err(FheError::BudgetExhausted { .. }), Err(FheError::BudgetExhausted { .. })) => None,
                        (x, y) => panic!("evaluators disagree on pbs: {:?} {:?}", x.err(), y.err()),
                    }
                }
            };
            if let Some(p) = next {
                check(&km, &p, &mut violations, &mut checked);
                pool.push(p);
            }
        }
    }
    assert_eq!(violations, 0, "ledger unsound in {violations} of {checked} checks");
    assert!(checked > 10_000);
}

#[test]
fn repeated_doubling_exhausts_the_budget() {
    let params = CryptoParams::micro();
    let km = keygen(&params).unwrap();
    let sim = ClearEvaluator::new(params.clone());
    let mut ct = km.client.encrypt(1).unwrap();
    let mut clear = sim.encrypt_value(1, 2);
    let mut steps = 0;
    while clear.noise.within_decrypt_limit(&params) {
        ct = km.server.add(&ct, &ct).unwrap();
        clear = sim.add(&clear, &clear).unwrap();
        steps += 1;
    }
    // The ledger simulation predicts the step at which decryption is refused.
    let predicted = (params.decrypt_limit() / params.fresh_noise).log2().ceil() as usize;
    assert_eq!(steps, predicted);
    assert!(matches!(km.client.decrypt(&ct), Err(FheError::BudgetExhausted { .. })));
}

#[test]
fn product_rule_is_available_for_analysis() {
    let params = CryptoParams::micro();
    let e = NoiseEstimate::fresh(&params);
    let p = e.product_rule(&e);
    assert_eq!(p.magnitude, params.fresh_noise * params.fresh_noise);
    assert!(!p.within_decrypt_limit(&params));
}
