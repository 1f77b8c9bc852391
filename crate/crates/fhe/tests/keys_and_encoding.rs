//! Determinism, key roles and binary encodings.

use pqllama_fhe::*;

#[test]
fn keygen_is_deterministic() {
    let p = CryptoParams::micro();
    let a = keygen(&p).unwrap();
    let b = keygen(&p).unwrap();
    assert_eq!(a.client.to_bytes(), b.client.to_bytes());
    assert_eq!(a.server.to_bytes(), b.server.to_bytes());
    let c = keygen(&p.clone().with_seed(p.rng_seed + 1)).unwrap();
    assert_ne!(a.client.secret_bits(), c.client.secret_bits());
}

#[test]
fn encryption_stream_is_reproducible() {
    let p = CryptoParams::micro();
    let a = keygen(&p).unwrap();
    let b = keygen(&p).unwrap();
    for m in 0..4 {
        let x = a.client.encrypt(m).unwrap();
        let y = b.client.encrypt(m).unwrap();
        assert_eq!(x.to_bytes(), y.to_bytes());
        let t = LookupTable::identity(2);
        assert_eq!(a.server.pbs(&x, &t).unwrap(), b.server.pbs(&y, &t).unwrap());
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    let mut p = CryptoParams::micro();
    p.log2_q = 8;
    p.plaintext_bits = 7;
    p.carry_bits = 2;
    assert!(matches!(keygen(&p), Err(FheError::Parameter(_))));
}

#[test]
fn evaluation_key_contains_no_secret() {
    let km = keygen(&CryptoParams::micro()).unwrap();
    let bytes = km.server.to_bytes();
    assert_eq!(peek_role(&bytes).unwrap(), RoleTag::ServerEvaluation);
    let secret: Vec<u8> = km.client.secret_bits().iter().map(|&b| b as u8).collect();
    assert!(!bytes.windows(secret.len()).any(|w| w == secret.as_slice()));
}

#[test]
fn server_path_rejects_client_secret() {
    let km = keygen(&CryptoParams::micro()).unwrap();
    let secret = km.client.to_bytes();
    assert_eq!(peek_role(&secret).unwrap(), RoleTag::ClientSecret);
    assert!(matches!(ServerKey::from_bytes(&secret), Err(FheError::Key(_))));
    assert!(matches!(ClientKey::from_bytes(&km.server.to_bytes()), Err(FheError::Key(_))));
}

#[test]
fn keys_survive_serialization() {
    let km = keygen(&CryptoParams::micro()).unwrap();
    let server = ServerKey::from_bytes(&km.server.to_bytes()).unwrap();
    let client = ClientKey::from_bytes(&km.client.to_bytes()).unwrap();
    assert_eq!(server.key_id(), km.server.key_id());
    let t = LookupTable::from_fn(2, 2, |m| 3 - m as i64);
    for m in 0..4 {
        let ct = client.encrypt(m).unwrap();
        let out = server.pbs(&ct, &t).unwrap();
        assert_eq!(km.client.decrypt(&out).unwrap(), 3 - m as u64);
    }
}

#[test]
fn ciphertext_encoding_roundtrips() {
    let km = keygen(&CryptoParams::micro()).unwrap();
    let p = km.client.params();
    let ct = km.client.encrypt(2).unwrap();
    let bytes = ct.to_bytes();
    assert_eq!(&bytes[..4], &1u32.to_le_bytes());
    assert_eq!(&bytes[4..6], &(p.lwe_dim as u16).to_le_bytes());
    assert_eq!(bytes[6], 64);
    assert_eq!(bytes[7], ct.plaintext_space);
    let back = LweCiphertext::from_bytes(&bytes, p, km.client.key_id()).unwrap();
    assert_eq!(back.mask, ct.mask);
    assert_eq!(back.body, ct.body);
    assert_eq!(back.noise.magnitude, ct.noise.magnitude);
    assert!(LweCiphertext::from_bytes(&bytes[..bytes.len() - 1], p, 0).is_err());
}

#[test]
fn analytic_key_size_matches_generated_key() {
    for p in [CryptoParams::micro(), CryptoParams { lwe_dim: 8, ..CryptoParams::micro() }] {
        let km = keygen(&p).unwrap();
        assert_eq!(p.eval_key_bytes(), km.server.size_bytes());
    }
}

#[test]
fn wrapping_scale_agrees_between_evaluators() {
    let km = keygen(&CryptoParams::micro()).unwrap();
    let clear = ClearEvaluator::new(km.client.params().clone());
    for v in 0..4 {
        for k in [-7i64, -3, 0, 5, 9] {
            let ct = km.server.scale_wrapping(&km.client.encrypt(v).unwrap(), k);
            let cc = clear.scale_wrapping(&clear.encrypt_value(v, 2), k);
            assert_eq!(km.client.decrypt_residue(&ct).unwrap(), cc.residue);
            assert_eq!(ct.noise, cc.noise);
            assert_eq!(ct.plaintext_space, 5);
        }
    }
}
