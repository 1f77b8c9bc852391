//! Smoke run of the n = 512 profile.

use pqllama_fhe::*;

#[test]
fn toy_profile_bootstraps_and_multiplies() {
    let params = CryptoParams::toy();
    let km = keygen(&params).unwrap();
    for m in [0i64, 3, 17, 31] {
        let ct = km.client.encrypt_value(m, 5).unwrap();
        let out = km.server.pbs(&ct, &LookupTable::identity(5)).unwrap();
        assert_eq!(km.client.decrypt(&out).unwrap(), m as u64);
        let err = km.client.phase_error(&out, m).unwrap();
        assert!((err.unsigned_abs() as f64) < out.noise.magnitude);
    }
    let x = km.client.encrypt_value(5, 4).unwrap();
    let y = km.client.encrypt_value(6, 4).unwrap();
    let z = km.server.mul_ct(&x, &y).unwrap();
    assert_eq!(km.client.decrypt_residue(&z).unwrap(), 30);
}
