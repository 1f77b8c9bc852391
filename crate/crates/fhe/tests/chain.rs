//! Long chains of products and refreshes.

use pqllama_fhe::*;

#[test]
fn sixty_four_products_with_refresh() {
    let params = CryptoParams::micro();
    let km = keygen(&params).unwrap();
    let sk = &km.server;
    // x ← x·3 mod 11 by a product followed by a reducing bootstrap; the
    // product stays below 32 so it never reaches the padding half.
    let reduce = LookupTable::from_fn(5, 4, |m| (m % 11) as i64);
    let three = km.client.encrypt_value(3, 4).unwrap();
    let mut x = km.client.encrypt_value(5, 4).unwrap();
    let mut clear = 5u64;
    for step in 0..64 {
        let prod = sk.mul_ct(&x, &three).unwrap();
        x = sk.pbs(&prod, &reduce).unwrap();
        clear = clear * 3 % 11;
        assert_eq!(km.client.decrypt(&x).unwrap(), clear, "step {step}");
        assert!(x.noise.within_pbs_budget(&params));
    }
    assert_eq!(sk.pbs_count(), 64 * 3);
}
