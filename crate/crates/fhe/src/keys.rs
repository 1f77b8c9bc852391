//! Key generation, encryption and decryption.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{FheError, Result};
use crate::fft::NegacyclicFft;
use crate::keyswitch::KeySwitchKey;
use crate::lut::LookupTable;
use crate::lwe::LweCiphertext;
use crate::noise::NoiseEstimate;
use crate::params::CryptoParams;
use crate::pbs::{blind_rotate, BootstrapKey, PbsBackend};
use crate::serialize::{get_u64s, put_u64s, Reader, KEY_VERSION};
use crate::torus::{round_shift, sample_noise};

const KEY_MAGIC: &[u8; 4] = b"PQKY";

/// Who a serialized key belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RoleTag {
    ClientSecret = 1,
    ServerEvaluation = 2,
}

impl RoleTag {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Self::ClientSecret),
            2 => Ok(Self::ServerEvaluation),
            _ => Err(FheError::Decode(format!("unknown key role {b}"))),
        }
    }
}

/// Role byte of a serialized key, without decoding the rest.
pub fn peek_role(bytes: &[u8]) -> Result<RoleTag> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != KEY_MAGIC {
        return Err(FheError::Decode("bad key magic".into()));
    }
    let version = r.u32()?;
    if version != KEY_VERSION {
        return Err(FheError::Decode(format!("key version {version}")));
    }
    RoleTag::from_byte(r.u8()?)
}

/// Identifier shared by all keys generated from one parameter set and seed.
pub fn key_id_for(params: &CryptoParams) -> u64 {
    let mut h = Sha256::new();
    h.update(b"pqllama-key");
    h.update(params.to_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn key_rng(params: &CryptoParams) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(params.rng_seed)
}

fn encryption_rng(params: &CryptoParams) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(params.rng_seed);
    rng.set_stream(1);
    rng
}

fn binary_spectrum(fft: &NegacyclicFft, bits: &[u64]) -> Vec<Complex64> {
    let v: Vec<i64> = bits.iter().map(|&b| b as i64).collect();
    let mut spec = vec![Complex64::default(); fft.spectrum_len()];
    fft.forward_i64(&v, &mut spec);
    spec
}

/// Secret key plus public encryption material. Never leaves the client.
#[derive(Debug)]
pub struct ClientKey {
    params: CryptoParams,
    key_id: u64,
    secret: Vec<u64>,
    glwe_secret: Vec<u64>,
    /// `public_key_size` rows of `n + 1` residues, encryptions of zero.
    public: Vec<u64>,
    rng: Mutex<ChaCha20Rng>,
}

impl Clone for ClientKey {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            key_id: self.key_id,
            secret: self.secret.clone(),
            glwe_secret: self.glwe_secret.clone(),
            public: self.public.clone(),
            rng: Mutex::new(self.rng.lock().unwrap().clone()),
        }
    }
}

/// Evaluation key: bootstrapping key and key-switching key. Safe to publish.
pub struct ServerKey {
    params: CryptoParams,
    key_id: u64,
    bsk: BootstrapKey,
    ksk: KeySwitchKey,
    fft: NegacyclicFft,
    pbs_counter: Arc<AtomicU64>,
    #[cfg(feature = "escrow-pbs")]
    escrow: Option<Arc<ClientKey>>,
}

impl std::fmt::Debug for ServerKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerKey")
            .field("key_id", &format_args!("{:#x}", self.key_id))
            .field("lwe_dim", &self.params.lwe_dim)
            .field("ring_dim", &self.params.ring_dim)
            .finish()
    }
}

/// Output of key generation.
#[derive(Debug)]
pub struct KeyMaterial {
    pub client: ClientKey,
    pub server: ServerKey,
}

/// Deterministic key generation from `params.rng_seed`.
pub fn keygen(params: &CryptoParams) -> Result<KeyMaterial> {
    params.validate()?;
    let mut rng = key_rng(params);
    let n = params.lwe_dim;
    let big_n = params.ring_dim;
    let key_id = key_id_for(params);
    let secret: Vec<u64> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let glwe_secret: Vec<u64> = (0..big_n).map(|_| rng.gen_range(0..2)).collect();

    let mut public = vec![0u64; params.public_key_size * (n + 1)];
    for row in public.chunks_exact_mut(n + 1) {
        let mut body = sample_noise(&mut rng, params.public_noise());
        for (a, &s) in row[..n].iter_mut().zip(&secret) {
            *a = rng.gen();
            body = body.wrapping_add(a.wrapping_mul(s));
        }
        row[n] = body;
    }

    let fft = NegacyclicFft::new(big_n);
    let glwe_spec = binary_spectrum(&fft, &glwe_secret);
    let bsk = BootstrapKey::generate(&mut rng, params, &fft, &secret, &glwe_spec);
    let ksk = KeySwitchKey::generate(&mut rng, params, key_id ^ 1, &glwe_secret, key_id, &secret);

    let client = ClientKey {
        params: params.clone(),
        key_id,
        secret,
        glwe_secret,
        public,
        rng: Mutex::new(encryption_rng(params)),
    };
    let server = ServerKey {
        params: params.clone(),
        key_id,
        bsk,
        ksk,
        fft,
        pbs_counter: Arc::new(AtomicU64::new(0)),
        #[cfg(feature = "escrow-pbs")]
        escrow: None,
    };
    Ok(KeyMaterial { client, server })
}

impl ClientKey {
    pub fn params(&self) -> &CryptoParams {
        &self.params
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn secret_bits(&self) -> &[u64] {
        &self.secret
    }

    /// Encrypt a plaintext `0 <= m < 2^plaintext_bits`.
    pub fn encrypt(&self, m: i64) -> Result<LweCiphertext> {
        let limit = 1u64 << self.params.plaintext_bits;
        if m < 0 || m as u64 >= limit {
            return Err(FheError::Range { value: m, limit });
        }
        Ok(self.encrypt_raw(m, self.params.plaintext_bits))
    }

    /// Encrypt a value of the widened space, `0 <= value < 2^plaintext_space`
    /// with `plaintext_space <= plaintext_bits + carry_bits`.
    pub fn encrypt_value(&self, value: i64, plaintext_space: u8) -> Result<LweCiphertext> {
        let w = self.params.widened_bits();
        if plaintext_space > w {
            return Err(FheError::Range { value: plaintext_space as i64, limit: w as u64 + 1 });
        }
        let limit = 1u64 << plaintext_space;
        if value < 0 || value as u64 >= limit {
            return Err(FheError::Range { value, limit });
        }
        Ok(self.encrypt_raw(value, plaintext_space))
    }

    fn encrypt_raw(&self, m: i64, plaintext_space: u8) -> LweCiphertext {
        let n = self.params.lwe_dim;
        let mut rng = self.rng.lock().unwrap();
        let mut mask = vec![0u64; n];
        let mut body = 0u64;
        for row in self.public.chunks_exact(n + 1) {
            if rng.gen::<bool>() {
                for (a, r) in mask.iter_mut().zip(row) {
                    *a = a.wrapping_add(*r);
                }
                body = body.wrapping_add(row[n]);
            }
        }
        body = body
            .wrapping_add((m as u64).wrapping_mul(self.params.delta()))
            .wrapping_add(sample_noise(&mut *rng, self.params.fresh_noise / 2.0));
        LweCiphertext {
            mask,
            body,
            noise: NoiseEstimate::fresh(&self.params),
            plaintext_space,
            key_id: self.key_id,
        }
    }

    /// Raw phase `b - <a, s>`.
    pub fn phase(&self, ct: &LweCiphertext) -> Result<u64> {
        if ct.key_id != self.key_id || ct.dim() != self.secret.len() {
            return Err(FheError::Key(format!(
                "ciphertext under key {:#x}, client key is {:#x}",
                ct.key_id, self.key_id
            )));
        }
        let dot = ct.mask.iter().zip(&self.secret).fold(0u64, |acc, (a, s)| acc.wrapping_add(a.wrapping_mul(*s)));
        Ok(ct.body.wrapping_sub(dot))
    }

    /// Rounded residue in `Z_{2p'}`. Fails when the ledger says the error may
    /// exceed `Δ/2`.
    pub fn decrypt_residue(&self, ct: &LweCiphertext) -> Result<u64> {
        if !ct.noise.within_decrypt_limit(&self.params) {
            return Err(FheError::BudgetExhausted {
                magnitude: ct.noise.magnitude,
                limit: self.params.decrypt_limit(),
            });
        }
        let phase = self.phase(ct)?;
        let shift = 64 - self.params.widened_bits() as u32 - 1;
        Ok(round_shift(phase, shift) & (self.params.torus_modulus() - 1))
    }

    /// Message modulo `2^plaintext_space`.
    pub fn decrypt(&self, ct: &LweCiphertext) -> Result<u64> {
        Ok(self.decrypt_residue(ct)? & ((1u64 << ct.plaintext_space) - 1))
    }

    /// Residue read as a signed value in `[-p', p')`.
    pub fn decrypt_signed(&self, ct: &LweCiphertext) -> Result<i64> {
        let r = self.decrypt_residue(ct)?;
        let p = self.params.message_modulus();
        Ok(if r >= p { r as i64 - 2 * p as i64 } else { r as i64 })
    }

    /// Signed distance between the phase and `Δ·expected`, in torus units.
    pub fn phase_error(&self, ct: &LweCiphertext, expected: i64) -> Result<i64> {
        let phase = self.phase(ct)?;
        Ok(phase.wrapping_sub((expected as u64).wrapping_mul(self.params.delta())) as i64)
    }

    /// Key-switching key from this key to `target`.
    pub fn keyswitch_key_to(&self, target: &ClientKey) -> Result<KeySwitchKey> {
        if self.params.lwe_dim != target.params.lwe_dim
            || self.params.widened_bits() != target.params.widened_bits()
        {
            return Err(FheError::Incompatible("key switching across parameter shapes".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.key_id ^ target.key_id.rotate_left(17));
        Ok(KeySwitchKey::generate(
            &mut rng,
            &self.params,
            self.key_id,
            &self.secret,
            target.key_id,
            &target.secret,
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(KEY_MAGIC);
        out.extend_from_slice(&KEY_VERSION.to_le_bytes());
        out.push(RoleTag::ClientSecret as u8);
        out.extend_from_slice(&self.params.to_bytes());
        out.extend_from_slice(&self.key_id.to_le_bytes());
        out.extend(self.secret.iter().map(|&b| b as u8));
        out.extend(self.glwe_secret.iter().map(|&b| b as u8));
        put_u64s(&mut out, &self.public);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if peek_role(bytes)? != RoleTag::ClientSecret {
            return Err(FheError::Key("expected a client secret key".into()));
        }
        let (params, used) = CryptoParams::from_bytes(&bytes[9..])?;
        params.validate()?;
        let mut r = Reader::new(&bytes[9 + used..]);
        let key_id = r.u64()?;
        let bits = |r: &mut Reader<'_>, n: usize| -> Result<Vec<u64>> {
            let raw = r.take(n)?;
            if raw.iter().any(|&b| b > 1) {
                return Err(FheError::Decode("secret key is not binary".into()));
            }
            Ok(raw.iter().map(|&b| b as u64).collect())
        };
        let secret = bits(&mut r, params.lwe_dim)?;
        let glwe_secret = bits(&mut r, params.ring_dim)?;
        let public = get_u64s(&mut r, params.public_key_size * (params.lwe_dim + 1))?;
        r.finish()?;
        Ok(Self { rng: Mutex::new(encryption_rng(&params)), params, key_id, secret, glwe_secret, public })
    }
}

impl ServerKey {
    pub fn params(&self) -> &CryptoParams {
        &self.params
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// Bootstraps evaluated with this key (both backends) so far.
    pub fn pbs_count(&self) -> u64 {
        self.pbs_counter.load(Ordering::Relaxed)
    }

    pub fn size_bytes(&self) -> usize {
        self.bsk.size_bytes() + self.ksk.size_bytes()
    }

    /// Attach the client key for the reference backend. Insecure.
    #[cfg(feature = "escrow-pbs")]
    pub fn with_escrow(mut self, client: &ClientKey) -> Self {
        self.escrow = Some(Arc::new(client.clone()));
        self
    }

    fn check_key(&self, ct: &LweCiphertext) -> Result<()> {
        if ct.key_id != self.key_id || ct.dim() != self.params.lwe_dim {
            return Err(FheError::Key(format!(
                "ciphertext under key {:#x}, evaluation key is {:#x}",
                ct.key_id, self.key_id
            )));
        }
        Ok(())
    }

    /// Bootstrap with the default (blind rotation) backend.
    pub fn pbs(&self, ct: &LweCiphertext, table: &LookupTable) -> Result<LweCiphertext> {
        self.pbs_with(ct, table, PbsBackend::BlindRotate)
    }

    pub fn pbs_with(
        &self,
        ct: &LweCiphertext,
        table: &LookupTable,
        backend: PbsBackend,
    ) -> Result<LweCiphertext> {
        self.check_key(ct)?;
        if table.input_bits() != ct.plaintext_space {
            return Err(FheError::Shape { expected: 1 << ct.plaintext_space, got: table.len() });
        }
        if !ct.noise.within_pbs_budget(&self.params) {
            return Err(FheError::BudgetExhausted {
                magnitude: ct.noise.magnitude,
                limit: self.params.pbs_budget(),
            });
        }
        let out = match backend {
            PbsBackend::BlindRotate => {
                let test_poly = table.negacyclic_encoding(&self.params);
                let (mask, body) =
                    blind_rotate(&self.params, &self.fft, &self.bsk, &self.ksk, &ct.mask, ct.body, &test_poly);
                LweCiphertext {
                    mask,
                    body,
                    noise: NoiseEstimate::bootstrapped(&self.params),
                    plaintext_space: table.output_bits(),
                    key_id: self.key_id,
                }
            }
            PbsBackend::Reference => self.reference_pbs(ct, table)?,
        };
        self.pbs_counter.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    #[cfg(feature = "escrow-pbs")]
    fn reference_pbs(&self, ct: &LweCiphertext, table: &LookupTable) -> Result<LweCiphertext> {
        let client = self
            .escrow
            .as_ref()
            .ok_or_else(|| FheError::Key("reference backend needs an escrowed key".into()))?;
        // The budget check above bounds the error by Δ/2 - modswitch, so the
        // rounded residue is the one blind rotation would see.
        let residue = client.decrypt_residue(ct)?;
        let value = table.eval_residue(&self.params, residue);
        let mut out = client.encrypt_raw(value as i64, table.output_bits());
        out.noise = NoiseEstimate::bootstrapped(&self.params);
        Ok(out)
    }

    #[cfg(not(feature = "escrow-pbs"))]
    fn reference_pbs(&self, _ct: &LweCiphertext, _table: &LookupTable) -> Result<LweCiphertext> {
        Err(FheError::Key("reference backend not compiled in".into()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes() + 256);
        out.extend_from_slice(KEY_MAGIC);
        out.extend_from_slice(&KEY_VERSION.to_le_bytes());
        out.push(RoleTag::ServerEvaluation as u8);
        out.extend_from_slice(&self.params.to_bytes());
        out.extend_from_slice(&self.key_id.to_le_bytes());
        self.bsk.write_to(&mut out);
        self.ksk.write_to(&mut out);
        out
    }

    /// Decode an evaluation key. Client secret keys are refused.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match peek_role(bytes)? {
            RoleTag::ServerEvaluation => {}
            RoleTag::ClientSecret => {
                return Err(FheError::Key("client secret key presented as evaluation key".into()))
            }
        }
        let (params, used) = CryptoParams::from_bytes(&bytes[9..])?;
        params.validate()?;
        let mut r = Reader::new(&bytes[9 + used..]);
        let key_id = r.u64()?;
        let bsk = BootstrapKey::read_from(&mut r, &params)?;
        let ksk = KeySwitchKey::read_from(&mut r)?;
        r.finish()?;
        if ksk.in_dim != params.ring_dim || ksk.out_dim != params.lwe_dim || ksk.to_id != key_id {
            return Err(FheError::Decode("key switching key does not match parameters".into()));
        }
        Ok(Self {
            fft: NegacyclicFft::new(params.ring_dim),
            params,
            key_id,
            bsk,
            ksk,
            pbs_counter: Arc::new(AtomicU64::new(0)),
            #[cfg(feature = "escrow-pbs")]
            escrow: None,
        })
    }

    /// Noiseless encryption usable as a constant operand.
    pub fn trivial(&self, value: i64, plaintext_space: u8) -> LweCiphertext {
        LweCiphertext::trivial(&self.params, self.key_id, value, plaintext_space)
    }
}
