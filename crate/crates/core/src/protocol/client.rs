//! Client side: key custody, encryption of quantized activations and
//! decryption of results.

use std::collections::BTreeMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;

use pqllama_fhe::{peek_role, ClientKey, RoleTag};

use super::frame::{max_payload, Frame, MsgType, PROTOCOL_VERSION};
use super::messages::{expect_ack, CiphertextBatch, StepResult};
use super::server::ServerSession;
use super::{Role, SessionState};
use crate::circuit::ExecutionPlan;
use crate::enc_attn::{AttentionBackend, BackendStep};
use crate::error::{Error, Result};

/// A request/response channel carrying encoded frames.
pub trait Transport: Send {
    /// Send one encoded request and return the encoded response.
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>>;
}

/// Server session in the same process. Frames still pass through their
/// byte encoding in both directions.
pub struct InProcess {
    pub session: ServerSession,
}

impl InProcess {
    pub fn new(session: ServerSession) -> Self {
        Self { session }
    }
}

impl Transport for InProcess {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>> {
        let reply = match Frame::decode(request) {
            Ok(f) => self.session.handle(&f),
            Err(e) => Frame::error(e.to_string()),
        };
        Ok(reply.encode())
    }
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>> {
        use std::io::Write;
        self.stream.write_all(request)?;
        self.stream.flush()?;
        // Re-encoding a decoded frame reproduces its bytes exactly.
        Ok(Frame::read_from(&mut self.stream, max_payload())?.encode())
    }
}

/// Decrypted attention step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecryptedStep {
    pub layer: u32,
    pub position: u32,
    /// Output integers, decoded with the plan's static ranges.
    pub ints: Vec<i64>,
    /// Dequantized outputs.
    pub values: Vec<f64>,
    pub pbs: u64,
    pub wall_s: f64,
    pub cached: u64,
    /// Ledger noise of each output on the torus.
    pub noise: Vec<f64>,
}

pub struct Client {
    key: ClientKey,
    plans: BTreeMap<u32, Arc<ExecutionPlan>>,
    transport: Box<dyn Transport>,
    /// Bytes sent and received so far.
    pub traffic: (u64, u64),
}

impl Client {
    pub fn new(key: ClientKey, transport: Box<dyn Transport>) -> Self {
        Self { key, plans: BTreeMap::new(), transport, traffic: (0, 0) }
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            role: Role::Client,
            version: PROTOCOL_VERSION,
            key_fingerprint: Some(self.key.params().fingerprint()),
            plan_digests: self.plans.iter().map(|(&l, p)| (l, p.digest())).collect(),
        }
    }

    /// Send one frame and decode the reply.
    pub fn round_trip(&mut self, request: &Frame) -> Result<Frame> {
        let bytes = request.encode();
        let reply = self.transport.exchange(&bytes)?;
        self.traffic.0 += bytes.len() as u64;
        self.traffic.1 += reply.len() as u64;
        Frame::decode(&reply)
    }

    /// Upload the evaluation key and plans. Secret key bytes are refused.
    pub fn install(&mut self, eval_key: &[u8], plans: &[Arc<ExecutionPlan>]) -> Result<()> {
        if peek_role(eval_key)? != RoleTag::ServerEvaluation {
            return Err(Error::Protocol("refusing to send a client secret key".into()));
        }
        expect_ack(&self.round_trip(&Frame::new(MsgType::EvalKey, eval_key.to_vec()))?)?;
        for p in plans {
            p.check_params(self.key.params())?;
            expect_ack(&self.round_trip(&Frame::new(MsgType::Plan, p.to_bytes()))?)?;
        }
        self.attach(plans)
    }

    /// Use plans the server already holds.
    pub fn attach(&mut self, plans: &[Arc<ExecutionPlan>]) -> Result<()> {
        for p in plans {
            p.check_params(self.key.params())?;
            self.plans.insert(p.layer, p.clone());
        }
        Ok(())
    }

    fn plan(&self, layer: u32) -> Result<&Arc<ExecutionPlan>> {
        self.plans.get(&layer).ok_or_else(|| Error::Plan(format!("no plan for layer {layer}")))
    }

    /// Encrypt the quantized codes of one attention input.
    pub fn encrypt_step(&self, layer: u32, position: u32, codes: &[i64]) -> Result<Frame> {
        let plan = self.plan(layer)?;
        plan.step(position as usize)?;
        if codes.len() != plan.d_emb as usize {
            return Err(Error::Shape { expected: plan.d_emb as usize, got: codes.len() });
        }
        let bits = plan.input.n_bits;
        let ciphertexts = codes
            .iter()
            .map(|&c| {
                if c < 0 || c > plan.input.max_code() {
                    return Err(Error::Plan(format!("code {c} does not match the plan's {bits}-bit input")));
                }
                Ok(self.key.encrypt_value(c, bits)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CiphertextBatch { layer, position, ciphertexts }.to_frame())
    }

    /// Quantize with the plan's input parameters, then encrypt.
    pub fn encrypt_activations(&self, layer: u32, position: u32, x: &[f64]) -> Result<Frame> {
        let q = self.plan(layer)?.input;
        let codes: Vec<i64> = x.iter().map(|&v| q.quantize(v)).collect();
        self.encrypt_step(layer, position, &codes)
    }

    /// Check and decrypt a result frame.
    pub fn decrypt_result(&self, frame: &Frame) -> Result<DecryptedStep> {
        let r = StepResult::from_frame(frame, self.key.params(), self.key.key_id())?;
        let plan = self.plan(r.layer)?;
        let step = plan.step(r.position as usize)?;
        if r.ciphertexts.len() != step.outputs.len() {
            return Err(Error::Shape { expected: step.outputs.len(), got: r.ciphertexts.len() });
        }
        let m = self.key.params().torus_modulus();
        let mut ints = Vec::with_capacity(r.ciphertexts.len());
        let mut values = Vec::with_capacity(r.ciphertexts.len());
        for (ct, node) in r.ciphertexts.iter().zip(step.output_nodes()) {
            let v = node.decode(self.key.decrypt_residue(ct)?, m);
            ints.push(v);
            values.push(node.dequantize(v));
        }
        Ok(DecryptedStep {
            layer: r.layer,
            position: r.position,
            ints,
            values,
            pbs: r.pbs,
            wall_s: r.wall_s,
            cached: r.cached,
            noise: r.ciphertexts.iter().map(|c| c.noise.magnitude).collect(),
        })
    }

    /// One encrypted attention step through the server.
    pub fn step(&mut self, layer: u32, position: u32, codes: &[i64]) -> Result<DecryptedStep> {
        let request = self.encrypt_step(layer, position, codes)?;
        let reply = self.round_trip(&request)?;
        let out = self.decrypt_result(&reply)?;
        if (out.layer, out.position) != (layer, position) {
            return Err(Error::Protocol("result answers a different request".into()));
        }
        Ok(out)
    }
}

/// Attention backend that evaluates on a remote server.
pub struct RemoteBackend {
    pub client: Client,
    cached: u64,
}

impl RemoteBackend {
    pub fn new(client: Client) -> Self {
        Self { client, cached: 0 }
    }
}

impl AttentionBackend for RemoteBackend {
    fn run(&mut self, plan: &ExecutionPlan, position: usize, codes: &[i64]) -> Result<BackendStep> {
        if self.client.plan(plan.layer)?.digest() != plan.digest() {
            return Err(Error::Plan(format!("layer {} plan differs from the installed one", plan.layer)));
        }
        let r = self.client.step(plan.layer, position as u32, codes)?;
        self.cached = r.cached;
        Ok(BackendStep { ints: r.ints, pbs: r.pbs, noise: r.noise })
    }

    /// The server starts a fresh cache whenever position 0 arrives.
    fn reset(&mut self) {
        self.cached = 0;
    }

    fn cached_ciphertexts(&self) -> usize {
        self.cached as usize
    }
}
