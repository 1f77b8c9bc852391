//! Server side: installs an evaluation key and plans, then evaluates
//! ciphertext batches. It only ever sees evaluation material; a client
//! secret key is refused at decoding.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Instant;

use pqllama_fhe::{LweCiphertext, ServerKey};

use super::frame::{max_payload, Frame, MsgType, PROTOCOL_VERSION};
use super::messages::{ack, CiphertextBatch, StepResult};
use super::{Role, SessionState};
use crate::circuit::{run_step, ExecutionPlan, KvStore};
use crate::error::{Error, Result};

/// Key and plans loaded once and shared by every session of a server.
#[derive(Clone, Default)]
pub struct Preloaded {
    pub key: Option<Arc<ServerKey>>,
    pub plans: BTreeMap<u32, Arc<ExecutionPlan>>,
}

struct LayerCache {
    next_position: u32,
    store: KvStore<LweCiphertext>,
}

/// One ordered request/response stream with its own key/value cache.
pub struct ServerSession {
    key: Option<Arc<ServerKey>>,
    plans: BTreeMap<u32, Arc<ExecutionPlan>>,
    caches: HashMap<u32, LayerCache>,
    /// Report wall time in results; off makes responses reproducible.
    pub report_timing: bool,
}

impl Default for ServerSession {
    fn default() -> Self {
        Self::new(Preloaded::default())
    }
}

impl ServerSession {
    pub fn new(pre: Preloaded) -> Self {
        Self { key: pre.key, plans: pre.plans, caches: HashMap::new(), report_timing: true }
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            role: Role::Server,
            version: PROTOCOL_VERSION,
            key_fingerprint: self.key.as_ref().map(|k| k.params().fingerprint()),
            plan_digests: self.plans.iter().map(|(&l, p)| (l, p.digest())).collect(),
        }
    }

    /// Ciphertexts held across all layer caches.
    pub fn cached_ciphertexts(&self) -> usize {
        self.caches.values().map(|c| c.store.len()).sum()
    }

    /// Answer one request. Failures become error frames.
    pub fn handle(&mut self, frame: &Frame) -> Frame {
        self.try_handle(frame).unwrap_or_else(|e| Frame::error(e.to_string()))
    }

    fn try_handle(&mut self, frame: &Frame) -> Result<Frame> {
        match frame.msg_type {
            MsgType::EvalKey => {
                let key = ServerKey::from_bytes(&frame.payload)?;
                if let Some(p) = self.plans.values().find(|p| p.check_params(key.params()).is_err()) {
                    return Err(Error::Protocol(format!("installed plan for layer {} needs other parameters", p.layer)));
                }
                self.key = Some(Arc::new(key));
                self.caches.clear();
                Ok(ack())
            }
            MsgType::Plan => {
                let key = self.key.as_ref().ok_or_else(|| Error::Protocol("plan sent before the evaluation key".into()))?;
                let plan = ExecutionPlan::from_bytes(&frame.payload, key.params())?;
                self.caches.remove(&plan.layer);
                self.plans.insert(plan.layer, Arc::new(plan));
                Ok(ack())
            }
            MsgType::CiphertextBatch => self.execute(frame),
            MsgType::Result | MsgType::Error => {
                Err(Error::Protocol(format!("{:?} is not a request", frame.msg_type)))
            }
        }
    }

    fn execute(&mut self, frame: &Frame) -> Result<Frame> {
        let start = Instant::now();
        let key = self.key.clone().ok_or_else(|| Error::Protocol("ciphertexts sent before the evaluation key".into()))?;
        let batch = CiphertextBatch::from_frame(frame, key.params(), key.key_id())?;
        let plan = self
            .plans
            .get(&batch.layer)
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("no plan installed for layer {}", batch.layer)))?;
        let step = plan.step(batch.position as usize)?;
        if batch.ciphertexts.len() != plan.d_emb as usize {
            return Err(Error::Shape { expected: plan.d_emb as usize, got: batch.ciphertexts.len() });
        }
        let cache = self.caches.entry(batch.layer).or_insert_with(|| LayerCache { next_position: 0, store: KvStore::new() });
        if batch.position == 0 {
            cache.store.clear();
            cache.next_position = 0;
        } else if batch.position != cache.next_position {
            return Err(Error::Protocol(format!(
                "layer {} expects position {}, got {}",
                batch.layer, cache.next_position, batch.position
            )));
        }
        let run = run_step(key.as_ref(), step, &batch.ciphertexts, &mut cache.store, false)?;
        cache.next_position = batch.position + 1;
        let cached = self.cached_ciphertexts() as u64;
        let result = StepResult {
            layer: batch.layer,
            position: batch.position,
            pbs: run.pbs,
            wall_s: if self.report_timing { start.elapsed().as_secs_f64() } else { 0.0 },
            cached,
            ciphertexts: run.outputs,
        };
        Ok(result.to_frame())
    }
}

/// Serve one connection until the peer closes it.
pub fn serve_connection(stream: impl Read + Write, session: &mut ServerSession) -> Result<()> {
    let mut stream = stream;
    let limit = max_payload();
    loop {
        // Unbuffered reads never consume bytes of the next frame.
        let frame = match Frame::read_from(&mut stream, limit) {
            Ok(f) => f,
            Err(Error::Protocol(m)) if m == "truncated frame" => return Ok(()),
            Err(e @ Error::Protocol(_)) => {
                // The stream cannot be resynchronised after a bad frame.
                Frame::error(e.to_string()).write_to(&mut stream)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        session.handle(&frame).write_to(&mut stream)?;
    }
}

/// Accept connections, one thread and session per connection, sharing the
/// preloaded key and plans. Stops after `max_connections` when given.
pub fn serve(listener: TcpListener, pre: Preloaded, report_timing: bool, max_connections: Option<usize>) -> Result<()> {
    let mut handles = Vec::new();
    for (i, conn) in listener.incoming().enumerate() {
        let stream = conn?;
        let pre = pre.clone();
        handles.push(std::thread::spawn(move || {
            let mut session = ServerSession::new(pre);
            session.report_timing = report_timing;
            serve_connection(stream, &mut session)
        }));
        if max_connections.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    for h in handles {
        h.join().map_err(|_| Error::Protocol("session thread panicked".into()))??;
    }
    Ok(())
}
