//! Per-rank look-ahead buffer keyed by training step.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::protocol::FeatureBatch;
use crate::source::BatchSource;

#[derive(Clone, Debug)]
pub struct BufferConfig {
    pub capacity: usize,
    pub rank: u32,
    pub start_step: u64,
    /// Attempts per step before the filler gives up.
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl BufferConfig {
    pub fn new(rank: u32, capacity: usize) -> Self {
        Self { capacity, rank, start_step: 0, max_attempts: 8, backoff: Duration::from_millis(20) }
    }
}

#[derive(Default)]
struct State {
    queue: BTreeMap<u64, FeatureBatch>,
    next_pop: u64,
    stop: bool,
    failed: Option<String>,
    /// Fetch attempts rejected for carrying the wrong `(step, rank)`.
    rejected: u64,
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// One filler thread fetches steps `s+1 ..= s+capacity` ahead of the
/// consumer at step `s`; `pop` hands batches out strictly in step order.
pub struct BatchBuffer {
    shared: Arc<Shared>,
    cfg: BufferConfig,
    filler: Option<JoinHandle<()>>,
}

impl BatchBuffer {
    pub fn start(source: Box<dyn BatchSource>, cfg: BufferConfig) -> Result<Self> {
        if cfg.capacity == 0 || cfg.max_attempts == 0 {
            return Err(Error::Config("buffer capacity and attempts must be at least 1".into()));
        }
        let shared = Arc::new(Shared {
            state: Mutex::new(State { next_pop: cfg.start_step, ..Default::default() }),
            cv: Condvar::new(),
        });
        let (sh, c) = (shared.clone(), cfg.clone());
        let filler = std::thread::spawn(move || fill(source, &sh, &c));
        Ok(Self { shared, cfg, filler: Some(filler) })
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    /// Steps currently buffered, ascending.
    pub fn buffered_steps(&self) -> Vec<u64> {
        self.shared.lock().queue.keys().copied().collect()
    }

    pub fn rejected_fetches(&self) -> u64 {
        self.shared.lock().rejected
    }

    /// Blocks until the buffer is full or `timeout` passes; returns the buffered steps.
    pub fn wait_full(&self, timeout: Duration) -> Vec<u64> {
        let guard = self.shared.lock();
        let (st, _) = self
            .shared
            .cv
            .wait_timeout_while(guard, timeout, |s| s.queue.len() < self.cfg.capacity && s.failed.is_none())
            .unwrap_or_else(|p| p.into_inner());
        st.queue.keys().copied().collect()
    }

    /// The batch for `step`, blocking until the filler has fetched it.
    pub fn pop(&self, step: u64) -> Result<FeatureBatch> {
        let mut st = self.shared.lock();
        if step < st.next_pop {
            return Err(Error::Contract(format!("step {step} was already consumed (next is {})", st.next_pop)));
        }
        if step > st.next_pop {
            return Err(Error::Contract(format!("step {step} popped before step {}", st.next_pop)));
        }
        loop {
            if let Some(b) = st.queue.remove(&step) {
                st.next_pop = step + 1;
                self.shared.cv.notify_all();
                return Ok(b);
            }
            if let Some(msg) = &st.failed {
                return Err(Error::Source(msg.clone()));
            }
            st = self.shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
        }
    }
}

impl Drop for BatchBuffer {
    fn drop(&mut self) {
        self.shared.lock().stop = true;
        self.shared.cv.notify_all();
        if let Some(h) = self.filler.take() {
            let _ = h.join();
        }
    }
}

fn fill(mut source: Box<dyn BatchSource>, shared: &Shared, cfg: &BufferConfig) {
    let mut next = cfg.start_step;
    loop {
        {
            let st = shared.lock();
            let st = shared
                .cv
                .wait_while(st, |s| !s.stop && next >= s.next_pop + cfg.capacity as u64)
                .unwrap_or_else(|p| p.into_inner());
            if st.stop {
                return;
            }
        }
        let mut attempt = 0;
        let batch = loop {
            attempt += 1;
            let err = match source.fetch(next, cfg.rank) {
                Ok(b) if b.step == next && b.rank == cfg.rank => break Ok(b),
                Ok(b) => {
                    shared.lock().rejected += 1;
                    Error::Contract(format!("fetched ({}, {}) for ({next}, {})", b.step, b.rank, cfg.rank))
                }
                Err(e) => e,
            };
            let retriable = err.is_retriable() || matches!(err, Error::Contract(_));
            if !retriable || attempt >= cfg.max_attempts {
                break Err(format!("step {next} rank {} after {attempt} attempt(s): {err}", cfg.rank));
            }
            if shared.lock().stop {
                return;
            }
            std::thread::sleep(cfg.backoff);
        };
        let mut st = shared.lock();
        match batch {
            Ok(b) => {
                st.queue.insert(next, b);
                next += 1;
            }
            Err(msg) => {
                st.failed = Some(msg);
                shared.cv.notify_all();
                return;
            }
        }
        shared.cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vidgen_core::Tensor;

    struct Counting;

    impl BatchSource for Counting {
        fn fetch(&mut self, step: u64, rank: u32) -> Result<FeatureBatch> {
            Ok(FeatureBatch {
                step,
                rank,
                bucket: 0,
                latents: Tensor::zeros([1, 1, 16, 1, 1]),
                text_emb: Tensor::zeros([1, 2]),
                sample_ids: vec![step as u32],
            })
        }
    }

    #[test]
    fn steady_state_look_ahead() {
        let buf = BatchBuffer::start(Box::new(Counting), BufferConfig::new(0, 3)).unwrap();
        assert_eq!(buf.wait_full(Duration::from_secs(5)), vec![0, 1, 2]);
        for s in 0..=5 {
            assert_eq!(buf.pop(s).unwrap().step, s);
        }
        assert_eq!(buf.wait_full(Duration::from_secs(5)), vec![6, 7, 8]);
        std::thread::sleep(Duration::from_millis(20));
        assert_eq!(buf.buffered_steps(), vec![6, 7, 8]);
    }

    #[test]
    fn out_of_order_pops_are_contract_errors() {
        let buf = BatchBuffer::start(Box::new(Counting), BufferConfig::new(1, 2)).unwrap();
        buf.pop(0).unwrap();
        assert!(matches!(buf.pop(0), Err(Error::Contract(m)) if m.contains("already consumed")));
        assert!(matches!(buf.pop(2), Err(Error::Contract(_))));
        assert_eq!(buf.pop(1).unwrap().step, 1);
    }

    #[test]
    fn resumes_from_start_step() {
        let cfg = BufferConfig { start_step: 40, ..BufferConfig::new(0, 1) };
        let buf = BatchBuffer::start(Box::new(Counting), cfg).unwrap();
        assert!(buf.pop(39).is_err());
        assert_eq!(buf.pop(40).unwrap().sample_ids, vec![40]);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(BatchBuffer::start(Box::new(Counting), BufferConfig::new(0, 0)).is_err());
    }

    struct Failing;

    impl BatchSource for Failing {
        fn fetch(&mut self, _: u64, _: u32) -> Result<FeatureBatch> {
            Err(Error::Source("disk gone".into()))
        }
    }

    #[test]
    fn fatal_source_error_surfaces_on_pop() {
        let buf = BatchBuffer::start(Box::new(Failing), BufferConfig::new(0, 2)).unwrap();
        assert!(matches!(buf.pop(0), Err(Error::Source(m)) if m.contains("disk gone")));
    }
}
