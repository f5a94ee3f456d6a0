use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{LlmProvider, LlmRequest, VlmProvider, VlmRequest};
use crate::error::ProviderError;

/// Classic token bucket: `capacity` burst, refilled at `per_second`.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, per_second: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        TokenBucket {
            capacity,
            per_second,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Block until one token is available, then take it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("bucket poisoned");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_second;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_second)
            };
            thread::sleep(wait);
        }
    }
}

#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Bounds in-flight requests and request rate for a wrapped provider.
///
/// The limiter is the only synchronized state; replies are returned to the
/// calling thread, so they always pair with their own request.
#[derive(Debug)]
pub struct Throttled<P> {
    inner: P,
    in_flight: Semaphore,
    bucket: Option<TokenBucket>,
}

impl<P> Throttled<P> {
    pub fn new(inner: P, max_concurrency: usize) -> Self {
        Throttled {
            inner,
            in_flight: Semaphore::new(max_concurrency),
            bucket: None,
        }
    }

    pub fn with_rate(mut self, burst: u32, per_second: f64) -> Self {
        if per_second > 0.0 {
            self.bucket = Some(TokenBucket::new(burst, per_second));
        }
        self
    }

    fn gate<R>(&self, f: impl FnOnce() -> R) -> R {
        let _permit = self.in_flight.acquire();
        if let Some(b) = &self.bucket {
            b.acquire();
        }
        f()
    }
}

impl<P: LlmProvider> LlmProvider for Throttled<P> {
    fn send(&self, req: &LlmRequest) -> Result<String, ProviderError> {
        self.gate(|| self.inner.send(req))
    }
}

impl<P: VlmProvider> VlmProvider for Throttled<P> {
    fn send(&self, req: &VlmRequest) -> Result<String, ProviderError> {
        self.gate(|| self.inner.send(req))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnLlm;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn bounds_in_flight_and_correlates_by_id() {
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (c, p) = (current.clone(), peak.clone());
        let inner = FnLlm(move |req: &LlmRequest| {
            let now = c.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            // later ids finish first
            let n: u64 = req.id.parse().unwrap();
            thread::sleep(Duration::from_millis(40 - n));
            c.fetch_sub(1, Ordering::SeqCst);
            Ok(format!("reply-{}", req.id))
        });
        let provider = Arc::new(Throttled::new(inner, 8));
        let handles: Vec<_> = (0..32u64)
            .map(|i| {
                let provider = provider.clone();
                thread::spawn(move || {
                    let reply = provider.send(&LlmRequest::json(i.to_string(), "p")).unwrap();
                    (i, reply)
                })
            })
            .collect();
        for h in handles {
            let (i, reply) = h.join().unwrap();
            assert_eq!(reply, format!("reply-{i}"));
        }
        assert!(peak.load(Ordering::SeqCst) <= 8);
        assert!(peak.load(Ordering::SeqCst) >= 2);
    }

    #[test]
    fn token_bucket_paces_requests() {
        let bucket = TokenBucket::new(2, 50.0);
        let start = Instant::now();
        for _ in 0..6 {
            bucket.acquire();
        }
        // two free, four more at 20 ms each
        assert!(start.elapsed() >= Duration::from_millis(70));
    }
}
