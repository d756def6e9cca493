use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};

use super::transport::{connect, Transport};
use super::wire::{GenerationParams, ServiceEndpoint, ServiceKind, ServiceRequest, ServiceResponse};

/// Counting semaphore bounding outstanding requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// A connection to one endpoint. Calls retry with exponential backoff and
/// never exceed the endpoint's `max_inflight`, however many threads share it.
pub struct ServiceClient {
    endpoint: ServiceEndpoint,
    transport: Box<dyn Transport>,
    slots: Slots,
}

impl ServiceClient {
    pub fn connect(endpoint: ServiceEndpoint) -> Result<Self> {
        let transport = connect(&endpoint)?;
        Ok(Self::with_transport(endpoint, transport))
    }

    pub fn with_transport(endpoint: ServiceEndpoint, transport: Box<dyn Transport>) -> Self {
        let slots = Slots {
            free: Mutex::new(endpoint.max_inflight.max(1)),
            cv: Condvar::new(),
        };
        ServiceClient {
            endpoint,
            transport,
            slots,
        }
    }

    pub fn endpoint(&self) -> &ServiceEndpoint {
        &self.endpoint
    }

    pub fn kind(&self) -> ServiceKind {
        self.endpoint.kind
    }

    pub fn expect_kind(&self, kind: ServiceKind) -> Result<()> {
        if self.endpoint.kind != kind {
            return Err(Error::Config(format!("expected a {kind} endpoint, got {}", self.endpoint.kind)));
        }
        Ok(())
    }

    pub fn params(&self) -> GenerationParams {
        self.endpoint.params
    }

    fn attempt(&self, request: &ServiceRequest) -> Result<ServiceResponse> {
        let _slot = self.slots.acquire();
        let response = self.transport.call(request)?;
        if let Some(e) = response.error {
            return Err(Error::Service(format!("{} service: {e}", self.endpoint.kind)));
        }
        Ok(response)
    }

    /// Sends `prompt`, retrying failed attempts.
    pub fn request(&self, prompt: String) -> Result<ServiceResponse> {
        let request = ServiceRequest {
            kind: self.endpoint.kind,
            prompt,
            params: self.endpoint.params,
        };
        let attempts = self.endpoint.retries.max(1);
        let mut delay = self.endpoint.backoff_ms;
        let mut last = None;
        for i in 0..attempts {
            match self.attempt(&request) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::debug!("{} attempt {} of {attempts} failed: {e}", self.endpoint.kind, i + 1);
                    last = Some(e);
                }
            }
            if i + 1 < attempts {
                thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
            }
        }
        Err(Error::Service(format!(
            "{} failed after {attempts} attempts: {}",
            self.endpoint.kind,
            last.expect("at least one attempt")
        )))
    }

    /// Text reply for `prompt`.
    pub fn complete(&self, prompt: String) -> Result<String> {
        self.request(prompt)?
            .text
            .ok_or_else(|| Error::Service(format!("{} response has no `text`", self.endpoint.kind)))
    }

    /// Applies `f` to every item on up to `max_inflight` threads; results come
    /// back in input order.
    pub fn map_bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        map_bounded(items, self.endpoint.max_inflight, f)
    }
}

/// Runs `f` over `items` on at most `workers` scoped threads, keeping order.
pub fn map_bounded<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock poisoned")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::wire::TransportKind;
    use std::sync::atomic::AtomicU32;
    use std::sync::Arc;

    struct Gauge {
        now: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }

    impl Transport for Gauge {
        fn call(&self, request: &ServiceRequest) -> Result<ServiceResponse> {
            let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(n, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(5));
            self.now.fetch_sub(1, Ordering::SeqCst);
            Ok(ServiceResponse::text(request.prompt.clone()))
        }
    }

    struct Flaky {
        failures_left: AtomicU32,
    }

    impl Transport for Flaky {
        fn call(&self, _: &ServiceRequest) -> Result<ServiceResponse> {
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Ok(ServiceResponse::error("busy"));
            }
            Ok(ServiceResponse::text("ok"))
        }
    }

    fn endpoint(max_inflight: usize) -> ServiceEndpoint {
        let mut e = ServiceEndpoint::new(ServiceKind::Rephrase, TransportKind::Builtin, "");
        e.max_inflight = max_inflight;
        e.backoff_ms = 1;
        e
    }

    #[test]
    fn inflight_is_bounded_and_order_kept() {
        let peak = Arc::new(AtomicUsize::new(0));
        let client = ServiceClient::with_transport(
            endpoint(3),
            Box::new(Gauge {
                now: Arc::new(AtomicUsize::new(0)),
                peak: peak.clone(),
            }),
        );
        let items: Vec<usize> = (0..40).collect();
        // Oversubscribe on purpose: 10 threads share a limit of 3.
        let out = map_bounded(&items, 10, |i| client.complete(i.to_string()).unwrap());
        assert_eq!(out, items.iter().map(|i| i.to_string()).collect::<Vec<_>>());
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert!(peak.load(Ordering::SeqCst) >= 2);
    }

    #[test]
    fn retries_then_succeeds_or_gives_up() {
        let client = ServiceClient::with_transport(endpoint(1), Box::new(Flaky { failures_left: AtomicU32::new(2) }));
        assert_eq!(client.complete("x".into()).unwrap(), "ok");
        let client = ServiceClient::with_transport(endpoint(1), Box::new(Flaky { failures_left: AtomicU32::new(3) }));
        let err = client.complete("x".into()).unwrap_err();
        assert!(err.to_string().contains("after 3 attempts"), "{err}");
    }
}
