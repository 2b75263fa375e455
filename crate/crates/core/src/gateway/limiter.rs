//! Token-bucket rate limiter shared by the administer workers.

use std::sync::Mutex;
use std::time::{Duration, Instant};

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

/// Classic token bucket: capacity `max(1, rate)` tokens, refilled at `rate`
/// tokens per second. A non-positive rate disables limiting.
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<BucketState>,
}

impl TokenBucket {
    pub fn new(rate: f64) -> TokenBucket {
        TokenBucket {
            rate,
            capacity: rate.max(1.0),
            state: Mutex::new(BucketState { tokens: rate.max(1.0), last_refill: Instant::now() }),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(state.last_refill).as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.rate).min(self.capacity);
                state.last_refill = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                (1.0 - state.tokens) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.05)));
        }
    }
}
