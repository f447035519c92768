//! Request pacing: a sliding one-minute window plus an in-flight cap.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub const WINDOW: Duration = Duration::from_secs(60);

/// Monotonic time source. Swapped for [`FakeClock`] in tests.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Manual clock: `sleep` advances time instantly and is recorded.
#[derive(Debug, Default)]
pub struct FakeClock {
    state: Mutex<(Duration, Vec<Duration>)>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        self.state.lock().unwrap().0 += by;
    }

    /// Every duration passed to `sleep`, in call order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().unwrap().1.clone()
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        self.state.lock().unwrap().0
    }

    fn sleep(&self, duration: Duration) {
        let mut s = self.state.lock().unwrap();
        s.0 += duration;
        s.1.push(duration);
    }
}

#[derive(Debug, Default)]
struct State {
    issued: VecDeque<Duration>,
    in_flight: usize,
}

#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    max_in_flight: usize,
    state: Mutex<State>,
    freed: Condvar,
}

impl RateLimiter {
    pub fn new(per_minute: usize, max_in_flight: usize) -> Self {
        Self {
            per_minute: per_minute.max(1),
            max_in_flight: max_in_flight.max(1),
            state: Mutex::default(),
            freed: Condvar::new(),
        }
    }

    /// Blocks until a request may start. The slot is released when the
    /// returned permit drops.
    pub fn acquire<'a>(&'a self, clock: &dyn Clock) -> Permit<'a> {
        let mut state = self.state.lock().unwrap();
        loop {
            if state.in_flight >= self.max_in_flight {
                state = self.freed.wait(state).unwrap();
                continue;
            }
            let now = clock.now();
            while state
                .issued
                .front()
                .is_some_and(|&t| now.saturating_sub(t) >= WINDOW)
            {
                state.issued.pop_front();
            }
            if state.issued.len() < self.per_minute {
                state.issued.push_back(now);
                state.in_flight += 1;
                return Permit { limiter: self };
            }
            let wait = (state.issued[0] + WINDOW).saturating_sub(now);
            drop(state);
            clock.sleep(wait);
            state = self.state.lock().unwrap();
        }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().in_flight
    }
}

#[must_use]
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().unwrap_or_else(|p| p.into_inner());
        state.in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_blocks_until_oldest_expires() {
        let clock = FakeClock::new();
        let limiter = RateLimiter::new(3, 10);
        let mut starts = Vec::new();
        for _ in 0..7 {
            let _p = limiter.acquire(&clock);
            starts.push(clock.now());
            clock.advance(Duration::from_secs(1));
        }
        let secs: Vec<u64> = starts.iter().map(|d| d.as_secs()).collect();
        assert_eq!(secs, [0, 1, 2, 60, 61, 62, 120]);
    }

    #[test]
    fn permits_release_on_drop() {
        let clock = FakeClock::new();
        let limiter = RateLimiter::new(100, 2);
        let a = limiter.acquire(&clock);
        let b = limiter.acquire(&clock);
        assert_eq!(limiter.in_flight(), 2);
        drop(a);
        let _c = limiter.acquire(&clock);
        drop(b);
        assert_eq!(limiter.in_flight(), 1);
    }
}
