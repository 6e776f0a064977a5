use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock that only advances when slept on.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` acquisitions in any 60 s.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: Option<u32>,
    sent: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: Option<u32>) -> Self {
        Self {
            per_minute: per_minute.filter(|&n| n > 0),
            sent: Mutex::new(VecDeque::new()),
        }
    }

    /// Block until a request may be sent, then record it.
    pub fn acquire(&self, clock: &dyn Clock) {
        let Some(limit) = self.per_minute else { return };
        let mut sent = self.sent.lock().unwrap();
        loop {
            let now = clock.now();
            while sent.front().is_some_and(|&t| now >= t + WINDOW) {
                sent.pop_front();
            }
            if sent.len() < limit as usize {
                sent.push_back(now);
                return;
            }
            let wait = *sent.front().expect("non-empty at limit") + WINDOW - now;
            clock.sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_exceeds_budget_in_any_window() {
        let clock = VirtualClock::default();
        let limiter = RateLimiter::new(Some(10));
        let mut stamps = Vec::new();
        for i in 0..95 {
            limiter.acquire(&clock);
            stamps.push(clock.now());
            // irregular request spacing
            clock.advance(Duration::from_millis(700 * (i % 5)));
        }
        for (i, &t) in stamps.iter().enumerate() {
            let in_window = stamps[i..].iter().take_while(|&&u| u < t + WINDOW).count();
            assert!(in_window <= 10, "window starting at {t:?} has {in_window}");
        }
        assert!(clock.now() >= Duration::from_secs(8 * 60));
    }

    #[test]
    fn unlimited_never_sleeps() {
        let clock = VirtualClock::default();
        let limiter = RateLimiter::new(None);
        for _ in 0..1000 {
            limiter.acquire(&clock);
        }
        assert_eq!(clock.now(), Duration::ZERO);
    }
}
