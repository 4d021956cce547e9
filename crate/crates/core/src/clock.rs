//! Small time helpers. Wall-clock values are advisory (reports, backoff);
//! on targets without a monotonic clock they degrade to zero rather than
//! panicking.

#[cfg(not(target_arch = "wasm32"))]
pub fn now_ms() -> u64 {
    use std::sync::OnceLock;
    use std::time::Instant;
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_millis() as u64
}

#[cfg(target_arch = "wasm32")]
pub fn now_ms() -> u64 {
    0
}

#[cfg(not(target_arch = "wasm32"))]
pub fn unix_ms() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(target_arch = "wasm32")]
pub fn unix_ms() -> u64 {
    0
}

#[cfg(not(target_arch = "wasm32"))]
pub fn sleep_ms(ms: u64) {
    std::thread::sleep(std::time::Duration::from_millis(ms));
}

#[cfg(target_arch = "wasm32")]
pub fn sleep_ms(_ms: u64) {}
