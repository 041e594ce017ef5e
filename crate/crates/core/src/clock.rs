//! Monotonic clock that degrades to a zero clock on `wasm32-unknown-unknown`,
//! where `std::time::Instant` is unavailable.

#[cfg(not(target_arch = "wasm32"))]
mod imp {
    #[derive(Debug, Clone, Copy)]
    pub struct Instant(std::time::Instant);

    impl Instant {
        pub fn now() -> Self {
            Instant(std::time::Instant::now())
        }

        pub fn elapsed_ns(&self) -> u64 {
            self.0.elapsed().as_nanos() as u64
        }

        pub fn after(&self, budget: std::time::Duration) -> Deadline {
            Deadline(Some(self.0 + budget))
        }
    }

    #[derive(Debug, Clone, Copy, Default)]
    pub struct Deadline(Option<std::time::Instant>);

    impl Deadline {
        pub fn none() -> Self {
            Deadline(None)
        }

        pub fn expired(&self) -> bool {
            matches!(self.0, Some(d) if std::time::Instant::now() >= d)
        }
    }
}

#[cfg(target_arch = "wasm32")]
mod imp {
    #[derive(Debug, Clone, Copy)]
    pub struct Instant;

    impl Instant {
        pub fn now() -> Self {
            Instant
        }

        pub fn elapsed_ns(&self) -> u64 {
            0
        }

        pub fn after(&self, _budget: std::time::Duration) -> Deadline {
            Deadline
        }
    }

    #[derive(Debug, Clone, Copy, Default)]
    pub struct Deadline;

    impl Deadline {
        pub fn none() -> Self {
            Deadline
        }

        pub fn expired(&self) -> bool {
            false
        }
    }
}

pub use imp::{Deadline, Instant};
