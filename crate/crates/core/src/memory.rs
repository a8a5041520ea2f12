//! Per-thread accounting of tensor and scratch buffer bytes.
//!
//! Every [`Buffer`] adds its size to the current thread's live count when
//! allocated and subtracts it when dropped. The peak is the high-water mark
//! since the last [`reset_peak`]. Counting is exact for buffers created
//! through this module; it does not look at process RSS.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

fn add(bytes: i64) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

/// Bytes currently held by live buffers on this thread.
pub fn live_bytes() -> i64 {
    LIVE.with(Cell::get)
}

/// High-water mark since the last reset.
pub fn peak_bytes() -> i64 {
    PEAK.with(Cell::get)
}

/// Restart peak tracking from the current live count.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}

/// A fixed-size, heap-allocated, tracked array.
pub struct Buffer<T: Copy> {
    data: Box<[T]>,
}

impl<T: Copy> Buffer<T> {
    fn bytes(len: usize) -> i64 {
        (len * std::mem::size_of::<T>()) as i64
    }

    pub fn filled(len: usize, value: T) -> Self {
        Self::from_vec(vec![value; len])
    }

    pub fn from_vec(v: Vec<T>) -> Self {
        let data = v.into_boxed_slice();
        add(Self::bytes(data.len()));
        Buffer { data }
    }

    pub fn into_vec(self) -> Vec<T> {
        let mut this = std::mem::ManuallyDrop::new(self);
        add(-Self::bytes(this.data.len()));
        std::mem::take(&mut this.data).into_vec()
    }
}

impl<T: Copy> Drop for Buffer<T> {
    fn drop(&mut self) {
        add(-Self::bytes(self.data.len()));
    }
}

impl<T: Copy> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Self::from_vec(self.data.to_vec())
    }
}

impl<T: Copy> Deref for Buffer<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T: Copy> DerefMut for Buffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Copy + std::fmt::Debug> std::fmt::Debug for Buffer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.data.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_allocations_and_frees() {
        let base = live_bytes();
        reset_peak();
        let a = Buffer::<f32>::filled(100, 0.0);
        assert_eq!(live_bytes() - base, 400);
        {
            let _b = a.clone();
            assert_eq!(live_bytes() - base, 800);
        }
        assert_eq!(live_bytes() - base, 400);
        assert_eq!(peak_bytes() - base, 800);
        let v = a.into_vec();
        assert_eq!(live_bytes(), base);
        assert_eq!(v.len(), 100);
        reset_peak();
        assert_eq!(peak_bytes(), base);
    }
}
