use std::collections::BTreeSet;

/// Default receive window, in sequence numbers.
pub const DEDUP_WINDOW: u64 = 1 << 16;

/// Sliding window of seen sequence numbers. A seq is accepted once; repeats
/// and anything at or beyond `window` behind the highest seen are rejected.
#[derive(Clone, Debug)]
pub struct DedupWindow {
    window: u64,
    highest: Option<u64>,
    seen: BTreeSet<u64>,
}

impl Default for DedupWindow {
    fn default() -> Self {
        DedupWindow::new(DEDUP_WINDOW)
    }
}

impl DedupWindow {
    pub fn new(window: u64) -> Self {
        assert!(window > 0, "window must be positive");
        DedupWindow { window, highest: None, seen: BTreeSet::new() }
    }

    /// Lowest seq still inside the window.
    pub fn floor(&self) -> u64 {
        self.highest.map_or(0, |h| (h + 1).saturating_sub(self.window))
    }

    pub fn accept(&mut self, seq: u64) -> bool {
        if seq < self.floor() || !self.seen.insert(seq) {
            return false;
        }
        if self.highest.is_none_or(|h| seq > h) {
            self.highest = Some(seq);
            let floor = self.floor();
            self.seen = self.seen.split_off(&floor);
        }
        true
    }

    pub fn tracked(&self) -> usize {
        self.seen.len()
    }
}
