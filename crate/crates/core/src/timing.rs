use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Advance,
    GhostFill,
    Comm,
    CflSync,
    Regrid,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Advance,
        Category::GhostFill,
        Category::Comm,
        Category::CflSync,
        Category::Regrid,
    ];
}

/// Accumulated seconds per category.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timers {
    secs: [f64; 5],
}

impl Timers {
    pub fn add(&mut self, c: Category, secs: f64) {
        self.secs[c as usize] += secs;
    }

    pub fn get(&self, c: Category) -> f64 {
        self.secs[c as usize]
    }

    pub fn total(&self) -> f64 {
        self.secs.iter().sum()
    }

    pub fn merge(&mut self, other: &Timers) {
        for (a, b) in self.secs.iter_mut().zip(other.secs) {
            *a += b;
        }
    }

    /// Runs `f`, charging its duration to `c`.
    pub fn time<T>(&mut self, c: Category, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.add(c, start.elapsed().as_secs_f64());
        out
    }

    /// Charges `wall` seconds spread over the categories in proportion to
    /// `shares`; used when simulated ranks run concurrently and only the
    /// phase's wall time is meaningful.
    pub fn add_proportional(&mut self, wall: f64, shares: &Timers) {
        let total = shares.total();
        if total <= 0.0 {
            return;
        }
        for c in Category::ALL {
            self.add(c, wall * shares.get(c) / total);
        }
    }
}
