/// Multiplies the learning rate by `factor` once the monitored metric has
/// failed to improve for `patience` consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad
    }

    /// Returns the multiplier to apply now: `factor` on a decay, else 1.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.bad = 0;
            return 1.0;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.bad = 0;
            return self.factor;
        }
        1.0
    }
}

/// Stops once `min_epochs` have run and the metric has not improved for
/// `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub min_epochs: usize,
    pub patience: usize,
    best: f64,
    since_best: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(min_epochs: usize, patience: usize) -> Self {
        Self {
            min_epochs,
            patience,
            best: f64::INFINITY,
            since_best: 0,
            seen: 0,
        }
    }

    /// Records one epoch; returns true when training should stop.
    pub fn observe(&mut self, metric: f64) -> bool {
        self.seen += 1;
        if metric < self.best {
            self.best = metric;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.seen >= self.min_epochs && self.since_best >= self.patience
    }
}
