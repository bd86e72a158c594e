/// Outcome of observing one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// New best; snapshot the model.
    Improved,
    Continue,
    /// `patience + 1` consecutive epochs without improvement.
    Stop,
}

/// Tracks the best validation loss. Only strict improvements count, so ties
/// keep the earliest epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    seen: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            seen: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        let epoch = self.seen;
        self.seen += 1;
        match self.best {
            Some((_, b)) if !(loss < b) => {
                self.bad_epochs += 1;
                if self.bad_epochs > self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.bad_epochs = 0;
                Verdict::Improved
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }
}
