/// Outcome of observing one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs whose validation loss does not
/// beat the best so far by more than `delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    delta: f64,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, delta: f64) -> Self {
        Self {
            patience: patience.max(1),
            delta,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// `epoch` is 1-based.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        match self.best {
            Some(best) if val_loss >= best - self.delta => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.best_epoch = epoch;
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best
    }
}

/// Result of replaying a validation-loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopOutcome {
    /// Last epoch that ran (1-based).
    pub last_epoch: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Feeds a per-epoch trace through [`EarlyStopping`], treating its length
/// as the epoch budget.
pub fn replay_early_stopping(trace: &[f64], patience: usize, delta: f64) -> StopOutcome {
    let mut es = EarlyStopping::new(patience, delta);
    for (i, &loss) in trace.iter().enumerate() {
        if es.observe(i + 1, loss) == StopDecision::Stop {
            return StopOutcome {
                last_epoch: i + 1,
                best_epoch: es.best_epoch(),
                stopped_early: true,
            };
        }
    }
    StopOutcome {
        last_epoch: trace.len(),
        best_epoch: es.best_epoch(),
        stopped_early: false,
    }
}
