/// What the loop does after an evaluated epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Continue,
    Stop,
}

/// Plateau rule: the first evaluated epoch that fails to beat the best dev
/// accuracy drops the learning rate once; training then runs a fixed number
/// of further epochs. `max_epochs` is a hard cap.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    lr_initial: f64,
    lr_reduced: f64,
    extra: usize,
    max_epochs: usize,
    epochs_done: usize,
    best: Option<f64>,
    remaining: Option<usize>,
}

impl PlateauSchedule {
    pub fn new(lr_initial: f64, lr_reduced: f64, extra: usize, max_epochs: usize) -> Self {
        PlateauSchedule {
            lr_initial,
            lr_reduced,
            extra,
            max_epochs,
            epochs_done: 0,
            best: None,
            remaining: None,
        }
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f64 {
        if self.remaining.is_some() {
            self.lr_reduced
        } else {
            self.lr_initial
        }
    }

    pub fn reduced(&self) -> bool {
        self.remaining.is_some()
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records a finished epoch. `accuracy` is `None` when the epoch was not
    /// evaluated. Returns whether the accuracy is a new best, and the next step.
    pub fn end_epoch(&mut self, accuracy: Option<f64>) -> (bool, Step) {
        self.epochs_done += 1;
        if let Some(r) = self.remaining.as_mut() {
            *r = r.saturating_sub(1);
        }
        let mut improved = false;
        if let Some(acc) = accuracy {
            if self.best.is_none_or(|b| acc > b) {
                self.best = Some(acc);
                improved = true;
            } else if self.remaining.is_none() {
                self.remaining = Some(self.extra);
            }
        }
        let stop = self.epochs_done >= self.max_epochs || self.remaining == Some(0);
        (improved, if stop { Step::Stop } else { Step::Continue })
    }
}
