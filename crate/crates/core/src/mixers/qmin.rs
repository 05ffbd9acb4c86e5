/// Running lift for proxy utilities: `offset = max(0, -min observed)`.
///
/// Feeding every proxy utility the mixer is about to see (online and target)
/// before the forward pass keeps `Q'_c + offset >= 0` for all of them. The
/// offset never decreases.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QminTracker {
    min_seen: Option<f64>,
}

impl QminTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds in a batch of utilities. Non-finite values are ignored.
    pub fn update(&mut self, values: impl IntoIterator<Item = f64>) -> f64 {
        for v in values.into_iter().filter(|v| v.is_finite()) {
            self.min_seen = Some(self.min_seen.map_or(v, |m| m.min(v)));
        }
        self.offset()
    }

    pub fn offset(&self) -> f64 {
        self.min_seen.map_or(0.0, |m| (-m).max(0.0))
    }

    pub fn min_seen(&self) -> Option<f64> {
        self.min_seen
    }

    /// Restores a tracker from a checkpointed offset.
    pub fn from_offset(offset: f64) -> Self {
        QminTracker {
            min_seen: (offset > 0.0).then_some(-offset),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_lifts_the_minimum() {
        let mut t = QminTracker::new();
        assert_eq!(t.offset(), 0.0);
        assert_eq!(t.update([1.0, 2.0]), 0.0);
        assert_eq!(t.update([-3.0, 0.5]), 3.0);
        assert_eq!(t.update([-1.0, f64::NAN]), 3.0);
        assert_eq!(QminTracker::from_offset(3.0).offset(), 3.0);
    }
}
