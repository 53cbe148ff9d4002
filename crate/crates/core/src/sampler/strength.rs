use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::topology::DeviceId;

/// How a device derives its leader strength each round.
#[derive(Debug, Clone, PartialEq)]
pub enum StrengthPolicy {
    /// The device's own reading.
    Value,
    /// Mean reading over the neighbourhood, the device included.
    Mean,
    /// Mean squared deviation of each neighbour's reading from the
    /// neighbourhood mean that neighbour shared.
    Variance,
    /// Fixed per-device table.
    External(Arc<BTreeMap<DeviceId, f64>>),
}

impl StrengthPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            StrengthPolicy::Value => "value",
            StrengthPolicy::Mean => "mean",
            StrengthPolicy::Variance => "variance",
            StrengthPolicy::External(_) => "external",
        }
    }

    pub fn external(table: impl IntoIterator<Item = (DeviceId, f64)>) -> Self {
        StrengthPolicy::External(Arc::new(table.into_iter().collect()))
    }

    pub(crate) fn needs_readings(&self) -> bool {
        matches!(self, StrengthPolicy::Mean | StrengthPolicy::Variance)
    }

    pub(crate) fn needs_means(&self) -> bool {
        matches!(self, StrengthPolicy::Variance)
    }
}

impl fmt::Display for StrengthPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Signal data a device knows about one member of its neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalShare {
    pub reading: f64,
    /// Neighbourhood mean computed by that member, when shared.
    pub mean: Option<f64>,
}

/// Arithmetic mean of the readings in a neighbourhood.
pub fn neighbourhood_mean(inbox: &[(DeviceId, SignalShare)]) -> f64 {
    inbox.iter().map(|(_, s)| s.reading).sum::<f64>() / inbox.len() as f64
}

/// Leader strength of `device` given the signal data of its neighbourhood,
/// which must include the device itself.
pub fn leader_strength(
    policy: &StrengthPolicy,
    device: DeviceId,
    inbox: &[(DeviceId, SignalShare)],
) -> Result<f64> {
    let own = inbox
        .iter()
        .find(|(id, _)| *id == device)
        .ok_or_else(|| Error::InvalidArgument(format!("neighbourhood of {device} lacks the device itself")))?;
    let strength = match policy {
        StrengthPolicy::Value => own.1.reading,
        StrengthPolicy::Mean => neighbourhood_mean(inbox),
        StrengthPolicy::Variance => {
            let mut total = 0.0;
            for (id, share) in inbox {
                let mean = share.mean.ok_or_else(|| {
                    Error::config("strength", format!("variance needs the mean shared by {id}"))
                })?;
                total += (mean - share.reading).powi(2);
            }
            total / inbox.len() as f64
        }
        StrengthPolicy::External(table) => *table
            .get(&device)
            .ok_or_else(|| Error::config("strength", format!("no external strength for device {device}")))?,
    };
    Ok(strength)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(id: u32, reading: f64, mean: Option<f64>) -> (DeviceId, SignalShare) {
        (DeviceId(id), SignalShare { reading, mean })
    }

    #[test]
    fn value_is_own_reading() {
        let inbox = [share(0, 1.0, None), share(3, 4.2, None)];
        assert_eq!(leader_strength(&StrengthPolicy::Value, DeviceId(3), &inbox).unwrap(), 4.2);
    }

    #[test]
    fn mean_over_neighbourhood() {
        let inbox = [share(0, 1.0, None), share(1, 2.0, None), share(2, 3.0, None)];
        assert_eq!(leader_strength(&StrengthPolicy::Mean, DeviceId(1), &inbox).unwrap(), 2.0);
    }

    #[test]
    fn variance_of_flat_neighbourhood_is_zero() {
        let inbox = [share(0, 2.0, Some(2.0)), share(1, 2.0, Some(2.0))];
        assert_eq!(leader_strength(&StrengthPolicy::Variance, DeviceId(0), &inbox).unwrap(), 0.0);
        let inbox = [share(0, 2.0, Some(4.0)), share(1, 1.0, Some(1.0))];
        assert_eq!(leader_strength(&StrengthPolicy::Variance, DeviceId(0), &inbox).unwrap(), 2.0);
    }

    #[test]
    fn external_lookup() {
        let policy = StrengthPolicy::external([(DeviceId(0), 9.0)]);
        let inbox = [share(0, 0.0, None)];
        assert_eq!(leader_strength(&policy, DeviceId(0), &inbox).unwrap(), 9.0);
        let inbox = [share(1, 0.0, None)];
        assert!(matches!(
            leader_strength(&policy, DeviceId(1), &inbox),
            Err(Error::Config { .. })
        ));
    }
}
