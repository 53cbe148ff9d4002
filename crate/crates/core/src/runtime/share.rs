//! The minimising-share combinator.
//!
//! Each round a device takes the values retained from its neighbours, passes
//! each through a monotonic progressive function, and keeps the minimum of
//! those and a local floor. The result is both output and outgoing payload.
//! Programs built only from this fragment and local operations reach a fixed
//! point on every static input.

use std::cmp::Ordering;
use std::marker::PhantomData;

use super::{Context, FieldProgram, StepError};
use crate::error::{Error, Result};
use crate::topology::DeviceId;

/// A value type with a greatest element, usable inside a minimising share.
pub trait ShareValue: Clone + PartialOrd {
    fn top() -> Self;
}

impl ShareValue for f64 {
    fn top() -> Self {
        f64::INFINITY
    }
}

impl ShareValue for u64 {
    fn top() -> Self {
        u64::MAX
    }
}

#[derive(Debug, Clone)]
pub struct MinimisingShare<V> {
    top: V,
}

impl<V: ShareValue> MinimisingShare<V> {
    /// Fails when `initial` or the top element cannot be ordered (e.g. NaN).
    pub fn new(initial: &V) -> Result<Self> {
        let top = V::top();
        let ordered = initial.partial_cmp(initial) == Some(Ordering::Equal)
            && top.partial_cmp(&top) == Some(Ordering::Equal)
            && initial.partial_cmp(&top).is_some();
        if !ordered {
            return Err(Error::config("initial", "share values must be totally ordered"));
        }
        Ok(MinimisingShare { top })
    }

    pub fn top(&self) -> &V {
        &self.top
    }

    /// `min(floor, min(progressed))`, with the fold defaulting to top.
    pub fn minimise(&self, floor: V, progressed: impl IntoIterator<Item = V>) -> V {
        let best = progressed
            .into_iter()
            .fold(self.top.clone(), |acc, v| if v < acc { v } else { acc });
        if best < floor {
            best
        } else {
            floor
        }
    }
}

/// Field program made of a single minimising share.
pub struct ShareProgram<V, F, G> {
    share: MinimisingShare<V>,
    local_floor: F,
    progress: G,
    _value: PhantomData<fn() -> V>,
}

/// Builds a program that each round outputs and shares
/// `min(local_floor(ctx), min over neighbours n of progress(ctx, n, value_n))`.
///
/// The fold ranges over the values retained from neighbours; the device's
/// own previous value only enters through `local_floor`.
pub fn minimising_share<V, F, G>(initial: V, progress: G, local_floor: F) -> Result<ShareProgram<V, F, G>>
where
    V: ShareValue,
    F: Fn(&Context<'_, V>) -> V,
    G: Fn(&Context<'_, V>, DeviceId, &V) -> V,
{
    Ok(ShareProgram {
        share: MinimisingShare::new(&initial)?,
        local_floor,
        progress,
        _value: PhantomData,
    })
}

impl<V, F, G> FieldProgram for ShareProgram<V, F, G>
where
    V: ShareValue,
    F: Fn(&Context<'_, V>) -> V,
    G: Fn(&Context<'_, V>, DeviceId, &V) -> V,
{
    type Payload = V;
    type Output = V;

    fn step(&self, ctx: &Context<'_, V>) -> std::result::Result<(V, V), StepError> {
        let floor = (self.local_floor)(ctx);
        let value = self.share.minimise(
            floor,
            ctx.inbox()
                .neighbours()
                .map(|(sender, v)| (self.progress)(ctx, sender, v)),
        );
        Ok((value.clone(), value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fold_yields_floor() {
        let share = MinimisingShare::new(&0.0).unwrap();
        assert_eq!(share.minimise(3.5, []), 3.5);
    }

    #[test]
    fn top_is_identity() {
        let share = MinimisingShare::new(&0.0).unwrap();
        assert_eq!(share.minimise(3.5, [f64::INFINITY, f64::INFINITY]), 3.5);
        assert_eq!(share.minimise(3.5, [f64::INFINITY, 1.0]), 1.0);
    }

    #[test]
    fn unordered_initial_is_rejected() {
        assert!(matches!(
            MinimisingShare::new(&f64::NAN),
            Err(Error::Config { .. })
        ));
    }
}
