//! Forward and reverse processes for both variable types.

pub mod continuous;
pub mod discrete;

use std::borrow::Cow;

use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Expands a shared timestep to one per row and range-checks every entry.
pub(crate) fn row_timesteps<'t>(
    ts: &'t [usize],
    rows: usize,
    sched: &NoiseSchedule,
) -> Result<Cow<'t, [usize]>> {
    let ts: Cow<'t, [usize]> = match ts.len() {
        1 => Cow::Owned(vec![ts[0]; rows]),
        n if n == rows => Cow::Borrowed(ts),
        n => return Err(Error::shape("timesteps", rows, n)),
    };
    for &t in ts.iter() {
        sched.check(t)?;
    }
    Ok(ts)
}
