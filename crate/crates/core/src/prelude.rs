// Shared imports for a `no_std` + `alloc` crate. `Float` supplies the libm
// backed math methods on `f64` when `std` is absent.
#![allow(unused_imports)]

pub(crate) use alloc::borrow::ToOwned;
pub(crate) use alloc::format;
pub(crate) use alloc::string::{String, ToString};
pub(crate) use alloc::vec;
pub(crate) use alloc::vec::Vec;
pub(crate) use core::f64::consts::{FRAC_PI_2, PI, TAU};
pub(crate) use num_traits::Float;

pub(crate) use crate::error::{PncError, Result};
pub(crate) use crate::{Matrix, Vector};

/// `x` reduced to `[0, 2π)`.
#[inline]
pub(crate) fn wrap_tau(x: f64) -> f64 {
    let r = x % TAU;
    let r = if r < 0.0 { r + TAU } else { r };
    if r >= TAU {
        0.0
    } else {
        r
    }
}
