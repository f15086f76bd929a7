//! Pure algorithms for studying where verification information lives in a
//! search trace: search engine and domains, trace codec, attention masks, a
//! small transformer with manual gradients, inference protocols, diagnostics,
//! verifier-threshold simulations, and exact checks over discrete worlds.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::too_many_arguments, clippy::needless_range_loop)]

extern crate alloc;

pub mod codec;
pub mod diagnostics;
pub mod domains;
pub mod mask;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod search;
pub mod theory;
pub mod threshold;
