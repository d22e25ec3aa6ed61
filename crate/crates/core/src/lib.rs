//! Privacy-preserving statistics over encrypted structured data.
//!
//! A curator encrypts a table once. A cloud storage provider (CSP) holds
//! the ciphertexts and runs searches; a mediating authority (MA) holds the
//! keys, meters each analyst's privacy budget and hands out noisy
//! functional keys. An analyst combines the two to learn a differentially
//! private sum or average and nothing else.

pub mod budget;
pub mod crypto;
pub mod dataset;
pub mod mife;
pub mod noise;
pub mod wire;
